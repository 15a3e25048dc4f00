//! Flat `key = value` run configuration.
//!
//! ```text
//! data = reviews.csv
//! output_dir = out
//! seed = 7
//! max_epochs = 20
//! member.albert.learning_rate = 0.002
//! ```
//!
//! Member keys (`member.<name>.<key>`) override the global key of the same
//! name for that member only. Relative paths resolve against the config
//! file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data_ingest::Format;
use crate::encoder_zoo::{EncoderConfig, Variant};
use crate::training::TrainingConfig;

use super::CliError;

pub const DEFAULT_MEMBERS: [(&str, Variant); 3] = [
    ("roberta", Variant::Standard),
    ("xlnet", Variant::RelativePosition),
    ("albert", Variant::SharedLayers),
];

const GLOBAL_KEYS: &[&str] = &[
    "data",
    "format",
    "train_fraction",
    "validation_fraction",
    "output_dir",
    "seed",
    "weight_mode",
    "weights_file",
    "members",
    "vocab.min_freq",
    "vocab.max_size",
];

const MEMBER_KEYS: &[&str] = &[
    "variant",
    "num_layers",
    "hidden",
    "heads",
    "ffn_dim",
    "max_length",
    "embed_dim",
    "dropout",
    "learning_rate",
    "batch_size",
    "max_epochs",
    "patience",
    "early_stop_delta",
    "weight_decay",
    "beta1",
    "beta2",
    "eps",
    "seed",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    AccuracyProportional,
    Uniform,
    File,
}

impl FromStr for WeightMode {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "accuracy_proportional" => Ok(WeightMode::AccuracyProportional),
            "uniform" => Ok(WeightMode::Uniform),
            "file" => Ok(WeightMode::File),
            _ => Err(()),
        }
    }
}

/// Everything needed to train one ensemble member. `encoder.vocab_size` is
/// filled in once the vocabulary exists.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberConfig {
    pub name: String,
    pub encoder: EncoderConfig,
    pub training: TrainingConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: PathBuf,
    pub format: Format,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub weight_mode: WeightMode,
    pub weights_file: Option<PathBuf>,
    pub vocab_min_freq: usize,
    pub vocab_max_size: usize,
    pub members: Vec<MemberConfig>,
}

fn config_err(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

/// Splits `key = value` lines; `#` starts a comment line.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut pairs = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let k = k.trim().to_string();
        if pairs.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(config_err(&k, "given twice"));
        }
    }
    Ok(pairs)
}

struct Lookup<'a> {
    pairs: &'a BTreeMap<String, String>,
}

impl Lookup<'_> {
    fn raw(&self, member: Option<&str>, key: &str) -> Option<(String, &str)> {
        if let Some(m) = member {
            let full = format!("member.{m}.{key}");
            if let Some(v) = self.pairs.get(&full) {
                return Some((full, v.as_str()));
            }
        }
        self.pairs.get(key).map(|v| (key.to_string(), v.as_str()))
    }

    fn get<V: FromStr>(&self, member: Option<&str>, key: &str, default: V) -> Result<V, CliError> {
        match self.raw(member, key) {
            None => Ok(default),
            Some((full, v)) => v.parse().map_err(|_| config_err(&full, format!("invalid value {v:?}"))),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let pairs = parse_pairs(text)?;
        let members = resolve_members(&pairs)?;
        for key in pairs.keys() {
            let known = match key.strip_prefix("member.") {
                Some(rest) => rest
                    .split_once('.')
                    .is_some_and(|(name, k)| members.iter().any(|(m, _)| m == name) && MEMBER_KEYS.contains(&k)),
                None => GLOBAL_KEYS.contains(&key.as_str()) || MEMBER_KEYS.contains(&key.as_str()),
            };
            if !known {
                return Err(config_err(key, "unknown key"));
            }
        }
        let look = Lookup { pairs: &pairs };
        let resolve = |p: String| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };

        let data = resolve(
            pairs
                .get("data")
                .cloned()
                .ok_or_else(|| config_err("data", "missing"))?,
        );
        let format = match pairs.get("format") {
            Some(f) => f.parse().map_err(|_| config_err("format", "expected csv or tsv"))?,
            None => Format::from_path(&data),
        };
        let seed: u64 = look.get(None, "seed", 0)?;
        let weight_mode = look.get(None, "weight_mode", WeightMode::AccuracyProportional)?;
        let weights_file = pairs.get("weights_file").cloned().map(resolve);
        if weight_mode == WeightMode::File && weights_file.is_none() {
            return Err(config_err("weights_file", "required when weight_mode = file"));
        }

        let cfg = Self {
            data,
            format,
            train_fraction: look.get(None, "train_fraction", 0.8)?,
            validation_fraction: look.get(None, "validation_fraction", 0.1)?,
            output_dir: resolve(pairs.get("output_dir").cloned().unwrap_or_else(|| "out".into())),
            seed,
            weight_mode,
            weights_file,
            vocab_min_freq: look.get(None, "vocab.min_freq", 1)?,
            vocab_max_size: look.get(None, "vocab.max_size", 5000)?,
            members: members
                .iter()
                .map(|(name, variant)| member_config(&look, name, *variant, seed))
                .collect::<Result<_, _>>()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        for (key, f) in [
            ("train_fraction", self.train_fraction),
            ("validation_fraction", self.validation_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(config_err(key, format!("must lie strictly between 0 and 1, got {f}")));
            }
        }
        if self.vocab_max_size <= crate::text_pipeline::RESERVED.len() {
            return Err(config_err("vocab.max_size", "must exceed the reserved token count"));
        }
        Ok(())
    }

    /// Sizes of the (train, validation, test) parts for `n` records.
    pub fn split_sizes(&self, n: usize) -> (usize, usize, usize) {
        let n_train_all = (self.train_fraction * n as f64 + 1e-9).floor() as usize;
        let n_fit = ((1.0 - self.validation_fraction) * n_train_all as f64 + 1e-9).floor() as usize;
        (n_fit, n_train_all - n_fit, n - n_train_all)
    }
}

fn resolve_members(pairs: &BTreeMap<String, String>) -> Result<Vec<(String, Variant)>, CliError> {
    let names: Vec<String> = match pairs.get("members") {
        None => DEFAULT_MEMBERS.iter().map(|(n, _)| n.to_string()).collect(),
        Some(list) => list
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect(),
    };
    if names.is_empty() {
        return Err(config_err("members", "at least one member is required"));
    }
    let mut out: Vec<(String, Variant)> = Vec::new();
    for name in names {
        if !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(config_err("members", format!("bad member name {name:?}")));
        }
        if out.iter().any(|(n, _)| *n == name) {
            return Err(config_err("members", format!("{name} listed twice")));
        }
        let default = DEFAULT_MEMBERS.iter().find(|(n, _)| *n == name).map(|(_, v)| *v);
        let variant = match pairs.get(&format!("member.{name}.variant")) {
            Some(v) => v
                .parse()
                .map_err(|_| config_err(&format!("member.{name}.variant"), format!("unknown variant {v:?}")))?,
            None => default.ok_or_else(|| config_err(&format!("member.{name}.variant"), "missing"))?,
        };
        out.push((name, variant));
    }
    Ok(out)
}

fn member_config(look: &Lookup, name: &str, variant: Variant, seed: u64) -> Result<MemberConfig, CliError> {
    let m = Some(name);
    let toy = EncoderConfig::toy(variant, 3);
    let defaults = TrainingConfig::default();
    let seed = look.get(m, "seed", seed)?;
    let encoder = EncoderConfig {
        variant,
        num_layers: look.get(m, "num_layers", toy.num_layers)?,
        hidden: look.get(m, "hidden", toy.hidden)?,
        heads: look.get(m, "heads", toy.heads)?,
        ffn_dim: look.get(m, "ffn_dim", toy.ffn_dim)?,
        vocab_size: toy.vocab_size,
        max_length: look.get(m, "max_length", toy.max_length)?,
        embed_dim: look.get(m, "embed_dim", toy.embed_dim)?,
        num_classes: 2,
        seed,
        dropout: look.get(m, "dropout", toy.dropout)?,
    };
    encoder
        .validate()
        .map_err(|e| config_err(&format!("member.{name}"), e))?;
    let training = TrainingConfig {
        learning_rate: look.get(m, "learning_rate", defaults.learning_rate)?,
        batch_size: look.get(m, "batch_size", defaults.batch_size)?,
        max_epochs: look.get(m, "max_epochs", defaults.max_epochs)?,
        patience: look.get(m, "patience", defaults.patience)?,
        early_stop_delta: look.get(m, "early_stop_delta", defaults.early_stop_delta)?,
        weight_decay: look.get(m, "weight_decay", defaults.weight_decay)?,
        beta1: look.get(m, "beta1", defaults.beta1)?,
        beta2: look.get(m, "beta2", defaults.beta2)?,
        eps: look.get(m, "eps", defaults.eps)?,
        seed,
    };
    training
        .validate()
        .map_err(|e| config_err(&format!("member.{name}"), e))?;
    Ok(MemberConfig {
        name: name.to_string(),
        encoder,
        training,
    })
}
