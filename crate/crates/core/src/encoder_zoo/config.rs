use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::EncoderError;

/// Architecture family of an ensemble member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Learned absolute positions, independent blocks.
    Standard,
    /// No absolute positions; per-head learned bias on the query-key offset.
    RelativePosition,
    /// Factorized token embedding and one block reused at every layer.
    SharedLayers,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Standard, Variant::RelativePosition, Variant::SharedLayers];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::RelativePosition => "relative_position",
            Variant::SharedLayers => "shared_layers",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = EncoderError;

    fn from_str(s: &str) -> Result<Self, EncoderError> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s.trim())
            .ok_or_else(|| EncoderError::BadConfig(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub variant: Variant,
    pub num_layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_length: usize,
    /// Factorized embedding width; only read by [`Variant::SharedLayers`].
    pub embed_dim: usize,
    pub num_classes: usize,
    pub seed: u64,
    pub dropout: f64,
}

impl EncoderConfig {
    /// Small default: 2 layers, hidden 32, 2 heads, FFN 64, length 64.
    pub fn toy(variant: Variant, vocab_size: usize) -> Self {
        Self {
            variant,
            num_layers: 2,
            hidden: 32,
            heads: 2,
            ffn_dim: 64,
            vocab_size,
            max_length: 64,
            embed_dim: 16,
            num_classes: 2,
            seed: 0,
            dropout: 0.0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Largest relative offset with its own bias entry.
    pub fn max_relative_distance(&self) -> usize {
        self.max_length - 1
    }

    /// Width of the token embedding table.
    pub fn token_width(&self) -> usize {
        match self.variant {
            Variant::SharedLayers => self.embed_dim,
            _ => self.hidden,
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: &str| Err(EncoderError::BadConfig(m.to_string()));
        if self.num_layers < 1 {
            return bad("num_layers must be at least 1");
        }
        if self.heads == 0 || self.hidden == 0 || !self.hidden.is_multiple_of(self.heads) {
            return bad("hidden must be a positive multiple of heads");
        }
        if self.ffn_dim == 0 {
            return bad("ffn_dim must be positive");
        }
        if self.max_length < 2 {
            return bad("max_length must be at least 2");
        }
        if self.vocab_size < 3 {
            return bad("vocab_size must cover the reserved tokens");
        }
        if self.variant == Variant::SharedLayers && (self.embed_dim == 0 || self.embed_dim > self.hidden) {
            return bad("embed_dim must lie in 1..=hidden");
        }
        if self.num_classes != 2 {
            return bad("num_classes must be 2");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("variant", self.variant.to_string()),
            ("num_layers", self.num_layers.to_string()),
            ("hidden", self.hidden.to_string()),
            ("heads", self.heads.to_string()),
            ("ffn_dim", self.ffn_dim.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("max_length", self.max_length.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("seed", self.seed.to_string()),
            ("dropout", self.dropout.to_string()),
        ]
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self, EncoderError> {
        fn get<V: FromStr>(pairs: &BTreeMap<String, String>, key: &str) -> Result<V, EncoderError> {
            pairs
                .get(key)
                .ok_or_else(|| EncoderError::BadConfig(format!("missing key {key}")))?
                .parse()
                .map_err(|_| EncoderError::BadConfig(format!("bad value for {key}")))
        }
        let cfg = Self {
            variant: get(pairs, "variant")?,
            num_layers: get(pairs, "num_layers")?,
            hidden: get(pairs, "hidden")?,
            heads: get(pairs, "heads")?,
            ffn_dim: get(pairs, "ffn_dim")?,
            vocab_size: get(pairs, "vocab_size")?,
            max_length: get(pairs, "max_length")?,
            embed_dim: get(pairs, "embed_dim")?,
            num_classes: get(pairs, "num_classes")?,
            seed: get(pairs, "seed")?,
            dropout: get(pairs, "dropout")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
