//! `veridian` command line: train, eval, predict, stats.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data or artifact
//! error, 3 training diverged.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::data_ingest::{dataset_stats, load_dataset, save_dataset, split_dataset, Dataset, Format};
use crate::encoder_zoo::{build_encoder, load_checkpoint, save_checkpoint, ModelParameters};
use crate::ensemble::{combine, ensemble_probs_batch, fit_weights, member_probs, predict, EnsembleWeights};
use crate::metrics::{classification_report, render_report_table, MetricReport};
use crate::text_pipeline::{build_vocab, encode_text, Tokenizer, Vocabulary};
use crate::training::{argmax_label, batched_logits, train, TrainError, TrainHistory};

pub use config::{parse_pairs, MemberConfig, RunConfig, WeightMode, DEFAULT_MEMBERS};

pub const VOCAB_FILE: &str = "vocab.tsv";
pub const WEIGHTS_FILE: &str = "weights.tsv";
pub const EVAL_FILE: &str = "eval.csv";
pub const ENSEMBLE_ROW: &str = "Ensemble";
const EVAL_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: {message}")]
    Data { stage: &'static str, message: String },
    #[error("artifacts: checkpoint {member} was trained against a different vocabulary")]
    VocabMismatch { member: String },
    #[error("train {member}: loss diverged in epoch {epoch}")]
    Diverged { member: String, epoch: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data { .. } | CliError::VocabMismatch { .. } => 2,
            CliError::Diverged { .. } => 3,
        }
    }

    fn data(stage: &'static str, message: impl std::fmt::Display) -> Self {
        CliError::Data {
            stage,
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "veridian", version, about = "Fake review detection with an encoder ensemble")]
pub struct Cli {
    /// Overrides the seed from the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train all ensemble members and fit the ensemble weights.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score trained members and the ensemble on a labeled dataset.
    Eval {
        #[arg(long)]
        model_dir: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Classify one review.
    Predict {
        #[arg(long)]
        model_dir: PathBuf,
        #[arg(long)]
        text: String,
    },
    /// Per-domain, per-label corpus statistics.
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
}

/// Result of one member's training run.
#[derive(Debug, Clone)]
pub struct MemberOutcome {
    pub name: String,
    pub history: TrainHistory,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub members: Vec<MemberOutcome>,
    pub weights: EnsembleWeights,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    /// One row per member, then the ensemble row.
    pub rows: Vec<(String, MetricReport)>,
}

impl EvalOutcome {
    pub fn table(&self) -> String {
        render_report_table(&self.rows)
    }

    /// `model,accuracy,precision,recall,f1,n` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,accuracy,precision,recall,f1,n\n");
        for (name, r) in &self.rows {
            let _ = writeln!(out, "{name},{}", r.to_csv_line());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: u8,
    pub p_fake: f64,
}

impl std::fmt::Display for Prediction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "label={} p_fake={:.6}", self.label, self.p_fake)
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::data("output", format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::data("artifacts", format!("{}: {e}", path.display())))
}

fn train_error(member: &str, e: TrainError) -> CliError {
    match e {
        TrainError::DivergedLoss { epoch } => CliError::Diverged {
            member: member.to_string(),
            epoch,
        },
        TrainError::BadConfig(m) => CliError::Config(format!("member.{member}: {m}")),
        other => CliError::data("train", format!("{member}: {other}")),
    }
}

fn checkpoint_path(dir: &Path, member: &str) -> PathBuf {
    dir.join(format!("{member}.ckpt"))
}

/// Split, build the vocabulary, train every member, fit weights and write
/// all artifacts to the output directory.
pub fn cmd_train(config_path: &Path, seed_override: Option<u64>) -> Result<TrainOutcome, CliError> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
        for m in &mut cfg.members {
            m.encoder.seed = seed;
            m.training.seed = seed;
        }
    }
    run_training(&cfg)
}

pub fn run_training(cfg: &RunConfig) -> Result<TrainOutcome, CliError> {
    let dataset = load_dataset(&cfg.data, cfg.format).map_err(|e| CliError::data("load", e))?;
    if dataset.is_empty() {
        return Err(CliError::data("load", "dataset is empty"));
    }
    let (n_fit, n_val, n_test) = cfg.split_sizes(dataset.len());
    for (key, n) in [
        ("train_fraction", n_test),
        ("validation_fraction", n_val),
        ("validation_fraction", n_fit),
    ] {
        if n == 0 {
            return Err(CliError::Config(format!(
                "{key}: leaves an empty split for {} records",
                dataset.len()
            )));
        }
    }
    let (train_all, test) =
        split_dataset(&dataset, cfg.train_fraction, cfg.seed).map_err(|e| CliError::data("split", e))?;
    let (fit, val) = split_dataset(&train_all, 1.0 - cfg.validation_fraction, cfg.seed.wrapping_add(1))
        .map_err(|e| CliError::data("split", e))?;
    log::info!(
        "split: {} train, {} validation, {} test",
        fit.len(),
        val.len(),
        test.len()
    );

    let vocab = build_vocab(fit.texts(), cfg.vocab_min_freq, cfg.vocab_max_size);
    let vocab_hash = vocab.content_hash();
    log::info!("vocabulary: {} entries", vocab.len());

    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| CliError::data("output", format!("{}: {e}", cfg.output_dir.display())))?;
    let out = cfg.output_dir.as_path();
    write_file(&out.join(VOCAB_FILE), vocab.to_file_string())?;
    for (part, name) in [(&fit, "train"), (&val, "val"), (&test, "test")] {
        save_dataset(part, &out.join(format!("{name}.csv")), Format::Csv).map_err(|e| CliError::data("output", e))?;
    }

    let results: Vec<Result<(ModelParameters<f32>, TrainHistory), CliError>> = std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .members
            .iter()
            .map(|m| {
                let (fit, val, vocab) = (&fit, &val, &vocab);
                s.spawn(move || train_member(m, fit, val, vocab))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("member training panicked"))
            .collect()
    });

    let mut members = Vec::new();
    for (m, result) in cfg.members.iter().zip(results) {
        let (mut model, history) = result?;
        model.vocab_hash = Some(vocab_hash.clone());
        write_file(&checkpoint_path(out, &m.name), save_checkpoint(&model))?;
        write_file(&out.join(format!("{}.history.csv", m.name)), history.to_csv())?;
        let val_accuracy = history.best().map_or(0.0, |r| r.val_accuracy);
        log::info!(
            "{}: best epoch {} val accuracy {:.4}",
            m.name,
            history.best_epoch,
            val_accuracy
        );
        members.push(MemberOutcome {
            name: m.name.clone(),
            history,
            val_accuracy,
        });
    }

    let ids: Vec<String> = members.iter().map(|m| m.name.clone()).collect();
    let weights = match cfg.weight_mode {
        WeightMode::AccuracyProportional => {
            let accs: Vec<f64> = members.iter().map(|m| m.val_accuracy).collect();
            fit_weights(ids, &accs).map_err(|e| CliError::data("weights", e))?
        }
        WeightMode::Uniform => EnsembleWeights::uniform(ids).map_err(|e| CliError::data("weights", e))?,
        WeightMode::File => {
            let path = cfg.weights_file.as_deref().expect("validated");
            let text =
                String::from_utf8(read_file(path)?).map_err(|_| CliError::Config("weights_file: not UTF-8".into()))?;
            let w =
                EnsembleWeights::from_file_string(&text).map_err(|e| CliError::Config(format!("weights_file: {e}")))?;
            if w.member_ids != ids {
                return Err(CliError::Config(format!(
                    "weights_file: members {:?} do not match {:?}",
                    w.member_ids, ids
                )));
            }
            w
        }
    };
    write_file(&out.join(WEIGHTS_FILE), weights.to_file_string())?;

    Ok(TrainOutcome {
        members,
        weights,
        output_dir: cfg.output_dir.clone(),
    })
}

fn train_member(
    m: &MemberConfig,
    fit: &Dataset,
    val: &Dataset,
    vocab: &Vocabulary,
) -> Result<(ModelParameters<f32>, TrainHistory), CliError> {
    let mut encoder = m.encoder.clone();
    encoder.vocab_size = vocab.len();
    let model = build_encoder::<f32>(&encoder).map_err(|e| CliError::Config(format!("member.{}: {e}", m.name)))?;
    log::info!("{}: training {} parameters", m.name, model.param_count());
    train(&model, fit, val, vocab, &m.training).map_err(|e| train_error(&m.name, e))
}

/// Vocabulary, weights and member checkpoints from a training output
/// directory, checked for mutual consistency.
pub struct Artifacts {
    pub vocab: Vocabulary,
    pub weights: EnsembleWeights,
    pub members: Vec<ModelParameters<f32>>,
}

pub fn load_artifacts(dir: &Path) -> Result<Artifacts, CliError> {
    let vocab_text = String::from_utf8(read_file(&dir.join(VOCAB_FILE))?)
        .map_err(|_| CliError::data("artifacts", "vocabulary is not UTF-8"))?;
    let vocab = Vocabulary::from_file_string(&vocab_text).map_err(|e| CliError::data("artifacts", e))?;
    let weights_text = String::from_utf8(read_file(&dir.join(WEIGHTS_FILE))?)
        .map_err(|_| CliError::data("artifacts", "weights file is not UTF-8"))?;
    let weights = EnsembleWeights::from_file_string(&weights_text).map_err(|e| CliError::data("artifacts", e))?;
    let hash = vocab.content_hash();
    let mut members = Vec::new();
    for id in &weights.member_ids {
        let path = checkpoint_path(dir, id);
        let model = load_checkpoint(&read_file(&path)?)
            .map_err(|e| CliError::data("artifacts", format!("{}: {e}", path.display())))?;
        if model.vocab_hash.as_deref() != Some(hash.as_str()) || model.config.vocab_size < vocab.len() {
            return Err(CliError::VocabMismatch { member: id.clone() });
        }
        members.push(model);
    }
    Ok(Artifacts {
        vocab,
        weights,
        members,
    })
}

pub fn cmd_eval(model_dir: &Path, data: &Path) -> Result<EvalOutcome, CliError> {
    let art = load_artifacts(model_dir)?;
    let dataset = load_dataset(data, Format::from_path(data)).map_err(|e| CliError::data("load", e))?;
    if dataset.is_empty() {
        return Err(CliError::data("load", "EmptyDataset: no records to evaluate"));
    }
    let labels = dataset.labels();
    let mut rows = Vec::new();
    let mut all_logits = Vec::new();
    for (id, model) in art.weights.member_ids.iter().zip(&art.members) {
        let seqs = dataset
            .texts()
            .map(|t| encode_text(t, &art.vocab, model.config.max_length))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::data("eval", e))?;
        let logits = batched_logits(model, &seqs, EVAL_BATCH).map_err(|e| CliError::data("eval", e))?;
        let preds: Vec<u8> = logits.rows().map(|r| argmax_label(r) as u8).collect();
        let report = classification_report(&preds, &labels).map_err(|e| CliError::data("eval", e))?;
        rows.push((id.clone(), report));
        all_logits.push(logits);
    }
    let probs = ensemble_probs_batch(&all_logits, &art.weights).map_err(|e| CliError::data("eval", e))?;
    let preds: Vec<u8> = probs.iter().map(predict).collect();
    let report = classification_report(&preds, &labels).map_err(|e| CliError::data("eval", e))?;
    rows.push((ENSEMBLE_ROW.to_string(), report));
    let outcome = EvalOutcome { rows };
    write_file(&model_dir.join(EVAL_FILE), outcome.to_csv())?;
    Ok(outcome)
}

pub fn cmd_predict(model_dir: &Path, text: &str) -> Result<Prediction, CliError> {
    let art = load_artifacts(model_dir)?;
    let mut dists = Vec::new();
    for model in &art.members {
        let seq = encode_text(text, &art.vocab, model.config.max_length).map_err(|e| CliError::data("predict", e))?;
        let logits = batched_logits(model, &[seq], 1).map_err(|e| CliError::data("predict", e))?;
        dists.extend(member_probs(&logits));
    }
    let combined = combine(&dists, &art.weights).map_err(|e| CliError::data("predict", e))?;
    Ok(Prediction {
        label: predict(&combined),
        p_fake: combined.p_fake(),
    })
}

/// Table of review, unique-word and sentence counts per (domain, label)
/// with a closing total row.
pub fn cmd_stats(data: &Path) -> Result<String, CliError> {
    let dataset = load_dataset(data, Format::from_path(data)).map_err(|e| CliError::data("load", e))?;
    let stats = dataset_stats(&dataset, &Tokenizer);
    let mut out = String::new();
    let row = |out: &mut String, d: &str, l: &str, r: usize, w: &str, s: usize| {
        let _ = writeln!(out, "{d:<10}  {l:<7}  {r:>14}  {w:>12}  {s:>15}");
    };
    let _ = writeln!(
        out,
        "{:<10}  {:<7}  {:>14}  {:>12}  {:>15}",
        "Domain", "Label", "No. of reviews", "Unique words", "No. of sentences"
    );
    for ((domain, label), g) in &stats.groups {
        let label = if *label == 1 { "fake" } else { "genuine" };
        row(
            &mut out,
            domain.as_str(),
            label,
            g.review_count,
            &g.unique_word_count.to_string(),
            g.sentence_count,
        );
    }
    let unique = unique_words(&dataset);
    row(
        &mut out,
        "Total",
        "",
        stats.total_reviews(),
        &unique.to_string(),
        stats.total_sentences(),
    );
    Ok(out)
}

fn unique_words(ds: &Dataset) -> usize {
    let mut words = std::collections::HashSet::new();
    for t in ds.texts() {
        words.extend(Tokenizer.words(t));
    }
    words.len()
}

fn init_logging() {
    let level = match std::env::var("VERIDIAN_LOG").as_deref() {
        Ok("quiet") => log::LevelFilter::Off,
        Ok("debug") => log::LevelFilter::Debug,
        Ok("info") => log::LevelFilter::Info,
        _ => log::LevelFilter::Warn,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Runs one command, printing results to stdout and a one-line diagnostic
/// to stderr on failure. Returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    init_logging();
    let result = match cli.command {
        Command::Train { config } => cmd_train(&config, cli.seed).map(|t| {
            let mut s = String::new();
            for m in &t.members {
                let _ = writeln!(
                    s,
                    "{}: best epoch {} of {}, validation accuracy {:.2}%",
                    m.name,
                    m.history.best_epoch,
                    m.history.epochs.len(),
                    m.val_accuracy * 100.0
                );
            }
            s.push_str(&t.weights.to_file_string());
            s
        }),
        Command::Eval { model_dir, data } => cmd_eval(&model_dir, &data).map(|e| e.table()),
        Command::Predict { model_dir, text } => cmd_predict(&model_dir, &text).map(|p| format!("{p}\n")),
        Command::Stats { data } => cmd_stats(&data),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            code
        }
    }
}
