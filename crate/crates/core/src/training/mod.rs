//! Mini-batch training with AdamW, cross-entropy and zero-delta early
//! stopping on validation loss.

mod adamw;
mod early_stopping;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use adamw::{adamw_step, OptimizerState};
pub use early_stopping::{replay_early_stopping, EarlyStopping, StopDecision, StopOutcome};

use crate::data_ingest::Dataset;
use crate::encoder_zoo::{forward, forward_graph, EncoderError, Logits, ModelParameters};
use crate::tensor_core::{ops, Graph, Scalar, Tensor, TensorError};
use crate::text_pipeline::{encode_text, TextError, TokenSequence, Vocabulary};

/// Stream offset separating the dropout RNG from the shuffling RNG.
const DROPOUT_STREAM: u64 = 0x5eed_d50f;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("loss diverged (non-finite) in epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("no gradient for parameter {0}")]
    MissingGradient(String),
    #[error("gradient shape mismatch for parameter {0}")]
    ShapeMismatch(String),
    #[error("vocabulary has {vocab} entries but the model embeds {model}")]
    VocabTooLarge { vocab: usize, model: usize },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub early_stop_delta: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 20,
            patience: 3,
            early_stop_delta: 0.0,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::BadConfig(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be at least 1");
        }
        if self.early_stop_delta.is_nan()
            || self.early_stop_delta < 0.0
            || self.weight_decay.is_nan()
            || self.weight_decay < 0.0
        {
            return bad("early_stop_delta and weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad("eps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    /// `epoch,train_loss,val_loss,val_accuracy` rows, 6 decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_accuracy\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6}",
                e.epoch, e.train_loss, e.val_loss, e.val_accuracy
            );
        }
        out
    }
}

/// A review encoded for the model together with its label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub sequence: TokenSequence,
    pub label: usize,
}

pub fn encode_dataset(ds: &Dataset, vocab: &Vocabulary, max_length: usize) -> Result<Vec<Example>, TrainError> {
    ds.records
        .iter()
        .map(|r| {
            Ok(Example {
                sequence: encode_text(&r.text, vocab, max_length)?,
                label: usize::from(r.label),
            })
        })
        .collect()
}

/// Predicted class from a row of logits; exact ties go to class 0.
pub fn argmax_label<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// Logits for all sequences, evaluated `batch_size` at a time.
pub fn batched_logits<T: Scalar>(
    model: &ModelParameters<T>,
    sequences: &[TokenSequence],
    batch_size: usize,
) -> Result<Logits<T>, TrainError> {
    let classes = model.config.num_classes;
    let mut data = Vec::with_capacity(sequences.len() * classes);
    for chunk in sequences.chunks(batch_size.max(1)) {
        data.extend_from_slice(forward(model, chunk)?.values.data());
    }
    Ok(Logits {
        values: Tensor::new(vec![sequences.len(), classes], data)?,
    })
}

/// Mean cross-entropy and accuracy over pre-encoded examples.
pub fn evaluate_examples<T: Scalar>(
    model: &ModelParameters<T>,
    examples: &[Example],
    batch_size: usize,
) -> Result<(f64, f64), TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    for chunk in examples.chunks(batch_size.max(1)) {
        let seqs: Vec<TokenSequence> = chunk.iter().map(|e| e.sequence.clone()).collect();
        let labels: Vec<usize> = chunk.iter().map(|e| e.label).collect();
        let logits = forward(model, &seqs)?;
        total_loss += ops::cross_entropy(&logits.values, &labels)?.as_f64() * chunk.len() as f64;
        correct += logits
            .rows()
            .zip(&labels)
            .filter(|(row, &y)| argmax_label(row) == y)
            .count();
    }
    let n = examples.len() as f64;
    Ok((total_loss / n, correct as f64 / n))
}

pub fn evaluate_loss<T: Scalar>(
    model: &ModelParameters<T>,
    dataset: &Dataset,
    vocab: &Vocabulary,
    batch_size: usize,
) -> Result<(f64, f64), TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let examples = encode_dataset(dataset, vocab, model.config.max_length)?;
    evaluate_examples(model, &examples, batch_size)
}

/// Forward, loss, backward and one AdamW update on a single batch.
/// Returns the batch loss.
pub fn train_step<T: Scalar>(
    model: &mut ModelParameters<T>,
    batch: &[&Example],
    state: &mut OptimizerState<T>,
    cfg: &TrainingConfig,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<f64, TrainError> {
    let seqs: Vec<TokenSequence> = batch.iter().map(|e| e.sequence.clone()).collect();
    let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
    let mut g = Graph::new();
    let vars = model.register(&mut g, true);
    let logits = forward_graph(&mut g, &vars, &model.config, &seqs, dropout_rng)?;
    let loss = g.cross_entropy(logits, &labels)?;
    let loss_value = g.value(loss).item().expect("scalar loss").as_f64();
    if !loss_value.is_finite() {
        return Ok(loss_value);
    }
    let grads = g.backward(loss)?.by_name();
    adamw_step(&mut model.params, &grads, state, cfg)?;
    Ok(loss_value)
}

/// Trains on pre-encoded examples and returns the best-epoch weights.
pub fn train_examples<T: Scalar>(
    model: &ModelParameters<T>,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainingConfig,
) -> Result<(ModelParameters<T>, TrainHistory), TrainError> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut current = model.clone();
    let mut best = model.clone();
    let mut state = OptimizerState::new();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DROPOUT_STREAM);
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.early_stop_delta);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_set[i]).collect();
            let loss = train_step(&mut current, &batch, &mut state, cfg, Some(&mut dropout_rng))?;
            if !loss.is_finite() {
                return Err(TrainError::DivergedLoss { epoch });
            }
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let (val_loss, val_accuracy) = evaluate_examples(&current, val_set, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(TrainError::DivergedLoss { epoch });
        }
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} acc {val_accuracy:.4}");
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best = current.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                history.stopped_early = true;
                break;
            }
        }
    }
    history.best_epoch = stopper.best_epoch();
    Ok((best, history))
}

pub fn train<T: Scalar>(
    model: &ModelParameters<T>,
    train_set: &Dataset,
    val_set: &Dataset,
    vocab: &Vocabulary,
    cfg: &TrainingConfig,
) -> Result<(ModelParameters<T>, TrainHistory), TrainError> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if vocab.len() > model.config.vocab_size {
        return Err(TrainError::VocabTooLarge {
            vocab: vocab.len(),
            model: model.config.vocab_size,
        });
    }
    let max_length = model.config.max_length;
    let train_examples_ = encode_dataset(train_set, vocab, max_length)?;
    let val_examples = encode_dataset(val_set, vocab, max_length)?;
    train_examples(model, &train_examples_, &val_examples, cfg)
}
