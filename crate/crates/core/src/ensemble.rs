//! Weighted soft voting: member logits → softmax probabilities → convex
//! combination → argmax.

use std::fmt::Write as _;

use thiserror::Error;

use crate::encoder_zoo::Logits;
use crate::tensor_core::{softmax, Scalar, Tensor};

/// Sum-to-one tolerance of a weight vector.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;
/// Largest sum deviation the weights-file loader will renormalize.
pub const FILE_RENORM_TOL: f64 = 1e-6;
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum EnsembleError {
    #[error("expected {expected} members, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid ensemble weights: {0}")]
    InvalidWeights(String),
    #[error("all member accuracies are zero")]
    AllZeroAccuracies,
    #[error("member batches differ in size")]
    BatchSizeMismatch,
    #[error("weights file line {line}: {reason}")]
    WeightsFormat { line: usize, reason: String },
}

/// Class probabilities, index 0 = genuine, 1 = fake.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityDistribution {
    pub probs: Vec<f64>,
}

impl ProbabilityDistribution {
    pub fn is_valid(&self, tol: f64) -> bool {
        self.probs.iter().all(|&p| (-tol..=1.0 + tol).contains(&p))
            && (self.probs.iter().sum::<f64>() - 1.0).abs() <= tol
    }

    pub fn p_fake(&self) -> f64 {
        self.probs.get(1).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleWeights {
    pub member_ids: Vec<String>,
    pub weights: Vec<f64>,
}

impl EnsembleWeights {
    pub fn new(member_ids: Vec<String>, weights: Vec<f64>) -> Result<Self, EnsembleError> {
        if member_ids.len() != weights.len() {
            return Err(EnsembleError::LengthMismatch {
                expected: member_ids.len(),
                got: weights.len(),
            });
        }
        if weights.is_empty() {
            return Err(EnsembleError::InvalidWeights("no members".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(EnsembleError::InvalidWeights(
                "weights must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(EnsembleError::InvalidWeights(format!("weights sum to {sum}")));
        }
        Ok(Self { member_ids, weights })
    }

    pub fn uniform(member_ids: Vec<String>) -> Result<Self, EnsembleError> {
        let n = member_ids.len();
        Self::new(member_ids, vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `member_id<TAB>weight` per line.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (id, w) in self.member_ids.iter().zip(&self.weights) {
            let _ = writeln!(out, "{id}\t{w}");
        }
        out
    }

    /// Parses the weights file, renormalizing sums within 1e-6 of one.
    pub fn from_file_string(text: &str) -> Result<Self, EnsembleError> {
        let mut ids = Vec::new();
        let mut weights = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let err = |reason: &str| EnsembleError::WeightsFormat {
                line: i + 1,
                reason: reason.to_string(),
            };
            let (id, w) = line
                .split_once('\t')
                .ok_or_else(|| err("expected member_id<TAB>weight"))?;
            let w: f64 = w.trim().parse().map_err(|_| err("weight is not a number"))?;
            if ids.iter().any(|x| x == id) {
                return Err(err("duplicate member id"));
            }
            ids.push(id.to_string());
            weights.push(w);
        }
        let sum: f64 = weights.iter().sum();
        if !sum.is_finite() || (sum - 1.0).abs() > FILE_RENORM_TOL {
            return Err(EnsembleError::InvalidWeights(format!("weights sum to {sum}")));
        }
        let weights = weights.into_iter().map(|w| w / sum).collect();
        Self::new(ids, weights)
    }
}

/// Row-wise softmax of member logits.
pub fn member_probs<T: Scalar>(logits: &Logits<T>) -> Vec<ProbabilityDistribution> {
    let values: Tensor<f64> = logits.values.cast();
    let probs = softmax(&values);
    let c = probs.last_dim().max(1);
    probs
        .data()
        .chunks(c)
        .map(|row| ProbabilityDistribution { probs: row.to_vec() })
        .collect()
}

/// `out[c] = Σᵢ wᵢ · pᵢ[c]`.
pub fn combine(
    member_dists: &[ProbabilityDistribution],
    weights: &EnsembleWeights,
) -> Result<ProbabilityDistribution, EnsembleError> {
    if member_dists.len() != weights.len() {
        return Err(EnsembleError::LengthMismatch {
            expected: weights.len(),
            got: member_dists.len(),
        });
    }
    let classes = member_dists[0].probs.len();
    if member_dists.iter().any(|d| d.probs.len() != classes) {
        return Err(EnsembleError::InvalidWeights("members disagree on class count".into()));
    }
    let mut out = vec![0.0; classes];
    for (dist, &w) in member_dists.iter().zip(&weights.weights) {
        for (o, &p) in out.iter_mut().zip(&dist.probs) {
            *o += w * p;
        }
    }
    Ok(ProbabilityDistribution { probs: out })
}

/// Argmax class; near-exact ties resolve to the lower class (genuine).
pub fn predict(dist: &ProbabilityDistribution) -> u8 {
    let mut best = 0;
    for c in 1..dist.probs.len() {
        if dist.probs[c] - dist.probs[best] > TIE_TOL {
            best = c;
        }
    }
    best as u8
}

/// Weights proportional to each member's validation accuracy.
pub fn fit_weights(member_ids: Vec<String>, accuracies: &[f64]) -> Result<EnsembleWeights, EnsembleError> {
    if member_ids.len() != accuracies.len() {
        return Err(EnsembleError::LengthMismatch {
            expected: member_ids.len(),
            got: accuracies.len(),
        });
    }
    if accuracies.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(EnsembleError::InvalidWeights("accuracies must lie in [0, 1]".into()));
    }
    let total: f64 = accuracies.iter().sum();
    if total <= 0.0 {
        return Err(EnsembleError::AllZeroAccuracies);
    }
    let mut weights: Vec<f64> = accuracies.iter().map(|a| a / total).collect();
    // Push rounding drift into the largest weight so the sum is 1 within 1e-9.
    let drift = 1.0 - weights.iter().sum::<f64>();
    if let Some(max) = weights.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *max += drift;
    }
    EnsembleWeights::new(member_ids, weights)
}

/// Combined distribution per row of the member batches.
pub fn ensemble_probs_batch<T: Scalar>(
    member_logits: &[Logits<T>],
    weights: &EnsembleWeights,
) -> Result<Vec<ProbabilityDistribution>, EnsembleError> {
    if member_logits.len() != weights.len() {
        return Err(EnsembleError::LengthMismatch {
            expected: weights.len(),
            got: member_logits.len(),
        });
    }
    let rows = member_logits[0].batch_size();
    if member_logits.iter().any(|l| l.batch_size() != rows) {
        return Err(EnsembleError::BatchSizeMismatch);
    }
    let per_member: Vec<Vec<ProbabilityDistribution>> = member_logits.iter().map(member_probs).collect();
    (0..rows)
        .map(|r| {
            let row: Vec<ProbabilityDistribution> = per_member.iter().map(|m| m[r].clone()).collect();
            combine(&row, weights)
        })
        .collect()
}

pub fn ensemble_predict_batch<T: Scalar>(
    member_logits: &[Logits<T>],
    weights: &EnsembleWeights,
) -> Result<Vec<u8>, EnsembleError> {
    Ok(ensemble_probs_batch(member_logits, weights)?
        .iter()
        .map(predict)
        .collect())
}
