//! Log loss, ROC AUC and normalized cross entropy.
//!
//! Labels are stored as 0/1. NCE is usually written with labels in {-1, 1};
//! the factors (1 + y)/2 and (1 - y)/2 are exactly `label` and `1 - label`,
//! so the formulas below use the 0/1 form directly. All logarithms are natural.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probabilities are clamped into `[EPS, 1 - EPS]` before any logarithm.
pub const EPS: f64 = 1e-15;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("evaluation batch is empty")]
    Empty,
    #[error("{labels} labels but {predictions} predictions")]
    LengthMismatch { labels: usize, predictions: usize },
    #[error("label at index {0} is not 0 or 1")]
    BadLabel(usize),
    #[error("prediction at index {0} is NaN")]
    NanPrediction(usize),
    #[error("AUC is undefined when only one class is present")]
    SingleClassAuc,
    #[error("NCE is undefined for a single-class batch: the background entropy is zero")]
    DegenerateBackground,
}

/// Labels with clamped predictions.
#[derive(Debug, Clone)]
pub struct EvalBatch {
    labels: Vec<u8>,
    predictions: Vec<f64>,
}

impl EvalBatch {
    pub fn new(labels: &[u8], predictions: &[f64]) -> Result<Self, MetricsError> {
        if labels.len() != predictions.len() {
            return Err(MetricsError::LengthMismatch {
                labels: labels.len(),
                predictions: predictions.len(),
            });
        }
        if labels.is_empty() {
            return Err(MetricsError::Empty);
        }
        if let Some(i) = labels.iter().position(|&l| l > 1) {
            return Err(MetricsError::BadLabel(i));
        }
        if let Some(i) = predictions.iter().position(|p| p.is_nan()) {
            return Err(MetricsError::NanPrediction(i));
        }
        Ok(Self {
            labels: labels.to_vec(),
            predictions: predictions.iter().map(|&p| p.clamp(EPS, 1.0 - EPS)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Empirical positive rate.
    pub fn background_rate(&self) -> f64 {
        self.positives() as f64 / self.len() as f64
    }
}

pub fn logloss(batch: &EvalBatch) -> f64 {
    let total: f64 = batch
        .labels
        .iter()
        .zip(&batch.predictions)
        .map(|(&y, &p)| if y == 1 { p.ln() } else { (1.0 - p).ln() })
        .sum();
    -total / batch.len() as f64
}

/// Binary entropy of the rate `p`, in nats.
pub fn binary_entropy(p: f64) -> f64 {
    -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
}

/// Mann-Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half.
pub fn auc(batch: &EvalBatch) -> Result<f64, MetricsError> {
    rank_auc(&batch.labels, &batch.predictions)
}

/// AUC of arbitrary real-valued scores (log-odds, margins), unclamped.
pub fn auc_scores(labels: &[u8], scores: &[f64]) -> Result<f64, MetricsError> {
    if labels.len() != scores.len() {
        return Err(MetricsError::LengthMismatch {
            labels: labels.len(),
            predictions: scores.len(),
        });
    }
    if let Some(i) = labels.iter().position(|&l| l > 1) {
        return Err(MetricsError::BadLabel(i));
    }
    if let Some(i) = scores.iter().position(|p| p.is_nan()) {
        return Err(MetricsError::NanPrediction(i));
    }
    rank_auc(labels, scores)
}

fn rank_auc(labels: &[u8], scores: &[f64]) -> Result<f64, MetricsError> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClassAuc);
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Walk tie groups in ascending score order. Each positive beats every
    // negative in earlier groups and ties with the negatives of its own group.
    let mut wins = 0.0f64;
    let mut negatives_below = 0u64;
    let mut i = 0;
    while i < order.len() {
        let score = scores[order[i]];
        let (mut pos, mut neg) = (0u64, 0u64);
        while i < order.len() && scores[order[i]] == score {
            if labels[order[i]] == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            i += 1;
        }
        wins += (pos * negatives_below) as f64 + 0.5 * (pos * neg) as f64;
        negatives_below += neg;
    }
    Ok(wins / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NceResult {
    pub nce: f64,
    pub mean_logloss: f64,
    pub background_rate: f64,
    pub background_entropy: f64,
}

/// Log loss divided by the entropy of the empirical positive rate.
pub fn nce(batch: &EvalBatch) -> Result<NceResult, MetricsError> {
    let p = batch.background_rate();
    if p == 0.0 || p == 1.0 {
        return Err(MetricsError::DegenerateBackground);
    }
    let mean_logloss = logloss(batch);
    let background_entropy = binary_entropy(p);
    Ok(NceResult {
        nce: mean_logloss / background_entropy,
        mean_logloss,
        background_rate: p,
        background_entropy,
    })
}

/// The three headline numbers for one labeled prediction set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub logloss: f64,
    pub auc: f64,
    pub nce: f64,
    pub background_rate: f64,
}

pub fn summarize(labels: &[u8], predictions: &[f64]) -> Result<EvalSummary, MetricsError> {
    let batch = EvalBatch::new(labels, predictions)?;
    let n = nce(&batch)?;
    Ok(EvalSummary {
        logloss: n.mean_logloss,
        auc: auc(&batch)?,
        nce: n.nce,
        background_rate: n.background_rate,
    })
}
