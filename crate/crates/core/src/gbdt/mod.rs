//! Histogram-based, leaf-wise gradient-boosted decision trees for binary
//! classification under logistic loss.
//!
//! Training bins every feature once (quantile thresholds from the training
//! rows; categorical codes map to their own bins), then repeats: compute
//! per-row gradient and Hessian at the current scores, grow one tree by
//! always splitting the leaf with the largest gain, add the tree's Newton leaf
//! values scaled by the learning rate. Validation log loss is tracked after
//! every tree; training stops once it has not improved for
//! `early_stopping_rounds` trees, and the ensemble is cut back to the best
//! iteration.

mod binning;
mod grower;
mod histogram;
mod loss;
mod tree;

use std::path::Path;

use log::{debug, info};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{Column, ColumnRole, Table, TableError};

pub use binning::{BinMapper, FeatureBins};
pub use histogram::{best_split_for_feature, BinStats, BinnedData, Histogram, SplitCandidate, SplitConstraints};
pub use loss::{loss_grad_hess, score_loss, sigmoid};
pub use tree::{BinSet, SplitRule, Tree, TreeNode};

use grower::{GrowConfig, Grower};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GbdtError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("training data contains a single class")]
    SingleClass,
    #[error("training table is empty")]
    EmptyTrain,
    #[error("validation table is empty; early stopping needs it")]
    EmptyValidation,
    #[error("table has no install label column")]
    MissingLabel,
    #[error("feature `{0}` is not in the table")]
    MissingFeature(String),
    #[error("column `{name}` with role {role:?} cannot be used as a feature")]
    NotAFeature { name: String, role: ColumnRole },
    #[error("column `{0}` does not match the type it was trained with")]
    FeatureTypeMismatch(String),
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Table(#[from] TableError),
}

pub type Result<T, E = GbdtError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtParams {
    pub num_leaves: usize,
    /// -1 for unlimited.
    pub max_depth: i32,
    pub learning_rate: f64,
    pub num_iterations: usize,
    pub early_stopping_rounds: usize,
    pub min_data_in_leaf: usize,
    pub lambda_l2: f64,
    pub max_bins: usize,
    pub seed: u64,
    pub feature_fraction: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            num_leaves: 491,
            max_depth: -1,
            learning_rate: 0.05,
            num_iterations: 10_000,
            early_stopping_rounds: 100,
            min_data_in_leaf: 20,
            lambda_l2: 1.0,
            max_bins: 255,
            seed: 0,
            feature_fraction: 1.0,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(GbdtError::InvalidParams(m.to_string()));
        if self.num_leaves < 2 {
            return fail("num_leaves must be at least 2");
        }
        if !(2..=255).contains(&self.max_bins) {
            return fail("max_bins must be in [2, 255]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if self.early_stopping_rounds < 1 {
            return fail("early_stopping_rounds must be at least 1");
        }
        if !(self.feature_fraction > 0.0 && self.feature_fraction <= 1.0) {
            return fail("feature_fraction must be in (0, 1]");
        }
        if !(self.lambda_l2 >= 0.0 && self.lambda_l2.is_finite()) {
            return fail("lambda_l2 must be non-negative");
        }
        if self.max_depth == 0 || self.max_depth < -1 {
            return fail("max_depth must be positive or -1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStopping,
    MaxIterations,
    /// The newest tree could not split its root.
    NoSplit,
}

/// Log loss after each boosting iteration; index 0 is the bare base score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub train_logloss: Vec<f64>,
    pub valid_logloss: Vec<f64>,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub format_version: u32,
    pub params: GbdtParams,
    pub feature_names: Vec<String>,
    pub bin_mapper: BinMapper,
    pub base_score: f64,
    /// Number of retained trees: the iteration with the lowest validation loss.
    pub best_iteration: usize,
    pub trees: Vec<Tree>,
    pub split_counts: Vec<u64>,
    pub history: TrainingHistory,
}

fn install_labels(table: &Table) -> Result<&[u8]> {
    table.install_labels().ok_or(GbdtError::MissingLabel)
}

fn probabilities(scores: &[f64]) -> Vec<f64> {
    scores.iter().map(|&s| sigmoid(s)).collect()
}

/// Mean log loss from raw scores; symmetric under a class swap.
fn logloss_of(labels: &[u8], scores: &[f64]) -> f64 {
    let total: f64 = labels.iter().zip(scores).map(|(&y, &s)| score_loss(s, y)).sum();
    total / labels.len() as f64
}

fn fit_bins(params: &GbdtParams, train: &Table, features: &[String]) -> Result<BinMapper> {
    let mut out = Vec::with_capacity(features.len());
    for name in features {
        let role = train
            .schema()
            .role_of(name)
            .ok_or_else(|| GbdtError::MissingFeature(name.clone()))?;
        if !role.is_feature() {
            return Err(GbdtError::NotAFeature {
                name: name.clone(),
                role,
            });
        }
        let column = train.require(name)?;
        out.push(match column {
            Column::Categorical(c) => FeatureBins::Categorical {
                n_codes: c.dictionary.len() as u32,
                max_bins: params.max_bins as u32,
            },
            other => FeatureBins::fit_numeric(
                &other
                    .numeric_values()
                    .expect("feature roles are numeric or categorical"),
                params.max_bins,
            ),
        });
    }
    Ok(BinMapper { features: out })
}

fn bin_table(mapper: &BinMapper, names: &[String], table: &Table) -> Result<BinnedData> {
    let columns = names
        .iter()
        .enumerate()
        .map(|(f, name)| {
            let column = table
                .column(name)
                .ok_or_else(|| GbdtError::MissingFeature(name.clone()))?;
            mapper
                .bin_column(f, column)
                .ok_or_else(|| GbdtError::FeatureTypeMismatch(name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BinnedData {
        n_rows: table.n_rows(),
        columns,
    })
}

fn active_features(params: &GbdtParams, n_features: usize, iteration: usize) -> Vec<bool> {
    if params.feature_fraction >= 1.0 || n_features == 0 {
        return vec![true; n_features];
    }
    let k = ((params.feature_fraction * n_features as f64).round() as usize).clamp(1, n_features);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(iteration as u64));
    let mut active = vec![false; n_features];
    for i in sample(&mut rng, n_features, k) {
        active[i] = true;
    }
    active
}

fn score_rows(trees: &[Tree], data: &BinnedData, base: f64) -> Vec<f64> {
    (0..data.n_rows)
        .into_par_iter()
        .map(|r| {
            let mut s = base;
            for t in trees {
                s += t.predict(|f| data.columns[f][r]);
            }
            s
        })
        .collect()
}

/// Trains on the install label of `train`, early-stopping on `valid`.
pub fn fit(params: &GbdtParams, train: &Table, valid: &Table, features: &[String]) -> Result<GbdtModel> {
    params.validate()?;
    if train.is_empty() {
        return Err(GbdtError::EmptyTrain);
    }
    if valid.is_empty() {
        return Err(GbdtError::EmptyValidation);
    }
    let y_train = install_labels(train)?;
    let y_valid = install_labels(valid)?;
    let n_pos = y_train.iter().filter(|&&y| y == 1).count();
    let n_neg = y_train.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(GbdtError::SingleClass);
    }

    let mapper = fit_bins(params, train, features)?;
    let train_bins = bin_table(&mapper, features, train)?;
    let valid_bins = bin_table(&mapper, features, valid)?;

    // ln(n_pos) - ln(n_neg) is an exact sign flip when the classes swap.
    let base_score = (n_pos as f64).ln() - (n_neg as f64).ln();
    let mut train_scores = vec![base_score; train.n_rows()];
    let mut valid_scores = vec![base_score; valid.n_rows()];
    let mut history = TrainingHistory {
        train_logloss: vec![logloss_of(y_train, &train_scores)],
        valid_logloss: vec![logloss_of(y_valid, &valid_scores)],
        stop_reason: StopReason::MaxIterations,
    };
    let mut best_iteration = 0;
    let mut best_loss = history.valid_logloss[0];

    let config = GrowConfig {
        num_leaves: params.num_leaves,
        max_depth: params.max_depth,
        learning_rate: params.learning_rate,
        constraints: SplitConstraints {
            lambda_l2: params.lambda_l2,
            min_data_in_leaf: params.min_data_in_leaf as u32,
        },
    };
    let mut trees: Vec<Tree> = Vec::new();
    let mut grad = vec![0.0; train.n_rows()];
    let mut hess = vec![0.0; train.n_rows()];
    let mut rows: Vec<u32> = Vec::with_capacity(train.n_rows());

    for iteration in 1..=params.num_iterations {
        grad.par_iter_mut()
            .zip(hess.par_iter_mut())
            .zip(train_scores.par_iter().zip(y_train.par_iter()))
            .for_each(|((g, h), (&s, &y))| (*g, *h) = loss_grad_hess(s, y));

        let active = active_features(params, features.len(), iteration);
        rows.clear();
        rows.extend(0..train.n_rows() as u32);
        let grown = Grower {
            mapper: &mapper,
            data: &train_bins,
            grad: &grad,
            hess: &hess,
            active: &active,
            config: &config,
        }
        .grow(&mut rows);

        if grown.tree.nodes.len() == 1 {
            debug!("iteration {iteration}: no admissible split, stopping");
            history.stop_reason = StopReason::NoSplit;
            break;
        }
        for (range, value) in &grown.leaves {
            for &r in &rows[range.clone()] {
                train_scores[r as usize] += value;
            }
        }
        let tree = grown.tree;
        valid_scores
            .par_iter_mut()
            .enumerate()
            .for_each(|(r, s)| *s += tree.predict(|f| valid_bins.columns[f][r]));
        trees.push(tree);

        let train_loss = logloss_of(y_train, &train_scores);
        let valid_loss = logloss_of(y_valid, &valid_scores);
        history.train_logloss.push(train_loss);
        history.valid_logloss.push(valid_loss);
        debug!("iteration {iteration}: train {train_loss:.6} valid {valid_loss:.6}");

        if valid_loss < best_loss {
            best_loss = valid_loss;
            best_iteration = iteration;
        } else if iteration - best_iteration >= params.early_stopping_rounds {
            history.stop_reason = StopReason::EarlyStopping;
            break;
        }
    }
    trees.truncate(best_iteration);
    info!(
        "trained {} trees (best iteration {best_iteration}, valid logloss {best_loss:.6})",
        trees.len()
    );

    let mut split_counts = vec![0u64; features.len()];
    for t in &trees {
        for f in t.internal_features() {
            split_counts[f] += 1;
        }
    }
    Ok(GbdtModel {
        format_version: MODEL_FORMAT_VERSION,
        params: params.clone(),
        feature_names: features.to_vec(),
        bin_mapper: mapper,
        base_score,
        best_iteration,
        trees,
        split_counts,
        history,
    })
}

impl GbdtModel {
    /// Raw log-odds scores: base score plus every retained tree, in order.
    pub fn predict_scores(&self, table: &Table) -> Result<Vec<f64>> {
        let data = bin_table(&self.bin_mapper, &self.feature_names, table)?;
        Ok(score_rows(&self.trees, &data, self.base_score))
    }

    pub fn predict(&self, table: &Table) -> Result<Vec<f64>> {
        Ok(probabilities(&self.predict_scores(table)?))
    }

    /// Split counts per feature, most used first; ties keep feature order.
    pub fn feature_importance(&self) -> Vec<(String, u64)> {
        let mut out: Vec<(String, u64)> = self
            .feature_names
            .iter()
            .cloned()
            .zip(self.split_counts.iter().copied())
            .collect();
        out.sort_by_key(|&(_, c)| std::cmp::Reverse(c));
        out
    }

    /// Train log loss of the retained ensemble, as logged during fit.
    pub fn final_train_logloss(&self) -> f64 {
        self.history.train_logloss[self.best_iteration]
    }

    pub fn final_valid_logloss(&self) -> f64 {
        self.history.valid_logloss[self.best_iteration]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: GbdtModel = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(GbdtError::UnsupportedVersion(model.format_version));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|source| GbdtError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| GbdtError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}
