//! Per-feature adversarial validation.
//!
//! For every feature a one-column classifier learns to tell training rows
//! (label 0) from test rows (label 1). Its AUC on a stratified holdout
//! measures how far the feature's distribution moved; features at or above
//! the threshold are dropped.

use std::collections::HashMap;
use std::sync::Arc;

use log::{info, warn};
use rand::seq::{index::sample, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gbdt::{self, GbdtError, GbdtParams};
use crate::metrics;
use crate::table::{CategoricalColumn, Column, ColumnRole, ColumnSpec, Schema, Table, TableError};

#[derive(Debug, Error)]
pub enum AdvError {
    #[error("invalid adversarial config: {0}")]
    InvalidConfig(String),
    #[error("the {0} side is empty")]
    EmptySide(&'static str),
    #[error("feature columns have different types")]
    TypeMismatch,
    #[error("column type cannot be audited")]
    Unsupported,
    #[error(
        "holdout has a single class ({train} train rows, {test} test rows); use more rows or a larger holdout fraction"
    )]
    SingleClassHoldout { train: usize, test: usize },
    #[error("feature `{0}` is missing from a table")]
    MissingFeature(String),
    #[error(transparent)]
    Gbdt(#[from] GbdtError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
}

pub type Result<T, E = AdvError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvConfig {
    pub auc_threshold: f64,
    pub classifier_params: GbdtParams,
    pub holdout_fraction: f64,
    pub seed: u64,
    pub subsample_per_side: Option<usize>,
}

impl AdvConfig {
    pub fn classifier_profile() -> GbdtParams {
        GbdtParams {
            num_leaves: 31,
            learning_rate: 0.1,
            num_iterations: 100,
            early_stopping_rounds: 20,
            ..GbdtParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(AdvError::InvalidConfig(m.to_string()));
        if !(0.5..=1.0).contains(&self.auc_threshold) {
            return fail("auc_threshold must lie in [0.5, 1]");
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return fail("holdout_fraction must lie in (0, 1)");
        }
        if self.subsample_per_side == Some(0) {
            return fail("subsample_per_side must be positive");
        }
        self.classifier_params.validate()?;
        Ok(())
    }
}

impl Default for AdvConfig {
    fn default() -> Self {
        Self {
            auc_threshold: 0.75,
            classifier_params: Self::classifier_profile(),
            holdout_fraction: 0.2,
            seed: 0,
            subsample_per_side: Some(200_000),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Keep,
    Drop,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAudit {
    pub name: String,
    pub auc: Option<f64>,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvReport {
    pub features: Vec<FeatureAudit>,
    pub n_train_rows: usize,
    pub n_test_rows: usize,
    pub config: AdvConfig,
}

impl AdvReport {
    pub fn dropped(&self) -> Vec<&str> {
        self.features
            .iter()
            .filter(|f| f.verdict == Verdict::Drop)
            .map(|f| f.name.as_str())
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<&FeatureAudit> {
        self.features.iter().find(|f| f.name == name)
    }

    /// `feature,auc,verdict` rows in schema order; skipped features have an
    /// empty AUC.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,auc,verdict\n");
        for f in &self.features {
            let auc = f.auc.map(|a| format!("{a:.6}")).unwrap_or_default();
            let verdict = match f.verdict {
                Verdict::Keep => "keep",
                Verdict::Drop => "drop",
                Verdict::Skipped => "skipped",
            };
            out.push_str(&format!("{},{auc},{verdict}\n", f.name));
        }
        out
    }

    pub fn to_svg(&self) -> String {
        let bars: Vec<(String, f64)> = self
            .features
            .iter()
            .filter_map(|f| f.auc.map(|a| (f.name.clone(), a)))
            .collect();
        crate::report::bar_chart_svg("Adversarial AUC per feature", &bars, Some(self.config.auc_threshold))
    }
}

fn verdict_for(auc: f64, threshold: f64) -> Verdict {
    if auc >= threshold {
        Verdict::Drop
    } else {
        Verdict::Keep
    }
}

/// Holdout AUC of a classifier separating `train` rows from `test` rows of
/// one feature.
pub fn adversarial_auc(train: &Column, test: &Column, cfg: &AdvConfig) -> Result<f64> {
    cfg.validate()?;
    oriented_auc(train, test, cfg, cfg.seed, false)
}

/// Trains with the train side labeled 1 instead, then scores the holdout
/// against test-side membership as [`adversarial_auc`] does. The subsample
/// and holdout depend only on side position and seed and training mirrors
/// exactly, so the result is `1 - adversarial_auc(..)` up to rounding of the
/// final ratio.
pub fn adversarial_auc_swapped(train: &Column, test: &Column, cfg: &AdvConfig) -> Result<f64> {
    cfg.validate()?;
    oriented_auc(train, test, cfg, cfg.seed, true)
}

fn role_of(column: &Column) -> Result<ColumnRole> {
    match column {
        Column::Continuous(_) => Ok(ColumnRole::Continuous),
        Column::Categorical(_) => Ok(ColumnRole::Categorical),
        Column::Binary(_) => Ok(ColumnRole::Binary),
        _ => Err(AdvError::Unsupported),
    }
}

/// Re-expresses `b` in a dictionary that extends `a`'s, when they differ.
fn align(a: &CategoricalColumn, b: &CategoricalColumn) -> (CategoricalColumn, CategoricalColumn) {
    if Arc::ptr_eq(&a.dictionary, &b.dictionary) || a.dictionary == b.dictionary {
        return (a.clone(), b.clone());
    }
    let mut dictionary: Vec<String> = a.dictionary.as_ref().clone();
    let mut index: HashMap<String, u32> = dictionary
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();
    let remap: Vec<u32> = b
        .dictionary
        .iter()
        .map(|t| {
            *index.entry(t.clone()).or_insert_with(|| {
                dictionary.push(t.clone());
                dictionary.len() as u32 - 1
            })
        })
        .collect();
    let dictionary = Arc::new(dictionary);
    (
        CategoricalColumn {
            codes: a.codes.clone(),
            dictionary: Arc::clone(&dictionary),
        },
        CategoricalColumn {
            codes: b.codes.iter().map(|&c| remap[c as usize]).collect(),
            dictionary,
        },
    )
}

fn one_feature_table(role: ColumnRole, column: Column, labels: Vec<u8>) -> Result<Table> {
    let schema = Schema::new(vec![
        ColumnSpec::new("x", role),
        ColumnSpec::new("origin", ColumnRole::LabelInstall),
    ])?;
    Ok(Table::new(schema, vec![column, Column::Label(labels)])?)
}

fn oriented_auc(train: &Column, test: &Column, cfg: &AdvConfig, seed: u64, swap: bool) -> Result<f64> {
    let role = role_of(train)?;
    if role_of(test)? != role {
        return Err(AdvError::TypeMismatch);
    }
    if train.is_empty() {
        return Err(AdvError::EmptySide("train"));
    }
    if test.is_empty() {
        return Err(AdvError::EmptySide("test"));
    }
    let (train, test) = match (train, test) {
        (Column::Categorical(a), Column::Categorical(b)) => {
            let (a, b) = align(a, b);
            (Column::Categorical(a), Column::Categorical(b))
        }
        _ => (train.clone(), test.clone()),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |n: usize| -> Vec<usize> {
        let mut rows = match cfg.subsample_per_side {
            Some(cap) if n > cap => {
                let mut v = sample(&mut rng, n, cap).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        rows.shuffle(&mut rng);
        rows
    };
    let rows_a = pick(train.len());
    let rows_b = pick(test.len());
    let holdout_len = |n: usize| ((n as f64 * cfg.holdout_fraction).round() as usize).min(n);
    let (hold_a, fit_a) = rows_a.split_at(holdout_len(rows_a.len()));
    let (hold_b, fit_b) = rows_b.split_at(holdout_len(rows_b.len()));
    if hold_a.is_empty() || hold_b.is_empty() {
        return Err(AdvError::SingleClassHoldout {
            train: hold_a.len(),
            test: hold_b.len(),
        });
    }

    let (label_a, label_b) = if swap { (1u8, 0u8) } else { (0u8, 1u8) };
    let build = |a: &[usize], b: &[usize]| -> Result<Table> {
        let mut sorted_a = a.to_vec();
        let mut sorted_b = b.to_vec();
        sorted_a.sort_unstable();
        sorted_b.sort_unstable();
        let part_a = one_feature_table(role, train.take(&sorted_a), vec![label_a; a.len()])?;
        let part_b = one_feature_table(role, test.take(&sorted_b), vec![label_b; b.len()])?;
        Ok(Table::concat(&[part_a, part_b])?)
    };
    let fit_table = build(fit_a, fit_b)?;
    let hold_table = build(hold_a, hold_b)?;

    let params = GbdtParams {
        seed,
        ..cfg.classifier_params.clone()
    };
    let model = gbdt::fit(&params, &fit_table, &hold_table, &["x".to_string()])?;
    let scores = model.predict_scores(&hold_table)?;
    let mut labels = hold_table.install_labels().expect("built with a label").to_vec();
    if swap {
        labels.iter_mut().for_each(|y| *y = 1 - *y);
    }
    Ok(metrics::auc_scores(&labels, &scores)?)
}

/// Seed for the feature at schema position `index`.
fn feature_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Audits every feature column of `train` against `test`.
pub fn audit(train: &Table, test: &Table, cfg: &AdvConfig) -> Result<AdvReport> {
    audit_features(train, test, &train.feature_names(), cfg)
}

/// Audits the named features only, reported in the given order.
pub fn audit_features(train: &Table, test: &Table, features: &[String], cfg: &AdvConfig) -> Result<AdvReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(AdvError::EmptySide("train"));
    }
    if test.is_empty() {
        return Err(AdvError::EmptySide("test"));
    }
    for name in features {
        if train.column(name).is_none() {
            return Err(AdvError::MissingFeature(name.clone()));
        }
        if test.column(name).is_none() {
            return Err(AdvError::MissingFeature(name.clone()));
        }
    }
    let entries: Vec<FeatureAudit> = features
        .par_iter()
        .enumerate()
        .map(|(i, name)| {
            let a = train.column(name).expect("checked above");
            let b = test.column(name).expect("checked above");
            match oriented_auc(a, b, cfg, feature_seed(cfg.seed, i), false) {
                Ok(auc) => FeatureAudit {
                    name: name.clone(),
                    auc: Some(auc),
                    verdict: verdict_for(auc, cfg.auc_threshold),
                    reason: None,
                },
                Err(e) => {
                    warn!("adversarial audit of `{name}` skipped: {e}");
                    FeatureAudit {
                        name: name.clone(),
                        auc: None,
                        verdict: Verdict::Skipped,
                        reason: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    let report = AdvReport {
        features: entries,
        n_train_rows: train.n_rows(),
        n_test_rows: test.n_rows(),
        config: cfg.clone(),
    };
    info!("adversarial audit dropped {:?}", report.dropped());
    Ok(report)
}

/// Removes features the report marks Drop; everything else keeps its place.
pub fn filter_features(report: &AdvReport, table: &Table) -> Table {
    table.drop_columns(&report.dropped())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(n: usize, shift: f64, seed: u64) -> Column {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Column::Continuous(
            (0..n)
                .map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng) + shift)
                .collect::<Vec<f64>>(),
        )
    }

    #[test]
    fn identical_distributions_are_near_chance() {
        let cfg = AdvConfig::default();
        let auc = adversarial_auc(&normal(10_000, 0.0, 1), &normal(10_000, 0.0, 2), &cfg).unwrap();
        assert!((0.45..=0.55).contains(&auc), "{auc}");
    }

    #[test]
    fn disjoint_supports_are_separable() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let neg = Column::Continuous((0..2000).map(|_| -rng.random::<f64>() - 0.01).collect());
        let pos = Column::Continuous((0..2000).map(|_| rng.random::<f64>() + 0.01).collect());
        let auc = adversarial_auc(&neg, &pos, &AdvConfig::default()).unwrap();
        assert!(auc >= 0.99, "{auc}");
    }

    #[test]
    fn swapping_sides_mirrors_auc() {
        let cfg = AdvConfig::default();
        let a = normal(3000, 0.0, 4);
        let b = normal(3000, 0.4, 5);
        let auc = adversarial_auc(&a, &b, &cfg).unwrap();
        let swapped = adversarial_auc_swapped(&a, &b, &cfg).unwrap();
        assert!(auc > 0.55);
        assert!((auc + swapped - 1.0).abs() < 1e-9, "{auc} {swapped}");
    }

    #[test]
    fn empty_side_is_an_error() {
        let empty = Column::Continuous(vec![]);
        assert!(matches!(
            adversarial_auc(&empty, &normal(10, 0.0, 1), &AdvConfig::default()),
            Err(AdvError::EmptySide("train"))
        ));
    }

    #[test]
    fn tiny_sides_report_single_class_holdout() {
        let one = Column::Continuous(vec![1.0]);
        let err = adversarial_auc(&one, &normal(50, 0.0, 1), &AdvConfig::default()).unwrap_err();
        assert!(matches!(err, AdvError::SingleClassHoldout { .. }), "{err}");
    }

    #[test]
    fn mismatched_types_are_rejected() {
        let c = Column::Binary(vec![0, 1, 0]);
        assert!(matches!(
            adversarial_auc(&normal(3, 0.0, 1), &c, &AdvConfig::default()),
            Err(AdvError::TypeMismatch)
        ));
    }

    #[test]
    fn categorical_sides_with_different_dictionaries() {
        let dict_a = Arc::new(vec!["__MISSING__".to_string(), "a".into(), "b".into()]);
        let dict_b = Arc::new(vec!["__MISSING__".to_string(), "c".into(), "a".into()]);
        let a = Column::Categorical(CategoricalColumn {
            codes: (0..1000).map(|i| 1 + (i % 2)).collect(),
            dictionary: dict_a,
        });
        // Only token "c" on the test side: perfectly separable.
        let b = Column::Categorical(CategoricalColumn {
            codes: vec![1; 1000],
            dictionary: dict_b,
        });
        let auc = adversarial_auc(&a, &b, &AdvConfig::default()).unwrap();
        assert!(auc >= 0.99, "{auc}");
    }

    #[test]
    fn config_validation() {
        let bad = AdvConfig {
            auc_threshold: 0.4,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AdvConfig {
            holdout_fraction: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
