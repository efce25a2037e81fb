//! Arithmetic-progression detection, integer quantization and pairwise
//! feature correlation.
//!
//! A feature whose unique values all sit on `origin + k * delta` for integer
//! `k` is stored more faithfully as `k`. Detection starts from the smallest
//! positive gap `g` between sorted unique values and tries `delta = g / m`
//! for `m = 1, 2, ..` up to `max_subdivision`, keeping the first candidate
//! under which every value is on the lattice within `tol_rel * delta`. The
//! subdivision matters when the smallest observed gap is a multiple of the
//! step, e.g. values at 1, 3 and 5 times the step measured from zero.

use std::sync::Arc;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{CategoricalColumn, Column, ColumnRole, Table, TableError, MISSING_TOKEN};

#[derive(Debug, Error)]
pub enum DenoiseError {
    #[error("feature `{0}` has no detected step")]
    NotDetected(String),
    #[error("feature `{0}` is not numeric")]
    NotNumeric(String),
    #[error("correlation needs at least two features, got {0}")]
    TooFewFeatures(usize),
    #[error("invalid denoise config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Table(#[from] TableError),
}

pub type Result<T, E = DenoiseError> = std::result::Result<T, E>;

/// Point the lattice is measured from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// `v = k * delta`; quantization is `round(v / delta)`.
    #[default]
    Zero,
    /// `v = v_min + k * delta`; quantization is `round((v - v_min) / delta)`.
    Vmin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiseConfig {
    pub tol_rel: f64,
    pub origin: Origin,
    pub max_subdivision: u32,
    /// Emit quantized features as categorical instead of integer-valued
    /// continuous columns.
    pub as_categorical: bool,
    /// Features to examine; all continuous features when absent.
    pub features: Option<Vec<String>>,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            tol_rel: 1e-3,
            origin: Origin::Zero,
            max_subdivision: 16,
            as_categorical: true,
            features: None,
        }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_rel > 0.0 && self.tol_rel < 0.5) {
            return Err(DenoiseError::InvalidConfig("tol_rel must lie in (0, 0.5)".into()));
        }
        if self.max_subdivision == 0 {
            return Err(DenoiseError::InvalidConfig("max_subdivision must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaEstimate {
    pub feature: String,
    /// Detected step; 0 when fewer than two distinct values exist.
    pub delta: f64,
    pub v_min: f64,
    pub origin: Origin,
    pub n_unique: usize,
    /// Largest distance of a unique value from the lattice, at `delta`.
    pub max_abs_residual: f64,
    pub detected: bool,
}

impl DeltaEstimate {
    fn origin_value(&self) -> f64 {
        match self.origin {
            Origin::Zero => 0.0,
            Origin::Vmin => self.v_min,
        }
    }

    /// Lattice index of one finite value.
    pub fn multiplier(&self, v: f64) -> i64 {
        ((v - self.origin_value()) / self.delta).round() as i64
    }
}

/// Candidates whose largest offset exceeds this many steps are rejected:
/// such a fine lattice fits almost anything.
const MAX_STEPS: f64 = 1e9;

fn max_residual(values: &[f64], origin: f64, delta: f64) -> f64 {
    values
        .iter()
        .map(|&v| {
            let x = v - origin;
            (x - (x / delta).round() * delta).abs()
        })
        .fold(0.0, f64::max)
}

/// Looks for a lattice among the finite values of `column`.
pub fn detect_delta(
    feature: &str,
    column: &[f64],
    tol_rel: f64,
    origin: Origin,
    max_subdivision: u32,
) -> DeltaEstimate {
    let mut uniques: Vec<f64> = column.iter().copied().filter(|v| v.is_finite()).collect();
    uniques.sort_by(f64::total_cmp);
    uniques.dedup_by(|a, b| a == b);
    let v_min = uniques.first().copied().unwrap_or(0.0);
    let mut estimate = DeltaEstimate {
        feature: feature.to_string(),
        delta: 0.0,
        v_min,
        origin,
        n_unique: uniques.len(),
        max_abs_residual: 0.0,
        detected: false,
    };
    let Some(gap) = uniques
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&d| d > 0.0)
        .min_by(f64::total_cmp)
    else {
        return estimate;
    };
    let o = estimate.origin_value();
    let span = uniques.iter().map(|v| (v - o).abs()).fold(0.0, f64::max);

    estimate.delta = gap;
    estimate.max_abs_residual = max_residual(&uniques, o, gap);
    if uniques.len() < 3 {
        return estimate;
    }
    for m in 1..=max_subdivision {
        let delta = gap / m as f64;
        if span / delta > MAX_STEPS {
            break;
        }
        let residual = max_residual(&uniques, o, delta);
        if residual > tol_rel * delta {
            continue;
        }
        // Average the per-value step estimates to shed the rounding in `gap`.
        let (sum, count) = uniques.iter().fold((0.0, 0usize), |(s, c), &v| {
            let k = ((v - o) / delta).round();
            if k > 0.0 {
                (s + (v - o) / k, c + 1)
            } else {
                (s, c)
            }
        });
        let refined = if count > 0 { sum / count as f64 } else { delta };
        let refined_residual = max_residual(&uniques, o, refined);
        let (delta, residual) = if refined_residual <= tol_rel * refined {
            (refined, refined_residual)
        } else {
            (delta, residual)
        };
        estimate.delta = delta;
        estimate.max_abs_residual = residual;
        estimate.detected = true;
        return estimate;
    }
    estimate
}

/// Lattice index of every cell; missing cells stay `None`.
pub fn quantize(column: &[f64], estimate: &DeltaEstimate) -> Result<Vec<Option<i64>>> {
    if !estimate.detected {
        return Err(DenoiseError::NotDetected(estimate.feature.clone()));
    }
    Ok(column
        .iter()
        .map(|&v| v.is_finite().then(|| estimate.multiplier(v)))
        .collect())
}

/// Estimates for the configured features (all continuous ones by default),
/// in schema order.
pub fn detect_all(table: &Table, cfg: &DenoiseConfig) -> Result<Vec<DeltaEstimate>> {
    cfg.validate()?;
    let names: Vec<String> = match &cfg.features {
        Some(list) => list.clone(),
        None => table
            .iter()
            .filter(|(spec, _)| spec.role == ColumnRole::Continuous)
            .map(|(spec, _)| spec.name.clone())
            .collect(),
    };
    names
        .par_iter()
        .map(|name| {
            let column = table.require(name)?;
            let values = column
                .as_continuous()
                .ok_or_else(|| DenoiseError::NotNumeric(name.clone()))?;
            Ok(detect_delta(name, values, cfg.tol_rel, cfg.origin, cfg.max_subdivision))
        })
        .collect()
}

/// Replaces every detected feature by its lattice index, as an
/// integer-valued continuous column or as a categorical column whose
/// dictionary lists the indices in ascending order.
pub fn apply(table: &Table, estimates: &[DeltaEstimate], as_categorical: bool) -> Result<Table> {
    let mut out = table.clone();
    for est in estimates.iter().filter(|e| e.detected) {
        let values = table
            .require(&est.feature)?
            .as_continuous()
            .ok_or_else(|| DenoiseError::NotNumeric(est.feature.clone()))?;
        let ks = quantize(values, est)?;
        out = if as_categorical {
            let mut distinct: Vec<i64> = ks.iter().flatten().copied().collect();
            distinct.sort_unstable();
            distinct.dedup();
            let mut dictionary = vec![MISSING_TOKEN.to_string()];
            dictionary.extend(distinct.iter().map(|k| k.to_string()));
            let codes = ks
                .iter()
                .map(|k| match k {
                    Some(k) => distinct.binary_search(k).expect("collected above") as u32 + 1,
                    None => 0,
                })
                .collect();
            let column = Column::Categorical(CategoricalColumn {
                codes,
                dictionary: Arc::new(dictionary),
            });
            out.replace_column(&est.feature, ColumnRole::Categorical, column)?
        } else {
            let column = Column::Continuous(ks.iter().map(|k| k.map_or(f64::NAN, |k| k as f64)).collect());
            out.replace_column(&est.feature, ColumnRole::Continuous, column)?
        };
    }
    Ok(out)
}

/// Groups detected features whose steps agree within 1% (relative to the
/// smallest step in the group), for reporting.
pub fn group_deltas(estimates: &[DeltaEstimate]) -> Vec<Vec<String>> {
    let mut detected: Vec<&DeltaEstimate> = estimates.iter().filter(|e| e.detected).collect();
    detected.sort_by(|a, b| a.delta.total_cmp(&b.delta).then_with(|| a.feature.cmp(&b.feature)));
    let mut groups: Vec<(f64, Vec<String>)> = Vec::new();
    for e in detected {
        match groups.last_mut() {
            Some((base, names)) if (e.delta - *base) / *base <= 0.01 => names.push(e.feature.clone()),
            _ => groups.push((e.delta, vec![e.feature.clone()])),
        }
    }
    groups.into_iter().map(|(_, names)| names).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    /// Row-major, symmetric; NaN where undefined (null in JSON).
    #[serde(with = "nan_as_null")]
    pub values: Vec<Vec<f64>>,
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(values: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<Option<f64>>> = values
            .iter()
            .map(|r| r.iter().map(|v| (!v.is_nan()).then_some(*v)).collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        let rows = Vec::<Vec<Option<f64>>>::deserialize(d)?;
        Ok(rows
            .into_iter()
            .map(|r| r.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
            .collect())
    }
}

impl CorrelationMatrix {
    pub fn to_csv(&self) -> String {
        crate::report::matrix_csv(&self.names, &self.values)
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let pairs: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(&a, &b)| (a, b))
        .collect();
    if pairs.len() < 2 {
        return f64::NAN;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

fn has_variance(values: &[f64]) -> bool {
    let mut finite = values.iter().filter(|v| v.is_finite());
    match finite.next() {
        Some(first) => finite.any(|v| v != first),
        None => false,
    }
}

/// Pairwise-complete Pearson correlation of numeric features.
pub fn correlation_matrix(table: &Table, features: &[String]) -> Result<CorrelationMatrix> {
    if features.len() < 2 {
        return Err(DenoiseError::TooFewFeatures(features.len()));
    }
    let columns: Vec<Vec<f64>> = features
        .iter()
        .map(|name| {
            table
                .require(name)?
                .numeric_values()
                .ok_or_else(|| DenoiseError::NotNumeric(name.clone()))
        })
        .collect::<Result<_>>()?;
    let varies: Vec<bool> = columns.iter().map(|c| has_variance(c)).collect();
    for (name, _) in features.iter().zip(&varies).filter(|(_, v)| !**v) {
        warn!("feature `{name}` has zero variance; its correlations are NaN");
    }
    let k = features.len();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    let upper: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            if varies[i] && varies[j] {
                pearson(&columns[i], &columns[j])
            } else {
                f64::NAN
            }
        })
        .collect();
    let mut values = vec![vec![f64::NAN; k]; k];
    for i in 0..k {
        if varies[i] {
            values[i][i] = 1.0;
        }
    }
    for (&(i, j), &r) in pairs.iter().zip(&upper) {
        values[i][j] = r;
        values[j][i] = r;
    }
    Ok(CorrelationMatrix {
        names: features.to_vec(),
        values,
    })
}
