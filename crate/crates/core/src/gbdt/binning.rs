//! Maps raw feature values to histogram bins.
//!
//! Bin 0 always holds missing values. Numeric features get up to
//! `max_bins - 1` ascending thresholds; bin `b >= 1` holds values in
//! `(t[b-2], t[b-1]]`. Categorical codes map to themselves; codes outside the
//! training dictionary or beyond `max_bins - 1` share a single overflow bin.

use serde::{Deserialize, Serialize};

use crate::table::{Column, BINARY_MISSING};

/// Rows used to place quantile thresholds.
const BINNING_SAMPLE: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureBins {
    Numeric { thresholds: Vec<f64> },
    Categorical { n_codes: u32, max_bins: u32 },
}

impl FeatureBins {
    pub fn n_bins(&self) -> usize {
        match self {
            FeatureBins::Numeric { thresholds } => thresholds.len() + 2,
            FeatureBins::Categorical { .. } => self.overflow_bin() as usize + 1,
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, FeatureBins::Categorical { .. })
    }

    fn overflow_bin(&self) -> u32 {
        match self {
            FeatureBins::Categorical { n_codes, max_bins } => (*n_codes).min(*max_bins),
            FeatureBins::Numeric { .. } => unreachable!("numeric features have no overflow bin"),
        }
    }

    #[inline]
    pub fn numeric_bin(thresholds: &[f64], value: f64) -> u8 {
        if value.is_nan() {
            0
        } else {
            1 + thresholds.partition_point(|&t| t < value) as u8
        }
    }

    #[inline]
    pub fn categorical_bin(&self, code: u32) -> u8 {
        let overflow = self.overflow_bin();
        if code < overflow {
            code as u8
        } else {
            overflow as u8
        }
    }

    /// Upper edge of a numeric bin, used to report split thresholds.
    pub fn upper_edge(&self, bin: u8) -> f64 {
        match self {
            FeatureBins::Numeric { thresholds } => thresholds.get(bin as usize - 1).copied().unwrap_or(f64::INFINITY),
            FeatureBins::Categorical { .. } => f64::NAN,
        }
    }

    pub fn fit_numeric(values: &[f64], max_bins: usize) -> Self {
        let stride = values.len().div_ceil(BINNING_SAMPLE).max(1);
        let mut sample: Vec<f64> = values.iter().step_by(stride).copied().filter(|v| !v.is_nan()).collect();
        sample.sort_by(f64::total_cmp);

        let mut distinct: Vec<(f64, usize)> = Vec::new();
        for v in sample.iter().copied() {
            match distinct.last_mut() {
                Some((last, count)) if *last == v => *count += 1,
                _ => distinct.push((v, 1)),
            }
        }
        let mut thresholds = Vec::new();
        if distinct.len() <= max_bins {
            for w in distinct.windows(2) {
                thresholds.push(between(w[0].0, w[1].0));
            }
        } else {
            let per_bin = sample.len() as f64 / max_bins as f64;
            let mut cumulative = 0usize;
            for i in 0..distinct.len() - 1 {
                cumulative += distinct[i].1;
                if thresholds.len() + 1 >= max_bins {
                    break;
                }
                if cumulative as f64 >= per_bin * (thresholds.len() + 1) as f64 {
                    thresholds.push(between(distinct[i].0, distinct[i + 1].0));
                }
            }
        }
        FeatureBins::Numeric { thresholds }
    }
}

/// A cut with `lo <= cut < hi`.
fn between(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid < hi && mid.is_finite() {
        mid
    } else {
        lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinMapper {
    pub features: Vec<FeatureBins>,
}

impl BinMapper {
    pub fn n_bins(&self, feature: usize) -> usize {
        self.features[feature].n_bins()
    }

    /// Bins one column. The column kind must match how the feature was fitted.
    pub fn bin_column(&self, feature: usize, column: &Column) -> Option<Vec<u8>> {
        let bins = &self.features[feature];
        match (bins, column) {
            (FeatureBins::Numeric { thresholds }, Column::Continuous(v)) => {
                Some(v.iter().map(|&x| FeatureBins::numeric_bin(thresholds, x)).collect())
            }
            (FeatureBins::Numeric { thresholds }, Column::Binary(v)) => Some(
                v.iter()
                    .map(|&b| {
                        let x = if b == BINARY_MISSING { f64::NAN } else { b as f64 };
                        FeatureBins::numeric_bin(thresholds, x)
                    })
                    .collect(),
            ),
            (FeatureBins::Categorical { .. }, Column::Categorical(c)) => {
                Some(c.codes.iter().map(|&code| bins.categorical_bin(code)).collect())
            }
            _ => None,
        }
    }
}
