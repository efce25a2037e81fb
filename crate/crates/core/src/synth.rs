//! Synthetic day-stamped impression data with planted structure.
//!
//! Every random draw comes from one ChaCha8 stream (`rand_chacha::ChaCha8Rng`
//! seeded with `seed_from_u64(spec.seed)`), consumed in a fixed order, so a
//! spec and seed fully determine the output.
//!
//! Planted structure:
//! * arithmetic features hold `k * delta` with integer `k` uniform on
//!   `[0, max_multiplier]`; the label depends on `k` through a per-multiplier
//!   effect table, so integer-valued handling of the feature pays off;
//! * shifted features get an additive mean shift on the last day only;
//! * latent groups share a standard normal factor, giving pairwise
//!   correlation `loading_a * loading_b`;
//! * categorical features follow a Zipf law whose per-category effect mixes a
//!   popularity term with an idiosyncratic draw.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gbdt::sigmoid;
use crate::table::{CategoricalColumn, Column, ColumnRole, ColumnSpec, Schema, Table, MISSING_TOKEN};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Table(#[from] crate::table::TableError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftedFeature {
    /// Index among the continuous features.
    pub column: usize,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArithmeticFeature {
    pub column: usize,
    pub delta: f64,
    pub max_multiplier: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGroup {
    /// `(continuous column, loading)`; loadings lie in [-1, 1].
    pub members: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum FeatureRef {
    Categorical(usize),
    Continuous(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTerm {
    pub feature: FeatureRef,
    pub weight: f64,
}

/// `logit = intercept + Σ weight · signal(feature)`. The signal is the value
/// itself for plain continuous features, a per-multiplier effect for
/// arithmetic ones and a per-category effect for categorical ones. Clicks use
/// the same signal with their own intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelModel {
    pub intercept: f64,
    pub click_intercept: f64,
    pub terms: Vec<LabelTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_rows_per_day: usize,
    pub first_day: u16,
    /// The last day is the pseudo-test day.
    pub last_day: u16,
    pub cat_cardinalities: Vec<u32>,
    pub zipf_exponent: f64,
    /// Share of a category's effect explained by its popularity, in [0, 1].
    pub popularity_weight: f64,
    pub n_cont: usize,
    pub shifted_features: Vec<ShiftedFeature>,
    pub arithmetic_features: Vec<ArithmeticFeature>,
    pub latent_groups: Vec<LatentGroup>,
    /// Fraction of continuous cells blanked out.
    pub missing_rate: f64,
    pub label_model: LabelModel,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        use FeatureRef::{Categorical as C, Continuous as X};
        let term = |feature, weight| LabelTerm { feature, weight };
        Self {
            n_rows_per_day: 4348,
            first_day: 45,
            last_day: 67,
            cat_cardinalities: vec![2000, 400, 60, 8],
            zipf_exponent: 1.1,
            popularity_weight: 0.6,
            n_cont: 12,
            shifted_features: vec![ShiftedFeature {
                column: 5,
                magnitude: 2.0,
            }],
            arithmetic_features: vec![
                ArithmeticFeature {
                    column: 0,
                    delta: 0.0385,
                    max_multiplier: 100,
                },
                ArithmeticFeature {
                    column: 1,
                    delta: 0.5711,
                    max_multiplier: 40,
                },
            ],
            latent_groups: vec![LatentGroup {
                members: vec![(2, 0.8), (3, 0.8), (4, 0.6)],
            }],
            missing_rate: 0.01,
            label_model: LabelModel {
                intercept: -2.0,
                click_intercept: -0.5,
                terms: vec![
                    term(C(0), 0.8),
                    term(C(1), 0.6),
                    term(C(2), 0.5),
                    term(C(3), 0.3),
                    term(X(0), 0.6),
                    term(X(1), 0.5),
                    term(X(2), 0.4),
                    term(X(3), 0.3),
                    term(X(6), 0.3),
                    term(X(7), -0.4),
                ],
            },
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn n_cat(&self) -> usize {
        self.cat_cardinalities.len()
    }

    pub fn n_days(&self) -> usize {
        (self.last_day - self.first_day) as usize + 1
    }

    pub fn categorical_name(&self, i: usize) -> String {
        format!("f_{}", 2 + i)
    }

    pub fn continuous_name(&self, i: usize) -> String {
        format!("f_{}", 2 + self.n_cat() + i)
    }

    pub const ROW_ID: &'static str = "f_0";
    pub const DAY: &'static str = "f_1";
    pub const CLICK: &'static str = "is_clicked";
    pub const INSTALL: &'static str = "is_installed";

    pub fn schema(&self) -> Schema {
        let mut columns = vec![
            ColumnSpec::new(Self::ROW_ID, ColumnRole::RowId),
            ColumnSpec::new(Self::DAY, ColumnRole::Day),
        ];
        columns.extend((0..self.n_cat()).map(|i| ColumnSpec::new(self.categorical_name(i), ColumnRole::Categorical)));
        columns.extend((0..self.n_cont).map(|i| ColumnSpec::new(self.continuous_name(i), ColumnRole::Continuous)));
        columns.push(ColumnSpec::new(Self::CLICK, ColumnRole::LabelClick));
        columns.push(ColumnSpec::new(Self::INSTALL, ColumnRole::LabelInstall));
        Schema::new(columns).expect("generated names are unique")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(SynthError::InvalidSpec(m));
        if self.first_day > self.last_day {
            return fail("days are empty".into());
        }
        if let Some(c) = self.cat_cardinalities.iter().find(|&&c| c < 2) {
            return fail(format!("cardinality {c} is below 2"));
        }
        if !(0.0..=1.0).contains(&self.popularity_weight) {
            return fail("popularity_weight must lie in [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return fail("missing_rate must lie in [0, 1)".into());
        }
        let check_cont = |c: usize, what: &str| {
            if c >= self.n_cont {
                Err(SynthError::InvalidSpec(format!(
                    "{what} references continuous column {c}, but there are {}",
                    self.n_cont
                )))
            } else {
                Ok(())
            }
        };
        let mut used = vec![false; self.n_cont];
        for s in &self.shifted_features {
            check_cont(s.column, "shifted feature")?;
        }
        for a in &self.arithmetic_features {
            check_cont(a.column, "arithmetic feature")?;
            if !(a.delta > 0.0 && a.delta.is_finite()) {
                return fail(format!("delta {} must be positive", a.delta));
            }
            if self.shifted_features.iter().any(|s| s.column == a.column) {
                return fail(format!("column {} is both shifted and arithmetic", a.column));
            }
            if std::mem::replace(&mut used[a.column], true) {
                return fail(format!("column {} is planted twice", a.column));
            }
        }
        for g in &self.latent_groups {
            for &(c, loading) in &g.members {
                check_cont(c, "latent group")?;
                if !(-1.0..=1.0).contains(&loading) {
                    return fail(format!("loading {loading} outside [-1, 1]"));
                }
                if std::mem::replace(&mut used[c], true) {
                    return fail(format!("column {c} is planted twice"));
                }
            }
        }
        for t in &self.label_model.terms {
            match t.feature {
                FeatureRef::Continuous(c) => check_cont(c, "label term")?,
                FeatureRef::Categorical(c) if c >= self.n_cat() => {
                    return fail(format!("label term references categorical column {c}"));
                }
                FeatureRef::Categorical(_) => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedDelta {
    pub column: usize,
    pub name: String,
    pub delta: f64,
    /// Multiplier `k` of every row, including rows whose cell was blanked.
    pub multipliers: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SynthSpec,
    pub install_probabilities: Vec<f64>,
    pub click_probabilities: Vec<f64>,
    pub deltas: Vec<PlantedDelta>,
    /// `(feature name, magnitude)` of every shifted feature.
    pub shifted: Vec<(String, f64)>,
    /// Effect of each category code (index = code, code 0 unused) per feature.
    pub category_effects: Vec<Vec<f64>>,
}

impl GroundTruth {
    pub fn delta_for(&self, name: &str) -> Option<&PlantedDelta> {
        self.deltas.iter().find(|d| d.name == name)
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws a table and its ground truth.
pub fn generate(spec: &SynthSpec) -> Result<(Table, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_rows_per_day * spec.n_days();
    let days: Vec<u16> = (spec.first_day..=spec.last_day)
        .flat_map(|d| std::iter::repeat_n(d, spec.n_rows_per_day))
        .collect();

    // Category popularity and effects.
    let mut cat_cdfs = Vec::with_capacity(spec.n_cat());
    let mut cat_effects = Vec::with_capacity(spec.n_cat());
    for &card in &spec.cat_cardinalities {
        let weights: Vec<f64> = (0..card).map(|i| (i as f64 + 1.0).powf(-spec.zipf_exponent)).collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let cdf: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        let log_pop: Vec<f64> = weights.iter().map(|w| (w / total).ln()).collect();
        // Standardized under the draw distribution, so a typical row sees a
        // centered effect.
        let mean: f64 = weights.iter().zip(&log_pop).map(|(w, v)| w / total * v).sum();
        let sd = weights
            .iter()
            .zip(&log_pop)
            .map(|(w, v)| w / total * (v - mean).powi(2))
            .sum::<f64>()
            .sqrt();
        let pw = spec.popularity_weight;
        let effects: Vec<f64> = log_pop
            .iter()
            .map(|v| {
                let z = if sd > 0.0 { (v - mean) / sd } else { 0.0 };
                pw * z + (1.0 - pw * pw).sqrt() * standard_normal(&mut rng)
            })
            .collect();
        cat_cdfs.push(cdf);
        cat_effects.push(effects);
    }

    // Per-multiplier effects for arithmetic features.
    let arith_effects: Vec<Vec<f64>> = spec
        .arithmetic_features
        .iter()
        .map(|a| (0..=a.max_multiplier).map(|_| standard_normal(&mut rng)).collect())
        .collect();

    // Categorical draws, as indices into the popularity order.
    let mut cat_draws = vec![vec![0u32; n]; spec.n_cat()];
    // Row-major so the stream order does not depend on the column count.
    #[allow(clippy::needless_range_loop)]
    for row in 0..n {
        for (j, cdf) in cat_cdfs.iter().enumerate() {
            let u: f64 = rng.random();
            cat_draws[j][row] = cdf.partition_point(|&c| c < u).min(cdf.len() - 1) as u32;
        }
    }

    // Continuous features.
    let mut latent_of: HashMap<usize, (usize, f64)> = HashMap::new();
    for (g, group) in spec.latent_groups.iter().enumerate() {
        for &(c, loading) in &group.members {
            latent_of.insert(c, (g, loading));
        }
    }
    let arith_of: HashMap<usize, usize> = spec
        .arithmetic_features
        .iter()
        .enumerate()
        .map(|(i, a)| (a.column, i))
        .collect();
    let mut cont = vec![vec![0.0f64; n]; spec.n_cont];
    let mut multipliers = vec![vec![0u32; n]; spec.arithmetic_features.len()];
    let mut factors = vec![0.0f64; spec.latent_groups.len()];
    for row in 0..n {
        for f in factors.iter_mut() {
            *f = standard_normal(&mut rng);
        }
        for (c, column) in cont.iter_mut().enumerate() {
            column[row] = if let Some(&a) = arith_of.get(&c) {
                let spec_a = &spec.arithmetic_features[a];
                let k = rng.random_range(0..=spec_a.max_multiplier);
                multipliers[a][row] = k;
                k as f64 * spec_a.delta
            } else if let Some(&(g, loading)) = latent_of.get(&c) {
                loading * factors[g] + (1.0 - loading * loading).sqrt() * standard_normal(&mut rng)
            } else {
                standard_normal(&mut rng)
            };
        }
    }
    for s in &spec.shifted_features {
        for (row, &d) in days.iter().enumerate() {
            if d == spec.last_day {
                cont[s.column][row] += s.magnitude;
            }
        }
    }

    // Labels from the clean signal.
    let mut install_p = Vec::with_capacity(n);
    let mut click_p = Vec::with_capacity(n);
    let mut install = Vec::with_capacity(n);
    let mut click = Vec::with_capacity(n);
    for row in 0..n {
        let signal: f64 = spec
            .label_model
            .terms
            .iter()
            .map(|t| {
                t.weight
                    * match t.feature {
                        FeatureRef::Categorical(j) => cat_effects[j][cat_draws[j][row] as usize],
                        FeatureRef::Continuous(c) => match arith_of.get(&c) {
                            Some(&a) => arith_effects[a][multipliers[a][row] as usize],
                            None => cont[c][row],
                        },
                    }
            })
            .sum();
        let p_install = sigmoid(spec.label_model.intercept + signal);
        let p_click = sigmoid(spec.label_model.click_intercept + signal);
        install.push((rng.random::<f64>() < p_install) as u8);
        click.push((rng.random::<f64>() < p_click) as u8);
        install_p.push(p_install);
        click_p.push(p_click);
    }

    if spec.missing_rate > 0.0 {
        for column in cont.iter_mut() {
            for v in column.iter_mut() {
                if rng.random::<f64>() < spec.missing_rate {
                    *v = f64::NAN;
                }
            }
        }
    }

    // Dictionaries in first-occurrence order, as ingestion would build them.
    let mut categorical_columns = Vec::with_capacity(spec.n_cat());
    let mut effects_by_code = Vec::with_capacity(spec.n_cat());
    for (j, draws) in cat_draws.iter().enumerate() {
        let mut code_of = vec![u32::MAX; spec.cat_cardinalities[j] as usize];
        let mut dictionary = vec![MISSING_TOKEN.to_string()];
        let mut by_code = vec![0.0];
        let codes = draws
            .iter()
            .map(|&idx| {
                let slot = &mut code_of[idx as usize];
                if *slot == u32::MAX {
                    *slot = dictionary.len() as u32;
                    dictionary.push(format!("v{idx}"));
                    by_code.push(cat_effects[j][idx as usize]);
                }
                *slot
            })
            .collect();
        categorical_columns.push(Column::Categorical(CategoricalColumn {
            codes,
            dictionary: Arc::new(dictionary),
        }));
        effects_by_code.push(by_code);
    }

    let mut columns = vec![
        Column::RowId((0..n).map(|i| i.to_string()).collect()),
        Column::Day(days),
    ];
    columns.extend(categorical_columns);
    columns.extend(cont.into_iter().map(Column::Continuous));
    columns.push(Column::Label(click));
    columns.push(Column::Label(install));
    let table = Table::new(spec.schema(), columns)?;

    let truth = GroundTruth {
        spec: spec.clone(),
        install_probabilities: install_p,
        click_probabilities: click_p,
        deltas: spec
            .arithmetic_features
            .iter()
            .zip(multipliers)
            .map(|(a, multipliers)| PlantedDelta {
                column: a.column,
                name: spec.continuous_name(a.column),
                delta: a.delta,
                multipliers,
            })
            .collect(),
        shifted: spec
            .shifted_features
            .iter()
            .map(|s| (spec.continuous_name(s.column), s.magnitude))
            .collect(),
        category_effects: effects_by_code,
    };
    Ok((table, truth))
}

/// Writes `table` as delimited text following its schema.
pub fn write_csv(table: &Table, path: &Path) -> Result<()> {
    let io_err = |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    let schema = table.schema();
    let delim = schema.delimiter.to_string();
    if schema.has_header {
        writeln!(w, "{}", schema.names().collect::<Vec<_>>().join(&delim)).map_err(io_err)?;
    }
    let mut line = String::new();
    for row in 0..table.n_rows() {
        line.clear();
        for (i, (_, column)) in table.iter().enumerate() {
            if i > 0 {
                line.push_str(&delim);
            }
            match column {
                Column::RowId(v) => line.push_str(&v[row]),
                Column::Day(v) => line.push_str(&v[row].to_string()),
                Column::Categorical(c) => {
                    if c.codes[row] != 0 {
                        line.push_str(c.token(row));
                    }
                }
                Column::Continuous(v) => {
                    if !v[row].is_nan() {
                        line.push_str(&v[row].to_string());
                    }
                }
                Column::Binary(v) => {
                    if v[row] != crate::table::BINARY_MISSING {
                        line.push_str(&v[row].to_string());
                    }
                }
                Column::Label(v) => line.push_str(&v[row].to_string()),
            }
        }
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Paths written by [`write_dataset`].
pub struct DatasetFiles {
    pub train: std::path::PathBuf,
    pub test: std::path::PathBuf,
    pub truth: std::path::PathBuf,
    pub schema: std::path::PathBuf,
}

/// Writes `train.csv` (all but the last day), `test.csv` (the last day),
/// `truth.json` and `schema.json` into `dir`.
pub fn write_dataset(table: &Table, truth: &GroundTruth, dir: &Path) -> Result<DatasetFiles> {
    std::fs::create_dir_all(dir).map_err(|source| SynthError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let last = truth.spec.last_day;
    let days = table.days().expect("generated tables have days");
    let (test_rows, train_rows): (Vec<usize>, Vec<usize>) = (0..table.n_rows()).partition(|&r| days[r] == last);
    let files = DatasetFiles {
        train: dir.join("train.csv"),
        test: dir.join("test.csv"),
        truth: dir.join("truth.json"),
        schema: dir.join("schema.json"),
    };
    write_csv(&table.take_rows(&train_rows), &files.train)?;
    write_csv(&table.take_rows(&test_rows), &files.test)?;
    let write = |path: &Path, text: String| {
        std::fs::write(path, text).map_err(|source| SynthError::Io {
            path: path.to_path_buf(),
            source,
        })
    };
    write(&files.truth, serde_json::to_string(truth)?)?;
    write(&files.schema, table.schema().to_json_pretty())?;
    Ok(files)
}
