//! Day-ordered categorical encoders.
//!
//! Both encoders describe a row on day `d` using only rows from earlier days:
//! * frequency encoding counts a category's occurrences within a window
//!   ending on day `d - 1`;
//! * target encoding blends the category's historical positive rate with the
//!   global rate, `(S + a * P_d) / (N + a)`, where `S` and `N` are the
//!   category's positives and rows before `d` and `P_d` is the positive rate
//!   of all rows before `d` (0.5 when there are none).
//!
//! Days after the last fitted day are encoded as `last + 1`, so data beyond
//! the fitted range sees all fitted history.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{CategoricalColumn, Column, ColumnRole, Table, TableError};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("feature `{0}` is not categorical")]
    NotCategorical(String),
    #[error("table has no day column")]
    NoDay,
    #[error("table has no {0} label column")]
    MissingTarget(&'static str),
    #[error("smoothing must be positive and finite, got {0}")]
    BadSmoothing(f64),
    #[error(transparent)]
    Table(#[from] TableError),
}

pub type Result<T, E = EncoderError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreqWindow {
    /// Day `d - 1`.
    PrevDay,
    /// Days `d - 7 ..= d - 1`.
    PrevWeek,
    /// Every day before `d`.
    AllHistory,
}

impl FreqWindow {
    pub const ALL: [FreqWindow; 3] = [FreqWindow::PrevDay, FreqWindow::PrevWeek, FreqWindow::AllHistory];

    pub fn name(self) -> &'static str {
        match self {
            FreqWindow::PrevDay => "prev_day",
            FreqWindow::PrevWeek => "prev_week",
            FreqWindow::AllHistory => "all_history",
        }
    }

    /// First day of the window for target day `d`; the window ends at `d - 1`.
    fn start(self, d: u16) -> u16 {
        match self {
            FreqWindow::PrevDay => d.saturating_sub(1),
            FreqWindow::PrevWeek => d.saturating_sub(7),
            FreqWindow::AllHistory => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Click,
    Install,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Click => "click",
            Target::Install => "install",
        }
    }

    pub fn role(self) -> ColumnRole {
        match self {
            Target::Click => ColumnRole::LabelClick,
            Target::Install => ColumnRole::LabelInstall,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderKind {
    Frequency { window: FreqWindow },
    Target { target: Target, smoothing: f64 },
}

/// What to encode; the unit of encoder configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub feature: String,
    #[serde(flatten)]
    pub kind: EncoderKind,
}

impl EncoderSpec {
    pub fn output_name(&self) -> String {
        output_name(&self.feature, &self.kind)
    }
}

fn output_name(feature: &str, kind: &EncoderKind) -> String {
    match kind {
        EncoderKind::Frequency { window } => format!("{feature}__freq_{}", window.name()),
        EncoderKind::Target { target, .. } => format!("{feature}__te_{}", target.name()),
    }
}

/// Rows and positives of one category on one day. Positives stay zero for
/// frequency encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub rows: u64,
    pub positives: u64,
}

impl std::ops::AddAssign for Tally {
    fn add_assign(&mut self, o: Tally) {
        self.rows += o.rows;
        self.positives += o.positives;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayStats {
    pub day: u16,
    pub total: Tally,
    /// `(code, tally)` sorted by code; codes index the state's dictionary.
    pub categories: Vec<(u32, Tally)>,
}

/// Fitted encoder: per-day tallies of one categorical feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderState {
    pub feature: String,
    pub kind: EncoderKind,
    pub dictionary: Vec<String>,
    /// Sorted by day; days without rows are absent.
    pub days: Vec<DayStats>,
}

fn categorical<'a>(table: &'a Table, feature: &str) -> Result<&'a CategoricalColumn> {
    table
        .require(feature)?
        .as_categorical()
        .ok_or_else(|| EncoderError::NotCategorical(feature.to_string()))
}

fn tally_days(column: &CategoricalColumn, days: &[u16], labels: Option<&[u8]>) -> Vec<DayStats> {
    let mut by_day: BTreeMap<u16, HashMap<u32, Tally>> = BTreeMap::new();
    for (row, (&code, &day)) in column.codes.iter().zip(days).enumerate() {
        let positive = labels.is_some_and(|y| y[row] == 1) as u64;
        *by_day.entry(day).or_default().entry(code).or_default() += Tally {
            rows: 1,
            positives: positive,
        };
    }
    by_day
        .into_iter()
        .map(|(day, map)| {
            let mut categories: Vec<(u32, Tally)> = map.into_iter().collect();
            categories.sort_unstable_by_key(|(c, _)| *c);
            let mut total = Tally::default();
            for (_, t) in &categories {
                total += *t;
            }
            DayStats { day, total, categories }
        })
        .collect()
}

pub fn fit_frequency(table: &Table, feature: &str, window: FreqWindow) -> Result<EncoderState> {
    let column = categorical(table, feature)?;
    let days = table.days().ok_or(EncoderError::NoDay)?;
    Ok(EncoderState {
        feature: feature.to_string(),
        kind: EncoderKind::Frequency { window },
        dictionary: column.dictionary.as_ref().clone(),
        days: tally_days(column, days, None),
    })
}

pub fn fit_target(table: &Table, feature: &str, target: Target, smoothing: f64) -> Result<EncoderState> {
    if !(smoothing > 0.0 && smoothing.is_finite()) {
        return Err(EncoderError::BadSmoothing(smoothing));
    }
    let column = categorical(table, feature)?;
    let days = table.days().ok_or(EncoderError::NoDay)?;
    let labels = table
        .labels(target.role())
        .ok_or(EncoderError::MissingTarget(target.name()))?;
    Ok(EncoderState {
        feature: feature.to_string(),
        kind: EncoderKind::Target { target, smoothing },
        dictionary: column.dictionary.as_ref().clone(),
        days: tally_days(column, days, Some(labels)),
    })
}

pub fn fit(table: &Table, spec: &EncoderSpec) -> Result<EncoderState> {
    match spec.kind {
        EncoderKind::Frequency { window } => fit_frequency(table, &spec.feature, window),
        EncoderKind::Target { target, smoothing } => fit_target(table, &spec.feature, target, smoothing),
    }
}

impl EncoderState {
    pub fn output_name(&self) -> String {
        output_name(&self.feature, &self.kind)
    }

    pub fn last_day(&self) -> Option<u16> {
        self.days.last().map(|d| d.day)
    }

    /// Day whose history encodes rows on `day`.
    fn effective_day(&self, day: u16) -> u16 {
        match self.last_day() {
            Some(last) => day.min(last.saturating_add(1)),
            None => day,
        }
    }

    /// Summed tallies per code over fitted days in `[start, end)`.
    fn window(&self, start: u16, end: u16) -> (Tally, HashMap<u32, Tally>) {
        let mut total = Tally::default();
        let mut map: HashMap<u32, Tally> = HashMap::new();
        for d in self.days.iter().filter(|d| d.day >= start && d.day < end) {
            total += d.total;
            for &(c, t) in &d.categories {
                *map.entry(c).or_default() += t;
            }
        }
        (total, map)
    }

    /// Encoded value of each fitted code (plus one slot for unseen tokens at
    /// the end) for rows on `day`.
    fn values_for_day(&self, day: u16) -> Vec<f64> {
        let e = self.effective_day(day);
        let unseen = self.dictionary.len();
        let mut out = vec![0.0; unseen + 1];
        match self.kind {
            EncoderKind::Frequency { window } => {
                let (_, map) = self.window(window.start(e), e);
                for (c, t) in map {
                    out[c as usize] = t.rows as f64;
                }
            }
            EncoderKind::Target { smoothing, .. } => {
                let (total, map) = self.window(0, e);
                let prior = if total.rows == 0 {
                    0.5
                } else {
                    total.positives as f64 / total.rows as f64
                };
                let a = smoothing;
                out.fill(if total.rows == 0 { 0.5 } else { (a * prior) / a });
                for (c, t) in map {
                    out[c as usize] = (t.positives as f64 + a * prior) / (t.rows as f64 + a);
                }
            }
        }
        out
    }

    /// Encodes every row of `table` from its category and day.
    pub fn transform(&self, table: &Table) -> Result<Vec<f64>> {
        let column = categorical(table, &self.feature)?;
        let days = table.days().ok_or(EncoderError::NoDay)?;
        let unseen = self.dictionary.len() as u32;
        let remap: Option<Vec<u32>> = if column.dictionary.as_slice() == self.dictionary.as_slice() {
            None
        } else {
            let index: HashMap<&str, u32> = self
                .dictionary
                .iter()
                .enumerate()
                .map(|(i, t)| (t.as_str(), i as u32))
                .collect();
            Some(
                column
                    .dictionary
                    .iter()
                    .map(|t| index.get(t.as_str()).copied().unwrap_or(unseen))
                    .collect(),
            )
        };
        let mut effective: Vec<u16> = days.iter().map(|&d| self.effective_day(d)).collect();
        effective.sort_unstable();
        effective.dedup();
        let tables: HashMap<u16, Vec<f64>> = effective.par_iter().map(|&d| (d, self.values_for_day(d))).collect();
        Ok(column
            .codes
            .iter()
            .zip(days)
            .map(|(&code, &day)| {
                let code = remap.as_ref().map_or(code, |r| r[code as usize]);
                tables[&self.effective_day(day)][code as usize]
            })
            .collect())
    }
}

/// Appends one continuous column per state, named by
/// [`EncoderState::output_name`]. With `drop_originals` the encoded
/// categorical features are removed afterwards.
pub fn encode_table(table: &Table, states: &[EncoderState], drop_originals: bool) -> Result<Table> {
    let columns: Vec<Vec<f64>> = states.par_iter().map(|s| s.transform(table)).collect::<Result<_>>()?;
    let mut out = table.clone();
    for (state, values) in states.iter().zip(columns) {
        out = out.with_column(&state.output_name(), ColumnRole::Continuous, Column::Continuous(values))?;
    }
    if drop_originals {
        let mut names: Vec<&str> = states.iter().map(|s| s.feature.as_str()).collect();
        names.dedup();
        out = out.drop_columns(&names);
    }
    Ok(out)
}

/// Categorical columns of a table, shared for callers building encoder specs.
pub fn categorical_features(table: &Table) -> Vec<String> {
    table
        .iter()
        .filter(|(spec, _)| spec.role == ColumnRole::Categorical)
        .map(|(spec, _)| spec.name.clone())
        .collect()
}

/// Builds a categorical column from tokens, used by tests and tools.
pub fn categorical_from_tokens<S: AsRef<str>>(tokens: &[S]) -> Column {
    let mut dictionary = vec![crate::table::MISSING_TOKEN.to_string()];
    let mut index: HashMap<String, u32> = HashMap::new();
    let codes = tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            if t.is_empty() {
                return 0;
            }
            *index.entry(t.to_string()).or_insert_with(|| {
                dictionary.push(t.to_string());
                dictionary.len() as u32 - 1
            })
        })
        .collect();
    Column::Categorical(CategoricalColumn {
        codes,
        dictionary: Arc::new(dictionary),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{ColumnSpec, Schema};

    fn table(rows: &[(u16, &str, u8)]) -> Table {
        let schema = Schema::new(vec![
            ColumnSpec::new("day", ColumnRole::Day),
            ColumnSpec::new("c", ColumnRole::Categorical),
            ColumnSpec::new("click", ColumnRole::LabelClick),
            ColumnSpec::new("y", ColumnRole::LabelInstall),
        ])
        .unwrap();
        let tokens: Vec<&str> = rows.iter().map(|r| r.1).collect();
        Table::new(
            schema,
            vec![
                Column::Day(rows.iter().map(|r| r.0).collect()),
                categorical_from_tokens(&tokens),
                Column::Label(rows.iter().map(|r| 1 - r.2).collect()),
                Column::Label(rows.iter().map(|r| r.2).collect()),
            ],
        )
        .unwrap()
    }

    #[test]
    fn prev_day_counts() {
        let t = table(&[(1, "A", 0), (1, "A", 0), (2, "A", 0)]);
        let s = fit_frequency(&t, "c", FreqWindow::PrevDay).unwrap();
        assert_eq!(s.transform(&t).unwrap(), [0.0, 0.0, 2.0]);
    }

    #[test]
    fn all_history_counts_past_the_fitted_range() {
        let t = table(&[(1, "A", 0), (1, "A", 0), (2, "A", 0)]);
        let s = fit_frequency(&t, "c", FreqWindow::AllHistory).unwrap();
        let probe = table(&[(3, "A", 0), (3, "B", 0), (9, "A", 0)]);
        assert_eq!(s.transform(&probe).unwrap(), [3.0, 0.0, 3.0]);
    }

    #[test]
    fn prev_week_is_trailing_seven_days() {
        let rows: Vec<(u16, &str, u8)> = (1..=10).map(|d| (d, "A", 0)).collect();
        let t = table(&rows);
        let s = fit_frequency(&t, "c", FreqWindow::PrevWeek).unwrap();
        let enc = s.transform(&t).unwrap();
        assert_eq!(enc, [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 7.0, 7.0]);
    }

    #[test]
    fn target_encoding_examples() {
        // Day 1: A,A,A (2 positives) and B (0); P_2 = 2/4 = 0.5.
        let t = table(&[
            (1, "A", 1),
            (1, "A", 1),
            (1, "A", 0),
            (1, "B", 0),
            (2, "A", 0),
            (2, "C", 1),
        ]);
        let s = fit_target(&t, "c", Target::Install, 1.0).unwrap();
        let enc = s.transform(&t).unwrap();
        assert_eq!(&enc[..4], &[0.5; 4]);
        assert_eq!(enc[4], (2.0 + 0.5) / (3.0 + 1.0));
        assert_eq!(enc[5], 0.5);
        let click = fit_target(&t, "c", Target::Click, 1.0).unwrap();
        assert_eq!(click.transform(&t).unwrap()[4], (1.0 + 0.5) / 4.0);
    }

    #[test]
    fn target_prior_fallback_for_new_category() {
        // 3 rows before day 5 with positive rate 1/3; unseen category gets P_d.
        let t = table(&[(1, "A", 1), (2, "A", 0), (3, "B", 0), (5, "Z", 1)]);
        let s = fit_target(&t, "c", Target::Install, 1.0).unwrap();
        let enc = s.transform(&t).unwrap();
        assert!((enc[3] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn errors_and_empty_input() {
        let t = table(&[(1, "A", 0)]);
        assert!(matches!(
            fit_frequency(&t, "y", FreqWindow::PrevDay),
            Err(EncoderError::NotCategorical(_))
        ));
        assert!(matches!(
            fit_target(&t, "c", Target::Install, 0.0),
            Err(EncoderError::BadSmoothing(_))
        ));
        let no_click = t.drop_columns(&["click"]);
        assert!(matches!(
            fit_target(&no_click, "c", Target::Click, 1.0),
            Err(EncoderError::MissingTarget("click"))
        ));
        let s = fit_frequency(&t, "c", FreqWindow::PrevDay).unwrap();
        assert!(s.transform(&t.take_rows(&[])).unwrap().is_empty());
    }

    #[test]
    fn encode_table_appends_named_columns() {
        let t = table(&[(1, "A", 1), (2, "A", 0)]);
        let states = vec![
            fit_frequency(&t, "c", FreqWindow::PrevWeek).unwrap(),
            fit_target(&t, "c", Target::Install, 1.0).unwrap(),
        ];
        let out = encode_table(&t, &states, false).unwrap();
        assert_eq!(
            out.column("c__freq_prev_week").unwrap().as_continuous().unwrap(),
            &[0.0, 1.0]
        );
        assert!(out.column("c__te_install").is_some());
        let dropped = encode_table(&t, &states, true).unwrap();
        assert!(dropped.column("c").is_none());
    }

    #[test]
    fn state_round_trips_through_json() {
        let t = table(&[(1, "A", 1), (2, "B", 0)]);
        let s = fit_target(&t, "c", Target::Install, 2.5).unwrap();
        let back: EncoderState = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
