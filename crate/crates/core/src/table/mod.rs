//! Column-major tabular storage.
//!
//! A [`Table`] is an immutable set of equally long, typed columns described by
//! a [`Schema`]. Columns are reference counted so that derived tables (row
//! subsets aside) share storage with the table they came from.

mod ingest;
mod persist;
mod split;

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ingest::{ingest_csv, ingest_csv_files, read_csv};
pub use persist::{load_binary, save_binary, FORMAT_VERSION, MAGIC};
pub use split::{split, SplitPlan, SplitTables};

/// Token stored at code 0 of every categorical dictionary.
pub const MISSING_TOKEN: &str = "__MISSING__";
/// Sentinel for a missing value in a binary feature column.
pub const BINARY_MISSING: u8 = u8::MAX;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error at line {line}: {source}")]
    Csv {
        line: u64,
        #[source]
        source: csv::Error,
    },
    #[error("line {line}: expected {expected} fields, found {found}")]
    FieldCount { line: u64, expected: usize, found: usize },
    #[error("line {line}: column `{column}` expects {expected}, got {token:?}")]
    Parse {
        column: String,
        line: u64,
        token: String,
        expected: &'static str,
    },
    #[error("line {line}: label column `{column}` has a missing value")]
    MissingLabel { column: String, line: u64 },
    #[error("header does not match schema: expected {expected:?}, found {found:?}")]
    HeaderMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("column `{column}` has {found} rows, expected {expected}")]
    ColumnLength {
        column: String,
        expected: usize,
        found: usize,
    },
    #[error("column `{column}` holds data that does not fit role {role:?}")]
    RoleMismatch { column: String, role: ColumnRole },
    #[error("no column named `{0}`")]
    UnknownColumn(String),
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("not an RLT1 table file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported table format version {0}")]
    UnsupportedVersion(u32),
    #[error("table file is truncated")]
    Truncated,
    #[error("corrupt table file: {0}")]
    Corrupt(String),
    #[error("validation day {0} selects zero rows")]
    EmptyValidation(u16),
    #[error("invalid split plan: {0}")]
    InvalidPlan(String),
    #[error("tables cannot be concatenated: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = TableError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    RowId,
    Day,
    Categorical,
    Continuous,
    Binary,
    LabelClick,
    LabelInstall,
}

impl ColumnRole {
    /// Roles a model may consume as input features.
    pub fn is_feature(self) -> bool {
        matches!(
            self,
            ColumnRole::Categorical | ColumnRole::Continuous | ColumnRole::Binary
        )
    }

    pub fn is_label(self) -> bool {
        matches!(self, ColumnRole::LabelClick | ColumnRole::LabelInstall)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub role: ColumnRole,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, role: ColumnRole) -> Self {
        Self {
            name: name.into(),
            role,
        }
    }
}

fn default_delimiter() -> char {
    '\t'
}

fn default_header() -> bool {
    true
}

/// Ordered column layout plus the on-disk text format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_header")]
    pub has_header: bool,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        let schema = Self {
            columns,
            delimiter: default_delimiter(),
            has_header: default_header(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn with_delimiter(mut self, delimiter: char) -> Result<Self> {
        self.delimiter = delimiter;
        self.validate()?;
        Ok(self)
    }

    pub fn with_header(mut self, has_header: bool) -> Self {
        self.has_header = has_header;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for col in &self.columns {
            if col.name.is_empty() {
                return Err(TableError::Schema("empty column name".into()));
            }
            if !seen.insert(col.name.as_str()) {
                return Err(TableError::DuplicateColumn(col.name.clone()));
            }
        }
        for role in [
            ColumnRole::RowId,
            ColumnRole::Day,
            ColumnRole::LabelClick,
            ColumnRole::LabelInstall,
        ] {
            if self.columns.iter().filter(|c| c.role == role).count() > 1 {
                return Err(TableError::Schema(format!("at most one {role:?} column is allowed")));
            }
        }
        if !self.delimiter.is_ascii() || self.delimiter == '\n' || self.delimiter == '\r' {
            return Err(TableError::Schema(format!(
                "delimiter {:?} must be a single ASCII character",
                self.delimiter
            )));
        }
        Ok(())
    }

    /// Training needs exactly one day column and one install label.
    pub fn validate_for_training(&self) -> Result<()> {
        self.validate()?;
        if self.column_of_role(ColumnRole::Day).is_none() {
            return Err(TableError::Schema("schema has no day column".into()));
        }
        if self.column_of_role(ColumnRole::LabelInstall).is_none() {
            return Err(TableError::Schema("schema has no install label column".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn role_of(&self, name: &str) -> Option<ColumnRole> {
        self.columns.iter().find(|c| c.name == name).map(|c| c.role)
    }

    pub fn column_of_role(&self, role: ColumnRole) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.role == role)
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| c.role.is_feature())
            .map(|c| c.name.clone())
            .collect()
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let schema: Schema = serde_json::from_str(s)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| TableError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }
}

/// Codes plus the shared code → token dictionary.
#[derive(Debug, Clone)]
pub struct CategoricalColumn {
    pub codes: Vec<u32>,
    pub dictionary: Arc<Vec<String>>,
}

impl CategoricalColumn {
    pub fn token(&self, row: usize) -> &str {
        &self.dictionary[self.codes[row] as usize]
    }
}

#[derive(Debug, Clone)]
pub enum Column {
    RowId(Vec<String>),
    Day(Vec<u16>),
    Categorical(CategoricalColumn),
    /// NaN marks a missing value.
    Continuous(Vec<f64>),
    /// 0/1, or [`BINARY_MISSING`].
    Binary(Vec<u8>),
    /// 0/1, never missing.
    Label(Vec<u8>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::RowId(v) => v.len(),
            Column::Day(v) => v.len(),
            Column::Categorical(c) => c.codes.len(),
            Column::Continuous(v) => v.len(),
            Column::Binary(v) => v.len(),
            Column::Label(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fits_role(&self, role: ColumnRole) -> bool {
        matches!(
            (self, role),
            (Column::RowId(_), ColumnRole::RowId)
                | (Column::Day(_), ColumnRole::Day)
                | (Column::Categorical(_), ColumnRole::Categorical)
                | (Column::Continuous(_), ColumnRole::Continuous)
                | (Column::Binary(_), ColumnRole::Binary)
                | (Column::Label(_), ColumnRole::LabelClick | ColumnRole::LabelInstall)
        )
    }

    pub fn as_continuous(&self) -> Option<&[f64]> {
        match self {
            Column::Continuous(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_categorical(&self) -> Option<&CategoricalColumn> {
        match self {
            Column::Categorical(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_days(&self) -> Option<&[u16]> {
        match self {
            Column::Day(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_labels(&self) -> Option<&[u8]> {
        match self {
            Column::Label(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_row_ids(&self) -> Option<&[String]> {
        match self {
            Column::RowId(v) => Some(v),
            _ => None,
        }
    }

    /// Numeric view of a continuous or binary column, NaN for missing.
    pub fn numeric_values(&self) -> Option<Vec<f64>> {
        match self {
            Column::Continuous(v) => Some(v.clone()),
            Column::Binary(v) => Some(
                v.iter()
                    .map(|&b| if b == BINARY_MISSING { f64::NAN } else { b as f64 })
                    .collect(),
            ),
            _ => None,
        }
    }

    pub fn take(&self, rows: &[usize]) -> Column {
        fn pick<T: Clone>(v: &[T], rows: &[usize]) -> Vec<T> {
            rows.iter().map(|&r| v[r].clone()).collect()
        }
        match self {
            Column::RowId(v) => Column::RowId(pick(v, rows)),
            Column::Day(v) => Column::Day(pick(v, rows)),
            Column::Categorical(c) => Column::Categorical(CategoricalColumn {
                codes: pick(&c.codes, rows),
                dictionary: Arc::clone(&c.dictionary),
            }),
            Column::Continuous(v) => Column::Continuous(pick(v, rows)),
            Column::Binary(v) => Column::Binary(pick(v, rows)),
            Column::Label(v) => Column::Label(pick(v, rows)),
        }
    }

    fn check_values(&self, name: &str) -> Result<()> {
        match self {
            Column::Categorical(c) => {
                let size = c.dictionary.len() as u32;
                if c.dictionary.first().map(String::as_str) != Some(MISSING_TOKEN) {
                    return Err(TableError::Schema(format!(
                        "dictionary of `{name}` must start with {MISSING_TOKEN}"
                    )));
                }
                if c.codes.iter().any(|&code| code >= size) {
                    return Err(TableError::Schema(format!(
                        "column `{name}` has codes outside its dictionary"
                    )));
                }
            }
            Column::Label(v) if v.iter().any(|&b| b > 1) => {
                return Err(TableError::Schema(format!(
                    "label column `{name}` holds values other than 0/1"
                )));
            }
            Column::Binary(v) if v.iter().any(|&b| b > 1 && b != BINARY_MISSING) => {
                return Err(TableError::Schema(format!(
                    "binary column `{name}` holds values other than 0/1/missing"
                )));
            }
            _ => {}
        }
        Ok(())
    }
}

impl PartialEq for Column {
    /// Bitwise float comparison with every NaN treated as equal.
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Column::RowId(a), Column::RowId(b)) => a == b,
            (Column::Day(a), Column::Day(b)) => a == b,
            (Column::Categorical(a), Column::Categorical(b)) => a.codes == b.codes && a.dictionary == b.dictionary,
            (Column::Continuous(a), Column::Continuous(b)) => {
                a.len() == b.len()
                    && a.iter()
                        .zip(b)
                        .all(|(x, y)| (x.is_nan() && y.is_nan()) || x.to_bits() == y.to_bits())
            }
            (Column::Binary(a), Column::Binary(b)) => a == b,
            (Column::Label(a), Column::Label(b)) => a == b,
            _ => false,
        }
    }
}

/// Immutable column-major dataset.
#[derive(Debug, Clone)]
pub struct Table {
    schema: Schema,
    n_rows: usize,
    columns: Vec<Arc<Column>>,
}

impl PartialEq for Table {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema
            && self.n_rows == other.n_rows
            && self
                .columns
                .iter()
                .zip(&other.columns)
                .all(|(a, b)| a.as_ref() == b.as_ref())
    }
}

impl Table {
    pub fn new(schema: Schema, columns: Vec<Column>) -> Result<Self> {
        Self::from_shared(schema, columns.into_iter().map(Arc::new).collect())
    }

    pub fn from_shared(schema: Schema, columns: Vec<Arc<Column>>) -> Result<Self> {
        schema.validate()?;
        if schema.len() != columns.len() {
            return Err(TableError::Schema(format!(
                "schema has {} columns but {} were supplied",
                schema.len(),
                columns.len()
            )));
        }
        let n_rows = columns.first().map_or(0, |c| c.len());
        for (spec, col) in schema.columns.iter().zip(&columns) {
            if !col.fits_role(spec.role) {
                return Err(TableError::RoleMismatch {
                    column: spec.name.clone(),
                    role: spec.role,
                });
            }
            if col.len() != n_rows {
                return Err(TableError::ColumnLength {
                    column: spec.name.clone(),
                    expected: n_rows,
                    found: col.len(),
                });
            }
            col.check_values(&spec.name)?;
        }
        Ok(Self {
            schema,
            n_rows,
            columns,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    /// `(spec, column)` pairs in schema order.
    pub fn iter(&self) -> impl Iterator<Item = (&ColumnSpec, &Column)> {
        self.schema.columns.iter().zip(self.columns.iter().map(|c| c.as_ref()))
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.schema.index_of(name).map(|i| self.columns[i].as_ref())
    }

    pub fn require(&self, name: &str) -> Result<&Column> {
        self.column(name)
            .ok_or_else(|| TableError::UnknownColumn(name.to_string()))
    }

    pub fn column_at(&self, index: usize) -> &Column {
        &self.columns[index]
    }

    pub fn column_of_role(&self, role: ColumnRole) -> Option<(&ColumnSpec, &Column)> {
        self.iter().find(|(spec, _)| spec.role == role)
    }

    pub fn days(&self) -> Option<&[u16]> {
        self.column_of_role(ColumnRole::Day).and_then(|(_, c)| c.as_days())
    }

    pub fn labels(&self, role: ColumnRole) -> Option<&[u8]> {
        self.column_of_role(role).and_then(|(_, c)| c.as_labels())
    }

    pub fn install_labels(&self) -> Option<&[u8]> {
        self.labels(ColumnRole::LabelInstall)
    }

    pub fn row_ids(&self) -> Option<&[String]> {
        self.column_of_role(ColumnRole::RowId).and_then(|(_, c)| c.as_row_ids())
    }

    pub fn day_set(&self) -> BTreeSet<u16> {
        self.days().map(|d| d.iter().copied().collect()).unwrap_or_default()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.schema.feature_names()
    }

    pub fn take_rows(&self, rows: &[usize]) -> Table {
        Table {
            schema: self.schema.clone(),
            n_rows: rows.len(),
            columns: self.columns.iter().map(|c| Arc::new(c.take(rows))).collect(),
        }
    }

    /// Appends a column at the end of the schema.
    pub fn with_column(&self, name: &str, role: ColumnRole, column: Column) -> Result<Table> {
        if self.schema.index_of(name).is_some() {
            return Err(TableError::DuplicateColumn(name.to_string()));
        }
        let mut schema = self.schema.clone();
        schema.columns.push(ColumnSpec::new(name, role));
        let mut columns = self.columns.clone();
        columns.push(Arc::new(column));
        Table::from_shared(schema, columns)
    }

    /// Replaces a column in place, keeping its position (the role may change).
    pub fn replace_column(&self, name: &str, role: ColumnRole, column: Column) -> Result<Table> {
        let index = self
            .schema
            .index_of(name)
            .ok_or_else(|| TableError::UnknownColumn(name.to_string()))?;
        let mut schema = self.schema.clone();
        schema.columns[index].role = role;
        let mut columns = self.columns.clone();
        columns[index] = Arc::new(column);
        Table::from_shared(schema, columns)
    }

    /// Removes the named columns; unknown names are ignored.
    pub fn drop_columns<S: AsRef<str>>(&self, names: &[S]) -> Table {
        let drop: HashSet<&str> = names.iter().map(|s| s.as_ref()).collect();
        let (specs, columns): (Vec<_>, Vec<_>) = self
            .schema
            .columns
            .iter()
            .zip(&self.columns)
            .filter(|(spec, _)| !drop.contains(spec.name.as_str()))
            .map(|(spec, col)| (spec.clone(), Arc::clone(col)))
            .unzip();
        Table {
            schema: Schema {
                columns: specs,
                ..self.schema.clone()
            },
            n_rows: self.n_rows,
            columns,
        }
    }

    /// Row-wise concatenation of tables with identical schemas and dictionaries.
    pub fn concat(tables: &[Table]) -> Result<Table> {
        let first = tables
            .first()
            .ok_or_else(|| TableError::Incompatible("no tables given".into()))?;
        for t in &tables[1..] {
            if t.schema.columns != first.schema.columns {
                return Err(TableError::Incompatible("schemas differ".into()));
            }
        }
        let mut columns = Vec::with_capacity(first.n_columns());
        for (i, spec) in first.schema.columns.iter().enumerate() {
            let parts: Vec<&Column> = tables.iter().map(|t| t.column_at(i)).collect();
            columns.push(concat_columns(&spec.name, &parts)?);
        }
        Table::new(first.schema.clone(), columns)
    }
}

fn concat_columns(name: &str, parts: &[&Column]) -> Result<Column> {
    macro_rules! join {
        ($variant:ident) => {{
            let mut out = Vec::new();
            for p in parts {
                match p {
                    Column::$variant(v) => out.extend_from_slice(v),
                    _ => unreachable!("schemas were checked equal"),
                }
            }
            Column::$variant(out)
        }};
    }
    Ok(match parts[0] {
        Column::RowId(_) => join!(RowId),
        Column::Day(_) => join!(Day),
        Column::Continuous(_) => join!(Continuous),
        Column::Binary(_) => join!(Binary),
        Column::Label(_) => join!(Label),
        Column::Categorical(first) => {
            let mut codes = Vec::new();
            for p in parts {
                let c = p.as_categorical().expect("schemas were checked equal");
                if c.dictionary != first.dictionary {
                    return Err(TableError::Incompatible(format!("dictionaries of `{name}` differ")));
                }
                codes.extend_from_slice(&c.codes);
            }
            Column::Categorical(CategoricalColumn {
                codes,
                dictionary: Arc::clone(&first.dictionary),
            })
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Table {
        let schema = Schema::new(vec![
            ColumnSpec::new("id", ColumnRole::RowId),
            ColumnSpec::new("f1", ColumnRole::Day),
            ColumnSpec::new("x", ColumnRole::Continuous),
            ColumnSpec::new("y", ColumnRole::LabelInstall),
        ])
        .unwrap();
        Table::new(
            schema,
            vec![
                Column::RowId(vec!["a".into(), "b".into()]),
                Column::Day(vec![1, 2]),
                Column::Continuous(vec![0.5, f64::NAN]),
                Column::Label(vec![0, 1]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn rejects_duplicate_names() {
        let err = Schema::new(vec![
            ColumnSpec::new("a", ColumnRole::Continuous),
            ColumnSpec::new("a", ColumnRole::Categorical),
        ])
        .unwrap_err();
        assert!(matches!(err, TableError::DuplicateColumn(_)));
    }

    #[test]
    fn rejects_ragged_columns() {
        let schema = Schema::new(vec![
            ColumnSpec::new("x", ColumnRole::Continuous),
            ColumnSpec::new("y", ColumnRole::LabelInstall),
        ])
        .unwrap();
        let err = Table::new(schema, vec![Column::Continuous(vec![1.0]), Column::Label(vec![0, 1])]).unwrap_err();
        assert!(matches!(err, TableError::ColumnLength { .. }));
    }

    #[test]
    fn training_schema_needs_day_and_install() {
        let schema = Schema::new(vec![ColumnSpec::new("x", ColumnRole::Continuous)]).unwrap();
        assert!(schema.validate_for_training().is_err());
        assert!(small().schema().validate_for_training().is_ok());
    }

    #[test]
    fn nan_cells_compare_equal() {
        assert_eq!(small(), small().take_rows(&[0, 1]));
    }

    #[test]
    fn drop_and_append_keep_order() {
        let t = small();
        let dropped = t.drop_columns(&["x"]);
        assert_eq!(dropped.schema().names().collect::<Vec<_>>(), ["id", "f1", "y"]);
        let added = dropped
            .with_column("z", ColumnRole::Continuous, Column::Continuous(vec![1.0, 2.0]))
            .unwrap();
        assert_eq!(added.schema().names().last(), Some("z"));
        assert!(added
            .with_column("z", ColumnRole::Continuous, Column::Continuous(vec![1.0, 2.0]))
            .is_err());
    }

    #[test]
    fn concat_appends_rows() {
        let t = small();
        let both = Table::concat(&[t.clone(), t.take_rows(&[1])]).unwrap();
        assert_eq!(both.n_rows(), 3);
        assert_eq!(both.days().unwrap(), &[1, 2, 2]);
    }
}
