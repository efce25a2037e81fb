use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use super::{CategoricalColumn, Column, ColumnRole, Result, Schema, Table, TableError, BINARY_MISSING, MISSING_TOKEN};

/// Reads one delimited text file.
pub fn ingest_csv(path: &Path, schema: &Schema) -> Result<Table> {
    let mut tables = ingest_csv_files(&[path], schema)?;
    Ok(tables.remove(0))
}

/// Reads several files that share one schema. Categorical dictionaries are
/// built over all files together, in first-occurrence order, so codes agree
/// across the returned tables.
pub fn ingest_csv_files<P: AsRef<Path>>(paths: &[P], schema: &Schema) -> Result<Vec<Table>> {
    schema.validate()?;
    let mut dicts = Dictionaries::new(schema);
    let mut builders = Vec::with_capacity(paths.len());
    for path in paths {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| TableError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        builders.push(parse(file, schema, &mut dicts)?);
    }
    let frozen = dicts.freeze();
    builders.into_iter().map(|b| b.finish(schema, &frozen)).collect()
}

/// Reads delimited text from any reader.
pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Table> {
    schema.validate()?;
    let mut dicts = Dictionaries::new(schema);
    let builder = parse(reader, schema, &mut dicts)?;
    builder.finish(schema, &dicts.freeze())
}

/// Token to code lookup plus the tokens in code order.
type Dictionary = (HashMap<String, u32>, Vec<String>);

struct Dictionaries {
    per_column: Vec<Option<Dictionary>>,
}

impl Dictionaries {
    fn new(schema: &Schema) -> Self {
        let per_column = schema
            .columns
            .iter()
            .map(|c| {
                (c.role == ColumnRole::Categorical).then(|| {
                    let mut map = HashMap::new();
                    map.insert(MISSING_TOKEN.to_string(), 0);
                    (map, vec![MISSING_TOKEN.to_string()])
                })
            })
            .collect();
        Self { per_column }
    }

    fn code(&mut self, column: usize, token: &str) -> u32 {
        if token.is_empty() {
            return 0;
        }
        let (map, tokens) = self.per_column[column]
            .as_mut()
            .expect("categorical column has a dictionary");
        if let Some(&code) = map.get(token) {
            return code;
        }
        let code = tokens.len() as u32;
        map.insert(token.to_string(), code);
        tokens.push(token.to_string());
        code
    }

    fn freeze(self) -> Vec<Option<Arc<Vec<String>>>> {
        self.per_column
            .into_iter()
            .map(|d| d.map(|(_, tokens)| Arc::new(tokens)))
            .collect()
    }
}

enum Builder {
    RowId(Vec<String>),
    Day(Vec<u16>),
    Categorical(Vec<u32>),
    Continuous(Vec<f64>),
    Binary(Vec<u8>),
    Label(Vec<u8>),
}

struct TableBuilder {
    columns: Vec<Builder>,
}

impl TableBuilder {
    fn finish(self, schema: &Schema, dicts: &[Option<Arc<Vec<String>>>]) -> Result<Table> {
        let columns = self
            .columns
            .into_iter()
            .zip(dicts)
            .map(|(b, dict)| match b {
                Builder::RowId(v) => Column::RowId(v),
                Builder::Day(v) => Column::Day(v),
                Builder::Categorical(codes) => Column::Categorical(CategoricalColumn {
                    codes,
                    dictionary: Arc::clone(dict.as_ref().expect("categorical dictionary")),
                }),
                Builder::Continuous(v) => Column::Continuous(v),
                Builder::Binary(v) => Column::Binary(v),
                Builder::Label(v) => Column::Label(v),
            })
            .collect();
        Table::new(schema.clone(), columns)
    }
}

fn parse<R: Read>(reader: R, schema: &Schema, dicts: &mut Dictionaries) -> Result<TableBuilder> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .has_headers(false)
        .flexible(true)
        .quoting(false)
        .from_reader(reader);

    let mut columns: Vec<Builder> = schema
        .columns
        .iter()
        .map(|c| match c.role {
            ColumnRole::RowId => Builder::RowId(Vec::new()),
            ColumnRole::Day => Builder::Day(Vec::new()),
            ColumnRole::Categorical => Builder::Categorical(Vec::new()),
            ColumnRole::Continuous => Builder::Continuous(Vec::new()),
            ColumnRole::Binary => Builder::Binary(Vec::new()),
            ColumnRole::LabelClick | ColumnRole::LabelInstall => Builder::Label(Vec::new()),
        })
        .collect();

    let mut record = csv::StringRecord::new();
    let mut first = true;
    loop {
        let line_hint = rdr.position().line();
        let more = rdr.read_record(&mut record).map_err(|source| TableError::Csv {
            line: line_hint,
            source,
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(line_hint, |p| p.line());
        if first && schema.has_header {
            first = false;
            let found: Vec<String> = record.iter().map(str::to_string).collect();
            let expected: Vec<String> = schema.names().map(str::to_string).collect();
            if found != expected {
                return Err(TableError::HeaderMismatch { expected, found });
            }
            continue;
        }
        first = false;
        if record.len() != schema.len() {
            return Err(TableError::FieldCount {
                line,
                expected: schema.len(),
                found: record.len(),
            });
        }
        for (i, (field, spec)) in record.iter().zip(&schema.columns).enumerate() {
            let parse_err = |expected: &'static str| TableError::Parse {
                column: spec.name.clone(),
                line,
                token: field.to_string(),
                expected,
            };
            match &mut columns[i] {
                Builder::RowId(v) => v.push(field.to_string()),
                Builder::Day(v) => v.push(
                    field
                        .trim()
                        .parse::<u16>()
                        .map_err(|_| parse_err("a non-negative integer day"))?,
                ),
                Builder::Categorical(v) => v.push(dicts.code(i, field)),
                Builder::Continuous(v) => v.push(parse_continuous(field).ok_or_else(|| parse_err("a number"))?),
                Builder::Binary(v) => v.push(match parse_continuous(field) {
                    Some(x) if x.is_nan() => BINARY_MISSING,
                    Some(0.0) => 0,
                    Some(1.0) => 1,
                    _ => return Err(parse_err("0, 1 or empty")),
                }),
                Builder::Label(v) => {
                    if field.trim().is_empty() {
                        return Err(TableError::MissingLabel {
                            column: spec.name.clone(),
                            line,
                        });
                    }
                    v.push(match field.trim().parse::<f64>() {
                        Ok(0.0) => 0,
                        Ok(1.0) => 1,
                        _ => return Err(parse_err("a 0/1 label")),
                    });
                }
            }
        }
    }
    Ok(TableBuilder { columns })
}

/// Empty or "NaN" is missing; anything else must parse as a float.
fn parse_continuous(field: &str) -> Option<f64> {
    let field = field.trim();
    if field.is_empty() || field.eq_ignore_ascii_case("nan") {
        return Some(f64::NAN);
    }
    field.parse::<f64>().ok()
}
