//! `RLT1` binary table format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "RLT1" | u32 version | u64 n_rows | u32 header_len | header (schema JSON)
//! then per column, in schema order:
//!   u8 kind | u64 payload_len | payload
//! ```
//!
//! Payloads: row ids and dictionaries are `u32 count` followed by
//! `u32 len + utf8` strings; days are `u16`; codes are `u32`; floats are the
//! `f64` bit pattern with every NaN written as the canonical quiet NaN; binary
//! and label cells are one byte each.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use super::{CategoricalColumn, Column, Result, Schema, Table, TableError};

pub const MAGIC: &[u8; 4] = b"RLT1";
pub const FORMAT_VERSION: u32 = 1;

const KIND_ROW_ID: u8 = 0;
const KIND_DAY: u8 = 1;
const KIND_CATEGORICAL: u8 = 2;
const KIND_CONTINUOUS: u8 = 3;
const KIND_BINARY: u8 = 4;
const KIND_LABEL: u8 = 5;

const CANONICAL_NAN: u64 = 0x7ff8_0000_0000_0000;

pub fn save_binary(table: &Table, path: &Path) -> Result<()> {
    let io_err = |source| TableError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode(table)).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn load_binary(path: &Path) -> Result<Table> {
    let bytes = std::fs::read(path).map_err(|source| TableError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

pub(crate) fn encode(table: &Table) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(table.n_rows() as u64).to_le_bytes());
    let header = serde_json::to_vec(table.schema()).expect("schema serializes");
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);

    for (_, column) in table.iter() {
        let mut payload = Vec::new();
        let kind = match column {
            Column::RowId(v) => {
                put_strings(&mut payload, v);
                KIND_ROW_ID
            }
            Column::Day(v) => {
                v.iter().for_each(|d| payload.extend_from_slice(&d.to_le_bytes()));
                KIND_DAY
            }
            Column::Categorical(c) => {
                put_strings(&mut payload, &c.dictionary);
                c.codes
                    .iter()
                    .for_each(|code| payload.extend_from_slice(&code.to_le_bytes()));
                KIND_CATEGORICAL
            }
            Column::Continuous(v) => {
                for x in v {
                    let bits = if x.is_nan() { CANONICAL_NAN } else { x.to_bits() };
                    payload.extend_from_slice(&bits.to_le_bytes());
                }
                KIND_CONTINUOUS
            }
            Column::Binary(v) => {
                payload.extend_from_slice(v);
                KIND_BINARY
            }
            Column::Label(v) => {
                payload.extend_from_slice(v);
                KIND_LABEL
            }
        };
        out.push(kind);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
    }
    out
}

fn put_strings(out: &mut Vec<u8>, items: &[String]) {
    out.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for s in items {
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        out.extend_from_slice(s.as_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(TableError::Truncated)?;
        let slice = self.buf.get(self.pos..end).ok_or(TableError::Truncated)?;
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn strings(&mut self) -> Result<Vec<String>> {
        let n = self.u32()? as usize;
        let mut out = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let len = self.u32()? as usize;
            let bytes = self.take(len)?;
            out.push(String::from_utf8(bytes.to_vec()).map_err(|_| TableError::Corrupt("string is not utf-8".into()))?);
        }
        Ok(out)
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub(crate) fn decode(bytes: &[u8]) -> Result<Table> {
    if bytes.len() < MAGIC.len() {
        return Err(if MAGIC.starts_with(bytes) {
            TableError::Truncated
        } else {
            TableError::BadMagic
        });
    }
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(TableError::BadMagic);
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(TableError::UnsupportedVersion(version));
    }
    let n_rows = usize::try_from(cur.u64()?).map_err(|_| TableError::Corrupt("row count overflows".into()))?;
    let header_len = cur.u32()? as usize;
    let schema: Schema =
        serde_json::from_slice(cur.take(header_len)?).map_err(|e| TableError::Corrupt(format!("bad header: {e}")))?;

    let mut columns = Vec::with_capacity(schema.len());
    for spec in &schema.columns {
        let kind = cur.u8()?;
        let payload_len =
            usize::try_from(cur.u64()?).map_err(|_| TableError::Corrupt("payload length overflows".into()))?;
        let mut p = Cursor {
            buf: cur.take(payload_len)?,
            pos: 0,
        };
        let column = match kind {
            KIND_ROW_ID => Column::RowId(p.strings()?),
            KIND_DAY => Column::Day(
                p.take(n_rows * 2)?
                    .chunks_exact(2)
                    .map(|b| u16::from_le_bytes([b[0], b[1]]))
                    .collect(),
            ),
            KIND_CATEGORICAL => {
                let dictionary = Arc::new(p.strings()?);
                let codes = p
                    .take(n_rows * 4)?
                    .chunks_exact(4)
                    .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                Column::Categorical(CategoricalColumn { codes, dictionary })
            }
            KIND_CONTINUOUS => Column::Continuous(
                p.take(n_rows * 8)?
                    .chunks_exact(8)
                    .map(|b| f64::from_bits(u64::from_le_bytes(b.try_into().unwrap())))
                    .collect(),
            ),
            KIND_BINARY => Column::Binary(p.take(n_rows)?.to_vec()),
            KIND_LABEL => Column::Label(p.take(n_rows)?.to_vec()),
            other => {
                return Err(TableError::Corrupt(format!(
                    "unknown column kind {other} for `{}`",
                    spec.name
                )))
            }
        };
        if !p.done() {
            return Err(TableError::Corrupt(format!(
                "column `{}` payload has trailing bytes",
                spec.name
            )));
        }
        if column.len() != n_rows {
            return Err(TableError::Corrupt(format!(
                "column `{}` has {} rows, header says {n_rows}",
                spec.name,
                column.len()
            )));
        }
        columns.push(column);
    }
    if !cur.done() {
        return Err(TableError::Corrupt("trailing bytes after last column".into()));
    }
    Table::new(schema, columns).map_err(|e| TableError::Corrupt(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{ColumnRole, ColumnSpec, BINARY_MISSING, MISSING_TOKEN};
    use proptest::prelude::*;

    fn table(xs: Vec<f64>, codes: Vec<u32>) -> Table {
        let n = xs.len();
        let schema = Schema::new(vec![
            ColumnSpec::new("id", ColumnRole::RowId),
            ColumnSpec::new("day", ColumnRole::Day),
            ColumnSpec::new("c", ColumnRole::Categorical),
            ColumnSpec::new("x", ColumnRole::Continuous),
            ColumnSpec::new("b", ColumnRole::Binary),
            ColumnSpec::new("y", ColumnRole::LabelInstall),
        ])
        .unwrap()
        .with_delimiter(',')
        .unwrap();
        let dictionary = Arc::new(vec![MISSING_TOKEN.to_string(), "a".into(), "bé".into()]);
        Table::new(
            schema,
            vec![
                Column::RowId((0..n).map(|i| format!("r{i}")).collect()),
                Column::Day((0..n).map(|i| (i % 7) as u16).collect()),
                Column::Categorical(CategoricalColumn { codes, dictionary }),
                Column::Continuous(xs),
                Column::Binary((0..n).map(|i| [0, 1, BINARY_MISSING][i % 3]).collect()),
                Column::Label((0..n).map(|i| (i % 2) as u8).collect()),
            ],
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(
            cells in proptest::collection::vec((any::<f64>(), 0u32..3), 0..64)
        ) {
            let (xs, codes): (Vec<f64>, Vec<u32>) = cells.into_iter().unzip();
            let t = table(xs, codes);
            let back = decode(&encode(&t)).unwrap();
            prop_assert_eq!(&back, &t);
            // Encoding is canonical, so a second pass is byte-identical.
            prop_assert_eq!(encode(&back), encode(&t));
        }
    }

    #[test]
    fn nan_payloads_are_canonicalized() {
        let odd_nan = f64::from_bits(0x7ff8_0000_0000_0abc);
        let bytes = encode(&table(vec![odd_nan], vec![1]));
        let back = decode(&bytes).unwrap();
        let x = back.column("x").unwrap().as_continuous().unwrap()[0];
        assert_eq!(x.to_bits(), CANONICAL_NAN);
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = encode(&table(vec![1.0], vec![1]));
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(TableError::BadMagic)));
    }

    #[test]
    fn wrong_version() {
        let mut bytes = encode(&table(vec![1.0], vec![1]));
        bytes[4] = 9;
        assert!(matches!(decode(&bytes), Err(TableError::UnsupportedVersion(9))));
    }

    #[test]
    fn truncation_is_detected_at_every_length() {
        let bytes = encode(&table(vec![1.0, 2.0, f64::NAN], vec![1, 2, 0]));
        for len in 0..bytes.len() {
            assert!(decode(&bytes[..len]).is_err(), "prefix of {len} bytes decoded");
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.rlt");
        let t = table(vec![0.25, -1.0, f64::NAN], vec![2, 1, 0]);
        save_binary(&t, &path).unwrap();
        assert_eq!(load_binary(&path).unwrap(), t);
    }
}
