//! CSV tables with a `#`-prefixed `key = value` metadata header. Floats are
//! written in shortest round-trip form, so reading a table back reproduces
//! the written values bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, Result};

/// Metadata key listing the column kinds.
pub const TYPES_KEY: &str = "column_types";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Float,
    Int,
    Text,
    Bool,
}

impl Kind {
    fn name(&self) -> &'static str {
        match self {
            Kind::Float => "float",
            Kind::Int => "int",
            Kind::Text => "text",
            Kind::Bool => "bool",
        }
    }

    fn parse(s: &str) -> Option<Kind> {
        [Kind::Float, Kind::Int, Kind::Text, Kind::Bool]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub kind: Kind,
}

pub fn col(name: &str, kind: Kind) -> Column {
    Column {
        name: name.into(),
        kind,
    }
}

/// A cell. `Missing` is an empty field.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Float(f64),
    Int(i64),
    Text(String),
    Bool(bool),
    Missing,
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Float(x)
    }
}

impl From<usize> for Value {
    fn from(x: usize) -> Self {
        Value::Int(x as i64)
    }
}

impl From<bool> for Value {
    fn from(x: bool) -> Self {
        Value::Bool(x)
    }
}

impl From<&str> for Value {
    fn from(x: &str) -> Self {
        Value::Text(x.into())
    }
}

impl From<Option<f64>> for Value {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Value::Missing, Value::Float)
    }
}

/// Plain decimals for moderate magnitudes, exponent form otherwise. Both
/// are the shortest strings that parse back to the same `f64`.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

impl Value {
    pub fn to_field(&self) -> String {
        match self {
            Value::Float(x) => format_float(*x),
            Value::Int(i) => i.to_string(),
            Value::Text(s) => s.clone(),
            Value::Bool(b) => b.to_string(),
            Value::Missing => String::new(),
        }
    }

    fn parse(field: &str, kind: Kind) -> std::result::Result<Value, String> {
        if field.is_empty() {
            return Ok(Value::Missing);
        }
        let bad = |e: &dyn std::fmt::Display| format!("'{field}' is not a {}: {e}", kind.name());
        Ok(match kind {
            Kind::Float => Value::Float(field.parse().map_err(|e| bad(&e))?),
            Kind::Int => Value::Int(field.parse().map_err(|e| bad(&e))?),
            Kind::Bool => Value::Bool(field.parse().map_err(|e| bad(&e))?),
            Kind::Text => Value::Text(field.into()),
        })
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Float(x) => Some(*x),
            Value::Int(i) => Some(*i as f64),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    /// In file order; excludes the column-kind line.
    pub metadata: Vec<(String, String)>,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Value>>,
}

/// Metadata lines, the column-kind line and the column-name row.
pub fn header_text(metadata: &[(String, String)], columns: &[Column]) -> String {
    let mut out = String::new();
    for (k, v) in metadata {
        let _ = writeln!(out, "# {k} = {v}");
    }
    let kinds: Vec<&str> = columns.iter().map(|c| c.kind.name()).collect();
    let _ = writeln!(out, "# {TYPES_KEY} = {}", kinds.join(","));
    let names: Vec<&str> = columns.iter().map(|c| c.name.as_str()).collect();
    let _ = writeln!(out, "{}", names.join(","));
    out
}

pub fn encode_rows(rows: &[Vec<Value>]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for row in rows {
        w.write_record(row.iter().map(Value::to_field))
            .expect("writing to memory");
    }
    w.into_inner().expect("writing to memory")
}

impl Table {
    pub fn value(&self, row: usize, column: &str) -> Option<&Value> {
        let c = self.columns.iter().position(|c| c.name == column)?;
        self.rows.get(row)?.get(c)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = header_text(&self.metadata, &self.columns).into_bytes();
        bytes.extend(encode_rows(&self.rows));
        bytes
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Table> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|reason| CliError::Table {
            path: path.display().to_string(),
            reason,
        })
    }

    pub fn parse(text: &str) -> std::result::Result<Table, String> {
        let mut metadata = Vec::new();
        let mut kinds = None;
        let mut body_start = 0;
        for line in text.split_inclusive('\n') {
            let Some(rest) = line.strip_prefix('#') else { break };
            body_start += line.len();
            let (k, v) = rest
                .trim()
                .split_once(" = ")
                .ok_or_else(|| format!("metadata line without ' = ': {}", line.trim_end()))?;
            if k == TYPES_KEY {
                let parsed: Option<Vec<Kind>> = v.split(',').map(Kind::parse).collect();
                kinds = Some(parsed.ok_or_else(|| format!("bad column kinds '{v}'"))?);
            } else {
                metadata.push((k.to_string(), v.to_string()));
            }
        }
        let kinds = kinds.ok_or("missing column_types metadata")?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(&text.as_bytes()[body_start..]);
        let names = reader.headers().map_err(|e| e.to_string())?.clone();
        if names.len() != kinds.len() {
            return Err(format!("{} column names but {} kinds", names.len(), kinds.len()));
        }
        let columns: Vec<Column> = names.iter().zip(&kinds).map(|(n, &k)| col(n, k)).collect();
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| e.to_string())?;
            let row = record
                .iter()
                .zip(&kinds)
                .map(|(f, &k)| Value::parse(f, k))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| format!("row {line}: {e}"))?;
            rows.push(row);
        }
        Ok(Table {
            metadata,
            columns,
            rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_exactly() {
        for x in [
            0.0,
            -0.0,
            0.1,
            1.0 / 3.0,
            1e-300,
            6.02e23,
            -2.5e-7,
            123456.789,
            f64::MAX,
            f64::MIN_POSITIVE,
        ] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{x} -> {s}");
        }
        assert_eq!(format_float(0.25), "0.25");
        assert_eq!(format_float(1e-10), "1e-10");
    }

    #[test]
    fn table_round_trips() {
        let t = Table {
            metadata: vec![("tool".into(), "ppk 1".into()), ("note".into(), "a = b".into())],
            columns: vec![
                col("x", Kind::Float),
                col("n", Kind::Int),
                col("s", Kind::Text),
                col("b", Kind::Bool),
            ],
            rows: vec![
                vec![0.1.into(), 3usize.into(), "pd".into(), true.into()],
                vec![Value::Missing, Value::Int(-4), "has,comma".into(), false.into()],
            ],
        };
        assert_eq!(Table::parse(&String::from_utf8(t.to_bytes()).unwrap()).unwrap(), t);
    }
}
