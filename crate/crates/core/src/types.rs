use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Column types supported by the engine. Dates are stored as Int64 day numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    Int64,
    Text,
}

impl DataType {
    pub fn name(self) -> &'static str {
        match self {
            DataType::Int64 => "int64",
            DataType::Text => "text",
        }
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A single cell. `Null` never appears in stored tables; it is only produced by
/// MIN/MAX over an empty input.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Null,
    Int(i64),
    Text(Arc<str>),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

/// Columnar storage for one column of a table, intermediate, or batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Int(Vec<i64>),
    Text(Vec<Arc<str>>),
    /// Untyped values; used for aggregate outputs that may carry `Null`.
    Any(Vec<Value>),
}

impl Column {
    pub fn empty(ty: DataType) -> Column {
        Column::with_capacity(ty, 0)
    }

    pub fn with_capacity(ty: DataType, cap: usize) -> Column {
        match ty {
            DataType::Int64 => Column::Int(Vec::with_capacity(cap)),
            DataType::Text => Column::Text(Vec::with_capacity(cap)),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Column::Int(v) => v.len(),
            Column::Text(v) => v.len(),
            Column::Any(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, i: usize) -> Value {
        match self {
            Column::Int(v) => Value::Int(v[i]),
            Column::Text(v) => Value::Text(v[i].clone()),
            Column::Any(v) => v[i].clone(),
        }
    }

    pub fn empty_like(&self, cap: usize) -> Column {
        match self {
            Column::Int(_) => Column::Int(Vec::with_capacity(cap)),
            Column::Text(_) => Column::Text(Vec::with_capacity(cap)),
            Column::Any(_) => Column::Any(Vec::with_capacity(cap)),
        }
    }

    /// Copies the rows at `idx` (in order) into a new column.
    pub fn gather(&self, idx: &[u32]) -> Column {
        match self {
            Column::Int(v) => Column::Int(idx.iter().map(|&i| v[i as usize]).collect()),
            Column::Text(v) => Column::Text(idx.iter().map(|&i| v[i as usize].clone()).collect()),
            Column::Any(v) => Column::Any(idx.iter().map(|&i| v[i as usize].clone()).collect()),
        }
    }

    pub fn slice(&self, start: usize, end: usize) -> Column {
        match self {
            Column::Int(v) => Column::Int(v[start..end].to_vec()),
            Column::Text(v) => Column::Text(v[start..end].to_vec()),
            Column::Any(v) => Column::Any(v[start..end].to_vec()),
        }
    }

    /// Appends all rows of `other`. Both columns must share a representation,
    /// except that anything may be appended to `Any`.
    pub fn append(&mut self, other: &Column) {
        match (self, other) {
            (Column::Int(a), Column::Int(b)) => a.extend_from_slice(b),
            (Column::Text(a), Column::Text(b)) => a.extend_from_slice(b),
            (Column::Any(a), b) => a.extend((0..b.len()).map(|i| b.value(i))),
            (a, b) => {
                let mut vals: Vec<Value> = (0..a.len()).map(|i| a.value(i)).collect();
                vals.extend((0..b.len()).map(|i| b.value(i)));
                *a = Column::Any(vals);
            }
        }
    }

    pub fn push(&mut self, value: Value) {
        match (&mut *self, value) {
            (Column::Int(v), Value::Int(x)) => v.push(x),
            (Column::Text(v), Value::Text(x)) => v.push(x),
            (Column::Any(v), x) => v.push(x),
            (_, x) => {
                let mut vals: Vec<Value> = (0..self.len()).map(|i| self.value(i)).collect();
                vals.push(x);
                *self = Column::Any(vals);
            }
        }
    }
}

/// A horizontal slice of rows in columnar layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub columns: Vec<Column>,
    pub len: usize,
}

impl Batch {
    pub fn new(columns: Vec<Column>) -> Batch {
        let len = columns.first().map_or(0, Column::len);
        debug_assert!(columns.iter().all(|c| c.len() == len));
        Batch { columns, len }
    }

    /// A batch with rows but no columns (e.g. a `COUNT(*)` input).
    pub fn with_len(columns: Vec<Column>, len: usize) -> Batch {
        Batch { columns, len }
    }

    pub fn row(&self, i: usize) -> Vec<Value> {
        self.columns.iter().map(|c| c.value(i)).collect()
    }
}
