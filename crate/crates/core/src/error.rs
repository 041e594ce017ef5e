use std::path::PathBuf;

use crate::catalog::TableId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: row {row}, column `{column}`: cannot parse {value:?} as {expected}")]
    TypeParse {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
        expected: &'static str,
    },
    #[error("{path}: row {row} has {found} fields, expected {expected}")]
    Arity {
        path: PathBuf,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}: header {found:?} does not match declared columns {expected:?}")]
    HeaderMismatch {
        path: PathBuf,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("table `{0}` already exists")]
    DuplicateTable(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("unknown table id {0}")]
    UnknownTableId(TableId),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("ambiguous column `{0}`")]
    AmbiguousColumn(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("table `{table}`: duplicate primary key value {value}")]
    DuplicatePrimaryKey { table: String, value: String },
    #[error("materialize: schema has {schema} columns but batch has {batch}")]
    MaterializeArity { schema: usize, batch: usize },
    #[error("syntax error at position {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("plan document: {0}")]
    PlanDocument(String),
    #[error("unresolved reference: {0}")]
    UnresolvedReference(String),
    #[error("join predicate {predicate} has no foreign-key orientation")]
    NotOrientable { predicate: String },
    #[error("join order does not match plan: {0}")]
    OrderMismatch(String),
    #[error("materialized scan of #{0} has no originating fragment")]
    DanglingIntermediate(TableId),
    #[error("router does not support this query: {0}")]
    NonSpjUnsupported(String),
    #[error("integer overflow in {0}")]
    Overflow(String),
    #[error("query exceeded its time budget")]
    Timeout,
    #[error(
        "the sub-plan selector cannot be disabled for the dag strategy; \
         compare vanilla against the merged plan with monitor=off instead"
    )]
    SelectorNotDisableable,
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
