//! Base tables, materialized intermediates, schema metadata, and exact statistics.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::cardinality::{CardinalityFeedback, RelEstimate};
use crate::error::{Error, Result};
use crate::plan::ColumnRef;
use crate::types::{Column, DataType};

/// Index shared by base tables and intermediates. Ids are never reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TableId(pub u32);

impl fmt::Display for TableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnDef {
    pub name: String,
    pub data_type: DataType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForeignKey {
    pub column: String,
    pub ref_table: String,
    pub ref_column: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "TableDoc", into = "TableDoc")]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    pub primary_key: Option<String>,
    pub foreign_keys: Vec<ForeignKey>,
}

#[derive(Serialize, Deserialize)]
struct TableDoc {
    name: String,
    columns: Vec<(String, DataType)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    primary_key: Option<String>,
    #[serde(default)]
    foreign_keys: Vec<(String, String, String)>,
}

impl From<TableDoc> for TableDef {
    fn from(doc: TableDoc) -> Self {
        TableDef {
            name: doc.name,
            columns: doc
                .columns
                .into_iter()
                .map(|(name, data_type)| ColumnDef { name, data_type })
                .collect(),
            primary_key: doc.primary_key,
            foreign_keys: doc
                .foreign_keys
                .into_iter()
                .map(|(column, ref_table, ref_column)| ForeignKey {
                    column,
                    ref_table,
                    ref_column,
                })
                .collect(),
        }
    }
}

impl From<TableDef> for TableDoc {
    fn from(def: TableDef) -> Self {
        TableDoc {
            name: def.name,
            columns: def
                .columns
                .into_iter()
                .map(|c| (c.name, c.data_type))
                .collect(),
            primary_key: def.primary_key,
            foreign_keys: def
                .foreign_keys
                .into_iter()
                .map(|fk| (fk.column, fk.ref_table, fk.ref_column))
                .collect(),
        }
    }
}

impl TableDef {
    pub fn new(name: &str, columns: &[(&str, DataType)]) -> TableDef {
        TableDef {
            name: name.to_string(),
            columns: columns
                .iter()
                .map(|(n, t)| ColumnDef {
                    name: n.to_string(),
                    data_type: *t,
                })
                .collect(),
            primary_key: None,
            foreign_keys: Vec::new(),
        }
    }

    pub fn with_primary_key(mut self, column: &str) -> TableDef {
        self.primary_key = Some(column.to_string());
        self
    }

    pub fn with_foreign_key(mut self, column: &str, ref_table: &str, ref_column: &str) -> TableDef {
        self.foreign_keys.push(ForeignKey {
            column: column.to_string(),
            ref_table: ref_table.to_string(),
            ref_column: ref_column.to_string(),
        });
        self
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// The foreign key declared on `column`, if any.
    pub fn foreign_key(&self, column: &str) -> Option<&ForeignKey> {
        self.foreign_keys.iter().find(|fk| fk.column == column)
    }

    fn validate_local(&self) -> Result<()> {
        let mut seen = FxHashSet::default();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "table `{}` declares column `{}` twice",
                    self.name, c.name
                )));
            }
        }
        if let Some(pk) = &self.primary_key {
            if self.column_index(pk).is_none() {
                return Err(Error::InvalidSchema(format!(
                    "table `{}`: primary key `{pk}` is not a column",
                    self.name
                )));
            }
        }
        for fk in &self.foreign_keys {
            if self.column_index(&fk.column).is_none() {
                return Err(Error::InvalidSchema(format!(
                    "table `{}`: foreign key column `{}` is not a column",
                    self.name, fk.column
                )));
            }
        }
        Ok(())
    }
}

/// The schema document read from `schema.json`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SchemaDoc {
    pub tables: Vec<TableDef>,
}

impl SchemaDoc {
    pub fn from_json(text: &str) -> Result<SchemaDoc> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }
}

/// Exact statistics for one column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnStat {
    pub distinct_count: u64,
    pub min: Option<i64>,
    pub max: Option<i64>,
    /// Text columns only: distinct counts of the first `k + 1` characters.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prefix_distinct: Vec<u64>,
}

/// Exact statistics for a table or intermediate: row count plus per-column stats.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub row_count: u64,
    pub columns: Vec<ColumnStat>,
}

/// Prefix lengths tracked for `LIKE 'p%'` estimation.
pub const MAX_TRACKED_PREFIX: usize = 8;

impl ColumnStats {
    /// Full-scan statistics. No sampling.
    pub fn compute(columns: &[Column], row_count: usize) -> ColumnStats {
        let columns = columns.iter().map(column_stat).collect();
        ColumnStats {
            row_count: row_count as u64,
            columns,
        }
    }
}

fn column_stat(col: &Column) -> ColumnStat {
    match col {
        Column::Int(v) => {
            let distinct: FxHashSet<i64> = v.iter().copied().collect();
            ColumnStat {
                distinct_count: distinct.len() as u64,
                min: v.iter().min().copied(),
                max: v.iter().max().copied(),
                prefix_distinct: Vec::new(),
            }
        }
        Column::Text(v) => {
            let distinct: FxHashSet<&str> = v.iter().map(|s| s.as_ref()).collect();
            let prefix_distinct = (1..=MAX_TRACKED_PREFIX)
                .map(|k| {
                    distinct
                        .iter()
                        .map(|s| prefix_chars(s, k))
                        .collect::<FxHashSet<&str>>()
                        .len() as u64
                })
                .collect();
            ColumnStat {
                distinct_count: distinct.len() as u64,
                min: None,
                max: None,
                prefix_distinct,
            }
        }
        Column::Any(v) => {
            let distinct: FxHashSet<&crate::types::Value> = v.iter().collect();
            ColumnStat {
                distinct_count: distinct.len() as u64,
                min: None,
                max: None,
                prefix_distinct: Vec::new(),
            }
        }
    }
}

/// The first `k` characters of `s` (all of `s` if shorter).
pub fn prefix_chars(s: &str, k: usize) -> &str {
    match s.char_indices().nth(k) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    pub id: TableId,
    pub def: TableDef,
    pub columns: Vec<Column>,
    pub row_count: usize,
    pub stats: Option<ColumnStats>,
}

/// One output column of an intermediate, named by the relation column it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputColumn {
    pub name: ColumnRef,
    pub data_type: DataType,
    pub source_table: String,
}

#[derive(Debug, Clone)]
pub struct IntermediateResult {
    pub id: TableId,
    pub schema: Vec<OutputColumn>,
    pub columns: Vec<Column>,
    pub exact_row_count: u64,
    /// Exact statistics gathered while materializing.
    pub stats: ColumnStats,
    /// Estimate the planner held for this result before it was executed.
    pub prior: Option<RelEstimate>,
    /// Set by the monitor; estimates switch to exact values once present.
    pub feedback: Option<CardinalityFeedback>,
}

impl IntermediateResult {
    /// Relation aliases whose columns this intermediate carries, sorted.
    pub fn relations(&self) -> Vec<String> {
        let mut rels: Vec<String> = self
            .schema
            .iter()
            .map(|c| c.name.relation.clone())
            .collect();
        rels.sort();
        rels.dedup();
        rels
    }

    pub fn column_index(&self, name: &ColumnRef) -> Option<usize> {
        self.schema.iter().position(|c| &c.name == name)
    }
}

/// Single-writer catalog of base tables and in-memory intermediates.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    tables: Vec<Table>,
    by_name: FxHashMap<String, usize>,
    intermediates: BTreeMap<TableId, IntermediateResult>,
    next_id: u32,
}

impl Catalog {
    pub fn new() -> Catalog {
        Catalog::default()
    }

    /// Loads `schema.json` plus one `<table>.csv` per declared table, then analyzes
    /// every table.
    pub fn load_dir(dir: &Path) -> Result<Catalog> {
        let schema_path = dir.join("schema.json");
        let text = std::fs::read_to_string(&schema_path)?;
        let doc = SchemaDoc::from_json(&text)?;
        let mut catalog = Catalog::new();
        catalog.check_schema_doc(&doc)?;
        for def in doc.tables {
            let path = dir.join(format!("{}.csv", def.name));
            let file = std::fs::File::open(&path)?;
            let columns = parse_csv(file, &path, &def)?;
            catalog.insert(def, columns, false)?;
        }
        for i in 0..catalog.tables.len() {
            let id = catalog.tables[i].id;
            catalog.analyze(id)?;
        }
        Ok(catalog)
    }

    fn check_schema_doc(&self, doc: &SchemaDoc) -> Result<()> {
        let mut names: FxHashMap<&str, &TableDef> = FxHashMap::default();
        for def in &doc.tables {
            def.validate_local()?;
            if names.insert(def.name.as_str(), def).is_some()
                || self.by_name.contains_key(&def.name)
            {
                return Err(Error::DuplicateTable(def.name.clone()));
            }
        }
        for def in &doc.tables {
            for fk in &def.foreign_keys {
                let target = names
                    .get(fk.ref_table.as_str())
                    .copied()
                    .or_else(|| self.table_by_name(&fk.ref_table).map(|t| &t.def));
                check_fk_target(def, fk, target)?;
            }
        }
        Ok(())
    }

    /// Parses a CSV file with a header row matching `def` and registers the table.
    pub fn load_csv(&mut self, path: &Path, def: TableDef) -> Result<TableId> {
        let file = std::fs::File::open(path)?;
        self.load_csv_reader(file, path, def)
    }

    pub fn load_csv_reader<R: Read>(
        &mut self,
        reader: R,
        path: &Path,
        def: TableDef,
    ) -> Result<TableId> {
        if self.by_name.contains_key(&def.name) {
            return Err(Error::DuplicateTable(def.name));
        }
        def.validate_local()?;
        let columns = parse_csv(reader, path, &def)?;
        self.insert(def, columns, true)
    }

    /// Registers a table from in-memory columns.
    pub fn create_table(&mut self, def: TableDef, columns: Vec<Column>) -> Result<TableId> {
        if self.by_name.contains_key(&def.name) {
            return Err(Error::DuplicateTable(def.name));
        }
        def.validate_local()?;
        if columns.len() != def.columns.len() {
            return Err(Error::InvalidSchema(format!(
                "table `{}`: {} columns declared, {} supplied",
                def.name,
                def.columns.len(),
                columns.len()
            )));
        }
        for (c, cd) in columns.iter().zip(&def.columns) {
            let ok = matches!(
                (c, cd.data_type),
                (Column::Int(_), DataType::Int64) | (Column::Text(_), DataType::Text)
            );
            if !ok {
                return Err(Error::InvalidSchema(format!(
                    "table `{}`: column `{}` data does not match {}",
                    def.name, cd.name, cd.data_type
                )));
            }
        }
        self.insert(def, columns, true)
    }

    fn insert(&mut self, def: TableDef, columns: Vec<Column>, check_fk: bool) -> Result<TableId> {
        if self.by_name.contains_key(&def.name) {
            return Err(Error::DuplicateTable(def.name));
        }
        if check_fk {
            for fk in &def.foreign_keys {
                let target = if fk.ref_table == def.name {
                    Some(&def)
                } else {
                    self.table_by_name(&fk.ref_table).map(|t| &t.def)
                };
                check_fk_target(&def, fk, target)?;
            }
        }
        let row_count = columns.first().map_or(0, Column::len);
        if columns.iter().any(|c| c.len() != row_count) {
            return Err(Error::InvalidSchema(format!(
                "table `{}`: columns have different lengths",
                def.name
            )));
        }
        if let Some(pk) = &def.primary_key {
            let idx = def.column_index(pk).expect("validated");
            check_unique(&def.name, &columns[idx])?;
        }
        let id = self.fresh_id();
        self.by_name.insert(def.name.clone(), self.tables.len());
        self.tables.push(Table {
            id,
            def,
            columns,
            row_count,
            stats: None,
        });
        Ok(id)
    }

    fn fresh_id(&mut self) -> TableId {
        let id = TableId(self.next_id);
        self.next_id += 1;
        id
    }

    /// Recomputes exact statistics for a base table or intermediate.
    pub fn analyze(&mut self, id: TableId) -> Result<&ColumnStats> {
        if let Some(pos) = self.tables.iter().position(|t| t.id == id) {
            let t = &mut self.tables[pos];
            t.stats = Some(ColumnStats::compute(&t.columns, t.row_count));
            return Ok(t.stats.as_ref().expect("just set"));
        }
        if let Some(im) = self.intermediates.get_mut(&id) {
            im.stats = ColumnStats::compute(&im.columns, im.exact_row_count as usize);
            return Ok(&im.stats);
        }
        Err(Error::UnknownTableId(id))
    }

    /// Stores a result batch as an in-memory intermediate with a fresh id and exact
    /// statistics.
    pub fn materialize(
        &mut self,
        columns: Vec<Column>,
        row_count: usize,
        schema: Vec<OutputColumn>,
    ) -> Result<TableId> {
        if schema.len() != columns.len() {
            return Err(Error::MaterializeArity {
                schema: schema.len(),
                batch: columns.len(),
            });
        }
        if columns.iter().any(|c| c.len() != row_count) {
            return Err(Error::InvalidSchema("materialize: ragged columns".into()));
        }
        let id = self.fresh_id();
        let stats = ColumnStats::compute(&columns, row_count);
        self.intermediates.insert(
            id,
            IntermediateResult {
                id,
                schema,
                columns,
                exact_row_count: row_count as u64,
                stats,
                prior: None,
                feedback: None,
            },
        );
        Ok(id)
    }

    pub fn table(&self, id: TableId) -> Option<&Table> {
        self.tables.iter().find(|t| t.id == id)
    }

    pub fn table_by_name(&self, name: &str) -> Option<&Table> {
        self.by_name.get(name).map(|&i| &self.tables[i])
    }

    pub fn tables(&self) -> &[Table] {
        &self.tables
    }

    pub fn intermediate(&self, id: TableId) -> Option<&IntermediateResult> {
        self.intermediates.get(&id)
    }

    pub fn intermediate_mut(&mut self, id: TableId) -> Option<&mut IntermediateResult> {
        self.intermediates.get_mut(&id)
    }

    pub fn intermediates(&self) -> impl Iterator<Item = &IntermediateResult> {
        self.intermediates.values()
    }

    /// Drops every intermediate. Ids are not recycled.
    pub fn drop_intermediates(&mut self) {
        self.intermediates.clear();
    }

    pub fn schema_doc(&self) -> SchemaDoc {
        SchemaDoc {
            tables: self.tables.iter().map(|t| t.def.clone()).collect(),
        }
    }
}

fn check_fk_target(def: &TableDef, fk: &ForeignKey, target: Option<&TableDef>) -> Result<()> {
    let Some(target) = target else {
        return Err(Error::InvalidSchema(format!(
            "table `{}`: foreign key `{}` references undeclared table `{}`",
            def.name, fk.column, fk.ref_table
        )));
    };
    if target.column_index(&fk.ref_column).is_none() {
        return Err(Error::InvalidSchema(format!(
            "table `{}`: foreign key `{}` references undeclared column `{}.{}`",
            def.name, fk.column, fk.ref_table, fk.ref_column
        )));
    }
    Ok(())
}

fn check_unique(table: &str, col: &Column) -> Result<()> {
    match col {
        Column::Int(v) => {
            let mut seen = FxHashSet::default();
            for x in v {
                if !seen.insert(*x) {
                    return Err(Error::DuplicatePrimaryKey {
                        table: table.to_string(),
                        value: x.to_string(),
                    });
                }
            }
        }
        Column::Text(v) => {
            let mut seen = FxHashSet::default();
            for x in v {
                if !seen.insert(x.as_ref()) {
                    return Err(Error::DuplicatePrimaryKey {
                        table: table.to_string(),
                        value: x.to_string(),
                    });
                }
            }
        }
        Column::Any(_) => {}
    }
    Ok(())
}

fn parse_csv<R: Read>(reader: R, path: &Path, def: &TableDef) -> Result<Vec<Column>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let expected = def.column_names();
    if header != expected {
        return Err(Error::HeaderMismatch {
            path: path.to_path_buf(),
            expected,
            found: header,
        });
    }
    let mut columns: Vec<Column> = def
        .columns
        .iter()
        .map(|c| Column::empty(c.data_type))
        .collect();
    // Interning keeps repeated text values in one allocation.
    let mut interned: FxHashSet<Arc<str>> = FxHashSet::default();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        if record.len() != def.columns.len() {
            return Err(Error::Arity {
                path: path.to_path_buf(),
                row,
                expected: def.columns.len(),
                found: record.len(),
            });
        }
        for ((field, col), cdef) in record.iter().zip(columns.iter_mut()).zip(&def.columns) {
            match col {
                Column::Int(v) => {
                    let parsed = field.trim().parse::<i64>().map_err(|_| Error::TypeParse {
                        path: path.to_path_buf(),
                        row,
                        column: cdef.name.clone(),
                        value: field.to_string(),
                        expected: "int64",
                    })?;
                    v.push(parsed);
                }
                Column::Text(v) => {
                    let s = match interned.get(field) {
                        Some(s) => s.clone(),
                        None => {
                            let s: Arc<str> = Arc::from(field);
                            interned.insert(s.clone());
                            s
                        }
                    };
                    v.push(s);
                }
                Column::Any(_) => unreachable!("tables never declare untyped columns"),
            }
        }
    }
    Ok(columns)
}

/// Writes columns as RFC-4180 CSV with a header row.
pub fn write_csv<W: std::io::Write>(writer: W, def: &TableDef, columns: &[Column]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    w.write_record(def.columns.iter().map(|c| c.name.as_str()))?;
    let rows = columns.first().map_or(0, Column::len);
    let mut record: Vec<String> = Vec::with_capacity(columns.len());
    for i in 0..rows {
        record.clear();
        record.extend(columns.iter().map(|c| c.value(i).to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Path of the CSV file for `table` inside a data directory.
pub fn csv_path(dir: &Path, table: &str) -> PathBuf {
    dir.join(format!("{table}.csv"))
}
