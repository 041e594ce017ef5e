//! Single-threaded, pull-based execution over columnar batches.

use std::cmp::Ordering;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::clock::{Deadline, Instant};
use crate::error::{Error, Result};
use crate::optimizer::{PhysNode, PhysicalOp};
use crate::plan::{AggExpr, AggFunc, CmpOp, ColumnRef, Literal, Predicate};
use crate::types::{Batch, Column, DataType, Value};

pub const BATCH_SIZE: usize = 1024;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecMetrics {
    /// Output rows per operator, in pre-order (root first).
    pub operator_rows: Vec<u64>,
    /// Sum of `operator_rows` without the root.
    pub total_intermediate_tuples: u64,
    pub wall_ns: u64,
    /// Most rows held at once in hash tables, cross-product buffers, and
    /// aggregation state.
    pub peak_rows_materialized: u64,
}

impl ExecMetrics {
    pub fn root_rows(&self) -> u64 {
        self.operator_rows.first().copied().unwrap_or(0)
    }
}

/// Materialized output of a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultSet {
    pub schema: Vec<(ColumnRef, DataType)>,
    pub columns: Vec<Column>,
    pub len: usize,
}

impl ResultSet {
    pub fn row(&self, i: usize) -> Vec<Value> {
        self.columns.iter().map(|c| c.value(i)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<Value>> {
        (0..self.len).map(|i| self.row(i)).collect()
    }

    pub fn sorted_rows(&self) -> Vec<Vec<Value>> {
        let mut rows = self.rows();
        rows.sort();
        rows
    }

    /// Order-insensitive 64-bit hash of the row multiset.
    pub fn checksum(&self) -> u64 {
        let mut buf = Vec::new();
        let mut acc = 0u64;
        for i in 0..self.len {
            buf.clear();
            for c in &self.columns {
                encode_value(&c.value(i), &mut buf);
            }
            acc = acc.wrapping_add(mix64(fnv1a(&buf)));
        }
        acc
    }

    /// Multiset equality of rows; column names are not compared.
    pub fn same_rows(&self, other: &ResultSet) -> bool {
        self.len == other.len
            && self.columns.len() == other.columns.len()
            && self.sorted_rows() == other.sorted_rows()
    }
}

fn encode_value(v: &Value, out: &mut Vec<u8>) {
    match v {
        Value::Null => out.push(b'n'),
        Value::Int(x) => {
            out.push(b'i');
            out.extend_from_slice(&x.to_le_bytes());
        }
        Value::Text(s) => {
            out.push(b't');
            out.extend_from_slice(&(s.len() as u64).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn execute(plan: &PhysNode, catalog: &Catalog) -> Result<(ResultSet, ExecMetrics)> {
    execute_with_deadline(plan, catalog, Deadline::none())
}

pub fn execute_with_deadline(
    plan: &PhysNode,
    catalog: &Catalog,
    deadline: Deadline,
) -> Result<(ResultSet, ExecMetrics)> {
    let start = Instant::now();
    let mut ctx = Ctx {
        rows: vec![0; plan.node_count()],
        live: 0,
        peak: 0,
        deadline,
    };
    let mut slot = 0;
    let mut root = build(plan, catalog, &mut slot)?;
    let mut columns: Vec<Column> = plan.schema.iter().map(|(_, t)| Column::empty(*t)).collect();
    let mut len = 0;
    while let Some(batch) = root.next(&mut ctx)? {
        for (dst, src) in columns.iter_mut().zip(&batch.columns) {
            dst.append(src);
        }
        len += batch.len;
    }
    let total = ctx.rows.iter().skip(1).sum();
    let metrics = ExecMetrics {
        operator_rows: ctx.rows,
        total_intermediate_tuples: total,
        wall_ns: start.elapsed_ns(),
        peak_rows_materialized: ctx.peak,
    };
    Ok((
        ResultSet {
            schema: plan.schema.clone(),
            columns,
            len,
        },
        metrics,
    ))
}

struct Ctx {
    rows: Vec<u64>,
    live: u64,
    peak: u64,
    deadline: Deadline,
}

impl Ctx {
    fn hold(&mut self, rows: u64) {
        self.live += rows;
        self.peak = self.peak.max(self.live);
    }

    fn release(&mut self, rows: u64) {
        self.live -= rows;
    }
}

trait Operator {
    fn next(&mut self, ctx: &mut Ctx) -> Result<Option<Batch>>;
}

type BoxOp<'a> = Box<dyn Operator + 'a>;

/// Counts an operator's output and enforces the deadline once per batch.
struct Metered<'a> {
    slot: usize,
    inner: BoxOp<'a>,
}

impl Operator for Metered<'_> {
    fn next(&mut self, ctx: &mut Ctx) -> Result<Option<Batch>> {
        if ctx.deadline.expired() {
            return Err(Error::Timeout);
        }
        let out = self.inner.next(ctx)?;
        if let Some(b) = &out {
            ctx.rows[self.slot] += b.len as u64;
        }
        Ok(out)
    }
}

fn position(schema: &[(ColumnRef, DataType)], c: &ColumnRef) -> Result<usize> {
    schema
        .iter()
        .position(|(x, _)| x == c)
        .ok_or_else(|| Error::UnresolvedReference(c.to_string()))
}

fn build<'a>(node: &'a PhysNode, catalog: &'a Catalog, slot: &mut usize) -> Result<BoxOp<'a>> {
    let me = *slot;
    *slot += 1;
    let inner: BoxOp<'a> = match &node.op {
        PhysicalOp::TableScan {
            table, projection, ..
        } => {
            let t = catalog
                .table_by_name(table)
                .ok_or_else(|| Error::UnknownTable(table.clone()))?;
            Box::new(Scan {
                columns: projection.iter().map(|&p| &t.columns[p]).collect(),
                len: t.row_count,
                pos: 0,
            })
        }
        PhysicalOp::MaterializedScan { id, projection, .. } => {
            let im = catalog
                .intermediate(*id)
                .ok_or(Error::DanglingIntermediate(*id))?;
            Box::new(Scan {
                columns: projection.iter().map(|&p| &im.columns[p]).collect(),
                len: im.exact_row_count as usize,
                pos: 0,
            })
        }
        PhysicalOp::Filter { predicates, input } => {
            let preds = predicates
                .iter()
                .map(|p| CompiledPred::new(p, &input.schema))
                .collect::<Result<Vec<_>>>()?;
            Box::new(Filter {
                preds,
                input: build(input, catalog, slot)?,
            })
        }
        PhysicalOp::HashJoin {
            on,
            left,
            right,
            build_left,
        } => {
            let (b, p) = if *build_left {
                (left, right)
            } else {
                (right, left)
            };
            let mut keys = Vec::with_capacity(on.len());
            for j in on {
                let b_rel = b.relations();
                let (bc, pc) = if b_rel.contains(&j.left.relation) {
                    (&j.left, &j.right)
                } else {
                    (&j.right, &j.left)
                };
                keys.push((position(&b.schema, bc)?, position(&p.schema, pc)?));
            }
            let output = output_map(&node.schema, &b.schema, &p.schema)?;
            // Children are built in pre-order (left first) so slots match `preorder`.
            let (lop, rop) = (build(left, catalog, slot)?, build(right, catalog, slot)?);
            let (bop, pop) = if *build_left { (lop, rop) } else { (rop, lop) };
            Box::new(HashJoin {
                build: Some(bop),
                probe: pop,
                keys,
                output,
                table: None,
                state: ProbeState::default(),
            })
        }
        PhysicalOp::CrossProduct { left, right } => {
            let output = output_map(&node.schema, &right.schema, &left.schema)?;
            Box::new(CrossProduct {
                left: build(left, catalog, slot)?,
                right: Some(build(right, catalog, slot)?),
                stored: None,
                output,
                current: None,
                lrow: 0,
                rrow: 0,
            })
        }
        PhysicalOp::Project { input } => {
            let idx = node
                .schema
                .iter()
                .map(|(c, _)| position(&input.schema, c))
                .collect::<Result<Vec<_>>>()?;
            Box::new(Project {
                idx,
                input: build(input, catalog, slot)?,
            })
        }
        PhysicalOp::Aggregate {
            group_by,
            aggregates,
            input,
        } => {
            let group_idx = group_by
                .iter()
                .map(|c| position(&input.schema, c))
                .collect::<Result<Vec<_>>>()?;
            let aggs = aggregates
                .iter()
                .map(|a| {
                    Ok((
                        a.func,
                        a.arg
                            .as_ref()
                            .map(|c| position(&input.schema, c))
                            .transpose()?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            Box::new(Aggregate {
                group_idx,
                aggs,
                exprs: aggregates.clone(),
                types: node.schema.iter().map(|(_, t)| *t).collect(),
                input: Some(build(input, catalog, slot)?),
            })
        }
    };
    Ok(Box::new(Metered { slot: me, inner }))
}

/// For each output column: (from first side?, position in that side).
fn output_map(
    out: &[(ColumnRef, DataType)],
    first: &[(ColumnRef, DataType)],
    second: &[(ColumnRef, DataType)],
) -> Result<Vec<(bool, usize)>> {
    out.iter()
        .map(|(c, _)| {
            if let Some(i) = first.iter().position(|(x, _)| x == c) {
                Ok((true, i))
            } else {
                Ok((false, position(second, c)?))
            }
        })
        .collect()
}

struct Scan<'a> {
    columns: Vec<&'a Column>,
    len: usize,
    pos: usize,
}

impl Operator for Scan<'_> {
    fn next(&mut self, _ctx: &mut Ctx) -> Result<Option<Batch>> {
        if self.pos >= self.len {
            return Ok(None);
        }
        let end = (self.pos + BATCH_SIZE).min(self.len);
        let cols = self
            .columns
            .iter()
            .map(|c| c.slice(self.pos, end))
            .collect();
        let batch = Batch::with_len(cols, end - self.pos);
        self.pos = end;
        Ok(Some(batch))
    }
}

enum CompiledPred {
    IntCmp { col: usize, op: Cmp, value: i64 },
    TextCmp { col: usize, op: Cmp, value: String },
    Prefix { col: usize, prefix: String },
    ColEq { a: usize, b: usize },
}

#[derive(Clone, Copy)]
enum Cmp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Cmp {
    fn holds(self, o: Ordering) -> bool {
        match self {
            Cmp::Eq => o == Ordering::Equal,
            Cmp::Ne => o != Ordering::Equal,
            Cmp::Lt => o == Ordering::Less,
            Cmp::Le => o != Ordering::Greater,
            Cmp::Gt => o == Ordering::Greater,
            Cmp::Ge => o != Ordering::Less,
        }
    }
}

impl CompiledPred {
    fn new(p: &Predicate, schema: &[(ColumnRef, DataType)]) -> Result<CompiledPred> {
        let lit = |col: usize, op: Cmp, value: &Literal| match value {
            Literal::Int(v) => CompiledPred::IntCmp { col, op, value: *v },
            Literal::Text(s) => CompiledPred::TextCmp {
                col,
                op,
                value: s.clone(),
            },
        };
        Ok(match p {
            Predicate::ColEqLiteral { column, value } => {
                lit(position(schema, column)?, Cmp::Eq, value)
            }
            Predicate::ColCmpLiteral { column, op, value } => {
                let op = match op {
                    CmpOp::Lt => Cmp::Lt,
                    CmpOp::Le => Cmp::Le,
                    CmpOp::Gt => Cmp::Gt,
                    CmpOp::Ge => Cmp::Ge,
                    CmpOp::Ne => Cmp::Ne,
                };
                lit(position(schema, column)?, op, value)
            }
            Predicate::ColPrefix { column, prefix } => CompiledPred::Prefix {
                col: position(schema, column)?,
                prefix: prefix.clone(),
            },
            Predicate::ColEqCol { left, right } => CompiledPred::ColEq {
                a: position(schema, left)?,
                b: position(schema, right)?,
            },
        })
    }

    /// Keeps the entries of `sel` whose rows satisfy the predicate.
    fn retain(&self, batch: &Batch, sel: &mut Vec<u32>) {
        match self {
            CompiledPred::IntCmp { col, op, value } => match &batch.columns[*col] {
                Column::Int(v) => sel.retain(|&i| op.holds(v[i as usize].cmp(value))),
                c => sel.retain(|&i| matches!(c.value(i as usize), Value::Int(x) if op.holds(x.cmp(value)))),
            },
            CompiledPred::TextCmp { col, op, value } => match &batch.columns[*col] {
                Column::Text(v) => sel.retain(|&i| op.holds((*v[i as usize]).cmp(value.as_str()))),
                c => sel.retain(|&i| {
                    matches!(c.value(i as usize), Value::Text(x) if op.holds((*x).cmp(value.as_str())))
                }),
            },
            CompiledPred::Prefix { col, prefix } => match &batch.columns[*col] {
                Column::Text(v) => sel.retain(|&i| v[i as usize].starts_with(prefix.as_str())),
                c => sel.retain(|&i| matches!(c.value(i as usize), Value::Text(x) if x.starts_with(prefix.as_str()))),
            },
            CompiledPred::ColEq { a, b } => {
                let (ca, cb) = (&batch.columns[*a], &batch.columns[*b]);
                sel.retain(|&i| ca.value(i as usize) == cb.value(i as usize))
            }
        }
    }
}

struct Filter<'a> {
    preds: Vec<CompiledPred>,
    input: BoxOp<'a>,
}

impl Operator for Filter<'_> {
    fn next(&mut self, ctx: &mut Ctx) -> Result<Option<Batch>> {
        while let Some(batch) = self.input.next(ctx)? {
            let mut sel: Vec<u32> = (0..batch.len as u32).collect();
            for p in &self.preds {
                p.retain(&batch, &mut sel);
            }
            if sel.is_empty() {
                continue;
            }
            if sel.len() == batch.len {
                return Ok(Some(batch));
            }
            let cols = batch.columns.iter().map(|c| c.gather(&sel)).collect();
            return Ok(Some(Batch::with_len(cols, sel.len())));
        }
        Ok(None)
    }
}

const NIL: u32 = u32::MAX;

/// Hash table over the build side: chained row lists keyed by join key.
enum KeyIndex {
    Int(FxHashMap<i64, u32>),
    General(FxHashMap<Vec<Value>, u32>),
}

struct BuildTable {
    columns: Vec<Column>,
    rows: usize,
    index: KeyIndex,
    /// Next row with the same key, or `NIL`.
    chain: Vec<u32>,
}

impl BuildTable {
    fn first(&self, probe: &Batch, keys: &[(usize, usize)], row: usize) -> u32 {
        match &self.index {
            KeyIndex::Int(map) => {
                let k = match &probe.columns[keys[0].1] {
                    Column::Int(v) => v[row],
                    c => match c.value(row) {
                        Value::Int(x) => x,
                        _ => return NIL,
                    },
                };
                map.get(&k).copied().unwrap_or(NIL)
            }
            KeyIndex::General(map) => {
                let k: Vec<Value> = keys
                    .iter()
                    .map(|&(_, p)| probe.columns[p].value(row))
                    .collect();
                map.get(&k).copied().unwrap_or(NIL)
            }
        }
    }
}

#[derive(Default)]
struct ProbeState {
    batch: Option<Batch>,
    row: usize,
    /// Next build row to emit for `row`.
    cursor: u32,
}

struct HashJoin<'a> {
    build: Option<BoxOp<'a>>,
    probe: BoxOp<'a>,
    /// (build column, probe column) per key.
    keys: Vec<(usize, usize)>,
    /// (from build?, position) per output column.
    output: Vec<(bool, usize)>,
    table: Option<BuildTable>,
    state: ProbeState,
}

impl HashJoin<'_> {
    fn build_table(&mut self, ctx: &mut Ctx) -> Result<()> {
        let mut op = self.build.take().expect("built once");
        let mut columns: Option<Vec<Column>> = None;
        let mut rows = 0usize;
        while let Some(b) = op.next(ctx)? {
            match &mut columns {
                None => columns = Some(b.columns),
                Some(cols) => {
                    for (d, s) in cols.iter_mut().zip(&b.columns) {
                        d.append(s);
                    }
                }
            }
            rows += b.len;
        }
        let columns = columns.unwrap_or_default();
        let mut chain = vec![NIL; rows];
        let int_key =
            self.keys.len() == 1 && matches!(columns.get(self.keys[0].0), Some(Column::Int(_)));
        let index = if int_key {
            let Column::Int(v) = &columns[self.keys[0].0] else {
                unreachable!()
            };
            let mut map = FxHashMap::with_capacity_and_hasher(rows, Default::default());
            for (i, k) in v.iter().enumerate().rev() {
                let head = map.entry(*k).or_insert(NIL);
                chain[i] = *head;
                *head = i as u32;
            }
            KeyIndex::Int(map)
        } else {
            let mut map = FxHashMap::default();
            for i in (0..rows).rev() {
                let k: Vec<Value> = self
                    .keys
                    .iter()
                    .map(|&(b, _)| columns[b].value(i))
                    .collect();
                let head = map.entry(k).or_insert(NIL);
                chain[i] = *head;
                *head = i as u32;
            }
            KeyIndex::General(map)
        };
        ctx.hold(rows as u64);
        self.table = Some(BuildTable {
            columns,
            rows,
            index,
            chain,
        });
        Ok(())
    }
}

impl Operator for HashJoin<'_> {
    fn next(&mut self, ctx: &mut Ctx) -> Result<Option<Batch>> {
        if self.build.is_some() {
            self.build_table(ctx)?;
        }
        let Some(table) = &self.table else {
            return Ok(None);
        };
        let mut bidx: Vec<u32> = Vec::new();
        let mut pidx: Vec<u32> = Vec::new();
        loop {
            if self.state.batch.is_none() {
                match self.probe.next(ctx)? {
                    Some(b) => {
                        self.state = ProbeState {
                            cursor: if b.len > 0 {
                                table.first(&b, &self.keys, 0)
                            } else {
                                NIL
                            },
                            batch: Some(b),
                            row: 0,
                        };
                    }
                    None => break,
                }
            }
            let batch = self.state.batch.as_ref().expect("set above");
            while self.state.row < batch.len && bidx.len() < BATCH_SIZE {
                let mut cur = self.state.cursor;
                while cur != NIL && bidx.len() < BATCH_SIZE {
                    let ok = self.keys.len() == 1
                        || self.keys.iter().all(|&(b, p)| {
                            table.columns[b].value(cur as usize)
                                == batch.columns[p].value(self.state.row)
                        });
                    if ok {
                        bidx.push(cur);
                        pidx.push(self.state.row as u32);
                    }
                    cur = table.chain[cur as usize];
                }
                if cur == NIL {
                    self.state.row += 1;
                    self.state.cursor = if self.state.row < batch.len {
                        table.first(batch, &self.keys, self.state.row)
                    } else {
                        NIL
                    };
                } else {
                    self.state.cursor = cur;
                }
            }
            let probe_done = self.state.row >= batch.len;
            if !bidx.is_empty() {
                let cols = self
                    .output
                    .iter()
                    .map(|&(from_build, i)| {
                        if from_build {
                            table.columns[i].gather(&bidx)
                        } else {
                            batch.columns[i].gather(&pidx)
                        }
                    })
                    .collect();
                if probe_done {
                    self.state.batch = None;
                }
                return Ok(Some(Batch::with_len(cols, bidx.len())));
            }
            if probe_done {
                self.state.batch = None;
            }
        }
        let rows = table.rows as u64;
        self.table = None;
        ctx.release(rows);
        Ok(None)
    }
}

struct CrossProduct<'a> {
    left: BoxOp<'a>,
    right: Option<BoxOp<'a>>,
    stored: Option<(Vec<Column>, usize)>,
    /// (from right?, position) per output column.
    output: Vec<(bool, usize)>,
    current: Option<Batch>,
    lrow: usize,
    rrow: usize,
}

impl Operator for CrossProduct<'_> {
    fn next(&mut self, ctx: &mut Ctx) -> Result<Option<Batch>> {
        if let Some(mut op) = self.right.take() {
            let mut cols: Option<Vec<Column>> = None;
            let mut rows = 0;
            while let Some(b) = op.next(ctx)? {
                match &mut cols {
                    None => cols = Some(b.columns),
                    Some(c) => {
                        for (d, s) in c.iter_mut().zip(&b.columns) {
                            d.append(s);
                        }
                    }
                }
                rows += b.len;
            }
            ctx.hold(rows as u64);
            self.stored = Some((cols.unwrap_or_default(), rows));
        }
        let Some((rcols, rlen)) = &self.stored else {
            return Ok(None);
        };
        let rlen = *rlen;
        loop {
            if self.current.is_none() {
                match self.left.next(ctx)? {
                    Some(b) if rlen > 0 => {
                        self.current = Some(b);
                        self.lrow = 0;
                        self.rrow = 0;
                    }
                    Some(_) => continue,
                    None => {
                        ctx.release(rlen as u64);
                        self.stored = None;
                        return Ok(None);
                    }
                }
            }
            let batch = self.current.as_ref().expect("set above");
            let mut li = Vec::new();
            let mut ri = Vec::new();
            while self.lrow < batch.len && li.len() < BATCH_SIZE {
                li.push(self.lrow as u32);
                ri.push(self.rrow as u32);
                self.rrow += 1;
                if self.rrow == rlen {
                    self.rrow = 0;
                    self.lrow += 1;
                }
            }
            let cols = self
                .output
                .iter()
                .map(|&(from_right, i)| {
                    if from_right {
                        rcols[i].gather(&ri)
                    } else {
                        batch.columns[i].gather(&li)
                    }
                })
                .collect();
            if self.lrow >= batch.len {
                self.current = None;
            }
            if !li.is_empty() {
                return Ok(Some(Batch::with_len(cols, li.len())));
            }
        }
    }
}

struct Project<'a> {
    idx: Vec<usize>,
    input: BoxOp<'a>,
}

impl Operator for Project<'_> {
    fn next(&mut self, ctx: &mut Ctx) -> Result<Option<Batch>> {
        Ok(self.input.next(ctx)?.map(|b| {
            let cols = self.idx.iter().map(|&i| b.columns[i].clone()).collect();
            Batch::with_len(cols, b.len)
        }))
    }
}

#[derive(Clone)]
enum Acc {
    Count(u64),
    Sum(Option<i128>),
    Min(Option<Value>),
    Max(Option<Value>),
}

impl Acc {
    fn new(f: AggFunc) -> Acc {
        match f {
            AggFunc::Count => Acc::Count(0),
            AggFunc::Sum => Acc::Sum(None),
            AggFunc::Min => Acc::Min(None),
            AggFunc::Max => Acc::Max(None),
        }
    }

    fn update(&mut self, v: Option<Value>, expr: &AggExpr) -> Result<()> {
        match (self, v) {
            (Acc::Count(n), _) => *n += 1,
            (Acc::Sum(s), Some(Value::Int(x))) => {
                let cur = s.unwrap_or(0);
                *s = Some(
                    cur.checked_add(x as i128)
                        .ok_or_else(|| Error::Overflow(expr.to_string()))?,
                );
            }
            (Acc::Sum(_), Some(other)) => {
                return Err(Error::TypeMismatch(format!("{expr} over {other}")));
            }
            (Acc::Min(m), Some(x)) => {
                if m.as_ref().is_none_or(|cur| x < *cur) {
                    *m = Some(x);
                }
            }
            (Acc::Max(m), Some(x)) => {
                if m.as_ref().is_none_or(|cur| x > *cur) {
                    *m = Some(x);
                }
            }
            (_, None) => {}
        }
        Ok(())
    }

    fn finish(self, expr: &AggExpr) -> Result<Value> {
        Ok(match self {
            Acc::Count(n) => Value::Int(n as i64),
            Acc::Sum(None) => Value::Null,
            Acc::Sum(Some(s)) => {
                Value::Int(i64::try_from(s).map_err(|_| Error::Overflow(expr.to_string()))?)
            }
            Acc::Min(v) | Acc::Max(v) => v.unwrap_or(Value::Null),
        })
    }
}

struct Aggregate<'a> {
    group_idx: Vec<usize>,
    aggs: Vec<(AggFunc, Option<usize>)>,
    exprs: Vec<AggExpr>,
    types: Vec<DataType>,
    input: Option<BoxOp<'a>>,
}

impl Operator for Aggregate<'_> {
    fn next(&mut self, ctx: &mut Ctx) -> Result<Option<Batch>> {
        let Some(mut input) = self.input.take() else {
            return Ok(None);
        };
        let fresh = || {
            self.aggs
                .iter()
                .map(|(f, _)| Acc::new(*f))
                .collect::<Vec<_>>()
        };
        let mut groups: FxHashMap<Vec<Value>, Vec<Acc>> = FxHashMap::default();
        if self.group_idx.is_empty() {
            groups.insert(Vec::new(), fresh());
        }
        while let Some(b) = input.next(ctx)? {
            for r in 0..b.len {
                let key: Vec<Value> = self
                    .group_idx
                    .iter()
                    .map(|&i| b.columns[i].value(r))
                    .collect();
                let accs = groups.entry(key).or_insert_with(fresh);
                for ((acc, (_, arg)), e) in accs.iter_mut().zip(&self.aggs).zip(&self.exprs) {
                    acc.update(arg.map(|i| b.columns[i].value(r)), e)?;
                }
            }
        }
        let n = groups.len() as u64;
        ctx.hold(n);
        let mut entries: Vec<(Vec<Value>, Vec<Acc>)> = groups.into_iter().collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let mut cols: Vec<Column> = self
            .types
            .iter()
            .map(|t| Column::with_capacity(*t, entries.len()))
            .collect();
        for (key, accs) in entries {
            let mut c = 0;
            for v in key {
                cols[c].push(v);
                c += 1;
            }
            for (acc, e) in accs.into_iter().zip(&self.exprs) {
                cols[c].push(acc.finish(e)?);
                c += 1;
            }
        }
        ctx.release(n);
        let len = n as usize;
        Ok(Some(Batch::with_len(cols, len)))
    }
}
