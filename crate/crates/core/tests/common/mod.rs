//! Reference implementations the engine is checked against.
#![allow(dead_code)]

use std::collections::BTreeMap;

use aqplab_core::cardinality::SubsetEstimator;
use aqplab_core::catalog::Catalog;
use aqplab_core::plan::{AggFunc, CmpOp, ColumnRef, Literal, Predicate};
use aqplab_core::query::{LeafSource, QueryShape, Tail};
use aqplab_core::types::{Column, Value};

fn lit(v: &Literal) -> Value {
    match v {
        Literal::Int(i) => Value::Int(*i),
        Literal::Text(s) => Value::Text(s.as_str().into()),
    }
}

/// One joined row: alias -> (table index in catalog, row index).
type Binding = BTreeMap<String, (usize, usize)>;

fn cell(catalog: &Catalog, b: &Binding, c: &ColumnRef) -> Option<Value> {
    let (t, r) = *b.get(&c.relation)?;
    let table = &catalog.tables()[t];
    let i = table.def.column_index(&c.column)?;
    Some(table.columns[i].value(r))
}

fn holds(catalog: &Catalog, b: &Binding, p: &Predicate) -> Option<bool> {
    Some(match p {
        Predicate::ColEqLiteral { column, value } => cell(catalog, b, column)? == lit(value),
        Predicate::ColCmpLiteral { column, op, value } => {
            let (x, y) = (cell(catalog, b, column)?, lit(value));
            match op {
                CmpOp::Lt => x < y,
                CmpOp::Le => x <= y,
                CmpOp::Gt => x > y,
                CmpOp::Ge => x >= y,
                CmpOp::Ne => x != y,
            }
        }
        Predicate::ColPrefix { column, prefix } => match cell(catalog, b, column)? {
            Value::Text(s) => s.starts_with(prefix.as_str()),
            _ => false,
        },
        Predicate::ColEqCol { left, right } => cell(catalog, b, left)? == cell(catalog, b, right)?,
    })
}

/// Evaluates a query by nested loops over base tables, checking every
/// predicate as soon as its columns are bound. Returns rows sorted.
pub fn nested_loop(shape: &QueryShape, catalog: &Catalog) -> Vec<Vec<Value>> {
    let mut preds: Vec<Predicate> = shape
        .leaves
        .iter()
        .flat_map(|l| l.filters.clone())
        .collect();
    preds.extend(shape.joins.iter().map(|j| Predicate::ColEqCol {
        left: j.left.clone(),
        right: j.right.clone(),
    }));
    let mut rows: Vec<Binding> = vec![Binding::new()];
    for leaf in &shape.leaves {
        let LeafSource::Scan { table, alias } = &leaf.source else {
            panic!("oracle only reads base tables");
        };
        let t = catalog
            .tables()
            .iter()
            .position(|x| &x.def.name == table)
            .expect("table");
        let n = catalog.tables()[t].row_count;
        let mut next = Vec::new();
        for b in &rows {
            for r in 0..n {
                let mut nb = b.clone();
                nb.insert(alias.clone(), (t, r));
                // Predicates whose columns are not all bound yet evaluate to None.
                if preds.iter().all(|p| holds(catalog, &nb, p) != Some(false)) {
                    next.push(nb);
                }
            }
        }
        rows = next;
    }
    let mut out: Vec<Vec<Value>> = match &shape.tail {
        Tail::None => rows
            .iter()
            .map(|b| {
                shape
                    .output
                    .iter()
                    .map(|(c, _)| cell(catalog, b, c).unwrap())
                    .collect()
            })
            .collect(),
        Tail::Project(cols) => rows
            .iter()
            .map(|b| cols.iter().map(|c| cell(catalog, b, c).unwrap()).collect())
            .collect(),
        Tail::Aggregate {
            group_by,
            aggregates,
        } => {
            let mut groups: BTreeMap<Vec<Value>, Vec<&Binding>> = BTreeMap::new();
            for b in &rows {
                groups
                    .entry(
                        group_by
                            .iter()
                            .map(|c| cell(catalog, b, c).unwrap())
                            .collect(),
                    )
                    .or_default()
                    .push(b);
            }
            if group_by.is_empty() && groups.is_empty() {
                groups.insert(Vec::new(), Vec::new());
            }
            groups
                .into_iter()
                .map(|(mut key, members)| {
                    for a in aggregates {
                        let vals: Vec<Value> = match &a.arg {
                            Some(c) => members
                                .iter()
                                .map(|b| cell(catalog, b, c).unwrap())
                                .collect(),
                            None => members.iter().map(|_| Value::Int(1)).collect(),
                        };
                        key.push(match a.func {
                            AggFunc::Count => Value::Int(vals.len() as i64),
                            AggFunc::Sum if vals.is_empty() => Value::Null,
                            AggFunc::Sum => Value::Int(
                                vals.iter()
                                    .map(|v| match v {
                                        Value::Int(i) => *i,
                                        _ => panic!("sum over text"),
                                    })
                                    .sum(),
                            ),
                            AggFunc::Min => vals.iter().min().cloned().unwrap_or(Value::Null),
                            AggFunc::Max => vals.iter().max().cloned().unwrap_or(Value::Null),
                        });
                    }
                    key
                })
                .collect()
        }
    };
    out.sort();
    out
}

/// Every binary join tree over `mask`, with its Cout. Joins of unlinked sides
/// are skipped when `connected_only` is set.
fn trees(est: &SubsetEstimator, mask: u64, connected_only: bool) -> Vec<f64> {
    if mask.count_ones() == 1 {
        return vec![0.0];
    }
    let low = mask & mask.wrapping_neg();
    let mut out = Vec::new();
    let rest = mask & !low;
    // Enumerate left sides that contain the lowest bit, so each split is seen once.
    let mut sub = rest;
    loop {
        let left = sub | low;
        let right = mask & !left;
        if right != 0 && (!connected_only || est.linked(left, right)) {
            let here = est.rows(mask);
            for a in trees(est, left, connected_only) {
                for b in trees(est, right, connected_only) {
                    out.push(a + b + here);
                }
            }
        }
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & rest;
    }
    out
}

/// Minimum Cout over every join tree, allowing cross products only when the
/// query graph is disconnected.
pub fn exhaustive_min_cout(est: &SubsetEstimator) -> f64 {
    let all = (1u64 << est.len()) - 1;
    let connected = est.connected(all);
    trees(est, all, connected)
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

/// Distinct count by sorting and removing duplicates.
pub fn sort_dedup_distinct(col: &Column) -> u64 {
    let mut v: Vec<Value> = (0..col.len()).map(|i| col.value(i)).collect();
    v.sort();
    v.dedup();
    v.len() as u64
}

/// Four tables `r0..r3`; `r{i}.fk` references `r{i-1}.id`. Values are drawn
/// from small domains so joins and filters hit often.
pub fn random_db(seed: u64, sizes: [usize; 4]) -> Catalog {
    use aqplab_core::catalog::TableDef;
    use aqplab_core::types::DataType;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let words = ["aa", "ab", "ba", "bb", "c"];
    let mut cat = Catalog::new();
    for (i, &n) in sizes.iter().enumerate() {
        let name = format!("r{i}");
        let mut def = TableDef::new(
            &name,
            &[
                ("id", DataType::Int64),
                ("fk", DataType::Int64),
                ("x", DataType::Int64),
                ("s", DataType::Text),
            ],
        )
        .with_primary_key("id");
        let fk: Vec<i64> = if i == 0 {
            (0..n).map(|_| rng.gen_range(0..10)).collect()
        } else {
            def = def.with_foreign_key("fk", &format!("r{}", i - 1), "id");
            (0..n)
                .map(|_| rng.gen_range(0..sizes[i - 1] as i64))
                .collect()
        };
        let cols = vec![
            Column::Int((0..n as i64).collect()),
            Column::Int(fk),
            Column::Int((0..n).map(|_| rng.gen_range(0..10)).collect()),
            Column::Text(
                (0..n)
                    .map(|_| words[rng.gen_range(0..words.len() as u64) as usize].into())
                    .collect(),
            ),
        ];
        let id = cat.create_table(def, cols).unwrap();
        cat.analyze(id).unwrap();
    }
    cat
}

/// A query over a prefix `r0..r{k-1}` of the chain with random filters and tail.
pub fn random_query(seed: u64) -> String {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(2..=4u32) as usize;
    let from: Vec<String> = (0..k).map(|i| format!("r{i}")).collect();
    let mut wh: Vec<String> = (1..k).map(|i| format!("r{i}.fk = r{}.id", i - 1)).collect();
    for t in &from {
        match rng.gen_range(0..6u32) {
            0 => wh.push(format!("{t}.x < {}", rng.gen_range(1..10u32))),
            1 => wh.push(format!("{t}.x = {}", rng.gen_range(0..10u32))),
            2 => wh.push(format!("{t}.s LIKE 'a%'")),
            3 => wh.push(format!("{t}.x != {}", rng.gen_range(0..10u32))),
            _ => {}
        }
    }
    let last = &from[k - 1];
    let select = match rng.gen_range(0..3u32) {
        0 => "COUNT(*)".to_string(),
        1 => format!("r0.x, {last}.s"),
        _ => format!("r0.x, SUM({last}.x), MIN({last}.s), COUNT(*)"),
    };
    let mut sql = format!(
        "SELECT {select} FROM {} WHERE {}",
        from.join(", "),
        wh.join(" AND ")
    );
    if select.contains("SUM") {
        sql.push_str(" GROUP BY r0.x");
    }
    sql
}
