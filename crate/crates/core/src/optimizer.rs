//! Join-order enumeration (Cout) and physical planning.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt::{self, Write};

use serde::{Deserialize, Serialize};

use crate::cardinality::{source_estimate, Estimate, EstimateSource, SubsetEstimator};
use crate::catalog::{Catalog, TableId};
use crate::error::{Error, Result};
use crate::plan::{join_display, AggExpr, ColumnRef, JoinPredicate, LogicalPlan, Predicate};
use crate::query::{leaf_columns, LeafSource, QueryShape, Tail};
use crate::types::DataType;

/// Largest number of leaves planned by exhaustive dynamic programming.
pub const DP_LIMIT: usize = 10;

/// A join order over leaf labels (aliases, or `#id` for intermediates).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum JoinTree {
    Leaf(String),
    Join(Box<JoinTree>, Box<JoinTree>),
}

impl JoinTree {
    pub fn join(left: JoinTree, right: JoinTree) -> JoinTree {
        JoinTree::Join(Box::new(left), Box::new(right))
    }

    pub fn leaves(&self) -> Vec<&str> {
        match self {
            JoinTree::Leaf(l) => vec![l.as_str()],
            JoinTree::Join(a, b) => {
                let mut v = a.leaves();
                v.extend(b.leaves());
                v
            }
        }
    }

    /// Rendering with leaf labels replaced by their tie keys.
    pub fn sort_key(&self) -> String {
        match self {
            JoinTree::Leaf(l) => tie_key(l),
            JoinTree::Join(a, b) => format!("({} {})", a.sort_key(), b.sort_key()),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            JoinTree::Leaf(_) => 1,
            JoinTree::Join(a, b) => a.leaf_count() + b.leaf_count(),
        }
    }

    pub fn is_left_deep(&self) -> bool {
        match self {
            JoinTree::Leaf(_) => true,
            JoinTree::Join(a, b) => matches!(**b, JoinTree::Leaf(_)) && a.is_left_deep(),
        }
    }

    /// Replaces every leaf named `label` with `subtree`.
    pub fn substitute(&self, label: &str, subtree: &JoinTree) -> JoinTree {
        match self {
            JoinTree::Leaf(l) if l == label => subtree.clone(),
            JoinTree::Leaf(_) => self.clone(),
            JoinTree::Join(a, b) => {
                JoinTree::join(a.substitute(label, subtree), b.substitute(label, subtree))
            }
        }
    }
}

impl fmt::Display for JoinTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JoinTree::Leaf(l) => f.write_str(l),
            JoinTree::Join(a, b) => write!(f, "({a} ⋈ {b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostedOrder {
    pub tree: JoinTree,
    /// Sum of estimated join output sizes (Cout). Zero for a single leaf.
    pub cost: f64,
}

/// A join tree over leaf indices, used during enumeration.
#[derive(Debug, Clone)]
enum IdxTree {
    Leaf(usize),
    Join(Box<IdxTree>, Box<IdxTree>),
}

impl IdxTree {
    fn to_tree(&self, labels: &[String]) -> JoinTree {
        match self {
            IdxTree::Leaf(i) => JoinTree::Leaf(labels[*i].clone()),
            IdxTree::Join(a, b) => JoinTree::join(a.to_tree(labels), b.to_tree(labels)),
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    tree: IdxTree,
    cost: f64,
    leaves: u32,
    display: String,
}

impl Entry {
    fn leaf(i: usize, labels: &[String]) -> Entry {
        Entry {
            tree: IdxTree::Leaf(i),
            cost: 0.0,
            leaves: 1,
            display: tie_key(&labels[i]),
        }
    }

    /// Joins two entries; the larger subtree goes left, then the lexicographically
    /// smaller rendering.
    fn combine(a: &Entry, b: &Entry, rows: f64) -> Entry {
        let (l, r) = if (b.leaves, &a.display) > (a.leaves, &b.display) {
            (b, a)
        } else {
            (a, b)
        };
        Entry {
            tree: IdxTree::Join(Box::new(l.tree.clone()), Box::new(r.tree.clone())),
            cost: l.cost + r.cost + rows,
            leaves: l.leaves + r.leaves,
            display: format!("({} ⋈ {})", l.display, r.display),
        }
    }

    fn better_than(&self, other: &Entry) -> bool {
        match cmp_cost(self.cost, other.cost) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => self.display < other.display,
        }
    }
}

/// Cost comparison that treats values within a relative 1e-9 as equal, so that
/// ties are broken by name rather than by floating-point noise.
fn cmp_cost(a: f64, b: f64) -> Ordering {
    let scale = a.abs().max(b.abs()).max(1.0);
    if (a - b).abs() <= scale * 1e-9 {
        Ordering::Equal
    } else {
        a.partial_cmp(&b).unwrap_or(Ordering::Equal)
    }
}

/// Cheapest join order under the estimator's subset sizes.
pub fn best_order(est: &SubsetEstimator, labels: &[String]) -> CostedOrder {
    best_order_by(est, labels, &|m| est.rows(m))
}

/// Cheapest join order where `rows(mask)` gives the size of each joined subset.
/// Connectivity comes from `est`.
pub fn best_order_by(
    est: &SubsetEstimator,
    labels: &[String],
    rows: &dyn Fn(u64) -> f64,
) -> CostedOrder {
    let n = labels.len();
    assert!(n > 0 && n <= 64, "between 1 and 64 leaves");
    let components = components(est, n);
    let mut parts: Vec<(u64, Entry)> = components
        .into_iter()
        .map(|c| {
            let e = if c.count_ones() as usize <= DP_LIMIT {
                dp(est, labels, rows, c)
            } else {
                greedy(est, labels, rows, c)
            };
            (c, e)
        })
        .collect();
    // Disconnected pieces: cross products, smallest first.
    parts.sort_by(|(ma, a), (mb, b)| {
        cmp_cost(rows(*ma), rows(*mb)).then_with(|| a.display.cmp(&b.display))
    });
    let mut iter = parts.into_iter();
    let (mut mask, mut acc) = iter.next().expect("at least one component");
    for (m, e) in iter {
        mask |= m;
        let r = rows(mask);
        let mut joined = Entry::combine(&acc, &e, r);
        // Keep the accumulated side on the left for a left-deep spine.
        joined.tree = IdxTree::Join(Box::new(acc.tree.clone()), Box::new(e.tree.clone()));
        joined.display = format!("({} ⋈ {})", acc.display, e.display);
        acc = joined;
    }
    CostedOrder {
        tree: acc.tree.to_tree(labels),
        cost: acc.cost,
    }
}

fn components(est: &SubsetEstimator, n: usize) -> Vec<u64> {
    let mut left: u64 = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let mut out = Vec::new();
    while left != 0 {
        let mut comp = left & left.wrapping_neg();
        loop {
            let next = (comp | est.neighbors(comp)) & left;
            if next == comp {
                break;
            }
            comp = next;
        }
        out.push(comp);
        left &= !comp;
    }
    out
}

fn dp(est: &SubsetEstimator, labels: &[String], rows: &dyn Fn(u64) -> f64, comp: u64) -> Entry {
    let idx: Vec<usize> = (0..labels.len()).filter(|i| comp & (1 << i) != 0).collect();
    let k = idx.len();
    // Local masks over the component's members.
    let expand = |local: usize| -> u64 {
        let mut m = 0u64;
        for (j, &i) in idx.iter().enumerate() {
            if local & (1 << j) != 0 {
                m |= 1 << i;
            }
        }
        m
    };
    let mut best: Vec<Option<Entry>> = vec![None; 1 << k];
    for (j, &i) in idx.iter().enumerate() {
        best[1 << j] = Some(Entry::leaf(i, labels));
    }
    for s in 1usize..(1 << k) {
        if s.count_ones() < 2 || !est.connected(expand(s)) {
            continue;
        }
        let low = s & s.wrapping_neg();
        let r = rows(expand(s));
        let mut winner: Option<Entry> = None;
        // Submasks containing the lowest bit, so each split is visited once.
        let rest = s & !low;
        let mut sub = rest;
        loop {
            let a = sub | low;
            let b = s & !a;
            if b != 0 {
                if let (Some(ea), Some(eb)) = (&best[a], &best[b]) {
                    if est.linked(expand(a), expand(b)) {
                        let cand = Entry::combine(ea, eb, r);
                        if winner.as_ref().is_none_or(|w| cand.better_than(w)) {
                            winner = Some(cand);
                        }
                    }
                }
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
        best[s] = winner;
    }
    best[(1 << k) - 1].take().expect("component is connected")
}

/// Repeatedly joins the connected pair with the smallest estimated result.
fn greedy(est: &SubsetEstimator, labels: &[String], rows: &dyn Fn(u64) -> f64, comp: u64) -> Entry {
    let mut parts: Vec<(u64, Entry)> = (0..labels.len())
        .filter(|i| comp & (1 << i) != 0)
        .map(|i| (1u64 << i, Entry::leaf(i, labels)))
        .collect();
    while parts.len() > 1 {
        let mut pick: Option<(usize, usize, f64, Entry)> = None;
        for i in 0..parts.len() {
            for j in i + 1..parts.len() {
                if !est.linked(parts[i].0, parts[j].0) {
                    continue;
                }
                let r = rows(parts[i].0 | parts[j].0);
                let cand = Entry::combine(&parts[i].1, &parts[j].1, r);
                let take = match &pick {
                    None => true,
                    Some((_, _, pr, pe)) => match cmp_cost(r, *pr) {
                        Ordering::Less => true,
                        Ordering::Greater => false,
                        Ordering::Equal => cand.display < pe.display,
                    },
                };
                if take {
                    pick = Some((i, j, r, cand));
                }
            }
        }
        let (i, j, _, e) = pick.expect("component is connected");
        let mask = parts[i].0 | parts[j].0;
        parts.remove(j);
        parts[i] = (mask, e);
    }
    parts.pop().expect("non-empty").1
}

/// Cout of a given tree under the estimator's subset sizes.
pub fn cout(tree: &JoinTree, est: &SubsetEstimator, labels: &[String]) -> Result<f64> {
    fn walk(t: &JoinTree, est: &SubsetEstimator, labels: &[String]) -> Result<(u64, f64)> {
        match t {
            JoinTree::Leaf(l) => {
                let i = labels
                    .iter()
                    .position(|x| x == l)
                    .ok_or_else(|| Error::OrderMismatch(format!("unknown leaf `{l}`")))?;
                Ok((1 << i, 0.0))
            }
            JoinTree::Join(a, b) => {
                let (ma, ca) = walk(a, est, labels)?;
                let (mb, cb) = walk(b, est, labels)?;
                let m = ma | mb;
                Ok((m, ca + cb + est.rows(m)))
            }
        }
    }
    Ok(walk(tree, est, labels)?.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysNode {
    pub op: PhysicalOp,
    pub estimate: Estimate,
    /// Output columns in order.
    pub schema: Vec<(ColumnRef, DataType)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum PhysicalOp {
    TableScan {
        table: String,
        alias: String,
        /// Stored column positions, one per output column.
        projection: Vec<usize>,
    },
    MaterializedScan {
        id: TableId,
        relations: Vec<String>,
        projection: Vec<usize>,
    },
    Filter {
        predicates: Vec<Predicate>,
        input: Box<PhysNode>,
    },
    /// `left`/`right` follow the join tree; `build_left` says which side is hashed.
    HashJoin {
        on: Vec<JoinPredicate>,
        left: Box<PhysNode>,
        right: Box<PhysNode>,
        build_left: bool,
    },
    CrossProduct {
        left: Box<PhysNode>,
        right: Box<PhysNode>,
    },
    /// Reorders/prunes the input to `schema`.
    Project { input: Box<PhysNode> },
    Aggregate {
        group_by: Vec<ColumnRef>,
        aggregates: Vec<AggExpr>,
        input: Box<PhysNode>,
    },
}

impl PhysNode {
    pub fn kind(&self) -> &'static str {
        match &self.op {
            PhysicalOp::TableScan { .. } => "TableScan",
            PhysicalOp::MaterializedScan { .. } => "MaterializedScan",
            PhysicalOp::Filter { .. } => "Filter",
            PhysicalOp::HashJoin { .. } => "HashJoin",
            PhysicalOp::CrossProduct { .. } => "CrossProduct",
            PhysicalOp::Project { .. } => "Project",
            PhysicalOp::Aggregate { .. } => "Aggregate",
        }
    }

    pub fn children(&self) -> Vec<&PhysNode> {
        match &self.op {
            PhysicalOp::TableScan { .. } | PhysicalOp::MaterializedScan { .. } => vec![],
            PhysicalOp::Filter { input, .. }
            | PhysicalOp::Project { input }
            | PhysicalOp::Aggregate { input, .. } => vec![input],
            PhysicalOp::HashJoin { left, right, .. } | PhysicalOp::CrossProduct { left, right } => {
                vec![left, right]
            }
        }
    }

    pub fn children_mut(&mut self) -> Vec<&mut PhysNode> {
        match &mut self.op {
            PhysicalOp::TableScan { .. } | PhysicalOp::MaterializedScan { .. } => vec![],
            PhysicalOp::Filter { input, .. }
            | PhysicalOp::Project { input }
            | PhysicalOp::Aggregate { input, .. } => vec![input],
            PhysicalOp::HashJoin { left, right, .. } | PhysicalOp::CrossProduct { left, right } => {
                vec![left, right]
            }
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self
            .children()
            .iter()
            .map(|c| c.node_count())
            .sum::<usize>()
    }

    pub fn is_join(&self) -> bool {
        matches!(
            self.op,
            PhysicalOp::HashJoin { .. } | PhysicalOp::CrossProduct { .. }
        )
    }

    pub fn is_scan(&self) -> bool {
        matches!(
            self.op,
            PhysicalOp::TableScan { .. } | PhysicalOp::MaterializedScan { .. }
        )
    }

    /// Scan, or Filter directly over a scan.
    pub fn is_filtered_scan(&self) -> bool {
        match &self.op {
            PhysicalOp::Filter { input, .. } => input.is_scan(),
            _ => self.is_scan(),
        }
    }

    /// Label of a (filtered) scan: the alias, or `#id`.
    pub fn leaf_label(&self) -> Option<String> {
        match &self.op {
            PhysicalOp::TableScan { alias, .. } => Some(alias.clone()),
            PhysicalOp::MaterializedScan { id, .. } => Some(format!("#{id}")),
            PhysicalOp::Filter { input, .. } => input.leaf_label(),
            _ => None,
        }
    }

    /// Join tree of the join region under this node; non-join operators above the
    /// leaves are looked through.
    pub fn join_tree(&self) -> Option<JoinTree> {
        if let Some(l) = self.leaf_label() {
            return Some(JoinTree::Leaf(l));
        }
        match &self.op {
            PhysicalOp::HashJoin { left, right, .. } | PhysicalOp::CrossProduct { left, right } => {
                Some(JoinTree::join(left.join_tree()?, right.join_tree()?))
            }
            PhysicalOp::Project { input } | PhysicalOp::Aggregate { input, .. } => {
                input.join_tree()
            }
            _ => None,
        }
    }

    /// Relation aliases produced below this node.
    pub fn relations(&self) -> Vec<String> {
        match &self.op {
            PhysicalOp::TableScan { alias, .. } => vec![alias.clone()],
            PhysicalOp::MaterializedScan { relations, .. } => relations.clone(),
            _ => self.children().iter().flat_map(|c| c.relations()).collect(),
        }
    }

    /// Visits nodes in pre-order.
    pub fn preorder(&self) -> Vec<&PhysNode> {
        let mut out = Vec::with_capacity(self.node_count());
        fn go<'a>(n: &'a PhysNode, out: &mut Vec<&'a PhysNode>) {
            out.push(n);
            for c in n.children() {
                go(c, out);
            }
        }
        go(self, &mut out);
        out
    }

    /// One node per line, indented by depth. `actual` holds per-node output rows in
    /// pre-order, when the plan has been executed.
    pub fn explain(&self, actual: Option<&[u64]>) -> String {
        let mut out = String::new();
        let mut i = 0;
        explain_node(self, 0, actual, &mut i, &mut out);
        out
    }
}

fn explain_node(
    n: &PhysNode,
    depth: usize,
    actual: Option<&[u64]>,
    i: &mut usize,
    out: &mut String,
) {
    let detail = match &n.op {
        PhysicalOp::TableScan { table, alias, .. } if table == alias => {
            format!("TableScan {table}")
        }
        PhysicalOp::TableScan { table, alias, .. } => format!("TableScan {table} AS {alias}"),
        PhysicalOp::MaterializedScan { id, relations, .. } => {
            format!("MaterializedScan #{id} [{}]", relations.join(", "))
        }
        PhysicalOp::Filter { predicates, .. } => {
            format!("Filter {}", join_display(predicates, " AND "))
        }
        PhysicalOp::HashJoin { on, build_left, .. } => format!(
            "HashJoin {} build={}",
            join_display(on, " AND "),
            if *build_left { "left" } else { "right" }
        ),
        PhysicalOp::CrossProduct { .. } => "CrossProduct".to_string(),
        PhysicalOp::Project { .. } => {
            let cols: Vec<String> = n.schema.iter().map(|(c, _)| c.to_string()).collect();
            format!("Project {}", cols.join(", "))
        }
        PhysicalOp::Aggregate {
            group_by,
            aggregates,
            ..
        } => {
            let mut s = format!("Aggregate {}", join_display(aggregates, ", "));
            if !group_by.is_empty() {
                let _ = write!(s, " GROUP BY {}", join_display(group_by, ", "));
            }
            s
        }
    };
    let _ = write!(
        out,
        "{}{detail} est={}",
        "  ".repeat(depth),
        fmt_rows(n.estimate.rows)
    );
    if n.estimate.source != EstimateSource::Stats {
        let _ = write!(out, " ({:?})", n.estimate.source);
    }
    if let Some(a) = actual {
        let _ = write!(out, " act={}", a[*i]);
    }
    out.push('\n');
    *i += 1;
    for c in n.children() {
        explain_node(c, depth + 1, actual, i, out);
    }
}

/// Estimates rendered as integers once they are large enough to make fractions noise.
pub fn fmt_rows(rows: f64) -> String {
    if rows >= 100.0 || rows == rows.round() {
        format!("{:.0}", rows)
    } else {
        format!("{rows:.2}")
    }
}

/// A physical plan for a whole query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalPlan {
    pub root: PhysNode,
}

impl PhysicalPlan {
    pub fn join_tree(&self) -> Option<JoinTree> {
        self.root.join_tree()
    }

    pub fn explain(&self, actual: Option<&[u64]>) -> String {
        self.root.explain(actual)
    }
}

/// Sort key for a leaf label. Intermediate ids are zero-padded so their order
/// follows creation order whatever the ids' digit counts.
pub fn tie_key(label: &str) -> String {
    match label.strip_prefix('#').and_then(|n| n.parse::<u32>().ok()) {
        Some(n) => format!("#{n:010}"),
        None => label.to_string(),
    }
}

pub fn leaf_labels(shape: &QueryShape) -> Vec<String> {
    shape.leaves.iter().map(|l| l.label()).collect()
}

/// Picks a join order for the whole query and plans it.
pub fn optimize(plan: &LogicalPlan, catalog: &Catalog) -> Result<PhysicalPlan> {
    let shape = QueryShape::extract(plan, catalog)?;
    optimize_shape(&shape, catalog)
}

pub fn optimize_shape(shape: &QueryShape, catalog: &Catalog) -> Result<PhysicalPlan> {
    let est = SubsetEstimator::new(shape, catalog)?;
    let order = best_order(&est, &leaf_labels(shape));
    let region = plan_region(shape, catalog, &est, &order.tree, &shape.result_columns())?;
    Ok(PhysicalPlan {
        root: finish(shape, region),
    })
}

/// Plans the query with exactly the given join tree.
pub fn optimize_with_fixed_order(
    plan: &LogicalPlan,
    order: &JoinTree,
    catalog: &Catalog,
) -> Result<PhysicalPlan> {
    let shape = QueryShape::extract(plan, catalog)?;
    let est = SubsetEstimator::new(&shape, catalog)?;
    let region = plan_region(&shape, catalog, &est, order, &shape.result_columns())?;
    Ok(PhysicalPlan {
        root: finish(&shape, region),
    })
}

/// Puts the query's tail on top of a planned join region. Queries without a tail
/// get a projection to the canonical output column order.
pub fn finish(shape: &QueryShape, region: PhysNode) -> PhysNode {
    let child = region.estimate;
    let lookup = |c: &ColumnRef| {
        region
            .schema
            .iter()
            .find(|(x, _)| x == c)
            .map(|(_, t)| *t)
            .unwrap_or(DataType::Int64)
    };
    let fallback = Estimate {
        rows: child.rows,
        source: EstimateSource::Fallback,
    };
    match &shape.tail {
        Tail::None | Tail::Project(_) => {
            let cols: Vec<ColumnRef> = match &shape.tail {
                Tail::Project(cols) => cols.clone(),
                _ => shape.output.iter().map(|(c, _)| c.clone()).collect(),
            };
            let schema = cols.iter().map(|c| (c.clone(), lookup(c))).collect();
            PhysNode {
                op: PhysicalOp::Project {
                    input: Box::new(region),
                },
                estimate: fallback,
                schema,
            }
        }
        Tail::Aggregate {
            group_by,
            aggregates,
        } => {
            let mut schema: Vec<(ColumnRef, DataType)> =
                group_by.iter().map(|c| (c.clone(), lookup(c))).collect();
            for a in aggregates {
                let ty = match (a.func, &a.arg) {
                    (crate::plan::AggFunc::Min | crate::plan::AggFunc::Max, Some(c)) => lookup(c),
                    _ => DataType::Int64,
                };
                schema.push((aggregate_column(a), ty));
            }
            let estimate = if group_by.is_empty() {
                Estimate::stats(1.0)
            } else {
                fallback
            };
            PhysNode {
                op: PhysicalOp::Aggregate {
                    group_by: group_by.clone(),
                    aggregates: aggregates.clone(),
                    input: Box::new(region),
                },
                estimate,
                schema,
            }
        }
    }
}

/// Output column name of an aggregate expression.
pub fn aggregate_column(a: &AggExpr) -> ColumnRef {
    ColumnRef {
        relation: String::new(),
        column: a.to_string(),
    }
}

/// Plans the join region of `shape` along `tree`. Every operator keeps only the
/// columns in `outputs` plus join keys still needed above it.
pub fn plan_region(
    shape: &QueryShape,
    catalog: &Catalog,
    est: &SubsetEstimator,
    tree: &JoinTree,
    outputs: &BTreeSet<ColumnRef>,
) -> Result<PhysNode> {
    let labels = leaf_labels(shape);
    let mut seen: Vec<&str> = tree.leaves();
    seen.sort_unstable();
    let mut want: Vec<&str> = labels.iter().map(String::as_str).collect();
    want.sort_unstable();
    if seen != want {
        return Err(Error::OrderMismatch(format!(
            "order covers [{}] but the plan has [{}]",
            seen.join(", "),
            want.join(", ")
        )));
    }
    let edges = shape.edges();
    let ctx = RegionCtx {
        shape,
        catalog,
        est,
        labels: &labels,
        edges: &edges,
        outputs,
    };
    Ok(ctx.build(tree)?.1)
}

struct RegionCtx<'a> {
    shape: &'a QueryShape,
    catalog: &'a Catalog,
    est: &'a SubsetEstimator,
    labels: &'a [String],
    edges: &'a [(usize, usize, JoinPredicate)],
    outputs: &'a BTreeSet<ColumnRef>,
}

impl RegionCtx<'_> {
    /// Columns a subtree covering `mask` must still produce.
    fn needed(&self, mask: u64) -> BTreeSet<ColumnRef> {
        let mut set = self.outputs.clone();
        for (a, b, j) in self.edges {
            let (ia, ib) = (mask & (1 << a) != 0, mask & (1 << b) != 0);
            if ia != ib {
                set.insert(j.left.clone());
                set.insert(j.right.clone());
            }
        }
        set
    }

    fn build(&self, tree: &JoinTree) -> Result<(u64, PhysNode)> {
        match tree {
            JoinTree::Leaf(label) => {
                let i = self
                    .labels
                    .iter()
                    .position(|l| l == label)
                    .expect("validated");
                Ok((1 << i, self.leaf(i)?))
            }
            JoinTree::Join(a, b) => {
                let (ma, left) = self.build(a)?;
                let (mb, right) = self.build(b)?;
                let mask = ma | mb;
                let on: Vec<JoinPredicate> = self
                    .edges
                    .iter()
                    .filter(|(x, y, _)| {
                        let (x, y) = (1u64 << x, 1u64 << y);
                        (ma & x != 0 && mb & y != 0) || (ma & y != 0 && mb & x != 0)
                    })
                    .map(|(_, _, j)| j.clone())
                    .collect();
                let keep = self.needed(mask);
                let schema = left
                    .schema
                    .iter()
                    .chain(&right.schema)
                    .filter(|(c, _)| keep.contains(c))
                    .cloned()
                    .collect();
                let estimate = self.est.estimate(mask);
                let op = if on.is_empty() {
                    PhysicalOp::CrossProduct {
                        left: Box::new(left),
                        right: Box::new(right),
                    }
                } else {
                    let build_left = left.estimate.rows < right.estimate.rows;
                    PhysicalOp::HashJoin {
                        on,
                        left: Box::new(left),
                        right: Box::new(right),
                        build_left,
                    }
                };
                Ok((
                    mask,
                    PhysNode {
                        op,
                        estimate,
                        schema,
                    },
                ))
            }
        }
    }

    fn leaf(&self, i: usize) -> Result<PhysNode> {
        let leaf = &self.shape.leaves[i];
        let mut keep = self.needed(1 << i);
        for f in &leaf.filters {
            keep.extend(f.columns().into_iter().cloned());
        }
        let all = leaf_columns(leaf, self.catalog)?;
        let mut projection = Vec::new();
        let mut schema = Vec::new();
        for (pos, (c, t)) in all.into_iter().enumerate() {
            if keep.contains(&c) {
                projection.push(pos);
                schema.push((c, t));
            }
        }
        let raw = source_estimate(&leaf.source, self.catalog)?.estimate();
        let op = match &leaf.source {
            LeafSource::Scan { table, alias } => PhysicalOp::TableScan {
                table: table.clone(),
                alias: alias.clone(),
                projection,
            },
            LeafSource::Materialized { id, relations } => PhysicalOp::MaterializedScan {
                id: *id,
                relations: relations.clone(),
                projection,
            },
        };
        let scan = PhysNode {
            op,
            estimate: raw,
            schema: schema.clone(),
        };
        if leaf.filters.is_empty() {
            return Ok(scan);
        }
        Ok(PhysNode {
            op: PhysicalOp::Filter {
                predicates: leaf.filters.clone(),
                input: Box::new(scan),
            },
            estimate: self.est.leaves[i].estimate(),
            schema,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::TableDef;
    use crate::plan::{Literal, PlanNode};
    use crate::sql::parse_query;
    use crate::types::Column;

    fn table(c: &mut Catalog, name: &str, rows: i64, fk_mod: i64) {
        let def = TableDef::new(name, &[("id", DataType::Int64), ("fk", DataType::Int64)])
            .with_primary_key("id");
        let id = c
            .create_table(
                def,
                vec![
                    Column::Int((0..rows).collect()),
                    Column::Int((0..rows).map(|i| i % fk_mod).collect()),
                ],
            )
            .unwrap();
        c.analyze(id).unwrap();
    }

    fn chain() -> Catalog {
        let mut c = Catalog::new();
        table(&mut c, "r1", 1000, 1000);
        table(&mut c, "r2", 100, 10);
        table(&mut c, "r3", 5, 5);
        c
    }

    /// Every ordered binary tree over `leaves` with its Cout, cross products included.
    fn all_trees(leaves: u64, rows: &dyn Fn(u64) -> f64) -> Vec<(u64, f64, String)> {
        if leaves.count_ones() == 1 {
            return vec![(leaves, 0.0, format!("{}", leaves.trailing_zeros()))];
        }
        let mut out = Vec::new();
        let mut sub = (leaves - 1) & leaves;
        while sub != 0 {
            let other = leaves & !sub;
            for (_, ca, sa) in all_trees(sub, rows) {
                for (_, cb, sb) in all_trees(other, rows) {
                    out.push((leaves, ca + cb + rows(leaves), format!("({sa} {sb})")));
                }
            }
            sub = (sub - 1) & leaves;
        }
        out
    }

    #[test]
    fn chain_prefers_smallest_join_first() {
        let c = chain();
        let q = "SELECT * FROM r1, r2, r3 WHERE r1.fk = r2.id AND r2.fk = r3.id";
        let plan = parse_query(q, &c).unwrap();
        let shape = QueryShape::extract(&plan, &c).unwrap();
        let est = SubsetEstimator::new(&shape, &c).unwrap();
        let labels = leaf_labels(&shape);
        let best = best_order(&est, &labels);
        assert_eq!(best.tree.to_string(), "((r2 ⋈ r3) ⋈ r1)");
        let trees = all_trees(0b111, &|m| est.rows(m));
        assert_eq!(trees.len(), 12);
        let min = trees.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
        assert!((best.cost - min).abs() < 1e-9);
        assert_eq!(cout(&best.tree, &est, &labels).unwrap(), best.cost);
    }

    #[test]
    fn single_relation_costs_nothing() {
        let c = chain();
        let plan = parse_query("SELECT * FROM r1 WHERE r1.fk = 3", &c).unwrap();
        let phys = optimize(&plan, &c).unwrap();
        assert_eq!(phys.root.kind(), "Project");
        assert_eq!(phys.root.children()[0].kind(), "Filter");
        let shape = QueryShape::extract(&plan, &c).unwrap();
        let est = SubsetEstimator::new(&shape, &c).unwrap();
        assert_eq!(best_order(&est, &leaf_labels(&shape)).cost, 0.0);
    }

    #[test]
    fn disconnected_graph_uses_cross_product() {
        let c = chain();
        let plan = parse_query("SELECT * FROM r1, r3", &c).unwrap();
        let phys = optimize(&plan, &c).unwrap();
        let join = phys.root.children()[0];
        assert_eq!(join.kind(), "CrossProduct");
        assert_eq!(phys.join_tree().unwrap().to_string(), "(r3 ⋈ r1)");
    }

    #[test]
    fn connected_graph_has_no_cross_product() {
        let c = chain();
        let plan = parse_query(
            "SELECT * FROM r1, r3, r2 WHERE r1.fk = r2.id AND r2.fk = r3.id",
            &c,
        )
        .unwrap();
        let phys = optimize(&plan, &c).unwrap();
        assert!(phys
            .root
            .preorder()
            .iter()
            .all(|n| n.kind() != "CrossProduct"));
    }

    #[test]
    fn build_side_is_smaller_estimate() {
        let c = chain();
        let plan = parse_query("SELECT * FROM r1, r2 WHERE r1.fk = r2.id", &c).unwrap();
        let phys = optimize(&plan, &c).unwrap();
        let PhysicalOp::HashJoin {
            left,
            right,
            build_left,
            ..
        } = &phys.root.children()[0].op
        else {
            panic!("expected hash join");
        };
        let build = if *build_left { left } else { right };
        assert_eq!(build.leaf_label().unwrap(), "r2");
    }

    #[test]
    fn fixed_order_is_respected() {
        let c = chain();
        let plan = parse_query(
            "SELECT * FROM r1, r2, r3 WHERE r1.fk = r2.id AND r2.fk = r3.id",
            &c,
        )
        .unwrap();
        let leaf = |s: &str| JoinTree::Leaf(s.into());
        let order = JoinTree::join(JoinTree::join(leaf("r3"), leaf("r1")), leaf("r2"));
        let phys = optimize_with_fixed_order(&plan, &order, &c).unwrap();
        assert_eq!(phys.join_tree().unwrap(), order);
        // r3 and r1 share no predicate.
        assert_eq!(phys.root.children()[0].children()[0].kind(), "CrossProduct");
        let short = JoinTree::join(leaf("r3"), leaf("r1"));
        assert!(matches!(
            optimize_with_fixed_order(&plan, &short, &c),
            Err(Error::OrderMismatch(_))
        ));
    }

    #[test]
    fn greedy_handles_wide_queries() {
        let mut c = Catalog::new();
        let n = 12;
        for i in 0..n {
            table(&mut c, &format!("t{i}"), 100 + 10 * i as i64, 50);
        }
        let from: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        let preds: Vec<String> = (1..n).map(|i| format!("t{}.fk = t{i}.id", i - 1)).collect();
        let q = format!(
            "SELECT * FROM {} WHERE {}",
            from.join(", "),
            preds.join(" AND ")
        );
        let plan = parse_query(&q, &c).unwrap();
        let phys = optimize(&plan, &c).unwrap();
        let tree = phys.join_tree().unwrap();
        assert_eq!(tree.leaf_count(), n);
        assert!(phys
            .root
            .preorder()
            .iter()
            .all(|n| n.kind() != "CrossProduct"));
    }

    #[test]
    fn ties_break_by_name() {
        let mut c = Catalog::new();
        table(&mut c, "a", 100, 100);
        table(&mut c, "b", 100, 100);
        table(&mut c, "cc", 100, 100);
        let q = "SELECT * FROM cc, b, a WHERE a.id = b.id AND b.id = cc.id AND a.id = cc.id";
        let plan = parse_query(q, &c).unwrap();
        let t1 = optimize(&plan, &c).unwrap().join_tree().unwrap();
        assert_eq!(t1.to_string(), "((a ⋈ b) ⋈ cc)");
    }

    #[test]
    fn explain_lists_every_node() {
        let c = chain();
        let plan = LogicalPlan::new(
            PlanNode::filter(
                vec![Predicate::ColEqLiteral {
                    column: ColumnRef::new("r2", "fk"),
                    value: Literal::Int(1),
                }],
                PlanNode::scan("r2", "r2"),
            ),
            vec![],
        );
        let phys = optimize(&plan, &c).unwrap();
        let text = phys.explain(Some(&[10, 10, 100]));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(
            lines[1].starts_with("  Filter r2.fk = 1 est=10 act=10"),
            "{text}"
        );
        assert!(
            lines[2].starts_with("    TableScan r2 est=100 act=100"),
            "{text}"
        );
    }
}
