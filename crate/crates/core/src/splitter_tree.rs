//! Heuristic reorder plus splitting at leaf-adjacent FILTER and JOIN operators.

use std::cmp::Ordering;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::cardinality::Estimate;
use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::optimizer::{fmt_rows, tie_key, JoinTree, PhysNode, PhysicalOp};
use crate::query::{LeafSource, QueryShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RootKind {
    Filter,
    Join,
}

impl RootKind {
    pub fn name(self) -> &'static str {
        match self {
            RootKind::Filter => "Filter",
            RootKind::Join => "Join",
        }
    }
}

/// A leaf-adjacent fragment of the current plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub root_kind: RootKind,
    pub estimate: Estimate,
    /// Distance from the plan root.
    pub depth: usize,
    /// Leaf labels covered.
    pub leaves: Vec<String>,
    pub tree: JoinTree,
    pub plan: PhysNode,
}

impl Candidate {
    pub fn mask(&self, shape: &QueryShape) -> u64 {
        self.leaves
            .iter()
            .filter_map(|l| shape.leaves.iter().position(|x| &x.label() == l))
            .fold(0, |m, i| m | 1 << i)
    }
}

fn base_rows(shape: &QueryShape, catalog: &Catalog, i: usize) -> Result<usize> {
    match &shape.leaves[i].source {
        LeafSource::Scan { table, .. } => catalog
            .table_by_name(table)
            .map(|t| t.row_count)
            .ok_or_else(|| Error::UnknownTable(table.clone())),
        LeafSource::Materialized { id, .. } => catalog
            .intermediate(*id)
            .map(|im| im.exact_row_count as usize)
            .ok_or(Error::UnknownTableId(*id)),
    }
}

/// Left-deep skeleton: starts from the smallest relation (by unfiltered row count)
/// and repeatedly adds the smallest remaining relation that shares a predicate with
/// those already placed. Unconnected relations are appended only when nothing
/// connected is left, so cross products stay at the top.
pub fn reorder_joins(shape: &QueryShape, catalog: &Catalog) -> Result<JoinTree> {
    let sizes = (0..shape.leaves.len())
        .map(|i| base_rows(shape, catalog, i))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<String> = shape.leaves.iter().map(|l| l.label()).collect();
    let rank = |a: &usize, b: &usize| {
        sizes[*a]
            .cmp(&sizes[*b])
            .then_with(|| tie_key(&labels[*a]).cmp(&tie_key(&labels[*b])))
    };
    Ok(connected_left_deep(shape, rank))
}

/// The FROM-order skeleton used when the selector is disabled: leaves in query
/// order, except that a relation with no predicate to those already placed waits
/// until one exists.
pub fn from_order(shape: &QueryShape) -> JoinTree {
    connected_left_deep(shape, |a: &usize, b: &usize| a.cmp(b))
}

fn connected_left_deep(shape: &QueryShape, rank: impl Fn(&usize, &usize) -> Ordering) -> JoinTree {
    let n = shape.leaves.len();
    let mut adj = vec![0u64; n];
    for (a, b, _) in shape.edges() {
        adj[a] |= 1 << b;
        adj[b] |= 1 << a;
    }
    let mut remaining: Vec<usize> = (0..n).collect();
    remaining.sort_by(&rank);
    let first = remaining.remove(0);
    let mut placed = 1u64 << first;
    let mut tree = JoinTree::Leaf(shape.leaves[first].label());
    while !remaining.is_empty() {
        let pos = remaining
            .iter()
            .position(|&i| adj[i] & placed != 0)
            .unwrap_or(0);
        let next = remaining.remove(pos);
        placed |= 1 << next;
        tree = JoinTree::join(tree, JoinTree::Leaf(shape.leaves[next].label()));
    }
    tree
}

/// Leaf-adjacent fragments of a planned join region: every Filter directly over a
/// scan, and every join whose inputs are both (filtered) scans, with those
/// filters fused in.
pub fn split_plan(region: &PhysNode) -> Vec<Candidate> {
    let mut out = Vec::new();
    collect(region, 0, &mut out);
    out
}

fn collect(node: &PhysNode, depth: usize, out: &mut Vec<Candidate>) {
    match &node.op {
        PhysicalOp::Filter { input, .. } if input.is_scan() => {
            let label = node.leaf_label().expect("filtered scan");
            out.push(Candidate {
                root_kind: RootKind::Filter,
                estimate: node.estimate,
                depth,
                leaves: vec![label.clone()],
                tree: JoinTree::Leaf(label),
                plan: node.clone(),
            });
        }
        PhysicalOp::HashJoin { left, right, .. } | PhysicalOp::CrossProduct { left, right } => {
            if left.is_filtered_scan() && right.is_filtered_scan() {
                out.push(Candidate {
                    root_kind: RootKind::Join,
                    estimate: node.estimate,
                    depth,
                    leaves: node
                        .join_tree()
                        .expect("join")
                        .leaves()
                        .into_iter()
                        .map(String::from)
                        .collect(),
                    tree: node.join_tree().expect("join"),
                    plan: node.clone(),
                });
            }
            collect(left, depth + 1, out);
            collect(right, depth + 1, out);
        }
        _ => {
            for c in node.children() {
                collect(c, depth + 1, out);
            }
        }
    }
}

/// Smallest estimated output; ties go to the deeper fragment, then by name.
pub fn select_next(candidates: &[Candidate]) -> Option<usize> {
    (0..candidates.len()).min_by(|&a, &b| {
        let (x, y) = (&candidates[a], &candidates[b]);
        x.estimate
            .rows
            .partial_cmp(&y.estimate.rows)
            .unwrap_or(Ordering::Equal)
            .then_with(|| y.depth.cmp(&x.depth))
            .then_with(|| x.tree.sort_key().cmp(&y.tree.sort_key()))
    })
}

/// Selection with the selector disabled: the deepest join fragment (filters stay
/// fused), or the only filter when there is no join; leftmost on ties.
pub fn select_positional(candidates: &[Candidate]) -> Option<usize> {
    let joins: Vec<usize> = (0..candidates.len())
        .filter(|&i| candidates[i].root_kind == RootKind::Join)
        .collect();
    let pool = if joins.is_empty() {
        (0..candidates.len()).collect()
    } else {
        joins
    };
    // `split_plan` lists candidates in pre-order, so the first deepest is leftmost.
    pool.into_iter().min_by(|&a, &b| {
        candidates[b]
            .depth
            .cmp(&candidates[a].depth)
            .then(a.cmp(&b))
    })
}

pub fn explain_candidates(
    tree: &JoinTree,
    candidates: &[Candidate],
    chosen: Option<usize>,
) -> String {
    let mut out = String::from("strategy: tree\n");
    let _ = writeln!(out, "skeleton: {tree}");
    for (i, c) in candidates.iter().enumerate() {
        let mark = if Some(i) == chosen { "*" } else { " " };
        let _ = writeln!(
            out,
            "{mark} candidate {}: root={} {} est={} depth={}",
            i + 1,
            c.root_kind.name(),
            c.tree,
            fmt_rows(c.estimate.rows),
            c.depth
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cardinality::SubsetEstimator;
    use crate::catalog::TableDef;
    use crate::optimizer::{leaf_labels, plan_region};
    use crate::sql::parse_query;
    use crate::types::{Column, DataType};

    fn catalog(sizes: &[(&str, i64)]) -> Catalog {
        let mut c = Catalog::new();
        for (name, rows) in sizes {
            let def = TableDef::new(name, &[("id", DataType::Int64), ("x", DataType::Int64)]);
            let id = c
                .create_table(
                    def,
                    vec![
                        Column::Int((0..*rows).collect()),
                        Column::Int((0..*rows).map(|i| i % 10).collect()),
                    ],
                )
                .unwrap();
            c.analyze(id).unwrap();
        }
        c
    }

    fn shape(c: &Catalog, q: &str) -> QueryShape {
        QueryShape::extract(&parse_query(q, c).unwrap(), c).unwrap()
    }

    const ABC: &str = "SELECT * FROM a, b, c WHERE a.id = b.id AND b.id = c.id";

    #[test]
    fn reorder_by_size() {
        let c = catalog(&[("a", 5000), ("b", 2000), ("c", 100)]);
        let s = shape(&c, ABC);
        assert_eq!(reorder_joins(&s, &c).unwrap().to_string(), "((c ⋈ b) ⋈ a)");
    }

    #[test]
    fn reorder_ties_by_name_and_ignores_filters() {
        let c = catalog(&[("a", 5000), ("b", 2000), ("c", 2000)]);
        let s = shape(&c, ABC);
        assert_eq!(reorder_joins(&s, &c).unwrap().to_string(), "((b ⋈ c) ⋈ a)");
        let s = shape(
            &c,
            "SELECT * FROM a, b, c WHERE a.id = b.id AND b.id = c.id AND c.x = 5",
        );
        assert_eq!(reorder_joins(&s, &c).unwrap().to_string(), "((b ⋈ c) ⋈ a)");
    }

    #[test]
    fn reorder_keeps_cross_products_last() {
        let c = catalog(&[("a", 5000), ("b", 2000), ("c", 100)]);
        // c only connects to a.
        let s = shape(&c, "SELECT * FROM a, b, c WHERE a.id = b.id AND a.x = c.id");
        assert_eq!(reorder_joins(&s, &c).unwrap().to_string(), "((c ⋈ a) ⋈ b)");
    }

    #[test]
    fn candidates_and_selection() {
        let c = catalog(&[("a", 5000), ("b", 2000), ("c", 100)]);
        let s = shape(
            &c,
            "SELECT * FROM a, b, c WHERE a.id = b.id AND b.id = c.id AND b.x = 3",
        );
        let est = SubsetEstimator::new(&s, &c).unwrap();
        let tree = reorder_joins(&s, &c).unwrap();
        let region = plan_region(&s, &c, &est, &tree, &s.result_columns()).unwrap();
        let cands = split_plan(&region);
        let desc: Vec<String> = cands
            .iter()
            .map(|c| format!("{} {}", c.root_kind.name(), c.tree))
            .collect();
        assert_eq!(desc, vec!["Join (c ⋈ b)", "Filter b"]);
        // Join(c, b): 100 * 200 / max(100, 200) = 100 < Filter(b) = 200.
        assert_eq!(select_next(&cands), Some(0));
        assert_eq!(select_positional(&cands), Some(0));
        let labels = leaf_labels(&s);
        assert_eq!(cands[0].mask(&s).count_ones(), 2);
        assert_eq!(labels.len(), 3);
    }

    #[test]
    fn single_filtered_scan_is_one_candidate() {
        let c = catalog(&[("a", 100)]);
        let s = shape(&c, "SELECT * FROM a WHERE a.x = 1");
        let est = SubsetEstimator::new(&s, &c).unwrap();
        let region = plan_region(&s, &c, &est, &from_order(&s), &s.result_columns()).unwrap();
        let cands = split_plan(&region);
        assert_eq!(cands.len(), 1);
        assert_eq!(cands[0].root_kind, RootKind::Filter);
    }

    #[test]
    fn rescaling_estimates_keeps_choice() {
        let c = catalog(&[("a", 5000), ("b", 2000), ("c", 100)]);
        let s = shape(
            &c,
            "SELECT * FROM a, b, c WHERE a.id = b.id AND b.id = c.id AND b.x = 3",
        );
        let est = SubsetEstimator::new(&s, &c).unwrap();
        let region = plan_region(
            &s,
            &c,
            &est,
            &reorder_joins(&s, &c).unwrap(),
            &s.result_columns(),
        )
        .unwrap();
        let mut cands = split_plan(&region);
        let before = select_next(&cands);
        for cand in &mut cands {
            cand.estimate.rows *= 37.5;
        }
        assert_eq!(select_next(&cands), before);
    }
}
