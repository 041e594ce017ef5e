//! Foreign-key join DAG, split points, and sub-plans formed around them.

use std::collections::BTreeSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::cardinality::{Estimate, SubsetEstimator};
use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::optimizer::{fmt_rows, tie_key};
use crate::plan::JoinPredicate;
use crate::query::{LeafSource, QueryShape};

/// A join predicate oriented from the foreign-key side to the referenced side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrientedJoin {
    pub from: String,
    pub to: String,
    pub predicate: JoinPredicate,
}

/// Orients every join predicate of a query over base relations.
pub fn orient(shape: &QueryShape, catalog: &Catalog) -> Result<Vec<OrientedJoin>> {
    let table_of = |rel: &str| -> Option<&str> {
        shape.leaves.iter().find_map(|l| match &l.source {
            LeafSource::Scan { table, alias } if alias == rel => Some(table.as_str()),
            _ => None,
        })
    };
    let references = |from: &crate::plan::ColumnRef, to: &crate::plan::ColumnRef| -> bool {
        let (Some(ft), Some(tt)) = (table_of(&from.relation), table_of(&to.relation)) else {
            return false;
        };
        catalog
            .table_by_name(ft)
            .and_then(|t| t.def.foreign_key(&from.column))
            .is_some_and(|fk| fk.ref_table == tt && fk.ref_column == to.column)
    };
    shape
        .joins
        .iter()
        .map(|j| {
            if references(&j.left, &j.right) {
                Ok(OrientedJoin {
                    from: j.left.relation.clone(),
                    to: j.right.relation.clone(),
                    predicate: j.clone(),
                })
            } else if references(&j.right, &j.left) {
                Ok(OrientedJoin {
                    from: j.right.relation.clone(),
                    to: j.left.relation.clone(),
                    predicate: j.clone(),
                })
            } else {
                Err(Error::NotOrientable {
                    predicate: j.to_string(),
                })
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagEdge {
    pub from: usize,
    pub to: usize,
    pub predicate: JoinPredicate,
}

/// Join DAG over the current leaves of a query (base relations or intermediates).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinDag {
    pub vertices: Vec<String>,
    pub edges: Vec<DagEdge>,
}

impl JoinDag {
    pub fn in_degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|e| e.to == v).count()
    }

    pub fn in_degree_of(&self, label: &str) -> Option<usize> {
        self.vertices
            .iter()
            .position(|v| v == label)
            .map(|v| self.in_degree(v))
    }

    fn adjacent(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter_map(move |e| {
            if e.from == v {
                Some(e.to)
            } else if e.to == v {
                Some(e.from)
            } else {
                None
            }
        })
    }
}

pub fn build_dag(shape: &QueryShape, catalog: &Catalog) -> Result<JoinDag> {
    Ok(dag_for(shape, &orient(shape, catalog)?))
}

/// Maps oriented predicates onto the shape's current leaves; predicates inside a
/// single leaf disappear.
pub fn dag_for(shape: &QueryShape, oriented: &[OrientedJoin]) -> JoinDag {
    let edges = oriented
        .iter()
        .filter_map(|o| {
            let from = shape.leaf_index_of(&o.from)?;
            let to = shape.leaf_index_of(&o.to)?;
            (from != to).then(|| DagEdge {
                from,
                to,
                predicate: o.predicate.clone(),
            })
        })
        .collect();
    JoinDag {
        vertices: shape.leaves.iter().map(|l| l.label()).collect(),
        edges,
    }
}

/// Vertices referenced by two or more edges, by label.
pub fn find_split_points(dag: &JoinDag) -> Vec<usize> {
    let mut v: Vec<usize> = (0..dag.vertices.len())
        .filter(|&v| dag.in_degree(v) >= 2)
        .collect();
    v.sort_by(|a, b| dag.vertices[*a].cmp(&dag.vertices[*b]));
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagSubPlan {
    /// Position in execution order, from 1.
    pub id: usize,
    /// The vertex whose edge enters a split point.
    pub center: String,
    /// Leaf labels, in leaf order.
    pub relations: Vec<String>,
    pub mask: u64,
    pub estimate: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagSplit {
    pub split_points: Vec<String>,
    pub subplans: Vec<DagSubPlan>,
    /// Leaves joined in the final assembly: split points plus everything not in a
    /// sub-plan.
    pub assembly: Vec<String>,
    pub cannot_split: bool,
}

/// Groups the non-split vertices into components and keeps those with an edge
/// into a split point, smallest estimate first.
pub fn split(dag: &JoinDag, est: &SubsetEstimator, shape: &QueryShape) -> DagSplit {
    let points = find_split_points(dag);
    let n = dag.vertices.len();
    let is_point = |v: usize| points.contains(&v);
    let mut seen = vec![false; n];
    let mut subplans = Vec::new();
    let mut in_subplan = vec![false; n];
    for start in 0..n {
        if seen[start] || is_point(start) {
            continue;
        }
        let mut comp = vec![start];
        seen[start] = true;
        let mut i = 0;
        while i < comp.len() {
            let v = comp[i];
            for w in dag.adjacent(v) {
                if !seen[w] && !is_point(w) {
                    seen[w] = true;
                    comp.push(w);
                }
            }
            i += 1;
        }
        comp.sort_unstable();
        let centers: BTreeSet<&str> = dag
            .edges
            .iter()
            .filter(|e| is_point(e.to) && comp.contains(&e.from))
            .map(|e| dag.vertices[e.from].as_str())
            .collect();
        let Some(center) = centers.into_iter().next() else {
            continue;
        };
        // A lone intermediate or unfiltered scan gains nothing from running alone.
        if comp.len() == 1 && shape.leaves[comp[0]].filters.is_empty() {
            continue;
        }
        let mask = comp.iter().fold(0u64, |m, &v| m | 1 << v);
        for &v in &comp {
            in_subplan[v] = true;
        }
        subplans.push(DagSubPlan {
            id: 0,
            center: center.to_string(),
            relations: comp.iter().map(|&v| dag.vertices[v].clone()).collect(),
            mask,
            estimate: est.estimate(mask),
        });
    }
    subplans.sort_by(|a, b| {
        a.estimate
            .rows
            .partial_cmp(&b.estimate.rows)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| tie_key(&a.center).cmp(&tie_key(&b.center)))
    });
    for (i, s) in subplans.iter_mut().enumerate() {
        s.id = i + 1;
    }
    let assembly = (0..n)
        .filter(|&v| !in_subplan[v])
        .map(|v| dag.vertices[v].clone())
        .collect();
    DagSplit {
        split_points: points.iter().map(|&v| dag.vertices[v].clone()).collect(),
        cannot_split: subplans.is_empty(),
        subplans,
        assembly,
    }
}

/// EXPLAIN SPLIT rendering: edges, split points, numbered sub-plans.
pub fn explain_split(dag: &JoinDag, split: &DagSplit) -> String {
    let mut out = String::from("strategy: dag\nedges:\n");
    for e in &dag.edges {
        let _ = writeln!(
            out,
            "  {} -> {} [{}]",
            dag.vertices[e.from], dag.vertices[e.to], e.predicate
        );
    }
    let _ = writeln!(out, "split points: [{}]", split.split_points.join(", "));
    if split.cannot_split {
        out.push_str("CannotSplit: no relation is referenced by two or more others\n");
    }
    for s in &split.subplans {
        let _ = writeln!(
            out,
            "subplan #{}: center={} relations=[{}] est={}",
            s.id,
            s.center,
            s.relations.join(", "),
            fmt_rows(s.estimate.rows)
        );
    }
    let _ = writeln!(out, "assembly: [{}]", split.assembly.join(", "));
    out
}
