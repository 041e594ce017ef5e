//! Selectivity and join-size estimation, plus the monitor's feedback path.
//!
//! The estimator is deliberately naive: independent predicates, uniform value
//! ranges, and `|L|·|R| / max(d_L, d_R)` for equi-joins. Intermediates switch to
//! exact statistics once the monitor has reported them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ColumnStat, TableId, MAX_TRACKED_PREFIX};
use crate::error::{Error, Result};
use crate::plan::{CmpOp, ColumnRef, Literal, LogicalPlan, PlanNode, Predicate};
use crate::query::{Leaf, LeafSource, QueryShape};

/// Selectivity used when a predicate's column has no statistics.
pub const FALLBACK_SELECTIVITY: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimateSource {
    Stats,
    Feedback,
    Fallback,
}

impl EstimateSource {
    /// The weaker of two provenances, for derived estimates.
    fn combine(self, other: EstimateSource) -> EstimateSource {
        use EstimateSource::*;
        match (self, other) {
            (Fallback, _) | (_, Fallback) => Fallback,
            _ => Stats,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub rows: f64,
    pub source: EstimateSource,
}

impl Estimate {
    pub fn stats(rows: f64) -> Estimate {
        Estimate {
            rows,
            source: EstimateSource::Stats,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selectivity {
    pub fraction: f64,
    pub source: EstimateSource,
}

/// Exact cardinality of an executed intermediate, reported by the monitor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardinalityFeedback {
    pub subject: TableId,
    pub exact_row_count: u64,
    pub distinct_counts: Vec<u64>,
}

/// Estimated statistics for one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColEstimate {
    pub distinct: f64,
    pub min: Option<i64>,
    pub max: Option<i64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prefix_distinct: Vec<u64>,
}

impl From<&ColumnStat> for ColEstimate {
    fn from(s: &ColumnStat) -> Self {
        ColEstimate {
            distinct: s.distinct_count as f64,
            min: s.min,
            max: s.max,
            prefix_distinct: s.prefix_distinct.clone(),
        }
    }
}

/// Estimated size and column statistics of a relation or intermediate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelEstimate {
    pub rows: f64,
    pub columns: BTreeMap<ColumnRef, ColEstimate>,
    pub source: EstimateSource,
}

impl RelEstimate {
    pub fn estimate(&self) -> Estimate {
        Estimate {
            rows: self.rows,
            source: self.source,
        }
    }

    /// Applies a conjunction of single-relation predicates.
    pub fn filtered(&self, preds: &[Predicate]) -> RelEstimate {
        let mut out = self.clone();
        if preds.is_empty() {
            return out;
        }
        let sel = estimate_conjunction(preds, self);
        out.rows = self.rows * sel.fraction;
        out.source = out.source.combine(sel.source);
        for p in preds {
            let Some(col) = p.columns().first().map(|c| (*c).clone()) else {
                continue;
            };
            if let Some(ce) = out.columns.get_mut(&col) {
                match p {
                    Predicate::ColEqLiteral {
                        value: Literal::Int(v),
                        ..
                    } => {
                        ce.distinct = 1.0;
                        ce.min = Some(*v);
                        ce.max = Some(*v);
                    }
                    Predicate::ColEqLiteral { .. } => ce.distinct = 1.0,
                    Predicate::ColCmpLiteral {
                        op,
                        value: Literal::Int(v),
                        ..
                    } => match op {
                        CmpOp::Lt => ce.max = ce.max.map(|m| m.min(v.saturating_sub(1))),
                        CmpOp::Le => ce.max = ce.max.map(|m| m.min(*v)),
                        CmpOp::Gt => ce.min = ce.min.map(|m| m.max(v.saturating_add(1))),
                        CmpOp::Ge => ce.min = ce.min.map(|m| m.max(*v)),
                        CmpOp::Ne => {}
                    },
                    _ => {}
                }
            }
        }
        let rows = out.rows;
        for ce in out.columns.values_mut() {
            ce.distinct = ce
                .distinct
                .min(rows)
                .max(if rows > 0.0 { 1.0 } else { 0.0 });
        }
        out
    }
}

/// Fraction of rows satisfying a single-relation predicate.
pub fn estimate_selectivity(
    pred: &Predicate,
    stat: Option<&ColEstimate>,
    row_count: f64,
) -> Selectivity {
    let Some(stat) = stat else {
        return Selectivity {
            fraction: FALLBACK_SELECTIVITY,
            source: EstimateSource::Fallback,
        };
    };
    let d = stat.distinct.max(1.0);
    let fraction = match pred {
        Predicate::ColEqLiteral { .. } => 1.0 / d,
        Predicate::ColCmpLiteral { op: CmpOp::Ne, .. } => 1.0 - 1.0 / d,
        Predicate::ColCmpLiteral {
            op,
            value: Literal::Int(v),
            ..
        } => match (stat.min, stat.max) {
            (Some(lo), Some(hi)) => {
                let (lo, hi, v) = (lo as f64, hi as f64, *v as f64);
                let width = hi - lo + 1.0;
                let covered = match op {
                    CmpOp::Lt => v - lo,
                    CmpOp::Le => v - lo + 1.0,
                    CmpOp::Gt => hi - v,
                    CmpOp::Ge => hi - v + 1.0,
                    CmpOp::Ne => unreachable!("handled above"),
                };
                (covered / width).clamp(0.0, 1.0)
            }
            _ => 0.0,
        },
        Predicate::ColCmpLiteral { .. } => {
            return Selectivity {
                fraction: FALLBACK_SELECTIVITY,
                source: EstimateSource::Fallback,
            }
        }
        Predicate::ColPrefix { prefix, .. } => {
            let len = prefix.chars().count();
            if len == 0 {
                1.0
            } else {
                let domain = if len <= MAX_TRACKED_PREFIX {
                    stat.prefix_distinct
                        .get(len - 1)
                        .map(|&x| x as f64)
                        .unwrap_or(d)
                } else {
                    d
                };
                let floor = if row_count > 0.0 {
                    1.0 / row_count
                } else {
                    0.0
                };
                (1.0 / domain.max(1.0)).max(floor)
            }
        }
        Predicate::ColEqCol { .. } => {
            return Selectivity {
                fraction: FALLBACK_SELECTIVITY,
                source: EstimateSource::Fallback,
            }
        }
    };
    Selectivity {
        fraction,
        source: EstimateSource::Stats,
    }
}

/// Product of individual selectivities (independence assumption).
pub fn estimate_conjunction(preds: &[Predicate], rel: &RelEstimate) -> Selectivity {
    let mut fraction = 1.0;
    let mut source = EstimateSource::Stats;
    for p in preds {
        let col = p.columns()[0];
        let s = estimate_selectivity(p, rel.columns.get(col), rel.rows);
        fraction *= s.fraction;
        source = source.combine(s.source);
    }
    Selectivity { fraction, source }
}

/// `left_rows · right_rows / max(left_key_distinct, right_key_distinct, 1)`.
pub fn estimate_join(
    left_rows: f64,
    right_rows: f64,
    left_key_distinct: f64,
    right_key_distinct: f64,
) -> f64 {
    left_rows * right_rows / left_key_distinct.max(right_key_distinct).max(1.0)
}

/// Unfiltered statistics of a leaf's source.
pub fn source_estimate(source: &LeafSource, catalog: &Catalog) -> Result<RelEstimate> {
    match source {
        LeafSource::Scan { table, alias } => {
            let t = catalog
                .table_by_name(table)
                .ok_or_else(|| Error::UnknownTable(table.clone()))?;
            match &t.stats {
                Some(stats) => Ok(RelEstimate {
                    rows: stats.row_count as f64,
                    columns: t
                        .def
                        .columns
                        .iter()
                        .zip(&stats.columns)
                        .map(|(c, s)| (ColumnRef::new(alias, &c.name), ColEstimate::from(s)))
                        .collect(),
                    source: EstimateSource::Stats,
                }),
                None => Ok(RelEstimate {
                    rows: t.row_count as f64,
                    columns: BTreeMap::new(),
                    source: EstimateSource::Fallback,
                }),
            }
        }
        LeafSource::Materialized { id, .. } => {
            let im = catalog
                .intermediate(*id)
                .ok_or(Error::UnknownTableId(*id))?;
            if im.feedback.is_some() {
                Ok(RelEstimate {
                    rows: im.exact_row_count as f64,
                    columns: im
                        .schema
                        .iter()
                        .zip(&im.stats.columns)
                        .map(|(c, s)| (c.name.clone(), ColEstimate::from(s)))
                        .collect(),
                    source: EstimateSource::Feedback,
                })
            } else if let Some(prior) = &im.prior {
                Ok(prior.clone())
            } else {
                Ok(RelEstimate {
                    rows: im.exact_row_count as f64,
                    columns: im
                        .schema
                        .iter()
                        .zip(&im.stats.columns)
                        .map(|(c, s)| (c.name.clone(), ColEstimate::from(s)))
                        .collect(),
                    source: EstimateSource::Stats,
                })
            }
        }
    }
}

pub fn leaf_estimate(leaf: &Leaf, catalog: &Catalog) -> Result<RelEstimate> {
    Ok(source_estimate(&leaf.source, catalog)?.filtered(&leaf.filters))
}

/// Shape-independent size estimates for any subset of a query's leaves: the
/// product of leaf sizes divided by `max(d_a, d_b)` for every join edge inside
/// the subset. Subsets are bitmasks over `QueryShape::leaves`.
#[derive(Debug, Clone)]
pub struct SubsetEstimator {
    pub leaves: Vec<RelEstimate>,
    /// (leaf a, leaf b, 1 / max(d_a, d_b)) per join predicate.
    edges: Vec<(usize, usize, f64)>,
    adjacency: Vec<u64>,
}

impl SubsetEstimator {
    pub fn new(shape: &QueryShape, catalog: &Catalog) -> Result<SubsetEstimator> {
        let leaves = shape
            .leaves
            .iter()
            .map(|l| leaf_estimate(l, catalog))
            .collect::<Result<Vec<_>>>()?;
        Ok(SubsetEstimator::from_parts(shape, leaves))
    }

    /// Uses the given per-leaf estimates instead of catalog statistics.
    pub fn from_parts(shape: &QueryShape, leaves: Vec<RelEstimate>) -> SubsetEstimator {
        let mut adjacency = vec![0u64; leaves.len()];
        let edges = shape
            .edges()
            .into_iter()
            .map(|(a, b, j)| {
                adjacency[a] |= 1 << b;
                adjacency[b] |= 1 << a;
                let da = leaves[a]
                    .columns
                    .get(&j.left)
                    .or_else(|| leaves[a].columns.get(&j.right));
                let db = leaves[b]
                    .columns
                    .get(&j.right)
                    .or_else(|| leaves[b].columns.get(&j.left));
                let d = match (da, db) {
                    (Some(x), Some(y)) => x.distinct.max(y.distinct),
                    (Some(x), None) => x.distinct.max(1.0 / FALLBACK_SELECTIVITY),
                    (None, Some(y)) => y.distinct.max(1.0 / FALLBACK_SELECTIVITY),
                    (None, None) => 1.0 / FALLBACK_SELECTIVITY,
                };
                (a, b, 1.0 / d.max(1.0))
            })
            .collect();
        SubsetEstimator {
            leaves,
            edges,
            adjacency,
        }
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn rows(&self, mask: u64) -> f64 {
        let mut rows = 1.0;
        for (i, l) in self.leaves.iter().enumerate() {
            if mask & (1 << i) != 0 {
                rows *= l.rows;
            }
        }
        for &(a, b, f) in &self.edges {
            if mask & (1 << a) != 0 && mask & (1 << b) != 0 {
                rows *= f;
            }
        }
        rows
    }

    pub fn source(&self, mask: u64) -> EstimateSource {
        let mut source = EstimateSource::Stats;
        for (i, l) in self.leaves.iter().enumerate() {
            if mask & (1 << i) != 0 {
                source = source.combine(l.source);
            }
        }
        source
    }

    pub fn estimate(&self, mask: u64) -> Estimate {
        if mask.count_ones() == 1 {
            return self.leaves[mask.trailing_zeros() as usize].estimate();
        }
        Estimate {
            rows: self.rows(mask),
            source: self.source(mask),
        }
    }

    pub fn neighbors(&self, mask: u64) -> u64 {
        let mut n = 0;
        for i in 0..self.leaves.len() {
            if mask & (1 << i) != 0 {
                n |= self.adjacency[i];
            }
        }
        n & !mask
    }

    pub fn connected(&self, mask: u64) -> bool {
        if mask == 0 {
            return false;
        }
        let mut seen = mask & mask.wrapping_neg();
        loop {
            let next = (seen | self.neighbors(seen)) & mask;
            if next == seen {
                return seen == mask;
            }
            seen = next;
        }
    }

    /// Whether a join edge crosses between two disjoint subsets.
    pub fn linked(&self, a: u64, b: u64) -> bool {
        self.neighbors(a) & b != 0
    }

    /// Estimated statistics of the subset's join result; column distinct counts are
    /// capped by the result size.
    pub fn rel_estimate(&self, mask: u64) -> RelEstimate {
        let est = self.estimate(mask);
        let mut columns = BTreeMap::new();
        for (i, l) in self.leaves.iter().enumerate() {
            if mask & (1 << i) != 0 {
                for (c, ce) in &l.columns {
                    let mut ce = ce.clone();
                    ce.distinct = ce.distinct.min(est.rows);
                    columns.insert(c.clone(), ce);
                }
            }
        }
        RelEstimate {
            rows: est.rows,
            columns,
            source: est.source,
        }
    }
}

/// Estimated output size of a plan node.
///
/// Scans read catalog statistics; materialized scans use exact counts once the
/// monitor has reported them (the planner's prior estimate otherwise); filters
/// and joins use the formulas above. Operators with no formula of their own take
/// the largest estimate among their children.
pub fn estimate_node(node: &PlanNode, catalog: &Catalog) -> Result<Estimate> {
    match node {
        PlanNode::Scan { .. } | PlanNode::MaterializedScan { .. } => {
            let leaf = Leaf {
                source: scan_source(node),
                filters: vec![],
            };
            Ok(leaf_estimate(&leaf, catalog)?.estimate())
        }
        PlanNode::Aggregate {
            group_by, input, ..
        } if group_by.is_empty() => {
            estimate_node(input, catalog)?;
            Ok(Estimate::stats(1.0))
        }
        PlanNode::Project { input, .. } | PlanNode::Aggregate { input, .. } => {
            let child = estimate_node(input, catalog)?;
            Ok(Estimate {
                rows: child.rows,
                source: EstimateSource::Fallback,
            })
        }
        _ => {
            let shape = QueryShape::extract(&LogicalPlan::new(node.clone(), vec![]), catalog)?;
            let est = SubsetEstimator::new(&shape, catalog)?;
            let all = (1u64 << est.len()) - 1;
            Ok(est.estimate(all))
        }
    }
}

fn scan_source(node: &PlanNode) -> LeafSource {
    match node {
        PlanNode::Scan { table, alias } => LeafSource::Scan {
            table: table.clone(),
            alias: alias.clone(),
        },
        PlanNode::MaterializedScan { id, relations } => LeafSource::Materialized {
            id: *id,
            relations: relations.clone(),
        },
        _ => unreachable!("not a scan"),
    }
}

/// Records the exact cardinality of an intermediate; later estimates for it use
/// the exact values.
pub fn apply_feedback(catalog: &mut Catalog, fb: CardinalityFeedback) -> Result<()> {
    let im = catalog
        .intermediate_mut(fb.subject)
        .ok_or(Error::UnknownTableId(fb.subject))?;
    debug_assert_eq!(im.exact_row_count, fb.exact_row_count);
    im.feedback = Some(fb);
    Ok(())
}

/// Feedback describing an intermediate as materialized.
pub fn feedback_for(catalog: &Catalog, id: TableId) -> Result<CardinalityFeedback> {
    let im = catalog.intermediate(id).ok_or(Error::UnknownTableId(id))?;
    Ok(CardinalityFeedback {
        subject: id,
        exact_row_count: im.exact_row_count,
        distinct_counts: im.stats.columns.iter().map(|c| c.distinct_count).collect(),
    })
}
