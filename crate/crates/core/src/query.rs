//! Decomposition of a logical plan into its join region (filtered leaves plus
//! equi-join predicates) and the non-SPJ tail above it.

use std::collections::BTreeSet;

use crate::catalog::{Catalog, TableId};
use crate::error::{Error, Result};
use crate::plan::{AggExpr, ColumnRef, JoinPredicate, LogicalPlan, PlanNode, Predicate};
use crate::types::DataType;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LeafSource {
    Scan { table: String, alias: String },
    Materialized { id: TableId, relations: Vec<String> },
}

/// A relation instance (or materialized intermediate) with its local filters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Leaf {
    pub source: LeafSource,
    pub filters: Vec<Predicate>,
}

impl Leaf {
    pub fn scan(table: &str, alias: &str) -> Leaf {
        Leaf {
            source: LeafSource::Scan {
                table: table.to_string(),
                alias: alias.to_string(),
            },
            filters: Vec::new(),
        }
    }

    /// Stable name used in join trees and for tie-breaking.
    pub fn label(&self) -> String {
        match &self.source {
            LeafSource::Scan { alias, .. } => alias.clone(),
            LeafSource::Materialized { id, .. } => format!("#{id}"),
        }
    }

    pub fn relations(&self) -> Vec<String> {
        match &self.source {
            LeafSource::Scan { alias, .. } => vec![alias.clone()],
            LeafSource::Materialized { relations, .. } => relations.clone(),
        }
    }

    pub fn covers(&self, relation: &str) -> bool {
        match &self.source {
            LeafSource::Scan { alias, .. } => alias == relation,
            LeafSource::Materialized { relations, .. } => relations.iter().any(|r| r == relation),
        }
    }

    pub fn to_plan_node(&self) -> PlanNode {
        let base = match &self.source {
            LeafSource::Scan { table, alias } => PlanNode::scan(table, alias),
            LeafSource::Materialized { id, relations } => PlanNode::MaterializedScan {
                id: *id,
                relations: relations.clone(),
            },
        };
        if self.filters.is_empty() {
            base
        } else {
            PlanNode::filter(self.filters.clone(), base)
        }
    }

    fn from_node(node: &PlanNode) -> Option<Leaf> {
        match node {
            PlanNode::Scan { table, alias } => Some(Leaf::scan(table, alias)),
            PlanNode::MaterializedScan { id, relations } => Some(Leaf {
                source: LeafSource::Materialized {
                    id: *id,
                    relations: relations.clone(),
                },
                filters: Vec::new(),
            }),
            PlanNode::Filter { predicates, input } => {
                let mut leaf = Leaf::from_node(input)?;
                leaf.filters.extend(predicates.iter().cloned());
                Some(leaf)
            }
            _ => None,
        }
    }
}

/// Non-SPJ operators applied after the join region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tail {
    None,
    Project(Vec<ColumnRef>),
    Aggregate {
        group_by: Vec<ColumnRef>,
        aggregates: Vec<AggExpr>,
    },
}

impl Tail {
    pub fn columns(&self) -> Vec<&ColumnRef> {
        match self {
            Tail::None => vec![],
            Tail::Project(cols) => cols.iter().collect(),
            Tail::Aggregate {
                group_by,
                aggregates,
            } => group_by
                .iter()
                .chain(aggregates.iter().filter_map(|a| a.arg.as_ref()))
                .collect(),
        }
    }

    pub fn wrap(&self, input: PlanNode) -> PlanNode {
        match self {
            Tail::None => input,
            Tail::Project(columns) => PlanNode::Project {
                columns: columns.clone(),
                input: Box::new(input),
            },
            Tail::Aggregate {
                group_by,
                aggregates,
            } => PlanNode::Aggregate {
                group_by: group_by.clone(),
                aggregates: aggregates.clone(),
                input: Box::new(input),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryShape {
    /// Leaves in plan order.
    pub leaves: Vec<Leaf>,
    pub joins: Vec<JoinPredicate>,
    pub tail: Tail,
    /// Output columns of the join region when there is no tail (`SELECT *`), in
    /// FROM order.
    pub output: Vec<(ColumnRef, DataType)>,
}

impl QueryShape {
    pub fn extract(plan: &LogicalPlan, catalog: &Catalog) -> Result<QueryShape> {
        let (tail, region) = match &plan.root {
            PlanNode::Aggregate {
                group_by,
                aggregates,
                input,
            } => (
                Tail::Aggregate {
                    group_by: group_by.clone(),
                    aggregates: aggregates.clone(),
                },
                &**input,
            ),
            PlanNode::Project { columns, input } => (Tail::Project(columns.clone()), &**input),
            other => (Tail::None, other),
        };
        let mut leaves = Vec::new();
        let mut joins = plan.pending_joins.clone();
        let mut loose = Vec::new();
        collect_region(region, &mut leaves, &mut joins, &mut loose)?;
        for pred in loose {
            match pred {
                Predicate::ColEqCol { left, right } => joins.push(JoinPredicate::new(left, right)),
                p => {
                    let rel = p.relation().expect("single relation").to_string();
                    let leaf = leaves
                        .iter_mut()
                        .find(|l| l.covers(&rel))
                        .ok_or_else(|| Error::UnresolvedReference(p.to_string()))?;
                    leaf.filters.push(p);
                }
            }
        }
        for j in &joins {
            for c in [&j.left, &j.right] {
                if !leaves.iter().any(|l| l.covers(&c.relation)) {
                    return Err(Error::UnresolvedReference(c.to_string()));
                }
            }
        }
        let mut output = Vec::new();
        for leaf in &leaves {
            output.extend(leaf_columns(leaf, catalog)?);
        }
        Ok(QueryShape {
            leaves,
            joins,
            tail,
            output,
        })
    }

    /// Columns that must survive past the leaves: outputs, tail inputs, and join keys.
    pub fn carried_columns(&self) -> BTreeSet<ColumnRef> {
        let mut set = BTreeSet::new();
        match &self.tail {
            Tail::None => set.extend(self.output.iter().map(|(c, _)| c.clone())),
            t => set.extend(t.columns().into_iter().cloned()),
        }
        for j in &self.joins {
            set.insert(j.left.clone());
            set.insert(j.right.clone());
        }
        set
    }

    /// Columns the join region must hand to the tail (or emit, without one).
    pub fn result_columns(&self) -> BTreeSet<ColumnRef> {
        match &self.tail {
            Tail::None => self.output.iter().map(|(c, _)| c.clone()).collect(),
            t => t.columns().into_iter().cloned().collect(),
        }
    }

    /// Carried columns plus columns read by leaf filters.
    pub fn required_columns(&self) -> BTreeSet<ColumnRef> {
        let mut set = self.carried_columns();
        for l in &self.leaves {
            for f in &l.filters {
                set.extend(f.columns().into_iter().cloned());
            }
        }
        set
    }

    pub fn leaf_index_of(&self, relation: &str) -> Option<usize> {
        self.leaves.iter().position(|l| l.covers(relation))
    }

    /// Join predicates as (leaf, leaf, predicate) triples; predicates internal to a
    /// single leaf are dropped (they were applied when the leaf was produced).
    pub fn edges(&self) -> Vec<(usize, usize, JoinPredicate)> {
        self.joins
            .iter()
            .filter_map(|j| {
                let a = self.leaf_index_of(&j.left.relation)?;
                let b = self.leaf_index_of(&j.right.relation)?;
                (a != b).then(|| (a, b, j.clone()))
            })
            .collect()
    }

    /// Rebuilds a logical plan: leaves on a left-deep cross-product spine with all
    /// join predicates pending, under the tail.
    pub fn to_logical_plan(&self) -> LogicalPlan {
        let mut spine: Option<PlanNode> = None;
        for l in &self.leaves {
            let n = l.to_plan_node();
            spine = Some(match spine {
                None => n,
                Some(acc) => PlanNode::cross(acc, n),
            });
        }
        LogicalPlan::new(
            self.tail.wrap(spine.expect("at least one leaf")),
            self.joins.clone(),
        )
    }

    pub fn is_spj(&self) -> bool {
        !matches!(self.tail, Tail::Aggregate { .. })
    }
}

fn collect_region(
    node: &PlanNode,
    leaves: &mut Vec<Leaf>,
    joins: &mut Vec<JoinPredicate>,
    loose: &mut Vec<Predicate>,
) -> Result<()> {
    if let Some(leaf) = Leaf::from_node(node) {
        leaves.push(leaf);
        return Ok(());
    }
    match node {
        PlanNode::Filter { predicates, input } => {
            loose.extend(predicates.iter().cloned());
            collect_region(input, leaves, joins, loose)
        }
        PlanNode::Join { on, left, right } => {
            joins.extend(on.iter().cloned());
            collect_region(left, leaves, joins, loose)?;
            collect_region(right, leaves, joins, loose)
        }
        PlanNode::CrossProduct { left, right } => {
            collect_region(left, leaves, joins, loose)?;
            collect_region(right, leaves, joins, loose)
        }
        other => Err(Error::Unsupported(format!(
            "{} below the join region",
            other.kind()
        ))),
    }
}

/// All columns a leaf produces, in storage order.
pub fn leaf_columns(leaf: &Leaf, catalog: &Catalog) -> Result<Vec<(ColumnRef, DataType)>> {
    match &leaf.source {
        LeafSource::Scan { table, alias } => {
            let t = catalog
                .table_by_name(table)
                .ok_or_else(|| Error::UnknownTable(table.clone()))?;
            Ok(t.def
                .columns
                .iter()
                .map(|c| (ColumnRef::new(alias, &c.name), c.data_type))
                .collect())
        }
        LeafSource::Materialized { id, .. } => {
            let im = catalog
                .intermediate(*id)
                .ok_or(Error::UnknownTableId(*id))?;
            Ok(im
                .schema
                .iter()
                .map(|c| (c.name.clone(), c.data_type))
                .collect())
        }
    }
}
