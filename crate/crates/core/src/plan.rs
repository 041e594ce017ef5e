//! Logical plan representation shared by the parser, optimizer, and splitters.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::TableId;

/// A column of a relation instance, addressed by alias.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnRef {
    pub relation: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(relation: &str, column: &str) -> ColumnRef {
        ColumnRef {
            relation: relation.to_string(),
            column: column.to_string(),
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.relation, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Int(i64),
    Text(String),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Int(v) => write!(f, "{v}"),
            Literal::Text(s) => write!(f, "'{}'", s.replace('\'', "''")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "!=")]
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Ne => "!=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Predicate {
    ColEqLiteral {
        column: ColumnRef,
        value: Literal,
    },
    ColCmpLiteral {
        column: ColumnRef,
        op: CmpOp,
        value: Literal,
    },
    /// `column LIKE 'prefix%'`
    ColPrefix {
        column: ColumnRef,
        prefix: String,
    },
    /// Equi-join predicate between two relation instances.
    ColEqCol {
        left: ColumnRef,
        right: ColumnRef,
    },
}

impl Predicate {
    pub fn columns(&self) -> Vec<&ColumnRef> {
        match self {
            Predicate::ColEqLiteral { column, .. }
            | Predicate::ColCmpLiteral { column, .. }
            | Predicate::ColPrefix { column, .. } => vec![column],
            Predicate::ColEqCol { left, right } => vec![left, right],
        }
    }

    /// The single relation this predicate filters, if it is a one-relation predicate.
    pub fn relation(&self) -> Option<&str> {
        match self {
            Predicate::ColEqCol { .. } => None,
            other => Some(other.columns()[0].relation.as_str()),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::ColEqLiteral { column, value } => write!(f, "{column} = {value}"),
            Predicate::ColCmpLiteral { column, op, value } => {
                write!(f, "{column} {} {value}", op.symbol())
            }
            Predicate::ColPrefix { column, prefix } => {
                write!(f, "{column} LIKE '{}%'", prefix.replace('\'', "''"))
            }
            Predicate::ColEqCol { left, right } => write!(f, "{left} = {right}"),
        }
    }
}

/// `left = right` between columns of two different relation instances.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JoinPredicate {
    pub left: ColumnRef,
    pub right: ColumnRef,
}

impl JoinPredicate {
    pub fn new(left: ColumnRef, right: ColumnRef) -> JoinPredicate {
        JoinPredicate { left, right }
    }

    /// The side of the predicate that belongs to `relation`, and the other side.
    pub fn oriented(&self, relation: &str) -> Option<(&ColumnRef, &ColumnRef)> {
        if self.left.relation == relation {
            Some((&self.left, &self.right))
        } else if self.right.relation == relation {
            Some((&self.right, &self.left))
        } else {
            None
        }
    }
}

impl fmt::Display for JoinPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}", self.left, self.right)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AggFunc {
    Count,
    Sum,
    Min,
    Max,
}

impl AggFunc {
    pub fn name(self) -> &'static str {
        match self {
            AggFunc::Count => "COUNT",
            AggFunc::Sum => "SUM",
            AggFunc::Min => "MIN",
            AggFunc::Max => "MAX",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AggExpr {
    pub func: AggFunc,
    /// `None` means `*` (only valid for COUNT).
    pub arg: Option<ColumnRef>,
}

impl fmt::Display for AggExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.arg {
            Some(c) => write!(f, "{}({c})", self.func.name()),
            None => write!(f, "{}(*)", self.func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum PlanNode {
    Scan {
        table: String,
        alias: String,
    },
    MaterializedScan {
        id: TableId,
        /// Relation aliases whose columns the intermediate carries.
        relations: Vec<String>,
    },
    Filter {
        predicates: Vec<Predicate>,
        input: Box<PlanNode>,
    },
    Join {
        on: Vec<JoinPredicate>,
        left: Box<PlanNode>,
        right: Box<PlanNode>,
    },
    CrossProduct {
        left: Box<PlanNode>,
        right: Box<PlanNode>,
    },
    Project {
        columns: Vec<ColumnRef>,
        input: Box<PlanNode>,
    },
    Aggregate {
        group_by: Vec<ColumnRef>,
        aggregates: Vec<AggExpr>,
        input: Box<PlanNode>,
    },
}

impl PlanNode {
    pub fn scan(table: &str, alias: &str) -> PlanNode {
        PlanNode::Scan {
            table: table.to_string(),
            alias: alias.to_string(),
        }
    }

    pub fn filter(predicates: Vec<Predicate>, input: PlanNode) -> PlanNode {
        PlanNode::Filter {
            predicates,
            input: Box::new(input),
        }
    }

    pub fn join(on: Vec<JoinPredicate>, left: PlanNode, right: PlanNode) -> PlanNode {
        PlanNode::Join {
            on,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn cross(left: PlanNode, right: PlanNode) -> PlanNode {
        PlanNode::CrossProduct {
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PlanNode::Scan { .. } => "Scan",
            PlanNode::MaterializedScan { .. } => "MaterializedScan",
            PlanNode::Filter { .. } => "Filter",
            PlanNode::Join { .. } => "Join",
            PlanNode::CrossProduct { .. } => "CrossProduct",
            PlanNode::Project { .. } => "Project",
            PlanNode::Aggregate { .. } => "Aggregate",
        }
    }

    pub fn children(&self) -> Vec<&PlanNode> {
        match self {
            PlanNode::Scan { .. } | PlanNode::MaterializedScan { .. } => vec![],
            PlanNode::Filter { input, .. }
            | PlanNode::Project { input, .. }
            | PlanNode::Aggregate { input, .. } => vec![input],
            PlanNode::Join { left, right, .. } | PlanNode::CrossProduct { left, right } => {
                vec![left, right]
            }
        }
    }

    /// Relation aliases produced by this subtree, in leaf order.
    pub fn relations(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_relations(&mut out);
        out
    }

    fn collect_relations(&self, out: &mut Vec<String>) {
        match self {
            PlanNode::Scan { alias, .. } => out.push(alias.clone()),
            PlanNode::MaterializedScan { relations, .. } => out.extend(relations.iter().cloned()),
            _ => {
                for c in self.children() {
                    c.collect_relations(out);
                }
            }
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(
            self,
            PlanNode::Scan { .. } | PlanNode::MaterializedScan { .. }
        )
    }

    /// Leaf, or a Filter directly over a leaf.
    pub fn is_filtered_leaf(&self) -> bool {
        match self {
            PlanNode::Filter { input, .. } => input.is_leaf(),
            other => other.is_leaf(),
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self
            .children()
            .iter()
            .map(|c| c.node_count())
            .sum::<usize>()
    }
}

/// A parsed query: an operator tree plus the join predicates that the parser left
/// pending for the optimizer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicalPlan {
    pub root: PlanNode,
    #[serde(default)]
    pub pending_joins: Vec<JoinPredicate>,
}

impl LogicalPlan {
    pub fn new(root: PlanNode, pending_joins: Vec<JoinPredicate>) -> LogicalPlan {
        LogicalPlan {
            root,
            pending_joins,
        }
    }

    pub fn relations(&self) -> Vec<String> {
        self.root.relations()
    }

    /// Indented tree rendering, one node per line.
    pub fn display_tree(&self) -> String {
        let mut out = String::new();
        fmt_node(&self.root, 0, &mut out);
        if !self.pending_joins.is_empty() {
            out.push_str("pending joins:");
            for (i, j) in self.pending_joins.iter().enumerate() {
                out.push_str(if i == 0 { " " } else { ", " });
                out.push_str(&j.to_string());
            }
            out.push('\n');
        }
        out
    }
}

fn fmt_node(node: &PlanNode, depth: usize, out: &mut String) {
    use std::fmt::Write;
    let pad = "  ".repeat(depth);
    let detail = match node {
        PlanNode::Scan { table, alias } => format!("Scan {table} AS {alias}"),
        PlanNode::MaterializedScan { id, relations } => {
            format!("MaterializedScan #{id} [{}]", relations.join(", "))
        }
        PlanNode::Filter { predicates, .. } => {
            format!("Filter {}", join_display(predicates, " AND "))
        }
        PlanNode::Join { on, .. } => format!("Join {}", join_display(on, " AND ")),
        PlanNode::CrossProduct { .. } => "CrossProduct".to_string(),
        PlanNode::Project { columns, .. } => format!("Project {}", join_display(columns, ", ")),
        PlanNode::Aggregate {
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
    let _ = writeln!(out, "{pad}{detail}");
    for c in node.children() {
        fmt_node(c, depth + 1, out);
    }
}

pub(crate) fn join_display<T: fmt::Display>(items: &[T], sep: &str) -> String {
    items
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(sep)
}
