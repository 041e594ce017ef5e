//! `.plan.json` fixtures: a serde rendering of [`LogicalPlan`] plus scope checks.

use rustc_hash::FxHashSet;

use crate::error::{Error, Result};
use crate::plan::{ColumnRef, LogicalPlan, PlanNode};

pub fn plan_to_json(plan: &LogicalPlan) -> String {
    serde_json::to_string_pretty(plan).expect("plans always serialize")
}

/// Parses a plan document and checks that every column reference names a
/// relation instance visible at that point of the tree.
pub fn json_to_plan(text: &str) -> Result<LogicalPlan> {
    let plan: LogicalPlan =
        serde_json::from_str(text).map_err(|e| Error::PlanDocument(e.to_string()))?;
    validate_scope(&plan)?;
    Ok(plan)
}

pub fn validate_scope(plan: &LogicalPlan) -> Result<()> {
    let rels = plan.relations();
    let mut seen = FxHashSet::default();
    for r in &rels {
        if !seen.insert(r.as_str()) {
            return Err(Error::UnresolvedReference(format!(
                "relation `{r}` appears twice"
            )));
        }
    }
    check_node(&plan.root)?;
    for j in &plan.pending_joins {
        for c in [&j.left, &j.right] {
            require(c, &seen)?;
        }
        if j.left.relation == j.right.relation {
            return Err(Error::UnresolvedReference(format!(
                "join predicate {j} references a single relation"
            )));
        }
    }
    Ok(())
}

fn require(c: &ColumnRef, scope: &FxHashSet<&str>) -> Result<()> {
    if scope.contains(c.relation.as_str()) {
        Ok(())
    } else {
        Err(Error::UnresolvedReference(c.to_string()))
    }
}

fn check_node(node: &PlanNode) -> Result<()> {
    for c in node.children() {
        check_node(c)?;
    }
    let rels = node.relations();
    let scope: FxHashSet<&str> = rels.iter().map(String::as_str).collect();
    match node {
        PlanNode::Scan { .. }
        | PlanNode::MaterializedScan { .. }
        | PlanNode::CrossProduct { .. } => {}
        PlanNode::Filter { predicates, .. } => {
            for p in predicates {
                for c in p.columns() {
                    require(c, &scope)?;
                }
            }
        }
        PlanNode::Join { on, left, right } => {
            let l = left.relations();
            let r = right.relations();
            for j in on {
                let lhs_left = l.contains(&j.left.relation) && r.contains(&j.right.relation);
                let lhs_right = r.contains(&j.left.relation) && l.contains(&j.right.relation);
                if !lhs_left && !lhs_right {
                    return Err(Error::UnresolvedReference(format!(
                        "join predicate {j} does not connect its inputs"
                    )));
                }
            }
        }
        PlanNode::Project { columns, .. } => {
            for c in columns {
                require(c, &scope)?;
            }
        }
        PlanNode::Aggregate {
            group_by,
            aggregates,
            ..
        } => {
            for c in group_by
                .iter()
                .chain(aggregates.iter().filter_map(|a| a.arg.as_ref()))
            {
                require(c, &scope)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{JoinPredicate, Literal, Predicate};

    fn sample() -> LogicalPlan {
        LogicalPlan::new(
            PlanNode::cross(
                PlanNode::filter(
                    vec![Predicate::ColEqLiteral {
                        column: ColumnRef::new("a", "x"),
                        value: Literal::Int(5),
                    }],
                    PlanNode::scan("a_table", "a"),
                ),
                PlanNode::scan("t", "t"),
            ),
            vec![JoinPredicate::new(
                ColumnRef::new("a", "t_id"),
                ColumnRef::new("t", "id"),
            )],
        )
    }

    #[test]
    fn round_trip() {
        let p = sample();
        assert_eq!(json_to_plan(&plan_to_json(&p)).unwrap(), p);
    }

    #[test]
    fn unknown_kind_is_named() {
        let text = r#"{"root":{"kind":"Teleport","alias":"x"},"pending_joins":[]}"#;
        let err = json_to_plan(text).unwrap_err().to_string();
        assert!(err.contains("Teleport"), "{err}");
    }

    #[test]
    fn unresolved_reference() {
        let mut p = sample();
        p.pending_joins.push(JoinPredicate::new(
            ColumnRef::new("zz", "id"),
            ColumnRef::new("t", "id"),
        ));
        let err = json_to_plan(&plan_to_json(&p)).unwrap_err();
        assert!(matches!(err, Error::UnresolvedReference(_)));
    }
}
