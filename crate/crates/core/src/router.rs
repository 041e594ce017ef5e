//! Relation-based baseline: trial batches of the source relation are routed
//! through alternative left-deep orders, and the order with the fewest
//! intermediates per tuple processes the rest.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::cardinality::SubsetEstimator;
use crate::catalog::{Catalog, OutputColumn};
use crate::clock::Instant;
use crate::driver::{AqpTrace, RoundTrace, RunOptions, RunOutcome, RunTotals};
use crate::error::{Error, Result};
use crate::executor::{execute_with_deadline, ResultSet};
use crate::optimizer::{
    finish, leaf_labels, optimize_shape, plan_region, JoinTree, PhysNode, PhysicalOp, PhysicalPlan,
};
use crate::plan::{ColumnRef, LogicalPlan};
use crate::query::{Leaf, LeafSource, QueryShape, Tail};
use crate::types::{Column, DataType, Value};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingPolicy {
    pub batch_size: usize,
    pub max_candidates: usize,
    /// Fraction of source rows spent on trials.
    pub exploration_budget: f64,
}

impl Default for RoutingPolicy {
    fn default() -> Self {
        RoutingPolicy {
            batch_size: 64,
            max_candidates: 4,
            exploration_budget: 0.1,
        }
    }
}

impl RoutingPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_candidates == 0 {
            return Err(Error::Config(
                "batch_size and max_candidates must be at least 1".into(),
            ));
        }
        if !(self.exploration_budget > 0.0 && self.exploration_budget <= 0.5) {
            return Err(Error::Config(
                "exploration_budget must be in (0, 0.5]".into(),
            ));
        }
        Ok(())
    }
}

/// A left-deep order as a leaf sequence, source first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteCandidate {
    pub order: Vec<String>,
    pub est_cost: f64,
}

impl RouteCandidate {
    pub fn tree(&self) -> JoinTree {
        let mut it = self.order.iter();
        let mut t = JoinTree::Leaf(it.next().expect("non-empty").clone());
        for l in it {
            t = JoinTree::join(t, JoinTree::Leaf(l.clone()));
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStats {
    pub order: Vec<String>,
    pub est_cost: f64,
    pub tuples: u64,
    pub intermediates: u64,
}

impl TrialStats {
    pub fn per_tuple(&self) -> f64 {
        if self.tuples == 0 {
            f64::INFINITY
        } else {
            self.intermediates as f64 / self.tuples as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterTrace {
    pub source: String,
    pub source_rows: u64,
    pub trials: Vec<TrialStats>,
    pub winner: usize,
}

fn spj_shape(plan: &LogicalPlan, catalog: &Catalog) -> Result<QueryShape> {
    QueryShape::extract(plan, catalog).map_err(|e| match e {
        Error::Unsupported(msg) => Error::NonSpjUnsupported(msg),
        other => other,
    })
}

/// The leaf the vanilla plan streams through every join: follow probe sides down
/// from the root.
pub fn source_leaf(region: &PhysNode) -> String {
    let mut n = region;
    loop {
        if let Some(l) = n.leaf_label() {
            return l;
        }
        n = match &n.op {
            PhysicalOp::HashJoin {
                left,
                right,
                build_left,
                ..
            } => {
                if *build_left {
                    right
                } else {
                    left
                }
            }
            PhysicalOp::CrossProduct { left, .. } => left,
            _ => n.children()[0],
        };
    }
}

#[derive(PartialEq)]
struct State {
    cost: f64,
    order: Vec<usize>,
    key: String,
}

impl Eq for State {}

impl Ord for State {
    // Reversed so the max-heap pops the cheapest (then lexicographically first).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .partial_cmp(&self.cost)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.key.cmp(&self.key))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Up to `max_candidates` left-deep orders starting at `source`, cheapest
/// estimated Cout first. Each step joins a relation connected to the prefix
/// when one exists.
pub fn enumerate_orders(
    shape: &QueryShape,
    est: &SubsetEstimator,
    source: &str,
    max_candidates: usize,
) -> Vec<RouteCandidate> {
    let labels = leaf_labels(shape);
    let n = labels.len();
    let Some(s) = labels.iter().position(|l| l == source) else {
        return Vec::new();
    };
    let mut heap = BinaryHeap::new();
    heap.push(State {
        cost: 0.0,
        order: vec![s],
        key: labels[s].clone(),
    });
    let mut out = Vec::new();
    while let Some(st) = heap.pop() {
        if st.order.len() == n {
            out.push(RouteCandidate {
                order: st.order.iter().map(|&i| labels[i].clone()).collect(),
                est_cost: st.cost,
            });
            if out.len() >= max_candidates {
                break;
            }
            continue;
        }
        let mask = st.order.iter().fold(0u64, |m, &i| m | 1 << i);
        let rest: Vec<usize> = (0..n).filter(|i| mask & (1 << i) == 0).collect();
        let connected: Vec<usize> = rest
            .iter()
            .copied()
            .filter(|&i| est.linked(mask, 1 << i))
            .collect();
        let next = if connected.is_empty() {
            rest
        } else {
            connected
        };
        for i in next {
            let m = mask | 1 << i;
            let mut order = st.order.clone();
            order.push(i);
            heap.push(State {
                cost: st.cost + est.rows(m),
                key: format!("{}\u{0}{}", st.key, labels[i]),
                order,
            });
        }
    }
    out
}

/// Hash index over a build relation for one key-column list.
enum Index {
    Int(FxHashMap<i64, Vec<u32>>),
    General(FxHashMap<Vec<Value>, Vec<u32>>),
}

struct BuildRel {
    schema: Vec<(ColumnRef, DataType)>,
    columns: Vec<Column>,
    len: usize,
    indexes: BTreeMap<Vec<usize>, Index>,
}

impl BuildRel {
    fn index(&mut self, keys: &[usize]) -> &Index {
        let (columns, len) = (&self.columns, self.len);
        self.indexes.entry(keys.to_vec()).or_insert_with(|| {
            if keys.len() == 1 {
                if let Column::Int(v) = &columns[keys[0]] {
                    let mut m: FxHashMap<i64, Vec<u32>> = FxHashMap::default();
                    for (i, k) in v.iter().enumerate() {
                        m.entry(*k).or_default().push(i as u32);
                    }
                    return Index::Int(m);
                }
            }
            let mut m: FxHashMap<Vec<Value>, Vec<u32>> = FxHashMap::default();
            for i in 0..len {
                m.entry(keys.iter().map(|&k| columns[k].value(i)).collect())
                    .or_default()
                    .push(i as u32);
            }
            Index::General(m)
        })
    }
}

/// One pipeline step: join the running tuples with `leaf` on key columns.
struct Step {
    leaf: usize,
    /// (running-tuple column, build column) pairs.
    keys: Vec<(usize, usize)>,
    /// Output layout: (from build?, position).
    output: Vec<(bool, usize)>,
}

struct Pipeline {
    steps: Vec<Step>,
    schema: Vec<(ColumnRef, DataType)>,
}

fn compile(order: &[usize], shape: &QueryShape, rels: &[BuildRel]) -> Result<Pipeline> {
    let mut schema = rels[order[0]].schema.clone();
    let mut steps = Vec::new();
    let mut placed = vec![order[0]];
    for &leaf in &order[1..] {
        let mut keys = Vec::new();
        for (a, b, j) in shape.edges() {
            let joins_prefix =
                (a == leaf && placed.contains(&b)) || (b == leaf && placed.contains(&a));
            if !joins_prefix {
                continue;
            }
            let (leaf_side, run_side) = if shape.leaves[leaf].covers(&j.left.relation) {
                (&j.left, &j.right)
            } else {
                (&j.right, &j.left)
            };
            keys.push((
                position(&schema, run_side)?,
                position(&rels[leaf].schema, leaf_side)?,
            ));
        }
        let mut out_schema = schema.clone();
        out_schema.extend(rels[leaf].schema.iter().cloned());
        let output = (0..schema.len())
            .map(|i| (false, i))
            .chain((0..rels[leaf].schema.len()).map(|i| (true, i)))
            .collect();
        steps.push(Step { leaf, keys, output });
        schema = out_schema;
        placed.push(leaf);
    }
    Ok(Pipeline { steps, schema })
}

fn position(schema: &[(ColumnRef, DataType)], c: &ColumnRef) -> Result<usize> {
    schema
        .iter()
        .position(|(x, _)| x == c)
        .ok_or_else(|| Error::UnresolvedReference(c.to_string()))
}

/// Pushes rows `[start, end)` of the source through the pipeline, appending the
/// joined tuples to `sink`. Returns the number of rows emitted by all steps.
fn run_batch(
    pipe: &Pipeline,
    rels: &mut [BuildRel],
    src: usize,
    start: usize,
    end: usize,
    sink: &mut [Column],
) -> u64 {
    let mut cur: Vec<Column> = rels[src]
        .columns
        .iter()
        .map(|c| c.slice(start, end))
        .collect();
    let mut len = end - start;
    let mut produced = 0u64;
    for step in &pipe.steps {
        let build_keys: Vec<usize> = step.keys.iter().map(|k| k.1).collect();
        let mut ri: Vec<u32> = Vec::new();
        let mut bi: Vec<u32> = Vec::new();
        if step.keys.is_empty() {
            let blen = rels[step.leaf].len;
            for r in 0..len {
                for b in 0..blen {
                    ri.push(r as u32);
                    bi.push(b as u32);
                }
            }
        } else {
            let index = rels[step.leaf].index(&build_keys);
            for r in 0..len {
                let hits = match index {
                    Index::Int(m) => match &cur[step.keys[0].0] {
                        Column::Int(v) => m.get(&v[r]),
                        c => match c.value(r) {
                            Value::Int(x) => m.get(&x),
                            _ => None,
                        },
                    },
                    Index::General(m) => {
                        let k: Vec<Value> =
                            step.keys.iter().map(|&(c, _)| cur[c].value(r)).collect();
                        m.get(&k)
                    }
                };
                if let Some(h) = hits {
                    for &b in h {
                        ri.push(r as u32);
                        bi.push(b);
                    }
                }
            }
        }
        let build = &rels[step.leaf];
        cur = step
            .output
            .iter()
            .map(|&(from_build, i)| {
                if from_build {
                    build.columns[i].gather(&bi)
                } else {
                    cur[i].gather(&ri)
                }
            })
            .collect();
        len = ri.len();
        produced += len as u64;
        if len == 0 {
            break;
        }
    }
    if len > 0 {
        for (d, s) in sink.iter_mut().zip(&cur) {
            d.append(s);
        }
    }
    produced
}

/// Runs a query through the router: trials, winner selection, remainder, tail.
pub fn run_router(
    catalog: &mut Catalog,
    plan: &LogicalPlan,
    policy: &RoutingPolicy,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    policy.validate()?;
    let shape = spj_shape(plan, catalog)?;
    let out = route(catalog, &shape, policy, opts);
    catalog.drop_intermediates();
    out
}

fn route(
    catalog: &mut Catalog,
    shape: &QueryShape,
    policy: &RoutingPolicy,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    let est = SubsetEstimator::new(shape, catalog)?;
    let vanilla = optimize_shape(shape, catalog)?;
    let region = vanilla.root.children()[0];
    let source = source_leaf(region);
    let cands = enumerate_orders(shape, &est, &source, policy.max_candidates);
    let labels = leaf_labels(shape);
    let start = Instant::now();

    // Every leaf, filtered and pruned to the columns the query needs.
    let mut needed: BTreeSet<ColumnRef> = shape.result_columns();
    for j in &shape.joins {
        needed.insert(j.left.clone());
        needed.insert(j.right.clone());
    }
    let mut intermediates = 0u64;
    let mut rels = Vec::with_capacity(shape.leaves.len());
    for (i, leaf) in shape.leaves.iter().enumerate() {
        let one = QueryShape {
            leaves: vec![leaf.clone()],
            joins: Vec::new(),
            tail: Tail::None,
            output: Vec::new(),
        };
        let e = SubsetEstimator::from_parts(&one, vec![est.leaves[i].clone()]);
        let node = plan_region(
            &one,
            catalog,
            &e,
            &JoinTree::Leaf(labels[i].clone()),
            &needed,
        )?;
        let (rs, m) = execute_with_deadline(&node, catalog, opts.deadline)?;
        intermediates += m.operator_rows.iter().sum::<u64>();
        rels.push(BuildRel {
            schema: rs.schema,
            columns: rs.columns,
            len: rs.len,
            indexes: BTreeMap::new(),
        });
    }
    let src = labels
        .iter()
        .position(|l| *l == source)
        .expect("source is a leaf");
    let pipes = cands
        .iter()
        .map(|c| {
            let order: Vec<usize> = c
                .order
                .iter()
                .map(|l| labels.iter().position(|x| x == l).expect("leaf"))
                .collect();
            compile(&order, shape, &rels)
        })
        .collect::<Result<Vec<_>>>()?;
    // All pipelines emit the same column set; use the first layout for the sink.
    let sink_schema = pipes[0].schema.clone();
    let mut sink: Vec<Column> = sink_schema.iter().map(|(_, t)| Column::empty(*t)).collect();
    let reorder: Vec<Vec<usize>> = pipes
        .iter()
        .map(|p| {
            sink_schema
                .iter()
                .map(|(c, _)| position(&p.schema, c))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let total = rels[src].len;
    let batches: Vec<(usize, usize)> = (0..total)
        .step_by(policy.batch_size)
        .map(|s| (s, (s + policy.batch_size).min(total)))
        .collect();
    let budget_rows = (policy.exploration_budget * total as f64).ceil() as usize;
    let trial_batches = budget_rows
        .div_ceil(policy.batch_size)
        .max(cands.len())
        .min(batches.len());
    let mut trials: Vec<TrialStats> = cands
        .iter()
        .map(|c| TrialStats {
            order: c.order.clone(),
            est_cost: c.est_cost,
            tuples: 0,
            intermediates: 0,
        })
        .collect();
    let mut scratch: Vec<Column> = Vec::new();
    let mut route_one =
        |k: usize, (s, e): (usize, usize), rels: &mut [BuildRel], sink: &mut Vec<Column>| {
            scratch = pipes[k]
                .schema
                .iter()
                .map(|(_, t)| Column::empty(*t))
                .collect();
            let produced = run_batch(&pipes[k], rels, src, s, e, &mut scratch);
            for (dst, &from) in sink.iter_mut().zip(&reorder[k]) {
                dst.append(&scratch[from]);
            }
            produced
        };
    for (b, &range) in batches.iter().enumerate().take(trial_batches) {
        if opts.deadline.expired() {
            return Err(Error::Timeout);
        }
        let k = b % cands.len();
        let produced = route_one(k, range, &mut rels, &mut sink);
        trials[k].tuples += (range.1 - range.0) as u64;
        trials[k].intermediates += produced;
        intermediates += produced;
    }
    let winner = (0..trials.len())
        .min_by(|&a, &b| {
            trials[a]
                .per_tuple()
                .partial_cmp(&trials[b].per_tuple())
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        })
        .expect("at least one candidate");
    for &range in &batches[trial_batches..] {
        if opts.deadline.expired() {
            return Err(Error::Timeout);
        }
        intermediates += route_one(winner, range, &mut rels, &mut sink);
    }
    let peak = rels.iter().map(|r| r.len as u64).sum::<u64>();

    // Tail over the joined tuples.
    let len = sink.first().map_or(0, Column::len);
    let schema = sink_schema
        .iter()
        .map(|(c, t)| OutputColumn {
            name: c.clone(),
            data_type: *t,
            source_table: String::new(),
        })
        .collect();
    let id = catalog.materialize(sink, len, schema)?;
    let residual = QueryShape {
        leaves: vec![Leaf {
            source: LeafSource::Materialized {
                id,
                relations: shape.leaves.iter().flat_map(|l| l.relations()).collect(),
            },
            filters: Vec::new(),
        }],
        joins: Vec::new(),
        tail: shape.tail.clone(),
        output: shape.output.clone(),
    };
    let r_est = SubsetEstimator::new(&residual, catalog)?;
    let label = residual.leaves[0].label();
    let node = plan_region(
        &residual,
        catalog,
        &r_est,
        &JoinTree::Leaf(label),
        &residual.result_columns(),
    )?;
    let tail_plan = finish(&residual, node);
    let (result, tail_metrics) = execute_with_deadline(&tail_plan, catalog, opts.deadline)?;
    // The scan of the joined tuples repeats the last step's output, already counted.
    intermediates += tail_metrics.total_intermediate_tuples
        - tail_metrics.operator_rows.last().copied().unwrap_or(0);
    let exec_ns = start.elapsed_ns();

    let chosen = cands[winner].tree();
    let round = RoundTrace {
        round: 1,
        subplan: 1,
        root: tail_plan.kind().to_string(),
        relations: shape.leaves.iter().flat_map(|l| l.relations()).collect(),
        tree: chosen.clone(),
        est: cands[winner].est_cost,
        est_source: crate::cardinality::EstimateSource::Stats,
        act: result.len as u64,
        candidates: cands.len(),
        intermediate: None,
        rebind: BTreeMap::new(),
    };
    let trace = AqpTrace {
        mode: "router".into(),
        config: None,
        cannot_split: None,
        rounds: vec![round],
        merged_order: Some(chosen),
        totals: RunTotals {
            exec_ns,
            total_intermediate_tuples: intermediates,
            materialized_rows: 0,
            subplan_count: 1,
            peak_rows_materialized: peak,
        },
        explain_split: String::new(),
        router: Some(RouterTrace {
            source,
            source_rows: total as u64,
            trials,
            winner,
        }),
    };
    Ok(RunOutcome {
        result: ResultSet {
            schema: result.schema,
            columns: result.columns,
            len: result.len,
        },
        trace,
        plan: PhysicalPlan { root: tail_plan },
        metrics: tail_metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::TableDef;
    use crate::driver::run_vanilla;
    use crate::sql::parse_query;

    fn catalog() -> Catalog {
        let mut c = Catalog::new();
        let mut add = |def: TableDef, cols: Vec<Column>| {
            let id = c.create_table(def, cols).unwrap();
            c.analyze(id).unwrap();
        };
        add(
            TableDef::new("a", &[("id", DataType::Int64), ("v", DataType::Int64)])
                .with_primary_key("id"),
            vec![
                Column::Int((0..2000).collect()),
                Column::Int((0..2000).map(|i| i % 10).collect()),
            ],
        );
        add(
            TableDef::new("b", &[("id", DataType::Int64), ("a_id", DataType::Int64)])
                .with_primary_key("id"),
            vec![
                Column::Int((0..3000).collect()),
                Column::Int((0..3000).map(|i| i % 2000).collect()),
            ],
        );
        add(
            TableDef::new(
                "c",
                &[
                    ("id", DataType::Int64),
                    ("b_id", DataType::Int64),
                    ("w", DataType::Text),
                ],
            )
            .with_primary_key("id"),
            vec![
                Column::Int((0..1500).collect()),
                Column::Int((0..1500).map(|i| (i * 2) % 3000).collect()),
                Column::Text((0..1500).map(|i| format!("w{}", i % 7).into()).collect()),
            ],
        );
        c
    }

    const Q: &str = "SELECT * FROM a, b, c WHERE b.a_id = a.id AND c.b_id = b.id AND a.v < 5";

    #[test]
    fn chain_with_fixed_source_has_few_orders() {
        let c = catalog();
        let shape = QueryShape::extract(&parse_query(Q, &c).unwrap(), &c).unwrap();
        let est = SubsetEstimator::new(&shape, &c).unwrap();
        let from_a = enumerate_orders(&shape, &est, "a", 4);
        assert_eq!(from_a.len(), 1);
        assert_eq!(from_a[0].order, vec!["a", "b", "c"]);
        let from_b = enumerate_orders(&shape, &est, "b", 4);
        assert_eq!(from_b.len(), 2);
        assert!(from_b[0].est_cost <= from_b[1].est_cost);
        assert!(from_b.iter().all(|o| o.tree().is_left_deep()));
    }

    #[test]
    fn routed_result_matches_vanilla_for_any_budget() {
        for budget in [0.1, 0.5] {
            let mut c = catalog();
            let plan = parse_query(Q, &c).unwrap();
            let golden = run_vanilla(&c, &plan, &RunOptions::default()).unwrap();
            let policy = RoutingPolicy {
                exploration_budget: budget,
                ..RoutingPolicy::default()
            };
            let out = run_router(&mut c, &plan, &policy, &RunOptions::default()).unwrap();
            assert!(out.result.same_rows(&golden.result));
            let rt = out.trace.router.as_ref().unwrap();
            let routed: u64 = rt.trials.iter().map(|t| t.tuples).sum();
            assert!(routed <= rt.source_rows);
            let w = rt.winner;
            assert!(rt
                .trials
                .iter()
                .all(|t| t.per_tuple() >= rt.trials[w].per_tuple()));
        }
    }

    #[test]
    fn aggregates_run_as_a_tail() {
        let mut c = catalog();
        let q =
            "SELECT c.w, COUNT(*) FROM a, b, c WHERE b.a_id = a.id AND c.b_id = b.id GROUP BY c.w";
        let plan = parse_query(q, &c).unwrap();
        let golden = run_vanilla(&c, &plan, &RunOptions::default()).unwrap();
        let out = run_router(
            &mut c,
            &plan,
            &RoutingPolicy::default(),
            &RunOptions::default(),
        )
        .unwrap();
        assert!(out.result.same_rows(&golden.result));
    }

    #[test]
    fn grouping_below_joins_is_rejected() {
        let mut c = catalog();
        let plan = LogicalPlan::new(
            crate::plan::PlanNode::cross(
                crate::plan::PlanNode::Aggregate {
                    group_by: vec![ColumnRef::new("a", "v")],
                    aggregates: vec![],
                    input: Box::new(crate::plan::PlanNode::scan("a", "a")),
                },
                crate::plan::PlanNode::scan("b", "b"),
            ),
            vec![],
        );
        assert!(matches!(
            run_router(
                &mut c,
                &plan,
                &RoutingPolicy::default(),
                &RunOptions::default()
            ),
            Err(Error::NonSpjUnsupported(_))
        ));
    }

    #[test]
    fn policy_bounds() {
        let bad = RoutingPolicy {
            exploration_budget: 0.9,
            ..RoutingPolicy::default()
        };
        assert!(bad.validate().is_err());
        assert!(RoutingPolicy::default().validate().is_ok());
    }
}
