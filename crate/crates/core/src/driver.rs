//! The adaptive loop: split, select, execute, materialize, feed back, repeat.

use std::collections::BTreeMap;
use std::fmt::{self, Write};

use serde::{Deserialize, Serialize};

use crate::cardinality::{apply_feedback, feedback_for, EstimateSource, SubsetEstimator};
use crate::catalog::{Catalog, OutputColumn, TableId};
use crate::clock::{Deadline, Instant};
use crate::error::{Error, Result};
use crate::executor::{execute_with_deadline, ExecMetrics, ResultSet};
use crate::optimizer::{
    best_order, finish, fmt_rows, leaf_labels, optimize_shape, optimize_with_fixed_order,
    plan_region, JoinTree, PhysNode, PhysicalOp, PhysicalPlan,
};
use crate::plan::LogicalPlan;
use crate::query::{Leaf, LeafSource, QueryShape, Tail};
use crate::splitter_dag::{
    dag_for, explain_split as explain_dag_split, orient, split as dag_split,
};
use crate::splitter_tree::{
    explain_candidates, from_order, reorder_joins, select_next, select_positional, split_plan,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Dag,
    Tree,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Dag => "dag",
            Strategy::Tree => "tree",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AqpConfig {
    pub strategy: Strategy,
    pub monitor: bool,
    pub splitter: bool,
    pub selector: bool,
}

impl AqpConfig {
    pub fn all_on(strategy: Strategy) -> AqpConfig {
        AqpConfig {
            strategy,
            monitor: true,
            splitter: true,
            selector: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategy == Strategy::Dag && !self.selector {
            return Err(Error::SelectorNotDisableable);
        }
        Ok(())
    }
}

impl fmt::Display for AqpConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = |b: bool| if b { "on" } else { "off" };
        write!(
            f,
            "strategy={} monitor={} splitter={} selector={}",
            self.strategy.name(),
            s(self.monitor),
            s(self.splitter),
            s(self.selector)
        )
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub deadline: Deadline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    pub subplan: usize,
    /// Operator kind at the fragment root.
    pub root: String,
    /// Base relations covered.
    pub relations: Vec<String>,
    /// Join tree over the leaves current at this round (`#id` for intermediates).
    pub tree: JoinTree,
    pub est: f64,
    pub est_source: EstimateSource,
    pub act: u64,
    pub candidates: usize,
    /// Intermediate the fragment was stored as; none for the final round.
    pub intermediate: Option<TableId>,
    /// Relations whose columns now resolve to the new intermediate.
    pub rebind: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTotals {
    /// Execution time only (no parsing or planning).
    pub exec_ns: u64,
    pub total_intermediate_tuples: u64,
    pub materialized_rows: u64,
    pub subplan_count: usize,
    pub peak_rows_materialized: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AqpTrace {
    pub mode: String,
    pub config: Option<AqpConfig>,
    /// Why the DAG strategy fell back to plain execution.
    pub cannot_split: Option<String>,
    pub rounds: Vec<RoundTrace>,
    /// Join order of the whole query with every intermediate expanded.
    pub merged_order: Option<JoinTree>,
    pub totals: RunTotals,
    #[serde(default)]
    pub explain_split: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub router: Option<crate::router::RouterTrace>,
}

impl AqpTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("traces serialize")
    }

    pub fn from_json(text: &str) -> Result<AqpTrace> {
        Ok(serde_json::from_str(text)?)
    }

    /// EXPLAIN ADAPTIVE: one line per round.
    pub fn explain_adaptive(&self) -> String {
        let mut out = String::new();
        if let Some(reason) = &self.cannot_split {
            let _ = writeln!(out, "CannotSplit: {reason}");
        }
        for r in &self.rounds {
            let _ = writeln!(
                out,
                "round {}: subplan #{} root={} est={} act={}",
                r.round,
                r.subplan,
                r.root,
                fmt_rows(r.est),
                r.act
            );
        }
        if let Some(t) = &self.merged_order {
            let _ = writeln!(out, "merged order: {t}");
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub result: ResultSet,
    pub trace: AqpTrace,
    /// The plan executed last (the merged plan when the splitter is off).
    pub plan: PhysicalPlan,
    pub metrics: ExecMetrics,
}

pub fn run_vanilla(catalog: &Catalog, plan: &LogicalPlan, opts: &RunOptions) -> Result<RunOutcome> {
    let shape = QueryShape::extract(plan, catalog)?;
    let phys = optimize_shape(&shape, catalog)?;
    single_run(catalog, phys, "vanilla", opts)
}

/// Executes the query with exactly the given join order.
pub fn run_fixed_order(
    catalog: &Catalog,
    plan: &LogicalPlan,
    order: &JoinTree,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    let phys = optimize_with_fixed_order(plan, order, catalog)?;
    single_run(catalog, phys, "vanilla-fixed-order", opts)
}

fn single_run(
    catalog: &Catalog,
    phys: PhysicalPlan,
    mode: &str,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    let start = Instant::now();
    let (result, metrics) = execute_with_deadline(&phys.root, catalog, opts.deadline)?;
    let exec_ns = start.elapsed_ns();
    let tree = phys.join_tree().expect("plans have a join region");
    let round = RoundTrace {
        round: 1,
        subplan: 1,
        root: phys.root.kind().to_string(),
        relations: phys.root.relations(),
        tree: tree.clone(),
        est: phys.root.estimate.rows,
        est_source: phys.root.estimate.source,
        act: result.len as u64,
        candidates: 1,
        intermediate: None,
        rebind: BTreeMap::new(),
    };
    let trace = AqpTrace {
        mode: mode.to_string(),
        config: None,
        cannot_split: None,
        rounds: vec![round],
        merged_order: Some(tree),
        totals: RunTotals {
            exec_ns,
            total_intermediate_tuples: metrics.total_intermediate_tuples,
            materialized_rows: 0,
            subplan_count: 1,
            peak_rows_materialized: metrics.peak_rows_materialized,
        },
        explain_split: String::new(),
        router: None,
    };
    Ok(RunOutcome {
        result,
        trace,
        plan: phys,
        metrics,
    })
}

/// Runs the adaptive loop. Intermediates created on the way are dropped before
/// returning, whether or not the run succeeds.
pub fn run_adaptive(
    catalog: &mut Catalog,
    plan: &LogicalPlan,
    cfg: AqpConfig,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let out = Adaptive::new(catalog, plan, cfg, opts).and_then(|a| a.run());
    catalog.drop_intermediates();
    out
}

struct Fragment {
    plan: PhysNode,
    mask: u64,
    tree: JoinTree,
    candidates: usize,
}

struct Adaptive<'a> {
    catalog: &'a mut Catalog,
    cfg: AqpConfig,
    opts: RunOptions,
    shape: QueryShape,
    alias_table: BTreeMap<String, String>,
    rounds: Vec<RoundTrace>,
    fragments: Vec<(TableId, PhysNode, JoinTree)>,
    totals: RunTotals,
    cannot_split: Option<String>,
    explain_split: String,
    oriented: Option<Vec<crate::splitter_dag::OrientedJoin>>,
}

impl<'a> Adaptive<'a> {
    fn new(
        catalog: &'a mut Catalog,
        plan: &LogicalPlan,
        cfg: AqpConfig,
        opts: &RunOptions,
    ) -> Result<Adaptive<'a>> {
        let shape = QueryShape::extract(plan, catalog)?;
        let alias_table = shape
            .leaves
            .iter()
            .filter_map(|l| match &l.source {
                LeafSource::Scan { table, alias } => Some((alias.clone(), table.clone())),
                LeafSource::Materialized { .. } => None,
            })
            .collect();
        let mut cannot_split = None;
        let oriented = if cfg.strategy == Strategy::Dag {
            match orient(&shape, catalog) {
                Ok(o) => Some(o),
                Err(e @ Error::NotOrientable { .. }) => {
                    cannot_split = Some(e.to_string());
                    None
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        Ok(Adaptive {
            catalog,
            cfg,
            opts: *opts,
            shape,
            alias_table,
            rounds: Vec::new(),
            fragments: Vec::new(),
            totals: RunTotals::default(),
            cannot_split,
            explain_split: String::new(),
            oriented,
        })
    }

    fn all_mask(&self) -> u64 {
        let n = self.shape.leaves.len();
        if n == 64 {
            u64::MAX
        } else {
            (1u64 << n) - 1
        }
    }

    /// Picks the next fragment, or returns the plan for the final round.
    fn choose(&mut self, est: &SubsetEstimator) -> Result<std::result::Result<Fragment, PhysNode>> {
        let round = self.rounds.len() + 1;
        let labels = leaf_labels(&self.shape);
        let outputs = self.shape.result_columns();
        match self.cfg.strategy {
            Strategy::Tree => {
                let tree = if !self.cfg.selector {
                    from_order(&self.shape)
                } else if round == 1 {
                    reorder_joins(&self.shape, self.catalog)?
                } else {
                    best_order(est, &labels).tree
                };
                let region = plan_region(&self.shape, self.catalog, est, &tree, &outputs)?;
                let cands = split_plan(&region);
                let chosen = if self.cfg.selector {
                    select_next(&cands)
                } else {
                    select_positional(&cands)
                };
                if round == 1 {
                    self.explain_split = explain_candidates(&tree, &cands, chosen);
                }
                match chosen {
                    Some(i) if cands[i].mask(&self.shape) != self.all_mask() => {
                        let c = &cands[i];
                        Ok(Ok(Fragment {
                            mask: c.mask(&self.shape),
                            plan: c.plan.clone(),
                            tree: c.tree.clone(),
                            candidates: cands.len(),
                        }))
                    }
                    _ => Ok(Err(region)),
                }
            }
            Strategy::Dag => {
                let vanilla = |me: &Self| -> Result<PhysNode> {
                    let order = best_order(est, &labels);
                    plan_region(&me.shape, me.catalog, est, &order.tree, &outputs)
                };
                let Some(oriented) = &self.oriented else {
                    return Ok(Err(vanilla(self)?));
                };
                let dag = dag_for(&self.shape, oriented);
                let sp = dag_split(&dag, est, &self.shape);
                if round == 1 {
                    self.explain_split = explain_dag_split(&dag, &sp);
                    if sp.cannot_split {
                        self.cannot_split =
                            Some("no relation is referenced by two or more others".into());
                    }
                }
                let Some(first) = sp.subplans.first() else {
                    return Ok(Err(vanilla(self)?));
                };
                let plan = self.plan_subset(est, first.mask)?;
                Ok(Ok(Fragment {
                    mask: first.mask,
                    tree: plan.join_tree().expect("join region"),
                    plan,
                    candidates: sp.subplans.len(),
                }))
            }
        }
    }

    /// Plans the leaves in `mask` on their own, keeping the columns the rest of
    /// the query needs.
    fn plan_subset(&self, est: &SubsetEstimator, mask: u64) -> Result<PhysNode> {
        let idx: Vec<usize> = (0..self.shape.leaves.len())
            .filter(|i| mask & (1 << i) != 0)
            .collect();
        let leaves: Vec<Leaf> = idx.iter().map(|&i| self.shape.leaves[i].clone()).collect();
        let covered = |rel: &str| leaves.iter().any(|l| l.covers(rel));
        let mut outputs = self.shape.result_columns();
        let mut joins = Vec::new();
        for j in &self.shape.joins {
            match (covered(&j.left.relation), covered(&j.right.relation)) {
                (true, true) => joins.push(j.clone()),
                (true, false) => {
                    outputs.insert(j.left.clone());
                }
                (false, true) => {
                    outputs.insert(j.right.clone());
                }
                (false, false) => {}
            }
        }
        let sub = QueryShape {
            leaves,
            joins,
            tail: Tail::None,
            output: Vec::new(),
        };
        let sub_est =
            SubsetEstimator::from_parts(&sub, idx.iter().map(|&i| est.leaves[i].clone()).collect());
        let order = best_order(&sub_est, &leaf_labels(&sub));
        plan_region(&sub, self.catalog, &sub_est, &order.tree, &outputs)
    }

    fn execute_fragment(&mut self, est: &SubsetEstimator, frag: Fragment) -> Result<()> {
        let round = self.rounds.len() + 1;
        let start = Instant::now();
        let (rs, m) = execute_with_deadline(&frag.plan, self.catalog, self.opts.deadline)?;
        self.totals.total_intermediate_tuples += m.operator_rows.iter().sum::<u64>();
        self.totals.peak_rows_materialized = self
            .totals
            .peak_rows_materialized
            .max(m.peak_rows_materialized);
        let rows = rs.len;
        let schema = rs
            .schema
            .iter()
            .map(|(c, t)| OutputColumn {
                name: c.clone(),
                data_type: *t,
                source_table: self
                    .alias_table
                    .get(&c.relation)
                    .cloned()
                    .unwrap_or_default(),
            })
            .collect();
        let id = self.catalog.materialize(rs.columns, rows, schema)?;
        if self.cfg.monitor {
            let fb = feedback_for(self.catalog, id)?;
            apply_feedback(self.catalog, fb)?;
        } else {
            self.catalog
                .intermediate_mut(id)
                .expect("just created")
                .prior = Some(est.rel_estimate(frag.mask));
        }
        self.totals.exec_ns += start.elapsed_ns();
        self.totals.materialized_rows += rows as u64;

        let mut relations = Vec::new();
        let mut leaves = Vec::new();
        let mut inserted = false;
        for (i, l) in self.shape.leaves.iter().enumerate() {
            if frag.mask & (1 << i) != 0 {
                relations.extend(l.relations());
                if !inserted {
                    leaves.push(Leaf {
                        source: LeafSource::Materialized {
                            id,
                            relations: Vec::new(),
                        },
                        filters: Vec::new(),
                    });
                    inserted = true;
                }
            } else {
                leaves.push(l.clone());
            }
        }
        for l in &mut leaves {
            if let LeafSource::Materialized {
                id: lid,
                relations: rels,
            } = &mut l.source
            {
                if *lid == id {
                    *rels = relations.clone();
                }
            }
        }
        self.shape.leaves = leaves;
        self.rounds.push(RoundTrace {
            round,
            subplan: round,
            root: root_kind(&frag.plan).to_string(),
            rebind: relations
                .iter()
                .map(|r| (r.clone(), format!("#{id}")))
                .collect(),
            relations,
            tree: frag.tree.clone(),
            est: frag.plan.estimate.rows,
            est_source: frag.plan.estimate.source,
            act: rows as u64,
            candidates: frag.candidates,
            intermediate: Some(id),
        });
        self.fragments.push((id, frag.plan, frag.tree));
        Ok(())
    }

    fn run(mut self) -> Result<RunOutcome> {
        let region = loop {
            let est = SubsetEstimator::new(&self.shape, self.catalog)?;
            match self.choose(&est)? {
                Ok(frag) => self.execute_fragment(&est, frag)?,
                Err(region) => break region,
            }
        };
        let final_tree = region.join_tree().expect("join region");
        let residual = finish(&self.shape, region);
        let executed = if self.cfg.splitter {
            residual.clone()
        } else {
            merge_subplans(&residual, &self.fragments)?
        };
        let start = Instant::now();
        let (result, metrics) = execute_with_deadline(&executed, self.catalog, self.opts.deadline)?;
        let elapsed = start.elapsed_ns();
        if self.cfg.splitter {
            self.totals.exec_ns += elapsed;
            self.totals.total_intermediate_tuples += metrics.total_intermediate_tuples;
            self.totals.peak_rows_materialized = self
                .totals
                .peak_rows_materialized
                .max(metrics.peak_rows_materialized);
        } else {
            self.totals.exec_ns = elapsed;
            self.totals.total_intermediate_tuples = metrics.total_intermediate_tuples;
            self.totals.materialized_rows = 0;
            self.totals.peak_rows_materialized = metrics.peak_rows_materialized;
        }
        let round = self.rounds.len() + 1;
        self.rounds.push(RoundTrace {
            round,
            subplan: round,
            root: residual.kind().to_string(),
            relations: residual.relations(),
            tree: final_tree.clone(),
            est: residual.estimate.rows,
            est_source: residual.estimate.source,
            act: result.len as u64,
            candidates: 1,
            intermediate: None,
            rebind: BTreeMap::new(),
        });
        self.totals.subplan_count = self.rounds.len();
        let merged_order = expand_tree(&final_tree, &self.fragments);
        let mode = match self.cfg.strategy {
            Strategy::Dag => "aqp-dag",
            Strategy::Tree => "aqp-tree",
        };
        Ok(RunOutcome {
            result,
            trace: AqpTrace {
                mode: mode.to_string(),
                config: Some(self.cfg),
                cannot_split: self.cannot_split,
                rounds: self.rounds,
                merged_order: Some(merged_order),
                totals: self.totals,
                explain_split: self.explain_split,
                router: None,
            },
            plan: PhysicalPlan { root: executed },
            metrics,
        })
    }
}

fn root_kind(plan: &PhysNode) -> &'static str {
    match plan.op {
        PhysicalOp::HashJoin { .. } | PhysicalOp::CrossProduct { .. } => "Join",
        _ => plan.kind(),
    }
}

fn expand_tree(tree: &JoinTree, fragments: &[(TableId, PhysNode, JoinTree)]) -> JoinTree {
    let mut t = tree.clone();
    for (id, _, sub) in fragments.iter().rev() {
        t = t.substitute(&format!("#{id}"), sub);
    }
    t
}

/// Replaces every materialized scan with the fragment that produced it,
/// recursively, yielding one plan that computes the same result in one pass.
pub fn merge_subplans(
    plan: &PhysNode,
    fragments: &[(TableId, PhysNode, JoinTree)],
) -> Result<PhysNode> {
    if let PhysicalOp::MaterializedScan { id, .. } = &plan.op {
        let (_, frag, _) = fragments
            .iter()
            .find(|(fid, _, _)| fid == id)
            .ok_or(Error::DanglingIntermediate(*id))?;
        return merge_subplans(frag, fragments);
    }
    let mut out = plan.clone();
    for child in out.children_mut() {
        *child = merge_subplans(child, fragments)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::TableDef;
    use crate::sql::parse_query;
    use crate::types::{Column, DataType};

    fn catalog() -> Catalog {
        let mut c = Catalog::new();
        let mut add = |def: TableDef, cols: Vec<Column>| {
            let id = c.create_table(def, cols).unwrap();
            c.analyze(id).unwrap();
        };
        add(
            TableDef::new("t", &[("id", DataType::Int64), ("year", DataType::Int64)])
                .with_primary_key("id"),
            vec![
                Column::Int((0..500).collect()),
                Column::Int((0..500).map(|i| 1990 + i % 30).collect()),
            ],
        );
        add(
            TableDef::new("k", &[("id", DataType::Int64), ("kw", DataType::Int64)])
                .with_primary_key("id"),
            vec![
                Column::Int((0..50).collect()),
                Column::Int((0..50).collect()),
            ],
        );
        add(
            TableDef::new("n", &[("id", DataType::Int64), ("g", DataType::Int64)])
                .with_primary_key("id"),
            vec![
                Column::Int((0..80).collect()),
                Column::Int((0..80).map(|i| i % 2).collect()),
            ],
        );
        add(
            TableDef::new(
                "mk",
                &[
                    ("id", DataType::Int64),
                    ("t_id", DataType::Int64),
                    ("k_id", DataType::Int64),
                ],
            )
            .with_primary_key("id")
            .with_foreign_key("t_id", "t", "id")
            .with_foreign_key("k_id", "k", "id"),
            vec![
                Column::Int((0..2000).collect()),
                Column::Int((0..2000).map(|i| (i * 7) % 500).collect()),
                Column::Int((0..2000).map(|i| (i * i) % 50).collect()),
            ],
        );
        add(
            TableDef::new(
                "ci",
                &[
                    ("id", DataType::Int64),
                    ("t_id", DataType::Int64),
                    ("n_id", DataType::Int64),
                ],
            )
            .with_primary_key("id")
            .with_foreign_key("t_id", "t", "id")
            .with_foreign_key("n_id", "n", "id"),
            vec![
                Column::Int((0..3000).collect()),
                Column::Int((0..3000).map(|i| (i * 13) % 500).collect()),
                Column::Int((0..3000).map(|i| i % 80).collect()),
            ],
        );
        c
    }

    const Q: &str = "SELECT COUNT(*), MIN(t.year) FROM t, mk, k, ci, n WHERE mk.t_id = t.id AND mk.k_id = k.id \
                     AND ci.t_id = t.id AND ci.n_id = n.id AND k.kw < 5 AND n.g = 1";

    fn configs() -> Vec<AqpConfig> {
        let mut v = Vec::new();
        for strategy in [Strategy::Dag, Strategy::Tree] {
            for bits in 0..8u8 {
                let cfg = AqpConfig {
                    strategy,
                    monitor: bits & 1 != 0,
                    splitter: bits & 2 != 0,
                    selector: bits & 4 != 0,
                };
                if cfg.validate().is_ok() {
                    v.push(cfg);
                }
            }
        }
        v
    }

    #[test]
    fn every_configuration_matches_vanilla() {
        let mut c = catalog();
        let plan = parse_query(Q, &c).unwrap();
        let golden = run_vanilla(&c, &plan, &RunOptions::default()).unwrap();
        for cfg in configs() {
            let out = run_adaptive(&mut c, &plan, cfg, &RunOptions::default()).unwrap();
            assert!(out.result.same_rows(&golden.result), "{cfg}");
            assert_eq!(c.intermediates().count(), 0);
        }
    }

    #[test]
    fn dag_runs_two_subplans_then_assembly() {
        let mut c = catalog();
        let plan = parse_query(Q, &c).unwrap();
        let out = run_adaptive(
            &mut c,
            &plan,
            AqpConfig::all_on(Strategy::Dag),
            &RunOptions::default(),
        )
        .unwrap();
        let t = &out.trace;
        assert!(t.cannot_split.is_none());
        assert_eq!(t.rounds.len(), 3);
        assert_eq!(t.rounds[2].root, "Aggregate");
        let text = t.explain_adaptive();
        assert!(
            text.starts_with("round 1: subplan #1 root=Join est="),
            "{text}"
        );
    }

    #[test]
    fn dag_selector_off_is_rejected() {
        let mut c = catalog();
        let plan = parse_query(Q, &c).unwrap();
        let cfg = AqpConfig {
            selector: false,
            ..AqpConfig::all_on(Strategy::Dag)
        };
        assert!(matches!(
            run_adaptive(&mut c, &plan, cfg, &RunOptions::default()),
            Err(Error::SelectorNotDisableable)
        ));
    }

    #[test]
    fn merged_plan_has_fewer_intermediates_and_same_order() {
        let mut c = catalog();
        let plan = parse_query(Q, &c).unwrap();
        let split = run_adaptive(
            &mut c,
            &plan,
            AqpConfig::all_on(Strategy::Tree),
            &RunOptions::default(),
        )
        .unwrap();
        let cfg = AqpConfig {
            splitter: false,
            ..AqpConfig::all_on(Strategy::Tree)
        };
        let merged = run_adaptive(&mut c, &plan, cfg, &RunOptions::default()).unwrap();
        assert!(split.trace.rounds.len() > 1);
        assert_eq!(split.trace.merged_order, merged.trace.merged_order);
        assert_eq!(merged.plan.join_tree(), merged.trace.merged_order);
        assert!(
            merged.trace.totals.total_intermediate_tuples
                < split.trace.totals.total_intermediate_tuples
        );
        assert_eq!(merged.trace.totals.materialized_rows, 0);
        assert!(split.trace.totals.materialized_rows > 0);
        let replay = run_fixed_order(
            &c,
            &plan,
            merged.trace.merged_order.as_ref().unwrap(),
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(replay.plan.join_tree(), merged.plan.join_tree());
        assert!(replay.result.same_rows(&split.result));
    }

    #[test]
    fn round_one_is_independent_of_monitor() {
        let mut c = catalog();
        let plan = parse_query(Q, &c).unwrap();
        for strategy in [Strategy::Dag, Strategy::Tree] {
            let on = run_adaptive(
                &mut c,
                &plan,
                AqpConfig::all_on(strategy),
                &RunOptions::default(),
            )
            .unwrap();
            let cfg = AqpConfig {
                monitor: false,
                ..AqpConfig::all_on(strategy)
            };
            let off = run_adaptive(&mut c, &plan, cfg, &RunOptions::default()).unwrap();
            assert_eq!(on.trace.rounds[0].tree, off.trace.rounds[0].tree);
        }
    }

    #[test]
    fn monitor_feedback_is_exact() {
        let mut c = catalog();
        let plan = parse_query(Q, &c).unwrap();
        let out = run_adaptive(
            &mut c,
            &plan,
            AqpConfig::all_on(Strategy::Tree),
            &RunOptions::default(),
        )
        .unwrap();
        // A later round that reads an intermediate alone sees its exact size.
        for r in &out.trace.rounds {
            if r.tree.leaf_count() == 1 && r.tree.leaves()[0].starts_with('#') {
                let prev = out
                    .trace
                    .rounds
                    .iter()
                    .find(|p| {
                        p.intermediate.map(|id| format!("#{id}")).as_deref()
                            == Some(r.tree.leaves()[0])
                    })
                    .unwrap();
                assert_eq!(r.est, prev.act as f64);
            }
        }
        let json = out.trace.to_json();
        assert_eq!(AqpTrace::from_json(&json).unwrap(), out.trace);
    }

    #[test]
    fn merge_reports_dangling_ids() {
        let c = catalog();
        let plan = parse_query("SELECT * FROM t", &c).unwrap();
        let mut phys = crate::optimizer::optimize(&plan, &c).unwrap();
        let scan = phys.root.children_mut().pop().unwrap();
        scan.op = PhysicalOp::MaterializedScan {
            id: TableId(4242),
            relations: vec!["t".into()],
            projection: vec![],
        };
        assert!(matches!(
            merge_subplans(&phys.root, &[]),
            Err(Error::DanglingIntermediate(TableId(4242)))
        ));
    }
}
