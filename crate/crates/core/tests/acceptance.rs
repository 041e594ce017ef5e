//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any exact criterion fails. The two directional criteria (4 and 7) are
//! reported but do not fail the run; see the README for the measured numbers.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Duration;

use aqplab_core::bench::{self, cells, run_cell, BenchConfig, Matrix, Mode, WorkloadQuery};
use aqplab_core::cardinality::SubsetEstimator;
use aqplab_core::catalog::Catalog;
use aqplab_core::driver::{
    run_adaptive, run_fixed_order, run_vanilla, AqpConfig, RunOptions, RunOutcome, Strategy,
};
use aqplab_core::optimizer::{best_order, leaf_labels};
use aqplab_core::plan::LogicalPlan;
use aqplab_core::plan_json::json_to_plan;
use aqplab_core::query::QueryShape;
use aqplab_core::router::{run_router, RoutingPolicy};
use aqplab_core::splitter_dag::{build_dag, find_split_points, split};
use aqplab_core::sql::parse_query;
use aqplab_core::workload::{generate, GenSpec, Preset, Workload};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

struct Loaded {
    workload: Workload,
    catalog: Catalog,
    plans: Vec<LogicalPlan>,
}

fn load(preset: Preset, scale: u32) -> Loaded {
    let workload = generate(&GenSpec::new(preset, scale, 42)).expect("generate");
    let catalog = workload.catalog().expect("catalog");
    let plans = workload
        .queries
        .iter()
        .map(|q| parse_query(&q.sql, &catalog).expect("parse"))
        .collect();
    Loaded {
        workload,
        catalog,
        plans,
    }
}

fn queries(w: &Workload) -> Vec<WorkloadQuery> {
    w.queries
        .iter()
        .map(|q| WorkloadQuery {
            name: q.name.clone(),
            sql: q.sql.clone(),
        })
        .collect()
}

fn opts() -> RunOptions {
    RunOptions::default()
}

fn tree(monitor: bool) -> AqpConfig {
    let mut c = AqpConfig::all_on(Strategy::Tree);
    c.monitor = monitor;
    c
}

fn inter(o: &RunOutcome) -> u64 {
    o.trace.totals.total_intermediate_tuples
}

fn golden_correctness() -> Verdict {
    let mut checks = 0;
    let mut bad = Vec::new();
    let mut n_queries = 0;
    let mut rel_range = (usize::MAX, 0);
    let mut row_range = (usize::MAX, 0);
    for preset in [Preset::Chain, Preset::Star, Preset::Correlated] {
        let mut l = load(preset, 1);
        n_queries += l.workload.queries.len();
        for q in &l.workload.manifest.queries {
            rel_range = (rel_range.0.min(q.relations), rel_range.1.max(q.relations));
        }
        for t in &l.workload.manifest.tables {
            row_range = (row_range.0.min(t.rows), row_range.1.max(t.rows));
        }
        for line in bench::verify(&mut l.catalog, &queries(&l.workload)).expect("verify") {
            checks += 1;
            if !line.ok {
                bad.push(format!("{}:{} {}", preset.name(), line.query, line.cell));
            }
        }
    }
    verdict(
        bad.is_empty() && n_queries >= 20,
        format!(
            "{checks} mode x toggle checks over {n_queries} queries ({}-{} relations, tables {}-{} rows), {} mismatches {:?}",
            rel_range.0,
            rel_range.1,
            row_range.0,
            row_range.1,
            bad.len(),
            bad
        ),
    )
}

fn fig2_split() -> Verdict {
    let l = load(Preset::Fig2, 1);
    let fixture = json_to_plan(include_str!("fixtures/fig2.plan.json")).expect("fixture parses");
    let mut details = Vec::new();
    let mut pass = true;
    for (name, plan) in [("sql", &l.plans[0]), ("plan.json", &fixture)] {
        let shape = QueryShape::extract(plan, &l.catalog).unwrap();
        let dag = build_dag(&shape, &l.catalog).unwrap();
        let points: Vec<&str> = find_split_points(&dag)
            .iter()
            .map(|&v| dag.vertices[v].as_str())
            .collect();
        let est = SubsetEstimator::new(&shape, &l.catalog).unwrap();
        let s = split(&dag, &est, &shape);
        let ests: Vec<f64> = s.subplans.iter().map(|p| p.estimate.rows).collect();
        let ascending = ests.windows(2).all(|w| w[0] <= w[1]);
        let ok = dag.in_degree_of("t") == Some(3)
            && points == ["t"]
            && s.subplans.len() == 3
            && ascending;
        pass &= ok;
        details.push(format!(
            "{name}: in-degree(t)={:?} split points {:?} sub-plans {} estimates {:?}",
            dag.in_degree_of("t"),
            points,
            s.subplans.len(),
            ests.iter().map(|e| e.round()).collect::<Vec<_>>()
        ));
    }
    verdict(pass, details.join("; "))
}

fn oracles() -> Verdict {
    // (a) DP against exhaustive enumeration.
    let mut compared = 0;
    let mut dp_bad = Vec::new();
    for preset in [
        Preset::Chain,
        Preset::Star,
        Preset::Correlated,
        Preset::Uniform,
    ] {
        let l = load(preset, 1);
        for (q, plan) in l.workload.queries.iter().zip(&l.plans) {
            let shape = QueryShape::extract(plan, &l.catalog).unwrap();
            if shape.leaves.len() > 6 {
                continue;
            }
            let est = SubsetEstimator::new(&shape, &l.catalog).unwrap();
            let dp = best_order(&est, &leaf_labels(&shape)).cost;
            let ex = common::exhaustive_min_cout(&est);
            compared += 1;
            if (dp - ex).abs() > 1e-9 * ex.max(1.0) {
                dp_bad.push(format!(
                    "{}:{} dp={dp} exhaustive={ex}",
                    preset.name(),
                    q.name
                ));
            }
        }
    }
    // (b) executor against nested loops, tables up to 2,000 rows.
    let mut exec_checked = 0;
    let mut exec_bad = Vec::new();
    for seed in 0..6u64 {
        let mut cat = common::random_db(seed, [300, 2000, 800, 1500]);
        for k in 0..4u64 {
            let sql = common::random_query(seed * 16 + k);
            let shape = QueryShape::extract(&parse_query(&sql, &cat).unwrap(), &cat).unwrap();
            let expected = common::nested_loop(&shape, &cat);
            let fixed = bench::recorded_order(&mut cat, &sql).unwrap();
            for cell in cells(&Mode::ALL, Matrix::Minimal) {
                let (out, _) = run_cell(&mut cat, &sql, &cell, Some(&fixed), &opts()).unwrap();
                exec_checked += 1;
                if out.result.sorted_rows() != expected {
                    exec_bad.push(format!("{} on {sql}", cell.label()));
                }
            }
        }
    }
    // (c) analyze distinct counts against sort-dedup.
    let mut cols = 0;
    let mut nd_bad = Vec::new();
    for preset in [
        Preset::Correlated,
        Preset::Star,
        Preset::Chain,
        Preset::Fig2,
    ] {
        let l = load(preset, 1);
        for t in l.catalog.tables() {
            let stats = t.stats.as_ref().unwrap();
            for (i, (c, s)) in t.columns.iter().zip(&stats.columns).enumerate() {
                cols += 1;
                if s.distinct_count != common::sort_dedup_distinct(c) {
                    nd_bad.push(format!("{}.{}", t.def.name, t.def.columns[i].name));
                }
            }
        }
    }
    verdict(
        dp_bad.is_empty() && exec_bad.is_empty() && nd_bad.is_empty(),
        format!(
            "(a) {compared} queries, {} Cout mismatches {dp_bad:?}; (b) {exec_checked} runs, {} result mismatches {exec_bad:?}; (c) {cols} columns, {} distinct mismatches {nd_bad:?}",
            dp_bad.len(),
            exec_bad.len(),
            nd_bad.len()
        ),
    )
}

struct CorrelatedRuns {
    joins: Vec<usize>,
    vanilla: Vec<u64>,
    on: Vec<u64>,
    off: Vec<u64>,
    router: Vec<u64>,
}

fn correlated_runs(l: &mut Loaded) -> CorrelatedRuns {
    let mut r = CorrelatedRuns {
        joins: Vec::new(),
        vanilla: Vec::new(),
        on: Vec::new(),
        off: Vec::new(),
        router: Vec::new(),
    };
    for (q, plan) in l.workload.manifest.queries.iter().zip(&l.plans) {
        r.joins.push(q.joins);
        r.vanilla
            .push(inter(&run_vanilla(&l.catalog, plan, &opts()).unwrap()));
        r.on.push(inter(
            &run_adaptive(&mut l.catalog, plan, tree(true), &opts()).unwrap(),
        ));
        r.off.push(inter(
            &run_adaptive(&mut l.catalog, plan, tree(false), &opts()).unwrap(),
        ));
        r.router.push(inter(
            &run_router(&mut l.catalog, plan, &RoutingPolicy::default(), &opts()).unwrap(),
        ));
    }
    r
}

fn monitor_effect(r: &CorrelatedRuns) -> Verdict {
    let n = r.on.len();
    let halved =
        r.on.iter()
            .zip(&r.off)
            .filter(|(on, off)| (**on as f64) <= 0.5 * **off as f64)
            .count();
    let worse =
        r.on.iter()
            .zip(&r.off)
            .filter(|(on, off)| (**on as f64) > 1.1 * **off as f64)
            .count();
    let ratios: Vec<String> =
        r.on.iter()
            .zip(&r.off)
            .map(|(on, off)| format!("{:.2}", *on as f64 / *off as f64))
            .collect();
    verdict(
        halved * 10 >= n * 6 && worse == 0,
        format!(
            "monitor on <= 0.5x off on {halved}/{n} queries (need {}), > 1.1x on {worse}; on/off ratios [{}]",
            (n * 6).div_ceil(10),
            ratios.join(" ")
        ),
    )
}

fn splitter_overhead() -> Verdict {
    let mut l = load(Preset::Correlated, 60);
    let mut multi = 0;
    let mut fewer = 0;
    let mut timed = 0;
    let mut faster = 0;
    for plan in &l.plans {
        let mut merged_cfg = tree(true);
        merged_cfg.splitter = false;
        let mut split_ns = Vec::new();
        let mut merged_ns = Vec::new();
        let mut split_mat = 0;
        let mut merged_mat = 0;
        let mut rounds = 0;
        for _ in 0..3 {
            let s = run_adaptive(&mut l.catalog, plan, tree(true), &opts()).unwrap();
            let m = run_adaptive(&mut l.catalog, plan, merged_cfg, &opts()).unwrap();
            split_ns.push(s.trace.totals.exec_ns);
            merged_ns.push(m.trace.totals.exec_ns);
            split_mat = s.trace.totals.materialized_rows;
            merged_mat = m.trace.totals.materialized_rows;
            rounds = s.trace.rounds.len();
        }
        split_ns.sort_unstable();
        merged_ns.sort_unstable();
        if rounds > 1 {
            multi += 1;
            fewer += usize::from(merged_mat < split_mat);
        }
        if split_ns[1] >= 50_000_000 {
            timed += 1;
            faster += usize::from(merged_ns[1] <= split_ns[1]);
        }
    }
    let time_ok = timed == 0 || faster * 10 >= timed * 8;
    verdict(
        fewer == multi && time_ok,
        format!(
            "materialized rows lower when merged on {fewer}/{multi} multi-round queries; merged exec <= split on {faster}/{timed} queries with split exec >= 50 ms (median of 3, scale 60)"
        ),
    )
}

fn fixed_order_replay() -> Verdict {
    let mut checked = 0;
    let mut bad = Vec::new();
    for preset in [Preset::Correlated, Preset::Fig2, Preset::Chain] {
        let mut l = load(preset, 1);
        for (q, plan) in l.workload.queries.iter().zip(&l.plans) {
            let golden = run_vanilla(&l.catalog, plan, &opts()).unwrap();
            for monitor in [true, false] {
                let aqp = run_adaptive(&mut l.catalog, plan, tree(monitor), &opts()).unwrap();
                let order = aqp.trace.merged_order.clone().unwrap();
                let mut merged_cfg = tree(monitor);
                merged_cfg.splitter = false;
                let merged = run_adaptive(&mut l.catalog, plan, merged_cfg, &opts()).unwrap();
                let replay = run_fixed_order(&l.catalog, plan, &order, &opts()).unwrap();
                checked += 1;
                let same_tree = replay.plan.join_tree() == merged.plan.join_tree()
                    && replay.plan.join_tree().as_ref() == Some(&order);
                if !same_tree || !replay.result.same_rows(&golden.result) {
                    bad.push(format!("{}:{} monitor={monitor}", preset.name(), q.name));
                }
            }
        }
    }
    verdict(
        bad.is_empty(),
        format!("{checked} replays, {} differ {bad:?}", bad.len()),
    )
}

fn plan_vs_relation(r: &CorrelatedRuns) -> Verdict {
    let idx: Vec<usize> = (0..r.joins.len()).filter(|&i| r.joins[i] >= 6).collect();
    let n = idx.len();
    let tree_le = idx.iter().filter(|&&i| r.on[i] <= r.router[i]).count();
    let both = idx
        .iter()
        .filter(|&&i| r.on[i] < r.vanilla[i] && r.router[i] < r.vanilla[i])
        .count();
    let rows: Vec<String> = idx
        .iter()
        .map(|&i| format!("{}/{}/{}", r.vanilla[i], r.on[i], r.router[i]))
        .collect();
    verdict(
        n > 0 && tree_le * 10 >= n * 7 && both * 10 >= n * 6,
        format!(
            "{n} queries with >= 6 joins: tree <= router on {tree_le} (need {}), both < vanilla on {both} (need {}); vanilla/tree/router [{}]",
            (n * 7).div_ceil(10),
            (n * 6).div_ceil(10),
            rows.join(" ")
        ),
    )
}

fn star_limitation() -> Verdict {
    let mut l = load(Preset::Star, 1);
    let n = l.plans.len();
    let (mut cannot, mut correct, mut tree_split) = (0, 0, 0);
    for plan in &l.plans {
        let golden = run_vanilla(&l.catalog, plan, &opts()).unwrap();
        let dag = run_adaptive(
            &mut l.catalog,
            plan,
            AqpConfig::all_on(Strategy::Dag),
            &opts(),
        )
        .unwrap();
        cannot +=
            usize::from(dag.trace.cannot_split.is_some() && dag.trace.totals.subplan_count == 1);
        correct += usize::from(dag.result.same_rows(&golden.result));
        let t = run_adaptive(&mut l.catalog, plan, tree(true), &opts()).unwrap();
        tree_split += usize::from(t.trace.totals.subplan_count > 1);
    }
    verdict(
        cannot == n && correct == n && tree_split == n,
        format!("{n} star queries: dag CannotSplit {cannot}, dag correct {correct}, tree split {tree_split}"),
    )
}

fn report_determinism() -> Verdict {
    let mut l = load(Preset::Correlated, 1);
    let qs = queries(&l.workload);
    let cfg = BenchConfig {
        modes: Mode::ALL.to_vec(),
        matrix: Matrix::Minimal,
        warmup: 1,
        runs: 2,
        timeout: Duration::from_secs(60),
    };
    let strip = |csv: String| -> Vec<String> {
        csv.lines()
            .map(|l| {
                l.split(',')
                    .enumerate()
                    .filter(|(i, _)| *i != 7 && *i != 8)
                    .map(|(_, f)| f)
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut csvs = Vec::new();
    for d in &dirs {
        let report = bench::run_suite(&mut l.catalog, &qs, &cfg).unwrap();
        report.write(d.path()).unwrap();
        csvs.push(std::fs::read_to_string(d.path().join("report.csv")).unwrap());
    }
    let rows = csvs[0].lines().count() - 1;
    let [a, b] = [strip(csvs[0].clone()), strip(csvs[1].clone())];
    let differing = a.iter().zip(&b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len());
    verdict(
        differing == 0 && rows == qs.len() * Mode::ALL.len() * 2,
        format!("{rows} CSV rows per invocation, {differing} differ outside timing columns"),
    )
}

fn main() {
    let started = std::time::Instant::now();
    let mut correlated = load(Preset::Correlated, 1);
    let runs = correlated_runs(&mut correlated);
    type Check<'a> = (u32, &'a str, bool, Box<dyn FnOnce() -> Verdict + 'a>);
    let checks: Vec<Check> = vec![
        (1, "golden correctness", true, Box::new(golden_correctness)),
        (2, "fig2 split reproduction", true, Box::new(fig2_split)),
        (3, "oracle equivalence", true, Box::new(oracles)),
        (
            4,
            "monitor effect",
            false,
            Box::new(|| monitor_effect(&runs)),
        ),
        (5, "splitter overhead", true, Box::new(splitter_overhead)),
        (6, "fixed-order replay", true, Box::new(fixed_order_replay)),
        (
            7,
            "plan-based vs relation-based",
            false,
            Box::new(|| plan_vs_relation(&runs)),
        ),
        (8, "star-schema limitation", true, Box::new(star_limitation)),
        (9, "report determinism", true, Box::new(report_determinism)),
    ];
    let mut hard_failures = Vec::new();
    let mut failed = Vec::new();
    for (n, name, exact, check) in checks {
        let t = std::time::Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {n} {name}: {status} ({:.1}s) {}",
            t.elapsed().as_secs_f64(),
            v.detail
        );
        if !v.pass {
            failed.push(n);
            if exact {
                hard_failures.push(n);
            }
        }
    }
    println!(
        "acceptance: {}/9 pass, failing {:?}, of which exact {:?} ({:.1}s)",
        9 - failed.len(),
        failed,
        hard_failures,
        started.elapsed().as_secs_f64()
    );
    if !hard_failures.is_empty() {
        std::process::exit(1);
    }
}
