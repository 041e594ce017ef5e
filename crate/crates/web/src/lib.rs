//! Browser bindings. Each export is a thin wrapper over a plain function so the
//! logic can be tested on the host.

use std::cell::RefCell;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use aqplab_core::catalog::Catalog;
use aqplab_core::driver::{
    run_adaptive, run_fixed_order, run_vanilla, AqpConfig, RunOptions, Strategy,
};
use aqplab_core::router::{run_router, RoutingPolicy};
use aqplab_core::sql::parse_query;
use aqplab_core::workload::{generate as gen_workload, GenSpec, Preset};
use aqplab_core::Result;

thread_local! {
    static CATALOG: RefCell<Option<Catalog>> = const { RefCell::new(None) };
}

#[derive(Debug, Serialize)]
pub struct TableInfo {
    pub name: String,
    pub rows: usize,
}

#[derive(Debug, Serialize)]
pub struct QueryInfo {
    pub name: String,
    pub sql: String,
}

#[derive(Debug, Serialize)]
pub struct Generated {
    pub preset: String,
    pub tables: Vec<TableInfo>,
    pub queries: Vec<QueryInfo>,
}

#[derive(Debug, Serialize)]
pub struct ModeResult {
    pub mode: String,
    pub intermediate_tuples: u64,
    pub subplans: usize,
    pub rows: usize,
    pub checksum: String,
    pub matches_vanilla: bool,
    pub order: String,
}

/// Generates a workload at scale 1 and keeps its catalog for later calls.
pub fn generate_workload(preset: &str, seed: u64) -> Result<Generated> {
    let preset: Preset = preset.parse()?;
    let w = gen_workload(&GenSpec::new(preset, 1, seed))?;
    let catalog = w.catalog()?;
    CATALOG.with(|c| *c.borrow_mut() = Some(catalog));
    Ok(Generated {
        preset: preset.name().to_string(),
        tables: w
            .manifest
            .tables
            .iter()
            .map(|t| TableInfo {
                name: t.name.clone(),
                rows: t.rows,
            })
            .collect(),
        queries: w
            .queries
            .iter()
            .map(|q| QueryInfo {
                name: q.name.clone(),
                sql: q.sql.clone(),
            })
            .collect(),
    })
}

fn with_catalog<T>(f: impl FnOnce(&mut Catalog) -> Result<T>) -> Result<T> {
    CATALOG.with(|c| match c.borrow_mut().as_mut() {
        Some(cat) => f(cat),
        None => Err(aqplab_core::Error::Config(
            "generate a workload first".into(),
        )),
    })
}

/// Split explanation and per-round trace of one adaptive run.
pub fn explain(sql: &str, strategy: &str, monitor: bool) -> Result<String> {
    let strategy = match strategy {
        "dag" => Strategy::Dag,
        "tree" => Strategy::Tree,
        other => {
            return Err(aqplab_core::Error::Config(format!(
                "unknown strategy `{other}`"
            )))
        }
    };
    with_catalog(|cat| {
        let plan = parse_query(sql, cat)?;
        let mut cfg = AqpConfig::all_on(strategy);
        cfg.monitor = monitor;
        let out = run_adaptive(cat, &plan, cfg, &RunOptions::default())?;
        let mut text = out.trace.explain_split.clone();
        if !text.is_empty() && !text.ends_with('\n') {
            text.push('\n');
        }
        text.push_str(&out.trace.explain_adaptive());
        text.push_str(&format!(
            "intermediate tuples: {}\n",
            out.trace.totals.total_intermediate_tuples
        ));
        Ok(text)
    })
}

/// Runs the query under every mode and compares each result with vanilla.
pub fn compare_modes(sql: &str) -> Result<Vec<ModeResult>> {
    with_catalog(|cat| {
        let plan = parse_query(sql, cat)?;
        let opts = RunOptions::default();
        let golden = run_vanilla(cat, &plan, &opts)?;
        let tree = run_adaptive(cat, &plan, AqpConfig::all_on(Strategy::Tree), &opts)?;
        let mut off = AqpConfig::all_on(Strategy::Tree);
        off.monitor = false;
        let tree_off = run_adaptive(cat, &plan, off, &opts)?;
        let dag = run_adaptive(cat, &plan, AqpConfig::all_on(Strategy::Dag), &opts)?;
        let router = run_router(cat, &plan, &RoutingPolicy::default(), &opts);
        let order = tree
            .trace
            .merged_order
            .clone()
            .expect("tree runs record an order");
        let fixed = run_fixed_order(cat, &plan, &order, &opts)?;
        let mut runs = vec![
            ("vanilla", golden.clone()),
            ("aqp-tree", tree),
            ("aqp-tree monitor=off", tree_off),
            ("aqp-dag", dag),
        ];
        if let Ok(r) = router {
            runs.push(("router", r));
        }
        runs.push(("vanilla-fixed-order", fixed));
        Ok(runs
            .into_iter()
            .map(|(mode, o)| ModeResult {
                mode: mode.to_string(),
                intermediate_tuples: o.trace.totals.total_intermediate_tuples,
                subplans: o.trace.totals.subplan_count,
                rows: o.result.len,
                checksum: format!("{:016x}", o.result.checksum()),
                matches_vanilla: o.result.same_rows(&golden.result),
                order: o
                    .trace
                    .merged_order
                    .map(|t| t.to_string())
                    .unwrap_or_default(),
            })
            .collect())
    })
}

fn js_err(e: aqplab_core::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

#[wasm_bindgen]
pub fn generate(preset: &str, seed: u32) -> std::result::Result<String, JsValue> {
    generate_workload(preset, seed as u64)
        .map(|g| to_json(&g))
        .map_err(js_err)
}

#[wasm_bindgen]
pub fn explain_split(
    sql: &str,
    strategy: &str,
    monitor: bool,
) -> std::result::Result<String, JsValue> {
    explain(sql, strategy, monitor).map_err(js_err)
}

#[wasm_bindgen]
pub fn run_modes(sql: &str) -> std::result::Result<String, JsValue> {
    compare_modes(sql).map(|r| to_json(&r)).map_err(js_err)
}
