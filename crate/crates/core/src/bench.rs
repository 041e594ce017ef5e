//! Benchmark harness: warmups, measured runs, golden checks, report files.

use std::fmt::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::clock::Instant;
use crate::driver::{
    run_adaptive, run_fixed_order, run_vanilla, AqpConfig, RunOptions, RunOutcome, Strategy,
};
use crate::error::{Error, Result};
use crate::executor::ResultSet;
use crate::optimizer::JoinTree;
use crate::router::{run_router, RoutingPolicy};
use crate::sql::parse_query;

pub const CSV_HEADER: &str = "query,mode,strategy,monitor,splitter,selector,run_idx,wall_ns,exec_ns,intermediate_tuples,subplan_count,result_checksum,golden_match";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "vanilla")]
    Vanilla,
    #[serde(rename = "aqp-dag")]
    AqpDag,
    #[serde(rename = "aqp-tree")]
    AqpTree,
    #[serde(rename = "router")]
    Router,
    #[serde(rename = "vanilla-fixed-order")]
    VanillaFixedOrder,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Vanilla,
        Mode::AqpDag,
        Mode::AqpTree,
        Mode::Router,
        Mode::VanillaFixedOrder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Vanilla => "vanilla",
            Mode::AqpDag => "aqp-dag",
            Mode::AqpTree => "aqp-tree",
            Mode::Router => "router",
            Mode::VanillaFixedOrder => "vanilla-fixed-order",
        }
    }

    pub fn strategy(self) -> Option<Strategy> {
        match self {
            Mode::AqpDag => Some(Strategy::Dag),
            Mode::AqpTree => Some(Strategy::Tree),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

/// Parses a comma-separated mode list.
pub fn parse_modes(list: &str) -> Result<Vec<Mode>> {
    let mut out: Vec<Mode> = Vec::new();
    for part in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let m: Mode = part.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no modes selected".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Matrix {
    /// Every toggle on.
    Minimal,
    /// Every valid monitor/splitter/selector combination.
    Full,
}

impl FromStr for Matrix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Matrix> {
        match s {
            "minimal" => Ok(Matrix::Minimal),
            "full" => Ok(Matrix::Full),
            other => Err(Error::Config(format!("unknown matrix `{other}`"))),
        }
    }
}

/// One mode with its toggles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub mode: Mode,
    pub config: Option<AqpConfig>,
}

impl Cell {
    pub fn plain(mode: Mode) -> Cell {
        Cell { mode, config: None }
    }

    pub fn label(&self) -> String {
        match &self.config {
            None => self.mode.name().to_string(),
            Some(c) => format!(
                "{}[monitor={},splitter={},selector={}]",
                self.mode,
                on_off(c.monitor),
                on_off(c.splitter),
                on_off(c.selector)
            ),
        }
    }

    fn file_stem(&self) -> String {
        self.label()
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' {
                    c
                } else {
                    '_'
                }
            })
            .collect::<String>()
            .trim_end_matches('_')
            .to_string()
    }
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

/// Expands modes into cells; AQP modes get one cell per toggle combination.
pub fn cells(modes: &[Mode], matrix: Matrix) -> Vec<Cell> {
    let mut out = Vec::new();
    for &mode in modes {
        let Some(strategy) = mode.strategy() else {
            out.push(Cell::plain(mode));
            continue;
        };
        let all_on = AqpConfig::all_on(strategy);
        if matrix == Matrix::Minimal {
            out.push(Cell {
                mode,
                config: Some(all_on),
            });
            continue;
        }
        for bits in (0..8u8).rev() {
            let cfg = AqpConfig {
                strategy,
                monitor: bits & 4 != 0,
                splitter: bits & 2 != 0,
                selector: bits & 1 != 0,
            };
            if cfg.validate().is_ok() {
                out.push(Cell {
                    mode,
                    config: Some(cfg),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub modes: Vec<Mode>,
    pub matrix: Matrix,
    pub warmup: usize,
    pub runs: usize,
    pub timeout: Duration,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            modes: Mode::ALL.to_vec(),
            matrix: Matrix::Minimal,
            warmup: 5,
            runs: 10,
            timeout: Duration::from_secs(60),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::Config("no modes selected".into()));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadQuery {
    pub name: String,
    pub sql: String,
}

/// Reads `*.sql` from `dir/queries/`, or from `dir` itself when it has no
/// such subdirectory. Queries are ordered by file name.
pub fn load_workload(dir: &Path) -> Result<Vec<WorkloadQuery>> {
    let sub = dir.join("queries");
    let root = if sub.is_dir() { sub } else { dir.to_path_buf() };
    let mut files: Vec<PathBuf> = std::fs::read_dir(&root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "sql"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!(
            "no .sql files in {}",
            root.display()
        )));
    }
    files
        .into_iter()
        .map(|p| {
            let name = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok(WorkloadQuery {
                name,
                sql: std::fs::read_to_string(&p)?,
            })
        })
        .collect()
}

/// Runs one cell once: parse, plan, execute. Returns the outcome and the
/// end-to-end time.
pub fn run_cell(
    catalog: &mut Catalog,
    sql: &str,
    cell: &Cell,
    fixed: Option<&JoinTree>,
    opts: &RunOptions,
) -> Result<(RunOutcome, u64)> {
    let start = Instant::now();
    let plan = parse_query(sql, catalog)?;
    let out = match (cell.mode, cell.config) {
        (Mode::Vanilla, _) => run_vanilla(catalog, &plan, opts)?,
        (Mode::Router, _) => run_router(catalog, &plan, &RoutingPolicy::default(), opts)?,
        (Mode::VanillaFixedOrder, _) => {
            let order = fixed.ok_or_else(|| {
                Error::Config("vanilla-fixed-order needs a recorded order".into())
            })?;
            run_fixed_order(catalog, &plan, order, opts)?
        }
        (_, Some(cfg)) => run_adaptive(catalog, &plan, cfg, opts)?,
        (mode, None) => return Err(Error::Config(format!("mode {mode} needs toggles"))),
    };
    Ok((out, start.elapsed_ns()))
}

/// The merged join order of a tree-strategy run with every toggle on, which
/// `vanilla-fixed-order` replays.
pub fn recorded_order(catalog: &mut Catalog, sql: &str) -> Result<JoinTree> {
    let plan = parse_query(sql, catalog)?;
    let out = run_adaptive(
        catalog,
        &plan,
        AqpConfig::all_on(Strategy::Tree),
        &RunOptions::default(),
    )?;
    out.trace
        .merged_order
        .ok_or_else(|| Error::Config("tree run recorded no merged order".into()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Measured {
    pub wall_ns: u64,
    pub exec_ns: u64,
    pub intermediate_tuples: u64,
    pub subplan_count: usize,
    pub result_checksum: u64,
    pub golden_match: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunRecord {
    pub query: String,
    pub cell: Cell,
    pub run_idx: usize,
    /// `None` when the run did not finish within the timeout.
    pub measured: Option<Measured>,
}

impl RunRecord {
    fn csv_fields(&self) -> Vec<String> {
        let (strategy, toggles) = match &self.cell.config {
            Some(c) => (
                c.strategy.name().to_string(),
                [c.monitor, c.splitter, c.selector].map(|b| on_off(b).to_string()),
            ),
            None => {
                let s = if self.cell.mode == Mode::Router {
                    "router"
                } else {
                    "-"
                };
                (s.to_string(), ["-", "-", "-"].map(String::from))
            }
        };
        let mut f = vec![
            self.query.clone(),
            self.cell.mode.name().to_string(),
            strategy,
        ];
        f.extend(toggles);
        f.push(self.run_idx.to_string());
        match &self.measured {
            Some(m) => f.extend([
                m.wall_ns.to_string(),
                m.exec_ns.to_string(),
                m.intermediate_tuples.to_string(),
                m.subplan_count.to_string(),
                format!("{:016x}", m.result_checksum),
                m.golden_match.to_string(),
            ]),
            None => f.extend(["DNF", "DNF", "", "", "", ""].map(String::from)),
        }
        f
    }
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub records: Vec<RunRecord>,
    /// `query mode` pairs whose result differed from the golden result.
    pub failures: Vec<String>,
}

/// Runs every query × cell: warmups discarded, then measured runs. The golden
/// result of each query comes from one untimed vanilla run.
pub fn run_suite(
    catalog: &mut Catalog,
    queries: &[WorkloadQuery],
    cfg: &BenchConfig,
) -> Result<BenchReport> {
    cfg.validate()?;
    let cells = cells(&cfg.modes, cfg.matrix);
    let mut report = BenchReport::default();
    for q in queries {
        let golden = golden(catalog, &q.sql)?;
        let fixed = if cfg.modes.contains(&Mode::VanillaFixedOrder) {
            Some(recorded_order(catalog, &q.sql)?)
        } else {
            None
        };
        for cell in &cells {
            let mut timed_out = false;
            for _ in 0..cfg.warmup {
                if timed(catalog, &q.sql, cell, fixed.as_ref(), cfg.timeout)?.is_none() {
                    timed_out = true;
                    break;
                }
            }
            let mut mismatch = false;
            for run_idx in 0..cfg.runs {
                let measured = if timed_out {
                    None
                } else {
                    timed(catalog, &q.sql, cell, fixed.as_ref(), cfg.timeout)?.map(
                        |(out, wall_ns)| Measured {
                            wall_ns,
                            exec_ns: out.trace.totals.exec_ns,
                            intermediate_tuples: out.trace.totals.total_intermediate_tuples,
                            subplan_count: out.trace.totals.subplan_count,
                            result_checksum: out.result.checksum(),
                            golden_match: out.result.same_rows(&golden),
                        },
                    )
                };
                timed_out |= measured.is_none();
                mismatch |= measured.as_ref().is_some_and(|m| !m.golden_match);
                report.records.push(RunRecord {
                    query: q.name.clone(),
                    cell: *cell,
                    run_idx,
                    measured,
                });
            }
            if mismatch {
                report.failures.push(format!("{} {}", q.name, cell.label()));
            }
        }
    }
    Ok(report)
}

fn golden(catalog: &Catalog, sql: &str) -> Result<ResultSet> {
    let plan = parse_query(sql, catalog)?;
    Ok(run_vanilla(catalog, &plan, &RunOptions::default())?.result)
}

fn timed(
    catalog: &mut Catalog,
    sql: &str,
    cell: &Cell,
    fixed: Option<&JoinTree>,
    timeout: Duration,
) -> Result<Option<(RunOutcome, u64)>> {
    let opts = RunOptions {
        deadline: Instant::now().after(timeout),
    };
    match run_cell(catalog, sql, cell, fixed, &opts) {
        Ok(v) => Ok(Some(v)),
        Err(Error::Timeout) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyLine {
    pub query: String,
    pub cell: String,
    pub ok: bool,
}

/// Runs every mode under every toggle combination once and compares each
/// result against vanilla.
pub fn verify(catalog: &mut Catalog, queries: &[WorkloadQuery]) -> Result<Vec<VerifyLine>> {
    let cells = cells(&Mode::ALL, Matrix::Full);
    let mut out = Vec::new();
    for q in queries {
        let golden = golden(catalog, &q.sql)?;
        let fixed = recorded_order(catalog, &q.sql)?;
        for cell in &cells {
            let (run, _) = run_cell(catalog, &q.sql, cell, Some(&fixed), &RunOptions::default())?;
            out.push(VerifyLine {
                query: q.name.clone(),
                cell: cell.label(),
                ok: run.result.same_rows(&golden),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMean {
    pub wall_ns: f64,
    pub exec_ns: f64,
    pub intermediate_tuples: f64,
}

impl BenchReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn dnf_count(&self) -> usize {
        self.records.iter().filter(|r| r.measured.is_none()).count()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(Vec::new());
        w.write_record(CSV_HEADER.split(','))?;
        for r in &self.records {
            w.write_record(r.csv_fields())?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Cells in first-seen order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out: Vec<Cell> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.cell) {
                out.push(r.cell);
            }
        }
        out
    }

    pub fn queries(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.query) {
                out.push(r.query.clone());
            }
        }
        out
    }

    /// Mean over finished measured runs; `None` if every run was DNF.
    pub fn mean(&self, query: &str, cell: &Cell) -> Option<CellMean> {
        let ms: Vec<&Measured> = self
            .records
            .iter()
            .filter(|r| r.query == query && r.cell == *cell)
            .filter_map(|r| r.measured.as_ref())
            .collect();
        if ms.is_empty() {
            return None;
        }
        let n = ms.len() as f64;
        Some(CellMean {
            wall_ns: ms.iter().map(|m| m.wall_ns as f64).sum::<f64>() / n,
            exec_ns: ms.iter().map(|m| m.exec_ns as f64).sum::<f64>() / n,
            intermediate_tuples: ms.iter().map(|m| m.intermediate_tuples as f64).sum::<f64>() / n,
        })
    }

    /// Vanilla mean wall time over the cell's mean wall time, per query, sorted
    /// ascending. Queries where either side has no finished run are skipped.
    pub fn improvements(&self, cell: &Cell) -> Vec<(String, f64)> {
        let vanilla = Cell::plain(Mode::Vanilla);
        let mut out: Vec<(String, f64)> = self
            .queries()
            .into_iter()
            .filter_map(|q| {
                let v = self.mean(&q, &vanilla)?;
                let m = self.mean(&q, cell)?;
                (m.wall_ns > 0.0).then(|| (q, v.wall_ns / m.wall_ns))
            })
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        out
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let status = if self.passed() { "PASSED" } else { "FAILED" };
        let _ = writeln!(s, "status: {status}");
        for f in &self.failures {
            let _ = writeln!(s, "golden mismatch: {f}");
        }
        let _ = writeln!(
            s,
            "queries: {}  runs: {}  dnf: {}",
            self.queries().len(),
            self.records.len(),
            self.dnf_count()
        );
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<48} {:>14} {:>14} {:>16}",
            "cell", "wall_ms", "exec_ms", "intermediates"
        );
        let has_vanilla = self.cells().iter().any(|c| c.mode == Mode::Vanilla);
        for cell in self.cells() {
            let (wall, exec, inter) = self.totals(&cell);
            let _ = writeln!(
                s,
                "{:<48} {:>14.3} {:>14.3} {:>16.0}",
                cell.label(),
                wall / 1e6,
                exec / 1e6,
                inter
            );
        }
        let _ = writeln!(s);
        if !has_vanilla {
            let _ = writeln!(s, "improvement: n/a (vanilla not measured)");
            return s;
        }
        let _ = writeln!(
            s,
            "{:<48} {:>10} {:>10} {:>10}",
            "improvement over vanilla", "min", "median", "max"
        );
        for cell in self.cells().into_iter().filter(|c| c.mode != Mode::Vanilla) {
            let r: Vec<f64> = self
                .improvements(&cell)
                .into_iter()
                .map(|(_, v)| v)
                .collect();
            if r.is_empty() {
                let _ = writeln!(
                    s,
                    "{:<48} {:>10} {:>10} {:>10}",
                    cell.label(),
                    "-",
                    "-",
                    "-"
                );
                continue;
            }
            let _ = writeln!(
                s,
                "{:<48} {:>10.3} {:>10.3} {:>10.3}",
                cell.label(),
                r[0],
                median(&r),
                r[r.len() - 1]
            );
        }
        s
    }

    /// Sum over queries of per-query means.
    fn totals(&self, cell: &Cell) -> (f64, f64, f64) {
        self.queries()
            .iter()
            .filter_map(|q| self.mean(q, cell))
            .fold((0.0, 0.0, 0.0), |a, m| {
                (
                    a.0 + m.wall_ns,
                    a.1 + m.exec_ns,
                    a.2 + m.intermediate_tuples,
                )
            })
    }

    /// Plot series as (file name, contents).
    pub fn plot_series(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut totals =
            String::from("# cell total_wall_ns total_exec_ns total_intermediate_tuples\n");
        for cell in self.cells() {
            let (w, e, i) = self.totals(&cell);
            let _ = writeln!(totals, "{} {w:.0} {e:.0} {i:.0}", cell.file_stem());
        }
        out.push(("total_time.dat".to_string(), totals));
        for cell in self.cells().into_iter().filter(|c| c.mode != Mode::Vanilla) {
            let r = self.improvements(&cell);
            if r.is_empty() {
                continue;
            }
            let mut body = String::from("# improvement query\n");
            for (q, v) in r {
                let _ = writeln!(body, "{v:.6} {q}");
            }
            out.push((format!("improvement_{}.dat", cell.file_stem()), body));
        }
        out
    }

    /// Writes report.csv, summary.txt and plotdata/.
    pub fn write(&self, out: &Path) -> Result<()> {
        std::fs::create_dir_all(out.join("plotdata"))?;
        std::fs::write(out.join("report.csv"), self.to_csv()?)?;
        std::fs::write(out.join("summary.txt"), self.summary())?;
        for (name, body) in self.plot_series() {
            std::fs::write(out.join("plotdata").join(name), body)?;
        }
        Ok(())
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{generate, GenSpec, Preset};

    fn chain() -> (Catalog, Vec<WorkloadQuery>) {
        let w = generate(&GenSpec::new(Preset::Chain, 1, 3)).unwrap();
        let qs = w
            .queries
            .iter()
            .take(2)
            .map(|q| WorkloadQuery {
                name: q.name.clone(),
                sql: q.sql.clone(),
            })
            .collect();
        (w.catalog().unwrap(), qs)
    }

    #[test]
    fn mode_lists() {
        assert_eq!(
            parse_modes("vanilla,aqp-tree").unwrap(),
            vec![Mode::Vanilla, Mode::AqpTree]
        );
        assert_eq!(
            parse_modes("").unwrap_err().to_string(),
            "no modes selected"
        );
        assert!(parse_modes("fast").is_err());
        let full = cells(&[Mode::AqpTree, Mode::AqpDag, Mode::Router], Matrix::Full);
        assert_eq!(full.len(), 8 + 4 + 1);
        assert_eq!(cells(&[Mode::AqpTree], Matrix::Minimal).len(), 1);
    }

    #[test]
    fn row_arithmetic_and_golden() {
        let (mut cat, qs) = chain();
        let cfg = BenchConfig {
            modes: vec![Mode::Vanilla, Mode::AqpTree],
            warmup: 1,
            runs: 10,
            ..BenchConfig::default()
        };
        let r = run_suite(&mut cat, &qs, &cfg).unwrap();
        assert_eq!(r.records.len(), 40);
        assert!(r.passed());
        let csv = r.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 41);
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
        let imp = r.improvements(&Cell {
            mode: Mode::AqpTree,
            config: Some(AqpConfig::all_on(Strategy::Tree)),
        });
        assert!(imp.windows(2).all(|w| w[0].1 <= w[1].1));
        assert!(r.summary().starts_with("status: PASSED"));
    }

    #[test]
    fn timeouts_become_dnf() {
        let (mut cat, qs) = chain();
        let cfg = BenchConfig {
            modes: vec![Mode::Vanilla],
            warmup: 0,
            runs: 2,
            timeout: Duration::ZERO,
            ..BenchConfig::default()
        };
        let r = run_suite(&mut cat, &qs[..1], &cfg).unwrap();
        assert_eq!(r.dnf_count(), 2);
        assert!(r.mean("q01", &Cell::plain(Mode::Vanilla)).is_none());
        assert!(r.to_csv().unwrap().contains("DNF"));
    }

    #[test]
    fn fixed_order_replays_tree() {
        let (mut cat, qs) = chain();
        let lines = verify(&mut cat, &qs).unwrap();
        assert!(lines.iter().all(|l| l.ok));
        assert_eq!(lines.len(), 2 * (1 + 4 + 8 + 1 + 1));
    }
}
