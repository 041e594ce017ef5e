use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use aqplab_core::bench::{self, BenchConfig, Cell, Matrix, Mode};
use aqplab_core::catalog::Catalog;
use aqplab_core::driver::{AqpConfig, AqpTrace, RunOptions};
use aqplab_core::workload::{generate, GenSpec, Preset};
use aqplab_core::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_MISMATCH: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "aqplab",
    version,
    about = "Plan-based adaptive query processing lab"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic workload: schema, CSVs, queries and a manifest.
    Gen {
        #[arg(long)]
        preset: Preset,
        #[arg(long, default_value_t = 1)]
        scale: u32,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Number of queries; defaults depend on the preset.
        #[arg(long)]
        queries: Option<usize>,
    },
    /// Run one query and print its result.
    Run {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: Mode,
        #[arg(long, value_enum, default_value_t = Toggle::On)]
        monitor: Toggle,
        #[arg(long, value_enum, default_value_t = Toggle::On)]
        splitter: Toggle,
        #[arg(long, value_enum, default_value_t = Toggle::On)]
        selector: Toggle,
        /// Print the plan, the split and one line per round.
        #[arg(long)]
        explain: bool,
        /// Write the run trace as JSON. With vanilla-fixed-order, an existing
        /// file is read instead and its merged order replayed.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Benchmark a workload across modes and toggles.
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        #[arg(
            long,
            default_value = "vanilla,aqp-dag,aqp-tree,router,vanilla-fixed-order"
        )]
        modes: String,
        #[arg(long, value_parser = parse_matrix, default_value = "minimal")]
        matrix: Matrix,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        runs: u64,
        #[arg(long = "timeout-s", default_value_t = 60)]
        timeout_s: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check every mode and toggle combination against vanilla results.
    Verify {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        workload: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn on(self) -> bool {
        self == Toggle::On
    }
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_matrix(s: &str) -> Result<Matrix, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<Error>() {
            Some(Error::Config(_) | Error::SelectorNotDisableable) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        Failure { code, error }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Gen {
            preset,
            scale,
            seed,
            out,
            queries,
        } => gen(preset, scale, seed, &out, queries),
        Command::Run {
            data,
            query,
            mode,
            monitor,
            splitter,
            selector,
            explain,
            trace,
        } => {
            let cell = Cell {
                mode,
                config: mode.strategy().map(|strategy| AqpConfig {
                    strategy,
                    monitor: monitor.on(),
                    splitter: splitter.on(),
                    selector: selector.on(),
                }),
            };
            run(&data, &query, cell, explain, trace.as_deref())
        }
        Command::Bench {
            data,
            workload,
            modes,
            matrix,
            warmup,
            runs,
            timeout_s,
            out,
        } => {
            let cfg = BenchConfig {
                modes: bench::parse_modes(&modes)?,
                matrix,
                warmup,
                runs: runs as usize,
                timeout: Duration::from_secs(timeout_s),
            };
            run_bench(&data, &workload, &cfg, &out)
        }
        Command::Verify { data, workload } => verify(&data, &workload),
    }
}

fn load(data: &Path) -> anyhow::Result<Catalog> {
    Catalog::load_dir(data).with_context(|| format!("loading {}", data.display()))
}

fn gen(
    preset: Preset,
    scale: u32,
    seed: u64,
    out: &Path,
    queries: Option<usize>,
) -> Result<(), Failure> {
    let mut spec = GenSpec::new(preset, scale, seed);
    if let Some(n) = queries {
        spec.num_queries = n;
    }
    let w = generate(&spec)?;
    w.write(out)
        .with_context(|| format!("writing {}", out.display()))?;
    let rows: usize = w.manifest.tables.iter().map(|t| t.rows).sum();
    println!(
        "{}: {} tables, {} rows, {} queries -> {}",
        preset.name(),
        w.manifest.tables.len(),
        rows,
        w.queries.len(),
        out.display()
    );
    for p in &w.manifest.correlated_pairs {
        println!(
            "  {}: {} AND {}  true={:.4} independent={:.4} gap={:.1}x",
            p.table,
            p.predicates[0],
            p.predicates[1],
            p.true_selectivity,
            p.independent_estimate,
            p.gap
        );
    }
    Ok(())
}

fn run(
    data: &Path,
    query: &Path,
    cell: Cell,
    explain: bool,
    trace: Option<&Path>,
) -> Result<(), Failure> {
    let mut catalog = load(data)?;
    let sql =
        std::fs::read_to_string(query).with_context(|| format!("reading {}", query.display()))?;
    let replay = cell.mode == Mode::VanillaFixedOrder;
    let fixed = match trace {
        Some(p) if replay && p.exists() => {
            let t = AqpTrace::from_json(
                &std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            )?;
            Some(t.merged_order.context("trace has no merged order")?)
        }
        _ if replay => Some(bench::recorded_order(&mut catalog, &sql)?),
        _ => None,
    };
    let (out, wall_ns) = bench::run_cell(
        &mut catalog,
        &sql,
        &cell,
        fixed.as_ref(),
        &RunOptions::default(),
    )?;
    if explain {
        if !out.trace.explain_split.is_empty() {
            println!("{}", out.trace.explain_split.trim_end());
        }
        print!("{}", out.plan.explain(Some(&out.metrics.operator_rows)));
        print!("{}", out.trace.explain_adaptive());
        if let Some(r) = &out.trace.router {
            println!("router source {} ({} rows)", r.source, r.source_rows);
            for (i, t) in r.trials.iter().enumerate() {
                let mark = if i == r.winner { "*" } else { " " };
                println!(
                    "{mark} trial {}: tuples={} intermediates={} per_tuple={:.3} est={:.0}",
                    t.order.join(" "),
                    t.tuples,
                    t.intermediates,
                    t.per_tuple(),
                    t.est_cost
                );
            }
        }
        println!();
    }
    let header: Vec<String> = out
        .result
        .schema
        .iter()
        .map(|(c, _)| {
            if c.relation.is_empty() {
                c.column.clone()
            } else {
                c.to_string()
            }
        })
        .collect();
    println!("{}", header.join("|"));
    for row in out.result.sorted_rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        println!("{}", cells.join("|"));
    }
    eprintln!(
        "{} rows, {} intermediate tuples, {} sub-plans, exec {:.3} ms, wall {:.3} ms, checksum {:016x}",
        out.result.len,
        out.trace.totals.total_intermediate_tuples,
        out.trace.totals.subplan_count,
        out.trace.totals.exec_ns as f64 / 1e6,
        wall_ns as f64 / 1e6,
        out.result.checksum()
    );
    if let Some(p) = trace.filter(|_| !replay) {
        std::fs::write(p, out.trace.to_json() + "\n")
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn run_bench(data: &Path, workload: &Path, cfg: &BenchConfig, out: &Path) -> Result<(), Failure> {
    let mut catalog = load(data)?;
    let queries = bench::load_workload(workload)?;
    let report = bench::run_suite(&mut catalog, &queries, cfg)?;
    report
        .write(out)
        .with_context(|| format!("writing {}", out.display()))?;
    print!("{}", report.summary());
    if !report.passed() {
        return Err(Failure {
            code: EXIT_MISMATCH,
            error: anyhow::anyhow!(
                "{} cell(s) differ from the golden result",
                report.failures.len()
            ),
        });
    }
    Ok(())
}

fn verify(data: &Path, workload: &Path) -> Result<(), Failure> {
    let mut catalog = load(data)?;
    let queries = bench::load_workload(workload)?;
    let lines = bench::verify(&mut catalog, &queries)?;
    let bad: Vec<_> = lines.iter().filter(|l| !l.ok).collect();
    for l in &bad {
        println!("MISMATCH {} {}", l.query, l.cell);
    }
    println!("{} checks, {} mismatches", lines.len(), bad.len());
    if !bad.is_empty() {
        return Err(Failure {
            code: EXIT_MISMATCH,
            error: anyhow::anyhow!("results differ from vanilla"),
        });
    }
    Ok(())
}
