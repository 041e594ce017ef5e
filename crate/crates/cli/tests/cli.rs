use std::path::Path;
use std::process::{Command, Output};

fn aqplab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aqplab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, preset: &str) {
    let out = aqplab(&[
        "gen",
        "--preset",
        preset,
        "--scale",
        "1",
        "--seed",
        "42",
        "--out",
        s(dir),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// report.csv with the wall_ns and exec_ns columns removed.
fn without_timing(csv: &str) -> Vec<String> {
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
}

#[test]
fn gen_then_run_each_mode() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "fig2");
    let q = dir.path().join("queries/q01.sql");
    let mut results = Vec::new();
    for mode in [
        "vanilla",
        "aqp-dag",
        "aqp-tree",
        "router",
        "vanilla-fixed-order",
    ] {
        let out = aqplab(&[
            "run",
            "--data",
            s(dir.path()),
            "--query",
            s(&q),
            "--mode",
            mode,
        ]);
        assert!(
            out.status.success(),
            "{mode}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        results.push(stdout(&out));
    }
    assert!(results[0].starts_with("MIN(chn.name)|MIN(t.production_year)"));
    assert!(results.iter().all(|r| *r == results[0]));
}

#[test]
fn explain_and_trace_replay() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "fig2");
    let q = dir.path().join("queries/q01.sql");
    let trace = dir.path().join("trace.json");
    let out = aqplab(&[
        "run",
        "--data",
        s(dir.path()),
        "--query",
        s(&q),
        "--mode",
        "aqp-tree",
        "--monitor",
        "off",
        "--explain",
        "--trace",
        s(&trace),
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(
        text.contains("round 1:") && text.contains("merged order:"),
        "{text}"
    );
    let recorded: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&trace).unwrap()).unwrap();
    assert_eq!(recorded["config"]["monitor"], false);
    let replay = aqplab(&[
        "run",
        "--data",
        s(dir.path()),
        "--query",
        s(&q),
        "--mode",
        "vanilla-fixed-order",
        "--trace",
        s(&trace),
    ]);
    assert!(replay.status.success());
    assert_eq!(stdout(&replay), text.split("\n\n").last().unwrap());
}

#[test]
fn usage_errors_exit_1() {
    let out = aqplab(&["run", "--data", "x", "--query", "y", "--mode", "fast"]);
    assert_eq!(out.status.code(), Some(1));
    let out = aqplab(&[
        "bench",
        "--data",
        "x",
        "--workload",
        "y",
        "--modes",
        "",
        "--out",
        "z",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no modes selected"));
    let out = aqplab(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(aqplab(&["--help"]).status.code(), Some(0));
}

#[test]
fn dag_without_selector_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "fig2");
    let q = dir.path().join("queries/q01.sql");
    let out = aqplab(&[
        "run",
        "--data",
        s(dir.path()),
        "--query",
        s(&q),
        "--mode",
        "aqp-dag",
        "--selector",
        "off",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = aqplab(&[
        "verify",
        "--data",
        s(dir.path()),
        "--workload",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(3));
    gen(dir.path(), "chain");
    let bad = dir.path().join("bad.sql");
    std::fs::write(&bad, "SELECT COUNT(*) FROM nowhere").unwrap();
    let out = aqplab(&[
        "run",
        "--data",
        s(dir.path()),
        "--query",
        s(&bad),
        "--mode",
        "vanilla",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn verify_passes_on_chain() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "chain");
    let out = aqplab(&[
        "verify",
        "--data",
        s(dir.path()),
        "--workload",
        s(dir.path()),
    ]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(stdout(&out).contains(" 0 mismatches"));
}

#[test]
fn bench_reports_are_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "chain");
    let bench = |out: &Path| {
        let o = aqplab(&[
            "bench",
            "--data",
            s(dir.path()),
            "--workload",
            s(dir.path()),
            "--modes",
            "vanilla,aqp-tree,router",
            "--matrix",
            "minimal",
            "--warmup",
            "0",
            "--runs",
            "2",
            "--timeout-s",
            "60",
            "--out",
            s(out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(out.join("report.csv")).unwrap()
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let (ra, rb) = (bench(&a), bench(&b));
    assert_eq!(ra.lines().count(), 1 + 10 * 3 * 2);
    assert_eq!(without_timing(&ra), without_timing(&rb));
    let summary = std::fs::read_to_string(a.join("summary.txt")).unwrap();
    assert!(summary.starts_with("status: PASSED"));
    assert!(a.join("plotdata/total_time.dat").exists());
    let imp = std::fs::read_to_string(a.join("plotdata/improvement_router.dat")).unwrap();
    let ratios: Vec<f64> = imp
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().next().unwrap().parse().unwrap())
        .collect();
    assert!(ratios.windows(2).all(|w| w[0] <= w[1]));
}
