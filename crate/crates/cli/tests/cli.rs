use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use aladin_cli::{BENCH_HEADER, TRACE_HEADER};

fn aladin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aladin"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn field(row: &[String], i: usize) -> f64 {
    row[i].parse().unwrap()
}

#[test]
fn solve_canonical_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.json");
    let o = aladin(&["solve", "--pairs", "1", "--out", path(&out)]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["solver"], "aladin_beta");
    assert_eq!(v["status"], "converged");
    assert!((v["objective"].as_f64().unwrap() - 0.5).abs() < 1e-8);
    assert!(v["comp_residual"].as_f64().unwrap() <= 1e-12);
    assert_eq!(v["final_x"].as_array().unwrap().len(), 2);
}

#[test]
fn unknown_solver_exits_2_listing_names() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.json");
    let o = aladin(&["solve", "--solver", "simplex", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    for name in ["aladin_beta", "pb_per_step", "pb_per_barrier", "vanilla"] {
        assert!(err.contains(name), "{err}");
    }
    assert!(!out.exists());
}

#[test]
fn malformed_problem_exits_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"Q\": [[1,0],[0,1]],\n \"c\": [1,").unwrap();
    let out = dir.path().join("s.json");
    let o = aladin(&["solve", "--problem", path(&bad), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn invalid_override_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.json");
    let o = aladin(&["solve", "--set", "theta=2", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = aladin(&["solve", "--set", "no_such_field=1", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn trace_starts_converge() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, [f64; 2]); 3] = [
        ("1,1", [1.0, 0.0]),
        ("0.5,2", [0.0, 1.0]),
        ("1,0.01", [1.0, 0.0]),
    ];
    for (start, target) in cases {
        let out = dir.path().join("t.csv");
        let o = aladin(&["trace", "--start", start, "--out", path(&out)]);
        assert_eq!(o.status.code(), Some(0), "{start}");
        let text = fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().next().unwrap(), TRACE_HEADER);
        let rows = rows(&text);
        let first = &rows[0];
        assert_eq!(first[0], "0");
        let s: Vec<f64> = start.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!([field(first, 1), field(first, 2)], [s[0], s[1]]);
        let last = rows.last().unwrap();
        assert!(
            (field(last, 1) - target[0]).abs() <= 1e-6,
            "{start}: {last:?}"
        );
        assert!(
            (field(last, 2) - target[1]).abs() <= 1e-6,
            "{start}: {last:?}"
        );
        assert!((field(last, 3) - 0.5).abs() <= 1e-8);
        assert!(field(last, 4) <= 1e-8);
    }
}

#[test]
fn trace_fixed_hundred_iterations_stays_at_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    let o = aladin(&[
        "trace",
        "--set",
        "tol_comp=1e-300",
        "--set",
        "tol_step=1e-300",
        "--set",
        "max_outer=100",
        "--out",
        path(&out),
    ]);
    // termination is disabled, so the run ends on the iteration budget
    assert_eq!(o.status.code(), Some(1));
    let rows = rows(&fs::read_to_string(&out).unwrap());
    assert_eq!(rows.len(), 101);
    let last = rows.last().unwrap();
    let x = [field(last, 1), field(last, 2)];
    let err = (x[0] - 1.0)
        .abs()
        .max(x[1].abs())
        .min(x[0].abs().max((x[1] - 1.0).abs()));
    assert!(err <= 1e-6, "{last:?}");
}

#[test]
fn trace_rejects_nonpositive_start() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    let o = aladin(&["trace", "--start", "0,1", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_is_deterministic_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = aladin(&["bench", "--pairs", "10", "--out", path(d)]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let strip = |s: &str| -> Vec<String> {
        s.lines()
            .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_owned())
            .collect()
    };
    for name in ["aladin_beta", "pb_per_step", "pb_per_barrier", "vanilla"] {
        let ta = fs::read_to_string(a.join(format!("{name}.csv"))).unwrap();
        let tb = fs::read_to_string(b.join(format!("{name}.csv"))).unwrap();
        assert_eq!(ta.lines().next().unwrap(), BENCH_HEADER);
        assert_eq!(strip(&ta), strip(&tb), "{name}");
        let rows = rows(&ta);
        assert!(!rows.is_empty());
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), 11);
            assert_eq!(r[0], (i + 1).to_string());
        }
        let distributed = name == "aladin_beta";
        assert_eq!(!rows[0][5].is_empty(), distributed, "{name}");
        assert_eq!(!rows[0][6].is_empty(), distributed, "{name}");
    }
}
