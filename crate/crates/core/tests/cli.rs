use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

fn qslab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qslab"))
        .args(args)
        .output()
        .expect("spawn qslab")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR"))
        .join("cli")
        .join(name);
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn artifacts(dir: &Path) -> Vec<String> {
    let m: Value =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    m["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a.as_str().unwrap().to_string())
        .collect()
}

/// A coarse solution shared by the grid-consuming commands.
fn small_grid() -> &'static PathBuf {
    static GRID: OnceLock<PathBuf> = OnceLock::new();
    GRID.get_or_init(|| {
        let dir = scratch("solve");
        fs::create_dir_all(&dir).unwrap();
        let cfg = dir.join("small.toml");
        fs::write(&cfg, "[solver]\nn_points = 513\n").unwrap();
        let out = dir.join("run");
        let o = qslab(&[
            "--out",
            out.to_str().unwrap(),
            "solve",
            "--config",
            cfg.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let listed = artifacts(&out);
        for f in [
            "grid.qsdg",
            "grid.json",
            "solver_trace.csv",
            "report.json",
            "manifest.json",
        ] {
            assert!(listed.iter().any(|a| a == f), "{f} missing from {listed:?}");
        }
        out.join("grid.qsdg")
    })
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(code(&qslab(&["moments", "--nmax", "3", "--bogus"])), 2);
    assert_eq!(code(&qslab(&["frobnicate"])), 2);
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = scratch("missing");
    let o = qslab(&[
        "--out",
        out.to_str().unwrap(),
        "report",
        "--config",
        "/nonexistent/qslab.toml",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = scratch("badkey");
    fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("bad.toml");
    fs::write(&cfg, "[solver]\nn_pionts = 513\n").unwrap();
    let o = qslab(&[
        "--out",
        dir.join("run").to_str().unwrap(),
        "solve",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_pionts"));
}

#[test]
fn moments_writes_exact_rows() {
    let out = scratch("moments");
    let o = qslab(&["--out", out.to_str().unwrap(), "moments", "--nmax", "4"]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(out.join("moments.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 6);
    assert!(lines.contains(&"0,0,0"));
    assert!(lines.contains(&"1,0,0"));
    assert!(lines.contains(&"2,1,0"));
    assert!(lines.contains(&"3,8/3,2/9"));
    let listed = artifacts(&out);
    for f in [
        "moments.csv",
        "moments_float.csv",
        "report.json",
        "manifest.json",
    ] {
        assert!(listed.iter().any(|a| a == f));
    }
}

#[test]
fn simulate_is_seeded() {
    let a = scratch("sim_a");
    let b = scratch("sim_b");
    for dir in [&a, &b] {
        let o = qslab(&[
            "--out",
            dir.to_str().unwrap(),
            "simulate",
            "--n",
            "50",
            "--count",
            "300",
            "--seed",
            "9",
        ]);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(
        fs::read(a.join("samples.qszs")).unwrap(),
        fs::read(b.join("samples.qszs")).unwrap()
    );
    let csv = fs::read_to_string(a.join("samples.csv")).unwrap();
    assert!(csv.starts_with("index,value\n"));
    assert_eq!(csv.lines().count(), 301);
}

#[test]
fn two_keys_have_no_spread() {
    let out = scratch("sim_two");
    let o = qslab(&[
        "--out",
        out.to_str().unwrap(),
        "simulate",
        "--n",
        "2",
        "--count",
        "20",
    ]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(out.join("samples.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(v, 0.0);
    }
}

#[test]
fn compare_exit_status_follows_the_check() {
    let grid = small_grid();
    let sim = scratch("cmp_sim");
    assert_eq!(
        code(&qslab(&[
            "--out",
            sim.to_str().unwrap(),
            "simulate",
            "--n",
            "2000",
            "--count",
            "2000"
        ])),
        0
    );
    let samples = sim.join("samples.qszs");
    let strict = scratch("cmp_strict");
    let args = |dir: &Path, ks: &str| {
        let v = [
            "--out",
            dir.to_str().unwrap(),
            "compare",
            "--grid",
            grid.to_str().unwrap(),
            "--samples",
            samples.to_str().unwrap(),
            "--ks-max",
            ks,
        ];
        code(&qslab(&v))
    };
    assert_eq!(args(&strict, "0"), 1);
    assert!(strict.join("report.json").exists());
    assert_eq!(args(&scratch("cmp_loose"), "1"), 0);
}

#[test]
fn infeasible_lemma_order_is_rejected() {
    let grid = small_grid();
    let out = scratch("lemmas_bad");
    let o = qslab(&[
        "--out",
        out.to_str().unwrap(),
        "lemmas",
        "--grid",
        grid.to_str().unwrap(),
        "--eps",
        "0.05",
        "--b",
        "0.5",
        "--delta",
        "0.02",
        "--kmax",
        "50",
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("max feasible k"));
}

#[test]
fn lk_rejects_orders_outside_the_range() {
    let grid = small_grid();
    let out = scratch("lk_bad");
    let o = qslab(&[
        "--out",
        out.to_str().unwrap(),
        "lk",
        "--grid",
        grid.to_str().unwrap(),
        "--n",
        "3",
        "--k",
        "2",
    ]);
    assert_eq!(code(&o), 2);
    let out = scratch("lk_ok");
    let o = qslab(&[
        "--out",
        out.to_str().unwrap(),
        "lk",
        "--grid",
        grid.to_str().unwrap(),
        "--n",
        "4",
        "--k",
        "2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(out.join("lk.csv"))
        .unwrap()
        .starts_with("side,x,"));
}

#[test]
fn tails_writes_fit_tables() {
    let grid = small_grid();
    let out = scratch("tails");
    let o = qslab(&[
        "--out",
        out.to_str().unwrap(),
        "tails",
        "--grid",
        grid.to_str().unwrap(),
    ]);
    assert_ne!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "tail_left.csv",
        "tail_right.csv",
        "envelopes.csv",
        "proxies.csv",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let bad = scratch("tails_bad");
    let o = qslab(&[
        "--out",
        bad.to_str().unwrap(),
        "tails",
        "--grid",
        grid.to_str().unwrap(),
        "--right-window",
        "1,2",
    ]);
    assert_eq!(code(&o), 2);
}
