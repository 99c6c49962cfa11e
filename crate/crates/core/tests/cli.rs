//! The command-line tool: outputs, overrides and exit codes.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sdflow::driver::config::CollocationConfig;
use sdflow::driver::config::Counts;

fn sdflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdflow")).args(args).output().unwrap()
}

fn write_config(dir: &Path, cfg: &sdflow::driver::RunConfig) -> String {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

/// A quick two-subdomain config.
fn quick() -> sdflow::driver::RunConfig {
    common::strip(true, 4, 2)
}

#[test]
fn run_writes_every_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &quick());
    let out = tmp.path().join("out");
    let res = sdflow(&["run", &cfg, "--method", "s3", "--workers", "2", "--out-dir", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let stats = fs::read_to_string(out.join("solve_stats.csv")).unwrap();
    let mut lines = stats.lines();
    assert_eq!(lines.next(), Some("method,subdomain,factorizations,backsolves,cg_iters_total,wall_seconds"));
    assert_eq!(lines.count(), 2);
    assert!(stats.lines().skip(1).all(|l| l.starts_with("s3,")));

    let fields = fs::read_to_string(out.join("fields.csv")).unwrap();
    assert!(fields.starts_with("x,y,mean_u,mean_v,mean_p,var_u,var_v,var_p\n"));
    assert_eq!(fields.lines().count(), 1 + 2 * 16);

    let vtk = fs::read_to_string(out.join("subdomain_0.vtk")).unwrap();
    assert!(vtk.starts_with("# vtk DataFile Version 3.0"));
    assert!(vtk.contains("CELL_DATA 16"));

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["method"], "s3");
    assert_eq!(manifest["n_real"], 8);
    assert_eq!(manifest["n_real_local"], serde_json::json!([8]));

    // the config echo carries the overrides and parses again
    let echo = sdflow::driver::parse_config(&out.join("config.json")).unwrap();
    assert_eq!(echo.solver.workers, 2);
    assert_eq!(echo.solver.method, sdflow::interface::Method::S3);
}

#[test]
fn reruns_without_timing_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &quick());
    let mut files = Vec::new();
    for (name, workers) in [("a", "1"), ("b", "1"), ("c", "3")] {
        let dir = tmp.path().join(name);
        let res = sdflow(&["run", &cfg, "--no-timing", "--workers", workers, "--out-dir", dir.to_str().unwrap()]);
        assert!(res.status.success());
        files.push((
            fs::read(dir.join("solve_stats.csv")).unwrap(),
            fs::read(dir.join("fields.csv")).unwrap(),
        ));
    }
    assert_eq!(files[0], files[1]);
    assert_eq!(files[0].1, files[2].1);
}

fn error_kind(out: &Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let v: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert!(v["message"].is_string());
    v["error"].as_str().unwrap().to_string()
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();

    let missing = sdflow(&["run", tmp.path().join("none.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"blocks": [], "bogus": 1}"#).unwrap();
    let res = sdflow(&["validate", bad.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(error_kind(&res), "config");

    let mut cfg = quick();
    cfg.solver.max_iter = Some(1);
    cfg.solver.tol = 1e-14;
    let path = write_config(tmp.path(), &cfg);
    let res = sdflow(&["run", &path, "--out-dir", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(3));
    assert_eq!(error_kind(&res), "convergence");

    let mut cfg = quick();
    cfg.solver.basis_memory_cap_mb = Some(1e-9);
    let path = write_config(tmp.path(), &cfg);
    let res = sdflow(&["run", &path, "--method", "s3", "--out-dir", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(4));
    assert_eq!(error_kind(&res), "resource_cap");
}

#[test]
fn validate_reports_sizes() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/case1_mini.json");
    let res = sdflow(&["validate", path.to_str().unwrap(), "--method", "s3"]);
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    assert!(text.contains("subdomains 6"));
    assert!(text.contains("mortar dofs 48"));
    assert!(text.contains("n_real 32"));
    assert!(text.contains("n_real region 1: 8"));
    assert!(text.contains("s3 basis memory"));
}

#[test]
fn eig_and_grid_dumps() {
    let res = sdflow(&["eig", r#"{"variance": 1.0, "eta": [0.1, 0.1], "rect": [0, 1, 0, 1], "n_term": [2, 2]}"#]);
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "j,lambda,p,q,lambda_x,lambda_y");
    assert_eq!(rows.len(), 5);
    let lam: Vec<f64> = rows[1..].iter().map(|r| r.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(lam.windows(2).all(|w| w[0] >= w[1]));

    let spec = serde_json::json!({"kind": "sparse", "level": 1, "region_dims": [25, 25]});
    let res = sdflow(&["grid", &spec.to_string()]);
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    assert!(text.starts_with("# n_real 101 local 51 51\n"));
    assert_eq!(text.lines().count(), 2 + 101);

    let res = sdflow(&["grid", r#"{"kind": "tensor", "m": 2, "region_dims": [1, 2]}"#]);
    assert!(res.status.success());
    assert!(String::from_utf8(res.stdout).unwrap().starts_with("# n_real 8 local 2 4\n"));

    let res = sdflow(&["grid", r#"{"kind": "tensor", "m": 0, "region_dims": [1]}"#]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn shipped_configs_round_trip() {
    for text in [common::CASE1, common::CASE2] {
        let cfg = sdflow::driver::parse_config_str(text).unwrap();
        let again = sdflow::driver::parse_config_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, again);
        cfg.validate().unwrap();
    }
    let case2 = common::case2();
    assert!(matches!(case2.collocation, CollocationConfig::Tensor { m: Counts::One(2) }));
}

#[test]
fn deterministic_config_has_zero_variance() {
    let mut cfg = quick();
    cfg.kl_regions[0].n_term = Counts::One(0);
    let (prep, out) = sdflow::driver::solve(&cfg).unwrap();
    assert_eq!(prep.grid.n_real(), 1);
    assert_eq!(out.lambdas.len(), 1);
    assert!(out.moments.variance.iter().flatten().all(|&v| v == 0.0));
    assert!(out.moments.mean[0].iter().any(|&v| v != 0.0));
    for st in &out.stats {
        assert_eq!(st.backsolves, out.iterations[0] as u64 + 2);
    }
}
