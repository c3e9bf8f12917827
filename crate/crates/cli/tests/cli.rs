use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use tempfile::TempDir;

const SMALL: &str = r#"
[market]
d = 10
T_days = 100

[schedule]
mesh_days = 5

[mc]
n_paths = 20
"#;

fn spt(args: &[&str]) -> Output {
    spt_env(args, &[])
}

fn spt_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_spt"));
    cmd.args(args).env_remove("SPT_SEED").env_remove("SPT_PATHS").env_remove("SPT_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn repo_config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn manifest(out: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn checksums(out: &Path) -> Vec<(String, String)> {
    manifest(out)["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| (o["file"].as_str().unwrap().to_string(), o["sha256"].as_str().unwrap().to_string()))
        .collect()
}

#[test]
fn missing_config_exits_two_without_outputs() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = spt(&["simulate", "--config", "does/not/exist.toml", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("error"));
    assert!(!out.exists());
}

#[test]
fn unknown_config_key_exits_two() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "bad.toml", "[market]\nnot_a_key = 1\n");
    let out = dir.path().join("out");
    let o = spt(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&spt(&["simulate"])), 2);
    assert_eq!(code(&spt(&["no-such-command"])), 2);
}

#[test]
fn unwritable_output_exits_three() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "small.toml", SMALL);
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = spt(&["simulate", "--config", cfg.to_str().unwrap(), "--out", blocker.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn simulate_writes_outputs_with_valid_checksums() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "small.toml", SMALL);
    let out = dir.path().join("a");
    let o = spt(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["summary.csv", "terminals.csv", "reports.csv", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let sums = checksums(&out);
    assert_eq!(sums.len(), 3);
    for (file, sum) in &sums {
        let bytes = fs::read(out.join(file)).unwrap();
        assert_eq!(&hex::encode(Sha256::digest(&bytes)), sum, "{file}");
    }
    let m = manifest(&out);
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["master_seed"], 20240101);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    let header = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(header.starts_with("step,time,mean_logrel,sd_logrel,q10,q25,q75,q90,mean_cost\n"));

    let again = dir.path().join("b");
    let o = spt(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
        "--threads",
        "2",
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(checksums(&again), sums);

    let o = spt(&["simulate", "--config", cfg.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(checksums(&again), sums);
    assert_eq!(manifest(&again)["config_hash"], m["config_hash"]);
}

#[test]
fn overrides_follow_config_env_flag_precedence() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "small.toml", SMALL);
    let out = dir.path().join("out");
    let args = ["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    let paths_line = |o: &Output| stdout(o).lines().next().unwrap().to_string();

    assert_eq!(paths_line(&spt(&args)), "paths: 20 (excluded 0)");
    let env = spt_env(&args, &[("SPT_PATHS", "7"), ("SPT_SEED", "5")]);
    assert_eq!(paths_line(&env), "paths: 7 (excluded 0)");
    assert_eq!(manifest(&out)["master_seed"], 5);
    let mut with_flag = args.to_vec();
    with_flag.extend(["--paths", "4", "--seed", "9"]);
    let flag = spt_env(&with_flag, &[("SPT_PATHS", "7"), ("SPT_SEED", "5")]);
    assert_eq!(paths_line(&flag), "paths: 4 (excluded 0)");
    assert_eq!(manifest(&out)["master_seed"], 9);
}

#[test]
fn sweep_on_shock_config_writes_one_row_per_mesh() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = spt(&[
        "sweep",
        "--config",
        &repo_config("shock.toml"),
        "--out",
        out.to_str().unwrap(),
        "--paths",
        "10",
        "--mesh",
        "1,5,10,20",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("mesh_days,edge_bp"));
    let meshes: Vec<f64> = lines[1..].iter().map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(meshes, [1.0, 5.0, 10.0, 20.0]);
}

#[test]
fn sweep_rejects_mesh_that_does_not_divide_horizon() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = spt(&[
        "sweep",
        "--config",
        &repo_config("baseline.toml"),
        "--out",
        out.to_str().unwrap(),
        "--paths",
        "2",
        "--mesh",
        "7",
    ]);
    assert_eq!(code(&o), 2);
    assert!(!out.join("sweep.csv").exists());
}

#[test]
fn sweep_deduplicates_meshes_with_warning() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "small.toml", SMALL);
    let out = dir.path().join("out");
    let o = spt(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--mesh",
        "5,1,5,10",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("warning: duplicate mesh"));
    let rows = fs::read_to_string(out.join("sweep.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows, 3);
}

#[test]
fn audit_baseline_has_no_violations() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = spt(&[
        "audit",
        "--config",
        &repo_config("baseline.toml"),
        "--out",
        out.to_str().unwrap(),
        "--paths",
        "40",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("master inequality violations: 0/40"));
    assert!(out.join("reports.csv").is_file());
    assert!(out.join("diagnostics.csv").is_file());
}

#[test]
fn audit_counts_injected_violations_and_exits_one() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "small.toml", SMALL);
    let out = dir.path().join("out");
    let o = spt(&[
        "audit",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--inject-violation",
        "3",
    ]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("master inequality violations: 3/20"));
    let reports = fs::read_to_string(out.join("reports.csv")).unwrap();
    assert_eq!(reports.lines().filter(|l| l.ends_with(",true")).count(), 3);
}

#[test]
fn audit_reports_tolerance_count_on_frictionless_config() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = spt(&[
        "audit",
        "--config",
        &repo_config("frictionless.toml"),
        "--out",
        out.to_str().unwrap(),
        "--paths",
        "10",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let line = stdout(&o).lines().find(|l| l.starts_with("|slack| <= tol_quad:")).unwrap().to_string();
    let within: usize = line.split(": ").nth(1).unwrap().split('/').next().unwrap().parse().unwrap();
    // The printed count agrees with the per-path reports.
    let mut rdr = csv::Reader::from_path(out.join("reports.csv")).unwrap();
    let h = rdr.headers().unwrap().clone();
    let (si, ti) = (
        h.iter().position(|x| x == "slack").unwrap(),
        h.iter().position(|x| x == "tolerance").unwrap(),
    );
    let counted = rdr
        .records()
        .map(|r| r.unwrap())
        .filter(|r| r[si].parse::<f64>().unwrap().abs() <= r[ti].parse::<f64>().unwrap())
        .count();
    assert_eq!(within, counted);
}

fn make_panel(dir: &TempDir) -> PathBuf {
    let panel = dir.path().join("panel.csv");
    let cfg = write_config(dir, "panel.toml", "[market]\nd = 8\n");
    let o = spt(&[
        "panel",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        panel.to_str().unwrap(),
        "--years",
        "2",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    panel
}

#[test]
fn backtest_on_synthetic_panel_reports_net_cagr() {
    let dir = TempDir::new().unwrap();
    let panel = make_panel(&dir);
    let out = dir.path().join("out");
    let o = spt(&[
        "backtest",
        "--panel",
        panel.to_str().unwrap(),
        "--config",
        &repo_config("baseline.toml"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report["net_cagr"].is_f64());
    assert!(report["net_cagr"].as_f64().unwrap() <= report["gross_cagr"].as_f64().unwrap());
    let curves = fs::read_to_string(out.join("curves.csv")).unwrap();
    assert!(curves.starts_with("date,gross,net,benchmark\n"));
    assert_eq!(checksums(&out).len(), 2);
}

#[test]
fn zero_spread_panel_reports_net_equal_to_gross() {
    let dir = TempDir::new().unwrap();
    let panel = make_panel(&dir);
    let text = fs::read_to_string(&panel).unwrap();
    let mut zero = String::new();
    for (k, line) in text.lines().enumerate() {
        if k == 0 {
            zero.push_str(line);
        } else {
            let mut f: Vec<&str> = line.split(',').collect();
            f[3] = "0";
            zero.push_str(&f.join(","));
        }
        zero.push('\n');
    }
    let zpanel = dir.path().join("zero.csv");
    fs::write(&zpanel, zero).unwrap();
    let out = dir.path().join("out");
    let o = spt(&[
        "backtest",
        "--panel",
        zpanel.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--keep-zero-spread",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["net"], report["gross"]);
    assert_eq!(report["net_cagr"], report["gross_cagr"]);
    assert_eq!(report["total_cost"], 0.0);

    // Without the flag every zero-spread row is filtered away.
    let o = spt(&["backtest", "--panel", zpanel.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn malformed_panel_row_exits_two_with_line_number() {
    let dir = TempDir::new().unwrap();
    let panel = dir.path().join("bad.csv");
    fs::write(
        &panel,
        "date,asset,mid,half_spread_bps\n2024-01-02,A,1.0,10\n2024-01-02,B,abc,10\n",
    )
    .unwrap();
    let o = spt(&["backtest", "--panel", panel.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn path_dump_writes_four_csvs() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "small.toml", SMALL);
    let out = dir.path().join("out");
    let o = spt(&["path", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--index", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let heads = [
        ("market.csv", "step,time,asset,price,weight"),
        ("cost.csv", "step,time,kappa_bps"),
        ("ledger.csv", "step,time,V,V_mkt,log_rel,C,kappa_bps"),
        ("rebalances.csv", "n,t_n,turnover,cost_paid"),
    ];
    for (f, h) in heads {
        let text = fs::read_to_string(out.join(f)).unwrap();
        assert_eq!(text.lines().next().unwrap(), h, "{f}");
    }
    let market_rows = fs::read_to_string(out.join("market.csv")).unwrap().lines().count() - 1;
    assert_eq!(market_rows, 101 * 10);
}
