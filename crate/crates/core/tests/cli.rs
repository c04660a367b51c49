use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use netcpd::datagen::planted_isolation_instance;
use netcpd::detector::read_trace_csv;
use netcpd::experiments::{reaggregate, EddReplicaRow};
use serde_json::{json, Value};
use tempfile::TempDir;

fn netcpd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netcpd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn read(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn trend(n: usize, anomalous: &[usize], slope: f64, kappa: Option<u64>, horizon: u64) -> Value {
    json!({
        "model": {
            "type": "trend", "n_sensors": n, "anomalous": anomalous, "variance": 25.0,
            "slope_null": 1.0, "slope_anomalous": slope, "kappa": kappa, "horizon": horizon
        }
    })
}

#[test]
fn simulate_shape_and_determinism() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "sim.json", &trend(6, &[], 1.0, None, 100));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&netcpd(&[
        "simulate",
        "--config",
        s(&cfg),
        "--seed",
        "11",
        "--out",
        s(&a),
    ]));
    ok(&netcpd(&[
        "simulate",
        "--config",
        s(&cfg),
        "--seed",
        "11",
        "--out",
        s(&b),
    ]));
    let text = fs::read_to_string(a.join("stream.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 101);
    assert!(lines.iter().all(|l| l.split(',').count() == 7));
    assert_eq!(
        fs::read(a.join("stream.csv")).unwrap(),
        fs::read(b.join("stream.csv")).unwrap()
    );
    let sidecar = read(a.join("spec.json"));
    assert_eq!(sidecar["seed"], 11);
    assert_eq!(sidecar["config"]["model"]["type"], "trend");
}

/// Least-squares slope of one column against `t`.
fn ols_slope(ts: &[f64], ys: &[f64]) -> f64 {
    let n = ts.len() as f64;
    let (mt, my) = (ts.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = ts.iter().zip(ys).map(|(t, y)| (t - mt) * (y - my)).sum();
    let sxx: f64 = ts.iter().map(|t| (t - mt) * (t - mt)).sum();
    sxy / sxx
}

#[test]
fn simulated_trend_columns_regress_to_their_slopes() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "sim.json",
        &trend(40, &[0, 1, 2, 3, 4], -0.5, Some(200), 600),
    );
    ok(&netcpd(&[
        "simulate",
        "--config",
        s(&cfg),
        "--seed",
        "3",
        "--out",
        s(dir.path()),
    ]));
    let mut rdr = csv::Reader::from_path(dir.path().join("stream.csv")).unwrap();
    let rows: Vec<Vec<f64>> = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    let (pre, post): (Vec<_>, Vec<_>) = rows.iter().partition(|r| r[0] < 200.0);
    let fit = |part: &[&Vec<f64>], col: usize| {
        let ts: Vec<f64> = part.iter().map(|r| r[0]).collect();
        let ys: Vec<f64> = part.iter().map(|r| r[col]).collect();
        ols_slope(&ts, &ys)
    };
    // slope standard error is about 5 / sqrt(400^3 / 12) ≈ 0.0043
    for col in 1..=40 {
        assert!((fit(&pre, col) - 1.0).abs() < 0.05, "pre col {col}");
        let want = if col <= 5 { -0.5 } else { 1.0 };
        assert!((fit(&post, col) - want).abs() < 0.03, "post col {col}");
    }
}

#[test]
fn missing_seed_fails_with_marker_and_success_clears_it() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "sim.json", &trend(3, &[], 1.0, None, 10));
    let out = dir.path().join("out");
    let run = netcpd(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(run.status.code(), Some(1));
    let marker = fs::read_to_string(out.join("FAILED")).unwrap();
    assert!(marker.contains("--seed"));
    ok(&netcpd(&[
        "simulate",
        "--config",
        s(&cfg),
        "--seed",
        "1",
        "--out",
        s(&out),
    ]));
    assert!(!out.join("FAILED").exists());

    let bad = write_config(dir.path(), "bad.json", &json!({"model": {"type": "trend"}}));
    let run = netcpd(&["simulate", "--config", s(&bad), "--seed", "1", "--out", s(&out)]);
    assert_eq!(run.status.code(), Some(1));
    assert!(out.join("FAILED").exists());
}

fn calibrate_config(target: f64) -> Value {
    json!({
        "model": {"type": "trend", "n_sensors": 8, "variance": 4.0, "slope_anomalous": 1.0, "horizon": 1000},
        "detection": {"w": 10},
        "calibration": {"target_arl": target, "replicas": 60},
        "validation_replicas": 60
    })
}

fn calibrate(dir: &Path, target: f64, parallel: &str) -> Value {
    let cfg = write_config(dir, &format!("cal{target}.json"), &calibrate_config(target));
    let out = dir.join(format!("cal{target}-{parallel}"));
    ok(&netcpd(&[
        "calibrate",
        "--config",
        s(&cfg),
        "--seed",
        "8",
        "--parallel",
        parallel,
        "--out",
        s(&out),
    ]));
    read(out.join("calibration.json"))
}

#[test]
fn calibrate_edges_monotonicity_and_replay() {
    let dir = TempDir::new().unwrap();
    assert_eq!(calibrate(dir.path(), 10.0, "1")["b"], -1.0);
    let low = calibrate(dir.path(), 40.0, "1");
    let high = calibrate(dir.path(), 120.0, "2");
    assert!(low["b"].as_f64().unwrap() <= high["b"].as_f64().unwrap());
    assert_eq!(high, calibrate(dir.path(), 120.0, "1"));

    // replay from the embedded config and seed
    let echo = write_config(dir.path(), "echo.json", &high["config"]);
    let out = dir.path().join("replay");
    let seed = high["seed"].to_string();
    ok(&netcpd(&[
        "calibrate",
        "--config",
        s(&echo),
        "--seed",
        &seed,
        "--out",
        s(&out),
    ]));
    assert_eq!(read(out.join("calibration.json")), high);
}

#[test]
fn detect_alarms_after_covariance_change_and_trace_agrees() {
    let dir = TempDir::new().unwrap();
    let sim = json!({"model": {
        "type": "covariance", "n_sensors": 20, "anomalous": [0, 1, 2],
        "rho_normal": 0.5, "rho_cross": -0.2, "kappa": 100, "horizon": 300
    }});
    let sim = write_config(dir.path(), "sim.json", &sim);
    ok(&netcpd(&[
        "simulate",
        "--config",
        s(&sim),
        "--seed",
        "21",
        "--out",
        s(dir.path()),
    ]));
    let det = write_config(dir.path(), "det.json", &json!({"w": 25, "b": 0.0}));
    let stream = dir.path().join("stream.csv");
    ok(&netcpd(&[
        "detect",
        "--config",
        s(&det),
        "--input",
        s(&stream),
        "--out",
        s(dir.path()),
    ]));
    let report = read(dir.path().join("detection.json"));
    let t = report["stopping"]["t"].as_u64().unwrap();
    assert_eq!(report["stopping"]["status"], "alarm");
    assert!((100..=175).contains(&t), "{t}");

    let trace = read_trace_csv(fs::File::open(dir.path().join("trace.csv")).unwrap()).unwrap();
    let first = trace.iter().filter(|r| r.rho > 0.0).map(|r| r.t).min().unwrap();
    assert_eq!(first, t);
    let node = trace
        .iter()
        .filter(|r| r.t == t)
        .fold(None, |best: Option<(usize, f64)>, r| match best {
            Some((_, v)) if r.rho <= v => best,
            _ => Some((r.node, r.rho)),
        })
        .unwrap();
    assert_eq!(report["stopping"]["node"], node.0);
    assert_eq!(report["stopping"]["statistic"], node.1);

    // the alarm snapshot reproduces the winning statistic and feeds isolate
    let snap = read(dir.path().join("alarm_snapshot.json"));
    assert_eq!(snap["t"], t);
    let row: Vec<f64> = snap["y"][node.0]
        .as_array()
        .unwrap()
        .iter()
        .filter_map(|v| v.as_f64())
        .collect();
    let rho = -row.iter().sum::<f64>() / row.len() as f64;
    assert!((rho - node.1).abs() < 1e-12, "{rho} vs {}", node.1);
    ok(&netcpd(&[
        "isolate",
        "--input",
        s(&dir.path().join("alarm_snapshot.json")),
        "--seed",
        "1",
        "--out",
        s(dir.path()),
    ]));

    // a threshold no statistic can exceed leaves the run censored
    let never = write_config(dir.path(), "never.json", &json!({"w": 25, "b": 1.0}));
    let out = dir.path().join("never");
    ok(&netcpd(&[
        "detect",
        "--config",
        s(&never),
        "--input",
        s(&stream),
        "--out",
        s(&out),
    ]));
    let report = read(out.join("detection.json"));
    assert_eq!(report["stopping"], json!({"status": "censored", "horizon": 300}));
    assert!(!out.join("alarm_snapshot.json").exists());
}

#[test]
fn edd_sweep_tables_reload_and_ignore_thread_count() {
    let dir = TempDir::new().unwrap();
    let cfg = json!({
        "model": {"n_sensors": 10, "anomalous": [0, 1], "variance": 4.0, "slope_anomalous": 0.0, "kappa": 10, "horizon": 500},
        "detection": {"w": 10},
        "b": -0.2,
        "slopes": [-0.2, -0.6, -1.0],
        "replicas": 40,
        "horizon": 500
    });
    let cfg = write_config(dir.path(), "sweep.json", &cfg);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&netcpd(&[
        "edd-sweep",
        "--config",
        s(&cfg),
        "--seed",
        "5",
        "--parallel",
        "1",
        "--out",
        s(&a),
    ]));
    ok(&netcpd(&[
        "edd-sweep",
        "--config",
        s(&cfg),
        "--seed",
        "5",
        "--parallel",
        "4",
        "--out",
        s(&b),
    ]));
    for f in ["edd_sweep.json", "edd_sweep.csv", "edd_replicas.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let report = read(a.join("edd_sweep.json"));
    let mut rdr = csv::Reader::from_path(a.join("edd_replicas.csv")).unwrap();
    let rows: Vec<EddReplicaRow> = rdr.deserialize().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 120);
    for ((slope, mean), row) in reaggregate(&rows).iter().zip(report["rows"].as_array().unwrap()) {
        assert_eq!(*slope, row["slope"].as_f64().unwrap());
        assert_eq!(*mean, row["edd"].as_f64());
    }
    let table = fs::read_to_string(a.join("edd_sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn isolate_reports_membership_and_permutation() {
    let dir = TempDir::new().unwrap();
    let snap = planted_isolation_instance(9, &[2, 6], 0.8, -0.5, 0.05, 3).unwrap();
    let input = write_config(dir.path(), "snap.json", &serde_json::to_value(snap.to_json()).unwrap());
    ok(&netcpd(&[
        "isolate",
        "--input",
        s(&input),
        "--seed",
        "1",
        "--out",
        s(dir.path()),
    ]));
    let r = read(dir.path().join("isolation.json"));
    assert_eq!(r["method"], "spectral_refine");
    assert_eq!(r["S"], json!([2, 6]));
    assert_eq!(r["permutation"], json!([0, 1, 3, 4, 5, 7, 8, 2, 6]));
    assert!(r["eigengap"].as_f64().unwrap() > 0.0);

    let out = dir.path().join("noseed");
    let run = netcpd(&["isolate", "--input", s(&input), "--out", s(&out)]);
    assert_eq!(run.status.code(), Some(1));

    let brute = write_config(dir.path(), "brute.json", &json!({"method": "brute_force"}));
    let out = dir.path().join("brute");
    ok(&netcpd(&[
        "isolate",
        "--config",
        s(&brute),
        "--input",
        s(&input),
        "--out",
        s(&out),
    ]));
    let b = read(out.join("isolation.json"));
    assert_eq!(b["S"], r["S"]);
    assert_eq!(b["objective"], r["objective"]);
}

#[test]
fn bounds_report_and_sigma2_helper() {
    let dir = TempDir::new().unwrap();
    let u: Vec<Vec<f64>> = (0..4)
        .map(|i| (0..4).map(|k| if k == i { 1.0 } else { 0.0 }).collect())
        .collect();
    let input = json!({
        "gamma": 5000.0, "S": [0],
        "gaussian": {"mu0": 0.6, "sigma0": 0.2, "mu1": -0.1, "sigma1": 0.25},
        "U": u, "sigma2": 0.1
    });
    let cfg = write_config(dir.path(), "bounds.json", &input);
    ok(&netcpd(&["bounds", "--config", s(&cfg), "--out", s(dir.path())]));
    let r = read(dir.path().join("bounds.json"));
    assert_eq!(r["cut"], 3);
    assert_eq!(r["kl_source"], "gaussian");
    let want = 5000f64.ln() / (3.0 * 6.183_106_448_685_789);
    assert!((r["edd_bound"].as_f64().unwrap() / want - 1.0).abs() < 1e-12);
    assert_eq!(r["config"]["gamma"], 5000.0);

    let sim = write_config(dir.path(), "sim.json", &trend(5, &[], 1.0, None, 200));
    ok(&netcpd(&[
        "simulate",
        "--config",
        s(&sim),
        "--seed",
        "2",
        "--out",
        s(dir.path()),
    ]));
    let stream = dir.path().join("stream.csv");
    ok(&netcpd(&[
        "bounds",
        "--estimate-sigma2",
        s(&stream),
        "--window",
        "20",
        "--from",
        "50",
        "--to",
        "150",
        "--out",
        s(dir.path()),
    ]));
    let est = read(dir.path().join("sigma2_estimate.json"));
    assert_eq!(est["snapshots"], 101);
    let v = est["sigma2"].as_f64().unwrap();
    assert!(v > 0.0 && v < 1.0, "{v}");
}

#[test]
fn experiments_run_from_the_cli() {
    let dir = TempDir::new().unwrap();
    let configs = [
        (
            "zero-threshold",
            "zero_threshold.json",
            json!({
                "model": {"n_sensors": 12, "anomalous": [0, 1], "rho_normal": 0.5, "rho_cross": -0.2, "kappa": 40, "horizon": 300},
                "detection": {"w": 15}, "replicas": 10, "horizon": 300,
                "histogram": {"replicas": 3, "ticks": 20, "bins": 10}
            }),
        ),
        (
            "tail-check",
            "tail_check.json",
            json!({"n": 8, "c": 0.3, "sigma2": 0.2, "anomalous": [0], "ticks": 2000}),
        ),
        (
            "isolation-bench",
            "isolation_bench.json",
            json!({"instances": 8, "n": 8, "anomalous_size": 2, "mu_in": 0.8, "mu_cross": -0.5, "sigma": 0.2}),
        ),
    ];
    for (kind, file, cfg) in configs {
        let cfg = write_config(dir.path(), &format!("{kind}.json"), &cfg);
        let (a, b) = (
            dir.path().join(format!("{kind}-1")),
            dir.path().join(format!("{kind}-4")),
        );
        ok(&netcpd(&[
            "experiment",
            kind,
            "--config",
            s(&cfg),
            "--seed",
            "9",
            "--parallel",
            "1",
            "--out",
            s(&a),
        ]));
        ok(&netcpd(&[
            "experiment",
            kind,
            "--config",
            s(&cfg),
            "--seed",
            "9",
            "--parallel",
            "4",
            "--out",
            s(&b),
        ]));
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{kind}"
        );
        assert_eq!(read(a.join(file))["seed"], 9);
    }
}
