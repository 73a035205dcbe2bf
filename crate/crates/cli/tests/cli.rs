use std::path::Path;
use std::process::{Command, Output};

use pricing_ope::experiments::loglog_slope;
use serde_json::Value;

fn cli(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pricing-ope"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.cfg");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = "data.n = 10\nhyper.budget = 40\nsolver.multistarts = 1\nworkers = 1\n";

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();

    let missing = cli(&["evaluate", "--config", "/nonexistent/run.cfg", "--out", out], &[]);
    assert_eq!(missing.status.code(), Some(2));

    let cfg = write_config(dir.path(), "bound.epsilon = 0\n");
    let bad = cli(&["bound", "--config", &cfg, "--out", out], &[]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("bound.epsilon"));

    let cfg = write_config(dir.path(), "solver.outer_tol = 1e-6\nnot.a.key = 1\n");
    let unknown = cli(&["evaluate", "--config", &cfg, "--out", out], &[]);
    assert_eq!(unknown.status.code(), Some(2));

    let env = cli(&["evaluate", "--out", out], &[("PRICING_OPE_DATA_N", "zero")]);
    assert_eq!(env.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&env.stderr).contains("data.n"));

    let mode = cli(&["no-such-mode"], &[]);
    assert_eq!(mode.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "data.source = csv\ndata.path = /nonexistent/data.csv\ndata.features = a\ntarget.kind = multiplicative\ntarget.factor = 1.1\n",
    );
    let out = cli(&["evaluate", "--config", &cfg, "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/data.csv"));
}

#[test]
fn empty_method_list_gives_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}methods =\n"));
    let out = cli(&["evaluate", "--config", &cfg, "--out", dir.path().to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("evaluate.csv")).unwrap();
    assert_eq!(csv, "method,estimate,wc_objective,lower_bound,mse,bias_sq,variance\n");
}

#[test]
fn csv_data_with_target_policy_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("loans.csv");
    let mut text = String::from("fico,amount,rate,accept\n");
    for i in 0..12 {
        let f = 600 + 17 * i;
        let a = 10_000 + 1_500 * (i % 5);
        let rate = 3.0 + 0.4 * (i % 7) as f64;
        text.push_str(&format!("{f},{a},{rate},{}\n", (i * 7 + 3) % 3 % 2));
    }
    std::fs::write(&data, text).unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            "{SMALL}data.source = csv\ndata.path = {}\ndata.features = fico, amount\ndata.price = rate\ndata.demand = accept\n\
             target.kind = multiplicative\ntarget.factor = 1.1\nobjective = bern\n",
            data.display()
        ),
    );
    let out = cli(&["bound", "--config", &cfg, "--out", dir.path().to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("bound.csv")).unwrap();
    let methods: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["BOPE-Bern", "BOPE-B", "BOPE"]);
    for line in csv.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 7);
        let lower: f64 = cells[3].parse().unwrap();
        assert!(lower >= 0.0);
    }
}

#[test]
fn json_reparses_to_identical_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = cli(&["evaluate", "--config", &cfg, "--out", dir.path().to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("evaluate.json")).unwrap();
    let value: Value = serde_json::from_str(&text).unwrap();
    let again: Value = serde_json::from_str(&serde_json::to_string(&value).unwrap()).unwrap();
    assert_eq!(again, value);

    // every number survives a text round trip bit for bit
    fn walk(v: &Value, count: &mut usize) {
        match v {
            Value::Number(n) => {
                if let Some(x) = n.as_f64() {
                    let back: f64 = serde_json::from_str(&serde_json::to_string(&x).unwrap()).unwrap();
                    assert_eq!(back.to_bits(), x.to_bits());
                    *count += 1;
                }
            }
            Value::Array(a) => a.iter().for_each(|x| walk(x, count)),
            Value::Object(o) => o.values().for_each(|x| walk(x, count)),
            _ => {}
        }
    }
    let mut count = 0;
    walk(&value, &mut count);
    assert!(count > 20);

    // resolved config and fitted hyperparameters are embedded
    assert_eq!(value["config"]["data"]["n"], 10);
    assert!(value["result"]["bernoulli"]["gamma_hat_sq"].is_number());
    assert!(value["result"]["jitter"].is_number());
    let methods = value["result"]["methods"].as_array().unwrap();
    assert_eq!(methods.len(), 4);
    assert!(methods.iter().all(|m| m["lower_bound"].as_f64().unwrap() >= 0.0));
}

#[test]
fn seed_flag_and_env_override_change_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}methods = LASSO\n"));
    let run = |seed: &str, sub: &str, env: &[(&str, &str)]| {
        let out_dir = dir.path().join(sub);
        let out = cli(&["fit-hyper", "--config", &cfg, "--seed", seed, "--out", out_dir.to_str().unwrap()], env);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let v: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("hyper.json")).unwrap()).unwrap();
        v
    };
    let a = run("1", "a", &[]);
    let b = run("2", "b", &[]);
    assert_eq!(a["config"]["seed"], 1);
    assert_ne!(a["result"][0]["seed"], b["result"][0]["seed"]);
    let c = run("1", "c", &[("PRICING_OPE_DATA_N", "14")]);
    assert_eq!(c["config"]["data"]["n"], 14);
}

#[test]
fn rate_slopes_match_the_emitted_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "rate.sizes = 6, 9, 12\nhyper.source = explicit\nhyper.lengthscale_sq = 4, 4, 4\nhyper.gamma_hat_sq = 16\n\
         solver.multistarts = 1\ndata.b = 7.5\n",
    );
    let out = cli(&["rate-check", "--config", &cfg, "--out", dir.path().to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("rate.json")).unwrap()).unwrap();
    let points = v["result"]["points"].as_array().unwrap();
    let col = |key: &str| -> Vec<f64> { points.iter().map(|p| p[key].as_f64().unwrap()).collect() };
    let ns = col("n");
    assert_eq!(loglog_slope(&ns, &col("wc_mse")), v["result"]["slope_mse"].as_f64().unwrap());
    assert_eq!(loglog_slope(&ns, &col("wc_bern")), v["result"]["slope_bern"].as_f64().unwrap());

    // the rounded CSV reproduces the slope to its printed precision
    let csv = std::fs::read_to_string(dir.path().join("rate.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv.lines().skip(1).map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    let x: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let y: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    assert!((loglog_slope(&x, &y) - v["result"]["slope_mse"].as_f64().unwrap()).abs() < 1e-4);
}

#[test]
fn synth_bench_table_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}mc.seeds = 2\nmc.reps = 5\n"));
    let out = cli(&["synth-bench", "--config", &cfg, "--out", dir.path().to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("synth_bench.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,estimate,wc_objective,lower_bound,mse,bias_sq,variance");
    let methods: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["BOPE-B", "BOPE", "LASSO"]);
    for l in &lines[1..] {
        let c: Vec<&str> = l.split(',').collect();
        let (mse, b2, var): (f64, f64, f64) = (c[4].parse().unwrap(), c[5].parse().unwrap(), c[6].parse().unwrap());
        assert!((mse - b2 - var).abs() <= 1e-5 * mse.max(1e-3));
    }
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("synth_bench.json")).unwrap()).unwrap();
    assert_eq!(v["result"]["designs"].as_array().unwrap().len(), 2);
}
