use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn allocsim(command: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_allocsim"))
        .arg(command)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn assert_ok(output: &Output) {
    assert!(
        output.status.success(),
        "exit {:?}\nstderr: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn small_cohort(seed: u64) -> Value {
    json!({ "horizon_days": 10.0, "seed": seed, "initial_waitlist": 60 })
}

fn run_settings() -> Value {
    json!({ "horizon_days": 10.0, "seed": 7, "replications": 3 })
}

fn stderr_json(output: &Output) -> Value {
    serde_json::from_slice(&output.stderr).expect("stderr is one JSON object")
}

#[test]
fn gen_cohort_is_reproducible_and_seed_overridable() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "gen.json", &json!({ "version": 1, "cohort": small_cohort(3) }));
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert_ok(&allocsim("gen-cohort", &cfg, &a, &[]));
    assert_ok(&allocsim("gen-cohort", &cfg, &b, &[]));
    assert_ok(&allocsim("gen-cohort", &cfg, &c, &["--seed", "4"]));
    for file in ["patients.csv", "donors.csv", "cohort.json"] {
        assert!(a.join(file).exists(), "{file}");
    }
    let read = |d: &Path| fs::read(d.join("patients.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));

    // a saved cohort simulates exactly like the generated one
    let sim = |cohort: Value, name: &str| {
        let cfg = write_config(
            tmp.path(),
            &format!("{name}.json"),
            &json!({
                "version": 1, "cohort": cohort, "models": "ground_truth",
                "run": run_settings(), "policy": { "kind": "myopic" }
            }),
        );
        let out = tmp.path().join(name);
        assert_ok(&allocsim("simulate", &cfg, &out, &[]));
        fs::read_to_string(out.join("replications.csv")).unwrap()
    };
    let from_dir = sim(json!({ "dir": a }), "sim_dir");
    let generated = sim(json!({ "generate": small_cohort(3) }), "sim_gen");
    assert_eq!(from_dir, generated);
}

#[test]
fn malformed_config_exits_2_with_location() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, "{\n  \"version\": 1,\n  \"cohort\": { \"horizon_days\": }\n}").unwrap();
    let output = allocsim("gen-cohort", &cfg, &tmp.path().join("o"), &[]);
    assert_eq!(output.status.code(), Some(2));
    let err = stderr_json(&output);
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("line 3"), "{err}");
}

#[test]
fn unknown_keys_and_versions_are_config_errors() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let cases = [
        json!({ "version": 1, "cohort": { "generate": small_cohort(0) }, "kind": "kidney" }),
        json!({ "version": 1, "cohort": { "generate": small_cohort(0) }, "kind": "graft", "colour": 1 }),
        json!({ "version": 2, "cohort": { "generate": small_cohort(0) }, "kind": "graft" }),
        json!({ "version": 1, "cohort": { "generate": small_cohort(0) }, "kind": "graft", "holdout_fraction": 1.5 }),
    ];
    for (i, case) in cases.iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("fit{i}.json"), case);
        let output = allocsim("fit", &cfg, &out, &[]);
        assert_eq!(output.status.code(), Some(2), "case {i}: {}", String::from_utf8_lossy(&output.stderr));
    }
}

#[test]
fn missing_cohort_is_runtime_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "sim.json",
        &json!({
            "version": 1, "cohort": { "dir": "nowhere" }, "models": "ground_truth",
            "run": run_settings(), "policy": { "kind": "myopic" }
        }),
    );
    let output = allocsim("simulate", &cfg, &tmp.path().join("o"), &[]);
    assert_eq!(output.status.code(), Some(3));
    assert_eq!(stderr_json(&output)["error"], "runtime");
}

#[test]
fn fitted_models_discriminate_and_drive_simulation() {
    let tmp = TempDir::new().unwrap();
    let models = tmp.path().join("models");
    let cohort = json!({ "generate": { "horizon_days": 365.0, "seed": 11 } });
    for kind in ["graft", "waitlist", "acceptance"] {
        let cfg = write_config(
            tmp.path(),
            &format!("{kind}.json"),
            &json!({ "version": 1, "cohort": cohort, "kind": kind, "samples": 3000, "seed": 1 }),
        );
        assert_ok(&allocsim("fit", &cfg, &models, &[]));
        let metrics: Value =
            serde_json::from_slice(&fs::read(models.join(format!("{kind}_metrics.json"))).unwrap()).unwrap();
        let score = if kind == "acceptance" { &metrics["auroc"] } else { &metrics["c_index"] };
        assert!(score.as_f64().unwrap() > 0.6, "{kind}: {metrics}");
    }
    let cfg = write_config(
        tmp.path(),
        "sim.json",
        &json!({
            "version": 1,
            "cohort": { "generate": small_cohort(11) },
            "models": { "files": {
                "graft": models.join("graft_model.json"),
                "waitlist": models.join("waitlist_model.json"),
                "acceptance": models.join("acceptance_model.json"),
            } },
            "run": run_settings(),
            "policy": { "kind": "myopic" }
        }),
    );
    assert_ok(&allocsim("simulate", &cfg, &tmp.path().join("sim"), &[]));
}

#[test]
fn simulate_is_deterministic_across_threads() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "sim.json",
        &json!({
            "version": 1, "cohort": { "generate": small_cohort(5) }, "models": "ground_truth",
            "run": run_settings(), "policy": { "kind": "status_quo" }
        }),
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_ok(&allocsim("simulate", &cfg, &a, &[]));
    assert_ok(&allocsim("simulate", &cfg, &b, &["--threads", "4"]));
    for file in ["summary.json", "transplants.csv", "replications.csv"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    let reps = fs::read_to_string(a.join("replications.csv")).unwrap();
    assert_eq!(reps.lines().next(), Some("seed,total_life_years,transplants"));
    assert_eq!(reps.lines().count(), 4);
}

#[test]
fn compare_identical_policies_gives_identical_rows() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "cmp.json",
        &json!({
            "version": 1, "cohort": { "generate": small_cohort(6) }, "models": "ground_truth",
            "run": run_settings(),
            "policies": [
                { "name": "first", "policy": { "kind": "myopic" } },
                { "name": "second", "policy": { "kind": "myopic" } },
                { "name": "sq", "policy": { "kind": "status_quo" } }
            ]
        }),
    );
    let out = tmp.path().join("o");
    assert_ok(&allocsim("compare", &cfg, &out, &[]));
    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "policy,mean,std,n");
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[1].trim_start_matches("first"), rows[2].trim_start_matches("second"));
}

#[test]
fn sweep_batch_size_writes_one_row_per_value() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "sweep.json",
        &json!({
            "version": 1, "cohort": { "generate": small_cohort(8) }, "models": "ground_truth",
            "run": run_settings(), "policy": { "kind": "myopic" },
            "parameter": "batch_B", "values": [1, 2, 5]
        }),
    );
    let out = tmp.path().join("o");
    assert_ok(&allocsim("sweep", &cfg, &out, &[]));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["value", "mean", "std", "delta_vs_first"]);
    assert_eq!(rows.len(), 4);
    assert!(rows[1..].iter().all(|r| r.len() == 4));
    assert_eq!(rows[1][3].parse::<f64>().unwrap(), 0.0);

    // fractional batch sizes and batching under other policies are rejected up front
    for (i, (policy, values)) in [("myopic", json!([1.5])), ("status_quo", json!([2]))].into_iter().enumerate() {
        let cfg = write_config(
            tmp.path(),
            &format!("bad{i}.json"),
            &json!({
                "version": 1, "cohort": { "generate": small_cohort(8) }, "models": "ground_truth",
                "run": run_settings(), "policy": { "kind": policy },
                "parameter": "batch_B", "values": values
            }),
        );
        assert_eq!(allocsim("sweep", &cfg, &out, &[]).status.code(), Some(2), "{policy}");
    }
}

#[test]
fn tune_with_budget_one_returns_zero_potentials() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "tune.json",
        &json!({
            "version": 1,
            "training_cohorts": [{ "generate": small_cohort(20) }],
            "evaluation_cohorts": [{ "generate": small_cohort(21) }],
            "models": "ground_truth",
            "tune": { "budget_evals": 1 },
            "run": run_settings()
        }),
    );
    let out = tmp.path().join("o");
    assert_ok(&allocsim("tune", &cfg, &out, &[]));
    let result: Value = serde_json::from_slice(&fs::read(out.join("tune.json")).unwrap()).unwrap();
    assert_eq!(result["best_theta"], json!([0.0, 0.0, 0.0, 0.0]));
    assert_eq!(result["evaluation_log"].as_array().unwrap().len(), 1);
    let eval = fs::read_to_string(out.join("evaluation.csv")).unwrap();
    assert_eq!(eval.lines().count(), 2);
    // zero potentials reproduce myopic exactly
    let row: Vec<&str> = eval.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[1], row[3]);
}

#[test]
fn tune_rejects_overlapping_cohorts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "tune.json",
        &json!({
            "version": 1,
            "training_cohorts": [{ "generate": small_cohort(20) }],
            "evaluation_cohorts": [{ "generate": small_cohort(20) }],
            "models": "ground_truth",
            "run": run_settings()
        }),
    );
    let output = allocsim("tune", &cfg, &tmp.path().join("o"), &[]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_json(&output)["message"].as_str().unwrap().contains("distinct"));
}
