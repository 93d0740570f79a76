use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"{
    "seed": 3,
    "disease": {"population_size": 4000, "horizon": 30},
    "scenario": {"kind": "outbreak", "horizon": 30},
    "sampling": {"type": "cross_sectional", "fraction": 0.01},
    "svi": {"iterations": 60},
    "benchmark": {"instances": 1, "methods": ["cori"], "grid": [
        {"test": "pcr", "scheme": {"type": "cross_sectional", "fraction": 0.01}},
        {"test": "pcr", "scheme": {"type": "uniform_undersampling", "p_test": 0.1}},
        {"test": "serological", "scheme": {"type": "longitudinal", "fraction": 0.05, "cadence": 7}}
    ]}
}"#;

fn rt_infer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rt-infer"))
        .args(args)
        .env_remove("RT_INFER_THREADS")
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn simulate_infer_cori() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, CONFIG).unwrap();
    let sim = dir.path().join("sim");
    let out = rt_infer(&["simulate", "--config", path(&config), "--out", path(&sim)]);
    assert!(out.status.success(), "{}", stderr(&out));
    for file in ["infections.csv", "observations.csv", "truth.csv", "manifest.json"] {
        assert!(sim.join(file).exists(), "{file}");
    }
    let obs = sim.join("observations.csv");
    let text = std::fs::read_to_string(&obs).unwrap();
    assert_eq!(text.lines().next(), Some("day,positives"));
    assert_eq!(text.lines().count(), 31);

    let fit = dir.path().join("fit");
    let out = rt_infer(&["infer", "--observations", path(&obs), "--config", path(&config), "--out", path(&fit)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let posterior = std::fs::read_to_string(fit.join("posterior.csv")).unwrap();
    assert_eq!(posterior.lines().count(), 31);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fit.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["iterations"], 60);
    assert!(summary["final_elbo"].as_f64().unwrap().is_finite());

    let cori = dir.path().join("cori");
    let out = rt_infer(&["cori", "--observations", path(&obs), "--config", path(&config), "--out", path(&cori)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(cori.join("cori.csv").exists());
}

#[test]
fn missing_horizon_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"disease": {"population_size": 100}, "sampling": {"type": "cross_sectional", "fraction": 0.1}}"#)
        .unwrap();
    let out = rt_infer(&["simulate", "--config", path(&config), "--out", path(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("horizon"), "{}", stderr(&out));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, CONFIG.replace("\"seed\"", "\"sead\"")).unwrap();
    let out = rt_infer(&["simulate", "--config", path(&config), "--out", path(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("sead"));
}

#[test]
fn corrupt_observation_row_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, CONFIG).unwrap();
    let mut csv = String::from("day,positives\n");
    for day in 1..=30 {
        csv.push_str(&format!("{day},{}\n", if day == 7 { "seven".into() } else { day.to_string() }));
    }
    let obs = dir.path().join("obs.csv");
    std::fs::write(&obs, csv).unwrap();
    let out = rt_infer(&["infer", "--observations", path(&obs), "--config", path(&config), "--out", path(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    // rows are counted as lines of the file, header included
    assert!(err.contains("row 8"), "{err}");
}

#[test]
fn wrong_length_observations_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, CONFIG).unwrap();
    let obs = dir.path().join("obs.csv");
    std::fs::write(&obs, "day,positives\n1,0\n2,1\n").unwrap();
    let out = rt_infer(&["infer", "--observations", path(&obs), "--config", path(&config), "--out", path(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn resumed_run_matches_a_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, iterations: usize| {
        let p = dir.path().join(name);
        std::fs::write(&p, CONFIG.replace("\"iterations\": 60", &format!("\"iterations\": {iterations}"))).unwrap();
        p
    };
    let short = write("short.json", 30);
    let long = write("long.json", 60);
    let obs = dir.path().join("obs.csv");
    let counts: String = (1..=30).map(|d| format!("{d},{}\n", d % 4)).collect();
    std::fs::write(&obs, format!("day,positives\n{counts}")).unwrap();

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    assert!(rt_infer(&["infer", "--observations", path(&obs), "--config", path(&long), "--out", path(&a)]).status.success());
    assert!(rt_infer(&["infer", "--observations", path(&obs), "--config", path(&short), "--out", path(&b)]).status.success());
    let out = rt_infer(&[
        "infer", "--observations", path(&obs), "--config", path(&long), "--out", path(&c),
        "--resume", path(&b.join("checkpoint.json")),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for file in ["posterior.csv", "elbo.csv", "checkpoint.json", "summary.json"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(c.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn benchmark_writes_one_file_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, CONFIG).unwrap();
    let bench = dir.path().join("bench");
    let out = rt_infer(&["benchmark", "--config", path(&config), "--out", path(&bench)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let cells = std::fs::read_dir(&bench)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_str().unwrap().starts_with("cell_"))
        .count();
    assert_eq!(cells, 3);
    let summary = std::fs::read_to_string(bench.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);

    let coverage = dir.path().join("coverage.csv");
    let out = rt_infer(&["calibrate", "--results", path(&bench), "--out", path(&coverage), "--levels", "0.5,0.9"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&coverage).unwrap();
    assert_eq!(text.lines().next(), Some("method,level,coverage"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn zero_threads_is_rejected() {
    let out = rt_infer(&["calibrate", "--results", ".", "--out", "x.csv", "--threads", "0"]);
    assert_eq!(out.status.code(), Some(2));
}
