use std::path::Path;
use std::process::{Command, Output};

fn drsl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drsl")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = drsl(args);
    assert!(out.status.success(), "drsl {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn simulate_writes_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let med = dir.path().join("med.csv");
    ok(&["simulate", "--scenario", "mediation", "--n", "50", "--seed", "4", "--out", s(&med), "--with-outcome"]);
    let text = read(&med);
    assert!(text.starts_with("w,a,m,y\n"));
    assert_eq!(text.lines().count(), 51);
    for line in text.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!((2.0..=8.0).contains(&v[0]) && (v[1] == 0.0 || v[1] == 1.0) && (0.0..=1.0).contains(&v[2]));
    }

    let lmtp = dir.path().join("lmtp.csv");
    ok(&["simulate", "--scenario", "lmtp", "--n", "20", "--seed", "4", "--out", s(&lmtp)]);
    assert!(read(&lmtp).starts_with("w1,a1,w2,a2,w3,a3,w4,a4\n"));

    let aug = dir.path().join("aug.csv");
    ok(&["simulate", "--scenario", "lmtp", "--n", "20", "--seed", "4", "--period", "3", "--out", s(&aug)]);
    let text = read(&aug);
    assert!(text.starts_with("a3,w1,a1,w2,a2,w3,lambda\n"));
    assert_eq!(text.lines().count(), 41);
    let manifest: serde_json::Value = serde_json::from_str(&read(&dir.path().join("aug.csv.manifest.json"))).unwrap();
    assert_eq!(manifest["details"]["period"], 3);
    assert_eq!(manifest["run_id"].as_str().unwrap().len(), 12);
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    ok(&["simulate", "--scenario", "lmtp", "--n", "100", "--seed", "8", "--out", s(&a), "--with-outcome"]);
    ok(&["--jobs", "2", "simulate", "--scenario", "lmtp", "--n", "100", "--seed", "8", "--out", s(&b), "--with-outcome"]);
    assert_eq!(read(&a), read(&b));
}

#[test]
fn fit_evaluate_profile_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    ok(&["simulate", "--scenario", "mediation", "--n", "300", "--seed", "1", "--out", s(&p("train.csv"))]);
    ok(&["simulate", "--scenario", "mediation", "--n", "1000", "--seed", "2", "--out", s(&p("hold.csv"))]);
    std::fs::write(p("schema.json"), r#"{"x1":["m"],"x2":["w"],"label":"a","scenario":"mediation"}"#).unwrap();
    std::fs::write(
        p("library.json"),
        r#"[{"name":"oracle","kind":"mediation_oracle"},{"name":"one","kind":"constant","value":1.0},{"name":"rulsif","kind":"rulsif"}]"#,
    )
    .unwrap();
    let fit_args = |out: &str, jobs: &str| {
        vec![
            "--jobs".to_string(),
            jobs.into(),
            "fit".into(),
            "--train".into(),
            s(&p("train.csv")).into(),
            "--schema".into(),
            s(&p("schema.json")).into(),
            "--library".into(),
            s(&p("library.json")).into(),
            "--folds".into(),
            "5".into(),
            "--seed".into(),
            "3".into(),
            "--out".into(),
            s(&p(out)).into(),
        ]
    };
    let a: Vec<String> = fit_args("model.json", "1");
    ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let b: Vec<String> = fit_args("model_b.json", "3");
    ok(&b.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(read(&p("model.json")), read(&p("model_b.json")));

    ok(&["evaluate", "--model", s(&p("model.json")), "--holdout", s(&p("hold.csv")), "--out", s(&p("eval.csv"))]);
    let eval = read(&p("eval.csv"));
    let rows: Vec<(&str, f64)> = eval
        .lines()
        .skip(1)
        .map(|l| {
            let (n, r) = l.split_once(',').unwrap();
            (n, r.parse().unwrap())
        })
        .collect();
    assert!(eval.starts_with("learner,holdout_risk\n"));
    assert_eq!(rows.last().unwrap().0, "super_learner");
    let one = rows.iter().find(|r| r.0 == "one").unwrap().1;
    assert_eq!(one, 0.0);
    let oracle = rows.iter().find(|r| r.0 == "oracle").unwrap().1;
    assert!(oracle < one);

    ok(&["profile", "--model", s(&p("model.json")), "--w", "3,5,7", "--grid", "200", "--out", s(&p("prof.csv"))]);
    let prof = read(&p("prof.csv"));
    assert!(prof.starts_with("w,m,true_ratio,estimated_ratio\n"));
    assert_eq!(prof.lines().count(), 601);
    assert!(p("prof.csv.manifest.json").exists());
}

#[test]
fn profile_rejects_longitudinal_models() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    ok(&["simulate", "--scenario", "lmtp", "--n", "200", "--seed", "1", "--period", "1", "--out", s(&p("aug.csv"))]);
    std::fs::write(p("schema.json"), r#"{"x1":["a1"],"x2":["w1"],"label":"lambda","scenario":"lmtp"}"#).unwrap();
    std::fs::write(p("library.json"), r#"[{"name":"one","kind":"constant","value":1.0},{"name":"oracle","kind":"lmtp_oracle","t":1}]"#)
        .unwrap();
    ok(&[
        "fit", "--train", s(&p("aug.csv")), "--schema", s(&p("schema.json")), "--library", s(&p("library.json")),
        "--folds", "4", "--out", s(&p("model.json")),
    ]);
    let out = drsl(&["profile", "--model", s(&p("model.json")), "--w", "3", "--grid", "10", "--out", s(&p("prof.csv"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("mediation"));
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    std::fs::write(p("train.csv"), "w,a,m\n3,0,0.5\n4,2,0.5\n").unwrap();
    std::fs::write(p("schema.json"), r#"{"x1":["m"],"x2":["w"],"label":"a","scenario":"mediation"}"#).unwrap();
    let out = drsl(&["fit", "--train", s(&p("train.csv")), "--schema", s(&p("schema.json")), "--out", s(&p("m.json"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"));

    std::fs::write(p("dup.json"), r#"[{"name":"a","kind":"constant","value":1.0},{"name":"a","kind":"kliep"}]"#).unwrap();
    let out = drsl(&[
        "fit", "--train", s(&p("train.csv")), "--schema", s(&p("schema.json")), "--library", s(&p("dup.json")), "--out",
        s(&p("m.json")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("duplicate"));
}

fn experiment_files(dir: &Path, config: &Path, jobs: &str) -> Vec<String> {
    ok(&["--jobs", jobs, "experiment", "--config", s(config), "--out", s(dir)]);
    ["risk_table.csv", "replicate_risks.csv", "manifest.json", "report.json"]
        .iter()
        .map(|f| read(&dir.join(f)))
        .collect()
}

#[test]
fn experiment_outputs_are_identical_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"scenario":"lmtp","sample_sizes":[80,120],"replicates":2,"holdout_size":500,"folds":4,"periods":[2,4],"base_seed":5}"#,
    )
    .unwrap();
    let one = experiment_files(&dir.path().join("one"), &config, "1");
    let three = experiment_files(&dir.path().join("three"), &config, "3");
    assert_eq!(one[..2], three[..2]);

    // manifests differ only in the recorded output directory
    let strip = |text: &str| {
        let mut v: serde_json::Value = serde_json::from_str(text).unwrap();
        let dir = v["details"]["config"]["output_dir"].take();
        (v, dir)
    };
    let (manifest, dir_one) = strip(&one[2]);
    let (other, dir_three) = strip(&three[2]);
    assert_eq!(manifest, other);
    assert_ne!(dir_one, dir_three);
    assert_eq!(manifest["run_id"].as_str().unwrap(), &manifest["config_hash"].as_str().unwrap()[..12]);
    assert_eq!(manifest["base_seed"], 5);

    let table = &one[0];
    assert!(table.starts_with("learner,n,t,mean_risk,se_risk,replicates\n"));
    // means are recomputable from the per-replicate file
    let reps: Vec<Vec<String>> = one[1].lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    for line in table.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let vals: Vec<f64> = reps
            .iter()
            .filter(|r| r[0] == f[0] && r[1] == f[1] && r[2] == f[2])
            .map(|r| r[5].parse().unwrap())
            .collect();
        let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean - f[3].parse::<f64>().unwrap()).abs() <= 1e-15 * mean.abs().max(1.0));
        assert_eq!(vals.len().to_string(), f[5]);
    }
}
