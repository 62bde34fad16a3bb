use drsl::experiment::{profile_grid, write_profile_grid, write_replicate_table, write_risk_table};
use drsl::scenarios::{lmtp, mediation};
use drsl::{
    dr_loss, fit_super_learner, make_stratified_folds, minimize_on_simplex, predict_ensemble, read_dataset, run_holdout_experiment,
    write_dataset, ColumnSchema, ExperimentConfig, LabeledDataset, LearnerLibrary, LearnerSpec, NamedLearnerSpec, Scenario, SeedSpec,
    SimplexConfig, SuperLearnerConfig, SuperLearnerFit, TruncationPolicy,
};
use proptest::prelude::*;

fn mediation_schema() -> ColumnSchema {
    ColumnSchema::new(&["m"], &["w"], "a")
}

#[test]
fn dataset_csv_round_trip_is_exact() {
    let d = mediation::sample_mediation_with_outcome(200, &SeedSpec::new(3)).unwrap();
    let schema = ColumnSchema { y: Some("y".into()), ..mediation_schema() };
    let mut buf = Vec::new();
    write_dataset(&d, &schema, &mut buf).unwrap();
    let back = read_dataset(buf.as_slice(), &schema).unwrap();
    assert_eq!(back.x1(), d.x1());
    assert_eq!(back.x2(), d.x2());
    assert_eq!(back.labels(), d.labels());
    assert_eq!(back.y(), d.y());
}

#[test]
fn fitted_ensemble_survives_json() {
    let policy = TruncationPolicy::new(1e-3).unwrap();
    let d = mediation::sample_mediation(400, &SeedSpec::new(11)).unwrap();
    let specs = vec![
        NamedLearnerSpec::new("kliep", LearnerSpec::Kliep { config: Default::default(), structure: Default::default() }),
        NamedLearnerSpec::new("rulsif", LearnerSpec::Rulsif { config: Default::default(), structure: Default::default() }),
        NamedLearnerSpec::new("one", LearnerSpec::Constant { value: 1.0 }),
    ];
    let lib = LearnerLibrary::from_specs(&specs, policy).unwrap();
    let seed = SeedSpec::new(12);
    let folds = make_stratified_folds(&d, 5, &seed.named("folds")).unwrap();
    let fit = fit_super_learner(&d, &lib, &folds, policy, &SuperLearnerConfig::default(), &seed).unwrap();
    let weights = fit.weights.as_slice();
    assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(weights.iter().all(|&w| w >= 0.0));

    let text = serde_json::to_string(&fit.to_json().unwrap()).unwrap();
    let back: SuperLearnerFit = serde_json::from_str(&text).unwrap();
    let probe = mediation::sample_mediation(300, &SeedSpec::new(13)).unwrap();
    let a = predict_ensemble(&fit, probe.x1(), probe.x2()).unwrap();
    let b = predict_ensemble(&back, probe.x1(), probe.x2()).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|&p| p >= policy.lower() && p <= policy.upper()));
}

#[test]
fn experiment_tables_agree_with_report() {
    let mut config = ExperimentConfig::new(Scenario::Mediation);
    config.sample_sizes = vec![150];
    config.replicates = 3;
    config.holdout_size = 800;
    config.folds = 4;
    config.library = Some(vec![
        NamedLearnerSpec::new("oracle", LearnerSpec::MediationOracle),
        NamedLearnerSpec::new("one", LearnerSpec::Constant { value: 1.0 }),
    ]);
    let report = run_holdout_experiment(&config).unwrap();
    assert_eq!(report.records.len(), 3 * 3);
    let oracle = report.summary("oracle", 150, None).unwrap();
    let one = report.summary("one", 150, None).unwrap();
    assert_eq!(one.mean_risk, 0.0);
    assert!(oracle.mean_risk < 0.0);

    let mut risk = Vec::new();
    write_risk_table(&report, &mut risk).unwrap();
    let mut reps = Vec::new();
    write_replicate_table(&report, &mut reps).unwrap();
    let reps = String::from_utf8(reps).unwrap();
    for line in String::from_utf8(risk).unwrap().lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let vals: Vec<f64> =
            reps.lines().skip(1).filter(|l| l.starts_with(&format!("{},", f[0]))).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
        assert_eq!(vals.len(), 3);
        let mean = vals.iter().sum::<f64>() / 3.0;
        assert!((mean - f[3].parse::<f64>().unwrap()).abs() < 1e-14);
    }
}

#[test]
fn profile_grid_tracks_truth_for_oracle() {
    let policy = TruncationPolicy::new(1e-3).unwrap();
    let lib = LearnerLibrary::from_specs(&[NamedLearnerSpec::new("oracle", LearnerSpec::MediationOracle)], policy).unwrap();
    let d = mediation::sample_mediation(100, &SeedSpec::new(1)).unwrap();
    let model = lib.get(0).fit(&d, &SeedSpec::new(2)).unwrap();
    let rows = profile_grid(&model, Scenario::Mediation, &[3.0, 5.0], 50).unwrap();
    assert_eq!(rows.len(), 100);
    for r in &rows {
        assert!((policy.clamp(r[2]) - r[3]).abs() <= 1e-12 * r[3]);
    }
    let mut out = Vec::new();
    write_profile_grid(&rows, &mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap().lines().count(), 101);
    assert!(profile_grid(&model, Scenario::Lmtp, &[3.0], 50).is_err());
}

#[test]
fn augmented_data_is_balanced() {
    let traj = lmtp::sample_lmtp(250, &SeedSpec::new(4));
    for t in 1..=4 {
        let d: LabeledDataset = lmtp::augment_for_ratio(&traj, t, &Default::default()).unwrap();
        assert_eq!(d.n(), 500);
        assert_eq!(d.count_label(true), 250);
        assert_eq!(d.d2(), lmtp::history_len(t));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_is_bounded_by_clamp(psi in 1e-9f64..1e9, label: bool) {
        let policy = TruncationPolicy::new(1e-3).unwrap();
        let l = dr_loss(label, psi, &policy).unwrap();
        prop_assert!(l.abs() <= policy.loss_bound() + 1e-12);
        prop_assert_eq!(l, -dr_loss(!label, psi, &policy).unwrap());
    }

    #[test]
    fn folds_partition_rows(n in 20usize..120, v in 2usize..6, seed: u64) {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let labels: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
        let d = LabeledDataset::from_rows(&rows, &rows, &labels).unwrap();
        let plan = make_stratified_folds(&d, v, &SeedSpec::new(seed)).unwrap();
        let mut seen = vec![0usize; n];
        for k in 0..v {
            let val = plan.validation(k);
            prop_assert!(val.iter().any(|&i| labels[i]) && val.iter().any(|&i| !labels[i]));
            for i in val {
                seen[i] += 1;
            }
            prop_assert_eq!(plan.training(k).len() + plan.validation(k).len(), n);
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn simplex_minimizer_stays_feasible(target in prop::collection::vec(0.0f64..1.0, 2..6)) {
        let k = target.len();
        let f = |b: &[f64]| {
            let v: f64 = b.iter().zip(&target).map(|(x, t)| (x - t) * (x - t)).sum();
            let g: Vec<f64> = b.iter().zip(&target).map(|(x, t)| 2.0 * (x - t)).collect();
            (v, g)
        };
        let sol = minimize_on_simplex(f, k, &SimplexConfig::default()).unwrap();
        prop_assert!((sol.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(sol.weights.iter().all(|&w| w >= 0.0));
        let uniform = vec![1.0 / k as f64; k];
        prop_assert!(sol.objective <= f(&uniform).0 + 1e-9);
    }
}
