//! Hold-out risk experiments, tables, profile grids and run manifests.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{make_stratified_folds, LabeledDataset};
use crate::error::{Error, Result};
use crate::learners::{check_unique, default_library, lmtp_baseline, NamedLearnerSpec, CLASSIFICATION_BASELINE};
use crate::loss::{empirical_risk, mean, TruncationPolicy};
use crate::model::RatioModel;
use crate::rng::SeedSpec;
use crate::scenarios::lmtp::{augment_for_ratio, sample_lmtp, LmtpTrajectory, PolicySpec, PERIODS};
use crate::scenarios::mediation::{sample_mediation, true_ratio};
use crate::scenarios::Scenario;
use crate::super_learner::{fit_super_learner, SuperLearnerConfig};
use crate::LearnerLibrary;

pub const SUPER_LEARNER: &str = "super_learner";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default = "default_sizes")]
    pub sample_sizes: Vec<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_holdout")]
    pub holdout_size: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Library entries; the scenario default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library: Option<Vec<NamedLearnerSpec>>,
    /// Periods evaluated in the longitudinal scenario.
    #[serde(default = "default_periods")]
    pub periods: Vec<usize>,
    #[serde(default = "default_epsilon")]
    pub epsilon_ratio: f64,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub super_learner: SuperLearnerConfig,
    /// Where results go; not part of the run identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_sizes() -> Vec<usize> {
    vec![100, 500, 1000]
}
fn default_replicates() -> usize {
    20
}
fn default_holdout() -> usize {
    10_000
}
fn default_folds() -> usize {
    10
}
fn default_periods() -> Vec<usize> {
    (1..=PERIODS).collect()
}
fn default_epsilon() -> f64 {
    TruncationPolicy::default().epsilon_ratio
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            sample_sizes: default_sizes(),
            replicates: default_replicates(),
            holdout_size: default_holdout(),
            folds: default_folds(),
            library: None,
            periods: default_periods(),
            epsilon_ratio: default_epsilon(),
            base_seed: 0,
            super_learner: SuperLearnerConfig::default(),
            output_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return bad("sample sizes must be non-empty and positive");
        }
        if self.replicates == 0 || self.holdout_size == 0 {
            return bad("replicates and hold-out size must be at least 1");
        }
        if self.folds < 2 {
            return bad("at least 2 folds are required");
        }
        if let Some(lib) = &self.library {
            if lib.is_empty() {
                return bad("library must not be empty");
            }
            check_unique(lib)?;
        }
        if self.scenario == Scenario::Lmtp && (self.periods.is_empty() || self.periods.iter().any(|t| !(1..=PERIODS).contains(t))) {
            return bad("periods must lie in 1..=4");
        }
        TruncationPolicy::new(self.epsilon_ratio)?;
        Ok(())
    }

    pub fn policy(&self) -> Result<TruncationPolicy> {
        TruncationPolicy::new(self.epsilon_ratio)
    }

    pub fn library_specs(&self) -> Vec<NamedLearnerSpec> {
        self.library.clone().unwrap_or_else(|| default_library(self.scenario))
    }

    /// SHA-256 of the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let json = serde_json::to_string(&canonical).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_id(&self) -> String {
        self.hash()[..12].to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRisk {
    pub learner: String,
    pub n: usize,
    pub t: Option<usize>,
    pub replicate: usize,
    pub seed: u64,
    pub holdout_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSummary {
    pub learner: String,
    pub n: usize,
    pub t: Option<usize>,
    pub mean_risk: f64,
    pub se_risk: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSeed {
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub n: usize,
    pub t: Option<usize>,
    pub replicate: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedRecord {
    pub learner: String,
    pub n: usize,
    pub t: Option<usize>,
    pub replicate: usize,
    pub fold: Option<usize>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub run_id: String,
    pub baseline: String,
    pub records: Vec<ReplicateRisk>,
    pub summaries: Vec<RiskSummary>,
    pub seeds: Vec<ReplicateSeed>,
    pub holdout_seed: u64,
    pub failures: Vec<ReplicateFailure>,
    pub dropped: Vec<DroppedRecord>,
}

impl ExperimentReport {
    pub fn summary(&self, learner: &str, n: usize, t: Option<usize>) -> Option<&RiskSummary> {
        self.summaries.iter().find(|s| s.learner == learner && s.n == n && s.t == t)
    }
}

/// Sample standard error of the mean; 0 with fewer than two values.
pub fn standard_error(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let sq: Vec<f64> = values.iter().map(|v| (v - m).powi(2)).collect();
    (crate::loss::pairwise_sum(&sq) / (values.len() - 1) as f64 / values.len() as f64).sqrt()
}

enum Holdout {
    Mediation(LabeledDataset),
    Lmtp(Vec<(usize, LabeledDataset)>),
}

struct CellOutcome {
    risks: Vec<(String, f64)>,
    dropped: Vec<(String, Option<usize>, String)>,
}

fn fit_cell(
    config: &ExperimentConfig,
    library: &LearnerLibrary,
    train: &LabeledDataset,
    holdout: &LabeledDataset,
    policy: TruncationPolicy,
    seed: &SeedSpec,
    baseline: Option<&NamedLearnerSpec>,
) -> Result<CellOutcome> {
    let folds = make_stratified_folds(train, config.folds, &seed.named("folds"))?;
    let fit = fit_super_learner(train, library, &folds, policy, &config.super_learner, &seed.named("super-learner"))?;
    let mut risks = Vec::new();
    for (name, model) in fit.names.iter().zip(&fit.models) {
        risks.push((name.clone(), empirical_risk(holdout, model, &policy)?));
    }
    risks.push((SUPER_LEARNER.to_string(), empirical_risk(holdout, &fit, &policy)?));
    let mut dropped: Vec<_> = fit.dropped.iter().map(|d| (d.name.clone(), d.fold, d.reason.clone())).collect();
    if let Some(b) = baseline {
        match b.spec.fit(train, policy, &seed.named("baseline")) {
            Ok(model) => risks.push((b.name.clone(), empirical_risk(holdout, &model, &policy)?)),
            Err(e) => dropped.push((b.name.clone(), None, e.to_string())),
        }
    }
    Ok(CellOutcome { risks, dropped })
}

/// Runs every `(n, replicate)` cell (and every period for the longitudinal
/// scenario) in parallel and reduces the results in index order.
pub fn run_holdout_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let policy = config.policy()?;
    let specs = config.library_specs();
    let library = LearnerLibrary::from_specs(&specs, policy)?;
    let base = SeedSpec::new(config.base_seed);
    let holdout_seed = base.named("holdout");
    let lmtp_policy = PolicySpec::default();
    let holdout = match config.scenario {
        Scenario::Mediation => Holdout::Mediation(sample_mediation(config.holdout_size, &holdout_seed)?),
        Scenario::Lmtp => {
            let trajs = sample_lmtp(config.holdout_size, &holdout_seed);
            Holdout::Lmtp(
                config
                    .periods
                    .iter()
                    .map(|&t| Ok((t, augment_for_ratio(&trajs, t, &lmtp_policy)?)))
                    .collect::<Result<_>>()?,
            )
        }
    };
    let baseline_spec = match config.scenario {
        Scenario::Mediation => None,
        Scenario::Lmtp => Some(lmtp_baseline()),
    };
    let baseline_name = match &baseline_spec {
        Some(b) => b.name.clone(),
        None => CLASSIFICATION_BASELINE.to_string(),
    };

    let cells: Vec<(usize, usize)> = config
        .sample_sizes
        .iter()
        .flat_map(|&n| (0..config.replicates).map(move |r| (n, r)))
        .collect();
    let train_seed = |n: usize, r: usize| base.named("train").child(n as u64).child(r as u64);

    type CellResult = Vec<(Option<usize>, Result<CellOutcome>)>;
    let results: Vec<CellResult> = cells
        .par_iter()
        .map(|&(n, r)| {
            let seed = train_seed(n, r);
            match &holdout {
                Holdout::Mediation(h) => {
                    let out = sample_mediation(n, &seed).and_then(|train| fit_cell(config, &library, &train, h, policy, &seed, None));
                    vec![(None, out)]
                }
                Holdout::Lmtp(per_t) => {
                    let trajs: Vec<LmtpTrajectory> = sample_lmtp(n, &seed);
                    per_t
                        .par_iter()
                        .map(|(t, h)| {
                            let s = seed.named("period").child(*t as u64);
                            let out = augment_for_ratio(&trajs, *t, &lmtp_policy)
                                .and_then(|train| fit_cell(config, &library, &train, h, policy, &s, baseline_spec.as_ref()));
                            (Some(*t), out)
                        })
                        .collect()
                }
            }
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut dropped = Vec::new();
    let mut seeds = Vec::new();
    for (&(n, r), cell) in cells.iter().zip(results) {
        let seed = train_seed(n, r).stream_id();
        seeds.push(ReplicateSeed { n, replicate: r, seed });
        for (t, outcome) in cell {
            match outcome {
                Ok(out) => {
                    for (learner, holdout_risk) in out.risks {
                        records.push(ReplicateRisk { learner, n, t, replicate: r, seed, holdout_risk });
                    }
                    for (learner, fold, reason) in out.dropped {
                        dropped.push(DroppedRecord { learner, n, t, replicate: r, fold, reason });
                    }
                }
                Err(e) => {
                    log::warn!("replicate {r} at n = {n} failed: {e}");
                    failures.push(ReplicateFailure { n, t, replicate: r, reason: e.to_string() });
                }
            }
        }
    }
    let summaries = summarize(&records);
    let holdout_seed = holdout_seed.stream_id();
    Ok(ExperimentReport {
        config: config.clone(),
        config_hash: config.hash(),
        run_id: config.run_id(),
        baseline: baseline_name,
        records,
        summaries,
        seeds,
        holdout_seed,
        failures,
        dropped,
    })
}

/// Per `(learner, n, t)` mean and standard error, sorted by `n`, `t`, then
/// ascending mean risk.
pub fn summarize(records: &[ReplicateRisk]) -> Vec<RiskSummary> {
    let mut keys: Vec<(usize, Option<usize>, &str)> = Vec::new();
    for r in records {
        let key = (r.n, r.t, r.learner.as_str());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut out: Vec<RiskSummary> = keys
        .into_iter()
        .map(|(n, t, learner)| {
            let values: Vec<f64> = records
                .iter()
                .filter(|r| r.n == n && r.t == t && r.learner == learner)
                .map(|r| r.holdout_risk)
                .collect();
            RiskSummary {
                learner: learner.to_string(),
                n,
                t,
                mean_risk: mean(&values),
                se_risk: standard_error(&values),
                replicates: values.len(),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        (a.n, a.t)
            .cmp(&(b.n, b.t))
            .then(a.mean_risk.total_cmp(&b.mean_risk))
            .then(a.learner.cmp(&b.learner))
    });
    out
}

fn t_field(t: Option<usize>) -> String {
    t.map(|t| t.to_string()).unwrap_or_default()
}

pub fn write_risk_table<W: Write>(report: &ExperimentReport, writer: W) -> Result<()> {
    if report.summaries.is_empty() {
        return Err(Error::Config("report has no risks to write".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["learner", "n", "t", "mean_risk", "se_risk", "replicates"])?;
    for s in &report.summaries {
        w.write_record([
            s.learner.clone(),
            s.n.to_string(),
            t_field(s.t),
            s.mean_risk.to_string(),
            s.se_risk.to_string(),
            s.replicates.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_risk_table(report: &ExperimentReport, path: impl AsRef<Path>) -> Result<()> {
    write_risk_table(report, std::fs::File::create(path)?)
}

pub fn write_replicate_table<W: Write>(report: &ExperimentReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["learner", "n", "t", "replicate", "seed", "holdout_risk"])?;
    for r in &report.records {
        w.write_record([
            r.learner.clone(),
            r.n.to_string(),
            t_field(r.t),
            r.replicate.to_string(),
            r.seed.to_string(),
            r.holdout_risk.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_replicate_table(report: &ExperimentReport, path: impl AsRef<Path>) -> Result<()> {
    write_replicate_table(report, std::fs::File::create(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    pub version: String,
    pub command: String,
    pub epsilon_ratio: f64,
    pub base_seed: u64,
    pub seeds: serde_json::Value,
    pub dropped_learners: serde_json::Value,
    pub details: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String, epsilon_ratio: f64, base_seed: u64) -> Self {
        Self {
            run_id: config_hash[..12.min(config_hash.len())].to_string(),
            config_hash,
            version: VERSION.to_string(),
            command: command.to_string(),
            epsilon_ratio,
            base_seed,
            seeds: serde_json::Value::Null,
            dropped_learners: serde_json::Value::Array(vec![]),
            details: serde_json::Value::Null,
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

/// SHA-256 hex digest of arbitrary bytes.
pub fn digest_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn experiment_manifest(report: &ExperimentReport) -> Result<RunManifest> {
    let mut m = RunManifest::new("experiment", report.config_hash.clone(), report.config.epsilon_ratio, report.config.base_seed);
    m.seeds = serde_json::json!({ "holdout": report.holdout_seed, "replicates": report.seeds });
    m.dropped_learners = serde_json::to_value(&report.dropped)?;
    m.details = serde_json::json!({
        "scenario": report.config.scenario,
        "baseline": report.baseline,
        "failures": report.failures,
        "config": report.config,
    });
    Ok(m)
}

/// Writes `risk_table.csv`, `replicate_risks.csv`, `report.json` and
/// `manifest.json` into `dir`.
pub fn write_experiment_outputs(report: &ExperimentReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    emit_risk_table(report, dir.join("risk_table.csv"))?;
    emit_replicate_table(report, dir.join("replicate_risks.csv"))?;
    let mut f = std::fs::File::create(dir.join("report.json"))?;
    serde_json::to_writer_pretty(&mut f, report)?;
    f.write_all(b"\n")?;
    experiment_manifest(report)?.write(dir.join("manifest.json"))
}

/// Midpoints `(j + 0.5) / grid`.
pub fn open_grid(grid: usize) -> Vec<f64> {
    (0..grid).map(|j| (j as f64 + 0.5) / grid as f64).collect()
}

/// Rows `(w, m, true ratio, estimated ratio)` over the open mediator grid.
pub fn profile_grid(model: &dyn RatioModel, scenario: Scenario, w_values: &[f64], m_grid: usize) -> Result<Vec<[f64; 4]>> {
    if scenario != Scenario::Mediation {
        return Err(Error::Scenario(format!("profile grids need a mediation fit, got {}", scenario.as_str())));
    }
    if m_grid < 2 {
        return Err(Error::Config("grid needs at least 2 points".into()));
    }
    let ms = open_grid(m_grid);
    let mut rows = Vec::with_capacity(w_values.len() * m_grid);
    for &w in w_values {
        let x1 = nalgebra::DMatrix::from_column_slice(m_grid, 1, &ms);
        let x2 = nalgebra::DMatrix::from_element(m_grid, 1, w);
        let est = model.predict(&x1, &x2)?;
        for (j, &m) in ms.iter().enumerate() {
            rows.push([w, m, true_ratio(m, w)?, est[j]]);
        }
    }
    Ok(rows)
}

pub fn write_profile_grid<W: Write>(rows: &[[f64; 4]], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["w", "m", "true_ratio", "estimated_ratio"])?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_profile_grid(
    model: &dyn RatioModel,
    scenario: Scenario,
    w_values: &[f64],
    m_grid: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let rows = profile_grid(model, scenario, w_values, m_grid)?;
    write_profile_grid(&rows, std::fs::File::create(path)?)
}
