//! `drsl`: simulate scenario data, fit density-ratio super learners, score
//! them on hold-out data, run hold-out experiments and emit profile grids.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use drsl::experiment::{digest_hex, emit_profile_grid, write_experiment_outputs, RunManifest, SUPER_LEARNER};
use drsl::scenarios::lmtp::{augment_for_ratio, history_len, sample_lmtp, sample_lmtp_with_outcome, PolicySpec, COLUMNS};
use drsl::scenarios::mediation::{sample_mediation, sample_mediation_with_outcome};
use drsl::{
    default_library, empirical_risk, fit_super_learner, load_dataset, make_stratified_folds, run_holdout_experiment,
    ColumnSchema, ExperimentConfig, LearnerLibrary, NamedLearnerSpec, RatioModel, Scenario, SeedSpec,
    SuperLearnerConfig, SuperLearnerFit, TruncationPolicy,
};

#[derive(Parser)]
#[command(name = "drsl", version, about = "Density-ratio super learning")]
struct Cli {
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a scenario dataset and write it as CSV.
    Simulate {
        #[arg(long)]
        scenario: Scenario,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Append the synthetic outcome column `y`.
        #[arg(long)]
        with_outcome: bool,
        /// Longitudinal only: write the augmented ratio dataset for this period.
        #[arg(long)]
        period: Option<usize>,
    },
    /// Fit a super learner on a labelled CSV.
    Fit {
        #[arg(long)]
        train: PathBuf,
        /// JSON column roles, optionally with `scenario` and `epsilon_ratio`.
        #[arg(long)]
        schema: PathBuf,
        /// JSON list of named learners; the scenario default when omitted.
        #[arg(long)]
        library: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hold-out risk of every learner in a fitted model and of the ensemble.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        holdout: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a hold-out experiment from a JSON config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// True and estimated mediation ratios over a mediator grid.
    Profile {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated confounder values.
        #[arg(long, value_delimiter = ',', required = true)]
        w: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SchemaFile {
    #[serde(flatten)]
    columns: ColumnSchema,
    #[serde(default)]
    scenario: Option<Scenario>,
    #[serde(default)]
    epsilon_ratio: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    version: String,
    schema: ColumnSchema,
    scenario: Option<Scenario>,
    fit: SuperLearnerFit,
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(std::io::BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

fn simulate(
    scenario: Scenario,
    n: usize,
    seed: u64,
    out: &Path,
    with_outcome: bool,
    period: Option<usize>,
) -> Result<()> {
    if n == 0 {
        bail!("--n must be at least 1");
    }
    let spec = SeedSpec::new(seed);
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?));
    match (scenario, period) {
        (Scenario::Mediation, Some(_)) => bail!("--period applies to the longitudinal scenario only"),
        (Scenario::Mediation, None) => {
            let d = if with_outcome { sample_mediation_with_outcome(n, &spec)? } else { sample_mediation(n, &spec)? };
            let mut header = vec!["w", "a", "m"];
            if with_outcome {
                header.push("y");
            }
            w.write_record(&header)?;
            for i in 0..d.n() {
                let mut rec = vec![d.x2()[(i, 0)].to_string(), u8::from(d.labels()[i]).to_string(), d.x1()[(i, 0)].to_string()];
                if let Some(y) = d.y() {
                    rec.push(y[i].to_string());
                }
                w.write_record(&rec)?;
            }
        }
        (Scenario::Lmtp, None) => {
            let trajs = if with_outcome { sample_lmtp_with_outcome(n, &spec) } else { sample_lmtp(n, &spec) };
            let mut header: Vec<&str> = COLUMNS.to_vec();
            if with_outcome {
                header.push("y");
            }
            w.write_record(&header)?;
            for tr in &trajs {
                let mut rec: Vec<String> = tr.as_row().iter().map(|v| v.to_string()).collect();
                if let Some(y) = tr.y {
                    rec.push(y.to_string());
                }
                w.write_record(&rec)?;
            }
        }
        (Scenario::Lmtp, Some(t)) => {
            if with_outcome {
                bail!("augmented datasets carry no outcome");
            }
            let d = augment_for_ratio(&sample_lmtp(n, &spec), t, &PolicySpec::default())?;
            let mut header = vec![format!("a{t}")];
            header.extend(COLUMNS[..history_len(t)].iter().map(|c| c.to_string()));
            header.push("lambda".into());
            w.write_record(&header)?;
            for i in 0..d.n() {
                let mut rec = vec![d.x1()[(i, 0)].to_string()];
                rec.extend(d.x2().row(i).iter().map(|v| v.to_string()));
                rec.push(u8::from(d.labels()[i]).to_string());
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    let identity = serde_json::json!({ "scenario": scenario, "n": n, "seed": seed, "with_outcome": with_outcome, "period": period });
    let mut m = RunManifest::new(
        "simulate",
        digest_hex(identity.to_string().as_bytes()),
        TruncationPolicy::default().epsilon_ratio,
        seed,
    );
    m.seeds = serde_json::json!({ "base": seed, "stream": spec.stream_id() });
    m.details = identity;
    m.write(manifest_path(out))?;
    Ok(())
}

fn fit(train: &Path, schema: &Path, library: Option<&Path>, folds: usize, seed: u64, out: &Path) -> Result<()> {
    let schema_file: SchemaFile = read_json(schema)?;
    let policy = TruncationPolicy::new(schema_file.epsilon_ratio.unwrap_or(TruncationPolicy::default().epsilon_ratio))?;
    let specs: Vec<NamedLearnerSpec> = match library {
        Some(p) => read_json(p)?,
        None => match schema_file.scenario {
            Some(s) => default_library(s),
            None => bail!("--library is required when the schema names no scenario"),
        },
    };
    let lib = LearnerLibrary::from_specs(&specs, policy)?;
    let data = load_dataset(train, &schema_file.columns).with_context(|| format!("reading {}", train.display()))?;
    let base = SeedSpec::new(seed);
    let plan = make_stratified_folds(&data, folds, &base.named("folds"))?;
    let sl = fit_super_learner(&data, &lib, &plan, policy, &SuperLearnerConfig::default(), &base.named("super-learner"))?;
    for d in &sl.dropped {
        log::warn!("learner {} dropped: {}", d.name, d.reason);
    }
    let model = ModelFile {
        version: drsl::experiment::VERSION.to_string(),
        schema: schema_file.columns.clone(),
        scenario: schema_file.scenario,
        fit: sl,
    };
    let json = serde_json::to_vec_pretty(&model)?;
    std::fs::write(out, &json).with_context(|| format!("writing {}", out.display()))?;

    let train_bytes = std::fs::read(train)?;
    let identity = serde_json::json!({
        "train_sha256": digest_hex(&train_bytes),
        "schema": schema_file,
        "library": specs,
        "folds": folds,
        "seed": seed,
    });
    let mut m = RunManifest::new("fit", digest_hex(identity.to_string().as_bytes()), policy.epsilon_ratio, seed);
    m.seeds = serde_json::json!({ "base": seed, "folds": base.named("folds").stream_id(), "super_learner": base.named("super-learner").stream_id() });
    m.dropped_learners = serde_json::to_value(&model.fit.dropped)?;
    m.details = serde_json::json!({ "identity": identity, "weights": model.fit.weights, "names": model.fit.names, "cv_risks": model.fit.cv_risks });
    m.write(manifest_path(out))?;
    Ok(())
}

fn evaluate(model: &Path, holdout: &Path, out: &Path) -> Result<()> {
    let model_file: ModelFile = read_json(model)?;
    let data = load_dataset(holdout, &model_file.schema).with_context(|| format!("reading {}", holdout.display()))?;
    let policy = model_file.fit.policy;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out)?));
    w.write_record(["learner", "holdout_risk"])?;
    let mut risks = Vec::new();
    for (name, m) in model_file.fit.names.iter().zip(&model_file.fit.models) {
        risks.push((name.clone(), empirical_risk(&data, m, &policy)?));
    }
    risks.push((SUPER_LEARNER.to_string(), empirical_risk(&data, &model_file.fit, &policy)?));
    for (name, r) in &risks {
        w.write_record([name.clone(), r.to_string()])?;
    }
    w.flush()?;
    let identity = serde_json::json!({
        "model_sha256": digest_hex(&std::fs::read(model)?),
        "holdout_sha256": digest_hex(&std::fs::read(holdout)?),
    });
    let mut m = RunManifest::new("evaluate", digest_hex(identity.to_string().as_bytes()), policy.epsilon_ratio, 0);
    m.dropped_learners = serde_json::to_value(&model_file.fit.dropped)?;
    m.details = identity;
    m.write(manifest_path(out))?;
    Ok(())
}

fn experiment(config: &Path, out: &Path) -> Result<()> {
    let mut cfg: ExperimentConfig = read_json(config)?;
    cfg.output_dir = Some(out.to_path_buf());
    let report = run_holdout_experiment(&cfg)?;
    for f in &report.failures {
        log::warn!("replicate {} at n = {} failed: {}", f.replicate, f.n, f.reason);
    }
    write_experiment_outputs(&report, out).with_context(|| format!("writing results to {}", out.display()))?;
    println!("run {} written to {}", report.run_id, out.display());
    Ok(())
}

fn profile(model: &Path, w_values: &[f64], grid: usize, out: &Path) -> Result<()> {
    let model_file: ModelFile = read_json(model)?;
    let Some(scenario) = model_file.scenario else {
        bail!("model records no scenario; profile grids need a mediation fit");
    };
    emit_profile_grid(&model_file.fit as &dyn RatioModel, scenario, w_values, grid, out)?;
    let identity = serde_json::json!({ "model_sha256": digest_hex(&std::fs::read(model)?), "w": w_values, "grid": grid });
    let mut m = RunManifest::new("profile", digest_hex(identity.to_string().as_bytes()), model_file.fit.policy.epsilon_ratio, 0);
    m.details = identity;
    m.write(manifest_path(out))?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    match cli.command {
        Command::Simulate { scenario, n, seed, out, with_outcome, period } => {
            simulate(scenario, n, seed, &out, with_outcome, period)
        }
        Command::Fit { train, schema, library, folds, seed, out } => {
            fit(&train, &schema, library.as_deref(), folds, seed, &out)
        }
        Command::Evaluate { model, holdout, out } => evaluate(&model, &holdout, &out),
        Command::Experiment { config, out } => experiment(&config, &out),
        Command::Profile { model, w, grid, out } => profile(&model, &w, grid, &out),
    }?;
    std::io::stdout().flush()?;
    Ok(())
}
