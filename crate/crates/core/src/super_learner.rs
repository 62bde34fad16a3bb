//! Cross-validated ensembles of ratio learners weighted on the simplex.

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FoldPlan, LabeledDataset};
use crate::error::{Error, Result};
use crate::learners::LearnerLibrary;
use crate::loss::{mean, risk_of_predictions, TruncationPolicy};
use crate::model::{FittedRatio, RatioModel};
use crate::rng::SeedSpec;
use crate::simplex::{minimize_on_simplex, SimplexConfig, SimplexSolution};

/// Fold index used for the full-data refits in seed derivation.
const REFIT_FOLD: u64 = u64::MAX;

/// Out-of-fold predictions: `z[(i, k)]` comes from learner `k` fitted
/// without row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CvPredictionMatrix {
    pub z: DMatrix<f64>,
    pub fold: Vec<usize>,
    pub names: Vec<String>,
    /// Library positions of the retained columns.
    pub library_index: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedLearner {
    pub name: String,
    /// `None` for a failed full-data refit.
    pub fold: Option<usize>,
    pub reason: String,
}

/// Fits every (fold, learner) pair, in parallel, and assembles the
/// out-of-fold prediction matrix. Learners failing on any fold are dropped.
pub fn build_cv_matrix(
    d: &LabeledDataset,
    lib: &LearnerLibrary,
    folds: &FoldPlan,
    seed: &SeedSpec,
) -> Result<(CvPredictionMatrix, Vec<DroppedLearner>)> {
    if folds.n() != d.n() {
        return Err(Error::Config("fold plan does not match dataset size".into()));
    }
    if lib.is_empty() {
        return Err(Error::EmptyLibrary);
    }
    let v = folds.v();
    let splits: Vec<(LabeledDataset, Vec<usize>, LabeledDataset)> = (0..v)
        .map(|m| {
            let valid = folds.validation(m);
            (d.subset(&folds.training(m)), valid.clone(), d.subset(&valid))
        })
        .collect();
    let tasks: Vec<(usize, usize)> = (0..v).flat_map(|m| (0..lib.len()).map(move |k| (m, k))).collect();
    let outcomes: Vec<Result<Vec<f64>>> = tasks
        .par_iter()
        .map(|&(m, k)| {
            let learner = lib.get(k);
            let (train, _, valid) = &splits[m];
            let model = learner.fit(train, &seed.task(0, m as u64, learner.name()))?;
            model.predict(valid.x1(), valid.x2())
        })
        .collect();

    let n = d.n();
    let mut columns: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut dropped = Vec::new();
    for k in 0..lib.len() {
        let mut col = vec![0.0; n];
        let mut failure = None;
        for m in 0..v {
            match &outcomes[m * lib.len() + k] {
                Ok(p) => splits[m].1.iter().zip(p).for_each(|(&i, &pi)| col[i] = pi),
                Err(e) => {
                    failure = Some((m, e.to_string()));
                    break;
                }
            }
        }
        match failure {
            None => columns.push((k, col)),
            Some((m, reason)) => {
                let name = lib.get(k).name().to_string();
                warn!("learner {name} dropped after failing on fold {m}: {reason}");
                dropped.push(DroppedLearner { name, fold: Some(m), reason });
            }
        }
    }
    if columns.is_empty() {
        return Err(Error::EmptyLibrary);
    }
    let z = DMatrix::from_fn(n, columns.len(), |i, j| columns[j].1[i]);
    Ok((
        CvPredictionMatrix {
            z,
            fold: folds.assignment().to_vec(),
            names: columns.iter().map(|(k, _)| lib.get(*k).name().to_string()).collect(),
            library_index: columns.iter().map(|(k, _)| *k).collect(),
        },
        dropped,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty()
            || weights.iter().any(|&w| !(w >= 0.0))
            || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(Error::Optimization(format!("{weights:?} is not on the simplex")));
        }
        Ok(Self(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for SimplexWeights {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SimplexWeights> for Vec<f64> {
    fn from(w: SimplexWeights) -> Self {
        w.0
    }
}

/// `f(β) = mean_i L(λ_i, clamp(Σ_k β_k z_ik))` and its gradient.
pub fn ensemble_objective(z: &DMatrix<f64>, labels: &[bool], policy: &TruncationPolicy, beta: &[f64]) -> (f64, Vec<f64>) {
    let n = z.nrows();
    let mut grad = vec![0.0; beta.len()];
    let mut losses = Vec::with_capacity(n);
    for i in 0..n {
        let s: f64 = (0..beta.len()).map(|k| beta[k] * z[(i, k)]).sum();
        if !(s > 0.0 && s.is_finite()) {
            return (f64::NAN, grad);
        }
        let c = policy.clamp(s);
        let sign = if labels[i] { -1.0 } else { 1.0 };
        losses.push(sign * c.ln());
        if c == s {
            for (k, g) in grad.iter_mut().enumerate() {
                *g += sign * z[(i, k)] / (s * n as f64);
            }
        }
    }
    (mean(&losses), grad)
}

pub fn optimize_weights(
    cv: &CvPredictionMatrix,
    labels: &[bool],
    policy: &TruncationPolicy,
    config: &SimplexConfig,
) -> Result<(SimplexWeights, SimplexSolution)> {
    if labels.len() != cv.z.nrows() {
        return Err(Error::InvalidData("label count does not match the prediction matrix".into()));
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::DegenerateLabels);
    }
    if let Some(&bad) = cv.z.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InvalidPrediction(bad));
    }
    let solution = minimize_on_simplex(|b: &[f64]| ensemble_objective(&cv.z, labels, policy, b), cv.z.ncols(), config)?;
    Ok((SimplexWeights::new(solution.weights.clone())?, solution))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SuperLearnerConfig {
    pub simplex: SimplexConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuperLearnerFit {
    pub names: Vec<String>,
    pub weights: SimplexWeights,
    /// Full-data refit of every retained learner, in `names` order.
    pub models: Vec<FittedRatio>,
    /// Column-wise risk of the out-of-fold predictions.
    pub cv_risks: Vec<f64>,
    /// Ensemble objective at the chosen weights.
    pub cv_objective: f64,
    pub dropped: Vec<DroppedLearner>,
    pub optimizer: SimplexSolution,
    pub policy: TruncationPolicy,
}

impl SuperLearnerFit {
    pub fn to_json(&self) -> Result<serde_json::Value> {
        if self.models.iter().any(|m| m.contains_custom()) {
            return Err(Error::NotSerializable("ensemble contains a caller-supplied model".into()));
        }
        Ok(serde_json::to_value(self)?)
    }

    /// Index of the learner with the lowest cross-validated risk.
    pub fn discrete_choice(&self) -> usize {
        (0..self.cv_risks.len()).min_by(|&a, &b| self.cv_risks[a].total_cmp(&self.cv_risks[b])).unwrap_or(0)
    }

    pub fn model(&self, name: &str) -> Option<&FittedRatio> {
        self.names.iter().position(|n| n == name).map(|k| &self.models[k])
    }
}

pub fn fit_super_learner(
    d: &LabeledDataset,
    lib: &LearnerLibrary,
    folds: &FoldPlan,
    policy: TruncationPolicy,
    config: &SuperLearnerConfig,
    seed: &SeedSpec,
) -> Result<SuperLearnerFit> {
    let (cv, mut dropped) = build_cv_matrix(d, lib, folds, seed)?;
    let (weights, optimizer) = optimize_weights(&cv, d.labels(), &policy, &config.simplex)?;
    let cv_risks = (0..cv.z.ncols())
        .map(|k| risk_of_predictions(d.labels(), cv.z.column(k).as_slice(), &policy))
        .collect::<Result<Vec<_>>>()?;
    let refits: Vec<Result<FittedRatio>> = cv
        .library_index
        .par_iter()
        .map(|&k| {
            let learner = lib.get(k);
            learner.fit(d, &seed.task(0, REFIT_FOLD, learner.name()))
        })
        .collect();
    let mut names = Vec::new();
    let mut models = Vec::new();
    let mut kept_weights = Vec::new();
    let mut kept_risks = Vec::new();
    for (j, refit) in refits.into_iter().enumerate() {
        match refit {
            Ok(m) => {
                names.push(cv.names[j].clone());
                models.push(m);
                kept_weights.push(weights.as_slice()[j]);
                kept_risks.push(cv_risks[j]);
            }
            Err(e) => {
                warn!("learner {} dropped after failing on the full data: {e}", cv.names[j]);
                dropped.push(DroppedLearner { name: cv.names[j].clone(), fold: None, reason: e.to_string() });
            }
        }
    }
    let total: f64 = kept_weights.iter().sum();
    if models.is_empty() || !(total > 0.0) {
        return Err(Error::EmptyLibrary);
    }
    if kept_weights.len() < cv.names.len() {
        kept_weights.iter_mut().for_each(|w| *w /= total);
    }
    Ok(SuperLearnerFit {
        names,
        weights: SimplexWeights::new(kept_weights)?,
        models,
        cv_risks: kept_risks,
        cv_objective: optimizer.objective,
        dropped,
        optimizer,
        policy,
    })
}

/// `clamp(Σ_k β_k ψ_k(x))`.
pub fn predict_ensemble(fit: &SuperLearnerFit, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; x1.nrows()];
    for (model, &w) in fit.models.iter().zip(fit.weights.as_slice()) {
        if w == 0.0 {
            continue;
        }
        for (a, p) in acc.iter_mut().zip(model.predict(x1, x2)?) {
            *a += w * p;
        }
    }
    Ok(acc.into_iter().map(|v| fit.policy.clamp(v)).collect())
}

impl RatioModel for SuperLearnerFit {
    fn predict(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<Vec<f64>> {
        predict_ensemble(self, x1, x2)
    }
}
