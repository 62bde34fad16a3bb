//! Probabilistic classifiers, the odds-based ratio constructions built from
//! them, and a ridge least-squares regressor for outcome nuisances.

use std::fmt;
use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{hstack, stratified_assignment};
use crate::error::{Error, Result};
use crate::features::{solve_spd, with_intercept, BasisExpansion, FittedExpansion, Standardizer};
use crate::loss::{mean, TruncationPolicy};
use crate::rng::SeedSpec;
use crate::simplex::{minimize_on_simplex, SimplexConfig};
use crate::special::expit;

/// Classifier probabilities are clipped to `[EPS_PROB, 1 − EPS_PROB]`.
pub const EPS_PROB: f64 = 1e-4;

pub fn clip_prob(p: f64) -> f64 {
    p.clamp(EPS_PROB, 1.0 - EPS_PROB)
}

pub trait ProbClassifier: Send + Sync + fmt::Debug {
    /// `P(label = 1 | features)` per row, clipped.
    fn predict_prob(&self, features: &DMatrix<f64>) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    /// Penalty on every coefficient except the intercept.
    pub ridge: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self { ridge: 1e-3, max_iter: 100, tol: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborCount {
    /// `round(√n)` of the training sample.
    SqrtN,
    Fixed(usize),
}

impl NeighborCount {
    pub fn resolve(&self, n: usize) -> usize {
        match *self {
            NeighborCount::SqrtN => ((n as f64).sqrt().round() as usize).max(1),
            NeighborCount::Fixed(k) => k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: NeighborCount,
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedClassifier {
    pub name: String,
    pub spec: ClassifierSpec,
}

/// A classifier fitting procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierSpec {
    Logistic {
        basis: BasisExpansion,
        #[serde(default)]
        config: LogisticConfig,
    },
    Knn(KnnConfig),
    /// Log-loss stacked ensemble of the listed classifiers.
    Stacked {
        library: Vec<NamedClassifier>,
        #[serde(default = "default_inner_folds")]
        folds: usize,
    },
}

fn default_inner_folds() -> usize {
    5
}

/// Logistic on raw, quadratic and piecewise features plus k-NN with
/// `k = √n` and `k = 25`.
pub fn default_classifier_library() -> Vec<NamedClassifier> {
    let logistic = |name: &str, basis| NamedClassifier {
        name: name.into(),
        spec: ClassifierSpec::Logistic { basis, config: LogisticConfig::default() },
    };
    let knn = |name: &str, k| NamedClassifier {
        name: name.into(),
        spec: ClassifierSpec::Knn(KnnConfig { k, standardize: true }),
    };
    vec![
        logistic("logistic_raw", BasisExpansion::Raw),
        logistic("logistic_poly2", BasisExpansion::Polynomial2),
        logistic("logistic_piecewise", BasisExpansion::Piecewise { cuts: 5 }),
        knn("knn_sqrt_n", NeighborCount::SqrtN),
        knn("knn_25", NeighborCount::Fixed(25)),
    ]
}

pub fn default_stacked_classifier() -> ClassifierSpec {
    ClassifierSpec::Stacked { library: default_classifier_library(), folds: default_inner_folds() }
}

impl ClassifierSpec {
    pub fn fit(&self, features: &DMatrix<f64>, labels: &[bool], seed: &SeedSpec) -> Result<FittedClassifier> {
        match self {
            ClassifierSpec::Logistic { basis, config } => fit_logistic(features, labels, *basis, config),
            ClassifierSpec::Knn(config) => fit_knn_classifier(features, labels, config),
            ClassifierSpec::Stacked { library, folds } => fit_stacked(features, labels, library, *folds, seed),
        }
    }
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedClassifier {
    Logistic {
        expansion: FittedExpansion,
        /// Intercept first.
        coefficients: Vec<f64>,
    },
    Knn {
        scaler: Standardizer,
        /// Standardized training rows in canonical order, row-major.
        points: Vec<f64>,
        dim: usize,
        labels: Vec<bool>,
        k: usize,
    },
    Stacked {
        names: Vec<String>,
        members: Vec<FittedClassifier>,
        weights: Vec<f64>,
    },
    Constant {
        probability: f64,
    },
    #[serde(skip)]
    Custom(Arc<dyn ProbClassifier>),
}

impl fmt::Debug for FittedClassifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FittedClassifier::Logistic { coefficients, .. } => {
                f.debug_struct("Logistic").field("coefficients", coefficients).finish()
            }
            FittedClassifier::Knn { labels, k, .. } => {
                f.debug_struct("Knn").field("n", &labels.len()).field("k", k).finish()
            }
            FittedClassifier::Stacked { names, weights, .. } => {
                f.debug_struct("Stacked").field("names", names).field("weights", weights).finish()
            }
            FittedClassifier::Constant { probability } => {
                f.debug_struct("Constant").field("probability", probability).finish()
            }
            FittedClassifier::Custom(c) => f.debug_tuple("Custom").field(c).finish(),
        }
    }
}

impl FittedClassifier {
    pub fn custom(c: impl ProbClassifier + 'static) -> Self {
        FittedClassifier::Custom(Arc::new(c))
    }

    pub(crate) fn contains_custom(&self) -> bool {
        match self {
            FittedClassifier::Custom(_) => true,
            FittedClassifier::Stacked { members, .. } => members.iter().any(|m| m.contains_custom()),
            _ => false,
        }
    }
}

impl ProbClassifier for FittedClassifier {
    fn predict_prob(&self, features: &DMatrix<f64>) -> Result<Vec<f64>> {
        match self {
            FittedClassifier::Logistic { expansion, coefficients } => {
                let x = with_intercept(&expansion.transform(features)?);
                let eta = x * DVector::from_column_slice(coefficients);
                Ok(eta.iter().map(|&e| clip_prob(expit(e))).collect())
            }
            FittedClassifier::Knn { scaler, points, dim, labels, k } => {
                let q = scaler.transform(features)?;
                Ok((0..q.nrows()).map(|i| knn_vote(points, *dim, labels, *k, &q.row(i).iter().copied().collect::<Vec<_>>())).collect())
            }
            FittedClassifier::Stacked { members, weights, .. } => {
                let mut acc = vec![0.0; features.nrows()];
                for (m, &w) in members.iter().zip(weights) {
                    if w == 0.0 {
                        continue;
                    }
                    for (a, p) in acc.iter_mut().zip(m.predict_prob(features)?) {
                        *a += w * p;
                    }
                }
                Ok(acc.into_iter().map(clip_prob).collect())
            }
            FittedClassifier::Constant { probability } => Ok(vec![clip_prob(*probability); features.nrows()]),
            FittedClassifier::Custom(c) => {
                let p = c.predict_prob(features)?;
                match p.iter().find(|v| !v.is_finite()) {
                    Some(&bad) => Err(Error::InvalidPrediction(bad)),
                    None => Ok(p.into_iter().map(clip_prob).collect()),
                }
            }
        }
    }
}

fn check_labels(features: &DMatrix<f64>, labels: &[bool]) -> Result<()> {
    if features.nrows() != labels.len() {
        return Err(Error::InvalidData(format!("{} rows vs {} labels", features.nrows(), labels.len())));
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::DegenerateLabels);
    }
    Ok(())
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn penalized_loglik(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, ridge: f64) -> f64 {
    let eta = x * beta;
    let ll: f64 = eta.iter().zip(y).map(|(&e, &t)| t * e - softplus(e)).sum();
    ll - 0.5 * ridge * beta.iter().skip(1).map(|b| b * b).sum::<f64>()
}

fn solve_newton(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = h.clone().cholesky() {
        return Ok(ch.solve(g));
    }
    h.clone().lu().solve(g).ok_or_else(|| Error::LinearSolve("singular Hessian".into()))
}

/// Ridge-penalized logistic regression by Newton–Raphson (IRLS) with step
/// halving, so the penalized log-likelihood never decreases.
pub fn fit_logistic(
    features: &DMatrix<f64>,
    labels: &[bool],
    basis: BasisExpansion,
    config: &LogisticConfig,
) -> Result<FittedClassifier> {
    check_labels(features, labels)?;
    let expansion = FittedExpansion::fit(basis, features, true);
    let x = with_intercept(&expansion.transform(features)?);
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();
    let p_dim = x.ncols();
    let mut penalty = DMatrix::identity(p_dim, p_dim) * config.ridge;
    penalty[(0, 0)] = 0.0;
    let mut beta = DVector::zeros(p_dim);
    let mut current = penalized_loglik(&x, &y, &beta, config.ridge);
    for _ in 0..config.max_iter {
        let eta = &x * &beta;
        let p: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
        let w: Vec<f64> = p.iter().map(|&pi| (pi * (1.0 - pi)).max(1e-12)).collect();
        let resid = DVector::from_iterator(y.len(), y.iter().zip(&p).map(|(t, pi)| t - pi));
        let grad = x.tr_mul(&resid) - &penalty * &beta;
        let mut xw = x.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let hessian = x.transpose() * &xw + &penalty;
        let delta = solve_newton(&hessian, &grad)?;
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..40 {
            let cand = &beta + &delta * t;
            let ll = penalized_loglik(&x, &y, &cand, config.ridge);
            if ll >= current {
                next = Some((cand, ll));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, ll)) = next else {
            // no further ascent is representable
            return Ok(FittedClassifier::Logistic { expansion, coefficients: beta.iter().copied().collect() });
        };
        let change = (&cand - &beta).amax();
        debug_assert!(ll >= current);
        beta = cand;
        current = ll;
        if change < config.tol {
            if !beta.iter().all(|b| b.is_finite()) {
                break;
            }
            return Ok(FittedClassifier::Logistic { expansion, coefficients: beta.iter().copied().collect() });
        }
    }
    Err(Error::Convergence {
        what: "IRLS",
        iterations: config.max_iter,
        residual: current,
        last_iterate: beta.iter().copied().collect(),
    })
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
}

/// k-NN with Euclidean distance. Training rows are sorted by (features,
/// label) first, and distance ties go to the earlier row in that order, so
/// predictions do not depend on the input row order.
pub fn fit_knn_classifier(features: &DMatrix<f64>, labels: &[bool], config: &KnnConfig) -> Result<FittedClassifier> {
    check_labels(features, labels)?;
    let n = features.nrows();
    let k = config.k.resolve(n);
    if k == 0 || k > n {
        return Err(Error::Config(format!("k = {k} is invalid for {n} training rows")));
    }
    let scaler = if config.standardize { Standardizer::fit(features) } else { Standardizer::identity(features.ncols()) };
    let z = scaler.transform(features)?;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| z.row(i).iter().copied().collect()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| lexicographic(&rows[i], &rows[j]).then(labels[i].cmp(&labels[j])).then(i.cmp(&j)));
    let points = order.iter().flat_map(|&i| rows[i].iter().copied()).collect();
    let sorted_labels = order.iter().map(|&i| labels[i]).collect();
    Ok(FittedClassifier::Knn { scaler, points, dim: z.ncols(), labels: sorted_labels, k })
}

fn knn_vote(points: &[f64], dim: usize, labels: &[bool], k: usize, query: &[f64]) -> f64 {
    let n = labels.len();
    let mut dist: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let row = &points[i * dim..(i + 1) * dim];
            (row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum(), i)
        })
        .collect();
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < n {
        dist.select_nth_unstable_by(k - 1, by_distance);
    }
    let positives = dist[..k].iter().filter(|(_, i)| labels[*i]).count();
    clip_prob(positives as f64 / k as f64)
}

fn fit_stacked(
    features: &DMatrix<f64>,
    labels: &[bool],
    library: &[NamedClassifier],
    folds: usize,
    seed: &SeedSpec,
) -> Result<FittedClassifier> {
    check_labels(features, labels)?;
    if library.is_empty() {
        return Err(Error::EmptyLibrary);
    }
    let smallest = labels.iter().filter(|&&l| l).count().min(labels.iter().filter(|&&l| !l).count());
    let v = folds.min(smallest);
    if v < 2 {
        return Err(Error::InfeasibleStratification { label: 1, count: smallest, folds });
    }
    let plan = stratified_assignment(labels, v, &seed.named("stacked-folds"))?;
    let n = labels.len();
    let mut columns: Vec<(usize, Vec<f64>)> = Vec::new();
    'member: for (j, member) in library.iter().enumerate() {
        let mut col = vec![0.0; n];
        for m in 0..v {
            let train = plan.training(m);
            let valid = plan.validation(m);
            let train_labels: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
            let fitted = member
                .spec
                .fit(&features.select_rows(train.iter()), &train_labels, &seed.task(0, m as u64, &member.name))
                .and_then(|f| f.predict_prob(&features.select_rows(valid.iter())));
            match fitted {
                Ok(p) => valid.iter().zip(p).for_each(|(&i, pi)| col[i] = pi),
                Err(e) => {
                    warn!("classifier {} dropped: {e}", member.name);
                    continue 'member;
                }
            }
        }
        columns.push((j, col));
    }
    if columns.is_empty() {
        return Err(Error::EmptyLibrary);
    }
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();
    let objective = |w: &[f64]| {
        let mut grad = vec![0.0; w.len()];
        let losses: Vec<f64> = (0..n)
            .map(|i| {
                let raw: f64 = columns.iter().zip(w).map(|((_, c), wk)| wk * c[i]).sum();
                let q = clip_prob(raw);
                if q == raw {
                    let d = -(y[i] / q - (1.0 - y[i]) / (1.0 - q)) / n as f64;
                    for (g, (_, c)) in grad.iter_mut().zip(&columns) {
                        *g += d * c[i];
                    }
                }
                -(y[i] * q.ln() + (1.0 - y[i]) * (1.0 - q).ln())
            })
            .collect();
        (mean(&losses), grad)
    };
    let solution = minimize_on_simplex(objective, columns.len(), &SimplexConfig::default())?;
    let mut names = Vec::new();
    let mut members = Vec::new();
    let mut weights = Vec::new();
    for ((j, _), &w) in columns.iter().zip(&solution.weights).filter(|(_, &w)| w > 0.0) {
        let member = &library[*j];
        names.push(member.name.clone());
        members.push(member.spec.fit(features, labels, &seed.task(0, u64::MAX, &member.name))?);
        weights.push(w);
    }
    Ok(FittedClassifier::Stacked { names, members, weights })
}

/// `ψ = odds(p(λ=1 | x1, x2)) / odds(p(λ=1 | x2))` for the conditional ratio,
/// or `ψ = odds(p(λ=1 | x1, x2))` on augmented data.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum OddsRatioModel {
    Mediation {
        classifier_mw: FittedClassifier,
        classifier_w: FittedClassifier,
        policy: TruncationPolicy,
    },
    Augmented {
        classifier: FittedClassifier,
        policy: TruncationPolicy,
    },
}

pub fn odds_ratio_mediation(
    classifier_mw: FittedClassifier,
    classifier_w: FittedClassifier,
    policy: TruncationPolicy,
) -> OddsRatioModel {
    OddsRatioModel::Mediation { classifier_mw, classifier_w, policy }
}

pub fn odds_ratio_augmented(classifier: FittedClassifier, policy: TruncationPolicy) -> OddsRatioModel {
    OddsRatioModel::Augmented { classifier, policy }
}

fn odds(p: f64) -> f64 {
    p / (1.0 - p)
}

impl OddsRatioModel {
    pub fn predict(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<Vec<f64>> {
        match self {
            OddsRatioModel::Mediation { classifier_mw, classifier_w, policy } => {
                let top = classifier_mw.predict_prob(&hstack(x1, x2))?;
                let bottom = classifier_w.predict_prob(x2)?;
                Ok(top.iter().zip(&bottom).map(|(&a, &b)| policy.clamp(odds(a) / odds(b))).collect())
            }
            OddsRatioModel::Augmented { classifier, policy } => {
                let p = classifier.predict_prob(&hstack(x1, x2))?;
                Ok(p.into_iter().map(|v| policy.clamp(odds(v))).collect())
            }
        }
    }

    pub(crate) fn contains_custom(&self) -> bool {
        match self {
            OddsRatioModel::Mediation { classifier_mw, classifier_w, .. } => {
                classifier_mw.contains_custom() || classifier_w.contains_custom()
            }
            OddsRatioModel::Augmented { classifier, .. } => classifier.contains_custom(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LeastSquaresConfig {
    pub ridge: f64,
    pub standardize: bool,
}

impl Default for LeastSquaresConfig {
    fn default() -> Self {
        Self { ridge: 0.0, standardize: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRegression {
    pub expansion: FittedExpansion,
    /// Intercept first.
    pub coefficients: Vec<f64>,
}

impl LinearRegression {
    pub fn predict(&self, features: &DMatrix<f64>) -> Result<Vec<f64>> {
        let x = with_intercept(&self.expansion.transform(features)?);
        Ok((x * DVector::from_column_slice(&self.coefficients)).iter().copied().collect())
    }
}

/// Solves `(XᵀX + R)β = Xᵀy` with an unpenalized intercept.
pub fn fit_least_squares(
    features: &DMatrix<f64>,
    targets: &[f64],
    basis: BasisExpansion,
    config: &LeastSquaresConfig,
) -> Result<LinearRegression> {
    if features.nrows() != targets.len() {
        return Err(Error::InvalidData(format!("{} rows vs {} targets", features.nrows(), targets.len())));
    }
    let expansion = FittedExpansion::fit(basis, features, config.standardize);
    let x = with_intercept(&expansion.transform(features)?);
    let mut normal = x.transpose() * &x;
    for j in 1..normal.ncols() {
        normal[(j, j)] += config.ridge;
    }
    let rhs = x.tr_mul(&DVector::from_column_slice(targets));
    let beta = solve_spd(&normal, &rhs, 1e-8 * (1.0 + rhs.amax()))?;
    Ok(LinearRegression { expansion, coefficients: beta.iter().copied().collect() })
}
