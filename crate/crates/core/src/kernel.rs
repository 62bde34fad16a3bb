//! Gaussian-basis density-ratio estimators: KLIEP and RuLSIF.
//!
//! Both fit `ψ(x) = θ·φ(x)` on standardized inputs. Centers are drawn from
//! the numerator sample; the bandwidth grid is the median pairwise center
//! distance times a fixed set of multipliers.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::{shuffled_folds, vstack};
use crate::error::{Error, Result};
use crate::features::{solve_spd, Standardizer};
use crate::loss::TruncationPolicy;
use crate::rng::SeedSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBasis {
    /// `b × d`, one center per row.
    pub centers: DMatrix<f64>,
    pub sigma: f64,
}

impl GaussianBasis {
    pub fn new(centers: DMatrix<f64>, sigma: f64) -> Result<Self> {
        if centers.nrows() == 0 {
            return Err(Error::Config("basis needs at least one center".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("bandwidth must be positive, got {sigma}")));
        }
        Ok(Self { centers, sigma })
    }

    pub fn size(&self) -> usize {
        self.centers.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    /// `n × b` design matrix with entries `exp(−‖x_i − c_j‖² / (2σ²))`.
    pub fn evaluate(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.ncols() });
        }
        Ok(self.gram_from_squared(&squared_distances(x, &self.centers)))
    }

    fn gram_from_squared(&self, sq: &DMatrix<f64>) -> DMatrix<f64> {
        let scale = -1.0 / (2.0 * self.sigma * self.sigma);
        sq.map(|v| (v * scale).exp())
    }
}

fn squared_distances(x: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.nrows(), c.nrows());
    for k in 0..x.ncols() {
        let xk = x.column(k);
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let cjk = c[(j, k)];
            for (o, xv) in col.iter_mut().zip(xk.iter()) {
                *o += (xv - cjk) * (xv - cjk);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRatioModel {
    pub scaler: Standardizer,
    pub basis: GaussianBasis,
    pub theta: Vec<f64>,
    pub policy: TruncationPolicy,
}

impl KernelRatioModel {
    pub fn new(scaler: Standardizer, basis: GaussianBasis, theta: Vec<f64>, policy: TruncationPolicy) -> Result<Self> {
        if theta.len() != basis.size() {
            return Err(Error::DimensionMismatch { expected: basis.size(), got: theta.len() });
        }
        if scaler.dim() != basis.dim() {
            return Err(Error::DimensionMismatch { expected: basis.dim(), got: scaler.dim() });
        }
        Ok(Self { scaler, basis, theta, policy })
    }

    /// `θ·φ(x)` before clamping.
    pub fn predict_raw(&self, points: &DMatrix<f64>) -> Result<Vec<f64>> {
        let phi = self.basis.evaluate(&self.scaler.transform(points)?)?;
        let theta = DVector::from_column_slice(&self.theta);
        Ok((phi * theta).iter().copied().collect())
    }

    pub fn predict_ratio(&self, points: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self.predict_raw(points)?.into_iter().map(|v| self.policy.clamp(v)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KliepConfig {
    pub max_centers: usize,
    pub sigma_multipliers: Vec<f64>,
    pub max_iter: usize,
    pub tol: f64,
    pub cv_folds: usize,
}

impl Default for KliepConfig {
    fn default() -> Self {
        Self {
            max_centers: 100,
            sigma_multipliers: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            max_iter: 500,
            tol: 1e-6,
            cv_folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RulsifConfig {
    pub max_centers: usize,
    pub sigma_multipliers: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub alpha: f64,
    pub cv_folds: usize,
}

impl Default for RulsifConfig {
    fn default() -> Self {
        Self {
            max_centers: 100,
            sigma_multipliers: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            lambdas: vec![1e-3, 1e-2, 1e-1, 1.0, 10.0],
            alpha: 0.0,
            cv_folds: 5,
        }
    }
}

/// Scaler, standardized numerator, standardized denominator, centers.
type Prepared = (Standardizer, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>);

/// Standardizes both samples with pooled moments and draws the centers.
fn prepare(
    numerator: &DMatrix<f64>,
    denominator: &DMatrix<f64>,
    max_centers: usize,
    seed: &SeedSpec,
) -> Result<Prepared> {
    if numerator.nrows() == 0 || denominator.nrows() == 0 {
        return Err(Error::InvalidData("both samples must be non-empty".into()));
    }
    if numerator.ncols() != denominator.ncols() {
        return Err(Error::DimensionMismatch { expected: numerator.ncols(), got: denominator.ncols() });
    }
    let scaler = Standardizer::fit(&vstack(numerator, denominator));
    let num = scaler.transform(numerator)?;
    let den = scaler.transform(denominator)?;
    let b = max_centers.min(num.nrows()).max(1);
    let mut picks = sample(&mut seed.named("centers").rng(), num.nrows(), b).into_vec();
    picks.sort_unstable();
    let centers = num.select_rows(picks.iter());
    Ok((scaler, num, den, centers))
}

/// Median pairwise distance between centers; 1 when it degenerates to 0.
pub fn median_distance(centers: &DMatrix<f64>) -> f64 {
    let b = centers.nrows();
    let mut d = Vec::with_capacity(b * b.saturating_sub(1) / 2);
    for i in 0..b {
        for j in i + 1..b {
            d.push(
                (0..centers.ncols())
                    .map(|k| (centers[(i, k)] - centers[(j, k)]).powi(2))
                    .sum::<f64>()
                    .sqrt(),
            );
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = if d.len() % 2 == 1 { d[d.len() / 2] } else { 0.5 * (d[d.len() / 2 - 1] + d[d.len() / 2]) };
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KliepSolution {
    pub theta: Vec<f64>,
    /// Objective after each accepted iterate, starting from the initial point.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

fn mean_log(values: &DVector<f64>) -> f64 {
    if values.iter().any(|&v| v <= 0.0) {
        return f64::NEG_INFINITY;
    }
    values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64
}

/// Maximizes `mean_i log (Aθ)_i` subject to `bᵀθ = 1`, `θ ≥ 0`, where `A` is
/// the numerator design and `b` the denominator mean of the basis.
///
/// Each iteration takes a gradient step, moves back onto the constraint
/// hyperplane, projects onto the non-negative orthant and rescales. Steps that do not raise the
/// objective are halved; accepted steps double the next trial step.
pub fn kliep_solve(a: &DMatrix<f64>, b: &DVector<f64>, max_iter: usize, tol: f64) -> Result<KliepSolution> {
    let k = a.ncols();
    if b.len() != k {
        return Err(Error::DimensionMismatch { expected: k, got: b.len() });
    }
    let b_sum = b.sum();
    if !(b_sum > 0.0) {
        return Err(Error::InvalidData("basis vanishes on the denominator sample".into()));
    }
    let bb = b.dot(b);
    let project = |theta: DVector<f64>| -> Option<DVector<f64>> {
        let theta = &theta + b * ((1.0 - b.dot(&theta)) / bb);
        let theta = theta.map(|v| v.max(0.0));
        let s = b.dot(&theta);
        (s > 0.0).then(|| theta / s)
    };
    let n = a.nrows() as f64;
    let mut theta = DVector::from_element(k, 1.0 / b_sum);
    let mut fitted = a * &theta;
    let mut objective = mean_log(&fitted);
    let mut trace = vec![objective];
    let mut step = 1.0;
    for iter in 1..=max_iter {
        let grad = a.tr_mul(&fitted.map(|v| 1.0 / v)) / n;
        let mut accepted = None;
        while step > 1e-12 {
            if let Some(candidate) = project(&theta + &grad * step) {
                let cf = a * &candidate;
                let obj = mean_log(&cf);
                if obj > objective {
                    accepted = Some((candidate, cf, obj));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((candidate, cf, obj)) = accepted else {
            // no ascent direction left at machine resolution
            return Ok(KliepSolution { theta: theta.iter().copied().collect(), objective_trace: trace, iterations: iter });
        };
        let gain = obj - objective;
        theta = candidate;
        fitted = cf;
        objective = obj;
        trace.push(objective);
        step *= 2.0;
        if gain < tol {
            return Ok(KliepSolution { theta: theta.iter().copied().collect(), objective_trace: trace, iterations: iter });
        }
    }
    Err(Error::Convergence {
        what: "KLIEP",
        iterations: max_iter,
        residual: (b.dot(&theta) - 1.0).abs(),
        last_iterate: theta.iter().copied().collect(),
    })
}

fn column_mean(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / m.nrows() as f64))
}

pub fn fit_kliep(
    numerator: &DMatrix<f64>,
    denominator: &DMatrix<f64>,
    config: &KliepConfig,
    policy: TruncationPolicy,
    seed: &SeedSpec,
) -> Result<KernelRatioModel> {
    let (scaler, num, den, centers) = prepare(numerator, denominator, config.max_centers, seed)?;
    let base = median_distance(&centers);
    let folds = config.cv_folds.min(num.nrows());
    let assignment = shuffled_folds(num.nrows(), folds.max(1), &seed.named("kliep-cv"));
    let mut best: Option<(f64, f64)> = None;
    let (sq_num, sq_den) = (squared_distances(&num, &centers), squared_distances(&den, &centers));
    for &mult in &config.sigma_multipliers {
        let basis = GaussianBasis::new(centers.clone(), base * mult)?;
        let sigma = basis.sigma;
        let phi_num = basis.gram_from_squared(&sq_num);
        let b = column_mean(&basis.gram_from_squared(&sq_den));
        let score = if folds < 2 {
            let sol = kliep_solve(&phi_num, &b, config.max_iter, config.tol)?;
            *sol.objective_trace.last().unwrap()
        } else {
            let mut total = 0.0;
            for m in 0..folds {
                let train: Vec<usize> = (0..num.nrows()).filter(|&i| assignment[i] != m).collect();
                let hold: Vec<usize> = (0..num.nrows()).filter(|&i| assignment[i] == m).collect();
                let sol = match kliep_solve(&phi_num.select_rows(train.iter()), &b, config.max_iter, config.tol) {
                    Ok(s) => s,
                    Err(Error::Convergence { last_iterate, .. }) => KliepSolution {
                        theta: last_iterate,
                        objective_trace: vec![],
                        iterations: config.max_iter,
                    },
                    Err(e) => return Err(e),
                };
                let fitted = phi_num.select_rows(hold.iter()) * DVector::from_vec(sol.theta);
                total += fitted.iter().map(|v| policy.clamp(*v).ln()).sum::<f64>();
            }
            total / num.nrows() as f64
        };
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, sigma));
        }
    }
    let (_, sigma) = best.ok_or_else(|| Error::Config("empty bandwidth grid".into()))?;
    let basis = GaussianBasis::new(centers, sigma)?;
    let phi_num = basis.gram_from_squared(&sq_num);
    let b = column_mean(&basis.gram_from_squared(&sq_den));
    let sol = kliep_solve(&phi_num, &b, config.max_iter, config.tol)?;
    KernelRatioModel::new(scaler, basis, sol.theta, policy)
}

/// `θ = (H + λI)⁻¹ h` with `H = α·mean_num[φφᵀ] + (1−α)·mean_den[φφᵀ]` and
/// `h = mean_num[φ]`; negative entries are zeroed after the solve.
pub fn rulsif_solve(phi_num: &DMatrix<f64>, phi_den: &DMatrix<f64>, alpha: f64, lambda: f64) -> Result<Vec<f64>> {
    let h_num = phi_num.transpose() * phi_num / phi_num.nrows() as f64;
    let h_den = phi_den.transpose() * phi_den / phi_den.nrows() as f64;
    let h = column_mean(phi_num);
    rulsif_from_moments(&h_num, &h_den, &h, alpha, lambda)
}

fn rulsif_from_moments(
    h_num: &DMatrix<f64>,
    h_den: &DMatrix<f64>,
    h: &DVector<f64>,
    alpha: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    let k = h.len();
    let system = h_num * alpha + h_den * (1.0 - alpha) + DMatrix::identity(k, k) * lambda;
    let theta = solve_spd(&system, h, 1e-8)?;
    Ok(theta.iter().map(|v| v.max(0.0)).collect())
}

struct FoldMoments {
    gram_num: Vec<DMatrix<f64>>,
    gram_den: Vec<DMatrix<f64>>,
    sum_num: Vec<DVector<f64>>,
    count_num: Vec<usize>,
    count_den: Vec<usize>,
}

impl FoldMoments {
    fn new(phi_num: &DMatrix<f64>, phi_den: &DMatrix<f64>, fold_num: &[usize], fold_den: &[usize], k: usize) -> Self {
        let part = |phi: &DMatrix<f64>, fold: &[usize], m: usize| {
            let rows: Vec<usize> = (0..phi.nrows()).filter(|&i| fold[i] == m).collect();
            let sub = phi.select_rows(rows.iter());
            let sum = DVector::from_iterator(sub.ncols(), sub.column_iter().map(|c| c.sum()));
            (sub.transpose() * &sub, sum, rows.len())
        };
        let mut out = Self { gram_num: vec![], gram_den: vec![], sum_num: vec![], count_num: vec![], count_den: vec![] };
        for m in 0..k {
            let (g, s, c) = part(phi_num, fold_num, m);
            out.gram_num.push(g);
            out.sum_num.push(s);
            out.count_num.push(c);
            let (g, _, c) = part(phi_den, fold_den, m);
            out.gram_den.push(g);
            out.count_den.push(c);
        }
        out
    }

    /// Training moments (all folds but `m`) and held-out moments (fold `m`).
    #[allow(clippy::type_complexity)]
    fn split(&self, m: usize) -> ((DMatrix<f64>, DMatrix<f64>, DVector<f64>), (DMatrix<f64>, DMatrix<f64>, DVector<f64>)) {
        let k = self.gram_num.len();
        let b = self.sum_num[0].len();
        let (mut gn, mut gd, mut sn) = (DMatrix::zeros(b, b), DMatrix::zeros(b, b), DVector::zeros(b));
        let (mut cn, mut cd) = (0, 0);
        for j in (0..k).filter(|&j| j != m) {
            gn += &self.gram_num[j];
            gd += &self.gram_den[j];
            sn += &self.sum_num[j];
            cn += self.count_num[j];
            cd += self.count_den[j];
        }
        let train = (gn / cn as f64, gd / cd as f64, sn / cn as f64);
        let hold = (
            &self.gram_num[m] / self.count_num[m] as f64,
            &self.gram_den[m] / self.count_den[m] as f64,
            &self.sum_num[m] / self.count_num[m] as f64,
        );
        (train, hold)
    }
}

pub fn fit_rulsif(
    numerator: &DMatrix<f64>,
    denominator: &DMatrix<f64>,
    config: &RulsifConfig,
    policy: TruncationPolicy,
    seed: &SeedSpec,
) -> Result<KernelRatioModel> {
    let (scaler, num, den, centers) = prepare(numerator, denominator, config.max_centers, seed)?;
    let base = median_distance(&centers);
    let alpha = config.alpha;
    let folds = config.cv_folds.min(num.nrows()).min(den.nrows());
    let fold_num = shuffled_folds(num.nrows(), folds.max(1), &seed.named("rulsif-cv-num"));
    let fold_den = shuffled_folds(den.nrows(), folds.max(1), &seed.named("rulsif-cv-den"));
    let mut best: Option<(f64, f64, f64)> = None;
    let (sq_num, sq_den) = (squared_distances(&num, &centers), squared_distances(&den, &centers));
    for &mult in &config.sigma_multipliers {
        let basis = GaussianBasis::new(centers.clone(), base * mult)?;
        let phi_num = basis.gram_from_squared(&sq_num);
        let phi_den = basis.gram_from_squared(&sq_den);
        let moments = (folds >= 2).then(|| FoldMoments::new(&phi_num, &phi_den, &fold_num, &fold_den, folds));
        for &lambda in &config.lambdas {
            let score = match &moments {
                Some(mo) => {
                    let mut total = 0.0;
                    for m in 0..folds {
                        let ((gn, gd, h), (hn, hd, hh)) = mo.split(m);
                        let theta = DVector::from_vec(rulsif_from_moments(&gn, &gd, &h, alpha, lambda)?);
                        let gram = hn * alpha + hd * (1.0 - alpha);
                        total += 0.5 * theta.dot(&(gram * &theta)) - hh.dot(&theta);
                    }
                    total / folds as f64
                }
                None => {
                    let theta = DVector::from_vec(rulsif_solve(&phi_num, &phi_den, alpha, lambda)?);
                    let gram = phi_num.transpose() * &phi_num * (alpha / num.nrows() as f64)
                        + phi_den.transpose() * &phi_den * ((1.0 - alpha) / den.nrows() as f64);
                    0.5 * theta.dot(&(gram * &theta)) - column_mean(&phi_num).dot(&theta)
                }
            };
            if best.is_none_or(|(s, _, _)| score < s) {
                best = Some((score, basis.sigma, lambda));
            }
        }
    }
    let (_, sigma, lambda) = best.ok_or_else(|| Error::Config("empty hyperparameter grid".into()))?;
    let basis = GaussianBasis::new(centers, sigma)?;
    let theta = rulsif_solve(&basis.gram_from_squared(&sq_num), &basis.gram_from_squared(&sq_den), alpha, lambda)?;
    KernelRatioModel::new(scaler, basis, theta, policy)
}
