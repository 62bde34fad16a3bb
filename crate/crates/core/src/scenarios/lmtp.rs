//! Longitudinal shift-policy scenario with four periods.
//!
//! `W1 ~ Cat(0.5, 0.25, 0.25)` on `{1, 2, 3}`;
//! `A1 | W1 ~ Bin(5, 0.5·1{W1>1} + 0.1·1{W1>2})`;
//! `W_t ~ Bern(expit(−0.3·W_{t−1} + 0.5·A_{t−1}))` for `t = 2, 3, 4`;
//! `A_t ~ Bin(5, expit(−2 + 1/(1 + 2W_t + A_{t−1})))` for `t = 2, 3`;
//! `A4 ~ Bin(5, expit(1 + W4 − 3·A3))`.
//!
//! The history `h_t` is `(w1, a1, w2, a2, ..., w_t)`, `2t − 1` values.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::loss::mean;
use crate::model::RatioModel;
use crate::rng::SeedSpec;
use crate::special::{binomial_pmf, expit, sample_bernoulli, sample_binomial};

pub const PERIODS: usize = 4;
pub const EXPOSURE_MAX: i64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmtpTrajectory {
    pub w: [i64; PERIODS],
    pub a: [i64; PERIODS],
    pub y: Option<f64>,
}

pub fn history_len(t: usize) -> usize {
    2 * t - 1
}

impl LmtpTrajectory {
    /// `h_t` for `t` in `1..=4`.
    pub fn history(&self, t: usize) -> Vec<f64> {
        let mut h = Vec::with_capacity(history_len(t));
        for s in 0..t {
            h.push(self.w[s] as f64);
            if s + 1 < t {
                h.push(self.a[s] as f64);
            }
        }
        h
    }

    /// Flat row `w1, a1, ..., w4, a4`.
    pub fn as_row(&self) -> Vec<f64> {
        (0..PERIODS).flat_map(|s| [self.w[s] as f64, self.a[s] as f64]).collect()
    }
}

pub const COLUMNS: [&str; 8] = ["w1", "a1", "w2", "a2", "w3", "a3", "w4", "a4"];

/// Exposure success probability at period `t` given the history row.
pub fn exposure_probability(t: usize, h: &[f64]) -> Result<f64> {
    if !(1..=PERIODS).contains(&t) || h.len() != history_len(t) {
        return Err(Error::Domain(format!("history of length {} is not valid for t = {t}", h.len())));
    }
    Ok(match t {
        1 => {
            let w1 = h[0];
            0.5 * f64::from(u8::from(w1 > 1.0)) + 0.1 * f64::from(u8::from(w1 > 2.0))
        }
        2 | 3 => {
            let (w, a_prev) = (h[2 * t - 2], h[2 * t - 3]);
            expit(-2.0 + 1.0 / (1.0 + 2.0 * w + a_prev))
        }
        _ => {
            let (w, a_prev) = (h[6], h[5]);
            expit(1.0 + w - 3.0 * a_prev)
        }
    })
}

fn covariate_probability(w_prev: i64, a_prev: i64) -> f64 {
    expit(-0.3 * w_prev as f64 + 0.5 * a_prev as f64)
}

fn draw<R: Rng>(rng: &mut R, with_outcome: bool) -> LmtpTrajectory {
    let u: f64 = rng.random();
    let w1 = if u < 0.5 {
        1
    } else if u < 0.75 {
        2
    } else {
        3
    };
    let mut traj = LmtpTrajectory { w: [w1, 0, 0, 0], a: [0; PERIODS], y: None };
    for t in 1..=PERIODS {
        if t > 1 {
            traj.w[t - 1] = i64::from(sample_bernoulli(rng, covariate_probability(traj.w[t - 2], traj.a[t - 2])));
        }
        let p = exposure_probability(t, &traj.history(t)).expect("history is well formed");
        traj.a[t - 1] = i64::from(sample_binomial(rng, EXPOSURE_MAX as u32, p));
    }
    if with_outcome {
        traj.y = Some(traj.a[PERIODS - 1] as f64 + rng.sample::<f64, _>(StandardNormal));
    }
    traj
}

pub fn sample_lmtp(n: usize, seed: &SeedSpec) -> Vec<LmtpTrajectory> {
    let mut rng = seed.named("lmtp").rng();
    (0..n).map(|_| draw(&mut rng, false)).collect()
}

/// Adds the synthetic outcome `Y = A4 + N(0, 1)`.
pub fn sample_lmtp_with_outcome(n: usize, seed: &SeedSpec) -> Vec<LmtpTrajectory> {
    let mut rng = seed.named("lmtp").rng();
    (0..n).map(|_| draw(&mut rng, true)).collect()
}

/// Modified treatment policy `d(a) = a + delta` when that stays non-negative,
/// otherwise `a`. The default `delta = −1` gives `a − 1` for `a ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub delta: i64,
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self { delta: -1 }
    }
}

impl PolicySpec {
    pub fn apply(&self, a: i64) -> Result<i64> {
        let shifted = a + self.delta;
        let out = if shifted >= 0 { shifted } else { a };
        if (0..=EXPOSURE_MAX).contains(&out) {
            Ok(out)
        } else {
            Err(Error::Policy(out))
        }
    }
}

fn to_exposure(a: f64) -> Result<i64> {
    if a.fract() != 0.0 || !(0.0..=EXPOSURE_MAX as f64).contains(&a) {
        return Err(Error::Domain(format!("exposure {a} is not in 0..=5")));
    }
    Ok(a as i64)
}

/// Stacks originals (`λ = 0`) over policy-shifted copies (`λ = 1`), with
/// `x1 = a_t` and `x2 = h_t`.
pub fn augment_for_ratio(trajectories: &[LmtpTrajectory], t: usize, policy: &PolicySpec) -> Result<LabeledDataset> {
    if !(1..=PERIODS).contains(&t) {
        return Err(Error::Config(format!("period {t} outside 1..=4")));
    }
    let n = trajectories.len();
    let d2 = history_len(t);
    let mut x1 = Vec::with_capacity(2 * n);
    let mut x2 = DMatrix::zeros(2 * n, d2);
    for copy in [false, true] {
        for (i, tr) in trajectories.iter().enumerate() {
            let a = tr.a[t - 1];
            x1.push(if copy { policy.apply(a)? } else { a } as f64);
            let row = if copy { n + i } else { i };
            for (j, v) in tr.history(t).into_iter().enumerate() {
                x2[(row, j)] = v;
            }
        }
    }
    let labels = (0..2 * n).map(|i| i >= n).collect();
    LabeledDataset::new(DMatrix::from_vec(2 * n, 1, x1), x2, labels, None)
}

/// Exposure pmf `g_t(· | h)` and its push-forward `g_t^d(· | h)`.
pub fn exposure_pmfs(t: usize, h: &[f64], policy: &PolicySpec) -> Result<([f64; 6], [f64; 6])> {
    let p = exposure_probability(t, h)?;
    let mut g = [0.0; 6];
    let mut gd = [0.0; 6];
    for a in 0..=EXPOSURE_MAX {
        g[a as usize] = binomial_pmf(a as u32, EXPOSURE_MAX as u32, p);
    }
    for a in 0..=EXPOSURE_MAX {
        gd[policy.apply(a)? as usize] += g[a as usize];
    }
    Ok((g, gd))
}

/// `r_t(a | h) = g^d(a | h) / g(a | h)`, taken as 0 when `g^d(a | h) = 0`.
pub fn true_ratio_with_policy(t: usize, a: f64, h: &[f64], policy: &PolicySpec) -> Result<f64> {
    let a = to_exposure(a)? as usize;
    let (g, gd) = exposure_pmfs(t, h, policy)?;
    Ok(if gd[a] == 0.0 { 0.0 } else { gd[a] / g[a] })
}

pub fn true_ratio_from_row(t: usize, a: f64, h: &[f64]) -> Result<f64> {
    true_ratio_with_policy(t, a, h, &PolicySpec::default())
}

/// The true `r_t` without truncation; zeros are returned as is.
#[derive(Debug, Clone, Copy)]
pub struct LmtpTrueRatio {
    pub t: usize,
}

impl RatioModel for LmtpTrueRatio {
    fn predict(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<Vec<f64>> {
        (0..x1.nrows())
            .map(|i| true_ratio_from_row(self.t, x1[(i, 0)], &x2.row(i).iter().copied().collect::<Vec<_>>()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PluginEstimate {
    pub estimate: f64,
    /// `∏_t r̂_t(A_t, H_t)` per trajectory.
    pub weights: Vec<f64>,
}

/// `mean_i (∏_t r̂_t(A_t, H_t))·Y_i` with one model per period.
pub fn lmtp_plugin(trajectories: &[LmtpTrajectory], models: &[&dyn RatioModel]) -> Result<PluginEstimate> {
    if models.len() != PERIODS {
        return Err(Error::Config(format!("need {PERIODS} ratio models, got {}", models.len())));
    }
    let y: Vec<f64> = trajectories
        .iter()
        .map(|tr| tr.y.ok_or_else(|| Error::Schema("plug-in estimator needs an outcome".into())))
        .collect::<Result<_>>()?;
    let n = trajectories.len();
    let mut weights = vec![1.0; n];
    for (t, model) in (1..=PERIODS).zip(models) {
        let x1 = DMatrix::from_iterator(n, 1, trajectories.iter().map(|tr| tr.a[t - 1] as f64));
        let mut x2 = DMatrix::zeros(n, history_len(t));
        for (i, tr) in trajectories.iter().enumerate() {
            for (j, v) in tr.history(t).into_iter().enumerate() {
                x2[(i, j)] = v;
            }
        }
        for (w, r) in weights.iter_mut().zip(model.predict(&x1, &x2)?) {
            *w *= r;
        }
    }
    let terms: Vec<f64> = weights.iter().zip(&y).map(|(w, y)| w * y).collect();
    Ok(PluginEstimate { estimate: mean(&terms), weights })
}
