//! Mediation scenario.
//!
//! `W ~ N(5, 2²)` truncated to `[2, 8]`; `A | W` Bernoulli with a
//! piecewise-constant propensity; `M | W, A=1 ~ Beta(0.6W + 1, 0.7W)`;
//! `M | W, A=0 ~ N(0.1W, 1)` truncated to `[0, 1]`. The outcome, when
//! requested, is synthetic: `Y = 0.25W + 0.5A + 2M − A·M + N(0, 1)`.
//!
//! Rows map to datasets as `x1 = m`, `x2 = w`, `λ = a`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::classify::clip_prob;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::loss::mean;
use crate::model::RatioModel;
use crate::rng::SeedSpec;
use crate::special::{beta_pdf, sample_bernoulli, sample_beta, sample_truncated_normal, truncated_normal_pdf};

pub const W_RANGE: (f64, f64) = (2.0, 8.0);

/// `P(A = 1 | W = w)`.
pub fn propensity(w: f64) -> f64 {
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    0.6 - 0.35 * ind(w < 4.0) - 0.15 * ind(w > 5.0) + 0.05 * ind(w < 6.0) - 0.15 * ind(w > 7.0)
}

pub fn beta_shape(w: f64) -> (f64, f64) {
    (0.6 * w + 1.0, 0.7 * w)
}

/// Draws `(w, a, m)` and, optionally, the synthetic outcome.
fn draw_row<R: Rng>(rng: &mut R, with_outcome: bool) -> Result<(f64, bool, f64, Option<f64>)> {
    let w = sample_truncated_normal(rng, 5.0, 2.0, W_RANGE.0, W_RANGE.1)?;
    let a = sample_bernoulli(rng, propensity(w));
    let m = if a {
        let (p, q) = beta_shape(w);
        sample_beta(rng, p, q)
    } else {
        sample_truncated_normal(rng, 0.1 * w, 1.0, 0.0, 1.0)?
    };
    let y = with_outcome.then(|| {
        let af = if a { 1.0 } else { 0.0 };
        0.25 * w + 0.5 * af + 2.0 * m - af * m + rng.sample::<f64, _>(StandardNormal)
    });
    Ok((w, a, m, y))
}

pub fn sample_mediation(n: usize, seed: &SeedSpec) -> Result<LabeledDataset> {
    sample(n, seed, false)
}

pub fn sample_mediation_with_outcome(n: usize, seed: &SeedSpec) -> Result<LabeledDataset> {
    sample(n, seed, true)
}

fn sample(n: usize, seed: &SeedSpec, with_outcome: bool) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::Config("sample size must be at least 1".into()));
    }
    let mut rng = seed.named("mediation").rng();
    let (mut ms, mut ws, mut labels, mut ys) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::new());
    for _ in 0..n {
        let (w, a, m, y) = draw_row(&mut rng, with_outcome)?;
        ms.push(m);
        ws.push(w);
        labels.push(a);
        ys.extend(y);
    }
    let d = LabeledDataset::new(DMatrix::from_column_slice(n, 1, &ms), DMatrix::from_column_slice(n, 1, &ws), labels, None)?;
    if with_outcome {
        d.with_outcome(ys)
    } else {
        Ok(d)
    }
}

/// `p(m | w, A=1) / p(m | w, A=0)`.
pub fn true_ratio(m: f64, w: f64) -> Result<f64> {
    if !(m > 0.0 && m < 1.0) {
        return Err(Error::Domain(format!("mediator {m} outside (0, 1)")));
    }
    if !(W_RANGE.0..=W_RANGE.1).contains(&w) {
        return Err(Error::Domain(format!("confounder {w} outside [2, 8]")));
    }
    let (p, q) = beta_shape(w);
    Ok(beta_pdf(m, p, q) / truncated_normal_pdf(m, 0.1 * w, 1.0, 0.0, 1.0))
}

/// The true ratio without truncation, for estimators that need exact values.
#[derive(Debug, Clone, Copy, Default)]
pub struct MediationTrueRatio;

impl RatioModel for MediationTrueRatio {
    fn predict(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<Vec<f64>> {
        (0..x1.nrows()).map(|i| true_ratio(x1[(i, 0)], x2[(i, 0)])).collect()
    }
}

/// `E[Y | A=0, M=m, W=w]` under the synthetic outcome.
pub fn control_outcome_mean(m: f64, w: f64) -> f64 {
    0.25 * w + 2.0 * m
}

/// `E[μ(M, w) | A=1, W=w]` under the synthetic outcome.
pub fn sequential_mean(w: f64) -> f64 {
    let (p, q) = beta_shape(w);
    0.25 * w + 2.0 * p / (p + q)
}

/// Nuisance functions of the one-step estimator. Functions receive the
/// confounder row `w` and, for the outcome regression, the mediator row `m`.
pub struct NuisanceSet<'a> {
    /// `ĝ(1 | w)`.
    pub propensity: &'a dyn Fn(&[f64]) -> f64,
    pub ratio: &'a dyn RatioModel,
    /// `μ̂(m, w)`, the outcome regression among the unexposed.
    pub outcome: &'a dyn Fn(&[f64], &[f64]) -> f64,
    /// `θ̂(w)`.
    pub sequential: &'a dyn Fn(&[f64]) -> f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneStepEstimate {
    pub estimate: f64,
    pub contributions: Vec<f64>,
}

/// Mean of `1{A=0}/ĝ(0|w)·ψ̂(m,w)·(y − μ̂) + 1{A=1}/ĝ(1|w)·(μ̂ − θ̂) + θ̂`.
pub fn one_step_mediation(d: &LabeledDataset, nuisances: &NuisanceSet<'_>) -> Result<OneStepEstimate> {
    let y = d.y().ok_or_else(|| Error::Schema("one-step estimator needs an outcome column".into()))?;
    let ratio = nuisances.ratio.predict(d.x1(), d.x2())?;
    let contributions: Vec<f64> = (0..d.n())
        .map(|i| {
            let (m, w) = (d.row_x1(i), d.row_x2(i));
            let g1 = clip_prob((nuisances.propensity)(&w));
            let mu = (nuisances.outcome)(&m, &w);
            let theta = (nuisances.sequential)(&w);
            if d.labels()[i] {
                (mu - theta) / g1 + theta
            } else {
                ratio[i] * (y[i] - mu) / (1.0 - g1) + theta
            }
        })
        .collect();
    Ok(OneStepEstimate { estimate: mean(&contributions), contributions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FittedRatio;

    #[test]
    fn propensity_branches() {
        assert!((propensity(3.0) - 0.30).abs() < 1e-15);
        assert!((propensity(4.5) - 0.65).abs() < 1e-15);
        assert!((propensity(5.5) - 0.50).abs() < 1e-15);
        assert!((propensity(6.5) - 0.45).abs() < 1e-15);
        assert!((propensity(7.5) - 0.30).abs() < 1e-15);
    }

    #[test]
    fn supports_are_respected() {
        let d = sample_mediation(5000, &SeedSpec::new(1)).unwrap();
        for i in 0..d.n() {
            assert!((2.0..=8.0).contains(&d.x2()[(i, 0)]));
            assert!((0.0..=1.0).contains(&d.x1()[(i, 0)]));
        }
    }

    #[test]
    fn low_confounder_branch_propensity() {
        let d = sample_mediation(10_000, &SeedSpec::new(2)).unwrap();
        let rows: Vec<usize> = (0..d.n()).filter(|&i| d.x2()[(i, 0)] < 4.0).collect();
        let rate = rows.iter().filter(|&&i| d.labels()[i]).count() as f64 / rows.len() as f64;
        let se = (0.3 * 0.7 / rows.len() as f64).sqrt();
        assert!((rate - 0.30).abs() < 3.0 * se, "rate {rate} se {se}");
    }

    #[test]
    fn exposed_mediator_mean_near_middle_confounder() {
        let d = sample_mediation(40_000, &SeedSpec::new(3)).unwrap();
        let ms: Vec<f64> = (0..d.n())
            .filter(|&i| d.labels()[i] && (d.x2()[(i, 0)] - 5.0).abs() < 0.05)
            .map(|i| d.x1()[(i, 0)])
            .collect();
        let (p, q): (f64, f64) = (4.0, 3.5);
        let mu = p / (p + q);
        let sd = (p * q / ((p + q).powi(2) * (p + q + 1.0))).sqrt();
        let emp = ms.iter().sum::<f64>() / ms.len() as f64;
        // window of ±0.05 shifts the target mean by well under 0.01 sd
        assert!((emp - mu).abs() < 3.0 * sd / (ms.len() as f64).sqrt() + 0.004, "{emp} vs {mu}, n={}", ms.len());
    }

    #[test]
    fn ratio_integrates_against_denominator() {
        for w in [3.0, 5.0, 7.0] {
            // composite Simpson, 512 intervals, endpoints excluded from the ratio domain
            let nodes = 512;
            let h = 1.0 / nodes as f64;
            let f = |m: f64| {
                let m = m.clamp(1e-12, 1.0 - 1e-12);
                true_ratio(m, w).unwrap() * truncated_normal_pdf(m, 0.1 * w, 1.0, 0.0, 1.0)
            };
            let mut s = f(0.0) + f(1.0);
            for j in 1..nodes {
                s += f(j as f64 * h) * if j % 2 == 1 { 4.0 } else { 2.0 };
            }
            let integral = s * h / 3.0;
            assert!((integral - 1.0).abs() < 1e-5, "w={w}: {integral}");
        }
    }

    #[test]
    fn reference_ratio_value() {
        assert!((true_ratio(0.5, 5.0).unwrap() - 1.990416416986886).abs() < 1e-6);
    }

    #[test]
    fn ratio_domain() {
        assert!(matches!(true_ratio(0.0, 5.0), Err(Error::Domain(_))));
        assert!(matches!(true_ratio(1.2, 5.0), Err(Error::Domain(_))));
        for i in 0..100 {
            for w in [2.0, 3.5, 5.0, 6.5, 8.0] {
                let r = true_ratio((i as f64 + 0.5) / 100.0, w).unwrap();
                assert!(r > 0.0 && r.is_finite());
            }
        }
    }

    #[test]
    fn one_step_single_rows() {
        let ratio = FittedRatio::constant(2.0, Default::default());
        let g = |_: &[f64]| 0.5;
        let mu = |_: &[f64], _: &[f64]| 2.0;
        let th = |_: &[f64]| 1.0;
        let nuis = NuisanceSet { propensity: &g, ratio: &ratio, outcome: &mu, sequential: &th };
        let exposed = LabeledDataset::from_rows(&[vec![0.5]], &[vec![5.0]], &[true]).unwrap().with_outcome(vec![9.0]).unwrap();
        assert!((one_step_mediation(&exposed, &nuis).unwrap().estimate - 3.0).abs() < 1e-15);
        let control = LabeledDataset::from_rows(&[vec![0.5]], &[vec![5.0]], &[false]).unwrap().with_outcome(vec![3.0]).unwrap();
        assert!((one_step_mediation(&control, &nuis).unwrap().estimate - 5.0).abs() < 1e-15);
    }

    #[test]
    fn one_step_needs_outcome() {
        let ratio = FittedRatio::constant(1.0, Default::default());
        let g = |_: &[f64]| 0.5;
        let mu = |_: &[f64], _: &[f64]| 0.0;
        let th = |_: &[f64]| 0.0;
        let nuis = NuisanceSet { propensity: &g, ratio: &ratio, outcome: &mu, sequential: &th };
        let d = LabeledDataset::from_rows(&[vec![0.5]], &[vec![5.0]], &[true]).unwrap();
        assert!(matches!(one_step_mediation(&d, &nuis), Err(Error::Schema(_))));
    }
}
