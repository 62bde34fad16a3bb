//! The density-ratio loss `L(O, ψ) = −1{λ=1}·log ψ + 1{λ=0}·log ψ`, empirical
//! and cross-validated risks, and an exact risk-gap calculator for discrete
//! joint distributions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{FoldPlan, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::{RatioLearner, RatioModel};
use crate::rng::SeedSpec;

/// Ratio predictions are clamped into `[ε, 1/ε]` before any logarithm is
/// taken, which bounds every loss value by `|log ε|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    pub epsilon_ratio: f64,
}

impl TruncationPolicy {
    pub fn new(epsilon_ratio: f64) -> Result<Self> {
        if !(epsilon_ratio > 0.0 && epsilon_ratio < 1.0) {
            return Err(Error::Config(format!("epsilon_ratio must lie in (0, 1), got {epsilon_ratio}")));
        }
        Ok(Self { epsilon_ratio })
    }

    pub fn lower(&self) -> f64 {
        self.epsilon_ratio
    }

    pub fn upper(&self) -> f64 {
        1.0 / self.epsilon_ratio
    }

    pub fn clamp(&self, psi: f64) -> f64 {
        psi.clamp(self.lower(), self.upper())
    }

    /// Largest attainable |loss|.
    pub fn loss_bound(&self) -> f64 {
        -self.epsilon_ratio.ln()
    }
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self { epsilon_ratio: 1e-3 }
    }
}

pub fn dr_loss(label: bool, psi: f64, policy: &TruncationPolicy) -> Result<f64> {
    if !psi.is_finite() || psi <= 0.0 {
        return Err(Error::InvalidPrediction(psi));
    }
    let log_psi = policy.clamp(psi).ln();
    Ok(if label { -log_psi } else { log_psi })
}

/// Pairwise (cascade) summation. The result depends only on the order of
/// `values`, never on how work was scheduled.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 16 {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

pub fn risk_of_predictions(labels: &[bool], predictions: &[f64], policy: &TruncationPolicy) -> Result<f64> {
    if labels.is_empty() || labels.len() != predictions.len() {
        return Err(Error::InvalidData(format!(
            "{} labels vs {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    let losses = labels
        .iter()
        .zip(predictions)
        .map(|(&l, &p)| dr_loss(l, p, policy))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&losses))
}

pub fn empirical_risk(d: &LabeledDataset, model: &dyn RatioModel, policy: &TruncationPolicy) -> Result<f64> {
    let predictions = model.predict(d.x1(), d.x2())?;
    risk_of_predictions(d.labels(), &predictions, policy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRisk {
    pub risk: f64,
    pub fold_risks: Vec<f64>,
}

/// `(1/v) Σ_m R(Ψ̂(P_T(m)), P_V(m))`.
pub fn cross_validated_risk(
    d: &LabeledDataset,
    learner: &dyn RatioLearner,
    folds: &FoldPlan,
    policy: &TruncationPolicy,
    seed: &SeedSpec,
) -> Result<CvRisk> {
    if folds.n() != d.n() {
        return Err(Error::Config("fold plan does not match dataset size".into()));
    }
    let fold_risks = (0..folds.v())
        .map(|m| {
            let wrap = |e: Error| Error::FoldFit { fold: m, source: Box::new(e) };
            let train = d.subset(&folds.training(m));
            let valid = d.subset(&folds.validation(m));
            let model = learner.fit(&train, &seed.task(0, m as u64, learner.name())).map_err(wrap)?;
            empirical_risk(&valid, &model, policy).map_err(wrap)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CvRisk { risk: mean(&fold_risks), fold_risks })
}

/// Ratio values keyed by `(x1 level, x2 level)`.
pub type RatioTable = BTreeMap<(usize, usize), f64>;

/// A finite joint law of `(X1, X2, λ)` on `x1_levels × x2_levels × {0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    x1_levels: usize,
    x2_levels: usize,
    /// `mass[x2 * x1_levels + x1] = [p(x1, x2, λ=0), p(x1, x2, λ=1)]`
    mass: Vec<[f64; 2]>,
}

impl DiscreteJoint {
    pub fn new(x1_levels: usize, x2_levels: usize, mass: Vec<[f64; 2]>) -> Result<Self> {
        if x1_levels == 0 || x2_levels == 0 || mass.len() != x1_levels * x2_levels {
            return Err(Error::Config("mass table has the wrong shape".into()));
        }
        if mass.iter().flatten().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Config("negative or non-finite probability".into()));
        }
        let total: f64 = mass.iter().flatten().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("probabilities sum to {total}")));
        }
        let joint = Self { x1_levels, x2_levels, mass };
        for l in [0u8, 1] {
            if joint.p_label(l == 1) <= 0.0 {
                return Err(Error::DegeneratePopulation { missing: l });
            }
        }
        for x2 in 0..x2_levels {
            let (m0, m1) = (joint.p_x2_label(x2, false), joint.p_x2_label(x2, true));
            if (m0 > 0.0) != (m1 > 0.0) {
                return Err(Error::Config(format!("x2 level {x2} has mass under only one label")));
            }
            for x1 in 0..x1_levels {
                let [a, b] = joint.mass[joint.index(x1, x2)];
                if (a > 0.0) != (b > 0.0) {
                    return Err(Error::Config(format!(
                        "support of x1 given x2={x2} differs across labels at x1={x1}"
                    )));
                }
            }
        }
        Ok(joint)
    }

    /// Assembles `p(λ=1)`, `p(x2 | λ)` and `p(x1 | x2, λ)` into a joint table.
    /// `p_x2[l][x2]` and `p_x1[l][x2][x1]` are indexed by label first.
    pub fn from_conditionals(p_label1: f64, p_x2: [&[f64]; 2], p_x1: [&[Vec<f64>]; 2]) -> Result<Self> {
        let x2_levels = p_x2[0].len();
        let x1_levels = p_x1[0].first().map_or(0, Vec::len);
        let mut mass = vec![[0.0; 2]; x1_levels * x2_levels];
        for l in 0..2 {
            let pl = if l == 1 { p_label1 } else { 1.0 - p_label1 };
            for x2 in 0..x2_levels {
                for x1 in 0..x1_levels {
                    mass[x2 * x1_levels + x1][l] = pl * p_x2[l][x2] * p_x1[l][x2][x1];
                }
            }
        }
        Self::new(x1_levels, x2_levels, mass)
    }

    fn index(&self, x1: usize, x2: usize) -> usize {
        x2 * self.x1_levels + x1
    }

    pub fn x1_levels(&self) -> usize {
        self.x1_levels
    }
    pub fn x2_levels(&self) -> usize {
        self.x2_levels
    }

    pub fn mass(&self, x1: usize, x2: usize, label: bool) -> f64 {
        self.mass[self.index(x1, x2)][usize::from(label)]
    }

    pub fn p_label(&self, label: bool) -> f64 {
        self.mass.iter().map(|m| m[usize::from(label)]).sum()
    }

    fn p_x2_label(&self, x2: usize, label: bool) -> f64 {
        (0..self.x1_levels).map(|x1| self.mass(x1, x2, label)).sum()
    }

    /// `p(x1 | x2, λ)`.
    pub fn conditional(&self, x1: usize, x2: usize, label: bool) -> f64 {
        let denom = self.p_x2_label(x2, label);
        if denom > 0.0 {
            self.mass(x1, x2, label) / denom
        } else {
            0.0
        }
    }

    /// `p(λ=1 | x1, x2)`, or `None` off the support.
    pub fn posterior_joint(&self, x1: usize, x2: usize) -> Option<f64> {
        let [a, b] = self.mass[self.index(x1, x2)];
        (a + b > 0.0).then(|| b / (a + b))
    }

    /// `p(λ=1 | x2)`, or `None` if x2 carries no mass.
    pub fn posterior_covariate(&self, x2: usize) -> Option<f64> {
        let (a, b) = (self.p_x2_label(x2, false), self.p_x2_label(x2, true));
        (a + b > 0.0).then(|| b / (a + b))
    }

    /// Points carrying positive mass.
    pub fn support(&self) -> Vec<(usize, usize)> {
        (0..self.x2_levels)
            .flat_map(|x2| (0..self.x1_levels).map(move |x1| (x1, x2)))
            .filter(|&(x1, x2)| self.mass(x1, x2, false) + self.mass(x1, x2, true) > 0.0)
            .collect()
    }

    /// The true conditional ratio `p(x1 | x2, λ=1) / p(x1 | x2, λ=0)`.
    pub fn psi0(&self, x1: usize, x2: usize) -> f64 {
        self.conditional(x1, x2, true) / self.conditional(x1, x2, false)
    }

    pub fn psi0_table(&self) -> RatioTable {
        self.support().into_iter().map(|(x1, x2)| ((x1, x2), self.psi0(x1, x2))).collect()
    }

    /// Population risk `E_0 L(O, ψ)` by enumeration.
    pub fn risk(&self, psi: &RatioTable, policy: &TruncationPolicy) -> Result<f64> {
        let mut terms = Vec::new();
        for (x1, x2) in self.support() {
            let v = *psi.get(&(x1, x2)).ok_or(Error::IncompleteTable((x1, x2)))?;
            terms.push(self.mass(x1, x2, true) * dr_loss(true, v, policy)?);
            terms.push(self.mass(x1, x2, false) * dr_loss(false, v, policy)?);
        }
        Ok(pairwise_sum(&terms))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskGap {
    /// `E_0 L(O, ψ) − E_0 L(O, ψ0)`.
    pub gap: f64,
    /// `p(λ=1)·E[KL₁] + p(λ=0)·E[KL₀]`.
    pub kl_decomposition: f64,
    /// The numerator-population term `p(λ=1)·E_{x2|λ=1} Σ p1 log(p1 / (p0·ψ))`.
    pub numerator_term: f64,
    /// The denominator-population term `p(λ=0)·E_{x2|λ=0} Σ p0 log(p0·ψ / p1)`.
    pub denominator_term: f64,
}

/// Exact risk gap of `psi` against the true ratio, together with its
/// decomposition into label-weighted expected divergences
/// `Σ p(x1|x2,λ=1) log(p(x1|x2,λ=1) / (p(x1|x2,λ=0)ψ))` and
/// `Σ p(x1|x2,λ=0) log(p(x1|x2,λ=0)ψ / p(x1|x2,λ=1))`.
///
/// Both sums are genuine Kullback–Leibler divergences when `p(·|x2,λ=0)·ψ` and
/// `p(·|x2,λ=1)/ψ` are probability mass functions for every `x2`; for other
/// tables they are divergences against unnormalized measures and may be
/// negative. The two returned quantities agree exactly whenever `ψ0` lies
/// inside the truncation bounds. `psi` is clamped by `policy` first.
pub fn discrete_risk_gap(joint: &DiscreteJoint, psi: &RatioTable, policy: &TruncationPolicy) -> Result<RiskGap> {
    let support = joint.support();
    for &(x1, x2) in &support {
        let v = *psi.get(&(x1, x2)).ok_or(Error::IncompleteTable((x1, x2)))?;
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::InvalidPrediction(v));
        }
    }
    let gap = joint.risk(psi, policy)? - joint.risk(&joint.psi0_table(), policy)?;

    let (mut num_terms, mut den_terms) = (Vec::new(), Vec::new());
    for &(x1, x2) in &support {
        let v = policy.clamp(psi[&(x1, x2)]);
        let p1 = joint.conditional(x1, x2, true);
        let p0 = joint.conditional(x1, x2, false);
        // p(λ)·p(x2|λ)·p(x1|x2,λ) is the joint mass of the cell
        num_terms.push(joint.mass(x1, x2, true) * (p1 / (p0 * v)).ln());
        den_terms.push(joint.mass(x1, x2, false) * (p0 * v / p1).ln());
    }
    let numerator_term = pairwise_sum(&num_terms);
    let denominator_term = pairwise_sum(&den_terms);
    Ok(RiskGap {
        gap,
        kl_decomposition: numerator_term + denominator_term,
        numerator_term,
        denominator_term,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FittedRatio;
    use proptest::prelude::*;
    use std::f64::consts::E;

    fn bern_joint() -> DiscreteJoint {
        // x1 binary, a single x2 level, p(x1=1|λ=1)=0.8, p(x1=1|λ=0)=0.5
        DiscreteJoint::from_conditionals(
            0.5,
            [&[1.0], &[1.0]],
            [&[vec![0.5, 0.5]], &[vec![0.2, 0.8]]],
        )
        .unwrap()
    }

    fn kl_bern(p: f64, q: f64) -> f64 {
        p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
    }

    #[test]
    fn loss_worked_values() {
        let pol = TruncationPolicy::default();
        assert!((dr_loss(true, E, &pol).unwrap() + 1.0).abs() < 1e-15);
        assert!((dr_loss(false, E, &pol).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(dr_loss(true, 1.0, &pol).unwrap(), 0.0);
        assert_eq!(dr_loss(false, 1.0, &pol).unwrap(), 0.0);
    }

    #[test]
    fn loss_rejects_bad_predictions() {
        let pol = TruncationPolicy::default();
        for bad in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(dr_loss(true, bad, &pol), Err(Error::InvalidPrediction(_))));
        }
    }

    #[test]
    fn policy_validates_epsilon() {
        assert!(TruncationPolicy::new(0.0).is_err());
        assert!(TruncationPolicy::new(1.0).is_err());
        assert!(TruncationPolicy::new(0.01).is_ok());
    }

    proptest! {
        #[test]
        fn loss_sign_structure_and_bound(psi in 1e-9f64..1e9) {
            let pol = TruncationPolicy::default();
            let a = dr_loss(true, psi, &pol).unwrap();
            let b = dr_loss(false, psi, &pol).unwrap();
            prop_assert_eq!(a, -b);
            prop_assert!(a.abs() <= pol.loss_bound() + 1e-12);
        }
    }

    #[test]
    fn empirical_risk_arithmetic() {
        let pol = TruncationPolicy::default();
        let r = risk_of_predictions(&[true, false, true], &[2.0, 0.5, 1.0], &pol).unwrap();
        let expected = (-(2.0f64).ln() + (0.5f64).ln()) / 3.0;
        assert!((r - expected).abs() < 1e-15);
        assert!((r + 0.4621).abs() < 1e-4);
    }

    #[test]
    fn constant_one_model_has_zero_risk() {
        let d = LabeledDataset::from_rows(
            &[vec![0.1], vec![0.2], vec![0.3]],
            &[vec![1.0], vec![2.0], vec![3.0]],
            &[true, false, false],
        )
        .unwrap();
        let model = FittedRatio::constant(1.0, TruncationPolicy::default());
        assert_eq!(empirical_risk(&d, &model, &TruncationPolicy::default()).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn balanced_risk_is_scale_invariant(
            preds in proptest::collection::vec(0.5f64..2.0, 20),
            log_c in (2e-3f64).ln()..(500.0f64).ln(),
        ) {
            let pol = TruncationPolicy::default();
            let labels: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
            let c = log_c.exp();
            let base = risk_of_predictions(&labels, &preds, &pol).unwrap();
            // predictions in [0.5, 2] keep c·ψ inside [ε, 1/ε] for c in [2ε, 1/(2ε)]
            let scaled: Vec<f64> = preds.iter().map(|p| p * c).collect();
            let r = risk_of_predictions(&labels, &scaled, &pol).unwrap();
            prop_assert!((r - base).abs() < 1e-12);
        }
    }

    #[test]
    fn unbalanced_rescaling_identity() {
        let pol = TruncationPolicy::default();
        let labels = [true, true, true, false];
        let preds = [0.5, 2.0, 1.5, 3.0];
        let c = 4.0f64;
        let scaled: Vec<f64> = preds.iter().map(|p| p * c).collect();
        let lhs = risk_of_predictions(&labels, &scaled, &pol).unwrap();
        let rhs = risk_of_predictions(&labels, &preds, &pol).unwrap() + ((1.0 - 3.0) / 4.0) * c.ln();
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn gap_zero_at_truth() {
        let j = bern_joint();
        let g = discrete_risk_gap(&j, &j.psi0_table(), &TruncationPolicy::default()).unwrap();
        assert!(g.gap.abs() < 1e-12 && g.kl_decomposition.abs() < 1e-12);
    }

    #[test]
    fn gap_worked_value_for_constant_one() {
        let j = bern_joint();
        let ones: RatioTable = j.support().into_iter().map(|k| (k, 1.0)).collect();
        let g = discrete_risk_gap(&j, &ones, &TruncationPolicy::default()).unwrap();
        let expected = 0.5 * kl_bern(0.8, 0.5) + 0.5 * kl_bern(0.5, 0.8);
        assert!((g.gap - expected).abs() < 1e-12, "{} vs {expected}", g.gap);
        assert!((g.kl_decomposition - expected).abs() < 1e-12);
        assert!((expected - 0.2079).abs() < 1e-4);
    }

    #[test]
    fn gap_requires_complete_table() {
        let j = bern_joint();
        let mut t = j.psi0_table();
        t.remove(&(1, 0));
        assert!(matches!(
            discrete_risk_gap(&j, &t, &TruncationPolicy::default()),
            Err(Error::IncompleteTable((1, 0)))
        ));
    }

    #[test]
    fn joint_rejects_mismatched_support() {
        let r = DiscreteJoint::new(2, 1, vec![[0.5, 0.0], [0.0, 0.5]]);
        assert!(r.is_err());
    }

    proptest! {
        // The identity between the gap and its decomposition holds for every
        // positive table, normalized or not.
        #[test]
        fn gap_equals_decomposition(logs in proptest::collection::vec(-2.0f64..2.0, 2)) {
            let j = bern_joint();
            let psi: RatioTable = j.support().into_iter().zip(&logs).map(|(k, l)| (k, l.exp())).collect();
            let g = discrete_risk_gap(&j, &psi, &TruncationPolicy::default()).unwrap();
            prop_assert!((g.gap - g.kl_decomposition).abs() < 1e-12);
        }
    }

    #[test]
    fn unnormalized_table_can_beat_the_truth() {
        // the risk is linear in log ψ, so moving ψ(x1=1) above ψ0 lowers it
        let j = bern_joint();
        let mut psi = j.psi0_table();
        psi.insert((1, 0), 10.0);
        let g = discrete_risk_gap(&j, &psi, &TruncationPolicy::default()).unwrap();
        assert!(g.gap < 0.0);
        assert!((g.gap - g.kl_decomposition).abs() < 1e-12);
    }
}
