//! Ratio model and learner contracts.
//!
//! A [`RatioModel`] maps rows of `(x1, x2)` to positive ratio estimates. A
//! [`RatioLearner`] turns a labelled dataset into a fitted model. Built-in
//! models are variants of [`FittedRatio`], which serializes to JSON; models
//! supplied by callers ride along in [`FittedRatio::Custom`] and cannot be
//! serialized.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::classify::OddsRatioModel;
use crate::data::{hstack, LabeledDataset};
use crate::error::{Error, Result};
use crate::kernel::KernelRatioModel;
use crate::loss::TruncationPolicy;
use crate::rng::SeedSpec;
use crate::scenarios::{lmtp, mediation};

pub trait RatioModel: Send + Sync + fmt::Debug {
    /// One positive, finite prediction per row.
    fn predict(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<Vec<f64>>;
}

pub trait RatioLearner: Send + Sync {
    fn name(&self) -> &str;
    fn fit(&self, data: &LabeledDataset, seed: &SeedSpec) -> Result<FittedRatio>;
}

/// Which columns a marginal kernel model reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputColumns {
    /// `[x1 | x2]`
    Joint,
    /// `x2` only
    Covariates,
}

impl InputColumns {
    pub fn select(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            InputColumns::Joint => hstack(x1, x2),
            InputColumns::Covariates => x2.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedRatio {
    Constant {
        value: f64,
        policy: TruncationPolicy,
    },
    /// A marginal ratio over the selected columns.
    Kernel {
        inputs: InputColumns,
        model: KernelRatioModel,
    },
    /// `joint(x1, x2) / covariate(x2)`, the conditional ratio assembled from
    /// two marginal ratios.
    Conditional {
        joint: Box<FittedRatio>,
        covariate: Box<FittedRatio>,
        policy: TruncationPolicy,
    },
    Odds(OddsRatioModel),
    /// Analytic ratio of the mediation scenario, `x1 = m`, `x2 = w`.
    MediationOracle {
        policy: TruncationPolicy,
    },
    /// Analytic ratio `r_t` of the longitudinal scenario, `x1 = a_t`,
    /// `x2 = (w1, a1, ..., w_t)`.
    LmtpOracle {
        t: usize,
        policy: TruncationPolicy,
    },
    #[serde(skip)]
    Custom(Arc<dyn RatioModel>),
}

impl FittedRatio {
    pub fn constant(value: f64, policy: TruncationPolicy) -> Self {
        FittedRatio::Constant { value, policy }
    }

    pub fn custom(model: impl RatioModel + 'static) -> Self {
        FittedRatio::Custom(Arc::new(model))
    }

    /// Fails for custom models, which have no serialized form.
    pub fn to_json(&self) -> Result<serde_json::Value> {
        if self.contains_custom() {
            return Err(Error::NotSerializable("model contains a caller-supplied component".into()));
        }
        Ok(serde_json::to_value(self)?)
    }

    pub(crate) fn contains_custom(&self) -> bool {
        match self {
            FittedRatio::Custom(_) => true,
            FittedRatio::Conditional { joint, covariate, .. } => {
                joint.contains_custom() || covariate.contains_custom()
            }
            FittedRatio::Odds(m) => m.contains_custom(),
            _ => false,
        }
    }
}

/// `ψ(x1, x2) = clamp(joint(x1, x2) / covariate(x2))`.
pub fn conditional_from_marginals(
    joint: FittedRatio,
    covariate: FittedRatio,
    policy: TruncationPolicy,
) -> FittedRatio {
    FittedRatio::Conditional {
        joint: Box::new(joint),
        covariate: Box::new(covariate),
        policy,
    }
}

fn check_rows(x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<()> {
    if x1.nrows() != x2.nrows() {
        return Err(Error::InvalidData(format!("x1 has {} rows, x2 has {}", x1.nrows(), x2.nrows())));
    }
    Ok(())
}

fn validated(values: Vec<f64>) -> Result<Vec<f64>> {
    match values.iter().find(|v| !v.is_finite() || **v <= 0.0) {
        Some(&bad) => Err(Error::InvalidPrediction(bad)),
        None => Ok(values),
    }
}

impl RatioModel for FittedRatio {
    fn predict(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_rows(x1, x2)?;
        match self {
            FittedRatio::Constant { value, policy } => {
                if !value.is_finite() || *value <= 0.0 {
                    return Err(Error::InvalidPrediction(*value));
                }
                Ok(vec![policy.clamp(*value); x1.nrows()])
            }
            FittedRatio::Kernel { inputs, model } => model.predict_ratio(&inputs.select(x1, x2)),
            FittedRatio::Conditional { joint, covariate, policy } => {
                let top = joint.predict(x1, x2)?;
                let bottom = covariate.predict(x1, x2)?;
                Ok(top.iter().zip(&bottom).map(|(a, b)| policy.clamp(a / b)).collect())
            }
            FittedRatio::Odds(m) => m.predict(x1, x2),
            FittedRatio::MediationOracle { policy } => {
                if x1.ncols() != 1 || x2.ncols() != 1 {
                    return Err(Error::DimensionMismatch { expected: 2, got: x1.ncols() + x2.ncols() });
                }
                (0..x1.nrows())
                    .map(|i| mediation::true_ratio(x1[(i, 0)], x2[(i, 0)]).map(|r| policy.clamp(r)))
                    .collect()
            }
            FittedRatio::LmtpOracle { t, policy } => {
                let expected = lmtp::history_len(*t);
                if x1.ncols() != 1 || x2.ncols() != expected {
                    return Err(Error::DimensionMismatch { expected: 1 + expected, got: x1.ncols() + x2.ncols() });
                }
                (0..x1.nrows())
                    .map(|i| {
                        let h: Vec<f64> = x2.row(i).iter().copied().collect();
                        let r = lmtp::true_ratio_from_row(*t, x1[(i, 0)], &h)?;
                        Ok(policy.clamp(r))
                    })
                    .collect()
            }
            FittedRatio::Custom(m) => validated(m.predict(x1, x2)?),
        }
    }
}
