//! Density-ratio super learning under a truncated log loss.
//!
//! A ratio `ψ(x1, x2) = p(x1 | x2, λ = 1) / p(x1 | x2, λ = 0)` is learned from
//! labelled rows by a library of kernel and classification learners, combined
//! through convex weights chosen by cross-validated risk.

// `!(x > 0.0)` style checks reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classify;
pub mod data;
pub mod error;
pub mod experiment;
pub mod features;
pub mod kernel;
pub mod learners;
pub mod loss;
pub mod model;
pub mod rng;
pub mod scenarios;
pub mod simplex;
pub mod special;
pub mod super_learner;

pub use classify::{ClassifierSpec, FittedClassifier, NamedClassifier, OddsRatioModel, ProbClassifier};
pub use data::{load_dataset, make_stratified_folds, read_dataset, save_dataset, write_dataset, ColumnSchema, FoldPlan, LabeledDataset};
pub use error::{Error, Result};
pub use experiment::{run_holdout_experiment, ExperimentConfig, ExperimentReport, RiskSummary};
pub use kernel::{fit_kliep, fit_rulsif, KernelRatioModel, KliepConfig, RulsifConfig};
pub use learners::{default_library, LearnerLibrary, LearnerSpec, NamedLearnerSpec, RatioStructure};
pub use loss::{cross_validated_risk, dr_loss, empirical_risk, TruncationPolicy};
pub use model::{FittedRatio, InputColumns, RatioLearner, RatioModel};
pub use rng::SeedSpec;
pub use scenarios::Scenario;
pub use simplex::{minimize_on_simplex, SimplexConfig};
pub use super_learner::{build_cv_matrix, fit_super_learner, predict_ensemble, SuperLearnerConfig, SuperLearnerFit};
