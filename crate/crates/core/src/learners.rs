//! Ratio learner specifications and libraries.

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classify::{default_classifier_library, default_stacked_classifier, odds_ratio_augmented, odds_ratio_mediation, ClassifierSpec};
use crate::data::{partition_by_label, LabeledDataset};
use crate::error::{Error, Result};
use crate::kernel::{fit_kliep, fit_rulsif, KernelRatioModel, KliepConfig, RulsifConfig};
use crate::loss::TruncationPolicy;
use crate::model::{conditional_from_marginals, FittedRatio, InputColumns, RatioLearner};
use crate::rng::SeedSpec;
use crate::scenarios::Scenario;

/// How a kernel learner turns marginal ratios into the target ratio.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioStructure {
    /// Ratio over `[x1 | x2]` divided by the ratio over `x2`.
    #[default]
    Conditional,
    /// Ratio over `[x1 | x2]` only; right for augmented data, where `x2` has
    /// the same law under both labels.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    Kliep {
        #[serde(default)]
        config: KliepConfig,
        #[serde(default)]
        structure: RatioStructure,
    },
    Rulsif {
        #[serde(default)]
        config: RulsifConfig,
        #[serde(default)]
        structure: RatioStructure,
    },
    /// Odds of `p(λ=1 | x1, x2)` over odds of `p(λ=1 | x2)`.
    OddsConditional {
        classifier_joint: ClassifierSpec,
        classifier_covariate: ClassifierSpec,
    },
    /// Odds of `p(λ=1 | x1, x2)`.
    OddsAugmented {
        classifier: ClassifierSpec,
    },
    Constant {
        value: f64,
    },
    MediationOracle,
    LmtpOracle {
        t: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedLearnerSpec {
    pub name: String,
    #[serde(flatten)]
    pub spec: LearnerSpec,
}

impl NamedLearnerSpec {
    pub fn new(name: &str, spec: LearnerSpec) -> Self {
        Self { name: name.into(), spec }
    }
}

enum KernelMethod<'a> {
    Kliep(&'a KliepConfig),
    Rulsif(&'a RulsifConfig),
}

fn kernel_marginal(
    method: &KernelMethod<'_>,
    num: &nalgebra::DMatrix<f64>,
    den: &nalgebra::DMatrix<f64>,
    policy: TruncationPolicy,
    seed: &SeedSpec,
) -> Result<KernelRatioModel> {
    match method {
        KernelMethod::Kliep(c) => fit_kliep(num, den, c, policy, seed),
        KernelMethod::Rulsif(c) => fit_rulsif(num, den, c, policy, seed),
    }
}

fn fit_kernel(
    method: KernelMethod<'_>,
    structure: RatioStructure,
    data: &LabeledDataset,
    policy: TruncationPolicy,
    seed: &SeedSpec,
) -> Result<FittedRatio> {
    let (num, den) = partition_by_label(data)?;
    let joint = FittedRatio::Kernel {
        inputs: InputColumns::Joint,
        model: kernel_marginal(&method, &num.features(), &den.features(), policy, &seed.named("joint"))?,
    };
    if structure == RatioStructure::Joint || data.d2() == 0 {
        return Ok(joint);
    }
    let covariate = FittedRatio::Kernel {
        inputs: InputColumns::Covariates,
        model: kernel_marginal(&method, num.x2(), den.x2(), policy, &seed.named("covariate"))?,
    };
    Ok(conditional_from_marginals(joint, covariate, policy))
}

impl LearnerSpec {
    pub fn fit(&self, data: &LabeledDataset, policy: TruncationPolicy, seed: &SeedSpec) -> Result<FittedRatio> {
        match self {
            LearnerSpec::Kliep { config, structure } => fit_kernel(KernelMethod::Kliep(config), *structure, data, policy, seed),
            LearnerSpec::Rulsif { config, structure } => fit_kernel(KernelMethod::Rulsif(config), *structure, data, policy, seed),
            LearnerSpec::OddsConditional { classifier_joint, classifier_covariate } => {
                let joint = classifier_joint.fit(&data.features(), data.labels(), &seed.named("joint"))?;
                let covariate = classifier_covariate.fit(data.x2(), data.labels(), &seed.named("covariate"))?;
                Ok(FittedRatio::Odds(odds_ratio_mediation(joint, covariate, policy)))
            }
            LearnerSpec::OddsAugmented { classifier } => {
                let c = classifier.fit(&data.features(), data.labels(), seed)?;
                Ok(FittedRatio::Odds(odds_ratio_augmented(c, policy)))
            }
            LearnerSpec::Constant { value } => {
                if !(value.is_finite() && *value > 0.0) {
                    return Err(Error::Config(format!("constant ratio must be positive, got {value}")));
                }
                Ok(FittedRatio::constant(*value, policy))
            }
            LearnerSpec::MediationOracle => Ok(FittedRatio::MediationOracle { policy }),
            LearnerSpec::LmtpOracle { t } => Ok(FittedRatio::LmtpOracle { t: *t, policy }),
        }
    }
}

/// A library entry: a named specification bound to a truncation policy.
#[derive(Debug, Clone)]
pub struct NamedLearner {
    pub name: String,
    pub spec: LearnerSpec,
    pub policy: TruncationPolicy,
}

impl RatioLearner for NamedLearner {
    fn name(&self) -> &str {
        &self.name
    }

    fn fit(&self, data: &LabeledDataset, seed: &SeedSpec) -> Result<FittedRatio> {
        self.spec.fit(data, self.policy, seed)
    }
}

/// Ordered learners with unique names.
#[derive(Clone, Default)]
pub struct LearnerLibrary {
    entries: Vec<Arc<dyn RatioLearner>>,
}

impl std::fmt::Debug for LearnerLibrary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}

impl LearnerLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_specs(specs: &[NamedLearnerSpec], policy: TruncationPolicy) -> Result<Self> {
        let mut lib = Self::new();
        for s in specs {
            lib.push(NamedLearner { name: s.name.clone(), spec: s.spec.clone(), policy })?;
        }
        Ok(lib)
    }

    pub fn push(&mut self, learner: impl RatioLearner + 'static) -> Result<()> {
        self.push_shared(Arc::new(learner))
    }

    pub fn push_shared(&mut self, learner: Arc<dyn RatioLearner>) -> Result<()> {
        if self.entries.iter().any(|e| e.name() == learner.name()) {
            return Err(Error::Config(format!("duplicate learner name {:?}", learner.name())));
        }
        self.entries.push(learner);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name()).collect()
    }

    pub fn get(&self, k: usize) -> &dyn RatioLearner {
        self.entries[k].as_ref()
    }

    pub fn entries(&self) -> &[Arc<dyn RatioLearner>] {
        &self.entries
    }
}

pub fn check_unique(specs: &[NamedLearnerSpec]) -> Result<()> {
    let mut seen = HashSet::new();
    for s in specs {
        if !seen.insert(s.name.as_str()) {
            return Err(Error::Config(format!("duplicate learner name {:?}", s.name)));
        }
    }
    Ok(())
}

fn kernel_trio(structure: RatioStructure) -> Vec<NamedLearnerSpec> {
    vec![
        NamedLearnerSpec::new("kliep", LearnerSpec::Kliep { config: KliepConfig::default(), structure }),
        NamedLearnerSpec::new("rulsif_alpha0", LearnerSpec::Rulsif { config: RulsifConfig::default(), structure }),
        NamedLearnerSpec::new(
            "rulsif_alpha0.1",
            LearnerSpec::Rulsif { config: RulsifConfig { alpha: 0.1, ..RulsifConfig::default() }, structure },
        ),
    ]
}

/// Name of the classification-based baseline in experiment reports.
pub const CLASSIFICATION_BASELINE: &str = "classification_sl";

/// Three kernel learners plus one odds learner whose two probabilities come
/// from stacked classifiers; the odds learner doubles as the baseline.
pub fn mediation_library() -> Vec<NamedLearnerSpec> {
    let mut lib = kernel_trio(RatioStructure::Conditional);
    lib.push(NamedLearnerSpec::new(
        CLASSIFICATION_BASELINE,
        LearnerSpec::OddsConditional {
            classifier_joint: default_stacked_classifier(),
            classifier_covariate: default_stacked_classifier(),
        },
    ));
    lib
}

/// Three joint kernel learners plus one augmented-odds learner per built-in
/// classifier.
pub fn lmtp_library() -> Vec<NamedLearnerSpec> {
    let mut lib = kernel_trio(RatioStructure::Joint);
    for c in default_classifier_library() {
        lib.push(NamedLearnerSpec::new(&format!("odds_{}", c.name), LearnerSpec::OddsAugmented { classifier: c.spec }));
    }
    lib
}

/// Augmented-odds learner over the stacked classifier, fitted outside the
/// super learner as the longitudinal baseline.
pub fn lmtp_baseline() -> NamedLearnerSpec {
    NamedLearnerSpec::new(CLASSIFICATION_BASELINE, LearnerSpec::OddsAugmented { classifier: default_stacked_classifier() })
}

pub fn default_library(scenario: Scenario) -> Vec<NamedLearnerSpec> {
    match scenario {
        Scenario::Mediation => mediation_library(),
        Scenario::Lmtp => lmtp_library(),
    }
}
