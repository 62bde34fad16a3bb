//! Simulation scenarios: a mediation setting with a continuous mediator and a
//! four-period longitudinal shift policy.

pub mod lmtp;
pub mod mediation;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Mediation,
    Lmtp,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Mediation => "mediation",
            Scenario::Lmtp => "lmtp",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> crate::error::Result<Self> {
        match s {
            "mediation" => Ok(Scenario::Mediation),
            "lmtp" => Ok(Scenario::Lmtp),
            other => Err(crate::error::Error::Config(format!("unknown scenario {other:?}"))),
        }
    }
}
