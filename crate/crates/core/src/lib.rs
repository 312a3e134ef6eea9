//! Causal inference for 2×2 tables from completely randomized experiments.
//!
//! The crate works with two kinds of tables. A [`ScienceTable`] counts units
//! by their pair of potential outcomes and is the fixed truth of a finite
//! population; an [`ObservedTable`] is what one randomization reveals. On top
//! of those it provides
//!
//! * the assignment mechanism with exact enumeration ([`randomization`]),
//! * the Fisher randomization test ([`fisher`]),
//! * Neymanian estimation of the risk difference with the sharp-bound
//!   variance improvement ([`neyman`]),
//! * asymptotic inference for the log risk ratio and log odds ratio
//!   ([`nonlinear`]),
//! * Bayesian imputation of the missing potential outcomes with a sensitivity
//!   parameter for their association ([`bayes`]),
//! * a repeated-sampling simulation harness ([`sim`]).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub mod bayes;
pub mod error;
pub mod fisher;
pub mod neyman;
pub mod nonlinear;
pub mod randomization;
pub mod sim;
pub mod table;

pub use error::{Error, Result};
pub use randomization::RngSeed;
pub use table::{ObservedTable, ScienceTable};

/// A finite-population causal measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    /// Causal risk difference `p1 − p0`.
    Crd,
    /// `log(p1) − log(p0)`.
    LogCrr,
    /// `logit(p1) − logit(p0)`.
    LogCor,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::Crd, Measure::LogCrr, Measure::LogCor];

    pub fn label(self) -> &'static str {
        match self {
            Measure::Crd => "crd",
            Measure::LogCrr => "log_crr",
            Measure::LogCor => "log_cor",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Measure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase().replace('-', "_");
        Measure::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown measure '{s}'")))
    }
}

/// An inference procedure compared in repeated sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Plug-in point estimate with the classical variance estimator.
    Neyman,
    /// Bias-corrected point estimate (nonlinear measures) with the
    /// sharp-bound variance improvement.
    ImprovedNeyman,
    /// Plug-in point estimate with independent-Binomial variances.
    Binomial,
    /// Posterior median and equal-tailed credible interval under
    /// independent potential outcomes.
    BayesIndependent,
}

impl Method {
    pub const ALL: [Method; 4] =
        [Method::Neyman, Method::ImprovedNeyman, Method::Binomial, Method::BayesIndependent];

    pub fn label(self) -> &'static str {
        match self {
            Method::Neyman => "neyman",
            Method::ImprovedNeyman => "improved_neyman",
            Method::Binomial => "binomial",
            Method::BayesIndependent => "bayes_independent",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}
