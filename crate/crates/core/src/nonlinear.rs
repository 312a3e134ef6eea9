//! Asymptotic randomization inference for the log causal risk ratio and the
//! log causal odds ratio.
//!
//! Both plug-in estimators are smooth functions of `(p̂1, p̂0)`, so their
//! randomization variance follows from a first-order expansion and the
//! covariance `cov(p̂1, p̂0) = −S10/N`. As with the risk difference, the
//! variance contains `S²τ`; the classical estimators set it to zero and the
//! improved estimators plug in the sharp lower bound. A second-order
//! expansion gives the bias corrections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neyman::{normal_interval, ConfidenceInterval};
use crate::table::ScienceTable;
use crate::{Measure, Method, ObservedTable};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonlinearOptions {
    /// Add 0.5 to every observed cell before estimating.
    pub haldane: bool,
    /// Use `N_w − 1` rather than `N_w` in the classical variance estimators.
    pub finite_sample_denominators: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearEstimate {
    pub measure: Measure,
    pub point: f64,
    pub point_bias_corrected: f64,
    pub v_neyman: f64,
    /// Improved estimator, clamped at zero.
    pub v_improved: f64,
    pub v_binomial: f64,
    /// False when a required cell is empty; the variance fields are then NaN.
    pub finite: bool,
    pub improved_clamped: bool,
}

impl NonlinearEstimate {
    /// Point estimate and variance the given method pairs together.
    pub fn point_and_variance(&self, method: Method) -> Option<(f64, f64)> {
        match method {
            Method::Neyman => Some((self.point, self.v_neyman)),
            Method::ImprovedNeyman => Some((self.point_bias_corrected, self.v_improved)),
            Method::Binomial => Some((self.point, self.v_binomial)),
            Method::BayesIndependent => None,
        }
    }

    /// Normal-approximation interval; `None` for non-finite estimates or the
    /// Bayesian method.
    pub fn interval(&self, method: Method, level: f64) -> Result<Option<ConfidenceInterval>> {
        if !self.finite {
            return Ok(None);
        }
        match self.point_and_variance(method) {
            Some((point, var)) => normal_interval(point, var, level, method.label(), None).map(Some),
            None => Ok(None),
        }
    }
}

/// Observed cells as reals, after the optional Haldane correction.
#[derive(Debug, Clone, Copy)]
struct Cells {
    n11: f64,
    n10: f64,
    n01: f64,
    n00: f64,
}

impl Cells {
    fn new(observed: &ObservedTable, haldane: bool) -> Result<Cells> {
        let (n1, n0) = (observed.n_treated(), observed.n_control());
        if n1 < 2 || n0 < 2 {
            return Err(Error::VarianceUndefined { n1, n0 });
        }
        let add = if haldane { 0.5 } else { 0.0 };
        Ok(Cells {
            n11: observed.n11 as f64 + add,
            n10: observed.n10 as f64 + add,
            n01: observed.n01 as f64 + add,
            n00: observed.n00 as f64 + add,
        })
    }

    fn n1(&self) -> f64 {
        self.n11 + self.n10
    }

    fn n0(&self) -> f64 {
        self.n01 + self.n00
    }

    fn n(&self) -> f64 {
        self.n1() + self.n0()
    }

    fn p1(&self) -> f64 {
        self.n11 / self.n1()
    }

    fn p0(&self) -> f64 {
        self.n01 / self.n0()
    }

    /// Sample variances `s1²`, `s0²`.
    fn sample_variances(&self) -> (f64, f64) {
        let (n1, n0) = (self.n1(), self.n0());
        let (p1, p0) = (self.p1(), self.p0());
        (n1 / (n1 - 1.0) * p1 * (1.0 - p1), n0 / (n0 - 1.0) * p0 * (1.0 - p0))
    }

    /// `|τ̂|(1 − |τ̂|)/(N − 1)`.
    fn bound_adjustment(&self) -> f64 {
        let a = (self.p1() - self.p0()).abs();
        a * (1.0 - a) / (self.n() - 1.0)
    }
}

fn finish(
    measure: Measure,
    finite: bool,
    point: f64,
    point_bias_corrected: f64,
    v_neyman: f64,
    adjustment: f64,
    v_binomial: f64,
) -> NonlinearEstimate {
    if !finite {
        return NonlinearEstimate {
            measure,
            point,
            point_bias_corrected: f64::NAN,
            v_neyman: f64::NAN,
            v_improved: f64::NAN,
            v_binomial: f64::NAN,
            finite,
            improved_clamped: false,
        };
    }
    let raw = v_neyman - adjustment;
    NonlinearEstimate {
        measure,
        point,
        point_bias_corrected,
        v_neyman,
        v_improved: raw.max(0.0),
        v_binomial,
        finite,
        improved_clamped: raw < 0.0,
    }
}

pub fn estimate_log_crr(observed: &ObservedTable, opts: NonlinearOptions) -> Result<NonlinearEstimate> {
    let c = Cells::new(observed, opts.haldane)?;
    let (n1, n0, n) = (c.n1(), c.n0(), c.n());
    let (p1, p0) = (c.p1(), c.p0());
    let (s1sq, s0sq) = c.sample_variances();
    let finite = c.n11 > 0.0 && c.n01 > 0.0;

    let point = p1.ln() - p0.ln();
    let bias_corrected =
        point + n0 / (2.0 * p1 * p1 * n1 * n) * s1sq - n1 / (2.0 * p0 * p0 * n0 * n) * s0sq;

    let (d1, d0) = if opts.finite_sample_denominators { (n1 - 1.0, n0 - 1.0) } else { (n1, n0) };
    let successes = c.n11 + c.n01;
    let v_neyman = c.n10 / (c.n11 * d1) * successes * n0 / (c.n01 * n)
        + c.n00 / (c.n01 * d0) * successes * n1 / (c.n11 * n);
    let adjustment = c.bound_adjustment() / (p1 * p0);
    let v_binomial = c.n10 / (c.n11 * n1) + c.n00 / (c.n01 * n0);

    Ok(finish(Measure::LogCrr, finite, point, bias_corrected, v_neyman, adjustment, v_binomial))
}

pub fn estimate_log_cor(observed: &ObservedTable, opts: NonlinearOptions) -> Result<NonlinearEstimate> {
    let c = Cells::new(observed, opts.haldane)?;
    let (n1, n0, n) = (c.n1(), c.n0(), c.n());
    let (p1, p0) = (c.p1(), c.p0());
    let (q1, q0) = (p1 * (1.0 - p1), p0 * (1.0 - p0));
    let (s1sq, s0sq) = c.sample_variances();
    let finite = c.n11 > 0.0 && c.n10 > 0.0 && c.n01 > 0.0 && c.n00 > 0.0;

    let point = (c.n11.ln() - c.n10.ln()) - (c.n01.ln() - c.n00.ln());
    let bias_corrected = point + (1.0 - 2.0 * p1) / (2.0 * q1 * q1) * n0 / (n1 * n) * s1sq
        - (1.0 - 2.0 * p0) / (2.0 * q0 * q0) * n1 / (n0 * n) * s0sq;

    let woolf = 1.0 / c.n11 + 1.0 / c.n10 + 1.0 / c.n01 + 1.0 / c.n00;
    let v_neyman = if opts.finite_sample_denominators {
        (n1 * q1 + n0 * q0) / (q1 * q0 * n) * (1.0 / (n1 - 1.0) + 1.0 / (n0 - 1.0))
    } else {
        woolf
    };
    let adjustment = c.bound_adjustment() / (q1 * q0);

    Ok(finish(Measure::LogCor, finite, point, bias_corrected, v_neyman, adjustment, woolf))
}

/// Dispatch on `measure`; the risk difference has no bias correction.
pub fn estimate_measure(
    observed: &ObservedTable,
    measure: Measure,
    opts: NonlinearOptions,
) -> Result<NonlinearEstimate> {
    match measure {
        Measure::LogCrr => estimate_log_crr(observed, opts),
        Measure::LogCor => estimate_log_cor(observed, opts),
        Measure::Crd => {
            let e = crate::neyman::estimate_crd(observed)?;
            Ok(NonlinearEstimate {
                measure,
                point: e.tau_hat,
                point_bias_corrected: e.tau_hat,
                v_neyman: e.v_neyman,
                v_improved: e.v_improved,
                v_binomial: e.v_binomial,
                finite: true,
                improved_clamped: e.improved_clamped,
            })
        }
    }
}

/// Randomization variance of the plug-in estimator under `n1` treated units:
/// exact for the risk difference, first-order asymptotic for the log measures.
pub fn asymptotic_variance_true(science: &ScienceTable, n1: u64, measure: Measure) -> Result<f64> {
    let total = science.total();
    if n1 == 0 || n1 >= total {
        return Err(Error::TreatedOutOfRange { got: n1, max: total - 1 });
    }
    let m = science.moments();
    let n = total as f64;
    let n1 = n1 as f64;
    let n0 = n - n1;
    let (p1, p0) = (m.p1, m.p0);
    let boundary = |what: &str| {
        Err(Error::InvalidArgument(format!("{what} undefined at p1 = {p1}, p0 = {p0}")))
    };
    match measure {
        Measure::Crd => Ok(m.s1sq / n1 + m.s0sq / n0 - m.stausq / n),
        Measure::LogCrr => {
            if p1 <= 0.0 || p0 <= 0.0 {
                return boundary("log risk ratio variance");
            }
            let w = n1 * p1 + n0 * p0;
            Ok(w / (n * p1 * p0) * (m.s1sq / (n1 * p1) + m.s0sq / (n0 * p0) - m.stausq / w))
        }
        Measure::LogCor => {
            if p1 <= 0.0 || p0 <= 0.0 || p1 >= 1.0 || p0 >= 1.0 {
                return boundary("log odds ratio variance");
            }
            let (q1, q0) = (p1 * (1.0 - p1), p0 * (1.0 - p0));
            let w = n1 * q1 + n0 * q0;
            Ok(w / (n * q1 * q0) * (m.s1sq / (n1 * q1) + m.s0sq / (n0 * q0) - m.stausq / w))
        }
    }
}
