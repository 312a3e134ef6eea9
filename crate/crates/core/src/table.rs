//! Science and observed 2×2 tables, finite-population moments and estimands.
//!
//! A science table cross-classifies the joint potential outcomes
//! `(Y(1), Y(0))` of every unit; an observed table cross-classifies the
//! realized treatment arm against the realized outcome. All count arithmetic
//! is integer arithmetic, and real-valued quantities are formed from integer
//! numerators and denominators in a single final division.
//!
//! ```
//! use pottab::table::ScienceTable;
//!
//! let science = ScienceTable::new(40, 110, 10, 40).unwrap();
//! // Copas's "differential effect" is (N10 + N01) / N.
//! let beta = (science.n10 + science.n01) as f64 / science.total() as f64;
//! assert!((beta - 0.6).abs() < 1e-15);
//! assert!((science.estimands().crd - 0.5).abs() < 1e-15);
//! ```

use std::fmt;
use std::io::Read;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Deserialize)]
struct RawCounts {
    n11: u64,
    n10: u64,
    n01: u64,
    n00: u64,
}

/// Counts of units by joint potential outcome: `n11` have `Y(1)=1, Y(0)=1`,
/// `n10` have `Y(1)=1, Y(0)=0`, `n01` have `Y(1)=0, Y(0)=1`, and `n00` have
/// both outcomes equal to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawCounts")]
pub struct ScienceTable {
    pub n11: u64,
    pub n10: u64,
    pub n01: u64,
    pub n00: u64,
}

/// Observed counts: `n11` treated successes, `n10` treated failures,
/// `n01` control successes, `n00` control failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawCounts")]
pub struct ObservedTable {
    pub n11: u64,
    pub n10: u64,
    pub n01: u64,
    pub n00: u64,
}

impl TryFrom<RawCounts> for ScienceTable {
    type Error = Error;
    fn try_from(r: RawCounts) -> Result<Self> {
        ScienceTable::new(r.n11, r.n10, r.n01, r.n00)
    }
}

impl TryFrom<RawCounts> for ObservedTable {
    type Error = Error;
    fn try_from(r: RawCounts) -> Result<Self> {
        ObservedTable::new(r.n11, r.n10, r.n01, r.n00)
    }
}

/// Finite-population means, variances and covariance of the potential outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinitePopMoments {
    pub p1: f64,
    pub p0: f64,
    pub s1sq: f64,
    pub s0sq: f64,
    pub s10: f64,
    /// Variance of the unit-level effects, from the direct count formula.
    pub stausq: f64,
}

impl FinitePopMoments {
    /// `S1² + S0² − 2·S10`, which must agree with `stausq`.
    pub fn stausq_decomposed(&self) -> f64 {
        self.s1sq + self.s0sq - 2.0 * self.s10
    }
}

/// The same moments as exact rationals.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactMoments {
    pub p1: BigRational,
    pub p0: BigRational,
    pub s1sq: BigRational,
    pub s0sq: BigRational,
    pub s10: BigRational,
    pub stausq: BigRational,
}

/// Causal risk difference, log causal risk ratio and log causal odds ratio.
///
/// The log measures are `±inf` or `NaN` when a margin is empty; callers check
/// [`f64::is_finite`] rather than receiving an error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimandSet {
    pub crd: f64,
    pub log_crr: f64,
    pub log_cor: f64,
}

impl EstimandSet {
    pub fn get(&self, measure: crate::Measure) -> f64 {
        match measure {
            crate::Measure::Crd => self.crd,
            crate::Measure::LogCrr => self.log_crr,
            crate::Measure::LogCor => self.log_cor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    /// `Y(1) ≥ Y(0)` for every unit (`N01 = 0`).
    Increasing,
    /// `Y(1) ≤ Y(0)` for every unit (`N10 = 0`).
    Decreasing,
    /// Both hold, so every unit-level effect is zero.
    Both,
    Neither,
}

impl Monotonicity {
    pub fn is_monotone(self) -> bool {
        self != Monotonicity::Neither
    }
}

pub(crate) fn log_ratio(num: f64, den: f64) -> f64 {
    num.ln() - den.ln()
}

pub(crate) fn logit_counts(successes: f64, failures: f64) -> f64 {
    successes.ln() - failures.ln()
}

impl ScienceTable {
    pub fn new(n11: u64, n10: u64, n01: u64, n00: u64) -> Result<Self> {
        let total = n11 + n10 + n01 + n00;
        if total < 2 {
            return Err(Error::DegeneratePopulation(total));
        }
        Ok(ScienceTable { n11, n10, n01, n00 })
    }

    pub fn total(&self) -> u64 {
        self.n11 + self.n10 + self.n01 + self.n00
    }

    /// Units with `Y(1) = 1`.
    pub fn treated_successes(&self) -> u64 {
        self.n11 + self.n10
    }

    /// Units with `Y(0) = 1`.
    pub fn control_successes(&self) -> u64 {
        self.n11 + self.n01
    }

    pub fn cells(&self) -> [u64; 4] {
        [self.n11, self.n10, self.n01, self.n00]
    }

    /// Exchange the roles of `Y(1)` and `Y(0)`.
    pub fn swap_arms(&self) -> ScienceTable {
        ScienceTable { n11: self.n11, n10: self.n01, n01: self.n10, n00: self.n00 }
    }

    /// Scale every cell by `k`.
    pub fn scaled(&self, k: u64) -> ScienceTable {
        ScienceTable {
            n11: self.n11 * k,
            n10: self.n10 * k,
            n01: self.n01 * k,
            n00: self.n00 * k,
        }
    }

    /// `N·(N−1)·S²τ`, an integer.
    pub fn stausq_numerator(&self) -> u128 {
        let (n11, n10, n01, n00) =
            (self.n11 as u128, self.n10 as u128, self.n01 as u128, self.n00 as u128);
        (n10 + n01) * (n11 + n00) + 4 * n10 * n01
    }

    /// `N·(N−1)·S10`, an integer.
    pub fn s10_numerator(&self) -> i128 {
        self.n11 as i128 * self.n00 as i128 - self.n10 as i128 * self.n01 as i128
    }

    pub fn moments(&self) -> FinitePopMoments {
        let n = self.total() as f64;
        let pair = n * (n - 1.0);
        let t = self.treated_successes();
        let c = self.control_successes();
        let total = self.total();
        FinitePopMoments {
            p1: t as f64 / n,
            p0: c as f64 / n,
            s1sq: (t as u128 * (total - t) as u128) as f64 / pair,
            s0sq: (c as u128 * (total - c) as u128) as f64 / pair,
            s10: self.s10_numerator() as f64 / pair,
            stausq: self.stausq_numerator() as f64 / pair,
        }
    }

    pub fn exact_moments(&self) -> ExactMoments {
        let total = self.total();
        let n = BigInt::from(total);
        let pair = BigInt::from(total * (total - 1));
        let t = self.treated_successes();
        let c = self.control_successes();
        let r = |num: BigInt, den: &BigInt| BigRational::new(num, den.clone());
        ExactMoments {
            p1: r(t.into(), &n),
            p0: r(c.into(), &n),
            s1sq: r(BigInt::from(t) * BigInt::from(total - t), &pair),
            s0sq: r(BigInt::from(c) * BigInt::from(total - c), &pair),
            s10: r(self.s10_numerator().into(), &pair),
            stausq: r(self.stausq_numerator().into(), &pair),
        }
    }

    /// `N·τ = N10 − N01`.
    pub fn tau_numerator(&self) -> i64 {
        self.n10 as i64 - self.n01 as i64
    }

    pub fn estimands(&self) -> EstimandSet {
        let n = self.total() as f64;
        let t = self.treated_successes() as f64;
        let c = self.control_successes() as f64;
        EstimandSet {
            crd: self.tau_numerator() as f64 / n,
            log_crr: log_ratio(t, c),
            log_cor: logit_counts(t, n - t) - logit_counts(c, n - c),
        }
    }

    pub fn monotonicity(&self) -> Monotonicity {
        match (self.n01 == 0, self.n10 == 0) {
            (true, true) => Monotonicity::Both,
            (true, false) => Monotonicity::Increasing,
            (false, true) => Monotonicity::Decreasing,
            (false, false) => Monotonicity::Neither,
        }
    }
}

/// Free-function form of [`ScienceTable::moments`].
pub fn moments(science: &ScienceTable) -> FinitePopMoments {
    science.moments()
}

/// Free-function form of [`ScienceTable::estimands`].
pub fn estimands(science: &ScienceTable) -> EstimandSet {
    science.estimands()
}

/// Free-function form of [`ScienceTable::monotonicity`].
pub fn is_monotone(science: &ScienceTable) -> Monotonicity {
    science.monotonicity()
}

/// Sharp lower bound on `S²τ` given the risk difference and population size.
///
/// This is the bound `S²τ/N ≥ |τ|(1−|τ|)/(N−1)` multiplied back through by
/// `N`, so the result is directly comparable with
/// [`FinitePopMoments::stausq`]. It is attained exactly by the monotone
/// science tables.
pub fn sharp_stausq_lower_bound(tau: f64, n: u64) -> Result<f64> {
    if n < 2 {
        return Err(Error::DegeneratePopulation(n));
    }
    if !(-1.0..=1.0).contains(&tau) {
        return Err(Error::TauOutOfRange(tau));
    }
    let a = tau.abs();
    let n = n as f64;
    Ok(n * a * (1.0 - a) / (n - 1.0))
}

impl ObservedTable {
    pub fn new(n11: u64, n10: u64, n01: u64, n00: u64) -> Result<Self> {
        let (n1, n0) = (n11 + n10, n01 + n00);
        if n1 == 0 || n0 == 0 {
            return Err(Error::EmptyArm { n1, n0 });
        }
        Ok(ObservedTable { n11, n10, n01, n00 })
    }

    /// Units assigned to treatment.
    pub fn n_treated(&self) -> u64 {
        self.n11 + self.n10
    }

    /// Units assigned to control.
    pub fn n_control(&self) -> u64 {
        self.n01 + self.n00
    }

    pub fn total(&self) -> u64 {
        self.n_treated() + self.n_control()
    }

    /// `n+1`, observed successes in either arm.
    pub fn successes(&self) -> u64 {
        self.n11 + self.n01
    }

    /// `n+0`, observed failures in either arm.
    pub fn failures(&self) -> u64 {
        self.n10 + self.n00
    }

    pub fn cells(&self) -> [u64; 4] {
        [self.n11, self.n10, self.n01, self.n00]
    }

    pub fn p1_hat(&self) -> f64 {
        self.n11 as f64 / self.n_treated() as f64
    }

    pub fn p0_hat(&self) -> f64 {
        self.n01 as f64 / self.n_control() as f64
    }

    pub fn tau_hat(&self) -> f64 {
        self.p1_hat() - self.p0_hat()
    }

    /// `N1·N0·τ̂ = n11·N0 − n01·N1`, the risk difference numerator as an integer.
    pub fn tau_hat_numerator(&self) -> i128 {
        self.n11 as i128 * self.n_control() as i128 - self.n01 as i128 * self.n_treated() as i128
    }

    pub fn tau_hat_exact(&self) -> BigRational {
        BigRational::new(
            self.tau_hat_numerator().into(),
            BigInt::from(self.n_treated() * self.n_control()),
        )
    }

    /// Swap the roles of treatment and outcome: the transposed table has the
    /// successes as its "treated" row.
    pub fn transposed(&self) -> Result<ObservedTable> {
        ObservedTable::new(self.n11, self.n01, self.n10, self.n00)
    }
}

/// Parse four comma-separated counts without building a table.
pub fn parse_counts(input: &str) -> Result<[u64; 4]> {
    let fields: Vec<&str> = input.trim().split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(Error::Parse {
            input: input.to_string(),
            reason: format!("expected 4 comma-separated counts, found {}", fields.len()),
        });
    }
    let mut out = [0u64; 4];
    for (slot, field) in out.iter_mut().zip(&fields) {
        *slot = field.parse().map_err(|e| Error::Parse {
            input: input.to_string(),
            reason: format!("'{field}': {e}"),
        })?;
    }
    Ok(out)
}

impl FromStr for ScienceTable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let [a, b, c, d] = parse_counts(s)?;
        ScienceTable::new(a, b, c, d)
    }
}

impl FromStr for ObservedTable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let [a, b, c, d] = parse_counts(s)?;
        ObservedTable::new(a, b, c, d)
    }
}

impl fmt::Display for ScienceTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.n11, self.n10, self.n01, self.n00)
    }
}

impl fmt::Display for ObservedTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.n11, self.n10, self.n01, self.n00)
    }
}

/// Read `n11,n10,n01,n00` rows from CSV. A leading header row of names is skipped.
pub fn read_count_rows<R: Read>(reader: R) -> Result<Vec<[u64; 4]>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            input: format!("row {}", i + 1),
            reason: e.to_string(),
        })?;
        let is_header =
            i == 0 && record.iter().all(|f| f.starts_with(|c: char| c.is_ascii_alphabetic()));
        let line = record.iter().collect::<Vec<_>>().join(",");
        if is_header || line.is_empty() {
            continue;
        }
        rows.push(parse_counts(&line)?);
    }
    Ok(rows)
}
