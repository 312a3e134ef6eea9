//! Fisher randomization test of the sharp null of no effect for any unit.
//!
//! Under the sharp null every missing potential outcome is known, the
//! success column `n+1` is fixed by the science table, and `τ̂ = N n11/(N1 N0)
//! − n+1/N0` is an increasing function of `n11`. The randomization
//! distribution of the test statistic is therefore the hypergeometric law of
//! `n11`, and the randomization test coincides with Fisher's exact test.
//!
//! The two-sided p-value is `P(|τ̂| ≥ |τ̂_obs|)` with ties counted as extreme.
//! The Monte Carlo p-value counts the observed assignment among the draws,
//! reporting `(1 + #extreme) / (1 + n_draws)`.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::randomization::{observe, sample_assignment, RngSeed};
use crate::table::{ObservedTable, ScienceTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FisherMethod {
    ExactHypergeometric,
    MonteCarlo,
}

/// Which tables count as "at least as extreme" for the two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TwoSidedRule {
    /// `|τ̂| ≥ |τ̂_obs|`, ties included.
    #[default]
    AbsTau,
    /// Hypergeometric probability no larger than that of the observed table.
    PmfOrdering,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherResult {
    pub p_two_sided: f64,
    /// `P(n11 ≤ observed)`.
    pub p_lower: f64,
    /// `P(n11 ≥ observed)`.
    pub p_upper: f64,
    pub method: FisherMethod,
    pub n_draws: u64,
    /// Set when every unit shares one outcome, so the null distribution is a point mass.
    pub degenerate: bool,
}

/// Exact p-values as rationals.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactPValues {
    pub two_sided: BigRational,
    pub lower: BigRational,
    pub upper: BigRational,
    pub degenerate: bool,
}

impl ExactPValues {
    fn to_result(&self) -> FisherResult {
        FisherResult {
            p_two_sided: self.two_sided.to_f64().unwrap_or(f64::NAN).min(1.0),
            p_lower: self.lower.to_f64().unwrap_or(f64::NAN).min(1.0),
            p_upper: self.upper.to_f64().unwrap_or(f64::NAN).min(1.0),
            method: FisherMethod::ExactHypergeometric,
            n_draws: 0,
            degenerate: self.degenerate,
        }
    }
}

fn binom(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    (0..k).fold(BigUint::from(1u32), |acc, i| acc * BigUint::from(n - i) / BigUint::from(i + 1))
}

/// The sharp-null science table implied by an observed table.
pub fn sharp_null_science(observed: &ObservedTable) -> ScienceTable {
    ScienceTable {
        n11: observed.successes(),
        n10: 0,
        n01: 0,
        n00: observed.failures(),
    }
}

/// Exact randomization p-values as rationals.
pub fn fisher_exact_rational(observed: &ObservedTable, rule: TwoSidedRule) -> ExactPValues {
    let n = observed.total();
    let n1 = observed.n_treated();
    let k = observed.successes();
    let one = BigRational::from_integer(1.into());
    if k == 0 || k == n {
        return ExactPValues { two_sided: one.clone(), lower: one.clone(), upper: one, degenerate: true };
    }
    let lo = k.saturating_sub(n - n1);
    let hi = k.min(n1);
    let weight = |x: u64| binom(k, x) * binom(n - k, n1 - x);
    // N1·N0·τ̂ as a function of n11 = x.
    let stat = |x: u64| (x as i128 * n as i128 - k as i128 * n1 as i128).abs();
    let obs = observed.n11;
    let obs_stat = stat(obs);
    let obs_weight = weight(obs);

    let (mut two, mut lower, mut upper) = (BigUint::zero(), BigUint::zero(), BigUint::zero());
    for x in lo..=hi {
        let w = weight(x);
        let extreme = match rule {
            TwoSidedRule::AbsTau => stat(x) >= obs_stat,
            TwoSidedRule::PmfOrdering => w <= obs_weight,
        };
        if extreme {
            two += &w;
        }
        if x <= obs {
            lower += &w;
        }
        if x >= obs {
            upper += &w;
        }
    }
    let total = BigInt::from(binom(n, n1));
    let r = |w: BigUint| BigRational::new(BigInt::from(w), total.clone());
    ExactPValues { two_sided: r(two), lower: r(lower), upper: r(upper), degenerate: false }
}

/// Exact randomization test with the default two-sided rule.
pub fn fisher_exact(observed: &ObservedTable) -> FisherResult {
    fisher_exact_rational(observed, TwoSidedRule::AbsTau).to_result()
}

pub fn fisher_exact_with_rule(observed: &ObservedTable, rule: TwoSidedRule) -> FisherResult {
    fisher_exact_rational(observed, rule).to_result()
}

const MC_CHUNK: u64 = 4096;

/// Monte Carlo randomization test, redrawing assignments of the sharp-null
/// science table.
pub fn fisher_monte_carlo(observed: &ObservedTable, n_draws: u64, seed: RngSeed) -> Result<FisherResult> {
    if n_draws == 0 {
        return Err(Error::InvalidArgument("n_draws must be at least 1".into()));
    }
    let science = sharp_null_science(observed);
    let n1 = observed.n_treated();
    let obs_stat = observed.tau_hat_numerator().abs();
    let obs_n11 = observed.n11;
    let degenerate = science.n11 == 0 || science.n00 == 0;

    let chunks = n_draws.div_ceil(MC_CHUNK);
    let (extreme, lower, upper) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seed.stream(c);
            let len = MC_CHUNK.min(n_draws - c * MC_CHUNK);
            let mut counts = (0u64, 0u64, 0u64);
            for _ in 0..len {
                let a = sample_assignment(&science, n1, &mut rng).expect("valid treated count");
                let o = observe(&science, &a).expect("sampled assignment is feasible");
                counts.0 += (o.tau_hat_numerator().abs() >= obs_stat) as u64;
                counts.1 += (o.n11 <= obs_n11) as u64;
                counts.2 += (o.n11 >= obs_n11) as u64;
            }
            counts
        })
        .reduce(|| (0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));

    let add_one = |hits: u64| (1 + hits) as f64 / (1 + n_draws) as f64;
    Ok(FisherResult {
        p_two_sided: add_one(extreme),
        p_lower: add_one(lower),
        p_upper: add_one(upper),
        method: FisherMethod::MonteCarlo,
        n_draws,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ob(a: u64, b: u64, c: u64, d: u64) -> ObservedTable {
        ObservedTable::new(a, b, c, d).unwrap()
    }

    #[test]
    fn perfectly_separated_table() {
        let r = fisher_exact_rational(&ob(5, 0, 0, 5), TwoSidedRule::AbsTau);
        assert_eq!(r.two_sided, BigRational::new(2.into(), 252.into()));
        assert_eq!(r.upper, BigRational::new(1.into(), 252.into()));
        assert_eq!(r.lower, BigRational::from_integer(1.into()));
    }

    #[test]
    fn centered_table_has_p_one() {
        let r = fisher_exact(&ob(3, 3, 3, 3));
        assert_eq!(r.p_two_sided, 1.0);
        assert!(!r.degenerate);
    }

    #[test]
    fn degenerate_margins() {
        let r = fisher_exact(&ob(0, 4, 0, 6));
        assert!(r.degenerate);
        assert_eq!((r.p_two_sided, r.p_lower, r.p_upper), (1.0, 1.0, 1.0));
        let r = fisher_exact(&ob(4, 0, 6, 0));
        assert!(r.degenerate);
    }

    #[test]
    fn tails_bracket_two_sided() {
        let r = fisher_exact(&ob(19, 60, 12, 27));
        assert!(r.p_two_sided <= 1.0 && r.p_two_sided > 0.0);
        assert!(r.p_two_sided >= r.p_lower.min(r.p_upper));
        assert!(r.p_lower + r.p_upper >= 1.0);
    }

    #[test]
    fn pmf_rule_agrees_on_symmetric_null() {
        // balanced design and n+1 = N/2: the null pmf is symmetric, so both rules coincide
        for obs in [ob(5, 1, 1, 5), ob(4, 2, 2, 4), ob(6, 0, 0, 6)] {
            let a = fisher_exact_rational(&obs, TwoSidedRule::AbsTau);
            let b = fisher_exact_rational(&obs, TwoSidedRule::PmfOrdering);
            assert_eq!(a.two_sided, b.two_sided);
        }
    }

    #[test]
    fn monte_carlo_agrees_with_exact() {
        let obs = ob(19, 60, 12, 27);
        let exact = fisher_exact(&obs);
        let mc = fisher_monte_carlo(&obs, 100_000, RngSeed(7)).unwrap();
        let p = exact.p_two_sided;
        let se = (p * (1.0 - p) / 100_000.0).sqrt();
        assert!((mc.p_two_sided - p).abs() < 3.0 * se, "{} vs {}", mc.p_two_sided, p);
        assert_eq!(mc.method, FisherMethod::MonteCarlo);

        let obs = ob(5, 0, 0, 5);
        let mc = fisher_monte_carlo(&obs, 100_000, RngSeed(8)).unwrap();
        let p = 2.0f64 / 252.0;
        let se = (p * (1.0 - p) / 100_000.0).sqrt();
        assert!((mc.p_two_sided - p).abs() < 3.0 * se);
    }

    #[test]
    fn monte_carlo_add_one_bounds() {
        assert!(fisher_monte_carlo(&ob(5, 0, 0, 5), 0, RngSeed(1)).is_err());
        for s in 0..20 {
            let r = fisher_monte_carlo(&ob(5, 0, 0, 5), 1, RngSeed(s)).unwrap();
            assert!(r.p_two_sided == 0.5 || r.p_two_sided == 1.0);
        }
    }

    #[test]
    fn monte_carlo_reproducible() {
        let obs = ob(7, 3, 2, 8);
        let a = fisher_monte_carlo(&obs, 10_000, RngSeed(42)).unwrap();
        let b = fisher_monte_carlo(&obs, 10_000, RngSeed(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn exact_test_size_under_sharp_null() {
        let science = ScienceTable::new(12, 0, 0, 18).unwrap();
        let seed = RngSeed(5000);
        let reps = 5000;
        let rejections = (0..reps)
            .filter(|&i| {
                let mut rng = seed.stream(i);
                let a = sample_assignment(&science, 15, &mut rng).unwrap();
                let o = observe(&science, &a).unwrap();
                fisher_exact(&o).p_two_sided <= 0.05
            })
            .count();
        assert!(rejections as f64 / reps as f64 <= 0.05);
    }

    #[test]
    fn statistic_increasing_in_n11() {
        // fixed margins N1 = 8, N0 = 6, n+1 = 7
        let mut last = f64::NEG_INFINITY;
        for x in 1..=7u64 {
            let o = ob(x, 8 - x, 7 - x, 6 - (7 - x));
            assert!(o.tau_hat() > last);
            last = o.tau_hat();
        }
    }
}
