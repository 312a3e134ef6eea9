//! The completely randomized assignment mechanism.
//!
//! Observed outcomes depend on the assignment vector only through how many
//! units of each science-table cell were treated, so an assignment is stored
//! as that 4-tuple. Under complete randomization the tuple is multivariate
//! hypergeometric, which is what both the sampler and the exact enumerator
//! implement.

use std::cmp::min;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Hypergeometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{ObservedTable, ScienceTable};

/// Default ceiling on the number of distinct assignments enumerated.
pub const DEFAULT_ENUMERATION_CAP: u64 = 10_000_000;

/// Treated units drawn from each science-table cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    pub a11: u64,
    pub a10: u64,
    pub a01: u64,
    pub a00: u64,
}

impl Assignment {
    pub fn n_treated(&self) -> u64 {
        self.a11 + self.a10 + self.a01 + self.a00
    }

    pub fn cells(&self) -> [u64; 4] {
        [self.a11, self.a10, self.a01, self.a00]
    }
}

/// Seed for a reproducible family of random streams.
///
/// Each replicate `i` of a simulation draws from `stream(i)`, so results do
/// not depend on how replicates are scheduled across threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(index);
        rng
    }

    /// A new seed for an independent sub-experiment labelled by `salt`.
    pub fn derive(&self, salt: u64) -> RngSeed {
        // splitmix64 finalizer
        let mut z = self.0 ^ salt.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }
}

fn check_treated(science: &ScienceTable, n_treated: u64) -> Result<()> {
    let max = science.total() - 1;
    if n_treated == 0 || n_treated > max {
        return Err(Error::TreatedOutOfRange { got: n_treated, max });
    }
    Ok(())
}

fn hypergeometric<R: Rng + ?Sized>(rng: &mut R, population: u64, marked: u64, draws: u64) -> u64 {
    if draws == 0 || marked == 0 {
        return 0;
    }
    if marked == population {
        return draws;
    }
    if draws == population {
        return marked;
    }
    Hypergeometric::new(population, marked, draws)
        .expect("hypergeometric parameters are consistent")
        .sample(rng)
}

/// Draw a completely randomized assignment of `n_treated` units.
pub fn sample_assignment<R: Rng + ?Sized>(
    science: &ScienceTable,
    n_treated: u64,
    rng: &mut R,
) -> Result<Assignment> {
    check_treated(science, n_treated)?;
    let mut remaining = science.total();
    let mut left = n_treated;
    let mut take = |cell: u64| {
        let k = hypergeometric(rng, remaining, cell, left);
        remaining -= cell;
        left -= k;
        k
    };
    let a11 = take(science.n11);
    let a10 = take(science.n10);
    let a01 = take(science.n01);
    let a00 = left;
    Ok(Assignment { a11, a10, a01, a00 })
}

/// Realize the observed table produced by assignment `a`.
pub fn observe(science: &ScienceTable, a: &Assignment) -> Result<ObservedTable> {
    let fits = a.a11 <= science.n11
        && a.a10 <= science.n10
        && a.a01 <= science.n01
        && a.a00 <= science.n00;
    let n1 = a.n_treated();
    if !fits || n1 == 0 || n1 >= science.total() {
        return Err(Error::InconsistentAssignment {
            assignment: a.cells(),
            science: science.cells(),
        });
    }
    Ok(ObservedTable {
        n11: a.a11 + a.a10,
        n10: a.a01 + a.a00,
        n01: (science.n11 - a.a11) + (science.n01 - a.a01),
        n00: (science.n10 - a.a10) + (science.n00 - a.a00),
    })
}

fn binomial_row(n: u64) -> Vec<BigUint> {
    let mut row = Vec::with_capacity(n as usize + 1);
    let mut c = BigUint::one();
    row.push(c.clone());
    for k in 0..n {
        c = c * BigUint::from(n - k) / BigUint::from(k + 1);
        row.push(c.clone());
    }
    row
}

/// Every feasible assignment of a science table together with its exact
/// multivariate-hypergeometric weight.
///
/// Each assignment's probability is `weight / total_weight()`, where
/// `total_weight() = C(N, N1)`.
#[derive(Debug, Clone)]
pub struct AssignmentEnumeration {
    science: ScienceTable,
    n_treated: u64,
    count: u64,
    binoms: [Vec<BigUint>; 4],
    total_weight: BigUint,
}

impl AssignmentEnumeration {
    pub fn new(science: &ScienceTable, n_treated: u64, cap: u64) -> Result<Self> {
        check_treated(science, n_treated)?;
        let count = count_assignments(science, n_treated);
        if count > cap {
            return Err(Error::EnumerationTooLarge { count, cap });
        }
        let binoms = science.cells().map(binomial_row);
        let total_weight = binomial_row(science.total()).swap_remove(n_treated as usize);
        Ok(AssignmentEnumeration { science: *science, n_treated, count, binoms, total_weight })
    }

    pub fn science(&self) -> &ScienceTable {
        &self.science
    }

    pub fn n_treated(&self) -> u64 {
        self.n_treated
    }

    /// Number of distinct feasible assignments.
    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn total_weight(&self) -> &BigUint {
        &self.total_weight
    }

    /// Assignments in lexicographic `(a11, a10, a01)` order.
    pub fn assignments(&self) -> impl Iterator<Item = Assignment> + '_ {
        lattice(self.science, self.n_treated)
    }

    /// Assignments with their integer weights (count of unit-level vectors).
    pub fn weighted(&self) -> impl Iterator<Item = (Assignment, BigUint)> + '_ {
        self.assignments().map(move |a| {
            let w = a
                .cells()
                .iter()
                .zip(&self.binoms)
                .fold(BigUint::one(), |acc, (&k, row)| acc * &row[k as usize]);
            (a, w)
        })
    }

    pub fn probabilities(&self) -> impl Iterator<Item = (Assignment, BigRational)> + '_ {
        let den = BigInt::from(self.total_weight.clone());
        self.weighted()
            .map(move |(a, w)| (a, BigRational::new(BigInt::from(w), den.clone())))
    }

    /// Assignments with probabilities rounded to `f64`.
    pub fn probabilities_f64(&self) -> impl Iterator<Item = (Assignment, f64)> + '_ {
        let den = BigInt::from(self.total_weight.clone());
        self.weighted().map(move |(a, w)| {
            let p = BigRational::new(BigInt::from(w), den.clone());
            (a, p.to_f64().unwrap_or(0.0))
        })
    }

    /// Exact expectation of a rational-valued function of the observed table.
    pub fn expectation_exact<F>(&self, mut f: F) -> BigRational
    where
        F: FnMut(&ObservedTable) -> BigRational,
    {
        let mut acc = BigRational::zero();
        for (a, w) in self.weighted() {
            let obs = observe(&self.science, &a).expect("enumerated assignments are feasible");
            acc += f(&obs) * BigRational::from_integer(BigInt::from(w));
        }
        acc / BigRational::from_integer(BigInt::from(self.total_weight.clone()))
    }
}

fn lattice(science: ScienceTable, n1: u64) -> impl Iterator<Item = Assignment> {
    let ScienceTable { n11, n10, n01, n00 } = science;
    (0..=min(n11, n1)).flat_map(move |a11| {
        (0..=min(n10, n1 - a11)).flat_map(move |a10| {
            let rem = n1 - a11 - a10;
            let lo = rem.saturating_sub(n00);
            let hi = min(n01, rem);
            (lo..=hi).map(move |a01| Assignment { a11, a10, a01, a00: rem - a01 })
        })
    })
}

fn count_assignments(science: &ScienceTable, n1: u64) -> u64 {
    let mut count = 0u64;
    for a11 in 0..=min(science.n11, n1) {
        for a10 in 0..=min(science.n10, n1 - a11) {
            let rem = n1 - a11 - a10;
            let lo = rem.saturating_sub(science.n00);
            let hi = min(science.n01, rem);
            if lo <= hi {
                count += hi - lo + 1;
            }
        }
    }
    count
}

/// Enumerate assignments with exact probabilities under the default cap.
pub fn enumerate_assignments(
    science: &ScienceTable,
    n_treated: u64,
) -> Result<AssignmentEnumeration> {
    AssignmentEnumeration::new(science, n_treated, DEFAULT_ENUMERATION_CAP)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::ToPrimitive;

    fn st(a: u64, b: u64, c: u64, d: u64) -> ScienceTable {
        ScienceTable::new(a, b, c, d).unwrap()
    }

    #[test]
    fn single_cell_always_same_assignment() {
        let s = st(0, 0, 0, 8);
        let mut rng = RngSeed(3).stream(0);
        for _ in 0..100 {
            let a = sample_assignment(&s, 4, &mut rng).unwrap();
            assert_eq!(a, Assignment { a11: 0, a10: 0, a01: 0, a00: 4 });
        }
    }

    #[test]
    fn treated_count_out_of_range() {
        let s = st(2, 2, 2, 2);
        let mut rng = RngSeed(3).stream(0);
        assert!(sample_assignment(&s, 0, &mut rng).is_err());
        assert!(sample_assignment(&s, 8, &mut rng).is_err());
        assert!(enumerate_assignments(&s, 8).is_err());
    }

    #[test]
    fn sampled_cell_frequency_matches_pmf() {
        // P(a11 = 2) = C(2,2) C(6,2) / C(8,4) = 15/70
        let s = st(2, 2, 2, 2);
        let mut rng = RngSeed(11).stream(0);
        let draws = 100_000;
        let mut hits = 0u32;
        let mut sum_a11 = 0u64;
        for _ in 0..draws {
            let a = sample_assignment(&s, 4, &mut rng).unwrap();
            hits += (a.a11 == 2) as u32;
            sum_a11 += a.a11;
        }
        let p = 15.0 / 70.0;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((hits as f64 / draws as f64 - p).abs() < 3.0 * se);
        // E[a11] = N1 N11 / N = 1, var(a11) = 4·(2/8)(6/8)(4/7)
        let var = 4.0 * 0.25 * 0.75 * (4.0 / 7.0);
        let mean = sum_a11 as f64 / draws as f64;
        assert!((mean - 1.0).abs() < 3.0 * (var / draws as f64).sqrt());
    }

    #[test]
    fn observe_bookkeeping() {
        let s = st(5, 0, 0, 5);
        let o = observe(&s, &Assignment { a11: 3, a10: 0, a01: 0, a00: 2 }).unwrap();
        assert_eq!(o.cells(), [3, 2, 2, 3]);
        assert!(observe(&s, &Assignment { a11: 6, a10: 0, a01: 0, a00: 0 }).is_err());
    }

    #[test]
    fn sharp_null_keeps_success_column() {
        let s = st(4, 0, 0, 7);
        let e = enumerate_assignments(&s, 5).unwrap();
        for a in e.assignments() {
            assert_eq!(observe(&s, &a).unwrap().successes(), 4);
        }
    }

    #[test]
    fn enumeration_mass_sums_to_one() {
        let e = enumerate_assignments(&st(1, 1, 1, 1), 2).unwrap();
        assert_eq!(e.len(), 6);
        let total: BigRational = e.probabilities().map(|(_, p)| p).sum();
        assert_eq!(total, BigRational::one());
        assert_eq!(e.total_weight(), &BigUint::from(6u32));
    }

    #[test]
    fn enumeration_cap_enforced() {
        let s = st(30, 30, 30, 30);
        assert!(matches!(
            AssignmentEnumeration::new(&s, 60, 100),
            Err(Error::EnumerationTooLarge { cap: 100, .. })
        ));
    }

    #[test]
    fn tau_hat_unbiased_on_small_table() {
        let s = st(3, 2, 2, 3);
        let e = enumerate_assignments(&s, 5).unwrap();
        let mean = e.expectation_exact(|o| o.tau_hat_exact());
        assert!(mean.is_zero());
    }

    #[test]
    fn variance_matches_closed_form() {
        let s = st(2, 2, 2, 2);
        let e = enumerate_assignments(&s, 4).unwrap();
        let m = s.moments();
        let mut mean = 0.0;
        let mut sq = 0.0;
        let mut mean1 = 0.0;
        let mut mean0 = 0.0;
        let mut cross = 0.0;
        for (a, p) in e.probabilities_f64() {
            let o = observe(&s, &a).unwrap();
            mean += p * o.tau_hat();
            sq += p * o.tau_hat() * o.tau_hat();
            mean1 += p * o.p1_hat();
            mean0 += p * o.p0_hat();
            cross += p * o.p1_hat() * o.p0_hat();
        }
        let var = sq - mean * mean;
        let closed = m.s1sq / 4.0 + m.s0sq / 4.0 - m.stausq / 8.0;
        assert!((var - closed).abs() < 1e-12);
        assert!(((cross - mean1 * mean0) + m.s10 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn sampler_matches_enumeration() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let s = st(3, 2, 4, 3);
        let e = enumerate_assignments(&s, 6).unwrap();
        let cells: Vec<(Assignment, f64)> = e.probabilities_f64().collect();
        let mut counts = vec![0u64; cells.len()];
        let mut rng = RngSeed(2024).stream(1);
        let draws = 100_000;
        for _ in 0..draws {
            let a = sample_assignment(&s, 6, &mut rng).unwrap();
            let k = cells.iter().position(|(c, _)| *c == a).unwrap();
            counts[k] += 1;
        }
        // pool bins with small expected counts into one
        let mut stat = 0.0;
        let mut bins = 0;
        let (mut pooled_obs, mut pooled_exp) = (0.0, 0.0);
        for ((_, p), &c) in cells.iter().zip(&counts) {
            let expected = p * draws as f64;
            if expected < 5.0 {
                pooled_obs += c as f64;
                pooled_exp += expected;
            } else {
                stat += (c as f64 - expected).powi(2) / expected;
                bins += 1;
            }
        }
        if pooled_exp > 0.0 {
            stat += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
            bins += 1;
        }
        let chi = ChiSquared::new((bins - 1) as f64).unwrap();
        assert!(1.0 - chi.cdf(stat) > 0.001, "chi-square {stat} on {bins} bins");
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let seed = RngSeed(99);
        let a: Vec<u64> = (0..4).map(|_| seed.stream(5).random::<u64>()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        assert_ne!(seed.stream(5).random::<u64>(), seed.stream(6).random::<u64>());
        assert_ne!(seed.derive(1), seed.derive(2));
        let f = enumerate_assignments(&st(2, 3, 1, 4), 5).unwrap();
        let total: f64 = f.probabilities_f64().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(f.total_weight().to_f64().unwrap() == 252.0);
    }
}
