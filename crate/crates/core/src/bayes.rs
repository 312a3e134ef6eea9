//! Bayesian imputation of the missing potential outcomes.
//!
//! Units are modelled as iid draws from a 2×2 table of cell probabilities
//! `(π11, π10, π01, π00)` for `(Y(1), Y(0))`. The observed data identify only
//! the margins `π1+ = P(Y(1) = 1)` and `π+1 = P(Y(0) = 1)`, which get
//! independent conjugate Beta priors. The association between the potential
//! outcomes is fixed by the odds ratio
//!
//! ```text
//! γ = (π11 / π10) · ((1 − π+1) / π+1)
//! ```
//!
//! with `γ = 1` meaning independence. Given the margins and γ, each missing
//! outcome is imputed from its conditional Binomial law and the finite
//! population measure is computed from the completed science table.
//!
//! ```
//! use pottab::bayes::{cells_from_margins, SensitivityGamma};
//!
//! let cells = cells_from_margins(0.6, 0.5, SensitivityGamma::from_gamma(2.0).unwrap()).unwrap();
//! assert!((cells.pi11 - 0.4).abs() < 1e-12);
//! assert!((cells.gamma() - 2.0).abs() < 1e-12);
//! ```

use std::io::Write;

use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neyman::ConfidenceInterval;
use crate::table::{log_ratio, logit_counts};
use crate::{Measure, ObservedTable, RngSeed};

/// Default number of posterior draws for a single analysis.
pub const DEFAULT_DRAWS: u64 = 10_000;
/// Attempts allowed per draw before giving up on an infeasible γ.
pub const RETRY_CAP: u32 = 1000;
const DRAW_CHUNK: u64 = 4096;

/// Independent `Beta(α1, β1)` prior on `π1+` and `Beta(α0, β0)` on `π+1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub alpha1: f64,
    pub beta1: f64,
    pub alpha0: f64,
    pub beta0: f64,
}

impl Default for BetaPrior {
    fn default() -> Self {
        BetaPrior::uniform()
    }
}

impl BetaPrior {
    pub fn new(alpha1: f64, beta1: f64, alpha0: f64, beta0: f64) -> Result<Self> {
        for (name, v) in [("alpha1", alpha1), ("beta1", beta1), ("alpha0", alpha0), ("beta0", beta0)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("prior {name} must be positive, got {v}")));
            }
        }
        Ok(BetaPrior { alpha1, beta1, alpha0, beta0 })
    }

    pub fn uniform() -> Self {
        BetaPrior { alpha1: 1.0, beta1: 1.0, alpha0: 1.0, beta0: 1.0 }
    }

    /// Conjugate update with successes and failures per arm. Zero counts
    /// leave the prior unchanged.
    pub fn update(&self, treated_successes: u64, treated_failures: u64, control_successes: u64, control_failures: u64) -> BetaPrior {
        BetaPrior {
            alpha1: self.alpha1 + treated_successes as f64,
            beta1: self.beta1 + treated_failures as f64,
            alpha0: self.alpha0 + control_successes as f64,
            beta0: self.beta0 + control_failures as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.alpha * self.beta / (s * s * (s + 1.0))
    }
}

/// Posterior of the two margins; they are independent a posteriori.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginPosterior {
    /// Law of `π1+`.
    pub treated: BetaParams,
    /// Law of `π+1`.
    pub control: BetaParams,
}

pub fn posterior_params(observed: &ObservedTable, prior: &BetaPrior) -> MarginPosterior {
    let p = prior.update(observed.n11, observed.n10, observed.n01, observed.n00);
    MarginPosterior {
        treated: BetaParams { alpha: p.alpha1, beta: p.beta1 },
        control: BetaParams { alpha: p.alpha0, beta: p.beta0 },
    }
}

/// Exact posterior mean and variance of τ under independence.
pub fn exact_posterior_moments(observed: &ObservedTable, prior: &BetaPrior) -> (f64, f64) {
    let n1 = observed.n_treated() as f64;
    let n0 = observed.n_control() as f64;
    let n = n1 + n0;
    let n1p = n1 + prior.alpha1 + prior.beta1;
    let n0p = n0 + prior.alpha0 + prior.beta0;
    let p1p = (observed.n11 as f64 + prior.alpha1) / n1p;
    let p0p = (observed.n01 as f64 + prior.alpha0) / n0p;
    let mean = (n1p + n0) / n * p1p - (n0p + n1) / n * p0p - (prior.alpha1 - prior.alpha0) / n;
    let var = n0 * (n1p + n0) / (n * n) * p1p * (1.0 - p1p) / (n1p + 1.0)
        + n1 * (n1 + n0p) / (n * n) * p0p * (1.0 - p0p) / (n0p + 1.0);
    (mean, var)
}

/// The odds ratio γ between `Y(1)` and `Y(0)`, stored on the log scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityGamma {
    pub log_gamma: f64,
}

impl SensitivityGamma {
    pub fn new(log_gamma: f64) -> Result<Self> {
        if !log_gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("log gamma must be finite, got {log_gamma}")));
        }
        Ok(SensitivityGamma { log_gamma })
    }

    pub fn from_gamma(gamma: f64) -> Result<Self> {
        if gamma.is_nan() || gamma <= 0.0 {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
        }
        SensitivityGamma::new(gamma.ln())
    }

    pub fn independence() -> Self {
        SensitivityGamma { log_gamma: 0.0 }
    }

    pub fn gamma(&self) -> f64 {
        self.log_gamma.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellProbabilities {
    pub pi11: f64,
    pub pi10: f64,
    pub pi01: f64,
    pub pi00: f64,
}

impl CellProbabilities {
    pub fn treated_margin(&self) -> f64 {
        self.pi11 + self.pi10
    }

    pub fn control_margin(&self) -> f64 {
        self.pi11 + self.pi01
    }

    /// Odds ratio recovered from the cells.
    pub fn gamma(&self) -> f64 {
        let c = self.control_margin();
        self.pi11 / self.pi10 * ((1.0 - c) / c)
    }
}

/// Check the feasibility constraints for `(π1+, π+1, γ)`.
pub fn check_feasible(pi1plus: f64, piplus1: f64, gamma: SensitivityGamma) -> Result<()> {
    let g = gamma.gamma();
    let infeasible = |violated| Error::Infeasible { pi_treated: pi1plus, pi_control: piplus1, gamma: g, violated };
    if !(pi1plus > 0.0 && pi1plus < 1.0) || !(piplus1 > 0.0 && piplus1 < 1.0) {
        return Err(infeasible("margins must lie strictly inside (0, 1)"));
    }
    if g * (pi1plus - piplus1) > 1.0 - piplus1 {
        return Err(infeasible("gamma*(pi1+ - pi+1) <= 1 - pi+1 (pi01 >= 0)"));
    }
    if g * piplus1 <= pi1plus + piplus1 - 1.0 {
        return Err(infeasible("gamma*pi+1 > pi1+ + pi+1 - 1 (pi00 > 0)"));
    }
    Ok(())
}

/// The cell probabilities with the given margins and odds ratio.
pub fn cells_from_margins(pi1plus: f64, piplus1: f64, gamma: SensitivityGamma) -> Result<CellProbabilities> {
    check_feasible(pi1plus, piplus1, gamma)?;
    Ok(cells_unchecked(pi1plus, piplus1, gamma.gamma()))
}

fn cells_unchecked(p1: f64, p0: f64, g: f64) -> CellProbabilities {
    let d = 1.0 - p0 + g * p0;
    let s = p1 + p0 - 1.0;
    CellProbabilities {
        pi11: g * p1 * p0 / d,
        pi10: p1 * (1.0 - p0) / d,
        pi01: (p0 * (1.0 - p0 + g * p0 - g * p1) / d).max(0.0),
        pi00: ((1.0 - p0) * (g * p0 - s) / d).max(0.0),
    }
}

/// How the missing potential outcomes are associated with the observed ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum AssociationModel {
    /// `Y(1)` and `Y(0)` independent; imputes each arm's missing outcomes as
    /// a single Binomial count.
    Independent,
    /// Odds ratio γ; imputes each observed cell separately.
    Sensitivity(SensitivityGamma),
}

/// Posterior draws of a causal measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub measure: Measure,
    /// Finite draws in generation order.
    pub draws: Vec<f64>,
    pub prior: BetaPrior,
    pub model: AssociationModel,
    pub n_draws: u64,
    pub seed: RngSeed,
    /// Draws excluded because the completed table left a measure undefined.
    pub non_finite: u64,
    /// Margin draws rejected as infeasible for γ.
    pub rejections: u64,
    pub warnings: Vec<String>,
}

/// Which credible interval to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CredibleKind {
    #[default]
    EqualTailed,
    /// Highest posterior density, taken as the shortest window of sorted draws.
    Hdi,
}

impl PosteriorDraws {
    pub fn rejection_rate(&self) -> f64 {
        let tried = self.rejections + self.n_draws;
        if tried == 0 {
            0.0
        } else {
            self.rejections as f64 / tried as f64
        }
    }

    fn sorted(&self) -> Vec<f64> {
        let mut v = self.draws.clone();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn mean(&self) -> f64 {
        self.draws.iter().sum::<f64>() / self.draws.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let n = self.draws.len() as f64;
        self.draws.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    }

    pub fn median(&self) -> f64 {
        quantile_sorted(&self.sorted(), 0.5)
    }

    pub fn quantile(&self, q: f64) -> f64 {
        quantile_sorted(&self.sorted(), q)
    }

    pub fn credible_interval(&self, level: f64, kind: CredibleKind) -> Result<ConfidenceInterval> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::InvalidArgument(format!("level must lie in (0, 1), got {level}")));
        }
        if self.draws.is_empty() {
            return Err(Error::InvalidArgument("no finite posterior draws".into()));
        }
        let s = self.sorted();
        let (lower, upper, method) = match kind {
            CredibleKind::EqualTailed => {
                let tail = (1.0 - level) / 2.0;
                (quantile_sorted(&s, tail), quantile_sorted(&s, 1.0 - tail), "equal-tailed")
            }
            CredibleKind::Hdi => {
                let width = ((level * s.len() as f64).ceil() as usize).clamp(1, s.len());
                let best = (0..=s.len() - width)
                    .min_by(|&i, &j| (s[i + width - 1] - s[i]).total_cmp(&(s[j + width - 1] - s[j])))
                    .unwrap_or(0);
                (s[best], s[best + width - 1], "hdi")
            }
        };
        Ok(ConfidenceInterval { lower, upper, level, method: method.to_string() })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("draws serialize")
    }

    /// One column of draws headed by the measure label.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::InvalidArgument(format!("csv write failed: {e}"));
        w.write_record([self.measure.label()]).map_err(io)?;
        for d in &self.draws {
            w.write_record([d.to_string()]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::InvalidArgument(format!("csv write failed: {e}")))
    }
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    if s.is_empty() {
        return f64::NAN;
    }
    let h = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

/// Value of `measure` from total potential successes `y1`, `y0` out of `n`.
pub(crate) fn measure_from_counts(measure: Measure, y1: u64, y0: u64, n: u64) -> f64 {
    let (y1, y0, n) = (y1 as f64, y0 as f64, n as f64);
    match measure {
        Measure::Crd => (y1 - y0) / n,
        Measure::LogCrr => log_ratio(y1, y0),
        Measure::LogCor => logit_counts(y1, n - y1) - logit_counts(y0, n - y0),
    }
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 {
        return 0;
    }
    Binomial::new(n, p.clamp(0.0, 1.0)).expect("probability in [0, 1]").sample(rng)
}

/// Completed potential-outcome success totals `(y1, y0)` under independence,
/// one pair per draw.
pub(crate) fn independent_totals<R: Rng + ?Sized>(
    observed: &ObservedTable,
    post: &MarginPosterior,
    n_draws: u64,
    rng: &mut R,
) -> Result<Vec<(u64, u64)>> {
    let beta1 = Beta::new(post.treated.alpha, post.treated.beta)
        .map_err(|e| Error::InvalidArgument(format!("posterior Beta: {e}")))?;
    let beta0 = Beta::new(post.control.alpha, post.control.beta)
        .map_err(|e| Error::InvalidArgument(format!("posterior Beta: {e}")))?;
    Ok((0..n_draws)
        .map(|_| {
            let p1: f64 = beta1.sample(rng);
            let p0: f64 = beta0.sample(rng);
            let b1 = binomial(observed.n_treated(), p0, rng);
            let b0 = binomial(observed.n_control(), p1, rng);
            (observed.n11 + b0, observed.n01 + b1)
        })
        .collect())
}

/// Completed science table `(N11, N10, N01, N00)` for one draw under γ.
fn impute_sensitivity<R: Rng + ?Sized>(observed: &ObservedTable, cells: &CellProbabilities, rng: &mut R) -> [u64; 4] {
    let p1 = cells.treated_margin();
    let p0 = cells.control_margin();
    let b11 = binomial(observed.n11, cells.pi11 / p1, rng);
    let b10 = binomial(observed.n10, cells.pi01 / (1.0 - p1), rng);
    let b01 = binomial(observed.n01, cells.pi11 / p0, rng);
    let b00 = binomial(observed.n00, cells.pi10 / (1.0 - p0), rng);
    [
        b11 + b01,
        (observed.n11 - b11) + b00,
        b10 + (observed.n01 - b01),
        (observed.n10 - b10) + (observed.n00 - b00),
    ]
}

struct ChunkOut {
    values: Vec<f64>,
    non_finite: u64,
    rejections: u64,
}

fn draw_chunk(
    observed: &ObservedTable,
    post: &MarginPosterior,
    model: AssociationModel,
    measure: Measure,
    len: u64,
    rng: &mut impl Rng,
) -> Result<ChunkOut> {
    let mut out = ChunkOut { values: Vec::with_capacity(len as usize), non_finite: 0, rejections: 0 };
    let totals = match model {
        AssociationModel::Independent => independent_totals(observed, post, len, rng)?,
        AssociationModel::Sensitivity(gamma) => {
            let beta1 = Beta::new(post.treated.alpha, post.treated.beta)
                .map_err(|e| Error::InvalidArgument(format!("posterior Beta: {e}")))?;
            let beta0 = Beta::new(post.control.alpha, post.control.beta)
                .map_err(|e| Error::InvalidArgument(format!("posterior Beta: {e}")))?;
            let g = gamma.gamma();
            let mut totals = Vec::with_capacity(len as usize);
            for done in 0..len {
                let mut attempts = 0u32;
                let cells = loop {
                    let p1: f64 = beta1.sample(rng);
                    let p0: f64 = beta0.sample(rng);
                    if check_feasible(p1, p0, gamma).is_ok() {
                        break cells_unchecked(p1, p0, g);
                    }
                    attempts += 1;
                    out.rejections += 1;
                    if attempts >= RETRY_CAP {
                        return Err(Error::RetryCapExhausted {
                            rejection_rate: out.rejections as f64 / (out.rejections + done) as f64,
                            cap: RETRY_CAP,
                        });
                    }
                };
                let s = impute_sensitivity(observed, &cells, rng);
                totals.push((s[0] + s[1], s[0] + s[2]));
            }
            totals
        }
    };
    let n = observed.total();
    for (y1, y0) in totals {
        let v = measure_from_counts(measure, y1, y0, n);
        if v.is_finite() {
            out.values.push(v);
        } else {
            out.non_finite += 1;
        }
    }
    Ok(out)
}

/// Posterior draws of `measure` under the given association model.
pub fn draw_measure(
    observed: &ObservedTable,
    prior: &BetaPrior,
    model: AssociationModel,
    measure: Measure,
    n_draws: u64,
    seed: RngSeed,
) -> Result<PosteriorDraws> {
    if n_draws == 0 {
        return Err(Error::InvalidArgument("n_draws must be at least 1".into()));
    }
    let post = posterior_params(observed, prior);
    let chunks = n_draws.div_ceil(DRAW_CHUNK);
    let run = |c: u64| {
        let len = DRAW_CHUNK.min(n_draws - c * DRAW_CHUNK);
        draw_chunk(observed, &post, model, measure, len, &mut seed.stream(c))
    };
    let parts: Vec<ChunkOut> = if chunks == 1 {
        vec![run(0)?]
    } else {
        (0..chunks).into_par_iter().map(run).collect::<Result<_>>()?
    };

    let mut draws = Vec::with_capacity(n_draws as usize);
    let (mut non_finite, mut rejections) = (0, 0);
    for p in parts {
        draws.extend(p.values);
        non_finite += p.non_finite;
        rejections += p.rejections;
    }
    let mut result = PosteriorDraws {
        measure,
        draws,
        prior: *prior,
        model,
        n_draws,
        seed,
        non_finite,
        rejections,
        warnings: Vec::new(),
    };
    if result.rejection_rate() > 0.5 {
        result.warnings.push(format!(
            "{:.1}% of margin draws were infeasible for this gamma and were redrawn",
            100.0 * result.rejection_rate()
        ));
    }
    if non_finite > 0 {
        result.warnings.push(format!("{non_finite} non-finite draws excluded"));
    }
    Ok(result)
}

/// Posterior draws of τ assuming independent potential outcomes.
pub fn draw_tau_independent(observed: &ObservedTable, prior: &BetaPrior, n_draws: u64, seed: RngSeed) -> Result<PosteriorDraws> {
    draw_measure(observed, prior, AssociationModel::Independent, Measure::Crd, n_draws, seed)
}

pub fn draw_measure_sensitivity(
    observed: &ObservedTable,
    prior: &BetaPrior,
    gamma: SensitivityGamma,
    measure: Measure,
    n_draws: u64,
    seed: RngSeed,
) -> Result<PosteriorDraws> {
    draw_measure(observed, prior, AssociationModel::Sensitivity(gamma), measure, n_draws, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub log_gamma: f64,
    pub interval: ConfidenceInterval,
    pub median: f64,
    pub rejection_rate: f64,
    pub non_finite: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityGrid {
    pub measure: Measure,
    pub points: Vec<GridPoint>,
    /// Index into `points` of the widest interval.
    pub widest: usize,
    pub independence: ConfidenceInterval,
    pub warnings: Vec<String>,
}

impl SensitivityGrid {
    pub fn widest_interval(&self) -> &ConfidenceInterval {
        &self.points[self.widest].interval
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub log_gamma_min: f64,
    pub log_gamma_max: f64,
    pub n_points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { log_gamma_min: -2.0, log_gamma_max: 4.0, n_points: 31 }
    }
}

impl GridSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        let (lo, hi, n) = (self.log_gamma_min, self.log_gamma_max, self.n_points);
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::InvalidArgument(format!("bad log gamma range [{lo}, {hi}]")));
        }
        match n {
            0 => Err(Error::InvalidArgument("grid needs at least one point".into())),
            1 if lo == hi => Ok(vec![lo]),
            1 => Err(Error::InvalidArgument("a one-point grid needs min == max".into())),
            _ => Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()),
        }
    }
}

/// Credible intervals of `measure` across a grid of log γ values.
pub fn sensitivity_grid(
    observed: &ObservedTable,
    prior: &BetaPrior,
    grid: GridSpec,
    measure: Measure,
    level: f64,
    n_draws: u64,
    seed: RngSeed,
) -> Result<SensitivityGrid> {
    let values = grid.values()?;
    let points: Vec<(GridPoint, Vec<String>)> = values
        .par_iter()
        .enumerate()
        .map(|(i, &lg)| {
            let d = draw_measure_sensitivity(observed, prior, SensitivityGamma::new(lg)?, measure, n_draws, seed.derive(i as u64))?;
            let point = GridPoint {
                log_gamma: lg,
                interval: d.credible_interval(level, CredibleKind::EqualTailed)?,
                median: d.median(),
                rejection_rate: d.rejection_rate(),
                non_finite: d.non_finite,
            };
            let warnings = d.warnings.iter().map(|w| format!("log gamma {lg:.3}: {w}")).collect();
            Ok((point, warnings))
        })
        .collect::<Result<_>>()?;
    let (points, warnings): (Vec<GridPoint>, Vec<Vec<String>>) = points.into_iter().unzip();
    let widest = (0..points.len())
        .max_by(|&a, &b| points[a].interval.length().total_cmp(&points[b].interval.length()))
        .expect("grid is non-empty");
    let ind = draw_measure(observed, prior, AssociationModel::Independent, measure, n_draws, seed.derive(u64::MAX))?;
    Ok(SensitivityGrid {
        measure,
        points,
        widest,
        independence: ind.credible_interval(level, CredibleKind::EqualTailed)?,
        warnings: warnings.into_iter().flatten().collect(),
    })
}
