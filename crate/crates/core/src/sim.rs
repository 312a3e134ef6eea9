//! Repeated-sampling evaluation of the inference methods.
//!
//! A simulation fixes a science table, redraws the complete randomization
//! many times, and scores each method's point estimate and 95% interval
//! against the true finite-population measures. Replicate `i` draws its
//! assignment from `seed.stream(i)` and its posterior draws from a derived
//! seed, and replicates are aggregated in index order, so reports do not
//! depend on the number of worker threads.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{independent_totals, measure_from_counts, posterior_params, quantile_sorted, BetaPrior};
use crate::error::{Error, Result};
use crate::neyman::z_quantile;
use crate::nonlinear::{estimate_measure, NonlinearOptions};
use crate::randomization::{observe, sample_assignment};
use crate::table::EstimandSet;
use crate::{Measure, Method, RngSeed, ScienceTable};

pub const DEFAULT_SEED: u64 = 20150101;
pub const DEFAULT_REPLICATIONS: u64 = 5000;
/// Posterior draws per replicate for the Bayesian method.
pub const DEFAULT_SIM_DRAWS: u64 = 1000;
const BAYES_SALT: u64 = 0xB4E5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesSettings {
    pub prior: BetaPrior,
    pub n_draws: u64,
}

impl Default for BayesSettings {
    fn default() -> Self {
        BayesSettings { prior: BetaPrior::uniform(), n_draws: DEFAULT_SIM_DRAWS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub science: ScienceTable,
    pub n_treated: u64,
    pub n_replications: u64,
    pub methods: Vec<Method>,
    pub measures: Vec<Measure>,
    pub level: f64,
    pub seed: RngSeed,
    pub bayes: BayesSettings,
    pub options: NonlinearOptions,
}

impl SimulationConfig {
    /// All methods and measures, 5000 replications at the 95% level.
    pub fn new(science: ScienceTable, n_treated: u64) -> Self {
        SimulationConfig {
            science,
            n_treated,
            n_replications: DEFAULT_REPLICATIONS,
            methods: Method::ALL.to_vec(),
            measures: Measure::ALL.to_vec(),
            level: 0.95,
            seed: RngSeed(DEFAULT_SEED),
            bayes: BayesSettings::default(),
            options: NonlinearOptions::default(),
        }
    }

    /// Balanced design `N1 = N0 = N/2` (rounded down).
    pub fn balanced(science: ScienceTable) -> Self {
        let n1 = science.total() / 2;
        SimulationConfig::new(science, n1)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.science.total();
        if self.n_treated < 2 || self.n_treated + 2 > n {
            return Err(Error::InvalidArgument(format!(
                "each arm needs at least 2 units: N = {n}, N1 = {}",
                self.n_treated
            )));
        }
        if self.n_replications == 0 {
            return Err(Error::InvalidArgument("n_replications must be at least 1".into()));
        }
        if self.methods.is_empty() || self.measures.is_empty() {
            return Err(Error::InvalidArgument("need at least one method and one measure".into()));
        }
        if self.methods.contains(&Method::BayesIndependent) && self.bayes.n_draws == 0 {
            return Err(Error::InvalidArgument("bayes n_draws must be at least 1".into()));
        }
        z_quantile(self.level).map(|_| ())
    }
}

/// Aggregate performance of one method on one measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub measure: Measure,
    /// Replicates that produced a finite estimate and interval.
    pub n_used: u64,
    /// Replicates excluded for non-finite estimates.
    pub non_finite: u64,
    pub mean_bias: f64,
    pub bias_mc_se: f64,
    pub mean_length: f64,
    pub length_mc_se: f64,
    pub coverage: f64,
    pub coverage_mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub case: String,
    pub science: ScienceTable,
    pub n_treated: u64,
    pub n_replications: u64,
    pub level: f64,
    pub seed: RngSeed,
    pub truth: EstimandSet,
    pub bayes: BayesSettings,
    /// Posterior draws dropped inside replicates because a measure was undefined.
    pub excluded_draws: u64,
    pub summaries: Vec<MethodSummary>,
}

impl SimulationReport {
    pub fn summary(&self, method: Method, measure: Measure) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method && s.measure == measure)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Accumulator {
    used: u64,
    non_finite: u64,
    bias: Neumaier,
    bias_sq: Neumaier,
    length: Neumaier,
    length_sq: Neumaier,
    covered: u64,
}

impl Accumulator {
    fn push(&mut self, outcome: Option<Outcome>) {
        let Some(o) = outcome else {
            self.non_finite += 1;
            return;
        };
        self.used += 1;
        self.bias.add(o.error);
        self.bias_sq.add(o.error * o.error);
        self.length.add(o.length);
        self.length_sq.add(o.length * o.length);
        self.covered += o.covered as u64;
    }

    fn summary(&self, method: Method, measure: Measure) -> MethodSummary {
        let n = self.used as f64;
        let mean_se = |s: &Neumaier, sq: &Neumaier| {
            let m = s.value() / n;
            let var = if self.used > 1 { ((sq.value() - n * m * m) / (n - 1.0)).max(0.0) } else { 0.0 };
            (m, (var / n).sqrt())
        };
        let (mean_bias, bias_mc_se) = mean_se(&self.bias, &self.bias_sq);
        let (mean_length, length_mc_se) = mean_se(&self.length, &self.length_sq);
        let coverage = self.covered as f64 / n;
        MethodSummary {
            method,
            measure,
            n_used: self.used,
            non_finite: self.non_finite,
            mean_bias,
            bias_mc_se,
            mean_length,
            length_mc_se,
            coverage,
            coverage_mc_se: (coverage * (1.0 - coverage) / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Outcome {
    error: f64,
    length: f64,
    covered: bool,
}

struct Replicate {
    outcomes: Vec<Option<Outcome>>,
    excluded_draws: u64,
}

fn run_replicate(cfg: &SimulationConfig, truth: &EstimandSet, z: f64, index: u64) -> Result<Replicate> {
    let mut rng = cfg.seed.stream(index);
    let a = sample_assignment(&cfg.science, cfg.n_treated, &mut rng)?;
    let observed = observe(&cfg.science, &a)?;

    let bayes_totals = if cfg.methods.contains(&Method::BayesIndependent) {
        let post = posterior_params(&observed, &cfg.bayes.prior);
        let mut brng = cfg.seed.derive(BAYES_SALT).stream(index);
        Some(independent_totals(&observed, &post, cfg.bayes.n_draws, &mut brng)?)
    } else {
        None
    };

    let tail = (1.0 - cfg.level) / 2.0;
    let mut outcomes = Vec::with_capacity(cfg.measures.len() * cfg.methods.len());
    let mut excluded_draws = 0;
    for &measure in &cfg.measures {
        let target = truth.get(measure);
        let est = estimate_measure(&observed, measure, cfg.options)?;
        for &method in &cfg.methods {
            let outcome = match (method, &bayes_totals) {
                (Method::BayesIndependent, Some(totals)) => {
                    let n = observed.total();
                    let mut v: Vec<f64> = totals
                        .iter()
                        .map(|&(y1, y0)| measure_from_counts(measure, y1, y0, n))
                        .filter(|x| x.is_finite())
                        .collect();
                    excluded_draws += totals.len() as u64 - v.len() as u64;
                    if v.is_empty() {
                        None
                    } else {
                        v.sort_by(f64::total_cmp);
                        let (lo, hi) = (quantile_sorted(&v, tail), quantile_sorted(&v, 1.0 - tail));
                        Some(Outcome {
                            error: quantile_sorted(&v, 0.5) - target,
                            length: hi - lo,
                            covered: lo <= target && target <= hi,
                        })
                    }
                }
                _ => match est.point_and_variance(method) {
                    Some((point, var)) if est.finite && point.is_finite() && var.is_finite() => {
                        let half = z * var.sqrt();
                        Some(Outcome {
                            error: point - target,
                            length: 2.0 * half,
                            covered: point - half <= target && target <= point + half,
                        })
                    }
                    _ => None,
                },
            };
            outcomes.push(outcome);
        }
    }
    Ok(Replicate { outcomes, excluded_draws })
}

pub fn run_simulation(config: &SimulationConfig) -> Result<SimulationReport> {
    run_case(config, "custom")
}

/// As [`run_simulation`], labelling the report with `case`.
pub fn run_case(config: &SimulationConfig, case: &str) -> Result<SimulationReport> {
    config.validate()?;
    let truth = config.science.estimands();
    let z = z_quantile(config.level)?;
    let reps: Vec<Replicate> = (0..config.n_replications)
        .into_par_iter()
        .map(|i| run_replicate(config, &truth, z, i))
        .collect::<Result<_>>()?;

    let width = config.methods.len();
    let mut acc = vec![Accumulator::default(); config.measures.len() * width];
    let mut excluded_draws = 0;
    for r in &reps {
        excluded_draws += r.excluded_draws;
        for (a, o) in acc.iter_mut().zip(&r.outcomes) {
            a.push(*o);
        }
    }
    let summaries = acc
        .iter()
        .enumerate()
        .map(|(k, a)| a.summary(config.methods[k % width], config.measures[k / width]))
        .collect();
    Ok(SimulationReport {
        case: case.to_string(),
        science: config.science,
        n_treated: config.n_treated,
        n_replications: config.n_replications,
        level: config.level,
        seed: config.seed,
        truth,
        bayes: config.bayes,
        excluded_draws,
        summaries,
    })
}

/// The simulation studies with fixed science tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StudyId {
    /// Cases 1–5: independent potential outcomes.
    #[serde(rename = "independent")]
    Independent,
    /// Cases 6–12: positively associated.
    #[serde(rename = "positive")]
    Positive,
    /// Cases 13–19: negatively associated.
    #[serde(rename = "negative")]
    Negative,
    /// Five sharp-null tables with N = 30 for the risk difference.
    #[serde(rename = "sharp_null_T5")]
    SharpNullT5,
}

impl StudyId {
    pub const ALL: [StudyId; 4] = [StudyId::Independent, StudyId::Positive, StudyId::Negative, StudyId::SharpNullT5];

    pub fn label(self) -> &'static str {
        match self {
            StudyId::Independent => "independent",
            StudyId::Positive => "positive",
            StudyId::Negative => "negative",
            StudyId::SharpNullT5 => "sharp_null_T5",
        }
    }

    /// `(case label, science table)` pairs.
    pub fn cases(self) -> Vec<(String, ScienceTable)> {
        let numbered = |range: std::ops::RangeInclusive<usize>| {
            range.map(|c| (c.to_string(), science(CASES[c - 1]))).collect()
        };
        match self {
            StudyId::Independent => numbered(1..=5),
            StudyId::Positive => numbered(6..=12),
            StudyId::Negative => numbered(13..=19),
            StudyId::SharpNullT5 => SHARP_NULL_T5
                .iter()
                .map(|&(n11, n00)| (format!("t5_{n11}_{n00}"), science([n11, 0, 0, n00])))
                .collect(),
        }
    }

    /// Methods and measures the study reports.
    pub fn roster(self) -> (Vec<Method>, Vec<Measure>) {
        match self {
            StudyId::SharpNullT5 => (vec![Method::Neyman, Method::ImprovedNeyman], vec![Measure::Crd]),
            _ => (Method::ALL.to_vec(), Measure::ALL.to_vec()),
        }
    }
}

impl fmt::Display for StudyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for StudyId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        StudyId::ALL
            .into_iter()
            .find(|id| id.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown study '{s}'")))
    }
}

fn science(c: [u64; 4]) -> ScienceTable {
    ScienceTable::new(c[0], c[1], c[2], c[3]).expect("fixed case tables are valid")
}

/// Science tables `(N11, N10, N01, N00)` of Cases 1–19.
pub const CASES: [[u64; 4]; 19] = [
    [50, 50, 50, 50],
    [30, 70, 30, 70],
    [30, 90, 20, 60],
    [80, 20, 80, 20],
    [60, 20, 90, 30],
    [60, 40, 40, 60],
    [50, 50, 30, 70],
    [50, 70, 30, 50],
    [40, 110, 10, 40],
    [70, 30, 50, 50],
    [50, 30, 70, 50],
    [30, 10, 110, 50],
    [40, 60, 60, 40],
    [30, 70, 50, 50],
    [40, 80, 40, 40],
    [30, 120, 20, 30],
    [50, 50, 70, 30],
    [40, 40, 80, 40],
    [20, 20, 120, 40],
];

/// `(N11, N00)` of the sharp-null tables with N = 30.
pub const SHARP_NULL_T5: [(u64, u64); 5] = [(20, 10), (25, 5), (15, 15), (12, 18), (8, 22)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    pub n_replications: u64,
    pub seed: RngSeed,
    pub level: f64,
    pub bayes: BayesSettings,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            n_replications: DEFAULT_REPLICATIONS,
            seed: RngSeed(DEFAULT_SEED),
            level: 0.95,
            bayes: BayesSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub study: StudyId,
    pub reports: Vec<SimulationReport>,
}

impl StudyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn case(&self, label: &str) -> Option<&SimulationReport> {
        self.reports.iter().find(|r| r.case == label)
    }
}

/// Run one of the fixed studies with balanced arms. Each case gets a seed
/// derived from `opts.seed` and its position in the study.
pub fn paper_study(study: StudyId, opts: &StudyOptions) -> Result<StudyReport> {
    let (methods, measures) = study.roster();
    let reports = study
        .cases()
        .into_iter()
        .enumerate()
        .map(|(i, (label, science))| {
            let cfg = SimulationConfig {
                n_replications: opts.n_replications,
                methods: methods.clone(),
                measures: measures.clone(),
                level: opts.level,
                seed: opts.seed.derive(i as u64),
                bayes: opts.bayes,
                ..SimulationConfig::balanced(science)
            };
            run_case(&cfg, &label)
        })
        .collect::<Result<_>>()?;
    Ok(StudyReport { study, reports })
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv write failed: {e}"))
}

/// Tidy rows `case,method,measure,statistic,value,mc_se`.
pub fn write_tidy_csv<W: Write>(reports: &[SimulationReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["case", "method", "measure", "statistic", "value", "mc_se"]).map_err(csv_err)?;
    for r in reports {
        for s in &r.summaries {
            let rows = [
                ("bias", s.mean_bias, Some(s.bias_mc_se)),
                ("length", s.mean_length, Some(s.length_mc_se)),
                ("coverage", s.coverage, Some(s.coverage_mc_se)),
                ("non_finite", s.non_finite as f64, None),
            ];
            for (stat, value, se) in rows {
                w.write_record([
                    r.case.as_str(),
                    s.method.label(),
                    s.measure.label(),
                    stat,
                    &value.to_string(),
                    &se.map(|x| x.to_string()).unwrap_or_default(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::InvalidArgument(format!("csv write failed: {e}")))
}

/// One block per (statistic, measure) panel: a row per case with one
/// column per method.
pub fn write_panel_csv<W: Write>(reports: &[SimulationReport], writer: W) -> Result<()> {
    let mut methods: Vec<Method> = Vec::new();
    let mut measures: Vec<Measure> = Vec::new();
    for s in reports.iter().flat_map(|r| &r.summaries) {
        if !methods.contains(&s.method) {
            methods.push(s.method);
        }
        if !measures.contains(&s.measure) {
            measures.push(s.measure);
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["statistic".to_string(), "measure".to_string(), "case".to_string()];
    header.extend(methods.iter().map(|m| m.label().to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for stat in ["bias", "length", "coverage"] {
        for &measure in &measures {
            for r in reports {
                let mut row = vec![stat.to_string(), measure.label().to_string(), r.case.clone()];
                for &method in &methods {
                    let cell = r.summary(method, measure).map(|s| match stat {
                        "bias" => s.mean_bias,
                        "length" => s.mean_length,
                        _ => s.coverage,
                    });
                    row.push(cell.map(|v| v.to_string()).unwrap_or_default());
                }
                w.write_record(&row).map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::InvalidArgument(format!("csv write failed: {e}")))
}
