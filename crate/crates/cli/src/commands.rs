use std::fs;
use std::io::{self, Write};

use serde::Serialize;

use pottab::bayes::{draw_measure, sensitivity_grid, AssociationModel, BetaPrior, CredibleKind, GridSpec, SensitivityGrid};
use pottab::fisher::{fisher_exact_with_rule, fisher_monte_carlo, FisherResult, TwoSidedRule};
use pottab::neyman::{estimate_crd, normal_interval, small_sample_warning, ConfidenceInterval, CrdEstimate};
use pottab::nonlinear::{estimate_measure, NonlinearEstimate, NonlinearOptions};
use pottab::sim::{paper_study, run_case, write_panel_csv, write_tidy_csv, BayesSettings, SimulationConfig, SimulationReport, StudyOptions};
use pottab::{Measure, Method, ObservedTable, RngSeed, ScienceTable};

use crate::input::tables;
use crate::{AnalyzeArgs, FisherArgs, SensitivityArgs, SimulateArgs, EXIT_ANALYSIS, EXIT_USAGE};

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: String) -> Failure {
        Failure { code: EXIT_USAGE, message }
    }

    pub fn analysis(e: pottab::Error) -> Failure {
        Failure { code: EXIT_ANALYSIS, message: e.to_string() }
    }

    fn io(e: impl std::fmt::Display) -> Failure {
        Failure { code: EXIT_ANALYSIS, message: format!("write failed: {e}") }
    }
}

type CmdResult = Result<(), Failure>;

fn print_json<T: Serialize>(items: &[T]) -> CmdResult {
    let text = if items.len() == 1 {
        serde_json::to_string_pretty(&items[0])
    } else {
        serde_json::to_string_pretty(items)
    }
    .map_err(Failure::io)?;
    println!("{text}");
    Ok(())
}

#[derive(Debug, Serialize)]
struct BayesSummary {
    median: f64,
    interval: Option<ConfidenceInterval>,
    n_draws: u64,
    non_finite: u64,
}

#[derive(Debug, Serialize)]
struct MeasureReport {
    measure: Measure,
    estimate: NonlinearEstimate,
    intervals: Vec<ConfidenceInterval>,
    bayes: BayesSummary,
}

#[derive(Debug, Serialize)]
struct AnalysisReport {
    table: ObservedTable,
    level: f64,
    seed: RngSeed,
    prior: BetaPrior,
    options: NonlinearOptions,
    fisher: FisherResult,
    crd: CrdEstimate,
    measures: Vec<MeasureReport>,
    warnings: Vec<String>,
}

const FREQUENTIST: [Method; 3] = [Method::Neyman, Method::ImprovedNeyman, Method::Binomial];

fn analyze_one(obs: &ObservedTable, args: &AnalyzeArgs) -> Result<AnalysisReport, Failure> {
    let opts = NonlinearOptions { haldane: args.haldane, finite_sample_denominators: args.finite_sample_denominators };
    let seed = RngSeed(args.seed.seed);
    let crd = estimate_crd(obs).map_err(Failure::analysis)?;
    let mut warnings: Vec<String> = small_sample_warning(obs, &crd).into_iter().collect();
    let kind = if args.hdi { CredibleKind::Hdi } else { CredibleKind::EqualTailed };
    let mut measures = Vec::new();
    for measure in Measure::ALL {
        let estimate = estimate_measure(obs, measure, opts).map_err(Failure::analysis)?;
        let mut intervals = Vec::new();
        if estimate.finite {
            let bounds = (args.clip && measure == Measure::Crd).then_some((-1.0, 1.0));
            for method in FREQUENTIST {
                let (point, var) = estimate.point_and_variance(method).expect("frequentist method");
                intervals.push(normal_interval(point, var, args.level, method.label(), bounds).map_err(Failure::analysis)?);
            }
        } else {
            warnings.push(format!("{measure}: an observed cell is zero, so the plug-in estimate is not finite (try --haldane)"));
        }
        let draws = draw_measure(obs, &args.prior.prior, AssociationModel::Independent, measure, args.draws, seed)
            .map_err(Failure::analysis)?;
        warnings.extend(draws.warnings.iter().map(|w| format!("{measure} posterior: {w}")));
        let bayes = if draws.draws.is_empty() {
            BayesSummary { median: f64::NAN, interval: None, n_draws: draws.n_draws, non_finite: draws.non_finite }
        } else {
            BayesSummary {
                median: draws.median(),
                interval: Some(draws.credible_interval(args.level, kind).map_err(Failure::analysis)?),
                n_draws: draws.n_draws,
                non_finite: draws.non_finite,
            }
        };
        measures.push(MeasureReport { measure, estimate, intervals, bayes });
    }
    Ok(AnalysisReport {
        table: *obs,
        level: args.level,
        seed,
        prior: args.prior.prior,
        options: opts,
        fisher: fisher_exact_with_rule(obs, TwoSidedRule::AbsTau),
        crd,
        measures,
        warnings,
    })
}

fn fmt_ci(ci: &ConfidenceInterval) -> String {
    format!("[{:.4}, {:.4}]", ci.lower, ci.upper)
}

fn print_analysis(r: &AnalysisReport) {
    let t = &r.table;
    println!("observed table n11,n10,n01,n00 = {t}  (N1 = {}, N0 = {})", t.n_treated(), t.n_control());
    println!("seed {}  prior {},{},{},{}", r.seed.0, r.prior.alpha1, r.prior.beta1, r.prior.alpha0, r.prior.beta0);
    println!(
        "Fisher exact test: p = {:.4} two-sided, {:.4} lower, {:.4} upper{}",
        r.fisher.p_two_sided,
        r.fisher.p_lower,
        r.fisher.p_upper,
        if r.fisher.degenerate { " (degenerate margins)" } else { "" }
    );
    println!("p1_hat = {:.4}  p0_hat = {:.4}", r.crd.p1_hat, r.crd.p0_hat);
    let pct = (r.level * 100.0).round();
    for m in &r.measures {
        let e = &m.estimate;
        println!();
        println!("{}", m.measure);
        println!("  point estimate          {:.4}", e.point);
        if m.measure != Measure::Crd {
            println!("  bias-corrected estimate {:.4}", e.point_bias_corrected);
        }
        if e.finite {
            println!(
                "  variance                neyman {:.3}  improved {:.3}  binomial {:.3}",
                e.v_neyman, e.v_improved, e.v_binomial
            );
            println!(
                "  standard error          neyman {:.4}  improved {:.4}  binomial {:.4}",
                e.v_neyman.sqrt(),
                e.v_improved.sqrt(),
                e.v_binomial.sqrt()
            );
            if m.measure == Measure::Crd {
                println!(
                    "  variance reduction      {:.2}%  (independence-posterior approximation {:.3})",
                    100.0 * r.crd.reduction(),
                    r.crd.v_independent
                );
            }
        }
        for ci in &m.intervals {
            println!("  {pct}% {:<19} {}", ci.method, fmt_ci(ci));
        }
        match &m.bayes.interval {
            Some(ci) => println!("  {pct}% bayes ({:<12} {}  median {:.4}", format!("{})", ci.method), fmt_ci(ci), m.bayes.median),
            None => println!("  bayes                   no finite posterior draws"),
        }
    }
    for w in &r.warnings {
        println!("warning: {w}");
    }
}

pub fn analyze(args: &AnalyzeArgs) -> CmdResult {
    let reports = tables(&args.source)?
        .iter()
        .map(|t| analyze_one(t, args))
        .collect::<Result<Vec<_>, _>>()?;
    if args.json {
        return print_json(&reports);
    }
    for (i, r) in reports.iter().enumerate() {
        if i > 0 {
            println!("\n----\n");
        }
        print_analysis(r);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SensitivityReport {
    table: ObservedTable,
    level: f64,
    seed: RngSeed,
    prior: BetaPrior,
    n_draws: u64,
    grids: Vec<SensitivityGrid>,
}

pub fn sensitivity(args: &SensitivityArgs) -> CmdResult {
    let spec = GridSpec {
        log_gamma_min: args.log_gamma_min,
        log_gamma_max: args.log_gamma_max,
        n_points: args.points as usize,
    };
    spec.values().map_err(|e| Failure::usage(e.to_string()))?;
    let seed = RngSeed(args.seed.seed);
    let mut reports = Vec::new();
    for obs in tables(&args.source)? {
        let grids = args
            .measure
            .measures()
            .into_iter()
            .map(|m| sensitivity_grid(&obs, &args.prior.prior, spec, m, args.level, args.draws, seed))
            .collect::<Result<Vec<_>, _>>()
            .map_err(Failure::analysis)?;
        for g in &grids {
            for w in &g.warnings {
                eprintln!("warning: {} {w}", g.measure);
            }
        }
        reports.push(SensitivityReport { table: obs, level: args.level, seed, prior: args.prior.prior, n_draws: args.draws, grids });
    }
    if args.json {
        return print_json(&reports);
    }
    eprintln!("seed {}", seed.0);
    let mut w = csv::Writer::from_writer(io::stdout().lock());
    w.write_record(["table", "measure", "label", "log_gamma", "lower", "upper", "median", "rejection_rate", "non_finite"])
        .map_err(Failure::io)?;
    for r in &reports {
        let table = r.table.to_string();
        for g in &r.grids {
            let measure = g.measure.label();
            let mut row = |label: &str, lg: String, ci: &ConfidenceInterval, median: String, rate: String, nf: String| {
                w.write_record([table.as_str(), measure, label, &lg, &ci.lower.to_string(), &ci.upper.to_string(), &median, &rate, &nf])
            };
            for p in &g.points {
                row("grid", p.log_gamma.to_string(), &p.interval, p.median.to_string(), p.rejection_rate.to_string(), p.non_finite.to_string())
                    .map_err(Failure::io)?;
            }
            row("independence", "0".into(), &g.independence, String::new(), String::new(), String::new()).map_err(Failure::io)?;
            let p = &g.points[g.widest];
            row("widest", p.log_gamma.to_string(), &p.interval, p.median.to_string(), p.rejection_rate.to_string(), p.non_finite.to_string())
                .map_err(Failure::io)?;
        }
    }
    w.flush().map_err(Failure::io)
}

#[derive(Debug, Serialize)]
struct SimulationOutput {
    study: String,
    seed: RngSeed,
    reports: Vec<SimulationReport>,
}

pub fn simulate(args: &SimulateArgs) -> CmdResult {
    let seed = RngSeed(args.seed.seed);
    let bayes = BayesSettings { prior: args.prior.prior, n_draws: args.draws };
    let output = match (args.paper_study, args.science) {
        (Some(study), _) => {
            let opts = StudyOptions { n_replications: args.reps, seed, level: args.level, bayes };
            let report = paper_study(study, &opts).map_err(Failure::analysis)?;
            SimulationOutput { study: study.label().to_string(), seed, reports: report.reports }
        }
        (None, Some(c)) => {
            let science = ScienceTable::new(c[0], c[1], c[2], c[3]).map_err(Failure::analysis)?;
            let n1 = args.n1.ok_or_else(|| Failure::usage("--science needs --n1".into()))?;
            let mut cfg = SimulationConfig::new(science, n1);
            cfg.n_replications = args.reps;
            cfg.level = args.level;
            cfg.seed = seed;
            cfg.bayes = bayes;
            cfg.measures = args.measure.measures();
            if !args.methods.is_empty() {
                cfg.methods = args.methods.clone();
            }
            let report = run_case(&cfg, "custom").map_err(Failure::analysis)?;
            SimulationOutput { study: "custom".into(), seed, reports: vec![report] }
        }
        (None, None) => return Err(Failure::usage("need --paper-study or --science".into())),
    };

    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir).map_err(Failure::io)?;
        let json = serde_json::to_string_pretty(&output).map_err(Failure::io)?;
        fs::write(dir.join("report.json"), json + "\n").map_err(Failure::io)?;
        let tidy = fs::File::create(dir.join("report.csv")).map_err(Failure::io)?;
        write_tidy_csv(&output.reports, tidy).map_err(Failure::analysis)?;
        let panel = fs::File::create(dir.join("panel.csv")).map_err(Failure::io)?;
        write_panel_csv(&output.reports, panel).map_err(Failure::analysis)?;
        eprintln!("seed {}: wrote report.json, report.csv and panel.csv to {}", seed.0, dir.display());
        return Ok(());
    }
    if args.json {
        return print_json(std::slice::from_ref(&output));
    }
    eprintln!("seed {}", seed.0);
    let out = io::stdout().lock();
    if args.plot_data {
        write_panel_csv(&output.reports, out).map_err(Failure::analysis)
    } else {
        write_tidy_csv(&output.reports, out).map_err(Failure::analysis)
    }
}

#[derive(Debug, Serialize)]
struct FisherReport {
    table: ObservedTable,
    rule: TwoSidedRule,
    seed: Option<RngSeed>,
    result: FisherResult,
}

pub fn fisher(args: &FisherArgs) -> CmdResult {
    let rule = if args.pmf_ordering { TwoSidedRule::PmfOrdering } else { TwoSidedRule::AbsTau };
    if args.pmf_ordering && args.monte_carlo.is_some() {
        return Err(Failure::usage("--pmf-ordering applies to the exact test only".into()));
    }
    let mut reports = Vec::new();
    for obs in tables(&args.source)? {
        let (seed, result) = match args.monte_carlo {
            Some(n) => {
                let seed = RngSeed(args.seed.seed);
                (Some(seed), fisher_monte_carlo(&obs, n, seed).map_err(Failure::analysis)?)
            }
            None => (None, fisher_exact_with_rule(&obs, rule)),
        };
        reports.push(FisherReport { table: obs, rule, seed, result });
    }
    if args.json {
        return print_json(&reports);
    }
    let mut out = io::stdout().lock();
    for r in &reports {
        let f = &r.result;
        let how = match (f.n_draws, r.seed) {
            (0, _) => "exact".to_string(),
            (n, Some(s)) => format!("Monte Carlo, {n} draws, seed {}", s.0),
            (n, None) => format!("Monte Carlo, {n} draws"),
        };
        writeln!(
            out,
            "{}: p = {:.6} two-sided, {:.6} lower, {:.6} upper ({how}){}",
            r.table,
            f.p_two_sided,
            f.p_lower,
            f.p_upper,
            if f.degenerate { ", degenerate margins" } else { "" }
        )
        .map_err(Failure::io)?;
    }
    Ok(())
}
