use metapop_core::chain::{chain_rates, mean_g, spectral_report, stationary_distribution, TruncationPolicy};
use metapop_core::meanfield::{
    comparison_bound_check, convergence_diagnose, equilibrium_target, integrate, mean_ode_check, ComparisonReport,
    IntegrationControls, CSV_REPORT_CAP,
};
use metapop_core::model::{check_hypotheses, normalize_rho, HypothesisReport, DEFAULT_H1_HORIZON};
use metapop_core::stochastic::EventCounters;
use metapop_core::threshold::{
    analyze, no_equilibrium_when_h2_fails, sweep_csv, sweep_nu, Classification, NoEquilibriumReport, ThresholdOutcome,
    ThresholdReport, CRITICAL_BAND,
};
use metapop_core::ModelSpec;
use rayon::prelude::*;
use serde::Serialize;

use crate::compare::mean_field_comparison;
use crate::config::{load_model, parse_grid, InitSpec, Output, RunConfig};
use crate::suite::{self, SuiteOptions};
use crate::{bundled, Command, ExitStatus, Failure, Options};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_N: usize = 64;
pub const DEFAULT_INTEGRATE_T: f64 = 200.0;
pub const DEFAULT_PATCHES: usize = 2000;
/// `integrate` reports convergence when the final distance is below this.
pub const CONVERGENCE_THRESHOLD: f64 = 1e-3;
/// Slack of the comparison-bound check in `integrate`.
pub const BOUND_TOL: f64 = 1e-6;
/// Points of the default `G(s)` curve.
const G_CURVE_POINTS: usize = 40;

pub(crate) fn dispatch(command: Command, opts: &Options) -> Result<ExitStatus, Failure> {
    match command {
        Command::Check => check(opts),
        Command::Threshold => threshold(opts),
        Command::Sweep => sweep(opts),
        Command::Integrate => integrate_cmd(opts),
        Command::Simulate => simulate(opts),
        Command::Verify => verify(opts),
        Command::Models => {
            for name in bundled::names() {
                println!("builtin:{name}");
            }
            Ok(ExitStatus::Success)
        }
    }
}

fn require_model(opts: &Options) -> Result<ModelSpec, Failure> {
    let arg = opts.model.as_deref().ok_or_else(|| Failure::usage("--model is required"))?;
    load_model(arg)
}

fn base_config(name: &str, opts: &Options, spec: Option<ModelSpec>) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::new(name, opts.seed, opts.tol.unwrap_or(DEFAULT_TOL))?;
    cfg.model = spec;
    cfg.quick = opts.quick;
    Ok(cfg)
}

fn emit(out: &mut Output, name: &str, report: &impl Serialize) -> Result<(), Failure> {
    print!("{}", out.report(name, report)?);
    Ok(())
}

fn h1_message(h: &HypothesisReport) -> String {
    format!(
        "the concavity/convexity hypothesis fails at i = {} ({})",
        h.first_violation_index.map(|i| i.to_string()).unwrap_or_else(|| "?".into()),
        serde_json::to_string(&h.violation).unwrap_or_default().trim_matches('"')
    )
}

/// Text printed when `threshold` refuses a model without a finite bound.
pub fn no_equilibrium_message(d: &NoEquilibriumReport) -> String {
    let min_ratio = d.points.iter().map(|p| p.ratio).fold(f64::INFINITY, f64::min);
    format!(
        "refusing: no nontrivial equilibrium. nu + d_inf - b_inf = {:.6} <= 0, so G(s) >= s for every s > 0 \
         and s = G(s) has no positive root; sampled min G(s)/s = {:.6} (lower bound {:.6})",
        d.a, min_ratio, d.ratio_bound
    )
}

fn finite_positive(name: &str, v: f64) -> Result<f64, Failure> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Failure::usage(format!("{name} must be positive and finite, got {v}")))
    }
}

fn check(opts: &Options) -> Result<ExitStatus, Failure> {
    let spec = require_model(opts)?;
    let model = spec.build()?;
    let n_check = opts.n.unwrap_or(DEFAULT_H1_HORIZON);
    let mut cfg = base_config("check", opts, Some(spec))?;
    cfg.n = Some(n_check);
    let mut out = Output::new(opts.out.as_deref(), &cfg)?;
    let report = check_hypotheses(&model, n_check);
    emit(&mut out, "check.json", &report)?;
    if !report.h1_holds {
        eprintln!("{}", h1_message(&report));
    }
    if !report.h2_holds {
        eprintln!("the subcriticality-at-infinity condition fails (margin {:.6e})", report.margin);
    }
    let status = if report.all_hold() { ExitStatus::Success } else { ExitStatus::Negative };
    out.finish(&cfg, status)?;
    Ok(status)
}

#[derive(Debug, Serialize)]
struct ThresholdSummary {
    hypotheses: HypothesisReport,
    outcome: Option<ThresholdOutcome>,
    lambda0: Option<f64>,
    alpha_est: Option<f64>,
    /// Sign changes of `G(s) - s` on the sampled grid.
    sign_changes: Option<usize>,
    diagnostic: Option<String>,
}

fn sign_changes(values: &[f64]) -> usize {
    let signs: Vec<bool> = values.iter().filter(|v| **v != 0.0).map(|v| *v > 0.0).collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

fn threshold(opts: &Options) -> Result<ExitStatus, Failure> {
    let spec = require_model(opts)?;
    let raw = spec.build()?;
    let mut cfg = base_config("threshold", opts, Some(spec))?;
    let grid = opts.grid.as_deref().map(parse_grid).transpose()?;
    cfg.grid = grid.clone();
    let tol = cfg.tol;
    let mut out = Output::new(opts.out.as_deref(), &cfg)?;
    let hypotheses = check_hypotheses(&raw, DEFAULT_H1_HORIZON);
    let mut summary =
        ThresholdSummary { hypotheses, outcome: None, lambda0: None, alpha_est: None, sign_changes: None, diagnostic: None };
    if !summary.hypotheses.h1_holds {
        let msg = h1_message(&summary.hypotheses);
        summary.diagnostic = Some(msg.clone());
        emit(&mut out, "threshold.json", &summary)?;
        eprintln!("refusing: {msg}");
        out.finish(&cfg, ExitStatus::Negative)?;
        return Ok(ExitStatus::Negative);
    }
    let model = normalize_rho(&raw);
    let status = match analyze(&model, tol)? {
        ThresholdOutcome::Report(rep) => {
            let s_grid = grid.unwrap_or_else(|| default_g_grid(&rep));
            let g: Vec<f64> = s_grid.par_iter().map(|&s| mean_g(&model, s, tol)).collect::<Result<_, _>>()?;
            let mut csv = String::from("s,G,G_minus_s\n");
            for (s, g) in s_grid.iter().zip(&g) {
                csv.push_str(&format!("{s:.16e},{g:.16e},{:.16e}\n", g - s));
            }
            out.csv("g_curve.csv", &csv)?;
            let residuals: Vec<f64> = s_grid.iter().zip(&g).filter(|(s, _)| **s > 0.0).map(|(s, g)| g - s).collect();
            summary.sign_changes = Some(sign_changes(&residuals));
            let spectral = spectral_report(&model, tol, 41)?;
            out.csv("chi.csv", &spectral.chi_csv())?;
            summary.lambda0 = spectral.lambda0;
            summary.alpha_est = Some(spectral.alpha_est);
            if rep.s_star > 0.0 {
                let sol = stationary_distribution(&chain_rates(&model, rep.s_star)?, tol, TruncationPolicy::default())?;
                out.csv("pi_star.csv", &sol.to_csv())?;
            }
            summary.outcome = Some(ThresholdOutcome::Report(rep));
            ExitStatus::Success
        }
        ThresholdOutcome::NoEquilibrium(mut diag) => {
            if let Some(g) = grid {
                diag = no_equilibrium_when_h2_fails(&model, &g)?;
            }
            let mut csv = String::from("s,G_lower,ratio,converged\n");
            for p in &diag.points {
                csv.push_str(&format!("{:.16e},{:.16e},{:.16e},{}\n", p.s, p.g_lower, p.ratio, p.converged));
            }
            out.csv("unbounded.csv", &csv)?;
            let msg = no_equilibrium_message(&diag);
            eprintln!("{msg}");
            summary.diagnostic = Some(msg);
            summary.outcome = Some(ThresholdOutcome::NoEquilibrium(diag));
            ExitStatus::Negative
        }
    };
    emit(&mut out, "threshold.json", &summary)?;
    out.finish(&cfg, status)?;
    Ok(status)
}

/// `G_CURVE_POINTS` points on `(0, max(2 s_tilde, 2 s*, 1)]`.
fn default_g_grid(rep: &ThresholdReport) -> Vec<f64> {
    let hi = (2.0 * rep.s_tilde).max(2.0 * rep.s_star).max(1.0);
    (1..=G_CURVE_POINTS).map(|k| hi * k as f64 / G_CURVE_POINTS as f64).collect()
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    points: usize,
    persistent: usize,
    /// `s* > 0` exactly when `R0 > 1 + band` at every point.
    dichotomy_consistent: bool,
    /// `lambda0 > 0` exactly when `R0 > 1` wherever `lambda0` exists and
    /// `R0` is outside the critical band; no root only when `R0 < 1`.
    lambda_sign_consistent: bool,
    /// Adjacent grid values between which the classification flips.
    transitions: Vec<(f64, f64)>,
}

fn sweep(opts: &Options) -> Result<ExitStatus, Failure> {
    let spec = require_model(opts)?;
    let raw = spec.build()?;
    let mut cfg = base_config("sweep", opts, Some(spec))?;
    let nus = parse_grid(opts.grid.as_deref().unwrap_or("0.05:1:0.05"))?;
    cfg.grid = Some(nus.clone());
    let mut out = Output::new(opts.out.as_deref(), &cfg)?;
    let hyp = check_hypotheses(&raw, DEFAULT_H1_HORIZON);
    if !hyp.h1_holds {
        eprintln!("refusing: {}", h1_message(&hyp));
        out.finish(&cfg, ExitStatus::Negative)?;
        return Ok(ExitStatus::Negative);
    }
    let rows = sweep_nu(&normalize_rho(&raw), &nus, cfg.tol)?;
    out.csv("sweep.csv", &sweep_csv(&rows))?;
    let dichotomy_consistent = rows.iter().all(|r| (r.s_star > 0.0) == (r.r0 > 1.0 + CRITICAL_BAND));
    let lambda_sign_consistent = rows.iter().all(|r| match r.lambda0 {
        _ if (r.r0 - 1.0).abs() < CRITICAL_BAND => true,
        Some(l) => (l > 0.0) == (r.r0 > 1.0),
        None => r.r0 < 1.0,
    });
    let transitions = rows
        .windows(2)
        .filter(|w| (w[0].classification == Classification::Persistent) != (w[1].classification == Classification::Persistent))
        .map(|w| (w[0].nu, w[1].nu))
        .collect();
    let summary = SweepSummary {
        points: rows.len(),
        persistent: rows.iter().filter(|r| r.classification == Classification::Persistent).count(),
        dichotomy_consistent,
        lambda_sign_consistent,
        transitions,
    };
    emit(&mut out, "sweep.json", &summary)?;
    out.finish(&cfg, ExitStatus::Success)?;
    Ok(ExitStatus::Success)
}

#[derive(Debug, Serialize)]
struct IntegrateSummary {
    n: usize,
    t_end: f64,
    init: String,
    samples: usize,
    steps_accepted: usize,
    steps_rejected: usize,
    max_mass_defect: f64,
    min_entry: f64,
    clamped_mass: f64,
    s_final: f64,
    /// Largest defect of `s' = sum_j j p_j'` against the sampled `s(t)`.
    mean_ode_defect: f64,
    s_star: Option<f64>,
    final_distance: Option<f64>,
    convergence_threshold: f64,
    converged: Option<bool>,
    monotone_after_burn_in: Option<bool>,
    comparison: Option<ComparisonReport>,
}

fn integrate_cmd(opts: &Options) -> Result<ExitStatus, Failure> {
    let spec = require_model(opts)?;
    let raw = spec.build()?;
    let mut cfg = base_config("integrate", opts, Some(spec))?;
    let n = opts.n.unwrap_or(DEFAULT_N);
    let t_end = finite_positive("--T", opts.t_end.unwrap_or(DEFAULT_INTEGRATE_T))?;
    let init = InitSpec::parse(opts.init.as_deref().unwrap_or("delta:1"))?;
    cfg.n = Some(n);
    cfg.t_end = Some(t_end);
    cfg.init = Some(init.label());
    let mut out = Output::new(opts.out.as_deref(), &cfg)?;
    let model = normalize_rho(&raw);
    let hyp = check_hypotheses(&raw, DEFAULT_H1_HORIZON);
    let p0 = init.state(n)?;
    let controls = IntegrationControls { sample_dt: t_end / 1000.0, ..IntegrationControls::default() };
    let traj = integrate(&model, &p0, t_end, &controls)?;
    out.csv("trajectory.csv", &traj.to_csv(CSV_REPORT_CAP))?;

    let mut summary = IntegrateSummary {
        n,
        t_end,
        init: init.label(),
        samples: traj.samples.len(),
        steps_accepted: traj.steps_accepted,
        steps_rejected: traj.steps_rejected,
        max_mass_defect: traj.max_mass_defect(),
        min_entry: traj.min_entry,
        clamped_mass: traj.clamped_mass,
        s_final: traj.last().s,
        mean_ode_defect: mean_ode_check(&model, &traj),
        s_star: None,
        final_distance: None,
        convergence_threshold: CONVERGENCE_THRESHOLD,
        converged: None,
        monotone_after_burn_in: None,
        comparison: None,
    };
    if hyp.h1_holds {
        summary.comparison = Some(comparison_bound_check(&model, &traj, BOUND_TOL)?);
    }
    if hyp.all_hold() {
        let (s_star, target) = equilibrium_target(&model, cfg.tol)?;
        let conv = convergence_diagnose(&traj, &target);
        let mut csv = String::from("t,m1_distance\n");
        for (t, d) in &conv.distances {
            csv.push_str(&format!("{t:.16e},{d:.16e}\n"));
        }
        out.csv("distance.csv", &csv)?;
        summary.s_star = Some(s_star);
        summary.final_distance = Some(conv.final_distance);
        summary.converged = Some(conv.final_distance < CONVERGENCE_THRESHOLD);
        summary.monotone_after_burn_in = Some(conv.monotone_after_burn_in);
    }
    emit(&mut out, "integrate.json", &summary)?;
    out.finish(&cfg, ExitStatus::Success)?;
    Ok(ExitStatus::Success)
}

#[derive(Debug, Serialize)]
struct SimulateSummary {
    patches: usize,
    init: String,
    ode_truncation: usize,
    counters: EventCounters,
    initial_population: u64,
    final_population: u64,
    ledger_balanced: bool,
    max_abs_z: f64,
    max_abs_error: f64,
    all_within_band: bool,
}

fn simulate(opts: &Options) -> Result<ExitStatus, Failure> {
    let spec = require_model(opts)?;
    let raw = spec.build()?;
    let mut cfg = base_config("simulate", opts, Some(spec))?;
    let patches = opts.patches.unwrap_or(DEFAULT_PATCHES);
    if patches < 2 {
        return Err(Failure::usage(format!("--patches must be at least 2, got {patches}")));
    }
    let grid = match (&opts.grid, opts.t_end) {
        (Some(g), _) => parse_grid(g)?,
        (None, Some(t)) => {
            let t = finite_positive("--T", t)?;
            (1..=10).map(|k| t * k as f64 / 10.0).collect()
        }
        (None, None) => parse_grid("5:50:5")?,
    };
    let init = InitSpec::parse(opts.init.as_deref().unwrap_or("delta:1"))?;
    let n_ode = opts.n.unwrap_or(DEFAULT_N);
    cfg.patches = Some(patches);
    cfg.grid = Some(grid.clone());
    cfg.init = Some(init.label());
    cfg.n = Some(n_ode);
    let mut out = Output::new(opts.out.as_deref(), &cfg)?;
    let (run, cmp) = mean_field_comparison(&raw, &init.histogram(patches), &grid, cfg.seed, n_ode)?;
    if !run.ledger_balanced {
        return Err(Failure {
            status: ExitStatus::Numerical,
            message: "population ledger does not reconcile with the event counters".into(),
        });
    }
    out.csv("empirical.csv", &run.to_csv(CSV_REPORT_CAP))?;
    out.csv("comparison.csv", &cmp.to_csv())?;
    let summary = SimulateSummary {
        patches,
        init: init.label(),
        ode_truncation: cmp.ode_truncation,
        counters: run.counters,
        initial_population: run.initial_population,
        final_population: run.final_population,
        ledger_balanced: run.ledger_balanced,
        max_abs_z: cmp.max_abs_z,
        max_abs_error: cmp.max_abs_error,
        all_within_band: cmp.all_within_band,
    };
    emit(&mut out, "simulate.json", &summary)?;
    out.finish(&cfg, ExitStatus::Success)?;
    Ok(ExitStatus::Success)
}

#[derive(Debug, Serialize)]
struct VerifySummary {
    quick: bool,
    all_passed: bool,
    passed: usize,
    failed: usize,
    checks: Vec<suite::CheckOutcome>,
}

fn verify(opts: &Options) -> Result<ExitStatus, Failure> {
    let spec = opts.model.as_deref().map(load_model).transpose()?;
    let cfg = base_config("verify", opts, spec.clone())?;
    let mut out = Output::new(opts.out.as_deref(), &cfg)?;
    let suite_opts = SuiteOptions { quick: opts.quick, seed: opts.seed };
    let checks = match &spec {
        Some(s) => suite::model_suite(s, &suite_opts),
        None => suite::default_suite(&suite_opts),
    };
    for c in &checks {
        eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.id, c.claim);
    }
    let passed = checks.iter().filter(|c| c.passed).count();
    let summary =
        VerifySummary { quick: opts.quick, all_passed: passed == checks.len(), passed, failed: checks.len() - passed, checks };
    emit(&mut out, "verify.json", &summary)?;
    let status = if summary.all_passed { ExitStatus::Success } else { ExitStatus::Negative };
    out.finish(&cfg, status)?;
    Ok(status)
}
