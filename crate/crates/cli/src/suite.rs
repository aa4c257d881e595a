//! Verification suite: each check states a property of the model, runs
//! an independent computation and reports pass/fail with its numbers.

use metapop_core::chain::{
    chain_rates, characteristic_function, dominant_eigenvalue, lambda0, mean_g, r0, renewal_identity_oracle,
    stationary_distribution, TruncationPolicy,
};
use metapop_core::meanfield::{
    comparison_bound_check, convergence_diagnose, equilibrium_target, integrate, two_truncation_consistency,
    IntegrationControls, TruncatedState,
};
use metapop_core::model::{check_hypotheses, normalize_rho, DEFAULT_H1_HORIZON};
use metapop_core::stochastic::{coupling_experiment, r0_monte_carlo, second_difference_experiment};
use metapop_core::threshold::{analyze, s_tilde, solve_fixed_point, sweep_nu, ThresholdOutcome, CRITICAL_BAND};
use metapop_core::{m1_distance, ModelSpec, RateFamily, RateModel, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::bundled;
use crate::compare::mean_field_comparison;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteOptions {
    pub quick: bool,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { quick: false, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub id: String,
    pub claim: String,
    pub passed: bool,
    pub detail: Value,
}

fn outcome(id: &str, claim: &str, r: Result<(bool, Value)>) -> CheckOutcome {
    let (passed, detail) = r.unwrap_or_else(|e| (false, json!({ "error": e.to_string() })));
    CheckOutcome { id: id.into(), claim: claim.into(), passed, detail }
}

fn bundled_model(name: &str) -> Result<RateModel> {
    Ok(normalize_rho(&bundled::spec(name).build()?))
}

/// Catastrophe rates of the threshold sweeps.
pub fn sweep_nus(quick: bool) -> Vec<f64> {
    let (count, step) = if quick { (10, 0.1) } else { (20, 0.05) };
    (1..=count).map(|k| k as f64 * step).collect()
}

pub fn equilibrium_mean_closed_form() -> CheckOutcome {
    let claim = "reversible constant model (b=1, d=2, gamma=1, nu=0): G(s) = s/2 within 1e-8, tail < 1e-12";
    outcome(
        "equilibrium_mean_closed_form",
        claim,
        (|| {
            let m = bundled_model("constant_reversible")?;
            let mut ok = true;
            let mut points = Vec::new();
            for s in [0.5, 1.0, 3.0, 10.0] {
                let sol = stationary_distribution(&chain_rates(&m, s)?, 1e-13, TruncationPolicy::default())?;
                let err = (sol.mean - s / 2.0).abs();
                ok &= err < 1e-8 && sol.tail_mass < 1e-12;
                points.push(json!({ "s": s, "G": sol.mean, "error": err, "tail": sol.tail_mass, "n": sol.n }));
            }
            Ok((ok, json!({ "points": points })))
        })(),
    )
}

pub fn r0_closed_form(opts: &SuiteOptions) -> CheckOutcome {
    let reps: u64 = if opts.quick { 20_000 } else { 100_000 };
    outcome(
        "r0_closed_form",
        "constant model (b=1, d=1, gamma=1, nu=0.5): R0 = 2/3 by the killed solve (1e-8) and by Monte Carlo (3 SE)",
        (|| {
            let m = bundled_model("constant_subcritical")?;
            let exact = 2.0 / 3.0;
            let solved = r0(&m, 1e-12)?;
            let mc = r0_monte_carlo(&m, reps, opts.seed)?;
            let z = (mc.mean - exact) / mc.stderr;
            let ok = (solved - exact).abs() < 1e-8 && z.abs() < 3.0 && mc.censored == 0;
            Ok((ok, json!({ "solved": solved, "solve_error": (solved - exact).abs(), "monte_carlo": mc, "z": z })))
        })(),
    )
}

fn count_sign_changes(values: &[f64]) -> usize {
    let signs: Vec<bool> = values.iter().filter(|v| **v != 0.0).map(|v| *v > 0.0).collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

pub fn threshold_dichotomy(opts: &SuiteOptions) -> CheckOutcome {
    outcome(
        "threshold_dichotomy",
        "logistic model, nu sweep: s* > 0 iff R0 > 1 + 1e-6, and G(s) - s changes sign once on (0, 2 s_tilde) iff s* > 0",
        (|| {
            let m = bundled_model("logistic")?;
            let nus = sweep_nus(opts.quick);
            let rows = sweep_nu(&m, &nus, 1e-10)?;
            let checked: Vec<(bool, Value)> = rows
                .par_iter()
                .map(|row| -> Result<(bool, Value)> {
                    let mn = m.with_nu(row.nu)?;
                    let hi = (2.0 * row.s_tilde).max(1.0);
                    let k = 40;
                    let diffs: Vec<f64> = (1..=k)
                        .map(|i| {
                            let s = hi * i as f64 / (k + 1) as f64;
                            mean_g(&mn, s, 1e-12).map(|g| g - s)
                        })
                        .collect::<Result<_>>()?;
                    let changes = count_sign_changes(&diffs);
                    let persistent = row.s_star > 0.0;
                    let ok = persistent == (row.r0 > 1.0 + CRITICAL_BAND) && changes == usize::from(persistent);
                    Ok((ok, json!({ "nu": row.nu, "r0": row.r0, "s_star": row.s_star, "sign_changes": changes })))
                })
                .collect::<Result<_>>()?;
            let ok = checked.iter().all(|c| c.0);
            let persistent = rows.iter().filter(|r| r.s_star > 0.0).count();
            Ok((ok, json!({ "points": rows.len(), "persistent": persistent, "rows": checked.into_iter().map(|c| c.1).collect::<Vec<_>>() })))
        })(),
    )
}

/// Grid of `count` points on `(0, 2 s_tilde]` (or `(0, 1]` if `s_tilde = 0`).
fn concavity_grid(m: &RateModel, count: usize) -> Result<Vec<f64>> {
    let hi = (2.0 * s_tilde(m)?).max(1.0);
    Ok((1..=count).map(|k| hi * k as f64 / count as f64).collect())
}

/// First and second differences of `G` on `grid`.
fn g_differences(m: &RateModel, grid: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let g: Vec<f64> = grid.par_iter().map(|&s| mean_g(m, s, 1e-13)).collect::<Result<_>>()?;
    let first: Vec<f64> = g.windows(2).map(|w| w[1] - w[0]).collect();
    let second: Vec<f64> = g.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).collect();
    Ok((first, second))
}

pub fn g_monotone_concave(opts: &SuiteOptions) -> CheckOutcome {
    let points = if opts.quick { 10 } else { 30 };
    outcome(
        "g_monotone_concave",
        "three logistic models: G has positive first and negative second differences on a grid over (0, 2 s_tilde]",
        (|| {
            let mut ok = true;
            let mut models = Vec::new();
            for name in bundled::LOGISTIC {
                let m = bundled_model(name)?;
                let grid = concavity_grid(&m, points)?;
                let (first, second) = g_differences(&m, &grid)?;
                let min_first = first.iter().cloned().fold(f64::INFINITY, f64::min);
                let max_second = second.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                ok &= min_first > 0.0 && max_second < 0.0;
                models.push(json!({ "model": name, "points": grid.len(), "s_max": grid.last(), "min_first_difference": min_first, "max_second_difference": max_second }));
            }
            Ok((ok, json!({ "models": models })))
        })(),
    )
}

pub fn spectral_consistency(opts: &SuiteOptions) -> CheckOutcome {
    outcome(
        "spectral_consistency",
        "chi(0) = R0 within 1e-6, sign(lambda0) = sign(R0 - 1) over the nu sweep, root matches the N=400 Perron root within 1e-5",
        (|| {
            let m = bundled_model("logistic")?;
            let rows: Vec<(bool, Value)> = sweep_nus(opts.quick)
                .par_iter()
                .map(|&nu| -> Result<(bool, Value)> {
                    let mn = m.with_nu(nu)?;
                    let r = r0(&mn, 1e-12)?;
                    let chi0 = characteristic_function(&mn, 0.0, 1e-12)?;
                    let l = lambda0(&mn, 1e-10)?;
                    let sign_ok = match l {
                        _ if (r - 1.0).abs() < CRITICAL_BAND => true,
                        Some(l) => (l > 0.0) == (r > 1.0),
                        None => r < 1.0,
                    };
                    let ok = (chi0 - r).abs() < 1e-6 && sign_ok;
                    Ok((ok, json!({ "nu": nu, "r0": r, "chi0_gap": (chi0 - r).abs(), "lambda0": l })))
                })
                .collect::<Result<_>>()?;
            let mut ok = rows.iter().all(|r| r.0);
            let mut eigen = Vec::new();
            for nu in [0.5, 1.0] {
                let mn = m.with_nu(nu)?;
                let root = lambda0(&mn, 1e-12)?;
                let perron = dominant_eigenvalue(&mn, 400)?;
                let gap = root.map(|l| (l - perron.value).abs());
                ok &= gap.is_some_and(|g| g < 1e-5);
                eigen.push(json!({ "nu": nu, "lambda0": root, "perron": perron.value, "gap": gap }));
            }
            Ok((ok, json!({ "sweep": rows.into_iter().map(|r| r.1).collect::<Vec<_>>(), "eigenvalue": eigen })))
        })(),
    )
}

/// Final time of the convergence runs.
pub fn convergence_horizon(quick: bool) -> f64 {
    if quick {
        100.0
    } else {
        200.0
    }
}

struct ConvergenceCase {
    label: String,
    model: RateModel,
    p0: TruncatedState,
    persistent: bool,
}

fn convergence_cases() -> Result<Vec<ConvergenceCase>> {
    let n = 64;
    let logistic = bundled_model("logistic")?;
    let mut uniform = vec![0.0; n + 1];
    uniform[..=10].iter_mut().for_each(|v| *v = 1.0 / 11.0);
    let mut cases = vec![
        ConvergenceCase { label: "logistic delta_1".into(), model: logistic.clone(), p0: TruncatedState::point_mass(1, n)?, persistent: true },
        ConvergenceCase { label: "logistic delta_5".into(), model: logistic.clone(), p0: TruncatedState::point_mass(5, n)?, persistent: true },
        ConvergenceCase { label: "logistic uniform_0_10".into(), model: logistic.clone(), p0: TruncatedState::new(uniform, 0.0)?, persistent: true },
        ConvergenceCase { label: "logistic nu=1 delta_5".into(), model: logistic.with_nu(1.0)?, p0: TruncatedState::point_mass(5, n)?, persistent: false },
    ];
    cases.push(ConvergenceCase {
        label: "constant_subcritical delta_5".into(),
        model: bundled_model("constant_subcritical")?,
        p0: TruncatedState::point_mass(5, n)?,
        persistent: false,
    });
    Ok(cases)
}

/// Convergence to the equilibrium and the comparison bounds, from the
/// same trajectories.
pub fn convergence_and_bounds(opts: &SuiteOptions) -> [CheckOutcome; 2] {
    let t_end = convergence_horizon(opts.quick);
    let runs = convergence_cases().and_then(|cases| {
        cases
            .into_par_iter()
            .map(|c| {
                let traj = integrate(&c.model, &c.p0, t_end, &IntegrationControls::default())?;
                Ok((c, traj))
            })
            .collect::<Result<Vec<_>>>()
    });
    let convergence = outcome(
        "convergence",
        "persistent logistic model from delta_1, delta_5, uniform{0..10}: d(p(T), pi*) < 1e-3; extinct models: d(p(T), e0) < 1e-4; mass defect < 1e-9",
        runs.as_ref().map_err(Clone::clone).and_then(|runs| {
            let mut ok = true;
            let mut rows = Vec::new();
            for (c, traj) in runs {
                let (s_star, target) = equilibrium_target(&c.model, 1e-12)?;
                let d = convergence_diagnose(traj, &target).final_distance;
                let limit = if c.persistent { 1e-3 } else { 1e-4 };
                let defect = traj.max_mass_defect();
                let pass = d < limit && defect < 1e-9 && (s_star > 0.0) == c.persistent;
                ok &= pass;
                rows.push(json!({ "case": c.label, "T": t_end, "s_star": s_star, "final_distance": d, "limit": limit, "max_mass_defect": defect, "passed": pass }));
            }
            Ok((ok, json!({ "runs": rows })))
        }),
    );
    let bounds = outcome(
        "comparison_bounds",
        "every trajectory satisfies s(t) <= y(t) + 1e-6 for the scalar comparison y, and s(t) <= max(s(0), s_tilde) + 1e-6 after burn-in",
        runs.as_ref().map_err(Clone::clone).and_then(|runs| {
            let mut ok = true;
            let mut rows = Vec::new();
            for (c, traj) in runs {
                match comparison_bound_check(&c.model, traj, 1e-6) {
                    Ok(rep) => rows.push(json!({ "case": c.label, "report": rep })),
                    Err(e) => {
                        ok = false;
                        rows.push(json!({ "case": c.label, "error": e.to_string() }));
                    }
                }
            }
            Ok((ok, json!({ "runs": rows })))
        }),
    );
    [convergence, bounds]
}

/// Seeds of the finite-population comparison.
pub fn mean_field_seeds(opts: &SuiteOptions) -> Vec<u64> {
    let count = if opts.quick { 1 } else { 3 };
    (0..count).map(|k| opts.seed + k).collect()
}

pub fn mean_field_agreement(opts: &SuiteOptions) -> CheckOutcome {
    outcome(
        "mean_field_agreement",
        "2000 patches of the logistic model from delta_1: |p_hat_i(t) - p_i(t)| <= 3 sqrt(p_i(1 - p_i)/n) + 0.02 for i <= 10 at t = 5, 10, ..., 50",
        (|| {
            let m = bundled::spec("logistic").build()?;
            let patches = 2000;
            let grid: Vec<f64> = (1..=10).map(|k| 5.0 * k as f64).collect();
            let hist = vec![0, patches];
            let results: Vec<_> = mean_field_seeds(opts)
                .into_par_iter()
                .map(|seed| mean_field_comparison(&m, &hist, &grid, seed, 64).map(|(_, c)| c))
                .collect::<Result<_>>()?;
            let ok = results.iter().all(|c| c.all_within_band && c.ledger_balanced);
            let rows: Vec<Value> = results
                .iter()
                .map(|c| json!({ "seed": c.seed, "all_within_band": c.all_within_band, "max_abs_z": c.max_abs_z, "max_abs_error": c.max_abs_error, "events": c.counters.total_events() }))
                .collect();
            Ok((ok, json!({ "patches": patches, "seeds": rows })))
        })(),
    )
}

pub fn coupling_order(opts: &SuiteOptions) -> CheckOutcome {
    let reps: u64 = if opts.quick { 2_000 } else { 10_000 };
    outcome(
        "coupling_order",
        "coupled logistic chains from 4 > 1 (s = 1) stay ordered at every event, and P[Z1_t > Z2_t] <= exp(-nu t) + 3 SE",
        (|| {
            let m = bundled_model("logistic")?;
            let grid = [0.5, 1.0, 2.0, 4.0, 8.0];
            let rep = coupling_experiment(&m, 1.0, 4, 1, &grid, reps, opts.seed)?;
            let ok = (0..grid.len()).all(|i| rep.prob_apart[i] <= rep.catastrophe_bound[i] + 3.0 * rep.prob_apart_se[i]);
            Ok((ok, json!({ "reps": reps, "events_checked": rep.events_checked, "order_violations": 0, "report": rep })))
        })(),
    )
}

/// `(m values, replicates per m)` of the second-difference experiment.
pub fn second_difference_design(quick: bool) -> (Vec<u64>, u64) {
    if quick {
        ((0..=2).collect(), 200_000)
    } else {
        ((0..=5).collect(), 4_000_000)
    }
}

pub fn second_differences(opts: &SuiteOptions) -> CheckOutcome {
    let (ms, reps) = second_difference_design(opts.quick);
    outcome(
        "second_differences",
        "common-random-number estimates of E^(m+2) Z_t - 2 E^(m+1) Z_t + E^m Z_t (logistic, s = 0) are negative at 3 SE for t = 0.5, 1, 2",
        (|| {
            let m = bundled_model("logistic")?;
            let table = second_difference_experiment(&m, 0.0, &ms, &[0.5, 1.0, 2.0], reps, opts.seed)?;
            Ok((table.all_negative(), serde_json::to_value(&table).expect("table serializes")))
        })(),
    )
}

/// Immigration levels at which the two stationary solvers are compared.
const ORACLE_LEVELS: [f64; 4] = [0.25, 0.5, 1.0, 2.0];

fn oracle_gaps(m: &RateModel, levels: &[f64]) -> Result<Vec<(f64, f64)>> {
    levels
        .par_iter()
        .map(|&s| {
            let direct = stationary_distribution(&chain_rates(m, s)?, 1e-13, TruncationPolicy::default())?;
            let renewal = renewal_identity_oracle(m, s, 1e-13)?;
            Ok((s, m1_distance(&direct.pi, &renewal.pi)))
        })
        .collect()
}

pub fn oracle_equivalence(opts: &SuiteOptions) -> CheckOutcome {
    let t_end = if opts.quick { 20.0 } else { 50.0 };
    outcome(
        "oracle_equivalence",
        "stationary solve and renewal construction agree within 1e-9 (m1) on the bundled models with nu > 0; truncations N and 2N agree within 1e-6",
        (|| {
            let mut ok = true;
            let mut pairs = Vec::new();
            for name in bundled::WELL_POSED {
                let m = bundled_model(name)?;
                if !(m.nu() > 0.0) {
                    pairs.push(json!({ "model": name, "skipped": "nu = 0" }));
                    continue;
                }
                for (s, gap) in oracle_gaps(&m, &ORACLE_LEVELS)? {
                    ok &= gap < 1e-9;
                    pairs.push(json!({ "model": name, "s": s, "m1_gap": gap }));
                }
            }
            let m = bundled_model("logistic")?;
            let p0 = TruncatedState::point_mass(1, 64)?;
            let trunc = two_truncation_consistency(&m, &p0, t_end, &IntegrationControls::default())?;
            ok &= trunc < 1e-6;
            Ok((ok, json!({ "pairs": pairs, "two_truncation": { "n": 64, "T": t_end, "max_m1_gap": trunc } })))
        })(),
    )
}

pub fn no_equilibrium() -> CheckOutcome {
    outcome(
        "no_equilibrium",
        "model with nu + d_inf - b_inf <= 0: G(s) >= s on the sampled grid and the threshold analysis refuses",
        (|| {
            let m = bundled_model("unbounded_growth")?;
            match analyze(&m, 1e-10)? {
                ThresholdOutcome::NoEquilibrium(d) => {
                    let ok = d.no_fixed_point && d.points.iter().all(|p| p.ratio >= d.ratio_bound * (1.0 - 1e-8));
                    Ok((ok, serde_json::to_value(&d).expect("report serializes")))
                }
                ThresholdOutcome::Report(r) => Ok((false, json!({ "unexpected_report": r }))),
            }
        })(),
    )
}

pub fn bundled_hypotheses() -> CheckOutcome {
    outcome(
        "bundled_hypotheses",
        "well-posed bundled models pass both hypotheses; the Ricker table fails concavity with an index; the unbounded model fails subcriticality",
        (|| {
            let mut ok = true;
            let mut rows = Vec::new();
            for name in bundled::WELL_POSED {
                let rep = check_hypotheses(&bundled::spec(name).build()?, DEFAULT_H1_HORIZON);
                ok &= rep.all_hold();
                rows.push(json!({ "model": name, "h1": rep.h1_holds, "h2": rep.h2_holds }));
            }
            let ricker = check_hypotheses(&bundled::spec("ricker").build()?, DEFAULT_H1_HORIZON);
            ok &= !ricker.h1_holds && ricker.first_violation_index.is_some();
            let unbounded = check_hypotheses(&bundled::spec("unbounded_growth").build()?, DEFAULT_H1_HORIZON);
            ok &= unbounded.h1_holds && !unbounded.h2_holds;
            Ok((ok, json!({ "well_posed": rows, "ricker": ricker, "unbounded_growth": unbounded })))
        })(),
    )
}

/// Every check on the bundled models.
pub fn default_suite(opts: &SuiteOptions) -> Vec<CheckOutcome> {
    let mut out = vec![equilibrium_mean_closed_form(), r0_closed_form(opts), threshold_dichotomy(opts), g_monotone_concave(opts), spectral_consistency(opts)];
    out.extend(convergence_and_bounds(opts));
    out.extend([mean_field_agreement(opts), coupling_order(opts), second_differences(opts), oracle_equivalence(opts), no_equilibrium(), bundled_hypotheses()]);
    out
}

/// Checks applicable to an arbitrary user model.
pub fn model_suite(spec: &ModelSpec, opts: &SuiteOptions) -> Vec<CheckOutcome> {
    let built = spec.build();
    let model = || -> Result<RateModel> { Ok(normalize_rho(&built.clone()?)) };
    let points = if opts.quick { 10 } else { 30 };
    let linear = matches!(spec.family, RateFamily::Constant { .. });
    vec![
        outcome(
            "hypotheses",
            "birth totals concave and nondecreasing, death totals convex and nondecreasing, subcritical at infinity",
            built.clone().map(|m| {
                let rep = check_hypotheses(&m, DEFAULT_H1_HORIZON);
                (rep.all_hold(), serde_json::to_value(&rep).expect("report serializes"))
            }),
        ),
        outcome(
            "g_monotone_concave",
            "G increasing and concave (linear for constant rates) on a grid over (0, 2 s_tilde]",
            model().and_then(|m| {
                let grid = concavity_grid(&m, points)?;
                let (first, second) = g_differences(&m, &grid)?;
                let min_first = first.iter().cloned().fold(f64::INFINITY, f64::min);
                let max_second = second.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let max_abs_second = second.iter().map(|v| v.abs()).fold(0.0, f64::max);
                let ok = min_first > 0.0 && if linear { max_abs_second < 1e-9 } else { max_second < 0.0 };
                Ok((ok, json!({ "min_first_difference": min_first, "max_second_difference": max_second, "linear": linear })))
            }),
        ),
        outcome(
            "fixed_point",
            "the fixed-point solve succeeds and G(s*) = s* within 1e-8",
            model().and_then(|m| {
                let rep = solve_fixed_point(&m, 1e-10)?;
                let ok = rep.residual < 1e-8;
                Ok((ok, serde_json::to_value(&rep).expect("report serializes")))
            }),
        ),
        outcome(
            "spectral_consistency",
            "chi(0) = R0 within 1e-6 and sign(lambda0) = sign(R0 - 1)",
            model().and_then(|m| {
                let r = r0(&m, 1e-12)?;
                let chi0 = characteristic_function(&m, 0.0, 1e-12)?;
                let l = lambda0(&m, 1e-10)?;
                let sign_ok = match l {
                    _ if (r - 1.0).abs() < CRITICAL_BAND => true,
                    Some(l) => (l > 0.0) == (r > 1.0),
                    None => r < 1.0,
                };
                Ok(((chi0 - r).abs() < 1e-6 && sign_ok, json!({ "r0": r, "chi0": chi0, "lambda0": l })))
            }),
        ),
        outcome(
            "oracle_equivalence",
            "stationary solve and renewal construction agree within 1e-9 (m1)",
            model().and_then(|m| {
                if !(m.nu() > 0.0) {
                    return Ok((true, json!({ "skipped": "nu = 0" })));
                }
                let gaps = oracle_gaps(&m, &ORACLE_LEVELS)?;
                Ok((gaps.iter().all(|g| g.1 < 1e-9), json!({ "gaps": gaps })))
            }),
        ),
    ]
}
