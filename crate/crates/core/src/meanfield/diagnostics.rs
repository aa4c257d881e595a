//! Checks run on integrated trajectories.

use serde::{Deserialize, Serialize};

use super::rk::{Dopri5, StepControls};
use super::{integrate, IntegrationControls, Trajectory, TruncatedState};
use crate::chain::{self, m1_distance, TruncationPolicy};
use crate::error::{Error, Result};
use crate::model::{continuous_extension, RateModel};
use crate::threshold::{s_tilde, solve_fixed_point};

/// Fraction of `[0, T]` discarded before asymptotic checks.
pub const BURN_IN_FRACTION: f64 = 0.2;

fn mean_field_drift(model: &RateModel, p: &[f64]) -> f64 {
    let mut births = 0.0;
    let mut deaths = 0.0;
    let mut s = 0.0;
    for (j, v) in p.iter().enumerate() {
        births += model.total_birth(j) * v;
        deaths += model.total_death(j) * v;
        s += j as f64 * v;
    }
    births - deaths - model.nu() * s
}

fn fd_derivative(smp: &[super::Sample], k: usize) -> Option<f64> {
    let t = |i: usize| smp[i].t;
    let s = |i: usize| smp[i].s;
    if k >= 2 && k + 2 < smp.len() {
        let h = t(k + 1) - t(k);
        let uniform = (1..=2).all(|d| {
            ((t(k + d) - t(k + d - 1)) - h).abs() <= 1e-9 * h && ((t(k - d + 1) - t(k - d)) - h).abs() <= 1e-9 * h
        });
        if uniform && h > 0.0 {
            return Some((s(k - 2) - 8.0 * s(k - 1) + 8.0 * s(k + 1) - s(k + 2)) / (12.0 * h));
        }
    }
    let (h0, h1) = (t(k) - t(k - 1), t(k + 1) - t(k));
    if !(h0 > 0.0 && h1 > 0.0) {
        return None;
    }
    Some(-h1 / (h0 * (h0 + h1)) * s(k - 1) + (h1 - h0) / (h0 * h1) * s(k) + h0 / (h1 * (h0 + h1)) * s(k + 1))
}

/// Largest gap between a finite-difference estimate of `s'(t)` and
/// `sum_j j b_j p_j - sum_j j d_j p_j - nu s` over the samples.
///
/// Uniformly spaced stretches use the fourth-order central stencil, so
/// the two outermost samples at either end are skipped when there are at
/// least five; otherwise a three-point stencil is used.
///
/// Truncation removes births and immigration out of state `N`, so a
/// too-small `N` shows up here as a systematic defect.
pub fn mean_ode_check(model: &RateModel, traj: &Trajectory) -> f64 {
    let smp = &traj.samples;
    let range = if smp.len() >= 5 { 2..smp.len() - 2 } else { 1..smp.len().saturating_sub(1) };
    let mut worst: f64 = 0.0;
    for k in range {
        if let Some(ds) = fd_derivative(smp, k) {
            worst = worst.max((ds - mean_field_drift(model, &smp[k].p)).abs());
        }
    }
    worst
}

/// Solution of `x' = x (b(x) - d(x) - gamma - nu) + gamma s` for a frozen
/// immigration level `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarComparison {
    pub s: f64,
    pub x0: f64,
    /// `(t, x(t))` at the sample times.
    pub x: Vec<(f64, f64)>,
}

pub fn scalar_comparison(model: &RateModel, s: f64, x0: f64, t_end: f64, sample_dt: f64) -> Result<ScalarComparison> {
    model.require_normalized()?;
    if !(x0 >= 0.0) || !(s >= 0.0) || !(sample_dt > 0.0) || !(t_end >= 0.0) {
        return Err(Error::InvalidArgument("need x0, s, T >= 0 and a positive sample spacing".into()));
    }
    let ext = continuous_extension(model)?;
    let (gamma, nu) = (model.gamma(), model.nu());
    let field = |_: f64, y: &[f64], dy: &mut [f64]| {
        let x = y[0].max(0.0);
        dy[0] = x * (ext.birth(x) - ext.death(x) - gamma - nu) + gamma * s;
    };
    let controls = StepControls { atol: 1e-12, rtol: 1e-11, ..StepControls::default() };
    let mut rk = Dopri5::new(field, 0.0, vec![x0], controls);
    let mut x = vec![(0.0, x0)];
    let mut k = 1u64;
    loop {
        let t = (k as f64 * sample_dt).min(t_end);
        rk.advance_to(t)?;
        x.push((t, rk.y[0]));
        if t >= t_end {
            break;
        }
        k += 1;
    }
    Ok(ScalarComparison { s, x0, x })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Largest `s(t) - y(t)` over all samples (non-positive when the
    /// envelope holds).
    pub max_envelope_excess: f64,
    /// `max(s(0), s_tilde)`.
    pub limsup_bound: f64,
    pub burn_in: f64,
    /// Largest `s(t) - limsup_bound` over samples after the burn-in.
    pub max_limsup_excess: f64,
}

/// Checks `s(t) <= y(t) + tol`, where `y' = (b(y) - d(y) - nu) y` with
/// `y(0) = s(0)`, and `s(t) <= max(s(0), s_tilde) + tol` after the burn-in.
pub fn comparison_bound_check(model: &RateModel, traj: &Trajectory, tol: f64) -> Result<ComparisonReport> {
    let ext = continuous_extension(model)?;
    let nu = model.nu();
    let smp = &traj.samples;
    let s0 = smp[0].s;
    let t0 = smp[0].t;
    let field = |_: f64, y: &[f64], dy: &mut [f64]| {
        let x = y[0].max(0.0);
        dy[0] = (ext.birth(x) - ext.death(x) - nu) * x;
    };
    let controls = StepControls { atol: 1e-12, rtol: 1e-11, ..StepControls::default() };
    let mut rk = Dopri5::new(field, t0, vec![s0], controls);
    let mut max_envelope_excess = f64::NEG_INFINITY;
    for smp in smp {
        rk.advance_to(smp.t)?;
        let excess = smp.s - rk.y[0];
        max_envelope_excess = max_envelope_excess.max(excess);
        if excess > tol {
            return Err(Error::ComparisonViolated { t: smp.t, s: smp.s, bound: rk.y[0] });
        }
    }
    let limsup_bound = s0.max(s_tilde(model)?);
    let t_end = smp.last().map(|s| s.t).unwrap_or(t0);
    let burn_in = t0 + BURN_IN_FRACTION * (t_end - t0);
    let mut max_limsup_excess = f64::NEG_INFINITY;
    for smp in smp.iter().filter(|s| s.t >= burn_in) {
        let excess = smp.s - limsup_bound;
        max_limsup_excess = max_limsup_excess.max(excess);
        if excess > tol {
            return Err(Error::ComparisonViolated { t: smp.t, s: smp.s, bound: limsup_bound });
        }
    }
    Ok(ComparisonReport { max_envelope_excess, limsup_bound, burn_in, max_limsup_excess })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// `(t, d(p(t), target))` in the occupancy-weighted metric.
    pub distances: Vec<(f64, f64)>,
    pub final_distance: f64,
    pub burn_in: f64,
    /// Whether the distance never increases (beyond `1e-12`) after the burn-in.
    pub monotone_after_burn_in: bool,
}

pub fn convergence_diagnose(traj: &Trajectory, target: &[f64]) -> ConvergenceReport {
    let distances: Vec<(f64, f64)> = traj.samples.iter().map(|s| (s.t, m1_distance(&s.p, target))).collect();
    let t0 = distances[0].0;
    let t_end = distances.last().map(|d| d.0).unwrap_or(t0);
    let burn_in = t0 + BURN_IN_FRACTION * (t_end - t0);
    let tail: Vec<f64> = distances.iter().filter(|d| d.0 >= burn_in).map(|d| d.1).collect();
    let monotone_after_burn_in = tail.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    ConvergenceReport {
        final_distance: distances.last().map(|d| d.1).unwrap_or(0.0),
        distances,
        burn_in,
        monotone_after_burn_in,
    }
}

/// The equilibrium the dynamics should approach: `pi^(s*)` when the model
/// persists, `e^0` otherwise. Returns `(s*, distribution)`.
pub fn equilibrium_target(model: &RateModel, tol: f64) -> Result<(f64, Vec<f64>)> {
    let rep = solve_fixed_point(model, tol)?;
    if rep.s_star == 0.0 {
        return Ok((0.0, vec![1.0]));
    }
    let spec = chain::chain_rates(model, rep.s_star)?;
    let sol = chain::stationary_distribution(&spec, tol, TruncationPolicy::default())?;
    Ok((rep.s_star, sol.pi))
}

/// Integrates from `p0` at truncations `N` and `2N` and returns the largest
/// occupancy-weighted distance between the two over the common samples.
pub fn two_truncation_consistency(
    model: &RateModel,
    p0: &TruncatedState,
    t_end: f64,
    controls: &IntegrationControls,
) -> Result<f64> {
    let n = p0.n();
    let mut wide = p0.p.clone();
    wide.resize(2 * n + 1, 0.0);
    let wide = TruncatedState { p: wide, t: p0.t };
    let (a, b) = rayon::join(
        || integrate(model, p0, t_end, controls),
        || integrate(model, &wide, t_end, controls),
    );
    let (a, b) = (a?, b?);
    Ok(a.samples.iter().zip(&b.samples).map(|(x, y)| m1_distance(&x.p, &y.p)).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_rate_model, RateFamily};

    fn logistic() -> RateModel {
        build_rate_model(RateFamily::LogisticDeath { b0: 3.0, d0: 1.0, delta: 3.0 }, 1.0, 0.5, 1.0).unwrap()
    }

    fn constant(b: f64, d: f64, gamma: f64, nu: f64) -> RateModel {
        build_rate_model(RateFamily::Constant { birth: b, death: d }, gamma, nu, 1.0).unwrap()
    }

    #[test]
    fn mean_equation_holds_along_trajectory() {
        let m = logistic();
        let st = TruncatedState::point_mass(1, 80).unwrap();
        let c = IntegrationControls { sample_dt: 1e-3, ..Default::default() };
        let traj = integrate(&m, &st, 2.0, &c).unwrap();
        let defect = mean_ode_check(&m, &traj);
        assert!(defect < 1e-5, "{defect}");
    }

    #[test]
    fn extinction_trajectory_has_no_defect() {
        let m = logistic();
        let traj = integrate(&m, &TruncatedState::point_mass(0, 10).unwrap(), 1.0, &IntegrationControls::default()).unwrap();
        assert_eq!(mean_ode_check(&m, &traj), 0.0);
        let rep = comparison_bound_check(&m, &traj, 1e-9).unwrap();
        assert!(rep.max_envelope_excess <= 0.0);
    }

    #[test]
    fn under_truncation_inflates_mean_defect() {
        let m = logistic();
        let c = IntegrationControls { sample_dt: 1e-3, leak_tol: None, ..Default::default() };
        let wide = integrate(&m, &TruncatedState::point_mass(1, 80).unwrap(), 1.0, &c).unwrap();
        let narrow = integrate(&m, &TruncatedState::point_mass(1, 3).unwrap(), 1.0, &c).unwrap();
        assert!(mean_ode_check(&m, &narrow) > 100.0 * mean_ode_check(&m, &wide));
    }

    #[test]
    fn scalar_comparison_closed_form() {
        let m = constant(1.0, 2.0, 1.0, 0.5);
        let (s, x0) = (2.0, 5.0);
        let sc = scalar_comparison(&m, s, x0, 4.0, 0.5).unwrap();
        let k = 1.0 - 2.0 - 1.0 - 0.5;
        let xinf = -s / k;
        for (t, x) in &sc.x {
            let exact = xinf + (x0 - xinf) * (k * t).exp();
            assert!((x - exact).abs() < 1e-8, "t = {t}: {x} vs {exact}");
        }
    }

    #[test]
    fn scalar_comparison_decreases_without_immigration() {
        let m = logistic();
        let sc = scalar_comparison(&m, 0.0, 3.0, 3.0, 0.1).unwrap();
        assert!(sc.x.windows(2).all(|w| w[1].1 < w[0].1));
    }

    #[test]
    fn convergence_of_stationary_start() {
        let m = logistic();
        let (s_star, pi) = equilibrium_target(&m, 1e-12).unwrap();
        assert!(s_star > 0.0);
        let st = TruncatedState::from_distribution(&pi, 80).unwrap();
        let traj = integrate(&m, &st, 20.0, &IntegrationControls::default()).unwrap();
        let rep = convergence_diagnose(&traj, &pi);
        assert!(rep.distances.iter().all(|d| d.1 < 1e-5), "{}", rep.final_distance);
    }

    #[test]
    fn truncations_agree() {
        let m = logistic();
        let gap = two_truncation_consistency(&m, &TruncatedState::point_mass(3, 60).unwrap(), 5.0, &IntegrationControls::default())
            .unwrap();
        assert!(gap < 1e-6, "{gap}");
    }
}
