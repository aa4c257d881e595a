//! Persistence threshold: the fixed point `s = G(s)` of the mean-field
//! immigration level and its classification.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{self, chain_rates, solve_truncated, TruncationPolicy};
use crate::error::{Error, Result};
use crate::model::{check_h2, continuous_extension, RateModel};

/// Half-width of the band around `R0 = 1` classified as critical.
pub const CRITICAL_BAND: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Extinct,
    Persistent,
    Critical,
}

impl Classification {
    pub fn from_r0(r0: f64) -> Self {
        if (r0 - 1.0).abs() < CRITICAL_BAND {
            Classification::Critical
        } else if r0 < 1.0 {
            Classification::Extinct
        } else {
            Classification::Persistent
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Extinct => "extinct",
            Classification::Persistent => "persistent",
            Classification::Critical => "critical",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub r0: f64,
    pub s_star: f64,
    pub classification: Classification,
    pub s_tilde: f64,
    /// Bisection steps spent on `G(s) - s`.
    pub iterations: usize,
    /// `|G(s*) - s*|`.
    pub residual: f64,
}

/// `inf { x > 0 : d(x) + nu - b(x) > 0 }` on the continuous extension of
/// the rates; 0 when the inequality already holds near the origin.
pub fn s_tilde(model: &RateModel) -> Result<f64> {
    if !check_h2(model).holds {
        return Err(Error::NoBound);
    }
    let ext = continuous_extension(model)?;
    let nu = model.nu();
    let h = |x: f64| ext.death(x) + nu - ext.birth(x);
    if h(0.5) > 0.0 {
        return Ok(0.0);
    }
    // h is nondecreasing, so the first doubling with h > 0 brackets the root
    let mut lo = 0.5;
    let mut hi = 1.0;
    while h(hi) <= 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::NoBound);
        }
    }
    for _ in 0..200 {
        if hi - lo <= 1e-15 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if h(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

fn g_tolerance(tol: f64) -> f64 {
    (tol * 1e-2).max(1e-12)
}

/// Finds the positive root of `G(s) = s` when `R0 > 1`, by bisection.
///
/// Models in the critical band around `R0 = 1` report `s* = 0`.
pub fn solve_fixed_point(model: &RateModel, tol: f64) -> Result<ThresholdReport> {
    model.require_normalized()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let st = s_tilde(model)?;
    let r0 = chain::r0(model, 1e-12)?;
    let mut classification = Classification::from_r0(r0);
    let extinct = |classification| ThresholdReport {
        r0,
        s_star: 0.0,
        classification,
        s_tilde: st,
        iterations: 0,
        residual: 0.0,
    };
    if classification != Classification::Persistent {
        return Ok(extinct(classification));
    }
    let gt = g_tolerance(tol);
    let f = |s: f64| -> Result<f64> { Ok(chain::mean_g(model, s, gt)? - s) };

    let mut s_lo = if st > 0.0 { (st / 100.0).min(0.1) } else { 0.1 };
    let mut halvings = 0;
    while f(s_lo)? <= 0.0 {
        s_lo *= 0.5;
        halvings += 1;
        if halvings > 60 {
            classification = Classification::Critical;
            return Ok(extinct(classification));
        }
    }
    let mut s_hi = st.max(s_lo) * (1.0 + 1e-3);
    let mut doublings = 0;
    while f(s_hi)? >= 0.0 {
        s_hi *= 2.0;
        doublings += 1;
        if doublings > 60 {
            return Err(Error::FixedPointFailure(format!(
                "G(s) >= s up to s = {s_hi:.3e}; expected G(s) < s beyond {st:.6e}"
            )));
        }
    }

    let mut iterations = 0;
    let (mut s, mut gap) = (0.5 * (s_lo + s_hi), f64::INFINITY);
    while iterations < 200 {
        s = 0.5 * (s_lo + s_hi);
        gap = f(s)?;
        iterations += 1;
        if gap.abs() < tol || s_hi - s_lo <= 4.0 * f64::EPSILON * s_hi {
            break;
        }
        if gap > 0.0 {
            s_lo = s;
        } else {
            s_hi = s;
        }
    }
    if !(gap.abs() < tol) {
        return Err(Error::FixedPointFailure(format!(
            "bisection stalled at s = {s:.12e} with |G(s) - s| = {:.3e}",
            gap.abs()
        )));
    }
    Ok(ThresholdReport { r0, s_star: s, classification, s_tilde: st, iterations, residual: gap.abs() })
}

/// One grid point of the no-equilibrium diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnboundedPoint {
    pub s: f64,
    /// Mean of the largest truncation solved; never exceeds `G(s)`.
    pub g_lower: f64,
    pub ratio: f64,
    /// Whether the truncated means settled before the truncation cap.
    pub converged: bool,
}

/// Diagnostic returned instead of a [`ThresholdReport`] when the
/// subcriticality-at-infinity condition fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoEquilibriumReport {
    /// `nu + d_inf - b_inf` (at most 0 here).
    pub a: f64,
    /// The value used in the ratio bound: `a`, or `-gamma/2` when `a <= -gamma`.
    pub a_prime: f64,
    /// `gamma / (gamma + a')`; when positive, `G(s) / s` is at least this.
    pub ratio_bound: f64,
    pub points: Vec<UnboundedPoint>,
    /// `G(s) >= s` (up to `1e-8` relative) at every grid point.
    pub no_fixed_point: bool,
}

/// Cap on the truncation used by [`no_equilibrium_when_h2_fails`].
pub const UNBOUNDED_TRUNCATION_CAP: usize = 1 << 16;

/// Lower-bounds `G` on `s_grid` by truncated solves and confirms that no
/// point of the grid is a fixed point. Models satisfying the condition are
/// rejected with `InvalidArgument`.
pub fn no_equilibrium_when_h2_fails(model: &RateModel, s_grid: &[f64]) -> Result<NoEquilibriumReport> {
    model.require_normalized()?;
    let h2 = check_h2(model);
    if h2.holds {
        return Err(Error::InvalidArgument(
            "the model has a finite bound; use solve_fixed_point instead".into(),
        ));
    }
    let gamma = model.gamma();
    let a = h2.a;
    let a_prime = if a <= -gamma { -gamma / 2.0 } else { a };
    let ratio_bound = if gamma > 0.0 { gamma / (gamma + a_prime) } else { 0.0 };
    let policy = TruncationPolicy { initial: 64, max: UNBOUNDED_TRUNCATION_CAP };
    let mut points = Vec::with_capacity(s_grid.len());
    for &s in s_grid {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::InvalidArgument(format!("grid points must be positive, got {s}")));
        }
        let spec = chain_rates(model, s)?;
        let mut g_lower = 0.0f64;
        let mut converged = false;
        for n in policy.levels() {
            let Ok(sol) = solve_truncated(&spec, n) else { break };
            let settled = (sol.mean - g_lower).abs() <= 1e-12 * sol.mean.max(1.0) && sol.tail_mass < 1e-12;
            g_lower = g_lower.max(sol.mean);
            if settled {
                converged = true;
                break;
            }
        }
        points.push(UnboundedPoint { s, g_lower, ratio: g_lower / s, converged });
    }
    let no_fixed_point = points.iter().all(|p| p.g_lower >= p.s * (1.0 - 1e-8));
    Ok(NoEquilibriumReport { a, a_prime, ratio_bound, points, no_fixed_point })
}

/// Either a threshold report or, when no finite bound exists, the
/// no-equilibrium diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ThresholdOutcome {
    Report(ThresholdReport),
    NoEquilibrium(NoEquilibriumReport),
}

/// Default grid for the no-equilibrium diagnostic.
pub fn default_unbounded_grid() -> Vec<f64> {
    (1..=10).map(|k| 0.5 * k as f64).collect()
}

pub fn analyze(model: &RateModel, tol: f64) -> Result<ThresholdOutcome> {
    if check_h2(model).holds {
        Ok(ThresholdOutcome::Report(solve_fixed_point(model, tol)?))
    } else {
        Ok(ThresholdOutcome::NoEquilibrium(no_equilibrium_when_h2_fails(model, &default_unbounded_grid())?))
    }
}

/// One row of a catastrophe-rate sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub nu: f64,
    pub r0: f64,
    pub lambda0: Option<f64>,
    pub s_star: f64,
    pub s_tilde: f64,
    pub classification: Classification,
}

/// Threshold quantities over a list of catastrophe rates, in input order.
pub fn sweep_nu(model: &RateModel, nus: &[f64], tol: f64) -> Result<Vec<SweepRow>> {
    nus.par_iter()
        .map(|&nu| {
            let m = model.with_nu(nu)?;
            let rep = solve_fixed_point(&m, tol)?;
            let lambda0 = chain::lambda0(&m, 1e-10)?;
            Ok(SweepRow {
                nu,
                r0: rep.r0,
                lambda0,
                s_star: rep.s_star,
                s_tilde: rep.s_tilde,
                classification: rep.classification,
            })
        })
        .collect()
}

/// Header `nu,r0,lambda0,s_star,s_tilde,classification`; a missing
/// `lambda0` is written as an empty field.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("nu,r0,lambda0,s_star,s_tilde,classification\n");
    for r in rows {
        let l = r.lambda0.map(|v| format!("{v:.16e}")).unwrap_or_default();
        out.push_str(&format!(
            "{:.16e},{:.16e},{},{:.16e},{:.16e},{}\n",
            r.nu,
            r.r0,
            l,
            r.s_star,
            r.s_tilde,
            r.classification.as_str()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_rate_model, RateFamily};

    fn constant(b: f64, d: f64, gamma: f64, nu: f64) -> RateModel {
        build_rate_model(RateFamily::Constant { birth: b, death: d }, gamma, nu, 1.0).unwrap()
    }

    fn logistic(nu: f64) -> RateModel {
        build_rate_model(RateFamily::LogisticDeath { b0: 3.0, d0: 1.0, delta: 3.0 }, 1.0, nu, 1.0).unwrap()
    }

    #[test]
    fn s_tilde_cases() {
        assert_eq!(s_tilde(&constant(1.0, 2.0, 1.0, 0.0)).unwrap(), 0.0);
        assert!((s_tilde(&logistic(0.5)).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(s_tilde(&constant(2.0, 1.0, 1.0, 0.2)), Err(Error::NoBound));
    }

    #[test]
    fn linear_chain_goes_extinct() {
        let rep = solve_fixed_point(&constant(1.0, 2.0, 1.0, 0.0), 1e-10).unwrap();
        assert_eq!(rep.classification, Classification::Extinct);
        assert_eq!(rep.s_star, 0.0);
        assert!((rep.r0 - 0.5).abs() < 1e-10);
    }

    #[test]
    fn logistic_fixed_point_agrees_with_damped_iteration() {
        let m = logistic(0.5);
        let rep = solve_fixed_point(&m, 1e-10).unwrap();
        assert_eq!(rep.classification, Classification::Persistent);
        assert!(rep.residual < 1e-10);
        assert!(rep.s_star <= rep.s_tilde);
        let mut s = 1.0;
        for _ in 0..500 {
            let next = 0.5 * (s + chain::mean_g(&m, s, 1e-13).unwrap());
            if (next - s).abs() < 1e-13 {
                s = next;
                break;
            }
            s = next;
        }
        assert!((s - rep.s_star).abs() < 1e-9, "{s} vs {}", rep.s_star);
    }

    #[test]
    fn classification_band() {
        assert_eq!(Classification::from_r0(1.0 + 5e-7), Classification::Critical);
        assert_eq!(Classification::from_r0(0.9), Classification::Extinct);
        assert_eq!(Classification::from_r0(1.1), Classification::Persistent);
        assert_eq!(serde_json::to_string(&Classification::Critical).unwrap(), "\"critical\"");
    }

    #[test]
    fn unbounded_diagnostic() {
        let m = constant(2.0, 1.0, 1.0, 0.2);
        let rep = no_equilibrium_when_h2_fails(&m, &[0.5, 1.0, 2.0]).unwrap();
        assert!((rep.ratio_bound - 5.0).abs() < 1e-12);
        assert!(rep.no_fixed_point);
        for p in &rep.points {
            assert!(p.converged);
            assert!((p.ratio - 5.0).abs() < 1e-8, "{p:?}");
        }
        assert!(matches!(no_equilibrium_when_h2_fails(&logistic(0.5), &[1.0]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn analyze_dispatches_on_h2() {
        assert!(matches!(analyze(&logistic(0.5), 1e-10).unwrap(), ThresholdOutcome::Report(_)));
        assert!(matches!(
            analyze(&constant(2.0, 1.0, 1.0, 0.2), 1e-10).unwrap(),
            ThresholdOutcome::NoEquilibrium(_)
        ));
    }

    #[test]
    fn sweep_rows_and_csv() {
        let rows = sweep_nu(&logistic(0.5), &[0.2, 1.0], 1e-9).unwrap();
        assert_eq!(rows[0].classification, Classification::Persistent);
        assert_eq!(rows[1].classification, Classification::Extinct);
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(2).unwrap().ends_with(",extinct"));
    }
}
