//! The single-patch immigration, birth, death and catastrophe chain.
//!
//! For a fixed immigration level `s` the chain jumps
//!
//! * `j -> j + 1` at rate `j b_j + gamma s`,
//! * `j -> j - 1` at rate `j (d_j + gamma)`,
//! * `j -> 0` at rate `nu` (for `j >= 1`).
//!
//! Everything here works on truncations `0..=N` whose upward jump out of `N`
//! is removed; the truncation level grows geometrically until the
//! occupancy-weighted tail and the balance defect of the untruncated chain
//! both drop below the requested tolerance.

pub mod spectral;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_tridiagonal;
use crate::model::RateModel;

pub use spectral::{
    alpha_est, characteristic_function, dominant_eigenvalue, dominant_eigenvalue_check, lambda0, spectral_report,
    weighted_resolvent, DominantEigenvalue, PerturbedGenerator, SpectralReport,
};

/// Transition rates of the chain at immigration level `s`.
#[derive(Debug, Clone, Copy)]
pub struct ChainSpec<'a> {
    model: &'a RateModel,
    s: f64,
}

impl<'a> ChainSpec<'a> {
    pub fn model(&self) -> &'a RateModel {
        self.model
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    /// `q_{j,j+1} = j b_j + gamma s`.
    #[inline]
    pub fn up(&self, j: usize) -> f64 {
        self.model.total_birth(j) + self.model.gamma() * self.s
    }

    /// `q_{j,j-1} = j (d_j + gamma)`; zero at `j = 0`.
    #[inline]
    pub fn down(&self, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else {
            self.model.total_death(j) + j as f64 * self.model.gamma()
        }
    }

    /// Catastrophe rate, the rate of `j -> 0` from any `j >= 1`.
    #[inline]
    pub fn kill(&self) -> f64 {
        self.model.nu()
    }
}

pub fn chain_rates(model: &RateModel, s: f64) -> Result<ChainSpec<'_>> {
    model.require_normalized()?;
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::InvalidArgument(format!("immigration level must be finite and >= 0, got {s}")));
    }
    Ok(ChainSpec { model, s })
}

/// How the truncation level is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    pub initial: usize,
    pub max: usize,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self { initial: 64, max: 1 << 20 }
    }
}

impl TruncationPolicy {
    pub(crate) fn levels(self) -> impl Iterator<Item = usize> {
        let max = self.max.max(1);
        let mut next = Some(self.initial.clamp(1, max));
        std::iter::from_fn(move || {
            let n = next?;
            next = if n >= max { None } else { Some((2 * n).max(64).min(max)) };
            Some(n)
        })
    }
}

/// Truncated stationary law of the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    pub s: f64,
    #[serde(skip_serializing)]
    pub pi: Vec<f64>,
    /// `G(s) = sum_j j pi_j`.
    pub mean: f64,
    /// Truncation level `N`; `pi` has `N + 1` entries.
    pub n: usize,
    /// `sum_{j > N - sqrt(N)} j pi_j`.
    pub tail_mass: f64,
    /// Sup-norm balance defect of the untruncated generator.
    pub residual: f64,
    /// Largest componentwise gap to the product-form solution (only `nu = 0`).
    pub detailed_balance_gap: Option<f64>,
}

impl EquilibriumSolution {
    /// `j,pi_j` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("j,pi_j\n");
        for (j, p) in self.pi.iter().enumerate() {
            out.push_str(&format!("{j},{p:.16e}\n"));
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serializes")
    }
}

/// Occupancy-weighted distance `|p_0 - q_0| + sum_j j |p_j - q_j|`; the
/// shorter vector is padded with zeros.
pub fn m1_distance(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    let at = |v: &[f64], j: usize| v.get(j).copied().unwrap_or(0.0);
    let mut d = (at(p, 0) - at(q, 0)).abs();
    for j in 1..n {
        d += j as f64 * (at(p, j) - at(q, j)).abs();
    }
    d
}

pub(crate) fn weighted_tail(v: &[f64]) -> f64 {
    let n = v.len().saturating_sub(1);
    let cut = n as f64 - (n as f64).sqrt();
    v.iter()
        .enumerate()
        .filter(|(j, _)| *j as f64 > cut)
        .map(|(j, p)| j as f64 * p.abs())
        .sum()
}

fn mean_of(pi: &[f64]) -> f64 {
    pi.iter().enumerate().map(|(j, p)| j as f64 * p).sum()
}

/// Balance defect `max_i |(pi Q)_i|` of the untruncated generator, with
/// `pi_j = 0` beyond the truncation.
pub fn balance_residual(spec: &ChainSpec<'_>, pi: &[f64]) -> f64 {
    let n = pi.len() - 1;
    let nu = spec.kill();
    let occupied: f64 = pi[1..].iter().sum();
    let mut worst: f64 = 0.0;
    for i in 0..=n {
        let mut inflow = if i + 1 <= n { spec.down(i + 1) * pi[i + 1] } else { 0.0 };
        if i >= 1 {
            inflow += spec.up(i - 1) * pi[i - 1];
        } else {
            inflow += nu * occupied;
        }
        let out_rate = spec.up(i) + spec.down(i) + if i >= 1 { nu } else { 0.0 };
        worst = worst.max((inflow - out_rate * pi[i]).abs());
    }
    // probability flux leaking past the truncation
    worst.max(spec.up(n) * pi[n])
}

fn finish(spec: &ChainSpec<'_>, pi: Vec<f64>, detailed_balance_gap: Option<f64>) -> EquilibriumSolution {
    let n = pi.len() - 1;
    EquilibriumSolution {
        s: spec.s,
        mean: mean_of(&pi),
        n,
        tail_mass: weighted_tail(&pi),
        residual: balance_residual(spec, &pi),
        detailed_balance_gap,
        pi,
    }
}

fn degenerate_solution(s: f64) -> EquilibriumSolution {
    EquilibriumSolution {
        s,
        pi: vec![1.0],
        mean: 0.0,
        n: 0,
        tail_mass: 0.0,
        residual: 0.0,
        detailed_balance_gap: None,
    }
}

fn unnormalized_to_law(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let total: f64 = v.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    for p in &mut v {
        *p /= total;
    }
    Some(v)
}

/// Product-form solution when there are no catastrophes.
fn detailed_balance_law(spec: &ChainSpec<'_>, n: usize) -> Option<Vec<f64>> {
    let mut v = vec![0.0; n + 1];
    v[0] = 1.0;
    for j in 0..n {
        v[j + 1] = v[j] * spec.up(j) / spec.down(j + 1);
    }
    unnormalized_to_law(v)
}

/// Stationary law of the chain truncated at `n`.
///
/// With `pi_0` fixed to one, the balance equations of states `1..=n` do not
/// involve the catastrophe column at all (its only entry lands in state 0),
/// so they form a tridiagonal system; the balance equation of state 0 is
/// implied by the others and is replaced by the normalisation.
pub fn solve_truncated(spec: &ChainSpec<'_>, n: usize) -> Result<EquilibriumSolution> {
    if spec.s == 0.0 || n == 0 {
        return Ok(degenerate_solution(spec.s));
    }
    let nu = spec.kill();
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for row in 0..n {
        let i = row + 1;
        let up_out = if i < n { spec.up(i) } else { 0.0 };
        diag[row] = up_out + spec.down(i) + nu;
        if row > 0 {
            lower[row] = -spec.up(i - 1);
        }
        if i < n {
            upper[row] = -spec.down(i + 1);
        }
    }
    rhs[0] = spec.up(0);
    let x = solve_tridiagonal(&lower, &diag, &upper, &rhs).ok_or(Error::TruncationDiverged { n, tail: f64::INFINITY })?;
    let mut v = Vec::with_capacity(n + 1);
    v.push(1.0);
    v.extend(x);
    let pi = unnormalized_to_law(v).ok_or(Error::TruncationDiverged { n, tail: f64::INFINITY })?;

    let gap = if nu == 0.0 {
        let db = detailed_balance_law(spec, n).ok_or(Error::TruncationDiverged { n, tail: f64::INFINITY })?;
        let gap = db.iter().zip(&pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        Some(gap)
    } else {
        None
    };
    Ok(finish(spec, pi, gap))
}

fn grow_until_converged(
    policy: TruncationPolicy,
    tol: f64,
    mut solve: impl FnMut(usize) -> Result<EquilibriumSolution>,
) -> Result<EquilibriumSolution> {
    let mut last = (0, f64::INFINITY);
    for n in policy.levels() {
        match solve(n) {
            Ok(sol) => {
                if sol.tail_mass < tol && sol.residual < tol {
                    return Ok(sol);
                }
                last = (n, sol.tail_mass.max(sol.residual));
            }
            Err(Error::TruncationDiverged { n, tail }) => last = (n, tail),
            Err(e) => return Err(e),
        }
    }
    Err(Error::TruncationDiverged { n: last.0, tail: last.1 })
}

/// Stationary law `pi^(s)` at tolerance `tol`.
///
/// `s = 0` returns the point mass at 0. When `nu = 0` the linear solve is
/// compared against the product-form solution and a disagreement larger
/// than `max(tol, 1e-12)` is reported as [`Error::OracleMismatch`].
pub fn stationary_distribution(spec: &ChainSpec<'_>, tol: f64, policy: TruncationPolicy) -> Result<EquilibriumSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    if spec.s == 0.0 {
        return Ok(degenerate_solution(0.0));
    }
    let sol = grow_until_converged(policy, tol, |n| solve_truncated(spec, n))?;
    if let Some(gap) = sol.detailed_balance_gap {
        if gap > tol.max(1e-12) {
            return Err(Error::OracleMismatch { what: "detailed balance vs linear solve".into(), gap });
        }
    }
    Ok(sol)
}

/// `G(s)`, the mean of `pi^(s)`.
pub fn mean_g(model: &RateModel, s: f64, tol: f64) -> Result<f64> {
    let spec = chain_rates(model, s)?;
    if s == 0.0 {
        return Ok(0.0);
    }
    Ok(stationary_distribution(&spec, tol, TruncationPolicy::default())?.mean)
}

/// Independent route to `pi^(s)`: the catastrophe-free chain started at 0
/// and observed at an independent exponential time of rate `nu`, i.e. the
/// row vector solving `pi (nu I - Q_X) = nu e_0`.
pub fn renewal_identity_oracle(model: &RateModel, s: f64, tol: f64) -> Result<EquilibriumSolution> {
    let spec = chain_rates(model, s)?;
    let nu = spec.kill();
    if !(nu > 0.0) {
        return Err(Error::InvalidArgument("the renewal construction needs nu > 0".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    if s == 0.0 {
        return Ok(degenerate_solution(0.0));
    }
    grow_until_converged(TruncationPolicy::default(), tol, |n| {
        let mut lower = vec![0.0; n + 1];
        let mut diag = vec![0.0; n + 1];
        let mut upper = vec![0.0; n + 1];
        let mut rhs = vec![0.0; n + 1];
        for i in 0..=n {
            let up_out = if i < n { spec.up(i) } else { 0.0 };
            diag[i] = nu + up_out + spec.down(i);
            if i > 0 {
                lower[i] = -spec.up(i - 1);
            }
            if i < n {
                upper[i] = -spec.down(i + 1);
            }
        }
        rhs[0] = nu;
        let pi = solve_tridiagonal(&lower, &diag, &upper, &rhs).ok_or(Error::TruncationDiverged { n, tail: f64::INFINITY })?;
        Ok(finish(&spec, pi, None))
    })
}

/// Solves the killed backward equation `(A u)(j) = -j`, `u(0) = 0`, on
/// `1..=n`, where `A` is the zero-immigration generator with catastrophes
/// as killing. `u(j)` is the expected area under the population path from
/// `j` until extinction.
fn killed_occupation_area(model: &RateModel, n: usize) -> Option<Vec<f64>> {
    let spec = ChainSpec { model, s: 0.0 };
    let nu = model.nu();
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for row in 0..n {
        let j = row + 1;
        let up_out = if j < n { spec.up(j) } else { 0.0 };
        diag[row] = up_out + spec.down(j) + nu;
        if row > 0 {
            lower[row] = -spec.down(j);
        }
        upper[row] = -up_out;
        rhs[row] = j as f64;
    }
    solve_tridiagonal(&lower, &diag, &upper, &rhs)
}

/// `R_0 = G'(0) = gamma * u(1)`, with `u` the expected population area of
/// the zero-immigration chain started from one individual.
pub fn r0(model: &RateModel, tol: f64) -> Result<f64> {
    model.require_normalized()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    if model.gamma() == 0.0 {
        return Ok(0.0);
    }
    let mut previous: Option<f64> = None;
    let mut last = (0, f64::INFINITY);
    for n in TruncationPolicy::default().levels() {
        let u1 = match killed_occupation_area(model, n) {
            Some(u) => u[0],
            None => {
                last = (n, f64::INFINITY);
                previous = None;
                continue;
            }
        };
        if let Some(p) = previous {
            let change = (u1 - p).abs();
            if change <= tol * u1.abs().max(1.0) {
                return Ok(model.gamma() * u1);
            }
            last = (n, change);
        }
        previous = Some(u1);
    }
    Err(Error::TruncationDiverged { n: last.0, tail: last.1 })
}

/// Finite-difference `G'(s)`: central for `s >= h`, forward otherwise.
pub fn g_derivative(model: &RateModel, s: f64, h: f64) -> Result<f64> {
    if !(h > 0.0) || !(s >= 0.0) {
        return Err(Error::InvalidArgument(format!("need s >= 0 and h > 0, got s = {s}, h = {h}")));
    }
    let tol = 1e-13;
    if s >= h {
        Ok((mean_g(model, s + h, tol)? - mean_g(model, s - h, tol)?) / (2.0 * h))
    } else {
        Ok((mean_g(model, s + h, tol)? - mean_g(model, s, tol)?) / h)
    }
}

/// `E^(init) Z_t` at each of `times` (nondecreasing), from the forward
/// equation of the chain truncated at `n` (upward jumps out of `n` removed).
pub fn transient_means(model: &RateModel, s: f64, init: usize, times: &[f64], n: usize) -> Result<Vec<f64>> {
    let spec = chain_rates(model, s)?;
    if init > n {
        return Err(Error::InvalidArgument(format!("initial state {init} exceeds the truncation {n}")));
    }
    let nu = spec.kill();
    let field = |_: f64, p: &[f64], dp: &mut [f64]| {
        let occupied: f64 = p[1..].iter().sum();
        for i in 0..=n {
            let up_out = if i < n { spec.up(i) } else { 0.0 };
            let kill = if i >= 1 { nu } else { 0.0 };
            let mut v = -(up_out + spec.down(i) + kill) * p[i];
            v += if i >= 1 { spec.up(i - 1) * p[i - 1] } else { nu * occupied };
            if i < n {
                v += spec.down(i + 1) * p[i + 1];
            }
            dp[i] = v;
        }
    };
    let mut p0 = vec![0.0; n + 1];
    p0[init] = 1.0;
    let controls = crate::meanfield::rk::StepControls { atol: 1e-14, rtol: 1e-11, ..Default::default() };
    let mut rk = crate::meanfield::rk::Dopri5::new(field, 0.0, p0, controls);
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        rk.advance_to(t)?;
        out.push(mean_of(&rk.y));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_rate_model, normalize_rho, RateFamily};

    pub(crate) fn constant(b: f64, d: f64, gamma: f64, nu: f64) -> RateModel {
        build_rate_model(RateFamily::Constant { birth: b, death: d }, gamma, nu, 1.0).unwrap()
    }

    pub(crate) fn logistic(nu: f64) -> RateModel {
        build_rate_model(RateFamily::LogisticDeath { b0: 3.0, d0: 1.0, delta: 3.0 }, 1.0, nu, 1.0).unwrap()
    }

    #[test]
    fn rates_substitute() {
        let m = constant(1.0, 2.0, 1.0, 0.0);
        let c = chain_rates(&m, 3.0).unwrap();
        for j in 0..10 {
            assert_eq!(c.up(j), j as f64 + 3.0);
            assert_eq!(c.down(j), 3.0 * j as f64);
        }
        let c0 = chain_rates(&m, 0.0).unwrap();
        assert_eq!(c0.up(0), 0.0);
        assert_eq!(c0.down(0), 0.0);
    }

    #[test]
    fn rates_reject_bad_input() {
        let m = constant(1.0, 2.0, 1.0, 0.0);
        assert!(matches!(chain_rates(&m, -1.0), Err(Error::InvalidArgument(_))));
        let unnormalized =
            build_rate_model(RateFamily::Constant { birth: 1.0, death: 2.0 }, 1.0, 0.0, 0.5).unwrap();
        assert!(matches!(chain_rates(&unnormalized, 1.0), Err(Error::InvalidModel(_))));
        assert!(chain_rates(&normalize_rho(&unnormalized), 1.0).is_ok());
    }

    #[test]
    fn zero_immigration_is_extinction() {
        let m = logistic(0.5);
        let c = chain_rates(&m, 0.0).unwrap();
        let sol = stationary_distribution(&c, 1e-10, TruncationPolicy::default()).unwrap();
        assert_eq!(sol.pi, vec![1.0]);
        assert_eq!(sol.mean, 0.0);
        assert_eq!(mean_g(&m, 0.0, 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn linear_chain_mean_is_half_s() {
        let m = constant(1.0, 2.0, 1.0, 0.0);
        for s in [0.5, 1.0, 3.0, 10.0] {
            let c = chain_rates(&m, s).unwrap();
            let sol = stationary_distribution(&c, 1e-12, TruncationPolicy::default()).unwrap();
            assert!((sol.mean - s / 2.0).abs() < 1e-10, "s = {s}: {}", sol.mean);
            assert!(sol.detailed_balance_gap.unwrap() < 1e-13);
        }
    }

    #[test]
    fn logistic_solution_is_stationary() {
        let m = logistic(0.5);
        let c = chain_rates(&m, 1.0).unwrap();
        let sol = stationary_distribution(&c, 1e-10, TruncationPolicy::default()).unwrap();
        assert!(sol.residual < 1e-10);
        assert!((sol.pi.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(sol.pi.iter().all(|p| *p >= 0.0));
        let oracle = renewal_identity_oracle(&m, 1.0, 1e-10).unwrap();
        assert!(m1_distance(&sol.pi, &oracle.pi) < 1e-9);
    }

    #[test]
    fn renewal_oracle_needs_catastrophes() {
        let m = constant(1.0, 2.0, 1.0, 0.0);
        assert!(matches!(renewal_identity_oracle(&m, 1.0, 1e-10), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn frequent_resets_concentrate_at_zero() {
        let m = logistic(50.0);
        let oracle = renewal_identity_oracle(&m, 1.0, 1e-10).unwrap();
        // leaving 0 needs an immigration before the next reset
        assert!(oracle.pi[0] >= 50.0 / (50.0 + 1.0 + 3.0));
    }

    #[test]
    fn tolerance_must_be_positive() {
        let m = logistic(0.5);
        let c = chain_rates(&m, 1.0).unwrap();
        assert!(matches!(
            stationary_distribution(&c, 0.0, TruncationPolicy::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn exploding_chain_reports_divergence() {
        // no catastrophes and births outpace deaths: no stationary law
        let m = constant(3.0, 1.0, 1.0, 0.0);
        let c = chain_rates(&m, 1.0).unwrap();
        let err = stationary_distribution(&c, 1e-10, TruncationPolicy { initial: 64, max: 4096 }).unwrap_err();
        assert!(matches!(err, Error::TruncationDiverged { .. }), "{err:?}");
    }

    #[test]
    fn r0_closed_form_for_constant_rates() {
        let m = constant(1.0, 1.0, 1.0, 0.5);
        let r = r0(&m, 1e-12).unwrap();
        assert!((r - 2.0 / 3.0).abs() < 1e-10, "{r}");
    }

    #[test]
    fn r0_at_most_one_when_first_patch_declines() {
        // b_1 - d_1 - nu <= 0
        for (b0, d0, delta, nu) in [(1.0, 1.0, 2.0, 0.0), (2.0, 1.0, 1.0, 1.0), (3.0, 2.5, 0.5, 0.5)] {
            let m = build_rate_model(RateFamily::LogisticDeath { b0, d0, delta }, 1.3, nu, 1.0).unwrap();
            assert!(r0(&m, 1e-12).unwrap() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn r0_matches_forward_difference() {
        let m = logistic(0.5);
        let r = r0(&m, 1e-12).unwrap();
        // Richardson on the forward difference: G(h)/h = R0 + c h + O(h^2)
        let h = 1e-3;
        let g1 = mean_g(&m, h, 1e-14).unwrap() / h;
        let g2 = mean_g(&m, 2.0 * h, 1e-14).unwrap() / (2.0 * h);
        let richardson = 2.0 * g1 - g2;
        assert!((richardson - r).abs() < 1e-5, "{richardson} vs {r}");
        assert!(g1 < r, "concavity makes the secant slope smaller");
        assert!(r > 1.0);
    }

    #[test]
    fn derivative_of_linear_chain() {
        let m = constant(1.0, 2.0, 1.0, 0.0);
        for s in [0.0, 0.3, 1.0, 4.0] {
            let d = g_derivative(&m, s, 1e-3).unwrap();
            assert!((d - 0.5).abs() < 1e-8, "{d}");
        }
        assert!(g_derivative(&m, 1.0, 0.0).is_err());
    }

    #[test]
    fn derivative_positive_on_logistic() {
        let m = logistic(0.5);
        for k in 0..10 {
            assert!(g_derivative(&m, 0.25 * k as f64, 1e-3).unwrap() > 0.0);
        }
    }

    #[test]
    fn m1_metric() {
        assert_eq!(m1_distance(&[1.0], &[0.5, 0.25, 0.25]), 0.5 + 0.25 + 0.5);
        assert_eq!(m1_distance(&[0.2, 0.8], &[0.2, 0.8]), 0.0);
    }

    #[test]
    fn transient_mean_of_linear_chain() {
        // E Z_t = m e^{kt} + gamma s (e^{kt} - 1) / k with k = b - d - gamma
        let m = constant(1.0, 2.0, 1.0, 0.0);
        let times = [0.0, 0.5, 1.0, 3.0];
        let got = transient_means(&m, 2.0, 3, &times, 200).unwrap();
        for (t, g) in times.iter().zip(&got) {
            let k: f64 = -2.0;
            let exact = 3.0 * (k * t).exp() + 2.0 * ((k * t).exp() - 1.0) / k;
            assert!((g - exact).abs() < 1e-9, "t = {t}: {g} vs {exact}");
        }
    }

    #[test]
    fn truncation_levels_grow_geometrically() {
        let levels: Vec<_> = TruncationPolicy { initial: 10, max: 300 }.levels().collect();
        assert_eq!(levels, vec![10, 64, 128, 256, 300]);
    }
}
