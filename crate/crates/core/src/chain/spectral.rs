//! Resolvent, characteristic function and dominant eigenvalue of the
//! linearisation of the mean-field dynamics at the extinction state.
//!
//! `A` is the zero-immigration generator on states `1..` in which leaving to
//! state 0 (by a death from 1 or by a catastrophe) is killing. Acting on
//! measures it is `Q_kill^T`; the linearised immigration term adds the rank
//! one map `u -> phi(u) e^1` with `phi(u) = gamma * sum_j j u_j`.

use serde::{Deserialize, Serialize};

use super::{ChainSpec, TruncationPolicy};
use crate::error::{Error, Result};
use crate::linalg::solve_tridiagonal;
use crate::model::RateModel;

/// Tridiagonal part of `lambda - A` on `1..=n`, indexed from 0 for state 1,
/// reflected at `n`.
fn shifted_killed_operator(model: &RateModel, lambda: f64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let spec = ChainSpec { model, s: 0.0 };
    let nu = model.nu();
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for row in 0..n {
        let i = row + 1;
        let up_out = if i < n { spec.up(i) } else { 0.0 };
        diag[row] = lambda + up_out + spec.down(i) + nu;
        if row > 0 {
            lower[row] = -spec.up(i - 1);
        }
        if i < n {
            upper[row] = -spec.down(i + 1);
        }
    }
    (lower, diag, upper)
}

fn phi(gamma: f64, u: &[f64]) -> f64 {
    gamma * u.iter().enumerate().map(|(row, v)| (row + 1) as f64 * v).sum::<f64>()
}

/// `gamma * sum_i i Phat_{source,i}(lambda)` at a fixed truncation.
fn weighted_resolvent_at(model: &RateModel, lambda: f64, source: usize, n: usize) -> Result<f64> {
    let (lower, diag, upper) = shifted_killed_operator(model, lambda, n);
    let mut rhs = vec![0.0; n];
    rhs[source - 1] = 1.0;
    let x = solve_tridiagonal(&lower, &diag, &upper, &rhs)
        .ok_or_else(|| Error::SpectralDomain(format!("resolvent singular at lambda = {lambda} (N = {n})")))?;
    if x.iter().any(|v| *v < 0.0) {
        return Err(Error::SpectralDomain(format!("resolvent lost positivity at lambda = {lambda}")));
    }
    Ok(phi(model.gamma(), &x))
}

/// `phi((lambda - A)^{-1} e^source)`, with the truncation grown until the
/// value settles to relative accuracy `tol`.
pub fn weighted_resolvent(model: &RateModel, lambda: f64, source: usize, tol: f64) -> Result<f64> {
    model.require_normalized()?;
    if source == 0 {
        return Err(Error::InvalidArgument("resolvent source must be a state >= 1".into()));
    }
    if !(tol > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("need finite lambda and tol > 0, got {lambda}, {tol}")));
    }
    let policy = TruncationPolicy { initial: 64.max(2 * source), ..TruncationPolicy::default() };
    let mut previous: Option<f64> = None;
    let mut last = (0, f64::INFINITY);
    for n in policy.levels() {
        let value = weighted_resolvent_at(model, lambda, source, n)?;
        if let Some(p) = previous {
            let change = (value - p).abs();
            if change <= tol * value.abs().max(1.0) {
                return Ok(value);
            }
            last = (n, change);
        }
        previous = Some(value);
    }
    Err(Error::TruncationDiverged { n: last.0, tail: last.1 })
}

/// `chi(lambda) = phi((lambda - A)^{-1} e^1)`; the spectral condition for an
/// eigenvalue of `A + F'(0)` is `chi(lambda) = 1`.
pub fn characteristic_function(model: &RateModel, lambda: f64, tol: f64) -> Result<f64> {
    weighted_resolvent(model, lambda, 1, tol)
}

/// Heuristic positive decay rate of the killed semigroup, used only to
/// place the first lower bracket.
pub fn alpha_est(model: &RateModel) -> f64 {
    let margin = model.death(1) + model.gamma() - model.birth(1);
    (model.nu().min(margin) / 2.0).max(1e-3)
}

fn is_domain_edge(e: &Error) -> bool {
    matches!(e, Error::SpectralDomain(_) | Error::TruncationDiverged { .. })
}

/// The real root of `chi(lambda) = 1`.
///
/// The lower edge starts at `-alpha_est/2` and moves left by doubling while
/// `chi` stays below 1; when the resolvent stops existing, the edge is
/// refined towards the boundary of the domain. `None` means no point of the
/// accessible half-line has `chi >= 1`.
pub fn lambda0(model: &RateModel, tol: f64) -> Result<Option<f64>> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let inner_tol = (tol * 1e-3).max(1e-14);
    let chi = |l: f64| characteristic_function(model, l, inner_tol);
    if model.gamma() == 0.0 {
        return Ok(None);
    }
    let at_zero = chi(0.0)?;
    let (mut lo, mut hi) = if at_zero >= 1.0 {
        let mut hi = 1.0;
        let mut tries = 0;
        while chi(hi)? > 1.0 {
            hi *= 2.0;
            tries += 1;
            if tries > 200 {
                return Err(Error::SpectralDomain("characteristic function does not drop below 1".into()));
            }
        }
        (0.0, hi)
    } else {
        match lower_bracket(model, &chi)? {
            Some(b) => b,
            None => return Ok(None),
        }
    };
    for _ in 0..400 {
        if hi - lo <= tol * lo.abs().max(hi.abs()).max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if chi(mid)? >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

/// Returns `(lo, hi)` with `chi(lo) >= 1 > chi(hi)`, searching leftwards
/// from 0.
fn lower_bracket(model: &RateModel, chi: &dyn Fn(f64) -> Result<f64>) -> Result<Option<(f64, f64)>> {
    let mut good = 0.0;
    let mut probe = -alpha_est(model) / 2.0;
    let mut bad = None;
    for _ in 0..64 {
        match chi(probe) {
            Ok(v) if v >= 1.0 => return Ok(Some((probe, good))),
            Ok(_) => {
                good = probe;
                probe *= 2.0;
            }
            Err(e) if is_domain_edge(&e) => {
                bad = Some(probe);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let Some(mut bad) = bad else { return Ok(None) };
    for _ in 0..80 {
        let mid = 0.5 * (good + bad);
        match chi(mid) {
            Ok(v) if v >= 1.0 => return Ok(Some((mid, good))),
            Ok(_) => good = mid,
            Err(e) if is_domain_edge(&e) => bad = mid,
            Err(e) => return Err(e),
        }
        if (good - bad).abs() < 1e-15 * good.abs().max(1.0) {
            break;
        }
    }
    Ok(None)
}

/// R0, lambda0 and a sampled characteristic function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub r0: f64,
    pub lambda0: Option<f64>,
    /// `(lambda, chi(lambda))` pairs, increasing in lambda.
    pub chi: Vec<(f64, f64)>,
    pub alpha_est: f64,
}

impl SpectralReport {
    /// `lambda,chi` rows with a header line.
    pub fn chi_csv(&self) -> String {
        let mut out = String::from("lambda,chi\n");
        for (l, c) in &self.chi {
            out.push_str(&format!("{l:.16e},{c:.16e}\n"));
        }
        out
    }

    pub fn chi_strictly_decreasing(&self) -> bool {
        self.chi.windows(2).all(|w| w[1].1 < w[0].1)
    }
}

/// Samples `chi` on `samples` equally spaced points from `-alpha_est/2`
/// (or the root, if lower) to `max(lambda0, 0) + 1`. Points outside the
/// resolvent domain are skipped.
pub fn spectral_report(model: &RateModel, tol: f64, samples: usize) -> Result<SpectralReport> {
    let r0 = super::r0(model, tol)?;
    let lambda0 = lambda0(model, tol)?;
    let alpha = alpha_est(model);
    let mut from = -alpha / 2.0;
    if let Some(l) = lambda0 {
        from = from.min(l);
    }
    let to = lambda0.unwrap_or(0.0).max(0.0) + 1.0;
    let mut chi = Vec::with_capacity(samples);
    let k = samples.max(2) - 1;
    for i in 0..=k {
        let l = from + (to - from) * i as f64 / k as f64;
        match characteristic_function(model, l, (tol * 1e-3).max(1e-14)) {
            Ok(v) => chi.push((l, v)),
            Err(e) if is_domain_edge(&e) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(SpectralReport { r0, lambda0, chi, alpha_est: alpha })
}

/// Truncated matrix of `A + F'(0)` on states `1..=n`, stored as a
/// tridiagonal part plus the rank-one term `e^1 w^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedGenerator {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
    /// Column vector of the rank-one term (`e^1`).
    pub column: Vec<f64>,
    /// Row vector of the rank-one term (`w_j = gamma j`).
    pub row: Vec<f64>,
}

impl PerturbedGenerator {
    pub fn new(model: &RateModel, n: usize) -> Result<Self> {
        model.require_normalized()?;
        if n == 0 {
            return Err(Error::InvalidArgument("truncation must be >= 1".into()));
        }
        let (lower, diag, upper) = shifted_killed_operator(model, 0.0, n);
        let mut column = vec![0.0; n];
        column[0] = 1.0;
        let row = (1..=n).map(|j| model.gamma() * j as f64).collect();
        Ok(Self {
            lower: lower.into_iter().map(|v| -v).collect(),
            diag: diag.into_iter().map(|v| -v).collect(),
            upper: upper.into_iter().map(|v| -v).collect(),
            column,
            row,
        })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let wx: f64 = self.row.iter().zip(x).map(|(a, b)| a * b).sum();
        (0..n)
            .map(|i| {
                let mut v = self.diag[i] * x[i] + self.column[i] * wx;
                if i > 0 {
                    v += self.lower[i] * x[i - 1];
                }
                if i + 1 < n {
                    v += self.upper[i] * x[i + 1];
                }
                v
            })
            .collect()
    }

    /// Solves `(mu - M) y = x` through Sherman-Morrison. `None` when `mu`
    /// is not above the Perron root (the shifted matrix is then not a
    /// nonsingular M-matrix).
    fn shifted_solve(&self, mu: f64, x: &[f64]) -> Option<Vec<f64>> {
        let lower: Vec<f64> = self.lower.iter().map(|v| -v).collect();
        let diag: Vec<f64> = self.diag.iter().map(|v| mu - v).collect();
        let upper: Vec<f64> = self.upper.iter().map(|v| -v).collect();
        let tx = solve_tridiagonal(&lower, &diag, &upper, x)?;
        let tc = solve_tridiagonal(&lower, &diag, &upper, &self.column)?;
        let w_tc: f64 = self.row.iter().zip(&tc).map(|(a, b)| a * b).sum();
        let denom = 1.0 - w_tc;
        if !(denom > 0.0) {
            return None;
        }
        let w_tx: f64 = self.row.iter().zip(&tx).map(|(a, b)| a * b).sum();
        let scale = w_tx / denom;
        let y: Vec<f64> = tx.iter().zip(&tc).map(|(a, b)| a + scale * b).collect();
        if y.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Some(y)
        } else {
            None
        }
    }
}

/// Result of the shifted inverse iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominantEigenvalue {
    pub value: f64,
    /// Collatz-Wielandt bounds over the numerically significant entries of
    /// the final iterate.
    pub lower: f64,
    pub upper: f64,
    pub iterations: usize,
}

fn collatz_wielandt(m: &PerturbedGenerator, x: &[f64]) -> (f64, f64) {
    let mx = m.apply(x);
    let top = x.iter().cloned().fold(0.0, f64::max);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (a, b) in mx.iter().zip(x) {
        if *b > 1e-200 * top {
            let r = a / b;
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    (lo, hi)
}

/// Perron root of the truncated `A + F'(0)` on `1..=n` by shifted inverse
/// iteration, with the shift pulled towards the current estimate whenever
/// it provably stays above the root.
pub fn dominant_eigenvalue(model: &RateModel, n: usize) -> Result<DominantEigenvalue> {
    let m = PerturbedGenerator::new(model, n)?;
    let mut x: Vec<f64> = (1..=n).map(|j| 0.5f64.powi(j.min(1000) as i32)).collect();
    let (_, start_upper) = collatz_wielandt(&m, &x);
    let mut mu = start_upper + 1.0;
    let mut estimate = f64::NAN;
    let mut stable = 0;
    for it in 1..=5000 {
        let y = m
            .shifted_solve(mu, &x)
            .ok_or_else(|| Error::SpectralDomain(format!("shift {mu} fell below the dominant eigenvalue")))?;
        let total: f64 = y.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::SpectralDomain("inverse iteration produced a degenerate iterate".into()));
        }
        let next = mu - 1.0 / total;
        x = y.into_iter().map(|v| v / total).collect();
        let change = (next - estimate).abs();
        estimate = next;
        if change <= 1e-13 * estimate.abs().max(1.0) {
            stable += 1;
            if stable >= 2 {
                let (lower, upper) = collatz_wielandt(&m, &x);
                return Ok(DominantEigenvalue { value: estimate, lower, upper, iterations: it });
            }
        } else {
            stable = 0;
        }
        // move the shift closer, but only to a value the solve accepts
        let gap = if change.is_finite() { (8.0 * change).max(1e-8 * estimate.abs().max(1.0)) } else { mu - estimate };
        let candidate = estimate + gap;
        if candidate < mu && m.shifted_solve(candidate, &x).is_some() {
            mu = candidate;
        }
    }
    Err(Error::SpectralDomain("inverse iteration did not converge".into()))
}

/// Largest real eigenvalue of the truncated `A + F'(0)` on `1..=n`.
pub fn dominant_eigenvalue_check(model: &RateModel, n: usize) -> Result<f64> {
    Ok(dominant_eigenvalue(model, n)?.value)
}
