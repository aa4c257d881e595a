//! Truncated deterministic system for the patch-size frequencies `p_i(t)`.
//!
//! A patch in state `i` moves exactly like the single-patch chain with
//! immigration level `s(t) = sum_j j p_j(t)`, so
//!
//! ```text
//! p_i' = -(up_i + down_i + nu [i >= 1]) p_i + up_{i-1} p_{i-1} + down_{i+1} p_{i+1}
//!        + [i = 0] nu (1 - p_0)
//! ```
//!
//! with `up_i = i b_i + gamma s` and `down_i = i (d_i + gamma)`. States are
//! truncated at `N` and `up_N` is set to zero, which conserves mass.

pub mod diagnostics;
pub mod rk;

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RateModel;
use rk::{Dopri5, StepControls};

pub use diagnostics::{
    comparison_bound_check, convergence_diagnose, equilibrium_target, mean_ode_check, scalar_comparison,
    two_truncation_consistency, ComparisonReport, ConvergenceReport, ScalarComparison,
};

/// Negative entries smaller than this in magnitude are set to zero after
/// each accepted step.
pub const CLAMP_THRESHOLD: f64 = 1e-12;
/// Mass defects beyond this abort the integration.
pub const MASS_DEFECT_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedState {
    pub p: Vec<f64>,
    pub t: f64,
}

impl TruncatedState {
    /// Validates `p` as a point of the simplex (entries `>= -1e-12`, total
    /// within `1e-12` of one).
    pub fn new(p: Vec<f64>, t: f64) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidArgument("state needs at least one entry".into()));
        }
        if let Some((i, v)) = p.iter().enumerate().find(|(_, v)| !(**v >= -CLAMP_THRESHOLD)) {
            return Err(Error::InvalidArgument(format!("p_{i} = {v} is negative")));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { p, t })
    }

    /// All patches hold `j` individuals; truncation `n >= j`.
    pub fn point_mass(j: usize, n: usize) -> Result<Self> {
        if j > n {
            return Err(Error::InvalidArgument(format!("state {j} lies beyond the truncation {n}")));
        }
        let mut p = vec![0.0; n + 1];
        p[j] = 1.0;
        Ok(Self { p, t: 0.0 })
    }

    /// The first `n + 1` entries of a distribution, renormalised.
    pub fn from_distribution(pi: &[f64], n: usize) -> Result<Self> {
        let mut p = vec![0.0; n + 1];
        for (dst, src) in p.iter_mut().zip(pi) {
            *dst = src.max(0.0);
        }
        let total: f64 = p.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("distribution has no mass below the truncation".into()));
        }
        p.iter_mut().for_each(|v| *v /= total);
        Ok(Self { p, t: 0.0 })
    }

    pub fn n(&self) -> usize {
        self.p.len() - 1
    }

    pub fn mean(&self) -> f64 {
        mean_of(&self.p)
    }
}

fn mean_of(p: &[f64]) -> f64 {
    p.iter().enumerate().map(|(j, v)| j as f64 * v).sum()
}

/// Writes the truncated vector field at `p` into `out`.
pub fn rhs_into(model: &RateModel, p: &[f64], out: &mut [f64]) {
    let n = p.len() - 1;
    let gamma = model.gamma();
    let nu = model.nu();
    let s = mean_of(p);
    let up = |i: usize| if i < n { model.total_birth(i) + gamma * s } else { 0.0 };
    let down = |i: usize| if i == 0 { 0.0 } else { model.total_death(i) + gamma * i as f64 };
    let occupied: f64 = p[1..].iter().sum();
    for i in 0..=n {
        let kill = if i >= 1 { nu } else { 0.0 };
        let mut v = -(up(i) + down(i) + kill) * p[i];
        if i >= 1 {
            v += up(i - 1) * p[i - 1];
        } else {
            v += nu * occupied;
        }
        if i < n {
            v += down(i + 1) * p[i + 1];
        }
        out[i] = v;
    }
}

/// The truncated vector field; the closure conserves mass.
pub fn rhs(model: &RateModel, state: &TruncatedState) -> Result<Vec<f64>> {
    model.require_normalized()?;
    let mut out = vec![0.0; state.p.len()];
    rhs_into(model, &state.p, &mut out);
    let scale: f64 = out.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
    let drift: f64 = out.iter().sum();
    assert!(drift.abs() <= 1e-12 * scale, "closure not conservative: sum of derivative = {drift}");
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationControls {
    /// Absolute error tolerance. The step size of the truncated system is
    /// limited by stability rather than accuracy, and at this level the
    /// stability-bound steps stop producing negative tail entries.
    pub atol: f64,
    pub rtol: f64,
    /// Spacing of the recorded samples.
    pub sample_dt: f64,
    /// Abort when `N p_N` exceeds this (`None` disables the check).
    pub leak_tol: Option<f64>,
    /// Renormalise the state to unit mass after every sample.
    pub renormalize: bool,
    pub max_steps: usize,
}

impl Default for IntegrationControls {
    fn default() -> Self {
        Self { atol: 1e-14, rtol: 1e-8, sample_dt: 0.1, leak_tol: Some(1e-6), renormalize: false, max_steps: 50_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub p: Vec<f64>,
    /// `sum_j j p_j`, recomputed from the state.
    pub s: f64,
    /// `sum_j p_j - 1`.
    pub mass_defect: f64,
}

/// Echo of the integration inputs, stored with the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub n: usize,
    pub t_end: f64,
    pub controls: IntegrationControls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub config: TrajectoryConfig,
    pub samples: Vec<Sample>,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
    /// Most negative entry seen after any accepted sample, before clamping.
    pub min_entry: f64,
    /// Total mass added by clamping.
    pub clamped_mass: f64,
}

/// Integrates the truncated system from `p0` up to time `t_end`.
pub fn integrate(
    model: &RateModel,
    p0: &TruncatedState,
    t_end: f64,
    controls: &IntegrationControls,
) -> Result<Trajectory> {
    model.require_normalized()?;
    if !(t_end >= p0.t) || !t_end.is_finite() {
        return Err(Error::InvalidArgument(format!("final time {t_end} precedes the start {}", p0.t)));
    }
    if !(controls.sample_dt > 0.0) {
        return Err(Error::InvalidArgument("sample spacing must be positive".into()));
    }
    TruncatedState::new(p0.p.clone(), p0.t)?;
    let n = p0.n();
    let step = StepControls { atol: controls.atol, rtol: controls.rtol, max_steps: controls.max_steps, ..StepControls::default() };
    let mut rk = Dopri5::new(|_, y, dy| rhs_into(model, y, dy), p0.t, p0.p.clone(), step);

    let mut samples = Vec::new();
    let mut min_entry = p0.p.iter().cloned().fold(0.0, f64::min);
    let mut clamped_mass = 0.0;
    let record = |t: f64, p: &[f64], samples: &mut Vec<Sample>| -> Result<()> {
        let mass: f64 = p.iter().sum();
        let defect = mass - 1.0;
        if defect.abs() > MASS_DEFECT_LIMIT || !defect.is_finite() {
            return Err(Error::IntegrationDiverged { t, reason: format!("mass defect {defect:.3e}") });
        }
        if let Some(limit) = controls.leak_tol {
            let leak = n as f64 * p[n];
            if n > 0 && leak > limit {
                return Err(Error::IntegrationDiverged {
                    t,
                    reason: format!("truncation leak: N p_N = {leak:.3e} exceeds {limit:.1e}; increase N"),
                });
            }
        }
        samples.push(Sample { t, p: p.to_vec(), s: mean_of(p), mass_defect: defect });
        Ok(())
    };
    record(p0.t, &p0.p, &mut samples)?;

    let mut k = 1u64;
    loop {
        let target = (p0.t + k as f64 * controls.sample_dt).min(t_end);
        rk.advance_to(target)?;
        let mut y = std::mem::take(&mut rk.y);
        let mut modified = false;
        for v in y.iter_mut() {
            if *v < 0.0 {
                min_entry = min_entry.min(*v);
                if -*v < CLAMP_THRESHOLD {
                    clamped_mass += -*v;
                    *v = 0.0;
                    modified = true;
                }
            }
        }
        if controls.renormalize {
            let total: f64 = y.iter().sum();
            y.iter_mut().for_each(|v| *v /= total);
            modified = true;
        }
        record(target, &y, &mut samples)?;
        if modified {
            rk.reset_state(y);
        } else {
            rk.y = y;
        }
        if target >= t_end {
            break;
        }
        k += 1;
    }
    Ok(Trajectory {
        config: TrajectoryConfig { n, t_end, controls: *controls },
        samples,
        steps_accepted: rk.accepted,
        steps_rejected: rk.rejected,
        min_entry,
        clamped_mass,
    })
}

/// Default number of `p_j` columns in the trajectory CSV.
pub const CSV_REPORT_CAP: usize = 50;

impl Trajectory {
    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory holds the initial sample")
    }

    pub fn max_mass_defect(&self) -> f64 {
        self.samples.iter().map(|s| s.mass_defect.abs()).fold(0.0, f64::max)
    }

    /// Columns `t,s,mass_defect,p_0..p_K` with `K = min(cap, N)`.
    pub fn to_csv(&self, cap: usize) -> String {
        let k = cap.min(self.n());
        let mut out = String::from("t,s,mass_defect");
        for j in 0..=k {
            out.push_str(&format!(",p_{j}"));
        }
        out.push('\n');
        for smp in &self.samples {
            out.push_str(&format!("{:.16e},{:.16e},{:.16e}", smp.t, smp.s, smp.mass_defect));
            for v in &smp.p[..=k] {
                out.push_str(&format!(",{v:.16e}"));
            }
            out.push('\n');
        }
        out
    }

    /// Full-state dump: `u64 N`, `u64 sample count`, then per sample `t`
    /// followed by `p_0..p_N`; all little-endian, floats as IEEE-754 f64.
    pub fn write_binary(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&(self.n() as u64).to_le_bytes())?;
        w.write_all(&(self.samples.len() as u64).to_le_bytes())?;
        for smp in &self.samples {
            w.write_all(&smp.t.to_le_bytes())?;
            for v in &smp.p {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// Reads a dump written by [`Trajectory::write_binary`] as `(t, p)` pairs.
pub fn read_binary(r: &mut impl Read) -> io::Result<Vec<(f64, Vec<f64>)>> {
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let n = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let count = u64::from_le_bytes(word) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut word)?;
        let t = f64::from_le_bytes(word);
        let mut p = Vec::with_capacity(n + 1);
        for _ in 0..=n {
            r.read_exact(&mut word)?;
            p.push(f64::from_le_bytes(word));
        }
        out.push((t, p));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_rate_model, RateFamily};

    fn logistic() -> RateModel {
        build_rate_model(RateFamily::LogisticDeath { b0: 3.0, d0: 1.0, delta: 3.0 }, 1.0, 0.5, 1.0).unwrap()
    }

    #[test]
    fn extinction_state_is_fixed() {
        let m = logistic();
        let e0 = TruncatedState::point_mass(0, 20).unwrap();
        assert!(rhs(&m, &e0).unwrap().iter().all(|v| *v == 0.0));
        let traj = integrate(&m, &e0, 5.0, &IntegrationControls::default()).unwrap();
        assert!(traj.samples.iter().all(|s| s.p == e0.p));
    }

    #[test]
    fn two_state_system_by_hand() {
        let m = logistic();
        let st = TruncatedState::new(vec![0.7, 0.3], 0.0).unwrap();
        let d = rhs(&m, &st).unwrap();
        let s = 0.3;
        let (gamma, nu, d1) = (1.0, 0.5, 1.0);
        let p0 = -gamma * s * 0.7 + (d1 + gamma) * 0.3 + nu * 0.3;
        assert!((d[0] - p0).abs() < 1e-15);
        assert!((d[1] + p0).abs() < 1e-15);
    }

    #[test]
    fn state_validation() {
        assert!(TruncatedState::new(vec![0.5, 0.4], 0.0).is_err());
        assert!(TruncatedState::new(vec![1.1, -0.1], 0.0).is_err());
        assert!(TruncatedState::point_mass(5, 3).is_err());
        let s = TruncatedState::from_distribution(&[0.5, 0.25, 0.25], 1).unwrap();
        assert!((s.p[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn samples_are_on_the_grid() {
        let m = logistic();
        let st = TruncatedState::point_mass(1, 60).unwrap();
        let c = IntegrationControls { sample_dt: 0.25, ..Default::default() };
        let traj = integrate(&m, &st, 1.1, &c).unwrap();
        let ts: Vec<f64> = traj.samples.iter().map(|s| s.t).collect();
        assert_eq!(ts, vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.1]);
        assert!(traj.max_mass_defect() < 1e-10);
        assert!(traj.min_entry >= -1e-12 && traj.clamped_mass < 1e-9, "{} {}", traj.min_entry, traj.clamped_mass);
    }

    #[test]
    fn under_truncation_is_reported() {
        let m = logistic();
        let st = TruncatedState::point_mass(1, 4).unwrap();
        let err = integrate(&m, &st, 10.0, &IntegrationControls::default()).unwrap_err();
        assert!(matches!(err, Error::IntegrationDiverged { ref reason, .. } if reason.contains("leak")));
    }

    #[test]
    fn csv_and_binary_round_trip() {
        let m = logistic();
        let st = TruncatedState::point_mass(2, 40).unwrap();
        let traj = integrate(&m, &st, 0.5, &IntegrationControls::default()).unwrap();
        let csv = traj.to_csv(5);
        assert!(csv.starts_with("t,s,mass_defect,p_0,p_1,p_2,p_3,p_4,p_5\n"));
        assert_eq!(csv.lines().count(), traj.samples.len() + 1);
        let mut buf = Vec::new();
        traj.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + traj.samples.len() * 8 * 42);
        let back = read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(back.len(), traj.samples.len());
        assert_eq!(back[3].1, traj.samples[3].p);
    }
}
