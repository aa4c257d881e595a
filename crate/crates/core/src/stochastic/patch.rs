//! Exact simulation of the single-patch chain and the Monte Carlo estimate
//! of the reproduction number.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rng::{exponential, stream_rng, Stream};
use crate::chain::{chain_rates, ChainSpec};
use crate::error::{Error, Result};
use crate::model::RateModel;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchOptions {
    /// Statistics ignore `[0, burn_in)`.
    pub burn_in: f64,
    /// Exponent offset of the reported higher moment, `E Z^(1 + delta)`.
    pub moment_delta: f64,
    /// Number of equal batches used for batch-means standard errors.
    pub batches: usize,
    pub record_path: bool,
}

impl Default for PatchOptions {
    fn default() -> Self {
        Self { burn_in: 0.0, moment_delta: 0.5, batches: 20, record_path: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRun {
    pub final_state: u64,
    pub events: u64,
    /// Time average of the state after the burn-in.
    pub mean: f64,
    /// Batch-means standard error of `mean`.
    pub mean_se: f64,
    /// Time average of `state^(1 + delta)` after the burn-in.
    pub moment: f64,
    /// Fraction of post-burn-in time spent in each state.
    pub occupation: Vec<f64>,
    /// Batch-means standard error of each occupation fraction.
    pub occupation_se: Vec<f64>,
    /// Jump times and states (including the start) when requested.
    pub path: Vec<(f64, u64)>,
}

struct Batches {
    start: f64,
    width: f64,
    occupation: Vec<Vec<f64>>,
    mean: Vec<f64>,
    moment: Vec<f64>,
    delta: f64,
}

impl Batches {
    fn new(start: f64, end: f64, count: usize, delta: f64) -> Self {
        let count = count.max(1);
        Self {
            start,
            width: (end - start) / count as f64,
            occupation: vec![Vec::new(); count],
            mean: vec![0.0; count],
            moment: vec![0.0; count],
            delta,
        }
    }

    /// Credits the time interval `[a, b)` spent in `state`.
    fn add(&mut self, state: u64, a: f64, b: f64) {
        let count = self.mean.len();
        let (a, b) = (a.max(self.start), b);
        if !(b > a) || !(self.width > 0.0) {
            return;
        }
        let first = (((a - self.start) / self.width) as usize).min(count - 1);
        let j = state as usize;
        let x = state as f64;
        for k in first..count {
            let lo = self.start + k as f64 * self.width;
            let hi = if k + 1 == count { f64::INFINITY } else { lo + self.width };
            let piece = b.min(hi) - a.max(lo);
            if piece > 0.0 {
                let occ = &mut self.occupation[k];
                if occ.len() <= j {
                    occ.resize(j + 1, 0.0);
                }
                occ[j] += piece;
                self.mean[k] += x * piece;
                self.moment[k] += x.powf(1.0 + self.delta) * piece;
            }
            if hi >= b {
                break;
            }
        }
    }

    fn mean_and_se(values: &[f64]) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        if values.len() < 2 {
            return (mean, f64::NAN);
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    fn finish(self) -> (f64, f64, f64, Vec<f64>, Vec<f64>) {
        let w = self.width;
        let scale = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| x / w).collect() };
        let (mean, mean_se) = Self::mean_and_se(&scale(&self.mean));
        let (moment, _) = Self::mean_and_se(&scale(&self.moment));
        let states = self.occupation.iter().map(|o| o.len()).max().unwrap_or(0);
        let mut occupation = vec![0.0; states];
        let mut occupation_se = vec![0.0; states];
        for j in 0..states {
            let per: Vec<f64> = self.occupation.iter().map(|o| o.get(j).copied().unwrap_or(0.0) / w).collect();
            let (m, se) = Self::mean_and_se(&per);
            occupation[j] = m;
            occupation_se[j] = se;
        }
        (mean, mean_se, moment, occupation, occupation_se)
    }
}

fn draw_jump(spec: &ChainSpec<'_>, state: u64, rng: &mut impl Rng) -> (f64, u64) {
    let j = state as usize;
    let up = spec.up(j);
    let down = spec.down(j);
    let kill = if j >= 1 { spec.kill() } else { 0.0 };
    let total = up + down + kill;
    let dt = exponential(rng, total);
    if !dt.is_finite() {
        return (dt, state);
    }
    let u = rng.random::<f64>() * total;
    let next = if u < up {
        state + 1
    } else if u < up + down {
        state - 1
    } else {
        0
    };
    (dt, next)
}

/// Gillespie path of the chain from `init` on `[0, t_end]`.
pub fn simulate_patch(spec: &ChainSpec<'_>, init: u64, t_end: f64, seed: u64, options: &PatchOptions) -> Result<PatchRun> {
    if !(t_end > options.burn_in) || !(options.burn_in >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= burn_in < T, got burn_in = {}, T = {t_end}",
            options.burn_in
        )));
    }
    let mut rng = stream_rng(seed, 0, Stream::Events);
    let mut batches = Batches::new(options.burn_in, t_end, options.batches, options.moment_delta);
    let mut path = Vec::new();
    if options.record_path {
        path.push((0.0, init));
    }
    let (mut t, mut state, mut events) = (0.0, init, 0u64);
    loop {
        let (dt, next) = draw_jump(spec, state, &mut rng);
        let t_next = t + dt;
        if t_next >= t_end {
            batches.add(state, t, t_end);
            break;
        }
        batches.add(state, t, t_next);
        t = t_next;
        state = next;
        events += 1;
        if options.record_path {
            path.push((t, state));
        }
    }
    let (mean, mean_se, moment, occupation, occupation_se) = batches.finish();
    Ok(PatchRun { final_state: state, events, mean, mean_se, moment, occupation, occupation_se, path })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct R0Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub reps: u64,
    /// Paths stopped by the step cap before absorption; their partial areas
    /// are included, which biases the estimate low.
    pub censored: u64,
}

/// Default cap on jumps per path in [`r0_monte_carlo`].
pub const R0_STEP_CAP: u64 = 10_000_000;

/// Mean of `gamma * integral of Z` over zero-immigration paths started at 1
/// and stopped at absorption in 0. Replicate `r` uses its own stream.
pub fn r0_monte_carlo(model: &RateModel, reps: u64, seed: u64) -> Result<R0Estimate> {
    let spec = chain_rates(model, 0.0)?;
    if reps < 2 {
        return Err(Error::InvalidArgument("need at least two replicates".into()));
    }
    let gamma = model.gamma();
    let runs: Vec<(f64, bool)> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r, Stream::Events);
            let (mut state, mut area, mut steps) = (1u64, 0.0, 0u64);
            while state > 0 {
                if steps >= R0_STEP_CAP {
                    return (gamma * area, true);
                }
                let (dt, next) = draw_jump(&spec, state, &mut rng);
                area += state as f64 * dt;
                state = next;
                steps += 1;
            }
            (gamma * area, false)
        })
        .collect();
    let n = reps as f64;
    let mean = runs.iter().map(|r| r.0).sum::<f64>() / n;
    let var = runs.iter().map(|r| (r.0 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let censored = runs.iter().filter(|r| r.1).count() as u64;
    Ok(R0Estimate { mean, stderr: (var / n).sqrt(), reps, censored })
}
