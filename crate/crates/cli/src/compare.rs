//! Finite-population simulation against the deterministic frequencies.

use metapop_core::meanfield::{integrate, IntegrationControls, TruncatedState};
use metapop_core::model::normalize_rho;
use metapop_core::stochastic::{simulate_metapopulation, EventCounters, MetapopRun};
use metapop_core::{RateModel, Result};
use serde::Serialize;

/// States `0..=COMPARED_STATES` enter the comparison.
pub const COMPARED_STATES: usize = 10;

/// Slack added to the binomial band.
pub const BAND_SLACK: f64 = 2e-2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateComparison {
    pub t: f64,
    pub i: usize,
    pub p_hat: f64,
    pub p_ode: f64,
    /// `sqrt(p (1 - p) / n)` at the deterministic value.
    pub sd: f64,
    /// `(p_hat - p) / sd`; absent when `sd = 0`.
    pub z: Option<f64>,
    /// `|p_hat - p| <= 3 sd + BAND_SLACK`.
    pub within_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanFieldComparison {
    pub patches: usize,
    pub seed: u64,
    pub ode_truncation: usize,
    pub rows: Vec<StateComparison>,
    pub max_abs_z: f64,
    pub max_abs_error: f64,
    pub all_within_band: bool,
    pub counters: EventCounters,
    pub ledger_balanced: bool,
}

impl MeanFieldComparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,i,p_hat,p_ode,sd,z,within_band\n");
        for r in &self.rows {
            let z = r.z.map(|z| format!("{z:.16e}")).unwrap_or_default();
            out.push_str(&format!(
                "{:.16e},{},{:.16e},{:.16e},{:.16e},{},{}\n",
                r.t, r.i, r.p_hat, r.p_ode, r.sd, z, r.within_band
            ));
        }
        out
    }
}

/// Deterministic frequencies at each time of the nondecreasing `grid`,
/// integrating leg by leg from `p0` (at time 0). The state is rescaled to
/// unit mass between legs so round-off cannot trip the simplex check.
pub fn frequencies_at(model: &RateModel, p0: &TruncatedState, grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut state = p0.clone();
    let mut out = Vec::with_capacity(grid.len());
    for &t in grid {
        if t > state.t {
            let controls = IntegrationControls { sample_dt: t - state.t, ..IntegrationControls::default() };
            let traj = integrate(model, &state, t, &controls)?;
            let mut p = traj.last().p.clone();
            let total: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= total);
            state = TruncatedState::new(p, t)?;
        }
        out.push(state.p.clone());
    }
    Ok(out)
}

/// Simulates `hist` (patches per occupancy) on `grid` and compares the
/// empirical frequencies of states `0..=10` with the deterministic system
/// truncated at `n_ode`. Thinning uses the model's `rho`; the deterministic
/// side folds the losses into the death rates.
pub fn mean_field_comparison(
    model: &RateModel,
    hist: &[usize],
    grid: &[f64],
    seed: u64,
    n_ode: usize,
) -> Result<(MetapopRun, MeanFieldComparison)> {
    let run = simulate_metapopulation(model, hist, grid, seed)?;
    let patches = run.n;
    let mut p0 = vec![0.0; n_ode.max(hist.len() - 1) + 1];
    for (i, &c) in hist.iter().enumerate() {
        p0[i] = c as f64 / patches as f64;
    }
    let p0 = TruncatedState::new(p0, 0.0)?;
    let ode = frequencies_at(&normalize_rho(model), &p0, grid)?;
    let mut rows = Vec::with_capacity(grid.len() * (COMPARED_STATES + 1));
    for (sample, p) in run.samples.iter().zip(&ode) {
        for i in 0..=COMPARED_STATES {
            let p_hat = sample.p.get(i).copied().unwrap_or(0.0);
            let p_ode = p.get(i).copied().unwrap_or(0.0).clamp(0.0, 1.0);
            let sd = (p_ode * (1.0 - p_ode) / patches as f64).sqrt();
            let err = (p_hat - p_ode).abs();
            rows.push(StateComparison {
                t: sample.t,
                i,
                p_hat,
                p_ode,
                sd,
                z: (sd > 0.0).then(|| (p_hat - p_ode) / sd),
                within_band: err <= 3.0 * sd + BAND_SLACK,
            });
        }
    }
    let max_abs_z = rows.iter().filter_map(|r| r.z).map(f64::abs).fold(0.0, f64::max);
    let max_abs_error = rows.iter().map(|r| (r.p_hat - r.p_ode).abs()).fold(0.0, f64::max);
    let cmp = MeanFieldComparison {
        patches,
        seed,
        ode_truncation: p0.n(),
        all_within_band: rows.iter().all(|r| r.within_band),
        rows,
        max_abs_z,
        max_abs_error,
        counters: run.counters,
        ledger_balanced: run.ledger_balanced,
    };
    Ok((run, cmp))
}
