//! Monotone coupling of copies of the single-patch chain started from
//! ordered initial states.
//!
//! Copies `x_1 <= x_2 <= ... <= x_L` are driven by layered events. With
//! `f(x) = x b_x` and `g(x) = x (d_x + gamma)`, layer `k` fires an upward
//! event at rate `f(x_k) - f(x_{k-1})` (layer 1: `f(x_1) + gamma s`) and a
//! downward event at rate `g(x_k) - g(x_{k-1})` (layer 1: `g(x_1)`); an
//! event in layer `k` moves every copy `x_k, ..., x_L`. Rates telescope, so
//! each copy is marginally the chain, and monotone total rates keep the
//! order. A single catastrophe clock empties all copies at once, after
//! which they coincide forever.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rng::{exponential, stream_rng, Stream};
use crate::error::{Error, Result};
use crate::model::RateModel;

/// Copy values at each grid time and the number of checked events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayeredPath {
    /// `values[g][l]` is copy `l` at grid time `g`.
    pub values: Vec<Vec<u64>>,
    pub events: u64,
}

fn layer_rates(model: &RateModel, s: f64, x: &[u64], up: &mut [f64], down: &mut [f64]) -> Result<()> {
    let f = |v: u64| model.total_birth(v as usize);
    let g = |v: u64| model.total_death(v as usize) + model.gamma() * v as f64;
    for k in 0..x.len() {
        let (fu, gd) = if k == 0 {
            (f(x[0]) + model.gamma() * s, g(x[0]))
        } else {
            (f(x[k]) - f(x[k - 1]), g(x[k]) - g(x[k - 1]))
        };
        if fu < -1e-12 * f(x[k]).max(1.0) || gd < -1e-12 * g(x[k]).max(1.0) {
            return Err(Error::InvalidModel(format!(
                "total birth or death rate decreases between {} and {}; the monotone coupling needs nondecreasing totals",
                x[k - 1],
                x[k]
            )));
        }
        up[k] = fu.max(0.0);
        down[k] = gd.max(0.0);
    }
    Ok(())
}

/// One layered run from nondecreasing `init`, sampled at the nondecreasing
/// times in `grid`. Copies are checked for order after every event.
pub fn layered_run(
    model: &RateModel,
    s: f64,
    init: &[u64],
    grid: &[f64],
    seed: u64,
    replicate: u64,
) -> Result<LayeredPath> {
    model.require_normalized()?;
    if init.is_empty() || init.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("initial states must be nonempty and nondecreasing".into()));
    }
    let layers = init.len();
    let mut x = init.to_vec();
    let mut up = vec![0.0; layers];
    let mut down = vec![0.0; layers];
    let mut events_rng = stream_rng(seed, replicate, Stream::Events);
    let mut cat_rng = stream_rng(seed, replicate, Stream::Catastrophe);
    let nu = model.nu();
    let mut next_catastrophe = exponential(&mut cat_rng, nu);
    let mut values = Vec::with_capacity(grid.len());
    let mut next_sample = 0;
    let mut t = 0.0;
    let mut events = 0u64;
    let t_end = grid.last().copied().unwrap_or(0.0);
    while next_sample < grid.len() {
        layer_rates(model, s, &x, &mut up, &mut down)?;
        let total: f64 = up.iter().sum::<f64>() + down.iter().sum::<f64>();
        let t_jump = t + exponential(&mut events_rng, total);
        let t_next = t_jump.min(next_catastrophe);
        while next_sample < grid.len() && grid[next_sample] < t_next {
            values.push(x.clone());
            next_sample += 1;
        }
        if next_sample == grid.len() || t_next > t_end {
            break;
        }
        t = t_next;
        if next_catastrophe <= t_jump {
            // the pending reaction draw is discarded; rates are memoryless
            x.iter_mut().for_each(|v| *v = 0);
            next_catastrophe = t + exponential(&mut cat_rng, nu);
        } else {
            let mut u = events_rng.random::<f64>() * total;
            let mut fired = None;
            for k in 0..layers {
                if u < up[k] {
                    fired = Some((k, true));
                    break;
                }
                u -= up[k];
                if u < down[k] {
                    fired = Some((k, false));
                    break;
                }
                u -= down[k];
            }
            let (k, is_up) = fired.unwrap_or_else(|| {
                // rounding at the top of the range: take the last positive rate
                (0..layers)
                    .rev()
                    .flat_map(|k| [(k, false), (k, true)])
                    .find(|&(k, up_ev)| if up_ev { up[k] > 0.0 } else { down[k] > 0.0 })
                    .expect("total rate is positive")
            });
            for v in &mut x[k..] {
                if is_up {
                    *v += 1;
                } else {
                    *v = v.checked_sub(1).ok_or_else(|| Error::CouplingBug {
                        t,
                        detail: format!("layer {k} moved a zero copy down"),
                    })?;
                }
            }
        }
        events += 1;
        if let Some(w) = x.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::CouplingBug { t, detail: format!("copies {w} and {} out of order: {x:?}", w + 1) });
        }
    }
    Ok(LayeredPath { values, events })
}

/// Pair `(Z1, Z2)` from `Z1(0) = k > Z2(0) = l`; `Z1 - Z2` is the
/// nonnegative `W` component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPath {
    pub times: Vec<f64>,
    pub z1: Vec<u64>,
    pub z2: Vec<u64>,
    pub events: u64,
}

pub fn coupled_pair_run(
    model: &RateModel,
    s: f64,
    k: u64,
    l: u64,
    grid: &[f64],
    seed: u64,
    replicate: u64,
) -> Result<PairPath> {
    if k < l {
        return Err(Error::InvalidArgument(format!("need k >= l, got k = {k}, l = {l}")));
    }
    let path = layered_run(model, s, &[l, k], grid, seed, replicate)?;
    Ok(PairPath {
        times: grid.to_vec(),
        z1: path.values.iter().map(|v| v[1]).collect(),
        z2: path.values.iter().map(|v| v[0]).collect(),
        events: path.events,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub times: Vec<f64>,
    pub mean_difference: Vec<f64>,
    pub mean_difference_se: Vec<f64>,
    /// Estimated `P[Z1_t > Z2_t]`.
    pub prob_apart: Vec<f64>,
    pub prob_apart_se: Vec<f64>,
    /// `exp(-nu t)`.
    pub catastrophe_bound: Vec<f64>,
    pub reps: u64,
    /// Events at which the order was checked (every event of every run).
    pub events_checked: u64,
}

fn mean_se(sum: f64, sum_sq: f64, n: f64) -> (f64, f64) {
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    (mean, (var / n).sqrt())
}

/// Monte Carlo over `reps` coupled pairs; replicate `r` uses stream `r`.
pub fn coupling_experiment(
    model: &RateModel,
    s: f64,
    k: u64,
    l: u64,
    grid: &[f64],
    reps: u64,
    seed: u64,
) -> Result<CouplingReport> {
    if reps < 2 {
        return Err(Error::InvalidArgument("need at least two replicates".into()));
    }
    let g = grid.len();
    let runs: Vec<PairPath> =
        (0..reps).into_par_iter().map(|r| coupled_pair_run(model, s, k, l, grid, seed, r)).collect::<Result<_>>()?;
    let n = reps as f64;
    let mut report = CouplingReport {
        times: grid.to_vec(),
        mean_difference: vec![0.0; g],
        mean_difference_se: vec![0.0; g],
        prob_apart: vec![0.0; g],
        prob_apart_se: vec![0.0; g],
        catastrophe_bound: grid.iter().map(|t| (-model.nu() * t).exp()).collect(),
        reps,
        events_checked: runs.iter().map(|r| r.events).sum(),
    };
    for i in 0..g {
        let (mut s1, mut s2, mut a) = (0.0, 0.0, 0.0);
        for r in &runs {
            let w = (r.z1[i] - r.z2[i]) as f64;
            s1 += w;
            s2 += w * w;
            if w > 0.0 {
                a += 1.0;
            }
        }
        let (m, se) = mean_se(s1, s2, n);
        report.mean_difference[i] = m;
        report.mean_difference_se[i] = se;
        let p = a / n;
        report.prob_apart[i] = p;
        report.prob_apart_se[i] = (p * (1.0 - p) / (n - 1.0)).sqrt();
    }
    Ok(report)
}

/// Estimates of `E^(m+2) Z_t - 2 E^(m+1) Z_t + E^(m) Z_t` with common
/// random numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondDifferenceRow {
    pub m: u64,
    pub t: f64,
    pub first_difference_lower: f64,
    pub first_difference_upper: f64,
    pub second_difference: f64,
    pub second_difference_se: f64,
    /// `second_difference + 3 se < 0`.
    pub negative_at_3se: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondDifferenceTable {
    pub s: f64,
    pub reps: u64,
    pub rows: Vec<SecondDifferenceRow>,
}

impl SecondDifferenceTable {
    /// All rows with `t > 0` are negative at 3 standard errors.
    pub fn all_negative(&self) -> bool {
        self.rows.iter().filter(|r| r.t > 0.0).all(|r| r.negative_at_3se)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("m,t,first_difference_lower,first_difference_upper,second_difference,se,negative_at_3se\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
                r.m, r.t, r.first_difference_lower, r.first_difference_upper, r.second_difference, r.second_difference_se,
                r.negative_at_3se
            ));
        }
        out
    }
}

/// Three-copy coupled runs from `(m, m+1, m+2)` for each `m` in `ms`.
/// Replicate streams are `m * reps + r`, so different `m` never share
/// randomness.
pub fn second_difference_experiment(
    model: &RateModel,
    s: f64,
    ms: &[u64],
    t_grid: &[f64],
    reps: u64,
    seed: u64,
) -> Result<SecondDifferenceTable> {
    if reps < 2 {
        return Err(Error::InvalidArgument("need at least two replicates".into()));
    }
    let n = reps as f64;
    let g = t_grid.len();
    let mut rows = Vec::with_capacity(ms.len() * g);
    for &m in ms {
        // per grid time: sums of d1 = x2 - x1, d2 = x3 - x2, and of (d2 - d1) and its square
        let acc = (0..reps)
            .into_par_iter()
            .map(|r| {
                let path = layered_run(model, s, &[m, m + 1, m + 2], t_grid, seed, m * reps + r)?;
                let mut a = vec![[0.0f64; 4]; g];
                for (i, v) in path.values.iter().enumerate() {
                    let d1 = (v[1] - v[0]) as f64;
                    let d2 = (v[2] - v[1]) as f64;
                    a[i] = [d1, d2, d2 - d1, (d2 - d1) * (d2 - d1)];
                }
                Ok(a)
            })
            .try_reduce(
                || vec![[0.0f64; 4]; g],
                |mut x, y| {
                    for (xi, yi) in x.iter_mut().zip(&y) {
                        for c in 0..4 {
                            xi[c] += yi[c];
                        }
                    }
                    Ok(x)
                },
            )?;
        for (i, &t) in t_grid.iter().enumerate() {
            let (sd, se) = mean_se(acc[i][2], acc[i][3], n);
            rows.push(SecondDifferenceRow {
                m,
                t,
                first_difference_lower: acc[i][0] / n,
                first_difference_upper: acc[i][1] / n,
                second_difference: sd,
                second_difference_se: se,
                negative_at_3se: sd + 3.0 * se < 0.0,
            });
        }
    }
    Ok(SecondDifferenceTable { s, reps, rows })
}
