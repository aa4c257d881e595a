//! Exact simulation of `n` patches coupled by mean-field migration.
//!
//! Each individual in a patch of size `i` gives birth at rate `b_i`, dies
//! at rate `d_i` and emigrates at rate `gamma`; each patch is emptied at
//! rate `nu`. An emigrant leaves its patch and, with probability `rho`,
//! lands in a patch drawn uniformly from all `n` (the source included);
//! otherwise it is lost.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rng::{exponential, stream_rng, Stream};
use super::sumtree::SumTree;
use crate::error::{Error, Result};
use crate::model::RateModel;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounters {
    pub births: u64,
    pub deaths: u64,
    /// Emigration events, successful or not.
    pub migrations: u64,
    pub arrivals: u64,
    pub lost_migrants: u64,
    /// Catastrophes that hit an occupied patch.
    pub catastrophes: u64,
    /// Individuals removed by catastrophes.
    pub catastrophe_losses: u64,
}

impl EventCounters {
    pub fn total_events(&self) -> u64 {
        self.births + self.deaths + self.migrations + self.catastrophes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetapopSample {
    pub t: f64,
    /// Fraction of patches holding `i` individuals, `i = 0..`.
    pub p: Vec<f64>,
    pub mean_occupancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetapopRun {
    pub n: usize,
    pub samples: Vec<MetapopSample>,
    pub counters: EventCounters,
    pub initial_population: u64,
    pub final_population: u64,
    /// `final = initial + births - deaths - lost_migrants - catastrophe_losses`.
    pub ledger_balanced: bool,
}

impl MetapopRun {
    /// Columns `t,mean_occupancy,p_0..p_K`.
    pub fn to_csv(&self, cap: usize) -> String {
        let k = self.samples.iter().map(|s| s.p.len()).max().unwrap_or(1).saturating_sub(1).min(cap);
        let mut out = String::from("t,mean_occupancy");
        for j in 0..=k {
            out.push_str(&format!(",p_{j}"));
        }
        out.push('\n');
        for s in &self.samples {
            out.push_str(&format!("{:.16e},{:.16e}", s.t, s.mean_occupancy));
            for j in 0..=k {
                out.push_str(&format!(",{:.16e}", s.p.get(j).copied().unwrap_or(0.0)));
            }
            out.push('\n');
        }
        out
    }
}

/// Expands an occupancy histogram (`hist[i]` patches hold `i`) into patch sizes.
pub fn patches_from_histogram(hist: &[usize]) -> Vec<u64> {
    hist.iter().enumerate().flat_map(|(i, &c)| std::iter::repeat_n(i as u64, c)).collect()
}

fn patch_rate(model: &RateModel, i: u64) -> f64 {
    if i == 0 {
        return 0.0;
    }
    let i = i as usize;
    model.total_birth(i) + model.total_death(i) + model.gamma() * i as f64 + model.nu()
}

fn snapshot(t: f64, hist: &[u64], n: usize) -> MetapopSample {
    let p: Vec<f64> = hist.iter().map(|&c| c as f64 / n as f64).collect();
    let mean_occupancy = p.iter().enumerate().map(|(i, v)| i as f64 * v).sum();
    MetapopSample { t, p, mean_occupancy }
}

/// Simulates from the occupancy histogram `init` and records the empirical
/// frequencies at each time in `grid` (nondecreasing, within `[0, T]`).
pub fn simulate_metapopulation(model: &RateModel, init: &[usize], grid: &[f64], seed: u64) -> Result<MetapopRun> {
    let mut sizes = patches_from_histogram(init);
    let n = sizes.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 patches, got {n}")));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) || grid.first().is_some_and(|t| *t < 0.0) {
        return Err(Error::InvalidArgument("sample times must be nonnegative and nondecreasing".into()));
    }
    let mut events_rng = stream_rng(seed, 0, Stream::Events);
    let mut thin_rng = stream_rng(seed, 0, Stream::Thinning);
    let mut dest_rng = stream_rng(seed, 0, Stream::Destinations);

    let rates: Vec<f64> = sizes.iter().map(|&i| patch_rate(model, i)).collect();
    let mut tree = SumTree::from_weights(&rates);
    let mut hist: Vec<u64> = init.iter().map(|&c| c as u64).collect();
    let initial_population: u64 = sizes.iter().sum();
    let mut population = initial_population;
    let mut counters = EventCounters::default();

    let move_patch = |sizes: &mut Vec<u64>, hist: &mut Vec<u64>, tree: &mut SumTree, k: usize, to: u64| {
        let from = sizes[k];
        hist[from as usize] -= 1;
        if hist.len() <= to as usize {
            hist.resize(to as usize + 1, 0);
        }
        hist[to as usize] += 1;
        sizes[k] = to;
        tree.set(k, patch_rate(model, to));
    };

    let mut samples = Vec::with_capacity(grid.len());
    let mut next_sample = 0;
    let mut t = 0.0;
    let t_end = grid.last().copied().unwrap_or(0.0);
    loop {
        let dt = exponential(&mut events_rng, tree.total());
        let t_next = t + dt;
        while next_sample < grid.len() && grid[next_sample] < t_next {
            samples.push(snapshot(grid[next_sample], &hist, n));
            next_sample += 1;
        }
        if next_sample == grid.len() || t_next > t_end {
            while next_sample < grid.len() {
                samples.push(snapshot(grid[next_sample], &hist, n));
                next_sample += 1;
            }
            break;
        }
        t = t_next;
        let k = tree.find(events_rng.random::<f64>() * tree.total());
        let i = sizes[k];
        let iu = i as usize;
        let birth = model.total_birth(iu);
        let death = model.total_death(iu);
        let migrate = model.gamma() * i as f64;
        let u = events_rng.random::<f64>() * tree.get(k);
        if u < birth {
            counters.births += 1;
            population += 1;
            move_patch(&mut sizes, &mut hist, &mut tree, k, i + 1);
        } else if u < birth + death {
            counters.deaths += 1;
            population -= 1;
            move_patch(&mut sizes, &mut hist, &mut tree, k, i - 1);
        } else if u < birth + death + migrate {
            counters.migrations += 1;
            move_patch(&mut sizes, &mut hist, &mut tree, k, i - 1);
            if thin_rng.random::<f64>() < model.rho() {
                counters.arrivals += 1;
                let dest = dest_rng.random_range(0..n);
                let size = sizes[dest];
                move_patch(&mut sizes, &mut hist, &mut tree, dest, size + 1);
            } else {
                counters.lost_migrants += 1;
                population -= 1;
            }
        } else {
            counters.catastrophes += 1;
            counters.catastrophe_losses += i;
            population -= i;
            move_patch(&mut sizes, &mut hist, &mut tree, k, 0);
        }
    }
    let final_population: u64 = sizes.iter().sum();
    let expected = initial_population + counters.births
        - counters.deaths
        - counters.lost_migrants
        - counters.catastrophe_losses;
    Ok(MetapopRun {
        n,
        samples,
        counters,
        initial_population,
        final_population,
        ledger_balanced: final_population == expected && population == final_population,
    })
}
