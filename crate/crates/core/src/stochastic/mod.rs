//! Stochastic simulation: the single-patch chain, the finite metapopulation
//! and monotone couplings of the chain.

pub mod coupling;
pub mod metapop;
pub mod patch;
pub mod rng;
pub mod sumtree;

pub use coupling::{
    coupled_pair_run, coupling_experiment, layered_run, second_difference_experiment, CouplingReport, PairPath,
    SecondDifferenceTable,
};
pub use metapop::{simulate_metapopulation, EventCounters, MetapopRun, MetapopSample};
pub use patch::{r0_monte_carlo, simulate_patch, PatchOptions, PatchRun, R0Estimate};
pub use rng::{stream_rng, Stream, GENERATOR};
