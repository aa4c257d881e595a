//! Random streams. Every simulation draws from ChaCha8 generators seeded
//! with the master seed; the 64-bit stream id is `replicate * 8 + purpose`,
//! so replicates and purposes never share a keystream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Identity of the generator behind every stream.
pub const GENERATOR: &str = "ChaCha8 (rand_chacha 0.9), stream = replicate * 8 + purpose";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Event times and event selection.
    Events = 0,
    /// Bernoulli thinning (migrant survival).
    Thinning = 1,
    /// Migration destinations.
    Destinations = 2,
    /// The shared catastrophe clock of coupled runs.
    Catastrophe = 3,
}

impl Stream {
    pub const ALL: [Stream; 4] = [Stream::Events, Stream::Thinning, Stream::Destinations, Stream::Catastrophe];

    pub fn name(self) -> &'static str {
        match self {
            Stream::Events => "events",
            Stream::Thinning => "thinning",
            Stream::Destinations => "destinations",
            Stream::Catastrophe => "catastrophe",
        }
    }
}

pub fn stream_rng(seed: u64, replicate: u64, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate.wrapping_mul(8).wrapping_add(purpose as u64));
    rng
}

/// Exponential waiting time with the given rate (infinite for rate 0).
#[inline]
pub fn exponential(rng: &mut impl Rng, rate: f64) -> f64 {
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    // 1 - U lies in (0, 1]
    -(1.0 - rng.random::<f64>()).ln() / rate
}
