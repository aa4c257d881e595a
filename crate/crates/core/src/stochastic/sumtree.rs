//! Partial-sum tree over nonnegative weights: O(log n) update and
//! weighted sampling.

#[derive(Debug, Clone)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(n: usize) -> Self {
        let leaves = n.max(1).next_power_of_two();
        Self { leaves, nodes: vec![0.0; 2 * leaves] }
    }

    pub fn from_weights(w: &[f64]) -> Self {
        let mut t = Self::new(w.len());
        t.nodes[t.leaves..t.leaves + w.len()].copy_from_slice(w);
        for i in (1..t.leaves).rev() {
            t.nodes[i] = t.nodes[2 * i] + t.nodes[2 * i + 1];
        }
        t
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    /// Sets weight `i`; parents are recomputed from their children so no
    /// rounding drift accumulates.
    pub fn set(&mut self, i: usize, w: f64) {
        debug_assert!(w >= 0.0);
        let mut k = self.leaves + i;
        self.nodes[k] = w;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    /// Index `i` whose cumulative interval contains `u` (`0 <= u < total`).
    /// Zero-weight leaves are never returned.
    pub fn find(&self, mut u: f64) -> usize {
        let mut k = 1;
        while k < self.leaves {
            let left = self.nodes[2 * k];
            if u < left || self.nodes[2 * k + 1] <= 0.0 {
                k *= 2;
            } else {
                u -= left;
                k = 2 * k + 1;
            }
        }
        k - self.leaves
    }
}
