//! Computational basis: bit `i` set means spin `i` is up (`m_i = +1/2`).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BasisIndex(pub usize);

impl BasisIndex {
    pub fn popcount(self) -> u32 {
        self.0.count_ones()
    }

    /// Total magnetization `popcount - N/2` in units of hbar.
    pub fn magnetization(self, n_spins: usize) -> f64 {
        self.popcount() as f64 - 0.5 * n_spins as f64
    }

    pub fn spin_up(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    /// Builds an index from per-spin orientations, spin 0 first.
    pub fn from_spins(up: &[bool]) -> BasisIndex {
        BasisIndex(up.iter().enumerate().filter(|(_, &u)| u).map(|(i, _)| 1 << i).sum())
    }
}

/// Coherence order `m(r) - m(c)` of the density-matrix element `(r, c)`.
pub fn coherence_order(r: BasisIndex, c: BasisIndex) -> i32 {
    r.popcount() as i32 - c.popcount() as i32
}

/// Diagonal of the total `I_z` over the whole basis.
pub fn iz_diagonal(n_spins: usize) -> Vec<f64> {
    (0..1usize << n_spins).map(|b| BasisIndex(b).magnetization(n_spins)).collect()
}
