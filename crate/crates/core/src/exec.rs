//! Data-parallel execution over fixed chunks.
//!
//! Work is always split into the same chunks and partial results are
//! returned in chunk order, so reductions give bit-identical results whether
//! the chunks run on the rayon pool or one after another.

use serde::{Deserialize, Serialize};

/// Samples per chunk for batch-level work.
pub const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// `Parallel` falls back to `Sequential` without the `parallel` feature.
    pub fn effective(self) -> Exec {
        if cfg!(feature = "parallel") {
            self
        } else {
            Exec::Sequential
        }
    }

    /// Evaluate `f` on every chunk index in `0..n_chunks`, in order.
    pub fn map<T, F>(self, n_chunks: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self.effective() {
            Exec::Sequential => (0..n_chunks).map(f).collect(),
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..n_chunks).into_par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            Exec::Parallel => unreachable!(),
        }
    }
}

/// Number of chunks needed to cover `n` items.
pub fn chunk_count(n: usize) -> usize {
    n.div_ceil(CHUNK)
}

/// Item range of chunk `c` out of `n` items.
pub fn chunk_range(c: usize, n: usize) -> std::ops::Range<usize> {
    c * CHUNK..((c + 1) * CHUNK).min(n)
}
