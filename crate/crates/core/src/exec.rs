//! Data-parallel helpers with a sequential fallback.
//!
//! Work is split into fixed-size chunks and the per-chunk results are
//! combined in chunk order, so `Exec::Sequential` and `Exec::Parallel`
//! produce identical floating-point results.

use serde::{Deserialize, Serialize};

/// Chunk size used by every chunked kernel.
pub const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    /// Uses rayon when the `parallel` feature is compiled in; otherwise
    /// identical to `Sequential`.
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
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Maps `f` over `items` preserving order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Maps `f` over `0..count` preserving order.
    pub fn map_range<R, F>(self, count: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return (0..count).into_par_iter().map(f).collect();
        }
        (0..count).map(f).collect()
    }

    /// Applies `f` to each `CHUNK`-sized slice of `items` and returns the
    /// per-chunk results in chunk order.
    pub fn map_chunks<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&[T]) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() && items.len() > CHUNK {
            use rayon::prelude::*;
            return items.par_chunks(CHUNK).map(f).collect();
        }
        items.chunks(CHUNK).map(f).collect()
    }

    /// Sum of `f` over `items`, accumulated per chunk and then across chunks
    /// in order.
    pub fn sum<T, F>(self, items: &[T], f: F) -> f64
    where
        T: Sync,
        F: Fn(&T) -> f64 + Sync + Send,
    {
        self.map_chunks(items, |chunk| chunk.iter().map(&f).sum::<f64>())
            .into_iter()
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_and_parallel_sums_are_bit_identical() {
        let xs: Vec<f64> = (0..10_000).map(|i| ((i as f64) * 0.37).sin() * 1e3).collect();
        let a = Exec::Sequential.sum(&xs, |x| x * 1.000_001);
        let b = Exec::Parallel.sum(&xs, |x| x * 1.000_001);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn map_preserves_order() {
        let xs: Vec<usize> = (0..1000).collect();
        assert_eq!(Exec::Parallel.map(&xs, |x| x * 2), Exec::Sequential.map(&xs, |x| x * 2));
        assert_eq!(Exec::Parallel.map_range(5, |i| i), vec![0, 1, 2, 3, 4]);
    }
}
