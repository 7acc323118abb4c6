//! Data-parallel helpers over cell arrays.
//!
//! Every reduction is computed over fixed-size chunks whose partial results
//! are combined in index order, so [`Exec::Sequential`] and
//! [`Exec::Parallel`] produce bit-identical floating point output regardless
//! of the thread count. Without the `parallel` feature both variants run on
//! the calling thread.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used for element-wise kernels and partial sums.
pub const CHUNK: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
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
    /// True when work will actually be spread over the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// `out[i] = f(i)` for every index.
    pub fn fill<F>(self, out: &mut [f64], f: F)
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
                let base = c * CHUNK;
                for (k, v) in chunk.iter_mut().enumerate() {
                    *v = f(base + k);
                }
            });
            return;
        }
        for (i, v) in out.iter_mut().enumerate() {
            *v = f(i);
        }
    }

    /// Allocate and fill a vector of length `n`.
    pub fn collect<F>(self, n: usize, f: F) -> Vec<f64>
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        let mut out = vec![0.0; n];
        self.fill(&mut out, f);
        out
    }

    /// `Σ_i f(i)` with a deterministic summation order.
    pub fn sum<F>(self, n: usize, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        let chunks = n.div_ceil(CHUNK);
        let partial = |c: usize| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut s = 0.0;
            for i in lo..hi {
                s += f(i);
            }
            s
        };
        #[cfg(feature = "parallel")]
        if self.is_parallel() && chunks > 1 {
            let parts: Vec<f64> = (0..chunks).into_par_iter().map(partial).collect();
            return parts.iter().sum();
        }
        (0..chunks).map(partial).sum()
    }

    /// `max_i f(i)`, or `fallback` when `n == 0`.
    pub fn max<F>(self, n: usize, fallback: f64, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() && n > CHUNK {
            return (0..n).into_par_iter().with_min_len(CHUNK).map(&f).reduce(|| fallback, f64::max);
        }
        (0..n).map(f).fold(fallback, f64::max)
    }

    /// Order-preserving map over independent jobs (parameter sweeps).
    pub fn map<T, R, F>(self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.into_par_iter().map(f).collect();
        }
        items.into_iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_and_parallel_sums_are_bit_identical() {
        let n = 10 * CHUNK + 17;
        let f = |i: usize| ((i as f64) * 0.37).sin() * 1e-3 + 1.0 / (1.0 + i as f64);
        let a = Exec::Sequential.sum(n, f);
        let b = Exec::Parallel.sum(n, f);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn fill_and_max_agree() {
        let n = 3 * CHUNK + 5;
        let a = Exec::Sequential.collect(n, |i| (i % 97) as f64);
        let b = Exec::Parallel.collect(n, |i| (i % 97) as f64);
        assert_eq!(a, b);
        assert_eq!(Exec::Parallel.max(n, 0.0, |i| a[i]), 96.0);
        assert_eq!(Exec::Sequential.max(0, -1.0, |_| 5.0), -1.0);
    }

    #[test]
    fn map_preserves_order() {
        let out = Exec::Parallel.map((0..100).collect(), |i: i32| i * 2);
        assert_eq!(out, (0..100).map(|i| i * 2).collect::<Vec<_>>());
    }
}
