//! Execution policy for the data-parallel loops.
//!
//! Every reduction is split into fixed-size chunks whose partial results are
//! combined left to right, so the sequential and parallel paths perform the
//! same floating-point operations in the same order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Number of items folded sequentially inside one chunk.
pub const CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Uses the ambient rayon pool; identical to `Sequential` without the
    /// `parallel` feature.
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

fn chunk_ranges(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(CHUNK))
        .map(|c| (c * CHUNK, ((c + 1) * CHUNK).min(n)))
        .collect()
}

/// Σ_{i<n} of vector contributions; `add(i, acc)` accumulates item `i` into `acc`.
pub fn sum_vectors<F>(exec: Exec, n: usize, dim: usize, add: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let fold = |&(lo, hi): &(usize, usize)| {
        let mut acc = vec![0.0; dim];
        for i in lo..hi {
            add(i, &mut acc);
        }
        acc
    };
    let ranges = chunk_ranges(n);
    let partials: Vec<Vec<f64>> = if exec.is_parallel() && ranges.len() > 1 {
        #[cfg(feature = "parallel")]
        {
            ranges.par_iter().map(fold).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            ranges.iter().map(fold).collect()
        }
    } else {
        ranges.iter().map(fold).collect()
    };
    let mut total = vec![0.0; dim];
    for p in &partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

/// Σ_{i<n} term(i) with the same chunking as [`sum_vectors`].
pub fn sum_scalars<F>(exec: Exec, n: usize, term: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let fold = |&(lo, hi): &(usize, usize)| (lo..hi).fold(0.0, |acc, i| acc + term(i));
    let ranges = chunk_ranges(n);
    let partials: Vec<f64> = if exec.is_parallel() && ranges.len() > 1 {
        #[cfg(feature = "parallel")]
        {
            ranges.par_iter().map(fold).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            ranges.iter().map(fold).collect()
        }
    } else {
        ranges.iter().map(fold).collect()
    };
    partials.iter().fold(0.0, |acc, p| acc + p)
}

/// Order-preserving map over `0..count`.
pub fn map_indexed<T, F>(exec: Exec, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if exec.is_parallel() {
        #[cfg(feature = "parallel")]
        {
            return (0..count).into_par_iter().map(f).collect();
        }
    }
    (0..count).map(f).collect()
}

/// Runs `job` inside a pool capped at `threads` workers (`None` = ambient pool).
pub fn with_threads<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> T {
    #[cfg(feature = "parallel")]
    {
        if let Some(k) = threads {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build() {
                return pool.install(job);
            }
        }
    }
    let _ = threads;
    job()
}

/// Thread cap from `BENCH_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var("BENCH_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&k| k > 0)
}
