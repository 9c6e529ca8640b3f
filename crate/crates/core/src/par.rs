//! Ensemble execution.
//!
//! Every ensemble in the crate (Monte Carlo trials, experiment suites, bound
//! curves) goes through [`map_indexed`]. Work item `i` receives only its index,
//! derives its own RNG stream from it, and results come back in index order, so
//! the output is bitwise identical for any worker count and for the sequential
//! fallback.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// How an ensemble is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Rayon's current pool. Falls back to sequential without the `parallel` feature.
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Evaluates `f(0), ..., f(n - 1)` and returns the results in index order.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Runs `op` with at most `jobs` worker threads. `None` uses every available core.
pub fn with_jobs<R, F>(jobs: Option<usize>, op: F) -> crate::Result<R>
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = jobs {
            if n == 0 {
                return Err(crate::Error::invalid("--jobs must be at least 1"));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| crate::Error::invalid(format!("cannot build worker pool: {e}")))?;
            return Ok(pool.install(op));
        }
        Ok(op())
    }
    #[cfg(not(feature = "parallel"))]
    {
        if jobs == Some(0) {
            return Err(crate::Error::invalid("--jobs must be at least 1"));
        }
        Ok(op())
    }
}

/// Independent RNG stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed for an independent family of streams tagged `tag` under `seed`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    seed ^ tag.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}
