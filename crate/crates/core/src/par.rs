//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (on by default) work fans out over rayon's
//! global pool; without it, or with [`Execution::Sequential`], everything
//! runs in order on the calling thread. Results always come back in input
//! order, so both paths produce identical output.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Self::Parallel
        } else {
            Self::Sequential
        }
    }
}

impl Execution {
    /// Whether work will actually fan out. Always false without the
    /// `parallel` feature.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Self::Parallel
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(items: &[T], exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Like [`map`], on a dedicated pool of `threads` workers. Used where the
/// caller wants to bound concurrency, e.g. requests to a rate-limited judge.
pub fn map_bounded<T, R, F>(items: &[T], exec: Execution, threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && threads > 1 {
        use rayon::prelude::*;
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            return pool.install(|| items.par_iter().map(f).collect());
        }
    }
    let _ = (exec, threads);
    items.iter().map(f).collect()
}
