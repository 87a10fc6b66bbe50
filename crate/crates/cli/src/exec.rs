//! Rayon-backed executor.

use homog_core::Executor;
use rayon::prelude::*;

/// Runs path work on a dedicated rayon pool. Results come back in index
/// order, so every reduction in the core sees the same sequence whatever the
/// worker count.
pub struct Rayon {
    pool: rayon::ThreadPool,
}

impl Rayon {
    /// `threads = None` uses rayon's default (one worker per CPU).
    pub fn new(threads: Option<usize>) -> Result<Self, rayon::ThreadPoolBuildError> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            builder = builder.num_threads(n.max(1));
        }
        Ok(Self { pool: builder.build()? })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Rayon {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}
