//! Thread-pool executor.

use ldlab_core::Executor;
use rayon::prelude::*;

/// Runs replication blocks on a dedicated rayon pool. Blocks come back in
/// index order, so results match [`ldlab_core::Serial`] bit for bit.
pub struct Pool {
    pool: rayon::ThreadPool,
    workers: usize,
}

impl Pool {
    pub fn new(workers: usize) -> anyhow::Result<Self> {
        let workers = workers.max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("ldlab-{i}"))
            .build()?;
        Ok(Pool { pool, workers })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }
}

impl Executor for Pool {
    fn map<T, F>(&self, tasks: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..tasks).into_par_iter().map(f).collect())
    }
}
