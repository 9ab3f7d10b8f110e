//! Replication executor abstraction.
//!
//! Estimators split their replications into fixed-size blocks and ask an
//! [`Executor`] to evaluate a block function for every block index. Results
//! come back in index order and are reduced sequentially, so the outcome is
//! the same whether blocks ran on one thread or many.

use alloc::vec::Vec;
use core::ops::Range;

/// Replications per block. Part of the reproducibility contract.
pub const BLOCK: usize = 1024;

pub trait Executor: Sync {
    /// Evaluate `f(i)` for `i in 0..tasks`, returning results in index order.
    fn map<T, F>(&self, tasks: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs every block on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Serial;

impl Executor for Serial {
    fn map<T, F>(&self, tasks: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..tasks).map(f).collect()
    }
}

pub fn block_count(reps: usize) -> usize {
    reps.div_ceil(BLOCK)
}

pub fn block_range(block: usize, reps: usize) -> Range<usize> {
    let lo = block * BLOCK;
    lo..(lo + BLOCK).min(reps)
}

/// Per-replication values `f(rep)` in replication order.
pub fn collect_reps<E, F>(exec: &E, reps: usize, f: F) -> Vec<f64>
where
    E: Executor + ?Sized,
    F: Fn(usize) -> f64 + Sync + Send,
{
    let parts = exec.map(block_count(reps), |b| {
        block_range(b, reps).map(&f).collect::<Vec<f64>>()
    });
    parts.into_iter().flatten().collect()
}
