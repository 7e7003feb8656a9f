//! Deterministic parallel fan-out over ensemble members.
//!
//! Paths are processed in fixed-size batches; each batch is mapped in parallel
//! and the results are handed to the sink in path-index order. The batch size
//! does not depend on the worker count, so every reduction sees the same values
//! in the same order whatever the parallelism.

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{Error, Result};
use crate::report::DEFAULT_MARGIN;

pub const BATCH_SIZE: usize = 64;

/// Execution knobs that do not change results.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Execution {
    pub workers: usize,
    /// Standard-error multiple for one-sided checks. This one does change verdicts.
    pub margin: f64,
}

impl Default for Execution {
    fn default() -> Self {
        let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        Self { workers, margin: DEFAULT_MARGIN }
    }
}

impl Execution {
    pub fn with_workers(workers: usize) -> Self {
        Self { workers, ..Self::default() }
    }

    fn pool(&self) -> Result<ThreadPool> {
        if self.workers == 0 {
            return Err(Error::InvalidArgument("worker count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))
    }
}

/// Runs `map` for paths `0..n_paths` and feeds `sink` in index order.
pub fn for_each_path<T, M, S>(n_paths: usize, exec: &Execution, map: M, mut sink: S) -> Result<()>
where
    T: Send,
    M: Fn(u64) -> Result<T> + Sync,
    S: FnMut(u64, T) -> Result<()>,
{
    let pool = exec.pool()?;
    let mut start = 0;
    while start < n_paths {
        let end = (start + BATCH_SIZE).min(n_paths);
        let batch: Vec<Result<T>> = pool.install(|| (start..end).into_par_iter().map(|k| map(k as u64)).collect());
        for (offset, item) in batch.into_iter().enumerate() {
            sink((start + offset) as u64, item?)?;
        }
        start = end;
    }
    Ok(())
}

/// Collects one value per path, in path order.
pub fn map_paths<T, M>(n_paths: usize, exec: &Execution, map: M) -> Result<Vec<T>>
where
    T: Send,
    M: Fn(u64) -> Result<T> + Sync,
{
    let mut out = Vec::with_capacity(n_paths);
    for_each_path(n_paths, exec, map, |_, v| {
        out.push(v);
        Ok(())
    })?;
    Ok(out)
}

/// Sample mean and its standard error (`s/√n`).
pub fn mean_and_se(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("no samples".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}
