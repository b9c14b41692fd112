//! Execution policy for data-parallel loops.
//!
//! With the `parallel` feature (default) loops run on a rayon pool sized by
//! the caller; without it, or with [`Exec::serial`], they run in index order
//! on the calling thread. Every loop body here writes only to its own element,
//! so results do not depend on the policy.

#[cfg(feature = "parallel")]
use std::sync::Arc;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Minimum items handed to one rayon task.
#[cfg(feature = "parallel")]
const MIN_CHUNK: usize = 64;

#[derive(Clone, Default)]
pub struct Exec {
    #[cfg(feature = "parallel")]
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl std::fmt::Debug for Exec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Exec({} workers)", self.workers())
    }
}

impl Exec {
    pub fn serial() -> Self {
        Self::default()
    }

    /// A policy with `workers` threads. `workers <= 1` (or a build without the
    /// `parallel` feature) gives serial execution.
    pub fn with_workers(workers: usize) -> Self {
        #[cfg(feature = "parallel")]
        {
            if workers > 1 {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .expect("failed to build thread pool");
                return Self { pool: Some(Arc::new(pool)) };
            }
        }
        let _ = workers;
        Self::serial()
    }

    pub fn workers(&self) -> usize {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.current_num_threads();
        }
        1
    }

    pub fn is_parallel(&self) -> bool {
        self.workers() > 1
    }

    /// Apply `f(index, item)` to every element.
    pub fn for_each_mut<T, F>(&self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Send + Sync,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            pool.install(|| {
                items
                    .par_iter_mut()
                    .with_min_len(MIN_CHUNK)
                    .enumerate()
                    .for_each(|(i, x)| f(i, x))
            });
            return;
        }
        items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
    }

    /// Map every element to a result, preserving order.
    pub fn map_mut<T, R, F>(&self, items: &mut [T], f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(usize, &mut T) -> R + Send + Sync,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(|| {
                items
                    .par_iter_mut()
                    .with_min_len(MIN_CHUNK)
                    .enumerate()
                    .map(|(i, x)| f(i, x))
                    .collect()
            });
        }
        items.iter_mut().enumerate().map(|(i, x)| f(i, x)).collect()
    }

    /// Map `0..n` to results, preserving order.
    pub fn map_range<R, F>(&self, n: usize, min_len: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Send + Sync,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(|| {
                (0..n)
                    .into_par_iter()
                    .with_min_len(min_len.max(1))
                    .map(&f)
                    .collect()
            });
        }
        let _ = min_len;
        (0..n).map(f).collect()
    }
}
