//! Worker-pool configuration shared by the data-parallel stages.
//!
//! Every parallel stage writes disjoint output regions and keeps a fixed
//! per-element summation order, so results never depend on `workers` or
//! `chunk`.

use std::sync::Arc;

use rayon::{ThreadPool, ThreadPoolBuilder};

use crate::error::{Error, Result};

pub const DEFAULT_CHUNK: usize = 10;

/// Available hardware parallelism, at least 1.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Worker count plus the granularity of the parallel partition.
///
/// `chunk` is the edge length `k` of a work item: each task covers `k³`
/// consecutive output voxels.
#[derive(Clone)]
pub struct Exec {
    workers: usize,
    chunk: usize,
    pool: Arc<ThreadPool>,
}

impl Exec {
    pub fn new(workers: usize, chunk: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::param("workers must be >= 1"));
        }
        if chunk == 0 {
            return Err(Error::param("chunk must be >= 1"));
        }
        let pool = ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("volkey-worker-{i}"))
            .build()
            .map_err(|e| Error::param(format!("cannot build worker pool: {e}")))?;
        Ok(Exec {
            workers,
            chunk,
            pool: Arc::new(pool),
        })
    }

    pub fn single() -> Self {
        Self::new(1, DEFAULT_CHUNK).expect("single worker pool")
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn chunk(&self) -> usize {
        self.chunk
    }

    /// Voxels per task.
    pub fn chunk_voxels(&self) -> usize {
        self.chunk.saturating_pow(3).max(1)
    }

    /// Same pool, different partition granularity.
    pub fn with_chunk(&self, chunk: usize) -> Result<Self> {
        if chunk == 0 {
            return Err(Error::param("chunk must be >= 1"));
        }
        Ok(Exec {
            workers: self.workers,
            chunk,
            pool: Arc::clone(&self.pool),
        })
    }

    pub fn install<R: Send>(&self, op: impl FnOnce() -> R + Send) -> R {
        self.pool.install(op)
    }
}

impl Default for Exec {
    fn default() -> Self {
        Self::new(default_workers(), DEFAULT_CHUNK).expect("default worker pool")
    }
}

impl std::fmt::Debug for Exec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Exec")
            .field("workers", &self.workers)
            .field("chunk", &self.chunk)
            .finish()
    }
}
