//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature, [`Executor`] runs batches on a dedicated rayon
//! pool; without it (or with [`Parallelism::Sequential`]) everything runs on
//! the calling thread. Results are always returned in input order, so callers
//! that reduce sequentially get identical output either way.

#[cfg(feature = "parallel")]
use crate::error::Error;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    #[default]
    Sequential,
    /// Worker threads; 0 lets rayon pick.
    Threads(usize),
}

impl Parallelism {
    pub fn from_workers(workers: usize) -> Self {
        if workers == 1 {
            Parallelism::Sequential
        } else {
            Parallelism::Threads(workers)
        }
    }
}

pub struct Executor {
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl Executor {
    pub fn new(parallelism: Parallelism) -> Result<Self> {
        #[cfg(feature = "parallel")]
        {
            let pool = match parallelism {
                Parallelism::Sequential => None,
                Parallelism::Threads(n) => Some(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(n)
                        .build()
                        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?,
                ),
            };
            Ok(Self { pool })
        }
        #[cfg(not(feature = "parallel"))]
        {
            if let Parallelism::Threads(n) = parallelism {
                if n > 1 {
                    log_fallback(n);
                }
            }
            Ok(Self {})
        }
    }

    pub fn sequential() -> Self {
        Self::new(Parallelism::Sequential).expect("sequential executor")
    }

    pub fn is_parallel(&self) -> bool {
        #[cfg(feature = "parallel")]
        {
            self.pool.is_some()
        }
        #[cfg(not(feature = "parallel"))]
        {
            false
        }
    }

    /// `f` applied to each item, results in input order.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| items.par_iter().map(&f).collect());
        }
        items.iter().map(f).collect()
    }

    /// `f(0..n)` in index order.
    pub fn map_range<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| (0..n).into_par_iter().map(&f).collect());
        }
        (0..n).map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
fn log_fallback(n: usize) {
    eprintln!("pointkit built without `parallel`; ignoring request for {n} workers");
}
