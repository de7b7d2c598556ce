//! Rayon-backed task executor. Results come back in task order, so any
//! thread count produces output identical to the serial reference mode.

use plepi_core::train::TaskExecutor;
use rayon::prelude::*;

pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    pub fn new(threads: usize) -> RayonExecutor {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .expect("thread pool construction");
        RayonExecutor { pool }
    }

    /// Order-preserving parallel map over an index range.
    pub fn map<T: Send>(&self, n: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
        self.pool
            .install(|| (0..n).into_par_iter().map(|i| f(i)).collect())
    }
}

impl TaskExecutor for RayonExecutor {
    fn map_tasks<T: Send>(&self, n: usize, f: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
        self.map(n, f)
    }
}
