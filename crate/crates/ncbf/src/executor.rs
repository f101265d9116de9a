use ncbf_core::Executor;
use rayon::prelude::*;
use std::ops::Range;

/// Runs chunks on a private rayon pool. Results still come back in chunk
/// order, so reductions match [`ncbf_core::Sequential`] bit for bit.
pub struct Rayon {
    pool: rayon::ThreadPool,
}

impl Rayon {
    /// `threads = None` uses one worker per available core.
    pub fn new(threads: Option<usize>) -> anyhow::Result<Self> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(t) = threads {
            anyhow::ensure!(t > 0, "--threads must be at least 1");
            builder = builder.num_threads(t);
        }
        Ok(Self { pool: builder.build()? })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Rayon {
    fn map_chunks<T, F>(&self, len: usize, chunk: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Range<usize>) -> T + Sync,
    {
        let ranges: Vec<Range<usize>> = ncbf_core::exec::chunk_ranges(len, chunk).collect();
        if self.pool.current_num_threads() == 1 {
            return ranges.into_iter().map(f).collect();
        }
        self.pool.install(|| ranges.into_par_iter().map(|r| f(r)).collect())
    }
}
