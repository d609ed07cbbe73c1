//! A thread-pool `ClientRunner`.
//!
//! Client jobs are self-contained (each carries its own seed and borrows
//! only shared immutable state), so the schedule cannot affect results:
//! updates are collected in job order, making the threaded runner
//! bit-identical to the serial one.

use fedsim_core::attacks::Update;
use fedsim_core::orchestrator::{ClientJob, ClientRunner, SerialRunner};
use fedsim_core::Result;

/// Runs each round's jobs on up to `threads` OS threads.
#[derive(Debug, Clone, Copy)]
pub struct ThreadedRunner {
    threads: usize,
}

impl ThreadedRunner {
    /// `threads == 0` or `1` degenerates to serial execution.
    pub fn new(threads: usize) -> Self {
        ThreadedRunner { threads }
    }

    /// Reads `FEDSIM_THREADS`: `0` means serial, unset means one thread per
    /// available core (capped at 8), anything else is the thread count.
    pub fn from_env() -> Self {
        let threads = match std::env::var("FEDSIM_THREADS") {
            Ok(v) => v.trim().parse::<usize>().unwrap_or(1),
            Err(_) => std::thread::available_parallelism()
                .map(|n| n.get().min(8))
                .unwrap_or(1),
        };
        ThreadedRunner { threads }
    }
}

impl ClientRunner for ThreadedRunner {
    fn run_round(&self, jobs: &[ClientJob<'_>]) -> Result<Vec<Update>> {
        if self.threads <= 1 || jobs.len() <= 1 {
            return SerialRunner.run_round(jobs);
        }
        let workers = self.threads.min(jobs.len());
        // Contiguous chunks, joined in spawn order, keep job order.
        let chunk = jobs.len().div_ceil(workers);
        let chunk_results: Vec<Vec<Result<Update>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .chunks(chunk)
                .map(|c| scope.spawn(move || c.iter().map(ClientJob::execute).collect()))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("client job panicked"))
                .collect()
        });
        let mut out = Vec::with_capacity(jobs.len());
        for r in chunk_results.into_iter().flatten() {
            out.push(r?);
        }
        Ok(out)
    }
}
