//! Scoped-thread sample runner. Outcome `i` is always sample `i`: workers
//! fill disjoint contiguous chunks of the output by global index, so the
//! result is identical to a serial run for any thread count.

use anyhow::{bail, Result};

use mldp_core::rare_event::{SampleFactory, SampleOutcome, SampleRunner};

pub struct ThreadRunner {
    threads: usize,
}

impl ThreadRunner {
    pub fn new(threads: usize) -> Self {
        Self {
            threads: threads.max(1),
        }
    }

    /// Resolves the worker count: explicit flag, then `MLDP_THREADS`, then
    /// the machine's available parallelism.
    pub fn from_env(flag: Option<usize>) -> Result<Self> {
        if let Some(n) = flag {
            if n == 0 {
                bail!("--threads must be at least 1");
            }
            return Ok(Self::new(n));
        }
        if let Ok(raw) = std::env::var("MLDP_THREADS") {
            let n: usize = raw
                .parse()
                .ok()
                .filter(|n| *n > 0)
                .ok_or_else(|| anyhow::anyhow!("MLDP_THREADS must be a positive integer, got '{raw}'"))?;
            return Ok(Self::new(n));
        }
        let n = std::thread::available_parallelism().map_or(1, |n| n.get());
        Ok(Self::new(n))
    }

    pub fn threads(&self) -> usize {
        self.threads
    }
}

impl SampleRunner for ThreadRunner {
    fn run<'a>(&self, n_samples: usize, factory: &SampleFactory<'a>) -> Vec<SampleOutcome> {
        let mut out = vec![SampleOutcome::default(); n_samples];
        if n_samples == 0 {
            return out;
        }
        let chunk = n_samples.div_ceil(self.threads);
        std::thread::scope(|scope| {
            for (c, slice) in out.chunks_mut(chunk).enumerate() {
                scope.spawn(move || {
                    let mut worker = factory();
                    let base = c * chunk;
                    for (j, outcome) in slice.iter_mut().enumerate() {
                        *outcome = worker(base + j);
                    }
                });
            }
        });
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mldp_core::rare_event::SerialRunner;

    fn index_factory<'a>() -> Box<dyn FnMut(usize) -> SampleOutcome + Send + 'a> {
        Box::new(|i| SampleOutcome {
            hit: i % 3 == 0,
            log_weight: -(i as f64) * 0.25,
            failed: i == 41,
        })
    }

    #[test]
    fn threaded_outcomes_equal_serial_for_any_thread_count() {
        let serial = SerialRunner.run(101, &index_factory);
        for threads in [1, 2, 3, 8, 64, 200] {
            let threaded = ThreadRunner::new(threads).run(101, &index_factory);
            assert_eq!(threaded, serial, "threads = {threads}");
        }
    }

    #[test]
    fn empty_and_single_sample_runs_work() {
        assert!(ThreadRunner::new(4).run(0, &index_factory).is_empty());
        let one = ThreadRunner::new(4).run(1, &index_factory);
        assert_eq!(one, SerialRunner.run(1, &index_factory));
    }
}
