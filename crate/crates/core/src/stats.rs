//! Streaming statistics and the deterministic parallel Monte Carlo driver.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{RngPolicy, SampleRng};

/// Samples per block. Blocks are the unit of parallel work and the leaves of
/// the reduction tree, so changing this changes the last bits of results.
const BLOCK: u64 = 1024;

/// Mean and centred second moment, mergeable (Chan et al.).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&self, other: &RunningStats) -> RunningStats {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let nf = n as f64;
        RunningStats {
            n,
            mean: self.mean + d * other.n as f64 / nf,
            m2: self.m2 + other.m2 + d * d * self.n as f64 * other.n as f64 / nf,
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        (self.variance() / self.n as f64).sqrt()
    }
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorResult {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
    pub seed: u64,
}

impl EstimatorResult {
    pub fn from_stats(stats: &RunningStats, seed: u64) -> Self {
        Self {
            mean: stats.mean(),
            stderr: stats.stderr(),
            n: stats.count(),
            seed,
        }
    }

    /// Deterministic value with zero standard error.
    pub fn exact(value: f64, n: u64, seed: u64) -> Self {
        Self {
            mean: value,
            stderr: 0.0,
            n,
            seed,
        }
    }

    /// `sqrt(se_a^2 + se_b^2)`.
    pub fn combined_stderr(&self, other: &EstimatorResult) -> f64 {
        self.stderr.hypot(other.stderr)
    }

    /// `|a - b| <= k * sqrt(se_a^2 + se_b^2) + slack`.
    pub fn agrees_with(&self, other: &EstimatorResult, k: f64, slack: f64) -> bool {
        (self.mean - other.mean).abs() <= k * self.combined_stderr(other) + slack
    }

    /// `|mean - value| <= k * se`.
    pub fn consistent_with(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.stderr
    }
}

/// Runs per-sample kernels over disjoint random streams on a fixed-size pool.
///
/// Samples are grouped into fixed blocks; block statistics are merged in a
/// fixed binary tree, so a result depends on `(seed, experiment, n)` only.
#[derive(Clone)]
pub struct McRunner {
    policy: RngPolicy,
    workers: usize,
    pool: Arc<rayon::ThreadPool>,
}

impl std::fmt::Debug for McRunner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("McRunner")
            .field("seed", &self.policy.master_seed)
            .field("workers", &self.workers)
            .finish()
    }
}

impl McRunner {
    pub fn new(seed: u64, workers: usize) -> Result<Self> {
        let workers = workers.max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
        Ok(Self {
            policy: RngPolicy::new(seed),
            workers,
            pool: Arc::new(pool),
        })
    }

    pub fn seed(&self) -> u64 {
        self.policy.master_seed
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn policy(&self) -> RngPolicy {
        self.policy
    }

    /// Estimates the means of `outputs` per-sample quantities.
    ///
    /// `kernel(i, rng, out)` writes sample `i`'s values into `out`; all outputs
    /// of one sample share its random stream (common random numbers).
    pub fn estimate<F>(&self, experiment: &str, n: u64, outputs: usize, kernel: F) -> Result<Vec<EstimatorResult>>
    where
        F: Fn(u64, &mut SampleRng, &mut [f64]) -> Result<()> + Sync,
    {
        let streams = self.policy.experiment(experiment);
        let blocks = n.div_ceil(BLOCK);
        let partial: Vec<Result<Vec<RunningStats>>> = self.pool.install(|| {
            (0..blocks)
                .into_par_iter()
                .map(|b| {
                    let mut acc = vec![RunningStats::default(); outputs];
                    let mut out = vec![0.0; outputs];
                    for i in b * BLOCK..((b + 1) * BLOCK).min(n) {
                        let mut rng = streams.sample(i);
                        out.iter_mut().for_each(|o| *o = 0.0);
                        kernel(i, &mut rng, &mut out)?;
                        for (a, v) in acc.iter_mut().zip(&out) {
                            a.push(*v);
                        }
                    }
                    Ok(acc)
                })
                .collect()
        });
        let mut level = partial.into_iter().collect::<Result<Vec<_>>>()?;
        if level.is_empty() {
            level.push(vec![RunningStats::default(); outputs]);
        }
        while level.len() > 1 {
            level = level
                .chunks(2)
                .map(|pair| match pair {
                    [a, b] => a.iter().zip(b).map(|(x, y)| x.merge(y)).collect(),
                    [a] => a.clone(),
                    _ => unreachable!(),
                })
                .collect();
        }
        let seed = self.seed();
        Ok(level[0].iter().map(|s| EstimatorResult::from_stats(s, seed)).collect())
    }

    /// Collects raw per-sample outputs, row-major (`n` rows of `outputs`).
    pub fn collect<F>(&self, experiment: &str, n: u64, outputs: usize, kernel: F) -> Result<Vec<f64>>
    where
        F: Fn(u64, &mut SampleRng, &mut [f64]) -> Result<()> + Sync,
    {
        let streams = self.policy.experiment(experiment);
        let blocks = n.div_ceil(BLOCK);
        let parts: Vec<Result<Vec<f64>>> = self.pool.install(|| {
            (0..blocks)
                .into_par_iter()
                .map(|b| {
                    let lo = b * BLOCK;
                    let hi = ((b + 1) * BLOCK).min(n);
                    let mut rows = vec![0.0; (hi - lo) as usize * outputs];
                    for (row, i) in rows.chunks_mut(outputs.max(1)).zip(lo..hi) {
                        let mut rng = streams.sample(i);
                        kernel(i, &mut rng, row)?;
                    }
                    Ok(rows)
                })
                .collect()
        });
        let mut all = Vec::with_capacity(n as usize * outputs);
        for p in parts {
            all.extend(p?);
        }
        Ok(all)
    }

    /// Runs an arbitrary closure inside this runner's pool.
    pub fn install<R: Send>(&self, op: impl FnOnce() -> R + Send) -> R {
        self.pool.install(op)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    proptest! {
        #[test]
        fn merge_matches_sequential(xs in proptest::collection::vec(-1e3f64..1e3, 2..200), cut in 0usize..200) {
            let cut = cut.min(xs.len());
            let mut all = RunningStats::default();
            xs.iter().for_each(|x| all.push(*x));
            let (mut a, mut b) = (RunningStats::default(), RunningStats::default());
            xs[..cut].iter().for_each(|x| a.push(*x));
            xs[cut..].iter().for_each(|x| b.push(*x));
            let m = a.merge(&b);
            prop_assert_eq!(m.count(), all.count());
            prop_assert!((m.mean() - all.mean()).abs() <= 1e-9 * (1.0 + all.mean().abs()));
            prop_assert!((m.variance() - all.variance()).abs() <= 1e-7 * (1.0 + all.variance()));
        }
    }

    #[test]
    fn estimate_is_worker_independent() {
        let kernel = |_i: u64, rng: &mut SampleRng, out: &mut [f64]| {
            let u: f64 = rng.primary.random();
            out[0] = u;
            out[1] = u * u;
            Ok(())
        };
        let a = McRunner::new(9, 1).unwrap().estimate("t", 5000, 2, kernel).unwrap();
        let b = McRunner::new(9, 3).unwrap().estimate("t", 5000, 2, kernel).unwrap();
        assert_eq!(a, b);
        assert!(a[0].consistent_with(0.5, 4.0));
        assert!(a[1].consistent_with(1.0 / 3.0, 4.0));
        let raw1 = McRunner::new(9, 1).unwrap().collect("t", 3000, 2, kernel).unwrap();
        let raw2 = McRunner::new(9, 4).unwrap().collect("t", 3000, 2, kernel).unwrap();
        assert_eq!(raw1, raw2);
        assert_eq!(raw1.len(), 6000);
    }

    #[test]
    fn stderr_of_constant_is_zero() {
        let r = McRunner::new(1, 2)
            .unwrap()
            .estimate("c", 3000, 1, |_, _, out| {
                out[0] = 2.5;
                Ok(())
            })
            .unwrap();
        assert_eq!(r[0].mean, 2.5);
        assert_eq!(r[0].stderr, 0.0);
        assert_eq!(r[0].n, 3000);
    }
}
