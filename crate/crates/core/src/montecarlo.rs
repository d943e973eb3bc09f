//! Chunked, seed-deterministic Monte Carlo driver.
//!
//! Trials are cut into fixed-size chunks; chunk `c` draws its source samples
//! from stream group `c`. Chunks run in parallel and their moments are merged
//! in chunk order, so estimates do not depend on the number of worker threads.

use rayon::prelude::*;

use crate::sources::SourceSpec;

/// Trials per chunk.
pub const CHUNK_TRIALS: usize = 256;

/// Running mean and sum of squared deviations (Welford / Chan).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = self.count + other.count;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.count as f64 * other.count as f64) / n as f64;
        self.count = n;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

/// A mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    /// `|self - other|` measured in combined standard errors.
    pub fn z_distance(&self, other: &Estimate) -> f64 {
        let se = self.stderr.hypot(other.stderr);
        let d = (self.mean - other.mean).abs();
        if se == 0.0 {
            if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            d / se
        }
    }
}

impl From<Moments> for Estimate {
    fn from(m: Moments) -> Self {
        Estimate {
            mean: m.mean(),
            stderr: m.stderr(),
        }
    }
}

/// Runs `trials` independent trials of `samples_per_trial` source vectors each.
///
/// `trial` receives one slice per source component (each of length
/// `samples_per_trial`) and writes `outputs` scalars; the returned moments
/// summarize each output over all trials.
pub fn run_trials<F>(
    spec: &SourceSpec,
    trials: usize,
    samples_per_trial: usize,
    outputs: usize,
    trial: F,
) -> Vec<Moments>
where
    F: Fn(&[&[f64]], &mut [f64]) + Sync,
{
    let chunks = trials.div_ceil(CHUNK_TRIALS);
    let per_chunk: Vec<Vec<Moments>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = CHUNK_TRIALS.min(trials - c * CHUNK_TRIALS);
            let block = spec.sample_group(count * samples_per_trial, c as u64);
            let mut moments = vec![Moments::default(); outputs];
            let mut out = vec![0.0; outputs];
            let mut rows: Vec<&[f64]> = Vec::with_capacity(spec.k());
            for t in 0..count {
                rows.clear();
                let span = t * samples_per_trial..(t + 1) * samples_per_trial;
                rows.extend((0..spec.k()).map(|m| &block.row(m)[span.clone()]));
                trial(&rows, &mut out);
                for (acc, &v) in moments.iter_mut().zip(&out) {
                    acc.push(v);
                }
            }
            moments
        })
        .collect();
    let mut total = vec![Moments::default(); outputs];
    for chunk in &per_chunk {
        for (acc, m) in total.iter_mut().zip(chunk) {
            acc.merge(m);
        }
    }
    total
}
