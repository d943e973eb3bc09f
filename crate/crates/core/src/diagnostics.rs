//! Gaussianity diagnostics for mixed coordinates: Cramér–Wold projections,
//! Kolmogorov–Smirnov distance to the normal, and Lindeberg sums.

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::mixing::{dot, MixingMatrix};
use crate::montecarlo::{run_trials, Estimate, CHUNK_TRIALS};
use crate::sources::{CovarianceMatrix, SourceBlock, SourceSpec};

/// Fewest values accepted by [`ks_distance_to_normal`].
pub const MIN_KS_SAMPLES: usize = 1000;

/// Scalar projections `t^T x` of a block of k-vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSample {
    pub t: Vec<f64>,
    pub values: Vec<f64>,
    /// `t^T K t`, from the covariance rather than the data.
    pub sigma2: f64,
}

impl ProjectionSample {
    /// Sample second moment of the values with its standard error.
    pub fn second_moment(&self) -> Estimate {
        let mut acc = crate::montecarlo::Moments::default();
        self.values.iter().for_each(|v| acc.push(v * v));
        acc.into()
    }
}

pub fn cramer_wold_projection(
    block: &SourceBlock,
    t: &[f64],
    cov: &CovarianceMatrix,
) -> Result<ProjectionSample> {
    if t.len() != block.k() || t.len() != cov.k() {
        return Err(Error::LengthMismatch {
            expected: block.k(),
            actual: t.len(),
        });
    }
    if t.iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("projection direction must be nonzero"));
    }
    let mut values = vec![0.0; block.len()];
    for (m, &tm) in t.iter().enumerate() {
        if tm != 0.0 {
            for (v, &x) in values.iter_mut().zip(block.row(m)) {
                *v += tm * x;
            }
        }
    }
    Ok(ProjectionSample {
        t: t.to_vec(),
        values,
        sigma2: cov.quadratic_form(t),
    })
}

/// `sup_x |F_N(x) - Phi(x / sigma)|` over the sample.
pub fn ks_distance_to_normal(sample: &ProjectionSample) -> Result<f64> {
    let n = sample.values.len();
    if n < MIN_KS_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_KS_SAMPLES,
            got: n,
        });
    }
    if !(sample.sigma2 > 0.0) {
        return Err(Error::invalid(
            "sigma2 must be positive for a normality test",
        ));
    }
    let normal =
        Normal::new(0.0, sample.sigma2.sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
    let mut sorted = sample.values.clone();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = normal.cdf(x);
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    Ok(d)
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_value(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// Which row of `Q` produces a sample's mixed coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSelection {
    Fixed(usize),
    /// Sample `s` uses row `s mod b`.
    Cycle,
}

/// Rows of `Q` for `b >= 2`, or the 1x1 identity when `b == 1` (no mixing).
fn mixing_rows(b: usize) -> Result<Vec<Vec<f64>>> {
    if b == 1 {
        return Ok(vec![vec![1.0]]);
    }
    let q = MixingMatrix::new(b)?;
    Ok((0..b).map(|i| q.row(i).to_vec()).collect())
}

/// `samples` mixed k-vectors: each is `sum_j Q(row, j) x[j]` over a fresh
/// i.i.d. block `x[0..b]`. `b = 1` returns raw source samples.
pub fn mixed_coordinates(
    spec: &SourceSpec,
    b: usize,
    rows: RowSelection,
    samples: usize,
) -> Result<SourceBlock> {
    if samples == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let q = mixing_rows(b)?;
    if let RowSelection::Fixed(r) = rows {
        if r >= b {
            return Err(Error::invalid(format!("row {r} out of range for b = {b}")));
        }
    }
    let k = spec.k();
    let chunks = samples.div_ceil(CHUNK_TRIALS);
    let parts: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = CHUNK_TRIALS.min(samples - c * CHUNK_TRIALS);
            let block = spec.sample_group(count * b, c as u64);
            let mut out = vec![0.0; k * count];
            for s in 0..count {
                let row = match rows {
                    RowSelection::Fixed(r) => r,
                    RowSelection::Cycle => (c * CHUNK_TRIALS + s) % b,
                };
                for m in 0..k {
                    out[m * count + s] = dot(&q[row], &block.row(m)[s * b..(s + 1) * b]);
                }
            }
            out
        })
        .collect();
    let mut data = vec![0.0; k * samples];
    let mut offset = 0;
    for part in parts {
        let count = part.len() / k;
        for m in 0..k {
            data[m * samples + offset..m * samples + offset + count]
                .copy_from_slice(&part[m * count..(m + 1) * count]);
        }
        offset += count;
    }
    Ok(SourceBlock::from_raw(k, samples, data))
}

/// Lindeberg sum for one row of `Q` with the exact normalizer `s_b^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LindebergValue {
    pub value: f64,
    pub s_b2: f64,
    pub row: usize,
}

/// Monte Carlo estimate of
/// `(1/s_b^2) sum_j E[Y_j^2 1{|Y_j| >= eps s_b}]`, `Y_j = sqrt(b) (t^T x[j]) Q(row, j)`,
/// with `s_b^2 = b t^T K t`. Every `j` reuses the same draw of `t^T x`, so
/// the estimate is exactly zero when no `|Y_j|` can reach the threshold.
pub fn lindeberg_sum(
    spec: &SourceSpec,
    t: &[f64],
    b: usize,
    row: usize,
    epsilon: f64,
    trials: usize,
) -> Result<LindebergValue> {
    Ok(lindeberg_rows(spec, t, b, &[row], epsilon, trials)?[0])
}

/// [`lindeberg_sum`] for every row, returning the largest.
pub fn lindeberg_max_over_rows(
    spec: &SourceSpec,
    t: &[f64],
    b: usize,
    epsilon: f64,
    trials: usize,
) -> Result<LindebergValue> {
    let rows: Vec<usize> = (0..b).collect();
    let all = lindeberg_rows(spec, t, b, &rows, epsilon, trials)?;
    Ok(all
        .into_iter()
        .fold(None::<LindebergValue>, |best, v| match best {
            Some(bv) if bv.value >= v.value => Some(bv),
            _ => Some(v),
        })
        .expect("b >= 1"))
}

fn lindeberg_rows(
    spec: &SourceSpec,
    t: &[f64],
    b: usize,
    rows: &[usize],
    epsilon: f64,
    trials: usize,
) -> Result<Vec<LindebergValue>> {
    if t.len() != spec.k() {
        return Err(Error::LengthMismatch {
            expected: spec.k(),
            actual: t.len(),
        });
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let q = mixing_rows(b)?;
    if let Some(&r) = rows.iter().find(|&&r| r >= b) {
        return Err(Error::invalid(format!("row {r} out of range for b = {b}")));
    }
    let sigma2 = spec.covariance().quadratic_form(t);
    if !(sigma2 > 0.0) {
        return Err(Error::invalid("t^T K t must be positive"));
    }
    let s_b2 = b as f64 * sigma2;
    let threshold = epsilon * s_b2.sqrt();
    let scale = (b as f64).sqrt();
    // |Y_j| >= threshold  <=>  |z| |Q_j| sqrt(b) >= threshold
    let weights: Vec<Vec<(f64, f64)>> = rows
        .iter()
        .map(|&r| {
            q[r].iter()
                .filter(|v| **v != 0.0)
                .map(|&v| ((scale * v).powi(2), threshold / (scale * v.abs())))
                .collect()
        })
        .collect();
    let moments = run_trials(spec, trials, 1, rows.len(), |x, out| {
        let z: f64 = t.iter().zip(x).map(|(tm, xm)| tm * xm[0]).sum();
        let (az, z2) = (z.abs(), z * z);
        for (o, w) in out.iter_mut().zip(&weights) {
            *o = w
                .iter()
                .filter(|(_, cut)| az >= *cut)
                .map(|(w2, _)| w2 * z2)
                .sum::<f64>()
                / s_b2;
        }
    });
    Ok(rows
        .iter()
        .zip(moments)
        .map(|(&row, m)| LindebergValue {
            value: m.mean(),
            s_b2,
            row,
        })
        .collect())
}

/// A named Cramér–Wold direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub id: String,
    pub t: Vec<f64>,
}

/// The `k` axis directions `e1..ek`, then all-ones and alternating-sign
/// vectors; duplicates are dropped.
pub fn default_directions(k: usize) -> Vec<Direction> {
    let mut out: Vec<Direction> = (0..k)
        .map(|m| {
            let mut t = vec![0.0; k];
            t[m] = 1.0;
            Direction {
                id: format!("e{}", m + 1),
                t,
            }
        })
        .collect();
    let extra = [
        ("ones", vec![1.0; k]),
        (
            "alt",
            (0..k)
                .map(|m| if m % 2 == 0 { 1.0 } else { -1.0 })
                .collect(),
        ),
    ];
    for (id, t) in extra {
        if !out.iter().any(|d| d.t == t) {
            out.push(Direction { id: id.into(), t });
        }
    }
    out
}

/// One line of a gaussianity table.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianityRow {
    pub b: usize,
    pub direction_id: String,
    pub ks_stat: f64,
    pub n_samples: usize,
    pub seed: u64,
}

pub const GAUSSIANITY_HEADER: &str = "b,direction_id,ks_stat,n_samples,seed";

pub fn gaussianity_csv(rows: &[GaussianityRow]) -> String {
    let mut out = format!("{GAUSSIANITY_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.b, r.direction_id, r.ks_stat, r.n_samples, r.seed
        ));
    }
    out
}

/// KS distance of cycled-row mixed coordinates, for every `(seed, b, direction)`.
pub fn gaussianity_sweep(
    spec: &SourceSpec,
    b_list: &[usize],
    directions: &[Direction],
    samples: usize,
    seeds: &[u64],
) -> Result<Vec<GaussianityRow>> {
    crate::gaussianizer::validate_b_list(b_list)?;
    let mut rows = Vec::new();
    for &seed in seeds {
        let spec = spec.with_seed(seed);
        for &b in b_list {
            let block = mixed_coordinates(&spec, b, RowSelection::Cycle, samples)?;
            for d in directions {
                let proj = cramer_wold_projection(&block, &d.t, spec.covariance())?;
                rows.push(GaussianityRow {
                    b,
                    direction_id: d.id.clone(),
                    ks_stat: ks_distance_to_normal(&proj)?,
                    n_samples: samples,
                    seed,
                });
            }
        }
    }
    Ok(rows)
}

/// Median KS statistic over seeds for one `(b, direction)`.
pub fn median_ks(rows: &[GaussianityRow], b: usize, direction_id: &str) -> Option<f64> {
    let mut v: Vec<f64> = rows
        .iter()
        .filter(|r| r.b == b && r.direction_id == direction_id)
        .map(|r| r.ks_stat)
        .collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}
