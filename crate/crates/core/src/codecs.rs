//! Multiterminal codes, Gaussian-designed baselines and distortion measurement.
//!
//! A [`MultiterminalCode`] has `k` encoders, each mapping a length-`n` block of
//! its own source component to an index, and `k` decoders that each see all
//! `k` indices. The shipped baselines are Lloyd-Max scalar quantizers applied
//! symbol by symbol ([`ScalarProductCode`]), optionally with a joint LMMSE
//! decoder that exploits the covariance between components.

use std::fmt;

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::montecarlo::run_trials;
use crate::sources::{CovarianceMatrix, SourceSpec};

/// Minimum trial count accepted by the distortion estimators.
pub const MIN_TRIALS: usize = 100;

/// `k` encoders and `k` decoders operating on blocks of `n` symbols.
pub trait MultiterminalCode: Send + Sync {
    type Index: Clone + Send;

    fn num_encoders(&self) -> usize;

    fn blocklength(&self) -> usize;

    /// Bits per source symbol spent by encoder `m`.
    fn rate(&self, m: usize) -> f64;

    /// Encoder `m`. Panics if `x.len() != blocklength()`.
    fn encode(&self, m: usize, x: &[f64]) -> Self::Index;

    /// Decoder `m`, given one index per encoder.
    fn decode(&self, m: usize, indices: &[Self::Index]) -> Vec<f64>;

    fn decode_all(&self, indices: &[Self::Index]) -> Vec<Vec<f64>> {
        (0..self.num_encoders())
            .map(|m| self.decode(m, indices))
            .collect()
    }

    /// `max ||g_m(c_1, ..., c_k)||^2` over all index tuples.
    fn max_decoder_energy(&self, m: usize) -> f64;
}

/// A code whose index sets fit in a `u64`.
pub trait FiniteCode: MultiterminalCode<Index = u64> {
    fn index_set_size(&self, m: usize) -> u64;
}

impl<C: MultiterminalCode + ?Sized> MultiterminalCode for &C {
    type Index = C::Index;

    fn num_encoders(&self) -> usize {
        (**self).num_encoders()
    }
    fn blocklength(&self) -> usize {
        (**self).blocklength()
    }
    fn rate(&self, m: usize) -> f64 {
        (**self).rate(m)
    }
    fn encode(&self, m: usize, x: &[f64]) -> Self::Index {
        (**self).encode(m, x)
    }
    fn decode(&self, m: usize, indices: &[Self::Index]) -> Vec<f64> {
        (**self).decode(m, indices)
    }
    fn decode_all(&self, indices: &[Self::Index]) -> Vec<Vec<f64>> {
        (**self).decode_all(indices)
    }
    fn max_decoder_energy(&self, m: usize) -> f64 {
        (**self).max_decoder_energy(m)
    }
}

impl<C: FiniteCode + ?Sized> FiniteCode for &C {
    fn index_set_size(&self, m: usize) -> u64 {
        (**self).index_set_size(m)
    }
}

/// Per-encoder rates and distortions.
#[derive(Debug, Clone, PartialEq)]
pub struct RateDistortionVector {
    pub rates: Vec<f64>,
    pub distortions: Vec<f64>,
}

/// Monte Carlo distortion estimate with per-encoder standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionEstimate {
    pub rd: RateDistortionVector,
    pub stderrs: Vec<f64>,
    pub trials: usize,
}

impl DistortionEstimate {
    pub fn distortion(&self, m: usize) -> f64 {
        self.rd.distortions[m]
    }

    pub fn stderr(&self, m: usize) -> f64 {
        self.stderrs[m]
    }
}

/// Estimates `(1/n) E||x_m - g_m(f_1(x_1), ..., f_k(x_k))||^2` for every `m`.
pub fn evaluate_distortion<C: MultiterminalCode + ?Sized>(
    code: &C,
    spec: &SourceSpec,
    trials: usize,
) -> Result<DistortionEstimate> {
    check_trials(trials)?;
    check_dims(code.num_encoders(), spec.k())?;
    let k = code.num_encoders();
    let n = code.blocklength();
    let moments = run_trials(spec, trials, n, k, |rows, out| {
        let indices: Vec<C::Index> = rows
            .iter()
            .enumerate()
            .map(|(m, x)| code.encode(m, x))
            .collect();
        let recon = code.decode_all(&indices);
        for m in 0..k {
            out[m] = squared_error(rows[m], &recon[m]) / n as f64;
        }
    });
    Ok(DistortionEstimate {
        rd: RateDistortionVector {
            rates: (0..k).map(|m| code.rate(m)).collect(),
            distortions: moments.iter().map(|m| m.mean()).collect(),
        },
        stderrs: moments.iter().map(|m| m.stderr()).collect(),
        trials,
    })
}

pub(crate) fn check_trials(trials: usize) -> Result<()> {
    if trials < MIN_TRIALS {
        return Err(Error::TooFewSamples {
            needed: MIN_TRIALS,
            got: trials,
        });
    }
    Ok(())
}

pub(crate) fn check_dims(code_k: usize, spec_k: usize) -> Result<()> {
    if code_k != spec_k {
        return Err(Error::invalid(format!(
            "code has {code_k} encoders but the source has {spec_k} components"
        )));
    }
    Ok(())
}

pub(crate) fn squared_error(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Sorted reconstruction levels with the cell boundaries between them.
///
/// `thresholds[i]` separates cell `i` from cell `i + 1`; a value exactly on a
/// threshold belongs to the upper cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarCodebook {
    levels: Vec<f64>,
    thresholds: Vec<f64>,
}

impl ScalarCodebook {
    /// Nearest-level codebook: thresholds are midpoints between levels.
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        let thresholds = levels.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        Self::with_thresholds(levels, thresholds)
    }

    pub fn with_thresholds(levels: Vec<f64>, thresholds: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::invalid("codebook needs at least one level"));
        }
        if thresholds.len() + 1 != levels.len() {
            return Err(Error::LengthMismatch {
                expected: levels.len() - 1,
                actual: thresholds.len(),
            });
        }
        if levels.iter().chain(&thresholds).any(|v| !v.is_finite()) {
            return Err(Error::invalid("codebook values must be finite"));
        }
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("thresholds must be strictly increasing"));
        }
        for (i, &level) in levels.iter().enumerate() {
            let lo_ok = i == 0 || level >= thresholds[i - 1];
            let hi_ok = i == thresholds.len() || level < thresholds[i];
            if !(lo_ok && hi_ok) {
                return Err(Error::invalid(format!(
                    "level {i} = {level} lies outside its cell"
                )));
            }
        }
        Ok(Self { levels, thresholds })
    }

    /// The rate-0 codebook: a single level at zero.
    pub fn zero() -> Self {
        Self {
            levels: vec![0.0],
            thresholds: vec![],
        }
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bits(&self) -> f64 {
        (self.levels.len() as f64).log2()
    }

    pub fn encode(&self, x: f64) -> usize {
        self.thresholds.partition_point(|&t| t <= x)
    }

    pub fn level(&self, i: usize) -> f64 {
        self.levels[i]
    }

    pub fn quantize(&self, x: f64) -> f64 {
        self.levels[self.encode(x)]
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid("scale must be positive"));
        }
        Self::with_thresholds(
            self.levels.iter().map(|v| v * c).collect(),
            self.thresholds.iter().map(|v| v * c).collect(),
        )
    }

    /// Mean squared error on a `N(0, variance)` input, by quadrature.
    pub fn gaussian_mse(&self, variance: f64) -> Result<f64> {
        check_variance(variance)?;
        let sigma = variance.sqrt();
        let mut mse = 0.0;
        for (i, &level) in self.levels.iter().enumerate() {
            let (lo, hi) = self.cell(i);
            let cell = integrate_cell(lo, hi, sigma);
            mse += cell.second - 2.0 * level * cell.first + level * level * cell.mass;
        }
        Ok(mse)
    }

    fn cell(&self, i: usize) -> (f64, f64) {
        let lo = if i == 0 {
            f64::NEG_INFINITY
        } else {
            self.thresholds[i - 1]
        };
        let hi = self.thresholds.get(i).copied().unwrap_or(f64::INFINITY);
        (lo, hi)
    }

    /// `levels <count>` followed by one level per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("levels {}\n", self.levels.len());
        for l in &self.levels {
            out.push_str(&format!("{l}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (line, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty codebook".into(),
        })?;
        let count: usize = header
            .strip_prefix("levels")
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| Error::Parse {
                line,
                message: format!("expected `levels <count>`, got `{header}`"),
            })?;
        let levels = lines
            .map(|(line, l)| {
                l.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("bad level `{l}`"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if levels.len() != count {
            return Err(Error::Parse {
                line,
                message: format!("header says {count} levels, found {}", levels.len()),
            });
        }
        Self::new(levels)
    }
}

impl fmt::Display for ScalarCodebook {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

fn check_variance(variance: f64) -> Result<()> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::invalid(format!(
            "variance must be positive, got {variance}"
        )));
    }
    Ok(())
}

/// Quadrature grid: points across `[-8 sigma, 8 sigma]`.
const GRID_POINTS: f64 = 10_000.0;
const GRID_HALF_WIDTH: f64 = 8.0;

#[derive(Debug, Default, Clone, Copy)]
struct CellIntegrals {
    mass: f64,
    first: f64,
    second: f64,
}

/// Integrals of `phi`, `x phi` and `x^2 phi` over `[lo, hi]` for the
/// `N(0, sigma^2)` density, truncated to `+-8 sigma`. Composite Simpson with a
/// spacing matching a 10^4-point grid over the truncated range.
fn integrate_cell(lo: f64, hi: f64, sigma: f64) -> CellIntegrals {
    let edge = GRID_HALF_WIDTH * sigma;
    let (a, b) = (lo.max(-edge), hi.min(edge));
    if a >= b {
        return CellIntegrals::default();
    }
    let steps = ((GRID_POINTS * (b - a) / (2.0 * edge)).ceil() as usize).max(1) * 2;
    let h = (b - a) / steps as f64;
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let mut acc = CellIntegrals::default();
    for s in 0..=steps {
        let x = a + s as f64 * h;
        let w = if s == 0 || s == steps {
            1.0
        } else if s % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let p = w * norm * (-0.5 * (x / sigma).powi(2)).exp();
        acc.mass += p;
        acc.first += p * x;
        acc.second += p * x * x;
    }
    let scale = h / 3.0;
    CellIntegrals {
        mass: acc.mass * scale,
        first: acc.first * scale,
        second: acc.second * scale,
    }
}

/// Lloyd-Max quantizer with `2^rate` levels for a `N(0, variance)` source.
///
/// Alternates midpoint thresholds and centroid levels until no level moves
/// by `tol` or more.
pub fn lloyd_max_train(
    variance: f64,
    rate: u32,
    max_iters: usize,
    tol: f64,
) -> Result<ScalarCodebook> {
    check_variance(variance)?;
    if !(1..=16).contains(&rate) {
        return Err(Error::invalid(format!(
            "rate must be 1..=16 bits, got {rate}"
        )));
    }
    if max_iters == 0 || !(tol > 0.0) {
        return Err(Error::invalid("max_iters and tol must be positive"));
    }
    let count = 1usize << rate;
    let sigma = variance.sqrt();
    let normal = Normal::new(0.0, sigma).expect("sigma is positive");
    let mut levels: Vec<f64> = (0..count)
        .map(|i| normal.inverse_cdf((i as f64 + 0.5) / count as f64))
        .collect();
    let mut movement = f64::INFINITY;
    for _ in 0..max_iters {
        let book = ScalarCodebook::new(levels.clone())?;
        let centroids: Vec<f64> = (0..count)
            .map(|i| {
                let (lo, hi) = book.cell(i);
                let c = integrate_cell(lo, hi, sigma);
                if c.mass > 0.0 {
                    c.first / c.mass
                } else {
                    levels[i]
                }
            })
            .collect();
        // the density is even, so keep the codebook exactly odd-symmetric
        let next: Vec<f64> = (0..count)
            .map(|i| 0.5 * (centroids[i] - centroids[count - 1 - i]))
            .collect();
        movement = next
            .iter()
            .zip(&levels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        levels = next;
        if movement < tol {
            return ScalarCodebook::new(levels);
        }
    }
    Err(Error::NotConverged {
        iterations: max_iters,
        movement,
        last: Box::new(ScalarCodebook::new(levels)?),
    })
}

/// How decoder `m` turns the dequantized values of all encoders into an estimate.
#[derive(Debug, Clone, PartialEq)]
pub enum JointDecoder {
    /// Each decoder emits its own dequantized levels.
    PerComponent,
    /// `x_hat = W y` per symbol with `W = K (K + diag(q))^-1`.
    Lmmse { weights: Vec<f64>, noise: Vec<f64> },
}

/// Scalar quantizers applied independently to each of `n` symbols, one per encoder.
///
/// Encoder `m`'s index packs its `n` symbol indices in base `L_m` with the
/// first symbol most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarProductCode {
    n: usize,
    codebooks: Vec<ScalarCodebook>,
    decoder: JointDecoder,
}

/// Wraps `k` scalar codebooks as a blocklength-`n` product code.
pub fn scalar_code_as_multiterminal(
    codebooks: Vec<ScalarCodebook>,
    n: usize,
) -> Result<ScalarProductCode> {
    if codebooks.is_empty() {
        return Err(Error::invalid("need at least one codebook"));
    }
    if n == 0 {
        return Err(Error::invalid("blocklength must be positive"));
    }
    for book in &codebooks {
        let bits = n as f64 * book.bits();
        if bits > 62.0 {
            return Err(Error::IndexOverflow { bits });
        }
    }
    Ok(ScalarProductCode {
        n,
        codebooks,
        decoder: JointDecoder::PerComponent,
    })
}

/// Product code whose decoders apply the LMMSE estimate built from `cov`, with
/// quantizer noise `q_m` taken as each codebook's MSE on `N(0, K_mm)`.
pub fn build_lmmse_decoder_code(
    cov: &CovarianceMatrix,
    codebooks: Vec<ScalarCodebook>,
    n: usize,
) -> Result<ScalarProductCode> {
    check_dims(codebooks.len(), cov.k())?;
    let noise = codebooks
        .iter()
        .enumerate()
        .map(|(m, book)| book.gaussian_mse(cov.get(m, m)))
        .collect::<Result<Vec<_>>>()?;
    build_lmmse_decoder_with_noise(cov, codebooks, n, noise)
}

/// As [`build_lmmse_decoder_code`] with explicit noise variances.
pub fn build_lmmse_decoder_with_noise(
    cov: &CovarianceMatrix,
    codebooks: Vec<ScalarCodebook>,
    n: usize,
    noise: Vec<f64>,
) -> Result<ScalarProductCode> {
    check_dims(codebooks.len(), cov.k())?;
    let weights = lmmse_weights(cov, &noise)?;
    let mut code = scalar_code_as_multiterminal(codebooks, n)?;
    code.decoder = JointDecoder::Lmmse { weights, noise };
    Ok(code)
}

/// `K (K + diag(noise))^-1`, row-major.
pub fn lmmse_weights(cov: &CovarianceMatrix, noise: &[f64]) -> Result<Vec<f64>> {
    let k = cov.k();
    if noise.len() != k {
        return Err(Error::LengthMismatch {
            expected: k,
            actual: noise.len(),
        });
    }
    if noise.iter().any(|q| !(*q >= 0.0)) {
        return Err(Error::invalid("noise variances must be nonnegative"));
    }
    let kmat = DMatrix::from_row_slice(k, k, cov.entries());
    let mut total = kmat.clone();
    for (m, q) in noise.iter().enumerate() {
        total[(m, m)] += q;
    }
    let scale = total.diagonal().amax().max(f64::MIN_POSITIVE);
    let chol = total.cholesky().ok_or(Error::Singular)?;
    let min_pivot = chol
        .l_dirty()
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    if min_pivot * min_pivot < 1e-12 * scale {
        return Err(Error::Singular);
    }
    let w = kmat * chol.inverse();
    let mut out = vec![0.0; k * k];
    for u in 0..k {
        for v in 0..k {
            out[u * k + v] = w[(u, v)];
        }
    }
    Ok(out)
}

impl ScalarProductCode {
    pub fn codebooks(&self) -> &[ScalarCodebook] {
        &self.codebooks
    }

    pub fn decoder(&self) -> &JointDecoder {
        &self.decoder
    }

    /// Levels of encoder `m`'s `n` symbols encoded in `index`.
    pub fn dequantize(&self, m: usize, index: u64) -> Vec<f64> {
        let book = &self.codebooks[m];
        let radix = book.len() as u64;
        let mut rest = index;
        let mut out = vec![0.0; self.n];
        for slot in out.iter_mut().rev() {
            *slot = book.level((rest % radix) as usize);
            rest /= radix;
        }
        out
    }

    fn symbol_radix(&self, m: usize) -> u64 {
        self.codebooks[m].len() as u64
    }
}

impl MultiterminalCode for ScalarProductCode {
    type Index = u64;

    fn num_encoders(&self) -> usize {
        self.codebooks.len()
    }

    fn blocklength(&self) -> usize {
        self.n
    }

    fn rate(&self, m: usize) -> f64 {
        self.codebooks[m].bits()
    }

    fn encode(&self, m: usize, x: &[f64]) -> u64 {
        assert_eq!(x.len(), self.n, "encoder input length");
        let book = &self.codebooks[m];
        let radix = self.symbol_radix(m);
        x.iter()
            .fold(0u64, |acc, &v| acc * radix + book.encode(v) as u64)
    }

    fn decode(&self, m: usize, indices: &[u64]) -> Vec<f64> {
        match &self.decoder {
            JointDecoder::PerComponent => self.dequantize(m, indices[m]),
            JointDecoder::Lmmse { .. } => self.decode_all(indices).swap_remove(m),
        }
    }

    fn decode_all(&self, indices: &[u64]) -> Vec<Vec<f64>> {
        let k = self.codebooks.len();
        assert_eq!(indices.len(), k, "one index per encoder");
        let y: Vec<Vec<f64>> = (0..k).map(|u| self.dequantize(u, indices[u])).collect();
        match &self.decoder {
            JointDecoder::PerComponent => y,
            JointDecoder::Lmmse { weights, .. } => (0..k)
                .map(|m| {
                    (0..self.n)
                        .map(|i| (0..k).map(|u| weights[m * k + u] * y[u][i]).sum())
                        .collect()
                })
                .collect(),
        }
    }

    fn max_decoder_energy(&self, m: usize) -> f64 {
        let per_symbol = match &self.decoder {
            JointDecoder::PerComponent => self.codebooks[m]
                .levels()
                .iter()
                .map(|l| l * l)
                .fold(0.0, f64::max),
            JointDecoder::Lmmse { weights, .. } => {
                // a linear form is extremal at per-coordinate extremes
                let k = self.codebooks.len();
                let (mut hi, mut lo) = (0.0, 0.0);
                for u in 0..k {
                    let w = weights[m * k + u];
                    let terms = self.codebooks[u].levels().iter().map(|l| w * l);
                    hi += terms.clone().fold(f64::NEG_INFINITY, f64::max);
                    lo += terms.fold(f64::INFINITY, f64::min);
                }
                (hi * hi).max(lo * lo)
            }
        };
        self.n as f64 * per_symbol
    }
}

impl FiniteCode for ScalarProductCode {
    fn index_set_size(&self, m: usize) -> u64 {
        self.symbol_radix(m).pow(self.n as u32)
    }
}
