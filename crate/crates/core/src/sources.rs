//! Zero-mean i.i.d. vector sources with a prescribed covariance.
//!
//! Samples are `S w` where `S` is the symmetric square root of `K` and `w` has
//! i.i.d. unit-variance coordinates from the chosen [`Family`]. Each source
//! component draws from its own ChaCha8 substream so that blocks are
//! reproducible regardless of how trials are scheduled.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

/// Default probability of the positive atom of [`Family::TwoPoint`].
pub const DEFAULT_TWO_POINT_P: f64 = 0.2;

/// Symmetric positive semidefinite `k x k` matrix, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    k: usize,
    entries: Vec<f64>,
}

impl CovarianceMatrix {
    pub fn new(k: usize, entries: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("covariance dimension must be positive"));
        }
        if entries.len() != k * k {
            return Err(Error::LengthMismatch {
                expected: k * k,
                actual: entries.len(),
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("covariance entries must be finite"));
        }
        let mut asym = 0.0f64;
        for u in 0..k {
            for v in 0..u {
                asym = asym.max((entries[u * k + v] - entries[v * k + u]).abs());
            }
        }
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        let cov = Self { k, entries };
        let min_eig = cov.eigen().eigenvalues.min();
        if min_eig < -PSD_TOL {
            return Err(Error::NotPsd(min_eig));
        }
        Ok(cov)
    }

    pub fn identity(k: usize) -> Self {
        let mut entries = vec![0.0; k * k];
        for m in 0..k {
            entries[m * k + m] = 1.0;
        }
        Self { k, entries }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != k) {
            return Err(Error::LengthMismatch {
                expected: k,
                actual: bad.len(),
            });
        }
        Self::new(k, rows.concat())
    }

    /// Parses inline rows separated by `;` with entries separated by commas or
    /// whitespace, e.g. `1, 0.8; 0.8, 1`.
    pub fn parse_inline(text: &str) -> Result<Self> {
        let rows = text
            .split(';')
            .map(|row| parse_row(row, 1))
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(&rows)
    }

    /// Parses the matrix file format: a line holding `k`, then `k` rows of
    /// whitespace-separated entries. Blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (line, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty matrix file".into(),
        })?;
        let k: usize = header.parse().map_err(|_| Error::Parse {
            line,
            message: format!("expected dimension, got `{header}`"),
        })?;
        let mut rows = Vec::with_capacity(k);
        for (line, l) in lines.by_ref().take(k) {
            rows.push(parse_row(l, line)?);
        }
        if rows.len() != k {
            return Err(Error::Parse {
                line,
                message: format!("expected {k} rows, found {}", rows.len()),
            });
        }
        if let Some((line, _)) = lines.next() {
            return Err(Error::Parse {
                line,
                message: "trailing content after matrix rows".into(),
            });
        }
        Self::from_rows(&rows)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.k);
        for u in 0..self.k {
            let row: Vec<String> = self.row(u).iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.entries[u * self.k + v]
    }

    pub fn row(&self, u: usize) -> &[f64] {
        &self.entries[u * self.k..(u + 1) * self.k]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// `t^T K t`.
    pub fn quadratic_form(&self, t: &[f64]) -> f64 {
        let mut acc = 0.0;
        for u in 0..self.k {
            for v in 0..self.k {
                acc += t[u] * t[v] * self.get(u, v);
            }
        }
        acc
    }

    /// Symmetric square root `S` with `S S^T = K`, row-major.
    ///
    /// Eigenvalues in `[-1e-10, 0)` are clamped to zero so rank-deficient
    /// matrices are accepted.
    pub fn factor(&self) -> Vec<f64> {
        let eig = self.eigen();
        let k = self.k;
        let roots: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
        let mut s = vec![0.0; k * k];
        for u in 0..k {
            for v in 0..k {
                let mut acc = 0.0;
                for (e, r) in roots.iter().enumerate() {
                    acc += eig.eigenvectors[(u, e)] * r * eig.eigenvectors[(v, e)];
                }
                s[u * k + v] = acc;
            }
        }
        s
    }

    fn eigen(&self) -> SymmetricEigen<f64, nalgebra::Dyn> {
        DMatrix::from_row_slice(self.k, self.k, &self.entries).symmetric_eigen()
    }

    pub(crate) fn from_raw(k: usize, entries: Vec<f64>) -> Self {
        Self { k, entries }
    }
}

fn parse_row(row: &str, line: usize) -> Result<Vec<f64>> {
    row.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("bad matrix entry `{t}`"),
            })
        })
        .collect()
}

/// Unit-variance, zero-mean marginal family of the i.i.d. driving coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Gaussian,
    /// `+1` or `-1` with equal probability.
    Rademacher,
    /// Uniform on `(-sqrt 3, sqrt 3)`.
    Uniform,
    /// Laplace with scale `1/sqrt 2`.
    Laplace,
    /// `sqrt((1-p)/p)` with probability `p`, else `-sqrt(p/(1-p))`.
    TwoPoint {
        p: f64,
    },
}

impl Family {
    pub const NON_GAUSSIAN: [Family; 4] = [
        Family::Rademacher,
        Family::Uniform,
        Family::Laplace,
        Family::TwoPoint {
            p: DEFAULT_TWO_POINT_P,
        },
    ];

    pub fn two_point(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!(
                "two-point probability must lie in (0, 1), got {p}"
            )));
        }
        Ok(Family::TwoPoint { p })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Family::Gaussian => rng.sample(StandardNormal),
            Family::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            Family::Uniform => {
                let s = 3f64.sqrt();
                rng.random_range(-s..s)
            }
            Family::Laplace => {
                let e: f64 = rng.sample(Exp1);
                let mag = e * std::f64::consts::FRAC_1_SQRT_2;
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            }
            Family::TwoPoint { p } => {
                if rng.random::<f64>() < p {
                    ((1.0 - p) / p).sqrt()
                } else {
                    -(p / (1.0 - p)).sqrt()
                }
            }
        }
    }

    /// Largest possible `|w|`, if bounded.
    pub fn support_bound(&self) -> Option<f64> {
        match *self {
            Family::Gaussian | Family::Laplace => None,
            Family::Rademacher => Some(1.0),
            Family::Uniform => Some(3f64.sqrt()),
            Family::TwoPoint { p } => Some(((1.0 - p) / p).sqrt().max((p / (1.0 - p)).sqrt())),
        }
    }

    /// `E[w^4]` of the unit-variance coordinate.
    pub fn fourth_moment(&self) -> f64 {
        match *self {
            Family::Gaussian => 3.0,
            Family::Rademacher => 1.0,
            Family::Uniform => 1.8,
            Family::Laplace => 6.0,
            Family::TwoPoint { p } => (1.0 - p).powi(2) / p + p * p / (1.0 - p),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, Family::Gaussian)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Gaussian => f.write_str("gaussian"),
            Family::Rademacher => f.write_str("rademacher"),
            Family::Uniform => f.write_str("uniform"),
            Family::Laplace => f.write_str("laplace"),
            Family::TwoPoint { p } => write!(f, "two-point:{p}"),
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    /// Accepts `gaussian`, `rademacher`, `uniform`, `laplace`, and
    /// `two-point[:p]` (alias `two-point-mixture[:p]`).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s.as_str(), None),
        };
        let plain = |fam: Family| match arg {
            None => Ok(fam),
            Some(_) => Err(Error::UnknownFamily(s.clone())),
        };
        match name {
            "gaussian" | "normal" => plain(Family::Gaussian),
            "rademacher" => plain(Family::Rademacher),
            "uniform" => plain(Family::Uniform),
            "laplace" => plain(Family::Laplace),
            "two-point" | "two-point-mixture" | "twopoint" => {
                let p = match arg {
                    None => DEFAULT_TWO_POINT_P,
                    Some(a) => a.parse().map_err(|_| Error::UnknownFamily(s.clone()))?,
                };
                Family::two_point(p)
            }
            _ => Err(Error::UnknownFamily(s.clone())),
        }
    }
}

/// Generator for stream `stream` of `seed`.
pub fn substream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Components per stream group; component `m` of group `g` uses ChaCha stream `g << 16 | m`.
pub const MAX_COMPONENTS: usize = 1 << 16;

/// An i.i.d. vector source: marginal family, covariance and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    family: Family,
    cov: CovarianceMatrix,
    seed: u64,
    factor: Vec<f64>,
}

impl SourceSpec {
    pub fn new(family: Family, cov: CovarianceMatrix, seed: u64) -> Result<Self> {
        if cov.k() > MAX_COMPONENTS {
            return Err(Error::invalid(format!(
                "at most {MAX_COMPONENTS} components are supported"
            )));
        }
        let factor = cov.factor();
        Ok(Self {
            family,
            cov,
            seed,
            factor,
        })
    }

    /// Scalar source with variance `variance`.
    pub fn scalar(family: Family, variance: f64, seed: u64) -> Result<Self> {
        Self::new(family, CovarianceMatrix::new(1, vec![variance])?, seed)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn covariance(&self) -> &CovarianceMatrix {
        &self.cov
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn k(&self) -> usize {
        self.cov.k()
    }

    /// Covariance square root used for sampling.
    pub fn factor(&self) -> &[f64] {
        &self.factor
    }

    pub fn with_family(&self, family: Family) -> Self {
        Self {
            family,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    /// `len` i.i.d. k-vectors from stream group 0.
    pub fn sample_iid(&self, len: usize) -> Result<SourceBlock> {
        if len == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        Ok(self.sample_group(len, 0))
    }

    /// `len` i.i.d. k-vectors from stream group `group`; distinct groups are independent.
    pub fn sample_group(&self, len: usize, group: u64) -> SourceBlock {
        let k = self.k();
        let mut w = vec![0.0; k * len];
        for (m, row) in w.chunks_exact_mut(len).enumerate() {
            let mut rng = substream_rng(self.seed, (group << 16) | m as u64);
            for v in row.iter_mut() {
                *v = self.family.sample(&mut rng);
            }
        }
        if k == 1 {
            let s = self.factor[0];
            w.iter_mut().for_each(|v| *v *= s);
            return SourceBlock { k, len, data: w };
        }
        let mut data = vec![0.0; k * len];
        for u in 0..k {
            let out = &mut data[u * len..(u + 1) * len];
            for v in 0..k {
                let s = self.factor[u * k + v];
                if s == 0.0 {
                    continue;
                }
                for (o, &x) in out.iter_mut().zip(&w[v * len..(v + 1) * len]) {
                    *o += s * x;
                }
            }
        }
        SourceBlock { k, len, data }
    }

    /// Exact `E[x_m^4]` for component `m`.
    pub fn component_fourth_moment(&self, m: usize) -> f64 {
        let k = self.k();
        let row = &self.factor[m * k..(m + 1) * k];
        let var: f64 = row.iter().map(|s| s * s).sum();
        let quartic: f64 = row.iter().map(|s| s.powi(4)).sum();
        3.0 * var * var + (self.family.fourth_moment() - 3.0) * quartic
    }

    /// Bound on `|x_m|` if the family has bounded support.
    pub fn component_support_bound(&self, m: usize) -> Option<f64> {
        let k = self.k();
        let s = self.family.support_bound()?;
        Some(
            self.factor[m * k..(m + 1) * k]
                .iter()
                .map(|v| v.abs())
                .sum::<f64>()
                * s,
        )
    }
}

/// `k x len` block of source samples; row `m` belongs to encoder `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceBlock {
    k: usize,
    len: usize,
    data: Vec<f64>,
}

impl SourceBlock {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        let len = rows.first().map(Vec::len).unwrap_or(0);
        if k == 0 || len == 0 {
            return Err(Error::invalid("source block must be non-empty"));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != len) {
            return Err(Error::LengthMismatch {
                expected: len,
                actual: bad.len(),
            });
        }
        Ok(Self {
            k,
            len,
            data: rows.concat(),
        })
    }

    pub(crate) fn from_raw(k: usize, len: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), k * len);
        Self { k, len, data }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.data[m * self.len..(m + 1) * self.len]
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.k).map(|m| self.data[m * self.len + i]).collect()
    }
}

/// `(1/L) X X^T`, with no mean subtraction.
pub fn empirical_covariance(block: &SourceBlock) -> Result<CovarianceMatrix> {
    let (k, l) = (block.k(), block.len());
    if l < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: l });
    }
    let mut entries = vec![0.0; k * k];
    for u in 0..k {
        for v in u..k {
            let s = crate::mixing::dot(block.row(u), block.row(v)) / l as f64;
            entries[u * k + v] = s;
            entries[v * k + u] = s;
        }
    }
    Ok(CovarianceMatrix::from_raw(k, entries))
}

/// Standard error of each entry of [`empirical_covariance`], from the sample
/// variance of the products `x_u x_v`.
pub fn covariance_stderr(block: &SourceBlock) -> Result<Vec<f64>> {
    let (k, l) = (block.k(), block.len());
    if l < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: l });
    }
    let mut out = vec![0.0; k * k];
    for u in 0..k {
        for v in u..k {
            let mut acc = crate::montecarlo::Moments::default();
            for (a, b) in block.row(u).iter().zip(block.row(v)) {
                acc.push(a * b);
            }
            out[u * k + v] = acc.stderr();
            out[v * k + u] = acc.stderr();
        }
    }
    Ok(out)
}
