//! Orthonormal real-DFT mixing, block interleaving and mixed-radix index packing.
//!
//! An encoder that wants to look Gaussian to the code behind it multiplies each
//! length-`b` block of its input by [`MixingMatrix`], regroups the `n` mixed
//! blocks into `b` length-`n` vectors ([`interleave`]) and hands each vector to
//! the base encoder. The `b` resulting indices travel as one [`PackedIndex`].

use std::f64::consts::PI;

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Largest supported block length. The matrix is stored densely.
pub const MAX_BLOCK_LEN: usize = 4096;

/// The `b x b` orthonormal real-DFT matrix.
///
/// Row 0 is constant, row `b/2` alternates in sign, rows `1..b/2` hold the
/// cosine basis and rows `b/2+1..b` the sine basis, each scaled to unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    b: usize,
    entries: Vec<f64>,
}

impl MixingMatrix {
    pub fn new(b: usize) -> Result<Self> {
        if b < 2 || !b.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "mixing length b must be even and >= 2, got {b}"
            )));
        }
        if b > MAX_BLOCK_LEN {
            return Err(Error::invalid(format!(
                "mixing length b = {b} exceeds the maximum of {MAX_BLOCK_LEN}"
            )));
        }
        let half = b / 2;
        let inv_sqrt = 1.0 / (b as f64).sqrt();
        let scale = (2.0 / b as f64).sqrt();
        let mut entries = vec![0.0; b * b];
        for i in 0..b {
            let row = &mut entries[i * b..(i + 1) * b];
            for (j, e) in row.iter_mut().enumerate() {
                *e = if i == 0 {
                    inv_sqrt
                } else if i == half {
                    if j % 2 == 0 {
                        inv_sqrt
                    } else {
                        -inv_sqrt
                    }
                } else if i < half {
                    // reduce i*j mod b first so large b keeps full angle precision
                    scale * (2.0 * PI * ((i * j) % b) as f64 / b as f64).cos()
                } else {
                    scale * (2.0 * PI * (((i - half) * j) % b) as f64 / b as f64).sin()
                };
            }
        }
        Ok(Self { b, entries })
    }

    /// Block length `b`.
    pub fn len(&self) -> usize {
        self.b
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.b + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.b..(i + 1) * self.b]
    }

    /// Returns `Q x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        let mut out = vec![0.0; self.b];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    /// Returns `Q^T y`, the inverse of [`apply`](Self::apply).
    pub fn invert(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y.len())?;
        let mut out = vec![0.0; self.b];
        self.invert_into(y, &mut out);
        Ok(out)
    }

    pub(crate) fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.b);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x);
        }
    }

    pub(crate) fn invert_into(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.b);
        out.fill(0.0);
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            for (o, &q) in out.iter_mut().zip(self.row(i)) {
                *o += yi * q;
            }
        }
    }

    /// Largest `|(Q Q^T - I)_{ij}|`.
    pub fn max_gram_deviation(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.b {
            for j in i..self.b {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(self.row(i), self.row(j)) - target).abs());
            }
        }
        worst
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.b {
            return Err(Error::LengthMismatch {
                expected: self.b,
                actual: len,
            });
        }
        Ok(())
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `b` vectors of length `n`; vector `l` collects coordinate `l` of each mixed block.
#[derive(Debug, Clone, PartialEq)]
pub struct InterleavedBlocks {
    n: usize,
    vectors: Vec<Vec<f64>>,
}

impl InterleavedBlocks {
    pub fn from_vectors(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let n = vectors.first().map(Vec::len).unwrap_or(0);
        if vectors.is_empty() || n == 0 {
            return Err(Error::invalid(
                "interleaved blocks need b >= 1 vectors of length n >= 1",
            ));
        }
        if let Some(bad) = vectors.iter().find(|v| v.len() != n) {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: bad.len(),
            });
        }
        Ok(Self { n, vectors })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn b(&self) -> usize {
        self.vectors.len()
    }

    pub fn vector(&self, l: usize) -> &[f64] {
        &self.vectors[l]
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn into_vectors(self) -> Vec<Vec<f64>> {
        self.vectors
    }

    /// Inverse of [`interleave`]: element `t*b + l` of the output is `vectors[l][t]`.
    pub fn deinterleave(&self) -> Vec<f64> {
        let b = self.b();
        let mut out = vec![0.0; self.n * b];
        for (l, v) in self.vectors.iter().enumerate() {
            for (t, &val) in v.iter().enumerate() {
                out[t * b + l] = val;
            }
        }
        out
    }
}

/// Splits a mixed stream of `n` length-`b` blocks into `b` length-`n` vectors.
pub fn interleave(stream: &[f64], n: usize, b: usize) -> Result<InterleavedBlocks> {
    if n == 0 || b == 0 {
        return Err(Error::invalid("interleave needs n >= 1 and b >= 1"));
    }
    if stream.len() != n * b {
        return Err(Error::LengthMismatch {
            expected: n * b,
            actual: stream.len(),
        });
    }
    let vectors = (0..b)
        .map(|l| (0..n).map(|t| stream[t * b + l]).collect())
        .collect();
    Ok(InterleavedBlocks { n, vectors })
}

/// `b` base-code indices combined into one mixed-radix integer.
///
/// The first index is the most significant digit, so indices `(1, 2)` with
/// radices `(4, 4)` pack to `1*4 + 2 = 6`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PackedIndex {
    value: BigUint,
    radices: Vec<u64>,
}

impl PackedIndex {
    pub fn pack(indices: &[u64], radices: &[u64]) -> Result<Self> {
        if indices.len() != radices.len() {
            return Err(Error::LengthMismatch {
                expected: radices.len(),
                actual: indices.len(),
            });
        }
        let mut value = BigUint::zero();
        for (position, (&index, &radix)) in indices.iter().zip(radices).enumerate() {
            if index >= radix {
                return Err(Error::IndexOutOfRange {
                    position,
                    index,
                    radix,
                });
            }
            value *= radix;
            value += index;
        }
        Ok(Self {
            value,
            radices: radices.to_vec(),
        })
    }

    pub fn from_value(value: BigUint, radices: Vec<u64>) -> Result<Self> {
        if radices.contains(&0) {
            return Err(Error::invalid("radices must be positive"));
        }
        let bound: BigUint = radices.iter().map(|&r| BigUint::from(r)).product();
        if value >= bound {
            return Err(Error::invalid(format!(
                "packed value {value} not below radix product {bound}"
            )));
        }
        Ok(Self { value, radices })
    }

    pub fn unpack(&self) -> Vec<u64> {
        let mut rest = self.value.clone();
        let mut out = vec![0u64; self.radices.len()];
        for (slot, &radix) in out.iter_mut().zip(&self.radices).rev() {
            let digit = &rest % radix;
            *slot = digit.to_u64().expect("digit is below a u64 radix");
            rest /= radix;
        }
        out
    }

    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn radices(&self) -> &[u64] {
        &self.radices
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const S2: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn b2_matrix() {
        let q = MixingMatrix::new(2).unwrap();
        assert_close(q.row(0), &[S2, S2], 1e-12);
        assert_close(q.row(1), &[S2, -S2], 1e-12);
    }

    #[test]
    fn b4_matrix() {
        let q = MixingMatrix::new(4).unwrap();
        assert_close(q.row(0), &[0.5, 0.5, 0.5, 0.5], 1e-12);
        assert_close(q.row(1), &[S2, 0.0, -S2, 0.0], 1e-12);
        assert_close(q.row(2), &[0.5, -0.5, 0.5, -0.5], 1e-12);
        assert_close(q.row(3), &[0.0, S2, 0.0, -S2], 1e-12);
        assert!(q.max_gram_deviation() <= 1e-12);
    }

    #[test]
    fn rejects_odd_small_and_huge() {
        for b in [0, 1, 3, 7, MAX_BLOCK_LEN + 2] {
            assert!(matches!(
                MixingMatrix::new(b),
                Err(Error::InvalidParameter(_))
            ));
        }
    }

    #[test]
    fn rows_after_first_sum_to_zero() {
        for b in [2, 4, 8, 64, 256] {
            let q = MixingMatrix::new(b).unwrap();
            for i in 1..b {
                let s: f64 = q.row(i).iter().sum();
                assert!(s.abs() <= 1e-10, "b={b} row {i} sums to {s}");
            }
        }
    }

    #[test]
    fn apply_examples() {
        let q2 = MixingMatrix::new(2).unwrap();
        assert_close(&q2.apply(&[1.0, 1.0]).unwrap(), &[2f64.sqrt(), 0.0], 1e-12);
        assert_close(&q2.invert(&[2f64.sqrt(), 0.0]).unwrap(), &[1.0, 1.0], 1e-12);

        let q4 = MixingMatrix::new(4).unwrap();
        let col = q4.apply(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_close(&col, &[0.5, S2, 0.5, 0.0], 1e-12);
        assert_close(&q4.invert(&col).unwrap(), &[1.0, 0.0, 0.0, 0.0], 1e-12);
        assert_eq!(q4.apply(&[0.0; 4]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn length_mismatch() {
        let q = MixingMatrix::new(4).unwrap();
        assert!(matches!(
            q.apply(&[1.0; 3]),
            Err(Error::LengthMismatch {
                expected: 4,
                actual: 3
            })
        ));
        assert!(q.invert(&[1.0; 5]).is_err());
    }

    #[test]
    fn interleave_examples() {
        let s = [10.0, 11.0, 12.0, 13.0];
        let blocks = interleave(&s, 2, 2).unwrap();
        assert_eq!(blocks.vectors(), &[vec![10.0, 12.0], vec![11.0, 13.0]]);
        assert_eq!(blocks.deinterleave(), s.to_vec());

        let single = interleave(&[1.0, 2.0, 3.0], 1, 3).unwrap();
        assert_eq!(single.vectors(), &[vec![1.0], vec![2.0], vec![3.0]]);
        assert_eq!(single.deinterleave(), vec![1.0, 2.0, 3.0]);

        let s: Vec<f64> = (0..12).map(f64::from).collect();
        let blocks = interleave(&s, 3, 4).unwrap();
        assert_eq!(
            blocks.vectors(),
            &[
                vec![0.0, 4.0, 8.0],
                vec![1.0, 5.0, 9.0],
                vec![2.0, 6.0, 10.0],
                vec![3.0, 7.0, 11.0]
            ]
        );
        assert!(interleave(&s, 5, 2).is_err());
    }

    #[test]
    fn malformed_blocks_rejected() {
        assert!(InterleavedBlocks::from_vectors(vec![]).is_err());
        assert!(InterleavedBlocks::from_vectors(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn pack_examples() {
        let p = PackedIndex::pack(&[0, 0, 0], &[3, 5, 7]).unwrap();
        assert!(p.value().is_zero());
        let p = PackedIndex::pack(&[1, 2], &[4, 4]).unwrap();
        assert_eq!(p.value(), &BigUint::from(6u32));
        assert_eq!(p.unpack(), vec![1, 2]);
        assert!(matches!(
            PackedIndex::pack(&[4, 0], &[4, 4]),
            Err(Error::IndexOutOfRange { position: 0, .. })
        ));
        assert!(PackedIndex::from_value(BigUint::from(16u32), vec![4, 4]).is_err());
    }

    #[test]
    fn pack_wide_radix_product() {
        let radices = vec![2u64; 256];
        let indices: Vec<u64> = (0..256).map(|i| (i % 3 == 0) as u64).collect();
        let p = PackedIndex::pack(&indices, &radices).unwrap();
        assert_eq!(p.unpack(), indices);
    }

    proptest! {
        #[test]
        fn interleave_round_trip(stream in prop::collection::vec(-1e6f64..1e6, 40)) {
            let blocks = interleave(&stream, 5, 8).unwrap();
            prop_assert_eq!(blocks.deinterleave(), stream);
        }

        #[test]
        fn pack_round_trip(a in 0u64..3, b in 0u64..5, c in 0u64..7) {
            let p = PackedIndex::pack(&[a, b, c], &[3, 5, 7]).unwrap();
            prop_assert!(p.value() < &BigUint::from(105u32));
            prop_assert_eq!(p.unpack(), vec![a, b, c]);
        }

        #[test]
        fn mixing_round_trip(x in prop::collection::vec(-10f64..10.0, 8)) {
            let q = MixingMatrix::new(8).unwrap();
            let y = q.apply(&x).unwrap();
            let back = q.invert(&y).unwrap();
            for (u, v) in x.iter().zip(&back) {
                prop_assert!((u - v).abs() <= 1e-12);
            }
            let nx: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((nx - ny).abs() <= 1e-9 * nx.max(1e-300));
        }
    }
}
