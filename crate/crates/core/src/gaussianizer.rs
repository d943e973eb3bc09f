//! Wrapping a Gaussian-designed code so it performs as well on any source
//! with the same covariance.
//!
//! Encoder `m` of the wrapped code takes `n*b` samples, multiplies each
//! consecutive length-`b` block by the mixing matrix, interleaves the `n`
//! mixed blocks into `b` length-`n` vectors, runs the base encoder on each and
//! packs the `b` indices into one [`PackedIndex`]. The decoder unpacks, runs
//! the base decoder once per interleaved position, deinterleaves and undoes
//! the mixing.

use num_bigint::BigUint;

use crate::codecs::{
    check_dims, check_trials, evaluate_distortion, squared_error, FiniteCode, MultiterminalCode,
};
use crate::error::{Error, Result};
use crate::mixing::{interleave, InterleavedBlocks, MixingMatrix, PackedIndex};
use crate::montecarlo::{run_trials, Estimate};
use crate::sources::{Family, SourceSpec};

/// A base code of blocklength `n` lifted to blocklength `n*b`.
#[derive(Debug, Clone)]
pub struct GaussianizedCode<C> {
    base: C,
    mixing: MixingMatrix,
    radices: Vec<u64>,
}

/// Wraps `base` with mixing length `b` (even, `>= 2`).
pub fn wrap_code<C: FiniteCode>(base: C, b: usize) -> Result<GaussianizedCode<C>> {
    let mixing = MixingMatrix::new(b)?;
    if base.num_encoders() == 0 || base.blocklength() == 0 {
        return Err(Error::invalid(
            "base code must have encoders and a positive blocklength",
        ));
    }
    let radices = (0..base.num_encoders())
        .map(|m| base.index_set_size(m))
        .collect();
    Ok(GaussianizedCode {
        base,
        mixing,
        radices,
    })
}

impl<C: FiniteCode> GaussianizedCode<C> {
    pub fn base(&self) -> &C {
        &self.base
    }

    pub fn mixing(&self) -> &MixingMatrix {
        &self.mixing
    }

    pub fn b(&self) -> usize {
        self.mixing.len()
    }

    /// Blocklength of the base code.
    pub fn base_blocklength(&self) -> usize {
        self.base.blocklength()
    }

    /// Index set size of encoder `m`: the base size raised to the `b`.
    pub fn index_set_size(&self, m: usize) -> BigUint {
        BigUint::from(self.radices[m]).pow(self.b() as u32)
    }

    /// Mixes each length-`b` block of `x` and interleaves the results.
    pub fn mix_and_interleave(&self, x: &[f64]) -> Result<InterleavedBlocks> {
        let (n, b) = (self.base_blocklength(), self.b());
        if x.len() != n * b {
            return Err(Error::LengthMismatch {
                expected: n * b,
                actual: x.len(),
            });
        }
        let mut mixed = vec![0.0; n * b];
        for (src, dst) in x.chunks_exact(b).zip(mixed.chunks_exact_mut(b)) {
            self.mixing.apply_into(src, dst);
        }
        interleave(&mixed, n, b)
    }

    /// Deinterleaves and unmixes; inverse of [`mix_and_interleave`](Self::mix_and_interleave).
    pub fn unmix(&self, blocks: &InterleavedBlocks) -> Vec<f64> {
        let b = self.b();
        let mixed = blocks.deinterleave();
        let mut out = vec![0.0; mixed.len()];
        for (src, dst) in mixed.chunks_exact(b).zip(out.chunks_exact_mut(b)) {
            self.mixing.invert_into(src, dst);
        }
        out
    }

    /// Encodes a long stream block by block. The stream length must be a
    /// multiple of `n*b`; a trailing remainder is rejected.
    pub fn encode_stream(&self, m: usize, x: &[f64]) -> Result<Vec<PackedIndex>> {
        let span = self.blocklength();
        if !x.len().is_multiple_of(span) {
            return Err(Error::invalid(format!(
                "stream length {} is not a multiple of n*b = {span}",
                x.len()
            )));
        }
        Ok(x.chunks_exact(span)
            .map(|chunk| self.encode(m, chunk))
            .collect())
    }

    /// Decoder `m` applied to a stream of codewords; `indices[c]` holds the
    /// `k` packed indices of codeword `c`.
    pub fn decode_stream(&self, m: usize, indices: &[Vec<PackedIndex>]) -> Vec<f64> {
        indices
            .iter()
            .flat_map(|tuple| self.decode(m, tuple))
            .collect()
    }

    fn base_tuples(&self, indices: &[PackedIndex]) -> Vec<Vec<u64>> {
        let unpacked: Vec<Vec<u64>> = indices.iter().map(PackedIndex::unpack).collect();
        (0..self.b())
            .map(|l| unpacked.iter().map(|digits| digits[l]).collect())
            .collect()
    }
}

impl<C: FiniteCode> MultiterminalCode for GaussianizedCode<C> {
    type Index = PackedIndex;

    fn num_encoders(&self) -> usize {
        self.base.num_encoders()
    }

    fn blocklength(&self) -> usize {
        self.base.blocklength() * self.b()
    }

    fn rate(&self, m: usize) -> f64 {
        self.base.rate(m)
    }

    fn encode(&self, m: usize, x: &[f64]) -> PackedIndex {
        let blocks = self
            .mix_and_interleave(x)
            .expect("encoder input must have length n*b");
        let indices: Vec<u64> = blocks
            .vectors()
            .iter()
            .map(|v| self.base.encode(m, v))
            .collect();
        PackedIndex::pack(&indices, &vec![self.radices[m]; self.b()])
            .expect("base encoder output is below its index set size")
    }

    fn decode(&self, m: usize, indices: &[PackedIndex]) -> Vec<f64> {
        let vectors = self
            .base_tuples(indices)
            .iter()
            .map(|tuple| self.base.decode(m, tuple))
            .collect();
        let blocks =
            InterleavedBlocks::from_vectors(vectors).expect("base decoder output length n");
        self.unmix(&blocks)
    }

    fn decode_all(&self, indices: &[PackedIndex]) -> Vec<Vec<f64>> {
        let k = self.num_encoders();
        let mut per_encoder: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(self.b()); k];
        for tuple in self.base_tuples(indices) {
            for (m, v) in self.base.decode_all(&tuple).into_iter().enumerate() {
                per_encoder[m].push(v);
            }
        }
        per_encoder
            .into_iter()
            .map(|vectors| {
                let blocks =
                    InterleavedBlocks::from_vectors(vectors).expect("base decoder output length n");
                self.unmix(&blocks)
            })
            .collect()
    }

    fn max_decoder_energy(&self, m: usize) -> f64 {
        // unmixing preserves energy and the b positions decode independently
        self.b() as f64 * self.base.max_decoder_energy(m)
    }
}

/// Distortion of every interleaved position, per encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct PerBlockReport {
    /// `blocks[m][l]`: `(1/n) E||x~_m^(l) - x^~_m^(l)||^2`.
    pub blocks: Vec<Vec<Estimate>>,
    /// Position with the largest estimated distortion, per encoder.
    pub worst_block: Vec<usize>,
    /// End-to-end distortion of the wrapped code per symbol, per encoder.
    pub overall: Vec<Estimate>,
}

impl PerBlockReport {
    /// Average of the per-position means; equals the overall distortion by unitarity.
    pub fn mean_over_blocks(&self, m: usize) -> f64 {
        let blocks = &self.blocks[m];
        blocks.iter().map(|e| e.mean).sum::<f64>() / blocks.len() as f64
    }

    pub fn worst(&self, m: usize) -> Estimate {
        self.blocks[m][self.worst_block[m]]
    }
}

/// Estimates the distortion of each interleaved position `l = 0..b` in the
/// mixed domain, together with the end-to-end distortion.
pub fn per_block_distortion<C: FiniteCode>(
    code: &GaussianizedCode<C>,
    spec: &SourceSpec,
    trials: usize,
) -> Result<PerBlockReport> {
    check_trials(trials)?;
    check_dims(code.num_encoders(), spec.k())?;
    let (k, b, n) = (code.num_encoders(), code.b(), code.base_blocklength());
    let moments = run_trials(spec, trials, n * b, k * b + k, |rows, out| {
        let mixed: Vec<InterleavedBlocks> = rows
            .iter()
            .map(|x| code.mix_and_interleave(x).expect("trial length is n*b"))
            .collect();
        let mut recon: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(b); k];
        for l in 0..b {
            let tuple: Vec<u64> = (0..k)
                .map(|m| code.base.encode(m, mixed[m].vector(l)))
                .collect();
            for (m, v) in code.base.decode_all(&tuple).into_iter().enumerate() {
                out[m * b + l] = squared_error(mixed[m].vector(l), &v) / n as f64;
                recon[m].push(v);
            }
        }
        for (m, vectors) in recon.into_iter().enumerate() {
            let blocks = InterleavedBlocks::from_vectors(vectors).expect("length n");
            out[k * b + m] = squared_error(rows[m], &code.unmix(&blocks)) / (n * b) as f64;
        }
    });
    let blocks: Vec<Vec<Estimate>> = (0..k)
        .map(|m| {
            moments[m * b..(m + 1) * b]
                .iter()
                .map(|&mo| mo.into())
                .collect()
        })
        .collect();
    let worst_block = blocks
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (l, e)| {
                    if e.mean > best.1 {
                        (l, e.mean)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect();
    let overall = moments[k * b..].iter().map(|&mo| mo.into()).collect();
    Ok(PerBlockReport {
        blocks,
        worst_block,
        overall,
    })
}

/// One line of a convergence table. `b = 1` denotes the unwrapped base code.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub b: usize,
    pub encoder: usize,
    pub distortion: f64,
    pub stderr: f64,
    pub gaussian_ref: f64,
    pub ref_stderr: f64,
}

impl ConvergenceRow {
    pub fn wrapped(&self) -> Estimate {
        Estimate {
            mean: self.distortion,
            stderr: self.stderr,
        }
    }

    pub fn reference(&self) -> Estimate {
        Estimate {
            mean: self.gaussian_ref,
            stderr: self.ref_stderr,
        }
    }

    pub fn gap(&self) -> f64 {
        self.distortion - self.gaussian_ref
    }
}

pub const CONVERGENCE_HEADER: &str = "b,encoder,distortion,stderr,gaussian_ref,ref_stderr";

pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = format!("{CONVERGENCE_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.b, r.encoder, r.distortion, r.stderr, r.gaussian_ref, r.ref_stderr
        ));
    }
    out
}

/// Checks a list of mixing lengths: ascending, each either 1 (no wrapping) or even.
pub fn validate_b_list(b_list: &[usize]) -> Result<()> {
    if b_list.is_empty() {
        return Err(Error::invalid("b list is empty"));
    }
    for &b in b_list {
        if b != 1 && (b < 2 || b % 2 != 0) {
            return Err(Error::invalid(format!(
                "b = {b} is invalid: mixing lengths must be even (or 1 for the unwrapped baseline)"
            )));
        }
    }
    if b_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("b list must be strictly ascending"));
    }
    Ok(())
}

/// Wrapped distortion at each `b` against the base code's distortion on a
/// Gaussian source with the same covariance.
///
/// `trials` counts wrapped codewords at every `b` and base codewords for the
/// reference.
pub fn distortion_convergence<C: FiniteCode>(
    base: &C,
    spec: &SourceSpec,
    b_list: &[usize],
    trials: usize,
) -> Result<Vec<ConvergenceRow>> {
    validate_b_list(b_list)?;
    let reference = evaluate_distortion(base, &spec.with_family(Family::Gaussian), trials)?;
    let mut rows = Vec::new();
    for &b in b_list {
        let est = if b == 1 {
            evaluate_distortion(base, spec, trials)?
        } else {
            evaluate_distortion(&wrap_code(base, b)?, spec, trials)?
        };
        for m in 0..base.num_encoders() {
            rows.push(ConvergenceRow {
                b,
                encoder: m,
                distortion: est.distortion(m),
                stderr: est.stderr(m),
                gaussian_ref: reference.distortion(m),
                ref_stderr: reference.stderr(m),
            });
        }
    }
    Ok(rows)
}
