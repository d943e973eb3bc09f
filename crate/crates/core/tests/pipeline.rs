use proptest::prelude::*;

use worstcase::codecs::{
    build_lmmse_decoder_code, evaluate_distortion, lloyd_max_train, scalar_code_as_multiterminal,
    MultiterminalCode,
};
use worstcase::gaussianizer::{per_block_distortion, wrap_code};
use worstcase::mixing::{interleave, MixingMatrix, PackedIndex};
use worstcase::sources::{CovarianceMatrix, Family, SourceSpec};

fn k08() -> CovarianceMatrix {
    CovarianceMatrix::parse_inline("1, 0.8; 0.8, 1").unwrap()
}

#[test]
fn wrapped_code_matches_manual_pipeline() {
    let book = lloyd_max_train(1.0, 2, 1000, 1e-12).unwrap();
    let base = scalar_code_as_multiterminal(vec![book.clone()], 2).unwrap();
    let code = wrap_code(&base, 4).unwrap();
    let spec = SourceSpec::scalar(Family::Laplace, 1.0, 5).unwrap();
    let x = spec.sample_iid(8).unwrap().row(0).to_vec();

    let q = MixingMatrix::new(4).unwrap();
    let mixed: Vec<f64> = x.chunks(4).flat_map(|c| q.apply(c).unwrap()).collect();
    let blocks = interleave(&mixed, 2, 4).unwrap();
    let digits: Vec<u64> = blocks.vectors().iter().map(|v| base.encode(0, v)).collect();
    let index = code.encode(0, &x);
    assert_eq!(index, PackedIndex::pack(&digits, &[16; 4]).unwrap());

    let recon: Vec<Vec<f64>> = digits.iter().map(|&d| base.decode(0, &[d])).collect();
    let mut stream = vec![0.0; 8];
    for (l, v) in recon.iter().enumerate() {
        for t in 0..2 {
            stream[t * 4 + l] = v[t];
        }
    }
    let expected: Vec<f64> = stream
        .chunks(4)
        .flat_map(|c| q.invert(c).unwrap())
        .collect();
    let got = code.decode(0, &[index]);
    for (a, b) in got.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(code.rate(0), base.rate(0));
}

#[test]
fn worst_block_and_mean_are_reported() {
    let book = lloyd_max_train(1.0, 1, 1000, 1e-12).unwrap();
    let base = build_lmmse_decoder_code(&k08(), vec![book.clone(), book], 1).unwrap();
    let code = wrap_code(&base, 16).unwrap();
    let spec = SourceSpec::new(Family::Rademacher, k08(), 3).unwrap();
    let report = per_block_distortion(&code, &spec, 2000).unwrap();
    let direct = evaluate_distortion(&code, &spec, 2000).unwrap();
    for m in 0..2 {
        assert_eq!(report.blocks[m].len(), 16);
        assert!((report.mean_over_blocks(m) - report.overall[m].mean).abs() < 1e-9);
        assert!((report.overall[m].mean - direct.distortion(m)).abs() < 1e-12);
        assert!(report.worst(m).mean >= report.overall[m].mean - 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn wrapping_preserves_squared_error(seed in 0u64..1000, half_b in 1usize..9) {
        let b = 2 * half_b;
        let book = lloyd_max_train(1.0, 1, 1000, 1e-12).unwrap();
        let base = scalar_code_as_multiterminal(vec![book], 1).unwrap();
        let code = wrap_code(&base, b).unwrap();
        let spec = SourceSpec::scalar(Family::Uniform, 1.0, seed).unwrap();
        let x = spec.sample_iid(b).unwrap().row(0).to_vec();
        let mixed = code.mix_and_interleave(&x).unwrap();
        let mixed_err: f64 = mixed
            .vectors()
            .iter()
            .map(|v| {
                let y = base.decode(0, &[base.encode(0, v)]);
                (v[0] - y[0]).powi(2)
            })
            .sum();
        let y = code.decode(0, &[code.encode(0, &x)]);
        let err: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
        prop_assert!((err - mixed_err).abs() < 1e-9 * (1.0 + err));
    }
}
