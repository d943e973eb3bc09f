//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use statrs::function::erf::erf;

use worstcase::codecs::{
    build_lmmse_decoder_code, evaluate_distortion, lloyd_max_train, scalar_code_as_multiterminal,
};
use worstcase::diagnostics::{
    cramer_wold_projection, gaussianity_sweep, ks_distance_to_normal, lindeberg_max_over_rows,
    lindeberg_sum, median_ks, mixed_coordinates, Direction, RowSelection,
};
use worstcase::gaussianizer::{distortion_convergence, wrap_code};
use worstcase::mixing::MixingMatrix;
use worstcase::rectangularizer::{
    boundary_halving, build_robust_code, distortion_inflation, estimate_event_a, RobustOptions,
};
use worstcase::sources::{
    covariance_stderr, empirical_covariance, substream_rng, CovarianceMatrix, Family, SourceBlock,
    SourceSpec,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn k08() -> CovarianceMatrix {
    CovarianceMatrix::parse_inline("1, 0.8; 0.8, 1").unwrap()
}

fn one_bit() -> worstcase::codecs::ScalarCodebook {
    lloyd_max_train(1.0, 1, 1000, 1e-12).unwrap()
}

fn unitarity() -> Outcome {
    let mut worst_gram: f64 = 0.0;
    let mut worst_norm: f64 = 0.0;
    let mut rng = substream_rng(2024, 0);
    for b in [2, 4, 8, 64, 256] {
        let q = MixingMatrix::new(b).unwrap();
        worst_gram = worst_gram.max(q.max_gram_deviation());
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..b).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = q.apply(&x).unwrap();
            let nx: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            worst_norm = worst_norm.max((nx - ny).abs() / nx);
        }
    }
    outcome(
        worst_gram <= 1e-10 && worst_norm <= 1e-9,
        format!("max|QQ^T-I| = {worst_gram:.2e}, max relative norm change = {worst_norm:.2e}"),
    )
}

fn exact_small_cases() -> Outcome {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let q2 = [[r, r], [r, -r]];
    let q4 = [
        [0.5, 0.5, 0.5, 0.5],
        [r, 0.0, -r, 0.0],
        [0.5, -0.5, 0.5, -0.5],
        [0.0, r, 0.0, -r],
    ];
    let mut err: f64 = 0.0;
    let m2 = MixingMatrix::new(2).unwrap();
    let m4 = MixingMatrix::new(4).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            err = err.max((m2.entry(i, j) - q2[i][j]).abs());
        }
    }
    for i in 0..4 {
        for j in 0..4 {
            err = err.max((m4.entry(i, j) - q4[i][j]).abs());
        }
    }
    let odd_rejected = [1, 3, 5, 255]
        .iter()
        .all(|&b| MixingMatrix::new(b).is_err());
    outcome(
        err <= 1e-12 && odd_rejected,
        format!("max entry error = {err:.1e}, odd b rejected = {odd_rejected}"),
    )
}

fn covariance_preservation() -> Outcome {
    let families = [
        Family::Gaussian,
        Family::Rademacher,
        Family::Uniform,
        Family::Laplace,
        Family::two_point(0.2).unwrap(),
    ];
    let base = scalar_code_as_multiterminal(vec![one_bit(), one_bit()], 1).unwrap();
    let code = wrap_code(&base, 256).unwrap();
    let blocks = 100_000usize.div_ceil(256);
    let mut pass = true;
    let mut worst_z: f64 = 0.0;
    for (f, family) in families.into_iter().enumerate() {
        let spec = SourceSpec::new(family, k08(), 300 + f as u64).unwrap();
        let raw = spec.sample_iid(blocks * 256).unwrap();
        let mut rows = vec![Vec::with_capacity(blocks * 256); 2];
        for c in 0..blocks {
            for (m, row) in rows.iter_mut().enumerate() {
                let mixed = code
                    .mix_and_interleave(&raw.row(m)[c * 256..(c + 1) * 256])
                    .unwrap();
                row.extend(mixed.vectors().iter().map(|v| v[0]));
            }
        }
        let block = SourceBlock::from_rows(rows).unwrap();
        let emp = empirical_covariance(&block).unwrap();
        let se = covariance_stderr(&block).unwrap();
        for u in 0..2 {
            for v in 0..2 {
                let z = (emp.get(u, v) - k08().get(u, v)).abs() / se[u * 2 + v];
                worst_z = worst_z.max(z);
                pass &= z <= 3.0;
            }
        }
    }
    outcome(
        pass,
        format!(
            "5 families, b=256, {} samples: worst |K_hat-K|/stderr = {worst_z:.2}",
            blocks * 256
        ),
    )
}

fn ks_of(spec: &SourceSpec, b: usize, samples: usize) -> f64 {
    let block = mixed_coordinates(spec, b, RowSelection::Cycle, samples).unwrap();
    let p = cramer_wold_projection(&block, &[1.0], spec.covariance()).unwrap();
    ks_distance_to_normal(&p).unwrap()
}

fn gaussianization() -> Outcome {
    let spec = SourceSpec::scalar(Family::Rademacher, 1.0, 41).unwrap();
    let oracle = std_normal_cdf(1.0) - 0.5;
    let raw = ks_of(&spec, 1, 100_000);
    let mixed = ks_of(&spec, 256, 100_000);
    let b_list = [4, 16, 64, 256];
    let dirs = [Direction {
        id: "e1".into(),
        t: vec![1.0],
    }];
    let rows = gaussianity_sweep(&spec, &b_list, &dirs, 1_000_000, &[1, 2, 3, 4, 5]).unwrap();
    let medians: Vec<f64> = b_list
        .iter()
        .map(|&b| median_ks(&rows, b, "e1").unwrap())
        .collect();
    let monotone = medians.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        (raw - 0.3413).abs() <= 0.01 && mixed <= 0.02 && monotone,
        format!(
            "raw KS = {raw:.4} (analytic {oracle:.4}), b=256 KS = {mixed:.4}, median KS over 5 seeds \
             at 1e6 samples for b=4,16,64,256 = {medians:.4?}"
        ),
    )
}

fn lindeberg() -> Outcome {
    let mut zeros = Vec::new();
    for (family, eps) in [
        (Family::Rademacher, 0.1),
        (Family::Uniform, 0.2),
        (Family::two_point(0.2).unwrap(), 0.2),
    ] {
        let spec = SourceSpec::scalar(family, 1.0, 51).unwrap();
        let s = family.support_bound().unwrap();
        let dead = eps * 16.0 > std::f64::consts::SQRT_2 * s;
        let row1 = lindeberg_sum(&spec, &[1.0], 256, 1, eps, 100_000)
            .unwrap()
            .value;
        let max = lindeberg_max_over_rows(&spec, &[1.0], 256, eps, 20_000)
            .unwrap()
            .value;
        zeros.push((family.to_string(), dead && row1 == 0.0 && max == 0.0));
    }
    let gauss = SourceSpec::scalar(Family::Gaussian, 1.0, 52).unwrap();
    let mut fixed = Vec::new();
    let mut maxed = Vec::new();
    for b in [16, 64, 256] {
        fixed.push(
            lindeberg_sum(&gauss, &[1.0], b, 1, 0.1, 100_000)
                .unwrap()
                .value,
        );
        maxed.push(
            lindeberg_max_over_rows(&gauss, &[1.0], b, 0.1, 20_000)
                .unwrap()
                .value,
        );
    }
    let decreasing = |v: &[f64]| v.iter().all(|&x| x > 0.0) && v.windows(2).all(|w| w[1] < w[0]);
    let all_zero = zeros.iter().all(|(_, z)| *z);
    outcome(
        all_zero && decreasing(&fixed) && decreasing(&maxed),
        format!(
            "exact zero at b=256 {zeros:?}; gaussian eps=0.1 b=16,64,256 row 1 = {fixed:.4?}, max over rows = {maxed:.4?}"
        ),
    )
}

fn wrapped_distortion() -> Outcome {
    let book = one_bit();
    let oracle_level = (2.0 / std::f64::consts::PI).sqrt();
    let oracle_mse = 1.0 - 2.0 / std::f64::consts::PI;
    let trained_mse = book.gaussian_mse(1.0).unwrap();
    let level_ok = (book.level(1) - oracle_level).abs() <= 1e-6;
    let ref_ok = (trained_mse - 0.3634).abs() <= 0.001 && (oracle_mse - 0.3634).abs() <= 0.001;

    let base = scalar_code_as_multiterminal(vec![book.clone()], 1).unwrap();
    let wrapped = wrap_code(&base, 256).unwrap();
    let mut scalar = Vec::new();
    for (i, family) in [Family::Rademacher, Family::Uniform, Family::Laplace]
        .into_iter()
        .enumerate()
    {
        let spec = SourceSpec::scalar(family, 1.0, 61 + i as u64).unwrap();
        let d = evaluate_distortion(&wrapped, &spec, 100_000)
            .unwrap()
            .distortion(0);
        scalar.push(d);
    }
    let scalar_ok = scalar.iter().all(|d| (d - 0.3634).abs() <= 0.02);

    let lmmse = build_lmmse_decoder_code(&k08(), vec![book.clone(), book], 1).unwrap();
    let reference_spec = SourceSpec::new(Family::Gaussian, k08(), 70).unwrap();
    let reference = evaluate_distortion(&lmmse, &reference_spec, 100_000).unwrap();
    let wrapped = wrap_code(&lmmse, 256).unwrap();
    let mut joint = Vec::new();
    let mut joint_ok = true;
    for (i, family) in [Family::Rademacher, Family::Uniform, Family::Laplace]
        .into_iter()
        .enumerate()
    {
        let spec = SourceSpec::new(family, k08(), 71 + i as u64).unwrap();
        let est = evaluate_distortion(&wrapped, &spec, 20_000).unwrap();
        for m in 0..2 {
            joint_ok &= est.distortion(m) <= reference.distortion(m) + 0.02;
        }
        joint.push([est.distortion(0), est.distortion(1)]);
    }
    outcome(
        level_ok && ref_ok && scalar_ok && joint_ok,
        format!(
            "1-bit level {:.6} (oracle {oracle_level:.6}), MSE {trained_mse:.5} (oracle {oracle_mse:.5}); \
             b=256 rademacher/uniform/laplace D = {scalar:.4?}; k=2 LMMSE ref = [{:.4}, {:.4}], wrapped = {joint:.4?}",
            wrapped.base().codebooks()[0].level(1),
            reference.distortion(0),
            reference.distortion(1),
        ),
    )
}

fn gaussian_fixed_point() -> Outcome {
    let book = one_bit();
    let b_list = [1, 4, 16, 64, 256];
    let mut worst: f64 = 0.0;
    let scalar = scalar_code_as_multiterminal(vec![book.clone()], 1).unwrap();
    let spec = SourceSpec::scalar(Family::Gaussian, 1.0, 80).unwrap();
    for r in distortion_convergence(&scalar, &spec, &b_list, 50_000).unwrap() {
        worst = worst.max(r.wrapped().z_distance(&r.reference()));
    }
    let lmmse = build_lmmse_decoder_code(&k08(), vec![book.clone(), book], 1).unwrap();
    let spec = SourceSpec::new(Family::Gaussian, k08(), 81).unwrap();
    for r in distortion_convergence(&lmmse, &spec, &b_list, 20_000).unwrap() {
        worst = worst.max(r.wrapped().z_distance(&r.reference()));
    }
    outcome(
        worst <= 3.0,
        format!(
            "k=1 and k=2 LMMSE, b in {b_list:?}: worst |D_wrapped - D_ref| = {worst:.2} stderr"
        ),
    )
}

fn shannon_lower_bound() -> Outcome {
    let spec = SourceSpec::scalar(Family::Gaussian, 1.0, 90).unwrap();
    let mut pass = true;
    let mut lines = Vec::new();
    for rate in 1..=4u32 {
        for n in [1, 2] {
            let code = scalar_code_as_multiterminal(
                vec![lloyd_max_train(1.0, rate, 1000, 1e-12).unwrap()],
                n,
            )
            .unwrap();
            let est = evaluate_distortion(&code, &spec, 100_000).unwrap();
            let bound = 2f64.powi(-2 * rate as i32);
            pass &= est.distortion(0) >= bound - 3.0 * est.stderr(0);
            lines.push(format!(
                "R={rate} n={n}: {:.4} >= {bound:.4}",
                est.distortion(0)
            ));
        }
    }
    outcome(pass, lines.join(", "))
}

fn erasure_construction() -> Outcome {
    let book = one_bit();
    let base = build_lmmse_decoder_code(&k08(), vec![book.clone(), book], 2).unwrap();
    let spec = SourceSpec::new(Family::Gaussian, k08(), 100).unwrap();
    let delta = 1e-4;
    let options = RobustOptions {
        delta,
        epsilon_prime: 1.0,
        trials: 1_000_000,
        ..Default::default()
    };
    let robust = match build_robust_code(&base, &spec, &options) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("construction failed: {e}")),
    };
    let a = estimate_event_a(&robust, &spec, 1_000_000).unwrap();
    let a_ok = a.probability.mean <= a.union_bound + 3.0 * a.probability.stderr;
    let inflation = distortion_inflation(&robust, &spec, 1_000_000).unwrap();
    let inf_ok = inflation.iter().all(|i| i.inflation.mean <= i.bound);
    let quadrants = (0..2).all(|m| robust.partition(m).rects().len() == 4);
    let halving = boundary_halving(robust.partition(0), &spec, 0, 0.02, 1_000_000).unwrap();
    let half_ok = halving.mean.abs() <= 3.0 * halving.stderr;
    outcome(
        a_ok && inf_ok && quadrants && half_ok,
        format!(
            "delta=1e-4, n=2: Pr[A] = {:.2e} +- {:.1e} (bound {:.1e}); inflation = [{:.2e}, {:.2e}] \
             (bound {:.3}); quadrant cells = {quadrants}; f(0.02) - 2 f(0.01) = {:.1e} +- {:.1e}",
            a.probability.mean,
            a.probability.stderr,
            a.union_bound,
            inflation[0].inflation.mean,
            inflation[1].inflation.mean,
            inflation[0].bound,
            halving.mean,
            halving.stderr,
        ),
    )
}

fn run_cli(config: &Path, out: &Path) -> Option<i32> {
    Command::new(env!("CARGO_BIN_EXE_worstcase"))
        .args(["run", "--config"])
        .arg(config)
        .args(["--seed", "7", "--out"])
        .arg(out)
        .output()
        .ok()
        .and_then(|o| o.status.code())
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .map(|p| {
                    (
                        p.file_name().unwrap().to_string_lossy().into_owned(),
                        std::fs::read(&p).unwrap(),
                    )
                })
                .collect()
        })
        .unwrap_or_default();
    files.sort();
    files
}

fn reproducibility() -> Outcome {
    let config: PathBuf = [
        env!("CARGO_MANIFEST_DIR"),
        "..",
        "..",
        "configs",
        "worstcase.cfg",
    ]
    .iter()
    .collect();
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let codes = (run_cli(&config, &a), run_cli(&config, &b));
    let (fa, fb) = (csv_files(&a), csv_files(&b));
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    outcome(
        codes == (Some(0), Some(0)) && !fa.is_empty() && fa == fb,
        format!(
            "exit codes {codes:?}; {} CSVs {names:?} byte-identical = {}",
            fa.len(),
            fa == fb
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("unitarity", unitarity),
        ("exact small cases", exact_small_cases),
        (
            "covariance preservation under mixing",
            covariance_preservation,
        ),
        ("gaussianization", gaussianization),
        ("lindeberg exact zero", lindeberg),
        ("wrapped distortion at desk scale", wrapped_distortion),
        ("gaussian fixed point", gaussian_fixed_point),
        ("shannon lower bound sanity", shannon_lower_bound),
        ("erasure construction bookkeeping", erasure_construction),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let result = run();
        let status = if result.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!result.pass);
        println!(
            "{status} {name} ({:.1}s): {}",
            start.elapsed().as_secs_f64(),
            result.detail
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
