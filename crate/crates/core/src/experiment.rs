//! End-to-end experiment: train base codes, measure wrapped distortion across
//! mixing lengths, check Gaussianity, optionally audit the rectangularized
//! code, and write CSV reports.

use std::path::PathBuf;

use crate::codecs::{
    build_lmmse_decoder_code, lloyd_max_train, scalar_code_as_multiterminal, MultiterminalCode,
    ScalarCodebook, ScalarProductCode,
};
use crate::config::{DecoderKind, ExperimentConfig};
use crate::diagnostics::{
    default_directions, gaussianity_csv, gaussianity_sweep, ks_critical_value, median_ks,
};
use crate::error::{Error, Result};
use crate::gaussianizer::{convergence_csv, distortion_convergence, ConvergenceRow};
use crate::montecarlo::Estimate;
use crate::rectangularizer::{
    boundary_halving, boundary_mass_scan, build_robust_code, distortion_inflation,
    estimate_event_a, RobustOptions,
};
use crate::sources::{CovarianceMatrix, SourceSpec};

/// Scalar Lloyd-Max codebooks for `N(0, K_mm)` at the given rates, combined
/// into a blocklength-`n` product code.
pub fn build_base_code(
    cov: &CovarianceMatrix,
    rates: &[u32],
    n: usize,
    decoder: DecoderKind,
) -> Result<ScalarProductCode> {
    if rates.len() != cov.k() {
        return Err(Error::LengthMismatch {
            expected: cov.k(),
            actual: rates.len(),
        });
    }
    let books = rates
        .iter()
        .enumerate()
        .map(|(m, &r)| {
            if r == 0 {
                Ok(ScalarCodebook::zero())
            } else {
                lloyd_max_train(cov.get(m, m), r, 1000, 1e-12)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    match decoder {
        DecoderKind::PerComponent => scalar_code_as_multiterminal(books, n),
        DecoderKind::Lmmse => build_lmmse_decoder_code(cov, books, n),
    }
}

/// One pass/fail line of the summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            pass: value <= threshold,
        }
    }
}

pub const SUMMARY_HEADER: &str = "check,value,threshold,pass";

pub fn summary_csv(checks: &[Check]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for c in checks {
        out.push_str(&format!(
            "{},{},{},{}\n",
            c.name, c.value, c.threshold, c.pass
        ));
    }
    out
}

/// One line of the rectangularizer audit.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub item: String,
    pub encoder: String,
    pub value: f64,
    pub stderr: f64,
    /// NaN when the item has no bound.
    pub bound: f64,
}

pub const AUDIT_HEADER: &str = "item,encoder,value,stderr,bound";

pub fn audit_csv(rows: &[AuditRow]) -> String {
    let mut out = format!("{AUDIT_HEADER}\n");
    for r in rows {
        let bound = if r.bound.is_nan() {
            String::new()
        } else {
            r.bound.to_string()
        };
        out.push_str(&format!(
            "{},{},{},{},{bound}\n",
            r.item, r.encoder, r.value, r.stderr
        ));
    }
    out
}

/// Boundary-mass radii used by the audit, descending.
pub const AUDIT_ETAS: [f64; 3] = [0.04, 0.02, 0.01];

/// Rectangularizes `base` at budget `delta` and checks the event-A union
/// bound, the distortion-inflation bound, the rate slack and linear boundary
/// mass. Returns the audit table and its checks.
pub fn rect_audit(
    base: &ScalarProductCode,
    spec: &SourceSpec,
    delta: f64,
    epsilon: f64,
    trials: usize,
) -> Result<(Vec<AuditRow>, Vec<Check>)> {
    let options = RobustOptions {
        delta,
        epsilon_prime: epsilon,
        trials,
        ..Default::default()
    };
    let robust = build_robust_code(base, spec, &options)?;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let row = |item: &str, encoder: String, e: Estimate, bound: f64| AuditRow {
        item: item.into(),
        encoder,
        value: e.mean,
        stderr: e.stderr,
        bound,
    };

    let a = estimate_event_a(&robust, spec, trials)?;
    rows.push(row("event_a", "all".into(), a.probability, a.union_bound));
    checks.push(Check::at_most(
        "event_a",
        a.probability.mean,
        a.union_bound + 3.0 * a.probability.stderr,
    ));

    for (m, inf) in distortion_inflation(&robust, spec, trials)?
        .into_iter()
        .enumerate()
    {
        rows.push(row("base_distortion", m.to_string(), inf.base, f64::NAN));
        rows.push(row(
            "robust_distortion",
            m.to_string(),
            inf.robust,
            f64::NAN,
        ));
        rows.push(row("inflation", m.to_string(), inf.inflation, inf.bound));
        checks.push(Check::at_most(
            format!("inflation_e{m}"),
            inf.inflation.mean,
            inf.bound,
        ));
    }

    let slack = robust.rate_slack_holds(epsilon);
    checks.push(Check {
        name: "rate_slack".into(),
        value: epsilon,
        threshold: epsilon,
        pass: slack,
    });

    for m in 0..base.num_encoders() {
        let partition = robust.partition(m);
        for r in boundary_mass_scan(partition, spec, m, &AUDIT_ETAS, trials)? {
            rows.push(row(
                &format!("boundary_mass_eta_{}", r.eta),
                m.to_string(),
                r.fraction,
                f64::NAN,
            ));
        }
        let h = boundary_halving(partition, spec, m, AUDIT_ETAS[1], trials)?;
        rows.push(row("boundary_halving", m.to_string(), h, 0.0));
        checks.push(Check::at_most(
            format!("boundary_halving_e{m}"),
            h.mean.abs(),
            3.0 * h.stderr,
        ));
    }
    Ok((rows, checks))
}

/// Everything [`run_experiment`] produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub convergence: Vec<ConvergenceRow>,
    pub gaussianity: Vec<crate::diagnostics::GaussianityRow>,
    pub audit: Vec<AuditRow>,
    pub checks: Vec<Check>,
    pub files: Vec<PathBuf>,
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Runs the configured experiment and writes `convergence.csv`,
/// `gaussianity.csv`, `summary.csv` and, when `delta` is set,
/// `rect_audit.csv` into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let spec = cfg.source_spec()?;
    let base = build_base_code(&cfg.cov, &cfg.rates, cfg.n, cfg.decoder)?;

    let convergence = distortion_convergence(&base, &spec, &cfg.b_list, cfg.trials)?;
    let mut checks = Vec::new();
    let b_max = *cfg.b_list.last().expect("validated non-empty");
    for r in convergence.iter().filter(|r| r.b == b_max) {
        checks.push(Check::at_most(
            format!("gap_b{}_e{}", r.b, r.encoder),
            r.gap(),
            cfg.tolerance,
        ));
    }
    if cfg.family.is_gaussian() {
        for r in &convergence {
            checks.push(Check::at_most(
                format!("fixed_point_b{}_e{}", r.b, r.encoder),
                r.wrapped().z_distance(&r.reference()),
                3.0,
            ));
        }
    }

    let seeds: Vec<u64> = (0..cfg.gauss_seeds as u64)
        .map(|i| cfg.seed.wrapping_add(i))
        .collect();
    let directions = default_directions(cfg.k);
    let gaussianity =
        gaussianity_sweep(&spec, &cfg.b_list, &directions, cfg.gauss_samples, &seeds)?;
    if !cfg.family.is_gaussian() && cfg.gauss_seeds > 1 {
        for d in &directions {
            let medians: Vec<f64> = cfg
                .b_list
                .iter()
                .filter_map(|&b| median_ks(&gaussianity, b, &d.id))
                .collect();
            // a rise only counts while the later median is still distinguishable from normal
            let critical = ks_critical_value(cfg.gauss_samples);
            let worst_rise = medians
                .windows(2)
                .filter(|w| w[1] > critical)
                .map(|w| w[1] - w[0])
                .fold(0.0, f64::max);
            checks.push(Check::at_most(
                format!("ks_nonincreasing_{}", d.id),
                worst_rise,
                0.0,
            ));
        }
    }

    let audit = match cfg.delta {
        Some(delta) => {
            let (rows, audit_checks) =
                rect_audit(&base, &spec, delta, cfg.epsilon, cfg.audit_trials)?;
            checks.extend(audit_checks);
            rows
        }
        None => Vec::new(),
    };

    std::fs::create_dir_all(&cfg.output)?;
    let mut files = Vec::new();
    let mut write = |name: &str, text: String| -> Result<()> {
        let path = cfg.output.join(name);
        std::fs::write(&path, text)?;
        files.push(path);
        Ok(())
    };
    write("convergence.csv", convergence_csv(&convergence))?;
    write("gaussianity.csv", gaussianity_csv(&gaussianity))?;
    if cfg.delta.is_some() {
        write("rect_audit.csv", audit_csv(&audit))?;
    }
    write("summary.csv", summary_csv(&checks))?;
    Ok(ExperimentReport {
        convergence,
        gaussianity,
        audit,
        checks,
        files,
    })
}
