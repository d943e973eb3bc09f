use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use worstcase::codecs::{evaluate_distortion, MultiterminalCode};
use worstcase::config::{DecoderKind, ExperimentConfig};
use worstcase::diagnostics::{
    default_directions, gaussianity_csv, gaussianity_sweep, lindeberg_max_over_rows, lindeberg_sum,
    Direction,
};
use worstcase::experiment::{audit_csv, build_base_code, rect_audit, run_experiment, summary_csv};
use worstcase::gaussianizer::{
    convergence_csv, distortion_convergence, validate_b_list, wrap_code,
};
use worstcase::mixing::MixingMatrix;
use worstcase::sources::{CovarianceMatrix, Family, SourceSpec};
use worstcase::Result;

#[derive(Parser)]
#[command(
    name = "worstcase",
    version,
    about = "Gaussianized multiterminal source code simulations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Master RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo trials.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Output directory; CSV goes to stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SourceArgs {
    /// gaussian, rademacher, uniform, laplace or two-point[:p].
    #[arg(long, default_value = "gaussian")]
    family: Family,
    /// Covariance rows separated by `;`, e.g. "1, 0.8; 0.8, 1".
    #[arg(long = "cov", default_value = "1")]
    cov: String,
}

impl SourceArgs {
    fn spec(&self, seed: u64) -> Result<SourceSpec> {
        SourceSpec::new(
            self.family,
            CovarianceMatrix::parse_inline(&self.cov)?,
            seed,
        )
    }
}

#[derive(Args, Clone)]
struct CodeArgs {
    /// Bits per symbol, one value or one per encoder.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    rates: Vec<u32>,
    /// Base-code blocklength.
    #[arg(long, default_value_t = 1)]
    n: usize,
    /// lmmse or per-component.
    #[arg(long, default_value = "per-component")]
    decoder: DecoderKind,
}

#[derive(Subcommand)]
enum Command {
    /// Print the b x b mixing matrix.
    GenMatrix {
        #[arg(long)]
        b: usize,
    },
    /// Distortion of the base code, or of its wrapping when --b is given.
    Distortion {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        code: CodeArgs,
        #[arg(long)]
        b: Option<usize>,
    },
    /// Wrapped distortion across mixing lengths against the Gaussian reference.
    SweepB {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        code: CodeArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,4,16,64,256")]
        b_list: Vec<usize>,
    },
    /// KS distance of mixed-coordinate projections to the normal.
    Gaussianity {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,4,16,64,256")]
        b_list: Vec<usize>,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
    /// Lindeberg sums per mixing length.
    Lindeberg {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, value_delimiter = ',', default_value = "16,64,256")]
        b_list: Vec<usize>,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        /// Projection direction; defaults to all-ones.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        t: Option<Vec<f64>>,
        /// Row of Q; the maximum over rows when omitted.
        #[arg(long)]
        row: Option<usize>,
    },
    /// Rectangularize the base code and audit the erasure construction.
    RectAudit {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        code: CodeArgs,
        #[arg(long, default_value_t = 1e-4)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
    },
    /// Run a full experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn emit(common: &Common, name: &str, text: &str) -> Result<()> {
    match &common.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(name), text)?;
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn base_code(source: &SourceArgs, code: &CodeArgs) -> Result<worstcase::codecs::ScalarProductCode> {
    let cov = CovarianceMatrix::parse_inline(&source.cov)?;
    let rates = if code.rates.len() == 1 {
        vec![code.rates[0]; cov.k()]
    } else {
        code.rates.clone()
    };
    build_base_code(&cov, &rates, code.n, code.decoder)
}

/// Ok(true) means every check passed.
fn execute(cli: &Cli) -> Result<bool> {
    let common = &cli.common;
    let seed = common.seed.unwrap_or(0);
    let trials = common.trials;
    match &cli.command {
        Command::GenMatrix { b } => {
            let q = MixingMatrix::new(*b)?;
            let mut text = String::from("row");
            (0..*b).for_each(|j| text.push_str(&format!(",q{j}")));
            text.push('\n');
            for i in 0..*b {
                text.push_str(&i.to_string());
                q.row(i)
                    .iter()
                    .for_each(|v| text.push_str(&format!(",{v}")));
                text.push('\n');
            }
            emit(common, "matrix.csv", &text)?;
        }
        Command::Distortion { source, code, b } => {
            let spec = source.spec(seed)?;
            let base = base_code(source, code)?;
            let trials = trials.unwrap_or(20_000);
            let (est, rates) = match b {
                Some(b) => {
                    let wrapped = wrap_code(&base, *b)?;
                    let rates: Vec<f64> =
                        (0..base.num_encoders()).map(|m| wrapped.rate(m)).collect();
                    (evaluate_distortion(&wrapped, &spec, trials)?, rates)
                }
                None => {
                    let rates: Vec<f64> = (0..base.num_encoders()).map(|m| base.rate(m)).collect();
                    (evaluate_distortion(&base, &spec, trials)?, rates)
                }
            };
            let mut text = String::from("encoder,rate,distortion,stderr,trials\n");
            for (m, rate) in rates.iter().enumerate() {
                text.push_str(&format!(
                    "{m},{rate},{},{},{}\n",
                    est.distortion(m),
                    est.stderr(m),
                    est.trials
                ));
            }
            emit(common, "distortion.csv", &text)?;
        }
        Command::SweepB {
            source,
            code,
            b_list,
        } => {
            let spec = source.spec(seed)?;
            let base = base_code(source, code)?;
            let rows = distortion_convergence(&base, &spec, b_list, trials.unwrap_or(20_000))?;
            emit(common, "convergence.csv", &convergence_csv(&rows))?;
        }
        Command::Gaussianity {
            source,
            b_list,
            seeds,
        } => {
            let spec = source.spec(seed)?;
            let seeds: Vec<u64> = (0..*seeds as u64).map(|i| seed.wrapping_add(i)).collect();
            let dirs = default_directions(spec.k());
            let rows = gaussianity_sweep(&spec, b_list, &dirs, trials.unwrap_or(100_000), &seeds)?;
            emit(common, "gaussianity.csv", &gaussianity_csv(&rows))?;
        }
        Command::Lindeberg {
            source,
            b_list,
            epsilon,
            t,
            row,
        } => {
            let spec = source.spec(seed)?;
            validate_b_list(b_list)?;
            let dir = match t {
                Some(t) => Direction {
                    id: "custom".into(),
                    t: t.clone(),
                },
                None => default_directions(spec.k())
                    .into_iter()
                    .find(|d| d.id == "ones" || spec.k() == 1)
                    .expect("non-empty"),
            };
            let trials = trials.unwrap_or(100_000);
            let mut text = String::from("b,row,epsilon,value,s_b2\n");
            for &b in b_list {
                let v = match row {
                    Some(r) => lindeberg_sum(&spec, &dir.t, b, *r, *epsilon, trials)?,
                    None => lindeberg_max_over_rows(&spec, &dir.t, b, *epsilon, trials)?,
                };
                text.push_str(&format!("{b},{},{epsilon},{},{}\n", v.row, v.value, v.s_b2));
            }
            emit(common, "lindeberg.csv", &text)?;
        }
        Command::RectAudit {
            source,
            code,
            delta,
            epsilon,
        } => {
            let spec = source.spec(seed)?;
            let base = base_code(source, code)?;
            let (rows, checks) =
                rect_audit(&base, &spec, *delta, *epsilon, trials.unwrap_or(1_000_000))?;
            emit(common, "rect_audit.csv", &audit_csv(&rows))?;
            if common.out.is_some() {
                emit(common, "summary.csv", &summary_csv(&checks))?;
            }
            return Ok(checks.iter().all(|c| c.pass));
        }
        Command::Run { config } => {
            let mut cfg = ExperimentConfig::load(config)?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(dir) = &common.out {
                cfg.output = dir.clone();
            }
            let report = run_experiment(&cfg)?;
            std::io::stdout().write_all(summary_csv(&report.checks).as_bytes())?;
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
