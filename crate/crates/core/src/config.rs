//! Experiment configuration: line-based `key = value` with `#` comments.
//!
//! ```text
//! k = 2
//! rates = 1, 1
//! family = rademacher
//! K = 1, 0.8; 0.8, 1
//! b_list = 4, 16, 64, 256
//! trials = 20000
//! seed = 7
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gaussianizer::validate_b_list;
use crate::sources::{CovarianceMatrix, Family, SourceSpec};

/// Joint decoder used by the base code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderKind {
    PerComponent,
    Lmmse,
}

impl std::str::FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lmmse" => Ok(Self::Lmmse),
            "per-component" | "percomponent" | "independent" => Ok(Self::PerComponent),
            other => Err(Error::invalid(format!("unknown decoder `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub k: usize,
    /// Base-code blocklength.
    pub n: usize,
    /// Bits per symbol for each encoder.
    pub rates: Vec<u32>,
    pub family: Family,
    pub cov: CovarianceMatrix,
    pub b_list: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    /// Rectangularization budget; the audit is skipped when absent.
    pub delta: Option<f64>,
    /// Rate slack and per-symbol distortion slack for the audit.
    pub epsilon: f64,
    /// Allowed final gap between wrapped and reference distortion.
    pub tolerance: f64,
    pub decoder: DecoderKind,
    pub gauss_samples: usize,
    pub gauss_seeds: usize,
    /// Samples for each rectangularizer estimate.
    pub audit_trials: usize,
    pub output: PathBuf,
}

impl ExperimentConfig {
    pub fn source_spec(&self) -> Result<SourceSpec> {
        SourceSpec::new(self.family, self.cov.clone(), self.seed)
    }

    /// Parses config text. Relative `K_file` and `output` paths resolve
    /// against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut map: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim().to_string();
            if map
                .insert(key.clone(), (i + 1, value.trim().to_string()))
                .is_some()
            {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        let mut cfg = Fields { map };
        let k: Option<usize> = cfg.opt("k")?;
        let cov = match (cfg.take("K"), cfg.take("K_file")) {
            (Some(_), Some((line, _))) => {
                return Err(Error::Parse {
                    line,
                    message: "give either K or K_file, not both".into(),
                })
            }
            (Some((line, v)), None) => {
                CovarianceMatrix::parse_inline(&v).map_err(|e| at(line, e))?
            }
            (None, Some((line, v))) => {
                let text =
                    std::fs::read_to_string(base_dir.join(&v)).map_err(|e| Error::Parse {
                        line,
                        message: format!("cannot read K_file `{v}`: {e}"),
                    })?;
                CovarianceMatrix::from_text(&text).map_err(|e| at(line, e))?
            }
            (None, None) => CovarianceMatrix::identity(k.unwrap_or(1)),
        };
        let k = k.unwrap_or(cov.k());
        if k != cov.k() {
            return Err(Error::invalid(format!(
                "k = {k} but the covariance matrix is {}x{}",
                cov.k(),
                cov.k()
            )));
        }
        let mut rates: Vec<u32> = cfg.list("rates")?.unwrap_or_else(|| vec![1]);
        if rates.len() == 1 {
            rates = vec![rates[0]; k];
        }
        if rates.len() != k {
            return Err(Error::invalid(format!(
                "rates has {} entries, expected {k}",
                rates.len()
            )));
        }
        let family: Family = cfg.opt("family")?.unwrap_or(Family::Gaussian);
        let b_list: Vec<usize> = cfg.list("b_list")?.unwrap_or_else(|| vec![4, 16, 64, 256]);
        validate_b_list(&b_list)?;
        let decoder = cfg.opt("decoder")?.unwrap_or(if k > 1 {
            DecoderKind::Lmmse
        } else {
            DecoderKind::PerComponent
        });
        let out = ExperimentConfig {
            k,
            n: cfg.opt("n")?.unwrap_or(1),
            rates,
            family,
            cov,
            b_list,
            trials: cfg.opt("trials")?.unwrap_or(20_000),
            seed: cfg.opt("seed")?.unwrap_or(0),
            delta: cfg.opt("delta")?,
            epsilon: cfg.opt("epsilon")?.unwrap_or(0.1),
            tolerance: cfg.opt("tolerance")?.unwrap_or(0.02),
            decoder,
            gauss_samples: cfg.opt("gauss_samples")?.unwrap_or(100_000),
            gauss_seeds: cfg.opt("gauss_seeds")?.unwrap_or(1),
            audit_trials: cfg.opt("audit_trials")?.unwrap_or(1_000_000),
            output: base_dir.join(
                cfg.take("output")
                    .map(|(_, v)| v)
                    .unwrap_or_else(|| "results".into()),
            ),
        };
        if let Some((key, (line, _))) = cfg.map.into_iter().next() {
            return Err(Error::Parse {
                line,
                message: format!("unknown key `{key}`"),
            });
        }
        if out.n == 0 || out.trials == 0 || out.gauss_seeds == 0 {
            return Err(Error::invalid("n, trials and gauss_seeds must be positive"));
        }
        if let Some(d) = out.delta {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::invalid(format!("delta must lie in (0, 1), got {d}")));
            }
        }
        if !(out.epsilon > 0.0 && out.tolerance > 0.0) {
            return Err(Error::invalid("epsilon and tolerance must be positive"));
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

fn at(line: usize, e: Error) -> Error {
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

struct Fields {
    map: BTreeMap<String, (usize, String)>,
}

impl Fields {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn opt<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.take(key)
            .map(|(line, v)| {
                v.parse().map_err(|e: T::Err| Error::Parse {
                    line,
                    message: format!("bad value for `{key}`: {e}"),
                })
            })
            .transpose()
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        self.take(key)
            .map(|(line, v)| {
                v.split(',')
                    .map(|s| {
                        s.trim().parse().map_err(|e: T::Err| Error::Parse {
                            line,
                            message: format!("bad entry `{}` in `{key}`: {e}", s.trim()),
                        })
                    })
                    .collect()
            })
            .transpose()
    }
}
