//! Run configuration, read from a TOML file.
//!
//! Unknown keys are rejected and every value is validated before any
//! computation starts. See the README for the full key list.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::drivers::affine::AffineConfig;
use crate::drivers::laplace::BieConfig;
use crate::drivers::rte::{GaussianSign, RteConfig};
use crate::error::{RbError, Result};
use crate::offline::Thresholds;
use crate::oracle::RhsMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemKind {
    LaplaceBie,
    Rte,
    SyntheticAffine,
}

impl ProblemKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "laplace_bie" => Ok(Self::LaplaceBie),
            "rte" => Ok(Self::Rte),
            "synthetic_affine" => Ok(Self::SyntheticAffine),
            other => Err(RbError::Config(format!(
                "unknown problem \"{other}\"; expected laplace_bie, rte or synthetic_affine"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::LaplaceBie => "laplace_bie",
            Self::Rte => "rte",
            Self::SyntheticAffine => "synthetic_affine",
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    run: RawRun,
    laplace_bie: Option<RawBie>,
    rte: Option<RawRte>,
    synthetic_affine: Option<RawAffine>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    problem: String,
    epsilon: OneOrMany,
    eta: Option<f64>,
    seed: Option<u64>,
    enrich: Option<bool>,
    append_solutions: Option<bool>,
    operator_columns: Option<usize>,
    rhs_mode: Option<String>,
    jobs: Option<usize>,
    output_dir: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBie {
    kappa: Option<f64>,
    x0: Option<[f64; 2]>,
    radial_nodes: Option<usize>,
    n_fine: Option<usize>,
    n_coarse: Option<usize>,
    samples: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRte {
    n_fine: Option<usize>,
    n_coarse: Option<usize>,
    quadrature_order: Option<usize>,
    amplitudes: Option<Vec<f64>>,
    widths: Option<Vec<f64>>,
    grid_n: Option<usize>,
    gaussian_sign: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAffine {
    n: Option<usize>,
    rank: Option<usize>,
    samples: Option<usize>,
}

/// A validated run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub epsilons: Vec<f64>,
    pub eta: f64,
    pub seed: u64,
    pub enrich: bool,
    pub append_solutions: bool,
    pub operator_columns: Option<usize>,
    pub rhs_mode: Option<RhsMode>,
    pub jobs: Option<usize>,
    pub output_dir: PathBuf,
    pub laplace: BieConfig,
    pub rte: RteConfig,
    pub affine: AffineConfig,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RbError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawFile = toml::from_str(text).map_err(|e| RbError::Config(e.to_string()))?;
        let run = raw.run;
        let problem = ProblemKind::parse(&run.problem)?;
        let epsilons = match run.epsilon {
            OneOrMany::One(e) => vec![e],
            OneOrMany::Many(v) => v,
        };
        let rhs_mode = match run.rhs_mode.as_deref() {
            None => None,
            Some("direct") => Some(RhsMode::Direct),
            Some("interpolated") => Some(RhsMode::Interpolated),
            Some(other) => {
                return Err(RbError::Config(format!(
                    "rhs_mode must be \"direct\" or \"interpolated\", got \"{other}\""
                )))
            }
        };

        let mut laplace = BieConfig::default();
        if let Some(b) = raw.laplace_bie {
            set(&mut laplace.kappa, b.kappa);
            set(&mut laplace.x0, b.x0);
            set(&mut laplace.radial_nodes, b.radial_nodes);
            set(&mut laplace.n_fine, b.n_fine);
            set(&mut laplace.n_coarse, b.n_coarse);
            set(&mut laplace.samples, b.samples);
        }
        let mut rte = RteConfig::default();
        if let Some(r) = raw.rte {
            set(&mut rte.n_fine, r.n_fine);
            set(&mut rte.n_coarse, r.n_coarse);
            set(&mut rte.quadrature_order, r.quadrature_order);
            set(&mut rte.amplitudes, r.amplitudes);
            set(&mut rte.widths, r.widths);
            set(&mut rte.grid_n, r.grid_n);
            if let Some(s) = r.gaussian_sign {
                rte.gaussian_sign = GaussianSign::parse(&s)?;
            }
        }
        let mut affine = AffineConfig::default();
        if let Some(a) = raw.synthetic_affine {
            set(&mut affine.n, a.n);
            set(&mut affine.rank, a.rank);
            set(&mut affine.samples, a.samples);
        }

        let seed = run.seed.unwrap_or(0);
        laplace.seed = seed;
        let cfg = Self {
            problem,
            epsilons,
            eta: run.eta.unwrap_or(1.0),
            seed,
            enrich: run.enrich.unwrap_or(true),
            append_solutions: run.append_solutions.unwrap_or(true),
            operator_columns: run.operator_columns,
            rhs_mode,
            jobs: run.jobs,
            output_dir: run.output_dir.unwrap_or_else(|| PathBuf::from("out")),
            laplace,
            rte,
            affine,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces the seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.laplace.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(RbError::Config("epsilon list is empty".into()));
        }
        for &eps in &self.epsilons {
            Thresholds::new(eps, self.eta).map_err(|e| RbError::Config(e.to_string()))?;
        }
        if self.operator_columns == Some(0) {
            return Err(RbError::Config("operator_columns must be at least 1".into()));
        }
        if self.jobs == Some(0) {
            return Err(RbError::Config("jobs must be at least 1".into()));
        }
        match self.problem {
            ProblemKind::LaplaceBie => self.laplace.validate(),
            ProblemKind::Rte => self.rte.validate(),
            ProblemKind::SyntheticAffine => self.affine.validate(),
        }
    }

    pub fn thresholds(&self, eps: f64) -> Result<Thresholds> {
        Thresholds::new(eps, self.eta)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
