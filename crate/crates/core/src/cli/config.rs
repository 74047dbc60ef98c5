//! TOML run configuration.
//!
//! ```toml
//! experiment = "bias_agreement"     # or "lp_bound"
//! seed = 7
//! y = [2.0]
//! link = "identity"                 # or "cubic"
//!
//! [matrix]
//! rows = [[-0.7, 1.0]]              # or: path = "a.csv", or: gaussian = { rows = 2, cols = 3 }
//!
//! [reparam]
//! kind = "sinh"                     # identity | power (with p) | sinh | tanh
//!
//! [loss]
//! kind = "squared_l2"               # or: kind = "power", q = 1.1
//!
//! [init]
//! alpha = 0.0                       # w̃0 = α·1; or: vector = [...] (w0 in parameter space)
//!
//! [integrator]
//! method = "adaptive_rk45"          # euler | rk4 (with step) | adaptive_rk45
//! rtol = 1e-10
//! atol = 1e-12
//! t_max = 1e4
//! loss_tol = 1e-16
//!
//! [oracle]                          # optional, all keys optional
//! tol = 1e-10
//!
//! [lp_bound]                        # required for experiment = "lp_bound"
//! alphas = [1e-4]
//!
//! [outputs]
//! trajectory_csv = "run.csv"
//! report_json = "run.json"
//! figure_data_dir = "fig"           # optional
//! ```
//!
//! Unknown keys are rejected. Relative matrix paths resolve against the
//! config file's directory; relative output paths against the output
//! directory.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{FlowConfig, LogSchedule, Method, DEFAULT_DIVERGENCE_BOUND, DEFAULT_LOG_RATIO, DEFAULT_LOSS_TOL};
use crate::linalg::{LinalgError, Matrix};
use crate::model::{LinkKind, LossKind, ModelError};
use crate::oracle::SolveOptions;
use crate::problem::{InstanceError, ProblemInstance};
use crate::reparam::{ReparamError, ReparamFamily};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("matrix file {path}: {msg}")]
    MatrixFile { path: PathBuf, msg: String },
    #[error(transparent)]
    Reparam(#[from] ReparamError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    BiasAgreement,
    LpBound,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    pub rows: Option<Vec<Vec<f64>>>,
    pub path: Option<PathBuf>,
    pub gaussian: Option<GaussianSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReparamSpec {
    pub kind: ReparamKindName,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReparamKindName {
    Identity,
    Power,
    Sinh,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub kind: LossKindName,
    pub q: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKindName {
    SquaredL2,
    Power,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub alpha: Option<f64>,
    pub vector: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Euler,
    Rk4,
    AdaptiveRk45,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    pub method: MethodName,
    pub step: Option<f64>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub initial_step: Option<f64>,
    pub t_max: f64,
    pub loss_tol: Option<f64>,
    pub divergence_bound: Option<f64>,
    /// `"every_step"` or a geometric ratio given by `log_ratio`.
    pub log: Option<LogName>,
    pub log_ratio: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogName {
    EveryStep,
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LpBoundSpec {
    pub alphas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub trajectory_csv: PathBuf,
    pub report_json: PathBuf,
    pub figure_data_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    pub matrix: MatrixSpec,
    pub y: Vec<f64>,
    pub reparam: ReparamSpec,
    #[serde(default = "default_link")]
    pub link: LinkKind,
    pub loss: LossSpec,
    pub init: Option<InitSpec>,
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub oracle: SolveOptions,
    pub lp_bound: Option<LpBoundSpec>,
    pub outputs: OutputSpec,
}

fn default_link() -> LinkKind {
    LinkKind::Identity
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_str(&text)
    }

    /// Cross-field checks that the schema alone cannot express.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.matrix;
        let sources = m.rows.is_some() as u8 + m.path.is_some() as u8 + m.gaussian.is_some() as u8;
        if sources != 1 {
            return invalid("matrix: give exactly one of rows, path, gaussian");
        }
        self.family()?;
        self.loss()?;
        self.flow_config()?;
        self.oracle
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("oracle: {e}")))?;
        match self.experiment {
            Experiment::BiasAgreement => match &self.init {
                Some(InitSpec {
                    alpha: Some(_),
                    vector: None,
                })
                | Some(InitSpec {
                    alpha: None,
                    vector: Some(_),
                }) => {}
                _ => return invalid("init: give exactly one of alpha, vector"),
            },
            Experiment::LpBound => {
                if !matches!(self.reparam.kind, ReparamKindName::Power) {
                    return invalid("lp_bound experiments need reparam kind = \"power\"");
                }
                if self.link != LinkKind::Identity {
                    return invalid("lp_bound experiments need the identity link");
                }
                match &self.lp_bound {
                    Some(s) if !s.alphas.is_empty() => {
                        if s.alphas.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
                            return invalid("lp_bound.alphas must be positive");
                        }
                    }
                    _ => return invalid("lp_bound.alphas is required and nonempty"),
                }
                if self.init.is_some() {
                    return invalid("init is not used by lp_bound experiments (see lp_bound.alphas)");
                }
            }
        }
        Ok(())
    }

    pub fn family(&self) -> Result<ReparamFamily, ConfigError> {
        let r = self.reparam;
        match (r.kind, r.p) {
            (ReparamKindName::Power, Some(p)) => {
                ReparamFamily::power(p).map_err(|_| ConfigError::Invalid(format!("reparam.p = {p}: p outside (1,2)")))
            }
            (ReparamKindName::Power, None) => invalid("reparam.p is required for kind = \"power\""),
            (_, Some(_)) => invalid("reparam.p is only allowed for kind = \"power\""),
            (ReparamKindName::Identity, None) => Ok(ReparamFamily::Identity),
            (ReparamKindName::Sinh, None) => Ok(ReparamFamily::Sinh),
            (ReparamKindName::Tanh, None) => Ok(ReparamFamily::Tanh),
        }
    }

    pub fn loss(&self) -> Result<LossKind, ConfigError> {
        match (self.loss.kind, self.loss.q) {
            (LossKindName::SquaredL2, None) => Ok(LossKind::SquaredL2),
            (LossKindName::SquaredL2, Some(_)) => invalid("loss.q is only allowed for kind = \"power\""),
            (LossKindName::Power, Some(q)) => {
                LossKind::power(q).map_err(|_| ConfigError::Invalid(format!("loss.q = {q}: q must exceed 1")))
            }
            (LossKindName::Power, None) => invalid("loss.q is required for kind = \"power\""),
        }
    }

    pub fn flow_config(&self) -> Result<FlowConfig, ConfigError> {
        let s = &self.integrator;
        let method = match s.method {
            MethodName::Euler | MethodName::Rk4 => {
                if s.rtol.is_some() || s.atol.is_some() || s.initial_step.is_some() {
                    return invalid("integrator: rtol/atol/initial_step are for adaptive_rk45 only");
                }
                let step = match s.step {
                    Some(v) => v,
                    None => return invalid("integrator.step is required for fixed-step methods"),
                };
                if s.method == MethodName::Euler {
                    Method::Euler { step }
                } else {
                    Method::Rk4 { step }
                }
            }
            MethodName::AdaptiveRk45 => {
                if s.step.is_some() {
                    return invalid("integrator.step is for fixed-step methods; use initial_step");
                }
                Method::AdaptiveRk45 {
                    rtol: s.rtol.unwrap_or(1e-8),
                    atol: s.atol.unwrap_or(1e-10),
                    initial_step: s.initial_step.unwrap_or(1e-3),
                }
            }
        };
        let log_schedule = match (s.log, s.log_ratio) {
            (Some(LogName::EveryStep), None) => LogSchedule::EveryStep,
            (Some(LogName::EveryStep), Some(_)) => return invalid("integrator.log_ratio needs log = \"geometric\""),
            (_, ratio) => LogSchedule::Geometric {
                ratio: ratio.unwrap_or(DEFAULT_LOG_RATIO),
            },
        };
        let cfg = FlowConfig {
            method,
            t_max: s.t_max,
            loss_tol: s.loss_tol.unwrap_or(DEFAULT_LOSS_TOL),
            divergence_bound: s.divergence_bound.unwrap_or(DEFAULT_DIVERGENCE_BOUND),
            log_schedule,
        };
        cfg.validate()
            .map_err(|e| ConfigError::Invalid(format!("integrator: {e}")))?;
        Ok(cfg)
    }

    /// Builds the design matrix; `base_dir` resolves relative CSV paths.
    pub fn matrix(&self, base_dir: &Path) -> Result<Matrix, ConfigError> {
        let m = &self.matrix;
        if let Some(rows) = &m.rows {
            return Ok(Matrix::from_rows(rows)?);
        }
        if let Some(g) = m.gaussian {
            return Ok(gaussian_matrix(g.rows, g.cols, self.seed)?);
        }
        let rel = m.path.as_ref().expect("validated: one matrix source");
        let path = if rel.is_absolute() {
            rel.clone()
        } else {
            base_dir.join(rel)
        };
        read_matrix_csv(&path)
    }

    pub fn instance(&self, base_dir: &Path) -> Result<ProblemInstance, ConfigError> {
        let a = self.matrix(base_dir)?;
        let family = self.family()?;
        let loss = self.loss()?;
        let init = self.init.as_ref().ok_or_else(|| ConfigError::Invalid("init is required".into()))?;
        let inst = match (init.alpha, &init.vector) {
            (Some(alpha), None) => ProblemInstance::with_alpha(a, self.y.clone(), self.link, loss, family, alpha)?,
            (None, Some(w0)) => ProblemInstance::new(a, self.y.clone(), self.link, loss, family, w0.clone())?,
            _ => return invalid("init: give exactly one of alpha, vector"),
        };
        Ok(inst)
    }
}

/// Seeded standard Gaussian matrix; the same seed always yields the same
/// entries.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Result<Matrix, LinalgError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect();
    Matrix::new(rows, cols, data)
}

fn read_matrix_csv(path: &Path) -> Result<Matrix, ConfigError> {
    let err = |msg: String| ConfigError::MatrixFile {
        path: path.to_path_buf(),
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| err(e.to_string()))?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| err(format!("line {}: {e}", i + 1))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(Matrix::from_rows(&rows)?)
}
