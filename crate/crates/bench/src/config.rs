//! Scenario files and their resolution against a model file.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dualmhe::linalg::{from_rows, is_psd};
use dualmhe::model::{
    load_model_file, observability_index, validate_model, PolyhedralSet, ToleranceConfig, ValidatedModel,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Kf,
    Mhe,
    Cmhe,
    Cfie,
    Memhe,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Kf, Method::Mhe, Method::Cmhe, Method::Cfie, Method::Memhe];

    pub fn name(self) -> &'static str {
        match self {
            Method::Kf => "kf",
            Method::Mhe => "mhe",
            Method::Cmhe => "cmhe",
            Method::Cfie => "cfie",
            Method::Memhe => "memhe",
        }
    }

    pub fn needs_constraint(self) -> bool {
        matches!(self, Method::Cmhe | Method::Cfie)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| BenchError::UnknownEstimator(s.to_string()))
    }
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub H: Vec<Vec<f64>>,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialState {
    /// Defaults to the model prior when mean or cov is omitted.
    Gaussian {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cov: Option<Vec<Vec<f64>>>,
    },
    Uniform {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

/// Simulation noise covariances when they differ from the model's Q and R.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process_cov: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement_cov: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Model file, relative to the scenario file.
    pub model: PathBuf,
    /// Overrides the model file's constraint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<ConstraintSpec>,
    pub initial_state: InitialState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    pub horizon: usize,
    pub steps: usize,
    pub paths: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dump_trajectories: bool,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Read a scenario; relative paths inside it are resolved against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.model.is_relative() {
            cfg.model = base.join(&cfg.model);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    /// Hex SHA-256 of the canonical JSON form, without the output-only
    /// fields (`output_dir`, `dump_trajectories`).
    pub fn hash(&self) -> String {
        let mut cfg = self.clone();
        cfg.output_dir = PathBuf::new();
        cfg.dump_trajectories = false;
        let text = serde_json::to_string(&cfg).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn resolve(&self) -> Result<Scenario> {
        if self.paths == 0 {
            return Err(BenchError::Config("paths must be at least 1".into()));
        }
        if self.steps == 0 {
            return Err(BenchError::Config("steps must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(BenchError::Config("no estimators selected".into()));
        }
        let unique: BTreeSet<Method> = self.methods.iter().copied().collect();
        if unique.len() != self.methods.len() {
            return Err(BenchError::Config("duplicate estimator in methods".into()));
        }

        let tol = ToleranceConfig::default();
        let (raw, file_constraint) = load_model_file(&self.model).map_err(|e| match e {
            dualmhe::Error::Io(source) => BenchError::io(&self.model, source),
            other => other.into(),
        })?;
        let model = validate_model(raw, &tol)?;
        let d = model.state_dim();
        let q = model.meas_dim();
        let constraint = match &self.constraint {
            Some(spec) => Some(PolyhedralSet::new(
                matrix(&spec.H, "constraint.H")?,
                DVector::from_column_slice(&spec.h),
            )?),
            None => file_constraint,
        };
        if let Some(c) = &constraint {
            if c.dim() != d {
                return Err(BenchError::Config(format!(
                    "constraint has {} columns, state dimension is {d}",
                    c.dim()
                )));
            }
        }
        if constraint.is_none() {
            if let Some(m) = self.methods.iter().find(|m| m.needs_constraint()) {
                return Err(BenchError::Config(format!("{m} needs a constraint set")));
            }
        }

        let initial = match &self.initial_state {
            InitialState::Gaussian { mean, cov } => {
                let mean = match mean {
                    Some(v) => vector(v, d, "initial_state.mean")?,
                    None => model.prior_mean.clone(),
                };
                let cov = match cov {
                    Some(c) => square(c, d, "initial_state.cov")?,
                    None => model.prior_cov.clone(),
                };
                if !is_psd(&cov, tol.psd_tol) {
                    return Err(BenchError::Config("initial_state.cov is not PSD".into()));
                }
                InitialDistribution::Gaussian { mean, cov }
            }
            InitialState::Uniform { lower, upper } => {
                let lower = vector(lower, d, "initial_state.lower")?;
                let upper = vector(upper, d, "initial_state.upper")?;
                if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
                    return Err(BenchError::Config("initial_state.lower exceeds upper".into()));
                }
                InitialDistribution::Uniform { lower, upper }
            }
        };
        let prior_mismatch = match &initial {
            InitialDistribution::Gaussian { mean, cov } => *mean != model.prior_mean || *cov != model.prior_cov,
            InitialDistribution::Uniform { .. } => true,
        };

        let noise = self.noise.clone().unwrap_or(NoiseSpec {
            process_cov: None,
            measurement_cov: None,
        });
        let process_cov = match &noise.process_cov {
            Some(c) => square(c, d, "noise.process_cov")?,
            None => model.Q.clone(),
        };
        let measurement_cov = match &noise.measurement_cov {
            Some(c) => square(c, q, "noise.measurement_cov")?,
            None => model.R.clone(),
        };
        for (m, name) in [
            (&process_cov, "noise.process_cov"),
            (&measurement_cov, "noise.measurement_cov"),
        ] {
            if !is_psd(m, tol.psd_tol) {
                return Err(BenchError::Config(format!("{name} is not PSD")));
            }
        }
        let obs_index = observability_index(&model.A, &model.C, &tol)?;
        Ok(Scenario {
            config: self.clone(),
            model,
            constraint,
            initial,
            process_cov,
            measurement_cov,
            prior_mismatch,
            obs_index,
            tol,
        })
    }
}

fn matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(BenchError::Config(format!("{name} has non-finite entries")));
    }
    from_rows(rows).ok_or_else(|| BenchError::Config(format!("{name} has ragged rows")))
}

fn square(rows: &[Vec<f64>], n: usize, name: &str) -> Result<DMatrix<f64>> {
    let m = matrix(rows, name)?;
    if m.shape() != (n, n) {
        return Err(BenchError::Config(format!(
            "{name} is {:?}, expected {n}x{n}",
            m.shape()
        )));
    }
    Ok(m)
}

fn vector(v: &[f64], n: usize, name: &str) -> Result<DVector<f64>> {
    if v.len() != n {
        return Err(BenchError::Config(format!(
            "{name} has length {}, expected {n}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(BenchError::Config(format!("{name} has non-finite entries")));
    }
    Ok(DVector::from_column_slice(v))
}

#[derive(Debug, Clone)]
pub enum InitialDistribution {
    Gaussian { mean: DVector<f64>, cov: DMatrix<f64> },
    Uniform { lower: DVector<f64>, upper: DVector<f64> },
}

/// A validated scenario with all matrices materialized.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: ValidatedModel,
    pub constraint: Option<PolyhedralSet>,
    pub initial: InitialDistribution,
    pub process_cov: DMatrix<f64>,
    pub measurement_cov: DMatrix<f64>,
    /// The estimators' prior differs from the sampling distribution of x_0.
    pub prior_mismatch: bool,
    pub obs_index: usize,
    pub tol: ToleranceConfig,
}
