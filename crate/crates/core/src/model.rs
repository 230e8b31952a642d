//! Plant, noise and constraint definitions plus structural utilities.
//!
//! The plant is the autonomous LTI system
//!
//! ```text
//!     x_{t+1} = A x_t + w_t,    w_t ~ (0, Q)
//!     y_t     = C x_t + v_t,    v_t ~ (0, R)
//!     x_0     ~ (x̂_0⁻, Σ_0⁻)
//! ```
//!
//! with an optional polyhedral state constraint `{x : Hx ≤ h}`.

use std::ops::Deref;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, ModelMatrix, Result};
use crate::linalg;

/// Numerical tolerances shared by every module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceConfig {
    /// Relative singular-value cutoff for rank and pseudoinverse.
    pub rank_tol: f64,
    /// Relative eigenvalue slack for definiteness tests.
    pub psd_tol: f64,
    /// Allowed constraint violation.
    pub feas_tol: f64,
    /// QP stationarity tolerance.
    pub solver_tol: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig {
            rank_tol: 1e-10,
            psd_tol: 1e-9,
            feas_tol: 1e-8,
            solver_tol: 1e-8,
        }
    }
}

impl ToleranceConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.rank_tol, "rank_tol"),
            (self.psd_tol, "psd_tol"),
            (self.feas_tol, "feas_tol"),
            (self.solver_tol, "solver_tol"),
        ];
        for (v, name) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidTolerance(name));
            }
        }
        Ok(())
    }
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub A: DMatrix<f64>,
    pub C: DMatrix<f64>,
    pub Q: DMatrix<f64>,
    pub R: DMatrix<f64>,
    pub prior_mean: DVector<f64>,
    pub prior_cov: DMatrix<f64>,
}

impl SystemModel {
    /// State dimension d.
    pub fn state_dim(&self) -> usize {
        self.A.nrows()
    }

    /// Measurement dimension q.
    pub fn meas_dim(&self) -> usize {
        self.C.nrows()
    }

    fn check_dimensions(&self) -> Result<()> {
        let d = self.A.nrows();
        let q = self.C.nrows();
        let shape = |m: &DMatrix<f64>| m.shape();
        let mismatch = |what: &str, got: (usize, usize), want: (usize, usize)| {
            Error::DimensionMismatch(format!("{what} is {}x{}, expected {}x{}", got.0, got.1, want.0, want.1))
        };
        if d == 0 || self.A.ncols() != d {
            return Err(mismatch("A", shape(&self.A), (d.max(1), d.max(1))));
        }
        if q == 0 || self.C.ncols() != d {
            return Err(mismatch("C", shape(&self.C), (q.max(1), d)));
        }
        if shape(&self.Q) != (d, d) {
            return Err(mismatch("Q", shape(&self.Q), (d, d)));
        }
        if shape(&self.R) != (q, q) {
            return Err(mismatch("R", shape(&self.R), (q, q)));
        }
        if shape(&self.prior_cov) != (d, d) {
            return Err(mismatch("prior_cov", shape(&self.prior_cov), (d, d)));
        }
        if self.prior_mean.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "prior_mean has length {}, expected {d}",
                self.prior_mean.len()
            )));
        }
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        let mats = [
            (&self.A, ModelMatrix::A),
            (&self.C, ModelMatrix::C),
            (&self.Q, ModelMatrix::Q),
            (&self.R, ModelMatrix::R),
            (&self.prior_cov, ModelMatrix::PriorCov),
        ];
        for (m, which) in mats {
            if !linalg::all_finite(m) {
                return Err(Error::NonFinite(which.to_string()));
            }
        }
        if self.prior_mean.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(ModelMatrix::PriorMean.to_string()));
        }
        Ok(())
    }
}

/// A model whose invariants have been checked and whose covariances are
/// exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedModel(SystemModel);

impl Deref for ValidatedModel {
    type Target = SystemModel;

    fn deref(&self) -> &SystemModel {
        &self.0
    }
}

impl From<ValidatedModel> for SystemModel {
    fn from(v: ValidatedModel) -> SystemModel {
        v.0
    }
}

impl ValidatedModel {
    pub fn into_inner(self) -> SystemModel {
        self.0
    }

    /// Copy of this model with a different prior pair. The prior covariance
    /// must still be positive definite.
    pub fn with_prior(&self, mean: DVector<f64>, cov: DMatrix<f64>, tol: &ToleranceConfig) -> Result<ValidatedModel> {
        let mut m = self.0.clone();
        m.prior_mean = mean;
        m.prior_cov = cov;
        validate_model(m, tol)
    }
}

/// Check dimensions, finiteness and definiteness; Q, R and Σ_0⁻ are
/// symmetrized before testing. Idempotent.
pub fn validate_model(model: impl Into<SystemModel>, tol: &ToleranceConfig) -> Result<ValidatedModel> {
    tol.validate()?;
    let mut m: SystemModel = model.into();
    m.check_dimensions()?;
    m.check_finite()?;
    m.Q = linalg::symmetrize(&m.Q);
    m.R = linalg::symmetrize(&m.R);
    m.prior_cov = linalg::symmetrize(&m.prior_cov);
    if !linalg::is_psd(&m.Q, tol.psd_tol) {
        return Err(Error::NotPsd(ModelMatrix::Q));
    }
    if !linalg::is_pd(&m.R, tol.psd_tol) {
        return Err(Error::NotPd(ModelMatrix::R));
    }
    if !linalg::is_pd(&m.prior_cov, tol.psd_tol) {
        return Err(Error::NotPd(ModelMatrix::PriorCov));
    }
    Ok(ValidatedModel(m))
}

/// `{x : Hx ≤ h}`. Equalities are expressed as pairs of opposite rows.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq)]
pub struct PolyhedralSet {
    pub H: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl PolyhedralSet {
    #[allow(non_snake_case)]
    pub fn new(H: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        if H.nrows() == 0 {
            return Err(Error::DimensionMismatch("constraint set needs at least one row".into()));
        }
        if H.nrows() != h.len() {
            return Err(Error::DimensionMismatch(format!(
                "H has {} rows but h has length {}",
                H.nrows(),
                h.len()
            )));
        }
        if !linalg::all_finite(&H) || h.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("constraint".into()));
        }
        Ok(PolyhedralSet { H, h })
    }

    /// The nonnegative orthant `{x ≥ 0}` in dimension d.
    pub fn nonnegative(d: usize) -> Self {
        PolyhedralSet {
            H: -DMatrix::identity(d, d),
            h: DVector::zeros(d),
        }
    }

    pub fn rows(&self) -> usize {
        self.H.nrows()
    }

    pub fn dim(&self) -> usize {
        self.H.ncols()
    }

    /// `max_i (Hx − h)_i`; nonpositive inside the set.
    pub fn max_violation(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "point has dimension {}, set has dimension {}",
                x.len(),
                self.dim()
            )));
        }
        let r = &self.H * x - &self.h;
        Ok(r.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    }
}

/// True iff `max(Hx − h) ≤ feas_tol`.
pub fn polyhedron_contains(set: &PolyhedralSet, x: &DVector<f64>, tol: &ToleranceConfig) -> Result<bool> {
    Ok(set.max_violation(x)? <= tol.feas_tol)
}

/// `[A^{t−1}B, …, AB, B]`.
#[allow(non_snake_case)]
pub fn reachability_matrix(A: &DMatrix<f64>, B: &DMatrix<f64>, t: usize) -> Result<DMatrix<f64>> {
    let d = A.nrows();
    if A.ncols() != d || B.nrows() != d {
        return Err(Error::DimensionMismatch(format!(
            "A is {}x{}, B is {}x{}",
            A.nrows(),
            A.ncols(),
            B.nrows(),
            B.ncols()
        )));
    }
    if t == 0 {
        return Err(Error::DimensionMismatch(
            "reachability horizon must be at least 1".into(),
        ));
    }
    let m = B.ncols();
    let mut out = DMatrix::zeros(d, m * t);
    let mut block = B.clone();
    for k in (0..t).rev() {
        out.view_mut((0, k * m), (d, m)).copy_from(&block);
        block = A * block;
    }
    Ok(out)
}

/// Smallest n ≤ d with rank(R_n(Aᵀ, Cᵀ)) = d.
#[allow(non_snake_case)]
pub fn observability_index(A: &DMatrix<f64>, C: &DMatrix<f64>, tol: &ToleranceConfig) -> Result<usize> {
    let d = A.nrows();
    if A.ncols() != d || C.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "A is {}x{}, C is {}x{}",
            A.nrows(),
            A.ncols(),
            C.nrows(),
            C.ncols()
        )));
    }
    let at = A.transpose();
    let ct = C.transpose();
    for n in 1..=d {
        let r = reachability_matrix(&at, &ct, n)?;
        if linalg::rank(&r, tol.rank_tol) == d {
            return Ok(n);
        }
    }
    Err(Error::NotObservable)
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConstraintFile {
    H: Vec<Vec<f64>>,
    h: Vec<f64>,
}

/// On-disk model description: row-major nested arrays.
#[allow(non_snake_case)]
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    A: Vec<Vec<f64>>,
    C: Vec<Vec<f64>>,
    Q: Vec<Vec<f64>>,
    R: Vec<Vec<f64>>,
    prior_mean: Vec<f64>,
    prior_cov: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    constraint: Option<ConstraintFile>,
}

fn matrix_field(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(name.to_string()));
    }
    linalg::from_rows(rows).ok_or_else(|| Error::DimensionMismatch(format!("{name} has ragged rows")))
}

fn vector_field(v: &[f64], name: &str) -> Result<DVector<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(name.to_string()));
    }
    Ok(DVector::from_column_slice(v))
}

impl ModelFile {
    pub fn from_model(model: &SystemModel, constraint: Option<&PolyhedralSet>) -> Self {
        ModelFile {
            A: linalg::to_rows(&model.A),
            C: linalg::to_rows(&model.C),
            Q: linalg::to_rows(&model.Q),
            R: linalg::to_rows(&model.R),
            prior_mean: model.prior_mean.iter().cloned().collect(),
            prior_cov: linalg::to_rows(&model.prior_cov),
            constraint: constraint.map(|c| ConstraintFile {
                H: linalg::to_rows(&c.H),
                h: c.h.iter().cloned().collect(),
            }),
        }
    }

    /// Convert to in-memory types. Rejects NaN/Inf and ragged arrays; does
    /// not check definiteness (see [`validate_model`]).
    pub fn into_parts(self) -> Result<(SystemModel, Option<PolyhedralSet>)> {
        let model = SystemModel {
            A: matrix_field(&self.A, "A")?,
            C: matrix_field(&self.C, "C")?,
            Q: matrix_field(&self.Q, "Q")?,
            R: matrix_field(&self.R, "R")?,
            prior_mean: vector_field(&self.prior_mean, "prior_mean")?,
            prior_cov: matrix_field(&self.prior_cov, "prior_cov")?,
        };
        model.check_dimensions()?;
        let constraint = match self.constraint {
            None => None,
            Some(c) => Some(PolyhedralSet::new(matrix_field(&c.H, "H")?, vector_field(&c.h, "h")?)?),
        };
        if let Some(c) = &constraint {
            if c.dim() != model.state_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "constraint has {} columns, state dimension is {}",
                    c.dim(),
                    model.state_dim()
                )));
            }
        }
        Ok((model, constraint))
    }
}

pub fn parse_model_json(text: &str) -> Result<(SystemModel, Option<PolyhedralSet>)> {
    let file: ModelFile = serde_json::from_str(text)?;
    file.into_parts()
}

pub fn load_model_file(path: impl AsRef<Path>) -> Result<(SystemModel, Option<PolyhedralSet>)> {
    let text = std::fs::read_to_string(path)?;
    parse_model_json(&text)
}

/// The isothermal batch-reactor benchmark with `X = {x ≥ 0}`.
pub fn batch_reactor() -> (SystemModel, PolyhedralSet) {
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(3, 3, &[
        0.8831, 0.0078, 0.0022,
        0.1150, 0.9563, 0.0028,
        0.1178, 0.0102, 0.9954,
    ]);
    let model = SystemModel {
        A: a,
        C: DMatrix::from_row_slice(1, 3, &[32.84, 32.84, 32.84]),
        Q: DMatrix::identity(3, 3) * (0.01f64 * 0.01),
        R: DMatrix::from_element(1, 1, 0.25f64 * 0.25),
        prior_mean: DVector::from_column_slice(&[1.0, 1.0, 4.0]),
        prior_cov: DMatrix::identity(3, 3),
    };
    (model, PolyhedralSet::nonnegative(3))
}
