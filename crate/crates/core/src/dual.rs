//! Forward-time dual process and the minimum-variance cost.
//!
//! For gains `α_0 … α_L` (each q×d) the dual state evolves as
//!
//! ```text
//!     z_0     = I + Cᵀ α_0
//!     z_{i+1} = Aᵀ z_i + Cᵀ α_{i+1}
//! ```
//!
//! and the estimate built from a window `y_{t−L} … y_t` is
//! `x̂_t = z_Lᵀ x̄ − Σ_i α_iᵀ y_{t−i}`. The gain α_0 always pairs with the
//! newest measurement. For any gains, the mean-squared error of that
//! estimate equals the trace of [`dual_cost`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, symmetrize};
use crate::model::SystemModel;

#[derive(Debug, Clone, PartialEq)]
pub struct DualControlSequence {
    alphas: Vec<DMatrix<f64>>,
}

impl DualControlSequence {
    /// Gains `α_0 … α_L`, all the same shape and finite.
    pub fn new(alphas: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = alphas
            .first()
            .ok_or_else(|| Error::DimensionMismatch("control sequence is empty".into()))?;
        let shape = first.shape();
        for (i, a) in alphas.iter().enumerate() {
            if a.shape() != shape {
                return Err(Error::DimensionMismatch(format!(
                    "alpha_{i} is {:?}, alpha_0 is {:?}",
                    a.shape(),
                    shape
                )));
            }
            if !linalg::all_finite(a) {
                return Err(Error::NonFinite(format!("alpha_{i}")));
            }
        }
        Ok(DualControlSequence { alphas })
    }

    pub fn zeros(q: usize, d: usize, horizon: usize) -> Self {
        DualControlSequence {
            alphas: vec![DMatrix::zeros(q, d); horizon + 1],
        }
    }

    /// L, i.e. one less than the number of gains.
    pub fn horizon(&self) -> usize {
        self.alphas.len() - 1
    }

    pub fn alphas(&self) -> &[DMatrix<f64>] {
        &self.alphas
    }

    pub fn into_alphas(self) -> Vec<DMatrix<f64>> {
        self.alphas
    }

    /// Extend with zero gains up to horizon `horizon`.
    pub fn padded(&self, horizon: usize) -> Self {
        let mut alphas = self.alphas.clone();
        let shape = alphas[0].shape();
        while alphas.len() < horizon + 1 {
            alphas.push(DMatrix::zeros(shape.0, shape.1));
        }
        DualControlSequence { alphas }
    }

    /// The first `horizon + 1` gains.
    pub fn truncated(&self, horizon: usize) -> Self {
        DualControlSequence {
            alphas: self.alphas[..=horizon.min(self.horizon())].to_vec(),
        }
    }

    fn check_model(&self, model: &SystemModel) -> Result<()> {
        let want = (model.meas_dim(), model.state_dim());
        if self.alphas[0].shape() != want {
            return Err(Error::DimensionMismatch(format!(
                "gains are {:?}, model expects {:?}",
                self.alphas[0].shape(),
                want
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualTrajectory {
    pub zs: Vec<DMatrix<f64>>,
}

impl DualTrajectory {
    pub fn terminal(&self) -> &DMatrix<f64> {
        self.zs.last().expect("trajectory is never empty")
    }
}

/// Roll the dual recursion forward over all gains.
pub fn dual_rollout(model: &SystemModel, controls: &DualControlSequence) -> Result<DualTrajectory> {
    controls.check_model(model)?;
    let d = model.state_dim();
    let a_t = model.A.transpose();
    let c_t = model.C.transpose();
    let mut zs = Vec::with_capacity(controls.alphas.len());
    let mut z = DMatrix::identity(d, d) + &c_t * &controls.alphas[0];
    zs.push(z.clone());
    for alpha in &controls.alphas[1..] {
        z = &a_t * &z + &c_t * alpha;
        zs.push(z.clone());
    }
    Ok(DualTrajectory { zs })
}

/// `z_L` from the closed form `z_Lᵀ = A^L + Σ_i α_iᵀ C A^{L−i}`.
pub fn terminal_closed_form(model: &SystemModel, controls: &DualControlSequence) -> Result<DMatrix<f64>> {
    controls.check_model(model)?;
    let l = controls.horizon();
    let powers = linalg::matrix_powers(&model.A, l);
    let mut zt = powers[l].clone();
    for (i, alpha) in controls.alphas.iter().enumerate() {
        zt += alpha.transpose() * &model.C * &powers[l - i];
    }
    Ok(zt.transpose())
}

/// `z_Lᵀ x̄ − Σ_i α_iᵀ y_{t−i}` with `window` ordered oldest first
/// (`y_{t−L} … y_t`).
pub fn assemble_estimate(
    traj: &DualTrajectory,
    controls: &DualControlSequence,
    prior_mean: &DVector<f64>,
    window: &[DVector<f64>],
) -> Result<DVector<f64>> {
    let l = controls.horizon();
    if window.len() != l + 1 {
        return Err(Error::WindowLengthMismatch {
            expected: l + 1,
            got: window.len(),
        });
    }
    if traj.zs.len() != l + 1 {
        return Err(Error::DimensionMismatch(format!(
            "trajectory has {} states, controls have {}",
            traj.zs.len(),
            l + 1
        )));
    }
    let mut x = traj.terminal().transpose() * prior_mean;
    for (i, alpha) in controls.alphas.iter().enumerate() {
        let y = &window[l - i];
        if y.len() != alpha.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "measurement has length {}, gains have {} rows",
                y.len(),
                alpha.nrows()
            )));
        }
        x -= alpha.transpose() * y;
    }
    Ok(x)
}

/// Error covariance of the dual estimator, split into terminal and stage
/// parts.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrices {
    pub sigma: DMatrix<f64>,
    pub trace_value: f64,
    pub terminal_part: DMatrix<f64>,
    pub stage_part: DMatrix<f64>,
}

/// `z_Lᵀ P z_L + α_Lᵀ R α_L + Σ_{i<L} (z_iᵀ Q z_i + α_iᵀ R α_i)`.
pub fn dual_cost(
    model: &SystemModel,
    terminal_cov: &DMatrix<f64>,
    controls: &DualControlSequence,
    traj: &DualTrajectory,
) -> Result<CostMatrices> {
    controls.check_model(model)?;
    let d = model.state_dim();
    if terminal_cov.shape() != (d, d) {
        return Err(Error::DimensionMismatch(format!(
            "terminal covariance is {:?}, expected {d}x{d}",
            terminal_cov.shape()
        )));
    }
    let l = controls.horizon();
    if traj.zs.len() != l + 1 {
        return Err(Error::DimensionMismatch(
            "trajectory and controls differ in length".into(),
        ));
    }
    let z_l = traj.terminal();
    let terminal_part = symmetrize(&(z_l.transpose() * terminal_cov * z_l));
    let mut stage = DMatrix::zeros(d, d);
    for i in 0..l {
        let z = &traj.zs[i];
        let a = &controls.alphas[i];
        stage += z.transpose() * &model.Q * z + a.transpose() * &model.R * a;
    }
    let a_l = &controls.alphas[l];
    stage += a_l.transpose() * &model.R * a_l;
    let stage_part = symmetrize(&stage);
    let sigma = &terminal_part + &stage_part;
    let trace_value = sigma.trace();
    Ok(CostMatrices {
        sigma,
        trace_value,
        terminal_part,
        stage_part,
    })
}

/// Affine dependence of the dual states on the gains, one column at a time.
///
/// With `u_k = [α_0[:,k]; α_1[:,k]; …; α_L[:,k]]` the k-th column of z_i is
/// `(Aᵀ)^i e_k + M_i u_k`, where block j of `M_i` is `(Aᵀ)^{i−j} Cᵀ` for
/// `j ≤ i` and zero otherwise.
#[derive(Debug, Clone)]
pub(crate) struct DualAffineMap {
    /// `(Aᵀ)^i` for i = 0..=L.
    pub free: Vec<DMatrix<f64>>,
    /// `M_i` for i = 0..=L, each d × q(L+1).
    pub gain: Vec<DMatrix<f64>>,
}

impl DualAffineMap {
    pub fn new(model: &SystemModel, horizon: usize) -> Self {
        let d = model.state_dim();
        let q = model.meas_dim();
        let nv = q * (horizon + 1);
        let free = linalg::matrix_powers(&model.A.transpose(), horizon);
        let c_t = model.C.transpose();
        // (Aᵀ)^k Cᵀ
        let driven: Vec<DMatrix<f64>> = free.iter().map(|p| p * &c_t).collect();
        let gain = (0..=horizon)
            .map(|i| {
                let mut m = DMatrix::zeros(d, nv);
                for j in 0..=i {
                    m.view_mut((0, j * q), (d, q)).copy_from(&driven[i - j]);
                }
                m
            })
            .collect();
        DualAffineMap { free, gain }
    }
}
