//! Kalman filter and Riccati recursion.
//!
//! The first measurement `y_0` is taken at t = 0, so [`kf_run`] updates the
//! initial prior before the first prediction.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::model::ValidatedModel;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        GaussianBelief { mean, cov }
    }

    /// The prior `(x̂_0⁻, Σ_0⁻)` of a model.
    pub fn prior(model: &ValidatedModel) -> Self {
        GaussianBelief::new(model.prior_mean.clone(), model.prior_cov.clone())
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if self.mean.len() != d || self.cov.shape() != (d, d) {
            return Err(Error::DimensionMismatch(format!(
                "belief has mean {} and cov {:?}, state dimension is {d}",
                self.mean.len(),
                self.cov.shape()
            )));
        }
        Ok(())
    }
}

/// `(A m, A Σ Aᵀ + Q)`.
pub fn kf_predict(belief: &GaussianBelief, model: &ValidatedModel) -> Result<GaussianBelief> {
    belief.check_dim(model.state_dim())?;
    let mean = &model.A * &belief.mean;
    let cov = symmetrize(&(&model.A * &belief.cov * model.A.transpose() + &model.Q));
    Ok(GaussianBelief { mean, cov })
}

/// Gain `Σ⁻Cᵀ (CΣ⁻Cᵀ + R)⁻¹` via a Cholesky solve of the innovation covariance.
fn kalman_gain(cov: &DMatrix<f64>, model: &ValidatedModel) -> Result<DMatrix<f64>> {
    let c = &model.C;
    let s = symmetrize(&(c * cov * c.transpose() + &model.R));
    let chol = s.cholesky().ok_or(Error::SingularInnovation)?;
    // S Kᵀ = C Σ
    let k_t = chol.solve(&(c * cov));
    Ok(k_t.transpose())
}

/// Measurement update; covariance `Σ⁻ − Σ⁻Cᵀ(CΣ⁻Cᵀ+R)⁻¹CΣ⁻`.
pub fn kf_update(belief: &GaussianBelief, y: &DVector<f64>, model: &ValidatedModel) -> Result<GaussianBelief> {
    belief.check_dim(model.state_dim())?;
    if y.len() != model.meas_dim() {
        return Err(Error::DimensionMismatch(format!(
            "measurement has length {}, expected {}",
            y.len(),
            model.meas_dim()
        )));
    }
    let gain = kalman_gain(&belief.cov, model)?;
    let innovation = y - &model.C * &belief.mean;
    let mean = &belief.mean + &gain * innovation;
    let cov = symmetrize(&(&belief.cov - &gain * &model.C * &belief.cov));
    Ok(GaussianBelief { mean, cov })
}

/// Joseph-form posterior covariance `(I−KC)Σ⁻(I−KC)ᵀ + KRKᵀ`.
pub fn joseph_covariance(prior_cov: &DMatrix<f64>, model: &ValidatedModel) -> Result<DMatrix<f64>> {
    let gain = kalman_gain(prior_cov, model)?;
    let d = model.state_dim();
    let i_kc = DMatrix::identity(d, d) - &gain * &model.C;
    Ok(symmetrize(
        &(&i_kc * prior_cov * i_kc.transpose() + &gain * &model.R * gain.transpose()),
    ))
}

/// Filtered beliefs for `y_0, y_1, …`: update at t = 0, then predict/update.
pub fn kf_run(model: &ValidatedModel, measurements: &[DVector<f64>]) -> Result<Vec<GaussianBelief>> {
    if measurements.is_empty() {
        return Err(Error::EmptyMeasurements);
    }
    let mut out = Vec::with_capacity(measurements.len());
    let mut belief = GaussianBelief::prior(model);
    for (t, y) in measurements.iter().enumerate() {
        if t > 0 {
            belief = kf_predict(&belief, model)?;
        }
        belief = kf_update(&belief, y, model)?;
        out.push(belief.clone());
    }
    Ok(out)
}
