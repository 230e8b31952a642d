//! Checkable stability conditions for the constrained estimators.
//!
//! Covers the two sufficient conditions for monotone cost, the deadbeat dual
//! policy behind the error bound `ε(δ) = sqrt(s / λ_min(Σ_0⁻)) · δ`, and an
//! empirical observer test on noiseless data.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dual::{dual_cost, dual_rollout, DualControlSequence};
use crate::error::{Error, Result};
use crate::estimators::{Estimator, EstimatorMode};
use crate::kalman::{kf_predict, kf_update, GaussianBelief};
use crate::linalg::{self, eig_extremes, is_psd, symmetrize};
use crate::model::{
    observability_index, reachability_matrix, PolyhedralSet, SystemModel, ToleranceConfig, ValidatedModel,
};
use crate::qp::{build_fie_qp, project_onto};

/// `Q − Σ_0⁻ ⪰ 0`: process noise at least as large as the prior
/// uncertainty, under which CFIE costs are nondecreasing after n.
pub fn noise_dominates_prior(model: &SystemModel, tol: &ToleranceConfig) -> bool {
    is_psd(&(&model.Q - &model.prior_cov), tol.psd_tol)
}

/// Largest eigenvalue of `ÃᵀΣ_0⁻Ã − Σ_0⁻ + KᵀRK + Q` with `Ã = Aᵀ + CᵀK`.
pub fn lyapunov_gain_margin(model: &SystemModel, gain: &DMatrix<f64>) -> Result<f64> {
    let (d, q) = (model.state_dim(), model.meas_dim());
    if gain.shape() != (q, d) {
        return Err(Error::DimensionMismatch(format!(
            "gain is {:?}, expected {q}x{d}",
            gain.shape()
        )));
    }
    if !linalg::all_finite(gain) {
        return Err(Error::NonFinite("gain".into()));
    }
    let closed = model.A.transpose() + model.C.transpose() * gain;
    let p = &model.prior_cov;
    let m = closed.transpose() * p * &closed - p + gain.transpose() * &model.R * gain + &model.Q;
    Ok(eig_extremes(&symmetrize(&m)).1)
}

/// Whether the stationary dual feedback `α = K z` satisfies the Lyapunov
/// inequality that makes CFIE costs nonincreasing.
pub fn lyapunov_gain_condition(model: &SystemModel, gain: &DMatrix<f64>, tol: &ToleranceConfig) -> Result<bool> {
    Ok(lyapunov_gain_margin(model, gain)? <= tol.psd_tol)
}

#[derive(Debug, Clone)]
pub struct CandidateGain {
    /// q × d feedback `K = −(CΣCᵀ + R)⁻¹ C Σ Aᵀ`.
    pub gain: DMatrix<f64>,
    /// Predicted-covariance fixed point of the Riccati recursion.
    pub riccati: DMatrix<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Steady-state gain of the dual regulator, from iterating the Kalman
/// predict/update map to its fixed point.
pub fn candidate_gain(model: &ValidatedModel, max_iterations: usize, tol: &ToleranceConfig) -> Result<CandidateGain> {
    observability_index(&model.A, &model.C, tol)?;
    let d = model.state_dim();
    let zero = DVector::zeros(model.meas_dim());
    let mut belief = GaussianBelief::new(DVector::zeros(d), model.prior_cov.clone());
    let mut residual = f64::INFINITY;
    for it in 1..=max_iterations {
        let next = kf_predict(&kf_update(&belief, &zero, model)?, model)?;
        residual = (&next.cov - &belief.cov).amax();
        belief = next;
        if residual <= 1e-13 * (1.0 + belief.cov.amax()) {
            let sigma = belief.cov;
            let s = symmetrize(&(&model.C * &sigma * model.C.transpose() + &model.R));
            let chol = s.cholesky().ok_or(Error::SingularInnovation)?;
            let gain = -chol.solve(&(&model.C * &sigma * model.A.transpose()));
            let again = kf_predict(
                &kf_update(&GaussianBelief::new(DVector::zeros(d), sigma.clone()), &zero, model)?,
                model,
            )?;
            return Ok(CandidateGain {
                gain,
                residual: (&again.cov - &sigma).amax(),
                riccati: sigma,
                iterations: it,
            });
        }
    }
    Err(Error::RiccatiNoConverge {
        iterations: max_iterations,
        residual,
    })
}

#[derive(Debug, Clone)]
pub struct DeadbeatPolicy {
    pub controls: DualControlSequence,
    /// `trace(Γ_0 + S)` of the policy with terminal weight Σ_0⁻.
    pub cost: f64,
    pub obs_index: usize,
}

/// Gains that drive the dual state to zero in n steps and keep it there.
///
/// `α_{1:n} = −R_n(Aᵀ, Cᵀ)† (Aᵀ)ⁿ (I + Cᵀα_0)`, padded with zeros up to
/// `horizon`. On noiseless data the resulting estimate does not depend on
/// the prior mean.
pub fn deadbeat_policy(
    model: &SystemModel,
    horizon: usize,
    alpha0: &DMatrix<f64>,
    tol: &ToleranceConfig,
) -> Result<DeadbeatPolicy> {
    let (d, q) = (model.state_dim(), model.meas_dim());
    if alpha0.shape() != (q, d) {
        return Err(Error::DimensionMismatch(format!(
            "alpha0 is {:?}, expected {q}x{d}",
            alpha0.shape()
        )));
    }
    let n = observability_index(&model.A, &model.C, tol)?;
    if horizon < n {
        return Err(Error::InvalidConfig(format!(
            "horizon {horizon} is below the observability index {n}"
        )));
    }
    let a_t = model.A.transpose();
    let c_t = model.C.transpose();
    let z0 = DMatrix::identity(d, d) + &c_t * alpha0;
    let reach = reachability_matrix(&a_t, &c_t, n)?;
    let stacked = -linalg::pseudoinverse(&reach, tol.rank_tol) * linalg::matrix_power(&a_t, n) * z0;

    let mut alphas = Vec::with_capacity(horizon + 1);
    alphas.push(alpha0.clone());
    for i in 0..n {
        alphas.push(stacked.rows(i * q, q).into_owned());
    }
    alphas.resize(horizon + 1, DMatrix::zeros(q, d));
    let controls = DualControlSequence::new(alphas)?;
    let traj = dual_rollout(model, &controls)?;
    let cost = dual_cost(model, &model.prior_cov, &controls, &traj)?.trace_value;
    Ok(DeadbeatPolicy {
        controls,
        cost,
        obs_index: n,
    })
}

/// `sqrt(s / λ_min(Σ_0⁻)) · δ`. Requires s > 0, Σ_0⁻ ≻ 0 and δ > 0.
pub fn observer_error_bound(s: f64, prior_cov: &DMatrix<f64>, delta: f64) -> f64 {
    bound_ratio(s, prior_cov) * delta
}

fn bound_ratio(s: f64, prior_cov: &DMatrix<f64>) -> f64 {
    (s / eig_extremes(prior_cov).0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Trend {
    Nondecreasing,
    Nonincreasing,
    Mixed,
}

/// Classify a sequence up to `slack`; a constant sequence counts as
/// nondecreasing.
pub fn classify_trend(values: &[f64], slack: f64) -> Trend {
    let up = values.windows(2).all(|w| w[1] >= w[0] - slack);
    let down = values.windows(2).all(|w| w[1] <= w[0] + slack);
    match (up, down) {
        (true, _) => Trend::Nondecreasing,
        (false, true) => Trend::Nonincreasing,
        _ => Trend::Mixed,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GainCheck {
    pub holds: bool,
    pub margin: f64,
    pub gain: Vec<Vec<f64>>,
    /// The policy `α_i = K z_{i−1}` satisfied every CFIE estimate row at
    /// every step of every run, checked after the fact.
    pub induced_feasible: bool,
    /// Largest row violation `Gu − g` of the induced controls seen.
    pub induced_max_violation: f64,
}

/// Stationary gain policy: `α_0 = 0` and `α_i = K z_{i−1}`, so that
/// `z_i = (Aᵀ + CᵀK) z_{i−1}`.
pub fn gain_policy(model: &SystemModel, gain: &DMatrix<f64>, horizon: usize) -> Result<DualControlSequence> {
    let (d, q) = (model.state_dim(), model.meas_dim());
    if gain.shape() != (q, d) {
        return Err(Error::DimensionMismatch(format!(
            "gain is {:?}, expected {q}x{d}",
            gain.shape()
        )));
    }
    let closed = model.A.transpose() + model.C.transpose() * gain;
    let mut z = DMatrix::identity(d, d);
    let mut alphas = vec![DMatrix::zeros(q, d)];
    for _ in 0..horizon {
        alphas.push(gain * &z);
        z = &closed * z;
    }
    DualControlSequence::new(alphas)
}

#[derive(Debug, Clone, Serialize)]
pub struct DeltaRun {
    pub delta: f64,
    pub epsilon: f64,
    /// Worst `max_t ‖x̂_t − Aᵗx_0‖` over the tested prior directions.
    pub max_error: f64,
    pub within_bound: bool,
    /// Worst `‖x̂_T − Aᵀx_0‖` over the directions.
    pub final_error: f64,
    /// CFIE only: `final_error ≤ proxy · δ`.
    pub converged: Option<bool>,
    /// Cost traces of the run with the worst final error.
    pub cost_traces: Vec<f64>,
    /// Trend of `cost_traces` from t = n + 1 on.
    pub trend: Trend,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub mode: EstimatorMode,
    pub horizon: usize,
    pub steps: usize,
    pub obs_index: usize,
    pub noise_dominates_prior: bool,
    pub lyapunov_gain: Option<GainCheck>,
    pub deadbeat_cost: f64,
    /// ε(δ) = bound_ratio · δ.
    pub bound_ratio: f64,
    pub runs: Vec<DeltaRun>,
}

impl StabilityReport {
    pub fn epsilon(&self, delta: f64) -> f64 {
        self.bound_ratio * delta
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone)]
pub struct NominalTestConfig {
    pub mode: EstimatorMode,
    pub horizon: usize,
    /// Measurements y_0 … y_T are processed.
    pub steps: usize,
    pub deltas: Vec<f64>,
    /// Threshold of the convergence proxy, relative to δ.
    pub proxy_ratio: f64,
    /// Gain for the Lyapunov check; `None` skips it.
    pub gain: Option<DMatrix<f64>>,
}

/// Unit directions `±e_i` and `±𝟙/√d` used to place the prior mean on the
/// δ-sphere around x_0.
pub fn sphere_directions(d: usize) -> Vec<DVector<f64>> {
    let mut dirs = Vec::with_capacity(2 * d + 2);
    for i in 0..d {
        for sign in [1.0, -1.0] {
            let mut e = DVector::zeros(d);
            e[i] = sign;
            dirs.push(e);
        }
    }
    let diag = DVector::from_element(d, 1.0 / (d as f64).sqrt());
    dirs.push(diag.clone());
    dirs.push(-diag);
    dirs
}

/// Run the estimator on noiseless data `y_t = C Aᵗ x_0` from priors at
/// distance δ and compare the error to `ε(δ)`.
pub fn nominal_observer_test(
    model: &ValidatedModel,
    constraint: &PolyhedralSet,
    x0: &DVector<f64>,
    config: &NominalTestConfig,
    tol: &ToleranceConfig,
) -> Result<StabilityReport> {
    let d = model.state_dim();
    if x0.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "x0 has length {}, expected {d}",
            x0.len()
        )));
    }
    if constraint.max_violation(x0)? > tol.feas_tol {
        return Err(Error::InvalidConfig("x0 must lie in the constraint set".into()));
    }
    let deadbeat = deadbeat_policy(
        model,
        observability_index(&model.A, &model.C, tol)?,
        &DMatrix::zeros(model.meas_dim(), d),
        tol,
    )?;
    let n = deadbeat.obs_index;
    let ratio = bound_ratio(deadbeat.cost, &model.prior_cov);

    let mut truth = Vec::with_capacity(config.steps + 1);
    let mut ys = Vec::with_capacity(config.steps + 1);
    let mut x = x0.clone();
    for _ in 0..=config.steps {
        ys.push(&model.C * &x);
        truth.push(x.clone());
        x = &model.A * &x;
    }

    let mut runs = Vec::with_capacity(config.deltas.len());
    let mut induced_violation = f64::NEG_INFINITY;
    for &delta in &config.deltas {
        let epsilon = ratio * delta;
        let dirs = if delta == 0.0 {
            vec![DVector::zeros(d)]
        } else {
            sphere_directions(d)
        };
        let mut max_error = 0.0f64;
        let mut final_error = 0.0f64;
        let mut worst_costs = Vec::new();
        for dir in dirs {
            let prior = project_onto(constraint, &(x0 + dir * delta), tol)?;
            let m = model.with_prior(prior, model.prior_cov.clone(), tol)?;
            let mut est = Estimator::new(config.mode, m.clone(), Some(constraint.clone()), config.horizon, tol)?;
            let recs = est.run(&ys)?;
            if let Some(k) = &config.gain {
                for t in 0..=config.steps {
                    let qp = build_fie_qp(&m, Some(constraint), &ys[..=t], n)?;
                    if qp.num_rows() == 0 {
                        continue;
                    }
                    let u = qp.variables_from(&gain_policy(&m, k, t)?);
                    induced_violation =
                        induced_violation.max((&qp.constraint_matrix * u - &qp.constraint_offset).max());
                }
            }
            let errs: Vec<f64> = recs.iter().zip(&truth).map(|(r, x)| (&r.x_hat - x).norm()).collect();
            max_error = max_error.max(errs.iter().cloned().fold(0.0, f64::max));
            let last = *errs.last().expect("at least one step");
            if last >= final_error || worst_costs.is_empty() {
                final_error = final_error.max(last);
                worst_costs = recs.iter().map(|r| r.cost_trace).collect();
            }
        }
        let tail = worst_costs.get(n + 1..).unwrap_or(&[]);
        runs.push(DeltaRun {
            delta,
            epsilon,
            max_error,
            within_bound: max_error <= epsilon,
            final_error,
            converged: (config.mode == EstimatorMode::Cfie).then_some(final_error <= config.proxy_ratio * delta),
            trend: classify_trend(tail, tol.solver_tol),
            cost_traces: worst_costs,
        });
    }

    let lyapunov_gain = match &config.gain {
        Some(k) => Some(GainCheck {
            holds: lyapunov_gain_condition(model, k, tol)?,
            margin: lyapunov_gain_margin(model, k)?,
            gain: linalg::to_rows(k),
            induced_feasible: induced_violation <= tol.feas_tol,
            induced_max_violation: induced_violation,
        }),
        None => None,
    };
    Ok(StabilityReport {
        mode: config.mode,
        horizon: config.horizon,
        steps: config.steps,
        obs_index: n,
        noise_dominates_prior: noise_dominates_prior(model, tol),
        lyapunov_gain,
        deadbeat_cost: deadbeat.cost,
        bound_ratio: ratio,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{batch_reactor, validate_model};

    fn scalar(a: f64, c: f64, q: f64, r: f64, p: f64) -> SystemModel {
        SystemModel {
            A: DMatrix::from_element(1, 1, a),
            C: DMatrix::from_element(1, 1, c),
            Q: DMatrix::from_element(1, 1, q),
            R: DMatrix::from_element(1, 1, r),
            prior_mean: DVector::zeros(1),
            prior_cov: DMatrix::from_element(1, 1, p),
        }
    }

    #[test]
    fn prior_domination_examples() {
        let tol = ToleranceConfig::default();
        let mut m = scalar(1.0, 1.0, 2.0, 1.0, 1.0);
        assert!(noise_dominates_prior(&m, &tol));
        m.Q = m.prior_cov.clone();
        assert!(noise_dominates_prior(&m, &tol));
        let (br, _) = batch_reactor();
        assert!(!noise_dominates_prior(&br, &tol));
    }

    #[test]
    fn lyapunov_scalar_examples() {
        let tol = ToleranceConfig::default();
        let m = scalar(0.5, 1.0, 0.0, 0.0, 1.0);
        let k0 = DMatrix::zeros(1, 1);
        assert_eq!(lyapunov_gain_margin(&m, &k0).unwrap(), -0.75);
        assert!(lyapunov_gain_condition(&m, &k0, &tol).unwrap());
        // Ã = 0.5 + 1.0 = 1.5 is unstable
        let m = scalar(0.5, 1.0, 0.1, 0.0, 1.0);
        assert!(!lyapunov_gain_condition(&m, &DMatrix::from_element(1, 1, 1.0), &tol).unwrap());
        assert!(lyapunov_gain_margin(&m, &DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn trend_classification() {
        assert_eq!(classify_trend(&[1.0, 1.0, 2.0], 0.0), Trend::Nondecreasing);
        assert_eq!(classify_trend(&[3.0, 2.0, 2.0], 0.0), Trend::Nonincreasing);
        assert_eq!(classify_trend(&[1.0, 3.0, 2.0], 0.0), Trend::Mixed);
        assert_eq!(classify_trend(&[5.0, 5.0], 0.0), Trend::Nondecreasing);
        assert_eq!(classify_trend(&[1.0, 1.0 - 1e-12], 1e-9), Trend::Nondecreasing);
        assert_eq!(classify_trend(&[], 0.0), Trend::Nondecreasing);
    }

    #[test]
    fn bound_examples() {
        let p = DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, 3.0]));
        assert_eq!(observer_error_bound(2.0, &p, 1.0), 1.0);
        assert_eq!(
            observer_error_bound(8.0, &p, 1.0) * 2.0,
            observer_error_bound(8.0, &p, 2.0)
        );
    }

    #[test]
    fn candidate_gain_scalar_fixed_point() {
        let tol = ToleranceConfig::default();
        let m = validate_model(scalar(0.8, 1.0, 0.5, 0.3, 1.0), &tol).unwrap();
        let cg = candidate_gain(&m, 10_000, &tol).unwrap();
        assert!(cg.residual <= 1e-10);
        // scalar Riccati: p = a² p r / (p + r) + q
        let p = cg.riccati[(0, 0)];
        assert!((p - (0.64 * p * 0.3 / (p + 0.3) + 0.5)).abs() <= 1e-10);
        assert!((cg.gain[(0, 0)] + p * 0.8 / (p + 0.3)).abs() <= 1e-12);
    }

    #[test]
    fn candidate_gain_rejects_unobservable() {
        let tol = ToleranceConfig::default();
        let m = validate_model(scalar(0.8, 0.0, 0.5, 0.3, 1.0), &tol).unwrap();
        assert!(matches!(candidate_gain(&m, 100, &tol), Err(Error::NotObservable)));
    }

    #[test]
    fn deadbeat_on_nilpotent_plant() {
        let tol = ToleranceConfig::default();
        let m = scalar(0.0, 2.0, 0.1, 0.5, 1.0);
        let p = deadbeat_policy(&m, 4, &DMatrix::from_element(1, 1, 0.3), &tol).unwrap();
        assert_eq!(p.obs_index, 1);
        assert!(p.controls.alphas()[1..].iter().all(|a| a.amax() == 0.0));
        let traj = dual_rollout(&m, &p.controls).unwrap();
        assert!(traj.zs[1..].iter().all(|z| z.amax() == 0.0));
        assert!(deadbeat_policy(&m, 0, &DMatrix::zeros(1, 1), &tol).is_err());
    }

    #[test]
    fn directions_are_unit() {
        let dirs = sphere_directions(3);
        assert_eq!(dirs.len(), 8);
        assert!(dirs.iter().all(|v| (v.norm() - 1.0).abs() < 1e-15));
    }
}
