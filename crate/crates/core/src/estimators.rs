//! Full-information and moving-horizon estimators, with and without state
//! constraints.
//!
//! Every step solves the dual QP for the current measurement set and reads
//! the estimate and error covariance off the optimal gains. Moving-horizon
//! modes run the full-information problem while `t ≤ N`, then summarize
//! older data by propagating their own estimate from `t − N − 1`.
//!
//! FIE keeps every measurement, so memory and per-step cost grow with t.
//! Use MHE for long runs, or [`fie_fast_path`] when no constraint is
//! present.

use std::collections::VecDeque;
use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dual::{assemble_estimate, dual_cost, dual_rollout, DualControlSequence};
use crate::error::{Error, Result};
use crate::kalman::kf_run;
use crate::linalg::symmetrize;
use crate::model::{observability_index, PolyhedralSet, SystemModel, ToleranceConfig, ValidatedModel};
use crate::qp::{build_fie_qp, build_mhe_qp, project_onto, solve_qp, QpProblem, QpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorMode {
    Fie,
    Mhe,
    Cfie,
    Cmhe,
}

impl EstimatorMode {
    pub fn is_constrained(self) -> bool {
        matches!(self, EstimatorMode::Cfie | EstimatorMode::Cmhe)
    }

    pub fn is_moving_horizon(self) -> bool {
        matches!(self, EstimatorMode::Mhe | EstimatorMode::Cmhe)
    }

    pub fn name(self) -> &'static str {
        match self {
            EstimatorMode::Fie => "fie",
            EstimatorMode::Mhe => "mhe",
            EstimatorMode::Cfie => "cfie",
            EstimatorMode::Cmhe => "cmhe",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimateRecord {
    pub t: usize,
    pub x_hat: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub cost_trace: f64,
    pub status: QpStatus,
    pub active_rows: Vec<usize>,
    pub wall_time: Duration,
    /// Set when the constrained QP failed and the estimate is the projected
    /// unconstrained one.
    pub fallback: bool,
}

/// `(A Σ Aᵀ + Q, A x̂)`.
pub fn propagate_prior(
    sigma_prev: &DMatrix<f64>,
    xhat_prev: &DVector<f64>,
    model: &SystemModel,
) -> (DMatrix<f64>, DVector<f64>) {
    let sigma = symmetrize(&(&model.A * sigma_prev * model.A.transpose() + &model.Q));
    (sigma, &model.A * xhat_prev)
}

#[derive(Debug, Clone)]
pub struct Estimator {
    mode: EstimatorMode,
    horizon: usize,
    model: ValidatedModel,
    constraint: Option<PolyhedralSet>,
    tol: ToleranceConfig,
    obs_index: usize,
    t: usize,
    window: VecDeque<DVector<f64>>,
    /// Moving-horizon modes: (x̂_s, Σ_s) for s = t−N−1 … t−1.
    history: VecDeque<(DVector<f64>, DMatrix<f64>)>,
    last_controls: Option<DualControlSequence>,
}

impl Estimator {
    /// `horizon` is N for moving-horizon modes and ignored otherwise.
    pub fn new(
        mode: EstimatorMode,
        model: ValidatedModel,
        constraint: Option<PolyhedralSet>,
        horizon: usize,
        tol: &ToleranceConfig,
    ) -> Result<Self> {
        tol.validate()?;
        match (mode.is_constrained(), &constraint) {
            (true, None) => return Err(Error::InvalidConfig(format!("{} needs a constraint set", mode.name()))),
            (false, Some(_)) => {
                return Err(Error::InvalidConfig(format!(
                    "{} does not take a constraint set",
                    mode.name()
                )))
            }
            _ => {}
        }
        if let Some(c) = &constraint {
            if c.dim() != model.state_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "constraint has {} columns, state dimension is {}",
                    c.dim(),
                    model.state_dim()
                )));
            }
        }
        let obs_index = observability_index(&model.A, &model.C, tol)?;
        Ok(Estimator {
            mode,
            horizon,
            model,
            constraint,
            tol: *tol,
            obs_index,
            t: 0,
            window: VecDeque::new(),
            history: VecDeque::new(),
            last_controls: None,
        })
    }

    pub fn mode(&self) -> EstimatorMode {
        self.mode
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn obs_index(&self) -> usize {
        self.obs_index
    }

    /// Time index of the next measurement.
    pub fn time(&self) -> usize {
        self.t
    }

    /// Buffered measurements, oldest first.
    pub fn window(&self) -> impl ExactSizeIterator<Item = &DVector<f64>> {
        self.window.iter()
    }

    /// Optimal gains of the latest step, if it solved a QP.
    pub fn last_controls(&self) -> Option<&DualControlSequence> {
        self.last_controls.as_ref()
    }

    /// Arrival pair used for the window starting at `t − N`.
    fn arrival(&self, t: usize) -> (DVector<f64>, DMatrix<f64>, bool) {
        if !self.mode.is_moving_horizon() || t <= self.horizon {
            return (self.model.prior_mean.clone(), self.model.prior_cov.clone(), true);
        }
        let (x, s) = self.history.front().expect("history holds N+1 entries once t > N");
        let (sigma, mean) = propagate_prior(s, x, &self.model);
        (mean, sigma, false)
    }

    fn build(
        &self,
        constraint: Option<&PolyhedralSet>,
        window: &[DVector<f64>],
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
        full: bool,
    ) -> Result<QpProblem> {
        if full {
            build_fie_qp(&self.model, constraint, window, self.obs_index)
        } else {
            build_mhe_qp(&self.model, constraint, window, mean, cov)
        }
    }

    fn evaluate(
        &self,
        controls: &DualControlSequence,
        window: &[DVector<f64>],
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let traj = dual_rollout(&self.model, controls)?;
        let x = assemble_estimate(&traj, controls, mean, window)?;
        let cost = dual_cost(&self.model, cov, controls, &traj)?;
        Ok((x, cost.sigma))
    }

    pub fn step(&mut self, y: &DVector<f64>) -> Result<EstimateRecord> {
        if y.len() != self.model.meas_dim() {
            return Err(Error::DimensionMismatch(format!(
                "measurement has length {}, expected {}",
                y.len(),
                self.model.meas_dim()
            )));
        }
        let start = Instant::now();
        let t = self.t;
        let mut window = self.window.clone();
        window.push_back(y.clone());
        if self.mode.is_moving_horizon() && window.len() > self.horizon + 1 {
            window.pop_front();
        }
        let window: Vec<DVector<f64>> = window.into();
        let (mean, cov, full) = self.arrival(t);

        let problem = self.build(self.constraint.as_ref(), &window, &mean, &cov, full)?;
        let sol = solve_qp(&problem, &self.tol)?;
        let (x_hat, sigma, status, active_rows, fallback, controls) = match sol.status {
            QpStatus::Infeasible if self.mode == EstimatorMode::Cfie => return Err(Error::SolverInfeasible { t }),
            QpStatus::Infeasible => {
                let free = self.build(None, &window, &mean, &cov, full)?;
                let free_sol = solve_qp(&free, &self.tol)?;
                let (x, s) = self.evaluate(&free_sol.alphas, &window, &mean, &cov)?;
                let set = self.constraint.as_ref().expect("constrained mode");
                let x = project_onto(set, &x, &self.tol)?;
                (x, s, QpStatus::Infeasible, Vec::new(), true, None)
            }
            status => {
                let (x, s) = self.evaluate(&sol.alphas, &window, &mean, &cov)?;
                (x, s, status, sol.active_rows, false, Some(sol.alphas))
            }
        };

        if self.mode.is_moving_horizon() {
            self.history.push_back((x_hat.clone(), sigma.clone()));
            if self.history.len() > self.horizon + 1 {
                self.history.pop_front();
            }
        }
        self.window = window.into();
        self.last_controls = controls;
        self.t += 1;
        Ok(EstimateRecord {
            t,
            cost_trace: sigma.trace(),
            x_hat,
            sigma,
            status,
            active_rows,
            wall_time: start.elapsed(),
            fallback,
        })
    }

    pub fn run(&mut self, measurements: &[DVector<f64>]) -> Result<Vec<EstimateRecord>> {
        measurements.iter().map(|y| self.step(y)).collect()
    }
}

/// Unconstrained FIE through the Kalman recursion instead of a growing QP.
pub fn fie_fast_path(model: &ValidatedModel, measurements: &[DVector<f64>]) -> Result<Vec<EstimateRecord>> {
    let start = Instant::now();
    let beliefs = kf_run(model, measurements)?;
    let per_step = start.elapsed() / beliefs.len() as u32;
    Ok(beliefs
        .into_iter()
        .enumerate()
        .map(|(t, b)| EstimateRecord {
            t,
            cost_trace: b.cov.trace(),
            x_hat: b.mean,
            sigma: b.cov,
            status: QpStatus::Optimal,
            active_rows: Vec::new(),
            wall_time: per_step,
            fallback: false,
        })
        .collect())
}

/// CSV with columns `t, x_hat_0 … x_hat_{d−1}, cost_trace, status,
/// active_row_count`.
pub fn write_records_csv<W: Write>(records: &[EstimateRecord], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let d = records.first().map_or(0, |r| r.x_hat.len());
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|i| format!("x_hat_{i}")));
    header.extend(["cost_trace", "status", "active_row_count"].map(String::from));
    out.write_record(&header).map_err(csv_error)?;
    for r in records {
        let mut row = vec![r.t.to_string()];
        row.extend(r.x_hat.iter().map(|v| v.to_string()));
        row.push(r.cost_trace.to_string());
        row.push(if r.fallback {
            "fallback".into()
        } else {
            r.status.as_str().into()
        });
        row.push(r.active_rows.len().to_string());
        out.write_record(&row).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::kf_predict;
    use crate::kalman::GaussianBelief;
    use crate::model::{batch_reactor, validate_model};
    use approx::assert_relative_eq;

    fn reactor() -> (ValidatedModel, PolyhedralSet) {
        let (m, x) = batch_reactor();
        (validate_model(m, &ToleranceConfig::default()).unwrap(), x)
    }

    #[test]
    fn propagate_examples() {
        let m = SystemModel {
            A: DMatrix::from_element(1, 1, 2.0),
            C: DMatrix::from_element(1, 1, 1.0),
            Q: DMatrix::from_element(1, 1, 1.0),
            R: DMatrix::from_element(1, 1, 1.0),
            prior_mean: DVector::zeros(1),
            prior_cov: DMatrix::identity(1, 1),
        };
        let (s, x) = propagate_prior(&DMatrix::from_element(1, 1, 1.0), &DVector::from_element(1, 1.0), &m);
        assert_eq!((s[(0, 0)], x[0]), (5.0, 2.0));

        let mut id = m.clone();
        id.A = DMatrix::identity(1, 1);
        id.Q = DMatrix::zeros(1, 1);
        let (s, x) = propagate_prior(&DMatrix::from_element(1, 1, 0.7), &DVector::from_element(1, -3.0), &id);
        assert_eq!((s[(0, 0)], x[0]), (0.7, -3.0));
    }

    #[test]
    fn propagate_shares_kf_predict() {
        let (m, _) = reactor();
        let cov = DMatrix::from_fn(3, 3, |i, j| if i == j { 0.4 } else { 0.05 });
        let mean = DVector::from_column_slice(&[0.3, 1.2, 2.0]);
        let (s, x) = propagate_prior(&cov, &mean, &m);
        let p = kf_predict(&GaussianBelief::new(mean, cov), &m).unwrap();
        assert_eq!(s, p.cov);
        assert_eq!(x, p.mean);
    }

    #[test]
    fn mode_constraint_pairing_enforced() {
        let (m, x) = reactor();
        let tol = ToleranceConfig::default();
        assert!(Estimator::new(EstimatorMode::Cfie, m.clone(), None, 0, &tol).is_err());
        assert!(Estimator::new(EstimatorMode::Mhe, m.clone(), Some(x.clone()), 2, &tol).is_err());
        assert!(Estimator::new(
            EstimatorMode::Cmhe,
            m.clone(),
            Some(PolyhedralSet::nonnegative(2)),
            2,
            &tol
        )
        .is_err());
        let e = Estimator::new(EstimatorMode::Cmhe, m, Some(x), 2, &tol).unwrap();
        assert_eq!(e.obs_index(), 3);
    }

    #[test]
    fn fast_path_first_step_is_update() {
        let (m, _) = reactor();
        let y = DVector::from_element(1, 180.0);
        let recs = fie_fast_path(&m, std::slice::from_ref(&y)).unwrap();
        let post = crate::kalman::kf_update(&GaussianBelief::prior(&m), &y, &m).unwrap();
        assert_eq!(recs[0].x_hat, post.mean);
        assert_eq!(recs[0].cost_trace, post.cov.trace());
    }

    #[test]
    fn wrong_measurement_length_rejected() {
        let (m, _) = reactor();
        let mut e = Estimator::new(EstimatorMode::Fie, m, None, 0, &ToleranceConfig::default()).unwrap();
        assert!(e.step(&DVector::zeros(2)).is_err());
        assert_eq!(e.time(), 0);
    }

    #[test]
    fn csv_has_expected_columns() {
        let (m, _) = reactor();
        let ys: Vec<_> = (0..3).map(|i| DVector::from_element(1, 190.0 - i as f64)).collect();
        let recs = fie_fast_path(&m, &ys).unwrap();
        let mut buf = Vec::new();
        write_records_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,x_hat_0,x_hat_1,x_hat_2,cost_trace,status,active_row_count"
        );
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn cost_trace_matches_sigma() {
        let (m, x) = reactor();
        let mut e = Estimator::new(EstimatorMode::Cmhe, m, Some(x), 2, &ToleranceConfig::default()).unwrap();
        for i in 0..6 {
            let r = e.step(&DVector::from_element(1, 150.0 - 20.0 * i as f64)).unwrap();
            assert_relative_eq!(r.cost_trace, r.sigma.trace());
            assert_eq!(e.window().len(), i.min(2) + 1);
        }
    }
}
