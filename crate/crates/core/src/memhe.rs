//! Minimum-energy moving-horizon estimator, the least-squares baseline.
//!
//! Over the window `y_{t−L} … y_t` it solves
//!
//! ```text
//!   min (χ − x̄)ᵀP⁻¹(χ − x̄) + Σ_k w_kᵀQ⁻¹w_k + Σ_k (y_k − C x_k)ᵀR⁻¹(y_k − C x_k)
//!   s.t. x_0 = χ,  x_{k+1} = A x_k + w_k,  x_k ∈ X
//! ```
//!
//! over `(χ, w_0 … w_{L−1})` and returns the window-terminal state. The
//! arrival pair is `(A x̂_{t−N−1}, A Σ_{t−N−1} Aᵀ + Q)` with Σ the filtered
//! covariance of a Kalman filter run alongside on the same data. Q must be
//! positive definite.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, ModelMatrix, Result};
use crate::kalman::{kf_predict, kf_update, GaussianBelief};
use crate::linalg::{is_pd, matrix_powers, symmetrize};
use crate::model::{PolyhedralSet, ToleranceConfig, ValidatedModel};
use crate::qp::{project_onto, ActiveSetSolver, Hessian, QpStatus, QuadraticProgram};

#[derive(Debug, Clone)]
pub struct MemheRecord {
    pub t: usize,
    pub x_hat: DVector<f64>,
    /// Least-squares objective at the returned point.
    pub objective: f64,
    pub status: QpStatus,
    pub active_rows: Vec<usize>,
    pub wall_time: Duration,
    pub fallback: bool,
}

fn spd_inverse(m: &DMatrix<f64>, which: ModelMatrix) -> Result<DMatrix<f64>> {
    let chol = symmetrize(m).cholesky().ok_or(Error::NotPd(which))?;
    Ok(symmetrize(&chol.inverse()))
}

#[derive(Debug, Clone)]
pub struct Memhe {
    model: ValidatedModel,
    constraint: Option<PolyhedralSet>,
    horizon: usize,
    tol: ToleranceConfig,
    q_inv: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    t: usize,
    window: VecDeque<DVector<f64>>,
    /// (x̂_s, filtered Σ_s) for s = t−N−1 … t−1.
    history: VecDeque<(DVector<f64>, DMatrix<f64>)>,
    kf: Option<GaussianBelief>,
}

impl Memhe {
    pub fn new(
        model: ValidatedModel,
        constraint: Option<PolyhedralSet>,
        horizon: usize,
        tol: &ToleranceConfig,
    ) -> Result<Self> {
        tol.validate()?;
        if !is_pd(&model.Q, tol.psd_tol) {
            return Err(Error::NotPd(ModelMatrix::Q));
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
        let q_inv = spd_inverse(&model.Q, ModelMatrix::Q)?;
        let r_inv = spd_inverse(&model.R, ModelMatrix::R)?;
        Ok(Memhe {
            model,
            constraint,
            horizon,
            tol: *tol,
            q_inv,
            r_inv,
            t: 0,
            window: VecDeque::new(),
            history: VecDeque::new(),
            kf: None,
        })
    }

    pub fn time(&self) -> usize {
        self.t
    }

    pub fn window(&self) -> impl ExactSizeIterator<Item = &DVector<f64>> {
        self.window.iter()
    }

    /// Arrival center and weight for the current window.
    fn arrival(&self, t: usize) -> (DVector<f64>, DMatrix<f64>) {
        if t <= self.horizon {
            return (self.model.prior_mean.clone(), self.model.prior_cov.clone());
        }
        let (x, s) = self.history.front().expect("history holds N+1 entries once t > N");
        let p = symmetrize(&(&self.model.A * s * self.model.A.transpose() + &self.model.Q));
        (&self.model.A * x, p)
    }

    fn program(
        &self,
        window: &[DVector<f64>],
        center: &DVector<f64>,
        weight: &DMatrix<f64>,
        constrained: bool,
    ) -> Result<(QuadraticProgram, Vec<DMatrix<f64>>)> {
        let m = &self.model;
        let d = m.state_dim();
        let l = window.len() - 1;
        let nv = d * (l + 1);
        let powers = matrix_powers(&m.A, l);
        // x_k = T_k v
        let maps: Vec<DMatrix<f64>> = (0..=l)
            .map(|k| {
                let mut t_k = DMatrix::zeros(d, nv);
                t_k.view_mut((0, 0), (d, d)).copy_from(&powers[k]);
                for j in 0..k {
                    t_k.view_mut((0, (j + 1) * d), (d, d)).copy_from(&powers[k - 1 - j]);
                }
                t_k
            })
            .collect();

        let p_inv = spd_inverse(weight, ModelMatrix::PriorCov)?;
        let mut hess = DMatrix::zeros(nv, nv);
        let mut lin = DVector::zeros(nv);
        hess.view_mut((0, 0), (d, d)).copy_from(&p_inv);
        lin.rows_mut(0, d).copy_from(&(-(&p_inv * center)));
        let mut constant = center.dot(&(&p_inv * center));
        for j in 0..l {
            let off = (j + 1) * d;
            hess.view_mut((off, off), (d, d)).copy_from(&self.q_inv);
        }
        for (t_k, y) in maps.iter().zip(window) {
            let ct = &m.C * t_k;
            let rct = &self.r_inv * &ct;
            hess += ct.transpose() * &rct;
            lin -= rct.transpose() * y;
            constant += y.dot(&(&self.r_inv * y));
        }
        let (g, bound) = match (&self.constraint, constrained) {
            (Some(set), true) => {
                let p = set.rows();
                let mut g = DMatrix::zeros(p * (l + 1), nv);
                let mut bound = DVector::zeros(p * (l + 1));
                for (k, t_k) in maps.iter().enumerate() {
                    g.view_mut((k * p, 0), (p, nv)).copy_from(&(&set.H * t_k));
                    bound.rows_mut(k * p, p).copy_from(&set.h);
                }
                (g, bound)
            }
            _ => (DMatrix::zeros(0, nv), DVector::zeros(0)),
        };
        let qp = QuadraticProgram {
            hessian: Hessian::Dense(symmetrize(&(hess * 2.0))),
            linear: lin * 2.0,
            constraints: g,
            bounds: bound,
            constant,
        };
        Ok((qp, maps))
    }

    pub fn step(&mut self, y: &DVector<f64>) -> Result<MemheRecord> {
        let m = &self.model;
        if y.len() != m.meas_dim() {
            return Err(Error::DimensionMismatch(format!(
                "measurement has length {}, expected {}",
                y.len(),
                m.meas_dim()
            )));
        }
        let start = Instant::now();
        let t = self.t;
        let kf = match &self.kf {
            None => kf_update(&GaussianBelief::prior(m), y, m)?,
            Some(b) => kf_update(&kf_predict(b, m)?, y, m)?,
        };
        let mut window = self.window.clone();
        window.push_back(y.clone());
        if window.len() > self.horizon + 1 {
            window.pop_front();
        }
        let window: Vec<DVector<f64>> = window.into();
        let (center, weight) = self.arrival(t);

        let solver = ActiveSetSolver::new(&self.tol);
        let (qp, maps) = self.program(&window, &center, &weight, true)?;
        let res = solver.solve(&qp)?;
        let terminal = maps.last().expect("window is nonempty");
        let (x_hat, objective, status, active_rows, fallback) = match res.status {
            QpStatus::Infeasible => {
                let (free, _) = self.program(&window, &center, &weight, false)?;
                let sol = solver.solve(&free)?;
                let set = self.constraint.as_ref().expect("infeasible only with a constraint");
                let x = project_onto(set, &(terminal * &sol.x), &self.tol)?;
                (x, sol.objective, QpStatus::Infeasible, Vec::new(), true)
            }
            status => (terminal * &res.x, res.objective, status, res.active, false),
        };

        self.history.push_back((x_hat.clone(), kf.cov.clone()));
        if self.history.len() > self.horizon + 1 {
            self.history.pop_front();
        }
        self.kf = Some(kf);
        self.window = window.into();
        self.t += 1;
        Ok(MemheRecord {
            t,
            x_hat,
            objective,
            status,
            active_rows,
            wall_time: start.elapsed(),
            fallback,
        })
    }

    pub fn run(&mut self, measurements: &[DVector<f64>]) -> Result<Vec<MemheRecord>> {
        measurements.iter().map(|y| self.step(y)).collect()
    }
}
