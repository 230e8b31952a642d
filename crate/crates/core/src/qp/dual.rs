//! Assembly of the constrained dual problems as finite-dimensional QPs.
//!
//! Decision variables are the stacked gains. Ordering is column-major:
//! the variable for entry `(r, k)` of `α_i` sits at
//! `k · q(L+1) + i · q + r`. The trace objective separates into d
//! independent quadratics (one per column of the gains) that share one
//! Hessian; only the constraint rows couple the columns.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{kkt_residuals, ActiveSetSolver, Hessian, KktResiduals, QpStatus, QuadraticProgram, SolvePath};
use crate::dual::{DualAffineMap, DualControlSequence};
use crate::error::{Error, Result};
use crate::linalg::{self, symmetrize};
use crate::model::{PolyhedralSet, SystemModel, ToleranceConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpMetadata {
    /// L; the gains are α_0 … α_L.
    pub horizon: usize,
    pub state_dim: usize,
    pub meas_dim: usize,
    /// Lag j of the estimate constraint each row comes from.
    pub row_lag: Vec<usize>,
    /// Row of H each constraint row comes from.
    pub row_set_index: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// One block per state column, each q(L+1) square.
    pub hessian_blocks: Vec<DMatrix<f64>>,
    /// One vector per state column.
    pub linear_terms: Vec<DVector<f64>>,
    pub constraint_matrix: DMatrix<f64>,
    pub constraint_offset: DVector<f64>,
    pub constant: f64,
    pub meta: QpMetadata,
}

#[derive(Serialize)]
struct QpProblemDump<'a> {
    hessian_blocks: Vec<Vec<Vec<f64>>>,
    linear_terms: Vec<Vec<f64>>,
    constraint_matrix: Vec<Vec<f64>>,
    constraint_offset: Vec<f64>,
    constant: f64,
    meta: &'a QpMetadata,
}

impl QpProblem {
    /// Variables per column, q(L+1).
    pub fn block_len(&self) -> usize {
        self.meta.meas_dim * (self.meta.horizon + 1)
    }

    pub fn num_variables(&self) -> usize {
        self.meta.state_dim * self.block_len()
    }

    pub fn num_rows(&self) -> usize {
        self.constraint_matrix.nrows()
    }

    /// Position of `α_time[row, column]` in the variable vector.
    pub fn variable_index(&self, column: usize, time: usize, row: usize) -> usize {
        column * self.block_len() + time * self.meta.meas_dim + row
    }

    pub fn to_program(&self) -> QuadraticProgram {
        let mut linear = DVector::zeros(self.num_variables());
        let nb = self.block_len();
        for (k, c) in self.linear_terms.iter().enumerate() {
            linear.rows_mut(k * nb, nb).copy_from(c);
        }
        QuadraticProgram {
            hessian: Hessian::Blocks(self.hessian_blocks.clone()),
            linear,
            constraints: self.constraint_matrix.clone(),
            bounds: self.constraint_offset.clone(),
            constant: self.constant,
        }
    }

    pub fn alphas_from(&self, u: &DVector<f64>) -> DualControlSequence {
        let (q, d) = (self.meta.meas_dim, self.meta.state_dim);
        let alphas = (0..=self.meta.horizon)
            .map(|i| DMatrix::from_fn(q, d, |r, k| u[self.variable_index(k, i, r)]))
            .collect();
        DualControlSequence::new(alphas).expect("solver iterates are finite")
    }

    pub fn variables_from(&self, controls: &DualControlSequence) -> DVector<f64> {
        let mut u = DVector::zeros(self.num_variables());
        for (i, a) in controls.alphas().iter().enumerate() {
            for k in 0..self.meta.state_dim {
                for r in 0..self.meta.meas_dim {
                    u[self.variable_index(k, i, r)] = a[(r, k)];
                }
            }
        }
        u
    }

    pub fn kkt_residuals(&self, solution: &QpSolution) -> KktResiduals {
        kkt_residuals(
            &self.to_program(),
            &self.variables_from(&solution.alphas),
            &solution.active_rows,
        )
    }

    /// JSON dump for cross-checking with other solvers.
    pub fn to_json(&self) -> Result<String> {
        let dump = QpProblemDump {
            hessian_blocks: self.hessian_blocks.iter().map(linalg::to_rows).collect(),
            linear_terms: self.linear_terms.iter().map(|v| v.iter().cloned().collect()).collect(),
            constraint_matrix: linalg::to_rows(&self.constraint_matrix),
            constraint_offset: self.constraint_offset.iter().cloned().collect(),
            constant: self.constant,
            meta: &self.meta,
        };
        Ok(serde_json::to_string(&dump)?)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub alphas: DualControlSequence,
    pub status: QpStatus,
    /// Equals the trace of the error covariance at the returned gains.
    pub objective_value: f64,
    pub active_rows: Vec<usize>,
    pub kkt: KktResiduals,
    pub certificate: Option<DVector<f64>>,
    pub iterations: usize,
}

/// Shared Hessian plus per-column linear terms and constants of
/// `tr(z_Lᵀ P z_L) + Σ_{i<L} tr(z_iᵀ Q z_i) + Σ_{i≤L} tr(α_iᵀ R α_i)`.
fn cost_terms(
    model: &SystemModel,
    map: &DualAffineMap,
    terminal_cov: &DMatrix<f64>,
) -> (DMatrix<f64>, Vec<DVector<f64>>, f64) {
    let l = map.gain.len() - 1;
    let d = model.state_dim();
    let q = model.meas_dim();
    let nb = q * (l + 1);

    let m_l = &map.gain[l];
    let mut hess = m_l.transpose() * terminal_cov * m_l;
    for m_i in &map.gain[..l] {
        hess += m_i.transpose() * &model.Q * m_i;
    }
    for i in 0..=l {
        let mut blk = hess.view_mut((i * q, i * q), (q, q));
        blk += &model.R;
    }
    let hess = symmetrize(&(hess * 2.0));

    let mut linear = Vec::with_capacity(d);
    let mut constant = 0.0;
    for k in 0..d {
        let a_l = map.free[l].column(k);
        let mut c = m_l.transpose() * (terminal_cov * a_l);
        constant += a_l.dot(&(terminal_cov * a_l));
        for i in 0..l {
            let a_i = map.free[i].column(k);
            c += map.gain[i].transpose() * (&model.Q * a_i);
            constant += a_i.dot(&(&model.Q * a_i));
        }
        debug_assert_eq!(c.len(), nb);
        linear.push(c * 2.0);
    }
    (hess, linear, constant)
}

/// Rows of `H x̂ ≤ h` for the estimate `z_ℓᵀ x̄ − Σ_{i≤ℓ} α_iᵀ m_i`.
///
/// The estimate is `A^ℓ x̄ + (I_d ⊗ bᵀ) u` with the same coefficient vector
/// `b = M_ℓᵀ x̄ − [m_0; …; m_ℓ; 0]` in every column.
fn estimate_rows(
    set: &PolyhedralSet,
    map: &DualAffineMap,
    prefix: usize,
    prior_mean: &DVector<f64>,
    meas: &[&DVector<f64>],
    q: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let d = prior_mean.len();
    let nb = map.gain[0].ncols();
    let mut b = map.gain[prefix].transpose() * prior_mean;
    for (i, y) in meas.iter().enumerate() {
        let mut seg = b.rows_mut(i * q, q);
        seg -= *y;
    }
    let offset = map.free[prefix].transpose() * prior_mean;
    let p = set.rows();
    let mut g = DMatrix::zeros(p, d * nb);
    for r in 0..p {
        for k in 0..d {
            let coeff = set.H[(r, k)];
            if coeff != 0.0 {
                g.view_mut((r, k * nb), (1, nb)).copy_from(&(b.transpose() * coeff));
            }
        }
    }
    let bound = &set.h - &set.H * offset;
    (g, bound)
}

fn check_measurements(model: &SystemModel, ys: &[DVector<f64>]) -> Result<()> {
    if ys.is_empty() {
        return Err(Error::EmptyMeasurements);
    }
    if let Some(y) = ys.iter().find(|y| y.len() != model.meas_dim()) {
        return Err(Error::DimensionMismatch(format!(
            "measurement has length {}, expected {}",
            y.len(),
            model.meas_dim()
        )));
    }
    if let Some(y) = ys.iter().find(|y| y.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(format!("measurement {y:?}")));
    }
    Ok(())
}

fn check_set(model: &SystemModel, set: Option<&PolyhedralSet>) -> Result<()> {
    match set {
        Some(s) if s.dim() != model.state_dim() => Err(Error::DimensionMismatch(format!(
            "constraint has {} columns, state dimension is {}",
            s.dim(),
            model.state_dim()
        ))),
        _ => Ok(()),
    }
}

fn assemble(
    model: &SystemModel,
    map: &DualAffineMap,
    terminal_cov: &DMatrix<f64>,
    blocks: Vec<(usize, DMatrix<f64>, DVector<f64>)>,
) -> QpProblem {
    let l = map.gain.len() - 1;
    let d = model.state_dim();
    let (hess, linear, constant) = cost_terms(model, map, terminal_cov);
    let rows: usize = blocks.iter().map(|(_, g, _)| g.nrows()).sum();
    let mut g = DMatrix::zeros(rows, d * hess.nrows());
    let mut bound = DVector::zeros(rows);
    let mut row_lag = Vec::with_capacity(rows);
    let mut row_set_index = Vec::with_capacity(rows);
    let mut off = 0;
    for (lag, gb, hb) in blocks {
        let p = gb.nrows();
        g.view_mut((off, 0), (p, gb.ncols())).copy_from(&gb);
        bound.rows_mut(off, p).copy_from(&hb);
        row_lag.extend(std::iter::repeat_n(lag, p));
        row_set_index.extend(0..p);
        off += p;
    }
    QpProblem {
        hessian_blocks: vec![hess; d],
        linear_terms: linear,
        constraint_matrix: g,
        constraint_offset: bound,
        constant,
        meta: QpMetadata {
            horizon: l,
            state_dim: d,
            meas_dim: model.meas_dim(),
            row_lag,
            row_set_index,
        },
    }
}

/// Full-information problem at t = `measurements.len() − 1`.
///
/// With a constraint set, the estimate at lag j (gains α_0 … α_{t−j}
/// applied to y_0 … y_{t−j}) must lie in the set for j = 0 when t ≤ n and
/// for every j in 0..=t−n otherwise, n being the observability index.
pub fn build_fie_qp(
    model: &SystemModel,
    constraint: Option<&PolyhedralSet>,
    measurements: &[DVector<f64>],
    obs_index: usize,
) -> Result<QpProblem> {
    check_measurements(model, measurements)?;
    check_set(model, constraint)?;
    let t = measurements.len() - 1;
    let q = model.meas_dim();
    let map = DualAffineMap::new(model, t);
    let mut blocks = Vec::new();
    if let Some(set) = constraint {
        for lag in 0..=t.saturating_sub(obs_index) {
            let prefix = t - lag;
            let meas: Vec<&DVector<f64>> = (0..=prefix).map(|i| &measurements[prefix - i]).collect();
            let (g, h) = estimate_rows(set, &map, prefix, &model.prior_mean, &meas, q);
            blocks.push((lag, g, h));
        }
    }
    Ok(assemble(model, &map, &model.prior_cov, blocks))
}

/// Moving-horizon problem over `window` (`y_{t−N} … y_t`, oldest first)
/// with arrival pair `(prior_mean, terminal_cov)`.
pub fn build_mhe_qp(
    model: &SystemModel,
    constraint: Option<&PolyhedralSet>,
    window: &[DVector<f64>],
    prior_mean: &DVector<f64>,
    terminal_cov: &DMatrix<f64>,
) -> Result<QpProblem> {
    check_measurements(model, window)?;
    check_set(model, constraint)?;
    let d = model.state_dim();
    if prior_mean.len() != d || terminal_cov.shape() != (d, d) {
        return Err(Error::DimensionMismatch(
            "arrival pair does not match state dimension".into(),
        ));
    }
    let n = window.len() - 1;
    let q = model.meas_dim();
    let map = DualAffineMap::new(model, n);
    let mut blocks = Vec::new();
    if let Some(set) = constraint {
        let meas: Vec<&DVector<f64>> = (0..=n).map(|i| &window[n - i]).collect();
        let (g, h) = estimate_rows(set, &map, n, prior_mean, &meas, q);
        blocks.push((0, g, h));
    }
    Ok(assemble(model, &map, terminal_cov, blocks))
}

pub fn solve_qp(problem: &QpProblem, tol: &ToleranceConfig) -> Result<QpSolution> {
    solve_qp_with(problem, tol, SolvePath::Blockwise)
}

pub fn solve_qp_with(problem: &QpProblem, tol: &ToleranceConfig, path: SolvePath) -> Result<QpSolution> {
    let program = problem.to_program();
    let res = ActiveSetSolver::new(tol).with_path(path).solve(&program)?;
    let kkt = kkt_residuals(&program, &res.x, &res.active);
    Ok(QpSolution {
        alphas: problem.alphas_from(&res.x),
        status: res.status,
        objective_value: res.objective,
        active_rows: res.active,
        kkt,
        certificate: res.certificate,
        iterations: res.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::{dual_cost, dual_rollout};
    use crate::model::{batch_reactor, observability_index, validate_model, ValidatedModel};
    use approx::assert_relative_eq;

    fn reactor() -> (ValidatedModel, PolyhedralSet) {
        let (m, x) = batch_reactor();
        (validate_model(m, &ToleranceConfig::default()).unwrap(), x)
    }

    fn nominal(model: &SystemModel, x0: &DVector<f64>, steps: usize) -> Vec<DVector<f64>> {
        let mut x = x0.clone();
        (0..steps)
            .map(|_| {
                let y = &model.C * &x;
                x = &model.A * &x;
                y
            })
            .collect()
    }

    #[test]
    fn single_step_reproduces_kf_gain() {
        let (m, _) = reactor();
        let ys = vec![DVector::from_element(1, 190.0)];
        let qp = build_fie_qp(&m, None, &ys, 3).unwrap();
        assert_eq!(qp.num_rows(), 0);
        let sol = solve_qp(&qp, &ToleranceConfig::default()).unwrap();
        let c = &m.C;
        let p = &m.prior_cov;
        let gain = -(c * p * c.transpose() + &m.R).try_inverse().unwrap() * c * p;
        assert_relative_eq!(sol.alphas.alphas()[0], gain, epsilon = 1e-10);

        let mhe = build_mhe_qp(&m, None, &ys, &m.prior_mean, &m.prior_cov).unwrap();
        let sol2 = solve_qp(&mhe, &ToleranceConfig::default()).unwrap();
        assert_relative_eq!(sol2.alphas.alphas()[0], gain, epsilon = 1e-10);
    }

    #[test]
    fn row_and_variable_counts() {
        let (m, x) = reactor();
        let tol = ToleranceConfig::default();
        let n = observability_index(&m.A, &m.C, &tol).unwrap();
        let ys = nominal(&m, &m.prior_mean, 5);
        let qp = build_fie_qp(&m, Some(&x), &ys, n).unwrap();
        assert_eq!(qp.num_variables(), 15);
        assert_eq!(qp.num_rows(), 6);
        assert_eq!(qp.meta.row_lag, vec![0, 0, 0, 1, 1, 1]);

        let mhe = build_mhe_qp(&m, Some(&x), &ys, &m.prior_mean, &m.prior_cov).unwrap();
        assert_eq!(mhe.num_variables(), 15);
        assert_eq!(mhe.num_rows(), 3);

        let short = build_fie_qp(&m, Some(&x), &ys[..3], n).unwrap();
        assert_eq!(short.num_rows(), 3);
    }

    #[test]
    fn zero_gains_feasible_for_invariant_set() {
        // A ≥ 0 elementwise keeps the orthant invariant
        let (m, x) = reactor();
        let ys = nominal(&m, &DVector::from_column_slice(&[0.5, 2.0, 1.0]), 7);
        let qp = build_fie_qp(&m, Some(&x), &ys, 3).unwrap();
        let program = qp.to_program();
        assert!(program.max_violation(&DVector::zeros(qp.num_variables())) <= 0.0);
    }

    #[test]
    fn constraint_rows_evaluate_estimates() {
        let (m, x) = reactor();
        let ys = nominal(&m, &DVector::from_column_slice(&[0.5, 2.0, 1.0]), 6);
        let qp = build_fie_qp(&m, Some(&x), &ys, 3).unwrap();
        let controls = DualControlSequence::new(
            (0..6)
                .map(|i| DMatrix::from_row_slice(1, 3, &[0.01 * i as f64, -0.02, 0.003]))
                .collect(),
        )
        .unwrap();
        let u = qp.variables_from(&controls);
        let slack = qp.to_program().slack(&u);
        for (row, (&lag, &r)) in qp.meta.row_lag.iter().zip(&qp.meta.row_set_index).enumerate() {
            let prefix = 5 - lag;
            let sub = controls.truncated(prefix);
            let traj = dual_rollout(&m, &sub).unwrap();
            let est = crate::dual::assemble_estimate(&traj, &sub, &m.prior_mean, &ys[..=prefix]).unwrap();
            let want = (x.H.row(r) * &est)[0] - x.h[r];
            assert_relative_eq!(slack[row], want, epsilon = 1e-10);
        }
    }

    #[test]
    fn objective_matches_dual_cost() {
        let (m, x) = reactor();
        let tol = ToleranceConfig::default();
        let ys: Vec<DVector<f64>> = (0..6)
            .map(|i| DVector::from_element(1, 40.0 - 8.0 * i as f64))
            .collect();
        let qp = build_fie_qp(&m, Some(&x), &ys, 3).unwrap();
        let sol = solve_qp(&qp, &tol).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        let traj = dual_rollout(&m, &sol.alphas).unwrap();
        let cost = dual_cost(&m, &m.prior_cov, &sol.alphas, &traj).unwrap();
        assert_relative_eq!(sol.objective_value, cost.trace_value, max_relative = 1e-9);
    }

    #[test]
    fn json_dump_has_expected_keys() {
        let (m, x) = reactor();
        let ys = nominal(&m, &m.prior_mean, 2);
        let qp = build_fie_qp(&m, Some(&x), &ys, 3).unwrap();
        let v: serde_json::Value = serde_json::from_str(&qp.to_json().unwrap()).unwrap();
        for key in [
            "hessian_blocks",
            "linear_terms",
            "constraint_matrix",
            "constraint_offset",
            "constant",
            "meta",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["hessian_blocks"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn wrong_dimensions_rejected() {
        let (m, x) = reactor();
        assert!(build_fie_qp(&m, None, &[DVector::zeros(2)], 3).is_err());
        assert!(build_fie_qp(&m, Some(&PolyhedralSet::nonnegative(2)), &[DVector::zeros(1)], 3).is_err());
        assert!(build_mhe_qp(&m, Some(&x), &[DVector::zeros(1)], &DVector::zeros(2), &m.prior_cov).is_err());
    }
}
