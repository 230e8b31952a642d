//! Dense strictly convex quadratic programming.
//!
//! ```text
//!     minimize    ½ xᵀ H x + cᵀ x + κ
//!     subject to  G x ≤ g
//! ```
//!
//! Solved with the Goldfarb–Idnani dual active-set method: start at the
//! unconstrained minimizer and add violated rows one at a time while keeping
//! the multipliers of the working set nonnegative. H must be positive
//! definite. When H is block diagonal the factorization is done block by
//! block, but the working-set algebra always runs over the full vector
//! because constraint rows couple the blocks.

mod dual;

pub use dual::{build_fie_qp, build_mhe_qp, solve_qp, solve_qp_with, QpMetadata, QpProblem, QpSolution};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::max_abs;
use crate::model::{PolyhedralSet, ToleranceConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum Hessian {
    /// Block-diagonal Hessian given by its diagonal blocks.
    Blocks(Vec<DMatrix<f64>>),
    Dense(DMatrix<f64>),
}

impl Hessian {
    pub fn dim(&self) -> usize {
        match self {
            Hessian::Blocks(b) => b.iter().map(|m| m.nrows()).sum(),
            Hessian::Dense(m) => m.nrows(),
        }
    }

    pub fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Hessian::Dense(m) => m * x,
            Hessian::Blocks(blocks) => {
                let mut out = DVector::zeros(x.len());
                let mut off = 0;
                for b in blocks {
                    let n = b.nrows();
                    out.rows_mut(off, n).copy_from(&(b * x.rows(off, n)));
                    off += n;
                }
                out
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Hessian::Dense(m) => m.clone(),
            Hessian::Blocks(blocks) => {
                let n = self.dim();
                let mut out = DMatrix::zeros(n, n);
                let mut off = 0;
                for b in blocks {
                    let k = b.nrows();
                    out.view_mut((off, off), (k, k)).copy_from(b);
                    off += k;
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub hessian: Hessian,
    pub linear: DVector<f64>,
    /// G, one row per inequality.
    pub constraints: DMatrix<f64>,
    /// g
    pub bounds: DVector<f64>,
    pub constant: f64,
}

impl QuadraticProgram {
    pub fn unconstrained(hessian: Hessian, linear: DVector<f64>) -> Self {
        let n = linear.len();
        QuadraticProgram {
            hessian,
            linear,
            constraints: DMatrix::zeros(0, n),
            bounds: DVector::zeros(0),
            constant: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&self.hessian.mul(x)) + self.linear.dot(x) + self.constant
    }

    /// `Gx − g`
    pub fn slack(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.constraints * x - &self.bounds
    }

    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        self.slack(x).iter().fold(0.0, |acc, v| acc.max(*v))
    }

    /// Same program with a single dense Hessian.
    pub fn densified(&self) -> Self {
        QuadraticProgram {
            hessian: Hessian::Dense(self.hessian.to_dense()),
            ..self.clone()
        }
    }

    fn check(&self) -> Result<()> {
        let n = self.dim();
        if self.hessian.dim() != n || self.constraints.ncols() != n || self.constraints.nrows() != self.bounds.len() {
            return Err(Error::DimensionMismatch(format!(
                "hessian {} / linear {} / constraints {:?} / bounds {}",
                self.hessian.dim(),
                n,
                self.constraints.shape(),
                self.bounds.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

impl QpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::MaxIterations => "max_iterations",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolvePath {
    /// Factor each diagonal block separately.
    #[default]
    Blockwise,
    /// Factor the assembled Hessian as one dense matrix.
    Dense,
}

#[derive(Debug, Clone)]
pub struct ActiveSetResult {
    pub x: DVector<f64>,
    pub status: QpStatus,
    pub objective: f64,
    /// Working set at termination, sorted.
    pub active: Vec<usize>,
    /// One entry per constraint row; zero off the working set.
    pub multipliers: DVector<f64>,
    /// For `Infeasible`: y ≥ 0 with Gᵀy = 0 and gᵀy < 0.
    pub certificate: Option<DVector<f64>>,
    pub iterations: usize,
}

/// Lower Cholesky factor of H, possibly block diagonal.
enum Factor {
    Blocks(Vec<DMatrix<f64>>),
    Dense(DMatrix<f64>),
}

impl Factor {
    fn new(h: &Hessian, path: SolvePath) -> Result<Self> {
        let chol = |m: &DMatrix<f64>| m.clone().cholesky().map(|c| c.l()).ok_or(Error::HessianNotPd);
        match (h, path) {
            (Hessian::Blocks(blocks), SolvePath::Blockwise) => {
                Ok(Factor::Blocks(blocks.iter().map(chol).collect::<Result<Vec<_>>>()?))
            }
            (Hessian::Dense(m), _) => Ok(Factor::Dense(chol(m)?)),
            (h, SolvePath::Dense) => Ok(Factor::Dense(chol(&h.to_dense())?)),
        }
    }

    /// L⁻¹ v
    fn solve_l(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Factor::Dense(l) => l.solve_lower_triangular(v).expect("nonsingular factor"),
            Factor::Blocks(ls) => {
                let mut out = v.clone();
                let mut off = 0;
                for l in ls {
                    let n = l.nrows();
                    let part = l
                        .solve_lower_triangular(&v.rows(off, n).into_owned())
                        .expect("nonsingular factor");
                    out.rows_mut(off, n).copy_from(&part);
                    off += n;
                }
                out
            }
        }
    }

    /// L⁻ᵀ v
    fn solve_lt(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Factor::Dense(l) => l.tr_solve_lower_triangular(v).expect("nonsingular factor"),
            Factor::Blocks(ls) => {
                let mut out = v.clone();
                let mut off = 0;
                for l in ls {
                    let n = l.nrows();
                    let part = l
                        .tr_solve_lower_triangular(&v.rows(off, n).into_owned())
                        .expect("nonsingular factor");
                    out.rows_mut(off, n).copy_from(&part);
                    off += n;
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ActiveSetSolver {
    pub feas_tol: f64,
    pub max_iterations: Option<usize>,
    pub path: SolvePath,
}

impl ActiveSetSolver {
    pub fn new(tol: &ToleranceConfig) -> Self {
        ActiveSetSolver {
            feas_tol: tol.feas_tol,
            max_iterations: None,
            path: SolvePath::Blockwise,
        }
    }

    pub fn with_path(mut self, path: SolvePath) -> Self {
        self.path = path;
        self
    }

    pub fn solve(&self, qp: &QuadraticProgram) -> Result<ActiveSetResult> {
        qp.check()?;
        let n = qp.dim();
        let m = qp.num_constraints();
        let factor = Factor::new(&qp.hessian, self.path)?;
        let max_iter = self.max_iterations.unwrap_or(10 * (n + m) + 100);
        // rows are added once they are violated by more than this
        let add_tol = 1e-2 * self.feas_tol;

        // unconstrained minimizer −H⁻¹c
        let mut x = -factor.solve_lt(&factor.solve_l(&qp.linear));
        let mut active: Vec<usize> = Vec::new();
        let mut lambda: Vec<f64> = Vec::new();
        // L⁻¹ n_j for every row, computed lazily
        let mut scaled_rows: Vec<Option<DVector<f64>>> = vec![None; m];
        let scaled = |j: usize, cache: &mut Vec<Option<DVector<f64>>>| -> DVector<f64> {
            if cache[j].is_none() {
                cache[j] = Some(factor.solve_l(&qp.constraints.row(j).transpose()));
            }
            cache[j].clone().unwrap()
        };

        let mut iterations = 0;
        loop {
            // most violated row outside the working set
            let slack = qp.slack(&x);
            let mut pick: Option<(usize, f64)> = None;
            for j in 0..m {
                if slack[j] > add_tol && !active.contains(&j) && pick.is_none_or(|(_, v)| slack[j] > v) {
                    pick = Some((j, slack[j]));
                }
            }
            let Some((p, mut violation)) = pick else {
                return Ok(self.finish(qp, x, active, lambda, QpStatus::Optimal, None, iterations));
            };
            let n_p = qp.constraints.row(p).transpose();
            let np_scaled = scaled(p, &mut scaled_rows);
            let mut lambda_p = 0.0;

            loop {
                iterations += 1;
                if iterations > max_iter {
                    return Ok(self.finish(qp, x, active, lambda, QpStatus::MaxIterations, None, iterations));
                }
                // r = argmin ‖Ñ r − ñ_p‖, resid = ñ_p − Ñ r
                let (r, resid) = if active.is_empty() {
                    (DVector::zeros(0), np_scaled.clone())
                } else {
                    let cols: Vec<DVector<f64>> = active.iter().map(|&j| scaled(j, &mut scaled_rows)).collect();
                    let n_tilde = DMatrix::from_columns(&cols);
                    let qr = n_tilde.clone().qr();
                    let rhs = qr.q().transpose() * &np_scaled;
                    let r = qr
                        .r()
                        .solve_upper_triangular(&rhs)
                        .expect("working set is linearly independent");
                    let resid = &np_scaled - &n_tilde * &r;
                    (r, resid)
                };
                let dependent = resid.norm() <= 1e-10 * np_scaled.norm().max(f64::MIN_POSITIVE);

                // largest dual step keeping working-set multipliers nonnegative
                let mut dual_block: Option<(usize, f64)> = None;
                for (k, &rk) in r.iter().enumerate() {
                    if rk > 0.0 {
                        let step = lambda[k] / rk;
                        if dual_block.is_none_or(|(_, s)| step < s) {
                            dual_block = Some((k, step));
                        }
                    }
                }

                if dependent {
                    let Some((k, step)) = dual_block else {
                        let mut y = DVector::zeros(m);
                        y[p] = 1.0;
                        for (i, &j) in active.iter().enumerate() {
                            y[j] = -r[i];
                        }
                        return Ok(self.finish(qp, x, active, lambda, QpStatus::Infeasible, Some(y), iterations));
                    };
                    for (i, l) in lambda.iter_mut().enumerate() {
                        *l -= step * r[i];
                    }
                    lambda_p += step;
                    active.remove(k);
                    lambda.remove(k);
                    continue;
                }

                let z = factor.solve_lt(&resid);
                let curvature = resid.norm_squared(); // = n_pᵀ z
                let primal_step = violation / curvature;
                match dual_block {
                    Some((k, step)) if step < primal_step => {
                        x -= &z * step;
                        for (i, l) in lambda.iter_mut().enumerate() {
                            *l -= step * r[i];
                        }
                        lambda_p += step;
                        violation = n_p.dot(&x) - qp.bounds[p];
                        active.remove(k);
                        lambda.remove(k);
                    }
                    _ => {
                        x -= &z * primal_step;
                        for (i, l) in lambda.iter_mut().enumerate() {
                            *l = (*l - primal_step * r[i]).max(0.0);
                        }
                        lambda_p += primal_step;
                        active.push(p);
                        lambda.push(lambda_p);
                        break;
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        qp: &QuadraticProgram,
        x: DVector<f64>,
        active: Vec<usize>,
        lambda: Vec<f64>,
        mut status: QpStatus,
        certificate: Option<DVector<f64>>,
        iterations: usize,
    ) -> ActiveSetResult {
        let (x, lambda) = if status == QpStatus::Optimal && !active.is_empty() {
            refine(qp, x, &active, lambda)
        } else {
            (x, lambda)
        };
        if status == QpStatus::Optimal && qp.max_violation(&x) > self.feas_tol {
            status = QpStatus::MaxIterations;
        }
        let mut multipliers = DVector::zeros(qp.num_constraints());
        for (&j, &l) in active.iter().zip(&lambda) {
            multipliers[j] = l;
        }
        let mut active = active;
        active.sort_unstable();
        ActiveSetResult {
            objective: qp.objective(&x),
            x,
            status,
            active,
            multipliers,
            certificate,
            iterations,
        }
    }
}

/// Newton corrections on the equality-constrained KKT system of the final
/// working set. The incremental updates leave rounding error on the active
/// rows that is amplified by large multipliers; a correction is kept only if
/// it shrinks the residual and leaves the multipliers nonnegative.
fn refine(
    qp: &QuadraticProgram,
    mut x: DVector<f64>,
    active: &[usize],
    mut lambda: Vec<f64>,
) -> (DVector<f64>, Vec<f64>) {
    let n = qp.dim();
    let k = active.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&qp.hessian.to_dense());
    for (i, &j) in active.iter().enumerate() {
        let row = qp.constraints.row(j);
        kkt.view_mut((n + i, 0), (1, n)).copy_from(&row);
        kkt.view_mut((0, n + i), (n, 1)).copy_from(&row.transpose());
    }
    let lu = kkt.clone().lu();
    let residual = |x: &DVector<f64>, lambda: &[f64]| -> DVector<f64> {
        let mut sol = DVector::zeros(n + k);
        sol.rows_mut(0, n).copy_from(x);
        for (i, l) in lambda.iter().enumerate() {
            sol[n + i] = *l;
        }
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&qp.linear));
        for (i, &j) in active.iter().enumerate() {
            rhs[n + i] = qp.bounds[j];
        }
        &kkt * sol - rhs
    };
    let mut res = residual(&x, &lambda);
    for _ in 0..2 {
        let Some(step) = lu.solve(&res) else { break };
        let cand_x = &x - step.rows(0, n);
        let cand_l: Vec<f64> = lambda.iter().enumerate().map(|(i, l)| l - step[n + i]).collect();
        if cand_l.iter().any(|&l| l < 0.0) {
            break;
        }
        let cand_res = residual(&cand_x, &cand_l);
        if cand_res.amax() >= res.amax() || qp.max_violation(&cand_x) > qp.max_violation(&x).max(0.0) {
            break;
        }
        x = cand_x;
        lambda = cand_l;
        res = cand_res;
    }
    (x, lambda)
}

/// Residuals of the KKT conditions at `x` for working set `active`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct KktResiduals {
    /// ‖Hx + c + G_Aᵀλ‖∞
    pub stationarity: f64,
    /// ‖max(Gx − g, 0)‖∞
    pub primal_violation: f64,
    /// max |λ_i (Gx − g)_i|
    pub complementarity: f64,
    /// Recovered multipliers for the working-set rows, in `active` order.
    #[serde(skip)]
    pub multipliers: Vec<f64>,
}

/// KKT residuals with multipliers recovered by nonnegative least squares on
/// the working-set rows.
pub fn kkt_residuals(qp: &QuadraticProgram, x: &DVector<f64>, active: &[usize]) -> KktResiduals {
    let grad = qp.hessian.mul(x) + &qp.linear;
    let slack = qp.slack(x);
    let primal_violation = slack.iter().fold(0.0, |acc: f64, v| acc.max(*v));
    if active.is_empty() {
        return KktResiduals {
            stationarity: max_abs(&grad),
            primal_violation,
            complementarity: 0.0,
            multipliers: Vec::new(),
        };
    }
    let cols: Vec<DVector<f64>> = active.iter().map(|&j| qp.constraints.row(j).transpose()).collect();
    let g_a = DMatrix::from_columns(&cols);
    let lambda = nnls(&g_a, &(-&grad));
    let stationarity = max_abs(&(&grad + &g_a * &lambda));
    let complementarity = active
        .iter()
        .zip(lambda.iter())
        .fold(0.0, |acc: f64, (&j, &l)| acc.max((l * slack[j]).abs()));
    KktResiduals {
        stationarity,
        primal_violation,
        complementarity,
        multipliers: lambda.iter().cloned().collect(),
    }
}

/// Lawson–Hanson nonnegative least squares: min ‖Aλ − b‖ s.t. λ ≥ 0.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let k = a.ncols();
    let mut x = DVector::zeros(k);
    let mut passive = vec![false; k];
    let tol = 1e-12 * a.amax().max(1.0) * b.amax().max(1.0);

    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..k).filter(|&i| passive[i]).collect();
        let mut out = DVector::zeros(k);
        if idx.is_empty() {
            return out;
        }
        let sub = DMatrix::from_columns(&idx.iter().map(|&i| a.column(i).into_owned()).collect::<Vec<_>>());
        let sol = sub.svd(true, true).solve(b, 1e-14).expect("svd solve");
        for (pos, &i) in idx.iter().enumerate() {
            out[i] = sol[pos];
        }
        out
    };

    for _ in 0..(3 * k + 10) {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..k)
            .filter(|&i| !passive[i] && w[i] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let s = solve_passive(&passive);
            if (0..k).filter(|&i| passive[i]).all(|i| s[i] > 0.0) {
                x = s;
                break;
            }
            let mut alpha = 1.0f64;
            for i in 0..k {
                if passive[i] && s[i] <= 0.0 {
                    alpha = alpha.min(x[i] / (x[i] - s[i]));
                }
            }
            x += (s - &x) * alpha;
            for i in 0..k {
                if passive[i] && x[i].abs() <= 1e-15 {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x
}

/// Euclidean projection of `x` onto a polyhedron.
pub fn project_onto(set: &PolyhedralSet, x: &DVector<f64>, tol: &ToleranceConfig) -> Result<DVector<f64>> {
    let d = set.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "point has dimension {}, set has {d}",
            x.len()
        )));
    }
    let qp = QuadraticProgram {
        hessian: Hessian::Dense(DMatrix::identity(d, d)),
        linear: -x,
        constraints: set.H.clone(),
        bounds: set.h.clone(),
        constant: 0.0,
    };
    let res = ActiveSetSolver::new(tol).solve(&qp)?;
    match res.status {
        QpStatus::Optimal => Ok(res.x),
        _ => Err(Error::EmptyConstraintSet),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tol() -> ToleranceConfig {
        ToleranceConfig::default()
    }

    #[test]
    fn textbook_active_constraint() {
        // min x² s.t. x ≥ 1
        let qp = QuadraticProgram {
            hessian: Hessian::Dense(DMatrix::from_element(1, 1, 2.0)),
            linear: DVector::zeros(1),
            constraints: DMatrix::from_element(1, 1, -1.0),
            bounds: DVector::from_element(1, -1.0),
            constant: 0.0,
        };
        let res = ActiveSetSolver::new(&tol()).solve(&qp).unwrap();
        assert_eq!(res.status, QpStatus::Optimal);
        assert_relative_eq!(res.x[0], 1.0, epsilon = 1e-14);
        assert_eq!(res.active, vec![0]);
        let kkt = kkt_residuals(&qp, &res.x, &res.active);
        assert!(kkt.stationarity <= 1e-9 && kkt.primal_violation <= 1e-9 && kkt.complementarity <= 1e-9);
        assert_relative_eq!(kkt.multipliers[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn stationarity_grows_with_perturbation() {
        let h = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let qp = QuadraticProgram::unconstrained(Hessian::Dense(h), DVector::from_column_slice(&[1.0, -2.0]));
        let res = ActiveSetSolver::new(&tol()).solve(&qp).unwrap();
        let base = kkt_residuals(&qp, &res.x, &[]).stationarity;
        assert!(base <= 1e-12);
        for eps in [1e-3, 2e-3] {
            let mut x = res.x.clone();
            x[0] += eps;
            let st = kkt_residuals(&qp, &x, &[]).stationarity;
            // gradient changes by H e_0 eps
            assert_relative_eq!(st, 4.0 * eps, max_relative = 1e-6);
        }
    }

    #[test]
    fn primal_violation_matches_definition() {
        let qp = QuadraticProgram {
            hessian: Hessian::Dense(DMatrix::identity(2, 2)),
            linear: DVector::zeros(2),
            constraints: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            bounds: DVector::from_column_slice(&[0.5, 2.0]),
            constant: 0.0,
        };
        let x = DVector::from_column_slice(&[1.25, 1.0]);
        assert_relative_eq!(kkt_residuals(&qp, &x, &[]).primal_violation, 0.75);
        assert_relative_eq!(qp.max_violation(&x), 0.75);
    }

    #[test]
    fn infeasible_has_farkas_certificate() {
        // x ≤ 0 and x ≥ 1
        let qp = QuadraticProgram {
            hessian: Hessian::Dense(DMatrix::identity(1, 1)),
            linear: DVector::zeros(1),
            constraints: DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
            bounds: DVector::from_column_slice(&[0.0, -1.0]),
            constant: 0.0,
        };
        let res = ActiveSetSolver::new(&tol()).solve(&qp).unwrap();
        assert_eq!(res.status, QpStatus::Infeasible);
        let y = res.certificate.unwrap();
        assert!(y.iter().all(|v| *v >= 0.0));
        assert!((qp.constraints.transpose() * &y).amax() <= 1e-12);
        assert!(qp.bounds.dot(&y) < 0.0);
    }

    #[test]
    fn projection_onto_orthant() {
        let set = PolyhedralSet::nonnegative(3);
        let p = project_onto(&set, &DVector::from_column_slice(&[-1.0, 2.0, -0.5]), &tol()).unwrap();
        assert_relative_eq!(p, DVector::from_column_slice(&[0.0, 2.0, 0.0]), epsilon = 1e-14);
    }

    #[test]
    fn nnls_recovers_nonnegative_solution() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_column_slice(&[1.0, -1.0, 0.0]);
        let x = nnls(&a, &b);
        assert!(x.iter().all(|v| *v >= 0.0));
        assert_relative_eq!(x, DVector::from_column_slice(&[0.5, 0.0]), epsilon = 1e-12);
    }

    fn random_block_qp(seed: &[f64], rows: usize) -> QuadraticProgram {
        // two 3×3 SPD blocks, 6 variables
        let mut it = seed.iter().cloned();
        let mut next = || it.next().unwrap();
        let mut blocks = Vec::new();
        for _ in 0..2 {
            let l = DMatrix::from_fn(3, 3, |_, _| next());
            blocks.push(&l * l.transpose() + DMatrix::identity(3, 3) * 0.5);
        }
        let linear = DVector::from_fn(6, |_, _| next());
        let constraints = DMatrix::from_fn(rows, 6, |_, _| next());
        let bounds = DVector::from_fn(rows, |_, _| next());
        QuadraticProgram {
            hessian: Hessian::Blocks(blocks),
            linear,
            constraints,
            bounds,
            constant: 0.0,
        }
    }

    proptest! {
        #[test]
        fn blockwise_and_dense_paths_agree(seed in proptest::collection::vec(-1.0f64..1.0, 18 + 6 + 24 + 4)) {
            let qp = random_block_qp(&seed, 4);
            let a = ActiveSetSolver::new(&tol()).solve(&qp).unwrap();
            let b = ActiveSetSolver::new(&tol()).with_path(SolvePath::Dense).solve(&qp).unwrap();
            prop_assert_eq!(a.status, b.status);
            if a.status == QpStatus::Optimal {
                prop_assert!((&a.x - &b.x).amax() <= 1e-8);
            }
        }

        #[test]
        fn unconstrained_equals_normal_equations(seed in proptest::collection::vec(-1.0f64..1.0, 18 + 6)) {
            let qp = random_block_qp(&seed, 0);
            let res = ActiveSetSolver::new(&tol()).solve(&qp).unwrap();
            let direct = qp.hessian.to_dense().lu().solve(&(-&qp.linear)).unwrap();
            prop_assert!((&res.x - direct).amax() <= 1e-9);
        }

        #[test]
        fn redundant_row_keeps_minimizer(seed in proptest::collection::vec(-1.0f64..1.0, 18 + 6 + 12 + 2), scale in 1.0f64..3.0) {
            let qp = random_block_qp(&seed, 2);
            let base = ActiveSetSolver::new(&tol()).solve(&qp).unwrap();
            prop_assume!(base.status == QpStatus::Optimal);
            // scaled copy of row 0 with a looser bound is implied by row 0
            let mut g = qp.constraints.clone().insert_row(2, 0.0);
            let row0 = qp.constraints.row(0) * scale;
            g.row_mut(2).copy_from(&row0);
            let mut bounds = qp.bounds.clone().insert_row(2, 0.0);
            bounds[2] = qp.bounds[0] * scale + 0.1;
            let aug = QuadraticProgram { constraints: g, bounds, ..qp.clone() };
            let res = ActiveSetSolver::new(&tol()).solve(&aug).unwrap();
            prop_assert_eq!(res.status, QpStatus::Optimal);
            prop_assert!((&res.x - &base.x).amax() <= tol().solver_tol);
        }
    }
}
