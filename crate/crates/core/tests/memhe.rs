mod common;

use common::{reactor, simulate};
use dualmhe::kalman::{kf_run, GaussianBelief};
use dualmhe::memhe::Memhe;
use dualmhe::model::{PolyhedralSet, ToleranceConfig, ValidatedModel};
use nalgebra::{DMatrix, DVector};

fn tol() -> ToleranceConfig {
    ToleranceConfig::default()
}

/// Least squares over the window states x_0..x_L directly:
/// ‖x_0 − c‖²_{P⁻¹} + Σ‖x_{k+1} − A x_k‖²_{Q⁻¹} + Σ‖y_k − C x_k‖²_{R⁻¹}.
/// Returns the last state and the minimum.
fn window_least_squares(
    m: &ValidatedModel,
    window: &[DVector<f64>],
    center: &DVector<f64>,
    weight: &DMatrix<f64>,
) -> (DVector<f64>, f64) {
    let d = m.state_dim();
    let l = window.len() - 1;
    let nv = d * (l + 1);
    let whiten = |cov: &DMatrix<f64>| cov.clone().cholesky().unwrap().l().try_inverse().unwrap();
    let (wp, wq, wr) = (whiten(weight), whiten(&m.Q), whiten(&m.R));
    let mut rows: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::new();
    let mut first = DMatrix::zeros(d, nv);
    first.view_mut((0, 0), (d, d)).copy_from(&wp);
    rows.push((first, &wp * center));
    for k in 0..l {
        let mut r = DMatrix::zeros(d, nv);
        r.view_mut((0, (k + 1) * d), (d, d)).copy_from(&wq);
        r.view_mut((0, k * d), (d, d)).copy_from(&(-(&wq * &m.A)));
        rows.push((r, DVector::zeros(d)));
    }
    for (k, y) in window.iter().enumerate() {
        let mut r = DMatrix::zeros(y.len(), nv);
        r.view_mut((0, k * d), (y.len(), d)).copy_from(&(&wr * &m.C));
        rows.push((r, &wr * y));
    }
    let n_rows: usize = rows.iter().map(|(r, _)| r.nrows()).sum();
    let mut a = DMatrix::zeros(n_rows, nv);
    let mut b = DVector::zeros(n_rows);
    let mut off = 0;
    for (r, rhs) in rows {
        a.view_mut((off, 0), (r.nrows(), nv)).copy_from(&r);
        b.rows_mut(off, r.nrows()).copy_from(&rhs);
        off += r.nrows();
    }
    let sol = a.clone().svd(true, true).solve(&b, 1e-14).unwrap();
    let resid = (&a * &sol - b).norm_squared();
    (sol.rows(l * d, d).into_owned(), resid)
}

#[test]
fn unconstrained_memhe_is_kalman_and_window_least_squares() {
    let (m, _) = reactor();
    let (_, ys) = simulate(&m, 30, 17);
    let n = 4;
    let kf = kf_run(&m, &ys).unwrap();
    let recs = Memhe::new(m.clone(), None, n, &tol()).unwrap().run(&ys).unwrap();
    for (t, rec) in recs.iter().enumerate() {
        assert!((&rec.x_hat - &kf[t].mean).amax() <= 1e-6, "t = {t}");
        let start = t.saturating_sub(n);
        let (center, weight) = if t <= n {
            (m.prior_mean.clone(), m.prior_cov.clone())
        } else {
            let GaussianBelief { mean, cov } = &kf[start - 1];
            (&m.A * mean, &m.A * cov * m.A.transpose() + &m.Q)
        };
        let (x, obj) = window_least_squares(&m, &ys[start..=t], &center, &weight);
        assert!((&rec.x_hat - x).amax() <= 1e-6, "t = {t}");
        assert!(
            (rec.objective - obj).abs() <= 1e-6 * obj.max(1.0),
            "t = {t}: {} vs {obj}",
            rec.objective
        );
    }
}

#[test]
fn redundant_row_changes_nothing() {
    let (m, x) = reactor();
    let ys: Vec<DVector<f64>> = (0..20)
        .map(|t| DVector::from_element(1, if t % 3 == 0 { -25.0 } else { 10.0 }))
        .collect();
    let mut h = x.H.clone().insert_row(3, 0.0);
    h.row_mut(3)
        .copy_from(&DMatrix::from_row_slice(1, 3, &[-1.0, -1.0, -1.0]));
    let loose = PolyhedralSet::new(h, x.h.clone().insert_row(3, 100.0)).unwrap();
    let base = Memhe::new(m.clone(), Some(x), 4, &tol()).unwrap().run(&ys).unwrap();
    let more = Memhe::new(m, Some(loose), 4, &tol()).unwrap().run(&ys).unwrap();
    assert!(
        base.iter().any(|r| !r.active_rows.is_empty()),
        "constraints should bind on this data"
    );
    for (a, b) in base.iter().zip(&more) {
        assert!((a.objective - b.objective).abs() <= 1e-8 * a.objective.max(1.0));
        assert!((&a.x_hat - &b.x_hat).amax() <= 1e-8);
    }
}

#[test]
fn constraints_never_lower_the_startup_objective() {
    let (m, x) = reactor();
    let ys: Vec<DVector<f64>> = (0..5)
        .map(|t| DVector::from_element(1, if t % 2 == 0 { -30.0 } else { 5.0 }))
        .collect();
    let free = Memhe::new(m.clone(), None, 4, &tol()).unwrap().run(&ys).unwrap();
    let cons = Memhe::new(m, Some(x.clone()), 4, &tol()).unwrap().run(&ys).unwrap();
    // the windows and arrival terms coincide while t ≤ N
    for (a, b) in free.iter().zip(&cons) {
        assert!(b.objective >= a.objective - 1e-9);
        assert!(x.max_violation(&b.x_hat).unwrap() <= 1e-8);
    }
}
