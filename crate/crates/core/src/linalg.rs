//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// (M + Mᵀ) / 2
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Extreme eigenvalues `(min, max)` of the symmetric part of `m`.
pub fn eig_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Relative slack used by the definiteness tests: `psd_tol · (1 + max |λ|)`.
pub fn definiteness_slack(m: &DMatrix<f64>, psd_tol: f64) -> f64 {
    let (lo, hi) = eig_extremes(m);
    psd_tol * (1.0 + lo.abs().max(hi.abs()))
}

pub fn is_psd(m: &DMatrix<f64>, psd_tol: f64) -> bool {
    let (lo, _) = eig_extremes(m);
    lo >= -definiteness_slack(m, psd_tol)
}

pub fn is_pd(m: &DMatrix<f64>, psd_tol: f64) -> bool {
    let (lo, _) = eig_extremes(m);
    lo > definiteness_slack(m, psd_tol)
}

/// Singular values of `m`, largest first.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().cloned().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Numerical rank with a cutoff relative to the largest singular value.
pub fn rank(m: &DMatrix<f64>, rank_tol: f64) -> usize {
    let sv = singular_values(m);
    match sv.first() {
        None => 0,
        Some(0.0) => 0,
        Some(&top) => sv.iter().filter(|&&s| s > rank_tol * top).count(),
    }
}

/// Moore–Penrose pseudoinverse via SVD, dropping singular values below
/// `rank_tol · σ_max`.
pub fn pseudoinverse(m: &DMatrix<f64>, rank_tol: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let top = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut out = DMatrix::zeros(c, r);
    if top == 0.0 {
        return out;
    }
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > rank_tol * top {
            // out += v_k u_kᵀ / s
            let vk = v_t.row(k).transpose();
            let uk = u.column(k);
            out += (vk * uk.transpose()) / s;
        }
    }
    out
}

/// `m^k` by repeated multiplication (k small in this crate).
pub fn matrix_power(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(m.nrows(), m.ncols());
    for _ in 0..k {
        out = &out * m;
    }
    out
}

/// Successive powers `[I, m, m², …, m^k]`.
pub fn matrix_powers(m: &DMatrix<f64>, k: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(k + 1);
    out.push(DMatrix::identity(m.nrows(), m.ncols()));
    for i in 0..k {
        let next = &out[i] * m;
        out.push(next);
    }
    out
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Build a matrix from row-major nested vectors.
pub fn from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rank_of_rank_deficient() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 1.0, 0.0]);
        assert_eq!(rank(&m, 1e-10), 2);
        assert_eq!(rank(&DMatrix::zeros(2, 2), 1e-10), 0);
    }

    #[test]
    fn pseudoinverse_full_row_rank() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.0, 1.0, -1.0]);
        let p = pseudoinverse(&m, 1e-10);
        assert_relative_eq!(&m * &p, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn pseudoinverse_penrose_conditions_on_singular() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let p = pseudoinverse(&m, 1e-10);
        assert_relative_eq!(&m * &p * &m, m.clone(), epsilon = 1e-10);
        assert_relative_eq!(&p * &m * &p, p.clone(), epsilon = 1e-10);
    }

    #[test]
    fn definiteness() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(is_psd(&m, 1e-9));
        assert!(!is_pd(&m, 1e-9));
        assert!(!is_psd(&(-m), 1e-9));
    }
}
