//! Dense complex helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn spectral_norm(a: &CMat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0, |m: f64, &s| m.max(s))
}

pub fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0, |m: f64, z| m.max(z.norm()))
}

/// `(A + A*) / 2`.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()) * c(0.5, 0.0)
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(a: &CMat) -> Vec<f64> {
    let mut ev: Vec<f64> = hermitian_part(a).symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

/// Complex eigenvalues via the Schur form; falls back to an empty list if the
/// iteration does not converge.
pub fn eigenvalues(a: &CMat) -> Vec<Complex64> {
    a.clone()
        .schur()
        .eigenvalues()
        .map(|v| v.iter().copied().collect())
        .unwrap_or_default()
}

/// Singular values, descending.
pub fn singular_values(a: &CMat) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Number of singular values above `tol · σ_max`.
pub fn numerical_rank(a: &CMat, tol: f64) -> usize {
    let s = singular_values(a);
    let top = s.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > tol * top).count()
}

/// Orthonormal basis (columns) of the numerical null space, threshold
/// `tol · max(σ_max, 1)`.
pub fn null_space(a: &CMat, tol: f64) -> CMat {
    let n = a.ncols();
    // pad to square so the SVD returns a full right basis
    let rows = a.nrows().max(n);
    let mut sq = CMat::zeros(rows, n);
    sq.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
    let svd = sq.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let top = svd.singular_values.iter().fold(0.0_f64, |m, &s| m.max(s)).max(1.0);
    let cols: Vec<CVec> = (0..n)
        .filter(|&i| svd.singular_values[i] <= tol * top)
        .map(|i| v_t.row(i).adjoint())
        .collect();
    if cols.is_empty() {
        CMat::zeros(n, 0)
    } else {
        CMat::from_columns(&cols)
    }
}

/// Completes the orthonormal columns of `u` to a unitary matrix.
pub fn complete_basis(u: &CMat) -> CMat {
    let n = u.nrows();
    let k = u.ncols();
    let mut cols: Vec<CVec> = (0..k).map(|i| u.column(i).into_owned()).collect();
    for e in 0..n {
        if cols.len() == n {
            break;
        }
        let mut v = CVec::zeros(n);
        v[e] = c(1.0, 0.0);
        for _ in 0..2 {
            for q in &cols {
                let proj = q.dotc(&v);
                v -= q * proj;
            }
        }
        let nv = v.norm();
        if nv > 1e-8 {
            cols.push(v / c(nv, 0.0));
        }
    }
    CMat::from_columns(&cols)
}

/// Unitary `R` minimising `‖U R − V‖_F` for same-shape `U`, `V`.
pub fn procrustes(u: &CMat, v: &CMat) -> CMat {
    let m = u.adjoint() * v;
    let svd = m.svd(true, true);
    svd.u.expect("requested") * svd.v_t.expect("requested")
}

/// 2-norm condition number; `∞` for singular input.
pub fn condition_number(a: &CMat) -> f64 {
    let s = singular_values(a);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Random complex matrix with entries uniform in the unit square.
pub fn random_matrix(rng: &mut impl rand::Rng, n: usize) -> CMat {
    CMat::from_fn(n, n, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

/// Random unitary via QR of a random matrix.
pub fn random_unitary(rng: &mut impl rand::Rng, n: usize) -> CMat {
    random_matrix(rng, n).qr().q()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn rank_and_null_space_of_jordan_block() {
        let j = CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(numerical_rank(&j, 1e-8), 1);
        let ns = null_space(&j, 1e-8);
        assert_eq!(ns.ncols(), 1);
        assert!((&j * &ns).norm() < 1e-14);
        assert!((ns[(0, 0)].norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn null_space_of_wide_matrix() {
        let a = CMat::from_row_slice(1, 3, &[c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        let ns = null_space(&a, 1e-10);
        assert_eq!(ns.ncols(), 2);
        assert!((&a * &ns).norm() < 1e-14);
    }

    #[test]
    fn completion_is_unitary_and_procrustes_recovers_rotation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let q = random_unitary(&mut rng, 4);
        let u = q.columns(0, 2).into_owned();
        let full = complete_basis(&u);
        let id = full.adjoint() * &full;
        assert!((id - CMat::identity(4, 4)).norm() < 1e-12);
        let r = random_unitary(&mut rng, 2);
        let v = &u * &r;
        let got = procrustes(&u, &v);
        assert!((got - r).norm() < 1e-12);
    }

    #[test]
    fn norms_and_spectra() {
        let a = CMat::from_diagonal(&CVec::from_vec(vec![c(3.0, 0.0), c(-1.0, 0.0)]));
        assert!((spectral_norm(&a) - 3.0).abs() < 1e-14);
        assert_eq!(hermitian_eigenvalues(&a), vec![-1.0, 3.0]);
        assert!((condition_number(&a) - 3.0).abs() < 1e-14);
        let mut ev = eigenvalues(&a);
        ev.sort_by(|x, y| x.re.total_cmp(&y.re));
        assert!((ev[0] - c(-1.0, 0.0)).norm() < 1e-14);
    }
}
