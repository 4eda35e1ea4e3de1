//! Small dense complex matrices for spin registers of a few qubits.

use nalgebra::DMatrix;
use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;

pub const HERMITIAN_TOL: f64 = 1e-9;

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn dagger(m: &CMat) -> CMat {
    m.adjoint()
}

/// Kronecker product, left factor most significant.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn kron_all(factors: &[&CMat]) -> CMat {
    let mut out = factors[0].clone();
    for f in &factors[1..] {
        out = kron(&out, f);
    }
    out
}

/// Spin-1/2 operators (Sx, Sy, Sz) as 2×2 matrices.
pub fn spin_half() -> [CMat; 3] {
    let i = Complex64::i();
    let sx = CMat::from_row_slice(2, 2, &[c(0.0), c(0.5), c(0.5), c(0.0)]);
    let sy = CMat::from_row_slice(2, 2, &[c(0.0), -i * 0.5, i * 0.5, c(0.0)]);
    let sz = CMat::from_row_slice(2, 2, &[c(0.5), c(0.0), c(0.0), c(-0.5)]);
    [sx, sy, sz]
}

/// Embed a single-site operator at `site` of an `n_sites` qubit register.
pub fn embed(op: &CMat, site: usize, n_sites: usize) -> CMat {
    let id = identity(2);
    let mut out: Option<CMat> = None;
    for k in 0..n_sites {
        let f = if k == site { op } else { &id };
        out = Some(match out {
            None => f.clone(),
            Some(m) => kron(&m, f),
        });
    }
    out.expect("n_sites >= 1")
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn hermiticity_error(m: &CMat) -> f64 {
    max_abs(&(m - m.adjoint()))
}

pub fn is_hermitian(m: &CMat, tol: f64) -> bool {
    m.is_square() && hermiticity_error(m) <= tol * (1.0 + max_abs(m))
}

/// Eigen-decomposition of a Hermitian matrix: ascending real eigenvalues and unitary eigenvector columns.
pub fn eigh(h: &CMat) -> Result<(Vec<f64>, CMat)> {
    if !is_hermitian(h, HERMITIAN_TOL) {
        return Err(Error::Numerical(format!(
            "matrix is not Hermitian (max |H - H†| = {:.3e})",
            hermiticity_error(h)
        )));
    }
    let sym = (h + h.adjoint()) * c(0.5);
    let eig = sym.symmetric_eigen();
    let n = h.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vecs = CMat::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        vecs.set_column(col, &eig.eigenvectors.column(k));
    }
    Ok((vals, vecs))
}

pub fn eigvalsh(h: &CMat) -> Result<Vec<f64>> {
    Ok(eigh(h)?.0)
}

/// U = exp(-i 2π H t) for Hermitian H in MHz and t in µs.
pub fn propagator(h: &CMat, t: f64) -> Result<CMat> {
    let (vals, v) = eigh(h)?;
    Ok(propagator_from_eig(&vals, &v, t))
}

pub fn propagator_from_eig(vals: &[f64], v: &CMat, t: f64) -> CMat {
    let n = vals.len();
    let phases = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
        n,
        vals.iter().map(|&e| Complex64::from_polar(1.0, -2.0 * PI * e * t)),
    ));
    v * phases * v.adjoint()
}

pub fn unitarity_error(u: &CMat) -> f64 {
    max_abs(&(u.adjoint() * u - identity(u.nrows())))
}

pub fn trace(m: &CMat) -> Complex64 {
    m.trace()
}

/// Real expectation value Tr(ρ O) for Hermitian O.
pub fn expect(rho: &CMat, op: &CMat) -> f64 {
    (rho * op).trace().re
}

/// Largest singular value of a (possibly rectangular) complex block.
pub fn spectral_norm(m: &CMat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .fold(0.0_f64, |a, &s| a.max(s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spin_commutator() {
        let [sx, sy, sz] = spin_half();
        let comm = &sx * &sy - &sy * &sx;
        let expected = &sz * Complex64::i();
        assert!(max_abs(&(comm - expected)) < 1e-15);
    }

    #[test]
    fn larmor_half_period_flips_plus_state() {
        let [sx, _, sz] = spin_half();
        let omega = 3.0;
        let u = propagator(&(&sz * c(omega)), 1.0 / (2.0 * omega)).unwrap();
        let plus = (identity(2) + &sx * c(2.0)) * c(0.5);
        let rho = &u * plus * u.adjoint();
        assert!((expect(&rho, &sx) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_hermitian_rejected() {
        let m = CMat::from_row_slice(2, 2, &[c(0.0), c(1.0), c(0.0), c(0.0)]);
        assert!(propagator(&m, 1.0).is_err());
    }

    #[test]
    fn embed_order_is_left_most_significant() {
        let [_, _, sz] = spin_half();
        let op = embed(&sz, 0, 3);
        assert_eq!(op[(0, 0)], c(0.5));
        assert_eq!(op[(4, 4)], c(-0.5));
    }
}
