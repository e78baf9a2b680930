//! Small dense helpers on top of nalgebra used across the crate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Eigendecomposition of a Hermitian matrix. The input is symmetrized first.
pub fn hermitian_eig(m: &CMat) -> (DVector<f64>, CMat) {
    let n = m.nrows();
    if n == 0 {
        return (DVector::zeros(0), CMat::zeros(0, 0));
    }
    if n == 1 {
        return (DVector::from_element(1, m[(0, 0)].re), CMat::identity(1, 1));
    }
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(h);
    (eig.eigenvalues, eig.eigenvectors)
}

/// Largest singular value.
pub fn spectral_norm(m: &nalgebra::DMatrixView<'_, C64>) -> f64 {
    match (m.nrows(), m.ncols()) {
        (0, _) | (_, 0) => 0.0,
        (1, 1) => m[(0, 0)].norm(),
        (1, _) | (_, 1) => m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
        _ => m.clone_owned().singular_values().max(),
    }
}

/// `V diag(f(λ)) V†`.
pub fn spectral_apply(vals: &DVector<f64>, vecs: &CMat, f: impl Fn(f64) -> C64) -> CMat {
    let mut scaled = vecs.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= f(vals[j]);
    }
    scaled * vecs.adjoint()
}

/// `exp(i t H)` for Hermitian `H`.
pub fn expi_hermitian(h: &CMat, t: f64) -> CMat {
    let (vals, vecs) = hermitian_eig(h);
    spectral_apply(&vals, &vecs, |l| C64::from_polar(1.0, t * l))
}

pub fn hermitian_defect(m: &CMat) -> f64 {
    (m - m.adjoint()).iter().fold(0.0, |a, z| a.max(z.norm()))
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0, |a, z| a.max(z.norm()))
}

/// `sin(x)/x` with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// Operator norm of `U - I` style defects.
pub fn unitarity_defect(u: &CMat) -> f64 {
    let n = u.nrows();
    let g = u.adjoint() * u - CMat::identity(n, n);
    spectral_norm(&g.as_view())
}

/// Gauss–Legendre nodes and weights on `[0, 1]`, Newton-polished.
pub fn gauss_legendre01(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    let mf = m as f64;
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (mf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if m == 0 { 1.0 } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = mf * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes.push(0.5 * (1.0 - x));
        weights.push(1.0 / ((1.0 - x * x) * dp * dp));
    }
    (nodes, weights)
}
