//! Cluster-blocked complex matrices with the weighted block norms
//! `|·|_{s,α}` and `|·|_{s,α+}`, plus θ-dependent (Fourier) families.

mod container;
mod fourier;

pub use container::{read_container, write_container, ContainerError, ContainerHeader};
pub use fourier::{grid_point, l1, FourierBlockMatrix, GridFit, Mode, StripGrid};

use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::sync::Arc;

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::BasisSet;
use crate::linalg::{self, CMat, C64};

#[derive(Debug, Error, PartialEq)]
pub enum BlockError {
    #[error("basis mismatch between operands")]
    BasisMismatch,
    #[error("matrix shape {got:?} does not match basis dimension {dim}")]
    Shape { got: (usize, usize), dim: usize },
    #[error("matrix is not Hermitian (defect {0:.3e})")]
    NotHermitian(f64),
    #[error("vector length {got} does not match basis dimension {dim}")]
    VectorLength { got: usize, dim: usize },
    #[error("mode {0:?} has the wrong number of frequencies")]
    ModeLength(Vec<i32>),
}

/// Weights of the block norm. `alpha` defaults from `d` through
/// [`NormParams::default_alpha`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub s: f64,
    pub alpha: f64,
}

impl NormParams {
    pub fn new(s: f64, alpha: f64) -> Self {
        Self { s, alpha }
    }

    pub fn for_dimension(d: usize, s: f64) -> Self {
        Self { s, alpha: Self::default_alpha(d) }
    }

    /// `α = α̃(p)/2` with `α̃ = 1/12` for `d = 1`, `1/(3p)` at `p = 10/3`
    /// for `d = 2`, and for `d > 2` the admissible open interval for `p` is
    /// entered 1% of its length above the lower end (the supremum of `α̃`
    /// sits at the excluded endpoint).
    pub fn default_alpha(d: usize) -> f64 {
        Self::alpha_tilde(d) / 2.0
    }

    pub fn alpha_tilde(d: usize) -> f64 {
        match d {
            0 | 1 => 1.0 / 12.0,
            2 => 1.0 / (3.0 * (10.0 / 3.0)),
            _ => {
                let df = d as f64;
                let lo = 2.0 * (df + 3.0) / (df + 1.0);
                let hi = 2.0 * df / (df - 2.0);
                let p = lo + 0.01 * (hi - lo);
                0.5 * (df / (3.0 * p) - (df - 2.0) / 6.0)
            }
        }
    }

    /// Weight of block `([a],[b])` in `|·|_{s,α}`.
    pub fn block_weight(&self, wa: f64, wb: f64) -> f64 {
        let mn = wa.min(wb).sqrt();
        (wa * wb).powf(self.alpha) * ((mn + (wa - wb).abs()) / mn).powf(self.s / 2.0)
    }

    pub fn block_weight_plus(&self, wa: f64, wb: f64) -> f64 {
        self.block_weight(wa, wb) * (1.0 + (wa - wb).abs())
    }
}

/// Dense truncated matrix whose rows and columns follow the basis order, so
/// every cluster pair `([a],[b])` is a contiguous sub-block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    basis: Arc<BasisSet>,
    data: CMat,
}

impl BlockMatrix {
    pub fn zeros(basis: &Arc<BasisSet>) -> Self {
        let n = basis.dim();
        Self { basis: basis.clone(), data: CMat::zeros(n, n) }
    }

    pub fn identity(basis: &Arc<BasisSet>) -> Self {
        let n = basis.dim();
        Self { basis: basis.clone(), data: CMat::identity(n, n) }
    }

    /// `N₀ = diag(w_a)`.
    pub fn unperturbed(basis: &Arc<BasisSet>) -> Self {
        let w: Vec<C64> = basis.weights().into_iter().map(|w| C64::new(w, 0.0)).collect();
        Self { basis: basis.clone(), data: CMat::from_diagonal(&DVector::from_vec(w)) }
    }

    pub fn from_dense(basis: &Arc<BasisSet>, data: CMat) -> Result<Self, BlockError> {
        let n = basis.dim();
        if data.shape() != (n, n) {
            return Err(BlockError::Shape { got: data.shape(), dim: n });
        }
        Ok(Self { basis: basis.clone(), data })
    }

    pub fn from_real(basis: &Arc<BasisSet>, data: &DMatrix<f64>) -> Result<Self, BlockError> {
        Self::from_dense(basis, data.map(|x| C64::new(x, 0.0)))
    }

    pub fn basis(&self) -> &Arc<BasisSet> {
        &self.basis
    }
    pub fn dense(&self) -> &CMat {
        &self.data
    }
    pub fn into_dense(self) -> CMat {
        self.data
    }
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn block(&self, ca: usize, cb: usize) -> DMatrixView<'_, C64> {
        let a = self.basis.clusters()[ca];
        let b = self.basis.clusters()[cb];
        self.data.view((a.start, b.start), (a.len, b.len))
    }

    pub fn set_block(&mut self, ca: usize, cb: usize, blk: &CMat) {
        let a = self.basis.clusters()[ca];
        let b = self.basis.clusters()[cb];
        self.data.view_mut((a.start, b.start), (a.len, b.len)).copy_from(blk);
    }

    pub fn same_basis(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.basis, &other.basis) || *self.basis == *other.basis
    }

    pub fn adjoint(&self) -> Self {
        Self { basis: self.basis.clone(), data: self.data.adjoint() }
    }
    pub fn transpose(&self) -> Self {
        Self { basis: self.basis.clone(), data: self.data.transpose() }
    }
    pub fn conj(&self) -> Self {
        Self { basis: self.basis.clone(), data: self.data.map(|z| z.conj()) }
    }
    pub fn scale(&self, c: C64) -> Self {
        Self { basis: self.basis.clone(), data: &self.data * c }
    }

    pub fn hermitian_defect(&self) -> f64 {
        linalg::hermitian_defect(&self.data)
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian_defect() <= 1e-12 * (1.0 + linalg::max_abs(&self.data))
    }

    /// Largest entry outside the diagonal cluster blocks.
    pub fn off_block_diagonal_max(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                if self.basis.cluster_of(i) != self.basis.cluster_of(j) {
                    m = m.max(self.data[(i, j)].norm());
                }
            }
        }
        m
    }

    /// Keep only the diagonal cluster blocks.
    pub fn block_diagonal_part(&self) -> Self {
        let mut out = Self::zeros(&self.basis);
        for c in 0..self.basis.num_clusters() {
            out.set_block(c, c, &self.block(c, c).clone_owned());
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        linalg::max_abs(&self.data)
    }

    pub fn norm(&self, p: &NormParams) -> f64 {
        block_norm(self, p)
    }
    pub fn norm_plus(&self, p: &NormParams) -> f64 {
        block_norm_plus(self, p)
    }
}

macro_rules! binop {
    ($tr:ident, $f:ident, $op:tt) => {
        impl $tr<&BlockMatrix> for &BlockMatrix {
            type Output = BlockMatrix;
            fn $f(self, rhs: &BlockMatrix) -> BlockMatrix {
                assert!(self.same_basis(rhs), "basis mismatch");
                BlockMatrix { basis: self.basis.clone(), data: &self.data $op &rhs.data }
            }
        }
    };
}
binop!(Add, add, +);
binop!(Sub, sub, -);

impl AddAssign<&BlockMatrix> for BlockMatrix {
    fn add_assign(&mut self, rhs: &BlockMatrix) {
        assert!(self.same_basis(rhs), "basis mismatch");
        self.data += &rhs.data;
    }
}

impl Neg for &BlockMatrix {
    type Output = BlockMatrix;
    fn neg(self) -> BlockMatrix {
        BlockMatrix { basis: self.basis.clone(), data: -&self.data }
    }
}

impl Mul<f64> for &BlockMatrix {
    type Output = BlockMatrix;
    fn mul(self, rhs: f64) -> BlockMatrix {
        self.scale(C64::new(rhs, 0.0))
    }
}

fn weighted_sup(a: &BlockMatrix, weight: impl Fn(f64, f64) -> f64) -> f64 {
    let cl = a.basis.clusters();
    let mut best: f64 = 0.0;
    for (ia, ca) in cl.iter().enumerate() {
        for (ib, cb) in cl.iter().enumerate() {
            let blk = a.block(ia, ib);
            if blk.iter().all(|z| *z == C64::new(0.0, 0.0)) {
                continue;
            }
            let v = weight(ca.weight as f64, cb.weight as f64) * linalg::spectral_norm(&blk);
            best = best.max(v);
        }
    }
    best
}

/// `sup_{[a],[b]} (w_a w_b)^α ‖A_[a]^[b]‖ ((√min + |w_a − w_b|)/√min)^{s/2}`.
pub fn block_norm(a: &BlockMatrix, p: &NormParams) -> f64 {
    weighted_sup(a, |wa, wb| p.block_weight(wa, wb))
}

/// As [`block_norm`] with the extra factor `1 + |w_a − w_b|`.
pub fn block_norm_plus(a: &BlockMatrix, p: &NormParams) -> f64 {
    weighted_sup(a, |wa, wb| p.block_weight_plus(wa, wb))
}

/// Product together with the ratio `|AB| / (|A| |B|_+)`.
#[derive(Debug, Clone)]
pub struct Product {
    pub value: BlockMatrix,
    pub ratio: f64,
}

pub fn multiply(a: &BlockMatrix, b: &BlockMatrix, p: &NormParams) -> Result<Product, BlockError> {
    if !a.same_basis(b) {
        return Err(BlockError::BasisMismatch);
    }
    let value = BlockMatrix { basis: a.basis.clone(), data: &a.data * &b.data };
    let den = block_norm(a, p) * block_norm_plus(b, p);
    let ratio = if den > 0.0 { block_norm(&value, p) / den } else { 0.0 };
    Ok(Product { value, ratio })
}

/// `e^{i·scale·F}` for Hermitian `F`, through a dense eigendecomposition.
pub fn matrix_exp(f: &BlockMatrix, scale: f64) -> Result<BlockMatrix, BlockError> {
    let defect = f.hermitian_defect();
    if defect > 1e-12 * (1.0 + f.max_abs()) {
        return Err(BlockError::NotHermitian(defect));
    }
    Ok(BlockMatrix { basis: f.basis.clone(), data: linalg::expi_hermitian(&f.data, scale) })
}

/// Coefficient sequence `ξ` in the basis order.
pub type WeightedSeq = DVector<C64>;

/// `‖ξ‖_s = (Σ w_a^s |ξ_a|²)^{1/2}`.
pub fn weighted_norm(basis: &BasisSet, xi: &WeightedSeq, s: f64) -> f64 {
    xi.iter()
        .enumerate()
        .map(|(p, z)| (basis.weight(p) as f64).powf(s) * z.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

pub fn apply(a: &BlockMatrix, xi: &WeightedSeq) -> Result<WeightedSeq, BlockError> {
    if xi.len() != a.dim() {
        return Err(BlockError::VectorLength { got: xi.len(), dim: a.dim() });
    }
    Ok(&a.data * xi)
}

/// Largest observed `‖Aξ‖_{s'+2α} / ‖ξ‖_{s'}` over the unit vectors and
/// `samples` random vectors.
pub fn weighted_operator_diag<R: Rng>(
    a: &BlockMatrix,
    s_prime: f64,
    alpha: f64,
    samples: usize,
    rng: &mut R,
) -> f64 {
    let n = a.dim();
    let basis = &a.basis;
    let ratio = |xi: &WeightedSeq| {
        let den = weighted_norm(basis, xi, s_prime);
        if den == 0.0 {
            0.0
        } else {
            weighted_norm(basis, &(&a.data * xi), s_prime + 2.0 * alpha) / den
        }
    };
    let mut best: f64 = 0.0;
    for k in 0..n {
        let mut e = WeightedSeq::zeros(n);
        e[k] = C64::new(1.0, 0.0);
        best = best.max(ratio(&e));
    }
    for _ in 0..samples {
        let xi = WeightedSeq::from_fn(n, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        best = best.max(ratio(&xi));
    }
    best
}
