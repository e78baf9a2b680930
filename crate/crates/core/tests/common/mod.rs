#![allow(dead_code)]

use std::sync::Arc;

use hermite_kam::basis::{enumerate_basis, BasisSet};
use hermite_kam::blockmat::{BlockMatrix, FourierBlockMatrix, Mode};
use hermite_kam::linalg::{CMat, C64};
use nalgebra::DMatrix;
use rand::Rng;

pub fn basis(d: usize, w_max: u32) -> Arc<BasisSet> {
    Arc::new(enumerate_basis(d, w_max).expect("basis"))
}

pub fn random_dense<R: Rng>(dim: usize, rng: &mut R) -> CMat {
    CMat::from_fn(dim, dim, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

pub fn random_hermitian<R: Rng>(dim: usize, rng: &mut R) -> CMat {
    let a = random_dense(dim, rng);
    (&a + a.adjoint()) * C64::new(0.5, 0.0)
}

/// Hermitian block-diagonal `N₀ + scale·H` with random Hermitian blocks.
pub fn random_normal_form<R: Rng>(b: &Arc<BasisSet>, scale: f64, rng: &mut R) -> BlockMatrix {
    let mut n = BlockMatrix::unperturbed(b);
    for (c, cl) in b.clusters().iter().enumerate() {
        let h = random_hermitian(cl.len, rng) * C64::new(scale, 0.0);
        let blk = n.block(c, c).clone_owned() + h;
        n.set_block(c, c, &blk);
    }
    n
}

/// Every mode `0 < |k|₁ ≤ k_max` (and `k = 0`) filled with random entries,
/// paired so the family is Hermitian on the real torus.
pub fn random_family<R: Rng>(b: &Arc<BasisSet>, n: usize, k_max: i32, rng: &mut R) -> FourierBlockMatrix {
    let mut q = FourierBlockMatrix::zero(b, n);
    let dim = b.dim();
    let modes = all_modes(n, k_max);
    for k in &modes {
        let neg: Mode = k.iter().map(|x| -x).collect();
        if neg < *k {
            continue;
        }
        let decay = 0.5f64.powi(k.iter().map(|x| x.abs()).sum());
        let m = random_dense(dim, rng) * C64::new(decay, 0.0);
        if neg == *k {
            let h = (&m + m.adjoint()) * C64::new(0.5, 0.0);
            q.add_mode(k.clone(), BlockMatrix::from_dense(b, h).unwrap()).unwrap();
        } else {
            q.add_mode(neg, BlockMatrix::from_dense(b, m.adjoint()).unwrap()).unwrap();
            q.add_mode(k.clone(), BlockMatrix::from_dense(b, m).unwrap()).unwrap();
        }
    }
    q
}

pub fn all_modes(n: usize, k_max: i32) -> Vec<Mode> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p: Vec<i32>| (-k_max..=k_max).map(move |x| [p.clone(), vec![x]].concat()))
            .collect();
    }
    out.retain(|k| k.iter().map(|x| x.abs()).sum::<i32>() <= k_max);
    out
}

/// Spectral norm through the Hermitian dilation `[[0, B], [B†, 0]]`.
pub fn dilation_norm(b: &CMat) -> f64 {
    let (r, c) = b.shape();
    if r == 0 || c == 0 {
        return 0.0;
    }
    let mut h = CMat::zeros(r + c, r + c);
    h.view_mut((0, r), (r, c)).copy_from(b);
    h.view_mut((r, 0), (c, r)).copy_from(&b.adjoint());
    h.symmetric_eigenvalues().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Reference `|A|_{s,α}` that regroups rows and columns by weight from
/// scratch instead of using the cluster ranges.
pub fn brute_norm(b: &BasisSet, a: &CMat, s: f64, alpha: f64, plus: bool) -> f64 {
    let dim = b.dim();
    let mut weights: Vec<u32> = (0..dim).map(|p| b.indices()[p].tuple.iter().sum()).collect();
    weights.sort();
    weights.dedup();
    let mut best = 0.0f64;
    for &wa in &weights {
        let rows: Vec<usize> = (0..dim).filter(|&p| b.indices()[p].tuple.iter().sum::<u32>() == wa).collect();
        for &wb in &weights {
            let cols: Vec<usize> = (0..dim).filter(|&p| b.indices()[p].tuple.iter().sum::<u32>() == wb).collect();
            let blk = CMat::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])]);
            let (fa, fb) = (wa as f64, wb as f64);
            let mn = fa.min(fb).sqrt();
            let mut w = (fa * fb).powf(alpha) * ((mn + (fa - fb).abs()) / mn).powf(s / 2.0);
            if plus {
                w *= 1.0 + (fa - fb).abs();
            }
            best = best.max(w * dilation_norm(&blk));
        }
    }
    best
}

pub fn real_part(m: &CMat) -> DMatrix<f64> {
    m.map(|z| z.re)
}
