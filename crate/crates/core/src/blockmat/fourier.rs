//! Fourier-indexed families `Q(θ) = Σ_k Q^k e^{i⟨k,θ⟩}` of block matrices.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::{Fft, FftDirection, FftPlanner};

use super::{BlockError, BlockMatrix, NormParams};
use crate::basis::BasisSet;
use crate::linalg::{CMat, C64, I};

pub type Mode = Vec<i32>;

pub fn l1(k: &[i32]) -> u32 {
    k.iter().map(|x| x.unsigned_abs()).sum()
}

fn l2(k: &[i32]) -> f64 {
    k.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// Sampling density used for strip and real-θ suprema.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StripGrid {
    /// Points per frequency direction; `None` picks `max(32, 4 k_max + 8)`.
    pub points_per_dim: Option<usize>,
}

impl StripGrid {
    pub fn fixed(points: usize) -> Self {
        Self { points_per_dim: Some(points) }
    }

    pub fn resolve(&self, k_linf: u32) -> usize {
        let need = 2 * k_linf as usize + 1;
        match self.points_per_dim {
            Some(p) => p.max(need),
            None => (4 * k_linf as usize + 8).max(32),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourierBlockMatrix {
    basis: Arc<BasisSet>,
    n: usize,
    modes: BTreeMap<Mode, BlockMatrix>,
}

/// Result of projecting grid samples back onto Fourier modes.
#[derive(Debug, Clone)]
pub struct GridFit {
    pub value: FourierBlockMatrix,
    /// Σ of max-entry sizes of modes beyond the cap.
    pub tail_mass: f64,
    /// Σ of max-entry sizes of in-cap modes discarded as noise.
    pub dropped_noise: f64,
}

impl FourierBlockMatrix {
    pub fn zero(basis: &Arc<BasisSet>, n: usize) -> Self {
        Self { basis: basis.clone(), n, modes: BTreeMap::new() }
    }

    pub fn constant(m: BlockMatrix, n: usize) -> Self {
        let mut out = Self::zero(m.basis(), n);
        out.modes.insert(vec![0; n], m);
        out
    }

    pub fn basis(&self) -> &Arc<BasisSet> {
        &self.basis
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn dim(&self) -> usize {
        self.basis.dim()
    }
    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }
    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> impl Iterator<Item = (&Mode, &BlockMatrix)> {
        self.modes.iter()
    }

    pub fn mode(&self, k: &[i32]) -> Option<&BlockMatrix> {
        self.modes.get(k)
    }

    /// Accumulate `m` into mode `k`.
    pub fn add_mode(&mut self, k: Mode, m: BlockMatrix) -> Result<(), BlockError> {
        if k.len() != self.n {
            return Err(BlockError::ModeLength(k));
        }
        if !m.same_basis(&BlockMatrix::zeros(&self.basis)) {
            return Err(BlockError::BasisMismatch);
        }
        match self.modes.get_mut(&k) {
            Some(e) => *e += &m,
            None => {
                self.modes.insert(k, m);
            }
        }
        Ok(())
    }

    pub fn remove_mode(&mut self, k: &[i32]) -> Option<BlockMatrix> {
        self.modes.remove(k)
    }

    pub fn map_modes(&self, f: impl Fn(&Mode, &BlockMatrix) -> Option<BlockMatrix>) -> Self {
        let modes = self.modes.iter().filter_map(|(k, m)| f(k, m).map(|v| (k.clone(), v))).collect();
        Self { basis: self.basis.clone(), n: self.n, modes }
    }

    pub fn max_l1(&self) -> u32 {
        self.modes.keys().map(|k| l1(k)).max().unwrap_or(0)
    }

    pub fn max_linf(&self) -> u32 {
        self.modes.keys().flat_map(|k| k.iter().map(|x| x.unsigned_abs())).max().unwrap_or(0)
    }

    pub fn max_l2(&self) -> f64 {
        self.modes.keys().map(|k| l2(k)).fold(0.0, f64::max)
    }

    /// Mode `k` with `|k|₁ ≤ k_cap` only.
    pub fn truncate(&self, k_cap: u32) -> Self {
        self.map_modes(|k, m| (l1(k) <= k_cap).then(|| m.clone()))
    }

    /// Part with `|k|₁ > k_cap`.
    pub fn tail(&self, k_cap: u32) -> Self {
        self.map_modes(|k, m| (l1(k) > k_cap).then(|| m.clone()))
    }

    pub fn scale(&self, c: C64) -> Self {
        self.map_modes(|_, m| Some(m.scale(c)))
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (k, m) in &other.modes {
            out.add_mode(k.clone(), m.clone()).expect("compatible operands");
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    /// Drop modes whose largest entry does not exceed `tol`.
    pub fn prune(&mut self, tol: f64) {
        self.modes.retain(|_, m| m.max_abs() > tol);
    }

    /// `max_k |Q^{-k} − (Q^k)^†|`, zero iff `Q(θ)` is Hermitian for real θ.
    pub fn hermitian_pairing_defect(&self) -> f64 {
        let zero = BlockMatrix::zeros(&self.basis);
        let mut worst: f64 = 0.0;
        for (k, m) in &self.modes {
            let mk: Mode = k.iter().map(|x| -x).collect();
            let other = self.modes.get(&mk).unwrap_or(&zero);
            worst = worst.max((other - &m.adjoint()).max_abs());
        }
        worst
    }

    /// `Q(θ)` at complex `θ`.
    pub fn eval(&self, theta: &[C64]) -> CMat {
        let n = self.dim();
        let mut acc = CMat::zeros(n, n);
        for (k, m) in &self.modes {
            let phase: C64 = k.iter().zip(theta).map(|(&kk, &t)| t * kk as f64).sum();
            acc += m.dense() * (I * phase).exp();
        }
        acc
    }

    pub fn eval_real(&self, theta: &[f64]) -> CMat {
        let th: Vec<C64> = theta.iter().map(|&t| C64::new(t, 0.0)).collect();
        self.eval(&th)
    }

    /// `ω·∇_θ Q`, i.e. modes multiplied by `i⟨k,ω⟩`.
    pub fn omega_derivative(&self, omega: &[f64]) -> Self {
        self.map_modes(|k, m| {
            let kw: f64 = k.iter().zip(omega).map(|(&a, &b)| a as f64 * b).sum();
            (kw != 0.0).then(|| m.scale(I * kw))
        })
    }

    /// Samples on the uniform grid `θ = 2π m / g` (row-major, last frequency
    /// fastest) with an optional imaginary shift `Im θ_j = shift_j`.
    pub fn to_grid(&self, g: usize, shift: Option<&[f64]>) -> Vec<CMat> {
        assert!(g > 2 * self.max_linf() as usize, "grid of {g} points aliases modes up to {}", self.max_linf());
        let total = g.pow(self.n as u32);
        let dim = self.dim();
        let plan = FftPlanner::new().plan_fft(g, FftDirection::Inverse);
        let placed: Vec<(usize, &BlockMatrix, f64)> = self
            .modes
            .iter()
            .map(|(k, m)| {
                let idx = grid_index(k, g);
                let damp = shift
                    .map(|s| (-k.iter().zip(s).map(|(&a, &b)| a as f64 * b).sum::<f64>()).exp())
                    .unwrap_or(1.0);
                (idx, m, damp)
            })
            .collect();
        let columns: Vec<Vec<C64>> = (0..dim * dim)
            .into_par_iter()
            .map(|e| {
                let (i, j) = (e / dim, e % dim);
                let mut buf = vec![C64::new(0.0, 0.0); total];
                for (idx, m, damp) in &placed {
                    buf[*idx] += m.dense()[(i, j)] * *damp;
                }
                fft_nd(&mut buf, g, self.n, plan.as_ref());
                buf
            })
            .collect();
        (0..total)
            .map(|p| CMat::from_fn(dim, dim, |i, j| columns[i * dim + j][p]))
            .collect()
    }

    /// Project grid samples onto modes `|k|₁ ≤ k_cap`; modes whose largest
    /// entry is at most `noise_floor` are discarded.
    pub fn from_grid(
        basis: &Arc<BasisSet>,
        n: usize,
        g: usize,
        samples: &[CMat],
        k_cap: u32,
        noise_floor: f64,
    ) -> GridFit {
        let total = g.pow(n as u32);
        assert_eq!(samples.len(), total);
        let dim = basis.dim();
        let plan = FftPlanner::new().plan_fft(g, FftDirection::Forward);
        let inv = 1.0 / total as f64;
        let columns: Vec<Vec<C64>> = (0..dim * dim)
            .into_par_iter()
            .map(|e| {
                let (i, j) = (e / dim, e % dim);
                let mut buf: Vec<C64> = samples.iter().map(|s| s[(i, j)] * inv).collect();
                fft_nd(&mut buf, g, n, plan.as_ref());
                buf
            })
            .collect();
        let mut value = Self::zero(basis, n);
        let mut tail_mass = 0.0;
        let mut dropped_noise = 0.0;
        let half = (g as i64 - 1) / 2;
        for p in 0..total {
            let k = grid_mode(p, g, n);
            if k.iter().any(|&x| x as i64 > half || -(x as i64) > half) {
                continue;
            }
            let m = CMat::from_fn(dim, dim, |i, j| columns[i * dim + j][p]);
            let size = crate::linalg::max_abs(&m);
            if l1(&k) > k_cap {
                tail_mass += size;
            } else if size <= noise_floor {
                dropped_noise += size;
            } else {
                value.modes.insert(k, BlockMatrix::from_dense(basis, m).expect("shape"));
            }
        }
        GridFit { value, tail_mass, dropped_noise }
    }

    /// Supremum of `f(Q(θ))` over the real grid with `points` per direction
    /// and the given imaginary shift.
    pub fn grid_sup(&self, points: usize, shift: Option<&[f64]>, f: impl Fn(&BlockMatrix) -> f64 + Sync) -> f64 {
        if self.modes.is_empty() {
            return 0.0;
        }
        let samples = self.to_grid(points, shift);
        samples
            .into_par_iter()
            .map(|m| f(&BlockMatrix::from_dense(&self.basis, m).expect("shape")))
            .collect::<Vec<_>>()
            .into_iter()
            .fold(0.0, f64::max)
    }

    /// `[Q]^σ`: supremum of the block norm over the distinguished boundary
    /// `|Im θ_j| = σ(1 − 10⁻⁶)` of the strip (the real torus when σ = 0).
    pub fn strip_norm(&self, sigma: f64, p: &NormParams, plus: bool, grid: StripGrid) -> f64 {
        let points = grid.resolve(self.max_linf());
        let norm = |m: &BlockMatrix| if plus { m.norm_plus(p) } else { m.norm(p) };
        if sigma == 0.0 {
            return self.grid_sup(points, None, norm);
        }
        let y = sigma * (1.0 - 1e-6);
        let mut best: f64 = 0.0;
        for signs in 0..(1usize << self.n) {
            let shift: Vec<f64> = (0..self.n).map(|j| if signs >> j & 1 == 1 { -y } else { y }).collect();
            best = best.max(self.grid_sup(points, Some(&shift), norm));
        }
        best
    }
}

fn grid_index(k: &[i32], g: usize) -> usize {
    k.iter().fold(0usize, |acc, &x| acc * g + x.rem_euclid(g as i32) as usize)
}

fn grid_mode(mut p: usize, g: usize, n: usize) -> Mode {
    let mut k = vec![0i32; n];
    for a in (0..n).rev() {
        let r = (p % g) as i64;
        p /= g;
        k[a] = if r > (g as i64) / 2 { (r - g as i64) as i32 } else { r as i32 };
    }
    k
}

/// In-place n-dimensional unnormalized FFT over a `g^n` row-major array.
fn fft_nd(buf: &mut [C64], g: usize, n: usize, plan: &dyn Fft<f64>) {
    let total = buf.len();
    let mut line = vec![C64::new(0.0, 0.0); g];
    let mut scratch = vec![C64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
    for axis in 0..n {
        let stride = g.pow((n - 1 - axis) as u32);
        for base in 0..total {
            // visit each line once: its start has a zero coordinate on `axis`
            if !(base / stride).is_multiple_of(g) {
                continue;
            }
            for (t, v) in line.iter_mut().enumerate() {
                *v = buf[base + t * stride];
            }
            plan.process_with_scratch(&mut line, &mut scratch);
            for (t, v) in line.iter().enumerate() {
                buf[base + t * stride] = *v;
            }
        }
    }
}

/// Real grid coordinates of sample `p`.
pub fn grid_point(p: usize, g: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let mut q = p;
    for a in (0..n).rev() {
        out[a] = 2.0 * std::f64::consts::PI * (q % g) as f64 / g as f64;
        q /= g;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::enumerate_basis;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_family(n: usize, kmax: i32, seed: u64) -> FourierBlockMatrix {
        let basis = Arc::new(enumerate_basis(2, 6).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q = FourierBlockMatrix::zero(&basis, n);
        for _ in 0..6 {
            let k: Mode = (0..n).map(|_| rng.random_range(-kmax..=kmax)).collect();
            let m = CMat::from_fn(basis.dim(), basis.dim(), |_, _| C64::new(rng.random(), rng.random()));
            q.add_mode(k, BlockMatrix::from_dense(&basis, m).unwrap()).unwrap();
        }
        q
    }

    #[test]
    fn grid_roundtrip_matches_direct_eval() {
        for n in 1..=2 {
            let q = random_family(n, 3, 7 + n as u64);
            let g = 9;
            let samples = q.to_grid(g, None);
            for p in [0, 5, samples.len() - 1] {
                let th = grid_point(p, g, n);
                let direct = q.eval_real(&th);
                assert!(crate::linalg::max_abs(&(direct - &samples[p])) < 1e-12);
            }
            let back = FourierBlockMatrix::from_grid(q.basis(), n, g, &samples, 100, 0.0).value;
            let diff = back.sub(&q);
            assert!(diff.modes().all(|(_, m)| m.max_abs() < 1e-12));
        }
    }

    #[test]
    fn shifted_grid_matches_complex_eval() {
        let q = random_family(2, 2, 11);
        let shift = [0.3, -0.2];
        let g = 7;
        let samples = q.to_grid(g, Some(&shift));
        let p = 17;
        let th = grid_point(p, g, 2);
        let z: Vec<C64> = th.iter().zip(shift).map(|(&x, y)| C64::new(x, y)).collect();
        assert!(crate::linalg::max_abs(&(q.eval(&z) - &samples[p])) < 1e-11);
    }

    #[test]
    fn strip_norm_of_cosine_is_cosh() {
        let basis = Arc::new(enumerate_basis(1, 1).unwrap());
        let half = BlockMatrix::identity(&basis).scale(C64::new(0.5, 0.0));
        let mut q = FourierBlockMatrix::zero(&basis, 1);
        q.add_mode(vec![1], half.clone()).unwrap();
        q.add_mode(vec![-1], half).unwrap();
        let p = NormParams::new(0.0, 0.0);
        let v = q.strip_norm(0.5, &p, false, StripGrid::default());
        assert!((v - (0.5f64 * (1.0 - 1e-6)).cosh()).abs() < 1e-12);
        assert!((q.strip_norm(0.0, &p, false, StripGrid::default()) - 1.0).abs() < 1e-14);
    }
}
