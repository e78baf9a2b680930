//! Homological equation `ω·∇F − i[N,F] = Ñ − Q + R`, Melnikov audits and
//! sampled measure of the excluded frequencies.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::blockmat::{l1, BlockMatrix, FourierBlockMatrix, Mode, NormParams, StripGrid};
use crate::linalg::{hermitian_eig, CMat, I};
use crate::smoothing::least_squares;

/// Divisors within this distance of their threshold count as violations.
pub const TIE_TOL: f64 = 1e-14;

#[derive(Debug, Error, PartialEq)]
pub enum HomologyError {
    #[error("divisor {divisor:.3e} below threshold {threshold:.3e} at k = {k:?}, clusters ({cluster_a}, {cluster_b})")]
    DivisorUnderflow { k: Mode, cluster_a: usize, cluster_b: usize, divisor: f64, threshold: f64 },
    #[error("N is not block diagonal (off-block entry {0:.3e})")]
    NotBlockDiagonal(f64),
    #[error("N is not Hermitian (defect {0:.3e})")]
    NotHermitian(f64),
    #[error("frequency vector has length {got}, expected {want}")]
    OmegaLength { got: usize, want: usize },
    #[error("basis mismatch between N and Q")]
    BasisMismatch,
    #[error("degenerate frequency sample: {0}")]
    DegenerateSample(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MelnikovParams {
    pub kappa: f64,
    pub k_cut: u32,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl MelnikovParams {
    /// Constants of the harmonic oscillator: `c₀ = c₁ = c₂ = 1`,
    /// `α₁ = n + 1`, `α₂ = 1`.
    pub fn oscillator(n: usize, kappa: f64, k_cut: u32) -> Self {
        Self { kappa, k_cut, c0: 1.0, c1: 1.0, c2: 1.0, alpha1: n as f64 + 1.0, alpha2: 1.0 }
    }

    pub fn gamma1(&self, d: usize, n: usize) -> f64 {
        ((d + n + 2) as f64).max(self.alpha1)
    }

    pub fn gamma2(&self, d: usize, alpha: f64) -> f64 {
        alpha * self.alpha2 / (4.0 + d as f64 + 2.0 * alpha * self.alpha2)
    }

    pub fn threshold(&self, wa: f64, wb: f64) -> f64 {
        self.kappa * (1.0 + (wa - wb).abs())
    }
}

/// Eigendecomposition of each diagonal block of `N`.
#[derive(Debug, Clone)]
pub struct BlockSpectrum {
    pub weights: Vec<f64>,
    pub values: Vec<DVector<f64>>,
    pub vectors: Vec<CMat>,
}

pub fn block_spectrum(n_mat: &BlockMatrix) -> BlockSpectrum {
    let basis = n_mat.basis();
    let mut values = Vec::new();
    let mut vectors = Vec::new();
    for c in 0..basis.num_clusters() {
        let (v, u) = hermitian_eig(&n_mat.block(c, c).clone_owned());
        values.push(v);
        vectors.push(u);
    }
    let weights = basis.clusters().iter().map(|c| c.weight as f64).collect();
    BlockSpectrum { weights, values, vectors }
}

/// All `k ∈ Z^n` with `0 < |k|₁ ≤ k_cut`, in lexicographic order.
pub fn lattice_ball(n: usize, k_cut: u32) -> Vec<Mode> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(n);
    fn rec(n: usize, left: i32, cur: &mut Vec<i32>, out: &mut Vec<Mode>) {
        if cur.len() == n {
            if cur.iter().any(|&x| x != 0) {
                out.push(cur.clone());
            }
            return;
        }
        for v in -left..=left {
            cur.push(v);
            rec(n, left - v.abs(), cur, out);
            cur.pop();
        }
    }
    rec(n, k_cut as i32, &mut cur, &mut out);
    out
}

fn dot(k: &[i32], omega: &[f64]) -> f64 {
    k.iter().zip(omega).map(|(&a, &b)| a as f64 * b).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub k: Mode,
    pub cluster_a: usize,
    pub cluster_b: usize,
    pub divisor: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MelnikovReport {
    pub admissible: bool,
    pub violations: Vec<Violation>,
    /// Smallest `divisor / (1 + |w_a − w_b|)` seen over `0 < |k|₁ ≤ K`.
    pub critical_kappa: f64,
}

impl MelnikovReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,cluster_a,cluster_b,divisor,threshold\n");
        for v in &self.violations {
            let k: Vec<String> = v.k.iter().map(|x| x.to_string()).collect();
            s.push_str(&format!("{},{},{},{},{}\n", k.join(" "), v.cluster_a, v.cluster_b, v.divisor, v.threshold));
        }
        s
    }
}

fn check_pair(
    k: &[i32],
    kw: f64,
    spec: &BlockSpectrum,
    a: usize,
    b: usize,
    params: &MelnikovParams,
    out: &mut Vec<Violation>,
    crit: &mut f64,
) {
    let (wa, wb) = (spec.weights[a], spec.weights[b]);
    let k0 = k.iter().all(|&x| x == 0);
    if k0 && a == b {
        return;
    }
    // k = 0 across clusters: the first Melnikov condition, with half of c₀
    // left as margin for the drift of N away from N₀.
    let thr = if k0 { 0.5 * params.c0 * (wa - wb).abs() } else { params.threshold(wa, wb) };
    let mut worst = f64::INFINITY;
    for &la in spec.values[a].iter() {
        for &lb in spec.values[b].iter() {
            worst = worst.min((kw + la - lb).abs());
        }
    }
    if !k0 {
        *crit = crit.min(worst / (1.0 + (wa - wb).abs()));
    }
    if worst <= thr + TIE_TOL {
        out.push(Violation { k: k.to_vec(), cluster_a: a, cluster_b: b, divisor: worst, threshold: thr });
    }
}

/// Scan every divisor `|⟨k,ω⟩ + λ − λ'|` with `λ ∈ spec N_[a]`,
/// `λ' ∈ spec N_[b]` and `0 < |k|₁ ≤ K`, plus the `k = 0` cross-cluster gaps.
pub fn check_melnikov(omega: &[f64], n_mat: &BlockMatrix, params: &MelnikovParams) -> MelnikovReport {
    check_melnikov_spectrum(omega, &block_spectrum(n_mat), params)
}

pub fn check_melnikov_spectrum(omega: &[f64], spec: &BlockSpectrum, params: &MelnikovParams) -> MelnikovReport {
    let nc = spec.weights.len();
    let mut modes = vec![vec![0; omega.len()]];
    modes.extend(lattice_ball(omega.len(), params.k_cut));
    let mut violations = Vec::new();
    let mut crit = f64::INFINITY;
    for k in &modes {
        let kw = dot(k, omega);
        for a in 0..nc {
            for b in 0..nc {
                check_pair(k, kw, spec, a, b, params, &mut violations, &mut crit);
            }
        }
    }
    MelnikovReport { admissible: violations.is_empty(), violations, critical_kappa: crit }
}

#[derive(Debug, Clone)]
pub struct HomologySolution {
    pub f: FourierBlockMatrix,
    pub n_tilde: BlockMatrix,
    pub r: FourierBlockMatrix,
    /// Strip sup of `ω·∇F − i[N,F] − Ñ + Q − R` (when requested).
    pub residual: Option<f64>,
    pub q_norm: Option<f64>,
    pub min_divisor: f64,
}

/// Where to audit the residual identity.
#[derive(Debug, Clone, Copy)]
pub struct ResidualCheck {
    pub sigma_prime: f64,
    pub norm: NormParams,
    pub grid: StripGrid,
}

pub fn solve_homological(
    n_mat: &BlockMatrix,
    q: &FourierBlockMatrix,
    omega: &[f64],
    params: &MelnikovParams,
    check: Option<ResidualCheck>,
) -> Result<HomologySolution, HomologyError> {
    if omega.len() != q.n() {
        return Err(HomologyError::OmegaLength { got: omega.len(), want: q.n() });
    }
    if !n_mat.same_basis(&BlockMatrix::zeros(q.basis())) {
        return Err(HomologyError::BasisMismatch);
    }
    let off = n_mat.off_block_diagonal_max();
    if off > 0.0 {
        return Err(HomologyError::NotBlockDiagonal(off));
    }
    if !n_mat.is_hermitian() {
        return Err(HomologyError::NotHermitian(n_mat.hermitian_defect()));
    }
    let spec = block_spectrum(n_mat);
    let basis = q.basis().clone();
    let nc = basis.num_clusters();
    let inside: Vec<(&Mode, &BlockMatrix)> = q.modes().filter(|(k, _)| l1(k) <= params.k_cut).collect();

    let solved: Vec<Result<(Mode, BlockMatrix, f64), HomologyError>> = inside
        .par_iter()
        .map(|(k, qk)| {
            let kw = dot(k, omega);
            let k0 = k.iter().all(|&x| x == 0);
            let mut fk = BlockMatrix::zeros(&basis);
            let mut min_div = f64::INFINITY;
            for a in 0..nc {
                for b in 0..nc {
                    if k0 && a == b {
                        continue;
                    }
                    let (wa, wb) = (spec.weights[a], spec.weights[b]);
                    let thr = if k0 { 0.5 * params.c0 * (wa - wb).abs() } else { params.threshold(wa, wb) };
                    let qhat = spec.vectors[a].adjoint() * qk.block(a, b) * &spec.vectors[b];
                    let mut g = CMat::zeros(qhat.nrows(), qhat.ncols());
                    for i in 0..qhat.nrows() {
                        for j in 0..qhat.ncols() {
                            let div = kw - spec.values[a][i] + spec.values[b][j];
                            if div.abs() <= thr + TIE_TOL {
                                return Err(HomologyError::DivisorUnderflow {
                                    k: (*k).clone(),
                                    cluster_a: a,
                                    cluster_b: b,
                                    divisor: div.abs(),
                                    threshold: thr,
                                });
                            }
                            min_div = min_div.min(div.abs());
                            g[(i, j)] = I * qhat[(i, j)] / div;
                        }
                    }
                    let back = &spec.vectors[a] * g * spec.vectors[b].adjoint();
                    fk.set_block(a, b, &back);
                }
            }
            Ok(((*k).clone(), fk, min_div))
        })
        .collect();

    let mut f = FourierBlockMatrix::zero(&basis, q.n());
    let mut min_divisor = f64::INFINITY;
    for item in solved {
        let (k, fk, md) = item?;
        min_divisor = min_divisor.min(md);
        if fk.max_abs() > 0.0 {
            f.add_mode(k, fk).expect("mode length");
        }
    }
    let zero_mode = vec![0; q.n()];
    let n_tilde = q.mode(&zero_mode).map(|m| m.block_diagonal_part()).unwrap_or_else(|| BlockMatrix::zeros(&basis));
    let r = q.tail(params.k_cut);

    let mut sol = HomologySolution { f, n_tilde, r, residual: None, q_norm: None, min_divisor };
    if let Some(c) = check {
        let res = residual_family(&sol, n_mat, q, omega);
        sol.residual = Some(res.strip_norm(c.sigma_prime, &c.norm, false, c.grid));
        sol.q_norm = Some(q.strip_norm(c.sigma_prime, &c.norm, false, c.grid));
    }
    Ok(sol)
}

/// Fourier modes of `ω·∇F − i[N,F] − Ñ + Q − R`.
pub fn residual_family(
    sol: &HomologySolution,
    n_mat: &BlockMatrix,
    q: &FourierBlockMatrix,
    omega: &[f64],
) -> FourierBlockMatrix {
    let mut res = sol.f.omega_derivative(omega);
    let comm = sol.f.map_modes(|_, fk| {
        let c = n_mat.dense() * fk.dense() - fk.dense() * n_mat.dense();
        Some(BlockMatrix::from_dense(fk.basis(), c * (-I)).expect("shape"))
    });
    res = res.add(&comm);
    let zero_mode = vec![0; q.n()];
    res.add_mode(zero_mode, -&sol.n_tilde).expect("mode length");
    res = res.add(q).sub(&sol.r);
    res
}

/// Measured `[F]_{s,α+}^{σ'} / [Q]_{s,α}^σ` next to the shape
/// `K^{1+d} / (κ^{2+d/α} (σ−σ')^n)` (unit constant).
#[derive(Debug, Clone, Serialize)]
pub struct NormDiagnostic {
    pub ratio: f64,
    pub formula: f64,
}

pub fn norm_diagnostic(
    sol: &HomologySolution,
    q: &FourierBlockMatrix,
    params: &MelnikovParams,
    sigma: f64,
    sigma_prime: f64,
    p: &NormParams,
    grid: StripGrid,
) -> NormDiagnostic {
    let d = q.basis().d() as f64;
    let fq = sol.f.strip_norm(sigma_prime, p, true, grid);
    let qq = q.strip_norm(sigma, p, false, grid);
    let ratio = if qq > 0.0 { fq / qq } else { 0.0 };
    let formula = (params.k_cut as f64).powf(1.0 + d)
        / (params.kappa.powf(2.0 + d / p.alpha) * (sigma - sigma_prime).powi(q.n() as i32));
    NormDiagnostic { ratio, formula }
}

/// Midpoint grid of `per_dim^n` frequencies in `[lo, hi]^n`.
pub fn omega_grid(n: usize, per_dim: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    let h = (hi - lo) / per_dim as f64;
    let total = per_dim.pow(n as u32);
    (0..total)
        .map(|mut p| {
            let mut w = vec![0.0; n];
            for a in (0..n).rev() {
                w[a] = lo + h * ((p % per_dim) as f64 + 0.5);
                p /= per_dim;
            }
            w
        })
        .collect()
}

pub fn omega_monte_carlo(n: usize, count: usize, lo: f64, hi: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..n).map(|_| rng.random_range(lo..hi)).collect()).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct MeasureRow {
    pub kappa: f64,
    pub k_cut: u32,
    pub excluded: usize,
    pub total: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MeasureSweep {
    pub rows: Vec<MeasureRow>,
    /// log-log slope of the excluded fraction against κ (nonzero rows).
    pub slope: Option<f64>,
    pub residual: f64,
    /// `α₂` (unperturbed spectrum) and `γ2` (iteration) exponents.
    pub predicted_alpha2: f64,
    pub predicted_gamma2: f64,
}

impl MeasureSweep {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kappa,k_cut,excluded,total,fraction,fitted_slope\n");
        let slope = self.slope.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{},{}\n", r.kappa, r.k_cut, r.excluded, r.total, r.fraction, slope));
        }
        s
    }
}

fn validate_sample(sample: &[Vec<f64>], n: usize) -> Result<(), HomologyError> {
    if sample.len() < 1000 {
        return Err(HomologyError::DegenerateSample(format!("{} points, need at least 1000", sample.len())));
    }
    if sample.iter().any(|w| w.len() != n || w.iter().any(|v| !v.is_finite())) {
        return Err(HomologyError::DegenerateSample("non-finite or wrong-length frequency".into()));
    }
    if sample.iter().all(|w| *w == sample[0]) {
        return Err(HomologyError::DegenerateSample("all frequencies coincide".into()));
    }
    Ok(())
}

/// Per-sample critical κ: the largest κ for which the sample passes.
fn critical_kappas(sample: &[Vec<f64>], spec: &BlockSpectrum, k_cut: u32) -> Vec<f64> {
    let params = MelnikovParams::oscillator(sample[0].len(), 0.0, k_cut);
    sample
        .par_iter()
        .map(|w| {
            let r = check_melnikov_spectrum(w, spec, &params);
            // κ-independent k = 0 failures exclude the sample outright.
            if r.violations.iter().any(|v| v.k.iter().all(|&x| x == 0)) {
                f64::NEG_INFINITY
            } else {
                r.critical_kappa
            }
        })
        .collect()
}

pub fn measure_excluded(
    sample: &[Vec<f64>],
    n_mat: &BlockMatrix,
    params: &MelnikovParams,
) -> Result<MeasureRow, HomologyError> {
    let n = sample.first().map(|w| w.len()).unwrap_or(0);
    validate_sample(sample, n)?;
    let spec = block_spectrum(n_mat);
    let crit = critical_kappas(sample, &spec, params.k_cut);
    Ok(row(&crit, params.kappa, params.k_cut))
}

fn row(crit: &[f64], kappa: f64, k_cut: u32) -> MeasureRow {
    let excluded = crit.iter().filter(|&&c| c <= kappa + TIE_TOL && kappa > 0.0 || c == f64::NEG_INFINITY).count();
    MeasureRow { kappa, k_cut, excluded, total: crit.len(), fraction: excluded as f64 / crit.len() as f64 }
}

pub fn measure_sweep(
    sample: &[Vec<f64>],
    n_mat: &BlockMatrix,
    kappas: &[f64],
    k_cut: u32,
    alpha: f64,
) -> Result<MeasureSweep, HomologyError> {
    let n = sample.first().map(|w| w.len()).unwrap_or(0);
    validate_sample(sample, n)?;
    let spec = block_spectrum(n_mat);
    let crit = critical_kappas(sample, &spec, k_cut);
    let rows: Vec<MeasureRow> = kappas.iter().map(|&k| row(&crit, k, k_cut)).collect();
    let xy: Vec<(f64, f64)> =
        rows.iter().filter(|r| r.fraction > 0.0 && r.kappa > 0.0).map(|r| (r.kappa.ln(), r.fraction.ln())).collect();
    let (slope, residual) = least_squares(&xy).map(|(a, _, r)| (Some(a), r)).unwrap_or((None, 0.0));
    let p = MelnikovParams::oscillator(n, 0.0, k_cut);
    Ok(MeasureSweep {
        rows,
        slope,
        residual,
        predicted_alpha2: p.alpha2,
        predicted_gamma2: p.gamma2(n_mat.basis().d(), alpha),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::enumerate_basis;
    use crate::linalg::C64;
    use std::sync::Arc;

    #[test]
    fn lattice_ball_counts() {
        assert_eq!(lattice_ball(1, 3), vec![vec![-3], vec![-2], vec![-1], vec![1], vec![2], vec![3]]);
        // |{k ∈ Z² : |k|₁ ≤ K}| = 2K² + 2K + 1
        assert_eq!(lattice_ball(2, 4).len(), 2 * 16 + 8);
    }

    #[test]
    fn exact_resonance_is_reported() {
        let basis = Arc::new(enumerate_basis(1, 3).unwrap());
        let n0 = BlockMatrix::unperturbed(&basis);
        // ω = 2 with λ_a − λ_b = −2 at k = 1
        let r = check_melnikov(&[2.0], &n0, &MelnikovParams::oscillator(1, 0.01, 1));
        assert!(!r.admissible);
        assert!(r.violations.iter().any(|v| v.k == vec![1] && v.cluster_a == 0 && v.cluster_b == 1 && v.divisor == 0.0));
    }

    #[test]
    fn unit_frequency_reduces_to_integer_test() {
        // ω = 1: divisors |k + j| with j even; k = ±1 stays at distance 1, k = 2 hits j = -2.
        let basis = Arc::new(enumerate_basis(1, 5).unwrap());
        let n0 = BlockMatrix::unperturbed(&basis);
        let r = check_melnikov(&[1.0], &n0, &MelnikovParams::oscillator(1, 0.1, 1));
        assert!(r.admissible, "{:?}", r.violations);
        let r2 = check_melnikov(&[1.0], &n0, &MelnikovParams::oscillator(1, 0.1, 2));
        assert!(!r2.admissible);
    }

    #[test]
    fn constant_diagonal_goes_to_normal_form() {
        let basis = Arc::new(enumerate_basis(2, 6).unwrap());
        let n0 = BlockMatrix::unperturbed(&basis);
        let mut blk = BlockMatrix::zeros(&basis);
        blk.set_block(1, 1, &CMat::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(0.0, 0.2), C64::new(0.0, -0.2), C64::new(0.5, 0.0)]));
        let q = FourierBlockMatrix::constant(blk.clone(), 1);
        let sol = solve_homological(&n0, &q, &[0.7], &MelnikovParams::oscillator(1, 0.01, 4), None).unwrap();
        assert!(sol.f.is_empty());
        assert_eq!(sol.n_tilde, blk);
        assert!(sol.r.is_empty());
    }
}
