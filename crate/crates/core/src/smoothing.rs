//! Analytic smoothing `S_σ` as a radial Fourier multiplier, forward rate
//! fits and the Bernstein-type converse check.

use serde::Serialize;
use thiserror::Error;

use crate::blockmat::{BlockMatrix, FourierBlockMatrix, NormParams, StripGrid};
use crate::linalg::{CMat, C64, I};

#[derive(Debug, Error, PartialEq)]
pub enum SmoothingError {
    #[error("smoothing radius must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("strip radii must be strictly decreasing (index {0})")]
    NonMonotone(usize),
    #[error("rate fit needs at least 3 grid points, got {0}")]
    TooFewPoints(usize),
    #[error("Hölder exponent μ = {0} is an integer")]
    IntegerMu(f64),
    #[error("μ = {mu} exceeds ℓ = {ell}")]
    MuAboveEll { mu: f64, ell: f64 },
    #[error("base radius σ = {0} outside (0, 1/4]")]
    SigmaRange(f64),
    #[error("the sequence must start from f_0 = 0")]
    NonZeroStart,
    #[error("empty family")]
    Empty,
}

/// Radial cutoff: 1 on `[0, r₀]`, 0 on `[1, ∞)`, `C^∞` in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MultiplierProfile {
    pub flat_radius: f64,
}

impl Default for MultiplierProfile {
    fn default() -> Self {
        Self { flat_radius: 0.5 }
    }
}

impl MultiplierProfile {
    pub fn eval(&self, r: f64) -> f64 {
        let r0 = self.flat_radius;
        if r <= r0 {
            1.0
        } else if r >= 1.0 {
            0.0
        } else {
            let t = (1.0 - r) / (1.0 - r0);
            let e = |t: f64| if t <= 0.0 { 0.0 } else { (-1.0 / t).exp() };
            e(t) / (e(t) + e(1.0 - t))
        }
    }
}

/// `S_σ Q`: mode `k` scaled by `φ(σ|k|₂)`; annihilated modes are removed.
pub fn smooth(q: &FourierBlockMatrix, sigma: f64) -> Result<FourierBlockMatrix, SmoothingError> {
    smooth_with(q, sigma, MultiplierProfile::default())
}

pub fn smooth_with(
    q: &FourierBlockMatrix,
    sigma: f64,
    profile: MultiplierProfile,
) -> Result<FourierBlockMatrix, SmoothingError> {
    if !(sigma > 0.0) {
        return Err(SmoothingError::NonPositiveSigma(sigma));
    }
    Ok(q.map_modes(|k, m| {
        let r = sigma * k.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        let f = profile.eval(r);
        match f {
            0.0 => None,
            1.0 => Some(m.clone()),
            _ => Some(m * f),
        }
    }))
}

/// Members `S_{σ_ν} Q` for a strictly decreasing sequence `σ_ν`.
#[derive(Debug, Clone)]
pub struct SmoothedFamily {
    pub sigmas: Vec<f64>,
    pub members: Vec<FourierBlockMatrix>,
}

impl SmoothedFamily {
    /// `P^{(ν+1)} − P^{(ν)}`.
    pub fn increment(&self, nu: usize) -> FourierBlockMatrix {
        self.members[nu + 1].sub(&self.members[nu])
    }
}

pub fn build_family(q: &FourierBlockMatrix, sigmas: &[f64]) -> Result<SmoothedFamily, SmoothingError> {
    for (i, w) in sigmas.windows(2).enumerate() {
        if !(w[1] < w[0]) {
            return Err(SmoothingError::NonMonotone(i + 1));
        }
    }
    let members = sigmas.iter().map(|&s| smooth(q, s)).collect::<Result<Vec<_>, _>>()?;
    Ok(SmoothedFamily { sigmas: sigmas.to_vec(), members })
}

#[derive(Debug, Clone, Serialize)]
pub struct RatePoint {
    pub sigma: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    pub points: Vec<RatePoint>,
    /// Least-squares slope of `log error` against `log σ` over the points
    /// with nonzero error.
    pub slope: Option<f64>,
    /// RMS residual of that fit.
    pub residual: f64,
    /// Some σ reproduced `Q` exactly.
    pub saturated: bool,
}

impl RateFit {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("sigma,error,fitted_slope,residual\n");
        let slope = self.slope.map(|v| v.to_string()).unwrap_or_else(|| "saturated".into());
        for p in &self.points {
            s.push_str(&format!("{},{},{},{}\n", p.sigma, p.error, slope, self.residual));
        }
        s
    }
}

/// Sup over `grid` equispaced real θ (per direction) of `|f(θ)|_{s,α}`,
/// evaluated mode by mode so arbitrarily high frequencies are allowed.
pub fn real_sup_norm(q: &FourierBlockMatrix, p: &NormParams, grid: usize) -> f64 {
    let n = q.n();
    let total = grid.pow(n as u32);
    let basis = q.basis().clone();
    use rayon::prelude::*;
    (0..total)
        .into_par_iter()
        .map(|idx| {
            let th = crate::blockmat::grid_point(idx, grid, n);
            BlockMatrix::from_dense(&basis, q.eval_real(&th)).expect("shape").norm(p)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(0.0, f64::max)
}

pub fn holder_rate_fit(
    q: &FourierBlockMatrix,
    sigmas: &[f64],
    p: &NormParams,
    grid: usize,
) -> Result<RateFit, SmoothingError> {
    if sigmas.len() < 3 {
        return Err(SmoothingError::TooFewPoints(sigmas.len()));
    }
    let mut points = Vec::with_capacity(sigmas.len());
    for &s in sigmas {
        let diff = smooth(q, s)?.sub(q);
        let mut diff = diff;
        diff.prune(0.0);
        points.push(RatePoint { sigma: s, error: real_sup_norm(&diff, p, grid) });
    }
    let saturated = points.iter().any(|pt| pt.error == 0.0);
    let xy: Vec<(f64, f64)> =
        points.iter().filter(|pt| pt.error > 0.0).map(|pt| (pt.sigma.ln(), pt.error.ln())).collect();
    let (slope, residual) = match least_squares(&xy) {
        Some((a, _b, r)) => (Some(a), r),
        None => (None, 0.0),
    };
    Ok(RateFit { points, slope, residual, saturated })
}

/// `y ≈ a x + b`; returns `(a, b, rms residual)`.
pub fn least_squares(xy: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    if xy.len() < 2 {
        return None;
    }
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let a = sxy / sxx;
    let b = my - a * mx;
    let rms = (xy.iter().map(|p| (p.1 - a * p.0 - b).powi(2)).sum::<f64>() / n).sqrt();
    Some((a, b, rms))
}

#[derive(Debug, Clone, Serialize)]
pub struct BernsteinReport {
    /// Smallest `c` with `[f_ν − f_{ν−1}]^{σ_ν} ≤ c σ_ν^ℓ` for all ν.
    pub c: f64,
    pub iota: f64,
    pub sup_norm: f64,
    /// Estimated `C^μ` norm of the last member.
    pub holder_estimate: f64,
    /// `4c/(ι(1−ι)) σ^{ℓ−μ}`.
    pub bound: f64,
    pub within_bound: bool,
}

/// `(Σ_{ν≥1} σ^{ι(3/2)^ν}, (2/ι) σ^ι)` with the sum cut once terms underflow.
pub fn appendix_tail_sum(sigma: f64, iota: f64) -> (f64, f64) {
    let mut sum = 0.0;
    let mut e = iota * 1.5;
    loop {
        let t = sigma.powf(e);
        if t < 1e-300 || e > 1e6 {
            break;
        }
        sum += t;
        e *= 1.5;
    }
    (sum, 2.0 / iota * sigma.powf(iota))
}

/// Check the converse estimate on a family `f_0 = 0, f_1, ..., f_N` with
/// `f_ν` analytic on `|Im θ| ≤ σ_ν = σ^{(3/2)^ν}`.
pub fn bernstein_reconstruct(
    family: &[FourierBlockMatrix],
    sigma: f64,
    ell: f64,
    mu: f64,
    p: &NormParams,
    grid: StripGrid,
) -> Result<BernsteinReport, SmoothingError> {
    if mu.fract() == 0.0 {
        return Err(SmoothingError::IntegerMu(mu));
    }
    if mu > ell {
        return Err(SmoothingError::MuAboveEll { mu, ell });
    }
    if !(sigma > 0.0 && sigma <= 0.25) {
        return Err(SmoothingError::SigmaRange(sigma));
    }
    let last = family.last().ok_or(SmoothingError::Empty)?;
    if family[0].modes().any(|(_, m)| m.max_abs() != 0.0) {
        return Err(SmoothingError::NonZeroStart);
    }
    let mut c: f64 = 0.0;
    for nu in 1..family.len() {
        let s_nu = sigma.powf(1.5f64.powi(nu as i32));
        let g = family[nu].sub(&family[nu - 1]);
        c = c.max(g.strip_norm(s_nu, p, false, grid) / s_nu.powf(ell));
    }
    let iota = mu.fract();
    let m = mu.floor() as u32;
    let points = grid.resolve(last.max_linf()).max(64);
    let (sup_norm, holder_estimate) = holder_norm(last, m, iota, p, points);
    let bound = 4.0 * c / (iota * (1.0 - iota)) * sigma.powf(ell - mu);
    Ok(BernsteinReport { c, iota, sup_norm, holder_estimate, bound, within_bound: holder_estimate <= bound })
}

/// `Σ_{|a|≤m} sup|∂^a f| + Σ_{|a|=m} [∂^a f]_ι` on a real grid; Hölder
/// quotients use pairs displaced along a single direction.
fn holder_norm(f: &FourierBlockMatrix, m: u32, iota: f64, p: &NormParams, points: usize) -> (f64, f64) {
    let n = f.n();
    let mut multi = vec![vec![0u32; n]];
    let mut all = multi.clone();
    for _ in 0..m {
        let mut next = Vec::new();
        for a in &multi {
            for j in 0..n {
                let mut b = a.clone();
                b[j] += 1;
                if !next.contains(&b) {
                    next.push(b);
                }
            }
        }
        all.extend(next.iter().cloned());
        multi = next;
    }
    let deriv = |a: &[u32]| {
        f.map_modes(|k, blk| {
            let mut c = C64::new(1.0, 0.0);
            for (&kk, &aa) in k.iter().zip(a) {
                c *= (I * kk as f64).powu(aa);
            }
            (c != C64::new(0.0, 0.0)).then(|| blk.scale(c))
        })
    };
    let mut sup0 = 0.0;
    let mut total = 0.0;
    for a in &all {
        let da = deriv(a);
        let samples: Vec<CMat> = if da.is_empty() { Vec::new() } else { da.to_grid(points, None) };
        let norms: Vec<f64> = samples
            .iter()
            .map(|s| BlockMatrix::from_dense(f.basis(), s.clone()).expect("shape").norm(p))
            .collect();
        let sup = norms.iter().copied().fold(0.0, f64::max);
        if a.iter().all(|&x| x == 0) {
            sup0 = sup;
        }
        total += sup;
        if a.iter().sum::<u32>() == m && !samples.is_empty() {
            total += holder_seminorm(&samples, f, iota, p, points, n);
        }
    }
    (sup0, total)
}

fn holder_seminorm(samples: &[CMat], f: &FourierBlockMatrix, iota: f64, p: &NormParams, g: usize, n: usize) -> f64 {
    let h = 2.0 * std::f64::consts::PI / g as f64;
    let mut best: f64 = 0.0;
    for (idx, x) in samples.iter().enumerate() {
        for axis in 0..n {
            let stride = g.pow((n - 1 - axis) as u32);
            let coord = (idx / stride) % g;
            for shift in 1..=g / 2 {
                let other = idx - coord * stride + ((coord + shift) % g) * stride;
                let diff = BlockMatrix::from_dense(f.basis(), x - &samples[other]).expect("shape").norm(p);
                best = best.max(diff / (shift as f64 * h).powf(iota));
            }
        }
    }
    best
}
