//! Dynamic validation: direct unitary integration of the truncated forced
//! system against the closed-form reduced flow, Sobolev norm windows and
//! quasi-energies.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blockmat::{weighted_norm, BlockMatrix, FourierBlockMatrix, WeightedSeq};
use crate::homology::{block_spectrum, lattice_ball, BlockSpectrum};
use crate::kam::ReductionResult;
use crate::linalg::{hermitian_eig, CMat, C64};

#[derive(Debug, Error, PartialEq)]
pub enum ValidateError {
    #[error("initial vector has length {got}, basis dimension is {dim}")]
    Length { got: usize, dim: usize },
    #[error("initial vector is zero")]
    ZeroInitial,
    #[error("time step {dt} and horizon {t_end} must be positive")]
    BadStep { dt: f64, t_end: f64 },
    #[error("frequency vector has length {got}, expected {want}")]
    OmegaLength { got: usize, want: usize },
    #[error("reduction is not admissible")]
    Inadmissible,
}

/// Norm-preserving one-step schemes for `ξ̇ = −iH(t)ξ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// `exp(−i dt H(t + dt/2))`.
    #[default]
    Midpoint,
    /// Two-exponential commutator-free Magnus scheme of order four.
    Magnus4,
}

impl Integrator {
    pub fn order(&self) -> u32 {
        match self {
            Integrator::Midpoint => 2,
            Integrator::Magnus4 => 4,
        }
    }
}

/// `H(t) = N₀ + εP^T(ωt)`.
#[derive(Debug, Clone)]
pub struct Forcing {
    pub n0: BlockMatrix,
    pub p: FourierBlockMatrix,
    pub omega: Vec<f64>,
    pub eps: f64,
}

impl Forcing {
    pub fn new(p: &FourierBlockMatrix, omega: &[f64], eps: f64) -> Result<Self, ValidateError> {
        if omega.len() != p.n() {
            return Err(ValidateError::OmegaLength { got: omega.len(), want: p.n() });
        }
        let mut p = p.clone();
        p.prune(0.0);
        Ok(Self { n0: BlockMatrix::unperturbed(p.basis()), p, omega: omega.to_vec(), eps })
    }

    fn autonomous(&self) -> bool {
        self.eps == 0.0 || self.p.is_empty()
    }

    pub fn generator(&self, t: f64) -> CMat {
        let theta: Vec<f64> = self.omega.iter().map(|w| w * t).collect();
        self.n0.dense() + self.p.eval_real(&theta).transpose() * C64::new(self.eps, 0.0)
    }
}

fn exp_apply(h: &CMat, dt: f64, xi: &WeightedSeq) -> WeightedSeq {
    let (vals, vecs) = hermitian_eig(h);
    let mut c = vecs.adjoint() * xi;
    for (j, z) in c.iter_mut().enumerate() {
        *z *= C64::from_polar(1.0, -dt * vals[j]);
    }
    vecs * c
}

const SQ3_6: f64 = 0.288_675_134_594_812_9; // √3/6

fn step(f: &Forcing, method: Integrator, t: f64, dt: f64, xi: &WeightedSeq) -> WeightedSeq {
    match method {
        Integrator::Midpoint => exp_apply(&f.generator(t + 0.5 * dt), dt, xi),
        Integrator::Magnus4 => {
            let h1 = f.generator(t + (0.5 - SQ3_6) * dt);
            let h2 = f.generator(t + (0.5 + SQ3_6) * dt);
            let (a1, a2) = (C64::new(0.25 + SQ3_6, 0.0), C64::new(0.25 - SQ3_6, 0.0));
            let first = exp_apply(&(&h1 * a1 + &h2 * a2), dt, xi);
            exp_apply(&(&h1 * a2 + &h2 * a1), dt, &first)
        }
    }
}

/// Propagates `ξ₀` and returns the states at every `stride`-th step.
fn propagate(f: &Forcing, method: Integrator, xi0: &WeightedSeq, dt: f64, steps: usize, stride: usize) -> Vec<WeightedSeq> {
    let mut out = vec![xi0.clone()];
    if f.autonomous() {
        let w = f.n0.basis().weights();
        for m in (stride..=steps).step_by(stride) {
            let t = m as f64 * dt;
            out.push(DVector::from_fn(xi0.len(), |a, _| xi0[a] * C64::from_polar(1.0, -w[a] * t)));
        }
        return out;
    }
    let mut xi = xi0.clone();
    for m in 0..steps {
        xi = step(f, method, m as f64 * dt, dt, &xi);
        if (m + 1) % stride == 0 {
            out.push(xi.clone());
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectOptions {
    pub method: Integrator,
    /// Spacing of recorded samples (rounded to a multiple of `dt`).
    pub sample_dt: f64,
    pub s_values: Vec<f64>,
    /// Warn when the step-halving estimate exceeds this.
    pub warn_tol: f64,
}

impl Default for DirectOptions {
    fn default() -> Self {
        Self { method: Integrator::Midpoint, sample_dt: 1.0, s_values: vec![0.0, 1.0], warn_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub s_values: Vec<f64>,
    /// `norms[j][i] = ‖ξ(t_i)‖_{s_j}`.
    pub norms: Vec<Vec<f64>>,
    /// `‖ξ_direct − ξ_reduced‖₀ / ‖ξ₀‖₀` when attached.
    pub conjugacy: Option<Vec<f64>>,
    pub dt: f64,
    pub order: u32,
    /// Step-halving estimate of the relative error of the recorded states.
    pub error_estimate: f64,
    /// Largest `|‖ξ(t)‖₀ − ‖ξ₀‖₀| / ‖ξ₀‖₀`.
    pub l2_drift: f64,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub states: Vec<WeightedSeq>,
    /// Oscillator weights `w_a` of the basis the states live in.
    #[serde(skip)]
    pub weights: Vec<f64>,
}

impl TrajectoryRecord {
    /// Samples with `t ≤ t_max`.
    pub fn until(&self, t_max: f64) -> Self {
        let keep = self.times.iter().take_while(|&&t| t <= t_max * (1.0 + 1e-12)).count();
        let mut out = self.clone();
        out.times.truncate(keep);
        out.states.truncate(keep);
        for row in &mut out.norms {
            row.truncate(keep);
        }
        if let Some(c) = &mut out.conjugacy {
            c.truncate(keep);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        for v in &self.s_values {
            s.push_str(&format!(",norm_s{v}"));
        }
        s.push_str(",conjugacy_error\n");
        for (i, t) in self.times.iter().enumerate() {
            s.push_str(&format!("{t:e}"));
            for row in &self.norms {
                s.push_str(&format!(",{:e}", row[i]));
            }
            match &self.conjugacy {
                Some(c) => s.push_str(&format!(",{:e}\n", c[i])),
                None => s.push_str(",\n"),
            }
        }
        s
    }
}

/// Direct integration of `ξ̇ = −i(N₀ + εP^T(ωt))ξ` on `[0, T]`. The run is
/// repeated at `dt/2`; the finer states are recorded and their difference
/// from the coarse run, divided by `2^p − 1`, is the error estimate.
pub fn integrate_direct(
    xi0: &WeightedSeq,
    p: &FourierBlockMatrix,
    omega: &[f64],
    eps: f64,
    t_end: f64,
    dt: f64,
    opts: &DirectOptions,
) -> Result<TrajectoryRecord, ValidateError> {
    let forcing = Forcing::new(p, omega, eps)?;
    let basis = p.basis().clone();
    if xi0.len() != basis.dim() {
        return Err(ValidateError::Length { got: xi0.len(), dim: basis.dim() });
    }
    if !(dt > 0.0 && t_end > 0.0) {
        return Err(ValidateError::BadStep { dt, t_end });
    }
    let n0 = weighted_norm(&basis, xi0, 0.0);
    if n0 == 0.0 {
        return Err(ValidateError::ZeroInitial);
    }
    let stride = ((opts.sample_dt / dt).round() as usize).max(1);
    let steps = ((t_end / dt).round() as usize).div_ceil(stride) * stride;
    let (coarse, fine) = rayon::join(
        || propagate(&forcing, opts.method, xi0, dt, steps, stride),
        || propagate(&forcing, opts.method, xi0, 0.5 * dt, 2 * steps, 2 * stride),
    );
    let denom = (2f64.powi(opts.method.order() as i32) - 1.0) * n0;
    let error_estimate =
        coarse.iter().zip(&fine).map(|(a, b)| (a - b).norm() / denom).fold(0.0, f64::max);
    let times: Vec<f64> = (0..fine.len()).map(|i| (i * stride) as f64 * dt).collect();
    let norms: Vec<Vec<f64>> =
        opts.s_values.iter().map(|&s| fine.iter().map(|x| weighted_norm(&basis, x, s)).collect()).collect();
    let l2_drift = fine.iter().map(|x| (x.norm() - xi0.norm()).abs() / n0).fold(0.0, f64::max);
    let mut warnings = Vec::new();
    if error_estimate > opts.warn_tol {
        let w = format!("step-halving error estimate {error_estimate:.3e} exceeds {:.1e}; reduce dt", opts.warn_tol);
        log::warn!("{w}");
        warnings.push(w);
    }
    Ok(TrajectoryRecord {
        times,
        s_values: opts.s_values.clone(),
        norms,
        conjugacy: None,
        dt: 0.5 * dt,
        order: opts.method.order(),
        error_estimate,
        l2_drift,
        warnings,
        states: fine,
        weights: basis.weights(),
    })
}

/// The closed-form flow `ξ(t) = M̄(ωt) e^{−itN̄_∞} M^T(0) ξ₀` of a reduction.
#[derive(Debug, Clone)]
pub struct ReducedFlow {
    m: FourierBlockMatrix,
    spectrum: BlockSpectrum,
    ranges: Vec<std::ops::Range<usize>>,
    omega: Vec<f64>,
}

impl ReducedFlow {
    pub fn new(result: &ReductionResult) -> Result<Self, ValidateError> {
        if !result.admissible() {
            return Err(ValidateError::Inadmissible);
        }
        Ok(Self::from_parts(&result.m_omega, &result.n_inf, &result.omega))
    }

    pub fn from_parts(m: &FourierBlockMatrix, n_inf: &BlockMatrix, omega: &[f64]) -> Self {
        // e^{−itN̄} blockwise: N̄ has the conjugated eigenvectors of N
        let spectrum = block_spectrum(&n_inf.conj());
        let ranges = n_inf.basis().clusters().iter().map(|c| c.range()).collect();
        Self { m: m.clone(), spectrum, ranges, omega: omega.to_vec() }
    }

    pub fn eval(&self, xi0: &WeightedSeq, t: f64) -> Result<WeightedSeq, ValidateError> {
        if xi0.len() != self.m.dim() {
            return Err(ValidateError::Length { got: xi0.len(), dim: self.m.dim() });
        }
        let zero = vec![0.0; self.omega.len()];
        let start = self.m.eval_real(&zero).transpose() * xi0;
        let mut mid = start.clone();
        for (c, r) in self.ranges.iter().enumerate() {
            let v = &self.spectrum.vectors[c];
            let mut coef = v.adjoint() * start.rows(r.start, r.len());
            for (j, z) in coef.iter_mut().enumerate() {
                *z *= C64::from_polar(1.0, -t * self.spectrum.values[c][j]);
            }
            mid.rows_mut(r.start, r.len()).copy_from(&(v * coef));
        }
        let theta: Vec<f64> = self.omega.iter().map(|w| w * t).collect();
        Ok(self.m.eval_real(&theta).conjugate() * mid)
    }
}

pub fn reduced_solution(result: &ReductionResult, xi0: &WeightedSeq, t: f64) -> Result<WeightedSeq, ValidateError> {
    ReducedFlow::new(result)?.eval(xi0, t)
}

/// Fills `record.conjugacy` with `‖ξ_direct(t) − ξ_reduced(t)‖₀ / ‖ξ₀‖₀`.
pub fn attach_conjugacy(record: &mut TrajectoryRecord, flow: &ReducedFlow) -> Result<(), ValidateError> {
    let xi0 = record.states.first().ok_or(ValidateError::ZeroInitial)?.clone();
    let n0 = xi0.norm();
    let errs = record
        .times
        .iter()
        .zip(&record.states)
        .map(|(&t, x)| flow.eval(&xi0, t).map(|r| (x - r).norm() / n0))
        .collect::<Result<Vec<_>, _>>()?;
    record.conjugacy = Some(errs);
    Ok(())
}

/// `max(second half) / max(first half)` of a series sampled at `times`.
pub fn secular_ratio(times: &[f64], values: &[f64]) -> f64 {
    let t_mid = 0.5 * times.last().copied().unwrap_or(0.0);
    let (mut a, mut b) = (0.0f64, 0.0f64);
    for (t, v) in times.iter().zip(values) {
        if *t <= t_mid {
            a = a.max(*v);
        } else {
            b = b.max(*v);
        }
    }
    if a == 0.0 {
        if b == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        b / a
    }
}

/// `c_meas = max_t |‖ξ(t)‖_{s'}/‖ξ₀‖_{s'} − 1| / ε`. For `ε = 0` the
/// deviation itself is returned once it is below roundoff (so a conserved
/// flow reports 0), and infinity otherwise.
pub fn sobolev_window(record: &TrajectoryRecord, s_prime: f64, eps: f64) -> Result<f64, ValidateError> {
    let first = record.states.first().ok_or(ValidateError::ZeroInitial)?;
    if first.iter().all(|z| *z == C64::new(0.0, 0.0)) {
        return Err(ValidateError::ZeroInitial);
    }
    let norm = |x: &WeightedSeq| {
        x.iter().zip(&record.weights).map(|(z, w)| w.powf(s_prime) * z.norm_sqr()).sum::<f64>().sqrt()
    };
    let base = norm(first);
    let worst = record.states.iter().map(|x| (norm(x) / base - 1.0).abs()).fold(0.0, f64::max);
    if eps == 0.0 {
        return Ok(if worst <= 1e-12 { 0.0 } else { f64::INFINITY });
    }
    Ok(worst / eps)
}

/// Eigenvalues of `N_∞` per cluster.
#[derive(Debug, Clone, Serialize)]
pub struct QuasiEnergies {
    pub weights: Vec<f64>,
    pub per_cluster: Vec<Vec<f64>>,
    /// Bound on the imaginary parts: the Hermitian defect of `N_∞`.
    pub imag_bound: f64,
    pub omega: Vec<f64>,
}

impl QuasiEnergies {
    pub fn values(&self) -> Vec<f64> {
        self.per_cluster.iter().flatten().copied().collect()
    }

    /// `λ + ⟨k,ω⟩` for `|k|₁ ≤ k_cut`, sorted.
    pub fn lattice_shifts(&self, k_cut: u32) -> Vec<f64> {
        let mut modes = vec![vec![0; self.omega.len()]];
        modes.extend(lattice_ball(self.omega.len(), k_cut));
        let mut out = Vec::new();
        for k in &modes {
            let kw: f64 = k.iter().zip(&self.omega).map(|(&a, &b)| a as f64 * b).sum();
            out.extend(self.values().into_iter().map(|l| l + kw));
        }
        out.sort_by(f64::total_cmp);
        out
    }

    /// Largest distance from an eigenvalue to its oscillator level.
    pub fn max_shift(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.per_cluster)
            .flat_map(|(w, v)| v.iter().map(move |l| (l - w).abs()))
            .fold(0.0, f64::max)
    }
}

pub fn quasi_energies(result: &ReductionResult) -> QuasiEnergies {
    let spec = block_spectrum(&result.n_inf);
    QuasiEnergies {
        weights: spec.weights.clone(),
        per_cluster: spec.values.iter().map(|v| v.iter().copied().collect()).collect(),
        imag_bound: result.n_inf.hermitian_defect(),
        omega: result.omega.clone(),
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::basis::{assemble_potential_matrix, enumerate_basis, PotentialSpec, QuadOptions};
    use crate::kam::{run_reduction, KamConfig};

    const COS_GAUSS: &str = r#"{"d":1,"n":1,"terms":[{"theta_modes":[[1,0.5,0],[-1,0.5,0]],
        "x_profile":{"kind":"closed_form_id","id":"gaussian"}}]}"#;

    fn potential(w_max: u32) -> FourierBlockMatrix {
        let spec = PotentialSpec::from_json(COS_GAUSS).unwrap();
        let basis = Arc::new(enumerate_basis(1, w_max).unwrap());
        assemble_potential_matrix(&spec, &basis, None, QuadOptions::default()).unwrap().0
    }

    fn start(dim: usize) -> WeightedSeq {
        DVector::from_fn(dim, |a, _| C64::new(1.0 / (1.0 + a as f64), 0.3 / (2.0 + a as f64)))
    }

    #[test]
    fn unforced_flow_is_diagonal() {
        let p = potential(9);
        let xi0 = start(p.dim());
        let rec = integrate_direct(&xi0, &p, &[2.0], 0.0, 10.0, 0.1, &DirectOptions::default()).unwrap();
        let w = p.basis().weights();
        for (t, x) in rec.times.iter().zip(&rec.states) {
            for a in 0..x.len() {
                assert!((x[a] - xi0[a] * C64::from_polar(1.0, -w[a] * t)).norm() < 1e-15);
            }
        }
        assert_eq!(sobolev_window(&rec, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(sobolev_window(&rec, 1.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn norm_is_conserved() {
        let p = potential(9);
        let xi0 = start(p.dim());
        let rec = integrate_direct(&xi0, &p, &[2.3], 0.05, 20.0, 0.05, &DirectOptions::default()).unwrap();
        assert!(rec.l2_drift / 20.0 < 1e-12, "{}", rec.l2_drift);
    }

    fn final_error(method: Integrator, dt: f64, reference: &WeightedSeq, p: &FourierBlockMatrix) -> f64 {
        let f = Forcing::new(p, &[2.3], 0.2).unwrap();
        let steps = (2.0 / dt).round() as usize;
        let out = propagate(&f, method, &start(p.dim()), dt, steps, steps);
        (out.last().unwrap() - reference).norm()
    }

    #[test]
    fn integrator_orders() {
        let p = potential(5);
        let f = Forcing::new(&p, &[2.3], 0.2).unwrap();
        let reference = propagate(&f, Integrator::Magnus4, &start(p.dim()), 1e-3, 2000, 2000).pop().unwrap();
        let r2 = final_error(Integrator::Midpoint, 0.04, &reference, &p) / final_error(Integrator::Midpoint, 0.02, &reference, &p);
        assert!((r2 - 4.0).abs() < 0.4, "midpoint ratio {r2}");
        let r4 = final_error(Integrator::Magnus4, 0.1, &reference, &p) / final_error(Integrator::Magnus4, 0.05, &reference, &p);
        assert!((r4 - 16.0).abs() < 2.0, "magnus ratio {r4}");
    }

    #[test]
    fn reduced_flow_identity_at_zero_and_trivial_potential() {
        let p = potential(9);
        let omega = 2.0 * (5f64.sqrt() - 1.0);
        let cfg = KamConfig { beta: 12.0, kappa_scale: 1e-3, k_max: Some(16), ..KamConfig::default() };
        let r = run_reduction(&p, &[omega], 1e-3, &cfg).unwrap();
        let xi0 = start(p.dim());
        let back = reduced_solution(&r, &xi0, 0.0).unwrap();
        assert!((back - &xi0).norm() < 1e-12);
        let later = reduced_solution(&r, &xi0, 7.3).unwrap();
        assert!((later.norm() - xi0.norm()).abs() < 1e-12);

        let r0 = run_reduction(&p, &[omega], 0.0, &cfg).unwrap();
        let w = p.basis().weights();
        let x = reduced_solution(&r0, &xi0, 3.0).unwrap();
        for a in 0..x.len() {
            assert!((x[a] - xi0[a] * C64::from_polar(1.0, -w[a] * 3.0)).norm() < 1e-14);
        }
        let q = quasi_energies(&r0);
        assert_eq!(q.values(), w);
        assert_eq!(q.imag_bound, 0.0);
    }

    #[test]
    fn direct_and_reduced_flows_agree() {
        let p = potential(9);
        let omega = 2.0 * (5f64.sqrt() - 1.0);
        let eps = 1e-3;
        let cfg = KamConfig { beta: 12.0, kappa_scale: 1e-3, k_max: Some(16), ..KamConfig::default() };
        let r = run_reduction(&p, &[omega], eps, &cfg).unwrap();
        let flow = ReducedFlow::new(&r).unwrap();
        let xi0 = start(p.dim());
        let opts = DirectOptions { method: Integrator::Magnus4, sample_dt: 0.5, ..DirectOptions::default() };
        let mut rec = integrate_direct(&xi0, &p, &[omega], eps, 40.0, 0.02, &opts).unwrap();
        attach_conjugacy(&mut rec, &flow).unwrap();
        let worst = rec.conjugacy.as_ref().unwrap().iter().fold(0.0f64, |a, &b| a.max(b));
        assert!(worst < 1e-9 + 100.0 * rec.error_estimate, "{worst} {}", rec.error_estimate);
        let q = quasi_energies(&r);
        assert!(q.max_shift() <= 2.0 * 2.0 * eps);
        assert!(q.lattice_shifts(1).len() == 3 * p.dim());
    }

    #[test]
    fn secular_ratio_of_linear_growth_is_two() {
        let t: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        assert!((secular_ratio(&t, &t) - 2.0).abs() < 1e-12);
    }
}
