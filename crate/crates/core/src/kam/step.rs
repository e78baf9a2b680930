//! One KAM step: conjugated smoothing increment, homological solve, exact
//! conjugation by `U = exp(−iF)` on the θ grid, Fourier re-extraction.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::{KamError, KamSchedule};
use crate::basis::BasisSet;
use crate::blockmat::{grid_point, BlockMatrix, FourierBlockMatrix, NormParams, StripGrid};
use crate::homology::{check_melnikov, solve_homological, MelnikovParams, ResidualCheck};
use crate::linalg::{gauss_legendre01, hermitian_eig, max_abs, sinc, unitarity_defect, CMat, C64, I};

/// Everything a step needs besides the state.
#[derive(Debug, Clone)]
pub struct StepContext {
    pub omega: Vec<f64>,
    pub norm: NormParams,
    /// Grid points per frequency direction for conjugation and `B_ν`.
    pub grid: usize,
    /// Numerical cap on `K_ν`.
    pub k_max: u32,
    pub kappa_scale: f64,
    /// Modes below `noise_rel × (input scale)` are treated as roundoff.
    pub noise_rel: f64,
    pub strip: StripGrid,
}

impl StepContext {
    pub fn k_eff(&self, schedule: &KamSchedule, nu: usize) -> u32 {
        schedule.k_int(nu).min(self.k_max).max(1)
    }

    pub fn melnikov(&self, schedule: &KamSchedule, nu: usize) -> MelnikovParams {
        MelnikovParams::oscillator(schedule.n, schedule.kappa[nu] * self.kappa_scale, self.k_eff(schedule, nu))
    }
}

#[derive(Debug, Clone)]
pub struct KamState {
    pub nu: usize,
    pub n_mat: BlockMatrix,
    pub p: FourierBlockMatrix,
    /// `B_ν` sampled on the uniform grid of the step context.
    pub b_samples: Arc<Vec<CMat>>,
    /// False until some step moved `B` away from the identity.
    pub b_moved: bool,
}

impl KamState {
    pub fn initial(n0: BlockMatrix, p0: FourierBlockMatrix, grid: usize) -> Self {
        let dim = n0.dim();
        let total = grid.pow(p0.n() as u32);
        let id = CMat::identity(dim, dim);
        Self { nu: 0, n_mat: n0, p: p0, b_samples: Arc::new(vec![id; total]), b_moved: false }
    }

    pub fn basis(&self) -> &Arc<BasisSet> {
        self.n_mat.basis()
    }

    /// `B_ν` as a Fourier series on all modes the grid resolves.
    /// Modes whose largest entry is at most `floor` are dropped as roundoff.
    pub fn b_fourier(&self, grid: usize, floor: f64) -> FourierBlockMatrix {
        let n = self.p.n();
        if !self.b_moved {
            return FourierBlockMatrix::constant(BlockMatrix::identity(self.basis()), n);
        }
        let half = ((grid - 1) / 2) as u32;
        let mut fit = FourierBlockMatrix::from_grid(self.basis(), n, grid, &self.b_samples, half * n as u32, 0.0).value;
        fit.prune(floor);
        fit
    }

    /// Worst `‖B†B − I‖` over the grid.
    pub fn b_unitarity(&self) -> f64 {
        self.b_samples.par_iter().map(unitarity_defect).collect::<Vec<_>>().into_iter().fold(0.0, f64::max)
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub nu: usize,
    pub eps: f64,
    pub sigma: f64,
    pub kappa: f64,
    pub k_schedule: f64,
    pub k_eff: u32,
    /// `[P_ν]` on the strip `σ_{ν+1}`.
    pub p_norm: f64,
    /// `ε·sup|P − S_{σ_ν}P|` on the real torus.
    pub smoothing_deficit: f64,
    /// `[B_ν⁻¹(Q_{ν+1} − Q_ν)B_ν]` on `σ_{ν+1}`.
    pub swap_norm: f64,
    /// `[F_{ν+1}]_+` on `σ_{ν+2}`.
    pub f_norm: f64,
    /// Strip residual of the homological identity.
    pub defect: f64,
    pub min_divisor: f64,
    pub critical_kappa: f64,
    pub violations: usize,
    pub tail_mass: f64,
    pub dropped_noise: f64,
    pub unitarity: f64,
    pub drift: f64,
    pub contraction_warning: bool,
}

impl StepRecord {
    pub fn csv_header() -> &'static str {
        "nu,eps,sigma,kappa,K,K_eff,P_norm,F_norm,defect,smoothing_deficit,swap_norm,min_divisor,critical_kappa,violations,tail_mass,dropped_noise,unitarity,N_drift"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{:e},{:e},{:e},{:e}",
            self.nu,
            self.eps,
            self.sigma,
            self.kappa,
            self.k_schedule,
            self.k_eff,
            self.p_norm,
            self.f_norm,
            self.defect,
            self.smoothing_deficit,
            self.swap_norm,
            self.min_divisor,
            self.critical_kappa,
            self.violations,
            self.tail_mass,
            self.dropped_noise,
            self.unitarity,
            self.drift
        )
    }
}

fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Exact conjugation at one θ: returns `(P₊, U)` with `U = exp(−iF)` and
/// `P₊ = U†[N, U−I] + U†P̃U + iU†(ω·∇U) − Ñ`, where `ω·∇U` comes from the
/// divided differences of `x ↦ e^{−ix}` on the spectrum of `F`.
pub fn conjugate_at(n: &CMat, f: &CMat, fdot: &CMat, p_tilde: &CMat, n_tilde: &CMat) -> (CMat, CMat) {
    let (lam, v) = hermitian_eig(f);
    let vh = v.adjoint();
    let diag = |g: &dyn Fn(f64) -> C64| {
        let mut w = v.clone();
        for (j, mut col) in w.column_iter_mut().enumerate() {
            col *= g(lam[j]);
        }
        w * &vh
    };
    let u = diag(&|l| C64::from_polar(1.0, -l));
    let u_minus = diag(&|l| C64::from_polar(-2.0 * (0.5 * l).sin(), -0.5 * l) * I);
    let uh = u.adjoint();
    let comm = n * &u_minus - &u_minus * n;
    let mut gauge = &vh * fdot * &v;
    for j in 0..gauge.nrows() {
        for k in 0..gauge.ncols() {
            let dl = lam[j] - lam[k];
            gauge[(j, k)] *= C64::from_polar(sinc(0.5 * dl), 0.5 * dl);
        }
    }
    let gauge = &v * gauge * &vh;
    let out = &uh * comm + &uh * p_tilde * &u + gauge - n_tilde;
    (hermitize(&out), u)
}

/// The same object through the order splitting
/// `P₊ = ∫₀¹ e^{itF} i[F, tΓP̃ + (1−t)Ñ] e^{−itF} dt + e^{iF} R e^{−iF}`,
/// integrated with `nodes`-point Gauss–Legendre in `t`.
pub fn integral_formula_at(f: &CMat, gamma_p: &CMat, r: &CMat, n_tilde: &CMat, nodes: usize) -> CMat {
    let (lam, v) = hermitian_eig(f);
    let vh = v.adjoint();
    let conj = |t: f64, a: &CMat| {
        let mut e = v.clone();
        for (j, mut col) in e.column_iter_mut().enumerate() {
            col *= C64::from_polar(1.0, t * lam[j]);
        }
        let e = e * &vh;
        &e * a * e.adjoint()
    };
    let (ts, ws) = gauss_legendre01(nodes);
    let mut acc = conj(1.0, r);
    for (&t, &w) in ts.iter().zip(&ws) {
        let a = gamma_p * C64::new(t, 0.0) + n_tilde * C64::new(1.0 - t, 0.0);
        let c = (f * &a - &a * f) * I;
        acc += conj(t, &c) * C64::new(w, 0.0);
    }
    acc
}

/// Outcome of [`kam_step`].
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: KamState,
    pub record: StepRecord,
    pub f: FourierBlockMatrix,
    pub p_tilde: FourierBlockMatrix,
    pub n_tilde: BlockMatrix,
}

fn strip_at(schedule: &KamSchedule, nu: usize) -> f64 {
    schedule.sigma[nu.min(schedule.sigma.len() - 1)]
}

/// Step `ν → ν+1` given the smoothing increment `Q_{ν+1} − Q_ν`.
/// `p_norm` and `smoothing_deficit` of the record are filled by the caller.
pub fn kam_step(
    state: &KamState,
    increment: &FourierBlockMatrix,
    schedule: &KamSchedule,
    ctx: &StepContext,
) -> Result<StepOutcome, KamError> {
    let nu = state.nu;
    let basis = state.basis().clone();
    let n = state.p.n();
    if ctx.omega.len() != n {
        return Err(KamError::OmegaLength { got: ctx.omega.len(), want: n });
    }
    let g = ctx.grid;
    let k_eff = ctx.k_eff(schedule, nu);
    let k_cap = 2 * k_eff;
    if g <= 4 * k_cap as usize {
        return Err(KamError::GridTooSmall { grid: g, k_cap });
    }
    let params = ctx.melnikov(schedule, nu);
    let report = check_melnikov(&ctx.omega, &state.n_mat, &params);
    if let Some(v) = report.violations.first() {
        return Err(KamError::Inadmissible { step: nu, violation: v.clone(), count: report.violations.len() });
    }
    let sigma_mid = strip_at(schedule, nu + 1);
    let sigma_out = strip_at(schedule, nu + 2);

    let mut record = StepRecord {
        nu,
        eps: schedule.eps[nu],
        sigma: schedule.sigma[nu],
        kappa: params.kappa,
        k_schedule: schedule.k[nu],
        k_eff,
        p_norm: f64::NAN,
        smoothing_deficit: f64::NAN,
        swap_norm: 0.0,
        f_norm: 0.0,
        defect: 0.0,
        min_divisor: f64::INFINITY,
        critical_kappa: report.critical_kappa,
        violations: 0,
        tail_mass: 0.0,
        dropped_noise: 0.0,
        unitarity: 0.0,
        drift: 0.0,
        contraction_warning: false,
    };

    // P̃_ν = P_ν + B_ν⁻¹ ΔQ B_ν
    let mut inc = increment.truncate(k_cap);
    inc.prune(0.0);
    record.tail_mass += increment.tail(k_cap).modes().map(|(_, m)| m.max_abs()).sum::<f64>();
    let mut p_tilde = state.p.clone();
    if !inc.is_empty() {
        let conj = if state.b_moved {
            let q = inc.to_grid(g, None);
            let samples: Vec<CMat> = q
                .par_iter()
                .zip(state.b_samples.par_iter())
                .map(|(qm, b)| hermitize(&(b.adjoint() * qm * b)))
                .collect();
            let scale = samples.iter().map(max_abs).fold(0.0, f64::max);
            let fit = FourierBlockMatrix::from_grid(&basis, n, g, &samples, k_cap, ctx.noise_rel * scale);
            record.tail_mass += fit.tail_mass;
            record.dropped_noise += fit.dropped_noise;
            fit.value
        } else {
            inc
        };
        record.swap_norm = conj.strip_norm(sigma_mid, &ctx.norm, false, ctx.strip);
        p_tilde = p_tilde.add(&conj);
        p_tilde.prune(0.0);
    }

    if p_tilde.is_empty() {
        let mut next = state.clone();
        next.nu = nu + 1;
        record.unitarity = state.b_unitarity();
        record.drift = (&state.n_mat - &BlockMatrix::unperturbed(&basis)).norm(&ctx.norm);
        return Ok(StepOutcome {
            state: next,
            record,
            f: FourierBlockMatrix::zero(&basis, n),
            n_tilde: BlockMatrix::zeros(&basis),
            p_tilde,
        });
    }

    let check = ResidualCheck { sigma_prime: sigma_out, norm: ctx.norm, grid: ctx.strip };
    let sol = solve_homological(&state.n_mat, &p_tilde, &ctx.omega, &params, Some(check)).map_err(|e| match e {
        crate::homology::HomologyError::DivisorUnderflow { k, cluster_a, cluster_b, divisor, threshold } => {
            KamError::Inadmissible {
                step: nu,
                violation: crate::homology::Violation { k, cluster_a, cluster_b, divisor, threshold },
                count: 1,
            }
        }
        other => KamError::Homology(other),
    })?;
    record.min_divisor = sol.min_divisor;
    record.defect = sol.residual.unwrap_or(0.0);
    record.f_norm = sol.f.strip_norm(sigma_out, &ctx.norm, true, ctx.strip);

    let n_next = &state.n_mat + &sol.n_tilde;
    let n_dense = state.n_mat.dense().clone();
    let n_tilde = sol.n_tilde.dense().clone();
    let n_norm = max_abs(&n_dense);
    let f_grid = sol.f.to_grid(g, None);
    let fdot_grid = sol.f.omega_derivative(&ctx.omega).to_grid(g, None);
    let p_grid = p_tilde.to_grid(g, None);
    let results: Vec<(CMat, CMat, f64)> = (0..f_grid.len())
        .into_par_iter()
        .map(|i| {
            let (pn, u) = conjugate_at(&n_dense, &f_grid[i], &fdot_grid[i], &p_grid[i], &n_tilde);
            let scale = n_norm * max_abs(&f_grid[i]) + max_abs(&p_grid[i]) + max_abs(&fdot_grid[i]);
            (pn, &state.b_samples[i] * u, scale)
        })
        .collect();
    let scale = results.iter().map(|r| r.2).fold(0.0, f64::max);
    let (p_samples, b_samples): (Vec<CMat>, Vec<CMat>) = results.into_iter().map(|(p, b, _)| (p, b)).unzip();
    let fit = FourierBlockMatrix::from_grid(&basis, n, g, &p_samples, k_cap, ctx.noise_rel * scale);
    record.tail_mass += fit.tail_mass;
    record.dropped_noise += fit.dropped_noise;

    let next = KamState { nu: nu + 1, n_mat: n_next, p: fit.value, b_samples: Arc::new(b_samples), b_moved: true };
    record.unitarity = next.b_unitarity();
    record.drift = (&next.n_mat - &BlockMatrix::unperturbed(&basis)).norm(&ctx.norm);
    Ok(StepOutcome { state: next, record, f: sol.f, p_tilde, n_tilde: sol.n_tilde })
}

/// Largest gap between [`conjugate_at`] and [`integral_formula_at`] over
/// `samples` grid points, for a step already taken.
pub fn integral_cross_check(
    n_mat: &BlockMatrix,
    outcome: &StepOutcome,
    ctx: &StepContext,
    k_eff: u32,
    samples: usize,
    nodes: usize,
) -> f64 {
    let n = outcome.p_tilde.n();
    let g = ctx.grid;
    let total = g.pow(n as u32);
    let gamma = outcome.p_tilde.truncate(k_eff);
    let tail = outcome.p_tilde.tail(k_eff);
    let fdot = outcome.f.omega_derivative(&ctx.omega);
    let step = (total / samples.max(1)).max(1);
    (0..total)
        .step_by(step)
        .map(|p| {
            let th = grid_point(p, g, n);
            let f = outcome.f.eval_real(&th);
            let (exact, _) = conjugate_at(
                n_mat.dense(),
                &f,
                &fdot.eval_real(&th),
                &outcome.p_tilde.eval_real(&th),
                outcome.n_tilde.dense(),
            );
            let split = integral_formula_at(
                &f,
                &gamma.eval_real(&th),
                &tail.eval_real(&th),
                outcome.n_tilde.dense(),
                nodes,
            );
            max_abs(&(exact - split))
        })
        .fold(0.0, f64::max)
}
