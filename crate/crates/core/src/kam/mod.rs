//! The smooth-KAM iteration: schedule, steps, and the limit `(M_ω, N_∞)`.

mod schedule;
mod step;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blockmat::{BlockError, BlockMatrix, FourierBlockMatrix, NormParams, StripGrid};
use crate::homology::{HomologyError, Violation};
use crate::linalg::{max_abs, CMat, C64, I};
use crate::smoothing::{build_family, real_sup_norm, SmoothingError};

pub use schedule::{gammas, make_schedule, AssumptionCheck, KamSchedule};
pub use step::{
    conjugate_at, integral_cross_check, integral_formula_at, kam_step, KamState, StepContext, StepOutcome,
    StepRecord,
};

#[derive(Debug, Error, PartialEq)]
pub enum KamError {
    #[error("perturbation size must lie in (0, 1), got {0}")]
    InvalidEps(f64),
    #[error("delta = {delta} outside (0, {max})")]
    InvalidDelta { delta: f64, max: f64 },
    #[error("invalid schedule parameters: {0}")]
    InvalidSchedule(String),
    #[error("frequency vector has length {got}, expected {want}")]
    OmegaLength { got: usize, want: usize },
    #[error("grid of {grid} points cannot carry modes up to {k_cap} with headroom")]
    GridTooSmall { grid: usize, k_cap: u32 },
    #[error("step {step}: resonance at k = {:?}, clusters ({}, {}), divisor {:.3e} < {:.3e} ({count} violations)", violation.k, violation.cluster_a, violation.cluster_b, violation.divisor, violation.threshold)]
    Inadmissible { step: usize, violation: Violation, count: usize },
    #[error(transparent)]
    Homology(#[from] HomologyError),
    #[error(transparent)]
    Smoothing(#[from] SmoothingError),
    #[error(transparent)]
    Block(#[from] BlockError),
}

/// Run configuration of the iteration (everything except `V`, `ω`, `ε`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KamConfig {
    /// Constant `c` in `ε₀ = 2cε`.
    pub c_eps: f64,
    pub beta: f64,
    pub delta: Option<f64>,
    pub s: f64,
    pub alpha: Option<f64>,
    pub nu_max: usize,
    /// Cap on `K_ν`; `None` picks 64 for one frequency and 8 otherwise.
    pub k_max: Option<u32>,
    /// Grid points per direction are `grid_factor · 2 k_max + 1`.
    pub grid_factor: usize,
    pub kappa_scale: f64,
    /// Stop once `[P_ν]` and the smoothing deficit are both below this.
    pub tol: f64,
    pub noise_rel: f64,
    /// Points per direction for strip norms; `None` adapts to the modes.
    pub strip_points: Option<usize>,
    /// Compare exact conjugation with the integral formula at every step.
    pub cross_check: bool,
}

impl Default for KamConfig {
    fn default() -> Self {
        Self {
            c_eps: 1.0,
            beta: 150.0,
            delta: None,
            s: 1.0,
            alpha: None,
            nu_max: 6,
            k_max: None,
            grid_factor: 4,
            kappa_scale: 1.0,
            tol: 1e-30,
            noise_rel: 1e-14,
            strip_points: None,
            cross_check: false,
        }
    }
}

impl KamConfig {
    pub fn norm_params(&self, d: usize) -> NormParams {
        match self.alpha {
            Some(a) => NormParams::new(self.s, a),
            None => NormParams::for_dimension(d, self.s),
        }
    }

    pub fn k_max_for(&self, n: usize) -> u32 {
        self.k_max.unwrap_or(if n == 1 { 64 } else { 8 })
    }

    pub fn grid_for(&self, n: usize) -> usize {
        self.grid_factor.max(4) * 2 * self.k_max_for(n) as usize + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxSteps,
    Inadmissible { step: usize, violation: Violation, count: usize },
}

/// `M_ω†(N₀ + εP)M_ω + iM_ω†(ω·∇M_ω) − N_∞` sampled on the real grid.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConjugacyDefect {
    pub norm: f64,
    pub max_abs: f64,
    pub off_block: f64,
    pub unitarity: f64,
}

#[derive(Debug, Clone)]
pub struct ReductionResult {
    pub m_omega: FourierBlockMatrix,
    pub n_inf: BlockMatrix,
    pub n0: BlockMatrix,
    pub status: Status,
    pub trace: Vec<StepRecord>,
    pub schedule: KamSchedule,
    pub eps: f64,
    pub omega: Vec<f64>,
    pub defect: ConjugacyDefect,
    /// Worst gap between exact conjugation and the integral formula.
    pub cross_check: Option<f64>,
    pub contraction_warnings: Vec<String>,
}

impl ReductionResult {
    pub fn admissible(&self) -> bool {
        !matches!(self.status, Status::Inadmissible { .. })
    }

    /// `ε_ν` of the last recorded row.
    pub fn final_eps(&self) -> f64 {
        self.trace.last().map_or(self.schedule.eps[0], |r| r.eps)
    }

    pub fn final_p_norm(&self) -> f64 {
        self.trace.last().map_or(0.0, |r| r.p_norm)
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from(StepRecord::csv_header());
        s.push('\n');
        for r in &self.trace {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }
}

/// Conjugacy defect of `(M, N_∞)` for the family `N₀ + εP` at frequency ω.
pub fn conjugacy_defect(
    m: &FourierBlockMatrix,
    n_inf: &BlockMatrix,
    p: &FourierBlockMatrix,
    eps: f64,
    omega: &[f64],
    norm: &NormParams,
    min_grid: usize,
) -> ConjugacyDefect {
    let basis = n_inf.basis().clone();
    let k = m.max_linf().max(p.max_linf()) as usize;
    let g = min_grid.max(2 * k + 1) | 1;
    let n0 = BlockMatrix::unperturbed(&basis);
    let m_grid = m.to_grid(g, None);
    let md_grid = m.omega_derivative(omega).to_grid(g, None);
    let p_grid = p.to_grid(g, None);
    let rows: Vec<ConjugacyDefect> = (0..m_grid.len())
        .into_par_iter()
        .map(|i| {
            let mm = &m_grid[i];
            let h = n0.dense() + &p_grid[i] * C64::new(eps, 0.0);
            let d: CMat = mm.adjoint() * h * mm + mm.adjoint() * &md_grid[i] * I - n_inf.dense();
            let bm = BlockMatrix::from_dense(&basis, d).expect("shape");
            ConjugacyDefect {
                norm: bm.norm(norm),
                max_abs: bm.max_abs(),
                off_block: bm.off_block_diagonal_max(),
                unitarity: crate::linalg::unitarity_defect(mm),
            }
        })
        .collect();
    rows.into_iter().fold(ConjugacyDefect { norm: 0.0, max_abs: 0.0, off_block: 0.0, unitarity: 0.0 }, |a, b| {
        ConjugacyDefect {
            norm: a.norm.max(b.norm),
            max_abs: a.max_abs.max(b.max_abs),
            off_block: a.off_block.max(b.off_block),
            unitarity: a.unitarity.max(b.unitarity),
        }
    })
}

/// Runs the iteration for `N₀ + εP(θ)` at frequency ω.
pub fn run_reduction(
    p: &FourierBlockMatrix,
    omega: &[f64],
    eps: f64,
    config: &KamConfig,
) -> Result<ReductionResult, KamError> {
    if !(0.0..1.0).contains(&eps) {
        return Err(KamError::InvalidEps(eps));
    }
    let basis = p.basis().clone();
    let n = p.n();
    if omega.len() != n {
        return Err(KamError::OmegaLength { got: omega.len(), want: n });
    }
    let d = basis.d();
    let norm = config.norm_params(d);
    // ε = 0 still needs a schedule; any ε₀ in (0,1) gives the same trivial run
    let eps0 = if eps > 0.0 { 2.0 * config.c_eps * eps } else { 0.5 };
    let schedule = make_schedule(eps0, config.beta, d, n, norm.alpha, config.delta, config.nu_max)?;
    let grid = config.grid_for(n);
    let ctx = StepContext {
        omega: omega.to_vec(),
        norm,
        grid,
        k_max: config.k_max_for(n),
        kappa_scale: config.kappa_scale,
        noise_rel: config.noise_rel,
        strip: config.strip_points.map_or_else(StripGrid::default, StripGrid::fixed),
    };

    let target = p.scale(C64::new(eps, 0.0));
    let family = build_family(&target, &schedule.sigma)?;
    let n0 = BlockMatrix::unperturbed(&basis);
    let mut state = KamState::initial(n0.clone(), family.members[0].clone(), grid);
    let mut trace = Vec::new();
    let mut status = Status::MaxSteps;
    let mut cross = None::<f64>;
    let mut warnings = Vec::new();

    for nu in 0..=config.nu_max {
        let p_norm = state.p.strip_norm(schedule.sigma[nu + 1], &norm, false, ctx.strip);
        let deficit = {
            let mut rest = target.sub(&family.members[nu]);
            rest.prune(0.0);
            if rest.is_empty() {
                0.0
            } else {
                real_sup_norm(&rest, &norm, rest.max_linf() as usize * 4 + 9)
            }
        };
        if nu > 0 && p_norm > 0.5 * schedule.eps[nu] {
            let w = format!("[P_{nu}] = {p_norm:.3e} exceeds eps_{nu}/2 = {:.3e}", 0.5 * schedule.eps[nu]);
            log::warn!("{w}");
            warnings.push(w);
            if let Some(last) = trace.last_mut() {
                let last: &mut StepRecord = last;
                last.contraction_warning = true;
            }
        }
        if p_norm <= config.tol && deficit <= config.tol {
            trace.push(StepRecord {
                nu,
                eps: schedule.eps[nu],
                sigma: schedule.sigma[nu],
                kappa: schedule.kappa[nu] * ctx.kappa_scale,
                k_schedule: schedule.k[nu],
                k_eff: ctx.k_eff(&schedule, nu),
                p_norm,
                smoothing_deficit: deficit,
                swap_norm: 0.0,
                f_norm: 0.0,
                defect: 0.0,
                min_divisor: f64::INFINITY,
                critical_kappa: f64::INFINITY,
                violations: 0,
                tail_mass: 0.0,
                dropped_noise: 0.0,
                unitarity: state.b_unitarity(),
                drift: (&state.n_mat - &n0).norm(&norm),
                contraction_warning: false,
            });
            status = Status::Converged;
            break;
        }
        if nu == config.nu_max {
            break;
        }
        let increment = family.increment(nu);
        match kam_step(&state, &increment, &schedule, &ctx) {
            Ok(out) => {
                if config.cross_check && !out.f.is_empty() {
                    let k_eff = ctx.k_eff(&schedule, nu);
                    let c = integral_cross_check(&state.n_mat, &out, &ctx, k_eff, 8, 16);
                    cross = Some(cross.map_or(c, |x: f64| x.max(c)));
                }
                let mut rec = out.record;
                rec.p_norm = p_norm;
                rec.smoothing_deficit = deficit;
                trace.push(rec);
                state = out.state;
            }
            Err(KamError::Inadmissible { step, violation, count }) => {
                let mut rec = StepRecord {
                    nu,
                    eps: schedule.eps[nu],
                    sigma: schedule.sigma[nu],
                    kappa: schedule.kappa[nu] * ctx.kappa_scale,
                    k_schedule: schedule.k[nu],
                    k_eff: ctx.k_eff(&schedule, nu),
                    p_norm,
                    smoothing_deficit: deficit,
                    swap_norm: 0.0,
                    f_norm: 0.0,
                    defect: 0.0,
                    min_divisor: violation.divisor,
                    critical_kappa: f64::NAN,
                    violations: count,
                    tail_mass: 0.0,
                    dropped_noise: 0.0,
                    unitarity: state.b_unitarity(),
                    drift: (&state.n_mat - &n0).norm(&norm),
                    contraction_warning: false,
                };
                let w = |c: usize| basis.clusters()[c].weight as f64;
                rec.critical_kappa = violation.divisor / (1.0 + (w(violation.cluster_a) - w(violation.cluster_b)).abs());
                trace.push(rec);
                status = Status::Inadmissible { step, violation, count };
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let m_omega = state.b_fourier(grid, config.noise_rel);
    let n_inf = state.n_mat.clone();
    let defect = conjugacy_defect(&m_omega, &n_inf, p, eps, omega, &norm, grid);
    Ok(ReductionResult {
        m_omega,
        n_inf,
        n0,
        status,
        trace,
        schedule,
        eps,
        omega: omega.to_vec(),
        defect,
        cross_check: cross,
        contraction_warnings: warnings,
    })
}

/// `Π⟨P⟩`: block-diagonal part of the θ-average.
pub fn averaged_normal_form(p: &FourierBlockMatrix) -> BlockMatrix {
    let zero = vec![0; p.n()];
    p.mode(&zero).map(|m| m.block_diagonal_part()).unwrap_or_else(|| BlockMatrix::zeros(p.basis()))
}

/// `max |B(θ)†B(θ) − I|` at the given real angles.
pub fn unitarity_at(b: &FourierBlockMatrix, thetas: &[Vec<f64>]) -> f64 {
    thetas.iter().map(|t| crate::linalg::unitarity_defect(&b.eval_real(t))).fold(0.0, f64::max)
}

/// Used by tests and examples: `sup |B(θ) − I|` over the real grid.
pub fn distance_from_identity(b: &FourierBlockMatrix, g: usize) -> f64 {
    let id = CMat::identity(b.dim(), b.dim());
    b.to_grid(g.max(2 * b.max_linf() as usize + 1), None).iter().map(|m| max_abs(&(m - &id))).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests;
