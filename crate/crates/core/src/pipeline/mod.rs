//! Orchestration behind the `hkam` binary: configuration, stage execution,
//! artifacts and the run manifest.

mod config;
mod report;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{assemble_potential_matrix, enumerate_basis, AssemblyReport, BasisSet, QuadOptions};
use crate::blockmat::{write_container, BlockMatrix, FourierBlockMatrix, WeightedSeq};
use crate::homology::{check_melnikov, measure_sweep, omega_grid, omega_monte_carlo, MelnikovParams};
use crate::kam::{run_reduction, ReductionResult, Status};
use crate::linalg::C64;
use crate::smoothing::holder_rate_fit;
use crate::validate::{
    attach_conjugacy, integrate_direct, quasi_energies, secular_ratio, sobolev_window, DirectOptions, ReducedFlow,
};

pub use config::{
    load_config, parse_omega_list, resolve, LoadedConfig, MeasureConfig, MelnikovConfig, Mode, OmegaSampler,
    RunConfig, Sampler, SmoothingConfig, ValidateConfig,
};
pub use report::{report, ReportSummary};

/// Schema tag of manifests and of everything `report` accepts.
pub const SCHEMA: &str = "hkam-manifest/1";
/// Environment variable that overrides every other thread-count setting.
pub const THREADS_ENV: &str = "HKAM_THREADS";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numeric(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Io { .. } => 2,
            PipelineError::Numeric(_) => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

/// One invariant check reported in the manifest. Failing critical suites
/// turn the exit code into 3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub name: String,
    pub passed: bool,
    pub critical: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub mode: String,
    /// `ok`, `inadmissible` or `failed`.
    pub status: String,
    pub version: String,
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    pub threads: usize,
    pub config: serde_json::Value,
    pub potential: serde_json::Value,
    pub timing_ms: BTreeMap<String, f64>,
    pub suites: Vec<Suite>,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
    pub failure: Option<String>,
}

/// Command-line level request.
#[derive(Debug, Clone)]
pub struct RunRequest {
    pub mode: Mode,
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub omega: Option<String>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub manifest: Option<Manifest>,
    pub message: Option<String>,
}

/// Thread count: environment override, then flag, then config, then the
/// machine's parallelism.
pub fn resolve_threads(flag: Option<usize>, config: Option<usize>) -> Result<usize, PipelineError> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let t: usize = v.trim().parse().map_err(|_| PipelineError::Config(format!("{THREADS_ENV}='{v}' is not a count")))?;
        if t == 0 {
            return Err(PipelineError::Config(format!("{THREADS_ENV} must be at least 1")));
        }
        return Ok(t);
    }
    match flag.or(config) {
        Some(0) => Err(PipelineError::Config("threads must be at least 1".into())),
        Some(t) => Ok(t),
        None => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

struct Run<'a> {
    cfg: &'a LoadedConfig,
    out: &'a Path,
    seed: u64,
    omegas: Vec<Vec<f64>>,
    basis: Arc<BasisSet>,
    suites: Vec<Suite>,
    outputs: Vec<String>,
    warnings: Vec<String>,
    timing: BTreeMap<String, f64>,
    inadmissible: bool,
    potential: Option<(FourierBlockMatrix, AssemblyReport)>,
    reductions: Vec<Option<ReductionResult>>,
}

impl Run<'_> {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.out.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn write_json(&mut self, name: &str, v: &impl Serialize) -> Result<(), PipelineError> {
        let mut text = serde_json::to_string_pretty(v).expect("serializable");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn write_matrix(&mut self, name: &str, q: &FourierBlockMatrix) -> Result<(), PipelineError> {
        let mut buf = Vec::new();
        let norm = Some(self.cfg.config.kam.norm_params(self.cfg.d()));
        write_container(&mut buf, q, norm).map_err(|e| PipelineError::Numeric(format!("container: {e}")))?;
        self.write(name, &buf)
    }

    fn suite(&mut self, name: impl Into<String>, passed: bool, critical: bool, detail: impl Into<String>) {
        self.suites.push(Suite { name: name.into(), passed, critical, detail: detail.into() });
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T, PipelineError>) -> Result<T, PipelineError> {
        let t0 = Instant::now();
        let r = f(self);
        self.timing.insert(stage.to_string(), t0.elapsed().as_secs_f64() * 1e3);
        r
    }

    fn potential(&mut self) -> Result<FourierBlockMatrix, PipelineError> {
        if self.potential.is_none() {
            let opts = QuadOptions { order: self.cfg.config.quad_order, ..QuadOptions::default() };
            let (p, rep) = assemble_potential_matrix(&self.cfg.potential, &self.basis, None, opts)
                .map_err(|e| PipelineError::Numeric(format!("assembly: {e}")))?;
            self.warnings.extend(rep.warnings.iter().cloned());
            self.potential = Some((p, rep));
        }
        Ok(self.potential.as_ref().expect("just set").0.clone())
    }

    fn need_omegas(&self) -> Result<(), PipelineError> {
        if self.omegas.is_empty() {
            return Err(PipelineError::Config("no frequencies: set `omega`, `omega_sampler` or --omega".into()));
        }
        Ok(())
    }

    fn assemble(&mut self) -> Result<(), PipelineError> {
        let p = self.potential()?;
        let rep = self.potential.as_ref().expect("assembled").1.clone();
        let herm = p.hermitian_pairing_defect();
        self.suite("assembly_orthonormality", rep.orthonormality_defect <= 1e-10, true, format!("Gram defect {:.3e}", rep.orthonormality_defect));
        self.suite("assembly_hermitian", herm <= 1e-12, true, format!("pairing defect {herm:.3e}"));
        self.write_matrix("potential.hkm", &p)?;
        self.write_json("assembly.json", &rep)
    }

    fn smooth_rate(&mut self) -> Result<(), PipelineError> {
        let p = self.potential()?;
        let sc = self.cfg.config.smoothing.clone();
        let norm = self.cfg.config.kam.norm_params(self.cfg.d());
        let fit = holder_rate_fit(&p, &sc.sigmas, &norm, sc.grid).map_err(|e| PipelineError::Config(format!("smoothing: {e}")))?;
        self.write("smooth_rate.csv", fit.to_csv().as_bytes())?;
        if let (Some(bv), Some(slope)) = (self.cfg.potential.beta_v, fit.slope) {
            self.suite("smoothing_rate", (slope - bv).abs() <= 0.3, false, format!("slope {slope:.4} against declared beta {bv}"));
        }
        self.write_json("smooth_rate.json", &serde_json::json!({ "beta_v": self.cfg.potential.beta_v, "fit": fit }))
    }

    fn melnikov(&mut self) -> Result<(), PipelineError> {
        self.need_omegas()?;
        let mc = self.cfg.config.melnikov.clone();
        let n0 = BlockMatrix::unperturbed(&self.basis);
        let params = MelnikovParams::oscillator(self.cfg.n(), mc.kappa, mc.k_cut);
        let mut summary = String::from("index,omega,kappa,k_cut,admissible,violations,critical_kappa\n");
        let mut detail = String::from("index,k,cluster_a,cluster_b,divisor,threshold\n");
        for (i, w) in self.omegas.iter().enumerate() {
            let r = check_melnikov(w, &n0, &params);
            summary.push_str(&format!(
                "{i},{},{:e},{},{},{},{:e}\n",
                join(w),
                mc.kappa,
                mc.k_cut,
                r.admissible,
                r.violations.len(),
                r.critical_kappa
            ));
            for line in r.to_csv().lines().skip(1) {
                detail.push_str(&format!("{i},{line}\n"));
            }
        }
        self.write("melnikov.csv", summary.as_bytes())?;
        self.write("melnikov_violations.csv", detail.as_bytes())
    }

    fn measure(&mut self) -> Result<(), PipelineError> {
        let mc = self.cfg.config.measure.clone();
        let n = self.cfg.n();
        let sample = match mc.sampler {
            Sampler::Grid => {
                let per = (mc.points as f64).powf(1.0 / n as f64).round().max(1.0) as usize;
                omega_grid(n, per, mc.lo, mc.hi)
            }
            Sampler::MonteCarlo => omega_monte_carlo(n, mc.points, mc.lo, mc.hi, self.seed),
        };
        let n0 = BlockMatrix::unperturbed(&self.basis);
        let alpha = self.cfg.config.kam.norm_params(self.cfg.d()).alpha;
        let sweep = measure_sweep(&sample, &n0, &mc.kappas, mc.k_cut, alpha)
            .map_err(|e| PipelineError::Config(format!("measure: {e}")))?;
        if let Some(s) = sweep.slope {
            self.suite("measure_slope", (0.8..=1.2).contains(&s), false, format!("excluded fraction ~ kappa^{s:.4}"));
        }
        self.write("measure.csv", sweep.to_csv().as_bytes())?;
        self.write_json("measure.json", &sweep)
    }

    fn reduce(&mut self) -> Result<(), PipelineError> {
        self.need_omegas()?;
        let p = self.potential()?;
        let eps = self.cfg.config.eps;
        let kc = self.cfg.config.kam.clone();
        let norm = kc.norm_params(self.cfg.d());
        let eps0 = 2.0 * kc.c_eps * eps;
        let mut rows = Vec::new();
        self.reductions.clear();
        for (i, w) in self.omegas.clone().iter().enumerate() {
            let r = run_reduction(&p, w, eps, &kc).map_err(|e| PipelineError::Numeric(format!("reduction at omega {w:?}: {e}")))?;
            self.write(&format!("trace_{i}.csv"), r.trace_csv().as_bytes())?;
            let status = match &r.status {
                Status::Converged => "converged",
                Status::MaxSteps => "max_steps",
                Status::Inadmissible { .. } => "inadmissible",
            };
            let drift = (&r.n_inf - &r.n0).norm(&norm);
            let unit = r.trace.iter().map(|t| t.unitarity).fold(r.defect.unitarity, f64::max);
            rows.push(serde_json::json!({
                "index": i,
                "omega": w,
                "status": r.status,
                "steps": r.trace.len(),
                "final_eps": r.final_eps(),
                "final_p_norm": r.final_p_norm(),
                "defect": r.defect,
                "drift": drift,
                "unitarity": unit,
                "schedule_checks": r.schedule.checks,
                "contraction_warnings": r.contraction_warnings,
                "quasi_energies": quasi_energies(&r).values(),
            }));
            self.warnings.extend(r.contraction_warnings.iter().map(|s| format!("omega {i}: {s}")));
            if !r.admissible() {
                self.inadmissible = true;
                self.reductions.push(None);
                continue;
            }
            self.write_matrix(&format!("m_omega_{i}.hkm"), &r.m_omega)?;
            self.write_matrix(&format!("n_inf_{i}.hkm"), &FourierBlockMatrix::constant(r.n_inf.clone(), self.cfg.n()))?;
            self.suite(format!("reduce_{i}_unitarity"), unit <= 1e-12, true, format!("max |B*B - I| = {unit:.3e}"));
            let nf = r.n_inf.off_block_diagonal_max() == 0.0 && r.n_inf.is_hermitian();
            self.suite(format!("reduce_{i}_normal_form"), nf, true, "N_inf block diagonal and Hermitian");
            self.suite(format!("reduce_{i}_drift"), drift <= 2.0 * eps0, true, format!("[N_inf - N0] = {drift:.3e}, bound {:.3e}", 2.0 * eps0));
            self.suite(format!("reduce_{i}_converged"), r.status == Status::Converged, true, status);
            let bound = 10.0 * r.final_eps() + 1e-10;
            self.suite(
                format!("reduce_{i}_conjugacy_defect"),
                r.defect.max_abs <= bound,
                true,
                format!("defect {:.3e}, bound {bound:.3e}", r.defect.max_abs),
            );
            self.suite(format!("reduce_{i}_contraction"), r.contraction_warnings.is_empty(), false, format!("{} warnings", r.contraction_warnings.len()));
            self.reductions.push(Some(r));
        }
        self.write_json("reduce.json", &rows)
    }

    fn validate(&mut self) -> Result<(), PipelineError> {
        if self.reductions.len() != self.omegas.len() {
            self.reduce()?;
        }
        let p = self.potential()?;
        let vc = self.cfg.config.validate.clone();
        let eps = self.cfg.config.eps;
        let weights = self.basis.weights();
        let raw: WeightedSeq = DVector::from_fn(weights.len(), |a, _| C64::new(weights[a].powf(-vc.initial_decay), 0.0));
        let xi0 = &raw / C64::new(raw.norm(), 0.0);
        let opts = DirectOptions { method: vc.method, sample_dt: vc.sample_dt, s_values: vc.s_prime.clone(), ..DirectOptions::default() };
        let mut rows = Vec::new();
        let reductions = std::mem::take(&mut self.reductions);
        for (i, r) in reductions.iter().enumerate() {
            let Some(r) = r else { continue };
            let w = &r.omega;
            let wnorm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            let t_end = vc.periods * 2.0 * std::f64::consts::PI / wnorm.max(1e-12);
            let mut rec = integrate_direct(&xi0, &p, w, eps, t_end, vc.dt, &opts)
                .map_err(|e| PipelineError::Numeric(format!("integration at omega {w:?}: {e}")))?;
            let flow = ReducedFlow::new(r).map_err(|e| PipelineError::Numeric(e.to_string()))?;
            attach_conjugacy(&mut rec, &flow).map_err(|e| PipelineError::Numeric(e.to_string()))?;
            self.write(&format!("trajectory_{i}.csv"), rec.to_csv().as_bytes())?;
            let errs = rec.conjugacy.clone().unwrap_or_default();
            let worst = errs.iter().copied().fold(0.0, f64::max);
            let tol = 10.0 * r.final_eps() + 100.0 * rec.error_estimate;
            let ratio = secular_ratio(&rec.times, &errs);
            let half = rec.until(0.5 * t_end);
            let mut windows = Vec::new();
            for &s in &vc.s_prime {
                let c = sobolev_window(&rec, s, eps).map_err(|e| PipelineError::Numeric(e.to_string()))?;
                let c_half = sobolev_window(&half, s, eps).map_err(|e| PipelineError::Numeric(e.to_string()))?;
                self.suite(format!("validate_{i}_window_s{s}"), c <= vc.window_limit, true, format!("c_meas {c:.4e} (limit {})", vc.window_limit));
                let growth = if c_half > 0.0 { c / c_half } else { 1.0 };
                self.suite(format!("validate_{i}_window_s{s}_stable"), growth <= 1.5, false, format!("c(T)/c(T/2) = {growth:.4}"));
                windows.push(serde_json::json!({ "s_prime": s, "c_meas": c, "c_meas_half": c_half }));
            }
            let drift_rate = rec.l2_drift / t_end;
            self.suite(format!("validate_{i}_conjugacy"), worst <= tol, true, format!("sup error {worst:.3e}, budget {tol:.3e}"));
            self.suite(format!("validate_{i}_secular"), ratio <= 2.0, true, format!("second/first half {ratio:.4}"));
            self.suite(format!("validate_{i}_norm_drift"), drift_rate <= 1e-12, true, format!("l2 drift per unit time {drift_rate:.3e}"));
            rows.push(serde_json::json!({
                "index": i,
                "omega": w,
                "t_end": t_end,
                "dt": rec.dt,
                "order": rec.order,
                "error_estimate": rec.error_estimate,
                "conjugacy_sup": worst,
                "conjugacy_budget": tol,
                "secular_ratio": ratio,
                "l2_drift": rec.l2_drift,
                "windows": windows,
            }));
            self.warnings.extend(rec.warnings.iter().map(|s| format!("omega {i}: {s}")));
        }
        self.reductions = reductions;
        self.write_json("validate.json", &rows)
    }
}

fn join(w: &[f64]) -> String {
    w.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
}

/// Runs one pipeline. Configuration problems give exit code 2 and no
/// manifest; everything else writes `manifest.json`.
pub fn run(req: &RunRequest) -> RunOutcome {
    let fail = |e: PipelineError| RunOutcome { exit_code: e.exit_code(), manifest: None, message: Some(e.to_string()) };
    let cfg = match load_config(&req.config) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let threads = match resolve_threads(req.threads, cfg.config.threads) {
        Ok(t) => t,
        Err(e) => return fail(e),
    };
    let seed = req.seed.unwrap_or(cfg.config.seed);
    let omegas = match &req.omega {
        Some(s) => match parse_omega_list(s, cfg.n()) {
            Ok(v) => v,
            Err(e) => return fail(e),
        },
        None => cfg.frequencies(seed),
    };
    if let Err(e) = fs::create_dir_all(&req.out) {
        return fail(PipelineError::Io { path: req.out.display().to_string(), source: e });
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => return fail(PipelineError::Config(format!("thread pool: {e}"))),
    };
    pool.install(|| execute(req, &cfg, seed, threads, omegas))
}

fn execute(req: &RunRequest, cfg: &LoadedConfig, seed: u64, threads: usize, omegas: Vec<Vec<f64>>) -> RunOutcome {
    let basis = match enumerate_basis(cfg.d(), cfg.config.w_max) {
        Ok(b) => Arc::new(b),
        Err(e) => {
            return RunOutcome { exit_code: 2, manifest: None, message: Some(format!("basis: {e}")) };
        }
    };
    let mut run = Run {
        cfg,
        out: &req.out,
        seed,
        omegas,
        basis,
        suites: Vec::new(),
        outputs: Vec::new(),
        warnings: cfg.warnings.clone(),
        timing: BTreeMap::new(),
        inadmissible: false,
        potential: None,
        reductions: Vec::new(),
    };
    let stages: Vec<Mode> = match req.mode {
        Mode::Full => vec![Mode::Assemble, Mode::SmoothRate, Mode::Melnikov, Mode::Measure, Mode::Reduce, Mode::Validate],
        m => vec![m],
    };
    let mut failure = None;
    for st in stages {
        let r = run.timed(st.name(), |r| match st {
            Mode::Assemble => r.assemble(),
            Mode::SmoothRate => r.smooth_rate(),
            Mode::Melnikov => r.melnikov(),
            Mode::Measure => r.measure(),
            Mode::Reduce => r.reduce(),
            Mode::Validate => r.validate(),
            Mode::Full => unreachable!("expanded above"),
        });
        if let Err(e) = r {
            if e.exit_code() == 2 {
                return RunOutcome { exit_code: 2, manifest: None, message: Some(e.to_string()) };
            }
            failure = Some(e.to_string());
            break;
        }
    }
    let critical_failed: Vec<String> =
        run.suites.iter().filter(|s| s.critical && !s.passed).map(|s| s.name.clone()).collect();
    if failure.is_none() && !critical_failed.is_empty() {
        failure = Some(format!("failed invariants: {}", critical_failed.join(", ")));
    }
    let status = if failure.is_some() {
        "failed"
    } else if run.inadmissible {
        "inadmissible"
    } else {
        "ok"
    };
    let mut outputs = run.outputs.clone();
    outputs.push("manifest.json".into());
    let manifest = Manifest {
        schema: SCHEMA.into(),
        mode: req.mode.name().into(),
        status: status.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        d: cfg.d(),
        n: cfg.n(),
        seed,
        threads,
        config: serde_json::to_value(&cfg.config).expect("serializable"),
        potential: serde_json::to_value(&cfg.potential).expect("serializable"),
        timing_ms: run.timing.clone(),
        suites: run.suites.clone(),
        outputs,
        warnings: run.warnings.clone(),
        failure: failure.clone(),
    };
    let path = req.out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("serializable") + "\n";
    if let Err(e) = fs::write(&path, text) {
        return RunOutcome { exit_code: 2, manifest: Some(manifest), message: Some(format!("cannot write {}: {e}", path.display())) };
    }
    let exit_code = if failure.is_some() { 3 } else { 0 };
    RunOutcome { exit_code, manifest: Some(manifest), message: failure }
}
