//! Run configuration: JSON schema, defaults and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::basis::PotentialSpec;
use crate::kam::KamConfig;
use crate::validate::Integrator;

use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Assemble,
    SmoothRate,
    Melnikov,
    Measure,
    Reduce,
    Validate,
    Full,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Assemble => "assemble",
            Mode::SmoothRate => "smooth-rate",
            Mode::Melnikov => "melnikov",
            Mode::Measure => "measure",
            Mode::Reduce => "reduce",
            Mode::Validate => "validate",
            Mode::Full => "full",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    pub sigmas: Vec<f64>,
    /// Real-θ grid per direction for the sup norm.
    pub grid: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self { sigmas: (2..=9).map(|j| 2f64.powi(-j)).collect(), grid: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelnikovConfig {
    pub kappa: f64,
    pub k_cut: u32,
}

impl Default for MelnikovConfig {
    fn default() -> Self {
        Self { kappa: 1e-3, k_cut: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    Grid,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureConfig {
    pub kappas: Vec<f64>,
    pub k_cut: u32,
    /// Grid points per direction, or Monte Carlo sample count.
    pub points: usize,
    pub lo: f64,
    pub hi: f64,
    pub sampler: Sampler,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self {
            kappas: (0..=8).map(|j| 10f64.powf(-4.0 + 0.25 * j as f64)).collect(),
            k_cut: 10,
            points: 10_000,
            lo: 0.0,
            hi: 2.0 * std::f64::consts::PI,
            sampler: Sampler::Grid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    /// Horizon in forcing periods `2π/|ω|`.
    pub periods: f64,
    pub dt: f64,
    pub method: Integrator,
    pub s_prime: Vec<f64>,
    pub sample_dt: f64,
    /// Initial data `ξ_a ∝ w_a^{−decay}`.
    pub initial_decay: f64,
    /// Bound `C_window` on the measured Sobolev constant.
    pub window_limit: f64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            periods: 100.0,
            dt: 0.02,
            method: Integrator::Magnus4,
            s_prime: vec![0.0, 1.0],
            sample_dt: 0.25,
            initial_decay: 2.0,
            window_limit: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmegaSampler {
    pub count: usize,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: Option<Mode>,
    /// Potential JSON, relative to the configuration file.
    pub potential: PathBuf,
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default)]
    pub n: Option<usize>,
    pub eps: f64,
    pub w_max: u32,
    #[serde(default)]
    pub omega: Vec<Vec<f64>>,
    #[serde(default)]
    pub omega_sampler: Option<OmegaSampler>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub quad_order: Option<usize>,
    #[serde(default)]
    pub kam: KamConfig,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
    #[serde(default)]
    pub melnikov: MelnikovConfig,
    #[serde(default)]
    pub measure: MeasureConfig,
    #[serde(default)]
    pub validate: ValidateConfig,
}

/// A configuration with its potential loaded and checked.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub potential: PotentialSpec,
    pub potential_path: PathBuf,
    pub warnings: Vec<String>,
}

impl LoadedConfig {
    pub fn d(&self) -> usize {
        self.potential.d
    }

    pub fn n(&self) -> usize {
        self.potential.n
    }
}

fn bad(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

/// Parses `--omega "v1,v2,…"`, grouping consecutive values into vectors of
/// length `n`.
pub fn parse_omega_list(s: &str, n: usize) -> Result<Vec<Vec<f64>>, PipelineError> {
    let vals = s
        .split([',', ';'])
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<f64>().map_err(|_| bad(format!("cannot parse frequency '{t}'"))))
        .collect::<Result<Vec<_>, _>>()?;
    if vals.is_empty() || vals.len() % n != 0 {
        return Err(bad(format!("{} frequency values do not split into vectors of length {n}", vals.len())));
    }
    Ok(vals.chunks(n).map(|c| c.to_vec()).collect())
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<LoadedConfig, PipelineError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
    let config: RunConfig =
        serde_json::from_str(&text).map_err(|e| bad(format!("invalid config {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    resolve(config, base)
}

/// Validates a configuration whose relative paths start at `base`.
pub fn resolve(config: RunConfig, base: &Path) -> Result<LoadedConfig, PipelineError> {
    let potential_path =
        if config.potential.is_absolute() { config.potential.clone() } else { base.join(&config.potential) };
    if !potential_path.exists() {
        return Err(bad(format!("potential file not found: {}", potential_path.display())));
    }
    let text = std::fs::read_to_string(&potential_path)
        .map_err(|e| bad(format!("cannot read potential {}: {e}", potential_path.display())))?;
    let potential = PotentialSpec::from_json(&text)
        .map_err(|e| bad(format!("invalid potential {}: {e}", potential_path.display())))?;
    potential.validate().map_err(|e| bad(format!("invalid potential {}: {e}", potential_path.display())))?;
    let (d, n) = (potential.d, potential.n);
    if d == 0 || n == 0 {
        return Err(bad("d and n must be at least 1"));
    }
    if config.d.is_some_and(|v| v != d) || config.n.is_some_and(|v| v != n) {
        return Err(bad(format!("config (d, n) = ({:?}, {:?}) disagrees with the potential ({d}, {n})", config.d, config.n)));
    }
    if !(config.eps > 0.0 && config.eps < 1.0) {
        return Err(bad(format!("eps must lie in (0, 1), got {}", config.eps)));
    }
    if config.w_max < d as u32 {
        return Err(bad(format!("w_max = {} leaves the basis empty for d = {d}", config.w_max)));
    }
    if config.threads == Some(0) {
        return Err(bad("threads must be at least 1"));
    }
    for w in &config.omega {
        if w.len() != n || w.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("frequency {w:?} is not a finite vector of length {n}")));
        }
    }
    if let Some(s) = &config.omega_sampler {
        if s.count == 0 || !(s.lo < s.hi) {
            return Err(bad("omega_sampler needs count > 0 and lo < hi"));
        }
    }
    let v = &config.validate;
    if !(v.dt > 0.0 && v.periods > 0.0 && v.sample_dt > 0.0) {
        return Err(bad("validate.dt, validate.periods and validate.sample_dt must be positive"));
    }
    if config.measure.kappas.iter().any(|k| !(*k > 0.0)) || !(config.measure.lo < config.measure.hi) {
        return Err(bad("measure.kappas must be positive and lo < hi"));
    }
    let mut warnings = Vec::new();
    let s = config.kam.s;
    if !(s > 2.0 * (d as f64 - 2.0)) {
        warnings.push(format!("s = {s} does not satisfy s > 2(d - 2) = {}", 2.0 * (d as f64 - 2.0)));
    }
    Ok(LoadedConfig { config, potential, potential_path, warnings })
}

impl LoadedConfig {
    /// Explicit frequencies followed by the seeded sampler draws.
    pub fn frequencies(&self, seed: u64) -> Vec<Vec<f64>> {
        let mut out = self.config.omega.clone();
        if let Some(s) = &self.config.omega_sampler {
            out.extend(crate::homology::omega_monte_carlo(self.n(), s.count, s.lo, s.hi, seed));
        }
        out
    }
}
