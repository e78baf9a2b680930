//! Parameter sequences `ε_ν, σ_ν, κ_ν, K_ν` and the audit of the
//! assumptions the iteration relies on.

use serde::Serialize;

use super::KamError;

/// One named assumption, evaluated on the generated sequences.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub holds: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct KamSchedule {
    /// `ε_ν` for `ν = 0..=ν_max+1` (may underflow to 0 deep in the run).
    pub eps: Vec<f64>,
    /// `ln ε_ν`, kept so that nothing downstream divides by an underflow.
    pub ln_eps: Vec<f64>,
    pub sigma: Vec<f64>,
    pub kappa: Vec<f64>,
    /// `K_ν` as a float: it exceeds `u64` quickly for small β.
    pub k: Vec<f64>,
    pub beta: f64,
    pub alpha: f64,
    pub delta: f64,
    pub d: usize,
    pub n: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    pub t1: f64,
    pub t2: f64,
    pub beta_star: f64,
    pub nu_max: usize,
    pub checks: Vec<AssumptionCheck>,
    pub warnings: Vec<String>,
}

impl KamSchedule {
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }

    /// `K_ν` rounded and clamped into `u32`.
    pub fn k_int(&self, nu: usize) -> u32 {
        self.k[nu].min(u32::MAX as f64) as u32
    }
}

/// Oscillator constants: `γ₁ = max{d+n+2, n+1}`, `γ₂ = α/(4+d+2α)`.
pub fn gammas(d: usize, n: usize, alpha: f64) -> (f64, f64) {
    let g1 = ((d + n + 2) as f64).max(n as f64 + 1.0);
    let g2 = alpha / (4.0 + d as f64 + 2.0 * alpha);
    (g1, g2)
}

/// Builds the sequences from `ε₀` (already including the constant `2c`).
/// `delta = None` picks `γ₂/48`, the midpoint of the admissible range.
pub fn make_schedule(
    eps0: f64,
    beta: f64,
    d: usize,
    n: usize,
    alpha: f64,
    delta: Option<f64>,
    nu_max: usize,
) -> Result<KamSchedule, KamError> {
    if !(eps0 > 0.0 && eps0 < 1.0) {
        return Err(KamError::InvalidEps(eps0));
    }
    if !(beta > 0.0) || !(alpha > 0.0 && alpha <= 1.0) || d == 0 || n == 0 {
        return Err(KamError::InvalidSchedule(format!("beta = {beta}, alpha = {alpha}, d = {d}, n = {n}")));
    }
    let (gamma1, gamma2) = gammas(d, n, alpha);
    let delta = delta.unwrap_or(gamma2 / 48.0);
    if !(delta > 0.0 && delta < gamma2 / 24.0) {
        return Err(KamError::InvalidDelta { delta, max: gamma2 / 24.0 });
    }
    let (df, nf) = (d as f64, n as f64);
    let t1 = 3.0 / (2.0 * beta);
    let t2 = 1.0 / (6.0 * (2.0 + df / alpha));
    let beta_star = (9.0 * (2.0 + df / alpha) * gamma1 / (gamma2 - 24.0 * delta)).max(9.0 * nf).max(12.0 * (df + 1.0));

    let len = nu_max + 2;
    let ln0 = eps0.ln();
    let ln_eps: Vec<f64> = (0..len).map(|nu| ln0 * 1.5f64.powi(nu as i32)).collect();
    let eps: Vec<f64> = ln_eps.iter().map(|l| l.exp()).collect();
    let mut sigma = vec![1.0];
    sigma.extend(ln_eps.iter().take(len - 1).map(|l| (t1 * l).exp()));
    let kappa: Vec<f64> = ln_eps.iter().map(|l| (t2 * l).exp()).collect();
    let k: Vec<f64> = ln_eps.iter().map(|l| (8.0 * l.abs() * (-t1 * l).exp()).ceil()).collect();

    let mut checks = Vec::new();
    // σ_{ν+1}^β = ε_ν^{3/2}, so the series is geometric-like once ε₀ < 1.
    let partial: f64 = sigma.iter().map(|s| s.powf(beta)).sum();
    checks.push(AssumptionCheck {
        name: "B1".into(),
        holds: partial.is_finite(),
        detail: format!("sum of sigma^beta over the schedule = {partial:.6e}"),
    });
    let b2 = (0..len - 1).find(|&nu| sigma[nu + 1] > 0.5 * sigma[nu]);
    checks.push(AssumptionCheck {
        name: "B2".into(),
        holds: b2.is_none(),
        detail: b2.map_or("sigma halves at every step".into(), |nu| {
            format!("sigma_{} = {:.4e} > sigma_{nu}/2 = {:.4e}", nu + 1, sigma[nu + 1], 0.5 * sigma[nu])
        }),
    });
    let b3 = (1..len).find(|&nu| (df + 1.0) * k[nu - 1].ln() > -ln_eps[nu - 1] / 8.0);
    let t_ok = nf * t1 <= 1.0 / 6.0 + 1e-12 && (2.0 + df / alpha) * t2 <= 1.0 / 6.0 + 1e-12;
    checks.push(AssumptionCheck {
        name: "B3".into(),
        holds: b3.is_none() && t_ok,
        detail: match b3 {
            Some(nu) => format!(
                "K_{}^(d+1) = {:.4e} exceeds eps^(-1/8) = {:.4e}; n t1 = {:.4}",
                nu - 1,
                k[nu - 1].powf(df + 1.0),
                (-ln_eps[nu - 1] / 8.0).exp(),
                nf * t1
            ),
            None => format!("n t1 = {:.4}, (2 + d/alpha) t2 = {:.4}", nf * t1, (2.0 + df / alpha) * t2),
        },
    });
    let b4 = (0..len - 1).all(|nu| (ln_eps[nu + 1] - 1.5 * ln_eps[nu]).abs() <= 1e-12 * ln_eps[nu + 1].abs());
    checks.push(AssumptionCheck { name: "B4".into(), holds: b4, detail: "eps_{nu+1} = eps_nu^(3/2)".into() });
    checks.push(AssumptionCheck {
        name: "B5".into(),
        holds: beta >= 3.0 / (2.0 * t1) * (1.0 - 1e-12),
        detail: format!("3/(2 t1) = {:.4}", 3.0 / (2.0 * t1)),
    });
    let b6 = (0..len - 1).find(|&nu| -0.25 * k[nu] * sigma[nu + 1] > ln_eps[nu]);
    checks.push(AssumptionCheck {
        name: "B6".into(),
        holds: b6.is_none(),
        detail: b6.map_or("exp(-K sigma/4) <= eps at every step".into(), |nu| format!("fails at nu = {nu}")),
    });

    let mut warnings = Vec::new();
    if beta <= beta_star {
        warnings.push(format!("beta = {beta} is below the threshold {beta_star:.4e}"));
    }
    for c in checks.iter().filter(|c| !c.holds) {
        warnings.push(format!("assumption {} violated: {}", c.name, c.detail));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(KamSchedule {
        eps,
        ln_eps,
        sigma,
        kappa,
        k,
        beta,
        alpha,
        delta,
        d,
        n,
        gamma1,
        gamma2,
        t1,
        t2,
        beta_star,
        nu_max,
        checks,
        warnings,
    })
}
