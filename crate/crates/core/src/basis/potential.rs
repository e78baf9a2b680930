//! Separable quasi-periodic potentials `V(θ,x) = Σ_m g_m(θ) h_m(x)` and their
//! matrix elements `P_a^b(θ) = ∫ V(θ,x) Φ_a(x) Φ_b(x) dx`.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hermite::{hermite_fns, odd_to_level};
use super::quadrature::{gauss_hermite_rule, GaussHermiteRule};
use super::{BasisError, BasisSet};
use crate::blockmat::{l1, BlockMatrix, FourierBlockMatrix, Mode};
use crate::linalg::C64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub d: usize,
    pub n: usize,
    pub terms: Vec<PotentialTerm>,
    /// Declared θ-regularity of the potential.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_v: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialTerm {
    #[serde(flatten)]
    pub theta: ThetaProfile,
    pub x_profile: XProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaProfile {
    /// Entries `[k_1, ..., k_n, re, im]`.
    ThetaModes(Vec<Vec<f64>>),
    /// `Σ_{j<depth} λ^{-βj} cos(λ^j θ_1)`.
    Weierstrass { beta: f64, lambda: u32, depth: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum XProfile {
    /// `h = Σ_c h_c Φ_c`, entries `[c_1, ..., c_d, value]`.
    HermiteCoeffs { coeffs: Vec<Vec<f64>> },
    ClosedFormId { id: ClosedForm },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosedForm {
    /// `e^{-|x|²}`
    Gaussian,
    /// `x_1`
    X,
    /// `|x|²`
    X2,
    /// `sech |x|`
    Sech,
    /// `1`
    One,
}

impl ClosedForm {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        match self {
            ClosedForm::Gaussian => (-r2).exp(),
            ClosedForm::X => x[0],
            ClosedForm::X2 => r2,
            ClosedForm::Sech => 1.0 / r2.sqrt().cosh(),
            ClosedForm::One => 1.0,
        }
    }

    /// Polynomial degree when the profile is a polynomial.
    fn degree(&self) -> Option<usize> {
        match self {
            ClosedForm::X => Some(1),
            ClosedForm::X2 => Some(2),
            ClosedForm::One => Some(0),
            _ => None,
        }
    }
}

impl PotentialSpec {
    pub fn from_json(s: &str) -> Result<Self, BasisError> {
        let spec: Self = serde_json::from_str(s).map_err(|e| BasisError::InvalidPotential(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), BasisError> {
        let bad = |m: String| Err(BasisError::InvalidPotential(m));
        if self.d == 0 || self.n == 0 {
            return bad("d and n must be positive".into());
        }
        if self.terms.is_empty() {
            return bad("no terms".into());
        }
        for (t, term) in self.terms.iter().enumerate() {
            self.theta_series(t)?;
            if let XProfile::HermiteCoeffs { coeffs } = &term.x_profile {
                for c in coeffs {
                    if c.len() != self.d + 1 || c.iter().any(|v| !v.is_finite()) {
                        return bad(format!("term {t}: hermite coefficient entry {c:?}"));
                    }
                    if c[..self.d].iter().any(|&i| i < 1.0 || i.fract() != 0.0 || (i as u32).is_multiple_of(2)) {
                        return bad(format!("term {t}: index {c:?} is not an odd tuple"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Fourier coefficients of `g_t`.
    pub fn theta_series(&self, t: usize) -> Result<BTreeMap<Mode, C64>, BasisError> {
        let bad = |m: String| Err(BasisError::InvalidPotential(m));
        let mut out: BTreeMap<Mode, C64> = BTreeMap::new();
        match &self.terms[t].theta {
            ThetaProfile::ThetaModes(list) => {
                for e in list {
                    if e.len() != self.n + 2 || e.iter().any(|v| !v.is_finite()) {
                        return bad(format!("term {t}: mode entry {e:?} needs n + 2 finite numbers"));
                    }
                    if e[..self.n].iter().any(|k| k.fract() != 0.0) {
                        return bad(format!("term {t}: non-integer mode {e:?}"));
                    }
                    let k: Mode = e[..self.n].iter().map(|&v| v as i32).collect();
                    *out.entry(k).or_default() += C64::new(e[self.n], e[self.n + 1]);
                }
                for (k, c) in &out {
                    let mk: Mode = k.iter().map(|x| -x).collect();
                    let partner = out.get(&mk).copied().unwrap_or_default();
                    if (partner - c.conj()).norm() > 1e-12 * (1.0 + c.norm()) {
                        return bad(format!("term {t}: θ-profile is not real (mode {k:?})"));
                    }
                }
            }
            ThetaProfile::Weierstrass { beta, lambda, depth } => {
                if *lambda < 2 || *depth == 0 || !(*beta > 0.0) {
                    return bad(format!("term {t}: weierstrass needs lambda ≥ 2, depth ≥ 1, beta > 0"));
                }
                let lam = *lambda as f64;
                if lam.powi(*depth as i32 - 1) > i32::MAX as f64 / 2.0 {
                    return bad(format!("term {t}: weierstrass depth too large"));
                }
                for j in 0..*depth {
                    let f = lam.powi(j as i32) as i32;
                    let c = C64::new(0.5 * lam.powf(-beta * j as f64), 0.0);
                    let mut k = vec![0; self.n];
                    k[0] = f;
                    *out.entry(k.clone()).or_default() += c;
                    k[0] = -f;
                    *out.entry(k).or_default() += c;
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadOptions {
    /// Points per dimension; `None` uses `2·m_max + 16` and doubles while the
    /// orthonormality defect exceeds `gram_tol`.
    pub order: Option<usize>,
    pub gram_tol: f64,
    /// Gram differences between `order` and `3·order/2` above this are
    /// reported as an accuracy warning.
    pub warn_tol: f64,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self { order: None, gram_tol: 1e-10, warn_tol: 1e-10 }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AssemblyReport {
    pub quad_order: usize,
    pub orthonormality_defect: f64,
    /// Largest change of a closed-form Gram entry when the order grows by 50%.
    pub quad_error_estimate: f64,
    pub dropped_modes: usize,
    /// `Σ |ĝ(k)| |G|_max` over modes beyond the cap.
    pub dropped_mass: f64,
    pub warnings: Vec<String>,
}

/// Tensor quadrature data: nodes × basis function values.
struct Sampled {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    phi: DMatrix<f64>,
}

fn sample_basis(basis: &BasisSet, rule: &GaussHermiteRule) -> Sampled {
    let d = basis.d();
    let q = rule.order();
    let m_max = odd_to_level(basis.max_index()).unwrap_or(0);
    let table: Vec<Vec<f64>> = rule.nodes.iter().map(|&x| hermite_fns(m_max, x)).collect();
    let total = q.pow(d as u32);
    let mut points = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        points.push(idx.iter().map(|&i| rule.nodes[i]).collect());
        weights.push(idx.iter().map(|&i| rule.scaled_weights[i]).product());
        for a in (0..d).rev() {
            idx[a] += 1;
            if idx[a] < q {
                break;
            }
            idx[a] = 0;
        }
    }
    let phi = DMatrix::from_fn(basis.dim(), total, |b, p| {
        let mut v = 1.0;
        let mut rem = p;
        for a in (0..d).rev() {
            let node = rem % q;
            rem /= q;
            v *= table[node][((basis.indices()[b].tuple[a] - 1) / 2) as usize];
        }
        v
    });
    Sampled { points, weights, phi }
}

fn quadrature_gram(s: &Sampled, f: impl Fn(&[f64]) -> f64) -> DMatrix<f64> {
    let mut weighted = s.phi.clone();
    for (p, mut col) in weighted.column_iter_mut().enumerate() {
        col *= s.weights[p] * f(&s.points[p]);
    }
    let g = &weighted * s.phi.transpose();
    (&g + g.transpose()) * 0.5
}

/// `∫ φ_i φ_j φ_l dx` exactly, through the substitution `x = y √(2/3)`.
fn triple_1d(i: u32, j: u32, l: u32, cache: &mut HashMap<(u32, u32, u32), f64>) -> f64 {
    let mut key = [i, j, l];
    key.sort_unstable();
    let key = (key[0], key[1], key[2]);
    if let Some(v) = cache.get(&key) {
        return *v;
    }
    let (mi, mj, ml) = ((i - 1) / 2, (j - 1) / 2, (l - 1) / 2);
    let v = if (mi + mj + ml) % 2 == 1 {
        0.0
    } else {
        let order = ((mi + mj + ml) / 2 + 2) as usize;
        let rule = gauss_hermite_rule(order).expect("order in range");
        let c = (2.0f64 / 3.0).sqrt();
        let top = mi.max(mj).max(ml) as usize;
        rule.nodes
            .iter()
            .zip(&rule.scaled_weights)
            .map(|(&y, &w)| {
                let h = hermite_fns(top, y * c);
                w * h[mi as usize] * h[mj as usize] * h[ml as usize]
            })
            .sum::<f64>()
            * c
    };
    cache.insert(key, v);
    v
}

fn coeff_gram(basis: &BasisSet, coeffs: &[Vec<f64>]) -> DMatrix<f64> {
    let d = basis.d();
    let mut cache = HashMap::new();
    let n = basis.dim();
    let mut g = DMatrix::zeros(n, n);
    for c in coeffs {
        let ct: Vec<u32> = c[..d].iter().map(|&v| v as u32).collect();
        let hc = c[d];
        for a in 0..n {
            for b in a..n {
                let ta = &basis.indices()[a].tuple;
                let tb = &basis.indices()[b].tuple;
                let v: f64 = (0..d).map(|m| triple_1d(ta[m], tb[m], ct[m], &mut cache)).product();
                g[(a, b)] += hc * v;
                if a != b {
                    g[(b, a)] += hc * v;
                }
            }
        }
    }
    g
}

fn orthonormality_defect(s: &Sampled) -> f64 {
    let g = quadrature_gram(s, |_| 1.0);
    let n = g.nrows();
    (g - DMatrix::identity(n, n)).abs().max()
}

/// Assemble `P(θ) = Σ_k P^k e^{i⟨k,θ⟩}`; modes with `|k|₁ > k_cap` are
/// dropped and their mass reported.
pub fn assemble_potential_matrix(
    spec: &PotentialSpec,
    basis: &Arc<BasisSet>,
    k_cap: Option<u32>,
    opts: QuadOptions,
) -> Result<(FourierBlockMatrix, AssemblyReport), BasisError> {
    spec.validate()?;
    if spec.d != basis.d() {
        return Err(BasisError::DimensionMismatch { got: basis.d(), want: spec.d });
    }
    let mut report = AssemblyReport::default();
    let m_max = odd_to_level(basis.max_index())?;
    let mut order = opts.order.unwrap_or(2 * m_max + 16);
    let mut sampled = sample_basis(basis, &gauss_hermite_rule(order)?);
    let mut defect = orthonormality_defect(&sampled);
    if opts.order.is_none() {
        while defect > opts.gram_tol && order * 2 <= 700 {
            order *= 2;
            sampled = sample_basis(basis, &gauss_hermite_rule(order)?);
            defect = orthonormality_defect(&sampled);
        }
    }
    if defect > opts.gram_tol {
        report.warnings.push(format!("orthonormality defect {defect:.3e} at quadrature order {order}"));
    }
    report.quad_order = order;
    report.orthonormality_defect = defect;

    let needs_check = spec.terms.iter().any(|t| {
        matches!(t.x_profile, XProfile::ClosedFormId { id } if id.degree().is_none())
    });
    let finer = if needs_check && (order * 3 / 2) <= 700 {
        Some(sample_basis(basis, &gauss_hermite_rule(order * 3 / 2)?))
    } else {
        None
    };

    let grams: Vec<DMatrix<f64>> = spec
        .terms
        .par_iter()
        .map(|t| match &t.x_profile {
            XProfile::HermiteCoeffs { coeffs } => coeff_gram(basis, coeffs),
            XProfile::ClosedFormId { id } => quadrature_gram(&sampled, |x| id.eval(x)),
        })
        .collect();
    if let Some(fine) = &finer {
        for (t, g) in spec.terms.iter().zip(&grams) {
            if let XProfile::ClosedFormId { id } = t.x_profile {
                if id.degree().is_none() {
                    let e = (quadrature_gram(fine, |x| id.eval(x)) - g).abs().max();
                    report.quad_error_estimate = report.quad_error_estimate.max(e);
                }
            }
        }
    }
    if report.quad_error_estimate > opts.warn_tol {
        let msg = format!("estimated quadrature error {:.3e} at order {order}", report.quad_error_estimate);
        log::warn!("{msg}");
        report.warnings.push(msg);
    }

    let mut out = FourierBlockMatrix::zero(basis, spec.n);
    for (t, g) in grams.iter().enumerate() {
        let gmax = g.abs().max();
        for (k, c) in spec.theta_series(t)? {
            if k_cap.is_some_and(|cap| l1(&k) > cap) {
                report.dropped_modes += 1;
                report.dropped_mass += c.norm() * gmax;
                continue;
            }
            let m = BlockMatrix::from_dense(basis, g.map(|v| c * v)).expect("shape");
            out.add_mode(k, m).expect("mode length");
        }
    }
    out.prune(0.0);
    Ok((out, report))
}
