//! Gauss–Hermite quadrature.

use nalgebra::{DMatrix, SymmetricEigen};

use super::hermite::hermite_fns;
use super::BasisError;

/// Rule for `∫ e^{-x²} p(x) dx`, exact for polynomials of degree `≤ 2n-1`.
///
/// `scaled_weights[k] = weights[k] e^{x_k²}` integrate `∫ f(x) dx` for
/// `f = e^{-x²}·poly` without forming the Gaussian explicitly; they are
/// computed directly from the Christoffel function `1 / Σ_{m<n} ψ_m(x_k)²`
/// so they keep full relative accuracy in the tails.
#[derive(Debug, Clone)]
pub struct GaussHermiteRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub scaled_weights: Vec<f64>,
}

impl GaussHermiteRule {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }
}

pub fn gauss_hermite_rule(order: usize) -> Result<GaussHermiteRule, BasisError> {
    if order == 0 || order > 700 {
        return Err(BasisError::QuadOrder(order));
    }
    let n = order;
    let jac = DMatrix::<f64>::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            ((i.max(j) as f64) / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = SymmetricEigen::new(jac).eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);
    for x in nodes.iter_mut() {
        // Newton polish on ψ_n, with ψ_n' = √(2n) ψ_{n-1} - x ψ_n.
        for _ in 0..3 {
            let psi = hermite_fns(n, *x);
            let d = (2.0 * n as f64).sqrt() * psi[n - 1] - *x * psi[n];
            if d == 0.0 {
                break;
            }
            let step = psi[n] / d;
            *x -= step;
            if step.abs() < 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
    }
    // Symmetrize to kill the last-ulp asymmetry.
    for k in 0..n / 2 {
        let m = 0.5 * (nodes[n - 1 - k] - nodes[k]);
        nodes[k] = -m;
        nodes[n - 1 - k] = m;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let scaled_weights: Vec<f64> = nodes
        .iter()
        .map(|&x| 1.0 / hermite_fns(n - 1, x).iter().map(|p| p * p).sum::<f64>())
        .collect();
    let weights = nodes.iter().zip(&scaled_weights).map(|(x, l)| l * (-x * x).exp()).collect();
    Ok(GaussHermiteRule { nodes, weights, scaled_weights })
}
