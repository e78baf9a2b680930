//! Normalized Hermite functions `φ_i`, indexed by the odd eigenvalue `i`
//! of `-d²/dx² + x²` (so `φ_i = ψ_m` with `i = 2m + 1`).

use super::BasisError;

const PI_M14: f64 = 0.751_125_544_464_942_5; // π^{-1/4}

/// `ψ_0(x), ..., ψ_{m_max}(x)` by the three-term recurrence.
pub fn hermite_fns(m_max: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(m_max + 1);
    let p0 = PI_M14 * (-0.5 * x * x).exp();
    out.push(p0);
    if m_max == 0 {
        return out;
    }
    out.push(std::f64::consts::SQRT_2 * x * p0);
    for m in 1..m_max {
        let mf = m as f64;
        let next = (2.0 / (mf + 1.0)).sqrt() * x * out[m] - (mf / (mf + 1.0)).sqrt() * out[m - 1];
        out.push(next);
    }
    out
}

/// `φ_i(x)` for odd `i ≥ 1`.
pub fn hermite_fn(i: u32, x: f64) -> Result<f64, BasisError> {
    let m = odd_to_level(i)?;
    Ok(hermite_fns(m, x)[m])
}

/// Second derivative of `φ_i` obtained by applying the ladder identity
/// `ψ_m' = √(m/2) ψ_{m-1} - √((m+1)/2) ψ_{m+1}` twice. Independent of the
/// eigenvalue relation, so it can be used to check it.
pub fn hermite_deriv2_by_recurrence(i: u32, x: f64) -> Result<f64, BasisError> {
    let m = odd_to_level(i)?;
    let psi = hermite_fns(m + 2, x);
    let first = |k: usize| -> f64 {
        let kf = k as f64;
        let down = if k == 0 { 0.0 } else { (kf / 2.0).sqrt() * psi[k - 1] };
        down - ((kf + 1.0) / 2.0).sqrt() * psi[k + 1]
    };
    let mf = m as f64;
    let down = if m == 0 { 0.0 } else { (mf / 2.0).sqrt() * first(m - 1) };
    Ok(down - ((mf + 1.0) / 2.0).sqrt() * first(m + 1))
}

/// `Φ_a(x) = Π_m φ_{a_m}(x_m)`.
pub fn hermite_tensor_eval(tuple: &[u32], x: &[f64]) -> Result<f64, BasisError> {
    let mut v = 1.0;
    for (&i, &xm) in tuple.iter().zip(x) {
        v *= hermite_fn(i, xm)?;
    }
    Ok(v)
}

pub(crate) fn odd_to_level(i: u32) -> Result<usize, BasisError> {
    if i.is_multiple_of(2) {
        return Err(BasisError::BadIndex(i));
    }
    Ok(((i - 1) / 2) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms_of_low_levels() {
        for &x in &[-2.0f64, -0.3, 0.0, 0.7, 3.1] {
            let g = PI_M14 * (-0.5 * x * x).exp();
            let psi = hermite_fns(2, x);
            assert!((psi[0] - g).abs() < 1e-15);
            assert!((psi[1] - std::f64::consts::SQRT_2 * x * g).abs() < 1e-15);
            assert!((psi[2] - (2.0 * x * x - 1.0) / std::f64::consts::SQRT_2 * g).abs() < 1e-14);
        }
        assert!((hermite_fn(1, 0.0).unwrap() - PI_M14).abs() < 1e-16);
    }

    #[test]
    fn even_index_rejected() {
        assert!(hermite_fn(4, 0.0).is_err());
    }

    #[test]
    fn eigen_relation_small() {
        for i in [1u32, 3, 9, 21] {
            for &x in &[-1.5, 0.2, 2.5] {
                let r = -hermite_deriv2_by_recurrence(i, x).unwrap() + x * x * hermite_fn(i, x).unwrap()
                    - i as f64 * hermite_fn(i, x).unwrap();
                assert!(r.abs() < 1e-12, "i={i} x={x} r={r}");
            }
        }
    }
}
