//! Second Melnikov conditions at two frequencies, then the excluded
//! fraction of a frequency grid as κ shrinks.

use std::sync::Arc;

use hermite_kam::basis::enumerate_basis;
use hermite_kam::blockmat::BlockMatrix;
use hermite_kam::homology::{check_melnikov, measure_sweep, omega_grid, MelnikovParams};

fn main() {
    let basis = Arc::new(enumerate_basis(1, 21).expect("basis"));
    let n0 = BlockMatrix::unperturbed(&basis);
    let params = MelnikovParams::oscillator(1, 1e-3, 10);
    for w in [2.0 * (5f64.sqrt() - 1.0), 4.0] {
        let r = check_melnikov(&[w], &n0, &params);
        println!("omega {w:.6}: admissible {} violations {} critical kappa {:.3e}", r.admissible, r.violations.len(), r.critical_kappa);
    }

    let sample = omega_grid(1, 10_000, 0.0, 2.0 * std::f64::consts::PI);
    let kappas: Vec<f64> = (0..=8).map(|j| 10f64.powf(-4.0 + 0.25 * j as f64)).collect();
    let sweep = measure_sweep(&sample, &n0, &kappas, 10, 1.0 / 24.0).expect("sweep");
    print!("{}", sweep.to_csv());
    println!("slope {:?}, predicted {}", sweep.slope, sweep.predicted_alpha2);
}
