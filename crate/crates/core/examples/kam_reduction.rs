//! KAM reduction of `cos θ · e^{−x²}` at a golden-type frequency: prints
//! the step trace and the conjugacy defect of the limit.

use std::sync::Arc;

use hermite_kam::basis::{assemble_potential_matrix, enumerate_basis, PotentialSpec, QuadOptions};
use hermite_kam::kam::{run_reduction, KamConfig};

fn main() {
    let spec = PotentialSpec::from_json(include_str!("data/cos_gaussian.json")).expect("bundled potential");
    let basis = Arc::new(enumerate_basis(1, 21).expect("basis"));
    let (p, _) = assemble_potential_matrix(&spec, &basis, None, QuadOptions::default()).expect("assembly");
    let omega = 2.0 * (5f64.sqrt() - 1.0);
    let cfg = KamConfig { beta: 12.0, kappa_scale: 1e-3, nu_max: 6, ..KamConfig::default() };
    let r = run_reduction(&p, &[omega], 1e-3, &cfg).expect("reduction");
    print!("{}", r.trace_csv());
    println!("status: {:?}", r.status);
    println!("conjugacy defect: {:?}", r.defect);
    println!("M modes: {}", r.m_omega.num_modes());
    for w in &r.schedule.warnings {
        println!("schedule: {w}");
    }
}
