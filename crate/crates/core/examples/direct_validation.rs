//! Reduced flow against direct integration over 100 forcing periods, with
//! the measured Sobolev window constants.

use std::sync::Arc;

use hermite_kam::basis::{assemble_potential_matrix, enumerate_basis, PotentialSpec, QuadOptions};
use hermite_kam::blockmat::WeightedSeq;
use hermite_kam::kam::{run_reduction, KamConfig};
use hermite_kam::linalg::C64;
use hermite_kam::validate::{
    attach_conjugacy, integrate_direct, secular_ratio, sobolev_window, DirectOptions, Integrator, ReducedFlow,
};

fn main() {
    let spec = PotentialSpec::from_json(include_str!("data/cos_gaussian.json")).expect("bundled potential");
    let basis = Arc::new(enumerate_basis(1, 21).expect("basis"));
    let (p, _) = assemble_potential_matrix(&spec, &basis, None, QuadOptions::default()).expect("assembly");
    let (omega, eps) = (2.0 * (5f64.sqrt() - 1.0), 1e-3);
    let cfg = KamConfig { beta: 12.0, kappa_scale: 1e-3, nu_max: 6, ..KamConfig::default() };
    let r = run_reduction(&p, &[omega], eps, &cfg).expect("reduction");

    let w = basis.weights();
    let raw = WeightedSeq::from_fn(w.len(), |a, _| C64::new(w[a].powi(-2), 0.0));
    let xi0 = &raw / C64::new(raw.norm(), 0.0);
    let t_end = 100.0 * 2.0 * std::f64::consts::PI / omega;
    let opts = DirectOptions { method: Integrator::Magnus4, sample_dt: 0.25, ..DirectOptions::default() };
    let mut rec = integrate_direct(&xi0, &p, &[omega], eps, t_end, 0.02, &opts).expect("integration");
    attach_conjugacy(&mut rec, &ReducedFlow::new(&r).expect("flow")).expect("conjugacy");

    let err = rec.conjugacy.clone().unwrap_or_default();
    println!("final eps {:.3e}, integrator error {:.3e}", r.final_eps(), rec.error_estimate);
    println!("sup conjugacy error {:.3e}", err.iter().copied().fold(0.0, f64::max));
    println!("second/first half ratio {:.4}", secular_ratio(&rec.times, &err));
    for s in [0.0, 1.0] {
        println!("s' = {s}: c_meas {:.4e}", sobolev_window(&rec, s, eps).expect("window"));
    }
}
