//! Hermite basis and potential assembly: cluster sizes for d = 2 and the
//! matrix of `cos θ · sech |x|` with its quadrature diagnostics.

use std::sync::Arc;

use hermite_kam::basis::{assemble_potential_matrix, enumerate_basis, PotentialSpec, QuadOptions};
use hermite_kam::blockmat::{NormParams, StripGrid};

fn main() {
    let b2 = enumerate_basis(2, 13).expect("basis");
    for c in b2.clusters() {
        println!("d=2 w={:>2} size {}", b2.weight(c.range().start), c.range().len());
    }

    let spec = PotentialSpec::from_json(
        r#"{"d":2,"n":1,"terms":[{"theta_modes":[[1,0.5,0],[-1,0.5,0]],
            "x_profile":{"kind":"closed_form_id","id":"sech"}}]}"#,
    )
    .expect("spec");
    let basis = Arc::new(b2);
    let (p, rep) = assemble_potential_matrix(&spec, &basis, None, QuadOptions::default()).expect("assembly");
    println!("quadrature order {}", rep.quad_order);
    println!("orthonormality defect {:.3e}", rep.orthonormality_defect);
    println!("quadrature error estimate {:.3e}", rep.quad_error_estimate);
    println!("Fourier modes {}", p.num_modes());
    println!("[P] on the strip 0.5 = {:.6}", p.strip_norm(0.5, &NormParams::for_dimension(2, 1.0), false, StripGrid::default()));
}
