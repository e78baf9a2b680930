//! Hölder rate of the analytic smoothing on Weierstrass-type potentials:
//! the sup error `|Q − S_σ Q|` should decay like `σ^β`.

use std::sync::Arc;

use hermite_kam::basis::{assemble_potential_matrix, enumerate_basis, PotentialSpec, QuadOptions};
use hermite_kam::blockmat::NormParams;
use hermite_kam::smoothing::holder_rate_fit;

fn main() {
    let basis = Arc::new(enumerate_basis(1, 9).expect("basis"));
    let sigmas: Vec<f64> = (2..=9).map(|j| 2f64.powi(-j)).collect();
    let norm = NormParams::for_dimension(1, 1.0);
    for beta in [1.5, 2.5, 3.5] {
        let json = format!(
            r#"{{"d":1,"n":1,"beta_v":{beta},"terms":[{{"weierstrass":{{"beta":{beta},"lambda":2,"depth":16}},
                "x_profile":{{"kind":"closed_form_id","id":"sech"}}}}]}}"#
        );
        let spec = PotentialSpec::from_json(&json).expect("spec");
        let (q, _) = assemble_potential_matrix(&spec, &basis, None, QuadOptions::default()).expect("assembly");
        let fit = holder_rate_fit(&q, &sigmas, &norm, 64).expect("fit");
        println!("beta_V = {beta}: fitted slope {:?}", fit.slope);
        print!("{}", fit.to_csv());
    }
}
