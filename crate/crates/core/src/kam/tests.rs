use std::sync::Arc;

use super::*;
use crate::basis::{assemble_potential_matrix, enumerate_basis, PotentialSpec, QuadOptions};

fn potential(json: &str, w_max: u32) -> FourierBlockMatrix {
    let spec = PotentialSpec::from_json(json).unwrap();
    let basis = Arc::new(enumerate_basis(spec.d, w_max).unwrap());
    assemble_potential_matrix(&spec, &basis, None, QuadOptions::default()).unwrap().0
}

const COS_GAUSS: &str = r#"{"d":1,"n":1,"terms":[{"theta_modes":[[1,0.5,0],[-1,0.5,0]],
    "x_profile":{"kind":"closed_form_id","id":"gaussian"}}]}"#;
const COS_ONE: &str = r#"{"d":1,"n":1,"terms":[{"theta_modes":[[1,0.5,0],[-1,0.5,0]],
    "x_profile":{"kind":"closed_form_id","id":"one"}}]}"#;

fn desk_config() -> KamConfig {
    KamConfig { beta: 12.0, kappa_scale: 1e-3, k_max: Some(16), nu_max: 5, ..KamConfig::default() }
}

#[test]
fn zero_potential_is_trivial() {
    let p = potential(COS_GAUSS, 9).scale(C64::new(0.0, 0.0));
    let mut p = p;
    p.prune(0.0);
    let r = run_reduction(&p, &[2.4], 0.01, &desk_config()).unwrap();
    assert_eq!(r.status, Status::Converged);
    assert_eq!(r.n_inf, r.n0);
    assert_eq!(r.m_omega.num_modes(), 1);
    assert_eq!(distance_from_identity(&r.m_omega, 9), 0.0);
    assert_eq!(r.defect.max_abs, 0.0);
}

#[test]
fn eps_zero_is_trivial() {
    let p = potential(COS_GAUSS, 9);
    let r = run_reduction(&p, &[2.4], 0.0, &desk_config()).unwrap();
    assert_eq!(r.status, Status::Converged);
    assert_eq!(r.n_inf, r.n0);
    assert_eq!(r.defect.max_abs, 0.0);
}

#[test]
fn fixed_point_step() {
    let p = potential(COS_GAUSS, 7);
    let basis = p.basis().clone();
    let cfg = desk_config();
    let sched = make_schedule(2e-3, 12.0, 1, 1, 1.0 / 24.0, None, 3).unwrap();
    let ctx = StepContext {
        omega: vec![2.4],
        norm: cfg.norm_params(1),
        grid: cfg.grid_for(1),
        k_max: 16,
        kappa_scale: 1e-3,
        noise_rel: 1e-14,
        strip: StripGrid::default(),
    };
    let zero = FourierBlockMatrix::zero(&basis, 1);
    let st = KamState::initial(BlockMatrix::unperturbed(&basis), zero.clone(), ctx.grid);
    let out = kam_step(&st, &zero, &sched, &ctx).unwrap();
    assert!(out.f.is_empty());
    assert_eq!(out.state.n_mat, st.n_mat);
    assert!(out.state.p.is_empty());
    assert!(!out.state.b_moved);
}

#[test]
fn scalar_potential_generator_matches_closed_form() {
    // ω F' = −ε cos θ gives F = −ε sin θ / ω, so F^{1} = iε/(2ω)
    let p = potential(COS_ONE, 7);
    let basis = p.basis().clone();
    let (eps, w) = (1e-2, 2.4);
    let sched = make_schedule(2.0 * eps, 12.0, 1, 1, 1.0 / 24.0, None, 3).unwrap();
    let ctx = StepContext {
        omega: vec![w],
        norm: NormParams::for_dimension(1, 1.0),
        grid: 65,
        k_max: 8,
        kappa_scale: 1e-3,
        noise_rel: 1e-14,
        strip: StripGrid::default(),
    };
    let st = KamState::initial(BlockMatrix::unperturbed(&basis), FourierBlockMatrix::zero(&basis, 1), ctx.grid);
    let inc = p.scale(C64::new(eps, 0.0));
    let out = kam_step(&st, &inc, &sched, &ctx).unwrap();
    let f1 = out.f.mode(&[1]).unwrap();
    let want = BlockMatrix::identity(&basis).scale(I * (eps / (2.0 * w)));
    assert!((f1 - &want).max_abs() < 1e-16);
    assert_eq!(out.state.n_mat, st.n_mat);
    // the scalar phase is removed exactly
    assert!(out.state.p.is_empty() || out.state.p.modes().all(|(_, m)| m.max_abs() < 1e-17));
}

#[test]
fn scalar_potential_full_run() {
    let p = potential(COS_ONE, 9);
    let r = run_reduction(&p, &[2.4], 1e-3, &desk_config()).unwrap();
    assert!(r.admissible());
    assert!((&r.n_inf - &r.n0).max_abs() < 1e-15);
    assert!(r.defect.max_abs <= 10.0 * r.final_eps() + 1e-13, "{:?}", r.defect);
}

#[test]
fn exact_conjugation_agrees_with_integral_formula() {
    // two clusters, sizeable ε so the second-order part is visible
    let p = potential(COS_GAUSS, 3);
    let basis = p.basis().clone();
    assert_eq!(basis.num_clusters(), 2);
    let sched = make_schedule(0.1, 12.0, 1, 1, 1.0 / 24.0, None, 3).unwrap();
    let ctx = StepContext {
        omega: vec![2.4],
        norm: NormParams::for_dimension(1, 1.0),
        grid: 65,
        k_max: 8,
        kappa_scale: 1e-3,
        noise_rel: 1e-14,
        strip: StripGrid::default(),
    };
    let st = KamState::initial(BlockMatrix::unperturbed(&basis), FourierBlockMatrix::zero(&basis, 1), ctx.grid);
    let mut x2 = p.scale(C64::new(0.05, 0.0));
    // add a constant off-diagonal piece so Ñ and the k = 0 solve both enter
    let mut c = BlockMatrix::zeros(&basis);
    let mut d = c.dense().clone();
    d[(0, 1)] = C64::new(0.02, 0.0);
    d[(1, 0)] = C64::new(0.02, 0.0);
    d[(0, 0)] = C64::new(0.03, 0.0);
    c = BlockMatrix::from_dense(&basis, d).unwrap();
    x2.add_mode(vec![0], c).unwrap();
    let out = kam_step(&st, &x2, &sched, &ctx).unwrap();
    assert!(out.n_tilde.max_abs() > 0.0);
    let gap = integral_cross_check(&st.n_mat, &out, &ctx, ctx.k_eff(&sched, 0), 16, 16);
    assert!(gap < 1e-8, "gap {gap}");
    // and the new perturbation really is second order
    let size = out.state.p.modes().map(|(_, m)| m.max_abs()).fold(0.0, f64::max);
    assert!(size < 0.05 * 0.05 * 10.0 && size > 0.0);
}

#[test]
fn contraction_on_small_instance() {
    let p = potential(COS_GAUSS, 9);
    let omega = 2.0 * (5f64.sqrt() - 1.0);
    let r = run_reduction(&p, &[omega], 1e-3, &desk_config()).unwrap();
    assert!(r.admissible(), "{:?}", r.status);
    for rec in r.trace.iter().skip(1) {
        assert!(rec.p_norm <= 0.5 * rec.eps, "{rec:?}");
    }
    assert!(r.defect.unitarity < 1e-12);
    assert!(r.n_inf.off_block_diagonal_max() == 0.0);
    assert!(r.n_inf.is_hermitian());
}

#[test]
fn resonant_frequency_is_reported() {
    let p = potential(COS_GAUSS, 9);
    let r = run_reduction(&p, &[4.0], 1e-3, &desk_config()).unwrap();
    assert!(matches!(r.status, Status::Inadmissible { .. }));
    assert!(!r.trace.is_empty());
}
