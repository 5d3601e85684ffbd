mod common;

use common::condensation_gap;
use mhd_hdg::basis::build_reference_element;
use mhd_hdg::global_system::{diagnostics, solve_system, SolveOptions};
use mhd_hdg::local_solver::Discretization;
use mhd_hdg::picard::{solve_nonlinear_with_history, PicardConfig};
use mhd_hdg::spaces::{boundary_dof_values, build_dof_layout, LocalField};
use mhd_hdg::verify::{case_smooth2d, error_norms, solve_level, CaseDomain, ExactPoint, ManufacturedCase, RunOptions};
use mhd_hdg::{FieldState, Mesh, PhysParams, RhatBc, Variant};

#[test]
fn condensed_solution_matches_monolithic_oracle() {
    for level in 0..=2 {
        for k in 1..=2 {
            for variant in [Variant::Hdg, Variant::Ehdg] {
                let gap = condensation_gap(level, k, variant, RhatBc::StrongZero);
                assert!(gap < 1e-9, "level {level} k {k} {variant:?}: {gap:e}");
            }
        }
    }
}

#[test]
fn normal_constraint_mode_matches_monolithic_oracle() {
    for variant in [Variant::Hdg, Variant::Ehdg] {
        let gap = condensation_gap(1, 2, variant, RhatBc::NormalConstraint);
        assert!(gap < 1e-9, "{variant:?}: {gap:e}");
    }
}

/// `u = (y², x²)`, `p = x − ½`, `b = (x, −y)` with constant `w`, `d` lies in
/// the discrete spaces for `k ≥ 2`.
fn polynomial_case() -> ManufacturedCase {
    let params = PhysParams { re: 2.0, rm: 3.0, kappa: 0.5, ..Default::default() };
    ManufacturedCase::new("polynomial", CaseDomain::UnitSquare, params, |x| {
        Ok(ExactPoint {
            u: [x[1] * x[1], x[0] * x[0]],
            grad_u: [[0.0, 2.0 * x[1]], [2.0 * x[0], 0.0]],
            hess_u: [[[0.0, 0.0], [0.0, 2.0]], [[2.0, 0.0], [0.0, 0.0]]],
            b: [x[0], -x[1]],
            grad_b: [[1.0, 0.0], [0.0, -1.0]],
            p: x[0] - 0.5,
            grad_p: [1.0, 0.0],
            w: [1.0, 0.5],
            d: [0.3, -0.2],
            ..Default::default()
        })
    })
}

#[test]
fn polynomial_solutions_are_reproduced() {
    let case = polynomial_case();
    for variant in [Variant::Hdg, Variant::Ehdg] {
        for k in 2..=3 {
            let opts = RunOptions { variant, k, ..Default::default() };
            let (res, _) = solve_level::<f64>(&case, 1, &opts).unwrap();
            for (name, e) in mhd_hdg::verify::FIELD_NAMES.iter().zip(res.report.fields()) {
                assert!(e < 1e-10, "{variant:?} k={k} {name}: {e:e}");
            }
        }
    }
}

#[test]
fn error_norm_is_a_norm() {
    let case = polynomial_case();
    let opts = RunOptions { k: 2, ..Default::default() };
    let mesh: Mesh = case.mesh(1).unwrap();
    let layout = build_dof_layout(&mesh, 2, Variant::Ehdg).unwrap();
    let refel = build_reference_element(2).unwrap();
    let disc = Discretization { mesh: &mesh, layout: &layout, refel: &refel };
    let (_, exact) = solve_level::<f64>(&case, 1, &opts).unwrap();
    // a perturbation of u by a constant c has error exactly |c|
    let mut shifted = exact.clone();
    let (o, s) = (layout.local.offset(LocalField::U), layout.local.size(LocalField::U) / 2);
    for c in 0..mesh.n_cells() {
        for v in &mut shifted.local[c * shifted.n_local + o..c * shifted.n_local + o + s] {
            *v += 0.125;
        }
    }
    let e = error_norms(&shifted, &case, &disc).unwrap();
    assert!((e.err_u - 0.125).abs() < 1e-10, "{}", e.err_u);
    let zero = FieldState::zeros(&layout, mesh.n_cells());
    let ez = error_norms(&zero, &case, &disc).unwrap();
    // ‖u‖ over the unit square: ∫ y⁴ + x⁴ = 2/5
    assert!((ez.err_u - 0.4_f64.sqrt()).abs() < 1e-12);
}

#[test]
fn both_variants_are_divergence_free_but_differ() {
    let case = case_smooth2d(PhysParams::default(), 1.0);
    let mut errs = Vec::new();
    for variant in [Variant::Hdg, Variant::Ehdg] {
        let opts = RunOptions { variant, k: 1, ..Default::default() };
        let (res, _) = solve_level::<f64>(&case, 2, &opts).unwrap();
        assert!(res.report.div_u <= 1e-10 * res.report.max_u);
        assert!(res.report.div_b <= 1e-10 * res.report.max_b);
        errs.push(res.report.err_u);
    }
    assert!((errs[0] - errs[1]).abs() > 1e-8 * errs[0]);
}

#[test]
fn every_picard_iterate_is_divergence_free() {
    let case = case_smooth2d(PhysParams::default(), 1.0).into_nonlinear();
    let mesh: Mesh = case.mesh(2).unwrap();
    let layout = build_dof_layout(&mesh, 2, Variant::Ehdg).unwrap();
    let refel = build_reference_element(2).unwrap();
    let disc = Discretization { mesh: &mesh, layout: &layout, refel: &refel };
    let ex = |x| case.exact(x).unwrap();
    let bc = boundary_dof_values(&layout, &mesh, &refel, &|x| ex(x).u, &|x| ex(x).b).unwrap();
    for iters in 1..=4 {
        let cfg = PicardConfig { max_iter: iters, ..Default::default() };
        let (s, h) = solve_nonlinear_with_history(&disc, &case.params, &case, &bc, &cfg).unwrap();
        assert_eq!(h.iterations, iters);
        let d = diagnostics(&s, &disc).unwrap();
        assert!(d.div_u <= 1e-10 * d.max_u && d.div_b <= 1e-10 * d.max_b, "{iters}: {d:?}");
        assert!(d.jump_u <= 1e-10 * d.max_u && d.jump_b <= 1e-10 * d.max_b, "{iters}: {d:?}");
        assert!(d.bnd_u <= 1e-10 * d.max_u, "{iters}: {d:?}");
    }
}

#[test]
fn normal_constraint_mode_matches_boundary_normal_trace() {
    let case = case_smooth2d(PhysParams::default(), 1.0);
    let mesh: Mesh = case.mesh(2).unwrap();
    let layout = build_dof_layout(&mesh, 2, Variant::Ehdg).unwrap();
    let refel = build_reference_element(2).unwrap();
    let disc = Discretization { mesh: &mesh, layout: &layout, refel: &refel };
    let ex = |x| case.exact(x).unwrap();
    let bc = boundary_dof_values(&layout, &mesh, &refel, &|x| ex(x).u, &|x| ex(x).b).unwrap();
    let opts = SolveOptions { rhat_bc: RhatBc::NormalConstraint, ..Default::default() };
    let (s, _) = solve_system(&disc, &case.params, &case, &case, &bc, &opts).unwrap();
    let d = diagnostics(&s, &disc).unwrap();
    assert!(d.bnd_b <= 1e-10 * d.max_b, "{d:?}");
}

#[test]
fn single_precision_solve_converges() {
    let case = case_smooth2d(PhysParams::default(), 1.0);
    let opts = RunOptions { k: 1, ..Default::default() };
    let (r64, _) = solve_level::<f64>(&case, 2, &opts).unwrap();
    let (r32, _) = solve_level::<f32>(&case, 2, &opts).unwrap();
    let rel = (r32.report.err_u - r64.report.err_u).abs() / r64.report.err_u;
    assert!(rel < 1e-2, "{} vs {}", r32.report.err_u, r64.report.err_u);
}

#[test]
fn smooth_case_error_on_32_cells() {
    let case = case_smooth2d(PhysParams::default(), 1.0);
    let (res, _) = solve_level::<f64>(&case, 2, &RunOptions::default()).unwrap();
    assert_eq!(res.cells, 32);
    assert!((res.report.err_u - 1.27e-3).abs() < 0.01e-3, "{}", res.report.err_u);
    assert!(res.report.div_u < 1e-13 && res.report.div_b < 1e-13);
}
