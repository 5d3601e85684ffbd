//! Checks shared by the property suites and the acceptance report. Each
//! returns `Err` with a description of the first violation.
#![allow(dead_code)]

use mhd_hdg::basis::{build_reference_element, LagrangeTriangle};
use mhd_hdg::global_system::{solve_monolithic, solve_system, SolveOptions};
use mhd_hdg::local_solver::{eval_numerical_flux, Discretization, FacetTraces, LocalTraces};
use mhd_hdg::mesh::{gen_lshape, gen_unit_square};
use mhd_hdg::quadrature::{quadrature_rule, Domain};
use mhd_hdg::scalar::Vec2;
use mhd_hdg::spaces::{boundary_dof_values, build_dof_layout, eval_facet_vector, FacetField, LocalField};
use mhd_hdg::verify::{case_hartmann, case_singular2d, case_smooth2d, ManufacturedCase};
use mhd_hdg::{FieldState, Mesh, PhysParams, RhatBc, Variant};

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Linear congruential generator in `[0, 1)`.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next()
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Triangle rules of order `2k+3`, `k ≤ 6`, on all monomials up to that degree.
pub fn triangle_quadrature_exactness() -> Check {
    for k in 1..=6 {
        let order = 2 * k + 3;
        let rule = quadrature_rule::<f64>(Domain::Triangle, order).map_err(|e| e.to_string())?;
        for a in 0..=order as u32 {
            for b in 0..=(order as u32 - a) {
                let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                let got = rule.integrate(|p| p[0].powi(a as i32) * p[1].powi(b as i32));
                ensure!(((got - exact) / exact).abs() < 1e-13, "order {order}, x^{a} y^{b}: {got} vs {exact}");
            }
        }
    }
    Ok(())
}

pub fn interval_quadrature_exactness() -> Check {
    for order in 1..=15 {
        let rule = quadrature_rule::<f64>(Domain::Interval, order).map_err(|e| e.to_string())?;
        for a in 0..=order as i32 {
            let got = rule.integrate(|p| p[0].powi(a));
            ensure!((got - 1.0 / f64::from(a + 1)).abs() < 1e-14, "order {order}, t^{a}: {got}");
        }
    }
    Ok(())
}

/// Cell basis along each edge read in both orientations at mirrored points.
pub fn trace_orientation() -> Check {
    for k in 1..=4 {
        let r = build_reference_element::<f64>(k).map_err(|e| e.to_string())?;
        let nq = r.facet_rule.len();
        for e in 0..3 {
            for q in 0..nq {
                let (fwd, bwd) = (r.trace[e][0].row(q), r.trace[e][1].row(nq - 1 - q));
                for (a, b) in fwd.iter().zip(bwd) {
                    ensure!((a - b).abs() < 1e-13, "k={k} edge {e} point {q}: {a} vs {b}");
                }
            }
        }
    }
    Ok(())
}

pub fn partition_of_unity(k: usize, x: Vec2<f64>) -> Check {
    let b = LagrangeTriangle::<f64>::new(k).map_err(|e| e.to_string())?;
    let s: f64 = b.eval(x).iter().sum();
    ensure!((s - 1.0).abs() < 1e-12, "k={k} at {x:?}: sum {s}");
    let g = b.grad(x).iter().fold([0.0, 0.0], |acc, d| [acc[0] + d[0], acc[1] + d[1]]);
    ensure!(g[0].abs() < 1e-10 && g[1].abs() < 1e-10, "k={k} at {x:?}: gradient sum {g:?}");
    Ok(())
}

/// Basis gradients against central differences with step `1e-6`.
pub fn gradient_differences(k: usize, x: Vec2<f64>) -> Check {
    let b = LagrangeTriangle::<f64>::new(k).map_err(|e| e.to_string())?;
    let h = 1e-6;
    let g = b.grad(x);
    for j in 0..2 {
        let (mut xp, mut xm) = (x, x);
        xp[j] += h;
        xm[j] -= h;
        let (fp, fm) = (b.eval(xp), b.eval(xm));
        for i in 0..b.dim() {
            let fd = (fp[i] - fm[i]) / (2.0 * h);
            ensure!((fd - g[i][j]).abs() < 1e-6, "k={k} i={i} j={j}: {fd} vs {}", g[i][j]);
        }
    }
    Ok(())
}

/// Inputs of a flux evaluation with continuous traces.
#[derive(Clone, Copy, Debug)]
pub struct FluxSample {
    pub n: Vec2<f64>,
    pub u: Vec2<f64>,
    pub b: Vec2<f64>,
    pub d: Vec2<f64>,
    pub l: [Vec2<f64>; 2],
    pub p: f64,
    pub r: f64,
    pub j: f64,
    pub m: f64,
    pub alpha1: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl FluxSample {
    pub fn random(g: &mut Lcg) -> Self {
        let a = g.range(0.0, std::f64::consts::TAU);
        let mut v = || [g.range(-3.0, 3.0), g.range(-3.0, 3.0)];
        let (u, b, d, l0, l1) = (v(), v(), v(), v(), v());
        Self {
            n: [a.cos(), a.sin()],
            u,
            b,
            d,
            l: [l0, l1],
            p: g.range(-2.0, 2.0),
            r: g.range(-2.0, 2.0),
            j: g.range(-2.0, 2.0),
            m: g.range(-2.0, 2.0),
            alpha1: g.range(1.0, 1000.0),
            beta1: g.range(0.1, 100.0),
            beta2: g.range(0.1, 100.0),
        }
    }
}

/// With `u = û`, `b = b̂`, the stabilization parameters drop out of the flux.
pub fn flux_consistency(s: &FluxSample) -> Check {
    let params = PhysParams { alpha1: s.alpha1, beta1: s.beta1, beta2: s.beta2, kappa: 3.0, ..Default::default() };
    let bare = PhysParams { alpha1: 0.0, beta1: 0.0, beta2: 0.0, ..params };
    let loc = LocalTraces { l: s.l, u: s.u, b: s.b, p: s.p, j: s.j, r: s.r };
    let fac = FacetTraces { u_hat: s.u, p_hat: s.p, b_hat: s.b, r_hat: s.r };
    let with = eval_numerical_flux(&loc, &fac, s.n, s.m, s.d, &params);
    let without = eval_numerical_flux(&loc, &fac, s.n, s.m, s.d, &bare);
    ensure!(with == without, "{s:?}: {with:?} vs {without:?}");
    Ok(())
}

fn d1(f: &dyn Fn(Vec2<f64>) -> f64, x: Vec2<f64>, j: usize, h: f64) -> f64 {
    let at = |s: f64| {
        let mut y = x;
        y[j] += s * h;
        f(y)
    };
    (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h)
}

/// Residual of the strong equations with every derivative taken by
/// fourth-order differences, compared against the analytic forcing.
pub fn forcing_residual(case: &ManufacturedCase, x: Vec2<f64>) -> Check {
    let h = 1e-3;
    let prm = case.params;
    let ex = |y: Vec2<f64>| case.exact(y).expect("interior point");
    let e = ex(x);
    let (g, f) = case.forcing_at(x).map_err(|e| e.to_string())?;
    let du = |i: usize, j: usize, y: Vec2<f64>| d1(&|z| ex(z).u[i], y, j, h);
    let curl_b = |y: Vec2<f64>| d1(&|z| ex(z).b[1], y, 0, h) - d1(&|z| ex(z).b[0], y, 1, h);
    let cb = curl_b(x);
    for i in 0..2 {
        let lap = d1(&|y| du(i, 0, y), x, 0, h) + d1(&|y| du(i, 1, y), x, 1, h);
        let adv = e.w[0] * du(i, 0, x) + e.w[1] * du(i, 1, x);
        let lorentz = if i == 0 { e.d[1] * cb } else { -e.d[0] * cb };
        let gi = -lap / prm.re + d1(&|y| ex(y).p, x, i, h) + adv + prm.kappa * lorentz;
        ensure!((gi - g[i]).abs() < 1e-6 * (1.0 + g[i].abs()), "{} at {x:?}: g[{i}] {gi} vs {}", case.name, g[i]);
    }
    let s = |y: Vec2<f64>| {
        let p = ex(y);
        p.u[0] * p.d[1] - p.u[1] * p.d[0]
    };
    let fd = [
        prm.kappa / prm.rm * d1(&curl_b, x, 1, h) + d1(&|y| ex(y).r, x, 0, h) - prm.kappa * d1(&s, x, 1, h),
        -prm.kappa / prm.rm * d1(&curl_b, x, 0, h) + d1(&|y| ex(y).r, x, 1, h) + prm.kappa * d1(&s, x, 0, h),
    ];
    for i in 0..2 {
        ensure!(
            (fd[i] - f[i]).abs() < 1e-6 * (1.0 + f[i].abs()),
            "{} at {x:?}: f[{i}] {} vs {}",
            case.name,
            fd[i],
            f[i]
        );
    }
    Ok(())
}

fn forcing_params() -> PhysParams {
    PhysParams { re: 2.0, rm: 3.0, kappa: 1.5, ..Default::default() }
}

/// The three cases with a box of interior sample points each.
pub fn forcing_cases() -> Vec<(ManufacturedCase, Vec2<f64>, Vec2<f64>)> {
    let prm = forcing_params();
    vec![
        (case_smooth2d(prm, 10.0), [0.05, 0.05], [0.95, 0.95]),
        (case_singular2d(prm), [-0.9, 0.05], [0.9, 0.9]),
        (case_hartmann(prm).expect("valid parameters"), [0.001, -0.95], [0.024, 0.95]),
    ]
}

fn continuity_meshes() -> Vec<Mesh> {
    vec![gen_unit_square(4).unwrap(), gen_lshape(2).unwrap()]
}

/// Random E-HDG facet coefficients evaluated at each vertex from every
/// incident facet.
pub fn vertex_continuity(k: usize, seed: u64) -> Check {
    let refel = build_reference_element::<f64>(k).map_err(|e| e.to_string())?;
    let mut g = Lcg(seed);
    for mesh in continuity_meshes() {
        let layout = build_dof_layout(&mesh, k, Variant::Ehdg).map_err(|e| e.to_string())?;
        let coeffs: Vec<f64> = (0..layout.n_dofs()).map(|_| g.next() - 0.5).collect();
        for field in [FacetField::U, FacetField::B] {
            let mut at_vertex: Vec<Option<Vec2<f64>>> = vec![None; mesh.n_vertices()];
            for f in 0..mesh.n_facets() {
                for (t, v) in [(0.0, mesh.facets[f][0]), (1.0, mesh.facets[f][1])] {
                    let val = eval_facet_vector(&layout, &refel, &coeffs, field, f, t);
                    match at_vertex[v] {
                        None => at_vertex[v] = Some(val),
                        Some(prev) => ensure!(
                            (prev[0] - val[0]).abs() < 1e-13 && (prev[1] - val[1]).abs() < 1e-13,
                            "k={k} vertex {v}: {prev:?} vs {val:?}"
                        ),
                    }
                }
            }
        }
    }
    Ok(())
}

fn facet_parameter(mesh: &Mesh, f: usize, x: Vec2<f64>) -> f64 {
    let [a, b] = mesh.facets[f];
    let (p, q) = (mesh.vertices[a], mesh.vertices[b]);
    let d = [q[0] - p[0], q[1] - p[1]];
    ((x[0] - p[0]) * d[0] + (x[1] - p[1]) * d[1]) / (d[0] * d[0] + d[1] * d[1])
}

fn locate_boundary_facet(mesh: &Mesh, boundary: &[usize], x: Vec2<f64>) -> usize {
    *boundary
        .iter()
        .find(|&&f| {
            let t = facet_parameter(mesh, f, x);
            let y = mesh.facet_point(f, t);
            (-1e-12..=1.0 + 1e-12).contains(&t) && (y[0] - x[0]).abs() < 1e-12 && (y[1] - x[1]).abs() < 1e-12
        })
        .expect("point on the boundary")
}

/// Projecting the projected boundary trace again changes no DOF.
pub fn projection_idempotence(k: usize, variant: Variant, a: f64, b: f64) -> Check {
    let mesh = gen_lshape::<f64>(2).unwrap();
    let refel = build_reference_element::<f64>(k).map_err(|e| e.to_string())?;
    let layout = build_dof_layout(&mesh, k, variant).map_err(|e| e.to_string())?;
    let u_d = move |x: Vec2<f64>| [(a * x[0]).sin() + x[1], (b * x[1]).exp() - x[0] * x[1]];
    let b_d = move |x: Vec2<f64>| [x[0] * x[0] - a, (x[0] + b * x[1]).cos()];
    let first = boundary_dof_values(&layout, &mesh, &refel, &u_d, &b_d).map_err(|e| e.to_string())?;
    let mut coeffs = vec![0.0; layout.n_dofs()];
    for &(d, v) in &first.entries {
        coeffs[d] = v;
    }
    let trace = |field: FacetField| {
        let (mesh, layout, refel, coeffs) = (&mesh, &layout, &refel, &coeffs);
        move |x: Vec2<f64>| {
            let f = locate_boundary_facet(mesh, &layout.boundary_facets, x);
            eval_facet_vector(layout, refel, coeffs, field, f, facet_parameter(mesh, f, x))
        }
    };
    let (tu, tb) = (trace(FacetField::U), trace(FacetField::B));
    let second = boundary_dof_values(&layout, &mesh, &refel, &tu, &tb).map_err(|e| e.to_string())?;
    ensure!(first.entries.len() == second.entries.len(), "entry counts differ");
    for (x, y) in first.entries.iter().zip(&second.entries) {
        ensure!(x.0 == y.0 && (x.1 - y.1).abs() < 1e-13, "dof {}: {} vs {}", x.0, x.1, y.1);
    }
    Ok(())
}

/// Degree-`k` boundary data is reproduced at the facet quadrature points.
pub fn projection_reproduces_polynomials(k: usize, variant: Variant, c: f64) -> Check {
    let mesh = gen_unit_square::<f64>(2).unwrap();
    let refel = build_reference_element::<f64>(k).map_err(|e| e.to_string())?;
    let layout = build_dof_layout(&mesh, k, variant).map_err(|e| e.to_string())?;
    let kk = k as i32;
    let u_d = move |x: Vec2<f64>| [c * x[0].powi(kk) + x[1], x[0] * x[1].powi(kk - 1)];
    let bv = boundary_dof_values(&layout, &mesh, &refel, &u_d, &u_d).map_err(|e| e.to_string())?;
    let mut coeffs = vec![0.0; layout.n_dofs()];
    for &(d, v) in &bv.entries {
        coeffs[d] = v;
    }
    for &f in &layout.boundary_facets {
        for t in refel.facet_rule.abscissae() {
            let want = u_d(mesh.facet_point(f, t));
            for field in [FacetField::U, FacetField::B] {
                let got = eval_facet_vector(&layout, &refel, &coeffs, field, f, t);
                ensure!(
                    (got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12,
                    "k={k} facet {f} t={t}: {got:?} vs {want:?}"
                );
            }
        }
    }
    Ok(())
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn local_field(s: &FieldState, layout: &mhd_hdg::DofLayout, f: LocalField) -> Vec<f64> {
    let n = s.local.len() / s.n_local;
    (0..n).flat_map(|c| s.block(layout, c, f).to_vec()).collect()
}

fn facet_field(s: &FieldState, layout: &mhd_hdg::DofLayout, f: FacetField) -> Vec<f64> {
    s.facet[layout.offset(f)..layout.offset(f) + layout.size(f)].to_vec()
}

/// Condensed and monolithic solutions of the smooth case, per-field relative
/// difference.
pub fn condensation_gap(level: usize, k: usize, variant: Variant, mode: RhatBc) -> f64 {
    let case = case_smooth2d(PhysParams::default(), 1.0);
    let mesh: Mesh = case.mesh(level).unwrap();
    let layout = build_dof_layout(&mesh, k, variant).unwrap();
    let refel = build_reference_element(k).unwrap();
    let disc = Discretization { mesh: &mesh, layout: &layout, refel: &refel };
    let ex = |x| case.exact(x).unwrap();
    let bc = boundary_dof_values(&layout, &mesh, &refel, &|x| ex(x).u, &|x| ex(x).b).unwrap();
    let params = case.params;
    let opts = SolveOptions { rhat_bc: mode, ..Default::default() };
    let (cond, _) = solve_system(&disc, &params, &case, &case, &bc, &opts).unwrap();
    let mono = solve_monolithic(&disc, &params, &case, &case, &bc, mode).unwrap();
    let mut worst = 0.0_f64;
    for f in [LocalField::L, LocalField::U, LocalField::P, LocalField::J, LocalField::B] {
        worst = worst.max(rel_diff(&local_field(&cond, &layout, f), &local_field(&mono, &layout, f)));
    }
    for f in FacetField::ALL {
        worst = worst.max(rel_diff(&facet_field(&cond, &layout, f), &facet_field(&mono, &layout, f)));
    }
    // r is zero up to roundoff; compare on the scale of b
    let scale = local_field(&mono, &layout, LocalField::B).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let (rc, rm) = (local_field(&cond, &layout, LocalField::R), local_field(&mono, &layout, LocalField::R));
    let dr = rc.iter().zip(&rm).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    worst.max(dr / scale)
}
