//! Manufactured solutions, forcing, error norms and convergence rates.
//!
//! Exact fields are evaluated in `f64` with hand-coded derivatives; the
//! forcing is the strong residual of the linearized equations at the exact
//! solution, see [`strong_residual`].

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::basis::build_reference_element;
use crate::error::{Error, Result};
use crate::global_system::{diagnostics, FieldState, SolveOptions, SolveStats};
use crate::local_solver::{ConvectiveFields, Discretization, Forcing, PhysParams};
use crate::mesh::{gen_lshape_with, gen_strip, gen_structured_square, Diagonal, Mesh};
use crate::picard::{solve_linear, solve_nonlinear_with_history, PicardConfig, PicardHistory};
use crate::scalar::{pairwise_sum, Mat2, Real, Vec2};
use crate::spaces::{boundary_dof_values, build_dof_layout, DofLayout, LocalField, Variant};

/// Exact fields and derivatives at one point.
///
/// Gradients are `[i][j] = ∂_j v_i`, Hessians `[i][j][k] = ∂_j ∂_k v_i`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ExactPoint {
    pub u: Vec2<f64>,
    pub grad_u: Mat2<f64>,
    pub hess_u: [Mat2<f64>; 2],
    pub b: Vec2<f64>,
    pub grad_b: Mat2<f64>,
    pub hess_b: [Mat2<f64>; 2],
    pub p: f64,
    pub grad_p: Vec2<f64>,
    pub r: f64,
    pub grad_r: Vec2<f64>,
    pub w: Vec2<f64>,
    pub d: Vec2<f64>,
    pub grad_d: Mat2<f64>,
}

impl ExactPoint {
    /// `L = ∇u / Re`.
    pub fn l(&self, params: &PhysParams<f64>) -> Mat2<f64> {
        self.grad_u.map(|row| row.map(|v| v / params.re))
    }

    /// `J = (κ/Rm) ∇×b`.
    pub fn j(&self, params: &PhysParams<f64>) -> f64 {
        params.kappa / params.rm * (self.grad_b[1][0] - self.grad_b[0][1])
    }
}

/// `(g, f)` such that the exact fields solve the linearized system:
///
/// ```text
/// g = -(1/Re) Δu + ∇p + (w·∇)u + κ d × (∇×b)
/// f = (κ/Rm) ∇×∇×b + ∇r - κ ∇×(u × d)
/// ```
pub fn strong_residual(e: &ExactPoint, params: &PhysParams<f64>) -> (Vec2<f64>, Vec2<f64>) {
    let (re, rm, kappa) = (params.re, params.rm, params.kappa);
    let lap = |h: &Mat2<f64>| h[0][0] + h[1][1];
    let curl_b = e.grad_b[1][0] - e.grad_b[0][1];
    let g: Vec2<f64> = std::array::from_fn(|i| {
        let adv = e.w[0] * e.grad_u[i][0] + e.w[1] * e.grad_u[i][1];
        let lorentz = if i == 0 { e.d[1] * curl_b } else { -e.d[0] * curl_b };
        -lap(&e.hess_u[i]) / re + e.grad_p[i] + adv + kappa * lorentz
    });
    // a = ∇×b, ∇×a = (∂y a, -∂x a)
    let da: Vec2<f64> = std::array::from_fn(|j| e.hess_b[1][0][j] - e.hess_b[0][1][j]);
    // s = u × d
    let ds: Vec2<f64> = std::array::from_fn(|j| {
        e.grad_u[0][j] * e.d[1] + e.u[0] * e.grad_d[1][j] - e.grad_u[1][j] * e.d[0] - e.u[1] * e.grad_d[0][j]
    });
    let f = [kappa / rm * da[1] + e.grad_r[0] - kappa * ds[1], -kappa / rm * da[0] + e.grad_r[1] + kappa * ds[0]];
    (g, f)
}

/// Domain and mesh family of a case.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaseDomain {
    /// `(0,1)²`, level `l` has `2·4^l` cells.
    UnitSquare,
    /// L-shape, level `l` has `6·4^l` cells.
    LShape,
    /// Hartmann strip, level `l ≥ 1` has `160 l²` cells.
    Strip,
}

impl CaseDomain {
    /// Mesh of `level`; `diagonal` applies to the square and L-shape, the strip
    /// always uses its own split.
    pub fn mesh<T: Real>(self, level: usize, diagonal: Diagonal) -> Result<Mesh<T>> {
        match self {
            CaseDomain::UnitSquare => gen_structured_square(1 << level, [[T::zero(); 2], [T::one(); 2]], diagonal),
            CaseDomain::LShape => gen_lshape_with(1 << level, diagonal),
            CaseDomain::Strip => gen_strip(level),
        }
    }

    pub fn area(self) -> f64 {
        match self {
            CaseDomain::UnitSquare => 1.0,
            CaseDomain::LShape => 3.0,
            CaseDomain::Strip => 0.05,
        }
    }
}

type ExactFn = Arc<dyn Fn(Vec2<f64>) -> Result<ExactPoint> + Send + Sync>;

/// A manufactured solution with its parameters.
#[derive(Clone)]
pub struct ManufacturedCase {
    pub name: String,
    pub domain: CaseDomain,
    pub params: PhysParams<f64>,
    pub p0: f64,
    /// Solve by Picard iteration (`w`, `d` from the previous iterate).
    pub nonlinear: bool,
    /// Square split for the unit-square and L-shape meshes.
    pub diagonal: Diagonal,
    exact: ExactFn,
}

impl fmt::Debug for ManufacturedCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ManufacturedCase")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("params", &self.params)
            .field("p0", &self.p0)
            .field("nonlinear", &self.nonlinear)
            .field("diagonal", &self.diagonal)
            .finish()
    }
}

impl ManufacturedCase {
    pub fn new(
        name: impl Into<String>,
        domain: CaseDomain,
        params: PhysParams<f64>,
        exact: impl Fn(Vec2<f64>) -> Result<ExactPoint> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            domain,
            params,
            p0: 0.0,
            nonlinear: false,
            diagonal: Diagonal::default(),
            exact: Arc::new(exact),
        }
    }

    pub fn exact(&self, x: Vec2<f64>) -> Result<ExactPoint> {
        (self.exact)(x)
    }

    /// Exact point, NaN-filled where the fields are undefined.
    fn exact_or_nan(&self, x: Vec2<f64>) -> ExactPoint {
        self.exact(x).unwrap_or_else(|_| {
            let n = f64::NAN;
            ExactPoint { u: [n; 2], b: [n; 2], p: n, w: [n; 2], d: [n; 2], ..Default::default() }
        })
    }

    /// Forcing `(g, f)` at `x`.
    pub fn forcing_at(&self, x: Vec2<f64>) -> Result<(Vec2<f64>, Vec2<f64>)> {
        Ok(strong_residual(&self.exact(x)?, &self.params))
    }

    /// Same case solved by Picard iteration.
    pub fn into_nonlinear(mut self) -> Self {
        self.nonlinear = true;
        self
    }

    pub fn mesh<T: Real>(&self, level: usize) -> Result<Mesh<T>> {
        self.domain.mesh(level, self.diagonal)
    }
}

fn to_t<T: Real>(v: Vec2<f64>) -> Vec2<T> {
    v.map(T::of)
}

fn to_f64<T: Real>(v: Vec2<T>) -> Vec2<f64> {
    v.map(|a| a.to_f64_lossy())
}

impl<T: Real> Forcing<T> for ManufacturedCase {
    fn g(&self, x: Vec2<T>) -> Vec2<T> {
        to_t(strong_residual(&self.exact_or_nan(to_f64(x)), &self.params).0)
    }
    fn f(&self, x: Vec2<T>) -> Vec2<T> {
        to_t(strong_residual(&self.exact_or_nan(to_f64(x)), &self.params).1)
    }
    fn gf(&self, x: Vec2<T>) -> (Vec2<T>, Vec2<T>) {
        let (g, f) = strong_residual(&self.exact_or_nan(to_f64(x)), &self.params);
        (to_t(g), to_t(f))
    }
}

impl<T: Real> ConvectiveFields<T> for ManufacturedCase {
    fn w(&self, _: usize, _: Vec2<T>, x: Vec2<T>) -> Vec2<T> {
        to_t(self.exact_or_nan(to_f64(x)).w)
    }
    fn d(&self, _: usize, _: Vec2<T>, x: Vec2<T>) -> Vec2<T> {
        to_t(self.exact_or_nan(to_f64(x)).d)
    }
    fn grad_d(&self, _: usize, _: Vec2<T>, x: Vec2<T>) -> Mat2<T> {
        self.exact_or_nan(to_f64(x)).grad_d.map(to_t)
    }
    fn facet_d(&self, _: usize, _: T, x: Vec2<T>) -> Vec2<T> {
        to_t(self.exact_or_nan(to_f64(x)).d)
    }
    fn volume(&self, _: usize, _: Vec2<T>, x: Vec2<T>) -> (Vec2<T>, Vec2<T>, Mat2<T>) {
        let e = self.exact_or_nan(to_f64(x));
        (to_t(e.w), to_t(e.d), e.grad_d.map(to_t))
    }
}

// ---------------------------------------------------------------------------
// smooth vortex

/// Polynomial with coefficients from the constant term up.
#[derive(Clone, Debug, PartialEq)]
struct Poly(Vec<f64>);

impl Poly {
    fn mul(&self, o: &Poly) -> Poly {
        let mut c = vec![0.0; self.0.len() + o.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in o.0.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Poly(c)
    }
    fn deriv(&self) -> Poly {
        if self.0.len() <= 1 {
            return Poly(vec![0.0]);
        }
        Poly(self.0.iter().enumerate().skip(1).map(|(i, a)| i as f64 * a).collect())
    }
    fn add(&self, o: &Poly) -> Poly {
        let n = self.0.len().max(o.0.len());
        Poly((0..n).map(|i| self.0.get(i).unwrap_or(&0.0) + o.0.get(i).unwrap_or(&0.0)).collect())
    }
    fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |s, a| s * x + a)
    }
}

/// `[f, f', f'']` of `f = eˣ P(x)` (or `P` when `exp` is false).
#[derive(Clone, Debug)]
struct Factor {
    exp: bool,
    d: [Poly; 3],
}

impl Factor {
    fn new(p: Poly, exp: bool) -> Self {
        let step = |q: &Poly| if exp { q.add(&q.deriv()) } else { q.deriv() };
        let d1 = step(&p);
        let d2 = step(&d1);
        Self { exp, d: [p, d1, d2] }
    }
    fn eval(&self, x: f64) -> [f64; 3] {
        let e = if self.exp { x.exp() } else { 1.0 };
        std::array::from_fn(|i| e * self.d[i].eval(x))
    }
}

/// Separable vector field `v_i = X_i(x) Y_i(y)`.
fn separable(fx: &[Factor; 2], fy: &[Factor; 2], x: Vec2<f64>) -> (Vec2<f64>, Mat2<f64>, [Mat2<f64>; 2]) {
    let mut v = [0.0; 2];
    let mut g = [[0.0; 2]; 2];
    let mut h = [[[0.0; 2]; 2]; 2];
    for i in 0..2 {
        let a = fx[i].eval(x[0]);
        let b = fy[i].eval(x[1]);
        v[i] = a[0] * b[0];
        g[i] = [a[1] * b[0], a[0] * b[1]];
        h[i] = [[a[2] * b[0], a[1] * b[1]], [a[1] * b[1], a[0] * b[2]]];
    }
    (v, g, h)
}

fn vortex_factors() -> ([Factor; 2], [Factor; 2]) {
    let p = |c: &[f64]| Poly(c.to_vec());
    // X1 = -2x² (x-1)² eˣ,  Y1 = (-y² + y)(2y - 1)
    let x1 = p(&[0.0, 0.0, -2.0]).mul(&p(&[-1.0, 1.0])).mul(&p(&[-1.0, 1.0]));
    let y1 = p(&[0.0, 1.0, -1.0]).mul(&p(&[-1.0, 2.0]));
    // X2 = -x (x(x+3) - 2)(x - 1) eˣ,  Y2 = y² (y - 1)²
    let x2 = p(&[0.0, -1.0]).mul(&p(&[-2.0, 3.0, 1.0])).mul(&p(&[-1.0, 1.0]));
    let y2 = p(&[0.0, 0.0, 1.0]).mul(&p(&[-1.0, 1.0])).mul(&p(&[-1.0, 1.0]));
    ([Factor::new(x1, true), Factor::new(x2, true)], [Factor::new(y1, false), Factor::new(y2, false)])
}

/// Vortex solution on the unit square with `u = b`, `p = p0 sin πx sin πy`,
/// `r = 0`, `w = u`, `d = b`.
pub fn case_smooth2d(params: PhysParams<f64>, p0: f64) -> ManufacturedCase {
    let (fx, fy) = vortex_factors();
    let mut case = ManufacturedCase::new("smooth2d", CaseDomain::UnitSquare, params, move |x| {
        let (u, gu, hu) = separable(&fx, &fy, x);
        let (sx, cx) = (PI * x[0]).sin_cos();
        let (sy, cy) = (PI * x[1]).sin_cos();
        Ok(ExactPoint {
            u,
            grad_u: gu,
            hess_u: hu,
            b: u,
            grad_b: gu,
            hess_b: hu,
            p: p0 * sx * sy,
            grad_p: [p0 * PI * cx * sy, p0 * PI * sx * cy],
            w: u,
            d: u,
            grad_d: gu,
            ..Default::default()
        })
    });
    case.p0 = p0;
    case
}

// ---------------------------------------------------------------------------
// singular corner solution

/// `Σ a cos(ωφ) + b sin(ωφ)` as `(ω, a, b)` triples.
#[derive(Clone, Debug, Default)]
struct Trig(Vec<(f64, f64, f64)>);

impl Trig {
    fn cos(w: f64, a: f64) -> Self {
        Trig(vec![(w, a, 0.0)])
    }
    fn sin(w: f64, b: f64) -> Self {
        Trig(vec![(w, 0.0, b)])
    }
    fn add(mut self, o: &Trig) -> Self {
        self.0.extend_from_slice(&o.0);
        self
    }
    fn scale(&self, s: f64) -> Self {
        Trig(self.0.iter().map(|&(w, a, b)| (w, a * s, b * s)).collect())
    }
    fn deriv(&self) -> Self {
        Trig(self.0.iter().map(|&(w, a, b)| (w, b * w, -a * w)).collect())
    }
    fn mul_cos(&self) -> Self {
        let mut out = Vec::with_capacity(2 * self.0.len());
        for &(w, a, b) in &self.0 {
            out.push((w + 1.0, 0.5 * a, 0.5 * b));
            out.push((w - 1.0, 0.5 * a, 0.5 * b));
        }
        Trig(out)
    }
    fn mul_sin(&self) -> Self {
        let mut out = Vec::with_capacity(2 * self.0.len());
        for &(w, a, b) in &self.0 {
            // sin φ cos ωφ = ½[sin(ω+1)φ − sin(ω−1)φ], sin φ sin ωφ = ½[cos(ω−1)φ − cos(ω+1)φ]
            out.push((w + 1.0, -0.5 * b, 0.5 * a));
            out.push((w - 1.0, 0.5 * b, -0.5 * a));
        }
        Trig(out)
    }
    /// Folds negative frequencies and merges equal ones.
    fn simplify(&self) -> Self {
        let mut terms: Vec<(f64, f64, f64)> = Vec::with_capacity(self.0.len());
        for &(w, a, b) in &self.0 {
            let (w, a, b) = if w < 0.0 { (-w, a, -b) } else { (w, a, b) };
            let b = if w == 0.0 { 0.0 } else { b };
            match terms.iter_mut().find(|t| (t.0 - w).abs() <= 1e-12 * (1.0 + w)) {
                Some(t) => {
                    t.1 += a;
                    t.2 += b;
                }
                None => terms.push((w, a, b)),
            }
        }
        terms.retain(|t| t.1 != 0.0 || t.2 != 0.0);
        Trig(terms)
    }
    fn eval(&self, phi: f64) -> f64 {
        self.0
            .iter()
            .map(|&(w, a, b)| {
                let (s, c) = (w * phi).sin_cos();
                a * c + b * s
            })
            .sum()
    }
}

/// `ρ^a g(φ)` in polar coordinates about the origin.
#[derive(Clone, Debug)]
struct Polar {
    a: f64,
    g: Trig,
}

impl Polar {
    fn dx(&self) -> Polar {
        Polar {
            a: self.a - 1.0,
            g: self.g.mul_cos().scale(self.a).add(&self.g.deriv().mul_sin().scale(-1.0)).simplify(),
        }
    }
    fn dy(&self) -> Polar {
        Polar { a: self.a - 1.0, g: self.g.mul_sin().scale(self.a).add(&self.g.deriv().mul_cos()).simplify() }
    }
    fn d(&self, j: usize) -> Polar {
        if j == 0 {
            self.dx()
        } else {
            self.dy()
        }
    }
    fn eval(&self, rho: f64, phi: f64) -> f64 {
        rho.powf(self.a) * self.g.eval(phi)
    }
}

/// Polar field with its first and second Cartesian derivatives.
#[derive(Clone, Debug)]
struct PolarVector {
    v: [Polar; 2],
    g: [[Polar; 2]; 2],
    h: [[[Polar; 2]; 2]; 2],
}

impl PolarVector {
    fn new(v: [Polar; 2]) -> Self {
        let g = std::array::from_fn(|i| std::array::from_fn(|j| v[i].d(j)));
        let h = std::array::from_fn(|i: usize| std::array::from_fn(|j: usize| std::array::from_fn(|k| v[i].d(j).d(k))));
        Self { v, g, h }
    }
    fn eval(&self, rho: f64, phi: f64) -> (Vec2<f64>, Mat2<f64>, [Mat2<f64>; 2]) {
        (
            std::array::from_fn(|i| self.v[i].eval(rho, phi)),
            std::array::from_fn(|i| std::array::from_fn(|j| self.g[i][j].eval(rho, phi))),
            std::array::from_fn(|i| std::array::from_fn(|j| std::array::from_fn(|k| self.h[i][j][k].eval(rho, phi)))),
        )
    }
}

/// Corner exponent of the reentrant-corner solution.
pub const SINGULAR_LAMBDA: f64 = 0.54448373678246;
/// Opening angle of the reentrant corner.
pub const SINGULAR_OMEGA: f64 = 1.5 * PI;

/// Angular profile `ψ` of the corner solution.
fn corner_psi() -> Trig {
    let (l, w) = (SINGULAR_LAMBDA, SINGULAR_OMEGA);
    let c = (l * w).cos();
    Trig::sin(1.0 + l, c / (1.0 + l))
        .add(&Trig::sin(1.0 - l, -c / (1.0 - l)))
        .add(&Trig::cos(1.0 + l, -1.0))
        .add(&Trig::cos(1.0 - l, 1.0))
}

/// `ψ(φ)` for checks of the corner compatibility conditions.
pub fn singular_psi(phi: f64) -> f64 {
    corner_psi().eval(phi)
}

/// Polar coordinates with `φ ∈ [0, 2π)`; the L-shape uses `[0, 3π/2]`.
pub fn polar_angle(x: Vec2<f64>) -> (f64, f64) {
    let rho = x[0].hypot(x[1]);
    let mut phi = x[1].atan2(x[0]);
    if phi < 0.0 {
        phi += 2.0 * PI;
    }
    (rho, phi)
}

/// Reentrant-corner solution on the L-shape with `w = 0`, `d = (-1, 1)`.
pub fn case_singular2d(params: PhysParams<f64>) -> ManufacturedCase {
    let l = SINGULAR_LAMBDA;
    let psi = corner_psi();
    let stream = Polar { a: 1.0 + l, g: psi.clone() };
    let u = PolarVector::new([stream.dy(), stream.dx().scale_polar(-1.0)]);
    let pot = Polar { a: 2.0 / 3.0, g: Trig::sin(2.0 / 3.0, 1.0) };
    let b = PolarVector::new([pot.dx(), pot.dy()]);
    let d1 = psi.deriv();
    let d3 = d1.deriv().deriv();
    let p = Polar { a: l - 1.0, g: d1.scale((1.0 + l) * (1.0 + l)).add(&d3).scale(-1.0 / (1.0 - l)) };
    let gp = [p.dx(), p.dy()];
    ManufacturedCase::new("singular2d", CaseDomain::LShape, params, move |x| {
        let (rho, phi) = polar_angle(x);
        if rho == 0.0 {
            return Err(Error::Domain("singular solution evaluated at the corner"));
        }
        let (uv, gu, hu) = u.eval(rho, phi);
        let (bv, gb, hb) = b.eval(rho, phi);
        Ok(ExactPoint {
            u: uv,
            grad_u: gu,
            hess_u: hu,
            b: bv,
            grad_b: gb,
            hess_b: hb,
            p: p.eval(rho, phi),
            grad_p: [gp[0].eval(rho, phi), gp[1].eval(rho, phi)],
            w: [0.0; 2],
            d: [-1.0, 1.0],
            ..Default::default()
        })
    })
}

impl Polar {
    fn scale_polar(&self, s: f64) -> Polar {
        Polar { a: self.a, g: self.g.scale(s) }
    }
}

// ---------------------------------------------------------------------------
// Hartmann flow

/// Hartmann channel flow on `(0, 0.025) × (-1, 1)`, driven by `g = (1, 0)`,
/// with `w = u`, `d = b`; solved by Picard iteration.
pub fn case_hartmann(params: PhysParams<f64>) -> Result<ManufacturedCase> {
    params.validate()?;
    let (re, kappa) = (params.re, params.kappa);
    let ha = params.hartmann();
    let q = (-2.0 * ha).exp();
    let coth = 1.0 / ha.tanh();
    // mean of S² over (-1, 1), S = sinh(Ha y)/sinh(Ha) - y
    let int_sh2 = coth / ha - 1.0 / ha.sinh().powi(2);
    let int_ysh = 2.0 * (coth / ha - 1.0 / (ha * ha));
    let mean_s2 = 0.5 * (int_sh2 - 2.0 * int_ysh + 2.0 / 3.0);
    let p0 = -mean_s2 / (2.0 * kappa);
    let amp = re / (ha * ha.tanh());
    let mut case = ManufacturedCase::new("hartmann", CaseDomain::Strip, params, move |x| {
        let y = x[1];
        let e1 = (ha * (y - 1.0)).exp();
        let e2 = (-ha * (y + 1.0)).exp();
        // cosh(Ha y)/cosh(Ha), sinh(Ha y)/sinh(Ha) and derivatives
        let c = (e1 + e2) / (1.0 + q);
        let c1 = ha * (e1 - e2) / (1.0 + q);
        let c2 = ha * ha * c;
        let sh = (e1 - e2) / (1.0 - q);
        let sh1 = ha * (e1 + e2) / (1.0 - q);
        let sh2 = ha * ha * sh;
        let s = sh - y;
        let s1 = sh1 - 1.0;
        let u = [amp * (1.0 - c), 0.0];
        let gu = [[0.0, -amp * c1], [0.0, 0.0]];
        let hu = [[[0.0, 0.0], [0.0, -amp * c2]], [[0.0; 2]; 2]];
        let b = [s / kappa, 1.0];
        let gb = [[0.0, s1 / kappa], [0.0, 0.0]];
        let hb = [[[0.0, 0.0], [0.0, sh2 / kappa]], [[0.0; 2]; 2]];
        Ok(ExactPoint {
            u,
            grad_u: gu,
            hess_u: hu,
            b,
            grad_b: gb,
            hess_b: hb,
            p: -s * s / (2.0 * kappa) - p0,
            grad_p: [0.0, -s * s1 / kappa],
            w: u,
            d: b,
            grad_d: gb,
            ..Default::default()
        })
    });
    case.p0 = p0;
    case.nonlinear = true;
    Ok(case)
}

// ---------------------------------------------------------------------------
// error norms

/// L² errors (with the `Re`, `Rm/κ` scalings on `L`, `J`) and L∞ divergence.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorReport {
    pub err_l: f64,
    pub err_u: f64,
    /// Pressure error modulo constants.
    pub err_p: f64,
    pub err_j: f64,
    pub err_b: f64,
    pub err_r: f64,
    pub div_u: f64,
    pub div_b: f64,
    /// Max `|u_h|`, `|b_h|` at the quadrature points.
    pub max_u: f64,
    pub max_b: f64,
}

impl ErrorReport {
    pub fn fields(&self) -> [f64; 6] {
        [self.err_l, self.err_u, self.err_p, self.err_j, self.err_b, self.err_r]
    }
}

pub const FIELD_NAMES: [&str; 6] = ["L", "u", "p", "J", "b", "r"];

/// Errors of `state` against `case`, by the `2k+3` volume rule.
pub fn error_norms<T: Real>(
    state: &FieldState<T>,
    case: &ManufacturedCase,
    disc: &Discretization<'_, T>,
) -> Result<ErrorReport> {
    let (mesh, layout, refel) = (disc.mesh, disc.layout, disc.refel);
    let prm = &case.params;
    let n = mesh.n_cells();
    let cell_sums = |c: usize, p_shift: f64| -> Result<[f64; 8]> {
        let map = mesh.affine_map(c)?;
        let det = map.det.to_f64_lossy();
        let mut s = [0.0f64; 8];
        for q in 0..refel.vol_rule.len() {
            let wq = refel.vol_rule.weights[q].to_f64_lossy() * det;
            let x = to_f64(map.map(refel.vol_rule.points[q]));
            let e = case.exact(x)?;
            let phi = refel.phi.row(q);
            let psi = refel.psi.row(q);
            let lh = state.tensor(layout, c, phi);
            let uh = to_f64(state.vector(layout, c, LocalField::U, phi));
            let bh = to_f64(state.vector(layout, c, LocalField::B, phi));
            let ph = state.scalar(layout, c, LocalField::P, psi).to_f64_lossy();
            let jh = state.scalar(layout, c, LocalField::J, phi).to_f64_lossy();
            let rh = state.scalar(layout, c, LocalField::R, psi).to_f64_lossy();
            let le = e.l(prm);
            let mut el = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    el += (le[i][j] - lh[i][j].to_f64_lossy()).powi(2);
                }
            }
            let sq = |a: Vec2<f64>, b: Vec2<f64>| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
            let ep = e.p - ph;
            s[0] += wq * el;
            s[1] += wq * sq(e.u, uh);
            s[2] += wq * ep;
            s[3] += wq * (ep - p_shift).powi(2);
            s[4] += wq * (e.j(prm) - jh).powi(2);
            s[5] += wq * sq(e.b, bh);
            s[6] += wq * (e.r - rh).powi(2);
            s[7] += wq;
        }
        Ok(s)
    };
    let reduce = |parts: &[[f64; 8]], i: usize| pairwise_sum(&parts.iter().map(|p| p[i]).collect::<Vec<_>>());
    let first: Vec<[f64; 8]> = (0..n).into_par_iter().map(|c| cell_sums(c, 0.0)).collect::<Result<_>>()?;
    let shift = reduce(&first, 2) / reduce(&first, 7);
    let second: Vec<[f64; 8]> = (0..n).into_par_iter().map(|c| cell_sums(c, shift)).collect::<Result<_>>()?;
    let diag = diagnostics(state, disc)?;
    Ok(ErrorReport {
        err_l: prm.re * reduce(&first, 0).sqrt(),
        err_u: reduce(&first, 1).sqrt(),
        err_p: reduce(&second, 3).sqrt(),
        err_j: prm.rm / prm.kappa * reduce(&first, 4).sqrt(),
        err_b: reduce(&first, 5).sqrt(),
        err_r: reduce(&first, 6).sqrt(),
        div_u: diag.div_u,
        div_b: diag.div_b,
        max_u: diag.max_u,
        max_b: diag.max_b,
    })
}

// ---------------------------------------------------------------------------
// studies

/// Options of a level run.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub variant: Variant,
    pub k: usize,
    pub solve: SolveOptions,
    pub epsilon: f64,
    pub max_iter: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { variant: Variant::Ehdg, k: 2, solve: SolveOptions::default(), epsilon: 1e-10, max_iter: 100 }
    }
}

/// Result of one mesh level.
#[derive(Clone, Debug)]
pub struct LevelResult {
    pub level: usize,
    pub h: f64,
    pub cells: usize,
    /// Global trace DOFs before boundary elimination.
    pub dofs: usize,
    pub report: ErrorReport,
    pub stats: SolveStats,
    pub picard: Option<PicardHistory>,
}

impl LevelResult {
    /// Linear runs always count as converged.
    pub fn converged(&self) -> bool {
        self.picard.as_ref().is_none_or(|h| h.converged)
    }
}

/// Discretizes and solves `case` on mesh level `level`.
pub fn solve_level<T: Real>(
    case: &ManufacturedCase,
    level: usize,
    opts: &RunOptions,
) -> Result<(LevelResult, FieldState<T>)> {
    let mesh: Mesh<T> = case.mesh(level)?;
    let layout: DofLayout = build_dof_layout(&mesh, opts.k, opts.variant)?;
    let refel = build_reference_element::<T>(opts.k)?;
    let disc = Discretization { mesh: &mesh, layout: &layout, refel: &refel };
    let exact_u = |x: Vec2<T>| to_t(case.exact_or_nan(to_f64(x)).u);
    let exact_b = |x: Vec2<T>| to_t(case.exact_or_nan(to_f64(x)).b);
    let bc = boundary_dof_values(&layout, &mesh, &refel, &exact_u, &exact_b)?;
    let p = &case.params;
    let params = PhysParams {
        re: T::of(p.re),
        rm: T::of(p.rm),
        kappa: T::of(p.kappa),
        alpha1: T::of(p.alpha1),
        beta1: T::of(p.beta1),
        beta2: T::of(p.beta2),
    };
    let (state, stats, picard) = if case.nonlinear {
        let cfg = PicardConfig {
            epsilon: T::of(opts.epsilon),
            max_iter: opts.max_iter,
            solve: opts.solve.clone(),
            ..Default::default()
        };
        let (s, h) = solve_nonlinear_with_history(&disc, &params, case, &bc, &cfg)?;
        (s, h.total_stats(), Some(h))
    } else {
        let (s, st) = solve_linear(&disc, &params, case, case, &bc, &opts.solve)?;
        (s, st, None)
    };
    let report = error_norms(&state, case, &disc)?;
    Ok((
        LevelResult {
            level,
            h: mesh.h_max().to_f64_lossy(),
            cells: mesh.n_cells(),
            dofs: layout.n_dofs(),
            report,
            stats,
            picard,
        },
        state,
    ))
}

/// `ln(e₁/e₂) / ln(h₁/h₂)` for consecutive pairs; `None` where undefined.
pub fn rates(errors: &[f64], h: &[f64]) -> Vec<Option<f64>> {
    errors
        .windows(2)
        .zip(h.windows(2))
        .map(|(e, h)| {
            let ok = e[0] > 0.0 && e[1] > 0.0 && h[0] > 0.0 && h[1] > 0.0 && h[0] != h[1];
            ok.then(|| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        })
        .collect()
}

/// Rates of all six fields between the last two levels.
pub fn final_rates(levels: &[LevelResult]) -> [Option<f64>; 6] {
    let h: Vec<f64> = levels.iter().map(|l| l.h).collect();
    std::array::from_fn(|i| {
        let e: Vec<f64> = levels.iter().map(|l| l.report.fields()[i]).collect();
        rates(&e, &h).last().copied().flatten()
    })
}

/// Solves every level in order.
pub fn convergence_study(case: &ManufacturedCase, levels: &[usize], opts: &RunOptions) -> Result<Vec<LevelResult>> {
    if levels.len() < 2 {
        return Err(Error::InvalidArgument("a convergence study needs at least two levels".into()));
    }
    levels.iter().map(|&l| solve_level::<f64>(case, l, opts).map(|r| r.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fd_grad(f: impl Fn(Vec2<f64>) -> f64, x: Vec2<f64>, h: f64) -> Vec2<f64> {
        std::array::from_fn(|j| {
            let mut a = x;
            let mut b = x;
            a[j] += h;
            b[j] -= h;
            (f(a) - f(b)) / (2.0 * h)
        })
    }

    #[test]
    fn smooth_case_values() {
        let case = case_smooth2d(PhysParams::default(), 1.0);
        let e = case.exact([0.3, 0.7]).unwrap();
        assert_abs_diff_eq!(e.grad_u[0][0] + e.grad_u[1][1], 0.0, epsilon = 1e-14);
        assert_eq!(e.u, e.b);
        assert_abs_diff_eq!(case.exact([0.5, 0.5]).unwrap().p, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn singular_profile_vanishes_at_walls() {
        assert_abs_diff_eq!(singular_psi(0.0), 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(singular_psi(SINGULAR_OMEGA), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn singular_case_wall_and_curl() {
        let case = case_singular2d(PhysParams::default());
        for s in [0.1, 0.4, 0.9] {
            assert_abs_diff_eq!(case.exact([s, 0.0]).unwrap().u[1], 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(case.exact([0.0, -s]).unwrap().u[0], 0.0, epsilon = 1e-10);
        }
        let e = case.exact([0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(e.grad_b[1][0] - e.grad_b[0][1], 0.0, epsilon = 1e-12);
        assert!(case.exact([0.0, 0.0]).is_err());
    }

    #[test]
    fn hartmann_constants() {
        let prm = PhysParams { re: 7.07, rm: 7.07, kappa: 200.0, ..Default::default() };
        assert_abs_diff_eq!(prm.hartmann(), 7.07 * 200f64.sqrt(), epsilon = 1e-12);
        let case = case_hartmann(prm).unwrap();
        for y in [-1.0, 1.0] {
            assert_abs_diff_eq!(case.exact([0.01, y]).unwrap().u[0], 0.0, epsilon = 1e-12);
        }
        let e = case.exact([0.01, 0.0]).unwrap();
        assert_abs_diff_eq!(e.b[0], 0.0, epsilon = 1e-15);
        assert_eq!(e.b[1], 1.0);
        let (g, f) = case.forcing_at([0.01, 0.3]).unwrap();
        assert_abs_diff_eq!(g[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(g[1], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(f[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(f[1], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn hartmann_pressure_has_zero_mean() {
        let prm = PhysParams { re: 2.0, rm: 3.0, kappa: 1.5, ..Default::default() };
        let case = case_hartmann(prm).unwrap();
        let n = 20000;
        let s: f64 = (0..n)
            .map(|i| {
                let y = -1.0 + 2.0 * (i as f64 + 0.5) / n as f64;
                case.exact([0.0, y]).unwrap().p
            })
            .sum::<f64>()
            * 2.0
            / n as f64;
        assert_abs_diff_eq!(s, 0.0, epsilon = 1e-7);
    }

    fn all_cases() -> Vec<(ManufacturedCase, Vec2<f64>, Vec2<f64>)> {
        let prm = PhysParams { re: 2.0, rm: 3.0, kappa: 1.5, ..Default::default() };
        vec![
            (case_smooth2d(prm, 10.0), [0.05, 0.05], [0.95, 0.95]),
            (case_singular2d(prm), [-0.9, 0.1], [0.9, 0.9]),
            (case_hartmann(prm).unwrap(), [0.001, -0.9], [0.024, 0.9]),
        ]
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let mut rng = 12345u64;
        let mut next = || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng >> 11) as f64 / (1u64 << 53) as f64
        };
        let h = 1e-6;
        for (case, lo, hi) in all_cases() {
            for _ in 0..50 {
                let x = [lo[0] + (hi[0] - lo[0]) * next(), lo[1] + (hi[1] - lo[1]) * next()];
                let e = case.exact(x).unwrap();
                for i in 0..2 {
                    let gu = fd_grad(|y| case.exact(y).unwrap().u[i], x, h);
                    let gb = fd_grad(|y| case.exact(y).unwrap().b[i], x, h);
                    for j in 0..2 {
                        let tol = 1e-6 * (1.0 + e.grad_u[i][j].abs());
                        assert_abs_diff_eq!(gu[j], e.grad_u[i][j], epsilon = tol);
                        let tol = 1e-6 * (1.0 + e.grad_b[i][j].abs());
                        assert_abs_diff_eq!(gb[j], e.grad_b[i][j], epsilon = tol);
                        let hu = fd_grad(|y| case.exact(y).unwrap().grad_u[i][j], x, h);
                        let hb = fd_grad(|y| case.exact(y).unwrap().grad_b[i][j], x, h);
                        for k in 0..2 {
                            let tol = 1e-6 * (1.0 + e.hess_u[i][j][k].abs());
                            assert_abs_diff_eq!(hu[k], e.hess_u[i][j][k], epsilon = tol);
                            let tol = 1e-6 * (1.0 + e.hess_b[i][j][k].abs());
                            assert_abs_diff_eq!(hb[k], e.hess_b[i][j][k], epsilon = tol);
                        }
                    }
                }
                let gp = fd_grad(|y| case.exact(y).unwrap().p, x, h);
                for j in 0..2 {
                    assert_abs_diff_eq!(gp[j], e.grad_p[j], epsilon = 1e-6 * (1.0 + e.grad_p[j].abs()));
                }
            }
        }
    }

    /// Forcing checked against the equations with every derivative taken by
    /// fourth-order finite differences of the exact values.
    #[test]
    fn forcing_matches_finite_difference_residual() {
        let mut rng = 987u64;
        let mut next = || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng >> 11) as f64 / (1u64 << 53) as f64
        };
        let h = 1e-3;
        let d1 = |f: &dyn Fn(Vec2<f64>) -> f64, x: Vec2<f64>, j: usize| {
            let at = |s: f64| {
                let mut y = x;
                y[j] += s * h;
                f(y)
            };
            (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h)
        };
        for (case, lo, hi) in all_cases() {
            let prm = case.params;
            let ex = |y: Vec2<f64>| case.exact(y).unwrap();
            for _ in 0..50 {
                let x = [lo[0] + (hi[0] - lo[0]) * next(), lo[1] + (hi[1] - lo[1]) * next()];
                let e = ex(x);
                let (g, f) = case.forcing_at(x).unwrap();
                let du = |i: usize, j: usize, y: Vec2<f64>| d1(&|z| ex(z).u[i], y, j);
                let curl_b = |y: Vec2<f64>| d1(&|z| ex(z).b[1], y, 0) - d1(&|z| ex(z).b[0], y, 1);
                let cb = curl_b(x);
                for i in 0..2 {
                    let lap = d1(&|y| du(i, 0, y), x, 0) + d1(&|y| du(i, 1, y), x, 1);
                    let gp = d1(&|y| ex(y).p, x, i);
                    let adv = e.w[0] * du(i, 0, x) + e.w[1] * du(i, 1, x);
                    let lor = if i == 0 { e.d[1] * cb } else { -e.d[0] * cb };
                    let gi = -lap / prm.re + gp + adv + prm.kappa * lor;
                    assert_abs_diff_eq!(gi, g[i], epsilon = 1e-6 * (1.0 + g[i].abs()));
                }
                let s = |y: Vec2<f64>| {
                    let p = ex(y);
                    p.u[0] * p.d[1] - p.u[1] * p.d[0]
                };
                let fd = [
                    prm.kappa / prm.rm * d1(&curl_b, x, 1) - prm.kappa * d1(&s, x, 1),
                    -prm.kappa / prm.rm * d1(&curl_b, x, 0) + prm.kappa * d1(&s, x, 0),
                ];
                for i in 0..2 {
                    assert_abs_diff_eq!(fd[i], f[i], epsilon = 1e-6 * (1.0 + f[i].abs()));
                }
            }
        }
    }

    #[test]
    fn exact_fields_are_divergence_free() {
        for (case, lo, hi) in all_cases() {
            for t in [0.1, 0.5, 0.8] {
                let x = [lo[0] + (hi[0] - lo[0]) * t, lo[1] + (hi[1] - lo[1]) * (1.0 - t)];
                let e = case.exact(x).unwrap();
                assert_abs_diff_eq!(e.grad_u[0][0] + e.grad_u[1][1], 0.0, epsilon = 1e-10);
                assert_abs_diff_eq!(e.grad_b[0][0] + e.grad_b[1][1], 0.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn rate_of_synthetic_errors() {
        let r = rates(&[1e-2, 2.5e-3], &[0.5, 0.25]);
        assert_abs_diff_eq!(r[0].unwrap(), 2.0, epsilon = 1e-12);
        assert_eq!(rates(&[1e-2, 0.0], &[0.5, 0.25]), vec![None]);
    }
}
