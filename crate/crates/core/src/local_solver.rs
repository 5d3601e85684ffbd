//! Element-local discretization of the first-order linearized MHD system.
//!
//! For each cell the full element matrix is built over
//!
//! - rows: local test functions `(G, v, q, H, c, s)` followed by the cell's
//!   facet test functions `(μ, ρ, λ, γ)`,
//! - columns: local unknowns `(L, u, p, J, b, r)` followed by the cell's facet
//!   unknowns `(û, p̂, b̂, r̂)`,
//!
//! where the facet part is indexed by [`DofLayout::cell_dofs`]. Facet terms are
//! produced by evaluating [`eval_numerical_flux`] on unit inputs, so the
//! assembled operator is exactly the flux as written.
//!
//! In-plane vectors are embedded in 3D with zero third component; an
//! out-of-plane quantity is a scalar `s` standing for `(0, 0, s)`.

use crate::basis::{orientation_index, ReferenceElement};
use crate::dense::{Lu, Matrix};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::scalar::{cross, cross_vs, dot, Mat2, Real, Vec2};
use crate::spaces::{DofLayout, FacetField, LocalField, LocalLayout};

/// Physical and stabilization parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysParams<T> {
    pub re: T,
    pub rm: T,
    pub kappa: T,
    pub alpha1: T,
    pub beta1: T,
    pub beta2: T,
}

impl<T: Real> Default for PhysParams<T> {
    fn default() -> Self {
        Self { re: T::one(), rm: T::one(), kappa: T::one(), alpha1: T::of(125.0), beta1: T::one(), beta2: T::one() }
    }
}

impl<T: Real> PhysParams<T> {
    /// Hartmann number `√(κ Re Rm)`.
    pub fn hartmann(&self) -> T {
        (self.kappa * self.re * self.rm).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: T| v > T::zero() && v.is_finite();
        if !(pos(self.re) && pos(self.rm) && pos(self.kappa)) {
            return Err(Error::Params("Re, Rm and kappa must be positive".into()));
        }
        if !(pos(self.beta1) && pos(self.beta2)) {
            return Err(Error::Params("beta1 and beta2 must be positive".into()));
        }
        if !self.alpha1.is_finite() {
            return Err(Error::Params("alpha1 must be finite".into()));
        }
        Ok(())
    }

    /// Checks `α₁ > ½ sup|w|`.
    pub fn check_alpha(&self, sup_w: T) -> Result<()> {
        let bound = sup_w * T::of(0.5);
        if self.alpha1 > bound {
            Ok(())
        } else {
            Err(Error::Stabilization { alpha1: self.alpha1.to_f64_lossy(), bound: bound.to_f64_lossy() })
        }
    }
}

/// Prescribed advecting velocity `w` and magnetic field `d`.
///
/// Volume evaluations receive the cell, the reference coordinates and the
/// physical point. The facet evaluation of `d` must be single-valued.
pub trait ConvectiveFields<T: Real>: Sync {
    fn w(&self, cell: usize, xi: Vec2<T>, x: Vec2<T>) -> Vec2<T>;
    fn d(&self, cell: usize, xi: Vec2<T>, x: Vec2<T>) -> Vec2<T>;
    /// `[i][j] = ∂d_i/∂x_j`.
    fn grad_d(&self, cell: usize, xi: Vec2<T>, x: Vec2<T>) -> Mat2<T>;
    fn facet_d(&self, facet: usize, t: T, x: Vec2<T>) -> Vec2<T>;
    /// `(w, d, ∇d)` together.
    fn volume(&self, cell: usize, xi: Vec2<T>, x: Vec2<T>) -> (Vec2<T>, Vec2<T>, Mat2<T>) {
        (self.w(cell, xi, x), self.d(cell, xi, x), self.grad_d(cell, xi, x))
    }
}

/// `w = 0`, `d = 0`.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroFields;

impl<T: Real> ConvectiveFields<T> for ZeroFields {
    fn w(&self, _: usize, _: Vec2<T>, _: Vec2<T>) -> Vec2<T> {
        [T::zero(); 2]
    }
    fn d(&self, _: usize, _: Vec2<T>, _: Vec2<T>) -> Vec2<T> {
        [T::zero(); 2]
    }
    fn grad_d(&self, _: usize, _: Vec2<T>, _: Vec2<T>) -> Mat2<T> {
        [[T::zero(); 2]; 2]
    }
    fn facet_d(&self, _: usize, _: T, _: Vec2<T>) -> Vec2<T> {
        [T::zero(); 2]
    }
}

type VecFn<T> = Box<dyn Fn(Vec2<T>) -> Vec2<T> + Send + Sync>;
type MatFn<T> = Box<dyn Fn(Vec2<T>) -> Mat2<T> + Send + Sync>;

/// Convective fields given by closures of the physical point.
pub struct AnalyticFields<T> {
    pub w: VecFn<T>,
    pub d: VecFn<T>,
    pub grad_d: MatFn<T>,
}

impl<T: Real> ConvectiveFields<T> for AnalyticFields<T> {
    fn w(&self, _: usize, _: Vec2<T>, x: Vec2<T>) -> Vec2<T> {
        (self.w)(x)
    }
    fn d(&self, _: usize, _: Vec2<T>, x: Vec2<T>) -> Vec2<T> {
        (self.d)(x)
    }
    fn grad_d(&self, _: usize, _: Vec2<T>, x: Vec2<T>) -> Mat2<T> {
        (self.grad_d)(x)
    }
    fn facet_d(&self, _: usize, _: T, x: Vec2<T>) -> Vec2<T> {
        (self.d)(x)
    }
}

/// Right-hand sides `g` (momentum) and `f` (induction).
pub trait Forcing<T: Real>: Sync {
    fn g(&self, x: Vec2<T>) -> Vec2<T>;
    fn f(&self, x: Vec2<T>) -> Vec2<T>;
    /// `(g, f)` together.
    fn gf(&self, x: Vec2<T>) -> (Vec2<T>, Vec2<T>) {
        (self.g(x), self.f(x))
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroForcing;

impl<T: Real> Forcing<T> for ZeroForcing {
    fn g(&self, _: Vec2<T>) -> Vec2<T> {
        [T::zero(); 2]
    }
    fn f(&self, _: Vec2<T>) -> Vec2<T> {
        [T::zero(); 2]
    }
}

/// Forcing from a pair of closures.
pub struct FnForcing<G, F> {
    pub g: G,
    pub f: F,
}

impl<T, G, F> Forcing<T> for FnForcing<G, F>
where
    T: Real,
    G: Fn(Vec2<T>) -> Vec2<T> + Sync,
    F: Fn(Vec2<T>) -> Vec2<T> + Sync,
{
    fn g(&self, x: Vec2<T>) -> Vec2<T> {
        (self.g)(x)
    }
    fn f(&self, x: Vec2<T>) -> Vec2<T> {
        (self.f)(x)
    }
}

/// Local field values at a facet point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LocalTraces<T> {
    pub l: Mat2<T>,
    pub u: Vec2<T>,
    pub p: T,
    pub j: T,
    pub b: Vec2<T>,
    pub r: T,
}

/// Facet unknowns at a facet point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FacetTraces<T> {
    pub u_hat: Vec2<T>,
    pub p_hat: T,
    pub b_hat: Vec2<T>,
    pub r_hat: T,
}

/// Normal components of the six numerical fluxes.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NormalFlux<T> {
    /// `-û ⊗ n`.
    pub f1: Mat2<T>,
    pub f2: Vec2<T>,
    pub f3: T,
    pub f4: T,
    pub f5: Vec2<T>,
    pub f6: T,
}

/// Numerical flux dotted with the unit normal `n`; `m = w·n`.
pub fn eval_numerical_flux<T: Real>(
    loc: &LocalTraces<T>,
    fac: &FacetTraces<T>,
    n: Vec2<T>,
    m: T,
    d: Vec2<T>,
    params: &PhysParams<T>,
) -> NormalFlux<T> {
    let half_kappa = params.kappa * T::of(0.5);
    let (u, uh, b, bh) = (loc.u, fac.u_hat, loc.b, fac.b_hat);
    let ln = [loc.l[0][0] * n[0] + loc.l[0][1] * n[1], loc.l[1][0] * n[0] + loc.l[1][1] * n[1]];
    let lorentz = cross_vs(d, cross(n, [b[0] + bh[0], b[1] + bh[1]]));
    let f2 = std::array::from_fn(|i| {
        -ln[i] + m * u[i] + fac.p_hat * n[i] + half_kappa * lorentz[i] + params.alpha1 * (u[i] - uh[i])
    });
    let nj = cross_vs(n, loc.j);
    let induction = cross_vs(n, cross([u[0] + uh[0], u[1] + uh[1]], d));
    let db = [b[0] - bh[0], b[1] - bh[1]];
    let dbn = dot(db, n);
    // (β₁T + β₂N) v = β₁ v + (β₂ − β₁)(v·n) n
    let f5 = std::array::from_fn(|i| {
        nj[i] + fac.r_hat * n[i] - half_kappa * induction[i]
            + params.beta1 * db[i]
            + (params.beta2 - params.beta1) * dbn * n[i]
    });
    NormalFlux {
        f1: [[-uh[0] * n[0], -uh[0] * n[1]], [-uh[1] * n[0], -uh[1] * n[1]]],
        f2,
        f3: dot(u, n),
        f4: -cross(n, bh),
        f5,
        f6: dot(b, n),
    }
}

const N_OUT: usize = 11;
const N_IN: usize = 15;

/// Flux Jacobian: `jac[o][i]` is output `o` for unit input `i`.
///
/// Outputs: `f1` (4, `2i+j`), `f2` (2), `f3`, `f4`, `f5` (2), `f6`.
/// Inputs: `L` (4), `u` (2), `J`, `b` (2), `û` (2), `p̂`, `b̂` (2), `r̂`.
fn flux_jacobian<T: Real>(n: Vec2<T>, m: T, d: Vec2<T>, params: &PhysParams<T>) -> [[T; N_IN]; N_OUT] {
    let mut jac = [[T::zero(); N_IN]; N_OUT];
    for i in 0..N_IN {
        let mut loc = LocalTraces::default();
        let mut fac = FacetTraces::default();
        let one = T::one();
        match i {
            0..=3 => loc.l[i / 2][i % 2] = one,
            4 | 5 => loc.u[i - 4] = one,
            6 => loc.j = one,
            7 | 8 => loc.b[i - 7] = one,
            9 | 10 => fac.u_hat[i - 9] = one,
            11 => fac.p_hat = one,
            12 | 13 => fac.b_hat[i - 12] = one,
            _ => fac.r_hat = one,
        }
        let f = eval_numerical_flux(&loc, &fac, n, m, d, params);
        let out =
            [f.f1[0][0], f.f1[0][1], f.f1[1][0], f.f1[1][1], f.f2[0], f.f2[1], f.f3, f.f4, f.f5[0], f.f5[1], f.f6];
        for o in 0..N_OUT {
            jac[o][i] = out[o];
        }
    }
    jac
}

/// Mesh, layout and reference element shared by every element computation.
#[derive(Clone, Copy)]
pub struct Discretization<'a, T> {
    pub mesh: &'a Mesh<T>,
    pub layout: &'a DofLayout,
    pub refel: &'a ReferenceElement<T>,
}

/// Full element matrix split into local (`l`) and facet (`f`) blocks.
#[derive(Clone, Debug)]
pub struct LocalMatrices<T> {
    pub cell: usize,
    /// Indices into the full local vector that the blocks refer to.
    pub local_index: Vec<usize>,
    /// Global facet DOFs of the facet blocks.
    pub facet_dofs: Vec<usize>,
    pub a_ll: Matrix<T>,
    pub a_lf: Matrix<T>,
    pub a_fl: Matrix<T>,
    pub a_ff: Matrix<T>,
    pub rhs_l: Vec<T>,
    pub rhs_f: Vec<T>,
    /// Recovery data for eliminated auxiliary unknowns.
    pub aux: Option<AuxRecovery<T>>,
}

/// `X_aux = A_aa⁻¹ (rhs_a − A_ar X_rest − A_af Λ)`.
#[derive(Clone, Debug)]
pub struct AuxRecovery<T> {
    pub index: Vec<usize>,
    pub lu: Lu<T>,
    pub a_ar: Matrix<T>,
    pub a_af: Matrix<T>,
    pub rhs_a: Vec<T>,
}

/// Lists of `(row or column, value)` pairs for one quadrature point.
struct Entries<T>(Vec<(usize, T)>);

impl<T: Real> Entries<T> {
    fn new() -> Self {
        Self(Vec::with_capacity(64))
    }
}

fn add_outer<T: Real>(a: &mut Matrix<T>, rows: &[(usize, T)], cols: &[(usize, T)], s: T) {
    for &(r, vr) in rows {
        let sr = s * vr;
        let row = a.row_mut(r);
        for &(c, vc) in cols {
            row[c] += sr * vc;
        }
    }
}

/// Builds the full element matrix of `cell`.
pub fn assemble_local<T: Real>(
    disc: &Discretization<'_, T>,
    cell: usize,
    params: &PhysParams<T>,
    conv: &dyn ConvectiveFields<T>,
    forcing: &dyn Forcing<T>,
) -> Result<LocalMatrices<T>> {
    let (mesh, layout, refel) = (disc.mesh, disc.layout, disc.refel);
    let ll = layout.local;
    let (nk, nlow) = (ll.nk, ll.nlow);
    let nloc = ll.total();
    let facet_dofs = layout.cell_dofs[cell].clone();
    let nfe = facet_dofs.len();
    let ntot = nloc + nfe;
    let map = mesh.affine_map(cell)?;
    let mut a = Matrix::zeros(ntot, ntot);
    let mut rhs = vec![T::zero(); nloc];

    let o_l = ll.offset(LocalField::L);
    let o_u = ll.offset(LocalField::U);
    let o_p = ll.offset(LocalField::P);
    let o_j = ll.offset(LocalField::J);
    let o_b = ll.offset(LocalField::B);
    let o_r = ll.offset(LocalField::R);
    let (re, rm, kappa) = (params.re, params.rm, params.kappa);

    // volume terms
    let rule = &refel.vol_rule;
    for q in 0..rule.len() {
        let xi = rule.points[q];
        let x = map.map(xi);
        let wq = rule.weights[q] * map.det;
        let phi = refel.phi.row(q);
        let psi = refel.psi.row(q);
        let g: Vec<Vec2<T>> = refel.dphi[q].iter().map(|&d| map.physical_gradient(d)).collect();
        let gl: Vec<Vec2<T>> = refel.dpsi[q].iter().map(|&d| map.physical_gradient(d)).collect();
        let (w, d, gd) = conv.volume(cell, xi, x);
        let (gv, fv) = forcing.gf(x);
        for ia in 0..nk {
            let (pa, ga) = (phi[ia], g[ia]);
            let wga = dot(w, ga);
            for c in 0..2 {
                rhs[o_u + c * nk + ia] += wq * pa * gv[c];
                rhs[o_b + c * nk + ia] += wq * pa * fv[c];
            }
            // v = φ_a e_c: s = v × d, ∇s
            let grad_s = [
                [d[1] * ga[0] + pa * gd[1][0], d[1] * ga[1] + pa * gd[1][1]],
                [-(d[0] * ga[0] + pa * gd[0][0]), -(d[0] * ga[1] + pa * gd[0][1])],
            ];
            // c = φ_a e_c: scalar curl
            let curl_c = [-ga[1], ga[0]];
            for ib in 0..nk {
                let pb = phi[ib];
                let mass = wq * pa * pb;
                for comp in 0..4 {
                    a[(o_l + comp * nk + ia, o_l + comp * nk + ib)] += re * mass;
                }
                a[(o_j + ia, o_j + ib)] += rm / kappa * mass;
                for i in 0..2 {
                    for j in 0..2 {
                        // (u, ∇·G)
                        a[(o_l + (2 * i + j) * nk + ia, o_u + i * nk + ib)] += wq * pb * ga[j];
                        // (L, ∇v)
                        a[(o_u + i * nk + ia, o_l + (2 * i + j) * nk + ib)] += wq * pb * ga[j];
                    }
                    // −(u ⊗ w, ∇v)
                    a[(o_u + i * nk + ia, o_u + i * nk + ib)] -= wq * pb * wga;
                    // κ (b, curl(v × d)) with curl s = (∂y s, −∂x s)
                    a[(o_u + i * nk + ia, o_b + ib)] += kappa * wq * pb * grad_s[i][1];
                    a[(o_u + i * nk + ia, o_b + nk + ib)] -= kappa * wq * pb * grad_s[i][0];
                    // (J, curl c)
                    a[(o_b + i * nk + ia, o_j + ib)] += wq * pb * curl_c[i];
                    // −κ (u, d × curl c)
                    let dc = cross_vs(d, curl_c[i]);
                    a[(o_b + i * nk + ia, o_u + ib)] -= kappa * wq * pb * dc[0];
                    a[(o_b + i * nk + ia, o_u + nk + ib)] -= kappa * wq * pb * dc[1];
                }
                // −(b, curl H), curl H = (∂y H, −∂x H)
                a[(o_j + ia, o_b + ib)] -= wq * pb * ga[1];
                a[(o_j + ia, o_b + nk + ib)] += wq * pb * ga[0];
            }
            for ib in 0..nlow {
                let pb = psi[ib];
                for i in 0..2 {
                    // −(p, ∇·v), −(r, ∇·c)
                    a[(o_u + i * nk + ia, o_p + ib)] -= wq * pb * ga[i];
                    a[(o_b + i * nk + ia, o_r + ib)] -= wq * pb * ga[i];
                }
            }
        }
        for ia in 0..nlow {
            let ga = gl[ia];
            for ib in 0..nk {
                let pb = phi[ib];
                for i in 0..2 {
                    // −(u, ∇q), −(b, ∇s)
                    a[(o_p + ia, o_u + i * nk + ib)] -= wq * pb * ga[i];
                    a[(o_r + ia, o_b + i * nk + ib)] -= wq * pb * ga[i];
                }
            }
        }
    }

    // facet terms
    let frule = &refel.facet_rule;
    let k = layout.k;
    let pos = |dof: usize| -> usize { nloc + layout.cell_position(cell, dof).expect("facet dof belongs to cell") };
    for (e, &(f, orient)) in mesh.cell_facets[cell].iter().enumerate() {
        let oi = orientation_index(orient);
        let n = mesh.outward_normal(cell, e);
        let len = mesh.facet_length(f);
        let boundary = mesh.boundary[f];
        let fpos: Vec<[usize; 4]> = (0..=k)
            .map(|i| {
                [
                    pos(layout.dof(FacetField::U, f, i, 0)),
                    pos(layout.dof(FacetField::U, f, i, 1)),
                    pos(layout.dof(FacetField::B, f, i, 0)),
                    pos(layout.dof(FacetField::B, f, i, 1)),
                ]
            })
            .collect();
        let ppos: Vec<usize> = (0..=k).map(|i| pos(layout.dof(FacetField::P, f, i, 0))).collect();
        let rpos: Vec<usize> = (0..=k).map(|i| pos(layout.dof(FacetField::R, f, i, 0))).collect();
        for (q, t) in frule.abscissae().enumerate() {
            let wq = frule.weights[q] * len;
            let xi = refel.trace_points[e][oi][q];
            let x = mesh.facet_point(f, t);
            let tr = refel.trace[e][oi].row(q);
            let trl = refel.trace_low[e][oi].row(q);
            let fb = refel.facet_phi.row(q);
            let m = dot(conv.w(cell, xi, x), n);
            let d = conv.facet_d(f, t, x);
            let jac = flux_jacobian(n, m, d, params);

            let mut tests: Vec<Entries<T>> = (0..N_OUT).map(|_| Entries::new()).collect();
            for ia in 0..nk {
                for comp in 0..4 {
                    tests[comp].0.push((o_l + comp * nk + ia, tr[ia]));
                }
                for c in 0..2 {
                    tests[4 + c].0.push((o_u + c * nk + ia, tr[ia]));
                    tests[8 + c].0.push((o_b + c * nk + ia, tr[ia]));
                }
                tests[7].0.push((o_j + ia, tr[ia]));
            }
            for ia in 0..nlow {
                tests[6].0.push((o_p + ia, trl[ia]));
                tests[10].0.push((o_r + ia, trl[ia]));
            }
            for i in 0..=k {
                for c in 0..2 {
                    tests[4 + c].0.push((fpos[i][c], fb[i]));
                    tests[8 + c].0.push((fpos[i][2 + c], fb[i]));
                }
                tests[6].0.push((ppos[i], fb[i]));
                tests[10].0.push((rpos[i], fb[i]));
            }

            let mut trials: Vec<Entries<T>> = (0..N_IN).map(|_| Entries::new()).collect();
            for ib in 0..nk {
                for comp in 0..4 {
                    trials[comp].0.push((o_l + comp * nk + ib, tr[ib]));
                }
                for c in 0..2 {
                    trials[4 + c].0.push((o_u + c * nk + ib, tr[ib]));
                    trials[7 + c].0.push((o_b + c * nk + ib, tr[ib]));
                }
                trials[6].0.push((o_j + ib, tr[ib]));
            }
            for i in 0..=k {
                for c in 0..2 {
                    trials[9 + c].0.push((fpos[i][c], fb[i]));
                    trials[12 + c].0.push((fpos[i][2 + c], fb[i]));
                }
                trials[11].0.push((ppos[i], fb[i]));
                trials[14].0.push((rpos[i], fb[i]));
            }

            for o in 0..N_OUT {
                for i in 0..N_IN {
                    let v = jac[o][i];
                    if v != T::zero() {
                        add_outer(&mut a, &tests[o].0, &trials[i].0, wq * v);
                    }
                }
            }

            if boundary {
                // −⟨û·n, ρ⟩ and −⟨b̂·n, γ⟩ close the boundary normal-trace rows
                for i in 0..=k {
                    for j in 0..=k {
                        let s = wq * fb[i] * fb[j];
                        for c in 0..2 {
                            a[(ppos[i], fpos[j][c])] -= s * n[c];
                            a[(rpos[i], fpos[j][2 + c])] -= s * n[c];
                        }
                    }
                }
            }
        }
    }

    let li: Vec<usize> = (0..nloc).collect();
    let fi: Vec<usize> = (nloc..ntot).collect();
    Ok(LocalMatrices {
        cell,
        local_index: li.clone(),
        facet_dofs,
        a_ll: a.select(&li, &li),
        a_lf: a.select(&li, &fi),
        a_fl: a.select(&fi, &li),
        a_ff: a.select(&fi, &fi),
        rhs_l: rhs,
        rhs_f: vec![T::zero(); nfe],
        aux: None,
    })
}

/// Local indices of the auxiliary unknowns `L` and `J`.
pub fn auxiliary_indices(ll: &LocalLayout) -> Vec<usize> {
    let (ol, oj) = (ll.offset(LocalField::L), ll.offset(LocalField::J));
    (ol..ol + ll.size(LocalField::L)).chain(oj..oj + ll.size(LocalField::J)).collect()
}

/// Eliminates `L` and `J` through their own equations, leaving a block over
/// `(u, p, b, r)` and the facet unknowns.
pub fn eliminate_auxiliary<T: Real>(lm: &LocalMatrices<T>, ll: &LocalLayout) -> Result<LocalMatrices<T>> {
    if lm.aux.is_some() {
        return Err(Error::Assembly("auxiliary unknowns already eliminated".into()));
    }
    let aux_full = auxiliary_indices(ll);
    let pos_of = |g: usize| lm.local_index.iter().position(|&x| x == g);
    let aux: Vec<usize> = aux_full.iter().filter_map(|&g| pos_of(g)).collect();
    let rest: Vec<usize> = (0..lm.local_index.len()).filter(|i| !aux.contains(i)).collect();
    let a_aa = lm.a_ll.select(&aux, &aux);
    let lu = Lu::factor(a_aa).map_err(|_| Error::SingularLocal { cell: lm.cell })?;
    let a_ar = lm.a_ll.select(&aux, &rest);
    let a_af = lm.a_lf.select(&aux, &(0..lm.a_lf.cols).collect::<Vec<_>>());
    let a_ra = lm.a_ll.select(&rest, &aux);
    let a_fa = lm.a_fl.select(&(0..lm.a_fl.rows).collect::<Vec<_>>(), &aux);
    let rhs_a: Vec<T> = aux.iter().map(|&i| lm.rhs_l[i]).collect();
    let x_ar = lu.solve_matrix(&a_ar);
    let x_af = lu.solve_matrix(&a_af);
    let x_a = lu.solve(&rhs_a);
    let all_f: Vec<usize> = (0..lm.a_lf.cols).collect();
    let rhs_r: Vec<T> = rest
        .iter()
        .enumerate()
        .map(|(ri, &i)| lm.rhs_l[i] - (0..aux.len()).fold(T::zero(), |s, j| s + a_ra[(ri, j)] * x_a[j]))
        .collect();
    let a_ll = sub_generic(&lm.a_ll.select(&rest, &rest), &a_ra.matmul(&x_ar));
    let a_lf = sub_generic(&lm.a_lf.select(&rest, &all_f), &a_ra.matmul(&x_af));
    let a_fl = sub_generic(&lm.a_fl.select(&(0..lm.a_fl.rows).collect::<Vec<_>>(), &rest), &a_fa.matmul(&x_ar));
    let a_ff = sub_generic(&lm.a_ff, &a_fa.matmul(&x_af));
    let fa_x = a_fa.matvec(&x_a);
    let rhs_f: Vec<T> = lm.rhs_f.iter().zip(&fa_x).map(|(&r, &v)| r - v).collect();
    Ok(LocalMatrices {
        cell: lm.cell,
        local_index: rest.iter().map(|&i| lm.local_index[i]).collect(),
        facet_dofs: lm.facet_dofs.clone(),
        a_ll,
        a_lf,
        a_fl,
        a_ff,
        rhs_l: rhs_r,
        rhs_f,
        aux: Some(AuxRecovery { index: aux.iter().map(|&i| lm.local_index[i]).collect(), lu, a_ar, a_af, rhs_a }),
    })
}

fn sub_generic<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    debug_assert_eq!((a.rows, a.cols), (b.rows, b.cols));
    Matrix { rows: a.rows, cols: a.cols, data: a.data.iter().zip(&b.data).map(|(&x, &y)| x - y).collect() }
}

/// Schur complement of an element over its facet unknowns.
#[derive(Clone, Debug)]
pub struct CondensedBlock<T> {
    pub cell: usize,
    pub facet_dofs: Vec<usize>,
    /// `S_K = A_ff − A_fl A_ll⁻¹ A_lf`.
    pub s: Matrix<T>,
    /// `g_K = rhs_f − A_fl A_ll⁻¹ rhs_l`.
    pub g: Vec<T>,
    pub(crate) lu: Lu<T>,
    pub(crate) a_ll: Matrix<T>,
    pub(crate) a_lf: Matrix<T>,
    pub(crate) rhs_l: Vec<T>,
    pub(crate) local_index: Vec<usize>,
    pub(crate) aux: Option<AuxRecovery<T>>,
    pub(crate) n_local: usize,
}

/// Condenses the local unknowns of `lm` onto its facet unknowns.
pub fn condense<T: Real>(lm: LocalMatrices<T>, n_local: usize) -> Result<CondensedBlock<T>> {
    let lu = Lu::factor(lm.a_ll.clone()).map_err(|_| Error::SingularLocal { cell: lm.cell })?;
    let x_lf = lu.solve_matrix(&lm.a_lf);
    let x_l = lu.solve(&lm.rhs_l);
    let s = sub_generic(&lm.a_ff, &lm.a_fl.matmul(&x_lf));
    let g = lm.rhs_f.iter().zip(lm.a_fl.matvec(&x_l)).map(|(&r, v)| r - v).collect();
    Ok(CondensedBlock {
        cell: lm.cell,
        facet_dofs: lm.facet_dofs,
        s,
        g,
        lu,
        a_ll: lm.a_ll,
        a_lf: lm.a_lf,
        rhs_l: lm.rhs_l,
        local_index: lm.local_index,
        aux: lm.aux,
        n_local,
    })
}

/// LU solve followed by iterative refinement steps. Keeps the residual of
/// the divergence rows at roundoff level relative to those rows alone.
fn refined_solve<T: Real>(lu: &Lu<T>, a: &Matrix<T>, b: &[T]) -> Vec<T> {
    let mut x = lu.solve(b);
    for _ in 0..REFINE_STEPS {
        let ax = a.matvec(&x);
        let r: Vec<T> = b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect();
        for (xi, d) in x.iter_mut().zip(lu.solve(&r)) {
            *xi += d;
        }
    }
    x
}

const REFINE_STEPS: usize = 2;

/// Recovers all local coefficients `(L, u, p, J, b, r)` of the element from
/// its facet values (ordered like `cb.facet_dofs`).
pub fn reconstruct_local<T: Real>(cb: &CondensedBlock<T>, facet_values: &[T]) -> Vec<T> {
    assert_eq!(facet_values.len(), cb.facet_dofs.len());
    let af = cb.a_lf.matvec(facet_values);
    let rhs: Vec<T> = cb.rhs_l.iter().zip(&af).map(|(&r, &a)| r - a).collect();
    let x_r = refined_solve(&cb.lu, &cb.a_ll, &rhs);
    let mut out = vec![T::zero(); cb.n_local];
    for (&i, &v) in cb.local_index.iter().zip(&x_r) {
        out[i] = v;
    }
    if let Some(aux) = &cb.aux {
        let ar = aux.a_ar.matvec(&x_r);
        let af = aux.a_af.matvec(facet_values);
        let rhs: Vec<T> = (0..aux.index.len()).map(|i| aux.rhs_a[i] - ar[i] - af[i]).collect();
        for (&i, v) in aux.index.iter().zip(aux.lu.solve(&rhs)) {
            out[i] = v;
        }
    }
    out
}

/// Assembles, eliminates `L`, `J` and condenses one element.
pub fn condensed_element<T: Real>(
    disc: &Discretization<'_, T>,
    cell: usize,
    params: &PhysParams<T>,
    conv: &dyn ConvectiveFields<T>,
    forcing: &dyn Forcing<T>,
) -> Result<CondensedBlock<T>> {
    let lm = assemble_local(disc, cell, params, conv, forcing)?;
    let ll = disc.layout.local;
    condense(eliminate_auxiliary(&lm, &ll)?, ll.total())
}

/// Residual of the uncondensed local equations `A_ll x + A_lf Λ − rhs`.
pub fn local_residual<T: Real>(lm: &LocalMatrices<T>, local: &[T], facet_values: &[T]) -> Vec<T> {
    let x: Vec<T> = lm.local_index.iter().map(|&i| local[i]).collect();
    let a = lm.a_ll.matvec(&x);
    let b = lm.a_lf.matvec(facet_values);
    (0..a.len()).map(|i| a[i] + b[i] - lm.rhs_l[i]).collect()
}
