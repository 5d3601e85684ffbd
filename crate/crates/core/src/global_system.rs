//! Global trace system: assembly of condensed element blocks, boundary
//! elimination, gauge, sparse solve and local reconstruction. Also provides
//! the uncondensed monolithic solver used as a testing oracle.

use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;

use crate::basis::{orientation_index, ReferenceElement};
use crate::error::{Error, Result};
use crate::local_solver::{
    assemble_local, condensed_element, reconstruct_local, CondensedBlock, ConvectiveFields, Discretization, Forcing,
    PhysParams,
};
use crate::mesh::Mesh;
use crate::scalar::{dot, pairwise_sum, Mat2, Real, Vec2};
use crate::spaces::{BoundaryValues, DofLayout, FacetField, LocalField};
use crate::sparse::{solve_refined, CscMatrix};

/// Treatment of the boundary `r̂` unknowns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RhatBc {
    /// `r̂ = 0` eliminated on boundary facets.
    #[default]
    StrongZero,
    /// Boundary rows `⟨(b − b̂)·n, γ⟩ = 0`; one boundary `r̂` is pinned.
    NormalConstraint,
}

impl RhatBc {
    pub fn name(self) -> &'static str {
        match self {
            RhatBc::StrongZero => "strong-zero",
            RhatBc::NormalConstraint => "normal-constraint",
        }
    }
}

impl fmt::Display for RhatBc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for RhatBc {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strong-zero" => Ok(RhatBc::StrongZero),
            "normal-constraint" | "magnetic-normal-bc" => Ok(RhatBc::NormalConstraint),
            _ => Err(Error::InvalidArgument(format!("unknown r-hat boundary mode `{s}`"))),
        }
    }
}

/// Local and facet coefficients of a discrete solution.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldState<T> {
    pub k: usize,
    /// Local unknowns per cell.
    pub n_local: usize,
    /// `n_cells * n_local` coefficients, cell-major.
    pub local: Vec<T>,
    /// Global facet coefficients, including eliminated boundary values.
    pub facet: Vec<T>,
}

impl<T: Real> FieldState<T> {
    pub fn zeros(layout: &DofLayout, n_cells: usize) -> Self {
        let n_local = layout.local.total();
        Self {
            k: layout.k,
            n_local,
            local: vec![T::zero(); n_cells * n_local],
            facet: vec![T::zero(); layout.n_dofs()],
        }
    }

    pub fn cell(&self, c: usize) -> &[T] {
        &self.local[c * self.n_local..(c + 1) * self.n_local]
    }

    /// Coefficients of one local field on cell `c`.
    pub fn block(&self, layout: &DofLayout, c: usize, f: LocalField) -> &[T] {
        let o = layout.local.offset(f);
        &self.cell(c)[o..o + layout.local.size(f)]
    }

    /// Vector field (`U` or `B`) from basis values `phi`.
    pub fn vector(&self, layout: &DofLayout, c: usize, f: LocalField, phi: &[T]) -> Vec2<T> {
        let nk = layout.local.nk;
        let co = self.block(layout, c, f);
        std::array::from_fn(|i| phi.iter().zip(&co[i * nk..(i + 1) * nk]).fold(T::zero(), |s, (&p, &a)| s + p * a))
    }

    /// `[i][j] = ∂_j v_i` of a vector field from physical basis gradients.
    pub fn vector_grad(&self, layout: &DofLayout, c: usize, f: LocalField, grads: &[Vec2<T>]) -> Mat2<T> {
        let nk = layout.local.nk;
        let co = self.block(layout, c, f);
        std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                grads.iter().zip(&co[i * nk..(i + 1) * nk]).fold(T::zero(), |s, (g, &a)| s + g[j] * a)
            })
        })
    }

    /// Scalar field (`P`, `R` with `P_{k-1}` values, `J` with `P_k` values).
    pub fn scalar(&self, layout: &DofLayout, c: usize, f: LocalField, basis: &[T]) -> T {
        self.block(layout, c, f).iter().zip(basis).fold(T::zero(), |s, (&a, &p)| s + a * p)
    }

    /// Tensor field `L`.
    pub fn tensor(&self, layout: &DofLayout, c: usize, phi: &[T]) -> Mat2<T> {
        let nk = layout.local.nk;
        let co = self.block(layout, c, LocalField::L);
        std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                let comp = 2 * i + j;
                phi.iter().zip(&co[comp * nk..(comp + 1) * nk]).fold(T::zero(), |s, (&p, &a)| s + p * a)
            })
        })
    }
}

/// Boundary elimination and gauge bookkeeping for the facet unknowns.
#[derive(Clone, Debug)]
pub struct Constraints<T> {
    /// Global facet DOF -> row of the reduced system.
    pub free_index: Vec<Option<usize>>,
    /// Global facet DOF -> imposed value.
    pub fixed: Vec<Option<T>>,
    pub n_free: usize,
    pub pinned_p: usize,
    pub pinned_r: Option<usize>,
    pub mode: RhatBc,
}

/// Eliminates boundary `û`, `b̂` (and `r̂` in strong mode) with their projected
/// values and pins the first boundary `p̂` DOF to zero.
pub fn build_constraints<T: Real>(layout: &DofLayout, bc: &BoundaryValues<T>, mode: RhatBc) -> Result<Constraints<T>> {
    let n = layout.n_dofs();
    let mut fixed: Vec<Option<T>> = vec![None; n];
    for field in [FacetField::U, FacetField::B] {
        for d in layout.boundary_dofs(field) {
            let v = bc.get(d).ok_or_else(|| Error::Assembly(format!("missing boundary value for dof {d}")))?;
            fixed[d] = Some(v);
        }
    }
    let rb = layout.boundary_dofs(FacetField::R);
    let pinned_r = match mode {
        RhatBc::StrongZero => {
            for &d in &rb {
                fixed[d] = Some(T::zero());
            }
            None
        }
        RhatBc::NormalConstraint => {
            let d = *rb.first().ok_or_else(|| Error::Assembly("mesh has no boundary".into()))?;
            fixed[d] = Some(T::zero());
            Some(d)
        }
    };
    let pinned_p =
        *layout.boundary_dofs(FacetField::P).first().ok_or_else(|| Error::Assembly("mesh has no boundary".into()))?;
    fixed[pinned_p] = Some(T::zero());
    let mut free_index = vec![None; n];
    let mut n_free = 0;
    for d in 0..n {
        if fixed[d].is_none() {
            free_index[d] = Some(n_free);
            n_free += 1;
        }
    }
    Ok(Constraints { free_index, fixed, n_free, pinned_p, pinned_r, mode })
}

/// Condensed global system over the free facet DOFs.
#[derive(Clone, Debug)]
pub struct SparseSystem<T> {
    pub matrix: CscMatrix<T>,
    pub rhs: Vec<T>,
    pub constraints: Constraints<T>,
}

/// Condenses every element in parallel; results are in cell order.
pub fn condense_all<T: Real>(
    disc: &Discretization<'_, T>,
    params: &PhysParams<T>,
    conv: &dyn ConvectiveFields<T>,
    forcing: &dyn Forcing<T>,
) -> Result<Vec<CondensedBlock<T>>> {
    (0..disc.mesh.n_cells()).into_par_iter().map(|c| condensed_element(disc, c, params, conv, forcing)).collect()
}

/// Sorted, deduplicated column patterns from per-element DOF lists.
fn symbolic_pattern<'a>(n: usize, elements: impl Iterator<Item = &'a [usize]>) -> Vec<Vec<usize>> {
    let mut pattern: Vec<Vec<usize>> = vec![Vec::new(); n];
    for dofs in elements {
        for &c in dofs {
            pattern[c].extend_from_slice(dofs);
        }
    }
    for col in &mut pattern {
        col.sort_unstable();
        col.dedup();
    }
    pattern
}

/// Two-pass assembly of the condensed blocks into the reduced trace system.
pub fn assemble_global<T: Real>(
    layout: &DofLayout,
    blocks: &[CondensedBlock<T>],
    constraints: Constraints<T>,
) -> Result<SparseSystem<T>> {
    for (c, b) in blocks.iter().enumerate() {
        if b.cell != c || b.facet_dofs != layout.cell_dofs[c] {
            return Err(Error::Assembly(format!("block {c} does not match the layout")));
        }
    }
    let free_lists: Vec<Vec<usize>> =
        blocks.iter().map(|b| b.facet_dofs.iter().filter_map(|&d| constraints.free_index[d]).collect()).collect();
    let pattern = symbolic_pattern(constraints.n_free, free_lists.iter().map(Vec::as_slice));
    let mut matrix = CscMatrix::from_pattern(constraints.n_free, &pattern);
    let mut rhs = vec![T::zero(); constraints.n_free];
    for b in blocks {
        let n = b.facet_dofs.len();
        for i in 0..n {
            let Some(r) = constraints.free_index[b.facet_dofs[i]] else {
                continue;
            };
            rhs[r] += b.g[i];
            for j in 0..n {
                let v = b.s[(i, j)];
                let dj = b.facet_dofs[j];
                match constraints.free_index[dj] {
                    Some(cj) => {
                        let p = matrix.find(r, cj).expect("entry in symbolic pattern");
                        matrix.values[p] += v;
                    }
                    None => rhs[r] -= v * constraints.fixed[dj].unwrap_or(T::zero()),
                }
            }
        }
    }
    Ok(SparseSystem { matrix, rhs, constraints })
}

const SINGULAR_HINT: &str = "check alpha1 > sup|w|/2, beta1, beta2 > 0 and the pressure gauge";

/// Solves the reduced system and returns the full facet vector together with
/// the relative residual.
pub fn solve_condensed<T: Real>(sys: &SparseSystem<T>) -> Result<(Vec<T>, T)> {
    let (x, res) = solve_refined(&sys.matrix, &sys.rhs, SINGULAR_HINT)?;
    let c = &sys.constraints;
    let facet = (0..c.free_index.len())
        .map(|d| match c.free_index[d] {
            Some(i) => x[i],
            None => c.fixed[d].unwrap_or(T::zero()),
        })
        .collect();
    Ok((facet, res))
}

/// Recovers all local unknowns from the facet solution, in parallel.
pub fn reconstruct_all<T: Real>(blocks: &[CondensedBlock<T>], facet: &[T]) -> Vec<T> {
    let parts: Vec<Vec<T>> = blocks
        .par_iter()
        .map(|b| {
            let vals: Vec<T> = b.facet_dofs.iter().map(|&d| facet[d]).collect();
            reconstruct_local(b, &vals)
        })
        .collect();
    parts.concat()
}

/// Integral of `p_h` and the domain area, by the volume rule.
pub fn pressure_mean<T: Real>(state: &FieldState<T>, disc: &Discretization<'_, T>) -> Result<T> {
    let (mesh, layout, refel) = (disc.mesh, disc.layout, disc.refel);
    let mut ints = Vec::with_capacity(mesh.n_cells());
    let mut areas = Vec::with_capacity(mesh.n_cells());
    for c in 0..mesh.n_cells() {
        let det = mesh.affine_map(c)?.det;
        let mut s = T::zero();
        for q in 0..refel.vol_rule.len() {
            s += refel.vol_rule.weights[q] * state.scalar(layout, c, LocalField::P, refel.psi.row(q));
        }
        ints.push(s * det);
        areas.push(mesh.area(c));
    }
    Ok(pairwise_sum(&ints) / pairwise_sum(&areas))
}

/// Shifts `p_h` and `p̂_h` by the mean of `p_h`.
pub fn post_normalize_pressure<T: Real>(
    mut state: FieldState<T>,
    disc: &Discretization<'_, T>,
) -> Result<FieldState<T>> {
    let mean = pressure_mean(&state, disc)?;
    let layout = disc.layout;
    let (o, s) = (layout.local.offset(LocalField::P), layout.local.size(LocalField::P));
    for c in 0..disc.mesh.n_cells() {
        let base = c * state.n_local + o;
        for v in &mut state.local[base..base + s] {
            *v -= mean;
        }
    }
    let (o, s) = (layout.offset(FacetField::P), layout.size(FacetField::P));
    for v in &mut state.facet[o..o + s] {
        *v -= mean;
    }
    Ok(state)
}

/// Options of a linear solve.
#[derive(Clone, Debug, Default)]
pub struct SolveOptions {
    pub rhat_bc: RhatBc,
    /// Writes the reduced matrix in coordinate format when set.
    pub dump_matrix: Option<PathBuf>,
}

/// Phase timings (seconds) and solver statistics.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub t_assembly: f64,
    pub t_solve: f64,
    pub t_reconstruct: f64,
    pub n_free: usize,
    pub nnz: usize,
    pub residual: f64,
}

/// Condense, assemble, solve, reconstruct and normalize the pressure.
pub fn solve_system<T: Real>(
    disc: &Discretization<'_, T>,
    params: &PhysParams<T>,
    conv: &dyn ConvectiveFields<T>,
    forcing: &dyn Forcing<T>,
    bc: &BoundaryValues<T>,
    opts: &SolveOptions,
) -> Result<(FieldState<T>, SolveStats)> {
    params.validate()?;
    let t0 = Instant::now();
    let blocks = condense_all(disc, params, conv, forcing)?;
    let cons = build_constraints(disc.layout, bc, opts.rhat_bc)?;
    let sys = assemble_global(disc.layout, &blocks, cons)?;
    if let Some(path) = &opts.dump_matrix {
        let file = std::fs::File::create(path)?;
        sys.matrix.write_coordinate(std::io::BufWriter::new(file))?;
    }
    let t1 = Instant::now();
    let (facet, residual) = solve_condensed(&sys)?;
    let t2 = Instant::now();
    let local = reconstruct_all(&blocks, &facet);
    let state = FieldState { k: disc.layout.k, n_local: disc.layout.local.total(), local, facet };
    let state = post_normalize_pressure(state, disc)?;
    let t3 = Instant::now();
    Ok((
        state,
        SolveStats {
            t_assembly: (t1 - t0).as_secs_f64(),
            t_solve: (t2 - t1).as_secs_f64(),
            t_reconstruct: (t3 - t2).as_secs_f64(),
            n_free: sys.constraints.n_free,
            nnz: sys.matrix.nnz(),
            residual: residual.to_f64_lossy(),
        },
    ))
}

/// Uncondensed oracle: all local and free facet unknowns in one sparse system.
pub fn solve_monolithic<T: Real>(
    disc: &Discretization<'_, T>,
    params: &PhysParams<T>,
    conv: &dyn ConvectiveFields<T>,
    forcing: &dyn Forcing<T>,
    bc: &BoundaryValues<T>,
    mode: RhatBc,
) -> Result<FieldState<T>> {
    params.validate()?;
    let (mesh, layout) = (disc.mesh, disc.layout);
    let nloc = layout.local.total();
    let n_cells = mesh.n_cells();
    let cons = build_constraints(layout, bc, mode)?;
    let n_local_all = n_cells * nloc;
    let n = n_local_all + cons.n_free;
    let mut trip = Vec::new();
    let mut rhs = vec![T::zero(); n];
    let elems: Vec<_> =
        (0..n_cells).into_par_iter().map(|c| assemble_local(disc, c, params, conv, forcing)).collect::<Result<_>>()?;
    for (c, lm) in elems.iter().enumerate() {
        let base = c * nloc;
        let col_of = |d: usize| cons.free_index[d].map(|i| n_local_all + i);
        for i in 0..nloc {
            let r = base + lm.local_index[i];
            rhs[r] += lm.rhs_l[i];
            for j in 0..nloc {
                let v = lm.a_ll[(i, j)];
                if v != T::zero() {
                    trip.push((r, base + lm.local_index[j], v));
                }
            }
            for (j, &d) in lm.facet_dofs.iter().enumerate() {
                let v = lm.a_lf[(i, j)];
                match col_of(d) {
                    Some(cj) => trip.push((r, cj, v)),
                    None => rhs[r] -= v * cons.fixed[d].unwrap_or(T::zero()),
                }
            }
        }
        for (i, &di) in lm.facet_dofs.iter().enumerate() {
            let Some(r) = col_of(di) else { continue };
            rhs[r] += lm.rhs_f[i];
            for j in 0..nloc {
                let v = lm.a_fl[(i, j)];
                if v != T::zero() {
                    trip.push((r, base + lm.local_index[j], v));
                }
            }
            for (j, &dj) in lm.facet_dofs.iter().enumerate() {
                let v = lm.a_ff[(i, j)];
                match col_of(dj) {
                    Some(cj) => trip.push((r, cj, v)),
                    None => rhs[r] -= v * cons.fixed[dj].unwrap_or(T::zero()),
                }
            }
        }
    }
    let a = CscMatrix::from_triplets(n, n, &trip);
    let (x, _) = solve_refined(&a, &rhs, SINGULAR_HINT)?;
    let facet = (0..layout.n_dofs())
        .map(|d| match cons.free_index[d] {
            Some(i) => x[n_local_all + i],
            None => cons.fixed[d].unwrap_or(T::zero()),
        })
        .collect();
    let state = FieldState { k: layout.k, n_local: nloc, local: x[..n_local_all].to_vec(), facet };
    post_normalize_pressure(state, disc)
}

/// Divergence and normal-continuity diagnostics of `u_h` and `b_h`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Diagnostics {
    /// Max `|∇·u_h|` over all volume quadrature points.
    pub div_u: f64,
    pub div_b: f64,
    /// Max `|u_h|`, `|b_h|` at the same points.
    pub max_u: f64,
    pub max_b: f64,
    /// Max normal jumps across interior facets.
    pub jump_u: f64,
    pub jump_b: f64,
    /// Max `|(u_h − û_h)·n|`, `|(b_h − b̂_h)·n|` on boundary facets.
    pub bnd_u: f64,
    pub bnd_b: f64,
}

pub fn diagnostics<T: Real>(state: &FieldState<T>, disc: &Discretization<'_, T>) -> Result<Diagnostics> {
    let (mesh, layout, refel) = (disc.mesh, disc.layout, disc.refel);
    let per_cell: Vec<[f64; 4]> = (0..mesh.n_cells())
        .into_par_iter()
        .map(|c| -> Result<[f64; 4]> {
            let map = mesh.affine_map(c)?;
            let mut out = [0.0f64; 4];
            for q in 0..refel.vol_rule.len() {
                let g: Vec<Vec2<T>> = refel.dphi[q].iter().map(|&d| map.physical_gradient(d)).collect();
                let phi = refel.phi.row(q);
                let gu = state.vector_grad(layout, c, LocalField::U, &g);
                let gb = state.vector_grad(layout, c, LocalField::B, &g);
                let u = state.vector(layout, c, LocalField::U, phi);
                let b = state.vector(layout, c, LocalField::B, phi);
                out[0] = out[0].max((gu[0][0] + gu[1][1]).abs().to_f64_lossy());
                out[1] = out[1].max((gb[0][0] + gb[1][1]).abs().to_f64_lossy());
                out[2] = out[2].max(crate::scalar::norm(u).to_f64_lossy());
                out[3] = out[3].max(crate::scalar::norm(b).to_f64_lossy());
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut d = Diagnostics::default();
    for v in &per_cell {
        d.div_u = d.div_u.max(v[0]);
        d.div_b = d.div_b.max(v[1]);
        d.max_u = d.max_u.max(v[2]);
        d.max_b = d.max_b.max(v[3]);
    }
    for f in 0..mesh.n_facets() {
        let fc = mesh.facet_cells[f];
        for q in 0..refel.facet_rule.len() {
            let t = refel.facet_rule.points[q][0];
            let mut un = [T::zero(); 2];
            for (side, (c, e)) in fc.iter().enumerate() {
                let orient = mesh.cell_facets[c][e].1;
                let tr = refel.trace[e][orientation_index(orient)].row(q);
                let n = mesh.outward_normal(c, e);
                un[0] += dot(state.vector(layout, c, LocalField::U, tr), n);
                un[1] += dot(state.vector(layout, c, LocalField::B, tr), n);
                if fc.is_boundary() && side == 0 {
                    let uh = crate::spaces::eval_facet_vector(layout, refel, &state.facet, FacetField::U, f, t);
                    let bh = crate::spaces::eval_facet_vector(layout, refel, &state.facet, FacetField::B, f, t);
                    un[0] -= dot(uh, n);
                    un[1] -= dot(bh, n);
                }
            }
            let (a, b) = (un[0].abs().to_f64_lossy(), un[1].abs().to_f64_lossy());
            if fc.is_boundary() {
                d.bnd_u = d.bnd_u.max(a);
                d.bnd_b = d.bnd_b.max(b);
            } else {
                d.jump_u = d.jump_u.max(a);
                d.jump_b = d.jump_b.max(b);
            }
        }
    }
    Ok(d)
}

/// Sampled `sup |w|` at the volume quadrature points.
pub fn sample_sup_w<T: Real>(mesh: &Mesh<T>, refel: &ReferenceElement<T>, conv: &dyn ConvectiveFields<T>) -> Result<T> {
    let mut sup = T::zero();
    for c in 0..mesh.n_cells() {
        let map = mesh.affine_map(c)?;
        for &xi in &refel.vol_rule.points {
            sup = sup.max(crate::scalar::norm(conv.w(c, xi, map.map(xi))));
        }
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_reference_element;
    use crate::local_solver::{ZeroFields, ZeroForcing};
    use crate::mesh::gen_unit_square;
    use crate::spaces::{boundary_dof_values, build_dof_layout, Variant};

    fn zero_bc(disc: &Discretization<'_, f64>) -> BoundaryValues<f64> {
        let z = |_: Vec2<f64>| [0.0, 0.0];
        boundary_dof_values(disc.layout, disc.mesh, disc.refel, &z, &z).unwrap()
    }

    #[test]
    fn two_cell_reduced_dimension() {
        let mesh = gen_unit_square::<f64>(1).unwrap();
        let layout = build_dof_layout(&mesh, 1, Variant::Ehdg).unwrap();
        let refel = build_reference_element::<f64>(1).unwrap();
        let disc = Discretization { mesh: &mesh, layout: &layout, refel: &refel };
        let bc = zero_bc(&disc);
        let strong = build_constraints(&layout, &bc, RhatBc::StrongZero).unwrap();
        // 36 - 8 (û) - 8 (b̂) - 8 (r̂ on 4 boundary edges) - 1 (p̂)
        assert_eq!(strong.n_free, 11);
        assert_eq!(strong.fixed[strong.pinned_p], Some(0.0));
        let normal = build_constraints(&layout, &bc, RhatBc::NormalConstraint).unwrap();
        assert_eq!(normal.n_free, 11 + 7);
    }

    #[test]
    fn homogeneous_problem_has_zero_solution() {
        let mesh = gen_unit_square::<f64>(2).unwrap();
        for variant in [Variant::Hdg, Variant::Ehdg] {
            let layout = build_dof_layout(&mesh, 2, variant).unwrap();
            let refel = build_reference_element::<f64>(2).unwrap();
            let disc = Discretization { mesh: &mesh, layout: &layout, refel: &refel };
            let bc = zero_bc(&disc);
            let params = PhysParams::default();
            let (s, stats) =
                solve_system(&disc, &params, &ZeroFields, &ZeroForcing, &bc, &SolveOptions::default()).unwrap();
            assert!(s.local.iter().chain(&s.facet).all(|&v| v == 0.0));
            assert_eq!(stats.residual, 0.0);
            let m = solve_monolithic(&disc, &params, &ZeroFields, &ZeroForcing, &bc, RhatBc::StrongZero).unwrap();
            assert!(m.local.iter().chain(&m.facet).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn facet_rows_couple_to_neighbouring_facets_only() {
        let mesh = gen_unit_square::<f64>(3).unwrap();
        let layout = build_dof_layout(&mesh, 1, Variant::Hdg).unwrap();
        let refel = build_reference_element::<f64>(1).unwrap();
        let disc = Discretization { mesh: &mesh, layout: &layout, refel: &refel };
        let bc = zero_bc(&disc);
        let blocks = condense_all(&disc, &PhysParams::default(), &ZeroFields, &ZeroForcing).unwrap();
        let cons = build_constraints(&layout, &bc, RhatBc::StrongZero).unwrap();
        let sys = assemble_global(&layout, &blocks, cons).unwrap();
        let mut owner = vec![usize::MAX; sys.constraints.n_free];
        for d in 0..layout.n_dofs() {
            if let Some(i) = sys.constraints.free_index[d] {
                let (_, node, _) = layout.field_of(d);
                owner[i] = node / (layout.k + 1);
            }
        }
        for col in 0..sys.constraints.n_free {
            let mut facets: Vec<usize> =
                (sys.matrix.col_ptr[col]..sys.matrix.col_ptr[col + 1]).map(|p| owner[sys.matrix.row_idx[p]]).collect();
            facets.sort_unstable();
            facets.dedup();
            assert!(facets.len() <= 5, "column {col} touches {} facets", facets.len());
        }
    }

    #[test]
    fn pressure_shift_removes_the_mean() {
        let mesh = gen_unit_square::<f64>(1).unwrap();
        let layout = build_dof_layout(&mesh, 2, Variant::Ehdg).unwrap();
        let refel = build_reference_element::<f64>(2).unwrap();
        let disc = Discretization { mesh: &mesh, layout: &layout, refel: &refel };
        let ll = layout.local;
        let mut s = FieldState::zeros(&layout, 2);
        for (c, v) in [(0, 1.0), (1, 3.0)] {
            let o = c * s.n_local + ll.offset(LocalField::P);
            s.local[o..o + ll.size(LocalField::P)].fill(v);
        }
        let ou = ll.offset(LocalField::U);
        s.local[ou] = 0.25;
        assert!((pressure_mean(&s, &disc).unwrap() - 2.0).abs() < 1e-13);
        let s = post_normalize_pressure(s, &disc).unwrap();
        assert!(pressure_mean(&s, &disc).unwrap().abs() < 1e-13);
        assert_eq!(s.local[ou], 0.25);
        let p0 = &s.block(&layout, 0, LocalField::P);
        assert!(p0.iter().all(|&v| (v + 1.0).abs() < 1e-13));
    }
}
