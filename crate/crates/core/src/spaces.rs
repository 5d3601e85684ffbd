//! Degree-of-freedom layouts for the element and facet fields.
//!
//! Global facet unknowns are blocked by field, `û | p̂ | b̂ | r̂`. Vector fields
//! are node-major with interleaved components (`2 * node + component`).
//!
//! Scalar facet nodes are numbered as follows. Discontinuous spaces: node `i`
//! of facet `f` is `f (k+1) + i`. Continuous spaces (E-HDG `û`, `b̂`): mesh
//! vertices first, then the `k-1` interior nodes of each facet,
//! `V + f (k-1) + (i-1)`. Node `i = 0` is the facet's first vertex and
//! `i = k` its second.

use std::fmt;

use crate::basis::ReferenceElement;
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::scalar::{Real, Vec2};
use crate::sparse::{solve_refined, CscMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Hdg,
    Ehdg,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Hdg => "hdg",
            Variant::Ehdg => "ehdg",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hdg" => Ok(Variant::Hdg),
            "ehdg" | "e-hdg" => Ok(Variant::Ehdg),
            _ => Err(Error::InvalidArgument(format!("unknown variant `{s}`"))),
        }
    }
}

/// Facet fields in global block order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FacetField {
    U,
    P,
    B,
    R,
}

impl FacetField {
    pub const ALL: [FacetField; 4] = [FacetField::U, FacetField::P, FacetField::B, FacetField::R];

    pub fn components(self) -> usize {
        match self {
            FacetField::U | FacetField::B => 2,
            FacetField::P | FacetField::R => 1,
        }
    }
}

/// Element field blocks in local order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LocalField {
    L,
    U,
    P,
    J,
    B,
    R,
}

impl LocalField {
    pub const ALL: [LocalField; 6] =
        [LocalField::L, LocalField::U, LocalField::P, LocalField::J, LocalField::B, LocalField::R];
}

/// Per-element sizes and offsets. Within a block, component `c` of a
/// vector or tensor field occupies `offset + c * n + i` for basis function `i`
/// (`L_{ij}` uses component `2i + j`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LocalLayout {
    /// `dim P_k`.
    pub nk: usize,
    /// `dim P_{k-1}`.
    pub nlow: usize,
}

impl LocalLayout {
    pub fn new(k: usize) -> Self {
        Self { nk: (k + 1) * (k + 2) / 2, nlow: k * (k + 1) / 2 }
    }

    pub fn size(&self, f: LocalField) -> usize {
        match f {
            LocalField::L => 4 * self.nk,
            LocalField::U | LocalField::B => 2 * self.nk,
            LocalField::J => self.nk,
            LocalField::P | LocalField::R => self.nlow,
        }
    }

    pub fn offset(&self, f: LocalField) -> usize {
        LocalField::ALL.iter().take_while(|&&g| g != f).map(|&g| self.size(g)).sum()
    }

    pub fn total(&self) -> usize {
        LocalField::ALL.iter().map(|&f| self.size(f)).sum()
    }
}

/// Global numbering of facet unknowns plus per-element facet DOF lists.
#[derive(Clone, Debug)]
pub struct DofLayout {
    pub k: usize,
    pub variant: Variant,
    pub local: LocalLayout,
    n_vertices: usize,
    n_facets: usize,
    /// Scalar node count of the vector (`û`, `b̂`) spaces.
    pub n_vec_nodes: usize,
    /// Scalar node count of the `p̂`, `r̂` spaces.
    pub n_scal_nodes: usize,
    facet_vertices: Vec<[usize; 2]>,
    /// Sorted unique global facet DOFs touched by each cell.
    pub cell_dofs: Vec<Vec<usize>>,
    pub boundary_facets: Vec<usize>,
}

/// Per-field and total DOF counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DofCounts {
    pub u_hat: usize,
    pub p_hat: usize,
    pub b_hat: usize,
    pub r_hat: usize,
    pub total: usize,
}

impl DofLayout {
    pub fn offset(&self, f: FacetField) -> usize {
        match f {
            FacetField::U => 0,
            FacetField::P => 2 * self.n_vec_nodes,
            FacetField::B => 2 * self.n_vec_nodes + self.n_scal_nodes,
            FacetField::R => 4 * self.n_vec_nodes + self.n_scal_nodes,
        }
    }

    pub fn size(&self, f: FacetField) -> usize {
        match f {
            FacetField::U | FacetField::B => 2 * self.n_vec_nodes,
            FacetField::P | FacetField::R => self.n_scal_nodes,
        }
    }

    pub fn n_dofs(&self) -> usize {
        4 * self.n_vec_nodes + 2 * self.n_scal_nodes
    }

    pub fn n_facets(&self) -> usize {
        self.n_facets
    }

    /// Scalar node index of node `i` on facet `f` for `field`.
    pub fn node(&self, field: FacetField, f: usize, i: usize) -> usize {
        debug_assert!(i <= self.k);
        let continuous = self.variant == Variant::Ehdg && field.components() == 2;
        if !continuous {
            f * (self.k + 1) + i
        } else if i == 0 {
            self.facet_vertices[f][0]
        } else if i == self.k {
            self.facet_vertices[f][1]
        } else {
            self.n_vertices + f * (self.k - 1) + (i - 1)
        }
    }

    /// Global DOF of component `c` of node `i` on facet `f`.
    pub fn dof(&self, field: FacetField, f: usize, i: usize, c: usize) -> usize {
        debug_assert!(c < field.components());
        self.offset(field) + field.components() * self.node(field, f, i) + c
    }

    /// Every global DOF of `field` supported on facet `f`, node-major.
    pub fn facet_dofs(&self, field: FacetField, f: usize) -> Vec<usize> {
        let nc = field.components();
        (0..=self.k).flat_map(|i| (0..nc).map(move |c| (i, c))).map(|(i, c)| self.dof(field, f, i, c)).collect()
    }

    /// Position of a global DOF in `cell_dofs[cell]`.
    pub fn cell_position(&self, cell: usize, dof: usize) -> Option<usize> {
        self.cell_dofs[cell].binary_search(&dof).ok()
    }

    /// Global DOFs supported on boundary facets for `field`, sorted.
    pub fn boundary_dofs(&self, field: FacetField) -> Vec<usize> {
        let mut v: Vec<usize> = self.boundary_facets.iter().flat_map(|&f| self.facet_dofs(field, f)).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Decodes a global DOF into `(field, scalar node, component)`.
    pub fn field_of(&self, dof: usize) -> (FacetField, usize, usize) {
        for f in FacetField::ALL {
            let (o, s) = (self.offset(f), self.size(f));
            if dof >= o && dof < o + s {
                let nc = f.components();
                return (f, (dof - o) / nc, (dof - o) % nc);
            }
        }
        panic!("dof {dof} out of range");
    }
}

/// Builds the facet numbering of `m` for degree `k` and `variant`.
pub fn build_dof_layout<T: Real>(m: &Mesh<T>, k: usize, variant: Variant) -> Result<DofLayout> {
    if k == 0 {
        return Err(Error::UnsupportedDegree(k));
    }
    let nf = m.n_facets();
    let n_vec_nodes = match variant {
        Variant::Hdg => nf * (k + 1),
        Variant::Ehdg => m.n_vertices() + (k - 1) * nf,
    };
    let mut layout = DofLayout {
        k,
        variant,
        local: LocalLayout::new(k),
        n_vertices: m.n_vertices(),
        n_facets: nf,
        n_vec_nodes,
        n_scal_nodes: nf * (k + 1),
        facet_vertices: m.facets.clone(),
        cell_dofs: Vec::new(),
        boundary_facets: (0..nf).filter(|&f| m.boundary[f]).collect(),
    };
    layout.cell_dofs = (0..m.n_cells())
        .map(|c| {
            let mut v: Vec<usize> = m.cell_facets[c]
                .iter()
                .flat_map(|&(f, _)| {
                    FacetField::ALL.iter().flat_map(|&fld| layout.facet_dofs(fld, f)).collect::<Vec<_>>()
                })
                .collect();
            v.sort_unstable();
            v.dedup();
            v
        })
        .collect();
    Ok(layout)
}

pub fn count_global_dofs(layout: &DofLayout) -> DofCounts {
    DofCounts {
        u_hat: layout.size(FacetField::U),
        p_hat: layout.size(FacetField::P),
        b_hat: layout.size(FacetField::B),
        r_hat: layout.size(FacetField::R),
        total: layout.n_dofs(),
    }
}

/// Closed-form totals: `(HDG, E-HDG)` for a mesh with `v` vertices and `e` facets.
pub fn closed_form_totals(v: usize, e: usize, k: usize) -> (usize, usize) {
    (6 * (k + 1) * e, 4 * (v + (k - 1) * e) + 2 * (k + 1) * e)
}

/// Relative DOF change of E-HDG against HDG in percent.
pub fn reduction_percent(hdg: usize, ehdg: usize) -> f64 {
    (ehdg as f64 - hdg as f64) / hdg as f64 * 100.0
}

/// Strongly imposed facet values: sorted `(dof, value)` pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoundaryValues<T> {
    pub entries: Vec<(usize, T)>,
}

impl<T: Real> BoundaryValues<T> {
    pub fn get(&self, dof: usize) -> Option<T> {
        self.entries.binary_search_by_key(&dof, |e| e.0).ok().map(|p| self.entries[p].1)
    }

    pub fn contains(&self, dof: usize) -> bool {
        self.entries.binary_search_by_key(&dof, |e| e.0).is_ok()
    }
}

/// Projects `u_d` and `b_d` onto the boundary trace spaces. `r̂` boundary DOFs
/// are set to zero.
///
/// HDG uses a per-facet L² projection; E-HDG an L² projection onto the
/// continuous trace space of the boundary skeleton.
pub fn boundary_dof_values<T: Real>(
    layout: &DofLayout,
    m: &Mesh<T>,
    refel: &ReferenceElement<T>,
    u_d: &(dyn Fn(Vec2<T>) -> Vec2<T> + Sync),
    b_d: &(dyn Fn(Vec2<T>) -> Vec2<T> + Sync),
) -> Result<BoundaryValues<T>> {
    let mut entries = Vec::new();
    for (field, g) in [(FacetField::U, u_d), (FacetField::B, b_d)] {
        entries.extend(project_boundary(layout, m, refel, field, g)?);
    }
    entries.extend(layout.boundary_dofs(FacetField::R).into_iter().map(|d| (d, T::zero())));
    entries.sort_by_key(|e| e.0);
    Ok(BoundaryValues { entries })
}

fn project_boundary<T: Real>(
    layout: &DofLayout,
    m: &Mesh<T>,
    refel: &ReferenceElement<T>,
    field: FacetField,
    g: &(dyn Fn(Vec2<T>) -> Vec2<T> + Sync),
) -> Result<Vec<(usize, T)>> {
    let k = layout.k;
    let rule = &refel.facet_rule;
    // boundary nodes in a compact numbering
    let mut nodes: Vec<usize> =
        layout.boundary_facets.iter().flat_map(|&f| (0..=k).map(move |i| layout.node(field, f, i))).collect();
    nodes.sort_unstable();
    nodes.dedup();
    let local = |n: usize| nodes.binary_search(&n).expect("boundary node");
    let nb = nodes.len();
    let mut mass = Vec::new();
    let mut rhs = vec![[T::zero(); 2]; nb];
    for &f in &layout.boundary_facets {
        let len = m.facet_length(f);
        let idx: Vec<usize> = (0..=k).map(|i| local(layout.node(field, f, i))).collect();
        for (q, t) in rule.abscissae().enumerate() {
            let w = rule.weights[q] * len;
            let val = g(m.facet_point(f, t));
            let phi = refel.facet_phi.row(q);
            for a in 0..=k {
                rhs[idx[a]][0] += w * val[0] * phi[a];
                rhs[idx[a]][1] += w * val[1] * phi[a];
                for b in 0..=k {
                    mass.push((idx[a], idx[b], w * phi[a] * phi[b]));
                }
            }
        }
    }
    let mass = CscMatrix::from_triplets(nb, nb, &mass);
    let mut out = Vec::with_capacity(2 * nb);
    for c in 0..2 {
        let b: Vec<T> = rhs.iter().map(|r| r[c]).collect();
        let (x, _) = solve_refined(&mass, &b, "boundary mass matrix")?;
        for (j, &n) in nodes.iter().enumerate() {
            out.push((layout.offset(field) + 2 * n + c, x[j]));
        }
    }
    Ok(out)
}

/// Evaluates a vector facet field on facet `f` at parameter `t`.
pub fn eval_facet_vector<T: Real>(
    layout: &DofLayout,
    refel: &ReferenceElement<T>,
    coeffs: &[T],
    field: FacetField,
    f: usize,
    t: T,
) -> Vec2<T> {
    let phi = refel.facet.eval(t);
    let mut v = [T::zero(); 2];
    for (i, &p) in phi.iter().enumerate() {
        for (c, vc) in v.iter_mut().enumerate() {
            *vc += p * coeffs[layout.dof(field, f, i, c)];
        }
    }
    v
}

/// Evaluates a scalar facet field on facet `f` at parameter `t`.
pub fn eval_facet_scalar<T: Real>(
    layout: &DofLayout,
    refel: &ReferenceElement<T>,
    coeffs: &[T],
    field: FacetField,
    f: usize,
    t: T,
) -> T {
    refel.facet.eval(t).iter().enumerate().fold(T::zero(), |s, (i, &p)| s + p * coeffs[layout.dof(field, f, i, 0)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_reference_element;
    use crate::mesh::gen_unit_square;

    #[test]
    fn two_cell_counts() {
        let m = gen_unit_square::<f64>(1).unwrap();
        let h = build_dof_layout(&m, 1, Variant::Hdg).unwrap();
        let c = count_global_dofs(&h);
        assert_eq!((c.u_hat, c.p_hat, c.b_hat, c.r_hat, c.total), (20, 10, 20, 10, 60));
        let e = build_dof_layout(&m, 1, Variant::Ehdg).unwrap();
        let c = count_global_dofs(&e);
        assert_eq!((c.u_hat, c.p_hat, c.b_hat, c.r_hat, c.total), (8, 10, 8, 10, 36));
    }

    #[test]
    fn local_layout_sizes() {
        let l = LocalLayout::new(2);
        assert_eq!(l.size(LocalField::L), 24);
        assert_eq!(l.size(LocalField::J), 6);
        assert_eq!(l.size(LocalField::P), 3);
        assert_eq!(l.offset(LocalField::U), 24);
        assert_eq!(l.total(), 24 + 12 + 3 + 6 + 12 + 3);
    }

    #[test]
    fn cell_dofs_are_shared_at_vertices() {
        let m = gen_unit_square::<f64>(1).unwrap();
        let e = build_dof_layout(&m, 2, Variant::Ehdg).unwrap();
        // 3 vertices + 3 edge nodes for each vector field; 3 * 3 scalar nodes
        assert_eq!(e.cell_dofs[0].len(), 2 * (2 * 6) + 2 * 9);
        let h = build_dof_layout(&m, 2, Variant::Hdg).unwrap();
        assert_eq!(h.cell_dofs[0].len(), 3 * 3 * 6);
    }

    #[test]
    fn constant_boundary_data_is_reproduced() {
        let m = gen_unit_square::<f64>(2).unwrap();
        let r = build_reference_element::<f64>(2).unwrap();
        for v in [Variant::Hdg, Variant::Ehdg] {
            let l = build_dof_layout(&m, 2, v).unwrap();
            let bv = boundary_dof_values(&l, &m, &r, &|_| [1.0, 0.0], &|_| [0.0, 0.0]).unwrap();
            for (d, val) in &bv.entries {
                let (field, _, c) = l.field_of(*d);
                let expect = if field == FacetField::U && c == 0 { 1.0 } else { 0.0 };
                assert!((val - expect).abs() < 1e-13);
            }
        }
    }
}
