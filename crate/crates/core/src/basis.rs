//! Nodal Lagrange bases on the reference triangle and interval, with tabulated
//! values at the assembly quadrature points.
//!
//! Reference triangle vertices are `(0,0)`, `(1,0)`, `(0,1)`. Facet traces are
//! tabulated in the facet frame: quadrature parameter `t` runs from the facet's
//! first (lower-indexed) vertex to its second, and the trace tables map it to
//! the matching point on each local edge for both orientations.

use crate::dense::{Lu, Matrix};
use crate::error::{Error, Result};
use crate::mesh::LOCAL_EDGES;
use crate::scalar::{Real, Vec2};

pub use crate::quadrature::{quadrature_rule, Domain, QuadratureRule};

pub const MAX_DEGREE: usize = 6;

/// Reference vertices.
pub const REF_VERTICES: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

/// Lagrange basis of `P_k` on the reference triangle with equispaced nodes.
///
/// Nodes are ordered row by row: `(i/k, j/k)` for `j = 0..=k`, `i = 0..=k-j`.
/// Degree 0 has the single node at the centroid.
#[derive(Clone, Debug)]
pub struct LagrangeTriangle<T> {
    pub degree: usize,
    pub nodes: Vec<Vec2<T>>,
    exps: Vec<(i32, i32)>,
    /// `coeffs[(m, i)]`: coefficient of monomial `m` in basis function `i`.
    coeffs: Matrix<T>,
}

impl<T: Real> LagrangeTriangle<T> {
    pub fn new(degree: usize) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::UnsupportedDegree(degree));
        }
        let nodes64: Vec<[f64; 2]> = if degree == 0 {
            vec![[1.0 / 3.0, 1.0 / 3.0]]
        } else {
            let k = degree as f64;
            (0..=degree).flat_map(|j| (0..=degree - j).map(move |i| [i as f64 / k, j as f64 / k])).collect()
        };
        let exps: Vec<(i32, i32)> = (0..=degree as i32).flat_map(|t| (0..=t).map(move |b| (t - b, b))).collect();
        let n = exps.len();
        let vander = Matrix::from_fn(n, n, |i, m| nodes64[i][0].powi(exps[m].0) * nodes64[i][1].powi(exps[m].1));
        let inv = Lu::factor(vander).map_err(|_| Error::UnsupportedDegree(degree))?.inverse();
        Ok(Self {
            degree,
            nodes: nodes64.iter().map(|p| [T::of(p[0]), T::of(p[1])]).collect(),
            exps,
            coeffs: Matrix { rows: n, cols: n, data: inv.data.iter().map(|&v| T::of(v)).collect() },
        })
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    fn powers(&self, x: T) -> Vec<T> {
        let mut p = Vec::with_capacity(self.degree + 1);
        let mut v = T::one();
        for _ in 0..=self.degree {
            p.push(v);
            v *= x;
        }
        p
    }

    pub fn eval(&self, xi: Vec2<T>) -> Vec<T> {
        let (px, py) = (self.powers(xi[0]), self.powers(xi[1]));
        let mono: Vec<T> = self.exps.iter().map(|&(a, b)| px[a as usize] * py[b as usize]).collect();
        (0..self.dim())
            .map(|i| mono.iter().enumerate().fold(T::zero(), |s, (m, &v)| s + self.coeffs[(m, i)] * v))
            .collect()
    }

    pub fn grad(&self, xi: Vec2<T>) -> Vec<Vec2<T>> {
        let (px, py) = (self.powers(xi[0]), self.powers(xi[1]));
        let dmono: Vec<Vec2<T>> = self
            .exps
            .iter()
            .map(|&(a, b)| {
                let dx = if a > 0 { T::of(a as f64) * px[a as usize - 1] * py[b as usize] } else { T::zero() };
                let dy = if b > 0 { T::of(b as f64) * px[a as usize] * py[b as usize - 1] } else { T::zero() };
                [dx, dy]
            })
            .collect();
        (0..self.dim())
            .map(|i| {
                let mut g = [T::zero(); 2];
                for (m, d) in dmono.iter().enumerate() {
                    let c = self.coeffs[(m, i)];
                    g[0] += c * d[0];
                    g[1] += c * d[1];
                }
                g
            })
            .collect()
    }
}

/// Lagrange basis of `P_k` on `(0, 1)` with nodes `i/k`, so node 0 sits at the
/// facet's first vertex and node `k` at its second.
#[derive(Clone, Debug)]
pub struct LagrangeInterval<T> {
    pub degree: usize,
    pub nodes: Vec<T>,
}

impl<T: Real> LagrangeInterval<T> {
    pub fn new(degree: usize) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::UnsupportedDegree(degree));
        }
        let nodes = if degree == 0 {
            vec![T::of(0.5)]
        } else {
            (0..=degree).map(|i| T::of_usize(i) / T::of_usize(degree)).collect()
        };
        Ok(Self { degree, nodes })
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn eval(&self, t: T) -> Vec<T> {
        let n = self.nodes.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i)
                    .fold(T::one(), |p, j| p * (t - self.nodes[j]) / (self.nodes[i] - self.nodes[j]))
            })
            .collect()
    }
}

/// Point on local edge `edge` of the reference triangle at facet parameter `t`.
/// `orientation` is `+1` when the local edge runs along the facet direction.
pub fn edge_point<T: Real>(edge: usize, orientation: i8, t: T) -> Vec2<T> {
    let [a, b] = LOCAL_EDGES[edge];
    let s = if orientation > 0 { t } else { T::one() - t };
    let (pa, pb) = (REF_VERTICES[a], REF_VERTICES[b]);
    [T::of(pa[0]) + s * T::of(pb[0] - pa[0]), T::of(pa[1]) + s * T::of(pb[1] - pa[1])]
}

#[inline]
pub fn orientation_index(orientation: i8) -> usize {
    usize::from(orientation < 0)
}

/// Everything a cell needs from the reference element at degree `k`.
#[derive(Clone, Debug)]
pub struct ReferenceElement<T> {
    pub k: usize,
    /// `P_k` basis for L, u, J, b.
    pub cell: LagrangeTriangle<T>,
    /// `P_{k-1}` basis for p and r.
    pub low: LagrangeTriangle<T>,
    pub facet: LagrangeInterval<T>,
    /// Volume rule of order `2k+3`.
    pub vol_rule: QuadratureRule<T>,
    /// Facet rule of order `2k+3`.
    pub facet_rule: QuadratureRule<T>,
    /// `phi[(q, i)]`: `P_k` basis values at volume points.
    pub phi: Matrix<T>,
    /// Reference gradients, `dphi[q][i]`.
    pub dphi: Vec<Vec<Vec2<T>>>,
    pub psi: Matrix<T>,
    pub dpsi: Vec<Vec<Vec2<T>>>,
    /// `facet_phi[(q, i)]`: facet basis at facet points.
    pub facet_phi: Matrix<T>,
    /// `trace[edge][orientation_index][(q, i)]`: cell basis along each local edge.
    pub trace: [[Matrix<T>; 2]; 3],
    pub trace_low: [[Matrix<T>; 2]; 3],
    /// Reference coordinates of the trace points.
    pub trace_points: [[Vec<Vec2<T>>; 2]; 3],
}

/// Builds the degree-`k` reference element, `1 ≤ k ≤ 6`.
pub fn build_reference_element<T: Real>(k: usize) -> Result<ReferenceElement<T>> {
    if k == 0 || k > MAX_DEGREE {
        return Err(Error::UnsupportedDegree(k));
    }
    let cell = LagrangeTriangle::new(k)?;
    let low = LagrangeTriangle::new(k - 1)?;
    let facet = LagrangeInterval::new(k)?;
    let vol_rule = quadrature_rule(Domain::Triangle, 2 * k + 3)?;
    let facet_rule = quadrature_rule(Domain::Interval, 2 * k + 3)?;

    let tab = |b: &LagrangeTriangle<T>, pts: &[Vec2<T>]| {
        let mut m = Matrix::zeros(pts.len(), b.dim());
        for (q, &p) in pts.iter().enumerate() {
            m.row_mut(q).copy_from_slice(&b.eval(p));
        }
        m
    };
    let phi = tab(&cell, &vol_rule.points);
    let psi = tab(&low, &vol_rule.points);
    let dphi = vol_rule.points.iter().map(|&p| cell.grad(p)).collect();
    let dpsi = vol_rule.points.iter().map(|&p| low.grad(p)).collect();
    let mut facet_phi = Matrix::zeros(facet_rule.len(), facet.dim());
    for (q, t) in facet_rule.abscissae().enumerate() {
        facet_phi.row_mut(q).copy_from_slice(&facet.eval(t));
    }
    let trace_points: [[Vec<Vec2<T>>; 2]; 3] = std::array::from_fn(|e| {
        std::array::from_fn(|o| {
            let orient = if o == 0 { 1 } else { -1 };
            facet_rule.abscissae().map(|t| edge_point(e, orient, t)).collect()
        })
    });
    let trace = std::array::from_fn(|e| std::array::from_fn(|o| tab(&cell, &trace_points[e][o])));
    let trace_low = std::array::from_fn(|e| std::array::from_fn(|o| tab(&low, &trace_points[e][o])));
    Ok(ReferenceElement {
        k,
        cell,
        low,
        facet,
        vol_rule,
        facet_rule,
        phi,
        dphi,
        psi,
        dpsi,
        facet_phi,
        trace,
        trace_low,
        trace_points,
    })
}
