//! Triangle meshes with an explicit skeleton.
//!
//! Local edge `j` of a cell `(v0, v1, v2)` is the edge opposite vertex `j`,
//! traversed counterclockwise:
//!
//! - edge 0: `v1 -> v2`
//! - edge 1: `v2 -> v0`
//! - edge 2: `v0 -> v1`
//!
//! Facets store their vertices in increasing index order. The orientation
//! sign in [`Mesh::cell_facets`] is `+1` when the local edge runs in the same
//! direction as the facet, `-1` otherwise.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::scalar::{norm, Mat2, Real, Vec2};

/// Local edge `j` as a pair of local vertex indices.
pub const LOCAL_EDGES: [[usize; 2]; 3] = [[1, 2], [2, 0], [0, 1]];

/// Which diagonal splits each square of a structured grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Diagonal {
    /// The "/" diagonal joining the lower-left and upper-right corners.
    #[default]
    SouthWestNorthEast,
    /// The "\" diagonal joining the upper-left and lower-right corners.
    NorthWestSouthEast,
}

/// Adjacent cells of a facet. `cells[0]` is the lower-indexed cell and owns the
/// canonical normal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FacetCells {
    pub cells: [usize; 2],
    /// Local edge index of the facet inside each adjacent cell.
    pub local: [usize; 2],
    pub count: u8,
}

impl FacetCells {
    pub fn is_boundary(&self) -> bool {
        self.count == 1
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.count as usize).map(move |i| (self.cells[i], self.local[i]))
    }
}

/// Reference-to-physical affine map of a triangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineMap<T> {
    /// Columns are `x1 - x0` and `x2 - x0`.
    pub jacobian: Mat2<T>,
    pub translation: Vec2<T>,
    pub det: T,
    pub inverse: Mat2<T>,
}

impl<T: Real> AffineMap<T> {
    pub fn from_vertices(v: [Vec2<T>; 3]) -> Option<Self> {
        let jacobian = [[v[1][0] - v[0][0], v[2][0] - v[0][0]], [v[1][1] - v[0][1], v[2][1] - v[0][1]]];
        let det = jacobian[0][0] * jacobian[1][1] - jacobian[0][1] * jacobian[1][0];
        if !(det > T::zero()) || !det.is_finite() {
            return None;
        }
        let inverse = [[jacobian[1][1] / det, -jacobian[0][1] / det], [-jacobian[1][0] / det, jacobian[0][0] / det]];
        Some(Self { jacobian, translation: v[0], det, inverse })
    }

    pub fn map(&self, xi: Vec2<T>) -> Vec2<T> {
        let j = &self.jacobian;
        [
            self.translation[0] + j[0][0] * xi[0] + j[0][1] * xi[1],
            self.translation[1] + j[1][0] * xi[0] + j[1][1] * xi[1],
        ]
    }

    pub fn inverse_map(&self, x: Vec2<T>) -> Vec2<T> {
        let d = [x[0] - self.translation[0], x[1] - self.translation[1]];
        let g = &self.inverse;
        [g[0][0] * d[0] + g[0][1] * d[1], g[1][0] * d[0] + g[1][1] * d[1]]
    }

    /// Pulls a reference gradient back to physical coordinates (`J^{-T} g`).
    #[inline]
    pub fn physical_gradient(&self, g: Vec2<T>) -> Vec2<T> {
        let inv = &self.inverse;
        [inv[0][0] * g[0] + inv[1][0] * g[1], inv[0][1] * g[0] + inv[1][1] * g[1]]
    }
}

/// Immutable conforming triangulation.
#[derive(Clone, Debug)]
pub struct Mesh<T> {
    pub vertices: Vec<Vec2<T>>,
    /// Counterclockwise vertex triples.
    pub cells: Vec<[usize; 3]>,
    /// Vertex pairs with `facets[e][0] < facets[e][1]`.
    pub facets: Vec<[usize; 2]>,
    /// Per cell and local edge: `(facet, orientation)`.
    pub cell_facets: Vec<[(usize, i8); 3]>,
    pub facet_cells: Vec<FacetCells>,
    pub boundary: Vec<bool>,
}

impl<T: Real> Mesh<T> {
    /// Builds the skeleton of a triangulation. Clockwise cells are reoriented;
    /// zero-area cells and non-manifold edges are rejected.
    pub fn from_cells(vertices: Vec<Vec2<T>>, mut cells: Vec<[usize; 3]>) -> Result<Self> {
        let nv = vertices.len();
        for (c, cell) in cells.iter_mut().enumerate() {
            if cell.iter().any(|&v| v >= nv) {
                return Err(Error::Geometry { cell: c, reason: "vertex index out of range".into() });
            }
            let p = cell.map(|v| vertices[v]);
            let area2 = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
            if area2 == T::zero() || !area2.is_finite() {
                return Err(Error::Geometry { cell: c, reason: "zero area".into() });
            }
            if area2 < T::zero() {
                cell.swap(1, 2);
            }
        }

        let mut index: HashMap<[usize; 2], usize> = HashMap::with_capacity(cells.len() * 2);
        let mut facets = Vec::new();
        let mut facet_cells: Vec<FacetCells> = Vec::new();
        let mut cell_facets = Vec::with_capacity(cells.len());
        for (c, cell) in cells.iter().enumerate() {
            let mut local = [(0usize, 0i8); 3];
            for (j, le) in LOCAL_EDGES.iter().enumerate() {
                let (a, b) = (cell[le[0]], cell[le[1]]);
                let key = if a < b { [a, b] } else { [b, a] };
                let orient = if a < b { 1 } else { -1 };
                let f = *index.entry(key).or_insert_with(|| {
                    facets.push(key);
                    facet_cells.push(FacetCells { cells: [usize::MAX; 2], local: [usize::MAX; 2], count: 0 });
                    facets.len() - 1
                });
                let fc = &mut facet_cells[f];
                if fc.count == 2 {
                    return Err(Error::Geometry {
                        cell: c,
                        reason: format!("edge {a}-{b} shared by more than two cells"),
                    });
                }
                fc.cells[fc.count as usize] = c;
                fc.local[fc.count as usize] = j;
                fc.count += 1;
                local[j] = (f, orient);
            }
            cell_facets.push(local);
        }
        let boundary = facet_cells.iter().map(FacetCells::is_boundary).collect();
        Ok(Self { vertices, cells, facets, cell_facets, facet_cells, boundary })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_facets(&self) -> usize {
        self.facets.len()
    }

    pub fn n_boundary_facets(&self) -> usize {
        self.boundary.iter().filter(|&&b| b).count()
    }

    pub fn cell_vertices(&self, c: usize) -> [Vec2<T>; 3] {
        self.cells[c].map(|v| self.vertices[v])
    }

    pub fn affine_map(&self, c: usize) -> Result<AffineMap<T>> {
        if c >= self.cells.len() {
            return Err(Error::InvalidArgument(format!("cell {c} out of range")));
        }
        AffineMap::from_vertices(self.cell_vertices(c))
            .ok_or_else(|| Error::Geometry { cell: c, reason: "non-positive jacobian".into() })
    }

    pub fn area(&self, c: usize) -> T {
        let p = self.cell_vertices(c);
        ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1])) * T::of(0.5)
    }

    pub fn total_area(&self) -> T {
        let areas: Vec<T> = (0..self.n_cells()).map(|c| self.area(c)).collect();
        crate::scalar::pairwise_sum(&areas)
    }

    pub fn facet_length(&self, f: usize) -> T {
        let [a, b] = self.facets[f];
        let (p, q) = (self.vertices[a], self.vertices[b]);
        norm([q[0] - p[0], q[1] - p[1]])
    }

    /// Point on facet `f` at parameter `t` in `[0, 1]`, measured from its first vertex.
    pub fn facet_point(&self, f: usize, t: T) -> Vec2<T> {
        let [a, b] = self.facets[f];
        let (p, q) = (self.vertices[a], self.vertices[b]);
        [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
    }

    /// Unit outward normal of cell `c` on its local edge `j`.
    pub fn outward_normal(&self, c: usize, j: usize) -> Vec2<T> {
        let cell = self.cells[c];
        let le = LOCAL_EDGES[j];
        let (p, q) = (self.vertices[cell[le[0]]], self.vertices[cell[le[1]]]);
        let t = [q[0] - p[0], q[1] - p[1]];
        let l = norm(t);
        // counterclockwise traversal: outward normal is the tangent rotated clockwise
        [t[1] / l, -t[0] / l]
    }

    /// Canonical facet normal: outward from the lower-indexed adjacent cell.
    pub fn facet_normal(&self, f: usize) -> Vec2<T> {
        let fc = &self.facet_cells[f];
        self.outward_normal(fc.cells[0], fc.local[0])
    }

    pub fn boundary_vertices(&self) -> Vec<bool> {
        let mut on = vec![false; self.n_vertices()];
        for (f, &[a, b]) in self.facets.iter().enumerate() {
            if self.boundary[f] {
                on[a] = true;
                on[b] = true;
            }
        }
        on
    }

    /// Largest cell diameter.
    pub fn h_max(&self) -> T {
        (0..self.n_facets()).map(|f| self.facet_length(f)).fold(T::zero(), T::max)
    }

    /// Smallest interior angle over all cells, in radians.
    pub fn min_angle(&self) -> T {
        let mut best = T::infinity();
        for c in 0..self.n_cells() {
            let p = self.cell_vertices(c);
            for i in 0..3 {
                let a = p[i];
                let b = p[(i + 1) % 3];
                let d = p[(i + 2) % 3];
                let u = [b[0] - a[0], b[1] - a[1]];
                let v = [d[0] - a[0], d[1] - a[1]];
                let cosang = (u[0] * v[0] + u[1] * v[1]) / (norm(u) * norm(v));
                best = best.min(cosang.max(-T::one()).min(T::one()).acos());
            }
        }
        best
    }

    /// Index of the vertex located exactly at `x`, if any.
    pub fn find_vertex(&self, x: Vec2<T>) -> Option<usize> {
        self.vertices.iter().position(|v| v[0] == x[0] && v[1] == x[1])
    }

    /// Writes the plain-text mesh format.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "dim 2");
        let _ = writeln!(s, "vertices {}", self.n_vertices());
        for v in &self.vertices {
            let _ = writeln!(s, "{:.17e} {:.17e}", v[0].to_f64_lossy(), v[1].to_f64_lossy());
        }
        let _ = writeln!(s, "cells {}", self.n_cells());
        for c in &self.cells {
            let _ = writeln!(s, "{} {} {}", c[0], c[1], c[2]);
        }
        out.write_all(s.as_bytes())?;
        Ok(())
    }

    /// Reads the plain-text mesh format written by [`Mesh::write_text`].
    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true));
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((n, Ok(l))) => Ok((n, l)),
                Some((_, Err(e))) => Err(e.into()),
                None => Err(Error::MeshFormat { line: 0, reason: format!("unexpected end of file, expected {what}") }),
            }
        };
        let bad = |line: usize, reason: &str| Error::MeshFormat { line, reason: reason.to_string() };
        let header = |n: usize, l: &str, key: &str| -> Result<usize> {
            let mut it = l.split_whitespace();
            if it.next() != Some(key) {
                return Err(bad(n, &format!("expected `{key} <count>`")));
            }
            let v = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad(n, "missing count"))?;
            if it.next().is_some() {
                return Err(bad(n, "trailing tokens"));
            }
            Ok(v)
        };
        let (n, l) = next("dim")?;
        if header(n, &l, "dim")? != 2 {
            return Err(bad(n, "only dim 2 is supported"));
        }
        let (n, l) = next("vertices")?;
        let nv = header(n, &l, "vertices")?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (n, l) = next("vertex")?;
            let xs: Vec<f64> = l
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|_| bad(n, "bad coordinate")))
                .collect::<Result<_>>()?;
            if xs.len() != 2 {
                return Err(bad(n, "vertex needs two coordinates"));
            }
            vertices.push([T::of(xs[0]), T::of(xs[1])]);
        }
        let (n, l) = next("cells")?;
        let nc = header(n, &l, "cells")?;
        let mut cells = Vec::with_capacity(nc);
        for _ in 0..nc {
            let (n, l) = next("cell")?;
            let vs: Vec<usize> = l
                .split_whitespace()
                .map(|s| s.parse::<usize>().map_err(|_| bad(n, "bad vertex index")))
                .collect::<Result<_>>()?;
            if vs.len() != 3 {
                return Err(bad(n, "cell needs three vertex indices"));
            }
            cells.push([vs[0], vs[1], vs[2]]);
        }
        Self::from_cells(vertices, cells)
    }
}

/// Structured `nx` by `ny` grid of `bbox`, each square split along `diagonal`.
pub fn gen_structured_rect<T: Real>(nx: usize, ny: usize, bbox: [Vec2<T>; 2], diagonal: Diagonal) -> Result<Mesh<T>> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument("subdivisions must be >= 1".into()));
    }
    let [lo, hi] = bbox;
    if !(hi[0] > lo[0] && hi[1] > lo[1]) {
        return Err(Error::InvalidArgument("degenerate bounding box".into()));
    }
    let coord = |i: usize, n: usize, a: T, b: T| {
        if i == n {
            b
        } else {
            a + (b - a) * T::of_usize(i) / T::of_usize(n)
        }
    };
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([coord(i, nx, lo[0], hi[0]), coord(j, ny, lo[1], hi[1])]);
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut cells = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            push_square(&mut cells, [id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)], diagonal);
        }
    }
    Mesh::from_cells(vertices, cells)
}

fn push_square(cells: &mut Vec<[usize; 3]>, [a, b, c, d]: [usize; 4], diagonal: Diagonal) {
    match diagonal {
        Diagonal::SouthWestNorthEast => {
            cells.push([a, b, c]);
            cells.push([a, c, d]);
        }
        Diagonal::NorthWestSouthEast => {
            cells.push([a, b, d]);
            cells.push([b, c, d]);
        }
    }
}

/// `n` by `n` structured triangulation of an axis-aligned rectangle: `2n²` cells.
pub fn gen_structured_square<T: Real>(n: usize, bbox: [Vec2<T>; 2], diagonal: Diagonal) -> Result<Mesh<T>> {
    gen_structured_rect(n, n, bbox, diagonal)
}

/// Unit square `(0,1)²` with the default diagonal.
pub fn gen_unit_square<T: Real>(n: usize) -> Result<Mesh<T>> {
    gen_structured_square(n, [[T::zero(), T::zero()], [T::one(), T::one()]], Diagonal::default())
}

/// L-shaped domain `(-1,1)² \ [0,1)×(-1,0]`, each of its three unit squares
/// meshed with `n` subdivisions per side: `6n²` cells.
pub fn gen_lshape<T: Real>(n: usize) -> Result<Mesh<T>> {
    gen_lshape_with(n, Diagonal::default())
}

/// [`gen_lshape`] with a chosen square split.
pub fn gen_lshape_with<T: Real>(n: usize, diagonal: Diagonal) -> Result<Mesh<T>> {
    if n == 0 {
        return Err(Error::InvalidArgument("subdivisions must be >= 1".into()));
    }
    let n_i = n as i64;
    let mut index: HashMap<(i64, i64), usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut vid = |i: i64, j: i64, vertices: &mut Vec<Vec2<T>>| -> usize {
        *index.entry((i, j)).or_insert_with(|| {
            let x = T::of(i as f64) / T::of_usize(n);
            let y = T::of(j as f64) / T::of_usize(n);
            vertices.push([x, y]);
            vertices.len() - 1
        })
    };
    let mut cells = Vec::with_capacity(6 * n * n);
    for j in -n_i..n_i {
        for i in -n_i..n_i {
            if i >= 0 && j < 0 {
                continue;
            }
            let corners = [
                vid(i, j, &mut vertices),
                vid(i + 1, j, &mut vertices),
                vid(i + 1, j + 1, &mut vertices),
                vid(i, j + 1, &mut vertices),
            ];
            push_square(&mut cells, corners, diagonal);
        }
    }
    Mesh::from_cells(vertices, cells)
}

/// Hartmann channel `(0, 0.025) × (-1, 1)` at refinement level `l`:
/// `l × 80l` squares, `160 l²` cells.
pub fn gen_strip<T: Real>(l: usize) -> Result<Mesh<T>> {
    if l == 0 {
        return Err(Error::InvalidArgument("refinement level must be >= 1".into()));
    }
    gen_structured_rect(l, 80 * l, [[T::zero(), -T::one()], [T::of(0.025), T::one()]], Diagonal::SouthWestNorthEast)
}

/// Splits every triangle into four through its edge midpoints.
pub fn uniform_refine<T: Real>(m: &Mesh<T>) -> Result<Mesh<T>> {
    let mut vertices = m.vertices.clone();
    let half = T::of(0.5);
    let mid: Vec<usize> = m
        .facets
        .iter()
        .map(|&[a, b]| {
            let (p, q) = (m.vertices[a], m.vertices[b]);
            vertices.push([(p[0] + q[0]) * half, (p[1] + q[1]) * half]);
            vertices.len() - 1
        })
        .collect();
    let mut cells = Vec::with_capacity(4 * m.n_cells());
    for (c, &[v0, v1, v2]) in m.cells.iter().enumerate() {
        let cf = &m.cell_facets[c];
        let (m0, m1, m2) = (mid[cf[0].0], mid[cf[1].0], mid[cf[2].0]);
        cells.push([v0, m2, m1]);
        cells.push([m2, v1, m0]);
        cells.push([m1, m0, v2]);
        cells.push([m0, m1, m2]);
    }
    Mesh::from_cells(vertices, cells)
}
