//! Compressed sparse column matrices and a left-looking sparse LU.
//!
//! The factorization follows the Gilbert–Peierls scheme: each column of `L` and
//! `U` comes from a sparse triangular solve whose nonzero pattern is found by a
//! depth-first search. Columns are preordered by minimum degree on the pattern
//! of `A + Aᵀ`, computed on a compressed graph where columns with identical
//! patterns are merged. Pivoting is threshold partial pivoting that prefers the
//! diagonal entry.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Square or rectangular CSC matrix with sorted row indices in each column.
#[derive(Clone, Debug, PartialEq)]
pub struct CscMatrix<T> {
    pub nrows: usize,
    pub ncols: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Real> CscMatrix<T> {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut counts = vec![0usize; ncols + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet out of range");
            counts[c + 1] += 1;
        }
        for c in 0..ncols {
            counts[c + 1] += counts[c];
        }
        let mut next = counts.clone();
        let mut rows = vec![0usize; triplets.len()];
        let mut vals = vec![T::zero(); triplets.len()];
        for &(r, c, v) in triplets {
            rows[next[c]] = r;
            vals[next[c]] = v;
            next[c] += 1;
        }
        let mut col_ptr = Vec::with_capacity(ncols + 1);
        let mut row_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        col_ptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for c in 0..ncols {
            order.clear();
            order.extend(counts[c]..counts[c + 1]);
            order.sort_by_key(|&p| rows[p]);
            for &p in &order {
                if row_idx.len() > *col_ptr.last().unwrap() && *row_idx.last().unwrap() == rows[p] {
                    *values.last_mut().unwrap() += vals[p];
                } else {
                    row_idx.push(rows[p]);
                    values.push(vals[p]);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Self { nrows, ncols, col_ptr, row_idx, values }
    }

    /// Zero-valued matrix with the given sorted per-column row patterns.
    pub fn from_pattern(nrows: usize, pattern: &[Vec<usize>]) -> Self {
        let mut col_ptr = Vec::with_capacity(pattern.len() + 1);
        col_ptr.push(0);
        let mut row_idx = Vec::new();
        for col in pattern {
            debug_assert!(col.windows(2).all(|w| w[0] < w[1]));
            row_idx.extend_from_slice(col);
            col_ptr.push(row_idx.len());
        }
        let nnz = row_idx.len();
        Self { nrows, ncols: pattern.len(), col_ptr, row_idx, values: vec![T::zero(); nnz] }
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Position of entry `(row, col)` in `values`, if it is in the pattern.
    pub fn find(&self, row: usize, col: usize) -> Option<usize> {
        let (a, b) = (self.col_ptr[col], self.col_ptr[col + 1]);
        self.row_idx[a..b].binary_search(&row).ok().map(|p| a + p)
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.find(row, col).map_or(T::zero(), |p| self.values[p])
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![T::zero(); self.nrows];
        for c in 0..self.ncols {
            let xc = x[c];
            if xc == T::zero() {
                continue;
            }
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[p]] += self.values[p] * xc;
            }
        }
        y
    }

    /// Iterates `(row, col, value)` in column order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.ncols).flat_map(move |c| {
            (self.col_ptr[c]..self.col_ptr[c + 1]).map(move |p| (self.row_idx[p], c, self.values[p]))
        })
    }

    /// Coordinate text dump: one `row col value` line per stored entry, 0-based.
    pub fn write_coordinate<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut buf = String::new();
        for (r, c, v) in self.triplets() {
            use std::fmt::Write as _;
            let _ = writeln!(buf, "{r} {c} {:.17e}", v.to_f64_lossy());
        }
        out.write_all(buf.as_bytes())
    }
}

/// Fill-reducing column ordering for a square matrix: minimum degree on the
/// compressed graph of `A + Aᵀ`. Returns `q` with `q[k]` the k-th column.
pub fn min_degree_order<T: Real>(a: &CscMatrix<T>) -> Vec<usize> {
    let n = a.ncols;
    assert_eq!(a.nrows, n);
    // symmetric pattern including the diagonal
    let mut sym: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for c in 0..n {
        for p in a.col_ptr[c]..a.col_ptr[c + 1] {
            let r = a.row_idx[p];
            if r != c {
                sym[c].push(r);
                sym[r].push(c);
            }
        }
    }
    for s in &mut sym {
        s.sort_unstable();
        s.dedup();
    }
    // merge indistinguishable columns
    let mut group_of = vec![0usize; n];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut seen: HashMap<&[usize], usize> = HashMap::new();
    for i in 0..n {
        let g = *seen.entry(sym[i].as_slice()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
        group_of[i] = g;
    }
    let ng = groups.len();
    let weight: Vec<usize> = groups.iter().map(Vec::len).collect();
    let mut adj: Vec<Vec<usize>> = groups
        .iter()
        .enumerate()
        .map(|(g, members)| {
            let mut v: Vec<usize> = sym[members[0]].iter().map(|&j| group_of[j]).filter(|&h| h != g).collect();
            v.sort_unstable();
            v.dedup();
            v
        })
        .collect();
    let degree = |adj: &Vec<Vec<usize>>, g: usize| adj[g].iter().map(|&h| weight[h]).sum::<usize>();
    let mut deg: Vec<usize> = (0..ng).map(|g| degree(&adj, g)).collect();
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> = (0..ng).map(|g| Reverse((deg[g], g))).collect();
    let mut done = vec![false; ng];
    let mut order = Vec::with_capacity(n);
    let mut scratch = Vec::new();
    while let Some(Reverse((d, g))) = heap.pop() {
        if done[g] || d != deg[g] {
            continue;
        }
        done[g] = true;
        order.extend_from_slice(&groups[g]);
        let nbrs = std::mem::take(&mut adj[g]);
        for &h in &nbrs {
            // adj[h] = (adj[h] ∪ nbrs) \ {h, g}
            scratch.clear();
            let (x, y) = (&adj[h], &nbrs);
            let (mut i, mut j) = (0, 0);
            while i < x.len() || j < y.len() {
                let v = match (x.get(i), y.get(j)) {
                    (Some(&a), Some(&b)) if a == b => {
                        i += 1;
                        j += 1;
                        a
                    }
                    (Some(&a), Some(&b)) if a < b => {
                        i += 1;
                        a
                    }
                    (Some(&a), None) => {
                        i += 1;
                        a
                    }
                    (_, Some(&b)) => {
                        j += 1;
                        b
                    }
                    (None, None) => unreachable!(),
                };
                if v != h && v != g && !done[v] {
                    scratch.push(v);
                }
            }
            std::mem::swap(&mut adj[h], &mut scratch);
            deg[h] = degree(&adj, h);
            heap.push(Reverse((deg[h], h)));
        }
    }
    order
}

/// Sparse LU factors `P A Q = L U`.
#[derive(Clone, Debug)]
pub struct SparseLu<T> {
    n: usize,
    /// Row permutation: original row -> pivot step.
    pinv: Vec<usize>,
    /// Column order: step -> original column.
    q: Vec<usize>,
    l: CscMatrix<T>,
    u: CscMatrix<T>,
}

impl<T: Real> SparseLu<T> {
    /// Factors `a` with the given column order and diagonal-preference
    /// threshold `tol` in `(0, 1]`. On a zero pivot returns the failing step.
    pub fn factor_with_order(a: &CscMatrix<T>, q: Vec<usize>, tol: T) -> Result<Self, usize> {
        let n = a.ncols;
        assert_eq!(a.nrows, n);
        let est = 4 * a.nnz() + n;
        let mut lp = Vec::with_capacity(n + 1);
        let mut li: Vec<usize> = Vec::with_capacity(est);
        let mut lx: Vec<T> = Vec::with_capacity(est);
        let mut up = Vec::with_capacity(n + 1);
        let mut ui: Vec<usize> = Vec::with_capacity(est);
        let mut ux: Vec<T> = Vec::with_capacity(est);
        const NONE: usize = usize::MAX;
        let mut pinv = vec![NONE; n];
        let mut x = vec![T::zero(); n];
        let mut xi = vec![0usize; n];
        let mut mark = vec![usize::MAX; n];
        let mut stack: Vec<(usize, usize)> = Vec::new();
        let scale = a.values.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        let tiny = scale * T::epsilon() * T::of(16.0);

        for k in 0..n {
            lp.push(li.len());
            up.push(ui.len());
            let col = q[k];
            // reach: topological order of the nonzero pattern of L \ A(:, col)
            let mut top = n;
            for p in a.col_ptr[col]..a.col_ptr[col + 1] {
                let start = a.row_idx[p];
                if mark[start] == k {
                    continue;
                }
                mark[start] = k;
                stack.push((start, 0));
                while let Some(&(j, pos)) = stack.last() {
                    let jc = pinv[j];
                    // skip the unit diagonal stored first
                    let (beg, end) = if jc == NONE { (0, 0) } else { (lp[jc] + 1, lp[jc + 1]) };
                    let mut p = pos;
                    let mut next = None;
                    while beg + p < end {
                        let i = li[beg + p];
                        p += 1;
                        if mark[i] != k {
                            next = Some(i);
                            break;
                        }
                    }
                    stack.last_mut().unwrap().1 = p;
                    match next {
                        Some(i) => {
                            mark[i] = k;
                            stack.push((i, 0));
                        }
                        None => {
                            stack.pop();
                            top -= 1;
                            xi[top] = j;
                        }
                    }
                }
            }
            for &i in &xi[top..n] {
                x[i] = T::zero();
            }
            for p in a.col_ptr[col]..a.col_ptr[col + 1] {
                x[a.row_idx[p]] = a.values[p];
            }
            for px in top..n {
                let j = xi[px];
                let jc = pinv[j];
                if jc == NONE {
                    continue;
                }
                let xj = x[j];
                if xj == T::zero() {
                    continue;
                }
                for p in lp[jc] + 1..lp[jc + 1] {
                    x[li[p]] -= lx[p] * xj;
                }
            }
            // pivot search
            let mut ipiv = NONE;
            let mut best = T::zero();
            for px in top..n {
                let i = xi[px];
                if pinv[i] == NONE {
                    let t = x[i].abs();
                    if t > best {
                        best = t;
                        ipiv = i;
                    }
                } else {
                    ui.push(pinv[i]);
                    ux.push(x[i]);
                }
            }
            if ipiv == NONE || !(best > tiny) {
                return Err(k);
            }
            if pinv[col] == NONE && mark[col] == k && x[col].abs() >= best * tol {
                ipiv = col;
            }
            let pivot = x[ipiv];
            ui.push(k);
            ux.push(pivot);
            pinv[ipiv] = k;
            li.push(ipiv);
            lx.push(T::one());
            for px in top..n {
                let i = xi[px];
                if pinv[i] == NONE {
                    li.push(i);
                    lx.push(x[i] / pivot);
                }
                x[i] = T::zero();
            }
        }
        lp.push(li.len());
        up.push(ui.len());
        for r in li.iter_mut() {
            *r = pinv[*r];
        }
        Ok(Self {
            n,
            pinv,
            q,
            l: CscMatrix { nrows: n, ncols: n, col_ptr: lp, row_idx: li, values: lx },
            u: CscMatrix { nrows: n, ncols: n, col_ptr: up, row_idx: ui, values: ux },
        })
    }

    /// Factors with a minimum-degree ordering and threshold 0.01.
    pub fn factor(a: &CscMatrix<T>) -> Result<Self, usize> {
        Self::factor_with_order(a, min_degree_order(a), T::of(0.01))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Nonzeros in `L + U`.
    pub fn fill(&self) -> usize {
        self.l.nnz() + self.u.nnz()
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut y = vec![T::zero(); n];
        for i in 0..n {
            y[self.pinv[i]] = b[i];
        }
        for j in 0..n {
            let yj = y[j];
            if yj == T::zero() {
                continue;
            }
            for p in self.l.col_ptr[j] + 1..self.l.col_ptr[j + 1] {
                y[self.l.row_idx[p]] -= self.l.values[p] * yj;
            }
        }
        for j in (0..n).rev() {
            let last = self.u.col_ptr[j + 1] - 1;
            y[j] /= self.u.values[last];
            let yj = y[j];
            if yj == T::zero() {
                continue;
            }
            for p in self.u.col_ptr[j]..last {
                y[self.u.row_idx[p]] -= self.u.values[p] * yj;
            }
        }
        let mut x = vec![T::zero(); n];
        for k in 0..n {
            x[self.q[k]] = y[k];
        }
        x
    }
}

fn norm2<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |s, &x| s + x * x).sqrt()
}

/// Residual tolerance met by [`solve_refined`]: `1e-10` in double precision,
/// looser for types with fewer digits.
pub fn residual_tolerance<T: Real>() -> T {
    T::of(1e-10).max(T::epsilon() * T::of(1e3))
}

/// Row then column max-norm scaling: returns `D_r A D_c`, `D_r`, `D_c`.
/// An empty row or column is reported as a zero pivot at its index.
pub fn equilibrate<T: Real>(a: &CscMatrix<T>) -> std::result::Result<(CscMatrix<T>, Vec<T>, Vec<T>), usize> {
    let mut rmax = vec![T::zero(); a.nrows];
    for (p, &r) in a.row_idx.iter().enumerate() {
        rmax[r] = rmax[r].max(a.values[p].abs());
    }
    if let Some(i) = rmax.iter().position(|&v| v == T::zero()) {
        return Err(i);
    }
    let dr: Vec<T> = rmax.iter().map(|&v| T::one() / v).collect();
    let mut out = a.clone();
    let mut dc = Vec::with_capacity(a.ncols);
    for c in 0..a.ncols {
        let range = a.col_ptr[c]..a.col_ptr[c + 1];
        let m = range.clone().fold(T::zero(), |m, p| m.max((a.values[p] * dr[a.row_idx[p]]).abs()));
        if m == T::zero() {
            return Err(c);
        }
        let s = T::one() / m;
        for p in range {
            out.values[p] = a.values[p] * dr[a.row_idx[p]] * s;
        }
        dc.push(s);
    }
    Ok((out, dr, dc))
}

/// Equilibrates, factors, solves, and applies iterative refinement until
/// `‖Ax − b‖ / ‖b‖ ≤ residual_tolerance`. Returns the solution and the
/// achieved relative residual.
pub fn solve_refined<T: Real>(a: &CscMatrix<T>, b: &[T], hint: &'static str) -> Result<(Vec<T>, T)> {
    let n = a.ncols;
    let bnorm = norm2(b);
    if bnorm == T::zero() {
        return Ok((vec![T::zero(); n], T::zero()));
    }
    let singular = |pivot| Error::SingularSystem { pivot, size: n, hint };
    let (scaled, dr, dc) = equilibrate(a).map_err(singular)?;
    let lu = SparseLu::factor(&scaled).map_err(singular)?;
    let solve = |rhs: &[T]| -> Vec<T> {
        let y: Vec<T> = rhs.iter().zip(&dr).map(|(&v, &s)| v * s).collect();
        lu.solve(&y).into_iter().zip(&dc).map(|(v, &s)| v * s).collect()
    };
    let tol = residual_tolerance::<T>();
    let mut x = solve(b);
    let mut rel = T::infinity();
    for _ in 0..4 {
        let ax = a.matvec(&x);
        let r: Vec<T> = b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect();
        rel = norm2(&r) / bnorm;
        if !rel.is_finite() {
            break;
        }
        if rel <= tol * T::of(1e-2) {
            break;
        }
        let dx = solve(&r);
        for (xi, d) in x.iter_mut().zip(dx) {
            *xi += d;
        }
    }
    let ax = a.matvec(&x);
    let r: Vec<T> = b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect();
    rel = rel.min(norm2(&r) / bnorm);
    if !(rel <= tol) {
        return Err(Error::Residual { residual: rel.to_f64_lossy(), tolerance: tol.to_f64_lossy() });
    }
    Ok((x, rel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{Lu, Matrix};

    fn laplacian_2d(m: usize) -> CscMatrix<f64> {
        let id = |i: usize, j: usize| j * m + i;
        let mut t = Vec::new();
        for j in 0..m {
            for i in 0..m {
                t.push((id(i, j), id(i, j), 4.0));
                if i > 0 {
                    t.push((id(i, j), id(i - 1, j), -1.0));
                }
                if i + 1 < m {
                    t.push((id(i, j), id(i + 1, j), -1.0));
                }
                if j > 0 {
                    t.push((id(i, j), id(i, j - 1), -1.0));
                }
                if j + 1 < m {
                    t.push((id(i, j), id(i, j + 1), -1.0));
                }
            }
        }
        CscMatrix::from_triplets(m * m, m * m, &t)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = CscMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 0, 2.0), (0, 0, 3.0)]);
        assert_eq!(a.get(0, 0), 4.0);
        assert_eq!(a.get(1, 0), 2.0);
        assert_eq!(a.nnz(), 2);
    }

    #[test]
    fn diagonal_system() {
        let a = CscMatrix::from_triplets(3, 3, &[(0, 0, 2.0), (1, 1, 4.0), (2, 2, 8.0)]);
        let (x, _) = solve_refined(&a, &[2.0, 4.0, 8.0], "").unwrap();
        assert_eq!(x, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn ordering_is_a_permutation() {
        let a = laplacian_2d(9);
        let mut q = min_degree_order(&a);
        q.sort_unstable();
        assert_eq!(q, (0..81).collect::<Vec<_>>());
    }

    #[test]
    fn laplacian_matches_dense() {
        let a = laplacian_2d(12);
        let n = a.ncols;
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let (x, rel) = solve_refined(&a, &b, "").unwrap();
        assert!(rel < 1e-13);
        let dense = Matrix::from_fn(n, n, |i, j| a.get(i, j));
        let xd = Lu::factor(dense).unwrap().solve(&b);
        for (p, q) in x.iter().zip(&xd) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_diagonal_needs_pivoting() {
        // saddle-point block [[I, B], [B^T, 0]]
        let t = vec![(0, 0, 1.0), (1, 1, 1.0), (0, 2, 1.0), (1, 2, 2.0), (2, 0, 1.0), (2, 1, 2.0)];
        let a = CscMatrix::from_triplets(3, 3, &t);
        let (x, _) = solve_refined(&a, &[1.0, 2.0, 3.0], "").unwrap();
        let r = a.matvec(&x);
        for (ri, bi) in r.iter().zip([1.0f64, 2.0, 3.0]) {
            assert!((ri - bi).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_reports_pivot() {
        let a = CscMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        assert!(matches!(solve_refined(&a, &[1.0, 1.0], "gauge"), Err(Error::SingularSystem { hint: "gauge", .. })));
    }
}
