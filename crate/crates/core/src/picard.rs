//! Linear solve driver and Picard iteration for the nonlinear system.

use log::{debug, warn};

use crate::error::{Error, Result};
use crate::global_system::{sample_sup_w, solve_system, FieldState, SolveOptions, SolveStats};
use crate::local_solver::{ConvectiveFields, Discretization, Forcing, PhysParams};
use crate::mesh::AffineMap;
use crate::scalar::{pairwise_sum, Mat2, Real, Vec2};
use crate::spaces::{eval_facet_vector, BoundaryValues, FacetField, LocalField};

/// Solves the linearized system for prescribed `w`, `d`.
///
/// Fails with [`Error::Stabilization`] when `α₁ ≤ ½ sup|w|` at the volume
/// quadrature points.
pub fn solve_linear<T: Real>(
    disc: &Discretization<'_, T>,
    params: &PhysParams<T>,
    conv: &dyn ConvectiveFields<T>,
    forcing: &dyn Forcing<T>,
    bc: &BoundaryValues<T>,
    opts: &SolveOptions,
) -> Result<(FieldState<T>, SolveStats)> {
    params.validate()?;
    params.check_alpha(sample_sup_w(disc.mesh, disc.refel, conv)?)?;
    solve_system(disc, params, conv, forcing, bc, opts)
}

/// `w = u_h`, `d = b_h` in cells and `d = b̂_h` on facets.
pub struct DiscreteFields<'a, T> {
    disc: Discretization<'a, T>,
    state: &'a FieldState<T>,
    maps: Vec<AffineMap<T>>,
}

impl<'a, T: Real> DiscreteFields<'a, T> {
    pub fn new(disc: Discretization<'a, T>, state: &'a FieldState<T>) -> Result<Self> {
        let maps = (0..disc.mesh.n_cells()).map(|c| disc.mesh.affine_map(c)).collect::<Result<_>>()?;
        Ok(Self { disc, state, maps })
    }
}

impl<T: Real> ConvectiveFields<T> for DiscreteFields<'_, T> {
    fn w(&self, cell: usize, xi: Vec2<T>, _: Vec2<T>) -> Vec2<T> {
        let phi = self.disc.refel.cell.eval(xi);
        self.state.vector(self.disc.layout, cell, LocalField::U, &phi)
    }
    fn d(&self, cell: usize, xi: Vec2<T>, _: Vec2<T>) -> Vec2<T> {
        let phi = self.disc.refel.cell.eval(xi);
        self.state.vector(self.disc.layout, cell, LocalField::B, &phi)
    }
    fn grad_d(&self, cell: usize, xi: Vec2<T>, _: Vec2<T>) -> Mat2<T> {
        let map = &self.maps[cell];
        let g: Vec<Vec2<T>> = self.disc.refel.cell.grad(xi).into_iter().map(|d| map.physical_gradient(d)).collect();
        self.state.vector_grad(self.disc.layout, cell, LocalField::B, &g)
    }
    fn facet_d(&self, facet: usize, t: T, _: Vec2<T>) -> Vec2<T> {
        eval_facet_vector(self.disc.layout, self.disc.refel, &self.state.facet, FacetField::B, facet, t)
    }
    fn volume(&self, cell: usize, xi: Vec2<T>, _: Vec2<T>) -> (Vec2<T>, Vec2<T>, Mat2<T>) {
        let (layout, refel) = (self.disc.layout, self.disc.refel);
        let phi = refel.cell.eval(xi);
        let map = &self.maps[cell];
        let g: Vec<Vec2<T>> = refel.cell.grad(xi).into_iter().map(|d| map.physical_gradient(d)).collect();
        (
            self.state.vector(layout, cell, LocalField::U, &phi),
            self.state.vector(layout, cell, LocalField::B, &phi),
            self.state.vector_grad(layout, cell, LocalField::B, &g),
        )
    }
}

/// Picard iteration settings.
#[derive(Clone, Debug)]
pub struct PicardConfig<T> {
    /// Relative-change tolerance.
    pub epsilon: T,
    pub max_iter: usize,
    /// Under-relaxation factor in `(0, 1]`; 1 is plain Picard.
    pub damping: T,
    /// Starting iterate; zero fields when `None`.
    pub initial: Option<FieldState<T>>,
    pub solve: SolveOptions,
}

impl<T: Real> Default for PicardConfig<T> {
    fn default() -> Self {
        Self { epsilon: T::of(1e-10), max_iter: 100, damping: T::one(), initial: None, solve: SolveOptions::default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PicardHistory {
    pub change_u: Vec<f64>,
    pub change_b: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Solver statistics of each linear solve.
    pub stats: Vec<SolveStats>,
}

impl PicardHistory {
    pub fn last_change(&self) -> f64 {
        match (self.change_u.last(), self.change_b.last()) {
            (Some(&u), Some(&b)) => u.max(b),
            _ => f64::INFINITY,
        }
    }

    /// Sum of the phase timings over all iterations.
    pub fn total_stats(&self) -> SolveStats {
        let mut s = self.stats.last().copied().unwrap_or_default();
        s.t_assembly = self.stats.iter().map(|x| x.t_assembly).sum();
        s.t_solve = self.stats.iter().map(|x| x.t_solve).sum();
        s.t_reconstruct = self.stats.iter().map(|x| x.t_reconstruct).sum();
        s
    }
}

/// `(‖a − b‖₀, ‖a‖₀)` for a vector local field.
pub fn l2_change<T: Real>(
    disc: &Discretization<'_, T>,
    a: &FieldState<T>,
    b: &FieldState<T>,
    field: LocalField,
) -> Result<(T, T)> {
    let (mesh, layout, refel) = (disc.mesh, disc.layout, disc.refel);
    let mut diff = Vec::with_capacity(mesh.n_cells());
    let mut norm = Vec::with_capacity(mesh.n_cells());
    for c in 0..mesh.n_cells() {
        let det = mesh.affine_map(c)?.det;
        let (mut sd, mut sn) = (T::zero(), T::zero());
        for q in 0..refel.vol_rule.len() {
            let phi = refel.phi.row(q);
            let va = a.vector(layout, c, field, phi);
            let vb = b.vector(layout, c, field, phi);
            let w = refel.vol_rule.weights[q] * det;
            let (d0, d1) = (va[0] - vb[0], va[1] - vb[1]);
            sd += w * (d0 * d0 + d1 * d1);
            sn += w * (va[0] * va[0] + va[1] * va[1]);
        }
        diff.push(sd);
        norm.push(sn);
    }
    Ok((pairwise_sum(&diff).sqrt(), pairwise_sum(&norm).sqrt()))
}

fn relative(d: f64, n: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else if n == 0.0 {
        f64::INFINITY
    } else {
        d / n
    }
}

/// Picard iteration `(w, d) ← (u_h, b_h)` of the previous iterate.
///
/// On non-convergence returns [`Error::NotConverged`]; use
/// [`solve_nonlinear_with_history`] to keep the last iterate.
pub fn solve_nonlinear<T: Real>(
    disc: &Discretization<'_, T>,
    params: &PhysParams<T>,
    forcing: &dyn Forcing<T>,
    bc: &BoundaryValues<T>,
    cfg: &PicardConfig<T>,
) -> Result<(FieldState<T>, PicardHistory)> {
    let (state, hist) = solve_nonlinear_with_history(disc, params, forcing, bc, cfg)?;
    if hist.converged {
        Ok((state, hist))
    } else {
        Err(Error::NotConverged { iterations: hist.iterations, last_change: hist.last_change() })
    }
}

/// As [`solve_nonlinear`], returning the last iterate even without
/// convergence (`history.converged` tells which).
pub fn solve_nonlinear_with_history<T: Real>(
    disc: &Discretization<'_, T>,
    params: &PhysParams<T>,
    forcing: &dyn Forcing<T>,
    bc: &BoundaryValues<T>,
    cfg: &PicardConfig<T>,
) -> Result<(FieldState<T>, PicardHistory)> {
    params.validate()?;
    if !(cfg.epsilon > T::zero()) {
        return Err(Error::Params("epsilon must be positive".into()));
    }
    if !(cfg.damping > T::zero() && cfg.damping <= T::one()) {
        return Err(Error::Params("damping must lie in (0, 1]".into()));
    }
    let eps = cfg.epsilon.to_f64_lossy();
    let mut prev = match &cfg.initial {
        Some(s) => s.clone(),
        None => FieldState::zeros(disc.layout, disc.mesh.n_cells()),
    };
    let mut hist = PicardHistory::default();
    for it in 1..=cfg.max_iter {
        let conv = DiscreteFields::new(*disc, &prev)?;
        let sup = sample_sup_w(disc.mesh, disc.refel, &conv)?;
        if let Err(e) = params.check_alpha(sup) {
            warn!("picard iteration {it}: {e}");
        }
        let (mut next, stats) = solve_system(disc, params, &conv, forcing, bc, &cfg.solve)?;
        drop(conv);
        if cfg.damping < T::one() {
            let th = cfg.damping;
            let mix = |a: &mut [T], b: &[T]| {
                for (x, &y) in a.iter_mut().zip(b) {
                    *x = th * *x + (T::one() - th) * y;
                }
            };
            mix(&mut next.local, &prev.local);
            mix(&mut next.facet, &prev.facet);
        }
        let (du, nu) = l2_change(disc, &next, &prev, LocalField::U)?;
        let (db, nb) = l2_change(disc, &next, &prev, LocalField::B)?;
        let cu = relative(du.to_f64_lossy(), nu.to_f64_lossy());
        let cb = relative(db.to_f64_lossy(), nb.to_f64_lossy());
        debug!("picard iteration {it}: change u {cu:.3e}, b {cb:.3e}");
        hist.change_u.push(cu);
        hist.change_b.push(cb);
        hist.stats.push(stats);
        hist.iterations = it;
        prev = next;
        if cu.max(cb) < eps {
            hist.converged = true;
            break;
        }
    }
    Ok((prev, hist))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_reference_element;
    use crate::global_system::diagnostics;
    use crate::local_solver::FnForcing;
    use crate::mesh::gen_unit_square;
    use crate::spaces::{boundary_dof_values, build_dof_layout, Variant};

    #[test]
    fn disguised_linear_problem_stops_changing() {
        // constant u, b and p = x + y - 1: all convective and coupling terms vanish
        let mesh = gen_unit_square::<f64>(2).unwrap();
        let layout = build_dof_layout(&mesh, 2, Variant::Ehdg).unwrap();
        let refel = build_reference_element::<f64>(2).unwrap();
        let disc = Discretization { mesh: &mesh, layout: &layout, refel: &refel };
        let (u0, b0) = ([1.0, 0.5], [-0.3, 2.0]);
        let bc = boundary_dof_values(&layout, &mesh, &refel, &|_| u0, &|_| b0).unwrap();
        let forcing = FnForcing { g: |_: Vec2<f64>| [1.0, 1.0], f: |_: Vec2<f64>| [0.0, 0.0] };
        let params = PhysParams::default();
        let cfg = PicardConfig { max_iter: 5, ..Default::default() };
        let (state, hist) = solve_nonlinear(&disc, &params, &forcing, &bc, &cfg).unwrap();
        assert!(hist.converged);
        assert!(hist.change_u[1] < 1e-10 && hist.change_b[1] < 1e-10, "{hist:?}");
        let d = diagnostics(&state, &disc).unwrap();
        assert!(d.div_u < 1e-10 && d.div_b < 1e-10);
        let phi = refel.cell.eval([0.2, 0.3]);
        let u = state.vector(&layout, 3, LocalField::U, &phi);
        assert!((u[0] - u0[0]).abs() < 1e-10 && (u[1] - u0[1]).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_configuration() {
        let mesh = gen_unit_square::<f64>(1).unwrap();
        let layout = build_dof_layout(&mesh, 1, Variant::Hdg).unwrap();
        let refel = build_reference_element::<f64>(1).unwrap();
        let disc = Discretization { mesh: &mesh, layout: &layout, refel: &refel };
        let z = |_: Vec2<f64>| [0.0, 0.0];
        let bc = boundary_dof_values(&layout, &mesh, &refel, &z, &z).unwrap();
        let forcing = FnForcing { g: z, f: z };
        let params = PhysParams::default();
        for cfg in
            [PicardConfig { epsilon: 0.0, ..Default::default() }, PicardConfig { damping: 1.5, ..Default::default() }]
        {
            assert!(matches!(solve_nonlinear(&disc, &params, &forcing, &bc, &cfg), Err(Error::Params(_))));
        }
    }

    #[test]
    fn small_alpha_is_rejected_for_linear_solves() {
        let mesh = gen_unit_square::<f64>(1).unwrap();
        let layout = build_dof_layout(&mesh, 1, Variant::Hdg).unwrap();
        let refel = build_reference_element::<f64>(1).unwrap();
        let disc = Discretization { mesh: &mesh, layout: &layout, refel: &refel };
        let z = |_: Vec2<f64>| [0.0, 0.0];
        let bc = boundary_dof_values(&layout, &mesh, &refel, &z, &z).unwrap();
        let conv = crate::local_solver::AnalyticFields {
            w: Box::new(|_| [4.0, 0.0]),
            d: Box::new(z),
            grad_d: Box::new(|_| [[0.0; 2]; 2]),
        };
        let params = PhysParams { alpha1: 1.0, ..Default::default() };
        let r = solve_linear(&disc, &params, &conv, &FnForcing { g: z, f: z }, &bc, &SolveOptions::default());
        assert!(matches!(r, Err(Error::Stabilization { .. })));
    }
}
