//! Projected nonlinear Gauss-Seidel/SOR for the discrete obstacle problem,
//! the SOLA loop, the comparison problems and the radial fundamental solution.
//!
//! The discrete energy is
//! `h^n sum_j c_j (|Du_j|^2 + eps^2)^{p/2} / p - h^n sum_i f_i u_i`
//! with `Du_j` the forward differences at node `j`. Every cell update is the
//! exact minimiser of this energy along one coordinate, optionally
//! over-relaxed when that does not raise the energy, then projected onto
//! `u >= psi`.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{
    dist2, gradient, mollify_measure, same_domain, GridDomain, MeasureData, NodeKind, ScalarField, VectorField,
};
use crate::scalar::Real;
use crate::structural::CoefficientField;

/// Default gradient regularisation.
pub const EPS_REG: f64 = 1e-8;
/// Obstacle value used for "no obstacle".
pub const INACTIVE_OBSTACLE: f64 = -1e6;

/// Problem `P(A, mu, psi)` on a grid domain.
#[derive(Clone)]
pub struct ObstacleProblem<T> {
    pub domain: Arc<GridDomain<T>>,
    pub coeff: CoefficientField<T>,
    pub p: T,
    pub mu: MeasureData<T>,
    pub psi: ScalarField<T>,
    pub eps_reg: T,
    /// Dirichlet data on non-interior nodes; zero when `None`.
    pub boundary: Option<ScalarField<T>>,
}

impl<T: Real> std::fmt::Debug for ObstacleProblem<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObstacleProblem")
            .field("shape", &self.domain.shape())
            .field("coeff", &self.coeff)
            .field("p", &self.p)
            .field("atoms", &self.mu.atoms.len())
            .field("eps_reg", &self.eps_reg)
            .finish()
    }
}

impl<T: Real> ObstacleProblem<T> {
    pub fn new(
        domain: Arc<GridDomain<T>>,
        coeff: CoefficientField<T>,
        p: T,
        mu: MeasureData<T>,
        psi: ScalarField<T>,
    ) -> Result<Self> {
        same_domain(&domain, psi.domain())?;
        if let CoefficientField::ScalarModulated(c) = &coeff {
            same_domain(&domain, c.domain())?;
        }
        if let CoefficientField::Custom(_) = &coeff {
            return Err(Error::UnsupportedCoefficient("the solver needs a scalar coefficient".into()));
        }
        if !(p > T::one() && p < T::lit(2.0)) && p != T::lit(2.0) {
            return Err(Error::Range(format!("p = {p} must lie in (1, 2]")));
        }
        if let Some(d) = &mu.density {
            same_domain(&domain, d.domain())?;
        }
        let prob = ObstacleProblem { domain, coeff, p, mu, psi, eps_reg: T::lit(EPS_REG), boundary: None };
        prob.check_obstacle()?;
        Ok(prob)
    }

    /// No obstacle, unit coefficient.
    pub fn unconstrained(domain: Arc<GridDomain<T>>, p: T, mu: MeasureData<T>) -> Result<Self> {
        let psi = ScalarField::constant(&domain, T::lit(INACTIVE_OBSTACLE));
        Self::new(domain, CoefficientField::PureP, p, mu, psi)
    }

    pub fn with_eps_reg(mut self, eps: T) -> Result<Self> {
        if !(eps >= T::zero()) {
            return Err(Error::Range(format!("eps_reg = {eps} must be nonnegative")));
        }
        self.eps_reg = eps;
        Ok(self)
    }

    pub fn with_boundary(mut self, g: ScalarField<T>) -> Result<Self> {
        same_domain(&self.domain, g.domain())?;
        self.boundary = Some(g);
        self.check_obstacle()?;
        Ok(self)
    }

    pub fn with_density(&self, density: ScalarField<T>) -> Self {
        let mut out = self.clone();
        out.mu = MeasureData::from_density(density);
        out
    }

    fn check_obstacle(&self) -> Result<()> {
        for lin in 0..self.domain.len() {
            if self.domain.node_kind(lin) != NodeKind::Boundary {
                continue;
            }
            let g = self.boundary.as_ref().map_or(T::zero(), |b| b.values()[lin]);
            let v = self.psi.values()[lin];
            if !v.is_finite() || v > g {
                return Err(Error::InvalidObstacle(format!(
                    "psi = {v} exceeds the boundary value {g} at node {:?}",
                    self.domain.unravel(lin)
                )));
            }
        }
        Ok(())
    }

    /// Right-hand side density; errors if `mu` still has atoms.
    pub fn rhs(&self) -> Result<ScalarField<T>> {
        if !self.mu.atoms.is_empty() {
            return Err(Error::InvalidMeasure("atoms must be mollified before solving".into()));
        }
        Ok(self.mu.density.clone().unwrap_or_else(|| ScalarField::zeros(&self.domain)))
    }

    fn boundary_field(&self) -> ScalarField<T> {
        self.boundary.clone().unwrap_or_else(|| ScalarField::zeros(&self.domain))
    }
}

/// Set of interior nodes a sub-problem solves for.
#[derive(Debug, Clone, PartialEq)]
pub struct Region<T> {
    pub active: Vec<bool>,
    pub center: Option<Vec<T>>,
    pub radius: Option<T>,
}

impl<T: Real> Region<T> {
    pub fn whole(domain: &GridDomain<T>) -> Self {
        Region { active: domain.interior_mask(), center: None, radius: None }
    }

    /// `B_rho(center) cap Omega`, interior nodes only.
    pub fn ball(domain: &GridDomain<T>, center: &[T], rho: T) -> Result<Self> {
        if !(rho > T::zero()) {
            return Err(Error::Range(format!("ball radius {rho} must be positive")));
        }
        let active = domain.ball_mask(center, rho);
        if !active.iter().any(|&a| a) {
            return Err(Error::EmptyBall {
                center: center.iter().map(|c| c.to_f64_lossy()).collect(),
                radius: rho.to_f64_lossy(),
            });
        }
        Ok(Region { active, center: Some(center.to_vec()), radius: Some(rho) })
    }

    pub fn count(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    pub fn measure(&self, domain: &GridDomain<T>) -> T {
        domain.cell_volume() * T::from_usize_lossy(self.count())
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions<T> {
    /// Target for the scaled complementarity residual.
    pub tol: T,
    pub max_iter: usize,
    /// Over-relaxation factor; `None` picks one from the grid size.
    pub omega: Option<T>,
    /// Sweeps between residual checks.
    pub check_every: usize,
    pub initial: Option<ScalarField<T>>,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        SolverOptions { tol: T::lit(1e-8), max_iter: 100_000, omega: None, check_every: 10, initial: None }
    }
}

impl<T: Real> SolverOptions<T> {
    pub fn with_tol(tol: T, max_iter: usize) -> Self {
        SolverOptions { tol, max_iter, ..Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport<T> {
    pub u: ScalarField<T>,
    pub iterations: usize,
    /// Max over active nodes of the scaled complementarity residual.
    pub residual: T,
    /// Max over active non-contact nodes of `h^n |R_i|`, unscaled.
    pub pde_residual: T,
    pub scale: T,
    pub energy_trace: Vec<T>,
    pub contact_mask: Vec<bool>,
}

impl<T: Real> SolveReport<T> {
    pub fn contact_count(&self) -> usize {
        self.contact_mask.iter().filter(|c| **c).count()
    }
}

/// Nodal operator data shared by all sweeps.
struct Stencil<T> {
    n: usize,
    h2: T,
    p: T,
    eps2: T,
    /// forward neighbour per node and axis, `usize::MAX` when the face is absent
    fwd: Vec<usize>,
    /// backward neighbour per node and axis, `usize::MAX` when absent
    bwd: Vec<usize>,
    coef: Vec<T>,
}

impl<T: Real> Stencil<T> {
    fn new(dom: &GridDomain<T>, coeff: &CoefficientField<T>, p: T, eps: T) -> Result<Self> {
        let n = dom.dim();
        let mut fwd = vec![usize::MAX; dom.len() * n];
        let mut bwd = vec![usize::MAX; dom.len() * n];
        let mut coef = vec![T::zero(); dom.len()];
        for lin in 0..dom.len() {
            if dom.node_kind(lin) == NodeKind::Exterior {
                continue;
            }
            coef[lin] = coeff
                .at_node(lin)
                .ok_or_else(|| Error::UnsupportedCoefficient("the solver needs a scalar coefficient".into()))?;
            for d in 0..n {
                if let Some(nb) = dom.neighbor(lin, d, true) {
                    if dom.node_kind(nb) != NodeKind::Exterior {
                        fwd[lin * n + d] = nb;
                        bwd[nb * n + d] = lin;
                    }
                }
            }
        }
        Ok(Stencil { n, h2: dom.h() * dom.h(), p, eps2: eps * eps, fwd, bwd, coef })
    }

    /// `|Du_j|^2 + eps^2` at node `j`.
    #[inline]
    fn g2(&self, u: &[T], j: usize) -> T {
        let mut s = T::zero();
        for a in 0..self.n {
            let f = self.fwd[j * self.n + a];
            if f != usize::MAX {
                let d = u[f] - u[j];
                s += d * d;
            }
        }
        s / self.h2 + self.eps2
    }

    fn node_energy(&self, u: &[T], j: usize) -> T {
        self.coef[j] * self.g2(u, j).powf(self.p / T::lit(2.0)) / self.p
    }

    /// `A(Du)` at node `j`.
    fn flux(&self, u: &[T], j: usize, out: &mut [T]) {
        let w = self.coef[j] * self.g2(u, j).powf((self.p - T::lit(2.0)) / T::lit(2.0));
        let inv_h = T::one() / self.h2.sqrt();
        for a in 0..self.n {
            let f = self.fwd[j * self.n + a];
            out[a] = if f != usize::MAX { w * (u[f] - u[j]) * inv_h } else { T::zero() };
        }
    }
}

/// Frozen neighbourhood of one active node.
struct Cell<T> {
    n: usize,
    ci: T,
    fi: T,
    /// forward neighbour values
    uf: Vec<T>,
    /// backward neighbour values, coefficients and squared off-axis parts
    ub: Vec<T>,
    cb: Vec<T>,
    sb: Vec<T>,
    h2: T,
    eps2: T,
    p: T,
}

impl<T: Real> Cell<T> {
    fn new(n: usize, st: &Stencil<T>) -> Self {
        Cell {
            n,
            ci: T::zero(),
            fi: T::zero(),
            uf: vec![T::zero(); n],
            ub: vec![T::zero(); n],
            cb: vec![T::zero(); n],
            sb: vec![T::zero(); n],
            h2: st.h2,
            eps2: st.eps2,
            p: st.p,
        }
    }

    fn load(&mut self, st: &Stencil<T>, u: &[T], f: &[T], i: usize) {
        let n = self.n;
        self.ci = st.coef[i];
        self.fi = f[i];
        for d in 0..n {
            self.uf[d] = u[st.fwd[i * n + d]];
            let b = st.bwd[i * n + d];
            self.ub[d] = u[b];
            self.cb[d] = st.coef[b];
            let mut s = T::zero();
            for a in 0..n {
                if a == d {
                    continue;
                }
                let fb = st.fwd[b * n + a];
                if fb != usize::MAX {
                    let diff = u[fb] - u[b];
                    s += diff * diff;
                }
            }
            self.sb[d] = s / self.h2;
        }
    }

    /// Residual `(-div A(Du))_i - f_i` as a function of `t = u_i`, and its derivative.
    #[inline]
    fn eval(&self, t: T) -> (T, T) {
        let two = T::lit(2.0);
        let e = (self.p - two) / two;
        let pm2 = self.p - two;
        let mut ss = T::zero();
        let mut s1 = T::zero();
        for &v in &self.uf {
            let d = v - t;
            ss += d * d;
            s1 += d;
        }
        let gi = ss / self.h2 + self.eps2;
        let wi = gi.powf(e);
        let nn = T::from_usize_lossy(self.n);
        let mut g = -self.ci * wi * s1 / self.h2;
        let mut dg = self.ci * wi * (nn + pm2 * s1 * s1 / (self.h2 * gi)) / self.h2;
        for d in 0..self.n {
            let del = t - self.ub[d];
            let gb = self.sb[d] + del * del / self.h2 + self.eps2;
            let wb = gb.powf(e);
            g += self.cb[d] * wb * del / self.h2;
            dg += self.cb[d] * wb * (T::one() + pm2 * del * del / (self.h2 * gb)) / self.h2;
        }
        (g - self.fi, dg)
    }

    /// Local energy in units of `h^n`.
    fn energy(&self, t: T) -> T {
        let half_p = self.p / T::lit(2.0);
        let mut ss = T::zero();
        for &v in &self.uf {
            ss += (v - t) * (v - t);
        }
        let mut e = self.ci * (ss / self.h2 + self.eps2).powf(half_p);
        for d in 0..self.n {
            let del = t - self.ub[d];
            e += self.cb[d] * (self.sb[d] + del * del / self.h2 + self.eps2).powf(half_p);
        }
        e / self.p - self.fi * t
    }

    /// Root of the strictly increasing residual by safeguarded Newton-bisection.
    fn solve(&self, t0: T) -> T {
        let (g0, d0) = self.eval(t0);
        if g0 == T::zero() {
            return t0;
        }
        let tiny = T::epsilon() * (T::one() + t0.abs());
        let dir = if g0 > T::zero() { -T::one() } else { T::one() };
        let mut step = (g0 / d0).abs().max(tiny);
        let (mut a, mut ga) = (t0, g0);
        let (mut b, mut gb);
        let mut guard = 0;
        loop {
            b = t0 + dir * step;
            gb = self.eval(b).0;
            if gb == T::zero() {
                return b;
            }
            if gb.signum() != ga.signum() {
                break;
            }
            a = b;
            ga = gb;
            step *= T::lit(2.0);
            guard += 1;
            if guard > 200 || !b.is_finite() {
                return a;
            }
        }
        let (mut lo, mut hi) = if ga < T::zero() { (a, b) } else { (b, a) };
        let mut t = if ga.abs() < gb.abs() { a } else { b };
        for _ in 0..100 {
            let (g, dg) = self.eval(t);
            if g == T::zero() {
                return t;
            }
            if g < T::zero() {
                lo = t;
            } else {
                hi = t;
            }
            let mut next = t - g / dg;
            if !(next > lo && next < hi) {
                next = lo + (hi - lo) / T::lit(2.0);
            }
            let moved = (next - t).abs();
            t = next;
            if moved <= T::lit(2.0) * T::epsilon() * t.abs() || hi - lo <= T::lit(2.0) * T::epsilon() * hi.abs().max(lo.abs())
            {
                break;
            }
        }
        t
    }
}

/// Core relaxation: solves on the `active` nodes with every other node held at
/// its value in `fixed`, optionally above `psi`.
#[allow(clippy::too_many_arguments)]
pub fn relax<T: Real>(
    coeff: &CoefficientField<T>,
    p: T,
    eps_reg: T,
    active: &[bool],
    fixed: &ScalarField<T>,
    rhs: &ScalarField<T>,
    psi: Option<&ScalarField<T>>,
    opts: &SolverOptions<T>,
) -> Result<SolveReport<T>> {
    let dom = Arc::clone(fixed.domain());
    same_domain(&dom, rhs.domain())?;
    if let Some(ps) = psi {
        same_domain(&dom, ps.domain())?;
    }
    if active.len() != dom.len() || active.iter().enumerate().any(|(i, &a)| a && !dom.is_interior(i)) {
        return Err(Error::DomainMismatch("active set must consist of interior nodes".into()));
    }
    if !(opts.tol > T::zero()) {
        return Err(Error::Range(format!("tol = {} must be positive", opts.tol)));
    }
    let st = Stencil::new(&dom, coeff, p, eps_reg)?;
    let order: Vec<usize> = (0..dom.len()).filter(|&i| active[i]).collect();
    let mut u = fixed.values().to_vec();
    if let Some(init) = &opts.initial {
        same_domain(&dom, init.domain())?;
        for &i in &order {
            u[i] = init.values()[i];
        }
    }
    if let Some(ps) = psi {
        for &i in &order {
            u[i] = u[i].max(ps.values()[i]);
        }
    }
    let f = rhs.values();
    let omega = opts.omega.unwrap_or_else(|| {
        let m = dom.shape().iter().copied().max().unwrap_or(3);
        T::lit(2.0) / (T::one() + (T::PI() / T::from_usize_lossy(m - 1)).sin())
    });
    let cell_vol = dom.cell_volume();
    let face = cell_vol / dom.h();
    let mut cell = Cell::new(dom.dim(), &st);
    let mass: T = order.iter().map(|&i| f[i].abs()).sum::<T>() * cell_vol;
    let total_energy = |u: &[T]| -> T {
        let mut e = T::zero();
        for j in 0..dom.len() {
            if dom.node_kind(j) != NodeKind::Exterior {
                e += st.node_energy(u, j);
            }
        }
        for &i in &order {
            e -= f[i] * u[i];
        }
        e * cell_vol
    };
    let mut trace = vec![total_energy(&u)];
    let mut flux = vec![T::zero(); dom.dim()];
    // scaled complementarity residual, raw off-contact residual, scale
    let measure = |u: &[T], cell: &mut Cell<T>, flux: &mut [T]| -> (T, T, T) {
        let mut fmax = T::zero();
        for j in 0..dom.len() {
            if dom.node_kind(j) != NodeKind::Exterior {
                st.flux(u, j, flux);
                let m = flux.iter().map(|&v| v * v).sum::<T>().sqrt();
                fmax = fmax.max(m);
            }
        }
        let scale = mass.max(fmax * face);
        let mut worst = T::zero();
        let mut pde = T::zero();
        for &i in &order {
            cell.load(&st, u, f, i);
            let r = cell.eval(u[i]).0 * cell_vol;
            let contact = psi.is_some_and(|ps| u[i] <= ps.values()[i]);
            let v = if contact { (-r).max(T::zero()) } else { r.abs() };
            if !contact {
                pde = pde.max(r.abs());
            }
            worst = worst.max(v);
        }
        let scaled = if scale > T::zero() { worst / scale } else { T::zero() };
        (scaled, pde, scale)
    };
    let mut iterations = 0;
    let (mut res, mut pde, mut scale) = measure(&u, &mut cell, &mut flux);
    while res > opts.tol {
        if iterations >= opts.max_iter {
            return Err(Error::NonConvergence {
                max_iter: opts.max_iter,
                residual: res.to_f64_lossy(),
                target: opts.tol.to_f64_lossy(),
            });
        }
        let sweeps = opts.check_every.max(1).min(opts.max_iter - iterations);
        for _ in 0..sweeps {
            for &i in &order {
                cell.load(&st, &u, f, i);
                let old = u[i];
                let star = cell.solve(old);
                let mut t = star;
                if omega != T::one() {
                    let over = old + omega * (star - old);
                    if cell.energy(over) <= cell.energy(old) {
                        t = over;
                    }
                }
                if let Some(ps) = psi {
                    t = t.max(ps.values()[i]);
                }
                u[i] = t;
            }
        }
        iterations += sweeps;
        trace.push(total_energy(&u));
        (res, pde, scale) = measure(&u, &mut cell, &mut flux);
    }
    let contact_mask: Vec<bool> = (0..dom.len())
        .map(|i| active[i] && psi.is_some_and(|ps| u[i] <= ps.values()[i]))
        .collect();
    Ok(SolveReport {
        u: ScalarField::from_values(&dom, u)?,
        iterations,
        residual: res,
        pde_residual: pde,
        scale,
        energy_trace: trace,
        contact_mask,
    })
}

/// Solves the discrete variational inequality on the whole domain.
pub fn solve_obstacle<T: Real>(prob: &ObstacleProblem<T>, tol: T, max_iter: usize) -> Result<SolveReport<T>> {
    solve_obstacle_with(prob, &SolverOptions::with_tol(tol, max_iter))
}

pub fn solve_obstacle_with<T: Real>(prob: &ObstacleProblem<T>, opts: &SolverOptions<T>) -> Result<SolveReport<T>> {
    let rhs = prob.rhs()?;
    let region = Region::whole(&prob.domain);
    relax(&prob.coeff, prob.p, prob.eps_reg, &region.active, &prob.boundary_field(), &rhs, Some(&prob.psi), opts)
}

/// `A(Du)` with the problem's regularisation.
pub fn flux_field<T: Real>(u: &ScalarField<T>, coeff: &CoefficientField<T>, p: T, eps_reg: T) -> Result<VectorField<T>> {
    let dom = u.domain();
    let st = Stencil::new(dom, coeff, p, eps_reg)?;
    let n = dom.dim();
    let mut values = vec![T::zero(); dom.len() * n];
    for j in 0..dom.len() {
        if dom.node_kind(j) != NodeKind::Exterior {
            st.flux(u.values(), j, &mut values[j * n..(j + 1) * n]);
        }
    }
    VectorField::from_values(dom, values)
}

/// `-div A(Du)` at every non-exterior node.
pub fn neg_div_a<T: Real>(u: &ScalarField<T>, coeff: &CoefficientField<T>, p: T, eps_reg: T) -> Result<ScalarField<T>> {
    let a = flux_field(u, coeff, p, eps_reg)?;
    Ok(crate::fields::divergence(&a).map(|v| -v))
}

/// `<A(Du), D(phi - u)> - <f, phi - u>` over the interior; nonnegative up to the
/// solver tolerance for admissible `phi`.
pub fn vi_gap<T: Real>(prob: &ObstacleProblem<T>, u: &ScalarField<T>, phi: &ScalarField<T>) -> Result<T> {
    let diff = phi.zip_with(u, |a, b| a - b)?;
    let a = flux_field(u, &prob.coeff, prob.p, prob.eps_reg)?;
    let lhs = crate::fields::pairing(&a, &gradient(&diff));
    let rhs = prob.rhs()?.zip_with(&diff, |f, d| f * d)?.integral();
    Ok(lhs - rhs)
}

/// `(h^n sum_{mask} |v|^q)^{1/q}` for a vector field.
pub fn vector_lq_norm<T: Real>(v: &VectorField<T>, q: T, mask: &[bool]) -> T {
    v.magnitude().lq_norm_over(q, mask)
}

fn non_exterior<T: Real>(dom: &GridDomain<T>) -> Vec<bool> {
    dom.mask().iter().map(|k| *k != NodeKind::Exterior).collect()
}

/// One SOLA level.
#[derive(Debug, Clone)]
pub struct SolaLevel<T> {
    pub k: u32,
    pub report: SolveReport<T>,
    pub mass: T,
}

#[derive(Debug, Clone)]
pub struct SolaSequence<T> {
    pub levels: Vec<SolaLevel<T>>,
    /// `||D u_{k+1} - D u_k||_{L^gamma}` for consecutive levels.
    pub grad_diffs: Vec<T>,
    /// `||u_{k+1} - u_k||_{L^r}`.
    pub value_diffs: Vec<T>,
    pub gamma: T,
    pub r: T,
}

/// Mollifies `mu` at levels `1..=big_k`, solves each level and records the
/// successive differences in `L^gamma` (gradients) and `L^r` (values).
pub fn sola_sequence<T: Real>(
    prob: &ObstacleProblem<T>,
    big_k: u32,
    opts: &SolverOptions<T>,
    gamma: T,
    r: T,
) -> Result<SolaSequence<T>> {
    if big_k < 2 {
        return Err(Error::Range(format!("SOLA needs K >= 2, got {big_k}")));
    }
    if !(gamma > T::zero() && r > T::zero()) {
        return Err(Error::Range("SOLA exponents must be positive".into()));
    }
    let levels: Vec<SolaLevel<T>> = (1..=big_k)
        .into_par_iter()
        .map(|k| {
            let dens = mollify_measure(&prob.mu, &prob.domain, k)?;
            let mass = dens.map(|v| v.abs()).integral();
            let lvl = prob.with_density(dens);
            let report = solve_obstacle_with(&lvl, opts)?;
            Ok(SolaLevel { k, report, mass })
        })
        .collect::<Result<_>>()?;
    let mask = non_exterior(&prob.domain);
    let grads: Vec<VectorField<T>> = levels.iter().map(|l| gradient(&l.report.u)).collect();
    let mut grad_diffs = Vec::new();
    let mut value_diffs = Vec::new();
    for k in 0..levels.len() - 1 {
        grad_diffs.push(vector_lq_norm(&grads[k + 1].sub(&grads[k])?, gamma, &mask));
        let du = levels[k + 1].report.u.zip_with(&levels[k].report.u, |a, b| a - b)?;
        value_diffs.push(du.lq_norm_over(r, &mask));
    }
    Ok(SolaSequence { levels, grad_diffs, value_diffs, gamma, r })
}

/// Comparison function `v`: `-div A(Dv) = -div A(D psi)` in `region`, `v = u_bc` elsewhere.
pub fn solve_obstacle_free<T: Real>(
    u_bc: &ScalarField<T>,
    psi: &ScalarField<T>,
    region: &Region<T>,
    prob: &ObstacleProblem<T>,
    opts: &SolverOptions<T>,
) -> Result<SolveReport<T>> {
    let rhs = neg_div_a(psi, &prob.coeff, prob.p, prob.eps_reg)?;
    let mut o = opts.clone();
    if o.initial.is_none() {
        o.initial = Some(u_bc.clone());
    }
    relax(&prob.coeff, prob.p, prob.eps_reg, &region.active, u_bc, &rhs, None, &o)
}

/// `-div A(Dw) = 0` in `region`, `w = v_bc` elsewhere.
pub fn solve_homogeneous<T: Real>(
    v_bc: &ScalarField<T>,
    region: &Region<T>,
    prob: &ObstacleProblem<T>,
    opts: &SolverOptions<T>,
) -> Result<SolveReport<T>> {
    let rhs = ScalarField::zeros(v_bc.domain());
    let mut o = opts.clone();
    if o.initial.is_none() {
        o.initial = Some(v_bc.clone());
    }
    relax(&prob.coeff, prob.p, prob.eps_reg, &region.active, v_bc, &rhs, None, &o)
}

#[derive(Debug, Clone)]
pub struct FrozenReport<T> {
    pub report: SolveReport<T>,
    /// `max |D u~|` over the half ball.
    pub grad_sup_half: T,
}

/// As [`solve_homogeneous`] with the coefficient replaced by its average over `region`.
pub fn solve_frozen<T: Real>(
    w_bc: &ScalarField<T>,
    region: &Region<T>,
    prob: &ObstacleProblem<T>,
    opts: &SolverOptions<T>,
) -> Result<FrozenReport<T>> {
    let frozen = prob.coeff.frozen_over(&region.active)?;
    let rhs = ScalarField::zeros(w_bc.domain());
    let mut o = opts.clone();
    if o.initial.is_none() {
        o.initial = Some(w_bc.clone());
    }
    let report = relax(&frozen, prob.p, prob.eps_reg, &region.active, w_bc, &rhs, None, &o)?;
    let dom = w_bc.domain();
    let half = match (&region.center, region.radius) {
        (Some(c), Some(r)) => dom.ball_mask(c, r / T::lit(2.0)),
        _ => region.active.clone(),
    };
    let g = gradient(&report.u).magnitude();
    let grad_sup_half = g
        .values()
        .iter()
        .zip(&half)
        .filter(|(_, m)| **m)
        .fold(T::zero(), |acc, (v, _)| acc.max(*v));
    Ok(FrozenReport { report, grad_sup_half })
}

/// `ln Gamma`-free `Gamma(n/2)` for integer `n >= 1`.
fn gamma_half<T: Real>(n: usize) -> T {
    let (mut g, mut z) = if n.is_multiple_of(2) { (T::one(), T::one()) } else { (T::PI().sqrt(), T::lit(0.5)) };
    let target = T::from_usize_lossy(n) / T::lit(2.0);
    while z < target {
        g *= z;
        z += T::one();
    }
    g
}

/// Area of the unit sphere in `R^n`.
pub fn sphere_area<T: Real>(n: usize) -> T {
    T::lit(2.0) * T::PI().powf(T::from_usize_lossy(n) / T::lit(2.0)) / gamma_half::<T>(n)
}

/// Constant `C` of the fundamental solution `C |x|^{-(n-p)/(p-1)}`.
pub fn radial_constant<T: Real>(n: usize, p: T) -> T {
    let nn = T::from_usize_lossy(n);
    (p - T::one()) / (nn - p) * sphere_area::<T>(n).powf(-T::one() / (p - T::one()))
}

/// Value and gradient of the solution of `-Delta_p u = delta_0` in `R^n`.
pub fn radial_oracle<T: Real>(n: usize, p: T, x: &[T]) -> Result<(T, Vec<T>)> {
    let nn = T::from_usize_lossy(n);
    if !(p > T::one() && p < nn) {
        return Err(Error::Range(format!("radial solution needs 1 < p < n, got p = {p}")));
    }
    let r = x.iter().map(|&v| v * v).sum::<T>().sqrt();
    if r == T::zero() {
        return Err(Error::OriginSingularity);
    }
    let c = radial_constant::<T>(n, p);
    let e = (nn - p) / (p - T::one());
    let u = c * r.powf(-e);
    let du = -c * e * r.powf(-e - T::one());
    Ok((u, x.iter().map(|&v| du * v / r).collect()))
}

/// Radial solution centred at `center` sampled on the non-interior nodes
/// (Dirichlet lift); interior nodes zero.
pub fn radial_lift<T: Real>(domain: &Arc<GridDomain<T>>, p: T, center: &[T]) -> Result<ScalarField<T>> {
    let mut out = ScalarField::zeros(domain);
    let mut x = vec![T::zero(); domain.dim()];
    for lin in 0..domain.len() {
        if domain.node_kind(lin) != NodeKind::Boundary {
            continue;
        }
        domain.coords_into(lin, &mut x);
        for (xi, ci) in x.iter_mut().zip(center) {
            *xi -= *ci;
        }
        out.values_mut()[lin] = radial_oracle(domain.dim(), p, &x)?.0;
    }
    Ok(out)
}

/// `(h^n sum |D_h u - D u_exact|^gamma)^{1/gamma}` over nodes in the annulus
/// `r_in < |x - center| < r_out`, comparing each forward difference with the
/// exact derivative at the face midpoint.
pub fn radial_gradient_error<T: Real>(u: &ScalarField<T>, p: T, center: &[T], gamma: T, r_in: T, r_out: T) -> Result<T> {
    let dom = u.domain();
    let n = dom.dim();
    let g = gradient(u);
    let h = dom.h();
    let mut x = vec![T::zero(); n];
    let mut y = vec![T::zero(); n];
    let mut acc = T::zero();
    for lin in 0..dom.len() {
        if !dom.is_interior(lin) {
            continue;
        }
        dom.coords_into(lin, &mut x);
        let r2 = dist2(&x, center);
        if !(r2 > r_in * r_in && r2 < r_out * r_out) {
            continue;
        }
        let mut e2 = T::zero();
        for d in 0..n {
            for a in 0..n {
                y[a] = x[a] - center[a];
            }
            y[d] += h / T::lit(2.0);
            let (_, du) = radial_oracle(n, p, &y)?;
            let diff = g.at(lin)[d] - du[d];
            e2 += diff * diff;
        }
        acc += e2.sqrt().powf(gamma);
    }
    Ok((acc * dom.cell_volume()).powf(T::one() / gamma))
}

/// Multilinear interpolation of `coarse` onto the nodes of `fine`.
pub fn prolong<T: Real>(coarse: &ScalarField<T>, fine: &Arc<GridDomain<T>>) -> ScalarField<T> {
    let cd = coarse.domain();
    let n = cd.dim();
    let mut x = vec![T::zero(); n];
    let mut base = vec![0usize; n];
    let mut frac = vec![T::zero(); n];
    ScalarField::from_fn(fine, |xf| {
        x.copy_from_slice(xf);
        for d in 0..n {
            let s = ((x[d] - cd.lower()[d]) / cd.h()).max(T::zero());
            let m = cd.shape()[d];
            let b = s.floor().to_usize().unwrap_or(0).min(m - 2);
            base[d] = b;
            frac[d] = (s - T::from_usize_lossy(b)).min(T::one());
        }
        let mut v = T::zero();
        for corner in 0..(1usize << n) {
            let mut w = T::one();
            let mut lin = 0;
            for d in 0..n {
                let up = (corner >> d) & 1 == 1;
                w *= if up { frac[d] } else { T::one() - frac[d] };
                lin += (base[d] + usize::from(up)) * cd.strides()[d];
            }
            if w != T::zero() {
                v += w * coarse.values()[lin];
            }
        }
        v
    })
}

/// `(D0^{-n} int |Du|^gamma)^{1/gamma} / (|mu|(Omega) / D0^{n-1})^{1/(p-1)}`.
pub fn scheven_ratio<T: Real>(u: &ScalarField<T>, mass: T, gamma: T, p: T) -> Result<T> {
    let dom = u.domain();
    let d0 = dom.diameter();
    let n = dom.dim() as i32;
    let lhs = vector_lq_norm(&gradient(u), gamma, &non_exterior(dom)) * d0.powi(-n).powf(T::one() / gamma);
    let rhs = (mass / d0.powi(n - 1)).powf(T::one() / (p - T::one()));
    if rhs == T::zero() {
        return Err(Error::ZeroDenominator("measure has zero mass".into()));
    }
    Ok(lhs / rhs)
}

/// Named obstacle shapes; `height * profile(|x - center| / width)`.
#[derive(Debug, Clone, PartialEq)]
pub enum ObstacleShape<T> {
    None,
    Paraboloid { center: Vec<T>, height: T, width: T },
    Cone { center: Vec<T>, height: T, width: T },
    Plateau { center: Vec<T>, height: T, width: T },
}

impl<T: Real> ObstacleShape<T> {
    pub fn name(&self) -> &'static str {
        match self {
            ObstacleShape::None => "none",
            ObstacleShape::Paraboloid { .. } => "paraboloid",
            ObstacleShape::Cone { .. } => "cone",
            ObstacleShape::Plateau { .. } => "plateau",
        }
    }

    /// Samples the obstacle; fails if it is positive on the boundary.
    pub fn build(&self, domain: &Arc<GridDomain<T>>) -> Result<ScalarField<T>> {
        let (center, height, width) = match self {
            ObstacleShape::None => return Ok(ScalarField::constant(domain, T::lit(INACTIVE_OBSTACLE))),
            ObstacleShape::Paraboloid { center, height, width }
            | ObstacleShape::Cone { center, height, width }
            | ObstacleShape::Plateau { center, height, width } => (center, *height, *width),
        };
        if center.len() != domain.dim() || !(width > T::zero()) {
            return Err(Error::InvalidObstacle("obstacle needs a centre in R^n and a positive width".into()));
        }
        let one = T::one();
        let two = T::lit(2.0);
        let psi = ScalarField::from_fn(domain, |x| {
            let s = dist2(x, center).sqrt() / width;
            let profile = match self {
                ObstacleShape::Paraboloid { .. } => one - s * s,
                ObstacleShape::Cone { .. } => one - s,
                _ => (two * (one - s)).min(one),
            };
            height * profile
        });
        for lin in 0..domain.len() {
            if domain.node_kind(lin) == NodeKind::Boundary && psi.values()[lin] > T::zero() {
                return Err(Error::InvalidObstacle(format!(
                    "{} obstacle is positive on the boundary at node {:?}",
                    self.name(),
                    domain.unravel(lin)
                )));
            }
        }
        Ok(psi)
    }
}

/// The shipped obstacle suite on `[-1, 1]^n`; every member is nonpositive on the boundary.
pub fn obstacle_suite<T: Real>(n: usize) -> Vec<ObstacleShape<T>> {
    let at = |c: &[f64]| (0..n).map(|i| T::lit(c.get(i).copied().unwrap_or(0.0))).collect::<Vec<T>>();
    vec![
        ObstacleShape::None,
        ObstacleShape::Paraboloid { center: at(&[0.4, 0.4]), height: T::lit(0.05), width: T::lit(0.4) },
        ObstacleShape::Cone { center: at(&[0.0, 0.0]), height: T::lit(0.1), width: T::lit(0.8) },
        ObstacleShape::Plateau { center: at(&[-0.3, 0.2]), height: T::lit(0.08), width: T::lit(0.5) },
    ]
}
