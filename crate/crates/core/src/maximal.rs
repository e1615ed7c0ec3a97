//! Fractional maximal operators on zero-extended grid fields.
//!
//! Ball membership is decided on the integer lattice: the offset `k` lies in
//! `B_rho` iff `|k|^2 < (rho/h)^2`. Ball volumes are lattice counts, so nodes
//! outside the array count with value zero.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{GridDomain, NodeKind, ScalarField};
use crate::lorentz::lorentz_norm;
use crate::scalar::Real;

/// Ascending radii, stored in units of the mesh width.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusLadder<T> {
    h: T,
    steps: Vec<T>,
}

impl<T: Real> RadiusLadder<T> {
    /// `{j h : j = 1..J}` with `J h >= cap`.
    pub fn multiples(h: T, cap: T) -> Result<Self> {
        if !(h > T::zero()) || !(cap >= h) {
            return Err(Error::Range(format!("ladder needs 0 < h <= cap, got h = {h}, cap = {cap}")));
        }
        let j = (cap / h).ceil().to_usize().unwrap_or(1).max(1);
        Ok(RadiusLadder { h, steps: (1..=j).map(T::from_usize_lossy).collect() })
    }

    /// The default ladder for a domain: multiples of `h` up to `3 D0`.
    pub fn for_domain(domain: &GridDomain<T>) -> Self {
        Self::multiples(domain.h(), T::lit(3.0) * domain.diameter()).expect("domain has positive h")
    }

    /// `{j h : j = 1..J} U {2^m h}` up to `cap`.
    pub fn dyadic_and_multiples(h: T, cap: T, j: usize) -> Result<Self> {
        let mut steps: Vec<T> = (1..=j.max(1)).map(T::from_usize_lossy).collect();
        let mut s = T::one();
        while s * h <= cap {
            steps.push(s);
            s *= T::lit(2.0);
        }
        Self::from_steps(h, steps)
    }

    /// Arbitrary radii `steps[i] * h`; sorted and deduplicated.
    pub fn from_steps(h: T, mut steps: Vec<T>) -> Result<Self> {
        if !(h > T::zero()) || steps.iter().any(|s| !(*s > T::zero()) || !s.is_finite()) {
            return Err(Error::Range("ladder radii must be positive and finite".into()));
        }
        steps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        steps.dedup();
        if steps.is_empty() {
            return Err(Error::EmptyLadder("no radii given".into()));
        }
        Ok(RadiusLadder { h, steps })
    }

    pub fn h(&self) -> T {
        self.h
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Radii in units of `h`.
    pub fn steps(&self) -> &[T] {
        &self.steps
    }

    pub fn radius(&self, i: usize) -> T {
        self.steps[i] * self.h
    }

    pub fn radii(&self) -> Vec<T> {
        self.steps.iter().map(|&s| s * self.h).collect()
    }

    pub fn max_radius(&self) -> T {
        self.radius(self.steps.len() - 1)
    }

    /// Radii `< r_cut`.
    pub fn below(&self, r_cut: T) -> Result<Self> {
        let steps: Vec<T> = self.steps.iter().copied().filter(|&s| s * self.h < r_cut).collect();
        if steps.is_empty() {
            return Err(Error::EmptyLadder(format!("no ladder radius below R = {r_cut}")));
        }
        Ok(RadiusLadder { h: self.h, steps })
    }

    /// Radii `>= r_cut`.
    pub fn at_least(&self, r_cut: T) -> Result<Self> {
        let steps: Vec<T> = self.steps.iter().copied().filter(|&s| s * self.h >= r_cut).collect();
        if steps.is_empty() {
            return Err(Error::EmptyLadder(format!("no ladder radius at or above R = {r_cut}")));
        }
        Ok(RadiusLadder { h: self.h, steps })
    }
}

/// Lattice offsets of a ball grouped into rows along the last axis.
struct BallRows {
    /// `(offset on the first n-1 axes, half width on the last axis)`
    rows: Vec<(Vec<i64>, i64)>,
    count: usize,
    s2: f64,
}

impl BallRows {
    fn new(n: usize, s: f64) -> Self {
        let s2 = s * s;
        let r = s.ceil() as i64;
        let mut rows = Vec::new();
        let mut count = 0usize;
        let m = n - 1;
        let mut k = vec![-r; m];
        loop {
            let l2: i64 = k.iter().map(|v| v * v).sum();
            if (l2 as f64) < s2 {
                // widest w with l2 + w^2 < s^2
                let mut w = ((s2 - l2 as f64).max(0.0)).sqrt().floor() as i64;
                while w >= 0 && ((l2 + w * w) as f64) >= s2 {
                    w -= 1;
                }
                while ((l2 + (w + 1) * (w + 1)) as f64) < s2 {
                    w += 1;
                }
                if w >= 0 {
                    count += (2 * w + 1) as usize;
                    rows.push((k.clone(), w));
                }
            }
            if m == 0 {
                break;
            }
            let mut d = m;
            let mut done = true;
            while d > 0 {
                d -= 1;
                k[d] += 1;
                if k[d] <= r {
                    done = false;
                    break;
                }
                k[d] = -r;
            }
            if done {
                break;
            }
        }
        BallRows { rows, count, s2 }
    }
}

/// Zero-extended prefix sums along the last axis.
struct RowPrefix<T> {
    prefix: Vec<T>,
    last: usize,
    total: T,
}

impl<T: Real> RowPrefix<T> {
    fn new(f: &ScalarField<T>) -> Self {
        let dom = f.domain();
        let last = dom.shape()[dom.dim() - 1];
        let nrows = dom.len() / last;
        let mut prefix = vec![T::zero(); nrows * (last + 1)];
        let mut total = T::zero();
        for r in 0..nrows {
            let mut acc = T::zero();
            for c in 0..last {
                acc += f.values()[r * last + c];
                prefix[r * (last + 1) + c + 1] = acc;
            }
            total += acc;
        }
        RowPrefix { prefix, last, total }
    }

    #[inline]
    fn segment(&self, row: usize, lo: i64, hi: i64) -> T {
        let lo = lo.clamp(0, self.last as i64) as usize;
        let hi = hi.clamp(0, self.last as i64) as usize;
        if hi <= lo {
            return T::zero();
        }
        let base = row * (self.last + 1);
        self.prefix[base + hi] - self.prefix[base + lo]
    }
}

fn ball_sum<T: Real>(
    dom: &GridDomain<T>,
    pre: &RowPrefix<T>,
    ball: &BallRows,
    idx: &[usize],
    far2: i64,
) -> T {
    if (far2 as f64) < ball.s2 {
        return pre.total;
    }
    let n = dom.dim();
    let shape = dom.shape();
    let c_last = idx[n - 1] as i64;
    let mut sum = T::zero();
    'rows: for (off, w) in &ball.rows {
        let mut row = 0usize;
        let mut stride = 1usize;
        for d in (0..n - 1).rev() {
            let i = idx[d] as i64 + off[d];
            if i < 0 || i >= shape[d] as i64 {
                continue 'rows;
            }
            row += i as usize * stride;
            stride *= shape[d];
        }
        sum += pre.segment(row, c_last - w, c_last + w + 1);
    }
    sum
}

/// Squared lattice distance from `idx` to the farthest array corner.
fn farthest2(shape: &[usize], idx: &[usize]) -> i64 {
    idx.iter()
        .zip(shape)
        .map(|(&i, &m)| {
            let a = (i as i64).max(m as i64 - 1 - i as i64);
            a * a
        })
        .sum()
}

fn check_alpha<T: Real>(alpha: T, n: usize) -> Result<()> {
    if !(alpha >= T::zero()) || alpha >= T::from_usize_lossy(n) {
        return Err(Error::Range(format!("alpha = {alpha} must lie in [0, {n})")));
    }
    Ok(())
}

/// `max_rho rho^alpha * (lattice ball average of f)` over the ladder, at every
/// non-exterior node; zero on exterior nodes.
pub fn fractional_maximal<T: Real>(f: &ScalarField<T>, alpha: T, ladder: &RadiusLadder<T>) -> Result<ScalarField<T>> {
    let dom = f.domain();
    check_alpha(alpha, dom.dim())?;
    if ladder.is_empty() {
        return Err(Error::EmptyLadder("empty ladder".into()));
    }
    if !ladder.h().rel_eq(dom.h(), T::lit(1e-12)) {
        return Err(Error::DomainMismatch(format!("ladder h = {} but grid h = {}", ladder.h(), dom.h())));
    }
    let n = dom.dim();
    let pre = RowPrefix::new(f);
    let balls: Vec<(BallRows, T)> = ladder
        .steps()
        .iter()
        .enumerate()
        .map(|(i, s)| (BallRows::new(n, s.to_f64_lossy()), ladder.radius(i).powf(alpha)))
        .collect();
    let values: Vec<T> = (0..dom.len())
        .into_par_iter()
        .map_init(
            || vec![0usize; n],
            |idx, lin| {
                if dom.node_kind(lin) == NodeKind::Exterior {
                    return T::zero();
                }
                dom.unravel_into(lin, idx);
                let far2 = farthest2(dom.shape(), idx);
                let mut best = T::neg_infinity();
                for (ball, weight) in &balls {
                    if ball.count == 0 {
                        continue;
                    }
                    let avg = ball_sum(dom, &pre, ball, idx, far2) / T::from_usize_lossy(ball.count);
                    best = best.max(*weight * avg);
                }
                if best == T::neg_infinity() {
                    T::zero()
                } else {
                    best
                }
            },
        )
        .collect();
    ScalarField::from_values(dom, values)
}

/// `M_alpha^R`: the ladder restricted to radii `< r_cut`.
pub fn fractional_maximal_cutoff<T: Real>(
    f: &ScalarField<T>,
    alpha: T,
    r_cut: T,
    ladder: &RadiusLadder<T>,
) -> Result<ScalarField<T>> {
    if !(r_cut > T::zero()) {
        return Err(Error::Range(format!("cut-off radius {r_cut} must be positive")));
    }
    fractional_maximal(f, alpha, &ladder.below(r_cut)?)
}

/// `T_alpha^R`: the ladder restricted to radii `>= r_cut`.
pub fn tail_maximal<T: Real>(f: &ScalarField<T>, alpha: T, r_cut: T, ladder: &RadiusLadder<T>) -> Result<ScalarField<T>> {
    if !(r_cut > T::zero()) {
        return Err(Error::Range(format!("cut-off radius {r_cut} must be positive")));
    }
    fractional_maximal(f, alpha, &ladder.at_least(r_cut)?)
}

/// Number of lattice points in the open ball of radius `steps * h`.
pub fn lattice_ball_count(n: usize, steps: f64) -> usize {
    BallRows::new(n, steps).count
}

/// Empirical `||M_alpha f||_{L^{ns/(n - alpha s), oo}} / ||f||_{L^s}` over the interior.
pub fn weak_type_constant<T: Real>(f: &ScalarField<T>, s: T, alpha: T, ladder: &RadiusLadder<T>) -> Result<T> {
    let dom: &Arc<GridDomain<T>> = f.domain();
    let n = T::from_usize_lossy(dom.dim());
    if !(s >= T::one()) {
        return Err(Error::Range(format!("s = {s} must be at least 1")));
    }
    if !(alpha >= T::zero()) || alpha * s >= n {
        return Err(Error::Range(format!("alpha = {alpha} must lie in [0, n/s)")));
    }
    let abs = f.map(|v| v.abs());
    let strong = abs.lq_norm_over(s, &dom.interior_mask());
    if strong == T::zero() {
        return Err(Error::ZeroDenominator("f vanishes identically".into()));
    }
    let m = fractional_maximal(&abs, alpha, ladder)?;
    let q = n * s / (n - alpha * s);
    let weak = lorentz_norm(&m, q, None)?;
    Ok(weak / strong)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::ball_average;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize, m: usize) -> Arc<GridDomain<f64>> {
        Arc::new(GridDomain::cube(n, m, 0.0, 1.0).unwrap())
    }

    #[test]
    fn constant_field_away_from_edges() {
        let d = grid(2, 21);
        let f = ScalarField::from_fn(&d, |_| 3.0);
        let ladder = RadiusLadder::multiples(d.h(), 4.0 * d.h()).unwrap();
        let m = fractional_maximal(&f, 0.0, &ladder).unwrap();
        assert_eq!(m.values()[d.ravel(&[10, 10])], 3.0);
    }

    #[test]
    fn indicator_of_unit_ball_at_origin() {
        let d = Arc::new(GridDomain::<f64>::cube(2, 81, -2.0, 2.0).unwrap());
        let f = ScalarField::from_fn(&d, |x| if x[0] * x[0] + x[1] * x[1] < 1.0 { 1.0 } else { 0.0 });
        let ladder = RadiusLadder::for_domain(&d);
        let o = d.ravel(&[40, 40]);
        for alpha in [0.5, 1.0, 1.5] {
            let m = fractional_maximal(&f, alpha, &ladder).unwrap();
            assert!((m.values()[o] - 1.0).abs() < 0.15, "alpha {alpha}: {}", m.values()[o]);
        }
    }

    #[test]
    fn matches_ball_average_off_ties() {
        let d = grid(2, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = ScalarField::from_fn(&d, |_| rng.gen::<f64>());
        let steps: Vec<f64> = (1..20).map(|j| j as f64 * 0.7 + 0.05).collect();
        let ladder = RadiusLadder::from_steps(d.h(), steps).unwrap();
        let m = fractional_maximal(&f, 0.4, &ladder).unwrap();
        for lin in 0..d.len() {
            let x = d.coords(lin);
            let want = ladder
                .radii()
                .iter()
                .map(|&r| r.powf(0.4) * ball_average(&f, &x, r).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((m.values()[lin] - want).abs() <= 1e-12 * want.max(1.0));
        }
    }

    #[test]
    fn cutoff_and_tail_errors() {
        let d = grid(2, 9);
        let f = ScalarField::zeros(&d);
        let ladder = RadiusLadder::for_domain(&d);
        assert!(matches!(fractional_maximal_cutoff(&f, 0.0, d.h() * 0.5, &ladder), Err(Error::EmptyLadder(_))));
        assert!(matches!(tail_maximal(&f, 0.0, 100.0, &ladder), Err(Error::EmptyLadder(_))));
        let t = tail_maximal(&f, 0.5, 0.5, &ladder).unwrap();
        assert!(t.values().iter().all(|&v| v == 0.0));
        let big = fractional_maximal_cutoff(&f, 0.0, 1e3, &ladder).unwrap();
        assert_eq!(big, fractional_maximal(&f, 0.0, &ladder).unwrap());
    }

    #[test]
    fn tail_dominates_far_from_support() {
        let d = grid(2, 33);
        let r_cut = 0.25;
        let f = ScalarField::from_fn(&d, |x| {
            if (x[0] - 0.2).powi(2) + (x[1] - 0.2).powi(2) < (r_cut / 2.0f64).powi(2) {
                1.0
            } else {
                0.0
            }
        });
        let ladder = RadiusLadder::for_domain(&d);
        let far = d.ravel(&[28, 28]);
        let cut = fractional_maximal_cutoff(&f, 0.5, r_cut, &ladder).unwrap();
        let tail = tail_maximal(&f, 0.5, r_cut, &ladder).unwrap();
        assert_eq!(cut.values()[far], 0.0);
        assert!(tail.values()[far] > 0.0);
    }

    #[test]
    fn weak_type_cases() {
        let d = grid(2, 17);
        let ladder = RadiusLadder::for_domain(&d);
        let z = ScalarField::zeros(&d);
        assert!(matches!(weak_type_constant(&z, 1.0, 0.0, &ladder), Err(Error::ZeroDenominator(_))));
        let d = Arc::new(GridDomain::<f64>::cube(2, 41, -2.0, 2.0).unwrap());
        let f = ScalarField::from_fn(&d, |x| if x[0] * x[0] + x[1] * x[1] < 1.0 { 1.0 } else { 0.0 });
        let c = weak_type_constant(&f, 1.0, 0.0, &RadiusLadder::for_domain(&d)).unwrap();
        assert!(c >= 1.0, "{c}");
    }

    #[test]
    fn weak_type_single_cell_is_resolution_stable() {
        let ratio = |m: usize| {
            let d = Arc::new(GridDomain::<f64>::cube(2, m, -1.0, 1.0).unwrap());
            let c = (m - 1) / 2;
            let mut f = ScalarField::zeros(&d);
            f.values_mut()[d.ravel(&[c, c])] = 1.0;
            weak_type_constant(&f, 1.0, 0.5, &RadiusLadder::for_domain(&d)).unwrap()
        };
        let (a, b) = (ratio(17), ratio(33));
        assert!(a.is_finite() && b.is_finite());
        assert!((b / a - 1.0).abs() < 0.2, "{a} {b}");
    }

    #[test]
    fn lattice_counts() {
        assert_eq!(lattice_ball_count(2, 1.0), 1);
        assert_eq!(lattice_ball_count(2, 1.5), 9);
        assert_eq!(lattice_ball_count(2, 2.0), 9);
        assert_eq!(lattice_ball_count(3, 1.0), 1);
        assert_eq!(lattice_ball_count(3, 2.0), 1 + 6 + 12 + 8);
    }
}
