//! The nonlinearity `A(eta, x)`, the monotonicity gap `Phi`, truncations and
//! the BMO seminorm of the coefficient.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::{dist2, GridDomain, NodeKind, ScalarField};
use crate::scalar::Real;

/// User supplied `A(eta, x)`.
pub type CustomOperator<T> = Arc<dyn Fn(&[T], &[T]) -> Vec<T> + Send + Sync>;

/// Spatial dependence of the operator `A(eta, x) = c(x) |eta|^(p-2) eta`.
#[derive(Clone)]
pub enum CoefficientField<T> {
    /// `c == 1`, the p-Laplacian.
    PureP,
    /// `c(x)` given per node, `0 < c_min <= c <= c_max`.
    ScalarModulated(ScalarField<T>),
    /// An arbitrary operator; usable for evaluation only.
    Custom(CustomOperator<T>),
}

impl<T: Real> fmt::Debug for CoefficientField<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoefficientField::PureP => write!(f, "PureP"),
            CoefficientField::ScalarModulated(c) => {
                let (lo, hi) = bounds(c);
                write!(f, "ScalarModulated(c in [{lo}, {hi}])")
            }
            CoefficientField::Custom(_) => write!(f, "Custom"),
        }
    }
}

fn bounds<T: Real>(c: &ScalarField<T>) -> (T, T) {
    let dom = c.domain();
    c.values()
        .iter()
        .zip(dom.mask())
        .filter(|(_, k)| **k != NodeKind::Exterior)
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), (v, _)| (lo.min(*v), hi.max(*v)))
}

impl<T: Real> CoefficientField<T> {
    pub fn modulated(c: ScalarField<T>) -> Result<Self> {
        let (lo, _) = bounds(&c);
        if !(lo > T::zero()) || !c.is_finite() {
            return Err(Error::Range(format!("coefficient must be positive and finite, min = {lo}")));
        }
        Ok(CoefficientField::ScalarModulated(c))
    }

    /// `(c_min, c_max)`; `(1, 1)` for the p-Laplacian.
    pub fn range(&self) -> Option<(T, T)> {
        match self {
            CoefficientField::PureP => Some((T::one(), T::one())),
            CoefficientField::ScalarModulated(c) => Some(bounds(c)),
            CoefficientField::Custom(_) => None,
        }
    }

    /// Coefficient at node `lin`; `None` for custom operators.
    #[inline]
    pub fn at_node(&self, lin: usize) -> Option<T> {
        match self {
            CoefficientField::PureP => Some(T::one()),
            CoefficientField::ScalarModulated(c) => Some(c.values()[lin]),
            CoefficientField::Custom(_) => None,
        }
    }

    /// Coefficient at the node nearest to `x`.
    pub fn at_point(&self, x: &[T]) -> Option<T> {
        match self {
            CoefficientField::PureP => Some(T::one()),
            CoefficientField::ScalarModulated(c) => {
                let dom = c.domain();
                let idx = dom.nearest_lattice(x);
                let clamped: Vec<usize> = idx
                    .iter()
                    .zip(dom.shape())
                    .map(|(&i, &m)| i.clamp(0, m as i64 - 1) as usize)
                    .collect();
                Some(c.values()[dom.ravel(&clamped)])
            }
            CoefficientField::Custom(_) => None,
        }
    }

    /// Smallest `Upsilon` for which both structure bounds hold: growth needs
    /// `c_max <= Upsilon`, monotonicity needs `(p-1) c_min >= 1/Upsilon`.
    pub fn structure_constant(&self, p: T) -> Option<T> {
        self.range().map(|(lo, hi)| hi.max(T::one() / (lo * (p - T::one()))))
    }

    /// The x-independent operator obtained by averaging `c` over `mask`.
    pub fn frozen_over(&self, mask: &[bool]) -> Result<Self> {
        match self {
            CoefficientField::PureP => Ok(CoefficientField::PureP),
            CoefficientField::ScalarModulated(c) => {
                let (sum, count) = c
                    .values()
                    .iter()
                    .zip(mask)
                    .filter(|(_, m)| **m)
                    .fold((T::zero(), 0usize), |(s, k), (v, _)| (s + *v, k + 1));
                if count == 0 {
                    return Err(Error::DegenerateInput("empty averaging region".into()));
                }
                let mean = sum / T::from_usize_lossy(count);
                Ok(CoefficientField::ScalarModulated(ScalarField::constant(c.domain(), mean)))
            }
            CoefficientField::Custom(_) => {
                Err(Error::UnsupportedCoefficient("cannot average a custom operator".into()))
            }
        }
    }
}

/// `c(x) |eta|^(p-2) eta`, with `A(0, x) = 0`.
pub fn eval_a<T: Real>(eta: &[T], x: &[T], coeff: &CoefficientField<T>, p: T) -> Vec<T> {
    if let CoefficientField::Custom(f) = coeff {
        return f(eta, x);
    }
    let norm2: T = eta.iter().map(|&e| e * e).sum();
    if norm2 == T::zero() {
        return vec![T::zero(); eta.len()];
    }
    let c = coeff.at_point(x).unwrap_or(T::one());
    let w = c * norm2.powf((p - T::lit(2.0)) / T::lit(2.0));
    eta.iter().map(|&e| w * e).collect()
}

/// `Phi(eta1, eta2) = (|eta1|^2 + |eta2|^2)^((p-2)/2) |eta1 - eta2|^2`, `Phi(0, 0) = 0`.
pub fn phi_gap<T: Real>(eta1: &[T], eta2: &[T], p: T) -> T {
    let s: T = eta1.iter().chain(eta2).map(|&e| e * e).sum();
    if s == T::zero() {
        return T::zero();
    }
    let d2: T = eta1.iter().zip(eta2).map(|(&a, &b)| (a - b) * (a - b)).sum();
    s.powf((p - T::lit(2.0)) / T::lit(2.0)) * d2
}

/// `T_k(z) = max(-k, min(z, k))`.
#[inline]
pub fn truncate<T: Real>(z: T, k: T) -> T {
    z.min(k).max(-k)
}

/// `T_{k,h}(z)`: zero below `h`, shifted identity up to `k + h`, then `k sign z`.
#[inline]
pub fn truncate_shifted<T: Real>(z: T, k: T, h: T) -> T {
    let a = z.abs();
    if a < h {
        T::zero()
    } else if a <= k + h {
        (a - h) * z.signum()
    } else {
        k * z.signum()
    }
}

/// `[A]^{r0}`: the supremum over node-centred balls of radius `j h <= r0` of
/// the mean oscillation of `A` measured in units of `|eta|^(p-1)`.
///
/// For scalar modulation the inner supremum over `eta` collapses to
/// `|c(x) - mean_B c|`, so the mean oscillation of `c` is what gets computed.
/// Averages use the non-exterior nodes of each ball.
pub fn bmo_seminorm<T: Real>(coeff: &CoefficientField<T>, r0: T, grid: &GridDomain<T>, _p: T) -> Result<T> {
    if !(r0 > T::zero()) {
        return Err(Error::Range(format!("r0 = {r0} must be positive")));
    }
    let c = match coeff {
        CoefficientField::PureP => return Ok(T::zero()),
        CoefficientField::ScalarModulated(c) => c,
        CoefficientField::Custom(_) => {
            return Err(Error::UnsupportedCoefficient(
                "the eta-supremum has no closed form for custom operators".into(),
            ))
        }
    };
    if **c.domain() != *grid {
        return Err(Error::DomainMismatch("coefficient lives on a different grid".into()));
    }
    let n = grid.dim();
    let jmax = (r0 / grid.h()).floor().to_usize().unwrap_or(0);
    if jmax == 0 {
        return Ok(T::zero());
    }
    // lattice offsets sorted by squared length, up to jmax
    let mut offsets: Vec<(i64, Vec<i64>)> = Vec::new();
    let r = jmax as i64;
    let mut k = vec![-r; n];
    loop {
        let l2: i64 = k.iter().map(|v| v * v).sum();
        if l2 < r * r {
            offsets.push((l2, k.clone()));
        }
        let mut d = n;
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
    offsets.sort_by_key(|o| o.0);
    let vals = c.values();
    let mut best = T::zero();
    let mut idx = vec![0usize; n];
    let mut members: Vec<T> = Vec::new();
    for center in 0..grid.len() {
        if grid.node_kind(center) == NodeKind::Exterior {
            continue;
        }
        grid.unravel_into(center, &mut idx);
        members.clear();
        let mut sum = T::zero();
        let mut cursor = 0;
        for j in 1..=jmax {
            let lim = (j * j) as i64;
            while cursor < offsets.len() && offsets[cursor].0 < lim {
                let off = &offsets[cursor].1;
                cursor += 1;
                let mut lin = 0usize;
                let mut inside = true;
                for d in 0..n {
                    let i = idx[d] as i64 + off[d];
                    if i < 0 || i >= grid.shape()[d] as i64 {
                        inside = false;
                        break;
                    }
                    lin += i as usize * grid.strides()[d];
                }
                if inside && grid.node_kind(lin) != NodeKind::Exterior {
                    members.push(vals[lin]);
                    sum += vals[lin];
                }
            }
            let m = T::from_usize_lossy(members.len());
            let mean = sum / m;
            let osc = members.iter().map(|&v| (v - mean).abs()).sum::<T>() / m;
            best = best.max(osc);
        }
    }
    Ok(best)
}

/// Mean oscillation of `c` over the open ball `B_rho(center)` (non-exterior nodes).
pub fn mean_oscillation<T: Real>(c: &ScalarField<T>, center: &[T], rho: T) -> Option<T> {
    let dom = c.domain();
    let mut x = vec![T::zero(); dom.dim()];
    let mut members = Vec::new();
    for lin in 0..dom.len() {
        if dom.node_kind(lin) == NodeKind::Exterior {
            continue;
        }
        dom.coords_into(lin, &mut x);
        if dist2(&x, center) < rho * rho {
            members.push(c.values()[lin]);
        }
    }
    if members.is_empty() {
        return None;
    }
    let m = T::from_usize_lossy(members.len());
    let mean = members.iter().copied().sum::<T>() / m;
    Some(members.iter().map(|&v| (v - mean).abs()).sum::<T>() / m)
}
