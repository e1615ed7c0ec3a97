//! Grid domains, node fields, measures and the discrete calculus on them.
//!
//! Domains are vertex-centred: node `i` along an axis sits at
//! `lower + i * h`, the outermost nodes lie on the boundary and carry the
//! Dirichlet data. Every node stands for a cell of volume `h^n`; integrals
//! over the domain run over interior nodes.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DomainKind {
    Box,
    LShaped,
}

impl DomainKind {
    pub fn name(self) -> &'static str {
        match self {
            DomainKind::Box => "box",
            DomainKind::LShaped => "lshape",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "box" => Some(DomainKind::Box),
            "lshape" | "l-shaped" | "L" => Some(DomainKind::LShaped),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    Boundary,
    Exterior,
}

/// A box or L-shaped domain sampled on a uniform node lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDomain<T> {
    n: usize,
    h: T,
    shape: Vec<usize>,
    strides: Vec<usize>,
    lower: Vec<T>,
    kind: DomainKind,
    mask: Vec<NodeKind>,
    interior: usize,
}

impl<T: Real> GridDomain<T> {
    /// Box `lower + [0, (shape-1) h]` in every axis.
    pub fn new_box(lower: Vec<T>, h: T, shape: Vec<usize>) -> Result<Self> {
        Self::build(DomainKind::Box, lower, h, shape)
    }

    /// Hypercube `[lo, hi]^n` with `nodes` nodes per axis.
    pub fn cube(n: usize, nodes: usize, lo: T, hi: T) -> Result<Self> {
        if nodes < 3 {
            return Err(Error::Range(format!("need at least 3 nodes per axis, got {nodes}")));
        }
        let h = (hi - lo) / T::from_usize_lossy(nodes - 1);
        Self::new_box(vec![lo; n], h, vec![nodes; n])
    }

    /// `[lo, hi]^n` with the quadrant `x0 > mid, x1 > mid` removed; `nodes` must be odd.
    pub fn l_shaped(n: usize, nodes: usize, lo: T, hi: T) -> Result<Self> {
        if nodes < 5 || nodes.is_multiple_of(2) {
            return Err(Error::Range(format!("L-shaped domain needs an odd node count >= 5, got {nodes}")));
        }
        let h = (hi - lo) / T::from_usize_lossy(nodes - 1);
        Self::build(DomainKind::LShaped, vec![lo; n], h, vec![nodes; n])
    }

    pub fn build(kind: DomainKind, lower: Vec<T>, h: T, shape: Vec<usize>) -> Result<Self> {
        let n = shape.len();
        if n < 1 || lower.len() != n {
            return Err(Error::Range("shape and lower corner must have the same nonzero length".into()));
        }
        if !(h > T::zero() && h.is_finite()) {
            return Err(Error::Range(format!("mesh width h = {h} must be positive")));
        }
        if shape.iter().any(|&m| m < 3) {
            return Err(Error::Range(format!("every axis needs at least 3 nodes, got {shape:?}")));
        }
        if kind == DomainKind::LShaped
            && (n < 2 || shape[0] != shape[1] || shape[0].is_multiple_of(2) || shape[0] < 5) {
                return Err(Error::Range("L-shape needs equal odd node counts >= 5 on the first two axes".into()));
            }
        let mut strides = vec![1usize; n];
        for d in (0..n.saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * shape[d + 1];
        }
        let len = strides[0] * shape[0];
        let mut dom = GridDomain { n, h, shape, strides, lower, kind, mask: vec![NodeKind::Interior; len], interior: 0 };
        let mut idx = vec![0usize; n];
        for lin in 0..len {
            dom.unravel_into(lin, &mut idx);
            dom.mask[lin] = dom.classify(&idx);
        }
        dom.interior = dom.mask.iter().filter(|k| **k == NodeKind::Interior).count();
        Ok(dom)
    }

    fn classify(&self, idx: &[usize]) -> NodeKind {
        let on_outer = idx.iter().zip(&self.shape).any(|(&i, &m)| i == 0 || i == m - 1);
        match self.kind {
            DomainKind::Box => {
                if on_outer {
                    NodeKind::Boundary
                } else {
                    NodeKind::Interior
                }
            }
            DomainKind::LShaped => {
                let mid = (self.shape[0] - 1) / 2;
                let (i0, i1) = (idx[0], idx[1]);
                if i0 > mid && i1 > mid {
                    NodeKind::Exterior
                } else if on_outer || (i0 == mid && i1 >= mid) || (i1 == mid && i0 >= mid) {
                    NodeKind::Boundary
                } else {
                    NodeKind::Interior
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> T {
        self.h
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> Vec<T> {
        self.lower.iter().zip(&self.shape).map(|(&l, &m)| l + self.h * T::from_usize_lossy(m - 1)).collect()
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    /// Number of nodes in the lattice array (all kinds).
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn node_kind(&self, lin: usize) -> NodeKind {
        self.mask[lin]
    }

    pub fn mask(&self) -> &[NodeKind] {
        &self.mask
    }

    pub fn is_interior(&self, lin: usize) -> bool {
        self.mask[lin] == NodeKind::Interior
    }

    pub fn interior_count(&self) -> usize {
        self.interior
    }

    /// Volume `h^n` carried by one node.
    pub fn cell_volume(&self) -> T {
        self.h.powi(self.n as i32)
    }

    /// `h^n` times the number of interior nodes.
    pub fn lebesgue_measure(&self) -> T {
        self.cell_volume() * T::from_usize_lossy(self.interior)
    }

    /// Diameter of the domain; the bounding-box diagonal for both kinds.
    pub fn diameter(&self) -> T {
        let upper = self.upper();
        self.lower.iter().zip(&upper).map(|(&l, &u)| (u - l) * (u - l)).sum::<T>().sqrt()
    }

    pub fn unravel_into(&self, mut lin: usize, out: &mut [usize]) {
        for d in 0..self.n {
            out[d] = lin / self.strides[d];
            lin %= self.strides[d];
        }
    }

    pub fn unravel(&self, lin: usize) -> Vec<usize> {
        let mut out = vec![0; self.n];
        self.unravel_into(lin, &mut out);
        out
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn coords_into(&self, lin: usize, out: &mut [T]) {
        let mut rem = lin;
        for d in 0..self.n {
            let i = rem / self.strides[d];
            rem %= self.strides[d];
            out[d] = self.lower[d] + self.h * T::from_usize_lossy(i);
        }
    }

    pub fn coords(&self, lin: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.n];
        self.coords_into(lin, &mut out);
        out
    }

    /// Neighbour one step along `axis` (forward if `forward`), if inside the array.
    #[inline]
    pub fn neighbor(&self, lin: usize, axis: usize, forward: bool) -> Option<usize> {
        let i = (lin / self.strides[axis]) % self.shape[axis];
        if forward {
            (i + 1 < self.shape[axis]).then(|| lin + self.strides[axis])
        } else {
            (i > 0).then(|| lin - self.strides[axis])
        }
    }

    /// Lattice index of the node nearest to `x` (may fall outside the array).
    pub fn nearest_lattice(&self, x: &[T]) -> Vec<i64> {
        x.iter()
            .zip(&self.lower)
            .map(|(&xi, &l)| ((xi - l) / self.h).round().to_i64().unwrap_or(i64::MAX))
            .collect()
    }

    /// Whether `x` lies in the closed domain (interior or boundary region).
    pub fn contains_point(&self, x: &[T]) -> bool {
        if x.len() != self.n {
            return false;
        }
        let upper = self.upper();
        let tol = self.h * T::lit(1e-9);
        for d in 0..self.n {
            if x[d] < self.lower[d] - tol || x[d] > upper[d] + tol {
                return false;
            }
        }
        if self.kind == DomainKind::LShaped {
            let mid = self.lower[0] + self.h * T::from_usize_lossy((self.shape[0] - 1) / 2);
            let mid1 = self.lower[1] + self.h * T::from_usize_lossy((self.shape[1] - 1) / 2);
            if x[0] > mid + tol && x[1] > mid1 + tol {
                return false;
            }
        }
        true
    }

    /// Interior nodes whose centre lies in the open ball `B_radius(center)`.
    pub fn ball_mask(&self, center: &[T], radius: T) -> Vec<bool> {
        let mut x = vec![T::zero(); self.n];
        (0..self.len())
            .map(|lin| {
                if !self.is_interior(lin) {
                    return false;
                }
                self.coords_into(lin, &mut x);
                dist2(&x, center) < radius * radius
            })
            .collect()
    }

    pub fn interior_mask(&self) -> Vec<bool> {
        self.mask.iter().map(|k| *k == NodeKind::Interior).collect()
    }

    /// Header line of the field file format.
    pub fn header(&self) -> String {
        let shape: Vec<String> = self.shape.iter().map(|m| m.to_string()).collect();
        let lower: Vec<String> = self.lower.iter().map(|l| format!("{:.16e}", l)).collect();
        format!(
            "n={} shape={} h={:.16e} kind={} lower={}",
            self.n,
            shape.join("x"),
            self.h,
            self.kind.name(),
            lower.join(",")
        )
    }

    pub fn from_header(line: &str) -> Result<Self> {
        let bad = |m: String| Error::Parse { line: 1, message: m };
        let mut n = None;
        let mut shape = None;
        let mut h = None;
        let mut kind = None;
        let mut lower = None;
        for tok in line.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| bad(format!("malformed header token `{tok}`")))?;
            match k {
                "n" => n = Some(v.parse::<usize>().map_err(|_| bad(format!("bad n `{v}`")))?),
                "shape" => {
                    shape = Some(
                        v.split('x')
                            .map(|s| s.parse::<usize>().map_err(|_| bad(format!("bad shape `{v}`"))))
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                "h" => h = Some(v.parse::<f64>().map_err(|_| bad(format!("bad h `{v}`")))?),
                "kind" => kind = Some(DomainKind::parse(v).ok_or_else(|| bad(format!("bad kind `{v}`")))?),
                "lower" => {
                    lower = Some(
                        v.split(',')
                            .map(|s| s.parse::<f64>().map(T::lit).map_err(|_| bad(format!("bad lower `{v}`"))))
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                _ => return Err(bad(format!("unknown header key `{k}`"))),
            }
        }
        let shape = shape.ok_or_else(|| bad("missing shape".into()))?;
        let n = n.ok_or_else(|| bad("missing n".into()))?;
        if shape.len() != n {
            return Err(bad(format!("shape has {} axes but n = {n}", shape.len())));
        }
        let lower = lower.unwrap_or_else(|| vec![T::zero(); n]);
        let dom = Self::build(
            kind.ok_or_else(|| bad("missing kind".into()))?,
            lower,
            T::lit(h.ok_or_else(|| bad("missing h".into()))?),
            shape,
        )?;
        Ok(dom)
    }
}

#[inline]
pub(crate) fn dist2<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

pub(crate) fn same_domain<T: Real>(a: &Arc<GridDomain<T>>, b: &Arc<GridDomain<T>>) -> Result<()> {
    if Arc::ptr_eq(a, b) || **a == **b {
        Ok(())
    } else {
        Err(Error::DomainMismatch("fields live on different grids".into()))
    }
}

/// One real per node, zero on exterior nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<T> {
    domain: Arc<GridDomain<T>>,
    values: Vec<T>,
}

impl<T: Real> ScalarField<T> {
    pub fn zeros(domain: &Arc<GridDomain<T>>) -> Self {
        ScalarField { domain: Arc::clone(domain), values: vec![T::zero(); domain.len()] }
    }

    pub fn constant(domain: &Arc<GridDomain<T>>, c: T) -> Self {
        Self::from_fn(domain, |_| c)
    }

    /// Samples `f` at every non-exterior node.
    pub fn from_fn(domain: &Arc<GridDomain<T>>, mut f: impl FnMut(&[T]) -> T) -> Self {
        let mut x = vec![T::zero(); domain.dim()];
        let values = (0..domain.len())
            .map(|lin| {
                if domain.node_kind(lin) == NodeKind::Exterior {
                    T::zero()
                } else {
                    domain.coords_into(lin, &mut x);
                    f(&x)
                }
            })
            .collect();
        ScalarField { domain: Arc::clone(domain), values }
    }

    /// Wraps raw values; exterior entries are forced to zero.
    pub fn from_values(domain: &Arc<GridDomain<T>>, mut values: Vec<T>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(Error::DomainMismatch(format!(
                "expected {} values, got {}",
                domain.len(),
                values.len()
            )));
        }
        for (v, k) in values.iter_mut().zip(domain.mask()) {
            if *k == NodeKind::Exterior {
                *v = T::zero();
            }
        }
        Ok(ScalarField { domain: Arc::clone(domain), values })
    }

    pub fn domain(&self) -> &Arc<GridDomain<T>> {
        &self.domain
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        let mut out = self.clone();
        for (v, k) in out.values.iter_mut().zip(self.domain.mask()) {
            *v = if *k == NodeKind::Exterior { T::zero() } else { f(*v) };
        }
        out
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        same_domain(&self.domain, &other.domain)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        ScalarField::from_values(&self.domain, values)
    }

    /// Copy with every non-interior node set to zero.
    pub fn restrict_interior(&self) -> Self {
        let mut out = self.clone();
        for (v, k) in out.values.iter_mut().zip(self.domain.mask()) {
            if *k != NodeKind::Interior {
                *v = T::zero();
            }
        }
        out
    }

    /// `sum over interior nodes of f * h^n`.
    pub fn integral(&self) -> T {
        let s: T = self
            .values
            .iter()
            .zip(self.domain.mask())
            .filter(|(_, k)| **k == NodeKind::Interior)
            .map(|(v, _)| *v)
            .sum();
        s * self.domain.cell_volume()
    }

    /// Integral over the nodes selected by `mask`.
    pub fn integral_over(&self, mask: &[bool]) -> T {
        let s: T = self.values.iter().zip(mask).filter(|(_, m)| **m).map(|(v, _)| *v).sum();
        s * self.domain.cell_volume()
    }

    /// `(integral of |f|^q over mask)^(1/q)`.
    pub fn lq_norm_over(&self, q: T, mask: &[bool]) -> T {
        let s: T = self.values.iter().zip(mask).filter(|(_, m)| **m).map(|(v, _)| v.abs().powf(q)).sum();
        (s * self.domain.cell_volume()).powf(T::one() / q)
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Field-file text: header line then one value per line, 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 26);
        out.push_str(&self.domain.header());
        out.push('\n');
        for v in &self.values {
            let _ = writeln!(out, "{:.16e}", v);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::Parse { line: 1, message: "empty field file".into() })?;
        let domain = Arc::new(GridDomain::from_header(header)?);
        let mut values = Vec::with_capacity(domain.len());
        for (i, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v: f64 = line.parse().map_err(|_| Error::Parse { line: i + 2, message: format!("bad value `{line}`") })?;
            values.push(T::lit(v));
        }
        ScalarField::from_values(&domain, values).map_err(|e| Error::Parse { line: 0, message: e.to_string() })
    }
}

/// `n` reals per node: component `d` at node `c` is the forward difference
/// across the face between `c` and `c + e_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField<T> {
    domain: Arc<GridDomain<T>>,
    values: Vec<T>,
}

impl<T: Real> VectorField<T> {
    pub fn zeros(domain: &Arc<GridDomain<T>>) -> Self {
        VectorField { domain: Arc::clone(domain), values: vec![T::zero(); domain.len() * domain.dim()] }
    }

    pub fn from_values(domain: &Arc<GridDomain<T>>, values: Vec<T>) -> Result<Self> {
        if values.len() != domain.len() * domain.dim() {
            return Err(Error::DomainMismatch("vector field length mismatch".into()));
        }
        Ok(VectorField { domain: Arc::clone(domain), values })
    }

    /// Samples a vector function at every node (all kinds).
    pub fn from_fn(domain: &Arc<GridDomain<T>>, mut f: impl FnMut(&[T]) -> Vec<T>) -> Self {
        let n = domain.dim();
        let mut out = Self::zeros(domain);
        let mut x = vec![T::zero(); n];
        for lin in 0..domain.len() {
            domain.coords_into(lin, &mut x);
            let v = f(&x);
            out.values[lin * n..(lin + 1) * n].copy_from_slice(&v[..n]);
        }
        out
    }

    pub fn domain(&self) -> &Arc<GridDomain<T>> {
        &self.domain
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn at(&self, lin: usize) -> &[T] {
        let n = self.domain.dim();
        &self.values[lin * n..(lin + 1) * n]
    }

    /// Euclidean length per node.
    pub fn magnitude(&self) -> ScalarField<T> {
        let values = (0..self.domain.len()).map(|lin| self.at(lin).iter().map(|&c| c * c).sum::<T>().sqrt()).collect();
        ScalarField { domain: Arc::clone(&self.domain), values }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        same_domain(&self.domain, &other.domain)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| a - b).collect();
        Ok(VectorField { domain: Arc::clone(&self.domain), values })
    }
}

/// Forward differences across every face joining two non-exterior nodes.
pub fn gradient<T: Real>(u: &ScalarField<T>) -> VectorField<T> {
    let dom = u.domain();
    let n = dom.dim();
    let inv_h = T::one() / dom.h();
    let mut out = VectorField::zeros(dom);
    for lin in 0..dom.len() {
        if dom.node_kind(lin) == NodeKind::Exterior {
            continue;
        }
        for d in 0..n {
            if let Some(nb) = dom.neighbor(lin, d, true) {
                if dom.node_kind(nb) != NodeKind::Exterior {
                    out.values[lin * n + d] = (u.values[nb] - u.values[lin]) * inv_h;
                }
            }
        }
    }
    out
}

/// Negative adjoint of [`gradient`]: backward differences of the face values.
pub fn divergence<T: Real>(v: &VectorField<T>) -> ScalarField<T> {
    let dom = v.domain();
    let n = dom.dim();
    let inv_h = T::one() / dom.h();
    let mut values = vec![T::zero(); dom.len()];
    for (lin, out) in values.iter_mut().enumerate() {
        if dom.node_kind(lin) == NodeKind::Exterior {
            continue;
        }
        let mut acc = T::zero();
        for d in 0..n {
            let here = v.values[lin * n + d];
            let back = dom.neighbor(lin, d, false).map_or(T::zero(), |b| v.values[b * n + d]);
            acc += (here - back) * inv_h;
        }
        *out = acc;
    }
    ScalarField { domain: Arc::clone(dom), values }
}

/// Plain sum of `v . w` times `h^n` over all nodes (used by the adjointness check).
pub fn pairing<T: Real>(v: &VectorField<T>, w: &VectorField<T>) -> T {
    v.values.iter().zip(&w.values).map(|(&a, &b)| a * b).sum::<T>() * v.domain.cell_volume()
}

/// Average of `f` over lattice nodes with centre in the open ball `B_rho(center)`.
///
/// Lattice nodes outside the array count towards the ball volume with value zero.
pub fn ball_average<T: Real>(f: &ScalarField<T>, center: &[T], rho: T) -> Result<T> {
    let dom = f.domain();
    let n = dom.dim();
    if !(rho > T::zero()) {
        return Err(Error::Range(format!("ball radius {rho} must be positive")));
    }
    let h = dom.h();
    let lo: Vec<i64> = (0..n).map(|d| ((center[d] - rho - dom.lower()[d]) / h).floor().to_i64().unwrap()).collect();
    let hi: Vec<i64> = (0..n).map(|d| ((center[d] + rho - dom.lower()[d]) / h).ceil().to_i64().unwrap()).collect();
    let mut idx = lo.clone();
    let mut count = 0usize;
    let mut sum = T::zero();
    let r2 = rho * rho;
    loop {
        let mut d2 = T::zero();
        for d in 0..n {
            let x = dom.lower()[d] + h * T::from_i64(idx[d]).unwrap();
            d2 += (x - center[d]) * (x - center[d]);
        }
        if d2 < r2 {
            count += 1;
            let inside = idx.iter().zip(dom.shape()).all(|(&i, &m)| i >= 0 && (i as usize) < m);
            if inside {
                let lin: usize = idx.iter().zip(dom.strides()).map(|(&i, &s)| i as usize * s).sum();
                sum += f.values[lin];
            }
        }
        // odometer increment over the bounding box
        let mut d = n;
        loop {
            if d == 0 {
                return if count == 0 {
                    Err(Error::EmptyBall {
                        center: center.iter().map(|c| c.to_f64_lossy()).collect(),
                        radius: rho.to_f64_lossy(),
                    })
                } else {
                    Ok(sum / T::from_usize_lossy(count))
                };
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] <= hi[d] {
                break;
            }
            idx[d] = lo[d];
        }
    }
}

/// `h^n` times the number of interior nodes with `|f| > lambda`.
pub fn level_measure<T: Real>(f: &ScalarField<T>, lambda: T) -> T {
    let dom = f.domain();
    let count = f
        .values()
        .iter()
        .zip(dom.mask())
        .filter(|(v, k)| **k == NodeKind::Interior && v.abs() > lambda)
        .count();
    dom.cell_volume() * T::from_usize_lossy(count)
}

/// A point mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom<T> {
    pub location: Vec<T>,
    pub weight: T,
}

/// Finite signed measure: atoms plus an optional density.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureData<T> {
    pub atoms: Vec<Atom<T>>,
    pub density: Option<ScalarField<T>>,
}

impl<T: Real> Default for MeasureData<T> {
    fn default() -> Self {
        MeasureData { atoms: Vec::new(), density: None }
    }
}

impl<T: Real> MeasureData<T> {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn dirac(location: Vec<T>, weight: T) -> Self {
        MeasureData { atoms: vec![Atom { location, weight }], density: None }
    }

    pub fn from_density(density: ScalarField<T>) -> Self {
        MeasureData { atoms: Vec::new(), density: Some(density) }
    }

    /// `|mu|(Omega)`.
    pub fn total_mass(&self) -> T {
        let atoms: T = self.atoms.iter().map(|a| a.weight.abs()).sum();
        atoms + self.density.as_ref().map_or(T::zero(), |d| d.map(|v| v.abs()).integral())
    }

    /// Signed total `mu(Omega)`.
    pub fn signed_mass(&self) -> T {
        let atoms: T = self.atoms.iter().map(|a| a.weight).sum();
        atoms + self.density.as_ref().map_or(T::zero(), |d| d.integral())
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.iter().all(|a| a.weight == T::zero())
            && self.density.as_ref().is_none_or(|d| d.values().iter().all(|v| *v == T::zero()))
    }

    /// `|mu|(B_rho(center))` with atoms counted exactly and the density cellwise.
    pub fn ball_mass(&self, center: &[T], rho: T) -> T {
        let atoms: T = self
            .atoms
            .iter()
            .filter(|a| dist2(&a.location, center) < rho * rho)
            .map(|a| a.weight.abs())
            .sum();
        let dens = self.density.as_ref().map_or(T::zero(), |d| {
            let mask = d.domain().ball_mask(center, rho);
            d.map(|v| v.abs()).integral_over(&mask)
        });
        atoms + dens
    }

    /// `|mu|` of the interior nodes selected by `mask` (atoms via nearest node).
    pub fn mass_over(&self, domain: &GridDomain<T>, mask: &[bool]) -> T {
        let atoms: T = self
            .atoms
            .iter()
            .filter(|a| {
                let idx = domain.nearest_lattice(&a.location);
                let inside = idx.iter().zip(domain.shape()).all(|(&i, &m)| i >= 0 && (i as usize) < m);
                inside && {
                    let lin: usize = idx.iter().zip(domain.strides()).map(|(&i, &s)| i as usize * s).sum();
                    mask[lin]
                }
            })
            .map(|a| a.weight.abs())
            .sum();
        atoms + self.density.as_ref().map_or(T::zero(), |d| d.map(|v| v.abs()).integral_over(mask))
    }

    /// Line-oriented text: `atom x1 .. xn weight` and optionally `density <path>`.
    pub fn to_text(&self, density_path: Option<&str>) -> String {
        let mut out = String::new();
        for a in &self.atoms {
            out.push_str("atom");
            for x in &a.location {
                let _ = write!(out, " {:.16e}", x);
            }
            let _ = writeln!(out, " {:.16e}", a.weight);
        }
        if let Some(p) = density_path {
            let _ = writeln!(out, "density {p}");
        }
        out
    }

    /// Parses atoms; returns the density file reference if present.
    pub fn atoms_from_text(text: &str, n: usize) -> Result<(Vec<Atom<T>>, Option<String>)> {
        let mut atoms = Vec::new();
        let mut density = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut toks = line.split_whitespace();
            match toks.next() {
                Some("atom") => {
                    let nums = toks
                        .map(|t| t.parse::<f64>().map(T::lit))
                        .collect::<std::result::Result<Vec<T>, _>>()
                        .map_err(|_| Error::Parse { line: i + 1, message: format!("bad number in `{line}`") })?;
                    if nums.len() != n + 1 {
                        return Err(Error::Parse {
                            line: i + 1,
                            message: format!("atom needs {n} coordinates and a weight"),
                        });
                    }
                    atoms.push(Atom { location: nums[..n].to_vec(), weight: nums[n] });
                }
                Some("density") => {
                    density = Some(toks.collect::<Vec<_>>().join(" "));
                }
                Some(other) => {
                    return Err(Error::Parse { line: i + 1, message: format!("unknown record `{other}`") });
                }
                None => {}
            }
        }
        Ok((atoms, density))
    }
}

fn check_atoms_inside<T: Real>(mu: &MeasureData<T>, domain: &GridDomain<T>) -> Result<()> {
    for a in &mu.atoms {
        if a.location.len() != domain.dim() || !a.location.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidMeasure("atom location has wrong dimension or is not finite".into()));
        }
        if !a.weight.is_finite() {
            return Err(Error::InvalidMeasure("atom weight is not finite".into()));
        }
        if !domain.contains_point(&a.location) {
            return Err(Error::InvalidMeasure(format!(
                "atom at {:?} lies outside the domain",
                a.location.iter().map(|x| x.to_f64_lossy()).collect::<Vec<_>>()
            )));
        }
    }
    Ok(())
}

fn density_base<T: Real>(mu: &MeasureData<T>, domain: &Arc<GridDomain<T>>) -> Result<Vec<T>> {
    match &mu.density {
        Some(d) => {
            same_domain(d.domain(), domain)?;
            Ok(d.restrict_interior().into_values())
        }
        None => Ok(vec![T::zero(); domain.len()]),
    }
}

/// Splits every atom multilinearly onto its `<= 2^n` surrounding nodes.
///
/// Shares landing on non-interior nodes are redistributed over the interior
/// ones so the total mass is kept.
pub fn deposit_atoms<T: Real>(mu: &MeasureData<T>, domain: &Arc<GridDomain<T>>) -> Result<ScalarField<T>> {
    check_atoms_inside(mu, domain)?;
    let mut values = density_base(mu, domain)?;
    let n = domain.dim();
    let vol = domain.cell_volume();
    for a in &mu.atoms {
        let mut base = vec![0i64; n];
        let mut frac = vec![T::zero(); n];
        for d in 0..n {
            let s = (a.location[d] - domain.lower()[d]) / domain.h();
            let f = s.floor();
            base[d] = f.to_i64().unwrap();
            frac[d] = s - f;
        }
        let mut targets: Vec<(usize, T)> = Vec::with_capacity(1 << n);
        for corner in 0..(1usize << n) {
            let mut w = T::one();
            let mut lin = 0usize;
            let mut ok = true;
            for d in 0..n {
                let up = (corner >> d) & 1 == 1;
                w *= if up { frac[d] } else { T::one() - frac[d] };
                let i = base[d] + i64::from(up);
                if i < 0 || i as usize >= domain.shape()[d] {
                    ok = false;
                    break;
                }
                lin += i as usize * domain.strides()[d];
            }
            if ok && w > T::zero() && domain.is_interior(lin) {
                targets.push((lin, w));
            }
        }
        if targets.is_empty() {
            let lin = nearest_interior(domain, &a.location).ok_or_else(|| {
                Error::InvalidMeasure("atom has no interior node nearby".into())
            })?;
            targets.push((lin, T::one()));
        }
        let wsum: T = targets.iter().map(|t| t.1).sum();
        for (lin, w) in targets {
            values[lin] += a.weight * (w / wsum) / vol;
        }
    }
    ScalarField::from_values(domain, values)
}

fn nearest_interior<T: Real>(domain: &GridDomain<T>, x: &[T]) -> Option<usize> {
    let mut best: Option<(T, usize)> = None;
    let mut c = vec![T::zero(); domain.dim()];
    for lin in 0..domain.len() {
        if !domain.is_interior(lin) {
            continue;
        }
        domain.coords_into(lin, &mut c);
        let d = dist2(&c, x);
        if best.is_none_or(|(b, _)| d < b) {
            best = Some((d, lin));
        }
    }
    best.map(|b| b.1)
}

/// Bump radius used at mollification level `k`: `max(D0 / 2^k, 2h)`.
pub fn mollifier_radius<T: Real>(domain: &GridDomain<T>, k: u32) -> T {
    let r = domain.diameter() / T::lit(2.0).powi(k as i32);
    r.max(T::lit(2.0) * domain.h())
}

/// Density `mu_k`: the absolutely continuous part unchanged, every atom
/// replaced by a discretely normalised bump `(1 - |x|^2/r^2)^2` of radius
/// [`mollifier_radius`].
pub fn mollify_measure<T: Real>(mu: &MeasureData<T>, domain: &Arc<GridDomain<T>>, k: u32) -> Result<ScalarField<T>> {
    if k < 1 {
        return Err(Error::Range("mollification level k must be at least 1".into()));
    }
    check_atoms_inside(mu, domain)?;
    let mut values = density_base(mu, domain)?;
    let r = mollifier_radius(domain, k);
    let vol = domain.cell_volume();
    let mut x = vec![T::zero(); domain.dim()];
    let mut bump = vec![T::zero(); domain.len()];
    for a in &mu.atoms {
        let mut total = T::zero();
        for lin in 0..domain.len() {
            bump[lin] = T::zero();
            if !domain.is_interior(lin) {
                continue;
            }
            domain.coords_into(lin, &mut x);
            let s2 = dist2(&x, &a.location) / (r * r);
            if s2 < T::one() {
                let w = (T::one() - s2) * (T::one() - s2);
                bump[lin] = w;
                total += w;
            }
        }
        if total == T::zero() {
            let lin = nearest_interior(domain, &a.location)
                .ok_or_else(|| Error::InvalidMeasure("atom has no interior node nearby".into()))?;
            bump[lin] = T::one();
            total = T::one();
        }
        let scale = a.weight / (total * vol);
        for (v, b) in values.iter_mut().zip(&bump) {
            if *b != T::zero() {
                *v += *b * scale;
            }
        }
    }
    ScalarField::from_values(domain, values)
}
