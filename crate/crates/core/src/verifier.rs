//! Numerical checks of the comparison lemmas and the two main estimates.
//!
//! Unknown constants are measured: every check collects `(lhs, rhs)` samples
//! and reports the smallest `C` with `lhs <= C rhs` on all of them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponents::ExponentConfig;
use crate::fields::{gradient, GridDomain, NodeKind, ScalarField, VectorField};
use crate::lorentz::{band_sets, level_set_family, lorentz_norm, LevelSetFamily, LEVEL_SET_CSV_HEADER};
use crate::maximal::{fractional_maximal, RadiusLadder};
use crate::scalar::Real;
use crate::solver::{
    neg_div_a, solve_frozen, solve_homogeneous, solve_obstacle_free, ObstacleProblem, Region, SolverOptions,
};
use crate::structural::phi_gap;

/// Default refinement band: `|fine / coarse - 1| <= 0.5`.
pub const DEFAULT_BAND: f64 = 0.5;

/// JSON has no literal for non-finite numbers; these travel as `"inf"`, `"-inf"` and `"nan"`.
mod num_codec {
    use serde::de::{DeserializeOwned, Error as _};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    pub enum Num {
        F(f64),
        S(String),
    }

    pub trait Codec: Sized {
        type Repr: Serialize + DeserializeOwned;
        fn enc(&self) -> Self::Repr;
        fn dec(r: Self::Repr) -> Result<Self, String>;
    }

    impl Codec for f64 {
        type Repr = Num;
        fn enc(&self) -> Num {
            if self.is_finite() {
                Num::F(*self)
            } else if self.is_nan() {
                Num::S("nan".into())
            } else if *self > 0.0 {
                Num::S("inf".into())
            } else {
                Num::S("-inf".into())
            }
        }
        fn dec(r: Num) -> Result<f64, String> {
            match r {
                Num::F(v) => Ok(v),
                Num::S(s) => match s.as_str() {
                    "inf" => Ok(f64::INFINITY),
                    "-inf" => Ok(f64::NEG_INFINITY),
                    "nan" => Ok(f64::NAN),
                    _ => Err(format!("expected a number, found `{s}`")),
                },
            }
        }
    }

    impl<T: Codec> Codec for Option<T> {
        type Repr = Option<T::Repr>;
        fn enc(&self) -> Self::Repr {
            self.as_ref().map(T::enc)
        }
        fn dec(r: Self::Repr) -> Result<Self, String> {
            r.map(T::dec).transpose()
        }
    }

    impl<T: Codec> Codec for Vec<T> {
        type Repr = Vec<T::Repr>;
        fn enc(&self) -> Self::Repr {
            self.iter().map(T::enc).collect()
        }
        fn dec(r: Self::Repr) -> Result<Self, String> {
            r.into_iter().map(T::dec).collect()
        }
    }

    impl<T: Codec> Codec for (String, T) {
        type Repr = (String, T::Repr);
        fn enc(&self) -> Self::Repr {
            (self.0.clone(), self.1.enc())
        }
        fn dec(r: Self::Repr) -> Result<Self, String> {
            Ok((r.0, T::dec(r.1)?))
        }
    }

    pub fn serialize<T: Codec, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        v.enc().serialize(s)
    }

    pub fn deserialize<'de, T: Codec, D: Deserializer<'de>>(d: D) -> Result<T, D::Error> {
        T::dec(T::Repr::deserialize(d)?).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub header: Vec<String>,
    #[serde(with = "num_codec")]
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub name: String,
    #[serde(with = "num_codec")]
    pub params: Vec<(String, f64)>,
    #[serde(with = "num_codec")]
    pub lhs: Vec<f64>,
    #[serde(with = "num_codec")]
    pub rhs: Vec<f64>,
    #[serde(with = "num_codec")]
    pub min_constant: f64,
    #[serde(with = "num_codec")]
    pub stability_ratio: Option<f64>,
    pub passed: bool,
    /// Samples with `lhs > 0 = rhs`, excluded from `min_constant`.
    pub flagged: usize,
    #[serde(with = "num_codec")]
    pub extras: Vec<(String, f64)>,
    pub notes: Vec<String>,
    pub table: Option<Table>,
}

/// `max lhs/rhs` with `0/0 -> 0`; `x/0` samples are counted and skipped.
pub fn minimal_constant(lhs: &[f64], rhs: &[f64]) -> (f64, usize) {
    let mut c = 0.0f64;
    let mut flagged = 0;
    for (&l, &r) in lhs.iter().zip(rhs) {
        if l <= 0.0 {
            continue;
        }
        if r <= 0.0 {
            flagged += 1;
            continue;
        }
        c = c.max(l / r);
    }
    (c, flagged)
}

/// `fine / coarse` with `0/0 -> 1`.
pub fn stability_ratio(coarse: f64, fine: f64) -> f64 {
    if coarse == 0.0 && fine == 0.0 {
        1.0
    } else if coarse == 0.0 {
        f64::INFINITY
    } else {
        fine / coarse
    }
}

impl VerificationReport {
    pub fn new(name: impl Into<String>) -> Self {
        VerificationReport {
            name: name.into(),
            params: Vec::new(),
            lhs: Vec::new(),
            rhs: Vec::new(),
            min_constant: 0.0,
            stability_ratio: None,
            passed: true,
            flagged: 0,
            extras: Vec::new(),
            notes: Vec::new(),
            table: None,
        }
    }

    pub fn param(mut self, key: &str, v: f64) -> Self {
        self.params.push((key.to_string(), v));
        self
    }

    pub fn push(&mut self, lhs: f64, rhs: f64) {
        self.lhs.push(lhs);
        self.rhs.push(rhs);
    }

    pub fn extra(&mut self, key: &str, v: f64) {
        self.extras.push((key.to_string(), v));
    }

    pub fn get_extra(&self, key: &str) -> Option<f64> {
        self.extras.iter().find(|(k, _)| k == key).map(|e| e.1)
    }

    /// Recomputes `min_constant`, flags and `passed` from the samples.
    pub fn finish(mut self) -> Self {
        let (c, flagged) = minimal_constant(&self.lhs, &self.rhs);
        self.min_constant = c;
        self.flagged = flagged;
        if flagged > 0 {
            self.notes.push(format!("{flagged} sample(s) with positive lhs and zero rhs excluded"));
        }
        self.passed = c.is_finite();
        self
    }

    /// Attaches the refinement ratio against a coarse-grid run of the same check.
    pub fn with_stability(mut self, coarse: &VerificationReport, band: f64) -> Self {
        let r = stability_ratio(coarse.min_constant, self.min_constant);
        self.stability_ratio = Some(r);
        self.passed = self.min_constant.is_finite() && coarse.min_constant.is_finite() && (r - 1.0).abs() <= band;
        self
    }
}

fn mean_over<T: Real>(f: &ScalarField<T>, mask: &[bool]) -> T {
    let (s, c) = f
        .values()
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .fold((T::zero(), 0usize), |(s, c), (v, _)| (s + *v, c + 1));
    if c == 0 {
        T::zero()
    } else {
        s / T::from_usize_lossy(c)
    }
}

fn masked<T: Real>(f: &ScalarField<T>, mask: &[bool]) -> ScalarField<T> {
    let mut g = f.clone();
    for (v, m) in g.values_mut().iter_mut().zip(mask) {
        if !*m {
            *v = T::zero();
        }
    }
    g
}

fn count(mask: &[bool]) -> usize {
    mask.iter().filter(|m| **m).count()
}

fn f64_of<T: Real>(x: T) -> f64 {
    x.to_f64_lossy()
}

/// `{2^-6, ..., 2^3} * scale`.
fn level_grid(scale: f64) -> Vec<f64> {
    (-6..=3).map(|e| 2f64.powi(e) * scale).collect()
}

fn pointwise<T: Real>(v: &VectorField<T>, i: usize) -> Vec<T> {
    v.at(i).to_vec()
}

/// First technical lemma: `int |v1 - v2|^gamma <= eps int |v1|^gamma +
/// C |B|^{1 - gamma/(p s)} ||Phi(v1, v2)||_{L^{s,oo}}^{gamma/p}` on `region`.
///
/// Also reports the pointwise constant
/// `max (|v1 - v2|^gamma - eps |v1|^gamma) / Phi^{gamma/p}` as `pointwise_constant`.
pub fn check_tech2<T: Real>(
    v1: &VectorField<T>,
    v2: &VectorField<T>,
    p: T,
    eps: T,
    s: T,
    gamma: T,
    region: &[bool],
) -> Result<VerificationReport> {
    if !(gamma > T::zero() && gamma < p * s) {
        return Err(Error::Range(format!("gamma = {gamma} must lie in (0, p s)")));
    }
    if !(eps > T::zero() && eps < T::one()) {
        return Err(Error::Range(format!("eps = {eps} must lie in (0, 1)")));
    }
    let dom = v1.domain();
    let diff = v1.sub(v2)?;
    let mut phi = ScalarField::zeros(dom);
    let mut pointwise_c = 0.0f64;
    for i in 0..dom.len() {
        if !region[i] {
            continue;
        }
        let a = pointwise(v1, i);
        let b = pointwise(v2, i);
        let ph = phi_gap(&a, &b, p);
        phi.values_mut()[i] = ph;
        let d = diff.at(i).iter().map(|&x| x * x).sum::<T>().sqrt();
        let na = a.iter().map(|&x| x * x).sum::<T>().sqrt();
        let num = d.powf(gamma) - eps * na.powf(gamma);
        if ph > T::zero() && num > T::zero() {
            pointwise_c = pointwise_c.max(f64_of(num / ph.powf(gamma / p)));
        }
    }
    let lhs = diff.magnitude().map(|x| x.powf(gamma)).integral_over(region);
    let x = v1.magnitude().map(|x| x.powf(gamma)).integral_over(region);
    let measure = dom.cell_volume() * T::from_usize_lossy(count(region));
    let weak = lorentz_norm(&masked(&phi, region), s, None)?;
    let y = measure.powf(T::one() - gamma / (p * s)) * weak.powf(gamma / p);
    let mut rep = VerificationReport::new("tech2")
        .param("p", f64_of(p))
        .param("eps", f64_of(eps))
        .param("s", f64_of(s))
        .param("gamma", f64_of(gamma));
    rep.push(f64_of((lhs - eps * x).max(T::zero())), f64_of(y));
    rep.extra("pointwise_constant", pointwise_c);
    rep.extra("predicted_exponent", f64_of(T::one() - T::lit(2.0) / p));
    Ok(rep.finish())
}

/// Least-squares slope of `ln y` against `ln x` over positive pairs.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Runs [`check_tech2`] over `eps_list` and fits the exponent of the pointwise
/// constant against `eps`; passes when it is within `0.3` of `1 - 2/p`.
pub fn tech2_eps_sweep<T: Real>(
    v1: &VectorField<T>,
    v2: &VectorField<T>,
    p: T,
    eps_list: &[T],
    s: T,
    gamma: T,
    region: &[bool],
) -> Result<VerificationReport> {
    let mut rep = VerificationReport::new("tech2_eps_sweep").param("p", f64_of(p)).param("gamma", f64_of(gamma));
    let mut xs = Vec::new();
    let mut cs = Vec::new();
    let mut rows = Vec::new();
    for &eps in eps_list {
        let r = check_tech2(v1, v2, p, eps, s, gamma, region)?;
        let pc = r.get_extra("pointwise_constant").unwrap_or(0.0);
        rep.push(r.lhs[0], r.rhs[0]);
        xs.push(f64_of(eps));
        cs.push(pc);
        rows.push(vec![f64_of(eps), r.min_constant, pc]);
    }
    rep.table = Some(Table {
        header: vec!["eps".into(), "minC".into(), "pointwiseC".into()],
        rows,
    });
    let predicted = 1.0 - 2.0 / f64_of(p);
    let slope = loglog_slope(&xs, &cs);
    let mut rep = rep.finish();
    rep.extra("predicted_exponent", predicted);
    match slope {
        Some(sl) => {
            rep.extra("fitted_exponent", sl);
            rep.passed = rep.passed && (sl - predicted).abs() <= 0.3;
        }
        None => {
            rep.notes.push("too few positive constants to fit an exponent".into());
            rep.passed = false;
        }
    }
    Ok(rep)
}

/// Second technical lemma: `||f||_{L^{q/(q+theta),oo}} <= C Pi ||u - v||_{L^{q,oo}}^theta`,
/// with `Pi = max_k k^{-theta} int_{|u-v| <= k} f` over a dyadic `k`-grid.
pub fn check_tech3<T: Real>(
    u: &ScalarField<T>,
    v: &ScalarField<T>,
    f: &ScalarField<T>,
    q: T,
    theta: T,
    region: &[bool],
) -> Result<VerificationReport> {
    if !(q > T::zero() && theta >= T::zero()) {
        return Err(Error::Range(format!("need q > 0 and theta >= 0, got q = {q}, theta = {theta}")));
    }
    let diff = masked(&u.zip_with(v, |a, b| a - b)?, region);
    let fm = masked(f, region);
    let scale = diff.max_abs();
    let f_zero = fm.values().iter().all(|x| *x == T::zero());
    let mut rep = VerificationReport::new("tech3").param("q", f64_of(q)).param("theta", f64_of(theta));
    if scale == T::zero() {
        if !f_zero {
            return Err(Error::DegenerateInput("u = v on the region while f does not vanish".into()));
        }
        rep.push(0.0, 0.0);
        return Ok(rep.finish());
    }
    let cell = u.domain().cell_volume();
    let mut pi = 0.0f64;
    for k in level_grid(f64_of(scale)) {
        let kt = T::lit(k);
        let s: T = (0..diff.values().len())
            .filter(|&i| region[i] && diff.values()[i].abs() <= kt)
            .map(|i| fm.values()[i])
            .sum::<T>()
            * cell;
        pi = pi.max(f64_of(s) / k.powf(f64_of(theta)));
    }
    let lhs = lorentz_norm(&fm, q / (q + theta), None)?;
    let weak = lorentz_norm(&diff, q, None)?;
    rep.push(f64_of(lhs), pi * f64_of(weak).powf(f64_of(theta)));
    rep.extra("Pi", pi);
    Ok(rep.finish())
}

/// `Pi = max_{k,h} k^{-1} int_{B cap E_{k,h}} Phi(Du, Dv)` over dyadic grids.
pub fn measure_pi<T: Real>(u: &ScalarField<T>, v: &ScalarField<T>, p: T, region: &[bool]) -> Result<f64> {
    let diff = masked(&u.zip_with(v, |a, b| a - b)?, region);
    let scale = f64_of(diff.max_abs());
    if scale == 0.0 {
        return Ok(0.0);
    }
    let gu = gradient(u);
    let gv = gradient(v);
    let dom = u.domain();
    let phi: Vec<T> = (0..dom.len())
        .map(|i| if region[i] { phi_gap(gu.at(i), gv.at(i), p) } else { T::zero() })
        .collect();
    let cell = dom.cell_volume();
    let grid = level_grid(scale);
    let mut pi = 0.0f64;
    for &k in &grid {
        for &h in &grid {
            let bands = band_sets(u, v, T::lit(k), T::lit(h))?;
            let s: T = (0..dom.len()).filter(|&i| region[i] && bands.e_kh[i]).map(|i| phi[i]).sum::<T>() * cell;
            pi = pi.max(f64_of(s) / k);
        }
    }
    Ok(pi)
}

/// Third abstract lemma on `region`: the weak bound on `u - v` and the gradient
/// comparison with the `chi1 / chi2` split.
pub fn check_lemma_b1<T: Real>(
    u: &ScalarField<T>,
    v: &ScalarField<T>,
    cfg: &ExponentConfig<T>,
    region: &[bool],
    kappa1: T,
    kappa2: T,
) -> Result<VerificationReport> {
    let p = cfg.p;
    let pi = measure_pi(u, v, p, region)?;
    let diff = masked(&u.zip_with(v, |a, b| a - b)?, region);
    let weak = f64_of(lorentz_norm(&diff, cfg.p_tilde, None)?);
    let gu = gradient(u).magnitude();
    let gd = gradient(u).sub(&gradient(v))?.magnitude();
    let cell = f64_of(u.domain().cell_volume());
    let int_2mp = f64_of(gu.map(|x| x.powf(T::lit(2.0) - p)).integral_over(region));
    let pf = f64_of(p);
    let rhs_a = pi.powf(1.0 / (pf - 1.0)) + pi * int_2mp;
    let (lhs_b, rhs_b) = gradient_split(&gu, &gd, cfg, region, kappa1, kappa2);
    let rhs_b_data = pi.powf(f64_of(cfg.gamma) / (pf - 1.0));
    let mut rep = VerificationReport::new("lemma_b1")
        .param("p", pf)
        .param("gamma", f64_of(cfg.gamma))
        .param("kappa1", f64_of(kappa1))
        .param("kappa2", f64_of(kappa2));
    rep.push(weak, rhs_a);
    rep.push((lhs_b - rhs_b).max(0.0), rhs_b_data);
    rep.extra("Pi", pi);
    rep.extra("cell_volume", cell);
    let rep = rep.finish();
    let (ca, _) = minimal_constant(&rep.lhs[..1], &rep.rhs[..1]);
    let (cb, _) = minimal_constant(&rep.lhs[1..], &rep.rhs[1..]);
    let mut rep = rep;
    rep.extra("C_weak", ca);
    rep.extra("C_grad", cb);
    Ok(rep)
}

/// `(mean |Du - Dv|^gamma, kappa1 chi1 mean |Du|^gamma + kappa2 chi2 (mean |Du|^{2-p})^{gamma/(2-p)})`.
fn gradient_split<T: Real>(
    gu: &ScalarField<T>,
    gd: &ScalarField<T>,
    cfg: &ExponentConfig<T>,
    region: &[bool],
    kappa1: T,
    kappa2: T,
) -> (f64, f64) {
    let g = cfg.gamma;
    let two_p = T::lit(2.0) - cfg.p;
    let lhs = mean_over(&gd.map(|x| x.powf(g)), region);
    let t1 = mean_over(&gu.map(|x| x.powf(g)), region);
    let t2 = mean_over(&gu.map(|x| x.powf(two_p)), region).powf(g / two_p);
    let chi1 = T::from_u8(cfg.chi1).unwrap();
    let chi2 = T::from_u8(cfg.chi2).unwrap();
    (f64_of(lhs), f64_of(kappa1 * chi1 * t1 + kappa2 * chi2 * t2))
}

/// A ball of the comparison sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BallSpec<T> {
    pub center: Vec<T>,
    pub rho: T,
}

/// `|mu|(B)/rho^{n-1} + rho mean_B |div A(D psi)|` with the density restricted to `mask`.
fn data_term<T: Real>(mu_abs: &ScalarField<T>, div_abs: &ScalarField<T>, mask: &[bool], rho: T) -> T {
    let n = mu_abs.domain().dim() as i32;
    mu_abs.integral_over(mask) / rho.powi(n - 1) + rho * mean_over(div_abs, mask)
}

fn interior_only<T: Real>(f: &ScalarField<T>) -> ScalarField<T> {
    let dom = f.domain();
    let mut g = f.clone();
    for (i, v) in g.values_mut().iter_mut().enumerate() {
        if !dom.is_interior(i) {
            *v = T::zero();
        }
    }
    g
}

/// Obstacle-free comparison on each ball: `v` solves `-div A(Dv) = -div A(D psi)`
/// in the ball with `v = u` outside; the sample is
/// `(mean|Du - Dv|^gamma - kappa terms)_+` against `[data term]^{gamma/(p-1)}`.
pub fn check_comparison<T: Real>(
    prob: &ObstacleProblem<T>,
    u: &ScalarField<T>,
    balls: &[BallSpec<T>],
    cfg: &ExponentConfig<T>,
    kappa1: T,
    kappa2: T,
    opts: &SolverOptions<T>,
) -> Result<VerificationReport> {
    let mu_abs = prob.rhs()?.map(|v| v.abs());
    let div_abs = interior_only(&neg_div_a(&prob.psi, &prob.coeff, prob.p, prob.eps_reg)?.map(|v| v.abs()));
    let gu = gradient(u);
    let gu_mag = gu.magnitude();
    let expo = cfg.gamma / (prob.p - T::one());
    let mut rep = VerificationReport::new("comparison_obstacle_free")
        .param("gamma", f64_of(cfg.gamma))
        .param("kappa1", f64_of(kappa1))
        .param("kappa2", f64_of(kappa2));
    let mut rows = Vec::new();
    for ball in balls {
        let region = Region::ball(&prob.domain, &ball.center, ball.rho)?;
        let v = solve_obstacle_free(u, &prob.psi, &region, prob, opts)?;
        let gd = gu.sub(&gradient(&v.u))?.magnitude();
        let (lhs, kap) = gradient_split(&gu_mag, &gd, cfg, &region.active, kappa1, kappa2);
        let data = f64_of(data_term(&mu_abs, &div_abs, &region.active, ball.rho).powf(expo));
        let l = (lhs - kap).max(0.0);
        rep.push(l, data);
        let below = (0..u.values().len())
            .filter(|&i| region.active[i] && f64_of(v.u.values()[i]) < f64_of(prob.psi.values()[i]) - 1e-10 * (1.0 + f64_of(prob.psi.values()[i].abs())))
            .count();
        let mut row: Vec<f64> = ball.center.iter().map(|&c| f64_of(c)).collect();
        row.extend([f64_of(ball.rho), lhs, kap, data, below as f64]);
        rows.push(row);
    }
    let mut header: Vec<String> = (0..prob.domain.dim()).map(|d| format!("x{d}")).collect();
    header.extend(["rho", "lhs", "kappa_terms", "data", "below_obstacle"].map(String::from));
    rep.table = Some(Table { header, rows });
    Ok(rep.finish())
}

/// Full interior cascade `u -> v (B) -> w (B/2) -> u~ (B/4, frozen)` on each ball.
///
/// Samples alternate between the gradient comparison on `B/4` and the
/// `L^oo` bound of `Du~` on `B/8`.
pub fn check_comparison_frozen<T: Real>(
    prob: &ObstacleProblem<T>,
    u: &ScalarField<T>,
    balls: &[BallSpec<T>],
    cfg: &ExponentConfig<T>,
    kappa1: T,
    kappa2: T,
    opts: &SolverOptions<T>,
) -> Result<VerificationReport> {
    cascade(prob, u, balls, cfg, kappa1, kappa2, opts, "comparison_frozen")
}

/// Boundary cascade on `Omega_rho = B_rho(xi) cap Omega` with `xi` on the
/// boundary; the radii follow the interior cascade. Reports both `|mu|(B)` and
/// `|mu|(Omega_rho)` versions of the data term.
pub fn check_comparison_boundary<T: Real>(
    prob: &ObstacleProblem<T>,
    u: &ScalarField<T>,
    balls: &[BallSpec<T>],
    cfg: &ExponentConfig<T>,
    kappa1: T,
    kappa2: T,
    opts: &SolverOptions<T>,
) -> Result<VerificationReport> {
    for b in balls {
        let idx = prob.domain.nearest_lattice(&b.center);
        let on_boundary = idx.iter().zip(prob.domain.shape()).all(|(&i, &m)| i >= 0 && (i as usize) < m) && {
            let lin: usize = idx.iter().zip(prob.domain.strides()).map(|(&i, &s)| i as usize * s).sum();
            prob.domain.node_kind(lin) == NodeKind::Boundary
        };
        if !on_boundary {
            return Err(Error::Range("boundary comparison needs centres on the boundary".into()));
        }
    }
    cascade(prob, u, balls, cfg, kappa1, kappa2, opts, "comparison_boundary")
}

#[allow(clippy::too_many_arguments)]
fn cascade<T: Real>(
    prob: &ObstacleProblem<T>,
    u: &ScalarField<T>,
    balls: &[BallSpec<T>],
    cfg: &ExponentConfig<T>,
    kappa1: T,
    kappa2: T,
    opts: &SolverOptions<T>,
    name: &str,
) -> Result<VerificationReport> {
    let dom = &prob.domain;
    let mu = prob.rhs()?;
    let mu_abs = mu.map(|v| v.abs());
    let div_abs = interior_only(&neg_div_a(&prob.psi, &prob.coeff, prob.p, prob.eps_reg)?.map(|v| v.abs()));
    let gu = gradient(u);
    let gu_mag = gu.magnitude();
    let p = prob.p;
    let g = cfg.gamma;
    let two_p = T::lit(2.0) - p;
    let quarter = T::lit(0.25);
    let mut rep = VerificationReport::new(name)
        .param("gamma", f64_of(g))
        .param("kappa1", f64_of(kappa1))
        .param("kappa2", f64_of(kappa2))
        .param("delta", f64_of(cfg.delta));
    let mut rows = Vec::new();
    for ball in balls {
        let big = Region::ball(dom, &ball.center, ball.rho)?;
        let half = Region::ball(dom, &ball.center, ball.rho / T::lit(2.0))?;
        let inner = Region::ball(dom, &ball.center, ball.rho * quarter)?;
        let v = solve_obstacle_free(u, &prob.psi, &big, prob, opts)?;
        let w = solve_homogeneous(&v.u, &half, prob, opts)?;
        let ut = solve_frozen(&w.u, &inner, prob, opts)?;
        let gd = gu.sub(&gradient(&ut.report.u))?.magnitude();
        let (lhs, _) = gradient_split(&gu_mag, &gd, cfg, &inner.active, kappa1, kappa2);
        let chi1 = T::from_u8(cfg.chi1).unwrap();
        let chi2 = T::from_u8(cfg.chi2).unwrap();
        let t1 = mean_over(&gu_mag.map(|x| x.powf(g)), &inner.active);
        let t2 = mean_over(&gu_mag.map(|x| x.powf(two_p)), &inner.active);
        let kap = kappa1 * chi1 * t1 + (kappa2 + cfg.delta) * chi2 * t2.powf(g / two_p);
        let n = dom.dim() as i32;
        let div_term = ball.rho * mean_over(&div_abs, &inner.active);
        let mass_omega = mu_abs.integral_over(&inner.active);
        let mass_ball = prob.mu.ball_mass(&ball.center, ball.rho * quarter).max(mass_omega);
        let data_omega = mass_omega / ball.rho.powi(n - 1) + div_term;
        let data_ball = mass_ball / ball.rho.powi(n - 1) + div_term;
        let data = data_ball.max(data_omega);
        // gradient comparison on B/4
        rep.push(f64_of((T::lit(lhs) - kap).max(T::zero())), f64_of(data.powf(g / (p - T::one()))));
        // L^oo bound on B/8
        let sup_rhs = t1.powf(T::one() / g)
            + data.powf(T::one() / (p - T::one()));
        let sup_lhs = (ut.grad_sup_half - kappa1 * chi2 * t2.powf(T::one() / two_p)).max(T::zero());
        rep.push(f64_of(sup_lhs), f64_of(sup_rhs));
        let mut row: Vec<f64> = ball.center.iter().map(|&c| f64_of(c)).collect();
        row.extend([
            f64_of(ball.rho),
            lhs,
            f64_of(kap),
            f64_of(data_omega),
            f64_of(data_ball),
            f64_of(ut.grad_sup_half),
        ]);
        rows.push(row);
    }
    let mut header: Vec<String> = (0..dom.dim()).map(|d| format!("x{d}")).collect();
    header.extend(["rho", "lhs", "kappa_terms", "data_omega", "data_ball", "grad_sup"].map(String::from));
    rep.table = Some(Table { header, rows });
    Ok(rep.finish())
}

/// Maximal fields entering the level-set and Lorentz estimates.
#[derive(Debug, Clone)]
pub struct MaximalFields<T> {
    /// `M_alpha(|Du|^gamma)`
    pub m_grad: ScalarField<T>,
    /// `[M_sigma(|Du|^{2-p})]^{gamma/(2-p)}`, zero when `chi2 = 0` unless forced
    pub m_holder: ScalarField<T>,
    /// `[M_beta(mu) + M_beta(div A(D psi))]^{gamma/(p-1)}`
    pub m_data: ScalarField<T>,
}

/// Computes the three maximal fields on one ladder. `holder` forces the
/// `M_sigma` field even when `chi2 = 0`.
pub fn maximal_fields<T: Real>(
    prob: &ObstacleProblem<T>,
    u: &ScalarField<T>,
    cfg: &ExponentConfig<T>,
    ladder: &RadiusLadder<T>,
    holder: bool,
) -> Result<MaximalFields<T>> {
    let gmag = gradient(u).magnitude();
    let p = prob.p;
    let two_p = T::lit(2.0) - p;
    let m_grad = fractional_maximal(&gmag.map(|x| x.powf(cfg.gamma)), cfg.alpha, ladder)?;
    let m_holder = if cfg.chi2 == 1 || holder {
        fractional_maximal(&gmag.map(|x| x.powf(two_p)), cfg.sigma, ladder)?.map(|x| x.powf(cfg.gamma / two_p))
    } else {
        ScalarField::zeros(u.domain())
    };
    let data = data_maximal(prob, cfg.beta, ladder)?;
    let m_data = data.map(|x| x.powf(cfg.gamma / (p - T::one())));
    Ok(MaximalFields { m_grad, m_holder, m_data })
}

/// `M_beta(|mu|) + M_beta(|div A(D psi)|)`.
pub fn data_maximal<T: Real>(prob: &ObstacleProblem<T>, beta: T, ladder: &RadiusLadder<T>) -> Result<ScalarField<T>> {
    let mu_abs = prob.rhs()?.map(|v| v.abs());
    let div_abs = interior_only(&neg_div_a(&prob.psi, &prob.coeff, prob.p, prob.eps_reg)?.map(|v| v.abs()));
    let a = fractional_maximal(&mu_abs, beta, ladder)?;
    let b = fractional_maximal(&div_abs, beta, ladder)?;
    a.zip_with(&b, |x, y| x + y)
}

/// `n` log-spaced points between `lo` and `hi`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Default lambda grid: 20 log-spaced points spanning three decades below
/// `max M_alpha(|Du|^gamma) / a`.
pub fn default_lambda_grid<T: Real>(fields: &MaximalFields<T>, a: T) -> Vec<f64> {
    let top = f64_of(fields.m_grad.max_abs() / a);
    if top <= 0.0 {
        return vec![1.0];
    }
    log_grid(top * 1e-3, top, 20)
}

pub const THEOREM_A_CSV_HEADER: &str = "lambda,V1,V2,V3,V,W,minC";

/// Level-set decay estimate: for each `lambda`,
/// `|V1| <= chi2 |V2| + |V3| + C eps |W|`; reports `C(lambda)` per row and
/// the supremum as `min_constant`.
pub fn check_theorem_a<T: Real>(
    fields: &MaximalFields<T>,
    cfg: &ExponentConfig<T>,
    lambda_grid: &[f64],
) -> Result<VerificationReport> {
    if lambda_grid.is_empty() {
        return Err(Error::EmptyLambdaGrid);
    }
    let mut rep = VerificationReport::new("theorem_a")
        .param("n", cfg.n as f64)
        .param("p", f64_of(cfg.p))
        .param("gamma", f64_of(cfg.gamma))
        .param("alpha", f64_of(cfg.alpha))
        .param("a", f64_of(cfg.a))
        .param("epsilon", f64_of(cfg.epsilon));
    let dil = cfg.dilation_bound();
    if cfg.a <= dil {
        rep.notes.push(format!(
            "warning: a = {} does not exceed 3^(n-alpha) = {}; the covering hypothesis fails",
            cfg.a, dil
        ));
    }
    let mut rows = Vec::new();
    let mut relations = true;
    let mut max_v = 0.0f64;
    for &lam in lambda_grid {
        let fam: LevelSetFamily<T> = level_set_family(&fields.m_grad, &fields.m_holder, &fields.m_data, cfg, T::lit(lam))?;
        relations &= fam.relations_hold();
        let [v1, v2, v3, v, w] = fam.measures.map(f64_of);
        let chi2 = f64::from(cfg.chi2);
        let lhs = (v1 - chi2 * v2 - v3).max(0.0);
        let rhs = f64_of(cfg.epsilon) * w;
        rep.push(lhs, rhs);
        let c = minimal_constant(&[lhs], &[rhs]).0;
        max_v = max_v.max(v);
        rows.push(vec![lam, v1, v2, v3, v, w, c]);
    }
    rep.table = Some(Table { header: THEOREM_A_CSV_HEADER.split(',').map(String::from).collect(), rows });
    let mut rep = rep.finish();
    rep.extra("relations_hold", if relations { 1.0 } else { 0.0 });
    rep.extra("max_V", max_v);
    if !relations {
        rep.passed = false;
        rep.notes.push("set relations V in V1 in W violated".into());
    }
    debug_assert_eq!(LEVEL_SET_CSV_HEADER, &THEOREM_A_CSV_HEADER[..THEOREM_A_CSV_HEADER.len() - 5]);
    Ok(rep)
}

/// Desk-scale form of the first level-set lemma: `max_lambda |V| < eps |B_{R0}|`.
pub fn check_small_v<T: Real>(theorem_a: &VerificationReport, cfg: &ExponentConfig<T>, r0_ball: f64) -> VerificationReport {
    let n = cfg.n as i32;
    let ball = crate::solver::sphere_area::<f64>(cfg.n) / f64::from(n) * r0_ball.powi(n);
    let max_v = theorem_a.get_extra("max_V").unwrap_or(0.0);
    let eps = f64_of(cfg.epsilon);
    let mut rep = VerificationReport::new("small_v").param("R0", r0_ball).param("epsilon", eps);
    rep.push(max_v, eps * ball);
    let mut rep = rep.finish();
    rep.passed = max_v < eps * ball;
    rep
}

/// Lorentz bound: `||M_alpha(|Du|^gamma)||_{L^{q,s}}` against the data norm
/// (and, for `chi2 = 1`, the `eps`-trade-off against the Hölder term).
pub fn check_theorem_b<T: Real>(
    fields: &MaximalFields<T>,
    cfg: &ExponentConfig<T>,
    q: T,
    s: Option<T>,
    eps_list: &[T],
) -> Result<VerificationReport> {
    let lhs = f64_of(lorentz_norm(&fields.m_grad, q, s)?);
    let data = f64_of(lorentz_norm(&fields.m_data, q, s)?);
    let hold = f64_of(lorentz_norm(&fields.m_holder, q, s)?);
    let mut rep = VerificationReport::new("theorem_b")
        .param("q", f64_of(q))
        .param("s", s.map_or(f64::INFINITY, f64_of))
        .param("gamma", f64_of(cfg.gamma))
        .param("alpha", f64_of(cfg.alpha));
    rep.extra("lhs_norm", lhs);
    rep.extra("data_norm", data);
    rep.extra("holder_norm", hold);
    if cfg.chi2 == 0 {
        rep.push(lhs, data);
    } else {
        let mut rows = Vec::new();
        for &e in eps_list {
            let e = f64_of(e);
            let l = (lhs - e * hold).max(0.0);
            rep.push(l, data);
            rows.push(vec![e, minimal_constant(&[l], &[data]).0]);
        }
        rep.table = Some(Table { header: vec!["eps".into(), "C".into()], rows });
    }
    Ok(rep.finish())
}

/// `alpha = 0` reduction: `||Du||_{L^{q gamma, s gamma}} <= C ||[M_1(mu) + M_1(div A(D psi))]^{1/(p-1)}||`.
pub fn check_gradient_reduction<T: Real>(
    prob: &ObstacleProblem<T>,
    u: &ScalarField<T>,
    cfg: &ExponentConfig<T>,
    q: T,
    s: Option<T>,
    ladder: &RadiusLadder<T>,
) -> Result<VerificationReport> {
    let g = cfg.gamma;
    let gmag = interior_only(&gradient(u).magnitude());
    let data = data_maximal(prob, T::one(), ladder)?.map(|x| x.powf(T::one() / (prob.p - T::one())));
    let lhs = f64_of(lorentz_norm(&gmag, q * g, s.map(|s| s * g))?);
    let rhs = f64_of(lorentz_norm(&data, q * g, s.map(|s| s * g))?);
    let mut rep = VerificationReport::new("gradient_reduction")
        .param("q", f64_of(q))
        .param("s", s.map_or(f64::INFINITY, f64_of))
        .param("gamma", f64_of(g));
    rep.push(lhs, rhs);
    Ok(rep.finish())
}

/// Pointwise `M_alpha(|g|^gamma) <= [M_sigma(|g|^{2-p})]^{gamma/(2-p)}` on one ladder.
pub fn check_holder_embedding<T: Real>(
    u_grad: &VectorField<T>,
    cfg: &ExponentConfig<T>,
    ladder: &RadiusLadder<T>,
) -> Result<VerificationReport> {
    let two_p = T::lit(2.0) - cfg.p;
    if cfg.gamma > two_p {
        return Err(Error::Range(format!("gamma = {} exceeds 2 - p = {}", cfg.gamma, two_p)));
    }
    let g = u_grad.magnitude();
    let lhs = fractional_maximal(&g.map(|x| x.powf(cfg.gamma)), cfg.alpha, ladder)?;
    let rhs = fractional_maximal(&g.map(|x| x.powf(two_p)), cfg.sigma, ladder)?.map(|x| x.powf(cfg.gamma / two_p));
    let mut rep = VerificationReport::new("holder_embedding").param("gamma", f64_of(cfg.gamma));
    let dom: &GridDomain<T> = u_grad.domain();
    let mut violations = 0usize;
    let mut worst = 0.0f64;
    for i in 0..dom.len() {
        let (l, r) = (f64_of(lhs.values()[i]), f64_of(rhs.values()[i]));
        rep.push(l, r);
        if l > r * (1.0 + 1e-12) + 1e-300 {
            violations += 1;
        }
        if r > 0.0 {
            worst = worst.max(l / r);
        }
    }
    let mut rep = rep.finish();
    rep.extra("violations", violations as f64);
    rep.extra("max_ratio", worst);
    rep.passed = violations == 0;
    Ok(rep)
}
