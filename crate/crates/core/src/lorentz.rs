//! Distribution functions, Lorentz quasi-norms, band sets and the level-set
//! family used by the decay estimate.

use crate::error::{Error, Result};
use crate::exponents::ExponentConfig;
use crate::fields::{same_domain, ScalarField};
use crate::scalar::Real;

/// `lambda -> |{|f| > lambda}|` over the interior nodes, backed by sorted values.
#[derive(Debug, Clone)]
pub struct DistributionFunction<T> {
    sorted: Vec<T>,
    cell: T,
}

impl<T: Real> DistributionFunction<T> {
    pub fn new(f: &ScalarField<T>) -> Self {
        let dom = f.domain();
        let mut sorted: Vec<T> = f
            .values()
            .iter()
            .enumerate()
            .filter(|(i, _)| dom.is_interior(*i))
            .map(|(_, v)| v.abs())
            .collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite field values"));
        DistributionFunction { sorted, cell: dom.cell_volume() }
    }

    /// Number of interior nodes with `|f| > lambda`.
    pub fn count_above(&self, lambda: T) -> usize {
        self.sorted.len() - self.sorted.partition_point(|&v| v <= lambda)
    }

    pub fn eval(&self, lambda: T) -> T {
        self.cell * T::from_usize_lossy(self.count_above(lambda))
    }

    /// Distinct positive values in decreasing order with `#{|f| >= v}`.
    pub fn steps(&self) -> Vec<(T, usize)> {
        let mut out: Vec<(T, usize)> = Vec::new();
        let len = self.sorted.len();
        let mut i = len;
        while i > 0 {
            let v = self.sorted[i - 1];
            if v <= T::zero() {
                break;
            }
            let j = self.sorted.partition_point(|&x| x < v);
            out.push((v, len - j));
            i = j;
        }
        out
    }

    pub fn cell_volume(&self) -> T {
        self.cell
    }
}

/// Lorentz quasi-norm `||f||_{L^{q,s}}` over the interior; `s = None` is `s = oo`.
///
/// For finite `s` this is `[q int_0^oo lambda^{s-1} d_f(lambda)^{s/q} dlambda]^{1/s}`,
/// integrated exactly between consecutive distinct values of `|f|`.
pub fn lorentz_norm<T: Real>(f: &ScalarField<T>, q: T, s: Option<T>) -> Result<T> {
    if !(q > T::zero() && q.is_finite()) {
        return Err(Error::Range(format!("q = {q} must lie in (0, oo)")));
    }
    if let Some(s) = s {
        if !(s > T::zero() && s.is_finite()) {
            return Err(Error::Range(format!("s = {s} must lie in (0, oo]")));
        }
    }
    let dist = DistributionFunction::new(f);
    let steps = dist.steps();
    let cell = dist.cell_volume();
    match s {
        None => Ok(steps
            .iter()
            .map(|&(v, c)| v * (cell * T::from_usize_lossy(c)).powf(T::one() / q))
            .fold(T::zero(), T::max)),
        Some(s) => {
            let mut acc = T::zero();
            for (i, &(v, c)) in steps.iter().enumerate() {
                let next = steps.get(i + 1).map_or(T::zero(), |t| t.0);
                let d = cell * T::from_usize_lossy(c);
                acc += d.powf(s / q) * (v.powf(s) - next.powf(s)) / s;
            }
            Ok((q * acc).powf(T::one() / s))
        }
    }
}

/// `E_{k,h} = {h < |u - v| < k + h}` and `F_h = {|u - v| > h}` on interior nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSets {
    pub e_kh: Vec<bool>,
    pub f_h: Vec<bool>,
}

pub fn band_sets<T: Real>(u: &ScalarField<T>, v: &ScalarField<T>, k: T, h: T) -> Result<BandSets> {
    same_domain(u.domain(), v.domain())?;
    if !(k > T::zero() && h > T::zero()) {
        return Err(Error::Range(format!("band levels must be positive, got k = {k}, h = {h}")));
    }
    let dom = u.domain();
    let mut e_kh = vec![false; dom.len()];
    let mut f_h = vec![false; dom.len()];
    for i in 0..dom.len() {
        if !dom.is_interior(i) {
            continue;
        }
        let d = (u.values()[i] - v.values()[i]).abs();
        f_h[i] = d > h;
        e_kh[i] = d > h && d < k + h;
    }
    Ok(BandSets { e_kh, f_h })
}

/// The five threshold sets of the level-set decay estimate at one `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetFamily<T> {
    pub lambda: T,
    pub epsilon: T,
    pub a: T,
    pub v1: Vec<bool>,
    pub v2: Vec<bool>,
    pub v3: Vec<bool>,
    pub v: Vec<bool>,
    pub w: Vec<bool>,
    /// `|V1|, |V2|, |V3|, |V|, |W|`
    pub measures: [T; 5],
}

pub const LEVEL_SET_CSV_HEADER: &str = "lambda,V1,V2,V3,V,W";

impl<T: Real> LevelSetFamily<T> {
    pub fn csv_row(&self) -> String {
        let mut s = format!("{:.16e}", self.lambda);
        for m in &self.measures {
            s.push_str(&format!(",{m:.16e}"));
        }
        s
    }

    /// `V in V1`, `V` disjoint from `V2` and `V3`, and `V1 in W` when `a > 1`.
    pub fn relations_hold(&self) -> bool {
        let sub = |a: &[bool], b: &[bool]| a.iter().zip(b).all(|(x, y)| !*x || *y);
        let disjoint = |a: &[bool], b: &[bool]| a.iter().zip(b).all(|(x, y)| !(*x && *y));
        sub(&self.v, &self.v1)
            && disjoint(&self.v, &self.v2)
            && disjoint(&self.v, &self.v3)
            && (self.a <= T::one() || sub(&self.v1, &self.w))
    }
}

/// Builds the set family from the precomputed fields
/// `m_grad = M_alpha(|Du|^gamma)`, `m_holder = [M_sigma(|Du|^{2-p})]^{gamma/(2-p)}`
/// and `m_data = [M_beta(mu) + M_beta(div A(D psi))]^{gamma/(p-1)}`,
/// using `cfg.a` and `cfg.epsilon`.
pub fn level_set_family<T: Real>(
    m_grad: &ScalarField<T>,
    m_holder: &ScalarField<T>,
    m_data: &ScalarField<T>,
    cfg: &ExponentConfig<T>,
    lambda: T,
) -> Result<LevelSetFamily<T>> {
    same_domain(m_grad.domain(), m_holder.domain())?;
    same_domain(m_grad.domain(), m_data.domain())?;
    if !(lambda > T::zero()) {
        return Err(Error::Range(format!("lambda = {lambda} must be positive")));
    }
    let dom = m_grad.domain();
    let (a, eps) = (cfg.a, cfg.epsilon);
    let len = dom.len();
    let mut fam = LevelSetFamily {
        lambda,
        epsilon: eps,
        a,
        v1: vec![false; len],
        v2: vec![false; len],
        v3: vec![false; len],
        v: vec![false; len],
        w: vec![false; len],
        measures: [T::zero(); 5],
    };
    let t2 = eps.powf(-cfg.gamma) * lambda;
    let t3 = eps * eps * lambda;
    let mut counts = [0usize; 5];
    for i in 0..len {
        if !dom.is_interior(i) {
            continue;
        }
        let g = m_grad.values()[i];
        fam.v1[i] = g > a * lambda;
        fam.v2[i] = cfg.chi2 == 1 && m_holder.values()[i] > t2;
        fam.v3[i] = m_data.values()[i] > t3;
        fam.w[i] = g > lambda;
        fam.v[i] = fam.v1[i] && !fam.v2[i] && !fam.v3[i];
        for (c, hit) in counts.iter_mut().zip([fam.v1[i], fam.v2[i], fam.v3[i], fam.v[i], fam.w[i]]) {
            *c += usize::from(hit);
        }
    }
    let cell = dom.cell_volume();
    for (m, c) in fam.measures.iter_mut().zip(counts) {
        *m = cell * T::from_usize_lossy(c);
    }
    Ok(fam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exponents::derive_exponents;
    use crate::fields::GridDomain;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn unit_grid(m: usize) -> Arc<GridDomain<f64>> {
        // interior is (m-2)^2 nodes of volume h^2
        Arc::new(GridDomain::cube(2, m, 0.0, 1.0).unwrap())
    }

    /// Indicator of the first `cells` interior nodes.
    fn indicator(d: &Arc<GridDomain<f64>>, cells: usize) -> ScalarField<f64> {
        let mut f = ScalarField::zeros(d);
        let mut left = cells;
        for i in 0..d.len() {
            if left > 0 && d.is_interior(i) {
                f.values_mut()[i] = 1.0;
                left -= 1;
            }
        }
        f
    }

    #[test]
    fn indicator_closed_forms() {
        // h = 1/8, 16 cells give measure 0.25
        let d = unit_grid(9);
        let f = indicator(&d, 16);
        assert!((lorentz_norm(&f, 2.0, None).unwrap() - 0.5).abs() < 1e-12);
        let v = lorentz_norm(&f, 1.0, Some(2.0)).unwrap();
        assert!((v - 0.5f64.sqrt() * 0.25).abs() < 1e-12);
        assert!((v - 0.176777).abs() < 1e-6);
    }

    #[test]
    fn zero_field_has_zero_norm() {
        let d = unit_grid(9);
        let z = ScalarField::zeros(&d);
        assert_eq!(lorentz_norm(&z, 2.0, Some(3.0)).unwrap(), 0.0);
        assert_eq!(lorentz_norm(&z, 2.0, None).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_index_is_lq() {
        let d = unit_grid(12);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = ScalarField::from_fn(&d, |_| rng.gen_range(-2.0..2.0));
        let mask = d.interior_mask();
        for q in [0.7, 1.0, 2.0, 3.5] {
            let a = lorentz_norm(&f, q, Some(q)).unwrap();
            let b = f.lq_norm_over(q, &mask);
            assert!((a - b).abs() < 1e-10 * b.max(1.0), "q {q}: {a} vs {b}");
        }
    }

    #[test]
    fn distribution_matches_direct_count() {
        let d = unit_grid(15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = ScalarField::from_fn(&d, |_| (rng.gen_range(0..20) as f64) * 0.25);
        let dist = DistributionFunction::new(&f);
        for _ in 0..100 {
            let lambda = rng.gen_range(0.0..5.5);
            let direct = (0..d.len()).filter(|&i| d.is_interior(i) && f.values()[i].abs() > lambda).count();
            assert_eq!(dist.count_above(lambda), direct);
        }
        let lambda = 1.0;
        assert_eq!(dist.eval(lambda), crate::fields::level_measure(&f, lambda));
    }

    #[test]
    fn band_set_cases() {
        let d = unit_grid(7);
        let u = ScalarField::from_fn(&d, |x| x[0]);
        let e = band_sets(&u, &u, 1.0, 1.0).unwrap();
        assert!(e.e_kh.iter().all(|b| !b) && e.f_h.iter().all(|b| !b));
        let two = ScalarField::constant(&d, 2.0);
        let zero = ScalarField::zeros(&d);
        let b = band_sets(&two, &zero, 1.0, 1.0).unwrap();
        assert!(b.e_kh.iter().all(|x| !x));
        assert_eq!(b.f_h, d.interior_mask());
        let one_half = ScalarField::constant(&d, 1.5);
        let b = band_sets(&one_half, &zero, 1.0, 1.0).unwrap();
        assert_eq!(b.e_kh, d.interior_mask());
        assert_eq!(b.f_h, d.interior_mask());
        let other = Arc::new(GridDomain::<f64>::cube(2, 9, 0.0, 1.0).unwrap());
        assert!(matches!(band_sets(&u, &ScalarField::zeros(&other), 1.0, 1.0), Err(Error::DomainMismatch(_))));
    }

    #[test]
    fn level_sets_zero_and_chi2_branch() {
        let d = unit_grid(9);
        let z = ScalarField::zeros(&d);
        let cfg = derive_exponents(2, 1.5, 0.6, 0.3).unwrap();
        let fam = level_set_family(&z, &z, &z, &cfg, 1.0).unwrap();
        assert_eq!(fam.measures, [0.0; 5]);
        assert_eq!(cfg.chi2, 0);
        let big = ScalarField::constant(&d, 1e9);
        let fam = level_set_family(&z, &big, &z, &cfg, 1.0).unwrap();
        assert!(fam.v2.iter().all(|b| !b));
    }

    #[test]
    fn level_sets_match_per_cell_check() {
        let d = unit_grid(9);
        let cfg = derive_exponents(3, 1.3, 0.4, 0.5).unwrap();
        assert_eq!(cfg.chi2, 1);
        let g = ScalarField::from_fn(&d, |x| 10.0 * x[0] + x[1]);
        let hld = ScalarField::from_fn(&d, |x| 3.0 * x[1]);
        let dat = ScalarField::from_fn(&d, |x| 0.05 * (x[0] + x[1]));
        let lambda = 2.0;
        let fam = level_set_family(&g, &hld, &dat, &cfg, lambda).unwrap();
        for i in 0..d.len() {
            if !d.is_interior(i) {
                assert!(!fam.v1[i] && !fam.w[i]);
                continue;
            }
            let v1 = g.values()[i] > cfg.a * lambda;
            let v2 = hld.values()[i] > cfg.epsilon.powf(-cfg.gamma) * lambda;
            let v3 = dat.values()[i] > cfg.epsilon * cfg.epsilon * lambda;
            assert_eq!(fam.v1[i], v1);
            assert_eq!(fam.v2[i], v2);
            assert_eq!(fam.v3[i], v3);
            assert_eq!(fam.v[i], v1 && !v2 && !v3);
            assert_eq!(fam.w[i], g.values()[i] > lambda);
        }
        assert!(fam.relations_hold());
        assert_eq!(fam.csv_row().split(',').count(), 6);
    }
}
