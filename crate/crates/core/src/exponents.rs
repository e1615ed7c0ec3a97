//! Exponent calculus: the admissible `gamma` window, the companion
//! maximal-operator orders and the Marcinkiewicz exponent `p_tilde`.

use std::fmt::Write as _;

use crate::error::{range_err, Error, Result};
use crate::scalar::Real;

/// Relative tolerance for closed-form relations between exponents.
pub const RELATION_RTOL: f64 = 1e-12;

/// Every scalar parameter entering the estimates, validated as a whole.
///
/// Instances are only built through [`derive_exponents`] (or the text parser),
/// so the relations between the fields always hold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentConfig<T> {
    pub n: usize,
    pub p: T,
    pub gamma: T,
    pub alpha: T,
    pub beta: T,
    pub sigma: T,
    pub chi1: u8,
    pub chi2: u8,
    pub gamma1: T,
    pub gamma2: T,
    pub p_tilde: T,
    pub upsilon: T,
    pub r0: T,
    pub delta: T,
    pub a: T,
    pub epsilon: T,
}

/// Largest admissible growth exponent `2 - 1/n`.
pub fn p_max<T: Real>(n: usize) -> T {
    T::lit(2.0) - T::one() / T::from_usize_lossy(n)
}

/// Threshold `(3n-2)/(2n-1)` separating the two regimes of the gamma window.
pub fn regime_threshold<T: Real>(n: usize) -> T {
    let nf = T::from_usize_lossy(n);
    (T::lit(3.0) * nf - T::lit(2.0)) / (T::lit(2.0) * nf - T::one())
}

/// `chi1 = 1` exactly when `p` lies strictly above the regime threshold.
pub fn chi1<T: Real>(n: usize, p: T) -> u8 {
    u8::from(p > regime_threshold::<T>(n))
}

/// Endpoints `(gamma1, gamma2)` of the admissible gamma window.
pub fn gamma_window<T: Real>(n: usize, p: T) -> (T, T) {
    let nf = T::from_usize_lossy(n);
    let two = T::lit(2.0);
    let c1 = T::from_u8(chi1(n, p)).unwrap();
    let gamma1 = c1 * (two - p);
    let a = nf * p / (T::lit(3.0) * nf - two);
    let b = (p - T::one()) * nf / (nf - T::one());
    (gamma1, a.min(b))
}

/// `p_tilde = min{n / (2(n-1)), (p-1) n / (n-p)}`.
pub fn p_tilde<T: Real>(n: usize, p: T) -> T {
    let nf = T::from_usize_lossy(n);
    let a = nf / (T::lit(2.0) * (nf - T::one()));
    let b = (p - T::one()) * nf / (nf - p);
    a.min(b)
}

/// Default ellipticity constant `max(1, 1/(p-1))`.
pub fn default_upsilon<T: Real>(p: T) -> T {
    T::one().max(T::one() / (p - T::one()))
}

fn check_growth_exponent<T: Real>(n: usize, p: T) -> Result<()> {
    if n < 2 {
        return range_err(format!("dimension n = {n} must be at least 2"));
    }
    if !p.is_finite() {
        return range_err("p must be finite");
    }
    let upper = p_max::<T>(n);
    let tol = T::lit(RELATION_RTOL) * upper;
    if p <= T::one() || p > upper + tol {
        return range_err(format!("p = {p} outside (1, {upper}]"));
    }
    Ok(())
}

/// Builds the full parameter set from `(n, p, gamma, alpha)`.
///
/// The sweep parameters take their defaults: `upsilon = max(1, 1/(p-1))`,
/// `r0 = 1`, `delta = 1/4`, `a = 1.1 * 3^(n - alpha)` and `epsilon = 0.1`.
pub fn derive_exponents<T: Real>(n: usize, p: T, gamma: T, alpha: T) -> Result<ExponentConfig<T>> {
    check_growth_exponent(n, p)?;
    if !gamma.is_finite() || !alpha.is_finite() {
        return range_err("gamma and alpha must be finite");
    }
    let nf = T::from_usize_lossy(n);
    let (gamma1, gamma2) = gamma_window(n, p);
    if !(gamma > gamma1 && gamma < gamma2) {
        return range_err(format!("gamma = {gamma} outside the open window ({gamma1}, {gamma2})"));
    }
    if alpha < T::zero() || alpha >= nf {
        return range_err(format!("alpha = {alpha} outside [0, {n})"));
    }
    let beta = T::one() + (p - T::one()) * alpha / gamma;
    let sigma = (T::lit(2.0) - p) * alpha / gamma;
    if beta < T::zero() || beta >= nf {
        return range_err(format!("beta = {beta} outside [0, {n})"));
    }
    if sigma < T::zero() || sigma >= nf {
        return range_err(format!("sigma = {sigma} outside [0, {n})"));
    }
    let c1 = chi1(n, p);
    Ok(ExponentConfig {
        n,
        p,
        gamma,
        alpha,
        beta,
        sigma,
        chi1: c1,
        chi2: 1 - c1,
        gamma1,
        gamma2,
        p_tilde: p_tilde(n, p),
        upsilon: default_upsilon(p),
        r0: T::one(),
        delta: T::lit(0.25),
        a: T::lit(1.1) * T::lit(3.0).powf(nf - alpha),
        epsilon: T::lit(0.1),
    })
}

impl<T: Real> ExponentConfig<T> {
    pub fn with_upsilon(mut self, upsilon: T) -> Result<Self> {
        if !(upsilon > T::zero() && upsilon.is_finite()) {
            return range_err(format!("upsilon = {upsilon} must be positive"));
        }
        self.upsilon = upsilon;
        Ok(self)
    }

    pub fn with_r0(mut self, r0: T) -> Result<Self> {
        if !(r0 > T::zero() && r0.is_finite()) {
            return range_err(format!("r0 = {r0} must be positive"));
        }
        self.r0 = r0;
        Ok(self)
    }

    pub fn with_delta(mut self, delta: T) -> Result<Self> {
        if !(delta > T::zero() && delta < T::lit(0.5)) {
            return range_err(format!("delta = {delta} outside (0, 1/2)"));
        }
        self.delta = delta;
        Ok(self)
    }

    pub fn with_a(mut self, a: T) -> Result<Self> {
        if !(a > T::zero() && a.is_finite()) {
            return range_err(format!("a = {a} must be positive"));
        }
        self.a = a;
        Ok(self)
    }

    pub fn with_epsilon(mut self, epsilon: T) -> Result<Self> {
        if !(epsilon > T::zero() && epsilon < T::one()) {
            return range_err(format!("epsilon = {epsilon} outside (0, 1)"));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    pub fn dim(&self) -> T {
        T::from_usize_lossy(self.n)
    }

    /// `3^(n - alpha)`, the dilation factor the cut-off argument needs `a` to exceed.
    pub fn dilation_bound(&self) -> T {
        T::lit(3.0).powf(self.dim() - self.alpha)
    }

    /// `[n - (beta-1) gamma/(p-1)] * n/(n-alpha)`; equals `n` for every valid config.
    pub fn scaling_identity(&self) -> T {
        let n = self.dim();
        (n - (self.beta - T::one()) * self.gamma / (self.p - T::one())) * n / (n - self.alpha)
    }

    /// Checks the ordering chain of the active regime.
    ///
    /// For `p <= (3n-2)/(2n-1)`: `0 = gamma1 < gamma2 = n(p-1)/(n-1) <= np/(3n-2) <= 2-p < 1`.
    /// Otherwise: `0 < gamma1 = 2-p < np/(3n-2) = gamma2 < n(p-1)/(n-1) <= 1`.
    pub fn ordering_chain_holds(&self) -> bool {
        regime_chain_holds(self.n, self.p)
    }

    /// Every relation between the stored fields, re-evaluated.
    pub fn validate(&self) -> Result<()> {
        let fresh = derive_exponents(self.n, self.p, self.gamma, self.alpha)?;
        let rtol = T::lit(RELATION_RTOL);
        let pairs = [
            ("beta", self.beta, fresh.beta),
            ("sigma", self.sigma, fresh.sigma),
            ("gamma1", self.gamma1, fresh.gamma1),
            ("gamma2", self.gamma2, fresh.gamma2),
            ("p_tilde", self.p_tilde, fresh.p_tilde),
        ];
        for (name, have, want) in pairs {
            if !have.rel_eq(want, rtol) {
                return range_err(format!("{name} = {have} inconsistent with derived {want}"));
            }
        }
        if self.chi1 != fresh.chi1 || self.chi2 != 1 - self.chi1 {
            return range_err("chi flags inconsistent with p");
        }
        if !self.scaling_identity().rel_eq(self.dim(), rtol) {
            return range_err("scaling identity violated");
        }
        Ok(())
    }

    /// Serializes to the flat `key = value` block.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n = {}", self.n);
        for (k, v) in [
            ("p", self.p),
            ("gamma", self.gamma),
            ("alpha", self.alpha),
            ("upsilon", self.upsilon),
            ("r0", self.r0),
            ("delta", self.delta),
            ("a", self.a),
            ("epsilon", self.epsilon),
        ] {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Parses the block written by [`ExponentConfig::to_text`].
    ///
    /// `n`, `p`, `gamma` and `alpha` are required; the other keys are optional.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut vals: [Option<(usize, T)>; 8] = [None; 8];
        let mut n: Option<usize> = None;
        const KEYS: [&str; 8] = ["p", "gamma", "alpha", "upsilon", "r0", "delta", "a", "epsilon"];
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            let key = key.trim();
            let value = value.trim();
            if key == "n" {
                n = Some(value.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("invalid dimension `{value}`"),
                })?);
                continue;
            }
            let slot = KEYS.iter().position(|k| *k == key).ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("unknown key `{key}`"),
            })?;
            let v: f64 = value.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid number `{value}` for `{key}`"),
            })?;
            vals[slot] = Some((line_no, T::lit(v)));
        }
        let missing = |name: &str| Error::Parse { line: 0, message: format!("missing key `{name}`") };
        let n = n.ok_or_else(|| missing("n"))?;
        let p = vals[0].ok_or_else(|| missing("p"))?.1;
        let gamma = vals[1].ok_or_else(|| missing("gamma"))?.1;
        let alpha = vals[2].ok_or_else(|| missing("alpha"))?.1;
        let mut cfg = derive_exponents(n, p, gamma, alpha)?;
        let wrap = |line: usize, r: Result<Self>| {
            r.map_err(|e| Error::Parse { line, message: e.to_string() })
        };
        if let Some((l, v)) = vals[3] {
            cfg = wrap(l, cfg.with_upsilon(v))?;
        }
        if let Some((l, v)) = vals[4] {
            cfg = wrap(l, cfg.with_r0(v))?;
        }
        if let Some((l, v)) = vals[5] {
            cfg = wrap(l, cfg.with_delta(v))?;
        }
        if let Some((l, v)) = vals[6] {
            cfg = wrap(l, cfg.with_a(v))?;
        }
        if let Some((l, v)) = vals[7] {
            cfg = wrap(l, cfg.with_epsilon(v))?;
        }
        Ok(cfg)
    }
}

/// The regime ordering chain for `(n, p)`, independent of gamma.
pub fn regime_chain_holds<T: Real>(n: usize, p: T) -> bool {
    let nf = T::from_usize_lossy(n);
    let two = T::lit(2.0);
    let (g1, g2) = gamma_window(n, p);
    let a = nf * p / (T::lit(3.0) * nf - two);
    let b = nf * (p - T::one()) / (nf - T::one());
    let tol = T::lit(RELATION_RTOL);
    let le = |x: T, y: T| x <= y + tol * T::one().max(y.abs());
    if chi1(n, p) == 0 {
        g1 == T::zero() && g1 < g2 && g2.rel_eq(b, tol) && le(b, a) && le(a, two - p) && two - p < T::one()
    } else {
        T::zero() < g1
            && g1.rel_eq(two - p, tol)
            && two - p < a
            && g2.rel_eq(a, tol)
            && a < b
            && le(b, T::one())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1.0)
    }

    #[test]
    fn planar_three_halves() {
        let c = derive_exponents(2, 1.5, 0.6, 0.3).unwrap();
        assert_eq!((c.chi1, c.chi2), (1, 0));
        assert!(close(c.gamma1, 0.5));
        assert!(close(c.gamma2, 0.75));
        assert!(close(c.beta, 1.25));
        assert!(close(c.sigma, 0.25));
        assert!(close(c.p_tilde, 1.0));
    }

    #[test]
    fn spatial_low_p_branch() {
        let c = derive_exponents(3, 1.3, 0.4, 0.0).unwrap();
        assert_eq!((c.chi1, c.chi2), (0, 1));
        assert_eq!(c.gamma1, 0.0);
        assert!(close(c.gamma2, 0.45));
        assert_eq!(c.beta, 1.0);
        assert_eq!(c.sigma, 0.0);
    }

    #[test]
    fn rejects_p_above_range() {
        assert!(matches!(derive_exponents(2, 2.0, 0.5, 0.0), Err(Error::Range(_))));
        assert!(matches!(derive_exponents(2, 1.0, 0.5, 0.0), Err(Error::Range(_))));
    }

    #[test]
    fn window_endpoints_are_rejected() {
        assert!(derive_exponents(2, 1.5, 0.5, 0.0).is_err());
        assert!(derive_exponents(2, 1.5, 0.75, 0.0).is_err());
        assert!(derive_exponents(2, 1.5f64, 0.5 + 1e-9, 0.0).is_ok());
    }

    #[test]
    fn rejects_orders_outside_range() {
        // beta = 1 + 0.5 * 1.9 / 0.6 > 2
        assert!(derive_exponents(2, 1.5, 0.6, 1.9).is_err());
        assert!(derive_exponents(2, 1.5, 0.6, -0.1).is_err());
    }

    #[test]
    fn upper_endpoint_of_p_accepted() {
        let c = derive_exponents(3, 5.0f64 / 3.0, 0.5, 0.0).unwrap();
        assert_eq!(c.chi1, 1);
        assert!(c.ordering_chain_holds());
    }

    #[test]
    fn text_roundtrip_and_defaults() {
        let c = derive_exponents(2, 1.5f64, 0.6, 0.3).unwrap().with_epsilon(0.2).unwrap();
        let back = ExponentConfig::<f64>::from_text(&c.to_text()).unwrap();
        assert_eq!(c, back);
        let d = ExponentConfig::<f64>::from_text("n = 2\np = 1.5\ngamma = 0.6\nalpha = 0\n").unwrap();
        assert_eq!(d.upsilon, 2.0);
        assert!(close(d.a, 1.1 * 9.0));
    }

    #[test]
    fn text_errors_carry_line_numbers() {
        let e = ExponentConfig::<f64>::from_text("n = 2\np = 1.5\nbogus = 1\n").unwrap_err();
        assert_eq!(e, Error::Parse { line: 3, message: "unknown key `bogus`".into() });
        let e = ExponentConfig::<f64>::from_text("n = 2\np = 1.5\ngamma = 0.6\nalpha = 0\ndelta = 0.7").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 5, .. }));
    }

    #[test]
    fn works_in_single_precision() {
        let c = derive_exponents(2, 1.5f32, 0.6, 0.3).unwrap();
        assert!((c.beta - 1.25).abs() < 1e-6);
    }
}
