use std::sync::Arc;

use oll_core::exponents::{derive_exponents, gamma_window, p_max, regime_chain_holds};
use oll_core::fields::*;
use oll_core::lorentz::{lorentz_norm, DistributionFunction};
use oll_core::maximal::*;
use oll_core::structural::{phi_gap, truncate_shifted};
use proptest::prelude::*;

fn grid(n: usize, m: usize) -> Arc<GridDomain<f64>> {
    Arc::new(GridDomain::cube(n, m, 0.0, 1.0).unwrap())
}

fn field_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..4.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_order_forces_beta_one_sigma_zero(n in 2usize..6, t in 0.01f64..0.99, s in 0.05f64..0.95) {
        let p = 1.0 + t * (p_max::<f64>(n) - 1.0);
        let (g1, g2) = gamma_window(n, p);
        let cfg = derive_exponents(n, p, g1 + s * (g2 - g1), 0.0).unwrap();
        prop_assert_eq!(cfg.beta, 1.0);
        prop_assert_eq!(cfg.sigma, 0.0);
        prop_assert!(cfg.gamma1 < cfg.gamma2);
        prop_assert!(regime_chain_holds(n, p));
        prop_assert!((cfg.scaling_identity() - n as f64).abs() <= 1e-12 * n as f64);
    }

    #[test]
    fn level_measure_nonincreasing(vals in field_strategy(81), mut lams in prop::collection::vec(0.0f64..4.0, 2..12)) {
        let d = grid(2, 9);
        let f = ScalarField::from_values(&d, vals).unwrap();
        lams.sort_by(f64::total_cmp);
        let ms: Vec<f64> = lams.iter().map(|&l| level_measure(&f, l)).collect();
        prop_assert!(ms.windows(2).all(|w| w[1] <= w[0]));
        // right-continuity: the level set at an attained value excludes it
        for &v in f.values() {
            prop_assert!(level_measure(&f, v) <= level_measure(&f, v - 1e-9));
        }
    }

    #[test]
    fn mollification_keeps_signed_mass(x in -0.9f64..0.9, y in -0.9f64..0.9, w in -2.0f64..2.0, k in 1u32..6) {
        let d = Arc::new(GridDomain::cube(2, 17, -1.0, 1.0).unwrap());
        for loc in [vec![x, y], vec![0.125, -0.25]] {
            let mu = MeasureData::dirac(loc, w);
            let dens = mollify_measure(&mu, &d, k).unwrap();
            prop_assert!((dens.integral() - w).abs() <= 1e-12 * (1.0 + w.abs()));
        }
    }

    #[test]
    fn shifted_truncation_is_odd_and_lipschitz(z1 in -10.0f64..10.0, z2 in -10.0f64..10.0, k in 0.01f64..5.0, h in 0.01f64..5.0) {
        prop_assert_eq!(truncate_shifted(-z1, k, h), -truncate_shifted(z1, k, h));
        prop_assert!((truncate_shifted(z1, k, h) - truncate_shifted(z2, k, h)).abs() <= (z1 - z2).abs() + 1e-15);
    }

    #[test]
    fn phi_vanishes_only_on_the_diagonal(a in prop::collection::vec(-5.0f64..5.0, 3), b in prop::collection::vec(-5.0f64..5.0, 3), p in 1.05f64..1.95) {
        let v = phi_gap(&a, &b, p);
        prop_assert!(v >= 0.0);
        prop_assert_eq!(v == 0.0, a == b);
    }

    #[test]
    fn maximal_is_sublinear(f in field_strategy(81), g in field_strategy(81), alpha in 0.0f64..1.9) {
        let d = grid(2, 9);
        let ladder = RadiusLadder::for_domain(&d);
        let f = ScalarField::from_values(&d, f).unwrap();
        let g = ScalarField::from_values(&d, g).unwrap();
        let fg = f.zip_with(&g, |a, b| a + b).unwrap();
        let mf = fractional_maximal(&f, alpha, &ladder).unwrap();
        let mg = fractional_maximal(&g, alpha, &ladder).unwrap();
        let mfg = fractional_maximal(&fg, alpha, &ladder).unwrap();
        for i in 0..d.len() {
            let bound = mf.values()[i] + mg.values()[i];
            prop_assert!(mfg.values()[i] <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn cutoff_split_recovers_full_operator(f in field_strategy(125), alpha in 0.0f64..2.5, cut in 1usize..10) {
        let d = grid(3, 5);
        let ladder = RadiusLadder::for_domain(&d);
        let f = ScalarField::from_values(&d, f).unwrap();
        let r = ladder.radius(cut.min(ladder.len() - 1));
        let full = fractional_maximal(&f, alpha, &ladder).unwrap();
        let lo = fractional_maximal_cutoff(&f, alpha, r, &ladder).unwrap();
        let hi = tail_maximal(&f, alpha, r, &ladder).unwrap();
        for i in 0..d.len() {
            prop_assert_eq!(full.values()[i], lo.values()[i].max(hi.values()[i]));
        }
    }

    #[test]
    fn distribution_binary_search_matches_count(vals in prop::collection::vec(-3.0f64..3.0, 81), lams in prop::collection::vec(0.0f64..3.0, 100)) {
        let d = grid(2, 9);
        let f = ScalarField::from_values(&d, vals).unwrap();
        let dist = DistributionFunction::new(&f);
        for l in lams {
            let direct = (0..d.len()).filter(|&i| d.is_interior(i) && f.values()[i].abs() > l).count();
            prop_assert_eq!(dist.count_above(l), direct);
        }
    }

    #[test]
    fn weak_norm_of_indicator_is_exact(bits in prop::collection::vec(any::<bool>(), 81), q in 0.3f64..4.0) {
        let d = grid(2, 9);
        let f = ScalarField::from_values(&d, bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).unwrap();
        let m = f.integral();
        prop_assert!((lorentz_norm(&f, q, None).unwrap() - m.powf(1.0 / q)).abs() <= 1e-12);
    }
}

/// Largest `count(3s) / (3^n count(s))` for `s >= s_min`: the lattice slack in the dilation bound.
fn lattice_slack(n: usize, steps: &[f64], s_min: f64) -> f64 {
    steps
        .iter()
        .filter(|&&s| s >= s_min)
        .map(|&s| lattice_ball_count(n, 3.0 * s) as f64 / (3f64.powi(n as i32) * lattice_ball_count(n, s) as f64))
        .fold(1.0, f64::max)
}

#[test]
fn tail_is_dominated_by_dilated_maximal() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(45);
    for n in [2usize, 3] {
        let m = if n == 2 { 17 } else { 9 };
        let d = grid(n, m);
        let h = d.h();
        let full = RadiusLadder::for_domain(&d);
        let inner = full.below(d.diameter() + h).unwrap();
        for alpha in [0.0, 0.7, 1.5] {
            let f = ScalarField::from_fn(&d, |_| rng.gen_range(0.0..1.0));
            let mf = fractional_maximal(&f, alpha, &full).unwrap();
            for r_steps in [3.0, 5.0] {
                let r = r_steps * h;
                let tail = tail_maximal(&f, alpha, r, &inner).unwrap();
                let bound = 3f64.powf(n as f64 - alpha) * lattice_slack(n, inner.steps(), r_steps);
                for _ in 0..50 {
                    let x = rng.gen_range(0..d.len());
                    let xc = d.coords(x);
                    // sample a partner inside B_r(x)
                    let xi = (0..d.len()).find(|&j| {
                        let c = d.coords(j);
                        j != x && c.iter().zip(&xc).map(|(a, b)| (a - b).powi(2)).sum::<f64>() < r * r && rng.gen_bool(0.3)
                    });
                    let xi = xi.unwrap_or(x);
                    assert!(
                        tail.values()[x] <= bound * mf.values()[xi] * (1.0 + 1e-12),
                        "n {n} alpha {alpha} r {r}"
                    );
                }
            }
        }
    }
}
