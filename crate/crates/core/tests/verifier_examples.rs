use std::f64::consts::PI;
use std::sync::Arc;

use oll_core::exponents::derive_exponents;
use oll_core::fields::*;
use oll_core::maximal::RadiusLadder;
use oll_core::solver::*;
use oll_core::structural::CoefficientField;
use oll_core::verifier::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn square(m: usize) -> Arc<GridDomain<f64>> {
    Arc::new(GridDomain::cube(2, m, -1.0, 1.0).unwrap())
}

/// Low-mode trigonometric field with fixed coefficients, sampled on the grid.
fn smooth(d: &Arc<GridDomain<f64>>, c: &[f64; 4]) -> ScalarField<f64> {
    ScalarField::from_fn(d, |x| {
        let (s, t) = (PI * (x[0] + 1.0) / 2.0, PI * (x[1] + 1.0) / 2.0);
        c[0] * s.sin() * t.sin() + c[1] * (2.0 * s).sin() * t.sin() + c[2] * s.cos() * t.sin() + c[3] * x[0] * x[1]
    })
}

fn stable(a: f64, b: f64, band: f64) -> bool {
    (stability_ratio(a, b) - 1.0).abs() <= band
}

#[test]
fn tech3_constant_is_refinement_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..4 {
        let mut draw = || [0.0; 4].map(|_: f64| rng.gen_range(-1.0..1.0));
        let (cu, cv, cf) = (draw(), draw(), draw());
        let consts: Vec<f64> = [17usize, 33]
            .iter()
            .map(|&m| {
                let d = square(m);
                let u = smooth(&d, &cu);
                let v = smooth(&d, &cv);
                let f = smooth(&d, &cf).map(|x| x.abs() + 0.5);
                check_tech3(&u, &v, &f, 1.0, 0.5, &d.interior_mask()).unwrap().min_constant
            })
            .collect();
        assert!(consts.iter().all(|c| c.is_finite() && *c > 0.0));
        assert!(stable(consts[0], consts[1], 0.3), "{consts:?}");
    }
}

fn cascade_pair(m: usize) -> (ObstacleProblem<f64>, ScalarField<f64>, ScalarField<f64>) {
    let d = square(m);
    let dens = mollify_measure(&MeasureData::dirac(vec![0.0, 0.0], 1.0), &d, 4).unwrap();
    let psi = (ObstacleShape::Plateau { center: vec![0.4, 0.4], height: 0.05, width: 0.4 }).build(&d).unwrap();
    let prob = ObstacleProblem::new(d.clone(), CoefficientField::PureP, 1.5, MeasureData::from_density(dens), psi).unwrap();
    let u = solve_obstacle(&prob, 1e-8, 200_000).unwrap().u;
    let free = ObstacleProblem::unconstrained(d, 1.5, prob.mu.clone()).unwrap();
    let v = solve_obstacle(&free, 1e-8, 200_000).unwrap().u;
    (prob, u, v)
}

#[test]
fn lemma_b1_constants_are_refinement_stable() {
    let cfg = derive_exponents(2, 1.5, 0.6, 0.3).unwrap();
    let reps: Vec<VerificationReport> = [33usize, 65]
        .iter()
        .map(|&m| {
            let (prob, u, v) = cascade_pair(m);
            check_lemma_b1(&u, &v, &cfg, &prob.domain.interior_mask(), 0.1, 0.1).unwrap()
        })
        .collect();
    for key in ["C_weak", "C_grad"] {
        let (a, b) = (reps[0].get_extra(key).unwrap(), reps[1].get_extra(key).unwrap());
        assert!(a.is_finite() && b.is_finite(), "{key}");
        assert!(stable(a, b, 0.5), "{key}: {a} -> {b}");
    }
}

#[test]
fn theorem_a_below_dilation_bound_warns_but_computes() {
    let (prob, u, _) = cascade_pair(17);
    let base = derive_exponents(2, 1.5, 0.6, 0.3).unwrap();
    let ladder = RadiusLadder::for_domain(&prob.domain);
    let low = base.with_a(0.9 * base.dilation_bound()).unwrap();
    let fields = maximal_fields(&prob, &u, &low, &ladder, false).unwrap();
    let rep = check_theorem_a(&fields, &low, &default_lambda_grid(&fields, low.a)).unwrap();
    assert!(rep.notes.iter().any(|n| n.starts_with("warning")));
    assert_eq!(rep.table.as_ref().unwrap().rows.len(), 20);

    let high = base.with_a(1.1 * base.dilation_bound()).unwrap();
    let fields = maximal_fields(&prob, &u, &high, &ladder, false).unwrap();
    let grid = default_lambda_grid(&fields, high.a);
    let sups: Vec<f64> = [0.1, 0.05]
        .iter()
        .map(|&e| {
            let cfg = high.with_epsilon(e).unwrap();
            let r = check_theorem_a(&fields, &cfg, &grid).unwrap();
            assert!(r.notes.is_empty());
            assert_eq!(r.get_extra("relations_hold"), Some(1.0));
            r.min_constant
        })
        .collect();
    assert!(sups.iter().all(|c| c.is_finite()));
    assert!(stable(sups[0], sups[1], 0.5), "{sups:?}");
}
