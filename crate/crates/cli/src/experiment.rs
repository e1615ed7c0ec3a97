//! Solve, verify and sweep pipelines.

use std::sync::Arc;

use oll_core::exponents::{derive_exponents, ExponentConfig};
use oll_core::fields::{gradient, mollify_measure, Atom, DomainKind, GridDomain, MeasureData, ScalarField, VectorField};
use oll_core::maximal::RadiusLadder;
use oll_core::solver::*;
use oll_core::structural::CoefficientField;
use oll_core::verifier::*;
use oll_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, LambdaGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Verify,
    Sweep,
}

/// Reports plus extra files (name, contents) produced by a run.
#[derive(Debug, Default)]
pub struct Outcome {
    pub reports: Vec<VerificationReport>,
    pub files: Vec<(String, String)>,
}

impl Outcome {
    pub fn all_passed(&self) -> bool {
        self.reports.iter().all(|r| r.passed)
    }
}

/// One resolution of the configured problem.
pub struct Instance {
    pub domain: Arc<GridDomain<f64>>,
    /// Atoms kept unmollified, for SOLA.
    pub raw: ObstacleProblem<f64>,
    /// Mollified at the configured level.
    pub prob: ObstacleProblem<f64>,
}

pub fn exponents(cfg: &ExperimentConfig) -> oll_core::Result<ExponentConfig<f64>> {
    let mut e = derive_exponents(cfg.n, cfg.p, cfg.gamma, cfg.alpha)?;
    if let Some(a) = cfg.a {
        e = e.with_a(a)?;
    }
    if let Some(v) = cfg.epsilon {
        e = e.with_epsilon(v)?;
    }
    if let Some(v) = cfg.delta {
        e = e.with_delta(v)?;
    }
    if let Some(v) = cfg.r0 {
        e = e.with_r0(v)?;
    }
    if let Some(v) = cfg.upsilon {
        e = e.with_upsilon(v)?;
    }
    Ok(e)
}

pub fn domain(cfg: &ExperimentConfig, nodes: usize) -> oll_core::Result<Arc<GridDomain<f64>>> {
    let d = match cfg.kind {
        DomainKind::Box => GridDomain::cube(cfg.n, nodes, cfg.lower, cfg.upper)?,
        DomainKind::LShaped => GridDomain::l_shaped(cfg.n, nodes, cfg.lower, cfg.upper)?,
    };
    Ok(Arc::new(d))
}

pub fn instance(cfg: &ExperimentConfig, nodes: usize, mass_scale: f64) -> oll_core::Result<Instance> {
    let domain = domain(cfg, nodes)?;
    let mut mu = MeasureData::zero();
    for (x, w) in &cfg.atoms {
        mu.atoms.push(Atom { location: x.clone(), weight: w * mass_scale });
    }
    if cfg.density != 0.0 {
        mu.density = Some(ScalarField::constant(&domain, cfg.density * mass_scale));
    }
    let psi = cfg.obstacle.build(&domain)?;
    let raw = ObstacleProblem::new(domain.clone(), CoefficientField::PureP, cfg.p, mu.clone(), psi)?.with_eps_reg(cfg.eps_reg)?;
    let dens = mollify_measure(&mu, &domain, cfg.mollify)?;
    let prob = raw.with_density(dens);
    Ok(Instance { domain, raw, prob })
}

fn opts(cfg: &ExperimentConfig) -> SolverOptions<f64> {
    SolverOptions::with_tol(cfg.tol, cfg.max_iter)
}

fn span(cfg: &ExperimentConfig) -> f64 {
    cfg.upper - cfg.lower
}

fn mid(cfg: &ExperimentConfig) -> f64 {
    0.5 * (cfg.upper + cfg.lower)
}

/// Configured balls, or a five-ball sweep scaled to the domain.
fn balls(cfg: &ExperimentConfig) -> Vec<BallSpec<f64>> {
    let to_specs = |v: &[(Vec<f64>, f64)]| v.iter().map(|(c, r)| BallSpec { center: c.clone(), rho: *r }).collect();
    if !cfg.balls.is_empty() {
        return to_specs(&cfg.balls);
    }
    let (m, s) = (mid(cfg), 0.5 * span(cfg));
    let at = |x: f64, y: f64| {
        let mut c = vec![m; cfg.n];
        c[0] = m + x * s;
        c[1] = m + y * s;
        c
    };
    [(0.0, 0.0, 0.25), (0.0, 0.0, 0.5), (0.3, 0.2, 0.4), (-0.4, 0.1, 0.5), (0.5, -0.5, 0.3)]
        .iter()
        .map(|&(x, y, r)| BallSpec { center: at(x, y), rho: r * s })
        .collect()
}

fn boundary_balls(cfg: &ExperimentConfig) -> Vec<BallSpec<f64>> {
    if !cfg.boundary_balls.is_empty() {
        return cfg.boundary_balls.iter().map(|(c, r)| BallSpec { center: c.clone(), rho: *r }).collect();
    }
    let mut c = vec![mid(cfg); cfg.n];
    c[0] = cfg.lower;
    vec![BallSpec { center: c, rho: 0.4 * span(cfg) }]
}

/// Lazily shared state of one resolution.
struct Context<'a> {
    cfg: &'a ExperimentConfig,
    exps: ExponentConfig<f64>,
    inst: Instance,
    solution: SolveReport<f64>,
    ladder: RadiusLadder<f64>,
    nodes: usize,
}

impl<'a> Context<'a> {
    fn new(cfg: &'a ExperimentConfig, nodes: usize) -> oll_core::Result<Self> {
        let exps = exponents(cfg)?;
        let inst = instance(cfg, nodes, 1.0)?;
        let solution = solve_obstacle_with(&inst.prob, &opts(cfg))?;
        let ladder = RadiusLadder::for_domain(&inst.domain);
        Ok(Context { cfg, exps, inst, solution, ladder, nodes })
    }

    fn u(&self) -> &ScalarField<f64> {
        &self.solution.u
    }

    fn lambda_grid(&self, f: &MaximalFields<f64>) -> Vec<f64> {
        match &self.cfg.lambda_grid {
            LambdaGrid::Auto => default_lambda_grid(f, self.exps.a),
            LambdaGrid::Explicit(g) => g.clone(),
        }
    }

    fn theorem_a(&self) -> oll_core::Result<VerificationReport> {
        let f = maximal_fields(&self.inst.prob, self.u(), &self.exps, &self.ladder, false)?;
        check_theorem_a(&f, &self.exps, &self.lambda_grid(&f))
    }

    fn run(&self, check: &str) -> oll_core::Result<VerificationReport> {
        let cfg = self.cfg;
        let e = &self.exps;
        let prob = &self.inst.prob;
        let o = opts(cfg);
        match check {
            "admissibility" => Ok(admissibility(prob, &self.solution)),
            "sola" => sola(&self.inst.raw, cfg, e),
            "comparison" => check_comparison(prob, self.u(), &balls(cfg), e, cfg.kappa1, cfg.kappa2, &o),
            "comparison_frozen" => check_comparison_frozen(prob, self.u(), &balls(cfg), e, cfg.kappa1, cfg.kappa2, &o),
            "comparison_boundary" => {
                check_comparison_boundary(prob, self.u(), &boundary_balls(cfg), e, cfg.kappa1, cfg.kappa2, &o)
            }
            "lemma_b1" => {
                let free = ObstacleProblem::unconstrained(prob.domain.clone(), prob.p, prob.mu.clone())?
                    .with_eps_reg(prob.eps_reg)?;
                let v = solve_obstacle_with(&free, &o)?.u;
                check_lemma_b1(self.u(), &v, e, &prob.domain.interior_mask(), cfg.kappa1, cfg.kappa2)
            }
            "tech2" => tech2(&self.inst.domain, cfg, e),
            "theorem_a" => self.theorem_a(),
            "small_v" => Ok(check_small_v(&self.theorem_a()?, e, e.r0)),
            "theorem_b" => theorem_b(cfg, e, self.nodes),
            "gradient_reduction" => {
                let mut rep = VerificationReport::new("gradient_reduction");
                for &(q, s) in &cfg.lorentz {
                    let r = check_gradient_reduction(prob, self.u(), e, q, s, &self.ladder)?;
                    rep.push(r.lhs[0], r.rhs[0]);
                }
                Ok(rep.finish())
            }
            "holder" => check_holder_embedding(&gradient(self.u()), e, &self.ladder),
            "scheven" => scheven(cfg, e, self.nodes),
            other => Err(Error::Range(format!("check `{other}` is not available at a single resolution"))),
        }
    }
}

fn admissibility(prob: &ObstacleProblem<f64>, rep: &SolveReport<f64>) -> VerificationReport {
    let d = &prob.domain;
    let below = (0..d.len())
        .map(|i| prob.psi.values()[i] - rep.u.values()[i])
        .fold(0.0f64, f64::max);
    let boundary = (0..d.len())
        .filter(|&i| d.node_kind(i) == oll_core::fields::NodeKind::Boundary)
        .map(|i| {
            let g = prob.boundary.as_ref().map_or(0.0, |b| b.values()[i]);
            (rep.u.values()[i] - g).abs()
        })
        .fold(0.0f64, f64::max);
    let ratio = if rep.scale > 0.0 { rep.pde_residual / rep.scale } else { 0.0 };
    let mut r = VerificationReport::new("admissibility");
    r.extra("max_below_obstacle", below);
    r.extra("max_boundary_error", boundary);
    r.extra("residual_over_scale", ratio);
    r.extra("contact_nodes", rep.contact_count() as f64);
    r.extra("sweeps", rep.iterations as f64);
    let mut r = r.finish();
    r.passed = below <= 1e-12 && boundary == 0.0 && rep.pde_residual <= 1e-8 * rep.scale;
    r
}

fn sola(raw: &ObstacleProblem<f64>, cfg: &ExperimentConfig, e: &ExponentConfig<f64>) -> oll_core::Result<VerificationReport> {
    let seq = sola_sequence(raw, cfg.sola_levels, &opts(cfg), e.gamma, 1.0)?;
    let mut rep = VerificationReport::new("sola").param("gamma", e.gamma);
    let rows = seq
        .grad_diffs
        .iter()
        .zip(&seq.value_diffs)
        .enumerate()
        .map(|(i, (g, v))| vec![(i + 1) as f64, *g, *v])
        .collect();
    rep.table = Some(Table { header: vec!["k".into(), "grad_diff".into(), "value_diff".into()], rows });
    let mut rep = rep.finish();
    let tail = &seq.grad_diffs[seq.grad_diffs.len().min(1)..];
    rep.passed = tail.windows(2).all(|w| w[1] <= w[0]);
    Ok(rep)
}

/// Random pairs `v2 = v1 + d`, `|d| <= |v1|`, drawn from the seed.
fn tech2(d: &Arc<GridDomain<f64>>, cfg: &ExperimentConfig, e: &ExponentConfig<f64>) -> oll_core::Result<VerificationReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = d.dim();
    let unit = |rng: &mut ChaCha8Rng| {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.into_iter().map(|x| x / m).collect::<Vec<f64>>()
    };
    let mut a = Vec::with_capacity(d.len() * n);
    let mut b = Vec::with_capacity(d.len() * n);
    for _ in 0..d.len() {
        let r: f64 = rng.gen_range(0.5..2.0);
        let dir = unit(&mut rng);
        let s: f64 = rng.gen_range(0.0..1.0) * r;
        let pert = unit(&mut rng);
        for k in 0..n {
            a.push(r * dir[k]);
            b.push(r * dir[k] + s * pert[k]);
        }
    }
    let v1 = VectorField::from_values(d, a)?;
    let v2 = VectorField::from_values(d, b)?;
    tech2_eps_sweep(&v1, &v2, cfg.p, &cfg.eps_list, 1.0, e.gamma.min(cfg.p * 0.99), &d.interior_mask())
}

fn theorem_b(cfg: &ExperimentConfig, e: &ExponentConfig<f64>, nodes: usize) -> oll_core::Result<VerificationReport> {
    let mut rep = VerificationReport::new("theorem_b").param("alpha", e.alpha).param("gamma", e.gamma);
    let mut rows = Vec::new();
    let mut per_pair = vec![Vec::new(); cfg.lorentz.len()];
    for &mass in &cfg.masses {
        let inst = instance(cfg, nodes, mass)?;
        let u = solve_obstacle_with(&inst.prob, &opts(cfg))?.u;
        let ladder = RadiusLadder::for_domain(&inst.domain);
        let f = maximal_fields(&inst.prob, &u, e, &ladder, false)?;
        for (j, &(q, s)) in cfg.lorentz.iter().enumerate() {
            let r = check_theorem_b(&f, e, q, s, &cfg.eps_list)?;
            for (l, rr) in r.lhs.iter().zip(&r.rhs) {
                rep.push(*l, *rr);
            }
            per_pair[j].push(r.min_constant);
            rows.push(vec![mass, q, s.unwrap_or(f64::INFINITY), r.min_constant]);
        }
    }
    rep.table = Some(Table { header: vec!["mass".into(), "q".into(), "s".into(), "ratio".into()], rows });
    let mut rep = rep.finish();
    let mut worst = 1.0f64;
    for v in &per_pair {
        let hi = v.iter().cloned().fold(0.0, f64::max);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        if hi > 0.0 {
            worst = worst.max(if lo > 0.0 { hi / lo } else { f64::INFINITY });
        }
    }
    rep.extra("max_spread", worst);
    rep.passed = rep.passed && worst < 2.0;
    Ok(rep)
}

fn scheven(cfg: &ExperimentConfig, e: &ExponentConfig<f64>, nodes: usize) -> oll_core::Result<VerificationReport> {
    let mut rep = VerificationReport::new("scheven").param("gamma", e.gamma);
    let mut cs = Vec::new();
    for &mass in &cfg.masses {
        let inst = instance(cfg, nodes, mass)?;
        let total = inst.prob.rhs()?.map(f64::abs).integral();
        let u = solve_obstacle_with(&inst.prob, &opts(cfg))?.u;
        let c = match scheven_ratio(&u, total, e.gamma, cfg.p) {
            Ok(c) => c,
            Err(Error::ZeroDenominator(_)) => 0.0,
            Err(err) => return Err(err),
        };
        cs.push(vec![mass, c]);
    }
    let mean = cs.iter().map(|r| r[1]).sum::<f64>() / cs.len().max(1) as f64;
    rep.table = Some(Table { header: vec!["mass".into(), "C".into()], rows: cs.clone() });
    let mut rep = rep.finish();
    rep.min_constant = cs.iter().map(|r| r[1]).fold(0.0, f64::max);
    rep.passed = cs.iter().all(|r| mean == 0.0 || (r[1] / mean - 1.0).abs() <= cfg.band);
    Ok(rep)
}

/// Gradient error against the fundamental solution over `resolutions`, warm-started
/// by prolongation.
fn radial(cfg: &ExperimentConfig, e: &ExponentConfig<f64>) -> oll_core::Result<VerificationReport> {
    if cfg.kind != DomainKind::Box {
        return Err(Error::Range("the radial check needs a box domain".into()));
    }
    let center = cfg.atoms.first().map_or(vec![mid(cfg); cfg.n], |a| a.0.clone());
    let mut res = cfg.resolutions.clone();
    if res.len() < 2 {
        res = vec![cfg.nodes, 2 * cfg.nodes - 1];
    }
    let mut prev: Option<ScalarField<f64>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let r_out = 0.5 * span(cfg);
    for &m in &res {
        let d = domain(cfg, m)?;
        let dens = mollify_measure(&MeasureData::dirac(center.clone(), 1.0), &d, cfg.mollify)?;
        let lift = radial_lift(&d, cfg.p, &center)?;
        let prob = ObstacleProblem::unconstrained(d.clone(), cfg.p, MeasureData::from_density(dens))?
            .with_eps_reg(cfg.eps_reg)?
            .with_boundary(lift)?;
        let mut o = opts(cfg);
        o.initial = prev.as_ref().map(|c| prolong(c, &d));
        let rep = solve_obstacle_with(&prob, &o)?;
        let err = radial_gradient_error(&rep.u, cfg.p, &center, e.gamma, r_out / 8.0, r_out)?;
        let order = rows.last().map_or(f64::NAN, |r: &Vec<f64>| (r[2] / err).log2());
        rows.push(vec![m as f64, d.h(), err, order]);
        prev = Some(rep.u);
    }
    let mut rep = VerificationReport::new("radial").param("p", cfg.p).param("gamma", e.gamma);
    rep.table = Some(Table { header: vec!["nodes".into(), "h".into(), "error".into(), "order".into()], rows: rows.clone() });
    let mut rep = rep.finish();
    let monotone = rows.windows(2).all(|w| w[1][2] < w[0][2]);
    let orders_ok = rows.iter().skip(1).all(|r| r[3] >= 0.5);
    rep.min_constant = rows.iter().skip(1).map(|r| r[3]).fold(f64::INFINITY, f64::min);
    rep.passed = monotone && orders_ok;
    Ok(rep)
}

fn solve_only(cfg: &ExperimentConfig) -> oll_core::Result<Outcome> {
    let inst = instance(cfg, cfg.nodes, 1.0)?;
    let rep = solve_obstacle_with(&inst.prob, &opts(cfg))?;
    let mut adm = admissibility(&inst.prob, &rep);
    adm.name = "solve".into();
    Ok(Outcome {
        reports: vec![adm],
        files: vec![("u.txt".into(), rep.u.to_text()), ("psi.txt".into(), inst.prob.psi.to_text())],
    })
}

fn run_checks(cfg: &ExperimentConfig, nodes: usize, suffix: &str) -> oll_core::Result<Vec<VerificationReport>> {
    let single: Vec<&String> = cfg.checks.iter().filter(|c| *c != "radial").collect();
    if single.is_empty() {
        return Ok(Vec::new());
    }
    let ctx = Context::new(cfg, nodes)?;
    single
        .par_iter()
        .map(|c| {
            let mut r = ctx.run(c)?;
            r.name = format!("{c}{suffix}");
            Ok(r)
        })
        .collect()
}

/// Runs the pipeline for `command`; reports come back sorted by name.
pub fn run_experiment(cfg: &ExperimentConfig, command: Command) -> oll_core::Result<Outcome> {
    let mut out = match command {
        Command::Solve => return solve_only(cfg),
        Command::Verify => Outcome { reports: run_checks(cfg, cfg.nodes, "")?, files: Vec::new() },
        Command::Sweep => {
            let mut reports: Vec<VerificationReport> = Vec::new();
            let mut previous: Vec<VerificationReport> = Vec::new();
            for &m in &cfg.resolutions {
                let mut level = run_checks(cfg, m, &format!("_m{m}"))?;
                for r in level.iter_mut() {
                    let base = r.name.rsplit_once("_m").map_or(r.name.clone(), |x| x.0.to_string());
                    if let Some(prev) = previous.iter().find(|p| p.name.rsplit_once("_m").map(|x| x.0) == Some(base.as_str())) {
                        if r.passed && is_refinable(&base) {
                            *r = r.clone().with_stability(prev, cfg.band);
                        }
                    }
                }
                previous = level.clone();
                reports.extend(level);
            }
            Outcome { reports, files: Vec::new() }
        }
    };
    if cfg.has("radial") {
        let mut r = radial(cfg, &exponents(cfg)?)?;
        r.name = "radial".into();
        out.reports.push(r);
    }
    out.reports.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}

/// Checks whose minimal constant is compared across resolutions in a sweep.
fn is_refinable(check: &str) -> bool {
    matches!(check, "comparison" | "comparison_frozen" | "comparison_boundary" | "theorem_a" | "theorem_b" | "lemma_b1")
}
