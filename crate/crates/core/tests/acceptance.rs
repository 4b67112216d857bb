//! Acceptance run: every criterion at its stated tolerance, one line each.
//! Exits non-zero when any criterion fails.

mod common;

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use polyslab::collision::CollisionEngine;
use polyslab::config::RunConfig;
use polyslab::kernel::{self, bl_forward, bl_inverse, jacobian_factor, BlParams, CollisionParams, Mutation, PairState};
use polyslab::norms;
use polyslab::phase_space::{weight, DistributionField, GridSpec, Maxwellian, PhaseGrid};
use polyslab::solver::{self, BoundaryData, BoundaryFamily};
use polyslab::verify::{self, SuiteScope, Verdict};
use polyslab::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn random_pair(rng: &mut ChaCha8Rng) -> (PairState, BlParams) {
    let mut v3 = || [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
    let (v, v_star) = (v3(), v3());
    let z: f64 = rng.random_range(-1.0..1.0);
    let ph: f64 = rng.random_range(-PI..PI);
    let s = (1.0 - z * z).sqrt();
    let pre = PairState { v, v_star, energy: rng.random_range(0.0..5.0), energy_star: rng.random_range(0.0..5.0) };
    let bl = BlParams { r: rng.random(), big_r: rng.random(), sigma: [s * ph.cos(), s * ph.sin(), z] };
    (pre, bl)
}

fn microphysics_exactness() -> Result<Outcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_p, mut worst_e, mut worst_rt) = (0.0f64, 0.0f64, 0.0f64);
    let n = 1_000_000;
    for _ in 0..n {
        let (pre, bl) = random_pair(&mut rng);
        let post = bl_forward(&pre, &bl)?;
        let e0 = pre.total_energy();
        let kin = |s: &PairState| 0.5 * (s.v.iter().chain(&s.v_star).map(|x| x * x).sum::<f64>()) + s.energy + s.energy_star;
        worst_e = worst_e.max(rel(kin(&post), kin(&pre)));
        let scale = norm3(pre.v) + norm3(pre.v_star);
        for k in 0..3 {
            let d = (post.v[k] + post.v_star[k]) - (pre.v[k] + pre.v_star[k]);
            worst_p = worst_p.max(d.abs() / scale);
        }
        if e0 > 0.0 && bl.big_r > 0.0 && bl.big_r < 1.0 {
            let back = bl_inverse(&post)?;
            let d = (back.r - bl.r)
                .abs()
                .max((back.big_r - bl.big_r).abs())
                .max((0..3).map(|k| (back.sigma[k] - bl.sigma[k]).abs()).fold(0.0, f64::max));
            worst_rt = worst_rt.max(d);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_p <= 1e-12 && worst_e <= 1e-12 && worst_rt <= 1e-10 && secs <= 10.0,
        format!("{n} calls: momentum {worst_p:.2e}, energy {worst_e:.2e}, round trip {worst_rt:.2e}, {secs:.2} s"),
    )
}

fn jacobian_certification() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (z, big_r_rev) = common::jacobian_point(&mut rng);
        worst = worst.max(rel(common::volume_ratio(&z), jacobian_factor(z[9], big_r_rev)?));
    }
    outcome(worst <= 1e-4, format!("1000 points, worst relative deviation {worst:.2e}"))
}

fn c_alpha_closed_form() -> Result<Outcome> {
    let mut worst = 0.0f64;
    for (alpha, _) in common::C_ALPHA_FROZEN {
        worst = worst.max(rel(kernel::c_alpha(alpha), common::c_alpha_quadrature(alpha)));
    }
    let c0 = kernel::c_alpha(0.0);
    let d0 = rel(c0, 16.0 * PI / 15.0);
    outcome(worst <= 1e-10 && d0 <= 1e-14, format!("worst deviation {worst:.2e}; c_alpha(0) = {c0:.6}"))
}

fn sigma_chain() -> Result<Outcome> {
    let checks = verify::check_sigma_bound(10_000, 1);
    let failed = checks.iter().filter(|c| c.failed()).count();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let exact = (0..1000).all(|_| kernel::sigma_integral(1.0, rng.random_range(0.0..10.0), 1.0) == 4.0 * PI);
    let closed = checks.iter().find(|c| c.name == "sigma_integral_closed_form").map(|c| rel(c.lhs, c.rhs)).unwrap_or(f64::NAN);
    outcome(
        failed == 0 && exact,
        format!("{} checks on 10000 configurations, {failed} failed; worst closed-form deviation {closed:.2e}; gamma = 1 gives 4π exactly: {exact}", checks.len()),
    )
}

fn battery_symmetry(cfg: &RunConfig, n_samples: usize) -> Result<(usize, usize)> {
    let battery = verify::standard_battery(cfg)?;
    let quad = cfg.quadrature();
    let mut failed = 0;
    for m in &battery {
        let p = CollisionParams { alpha: m.alpha, ..cfg.collision_params() };
        failed += verify::check_symmetry(m, &p, &quad, n_samples)?.iter().filter(|c| c.failed()).count();
    }
    Ok((battery.len(), failed))
}

fn symmetry() -> Result<Outcome> {
    let cfg = RunConfig::default();
    let (n, clean) = battery_symmetry(&cfg, 1_000_000)?;
    let (_, mutated) = battery_symmetry(&RunConfig { mutation: Mutation::WrongJacobian, ..cfg }, 1_000_000)?;
    outcome(
        clean == 0 && mutated > 0,
        format!("{n} battery members at 10^6 samples: {clean} disagreements; wrong Jacobian: {mutated} disagreements"),
    )
}

fn equilibrium() -> Result<Outcome> {
    let start = Instant::now();
    let cfg = RunConfig::default();
    let params = cfg.collision_params();
    let quad = cfg.quadrature();
    let spec = GridSpec::fitted(17, [16; 3], 8, 1.0, 0.0, params.a, params.alpha, cfg.tail)?;
    let grid = Arc::new(PhaseGrid::new(spec)?);
    let m = Maxwellian::new(1.0, [0.0; 3], 1.0);
    let field = DistributionField::maxwellian(grid.clone(), &m, params.alpha);

    let engine = CollisionEngine::new(&field, &params, &quad)?;
    // Nodes are drawn with probability proportional to the mass of M they carry.
    let mass: Vec<f64> = (0..grid.n_vi()).map(|vi| grid.vi_weight(vi) * field.column(vi)[0]).collect();
    let pick = rand_distr::weighted::WeightedIndex::new(&mass).expect("positive masses");
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst_sigmas = 0.0f64;
    for _ in 0..20 {
        let vi = rng.sample(&pick);
        let ix = rng.random_range(0..grid.n_x());
        let (v, e) = grid.vi_point(vi);
        let q = engine.operator(ix, v, e);
        let s = if q.value == 0.0 {
            0.0
        } else if q.std_error > 0.0 {
            q.value.abs() / q.std_error
        } else {
            f64::INFINITY
        };
        worst_sigmas = worst_sigmas.max(s);
    }

    let bc = BoundaryData::maxwellian(grid, &m, params.alpha);
    let out = solver::apply_psi(&field, &bc, &params, &quad)?;
    let dev = out.field.max_abs_diff(&field);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_sigmas <= 3.0 && dev <= 1e-4 && secs <= 300.0,
        format!(
            "|Q(M,M)| at 20 nodes: worst {worst_sigmas:.2} sigma; max |Psi(M) - M| = {dev:.2e} on (17, 16^3, 8); {secs:.1} s"
        ),
    )
}

fn battery_bounds() -> Result<Outcome> {
    let cfg = RunConfig::default();
    let report = verify::run_suite_scoped(&cfg, SuiteScope { microphysics: true, battery: true, solver: false })?;
    let failed = report.failures().count();
    let singular: Vec<_> = report.checks.iter().filter(|c| c.name == "gain_singular_norm").collect();
    let gated_in = !singular.is_empty() && singular.iter().all(|c| c.verdict != Verdict::Skipped);

    let low = RunConfig { gamma: 0.4, ..cfg.clone() };
    let member = &verify::standard_battery(&low)?[0];
    let p = CollisionParams { alpha: member.alpha, ..low.collision_params() };
    let gated_out = verify::check_gain(member, &p, &low.quadrature(), 10_000, low.seed)?
        .iter()
        .any(|c| c.name == "gain_singular_norm" && c.verdict == Verdict::Skipped);
    outcome(
        failed == 0 && gated_in && gated_out,
        format!(
            "{} checks, {failed} failed; singular-norm bound evaluated at gamma 0.5: {gated_in}, skipped at gamma 0.4: {gated_out}",
            report.checks.len()
        ),
    )
}

/// `2(‖f‖₀ + ‖f‖_{1-γ} + ‖f‖_P)` of the inflow data, with the weighted mass summed directly.
fn a1_recomputed(bc: &BoundaryData, params: &CollisionParams, seed: u64) -> Result<f64> {
    let grid = bc.grid();
    let p = bc.profile();
    let mut n0 = 0.0;
    for (vi, &pv) in p.iter().enumerate() {
        let (v, e) = grid.vi_point(vi);
        n0 += grid.vi_weight(vi) * weight(params.a, v, e) * pv;
    }
    let (ns, _) = norms::norm_k_profile(grid, p, 1.0 - params.gamma, params.a, &norms::w_candidates(grid, p))?;
    let family = norms::PlaneFamily::fitted(grid, p, 64, seed);
    let np = norms::norm_plane_profile(grid, p, params.a, &family)?.value;
    Ok(2.0 * (n0 + ns + np))
}

fn invariance() -> Result<Outcome> {
    let cfg = RunConfig { epsilon: 0.05, ..RunConfig::default() };
    let params = cfg.collision_params();
    let grid = Arc::new(PhaseGrid::new(cfg.grid_spec()?)?);
    let (bc, rep) = solver::make_boundary(&cfg.boundary_spec(), grid, &params, cfg.seed)?;
    let inv = solver::check_invariance(&bc.as_field(), &bc, &rep.norms, &params, &cfg.quadrature(), cfg.seed)?;
    let o = &inv.output;
    let a1 = a1_recomputed(&bc, &params, cfg.seed)?;
    let d = rel(inv.a1, a1);
    let margins = [o.margin_norm0, o.margin_singular, o.margin_plane, o.margin_loss];
    outcome(
        margins.iter().all(|m| *m >= 0.0) && !inv.degenerate && d <= 1e-12,
        format!(
            "eps 0.05 log margins: norm0 {:.3}, singular {:.3}, plane {:.3}, loss {:.3}; a1 = {:.6} recomputed to {d:.1e}",
            o.margin_norm0, o.margin_singular, o.margin_plane, o.margin_loss, inv.a1
        ),
    )
}

fn contraction() -> Result<Outcome> {
    let cfg = RunConfig::default();
    let params = cfg.collision_params();
    let quad = cfg.quadrature();
    let grid = Arc::new(PhaseGrid::new(cfg.grid_spec()?)?);
    let (bc, _) = solver::make_boundary(&cfg.boundary_spec(), grid.clone(), &params, cfg.seed)?;
    let eps = [0.2, 0.1, 0.05, 0.025];
    let rows = solver::contraction_sweep(&bc, &params, &quad, &eps, cfg.replicates)?;
    let trend = rows.windows(2).all(|w| {
        let se = (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
        w[1].ratio <= w[0].ratio + 3.0 * se
    });
    let below = rows.last().is_some_and(|r| r.ratio < 1.0);
    let mut consistent = true;
    let mut pairs = Vec::new();
    for row in &rows {
        let p = CollisionParams { epsilon: row.epsilon, ..params };
        let (_, rep) = solver::picard_solve(&DistributionField::zeros(grid.clone()), &bc, &p, &quad, &cfg.picard_options())?;
        let rate = rep.fitted_rate.unwrap_or(f64::NAN);
        consistent &= rep.converged && (rate / row.ratio - 1.0).abs() <= 0.3;
        pairs.push(format!("{:.3}/{:.3}", row.ratio, rate));
    }
    outcome(
        trend && below && consistent,
        format!("ratio/fitted rate at eps {eps:?}: {}; non-increasing {trend}, below one {below}", pairs.join(", ")),
    )
}

fn uniqueness() -> Result<Outcome> {
    let cfg = RunConfig { epsilon: 0.025, ..RunConfig::default() };
    let params = cfg.collision_params();
    let quad = cfg.quadrature();
    let grid = Arc::new(PhaseGrid::new(cfg.grid_spec()?)?);
    let (bc, _) = solver::make_boundary(&cfg.boundary_spec(), grid.clone(), &params, cfg.seed)?;
    let opts = cfg.picard_options();
    let from_zero = DistributionField::zeros(grid.clone());
    let from_maxwellian = DistributionField::maxwellian(grid, &Maxwellian::new(2.0, [0.2, 0.0, 0.0], 0.8), params.alpha);
    let (f1, r1) = solver::picard_solve(&from_zero, &bc, &params, &quad, &opts)?;
    let (f2, r2) = solver::picard_solve(&from_maxwellian, &bc, &params, &quad, &opts)?;
    let d = norms::norm0(&f1.abs_diff(&f2)?, params.a)?;
    outcome(
        r1.converged && r2.converged && d <= 2.0 * r1.tol,
        format!("distance {d:.2e} against 2 tol = {:.2e} after {} and {} iterations", 2.0 * r1.tol, r1.iterations, r2.iterations),
    )
}

fn admissibility() -> Result<Outcome> {
    let cfg = RunConfig::default();
    let params = cfg.collision_params();
    let grid = Arc::new(PhaseGrid::new(cfg.grid_spec()?)?);
    let (_, cutoff) = solver::make_boundary(&cfg.boundary_spec(), grid.clone(), &params, cfg.seed)?;
    let half = RunConfig { boundary_family: BoundaryFamily::HalfMaxwellian, ..cfg };
    let (_, plain) = solver::make_boundary(&half.boundary_spec(), grid, &params, half.seed)?;
    let r1 = cutoff.refinement.clone().unwrap();
    let r0 = plain.refinement.clone().unwrap();
    outcome(
        cutoff.admissible && !r1.divergent && !plain.admissible && r0.divergent,
        format!(
            "beta 1 norms {:.4?} admissible {}; beta 0 norms {:.4?} divergent {}",
            r1.values, cutoff.admissible, r0.values, r0.divergent
        ),
    )
}

fn small_config() -> RunConfig {
    RunConfig {
        n_x: 5,
        n_v: [8; 3],
        n_i: 4,
        eps_list: vec![0.2, 0.05],
        replicates: 2,
        symmetry_samples: 20_000,
        ..RunConfig::default()
    }
}

fn reports(cfg: &RunConfig) -> Result<String> {
    let suite = verify::run_suite(cfg)?.to_json();
    let params = cfg.collision_params();
    let grid = Arc::new(PhaseGrid::new(cfg.grid_spec()?)?);
    let (bc, _) = solver::make_boundary(&cfg.boundary_spec(), grid.clone(), &params, cfg.seed)?;
    let (f, rep) = solver::picard_solve(&DistributionField::zeros(grid), &bc, &params, &cfg.quadrature(), &cfg.picard_options())?;
    let mut field = Vec::new();
    f.write_to(&mut field)?;
    let digest = hex::encode(Sha256::digest(&field));
    Ok(format!("{suite}\n{}\n{digest}", serde_json::to_string(&rep).unwrap()))
}

fn in_pool<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool").install(job)
}

fn determinism() -> Result<Outcome> {
    let cfg = small_config();
    let first = in_pool(1, || reports(&cfg))?;
    let again = in_pool(1, || reports(&cfg))?;
    let four = in_pool(4, || reports(&cfg))?;
    outcome(
        first == again && first == four,
        format!("{} report bytes; repeat identical {}, 1 vs 4 threads identical {}", first.len(), first == again, first == four),
    )
}

type Criterion = (&'static str, fn() -> Result<Outcome>);

fn main() {
    let criteria: [Criterion; 12] = [
        ("microphysics exactness", microphysics_exactness),
        ("jacobian certification", jacobian_certification),
        ("c_alpha closed form", c_alpha_closed_form),
        ("sphere integral chain", sigma_chain),
        ("gain symmetry", symmetry),
        ("equilibrium identity", equilibrium),
        ("battery bounds", battery_bounds),
        ("invariance margins", invariance),
        ("contraction trend", contraction),
        ("uniqueness", uniqueness),
        ("boundary admissibility", admissibility),
        ("determinism", determinism),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match run() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failures += 1;
        }
        println!("{} {n:>2} {name}: {detail} [{:.1} s]", if pass { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
