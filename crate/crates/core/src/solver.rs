//! Inflow data, the mild-form solution map `Ψ`, Picard iteration and its diagnostics.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision::{CollisionEngine, QuadratureSpec, Scratch};
use crate::error::{Error, Result};
use crate::kernel::{CollisionParams, Kernel};
use crate::norms::{self, NormReport};
use crate::phase_space::{dot, DistributionField, GridSpec, Maxwellian, PhaseGrid};
use crate::quad;
use crate::rng::{self, tags};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryFamily {
    /// `n |v₁|^β M(v, I)` on the incoming half-space.
    #[default]
    CutoffMaxwellian,
    /// Plain half-range Maxwellian (`β = 0`).
    HalfMaxwellian,
    /// Values read from a field file: the x = 0 slice on `v₁ > 0`, the x = 1 slice on `v₁ < 0`.
    CustomTable,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SideParams {
    pub density: f64,
    pub temperature: f64,
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_beta() -> f64 {
    1.0
}

impl Default for SideParams {
    fn default() -> Self {
        SideParams { density: 1.0, temperature: 1.0, velocity: [0.0; 3], beta: 1.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub family: BoundaryFamily,
    pub left: SideParams,
    pub right: SideParams,
    pub table: Option<PathBuf>,
}

impl BoundarySpec {
    fn effective_beta(&self, side: &SideParams) -> f64 {
        match self.family {
            BoundaryFamily::HalfMaxwellian => 0.0,
            _ => side.beta,
        }
    }

    /// Parameter checks against the weight exponent `a`.
    pub fn validate(&self, a: f64) -> Vec<String> {
        let mut problems = Vec::new();
        if self.family == BoundaryFamily::CustomTable {
            if self.table.is_none() {
                problems.push("custom_table boundary needs a table path".into());
            }
            return problems;
        }
        for (name, s) in [("left", &self.left), ("right", &self.right)] {
            if !(s.density >= 0.0 && s.density.is_finite()) {
                problems.push(format!("{name}.density = {} must be non-negative", s.density));
            }
            if !(s.temperature > 0.0 && s.temperature.is_finite()) {
                problems.push(format!("{name}.temperature = {} must be positive", s.temperature));
            } else if a * s.temperature >= 1.0 {
                problems.push(format!("weight admissibility: a·T = {} on the {name} side must be < 1", a * s.temperature));
            }
            if !(s.beta >= 0.0 && s.beta.is_finite()) {
                problems.push(format!("{name}.beta = {} must be non-negative", s.beta));
            }
        }
        problems
    }
}

/// Realized inflow data `f_LR` on a grid.
#[derive(Clone, Debug)]
pub struct BoundaryData {
    grid: Arc<PhaseGrid>,
    spec: BoundarySpec,
    alpha: f64,
    profile: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementStudy {
    pub n_v1: [usize; 3],
    pub values: [f64; 3],
    pub divergent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub norms: NormReport,
    pub refinement: Option<RefinementStudy>,
    pub admissible: bool,
    pub warnings: Vec<String>,
}

fn side_ln(side: &SideParams, beta: f64, alpha: f64, v: [f64; 3], e: f64) -> f64 {
    if side.density == 0.0 {
        return f64::NEG_INFINITY;
    }
    let m = Maxwellian::new(side.density, side.velocity, side.temperature);
    let d = [v[0] - side.velocity[0], v[1] - side.velocity[1], v[2] - side.velocity[2]];
    let ln_i = if alpha == 0.0 { 0.0 } else { alpha * e.ln() };
    let ln_b = if beta == 0.0 { 0.0 } else { beta * v[0].abs().ln() };
    m.ln_prefactor(alpha) + ln_i + ln_b - (0.5 * dot(d, d) + e) / side.temperature
}

impl BoundaryData {
    pub fn new(grid: Arc<PhaseGrid>, spec: &BoundarySpec, alpha: f64, a: f64) -> Result<Self> {
        let problems = spec.validate(a);
        if !problems.is_empty() {
            let joined = problems.join("; ");
            return Err(if joined.contains("weight admissibility") {
                Error::WeightAdmissibility(joined)
            } else {
                Error::InvalidParameter(joined)
            });
        }
        let profile = match spec.family {
            BoundaryFamily::CustomTable => {
                let table = DistributionField::load(spec.table.as_ref().unwrap())?;
                if table.grid().spec() != grid.spec() {
                    return Err(Error::ShapeMismatch("boundary table grid differs from the run grid".into()));
                }
                table.check_admissible()?;
                let n_x = grid.n_x();
                (0..grid.n_vi())
                    .map(|vi| {
                        let (v, _) = grid.vi_point(vi);
                        let col = table.column(vi);
                        if v[0] > 0.0 {
                            col[0]
                        } else {
                            col[n_x - 1]
                        }
                    })
                    .collect()
            }
            _ => (0..grid.n_vi())
                .map(|vi| {
                    let (v, e) = grid.vi_point(vi);
                    let side = if v[0] > 0.0 { &spec.left } else { &spec.right };
                    side_ln(side, spec.effective_beta(side), alpha, v, e).exp()
                })
                .collect(),
        };
        Ok(BoundaryData { grid, spec: spec.clone(), alpha, profile })
    }

    /// Data given directly as a per-(v, I) profile.
    pub fn from_profile(grid: Arc<PhaseGrid>, profile: Vec<f64>, alpha: f64) -> Result<Self> {
        if profile.len() != grid.n_vi() || profile.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidField("boundary profile must be finite, non-negative and match the grid".into()));
        }
        let spec = BoundarySpec { family: BoundaryFamily::CustomTable, ..Default::default() };
        Ok(BoundaryData { grid, spec, alpha, profile })
    }

    /// `f_LR` equal to a Maxwellian on both incoming half-spaces.
    pub fn maxwellian(grid: Arc<PhaseGrid>, m: &Maxwellian, alpha: f64) -> Self {
        let profile = (0..grid.n_vi())
            .map(|vi| {
                let (v, e) = grid.vi_point(vi);
                m.eval(alpha, v, e)
            })
            .collect();
        BoundaryData::from_profile(grid, profile, alpha).unwrap()
    }

    pub fn zero(grid: Arc<PhaseGrid>, alpha: f64) -> Self {
        let n = grid.n_vi();
        BoundaryData::from_profile(grid, vec![0.0; n], alpha).unwrap()
    }

    pub fn grid(&self) -> &Arc<PhaseGrid> {
        &self.grid
    }

    pub fn spec(&self) -> &BoundarySpec {
        &self.spec
    }

    /// `f_L` on `v₁ > 0` nodes and `f_R` on `v₁ < 0` nodes.
    pub fn profile(&self) -> &[f64] {
        &self.profile
    }

    /// The x-constant extension of `f_LR`.
    pub fn as_field(&self) -> DistributionField {
        DistributionField::from_profile(self.grid.clone(), &self.profile).unwrap()
    }

    /// `ln f_L(v, I)` for `v₁ > 0` when the data has a closed form.
    pub fn ln_left(&self, v: [f64; 3], e: f64) -> Option<f64> {
        match self.spec.family {
            BoundaryFamily::CustomTable => None,
            _ => Some(side_ln(&self.spec.left, self.spec.effective_beta(&self.spec.left), self.alpha, v, e)),
        }
    }

    fn has_closed_form(&self) -> bool {
        self.spec.family != BoundaryFamily::CustomTable
    }
}

/// Inflow norm on grids refined along `v₁` only; divergence shows as increments that do not shrink.
pub fn refinement_study(spec: &BoundarySpec, grid: &PhaseGrid, alpha: f64, gamma: f64, a: f64) -> Result<RefinementStudy> {
    let base = grid.spec().clone();
    let mut n_v1 = [0; 3];
    let mut values = [0.0; 3];
    for (level, mult) in [1usize, 2, 4].into_iter().enumerate() {
        let mut s = GridSpec { n_x: 2, ..base.clone() };
        s.n_v[0] = base.n_v[0] * mult;
        let g = Arc::new(PhaseGrid::new(s)?);
        let bd = BoundaryData::new(g.clone(), spec, alpha, a)?;
        n_v1[level] = g.axis(0).len();
        values[level] = norms::boundary_norm_profile(&g, bd.profile(), gamma, a)?;
    }
    let d1 = values[1] - values[0];
    let d2 = values[2] - values[1];
    let scale = values[2].abs().max(f64::MIN_POSITIVE);
    let divergent = d1 > 1e-6 * scale && d2 >= 0.5 * d1;
    Ok(RefinementStudy { n_v1, values, divergent })
}

pub fn make_boundary(
    spec: &BoundarySpec,
    grid: Arc<PhaseGrid>,
    params: &CollisionParams,
    plane_seed: u64,
) -> Result<(BoundaryData, BoundaryReport)> {
    let bd = BoundaryData::new(grid.clone(), spec, params.alpha, params.a)?;
    let mut norms = norms::norm_report_profile(&grid, bd.profile(), params.gamma, params.a, plane_seed)?;
    norms.boundary_norm = Some(norms::boundary_norm_profile(&grid, bd.profile(), params.gamma, params.a)?);
    let mut warnings = Vec::new();
    let refinement = if bd.has_closed_form() {
        Some(refinement_study(spec, &grid, params.alpha, params.gamma, params.a)?)
    } else {
        warnings.push("tabulated inflow data cannot be refined; admissibility not checked".into());
        None
    };
    let zero_beta =
        bd.has_closed_form() && [&spec.left, &spec.right].iter().any(|s| s.density > 0.0 && spec.effective_beta(s) == 0.0);
    if zero_beta {
        warnings.push("β = 0 inflow data violates the weighted inflow condition".into());
    }
    let admissible = refinement.as_ref().is_some_and(|r| !r.divergent) && !zero_beta;
    if norms.planes_outside > 0 {
        warnings.push(format!("{} candidate planes miss the velocity box", norms.planes_outside));
    }
    Ok((bd, BoundaryReport { norms, refinement, admissible, warnings }))
}

#[inline]
fn fitted_weights(mu: f64) -> (f64, f64) {
    if mu.abs() < 1e-3 {
        let e1 = 1.0 - mu / 2.0 + mu * mu / 6.0 - mu * mu * mu / 24.0;
        let e2 = 0.5 - mu / 6.0 + mu * mu / 24.0 - mu * mu * mu / 120.0;
        (e1, e2)
    } else {
        let m = (-mu).exp_m1();
        (-m / mu, (mu + m) / (mu * mu))
    }
}

/// Mild-form sweep of one (v, I) column.
///
/// `sign` is the sign inside the attenuation exponent (−1 for the correct map). On each x
/// cell the loss is replaced by its mean and the ratio `Q / L` is taken linear, so the
/// source integral is exact whenever `Q / L` is constant along x.
pub fn mild_column(x: &[f64], lambda: f64, sign: f64, inflow: f64, l: &[f64], q: &[f64], forward: bool, out: &mut [f64]) {
    let n = x.len();
    let idx = |k: usize| if forward { k } else { n - 1 - k };
    let mut att = 0.0;
    let mut s = 0.0;
    out[idx(0)] = inflow;
    for k in 0..n - 1 {
        let (i0, i1) = (idx(k), idx(k + 1));
        let d = (x[i1] - x[i0]).abs();
        let l_bar = 0.5 * (l[i0] + l[i1]);
        let mu = -sign * lambda * d * l_bar;
        let (e1, e2) = fitted_weights(mu);
        let q0 = if l[i0] > 0.0 { q[i0] * l_bar / l[i0] } else { q[i0] };
        let q1 = if l[i1] > 0.0 { q[i1] * l_bar / l[i1] } else { q[i1] };
        s = (-mu).exp() * s + d * ((e1 - e2) * q0 + e2 * q1);
        att += mu;
        out[i1] = (-att).exp() * inflow + lambda * s;
    }
}

#[derive(Clone, Debug)]
pub struct PsiOutput {
    pub field: DistributionField,
    /// Nodes that came out negative and were set to zero.
    pub clamped: usize,
}

/// `Ψ(f)`: gain and loss at each (v, I) node share one sample set across all x nodes.
pub fn apply_psi(f: &DistributionField, bc: &BoundaryData, params: &CollisionParams, quad: &QuadratureSpec) -> Result<PsiOutput> {
    f.same_grid(&bc.as_field())?;
    let engine = CollisionEngine::new(f, params, quad)?;
    let grid = f.grid().clone();
    let n_x = grid.n_x();
    let x = grid.x_nodes().to_vec();
    let sign = engine.kernel().attenuation_sign();
    let cols: Vec<(Vec<f64>, usize)> = (0..grid.n_vi())
        .into_par_iter()
        .map_init(
            || Scratch::new(n_x),
            |s, vi| {
                let (v, e) = grid.vi_point(vi);
                let est = engine.column(v, e, CollisionEngine::node_stream(vi), true, s);
                let q: Vec<f64> = est.gain.iter().map(|g| g.value).collect();
                let l: Vec<f64> = est.loss.iter().map(|g| g.value).collect();
                let mut out = vec![0.0; n_x];
                let lambda = params.epsilon / v[0].abs();
                mild_column(&x, lambda, sign, bc.profile()[vi], &l, &q, v[0] > 0.0, &mut out);
                let mut clamped = 0;
                for o in &mut out {
                    if *o < 0.0 || o.is_nan() {
                        *o = 0.0;
                        clamped += 1;
                    }
                }
                (out, clamped)
            },
        )
        .collect();
    let clamped = cols.iter().map(|c| c.1).sum();
    let values: Vec<f64> = cols.into_iter().flat_map(|c| c.0).collect();
    let field = DistributionField::from_values(grid, values)?;
    field.check_admissible()?;
    Ok(PsiOutput { field, clamped })
}

/// `exp(-(ε/|v₁|) ∫ L(f)(z, v, I) dz)` between two x nodes, trapezoid in z.
pub fn attenuation(
    f: &DistributionField,
    ix_from: usize,
    ix_to: usize,
    v: [f64; 3],
    e: f64,
    params: &CollisionParams,
    quad: &QuadratureSpec,
) -> Result<f64> {
    if ix_from > ix_to || ix_to >= f.grid().n_x() {
        return Err(Error::InvalidParameter("attenuation needs x_from ≤ x_to inside the grid".into()));
    }
    if v[0] == 0.0 {
        return Err(Error::InvalidParameter("attenuation needs v₁ ≠ 0".into()));
    }
    let engine = CollisionEngine::new(f, params, quad)?;
    let l: Vec<f64> = match engine.loss_reduced_column(v, e) {
        Ok(col) => col,
        Err(_) => (0..f.grid().n_x()).map(|ix| engine.loss_sampled(ix, v, e).value).collect(),
    };
    let x = f.grid().x_nodes();
    let mut t = 0.0;
    for k in ix_from..ix_to {
        t += 0.5 * (x[k + 1] - x[k]) * (l[k] + l[k + 1]);
    }
    Ok((engine.kernel().attenuation_sign() * params.epsilon / v[0].abs() * t).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardOptions {
    /// Absolute stopping tolerance; `1e-6 ‖f_LR‖₀` when absent.
    pub tol: Option<f64>,
    pub max_iter: usize,
    pub auto_halve: bool,
    pub revalidate: bool,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions { tol: None, max_iter: 50, auto_halve: false, revalidate: true }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub schema_version: u32,
    #[serde(with = "crate::json_float::vec")]
    pub residuals: Vec<f64>,
    #[serde(with = "crate::json_float::vec")]
    pub ratios: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: bool,
    pub epsilon: f64,
    pub halvings: usize,
    pub tol: f64,
    /// Geometric decay rate fitted to the residuals after the first.
    pub fitted_rate: Option<f64>,
    /// Largest nodewise `|Ψ(f) - f|` at the last iteration.
    #[serde(with = "crate::json_float")]
    pub max_node_residual: f64,
    pub clamped: usize,
    /// `‖Ψ(f) - f‖₀` for the final field with a fresh seed.
    pub revalidation_residual: Option<f64>,
    pub norms: Option<NormReport>,
    pub invariance: Option<InvarianceReport>,
    #[serde(skip)]
    pub wall_time: f64,
}

/// Slope of `ln r_n` against `n`, as a rate `exp(slope)`.
pub fn fitted_rate(residuals: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = residuals
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, r)| **r > 0.0 && r.is_finite())
        .map(|(i, r)| (i as f64, r.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some((sxy / sxx).exp())
}

fn residual(a: &DistributionField, b: &DistributionField, weight_a: f64) -> Result<(f64, f64)> {
    let d = a.abs_diff(b)?;
    let sup = d.values().iter().copied().fold(0.0, f64::max);
    Ok((norms::norm0(&d, weight_a)?, sup))
}

/// Residual growth over the first residual that counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Picard iteration `f ← Ψ(f)` with the quadrature seed frozen across iterations.
pub fn picard_solve(
    f0: &DistributionField,
    bc: &BoundaryData,
    params: &CollisionParams,
    quad: &QuadratureSpec,
    opts: &PicardOptions,
) -> Result<(DistributionField, IterationReport)> {
    let start = Instant::now();
    let tol = match opts.tol {
        Some(t) => t,
        None => 1e-6 * norms::norm0_profile(bc.grid(), bc.profile(), params.a)?,
    };
    if !(tol >= 0.0) {
        return Err(Error::InvalidParameter("tolerance must be non-negative".into()));
    }
    f0.check_admissible()?;
    let mut params = *params;
    let mut halvings = 0;
    loop {
        let mut report =
            IterationReport { schema_version: SCHEMA_VERSION, epsilon: params.epsilon, halvings, tol, ..Default::default() };
        let mut f = f0.clone();
        let mut growth = 0;
        for _ in 0..opts.max_iter {
            let out = apply_psi(&f, bc, &params, quad)?;
            let (res, sup) = residual(&out.field, &f, params.a)?;
            report.clamped += out.clamped;
            if let Some(&prev) = report.residuals.last() {
                report.ratios.push(if prev > 0.0 { res / prev } else { 0.0 });
                growth = if res > prev { growth + 1 } else { 0 };
            }
            report.residuals.push(res);
            report.max_node_residual = sup;
            report.iterations += 1;
            f = out.field;
            if res <= tol {
                report.converged = true;
                break;
            }
            if growth >= 5 || !res.is_finite() || res > DIVERGENCE_FACTOR * report.residuals[0] {
                report.diverged = true;
                break;
            }
        }
        report.fitted_rate = fitted_rate(&report.residuals);
        if report.diverged && opts.auto_halve && halvings < 6 {
            halvings += 1;
            params.epsilon *= 0.5;
            continue;
        }
        if report.converged && opts.revalidate {
            let fresh = quad.with_seed(rng::mix(quad.seed, tags::REVALIDATE));
            let out = apply_psi(&f, bc, &params, &fresh)?;
            report.revalidation_residual = Some(residual(&out.field, &f, params.a)?.0);
        }
        report.wall_time = start.elapsed().as_secs_f64();
        return Ok((f, report));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionRow {
    pub epsilon: f64,
    pub ratio: f64,
    pub std_error: f64,
    pub replicates: usize,
}

/// Picard steps taken from 0 before the standard pair is read off.
pub const PAIR_WARMUP: usize = 3;

/// Consecutive frozen-seed Picard iterates `(Ψⁿ⁺¹(0), Ψⁿ(0))` with `n = PAIR_WARMUP`.
/// Their difference lies close to the slowest-decaying mode, so the ratio measured on
/// this pair tracks the asymptotic Picard rate. A secant from 0 sees only half the
/// derivative of the quadratic map.
pub fn standard_pair(
    bc: &BoundaryData,
    params: &CollisionParams,
    quad: &QuadratureSpec,
) -> Result<(DistributionField, DistributionField)> {
    let mut g = DistributionField::zeros(bc.grid().clone());
    for _ in 0..PAIR_WARMUP {
        g = apply_psi(&g, bc, params, quad)?.field;
    }
    let f = apply_psi(&g, bc, params, quad)?.field;
    Ok((f, g))
}

/// Contraction ratios on the standard pair, rebuilt at each ε.
pub fn contraction_sweep(
    bc: &BoundaryData,
    params: &CollisionParams,
    quad: &QuadratureSpec,
    eps_list: &[f64],
    replicates: usize,
) -> Result<Vec<ContractionRow>> {
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let p = CollisionParams { epsilon: eps, ..*params };
        let (f, g) = standard_pair(bc, &p, quad)?;
        rows.extend(measure_contraction(&f, &g, bc, &p, quad, &[eps], replicates)?);
    }
    Ok(rows)
}

/// `‖Ψ(f) - Ψ(g)‖₀ / ‖f - g‖₀` per ε, averaged over seeded replicates that share
/// their seed between the two applications.
pub fn measure_contraction(
    f: &DistributionField,
    g: &DistributionField,
    bc: &BoundaryData,
    params: &CollisionParams,
    quad: &QuadratureSpec,
    eps_list: &[f64],
    replicates: usize,
) -> Result<Vec<ContractionRow>> {
    let denom = norms::norm0(&f.abs_diff(g)?, params.a)?;
    if !(denom > 0.0) {
        return Err(Error::InvalidParameter("contraction needs two distinct fields".into()));
    }
    if replicates == 0 {
        return Err(Error::InvalidParameter("at least one replicate is needed".into()));
    }
    let mut rows = Vec::new();
    for &eps in eps_list {
        let p = CollisionParams { epsilon: eps, ..*params };
        let mut ratios = Vec::with_capacity(replicates);
        for r in 0..replicates {
            let q = quad.with_seed(rng::mix(quad.seed, rng::mix(tags::REPLICATE, r as u64)));
            let pf = apply_psi(f, bc, &p, &q)?.field;
            let pg = apply_psi(g, bc, &p, &q)?.field;
            ratios.push(norms::norm0(&pf.abs_diff(&pg)?, params.a)? / denom);
        }
        let n = ratios.len() as f64;
        let mean = ratios.iter().sum::<f64>() / n;
        let se =
            if ratios.len() > 1 { (ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt() } else { 0.0 };
        rows.push(ContractionRow { epsilon: eps, ratio: mean, std_error: se, replicates });
    }
    Ok(rows)
}

/// Membership of one field in the invariant set, as log-ratios `ln(bound / value)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipMargins {
    pub norm0: f64,
    pub norm_singular: f64,
    pub norm_plane: f64,
    pub margin_norm0: f64,
    pub margin_singular: f64,
    pub margin_plane: f64,
    /// `min ln(L / (a₂ (1 + (|v|² + I)^{γ/2})))` over all nodes.
    pub margin_loss: f64,
    pub satisfied: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub a1: f64,
    pub c_alpha: f64,
    pub ln_c1: f64,
    pub ln_c2: f64,
    pub ln_a2: f64,
    pub ln_a3: f64,
    pub ln_a4: f64,
    /// `C₁` or `C₂` vanishes.
    pub degenerate: bool,
    pub input: MembershipMargins,
    pub output: MembershipMargins,
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[derive(Clone, Copy)]
struct LogSum {
    max: f64,
    sum: f64,
}

impl LogSum {
    fn new() -> Self {
        LogSum { max: f64::NEG_INFINITY, sum: 0.0 }
    }

    #[inline]
    fn push(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x > self.max {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.sum += (x - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Gauss–Legendre panels on `[a, b]` shrinking geometrically towards the ends flagged.
fn graded_rule(a: f64, b: f64, toward_a: bool, toward_b: bool) -> quad::Rule {
    let mut cuts = vec![a, b];
    let len = b - a;
    let mut d = 0.25 * len;
    while d > 1e-12 * len {
        if toward_a {
            cuts.push(a + d);
        }
        if toward_b {
            cuts.push(b - d);
        }
        d *= 0.5;
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for w in cuts.windows(2) {
        let r = quad::gauss_legendre(8, w[0], w[1]);
        nodes.extend(r.nodes);
        weights.extend(r.weights);
    }
    quad::Rule { nodes, weights }
}

/// `ln ∫_{region, v₁>0} exp(-K(1 + (|v|² + I)^{γ/2})/v₁) f_L dv dI` in spherical coordinates about `e₁`.
fn ln_boundary_constant(bc: &BoundaryData, k: f64, gamma: f64, rho: (f64, f64), toward_lo: bool, toward_hi: bool) -> f64 {
    let left = bc.spec().left;
    if left.density == 0.0 {
        return f64::NEG_INFINITY;
    }
    let t = left.temperature;
    let rr = graded_rule(rho.0, rho.1, toward_lo, toward_hi);
    let cr = graded_rule(0.0, 1.0, false, true);
    let ir = graded_rule(0.0, 80.0 * t, true, false);
    let transverse = left.velocity[1] != 0.0 || left.velocity[2] != 0.0;
    let n_phi = if transverse { 24 } else { 1 };
    let mut acc = LogSum::new();
    for (&r, &wr) in rr.nodes.iter().zip(&rr.weights) {
        for (&c, &wc) in cr.nodes.iter().zip(&cr.weights) {
            let s = (1.0 - c * c).max(0.0).sqrt();
            for j in 0..n_phi {
                let ph = 2.0 * std::f64::consts::PI * j as f64 / n_phi as f64;
                let v = [r * c, r * s * ph.cos(), r * s * ph.sin()];
                let ln_w = (wr * wc * r * r * 2.0 * std::f64::consts::PI / n_phi as f64).ln();
                for (&e, &we) in ir.nodes.iter().zip(&ir.weights) {
                    let f = bc.ln_left(v, e).unwrap();
                    acc.push(ln_w + we.ln() + f - k * (1.0 + (r * r + e).powf(0.5 * gamma)) / v[0]);
                }
            }
        }
    }
    acc.value()
}

/// Same integral as a grid sum, for tabulated data.
fn ln_boundary_constant_grid(bc: &BoundaryData, k: f64, gamma: f64, inside: impl Fn(f64) -> bool) -> f64 {
    let g = bc.grid();
    let mut acc = LogSum::new();
    for vi in 0..g.n_vi() {
        let (v, e) = g.vi_point(vi);
        let f = bc.profile()[vi];
        if v[0] > 0.0 && f > 0.0 && inside(dot(v, v).sqrt()) {
            acc.push(g.vi_weight(vi).ln() + f.ln() - k * (1.0 + (dot(v, v) + e).powf(0.5 * gamma)) / v[0]);
        }
    }
    acc.value()
}

/// `(ln C₁, ln C₂)` for the inflow data and `a₁`.
pub fn ln_boundary_constants(bc: &BoundaryData, params: &CollisionParams, a1: f64) -> (f64, f64) {
    let k = 4.0 * std::f64::consts::PI * params.a.exp() / params.a * a1;
    if bc.has_closed_form() {
        let l = bc.spec().left;
        let hi = 4.0 + dot(l.velocity, l.velocity).sqrt() + 60.0 * l.temperature.sqrt();
        (
            ln_boundary_constant(bc, k, params.gamma, (0.0, 1.0), false, true),
            ln_boundary_constant(bc, k, params.gamma, (4.0, hi), true, false),
        )
    } else {
        (
            ln_boundary_constant_grid(bc, k, params.gamma, |r| r <= 1.0),
            ln_boundary_constant_grid(bc, k, params.gamma, |r| r >= 4.0),
        )
    }
}

/// Loss frequency at every node: reduced form for the total-energy kernel, sampled otherwise.
pub fn loss_field(f: &DistributionField, params: &CollisionParams, quad: &QuadratureSpec) -> Result<DistributionField> {
    let engine = CollisionEngine::new(f, params, quad)?;
    let grid = f.grid().clone();
    let n_x = grid.n_x();
    let cols: Vec<Vec<f64>> = (0..grid.n_vi())
        .into_par_iter()
        .map_init(
            || Scratch::new(n_x),
            |s, vi| {
                let (v, e) = grid.vi_point(vi);
                match engine.loss_reduced_column(v, e) {
                    Ok(c) => c,
                    Err(_) => {
                        engine.column(v, e, CollisionEngine::node_stream(vi), true, s).loss.iter().map(|l| l.value).collect()
                    }
                }
            },
        )
        .collect();
    DistributionField::from_values(grid, cols.concat())
}

fn membership(
    f: &DistributionField,
    params: &CollisionParams,
    quad: &QuadratureSpec,
    ln_a: (f64, f64, f64, f64),
    plane_seed: u64,
) -> Result<MembershipMargins> {
    let (ln_a1, ln_a2, ln_a3, ln_a4) = ln_a;
    let r = norms::norm_report(f, params.gamma, params.a, plane_seed)?;
    let l = loss_field(f, params, quad)?;
    let grid = f.grid();
    let n_x = grid.n_x();
    let mut margin_loss = f64::INFINITY;
    for vi in 0..grid.n_vi() {
        let (v, e) = grid.vi_point(vi);
        let rhs = ln_a2 + (1.0 + (dot(v, v) + e).powf(0.5 * params.gamma)).ln();
        for ix in 0..n_x {
            margin_loss = margin_loss.min(l.values()[vi * n_x + ix].ln() - rhs);
        }
    }
    let m0 = ln_a1 - r.norm0.ln();
    let ms = ln_a3 - r.norm_singular.ln();
    let mp = ln_a4 - r.norm_plane.ln();
    Ok(MembershipMargins {
        norm0: r.norm0,
        norm_singular: r.norm_singular,
        norm_plane: r.norm_plane,
        margin_norm0: m0,
        margin_singular: ms,
        margin_plane: mp,
        margin_loss,
        satisfied: m0 >= 0.0 && ms >= 0.0 && mp >= 0.0 && margin_loss >= 0.0,
    })
}

/// Invariance constants from the inflow data and membership margins of `f` and `Ψ(f)`.
pub fn check_invariance(
    f: &DistributionField,
    bc: &BoundaryData,
    boundary_norms: &NormReport,
    params: &CollisionParams,
    quad: &QuadratureSpec,
    plane_seed: u64,
) -> Result<InvarianceReport> {
    let gamma = params.gamma;
    let a1 = 2.0 * boundary_norms.triple;
    let ca = Kernel::new(params).c_alpha;
    let (ln_c1, ln_c2) = ln_boundary_constants(bc, params, a1);
    let degenerate = !(ln_c1.is_finite() && ln_c2.is_finite()) || !(a1 > 0.0);
    let ln_a1 = a1.ln();
    let ln_a2 = ca.ln() + (ln_c1 - gamma * 4f64.ln()).min(ln_c2);
    let big = (1.0 / params.a).max(1.0);
    let ln_a3 = log_add((0.5 * a1).ln(), (16.0 * std::f64::consts::PI / (1.0 + gamma).powi(2) * big).ln() + 2.0 * ln_a1 - ln_a2);
    let plane_const = std::f64::consts::PI.max(2f64.powf(2.0 - gamma));
    let ln_a4 = log_add((0.5 * a1).ln(), plane_const.ln() - ln_a2 + ln_a1 + log_add(ln_a1, ln_a3));
    let lns = (ln_a1, ln_a2, ln_a3, ln_a4);
    let input = membership(f, params, quad, lns, plane_seed)?;
    let psi = apply_psi(f, bc, params, quad)?.field;
    let output = membership(&psi, params, quad, lns, plane_seed)?;
    Ok(InvarianceReport { a1, c_alpha: ca, ln_c1, ln_c2, ln_a2, ln_a3, ln_a4, degenerate, input, output })
}

/// Macroscopic moments at one x node; velocity and temperatures are absent where the density vanishes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub x: f64,
    pub density: f64,
    pub velocity: Option<[f64; 3]>,
    pub t_tr: Option<f64>,
    pub t_int: Option<f64>,
    pub flux: f64,
}

pub fn moments(f: &DistributionField, alpha: f64) -> Vec<MomentRow> {
    let grid = f.grid();
    let n = f.integrate_weighted(|_, _| 1.0);
    let m1: Vec<Vec<f64>> = (0..3).map(|k| f.integrate_weighted(|v, _| v[k])).collect();
    let m2 = f.integrate_weighted(|v, _| dot(v, v));
    let me = f.integrate_weighted(|_, e| e);
    grid.x_nodes()
        .iter()
        .enumerate()
        .map(|(ix, &x)| {
            let d = n[ix];
            if !(d > 0.0) {
                return MomentRow { x, density: d, velocity: None, t_tr: None, t_int: None, flux: m1[0][ix] };
            }
            let u = [m1[0][ix] / d, m1[1][ix] / d, m1[2][ix] / d];
            MomentRow {
                x,
                density: d,
                velocity: Some(u),
                t_tr: Some((m2[ix] / d - dot(u, u)) / 3.0),
                t_int: Some(me[ix] / ((alpha + 1.0) * d)),
                flux: m1[0][ix],
            }
        })
        .collect()
}
