//! Collision integrals: gain term, loss frequency, full operator and the weak-form identity.
//!
//! Monte Carlo samples `(v*, I*, r, R, σ)` as follows: `v*` Gaussian and `I*` exponential,
//! both matched to the field, and `(r, R, σ)` from the normalized collision measure
//! (`r ~ Beta(α+1, α+1)`, `R ~ Beta(3/2, 2α+2)`, `σ` uniform), so that the measure contributes
//! exactly the constant `c_α` to every sample weight. Each (v, I) node owns one random
//! stream and all x nodes share its samples.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Beta, Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::{stencil, FieldInterpolant, Interpolation};
use crate::kernel::{bl_inverse, BlParams, CollisionParams, Kernel, KernelModel, PairState};
use crate::phase_space::{dot, DistributionField, PhaseGrid};
use crate::quad;
use crate::rng::{self, tags, StreamRng};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureMode {
    #[default]
    MonteCarlo,
    Tensor,
}

/// Per-dimension orders of the deterministic product rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorOrders {
    pub velocity: usize,
    pub energy: usize,
    pub r: usize,
    pub big_r: usize,
    pub polar: usize,
}

impl Default for TensorOrders {
    fn default() -> Self {
        TensorOrders { velocity: 5, energy: 4, r: 3, big_r: 4, polar: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub mode: QuadratureMode,
    pub n_samples: usize,
    pub tensor: TensorOrders,
    pub seed: u64,
    pub interpolation: Interpolation,
    /// Fixed Gaussian scale for `v*`; matched to the field when absent.
    pub velocity_scale: Option<f64>,
    /// Fixed exponential mean for `I*`; matched to the field when absent.
    pub energy_mean: Option<f64>,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            mode: QuadratureMode::MonteCarlo,
            n_samples: 64,
            tensor: TensorOrders::default(),
            seed: 1,
            interpolation: Interpolation::MaxwellianRatio,
            velocity_scale: None,
            energy_mean: None,
        }
    }
}

impl QuadratureSpec {
    pub fn with_seed(&self, seed: u64) -> Self {
        QuadratureSpec { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == QuadratureMode::MonteCarlo && self.n_samples < 2 {
            return Err(Error::InvalidParameter("n_samples must be at least 2".into()));
        }
        let t = &self.tensor;
        if self.mode == QuadratureMode::Tensor && [t.velocity, t.energy, t.r, t.big_r, t.polar].contains(&0) {
            return Err(Error::InvalidParameter("tensor orders must be positive".into()));
        }
        for (name, x) in [("velocity_scale", self.velocity_scale), ("energy_mean", self.energy_mean)] {
            if let Some(x) = x {
                if !(x > 0.0 && x.is_finite()) {
                    return Err(Error::InvalidParameter(format!("{name} = {x} must be positive")));
                }
            }
        }
        Ok(())
    }
}

/// Estimate with its standard error (zero for deterministic quadrature) and Kish effective sample size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_effective: f64,
}

impl CollisionEstimate {
    pub fn exact(value: f64) -> Self {
        CollisionEstimate { value, std_error: 0.0, n_effective: f64::INFINITY }
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    #[inline]
    fn push(&mut self, c: f64) {
        self.sum += c;
        self.sum_sq += c * c;
    }

    fn merge(&mut self, o: &Moments) {
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
    }

    fn estimate(&self, n: usize, deterministic: bool) -> CollisionEstimate {
        if deterministic {
            return CollisionEstimate { value: self.sum, std_error: 0.0, n_effective: n as f64 };
        }
        let nf = n as f64;
        let mean = self.sum / nf;
        let var = ((self.sum_sq / nf - mean * mean) * nf / (nf - 1.0)).max(0.0);
        let n_eff = if self.sum_sq > 0.0 { self.sum * self.sum / self.sum_sq } else { 0.0 };
        CollisionEstimate { value: mean, std_error: (var / nf).sqrt(), n_effective: n_eff }
    }
}

/// Gaussian in velocity times exponential in energy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub center: [f64; 3],
    pub scale: f64,
    pub energy_mean: f64,
}

impl Proposal {
    /// Moments of `weight · field` over the grid, variances inflated by `widen`.
    pub fn matched(grid: &PhaseGrid, value: impl Fn(usize) -> f64, widen: f64) -> Proposal {
        let mut m0 = 0.0;
        let mut m1 = [0.0; 3];
        let mut m2 = 0.0;
        let mut me = 0.0;
        for vi in 0..grid.n_vi() {
            let f = value(vi);
            if !(f > 0.0) {
                continue;
            }
            let (v, e) = grid.vi_point(vi);
            let w = grid.vi_weight(vi) * f;
            m0 += w;
            for k in 0..3 {
                m1[k] += w * v[k];
            }
            m2 += w * dot(v, v);
            me += w * e;
        }
        if !(m0 > 0.0) || !m0.is_finite() {
            return Proposal { center: [0.0; 3], scale: 1.0, energy_mean: 1.0 };
        }
        let u = [m1[0] / m0, m1[1] / m0, m1[2] / m0];
        let t = ((m2 / m0 - dot(u, u)) / 3.0).max(1e-6);
        Proposal { center: u, scale: (widen * t).sqrt(), energy_mean: (widen * me / m0).max(1e-6) }
    }

    #[inline]
    pub fn sample(&self, rng: &mut StreamRng) -> ([f64; 3], f64, f64) {
        let z: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let v = [self.center[0] + self.scale * z[0], self.center[1] + self.scale * z[1], self.center[2] + self.scale * z[2]];
        let x: f64 = rng.sample(Exp1);
        let e = self.energy_mean * x;
        (v, e, self.inv_density(v, e))
    }

    #[inline]
    pub fn inv_density(&self, v: [f64; 3], e: f64) -> f64 {
        let s2 = self.scale * self.scale;
        let d = [v[0] - self.center[0], v[1] - self.center[1], v[2] - self.center[2]];
        (2.0 * PI * s2).powf(1.5) * (0.5 * dot(d, d) / s2).exp() * self.energy_mean * (e / self.energy_mean).exp()
    }
}

#[inline]
fn uniform_sphere(rng: &mut StreamRng) -> [f64; 3] {
    let z: f64 = 2.0 * rng.random::<f64>() - 1.0;
    let phi: f64 = 2.0 * PI * rng.random::<f64>();
    let s = (1.0 - z * z).max(0.0).sqrt();
    [s * phi.cos(), s * phi.sin(), z]
}

/// One quadrature point of the `(v*, I*, r, R, σ)` integral. `weight` already carries
/// `c_α` and the inverse proposal density.
#[derive(Clone, Copy, Debug)]
struct Sample {
    v_star: [f64; 3],
    e_star: f64,
    bl: BlParams,
    weight: f64,
}

/// Prepared collision integrals for one field.
pub struct CollisionEngine {
    grid: Arc<PhaseGrid>,
    kernel: Kernel,
    quad: QuadratureSpec,
    values: Vec<f64>,
    f: FieldInterpolant,
    g: Option<FieldInterpolant>,
    proposal: Proposal,
    beta_r: Beta<f64>,
    beta_big_r: Beta<f64>,
    tensor: Option<Vec<Sample>>,
}

fn energy_factor(alpha: f64, e: f64) -> f64 {
    if alpha == 0.0 {
        1.0
    } else {
        e.powf(alpha)
    }
}

fn reduced_internal(field: &DistributionField, alpha: f64) -> Vec<f64> {
    let grid = field.grid();
    let n_x = grid.n_x();
    let mut g = field.values().to_vec();
    if alpha != 0.0 {
        for vi in 0..grid.n_vi() {
            let (_, e) = grid.vi_point(vi);
            let s = energy_factor(alpha, e);
            for x in &mut g[vi * n_x..(vi + 1) * n_x] {
                *x /= s;
            }
        }
    }
    g
}

/// Scratch buffers for one column evaluation.
pub struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    gain: Vec<Moments>,
    loss: Vec<Moments>,
}

impl Scratch {
    pub fn new(n_x: usize) -> Self {
        Scratch {
            a: vec![0.0; n_x],
            b: vec![0.0; n_x],
            c: vec![0.0; n_x],
            d: vec![0.0; n_x],
            gain: vec![Moments::default(); n_x],
            loss: vec![Moments::default(); n_x],
        }
    }
}

/// Gain and loss estimates at every x node of one (v, I) point.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnEstimate {
    pub gain: Vec<CollisionEstimate>,
    pub loss: Vec<CollisionEstimate>,
}

impl CollisionEngine {
    pub fn new(field: &DistributionField, params: &CollisionParams, quad: &QuadratureSpec) -> Result<Self> {
        Self::build(field, None, params, quad)
    }

    /// Engine for the symmetrized bilinear gain `Q⁺(f, g)`.
    pub fn bilinear(
        f: &DistributionField,
        g: &DistributionField,
        params: &CollisionParams,
        quad: &QuadratureSpec,
    ) -> Result<Self> {
        f.same_grid(g)?;
        Self::build(f, Some(g), params, quad)
    }

    fn build(
        field: &DistributionField,
        other: Option<&DistributionField>,
        params: &CollisionParams,
        quad: &QuadratureSpec,
    ) -> Result<Self> {
        params.validate()?;
        quad.validate()?;
        field.check_admissible()?;
        let grid = field.grid().clone();
        if quad.mode == QuadratureMode::Tensor && grid.len() > 100_000 {
            return Err(Error::Unsupported(format!(
                "tensor quadrature is limited to grids of at most 1e5 nodes, got {}",
                grid.len()
            )));
        }
        let alpha = params.alpha;
        let f = FieldInterpolant::new(grid.clone(), &reduced_internal(field, alpha), quad.interpolation);
        let g = match other {
            Some(o) => {
                o.check_admissible()?;
                Some(FieldInterpolant::new(grid.clone(), &reduced_internal(o, alpha), quad.interpolation))
            }
            None => None,
        };
        let n_x = grid.n_x();
        let mut proposal = Proposal::matched(
            &grid,
            |vi| {
                let a: f64 = field.column(vi).iter().sum();
                let b: f64 = other.map_or(0.0, |o| o.column(vi).iter().sum());
                (a + b) / n_x as f64
            },
            1.0,
        );
        if let Some(s) = quad.velocity_scale {
            proposal.scale = s;
        }
        if let Some(m) = quad.energy_mean {
            proposal.energy_mean = m;
        }
        let kernel = Kernel::new(params);
        let beta_r = Beta::new(alpha + 1.0, alpha + 1.0).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let beta_big_r = Beta::new(1.5, 2.0 * alpha + 2.0).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let tensor =
            (quad.mode == QuadratureMode::Tensor).then(|| tensor_samples(&quad.tensor, &proposal, alpha, kernel.c_alpha));
        Ok(CollisionEngine {
            grid,
            kernel,
            quad: quad.clone(),
            values: field.values().to_vec(),
            f,
            g,
            proposal,
            beta_r,
            beta_big_r,
            tensor,
        })
    }

    pub fn grid(&self) -> &Arc<PhaseGrid> {
        &self.grid
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn proposal(&self) -> &Proposal {
        &self.proposal
    }

    fn deterministic(&self) -> bool {
        self.tensor.is_some()
    }

    fn n_points(&self) -> usize {
        self.tensor.as_ref().map_or(self.quad.n_samples, |t| t.len())
    }

    #[inline]
    fn draw(&self, rng: &mut StreamRng) -> Sample {
        let (v_star, e_star, inv_p) = self.proposal.sample(rng);
        let r = self.beta_r.sample(rng);
        let big_r = self.beta_big_r.sample(rng);
        let sigma = uniform_sphere(rng);
        Sample { v_star, e_star, bl: BlParams { r, big_r, sigma }, weight: self.kernel.c_alpha * inv_p }
    }

    fn for_each_sample(&self, stream: u64, mut visit: impl FnMut(&Sample)) {
        match &self.tensor {
            Some(points) => points.iter().for_each(visit),
            None => {
                let mut rng = rng::stream(self.quad.seed, stream);
                for _ in 0..self.quad.n_samples {
                    let s = self.draw(&mut rng);
                    visit(&s);
                }
            }
        }
    }

    /// Gain and (full-quadrature) loss at `(v, I)` for all x nodes from one common sample set.
    pub fn column(&self, v: [f64; 3], e: f64, stream: u64, with_loss: bool, scratch: &mut Scratch) -> ColumnEstimate {
        let alpha = self.kernel.params.alpha;
        let e_alpha = energy_factor(alpha, e);
        scratch.gain.iter_mut().for_each(|m| *m = Moments::default());
        scratch.loss.iter_mut().for_each(|m| *m = Moments::default());
        let Scratch { a, b, c, d, gain, loss } = scratch;
        self.for_each_sample(stream, |s| {
            let pre = PairState { v, v_star: s.v_star, energy: e, energy_star: s.e_star };
            let en = pre.total_energy();
            let post = self.kernel.forward(&pre, &s.bl, en);
            let w = s.weight * self.kernel.cross_section(&pre, &s.bl);
            let es_alpha = energy_factor(alpha, s.e_star);
            let st1 = stencil(&self.grid, post.v, post.energy);
            let st2 = stencil(&self.grid, post.v_star, post.energy_star);
            match (st1, st2) {
                (Some(s1), Some(s2)) => {
                    let wg = w * e_alpha * es_alpha;
                    self.f.eval_all(&s1, a);
                    self.f.eval_all(&s2, b);
                    match &self.g {
                        None => {
                            for x in 0..a.len() {
                                gain[x].push(wg * a[x] * b[x]);
                            }
                        }
                        Some(g) => {
                            g.eval_all(&s1, c);
                            g.eval_all(&s2, d);
                            for x in 0..a.len() {
                                gain[x].push(0.5 * wg * (a[x] * d[x] + b[x] * c[x]));
                            }
                        }
                    }
                }
                _ => gain.iter_mut().for_each(|m| m.push(0.0)),
            }
            if with_loss {
                match stencil(&self.grid, s.v_star, s.e_star) {
                    Some(st) => {
                        self.f.eval_all(&st, c);
                        for x in 0..c.len() {
                            loss[x].push(w * es_alpha * c[x]);
                        }
                    }
                    None => loss.iter_mut().for_each(|m| m.push(0.0)),
                }
            }
        });
        let n = self.n_points();
        let det = self.deterministic();
        ColumnEstimate {
            gain: scratch.gain.iter().map(|m| m.estimate(n, det)).collect(),
            loss: if with_loss { scratch.loss.iter().map(|m| m.estimate(n, det)).collect() } else { Vec::new() },
        }
    }

    /// Stream id of a grid node.
    pub fn node_stream(vi: usize) -> u64 {
        rng::mix(tags::NODE, vi as u64)
    }

    pub fn gain(&self, ix: usize, v: [f64; 3], e: f64) -> CollisionEstimate {
        let mut s = Scratch::new(self.grid.n_x());
        self.column(v, e, rng::point_stream(tags::POINT, v, e), false, &mut s).gain[ix]
    }

    /// Loss frequency by sampling the full collision measure (any kernel model).
    pub fn loss_sampled(&self, ix: usize, v: [f64; 3], e: f64) -> CollisionEstimate {
        let mut s = Scratch::new(self.grid.n_x());
        self.column(v, e, rng::point_stream(tags::POINT, v, e), true, &mut s).loss[ix]
    }

    /// Deterministic loss frequency `c_α Σ f(v*, I*) E^{γ/2} w` for every x node.
    /// Only the total-energy model reduces to this form.
    pub fn loss_reduced_column(&self, v: [f64; 3], e: f64) -> Result<Vec<f64>> {
        if self.kernel.params.model != KernelModel::TotalEnergy {
            return Err(Error::Unsupported("the reduced loss frequency needs the total-energy kernel".into()));
        }
        let n_x = self.grid.n_x();
        let hg = 0.5 * self.kernel.params.gamma;
        let mut acc = vec![0.0; n_x];
        for vi in 0..self.grid.n_vi() {
            let col = &self.values[vi * n_x..(vi + 1) * n_x];
            let (vs, es) = self.grid.vi_point(vi);
            let d = [v[0] - vs[0], v[1] - vs[1], v[2] - vs[2]];
            let en = 0.25 * dot(d, d) + e + es;
            let c = self.grid.vi_weight(vi) * if hg == 0.0 { 1.0 } else { en.powf(hg) };
            for (o, f) in acc.iter_mut().zip(col) {
                *o += c * f;
            }
        }
        acc.iter_mut().for_each(|x| *x *= self.kernel.c_alpha);
        Ok(acc)
    }

    /// Loss frequency: reduced deterministic form for the total-energy kernel, sampled otherwise.
    pub fn loss(&self, ix: usize, v: [f64; 3], e: f64) -> CollisionEstimate {
        match self.loss_reduced_column(v, e) {
            Ok(col) => CollisionEstimate::exact(col[ix]),
            Err(_) => self.loss_sampled(ix, v, e),
        }
    }

    /// Interpolated field value.
    pub fn field_value(&self, ix: usize, v: [f64; 3], e: f64) -> f64 {
        energy_factor(self.kernel.params.alpha, e) * self.f.eval(ix, v, e)
    }

    /// `Q = Q⁺ - f L` with the gain sampled and the loss as in [`Self::loss`].
    pub fn operator(&self, ix: usize, v: [f64; 3], e: f64) -> CollisionEstimate {
        let gain = self.gain(ix, v, e);
        let loss = self.loss(ix, v, e);
        let f = self.field_value(ix, v, e);
        CollisionEstimate {
            value: gain.value - f * loss.value,
            std_error: (gain.std_error.powi(2) + (f * loss.std_error).powi(2)).sqrt(),
            n_effective: gain.n_effective,
        }
    }

    /// Gain at every grid node, with per-node standard errors; x fastest.
    pub fn gain_field(&self) -> (DistributionField, Vec<f64>) {
        let n_x = self.grid.n_x();
        let cols: Vec<ColumnEstimate> = (0..self.grid.n_vi())
            .into_par_iter()
            .map_init(
                || Scratch::new(n_x),
                |s, vi| {
                    let (v, e) = self.grid.vi_point(vi);
                    self.column(v, e, Self::node_stream(vi), false, s)
                },
            )
            .collect();
        let mut values = Vec::with_capacity(self.grid.len());
        let mut errors = Vec::with_capacity(self.grid.len());
        for c in &cols {
            for g in &c.gain {
                values.push(g.value);
                errors.push(g.std_error);
            }
        }
        (DistributionField::from_values(self.grid.clone(), values).unwrap(), errors)
    }

    /// Proposal matched to `|ψ| f` at one x node, with inflated variances.
    fn weighted_proposal(&self, ix: usize, psi: &(dyn Fn([f64; 3], f64) -> f64 + Sync)) -> Proposal {
        let n_x = self.grid.n_x();
        Proposal::matched(
            &self.grid,
            |vi| {
                let (v, e) = self.grid.vi_point(vi);
                psi(v, e).abs() * self.values[vi * n_x + ix]
            },
            1.25,
        )
    }

    fn blocks<T: Send>(&self, n_samples: usize, tag: u64, run: impl Fn(&mut StreamRng, usize) -> T + Sync) -> Vec<T> {
        let n_blocks = n_samples.div_ceil(BLOCK);
        (0..n_blocks)
            .into_par_iter()
            .map(|b| {
                let mut rng = rng::stream(self.quad.seed, rng::mix(tag, b as u64));
                let count = BLOCK.min(n_samples - b * BLOCK);
                run(&mut rng, count)
            })
            .collect()
    }

    /// Gain-side estimate of `∫ ψ Q⁺(f, f) dv dI` at x node `ix`.
    fn weighted_gain(&self, ix: usize, psi: &(dyn Fn([f64; 3], f64) -> f64 + Sync), n: usize, tag: u64) -> CollisionEstimate {
        let p = self.weighted_proposal(ix, psi);
        let alpha = self.kernel.params.alpha;
        let parts = self.blocks(n, tag, |rng, count| {
            let mut m = Moments::default();
            for _ in 0..count {
                let (v, e, ip1) = p.sample(rng);
                let (vs, es, ip2) = p.sample(rng);
                let bl = BlParams { r: self.beta_r.sample(rng), big_r: self.beta_big_r.sample(rng), sigma: uniform_sphere(rng) };
                let pre = PairState { v, v_star: vs, energy: e, energy_star: es };
                let post = self.kernel.forward(&pre, &bl, pre.total_energy());
                let g1 = self.f.eval(ix, post.v, post.energy);
                let g2 = if g1 == 0.0 { 0.0 } else { self.f.eval(ix, post.v_star, post.energy_star) };
                let c = if g2 == 0.0 {
                    0.0
                } else {
                    psi(v, e)
                        * g1
                        * g2
                        * energy_factor(alpha, e)
                        * energy_factor(alpha, es)
                        * self.kernel.cross_section(&pre, &bl)
                        * self.kernel.c_alpha
                        * ip1
                        * ip2
                };
                m.push(c);
            }
            m
        });
        merge(parts).estimate(n, false)
    }

    /// Pre-collision-side estimate of `∫ ψ(v', I') f f* B dB dv dI`, evaluated through the
    /// explicit change of variables to post-collision coordinates with its Jacobian.
    fn weighted_transfer(&self, ix: usize, psi: &(dyn Fn([f64; 3], f64) -> f64 + Sync), n: usize, tag: u64) -> CollisionEstimate {
        let p = self.weighted_proposal(ix, psi);
        let parts = self.blocks(n, tag, |rng, count| {
            let mut m = Moments::default();
            for _ in 0..count {
                let (v, e, ip1) = p.sample(rng);
                let (vs, es, ip2) = p.sample(rng);
                let bl = BlParams { r: rng.random::<f64>(), big_r: rng.random::<f64>(), sigma: uniform_sphere(rng) };
                let pre = PairState { v, v_star: vs, energy: e, energy_star: es };
                let en = pre.total_energy();
                let post = self.kernel.forward(&pre, &bl, en);
                let Ok(rev) = bl_inverse(&pre) else {
                    m.push(0.0);
                    continue;
                };
                if !(bl.big_r > 0.0 && bl.big_r < 1.0 && rev.big_r > 0.0 && rev.big_r < 1.0) {
                    m.push(0.0);
                    continue;
                }
                let back = self.kernel.forward(&post, &rev, en);
                let g1 = self.f.eval(ix, back.v, back.energy);
                let g2 = if g1 == 0.0 { 0.0 } else { self.f.eval(ix, back.v_star, back.energy_star) };
                let c = if g2 == 0.0 {
                    0.0
                } else {
                    psi(post.v, post.energy)
                        * g1
                        * g2
                        * self.kernel.cross_section(&post, &rev)
                        * self.kernel.measure_weight(rev.r, rev.big_r, post.energy, post.energy_star)
                        * self.kernel.jacobian(bl.big_r, rev.big_r)
                        * 4.0
                        * PI
                        * ip1
                        * ip2
                };
                m.push(c);
            }
            m
        });
        merge(parts).estimate(n, false)
    }

    /// Two independent estimates of the weak-form identity
    /// `∫ ψ Q⁺(f, f) dv dI = ∫ ψ(v', I') f f* B dB dv dI` at x node `ix`.
    pub fn symmetry(&self, ix: usize, psi: &(dyn Fn([f64; 3], f64) -> f64 + Sync), n_samples: usize) -> SymmetryEstimate {
        let lhs = self.weighted_gain(ix, psi, n_samples, tags::SYM_GAIN);
        let rhs = self.weighted_transfer(ix, psi, n_samples, tags::SYM_PRE);
        SymmetryEstimate {
            lhs: lhs.value,
            lhs_std_error: lhs.std_error,
            rhs: rhs.value,
            rhs_std_error: rhs.std_error,
            combined_error: (lhs.std_error.powi(2) + rhs.std_error.powi(2)).sqrt(),
        }
    }

    /// `∫ ψ Q(f, f) dv dI` at x node `ix`, gain and loss from independent streams.
    pub fn moment(&self, ix: usize, psi: &(dyn Fn([f64; 3], f64) -> f64 + Sync), n_samples: usize) -> CollisionEstimate {
        let gain = self.weighted_gain(ix, psi, n_samples, tags::MOMENT_GAIN);
        let p = self.weighted_proposal(ix, psi);
        let alpha = self.kernel.params.alpha;
        let parts = self.blocks(n_samples, tags::MOMENT_LOSS, |rng, count| {
            let mut m = Moments::default();
            for _ in 0..count {
                let (v, e, ip1) = p.sample(rng);
                let (vs, es, ip2) = p.sample(rng);
                let bl = BlParams { r: self.beta_r.sample(rng), big_r: self.beta_big_r.sample(rng), sigma: uniform_sphere(rng) };
                let pre = PairState { v, v_star: vs, energy: e, energy_star: es };
                let f1 = self.f.eval(ix, v, e);
                let f2 = if f1 == 0.0 { 0.0 } else { self.f.eval(ix, vs, es) };
                let c = if f2 == 0.0 {
                    0.0
                } else {
                    psi(v, e)
                        * f1
                        * f2
                        * energy_factor(alpha, e)
                        * energy_factor(alpha, es)
                        * self.kernel.cross_section(&pre, &bl)
                        * self.kernel.c_alpha
                        * ip1
                        * ip2
                };
                m.push(c);
            }
            m
        });
        let loss = merge(parts).estimate(n_samples, false);
        CollisionEstimate {
            value: gain.value - loss.value,
            std_error: (gain.std_error.powi(2) + loss.std_error.powi(2)).sqrt(),
            n_effective: gain.n_effective.min(loss.n_effective),
        }
    }
}

const BLOCK: usize = 8192;

fn merge(parts: Vec<Moments>) -> Moments {
    let mut total = Moments::default();
    for p in &parts {
        total.merge(p);
    }
    total
}

fn tensor_samples(orders: &TensorOrders, p: &Proposal, alpha: f64, c_alpha: f64) -> Vec<Sample> {
    let vr = quad::normal_expectation(orders.velocity);
    let er = quad::exponential_expectation(orders.energy, p.energy_mean);
    let rr = quad::beta_expectation(orders.r, alpha + 1.0, alpha + 1.0);
    let big_rr = quad::beta_expectation(orders.big_r, 1.5, 2.0 * alpha + 2.0);
    let sphere = quad::sphere_expectation(orders.polar);
    let mut out = Vec::new();
    for (&z0, &w0) in vr.nodes.iter().zip(&vr.weights) {
        for (&z1, &w1) in vr.nodes.iter().zip(&vr.weights) {
            for (&z2, &w2) in vr.nodes.iter().zip(&vr.weights) {
                let vs = [p.center[0] + p.scale * z0, p.center[1] + p.scale * z1, p.center[2] + p.scale * z2];
                for (&es, &we) in er.nodes.iter().zip(&er.weights) {
                    let base = w0 * w1 * w2 * we * c_alpha * p.inv_density(vs, es);
                    for (&r, &wr) in rr.nodes.iter().zip(&rr.weights) {
                        for (&big_r, &wbr) in big_rr.nodes.iter().zip(&big_rr.weights) {
                            for &(sigma, ws) in &sphere {
                                out.push(Sample {
                                    v_star: vs,
                                    e_star: es,
                                    bl: BlParams { r, big_r, sigma },
                                    weight: base * wr * wbr * ws,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryEstimate {
    pub lhs: f64,
    pub lhs_std_error: f64,
    pub rhs: f64,
    pub rhs_std_error: f64,
    pub combined_error: f64,
}

impl SymmetryEstimate {
    /// Agreement within `k` combined standard errors.
    pub fn agrees(&self, k: f64) -> bool {
        (self.lhs - self.rhs).abs() <= k * self.combined_error
    }
}

pub fn loss_frequency(
    f: &DistributionField,
    ix: usize,
    v: [f64; 3],
    e: f64,
    params: &CollisionParams,
    quad: &QuadratureSpec,
) -> Result<CollisionEstimate> {
    Ok(CollisionEngine::new(f, params, quad)?.loss(ix, v, e))
}

pub fn gain_term(
    f: &DistributionField,
    ix: usize,
    v: [f64; 3],
    e: f64,
    params: &CollisionParams,
    quad: &QuadratureSpec,
) -> Result<CollisionEstimate> {
    Ok(CollisionEngine::new(f, params, quad)?.gain(ix, v, e))
}

pub fn collision_operator(
    f: &DistributionField,
    ix: usize,
    v: [f64; 3],
    e: f64,
    params: &CollisionParams,
    quad: &QuadratureSpec,
) -> Result<CollisionEstimate> {
    Ok(CollisionEngine::new(f, params, quad)?.operator(ix, v, e))
}

pub fn symmetry_functional(
    f: &DistributionField,
    ix: usize,
    psi: &(dyn Fn([f64; 3], f64) -> f64 + Sync),
    params: &CollisionParams,
    quad: &QuadratureSpec,
    n_samples: usize,
) -> Result<SymmetryEstimate> {
    Ok(CollisionEngine::new(f, params, quad)?.symmetry(ix, psi, n_samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::{GridSpec, Maxwellian};

    fn params(alpha: f64) -> CollisionParams {
        CollisionParams { gamma: 0.5, alpha, model: KernelModel::TotalEnergy, a: 0.5, epsilon: 1.0, mutation: Default::default() }
    }

    fn maxwell_field(alpha: f64) -> DistributionField {
        let spec = GridSpec::fitted(3, [12, 12, 12], 8, 1.0, 0.0, 0.5, alpha, 1e-8).unwrap();
        let grid = Arc::new(PhaseGrid::new(spec).unwrap());
        DistributionField::maxwellian(grid, &Maxwellian::new(1.0, [0.0; 3], 1.0), alpha)
    }

    #[test]
    fn maxwellian_gain_matches_loss_term() {
        for alpha in [0.0, 1.0] {
            let f = maxwell_field(alpha);
            let quad = QuadratureSpec { n_samples: 4000, ..Default::default() };
            let eng = CollisionEngine::new(&f, &params(alpha), &quad).unwrap();
            let (v, e) = ([0.3, -0.2, 0.5], 0.7);
            let mut s = Scratch::new(3);
            let col = eng.column(v, e, 11, true, &mut s);
            let m = Maxwellian::new(1.0, [0.0; 3], 1.0).eval(alpha, v, e);
            let (g, l) = (col.gain[1], col.loss[1]);
            assert!((g.value - m * l.value).abs() < 1e-6 * g.value, "{alpha}: {g:?} vs {}", m * l.value);
            let reduced = eng.loss_reduced_column(v, e).unwrap()[1];
            assert!((l.value - reduced).abs() < 4.0 * l.std_error, "{l:?} vs {reduced}");
        }
    }

    #[test]
    fn tensor_mode_is_deterministic_and_close_to_sampling() {
        let f = maxwell_field(0.0);
        let quad = QuadratureSpec { mode: QuadratureMode::Tensor, ..Default::default() };
        let eng = CollisionEngine::new(&f, &params(0.0), &quad).unwrap();
        let t = eng.loss_sampled(0, [0.1, 0.0, 0.0], 0.5);
        assert_eq!(t.std_error, 0.0);
        let reduced = eng.loss_reduced_column([0.1, 0.0, 0.0], 0.5).unwrap()[0];
        assert!((t.value - reduced).abs() < 1e-2 * reduced, "{} vs {reduced}", t.value);
    }

    #[test]
    fn reduced_loss_rejects_other_models() {
        let f = maxwell_field(0.0);
        let p = CollisionParams { model: KernelModel::DetachedPerParticle, ..params(0.0) };
        let eng = CollisionEngine::new(&f, &p, &QuadratureSpec::default()).unwrap();
        assert!(eng.loss_reduced_column([0.0; 3], 1.0).is_err());
        assert!(eng.loss(0, [0.0; 3], 1.0).std_error > 0.0);
    }

    #[test]
    fn symmetry_holds_and_catches_sign_flip() {
        let f = maxwell_field(0.0);
        let quad = QuadratureSpec::default();
        let phi = |v: [f64; 3], e: f64| crate::phase_space::weight(0.2, v, e);
        let ok = symmetry_functional(&f, 1, &phi, &params(0.0), &quad, 40_000).unwrap();
        assert!(ok.agrees(3.0), "{ok:?}");
        let bad = CollisionParams { mutation: crate::kernel::Mutation::WrongJacobian, ..params(0.0) };
        let s = symmetry_functional(&f, 1, &phi, &bad, &quad, 40_000).unwrap();
        assert!(!s.agrees(3.0), "{s:?}");
    }
}
