//! Weighted norms of fields: `‖·‖₀`, the shifted singular norm `‖·‖_k`, the hyperplane
//! norm `‖·‖_P`, their sum `|||·|||`, and the inflow-data norm.
//!
//! Every norm integrates `φ(v, I) sup_x f(x, v, I)`, so all functions here work on a
//! per-(v, I) profile; the field wrappers take the sup over x first. Suprema over `w` and
//! over planes are taken over finite candidate sets and are therefore lower bounds.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::{ratio_values, Reference};
use crate::phase_space::{dot, weight, DistributionField, PhaseGrid};
use crate::quad;
use crate::rng::{self, tags};

/// The plane `{v : normal · v = offset}` with a unit normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl Plane {
    pub fn new(normal: [f64; 3], offset: f64) -> Result<Plane> {
        let n = dot(normal, normal).sqrt();
        if !(n > 0.0) || !offset.is_finite() {
            return Err(Error::InvalidParameter("plane needs a nonzero normal and finite offset".into()));
        }
        Ok(Plane { normal: [normal[0] / n, normal[1] / n, normal[2] / n], offset: offset / n })
    }

    pub fn axis(k: usize, offset: f64) -> Plane {
        let mut normal = [0.0; 3];
        normal[k] = 1.0;
        Plane { normal, offset }
    }

    pub fn through(normal: [f64; 3], point: [f64; 3]) -> Result<Plane> {
        Plane::new(normal, dot(normal, point))
    }

    pub fn shifted(&self, d: f64) -> Plane {
        Plane { normal: self.normal, offset: self.offset + d }
    }

    /// Orthonormal in-plane basis.
    fn basis(&self) -> ([f64; 3], [f64; 3]) {
        let n = self.normal;
        let k = (0..3).min_by(|&i, &j| n[i].abs().total_cmp(&n[j].abs())).unwrap();
        let mut t = [0.0; 3];
        t[k] = 1.0;
        let d = dot(t, n);
        let e1 = [t[0] - d * n[0], t[1] - d * n[1], t[2] - d * n[2]];
        let l = dot(e1, e1).sqrt();
        let e1 = [e1[0] / l, e1[1] / l, e1[2] / l];
        let e2 = [n[1] * e1[2] - n[2] * e1[1], n[2] * e1[0] - n[0] * e1[2], n[0] * e1[1] - n[1] * e1[0]];
        (e1, e2)
    }
}

/// Candidate planes and the Gaussian reference used to interpolate between velocity nodes.
///
/// The reference belongs to the family rather than to the integrand, so for a fixed family
/// the plane norm is a supremum of linear functionals and hence a seminorm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneFamily {
    pub planes: Vec<Plane>,
    #[serde(skip)]
    pub reference: Option<Reference>,
}

impl PlaneFamily {
    /// Axis planes through every node coordinate, the three axis planes through `mean`, and
    /// `n_random` seeded planes through `mean` with uniformly distributed normals.
    pub fn standard(grid: &PhaseGrid, mean: [f64; 3], n_random: usize, seed: u64) -> PlaneFamily {
        let mut planes = Vec::new();
        for k in 0..3 {
            for &c in &grid.axis(k).nodes {
                planes.push(Plane::axis(k, c));
            }
        }
        for (k, &m) in mean.iter().enumerate() {
            planes.push(Plane::axis(k, m));
        }
        let mut r = rng::stream(seed, tags::PLANES);
        for _ in 0..n_random {
            let z: f64 = 2.0 * r.random::<f64>() - 1.0;
            let t: f64 = 2.0 * PI * r.random::<f64>();
            let s = (1.0 - z * z).max(0.0).sqrt();
            let n = [s * t.cos(), s * t.sin(), z];
            planes.push(Plane { normal: n, offset: dot(n, mean) });
        }
        PlaneFamily { planes, reference: None }
    }

    /// The standard family through the mean of `p`, interpolating relative to a Gaussian
    /// fitted to `p`; plane integrals of Maxwellian profiles are then exact.
    pub fn fitted(grid: &PhaseGrid, p: &[f64], n_random: usize, seed: u64) -> PlaneFamily {
        PlaneFamily {
            reference: Reference::fit(grid, |vi| p[vi]),
            ..PlaneFamily::standard(grid, mean_velocity(grid, p), n_random, seed)
        }
    }
}

/// Value with a standard error from per-node errors of the integrand.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub norm0: f64,
    pub norm_singular: f64,
    pub norm_plane: f64,
    pub triple: f64,
    pub argmax_w: [f64; 3],
    pub argmax_plane: Plane,
    pub boundary_norm: Option<f64>,
    /// Candidate planes that miss the velocity box.
    pub planes_outside: usize,
}

fn check_profile(grid: &PhaseGrid, p: &[f64]) -> Result<()> {
    if p.len() != grid.n_vi() {
        return Err(Error::ShapeMismatch(format!("profile has {} entries, grid has {}", p.len(), grid.n_vi())));
    }
    Ok(())
}

fn finite(x: f64, what: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::InvalidField(format!("{what} is not finite")))
    }
}

/// `Σ_I w_I φ(v, I) p(v, I)` times the cell volume, per velocity node.
fn velocity_masses(grid: &PhaseGrid, p: &[f64], a: f64) -> Vec<f64> {
    let n_i = grid.n_energy();
    (0..grid.n_velocity())
        .map(|iv| {
            let v = grid.velocity(iv);
            (0..n_i)
                .map(|k| {
                    let vi = iv * n_i + k;
                    let (_, e) = grid.vi_point(vi);
                    grid.vi_weight(vi) * weight(a, v, e) * p[vi]
                })
                .sum()
        })
        .collect()
}

pub fn norm0_profile(grid: &PhaseGrid, p: &[f64], a: f64) -> Result<f64> {
    check_profile(grid, p)?;
    finite(velocity_masses(grid, p, a).iter().sum(), "norm0")
}

pub fn norm0(f: &DistributionField, a: f64) -> Result<f64> {
    norm0_profile(f.grid(), &f.sup_over_x(), a)
}

pub fn norm0_with_error(grid: &PhaseGrid, p: &[f64], err: &[f64], a: f64) -> Result<NormEstimate> {
    let value = norm0_profile(grid, p, a)?;
    let var: f64 = (0..grid.n_vi())
        .map(|vi| {
            let (v, e) = grid.vi_point(vi);
            (grid.vi_weight(vi) * weight(a, v, e) * err[vi]).powi(2)
        })
        .sum();
    Ok(NormEstimate { value, std_error: var.sqrt() })
}

/// Mean of `|y - w|^{-k}` over the ball of radius `rho` centred a distance `d` from `w`.
pub fn ball_average(k: f64, rho: f64, d: f64) -> f64 {
    if k == 0.0 {
        return 1.0;
    }
    if d == 0.0 {
        return 3.0 * rho.powf(-k) / (3.0 - k);
    }
    // s² ∫_{S²} |s ω + d e|^{-k} dω
    let shell = |s: f64| {
        if s == 0.0 {
            return 0.0;
        }
        2.0 * PI * s / ((2.0 - k) * d) * ((s + d).powf(2.0 - k) - (s - d).abs().powf(2.0 - k))
    };
    let rule = |lo: f64, hi: f64| quad::gauss_legendre(16, lo, hi).integrate(shell);
    let total = if d < rho { rule(0.0, d) + rule(d, rho) } else { rule(0.0, rho) };
    3.0 * total / (4.0 * PI * rho.powi(3))
}

/// Singular weight of a velocity cell centred at `v`: ball average near `w`, point value elsewhere.
fn singular_weight(k: f64, rho: f64, d: f64) -> f64 {
    if d < 2.0 * rho {
        ball_average(k, rho, d)
    } else {
        d.powf(-k)
    }
}

/// Default candidates for the sup over `w`: every velocity node, the origin and the mean velocity.
pub fn w_candidates(grid: &PhaseGrid, p: &[f64]) -> Vec<[f64; 3]> {
    let mut c: Vec<[f64; 3]> = (0..grid.n_velocity()).map(|iv| grid.velocity(iv)).collect();
    c.push([0.0; 3]);
    c.push(mean_velocity(grid, p));
    c
}

pub fn mean_velocity(grid: &PhaseGrid, p: &[f64]) -> [f64; 3] {
    let mut m0 = 0.0;
    let mut m1 = [0.0; 3];
    for (vi, &f) in p.iter().enumerate() {
        let (v, _) = grid.vi_point(vi);
        let w = grid.vi_weight(vi) * f;
        m0 += w;
        for k in 0..3 {
            m1[k] += w * v[k];
        }
    }
    if m0 > 0.0 {
        [m1[0] / m0, m1[1] / m0, m1[2] / m0]
    } else {
        [0.0; 3]
    }
}

fn ball_radius(grid: &PhaseGrid) -> f64 {
    (3.0 * grid.cell_volume() / (4.0 * PI)).cbrt()
}

fn is_node(grid: &PhaseGrid, w: [f64; 3]) -> Option<[usize; 3]> {
    let mut m = [0usize; 3];
    for k in 0..3 {
        let ax = grid.axis(k);
        let t = (w[k] + ax.half_width) / ax.h - 0.5;
        let j = t.round();
        if !(j >= 0.0 && (j as usize) < ax.len()) || (ax.nodes[j as usize] - w[k]).abs() > 1e-12 * ax.half_width {
            return None;
        }
        m[k] = j as usize;
    }
    Some(m)
}

/// Singular-weight coefficients per velocity node for one `w`.
fn singular_coefficients(grid: &PhaseGrid, k: f64, w: [f64; 3]) -> Vec<f64> {
    let rho = ball_radius(grid);
    (0..grid.n_velocity())
        .map(|iv| {
            let v = grid.velocity(iv);
            let d = [v[0] - w[0], v[1] - w[1], v[2] - w[2]];
            singular_weight(k, rho, dot(d, d).sqrt())
        })
        .collect()
}

/// `sup_w ∫ φ |v - w|^{-k} p dv dI` over the candidate set, with the maximizing `w`.
pub fn norm_k_profile(grid: &PhaseGrid, p: &[f64], k: f64, a: f64, candidates: &[[f64; 3]]) -> Result<(f64, [f64; 3])> {
    check_profile(grid, p)?;
    if !(0.0..3.0).contains(&k) {
        return Err(Error::InvalidParameter(format!("singular exponent k = {k} must lie in [0, 3)")));
    }
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("no candidate shift points".into()));
    }
    let masses = velocity_masses(grid, p, a);
    if k == 0.0 {
        return Ok((finite(masses.iter().sum(), "norm0")?, candidates[0]));
    }
    let n = [grid.axis(0).len(), grid.axis(1).len(), grid.axis(2).len()];
    let h = [grid.axis(0).h, grid.axis(1).h, grid.axis(2).h];
    let rho = ball_radius(grid);
    // node-to-node weights depend only on index offsets
    let table: Vec<f64> = (0..n[0] * n[1] * n[2])
        .map(|t| {
            let (d0, d1, d2) = (t / (n[1] * n[2]), (t / n[2]) % n[1], t % n[2]);
            let d = ((d0 as f64 * h[0]).powi(2) + (d1 as f64 * h[1]).powi(2) + (d2 as f64 * h[2]).powi(2)).sqrt();
            singular_weight(k, rho, d)
        })
        .collect();
    let values: Vec<f64> = candidates
        .par_iter()
        .map(|&w| match is_node(grid, w) {
            Some(m) => {
                let mut acc = 0.0;
                for (iv, &mass) in masses.iter().enumerate() {
                    if mass == 0.0 {
                        continue;
                    }
                    let j = grid.velocity_multi_index(iv);
                    let t = (j[0].abs_diff(m[0]) * n[1] + j[1].abs_diff(m[1])) * n[2] + j[2].abs_diff(m[2]);
                    acc += table[t] * mass;
                }
                acc
            }
            None => singular_coefficients(grid, k, w).iter().zip(&masses).map(|(c, m)| c * m).sum(),
        })
        .collect();
    let (best, value) =
        values.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    Ok((finite(value, "singular norm")?, candidates[best]))
}

pub fn norm_k(f: &DistributionField, k: f64, a: f64, candidates: &[[f64; 3]]) -> Result<(f64, [f64; 3])> {
    norm_k_profile(f.grid(), &f.sup_over_x(), k, a, candidates)
}

/// Standard error of the singular-norm functional at a fixed `w`.
pub fn norm_k_error(grid: &PhaseGrid, err: &[f64], k: f64, a: f64, w: [f64; 3]) -> f64 {
    let c = singular_coefficients(grid, k, w);
    let n_i = grid.n_energy();
    let mut var = 0.0;
    for vi in 0..grid.n_vi() {
        let (v, e) = grid.vi_point(vi);
        var += (c[vi / n_i] * grid.vi_weight(vi) * weight(a, v, e) * err[vi]).powi(2);
    }
    var.sqrt()
}

/// Plane integrals of `φ p` with `p` interpolated in velocity at fixed energy nodes.
pub struct PlaneIntegrator<'a> {
    grid: &'a PhaseGrid,
    a: f64,
    ratio: Vec<f64>,
    reference: Option<Reference>,
}

impl<'a> PlaneIntegrator<'a> {
    /// Interpolates `p` relative to `reference` when given, multilinearly otherwise.
    pub fn new(grid: &'a PhaseGrid, p: &[f64], a: f64, reference: Option<Reference>) -> Self {
        let ratio = ratio_values(grid, |vi| p[vi], &reference);
        PlaneIntegrator { grid, a, ratio, reference }
    }

    fn node_plane(&self, plane: &Plane) -> Option<(usize, usize)> {
        let k = plane.normal.iter().position(|&c| c == 1.0)?;
        let ax = self.grid.axis(k);
        let j = ax.nodes.iter().position(|&c| (c - plane.offset).abs() <= 1e-12 * ax.half_width)?;
        Some((k, j))
    }

    /// Integral over the plane, or `None` when the plane misses the box.
    pub fn integrate(&self, plane: &Plane) -> Option<f64> {
        let mut acc = 0.0;
        let hit = self.visit(plane, |vi, c| acc += c * self.ratio[vi]);
        hit.then_some(acc)
    }

    /// Linear coefficients of the plane integral with respect to the node values.
    pub fn coefficients(&self, plane: &Plane) -> Vec<f64> {
        let mut c = vec![0.0; self.grid.n_vi()];
        let g = self.grid;
        let reference = self.reference;
        self.visit(plane, |vi, w| {
            let scale = match &reference {
                Some(r) => {
                    let (v, e) = g.vi_point(vi);
                    (-r.ln_eval(v, e)).exp()
                }
                None => 1.0,
            };
            c[vi] += w * scale;
        });
        c
    }

    /// Calls `sink(vi, c)` so that the plane integral equals `Σ c · ratio[vi]`.
    fn visit(&self, plane: &Plane, mut sink: impl FnMut(usize, f64)) -> bool {
        let g = self.grid;
        let n_i = g.n_energy();
        let ew = g.energy_weights();
        let en = g.energy_nodes();
        if let Some((k, j)) = self.node_plane(plane) {
            let (a1, a2) = ((k + 1) % 3, (k + 2) % 3);
            let da = g.axis(a1).h * g.axis(a2).h;
            for i1 in 0..g.axis(a1).len() {
                for i2 in 0..g.axis(a2).len() {
                    let mut m = [0; 3];
                    m[k] = j;
                    m[a1] = i1;
                    m[a2] = i2;
                    let iv = g.velocity_index(m);
                    let v = g.velocity(iv);
                    for q in 0..n_i {
                        let r = self.reference.map_or(1.0, |r| r.ln_eval(v, en[q]).exp());
                        sink(iv * n_i + q, da * ew[q] * weight(self.a, v, en[q]) * r);
                    }
                }
            }
            return true;
        }
        let v_max = g.v_max();
        if plane.offset.abs() > 3f64.sqrt() * v_max {
            return false;
        }
        let (e1, e2) = plane.basis();
        let c = [plane.offset * plane.normal[0], plane.offset * plane.normal[1], plane.offset * plane.normal[2]];
        let step = 0.5 * (0..3).map(|k| g.axis(k).h).fold(f64::INFINITY, f64::min);
        let half = 3f64.sqrt() * v_max;
        let m = (2.0 * half / step).ceil() as usize;
        let step = 2.0 * half / m as f64;
        let da = step * step;
        let mut hit = false;
        for is in 0..m {
            let s = -half + (is as f64 + 0.5) * step;
            for it in 0..m {
                let t = -half + (it as f64 + 0.5) * step;
                let v = [c[0] + s * e1[0] + t * e2[0], c[1] + s * e1[1] + t * e2[1], c[2] + s * e1[2] + t * e2[2]];
                let (Some((j0, t0)), Some((j1, t1)), Some((j2, t2))) =
                    (g.axis(0).locate(v[0]), g.axis(1).locate(v[1]), g.axis(2).locate(v[2]))
                else {
                    continue;
                };
                hit = true;
                for (d0, w0) in [(0, 1.0 - t0), (1, t0)] {
                    for (d1, w1) in [(0, 1.0 - t1), (1, t1)] {
                        for (d2, w2) in [(0, 1.0 - t2), (1, t2)] {
                            let w = w0 * w1 * w2;
                            if w == 0.0 {
                                continue;
                            }
                            let iv = g.velocity_index([j0 + d0, j1 + d1, j2 + d2]);
                            for q in 0..n_i {
                                let r = self.reference.map_or(1.0, |r| r.ln_eval(v, en[q]).exp());
                                sink(iv * n_i + q, w * da * ew[q] * weight(self.a, v, en[q]) * r);
                            }
                        }
                    }
                }
            }
        }
        hit
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneNorm {
    pub value: f64,
    pub argmax: Plane,
    pub outside: usize,
}

pub fn norm_plane_profile(grid: &PhaseGrid, p: &[f64], a: f64, family: &PlaneFamily) -> Result<PlaneNorm> {
    check_profile(grid, p)?;
    if family.planes.is_empty() {
        return Err(Error::InvalidParameter("empty plane family".into()));
    }
    let integ = PlaneIntegrator::new(grid, p, a, family.reference);
    let values: Vec<Option<f64>> = family.planes.par_iter().map(|pl| integ.integrate(pl)).collect();
    let outside = values.iter().filter(|v| v.is_none()).count();
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, v) in values.iter().enumerate() {
        let v = v.unwrap_or(0.0);
        if v > best.1 {
            best = (i, v);
        }
    }
    Ok(PlaneNorm { value: finite(best.1, "plane norm")?, argmax: family.planes[best.0], outside })
}

pub fn norm_plane(f: &DistributionField, a: f64, family: &PlaneFamily) -> Result<PlaneNorm> {
    norm_plane_profile(f.grid(), &f.sup_over_x(), a, family)
}

/// Standard error of the plane functional of `family` at one of its planes.
pub fn norm_plane_error(grid: &PhaseGrid, err: &[f64], a: f64, family: &PlaneFamily, plane: &Plane) -> f64 {
    let c = PlaneIntegrator::new(grid, err, a, family.reference).coefficients(plane);
    c.iter().zip(err).map(|(c, e)| (c * e).powi(2)).sum::<f64>().sqrt()
}

/// `∫ φ (s/π)^{1/2} e^{-s d(v)²} p dv dI`, `d` the signed distance to the plane.
pub fn norm_plane_mollified_profile(grid: &PhaseGrid, p: &[f64], a: f64, plane: &Plane, sharpness: f64) -> Result<f64> {
    check_profile(grid, p)?;
    if !(sharpness > 0.0) {
        return Err(Error::InvalidParameter("mollifier sharpness must be positive".into()));
    }
    let integ = PlaneIntegrator::new(grid, p, a, Reference::fit(grid, |vi| p[vi]));
    let reach = 8.0 / sharpness.sqrt();
    let mut acc = 0.0;
    for (lo, hi) in [(-reach, 0.0), (0.0, reach)] {
        let rule = quad::gauss_legendre(32, lo, hi);
        for (&d, &w) in rule.nodes.iter().zip(&rule.weights) {
            let k = (sharpness / PI).sqrt() * (-sharpness * d * d).exp();
            acc += w * k * integ.integrate(&plane.shifted(d)).unwrap_or(0.0);
        }
    }
    finite(acc, "mollified plane norm")
}

pub fn norm_plane_mollified(f: &DistributionField, a: f64, plane: &Plane, sharpness: f64) -> Result<f64> {
    norm_plane_mollified_profile(f.grid(), &f.sup_over_x(), a, plane, sharpness)
}

/// `‖ |v₁|^{-1} (1 + (|v|² + I)^{γ/2}) p ‖₀`.
pub fn boundary_norm_profile(grid: &PhaseGrid, p: &[f64], gamma: f64, a: f64) -> Result<f64> {
    check_profile(grid, p)?;
    let mut acc = 0.0;
    for (vi, &f) in p.iter().enumerate() {
        if f == 0.0 {
            continue;
        }
        let (v, e) = grid.vi_point(vi);
        acc += grid.vi_weight(vi) * weight(a, v, e) * f * (1.0 + (dot(v, v) + e).powf(0.5 * gamma)) / v[0].abs();
    }
    finite(acc, "boundary norm")
}

/// All norms of one profile; `k = 1 - γ` for the singular part.
pub fn norm_report_profile(grid: &PhaseGrid, p: &[f64], gamma: f64, a: f64, plane_seed: u64) -> Result<NormReport> {
    let norm0 = norm0_profile(grid, p, a)?;
    let (norm_singular, argmax_w) = norm_k_profile(grid, p, 1.0 - gamma, a, &w_candidates(grid, p))?;
    let family = PlaneFamily::fitted(grid, p, 64, plane_seed);
    let plane = norm_plane_profile(grid, p, a, &family)?;
    Ok(NormReport {
        norm0,
        norm_singular,
        norm_plane: plane.value,
        triple: norm0 + norm_singular + plane.value,
        argmax_w,
        argmax_plane: plane.argmax,
        boundary_norm: None,
        planes_outside: plane.outside,
    })
}

pub fn norm_report(f: &DistributionField, gamma: f64, a: f64, plane_seed: u64) -> Result<NormReport> {
    norm_report_profile(f.grid(), &f.sup_over_x(), gamma, a, plane_seed)
}
