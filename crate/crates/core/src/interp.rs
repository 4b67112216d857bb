//! Interpolation of gridded (v, I) data at off-grid points.
//!
//! Values are interpolated multilinearly, either directly or as the ratio to a Gaussian
//! reference `exp(-|v-u|²/2T - I/Θ)` fitted to the data. The ratio form reproduces any
//! Maxwellian exactly, which keeps discrete equilibria intact on coarse velocity grids.

use std::sync::Arc;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::phase_space::{dot, PhaseGrid};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Multilinear,
    #[default]
    MaxwellianRatio,
}

/// Gaussian reference, stored as the coefficients of its logarithm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reference {
    pub u: [f64; 3],
    pub inv_2t: f64,
    pub inv_theta: f64,
}

impl Reference {
    #[inline]
    pub fn ln_eval(&self, v: [f64; 3], energy: f64) -> f64 {
        let d = [v[0] - self.u[0], v[1] - self.u[1], v[2] - self.u[2]];
        -dot(d, d) * self.inv_2t - energy * self.inv_theta
    }

    /// Weighted least-squares fit of `ln g` on `(1, v, |v|², I)` over positive nodes,
    /// with weights `node weight × g`. Exact for Maxwellian data.
    pub fn fit(grid: &PhaseGrid, g: impl Fn(usize) -> f64) -> Option<Reference> {
        let with_energy = grid.n_energy() > 1;
        let mut a = SMatrix::<f64, 6, 6>::zeros();
        let mut b = SVector::<f64, 6>::zeros();
        let mut count = 0usize;
        let mut mass = 0.0;
        for vi in 0..grid.n_vi() {
            let gv = g(vi);
            if !(gv > 0.0) {
                continue;
            }
            mass += grid.vi_weight(vi) * gv;
        }
        if !(mass > 0.0) || !mass.is_finite() {
            return None;
        }
        for vi in 0..grid.n_vi() {
            let gv = g(vi);
            if !(gv > 0.0) {
                continue;
            }
            count += 1;
            let (v, e) = grid.vi_point(vi);
            let w = grid.vi_weight(vi) * gv / mass;
            let phi = SVector::<f64, 6>::from([1.0, v[0], v[1], v[2], dot(v, v), if with_energy { e } else { 0.0 }]);
            a += w * phi * phi.transpose();
            b += w * gv.ln() * phi;
        }
        if count < 6 {
            return None;
        }
        if !with_energy {
            a[(5, 5)] = 1.0;
        }
        let c = a.lu().solve(&b)?;
        let q = c[4];
        let p = c[5];
        if !(q < 0.0) || (with_energy && !(p < 0.0)) || !c.iter().all(|x| x.is_finite()) {
            return None;
        }
        let t = -0.5 / q;
        let reference =
            Reference { u: [c[1] * t, c[2] * t, c[3] * t], inv_2t: -q, inv_theta: if with_energy { -p } else { 0.0 } };
        // guard against ratios that would overflow
        for vi in 0..grid.n_vi() {
            let gv = g(vi);
            if gv > 0.0 {
                let (v, e) = grid.vi_point(vi);
                if gv.ln() - reference.ln_eval(v, e) > 500.0 {
                    return None;
                }
            }
        }
        Some(reference)
    }
}

pub(crate) fn ratio_values(grid: &PhaseGrid, g: impl Fn(usize) -> f64, reference: &Option<Reference>) -> Vec<f64> {
    (0..grid.n_vi())
        .map(|vi| {
            let gv = g(vi);
            match reference {
                Some(r) if gv > 0.0 => {
                    let (v, e) = grid.vi_point(vi);
                    (gv.ln() - r.ln_eval(v, e)).exp()
                }
                _ => gv,
            }
        })
        .collect()
}

/// Energy stencil with constant extension beyond the outer nodes.
#[inline]
fn locate_energy(nodes: &[f64], i_max: f64, e: f64) -> Option<(usize, usize, f64)> {
    if !(e >= 0.0 && e <= i_max) {
        return None;
    }
    let n = nodes.len();
    if n == 1 || e <= nodes[0] {
        return Some((0, 0, 0.0));
    }
    if e >= nodes[n - 1] {
        return Some((n - 1, n - 1, 0.0));
    }
    let k = nodes.partition_point(|&x| x <= e) - 1;
    Some((k, k + 1, (e - nodes[k]) / (nodes[k + 1] - nodes[k])))
}

/// Sixteen-node stencil into the (v, I) node array.
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    pub vi: [usize; 16],
    pub w: [f64; 16],
    pub v: [f64; 3],
    pub energy: f64,
}

pub fn stencil(grid: &PhaseGrid, v: [f64; 3], energy: f64) -> Option<Stencil> {
    let (j0, t0) = grid.axis(0).locate(v[0])?;
    let (j1, t1) = grid.axis(1).locate(v[1])?;
    let (j2, t2) = grid.axis(2).locate(v[2])?;
    let (k0, k1, te) = locate_energy(grid.energy_nodes(), grid.i_max(), energy)?;
    let n_i = grid.n_energy();
    let mut st = Stencil { vi: [0; 16], w: [0.0; 16], v, energy };
    let mut s = 0;
    for (d0, w0) in [(0, 1.0 - t0), (1, t0)] {
        for (d1, w1) in [(0, 1.0 - t1), (1, t1)] {
            for (d2, w2) in [(0, 1.0 - t2), (1, t2)] {
                let iv = grid.velocity_index([j0 + d0, j1 + d1, j2 + d2]);
                let wv = w0 * w1 * w2;
                st.vi[s] = iv * n_i + k0;
                st.w[s] = wv * (1.0 - te);
                st.vi[s + 1] = iv * n_i + k1;
                st.w[s + 1] = wv * te;
                s += 2;
            }
        }
    }
    Some(st)
}

/// Interpolant of `g = f / I^α` at every x node of a field.
#[derive(Clone, Debug)]
pub struct FieldInterpolant {
    grid: Arc<PhaseGrid>,
    n_x: usize,
    ratio: Vec<f64>,
    refs: Vec<Option<Reference>>,
}

impl FieldInterpolant {
    /// `g` holds per-(v, I) values laid out with x fastest, as in a field.
    pub fn new(grid: Arc<PhaseGrid>, g: &[f64], mode: Interpolation) -> Self {
        let n_x = grid.n_x();
        let n_vi = grid.n_vi();
        let mut ratio = vec![0.0; g.len()];
        let mut refs = Vec::with_capacity(n_x);
        for ix in 0..n_x {
            let at = |vi: usize| g[vi * n_x + ix];
            let reference = match mode {
                Interpolation::Multilinear => None,
                Interpolation::MaxwellianRatio => Reference::fit(&grid, at),
            };
            let r = ratio_values(&grid, at, &reference);
            for vi in 0..n_vi {
                ratio[vi * n_x + ix] = r[vi];
            }
            refs.push(reference);
        }
        FieldInterpolant { grid, n_x, ratio, refs }
    }

    pub fn grid(&self) -> &Arc<PhaseGrid> {
        &self.grid
    }

    pub fn reference(&self, ix: usize) -> Option<&Reference> {
        self.refs[ix].as_ref()
    }

    /// Values at every x node; `out.len() == n_x`.
    #[inline]
    pub fn eval_all(&self, st: &Stencil, out: &mut [f64]) {
        let n_x = self.n_x;
        out.fill(0.0);
        for s in 0..16 {
            let w = st.w[s];
            if w == 0.0 {
                continue;
            }
            let col = &self.ratio[st.vi[s] * n_x..st.vi[s] * n_x + n_x];
            for (o, c) in out.iter_mut().zip(col) {
                *o += w * c;
            }
        }
        for (ix, o) in out.iter_mut().enumerate() {
            if let Some(r) = &self.refs[ix] {
                if *o != 0.0 {
                    *o *= r.ln_eval(st.v, st.energy).exp();
                }
            }
        }
    }

    #[inline]
    pub fn eval_at(&self, st: &Stencil, ix: usize) -> f64 {
        let n_x = self.n_x;
        let mut acc = 0.0;
        for s in 0..16 {
            acc += st.w[s] * self.ratio[st.vi[s] * n_x + ix];
        }
        match &self.refs[ix] {
            Some(r) if acc != 0.0 => acc * r.ln_eval(st.v, st.energy).exp(),
            _ => acc,
        }
    }

    pub fn eval(&self, ix: usize, v: [f64; 3], energy: f64) -> f64 {
        stencil(&self.grid, v, energy).map_or(0.0, |st| self.eval_at(&st, ix))
    }
}

/// Interpolant in velocity only, at fixed energy nodes, for per-(v, I) profiles.
#[derive(Clone, Debug)]
pub struct ProfileInterpolant {
    grid: Arc<PhaseGrid>,
    ratio: Vec<f64>,
    reference: Option<Reference>,
}

impl ProfileInterpolant {
    pub fn new(grid: Arc<PhaseGrid>, profile: &[f64], mode: Interpolation) -> Self {
        let reference = match mode {
            Interpolation::Multilinear => None,
            Interpolation::MaxwellianRatio => Reference::fit(&grid, |vi| profile[vi]),
        };
        let ratio = ratio_values(&grid, |vi| profile[vi], &reference);
        ProfileInterpolant { grid, ratio, reference }
    }

    /// Values at all energy nodes for velocity `v`; zero outside the box.
    pub fn eval_energies(&self, v: [f64; 3], out: &mut [f64]) {
        out.fill(0.0);
        let g = &self.grid;
        let (Some((j0, t0)), Some((j1, t1)), Some((j2, t2))) =
            (g.axis(0).locate(v[0]), g.axis(1).locate(v[1]), g.axis(2).locate(v[2]))
        else {
            return;
        };
        let n_i = g.n_energy();
        for (d0, w0) in [(0, 1.0 - t0), (1, t0)] {
            for (d1, w1) in [(0, 1.0 - t1), (1, t1)] {
                for (d2, w2) in [(0, 1.0 - t2), (1, t2)] {
                    let w = w0 * w1 * w2;
                    if w == 0.0 {
                        continue;
                    }
                    let iv = g.velocity_index([j0 + d0, j1 + d1, j2 + d2]);
                    for (k, o) in out.iter_mut().enumerate() {
                        *o += w * self.ratio[iv * n_i + k];
                    }
                }
            }
        }
        if let Some(r) = &self.reference {
            for (k, o) in out.iter_mut().enumerate() {
                if *o != 0.0 {
                    *o *= r.ln_eval(v, g.energy_nodes()[k]).exp();
                }
            }
        }
    }
}
