//! Discrete phase space: slab nodes in x, a truncated velocity box and internal-energy nodes.
//!
//! Field values are stored with the x index fastest, so that the per-(v, I) columns swept by
//! the mild-form solver are contiguous. Files use row-major (x, v1, v2, v3, I) order.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::quad;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnergyRule {
    /// Cell-centered nodes on `(0, I_max]`.
    Midpoint,
    GaussLegendre,
    /// Nodes `scale·x_k` of the Laguerre rule; all nodes must lie in `(0, I_max]`.
    GaussLaguerre {
        scale: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_x: usize,
    pub n_v: [usize; 3],
    pub n_i: usize,
    pub v_max: f64,
    pub i_max: f64,
    pub energy_rule: EnergyRule,
}

impl GridSpec {
    /// Box sized so that the weighted tail mass of a Maxwellian with temperature `temperature`,
    /// drift at most `drift` and weight exponent `a` is below `tail` outside the box.
    pub fn fitted(
        n_x: usize,
        n_v: [usize; 3],
        n_i: usize,
        temperature: f64,
        drift: f64,
        a: f64,
        alpha: f64,
        tail: f64,
    ) -> Result<Self> {
        if !(temperature > 0.0) || a * temperature >= 1.0 {
            return Err(Error::WeightAdmissibility(format!("a·T = {} must be < 1", a * temperature)));
        }
        let t_eff = temperature / (1.0 - a * temperature);
        let z = bisect(|z| 3.0 * erfc(z) - tail, 0.0, 40.0);
        let v_max = drift.abs() + z * (2.0 * t_eff).sqrt();
        let y = bisect(|y| gamma_ur(alpha + 1.0, y) - tail, 0.0, 2000.0);
        let i_max = y * t_eff;
        let x_last = *quad::gauss_laguerre_plain(n_i, 1.0).nodes.last().unwrap();
        let scale = temperature.min(i_max / x_last);
        Ok(GridSpec { n_x, n_v, n_i, v_max, i_max, energy_rule: EnergyRule::GaussLaguerre { scale } })
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    // f decreasing, f(lo) > 0 > f(hi)
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VelocityAxis {
    pub nodes: Vec<f64>,
    pub h: f64,
    pub half_width: f64,
}

impl VelocityAxis {
    fn new(n: usize, v_max: f64) -> Self {
        let h = 2.0 * v_max / n as f64;
        let nodes = (0..n).map(|j| -v_max + (j as f64 + 0.5) * h).collect();
        VelocityAxis { nodes, h, half_width: v_max }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Lower stencil index and fraction in [0, 1], or `None` outside the box.
    #[inline]
    pub fn locate(&self, v: f64) -> Option<(usize, f64)> {
        if !(v.abs() <= self.half_width) {
            return None;
        }
        let t = (v + self.half_width) / self.h - 0.5;
        let n = self.nodes.len();
        let j = (t.floor().max(0.0) as usize).min(n - 2);
        Some((j, (t - j as f64).clamp(0.0, 1.0)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseGrid {
    spec: GridSpec,
    x: Vec<f64>,
    axes: [VelocityAxis; 3],
    energy: Vec<f64>,
    energy_weights: Vec<f64>,
    cell_volume: f64,
}

impl PhaseGrid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        let mut problems = Vec::new();
        if spec.n_x < 2 {
            problems.push(format!("n_x = {} must be at least 2", spec.n_x));
        }
        if spec.n_v.iter().any(|&n| n < 2) {
            problems.push(format!("n_v = {:?} needs at least 2 nodes per axis", spec.n_v));
        }
        if !spec.n_v[0].is_multiple_of(2) {
            problems.push(format!("n_v on axis 1 is {}; it must be even so that v1 = 0 is never a node", spec.n_v[0]));
        }
        if spec.n_i < 1 {
            problems.push("n_i must be at least 1".into());
        }
        if !(spec.v_max > 0.0 && spec.v_max.is_finite()) {
            problems.push(format!("v_max = {} must be positive", spec.v_max));
        }
        if !(spec.i_max > 0.0 && spec.i_max.is_finite()) {
            problems.push(format!("i_max = {} must be positive", spec.i_max));
        }
        if !problems.is_empty() {
            return Err(Error::InvalidGrid(problems.join("; ")));
        }
        let (energy, energy_weights) = match spec.energy_rule {
            EnergyRule::Midpoint => {
                let h = spec.i_max / spec.n_i as f64;
                ((0..spec.n_i).map(|k| (k as f64 + 0.5) * h).collect(), vec![h; spec.n_i])
            }
            EnergyRule::GaussLegendre => {
                let r = quad::gauss_legendre(spec.n_i, 0.0, spec.i_max);
                (r.nodes, r.weights)
            }
            EnergyRule::GaussLaguerre { scale } => {
                if !(scale > 0.0) {
                    return Err(Error::InvalidGrid(format!("Laguerre scale {scale} must be positive")));
                }
                let r = quad::gauss_laguerre_plain(spec.n_i, scale);
                if *r.nodes.last().unwrap() > spec.i_max {
                    return Err(Error::InvalidGrid(format!(
                        "Laguerre nodes reach {} beyond i_max = {}",
                        r.nodes.last().unwrap(),
                        spec.i_max
                    )));
                }
                (r.nodes, r.weights)
            }
        };
        let axes = [
            VelocityAxis::new(spec.n_v[0], spec.v_max),
            VelocityAxis::new(spec.n_v[1], spec.v_max),
            VelocityAxis::new(spec.n_v[2], spec.v_max),
        ];
        let cell_volume = axes.iter().map(|a| a.h).product();
        let x = (0..spec.n_x).map(|k| k as f64 / (spec.n_x - 1) as f64).collect();
        Ok(PhaseGrid { spec, x, axes, energy, energy_weights, cell_volume })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn x_nodes(&self) -> &[f64] {
        &self.x
    }

    pub fn n_x(&self) -> usize {
        self.x.len()
    }

    pub fn axis(&self, k: usize) -> &VelocityAxis {
        &self.axes[k]
    }

    pub fn n_velocity(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    pub fn n_energy(&self) -> usize {
        self.energy.len()
    }

    /// Number of (v, I) nodes.
    pub fn n_vi(&self) -> usize {
        self.n_velocity() * self.n_energy()
    }

    pub fn len(&self) -> usize {
        self.n_vi() * self.n_x()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn energy_nodes(&self) -> &[f64] {
        &self.energy
    }

    pub fn energy_weights(&self) -> &[f64] {
        &self.energy_weights
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn v_max(&self) -> f64 {
        self.spec.v_max
    }

    pub fn i_max(&self) -> f64 {
        self.spec.i_max
    }

    #[inline]
    pub fn velocity_index(&self, i: [usize; 3]) -> usize {
        (i[0] * self.axes[1].len() + i[1]) * self.axes[2].len() + i[2]
    }

    #[inline]
    pub fn velocity_multi_index(&self, iv: usize) -> [usize; 3] {
        let n2 = self.axes[1].len();
        let n3 = self.axes[2].len();
        [iv / (n2 * n3), (iv / n3) % n2, iv % n3]
    }

    #[inline]
    pub fn velocity(&self, iv: usize) -> [f64; 3] {
        let m = self.velocity_multi_index(iv);
        [self.axes[0].nodes[m[0]], self.axes[1].nodes[m[1]], self.axes[2].nodes[m[2]]]
    }

    #[inline]
    pub fn vi_index(&self, iv: usize, ii: usize) -> usize {
        iv * self.energy.len() + ii
    }

    /// Velocity and energy of a (v, I) node.
    #[inline]
    pub fn vi_point(&self, vi: usize) -> ([f64; 3], f64) {
        let n_i = self.energy.len();
        (self.velocity(vi / n_i), self.energy[vi % n_i])
    }

    /// Quadrature weight of a (v, I) node.
    #[inline]
    pub fn vi_weight(&self, vi: usize) -> f64 {
        self.cell_volume * self.energy_weights[vi % self.energy.len()]
    }

    #[inline]
    pub fn field_index(&self, ix: usize, iv: usize, ii: usize) -> usize {
        self.vi_index(iv, ii) * self.x.len() + ix
    }

    pub fn contains(&self, v: [f64; 3], energy: f64) -> bool {
        v.iter().all(|c| c.abs() <= self.spec.v_max) && energy >= 0.0 && energy <= self.spec.i_max
    }

    /// Trapezoid weights of the x nodes on [0, 1].
    pub fn x_trapezoid_weights(&self) -> Vec<f64> {
        let n = self.x.len();
        let mut w = vec![0.0; n];
        for k in 0..n - 1 {
            let d = self.x[k + 1] - self.x[k];
            w[k] += 0.5 * d;
            w[k + 1] += 0.5 * d;
        }
        w
    }
}

/// The weight `exp(a(|v|²/2 + I))`.
#[inline]
pub fn weight(a: f64, v: [f64; 3], energy: f64) -> f64 {
    (a * (0.5 * dot(v, v) + energy)).exp()
}

#[inline]
pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Polyatomic Maxwellian `n (2πT)^{-3/2} I^α exp(-(|v-u|²/2 + I)/T) / (Γ(α+1) T^{α+1})`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Maxwellian {
    pub density: f64,
    pub velocity: [f64; 3],
    pub temperature: f64,
}

impl Maxwellian {
    pub fn new(density: f64, velocity: [f64; 3], temperature: f64) -> Self {
        Maxwellian { density, velocity, temperature }
    }

    pub fn ln_prefactor(&self, alpha: f64) -> f64 {
        let t = self.temperature;
        self.density.ln() - 1.5 * (2.0 * std::f64::consts::PI * t).ln() - ln_gamma(alpha + 1.0) - (alpha + 1.0) * t.ln()
    }

    pub fn eval(&self, alpha: f64, v: [f64; 3], energy: f64) -> f64 {
        if self.density == 0.0 {
            return 0.0;
        }
        let d = [v[0] - self.velocity[0], v[1] - self.velocity[1], v[2] - self.velocity[2]];
        let ln_i = if alpha == 0.0 { 0.0 } else { alpha * energy.ln() };
        (self.ln_prefactor(alpha) + ln_i - (0.5 * dot(d, d) + energy) / self.temperature).exp()
    }

    /// Closed form of `∫ φ M dv dI`; requires `aT < 1`.
    pub fn weighted_mass(&self, a: f64, alpha: f64) -> f64 {
        let s = 1.0 - a * self.temperature;
        let u2 = dot(self.velocity, self.velocity);
        self.density * s.powf(-(alpha + 2.5)) * (0.5 * a * u2 / s).exp()
    }
}

/// Values on the full phase grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionField {
    grid: Arc<PhaseGrid>,
    values: Vec<f64>,
}

impl DistributionField {
    pub fn zeros(grid: Arc<PhaseGrid>) -> Self {
        let n = grid.len();
        DistributionField { grid, values: vec![0.0; n] }
    }

    pub fn from_values(grid: Arc<PhaseGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!("{} values for a grid of {} nodes", values.len(), grid.len())));
        }
        Ok(DistributionField { grid, values })
    }

    pub fn from_fn(grid: Arc<PhaseGrid>, f: impl Fn(f64, [f64; 3], f64) -> f64) -> Self {
        let n_x = grid.n_x();
        let mut values = vec![0.0; grid.len()];
        for vi in 0..grid.n_vi() {
            let (v, e) = grid.vi_point(vi);
            for ix in 0..n_x {
                values[vi * n_x + ix] = f(grid.x_nodes()[ix], v, e);
            }
        }
        DistributionField { grid, values }
    }

    /// x-independent field from per-(v, I) values.
    pub fn from_profile(grid: Arc<PhaseGrid>, profile: &[f64]) -> Result<Self> {
        if profile.len() != grid.n_vi() {
            return Err(Error::ShapeMismatch("profile length differs from the (v, I) node count".into()));
        }
        let n_x = grid.n_x();
        let values = profile.iter().flat_map(|&p| std::iter::repeat_n(p, n_x)).collect();
        Ok(DistributionField { grid, values })
    }

    pub fn maxwellian(grid: Arc<PhaseGrid>, m: &Maxwellian, alpha: f64) -> Self {
        Self::from_fn(grid, |_, v, e| m.eval(alpha, v, e))
    }

    pub fn grid(&self) -> &Arc<PhaseGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, ix: usize, iv: usize, ii: usize) -> f64 {
        self.values[self.grid.field_index(ix, iv, ii)]
    }

    pub fn set(&mut self, ix: usize, iv: usize, ii: usize, value: f64) {
        let k = self.grid.field_index(ix, iv, ii);
        self.values[k] = value;
    }

    /// x-column of one (v, I) node.
    #[inline]
    pub fn column(&self, vi: usize) -> &[f64] {
        let n_x = self.grid.n_x();
        &self.values[vi * n_x..(vi + 1) * n_x]
    }

    /// Values at one x node, indexed by (v, I) node.
    pub fn slice_x(&self, ix: usize) -> Vec<f64> {
        let n_x = self.grid.n_x();
        (0..self.grid.n_vi()).map(|vi| self.values[vi * n_x + ix]).collect()
    }

    /// `max_x f(x, v, I)` per (v, I) node.
    pub fn sup_over_x(&self) -> Vec<f64> {
        let n_x = self.grid.n_x();
        self.values.chunks(n_x).map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()
    }

    /// Per-x integrals `∫ w(v, I) f(x, v, I) dv dI`.
    pub fn integrate_weighted(&self, w: impl Fn([f64; 3], f64) -> f64) -> Vec<f64> {
        let n_x = self.grid.n_x();
        let mut out = vec![0.0; n_x];
        for vi in 0..self.grid.n_vi() {
            let (v, e) = self.grid.vi_point(vi);
            let c = self.grid.vi_weight(vi) * w(v, e);
            for (o, f) in out.iter_mut().zip(self.column(vi)) {
                *o += c * f;
            }
        }
        out
    }

    pub fn check_admissible(&self) -> Result<()> {
        if let Some(k) = self.values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidField(format!("value {} at storage index {k}", self.values[k])));
        }
        Ok(())
    }

    pub fn same_grid(&self, other: &DistributionField) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("fields live on different grids".into()))
        }
    }

    pub fn abs_diff(&self, other: &DistributionField) -> Result<DistributionField> {
        self.same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).collect();
        Ok(DistributionField { grid: self.grid.clone(), values })
    }

    pub fn max_abs_diff(&self, other: &DistributionField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> DistributionField {
        DistributionField { grid: self.grid.clone(), values: self.values.iter().map(|v| v * s).collect() }
    }

    /// Row-major (x, v1, v2, v3, I) sequence of values.
    pub fn row_major(&self) -> Vec<f64> {
        let g = &self.grid;
        let mut out = Vec::with_capacity(self.values.len());
        for ix in 0..g.n_x() {
            for vi in 0..g.n_vi() {
                out.push(self.values[vi * g.n_x() + ix]);
            }
        }
        out
    }

    pub fn from_row_major(grid: Arc<PhaseGrid>, data: &[f64]) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!("{} values for {} nodes", data.len(), grid.len())));
        }
        let n_x = grid.n_x();
        let n_vi = grid.n_vi();
        let mut values = vec![0.0; data.len()];
        for ix in 0..n_x {
            for vi in 0..n_vi {
                values[vi * n_x + ix] = data[ix * n_vi + vi];
            }
        }
        Ok(DistributionField { grid, values })
    }

    /// Binary dump: magic, header (n_x, n_v, n_I, extents, energy rule), row-major little-endian f64.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let s = self.grid.spec();
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for n in [s.n_x, s.n_v[0], s.n_v[1], s.n_v[2], s.n_i] {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        w.write_all(&s.v_max.to_le_bytes())?;
        w.write_all(&s.i_max.to_le_bytes())?;
        let (tag, scale) = match s.energy_rule {
            EnergyRule::Midpoint => (0u64, 0.0),
            EnergyRule::GaussLegendre => (1, 0.0),
            EnergyRule::GaussLaguerre { scale } => (2, scale),
        };
        w.write_all(&tag.to_le_bytes())?;
        w.write_all(&scale.to_le_bytes())?;
        for v in self.row_major() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a field dump".into()));
        }
        let version = read_u64(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported field dump version {version}")));
        }
        let mut n = [0usize; 5];
        for slot in &mut n {
            *slot = read_u64(&mut r)? as usize;
        }
        let v_max = read_f64(&mut r)?;
        let i_max = read_f64(&mut r)?;
        let tag = read_u64(&mut r)?;
        let scale = read_f64(&mut r)?;
        let energy_rule = match tag {
            0 => EnergyRule::Midpoint,
            1 => EnergyRule::GaussLegendre,
            2 => EnergyRule::GaussLaguerre { scale },
            t => return Err(Error::Format(format!("unknown energy rule tag {t}"))),
        };
        let grid =
            Arc::new(PhaseGrid::new(GridSpec { n_x: n[0], n_v: [n[1], n[2], n[3]], n_i: n[4], v_max, i_max, energy_rule })?);
        let mut data = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            data.push(read_f64(&mut r)?);
        }
        Self::from_row_major(grid, &data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

const MAGIC: &[u8; 8] = b"PSLBFLD\0";
const FORMAT_VERSION: u64 = 1;

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
