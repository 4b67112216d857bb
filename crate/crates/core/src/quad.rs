//! One-dimensional quadrature rules in the shapes the rest of the crate wants.

use std::num::NonZeroUsize;

use gauss_quad::{FiniteAboveNegOneF64, GaussHermite, GaussJacobi, GaussLaguerre, GaussLegendre};

#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

fn degree(n: usize) -> NonZeroUsize {
    NonZeroUsize::new(n.max(1)).unwrap()
}

fn above_neg_one(x: f64) -> FiniteAboveNegOneF64 {
    FiniteAboveNegOneF64::new(x).expect("exponent must be finite and > -1")
}

/// Gauss-Legendre on `[a, b]`, nodes ascending.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Rule {
    let rule = GaussLegendre::new(degree(n));
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut pairs: Vec<(f64, f64)> = rule.as_node_weight_pairs().iter().map(|&(x, w)| (mid + half * x, half * w)).collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    let (nodes, weights) = pairs.into_iter().unzip();
    Rule { nodes, weights }
}

/// Gauss-Laguerre for `∫_0^∞ h(x) dx` with `h ≈ e^{-x/scale}·poly`.
/// Weights already include the `e^{x/scale}` correction, so `integrate(h)` works on `h` directly.
pub fn gauss_laguerre_plain(n: usize, scale: f64) -> Rule {
    let rule = GaussLaguerre::new(degree(n), above_neg_one(0.0));
    let mut pairs: Vec<(f64, f64)> = rule.as_node_weight_pairs().iter().map(|&(x, w)| (scale * x, scale * w * x.exp())).collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    let (nodes, weights) = pairs.into_iter().unzip();
    Rule { nodes, weights }
}

/// Expectation rule for the exponential law with the given mean: weights sum to one.
pub fn exponential_expectation(n: usize, mean: f64) -> Rule {
    let rule = GaussLaguerre::new(degree(n), above_neg_one(0.0));
    let (nodes, weights) = rule.as_node_weight_pairs().iter().map(|&(x, w)| (mean * x, w)).unzip();
    Rule { nodes, weights }
}

/// Expectation rule for Beta(p, q) on `[0, 1]`: weights sum to one.
pub fn beta_expectation(n: usize, p: f64, q: f64) -> Rule {
    // Jacobi weight (1-x)^a (1+x)^b on [-1,1]; with r = (1+x)/2 this is r^b (1-r)^a.
    let rule = GaussJacobi::new(degree(n), above_neg_one(q - 1.0), above_neg_one(p - 1.0));
    let total: f64 = rule.weights().sum();
    let (nodes, weights) = rule.as_node_weight_pairs().iter().map(|&(x, w)| (0.5 * (1.0 + x), w / total)).unzip();
    Rule { nodes, weights }
}

/// Expectation rule for the standard normal law.
pub fn normal_expectation(n: usize) -> Rule {
    let rule = GaussHermite::new(degree(n));
    let norm = std::f64::consts::PI.sqrt();
    let (nodes, weights) = rule.as_node_weight_pairs().iter().map(|&(x, w)| (std::f64::consts::SQRT_2 * x, w / norm)).unzip();
    Rule { nodes, weights }
}

/// Product rule for the uniform law on the unit sphere: Gauss-Legendre in cos θ,
/// equispaced azimuth. Weights sum to one.
pub fn sphere_expectation(n_polar: usize) -> Vec<([f64; 3], f64)> {
    let polar = gauss_legendre(n_polar, -1.0, 1.0);
    let n_az = 2 * n_polar.max(1);
    let mut out = Vec::with_capacity(polar.len() * n_az);
    for (&z, &wz) in polar.nodes.iter().zip(&polar.weights) {
        let s = (1.0 - z * z).max(0.0).sqrt();
        for k in 0..n_az {
            let phi = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / n_az as f64;
            out.push(([s * phi.cos(), s * phi.sin(), z], 0.5 * wz / n_az as f64));
        }
    }
    out
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, max_depth: u32) -> f64 {
    fn step(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, max_depth)
}
