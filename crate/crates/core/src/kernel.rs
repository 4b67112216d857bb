//! Borgnakke–Larsen collision microphysics: energy splitting, its inverse and Jacobian,
//! the measure weight and its normalization, and the collision cross sections.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::error::{Error, Result};
use crate::phase_space::dot;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelModel {
    /// `B = E^{γ/2}`.
    TotalEnergy,
    /// `B = R^{γ/2}|v-v*|^γ + (1-R)^{γ/2}(I+I*)^{γ/2}`.
    DetachedKineticInternal,
    /// `B = R^{γ/2}|v-v*|^γ + (r(1-R)I)^{γ/2} + ((1-r)(1-R)I*)^{γ/2}`.
    DetachedPerParticle,
}

/// Deliberate implementation faults, used to check that the verification suite notices them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    #[default]
    None,
    /// Both post-collision velocities take `+√(RE)σ`.
    SigmaSignFlip,
    /// Jacobian factor inverted.
    WrongJacobian,
    /// `(1-R)^{2α+1}` dropped from the measure weight.
    DroppedOneMinusR,
    /// Normalization constant doubled.
    WrongCAlpha,
    /// Attenuation `exp(+…)` instead of `exp(-…)`.
    WrongAttenuationSign,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionParams {
    pub gamma: f64,
    pub alpha: f64,
    pub model: KernelModel,
    /// Weight exponent of `φ = exp(a(|v|²/2 + I))`.
    pub a: f64,
    /// Knudsen number.
    pub epsilon: f64,
    #[serde(default)]
    pub mutation: Mutation,
}

impl CollisionParams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(0.0..=1.0).contains(&self.gamma) {
            problems.push(format!("gamma = {} must lie in [0, 1]", self.gamma));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            problems.push(format!("alpha = {} must be non-negative", self.alpha));
        }
        if !(self.a > 0.0 && self.a.is_finite()) {
            problems.push(format!("a = {} must be positive", self.a));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            problems.push(format!("epsilon = {} must be positive", self.epsilon));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(problems.join("; ")))
        }
    }
}

/// Velocities and internal energies of a colliding pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairState {
    pub v: [f64; 3],
    pub v_star: [f64; 3],
    pub energy: f64,
    pub energy_star: f64,
}

pub type PreCollisionState = PairState;
pub type PostCollisionState = PairState;

/// Split fraction `r`, kinetic share `R` and direction `σ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlParams {
    pub r: f64,
    pub big_r: f64,
    pub sigma: [f64; 3],
}

impl PairState {
    /// `E = |v - v*|²/4 + I + I*`.
    #[inline]
    pub fn total_energy(&self) -> f64 {
        let d = sub(self.v, self.v_star);
        0.25 * dot(d, d) + self.energy + self.energy_star
    }

    pub fn swapped(&self) -> PairState {
        PairState { v: self.v_star, v_star: self.v, energy: self.energy_star, energy_star: self.energy }
    }
}

#[inline]
pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Post-collision state without argument checks.
#[inline]
pub fn forward_unchecked(pre: &PairState, bl: &BlParams, e: f64, flip: bool) -> PairState {
    let c = [0.5 * (pre.v[0] + pre.v_star[0]), 0.5 * (pre.v[1] + pre.v_star[1]), 0.5 * (pre.v[2] + pre.v_star[2])];
    let k = (bl.big_r * e).sqrt();
    let s = bl.sigma;
    let sign_star = if flip { 1.0 } else { -1.0 };
    PairState {
        v: [c[0] + k * s[0], c[1] + k * s[1], c[2] + k * s[2]],
        v_star: [c[0] + sign_star * k * s[0], c[1] + sign_star * k * s[1], c[2] + sign_star * k * s[2]],
        energy: bl.r * (1.0 - bl.big_r) * e,
        energy_star: (1.0 - bl.r) * (1.0 - bl.big_r) * e,
    }
}

fn check_state(s: &PairState) -> Result<()> {
    let finite = s.v.iter().chain(&s.v_star).all(|x| x.is_finite());
    if !finite || !(s.energy >= 0.0) || !(s.energy_star >= 0.0) {
        return Err(Error::InvalidParameter(format!("inadmissible pair state {s:?}")));
    }
    Ok(())
}

/// Borgnakke–Larsen forward map.
pub fn bl_forward(pre: &PreCollisionState, bl: &BlParams) -> Result<PostCollisionState> {
    check_state(pre)?;
    if !(0.0..=1.0).contains(&bl.r) || !(0.0..=1.0).contains(&bl.big_r) {
        return Err(Error::InvalidParameter(format!("r = {}, R = {} must lie in [0, 1]", bl.r, bl.big_r)));
    }
    if (norm(bl.sigma) - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!("|σ| = {} is not 1", norm(bl.sigma))));
    }
    Ok(forward_unchecked(pre, bl, pre.total_energy(), false))
}

/// Borgnakke–Larsen parameters read off a state: `r = I/(I+I*)`, `R = |v-v*|²/(4E)`,
/// `σ = (v-v*)/|v-v*|`. On a post-collision state they recover the forward parameters; on a
/// pre-collision state they are the parameters of the reverse collision.
/// Canonical choices: `r = ½` when both internal energies vanish, `σ = (1, 0, 0)` when the
/// velocities coincide.
pub fn bl_inverse(state: &PostCollisionState) -> Result<BlParams> {
    check_state(state)?;
    let e = state.total_energy();
    if !(e > 0.0) {
        return Err(Error::Degenerate("total energy is zero".into()));
    }
    let d = sub(state.v, state.v_star);
    let dn = norm(d);
    let internal = state.energy + state.energy_star;
    let r = if internal > 0.0 { state.energy / internal } else { 0.5 };
    let sigma = if dn > 0.0 { [d[0] / dn, d[1] / dn, d[2] / dn] } else { [1.0, 0.0, 0.0] };
    Ok(BlParams { r, big_r: (0.25 * dn * dn / e).min(1.0), sigma })
}

/// `R^{1/2}(1-R) / (R'^{1/2}(1-R'))`.
pub fn jacobian_factor(big_r: f64, big_r_prime: f64) -> Result<f64> {
    for x in [big_r, big_r_prime] {
        if !(x > 0.0 && x < 1.0) {
            return Err(Error::Degenerate(format!("kinetic share {x} must lie strictly inside (0, 1)")));
        }
    }
    Ok(jacobian_unchecked(big_r, big_r_prime))
}

#[inline]
pub fn jacobian_unchecked(big_r: f64, big_r_prime: f64) -> f64 {
    big_r.sqrt() * (1.0 - big_r) / (big_r_prime.sqrt() * (1.0 - big_r_prime))
}

/// `(r(1-r))^α (1-R)^{2α+1} R^{1/2} I^α I*^α`.
#[inline]
pub fn measure_weight(r: f64, big_r: f64, energy: f64, energy_star: f64, alpha: f64) -> f64 {
    let base = (1.0 - big_r).powf(2.0 * alpha + 1.0) * big_r.sqrt();
    if alpha == 0.0 {
        base
    } else {
        base * (r * (1.0 - r) * energy * energy_star).powf(alpha)
    }
}

/// `4π B(α+1, α+1) B(3/2, 2α+2)`: the total mass of the measure over `(r, R, σ)`.
pub fn c_alpha(alpha: f64) -> f64 {
    4.0 * PI * (ln_beta(alpha + 1.0, alpha + 1.0) + ln_beta(1.5, 2.0 * alpha + 2.0)).exp()
}

#[inline]
fn pow_half_gamma(x: f64, half_gamma: f64) -> f64 {
    if half_gamma == 0.0 {
        1.0
    } else {
        x.powf(half_gamma)
    }
}

/// Collision cross section of the chosen model.
#[inline]
pub fn cross_section(model: KernelModel, gamma: f64, pre: &PairState, bl: &BlParams) -> f64 {
    let hg = 0.5 * gamma;
    match model {
        KernelModel::TotalEnergy => pow_half_gamma(pre.total_energy(), hg),
        KernelModel::DetachedKineticInternal => {
            let d = sub(pre.v, pre.v_star);
            pow_half_gamma(bl.big_r, hg) * pow_half_gamma(dot(d, d), hg)
                + pow_half_gamma(1.0 - bl.big_r, hg) * pow_half_gamma(pre.energy + pre.energy_star, hg)
        }
        KernelModel::DetachedPerParticle => {
            let d = sub(pre.v, pre.v_star);
            pow_half_gamma(bl.big_r, hg) * pow_half_gamma(dot(d, d), hg)
                + pow_half_gamma(bl.r * (1.0 - bl.big_r) * pre.energy, hg)
                + pow_half_gamma((1.0 - bl.r) * (1.0 - bl.big_r) * pre.energy_star, hg)
        }
    }
}

/// Lower and upper factors `(Φ, Ψ)` of the two-sided bound
/// `Φ(|v-v*|^γ + (I+I*)^{γ/2}) ≤ B ≤ Ψ(|v-v*|^γ + (I+I*)^{γ/2})`.
pub fn sandwich_factors(model: KernelModel, gamma: f64, r: f64, big_r: f64) -> (f64, f64) {
    let hg = 0.5 * gamma;
    match model {
        KernelModel::TotalEnergy => (2f64.powf(-(hg + 1.0)), 1.0),
        KernelModel::DetachedKineticInternal => {
            (pow_half_gamma(big_r.min(1.0 - big_r), hg), pow_half_gamma(big_r.max(1.0 - big_r), hg))
        }
        KernelModel::DetachedPerParticle => (
            pow_half_gamma(big_r.min(1.0 - big_r), hg) * pow_half_gamma(r.min(1.0 - r), hg),
            2f64.powf(1.0 - hg) * pow_half_gamma(big_r.max(1.0 - big_r), hg),
        ),
    }
}

/// Closed form of `∫_{S²} |σ + c̄|^{-(1-γ)} dσ · (RE)^{-(1-γ)/2}` with `|c̄| = c_norm`.
pub fn sigma_integral(gamma: f64, c_norm: f64, re: f64) -> f64 {
    if gamma == 1.0 {
        return 4.0 * PI;
    }
    let scale = re.powf(-0.5 * (1.0 - gamma));
    let p = 1.0 + gamma;
    let c = c_norm;
    let sphere = if c < 1e-12 {
        4.0 * PI
    } else if c < 1.0 {
        // (1+c)^p - (1-c)^p without cancellation
        let a = p * c.ln_1p();
        let b = p * (-c).ln_1p();
        2.0 * PI / (p * c) * b.exp() * (a - b).exp_m1()
    } else {
        2.0 * PI / (p * c) * ((c + 1.0).powf(p) - (c - 1.0).powf(p))
    };
    sphere * scale
}

/// Upper bound `8π / ((1+γ)(RE)^{(1-γ)/2})` of [`sigma_integral`].
pub fn sigma_integral_bound(gamma: f64, re: f64) -> f64 {
    let scale = if gamma == 1.0 { 1.0 } else { re.powf(-0.5 * (1.0 - gamma)) };
    8.0 * PI / (1.0 + gamma) * scale
}

/// Kernel pieces with an optional deliberate fault applied.
#[derive(Clone, Copy, Debug)]
pub struct Kernel {
    pub params: CollisionParams,
    pub c_alpha: f64,
}

impl Kernel {
    pub fn new(params: &CollisionParams) -> Self {
        let mut c = c_alpha(params.alpha);
        if params.mutation == Mutation::WrongCAlpha {
            c *= 2.0;
        }
        Kernel { params: *params, c_alpha: c }
    }

    #[inline]
    pub fn forward(&self, pre: &PairState, bl: &BlParams, e: f64) -> PairState {
        forward_unchecked(pre, bl, e, self.params.mutation == Mutation::SigmaSignFlip)
    }

    #[inline]
    pub fn cross_section(&self, pre: &PairState, bl: &BlParams) -> f64 {
        cross_section(self.params.model, self.params.gamma, pre, bl)
    }

    #[inline]
    pub fn jacobian(&self, big_r: f64, big_r_prime: f64) -> f64 {
        let j = jacobian_unchecked(big_r, big_r_prime);
        if self.params.mutation == Mutation::WrongJacobian {
            1.0 / j
        } else {
            j
        }
    }

    #[inline]
    pub fn measure_weight(&self, r: f64, big_r: f64, energy: f64, energy_star: f64) -> f64 {
        let w = measure_weight(r, big_r, energy, energy_star, self.params.alpha);
        if self.params.mutation == Mutation::DroppedOneMinusR {
            w / (1.0 - big_r).powf(2.0 * self.params.alpha + 1.0)
        } else {
            w
        }
    }

    /// Sign applied inside the attenuation exponent.
    #[inline]
    pub fn attenuation_sign(&self) -> f64 {
        if self.params.mutation == Mutation::WrongAttenuationSign {
            1.0
        } else {
            -1.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn head_on_pair_example() {
        let pre = PairState { v: [1.0, 0.0, 0.0], v_star: [-1.0, 0.0, 0.0], energy: 0.5, energy_star: 0.5 };
        assert_relative_eq!(pre.total_energy(), 2.0);
        let post = bl_forward(&pre, &BlParams { r: 0.5, big_r: 1.0, sigma: [0.0, 1.0, 0.0] }).unwrap();
        assert_relative_eq!(post.v[1], 2f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(post.v_star[1], -(2f64.sqrt()), max_relative = 1e-15);
        assert_eq!(post.energy, 0.0);
        assert_eq!(post.energy_star, 0.0);
        let inv = bl_inverse(&post).unwrap();
        assert_relative_eq!(inv.big_r, 1.0, max_relative = 1e-15);
        assert_eq!(inv.r, 0.5);
        assert_relative_eq!(inv.sigma[1], 1.0, max_relative = 1e-15);
    }

    #[test]
    fn rejects_bad_arguments() {
        let pre = PairState { v: [0.0; 3], v_star: [0.0; 3], energy: 1.0, energy_star: 1.0 };
        assert!(bl_forward(&pre, &BlParams { r: 1.2, big_r: 0.3, sigma: [1.0, 0.0, 0.0] }).is_err());
        assert!(bl_forward(&pre, &BlParams { r: 0.2, big_r: 0.3, sigma: [1.0, 1.0, 0.0] }).is_err());
        let zero = PairState { v: [1.0; 3], v_star: [1.0; 3], energy: 0.0, energy_star: 0.0 };
        assert!(matches!(bl_inverse(&zero), Err(Error::Degenerate(_))));
        assert!(jacobian_factor(0.0, 0.5).is_err());
        assert!(jacobian_factor(0.5, 1.0).is_err());
        assert_eq!(jacobian_factor(0.3, 0.3).unwrap(), 1.0);
    }

    #[test]
    fn c_alpha_values() {
        assert_relative_eq!(c_alpha(0.0), 16.0 * PI / 15.0, max_relative = 1e-14);
        assert_relative_eq!(c_alpha(1.0), 4.0 * PI / 6.0 * 32.0 / 315.0, max_relative = 1e-13);
    }

    #[test]
    fn sigma_integral_values() {
        assert_eq!(sigma_integral(1.0, 3.0, 0.7), 4.0 * PI);
        assert_relative_eq!(sigma_integral(0.3, 0.0, 1.0), 4.0 * PI, max_relative = 1e-14);
        assert_relative_eq!(sigma_integral(0.3, 1e-9, 2.0), 4.0 * PI * 2f64.powf(-0.35), max_relative = 1e-8);
    }

    #[test]
    fn sandwich_holds_for_total_energy_head_on() {
        let pre = PairState { v: [1.0, 0.0, 0.0], v_star: [-1.0, 0.0, 0.0], energy: 0.0, energy_star: 0.0 };
        let bl = BlParams { r: 0.5, big_r: 0.5, sigma: [1.0, 0.0, 0.0] };
        let b = cross_section(KernelModel::TotalEnergy, 1.0, &pre, &bl);
        let (lo, hi) = sandwich_factors(KernelModel::TotalEnergy, 1.0, 0.5, 0.5);
        assert!(lo * 2.0 <= b && b <= hi * 2.0);
    }
}
