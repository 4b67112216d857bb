//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::SMatrix;
use polyslab::kernel::{bl_forward, bl_inverse, BlParams, PairState};
use rand::Rng;

/// `4π ∫₀¹∫₀¹ (r(1-r))^α (1-R)^{2α+1} R^{1/2} dr dR`, evaluated by an mpmath double
/// integral to 30 digits.
#[allow(clippy::excessive_precision)]
pub const C_ALPHA_FROZEN: [(f64, f64); 5] = [
    (0.0, 3.351_032_163_829_112_8),
    (0.5, 0.751_969_859_130_617_8),
    (1.0, 0.212_763_946_909_784_94),
    (2.0, 0.023_805_756_297_598_315),
    (4.0, 0.000_539_077_718_901_828_27),
];

/// Nested double-exponential quadrature of the defining integral of `c_α`.
pub fn c_alpha_quadrature(alpha: f64) -> f64 {
    use quadrature::double_exponential::integrate;
    let inner = |big_r: f64| {
        integrate(|r: f64| (r * (1.0 - r)).powf(alpha), 0.0, 1.0, 1e-15).integral
            * (1.0 - big_r).powf(2.0 * alpha + 1.0)
            * big_r.sqrt()
    };
    4.0 * PI * integrate(inner, 0.0, 1.0, 1e-15).integral
}

pub fn unit(theta: f64, phi: f64) -> [f64; 3] {
    [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
}

fn angles(s: [f64; 3]) -> (f64, f64) {
    (s[2].clamp(-1.0, 1.0).acos(), s[1].atan2(s[0]))
}

/// The 12 coordinates `(v, v*, I, I*, r, R, θ, ϕ)` of a point of the collision domain.
pub type Coords = [f64; 12];

fn to_state(z: &Coords) -> (PairState, BlParams) {
    (
        PairState { v: [z[0], z[1], z[2]], v_star: [z[3], z[4], z[5]], energy: z[6], energy_star: z[7] },
        BlParams { r: z[8], big_r: z[9], sigma: unit(z[10], z[11]) },
    )
}

/// Pre-collision state and parameters to post-collision state and the parameters of the
/// reverse collision.
pub fn transform(z: &Coords) -> Coords {
    let (pre, bl) = to_state(z);
    let post = bl_forward(&pre, &bl).unwrap();
    let rev = bl_inverse(&pre).unwrap();
    let (th, ph) = angles(rev.sigma);
    [
        post.v[0],
        post.v[1],
        post.v[2],
        post.v_star[0],
        post.v_star[1],
        post.v_star[2],
        post.energy,
        post.energy_star,
        rev.r,
        rev.big_r,
        th,
        ph,
    ]
}

/// `|det ∂T/∂z|` by central differences, corrected from angle charts to surface measure.
pub fn volume_ratio(z: &Coords) -> f64 {
    let mut m = SMatrix::<f64, 12, 12>::zeros();
    for j in 0..12 {
        let h = 1e-6 * (1.0 + z[j].abs());
        let mut zp = *z;
        let mut zm = *z;
        zp[j] += h;
        zm[j] -= h;
        let (fp, fm) = (transform(&zp), transform(&zm));
        for i in 0..12 {
            let mut d = fp[i] - fm[i];
            if i == 11 {
                d = (d + PI).rem_euclid(2.0 * PI) - PI;
            }
            m[(i, j)] = d / (2.0 * h);
        }
    }
    let out = transform(z);
    m.determinant().abs() * out[10].sin() / z[10].sin()
}

/// A random interior point whose image stays away from the chart singularities, with
/// the `R` of the reverse collision.
pub fn jacobian_point(rng: &mut impl Rng) -> (Coords, f64) {
    loop {
        let mut z = [0.0; 12];
        for x in z.iter_mut().take(6) {
            *x = rng.random_range(-3.0..3.0);
        }
        z[6] = rng.random_range(0.05..3.0);
        z[7] = rng.random_range(0.05..3.0);
        z[8] = rng.random_range(0.05..0.95);
        z[9] = rng.random_range(0.05..0.95);
        z[10] = rng.random_range(0.3..PI - 0.3);
        z[11] = rng.random_range(-2.5..2.5);
        let out = transform(&z);
        if out[9] > 0.05 && out[9] < 0.95 && out[10].sin() > 0.3 && out[11].abs() < 2.8 {
            return (z, out[9]);
        }
    }
}
