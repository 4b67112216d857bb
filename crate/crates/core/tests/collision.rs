use std::f64::consts::PI;
use std::sync::Arc;

use polyslab::collision::{CollisionEngine, QuadratureSpec};
use polyslab::kernel::{self, CollisionParams, KernelModel};
use polyslab::phase_space::{DistributionField, GridSpec, Maxwellian, PhaseGrid};
use quadrature::double_exponential::integrate;
use statrs::function::gamma::ln_gamma;

fn params(gamma: f64, alpha: f64) -> CollisionParams {
    CollisionParams { gamma, alpha, model: KernelModel::TotalEnergy, a: 0.5, epsilon: 0.1, mutation: Default::default() }
}

fn maxwell(n_v: usize, n_i: usize, alpha: f64) -> DistributionField {
    let spec = GridSpec::fitted(2, [n_v; 3], n_i, 1.0, 0.0, 0.5, alpha, 1e-10).unwrap();
    let grid = Arc::new(PhaseGrid::new(spec).unwrap());
    DistributionField::maxwellian(grid, &Maxwellian::new(1.0, [0.0; 3], 1.0), alpha)
}

fn quad(n_samples: usize) -> QuadratureSpec {
    QuadratureSpec { n_samples, ..QuadratureSpec::default() }
}

#[test]
fn zero_field_has_no_collisions() {
    let f = maxwell(8, 4, 0.0);
    let zero = DistributionField::zeros(f.grid().clone());
    let engine = CollisionEngine::new(&zero, &params(0.5, 0.0), &quad(64)).unwrap();
    let (v, e) = f.grid().vi_point(17);
    assert_eq!(engine.gain(0, v, e).value, 0.0);
    assert_eq!(engine.loss(0, v, e).value, 0.0);
    assert_eq!(engine.operator(0, v, e).value, 0.0);
    let s = engine.symmetry(0, &|_, _| 1.0, 1000);
    assert_eq!((s.lhs, s.rhs), (0.0, 0.0));
}

#[test]
fn loss_without_energy_dependence_is_the_scaled_mass() {
    let f = maxwell(10, 4, 0.0);
    let grid = f.grid();
    let mass: f64 = (0..grid.n_vi()).map(|vi| grid.vi_weight(vi) * f.column(vi)[0]).sum();
    let engine = CollisionEngine::new(&f, &params(0.0, 0.0), &quad(16)).unwrap();
    for vi in [0, 99, grid.n_vi() - 1] {
        let (v, e) = grid.vi_point(vi);
        let l = engine.loss_reduced_column(v, e).unwrap()[0];
        assert!((l - kernel::c_alpha(0.0) * mass).abs() <= 1e-12 * l, "{l}");
    }
}

/// `c_α ∫ 𝔐(v*, I*) (|v*|²/4 + I*)^{1/2} dv* dI*` for `n = T = 1`, `α = 0`, by nested
/// double-exponential quadrature in `(|v*|, I*)`.
fn loss_at_origin_reference() -> f64 {
    let inner = |r: f64| {
        let radial = 4.0 * PI * r * r * (2.0 * PI).powf(-1.5) * (-0.5 * r * r).exp();
        radial * integrate(|i: f64| (-i).exp() * (0.25 * r * r + i).sqrt(), 0.0, 60.0, 1e-14).integral
    };
    kernel::c_alpha(0.0) * integrate(inner, 0.0, 14.0, 1e-14).integral
}

#[test]
fn loss_at_the_origin_matches_reference_quadrature() {
    let reference = loss_at_origin_reference();
    let f = maxwell(32, 16, 0.0);
    let engine = CollisionEngine::new(&f, &params(1.0, 0.0), &quad(16)).unwrap();
    let l = engine.loss_reduced_column([0.0; 3], 0.0).unwrap()[0];
    assert!((l - reference).abs() <= 1e-4 * reference, "{l} vs {reference}");
}

#[test]
fn internal_energy_weights_cancel_at_the_smallest_node() {
    for alpha in [0.5, 1.0, 2.0] {
        let f = maxwell(8, 6, alpha);
        let grid = f.grid();
        let engine = CollisionEngine::new(&f, &params(0.5, alpha), &quad(256)).unwrap();
        let v = grid.velocity(grid.n_velocity() / 2);
        let e = grid.energy_nodes()[0];
        let l = engine.loss_reduced_column(v, e).unwrap()[0];
        let g = engine.gain(0, v, e);
        assert!(l.is_finite() && l > 0.0, "alpha {alpha}: loss {l}");
        assert!(g.value.is_finite() && g.std_error.is_finite(), "alpha {alpha}: gain {g:?}");
    }
}

#[test]
fn standard_error_shrinks_like_inverse_square_root() {
    let f = maxwell(12, 6, 0.0);
    let grid = f.grid();
    let p = params(0.5, 0.0);
    let nodes: Vec<usize> = (0..10).map(|k| grid.n_vi() / 2 + 37 * k).collect();
    let mean_se = |n| {
        let engine = CollisionEngine::new(&f, &p, &quad(n)).unwrap();
        nodes
            .iter()
            .map(|&vi| {
                let (v, e) = grid.vi_point(vi);
                engine.gain(0, v, e).std_error
            })
            .sum::<f64>()
    };
    let ratio = mean_se(8192) / mean_se(4096);
    assert!((ratio * 2f64.sqrt() - 1.0).abs() < 0.2, "ratio {ratio}");
}

#[test]
fn estimates_are_bit_identical_for_equal_seeds() {
    let f = maxwell(8, 4, 1.0);
    let p = params(0.5, 1.0);
    let a = CollisionEngine::new(&f, &p, &quad(64)).unwrap().gain_field();
    let b = CollisionEngine::new(&f, &p, &quad(64)).unwrap().gain_field();
    assert_eq!(a.0.values(), b.0.values());
    assert_eq!(a.1, b.1);
    let c = CollisionEngine::new(&f, &p, &quad(64).with_seed(2)).unwrap().gain_field();
    assert_ne!(a.0.values(), c.0.values());
    assert!(a.0.values().iter().all(|x| *x >= 0.0));
}

#[test]
fn unit_test_function_recovers_total_loss() {
    // For two unit Maxwellians with α = 0 the total energy E is Gamma(7/2, 1) distributed,
    // so ∫ 𝔐 L(𝔐) = c_α E[E^{γ/2}] = c_α Γ(7/2 + γ/2) / Γ(7/2).
    let gamma = 0.5;
    let total = kernel::c_alpha(0.0) * (ln_gamma(3.5 + 0.5 * gamma) - ln_gamma(3.5)).exp();
    let f = maxwell(12, 6, 0.0);
    let engine = CollisionEngine::new(&f, &params(gamma, 0.0), &quad(64)).unwrap();
    let s = engine.symmetry(0, &|_, _| 1.0, 200_000);
    assert!((s.lhs - total).abs() <= 3.0 * s.lhs_std_error, "gain side {} vs {total}", s.lhs);
    assert!((s.rhs - total).abs() <= 3.0 * s.rhs_std_error, "loss side {} vs {total}", s.rhs);
}
