//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use polyslab::config::RunConfig;
use polyslab::phase_space::{DistributionField, Maxwellian, PhaseGrid};
use polyslab::solver::{self, BoundaryData};

/// Small run configuration: 5 x nodes, 8³ velocities, 4 energies.
pub fn small_config() -> RunConfig {
    RunConfig { n_x: 5, n_v: [8; 3], n_i: 4, ..RunConfig::default() }
}

pub fn grid(cfg: &RunConfig) -> Arc<PhaseGrid> {
    Arc::new(PhaseGrid::new(cfg.grid_spec().expect("valid grid spec")).expect("valid grid"))
}

pub fn maxwellian_field(cfg: &RunConfig) -> DistributionField {
    DistributionField::maxwellian(grid(cfg), &Maxwellian::new(1.0, [0.1, 0.0, 0.0], 1.0), cfg.alpha)
}

pub fn boundary(cfg: &RunConfig) -> BoundaryData {
    solver::make_boundary(&cfg.boundary_spec(), grid(cfg), &cfg.collision_params(), cfg.seed).expect("boundary").0
}
