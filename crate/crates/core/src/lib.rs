//! Steady Boltzmann equation for a polyatomic gas in a slab, with Borgnakke–Larsen collisions:
//! collision integrals, weighted norms, a mild-form fixed-point solver and bound checks.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod collision;
pub mod config;
pub mod error;
pub mod interp;
pub mod json_float;
pub mod kernel;
pub mod norms;
pub mod phase_space;
pub mod quad;
pub mod rng;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
