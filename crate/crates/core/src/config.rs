//! Run configuration: a flat TOML table with every knob, validated as a whole.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::collision::{QuadratureMode, QuadratureSpec, TensorOrders};
use crate::error::{Error, Result};
use crate::interp::Interpolation;
use crate::kernel::{CollisionParams, KernelModel, Mutation};
use crate::phase_space::{EnergyRule, GridSpec};
use crate::solver::{BoundaryFamily, BoundarySpec, PicardOptions, SideParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyRuleKind {
    Midpoint,
    GaussLegendre,
    #[default]
    GaussLaguerre,
}

/// Test fields for the verification suite.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatteryKind {
    #[default]
    Standard,
    Empty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub a: f64,
    pub epsilon: f64,
    pub kernel_model: KernelModel,
    pub mutation: Mutation,

    pub n_x: usize,
    pub n_v: [usize; 3],
    pub n_i: usize,
    /// Box extents; fitted to the inflow temperatures when absent.
    pub v_max: Option<f64>,
    pub i_max: Option<f64>,
    pub energy_rule: EnergyRuleKind,
    /// Weighted tail mass allowed outside a fitted box.
    pub tail: f64,

    pub quadrature_mode: QuadratureMode,
    pub n_samples: usize,
    pub tensor_orders: [usize; 5],
    pub seed: u64,
    pub interpolation: Interpolation,

    pub boundary_family: BoundaryFamily,
    pub left_density: f64,
    pub left_temperature: f64,
    pub left_velocity: [f64; 3],
    pub left_beta: f64,
    pub right_density: f64,
    pub right_temperature: f64,
    pub right_velocity: [f64; 3],
    pub right_beta: f64,
    pub boundary_table: Option<PathBuf>,

    pub tol: Option<f64>,
    pub max_iter: usize,
    pub auto_halve: bool,
    pub revalidate: bool,

    pub eps_list: Vec<f64>,
    pub replicates: usize,
    /// Samples per estimator in the weak-form checks.
    pub symmetry_samples: usize,
    pub battery: BatteryKind,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TensorOrders::default();
        RunConfig {
            gamma: 0.5,
            alpha: 0.0,
            a: 0.5,
            epsilon: 0.05,
            kernel_model: KernelModel::TotalEnergy,
            mutation: Mutation::None,
            n_x: 9,
            n_v: [12, 12, 12],
            n_i: 6,
            v_max: None,
            i_max: None,
            energy_rule: EnergyRuleKind::GaussLaguerre,
            tail: 1e-8,
            quadrature_mode: QuadratureMode::MonteCarlo,
            n_samples: 64,
            tensor_orders: [t.velocity, t.energy, t.r, t.big_r, t.polar],
            seed: 1,
            interpolation: Interpolation::MaxwellianRatio,
            boundary_family: BoundaryFamily::CutoffMaxwellian,
            left_density: 1.0,
            left_temperature: 1.0,
            left_velocity: [0.0; 3],
            left_beta: 1.0,
            right_density: 1.0,
            right_temperature: 1.0,
            right_velocity: [0.0; 3],
            right_beta: 1.0,
            boundary_table: None,
            tol: None,
            max_iter: 50,
            auto_halve: false,
            revalidate: true,
            eps_list: vec![0.2, 0.1, 0.05, 0.025],
            replicates: 4,
            symmetry_samples: 100_000,
            battery: BatteryKind::Standard,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validated()
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical serialization, without the output directory.
    pub fn digest(&self) -> String {
        let canonical = RunConfig { out_dir: PathBuf::new(), ..self.clone() };
        hex::encode(Sha256::digest(canonical.to_toml().as_bytes()))
    }

    pub fn validated(self) -> Result<RunConfig> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(self)
        } else {
            const TAG: &str = "weight admissibility: ";
            Err(if problems.iter().all(|p| p.starts_with(TAG)) {
                Error::WeightAdmissibility(problems.iter().map(|p| &p[TAG.len()..]).collect::<Vec<_>>().join("; "))
            } else {
                Error::Config(problems.join("; "))
            })
        }
    }

    /// Every violated constraint, one message per field.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if let Err(Error::InvalidParameter(m)) = self.collision_params().validate() {
            p.extend(m.split("; ").map(String::from));
        }
        if self.n_x < 2 {
            p.push(format!("n_x = {} must be at least 2", self.n_x));
        }
        if self.n_v.iter().any(|&n| n < 2) {
            p.push(format!("n_v = {:?} needs at least 2 nodes per axis", self.n_v));
        }
        if !self.n_v[0].is_multiple_of(2) {
            p.push(format!("n_v[0] = {} must be even so that v₁ = 0 is not a node", self.n_v[0]));
        }
        if self.n_i < 1 {
            p.push("n_i must be at least 1".into());
        }
        for (name, x) in [("v_max", self.v_max), ("i_max", self.i_max)] {
            if let Some(x) = x {
                if !(x > 0.0 && x.is_finite()) {
                    p.push(format!("{name} = {x} must be positive"));
                }
            }
        }
        if !(self.tail > 0.0 && self.tail < 1.0) {
            p.push(format!("tail = {} must lie in (0, 1)", self.tail));
        }
        if let Err(Error::InvalidParameter(m)) = self.quadrature().validate() {
            p.push(m);
        }
        p.extend(self.boundary_spec().validate(self.a));
        if let Some(t) = self.tol {
            if !(t >= 0.0) {
                p.push(format!("tol = {t} must be non-negative"));
            }
        }
        if self.max_iter < 1 {
            p.push("max_iter must be at least 1".into());
        }
        if self.eps_list.is_empty() {
            p.push("eps_list must not be empty".into());
        }
        if self.eps_list.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            p.push(format!("eps_list = {:?} must hold positive values", self.eps_list));
        }
        if self.replicates < 1 {
            p.push("replicates must be at least 1".into());
        }
        if self.symmetry_samples < 2 {
            p.push("symmetry_samples must be at least 2".into());
        }
        p
    }

    pub fn collision_params(&self) -> CollisionParams {
        CollisionParams {
            gamma: self.gamma,
            alpha: self.alpha,
            model: self.kernel_model,
            a: self.a,
            epsilon: self.epsilon,
            mutation: self.mutation,
        }
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        let t = self.left_temperature.max(self.right_temperature);
        let drift = (self.left_velocity.iter().map(|x| x * x).sum::<f64>())
            .sqrt()
            .max(self.right_velocity.iter().map(|x| x * x).sum::<f64>().sqrt());
        let fitted = GridSpec::fitted(self.n_x, self.n_v, self.n_i, t, drift, self.a, self.alpha, self.tail)?;
        let energy_rule = match self.energy_rule {
            EnergyRuleKind::Midpoint => EnergyRule::Midpoint,
            EnergyRuleKind::GaussLegendre => EnergyRule::GaussLegendre,
            EnergyRuleKind::GaussLaguerre => fitted.energy_rule,
        };
        Ok(GridSpec {
            v_max: self.v_max.unwrap_or(fitted.v_max),
            i_max: self.i_max.unwrap_or(fitted.i_max),
            energy_rule,
            ..fitted
        })
    }

    pub fn quadrature(&self) -> QuadratureSpec {
        let o = self.tensor_orders;
        QuadratureSpec {
            mode: self.quadrature_mode,
            n_samples: self.n_samples,
            tensor: TensorOrders { velocity: o[0], energy: o[1], r: o[2], big_r: o[3], polar: o[4] },
            seed: self.seed,
            interpolation: self.interpolation,
            velocity_scale: None,
            energy_mean: None,
        }
    }

    pub fn boundary_spec(&self) -> BoundarySpec {
        BoundarySpec {
            family: self.boundary_family,
            left: SideParams {
                density: self.left_density,
                temperature: self.left_temperature,
                velocity: self.left_velocity,
                beta: self.left_beta,
            },
            right: SideParams {
                density: self.right_density,
                temperature: self.right_temperature,
                velocity: self.right_velocity,
                beta: self.right_beta,
            },
            table: self.boundary_table.clone(),
        }
    }

    pub fn battery_enabled(&self) -> bool {
        self.battery == BatteryKind::Standard
    }

    pub fn picard_options(&self) -> PicardOptions {
        PicardOptions { tol: self.tol, max_iter: self.max_iter, auto_halve: self.auto_halve, revalidate: self.revalidate }
    }
}
