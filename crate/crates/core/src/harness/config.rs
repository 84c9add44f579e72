//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::allocation::{build_allocation, NominalMode, Rotor, RotorGeometry};
use crate::cilqr::{horizon_from_constants, ClosedLoopModel, OcpConfig, WeightMatrix};
use crate::controller::{AttitudeErrorSign, ControllerGains, TrajectorySpec};
use crate::dynamics::VehicleParams;
use crate::error::{Error, Result};
use crate::motors::{Discretization, MotorModel, MotorParams};
use crate::{Thrusts, N_ROTORS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocatorKind {
    /// Single-step motor-bounds nullspace optimisation.
    Mbno,
    RecedingHorizon,
    /// `u_cmd = u_0` with no nullspace shift.
    PseudoinverseOnly,
}

impl AllocatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AllocatorKind::Mbno => "mbno",
            AllocatorKind::RecedingHorizon => "receding_horizon",
            AllocatorKind::PseudoinverseOnly => "pseudoinverse_only",
        }
    }
}

/// Validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub geometry: RotorGeometry,
    pub vehicle: VehicleParams,
    pub motor: MotorParams,
    pub discretization: Discretization,
    pub gains: ControllerGains,
    pub trajectory: TrajectorySpec,
    pub ocp: OcpConfig,
    pub allocator: AllocatorKind,
    pub nominal_mode: NominalMode,
    /// s
    pub dt: f64,
    /// s
    pub duration: f64,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Receding cycles allowed to fall back to MBNO before the run is aborted.
    pub fallback_budget: usize,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ConfigFile = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = file.resolve()?;
        // Relative output directories are taken relative to the config file.
        if cfg.output_dir.is_relative() {
            if let Some(parent) = path.parent() {
                cfg.output_dir = parent.join(&cfg.output_dir);
            }
        }
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.resolve()
    }

    /// Number of simulation steps, `duration / dt`.
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// Overrides the experiment seed and the solver seed with it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.ocp.rng_seed = seed;
    }

    pub fn with_allocator(&self, allocator: AllocatorKind) -> Self {
        Self {
            allocator,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.motor.validate()?;
        self.gains.validate()?;
        self.trajectory.validate()?;
        self.ocp.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if !(self.duration > 0.0) {
            return Err(Error::Config("duration must be positive".into()));
        }
        let n = self.duration / self.dt;
        if (n - n.round()).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::Config(format!(
                "dt = {} does not divide duration = {}",
                self.dt, self.duration
            )));
        }
        if self.ocp.dt != self.dt {
            return Err(Error::Config("solver dt must equal the loop dt".into()));
        }
        if self.dt > self.motor.tau_min() {
            return Err(Error::MotorConfig(format!(
                "dt = {} s exceeds min time constant {} s",
                self.dt,
                self.motor.tau_min()
            )));
        }
        let max_thrust = self.geometry.max_thrust();
        if (0..N_ROTORS).any(|i| self.ocp.u_max[i] > max_thrust[i]) {
            return Err(Error::Config("solver u_max exceeds rotor max thrust".into()));
        }
        build_allocation(&self.geometry)?;
        Ok(())
    }

    /// Upper motor bounds used by every allocator.
    pub fn u_max(&self) -> Thrusts {
        self.ocp.u_max
    }

    pub fn model(&self) -> Result<ClosedLoopModel> {
        Ok(ClosedLoopModel {
            vehicle: self.vehicle,
            alloc: build_allocation(&self.geometry)?,
            motors: MotorModel::uniform(self.motor, self.dt, self.discretization)?,
            gains: self.gains,
            nominal_mode: self.nominal_mode,
        })
    }
}

/// On-disk layout. Missing optional sections fall back to the built-in defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub allocator: AllocatorKind,
    pub dt: f64,
    pub duration: f64,
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub nominal_mode: NominalMode,
    #[serde(default)]
    pub fallback_budget: usize,
    pub vehicle: VehicleSection,
    #[serde(default)]
    pub motor: MotorSection,
    #[serde(default)]
    pub geometry: GeometrySection,
    #[serde(default)]
    pub gains: GainsSection,
    pub trajectory: TrajectorySection,
    #[serde(default)]
    pub ocp: OcpSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSection {
    pub mass: f64,
    /// Row-major 3×3, or a diagonal given as three numbers.
    pub inertia: MatrixSpec,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
}

fn default_gravity() -> f64 {
    crate::dynamics::DEFAULT_GRAVITY
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Diagonal([f64; 3]),
    Full([[f64; 3]; 3]),
}

impl MatrixSpec {
    fn matrix(&self) -> Matrix3<f64> {
        match self {
            MatrixSpec::Diagonal(d) => Matrix3::from_diagonal(&Vector3::from(*d)),
            MatrixSpec::Full(rows) => Matrix3::from_fn(|i, j| rows[i][j]),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotorSection {
    pub tau_rise: f64,
    pub tau_fall: f64,
    #[serde(default)]
    pub discretization: Discretization,
}

impl Default for MotorSection {
    fn default() -> Self {
        let p = MotorParams::default();
        Self {
            tau_rise: p.tau_rise,
            tau_fall: p.tau_fall,
            discretization: Discretization::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    /// Explicit rotors; the built-in cube frame when absent.
    #[serde(default)]
    pub rotors: Option<Vec<RotorSpec>>,
    /// Overrides every rotor's max thrust, N.
    #[serde(default)]
    pub max_thrust: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotorSpec {
    pub position: [f64; 3],
    /// Normalised on load.
    pub direction: [f64; 3],
    pub kappa: f64,
    pub max_thrust: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub kp_pos: Option<[f64; 3]>,
    pub kd_pos: Option<[f64; 3]>,
    pub ki_pos: Option<[f64; 3]>,
    pub kp_att: Option<MatrixSpec>,
    pub kd_att: Option<MatrixSpec>,
    pub e_p_max: Option<f64>,
    pub e_v_max: Option<f64>,
    pub attitude_error_sign: Option<AttitudeErrorSign>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySection {
    pub p_start: [f64; 3],
    pub p_end: [f64; 3],
    pub rot_axis: [f64; 3],
    /// rad
    pub rot_angle: f64,
    /// s
    pub duration: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcpSection {
    /// Explicit horizon; otherwise `horizon_multiplier · max τ / dt`.
    pub h: Option<usize>,
    pub horizon_multiplier: Option<f64>,
    pub h_c: Option<usize>,
    /// Diagonal weight (eight numbers) or a scalar multiple of identity.
    pub r_delta_u: Option<WeightSpec>,
    /// Scalar or per-motor, N. Defaults to the rotor max thrust.
    pub u_max: Option<BoundSpec>,
    pub max_outer_iters: Option<usize>,
    pub max_inner_iters: Option<usize>,
    pub penalty_init: Option<f64>,
    pub penalty_scale: Option<f64>,
    pub constraint_tol: Option<f64>,
    pub cost_tol: Option<f64>,
    pub warm_start_sigma: Option<f64>,
    /// Defaults to the experiment seed.
    pub rng_seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Scalar(f64),
    Diagonal([f64; N_ROTORS]),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundSpec {
    Scalar(f64),
    PerMotor([f64; N_ROTORS]),
}

/// Default share of the horizon that is applied before re-planning, 20 of 300 steps.
const DEFAULT_H_C_FRACTION: f64 = 20.0 / 300.0;
const DEFAULT_HORIZON_MULTIPLIER: f64 = 4.0;

impl ConfigFile {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let vehicle = VehicleParams::new(
            self.vehicle.mass,
            self.vehicle.inertia.matrix(),
            self.vehicle.gravity,
        )?;
        let motor = MotorParams {
            tau_rise: self.motor.tau_rise,
            tau_fall: self.motor.tau_fall,
        };
        motor.validate()?;

        let mut geometry = match &self.geometry.rotors {
            None => RotorGeometry::default_cube(),
            Some(list) => {
                let rotors: [RotorSpec; N_ROTORS] = list.clone().try_into().map_err(|v: Vec<_>| {
                    Error::Config(format!("expected {N_ROTORS} rotors, got {}", v.len()))
                })?;
                RotorGeometry {
                    rotors: rotors.map(|r| Rotor {
                        position: Vector3::from(r.position),
                        direction: Vector3::from(r.direction).normalize(),
                        kappa: r.kappa,
                        max_thrust: r.max_thrust,
                    }),
                }
            }
        };
        if let Some(f) = self.geometry.max_thrust {
            for r in &mut geometry.rotors {
                r.max_thrust = f;
            }
        }

        let g = &self.gains;
        let mut gains = ControllerGains::default_for_mass(vehicle.mass());
        if let Some(v) = g.kp_pos {
            gains.kp_pos = Vector3::from(v);
        }
        if let Some(v) = g.kd_pos {
            gains.kd_pos = Vector3::from(v);
        }
        if let Some(v) = g.ki_pos {
            gains.ki_pos = Vector3::from(v);
        }
        if let Some(m) = &g.kp_att {
            gains.kp_att = m.matrix();
        }
        if let Some(m) = &g.kd_att {
            gains.kd_att = m.matrix();
        }
        if let Some(v) = g.e_p_max {
            gains.e_p_max = v;
        }
        if let Some(v) = g.e_v_max {
            gains.e_v_max = v;
        }
        if let Some(v) = g.attitude_error_sign {
            gains.attitude_error_sign = v;
        }

        let t = &self.trajectory;
        let trajectory = TrajectorySpec {
            p_start: Vector3::from(t.p_start),
            p_end: Vector3::from(t.p_end),
            rot_axis: Vector3::from(t.rot_axis),
            rot_angle: t.rot_angle,
            duration: t.duration,
        };

        let o = &self.ocp;
        let h = match o.h {
            Some(h) => h,
            None => {
                if !(self.dt > 0.0) {
                    return Err(Error::Config("dt must be positive".into()));
                }
                horizon_from_constants(
                    motor.tau_rise,
                    motor.tau_fall,
                    self.dt,
                    o.horizon_multiplier.unwrap_or(DEFAULT_HORIZON_MULTIPLIER),
                )
            }
        };
        let h_c = o
            .h_c
            .unwrap_or_else(|| ((h as f64 * DEFAULT_H_C_FRACTION).round() as usize).max(1));
        let u_max = match &o.u_max {
            None => geometry.max_thrust(),
            Some(BoundSpec::Scalar(u)) => Thrusts::from_element(*u),
            Some(BoundSpec::PerMotor(u)) => Thrusts::from_column_slice(u),
        };
        let mut ocp = OcpConfig::with_defaults(h, h_c, u_max, self.dt);
        ocp.rng_seed = o.rng_seed.unwrap_or(self.seed);
        match &o.r_delta_u {
            None => {}
            Some(WeightSpec::Scalar(w)) => ocp.r_delta_u = WeightMatrix::identity() * *w,
            Some(WeightSpec::Diagonal(d)) => {
                ocp.r_delta_u = WeightMatrix::from_diagonal(&Thrusts::from_column_slice(d))
            }
        }
        macro_rules! take {
            ($($field:ident),*) => { $( if let Some(v) = o.$field { ocp.$field = v; } )* };
        }
        take!(
            max_outer_iters,
            max_inner_iters,
            penalty_init,
            penalty_scale,
            constraint_tol,
            cost_tol,
            warm_start_sigma
        );

        let cfg = ExperimentConfig {
            geometry,
            vehicle,
            motor,
            discretization: self.motor.discretization,
            gains,
            trajectory,
            ocp,
            allocator: self.allocator,
            nominal_mode: self.nominal_mode,
            dt: self.dt,
            duration: self.duration,
            output_dir: self.output_dir.clone(),
            seed: self.seed,
            fallback_budget: self.fallback_budget,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
