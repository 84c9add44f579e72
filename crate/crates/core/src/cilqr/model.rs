//! The closed-loop step map shared by the simulator and the optimizer.

use nalgebra::{SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::allocation::{apply_nullspace, AllocationMatrix, DesiredWrench, NominalMode};
use crate::controller::{desired_wrench, ControllerGains, ControllerState, ReferencePoint};
use crate::dynamics::{exp_so3, integrate, log_so3, VehicleParams, VehicleState};
use crate::motors::{MotorModel, Regimes};
use crate::Thrusts;

/// Dimension of the tangent space of [`PredictionState`]:
/// position, velocity, rotation, angular velocity, motor outputs, position integral.
pub const TANGENT_DIM: usize = 23;
pub type Tangent = SVector<f64, TANGENT_DIM>;

// Offsets of the blocks inside a `Tangent`.
pub const IDX_POS: usize = 0;
pub const IDX_VEL: usize = 3;
pub const IDX_ROT: usize = 6;
pub const IDX_OMEGA: usize = 9;
pub const IDX_UACT: usize = 12;
pub const IDX_INT: usize = 20;

/// Everything the closed-loop step depends on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionState {
    pub vehicle: VehicleState,
    pub u_act: Thrusts,
    pub ctrl: ControllerState,
}

impl PredictionState {
    /// `self ⊕ dz`, with the rotation perturbed on the right.
    pub fn retract(&self, dz: &Tangent) -> Self {
        let v = &self.vehicle;
        let seg = |i: usize| Vector3::new(dz[i], dz[i + 1], dz[i + 2]);
        Self {
            vehicle: VehicleState {
                position: v.position + seg(IDX_POS),
                velocity: v.velocity + seg(IDX_VEL),
                orientation: v.orientation * exp_so3(&seg(IDX_ROT)),
                angular_velocity: v.angular_velocity + seg(IDX_OMEGA),
            },
            u_act: self.u_act + dz.fixed_rows::<8>(IDX_UACT),
            ctrl: ControllerState {
                e_p_integral: self.ctrl.e_p_integral + seg(IDX_INT),
            },
        }
    }

    /// `other ⊖ self`, the inverse of [`retract`](Self::retract).
    pub fn local(&self, other: &Self) -> Tangent {
        let mut dz = Tangent::zeros();
        let a = &self.vehicle;
        let b = &other.vehicle;
        dz.fixed_rows_mut::<3>(IDX_POS).copy_from(&(b.position - a.position));
        dz.fixed_rows_mut::<3>(IDX_VEL).copy_from(&(b.velocity - a.velocity));
        dz.fixed_rows_mut::<3>(IDX_ROT)
            .copy_from(&log_so3(&(a.orientation.transpose() * b.orientation)));
        dz.fixed_rows_mut::<3>(IDX_OMEGA)
            .copy_from(&(b.angular_velocity - a.angular_velocity));
        dz.fixed_rows_mut::<8>(IDX_UACT).copy_from(&(other.u_act - self.u_act));
        dz.fixed_rows_mut::<3>(IDX_INT)
            .copy_from(&(other.ctrl.e_p_integral - self.ctrl.e_p_integral));
        dz
    }

    pub fn is_finite(&self) -> bool {
        self.vehicle.is_finite()
            && self.u_act.iter().all(|x| x.is_finite())
            && self.ctrl.e_p_integral.iter().all(|x| x.is_finite())
    }
}

/// Controller and allocator output for one step, before the nullspace shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Command {
    pub wrench: DesiredWrench,
    /// Desired force rotated into the body frame.
    pub force_body: Vector3<f64>,
    pub u_0: Thrusts,
    /// Controller state after this step.
    pub ctrl: ControllerState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub command: Command,
    pub u_cmd: Thrusts,
    pub regimes: Regimes,
    pub next: PredictionState,
}

/// The plant, motors, controller and nominal allocator wired into one map
/// `(state, reference, X) ↦ next state`.
#[derive(Debug, Clone)]
pub struct ClosedLoopModel {
    pub vehicle: VehicleParams,
    pub alloc: AllocationMatrix,
    pub motors: MotorModel,
    pub gains: ControllerGains,
    pub nominal_mode: NominalMode,
}

impl ClosedLoopModel {
    pub fn dt(&self) -> f64 {
        self.motors.dt()
    }

    #[inline]
    pub fn command(&self, s: &PredictionState, reference: &ReferencePoint) -> Command {
        let (wrench, ctrl) =
            desired_wrench(reference, &s.vehicle, &self.gains, &s.ctrl, &self.vehicle, self.dt());
        let force_body = s.vehicle.orientation.transpose() * wrench.force_world;
        let u_0 = self.alloc.nominal(&force_body, &wrench.torque_body, self.nominal_mode);
        Command {
            wrench,
            force_body,
            u_0,
            ctrl,
        }
    }

    /// Motor update followed by one integration step under the wrench of the new motor outputs.
    #[inline]
    pub fn advance(
        &self,
        s: &PredictionState,
        ctrl: ControllerState,
        u_cmd: &Thrusts,
        regimes: &Regimes,
    ) -> PredictionState {
        let u_act = self.motors.step_with(&s.u_act, u_cmd, regimes);
        let f_b = self.alloc.force(&u_act);
        let tau_b = self.alloc.moment(&u_act);
        PredictionState {
            vehicle: integrate(&s.vehicle, &f_b, &tau_b, &self.vehicle, self.dt()),
            u_act,
            ctrl,
        }
    }

    #[inline]
    pub fn step(&self, s: &PredictionState, reference: &ReferencePoint, x: &Vector2<f64>) -> StepOutput {
        let command = self.command(s, reference);
        let u_cmd = apply_nullspace(&command.u_0, &self.alloc, x);
        let regimes = self.motors.regimes(&s.u_act, &u_cmd);
        StepOutput {
            command,
            u_cmd,
            regimes,
            next: self.advance(s, command.ctrl, &u_cmd, &regimes),
        }
    }

    /// Like [`step`](Self::step) with the motor branches fixed.
    #[inline]
    pub fn step_frozen(
        &self,
        s: &PredictionState,
        reference: &ReferencePoint,
        x: &Vector2<f64>,
        regimes: &Regimes,
    ) -> (Thrusts, PredictionState) {
        let command = self.command(s, reference);
        let u_cmd = apply_nullspace(&command.u_0, &self.alloc, x);
        (u_cmd, self.advance(s, command.ctrl, &u_cmd, regimes))
    }
}
