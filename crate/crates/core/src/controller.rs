//! Reference generation and the feedforward + feedback wrench controller.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::allocation::DesiredWrench;
use crate::dynamics::{axis_angle, hat, vee_unchecked, VehicleParams, VehicleState};
use crate::error::{Error, Result};

/// Rest-to-rest septic time scaling `σ(τ) = 35τ⁴ − 84τ⁵ + 70τ⁶ − 20τ⁷` on `[0, 1]`,
/// returning `σ` and its first three derivatives with respect to `τ`.
#[inline]
fn septic_blend(tau: f64) -> [f64; 4] {
    let t = tau.clamp(0.0, 1.0);
    let t2 = t * t;
    let t3 = t2 * t;
    let t4 = t3 * t;
    [
        t4 * (35.0 + t * (-84.0 + t * (70.0 - 20.0 * t))),
        t3 * (140.0 + t * (-420.0 + t * (420.0 - 140.0 * t))),
        t2 * (420.0 + t * (-1680.0 + t * (2100.0 - 840.0 * t))),
        t * (840.0 + t * (-5040.0 + t * (8400.0 - 4200.0 * t))),
    ]
}

/// Coefficients `c_0..c_7` (ascending powers of `t`) of the degree-7 polynomial from
/// `x0` to `x_t` over `[0, duration]` with zero velocity, acceleration and jerk at
/// both ends.
pub fn septic_coeffs(x0: f64, x_t: f64, duration: f64) -> Result<[f64; 8]> {
    if !(duration > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "trajectory duration must be positive, got {duration}"
        )));
    }
    let d = x_t - x0;
    Ok([
        x0,
        0.0,
        0.0,
        0.0,
        35.0 * d / duration.powi(4),
        -84.0 * d / duration.powi(5),
        70.0 * d / duration.powi(6),
        -20.0 * d / duration.powi(7),
    ])
}

/// Value and derivatives up to third order of the polynomial `coeffs` at `t`.
pub fn eval_poly(coeffs: &[f64; 8], t: f64) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (order, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in (order..8).rev() {
            let falling: f64 = (0..order).map(|j| (k - j) as f64).product();
            acc = acc * t + coeffs[k] * falling;
        }
        *slot = acc;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub p_start: Vector3<f64>,
    pub p_end: Vector3<f64>,
    pub rot_axis: Vector3<f64>,
    /// Total rotation, rad.
    pub rot_angle: f64,
    /// s
    pub duration: f64,
}

impl TrajectorySpec {
    pub fn hover(position: Vector3<f64>, duration: f64) -> Self {
        Self {
            p_start: position,
            p_end: position,
            rot_axis: Vector3::z(),
            rot_angle: 0.0,
            duration,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::Parameter("trajectory duration must be positive".into()));
        }
        if !((self.rot_axis.norm() - 1.0).abs() <= 1e-12) {
            return Err(Error::Parameter("rotation axis must be a unit vector".into()));
        }
        Ok(())
    }

    /// Reference rotation angle at `t`.
    pub fn angle_at(&self, t: f64) -> f64 {
        self.rot_angle * septic_blend(t / self.duration)[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub orientation: Matrix3<f64>,
    /// Body frame.
    pub angular_velocity: Vector3<f64>,
    /// Body frame.
    pub angular_acceleration: Vector3<f64>,
}

/// Samples the reference at `t`, clamped to `[0, duration]`.
pub fn reference_at(spec: &TrajectorySpec, t: f64) -> ReferencePoint {
    let big_t = spec.duration;
    let [s, ds, dds, _] = septic_blend(t / big_t);
    let (v_scale, a_scale) = if (0.0..=big_t).contains(&t) {
        (1.0 / big_t, 1.0 / (big_t * big_t))
    } else {
        (0.0, 0.0)
    };
    let d = spec.p_end - spec.p_start;
    let theta = spec.rot_angle * s;
    ReferencePoint {
        position: spec.p_start + d * s,
        velocity: d * (ds * v_scale),
        acceleration: d * (dds * a_scale),
        orientation: axis_angle(&spec.rot_axis, theta),
        angular_velocity: spec.rot_axis * (spec.rot_angle * ds * v_scale),
        angular_acceleration: spec.rot_axis * (spec.rot_angle * dds * a_scale),
    }
}

/// Sign applied to the attitude error before the proportional term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttitudeErrorSign {
    /// `τ = K_p e_R` with `e_R = ½(R_rᵀR − RᵀR_r)^∨`. Drives the attitude away from the
    /// reference for positive gains.
    AsWritten,
    /// `τ = −K_p e_R`, the stabilising choice.
    #[default]
    Flipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    /// Diagonal of K_p^p.
    pub kp_pos: Vector3<f64>,
    pub kd_pos: Vector3<f64>,
    pub ki_pos: Vector3<f64>,
    pub kp_att: Matrix3<f64>,
    pub kd_att: Matrix3<f64>,
    /// m
    pub e_p_max: f64,
    /// m/s
    pub e_v_max: f64,
    #[serde(default)]
    pub attitude_error_sign: AttitudeErrorSign,
}

impl ControllerGains {
    /// Defaults scaled by vehicle mass: position 16/8/1 · m, attitude 30/8.
    pub fn default_for_mass(mass: f64) -> Self {
        Self {
            kp_pos: Vector3::repeat(16.0 * mass),
            kd_pos: Vector3::repeat(8.0 * mass),
            ki_pos: Vector3::repeat(mass),
            kp_att: Matrix3::identity() * 30.0,
            kd_att: Matrix3::identity() * 8.0,
            e_p_max: 0.5,
            e_v_max: 1.0,
            attitude_error_sign: AttitudeErrorSign::Flipped,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: &Vector3<f64>| v.iter().all(|&x| x >= 0.0);
        if !(nonneg(&self.kp_pos) && nonneg(&self.kd_pos) && nonneg(&self.ki_pos)) {
            return Err(Error::Parameter("position gains must be non-negative".into()));
        }
        for (name, m) in [("kp_att", &self.kp_att), ("kd_att", &self.kd_att)] {
            if (m - m.transpose()).amax() > 1e-12 || m.symmetric_eigenvalues().min() <= 0.0 {
                return Err(Error::Parameter(format!("{name} must be symmetric positive definite")));
            }
        }
        if !(self.e_p_max > 0.0 && self.e_v_max > 0.0) {
            return Err(Error::Parameter("saturation bounds must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControllerState {
    /// Integral of the saturated position error, m·s.
    pub e_p_integral: Vector3<f64>,
}

/// Component-wise magnitude saturation.
#[inline]
pub fn sat(x: &Vector3<f64>, max: f64) -> Vector3<f64> {
    x.map(|v| v.clamp(-max, max))
}

/// World-frame force command; also advances the integral state.
#[inline]
pub fn position_control(
    reference: &ReferencePoint,
    state: &VehicleState,
    gains: &ControllerGains,
    ctrl: &ControllerState,
    params: &VehicleParams,
    dt: f64,
) -> (Vector3<f64>, ControllerState) {
    let e_p = sat(&(reference.position - state.position), gains.e_p_max);
    let e_v = sat(&(reference.velocity - state.velocity), gains.e_v_max);
    let e_p_integral = ctrl.e_p_integral + e_p * dt;
    let f_w = (reference.acceleration + Vector3::new(0.0, 0.0, params.gravity())) * params.mass()
        + gains.kp_pos.component_mul(&e_p)
        + gains.kd_pos.component_mul(&e_v)
        + gains.ki_pos.component_mul(&e_p_integral);
    (f_w, ControllerState { e_p_integral })
}

/// `½(R_rᵀ R − Rᵀ R_r)^∨`.
#[inline]
pub fn attitude_error(r_ref: &Matrix3<f64>, r_hat: &Matrix3<f64>) -> Vector3<f64> {
    let m = r_ref.transpose() * r_hat;
    vee_unchecked(&(m - m.transpose())) * 0.5
}

/// Body torque command, including the `[J ω]ₓ ω` rate term.
#[inline]
pub fn attitude_control(
    reference: &ReferencePoint,
    state: &VehicleState,
    gains: &ControllerGains,
    params: &VehicleParams,
) -> Vector3<f64> {
    let mut e_r = attitude_error(&reference.orientation, &state.orientation);
    if gains.attitude_error_sign == AttitudeErrorSign::Flipped {
        e_r = -e_r;
    }
    let w = &state.angular_velocity;
    let e_w = reference.angular_velocity - w;
    gains.kp_att * e_r + gains.kd_att * e_w + hat(&(params.inertia() * w)) * w
}

/// Full controller evaluation: wrench plus the updated integral state.
#[inline]
pub fn desired_wrench(
    reference: &ReferencePoint,
    state: &VehicleState,
    gains: &ControllerGains,
    ctrl: &ControllerState,
    params: &VehicleParams,
    dt: f64,
) -> (DesiredWrench, ControllerState) {
    let (force_world, ctrl) = position_control(reference, state, gains, ctrl, params, dt);
    let torque_body = attitude_control(reference, state, gains, params);
    (
        DesiredWrench {
            force_world,
            torque_body,
        },
        ctrl,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{log_so3, orthonormality_error};
    use nalgebra::{SMatrix, SVector};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Solves the eight boundary conditions directly.
    fn septic_oracle(x0: f64, x_t: f64, big_t: f64) -> [f64; 8] {
        let mut m = SMatrix::<f64, 8, 8>::zeros();
        let mut rhs = SVector::<f64, 8>::zeros();
        for (block, (t, x)) in [(0.0, x0), (big_t, x_t)].into_iter().enumerate() {
            for order in 0..4 {
                let row = block * 4 + order;
                for k in order..8 {
                    let falling: f64 = (0..order).map(|j| (k - j) as f64).product();
                    m[(row, k)] = falling * t.powi((k - order) as i32);
                }
                rhs[row] = if order == 0 { x } else { 0.0 };
            }
        }
        let c = m.lu().solve(&rhs).unwrap();
        std::array::from_fn(|i| c[i])
    }

    fn params() -> VehicleParams {
        VehicleParams::new(1.0, Matrix3::from_diagonal(&Vector3::new(1.0, 2.0, 3.0)), 9.81).unwrap()
    }

    fn bundled_trajectory() -> TrajectorySpec {
        TrajectorySpec {
            p_start: Vector3::new(0.0, 0.0, 3.0),
            p_end: Vector3::new(1.0, 1.0, 2.0),
            rot_axis: Vector3::y(),
            rot_angle: 2.0 * PI,
            duration: 60.0,
        }
    }

    #[test]
    fn septic_matches_linear_system() {
        let c = septic_coeffs(-0.7, 2.3, 4.0).unwrap();
        let oracle = septic_oracle(-0.7, 2.3, 4.0);
        for (a, b) in c.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{c:?} vs {oracle:?}");
        }
        let mid = eval_poly(&c, 2.0);
        assert!((mid[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn septic_boundary_conditions() {
        let c = septic_coeffs(1.0, 3.0, 2.0).unwrap();
        let start = eval_poly(&c, 0.0);
        let end = eval_poly(&c, 2.0);
        assert!((start[0] - 1.0).abs() < 1e-12);
        assert!((end[0] - 3.0).abs() < 1e-12);
        for k in 1..4 {
            assert!(start[k].abs() < 1e-9);
            assert!(end[k].abs() < 1e-9);
        }
        assert!(septic_coeffs(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn blend_agrees_with_polynomial() {
        let c = septic_coeffs(0.0, 1.0, 1.0).unwrap();
        for k in 0..=20 {
            let t = k as f64 / 20.0;
            let a = septic_blend(t);
            let b = eval_poly(&c, t);
            for i in 0..4 {
                assert!((a[i] - b[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reference_start_end_and_midpoint() {
        let spec = bundled_trajectory();
        let r0 = reference_at(&spec, 0.0);
        assert_eq!(r0.position, spec.p_start);
        assert_eq!(r0.orientation, Matrix3::identity());
        assert_eq!(r0.velocity, Vector3::zeros());
        assert_eq!(r0.acceleration, Vector3::zeros());
        assert_eq!(r0.angular_velocity, Vector3::zeros());

        let r_end = reference_at(&spec, 60.0);
        assert!((r_end.orientation - Matrix3::identity()).amax() < 1e-9);
        assert!((r_end.position - spec.p_end).amax() < 1e-12);

        let mid = reference_at(&spec, 30.0);
        assert!((mid.position - Vector3::new(0.5, 0.5, 2.5)).amax() < 1e-12);
        let expected = axis_angle(&Vector3::y(), PI);
        assert!((mid.orientation - expected).amax() < 1e-9);
        assert!(orthonormality_error(&mid.orientation) < 1e-12);

        // Clamped outside the window.
        let late = reference_at(&spec, 75.0);
        assert_eq!(late.position, r_end.position);
        assert_eq!(late.velocity, Vector3::zeros());
    }

    #[test]
    fn reference_velocity_matches_central_differences() {
        let spec = TrajectorySpec {
            duration: 6.0,
            ..bundled_trajectory()
        };
        let dt = 0.002;
        let n = (spec.duration / dt) as usize;
        let mut worst = 0.0f64;
        let mut worst_w = 0.0f64;
        for k in 1..n {
            let t = k as f64 * dt;
            let prev = reference_at(&spec, t - dt);
            let next = reference_at(&spec, t + dt);
            let cur = reference_at(&spec, t);
            let fd = (next.position - prev.position) / (2.0 * dt);
            worst = worst.max((fd - cur.velocity).amax());
            let fd_w = log_so3(&(prev.orientation.transpose() * next.orientation)) / (2.0 * dt);
            worst_w = worst_w.max((fd_w - cur.angular_velocity).amax());
        }
        assert!(worst < 1e-4, "{worst}");
        assert!(worst_w < 1e-4, "{worst_w}");
    }

    #[test]
    fn hover_feedforward() {
        let p = params();
        let gains = ControllerGains::default_for_mass(p.mass());
        let state = VehicleState::at_rest(Vector3::new(0.0, 0.0, 1.0));
        let reference = reference_at(&TrajectorySpec::hover(state.position, 10.0), 1.0);
        let (f, _) = position_control(&reference, &state, &gains, &ControllerState::default(), &p, 0.002);
        assert_eq!(f, Vector3::new(0.0, 0.0, 9.81));
    }

    #[test]
    fn position_error_saturates() {
        let p = params();
        let mut gains = ControllerGains::default_for_mass(1.0);
        gains.kd_pos = Vector3::zeros();
        gains.ki_pos = Vector3::zeros();
        let state = VehicleState::at_rest(Vector3::zeros());
        let mut reference = reference_at(&TrajectorySpec::hover(Vector3::zeros(), 1.0), 0.0);
        reference.position = Vector3::new(10.0, 0.0, 0.0);
        let (f, _) = position_control(&reference, &state, &gains, &ControllerState::default(), &p, 0.002);
        assert_eq!(f - Vector3::new(0.0, 0.0, 9.81), gains.kp_pos.component_mul(&Vector3::new(0.5, 0.0, 0.0)));
    }

    #[test]
    fn integral_accumulates() {
        let p = params();
        let gains = ControllerGains::default_for_mass(1.0);
        let state = VehicleState::at_rest(Vector3::zeros());
        let mut reference = reference_at(&TrajectorySpec::hover(Vector3::zeros(), 1.0), 0.0);
        reference.position = Vector3::new(0.1, 0.0, 0.0);
        let mut ctrl = ControllerState::default();
        for _ in 0..500 {
            ctrl = position_control(&reference, &state, &gains, &ctrl, &p, 0.002).1;
        }
        assert!((ctrl.e_p_integral - Vector3::new(0.1, 0.0, 0.0)).amax() < 1e-12);
    }

    #[test]
    fn attitude_error_about_z() {
        for &theta in &[0.1, 0.5, 1.2, -0.8] {
            let r = axis_angle(&Vector3::z(), theta);
            let e = attitude_error(&Matrix3::identity(), &r);
            // Direct evaluation of ½(R − Rᵀ)^∨ for R = Rz(θ).
            let oracle = Vector3::new(0.0, 0.0, 0.5 * (r[(1, 0)] - r[(0, 1)]));
            assert!((e - oracle).amax() < 1e-15);
            assert!((e.z - theta.sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn attitude_control_zero_and_rate_term() {
        let p = params();
        let gains = ControllerGains::default_for_mass(1.0);
        let state = VehicleState::at_rest(Vector3::zeros());
        let reference = reference_at(&TrajectorySpec::hover(Vector3::zeros(), 1.0), 0.0);
        assert_eq!(attitude_control(&reference, &state, &gains, &p), Vector3::zeros());

        let mut zero = gains;
        zero.kp_att = Matrix3::identity() * 1e-300;
        zero.kd_att = Matrix3::identity() * 1e-300;
        let mut spinning = state;
        spinning.angular_velocity = Vector3::new(1.0, 1.0, 1.0);
        let tau = attitude_control(&reference, &spinning, &zero, &p);
        assert!((tau - Vector3::new(-1.0, 2.0, -1.0)).amax() < 1e-12);
    }

    #[test]
    fn gains_validation() {
        let mut g = ControllerGains::default_for_mass(1.0);
        assert!(g.validate().is_ok());
        g.kd_att[(0, 0)] = -1.0;
        assert!(g.validate().is_err());
    }

    proptest! {
        #[test]
        fn saturation_is_idempotent(v in prop::array::uniform3(-50.0f64..50.0), m in 0.01f64..10.0) {
            let x = Vector3::from(v);
            let once = sat(&x, m);
            prop_assert_eq!(sat(&once, m), once);
            prop_assert!(once.amax() <= m);
        }
    }
}
