//! Rotation utilities on SO(3) and rigid-body propagation under a body-frame wrench.
//!
//! The vehicle obeys
//!
//! ```text
//! m v̇ = [0, 0, -m g]ᵀ + R f_B
//! J ω̇ = -ω × (J ω) + τ_B
//! ```
//!
//! with `R` mapping body to world coordinates and `ω` expressed in the body frame.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GRAVITY: f64 = 9.81;

/// Tolerance on `‖M + Mᵀ‖` accepted by [`vee`].
pub const SKEW_TOL: f64 = 1e-9;

/// Cross-product matrix: `hat(v) * u == v × u`.
#[inline]
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]. Rejects matrices that are not skew-symmetric within [`SKEW_TOL`].
pub fn vee(m: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let asym = (m + m.transpose()).norm();
    if !asym.is_finite() || asym > SKEW_TOL {
        return Err(Error::InvalidArgument(format!(
            "vee of a non-skew matrix (‖M + Mᵀ‖ = {asym:.3e})"
        )));
    }
    Ok(vee_unchecked(m))
}

/// Reads the skew part of `m` without validating it.
#[inline]
pub(crate) fn vee_unchecked(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Closed-form Rodrigues exponential of `hat(phi)`.
pub fn exp_so3(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = hat(phi);
    let (a, b) = if theta2 < 1e-12 {
        // Taylor expansions of sin θ / θ and (1 - cos θ) / θ².
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation vector `phi` with `exp_so3(phi) == r`, angle in `[0, π]`.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let skew = vee_unchecked(&(r - r.transpose())) * 0.5;
    if theta < 1e-6 {
        return skew * (1.0 + theta * theta / 6.0);
    }
    if std::f64::consts::PI - theta > 1e-6 {
        return skew * (theta / theta.sin());
    }
    // Near π the skew part vanishes; recover the axis from the symmetric part.
    let b = (r + Matrix3::identity()) * 0.5;
    let mut col = 0;
    for i in 1..3 {
        if b[(i, i)] > b[(col, col)] {
            col = i;
        }
    }
    let mut axis: Vector3<f64> = b.column(col).into();
    axis /= axis.norm();
    // Orient the axis consistently with the (small) skew part.
    if axis.dot(&skew) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Rotation of `angle` radians about the unit vector `axis`.
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    exp_so3(&(axis * angle))
}

/// Frobenius norm of `RᵀR − I`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Body to world.
    pub orientation: Matrix3<f64>,
    /// Body frame.
    pub angular_velocity: Vector3<f64>,
}

impl VehicleState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            orientation: Matrix3::identity(),
            angular_velocity: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|x| x.is_finite())
            && self.velocity.iter().all(|x| x.is_finite())
            && self.orientation.iter().all(|x| x.is_finite())
            && self.angular_velocity.iter().all(|x| x.is_finite())
    }
}

/// Mass properties. Build through [`VehicleParams::new`], which validates the inertia.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    mass: f64,
    inertia: Matrix3<f64>,
    inertia_inv: Matrix3<f64>,
    gravity: f64,
}

impl VehicleParams {
    pub fn new(mass: f64, inertia: Matrix3<f64>, gravity: f64) -> Result<Self> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::Parameter(format!("mass must be positive, got {mass}")));
        }
        if !gravity.is_finite() {
            return Err(Error::Parameter("gravity must be finite".into()));
        }
        if (inertia - inertia.transpose()).amax() > 1e-12 {
            return Err(Error::Parameter("inertia matrix is not symmetric".into()));
        }
        let eig = inertia.symmetric_eigenvalues();
        if eig.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Parameter(format!(
                "inertia matrix is not positive definite (eigenvalues {:?})",
                eig.as_slice()
            )));
        }
        let inertia_inv = inertia
            .try_inverse()
            .ok_or_else(|| Error::Parameter("singular inertia matrix".into()))?;
        Ok(Self {
            mass,
            inertia,
            inertia_inv,
            gravity,
        })
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn inertia(&self) -> &Matrix3<f64> {
        &self.inertia
    }

    pub fn gravity(&self) -> f64 {
        self.gravity
    }

    /// Body force that exactly cancels gravity at orientation `r`.
    pub fn hover_force(&self, r: &Matrix3<f64>) -> Vector3<f64> {
        r.transpose() * Vector3::new(0.0, 0.0, self.mass * self.gravity)
    }
}

/// Linear and angular accelerations `(v̇, ω̇)` under the body wrench `(f_b, tau_b)`.
#[inline]
pub fn accelerations(
    state: &VehicleState,
    f_b: &Vector3<f64>,
    tau_b: &Vector3<f64>,
    params: &VehicleParams,
) -> (Vector3<f64>, Vector3<f64>) {
    let v_dot = Vector3::new(0.0, 0.0, -params.gravity) + state.orientation * f_b / params.mass;
    let w = &state.angular_velocity;
    let w_dot = params.inertia_inv * (-w.cross(&(params.inertia * w)) + tau_b);
    (v_dot, w_dot)
}

/// Advances the state by `dt`.
///
/// Velocities take an explicit Euler step; position uses the average of the old and
/// new velocity, which is exact for constant acceleration. The orientation is moved
/// along the exponential map with the updated rate, `R ← R exp(hat(ω' dt))`, so it
/// never leaves SO(3) beyond rounding.
#[inline]
pub fn integrate(
    state: &VehicleState,
    f_b: &Vector3<f64>,
    tau_b: &Vector3<f64>,
    params: &VehicleParams,
    dt: f64,
) -> VehicleState {
    let (v_dot, w_dot) = accelerations(state, f_b, tau_b, params);
    let velocity = state.velocity + v_dot * dt;
    let angular_velocity = state.angular_velocity + w_dot * dt;
    VehicleState {
        position: state.position + (state.velocity + velocity) * (0.5 * dt),
        velocity,
        orientation: state.orientation * exp_so3(&(angular_velocity * dt)),
        angular_velocity,
    }
}
