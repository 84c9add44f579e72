//! Tracking and actuation statistics over a logged run.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::controller::TrajectorySpec;
use crate::dynamics::axis_angle;
use crate::{Thrusts, N_ROTORS};

use super::StepRecord;

/// Relative-rotation angles `(α, β, γ)` with `R_rᵀ R = R_y(β) R_x(α) R_z(γ)`.
///
/// `β` is the outermost angle and spans `(−π, π]`, so a relative rotation about the
/// y axis that passes π jumps to the other end of the range; `α ∈ [−π/2, π/2]`.
pub fn orientation_error(r_ref: &Matrix3<f64>, r_hat: &Matrix3<f64>) -> (Vector3<f64>, f64) {
    let m = r_ref.transpose() * r_hat;
    (euler_yxz(&m), geodesic_angle(&m))
}

fn euler_yxz(m: &Matrix3<f64>) -> Vector3<f64> {
    let s = (-m[(1, 2)]).clamp(-1.0, 1.0);
    let alpha = s.asin();
    let (beta, gamma) = if s.abs() < 1.0 - 1e-12 {
        (
            m[(0, 2)].atan2(m[(2, 2)]),
            m[(1, 0)].atan2(m[(1, 1)]),
        )
    } else {
        // Gimbal lock: only β ± γ is defined; put it all in β.
        ((-m[(2, 0)]).atan2(m[(0, 0)]), 0.0)
    };
    Vector3::new(alpha, wrap(beta), wrap(gamma))
}

/// Maps to `(−π, π]`.
fn wrap(a: f64) -> f64 {
    use std::f64::consts::PI;
    if a <= -PI {
        a + 2.0 * PI
    } else if a > PI {
        a - 2.0 * PI
    } else {
        a
    }
}

/// Rotation angle of `m`, accurate for small angles.
fn geodesic_angle(m: &Matrix3<f64>) -> f64 {
    let skew = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    let sin2 = skew.norm();
    let cos2 = m.trace() - 1.0;
    sin2.atan2(cos2)
}

/// Rotation with the given [`orientation_error`] angles.
pub fn rotation_from_euler_yxz(angles: &Vector3<f64>) -> Matrix3<f64> {
    axis_angle(&Vector3::y(), angles.y)
        * axis_angle(&Vector3::x(), angles.x)
        * axis_angle(&Vector3::z(), angles.z)
}

/// Mean `(1/N) Σ e` and root mean square `sqrt((1/N) Σ e²)` of non-negative samples.
pub fn mean_rms(samples: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
    for e in samples {
        n += 1;
        sum += e;
        sq += e * e;
    }
    if n == 0 {
        return (0.0, 0.0);
    }
    (sum / n as f64, (sq / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorDeltaSummary {
    /// Σ_k |Δu_act|, N.
    pub total: f64,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

/// Statistics derivable from the logged time series alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingMetrics {
    pub steps: usize,
    pub mean_pos_err: f64,
    pub rms_pos_err: f64,
    /// Norm of the per-axis angles.
    pub mean_ori_err: f64,
    pub rms_ori_err: f64,
    /// Restricted to steps before the reference rotation reaches π.
    pub mean_ori_err_prewrap: f64,
    pub rms_ori_err_prewrap: f64,
    pub mean_ori_geodesic: f64,
    pub rms_ori_geodesic: f64,
    /// Σ_k Σ_i |u_act,i,k − u_act,i,k−1| over consecutive logged steps, N.
    pub total_delta_u: f64,
    pub min_motor_thrust: f64,
    pub max_motor_thrust: f64,
    pub per_motor_delta_u: Vec<MotorDeltaSummary>,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

pub fn tracking_metrics(log: &[StepRecord], trajectory: &TrajectorySpec) -> TrackingMetrics {
    let (mean_pos_err, rms_pos_err) = mean_rms(log.iter().map(|r| r.e_p.norm()));
    let (mean_ori_err, rms_ori_err) = mean_rms(log.iter().map(|r| r.e_ori.norm()));
    let prewrap = log
        .iter()
        .filter(|r| trajectory.angle_at(r.t).abs() < std::f64::consts::PI)
        .map(|r| r.e_ori.norm());
    let (mean_ori_err_prewrap, rms_ori_err_prewrap) = mean_rms(prewrap);
    let (mean_ori_geodesic, rms_ori_geodesic) = mean_rms(
        log.iter()
            .map(|r| geodesic_angle(&rotation_from_euler_yxz(&r.e_ori))),
    );

    let mut per_motor: Vec<Vec<f64>> = vec![Vec::with_capacity(log.len()); N_ROTORS];
    for w in log.windows(2) {
        let d: Thrusts = w[1].u_act - w[0].u_act;
        for (i, series) in per_motor.iter_mut().enumerate() {
            series.push(d[i].abs());
        }
    }
    let per_motor_delta_u: Vec<MotorDeltaSummary> = per_motor
        .into_iter()
        .map(|series| {
            let total: f64 = series.iter().sum();
            let mut sorted = series.clone();
            sorted.sort_by(f64::total_cmp);
            MotorDeltaSummary {
                total,
                mean: if series.is_empty() { 0.0 } else { total / series.len() as f64 },
                p50: percentile(&sorted, 0.5),
                p95: percentile(&sorted, 0.95),
                max: sorted.last().copied().unwrap_or(0.0),
            }
        })
        .collect();
    let total_delta_u = per_motor_delta_u.iter().map(|m| m.total).sum();
    let min_motor_thrust = log.iter().map(|r| r.u_act.min()).fold(f64::INFINITY, f64::min);
    let max_motor_thrust = log.iter().map(|r| r.u_act.max()).fold(f64::NEG_INFINITY, f64::max);

    TrackingMetrics {
        steps: log.len(),
        mean_pos_err,
        rms_pos_err,
        mean_ori_err,
        rms_ori_err,
        mean_ori_err_prewrap,
        rms_ori_err_prewrap,
        mean_ori_geodesic,
        rms_ori_geodesic,
        total_delta_u,
        min_motor_thrust: if log.is_empty() { 0.0 } else { min_motor_thrust },
        max_motor_thrust: if log.is_empty() { 0.0 } else { max_motor_thrust },
        per_motor_delta_u,
    }
}
