//! Closed-loop experiments: configuration, the single-rate simulation loop, metrics,
//! allocator comparison and file outputs.

mod config;
mod metrics;
mod output;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::allocation::{apply_nullspace, bound_violation, mbno_solve};
use crate::cilqr::{window_refs, ClosedLoopModel, PredictionState, RecedingPlanner};
use crate::controller::{reference_at, ControllerState};
use crate::dynamics::{log_so3, VehicleState};
use crate::error::{Error, Result};
use crate::Thrusts;

pub use config::{
    AllocatorKind, BoundSpec, ConfigFile, ExperimentConfig, GainsSection, GeometrySection,
    MatrixSpec, MotorSection, OcpSection, RotorSpec, TrajectorySection, VehicleSection,
    WeightSpec,
};
pub use metrics::{
    mean_rms, orientation_error, rotation_from_euler_yxz, tracking_metrics, MotorDeltaSummary,
    TrackingMetrics,
};
pub use output::{emit_outputs, read_timeseries, write_json, write_timeseries, CSV_COLUMNS};

/// One row of the time-series log: the state at `t` and what was applied from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub position: Vector3<f64>,
    /// Orientation as a rotation vector.
    pub rotation: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub angular_velocity: Vector3<f64>,
    /// `p_ref − p`.
    pub e_p: Vector3<f64>,
    /// Per-axis orientation error, see [`orientation_error`].
    pub e_ori: Vector3<f64>,
    pub u_cmd: Thrusts,
    /// Motor outputs produced by this step.
    pub u_act: Thrusts,
    /// Nullspace input, zero for the pseudoinverse allocator.
    pub x: Vector2<f64>,
    /// Bound violation of `u_cmd`, N.
    pub bound_violation: f64,
    /// Inner iterations of the solve that produced this step's input; zero otherwise.
    pub solver_iterations: f64,
}

/// Diagnostics of one receding-horizon cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub step: usize,
    pub converged: bool,
    pub fallback: bool,
    pub projected: bool,
    pub monotone: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub cost: f64,
    pub max_violation: f64,
    pub raw_max_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub cycles: usize,
    pub converged_cycles: usize,
    pub fallback_cycles: usize,
    pub projected_cycles: usize,
    /// Over all applied solutions, N.
    pub max_violation: f64,
    pub max_raw_violation: f64,
    pub all_monotone: bool,
    pub total_inner_iterations: usize,
    pub max_inner_iterations: usize,
}

impl SolverStats {
    fn from_cycles(cycles: &[CycleRecord]) -> Self {
        let solved = || cycles.iter().filter(|c| !c.fallback);
        Self {
            cycles: cycles.len(),
            converged_cycles: cycles.iter().filter(|c| c.converged).count(),
            fallback_cycles: cycles.iter().filter(|c| c.fallback).count(),
            projected_cycles: cycles.iter().filter(|c| c.projected).count(),
            max_violation: solved().map(|c| c.max_violation).fold(0.0, f64::max),
            max_raw_violation: solved().map(|c| c.raw_max_violation).fold(0.0, f64::max),
            all_monotone: cycles.iter().all(|c| c.monotone),
            total_inner_iterations: cycles.iter().map(|c| c.inner_iterations).sum(),
            max_inner_iterations: cycles.iter().map(|c| c.inner_iterations).max().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    #[serde(flatten)]
    pub tracking: TrackingMetrics,
    /// Largest `‖A u_cmd − A u_0‖∞` over the run.
    pub max_wrench_shift: f64,
    /// Largest bound violation of an applied command, N.
    pub max_bound_violation: f64,
    /// Steps where MBNO was infeasible and the command was clamped.
    pub clamped_steps: usize,
    pub solver: Option<SolverStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub allocator: AllocatorKind,
    pub metrics: RunMetrics,
    pub log: Vec<StepRecord>,
    pub cycles: Vec<CycleRecord>,
}

/// Where the nullspace input of a step comes from.
enum Source {
    Zero,
    Mbno,
    Plan(Vec<Vector2<f64>>, usize, f64),
}

/// Result of the MBNO allocation for one step, clamping on infeasibility.
fn mbno_command(model: &ClosedLoopModel, u_0: &Thrusts, u_max: &Thrusts) -> (Vector2<f64>, Thrusts, bool) {
    let zero = Thrusts::zeros();
    match mbno_solve(u_0, &model.alloc, &zero, u_max) {
        Ok(x) => (x, apply_nullspace(u_0, &model.alloc, &x), false),
        Err(Error::Infeasible { best, .. }) => {
            let u = apply_nullspace(u_0, &model.alloc, &best);
            (best, u.zip_zip_map(&zero, u_max, |v, lo, hi| v.clamp(lo, hi)), true)
        }
        Err(_) => unreachable!("bounds are ordered"),
    }
}

/// Initial closed-loop state: at rest on the reference with the motors already at the
/// MBNO command for the first step.
pub fn initial_state(cfg: &ExperimentConfig, model: &ClosedLoopModel) -> PredictionState {
    let r0 = reference_at(&cfg.trajectory, 0.0);
    let mut vehicle = VehicleState::at_rest(r0.position);
    vehicle.orientation = r0.orientation;
    let mut s = PredictionState {
        vehicle,
        u_act: Thrusts::zeros(),
        ctrl: ControllerState::default(),
    };
    let cmd = model.command(&s, &r0);
    s.u_act = mbno_command(model, &cmd.u_0, &cfg.u_max()).1;
    s
}

/// Runs the configured closed loop for `duration / dt` steps.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let model = cfg.model()?;
    let u_max = cfg.u_max();
    let zero = Thrusts::zeros();
    let n = cfg.steps();
    let h = cfg.ocp.h;
    let h_c = cfg.ocp.h_c;
    let mut planner = match cfg.allocator {
        AllocatorKind::RecedingHorizon => Some(RecedingPlanner::new(cfg.ocp.clone())?),
        _ => None,
    };

    let mut s = initial_state(cfg, &model);
    let mut log = Vec::with_capacity(n);
    let mut cycles = Vec::new();
    let mut source = match cfg.allocator {
        AllocatorKind::PseudoinverseOnly => Source::Zero,
        _ => Source::Mbno,
    };
    let mut fallback_left = 0usize;
    let mut max_wrench_shift = 0.0f64;
    let mut max_bound_violation = 0.0f64;
    let mut clamped_steps = 0usize;

    for k in 0..n {
        if let Some(planner) = planner.as_mut() {
            let exhausted = match &source {
                Source::Plan(xs, i, _) => *i >= xs.len(),
                _ => fallback_left == 0,
            };
            if exhausted {
                source = plan_cycle(cfg, &model, planner, &s, k, h, &mut cycles)?;
                if matches!(source, Source::Mbno) {
                    fallback_left = h_c;
                    let used = cycles.iter().filter(|c: &&CycleRecord| c.fallback).count();
                    if used > cfg.fallback_budget {
                        return Err(Error::FallbackBudget {
                            step: k,
                            used,
                            budget: cfg.fallback_budget,
                        });
                    }
                }
            }
        }

        let t = k as f64 * cfg.dt;
        let reference = reference_at(&cfg.trajectory, t);
        let cmd = model.command(&s, &reference);
        let (x, u_cmd, iterations) = match &mut source {
            Source::Zero => (Vector2::zeros(), cmd.u_0, 0.0),
            Source::Mbno => {
                let (x, u, clamped) = mbno_command(&model, &cmd.u_0, &u_max);
                if clamped {
                    clamped_steps += 1;
                    log::warn!("step {k}: motor bounds infeasible, command clamped");
                }
                fallback_left = fallback_left.saturating_sub(1);
                (x, u, 0.0)
            }
            Source::Plan(xs, i, iters) => {
                let x = xs[*i];
                *i += 1;
                (x, apply_nullspace(&cmd.u_0, &model.alloc, &x), *iters)
            }
        };
        let regimes = model.motors.regimes(&s.u_act, &u_cmd);
        let next = model.advance(&s, cmd.ctrl, &u_cmd, &regimes);
        if !next.is_finite() {
            return Err(Error::Numerical {
                step: k,
                what: "non-finite closed-loop state".into(),
            });
        }

        let violation = bound_violation(&u_cmd, &zero, &u_max);
        let shift = (model.alloc.wrench(&u_cmd) - model.alloc.wrench(&cmd.u_0)).amax();
        max_wrench_shift = max_wrench_shift.max(shift);
        max_bound_violation = max_bound_violation.max(violation);
        let (e_ori, _) = orientation_error(&reference.orientation, &s.vehicle.orientation);
        log.push(StepRecord {
            t,
            position: s.vehicle.position,
            rotation: log_so3(&s.vehicle.orientation),
            velocity: s.vehicle.velocity,
            angular_velocity: s.vehicle.angular_velocity,
            e_p: reference.position - s.vehicle.position,
            e_ori,
            u_cmd,
            u_act: next.u_act,
            x,
            bound_violation: violation,
            solver_iterations: iterations,
        });
        s = next;
    }

    let metrics = RunMetrics {
        tracking: tracking_metrics(&log, &cfg.trajectory),
        max_wrench_shift,
        max_bound_violation,
        clamped_steps,
        solver: planner.as_ref().map(|_| SolverStats::from_cycles(&cycles)),
    };
    Ok(RunOutput {
        allocator: cfg.allocator,
        metrics,
        log,
        cycles,
    })
}

/// Plans one cycle from the current state; falls back to MBNO when the solver fails
/// or cannot return a sequence inside the motor bounds.
fn plan_cycle(
    cfg: &ExperimentConfig,
    model: &ClosedLoopModel,
    planner: &mut RecedingPlanner,
    s: &PredictionState,
    k: usize,
    h: usize,
    cycles: &mut Vec<CycleRecord>,
) -> Result<Source> {
    let refs = window_refs(&cfg.trajectory, k, h, cfg.dt);
    let previous = planner.previous();
    match planner.receding_step(model, s, &refs) {
        Ok((xs, sol)) => {
            let fallback = sol.max_violation > cfg.ocp.constraint_tol;
            log::debug!(
                "step {k}: cost {:.3e}, violation {:.2e}, {} outer / {} inner, converged {}",
                sol.cost,
                sol.max_violation,
                sol.outer_iterations,
                sol.inner_iterations,
                sol.converged
            );
            cycles.push(CycleRecord {
                step: k,
                converged: sol.converged,
                fallback,
                projected: sol.projected,
                monotone: sol.monotone(),
                outer_iterations: sol.outer_iterations,
                inner_iterations: sol.inner_iterations,
                cost: sol.cost,
                max_violation: sol.max_violation,
                raw_max_violation: sol.raw_max_violation,
            });
            if fallback {
                log::warn!("step {k}: solver left bounds violated, using MBNO for this cycle");
                planner.set_previous(previous);
                Ok(Source::Mbno)
            } else {
                Ok(Source::Plan(xs, 0, sol.inner_iterations as f64))
            }
        }
        Err(Error::SolverFailure { reason, best }) => {
            log::warn!("step {k}: solver failure ({reason}), using MBNO for this cycle");
            cycles.push(CycleRecord {
                step: k,
                converged: false,
                fallback: true,
                projected: best.projected,
                monotone: best.monotone(),
                outer_iterations: best.outer_iterations,
                inner_iterations: best.inner_iterations,
                cost: best.cost,
                max_violation: best.max_violation,
                raw_max_violation: best.raw_max_violation,
            });
            planner.set_previous(previous);
            Ok(Source::Mbno)
        }
        Err(e) => Err(e),
    }
}

/// One line of the side-by-side comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub name: String,
    pub base: f64,
    pub variant: f64,
    /// `100 (base − variant) / base`; positive when the variant is lower.
    pub reduction_pct: f64,
}

/// External tracking errors for the same maneuver, for orientation only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalReference {
    pub name: String,
    pub mbno: f64,
    pub receding_horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub base_allocator: AllocatorKind,
    pub variant_allocator: AllocatorKind,
    pub base: RunMetrics,
    pub variant: RunMetrics,
    pub deltas: Vec<MetricDelta>,
    /// Non-binding: the reference vehicle, gains and weights differ from this setup.
    pub external_reference: Vec<ExternalReference>,
}

impl ComparisonReport {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<24} {:>16} {:>16} {:>10}\n",
            "metric",
            self.base_allocator.as_str(),
            self.variant_allocator.as_str(),
            "reduction"
        );
        for d in &self.deltas {
            out += &format!(
                "{:<24} {:>16.6e} {:>16.6e} {:>9.1}%\n",
                d.name, d.base, d.variant, d.reduction_pct
            );
        }
        out += "\nexternal reference values (different vehicle, non-binding):\n";
        for r in &self.external_reference {
            out += &format!(
                "{:<24} {:>16.4} {:>16.4}\n",
                r.name, r.mbno, r.receding_horizon
            );
        }
        out
    }
}

fn external_reference() -> Vec<ExternalReference> {
    [
        ("mean_pos_err", 0.0095, 0.0038),
        ("rms_pos_err", 0.0146, 0.0046),
        ("mean_ori_err", 0.1070, 0.1027),
        ("rms_ori_err", 0.5700, 0.5575),
    ]
    .into_iter()
    .map(|(name, mbno, receding_horizon)| ExternalReference {
        name: name.into(),
        mbno,
        receding_horizon,
    })
    .collect()
}

fn deltas(base: &RunMetrics, variant: &RunMetrics) -> Vec<MetricDelta> {
    let pick = |m: &RunMetrics| {
        let t = &m.tracking;
        [
            ("mean_pos_err", t.mean_pos_err),
            ("rms_pos_err", t.rms_pos_err),
            ("mean_ori_err", t.mean_ori_err),
            ("rms_ori_err", t.rms_ori_err),
            ("mean_ori_err_prewrap", t.mean_ori_err_prewrap),
            ("rms_ori_err_prewrap", t.rms_ori_err_prewrap),
            ("mean_ori_geodesic", t.mean_ori_geodesic),
            ("rms_ori_geodesic", t.rms_ori_geodesic),
            ("total_delta_u", t.total_delta_u),
            ("min_motor_thrust", t.min_motor_thrust),
        ]
    };
    pick(base)
        .into_iter()
        .zip(pick(variant))
        .map(|((name, b), (_, v))| MetricDelta {
            name: name.into(),
            base: b,
            variant: v,
            reduction_pct: if b != 0.0 { 100.0 * (b - v) / b } else { 0.0 },
        })
        .collect()
}

/// Runs both configurations, which must agree in everything but the allocator and
/// output directory, and reports them side by side.
pub fn compare(
    base: &ExperimentConfig,
    variant: &ExperimentConfig,
) -> Result<(ComparisonReport, RunOutput, RunOutput)> {
    let mut aligned = variant.clone();
    aligned.allocator = base.allocator;
    aligned.output_dir = base.output_dir.clone();
    if &aligned != base {
        return Err(Error::InvalidArgument(
            "compared configurations may differ only in the allocator".into(),
        ));
    }
    let (a, b) = rayon::join(|| run_experiment(base), || run_experiment(variant));
    let (a, b) = (a?, b?);
    let report = ComparisonReport {
        base_allocator: base.allocator,
        variant_allocator: variant.allocator,
        deltas: deltas(&a.metrics, &b.metrics),
        base: a.metrics.clone(),
        variant: b.metrics.clone(),
        external_reference: external_reference(),
    };
    Ok((report, a, b))
}
