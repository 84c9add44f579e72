use nalgebra::{Matrix2, SMatrix, Vector2};
use rayon::prelude::*;

use super::model::{ClosedLoopModel, PredictionState, Tangent, IDX_UACT, TANGENT_DIM};
use super::{OcpConfig, OcpSolution, WeightMatrix};
use crate::allocation::{apply_nullspace, bound_violation, project_to_bounds};
use crate::controller::ReferencePoint;
use crate::error::{Error, Result};
use crate::motors::Regimes;
use crate::{Thrusts, N_ROTORS};

const FD_STEP: f64 = 1e-5;
const LINE_SEARCH_STEPS: i32 = 11;
const ARMIJO: f64 = 1e-4;
const REG_MIN: f64 = 1e-12;
const REG_MAX: f64 = 1e8;
const N_CONSTRAINTS: usize = 2 * N_ROTORS;

type StateMatrix = SMatrix<f64, TANGENT_DIM, TANGENT_DIM>;
type InputMatrix = SMatrix<f64, TANGENT_DIM, 2>;
type Gain = SMatrix<f64, 2, TANGENT_DIM>;

/// Forward simulation of the closed loop under a fixed input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// `h + 1` states, starting with the initial one.
    pub states: Vec<PredictionState>,
    pub u_0: Vec<Thrusts>,
    pub u_cmd: Vec<Thrusts>,
    pub regimes: Vec<Regimes>,
    pub cost: f64,
}

impl Rollout {
    /// Motor outputs produced at step `k`.
    pub fn u_act(&self, k: usize) -> &Thrusts {
        &self.states[k + 1].u_act
    }

    pub fn len(&self) -> usize {
        self.u_cmd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_cmd.is_empty()
    }

    pub fn max_violation(&self, u_max: &Thrusts) -> f64 {
        let zero = Thrusts::zeros();
        self.u_cmd
            .iter()
            .map(|u| bound_violation(u, &zero, u_max))
            .fold(0.0, f64::max)
    }
}

#[inline]
fn stage_cost(prev: &Thrusts, next: &Thrusts, r: &WeightMatrix) -> f64 {
    let d = next - prev;
    d.dot(&(r * d))
}

fn simulate(
    model: &ClosedLoopModel,
    start: &PredictionState,
    x_seq: &[Vector2<f64>],
    refs: &[ReferencePoint],
    r: &WeightMatrix,
    frozen: Option<&[Regimes]>,
) -> Rollout {
    assert!(refs.len() >= x_seq.len(), "need one reference per input");
    let h = x_seq.len();
    let mut out = Rollout {
        states: Vec::with_capacity(h + 1),
        u_0: Vec::with_capacity(h),
        u_cmd: Vec::with_capacity(h),
        regimes: Vec::with_capacity(h),
        cost: 0.0,
    };
    let mut s = *start;
    out.states.push(s);
    for (k, x) in x_seq.iter().enumerate() {
        let cmd = model.command(&s, &refs[k]);
        let u_cmd = apply_nullspace(&cmd.u_0, &model.alloc, x);
        let regimes = match frozen {
            Some(f) => f[k],
            None => model.motors.regimes(&s.u_act, &u_cmd),
        };
        let next = model.advance(&s, cmd.ctrl, &u_cmd, &regimes);
        out.cost += stage_cost(&s.u_act, &next.u_act, r);
        out.u_0.push(cmd.u_0);
        out.u_cmd.push(u_cmd);
        out.regimes.push(regimes);
        out.states.push(next);
        s = next;
    }
    out
}

/// Closed-loop rollout with the smoothness cost `Σ Δu_actᵀ R Δu_act`, where the first
/// difference is taken against `start.u_act`.
pub fn rollout(
    model: &ClosedLoopModel,
    start: &PredictionState,
    x_seq: &[Vector2<f64>],
    refs: &[ReferencePoint],
    r: &WeightMatrix,
) -> Rollout {
    simulate(model, start, x_seq, refs, r, None)
}

/// [`rollout`] with every motor branch fixed to `regimes[k]`.
pub fn rollout_frozen(
    model: &ClosedLoopModel,
    start: &PredictionState,
    x_seq: &[Vector2<f64>],
    refs: &[ReferencePoint],
    r: &WeightMatrix,
    regimes: &[Regimes],
) -> Rollout {
    simulate(model, start, x_seq, refs, r, Some(regimes))
}

/// Bound constraints `c ≤ 0`: upper bounds first, then `−u_cmd ≤ 0`.
pub fn constraint_values(u_cmd: &Thrusts, u_max: &Thrusts) -> [f64; N_CONSTRAINTS] {
    std::array::from_fn(|j| {
        if j < N_ROTORS {
            u_cmd[j] - u_max[j]
        } else {
            -u_cmd[j - N_ROTORS]
        }
    })
}

/// Local model of one step around a rollout, in tangent coordinates of the state.
#[derive(Debug, Clone, PartialEq)]
pub struct StepJacobian {
    /// ∂x_{k+1}/∂x_k
    pub fx: StateMatrix,
    /// ∂x_{k+1}/∂X_k
    pub fu: InputMatrix,
    /// ∂u_cmd,k/∂x_k. The input block is the nullspace basis.
    pub cx: SMatrix<f64, N_ROTORS, TANGENT_DIM>,
}

/// Central finite differences of the step map along the rollout, motor branches frozen
/// to those of the nominal trajectory.
pub fn linearize(
    model: &ClosedLoopModel,
    roll: &Rollout,
    x_seq: &[Vector2<f64>],
    refs: &[ReferencePoint],
) -> Result<Vec<StepJacobian>> {
    linearize_with_step(model, roll, x_seq, refs, FD_STEP)
}

/// [`linearize`] with an explicit difference step.
pub fn linearize_with_step(
    model: &ClosedLoopModel,
    roll: &Rollout,
    x_seq: &[Vector2<f64>],
    refs: &[ReferencePoint],
    step: f64,
) -> Result<Vec<StepJacobian>> {
    (0..roll.len())
        .into_par_iter()
        .map(|k| linearize_step(model, roll, x_seq, refs, k, step))
        .collect()
}

fn linearize_step(
    model: &ClosedLoopModel,
    roll: &Rollout,
    x_seq: &[Vector2<f64>],
    refs: &[ReferencePoint],
    k: usize,
    h: f64,
) -> Result<StepJacobian> {
    let s = &roll.states[k];
    let next = &roll.states[k + 1];
    let regimes = &roll.regimes[k];
    let inv = 0.5 / h;
    let mut fx = StateMatrix::zeros();
    let mut cx = SMatrix::<f64, N_ROTORS, TANGENT_DIM>::zeros();
    for j in 0..TANGENT_DIM {
        let mut dz = Tangent::zeros();
        dz[j] = h;
        let (c_p, n_p) = model.step_frozen(&s.retract(&dz), &refs[k], &x_seq[k], regimes);
        let (c_m, n_m) = model.step_frozen(&s.retract(&-dz), &refs[k], &x_seq[k], regimes);
        fx.set_column(j, &((next.local(&n_p) - next.local(&n_m)) * inv));
        cx.set_column(j, &((c_p - c_m) * inv));
    }
    let mut fu = InputMatrix::zeros();
    for j in 0..2 {
        let mut dx = Vector2::zeros();
        dx[j] = h;
        let (_, n_p) = model.step_frozen(s, &refs[k], &(x_seq[k] + dx), regimes);
        let (_, n_m) = model.step_frozen(s, &refs[k], &(x_seq[k] - dx), regimes);
        fu.set_column(j, &((next.local(&n_p) - next.local(&n_m)) * inv));
    }
    if !(fx.iter().chain(fu.iter()).chain(cx.iter()).all(|v| v.is_finite())) {
        return Err(Error::Numerical {
            step: k,
            what: "non-finite Jacobian entry".into(),
        });
    }
    Ok(StepJacobian { fx, fu, cx })
}

/// Rows of the tangent state holding the motor outputs.
fn uact_selector() -> SMatrix<f64, N_ROTORS, TANGENT_DIM> {
    SMatrix::from_fn(|i, j| if j == IDX_UACT + i { 1.0 } else { 0.0 })
}

/// Jacobians of `Δu_act,k = u_act,k − u_act,k−1` with respect to `(x_k, X_k)`.
fn delta_jacobians(
    jac: &StepJacobian,
    sel: &SMatrix<f64, N_ROTORS, TANGENT_DIM>,
) -> (SMatrix<f64, N_ROTORS, TANGENT_DIM>, SMatrix<f64, N_ROTORS, 2>) {
    (
        jac.fx.fixed_rows::<N_ROTORS>(IDX_UACT) - sel,
        jac.fu.fixed_rows::<N_ROTORS>(IDX_UACT).into_owned(),
    )
}

/// Gradient of the smoothness cost with respect to every input, holding the other
/// inputs fixed, by the adjoint recursion through the linearization.
pub fn cost_gradient(
    roll: &Rollout,
    jacs: &[StepJacobian],
    r: &WeightMatrix,
) -> Vec<Vector2<f64>> {
    let sel = uact_selector();
    let mut adj = Tangent::zeros();
    let mut grad = vec![Vector2::zeros(); roll.len()];
    for k in (0..roll.len()).rev() {
        let (dx, du) = delta_jacobians(&jacs[k], &sel);
        let rd = r * (roll.u_act(k) - roll.states[k].u_act) * 2.0;
        grad[k] = du.transpose() * rd + jacs[k].fu.transpose() * adj;
        adj = dx.transpose() * rd + jacs[k].fx.transpose() * adj;
    }
    grad
}

/// Multipliers and penalty of the augmented Lagrangian.
struct Multipliers {
    lambda: Vec<[f64; N_CONSTRAINTS]>,
    mu: f64,
}

impl Multipliers {
    /// Powell–Hestenes–Rockafellar term for `c ≤ 0`.
    #[inline]
    fn term(c: f64, lambda: f64, mu: f64) -> f64 {
        let t = (lambda + mu * c).max(0.0);
        (t * t - lambda * lambda) / (2.0 * mu)
    }

    fn augmented_cost(&self, roll: &Rollout, u_max: &Thrusts) -> f64 {
        let mut total = roll.cost;
        for (u, lambda) in roll.u_cmd.iter().zip(&self.lambda) {
            let c = constraint_values(u, u_max);
            for j in 0..N_CONSTRAINTS {
                total += Self::term(c[j], lambda[j], self.mu);
            }
        }
        total
    }

    fn update(&mut self, roll: &Rollout, u_max: &Thrusts, scale: f64) {
        for (u, lambda) in roll.u_cmd.iter().zip(self.lambda.iter_mut()) {
            let c = constraint_values(u, u_max);
            for j in 0..N_CONSTRAINTS {
                lambda[j] = (lambda[j] + self.mu * c[j]).max(0.0);
            }
        }
        self.mu *= scale;
    }
}

struct Policy {
    k_ff: Vec<Vector2<f64>>,
    k_fb: Vec<Gain>,
    /// Expected change is `α dv1 + α² dv2`.
    dv1: f64,
    dv2: f64,
}

fn backward_pass(
    model: &ClosedLoopModel,
    roll: &Rollout,
    jacs: &[StepJacobian],
    mult: &Multipliers,
    cfg: &OcpConfig,
    reg: f64,
) -> Option<Policy> {
    let h = roll.len();
    let sel = uact_selector();
    let n_a = &model.alloc.nullspace;
    let r = &cfg.r_delta_u;
    let mut vx = Tangent::zeros();
    let mut vxx = StateMatrix::zeros();
    let mut k_ff = vec![Vector2::zeros(); h];
    let mut k_fb = vec![Gain::zeros(); h];
    let (mut dv1, mut dv2) = (0.0, 0.0);

    for k in (0..h).rev() {
        let jac = &jacs[k];
        let (dx, du) = delta_jacobians(jac, &sel);
        let delta = roll.u_act(k) - roll.states[k].u_act;
        let r_dx = r * dx;
        let r_du = r * du;
        let rd = r * delta;
        let mut lx = dx.transpose() * rd * 2.0;
        let mut lu = du.transpose() * rd * 2.0;
        let mut lxx = dx.transpose() * r_dx * 2.0;
        let mut luu = du.transpose() * r_du * 2.0;
        let mut lux = du.transpose() * r_dx * 2.0;

        let c = constraint_values(&roll.u_cmd[k], &cfg.u_max);
        for j in 0..N_CONSTRAINTS {
            let t = mult.lambda[k][j] + mult.mu * c[j];
            if t <= 0.0 {
                continue;
            }
            let i = j % N_ROTORS;
            let sign = if j < N_ROTORS { 1.0 } else { -1.0 };
            let gx = jac.cx.row(i).transpose() * sign;
            let gu = n_a.row(i).transpose() * sign;
            lx += gx * t;
            lu += gu * t;
            lxx += gx * gx.transpose() * mult.mu;
            luu += gu * gu.transpose() * mult.mu;
            lux += gu * gx.transpose() * mult.mu;
        }

        let vxx_fx = vxx * jac.fx;
        let vxx_fu = vxx * jac.fu;
        let qx = lx + jac.fx.transpose() * vx;
        let qu = lu + jac.fu.transpose() * vx;
        let qxx = lxx + jac.fx.transpose() * vxx_fx;
        let quu = luu + jac.fu.transpose() * vxx_fu;
        let qux = lux + jac.fu.transpose() * vxx_fx;

        let quu_reg = quu + Matrix2::identity() * reg;
        let chol = quu_reg.cholesky()?;
        let kf = -chol.solve(&qu);
        let kb = -chol.solve(&qux);
        if !(kf.iter().chain(kb.iter()).all(|v| v.is_finite())) {
            return None;
        }
        dv1 += kf.dot(&qu);
        dv2 += 0.5 * kf.dot(&(quu * kf));

        vx = qx + kb.transpose() * (quu * kf) + kb.transpose() * qu + qux.transpose() * kf;
        let v = qxx + kb.transpose() * quu * kb + kb.transpose() * qux + qux.transpose() * kb;
        vxx = (v + v.transpose()) * 0.5;
        k_ff[k] = kf;
        k_fb[k] = kb;
    }
    Some(Policy {
        k_ff,
        k_fb,
        dv1,
        dv2,
    })
}

fn forward_pass(
    model: &ClosedLoopModel,
    start: &PredictionState,
    refs: &[ReferencePoint],
    nominal: &Rollout,
    x_nom: &[Vector2<f64>],
    policy: &Policy,
    alpha: f64,
    r: &WeightMatrix,
) -> (Vec<Vector2<f64>>, Rollout) {
    let h = x_nom.len();
    let mut x_new = Vec::with_capacity(h);
    let mut s = *start;
    for k in 0..h {
        let dz = nominal.states[k].local(&s);
        let x = x_nom[k] + policy.k_ff[k] * alpha + policy.k_fb[k] * dz;
        x_new.push(x);
        s = model.step(&s, &refs[k], &x).next;
    }
    let roll = rollout(model, start, &x_new, refs, r);
    (x_new, roll)
}

/// Augmented-Lagrangian iLQR over the nullspace inputs.
///
/// After the outer loop, any input whose command still leaves the bounds is replaced,
/// in sequence along the horizon, by its nearest feasible neighbour; the reported
/// violation always refers to the returned sequence.
pub fn al_ilqr_solve(
    model: &ClosedLoopModel,
    start: &PredictionState,
    refs: &[ReferencePoint],
    x_init: &[Vector2<f64>],
    cfg: &OcpConfig,
) -> Result<OcpSolution> {
    cfg.validate()?;
    if x_init.len() != cfg.h || refs.len() < cfg.h {
        return Err(Error::InvalidArgument(format!(
            "need {} inputs and references, got {} and {}",
            cfg.h,
            x_init.len(),
            refs.len()
        )));
    }
    let r = &cfg.r_delta_u;
    let mut x_seq = x_init.to_vec();
    let mut roll = rollout(model, start, &x_seq, refs, r);
    let mut mult = Multipliers {
        lambda: vec![[0.0; N_CONSTRAINTS]; cfg.h],
        mu: cfg.penalty_init,
    };
    let mut cost_history = Vec::new();
    let mut violation_history = Vec::new();
    let mut inner_total = 0;
    let mut outer_done = 0;
    let mut converged = false;
    let mut reg = 0.0;

    for _ in 0..cfg.max_outer_iters {
        outer_done += 1;
        let mut aug = mult.augmented_cost(&roll, &cfg.u_max);
        let mut history = vec![aug];
        let mut inner_converged = false;

        for _ in 0..cfg.max_inner_iters {
            inner_total += 1;
            let jacs = linearize(model, &roll, &x_seq, refs)?;
            let mut accepted = None;
            loop {
                let Some(policy) = backward_pass(model, &roll, &jacs, &mult, cfg, reg) else {
                    reg = (reg * 10.0).max(REG_MIN);
                    if reg > REG_MAX {
                        let best = finish(
                            model, start, refs, x_seq, roll.max_violation(&cfg.u_max), cfg,
                            outer_done, inner_total, false, cost_history, violation_history,
                        );
                        return Err(Error::SolverFailure {
                            reason: "backward pass not positive definite at maximum regularization"
                                .into(),
                            best: Box::new(best),
                        });
                    }
                    continue;
                };
                if policy.dv1 > -f64::EPSILON * aug.abs().max(f64::MIN_POSITIVE) {
                    // Stationary to rounding: nothing left to gain.
                    break;
                }
                for i in 0..LINE_SEARCH_STEPS {
                    let alpha = 0.5f64.powi(i);
                    let (x_try, roll_try) =
                        forward_pass(model, start, refs, &roll, &x_seq, &policy, alpha, r);
                    let aug_try = mult.augmented_cost(&roll_try, &cfg.u_max);
                    let expected = alpha * policy.dv1 + alpha * alpha * policy.dv2;
                    if aug_try.is_finite() && aug_try <= aug + ARMIJO * expected.min(0.0) {
                        accepted = Some((x_try, roll_try, aug_try));
                        break;
                    }
                }
                if accepted.is_some() {
                    reg = if reg <= REG_MIN { 0.0 } else { reg / 10.0 };
                    break;
                }
                reg = (reg * 10.0).max(REG_MIN);
                if reg > REG_MAX {
                    break;
                }
            }
            let Some((x_new, roll_new, aug_new)) = accepted else {
                inner_converged = true;
                break;
            };
            let decrease = (aug - aug_new) / aug.abs().max(f64::MIN_POSITIVE);
            x_seq = x_new;
            roll = roll_new;
            aug = aug_new;
            history.push(aug);
            if decrease <= cfg.cost_tol {
                inner_converged = true;
                break;
            }
        }
        cost_history.push(history);
        let violation = roll.max_violation(&cfg.u_max);
        violation_history.push(violation);
        if violation <= cfg.constraint_tol && inner_converged {
            converged = true;
            break;
        }
        mult.update(&roll, &cfg.u_max, cfg.penalty_scale);
    }

    Ok(finish(
        model,
        start,
        refs,
        x_seq,
        roll.max_violation(&cfg.u_max),
        cfg,
        outer_done,
        inner_total,
        converged,
        cost_history,
        violation_history,
    ))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    model: &ClosedLoopModel,
    start: &PredictionState,
    refs: &[ReferencePoint],
    mut x_seq: Vec<Vector2<f64>>,
    raw_max_violation: f64,
    cfg: &OcpConfig,
    outer_iterations: usize,
    inner_iterations: usize,
    converged: bool,
    cost_history: Vec<Vec<f64>>,
    violation_history: Vec<f64>,
) -> OcpSolution {
    let zero = Thrusts::zeros();
    let mut projected = false;
    let mut s = *start;
    for (k, x) in x_seq.iter_mut().enumerate() {
        let cmd = model.command(&s, &refs[k]);
        let u_cmd = apply_nullspace(&cmd.u_0, &model.alloc, x);
        if bound_violation(&u_cmd, &zero, &cfg.u_max) > 0.0 {
            *x = match project_to_bounds(&cmd.u_0, &model.alloc, &zero, &cfg.u_max, x) {
                Ok(p) => p,
                Err(Error::Infeasible { best, .. }) => best,
                Err(_) => *x,
            };
            projected = true;
        }
        s = model.step(&s, &refs[k], x).next;
    }
    let roll = rollout(model, start, &x_seq, refs, &cfg.r_delta_u);
    OcpSolution {
        u_act_seq: roll.states[1..].iter().map(|s| s.u_act).collect(),
        max_violation: roll.max_violation(&cfg.u_max),
        cost: roll.cost,
        u_cmd_seq: roll.u_cmd,
        x_seq,
        raw_max_violation,
        outer_iterations,
        inner_iterations,
        converged,
        projected,
        cost_history,
        violation_history,
    }
}
