//! Receding-horizon optimal control over the nullspace inputs.
//!
//! Each cycle solves
//!
//! ```text
//! min_X  Σ_k (u_act,k − u_act,k−1)ᵀ R_Δu (u_act,k − u_act,k−1)
//! s.t.   u_cmd,k = u_0,k + n_A X_k,   0 ≤ u_cmd,k ≤ u_max,
//!        u_act,k = motor(u_act,k−1, u_cmd,k),   x_k+1 = f(x_k, u_act,k)
//! ```
//!
//! over `h` steps of the closed loop (controller included, so `u_0,k` depends on the
//! predicted state) with an augmented-Lagrangian iLQR, then applies the first `h_c`
//! inputs.

mod model;
mod solver;

use nalgebra::{SMatrix, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::controller::{reference_at, ReferencePoint, TrajectorySpec};
use crate::error::{Error, Result};
use crate::{Thrusts, N_ROTORS};

pub use model::{
    ClosedLoopModel, Command, PredictionState, StepOutput, Tangent, IDX_INT, IDX_OMEGA, IDX_POS,
    IDX_ROT, IDX_UACT, IDX_VEL, TANGENT_DIM,
};
pub use solver::{
    al_ilqr_solve, constraint_values, cost_gradient, linearize, linearize_with_step, rollout,
    rollout_frozen, Rollout,
    StepJacobian,
};

pub type WeightMatrix = SMatrix<f64, N_ROTORS, N_ROTORS>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpConfig {
    /// Prediction horizon, steps.
    pub h: usize,
    /// Steps applied before re-planning.
    pub h_c: usize,
    pub r_delta_u: WeightMatrix,
    /// N
    pub u_max: Thrusts,
    /// s
    pub dt: f64,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    pub penalty_init: f64,
    pub penalty_scale: f64,
    /// N
    pub constraint_tol: f64,
    /// Relative.
    pub cost_tol: f64,
    pub warm_start_sigma: f64,
    pub rng_seed: u64,
}

impl OcpConfig {
    /// Identity weight, 5 × 50 iterations, penalty 10 scaled by 10 per outer iteration.
    pub fn with_defaults(h: usize, h_c: usize, u_max: Thrusts, dt: f64) -> Self {
        Self {
            h,
            h_c,
            r_delta_u: WeightMatrix::identity(),
            u_max,
            dt,
            max_outer_iters: 5,
            max_inner_iters: 50,
            penalty_init: 10.0,
            penalty_scale: 10.0,
            constraint_tol: 1e-6,
            cost_tol: 1e-8,
            warm_start_sigma: 1e-3,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h_c > 0 && self.h_c <= self.h) {
            return Err(Error::Parameter(format!(
                "need 0 < h_c <= h, got h = {}, h_c = {}",
                self.h, self.h_c
            )));
        }
        let sym = (self.r_delta_u - self.r_delta_u.transpose()).amax() <= 1e-12;
        if !sym || self.r_delta_u.cholesky().is_none() {
            return Err(Error::Parameter("r_delta_u must be symmetric positive definite".into()));
        }
        if !self.u_max.iter().all(|&u| u > 0.0 && u.is_finite()) {
            return Err(Error::Parameter("u_max must be positive".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Parameter("dt must be positive".into()));
        }
        if self.max_outer_iters == 0 || self.max_inner_iters == 0 {
            return Err(Error::Parameter("iteration limits must be positive".into()));
        }
        if !(self.penalty_init > 0.0 && self.penalty_scale > 1.0) {
            return Err(Error::Parameter(
                "need penalty_init > 0 and penalty_scale > 1".into(),
            ));
        }
        if !(self.constraint_tol > 0.0 && self.cost_tol > 0.0) {
            return Err(Error::Parameter("tolerances must be positive".into()));
        }
        if !(self.warm_start_sigma >= 0.0 && self.warm_start_sigma.is_finite()) {
            return Err(Error::Parameter("warm_start_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpSolution {
    pub x_seq: Vec<Vector2<f64>>,
    pub u_cmd_seq: Vec<Thrusts>,
    pub u_act_seq: Vec<Thrusts>,
    /// Smoothness cost of the returned sequence.
    pub cost: f64,
    /// Largest bound violation of `u_cmd_seq`, N.
    pub max_violation: f64,
    /// Violation of the augmented-Lagrangian iterate before the final projection.
    pub raw_max_violation: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
    /// Whether any input had to be projected onto the bounds after the solve.
    pub projected: bool,
    /// Augmented cost of every accepted iterate, grouped by outer iteration and
    /// starting with the value at entry.
    pub cost_history: Vec<Vec<f64>>,
    /// Violation after each outer iteration.
    pub violation_history: Vec<f64>,
}

impl OcpSolution {
    /// True when the augmented cost never increased inside an outer iteration.
    pub fn monotone(&self) -> bool {
        self.cost_history
            .iter()
            .all(|c| c.windows(2).all(|w| w[1] <= w[0]))
    }
}

/// `ceil(multiplier · max(τ↑, τ↓) / dt)`.
pub fn horizon_from_constants(tau_rise: f64, tau_fall: f64, dt: f64, multiplier: f64) -> usize {
    let steps = multiplier * tau_rise.max(tau_fall) / dt;
    // Guard against 300.00000000000006 style rounding pushing the ceiling up a step.
    let rounded = steps.round();
    if (steps - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        rounded as usize
    } else {
        steps.ceil() as usize
    }
}

/// References for steps `k0 .. k0 + h` of the global clock.
pub fn window_refs(spec: &TrajectorySpec, k0: usize, h: usize, dt: f64) -> Vec<ReferencePoint> {
    (k0..k0 + h).map(|k| reference_at(spec, k as f64 * dt)).collect()
}

/// Warm-started re-planning across cycles.
#[derive(Debug, Clone)]
pub struct RecedingPlanner {
    cfg: OcpConfig,
    rng: ChaCha8Rng,
    previous: Vector2<f64>,
}

impl RecedingPlanner {
    pub fn new(cfg: OcpConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            cfg,
            previous: Vector2::zeros(),
        })
    }

    pub fn config(&self) -> &OcpConfig {
        &self.cfg
    }

    /// Input carried into the next warm start.
    pub fn previous(&self) -> Vector2<f64> {
        self.previous
    }

    pub fn set_previous(&mut self, x: Vector2<f64>) {
        self.previous = x;
    }

    /// The previous carry-over input replicated over the horizon plus seeded noise.
    pub fn warm_start(&mut self) -> Vec<Vector2<f64>> {
        let sigma = self.cfg.warm_start_sigma;
        let mut seq = vec![self.previous; self.cfg.h];
        if sigma > 0.0 {
            let noise = Normal::new(0.0, sigma).expect("sigma validated");
            for x in &mut seq {
                x.x += noise.sample(&mut self.rng);
                x.y += noise.sample(&mut self.rng);
            }
        }
        seq
    }

    /// One cycle: returns the `h_c` inputs to apply and the full solution. The input at
    /// index `h_c` is kept for the next warm start.
    pub fn receding_step(
        &mut self,
        model: &ClosedLoopModel,
        start: &PredictionState,
        refs: &[ReferencePoint],
    ) -> Result<(Vec<Vector2<f64>>, OcpSolution)> {
        let init = self.warm_start();
        let sol = al_ilqr_solve(model, start, refs, &init, &self.cfg)?;
        let h_c = self.cfg.h_c;
        self.previous = sol.x_seq[h_c.min(sol.x_seq.len() - 1)];
        Ok((sol.x_seq[..h_c].to_vec(), sol))
    }
}
