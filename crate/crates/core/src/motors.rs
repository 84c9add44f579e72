//! Asymmetric first-order motor lag.
//!
//! Each motor tracks its command with time constant `tau_rise` while the error
//! `e = u_cmd − u_act_prev` is non-negative and `tau_fall` otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Thrusts, N_ROTORS};

/// Rise and fall time constants, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorParams {
    pub tau_rise: f64,
    pub tau_fall: f64,
}

impl Default for MotorParams {
    fn default() -> Self {
        Self {
            tau_rise: 0.15,
            tau_fall: 0.021,
        }
    }
}

impl MotorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_rise > 0.0 && self.tau_fall > 0.0) {
            return Err(Error::MotorConfig(format!(
                "time constants must be positive (rise {}, fall {})",
                self.tau_rise, self.tau_fall
            )));
        }
        Ok(())
    }

    pub fn tau_min(&self) -> f64 {
        self.tau_rise.min(self.tau_fall)
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_rise.max(self.tau_fall)
    }

    #[inline]
    pub fn tau(&self, regime: Regime) -> f64 {
        match regime {
            Regime::Rise => self.tau_rise,
            Regime::Fall => self.tau_fall,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    Rise,
    Fall,
}

impl Regime {
    /// Ties go to the rise branch.
    #[inline]
    pub fn of_error(e: f64) -> Self {
        if e >= 0.0 {
            Regime::Rise
        } else {
            Regime::Fall
        }
    }
}

pub type Regimes = [Regime; N_ROTORS];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    /// `u ← u + (dt/τ) e`.
    #[default]
    ForwardEuler,
    /// `u ← u + (1 − exp(−dt/τ)) e`, exact for a held command.
    Exact,
}

/// Validated per-motor parameters at a fixed step size.
#[derive(Debug, Clone, PartialEq)]
pub struct MotorModel {
    params: [MotorParams; N_ROTORS],
    dt: f64,
    discretization: Discretization,
    gain_rise: [f64; N_ROTORS],
    gain_fall: [f64; N_ROTORS],
}

impl MotorModel {
    pub fn uniform(params: MotorParams, dt: f64, discretization: Discretization) -> Result<Self> {
        Self::new([params; N_ROTORS], dt, discretization)
    }

    /// Fails when `dt` exceeds a time constant, since the update could then overshoot.
    pub fn new(
        params: [MotorParams; N_ROTORS],
        dt: f64,
        discretization: Discretization,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::MotorConfig(format!("dt must be positive, got {dt}")));
        }
        let mut gain_rise = [0.0; N_ROTORS];
        let mut gain_fall = [0.0; N_ROTORS];
        for (i, p) in params.iter().enumerate() {
            p.validate()?;
            if dt > p.tau_min() {
                return Err(Error::MotorConfig(format!(
                    "motor {i}: dt = {dt} s exceeds min time constant {} s",
                    p.tau_min()
                )));
            }
            let gain = |tau: f64| match discretization {
                Discretization::ForwardEuler => dt / tau,
                Discretization::Exact => -(-dt / tau).exp_m1(),
            };
            gain_rise[i] = gain(p.tau_rise);
            gain_fall[i] = gain(p.tau_fall);
        }
        Ok(Self {
            params,
            dt,
            discretization,
            gain_rise,
            gain_fall,
        })
    }

    pub fn params(&self) -> &[MotorParams; N_ROTORS] {
        &self.params
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn discretization(&self) -> Discretization {
        self.discretization
    }

    /// Largest time constant over all motors.
    pub fn tau_max(&self) -> f64 {
        self.params.iter().map(MotorParams::tau_max).fold(0.0, f64::max)
    }

    /// Fraction of the error closed in one step for motor `i` in `regime`.
    #[inline]
    pub fn gain(&self, i: usize, regime: Regime) -> f64 {
        match regime {
            Regime::Rise => self.gain_rise[i],
            Regime::Fall => self.gain_fall[i],
        }
    }

    #[inline]
    pub fn regimes(&self, u_act_prev: &Thrusts, u_cmd: &Thrusts) -> Regimes {
        std::array::from_fn(|i| Regime::of_error(u_cmd[i] - u_act_prev[i]))
    }

    #[inline]
    pub fn step(&self, u_act_prev: &Thrusts, u_cmd: &Thrusts) -> Thrusts {
        let regimes = self.regimes(u_act_prev, u_cmd);
        self.step_with(u_act_prev, u_cmd, &regimes)
    }

    /// Step with the rise/fall branch of every motor forced to `regimes`.
    #[inline]
    pub fn step_with(&self, u_act_prev: &Thrusts, u_cmd: &Thrusts, regimes: &Regimes) -> Thrusts {
        Thrusts::from_fn(|i, _| {
            let e = u_cmd[i] - u_act_prev[i];
            u_act_prev[i] + self.gain(i, regimes[i]) * e
        })
    }
}

/// One forward-Euler motor update shared by all eight motors.
pub fn motor_step(
    u_act_prev: &Thrusts,
    u_cmd: &Thrusts,
    dt: f64,
    params: &MotorParams,
) -> Result<Thrusts> {
    let model = MotorModel::uniform(*params, dt, Discretization::ForwardEuler)?;
    Ok(model.step(u_act_prev, u_cmd))
}

/// Actual motor outputs owned by the simulation loop.
#[derive(Debug, Clone, PartialEq)]
pub struct MotorBank {
    pub u_act: Thrusts,
    pub model: MotorModel,
}

impl MotorBank {
    pub fn new(model: MotorModel, u_act: Thrusts) -> Self {
        Self { u_act, model }
    }

    pub fn step(&mut self, u_cmd: &Thrusts) -> Thrusts {
        self.u_act = self.model.step(&self.u_act, u_cmd);
        self.u_act
    }
}
