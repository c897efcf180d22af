//! Force-to-tension command shaping, the admittance law, and velocity
//! pulse generation.

mod tension;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use tension::{
    derive_curve_1d, fit_surface, pava, read_calibration_csv, write_calibration_csv,
    CalibrationSample, TensionCurve1D, TensionModel, TensionSurface2D, TENSION_MODEL_VERSION,
};

/// Virtual mass-damper turning tension error into velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmittanceState {
    /// kg
    pub mass: f64,
    /// N·s/m
    pub damping: f64,
    /// s
    pub period: f64,
    /// m/s; positive releases the tendon.
    pub velocity: f64,
}

impl Default for AdmittanceState {
    fn default() -> Self {
        AdmittanceState {
            mass: 1.0,
            damping: 1.0,
            period: 0.02,
            velocity: 0.0,
        }
    }
}

impl AdmittanceState {
    pub fn new(mass: f64, damping: f64, period: f64) -> Result<Self> {
        if !(mass > 0.0 && damping >= 0.0 && period > 0.0) {
            return Err(Error::Config(format!(
                "admittance needs m > 0, d >= 0, dt > 0 (got {mass}, {damping}, {period})"
            )));
        }
        Ok(AdmittanceState {
            mass,
            damping,
            period,
            velocity: 0.0,
        })
    }
}

/// One step of the discretized mass-damper
/// `v_t = (m v_{t-1} + dt (T - T_cmd)) / (m + d dt)`.
///
/// Tension above the command gives positive (releasing) velocity.
pub fn admittance_step(state: &mut AdmittanceState, measured: f64, command: f64) -> f64 {
    let AdmittanceState {
        mass: m,
        damping: d,
        period: dt,
        velocity: v,
    } = *state;
    state.velocity = (m * v + dt * (measured - command)) / (m + d * dt);
    state.velocity
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConditionerConfig {
    /// N
    pub tension_min: f64,
    pub tension_max: f64,
    /// Largest change of the tension command per iteration, N.
    pub slew: f64,
    /// Force commands strictly below this are zeroed, N.
    pub deadband: f64,
    /// Force corresponding to an estimator output of 1, N.
    pub force_max: f64,
}

impl Default for ConditionerConfig {
    fn default() -> Self {
        ConditionerConfig {
            tension_min: 0.0,
            tension_max: 30.0,
            slew: 2.0,
            deadband: 1.0,
            force_max: 8.0,
        }
    }
}

impl ConditionerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tension_min < self.tension_max && self.slew > 0.0 && self.deadband >= 0.0 && self.force_max > 0.0) {
            return Err(Error::Config("invalid conditioner limits".into()));
        }
        Ok(())
    }

    /// Maps a normalized estimator output onto `[0, force_max]` N.
    pub fn scale_estimate(&self, normalized: f64) -> f64 {
        (normalized * self.force_max).clamp(0.0, self.force_max)
    }
}

/// Zeroes force commands below the deadband; exactly the deadband passes.
pub fn condition_force(force: f64, cfg: &ConditionerConfig) -> f64 {
    if force < cfg.deadband {
        0.0
    } else {
        force
    }
}

/// Clamps to the tension range, then limits the change from `previous`.
pub fn condition_tension(new: f64, previous: f64, cfg: &ConditionerConfig) -> f64 {
    let clamped = new.clamp(cfg.tension_min, cfg.tension_max);
    clamped.clamp(previous - cfg.slew, previous + cfg.slew)
}

/// Pulses for one control period plus the direction line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PdmFrame {
    /// `true` when releasing (positive velocity).
    pub release: bool,
    pub pulses: Vec<bool>,
}

impl PdmFrame {
    pub fn count(&self) -> usize {
        self.pulses.iter().filter(|&&p| p).count()
    }
}

/// Pulse-density encoding of `|velocity| / max_velocity` over `slots`
/// slots: `round(density * slots)` pulses spread by first-order
/// sigma-delta accumulation.
pub fn pdm_generate(velocity: f64, max_velocity: f64, slots: usize) -> Result<PdmFrame> {
    if !(velocity.abs() <= max_velocity) {
        return Err(Error::OverSpeed {
            command: velocity,
            limit: max_velocity,
        });
    }
    let density = if max_velocity > 0.0 { velocity.abs() / max_velocity } else { 0.0 };
    let n = (density * slots as f64).round() as usize;
    let mut acc = 0;
    let pulses = (0..slots)
        .map(|_| {
            acc += n;
            if acc >= slots {
                acc -= slots;
                true
            } else {
                false
            }
        })
        .collect();
    Ok(PdmFrame {
        release: velocity > 0.0,
        pulses,
    })
}
