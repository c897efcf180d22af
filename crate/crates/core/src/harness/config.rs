use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::ConditionerConfig;
use crate::dsp::SignalConfig;
use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, TrainConfig, TreeParams};
use crate::plant::PlantConfig;

/// Virtual muscle of the scripted operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HumanConfig {
    /// Reaction lag towards the target activation, s.
    pub tau: f64,
    /// Stationary standard deviation of activation jitter.
    pub jitter: f64,
    /// Correlation time of the jitter, s.
    pub jitter_tau: f64,
}

impl Default for HumanConfig {
    fn default() -> Self {
        HumanConfig {
            tau: 0.3,
            jitter: 0.01,
            jitter_tau: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    /// Maximum voluntary contraction stage, s.
    pub mvc_duration: f64,
    /// Force pattern length, s.
    pub pattern_duration: f64,
    pub hold: f64,
    /// Rest before the pattern starts, s.
    pub lead_in: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            mvc_duration: 30.0,
            pattern_duration: 250.0,
            hold: 5.0,
            lead_in: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    pub mass: f64,
    pub damping: f64,
    /// Loop period, s.
    pub period: f64,
    /// Actuator mm/s per m/s of admittance velocity.
    pub velocity_gain: f64,
    /// PDM slots per control period.
    pub pdm_slots: usize,
    /// Live input older than this is held and flagged, s.
    pub input_timeout: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            mass: 1.0,
            damping: 1.0,
            period: 0.02,
            velocity_gain: 100.0,
            pdm_slots: 100,
            input_timeout: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    /// Total flexion at sensor contact for each sweep, rad.
    pub contact_angles: Vec<f64>,
    /// Actuator pull speed during a sweep, mm/s.
    pub sweep_speed: f64,
    pub sample_period: f64,
    /// Samples below this fingertip force are off the sensor and dropped, N.
    pub min_force: f64,
    pub degree_force: usize,
    pub degree_position: usize,
    pub grid_step: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            contact_angles: vec![0.45, 0.6, 0.75],
            sweep_speed: 1.0,
            sample_period: 0.1,
            min_force: 0.1,
            degree_force: 3,
            degree_position: 2,
            grid_step: 0.25,
        }
    }
}

/// Everything an experiment needs. Missing fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub subjects: usize,
    /// Subject used for the prosthesis control experiment.
    pub control_subject: u64,
    pub protocol: ProtocolConfig,
    pub offline_signal: SignalConfig,
    pub online_signal: SignalConfig,
    pub estimators: Vec<EstimatorKind>,
    pub control_estimator: EstimatorKind,
    pub random_forest: TreeParams,
    pub gradient_boosting: TreeParams,
    pub train: TrainConfig,
    pub human: HumanConfig,
    pub plant: PlantConfig,
    pub conditioner: ConditionerConfig,
    pub control: ControlConfig,
    pub calibration: CalibrationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            subjects: 10,
            control_subject: 0,
            protocol: ProtocolConfig::default(),
            offline_signal: SignalConfig {
                hop_s: 0.08,
                ..SignalConfig::default()
            },
            online_signal: SignalConfig::online(),
            estimators: EstimatorKind::ALL.to_vec(),
            control_estimator: EstimatorKind::Clstm,
            random_forest: TreeParams::random_forest(),
            gradient_boosting: TreeParams::gradient_boosting(),
            train: TrainConfig::default(),
            human: HumanConfig::default(),
            plant: PlantConfig::default(),
            conditioner: ConditionerConfig::default(),
            control: ControlConfig::default(),
            calibration: CalibrationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.protocol;
        let durations = [p.mvc_duration, p.pattern_duration, p.hold, self.control.period];
        if durations.iter().any(|&d| !(d > 0.0)) || p.lead_in < 0.0 {
            return Err(Error::Config("durations must be positive".into()));
        }
        if p.pattern_duration <= p.hold {
            return Err(Error::Config("pattern must be longer than one hold".into()));
        }
        if self.subjects == 0 {
            return Err(Error::Config("at least one subject is required".into()));
        }
        for s in [&self.offline_signal, &self.online_signal] {
            if !(s.window_s > 0.0 && s.hop_s > 0.0 && s.sample_rate > 0.0) {
                return Err(Error::Config("signal windows must be positive".into()));
            }
        }
        if self.offline_signal.sample_rate != self.online_signal.sample_rate {
            return Err(Error::Config("offline and online signals must share a sample rate".into()));
        }
        let ticks_per_hop = self.online_signal.hop_s / self.control.period;
        if (ticks_per_hop - 1.0).abs() > 1e-9 {
            return Err(Error::Config("online hop must equal the control period".into()));
        }
        let samples = self.online_signal.sample_rate * self.control.period;
        if (samples - samples.round()).abs() > 1e-9 {
            return Err(Error::Config("control period must hold a whole number of EMG samples".into()));
        }
        if !(self.human.tau >= 0.0 && self.human.jitter >= 0.0 && self.human.jitter_tau > 0.0) {
            return Err(Error::Config("invalid human model".into()));
        }
        if !(self.control.velocity_gain > 0.0 && self.control.pdm_slots > 0 && self.control.input_timeout > 0.0) {
            return Err(Error::Config("invalid control settings".into()));
        }
        if self.calibration.contact_angles.is_empty() || !(self.calibration.sweep_speed > 0.0) {
            return Err(Error::Config("calibration needs at least one sweep".into()));
        }
        self.plant.validate()?;
        self.conditioner.validate()
    }

    pub fn tree_params(&self, kind: EstimatorKind) -> TreeParams {
        match kind {
            EstimatorKind::GradientBoosting => self.gradient_boosting,
            _ => self.random_forest,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"seed": 9, "protocol": {"pattern_duration": 20}}"#).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.protocol.pattern_duration, 20.0);
        assert_eq!(cfg.protocol.hold, 5.0);
        assert_eq!(cfg.subjects, 10);
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = ExperimentConfig::default();
        cfg.protocol.mvc_duration = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.online_signal.hop_s = 0.05;
        assert!(cfg.validate().is_err());
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            ExperimentConfig::load(&dir.path().join("missing.json")),
            Err(Error::Config(_))
        ));
    }
}
