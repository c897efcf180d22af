//! The 50 Hz prosthesis control loop and the closed-loop experiment.
//!
//! Each tick takes one activation value, generates a control period of EMG,
//! estimates fingertip force, conditions it, converts it to a tension
//! command and drives the tendon actuator through the admittance law.

use crate::controller::{
    admittance_step, condition_force, condition_tension, pdm_generate, AdmittanceState, ConditionerConfig,
    TensionCurve1D, TensionModel,
};
use crate::dsp::{normalize, EmgProcessor, NormalizationScale, SignalConfig};
use crate::error::{Error, Result};
use crate::estimators::{FeatureVector, Model, ModelFile};
use crate::harness::calibration::run_tension_calibration;
use crate::harness::config::ExperimentConfig;
use crate::harness::estimation::fit_estimator;
use crate::harness::metrics::{compute_metrics, MetricsReport, TrialRecord, TrialRow};
use crate::harness::session::{derive_seed, stream, subject_data, subject_for, ScriptedHuman};
use crate::plant::{
    pattern_generate, plant_step, Actuator, EmgGenerator, FingerPlant, ForcePattern, PlantConfig, PlantSample,
    SyntheticSubject,
};

/// Admittance, velocity saturation, PDM and plant: tension command in,
/// sensor readings out.
#[derive(Debug, Clone)]
pub struct TensionServo {
    admittance: AdmittanceState,
    plant: FingerPlant,
    actuator: Actuator,
    velocity_gain: f64,
    slots: usize,
    last: PlantSample,
}

impl TensionServo {
    pub fn new(cfg: &ExperimentConfig, plant_cfg: &PlantConfig, seed: u64) -> Result<Self> {
        plant_cfg.validate()?;
        let c = &cfg.control;
        let mut plant = FingerPlant::new(plant_cfg, seed);
        let mut actuator = Actuator::new(plant_cfg.actuator);
        let last = plant_step(&mut plant, &mut actuator, 0.0, c.period);
        Ok(TensionServo {
            admittance: AdmittanceState::new(c.mass, c.damping, c.period)?,
            plant,
            actuator,
            velocity_gain: c.velocity_gain,
            slots: c.pdm_slots,
            last,
        })
    }

    /// Readings from the most recent step.
    pub fn last(&self) -> &PlantSample {
        &self.last
    }

    pub fn step(&mut self, tension_command: f64) -> Result<PlantSample> {
        let v = admittance_step(&mut self.admittance, self.last.tension, tension_command);
        let max = self.actuator.config.max_speed;
        let v_mm = (v * self.velocity_gain).clamp(-max, max);
        self.admittance.velocity = v_mm / self.velocity_gain;
        let frame = pdm_generate(v_mm, max, self.slots)?;
        let applied = frame.count() as f64 / self.slots as f64 * max;
        let applied = if frame.release { applied } else { -applied };
        self.last = plant_step(&mut self.plant, &mut self.actuator, applied, self.admittance.period);
        Ok(self.last)
    }
}

/// Measured tension after a step from `from` to `to` N, one entry per tick.
/// The servo first holds `from` for `settle` seconds; the returned series
/// starts at the step.
pub fn tension_step_response(
    cfg: &ExperimentConfig,
    plant_cfg: &PlantConfig,
    from: f64,
    to: f64,
    settle: f64,
    duration: f64,
    seed: u64,
) -> Result<Vec<PlantSample>> {
    let mut servo = TensionServo::new(cfg, plant_cfg, seed)?;
    let ticks = |s: f64| (s / cfg.control.period).round() as usize;
    for _ in 0..ticks(settle) {
        servo.step(from)?;
    }
    (0..ticks(duration)).map(|_| servo.step(to)).collect()
}

/// Streaming force estimate in normalized units; zero until the window and
/// the model context have filled.
#[derive(Debug, Clone)]
pub struct OnlineEstimator {
    processor: EmgProcessor,
    scale: NormalizationScale,
    model: Model,
    history: Vec<FeatureVector>,
    estimate: f64,
}

impl OnlineEstimator {
    pub fn new(file: &ModelFile, signal: &SignalConfig) -> Result<Self> {
        file.scale.validate()?;
        Ok(OnlineEstimator {
            processor: EmgProcessor::new(signal)?,
            scale: file.scale,
            model: file.model.clone(),
            history: Vec::new(),
            estimate: 0.0,
        })
    }

    pub fn push(&mut self, frame: &crate::dsp::EmgFrame) -> Result<()> {
        if let Some(r) = self.processor.push(frame)? {
            self.history.push(normalize(&r, &self.scale)?);
            let need = self.model.context_len();
            if self.history.len() > need {
                self.history.remove(0);
            }
            if self.history.len() == need {
                self.estimate = self.model.predict(&self.history)?;
            }
        }
        Ok(())
    }

    pub fn estimate(&self) -> f64 {
        self.estimate
    }
}

/// Trained estimator and fitted tension model for the control experiment.
#[derive(Debug, Clone)]
pub struct ControlAssets {
    pub estimator: ModelFile,
    pub tension: TensionModel,
}

impl ControlAssets {
    pub const ESTIMATOR_FILE: &'static str = "control_model.json";
    pub const TENSION_FILE: &'static str = "tension_model.json";

    pub fn save(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.estimator.save(&dir.join(Self::ESTIMATOR_FILE))?;
        self.tension.save(&dir.join(Self::TENSION_FILE))
    }

    pub fn load(estimator: &std::path::Path, tension: &std::path::Path) -> Result<Self> {
        Ok(ControlAssets {
            estimator: ModelFile::load(estimator)?,
            tension: TensionModel::load(tension)?,
        })
    }
}

/// Trains the control estimator on one online-windowed trial of the
/// control subject and calibrates the tension model.
pub fn prepare_control(cfg: &ExperimentConfig) -> Result<ControlAssets> {
    cfg.validate()?;
    let id = cfg.control_subject;
    let data = subject_data(cfg, id, &cfg.online_signal, 1)?;
    let seed = derive_seed(cfg.seed, id, stream::CONTROL + stream::MODEL);
    let model = fit_estimator(cfg, cfg.control_estimator, &data.train, seed)?;
    Ok(ControlAssets {
        estimator: ModelFile::new(id, seed, data.scale, model),
        tension: run_tension_calibration(cfg)?.model,
    })
}

/// The control pipeline for one session. Owns every random stream, so a
/// session is reproduced exactly from the same config and activations.
pub struct ControlLoop {
    emg: EmgGenerator,
    estimator: OnlineEstimator,
    curve: TensionCurve1D,
    conditioner: ConditionerConfig,
    servo: TensionServo,
    tension_command: f64,
    samples_per_tick: usize,
    period: f64,
    tick: u64,
}

impl ControlLoop {
    pub fn new(cfg: &ExperimentConfig, assets: &ControlAssets) -> Result<Self> {
        cfg.validate()?;
        let id = cfg.control_subject;
        let subject = subject_for(cfg, id);
        let fs = cfg.online_signal.sample_rate;
        Ok(ControlLoop {
            emg: EmgGenerator::new(&subject, fs, derive_seed(cfg.seed, id, stream::CONTROL * 16 + stream::EMG))?,
            estimator: OnlineEstimator::new(&assets.estimator, &cfg.online_signal)?,
            curve: assets.tension.curve.clone(),
            conditioner: cfg.conditioner,
            servo: TensionServo::new(cfg, &cfg.plant, derive_seed(cfg.seed, id, stream::PLANT))?,
            tension_command: 0.0,
            samples_per_tick: (fs * cfg.control.period).round() as usize,
            period: cfg.control.period,
            tick: 0,
        })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Runs one tick with `activation` held for the whole period.
    pub fn tick(&mut self, activation: f64, target: f64) -> Result<TrialRow> {
        if !(0.0..=1.0).contains(&activation) {
            return Err(Error::OutOfRange {
                value: activation,
                low: 0.0,
                high: 1.0,
            });
        }
        let t = self.tick as f64 * self.period;
        for _ in 0..self.samples_per_tick {
            let frame = self.emg.next_frame(activation)?;
            self.estimator.push(&frame)?;
        }
        let force = self.conditioner.scale_estimate(self.estimator.estimate());
        let command = condition_force(force, &self.conditioner);
        let wanted = self.curve.force_to_tension(command)?;
        self.tension_command = condition_tension(wanted, self.tension_command, &self.conditioner);
        let sample = self.servo.step(self.tension_command)?;
        self.tick += 1;
        Ok(TrialRow {
            t,
            target,
            command,
            applied: sample.force,
            tension_command: self.tension_command,
            tension: sample.tension,
            activation,
        })
    }

    pub fn plant(&self) -> &PlantSample {
        self.servo.last()
    }
}

/// Target force pattern of the control experiment, N, after the lead-in.
#[derive(Debug, Clone)]
pub struct ControlTarget {
    pattern: ForcePattern,
    lead_in: f64,
}

impl ControlTarget {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let p = &cfg.protocol;
        let seed = derive_seed(cfg.seed, cfg.control_subject, stream::CONTROL * 16 + stream::PATTERN);
        Ok(ControlTarget {
            pattern: pattern_generate(cfg.conditioner.force_max, p.pattern_duration, p.hold, seed)?,
            lead_in: p.lead_in,
        })
    }

    pub fn at(&self, t: f64) -> f64 {
        if t < self.lead_in {
            0.0
        } else {
            self.pattern.value_at(t - self.lead_in)
        }
    }

    pub fn duration(&self) -> f64 {
        self.lead_in + self.pattern.duration
    }
}

/// Supplies one activation per tick; `None` ends the session.
pub trait ActivationSource {
    fn next(&mut self, t: f64, target: f64) -> Result<Option<f64>>;
}

/// The scripted operator tracking the target through the subject's inverse
/// force law, for a fixed number of ticks.
pub struct ScriptedSource {
    human: ScriptedHuman,
    force_max: f64,
    remaining: usize,
}

impl ScriptedSource {
    pub fn new(cfg: &ExperimentConfig, subject: &SyntheticSubject, ticks: usize) -> Self {
        let seed = derive_seed(cfg.seed, cfg.control_subject, stream::CONTROL * 16 + stream::HUMAN);
        ScriptedSource {
            human: ScriptedHuman::new(subject, &cfg.human, cfg.control.period, seed),
            force_max: cfg.conditioner.force_max,
            remaining: ticks,
        }
    }
}

impl ActivationSource for ScriptedSource {
    fn next(&mut self, _t: f64, target: f64) -> Result<Option<f64>> {
        if self.remaining == 0 {
            return Ok(None);
        }
        self.remaining -= 1;
        self.human.step(target / self.force_max).map(Some)
    }
}

/// Activations from a log, one per tick.
pub struct ReplaySource {
    values: std::vec::IntoIter<f64>,
}

impl ReplaySource {
    pub fn new(values: Vec<f64>) -> Self {
        ReplaySource {
            values: values.into_iter(),
        }
    }
}

impl ActivationSource for ReplaySource {
    fn next(&mut self, _t: f64, _target: f64) -> Result<Option<f64>> {
        Ok(self.values.next())
    }
}

/// Number of ticks in a full scripted session.
pub fn session_ticks(cfg: &ExperimentConfig) -> usize {
    let p = &cfg.protocol;
    ((p.lead_in + p.pattern_duration) / cfg.control.period).round() as usize
}

#[derive(Debug, Clone)]
pub struct ControlOutcome {
    pub record: TrialRecord,
    pub report: MetricsReport,
}

/// Runs the loop until `source` ends, passing each logged row to `observe`.
pub fn run_control_session(
    cfg: &ExperimentConfig,
    assets: &ControlAssets,
    source: &mut dyn ActivationSource,
    mut observe: impl FnMut(&TrialRow) -> Result<()>,
) -> Result<ControlOutcome> {
    let mut control = ControlLoop::new(cfg, assets)?;
    let target = ControlTarget::new(cfg)?;
    let mut record = TrialRecord {
        period: cfg.control.period,
        rows: Vec::with_capacity(session_ticks(cfg)),
    };
    loop {
        let t = record.rows.len() as f64 * cfg.control.period;
        let goal = target.at(t);
        let Some(activation) = source.next(t, goal)? else { break };
        let row = control.tick(activation, goal)?;
        observe(&row)?;
        record.rows.push(row);
    }
    let mut report = MetricsReport::new(cfg.seed);
    report.control = Some(compute_metrics(&record)?);
    Ok(ControlOutcome { record, report })
}

/// Closed-loop experiment with the given activation source.
pub fn run_prosthesis_control_experiment(
    cfg: &ExperimentConfig,
    assets: &ControlAssets,
    source: &mut dyn ActivationSource,
) -> Result<ControlOutcome> {
    run_control_session(cfg, assets, source, |_| Ok(()))
}

/// Closed-loop experiment driven by the scripted operator for the full
/// protocol length.
pub fn run_scripted_control(cfg: &ExperimentConfig, assets: &ControlAssets) -> Result<ControlOutcome> {
    let subject = subject_for(cfg, cfg.control_subject);
    let mut source = ScriptedSource::new(cfg, &subject, session_ticks(cfg));
    run_prosthesis_control_experiment(cfg, assets, &mut source)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::EstimatorKind;

    fn short_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.protocol.mvc_duration = 12.0;
        cfg.protocol.pattern_duration = 30.0;
        cfg.protocol.lead_in = 2.0;
        cfg.control_estimator = EstimatorKind::Linear;
        cfg
    }

    fn linear_assets(cfg: &ExperimentConfig) -> ControlAssets {
        prepare_control(cfg).unwrap()
    }

    #[test]
    fn servo_tracks_a_step() {
        let cfg = ExperimentConfig::default();
        let r = tension_step_response(&cfg, &cfg.plant, 2.0, 12.0, 3.0, 3.0, 5).unwrap();
        let settled = (2.0 / cfg.control.period) as usize;
        assert!(r[settled..].iter().all(|s| (s.tension - 12.0).abs() <= 0.5));
    }

    #[test]
    fn zero_activation_keeps_the_finger_open() {
        let cfg = short_cfg();
        let assets = linear_assets(&cfg);
        let mut source = ReplaySource::new(vec![0.0; 500]);
        let out = run_prosthesis_control_experiment(&cfg, &assets, &mut source).unwrap();
        assert_eq!(out.record.rows.len(), 500);
        for r in &out.record.rows {
            assert_eq!(r.command, 0.0);
            assert_eq!(r.tension_command, 0.0);
            // Sensor noise only.
            assert!(r.applied < 0.15 && r.tension < 0.3, "{r:?}");
        }
    }

    #[test]
    fn zero_activation_plant_is_open() {
        let cfg = short_cfg();
        let mut control = ControlLoop::new(&cfg, &linear_assets(&cfg)).unwrap();
        for _ in 0..300 {
            control.tick(0.0, 0.0).unwrap();
            let p = control.plant();
            assert!(p.position <= cfg.plant.finger.slack && !p.contact && p.true_force == 0.0);
        }
    }

    #[test]
    fn truncated_inputs_leave_earlier_outputs_unchanged() {
        let cfg = short_cfg();
        let assets = linear_assets(&cfg);
        let acts: Vec<f64> = (0..400).map(|i| (0.5 + 0.4 * (i as f64 * 0.03).sin()).clamp(0.0, 1.0)).collect();
        let full = run_prosthesis_control_experiment(&cfg, &assets, &mut ReplaySource::new(acts.clone())).unwrap();
        let mut changed = acts.clone();
        for a in &mut changed[250..] {
            *a = 1.0 - *a;
        }
        let other = run_prosthesis_control_experiment(&cfg, &assets, &mut ReplaySource::new(changed)).unwrap();
        let cut = run_prosthesis_control_experiment(&cfg, &assets, &mut ReplaySource::new(acts[..250].to_vec())).unwrap();
        assert_eq!(cut.record.rows[..], full.record.rows[..250]);
        assert_eq!(other.record.rows[..250], full.record.rows[..250]);
        assert_ne!(other.record.rows[250..], full.record.rows[250..]);
    }

    #[test]
    fn activation_out_of_range_is_rejected() {
        let cfg = short_cfg();
        let mut control = ControlLoop::new(&cfg, &linear_assets(&cfg)).unwrap();
        assert!(matches!(control.tick(1.5, 0.0), Err(Error::OutOfRange { .. })));
        assert!(control.tick(0.5, 0.0).is_ok());
    }

    #[test]
    fn scripted_run_replays_bit_exactly() {
        let cfg = short_cfg();
        let assets = prepare_control(&cfg).unwrap();
        let run = run_scripted_control(&cfg, &assets).unwrap();
        assert_eq!(run.record.rows.len(), session_ticks(&cfg));
        let replay =
            run_prosthesis_control_experiment(&cfg, &assets, &mut ReplaySource::new(run.record.activations())).unwrap();
        assert_eq!(replay.record, run.record);
        let m = run.report.control.unwrap();
        assert!(m.max_applied > 1.0, "{m:?}");
    }
}
