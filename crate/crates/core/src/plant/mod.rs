//! Simulated world: a spring-loaded two-joint tendon finger pressing on a
//! force sensor, the linear actuator pulling its tendon, the load cell on the
//! tendon, and a synthetic subject producing EMG and fingertip force.
//!
//! The finger is quasi-static. Tendon excursion `e = max(p - slack, 0)`
//! flexes both joints against their springs until the fingertip meets the
//! sensor at total flexion `contact_angle`; past that point the pad and
//! sensor take the load with stiffness `contact_stiffness`. Fingertip force
//! is linear in tension with a gain that depends mildly on pose.
//!
//! Every parameter here is a modelling choice, not a measurement of the
//! physical prosthesis.

mod pattern;
mod subject;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use pattern::{pattern_generate, ForcePattern, PATTERN_LEVELS};
pub use subject::{emg_generate, EmgGenerator, ForceResponse, SubjectConfig, SyntheticSubject};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FingerConfig {
    /// Tendon moment arms at the two joints, mm.
    pub moment_arms: [f64; 2],
    /// Joint spring stiffnesses, N·mm/rad.
    pub spring_stiffness: [f64; 2],
    pub rest_angles: [f64; 2],
    /// Tendon excursion before the tendon starts pulling, mm.
    pub slack: f64,
    /// Tendon elongation stiffness, N/mm.
    pub tendon_stiffness: f64,
    /// Total flexion (θ1 + θ2 above rest) at which the pad meets the sensor.
    pub contact_angle: f64,
    /// Extra tension per mm of tendon excursion once in contact, N/mm.
    pub contact_stiffness: f64,
    /// Fingertip force per newton of tension at `gain_reference_angle`.
    pub fingertip_gain: f64,
    /// Relative change of the fingertip gain per radian of flexion.
    pub gain_slope: f64,
    pub gain_reference_angle: f64,
    /// Extra flexion per newton of fingertip force from pad compliance, rad/N.
    pub pad_compliance: f64,
    /// Sheath friction seen by the load cell, N per mm/s of tendon motion.
    pub viscous_drag: f64,
}

impl Default for FingerConfig {
    fn default() -> Self {
        FingerConfig {
            moment_arms: [8.0, 6.0],
            spring_stiffness: [40.0, 30.0],
            rest_angles: [0.0, 0.0],
            slack: 1.0,
            tendon_stiffness: 10.0,
            contact_angle: 0.6,
            contact_stiffness: 3.0,
            fingertip_gain: 0.167,
            gain_slope: 0.25,
            gain_reference_angle: 0.6,
            pad_compliance: 0.02,
            viscous_drag: 0.2,
        }
    }
}

impl FingerConfig {
    /// Tendon excursion per newton of tension before contact, mm/N.
    pub fn free_compliance(&self) -> f64 {
        let [r1, r2] = self.moment_arms;
        let [k1, k2] = self.spring_stiffness;
        r1 * r1 / k1 + r2 * r2 / k2 + 1.0 / self.tendon_stiffness
    }

    /// Flexion produced per newton of tension before contact, rad/N.
    fn flexion_per_newton(&self) -> f64 {
        self.moment_arms[0] / self.spring_stiffness[0] + self.moment_arms[1] / self.spring_stiffness[1]
    }

    pub fn contact_tension(&self) -> f64 {
        self.contact_angle / self.flexion_per_newton()
    }

    pub fn contact_excursion(&self) -> f64 {
        self.contact_tension() * self.free_compliance()
    }

    /// Fingertip force per newton of tension at total flexion `phi`.
    pub fn gain_at(&self, phi: f64) -> f64 {
        self.fingertip_gain * (1.0 + self.gain_slope * (phi - self.gain_reference_angle))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.moment_arms.iter().chain(&self.spring_stiffness).all(|&v| v > 0.0)
            && self.tendon_stiffness > 0.0
            && self.contact_angle > 0.0
            && self.contact_stiffness > 0.0
            && self.fingertip_gain > 0.0;
        let non_negative = self.slack >= 0.0 && self.pad_compliance >= 0.0 && self.viscous_drag >= 0.0;
        if !positive || !non_negative {
            return Err(Error::Config("finger parameters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActuatorConfig {
    /// Travel range, mm. Position 0 is fully extended (tendon slack).
    pub travel: f64,
    /// mm/s.
    pub max_speed: f64,
}

impl Default for ActuatorConfig {
    fn default() -> Self {
        ActuatorConfig {
            travel: 19.0,
            max_speed: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadCellConfig {
    /// Gaussian noise, N.
    pub sigma: f64,
    /// ADC resolution over `[0, range]`; `None` reports unquantized values.
    pub bits: Option<u32>,
    pub range: f64,
}

impl Default for LoadCellConfig {
    fn default() -> Self {
        LoadCellConfig {
            sigma: 0.05,
            bits: Some(12),
            range: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    pub finger: FingerConfig,
    pub actuator: ActuatorConfig,
    pub load_cell: LoadCellConfig,
    /// Gaussian noise of the fingertip force sensor, N.
    pub force_sensor_sigma: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            finger: FingerConfig::default(),
            actuator: ActuatorConfig::default(),
            load_cell: LoadCellConfig::default(),
            force_sensor_sigma: 0.02,
        }
    }
}

impl PlantConfig {
    /// The same mechanics with every sensor ideal.
    pub fn noise_free(mut self) -> Self {
        self.load_cell.sigma = 0.0;
        self.load_cell.bits = None;
        self.force_sensor_sigma = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.finger.validate()?;
        if !(self.actuator.travel > 0.0 && self.actuator.max_speed > 0.0) {
            return Err(Error::Config("actuator travel and speed must be positive".into()));
        }
        if self.load_cell.sigma < 0.0 || self.force_sensor_sigma < 0.0 || !(self.load_cell.range > 0.0) {
            return Err(Error::Config("sensor noise must be non-negative".into()));
        }
        Ok(())
    }
}

/// Linear actuator pulling the tendon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Actuator {
    pub config: ActuatorConfig,
    /// mm, within `[0, travel]`.
    pub position: f64,
    /// Velocity actually applied on the last step, mm/s; positive releases.
    pub velocity: f64,
}

impl Actuator {
    pub fn new(config: ActuatorConfig) -> Self {
        Actuator {
            config,
            position: 0.0,
            velocity: 0.0,
        }
    }

    /// Moves by a release velocity (mm/s, positive lets the tendon out) for
    /// `dt` seconds. Speed saturates and position clamps to the travel.
    fn advance(&mut self, velocity_cmd: f64, dt: f64) -> f64 {
        let max = self.config.max_speed;
        let v = velocity_cmd.clamp(-max, max);
        let before = self.position;
        self.position = (self.position - v * dt).clamp(0.0, self.config.travel);
        self.velocity = (before - self.position) / dt;
        (self.position - before) / dt
    }
}

/// Load cell on the tendon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadCell {
    pub config: LoadCellConfig,
}

impl LoadCell {
    pub fn read(&self, tension: f64, noise: f64) -> f64 {
        let v = (tension + noise).max(0.0);
        match self.config.bits {
            Some(bits) => {
                let levels = ((1u64 << bits) - 1) as f64;
                let lsb = self.config.range / levels;
                ((v / lsb).round() * lsb).min(self.config.range)
            }
            None => v,
        }
    }
}

/// One plant update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantSample {
    /// Load-cell reading, N.
    pub tension: f64,
    /// Force-sensor reading, N.
    pub force: f64,
    pub position: f64,
    pub theta: [f64; 2],
    pub true_tension: f64,
    pub true_force: f64,
    pub contact: bool,
}

#[derive(Debug, Clone)]
pub struct FingerPlant {
    pub config: FingerConfig,
    pub load_cell: LoadCell,
    pub force_sensor_sigma: f64,
    pub theta: [f64; 2],
    pub contact: bool,
    rng: ChaCha8Rng,
}

/// Static state of the finger for a given tendon excursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub tension: f64,
    pub force: f64,
    pub theta: [f64; 2],
    pub contact: bool,
}

impl FingerPlant {
    pub fn new(config: &PlantConfig, seed: u64) -> Self {
        FingerPlant {
            config: config.finger,
            load_cell: LoadCell {
                config: config.load_cell,
            },
            force_sensor_sigma: config.force_sensor_sigma,
            theta: config.finger.rest_angles,
            contact: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Quasi-static equilibrium at actuator position `p` (mm).
    pub fn pose(&self, p: f64) -> Pose {
        let c = &self.config;
        let e = (p - c.slack).max(0.0);
        let e_contact = c.contact_excursion();
        let [r1, r2] = c.moment_arms;
        let [k1, k2] = c.spring_stiffness;
        if e <= e_contact {
            let t = e / c.free_compliance();
            return Pose {
                tension: t,
                force: 0.0,
                theta: [c.rest_angles[0] + r1 * t / k1, c.rest_angles[1] + r2 * t / k2],
                contact: false,
            };
        }
        let t = c.contact_tension() + c.contact_stiffness * (e - e_contact);
        // F = g(phi) T with phi = contact_angle + pad * F, solved for F.
        let g0 = c.gain_at(c.contact_angle);
        let f = g0 * t / (1.0 - c.fingertip_gain * c.gain_slope * c.pad_compliance * t);
        let phi = c.contact_angle + c.pad_compliance * f;
        let share = (r1 / k1) / c.flexion_per_newton();
        Pose {
            tension: t,
            force: f,
            theta: [c.rest_angles[0] + share * phi, c.rest_angles[1] + (1.0 - share) * phi],
            contact: true,
        }
    }

    fn noise(&mut self, sigma: f64) -> f64 {
        if sigma > 0.0 {
            Normal::new(0.0, sigma).expect("finite sigma").sample(&mut self.rng)
        } else {
            0.0
        }
    }
}

/// Advances the actuator by `velocity_cmd` (mm/s, positive releases the
/// tendon) for `dt` seconds and returns the new sensor readings.
pub fn plant_step(
    plant: &mut FingerPlant,
    actuator: &mut Actuator,
    velocity_cmd: f64,
    dt: f64,
) -> PlantSample {
    let pull_rate = actuator.advance(velocity_cmd, dt);
    let pose = plant.pose(actuator.position);
    plant.theta = pose.theta;
    plant.contact = pose.contact;
    let taut = actuator.position > plant.config.slack;
    let drag = if taut { plant.config.viscous_drag * pull_rate } else { 0.0 };
    let true_tension = (pose.tension + drag).max(0.0);
    let tn = plant.noise(plant.load_cell.config.sigma);
    let tension = plant.load_cell.read(true_tension, tn);
    let fsig = plant.force_sensor_sigma;
    let fnoise = plant.noise(fsig);
    let force = (pose.force + fnoise).max(0.0);
    PlantSample {
        tension,
        force,
        position: actuator.position,
        theta: pose.theta,
        true_tension,
        true_force: pose.force,
        contact: pose.contact,
    }
}

/// Trajectory log row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub tension_n: f64,
    pub force_n: f64,
    pub position_mm: f64,
    pub theta1: f64,
    pub theta2: f64,
}

impl TrajectoryRow {
    pub fn new(t: f64, s: &PlantSample) -> Self {
        TrajectoryRow {
            t,
            tension_n: s.tension,
            force_n: s.force,
            position_mm: s.position,
            theta1: s.theta[0],
            theta2: s.theta[1],
        }
    }
}

/// CSV `t,tension_N,force_N,position_mm,theta1,theta2`.
pub fn write_trajectory_csv<W: Write>(writer: W, rows: &[TrajectoryRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(["t", "tension_N", "force_N", "position_mm", "theta1", "theta2"])?;
    for r in rows {
        w.write_record(
            [r.t, r.tension_n, r.force_n, r.position_mm, r.theta1, r.theta2].map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ideal() -> (FingerPlant, Actuator) {
        let cfg = PlantConfig::default().noise_free();
        (FingerPlant::new(&cfg, 0), Actuator::new(cfg.actuator))
    }

    #[test]
    fn derived_constants() {
        let c = FingerConfig::default();
        assert!((c.free_compliance() - 2.9).abs() < 1e-12);
        assert!((c.contact_tension() - 1.5).abs() < 1e-12);
        assert!((c.contact_excursion() - 4.35).abs() < 1e-12);
    }

    #[test]
    fn thirty_newtons_give_about_five() {
        let c = FingerConfig::default();
        assert!((c.gain_at(0.6) * 30.0 - 5.01).abs() < 1e-9);
        let (plant, _) = ideal();
        // Find the position giving 30 N and check the force there.
        let e = c.contact_excursion() + (30.0 - c.contact_tension()) / c.contact_stiffness;
        let pose = plant.pose(c.slack + e);
        assert!((pose.tension - 30.0).abs() < 1e-9);
        assert!((pose.force - 5.0).abs() < 0.2, "{}", pose.force);
    }

    #[test]
    fn slack_tendon_no_force() {
        let (mut plant, mut act) = ideal();
        let s = plant_step(&mut plant, &mut act, 0.0, 0.02);
        assert_eq!((s.tension, s.force, s.contact), (0.0, 0.0, false));
        assert_eq!(s.theta, [0.0, 0.0]);
    }

    #[test]
    fn force_linear_in_tension_at_fixed_pose() {
        let c = FingerConfig::default();
        let g = c.gain_at(0.65);
        assert!((g * 20.0 - 2.0 * g * 10.0).abs() < 1e-12);
    }

    #[test]
    fn actuator_limits() {
        let (mut plant, mut act) = ideal();
        let s = plant_step(&mut plant, &mut act, -50.0, 0.5);
        assert_eq!(s.position, 5.0);
        for _ in 0..10 {
            plant_step(&mut plant, &mut act, -10.0, 1.0);
        }
        assert_eq!(act.position, 19.0);
        for _ in 0..10 {
            plant_step(&mut plant, &mut act, 10.0, 1.0);
        }
        assert_eq!(act.position, 0.0);
    }

    #[test]
    fn release_returns_to_rest_within_two_seconds() {
        let (mut plant, mut act) = ideal();
        act.position = 19.0;
        let s = plant_step(&mut plant, &mut act, 0.0, 0.02);
        assert!(s.contact && s.theta[0] > 0.0);
        let mut t = 0.0;
        while plant.theta != [0.0, 0.0] {
            plant_step(&mut plant, &mut act, 10.0, 0.02);
            t += 0.02;
            assert!(t <= 2.0);
        }
    }

    #[test]
    fn load_cell_quantizes_and_clips() {
        let lc = LoadCell {
            config: LoadCellConfig::default(),
        };
        assert_eq!(lc.read(-1.0, 0.0), 0.0);
        assert_eq!(lc.read(45.0, 0.0), 30.0);
        let lsb = 30.0 / 4095.0;
        let q = lc.read(10.0, 0.0);
        assert!((q - 10.0).abs() <= lsb / 2.0 + 1e-12);
        assert!(((q / lsb).round() * lsb - q).abs() < 1e-12);
    }

    #[test]
    fn noisy_plant_is_seeded() {
        let cfg = PlantConfig::default();
        let run = |seed| {
            let mut p = FingerPlant::new(&cfg, seed);
            let mut a = Actuator::new(cfg.actuator);
            (0..200).map(|i| plant_step(&mut p, &mut a, if i < 100 { -8.0 } else { 3.0 }, 0.02)).collect::<Vec<_>>()
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
    }

    #[test]
    fn trajectory_csv_header() {
        let mut buf = Vec::new();
        let (mut plant, mut act) = ideal();
        let s = plant_step(&mut plant, &mut act, -10.0, 0.5);
        write_trajectory_csv(&mut buf, &[TrajectoryRow::new(0.5, &s)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,tension_N,force_N,position_mm,theta1,theta2");
        assert_eq!(text.lines().count(), 2);
    }
}
