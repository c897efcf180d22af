//! Tension calibration: position sweeps against the fingertip sensor, the
//! two-stage fit, and its accuracy in fingertip-force units.

use crate::controller::{derive_curve_1d, fit_surface, CalibrationSample, TensionCurve1D, TensionModel};
use crate::error::{Error, Result};
use crate::estimators::{r_squared, rmse};
use crate::harness::config::ExperimentConfig;
use crate::harness::metrics::{MetricsReport, TensionMetrics};
use crate::harness::session::{derive_seed, stream};
use crate::plant::{plant_step, Actuator, FingerPlant, PlantConfig};

/// Pulls the tendon at constant speed with the finger placed to make contact
/// at `contact_angle`, sampling every `sample_period`, until the tension
/// limit or the end of travel.
///
/// Contact is taken to start after the last reading at or below
/// `min_force`, so noise before contact cannot fake it. A sample's position
/// is the placement of the finger: the actuator position of the first
/// sample in contact.
pub fn calibration_sweep(
    cfg: &ExperimentConfig,
    plant_cfg: &PlantConfig,
    contact_angle: f64,
    seed: u64,
) -> Result<Vec<CalibrationSample>> {
    let cal = &cfg.calibration;
    let mut pc = *plant_cfg;
    pc.finger.contact_angle = contact_angle;
    pc.validate()?;
    let mut plant = FingerPlant::new(&pc, seed);
    let mut actuator = Actuator::new(pc.actuator);
    let limit = cfg.conditioner.tension_max;
    let mut readings = Vec::new();
    loop {
        let s = plant_step(&mut plant, &mut actuator, -cal.sweep_speed, cal.sample_period);
        if s.true_tension >= limit {
            break;
        }
        readings.push(s);
        if actuator.position >= pc.actuator.travel {
            break;
        }
    }
    let start = readings.iter().rposition(|s| s.force <= cal.min_force).map_or(0, |i| i + 1);
    let Some(first) = readings.get(start) else {
        return Ok(Vec::new());
    };
    let placement = first.position;
    Ok(readings[start..]
        .iter()
        .map(|s| CalibrationSample {
            force: s.force,
            position: placement,
            tension: s.tension,
        })
        .collect())
}

/// Sweeps at every configured contact angle.
pub fn calibration_samples(cfg: &ExperimentConfig, plant_cfg: &PlantConfig, seed: u64) -> Result<Vec<CalibrationSample>> {
    let mut all = Vec::new();
    for (k, &angle) in cfg.calibration.contact_angles.iter().enumerate() {
        all.extend(calibration_sweep(cfg, plant_cfg, angle, derive_seed(seed, k as u64, stream::PLANT))?);
    }
    Ok(all)
}

/// Distinct finger placements, ascending.
fn placements(samples: &[CalibrationSample]) -> Vec<f64> {
    let mut p: Vec<f64> = samples.iter().map(|s| s.position).collect();
    p.sort_by(f64::total_cmp);
    p.dedup();
    p
}

/// Fits the surface, then averages it over the measured placements into the
/// 1-D curve, extended to the conditioner's force range.
pub fn fit_tension_model(cfg: &ExperimentConfig, samples: &[CalibrationSample]) -> Result<TensionModel> {
    let cal = &cfg.calibration;
    if samples.is_empty() {
        return Err(Error::DegenerateSampling("no samples on the sensor".into()));
    }
    let surface = fit_surface(samples, cal.degree_force, cal.degree_position)?;
    let positions = placements(samples);
    let top = samples.iter().map(|s| s.force).fold(0.0, f64::max);
    let knots = (top / cal.grid_step).floor() as usize;
    if knots == 0 {
        return Err(Error::DegenerateSampling(format!("forces only reach {top} N")));
    }
    let grid: Vec<f64> = (0..=knots).map(|k| k as f64 * cal.grid_step).collect();
    let curve = derive_curve_1d(&surface, &positions, &grid)?.extend_to(cfg.conditioner.force_max, cal.grid_step);
    Ok(TensionModel::new(surface, positions, curve, cfg.conditioner))
}

/// Force predicted from each measured tension through the inverted curve,
/// scored against the measured force.
pub fn evaluate_curve(curve: &TensionCurve1D, samples: &[CalibrationSample]) -> Result<(f64, f64)> {
    let actual: Vec<f64> = samples.iter().map(|s| s.force).collect();
    let predicted: Vec<f64> = samples.iter().map(|s| curve.tension_to_force(s.tension)).collect();
    Ok((r_squared(&actual, &predicted)?, rmse(&actual, &predicted)?))
}

#[derive(Debug, Clone)]
pub struct CalibrationOutcome {
    pub model: TensionModel,
    pub samples: Vec<CalibrationSample>,
    /// Independent sweeps used for the accuracy figures.
    pub validation: Vec<CalibrationSample>,
    pub metrics: TensionMetrics,
}

impl CalibrationOutcome {
    pub fn report(&self, seed: u64) -> MetricsReport {
        let mut r = MetricsReport::new(seed);
        r.tension_model = Some(self.metrics);
        r
    }
}

/// Calibrates against `plant_cfg`; fit and validation sweeps use
/// independent noise.
pub fn calibrate_plant(cfg: &ExperimentConfig, plant_cfg: &PlantConfig) -> Result<CalibrationOutcome> {
    let samples = calibration_samples(cfg, plant_cfg, derive_seed(cfg.seed, 0, stream::CALIBRATION))?;
    let validation = calibration_samples(cfg, plant_cfg, derive_seed(cfg.seed, 1, stream::CALIBRATION))?;
    let model = fit_tension_model(cfg, &samples)?;
    let (r_squared, rmse) = evaluate_curve(&model.curve, &validation)?;
    let metrics = TensionMetrics {
        r_squared,
        rmse,
        surface_residual_rmse: model.surface.residual_rmse,
        fit_samples: samples.len(),
        validation_samples: validation.len(),
    };
    Ok(CalibrationOutcome {
        model,
        samples,
        validation,
        metrics,
    })
}

pub fn run_tension_calibration(cfg: &ExperimentConfig) -> Result<CalibrationOutcome> {
    cfg.validate()?;
    calibrate_plant(cfg, &cfg.plant)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_stays_on_sensor_and_below_limit() {
        let cfg = ExperimentConfig::default();
        let s = calibration_sweep(&cfg, &cfg.plant, 0.6, 3).unwrap();
        assert!(s.len() > 20);
        assert!(s.iter().all(|x| x.force > 0.1 && x.tension < 30.5));
        assert!(s.iter().all(|x| x.position == s[0].position));
        assert!(s.windows(2).all(|w| w[1].tension > w[0].tension));
    }

    #[test]
    fn noise_free_curve_inverts_the_plant() {
        let cfg = ExperimentConfig::default();
        let out = calibrate_plant(&cfg, &cfg.plant.noise_free()).unwrap();
        assert!(out.model.curve.is_monotone());
        assert_eq!(out.model.curve.force_to_tension(0.0).unwrap(), 0.0);
        assert!(*out.model.curve.forces.last().unwrap() >= cfg.conditioner.force_max - 1e-9);
        assert!(out.metrics.r_squared > 0.99, "{:?}", out.metrics);
    }

    #[test]
    fn no_contact_is_degenerate() {
        let mut cfg = ExperimentConfig::default();
        cfg.calibration.min_force = 1e6;
        assert!(matches!(run_tension_calibration(&cfg), Err(Error::DegenerateSampling(_))));
    }
}
