use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controller::ConditionerConfig;
use crate::error::{Error, Result};

/// One calibration measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    #[serde(rename = "force_N")]
    pub force: f64,
    #[serde(rename = "position_mm")]
    pub position: f64,
    #[serde(rename = "tension_N")]
    pub tension: f64,
}

/// `T(F, p) = sum_ij c[i][j] F^i p^j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensionSurface2D {
    pub degree_force: usize,
    pub degree_position: usize,
    /// Row-major: index `i * (degree_position + 1) + j` multiplies `F^i p^j`.
    pub coefficients: Vec<f64>,
    pub residual_rmse: f64,
}

impl TensionSurface2D {
    pub fn coefficient(&self, i: usize, j: usize) -> f64 {
        self.coefficients[i * (self.degree_position + 1) + j]
    }

    pub fn evaluate(&self, force: f64, position: f64) -> f64 {
        let mut total = 0.0;
        let mut fi = 1.0;
        for i in 0..=self.degree_force {
            let mut pj = 1.0;
            for j in 0..=self.degree_position {
                total += self.coefficient(i, j) * fi * pj;
                pj *= position;
            }
            fi *= force;
        }
        total
    }
}

fn spread(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Least-squares polynomial surface through the samples.
pub fn fit_surface(
    samples: &[CalibrationSample],
    degree_force: usize,
    degree_position: usize,
) -> Result<TensionSurface2D> {
    let terms = (degree_force + 1) * (degree_position + 1);
    if samples.len() < terms {
        return Err(Error::DegenerateSampling(format!(
            "{} samples for {terms} coefficients",
            samples.len()
        )));
    }
    for (name, (lo, hi)) in [
        ("force", spread(samples.iter().map(|s| s.force))),
        ("position", spread(samples.iter().map(|s| s.position))),
    ] {
        if !(hi - lo > 1e-9 * hi.abs().max(1.0)) {
            return Err(Error::DegenerateSampling(format!("{name} is constant")));
        }
    }

    let design = DMatrix::from_fn(samples.len(), terms, |r, c| {
        let (i, j) = (c / (degree_position + 1), c % (degree_position + 1));
        samples[r].force.powi(i as i32) * samples[r].position.powi(j as i32)
    });
    // Equilibrate columns so high powers do not swamp the SVD.
    let norms: Vec<f64> = design.column_iter().map(|c| c.norm().max(f64::MIN_POSITIVE)).collect();
    let mut scaled = design.clone();
    for (c, n) in norms.iter().enumerate() {
        scaled.column_mut(c).unscale_mut(*n);
    }
    let y = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.tension));
    let svd = scaled.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= smax * 1e-12 {
        return Err(Error::DegenerateSampling("design matrix is rank deficient".into()));
    }
    let beta = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::DegenerateSampling(e.to_string()))?;
    let coefficients: Vec<f64> = beta.iter().zip(&norms).map(|(b, n)| b / n).collect();
    let mut surface = TensionSurface2D {
        degree_force,
        degree_position,
        coefficients,
        residual_rmse: 0.0,
    };
    let sse: f64 = samples
        .iter()
        .map(|s| (surface.evaluate(s.force, s.position) - s.tension).powi(2))
        .sum();
    surface.residual_rmse = (sse / samples.len() as f64).sqrt();
    Ok(surface)
}

/// Least-squares non-decreasing fit to `y` (pool adjacent violators).
pub fn pava(y: &[f64]) -> Vec<f64> {
    // Blocks of (sum, count).
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, n1) = blocks[blocks.len() - 1];
            let (s0, n0) = blocks[blocks.len() - 2];
            if s0 / n0 as f64 <= s1 / n1 as f64 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().expect("two blocks") = (s0 + s1, n0 + n1);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(s, n)| std::iter::repeat_n(s / n as f64, n))
        .collect()
}

/// Monotone, zero-anchored force-to-tension map on a grid of forces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensionCurve1D {
    pub forces: Vec<f64>,
    pub tensions: Vec<f64>,
}

impl TensionCurve1D {
    /// Linear interpolation; beyond the last knot the last segment's slope
    /// continues.
    pub fn force_to_tension(&self, force: f64) -> Result<f64> {
        if force < 0.0 || force.is_nan() {
            return Err(Error::NegativeForce(force));
        }
        let n = self.forces.len();
        if n == 1 {
            return Ok(self.tensions[0]);
        }
        let k = self.forces.partition_point(|&f| f <= force).clamp(1, n - 1);
        let (f0, f1) = (self.forces[k - 1], self.forces[k]);
        let (t0, t1) = (self.tensions[k - 1], self.tensions[k]);
        Ok(t0 + (t1 - t0) * (force - f0) / (f1 - f0))
    }

    /// Appends knots every `step` N up to `force_max` along the last slope.
    pub fn extend_to(mut self, force_max: f64, step: f64) -> Self {
        let n = self.forces.len();
        let slope = if n >= 2 {
            (self.tensions[n - 1] - self.tensions[n - 2]) / (self.forces[n - 1] - self.forces[n - 2])
        } else {
            0.0
        };
        let (f_end, t_end) = (self.forces[n - 1], self.tensions[n - 1]);
        let mut k = 1.0;
        while f_end + k * step <= force_max + 1e-12 {
            self.forces.push(f_end + k * step);
            self.tensions.push(t_end + slope * k * step);
            k += 1.0;
        }
        self
    }

    /// Inverse of [`force_to_tension`](Self::force_to_tension). Flat
    /// stretches map to their lowest force; tensions past the last knot
    /// follow the last rising segment.
    pub fn tension_to_force(&self, tension: f64) -> f64 {
        let n = self.forces.len();
        if n == 1 || tension <= self.tensions[0] {
            return self.forces[0];
        }
        let k = self.tensions.partition_point(|&t| t < tension);
        if k < n {
            let (t0, t1) = (self.tensions[k - 1], self.tensions[k]);
            let (f0, f1) = (self.forces[k - 1], self.forces[k]);
            return f0 + (f1 - f0) * (tension - t0) / (t1 - t0);
        }
        match (1..n).rev().find(|&i| self.tensions[i] > self.tensions[i - 1]) {
            Some(i) => {
                let slope = (self.forces[i] - self.forces[i - 1]) / (self.tensions[i] - self.tensions[i - 1]);
                self.forces[n - 1] + slope * (tension - self.tensions[n - 1])
            }
            None => self.forces[n - 1],
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.tensions.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Averages the surface over `positions` along `force_grid`, anchors the
/// result at zero, makes it non-decreasing and clamps it non-negative.
pub fn derive_curve_1d(
    surface: &TensionSurface2D,
    positions: &[f64],
    force_grid: &[f64],
) -> Result<TensionCurve1D> {
    if positions.is_empty() || force_grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if force_grid[0] != 0.0 || force_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("force grid must start at 0 and increase".into()));
    }
    let mean: Vec<f64> = force_grid
        .iter()
        .map(|&f| positions.iter().map(|&p| surface.evaluate(f, p)).sum::<f64>() / positions.len() as f64)
        .collect();
    let anchored: Vec<f64> = mean.iter().map(|t| t - mean[0]).collect();
    let tensions = pava(&anchored).into_iter().map(|t| t.max(0.0)).collect();
    Ok(TensionCurve1D {
        forces: force_grid.to_vec(),
        tensions,
    })
}

pub const TENSION_MODEL_VERSION: u32 = 1;

/// Persisted two-stage tension model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensionModel {
    pub format_version: u32,
    pub surface: TensionSurface2D,
    pub positions: Vec<f64>,
    pub curve: TensionCurve1D,
    pub conditioner: ConditionerConfig,
}

impl TensionModel {
    pub fn new(
        surface: TensionSurface2D,
        positions: Vec<f64>,
        curve: TensionCurve1D,
        conditioner: ConditionerConfig,
    ) -> Self {
        TensionModel {
            format_version: TENSION_MODEL_VERSION,
            surface,
            positions,
            curve,
            conditioner,
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::MissingModel(format!("{}: {e}", path.display())))?;
        let model: TensionModel = serde_json::from_slice(&bytes)?;
        if model.format_version != TENSION_MODEL_VERSION {
            return Err(Error::Config(format!(
                "unsupported tension model version {}",
                model.format_version
            )));
        }
        Ok(model)
    }
}

/// CSV `force_N,position_mm,tension_N`.
pub fn write_calibration_csv<W: Write>(writer: W, samples: &[CalibrationSample]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    for s in samples {
        w.serialize(s)?;
    }
    if samples.is_empty() {
        w.write_record(["force_N", "position_mm", "tension_N"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_calibration_csv<R: Read>(reader: R) -> Result<Vec<CalibrationSample>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_samples(f: impl Fn(f64, f64) -> f64) -> Vec<CalibrationSample> {
        let mut out = Vec::new();
        for i in 0..12 {
            for j in 0..6 {
                let (force, position) = (i as f64 * 0.5, 5.0 + j as f64 * 2.0);
                out.push(CalibrationSample {
                    force,
                    position,
                    tension: f(force, position),
                });
            }
        }
        out
    }

    #[test]
    fn recovers_exact_polynomial() {
        let truth = |f: f64, p: f64| 0.5 + 6.0 * f - 0.3 * f * f + 0.02 * f.powi(3) + 0.1 * p - 0.01 * p * p + 0.05 * f * p;
        let s = fit_surface(&grid_samples(truth), 3, 2).unwrap();
        let expected = [
            (0, 0, 0.5),
            (1, 0, 6.0),
            (2, 0, -0.3),
            (3, 0, 0.02),
            (0, 1, 0.1),
            (0, 2, -0.01),
            (1, 1, 0.05),
            (2, 2, 0.0),
        ];
        for (i, j, c) in expected {
            assert!((s.coefficient(i, j) - c).abs() < 1e-6, "c[{i}][{j}] = {}", s.coefficient(i, j));
        }
        assert!(s.residual_rmse < 1e-9);
    }

    #[test]
    fn one_position_is_degenerate() {
        let samples: Vec<_> = (0..20)
            .map(|i| CalibrationSample {
                force: i as f64,
                position: 7.0,
                tension: 3.0 * i as f64,
            })
            .collect();
        assert!(matches!(fit_surface(&samples, 3, 2), Err(Error::DegenerateSampling(_))));
        assert!(matches!(fit_surface(&samples[..5], 3, 2), Err(Error::DegenerateSampling(_))));
    }

    #[test]
    fn pava_examples() {
        assert_eq!(pava(&[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);
        assert_eq!(pava(&[3.0, 1.0]), vec![2.0, 2.0]);
        assert_eq!(pava(&[1.0, 3.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(pava(&[0.0, -1.0, -2.0, 5.0]), vec![-1.0, -1.0, -1.0, 5.0]);
        assert!(pava(&[]).is_empty());
    }

    #[test]
    fn curve_interpolation() {
        let c = TensionCurve1D {
            forces: vec![0.0, 2.0, 4.0],
            tensions: vec![0.0, 10.0, 18.0],
        };
        assert_eq!(c.force_to_tension(0.0).unwrap(), 0.0);
        assert_eq!(c.force_to_tension(2.0).unwrap(), 10.0);
        assert_eq!(c.force_to_tension(3.0).unwrap(), 14.0);
        assert_eq!(c.force_to_tension(5.0).unwrap(), 22.0);
        assert!(matches!(c.force_to_tension(-0.5), Err(Error::NegativeForce(_))));
        let e = c.extend_to(8.0, 2.0);
        assert_eq!(e.forces, vec![0.0, 2.0, 4.0, 6.0, 8.0]);
        assert_eq!(e.tensions, vec![0.0, 10.0, 18.0, 26.0, 34.0]);
    }

    #[test]
    fn curve_inverse() {
        let c = TensionCurve1D {
            forces: vec![0.0, 1.0, 2.0, 4.0, 5.0],
            tensions: vec![0.0, 0.0, 10.0, 18.0, 18.0],
        };
        assert_eq!(c.tension_to_force(0.0), 0.0);
        assert_eq!(c.tension_to_force(-1.0), 0.0);
        assert_eq!(c.tension_to_force(5.0), 1.5);
        assert_eq!(c.tension_to_force(14.0), 3.0);
        assert_eq!(c.tension_to_force(18.0), 4.0);
        // Past the end: 2 N of force per 8 N of tension, from the last knot.
        assert_eq!(c.tension_to_force(22.0), 6.0);
        for f in [0.3, 1.7, 2.5, 3.9] {
            let g = TensionCurve1D {
                forces: vec![0.0, 2.0, 4.0],
                tensions: vec![0.0, 10.0, 18.0],
            };
            let t = g.force_to_tension(f).unwrap();
            assert!((g.tension_to_force(t) - f).abs() < 1e-12);
        }
    }

    #[test]
    fn derived_curve_is_anchored_and_monotone() {
        // Dips below its intercept near zero force.
        let s = TensionSurface2D {
            degree_force: 2,
            degree_position: 1,
            coefficients: vec![2.0, 0.1, -1.0, 0.0, 0.5, 0.0],
            residual_rmse: 0.0,
        };
        let grid: Vec<f64> = (0..=16).map(|i| i as f64 * 0.5).collect();
        let c = derive_curve_1d(&s, &[5.0, 10.0], &grid).unwrap();
        assert_eq!(c.tensions[0], 0.0);
        assert!(c.is_monotone());
        assert!(c.tensions.iter().all(|&t| t >= 0.0));
        assert!(matches!(derive_curve_1d(&s, &[], &grid), Err(Error::EmptyGrid)));
        assert!(matches!(derive_curve_1d(&s, &[1.0], &[]), Err(Error::EmptyGrid)));
    }

    #[test]
    fn feasible_surface_is_plain_average() {
        let s = TensionSurface2D {
            degree_force: 1,
            degree_position: 1,
            coefficients: vec![0.0, 0.0, 6.0, 0.1],
            residual_rmse: 0.0,
        };
        let grid: Vec<f64> = (0..=8).map(f64::from).collect();
        let c = derive_curve_1d(&s, &[4.0, 8.0], &grid).unwrap();
        for (f, t) in grid.iter().zip(&c.tensions) {
            assert!((t - f * (6.0 + 0.1 * 6.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn calibration_csv_round_trip() {
        let samples = grid_samples(|f, p| f * 6.0 + p * 0.1);
        let mut buf = Vec::new();
        write_calibration_csv(&mut buf, &samples).unwrap();
        assert!(buf.starts_with(b"force_N,position_mm,tension_N\n"));
        assert_eq!(read_calibration_csv(&buf[..]).unwrap(), samples);
    }
}
