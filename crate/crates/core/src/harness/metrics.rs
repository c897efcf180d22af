use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{rmse, EstimatorKind};

/// One control-loop tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub t: f64,
    #[serde(rename = "target_N")]
    pub target: f64,
    /// Conditioned force command, N.
    #[serde(rename = "command_N")]
    pub command: f64,
    /// Force-sensor reading at the fingertip, N.
    #[serde(rename = "applied_N")]
    pub applied: f64,
    #[serde(rename = "tension_cmd_N")]
    pub tension_command: f64,
    #[serde(rename = "tension_N")]
    pub tension: f64,
    pub activation: f64,
}

/// Time-aligned log of a control trial, one row per tick.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub period: f64,
    pub rows: Vec<TrialRow>,
}

impl TrialRecord {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, period: f64) -> Result<Self> {
        let rows = csv::Reader::from_reader(reader)
            .deserialize()
            .collect::<std::result::Result<Vec<TrialRow>, _>>()?;
        Ok(TrialRecord { period, rows })
    }

    pub fn activations(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.activation).collect()
    }
}

/// The three force RMSEs of a control trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlMetrics {
    /// Command vs applied force, N.
    pub tracking_rmse: f64,
    /// Target pattern vs command, N.
    pub targeting_rmse: f64,
    /// Target pattern vs applied force, N.
    pub reaching_rmse: f64,
    /// Commanded vs measured tension, N.
    pub tension_rmse: f64,
    pub ticks: usize,
    pub duration: f64,
    pub mean_target: f64,
    pub mean_applied: f64,
    pub max_applied: f64,
}

pub fn compute_metrics(record: &TrialRecord) -> Result<ControlMetrics> {
    if record.rows.is_empty() {
        return Err(Error::EmptyDataset("trial record has no rows".into()));
    }
    let col = |f: fn(&TrialRow) -> f64| record.rows.iter().map(f).collect::<Vec<f64>>();
    let target = col(|r| r.target);
    let command = col(|r| r.command);
    let applied = col(|r| r.applied);
    let n = record.rows.len() as f64;
    Ok(ControlMetrics {
        tracking_rmse: rmse(&command, &applied)?,
        targeting_rmse: rmse(&target, &command)?,
        reaching_rmse: rmse(&target, &applied)?,
        tension_rmse: rmse(&col(|r| r.tension_command), &col(|r| r.tension))?,
        ticks: record.rows.len(),
        duration: n * record.period,
        mean_target: target.iter().sum::<f64>() / n,
        mean_applied: applied.iter().sum::<f64>() / n,
        max_applied: applied.iter().copied().fold(0.0, f64::max),
    })
}

/// Train and test scores of one estimator on one subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorScore {
    pub subject: u64,
    pub estimator: EstimatorKind,
    pub train_r2: f64,
    pub test_r2: f64,
    pub train_rmse: f64,
    pub test_rmse: f64,
}

/// Across-subject means for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: EstimatorKind,
    pub mean_train_r2: f64,
    pub mean_test_r2: f64,
    pub mean_train_rmse: f64,
    pub mean_test_rmse: f64,
    /// Mean of `train_r2 - test_r2`.
    pub mean_r2_drop: f64,
    /// Subjects whose test R² fell below zero.
    pub negative_test_r2: Vec<u64>,
}

pub fn summarize(scores: &[EstimatorScore], kinds: &[EstimatorKind]) -> Vec<EstimatorSummary> {
    kinds
        .iter()
        .filter_map(|&k| {
            let s: Vec<&EstimatorScore> = scores.iter().filter(|s| s.estimator == k).collect();
            if s.is_empty() {
                return None;
            }
            let mean = |f: fn(&EstimatorScore) -> f64| s.iter().map(|x| f(x)).sum::<f64>() / s.len() as f64;
            Some(EstimatorSummary {
                estimator: k,
                mean_train_r2: mean(|x| x.train_r2),
                mean_test_r2: mean(|x| x.test_r2),
                mean_train_rmse: mean(|x| x.train_rmse),
                mean_test_rmse: mean(|x| x.test_rmse),
                mean_r2_drop: mean(|x| x.train_r2 - x.test_r2),
                negative_test_r2: s.iter().filter(|x| x.test_r2 < 0.0).map(|x| x.subject).collect(),
            })
        })
        .collect()
}

/// Force-to-tension model accuracy, in fingertip-force units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensionMetrics {
    pub r_squared: f64,
    pub rmse: f64,
    pub surface_residual_rmse: f64,
    pub fit_samples: usize,
    pub validation_samples: usize,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub estimator_scores: Vec<EstimatorScore>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub estimator_summary: Vec<EstimatorSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tension_model: Option<TensionMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlMetrics>,
}

impl MetricsReport {
    pub fn new(seed: u64) -> Self {
        MetricsReport {
            schema_version: REPORT_SCHEMA_VERSION,
            seed,
            estimator_scores: Vec::new(),
            estimator_summary: Vec::new(),
            tension_model: None,
            control: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let report: MetricsReport = serde_json::from_slice(&std::fs::read(path)?)?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported report schema {}",
                report.schema_version
            )));
        }
        Ok(report)
    }

    /// Fills every section of `self` that `other` has and `self` lacks.
    pub fn merge(&mut self, other: MetricsReport) {
        if self.estimator_scores.is_empty() {
            self.estimator_scores = other.estimator_scores;
            self.estimator_summary = other.estimator_summary;
        }
        self.tension_model = self.tension_model.or(other.tension_model);
        self.control = self.control.or(other.control);
    }

    /// Plain-text tables of whatever sections are present.
    pub fn render(&self) -> String {
        use std::fmt::Write as _;
        let mut out = format!("seed {}\n", self.seed);
        if !self.estimator_summary.is_empty() {
            out += "\nforce estimation (means over subjects)\n";
            let _ = writeln!(
                out,
                "{:<18} {:>9} {:>9} {:>9} {:>10}  negative test R2",
                "estimator", "train R2", "test R2", "R2 drop", "test RMSE"
            );
            for s in &self.estimator_summary {
                let _ = writeln!(
                    out,
                    "{:<18} {:>9.4} {:>9.4} {:>9.4} {:>10.4}  {:?}",
                    s.estimator.name(),
                    s.mean_train_r2,
                    s.mean_test_r2,
                    s.mean_r2_drop,
                    s.mean_test_rmse,
                    s.negative_test_r2
                );
            }
        }
        if let Some(t) = &self.tension_model {
            let _ = writeln!(
                out,
                "\ntension model: R2 {:.4}, RMSE {:.3} N ({} fit / {} validation samples)",
                t.r_squared, t.rmse, t.fit_samples, t.validation_samples
            );
        }
        if let Some(c) = &self.control {
            let _ = writeln!(
                out,
                "\ncontrol ({:.0} s): tracking {:.3} N, targeting {:.3} N, reaching {:.3} N, tension {:.3} N",
                c.duration, c.tracking_rmse, c.targeting_rmse, c.reaching_rmse, c.tension_rmse
            );
        }
        out
    }

    /// Per-subject scores as CSV.
    pub fn write_scores_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(["subject", "estimator", "train_r2", "test_r2", "train_rmse", "test_rmse"])?;
        for s in &self.estimator_scores {
            w.write_record([
                s.subject.to_string(),
                s.estimator.name().to_string(),
                s.train_r2.to_string(),
                s.test_r2.to_string(),
                s.train_rmse.to_string(),
                s.test_rmse.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(f: impl Fn(usize) -> (f64, f64, f64)) -> TrialRecord {
        TrialRecord {
            period: 0.02,
            rows: (0..100)
                .map(|i| {
                    let (target, command, applied) = f(i);
                    TrialRow {
                        t: i as f64 * 0.02,
                        target,
                        command,
                        applied,
                        tension_command: command * 6.0,
                        tension: applied * 6.0,
                        activation: 0.3,
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn metric_examples() {
        let m = compute_metrics(&record(|i| (2.0, 1.0 + i as f64 * 0.01, 1.0 + i as f64 * 0.01))).unwrap();
        assert_eq!(m.tracking_rmse, 0.0);
        let m = compute_metrics(&record(|_| (4.0, 4.0, 4.0))).unwrap();
        assert_eq!((m.tracking_rmse, m.targeting_rmse, m.reaching_rmse), (0.0, 0.0, 0.0));
        let m = compute_metrics(&record(|i| {
            let p = if i < 50 { 2.0 } else { 4.8 };
            (p, p, p + 0.5)
        }))
        .unwrap();
        assert!((m.reaching_rmse - 0.5).abs() < 1e-12);
        assert!(compute_metrics(&TrialRecord::default()).is_err());
    }

    #[test]
    fn time_shift_invariance() {
        let a = record(|i| (2.0, (i as f64).sin() + 2.0, (i as f64).cos() + 2.0));
        let mut b = a.clone();
        for r in &mut b.rows {
            r.t += 123.4;
        }
        assert_eq!(compute_metrics(&a).unwrap(), compute_metrics(&b).unwrap());
    }

    #[test]
    fn record_csv_round_trip() {
        let a = record(|i| (2.0, i as f64 / 7.0, i as f64 / 9.0));
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"t,target_N,command_N,applied_N,tension_cmd_N,tension_N,activation\n"));
        assert_eq!(TrialRecord::read_csv(&buf[..], 0.02).unwrap(), a);
    }

    #[test]
    fn report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = MetricsReport::new(4);
        r.estimator_scores.push(EstimatorScore {
            subject: 0,
            estimator: EstimatorKind::Clstm,
            train_r2: 0.9,
            test_r2: -0.1,
            train_rmse: 0.05,
            test_rmse: 0.2,
        });
        r.estimator_summary = summarize(&r.estimator_scores, &EstimatorKind::ALL);
        assert_eq!(r.estimator_summary.len(), 1);
        assert_eq!(r.estimator_summary[0].negative_test_r2, vec![0]);
        let mut merged = MetricsReport::new(4);
        merged.control = Some(compute_metrics(&record(|_| (1.0, 1.0, 1.0))).unwrap());
        merged.merge(r.clone());
        assert_eq!(merged.estimator_scores, r.estimator_scores);
        assert!(merged.control.is_some() && merged.render().contains("clstm"));
        let path = dir.path().join("r.json");
        r.save(&path).unwrap();
        assert_eq!(MetricsReport::load(&path).unwrap(), r);
    }
}
