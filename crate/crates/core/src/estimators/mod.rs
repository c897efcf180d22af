//! Force estimators: linear regression, bagged tree ensembles and the
//! convolutional LSTM, plus the metrics used to compare them.

pub mod clstm;
pub mod ensemble;
pub mod linear;
pub mod metrics;
pub mod train;
pub mod tree;

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::NormalizationScale;
use crate::error::{Error, Result};

pub use clstm::{ClstmCache, ClstmModel, ClstmShape, Standardizer};
pub use ensemble::{fit_bagged_trees, BaggedTreeEnsemble, EnsembleKind, TreeParams};
pub use linear::{fit_linear, LinearModel};
pub use metrics::{r_squared, rmse};
pub use train::{train_clstm, TrainConfig, TrainReport};

/// Normalized RMS features of one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub t: f64,
    pub flexor: f64,
    pub extensor: f64,
}

impl FeatureVector {
    pub fn as_array(&self) -> [f64; 2] {
        [self.flexor, self.extensor]
    }
}

/// Time-ordered features paired with the normalized force at each window's
/// trailing edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub subject: u64,
    pub trial: String,
    pub features: Vec<FeatureVector>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn new(
        subject: u64,
        trial: &str,
        features: Vec<FeatureVector>,
        targets: Vec<f64>,
    ) -> Result<Self> {
        if features.len() != targets.len() {
            return Err(Error::LengthMismatch(features.len(), targets.len()));
        }
        for pair in features.windows(2) {
            if pair[1].t <= pair[0].t {
                return Err(Error::NonMonotonicTime(pair[1].t));
            }
        }
        let bad = |v: f64| !v.is_finite() || v < 0.0;
        if let Some(f) = features.iter().find(|f| bad(f.flexor) || bad(f.extensor)) {
            return Err(Error::Config(format!("invalid feature at t={}", f.t)));
        }
        if let Some(y) = targets.iter().find(|&&y| bad(y)) {
            return Err(Error::Config(format!("invalid force target {y}")));
        }
        Ok(Dataset {
            subject,
            trial: trial.to_string(),
            features,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn inputs(&self) -> Vec<[f64; 2]> {
        self.features.iter().map(FeatureVector::as_array).collect()
    }

    /// CSV with header `t,flexor_rms,extensor_rms,force_norm`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(["t", "flexor_rms", "extensor_rms", "force_norm"])?;
        for (f, y) in self.features.iter().zip(&self.targets) {
            w.write_record([
                f.t.to_string(),
                f.flexor.to_string(),
                f.extensor.to_string(),
                y.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, subject: u64, trial: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            t: f64,
            flexor_rms: f64,
            extensor_rms: f64,
            force_norm: f64,
        }
        let mut features = Vec::new();
        let mut targets = Vec::new();
        for row in csv::Reader::from_reader(reader).deserialize() {
            let row: Row = row?;
            features.push(FeatureVector {
                t: row.t,
                flexor: row.flexor_rms,
                extensor: row.extensor_rms,
            });
            targets.push(row.force_norm);
        }
        Dataset::new(subject, trial, features, targets)
    }
}

/// The four estimators compared in the force-estimation experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Linear,
    RandomForest,
    GradientBoosting,
    Clstm,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Linear,
        EstimatorKind::RandomForest,
        EstimatorKind::GradientBoosting,
        EstimatorKind::Clstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Linear => "linear",
            EstimatorKind::RandomForest => "random_forest",
            EstimatorKind::GradientBoosting => "gradient_boosting",
            EstimatorKind::Clstm => "clstm",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator {s:?}")))
    }
}

/// Any trained estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Linear(LinearModel),
    Trees(BaggedTreeEnsemble),
    Clstm(ClstmModel),
}

impl Model {
    pub fn kind(&self) -> EstimatorKind {
        match self {
            Model::Linear(_) => EstimatorKind::Linear,
            Model::Trees(e) => match e.kind {
                EnsembleKind::RandomForest => EstimatorKind::RandomForest,
                EnsembleKind::GradientBoosting => EstimatorKind::GradientBoosting,
            },
            Model::Clstm(_) => EstimatorKind::Clstm,
        }
    }

    /// Number of most recent feature vectors a prediction consumes.
    pub fn context_len(&self) -> usize {
        match self {
            Model::Clstm(m) => m.shape.seq_len,
            _ => 1,
        }
    }

    /// Predicts from the trailing `context_len()` entries of `history`.
    pub fn predict(&self, history: &[FeatureVector]) -> Result<f64> {
        let need = self.context_len();
        if history.len() < need {
            return Err(Error::SequenceLength {
                expected: need,
                got: history.len(),
            });
        }
        let recent = &history[history.len() - need..];
        match self {
            Model::Linear(m) => Ok(m.predict(&recent[0])),
            Model::Trees(m) => m.predict(&recent[0]),
            Model::Clstm(m) => {
                let seq: Vec<[f64; 2]> = recent.iter().map(FeatureVector::as_array).collect();
                m.predict(&seq)
            }
        }
    }

    /// Prediction for every index that has a full context; earlier indices
    /// are `None`.
    pub fn predict_series(&self, features: &[FeatureVector]) -> Result<Vec<Option<f64>>> {
        let need = self.context_len();
        (0..features.len())
            .map(|i| {
                if i + 1 < need {
                    Ok(None)
                } else {
                    self.predict(&features[..=i]).map(Some)
                }
            })
            .collect()
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A model together with everything needed to apply it to fresh EMG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub subject: u64,
    pub seed: u64,
    pub scale: NormalizationScale,
    pub model: Model,
}

impl ModelFile {
    pub fn new(subject: u64, seed: u64, scale: NormalizationScale, model: Model) -> Self {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            subject,
            seed,
            scale,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::MissingModel(format!("{}: {e}", path.display())))?;
        let doc: ModelFile = serde_json::from_reader(std::io::BufReader::new(file))?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model format version {}",
                doc.format_version
            )));
        }
        Ok(doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(t: f64, a: f64, b: f64) -> FeatureVector {
        FeatureVector {
            t,
            flexor: a,
            extensor: b,
        }
    }

    #[test]
    fn dataset_validation() {
        let ok = Dataset::new(0, "train", vec![fv(0.0, 0.1, 0.1), fv(1.0, 0.2, 0.1)], vec![0.0, 0.1]);
        assert_eq!(ok.unwrap().len(), 2);
        assert!(matches!(
            Dataset::new(0, "x", vec![fv(1.0, 0.1, 0.1), fv(1.0, 0.2, 0.1)], vec![0.0, 0.1]),
            Err(Error::NonMonotonicTime(_))
        ));
        assert!(Dataset::new(0, "x", vec![fv(0.0, -0.1, 0.1)], vec![0.0]).is_err());
        assert!(Dataset::new(0, "x", vec![fv(0.0, f64::NAN, 0.1)], vec![0.0]).is_err());
        assert!(Dataset::new(0, "x", vec![fv(0.0, 0.1, 0.1)], vec![]).is_err());
    }

    #[test]
    fn dataset_csv_round_trip() {
        let d = Dataset::new(
            3,
            "test",
            vec![fv(0.5, 0.125, 0.3), fv(0.55, 1.5, 0.0)],
            vec![0.25, 0.6000000000000001],
        )
        .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,flexor_rms,extensor_rms,force_norm\n"));
        assert_eq!(Dataset::read_csv(&buf[..], 3, "test").unwrap(), d);
    }

    #[test]
    fn model_context_and_series() {
        let m = Model::Linear(LinearModel {
            weights: [1.0, 0.0],
            intercept: 0.0,
        });
        let xs = vec![fv(0.0, 0.1, 0.0), fv(1.0, 0.2, 0.0)];
        assert_eq!(m.predict(&xs).unwrap(), 0.2);
        assert_eq!(m.predict_series(&xs).unwrap(), vec![Some(0.1), Some(0.2)]);

        let shape = ClstmShape {
            seq_len: 2,
            ..tiny_shape()
        };
        let c = Model::Clstm(ClstmModel::init(shape, 1));
        let s = c.predict_series(&xs).unwrap();
        assert!(s[0].is_none() && s[1].is_some());
        assert!(matches!(c.predict(&xs[..1]), Err(Error::SequenceLength { .. })));
    }

    fn tiny_shape() -> ClstmShape {
        ClstmShape {
            channels: 2,
            filters: 2,
            kernel: 2,
            hidden1: 2,
            hidden2: 2,
            seq_len: 4,
        }
    }

    #[test]
    fn estimator_names_parse() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.name().parse::<EstimatorKind>().unwrap(), k);
        }
        assert!("svm".parse::<EstimatorKind>().is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let scale = NormalizationScale {
            max_rms: [0.3, 0.1],
            max_force: 12.5,
        };
        let model = Model::Clstm(ClstmModel::init(tiny_shape(), 7));
        let file = ModelFile::new(2, 7, scale, model);
        file.save(&path).unwrap();
        let back = ModelFile::load(&path).unwrap();
        assert_eq!(back, file);
        let probe: Vec<FeatureVector> = (0..4).map(|i| fv(i as f64, 0.1 * i as f64, 0.05)).collect();
        assert_eq!(
            back.model.predict(&probe).unwrap(),
            file.model.predict(&probe).unwrap()
        );
        assert!(matches!(
            ModelFile::load(&dir.path().join("nope.json")),
            Err(Error::MissingModel(_))
        ));
    }

    #[test]
    fn every_model_kind_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let features: Vec<FeatureVector> = (0..80)
            .map(|i| fv(i as f64 * 0.1, (i % 9) as f64 * 0.1, (i % 4) as f64 * 0.05))
            .collect();
        let targets = features.iter().map(|f| f.flexor * f.flexor + 0.1 * f.extensor).collect();
        let data = Dataset::new(0, "train", features, targets).unwrap();
        let scale = NormalizationScale {
            max_rms: [1.0, 1.0],
            max_force: 10.0,
        };
        let models = [
            Model::Linear(fit_linear(&data).unwrap()),
            Model::Trees(fit_bagged_trees(&data, EnsembleKind::RandomForest, TreeParams::random_forest(), 1).unwrap()),
            Model::Trees(
                fit_bagged_trees(&data, EnsembleKind::GradientBoosting, TreeParams::gradient_boosting(), 1).unwrap(),
            ),
            Model::Clstm(ClstmModel::init(tiny_shape(), 3)),
        ];
        for model in models {
            let path = dir.path().join(format!("{}.json", model.kind().name()));
            let file = ModelFile::new(0, 1, scale, model);
            file.save(&path).unwrap();
            let back = ModelFile::load(&path).unwrap();
            assert_eq!(back, file);
            assert_eq!(
                back.model.predict_series(&data.features).unwrap(),
                file.model.predict_series(&data.features).unwrap()
            );
        }
    }
}
