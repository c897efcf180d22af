use std::fs::File;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::estimators::{
    fit_bagged_trees, fit_linear, r_squared, rmse, train_clstm, Dataset, EnsembleKind, EstimatorKind, Model,
    ModelFile, TrainConfig,
};
use crate::harness::config::ExperimentConfig;
use crate::harness::metrics::{summarize, EstimatorScore, MetricsReport};
use crate::harness::session::{derive_seed, stream, subject_data, SubjectData};

/// Fits one estimator on a training set.
pub fn fit_estimator(cfg: &ExperimentConfig, kind: EstimatorKind, train: &Dataset, seed: u64) -> Result<Model> {
    Ok(match kind {
        EstimatorKind::Linear => Model::Linear(fit_linear(train)?),
        EstimatorKind::RandomForest => Model::Trees(fit_bagged_trees(
            train,
            EnsembleKind::RandomForest,
            cfg.tree_params(kind),
            seed,
        )?),
        EstimatorKind::GradientBoosting => Model::Trees(fit_bagged_trees(
            train,
            EnsembleKind::GradientBoosting,
            cfg.tree_params(kind),
            seed,
        )?),
        EstimatorKind::Clstm => {
            let train_cfg = TrainConfig { seed, ..cfg.train };
            Model::Clstm(train_clstm(train, &train_cfg)?.0)
        }
    })
}

/// R² and RMSE of `model` on `data`, from index `start` on.
pub fn score(model: &Model, data: &Dataset, start: usize) -> Result<(f64, f64)> {
    let predicted: Vec<f64> = model.predict_series(&data.features)?[start..]
        .iter()
        .map(|p| p.expect("start is past the model context"))
        .collect();
    let actual = &data.targets[start..];
    Ok((r_squared(actual, &predicted)?, rmse(actual, &predicted)?))
}

/// Per-subject models and datasets, kept for persistence by the caller.
pub struct EstimationOutcome {
    pub report: MetricsReport,
    pub subjects: Vec<SubjectData>,
    pub models: Vec<(u64, Model)>,
}

fn model_seed(cfg: &ExperimentConfig, subject: u64, kind: EstimatorKind) -> u64 {
    derive_seed(cfg.seed, subject, stream::MODEL + kind as u64)
}

/// Scores fitted models of one subject on its training and test trials.
/// All models are scored on the same samples: those with a full context
/// for the longest-context model.
pub fn score_subject(subject: u64, models: &[&Model], train: &Dataset, test: &Dataset) -> Result<Vec<EstimatorScore>> {
    let start = models.iter().map(|m| m.context_len()).max().unwrap_or(1) - 1;
    models
        .iter()
        .map(|model| {
            let (train_r2, train_rmse) = score(model, train, start)?;
            let (test_r2, test_rmse) = score(model, test, start)?;
            Ok(EstimatorScore {
                subject,
                estimator: model.kind(),
                train_r2,
                test_r2,
                train_rmse,
                test_rmse,
            })
        })
        .collect()
}

/// Trains every configured estimator on each subject's first trial and
/// scores it on the second.
pub fn run_force_estimation_experiment(cfg: &ExperimentConfig) -> Result<EstimationOutcome> {
    cfg.validate()?;
    let mut scores = Vec::new();
    let mut subjects = Vec::new();
    let mut models = Vec::new();
    for id in 0..cfg.subjects as u64 {
        let data = subject_data(cfg, id, &cfg.offline_signal, 2)?;
        let test = data.test.as_ref().expect("two trials recorded");
        let mut fitted = Vec::new();
        for &kind in &cfg.estimators {
            fitted.push(fit_estimator(cfg, kind, &data.train, model_seed(cfg, id, kind))?);
        }
        scores.extend(score_subject(id, &fitted.iter().collect::<Vec<_>>(), &data.train, test)?);
        models.extend(fitted.into_iter().map(|m| (id, m)));
        subjects.push(data);
    }
    let mut report = MetricsReport::new(cfg.seed);
    report.estimator_summary = summarize(&scores, &cfg.estimators);
    report.estimator_scores = scores;
    Ok(EstimationOutcome {
        report,
        subjects,
        models,
    })
}

pub fn model_path(dir: &Path, subject: u64, kind: EstimatorKind) -> PathBuf {
    dir.join("models").join(format!("subject-{subject}-{}.json", kind.name()))
}

pub fn dataset_path(dir: &Path, subject: u64, trial: &str) -> PathBuf {
    dir.join("data").join(format!("subject-{subject}-{trial}.csv"))
}

/// Writes model files, datasets, `report.json` and `scores.csv` under `dir`.
pub fn save_estimation(cfg: &ExperimentConfig, outcome: &EstimationOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("models"))?;
    std::fs::create_dir_all(dir.join("data"))?;
    for data in &outcome.subjects {
        for set in std::iter::once(&data.train).chain(&data.test) {
            set.write_csv(File::create(dataset_path(dir, data.id, &set.trial))?)?;
        }
        for (_, model) in outcome.models.iter().filter(|(id, _)| *id == data.id) {
            let kind = model.kind();
            ModelFile::new(data.id, model_seed(cfg, data.id, kind), data.scale, model.clone())
                .save(&model_path(dir, data.id, kind))?;
        }
    }
    outcome.report.save(&dir.join("report.json"))?;
    outcome.report.write_scores_csv(File::create(dir.join("scores.csv"))?)
}

/// Re-scores the models and datasets saved by [`save_estimation`].
pub fn evaluate_saved(cfg: &ExperimentConfig, dir: &Path) -> Result<MetricsReport> {
    let mut scores = Vec::new();
    for id in 0..cfg.subjects as u64 {
        let load = |trial: &str| -> Result<Dataset> {
            let path = dataset_path(dir, id, trial);
            let file = File::open(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            Dataset::read_csv(file, id, trial)
        };
        let (train, test) = (load("train")?, load("test1")?);
        let models = cfg
            .estimators
            .iter()
            .map(|&k| ModelFile::load(&model_path(dir, id, k)).map(|f| f.model))
            .collect::<Result<Vec<_>>>()?;
        scores.extend(score_subject(id, &models.iter().collect::<Vec<_>>(), &train, &test)?);
    }
    let mut report = MetricsReport::new(cfg.seed);
    report.estimator_summary = summarize(&scores, &cfg.estimators);
    report.estimator_scores = scores;
    Ok(report)
}
