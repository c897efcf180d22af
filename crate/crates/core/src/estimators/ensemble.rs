use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::tree::RegressionTree;
use crate::estimators::{Dataset, FeatureVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    RandomForest,
    GradientBoosting,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub bags: usize,
    pub trees_per_bag: usize,
    pub max_depth: usize,
    /// Shrinkage; only used by gradient boosting.
    pub learning_rate: f64,
}

impl TreeParams {
    pub fn random_forest() -> Self {
        TreeParams {
            bags: 10,
            trees_per_bag: 20,
            max_depth: 8,
            learning_rate: 1.0,
        }
    }

    pub fn gradient_boosting() -> Self {
        TreeParams {
            bags: 10,
            trees_per_bag: 25,
            max_depth: 3,
            learning_rate: 0.1,
        }
    }

    pub fn default_for(kind: EnsembleKind) -> Self {
        match kind {
            EnsembleKind::RandomForest => Self::random_forest(),
            EnsembleKind::GradientBoosting => Self::gradient_boosting(),
        }
    }
}

/// One bagged base learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "bag", rename_all = "snake_case")]
pub enum Bag {
    /// Trees each grown on a bootstrap of the bag sample; predictions averaged.
    Forest { trees: Vec<RegressionTree> },
    /// Least-squares boosting from the bag-sample mean.
    Boosted {
        init: f64,
        learning_rate: f64,
        trees: Vec<RegressionTree>,
    },
}

impl Bag {
    pub fn predict(&self, x: &[f64; 2]) -> f64 {
        match self {
            Bag::Forest { trees } => {
                trees.iter().map(|t| t.predict(x)).sum::<f64>() / trees.len() as f64
            }
            Bag::Boosted {
                init,
                learning_rate,
                trees,
            } => init + learning_rate * trees.iter().map(|t| t.predict(x)).sum::<f64>(),
        }
    }
}

/// Bootstrap-aggregated tree ensemble: the prediction is the arithmetic mean
/// of the bag predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaggedTreeEnsemble {
    #[serde(rename = "ensemble")]
    pub kind: EnsembleKind,
    pub params: TreeParams,
    pub seed: u64,
    bags: Vec<Bag>,
}

impl BaggedTreeEnsemble {
    pub fn from_bags(kind: EnsembleKind, params: TreeParams, seed: u64, bags: Vec<Bag>) -> Self {
        BaggedTreeEnsemble {
            kind,
            params,
            seed,
            bags,
        }
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn predict(&self, x: &FeatureVector) -> Result<f64> {
        if self.bags.is_empty() {
            return Err(Error::Untrained);
        }
        let x = x.as_array();
        Ok(self.bags.iter().map(|b| b.predict(&x)).sum::<f64>() / self.bags.len() as f64)
    }
}

fn bootstrap(rng: &mut ChaCha8Rng, pool: &[usize]) -> Vec<usize> {
    (0..pool.len())
        .map(|_| pool[rng.random_range(0..pool.len())])
        .collect()
}

/// Fits `params.bags` base learners, each on its own bootstrap resample of
/// the training set. Deterministic in `seed`.
pub fn fit_bagged_trees(
    train: &Dataset,
    kind: EnsembleKind,
    params: TreeParams,
    seed: u64,
) -> Result<BaggedTreeEnsemble> {
    let n = train.len();
    if n < 10 {
        return Err(Error::EmptyDataset(format!(
            "tree ensembles need >= 10 samples, got {n}"
        )));
    }
    if params.bags == 0 || params.trees_per_bag == 0 {
        return Err(Error::Config("ensembles need at least one bag and one tree".into()));
    }
    let x: Vec<[f64; 2]> = train.features.iter().map(FeatureVector::as_array).collect();
    let y = &train.targets;
    let all: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut bags = Vec::with_capacity(params.bags);
    for _ in 0..params.bags {
        let sample = bootstrap(&mut rng, &all);
        let bag = match kind {
            EnsembleKind::RandomForest => {
                let trees = (0..params.trees_per_bag)
                    .map(|_| {
                        let rows = bootstrap(&mut rng, &sample);
                        RegressionTree::fit(&x, y, &rows, params.max_depth)
                    })
                    .collect();
                Bag::Forest { trees }
            }
            EnsembleKind::GradientBoosting => {
                let init = sample.iter().map(|&r| y[r]).sum::<f64>() / n as f64;
                // Residuals are indexed by row; duplicate rows share a residual.
                let mut current = vec![init; n];
                let mut residual = vec![0.0; n];
                let mut trees = Vec::with_capacity(params.trees_per_bag);
                for _ in 0..params.trees_per_bag {
                    for &r in &sample {
                        residual[r] = y[r] - current[r];
                    }
                    let tree = RegressionTree::fit(&x, &residual, &sample, params.max_depth);
                    for r in 0..n {
                        current[r] += params.learning_rate * tree.predict(&x[r]);
                    }
                    trees.push(tree);
                }
                Bag::Boosted {
                    init,
                    learning_rate: params.learning_rate,
                    trees,
                }
            }
        };
        bags.push(bag);
    }
    Ok(BaggedTreeEnsemble::from_bags(kind, params, seed, bags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{fit_linear, metrics::rmse};

    fn staircase(n: usize) -> Dataset {
        let features = (0..n)
            .map(|i| FeatureVector {
                t: i as f64,
                flexor: (i as f64 * 0.618).fract(),
                extensor: (i as f64 * 0.414).fract() * 0.3,
            })
            .collect::<Vec<_>>();
        let targets = features
            .iter()
            .map(|f| (f.flexor * 4.0).floor() * 0.2)
            .collect();
        Dataset::new(1, "train", features, targets).unwrap()
    }

    #[test]
    fn averaging_rule() {
        let bags = vec![
            Bag::Forest {
                trees: vec![RegressionTree::constant(0.2)],
            },
            Bag::Forest {
                trees: vec![RegressionTree::constant(0.4)],
            },
        ];
        let e = BaggedTreeEnsemble::from_bags(
            EnsembleKind::RandomForest,
            TreeParams::random_forest(),
            0,
            bags,
        );
        let x = FeatureVector { t: 0.0, flexor: 0.1, extensor: 0.1 };
        assert!((e.predict(&x).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn single_bag_is_identity() {
        let d = staircase(200);
        for kind in [EnsembleKind::RandomForest, EnsembleKind::GradientBoosting] {
            let params = TreeParams {
                bags: 1,
                ..TreeParams::default_for(kind)
            };
            let e = fit_bagged_trees(&d, kind, params, 3).unwrap();
            for x in &d.features {
                assert_eq!(e.predict(x).unwrap(), e.bags()[0].predict(&x.as_array()));
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let d = staircase(150);
        for kind in [EnsembleKind::RandomForest, EnsembleKind::GradientBoosting] {
            let p = TreeParams::default_for(kind);
            let a = fit_bagged_trees(&d, kind, p, 11).unwrap();
            let b = fit_bagged_trees(&d, kind, p, 11).unwrap();
            let c = fit_bagged_trees(&d, kind, p, 12).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, c);
        }
    }

    #[test]
    fn steps_beat_a_line() {
        let d = staircase(300);
        let lin = fit_linear(&d).unwrap();
        let lin_pred: Vec<f64> = d.features.iter().map(|x| lin.predict(x)).collect();
        let lin_rmse = rmse(&d.targets, &lin_pred).unwrap();
        for kind in [EnsembleKind::RandomForest, EnsembleKind::GradientBoosting] {
            let e = fit_bagged_trees(&d, kind, TreeParams::default_for(kind), 5).unwrap();
            let pred: Vec<f64> = d.features.iter().map(|x| e.predict(x).unwrap()).collect();
            assert!(rmse(&d.targets, &pred).unwrap() <= lin_rmse, "{kind:?}");
        }
    }

    #[test]
    fn errors() {
        let d = staircase(5);
        assert!(matches!(
            fit_bagged_trees(&d, EnsembleKind::RandomForest, TreeParams::random_forest(), 0),
            Err(Error::EmptyDataset(_))
        ));
        let empty = BaggedTreeEnsemble::from_bags(
            EnsembleKind::GradientBoosting,
            TreeParams::gradient_boosting(),
            0,
            vec![],
        );
        assert!(matches!(empty.predict(&d.features[0]), Err(Error::Untrained)));
    }
}
