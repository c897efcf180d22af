use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::clstm::{ClstmModel, ClstmShape, Standardizer};
use crate::estimators::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub max_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub shape: ClstmShape,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            max_steps: 200,
            batch_size: 16,
            learning_rate: 3e-3,
            seed: 0,
            shape: ClstmShape::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    /// Mean squared error in standardized units on a fixed probe subset,
    /// before the first and after the last step.
    pub initial_loss: f64,
    pub final_loss: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

/// Standardized sliding-window sequences over a dataset.
struct Sequences {
    input: Vec<f64>,
    target: Vec<f64>,
    len: usize,
}

impl Sequences {
    fn new(data: &Dataset, scaler: &Standardizer, len: usize) -> Self {
        Sequences {
            input: data.features.iter().flat_map(|f| scaler.input(&f.as_array())).collect(),
            target: data.targets.iter().map(|&y| scaler.target(y)).collect(),
            len,
        }
    }

    fn count(&self) -> usize {
        (self.target.len() + 1).saturating_sub(self.len)
    }

    /// Sequence `k` ends at sample `k + len - 1`.
    fn get(&self, k: usize) -> (&[f64], f64) {
        (&self.input[2 * k..2 * (k + self.len)], self.target[k + self.len - 1])
    }
}

fn probe_loss(model: &ClstmModel, seqs: &Sequences, probe: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for &k in probe {
        let (x, y) = seqs.get(k);
        let e = model.forward_raw(x)?.output - y;
        total += e * e;
    }
    Ok(total / probe.len() as f64)
}

/// Minibatch Adam on mean squared error over sliding windows of the
/// time-ordered training features. Deterministic in `config.seed`.
pub fn train_clstm(train: &Dataset, config: &TrainConfig) -> Result<(ClstmModel, TrainReport)> {
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::Config("epochs and batch size must be >= 1".into()));
    }
    let shape = config.shape;
    if shape.seq_len < shape.kernel {
        return Err(Error::SequenceLength {
            expected: shape.kernel,
            got: shape.seq_len,
        });
    }
    let mut model = ClstmModel::init(shape, config.seed);
    model.scaler = Standardizer::fit(&train.inputs(), &train.targets);
    let seqs = Sequences::new(train, &model.scaler, shape.seq_len);
    let count = seqs.count();
    if count < config.batch_size {
        return Err(Error::EmptyDataset(format!(
            "{count} sequences of length {} cannot fill a batch of {}",
            shape.seq_len, config.batch_size
        )));
    }

    let probe: Vec<usize> = {
        let n = count.min(256);
        (0..n).map(|i| i * count / n).collect()
    };
    let initial_loss = probe_loss(&model, &seqs, &probe)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut adam = Adam::new(model.params.len(), config.learning_rate);
    let mut grad = vec![0.0; model.params.len()];
    let mut order: Vec<usize> = (0..count).collect();
    let mut steps = 0;
    'epochs: for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            if steps == config.max_steps {
                break 'epochs;
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 2.0 / batch.len() as f64;
            for &k in batch {
                let (x, y) = seqs.get(k);
                let cache = model.forward_raw(x)?;
                model.backward_into(&cache, scale * (cache.output - y), &mut grad)?;
            }
            adam.step(&mut model.params, &grad);
            steps += 1;
        }
    }

    let final_loss = probe_loss(&model, &seqs, &probe)?;
    Ok((
        model,
        TrainReport {
            steps,
            initial_loss,
            final_loss,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::FeatureVector;

    fn small_shape() -> ClstmShape {
        ClstmShape {
            channels: 2,
            filters: 8,
            kernel: 3,
            hidden1: 6,
            hidden2: 4,
            seq_len: 10,
        }
    }

    fn smooth_dataset(n: usize) -> Dataset {
        let features: Vec<FeatureVector> = (0..n)
            .map(|i| {
                let t = i as f64 * 0.05;
                FeatureVector {
                    t,
                    flexor: 0.5 + 0.4 * (t * 0.7).sin(),
                    extensor: 0.2 + 0.1 * (t * 0.3).cos(),
                }
            })
            .collect();
        let targets = features.iter().map(|f| f.flexor * f.flexor * 0.8).collect();
        Dataset::new(0, "train", features, targets).unwrap()
    }

    fn config(lr: f64, steps: usize) -> TrainConfig {
        TrainConfig {
            max_steps: steps,
            learning_rate: lr,
            seed: 4,
            shape: small_shape(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn loss_decreases() {
        let cfg = TrainConfig {
            epochs: 3,
            ..config(5e-3, 60)
        };
        let (_, report) = train_clstm(&smooth_dataset(400), &cfg).unwrap();
        assert_eq!(report.steps, 60);
        assert!(report.final_loss <= report.initial_loss, "{report:?}");
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let d = smooth_dataset(200);
        let (trained, _) = train_clstm(&d, &config(0.0, 10)).unwrap();
        let fresh = ClstmModel::init(small_shape(), 4);
        assert_eq!(trained.params, fresh.params);
    }

    #[test]
    fn same_seed_same_weights() {
        let d = smooth_dataset(200);
        let (a, _) = train_clstm(&d, &config(1e-3, 5)).unwrap();
        let (b, _) = train_clstm(&d, &config(1e-3, 5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_epoch_caps_steps() {
        // 200 samples, L=10 -> 191 sequences -> 12 batches of 16.
        let (_, report) = train_clstm(&smooth_dataset(200), &config(1e-3, 1000)).unwrap();
        assert_eq!(report.steps, 12);
    }

    #[test]
    fn too_little_data() {
        let r = train_clstm(&smooth_dataset(20), &config(1e-3, 5));
        assert!(matches!(r, Err(Error::EmptyDataset(_))));
    }
}
