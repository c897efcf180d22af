use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{Dataset, FeatureVector};

/// `force = w_flexor * flexor + w_extensor * extensor + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: [f64; 2],
    pub intercept: f64,
}

impl LinearModel {
    pub fn predict(&self, x: &FeatureVector) -> f64 {
        self.weights[0] * x.flexor + self.weights[1] * x.extensor + self.intercept
    }
}

/// Ordinary least squares via SVD. Fails when the design matrix (features
/// plus a constant column) is numerically rank deficient.
pub fn fit_linear(train: &Dataset) -> Result<LinearModel> {
    let n = train.len();
    if n < 3 {
        return Err(Error::EmptyDataset(format!("linear fit needs >= 3 samples, got {n}")));
    }
    let design = DMatrix::from_fn(n, 3, |r, c| match c {
        0 => train.features[r].flexor,
        1 => train.features[r].extensor,
        _ => 1.0,
    });
    let y = DVector::from_column_slice(&train.targets);
    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= smax * 1e-10 {
        return Err(Error::RankDeficient);
    }
    let beta = svd
        .solve(&y, smax * 1e-12)
        .map_err(|_| Error::RankDeficient)?;
    Ok(LinearModel {
        weights: [beta[0], beta[1]],
        intercept: beta[2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(points: &[(f64, f64, f64)]) -> Dataset {
        let features = points
            .iter()
            .enumerate()
            .map(|(i, &(a, b, _))| FeatureVector {
                t: i as f64,
                flexor: a,
                extensor: b,
            })
            .collect();
        Dataset::new(0, "train", features, points.iter().map(|p| p.2).collect()).unwrap()
    }

    #[test]
    fn recovers_exact_linear_data() {
        let pts: Vec<_> = (0..50)
            .map(|i| {
                let f = (i as f64 * 0.37).sin().abs();
                let e = (i as f64 * 0.11).cos().abs() * 0.4;
                (f, e, 0.7 * f + 0.1)
            })
            .collect();
        let m = fit_linear(&dataset(&pts)).unwrap();
        assert!((m.weights[0] - 0.7).abs() < 1e-6);
        assert!(m.weights[1].abs() < 1e-6);
        assert!((m.intercept - 0.1).abs() < 1e-6);
    }

    #[test]
    fn residuals_orthogonal_to_features() {
        let pts: Vec<_> = (0..200)
            .map(|i| {
                let f = ((i * 7919) % 101) as f64 / 100.0;
                let e = ((i * 104729) % 37) as f64 / 50.0;
                (f, e, 1.0 + f * f - 0.3 * e + 0.05 * ((i % 5) as f64))
            })
            .collect();
        let d = dataset(&pts);
        let m = fit_linear(&d).unwrap();
        let res: Vec<f64> = d
            .features
            .iter()
            .zip(&d.targets)
            .map(|(x, y)| y - m.predict(x))
            .collect();
        let dot = |g: &dyn Fn(&FeatureVector) -> f64| -> f64 {
            d.features.iter().zip(&res).map(|(x, r)| g(x) * r).sum()
        };
        assert!(dot(&|x| x.flexor).abs() < 1e-8);
        assert!(dot(&|x| x.extensor).abs() < 1e-8);
        assert!(dot(&|_| 1.0).abs() < 1e-8);
    }

    #[test]
    fn repeated_point_is_rank_deficient() {
        let d = dataset(&[(0.3, 0.1, 0.2); 10]);
        assert!(matches!(fit_linear(&d), Err(Error::RankDeficient)));
        let d = dataset(&[(0.3, 0.1, 0.2); 2]);
        assert!(matches!(fit_linear(&d), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn predict_is_dot_product() {
        let m = LinearModel {
            weights: [0.5, 0.5],
            intercept: 0.0,
        };
        let x = FeatureVector {
            t: 0.0,
            flexor: 0.4,
            extensor: 0.2,
        };
        assert!((m.predict(&x) - 0.3).abs() < 1e-15);
    }
}
