//! Supervised learners behind the nuisance fits.
//!
//! Everything the estimators need is a probabilistic binary classifier or a
//! scalar regressor; the concrete model is interchangeable. Provided:
//!
//! * ridge regression (exact solve of the penalized normal equations),
//! * logistic regression by iteratively reweighted least squares,
//! * gradient-boosted shallow trees for both tasks,
//! * exact-frequency lookups for discrete data (the saturated fit).
//!
//! Features are standardized internally at fit time and the intercept is
//! never penalized.

mod boost;
mod exact;
mod linear;

pub use boost::{BoostClassifier, BoostRegressor};
pub use exact::{ExactFrequencyClassifier, ExactFrequencyRegressor};
pub use linear::{LogisticClassifier, RidgeRegressor};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::derive_seed;

/// Scalar regressor over raw (unstandardized) feature rows.
pub trait Regressor: Send + Sync {
    fn predict(&self, row: &[f64]) -> f64;
}

/// Binary classifier emitting P(label = 1 | row) in (0, 1).
pub trait ProbClassifier: Send + Sync {
    fn predict_proba(&self, row: &[f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerKind {
    /// Ridge regressions with logistic classifiers.
    #[default]
    Ridge,
    /// Alias of `Ridge` emphasizing the classifier side.
    Logistic,
    /// Gradient-boosted shallow trees for both tasks.
    #[serde(alias = "boosted-stumps")]
    Stumps,
    /// Conditional means/frequencies by exact feature-tuple lookup. Only
    /// sensible for discrete features.
    ExactFrequency,
}

/// Knobs for all learner kinds. Tree fields are ignored by the linear
/// learners and vice versa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub kind: LearnerKind,
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub depth: usize,
    pub n_trees: usize,
    pub learning_rate: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            kind: LearnerKind::Ridge,
            l2: 1.0,
            max_iter: 100,
            tol: 1e-8,
            depth: 3,
            n_trees: 50,
            learning_rate: 0.1,
        }
    }
}

impl LearnerConfig {
    pub fn ridge() -> Self {
        LearnerConfig::default()
    }

    pub fn stumps() -> Self {
        LearnerConfig {
            kind: LearnerKind::Stumps,
            ..LearnerConfig::default()
        }
    }

    pub fn exact_frequency() -> Self {
        LearnerConfig {
            kind: LearnerKind::ExactFrequency,
            ..LearnerConfig::default()
        }
    }

    pub fn with_kind(mut self, kind: LearnerKind) -> Self {
        self.kind = kind;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.l2 < 0.0 {
            return Err(Error::invalid("l2 penalty must be non-negative"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        if self.kind == LearnerKind::Stumps {
            if self.depth == 0 || self.n_trees == 0 {
                return Err(Error::invalid("tree depth and count must be positive"));
            }
            if !(self.learning_rate > 0.0) {
                return Err(Error::invalid("learning rate must be positive"));
            }
        }
        Ok(())
    }
}

/// A feature matrix with column standardization parameters captured at fit
/// time. Constant columns get scale 1 so standardization never divides by 0.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    raw: Array2<f64>,
    means: Vec<f64>,
    scales: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(raw: Array2<f64>) -> Result<Self> {
        if raw.nrows() == 0 {
            return Err(Error::invalid("feature matrix must have rows"));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature matrix contains non-finite entries"));
        }
        let n = raw.nrows() as f64;
        let mut means = Vec::with_capacity(raw.ncols());
        let mut scales = Vec::with_capacity(raw.ncols());
        for col in raw.columns() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let s = var.sqrt();
            means.push(m);
            scales.push(if s > 1e-12 { s } else { 1.0 });
        }
        Ok(FeatureMatrix { raw, means, scales })
    }

    pub fn n(&self) -> usize {
        self.raw.nrows()
    }

    pub fn d(&self) -> usize {
        self.raw.ncols()
    }

    pub fn raw(&self) -> &Array2<f64> {
        &self.raw
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Standardized copy with a leading intercept column of ones.
    fn standardized_with_intercept(&self) -> Array2<f64> {
        let (n, d) = (self.n(), self.d());
        let mut out = Array2::ones((n, d + 1));
        for j in 0..d {
            let m = self.means[j];
            let s = self.scales[j];
            for i in 0..n {
                out[[i, j + 1]] = (self.raw[[i, j]] - m) / s;
            }
        }
        out
    }

}

pub fn fit_regressor(
    features: &FeatureMatrix,
    targets: &[f64],
    config: &LearnerConfig,
) -> Result<Box<dyn Regressor>> {
    config.validate()?;
    if targets.len() != features.n() {
        return Err(Error::invalid("targets length must match feature rows"));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("targets contain non-finite values"));
    }
    Ok(match config.kind {
        LearnerKind::Ridge | LearnerKind::Logistic => {
            Box::new(RidgeRegressor::fit(features, targets, config)?)
        }
        LearnerKind::Stumps => Box::new(BoostRegressor::fit(features, targets, config)?),
        LearnerKind::ExactFrequency => {
            Box::new(ExactFrequencyRegressor::fit(features, targets)?)
        }
    })
}

pub fn fit_classifier(
    features: &FeatureMatrix,
    labels: &[u8],
    config: &LearnerConfig,
) -> Result<Box<dyn ProbClassifier>> {
    config.validate()?;
    if labels.len() != features.n() {
        return Err(Error::invalid("labels length must match feature rows"));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::invalid("labels must be 0/1"));
    }
    let ones = labels.iter().filter(|&&l| l == 1).count();
    if ones == 0 || ones == labels.len() {
        return Err(Error::DegenerateGroup(
            "classifier training data has a single class".into(),
        ));
    }
    Ok(match config.kind {
        LearnerKind::Ridge | LearnerKind::Logistic => {
            Box::new(LogisticClassifier::fit(features, labels, config)?)
        }
        LearnerKind::Stumps => Box::new(BoostClassifier::fit(features, labels, config)?),
        LearnerKind::ExactFrequency => {
            Box::new(ExactFrequencyClassifier::fit(features, labels)?)
        }
    })
}

/// Deterministic k-fold mean squared error of a regressor config.
pub fn kfold_mse(
    features: &FeatureMatrix,
    targets: &[f64],
    config: &LearnerConfig,
    k: usize,
    seed: u64,
) -> Result<f64> {
    kfold_score(features.n(), k, seed, |train, test| {
        let sub = subset_matrix(features.raw(), train)?;
        let t: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
        let model = fit_regressor(&sub, &t, config)?;
        let mut total = 0.0;
        for &i in test {
            let row: Vec<f64> = features.raw().row(i).to_vec();
            let err = model.predict(&row) - targets[i];
            total += err * err;
        }
        Ok((total, test.len()))
    })
}

/// Deterministic k-fold Brier score of a classifier config.
pub fn kfold_brier(
    features: &FeatureMatrix,
    labels: &[u8],
    config: &LearnerConfig,
    k: usize,
    seed: u64,
) -> Result<f64> {
    kfold_score(features.n(), k, seed, |train, test| {
        let sub = subset_matrix(features.raw(), train)?;
        let t: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
        let model = fit_classifier(&sub, &t, config)?;
        let mut total = 0.0;
        for &i in test {
            let row: Vec<f64> = features.raw().row(i).to_vec();
            let err = model.predict_proba(&row) - f64::from(labels[i]);
            total += err * err;
        }
        Ok((total, test.len()))
    })
}

fn kfold_score(
    n: usize,
    k: usize,
    seed: u64,
    mut fold_fn: impl FnMut(&[usize], &[usize]) -> Result<(f64, usize)>,
) -> Result<f64> {
    if k < 2 || k > n {
        return Err(Error::invalid("k must lie in [2, n]"));
    }
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xF01D));
    perm.shuffle(&mut rng);
    let mut total = 0.0;
    let mut count = 0usize;
    for fold in 0..k {
        let test: Vec<usize> = perm
            .iter()
            .enumerate()
            .filter(|(pos, _)| pos % k == fold)
            .map(|(_, &i)| i)
            .collect();
        let train: Vec<usize> = perm
            .iter()
            .enumerate()
            .filter(|(pos, _)| pos % k != fold)
            .map(|(_, &i)| i)
            .collect();
        let (sum, m) = fold_fn(&train, &test)?;
        total += sum;
        count += m;
    }
    Ok(total / count as f64)
}

fn subset_matrix(raw: &Array2<f64>, rows: &[usize]) -> Result<FeatureMatrix> {
    let mut out = Array2::zeros((rows.len(), raw.ncols()));
    for (r, &i) in rows.iter().enumerate() {
        out.row_mut(r).assign(&raw.row(i));
    }
    FeatureMatrix::new(out)
}


#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn line_data(n: usize) -> (FeatureMatrix, Vec<f64>) {
        let mut x = Array2::zeros((n, 1));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let v = i as f64 / n as f64;
            x[[i, 0]] = v;
            y.push(2.0 * v);
        }
        (FeatureMatrix::new(x).unwrap(), y)
    }

    #[test]
    fn constant_target_is_fit_exactly() {
        let (f, _) = line_data(50);
        let y = vec![3.25; 50];
        for kind in [LearnerKind::Ridge, LearnerKind::Stumps, LearnerKind::ExactFrequency] {
            let cfg = LearnerConfig::default().with_kind(kind);
            let model = fit_regressor(&f, &y, &cfg).unwrap();
            let pred = model.predict(&[0.37]);
            assert!((pred - 3.25).abs() < 1e-9, "{kind:?}: {pred}");
        }
    }

    #[test]
    fn near_unpenalized_ridge_recovers_slope() {
        let (f, y) = line_data(200);
        let cfg = LearnerConfig {
            l2: 1e-10,
            ..LearnerConfig::default()
        };
        let model = fit_regressor(&f, &y, &cfg).unwrap();
        let slope = model.predict(&[1.0]) - model.predict(&[0.0]);
        assert!((slope - 2.0).abs() < 1e-8, "slope {slope}");
    }

    #[test]
    fn single_class_labels_are_rejected() {
        let (f, _) = line_data(10);
        let labels = vec![1u8; 10];
        assert!(matches!(
            fit_classifier(&f, &labels, &LearnerConfig::default()),
            Err(Error::DegenerateGroup(_))
        ));
    }

    #[test]
    fn no_signal_classifier_predicts_base_rate() {
        let mut x = Array2::zeros((100, 1));
        let mut labels = Vec::new();
        for i in 0..100 {
            x[[i, 0]] = (i % 10) as f64;
            labels.push(u8::from(i % 2 == 0));
        }
        let f = FeatureMatrix::new(x).unwrap();
        let model = fit_classifier(&f, &labels, &LearnerConfig::default()).unwrap();
        let p = model.predict_proba(&[4.0]);
        assert!((p - 0.5).abs() < 0.05, "p = {p}");
    }

    #[test]
    fn separable_logistic_is_monotone() {
        let mut x = Array2::zeros((40, 1));
        let mut labels = Vec::new();
        for i in 0..40 {
            x[[i, 0]] = i as f64;
            labels.push(u8::from(i >= 20));
        }
        let f = FeatureMatrix::new(x).unwrap();
        let model = fit_classifier(&f, &labels, &LearnerConfig::default()).unwrap();
        let mut last = 0.0;
        for t in 0..40 {
            let p = model.predict_proba(&[t as f64]);
            assert!(p > 0.0 && p < 1.0);
            assert!(p >= last, "not monotone at {t}");
            last = p;
        }
    }

    #[test]
    fn stumps_beat_ridge_on_nonlinear_target() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let n = 400;
        let mut x = Array2::zeros((n, 2));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let a: f64 = rng.gen_range(-2.0..2.0);
            let b: f64 = rng.gen_range(-2.0..2.0);
            x[[i, 0]] = a;
            x[[i, 1]] = b;
            y.push(if a * b > 0.0 { 1.0 } else { -1.0 });
        }
        let f = FeatureMatrix::new(x).unwrap();
        let train_mse = |cfg: &LearnerConfig| -> f64 {
            let model = fit_regressor(&f, &y, cfg).unwrap();
            let mut total = 0.0;
            for i in 0..n {
                let row = row_to_vec(f.raw().row(i));
                let e = model.predict(&row) - y[i];
                total += e * e;
            }
            total / n as f64
        };
        let ridge = train_mse(&LearnerConfig::ridge());
        let stumps = train_mse(&LearnerConfig {
            kind: LearnerKind::Stumps,
            n_trees: 80,
            learning_rate: 0.3,
            ..LearnerConfig::default()
        });
        assert!(
            stumps < ridge,
            "stumps {stumps} should beat ridge {ridge} on an interaction target"
        );
    }
}
