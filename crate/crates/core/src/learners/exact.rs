//! Exact-frequency learners for discrete features: the saturated fit that
//! returns the conditional mean (or class frequency) of the training rows
//! sharing the query's exact feature tuple. Unseen tuples fall back to the
//! global mean.

use std::collections::HashMap;

use super::{FeatureMatrix, ProbClassifier, Regressor};
use crate::error::Result;

fn key_of(row: &[f64]) -> Vec<u64> {
    row.iter().map(|v| v.to_bits()).collect()
}

#[derive(Debug, Clone)]
pub struct ExactFrequencyRegressor {
    table: HashMap<Vec<u64>, (f64, f64)>,
    fallback: f64,
}

impl ExactFrequencyRegressor {
    pub fn fit(features: &FeatureMatrix, targets: &[f64]) -> Result<Self> {
        let mut table: HashMap<Vec<u64>, (f64, f64)> = HashMap::new();
        for (i, &t) in targets.iter().enumerate() {
            let row: Vec<f64> = features.raw().row(i).to_vec();
            let e = table.entry(key_of(&row)).or_insert((0.0, 0.0));
            e.0 += t;
            e.1 += 1.0;
        }
        let fallback = targets.iter().sum::<f64>() / targets.len() as f64;
        Ok(ExactFrequencyRegressor { table, fallback })
    }
}

impl Regressor for ExactFrequencyRegressor {
    fn predict(&self, row: &[f64]) -> f64 {
        self.table
            .get(&key_of(row))
            .map_or(self.fallback, |(s, c)| s / c)
    }
}

#[derive(Debug, Clone)]
pub struct ExactFrequencyClassifier {
    inner: ExactFrequencyRegressor,
}

impl ExactFrequencyClassifier {
    pub fn fit(features: &FeatureMatrix, labels: &[u8]) -> Result<Self> {
        let targets: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
        Ok(ExactFrequencyClassifier {
            inner: ExactFrequencyRegressor::fit(features, &targets)?,
        })
    }
}

impl ProbClassifier for ExactFrequencyClassifier {
    fn predict_proba(&self, row: &[f64]) -> f64 {
        self.inner.predict(row).clamp(1e-12, 1.0 - 1e-12)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn returns_cell_means_and_falls_back() {
        let f = FeatureMatrix::new(array![[0.0], [0.0], [1.0]]).unwrap();
        let model = ExactFrequencyRegressor::fit(&f, &[1.0, 3.0, 10.0]).unwrap();
        assert_eq!(model.predict(&[0.0]), 2.0);
        assert_eq!(model.predict(&[1.0]), 10.0);
        // unseen tuple: global mean
        assert!((model.predict(&[2.0]) - 14.0 / 3.0).abs() < 1e-12);
    }
}
