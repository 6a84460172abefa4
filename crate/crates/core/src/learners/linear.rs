//! Ridge regression and IRLS logistic regression.
//!
//! Both solve small symmetric positive definite systems by Cholesky; feature
//! counts here are tens at most, so forming the Gram matrix directly is the
//! right trade.

use ndarray::{Array1, Array2};

use super::{FeatureMatrix, LearnerConfig, ProbClassifier, Regressor};
use crate::error::{Error, Result};

/// In-place Cholesky solve of A x = b for symmetric positive definite A.
/// Fails when a pivot is not positive, which surfaces rank deficiency of the
/// unpenalized normal equations.
fn cholesky_solve(a: &mut Array2<f64>, b: &mut [f64]) -> Result<()> {
    let n = b.len();
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= a[[j, k]] * a[[j, k]];
        }
        if diag <= 1e-300 {
            return Err(Error::RankDeficient(format!(
                "non-positive pivot at column {j}; add l2 regularization"
            )));
        }
        let diag = diag.sqrt();
        a[[j, j]] = diag;
        for i in (j + 1)..n {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= a[[i, k]] * a[[j, k]];
            }
            a[[i, j]] = v / diag;
        }
    }
    // forward solve L u = b
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= a[[i, k]] * b[k];
        }
        b[i] = v / a[[i, i]];
    }
    // backward solve L^T x = u
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in (i + 1)..n {
            v -= a[[k, i]] * b[k];
        }
        b[i] = v / a[[i, i]];
    }
    Ok(())
}

/// Ridge on standardized features with an unpenalized intercept.
#[derive(Debug, Clone)]
pub struct RidgeRegressor {
    beta: Vec<f64>,
    means: Vec<f64>,
    scales: Vec<f64>,
}

impl RidgeRegressor {
    pub fn fit(features: &FeatureMatrix, targets: &[f64], config: &LearnerConfig) -> Result<Self> {
        let x = features.standardized_with_intercept();
        let d = x.ncols();
        let mut gram = x.t().dot(&x);
        for j in 1..d {
            gram[[j, j]] += config.l2;
        }
        let mut rhs: Vec<f64> = (0..d)
            .map(|j| x.column(j).iter().zip(targets).map(|(a, y)| a * y).sum())
            .collect();
        cholesky_solve(&mut gram, &mut rhs)?;
        Ok(RidgeRegressor {
            beta: rhs,
            means: features.means().to_vec(),
            scales: features.scales().to_vec(),
        })
    }

    /// Max-norm residual of the penalized normal equations, relative to the
    /// right-hand side scale.
    pub fn normal_equation_residual(
        &self,
        features: &FeatureMatrix,
        targets: &[f64],
        l2: f64,
    ) -> f64 {
        let x = features.standardized_with_intercept();
        let d = x.ncols();
        let pred: Vec<f64> = (0..x.nrows())
            .map(|i| {
                self.beta
                    .iter()
                    .enumerate()
                    .map(|(j, b)| b * x[[i, j]])
                    .sum::<f64>()
            })
            .collect();
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for j in 0..d {
            let grad: f64 = x
                .column(j)
                .iter()
                .zip(targets.iter().zip(&pred))
                .map(|(a, (y, p))| a * (y - p))
                .sum::<f64>()
                - if j > 0 { l2 * self.beta[j] } else { 0.0 };
            let rhs: f64 = x.column(j).iter().zip(targets).map(|(a, y)| a * y).sum();
            worst = worst.max(grad.abs());
            scale = scale.max(rhs.abs());
        }
        worst / scale.max(1.0)
    }
}

impl Regressor for RidgeRegressor {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut acc = self.beta[0];
        for j in 0..self.means.len() {
            acc += self.beta[j + 1] * (row[j] - self.means[j]) / self.scales[j];
        }
        acc
    }
}

/// L2-penalized logistic regression fit by iteratively reweighted least
/// squares with step halving, so the penalized negative log-likelihood
/// decreases monotonically until tolerance.
#[derive(Debug, Clone)]
pub struct LogisticClassifier {
    beta: Vec<f64>,
    means: Vec<f64>,
    scales: Vec<f64>,
    pub iterations: usize,
    pub nll_path: Vec<f64>,
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t.clamp(-30.0, 30.0)).exp())
}

impl LogisticClassifier {
    pub fn fit(features: &FeatureMatrix, labels: &[u8], config: &LearnerConfig) -> Result<Self> {
        let x = features.standardized_with_intercept();
        let d = x.ncols();
        let y = Array1::from_iter(labels.iter().map(|&l| f64::from(l)));
        let mut beta = Array1::zeros(d);
        let penalized_nll = |eta: &Array1<f64>, beta: &Array1<f64>| -> f64 {
            let mut nll = 0.0;
            for (&e, &yi) in eta.iter().zip(&y) {
                // log(1 + e^eta) - y*eta, computed stably
                nll += if e > 0.0 {
                    e + (-e).exp().ln_1p() - yi * e
                } else {
                    e.exp().ln_1p() - yi * e
                };
            }
            nll + 0.5 * config.l2 * beta.iter().skip(1).map(|b| b * b).sum::<f64>()
        };
        let mut eta = x.dot(&beta);
        let mut nll = penalized_nll(&eta, &beta);
        let mut nll_path = vec![nll];
        let mut iterations = 0;
        for _ in 0..config.max_iter {
            iterations += 1;
            let p = eta.mapv(sigmoid);
            // gradient of the penalized NLL (to be driven to zero)
            let mut grad = x.t().dot(&(&p - &y));
            for j in 1..d {
                grad[j] += config.l2 * beta[j];
            }
            let s = p.mapv(|pi| (pi * (1.0 - pi)).max(1e-10));
            let xs = &x * &s.view().insert_axis(ndarray::Axis(1));
            let mut hess = xs.t().dot(&x);
            for j in 1..d {
                hess[[j, j]] += config.l2;
            }
            let mut step: Vec<f64> = grad.to_vec();
            cholesky_solve(&mut hess, &mut step)?;
            let step = Array1::from_vec(step);
            // step halving keeps the objective decreasing
            let mut t = 1.0;
            let mut improved = false;
            for _ in 0..30 {
                let cand = &beta - &(&step * t);
                let cand_eta = x.dot(&cand);
                let cand_nll = penalized_nll(&cand_eta, &cand);
                if cand_nll <= nll {
                    let delta = nll - cand_nll;
                    beta = cand;
                    eta = cand_eta;
                    nll = cand_nll;
                    nll_path.push(nll);
                    improved = delta > config.tol;
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                break;
            }
        }
        Ok(LogisticClassifier {
            beta: beta.to_vec(),
            means: features.means().to_vec(),
            scales: features.scales().to_vec(),
            iterations,
            nll_path,
        })
    }
}

impl ProbClassifier for LogisticClassifier {
    fn predict_proba(&self, row: &[f64]) -> f64 {
        let mut eta = self.beta[0];
        for j in 0..self.means.len() {
            eta += self.beta[j + 1] * (row[j] - self.means[j]) / self.scales[j];
        }
        sigmoid(eta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn ridge_satisfies_normal_equations() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let n = 120;
        let mut x = Array2::zeros((n, 3));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            let c: f64 = rng.gen_range(-1.0..1.0);
            x[[i, 0]] = a;
            x[[i, 1]] = b;
            x[[i, 2]] = c;
            y.push(1.5 * a - 0.5 * b + 0.25 * c + rng.gen_range(-0.1..0.1));
        }
        let f = FeatureMatrix::new(x).unwrap();
        let cfg = LearnerConfig {
            l2: 0.1,
            ..LearnerConfig::default()
        };
        let model = RidgeRegressor::fit(&f, &y, &cfg).unwrap();
        let res = model.normal_equation_residual(&f, &y, 0.1);
        assert!(res < 1e-8, "residual {res}");
    }

    #[test]
    fn unpenalized_singular_system_reports_rank_error() {
        // duplicated column makes X'X singular with l2 = 0
        let mut x = Array2::zeros((20, 2));
        let mut y = Vec::new();
        for i in 0..20 {
            x[[i, 0]] = i as f64;
            x[[i, 1]] = i as f64;
            y.push(i as f64);
        }
        let f = FeatureMatrix::new(x).unwrap();
        let cfg = LearnerConfig {
            l2: 0.0,
            ..LearnerConfig::default()
        };
        assert!(matches!(
            RidgeRegressor::fit(&f, &y, &cfg),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn irls_nll_path_is_monotone() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        let n = 300;
        let mut x = Array2::zeros((n, 2));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let a: f64 = rng.gen_range(-2.0..2.0);
            let b: f64 = rng.gen_range(-2.0..2.0);
            x[[i, 0]] = a;
            x[[i, 1]] = b;
            let p = sigmoid(1.2 * a - 0.7 * b);
            labels.push(u8::from(rng.gen::<f64>() < p));
        }
        let f = FeatureMatrix::new(x).unwrap();
        let model = LogisticClassifier::fit(&f, &labels, &LearnerConfig::default()).unwrap();
        for pair in model.nll_path.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "NLL increased: {pair:?}");
        }
        assert!(model.iterations >= 2);
    }
}
