//! Gradient-boosted shallow trees for regression (squared loss) and binary
//! classification (logistic loss).
//!
//! Trees are grown greedily to a fixed depth with second-order leaf values
//! `sum(g) / (sum(h) + l2)`, XGBoost style. No row or feature subsampling, so
//! a fit is deterministic in (data, config).

use ndarray::Array2;

use super::{FeatureMatrix, LearnerConfig, ProbClassifier, Regressor};
use crate::error::Result;

#[derive(Debug, Clone)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn eval(&self, row: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

struct TreeBuilder<'a> {
    x: &'a Array2<f64>,
    grad: &'a [f64],
    hess: &'a [f64],
    l2: f64,
    max_depth: usize,
    nodes: Vec<Node>,
}

impl<'a> TreeBuilder<'a> {
    fn build(mut self, rows: Vec<usize>) -> Tree {
        self.grow(rows, 0);
        Tree { nodes: self.nodes }
    }

    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let g: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = rows.iter().map(|&i| self.hess[i]).sum();
        g / (h + self.l2)
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        if depth >= self.max_depth || rows.len() < 2 {
            let idx = self.nodes.len();
            self.nodes.push(Node::Leaf(self.leaf_value(&rows)));
            return idx;
        }
        match self.best_split(&rows) {
            None => {
                let idx = self.nodes.len();
                self.nodes.push(Node::Leaf(self.leaf_value(&rows)));
                idx
            }
            Some((feature, threshold)) => {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                    .into_iter()
                    .partition(|&i| self.x[[i, feature]] <= threshold);
                let idx = self.nodes.len();
                self.nodes.push(Node::Leaf(0.0)); // placeholder
                let left = self.grow(left_rows, depth + 1);
                let right = self.grow(right_rows, depth + 1);
                self.nodes[idx] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                idx
            }
        }
    }

    fn best_split(&self, rows: &[usize]) -> Option<(usize, f64)> {
        let g_total: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let h_total: f64 = rows.iter().map(|&i| self.hess[i]).sum();
        let base = g_total * g_total / (h_total + self.l2);
        let mut best: Option<(f64, usize, f64)> = None;
        let d = self.x.ncols();
        let mut order: Vec<usize> = Vec::with_capacity(rows.len());
        let consider = |feature: usize,
                            here: f64,
                            next: f64,
                            g_left: f64,
                            h_left: f64,
                            best: &mut Option<(f64, usize, f64)>| {
            let g_right = g_total - g_left;
            let h_right = h_total - h_left;
            let gain = g_left * g_left / (h_left + self.l2)
                + g_right * g_right / (h_right + self.l2)
                - base;
            if gain > 1e-12 && best.map_or(true, |(bg, _, _)| gain > bg) {
                *best = Some((gain, feature, 0.5 * (here + next)));
            }
        };
        for feature in 0..d {
            // small-cardinality path: group sums over distinct values, no sort
            let mut levels: Vec<(f64, f64, f64)> = Vec::new(); // value, g, h
            let mut discrete = true;
            for &i in rows {
                let v = self.x[[i, feature]];
                match levels.iter_mut().find(|l| l.0 == v) {
                    Some(l) => {
                        l.1 += self.grad[i];
                        l.2 += self.hess[i];
                    }
                    None => {
                        if levels.len() == 16 {
                            discrete = false;
                            break;
                        }
                        levels.push((v, self.grad[i], self.hess[i]));
                    }
                }
            }
            if discrete {
                levels.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                let mut g_left = 0.0;
                let mut h_left = 0.0;
                for pair in 0..levels.len().saturating_sub(1) {
                    g_left += levels[pair].1;
                    h_left += levels[pair].2;
                    consider(
                        feature,
                        levels[pair].0,
                        levels[pair + 1].0,
                        g_left,
                        h_left,
                        &mut best,
                    );
                }
                continue;
            }
            order.clear();
            order.extend_from_slice(rows);
            order.sort_by(|&a, &b| {
                self.x[[a, feature]]
                    .partial_cmp(&self.x[[b, feature]])
                    .unwrap()
            });
            let mut g_left = 0.0;
            let mut h_left = 0.0;
            for pos in 0..order.len() - 1 {
                let i = order[pos];
                g_left += self.grad[i];
                h_left += self.hess[i];
                let here = self.x[[i, feature]];
                let next = self.x[[order[pos + 1], feature]];
                if next <= here {
                    continue; // ties: no cut between equal values
                }
                consider(feature, here, next, g_left, h_left, &mut best);
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

fn boost(
    x: &Array2<f64>,
    targets: &[f64],
    config: &LearnerConfig,
    logistic: bool,
) -> (f64, Vec<Tree>) {
    let n = x.nrows();
    let base = if logistic {
        let p = (targets.iter().sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
        (p / (1.0 - p)).ln()
    } else {
        targets.iter().sum::<f64>() / n as f64
    };
    let mut score = vec![base; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(config.n_trees);
    let all_rows: Vec<usize> = (0..n).collect();
    for _ in 0..config.n_trees {
        for i in 0..n {
            if logistic {
                let p = sigmoid(score[i]);
                grad[i] = targets[i] - p;
                hess[i] = (p * (1.0 - p)).max(1e-10);
            } else {
                grad[i] = targets[i] - score[i];
                hess[i] = 1.0;
            }
        }
        let tree = TreeBuilder {
            x,
            grad: &grad,
            hess: &hess,
            l2: config.l2,
            max_depth: config.depth,
            nodes: Vec::new(),
        }
        .build(all_rows.clone());
        let mut buf = Vec::new();
        for i in 0..n {
            let row = x.row(i);
            let slice = match row.as_slice() {
                Some(s) => s,
                None => {
                    buf.clear();
                    buf.extend(row.iter().copied());
                    &buf
                }
            };
            score[i] += config.learning_rate * tree.eval(slice);
        }
        trees.push(tree);
    }
    (base, trees)
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t.clamp(-30.0, 30.0)).exp())
}

/// Least-squares gradient boosting.
pub struct BoostRegressor {
    base: f64,
    trees: Vec<Tree>,
    learning_rate: f64,
}

impl BoostRegressor {
    pub fn fit(features: &FeatureMatrix, targets: &[f64], config: &LearnerConfig) -> Result<Self> {
        let (base, trees) = boost(features.raw(), targets, config, false);
        Ok(BoostRegressor {
            base,
            trees,
            learning_rate: config.learning_rate,
        })
    }
}

impl Regressor for BoostRegressor {
    fn predict(&self, row: &[f64]) -> f64 {
        self.base
            + self.learning_rate * self.trees.iter().map(|t| t.eval(row)).sum::<f64>()
    }
}

/// Logistic-loss gradient boosting.
pub struct BoostClassifier {
    base: f64,
    trees: Vec<Tree>,
    learning_rate: f64,
}

impl BoostClassifier {
    pub fn fit(features: &FeatureMatrix, labels: &[u8], config: &LearnerConfig) -> Result<Self> {
        let targets: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
        let (base, trees) = boost(features.raw(), &targets, config, true);
        Ok(BoostClassifier {
            base,
            trees,
            learning_rate: config.learning_rate,
        })
    }
}

impl ProbClassifier for BoostClassifier {
    fn predict_proba(&self, row: &[f64]) -> f64 {
        sigmoid(
            self.base
                + self.learning_rate * self.trees.iter().map(|t| t.eval(row)).sum::<f64>(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn fits_a_step_function() {
        let n = 200;
        let mut x = Array2::zeros((n, 1));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            x[[i, 0]] = i as f64;
            y.push(if i < 100 { -1.0 } else { 2.0 });
        }
        let f = FeatureMatrix::new(x).unwrap();
        let cfg = LearnerConfig {
            kind: super::super::LearnerKind::Stumps,
            n_trees: 60,
            learning_rate: 0.3,
            depth: 2,
            ..LearnerConfig::default()
        };
        let model = BoostRegressor::fit(&f, &y, &cfg).unwrap();
        assert!((model.predict(&[10.0]) + 1.0).abs() < 0.05);
        assert!((model.predict(&[150.0]) - 2.0).abs() < 0.05);
    }

    #[test]
    fn fit_is_deterministic() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 150;
        let mut x = Array2::zeros((n, 3));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            for j in 0..3 {
                x[[i, j]] = rng.gen_range(-1.0..1.0);
            }
            labels.push(u8::from(x[[i, 0]] + x[[i, 1]] > 0.0));
        }
        let f = FeatureMatrix::new(x).unwrap();
        let cfg = LearnerConfig {
            kind: super::super::LearnerKind::Stumps,
            ..LearnerConfig::default()
        };
        let a = BoostClassifier::fit(&f, &labels, &cfg).unwrap();
        let b = BoostClassifier::fit(&f, &labels, &cfg).unwrap();
        for i in 0..n {
            let row: Vec<f64> = f.raw().row(i).to_vec();
            assert_eq!(a.predict_proba(&row), b.predict_proba(&row));
        }
    }
}
