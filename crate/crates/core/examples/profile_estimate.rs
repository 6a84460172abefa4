//! Dev probe: where does estimation time go.

use pathfx_core::data::Block;
use pathfx_core::estimators::{estimate_effect, EstimatorSettings};
use pathfx_core::learners::{fit_classifier, fit_regressor, FeatureMatrix, LearnerConfig};
use pathfx_core::oracle::EffectQuery;
use pathfx_core::scm::linear_scm;
use std::time::Instant;

fn main() {
    let spec = linear_scm(3, 10, 3, 8).unwrap();
    let cohort = spec.sample(32_000, 1).unwrap();

    let t = Instant::now();
    let f = FeatureMatrix::new(cohort.design(&[Block::V, Block::W, Block::Z])).unwrap();
    println!("feature matrix: {:?}", t.elapsed());

    let labels: Vec<u8> = cohort.x().to_vec();
    let t = Instant::now();
    let clf = fit_classifier(&f, &labels, &LearnerConfig::default()).unwrap();
    println!("logistic fit (n=32k, d=16): {:?}", t.elapsed());
    let t = Instant::now();
    let mut acc = 0.0;
    for i in 0..cohort.n() {
        acc += clf.predict_proba(&cohort.feature_row(&[Block::V, Block::W, Block::Z], i));
    }
    println!("32k predictions: {:?} (acc {acc:.1})", t.elapsed());

    let y: Vec<f64> = cohort.y().to_vec();
    let t = Instant::now();
    let _reg = fit_regressor(&f, &y, &LearnerConfig::default()).unwrap();
    println!("ridge fit: {:?}", t.elapsed());

    let t = Instant::now();
    let est = estimate_effect(&cohort, &EffectQuery::vde(1, 0), &EstimatorSettings::default())
        .unwrap();
    println!("full VDE estimate: {:?} (value {:.4})", t.elapsed(), est.value);

    let small = spec.sample(4_000, 2).unwrap();
    let t = Instant::now();
    for k in 0..5 {
        let s = EstimatorSettings::default().with_seed(k);
        let _ = estimate_effect(&small, &EffectQuery::vde(1, 0), &s).unwrap();
    }
    println!("5 VDE estimates at n=4000: {:?}", t.elapsed());
}
