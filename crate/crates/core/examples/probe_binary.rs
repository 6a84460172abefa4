//! Dev probe: stumps-learner accuracy/cost on the binary model at n = 32k.

use pathfx_core::estimators::{EstimatorMode, EstimatorSettings, ModeKind};
use pathfx_core::learners::{LearnerConfig, LearnerKind};
use pathfx_core::oracle::EffectQuery;
use pathfx_core::scm::binary_scm;
use std::time::Instant;

fn main() {
    let spec = binary_scm();
    let truth = -0.1232634215;
    let q = EffectQuery::vde(1, 0);
    for (label, learner) in [
        (
            "stumps d3 t30 lr0.2",
            LearnerConfig {
                kind: LearnerKind::Stumps,
                depth: 3,
                n_trees: 30,
                learning_rate: 0.2,
                ..LearnerConfig::default()
            },
        ),
        (
            "stumps d3 t50 lr0.1 (defaults)",
            LearnerConfig {
                kind: LearnerKind::Stumps,
                ..LearnerConfig::default()
            },
        ),
        ("exact-frequency", LearnerConfig::exact_frequency()),
    ] {
        for mode in [ModeKind::Dr, ModeKind::SnDr] {
            let t = Instant::now();
            let reps = if learner.kind == LearnerKind::ExactFrequency {
                100u64
            } else {
                30u64
            };
            let mut errs = Vec::new();
            for r in 0..reps {
                let cohort = spec.sample(32_000, 7_000 + r).unwrap();
                let settings = EstimatorSettings {
                    mode: EstimatorMode::new(mode),
                    learner,
                    ..EstimatorSettings::default()
                }
                .with_seed(r);
                let est =
                    pathfx_core::estimators::estimate_effect(&cohort, &q, &settings).unwrap();
                errs.push((est.value - truth) / truth.abs());
            }
            let mean = errs.iter().sum::<f64>() / errs.len() as f64;
            let sd = (errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>()
                / (errs.len() - 1) as f64)
                .sqrt();
            let per = t.elapsed().as_secs_f64() / reps as f64;
            println!(
                "{label} {mode:?}: mean rel err {:+.2}% +- {:.2}% (sd {:.2}%, {:.2}s/estimate, {reps} reps)",
                100.0 * mean,
                100.0 * sd / (reps as f64).sqrt(),
                100.0 * sd,
                per
            );
        }
    }
}
