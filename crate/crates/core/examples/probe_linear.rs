//! Dev probe: scan linear-SCM seeds for a well-conditioned test instance.

use pathfx_core::estimators::{
    estimate_effect, EstimatorMode, EstimatorSettings, Misspecification,
};
use pathfx_core::oracle::{mc_reference_set, EffectKind, EffectQuery};
use pathfx_core::scm::linear_scm;

fn main() {
    let n_mc = 2_000_000;
    for seed in [1u64, 2, 3, 4, 5, 6, 7, 8] {
        let spec = linear_scm(3, 10, 3, seed).unwrap();
        let refs = mc_reference_set(&spec, 0, 1, n_mc, 1).unwrap();
        let vde = refs.value_for(EffectKind::Vde);
        let cohort = spec.sample(32_000, 100 + seed).unwrap();
        let p_x1 = cohort.count_x(1) as f64 / cohort.n() as f64;
        let settings = EstimatorSettings::default().with_seed(500 + seed);
        let q = EffectQuery::vde(1, 0);
        let est = estimate_effect(&cohort, &q, &settings).unwrap();
        let mut broken_mu = settings;
        broken_mu.mode = EstimatorMode {
            kind: pathfx_core::estimators::ModeKind::Dr,
            misspec: Misspecification::BreakMu,
        };
        let est_mu = estimate_effect(&cohort, &q, &broken_mu).unwrap();
        let mut broken_pi = settings;
        broken_pi.mode = EstimatorMode {
            kind: pathfx_core::estimators::ModeKind::Dr,
            misspec: Misspecification::BreakPi,
        };
        let est_pi = estimate_effect(&cohort, &q, &broken_pi).unwrap();
        let mut broken_both = settings;
        broken_both.mode = EstimatorMode {
            kind: pathfx_core::estimators::ModeKind::Dr,
            misspec: Misspecification::BreakBoth,
        };
        let est_both = estimate_effect(&cohort, &q, &broken_both).unwrap();
        println!(
            "seed {seed}: P(X=1)={p_x1:.3} VDE={vde:+.4} | dr err {:+.2}% | mu-broken {:+.2}% | pi-broken {:+.2}% | both {:+.2}%",
            100.0 * (est.value - vde) / vde.abs(),
            100.0 * (est_mu.value - vde) / vde.abs(),
            100.0 * (est_pi.value - vde) / vde.abs(),
            100.0 * (est_both.value - vde) / vde.abs(),
        );
    }
}
