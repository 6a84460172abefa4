//! Dev probe: bias/SD of the one-sided misspecified estimators on seed 19.

use pathfx_core::estimators::{
    estimate_effect, EstimatorMode, EstimatorSettings, Misspecification, ModeKind,
};
use pathfx_core::oracle::{mc_reference_set, EffectKind, EffectQuery};
use pathfx_core::scm::linear_scm;

fn main() {
    let spec = linear_scm(3, 10, 3, 19).unwrap();
    let refs = mc_reference_set(&spec, 0, 1, 4_000_000, 1).unwrap();
    let vde = refs.value_for(EffectKind::Vde);
    println!("oracle VDE = {vde:+.5} (nested se {:.5})", refs.nested_vde.std_error);
    let q = EffectQuery::vde(1, 0);
    let reps = 24u64;
    for misspec in [
        Misspecification::None,
        Misspecification::BreakMu,
        Misspecification::BreakPi,
        Misspecification::BreakBoth,
    ] {
        let mut vals = Vec::new();
        for r in 0..reps {
            let cohort = spec.sample(32_000, 900 + r).unwrap();
            let settings = EstimatorSettings {
                mode: EstimatorMode {
                    kind: ModeKind::Dr,
                    misspec,
                },
                ..EstimatorSettings::default()
            }
            .with_seed(40 + r);
            vals.push(estimate_effect(&cohort, &q, &settings).unwrap().value);
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (vals.len() - 1) as f64)
            .sqrt();
        println!(
            "{misspec:?}: mean {mean:+.5} (bias {:+.2}% of oracle, sd {sd:.5}, se_mean {:.5})",
            100.0 * (mean - vde) / vde.abs(),
            sd / (reps as f64).sqrt()
        );
    }
}
