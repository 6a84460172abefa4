//! Dev probe: choose the canonical linear-SCM seed (largest clean |VDE|).

use pathfx_core::oracle::{mc_reference_set, EffectKind};
use pathfx_core::scm::linear_scm;

fn main() {
    let mut best = Vec::new();
    for seed in 1u64..=40 {
        let spec = linear_scm(3, 10, 3, seed).unwrap();
        let refs = mc_reference_set(&spec, 0, 1, 400_000, 1).unwrap();
        let vde = refs.value_for(EffectKind::Vde);
        let te = refs.value_for(EffectKind::Te);
        best.push((vde.abs(), seed, vde, te));
    }
    best.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    for (abs, seed, vde, te) in best.iter().take(10) {
        println!("seed {seed}: |VDE|={abs:.4} VDE={vde:+.4} TE={te:+.4}");
    }
}
