//! Ground-truth effect values by two independent routes.
//!
//! Route one pushes shared exogenous noise through intervened mechanism
//! compositions: Monte-Carlo simulation ([`mc_counterfactual`]) for any spec,
//! exact summation over the finite noise support ([`enumerate_exact`]) for
//! discrete-enumerable specs.
//!
//! Route two evaluates the identification formula on a tabulated joint
//! distribution ([`JointTable`]): the nested term
//! `sum_{w,v,z} E[Y | x1,w,v,z] P(v | x0,w,z) P(w | x1,z) P(z)` together with
//! the backdoor mean `sum_z E[Y | x,z] P(z)`, plus the exact-nuisance
//! parametrizations (importance sampling, plugin, doubly robust) that must
//! all coincide with it.
//!
//! Keeping the two routes independent means a bug in the estimators and a bug
//! in the identification arithmetic cannot mask each other.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::scm::{Noise, ScmSpec};
use crate::util::derive_seed;

const MC_STREAM: u64 = 0x0AC1_E000;
const MC_CHUNK: usize = 1 << 16;

/// Which mediators move with the reference exposure in nested terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MediatorSet {
    /// W and V move jointly (the NDE/NIE mediator block).
    #[default]
    Merged,
    /// Only V moves; W keeps its x1 response.
    VOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EffectKind {
    /// E[Y_x1]
    MeanY,
    /// E[Y_{x1, V_{x0, W_{x1}}}]
    NestedVde,
    /// E[Y_{x1, M_{x0}}] with M given by the mediator set
    NestedNde,
    Te,
    Nde,
    Nie,
    NieStar,
    Vde,
}

/// A counterfactual expression to evaluate: the kind picks the formula, and
/// (x0, x1) are the reference and comparison exposure levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectQuery {
    pub kind: EffectKind,
    pub x0: u8,
    pub x1: u8,
    #[serde(default)]
    pub mediators: MediatorSet,
}

impl EffectQuery {
    pub fn new(kind: EffectKind, x0: u8, x1: u8) -> Self {
        EffectQuery {
            kind,
            x0,
            x1,
            mediators: MediatorSet::Merged,
        }
    }

    pub fn mean_y(x: u8) -> Self {
        EffectQuery::new(EffectKind::MeanY, x, x)
    }

    pub fn vde(x1: u8, x0: u8) -> Self {
        EffectQuery::new(EffectKind::Vde, x0, x1)
    }

    pub fn te(x1: u8, x0: u8) -> Self {
        EffectQuery::new(EffectKind::Te, x0, x1)
    }

    pub fn with_mediators(mut self, mediators: MediatorSet) -> Self {
        self.mediators = mediators;
        self
    }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_mc: usize,
    pub seed: u64,
}

/// Per-draw counterfactual statistic whose expectation is the queried effect.
/// All worlds are computed from the same noise, so identical interventions
/// cancel exactly draw by draw.
fn draw_statistic(spec: &ScmSpec, u: &Noise, q: &EffectQuery) -> f64 {
    let z = spec.mech_z(u);
    let y_do = |x: u8| -> f64 {
        let w = spec.mech_w(u, x, &z);
        let v = spec.mech_v(u, x, &z, &w);
        spec.mech_y(u, x, &z, &w, &v)
    };
    let nested_vde = || -> f64 {
        let w1 = spec.mech_w(u, q.x1, &z);
        let v_star = spec.mech_v(u, q.x0, &z, &w1);
        spec.mech_y(u, q.x1, &z, &w1, &v_star)
    };
    let nested_nde = |mediators: MediatorSet| -> f64 {
        let w0 = spec.mech_w(u, q.x0, &z);
        let v0 = spec.mech_v(u, q.x0, &z, &w0);
        match mediators {
            MediatorSet::Merged => spec.mech_y(u, q.x1, &z, &w0, &v0),
            MediatorSet::VOnly => {
                let w1 = spec.mech_w(u, q.x1, &z);
                spec.mech_y(u, q.x1, &z, &w1, &v0)
            }
        }
    };
    match q.kind {
        EffectKind::MeanY => y_do(q.x1),
        EffectKind::NestedVde => nested_vde(),
        EffectKind::NestedNde => nested_nde(q.mediators),
        EffectKind::Te => y_do(q.x1) - y_do(q.x0),
        EffectKind::Nde => nested_nde(MediatorSet::Merged) - y_do(q.x0),
        EffectKind::Nie => y_do(q.x1) - nested_nde(MediatorSet::Merged),
        EffectKind::NieStar => y_do(q.x1) - nested_nde(MediatorSet::VOnly),
        EffectKind::Vde => y_do(q.x1) - nested_vde(),
    }
}

/// Monte-Carlo counterfactual mean over `n_mc` exogenous draws. Draws are
/// partitioned across workers with per-partition derived seeds and reduced in
/// fixed partition order, so the value is independent of scheduling.
pub fn mc_counterfactual(
    spec: &ScmSpec,
    query: &EffectQuery,
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_mc == 0 {
        return Err(Error::invalid("n_mc must be at least 1"));
    }
    spec.validate()?;
    let base = derive_seed(derive_seed(spec.seed, MC_STREAM), seed);
    let n_chunks = n_mc.div_ceil(MC_CHUNK);
    let partials: Vec<(f64, f64)> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            use rand::SeedableRng;
            let mut rng =
                rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(base, chunk as u64));
            let lo = chunk * MC_CHUNK;
            let hi = (lo + MC_CHUNK).min(n_mc);
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in lo..hi {
                let u = spec.draw_noise(&mut rng);
                let s = draw_statistic(spec, &u, query);
                sum += s;
                sumsq += s * s;
            }
            (sum, sumsq)
        })
        .collect();
    let (sum, sumsq) = partials
        .iter()
        .fold((0.0, 0.0), |(a, b), (s, ss)| (a + s, b + ss));
    let n = n_mc as f64;
    let mean = sum / n;
    let var = (sumsq / n - mean * mean).max(0.0);
    Ok(McEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
        n_mc,
        seed,
    })
}

/// Exact counterfactual expectation by summation over the finite noise
/// support. No sampling error; rejects non-enumerable specs.
pub fn enumerate_exact(spec: &ScmSpec, query: &EffectQuery) -> Result<f64> {
    let support = spec.noise_support()?;
    Ok(support
        .iter()
        .map(|(u, p)| p * draw_statistic(spec, u, query))
        .sum())
}

/// Ground-truth values for the four causal queries a convergence study
/// tracks, all computed from one set of shared draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McReferenceSet {
    pub mean_y_x0: McEstimate,
    pub mean_y_x1: McEstimate,
    pub nested_nde: McEstimate,
    pub nested_vonly: McEstimate,
    pub nested_vde: McEstimate,
}

pub fn mc_reference_set(
    spec: &ScmSpec,
    x0: u8,
    x1: u8,
    n_mc: usize,
    seed: u64,
) -> Result<McReferenceSet> {
    if n_mc == 0 {
        return Err(Error::invalid("n_mc must be at least 1"));
    }
    spec.validate()?;
    let base = derive_seed(derive_seed(spec.seed, MC_STREAM), seed);
    let n_chunks = n_mc.div_ceil(MC_CHUNK);
    const K: usize = 5;
    let partials: Vec<[(f64, f64); K]> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            use rand::SeedableRng;
            let mut rng =
                rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(base, chunk as u64));
            let lo = chunk * MC_CHUNK;
            let hi = (lo + MC_CHUNK).min(n_mc);
            let mut acc = [(0.0f64, 0.0f64); K];
            for _ in lo..hi {
                let u = spec.draw_noise(&mut rng);
                let z = spec.mech_z(&u);
                let w0 = spec.mech_w(&u, x0, &z);
                let v0 = spec.mech_v(&u, x0, &z, &w0);
                let y0 = spec.mech_y(&u, x0, &z, &w0, &v0);
                let w1 = spec.mech_w(&u, x1, &z);
                let v1 = spec.mech_v(&u, x1, &z, &w1);
                let y1 = spec.mech_y(&u, x1, &z, &w1, &v1);
                let y_nde = spec.mech_y(&u, x1, &z, &w0, &v0);
                let y_vonly = spec.mech_y(&u, x1, &z, &w1, &v0);
                let v_star = spec.mech_v(&u, x0, &z, &w1);
                let y_vde = spec.mech_y(&u, x1, &z, &w1, &v_star);
                for (slot, s) in [y0, y1, y_nde, y_vonly, y_vde].into_iter().enumerate() {
                    acc[slot].0 += s;
                    acc[slot].1 += s * s;
                }
            }
            acc
        })
        .collect();
    let mut totals = [(0.0f64, 0.0f64); K];
    for part in &partials {
        for (slot, (s, ss)) in part.iter().enumerate() {
            totals[slot].0 += s;
            totals[slot].1 += ss;
        }
    }
    let n = n_mc as f64;
    let finish = |(sum, sumsq): (f64, f64)| -> McEstimate {
        let mean = sum / n;
        let var = (sumsq / n - mean * mean).max(0.0);
        McEstimate {
            value: mean,
            std_error: (var / n).sqrt(),
            n_mc,
            seed,
        }
    };
    Ok(McReferenceSet {
        mean_y_x0: finish(totals[0]),
        mean_y_x1: finish(totals[1]),
        nested_nde: finish(totals[2]),
        nested_vonly: finish(totals[3]),
        nested_vde: finish(totals[4]),
    })
}

impl McReferenceSet {
    /// The oracle value the estimator of `kind` targets.
    pub fn value_for(&self, kind: EffectKind) -> f64 {
        match kind {
            EffectKind::MeanY => self.mean_y_x1.value,
            EffectKind::NestedVde => self.nested_vde.value,
            EffectKind::NestedNde => self.nested_nde.value,
            EffectKind::Te => self.mean_y_x1.value - self.mean_y_x0.value,
            EffectKind::Nde => self.nested_nde.value - self.mean_y_x0.value,
            EffectKind::Nie => self.mean_y_x1.value - self.nested_nde.value,
            EffectKind::NieStar => self.mean_y_x1.value - self.nested_vonly.value,
            EffectKind::Vde => self.mean_y_x1.value - self.nested_vde.value,
        }
    }
}

// ---------------------------------------------------------------------------
// Identification formula on tabulated joints
// ---------------------------------------------------------------------------

type CellKey = (u64, u64, u64, u8, u64);

fn key_of(y: f64, v: f64, w: f64, x: u8, z: f64) -> CellKey {
    (y.to_bits(), v.to_bits(), w.to_bits(), x, z.to_bits())
}

/// A finite discrete joint distribution over scalar (Y, V, W, X, Z).
///
/// Built either by exact enumeration of a discrete spec or by tabulating a
/// sampled cohort; the identification formula and the exact-nuisance
/// parametrizations are then sums over the stored cells.
#[derive(Debug, Clone)]
pub struct JointTable {
    /// (y, v, w, x, z, probability), in deterministic key order.
    cells: Vec<(f64, f64, f64, u8, f64, f64)>,
}

impl JointTable {
    pub fn from_spec(spec: &ScmSpec) -> Result<Self> {
        let support = spec.noise_support()?;
        let mut map: HashMap<CellKey, f64> = HashMap::new();
        for (u, p) in &support {
            let s = spec.observe(u);
            *map.entry(key_of(s.y, s.v[0], s.w[0], s.x, s.z[0])).or_insert(0.0) += p;
        }
        Ok(Self::from_map(map))
    }

    /// Tabulates the observational joint of a scalar-valued spec from `n`
    /// streamed draws, without materializing the cohort.
    pub fn from_spec_samples(spec: &ScmSpec, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("sample size must be at least 1"));
        }
        if spec.dim_z != 1 || spec.dim_w != 1 || spec.dim_v != 1 {
            return Err(Error::invalid(
                "joint tabulation requires scalar Z, W and V blocks",
            ));
        }
        spec.validate()?;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(
            derive_seed(spec.seed, MC_STREAM),
            seed,
        ));
        let mut map: HashMap<CellKey, f64> = HashMap::new();
        let weight = 1.0 / n as f64;
        for _ in 0..n {
            let u = spec.draw_noise(&mut rng);
            let s = spec.observe(&u);
            *map.entry(key_of(s.y, s.v[0], s.w[0], s.x, s.z[0])).or_insert(0.0) += weight;
        }
        Ok(Self::from_map(map))
    }

    /// Tabulates the empirical joint of a cohort with scalar blocks.
    pub fn from_cohort(cohort: &Cohort) -> Result<Self> {
        if cohort.dim_z() != 1 || cohort.dim_w() != 1 || cohort.dim_v() != 1 {
            return Err(Error::invalid(
                "joint tabulation requires scalar Z, W and V blocks",
            ));
        }
        let n = cohort.n() as f64;
        let mut map: HashMap<CellKey, f64> = HashMap::new();
        for i in 0..cohort.n() {
            let key = key_of(
                cohort.y()[i],
                cohort.v()[[i, 0]],
                cohort.w()[[i, 0]],
                cohort.x()[i],
                cohort.z()[[i, 0]],
            );
            *map.entry(key).or_insert(0.0) += 1.0 / n;
        }
        Ok(Self::from_map(map))
    }

    fn from_map(map: HashMap<CellKey, f64>) -> Self {
        let mut keys: Vec<CellKey> = map.keys().copied().collect();
        keys.sort_unstable();
        let cells = keys
            .into_iter()
            .map(|k| {
                let p = map[&k];
                (
                    f64::from_bits(k.0),
                    f64::from_bits(k.1),
                    f64::from_bits(k.2),
                    k.3,
                    f64::from_bits(k.4),
                    p,
                )
            })
            .collect();
        JointTable { cells }
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.cells.iter().map(|c| c.5).sum()
    }

    /// Marginal P(X = x, Z = z).
    pub fn mass_xz(&self, x: u8, z: f64) -> f64 {
        self.mass(None, None, Some(x), Some(z))
    }

    fn levels(&self, pick: impl Fn(&(f64, f64, f64, u8, f64, f64)) -> f64) -> Vec<f64> {
        let mut seen: Vec<f64> = Vec::new();
        for c in &self.cells {
            let v = pick(c);
            if !seen.iter().any(|s| s.to_bits() == v.to_bits()) {
                seen.push(v);
            }
        }
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        seen
    }

    fn z_levels(&self) -> Vec<f64> {
        self.levels(|c| c.4)
    }

    fn w_levels(&self) -> Vec<f64> {
        self.levels(|c| c.2)
    }

    fn v_levels(&self) -> Vec<f64> {
        self.levels(|c| c.1)
    }

    /// P over cells matching the given constraints (None = marginalized).
    fn mass(&self, v: Option<f64>, w: Option<f64>, x: Option<u8>, z: Option<f64>) -> f64 {
        self.cells
            .iter()
            .filter(|c| {
                v.is_none_or(|t| c.1.to_bits() == t.to_bits())
                    && w.is_none_or(|t| c.2.to_bits() == t.to_bits())
                    && x.is_none_or(|t| c.3 == t)
                    && z.is_none_or(|t| c.4.to_bits() == t.to_bits())
            })
            .map(|c| c.5)
            .sum()
    }

    fn mean_y(&self, v: Option<f64>, w: Option<f64>, x: Option<u8>, z: Option<f64>) -> Result<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        for c in &self.cells {
            if v.is_none_or(|t| c.1.to_bits() == t.to_bits())
                && w.is_none_or(|t| c.2.to_bits() == t.to_bits())
                && x.is_none_or(|t| c.3 == t)
                && z.is_none_or(|t| c.4.to_bits() == t.to_bits())
            {
                num += c.0 * c.5;
                den += c.5;
            }
        }
        if den <= 0.0 {
            return Err(Error::Positivity(cond_desc("E[Y | .]", v, w, x, z)));
        }
        Ok(num / den)
    }

    /// P(target | given): the numerator is the joint mass of target AND
    /// given, so callers never have to merge constraints by hand.
    #[allow(clippy::too_many_arguments)]
    fn cond_prob(
        &self,
        v: Option<f64>,
        w: Option<f64>,
        x: Option<u8>,
        z: Option<f64>,
        cv: Option<f64>,
        cw: Option<f64>,
        cx: Option<u8>,
        cz: Option<f64>,
    ) -> Result<f64> {
        let den = self.mass(cv, cw, cx, cz);
        if den <= 0.0 {
            return Err(Error::Positivity(cond_desc("P(. | .)", cv, cw, cx, cz)));
        }
        let merge = |a: Option<f64>, b: Option<f64>| a.or(b);
        Ok(self.mass(
            merge(v, cv),
            merge(w, cw),
            x.or(cx),
            merge(z, cz),
        ) / den)
    }

    /// Backdoor mean `sum_z E[Y | x, z] P(z)`.
    pub fn backdoor_formula(&self, x: u8) -> Result<f64> {
        let mut total = 0.0;
        for z in self.z_levels() {
            let pz = self.mass(None, None, None, Some(z));
            total += pz * self.mean_y(None, None, Some(x), Some(z))?;
        }
        Ok(total)
    }

    /// Nested VDE term
    /// `sum_{w,v,z} E[Y | x1,w,v,z] P(v | x0,w,z) P(w | x1,z) P(z)`.
    pub fn nested_vde_formula(&self, x0: u8, x1: u8) -> Result<f64> {
        let mut total = 0.0;
        for z in self.z_levels() {
            let pz = self.mass(None, None, None, Some(z));
            if pz <= 0.0 {
                continue;
            }
            for w in self.w_levels() {
                let pw = self.cond_prob(
                    None,
                    Some(w),
                    None,
                    None,
                    None,
                    None,
                    Some(x1),
                    Some(z),
                )?;
                if pw <= 0.0 {
                    continue;
                }
                for v in self.v_levels() {
                    let pv = self.cond_prob(
                        Some(v),
                        None,
                        None,
                        None,
                        None,
                        Some(w),
                        Some(x0),
                        Some(z),
                    )?;
                    if pv <= 0.0 {
                        continue;
                    }
                    let ey = self.mean_y(Some(v), Some(w), Some(x1), Some(z))?;
                    total += pz * pw * pv * ey;
                }
            }
        }
        Ok(total)
    }

    /// Nested mediator term for the NDE/NIE family:
    /// merged `sum_{w,v,z} E[Y | x1,w,v,z] P(w,v | x0,z) P(z)` or
    /// V-only `sum_{v,z} E[Y | x1,v,z] P(v | x0,z) P(z)`.
    pub fn nested_mediator_formula(
        &self,
        x0: u8,
        x1: u8,
        mediators: MediatorSet,
    ) -> Result<f64> {
        let mut total = 0.0;
        for z in self.z_levels() {
            let pz = self.mass(None, None, None, Some(z));
            if pz <= 0.0 {
                continue;
            }
            match mediators {
                MediatorSet::Merged => {
                    for w in self.w_levels() {
                        for v in self.v_levels() {
                            let pm = self.cond_prob(
                                Some(v),
                                Some(w),
                                None,
                                None,
                                None,
                                None,
                                Some(x0),
                                Some(z),
                            )?;
                            if pm <= 0.0 {
                                continue;
                            }
                            let ey = self.mean_y(Some(v), Some(w), Some(x1), Some(z))?;
                            total += pz * pm * ey;
                        }
                    }
                }
                MediatorSet::VOnly => {
                    for v in self.v_levels() {
                        let pv = self.cond_prob(
                            Some(v),
                            None,
                            None,
                            None,
                            None,
                            None,
                            Some(x0),
                            Some(z),
                        )?;
                        if pv <= 0.0 {
                            continue;
                        }
                        let ey = self.mean_y(Some(v), None, Some(x1), Some(z))?;
                        total += pz * pv * ey;
                    }
                }
            }
        }
        Ok(total)
    }

    /// The identification value for any full effect query.
    pub fn effect_formula(&self, query: &EffectQuery) -> Result<f64> {
        let (x0, x1) = (query.x0, query.x1);
        Ok(match query.kind {
            EffectKind::MeanY => self.backdoor_formula(x1)?,
            EffectKind::NestedVde => self.nested_vde_formula(x0, x1)?,
            EffectKind::NestedNde => self.nested_mediator_formula(x0, x1, query.mediators)?,
            EffectKind::Te => self.backdoor_formula(x1)? - self.backdoor_formula(x0)?,
            EffectKind::Nde => {
                self.nested_mediator_formula(x0, x1, MediatorSet::Merged)?
                    - self.backdoor_formula(x0)?
            }
            EffectKind::Nie => {
                self.backdoor_formula(x1)?
                    - self.nested_mediator_formula(x0, x1, MediatorSet::Merged)?
            }
            EffectKind::NieStar => {
                self.backdoor_formula(x1)?
                    - self.nested_mediator_formula(x0, x1, MediatorSet::VOnly)?
            }
            EffectKind::Vde => self.backdoor_formula(x1)? - self.nested_vde_formula(x0, x1)?,
        })
    }

    fn p_x_given(&self, x: u8, v: Option<f64>, w: Option<f64>, z: Option<f64>) -> Result<f64> {
        self.cond_prob(v, w, Some(x), z, v, w, None, z)
    }

    fn mu3(&self, v: f64, w: f64, x: u8, z: f64) -> Result<f64> {
        self.mean_y(Some(v), Some(w), Some(x), Some(z))
    }

    fn mu2(&self, w: f64, x: u8, x1: u8, z: f64) -> Result<f64> {
        let mut total = 0.0;
        for v in self.v_levels() {
            let pv = self.cond_prob(
                Some(v),
                None,
                None,
                None,
                None,
                Some(w),
                Some(x),
                Some(z),
            )?;
            if pv > 0.0 {
                total += pv * self.mu3(v, w, x1, z)?;
            }
        }
        Ok(total)
    }

    fn mu1(&self, x: u8, x0: u8, x1: u8, z: f64) -> Result<f64> {
        let mut total = 0.0;
        for w in self.w_levels() {
            let pw = self.cond_prob(
                None,
                Some(w),
                None,
                None,
                None,
                None,
                Some(x),
                Some(z),
            )?;
            if pw > 0.0 {
                total += pw * self.mu2(w, x0, x1, z)?;
            }
        }
        Ok(total)
    }

    /// Evaluates the three parametrizations of the nested VDE term with exact
    /// nuisances taken from this joint, together with the nuisance-weight
    /// means (all theoretically 1).
    pub fn vde_parametrizations(&self, x0: u8, x1: u8) -> Result<VdeParametrizations> {
        let mut plugin = 0.0;
        let mut ipw = 0.0;
        let mut dr = 0.0;
        let mut pi_means = [0.0; 3];
        let mut mu_pi = [0.0; 3];
        for &(y, v, w, x, z, p) in &self.cells {
            let px1_z = self.p_x_given(x1, None, None, Some(z))?;
            let px0_wz = self.p_x_given(x0, None, Some(w), Some(z))?;
            let px1_wz = self.p_x_given(x1, None, Some(w), Some(z))?;
            let px0_vwz = self.p_x_given(x0, Some(v), Some(w), Some(z))?;
            let px1_vwz = self.p_x_given(x1, Some(v), Some(w), Some(z))?;
            check_positive(px1_z, "P(x1 | z)")?;
            check_positive(px0_wz, "P(x0 | w, z)")?;
            check_positive(px1_vwz, "P(x1 | v, w, z)")?;
            let pi1 = f64::from(x == x1) / px1_z;
            let pi2 = f64::from(x == x0) * px1_wz / (px0_wz * px1_z);
            let pi3 = f64::from(x == x1) * px0_vwz * px1_wz / (px1_vwz * px0_wz * px1_z);
            let m3 = self.mu3(v, w, x, z)?;
            let m3_x1 = self.mu3(v, w, x1, z)?;
            let m2 = self.mu2(w, x, x1, z)?;
            let m2_x0 = self.mu2(w, x0, x1, z)?;
            let m1 = self.mu1(x, x0, x1, z)?;
            let m1_x1 = self.mu1(x1, x0, x1, z)?;
            plugin += p * m1_x1;
            ipw += p * y * pi3;
            dr += p * (pi3 * (y - m3) + pi2 * (m3_x1 - m2) + pi1 * (m2_x0 - m1) + m1_x1);
            pi_means[0] += p * pi1;
            pi_means[1] += p * pi2;
            pi_means[2] += p * pi3;
            mu_pi[0] += p * pi1 * m1;
            mu_pi[1] += p * pi2 * m2;
            mu_pi[2] += p * pi3 * m3;
        }
        Ok(VdeParametrizations {
            plugin,
            ipw,
            dr,
            pi_means,
            mu_pi,
        })
    }

    /// The doubly robust value of the nested NDE/NIE term with exact
    /// nuisances from this joint.
    pub fn nde_dr_value(&self, x0: u8, x1: u8, mediators: MediatorSet) -> Result<f64> {
        let mu2 = |v: f64, w: f64, x: u8, z: f64| -> Result<f64> {
            match mediators {
                MediatorSet::Merged => self.mean_y(Some(v), Some(w), Some(x), Some(z)),
                MediatorSet::VOnly => self.mean_y(Some(v), None, Some(x), Some(z)),
            }
        };
        // mu1(x, z) = E[mu2(M, x1, Z) | x, z]
        let mu1 = |x: u8, z: f64| -> Result<f64> {
            let mut total = 0.0;
            match mediators {
                MediatorSet::Merged => {
                    for w in self.w_levels() {
                        for v in self.v_levels() {
                            let pm = self.cond_prob(
                                Some(v),
                                Some(w),
                                None,
                                None,
                                None,
                                None,
                                Some(x),
                                Some(z),
                            )?;
                            if pm > 0.0 {
                                total += pm * mu2(v, w, x1, z)?;
                            }
                        }
                    }
                }
                MediatorSet::VOnly => {
                    for v in self.v_levels() {
                        let pv = self.cond_prob(
                            Some(v),
                            None,
                            None,
                            None,
                            None,
                            None,
                            Some(x),
                            Some(z),
                        )?;
                        if pv > 0.0 {
                            total += pv * mu2(v, 0.0, x1, z)?;
                        }
                    }
                }
            }
            Ok(total)
        };
        let mut dr = 0.0;
        for &(y, v, w, x, z, p) in &self.cells {
            let px0_z = self.p_x_given(x0, None, None, Some(z))?;
            let (px0_mz, px1_mz) = match mediators {
                MediatorSet::Merged => (
                    self.p_x_given(x0, Some(v), Some(w), Some(z))?,
                    self.p_x_given(x1, Some(v), Some(w), Some(z))?,
                ),
                MediatorSet::VOnly => (
                    self.p_x_given(x0, Some(v), None, Some(z))?,
                    self.p_x_given(x1, Some(v), None, Some(z))?,
                ),
            };
            check_positive(px0_z, "P(x0 | z)")?;
            check_positive(px1_mz, "P(x1 | m, z)")?;
            let pi2 = f64::from(x == x1) * px0_mz / (px1_mz * px0_z);
            let pi1 = f64::from(x == x0) / px0_z;
            let m2_x1 = mu2(v, w, x1, z)?;
            let m1_x0 = mu1(x0, z)?;
            let m1 = mu1(x, z)?;
            dr += p * (pi2 * (y - m2_x1) + pi1 * (m2_x1 - m1) + m1_x0);
        }
        // With exact nuisances the mu1(x, z) term inside pi1's bracket equals
        // mu1(x0, z) wherever pi1 is nonzero, so dr reduces to the formula.
        Ok(dr)
    }
}

fn check_positive(p: f64, what: &str) -> Result<()> {
    if p <= 0.0 {
        return Err(Error::Positivity(what.to_string()));
    }
    Ok(())
}

fn cond_desc(
    what: &str,
    v: Option<f64>,
    w: Option<f64>,
    x: Option<u8>,
    z: Option<f64>,
) -> String {
    let mut parts = vec![what.to_string()];
    if let Some(v) = v {
        parts.push(format!("v={v}"));
    }
    if let Some(w) = w {
        parts.push(format!("w={w}"));
    }
    if let Some(x) = x {
        parts.push(format!("x={x}"));
    }
    if let Some(z) = z {
        parts.push(format!("z={z}"));
    }
    parts.join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VdeParametrizations {
    pub plugin: f64,
    pub ipw: f64,
    pub dr: f64,
    /// E[pi^1], E[pi^2], E[pi^3]; each is 1 in expectation.
    pub pi_means: [f64; 3],
    /// E[mu^i pi^i]; each equals the nested term.
    pub mu_pi: [f64; 3],
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::{binary_scm, discrete_reference_scm, linear_scm};

    #[test]
    fn vde_of_identical_interventions_is_exactly_zero() {
        let spec = binary_scm();
        let q = EffectQuery::new(EffectKind::Vde, 1, 1);
        let est = mc_counterfactual(&spec, &q, 20_000, 3).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn mc_is_deterministic_and_partition_stable() {
        let spec = binary_scm();
        let q = EffectQuery::vde(1, 0);
        let a = mc_counterfactual(&spec, &q, 100_000, 5).unwrap();
        let b = mc_counterfactual(&spec, &q, 100_000, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reference_spec_routes_agree() {
        let spec = discrete_reference_scm();
        let joint = JointTable::from_spec(&spec).unwrap();
        assert_eq!(joint.n_cells(), 32);
        assert!((joint.total_mass() - 1.0).abs() < 1e-12);

        let nested_enum =
            enumerate_exact(&spec, &EffectQuery::new(EffectKind::NestedVde, 0, 1)).unwrap();
        let nested_formula = joint.nested_vde_formula(0, 1).unwrap();
        assert!(
            (nested_enum - nested_formula).abs() < 1e-12,
            "{nested_enum} vs {nested_formula}"
        );

        let bd1_enum = enumerate_exact(&spec, &EffectQuery::mean_y(1)).unwrap();
        assert!((bd1_enum - joint.backdoor_formula(1).unwrap()).abs() < 1e-12);
        let bd0_enum = enumerate_exact(&spec, &EffectQuery::mean_y(0)).unwrap();
        assert!((bd0_enum - joint.backdoor_formula(0).unwrap()).abs() < 1e-12);

        let nde_enum =
            enumerate_exact(&spec, &EffectQuery::new(EffectKind::NestedNde, 0, 1)).unwrap();
        let nde_formula = joint
            .nested_mediator_formula(0, 1, MediatorSet::Merged)
            .unwrap();
        assert!((nde_enum - nde_formula).abs() < 1e-12);
    }

    #[test]
    fn reference_spec_decomposition_telescopes() {
        let spec = discrete_reference_scm();
        let te = enumerate_exact(&spec, &EffectQuery::te(1, 0)).unwrap();
        let nde = enumerate_exact(&spec, &EffectQuery::new(EffectKind::Nde, 0, 1)).unwrap();
        let nie = enumerate_exact(&spec, &EffectQuery::new(EffectKind::Nie, 0, 1)).unwrap();
        assert!((te - (nde + nie)).abs() < 1e-12);
    }

    #[test]
    fn lemma_parametrizations_coincide_on_reference_spec() {
        let spec = discrete_reference_scm();
        let joint = JointTable::from_spec(&spec).unwrap();
        let formula = joint.nested_vde_formula(0, 1).unwrap();
        let p = joint.vde_parametrizations(0, 1).unwrap();
        for (name, value) in [("plugin", p.plugin), ("ipw", p.ipw), ("dr", p.dr)] {
            assert!(
                (value - formula).abs() < 1e-10,
                "{name} = {value} vs formula {formula}"
            );
        }
        for m in p.pi_means {
            assert!((m - 1.0).abs() < 1e-10, "pi mean {m}");
        }
        for m in p.mu_pi {
            assert!((m - formula).abs() < 1e-10);
        }
    }

    #[test]
    fn nde_dr_matches_enumeration_on_reference_spec() {
        let spec = discrete_reference_scm();
        let joint = JointTable::from_spec(&spec).unwrap();
        let dr = joint.nde_dr_value(0, 1, MediatorSet::Merged).unwrap();
        let enumd =
            enumerate_exact(&spec, &EffectQuery::new(EffectKind::NestedNde, 0, 1)).unwrap();
        assert!((dr - enumd).abs() < 1e-10, "{dr} vs {enumd}");
    }

    #[test]
    fn enumeration_rejects_gaussian_specs() {
        let spec = linear_scm(2, 2, 2, 1).unwrap();
        assert!(matches!(
            enumerate_exact(&spec, &EffectQuery::vde(1, 0)),
            Err(Error::NotEnumerable(_))
        ));
    }
}
