//! Nuisance parameters for the nested-term estimators.
//!
//! Two families are fit per training split:
//!
//! * Importance weights, rewritten through Bayes' rule so only exposure
//!   propensities are modeled (never mediator densities):
//!   - `pi1 = 1[X=x1] / p(x1|Z)`
//!   - `pi2 = 1[X=x0] p(x1|W,Z) / (p(x0|W,Z) p(x1|Z))`
//!   - `pi3 = 1[X=x1] p(x0|V,W,Z) p(x1|W,Z) / (p(x1|V,W,Z) p(x0|W,Z) p(x1|Z))`
//!   Every component probability is clipped into `[eps, 1-eps]` before a
//!   ratio is formed, and clipping events are counted for diagnostics.
//!
//! * Nested regressions, fit on exposure-restricted subsamples because the
//!   estimating functional only evaluates each stage at one exposure:
//!   - `mu3 ~ Y | (V,W,Z)` on X = x1 rows,
//!   - `mu2 ~ mu3(V,W,Z) | (W,Z)` on X = x0 rows,
//!   - `mu1 ~ mu2(W,Z) | Z` on X = x1 rows.
//!
//! The two-stage analogue for nested mediator terms (NDE/NIE and the V-only
//! variant) swaps the exposure pattern: `mu2 ~ Y | (M,Z)` on x1 rows,
//! `mu1 ~ mu2(M,Z) | Z` on x0 rows.
//!
//! Each weight family has expectation 1, so self-normalization divides a
//! family by its empirical mean to stabilize small samples.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::data::{Block, Cohort};
use crate::error::{Error, Result};
use crate::learners::{
    fit_classifier, fit_regressor, FeatureMatrix, LearnerConfig, ProbClassifier, Regressor,
};
use crate::oracle::MediatorSet;

/// Running count of clipped probability evaluations.
#[derive(Debug, Default)]
pub struct ClipCounter {
    clipped: AtomicU64,
    total: AtomicU64,
}

impl ClipCounter {
    fn record(&self, was_clipped: bool) {
        self.total.fetch_add(1, Ordering::Relaxed);
        if was_clipped {
            self.clipped.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn stats(&self) -> ClipStats {
        ClipStats {
            clipped: self.clipped.load(Ordering::Relaxed),
            total: self.total.load(Ordering::Relaxed),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipStats {
    pub clipped: u64,
    pub total: u64,
}

impl ClipStats {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.clipped as f64 / self.total as f64
        }
    }

    pub fn merge(&mut self, other: ClipStats) {
        self.clipped += other.clipped;
        self.total += other.total;
    }
}

enum AnyClassifier {
    Fitted(Box<dyn ProbClassifier>),
    /// Constant P(X=1); used by the propensity misspecification injector.
    Constant(f64),
}

impl AnyClassifier {
    fn proba(&self, row: &[f64]) -> f64 {
        match self {
            AnyClassifier::Fitted(model) => model.predict_proba(row),
            AnyClassifier::Constant(p) => *p,
        }
    }
}

/// Fitted exposure models P(X=1 | .) for each conditioning set the weights
/// need, with the clip threshold and its event counter.
pub struct PropensitySet {
    p_z: AnyClassifier,
    p_wz: Option<AnyClassifier>,
    p_vwz: Option<AnyClassifier>,
    p_vz: Option<AnyClassifier>,
    clip: f64,
    counter: ClipCounter,
}

/// Which conditioning sets a caller needs fitted.
#[derive(Debug, Clone, Copy, Default)]
pub struct PropensityScope {
    pub wz: bool,
    pub vwz: bool,
    pub vz: bool,
}

impl PropensitySet {
    /// Fits the exposure models on the given training rows.
    pub fn fit(
        cohort: &Cohort,
        rows: &[usize],
        scope: PropensityScope,
        config: &LearnerConfig,
        clip: f64,
    ) -> Result<Self> {
        check_clip(clip)?;
        let labels: Vec<u8> = rows.iter().map(|&i| cohort.x()[i]).collect();
        let fit_on = |blocks: &[Block]| -> Result<AnyClassifier> {
            let features = FeatureMatrix::new(cohort.design_rows(blocks, rows))?;
            Ok(AnyClassifier::Fitted(fit_classifier(
                &features, &labels, config,
            )?))
        };
        Ok(PropensitySet {
            p_z: fit_on(&[Block::Z])?,
            p_wz: if scope.wz {
                Some(fit_on(&[Block::W, Block::Z])?)
            } else {
                None
            },
            p_vwz: if scope.vwz {
                Some(fit_on(&[Block::V, Block::W, Block::Z])?)
            } else {
                None
            },
            p_vz: if scope.vz {
                Some(fit_on(&[Block::V, Block::Z])?)
            } else {
                None
            },
            clip,
            counter: ClipCounter::default(),
        })
    }

    /// All models replaced by the marginal exposure frequency of the
    /// training rows (the broken-propensity injector).
    pub fn constant(cohort: &Cohort, rows: &[usize], clip: f64) -> Result<Self> {
        check_clip(clip)?;
        let ones = rows.iter().filter(|&&i| cohort.x()[i] == 1).count();
        let p = ones as f64 / rows.len() as f64;
        Ok(PropensitySet {
            p_z: AnyClassifier::Constant(p),
            p_wz: Some(AnyClassifier::Constant(p)),
            p_vwz: Some(AnyClassifier::Constant(p)),
            p_vz: Some(AnyClassifier::Constant(p)),
            clip,
            counter: ClipCounter::default(),
        })
    }

    fn clipped(&self, p_x1: f64, x: u8) -> f64 {
        let p = if x == 1 { p_x1 } else { 1.0 - p_x1 };
        let c = p.clamp(self.clip, 1.0 - self.clip);
        self.counter.record(c != p);
        c
    }

    /// Clipped P(X=x | Z=z).
    pub fn p_x_z(&self, z: &[f64], x: u8) -> f64 {
        self.clipped(self.p_z.proba(z), x)
    }

    /// Clipped P(X=x | W=w, Z=z). Feature order (w, z).
    pub fn p_x_wz(&self, wz: &[f64], x: u8) -> f64 {
        let model = self.p_wz.as_ref().expect("P(X | W,Z) was not fitted");
        self.clipped(model.proba(wz), x)
    }

    /// Clipped P(X=x | V=v, W=w, Z=z). Feature order (v, w, z).
    pub fn p_x_vwz(&self, vwz: &[f64], x: u8) -> f64 {
        let model = self.p_vwz.as_ref().expect("P(X | V,W,Z) was not fitted");
        self.clipped(model.proba(vwz), x)
    }

    /// Clipped P(X=x | V=v, Z=z). Feature order (v, z).
    pub fn p_x_vz(&self, vz: &[f64], x: u8) -> f64 {
        let model = self.p_vz.as_ref().expect("P(X | V,Z) was not fitted");
        self.clipped(model.proba(vz), x)
    }

    pub fn clip_stats(&self) -> ClipStats {
        self.counter.stats()
    }
}

fn check_clip(clip: f64) -> Result<()> {
    if !(clip > 0.0 && clip < 0.5) {
        return Err(Error::invalid("clip epsilon must lie in (0, 0.5)"));
    }
    Ok(())
}

/// The three importance weights for the nested VDE term at one row.
pub fn pi_weights(
    propensities: &PropensitySet,
    cohort: &Cohort,
    row: usize,
    x0: u8,
    x1: u8,
) -> [f64; 3] {
    let x = cohort.x()[row];
    let z = cohort.feature_row(&[Block::Z], row);
    let wz = cohort.feature_row(&[Block::W, Block::Z], row);
    let vwz = cohort.feature_row(&[Block::V, Block::W, Block::Z], row);
    let p_x1_z = propensities.p_x_z(&z, x1);
    let pi1 = f64::from(x == x1) / p_x1_z;
    let pi2 = if x == x0 {
        propensities.p_x_wz(&wz, x1) / (propensities.p_x_wz(&wz, x0) * p_x1_z)
    } else {
        0.0
    };
    let pi3 = if x == x1 {
        propensities.p_x_vwz(&vwz, x0) * propensities.p_x_wz(&wz, x1)
            / (propensities.p_x_vwz(&vwz, x1) * propensities.p_x_wz(&wz, x0) * p_x1_z)
    } else {
        0.0
    };
    [pi1, pi2, pi3]
}

/// The two importance weights for nested mediator terms (NDE/NIE family).
pub fn nde_pi_weights(
    propensities: &PropensitySet,
    cohort: &Cohort,
    row: usize,
    x0: u8,
    x1: u8,
    mediators: MediatorSet,
) -> [f64; 2] {
    let x = cohort.x()[row];
    let z = cohort.feature_row(&[Block::Z], row);
    let p_x0_z = propensities.p_x_z(&z, x0);
    let pi1 = f64::from(x == x0) / p_x0_z;
    let pi2 = if x == x1 {
        let (p_x0_mz, p_x1_mz) = match mediators {
            MediatorSet::Merged => {
                let mz = cohort.feature_row(&[Block::V, Block::W, Block::Z], row);
                (
                    propensities.p_x_vwz(&mz, x0),
                    propensities.p_x_vwz(&mz, x1),
                )
            }
            MediatorSet::VOnly => {
                let vz = cohort.feature_row(&[Block::V, Block::Z], row);
                (propensities.p_x_vz(&vz, x0), propensities.p_x_vz(&vz, x1))
            }
        };
        p_x0_mz / (p_x1_mz * p_x0_z)
    } else {
        0.0
    };
    [pi1, pi2]
}

/// Divides a weight family by its empirical mean, making the returned mean
/// exactly 1 up to floating-point rounding. Zero weights stay zero.
pub fn self_normalize(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::invalid("weights must be finite"));
    }
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    if !(mean > 0.0) {
        return Err(Error::DegenerateGroup(
            "weight family has non-positive mean (no rows of the required exposure)".into(),
        ));
    }
    Ok(weights.iter().map(|w| w / mean).collect())
}

enum AnyRegressor {
    Fitted(Box<dyn Regressor>),
    Zero,
}

impl AnyRegressor {
    fn predict(&self, row: &[f64]) -> f64 {
        match self {
            AnyRegressor::Fitted(model) => model.predict(row),
            AnyRegressor::Zero => 0.0,
        }
    }
}

/// Three-stage nested regressions for the VDE term. Each stage is already
/// pinned at the exposure the functional evaluates it at: `mu3` at x1,
/// `mu2` at x0, `mu1` at x1.
pub struct NestedRegressionSet {
    mu3: AnyRegressor,
    mu2: AnyRegressor,
    mu1: AnyRegressor,
}

impl NestedRegressionSet {
    /// mu3(v, w, x1, z) for a query row; feature order (v, w, z).
    pub fn mu3(&self, vwz: &[f64]) -> f64 {
        self.mu3.predict(vwz)
    }

    /// mu2(w, x0, z); feature order (w, z).
    pub fn mu2(&self, wz: &[f64]) -> f64 {
        self.mu2.predict(wz)
    }

    /// mu1(x1, z); feature is z.
    pub fn mu1(&self, z: &[f64]) -> f64 {
        self.mu1.predict(z)
    }

    /// All stages replaced by the constant 0 predictor (the broken-outcome
    /// injector).
    pub fn zeroed() -> Self {
        NestedRegressionSet {
            mu3: AnyRegressor::Zero,
            mu2: AnyRegressor::Zero,
            mu1: AnyRegressor::Zero,
        }
    }
}

fn split_by_exposure(cohort: &Cohort, rows: &[usize], x0: u8, x1: u8) -> Result<(Vec<usize>, Vec<usize>)> {
    let rows_x1: Vec<usize> = rows.iter().copied().filter(|&i| cohort.x()[i] == x1).collect();
    let rows_x0: Vec<usize> = rows.iter().copied().filter(|&i| cohort.x()[i] == x0).collect();
    if rows_x1.is_empty() || rows_x0.is_empty() {
        return Err(Error::DegenerateGroup(format!(
            "training rows contain {} at x1={x1} and {} at x0={x0}",
            rows_x1.len(),
            rows_x0.len()
        )));
    }
    Ok((rows_x0, rows_x1))
}

/// Fits the three-stage VDE regressions on the given training rows.
pub fn fit_nested(
    cohort: &Cohort,
    rows: &[usize],
    config: &LearnerConfig,
    x0: u8,
    x1: u8,
) -> Result<NestedRegressionSet> {
    let (rows_x0, rows_x1) = split_by_exposure(cohort, rows, x0, x1)?;

    let y_x1: Vec<f64> = rows_x1.iter().map(|&i| cohort.y()[i]).collect();
    let f3 = FeatureMatrix::new(cohort.design_rows(&[Block::V, Block::W, Block::Z], &rows_x1))?;
    let mu3 = fit_regressor(&f3, &y_x1, config)?;

    let pseudo2: Vec<f64> = rows_x0
        .iter()
        .map(|&i| mu3.predict(&cohort.feature_row(&[Block::V, Block::W, Block::Z], i)))
        .collect();
    let f2 = FeatureMatrix::new(cohort.design_rows(&[Block::W, Block::Z], &rows_x0))?;
    let mu2 = fit_regressor(&f2, &pseudo2, config)?;

    let pseudo1: Vec<f64> = rows_x1
        .iter()
        .map(|&i| mu2.predict(&cohort.feature_row(&[Block::W, Block::Z], i)))
        .collect();
    let f1 = FeatureMatrix::new(cohort.design_rows(&[Block::Z], &rows_x1))?;
    let mu1 = fit_regressor(&f1, &pseudo1, config)?;

    Ok(NestedRegressionSet {
        mu3: AnyRegressor::Fitted(mu3),
        mu2: AnyRegressor::Fitted(mu2),
        mu1: AnyRegressor::Fitted(mu1),
    })
}

/// Two-stage regressions for the nested mediator term: `mu2` pinned at x1,
/// `mu1` pinned at x0.
pub struct NdeRegressionSet {
    mu2: AnyRegressor,
    mu1: AnyRegressor,
    mediators: MediatorSet,
}

impl NdeRegressionSet {
    pub fn mediators(&self) -> MediatorSet {
        self.mediators
    }

    /// mu2(m, x1, z); feature order (v, w, z) for merged or (v, z) for
    /// V-only.
    pub fn mu2(&self, mz: &[f64]) -> f64 {
        self.mu2.predict(mz)
    }

    /// mu1(x0, z); feature is z.
    pub fn mu1(&self, z: &[f64]) -> f64 {
        self.mu1.predict(z)
    }

    pub fn zeroed(mediators: MediatorSet) -> Self {
        NdeRegressionSet {
            mu2: AnyRegressor::Zero,
            mu1: AnyRegressor::Zero,
            mediators,
        }
    }

    pub fn mediator_blocks(mediators: MediatorSet) -> &'static [Block] {
        match mediators {
            MediatorSet::Merged => &[Block::V, Block::W, Block::Z],
            MediatorSet::VOnly => &[Block::V, Block::Z],
        }
    }
}

/// Fits the two-stage mediator-term regressions on the given training rows.
pub fn fit_nde_nuisances(
    cohort: &Cohort,
    rows: &[usize],
    mediators: MediatorSet,
    config: &LearnerConfig,
    x0: u8,
    x1: u8,
) -> Result<NdeRegressionSet> {
    let (rows_x0, rows_x1) = split_by_exposure(cohort, rows, x0, x1)?;
    let blocks = NdeRegressionSet::mediator_blocks(mediators);

    let y_x1: Vec<f64> = rows_x1.iter().map(|&i| cohort.y()[i]).collect();
    let f2 = FeatureMatrix::new(cohort.design_rows(blocks, &rows_x1))?;
    let mu2 = fit_regressor(&f2, &y_x1, config)?;

    let pseudo1: Vec<f64> = rows_x0
        .iter()
        .map(|&i| mu2.predict(&cohort.feature_row(blocks, i)))
        .collect();
    let f1 = FeatureMatrix::new(cohort.design_rows(&[Block::Z], &rows_x0))?;
    let mu1 = fit_regressor(&f1, &pseudo1, config)?;

    Ok(NdeRegressionSet {
        mu2: AnyRegressor::Fitted(mu2),
        mu1: AnyRegressor::Fitted(mu1),
        mediators,
    })
}

/// Backdoor outcome model E[Y | x, Z], or its zeroed stand-in under the
/// broken-outcome injector.
pub struct BackdoorRegressor {
    inner: AnyRegressor,
}

impl BackdoorRegressor {
    pub fn fitted(model: Box<dyn Regressor>) -> Self {
        BackdoorRegressor {
            inner: AnyRegressor::Fitted(model),
        }
    }

    pub fn zeroed() -> Self {
        BackdoorRegressor {
            inner: AnyRegressor::Zero,
        }
    }

    pub fn predict(&self, z: &[f64]) -> f64 {
        self.inner.predict(z)
    }
}

/// Backdoor nuisance: E[Y | x, Z] fit on the X = x training rows.
pub fn fit_backdoor_regression(
    cohort: &Cohort,
    rows: &[usize],
    config: &LearnerConfig,
    x: u8,
) -> Result<Box<dyn Regressor>> {
    let rows_x: Vec<usize> = rows.iter().copied().filter(|&i| cohort.x()[i] == x).collect();
    if rows_x.is_empty() {
        return Err(Error::DegenerateGroup(format!(
            "no training rows with exposure {x}"
        )));
    }
    let y: Vec<f64> = rows_x.iter().map(|&i| cohort.y()[i]).collect();
    let f = FeatureMatrix::new(cohort.design_rows(&[Block::Z], &rows_x))?;
    fit_regressor(&f, &y, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::binary_scm;

    struct FixedProb(f64);
    impl ProbClassifier for FixedProb {
        fn predict_proba(&self, _row: &[f64]) -> f64 {
            self.0
        }
    }

    fn manual_propensities(p_z: f64, p_wz: f64, p_vwz: f64, clip: f64) -> PropensitySet {
        PropensitySet {
            p_z: AnyClassifier::Fitted(Box::new(FixedProb(p_z))),
            p_wz: Some(AnyClassifier::Fitted(Box::new(FixedProb(p_wz)))),
            p_vwz: Some(AnyClassifier::Fitted(Box::new(FixedProb(p_vwz)))),
            p_vz: None,
            clip,
            counter: ClipCounter::default(),
        }
    }

    #[test]
    fn pi_weights_match_direct_arithmetic() {
        // p(x1|Z)=0.5, p(x1|W,Z)=0.6 (so p(x0|W,Z)=0.5 is impossible with one
        // binary model; use p(x0|.)=1-p(x1|.)): with p(x1|V,W,Z)=0.6,
        // pi3 = (0.4 * 0.6) / (0.6 * 0.4 * 0.5) = 2.0 for an X=x1 row.
        let cohort = binary_scm().sample(50, 1).unwrap();
        let props = manual_propensities(0.5, 0.6, 0.6, 1e-4);
        let row_x1 = (0..cohort.n()).find(|&i| cohort.x()[i] == 1).unwrap();
        let row_x0 = (0..cohort.n()).find(|&i| cohort.x()[i] == 0).unwrap();
        let w1 = pi_weights(&props, &cohort, row_x1, 0, 1);
        assert!((w1[0] - 2.0).abs() < 1e-12);
        assert_eq!(w1[1], 0.0);
        assert!((w1[2] - (0.4 * 0.6) / (0.6 * 0.4 * 0.5)).abs() < 1e-12);
        let w0 = pi_weights(&props, &cohort, row_x0, 0, 1);
        assert_eq!(w0[0], 0.0);
        assert_eq!(w0[2], 0.0);
        assert!((w0[1] - 0.6 / (0.4 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn clipping_is_recorded() {
        let cohort = binary_scm().sample(20, 2).unwrap();
        let props = manual_propensities(0.9999999, 0.5, 0.5, 1e-4);
        let row = (0..cohort.n()).find(|&i| cohort.x()[i] == 1).unwrap();
        let _ = pi_weights(&props, &cohort, row, 0, 1);
        let stats = props.clip_stats();
        assert!(stats.clipped > 0, "{stats:?}");
        assert!(stats.total >= stats.clipped);
    }

    #[test]
    fn self_normalize_direct_example() {
        let out = self_normalize(&[0.5, 1.5, 2.0]).unwrap();
        assert_eq!(out, vec![0.375, 1.125, 1.5]);
        let mean: f64 = out.iter().sum::<f64>() / 3.0;
        assert!((mean - 1.0).abs() < 1e-15);
    }

    #[test]
    fn self_normalize_is_idempotent_and_keeps_zeros() {
        let once = self_normalize(&[0.0, 2.0, 0.0, 2.0]).unwrap();
        assert_eq!(once[0], 0.0);
        assert_eq!(once[2], 0.0);
        let twice = self_normalize(&once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn self_normalize_rejects_all_zero() {
        assert!(matches!(
            self_normalize(&[0.0, 0.0]),
            Err(Error::DegenerateGroup(_))
        ));
    }

    #[test]
    fn constant_outcome_propagates_through_stages() {
        let cohort = {
            let base = binary_scm().sample(400, 3).unwrap();
            // force Y identically c while keeping the other columns
            let c = 0.75;
            let y = ndarray::Array1::from_elem(base.n(), c);
            Cohort::new(
                base.z().clone(),
                base.x().to_vec(),
                base.w().clone(),
                base.v().clone(),
                y,
            )
            .unwrap()
        };
        let rows: Vec<usize> = (0..cohort.n()).collect();
        let nested = fit_nested(&cohort, &rows, &LearnerConfig::ridge(), 0, 1).unwrap();
        for i in (0..cohort.n()).step_by(37) {
            let vwz = cohort.feature_row(&[Block::V, Block::W, Block::Z], i);
            let wz = cohort.feature_row(&[Block::W, Block::Z], i);
            let z = cohort.feature_row(&[Block::Z], i);
            assert!((nested.mu3(&vwz) - 0.75).abs() < 1e-9);
            assert!((nested.mu2(&wz) - 0.75).abs() < 1e-9);
            assert!((nested.mu1(&z) - 0.75).abs() < 1e-9);
        }
    }

    #[test]
    fn missing_exposure_group_is_an_error() {
        let cohort = binary_scm().sample(200, 4).unwrap();
        let rows_x1: Vec<usize> = (0..cohort.n()).filter(|&i| cohort.x()[i] == 1).collect();
        assert!(matches!(
            fit_nested(&cohort, &rows_x1, &LearnerConfig::ridge(), 0, 1),
            Err(Error::DegenerateGroup(_))
        ));
    }
}
