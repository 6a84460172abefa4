//! Cross-fitted effect estimators.
//!
//! Estimation of every effect reduces to a small set of term estimators:
//! backdoor means E[Y_x], the nested mediator term E[Y_{x1, M_{x0}}], and the
//! nested VDE term E[Y_{x1, V_{x0, W_{x1}}}]. Each term is estimated by
//! L-fold cross-fitting: nuisances are fit on the L-1 training folds, the
//! estimating functional is evaluated on the held-out fold, and the estimate
//! is the average of fold means. Evaluation rows are never seen by the
//! nuisance fits that score them, by construction.
//!
//! The doubly robust functional for the nested VDE term at one row is
//!
//! ```text
//! phi = pi3 (Y - mu3) + pi2 (mu3 - mu2) + pi1 (mu2 - mu1) + mu1
//! ```
//!
//! with each regression stage evaluated at its pinned exposure. Four modes
//! are supported: `plugin` (mean of mu1), `ipw` (mean of pi3 Y), `dr` (mean
//! of phi), and `sn-dr` (phi with every weight family divided by its
//! fold-level empirical mean). A misspecification injector can replace the
//! regressions by the constant 0 or the propensities by the marginal
//! exposure frequency, which is how the one-sided robustness property is
//! exercised in tests.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Block, Cohort};
use crate::error::{Error, Result};
use crate::learners::LearnerConfig;
use crate::nuisance::{
    fit_backdoor_regression, fit_nde_nuisances, fit_nested, nde_pi_weights, pi_weights,
    self_normalize, ClipStats, NdeRegressionSet, NestedRegressionSet, PropensityScope,
    PropensitySet,
};
use crate::oracle::{EffectKind, EffectQuery, MediatorSet};
use crate::util::{derive_seed, kahan_sum, mean};

/// Estimator flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModeKind {
    /// Mean of the last regression stage.
    Plugin,
    /// Pure importance sampling.
    Ipw,
    /// The doubly robust functional.
    #[default]
    Dr,
    /// Doubly robust with self-normalized weight families.
    #[serde(alias = "sndr")]
    SnDr,
}

/// Deliberate nuisance corruption for robustness tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Misspecification {
    #[default]
    None,
    /// Every regression stage becomes the constant 0 predictor.
    BreakMu,
    /// Every propensity model becomes the marginal exposure frequency.
    BreakPi,
    /// Both corruptions at once (the negative control).
    BreakBoth,
}

impl Misspecification {
    pub fn mu_broken(self) -> bool {
        matches!(self, Misspecification::BreakMu | Misspecification::BreakBoth)
    }

    pub fn pi_broken(self) -> bool {
        matches!(self, Misspecification::BreakPi | Misspecification::BreakBoth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct EstimatorMode {
    pub kind: ModeKind,
    #[serde(default)]
    pub misspec: Misspecification,
}

impl EstimatorMode {
    pub fn new(kind: ModeKind) -> Self {
        EstimatorMode {
            kind,
            misspec: Misspecification::None,
        }
    }

    pub fn dr() -> Self {
        EstimatorMode::new(ModeKind::Dr)
    }

    pub fn sn_dr() -> Self {
        EstimatorMode::new(ModeKind::SnDr)
    }

    fn needs_propensities(&self) -> bool {
        matches!(self.kind, ModeKind::Ipw | ModeKind::Dr | ModeKind::SnDr)
    }

    fn needs_regressions(&self) -> bool {
        matches!(self.kind, ModeKind::Plugin | ModeKind::Dr | ModeKind::SnDr)
    }
}

/// Returns the mode with the requested nuisance family broken. Injections
/// compose: breaking mu on a pi-broken mode breaks both.
pub fn inject_misspecification(mode: EstimatorMode, which: Misspecification) -> EstimatorMode {
    let misspec = match (
        mode.misspec.mu_broken() || which.mu_broken(),
        mode.misspec.pi_broken() || which.pi_broken(),
    ) {
        (false, false) => Misspecification::None,
        (true, false) => Misspecification::BreakMu,
        (false, true) => Misspecification::BreakPi,
        (true, true) => Misspecification::BreakBoth,
    };
    EstimatorMode { misspec, ..mode }
}

/// All estimator knobs. Defaults: L = 5 folds, clip = 1e-4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorSettings {
    pub folds: usize,
    pub clip: f64,
    pub mode: EstimatorMode,
    pub learner: LearnerConfig,
    pub seed: u64,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        EstimatorSettings {
            folds: 5,
            clip: 1e-4,
            mode: EstimatorMode::dr(),
            learner: LearnerConfig::default(),
            seed: 0,
        }
    }
}

impl EstimatorSettings {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_mode(mut self, mode: EstimatorMode) -> Self {
        self.mode = mode;
        self
    }
}

/// A random partition of rows into L folds whose sizes differ by at most 1.
/// Plans whose training complements would miss an exposure class are
/// resampled with a shifted seed up to 10 times.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    assignment: Vec<usize>,
    l: usize,
    seed: u64,
    resamples: u32,
}

impl FoldPlan {
    /// Unchecked balanced plan.
    pub fn new(n: usize, l: usize, seed: u64) -> Result<Self> {
        if l < 2 {
            return Err(Error::invalid("fold count must be at least 2"));
        }
        if l > n {
            return Err(Error::invalid("fold count exceeds row count"));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xF07D));
        perm.shuffle(&mut rng);
        let mut assignment = vec![0usize; n];
        for (pos, &row) in perm.iter().enumerate() {
            assignment[row] = pos % l;
        }
        Ok(FoldPlan {
            assignment,
            l,
            seed,
            resamples: 0,
        })
    }

    /// Balanced plan whose every training complement contains both exposure
    /// classes.
    pub fn balanced(x: &[u8], l: usize, seed: u64) -> Result<Self> {
        for attempt in 0..10u32 {
            let mut plan = FoldPlan::new(x.len(), l, derive_seed(seed, u64::from(attempt)))?;
            plan.seed = seed;
            plan.resamples = attempt;
            let ok = (0..l).all(|fold| {
                let mut has0 = false;
                let mut has1 = false;
                for (row, &f) in plan.assignment.iter().enumerate() {
                    if f != fold {
                        match x[row] {
                            0 => has0 = true,
                            _ => has1 = true,
                        }
                        if has0 && has1 {
                            break;
                        }
                    }
                }
                has0 && has1
            });
            if ok {
                return Ok(plan);
            }
        }
        Err(Error::DegenerateGroup(
            "could not build a fold plan with both exposure classes in every training complement"
                .into(),
        ))
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn resamples(&self) -> u32 {
        self.resamples
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn eval_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }
}

/// Which term estimators a suite run must produce.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TermRequest {
    pub backdoor_x0: bool,
    pub backdoor_x1: bool,
    pub nested_vde: bool,
    pub nested_merged: bool,
    pub nested_vonly: bool,
}

impl TermRequest {
    pub fn for_effect(kind: EffectKind) -> Self {
        let mut req = TermRequest::default();
        match kind {
            EffectKind::MeanY => req.backdoor_x1 = true,
            EffectKind::NestedVde => req.nested_vde = true,
            EffectKind::NestedNde => req.nested_merged = true,
            EffectKind::Te => {
                req.backdoor_x0 = true;
                req.backdoor_x1 = true;
            }
            EffectKind::Nde => {
                req.nested_merged = true;
                req.backdoor_x0 = true;
            }
            EffectKind::Nie => {
                req.backdoor_x1 = true;
                req.nested_merged = true;
            }
            EffectKind::NieStar => {
                req.backdoor_x1 = true;
                req.nested_vonly = true;
            }
            EffectKind::Vde => {
                req.backdoor_x1 = true;
                req.nested_vde = true;
            }
        }
        req
    }

    pub fn all() -> Self {
        TermRequest {
            backdoor_x0: true,
            backdoor_x1: true,
            nested_vde: true,
            nested_merged: true,
            nested_vonly: true,
        }
    }
}

/// Per-fold weight-family means, before and after self-normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldWeightMeans {
    pub fold: usize,
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
}

/// Diagnostics for one term estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TermDiagnostics {
    /// Weight family names, e.g. `["pi1", "pi2", "pi3"]`.
    pub families: Vec<String>,
    pub weight_means: Vec<FoldWeightMeans>,
    pub clip: ClipStats,
}

/// One cross-fitted term estimate with its per-row contributions.
#[derive(Debug, Clone)]
pub struct TermRun {
    /// Per-row functional values, aligned with the cohort rows.
    pub contributions: Vec<f64>,
    /// Average of fold means (the cross-fitting aggregation).
    pub value: f64,
    /// Grand mean over all rows, compensated; equals `value` when fold sizes
    /// are equal.
    pub pooled: f64,
    pub diagnostics: TermDiagnostics,
}

impl TermRun {
    fn from_folds(n: usize, folds: Vec<(Vec<usize>, TermFoldOutput)>) -> Self {
        let mut contributions = vec![0.0; n];
        let mut fold_means = Vec::with_capacity(folds.len());
        let mut diagnostics = TermDiagnostics::default();
        for (fold_idx, (rows, out)) in folds.into_iter().enumerate() {
            for (&row, &phi) in rows.iter().zip(&out.contributions) {
                contributions[row] = phi;
            }
            fold_means.push(mean(&out.contributions));
            if diagnostics.families.is_empty() {
                diagnostics.families = out.families;
            }
            diagnostics.weight_means.push(FoldWeightMeans {
                fold: fold_idx,
                pre: out.pre_means,
                post: out.post_means,
            });
            diagnostics.clip.merge(out.clip);
        }
        let value = mean(&fold_means);
        let pooled = kahan_sum(contributions.iter().copied()) / n as f64;
        TermRun {
            contributions,
            value,
            pooled,
            diagnostics,
        }
    }
}

struct TermFoldOutput {
    contributions: Vec<f64>,
    families: Vec<String>,
    pre_means: Vec<f64>,
    post_means: Vec<f64>,
    clip: ClipStats,
}

/// Everything a suite run produced: the fold plan plus one [`TermRun`] per
/// requested term.
pub struct SuiteRun {
    pub x0: u8,
    pub x1: u8,
    pub n: usize,
    pub plan: FoldPlan,
    pub backdoor_x0: Option<TermRun>,
    pub backdoor_x1: Option<TermRun>,
    pub nested_vde: Option<TermRun>,
    pub nested_merged: Option<TermRun>,
    pub nested_vonly: Option<TermRun>,
}

impl SuiteRun {
    fn term(&self, which: Term) -> &TermRun {
        let t = match which {
            Term::BackdoorX0 => &self.backdoor_x0,
            Term::BackdoorX1 => &self.backdoor_x1,
            Term::NestedVde => &self.nested_vde,
            Term::NestedMerged => &self.nested_merged,
            Term::NestedVonly => &self.nested_vonly,
        };
        t.as_ref().expect("term was not requested in this suite run")
    }

    /// The assembled effect value; shared terms are reused so decompositions
    /// telescope exactly.
    pub fn effect_value(&self, kind: EffectKind) -> f64 {
        match kind {
            EffectKind::MeanY => self.term(Term::BackdoorX1).value,
            EffectKind::NestedVde => self.term(Term::NestedVde).value,
            EffectKind::NestedNde => self.term(Term::NestedMerged).value,
            EffectKind::Te => self.term(Term::BackdoorX1).value - self.term(Term::BackdoorX0).value,
            EffectKind::Nde => {
                self.term(Term::NestedMerged).value - self.term(Term::BackdoorX0).value
            }
            EffectKind::Nie => {
                self.term(Term::BackdoorX1).value - self.term(Term::NestedMerged).value
            }
            EffectKind::NieStar => {
                self.term(Term::BackdoorX1).value - self.term(Term::NestedVonly).value
            }
            EffectKind::Vde => {
                self.term(Term::BackdoorX1).value - self.term(Term::NestedVde).value
            }
        }
    }

    /// Per-row influence contributions of the assembled effect.
    pub fn effect_contributions(&self, kind: EffectKind) -> Vec<f64> {
        let combine = |a: &TermRun, b: &TermRun| -> Vec<f64> {
            a.contributions
                .iter()
                .zip(&b.contributions)
                .map(|(x, y)| x - y)
                .collect()
        };
        match kind {
            EffectKind::MeanY => self.term(Term::BackdoorX1).contributions.clone(),
            EffectKind::NestedVde => self.term(Term::NestedVde).contributions.clone(),
            EffectKind::NestedNde => self.term(Term::NestedMerged).contributions.clone(),
            EffectKind::Te => combine(self.term(Term::BackdoorX1), self.term(Term::BackdoorX0)),
            EffectKind::Nde => combine(self.term(Term::NestedMerged), self.term(Term::BackdoorX0)),
            EffectKind::Nie => combine(self.term(Term::BackdoorX1), self.term(Term::NestedMerged)),
            EffectKind::NieStar => {
                combine(self.term(Term::BackdoorX1), self.term(Term::NestedVonly))
            }
            EffectKind::Vde => combine(self.term(Term::BackdoorX1), self.term(Term::NestedVde)),
        }
    }

    /// Diagnostics of the nested term backing `kind`, if any.
    pub fn nested_diagnostics(&self, kind: EffectKind) -> Option<&TermDiagnostics> {
        match kind {
            EffectKind::NestedVde | EffectKind::Vde => {
                self.nested_vde.as_ref().map(|t| &t.diagnostics)
            }
            EffectKind::NestedNde | EffectKind::Nde | EffectKind::Nie => {
                self.nested_merged.as_ref().map(|t| &t.diagnostics)
            }
            EffectKind::NieStar => self.nested_vonly.as_ref().map(|t| &t.diagnostics),
            _ => None,
        }
    }

    fn all_diagnostics(&self) -> Vec<(&'static str, &TermDiagnostics)> {
        let mut out = Vec::new();
        if let Some(t) = &self.backdoor_x0 {
            out.push(("backdoor_x0", &t.diagnostics));
        }
        if let Some(t) = &self.backdoor_x1 {
            out.push(("backdoor_x1", &t.diagnostics));
        }
        if let Some(t) = &self.nested_vde {
            out.push(("nested_vde", &t.diagnostics));
        }
        if let Some(t) = &self.nested_merged {
            out.push(("nested_nde", &t.diagnostics));
        }
        if let Some(t) = &self.nested_vonly {
            out.push(("nested_vonly", &t.diagnostics));
        }
        out
    }
}

#[derive(Clone, Copy)]
enum Term {
    BackdoorX0,
    BackdoorX1,
    NestedVde,
    NestedMerged,
    NestedVonly,
}

struct FoldArtifacts {
    propensities: Option<PropensitySet>,
    bd_mu_x0: Option<crate::nuisance::BackdoorRegressor>,
    bd_mu_x1: Option<crate::nuisance::BackdoorRegressor>,
    vde_regs: Option<NestedRegressionSet>,
    nde_regs: Option<NdeRegressionSet>,
    vonly_regs: Option<NdeRegressionSet>,
}

/// Runs cross-fitting once and evaluates every requested term on the shared
/// fold plan, so terms reused by several effects are numerically identical.
pub fn run_suite(
    cohort: &Cohort,
    x0: u8,
    x1: u8,
    request: TermRequest,
    settings: &EstimatorSettings,
) -> Result<SuiteRun> {
    if x0 > 1 || x1 > 1 {
        return Err(Error::invalid("exposure levels must be 0 or 1"));
    }
    let n = cohort.n();
    let plan = FoldPlan::balanced(cohort.x(), settings.folds, settings.seed)?;

    let fold_results: Vec<Result<FoldComputed>> = (0..plan.l())
        .into_par_iter()
        .map(|fold| compute_fold(cohort, x0, x1, request, settings, &plan, fold))
        .collect();

    let mut per_fold = Vec::with_capacity(plan.l());
    for r in fold_results {
        per_fold.push(r?);
    }

    // assemble term runs fold by fold
    let mut backdoor_x0_folds = Vec::new();
    let mut backdoor_x1_folds = Vec::new();
    let mut nested_vde_folds = Vec::new();
    let mut nested_merged_folds = Vec::new();
    let mut nested_vonly_folds = Vec::new();
    for fc in per_fold {
        let FoldComputed {
            eval_rows,
            backdoor_x0,
            backdoor_x1,
            nested_vde,
            nested_merged,
            nested_vonly,
        } = fc;
        if let Some(out) = backdoor_x0 {
            backdoor_x0_folds.push((eval_rows.clone(), out));
        }
        if let Some(out) = backdoor_x1 {
            backdoor_x1_folds.push((eval_rows.clone(), out));
        }
        if let Some(out) = nested_vde {
            nested_vde_folds.push((eval_rows.clone(), out));
        }
        if let Some(out) = nested_merged {
            nested_merged_folds.push((eval_rows.clone(), out));
        }
        if let Some(out) = nested_vonly {
            nested_vonly_folds.push((eval_rows, out));
        }
    }
    let build = |folds: Vec<(Vec<usize>, TermFoldOutput)>| -> Option<TermRun> {
        if folds.is_empty() {
            None
        } else {
            Some(TermRun::from_folds(n, folds))
        }
    };
    Ok(SuiteRun {
        x0,
        x1,
        n,
        plan,
        backdoor_x0: build(backdoor_x0_folds),
        backdoor_x1: build(backdoor_x1_folds),
        nested_vde: build(nested_vde_folds),
        nested_merged: build(nested_merged_folds),
        nested_vonly: build(nested_vonly_folds),
    })
}

struct FoldComputed {
    eval_rows: Vec<usize>,
    backdoor_x0: Option<TermFoldOutput>,
    backdoor_x1: Option<TermFoldOutput>,
    nested_vde: Option<TermFoldOutput>,
    nested_merged: Option<TermFoldOutput>,
    nested_vonly: Option<TermFoldOutput>,
}

fn compute_fold(
    cohort: &Cohort,
    x0: u8,
    x1: u8,
    request: TermRequest,
    settings: &EstimatorSettings,
    plan: &FoldPlan,
    fold: usize,
) -> Result<FoldComputed> {
    let mode = settings.mode;
    let train = plan.train_rows(fold);
    let eval_rows = plan.eval_rows(fold);

    let artifacts = fit_fold(cohort, &train, x0, x1, request, settings)?;

    let backdoor = |x: u8, mu: &Option<crate::nuisance::BackdoorRegressor>| -> TermFoldOutput {
        backdoor_fold(cohort, &eval_rows, x, &artifacts, mu, mode)
    };

    let backdoor_x0 = request
        .backdoor_x0
        .then(|| backdoor(x0, &artifacts.bd_mu_x0));
    let backdoor_x1 = request
        .backdoor_x1
        .then(|| backdoor(x1, &artifacts.bd_mu_x1));
    let nested_vde = request
        .nested_vde
        .then(|| vde_fold(cohort, &eval_rows, x0, x1, &artifacts, mode));
    let nested_merged = request
        .nested_merged
        .then(|| nde_fold(cohort, &eval_rows, x0, x1, MediatorSet::Merged, &artifacts, mode));
    let nested_vonly = request
        .nested_vonly
        .then(|| nde_fold(cohort, &eval_rows, x0, x1, MediatorSet::VOnly, &artifacts, mode));

    Ok(FoldComputed {
        eval_rows,
        backdoor_x0,
        backdoor_x1,
        nested_vde,
        nested_merged,
        nested_vonly,
    })
}

fn fit_fold(
    cohort: &Cohort,
    train: &[usize],
    x0: u8,
    x1: u8,
    request: TermRequest,
    settings: &EstimatorSettings,
) -> Result<FoldArtifacts> {
    let mode = settings.mode;
    let propensities = if mode.needs_propensities() {
        Some(if mode.misspec.pi_broken() {
            PropensitySet::constant(cohort, train, settings.clip)?
        } else {
            let scope = PropensityScope {
                wz: request.nested_vde,
                vwz: request.nested_vde || request.nested_merged,
                vz: request.nested_vonly,
            };
            PropensitySet::fit(cohort, train, scope, &settings.learner, settings.clip)?
        })
    } else {
        None
    };
    let break_mu = mode.misspec.mu_broken();
    let needs_regs = mode.needs_regressions();
    let fit_bd = |x: u8| -> Result<Option<crate::nuisance::BackdoorRegressor>> {
        if !needs_regs {
            return Ok(None);
        }
        Ok(Some(if break_mu {
            crate::nuisance::BackdoorRegressor::zeroed()
        } else {
            crate::nuisance::BackdoorRegressor::fitted(fit_backdoor_regression(
                cohort,
                train,
                &settings.learner,
                x,
            )?)
        }))
    };
    let bd_mu_x0 = if request.backdoor_x0 { fit_bd(x0)? } else { None };
    let bd_mu_x1 = if request.backdoor_x1 { fit_bd(x1)? } else { None };
    let vde_regs = if request.nested_vde && needs_regs {
        Some(if break_mu {
            NestedRegressionSet::zeroed()
        } else {
            fit_nested(cohort, train, &settings.learner, x0, x1)?
        })
    } else {
        None
    };
    let nde_regs = if request.nested_merged && needs_regs {
        Some(if break_mu {
            NdeRegressionSet::zeroed(MediatorSet::Merged)
        } else {
            fit_nde_nuisances(cohort, train, MediatorSet::Merged, &settings.learner, x0, x1)?
        })
    } else {
        None
    };
    let vonly_regs = if request.nested_vonly && needs_regs {
        Some(if break_mu {
            NdeRegressionSet::zeroed(MediatorSet::VOnly)
        } else {
            fit_nde_nuisances(cohort, train, MediatorSet::VOnly, &settings.learner, x0, x1)?
        })
    } else {
        None
    };
    Ok(FoldArtifacts {
        propensities,
        bd_mu_x0,
        bd_mu_x1,
        vde_regs,
        nde_regs,
        vonly_regs,
    })
}

fn normalize_if(mode: ModeKind, weights: Vec<f64>) -> (Vec<f64>, f64, f64) {
    let pre = mean(&weights);
    if mode == ModeKind::SnDr {
        let post = self_normalize(&weights).unwrap_or_else(|_| weights.clone());
        let post_mean = mean(&post);
        (post, pre, post_mean)
    } else {
        (weights, pre, pre)
    }
}

fn backdoor_fold(
    cohort: &Cohort,
    eval_rows: &[usize],
    x: u8,
    artifacts: &FoldArtifacts,
    mu: &Option<crate::nuisance::BackdoorRegressor>,
    mode: EstimatorMode,
) -> TermFoldOutput {
    let clip_before = artifacts
        .propensities
        .as_ref()
        .map(|p| p.clip_stats())
        .unwrap_or_default();
    let weights: Vec<f64> = if mode.needs_propensities() {
        let props = artifacts.propensities.as_ref().unwrap();
        eval_rows
            .iter()
            .map(|&i| {
                if cohort.x()[i] == x {
                    let z = cohort.feature_row(&[Block::Z], i);
                    1.0 / props.p_x_z(&z, x)
                } else {
                    0.0
                }
            })
            .collect()
    } else {
        vec![0.0; eval_rows.len()]
    };
    let (weights, pre, post) = normalize_if(mode.kind, weights);
    let mu_hat: Vec<f64> = if mode.needs_regressions() {
        let model = mu.as_ref().expect("backdoor regression missing");
        eval_rows
            .iter()
            .map(|&i| model.predict(&cohort.feature_row(&[Block::Z], i)))
            .collect()
    } else {
        vec![0.0; eval_rows.len()]
    };
    let contributions: Vec<f64> = eval_rows
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let y = cohort.y()[i];
            match mode.kind {
                ModeKind::Plugin => mu_hat[k],
                ModeKind::Ipw => weights[k] * y,
                ModeKind::Dr | ModeKind::SnDr => weights[k] * (y - mu_hat[k]) + mu_hat[k],
            }
        })
        .collect();
    let clip_after = artifacts
        .propensities
        .as_ref()
        .map(|p| p.clip_stats())
        .unwrap_or_default();
    TermFoldOutput {
        contributions,
        families: if mode.needs_propensities() {
            vec!["w".into()]
        } else {
            Vec::new()
        },
        pre_means: if mode.needs_propensities() {
            vec![pre]
        } else {
            Vec::new()
        },
        post_means: if mode.needs_propensities() {
            vec![post]
        } else {
            Vec::new()
        },
        clip: ClipStats {
            clipped: clip_after.clipped - clip_before.clipped,
            total: clip_after.total - clip_before.total,
        },
    }
}

fn vde_fold(
    cohort: &Cohort,
    eval_rows: &[usize],
    x0: u8,
    x1: u8,
    artifacts: &FoldArtifacts,
    mode: EstimatorMode,
) -> TermFoldOutput {
    let clip_before = artifacts
        .propensities
        .as_ref()
        .map(|p| p.clip_stats())
        .unwrap_or_default();
    let m = eval_rows.len();
    let (mut pi1, mut pi2, mut pi3) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    if mode.needs_propensities() {
        let props = artifacts.propensities.as_ref().unwrap();
        for (k, &i) in eval_rows.iter().enumerate() {
            let w = pi_weights(props, cohort, i, x0, x1);
            pi1[k] = w[0];
            pi2[k] = w[1];
            pi3[k] = w[2];
        }
    }
    let (pi1, pre1, post1) = normalize_if(mode.kind, pi1);
    let (pi2, pre2, post2) = normalize_if(mode.kind, pi2);
    let (pi3, pre3, post3) = normalize_if(mode.kind, pi3);
    let (mut mu3, mut mu2, mut mu1) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    if mode.needs_regressions() {
        let regs = artifacts.vde_regs.as_ref().expect("vde regressions missing");
        for (k, &i) in eval_rows.iter().enumerate() {
            mu3[k] = regs.mu3(&cohort.feature_row(&[Block::V, Block::W, Block::Z], i));
            mu2[k] = regs.mu2(&cohort.feature_row(&[Block::W, Block::Z], i));
            mu1[k] = regs.mu1(&cohort.feature_row(&[Block::Z], i));
        }
    }
    let contributions: Vec<f64> = eval_rows
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let y = cohort.y()[i];
            match mode.kind {
                ModeKind::Plugin => mu1[k],
                ModeKind::Ipw => pi3[k] * y,
                ModeKind::Dr | ModeKind::SnDr => {
                    pi3[k] * (y - mu3[k])
                        + pi2[k] * (mu3[k] - mu2[k])
                        + pi1[k] * (mu2[k] - mu1[k])
                        + mu1[k]
                }
            }
        })
        .collect();
    let clip_after = artifacts
        .propensities
        .as_ref()
        .map(|p| p.clip_stats())
        .unwrap_or_default();
    let has_weights = mode.needs_propensities();
    TermFoldOutput {
        contributions,
        families: if has_weights {
            vec!["pi1".into(), "pi2".into(), "pi3".into()]
        } else {
            Vec::new()
        },
        pre_means: if has_weights {
            vec![pre1, pre2, pre3]
        } else {
            Vec::new()
        },
        post_means: if has_weights {
            vec![post1, post2, post3]
        } else {
            Vec::new()
        },
        clip: ClipStats {
            clipped: clip_after.clipped - clip_before.clipped,
            total: clip_after.total - clip_before.total,
        },
    }
}

fn nde_fold(
    cohort: &Cohort,
    eval_rows: &[usize],
    x0: u8,
    x1: u8,
    mediators: MediatorSet,
    artifacts: &FoldArtifacts,
    mode: EstimatorMode,
) -> TermFoldOutput {
    let clip_before = artifacts
        .propensities
        .as_ref()
        .map(|p| p.clip_stats())
        .unwrap_or_default();
    let m = eval_rows.len();
    let (mut pi1, mut pi2) = (vec![0.0; m], vec![0.0; m]);
    if mode.needs_propensities() {
        let props = artifacts.propensities.as_ref().unwrap();
        for (k, &i) in eval_rows.iter().enumerate() {
            let w = nde_pi_weights(props, cohort, i, x0, x1, mediators);
            pi1[k] = w[0];
            pi2[k] = w[1];
        }
    }
    let (pi1, pre1, post1) = normalize_if(mode.kind, pi1);
    let (pi2, pre2, post2) = normalize_if(mode.kind, pi2);
    let blocks = NdeRegressionSet::mediator_blocks(mediators);
    let (mut mu2, mut mu1) = (vec![0.0; m], vec![0.0; m]);
    if mode.needs_regressions() {
        let regs = match mediators {
            MediatorSet::Merged => artifacts.nde_regs.as_ref(),
            MediatorSet::VOnly => artifacts.vonly_regs.as_ref(),
        }
        .expect("mediator regressions missing");
        for (k, &i) in eval_rows.iter().enumerate() {
            mu2[k] = regs.mu2(&cohort.feature_row(blocks, i));
            mu1[k] = regs.mu1(&cohort.feature_row(&[Block::Z], i));
        }
    }
    let contributions: Vec<f64> = eval_rows
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let y = cohort.y()[i];
            match mode.kind {
                ModeKind::Plugin => mu1[k],
                ModeKind::Ipw => pi2[k] * y,
                ModeKind::Dr | ModeKind::SnDr => {
                    pi2[k] * (y - mu2[k]) + pi1[k] * (mu2[k] - mu1[k]) + mu1[k]
                }
            }
        })
        .collect();
    let clip_after = artifacts
        .propensities
        .as_ref()
        .map(|p| p.clip_stats())
        .unwrap_or_default();
    let has_weights = mode.needs_propensities();
    TermFoldOutput {
        contributions,
        families: if has_weights {
            vec!["pi1".into(), "pi2".into()]
        } else {
            Vec::new()
        },
        pre_means: if has_weights {
            vec![pre1, pre2]
        } else {
            Vec::new()
        },
        post_means: if has_weights {
            vec![post1, post2]
        } else {
            Vec::new()
        },
        clip: ClipStats {
            clipped: clip_after.clipped - clip_before.clipped,
            total: clip_after.total - clip_before.total,
        },
    }
}

/// Confidence interval attached to an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub method: CiMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiMethod {
    PercentileBootstrap,
    InfluenceFunction,
}

/// Summary diagnostics embedded in every estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EstimateDiagnostics {
    /// Per-term nuisance diagnostics (weight means per fold, clipping).
    pub terms: Vec<NamedTermDiagnostics>,
    /// Fraction of clipped probability evaluations across all terms.
    pub clipped_fraction: f64,
    /// Set when the clipped fraction exceeds 5%.
    pub positivity_warning: bool,
    /// Fold plans discarded before one with both exposure classes was found.
    pub plan_resamples: u32,
    /// Bootstrap replicates redrawn because the resample was degenerate.
    pub bootstrap_redraws: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTermDiagnostics {
    pub term: String,
    #[serde(flatten)]
    pub diagnostics: TermDiagnostics,
}

/// A point estimate of one effect with provenance and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub effect: EffectKind,
    pub x0: u8,
    pub x1: u8,
    pub mediators: MediatorSet,
    pub value: f64,
    pub ci: Option<CiInterval>,
    pub n: usize,
    pub folds: usize,
    pub mode: EstimatorMode,
    pub seed: u64,
    pub diagnostics: EstimateDiagnostics,
}

pub(crate) fn estimate_from_suite(
    suite: &SuiteRun,
    query: &EffectQuery,
    settings: &EstimatorSettings,
) -> EffectEstimate {
    let mut diag = EstimateDiagnostics {
        plan_resamples: suite.plan.resamples(),
        ..Default::default()
    };
    let mut clip = ClipStats::default();
    for (name, d) in suite.all_diagnostics() {
        clip.merge(d.clip);
        diag.terms.push(NamedTermDiagnostics {
            term: name.to_string(),
            diagnostics: d.clone(),
        });
    }
    diag.clipped_fraction = clip.fraction();
    diag.positivity_warning = diag.clipped_fraction > 0.05;
    EffectEstimate {
        effect: query.kind,
        x0: query.x0,
        x1: query.x1,
        mediators: query.mediators,
        value: suite.effect_value(query.kind),
        ci: None,
        n: suite.n,
        folds: suite.plan.l(),
        mode: settings.mode,
        seed: settings.seed,
        diagnostics: diag,
    }
}

fn request_for(query: &EffectQuery) -> TermRequest {
    let mut req = TermRequest::for_effect(query.kind);
    // NestedNde with V-only selector redirects to the V-only term
    if query.kind == EffectKind::NestedNde && query.mediators == MediatorSet::VOnly {
        req.nested_merged = false;
        req.nested_vonly = true;
    }
    req
}

/// Cross-fitted estimate of any effect or term named by the query.
pub fn estimate_effect(
    cohort: &Cohort,
    query: &EffectQuery,
    settings: &EstimatorSettings,
) -> Result<EffectEstimate> {
    let (estimate, _) = estimate_effect_run(cohort, query, settings)?;
    Ok(estimate)
}

/// Like [`estimate_effect`] but also returns the suite run (fold plan and
/// per-row contributions) for downstream inference.
pub fn estimate_effect_run(
    cohort: &Cohort,
    query: &EffectQuery,
    settings: &EstimatorSettings,
) -> Result<(EffectEstimate, SuiteRun)> {
    let mut suite = run_suite(cohort, query.x0, query.x1, request_for(query), settings)?;
    // V-only nested term doubles as the NestedNde value when selected
    if query.kind == EffectKind::NestedNde && query.mediators == MediatorSet::VOnly {
        suite.nested_merged = suite.nested_vonly.clone();
    }
    let estimate = estimate_from_suite(&suite, query, settings);
    Ok((estimate, suite))
}

/// E[Y_{x1, V_{x0, W_{x1}}}] by cross-fitting.
pub fn crossfit_nested_vde(
    cohort: &Cohort,
    x0: u8,
    x1: u8,
    settings: &EstimatorSettings,
) -> Result<EffectEstimate> {
    estimate_effect(
        cohort,
        &EffectQuery::new(EffectKind::NestedVde, x0, x1),
        settings,
    )
}

/// Cross-fitted AIPW backdoor mean E[Y_x].
pub fn crossfit_backdoor_mean(
    cohort: &Cohort,
    x: u8,
    settings: &EstimatorSettings,
) -> Result<EffectEstimate> {
    estimate_effect(cohort, &EffectQuery::mean_y(x), settings)
}

/// E[Y_{x1, M_{x0}}] by cross-fitting, with M chosen by the mediator set.
pub fn crossfit_nested_nde(
    cohort: &Cohort,
    mediators: MediatorSet,
    x0: u8,
    x1: u8,
    settings: &EstimatorSettings,
) -> Result<EffectEstimate> {
    estimate_effect(
        cohort,
        &EffectQuery::new(EffectKind::NestedNde, x0, x1).with_mediators(mediators),
        settings,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::binary_scm;

    #[test]
    fn fold_plan_partitions_and_balances() {
        let plan = FoldPlan::new(103, 5, 7).unwrap();
        let mut seen = vec![false; 103];
        let mut sizes = vec![0usize; 5];
        for fold in 0..5 {
            for i in plan.eval_rows(fold) {
                assert!(!seen[i], "row {i} in two folds");
                seen[i] = true;
                sizes[fold] += 1;
            }
            let train = plan.train_rows(fold);
            let eval = plan.eval_rows(fold);
            assert!(train.iter().all(|i| !eval.contains(i)));
        }
        assert!(seen.iter().all(|&s| s));
        let max = sizes.iter().max().unwrap();
        let min = sizes.iter().min().unwrap();
        assert!(max - min <= 1, "{sizes:?}");
    }

    #[test]
    fn fold_plan_is_deterministic() {
        let a = FoldPlan::new(50, 5, 3).unwrap();
        let b = FoldPlan::new(50, 5, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn balanced_plan_rejects_single_class() {
        let x = vec![1u8; 40];
        assert!(matches!(
            FoldPlan::balanced(&x, 5, 1),
            Err(Error::DegenerateGroup(_))
        ));
    }

    #[test]
    fn te_decomposes_exactly() {
        let cohort = binary_scm().sample(2_000, 17).unwrap();
        let settings = EstimatorSettings {
            learner: LearnerConfig::exact_frequency(),
            ..EstimatorSettings::default()
        };
        let suite = run_suite(&cohort, 0, 1, TermRequest::all(), &settings).unwrap();
        let te = suite.effect_value(EffectKind::Te);
        let nde = suite.effect_value(EffectKind::Nde);
        let nie = suite.effect_value(EffectKind::Nie);
        assert!((te - (nde + nie)).abs() < 1e-12);
    }

    #[test]
    fn sn_weight_means_are_exactly_one() {
        let cohort = binary_scm().sample(3_000, 5).unwrap();
        let settings = EstimatorSettings {
            mode: EstimatorMode::sn_dr(),
            learner: LearnerConfig::exact_frequency(),
            ..EstimatorSettings::default()
        };
        let suite = run_suite(
            &cohort,
            0,
            1,
            TermRequest {
                nested_vde: true,
                ..Default::default()
            },
            &settings,
        )
        .unwrap();
        let run = suite.nested_vde.as_ref().unwrap();
        for fold in &run.diagnostics.weight_means {
            for &post in &fold.post {
                assert!((post - 1.0).abs() < 1e-12, "post mean {post}");
            }
        }
    }

    #[test]
    fn identical_exposures_give_near_zero_vde() {
        let cohort = binary_scm().sample(8_000, 23).unwrap();
        let settings = EstimatorSettings {
            learner: LearnerConfig::exact_frequency(),
            ..EstimatorSettings::default()
        };
        let est = estimate_effect(&cohort, &EffectQuery::new(EffectKind::Vde, 1, 1), &settings)
            .unwrap();
        assert!(est.value.abs() < 0.03, "VDE(x,x) = {}", est.value);
    }
}
