//! Estimation of path-specific causal effects from tabular data with two
//! mediator blocks.
//!
//! The library is organized around a fixed causal graph over five variable
//! roles: baseline confounders `Z`, a binary exposure `X`, an upstream
//! mediator block `W`, a downstream mediator block `V`, and an outcome `Y`,
//! with edges Z -> {X, W, V, Y}, X -> {W, V, Y}, W -> {V, Y}, V -> Y and a
//! latent common cause of X and Z. On this graph the following effects are
//! estimable from observational data:
//!
//! * `TE`   = E[Y_{x1}] - E[Y_{x0}]
//! * `NDE`  = E[Y_{x1, W_{x0}, V_{x0}}] - E[Y_{x0}]
//! * `NIE`  = E[Y_{x1}] - E[Y_{x1, W_{x0}, V_{x0}}]
//! * `NIE*` = the NIE computed as if V were the only mediator
//! * `VDE`  = E[Y_{x1}] - E[Y_{x1, V_{x0, W_{x1}}}]
//!
//! Modules:
//!
//! * [`scm`] generates synthetic structural causal models and samples cohorts
//!   from them, including interventional and counterfactual hooks.
//! * [`oracle`] computes ground-truth effect values by two independent routes:
//!   counterfactual simulation/enumeration and evaluation of the
//!   identification formula on a tabulated joint.
//! * [`learners`] provides the supervised models used for nuisance fits
//!   (ridge, IRLS logistic, boosted trees, exact frequencies).
//! * [`nuisance`] assembles the regression and importance-weight nuisances,
//!   with propensity clipping and self-normalization.
//! * [`estimators`] implements the cross-fitted doubly robust estimators and
//!   effect assembly.
//! * [`inference`] adds bootstrap and influence-function intervals, binned
//!   conditional effects, and convergence/imbalance study drivers.
//! * [`ingest`] loads role-typed CSV cohorts and implements the trajectory
//!   preprocessing primitives (exponentially weighted averaging, paired
//!   oximetry discrepancies, cohort filters).

pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod ingest;
pub mod learners;
pub mod nuisance;
pub mod oracle;
pub mod scm;
pub(crate) mod util;

pub use data::{Cohort, Sample};
pub use error::{Error, Result};
pub use estimators::{EffectEstimate, EstimatorMode, FoldPlan, Misspecification, ModeKind};
pub use oracle::{EffectKind, EffectQuery, MediatorSet};
pub use scm::ScmSpec;
