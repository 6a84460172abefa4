//! Run configuration: a JSON document drives every subcommand, with a small
//! set of command-line flags layered on top. Every run emits the fully
//! resolved configuration (all defaults explicit) so results reproduce from
//! their own provenance block alone.

use serde::{Deserialize, Serialize};

use pathfx_core::error::{Error, Result};
use pathfx_core::estimators::{EstimatorSettings, Misspecification, ModeKind};
use pathfx_core::inference::{DEFAULT_BOOTSTRAP, DEFAULT_LEVEL};
use pathfx_core::ingest::{EventIngestConfig, FilterRule, RoleSchema};
use pathfx_core::learners::LearnerConfig;
use pathfx_core::oracle::{EffectKind, EffectQuery, MediatorSet};
use pathfx_core::scm::ScmSpec;

/// Synthetic data source: a builtin family or an inline spec, plus sampling
/// parameters. When resolved, the spec is always inlined so provenance is
/// self-contained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ScmSource {
    /// "binary" | "discrete-reference" | "linear" | "nonlinear"; ignored
    /// when `spec` is given.
    pub builtin: Option<String>,
    pub dim_z: Option<usize>,
    pub dim_w: Option<usize>,
    pub dim_v: Option<usize>,
    pub depth: Option<usize>,
    pub trees: Option<usize>,
    pub spec_seed: Option<u64>,
    /// Inline spec document (takes precedence over `builtin`).
    pub spec: Option<ScmSpec>,
    /// Calibrate the exposure threshold to this group-1 fraction.
    pub eta: Option<f64>,
    /// Cohort size to sample.
    pub n: Option<usize>,
    pub sample_seed: Option<u64>,
}

impl ScmSource {
    /// Resolves to a concrete spec, inlining builtins.
    pub fn resolve_spec(&self) -> Result<ScmSpec> {
        let base = if let Some(spec) = &self.spec {
            spec.clone()
        } else {
            let seed = self.spec_seed.unwrap_or(0);
            match self.builtin.as_deref() {
                Some("binary") | None => pathfx_core::scm::binary_scm(),
                Some("discrete-reference") => pathfx_core::scm::discrete_reference_scm(),
                Some("linear") => pathfx_core::scm::linear_scm(
                    self.dim_z.unwrap_or(3),
                    self.dim_w.unwrap_or(10),
                    self.dim_v.unwrap_or(3),
                    seed,
                )?,
                Some("nonlinear") => pathfx_core::scm::nonlinear_scm(
                    self.dim_z.unwrap_or(3),
                    self.dim_w.unwrap_or(10),
                    self.dim_v.unwrap_or(3),
                    self.depth.unwrap_or(2),
                    self.trees.unwrap_or(20),
                    seed,
                )?,
                Some(other) => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown builtin spec '{other}'"
                    )))
                }
            }
        };
        match self.eta {
            Some(eta) => base.calibrate_imbalance(eta),
            None => Ok(base),
        }
    }

    /// The fully resolved copy stored in provenance.
    pub fn resolved(&self) -> Result<ScmSource> {
        Ok(ScmSource {
            builtin: None,
            dim_z: None,
            dim_w: None,
            dim_v: None,
            depth: None,
            trees: None,
            spec_seed: None,
            spec: Some(self.resolve_spec()?),
            eta: None,
            n: Some(self.n.unwrap_or(10_000)),
            sample_seed: Some(self.sample_seed.unwrap_or(0)),
        })
    }
}

/// CSV data source with its role schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: String,
    pub schema: RoleSchema,
}

/// Oracle query block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OracleBlock {
    pub query: Option<EffectKind>,
    pub x0: Option<u8>,
    pub x1: Option<u8>,
    pub mediators: Option<MediatorSet>,
    pub n_mc: Option<usize>,
    pub mc_seed: Option<u64>,
    /// Exact enumeration instead of Monte Carlo (discrete specs only).
    pub exact: Option<bool>,
}

/// Conditional-effect block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionalBlock {
    pub axis1: String,
    pub axis2: String,
    pub axis1_edges: Vec<f64>,
    pub axis2_edges: Vec<f64>,
    #[serde(default = "default_min_count")]
    pub min_count: usize,
}

fn default_min_count() -> usize {
    20
}

/// Study block (convergence over sizes, or imbalance over etas).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct StudyBlock {
    /// "convergence" | "imbalance"
    pub kind: Option<String>,
    pub sizes: Option<Vec<usize>>,
    pub etas: Option<Vec<f64>>,
    pub n: Option<usize>,
    pub replications: Option<usize>,
    pub modes: Option<Vec<ModeKind>>,
    pub oracle_n_mc: Option<usize>,
    pub study_seed: Option<u64>,
}

/// Ingest block: optional long-format event aggregation plus row filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct IngestBlock {
    pub events_path: Option<String>,
    pub events: Option<EventIngestConfig>,
    pub filters: Vec<FilterRule>,
}

/// The complete run configuration. Exactly one data source per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scm: Option<ScmSource>,
    pub csv: Option<CsvSource>,

    /// Effects to estimate (estimate / bootstrap commands).
    pub effects: Option<Vec<EffectKind>>,
    pub x0: Option<u8>,
    pub x1: Option<u8>,
    pub mediators: Option<MediatorSet>,

    pub mode: Option<ModeKind>,
    pub misspec: Option<Misspecification>,
    pub folds: Option<usize>,
    pub clip: Option<f64>,
    pub learner: Option<LearnerConfig>,
    pub seed: Option<u64>,

    pub bootstrap: Option<usize>,
    pub level: Option<f64>,

    pub oracle: Option<OracleBlock>,
    pub conditional: Option<ConditionalBlock>,
    pub study: Option<StudyBlock>,
    pub ingest: Option<IngestBlock>,

    /// Side-artifact CSV path (cohorts, study tables, grid cells).
    pub csv_out: Option<String>,
}

impl RunConfig {
    /// Exactly one data source per run; a missing source defaults to the
    /// fixed binary model so the synthetic commands work out of the box.
    pub fn normalize_data_source(&mut self) -> Result<()> {
        match (&self.scm, &self.csv) {
            (Some(_), Some(_)) => Err(Error::InvalidArgument(
                "config must name exactly one data source, found both scm and csv".into(),
            )),
            (None, None) => {
                self.scm = Some(ScmSource {
                    builtin: Some("binary".into()),
                    ..ScmSource::default()
                });
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn settings(&self) -> EstimatorSettings {
        let mut s = EstimatorSettings::default();
        s.folds = self.folds.unwrap_or(s.folds);
        s.clip = self.clip.unwrap_or(s.clip);
        s.mode.kind = self.mode.unwrap_or(s.mode.kind);
        s.mode.misspec = self.misspec.unwrap_or(s.mode.misspec);
        s.learner = self.learner.unwrap_or(s.learner);
        s.seed = self.seed.unwrap_or(s.seed);
        s
    }

    pub fn queries(&self) -> Vec<EffectQuery> {
        let x0 = self.x0.unwrap_or(0);
        let x1 = self.x1.unwrap_or(1);
        let mediators = self.mediators.unwrap_or_default();
        self.effects
            .clone()
            .unwrap_or_else(|| vec![EffectKind::Vde])
            .into_iter()
            .map(|kind| EffectQuery::new(kind, x0, x1).with_mediators(mediators))
            .collect()
    }

    /// A copy with every default made explicit, suitable for provenance.
    pub fn resolved(&self) -> Result<RunConfig> {
        let settings = self.settings();
        let mut out = self.clone();
        if let Some(scm) = &self.scm {
            out.scm = Some(scm.resolved()?);
        }
        out.effects = Some(
            self.effects
                .clone()
                .unwrap_or_else(|| vec![EffectKind::Vde]),
        );
        out.x0 = Some(self.x0.unwrap_or(0));
        out.x1 = Some(self.x1.unwrap_or(1));
        out.mediators = Some(self.mediators.unwrap_or_default());
        out.mode = Some(settings.mode.kind);
        out.misspec = Some(settings.mode.misspec);
        out.folds = Some(settings.folds);
        out.clip = Some(settings.clip);
        out.learner = Some(settings.learner);
        out.seed = Some(settings.seed);
        out.bootstrap = Some(self.bootstrap.unwrap_or(DEFAULT_BOOTSTRAP));
        out.level = Some(self.level.unwrap_or(DEFAULT_LEVEL));
        if let Some(oracle) = &self.oracle {
            out.oracle = Some(OracleBlock {
                query: Some(oracle.query.unwrap_or(EffectKind::Vde)),
                x0: Some(oracle.x0.unwrap_or(0)),
                x1: Some(oracle.x1.unwrap_or(1)),
                mediators: Some(oracle.mediators.unwrap_or_default()),
                n_mc: Some(oracle.n_mc.unwrap_or(1_000_000)),
                mc_seed: Some(oracle.mc_seed.unwrap_or(0)),
                exact: Some(oracle.exact.unwrap_or(false)),
            });
        }
        Ok(out)
    }
}
