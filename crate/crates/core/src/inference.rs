//! Uncertainty quantification and study drivers.
//!
//! * [`bootstrap_ci`]: nonparametric row resampling with full-pipeline
//!   refits per replicate, percentile intervals, point estimate = bootstrap
//!   mean.
//! * [`analytic_ci`]: influence-function interval `psi_hat +/- z rho / sqrt(n)`
//!   where `rho^2` is the sample variance of the per-row contributions.
//! * [`conditional_vde`]: per-row effect contributions from one cross-fitted
//!   run averaged over a 2-D grid of V-column bins, with sparse cells
//!   flagged instead of extrapolated.
//! * [`nuisance_mean_diagnostics`]: per-fold empirical means of each weight
//!   family (theoretical mean 1), pre and post normalization.
//! * [`convergence_study`] / [`imbalance_study`]: replicated estimation
//!   against fresh cohorts, reporting error, variance and coverage against
//!   Monte-Carlo oracle constants.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_effect_run, CiInterval, CiMethod, EffectEstimate, EstimatorSettings, ModeKind,
    TermRequest,
};
use crate::oracle::{mc_reference_set, EffectKind, EffectQuery, McReferenceSet};
use crate::scm::ScmSpec;
use crate::util::{derive_seed, kahan_sum, mean, quantile_sorted, sample_variance};

const BOOT_STREAM: u64 = 0xB005;
const STUDY_STREAM: u64 = 0x57DD;

/// Default bootstrap replicate count for reported intervals.
pub const DEFAULT_BOOTSTRAP: usize = 500;
/// Default interval level.
pub const DEFAULT_LEVEL: f64 = 0.95;

/// Percentile-bootstrap estimate: `B` full-pipeline refits on row resamples.
/// Replicates whose resample lacks an exposure class are redrawn with a
/// shifted seed and counted in the diagnostics.
pub fn bootstrap_ci(
    cohort: &Cohort,
    query: &EffectQuery,
    b: usize,
    level: f64,
    settings: &EstimatorSettings,
) -> Result<EffectEstimate> {
    if b < 2 {
        return Err(Error::invalid("bootstrap needs at least 2 replicates"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("level must lie strictly between 0 and 1"));
    }
    let n = cohort.n();
    let results: Vec<Result<(f64, u32)>> = (0..b)
        .into_par_iter()
        .map(|rep| -> Result<(f64, u32)> {
            let mut redraws = 0u32;
            loop {
                let draw_seed = derive_seed(
                    derive_seed(settings.seed, BOOT_STREAM),
                    (rep as u64) + u64::from(redraws) * 0x1_0000_0000,
                );
                let mut rng = ChaCha8Rng::seed_from_u64(draw_seed);
                let indices: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                let has0 = indices.iter().any(|&i| cohort.x()[i] == 0);
                let has1 = indices.iter().any(|&i| cohort.x()[i] == 1);
                if !(has0 && has1) {
                    redraws += 1;
                    if redraws > 10 {
                        return Err(Error::DegenerateGroup(
                            "bootstrap resamples keep collapsing to one exposure class".into(),
                        ));
                    }
                    continue;
                }
                let resample = cohort.select(&indices)?;
                let rep_settings = EstimatorSettings {
                    seed: derive_seed(settings.seed, 0xB11D + rep as u64),
                    ..*settings
                };
                let (estimate, _) = estimate_effect_run(&resample, query, &rep_settings)?;
                return Ok((estimate.value, redraws));
            }
        })
        .collect();

    let mut values = Vec::with_capacity(b);
    let mut total_redraws = 0u32;
    for r in results {
        let (v, redraws) = r?;
        values.push(v);
        total_redraws += redraws;
    }
    let point = mean(&values);
    let mut sorted = values;
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let alpha = (1.0 - level) / 2.0;
    let ci = CiInterval {
        lower: quantile_sorted(&sorted, alpha),
        upper: quantile_sorted(&sorted, 1.0 - alpha),
        level,
        method: CiMethod::PercentileBootstrap,
    };

    // diagnostics come from a fit on the original rows
    let (mut estimate, _) = estimate_effect_run(cohort, query, settings)?;
    estimate.value = point;
    estimate.ci = Some(ci);
    estimate.diagnostics.bootstrap_redraws = total_redraws;
    Ok(estimate)
}

/// Influence-function interval from one cross-fitted run. Only meaningful
/// for the dr / sn-dr modes, whose contributions are the estimating
/// functional.
pub fn analytic_ci(
    cohort: &Cohort,
    query: &EffectQuery,
    level: f64,
    settings: &EstimatorSettings,
) -> Result<(EffectEstimate, f64)> {
    if !matches!(settings.mode.kind, ModeKind::Dr | ModeKind::SnDr) {
        return Err(Error::invalid(
            "analytic intervals require the dr or sn-dr mode",
        ));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("level must lie strictly between 0 and 1"));
    }
    let (mut estimate, suite) = estimate_effect_run(cohort, query, settings)?;
    let contributions = suite.effect_contributions(query.kind);
    let rho = sample_variance(&contributions).sqrt();
    let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.5 * (1.0 + level));
    let half = z * rho / (cohort.n() as f64).sqrt();
    estimate.ci = Some(CiInterval {
        lower: estimate.value - half,
        upper: estimate.value + half,
        level,
        method: CiMethod::InfluenceFunction,
    });
    Ok((estimate, rho))
}

/// One cell of a binned conditional effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinnedCell {
    pub bin1: usize,
    pub bin2: usize,
    pub mean: f64,
    pub count: usize,
    pub missing: bool,
}

/// Conditional effect averaged over a 2-D grid of V-column bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedEffect {
    pub axis1: String,
    pub axis2: String,
    pub axis1_edges: Vec<f64>,
    pub axis2_edges: Vec<f64>,
    pub min_count: usize,
    /// Row-major cells: bin1 * (axis2 bins) + bin2.
    pub cells: Vec<BinnedCell>,
    /// Rows that fell inside the grid.
    pub covered_rows: usize,
    pub total_rows: usize,
    /// Grand mean of the per-row contributions over covered rows.
    pub pooled_value: f64,
    /// The global cross-fitted estimate this grid decomposes.
    pub estimate: EffectEstimate,
}

fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 {
        return Err(Error::invalid("bin edges need at least two entries"));
    }
    if edges.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::invalid("bin edges must be strictly increasing"));
    }
    Ok(())
}

fn bin_of(edges: &[f64], value: f64) -> Option<usize> {
    if value < edges[0] || value > edges[edges.len() - 1] {
        return None;
    }
    if value == edges[edges.len() - 1] {
        return Some(edges.len() - 2);
    }
    Some(edges.partition_point(|&e| e <= value) - 1)
}

/// Computes per-row VDE contributions from a single cross-fitted run and
/// averages them within each (axis1, axis2) cell. Cells with fewer than
/// `min_count` rows are flagged missing. Axis columns are V-block columns
/// by name (for example a derived oximetry discrepancy).
#[allow(clippy::too_many_arguments)]
pub fn conditional_vde(
    cohort: &Cohort,
    x0: u8,
    x1: u8,
    axis1: &str,
    axis2: &str,
    axis1_edges: &[f64],
    axis2_edges: &[f64],
    min_count: usize,
    settings: &EstimatorSettings,
) -> Result<BinnedEffect> {
    check_edges(axis1_edges)?;
    check_edges(axis2_edges)?;
    if min_count == 0 {
        return Err(Error::invalid("min_count must be at least 1"));
    }
    let col1 = cohort.v_column(axis1)?;
    let col2 = cohort.v_column(axis2)?;
    let query = EffectQuery::new(EffectKind::Vde, x0, x1);
    let (estimate, suite) = estimate_effect_run(cohort, &query, settings)?;
    let contributions = suite.effect_contributions(EffectKind::Vde);

    let k1 = axis1_edges.len() - 1;
    let k2 = axis2_edges.len() - 1;
    let mut sums = vec![0.0f64; k1 * k2];
    let mut comps = vec![0.0f64; k1 * k2];
    let mut counts = vec![0usize; k1 * k2];
    let mut covered = 0usize;
    let mut covered_contributions = Vec::with_capacity(cohort.n());
    for i in 0..cohort.n() {
        let (Some(b1), Some(b2)) = (bin_of(axis1_edges, col1[i]), bin_of(axis2_edges, col2[i]))
        else {
            continue;
        };
        let cell = b1 * k2 + b2;
        // compensated accumulation so the partition identity holds tightly
        let y = contributions[i] - comps[cell];
        let t = sums[cell] + y;
        comps[cell] = (t - sums[cell]) - y;
        sums[cell] = t;
        counts[cell] += 1;
        covered += 1;
        covered_contributions.push(contributions[i]);
    }
    if covered == 0 {
        return Err(Error::invalid("no rows fall inside the bin grid"));
    }
    let mut cells = Vec::with_capacity(k1 * k2);
    for b1 in 0..k1 {
        for b2 in 0..k2 {
            let cell = b1 * k2 + b2;
            let count = counts[cell];
            cells.push(BinnedCell {
                bin1: b1,
                bin2: b2,
                mean: if count > 0 { sums[cell] / count as f64 } else { f64::NAN },
                count,
                missing: count < min_count,
            });
        }
    }
    let pooled_value = kahan_sum(covered_contributions.iter().copied()) / covered as f64;
    Ok(BinnedEffect {
        axis1: axis1.to_string(),
        axis2: axis2.to_string(),
        axis1_edges: axis1_edges.to_vec(),
        axis2_edges: axis2_edges.to_vec(),
        min_count,
        cells,
        covered_rows: covered,
        total_rows: cohort.n(),
        pooled_value,
        estimate,
    })
}

/// One row of the nuisance-mean diagnostic table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceMeanRow {
    pub term: String,
    pub fold: usize,
    pub family: String,
    pub pre_mean: f64,
    pub post_mean: f64,
    /// Large deviation from the theoretical mean 1 in a small sample, the
    /// regime where the canonical estimator's variance inflates.
    pub small_sample_flag: bool,
}

/// Tabulates the per-fold empirical means of every weight family recorded in
/// an estimate's diagnostics. Flags |mean - 1| > 0.25 at n < 4000.
pub fn nuisance_mean_diagnostics(estimate: &EffectEstimate) -> Vec<NuisanceMeanRow> {
    let mut rows = Vec::new();
    for term in &estimate.diagnostics.terms {
        for fold in &term.diagnostics.weight_means {
            for (f, family) in term.diagnostics.families.iter().enumerate() {
                let pre = fold.pre[f];
                let post = fold.post[f];
                rows.push(NuisanceMeanRow {
                    term: term.term.clone(),
                    fold: fold.fold,
                    family: family.clone(),
                    pre_mean: pre,
                    post_mean: post,
                    small_sample_flag: (pre - 1.0).abs() > 0.25 && estimate.n < 4000,
                });
            }
        }
    }
    rows
}

/// One grid point of a study: a (size | eta | mode | query) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyPoint {
    pub n: usize,
    pub eta: Option<f64>,
    pub mode: ModeKind,
    pub query: String,
    pub oracle_value: f64,
    pub mean_estimate: f64,
    pub mean_rel_error: f64,
    pub mean_abs_rel_error: f64,
    pub variance: f64,
    pub rmse: f64,
    /// Fraction of replications whose analytic 95% interval covered the
    /// oracle value.
    pub coverage: f64,
    pub replications: usize,
}

/// Study output: one point per grid cell plus the seeds that generated it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub points: Vec<StudyPoint>,
    pub seed: u64,
    pub oracle_n_mc: usize,
}

impl StudyResult {
    /// Flat CSV, one record per grid point.
    pub fn to_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "n",
            "eta",
            "mode",
            "query",
            "oracle_value",
            "mean_estimate",
            "mean_rel_error",
            "mean_abs_rel_error",
            "variance",
            "rmse",
            "coverage",
            "replications",
        ])?;
        for p in &self.points {
            w.write_record([
                p.n.to_string(),
                p.eta.map_or(String::new(), |e| e.to_string()),
                format!("{:?}", p.mode).to_lowercase(),
                p.query.clone(),
                p.oracle_value.to_string(),
                p.mean_estimate.to_string(),
                p.mean_rel_error.to_string(),
                p.mean_abs_rel_error.to_string(),
                p.variance.to_string(),
                p.rmse.to_string(),
                p.coverage.to_string(),
                p.replications.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The four causal queries a study tracks, with their oracle references.
const STUDY_QUERIES: [(&str, EffectKind); 4] = [
    ("mean_y_x0", EffectKind::MeanY),
    ("mean_y_x1", EffectKind::MeanY),
    ("nested_nde", EffectKind::NestedNde),
    ("nested_vde", EffectKind::NestedVde),
];

fn study_cell(
    spec: &ScmSpec,
    refs: &McReferenceSet,
    n: usize,
    eta: Option<f64>,
    mode: ModeKind,
    replications: usize,
    settings: &EstimatorSettings,
    seed: u64,
) -> Result<Vec<StudyPoint>> {
    let z95 = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.975);
    let per_rep: Vec<Result<[(f64, bool); 4]>> = (0..replications)
        .into_par_iter()
        .map(|rep| -> Result<[(f64, bool); 4]> {
            let cohort_seed = derive_seed(seed, rep as u64);
            let cohort = spec.sample(n, cohort_seed)?;
            let rep_settings = EstimatorSettings {
                mode: crate::estimators::EstimatorMode::new(mode),
                seed: derive_seed(seed, 0xC0DE + rep as u64),
                ..*settings
            };
            let request = TermRequest {
                backdoor_x0: true,
                backdoor_x1: true,
                nested_merged: true,
                nested_vde: true,
                ..Default::default()
            };
            let suite = crate::estimators::run_suite(&cohort, 0, 1, request, &rep_settings)?;
            let mut out = [(0.0, false); 4];
            let terms = [
                suite.backdoor_x0.as_ref().unwrap(),
                suite.backdoor_x1.as_ref().unwrap(),
                suite.nested_merged.as_ref().unwrap(),
                suite.nested_vde.as_ref().unwrap(),
            ];
            let oracle_values = [
                refs.mean_y_x0.value,
                refs.mean_y_x1.value,
                refs.nested_nde.value,
                refs.nested_vde.value,
            ];
            for (slot, term) in terms.iter().enumerate() {
                let rho = sample_variance(&term.contributions).sqrt();
                let half = z95 * rho / (n as f64).sqrt();
                let covered = (term.value - oracle_values[slot]).abs() <= half;
                out[slot] = (term.value, covered);
            }
            Ok(out)
        })
        .collect();

    let mut values: [Vec<f64>; 4] = Default::default();
    let mut covered: [usize; 4] = [0; 4];
    for r in per_rep {
        let row = r?;
        for (slot, (v, c)) in row.into_iter().enumerate() {
            values[slot].push(v);
            if c {
                covered[slot] += 1;
            }
        }
    }
    let oracle_values = [
        refs.mean_y_x0.value,
        refs.mean_y_x1.value,
        refs.nested_nde.value,
        refs.nested_vde.value,
    ];
    let mut points = Vec::with_capacity(4);
    for slot in 0..4 {
        let oracle = oracle_values[slot];
        let vals = &values[slot];
        let rel: Vec<f64> = vals.iter().map(|v| (v - oracle) / oracle.abs()).collect();
        let mse = vals
            .iter()
            .map(|v| (v - oracle) * (v - oracle))
            .sum::<f64>()
            / vals.len() as f64;
        points.push(StudyPoint {
            n,
            eta,
            mode,
            query: STUDY_QUERIES[slot].0.to_string(),
            oracle_value: oracle,
            mean_estimate: mean(vals),
            mean_rel_error: mean(&rel),
            mean_abs_rel_error: mean(&rel.iter().map(|r| r.abs()).collect::<Vec<_>>()),
            variance: sample_variance(vals),
            rmse: mse.sqrt(),
            coverage: covered[slot] as f64 / vals.len() as f64,
            replications: vals.len(),
        });
    }
    Ok(points)
}

/// Estimation error versus sample size: fresh cohorts per replication, all
/// four causal queries, relative errors against the spec's Monte-Carlo
/// oracle constants.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study(
    spec: &ScmSpec,
    sizes: &[usize],
    replications: usize,
    modes: &[ModeKind],
    settings: &EstimatorSettings,
    oracle_n_mc: usize,
    seed: u64,
) -> Result<StudyResult> {
    if sizes.is_empty() {
        return Err(Error::invalid("sizes must be nonempty"));
    }
    if replications == 0 {
        return Err(Error::invalid("replications must be positive"));
    }
    let refs = mc_reference_set(spec, 0, 1, oracle_n_mc, derive_seed(seed, STUDY_STREAM))?;
    let mut points = Vec::new();
    for &n in sizes {
        for &mode in modes {
            let cell_seed = derive_seed(seed, (n as u64) ^ (mode as u64) << 32);
            points.extend(study_cell(
                spec,
                &refs,
                n,
                None,
                mode,
                replications,
                settings,
                cell_seed,
            )?);
        }
    }
    Ok(StudyResult {
        points,
        seed,
        oracle_n_mc,
    })
}

/// Estimation error versus exposure imbalance: for each eta the spec's X
/// threshold is recalibrated, oracle constants are recomputed, and fresh
/// cohorts are estimated.
#[allow(clippy::too_many_arguments)]
pub fn imbalance_study(
    spec: &ScmSpec,
    etas: &[f64],
    n: usize,
    replications: usize,
    modes: &[ModeKind],
    settings: &EstimatorSettings,
    oracle_n_mc: usize,
    seed: u64,
) -> Result<StudyResult> {
    if etas.is_empty() {
        return Err(Error::invalid("etas must be nonempty"));
    }
    let mut points = Vec::new();
    for (k, &eta) in etas.iter().enumerate() {
        let calibrated = spec.calibrate_imbalance(eta)?;
        let refs = mc_reference_set(
            &calibrated,
            0,
            1,
            oracle_n_mc,
            derive_seed(seed, STUDY_STREAM + k as u64),
        )?;
        for &mode in modes {
            let cell_seed = derive_seed(seed, 0xE7A + ((k as u64) << 8) ^ (mode as u64));
            points.extend(study_cell(
                &calibrated,
                &refs,
                n,
                Some(eta),
                mode,
                replications,
                settings,
                cell_seed,
            )?);
        }
    }
    Ok(StudyResult {
        points,
        seed,
        oracle_n_mc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::LearnerConfig;
    use crate::scm::binary_scm;
    use ndarray::Array1;

    fn fast_settings() -> EstimatorSettings {
        EstimatorSettings {
            learner: LearnerConfig::exact_frequency(),
            ..EstimatorSettings::default()
        }
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let cohort = binary_scm().sample(800, 3).unwrap();
        let q = EffectQuery::vde(1, 0);
        let a = bootstrap_ci(&cohort, &q, 20, 0.9, &fast_settings()).unwrap();
        let b = bootstrap_ci(&cohort, &q, 20, 0.9, &fast_settings()).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.ci, b.ci);
    }

    #[test]
    fn constant_outcome_collapses_interval() {
        let base = binary_scm().sample(600, 5).unwrap();
        let cohort = Cohort::new(
            base.z().clone(),
            base.x().to_vec(),
            base.w().clone(),
            base.v().clone(),
            Array1::from_elem(base.n(), 2.5),
        )
        .unwrap();
        let q = EffectQuery::vde(1, 0);
        let est = bootstrap_ci(&cohort, &q, 30, 0.95, &fast_settings()).unwrap();
        let ci = est.ci.unwrap();
        assert!(ci.lower.abs() < 1e-12 && ci.upper.abs() < 1e-12, "{ci:?}");
    }

    #[test]
    fn analytic_interval_shrinks_with_root_n() {
        // smooth propensities keep rho stable across n, unlike the binary
        // model whose (w=1, z=1) stratum is nearly pure in X
        let spec = crate::scm::linear_scm(2, 3, 2, 40).unwrap();
        let q = EffectQuery::vde(1, 0);
        let small = spec.sample(2_000, 7).unwrap();
        let large = spec.sample(8_000, 7).unwrap();
        let settings = EstimatorSettings::default();
        let (est_s, _) = analytic_ci(&small, &q, 0.95, &settings).unwrap();
        let (est_l, _) = analytic_ci(&large, &q, 0.95, &settings).unwrap();
        let width = |e: &EffectEstimate| {
            let ci = e.ci.unwrap();
            ci.upper - ci.lower
        };
        let ratio = width(&est_s) / width(&est_l);
        assert!((ratio - 2.0).abs() < 0.35, "width ratio {ratio}");
    }

    #[test]
    fn analytic_requires_dr_mode() {
        let cohort = binary_scm().sample(500, 2).unwrap();
        let settings = EstimatorSettings {
            mode: crate::estimators::EstimatorMode::new(ModeKind::Plugin),
            ..fast_settings()
        };
        assert!(analytic_ci(&cohort, &EffectQuery::vde(1, 0), 0.95, &settings).is_err());
    }

    #[test]
    fn conditional_grid_partitions_the_sample() {
        let cohort = binary_scm().sample(4_000, 9).unwrap();
        let binned = conditional_vde(
            &cohort,
            0,
            1,
            "v0",
            "v0",
            &[-0.5, 0.5, 1.5],
            &[-0.5, 0.5, 1.5],
            20,
            &fast_settings(),
        )
        .unwrap();
        assert_eq!(binned.covered_rows, cohort.n());
        let total: usize = binned.cells.iter().map(|c| c.count).sum();
        assert_eq!(total, cohort.n());
        let weighted: f64 = binned
            .cells
            .iter()
            .filter(|c| c.count > 0)
            .map(|c| c.mean * c.count as f64)
            .sum::<f64>()
            / cohort.n() as f64;
        assert!(
            (weighted - binned.pooled_value).abs() < 1e-12,
            "weighted {weighted} vs pooled {}",
            binned.pooled_value
        );
        // equal fold sizes: pooled matches the fold-mean aggregation
        assert!((binned.pooled_value - binned.estimate.value).abs() < 1e-12);
    }

    #[test]
    fn sparse_cells_are_flagged_missing() {
        let cohort = binary_scm().sample(500, 11).unwrap();
        // v is binary; edges isolate an empty band between the two values
        let binned = conditional_vde(
            &cohort,
            0,
            1,
            "v0",
            "v0",
            &[-0.5, 0.4, 0.6, 1.5],
            &[-0.5, 1.5],
            20,
            &fast_settings(),
        )
        .unwrap();
        let empty = binned.cells.iter().find(|c| c.bin1 == 1).unwrap();
        assert_eq!(empty.count, 0);
        assert!(empty.missing);
        let full = binned.cells.iter().find(|c| c.bin1 == 0).unwrap();
        assert!(!full.missing);
    }

    #[test]
    fn diagnostics_table_has_exact_sn_means() {
        let cohort = binary_scm().sample(1_000, 13).unwrap();
        let settings = EstimatorSettings {
            mode: crate::estimators::EstimatorMode::sn_dr(),
            ..fast_settings()
        };
        let (est, _) =
            estimate_effect_run(&cohort, &EffectQuery::vde(1, 0), &settings).unwrap();
        let rows = nuisance_mean_diagnostics(&est);
        assert!(!rows.is_empty());
        for row in rows {
            assert!((row.post_mean - 1.0).abs() < 1e-12, "{row:?}");
        }
    }
}
