//! Batch command-line entry point for path-specific effect estimation.
//!
//! Every subcommand reads a JSON [`config::RunConfig`] (with flag
//! overrides), runs the requested computation, and emits a JSON document
//! `{command, config, result}` where `config` is fully resolved: feeding
//! that block back through `--config` reproduces the result bit for bit.
//! Study and grid outputs additionally flatten to CSV via `--csv-out`.

mod config;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use config::RunConfig;
use pathfx_core::data::Cohort;
use pathfx_core::error::{Error, Result};
use pathfx_core::estimators::{estimate_effect, ModeKind};
use pathfx_core::inference::{
    analytic_ci, bootstrap_ci, conditional_vde, convergence_study, imbalance_study,
    nuisance_mean_diagnostics, StudyResult,
};
use pathfx_core::ingest::{
    aggregate_events, filter_cohort, load_csv, simulated_schema, write_csv, LoadReport,
};
use pathfx_core::learners::LearnerKind;
use pathfx_core::oracle::{enumerate_exact, mc_counterfactual, EffectKind, EffectQuery};

#[derive(Parser)]
#[command(
    name = "pathfx",
    about = "Path-specific causal effect estimation (TE, NDE, NIE, NIE*, VDE)",
    version
)]
struct Cli {
    /// JSON run configuration (or a previous output document).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cross-fitting fold count override (default 5).
    #[arg(long, global = true)]
    folds: Option<usize>,
    /// Propensity clip epsilon override (default 1e-4).
    #[arg(long, global = true)]
    clip: Option<f64>,
    /// Bootstrap replicate count override (default 500).
    #[arg(long, global = true)]
    bootstrap: Option<usize>,
    /// Interval level override (default 0.95).
    #[arg(long, global = true)]
    level: Option<f64>,
    /// Estimator mode: plugin | ipw | dr | sndr.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Effect to estimate: te | nde | nie | nie-star | vde.
    #[arg(long, global = true)]
    effect: Option<String>,
    /// Learner kind: ridge | logistic | stumps.
    #[arg(long, global = true)]
    learner: Option<String>,
    /// Exposure label mapped to 0 (CSV sources).
    #[arg(long, global = true)]
    x0_label: Option<String>,
    /// Exposure label mapped to 1 (CSV sources).
    #[arg(long, global = true)]
    x1_label: Option<String>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Write the JSON output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Write the side CSV artifact here (cohort, study table, grid cells).
    #[arg(long, global = true)]
    csv_out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone)]
enum Command {
    /// Sample a cohort from a synthetic model and write it as CSV.
    Simulate,
    /// Ground-truth effect values by counterfactual simulation/enumeration.
    Oracle {
        /// Oracle query: te | nde | nie | nie-star | vde | mean-y |
        /// nested-vde | nested-nde.
        #[arg(long)]
        query: Option<String>,
        /// Monte-Carlo draw count.
        #[arg(long)]
        n_mc: Option<usize>,
        /// Exact enumeration instead of Monte Carlo (discrete specs).
        #[arg(long)]
        exact: bool,
    },
    /// Cross-fitted point estimates of the requested effects.
    Estimate,
    /// Effect estimates with percentile-bootstrap confidence intervals.
    Bootstrap,
    /// Conditional effect averaged over a 2-D grid of V-column bins.
    Conditional,
    /// Nuisance-weight diagnostics of a dr / sn-dr run.
    Diagnose,
    /// Convergence or imbalance study over replicated cohorts.
    Study,
    /// Load, filter, and re-emit a CSV cohort (with optional long-format
    /// event aggregation report).
    Ingest,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Oracle { .. } => "oracle",
            Command::Estimate => "estimate",
            Command::Bootstrap => "bootstrap",
            Command::Conditional => "conditional",
            Command::Diagnose => "diagnose",
            Command::Study => "study",
            Command::Ingest => "ingest",
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // keep clap's help/version on stdout; real usage errors become
            // machine-readable JSON on stderr
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            let doc = json!({
                "error": {"kind": "usage", "message": e.to_string().trim()}
            });
            eprintln!("{}", serde_json::to_string_pretty(&doc).unwrap());
            std::process::exit(2);
        }
    };
    if let Some(jobs) = cli.jobs {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global();
    }
    match run(&cli) {
        Ok(doc) => {
            let text = serde_json::to_string_pretty(&doc).unwrap();
            match &cli.out {
                Some(path) => {
                    if let Err(e) = std::fs::write(path, text + "\n") {
                        emit_error(&Error::Io(e));
                        std::process::exit(1);
                    }
                }
                None => println!("{text}"),
            }
        }
        Err(e) => {
            emit_error(&e);
            std::process::exit(1);
        }
    }
}

fn emit_error(e: &Error) {
    let kind = match e {
        Error::InvalidArgument(_) => "invalid-argument",
        Error::NotEnumerable(_) => "not-enumerable",
        Error::Positivity(_) => "positivity",
        Error::RankDeficient(_) => "rank-deficient",
        Error::DegenerateGroup(_) => "degenerate-group",
        Error::Calibration(_) => "calibration",
        Error::Data(_) => "data",
        Error::Io(_) => "io",
        Error::Csv(_) => "csv",
        Error::Json(_) => "json",
    };
    let doc = json!({"error": {"kind": kind, "message": e.to_string()}});
    eprintln!("{}", serde_json::to_string_pretty(&doc).unwrap());
}

fn output<T: Serialize>(command: &str, config: &RunConfig, result: T) -> Result<serde_json::Value> {
    Ok(json!({
        "command": command,
        "config": config.resolved()?,
        "result": result,
    }))
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config: RunConfig = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let value: serde_json::Value = serde_json::from_str(&text)?;
            // accept a previous output document by unwrapping its config
            let config_value = value.get("config").cloned().unwrap_or(value);
            serde_json::from_value(config_value)?
        }
        None => RunConfig::default(),
    };
    // flag overrides
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    if let Some(folds) = cli.folds {
        config.folds = Some(folds);
    }
    if let Some(clip) = cli.clip {
        config.clip = Some(clip);
    }
    if let Some(b) = cli.bootstrap {
        config.bootstrap = Some(b);
    }
    if let Some(level) = cli.level {
        config.level = Some(level);
    }
    if let Some(mode) = &cli.mode {
        config.mode = Some(parse_mode(mode)?);
    }
    if let Some(effect) = &cli.effect {
        config.effects = Some(vec![parse_effect(effect)?]);
    }
    if let Some(learner) = &cli.learner {
        let mut cfg = config.learner.unwrap_or_default();
        cfg.kind = parse_learner(learner)?;
        config.learner = Some(cfg);
    }
    if let Some(csv) = &mut config.csv {
        if let Some(label) = &cli.x0_label {
            csv.schema.x.x0_label = label.clone();
        }
        if let Some(label) = &cli.x1_label {
            csv.schema.x.x1_label = label.clone();
        }
    }
    if let Some(path) = &cli.csv_out {
        config.csv_out = Some(path.display().to_string());
    }
    Ok(config)
}

fn parse_mode(s: &str) -> Result<ModeKind> {
    match s {
        "plugin" => Ok(ModeKind::Plugin),
        "ipw" => Ok(ModeKind::Ipw),
        "dr" => Ok(ModeKind::Dr),
        "sndr" | "sn-dr" => Ok(ModeKind::SnDr),
        other => Err(Error::InvalidArgument(format!(
            "unknown mode '{other}' (expected plugin | ipw | dr | sndr)"
        ))),
    }
}

fn parse_effect(s: &str) -> Result<EffectKind> {
    match s {
        "te" => Ok(EffectKind::Te),
        "nde" => Ok(EffectKind::Nde),
        "nie" => Ok(EffectKind::Nie),
        "nie-star" | "nie*" => Ok(EffectKind::NieStar),
        "vde" => Ok(EffectKind::Vde),
        "mean-y" => Ok(EffectKind::MeanY),
        "nested-vde" => Ok(EffectKind::NestedVde),
        "nested-nde" => Ok(EffectKind::NestedNde),
        other => Err(Error::InvalidArgument(format!(
            "unknown effect '{other}' (expected te | nde | nie | nie-star | vde)"
        ))),
    }
}

fn parse_learner(s: &str) -> Result<LearnerKind> {
    match s {
        "ridge" => Ok(LearnerKind::Ridge),
        "logistic" => Ok(LearnerKind::Logistic),
        "stumps" => Ok(LearnerKind::Stumps),
        "exact-frequency" => Ok(LearnerKind::ExactFrequency),
        other => Err(Error::InvalidArgument(format!(
            "unknown learner '{other}' (expected ridge | logistic | stumps)"
        ))),
    }
}

/// Loads the cohort named by the config's data source.
fn load_cohort(config: &RunConfig) -> Result<(Cohort, Option<LoadReport>)> {
    if let Some(scm) = &config.scm {
        let spec = scm.resolve_spec()?;
        let n = scm.n.unwrap_or(10_000);
        let cohort = spec.sample(n, scm.sample_seed.unwrap_or(0))?;
        return Ok((cohort, None));
    }
    let csv = config.csv.as_ref().unwrap();
    let (cohort, report) = load_csv(&csv.path, &csv.schema)?;
    Ok((cohort, Some(report)))
}

fn run(cli: &Cli) -> Result<serde_json::Value> {
    let mut config = load_config(cli)?;
    config.normalize_data_source()?;
    let config = config;
    match &cli.command {
        Command::Simulate => cmd_simulate(&config),
        Command::Oracle { query, n_mc, exact } => {
            let (n_mc, exact) = (*n_mc, *exact);
            cmd_oracle(&config, query.as_deref(), n_mc, exact)
        }
        Command::Estimate => cmd_estimate(&config),
        Command::Bootstrap => cmd_bootstrap(&config),
        Command::Conditional => cmd_conditional(&config),
        Command::Diagnose => cmd_diagnose(&config),
        Command::Study => cmd_study(&config),
        Command::Ingest => cmd_ingest(&config),
    }
}

fn cmd_simulate(config: &RunConfig) -> Result<serde_json::Value> {
    let scm = config
        .scm
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("simulate requires an scm source".into()))?;
    let spec = scm.resolve_spec()?;
    let n = scm.n.unwrap_or(10_000);
    let cohort = spec.sample(n, scm.sample_seed.unwrap_or(0))?;
    if let Some(path) = &config.csv_out {
        let schema = simulated_schema(cohort.dim_z(), cohort.dim_w(), cohort.dim_v());
        let file = std::fs::File::create(path)?;
        write_csv(&cohort, &schema, file)?;
    }
    let x1_fraction = cohort.count_x(1) as f64 / cohort.n() as f64;
    output(
        "simulate",
        config,
        json!({
            "rows": cohort.n(),
            "dim_z": cohort.dim_z(),
            "dim_w": cohort.dim_w(),
            "dim_v": cohort.dim_v(),
            "x1_fraction": x1_fraction,
            "csv_out": config.csv_out,
        }),
    )
}

fn cmd_oracle(
    config: &RunConfig,
    query_flag: Option<&str>,
    n_mc_flag: Option<usize>,
    exact_flag: bool,
) -> Result<serde_json::Value> {
    let scm = config
        .scm
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("oracle requires an scm source".into()))?;
    let spec = scm.resolve_spec()?;
    let block = config.oracle.clone().unwrap_or_default();
    let kind = match query_flag {
        Some(s) => parse_effect(s)?,
        None => block.query.unwrap_or(EffectKind::Vde),
    };
    let query = EffectQuery::new(kind, block.x0.unwrap_or(0), block.x1.unwrap_or(1))
        .with_mediators(block.mediators.unwrap_or_default());
    let n_mc = n_mc_flag.or(block.n_mc).unwrap_or(1_000_000);
    let exact = exact_flag || block.exact.unwrap_or(false);
    let result = if exact {
        let value = enumerate_exact(&spec, &query)?;
        json!({
            "query": query,
            "value": value,
            "std_error": 0.0,
            "method": "enumeration",
        })
    } else {
        let est = mc_counterfactual(&spec, &query, n_mc, block.mc_seed.unwrap_or(0))?;
        json!({
            "query": query,
            "value": est.value,
            "std_error": est.std_error,
            "n_mc": est.n_mc,
            "seed": est.seed,
            "method": "monte-carlo",
        })
    };
    let mut resolved = config.clone();
    resolved.oracle = Some(config::OracleBlock {
        query: Some(kind),
        x0: Some(query.x0),
        x1: Some(query.x1),
        mediators: Some(query.mediators),
        n_mc: Some(n_mc),
        mc_seed: Some(block.mc_seed.unwrap_or(0)),
        exact: Some(exact),
    });
    output("oracle", &resolved, result)
}

fn cmd_estimate(config: &RunConfig) -> Result<serde_json::Value> {
    let (cohort, load_report) = load_cohort(config)?;
    let settings = config.settings();
    let estimates: Vec<_> = config
        .queries()
        .iter()
        .map(|q| estimate_effect(&cohort, q, &settings))
        .collect::<Result<_>>()?;
    output(
        "estimate",
        config,
        json!({"estimates": estimates, "load_report": load_report}),
    )
}

fn cmd_bootstrap(config: &RunConfig) -> Result<serde_json::Value> {
    let (cohort, load_report) = load_cohort(config)?;
    let settings = config.settings();
    let b = config
        .bootstrap
        .unwrap_or(pathfx_core::inference::DEFAULT_BOOTSTRAP);
    let level = config.level.unwrap_or(pathfx_core::inference::DEFAULT_LEVEL);
    let estimates: Vec<_> = config
        .queries()
        .iter()
        .map(|q| bootstrap_ci(&cohort, q, b, level, &settings))
        .collect::<Result<_>>()?;
    output(
        "bootstrap",
        config,
        json!({"estimates": estimates, "load_report": load_report}),
    )
}

fn cmd_conditional(config: &RunConfig) -> Result<serde_json::Value> {
    let (cohort, _) = load_cohort(config)?;
    let settings = config.settings();
    let block = config
        .conditional
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("conditional requires a conditional block".into()))?;
    let binned = conditional_vde(
        &cohort,
        config.x0.unwrap_or(0),
        config.x1.unwrap_or(1),
        &block.axis1,
        &block.axis2,
        &block.axis1_edges,
        &block.axis2_edges,
        block.min_count,
        &settings,
    )?;
    if let Some(path) = &config.csv_out {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "bin1", "bin2", "axis1_lo", "axis1_hi", "axis2_lo", "axis2_hi", "mean", "count",
            "missing",
        ])?;
        for cell in &binned.cells {
            w.write_record([
                cell.bin1.to_string(),
                cell.bin2.to_string(),
                binned.axis1_edges[cell.bin1].to_string(),
                binned.axis1_edges[cell.bin1 + 1].to_string(),
                binned.axis2_edges[cell.bin2].to_string(),
                binned.axis2_edges[cell.bin2 + 1].to_string(),
                cell.mean.to_string(),
                cell.count.to_string(),
                cell.missing.to_string(),
            ])?;
        }
        w.flush()?;
    }
    output("conditional", config, json!({"binned": binned}))
}

fn cmd_diagnose(config: &RunConfig) -> Result<serde_json::Value> {
    let (cohort, _) = load_cohort(config)?;
    let settings = config.settings();
    let level = config.level.unwrap_or(pathfx_core::inference::DEFAULT_LEVEL);
    let queries = config.queries();
    let query = queries.first().ok_or_else(|| {
        Error::InvalidArgument("diagnose requires at least one effect".into())
    })?;
    let (estimate, rho) = analytic_ci(&cohort, query, level, &settings)?;
    let rows = nuisance_mean_diagnostics(&estimate);
    if let Some(path) = &config.csv_out {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["term", "fold", "family", "pre_mean", "post_mean", "small_sample_flag"])?;
        for row in &rows {
            w.write_record([
                row.term.clone(),
                row.fold.to_string(),
                row.family.clone(),
                row.pre_mean.to_string(),
                row.post_mean.to_string(),
                row.small_sample_flag.to_string(),
            ])?;
        }
        w.flush()?;
    }
    output(
        "diagnose",
        config,
        json!({"estimate": estimate, "rho": rho, "weight_means": rows}),
    )
}

fn cmd_study(config: &RunConfig) -> Result<serde_json::Value> {
    let scm = config
        .scm
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("study requires an scm source".into()))?;
    let spec = scm.resolve_spec()?;
    let block = config.study.clone().unwrap_or_default();
    let settings = config.settings();
    let modes = block.modes.unwrap_or_else(|| vec![ModeKind::Dr, ModeKind::SnDr]);
    let replications = block.replications.unwrap_or(20);
    let oracle_n_mc = block.oracle_n_mc.unwrap_or(1_000_000);
    let study_seed = block.study_seed.unwrap_or(0);
    let result: StudyResult = match block.kind.as_deref() {
        Some("imbalance") => {
            let etas = block
                .etas
                .unwrap_or_else(|| vec![0.1, 0.2, 0.33, 0.5]);
            imbalance_study(
                &spec,
                &etas,
                block.n.unwrap_or(32_000),
                replications,
                &modes,
                &settings,
                oracle_n_mc,
                study_seed,
            )?
        }
        Some("convergence") | None => {
            let sizes = block
                .sizes
                .unwrap_or_else(|| vec![1_000, 2_000, 4_000, 8_000, 16_000, 32_000]);
            convergence_study(
                &spec,
                &sizes,
                replications,
                &modes,
                &settings,
                oracle_n_mc,
                study_seed,
            )?
        }
        Some(other) => {
            return Err(Error::InvalidArgument(format!(
                "unknown study kind '{other}' (expected convergence | imbalance)"
            )))
        }
    };
    if let Some(path) = &config.csv_out {
        let file = std::fs::File::create(path)?;
        result.to_csv(file)?;
    }
    output("study", config, json!({"study": result}))
}

fn cmd_ingest(config: &RunConfig) -> Result<serde_json::Value> {
    let csv_source = config
        .csv
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("ingest requires a csv source".into()))?;
    let (cohort, load_report) = load_csv(&csv_source.path, &csv_source.schema)?;
    let block = config.ingest.clone().unwrap_or_default();

    let events_report = match (&block.events_path, &block.events) {
        (Some(path), Some(events_config)) => {
            let file = std::fs::File::open(path)?;
            let agg = aggregate_events(file, events_config)?;
            Some(json!({
                "units_read": agg.units_read,
                "units_dropped": agg.units_dropped,
                "columns": agg.columns,
            }))
        }
        (None, None) => None,
        _ => {
            return Err(Error::InvalidArgument(
                "event aggregation needs both events_path and events config".into(),
            ))
        }
    };

    let (cohort, filter_report) = if block.filters.is_empty() {
        (cohort, None)
    } else {
        let (filtered, report) = filter_cohort(&cohort, &block.filters)?;
        (filtered, Some(report))
    };

    if let Some(path) = &config.csv_out {
        let mut schema = csv_source.schema.clone();
        if schema.delta.is_some() {
            // the derived column is now a regular V column
            let delta = schema.delta.take().unwrap();
            schema.v.push(delta.output_name);
        }
        let file = std::fs::File::create(path)?;
        write_csv(&cohort, &schema, file)?;
    }
    output(
        "ingest",
        config,
        json!({
            "rows": cohort.n(),
            "load_report": load_report,
            "filter_report": filter_report,
            "events_report": events_report,
            "csv_out": config.csv_out,
        }),
    )
}

