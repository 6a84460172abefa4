//! Tabular ingestion and trajectory preprocessing.
//!
//! Cohorts load from CSV through a [`RoleSchema`] that maps column names to
//! causal roles and recodes the exposure labels to 0/1. Rows with missing or
//! unparseable required fields are dropped and counted. A derived
//! discrepancy column (pulse-oximeter reading minus blood-gas reading) can
//! be appended to the V block at load time.
//!
//! Per-stay measurement trajectories are reduced to scalars with an
//! exponentially weighted average `sum_i w_i x_i / sum_i w_i`,
//! `w_i = exp(-gamma t_i)`, where `t_i` is minutes before the anchor event.
//! Paired oximetry readings are built by matching each SpO2 event with the
//! earliest SaO2 event within the next `window` minutes, each SaO2 used at
//! most once.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::Cohort;
use crate::error::{Error, Result};

/// Default smoothing rate per minute for trajectory aggregation.
pub const DEFAULT_GAMMA: f64 = 0.01;
/// Default pairing window in minutes for oximetry discrepancies.
pub const DEFAULT_MATCH_WINDOW: f64 = 5.0;

/// Exposure column mapping: the label strings that recode to 0 and 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExposureRole {
    pub column: String,
    pub x0_label: String,
    pub x1_label: String,
}

/// Derived-discrepancy rule: appends `spo2 - sao2` as a new V column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaRule {
    pub spo2_column: String,
    pub sao2_column: String,
    #[serde(default = "default_delta_name")]
    pub output_name: String,
}

fn default_delta_name() -> String {
    "delta".to_string()
}

/// Column-name mappings for every causal role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleSchema {
    pub x: ExposureRole,
    pub y: String,
    pub z: Vec<String>,
    pub w: Vec<String>,
    pub v: Vec<String>,
    #[serde(default)]
    pub delta: Option<DeltaRule>,
}

impl RoleSchema {
    pub fn validate(&self) -> Result<()> {
        let mut seen: Vec<&str> = Vec::new();
        let all = [&self.x.column, &self.y]
            .into_iter()
            .chain(self.z.iter())
            .chain(self.w.iter())
            .chain(self.v.iter());
        for name in all {
            if seen.contains(&name.as_str()) {
                return Err(Error::data(format!(
                    "column '{name}' is referenced by more than one role"
                )));
            }
            seen.push(name);
        }
        if let Some(delta) = &self.delta {
            if !self.v.contains(&delta.spo2_column) || !self.v.contains(&delta.sao2_column) {
                return Err(Error::data(
                    "delta rule must reference V-role columns".to_string(),
                ));
            }
            if seen.contains(&delta.output_name.as_str()) {
                return Err(Error::data(format!(
                    "delta output '{}' collides with an existing column",
                    delta.output_name
                )));
            }
        }
        Ok(())
    }
}

/// Load accounting: every dropped row is counted with its reason.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub dropped_missing: usize,
}

fn parse_cell(raw: &str) -> Option<f64> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return None;
    }
    trimmed.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Loads a role-typed cohort from CSV. Rows with any missing required field
/// are dropped with a count; an exposure label outside the schema's two
/// labels is an error.
pub fn load_csv(path: impl AsRef<Path>, schema: &RoleSchema) -> Result<(Cohort, LoadReport)> {
    let file = std::fs::File::open(path)?;
    load_csv_reader(file, schema)
}

pub fn load_csv_reader<R: Read>(reader: R, schema: &RoleSchema) -> Result<(Cohort, LoadReport)> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::data(format!("unknown column '{name}'")))
    };
    let ix = col_index(&schema.x.column)?;
    let iy = col_index(&schema.y)?;
    let iz: Vec<usize> = schema.z.iter().map(|c| col_index(c)).collect::<Result<_>>()?;
    let iw: Vec<usize> = schema.w.iter().map(|c| col_index(c)).collect::<Result<_>>()?;
    let iv: Vec<usize> = schema.v.iter().map(|c| col_index(c)).collect::<Result<_>>()?;
    let delta_ix = schema
        .delta
        .as_ref()
        .map(|d| -> Result<(usize, usize)> {
            Ok((col_index(&d.spo2_column)?, col_index(&d.sao2_column)?))
        })
        .transpose()?;

    let mut report = LoadReport::default();
    let mut xs: Vec<u8> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut zs: Vec<f64> = Vec::new();
    let mut ws: Vec<f64> = Vec::new();
    let mut vs: Vec<f64> = Vec::new();
    let dim_v = iv.len() + usize::from(delta_ix.is_some());

    for record in rdr.records() {
        let record = record?;
        report.rows_read += 1;
        let x_raw = record.get(ix).unwrap_or("").trim();
        if x_raw.is_empty() {
            report.dropped_missing += 1;
            continue;
        }
        let x = if x_raw == schema.x.x0_label {
            0u8
        } else if x_raw == schema.x.x1_label {
            1u8
        } else {
            return Err(Error::data(format!(
                "exposure label '{x_raw}' is neither '{}' nor '{}'",
                schema.x.x0_label, schema.x.x1_label
            )));
        };
        let gather = |indices: &[usize]| -> Option<Vec<f64>> {
            indices
                .iter()
                .map(|&idx| parse_cell(record.get(idx).unwrap_or("")))
                .collect()
        };
        let row_z = gather(&iz);
        let row_w = gather(&iw);
        let mut row_v = gather(&iv);
        let ok = row_z.is_some() && row_w.is_some() && row_v.is_some();
        let y = parse_cell(record.get(iy).unwrap_or(""));
        let (Some(row_z), Some(row_w), Some(mut row_v), Some(y), true) =
            (row_z, row_w, row_v.take(), y, ok)
        else {
            report.dropped_missing += 1;
            continue;
        };
        if let Some((ispo2, isao2)) = delta_ix {
            let spo2_pos = iv.iter().position(|&i| i == ispo2).unwrap();
            let sao2_pos = iv.iter().position(|&i| i == isao2).unwrap();
            row_v.push(row_v[spo2_pos] - row_v[sao2_pos]);
        }
        xs.push(x);
        ys.push(y);
        zs.extend(row_z);
        ws.extend(row_w);
        vs.extend(row_v);
        report.rows_kept += 1;
    }
    if report.rows_kept == 0 {
        return Err(Error::data("no usable rows after dropping incomplete ones"));
    }
    let n = report.rows_kept;
    let z = Array2::from_shape_vec((n, iz.len()), zs).map_err(|e| Error::data(e.to_string()))?;
    let w = Array2::from_shape_vec((n, iw.len()), ws).map_err(|e| Error::data(e.to_string()))?;
    let v = Array2::from_shape_vec((n, dim_v), vs).map_err(|e| Error::data(e.to_string()))?;
    let y = Array1::from_vec(ys);
    let mut v_names = schema.v.clone();
    if let Some(d) = &schema.delta {
        v_names.push(d.output_name.clone());
    }
    let cohort = Cohort::new(z, xs, w, v, y)?
        .with_names(schema.z.clone(), schema.w.clone(), v_names)?;
    Ok((cohort, report))
}

/// Serializes a cohort back to CSV with the same column names and exposure
/// labels, so that load -> write -> load round-trips exactly.
pub fn write_csv<W: Write>(cohort: &Cohort, schema: &RoleSchema, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = Vec::new();
    header.extend(cohort.z_names().iter().cloned());
    header.push(schema.x.column.clone());
    header.extend(cohort.w_names().iter().cloned());
    header.extend(cohort.v_names().iter().cloned());
    header.push(schema.y.clone());
    w.write_record(&header)?;
    for i in 0..cohort.n() {
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        for j in 0..cohort.dim_z() {
            record.push(format!("{}", cohort.z()[[i, j]]));
        }
        record.push(if cohort.x()[i] == 0 {
            schema.x.x0_label.clone()
        } else {
            schema.x.x1_label.clone()
        });
        for j in 0..cohort.dim_w() {
            record.push(format!("{}", cohort.w()[[i, j]]));
        }
        for j in 0..cohort.dim_v() {
            record.push(format!("{}", cohort.v()[[i, j]]));
        }
        record.push(format!("{}", cohort.y()[i]));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Default schema for cohorts produced by the simulator: columns z0..,
/// x, w0.., v0.., y with exposure labels "0"/"1".
pub fn simulated_schema(dim_z: usize, dim_w: usize, dim_v: usize) -> RoleSchema {
    RoleSchema {
        x: ExposureRole {
            column: "x".into(),
            x0_label: "0".into(),
            x1_label: "1".into(),
        },
        y: "y".into(),
        z: (0..dim_z).map(|i| format!("z{i}")).collect(),
        w: (0..dim_w).map(|i| format!("w{i}")).collect(),
        v: (0..dim_v).map(|i| format!("v{i}")).collect(),
        delta: None,
    }
}

/// One measurement channel of one stay: (minutes-before-anchor, value)
/// pairs, held in chronological order (decreasing time-before).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventSeries {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl EventSeries {
    pub fn new(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut entries: Vec<(f64, f64)> = pairs.into_iter().collect();
        for &(t, v) in &entries {
            if !(t >= 0.0) || !t.is_finite() {
                return Err(Error::data(format!("event time {t} must be >= 0 minutes")));
            }
            if !v.is_finite() {
                return Err(Error::data("event value must be finite"));
            }
        }
        entries.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        Ok(EventSeries {
            times: entries.iter().map(|e| e.0).collect(),
            values: entries.iter().map(|e| e.1).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Exponentially weighted average with weights `exp(-gamma * t_i)`.
pub fn ewa_aggregate(series: &EventSeries, gamma: f64) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::data("cannot aggregate an empty series"));
    }
    if !(gamma >= 0.0) {
        return Err(Error::invalid("gamma must be non-negative"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (&t, &v) in series.times.iter().zip(&series.values) {
        let w = (-gamma * t).exp();
        num += w * v;
        den += w;
    }
    Ok(num / den)
}

/// Pairs each SpO2 event with the earliest unused SaO2 event strictly after
/// it in wall-clock time and within `window_minutes`, and returns the
/// discrepancies (SpO2 - SaO2) at the SpO2 times. Unmatched SpO2 events are
/// skipped; each SaO2 event pairs at most once, earlier SpO2 events winning.
pub fn match_discrepancy(
    spo2: &EventSeries,
    sao2: &EventSeries,
    window_minutes: f64,
) -> Result<EventSeries> {
    if !(window_minutes > 0.0) {
        return Err(Error::invalid("matching window must be positive"));
    }
    let mut used = vec![false; sao2.len()];
    let mut pairs = Vec::new();
    // both series are in chronological order (decreasing time-before), so
    // scanning SpO2 in storage order gives earlier readings first claim
    for (&t_s, &v_s) in spo2.times.iter().zip(&spo2.values) {
        // eligible SaO2: later in wall clock (t_a < t_s), within the window
        // (t_a >= t_s - window); take the earliest, i.e. the largest t_a
        let mut best: Option<usize> = None;
        for (j, &t_a) in sao2.times.iter().enumerate() {
            if used[j] || t_a >= t_s || t_a < t_s - window_minutes {
                continue;
            }
            if best.is_none_or(|current| t_a > sao2.times[current]) {
                best = Some(j);
            }
        }
        if let Some(j) = best {
            used[j] = true;
            pairs.push((t_s, v_s - sao2.values[j]));
        }
    }
    EventSeries::new(pairs)
}

/// A row filter over a named column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FilterRule {
    /// Keep rows with column >= min.
    MinValue { column: String, min: f64 },
    /// Keep rows with column <= max.
    MaxValue { column: String, max: f64 },
    /// Keep rows with lo <= column <= hi.
    Range { column: String, lo: f64, hi: f64 },
}

impl FilterRule {
    fn column(&self) -> &str {
        match self {
            FilterRule::MinValue { column, .. }
            | FilterRule::MaxValue { column, .. }
            | FilterRule::Range { column, .. } => column,
        }
    }

    fn keeps(&self, value: f64) -> bool {
        match self {
            FilterRule::MinValue { min, .. } => value >= *min,
            FilterRule::MaxValue { max, .. } => value <= *max,
            FilterRule::Range { lo, hi, .. } => value >= *lo && value <= *hi,
        }
    }
}

/// Per-rule exclusion counts; a row is charged to the first rule it fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub rows_in: usize,
    pub rows_out: usize,
    pub excluded_by_rule: Vec<usize>,
}

fn column_values(cohort: &Cohort, name: &str) -> Result<Vec<f64>> {
    if name == "y" {
        return Ok(cohort.y().to_vec());
    }
    for (names, block) in [
        (cohort.z_names(), cohort.z()),
        (cohort.w_names(), cohort.w()),
        (cohort.v_names(), cohort.v()),
    ] {
        if let Some(idx) = names.iter().position(|c| c == name) {
            return Ok(block.column(idx).to_vec());
        }
    }
    Err(Error::data(format!("filter references unknown column '{name}'")))
}

/// Applies the rules in order and reports per-rule exclusion counts. An
/// empty result is an error (contradictory rules).
pub fn filter_cohort(cohort: &Cohort, rules: &[FilterRule]) -> Result<(Cohort, FilterReport)> {
    let columns: Vec<Vec<f64>> = rules
        .iter()
        .map(|r| column_values(cohort, r.column()))
        .collect::<Result<_>>()?;
    let mut excluded = vec![0usize; rules.len()];
    let mut keep = Vec::new();
    'rows: for i in 0..cohort.n() {
        for (r, rule) in rules.iter().enumerate() {
            if !rule.keeps(columns[r][i]) {
                excluded[r] += 1;
                continue 'rows;
            }
        }
        keep.push(i);
    }
    if keep.is_empty() {
        return Err(Error::data(
            "filter rules exclude every row of the cohort".to_string(),
        ));
    }
    let filtered = cohort.select(&keep)?;
    let report = FilterReport {
        rows_in: cohort.n(),
        rows_out: keep.len(),
        excluded_by_rule: excluded,
    };
    Ok((filtered, report))
}

/// Configuration for building per-unit mediator columns from a long-format
/// event table (`unit_id, channel, minutes_before, value`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventIngestConfig {
    pub unit_column: String,
    pub channel_column: String,
    pub time_column: String,
    pub value_column: String,
    /// Channels aggregated into W columns, in output order.
    pub w_channels: Vec<String>,
    /// Channels aggregated into V columns, in output order.
    pub v_channels: Vec<String>,
    /// Optional oximetry pairing: (spo2 channel, sao2 channel) to derive a
    /// per-unit discrepancy column named `delta`.
    #[serde(default)]
    pub discrepancy: Option<(String, String)>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_window")]
    pub match_window: f64,
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

fn default_window() -> f64 {
    DEFAULT_MATCH_WINDOW
}

/// Aggregated per-unit values: one row per unit that had every required
/// channel present (and a matched discrepancy when configured).
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedEvents {
    pub unit_ids: Vec<String>,
    /// Column names: w channels, then v channels, then "delta" if derived.
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub units_read: usize,
    pub units_dropped: usize,
}

/// Reduces a long-format event CSV to per-unit scalar columns: every
/// channel is aggregated with the exponentially weighted average, and the
/// oximetry pair (when configured) is matched within the window before
/// aggregation of the discrepancies.
pub fn aggregate_events<R: Read>(reader: R, config: &EventIngestConfig) -> Result<AggregatedEvents> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::data(format!("unknown column '{name}'")))
    };
    let iu = col(&config.unit_column)?;
    let ic = col(&config.channel_column)?;
    let it = col(&config.time_column)?;
    let iv = col(&config.value_column)?;

    let mut per_unit: HashMap<String, HashMap<String, Vec<(f64, f64)>>> = HashMap::new();
    let mut unit_order: Vec<String> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let unit = record.get(iu).unwrap_or("").trim().to_string();
        let channel = record.get(ic).unwrap_or("").trim().to_string();
        let (Some(t), Some(v)) = (
            parse_cell(record.get(it).unwrap_or("")),
            parse_cell(record.get(iv).unwrap_or("")),
        ) else {
            continue;
        };
        if unit.is_empty() || channel.is_empty() {
            continue;
        }
        if !per_unit.contains_key(&unit) {
            unit_order.push(unit.clone());
        }
        per_unit.entry(unit).or_default().entry(channel).or_default().push((t, v));
    }

    let mut columns: Vec<String> = Vec::new();
    columns.extend(config.w_channels.iter().cloned());
    columns.extend(config.v_channels.iter().cloned());
    if config.discrepancy.is_some() {
        columns.push("delta".to_string());
    }

    let mut out = AggregatedEvents {
        unit_ids: Vec::new(),
        columns,
        rows: Vec::new(),
        units_read: unit_order.len(),
        units_dropped: 0,
    };
    'units: for unit in unit_order {
        let channels = &per_unit[&unit];
        let mut row = Vec::new();
        for name in config.w_channels.iter().chain(&config.v_channels) {
            let Some(events) = channels.get(name) else {
                out.units_dropped += 1;
                continue 'units;
            };
            let series = EventSeries::new(events.iter().copied())?;
            row.push(ewa_aggregate(&series, config.gamma)?);
        }
        if let Some((spo2_name, sao2_name)) = &config.discrepancy {
            let (Some(spo2), Some(sao2)) = (channels.get(spo2_name), channels.get(sao2_name))
            else {
                out.units_dropped += 1;
                continue 'units;
            };
            let spo2 = EventSeries::new(spo2.iter().copied())?;
            let sao2 = EventSeries::new(sao2.iter().copied())?;
            let deltas = match_discrepancy(&spo2, &sao2, config.match_window)?;
            if deltas.is_empty() {
                out.units_dropped += 1;
                continue 'units;
            }
            row.push(ewa_aggregate(&deltas, config.gamma)?);
        }
        out.unit_ids.push(unit);
        out.rows.push(row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> RoleSchema {
        RoleSchema {
            x: ExposureRole {
                column: "race".into(),
                x0_label: "White".into(),
                x1_label: "Black".into(),
            },
            y: "vented".into(),
            z: vec!["age".into()],
            w: vec!["lactate".into()],
            v: vec!["spo2".into(), "sao2".into()],
            delta: Some(DeltaRule {
                spo2_column: "spo2".into(),
                sao2_column: "sao2".into(),
                output_name: "delta".into(),
            }),
        }
    }

    #[test]
    fn loads_maps_labels_and_derives_delta() {
        let csv = "age,race,lactate,spo2,sao2,vented\n\
                   61,White,1.1,97,92,0\n\
                   54,Black,2.0,96,88,1\n\
                   70,White,0.9,99,95,1\n";
        let (cohort, report) = load_csv_reader(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(report.rows_kept, 3);
        assert_eq!(cohort.x(), &[0, 1, 0]);
        assert_eq!(cohort.v_names(), &["spo2", "sao2", "delta"]);
        assert_eq!(cohort.v()[[1, 2]], 96.0 - 88.0);
    }

    #[test]
    fn drops_rows_with_missing_fields() {
        let csv = "age,race,lactate,spo2,sao2,vented\n\
                   61,White,1.1,97,92,\n\
                   54,Black,2.0,96,88,1\n";
        let (cohort, report) = load_csv_reader(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(report.rows_read, 2);
        assert_eq!(report.dropped_missing, 1);
        assert_eq!(cohort.n(), 1);
    }

    #[test]
    fn unknown_label_is_an_error() {
        let csv = "age,race,lactate,spo2,sao2,vented\n61,Asian,1.1,97,92,0\n";
        assert!(load_csv_reader(csv.as_bytes(), &schema()).is_err());
    }

    #[test]
    fn unknown_column_is_an_error() {
        let csv = "age,lactate,spo2,sao2,vented\n61,1.1,97,92,0\n";
        assert!(load_csv_reader(csv.as_bytes(), &schema()).is_err());
    }

    #[test]
    fn csv_round_trips_exactly() {
        let csv = "age,race,lactate,spo2,sao2,vented\n\
                   61.5,White,1.125,97,92,0\n\
                   54.25,Black,2,96,88.5,1\n";
        let sch = schema();
        let (cohort, _) = load_csv_reader(csv.as_bytes(), &sch).unwrap();
        let mut buf = Vec::new();
        // the derived delta column is part of the typed table now
        let mut sch_out = sch.clone();
        sch_out.v.push("delta".into());
        sch_out.delta = None;
        write_csv(&cohort, &sch_out, &mut buf).unwrap();
        let (back, _) = load_csv_reader(buf.as_slice(), &sch_out).unwrap();
        assert_eq!(cohort, back);
    }

    #[test]
    fn ewa_examples() {
        let single = EventSeries::new([(120.0, 42.0)]).unwrap();
        assert_eq!(ewa_aggregate(&single, 0.3).unwrap(), 42.0);

        // weights [1, 0.5] at gamma=1, times [0, ln 2]
        let two = EventSeries::new([(0.0, 2.0), (2.0f64.ln(), 4.0)]).unwrap();
        let ewa = ewa_aggregate(&two, 1.0).unwrap();
        assert!((ewa - (2.0 + 2.0) / 1.5).abs() < 1e-12);

        let plain = EventSeries::new([(10.0, 1.0), (20.0, 2.0), (30.0, 6.0)]).unwrap();
        assert!((ewa_aggregate(&plain, 0.0).unwrap() - 3.0).abs() < 1e-12);

        assert!(ewa_aggregate(&EventSeries::default(), 0.5).is_err());
    }

    #[test]
    fn ewa_stays_within_range() {
        let series = EventSeries::new([(5.0, 1.0), (3.0, 9.0), (1.0, 4.0)]).unwrap();
        let e = ewa_aggregate(&series, 0.2).unwrap();
        assert!((1.0..=9.0).contains(&e));
    }

    #[test]
    fn matching_follows_the_window_rule() {
        // SpO2 at 103 minutes before anchor; SaO2 at 100 is 3 minutes later
        // in wall clock and matches; delta = 97 - 90 = 7
        let spo2 = EventSeries::new([(103.0, 97.0)]).unwrap();
        let sao2 = EventSeries::new([(100.0, 90.0)]).unwrap();
        let out = match_discrepancy(&spo2, &sao2, 5.0).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.values()[0], 7.0);
        assert_eq!(out.times()[0], 103.0);

        // 6 minutes later: outside the window
        let sao2_far = EventSeries::new([(97.0, 90.0)]).unwrap();
        let none = match_discrepancy(&spo2, &sao2_far, 5.0).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn matching_is_injective_and_earlier_spo2_wins() {
        // two SpO2 readings compete for one SaO2 at t=100; the earlier
        // (t=104) claims it, the later (t=102) finds nothing
        let spo2 = EventSeries::new([(104.0, 98.0), (102.0, 95.0)]).unwrap();
        let sao2 = EventSeries::new([(100.0, 90.0)]).unwrap();
        let out = match_discrepancy(&spo2, &sao2, 5.0).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.times()[0], 104.0);
        assert_eq!(out.values()[0], 8.0);
    }

    #[test]
    fn filters_count_exclusions_per_rule() {
        let csv = "age,race,lactate,spo2,sao2,vented\n\
                   61,White,1.1,97,92,0\n\
                   54,Black,2.0,96,65,1\n\
                   23,White,0.5,99,95,1\n\
                   80,Black,1.0,40,90,0\n";
        let (cohort, _) = load_csv_reader(csv.as_bytes(), &schema()).unwrap();
        let rules = vec![
            FilterRule::MinValue {
                column: "age".into(),
                min: 24.0,
            },
            FilterRule::Range {
                column: "spo2".into(),
                lo: 70.0,
                hi: 100.0,
            },
            FilterRule::Range {
                column: "sao2".into(),
                lo: 70.0,
                hi: 100.0,
            },
        ];
        let (filtered, report) = filter_cohort(&cohort, &rules).unwrap();
        assert_eq!(filtered.n(), 1);
        assert_eq!(report.excluded_by_rule, vec![1, 1, 1]);
    }

    #[test]
    fn contradictory_filters_error() {
        let csv = "age,race,lactate,spo2,sao2,vented\n61,White,1.1,97,92,0\n54,Black,2,96,88,1\n";
        let (cohort, _) = load_csv_reader(csv.as_bytes(), &schema()).unwrap();
        let rules = vec![FilterRule::MinValue {
            column: "age".into(),
            min: 1000.0,
        }];
        assert!(filter_cohort(&cohort, &rules).is_err());
    }

    #[test]
    fn aggregates_long_format_events() {
        let events = "stay,channel,minutes_before,value\n\
                      a,temp,10,37.0\n\
                      a,temp,5,38.0\n\
                      a,spo2,103,97\n\
                      a,sao2,100,90\n\
                      b,temp,10,36.0\n\
                      b,spo2,50,95\n";
        let config = EventIngestConfig {
            unit_column: "stay".into(),
            channel_column: "channel".into(),
            time_column: "minutes_before".into(),
            value_column: "value".into(),
            w_channels: vec!["temp".into()],
            v_channels: vec!["spo2".into()],
            discrepancy: Some(("spo2".into(), "sao2".into())),
            gamma: 0.0,
            match_window: 5.0,
        };
        let agg = aggregate_events(events.as_bytes(), &config).unwrap();
        // unit b has no sao2 channel, so only unit a survives
        assert_eq!(agg.unit_ids, vec!["a"]);
        assert_eq!(agg.columns, vec!["temp", "spo2", "delta"]);
        assert_eq!(agg.rows[0], vec![37.5, 97.0, 7.0]);
        assert_eq!(agg.units_dropped, 1);
    }
}
