//! Meter data ingestion, grouping, and synthetic baseline generation.
//!
//! Per-meter consumption lives in CSV files (`timestamp,kwh,imputed`, hourly,
//! UTC). A metadata CSV (`meter_id,data_path,zip`) names every meter. Meters
//! are grouped into radial segments by ZIP code under a per-parent capacity
//! limit. When no real dataset is available, [`generate_synthetic_baseline`]
//! produces seeded residential load curves so the whole pipeline runs
//! self-contained.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Timelike, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

/// Minimum usable series length: one classifier window.
pub const MIN_SERIES_LEN: usize = 72;

/// Gaps of at most this many consecutive hours are forward-filled; longer
/// gaps reject the file.
pub const MAX_GAP_FILL_HOURS: i64 = 3;

/// Default maximum children per parent meter.
pub const DEFAULT_CAPACITY: usize = 200;

/// Default technical loss rate (fraction of flow dissipated in the segment).
pub const DEFAULT_TECHNICAL_LOSS: f64 = 0.03;

/// One meter's gap-free hourly kWh series.
///
/// Reading `k` is at `start + k` hours; there are no holes. `imputed[k]` marks
/// values that were filled rather than reported.
#[derive(Debug, Clone, PartialEq)]
pub struct MeterSeries {
    pub meter_id: String,
    pub start: DateTime<Utc>,
    pub kwh: Vec<f64>,
    pub imputed: Vec<bool>,
}

impl MeterSeries {
    pub fn new(
        meter_id: impl Into<String>,
        start: DateTime<Utc>,
        kwh: Vec<f64>,
        imputed: Vec<bool>,
    ) -> Result<Self> {
        let meter_id = meter_id.into();
        if meter_id.is_empty() {
            return Err(Error::Data("meter_id must be non-empty".into()));
        }
        if start.minute() != 0 || start.second() != 0 || start.nanosecond() != 0 {
            return Err(Error::Data(format!(
                "series start {start} is not aligned to an hour boundary"
            )));
        }
        if kwh.len() != imputed.len() {
            return Err(Error::Data(format!(
                "kwh ({}) and imputed ({}) lengths differ for meter {meter_id}",
                kwh.len(),
                imputed.len()
            )));
        }
        if kwh.len() < MIN_SERIES_LEN {
            return Err(Error::Data(format!(
                "meter {meter_id}: series has {} hours, need at least {MIN_SERIES_LEN}",
                kwh.len()
            )));
        }
        for (k, &v) in kwh.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "meter {meter_id}: non-finite kWh at index {k}"
                )));
            }
            if v < 0.0 {
                return Err(Error::Data(format!(
                    "meter {meter_id}: negative kWh {v} at index {k}"
                )));
            }
        }
        Ok(Self {
            meter_id,
            start,
            kwh,
            imputed,
        })
    }

    pub fn len(&self) -> usize {
        self.kwh.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kwh.is_empty()
    }

    /// Timestamp of reading `k`.
    pub fn hour_at(&self, k: usize) -> DateTime<Utc> {
        self.start + Duration::hours(k as i64)
    }
}

/// One row of the metadata file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeterRecord {
    pub meter_id: String,
    pub data_path: PathBuf,
    pub zip: String,
}

/// A radial segment: one parent meter and the child meters behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentGroup {
    pub parent_id: String,
    pub zip: String,
    pub child_ids: Vec<String>,
    /// Loss rate the watchdog assumes when correcting child sums.
    pub tl_assumed: f64,
    /// Loss rate actually applied when synthesizing the parent reading.
    pub tl_actual: f64,
}

impl ParentGroup {
    pub fn validate(&self, capacity: usize) -> Result<()> {
        if self.child_ids.is_empty() {
            return Err(Error::Data(format!("group {}: no children", self.parent_id)));
        }
        if self.child_ids.len() > capacity {
            return Err(Error::Data(format!(
                "group {}: {} children exceed capacity {capacity}",
                self.parent_id,
                self.child_ids.len()
            )));
        }
        for tl in [self.tl_assumed, self.tl_actual] {
            if !(0.0..1.0).contains(&tl) {
                return Err(Error::Data(format!(
                    "group {}: technical loss {tl} outside [0, 1)",
                    self.parent_id
                )));
            }
        }
        Ok(())
    }
}

const SERIES_HEADER: [&str; 3] = ["timestamp", "kwh", "imputed"];
const METADATA_HEADER: [&str; 3] = ["meter_id", "data_path", "zip"];

fn parse_err(path: &Path, line: Option<u64>, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn check_header(path: &Path, got: &csv::StringRecord, want: &[&str; 3]) -> Result<()> {
    let fields: Vec<&str> = got.iter().collect();
    if fields != want {
        return Err(parse_err(
            path,
            Some(1),
            format!("expected header {:?}, got {:?}", want.join(","), fields.join(",")),
        ));
    }
    Ok(())
}

fn parse_hour_timestamp(path: &Path, line: u64, raw: &str) -> Result<DateTime<Utc>> {
    let ts = DateTime::parse_from_rfc3339(raw)
        .map_err(|e| parse_err(path, Some(line), format!("bad timestamp {raw:?}: {e}")))?
        .with_timezone(&Utc);
    if ts.minute() != 0 || ts.second() != 0 || ts.nanosecond() != 0 {
        return Err(Error::Data(format!(
            "{}: timestamp {raw} at line {line} is not truncated to the hour",
            path.display()
        )));
    }
    Ok(ts)
}

/// A raw `(timestamp, kwh, imputed)` row before gap filling.
type RawRow = (DateTime<Utc>, f64, bool);

/// Sorts rows, rejects duplicates, and forward-fills gaps of at most
/// [`MAX_GAP_FILL_HOURS`]. Filled hours carry the previous value with
/// `imputed = true`.
fn assemble_hourly(path: &Path, mut rows: Vec<RawRow>) -> Result<(DateTime<Utc>, Vec<f64>, Vec<bool>)> {
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    rows.sort_by_key(|r| r.0);
    let start = rows[0].0;
    let mut kwh = Vec::with_capacity(rows.len());
    let mut imputed = Vec::with_capacity(rows.len());
    kwh.push(rows[0].1);
    imputed.push(rows[0].2);
    for pair in rows.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        let delta = (cur.0 - prev.0).num_hours();
        if delta == 0 {
            return Err(Error::Data(format!(
                "{}: duplicate timestamp {}",
                path.display(),
                cur.0
            )));
        }
        let gap = delta - 1;
        if gap > MAX_GAP_FILL_HOURS {
            return Err(Error::Data(format!(
                "{}: gap of {gap} hours after {} exceeds the fill limit of {MAX_GAP_FILL_HOURS}",
                path.display(),
                prev.0
            )));
        }
        for _ in 0..gap {
            kwh.push(prev.1);
            imputed.push(true);
        }
        kwh.push(cur.1);
        imputed.push(cur.2);
    }
    Ok((start, kwh, imputed))
}

/// Load one per-meter CSV into a gap-free hourly series.
///
/// The meter id is the file stem. Rows are sorted by timestamp; duplicate
/// timestamps, negative or non-finite kWh, and over-long gaps are data
/// errors; malformed rows are parse errors carrying the line number.
pub fn load_meter_series(path: &Path) -> Result<MeterSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
            _ => parse_err(path, None, e.to_string()),
        })?;
    check_header(path, reader.headers().map_err(|e| parse_err(path, Some(1), e.to_string()))?, &SERIES_HEADER)?;

    let mut rows: Vec<RawRow> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 3 {
            return Err(parse_err(
                path,
                Some(line),
                format!("expected 3 fields, got {}", record.len()),
            ));
        }
        let ts = parse_hour_timestamp(path, line, &record[0])?;
        let kwh: f64 = record[1]
            .trim()
            .parse()
            .map_err(|e| parse_err(path, Some(line), format!("bad kwh {:?}: {e}", &record[1])))?;
        if !kwh.is_finite() {
            return Err(Error::Data(format!(
                "{}: non-finite kWh at line {line}",
                path.display()
            )));
        }
        if kwh < 0.0 {
            return Err(Error::Data(format!(
                "{}: negative kWh {kwh} at line {line}",
                path.display()
            )));
        }
        let imputed = match record[2].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(parse_err(
                    path,
                    Some(line),
                    format!("imputed must be 0 or 1, got {other:?}"),
                ))
            }
        };
        rows.push((ts, kwh, imputed));
    }

    let (start, kwh, imputed) = assemble_hourly(path, rows)?;
    let meter_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("meter")
        .to_string();
    MeterSeries::new(meter_id, start, kwh, imputed)
}

/// Write a series back out in the ingestion schema. Round-trips exactly:
/// `load_meter_series(write_meter_series(s)) == s` (modulo the meter id,
/// which comes from the file stem).
pub fn write_meter_series(series: &MeterSeries, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(series.len() * 32);
    out.push_str("timestamp,kwh,imputed\n");
    for k in 0..series.len() {
        let ts = series.hour_at(k).format("%Y-%m-%dT%H:%M:%SZ");
        let _ = writeln!(
            out,
            "{ts},{},{}",
            series.kwh[k],
            if series.imputed[k] { 1 } else { 0 }
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Load the metadata file: one [`MeterRecord`] per row, ids unique.
pub fn load_metadata(path: &Path) -> Result<Vec<MeterRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
            _ => parse_err(path, None, e.to_string()),
        })?;
    check_header(path, reader.headers().map_err(|e| parse_err(path, Some(1), e.to_string()))?, &METADATA_HEADER)?;

    let mut records = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 3 {
            return Err(parse_err(
                path,
                Some(line),
                format!("expected 3 fields, got {}", record.len()),
            ));
        }
        let meter_id = record[0].trim().to_string();
        if meter_id.is_empty() {
            return Err(Error::Data(format!(
                "{}: empty meter_id at line {line}",
                path.display()
            )));
        }
        if !seen.insert(meter_id.clone()) {
            return Err(Error::Data(format!(
                "{}: duplicate meter_id {meter_id} at line {line}",
                path.display()
            )));
        }
        let zip = record[2].trim().to_string();
        if zip.is_empty() {
            return Err(Error::Data(format!(
                "{}: missing zip for meter {meter_id} at line {line}",
                path.display()
            )));
        }
        records.push(MeterRecord {
            meter_id,
            data_path: PathBuf::from(record[1].trim()),
            zip,
        });
    }
    Ok(records)
}

/// Write a metadata file in the ingestion schema.
pub fn write_metadata(records: &[MeterRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("meter_id,data_path,zip\n");
    for r in records {
        let _ = writeln!(out, "{},{},{}", r.meter_id, r.data_path.display(), r.zip);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Partition records by ZIP code, then chunk each ZIP's meters (in metadata
/// order) into groups of at most `capacity`. Groups are ordered by ZIP, then
/// chunk index; `parent_id` is `<zip>-<chunk_index>`.
pub fn group_meters(records: &[MeterRecord], capacity: usize) -> Result<Vec<ParentGroup>> {
    if capacity == 0 {
        return Err(Error::Usage("group capacity must be at least 1".into()));
    }
    let mut by_zip: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in records {
        by_zip.entry(&r.zip).or_default().push(&r.meter_id);
    }
    let mut groups = Vec::new();
    for (zip, ids) in by_zip {
        for (chunk_idx, chunk) in ids.chunks(capacity).enumerate() {
            groups.push(ParentGroup {
                parent_id: format!("{zip}-{chunk_idx}"),
                zip: zip.to_string(),
                child_ids: chunk.iter().map(|s| s.to_string()).collect(),
                tl_assumed: DEFAULT_TECHNICAL_LOSS,
                tl_actual: DEFAULT_TECHNICAL_LOSS,
            });
        }
    }
    Ok(groups)
}

/// Meter id used for synthetic meter `i`.
pub fn synthetic_meter_id(i: usize) -> String {
    format!("m{i:05}")
}

/// Fixed origin for synthetic series (a Monday, midnight UTC).
pub fn synthetic_epoch() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2024-01-01T00:00:00Z")
        .expect("static timestamp")
        .with_timezone(&Utc)
}

/// Distance on the 24-hour circle.
fn circular_hour_distance(h: f64, center: f64) -> f64 {
    let d = (h - center).abs() % 24.0;
    d.min(24.0 - d)
}

/// Generate seeded residential baseline load for `n_meters` meters.
///
/// Each meter gets a heavy-tailed overall scale (households differ widely in
/// size), its own morning/evening peak placement, and multiplicative noise on
/// top of a 24-hour periodic profile. Values stay within 0–10 kWh/h. The
/// output is a pure function of `(n_meters, n_hours, seed)`.
pub fn generate_synthetic_baseline(
    n_meters: usize,
    n_hours: usize,
    seed: u64,
) -> Result<Vec<MeterSeries>> {
    if n_meters < 1 {
        return Err(Error::Usage("n_meters must be at least 1".into()));
    }
    if n_hours < MIN_SERIES_LEN {
        return Err(Error::Usage(format!(
            "n_hours must be at least {MIN_SERIES_LEN}, got {n_hours}"
        )));
    }
    let start = synthetic_epoch();
    let mut series = Vec::with_capacity(n_meters);
    for i in 0..n_meters {
        let meter_id = synthetic_meter_id(i);
        let mut rng = seeds::rng_for(seed, "baseline", &meter_id);

        // Household scale: lognormal, median ~0.5 kWh/h, clamped to keep the
        // hourly cap plausible.
        let scale = (0.5_f64 * (1.05 * seeds::normal_draw(&mut rng)).exp()).clamp(0.04, 3.2);

        let base = rng.gen_range(0.15..0.30);
        let morning_amp = rng.gen_range(0.5..1.1);
        let morning_center = rng.gen_range(6.5..9.0);
        let morning_width = rng.gen_range(1.2..2.2);
        let evening_amp = rng.gen_range(1.0..2.0);
        let evening_center = rng.gen_range(17.5..20.5);
        let evening_width = rng.gen_range(1.8..3.0);

        let mut kwh = Vec::with_capacity(n_hours);
        for t in 0..n_hours {
            let h = (t % 24) as f64;
            let dm = circular_hour_distance(h, morning_center) / morning_width;
            let de = circular_hour_distance(h, evening_center) / evening_width;
            let shape = base
                + morning_amp * (-0.5 * dm * dm).exp()
                + evening_amp * (-0.5 * de * de).exp();
            let noise = (0.16 * seeds::normal_draw(&mut rng)).exp();
            kwh.push((scale * shape * noise).clamp(0.0, 10.0));
        }
        let imputed = vec![false; n_hours];
        series.push(MeterSeries::new(meter_id, start, kwh, imputed)?);
    }
    Ok(series)
}

/// Chronological split: the earliest `(1 - eval_fraction)` of the series is
/// the training part, the final `eval_fraction` the evaluation part.
pub fn split_dataset(series: &MeterSeries, eval_fraction: f64) -> Result<(MeterSeries, MeterSeries)> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::Usage(format!(
            "eval_fraction must be in (0, 1), got {eval_fraction}"
        )));
    }
    let len = series.len();
    let eval_len = (len as f64 * eval_fraction).round() as usize;
    let train_len = len - eval_len;
    if train_len < MIN_SERIES_LEN || eval_len < MIN_SERIES_LEN {
        return Err(Error::Data(format!(
            "meter {}: split {train_len}/{eval_len} leaves a part shorter than {MIN_SERIES_LEN} hours",
            series.meter_id
        )));
    }
    let train = MeterSeries::new(
        series.meter_id.clone(),
        series.start,
        series.kwh[..train_len].to_vec(),
        series.imputed[..train_len].to_vec(),
    )?;
    let eval = MeterSeries::new(
        series.meter_id.clone(),
        series.start + Duration::hours(train_len as i64),
        series.kwh[train_len..].to_vec(),
        series.imputed[train_len..].to_vec(),
    )?;
    Ok((train, eval))
}
