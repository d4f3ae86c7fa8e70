//! Report files.
//!
//! One simulate invocation emits four artifacts under the output directory:
//!
//! * `report.json` — every paired run in full fidelity.
//! * `summary.csv` — one row per (scenario, mode), seed-averaged, columns
//!   `scenario,mode,precision,recall,positives,filtered_pct,invocations,windows,macs`.
//! * `watchdog_events.csv` — per-hour event log of the with-watchdog runs,
//!   columns `parent_id,hour_index,d_percent,flag_after,evaluated,batch_size`.
//! * `plot_data.csv` — long-format `scenario,mode,metric,value` rows for
//!   plotting.
//!
//! All numbers are formatted deterministically; identical runs produce
//! byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::theft::ScenarioSpec;

use super::{PairedOutput, PairedRecord, RunMode, RunOutput, SimulationReport};

/// Top-level structure of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    /// Paired with/without runs.
    pub runs: Vec<PairedRecord>,
    /// Runs where only one mode was requested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub single_runs: Vec<SimulationReport>,
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmittedFiles {
    pub report_json: PathBuf,
    pub summary_csv: PathBuf,
    pub watchdog_events_csv: PathBuf,
    pub plot_data_csv: PathBuf,
}

fn scenario_order_key(label: &str) -> (usize, String) {
    match ScenarioSpec::MATRIX_CODES.iter().position(|c| *c == label) {
        Some(i) => (i, String::new()),
        None => (usize::MAX, label.to_string()),
    }
}

/// Seed-averaged summary cell for one (scenario, mode).
#[derive(Debug, Default)]
struct SummaryCell {
    n: u64,
    precision: f64,
    recall: f64,
    positives: f64,
    invocations: f64,
    windows: f64,
    macs: f64,
    filtered_sum: f64,
    filtered_n: u64,
}

impl SummaryCell {
    fn add(&mut self, r: &SimulationReport) {
        self.n += 1;
        self.precision += r.accuracy.precision;
        self.recall += r.accuracy.recall;
        self.positives += r.accuracy.positives as f64;
        self.invocations += r.cost.invocations as f64;
        self.windows += r.cost.windows as f64;
        self.macs += r.cost.macs as f64;
        if let Some(f) = r.filtered_percent {
            self.filtered_sum += f;
            self.filtered_n += 1;
        }
    }

    fn row(&self, scenario: &str, mode: RunMode) -> String {
        let n = self.n as f64;
        let filtered = if self.filtered_n > 0 {
            format!("{:.4}", self.filtered_sum / self.filtered_n as f64)
        } else {
            String::new()
        };
        format!(
            "{scenario},{},{:.4},{:.4},{:.2},{filtered},{:.2},{:.2},{:.2}",
            mode.short(),
            self.precision / n,
            self.recall / n,
            self.positives / n,
            self.invocations / n,
            self.windows / n,
            self.macs / n,
        )
    }
}

/// Render the seed-averaged summary CSV.
pub fn render_summary(doc: &ReportDocument) -> String {
    let mut cells: BTreeMap<(usize, String, u8), SummaryCell> = BTreeMap::new();
    for r in &doc.runs {
        let key = scenario_order_key(&r.scenario);
        cells
            .entry((key.0, key.1.clone(), 0))
            .or_default()
            .add(&r.without);
        cells
            .entry((key.0, key.1.clone(), 1))
            .or_default()
            .add(&r.with_watchdog);
    }
    for r in &doc.single_runs {
        let key = scenario_order_key(&r.scenario);
        let mode_tag = if r.mode == RunMode::WithoutWatchdog { 0 } else { 1 };
        cells.entry((key.0, key.1.clone(), mode_tag)).or_default().add(r);
    }
    let mut out = String::from("scenario,mode,precision,recall,positives,filtered_pct,invocations,windows,macs\n");
    for ((idx, other, mode_tag), cell) in &cells {
        let scenario = if *idx < ScenarioSpec::MATRIX_CODES.len() {
            ScenarioSpec::MATRIX_CODES[*idx].to_string()
        } else {
            other.clone()
        };
        let mode = if *mode_tag == 0 {
            RunMode::WithoutWatchdog
        } else {
            RunMode::WithWatchdog
        };
        out.push_str(&cell.row(&scenario, mode));
        out.push('\n');
    }
    out
}

type PlotAgg = BTreeMap<(usize, String, u8, &'static str), (f64, u64)>;

fn plot_push(agg: &mut PlotAgg, key: &(usize, String), mode: u8, metric: &'static str, value: f64) {
    let e = agg
        .entry((key.0, key.1.clone(), mode, metric))
        .or_insert((0.0, 0));
    e.0 += value;
    e.1 += 1;
}

fn plot_push_report(agg: &mut PlotAgg, key: &(usize, String), mode: u8, rep: &SimulationReport) {
    plot_push(agg, key, mode, "precision", rep.accuracy.precision);
    plot_push(agg, key, mode, "recall", rep.accuracy.recall);
    plot_push(agg, key, mode, "positives", rep.accuracy.positives as f64);
    plot_push(agg, key, mode, "macs", rep.cost.macs as f64);
    plot_push(agg, key, mode, "invocations", rep.cost.invocations as f64);
    plot_push(agg, key, mode, "windows", rep.cost.windows as f64);
    plot_push(agg, key, mode, "watchdog_ops", rep.cost.watchdog_ops as f64);
    plot_push(agg, key, mode, "interval_tp", rep.interval.tp as f64);
    plot_push(agg, key, mode, "interval_fp", rep.interval.fp as f64);
    plot_push(agg, key, mode, "interval_fn", rep.interval.fn_ as f64);
    plot_push(agg, key, mode, "interval_tn", rep.interval.tn as f64);
}

fn render_plot_data(doc: &ReportDocument) -> String {
    // seed-averaged long format, one metric per row
    let mut agg: PlotAgg = BTreeMap::new();
    for r in &doc.runs {
        let key = scenario_order_key(&r.scenario);
        plot_push_report(&mut agg, &key, 0, &r.without);
        plot_push_report(&mut agg, &key, 1, &r.with_watchdog);
        plot_push(&mut agg, &key, 2, "macs_reduction", r.macs_reduction);
        if let Some(f) = r.filtered_percent {
            plot_push(&mut agg, &key, 2, "filtered_pct", f);
        }
    }
    for r in &doc.single_runs {
        let key = scenario_order_key(&r.scenario);
        let mode = if r.mode == RunMode::WithoutWatchdog { 0 } else { 1 };
        plot_push_report(&mut agg, &key, mode, r);
    }
    let mut out = String::from("scenario,mode,metric,value\n");
    for ((idx, other, mode, metric), (sum, n)) in &agg {
        let scenario = if *idx < ScenarioSpec::MATRIX_CODES.len() {
            ScenarioSpec::MATRIX_CODES[*idx]
        } else {
            other.as_str()
        };
        let mode = match mode {
            0 => "without",
            1 => "with",
            _ => "paired",
        };
        let _ = writeln!(out, "{scenario},{mode},{metric},{:.6}", sum / *n as f64);
    }
    out
}

fn render_events<'a>(events: impl Iterator<Item = &'a crate::watchdog::WatchdogEvent>) -> String {
    let mut out = String::from("parent_id,hour_index,d_percent,flag_after,evaluated,batch_size\n");
    for e in events {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            e.parent_id,
            e.hour_index,
            e.d_percent,
            if e.flag_after { 1 } else { 0 },
            if e.evaluated { 1 } else { 0 },
            e.batch_size
        );
    }
    out
}

/// Write the two CSV views of an existing report document.
pub fn emit_csv_summaries(doc: &ReportDocument, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let summary = out_dir.join("summary.csv");
    let plot = out_dir.join("plot_data.csv");
    fs::write(&summary, render_summary(doc)).map_err(|e| Error::io(&summary, e))?;
    fs::write(&plot, render_plot_data(doc)).map_err(|e| Error::io(&plot, e))?;
    Ok((summary, plot))
}

/// Write all four report files under `out_dir`.
pub fn emit_report(
    paired: &[PairedOutput],
    singles: &[RunOutput],
    out_dir: &Path,
) -> Result<EmittedFiles> {
    if paired.is_empty() && singles.is_empty() {
        return Err(Error::Usage("no reports to emit".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let doc = ReportDocument {
        runs: paired.iter().map(|o| o.record.clone()).collect(),
        single_runs: singles.iter().map(|o| o.report.clone()).collect(),
    };

    let files = EmittedFiles {
        report_json: out_dir.join("report.json"),
        summary_csv: out_dir.join("summary.csv"),
        watchdog_events_csv: out_dir.join("watchdog_events.csv"),
        plot_data_csv: out_dir.join("plot_data.csv"),
    };

    let json = serde_json::to_string_pretty(&doc).expect("report serializes");
    fs::write(&files.report_json, json).map_err(|e| Error::io(&files.report_json, e))?;
    fs::write(&files.summary_csv, render_summary(&doc))
        .map_err(|e| Error::io(&files.summary_csv, e))?;
    let events = render_events(
        paired
            .iter()
            .flat_map(|o| o.events.iter())
            .chain(singles.iter().flat_map(|o| o.events.iter())),
    );
    fs::write(&files.watchdog_events_csv, events)
        .map_err(|e| Error::io(&files.watchdog_events_csv, e))?;
    fs::write(&files.plot_data_csv, render_plot_data(&doc))
        .map_err(|e| Error::io(&files.plot_data_csv, e))?;
    Ok(files)
}

/// Parse a previously written `report.json`.
pub fn load_report(path: &Path) -> Result<ReportDocument> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
