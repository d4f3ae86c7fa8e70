//! End-to-end experiment orchestration.
//!
//! A run advances simulated hours over a materialized scenario. Every hour,
//! each group's watchdog sees the synthesized parent reading and the reported
//! child readings. At the daily evaluation instant the prediction unit runs —
//! for every group in `without` mode, only for flagged groups in `with` mode —
//! on the trailing 72-hour reported windows of all the group's children.
//!
//! The first evaluation instants (before a full window of history exists) are
//! warm-up: the flag cycle still resets there, but no day is counted. Both
//! modes run the watchdog state machine on identical data so their interval
//! confusion matrices are comparable; its per-hour arithmetic is charged to
//! the cost ledger only in `with` mode, where the deployed system would
//! actually run it.

pub mod dataset;
pub mod report;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accounting::{reduction_fraction, sample_around, CostLedger, SamplerOutcome, SamplerSpec};
use crate::error::{Error, Result};
use crate::lstm::{predict_batch, LstmModel, Window};
use crate::theft::{ScenarioInstance, ScenarioSpec, TamperedSeries};
use crate::watchdog::{
    synthesize_parent_reading, HourlyReading, WatchdogConfig, WatchdogEvent, WatchdogState,
};

pub use dataset::{build_dataset, train_model, training_windows, SimDataset};
pub use report::{emit_csv_summaries, emit_report, load_report, EmittedFiles, ReportDocument};

/// Which arm of the paired experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Evaluate every group at every counted evaluation instant.
    WithoutWatchdog,
    /// Evaluate only groups whose flag latched since the last instant.
    WithWatchdog,
}

impl RunMode {
    /// Short name used in CSV columns.
    pub fn short(&self) -> &'static str {
        match self {
            RunMode::WithoutWatchdog => "without",
            RunMode::WithWatchdog => "with",
        }
    }
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.short())
    }
}

/// Harness-level knobs.
#[derive(Debug, Clone)]
pub struct HarnessConfig {
    pub watchdog: WatchdogConfig,
    /// Record per-hour watchdog events (with-mode only; the log grows with
    /// groups x hours).
    pub collect_events: bool,
    /// Optional external power sampler wrapped around each run. Off by
    /// default: sampler readings make outputs machine-dependent.
    pub sampler: Option<SamplerSpec>,
    /// Where unparseable sampler output is saved for diagnosis.
    pub sampler_raw_dir: Option<std::path::PathBuf>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            watchdog: WatchdogConfig::default(),
            collect_events: false,
            sampler: None,
            sampler_raw_dir: None,
        }
    }
}

/// One (meter, day) cell of the evaluation universe.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowOutcome {
    pub meter_id: String,
    /// Counted evaluation-day index within the run.
    pub day: usize,
    /// Whether the prediction unit actually saw this window.
    pub evaluated: bool,
    /// Model verdict (false when not evaluated).
    pub predicted: bool,
    /// Ground truth: at least one tampered timestep overlaps the window.
    pub actual: bool,
}

/// Window-level counts and derived rates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMetrics {
    pub precision: f64,
    pub recall: f64,
    /// Predicted positives (TP + FP).
    pub positives: u64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

/// Precision, recall, and positives over the full evaluation universe.
///
/// Windows never evaluated count against recall when theft was present: a
/// filtered-out theft window is a miss, not a pass. Precision is 0 by
/// convention when nothing was predicted positive; recall is 0 when no theft
/// window exists.
pub fn compute_metrics(outcomes: &[WindowOutcome]) -> AccuracyMetrics {
    let mut m = AccuracyMetrics::default();
    for o in outcomes {
        debug_assert!(o.evaluated || !o.predicted);
        match (o.predicted, o.actual) {
            (true, true) => m.tp += 1,
            (true, false) => m.fp += 1,
            (false, true) => m.fn_ += 1,
            (false, false) => m.tn += 1,
        }
    }
    m.positives = m.tp + m.fp;
    m.precision = if m.positives > 0 {
        m.tp as f64 / m.positives as f64
    } else {
        0.0
    };
    m.recall = if m.tp + m.fn_ > 0 {
        m.tp as f64 / (m.tp + m.fn_) as f64
    } else {
        0.0
    };
    m
}

/// Group-day confusion matrix for the watchdog itself.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IntervalConfusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl IntervalConfusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn merge(&mut self, other: &IntervalConfusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

/// Fold per-day (flag fired, theft present) pairs into a confusion matrix.
pub fn watchdog_interval_metrics(days: &[(bool, bool)]) -> IntervalConfusion {
    let mut c = IntervalConfusion::default();
    for &(fired, theft) in days {
        match (fired, theft) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// Metrics and cost for one (scenario, seed, mode) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub scenario: String,
    /// Base seed of the matrix run this report belongs to.
    pub base_seed: u64,
    pub mode: RunMode,
    pub accuracy: AccuracyMetrics,
    pub interval: IntervalConfusion,
    pub cost: CostLedger,
    /// Share of baseline positives the watchdog filtered out; set on the
    /// with-mode report of a paired run, absent when the baseline had none.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filtered_percent: Option<f64>,
    pub evaluated_days: u64,
    pub n_groups: u64,
}

/// A run's report plus its (optional) event log and sampler warnings.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: SimulationReport,
    pub events: Vec<WatchdogEvent>,
    pub warnings: Vec<String>,
}

struct GroupResult {
    outcomes: Vec<WindowOutcome>,
    interval: IntervalConfusion,
    ledger: CostLedger,
    events: Vec<WatchdogEvent>,
}

fn simulate_group(
    group_idx: usize,
    instance: &ScenarioInstance,
    model: &LstmModel,
    mode: RunMode,
    hcfg: &HarnessConfig,
) -> Result<GroupResult> {
    let group = &instance.groups[group_idx];
    let children: Vec<&TamperedSeries> = group
        .child_ids
        .iter()
        .map(|id| &instance.series[id])
        .collect();
    let horizon = instance.horizon;
    let window_len = hcfg.watchdog.window_len;

    let mut wd = WatchdogState::new(group, hcfg.watchdog.clone())?;
    let mut result = GroupResult {
        outcomes: Vec::new(),
        interval: IntervalConfusion::default(),
        ledger: CostLedger::default(),
        events: Vec::new(),
    };
    let mut day_index = 0usize;
    let mut interval_days: Vec<(bool, bool)> = Vec::new();

    let mut true_buf = vec![0.0_f64; children.len()];
    for h in 0..horizon {
        for (i, c) in children.iter().enumerate() {
            true_buf[i] = c.true_kwh[h];
        }
        let reported: Vec<f64> = children.iter().map(|c| c.reported[h]).collect();
        let parent = synthesize_parent_reading(&true_buf, group.tl_actual);
        let d = wd.hourly_update(&HourlyReading {
            parent_kwh: parent,
            child_kwh: reported,
        })?;
        if mode == RunMode::WithWatchdog {
            result.ledger.record_watchdog_op();
        }

        let mut evaluated = false;
        let mut batch_size = 0usize;
        if wd.is_eval_instant(h as u64) {
            if h + 1 < window_len {
                // warm-up instant: restart the cycle, count nothing
                wd.reset_flag();
            } else {
                let fired = wd.flag();
                let theft_day = children
                    .iter()
                    .any(|c| c.tampered_in(h.saturating_sub(23)..=h));
                interval_days.push((fired, theft_day));

                let detections = match mode {
                    RunMode::WithWatchdog => {
                        let histories: Vec<(&str, &[f64])> = children
                            .iter()
                            .map(|c| (c.meter_id.as_str(), &c.reported[..=h]))
                            .collect();
                        match wd.evaluate_cycle(h as u64, &histories)? {
                            Some(windows) => {
                                evaluated = true;
                                batch_size = windows.len();
                                result.ledger.record_invocation(windows.len(), model, window_len);
                                Some(predict_batch(model, &windows)?)
                            }
                            None => None,
                        }
                    }
                    RunMode::WithoutWatchdog => {
                        // shadow watchdog: same reset cadence, no gating
                        wd.reset_flag();
                        let windows: Vec<Window> = children
                            .iter()
                            .map(|c| {
                                Window::new(
                                    c.meter_id.clone(),
                                    h as u64,
                                    c.reported[h + 1 - window_len..=h].to_vec(),
                                )
                            })
                            .collect::<Result<_>>()?;
                        evaluated = true;
                        batch_size = windows.len();
                        result.ledger.record_invocation(windows.len(), model, window_len);
                        Some(predict_batch(model, &windows)?)
                    }
                };

                for (i, c) in children.iter().enumerate() {
                    let actual = c.tampered_in(h + 1 - window_len..=h);
                    let predicted = detections
                        .as_ref()
                        .map(|d| d[i].outcome)
                        .unwrap_or(false);
                    result.outcomes.push(WindowOutcome {
                        meter_id: c.meter_id.clone(),
                        day: day_index,
                        evaluated: detections.is_some(),
                        predicted,
                        actual,
                    });
                }
                day_index += 1;
            }
        }

        if hcfg.collect_events && mode == RunMode::WithWatchdog {
            result.events.push(WatchdogEvent {
                parent_id: group.parent_id.clone(),
                hour_index: h as u64,
                d_percent: d,
                flag_after: wd.flag(),
                evaluated,
                batch_size,
            });
        }
    }

    result.interval = watchdog_interval_metrics(&interval_days);
    Ok(result)
}

/// Run one mode over a materialized scenario.
pub fn run_simulation(
    instance: &ScenarioInstance,
    model: &LstmModel,
    mode: RunMode,
    hcfg: &HarnessConfig,
) -> Result<RunOutput> {
    hcfg.watchdog.validate()?;
    if instance.groups.is_empty() {
        return Err(Error::Usage("scenario instance has no groups".into()));
    }
    let min_horizon = hcfg.watchdog.window_len + 24;
    if instance.horizon < min_horizon {
        return Err(Error::Usage(format!(
            "scenario horizon {} is shorter than window_len + 24 = {min_horizon}",
            instance.horizon
        )));
    }

    // groups are independent; ordered collect keeps the merge deterministic
    let run_groups = || {
        (0..instance.groups.len())
            .into_par_iter()
            .map(|gi| simulate_group(gi, instance, model, mode, hcfg))
            .collect::<Result<Vec<_>>>()
    };
    let mut warnings = Vec::new();
    let mut power = None;
    let results: Vec<GroupResult> = match &hcfg.sampler {
        None => run_groups()?,
        Some(spec) => {
            let raw_dir = hcfg
                .sampler_raw_dir
                .clone()
                .unwrap_or_else(std::env::temp_dir);
            let (results, outcome) = sample_around(spec, &raw_dir, run_groups);
            match outcome {
                SamplerOutcome::Trace(trace) => power = Some(trace),
                SamplerOutcome::Unavailable(w) => warnings.push(w),
                SamplerOutcome::ParseFailed { message, .. } => warnings.push(message),
            }
            results?
        }
    };

    let mut outcomes = Vec::new();
    let mut interval = IntervalConfusion::default();
    let mut ledger = CostLedger::default();
    let mut events = Vec::new();
    let mut evaluated_days = 0u64;
    for r in results {
        evaluated_days += r.interval.total();
        interval.merge(&r.interval);
        ledger.merge(&r.ledger);
        outcomes.extend(r.outcomes);
        events.extend(r.events);
    }
    if let Some(trace) = power {
        ledger.wall_seconds = Some(trace.wall_seconds);
        ledger.avg_watts = Some(trace.avg_watts);
    }

    let accuracy = compute_metrics(&outcomes);
    Ok(RunOutput {
        report: SimulationReport {
            scenario: instance.spec.label.clone(),
            base_seed: 0, // filled by the paired runner
            mode,
            accuracy,
            interval,
            cost: ledger,
            filtered_percent: None,
            evaluated_days: evaluated_days / instance.groups.len().max(1) as u64,
            n_groups: instance.groups.len() as u64,
        },
        events,
        warnings,
    })
}

/// Both arms of one paired run, on one scenario instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRecord {
    pub scenario: String,
    pub base_seed: u64,
    pub without: SimulationReport,
    pub with_watchdog: SimulationReport,
    /// `(positives_without - positives_with) / positives_without`; absent
    /// when the baseline produced no positives.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filtered_percent: Option<f64>,
    /// MAC reduction `1 - with/without`.
    pub macs_reduction: f64,
}

/// A paired record plus the with-mode event log.
#[derive(Debug, Clone)]
pub struct PairedOutput {
    pub record: PairedRecord,
    pub events: Vec<WatchdogEvent>,
    pub warnings: Vec<String>,
}

/// Build the scenario once and run both modes on it.
pub fn run_paired(
    dataset: &SimDataset,
    spec: &ScenarioSpec,
    base_seed: u64,
    model: &LstmModel,
    hcfg: &HarnessConfig,
) -> Result<PairedOutput> {
    let instance = crate::theft::build_scenario(&dataset.groups, &dataset.eval, spec)?;
    let without = run_simulation(&instance, model, RunMode::WithoutWatchdog, hcfg)?;
    let with = run_simulation(&instance, model, RunMode::WithWatchdog, hcfg)?;

    let mut without_report = without.report;
    let mut with_report = with.report;
    without_report.base_seed = base_seed;
    with_report.base_seed = base_seed;

    let filtered_percent = if without_report.accuracy.positives > 0 {
        Some(
            (without_report.accuracy.positives - with_report.accuracy.positives) as f64
                / without_report.accuracy.positives as f64,
        )
    } else {
        None
    };
    with_report.filtered_percent = filtered_percent;
    let macs_reduction = reduction_fraction(&with_report.cost, &without_report.cost)?;

    let mut warnings = without.warnings;
    warnings.extend(with.warnings);
    Ok(PairedOutput {
        record: PairedRecord {
            scenario: spec.label.clone(),
            base_seed,
            without: without_report,
            with_watchdog: with_report,
            filtered_percent,
            macs_reduction,
        },
        events: with.events,
        warnings,
    })
}

/// Run the configured scenario codes across all base seeds.
pub fn run_matrix(
    cfg: &crate::config::SimConfig,
    dataset: &SimDataset,
    model: &LstmModel,
    collect_events: bool,
) -> Result<Vec<PairedOutput>> {
    let hcfg = HarnessConfig {
        watchdog: cfg.watchdog.clone(),
        collect_events,
        ..Default::default()
    };
    let mut outputs = Vec::new();
    for code in &cfg.scenarios {
        for &seed in &cfg.seeds {
            let spec = ScenarioSpec::from_code(code, seed)?;
            outputs.push(run_paired(dataset, &spec, seed, model, &hcfg)?);
        }
    }
    Ok(outputs)
}
