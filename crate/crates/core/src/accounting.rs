//! Deterministic compute-cost accounting.
//!
//! The primary cost unit is the multiply-accumulate (MAC) count of the
//! prediction unit: hardware-independent, reproducible, and monotone in the
//! quantity the watchdog controls (windows processed). The watchdog's own
//! per-hour arithmetic is counted separately so its "lightweight" claim is
//! itself auditable. Wall-clock power measurement is an optional adapter
//! around an external sampler such as `powerstat`.

use std::io::Read;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::LstmModel;

/// Counters for one simulation run. All counts only grow during a run;
/// `macs` always equals `windows * macs_per_window` for the run's model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    /// Prediction-unit activations (one per evaluated group-day).
    pub invocations: u64,
    /// Windows pushed through the model.
    pub windows: u64,
    /// Total multiply-accumulates in the prediction unit.
    pub macs: u64,
    /// Watchdog hourly checks (one subtract/divide per group-hour).
    pub watchdog_ops: u64,
    /// Measured duration, present only when an external sampler ran.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
    /// Average watts from the external sampler, when available.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub avg_watts: Option<f64>,
}

/// Analytic MAC cost of one window: per timestep, the four gates consume
/// `h * (h + i)` multiplies plus `h` for the elementwise cell update, and the
/// dense head another `h + 1`, with `i = 1` input feature.
pub fn macs_per_window(model: &LstmModel, window_len: usize) -> u64 {
    let h = model.hidden_size() as u64;
    let input = 1u64;
    let per_step_gates = 4 * (h * (h + input) + h);
    let per_step_dense = h + 1;
    window_len as u64 * (per_step_gates + per_step_dense)
}

impl CostLedger {
    /// Record one prediction-unit activation over `n_windows` windows.
    pub fn record_invocation(&mut self, n_windows: usize, model: &LstmModel, window_len: usize) {
        self.invocations += 1;
        self.windows += n_windows as u64;
        self.macs += n_windows as u64 * macs_per_window(model, window_len);
    }

    /// Record one watchdog hourly check.
    pub fn record_watchdog_op(&mut self) {
        self.watchdog_ops += 1;
    }

    /// Combine two ledgers; concatenating runs equals running them as one.
    pub fn merge(&mut self, other: &CostLedger) {
        self.invocations += other.invocations;
        self.windows += other.windows;
        self.macs += other.macs;
        self.watchdog_ops += other.watchdog_ops;
        self.wall_seconds = match (self.wall_seconds, other.wall_seconds) {
            (None, None) => None,
            (a, b) => Some(a.unwrap_or(0.0) + b.unwrap_or(0.0)),
        };
        // averaging watts across runs needs durations; keep the first reading
        self.avg_watts = self.avg_watts.or(other.avg_watts);
    }
}

/// Fraction of baseline compute eliminated: `1 - with/without` in MACs.
pub fn reduction_fraction(with: &CostLedger, without: &CostLedger) -> Result<f64> {
    if without.macs == 0 {
        return Err(Error::Usage(
            "reduction_fraction needs a non-zero baseline MAC count".into(),
        ));
    }
    Ok(1.0 - with.macs as f64 / without.macs as f64)
}

/// External sampler invocation: program plus arguments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub program: String,
    pub args: Vec<String>,
}

impl SamplerSpec {
    /// Parse a command line on whitespace: `"powerstat -d 0 1 300"`.
    pub fn parse(command: &str) -> Result<Self> {
        let mut parts = command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::Usage("empty power-sampler command".into()))?
            .to_string();
        Ok(SamplerSpec {
            program,
            args: parts.map(String::from).collect(),
        })
    }
}

/// Parsed sampler output.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTrace {
    pub avg_watts: f64,
    pub wall_seconds: f64,
}

/// What happened to the sampler around a run.
#[derive(Debug)]
pub enum SamplerOutcome {
    Trace(PowerTrace),
    /// Sampler could not start; carries a warning for the log.
    Unavailable(String),
    /// Sampler ran but its output was not understood; raw output saved.
    ParseFailed { message: String, raw_path: PathBuf },
}

/// Run `work` with the sampler recording around it.
///
/// The sampler process is spawned first, the workload runs to completion, the
/// sampler is stopped, and its stdout is scanned for the last line containing
/// `Average` whose final numeric token is taken as watts. A missing sampler
/// degrades to a warning; the workload always runs.
pub fn sample_around<T>(
    spec: &SamplerSpec,
    raw_dir: &std::path::Path,
    work: impl FnOnce() -> T,
) -> (T, SamplerOutcome) {
    let child = Command::new(&spec.program)
        .args(&spec.args)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn();

    let mut child = match child {
        Ok(c) => c,
        Err(e) => {
            let warning = format!(
                "power sampler {:?} unavailable ({e}); reporting MAC ledger only",
                spec.program
            );
            let started = Instant::now();
            let result = work();
            let _ = started.elapsed();
            return (result, SamplerOutcome::Unavailable(warning));
        }
    };

    let started = Instant::now();
    let result = work();
    let wall_seconds = started.elapsed().as_secs_f64();

    let _ = child.kill();
    let mut raw = String::new();
    if let Some(mut stdout) = child.stdout.take() {
        let _ = stdout.read_to_string(&mut raw);
    }
    let _ = child.wait();

    match parse_average_watts(&raw) {
        Some(avg_watts) => (
            result,
            SamplerOutcome::Trace(PowerTrace {
                avg_watts,
                wall_seconds,
            }),
        ),
        None => {
            let raw_path = raw_dir.join("power_sampler_raw.txt");
            let message = match std::fs::write(&raw_path, &raw) {
                Ok(()) => format!(
                    "could not find an Average watts line in sampler output; raw output at {}",
                    raw_path.display()
                ),
                Err(e) => format!(
                    "could not find an Average watts line in sampler output (and failed to save raw output: {e})"
                ),
            };
            (result, SamplerOutcome::ParseFailed { message, raw_path })
        }
    }
}

/// Last numeric token of the last line mentioning `Average`.
fn parse_average_watts(output: &str) -> Option<f64> {
    output
        .lines()
        .filter(|l| l.contains("Average"))
        .filter_map(|l| {
            l.split_whitespace()
                .rev()
                .find_map(|tok| tok.trim_end_matches("W").parse::<f64>().ok())
        })
        .last()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::LstmModel;

    fn model(hidden: usize) -> LstmModel {
        LstmModel::zeroed(hidden, 72, 0.5).unwrap()
    }

    #[test]
    fn macs_formula_matches_hand_arithmetic() {
        let m = model(64);
        assert_eq!(macs_per_window(&m, 72), 72 * 16_896 + 72 * 65);
        assert_eq!(macs_per_window(&m, 72), 1_221_192);
        assert_eq!(macs_per_window(&m, 1), 16_961);
        assert_eq!(macs_per_window(&model(1), 1), 14);
    }

    #[test]
    fn record_invocation_counts() {
        let m = model(64);
        let mut ledger = CostLedger::default();
        ledger.record_invocation(0, &m, 72);
        assert_eq!(ledger.invocations, 1);
        assert_eq!(ledger.windows, 0);
        assert_eq!(ledger.macs, 0);

        let mut ledger = CostLedger::default();
        ledger.record_invocation(4, &m, 72);
        ledger.record_invocation(4, &m, 72);
        assert_eq!(ledger.windows, 8);
        assert_eq!(ledger.macs, 8 * macs_per_window(&m, 72));

        // linearity across k invocations
        let mut k_ledger = CostLedger::default();
        for _ in 0..5 {
            k_ledger.record_invocation(4, &m, 72);
        }
        assert_eq!(k_ledger.macs, 5 * 4 * macs_per_window(&m, 72));
    }

    #[test]
    fn merge_is_concatenation() {
        let m = model(8);
        let mut a = CostLedger::default();
        a.record_invocation(3, &m, 10);
        a.record_watchdog_op();
        let mut b = CostLedger::default();
        b.record_invocation(5, &m, 10);

        let mut joint = CostLedger::default();
        joint.record_invocation(3, &m, 10);
        joint.record_watchdog_op();
        joint.record_invocation(5, &m, 10);

        let mut merged = a.clone();
        merged.merge(&b);
        assert_eq!(merged, joint);
    }

    #[test]
    fn reduction_fraction_cases() {
        let mut without = CostLedger::default();
        without.macs = 100;
        let equal = without.clone();
        assert_eq!(reduction_fraction(&equal, &without).unwrap(), 0.0);

        let zero = CostLedger::default();
        assert_eq!(reduction_fraction(&zero, &without).unwrap(), 1.0);
        assert!(matches!(
            reduction_fraction(&zero, &zero).unwrap_err(),
            Error::Usage(_)
        ));

        // analog of the reported 20.98 -> 7.50 drop
        let mut with = CostLedger::default();
        with.macs = 750;
        let mut base = CostLedger::default();
        base.macs = 2098;
        let r = reduction_fraction(&with, &base).unwrap();
        assert!((r - 0.6425).abs() < 1e-4, "r = {r}");
    }

    #[test]
    fn sampler_missing_degrades_to_warning() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SamplerSpec::parse("definitely-not-a-real-binary-4721 -x").unwrap();
        let (value, outcome) = sample_around(&spec, dir.path(), || 42);
        assert_eq!(value, 42);
        assert!(matches!(outcome, SamplerOutcome::Unavailable(_)));
    }

    #[test]
    fn stub_sampler_average_is_parsed() {
        let dir = tempfile::tempdir().unwrap();
        // stub emits a powerstat-like summary immediately, then lingers
        let script = dir.path().join("stub.sh");
        std::fs::write(
            &script,
            "#!/bin/sh\necho 'Running for 60 seconds'\necho '  Average   1.2   0.0   4.52 Watts'\nsleep 30\n",
        )
        .unwrap();
        let spec = SamplerSpec {
            program: "sh".into(),
            args: vec![script.to_string_lossy().into_owned()],
        };
        let (_, outcome) = sample_around(&spec, dir.path(), || {
            std::thread::sleep(std::time::Duration::from_millis(300));
        });
        match outcome {
            SamplerOutcome::Trace(trace) => {
                assert!((trace.avg_watts - 4.52).abs() < 1e-9);
                // wall clock tracks the workload, not the sampler
                assert!(trace.wall_seconds >= 0.27 && trace.wall_seconds < 0.33 * 1.1,
                    "wall {}", trace.wall_seconds);
            }
            other => panic!("expected trace, got {other:?}"),
        }
    }

    #[test]
    fn unparseable_sampler_output_saves_raw() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SamplerSpec {
            program: "sh".into(),
            args: vec!["-c".into(), "echo no numbers here; sleep 10".into()],
        };
        let (_, outcome) = sample_around(&spec, dir.path(), || ());
        match outcome {
            SamplerOutcome::ParseFailed { raw_path, .. } => {
                assert!(raw_path.exists());
            }
            other => panic!("expected parse failure, got {other:?}"),
        }
    }

    #[test]
    fn parse_average_watts_variants() {
        assert_eq!(
            parse_average_watts(" Average  2.1  0.3  12.5 Watts\n"),
            Some(12.5)
        );
        assert_eq!(parse_average_watts("Average 3.25W\n"), Some(3.25));
        assert_eq!(parse_average_watts("nothing\n"), None);
    }
}
