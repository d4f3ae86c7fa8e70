//! The per-group detection unit.
//!
//! Every hour the unit compares the parent meter's inflow against the
//! loss-corrected sum of child readings:
//!
//! ```text
//! d = ((p[h] - sum_i(c_i[h]) * (1 + tl)) / p[h]) * 100
//! ```
//!
//! When `d >= threshold` a flag latches. At the daily evaluation hour the
//! unit checks the flag; if set, it collects the most recent `window_len`
//! reported values per child for the prediction unit and resets the flag.
//! Underreporting pushes `d` positive; overreporting makes it negative and
//! never triggers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::Window;
use crate::meter_data::ParentGroup;

/// Detection-unit settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WatchdogConfig {
    /// Discrepancy percentage that latches the flag.
    pub threshold_percent: f64,
    /// Hour of day (0..24) at which the flag is checked.
    pub eval_hour: u32,
    /// Window length handed to the prediction unit.
    pub window_len: usize,
    /// Decision threshold passed through to the prediction unit.
    pub decision_threshold: f64,
}

impl Default for WatchdogConfig {
    fn default() -> Self {
        WatchdogConfig {
            threshold_percent: 2.0,
            eval_hour: 1,
            window_len: 72,
            decision_threshold: 0.5,
        }
    }
}

impl WatchdogConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threshold_percent < 0.0 || !self.threshold_percent.is_finite() {
            return Err(Error::Usage(format!(
                "watchdog threshold must be a finite percentage >= 0, got {}",
                self.threshold_percent
            )));
        }
        if self.eval_hour >= 24 {
            return Err(Error::Usage(format!(
                "eval_hour must be in 0..24, got {}",
                self.eval_hour
            )));
        }
        if self.window_len == 0 {
            return Err(Error::Usage("window_len must be at least 1".into()));
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return Err(Error::Usage(format!(
                "decision_threshold must be in (0, 1), got {}",
                self.decision_threshold
            )));
        }
        Ok(())
    }
}

/// One hour of readings for a group.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlyReading {
    /// Parent meter inflow for the hour (kWh).
    pub parent_kwh: f64,
    /// Per-child reported kWh, in group child order.
    pub child_kwh: Vec<f64>,
}

/// Live watchdog state for one parent group.
#[derive(Debug, Clone)]
pub struct WatchdogState {
    pub parent_id: String,
    n_children: usize,
    tl_assumed: f64,
    config: WatchdogConfig,
    flag: bool,
    hours_seen: u64,
}

/// Hourly discrepancy in percent.
///
/// The `p = 0` division is defined rather than erroneous: zero inflow with
/// nonzero reported consumption is itself anomalous and returns `+inf`
/// (always above any threshold); zero inflow with zero consumption returns 0.
pub fn compute_discrepancy(parent_kwh: f64, child_sum: f64, tl: f64) -> f64 {
    if parent_kwh == 0.0 {
        return if child_sum > 0.0 { f64::INFINITY } else { 0.0 };
    }
    ((parent_kwh - child_sum * (1.0 + tl)) / parent_kwh) * 100.0
}

/// Simulation-side construction of the parent reading: total true consumption
/// inflated by the segment's actual technical loss.
pub fn synthesize_parent_reading(children_true: &[f64], tl_actual: f64) -> f64 {
    children_true.iter().sum::<f64>() * (1.0 + tl_actual)
}

impl WatchdogState {
    pub fn new(group: &ParentGroup, config: WatchdogConfig) -> Result<Self> {
        config.validate()?;
        Ok(WatchdogState {
            parent_id: group.parent_id.clone(),
            n_children: group.child_ids.len(),
            tl_assumed: group.tl_assumed,
            config,
            flag: false,
            hours_seen: 0,
        })
    }

    pub fn flag(&self) -> bool {
        self.flag
    }

    pub fn config(&self) -> &WatchdogConfig {
        &self.config
    }

    pub fn hours_seen(&self) -> u64 {
        self.hours_seen
    }

    /// Clear the flag without producing a batch. The harness uses this at
    /// evaluation instants during warm-up, before a full window of history
    /// exists, so the latch-and-reset cycle stays aligned to evaluation days.
    pub fn reset_flag(&mut self) {
        self.flag = false;
    }

    /// Feed one hour of readings. Latches the flag when the discrepancy
    /// reaches the threshold; never clears it. Returns the discrepancy.
    pub fn hourly_update(&mut self, reading: &HourlyReading) -> Result<f64> {
        if reading.child_kwh.len() != self.n_children {
            return Err(Error::Usage(format!(
                "group {}: reading has {} children, group has {}",
                self.parent_id,
                reading.child_kwh.len(),
                self.n_children
            )));
        }
        if reading.parent_kwh < 0.0 || reading.child_kwh.iter().any(|&c| c < 0.0) {
            return Err(Error::Data(format!(
                "group {}: negative reading at hour {}",
                self.parent_id, self.hours_seen
            )));
        }
        let child_sum: f64 = reading.child_kwh.iter().sum();
        let d = compute_discrepancy(reading.parent_kwh, child_sum, self.tl_assumed);
        if d >= self.config.threshold_percent {
            self.flag = true;
        }
        self.hours_seen += 1;
        Ok(d)
    }

    /// True when `now` is an evaluation instant (hour of day matches the
    /// configured evaluation hour).
    pub fn is_eval_instant(&self, now: u64) -> bool {
        now % 24 == self.config.eval_hour as u64
    }

    /// The daily check. At an evaluation instant with the flag set, returns
    /// one window per child — the most recent `window_len` reported values —
    /// and resets the flag. Otherwise returns `None` and leaves the flag
    /// as-is.
    ///
    /// `histories` holds, per child in group order, the reported series
    /// covering hours `0..=now`.
    pub fn evaluate_cycle(
        &mut self,
        now: u64,
        histories: &[(&str, &[f64])],
    ) -> Result<Option<Vec<Window>>> {
        if !self.is_eval_instant(now) || !self.flag {
            return Ok(None);
        }
        if histories.len() != self.n_children {
            return Err(Error::Usage(format!(
                "group {}: {} histories for {} children",
                self.parent_id,
                histories.len(),
                self.n_children
            )));
        }
        let w = self.config.window_len;
        let mut windows = Vec::with_capacity(histories.len());
        for (meter_id, series) in histories {
            if series.len() < w {
                return Err(Error::Data(format!(
                    "group {}: meter {meter_id} has {} hours of history, need {w} at evaluation hour {now}",
                    self.parent_id,
                    series.len()
                )));
            }
            windows.push(Window::new(
                (*meter_id).to_string(),
                now,
                series[series.len() - w..].to_vec(),
            )?);
        }
        self.flag = false;
        Ok(Some(windows))
    }
}

/// One row of the watchdog event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatchdogEvent {
    pub parent_id: String,
    pub hour_index: u64,
    pub d_percent: f64,
    pub flag_after: bool,
    pub evaluated: bool,
    pub batch_size: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meter_data::DEFAULT_TECHNICAL_LOSS;
    use proptest::prelude::*;

    fn group(n: usize) -> ParentGroup {
        ParentGroup {
            parent_id: "94107-0".into(),
            zip: "94107".into(),
            child_ids: (0..n).map(|i| format!("m{i:03}")).collect(),
            tl_assumed: DEFAULT_TECHNICAL_LOSS,
            tl_actual: DEFAULT_TECHNICAL_LOSS,
        }
    }

    #[test]
    fn discrepancy_balanced_is_zero() {
        let d = compute_discrepancy(105.0, 100.0, 0.05);
        assert!(d.abs() < 1e-12, "d = {d}");
    }

    #[test]
    fn discrepancy_underreporting() {
        let d = compute_discrepancy(110.0, 100.0, 0.05);
        // direct arithmetic: (110 - 105) / 110 * 100
        let expected = (110.0 - 100.0 * 1.05) / 110.0 * 100.0;
        assert!((d - expected).abs() < 1e-12);
        assert!((d - 4.545454545454546).abs() < 1e-9);
    }

    #[test]
    fn discrepancy_degenerate_parent() {
        assert_eq!(compute_discrepancy(0.0, 0.0, 0.03), 0.0);
        assert_eq!(compute_discrepancy(0.0, 1.0, 0.03), f64::INFINITY);
    }

    #[test]
    fn flag_set_at_threshold_and_above() {
        let mut state = WatchdogState::new(&group(2), WatchdogConfig::default()).unwrap();
        // d = 4.5454..% >= 2%
        let d = state
            .hourly_update(&HourlyReading {
                parent_kwh: 110.0,
                child_kwh: vec![60.0, 40.0],
            })
            .unwrap();
        assert!(d > 2.0);
        assert!(state.flag());

        // exact equality latches too (>=, not >): tl = 0, p = 100, sum = 96 -> d = 4
        let g = ParentGroup {
            tl_assumed: 0.0,
            ..group(2)
        };
        let cfg = WatchdogConfig {
            threshold_percent: 4.0,
            ..WatchdogConfig::default()
        };
        let mut state = WatchdogState::new(&g, cfg).unwrap();
        let d = state
            .hourly_update(&HourlyReading {
                parent_kwh: 100.0,
                child_kwh: vec![48.0, 48.0],
            })
            .unwrap();
        assert_eq!(d, 4.0);
        assert!(state.flag());
    }

    #[test]
    fn flag_latches_until_evaluation() {
        let mut state = WatchdogState::new(&group(1), WatchdogConfig::default()).unwrap();
        state
            .hourly_update(&HourlyReading {
                parent_kwh: 110.0,
                child_kwh: vec![100.0],
            })
            .unwrap();
        assert!(state.flag());
        // balanced hour afterwards: latch holds
        state
            .hourly_update(&HourlyReading {
                parent_kwh: 103.0,
                child_kwh: vec![100.0],
            })
            .unwrap();
        assert!(state.flag());
    }

    #[test]
    fn overreporting_never_triggers() {
        let mut state = WatchdogState::new(&group(1), WatchdogConfig::default()).unwrap();
        let d = state
            .hourly_update(&HourlyReading {
                parent_kwh: 90.0,
                child_kwh: vec![100.0],
            })
            .unwrap();
        assert!(d < 0.0);
        assert!(!state.flag());
    }

    #[test]
    fn mismatched_reading_is_usage_error() {
        let mut state = WatchdogState::new(&group(3), WatchdogConfig::default()).unwrap();
        let err = state
            .hourly_update(&HourlyReading {
                parent_kwh: 1.0,
                child_kwh: vec![1.0],
            })
            .unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    fn histories(n_children: usize, hours: usize) -> Vec<(String, Vec<f64>)> {
        (0..n_children)
            .map(|i| {
                (
                    format!("m{i:03}"),
                    (0..hours).map(|t| 0.5 + 0.001 * (i + t) as f64).collect(),
                )
            })
            .collect()
    }

    fn as_refs(h: &[(String, Vec<f64>)]) -> Vec<(&str, &[f64])> {
        h.iter().map(|(id, v)| (id.as_str(), v.as_slice())).collect()
    }

    #[test]
    fn evaluation_requires_flag_and_hour() {
        let mut state = WatchdogState::new(&group(4), WatchdogConfig::default()).unwrap();
        let h = histories(4, 100);

        // no flag at the evaluation hour: nothing happens
        assert!(state.evaluate_cycle(97, &as_refs(&h)).unwrap().is_none());
        assert!(!state.flag());

        // flag at a non-evaluation hour: latch persists
        state
            .hourly_update(&HourlyReading {
                parent_kwh: 110.0,
                child_kwh: vec![25.0; 4],
            })
            .unwrap();
        assert!(state.evaluate_cycle(96, &as_refs(&h)).unwrap().is_none());
        assert!(state.flag());

        // flag at the evaluation hour (97 % 24 == 1): batch fires, flag resets
        let batch = state.evaluate_cycle(97, &as_refs(&h)).unwrap().unwrap();
        assert_eq!(batch.len(), 4);
        for w in &batch {
            assert_eq!(w.values.len(), 72);
            assert_eq!(w.end_hour, 97);
        }
        // windows carry the most recent 72 values
        assert_eq!(batch[0].values[71], h[0].1[99]);
        assert_eq!(batch[0].values[0], h[0].1[28]);
        assert!(!state.flag());
    }

    #[test]
    fn evaluation_with_short_history_is_data_error() {
        let mut state = WatchdogState::new(&group(2), WatchdogConfig::default()).unwrap();
        state
            .hourly_update(&HourlyReading {
                parent_kwh: 110.0,
                child_kwh: vec![50.0, 50.0],
            })
            .unwrap();
        let h = histories(2, 40);
        let err = state.evaluate_cycle(49, &as_refs(&h)).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn synthesize_parent_reading_examples() {
        assert_eq!(synthesize_parent_reading(&[1.0, 2.0, 3.0], 0.0), 6.0);
        let p = synthesize_parent_reading(&[1.0, 2.0, 3.0], 0.05);
        assert!((p - 6.3).abs() < 1e-12);
        assert_eq!(synthesize_parent_reading(&[], 0.05), 0.0);
    }

    proptest! {
        /// Exact-loss soundness: when the assumed loss equals the actual loss
        /// and children report truthfully, d is exactly zero and the flag
        /// never latches.
        #[test]
        fn soundness_under_exact_loss(
            n in 1usize..30,
            tl in 0.0f64..0.2,
            hours in 1usize..72,
            seed in 0u64..500,
        ) {
            let g = ParentGroup { tl_assumed: tl, tl_actual: tl, ..group(n) };
            let mut state = WatchdogState::new(&g, WatchdogConfig::default()).unwrap();
            let mut rng = crate::seeds::rng_for(seed, "wd-sound", "x");
            for _ in 0..hours {
                use rand::Rng;
                let children: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
                let p = synthesize_parent_reading(&children, tl);
                let d = state.hourly_update(&HourlyReading { parent_kwh: p, child_kwh: children }).unwrap();
                prop_assert_eq!(d, 0.0);
            }
            prop_assert!(!state.flag());
        }

        /// Sensitivity: underreporting that exceeds threshold% of the parent
        /// reading latches the flag within the hour.
        #[test]
        fn sensitivity_to_breaching_underreport(
            n in 1usize..30,
            tl in 0.0f64..0.2,
            seed in 0u64..500,
        ) {
            use rand::Rng;
            let g = ParentGroup { tl_assumed: tl, tl_actual: tl, ..group(n) };
            let mut state = WatchdogState::new(&g, WatchdogConfig::default()).unwrap();
            let mut rng = crate::seeds::rng_for(seed, "wd-sens", "x");
            let children: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..5.0)).collect();
            let p = synthesize_parent_reading(&children, tl);
            // underreport child 0 by just over threshold% of p (in corrected terms)
            let steal = (state.config().threshold_percent / 100.0) * p / (1.0 + tl) * 1.01;
            let mut reported = children.clone();
            reported[0] = (reported[0] - steal).max(0.0);
            // only meaningful when the child had that much to hide
            prop_assume!(children[0] >= steal);
            state.hourly_update(&HourlyReading { parent_kwh: p, child_kwh: reported }).unwrap();
            prop_assert!(state.flag());
        }
    }
}
