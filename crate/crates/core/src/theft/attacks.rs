//! The six tampering strategies, behind a common trait.
//!
//! Each strategy rewrites a single reading given the true series and the
//! thief's per-assignment constants. Every strategy keeps the contract:
//! output in `[0, max(x_t, historical mean)]`, so a tampered reading never
//! exceeds what the meter could plausibly report.
//!
//! Strategies register in [`REGISTRY`] and are selected by numeric id (as
//! stored in scenario manifests) or by name (CLI/config).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

/// Identifier of one of the six built-in attacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttackType(u8);

impl AttackType {
    pub const COUNT: u8 = 6;

    pub fn new(id: u8) -> Result<Self> {
        if (1..=Self::COUNT).contains(&id) {
            Ok(AttackType(id))
        } else {
            Err(Error::Usage(format!(
                "attack id must be 1..={}, got {id}",
                Self::COUNT
            )))
        }
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn strategy(self) -> &'static dyn AttackStrategy {
        REGISTRY[(self.0 - 1) as usize]
    }
}

/// Per-thief state shared by all strategies for one assignment.
#[derive(Debug, Clone)]
pub struct AttackContext {
    /// Per-thief scaling constant, drawn once in `[0.1, 0.8]`.
    pub alpha: f64,
    /// Per-thief replacement constant, drawn once in `[0.1, 0.8]`.
    pub beta: f64,
    /// Mean of the thief's true series.
    pub hist_mean: f64,
    /// Assignment seed; strategies needing fresh per-step draws derive them
    /// from this by timestep index.
    pub seed: u64,
}

impl AttackContext {
    /// Build the context for an assignment: `alpha` and `beta` are drawn once
    /// per `(seed)`, the mean from the true series.
    pub fn for_assignment(seed: u64, true_series: &[f64]) -> Self {
        let alpha = 0.1 + 0.7 * seeds::unit_draw(seed, "attack-alpha", "");
        let beta = 0.1 + 0.7 * seeds::unit_draw(seed, "attack-beta", "");
        let hist_mean = if true_series.is_empty() {
            0.0
        } else {
            true_series.iter().sum::<f64>() / true_series.len() as f64
        };
        AttackContext {
            alpha,
            beta,
            hist_mean,
            seed,
        }
    }
}

/// One tampering algorithm.
pub trait AttackStrategy: Send + Sync {
    /// Stable numeric id, 1-based.
    fn id(&self) -> u8;
    /// Stable name used in configs and manifests.
    fn name(&self) -> &'static str;
    /// Rewrite reading `t`. `true_series[t]` is the actual consumption.
    fn tamper(&self, t: usize, true_series: &[f64], ctx: &AttackContext) -> f64;
}

/// 1: constant scaling, `alpha * x_t` with the thief's fixed alpha.
struct ConstantScale;
impl AttackStrategy for ConstantScale {
    fn id(&self) -> u8 {
        1
    }
    fn name(&self) -> &'static str {
        "constant-scale"
    }
    fn tamper(&self, t: usize, true_series: &[f64], ctx: &AttackContext) -> f64 {
        ctx.alpha * true_series[t]
    }
}

/// 2: per-step scaling, a fresh `alpha_t` in `[0.1, 0.8]` for every tampered
/// step.
struct PerStepScale;
impl AttackStrategy for PerStepScale {
    fn id(&self) -> u8 {
        2
    }
    fn name(&self) -> &'static str {
        "per-step-scale"
    }
    fn tamper(&self, t: usize, true_series: &[f64], ctx: &AttackContext) -> f64 {
        let alpha_t = 0.1 + 0.7 * seeds::unit_draw_idx(ctx.seed, "attack-step-scale", t as u64);
        alpha_t * true_series[t]
    }
}

/// 3: zeroing — the meter reports nothing.
struct Zeroing;
impl AttackStrategy for Zeroing {
    fn id(&self) -> u8 {
        3
    }
    fn name(&self) -> &'static str {
        "zeroing"
    }
    fn tamper(&self, _t: usize, _true_series: &[f64], _ctx: &AttackContext) -> f64 {
        0.0
    }
}

/// 4: mean-capped cut, `min(x_t, beta * mean)` — consumption above a fixed
/// fraction of the historical mean is hidden.
struct MeanCappedCut;
impl AttackStrategy for MeanCappedCut {
    fn id(&self) -> u8 {
        4
    }
    fn name(&self) -> &'static str {
        "mean-capped-cut"
    }
    fn tamper(&self, t: usize, true_series: &[f64], ctx: &AttackContext) -> f64 {
        true_series[t].min(ctx.beta * ctx.hist_mean)
    }
}

/// 5: mean replacement, `beta * mean` regardless of actual usage.
struct MeanReplace;
impl AttackStrategy for MeanReplace {
    fn id(&self) -> u8 {
        5
    }
    fn name(&self) -> &'static str {
        "mean-replace"
    }
    fn tamper(&self, _t: usize, _true_series: &[f64], ctx: &AttackContext) -> f64 {
        ctx.beta * ctx.hist_mean
    }
}

/// 6: time shift — report the reading from 4 hours earlier (off-peak
/// substitution), capped at `max(x_t, mean)` to keep the reported value
/// within the meter's plausible envelope. Steps with no 4-hour-earlier
/// reading report the current one.
struct TimeShift;

const TIME_SHIFT_HOURS: usize = 4;

impl AttackStrategy for TimeShift {
    fn id(&self) -> u8 {
        6
    }
    fn name(&self) -> &'static str {
        "time-shift"
    }
    fn tamper(&self, t: usize, true_series: &[f64], ctx: &AttackContext) -> f64 {
        let x_t = true_series[t];
        let shifted = if t >= TIME_SHIFT_HOURS {
            true_series[t - TIME_SHIFT_HOURS]
        } else {
            x_t
        };
        shifted.min(x_t.max(ctx.hist_mean))
    }
}

/// All six strategies in id order.
pub static REGISTRY: [&dyn AttackStrategy; AttackType::COUNT as usize] = [
    &ConstantScale,
    &PerStepScale,
    &Zeroing,
    &MeanCappedCut,
    &MeanReplace,
    &TimeShift,
];

/// Look up a strategy by numeric id (1-based).
pub fn by_id(id: u8) -> Result<&'static dyn AttackStrategy> {
    Ok(AttackType::new(id)?.strategy())
}

/// Look up a strategy by name.
pub fn by_name(name: &str) -> Result<&'static dyn AttackStrategy> {
    REGISTRY
        .iter()
        .copied()
        .find(|s| s.name() == name)
        .ok_or_else(|| {
            Error::Usage(format!(
                "unknown attack {name:?}; valid names: {}",
                names().join(", ")
            ))
        })
}

/// Names of all registered strategies, in id order.
pub fn names() -> Vec<&'static str> {
    REGISTRY.iter().map(|s| s.name()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(alpha: f64, beta: f64, series: &[f64], seed: u64) -> AttackContext {
        AttackContext {
            alpha,
            beta,
            hist_mean: series.iter().sum::<f64>() / series.len() as f64,
            seed,
        }
    }

    #[test]
    fn registry_ids_match_positions() {
        for (i, s) in REGISTRY.iter().enumerate() {
            assert_eq!(s.id() as usize, i + 1);
            assert_eq!(by_id(s.id()).unwrap().name(), s.name());
            assert_eq!(by_name(s.name()).unwrap().id(), s.id());
        }
        assert!(by_id(0).is_err());
        assert!(by_id(7).is_err());
        assert!(by_name("bogus").is_err());
    }

    #[test]
    fn zeroing_returns_exactly_zero() {
        let series = [1.5, 2.5, 0.3];
        let c = ctx(0.5, 0.5, &series, 1);
        for t in 0..3 {
            assert_eq!(by_id(3).unwrap().tamper(t, &series, &c), 0.0);
        }
    }

    #[test]
    fn constant_scale_halves() {
        let series = [2.0, 4.0];
        let c = ctx(0.5, 0.9, &series, 1);
        assert_eq!(by_id(1).unwrap().tamper(0, &series, &c), 1.0);
        assert_eq!(by_id(1).unwrap().tamper(1, &series, &c), 2.0);
    }

    #[test]
    fn mean_replace_equals_beta_times_mean() {
        let series = [1.0, 1.4, 1.2]; // mean 1.2
        let c = ctx(0.3, 0.6, &series, 1);
        let got = by_id(5).unwrap().tamper(0, &series, &c);
        // independent recomputation
        let m = (1.0 + 1.4 + 1.2) / 3.0;
        assert!((got - 0.6 * m).abs() < 1e-15);
    }

    #[test]
    fn mean_capped_cut_caps_only_above() {
        let series = [0.2, 3.0];
        let c = ctx(0.3, 0.5, &series, 1); // mean 1.6, cap 0.8
        assert_eq!(by_id(4).unwrap().tamper(0, &series, &c), 0.2);
        assert!((by_id(4).unwrap().tamper(1, &series, &c) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn time_shift_reports_earlier_reading() {
        let series = [0.5, 0.6, 0.7, 0.8, 2.0, 2.1];
        let c = ctx(0.3, 0.5, &series, 1);
        let s = by_id(6).unwrap();
        // t=4 reports the t=0 value
        assert_eq!(s.tamper(4, &series, &c), 0.5);
        // early steps have no source to shift from
        assert_eq!(s.tamper(2, &series, &c), 0.7);
    }

    #[test]
    fn time_shift_respects_envelope() {
        // the 4-hour-earlier reading is larger than both x_t and the mean
        let series = [9.0, 0.1, 0.1, 0.1, 0.2, 0.1];
        let c = AttackContext {
            alpha: 0.3,
            beta: 0.5,
            hist_mean: series.iter().sum::<f64>() / series.len() as f64,
            seed: 1,
        };
        let got = by_id(6).unwrap().tamper(4, &series, &c);
        assert!(got <= series[4].max(c.hist_mean));
    }

    #[test]
    fn per_step_scale_is_deterministic_per_step() {
        let series = [1.0; 10];
        let c = ctx(0.5, 0.5, &series, 99);
        let s = by_id(2).unwrap();
        let a = s.tamper(3, &series, &c);
        assert_eq!(a, s.tamper(3, &series, &c));
        assert_ne!(a, s.tamper(4, &series, &c));
        assert!((0.1..=0.8).contains(&a));
    }

    #[test]
    fn all_attacks_stay_in_envelope() {
        let series: Vec<f64> = (0..200).map(|t| ((t as f64 * 0.37).sin().abs()) * 3.0).collect();
        let c = AttackContext::for_assignment(7, &series);
        for s in REGISTRY {
            for t in 0..series.len() {
                let out = s.tamper(t, &series, &c);
                assert!(out >= 0.0, "attack {} produced negative output", s.name());
                assert!(
                    out <= series[t].max(c.hist_mean) + 1e-12,
                    "attack {} exceeded envelope at t={t}",
                    s.name()
                );
            }
        }
    }

    #[test]
    fn context_constants_in_declared_range() {
        let series = [1.0, 2.0];
        for seed in 0..50 {
            let c = AttackContext::for_assignment(seed, &series);
            assert!((0.1..=0.8).contains(&c.alpha));
            assert!((0.1..=0.8).contains(&c.beta));
        }
    }
}
