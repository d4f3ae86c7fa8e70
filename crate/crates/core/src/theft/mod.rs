//! Synthetic theft injection.
//!
//! Thieves are assigned per group at a scenario's thief rate; each thief gets
//! one attack strategy (drawn uniformly from the registry), a severity — the
//! per-timestep probability that a reading is tampered — and a private seed.
//! Applying an assignment produces the reported series, the true series, and
//! per-timestep ground-truth labels.

pub mod attacks;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meter_data::{MeterSeries, ParentGroup};
use crate::seeds;

pub use attacks::{AttackContext, AttackStrategy, AttackType};

/// One thief: which meter, which attack, how often, and the seed that fixes
/// every random choice of the tampering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheftAssignment {
    pub meter_id: String,
    pub attack: AttackType,
    pub severity: f64,
    pub seed: u64,
}

/// A meter's series after (possible) tampering.
///
/// `reported` is what the meter transmits, `true_kwh` the actual consumption,
/// `tampered[t]` whether the attack rewrote reading `t`. Where `tampered` is
/// false the two series agree exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TamperedSeries {
    pub meter_id: String,
    pub start: DateTime<Utc>,
    pub reported: Vec<f64>,
    pub true_kwh: Vec<f64>,
    pub tampered: Vec<bool>,
}

impl TamperedSeries {
    pub fn len(&self) -> usize {
        self.reported.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reported.is_empty()
    }

    /// True if any reading in `range` is tampered.
    pub fn tampered_in(&self, range: std::ops::RangeInclusive<usize>) -> bool {
        self.tampered[*range.start()..=*range.end()].iter().any(|&b| b)
    }
}

/// One cell of the simulation matrix: severity bounds, thief rate, seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub label: String,
    pub severity_low: f64,
    pub severity_high: f64,
    pub thief_rate: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(
        label: impl Into<String>,
        severity_low: f64,
        severity_high: f64,
        thief_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        let spec = ScenarioSpec {
            label: label.into(),
            severity_low,
            severity_high,
            thief_rate,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.severity_low)
            || !(0.0..=1.0).contains(&self.severity_high)
            || self.severity_low > self.severity_high
        {
            return Err(Error::Usage(format!(
                "scenario {}: severity bounds ({}, {}) must satisfy 0 <= low <= high <= 1",
                self.label, self.severity_low, self.severity_high
            )));
        }
        if !(0.0..=1.0).contains(&self.thief_rate) {
            return Err(Error::Usage(format!(
                "scenario {}: thief rate {} outside [0, 1]",
                self.label, self.thief_rate
            )));
        }
        Ok(())
    }

    /// The two-letter codes of the standard matrix: first letter severity
    /// (h = 0.10–0.95, l = 0.10–0.20), second letter thief rate
    /// (h = 40%, m = 20%, l = 5%).
    pub const MATRIX_CODES: [&'static str; 6] = ["hh", "hm", "hl", "lh", "lm", "ll"];

    /// Instantiate one matrix cell by code. The scenario seed is derived from
    /// `base_seed` and the code.
    pub fn from_code(code: &str, base_seed: u64) -> Result<Self> {
        let (low, high) = match code.as_bytes().first() {
            Some(b'h') => (0.10, 0.95),
            Some(b'l') => (0.10, 0.20),
            _ => {
                return Err(Error::Usage(format!(
                    "unknown scenario code {code:?}; valid codes: {}",
                    Self::MATRIX_CODES.join(", ")
                )))
            }
        };
        let rate = match code.as_bytes().get(1) {
            Some(b'h') => 0.40,
            Some(b'm') => 0.20,
            Some(b'l') => 0.05,
            _ => {
                return Err(Error::Usage(format!(
                    "unknown scenario code {code:?}; valid codes: {}",
                    Self::MATRIX_CODES.join(", ")
                )))
            }
        };
        if code.len() != 2 {
            return Err(Error::Usage(format!(
                "unknown scenario code {code:?}; valid codes: {}",
                Self::MATRIX_CODES.join(", ")
            )));
        }
        ScenarioSpec::new(code, low, high, rate, seeds::sub_seed(base_seed, "scenario", code))
    }

    /// All six matrix cells for one base seed.
    pub fn matrix(base_seed: u64) -> Vec<Self> {
        Self::MATRIX_CODES
            .iter()
            .map(|c| Self::from_code(c, base_seed).expect("static codes"))
            .collect()
    }
}

/// A fully materialized experiment: every meter's (possibly tampered) series
/// plus the assignments that produced them.
#[derive(Debug, Clone)]
pub struct ScenarioInstance {
    pub spec: ScenarioSpec,
    pub groups: Vec<ParentGroup>,
    pub assignments: Vec<TheftAssignment>,
    pub series: BTreeMap<String, TamperedSeries>,
    pub horizon: usize,
}

/// Replay manifest: everything needed to reproduce an instance given the same
/// baseline data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub spec: ScenarioSpec,
    pub thieves: Vec<TheftAssignment>,
}

impl ScenarioInstance {
    pub fn manifest(&self) -> ScenarioManifest {
        ScenarioManifest {
            spec: self.spec.clone(),
            thieves: self.assignments.clone(),
        }
    }

    /// Total tampered timesteps across all meters.
    pub fn tampered_steps(&self) -> usize {
        self.series
            .values()
            .map(|s| s.tampered.iter().filter(|&&b| b).count())
            .sum()
    }
}

/// Select thieves within a group: each child independently with probability
/// `rate`, seeded per meter so the outcome is order-independent.
pub fn assign_thieves(group: &ParentGroup, rate: f64, seed: u64) -> Result<BTreeSet<String>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Usage(format!("thief rate {rate} outside [0, 1]")));
    }
    Ok(group
        .child_ids
        .iter()
        .filter(|id| seeds::unit_draw(seed, "thief-assign", id) < rate)
        .cloned()
        .collect())
}

/// Uniform severity draw in `[severity_low, severity_high]`, deterministic
/// per `(meter_id, seed)`.
pub fn sample_severity(spec: &ScenarioSpec, meter_id: &str, seed: u64) -> f64 {
    let u = seeds::unit_draw(seed, "severity", meter_id);
    spec.severity_low + u * (spec.severity_high - spec.severity_low)
}

/// Apply one assignment to a series.
///
/// Each timestep draws an independent uniform `u_t`; the step is tampered iff
/// `u_t < severity`. The draws depend only on the assignment seed, so for a
/// fixed seed the tampered set grows monotonically with severity.
pub fn apply_theft(series: &MeterSeries, assignment: &TheftAssignment) -> TamperedSeries {
    use rand::Rng;
    let strategy = assignment.attack.strategy();
    let ctx = AttackContext::for_assignment(assignment.seed, &series.kwh);
    let mut decide = seeds::rng_for(assignment.seed, "tamper", &assignment.meter_id);

    let n = series.len();
    let mut reported = Vec::with_capacity(n);
    let mut tampered = Vec::with_capacity(n);
    for t in 0..n {
        let u: f64 = decide.gen();
        if u < assignment.severity {
            let out = strategy.tamper(t, &series.kwh, &ctx);
            debug_assert!(out >= 0.0 && out.is_finite());
            reported.push(out);
            tampered.push(true);
        } else {
            reported.push(series.kwh[t]);
            tampered.push(false);
        }
    }
    TamperedSeries {
        meter_id: series.meter_id.clone(),
        start: series.start,
        reported,
        true_kwh: series.kwh.clone(),
        tampered,
    }
}

/// Pass a series through untouched (non-thief).
pub fn passthrough(series: &MeterSeries) -> TamperedSeries {
    TamperedSeries {
        meter_id: series.meter_id.clone(),
        start: series.start,
        reported: series.kwh.clone(),
        true_kwh: series.kwh.clone(),
        tampered: vec![false; series.len()],
    }
}

/// Materialize a scenario: assign thieves per group, draw each thief's attack
/// and severity, tamper their series, and pass everyone else through.
///
/// Fully deterministic given `spec.seed`; independent of group iteration
/// order because every draw is keyed by meter id.
pub fn build_scenario(
    groups: &[ParentGroup],
    series_map: &BTreeMap<String, MeterSeries>,
    spec: &ScenarioSpec,
) -> Result<ScenarioInstance> {
    spec.validate()?;

    let mut horizon: Option<usize> = None;
    let mut start: Option<DateTime<Utc>> = None;
    for group in groups {
        for id in &group.child_ids {
            let s = series_map.get(id).ok_or_else(|| {
                Error::Data(format!(
                    "scenario {}: no series for child meter {id} of group {}",
                    spec.label, group.parent_id
                ))
            })?;
            if *horizon.get_or_insert(s.len()) != s.len()
                || *start.get_or_insert(s.start) != s.start
            {
                return Err(Error::Data(format!(
                    "scenario {}: meter {id} has a different horizon or start than the rest",
                    spec.label
                )));
            }
        }
    }

    let mut assignments = Vec::new();
    let mut out = BTreeMap::new();
    for group in groups {
        let thieves = assign_thieves(group, spec.thief_rate, spec.seed)?;
        for id in &group.child_ids {
            let series = &series_map[id];
            if thieves.contains(id) {
                let u = seeds::unit_draw(spec.seed, "attack-type", id);
                let attack = AttackType::new(1 + (u * AttackType::COUNT as f64) as u8)?;
                let assignment = TheftAssignment {
                    meter_id: id.clone(),
                    attack,
                    severity: sample_severity(spec, id, spec.seed),
                    seed: seeds::sub_seed(spec.seed, "apply", id),
                };
                out.insert(id.clone(), apply_theft(series, &assignment));
                assignments.push(assignment);
            } else {
                out.insert(id.clone(), passthrough(series));
            }
        }
    }
    assignments.sort_by(|a, b| a.meter_id.cmp(&b.meter_id));

    Ok(ScenarioInstance {
        spec: spec.clone(),
        groups: groups.to_vec(),
        assignments,
        series: out,
        horizon: horizon.unwrap_or(0),
    })
}
