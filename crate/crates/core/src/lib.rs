//! Watchdog-gated energy theft detection for radial smart-grid segments.
//!
//! The library models a low-voltage radial grid section: a parent meter at the
//! single entry point, child meters at residences, and a per-group detection
//! unit (the watchdog) that compares hourly parent inflow against the
//! loss-corrected sum of child readings. When the discrepancy exceeds a
//! threshold the watchdog latches a flag; at a daily evaluation time it hands
//! 72-hour windows of each child's readings to a lightweight LSTM classifier
//! that scores every timestep for theft.
//!
//! The crate covers the full experiment loop:
//!
//! * [`meter_data`] — CSV ingestion, ZIP/capacity grouping, synthetic baseline
//!   load generation, chronological train/eval splits.
//! * [`theft`] — thief assignment, severity sampling, and six tampering
//!   strategies behind a common [`theft::attacks::AttackStrategy`] trait.
//! * [`watchdog`] — the hourly discrepancy check and flag/evaluate cycle.
//! * [`lstm`] — a from-scratch 64-unit LSTM with per-timestep sigmoid head,
//!   BPTT training, gradient verification, and weight serialization.
//! * [`accounting`] — deterministic MAC-count cost ledgers plus an optional
//!   external wall-power sampler.
//! * [`harness`] — paired with/without-watchdog simulations, accuracy and
//!   interval metrics, report emission.
//! * [`config`] — the JSON experiment configuration shared by the CLI.
//!
//! Every random choice flows from explicit seeds (see [`seeds`]); repeated
//! runs with the same configuration produce identical outputs.

pub mod accounting;
pub mod config;
pub mod error;
pub mod harness;
pub mod lstm;
pub mod meter_data;
pub mod seeds;
pub mod theft;
pub mod watchdog;

pub use error::{Error, Result};
