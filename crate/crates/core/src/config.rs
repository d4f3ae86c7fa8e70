//! Experiment configuration (JSON).
//!
//! Every field has a default, so a config file only states what it changes.
//! Relative paths (weights, output) resolve against the output directory and
//! the config file location respectively in the CLI.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::TrainConfig;
use crate::theft::ScenarioSpec;
use crate::watchdog::WatchdogConfig;

/// Where the meter data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// Seeded synthetic residential load; one ZIP per group.
    Synthetic {
        #[serde(default = "default_n_groups")]
        n_groups: usize,
        #[serde(default = "default_children")]
        children_per_group: usize,
        #[serde(default = "default_train_days")]
        train_days: usize,
        #[serde(default = "default_eval_days")]
        eval_days: usize,
        #[serde(default = "default_baseline_seed")]
        baseline_seed: u64,
    },
    /// Real per-meter CSVs listed by a metadata file.
    Files {
        metadata_path: PathBuf,
        #[serde(default = "default_capacity")]
        capacity: usize,
        #[serde(default = "default_eval_fraction")]
        eval_fraction: f64,
    },
}

fn default_n_groups() -> usize {
    20
}
fn default_children() -> usize {
    20
}
fn default_train_days() -> usize {
    30
}
fn default_eval_days() -> usize {
    90
}
fn default_baseline_seed() -> u64 {
    7
}
fn default_capacity() -> usize {
    crate::meter_data::DEFAULT_CAPACITY
}
fn default_eval_fraction() -> f64 {
    0.2
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic {
            n_groups: default_n_groups(),
            children_per_group: default_children(),
            train_days: default_train_days(),
            eval_days: default_eval_days(),
            baseline_seed: default_baseline_seed(),
        }
    }
}

/// Model shape and storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub decision_threshold: f64,
    /// Weight file; relative paths resolve against `out_dir`.
    pub weights_path: PathBuf,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_size: crate::lstm::DEFAULT_HIDDEN,
            decision_threshold: 0.5,
            weights_path: PathBuf::from("model.gw"),
            init_seed: 1,
        }
    }
}

/// How the labeled training set is synthesized from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainDataConfig {
    /// Thief rate used for the training scenario (higher than any evaluation
    /// scenario so the model sees plenty of tampered steps).
    pub thief_rate: f64,
    pub severity_low: f64,
    pub severity_high: f64,
    /// Cap on training windows; a seeded subsample keeps training time flat
    /// as the dataset grows.
    pub max_windows: Option<usize>,
}

impl Default for TrainDataConfig {
    fn default() -> Self {
        TrainDataConfig {
            thief_rate: 0.5,
            severity_low: 0.10,
            severity_high: 0.95,
            max_windows: Some(1500),
        }
    }
}

/// The full experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dataset: DatasetConfig,
    pub watchdog: WatchdogConfig,
    pub train: TrainConfig,
    pub train_data: TrainDataConfig,
    pub model: ModelConfig,
    /// Base seeds; each seed yields one full scenario matrix run.
    pub seeds: Vec<u64>,
    /// Scenario codes to run (subset of the matrix).
    pub scenarios: Vec<String>,
    pub tl_assumed: f64,
    pub tl_actual: f64,
    pub out_dir: PathBuf,
    /// Worker threads; 0 means all available cores.
    pub workers: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dataset: DatasetConfig::default(),
            watchdog: WatchdogConfig::default(),
            train: TrainConfig::default(),
            train_data: TrainDataConfig::default(),
            model: ModelConfig::default(),
            seeds: vec![1, 2, 3, 4, 5],
            scenarios: ScenarioSpec::MATRIX_CODES.iter().map(|s| s.to_string()).collect(),
            tl_assumed: crate::meter_data::DEFAULT_TECHNICAL_LOSS,
            tl_actual: crate::meter_data::DEFAULT_TECHNICAL_LOSS,
            out_dir: PathBuf::from("out"),
            workers: 0,
        }
    }
}

impl SimConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: SimConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: Some(e.line() as u64),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.watchdog.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Usage("config needs at least one seed".into()));
        }
        if self.scenarios.is_empty() {
            return Err(Error::Usage("config needs at least one scenario code".into()));
        }
        for code in &self.scenarios {
            ScenarioSpec::from_code(code, 0)?;
        }
        for tl in [self.tl_assumed, self.tl_actual] {
            if !(0.0..1.0).contains(&tl) {
                return Err(Error::Usage(format!("technical loss {tl} outside [0, 1)")));
            }
        }
        if !(0.0..=1.0).contains(&self.train_data.thief_rate) {
            return Err(Error::Usage(format!(
                "train_data.thief_rate {} outside [0, 1]",
                self.train_data.thief_rate
            )));
        }
        if self.model.hidden_size == 0 {
            return Err(Error::Usage("model.hidden_size must be at least 1".into()));
        }
        match &self.dataset {
            DatasetConfig::Synthetic {
                n_groups,
                children_per_group,
                train_days,
                eval_days,
                ..
            } => {
                if *n_groups == 0 || *children_per_group == 0 {
                    return Err(Error::Usage(
                        "synthetic dataset needs n_groups >= 1 and children_per_group >= 1".into(),
                    ));
                }
                if *train_days * 24 < crate::meter_data::MIN_SERIES_LEN
                    || *eval_days * 24 < crate::meter_data::MIN_SERIES_LEN + 24
                {
                    return Err(Error::Usage(format!(
                        "synthetic dataset needs train_days >= 3 and eval_days >= 4, got {train_days}/{eval_days}"
                    )));
                }
            }
            DatasetConfig::Files {
                capacity,
                eval_fraction,
                ..
            } => {
                if *capacity == 0 {
                    return Err(Error::Usage("files dataset needs capacity >= 1".into()));
                }
                if !(*eval_fraction > 0.0 && *eval_fraction < 1.0) {
                    return Err(Error::Usage(format!(
                        "eval_fraction must be in (0, 1), got {eval_fraction}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Weight file location, resolving relative paths against `out_dir`.
    pub fn weights_path(&self) -> PathBuf {
        if self.model.weights_path.is_absolute() {
            self.model.weights_path.clone()
        } else {
            self.out_dir.join(&self.model.weights_path)
        }
    }

    /// The scenario specs this config runs for one base seed.
    pub fn scenario_specs(&self, base_seed: u64) -> Result<Vec<ScenarioSpec>> {
        self.scenarios
            .iter()
            .map(|c| ScenarioSpec::from_code(c, base_seed))
            .collect()
    }
}
