//! Dataset assembly and model training for the harness.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::config::{DatasetConfig, SimConfig};
use crate::error::{Error, Result};
use crate::lstm::{train, LabeledWindow, LstmModel};
use crate::meter_data::{
    generate_synthetic_baseline, group_meters, load_metadata, load_meter_series, split_dataset,
    synthetic_meter_id, MeterRecord, MeterSeries, ParentGroup,
};
use crate::seeds;
use crate::theft::{build_scenario, ScenarioSpec};

/// Grouped meters with chronological train/eval splits.
#[derive(Debug, Clone)]
pub struct SimDataset {
    pub groups: Vec<ParentGroup>,
    pub train: BTreeMap<String, MeterSeries>,
    pub eval: BTreeMap<String, MeterSeries>,
}

/// Materialize the configured dataset.
///
/// Synthetic mode assigns one ZIP per group (`Z000`, `Z001`, ...) so
/// grouping-by-ZIP reproduces the configured group count exactly.
pub fn build_dataset(cfg: &SimConfig) -> Result<SimDataset> {
    cfg.validate()?;
    match &cfg.dataset {
        DatasetConfig::Synthetic {
            n_groups,
            children_per_group,
            train_days,
            eval_days,
            baseline_seed,
        } => {
            let n_meters = n_groups * children_per_group;
            let total_hours = (train_days + eval_days) * 24;
            let baseline = generate_synthetic_baseline(n_meters, total_hours, *baseline_seed)?;

            let records: Vec<MeterRecord> = (0..n_meters)
                .map(|i| MeterRecord {
                    meter_id: synthetic_meter_id(i),
                    data_path: format!("{}.csv", synthetic_meter_id(i)).into(),
                    zip: format!("Z{:03}", i / children_per_group),
                })
                .collect();
            let mut groups = group_meters(&records, *children_per_group)?;
            for g in &mut groups {
                g.tl_assumed = cfg.tl_assumed;
                g.tl_actual = cfg.tl_actual;
            }

            let eval_fraction = *eval_days as f64 / (*train_days + *eval_days) as f64;
            split_all(baseline, eval_fraction)
                .map(|(train, eval)| SimDataset { groups, train, eval })
        }
        DatasetConfig::Files {
            metadata_path,
            capacity,
            eval_fraction,
        } => {
            let records = load_metadata(metadata_path)?;
            if records.is_empty() {
                return Err(Error::Data(format!(
                    "{}: metadata lists no meters",
                    metadata_path.display()
                )));
            }
            let base_dir = metadata_path.parent().unwrap_or(Path::new("."));
            let mut series = Vec::with_capacity(records.len());
            for r in &records {
                let path = if r.data_path.is_absolute() {
                    r.data_path.clone()
                } else {
                    base_dir.join(&r.data_path)
                };
                let mut s = load_meter_series(&path)?;
                // the metadata id is authoritative; the file stem is a default
                s.meter_id = r.meter_id.clone();
                series.push(s);
            }
            let mut groups = group_meters(&records, *capacity)?;
            for g in &mut groups {
                g.tl_assumed = cfg.tl_assumed;
                g.tl_actual = cfg.tl_actual;
            }
            split_all(series, *eval_fraction)
                .map(|(train, eval)| SimDataset { groups, train, eval })
        }
    }
}

type SplitMaps = (BTreeMap<String, MeterSeries>, BTreeMap<String, MeterSeries>);

fn split_all(series: Vec<MeterSeries>, eval_fraction: f64) -> Result<SplitMaps> {
    let mut train = BTreeMap::new();
    let mut eval = BTreeMap::new();
    for s in series {
        let (tr, ev) = split_dataset(&s, eval_fraction)?;
        train.insert(s.meter_id.clone(), tr);
        eval.insert(s.meter_id, ev);
    }
    Ok((train, eval))
}

/// Build the labeled training set: inject a training scenario into the train
/// split and cut non-overlapping windows of the configured length.
///
/// The model sees reported (tampered) values; labels are the ground-truth
/// tamper marks. When `max_windows` caps the set, a seeded shuffle picks the
/// subsample.
pub fn training_windows(dataset: &SimDataset, cfg: &SimConfig) -> Result<Vec<LabeledWindow>> {
    let spec = ScenarioSpec::new(
        "train",
        cfg.train_data.severity_low,
        cfg.train_data.severity_high,
        cfg.train_data.thief_rate,
        seeds::sub_seed(cfg.train.seed, "train-scenario", ""),
    )?;
    let instance = build_scenario(&dataset.groups, &dataset.train, &spec)?;

    let w = cfg.watchdog.window_len;
    let mut windows = Vec::new();
    for series in instance.series.values() {
        let mut t = 0;
        while t + w <= series.len() {
            windows.push(LabeledWindow {
                values: series.reported[t..t + w].to_vec(),
                labels: series.tampered[t..t + w].to_vec(),
            });
            t += w;
        }
    }
    if windows.is_empty() {
        return Err(Error::Data(format!(
            "training split is shorter than one {w}-hour window"
        )));
    }
    if let Some(cap) = cfg.train_data.max_windows {
        if windows.len() > cap {
            let mut rng = seeds::rng_for(cfg.train.seed, "train-subsample", "");
            windows.shuffle(&mut rng);
            windows.truncate(cap);
        }
    }
    Ok(windows)
}

/// Train a fresh model on the configured training set; returns the model and
/// the per-epoch loss trace.
pub fn train_model(dataset: &SimDataset, cfg: &SimConfig) -> Result<(LstmModel, Vec<f64>)> {
    let windows = training_windows(dataset, cfg)?;
    let model = LstmModel::init(
        cfg.model.hidden_size,
        cfg.watchdog.window_len,
        cfg.model.decision_threshold,
        cfg.model.init_seed,
    )?;
    train(&model, &windows, &cfg.train)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DatasetConfig;
    use crate::meter_data::write_meter_series;

    fn tiny_cfg() -> SimConfig {
        SimConfig {
            dataset: DatasetConfig::Synthetic {
                n_groups: 2,
                children_per_group: 3,
                train_days: 7,
                eval_days: 6,
                baseline_seed: 3,
            },
            ..SimConfig::default()
        }
    }

    #[test]
    fn synthetic_dataset_shape() {
        let ds = build_dataset(&tiny_cfg()).unwrap();
        assert_eq!(ds.groups.len(), 2);
        assert!(ds.groups.iter().all(|g| g.child_ids.len() == 3));
        assert_eq!(ds.train.len(), 6);
        assert_eq!(ds.eval.len(), 6);
        for s in ds.train.values() {
            assert_eq!(s.len(), 7 * 24);
        }
        for s in ds.eval.values() {
            assert_eq!(s.len(), 6 * 24);
        }
        // groups never mix zips
        for g in &ds.groups {
            assert!(g.child_ids.iter().all(|c| ds.eval.contains_key(c)));
        }
    }

    #[test]
    fn files_dataset_loads_and_groups() {
        let dir = tempfile::tempdir().unwrap();
        let baseline = generate_synthetic_baseline(4, 30 * 24, 5).unwrap();
        let mut lines = vec!["meter_id,data_path,zip".to_string()];
        for (i, s) in baseline.iter().enumerate() {
            let name = format!("{}.csv", s.meter_id);
            write_meter_series(s, &dir.path().join(&name)).unwrap();
            lines.push(format!("{},{name},{}", s.meter_id, if i < 2 { "AA" } else { "BB" }));
        }
        let meta = dir.path().join("metadata.csv");
        std::fs::write(&meta, lines.join("\n") + "\n").unwrap();

        let cfg = SimConfig {
            dataset: DatasetConfig::Files {
                metadata_path: meta,
                capacity: 10,
                eval_fraction: 0.5,
            },
            ..SimConfig::default()
        };
        let ds = build_dataset(&cfg).unwrap();
        assert_eq!(ds.groups.len(), 2);
        assert_eq!(ds.groups[0].zip, "AA");
        assert_eq!(ds.train.len(), 4);
        assert_eq!(ds.eval["m00000"].len(), 15 * 24);
    }

    #[test]
    fn training_windows_are_labeled_and_capped() {
        let mut cfg = tiny_cfg();
        cfg.train_data.max_windows = Some(5);
        let ds = build_dataset(&cfg).unwrap();
        let windows = training_windows(&ds, &cfg).unwrap();
        assert_eq!(windows.len(), 5);
        for w in &windows {
            assert_eq!(w.values.len(), 72);
            assert_eq!(w.labels.len(), 72);
        }

        // uncapped: non-overlapping 72h windows from 7 training days = 2 per meter
        cfg.train_data.max_windows = None;
        let windows = training_windows(&ds, &cfg).unwrap();
        assert_eq!(windows.len(), 6 * 2);
        // with a 50% thief rate some labels must be set
        assert!(windows.iter().any(|w| w.labels.iter().any(|&b| b)));
    }

    #[test]
    fn training_windows_deterministic() {
        let cfg = tiny_cfg();
        let ds = build_dataset(&cfg).unwrap();
        assert_eq!(
            training_windows(&ds, &cfg).unwrap(),
            training_windows(&ds, &cfg).unwrap()
        );
    }
}
