//! Temporary scratch probe (removed before finalizing).

use gridwatch_core::config::{DatasetConfig, SimConfig};
use gridwatch_core::harness::{build_dataset, run_paired, HarnessConfig};
use gridwatch_core::lstm::LstmModel;
use gridwatch_core::theft::ScenarioSpec;

#[test]
#[ignore]
fn probe_reduction_and_throughput() {
    let cfg = SimConfig {
        dataset: DatasetConfig::Synthetic {
            n_groups: 20,
            children_per_group: 20,
            train_days: 30,
            eval_days: 90,
            baseline_seed: 7,
        },
        ..SimConfig::default()
    };
    let t0 = std::time::Instant::now();
    let ds = build_dataset(&cfg).unwrap();
    eprintln!("dataset build: {:?}", t0.elapsed());

    let model = LstmModel::init(64, 72, 0.5, 1).unwrap();
    let hcfg = HarnessConfig {
        watchdog: cfg.watchdog.clone(),
        ..Default::default()
    };

    for code in ["ll", "hl", "lm", "hm", "lh", "hh"] {
        let mut reductions = Vec::new();
        let mut filtered = Vec::new();
        let t = std::time::Instant::now();
        for seed in 1..=5u64 {
            let spec = ScenarioSpec::from_code(code, seed).unwrap();
            let out = run_paired(&ds, &spec, seed, &model, &hcfg).unwrap();
            reductions.push(out.record.macs_reduction);
            filtered.push(out.record.filtered_percent);
        }
        let avg: f64 = reductions.iter().sum::<f64>() / reductions.len() as f64;
        eprintln!(
            "{code}: reduction avg {avg:.4} (per-seed {:?}), filtered {:?}, 5 paired runs in {:?}",
            reductions.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            filtered.iter().map(|f| f.map(|v| (v * 1000.0).round() / 1000.0)).collect::<Vec<_>>(),
            t.elapsed()
        );
    }
}
