//! `gridwatch` — ingest, inject, train, simulate, report.
//!
//! Every flag can also be set through a `GRIDWATCH_*` environment variable
//! (`--config` -> `GRIDWATCH_CONFIG`, and so on); explicit flags win over the
//! environment, and both win over the config file. Diagnostics go to stderr;
//! results go to stdout and files under the output directory.
//!
//! Exit codes: 0 success, 1 data/config errors, 2 usage errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gridwatch_core::accounting::SamplerSpec;
use gridwatch_core::config::{DatasetConfig, SimConfig};
use gridwatch_core::harness::{
    self, build_dataset, emit_csv_summaries, emit_report, train_model, HarnessConfig, PairedOutput,
    RunMode, RunOutput, SimDataset,
};
use gridwatch_core::lstm::{load_weights_expecting, save_weights, LstmModel};
use gridwatch_core::meter_data::{
    generate_synthetic_baseline, synthetic_meter_id, write_metadata, write_meter_series,
    MeterRecord,
};
use gridwatch_core::theft::{build_scenario, ScenarioSpec};
use gridwatch_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "gridwatch",
    version,
    about = "Watchdog-gated energy theft detection: simulation, training, and paired experiments"
)]
struct Cli {
    /// Experiment configuration file (JSON). Defaults apply when omitted.
    #[arg(long, global = true, env = "GRIDWATCH_CONFIG")]
    config: Option<PathBuf>,

    /// Output directory (overrides the config).
    #[arg(long, global = true, env = "GRIDWATCH_OUT")]
    out: Option<PathBuf>,

    /// Replace the config's seed list with this single base seed.
    #[arg(long, global = true, env = "GRIDWATCH_SEED")]
    seed: Option<u64>,

    /// Worker threads (0 = all cores; overrides the config).
    #[arg(long, global = true, env = "GRIDWATCH_WORKERS")]
    workers: Option<usize>,

    /// Print progress diagnostics on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize the dataset: write synthetic meter CSVs plus metadata, or
    /// validate a file-backed dataset.
    Ingest,
    /// Build one scenario instance and write its replay manifest.
    Inject {
        /// Scenario code (hh, hm, hl, lh, lm, ll).
        #[arg(long, env = "GRIDWATCH_SCENARIO")]
        scenario: String,
    },
    /// Train the classifier on the training split and save the weights.
    Train,
    /// Run simulations and write report.json, summary.csv,
    /// watchdog_events.csv, and plot_data.csv.
    Simulate {
        /// Restrict to one scenario code (default: all configured codes).
        #[arg(long, env = "GRIDWATCH_SCENARIO")]
        scenario: Option<String>,
        /// paired | with | without
        #[arg(long, env = "GRIDWATCH_MODE", default_value = "paired")]
        mode: String,
        /// Train and save weights first when the weight file is missing.
        #[arg(long, env = "GRIDWATCH_TRAIN_FIRST")]
        train_first: bool,
        /// External power sampler command (e.g. "powerstat -d 0 1 600");
        /// readings are attached to each run's cost ledger.
        #[arg(long, env = "GRIDWATCH_POWER_SAMPLER")]
        power_sampler: Option<String>,
    },
    /// Regenerate summary.csv and plot_data.csv from an existing report.json.
    Report {
        /// Report file (default: <out_dir>/report.json).
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<SimConfig> {
    let mut cfg = match &cli.config {
        Some(path) => SimConfig::load(path)?,
        None => SimConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_worker_pool(cfg: &SimConfig) {
    if cfg.workers > 0 {
        // build_global fails if a pool already exists; that is fine
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global();
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    init_worker_pool(&cfg);
    let verbose = cli.verbose > 0;

    match &cli.command {
        Command::Ingest => ingest(&cfg, verbose),
        Command::Inject { scenario } => inject(&cfg, scenario),
        Command::Train => train_cmd(&cfg, verbose),
        Command::Simulate {
            scenario,
            mode,
            train_first,
            power_sampler,
        } => simulate(
            &cfg,
            scenario.as_deref(),
            mode,
            *train_first,
            power_sampler.as_deref(),
            verbose,
        ),
        Command::Report { input } => report_cmd(&cfg, input.as_deref()),
    }
}

fn ensure_out_dir(cfg: &SimConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))
}

fn ingest(cfg: &SimConfig, verbose: bool) -> Result<()> {
    ensure_out_dir(cfg)?;
    match &cfg.dataset {
        DatasetConfig::Synthetic {
            n_groups,
            children_per_group,
            train_days,
            eval_days,
            baseline_seed,
        } => {
            let n_meters = n_groups * children_per_group;
            let hours = (train_days + eval_days) * 24;
            let baseline = generate_synthetic_baseline(n_meters, hours, *baseline_seed)?;
            let data_dir = cfg.out_dir.join("data");
            std::fs::create_dir_all(&data_dir).map_err(|e| Error::io(&data_dir, e))?;
            let mut records = Vec::with_capacity(n_meters);
            for (i, series) in baseline.iter().enumerate() {
                let file = format!("{}.csv", series.meter_id);
                write_meter_series(series, &data_dir.join(&file))?;
                records.push(MeterRecord {
                    meter_id: synthetic_meter_id(i),
                    data_path: PathBuf::from("data").join(&file),
                    zip: format!("Z{:03}", i / children_per_group),
                });
                if verbose && i % 100 == 0 {
                    eprintln!("wrote {}/{} meters", i + 1, n_meters);
                }
            }
            let metadata_path = cfg.out_dir.join("metadata.csv");
            write_metadata(&records, &metadata_path)?;
            println!(
                "ingest: wrote {n_meters} meters x {hours} hours under {} ({} groups of {children_per_group})",
                cfg.out_dir.display(),
                n_groups
            );
        }
        DatasetConfig::Files { .. } => {
            let ds = build_dataset(cfg)?;
            let meters = ds.train.len();
            let train_hours = ds.train.values().next().map(|s| s.len()).unwrap_or(0);
            let eval_hours = ds.eval.values().next().map(|s| s.len()).unwrap_or(0);
            println!(
                "ingest: validated {meters} meters in {} groups ({train_hours} train / {eval_hours} eval hours)",
                ds.groups.len()
            );
        }
    }
    Ok(())
}

fn inject(cfg: &SimConfig, code: &str) -> Result<()> {
    ensure_out_dir(cfg)?;
    let base_seed = cfg.seeds[0];
    let spec = ScenarioSpec::from_code(code, base_seed)?;
    let ds = build_dataset(cfg)?;
    let instance = build_scenario(&ds.groups, &ds.eval, &spec)?;
    let manifest = instance.manifest();
    let path = cfg.out_dir.join(format!("scenario_{code}_seed{base_seed}.json"));
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    println!(
        "inject: scenario {code} seed {base_seed}: {} thieves across {} meters, {} tampered timesteps; manifest at {}",
        manifest.thieves.len(),
        instance.series.len(),
        instance.tampered_steps(),
        path.display()
    );
    Ok(())
}

fn train_cmd(cfg: &SimConfig, verbose: bool) -> Result<()> {
    ensure_out_dir(cfg)?;
    let ds = build_dataset(cfg)?;
    if verbose {
        eprintln!(
            "training on {} groups ({} meters), {} epochs",
            ds.groups.len(),
            ds.train.len(),
            cfg.train.epochs
        );
    }
    let (model, trace) = train_model(&ds, cfg)?;
    let weights_path = cfg.weights_path();
    if let Some(parent) = weights_path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    save_weights(&model, &weights_path)?;
    let trace_path = cfg.out_dir.join("loss_trace.json");
    let json = serde_json::to_string_pretty(&trace).expect("trace serializes");
    std::fs::write(&trace_path, json).map_err(|e| Error::io(&trace_path, e))?;
    println!(
        "train: {} epochs, final loss {:.6}; weights at {}",
        trace.len(),
        trace.last().unwrap_or(&f64::NAN),
        weights_path.display()
    );
    Ok(())
}

fn load_or_train_model(cfg: &SimConfig, ds: &SimDataset, train_first: bool, verbose: bool) -> Result<LstmModel> {
    let weights_path = cfg.weights_path();
    if weights_path.exists() {
        return load_weights_expecting(&weights_path, cfg.model.hidden_size);
    }
    if !train_first {
        return Err(Error::Data(format!(
            "no weight file at {}; run `gridwatch train` or pass --train-first",
            weights_path.display()
        )));
    }
    if verbose {
        eprintln!("no weights at {}; training first", weights_path.display());
    }
    let (model, _) = train_model(ds, cfg)?;
    if let Some(parent) = weights_path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    save_weights(&model, &weights_path)?;
    Ok(model)
}

fn simulate(
    cfg: &SimConfig,
    scenario: Option<&str>,
    mode: &str,
    train_first: bool,
    power_sampler: Option<&str>,
    verbose: bool,
) -> Result<()> {
    ensure_out_dir(cfg)?;
    let codes: Vec<String> = match scenario {
        Some(code) => {
            ScenarioSpec::from_code(code, 0)?; // validate early, lists valid codes
            vec![code.to_string()]
        }
        None => cfg.scenarios.clone(),
    };
    let ds = build_dataset(cfg)?;
    let model = load_or_train_model(cfg, &ds, train_first, verbose)?;

    let hcfg = HarnessConfig {
        watchdog: cfg.watchdog.clone(),
        collect_events: true,
        sampler: power_sampler.map(SamplerSpec::parse).transpose()?,
        sampler_raw_dir: Some(cfg.out_dir.clone()),
    };

    let mut paired: Vec<PairedOutput> = Vec::new();
    let mut singles: Vec<RunOutput> = Vec::new();
    for code in &codes {
        for &seed in &cfg.seeds {
            let spec = ScenarioSpec::from_code(code, seed)?;
            match mode {
                "paired" => {
                    let out = harness::run_paired(&ds, &spec, seed, &model, &hcfg)?;
                    for w in &out.warnings {
                        eprintln!("warning: {w}");
                    }
                    if verbose {
                        eprintln!(
                            "scenario {code} seed {seed}: macs reduction {:.4}, filtered {}",
                            out.record.macs_reduction,
                            out.record
                                .filtered_percent
                                .map(|f| format!("{f:.4}"))
                                .unwrap_or_else(|| "n/a".into())
                        );
                    }
                    paired.push(out);
                }
                "with" | "without" => {
                    let run_mode = if mode == "with" {
                        RunMode::WithWatchdog
                    } else {
                        RunMode::WithoutWatchdog
                    };
                    let instance = build_scenario(&ds.groups, &ds.eval, &spec)?;
                    let mut out = harness::run_simulation(&instance, &model, run_mode, &hcfg)?;
                    out.report.base_seed = seed;
                    for w in &out.warnings {
                        eprintln!("warning: {w}");
                    }
                    singles.push(out);
                }
                other => {
                    return Err(Error::Usage(format!(
                        "unknown mode {other:?}; valid modes: paired, with, without"
                    )))
                }
            }
        }
    }

    let files = emit_report(&paired, &singles, &cfg.out_dir)?;
    println!(
        "simulate: {} scenario(s) x {} seed(s), mode {mode}; wrote {}, {}, {}, {}",
        codes.len(),
        cfg.seeds.len(),
        files.report_json.display(),
        files.summary_csv.display(),
        files.watchdog_events_csv.display(),
        files.plot_data_csv.display()
    );
    Ok(())
}

fn report_cmd(cfg: &SimConfig, input: Option<&std::path::Path>) -> Result<()> {
    let path = input
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| cfg.out_dir.join("report.json"));
    let doc = harness::load_report(&path)?;
    let (summary, plot) = emit_csv_summaries(&doc, &cfg.out_dir)?;
    println!(
        "report: {} paired + {} single runs; wrote {} and {}",
        doc.runs.len(),
        doc.single_runs.len(),
        summary.display(),
        plot.display()
    );
    Ok(())
}
