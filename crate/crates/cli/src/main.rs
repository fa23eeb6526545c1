use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use emos_core::experiment::{
    prepare, read_predictions_csv, run_calibration, run_verification, write_predictions_csv,
    write_station_diagnostics, ExperimentOutput,
};
use emos_core::emos::write_parameter_records;
use emos_core::selection::{write_centroids, write_cluster_assignment};
use emos_core::synth::write_synth_dir;
use emos_core::{
    emit_reports, generate, load_dataset_dir, run_experiment, station_diagnostics, Error,
    ExperimentConfig, Result, SynthConfig,
};

/// Dual-resolution ensemble calibration experiments.
#[derive(Parser)]
#[command(name = "emos", version)]
struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores); overrides the config file.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset in the input CSV schemas.
    Simulate {
        /// Generator settings (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Print the effective generator settings and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Fit the semi-local station clusters of an experiment.
    Cluster(ExperimentArgs),
    /// Fit EMOS on rolling windows and write the predictive distributions.
    Calibrate(ExperimentArgs),
    /// Score stored predictions and write the report tables.
    Verify {
        #[command(flatten)]
        experiment: ExperimentArgs,
        /// Predictions from `calibrate`; defaults to `<out>/predictions.csv`.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Calibrate and verify in one pass.
    Run(ExperimentArgs),
    /// Per-station mean, variance and RMSE differences between two groups.
    Diagnose {
        /// Directory with stations.csv, observations.csv and forecasts.csv.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        high: String,
        #[arg(long)]
        low: String,
        /// Members per group after subsampling.
        #[arg(long, default_value_t = 50)]
        size: usize,
        /// Restrict to one lead time.
        #[arg(long)]
        lead: Option<u32>,
        /// Skip the orographic correction.
        #[arg(long)]
        no_correction: bool,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Bootstrap replicates; overrides the config file.
    #[arg(long)]
    replicates: Option<usize>,
    /// Mean bootstrap block length in days; overrides the config file.
    #[arg(long)]
    block_length: Option<f64>,
}

struct Globals {
    seed: Option<u64>,
    jobs: Option<usize>,
    out: Option<PathBuf>,
}

impl ExperimentArgs {
    /// Config with command-line overrides applied, and the directory that
    /// relative data paths resolve against.
    fn load(&self, g: &Globals) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = ExperimentConfig::from_file(&self.config)?;
        let base = self
            .config
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        if let Some(s) = g.seed {
            cfg.seed = s;
        }
        if let Some(j) = g.jobs {
            cfg.jobs = j;
        }
        match &g.out {
            Some(o) => cfg.out_dir = o.clone(),
            None if cfg.out_dir.is_relative() => cfg.out_dir = base.join(&cfg.out_dir),
            None => {}
        }
        if let Some(r) = self.replicates {
            cfg.bootstrap.replicates = r;
        }
        if let Some(l) = self.block_length {
            cfg.bootstrap.mean_block_length = Some(l);
        }
        cfg.validate()?;
        Ok((cfg, base))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn simulate(g: &Globals, config: Option<&Path>, print_config: bool) -> Result<()> {
    let mut cfg = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<SynthConfig>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if print_config {
        print!("{}", toml::to_string(&cfg).map_err(|e| Error::Config(e.to_string()))?);
        return Ok(());
    }
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("synthetic"));
    let data = generate(&cfg)?;
    create_dir(&out)?;
    write_synth_dir(&out, &data)?;
    log::info!("wrote synthetic dataset to {}", out.display());
    Ok(())
}

fn cluster(g: &Globals, args: &ExperimentArgs) -> Result<()> {
    let (cfg, base) = args.load(g)?;
    let ds = emos_core::experiment::load_experiment_dataset(&cfg, &base)?;
    let prepared = prepare(&cfg, ds)?;
    if prepared.clusters.is_empty() {
        return Err(Error::Config("no semi-local training configured".into()));
    }
    create_dir(&cfg.out_dir)?;
    for c in &prepared.clusters {
        let stem = format!("clusters_lead{}_{}d_k{}", c.lead_days, c.n_days, c.assignment.k);
        write_cluster_assignment(&cfg.out_dir.join(format!("{stem}.csv")), &c.assignment)?;
        write_centroids(&cfg.out_dir.join(format!("{stem}_centroids.csv")), &c.assignment)?;
    }
    Ok(())
}

fn calibrate(g: &Globals, args: &ExperimentArgs) -> Result<()> {
    let (cfg, base) = args.load(g)?;
    let ds = emos_core::experiment::load_experiment_dataset(&cfg, &base)?;
    let (_, cal) = run_calibration(&cfg, ds)?;
    create_dir(&cfg.out_dir)?;
    write_predictions_csv(&cfg.out_dir.join("predictions.csv"), &cal.predictions)?;
    write_parameter_records(&cfg.out_dir.join("parameters.jsonl"), &cal.parameters)?;
    for c in &cal.clusters {
        let stem = format!("clusters_lead{}_{}d_k{}", c.lead_days, c.n_days, c.assignment.k);
        write_cluster_assignment(&cfg.out_dir.join(format!("{stem}.csv")), &c.assignment)?;
    }
    log::info!("{} predictions written to {}", cal.predictions.len(), cfg.out_dir.display());
    Ok(())
}

fn report(cfg: &ExperimentConfig, out: &ExperimentOutput) -> Result<()> {
    emit_reports(out, &cfg.out_dir)?;
    log::info!("reports written to {}", cfg.out_dir.display());
    Ok(())
}

fn verify(g: &Globals, args: &ExperimentArgs, predictions: Option<&Path>) -> Result<()> {
    let (cfg, base) = args.load(g)?;
    let path = predictions
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.join("predictions.csv"));
    let preds = read_predictions_csv(&path)?;
    let ds = emos_core::experiment::load_experiment_dataset(&cfg, &base)?;
    let out = run_verification(&cfg, ds, preds)?;
    report(&cfg, &out)
}

fn run(g: &Globals, args: &ExperimentArgs) -> Result<()> {
    let (cfg, base) = args.load(g)?;
    let ds = emos_core::experiment::load_experiment_dataset(&cfg, &base)?;
    let out = run_experiment(&cfg, ds)?;
    report(&cfg, &out)
}

fn diagnose(
    g: &Globals,
    data: &Path,
    groups: (&str, &str),
    size: usize,
    lead: Option<u32>,
    no_correction: bool,
) -> Result<()> {
    let mut ds = load_dataset_dir(data)?;
    if !no_correction {
        ds = ds.orographically_corrected();
    }
    let rows = station_diagnostics(&ds, groups, size, lead)?;
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("."));
    create_dir(&out)?;
    write_station_diagnostics(&out.join("station_diagnostics.csv"), &rows)
}

fn dispatch(cli: Cli) -> Result<()> {
    let g = Globals {
        seed: cli.seed,
        jobs: cli.jobs,
        out: cli.out,
    };
    match &cli.command {
        Command::Simulate {
            config,
            print_config,
        } => simulate(&g, config.as_deref(), *print_config),
        Command::Cluster(a) => cluster(&g, a),
        Command::Calibrate(a) => calibrate(&g, a),
        Command::Verify {
            experiment,
            predictions,
        } => verify(&g, experiment, predictions.as_deref()),
        Command::Run(a) => run(&g, a),
        Command::Diagnose {
            data,
            high,
            low,
            size,
            lead,
            no_correction,
        } => diagnose(&g, data, (high, low), *size, *lead, *no_correction),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
