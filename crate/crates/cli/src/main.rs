//! `stfm`: generate, ingest, train, predict and evaluate grid forecasts.
//!
//! Every subcommand that takes `--out` writes only below that directory and
//! starts by writing `manifest.json`, which records the fully resolved
//! parameters. Passing that file back via `--manifest` reruns the same
//! computation.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use stfm::evaluation::{
    ablation_csv, default_ablation_matrix, meteorological_seasons, per_slide_csv, per_step_csv, run_ablation,
    run_parallel_experiment, run_point_experiment_with_model, run_seasonal_experiment, ParallelReport,
};
use stfm::grid::{generate_lorenz96, load_grid, sample_window, write_grid, GridFormat, Lorenz96Config};
use stfm::model::{load_checkpoint, save_checkpoint};
use stfm::selftest::{gradient_suite, invariant_suite};
use stfm::training::{train, TrainedModel};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "stfm", version, about = "Spatiotemporal delay-embedding forecasts on gridded fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a synthetic system into a grid file.
    Generate(GenerateArgs),
    /// Convert an external extract into the native grid format.
    Ingest(IngestArgs),
    /// Train on one window; also scores the forecast when truth is available.
    Train(ConfigArgs),
    /// Forecast from a saved checkpoint.
    Predict(PredictArgs),
    /// Fan out over a prediction region and time slides.
    Parallel(ParallelArgs),
    /// Run the component ablation matrix on one window.
    Ablate(ConfigArgs),
    /// Run the gradient-check and invariant suites.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct Output {
    /// Directory receiving every output file.
    #[arg(long)]
    out: PathBuf,
    /// Replay the parameters recorded in a previous run's manifest.json.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum System {
    Lorenz96,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "lorenz96")]
    system: System,
    /// Ring size.
    #[arg(long, default_value_t = 40)]
    k: usize,
    /// Forcing.
    #[arg(long, default_value_t = 8.0)]
    f: f64,
    #[arg(long, default_value_t = 0.05)]
    dt: f64,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 1000)]
    spinup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct IngestArgs {
    /// Extract to convert (required unless replaying a manifest).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: GridFormat,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration (required unless replaying a manifest).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set sampling.M=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    run: ConfigArgs,
}

#[derive(Args)]
struct ParallelArgs {
    /// Cap on concurrent tasks; defaults to the config value, then all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Run one experiment per meteorological season of this year.
    #[arg(long)]
    seasons: Option<i32>,
    #[command(flatten)]
    run: ConfigArgs,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest<P> {
    tool: String,
    version: String,
    command: String,
    seed: u64,
    params: P,
    /// Output files, relative to the output directory.
    artifacts: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GenerateParams {
    system: System,
    lorenz96: Lorenz96Config,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IngestParams {
    input: PathBuf,
    format: GridFormat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictParams {
    checkpoint: PathBuf,
    config: RunConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParallelParams {
    threads: Option<usize>,
    seasons: Option<i32>,
    config: RunConfig,
}

fn read_manifest<P: DeserializeOwned>(path: &Path, command: &str) -> Result<P> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let manifest: RunManifest<P> =
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
    ensure!(
        manifest.command == command,
        "manifest {} records a `{}` run, not `{command}`",
        path.display(),
        manifest.command
    );
    Ok(manifest.params)
}

/// Creates the output directory and writes the manifest before any work.
fn start_run<P: Serialize>(out: &Path, command: &str, seed: u64, params: &P, artifacts: &[&str]) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let manifest = RunManifest {
        tool: "stfm".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        seed,
        params,
        artifacts: artifacts.iter().map(|a| a.to_string()).collect(),
    };
    write_file(out, "manifest.json", &(serde_json::to_string_pretty(&manifest)? + "\n"))
}

fn write_file(out: &Path, name: &str, contents: &str) -> Result<()> {
    let path = out.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn json(value: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn config_from(args: &ConfigArgs, command: &str) -> Result<RunConfig> {
    match (&args.output.manifest, &args.config) {
        (Some(m), _) => read_manifest(m, command),
        (None, Some(c)) => RunConfig::load(c, &args.overrides),
        (None, None) => bail!("--config is required"),
    }
}

fn generate(args: GenerateArgs) -> Result<()> {
    let params = match &args.output.manifest {
        Some(m) => read_manifest(m, "generate")?,
        None => GenerateParams {
            system: args.system,
            lorenz96: Lorenz96Config {
                k: args.k,
                forcing: args.f,
                dt: args.dt,
                steps: args.steps,
                spinup: args.spinup,
                seed: args.seed,
            },
        },
    };
    let out = &args.output.out;
    start_run(out, "generate", params.lorenz96.seed, &params, &["grid.txt"])?;
    let grid = match params.system {
        System::Lorenz96 => generate_lorenz96(&params.lorenz96)?,
    };
    write_grid(&grid, out.join("grid.txt"))?;
    log::info!("wrote {} steps of a {}x{} grid", grid.t_len(), grid.rows(), grid.cols());
    Ok(())
}

fn ingest(args: IngestArgs) -> Result<()> {
    let params = match (&args.output.manifest, &args.input) {
        (Some(m), _) => read_manifest(m, "ingest")?,
        (None, Some(input)) => IngestParams {
            input: std::path::absolute(input)?,
            format: args.format,
        },
        (None, None) => bail!("--input is required"),
    };
    let out = &args.output.out;
    start_run(out, "ingest", 0, &params, &["grid.txt"])?;
    let grid = load_grid(&params.input, params.format)
        .with_context(|| format!("reading {}", params.input.display()))?;
    write_grid(&grid, out.join("grid.txt"))?;
    Ok(())
}

fn train_cmd(args: ConfigArgs) -> Result<()> {
    let cfg = config_from(&args, "train")?;
    let out = &args.output.out;
    start_run(
        out,
        "train",
        cfg.train.seed,
        &cfg,
        &["checkpoint.bin", "train_report.jsonl", "point_report.json"],
    )?;
    let grid = cfg.load_grid()?;
    let sampling = cfg.sampling(&grid)?;
    let model = cfg.model(&sampling)?;
    let trained = if sampling.has_full_labels(&grid) {
        let (report, trained) = run_point_experiment_with_model(&grid, &sampling, &model, &cfg.train)?;
        write_file(out, "point_report.json", &json(&report)?)?;
        trained
    } else {
        log::warn!("grid ends before t_(M+L-1); skipping evaluation");
        let window = sample_window(&grid, &sampling)?;
        train(&window.attractor, &window.labels[..sampling.m], &model, &cfg.train)?
    };
    write_file(out, "train_report.jsonl", &trained.report.to_jsonl())?;
    let meta = serde_json::json!({ "trained": trained.metadata(), "sampling": sampling });
    save_checkpoint(out.join("checkpoint.bin"), &trained.params, &meta)?;
    Ok(())
}

fn predict(args: PredictArgs) -> Result<()> {
    let params = match (&args.run.output.manifest, &args.checkpoint, &args.run.config) {
        (Some(m), _, _) => read_manifest(m, "predict")?,
        (None, Some(ckpt), Some(c)) => PredictParams {
            checkpoint: std::path::absolute(ckpt)?,
            config: RunConfig::load(c, &args.run.overrides)?,
        },
        _ => bail!("--checkpoint and --config are required"),
    };
    let out = &args.run.output.out;
    start_run(out, "predict", params.config.train.seed, &params, &["forecast.csv"])?;
    let (weights, meta) = load_checkpoint(&params.checkpoint)?;
    let trained_meta = meta.get("trained").cloned().context("checkpoint lacks training metadata")?;
    let trained = TrainedModel::from_parts(weights, trained_meta)?;
    let grid = params.config.load_grid()?;
    let sampling = params.config.sampling(&grid)?;
    ensure!(
        (sampling.variables(), sampling.m, sampling.l) == (trained.model.n, trained.model.m, trained.model.l),
        "config window (N={}, M={}, L={}) does not match the checkpoint (N={}, M={}, L={})",
        sampling.variables(),
        sampling.m,
        sampling.l,
        trained.model.n,
        trained.model.m,
        trained.model.l
    );
    let window = sample_window(&grid, &sampling)?;
    let prediction = trained.predict(&window.attractor)?;
    let mut csv = String::from("step,grid_step,date,prediction,truth\n");
    for (s, p) in prediction.forecast.iter().enumerate() {
        let t = sampling.step_of(sampling.m + s);
        let date = grid.date_at(t).map(|d| d.to_string()).unwrap_or_default();
        let truth = window
            .labels
            .get(sampling.m + s)
            .map(|v| format!("{v:?}"))
            .unwrap_or_default();
        let _ = writeln!(csv, "{},{t},{date},{p:?},{truth}", s + 1);
    }
    write_file(out, "forecast.csv", &csv)
}

fn write_parallel(out: &Path, prefix: &str, report: &ParallelReport) -> Result<()> {
    write_file(out, &format!("{prefix}per_step.csv"), &per_step_csv(report))?;
    write_file(out, &format!("{prefix}per_slide.csv"), &per_slide_csv(report))?;
    write_file(out, &format!("{prefix}tasks.json"), &json(&report.tasks)?)?;
    if report.failures > 0 {
        log::warn!("{prefix}: {} of {} tasks failed", report.failures, report.tasks.len());
    }
    Ok(())
}

fn parallel(args: ParallelArgs) -> Result<()> {
    let params = match &args.run.output.manifest {
        Some(m) => read_manifest(m, "parallel")?,
        None => ParallelParams {
            threads: args.threads,
            seasons: args.seasons,
            config: config_from(&args.run, "parallel")?,
        },
    };
    let out = &args.run.output.out;
    let seasons = meteorological_seasons();
    let artifacts: Vec<String> = match params.seasons {
        None => vec!["per_step.csv".into(), "per_slide.csv".into(), "tasks.json".into()],
        Some(_) => seasons
            .iter()
            .flat_map(|s| ["per_step.csv", "per_slide.csv", "tasks.json"].map(|f| format!("{}/{f}", s.name)))
            .collect(),
    };
    let artifact_refs: Vec<&str> = artifacts.iter().map(String::as_str).collect();
    start_run(out, "parallel", params.config.parallel.base_seed, &params, &artifact_refs)?;
    let grid = params.config.load_grid()?;
    let spec = params.config.parallel_spec(&grid, params.threads)?;
    match params.seasons {
        None => write_parallel(out, "", &run_parallel_experiment(&grid, &spec)?),
        Some(year) => {
            for (name, report) in run_seasonal_experiment(&grid, &spec, year, &seasons)? {
                write_parallel(out, &format!("{name}/"), &report)?;
            }
            Ok(())
        }
    }
}

fn ablate(args: ConfigArgs) -> Result<()> {
    let cfg = config_from(&args, "ablate")?;
    let out = &args.output.out;
    start_run(out, "ablate", cfg.train.seed, &cfg, &["ablation.csv", "ablation.json"])?;
    let grid = cfg.load_grid()?;
    let sampling = cfg.sampling(&grid)?;
    let model = cfg.model(&sampling)?;
    let results = run_ablation(&grid, &sampling, &model, &cfg.train, &default_ablation_matrix())?;
    write_file(out, "ablation.csv", &ablation_csv(&results))?;
    write_file(out, "ablation.json", &json(&results)?)
}

fn selftest(args: SelftestArgs) -> Result<()> {
    let mut failed = 0;
    for check in gradient_suite(args.seed)?.into_iter().chain(invariant_suite(args.seed)?) {
        println!(
            "{} {:<60} {:.3e}",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.value
        );
        failed += usize::from(!check.passed);
    }
    ensure!(failed == 0, "{failed} self-test checks failed");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Ingest(a) => ingest(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict(a),
        Command::Parallel(a) => parallel(a),
        Command::Ablate(a) => ablate(a),
        Command::Selftest(a) => selftest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
