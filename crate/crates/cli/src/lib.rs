//! Command-line driver: argument parsing and the seven subcommands.

pub mod config;
pub mod error;

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use rgnet_core::ablation::{run_ablation, runs_csv, summarize, summary_csv, AblationRun};
use rgnet_core::checkpoint::load_checkpoint;
use rgnet_core::config::Task;
use rgnet_core::dataset::synth::{generate_synthetic, render_all, SynthSpec, SynthTask};
use rgnet_core::dataset::{load_image, Manifest, Samples};
use rgnet_core::gradcheck::{gradcheck_model, GradReport};
use rgnet_core::heatmap::{heatmap, Query, Stage};
use rgnet_core::train::{evaluate, predict, train, Prediction, CHECKPOINT_FILE};
use rgnet_core::RgNet;
use rgnet_tensor::gradcheck::FdConfig;
use rgnet_tensor::{BackwardFault, BnMode, Scalar, Tensor};

pub use config::{Precision, RunConfig};
pub use error::{CliError, CliResult, EXIT_CONFIG, EXIT_RUNTIME};

/// Snapshot of the effective configuration written next to training outputs.
pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const ABLATION_RUNS_FILE: &str = "ablation_runs.csv";

#[derive(Debug, Parser)]
#[command(name = "rgnet", version, about = "Train, evaluate and inspect the region-graph aesthetics network")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `precision`.
    #[arg(long, global = true, value_enum)]
    pub precision: Option<Precision>,
    /// Output directory; overrides `paths.out_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from scratch, writing metrics.csv and a checkpoint per epoch.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a manifest.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Print `path,p_low,p_high,label` for each image.
    Score {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Cosine-similarity map of one region against all others.
    Heatmap {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        image: PathBuf,
        /// `auto` or `row,col` in feature-grid cells.
        #[arg(long, default_value = "auto")]
        query: Query,
        #[arg(long, default_value = "graph")]
        stage: Stage,
    },
    /// Finite-difference check of every parameter gradient in 64-bit.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = BnArg::Eval)]
        bn_mode: BnArg,
        /// Sampled coordinates per parameter tensor.
        #[arg(long, default_value_t = 20)]
        samples: usize,
        /// Central-difference step.
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        /// Scales the named op's backward rule by 1.5.
        #[arg(long, hide = true)]
        fault: Option<String>,
    },
    /// Train and evaluate every variant over the configured seeds.
    Ablate,
    /// Render a synthetic dataset from a spec file.
    Synth { spec: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BnArg {
    Train,
    Eval,
}

/// Parses `args` and runs the command, writing normal output to `stdout`.
pub fn run<I, S>(args: I, stdout: &mut dyn Write) -> CliResult<()>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            CliError::Help(e.to_string())
        }
        _ => CliError::Config(e.to_string().lines().next().unwrap_or("bad arguments").to_string()),
    })?;
    execute(cli, stdout)
}

pub fn execute(cli: Cli, stdout: &mut dyn Write) -> CliResult<()> {
    if let Command::Synth { spec } = &cli.command {
        return cmd_synth(spec, cli.seed, cli.out.as_deref(), stdout);
    }
    let cfg = effective_config(&cli)?;
    match cli.command {
        Command::Train { manifest } => match cfg.precision {
            Precision::F32 => cmd_train::<f32>(&cfg, manifest, stdout),
            Precision::F64 => cmd_train::<f64>(&cfg, manifest, stdout),
        },
        Command::Eval { checkpoint, manifest } => match cfg.precision {
            Precision::F32 => cmd_eval::<f32>(&cfg, checkpoint, manifest, stdout),
            Precision::F64 => cmd_eval::<f64>(&cfg, checkpoint, manifest, stdout),
        },
        Command::Score { checkpoint, images } => match cfg.precision {
            Precision::F32 => cmd_score::<f32>(&cfg, checkpoint, &images, stdout),
            Precision::F64 => cmd_score::<f64>(&cfg, checkpoint, &images, stdout),
        },
        Command::Heatmap {
            checkpoint,
            image,
            query,
            stage,
        } => match cfg.precision {
            Precision::F32 => cmd_heatmap::<f32>(&cfg, checkpoint, &image, query, stage, stdout),
            Precision::F64 => cmd_heatmap::<f64>(&cfg, checkpoint, &image, query, stage, stdout),
        },
        Command::Gradcheck {
            bn_mode,
            samples,
            step,
            batch,
            fault,
        } => {
            if cli.precision == Some(Precision::F32) {
                return Err(CliError::Config("gradcheck runs in 64-bit only".into()));
            }
            let fd = FdConfig { samples, step, ..FdConfig::default() };
            let mode = match bn_mode {
                BnArg::Train => BnMode::Train,
                BnArg::Eval => BnMode::Eval,
            };
            let report = gradcheck_report(&cfg, mode, &fd, batch, fault)?;
            write_report(&report, stdout)?;
            if report.passed() {
                Ok(())
            } else {
                let worst = report.worst().expect("reports are non-empty");
                Err(CliError::Failed(format!(
                    "gradient check failed: {} has relative error {:.3e} (tolerance {:.0e})",
                    worst.name, worst.max_rel_error, report.tolerance
                )))
            }
        }
        Command::Ablate => match cfg.precision {
            Precision::F32 => cmd_ablate::<f32>(&cfg, stdout),
            Precision::F64 => cmd_ablate::<f64>(&cfg, stdout),
        },
        Command::Synth { .. } => unreachable!("handled above"),
    }
}

/// The config file with command-line overrides applied, validated.
pub fn effective_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if let Some(p) = cli.precision {
        cfg.precision = p;
    }
    if let Some(out) = &cli.out {
        cfg.paths.out_dir = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Core(rgnet_core::Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn output_dir(cfg: &RunConfig) -> CliResult<&Path> {
    cfg.paths
        .out_dir
        .as_deref()
        .ok_or_else(|| CliError::Config("an output directory is required (--out or paths.out_dir)".into()))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Loads a manifest named on the command line or in the config; a missing
/// or malformed file is a validation error.
fn require_manifest(flag: Option<PathBuf>, fallback: Option<&PathBuf>, what: &str) -> CliResult<Manifest> {
    let path = flag
        .or_else(|| fallback.cloned())
        .ok_or_else(|| CliError::Config(format!("no {what} given")))?;
    if !path.is_file() {
        return Err(CliError::Config(format!("{what} {} does not exist", path.display())));
    }
    Manifest::load(&path).map_err(|e| CliError::Config(format!("{what} {}: {e}", path.display())))
}

fn checkpoint_path(cfg: &RunConfig, flag: Option<PathBuf>) -> CliResult<PathBuf> {
    let path = flag
        .or_else(|| cfg.paths.checkpoint.clone())
        .or_else(|| cfg.paths.out_dir.as_ref().map(|d| d.join(CHECKPOINT_FILE)))
        .ok_or_else(|| CliError::Config("no checkpoint given (--checkpoint, paths.checkpoint or paths.out_dir)".into()))?;
    if !path.is_file() {
        return Err(CliError::Config(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(path)
}

fn load_model<T: Scalar>(cfg: &RunConfig, flag: Option<PathBuf>) -> CliResult<RgNet<T>> {
    let path = checkpoint_path(cfg, flag)?;
    Ok(load_checkpoint::<T>(&path, &cfg.model())?.model)
}

fn cmd_train<T: Scalar>(cfg: &RunConfig, manifest: Option<PathBuf>, out: &mut dyn Write) -> CliResult<()> {
    let manifest = require_manifest(manifest, cfg.paths.manifest.as_ref(), "training manifest")?;
    if manifest.is_empty() {
        return Err(CliError::Config("training manifest is empty".into()));
    }
    let dir = output_dir(cfg)?;
    let side = cfg.train.side_for(cfg.variant);
    let data = Samples::<T>::load(&manifest, side, cfg.task)?;
    create_dir(dir)?;
    let snapshot = dir.join(CONFIG_SNAPSHOT);
    fs::write(&snapshot, cfg.to_toml()).map_err(io_err(&snapshot))?;
    let model_cfg = cfg.model();
    let start = Instant::now();
    let (_, history) = train(&model_cfg, &cfg.train, &data, Some(dir))?;
    let last = history.last().expect("at least one epoch");
    writeln!(
        out,
        "trained {} for {} epochs in {:.1?}: loss {:.5}, train accuracy {:.4}, digest {}",
        cfg.variant,
        history.len(),
        start.elapsed(),
        last.loss,
        last.accuracy,
        model_cfg.digest()
    )
    .map_err(io_err(Path::new("<stdout>")))
}

fn cmd_eval<T: Scalar>(
    cfg: &RunConfig,
    checkpoint: Option<PathBuf>,
    manifest: Option<PathBuf>,
    out: &mut dyn Write,
) -> CliResult<()> {
    let fallback = cfg.paths.test_manifest.as_ref().or(cfg.paths.manifest.as_ref());
    let manifest = require_manifest(manifest, fallback, "evaluation manifest")?;
    if manifest.is_empty() {
        return Err(CliError::Config("evaluation manifest is empty".into()));
    }
    let model = load_model::<T>(cfg, checkpoint)?;
    let data = Samples::<T>::load(&manifest, cfg.train.side_for(cfg.variant), cfg.task)?;
    if cfg.task == Task::Classify && (data.labels.iter().all(|&l| l == 0) || data.labels.iter().all(|&l| l == 1)) {
        log::warn!("manifest has a single class; average precision is reported as 0");
    }
    let m = evaluate(&model, &data, cfg.train.batch_size)?;
    let rho = m.spearman.map(|v| v.to_string()).unwrap_or_default();
    let text = format!("count,accuracy,ap,spearman\n{},{},{},{}\n", m.count, m.accuracy, m.ap, rho);
    if let Some(dir) = &cfg.paths.out_dir {
        create_dir(dir)?;
        let path = dir.join("eval.csv");
        fs::write(&path, &text).map_err(io_err(&path))?;
    }
    out.write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))
}

fn cmd_score<T: Scalar>(
    cfg: &RunConfig,
    checkpoint: Option<PathBuf>,
    images: &[PathBuf],
    out: &mut dyn Write,
) -> CliResult<()> {
    let model = load_model::<T>(cfg, checkpoint)?;
    let side = cfg.train.side_for(cfg.variant);
    let stdout_err = io_err(Path::new("<stdout>"));
    let header = match cfg.task {
        Task::Classify => "path,p_low,p_high,label",
        Task::Regress => "path,score,label",
    };
    writeln!(out, "{header}").map_err(&stdout_err)?;
    let mut failed = 0;
    for path in images {
        let row = load_image::<T>(path, side).and_then(|img| predict(&model, &[img], 1));
        match row {
            Ok(preds) => {
                let line = match preds[0] {
                    Prediction::Class { p_low, p_high, label } => {
                        format!("{},{p_low},{p_high},{label}", path.display())
                    }
                    p @ Prediction::Score(s) => format!("{},{s},{}", path.display(), p.label()),
                };
                writeln!(out, "{line}").map_err(&stdout_err)?;
            }
            Err(e) => {
                failed += 1;
                eprintln!("{}", CliError::Core(e).to_json_for(path));
            }
        }
    }
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} of {} images could not be scored", images.len())));
    }
    Ok(())
}

fn cmd_heatmap<T: Scalar>(
    cfg: &RunConfig,
    checkpoint: Option<PathBuf>,
    image: &Path,
    query: Query,
    stage: Stage,
    out: &mut dyn Write,
) -> CliResult<()> {
    let dir = output_dir(cfg)?;
    let model = load_model::<T>(cfg, checkpoint)?;
    let img = load_image::<T>(image, cfg.train.side_for(cfg.variant))?;
    let map = heatmap(&model, &img, stage, query)?;
    create_dir(dir)?;
    let pgm = dir.join("heatmap.pgm");
    fs::write(&pgm, map.to_pgm()).map_err(io_err(&pgm))?;
    let csv = dir.join("heatmap.csv");
    fs::write(&csv, map.to_csv()).map_err(io_err(&csv))?;
    writeln!(
        out,
        "{}x{} heatmap for query ({}, {}) written to {}",
        map.rows,
        map.cols,
        map.query.0,
        map.query.1,
        dir.display()
    )
    .map_err(io_err(Path::new("<stdout>")))
}

/// Gradient check of the configured model on a deterministic batch of
/// synthetic images drawn from the config's seed.
pub fn gradcheck_report(
    cfg: &RunConfig,
    mode: BnMode,
    fd: &FdConfig,
    batch: usize,
    fault: Option<String>,
) -> CliResult<GradReport> {
    if batch == 0 || fd.samples == 0 || !(fd.step > 0.0) {
        return Err(CliError::Config("gradcheck needs batch >= 1, samples >= 1 and step > 0".into()));
    }
    let side = cfg.train.side_for(cfg.variant);
    let spec = SynthSpec {
        task: SynthTask::Easy,
        count: batch.max(2),
        side,
        seed: cfg.train.seed,
        ..SynthSpec::default()
    };
    spec.validate()?;
    let samples = Samples::<f64>::from_synth(&render_all(&spec)?, side, side)?;
    let images = Tensor::stack(&samples.images[..batch]).map_err(rgnet_core::Error::from)?;
    let targets: Vec<f64> = match cfg.task {
        Task::Classify => samples.targets[..batch].to_vec(),
        Task::Regress => (0..batch).map(|i| (i as f64 + 0.5) / batch as f64).collect(),
    };
    let model = RgNet::<f64>::new(&cfg.model(), cfg.train.seed)?;
    let fault = fault.map(|op| BackwardFault {
        op: Box::leak(op.into_boxed_str()),
        scale: 1.5,
    });
    Ok(gradcheck_model(&model, &images, &targets, mode, fd, fault)?)
}

fn write_report(report: &GradReport, out: &mut dyn Write) -> CliResult<()> {
    let err = io_err(Path::new("<stdout>"));
    writeln!(out, "tensor,max_rel_error,status").map_err(&err)?;
    for c in &report.checks {
        let status = if c.max_rel_error < report.tolerance { "ok" } else { "FAIL" };
        writeln!(out, "{},{:.3e},{status}", c.name, c.max_rel_error).map_err(&err)?;
    }
    let worst = report.worst().map_or(0.0, |c| c.max_rel_error);
    writeln!(
        out,
        "# {} tensors, worst relative error {worst:.3e}, tolerance {:.0e}: {}",
        report.checks.len(),
        report.tolerance,
        if report.passed() { "passed" } else { "failed" }
    )
    .map_err(&err)
}

fn cmd_ablate<T: Scalar>(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let train_set = require_manifest(None, cfg.paths.manifest.as_ref(), "training manifest")?;
    let test_set = require_manifest(None, cfg.paths.test_manifest.as_ref(), "test manifest")?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(CliError::Config("ablation manifests must not be empty".into()));
    }
    let dir = output_dir(cfg)?;
    create_dir(dir)?;
    let snapshot = dir.join(CONFIG_SNAPSHOT);
    fs::write(&snapshot, cfg.to_toml()).map_err(io_err(&snapshot))?;
    let runs_path = dir.join(ABLATION_RUNS_FILE);
    let mut runs_file = File::create(&runs_path).map_err(io_err(&runs_path))?;
    writeln!(runs_file, "variant,seed,accuracy,ap").map_err(io_err(&runs_path))?;
    let mut write_err = None;
    let runs = run_ablation::<T>(
        &cfg.model(),
        &cfg.train,
        &train_set,
        &test_set,
        &cfg.ablation.variants,
        &cfg.ablation.seeds,
        |r: &AblationRun| {
            log::info!("{} seed {}: accuracy {:.4}, ap {:.4}", r.variant, r.seed, r.accuracy, r.ap);
            if let Err(e) = writeln!(runs_file, "{},{},{},{}", r.variant, r.seed, r.accuracy, r.ap) {
                write_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = write_err {
        return Err(io_err(&runs_path)(e));
    }
    fs::write(&runs_path, runs_csv(&runs)).map_err(io_err(&runs_path))?;
    let table = summary_csv(&summarize(&runs));
    let path = dir.join(ABLATION_FILE);
    fs::write(&path, &table).map_err(io_err(&path))?;
    out.write_all(table.as_bytes()).map_err(io_err(Path::new("<stdout>")))
}

fn cmd_synth(spec_path: &Path, seed: Option<u64>, out_dir: Option<&Path>, out: &mut dyn Write) -> CliResult<()> {
    let text = fs::read_to_string(spec_path)
        .map_err(|e| CliError::Config(format!("cannot read spec {}: {e}", spec_path.display())))?;
    let mut spec: SynthSpec =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("spec: {}", e.message().trim())))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    let dir = out_dir.ok_or_else(|| CliError::Config("synth needs --out".into()))?;
    let manifest = generate_synthetic(&spec, dir)?;
    writeln!(out, "{} images written to {}", manifest.len(), dir.display()).map_err(io_err(Path::new("<stdout>")))
}
