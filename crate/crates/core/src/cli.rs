//! Command-line front end: `mccseg <verb> [options]`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{emit_report, render_report, EvalReport, ReportMetadata};
use crate::losses::Regime;
use crate::model::{ArchitectureRegistry, ArchitectureSpec, Checkpoint};
use crate::orchestrate::{
    evaluate_pairs, load_land_cover_pairs, recommend_regime, train_run, Predictor, RunConfig,
};
use crate::pipeline::{load_manifest, Split};
use crate::raster::{read_rgb, write_labels};
use crate::taxonomy::validate_remap;

/// Environment variable that anchors relative manifest paths.
pub const DATA_ROOT_ENV: &str = "MCCSEG_DATA_ROOT";

#[derive(Parser, Debug)]
#[command(name = "mccseg", version, about = "Multi-source land-cover segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load and validate a dataset manifest.
    Ingest(IngestArgs),
    /// Train one regime and write a checkpoint plus metrics log.
    Train(TrainArgs),
    /// Predict every image of a manifest split and write an evaluation report.
    Evaluate(EvaluateArgs),
    /// Label one RGB image with sliding-window inference.
    Predict(PredictArgs),
    /// Combine evaluation reports into a comparison table.
    Report(ReportArgs),
    /// Recommend a regime from dataset compatibility.
    Recommend(RecommendArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Remap preset name or remap config path onto land-cover classes.
    #[arg(long)]
    remap: Option<String>,
}

/// Flags mirror `RunConfig`; any flag given overrides the `--config` file.
#[derive(Args, Debug, Default)]
struct TrainArgs {
    /// JSON run config supplying defaults for every other flag.
    #[arg(long)]
    config: Option<PathBuf>,
    /// supervised | combined | mcc_semi | mcc_transfer [default: supervised]
    #[arg(long)]
    regime: Option<Regime>,
    /// Target dataset manifest (required here or in --config).
    #[arg(long)]
    target: Option<PathBuf>,
    /// Source dataset manifest; required by every regime except supervised.
    #[arg(long)]
    source: Option<PathBuf>,
    /// Remap preset or config for the target dataset.
    #[arg(long)]
    target_remap: Option<String>,
    /// Remap preset or config for the source dataset.
    #[arg(long)]
    source_remap: Option<String>,
    /// Power-of-two source downscale factor [default: 1]
    #[arg(long)]
    source_downscale: Option<u32>,
    /// Network architecture [default: mini-unet]
    #[arg(long)]
    arch: Option<String>,
    /// Mini-batch size; must be even for mixed regimes [default: 8]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Optimisation steps [default: 500]
    #[arg(long)]
    steps: Option<usize>,
    /// Seed for initialisation, sampling and augmentation [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Square training crop size [default: 32]
    #[arg(long)]
    crop_size: Option<usize>,
    /// MCC softmax temperature [default: 2.5]
    #[arg(long)]
    mcc_temperature: Option<f64>,
    /// Pixels sampled per MCC evaluation, 0 for all [default: 4096]
    #[arg(long)]
    mcc_subsample: Option<usize>,
    /// Validate every N steps, 0 for only the last step [default: 50]
    #[arg(long)]
    validation_interval: Option<usize>,
    /// Output directory [default: run]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Manifest whose images are predicted and scored.
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    remap: Option<String>,
    /// Manifest split to evaluate.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 512)]
    window: usize,
    #[arg(long, default_value_t = 512)]
    stride: usize,
    /// Label stored in the report; `urban` fills the building column of the table.
    #[arg(long)]
    split_label: Option<String>,
    #[arg(long, default_value = "eval_report.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// RGB PNG to label.
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value_t = 512)]
    window: usize,
    #[arg(long, default_value_t = 512)]
    stride: usize,
    /// Output label PNG.
    #[arg(long, default_value = "prediction.png")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Evaluation report files.
    #[arg(long, num_args = 1.., required = true)]
    reports: Vec<PathBuf>,
    /// CSV output path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RecommendArgs {
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    source: Option<PathBuf>,
    /// Power-of-two factor applied to the source before comparing zoom levels.
    #[arg(long, default_value_t = 1)]
    source_downscale: u32,
}

/// Stored alongside the run config inside every checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointRun {
    pub regime: Regime,
    pub seed: u64,
    #[serde(default)]
    pub source: Option<PathBuf>,
}

/// Anchors a relative manifest path at `MCCSEG_DATA_ROOT` when it is set.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) if path.is_relative() && !root.is_empty() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
    }
}

impl TrainArgs {
    fn into_config(self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str::<RunConfig>(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = self.regime {
            cfg.regime = v;
        }
        if let Some(v) = self.target {
            cfg.target = v;
        }
        if let Some(v) = self.source {
            cfg.source = Some(v);
        }
        if let Some(v) = self.target_remap {
            cfg.target_remap = Some(v);
        }
        if let Some(v) = self.source_remap {
            cfg.source_remap = Some(v);
        }
        if let Some(v) = self.source_downscale {
            cfg.source_downscale = v;
        }
        if let Some(name) = self.arch {
            if name != cfg.architecture.name {
                cfg.architecture = ArchitectureSpec {
                    name,
                    ..ArchitectureSpec::mini_unet(cfg.architecture.num_classes)
                };
            }
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.crop_size {
            cfg.crop_size = v;
        }
        if let Some(v) = self.mcc_temperature {
            cfg.mcc.temperature = v;
        }
        if let Some(v) = self.mcc_subsample {
            cfg.mcc.pixel_subsample = (v > 0).then_some(v);
        }
        if let Some(v) = self.validation_interval {
            cfg.validation_interval = v;
        }
        if let Some(v) = self.out {
            cfg.out = v;
        }
        if cfg.target.as_os_str().is_empty() {
            return Err(Error::Config("--target is required (flag or config file)".into()));
        }
        cfg.target = resolve_data_path(&cfg.target);
        cfg.source = cfg.source.as_deref().map(resolve_data_path);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let io = |e: std::io::Error| Error::io("<stdout>", e);
    match cli.command {
        Command::Ingest(a) => {
            let d = load_manifest(&resolve_data_path(&a.manifest))?;
            writeln!(
                out,
                "{}: {} pairs ({} train, {} test), zoom {}, rules `{}`, {} classes",
                d.name,
                d.pairs.len(),
                d.pairs_in(Split::Train).count(),
                d.pairs_in(Split::Test).count(),
                d.zoom_level,
                d.annotation_rules_id,
                d.taxonomy.len()
            )
            .map_err(io)?;
            if let Some(spec) = a.remap {
                let table = crate::orchestrate::resolve_remap(&spec)?;
                if table.source() != &d.taxonomy {
                    return Err(Error::Remap(format!("remap `{spec}` does not match the taxonomy of `{}`", d.name)));
                }
                for w in validate_remap(&table).warnings() {
                    writeln!(out, "warning: {w}").map_err(io)?;
                }
            }
        }
        Command::Train(a) => {
            let cfg = a.into_config()?;
            let summary = train_run(&cfg)?;
            let last = summary.records.last().expect("at least one step");
            writeln!(out, "regime {} steps {} final loss {:.6}", cfg.regime, last.step, last.loss).map_err(io)?;
            if let Some(m) = summary.final_val_miou {
                writeln!(out, "validation miou {m:.4}").map_err(io)?;
            }
            writeln!(out, "checkpoint {}", summary.checkpoint.display()).map_err(io)?;
        }
        Command::Evaluate(a) => {
            let split = parse_split(&a.split)?;
            if a.window == 0 || a.stride == 0 || a.stride > a.window {
                return Err(Error::InvalidArgument("need 0 < stride <= window".into()));
            }
            let checkpoint = Checkpoint::load(&a.checkpoint)?;
            let run: CheckpointRun = serde_json::from_value(checkpoint.config.clone())
                .map_err(|e| Error::Checkpoint(format!("stored run config: {e}")))?;
            let target = load_manifest(&resolve_data_path(&a.target))?;
            let pairs = load_land_cover_pairs(&target, a.remap.as_deref(), split)?;
            if pairs.is_empty() {
                return Err(Error::EmptyStream("evaluation split"));
            }
            for p in &pairs {
                if a.window > p.height() || a.window > p.width() {
                    return Err(Error::WindowExceedsImage {
                        window: a.window,
                        height: p.height(),
                        width: p.width(),
                    });
                }
            }
            let source_dataset = match &run.source {
                Some(path) if run.regime.needs_source() => load_manifest(path).map(|d| d.name).unwrap_or_else(|_| {
                    path.file_stem().map_or("source".into(), |s| s.to_string_lossy().into_owned())
                }),
                _ => "none".into(),
            };
            let metadata = ReportMetadata {
                regime: run.regime,
                source_dataset,
                seed: run.seed,
                split: a.split_label,
            };
            let mut predictor = Predictor::from_checkpoint(&checkpoint, &ArchitectureRegistry::default())?;
            let stats = predictor.normalization();
            let report = evaluate_pairs(predictor.network_mut(), &stats, &pairs, a.window, a.stride, metadata)?;
            report.save(&a.out)?;
            writeln!(out, "miou {}", report.mean_iou.map_or("n/a".into(), |m| format!("{m:.4}"))).map_err(io)?;
            for d in &report.diagnostics {
                writeln!(out, "note: {d}").map_err(io)?;
            }
        }
        Command::Predict(a) => {
            let checkpoint = Checkpoint::load(&a.checkpoint)?;
            let image = read_rgb(&a.image)?;
            let labels = crate::orchestrate::predict_scene(&checkpoint, image.view(), a.window, a.stride)?;
            write_labels(&a.out, labels.view())?;
            writeln!(out, "wrote {}", a.out.display()).map_err(io)?;
        }
        Command::Report(a) => {
            let reports = a.reports.iter().map(|p| EvalReport::load(p)).collect::<Result<Vec<_>>>()?;
            match a.out {
                Some(path) => emit_report(&reports, &path)?,
                None => out.write_all(render_report(&reports)?.as_bytes()).map_err(io)?,
            }
        }
        Command::Recommend(a) => {
            let target = load_manifest(&resolve_data_path(&a.target))?;
            let source = match &a.source {
                Some(p) => {
                    let d = load_manifest(&resolve_data_path(p))?;
                    Some(if a.source_downscale > 1 { d.downscaled(a.source_downscale)? } else { d })
                }
                None => None,
            };
            let rec = recommend_regime(&target, source.as_ref());
            writeln!(out, "{}", rec.regime).map_err(io)?;
            for r in &rec.reasons {
                writeln!(out, "  - {r}").map_err(io)?;
            }
        }
    }
    Ok(())
}

/// Parses `argv` (including the program name), runs the verb and returns the exit code:
/// 0 on success, 1 on usage or validation errors, 2 on runtime failures.
pub fn run_cli_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    0
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    1
                }
            };
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_cli_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}
