//! Training runs, sliding-window inference and regime recommendation.

mod predict;
mod recommend;
pub mod toy;

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_augment_with_coverage, normalize, AugmentPolicy, NormalizationStats};
use crate::error::{Error, Result};
use crate::eval::{evaluate_dataset, EvalReport, ReportMetadata};
use crate::losses::{MccConfig, Regime};
use crate::model::{training_step, Adam, AdamConfig, ArchitectureRegistry, ArchitectureSpec, Checkpoint, Mode, SegmentationNetwork};
use crate::pipeline::{load_manifest, load_pairs, random_crop, DatasetDescriptor, RasterPair, Split};
use crate::sampler::{compose_batch, single_domain_batch, Domain, Sample, SampleStream};
use crate::taxonomy::{presets, ClassTaxonomy, RemapConfig, RemapTable};

pub use predict::{predict_scene, Predictor};
pub use recommend::{recommend_regime, RegimeRecommendation};

pub const CHECKPOINT_FILE: &str = "checkpoint.mccseg";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const VALIDATION_REPORT_FILE: &str = "validation_report.json";

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub regime: Regime,
    pub target: PathBuf,
    pub source: Option<PathBuf>,
    /// Remap preset name or remap config path; required when the dataset is not in land-cover classes.
    pub target_remap: Option<String>,
    pub source_remap: Option<String>,
    /// Power-of-two factor that brings the source to the target resolution.
    pub source_downscale: u32,
    pub architecture: ArchitectureSpec,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub crop_size: usize,
    pub augment: AugmentPolicy,
    pub normalization: NormalizationStats,
    pub mcc: MccConfig,
    pub optimizer: AdamConfig,
    /// Validate every this many steps; 0 validates only after the last step.
    pub validation_interval: usize,
    pub eval_window: usize,
    pub eval_stride: usize,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Supervised,
            target: PathBuf::new(),
            source: None,
            target_remap: None,
            source_remap: None,
            source_downscale: 1,
            architecture: ArchitectureSpec::mini_unet(ClassTaxonomy::land_cover().len()),
            batch_size: 8,
            steps: 500,
            seed: 0,
            crop_size: 32,
            augment: AugmentPolicy::default(),
            normalization: NormalizationStats::default(),
            mcc: MccConfig::default(),
            optimizer: AdamConfig::default(),
            validation_interval: 50,
            eval_window: 512,
            eval_stride: 512,
            out: PathBuf::from("run"),
        }
    }
}

impl RunConfig {
    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.target.as_os_str().is_empty() {
            return bad("a target manifest is required".into());
        }
        if self.regime.needs_source() && self.source.is_none() {
            return bad(format!("regime {} requires a source manifest", self.regime));
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.regime.needs_source() && !self.batch_size.is_multiple_of(2) {
            return Err(Error::OddBatchSize(self.batch_size));
        }
        if self.crop_size == 0 {
            return bad("crop size must be positive".into());
        }
        if self.eval_window == 0 || self.eval_stride == 0 || self.eval_stride > self.eval_window {
            return bad("evaluation needs 0 < stride <= window".into());
        }
        if self.source_downscale == 0 || !self.source_downscale.is_power_of_two() {
            return bad(format!("source downscale {} is not a power of two", self.source_downscale));
        }
        let classes = ClassTaxonomy::land_cover().len();
        if self.architecture.num_classes != classes {
            return bad(format!(
                "architecture predicts {} classes but training uses {classes}",
                self.architecture.num_classes
            ));
        }
        self.architecture.validate()?;
        self.augment.validate()?;
        self.mcc.validate(classes)?;
        if !(self.optimizer.learning_rate > 0.0) {
            return bad("learning rate must be positive".into());
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub loss: f64,
    pub loss_sn: f64,
    pub loss_mcc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_miou: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub records: Vec<MetricsRecord>,
    pub final_val_miou: Option<f64>,
    pub validation: Option<EvalReport>,
    pub checkpoint: PathBuf,
    pub metrics_log: PathBuf,
}

/// Resolves a remap preset name or a remap config file.
pub fn resolve_remap(spec: &str) -> Result<RemapTable> {
    match presets::by_name(spec) {
        Some(cfg) => cfg.build(),
        None => RemapConfig::load(Path::new(spec))?.build(),
    }
}

/// Loads `split` of a dataset in land-cover classes, remapping when needed.
pub fn load_land_cover_pairs(descriptor: &DatasetDescriptor, remap: Option<&str>, split: Split) -> Result<Vec<RasterPair>> {
    let land_cover = ClassTaxonomy::land_cover();
    let table = match remap {
        Some(spec) => Some(resolve_remap(spec)?),
        None if descriptor.taxonomy == land_cover => None,
        None => {
            return Err(Error::Config(format!(
                "dataset `{}` is not in land-cover classes and has no remap table",
                descriptor.name
            )))
        }
    };
    if let Some(t) = &table {
        if t.source() != &descriptor.taxonomy || t.target() != &land_cover {
            return Err(Error::Config(format!(
                "remap table does not map dataset `{}` onto land-cover classes",
                descriptor.name
            )));
        }
    }
    load_pairs(descriptor, split)?
        .into_iter()
        .map(|p| match &table {
            Some(t) => p.remapped(t),
            None => Ok(p),
        })
        .collect()
}

/// Predicts and scores every pair with `net` in eval mode, then restores its previous mode.
pub fn evaluate_pairs(
    net: &mut dyn SegmentationNetwork,
    stats: &NormalizationStats,
    pairs: &[RasterPair],
    window: usize,
    stride: usize,
    metadata: ReportMetadata,
) -> Result<EvalReport> {
    let previous = net.mode();
    net.set_mode(Mode::Eval);
    let predictions: Result<Vec<_>> = pairs
        .iter()
        .map(|p| {
            let win = window.min(p.height()).min(p.width());
            let stride = stride.min(win);
            Ok((p.id.clone(), predict::predict_with(net, stats, p.image.view(), win, stride)?))
        })
        .collect();
    net.set_mode(previous);
    let truth: Vec<_> = pairs.iter().map(|p| (p.id.clone(), p.labels.clone())).collect();
    evaluate_dataset(&predictions?, &truth, &ClassTaxonomy::land_cover(), metadata)
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rand::Rng::gen(&mut rng)
}

fn load_sample(
    pair: &RasterPair,
    cfg: &RunConfig,
    progress: f64,
    unknown: u8,
    rng: &mut ChaCha8Rng,
) -> Result<Sample> {
    let crop = if pair.height() == cfg.crop_size && pair.width() == cfg.crop_size {
        pair.clone()
    } else {
        random_crop(pair, cfg.crop_size, rng)?
    };
    if cfg.augment.ops_per_sample == 0 {
        return Ok(Sample::new(crop.id, normalize(crop.image.view(), &cfg.normalization), crop.labels));
    }
    let (image, labels, coverage) =
        apply_augment_with_coverage(crop.image.view(), crop.labels.view(), progress, rng, &cfg.augment, unknown)?;
    Ok(Sample::new(crop.id, normalize(image.view(), &cfg.normalization), labels).with_valid(coverage))
}

/// Runs `config.steps` optimisation steps and writes the checkpoint and metrics log.
pub fn train_run(config: &RunConfig) -> Result<RunSummary> {
    train_run_with(config, &ArchitectureRegistry::default())
}

pub fn train_run_with(config: &RunConfig, registry: &ArchitectureRegistry) -> Result<RunSummary> {
    config.validate()?;
    let target = load_manifest(&config.target)?;
    let source = match &config.source {
        Some(path) if config.regime.needs_source() => {
            let d = load_manifest(path)?;
            Some(if config.source_downscale > 1 { d.downscaled(config.source_downscale)? } else { d })
        }
        _ => None,
    };
    let target_train = load_land_cover_pairs(&target, config.target_remap.as_deref(), Split::Train)?;
    let target_val = load_land_cover_pairs(&target, config.target_remap.as_deref(), Split::Test)?;
    let source_train = match &source {
        Some(d) => load_land_cover_pairs(d, config.source_remap.as_deref(), Split::Train)?,
        None => Vec::new(),
    };
    if target_train.is_empty() {
        return Err(Error::EmptyStream("target"));
    }
    if config.regime.needs_source() && source_train.is_empty() {
        return Err(Error::EmptyStream("source"));
    }
    for p in target_train.iter().chain(&source_train) {
        if p.height() < config.crop_size || p.width() < config.crop_size {
            return Err(Error::Config(format!(
                "pair `{}` ({}x{}) is smaller than the {} crop",
                p.id,
                p.height(),
                p.width(),
                config.crop_size
            )));
        }
    }

    std::fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
    let config_path = config.out.join(CONFIG_FILE);
    std::fs::write(&config_path, serde_json::to_string_pretty(config)? + "\n").map_err(|e| Error::io(&config_path, e))?;
    let metrics_path = config.out.join(METRICS_FILE);
    let mut metrics = std::io::BufWriter::new(std::fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?);

    let unknown = ClassTaxonomy::land_cover().unknown_index();
    let mut net = registry.build(&config.architecture, config.seed)?;
    net.set_mode(Mode::Train);
    let mut optimizer = Adam::new(config.optimizer);
    let mut target_stream = SampleStream::new("target", target_train.len(), stream_seed(config.seed, 1))?;
    let mut source_stream = if source_train.is_empty() {
        None
    } else {
        Some(SampleStream::new("source", source_train.len(), stream_seed(config.seed, 2))?)
    };
    let mut target_rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, 3));
    let mut source_rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, 4));
    let mut loss_rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, 5));
    let metadata = ReportMetadata {
        regime: config.regime,
        source_dataset: source.as_ref().map_or_else(|| "none".to_string(), |d| d.name.clone()),
        seed: config.seed,
        split: None,
    };

    let mut records = Vec::with_capacity(config.steps);
    let mut validation = None;
    for step in 0..config.steps {
        let progress = step as f64 / config.steps as f64;
        let mut load = |domain: Domain, i: usize| match domain {
            Domain::Target => load_sample(&target_train[i], config, progress, unknown, &mut target_rng),
            Domain::Source => load_sample(&source_train[i], config, progress, unknown, &mut source_rng),
        };
        let batch = match (&mut source_stream, config.regime) {
            (_, Regime::Supervised) => single_domain_batch(&mut target_stream, config.batch_size, &mut load)?,
            (Some(s), _) => compose_batch(&mut target_stream, s, config.batch_size, &mut load)?,
            (None, _) => return Err(Error::EmptyStream("source")),
        };
        let outcome = training_step(
            net.as_mut(),
            &batch,
            config.regime,
            &config.mcc,
            unknown,
            &mut optimizer,
            &mut loss_rng,
        )?;
        let done = step + 1;
        let validate_now = !target_val.is_empty()
            && (done == config.steps || (config.validation_interval > 0 && done % config.validation_interval == 0));
        let val_miou = if validate_now {
            let report = evaluate_pairs(
                net.as_mut(),
                &config.normalization,
                &target_val,
                config.eval_window,
                config.eval_stride,
                metadata.clone(),
            )?;
            let m = report.mean_iou;
            validation = Some(report);
            m
        } else {
            None
        };
        let record = MetricsRecord {
            step: done,
            loss: outcome.loss,
            loss_sn: outcome.supervised,
            loss_mcc: outcome.mcc,
            val_miou,
        };
        writeln!(metrics, "{}", serde_json::to_string(&record)?).map_err(|e| Error::io(&metrics_path, e))?;
        records.push(record);
    }
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;

    let checkpoint_path = config.out.join(CHECKPOINT_FILE);
    Checkpoint::capture(net.as_ref(), &optimizer, config.seed, serde_json::to_value(config)?).save(&checkpoint_path)?;
    if let Some(report) = &validation {
        report.save(&config.out.join(VALIDATION_REPORT_FILE))?;
    }
    Ok(RunSummary {
        final_val_miou: validation.as_ref().and_then(|r| r.mean_iou),
        validation,
        records,
        checkpoint: checkpoint_path,
        metrics_log: metrics_path,
    })
}

/// Reads a metrics log written by [`train_run`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
