//! Synthetic two-domain land-cover scenes for desk-scale experiments.
//!
//! Both domains share one scene layout generator and one label convention; they
//! differ in hue, texture scale and noise level.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::augment::{AugmentOp, AugmentPolicy};
use crate::error::{Error, Result};
use crate::losses::Regime;
use crate::pipeline::{DatasetDescriptor, PairRef, Split};
use crate::raster::{write_labels, write_rgb, LabelMap, RgbImage};
use crate::taxonomy::ClassTaxonomy;

/// Appearance parameters of one synthetic domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyStyle {
    pub hue_shift_degrees: f64,
    /// Base RGB colour of classes 1..=4 before the hue shift.
    pub class_colors: [[f64; 3]; 4],
    pub pixel_noise: f64,
    pub texture_strength: f64,
    pub grid_period: usize,
    pub blotch_cell: usize,
    pub brightness_jitter: f64,
    /// Probability that a scene contains one no-data patch labelled unknown.
    pub nodata_probability: f64,
}

impl ToyStyle {
    pub fn target() -> Self {
        Self {
            hue_shift_degrees: 0.0,
            class_colors: [[128.0, 122.0, 118.0], [150.0, 145.0, 95.0], [75.0, 100.0, 130.0], [70.0, 105.0, 70.0]],
            pixel_noise: 28.0,
            texture_strength: 26.0,
            grid_period: 8,
            blotch_cell: 5,
            brightness_jitter: 20.0,
            nodata_probability: 0.2,
        }
    }

    pub fn source() -> Self {
        Self {
            hue_shift_degrees: 12.0,
            pixel_noise: 34.0,
            grid_period: 6,
            blotch_cell: 3,
            ..Self::target()
        }
    }
}

/// Value noise in `[-1, 1]`: random lattice values, bilinearly interpolated.
fn value_noise<R: Rng + ?Sized>(size: usize, cell: usize, rng: &mut R) -> Array2<f64> {
    let cell = cell.max(1);
    let n = size / cell + 2;
    let lattice = Array2::from_shape_fn((n, n), |_| rng.gen_range(-1.0..1.0));
    Array2::from_shape_fn((size, size), |(y, x)| {
        let fy = y as f64 / cell as f64;
        let fx = x as f64 / cell as f64;
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
        let top = lattice[[y0, x0]] * (1.0 - tx) + lattice[[y0, x0 + 1]] * tx;
        let bottom = lattice[[y0 + 1, x0]] * (1.0 - tx) + lattice[[y0 + 1, x0 + 1]] * tx;
        top * (1.0 - ty) + bottom * ty
    })
}

fn hue_matrix(degrees: f64) -> [[f64; 3]; 3] {
    let (s, c) = degrees.to_radians().sin_cos();
    [
        [0.299 + 0.701 * c + 0.168 * s, 0.587 - 0.587 * c + 0.330 * s, 0.114 - 0.114 * c - 0.497 * s],
        [0.299 - 0.299 * c - 0.328 * s, 0.587 + 0.413 * c + 0.035 * s, 0.114 - 0.114 * c + 0.292 * s],
        [0.299 - 0.300 * c + 1.250 * s, 0.587 - 0.588 * c - 1.050 * s, 0.114 + 0.886 * c - 0.203 * s],
    ]
}

/// Random layout of rectangles and discs over a background class.
fn scene_labels<R: Rng + ?Sized>(size: usize, nodata_probability: f64, rng: &mut R) -> LabelMap {
    let mut labels = Array2::from_elem((size, size), rng.gen_range(1..=4u8));
    let s = size as f64;
    for _ in 0..rng.gen_range(3..=6) {
        let class = rng.gen_range(1..=4u8);
        let cy = rng.gen_range(0.0..s);
        let cx = rng.gen_range(0.0..s);
        if rng.gen_bool(0.5) {
            let hh = rng.gen_range(0.06..0.25) * s;
            let hw = rng.gen_range(0.06..0.25) * s;
            labels.indexed_iter_mut().for_each(|((y, x), v)| {
                if (y as f64 - cy).abs() <= hh && (x as f64 - cx).abs() <= hw {
                    *v = class;
                }
            });
        } else {
            let r = rng.gen_range(0.08..0.25) * s;
            labels.indexed_iter_mut().for_each(|((y, x), v)| {
                if (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r {
                    *v = class;
                }
            });
        }
    }
    if rng.gen_bool(nodata_probability) {
        let h = rng.gen_range(size / 16..=size / 6).max(1);
        let w = rng.gen_range(size / 16..=size / 6).max(1);
        let y0 = rng.gen_range(0..=size - h);
        let x0 = rng.gen_range(0..=size - w);
        labels.slice_mut(ndarray::s![y0..y0 + h, x0..x0 + w]).fill(0);
    }
    labels
}

/// Renders one `size` x `size` scene in the given style.
pub fn toy_scene<R: Rng + ?Sized>(style: &ToyStyle, size: usize, rng: &mut R) -> (RgbImage, LabelMap) {
    let labels = scene_labels(size, style.nodata_probability, rng);
    let water = value_noise(size, 16, rng);
    let blotch = value_noise(size, style.blotch_cell, rng);
    let brightness = rng.gen_range(-style.brightness_jitter..=style.brightness_jitter);
    let noise = Normal::new(0.0, style.pixel_noise.max(1e-9)).expect("positive std");
    let hue = hue_matrix(style.hue_shift_degrees);
    let period = style.grid_period.max(2);

    let mut image = Array3::<u8>::zeros((size, size, 3));
    for ((y, x), &class) in labels.indexed_iter() {
        let base = if class == 0 {
            [235.0; 3]
        } else {
            style.class_colors[class as usize - 1]
        };
        let texture = match class {
            1 => {
                if y % period < 2 || x % period < 2 {
                    1.0
                } else {
                    -0.4
                }
            }
            2 => rng.gen_range(-1.0..1.0),
            3 => 0.5 * water[[y, x]],
            4 => blotch[[y, x]],
            _ => 0.0,
        };
        let shade = brightness + style.texture_strength * texture;
        let rgb: Vec<f64> = base.iter().map(|b| b + shade + noise.sample(rng)).collect();
        for k in 0..3 {
            let v = hue[k][0] * rgb[0] + hue[k][1] * rgb[1] + hue[k][2] * rgb[2];
            image[[y, x, k]] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    (image, labels)
}

/// Sizes and seed of a generated two-domain corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub scene_size: usize,
    pub target_train: usize,
    pub target_test: usize,
    pub source_train: usize,
    pub seed: u64,
    pub target_style: ToyStyle,
    pub source_style: ToyStyle,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            scene_size: 64,
            target_train: 3,
            target_test: 16,
            source_train: 48,
            seed: 2024,
            target_style: ToyStyle::target(),
            source_style: ToyStyle::source(),
        }
    }
}

/// Manifest paths of a generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyCorpus {
    pub target_manifest: PathBuf,
    pub source_manifest: PathBuf,
}

fn write_domain(
    dir: &Path,
    name: &str,
    style: &ToyStyle,
    counts: &[(Split, usize)],
    size: usize,
    seed: u64,
) -> Result<PathBuf> {
    let domain_dir = dir.join(name);
    std::fs::create_dir_all(&domain_dir).map_err(|e| Error::io(&domain_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for &(split, n) in counts {
        let tag = match split {
            Split::Train => "train",
            Split::Test => "test",
        };
        for i in 0..n {
            let id = format!("{name}_{tag}_{i:03}");
            let (image, labels) = toy_scene(style, size, &mut rng);
            write_rgb(&domain_dir.join(format!("{id}_rgb.png")), image.view())?;
            write_labels(&domain_dir.join(format!("{id}_lbl.png")), labels.view())?;
            pairs.push(PairRef {
                id: id.clone(),
                image: PathBuf::from(name).join(format!("{id}_rgb.png")),
                labels: PathBuf::from(name).join(format!("{id}_lbl.png")),
                split,
            });
        }
    }
    let descriptor = DatasetDescriptor {
        name: name.into(),
        zoom_level: 16,
        taxonomy: ClassTaxonomy::land_cover(),
        annotation_rules_id: "toy-rules".into(),
        meters_per_pixel_image: 2.4,
        meters_per_pixel_label: 2.4,
        pairs,
        downscale: 1,
    };
    let path = dir.join(format!("{name}.json"));
    descriptor.save(&path)?;
    Ok(path)
}

/// Writes `toy_target` and `toy_source` manifests plus PNG rasters under `dir`.
pub fn write_toy_corpus(dir: &Path, cfg: &ToyConfig) -> Result<ToyCorpus> {
    if cfg.scene_size < 16 || cfg.target_train == 0 || cfg.source_train == 0 {
        return Err(Error::Config("toy corpus needs scene_size >= 16 and non-empty training sets".into()));
    }
    let target_manifest = write_domain(
        dir,
        "toy_target",
        &cfg.target_style,
        &[(Split::Train, cfg.target_train), (Split::Test, cfg.target_test)],
        cfg.scene_size,
        cfg.seed,
    )?;
    let source_manifest = write_domain(
        dir,
        "toy_source",
        &cfg.source_style,
        &[(Split::Train, cfg.source_train)],
        cfg.scene_size,
        cfg.seed.wrapping_add(0x5EED),
    )?;
    Ok(ToyCorpus {
        target_manifest,
        source_manifest,
    })
}

/// Seed of the reference toy experiment.
pub const TOY_RUN_SEED: u64 = 7;

/// Run config of one regime in the toy experiment: 500 steps of mini-unet on 32x32 crops.
///
/// Augmentation is restricted to the geometric ops. Toy classes are told apart mostly
/// by colour, and colour inversion would map one class onto another's appearance.
pub fn toy_run_config(regime: Regime, corpus: &ToyCorpus, seed: u64, out: PathBuf) -> RunConfig {
    let op_set = AugmentOp::ALL.into_iter().filter(|op| *op != AugmentOp::InvertColors).collect();
    RunConfig {
        augment: AugmentPolicy {
            op_set,
            ..AugmentPolicy::default()
        },
        regime,
        target: corpus.target_manifest.clone(),
        source: regime.needs_source().then(|| corpus.source_manifest.clone()),
        steps: 500,
        seed,
        validation_interval: 100,
        out,
        ..RunConfig::default()
    }
}
