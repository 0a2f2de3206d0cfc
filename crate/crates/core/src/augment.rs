//! RandAugment-style paired geometric augmentation with a progressive rotation limit.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{LabelMap, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentOp {
    Translate,
    Resize,
    Rotate,
    Shear,
    InvertColors,
    FlipHorizontal,
    FlipVertical,
}

impl AugmentOp {
    pub const ALL: [AugmentOp; 7] = [
        AugmentOp::Translate,
        AugmentOp::Resize,
        AugmentOp::Rotate,
        AugmentOp::Shear,
        AugmentOp::InvertColors,
        AugmentOp::FlipHorizontal,
        AugmentOp::FlipVertical,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPolicy {
    pub op_set: Vec<AugmentOp>,
    pub ops_per_sample: usize,
    pub rotation_max_degrees: f64,
    pub rotation_sections: u32,
    /// Maximum translation as a fraction of the spatial extent.
    pub translate_fraction: f64,
    pub shear_max_degrees: f64,
    pub scale_range: (f64, f64),
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            op_set: AugmentOp::ALL.to_vec(),
            ops_per_sample: 2,
            rotation_max_degrees: 150.0,
            rotation_sections: 10,
            translate_fraction: 0.1,
            shear_max_degrees: 10.0,
            scale_range: (0.9, 1.1),
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("augment policy: {m}")));
        let mut seen = std::collections::HashSet::new();
        if !self.op_set.iter().all(|op| seen.insert(*op)) {
            return bad("op_set contains duplicates");
        }
        if self.ops_per_sample > self.op_set.len() {
            return bad("ops_per_sample exceeds the op set size");
        }
        if self.rotation_sections < 1 {
            return bad("rotation_sections must be at least 1");
        }
        if !(self.rotation_max_degrees > 0.0) {
            return bad("rotation_max_degrees must be positive");
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad("scale_range must satisfy 0 < min <= max");
        }
        if !(self.translate_fraction >= 0.0 && self.shear_max_degrees >= 0.0) {
            return bad("translate/shear magnitudes must be non-negative");
        }
        Ok(())
    }
}

fn check_progress(progress: f64) -> Result<()> {
    if (0.0..=1.0).contains(&progress) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("progress {progress} outside [0, 1]")))
    }
}

/// Rotation bound for the training section containing `progress`.
pub fn rotation_limit(progress: f64, policy: &AugmentPolicy) -> Result<f64> {
    check_progress(progress)?;
    let sections = policy.rotation_sections;
    let section = ((progress * sections as f64).floor() as u32).min(sections - 1);
    Ok((section + 1) as f64 * policy.rotation_max_degrees / sections as f64)
}

/// Inverse affine map from output pixel coordinates `(x, y)` to input coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Affine {
    m: [[f64; 3]; 2],
}

impl Affine {
    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        (m[0][0] * x + m[0][1] * y + m[0][2], m[1][0] * x + m[1][1] * y + m[1][2])
    }

    /// Builds the inverse of a linear map `a` about the raster centre, followed by a shift.
    fn about_center(a: [[f64; 2]; 2], shift: (f64, f64), h: usize, w: usize) -> Self {
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
        // out = A (in - c) + c + shift  =>  in = A^-1 (out - c - shift) + c
        let (ox, oy) = (cx + shift.0, cy + shift.1);
        Self {
            m: [
                [inv[0][0], inv[0][1], cx - inv[0][0] * ox - inv[0][1] * oy],
                [inv[1][0], inv[1][1], cy - inv[1][0] * ox - inv[1][1] * oy],
            ],
        }
    }
}

/// A concrete draw of one augmentation op.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    Translate { dx: f64, dy: f64 },
    Resize { scale: f64 },
    Rotate { degrees: f64 },
    Shear { degrees: f64 },
    InvertColors,
    FlipHorizontal,
    FlipVertical,
}

impl Transform {
    pub fn sample<R: Rng + ?Sized>(op: AugmentOp, progress: f64, h: usize, w: usize, policy: &AugmentPolicy, rng: &mut R) -> Result<Self> {
        Ok(match op {
            AugmentOp::Translate => {
                let f = policy.translate_fraction;
                let max_x = (f * w as f64).floor();
                let max_y = (f * h as f64).floor();
                // Whole-pixel shifts keep the translation exact for both rasters.
                Transform::Translate {
                    dx: rng.gen_range(-max_x..=max_x).round(),
                    dy: rng.gen_range(-max_y..=max_y).round(),
                }
            }
            AugmentOp::Resize => {
                let (lo, hi) = policy.scale_range;
                Transform::Resize {
                    scale: rng.gen_range(lo..=hi),
                }
            }
            AugmentOp::Rotate => {
                let limit = rotation_limit(progress, policy)?;
                let magnitude = rng.gen_range(0.0..=limit);
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                Transform::Rotate {
                    degrees: sign * magnitude,
                }
            }
            AugmentOp::Shear => {
                let s = policy.shear_max_degrees;
                Transform::Shear {
                    degrees: rng.gen_range(-s..=s),
                }
            }
            AugmentOp::InvertColors => Transform::InvertColors,
            AugmentOp::FlipHorizontal => Transform::FlipHorizontal,
            AugmentOp::FlipVertical => Transform::FlipVertical,
        })
    }

    fn affine(&self, h: usize, w: usize) -> Option<Affine> {
        let lin = |a, shift| Some(Affine::about_center(a, shift, h, w));
        match *self {
            Transform::Translate { dx, dy } => lin([[1.0, 0.0], [0.0, 1.0]], (dx, dy)),
            Transform::Resize { scale } => lin([[scale, 0.0], [0.0, scale]], (0.0, 0.0)),
            Transform::Rotate { degrees } => {
                let (s, c) = degrees.to_radians().sin_cos();
                // Exact right angles keep nearest-neighbour resampling lossless.
                let snap = |v: f64| if (v - v.round()).abs() < 1e-12 { v.round() } else { v };
                lin([[snap(c), -snap(s)], [snap(s), snap(c)]], (0.0, 0.0))
            }
            Transform::Shear { degrees } => lin([[1.0, degrees.to_radians().tan()], [0.0, 1.0]], (0.0, 0.0)),
            Transform::FlipHorizontal => lin([[-1.0, 0.0], [0.0, 1.0]], (0.0, 0.0)),
            Transform::FlipVertical => lin([[1.0, 0.0], [0.0, -1.0]], (0.0, 0.0)),
            Transform::InvertColors => None,
        }
    }

    /// Applies the transform to an aligned image/label pair.
    pub fn apply(&self, image: ArrayView3<u8>, labels: ArrayView2<u8>, unknown_index: u8) -> (RgbImage, LabelMap) {
        match self.affine(labels.nrows(), labels.ncols()) {
            Some(a) => warp(image, labels, &a, unknown_index),
            None => (image.mapv(|v| 255 - v), labels.to_owned()),
        }
    }

    /// Moves a per-pixel coverage mask the way `apply` moves labels.
    /// Pixels exposed by the transform become `false`.
    pub fn apply_coverage(&self, coverage: ArrayView2<bool>) -> Array2<bool> {
        let Some(inv) = self.affine(coverage.nrows(), coverage.ncols()) else {
            return coverage.to_owned();
        };
        let (h, w) = coverage.dim();
        Array2::from_shape_fn((h, w), |(y, x)| {
            source_pixel(&inv, x, y, h, w).is_some_and(|(sy, sx)| coverage[[sy, sx]])
        })
    }
}

/// Nearest input pixel `(row, col)` for output pixel `(x, y)`, `None` when outside the raster.
fn source_pixel(inv: &Affine, x: usize, y: usize, h: usize, w: usize) -> Option<(usize, usize)> {
    let (sx, sy) = inv.apply(x as f64, y as f64);
    let (nx, ny) = (sx.round(), sy.round());
    (nx >= 0.0 && ny >= 0.0 && nx < w as f64 && ny < h as f64).then_some((ny as usize, nx as usize))
}

fn warp(image: ArrayView3<u8>, labels: ArrayView2<u8>, inv: &Affine, unknown_index: u8) -> (RgbImage, LabelMap) {
    let (h, w) = labels.dim();
    let mut out_img = Array3::<u8>::zeros((h, w, 3));
    let mut out_lbl = Array2::<u8>::from_elem((h, w), unknown_index);
    let (hf, wf) = (h as f64, w as f64);
    for y in 0..h {
        for x in 0..w {
            let Some((ny, nx)) = source_pixel(inv, x, y, h, w) else {
                continue;
            };
            out_lbl[[y, x]] = labels[[ny, nx]];
            let (sx, sy) = inv.apply(x as f64, y as f64);
            // Bilinear sample with edge clamping.
            let cx = sx.clamp(0.0, wf - 1.0);
            let cy = sy.clamp(0.0, hf - 1.0);
            let (x0, y0) = (cx.floor() as usize, cy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (cx - x0 as f64, cy - y0 as f64);
            for k in 0..3 {
                let v = (1.0 - fy) * ((1.0 - fx) * image[[y0, x0, k]] as f64 + fx * image[[y0, x1, k]] as f64)
                    + fy * ((1.0 - fx) * image[[y1, x0, k]] as f64 + fx * image[[y1, x1, k]] as f64);
                out_img[[y, x, k]] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    (out_img, out_lbl)
}

/// Draws `ops_per_sample` distinct ops and applies them in draw order.
pub fn draw_transforms<R: Rng + ?Sized>(h: usize, w: usize, progress: f64, policy: &AugmentPolicy, rng: &mut R) -> Result<Vec<Transform>> {
    check_progress(progress)?;
    let picks = sample(rng, policy.op_set.len(), policy.ops_per_sample).into_vec();
    picks
        .into_iter()
        .map(|i| Transform::sample(policy.op_set[i], progress, h, w, policy, rng))
        .collect()
}

pub fn apply_augment<R: Rng + ?Sized>(
    image: ArrayView3<u8>,
    labels: ArrayView2<u8>,
    progress: f64,
    rng: &mut R,
    policy: &AugmentPolicy,
    unknown_index: u8,
) -> Result<(RgbImage, LabelMap)> {
    apply_augment_with_coverage(image, labels, progress, rng, policy, unknown_index).map(|(i, l, _)| (i, l))
}

/// `apply_augment` that also returns which output pixels still show input imagery.
pub fn apply_augment_with_coverage<R: Rng + ?Sized>(
    image: ArrayView3<u8>,
    labels: ArrayView2<u8>,
    progress: f64,
    rng: &mut R,
    policy: &AugmentPolicy,
    unknown_index: u8,
) -> Result<(RgbImage, LabelMap, Array2<bool>)> {
    let (ih, iw, _) = image.dim();
    if (ih, iw) != labels.dim() {
        return Err(Error::Shape(format!(
            "image {ih}x{iw} and labels {:?} are not aligned",
            labels.dim()
        )));
    }
    let transforms = draw_transforms(ih, iw, progress, policy, rng)?;
    let mut img = image.to_owned();
    let mut lbl = labels.to_owned();
    let mut coverage = Array2::from_elem((ih, iw), true);
    for t in transforms {
        let (i, l) = t.apply(img.view(), lbl.view(), unknown_index);
        coverage = t.apply_coverage(coverage.view());
        img = i;
        lbl = l;
    }
    Ok((img, lbl, coverage))
}

/// Per-channel mean and standard deviation in `[0, 1]` pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for NormalizationStats {
    fn default() -> Self {
        Self {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl NormalizationStats {
    pub fn new(mean: [f64; 3], std: [f64; 3]) -> Result<Self> {
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument("normalization std must be positive".into()));
        }
        Ok(Self { mean, std })
    }
}

/// Converts an `[row, col, channel]` image into a normalized `[channel, row, col]` tensor.
pub fn normalize(image: ArrayView3<u8>, stats: &NormalizationStats) -> Array3<f32> {
    let (h, w, _) = image.dim();
    Array3::from_shape_fn((3, h, w), |(k, r, c)| {
        ((image[[r, c, k]] as f64 / 255.0 - stats.mean[k]) / stats.std[k]) as f32
    })
}
