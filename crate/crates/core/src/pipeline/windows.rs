use ndarray::{s, Array2, Array3, ArrayView3};

use crate::error::{Error, Result};
use crate::raster::{LabelMap, RgbImage};

/// One sliding window cut from a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub origin: (usize, usize),
    pub image: RgbImage,
}

/// Per-class probabilities `[class, row, col]` for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPrediction {
    pub origin: (usize, usize),
    pub probs: Array3<f32>,
}

fn axis_origins(len: usize, window: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..).map(|i| i * stride).take_while(|&o| o + window <= len).collect();
    // Final window sits flush with the far edge when the stride leaves a remainder.
    if out.last().is_none_or(|&o| o + window < len) {
        out.push(len - window);
    }
    out
}

/// Row-major window origins covering a `height` x `width` raster.
pub fn window_origins(height: usize, width: usize, window: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if window == 0 {
        return Err(Error::InvalidArgument("window size must be positive".into()));
    }
    if window > height || window > width {
        return Err(Error::WindowExceedsImage { window, height, width });
    }
    if stride == 0 || stride > window {
        return Err(Error::InvalidArgument(format!(
            "stride {stride} must be in 1..={window}"
        )));
    }
    let rows = axis_origins(height, window, stride);
    let cols = axis_origins(width, window, stride);
    Ok(rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect())
}

pub fn sliding_windows(image: ArrayView3<u8>, window: usize, stride: usize) -> Result<Vec<Window>> {
    let (h, w, _) = image.dim();
    Ok(window_origins(h, w, window, stride)?
        .into_iter()
        .map(|(r, c)| Window {
            origin: (r, c),
            image: image.slice(s![r..r + window, c..c + window, ..]).to_owned(),
        })
        .collect())
}

/// Averages overlapping window probabilities and takes the per-pixel argmax.
///
/// Ties resolve to the lowest class index.
pub fn stitch_predictions(windows: &[WindowPrediction], out_shape: (usize, usize)) -> Result<LabelMap> {
    let (h, w) = out_shape;
    let classes = windows
        .first()
        .map(|wp| wp.probs.dim().0)
        .ok_or_else(|| Error::CoverageGap { row: 0, col: 0 })?;
    let mut sums = Array3::<f64>::zeros((classes, h, w));
    let mut counts = Array2::<u32>::zeros((h, w));
    for wp in windows {
        let (c, wh, ww) = wp.probs.dim();
        let (r0, c0) = wp.origin;
        if c != classes {
            return Err(Error::Shape(format!("window at {:?} has {c} classes, expected {classes}", wp.origin)));
        }
        if r0 + wh > h || c0 + ww > w {
            return Err(Error::Shape(format!("window at {:?} extends past {h}x{w}", wp.origin)));
        }
        let mut region = sums.slice_mut(s![.., r0..r0 + wh, c0..c0 + ww]);
        region.zip_mut_with(&wp.probs, |acc, &p| *acc += p as f64);
        counts.slice_mut(s![r0..r0 + wh, c0..c0 + ww]).mapv_inplace(|n| n + 1);
    }
    if let Some(((row, col), _)) = counts.indexed_iter().find(|(_, &n)| n == 0) {
        return Err(Error::CoverageGap { row, col });
    }
    // Dividing by the count does not change the argmax, but keeps the mean explicit.
    Ok(Array2::from_shape_fn((h, w), |(r, c)| {
        let n = counts[[r, c]] as f64;
        let mut best = 0usize;
        let mut best_p = f64::NEG_INFINITY;
        for k in 0..classes {
            let p = sums[[k, r, c]] / n;
            if p > best_p {
                best_p = p;
                best = k;
            }
        }
        best as u8
    }))
}
