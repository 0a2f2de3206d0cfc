use ndarray::{s, Array3, Array4, ArrayView3, Axis};

use crate::augment::{normalize, NormalizationStats};
use crate::error::{Error, Result};
use crate::model::{ArchitectureRegistry, Checkpoint, Mode, SegmentationNetwork};
use crate::pipeline::{sliding_windows, stitch_predictions, WindowPrediction};
use crate::raster::LabelMap;

/// Windows forwarded together in one call.
const WINDOW_BATCH: usize = 8;

/// Eval-mode network plus the normalization it was trained with.
pub struct Predictor {
    net: Box<dyn SegmentationNetwork>,
    stats: NormalizationStats,
}

impl Predictor {
    pub fn new(mut net: Box<dyn SegmentationNetwork>, stats: NormalizationStats) -> Self {
        net.set_mode(Mode::Eval);
        Self { net, stats }
    }

    /// Restores the network; normalization comes from the stored run config when present.
    pub fn from_checkpoint(checkpoint: &Checkpoint, registry: &ArchitectureRegistry) -> Result<Self> {
        let (net, _) = checkpoint.restore(registry)?;
        let stats = match checkpoint.config.get("normalization") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| Error::Checkpoint(format!("stored normalization: {e}")))?,
            None => NormalizationStats::default(),
        };
        Ok(Self::new(net, stats))
    }

    pub fn network(&self) -> &dyn SegmentationNetwork {
        self.net.as_ref()
    }

    pub fn network_mut(&mut self) -> &mut dyn SegmentationNetwork {
        self.net.as_mut()
    }

    pub fn normalization(&self) -> NormalizationStats {
        self.stats
    }

    /// Class probabilities `[C, h, w]` for every sliding window of `image`.
    pub fn window_probabilities(&mut self, image: ArrayView3<u8>, window: usize, stride: usize) -> Result<Vec<WindowPrediction>> {
        window_probabilities(self.net.as_mut(), &self.stats, image, window, stride)
    }

    /// Sliding-window label map for a whole scene.
    pub fn predict(&mut self, image: ArrayView3<u8>, window: usize, stride: usize) -> Result<LabelMap> {
        predict_with(self.net.as_mut(), &self.stats, image, window, stride)
    }
}

/// Forwards every window of `image` through `net`, which must already be in eval mode.
pub(crate) fn window_probabilities(
    net: &mut dyn SegmentationNetwork,
    stats: &NormalizationStats,
    image: ArrayView3<u8>,
    window: usize,
    stride: usize,
) -> Result<Vec<WindowPrediction>> {
    let windows = sliding_windows(image, window, stride)?;
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(WINDOW_BATCH) {
        let mut batch = Array4::<f32>::zeros((chunk.len(), 3, window, window));
        for (i, w) in chunk.iter().enumerate() {
            batch.slice_mut(s![i, .., .., ..]).assign(&normalize(w.image.view(), stats));
        }
        let logits = net.forward(batch.view())?;
        for (w, l) in chunk.iter().zip(logits.axis_iter(Axis(0))) {
            out.push(WindowPrediction {
                origin: w.origin,
                probs: softmax_channels(l.to_owned()),
            });
        }
    }
    Ok(out)
}

pub(crate) fn predict_with(
    net: &mut dyn SegmentationNetwork,
    stats: &NormalizationStats,
    image: ArrayView3<u8>,
    window: usize,
    stride: usize,
) -> Result<LabelMap> {
    let (h, w, _) = image.dim();
    let probs = window_probabilities(net, stats, image, window, stride)?;
    stitch_predictions(&probs, (h, w))
}

fn softmax_channels(mut logits: Array3<f32>) -> Array3<f32> {
    let (c, h, w) = logits.dim();
    for y in 0..h {
        for x in 0..w {
            let max = (0..c).map(|k| logits[[k, y, x]]).fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0;
            for k in 0..c {
                let e = (logits[[k, y, x]] - max).exp();
                logits[[k, y, x]] = e;
                sum += e;
            }
            for k in 0..c {
                logits[[k, y, x]] /= sum;
            }
        }
    }
    logits
}

/// Restores `checkpoint` and labels `image` with overlapping windows.
pub fn predict_scene(checkpoint: &Checkpoint, image: ArrayView3<u8>, window: usize, stride: usize) -> Result<LabelMap> {
    let (h, w, _) = image.dim();
    if window > h || window > w {
        return Err(Error::WindowExceedsImage { window, height: h, width: w });
    }
    Predictor::from_checkpoint(checkpoint, &ArchitectureRegistry::default())?.predict(image, window, stride)
}
