//! Segmentation losses: pixel cross-entropy, minimum class confusion, and regime objectives.
//!
//! Every loss returns its value together with the gradient with respect to the
//! logits, so the network only has to back-propagate a dense logit gradient.

mod mcc;
mod objective;
mod supervised;

use ndarray::{Array2, Array4, ArrayView2, ArrayView4};

use crate::error::{Error, Result};

pub use mcc::{
    category_normalize, class_confusion, entropy_weights, mcc_loss, mcc_loss_masked, mcc_loss_pixels, temperature_softmax,
    ConfusionMatrix, MccConfig, NormalizedConfusion,
};
pub use objective::{source_mcc, regime_objective, Objective, Regime};
pub use supervised::supervised_loss;

/// A scalar loss and its gradient with respect to the input logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Array4<f64>,
}

/// Flattened `N x C` logits for N pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelLogits(Array2<f64>);

impl PixelLogits {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (n, c) = values.dim();
        if n < 1 || c < 2 {
            return Err(Error::Loss(format!("pixel logits must be N>=1 x C>=2, got {n}x{c}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        Ok(Self(values))
    }

    /// Flattens `[B, C, H, W]` logits into `[B*H*W, C]` in batch, row, column order.
    pub fn from_nchw(logits: ArrayView4<f64>) -> Result<Self> {
        Self::new(flatten_nchw(logits))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

pub(crate) fn flatten_nchw(logits: ArrayView4<f64>) -> Array2<f64> {
    let (b, c, h, w) = logits.dim();
    logits
        .permuted_axes([0, 2, 3, 1])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((b * h * w, c))
        .expect("contiguous reshape")
}

pub(crate) fn check_finite(logits: ArrayView4<f64>) -> Result<()> {
    if logits.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("logits"))
    }
}
