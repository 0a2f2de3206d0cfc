use ndarray::{Array4, ArrayView3, ArrayView4};

use super::{check_finite, LossValue};
use crate::error::{Error, Result};

/// Mean per-pixel cross-entropy over pixels whose label is not `ignore_index`.
///
/// A batch in which every pixel is ignored yields zero loss and zero gradient.
pub fn supervised_loss(logits: ArrayView4<f64>, labels: ArrayView3<u8>, ignore_index: u8) -> Result<LossValue> {
    let (b, c, h, w) = logits.dim();
    if labels.dim() != (b, h, w) {
        return Err(Error::Shape(format!(
            "labels {:?} do not match logits {:?}",
            labels.dim(),
            logits.dim()
        )));
    }
    check_finite(logits)?;
    let mut grad = Array4::<f64>::zeros((b, c, h, w));
    let mut total = 0.0;
    let mut count = 0usize;
    let mut probs = vec![0.0; c];
    for i in 0..b {
        for y in 0..h {
            for x in 0..w {
                let label = labels[[i, y, x]];
                if label == ignore_index {
                    continue;
                }
                if label as usize >= c {
                    return Err(Error::Loss(format!(
                        "label {label} at ({i}, {y}, {x}) is outside {c} classes"
                    )));
                }
                let m = (0..c).map(|k| logits[[i, k, y, x]]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (k, p) in probs.iter_mut().enumerate() {
                    *p = (logits[[i, k, y, x]] - m).exp();
                    sum += *p;
                }
                total += m + sum.ln() - logits[[i, label as usize, y, x]];
                for (k, p) in probs.iter().enumerate() {
                    grad[[i, k, y, x]] = p / sum;
                }
                grad[[i, label as usize, y, x]] -= 1.0;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Ok(LossValue { value: 0.0, grad });
    }
    let n = count as f64;
    grad.mapv_inplace(|g| g / n);
    Ok(LossValue { value: total / n, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn uniform_logits_give_ln_c() {
        let labels = Array3::from_shape_fn((2, 3, 3), |(b, y, x)| ((b + y * 2 + x) % 4) as u8);
        let l = supervised_loss(Array4::zeros((2, 4, 3, 3)).view(), labels.view(), 255).unwrap();
        assert!((l.value - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_is_small() {
        let labels = Array3::from_shape_fn((1, 2, 2), |(_, y, x)| ((y + x) % 3) as u8);
        let logits = Array4::from_shape_fn((1, 3, 2, 2), |(_, k, y, x)| if k == (y + x) % 3 { 20.0 } else { 0.0 });
        let l = supervised_loss(logits.view(), labels.view(), 255).unwrap();
        assert!(l.value < 1e-3);
    }

    #[test]
    fn all_ignored_is_zero() {
        let labels = Array3::<u8>::zeros((1, 2, 2));
        let logits = Array4::from_elem((1, 3, 2, 2), 0.7);
        let l = supervised_loss(logits.view(), labels.view(), 0).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ignored_pixels_get_no_gradient() {
        let labels = ndarray::array![[[0u8, 1], [2, 1]]];
        let logits = Array4::from_shape_fn((1, 3, 2, 2), |(_, k, y, x)| (k + y * 2 + x) as f64 * 0.1);
        let l = supervised_loss(logits.view(), labels.view(), 0).unwrap();
        assert!((0..3).all(|k| l.grad[[0, k, 0, 0]] == 0.0));
    }

    #[test]
    fn invalid_label_rejected() {
        let labels = Array3::from_elem((1, 1, 1), 3u8);
        assert!(supervised_loss(Array4::zeros((1, 3, 1, 1)).view(), labels.view(), 0).is_err());
    }
}
