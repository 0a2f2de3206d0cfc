use ndarray::{s, Array1, Array2, Array4, ArrayView2, ArrayView3, ArrayView4, Axis};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_finite, flatten_nchw, LossValue, PixelLogits};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MccConfig {
    pub temperature: f64,
    /// Pixels drawn (without replacement) per evaluation; `None` uses every pixel.
    pub pixel_subsample: Option<usize>,
    /// Average the loss over images instead of pooling all pixels of the batch.
    pub per_image: bool,
    /// Multiplier of the MCC term inside the regime objectives.
    pub weight: f64,
}

impl Default for MccConfig {
    fn default() -> Self {
        Self {
            temperature: 2.5,
            pixel_subsample: Some(4096),
            per_image: false,
            weight: 1.0,
        }
    }
}

impl MccConfig {
    pub fn exact(temperature: f64) -> Self {
        Self {
            temperature,
            pixel_subsample: None,
            ..Self::default()
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!("MCC temperature {} must be positive", self.temperature)));
        }
        if let Some(n) = self.pixel_subsample {
            if n < classes {
                return Err(Error::Config(format!("MCC pixel_subsample {n} is below the class count {classes}")));
            }
        }
        if !self.weight.is_finite() {
            return Err(Error::Config("MCC weight must be finite".into()));
        }
        Ok(())
    }
}

/// Row-wise `softmax(logits / t)`, stabilised by subtracting the row maximum.
pub fn temperature_softmax(logits: &PixelLogits, t: f64) -> Result<Array2<f64>> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature {t} must be positive")));
    }
    let mut p = logits.view().mapv(|z| z / t);
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|q| (q - m).exp());
        let sum = row.sum();
        row.mapv_inplace(|e| e / sum);
    }
    Ok(p)
}

fn entropy(row: ndarray::ArrayView1<f64>) -> f64 {
    -row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Certainty weights `N * (1 + e^-H_i) / sum(1 + e^-H)`; they sum to N.
pub fn entropy_weights(probs: ArrayView2<f64>) -> Array1<f64> {
    let n = probs.nrows() as f64;
    let raw: Array1<f64> = probs.rows().into_iter().map(|r| 1.0 + (-entropy(r)).exp()).collect();
    let total = raw.sum();
    raw.mapv(|r| n * r / total)
}

/// Symmetric `C x C` class co-assignment matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix(pub Array2<f64>);

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.0.nrows()
    }

    /// Mean off-diagonal mass per class.
    pub fn off_diagonal_mean(&self) -> f64 {
        let c = self.classes();
        let total: f64 = self.0.sum();
        let diag: f64 = self.0.diag().sum();
        (total - diag) / c as f64
    }
}

/// `P^T diag(w) P`.
pub fn class_confusion(probs: ArrayView2<f64>, weights: ndarray::ArrayView1<f64>) -> ConfusionMatrix {
    let weighted = &probs * &weights.insert_axis(Axis(1));
    ConfusionMatrix(weighted.t().dot(&probs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedConfusion {
    pub matrix: ConfusionMatrix,
    /// Rows with zero mass, replaced by the unit vector of their own class.
    pub degenerate_rows: Vec<usize>,
}

/// Divides each row by its sum.
pub fn category_normalize(conf: &ConfusionMatrix) -> NormalizedConfusion {
    let mut m = conf.0.clone();
    let mut degenerate_rows = Vec::new();
    for (j, mut row) in m.rows_mut().into_iter().enumerate() {
        let sum = row.sum();
        if sum > 0.0 {
            row.mapv_inplace(|v| v / sum);
        } else {
            row.fill(0.0);
            row[j] = 1.0;
            degenerate_rows.push(j);
        }
    }
    NormalizedConfusion {
        matrix: ConfusionMatrix(m),
        degenerate_rows,
    }
}

/// MCC value and gradient over flattened `N x C` pixel logits.
///
/// The gradient includes the dependence of the certainty weights on the logits.
pub fn mcc_loss_pixels(logits: &PixelLogits, temperature: f64) -> Result<(f64, Array2<f64>)> {
    let z = logits.view();
    let (n, c) = z.dim();
    if n < c {
        return Err(Error::Loss(format!("MCC needs at least {c} pixels, got {n}")));
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature {temperature} must be positive")));
    }
    let nf = n as f64;
    let cf = c as f64;

    let mut p = Array2::<f64>::zeros((n, c));
    let mut log_p = Array2::<f64>::zeros((n, c));
    for i in 0..n {
        let row = z.row(i);
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b / temperature));
        let lse = row.iter().map(|&v| (v / temperature - m).exp()).sum::<f64>().ln();
        for j in 0..c {
            let lp = z[[i, j]] / temperature - m - lse;
            log_p[[i, j]] = lp;
            p[[i, j]] = lp.exp();
        }
    }
    let h: Array1<f64> = (0..n)
        .map(|i| -(0..c).map(|j| p[[i, j]] * log_p[[i, j]]).sum::<f64>())
        .collect();
    let exp_neg_h = h.mapv(|v| (-v).exp());
    let raw = exp_neg_h.mapv(|e| 1.0 + e);
    let raw_total = raw.sum();
    let w = raw.mapv(|r| nf * r / raw_total);

    // Only the row sums and the diagonal of the confusion matrix enter the loss.
    let mut row_sum = Array1::<f64>::zeros(c);
    let mut diag = Array1::<f64>::zeros(c);
    for i in 0..n {
        for j in 0..c {
            row_sum[j] += w[i] * p[[i, j]];
            diag[j] += w[i] * p[[i, j]] * p[[i, j]];
        }
    }
    let mut loss = 0.0;
    let mut a = Array1::<f64>::zeros(c);
    let mut b = Array1::<f64>::zeros(c);
    for j in 0..c {
        if row_sum[j] > 0.0 {
            loss += 1.0 - diag[j] / row_sum[j];
            a[j] = diag[j] / (row_sum[j] * row_sum[j]);
            b[j] = 1.0 / row_sum[j];
        }
    }
    loss /= cf;

    // dL/dw_i
    let g_w: Array1<f64> = (0..n)
        .map(|i| (0..c).map(|j| p[[i, j]] * (a[j] - p[[i, j]] * b[j])).sum::<f64>() / cf)
        .collect();
    let mean_gw = (0..n).map(|i| g_w[i] * w[i]).sum::<f64>() / nf;
    let scale = nf / raw_total;

    let mut grad = Array2::<f64>::zeros((n, c));
    let mut g_p = vec![0.0; c];
    for i in 0..n {
        let d_raw = scale * (g_w[i] - mean_gw);
        let d_h = -d_raw * exp_neg_h[i];
        for j in 0..c {
            let direct = w[i] / cf * (a[j] - 2.0 * p[[i, j]] * b[j]);
            g_p[j] = direct - d_h * (log_p[[i, j]] + 1.0);
        }
        let dot: f64 = (0..c).map(|j| p[[i, j]] * g_p[j]).sum();
        for j in 0..c {
            grad[[i, j]] = p[[i, j]] * (g_p[j] - dot) / temperature;
        }
    }
    Ok((loss, grad))
}

fn flatten_image(logits: ArrayView4<f64>, image: usize) -> Array2<f64> {
    flatten_nchw(logits.slice(s![image..image + 1, .., .., ..]))
}

fn scatter_image(grad: &mut Array4<f64>, image: usize, pixel: usize, row: ndarray::ArrayView1<f64>) {
    let w = grad.dim().3;
    let (y, x) = (pixel / w, pixel % w);
    for (k, &g) in row.iter().enumerate() {
        grad[[image, k, y, x]] += g;
    }
}

/// Minimum class confusion over `[B, C, H, W]` logits.
pub fn mcc_loss<R: Rng + ?Sized>(logits: ArrayView4<f64>, cfg: &MccConfig, rng: &mut R) -> Result<LossValue> {
    mcc_loss_masked(logits, None, cfg, rng)
}

/// MCC restricted to pixels where `valid` is true (every pixel when `None`).
///
/// Subsampling draws from the valid pixels only. A group left with fewer valid
/// pixels than classes contributes zero loss and zero gradient.
pub fn mcc_loss_masked<R: Rng + ?Sized>(
    logits: ArrayView4<f64>,
    valid: Option<ArrayView3<bool>>,
    cfg: &MccConfig,
    rng: &mut R,
) -> Result<LossValue> {
    let (b, c, h, w) = logits.dim();
    cfg.validate(c)?;
    check_finite(logits)?;
    if b == 0 {
        return Err(Error::Loss("MCC over an empty batch".into()));
    }
    if let Some(v) = valid {
        if v.dim() != (b, h, w) {
            return Err(Error::Shape(format!("validity mask {:?} for logits {:?}", v.dim(), logits.dim())));
        }
    }
    let groups: Vec<Vec<usize>> = if cfg.per_image {
        (0..b).map(|i| vec![i]).collect()
    } else {
        vec![(0..b).collect()]
    };
    let hw = h * w;
    let mut grad = Array4::<f64>::zeros((b, c, h, w));
    let mut total = 0.0;
    for group in &groups {
        if group.len() * hw < c {
            return Err(Error::Loss(format!("MCC needs at least {c} pixels, got {}", group.len() * hw)));
        }
        // (image, pixel) addresses of every candidate pixel in the group.
        let flat: Vec<Array2<f64>> = group.iter().map(|&i| flatten_image(logits, i)).collect();
        let candidates: Vec<usize> = (0..group.len() * hw)
            .filter(|&addr| valid.is_none_or(|v| v[[group[addr / hw], (addr % hw) / w, addr % w]]))
            .collect();
        let count = candidates.len();
        if count < c {
            continue;
        }
        let chosen: Vec<usize> = match cfg.pixel_subsample {
            Some(k) if k < count => {
                let mut idx = sample(rng, count, k).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| candidates[i]).collect()
            }
            _ => candidates,
        };
        let mut rows = Array2::<f64>::zeros((chosen.len(), c));
        for (r, &addr) in chosen.iter().enumerate() {
            rows.row_mut(r).assign(&flat[addr / hw].row(addr % hw));
        }
        let (value, g) = mcc_loss_pixels(&PixelLogits::new(rows)?, cfg.temperature)?;
        let share = 1.0 / groups.len() as f64;
        total += value * share;
        for (r, &addr) in chosen.iter().enumerate() {
            let g_row = g.row(r).mapv(|v| v * share);
            scatter_image(&mut grad, group[addr / hw], addr % hw, g_row.view());
        }
    }
    Ok(LossValue { value: total, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array4};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pl(a: Array2<f64>) -> PixelLogits {
        PixelLogits::new(a).unwrap()
    }

    #[test]
    fn softmax_cases() {
        let p = temperature_softmax(&pl(Array2::zeros((3, 4))), 1.0).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let p = temperature_softmax(&pl(array![[3f64.ln(), 0.0]]), 1.0).unwrap();
        assert!((p[[0, 0]] - 0.75).abs() < 1e-12 && (p[[0, 1]] - 0.25).abs() < 1e-12);
        let p = temperature_softmax(&pl(array![[0.9, -0.8, 0.1]]), 1e6).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-6));
        let p = temperature_softmax(&pl(array![[1000.0, -1000.0]]), 1.0).unwrap();
        assert!((p.row(0).sum() - 1.0).abs() < 1e-12);
        assert!(temperature_softmax(&pl(array![[0.0, 1.0]]), 0.0).is_err());
        assert!(PixelLogits::new(array![[f64::NAN, 1.0]]).is_err());
    }

    #[test]
    fn weights_cases() {
        let w = entropy_weights(array![[0.3, 0.7], [0.3, 0.7]].view());
        assert!(w.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let w = entropy_weights(array![[1.0, 0.0], [0.5, 0.5]].view());
        assert!((w[0] - 8.0 / 7.0).abs() < 1e-12);
        assert!((w[1] - 6.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn confusion_cases() {
        let probs = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]];
        let conf = class_confusion(probs.view(), Array1::ones(3).view());
        assert_eq!(conf.0, array![[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]]);
        let conf = class_confusion(array![[0.5, 0.5]].view(), array![1.0].view());
        assert_eq!(conf.0, array![[0.25, 0.25], [0.25, 0.25]]);
    }

    #[test]
    fn normalize_cases() {
        let n = category_normalize(&ConfusionMatrix(array![[2.0, 0.0], [0.0, 5.0]]));
        assert_eq!(n.matrix.0, Array2::<f64>::eye(2));
        let n = category_normalize(&ConfusionMatrix(array![[3.0, 1.0], [1.0, 1.0]]));
        assert_eq!(n.matrix.0, array![[0.75, 0.25], [0.5, 0.5]]);
        let n = category_normalize(&ConfusionMatrix(array![[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 0.0]]));
        assert_eq!(n.matrix.0.row(2), array![0.0, 0.0, 1.0]);
        assert_eq!(n.degenerate_rows, vec![2]);
        assert_eq!(n.matrix.0.row(2).sum() - n.matrix.0[[2, 2]], 0.0);
    }

    #[test]
    fn uniform_logits_give_c_minus_one_over_c() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = mcc_loss(Array4::zeros((2, 5, 3, 3)).view(), &MccConfig::exact(2.5), &mut rng).unwrap();
        assert!((l.value - 0.8).abs() < 1e-12);
    }

    #[test]
    fn pipeline_of_steps_matches_fused_value() {
        let z = array![[0.3, -1.2, 2.0], [1.0, 0.1, -0.4], [-2.0, 0.5, 0.7], [0.0, 0.0, 3.0]];
        let logits = pl(z);
        let p = temperature_softmax(&logits, 1.7).unwrap();
        let w = entropy_weights(p.view());
        let n = category_normalize(&class_confusion(p.view(), w.view()));
        let (fused, _) = mcc_loss_pixels(&logits, 1.7).unwrap();
        assert!((n.matrix.off_diagonal_mean() - fused).abs() < 1e-14);
    }

    #[test]
    fn too_few_pixels() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = mcc_loss(Array4::zeros((1, 5, 2, 2)).view(), &MccConfig::exact(1.0), &mut rng);
        assert!(err.is_err());
    }

    #[test]
    fn subsample_is_deterministic_and_routes_gradient() {
        let logits = Array4::from_shape_fn((2, 3, 8, 8), |(b, c, y, x)| ((b * 7 + c * 3 + y * 5 + x) % 11) as f64 * 0.3);
        let cfg = MccConfig {
            pixel_subsample: Some(20),
            ..MccConfig::default()
        };
        let a = mcc_loss(logits.view(), &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = mcc_loss(logits.view(), &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        let touched = (0..2)
            .flat_map(|i| (0..8).flat_map(move |y| (0..8).map(move |x| (i, y, x))))
            .filter(|&(i, y, x)| (0..3).any(|k| a.grad[[i, k, y, x]] != 0.0))
            .count();
        assert!(touched <= 20);
    }

    #[test]
    fn per_image_averages_images() {
        let mut logits = Array4::<f64>::zeros((2, 2, 2, 2));
        // Image 1 is confidently split between the two classes: zero confusion.
        for y in 0..2 {
            for x in 0..2 {
                let k = (y + x) % 2;
                logits[[1, k, y, x]] = 200.0;
            }
        }
        let cfg = MccConfig {
            per_image: true,
            ..MccConfig::exact(1.0)
        };
        let l = mcc_loss(logits.view(), &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((l.value - 0.25).abs() < 1e-9, "{}", l.value);
    }
}
