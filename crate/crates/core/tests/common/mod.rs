#![allow(dead_code)]

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_logits(dims: (usize, usize, usize, usize), scale: f64, seed: u64) -> Array4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array4::from_shape_fn(dims, |_| rng.gen_range(-scale..scale))
}

/// Step-by-step MCC on plain nested vectors, written independently of the library path.
pub fn mcc_oracle(rows: &[Vec<f64>], temperature: f64) -> f64 {
    let n = rows.len();
    let c = rows[0].len();
    let probs: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let e: Vec<f64> = r.iter().map(|z| (z / temperature).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        })
        .collect();
    let raw: Vec<f64> = probs
        .iter()
        .map(|p| {
            let h: f64 = -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>();
            1.0 + (-h).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let w: Vec<f64> = raw.iter().map(|r| n as f64 * r / total).collect();
    let mut conf = vec![vec![0.0; c]; c];
    for i in 0..n {
        for j in 0..c {
            for k in 0..c {
                conf[j][k] += w[i] * probs[i][j] * probs[i][k];
            }
        }
    }
    let mut loss = 0.0;
    for (j, row) in conf.iter().enumerate() {
        let s: f64 = row.iter().sum();
        for (k, v) in row.iter().enumerate() {
            if k != j {
                loss += v / s;
            }
        }
    }
    loss / c as f64
}

/// Flattens `[B, C, H, W]` into per-pixel rows in batch, row, column order.
pub fn pixel_rows(logits: &Array4<f64>) -> Vec<Vec<f64>> {
    let (b, c, h, w) = logits.dim();
    let mut rows = Vec::new();
    for i in 0..b {
        for y in 0..h {
            for x in 0..w {
                rows.push((0..c).map(|k| logits[[i, k, y, x]]).collect());
            }
        }
    }
    rows
}

/// Max relative error between an analytic gradient and central differences of `f`.
pub fn finite_difference_error(logits: &Array4<f64>, analytic: &Array4<f64>, step: f64, mut f: impl FnMut(&Array4<f64>) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for idx in 0..logits.len() {
        let mut plus = logits.clone();
        let mut minus = logits.clone();
        plus.as_slice_mut().unwrap()[idx] += step;
        minus.as_slice_mut().unwrap()[idx] -= step;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * step);
        let a = analytic.as_slice().unwrap()[idx];
        let denom = a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}

/// Per-class IoU and image mean from explicit pixel-index sets.
/// Pixels whose ground truth equals `unknown` belong to no set.
pub fn iou_oracle(pred: &[u8], gt: &[u8], num_classes: usize, unknown: Option<u8>) -> (Vec<Option<f64>>, Option<f64>) {
    use std::collections::BTreeSet;
    let scored: Vec<usize> = (0..gt.len()).filter(|&i| Some(gt[i]) != unknown).collect();
    let per_class: Vec<Option<f64>> = (0..num_classes as u8)
        .map(|k| {
            let p: BTreeSet<usize> = scored.iter().copied().filter(|&i| pred[i] == k).collect();
            let g: BTreeSet<usize> = scored.iter().copied().filter(|&i| gt[i] == k).collect();
            let union = p.union(&g).count();
            (union > 0).then(|| p.intersection(&g).count() as f64 / union as f64)
        })
        .collect();
    let defined: Vec<f64> = per_class
        .iter()
        .enumerate()
        .filter(|&(k, _)| Some(k as u8) != unknown)
        .filter_map(|(_, v)| *v)
        .collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    (per_class, mean)
}
