use ndarray::{s, Array4, ArrayView3, ArrayView4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{mcc_loss_masked, supervised_loss, LossValue, MccConfig};
use crate::error::{Error, Result};
use crate::sampler::MixedBatch;

/// Training regime: which losses apply to which half of the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Cross-entropy on a target-only batch.
    Supervised,
    /// Cross-entropy on both halves.
    Combined,
    /// Cross-entropy on the target half, MCC on the unlabeled source half.
    MccSemi,
    /// Cross-entropy on both halves plus MCC on the source half.
    MccTransfer,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::Supervised, Regime::Combined, Regime::MccSemi, Regime::MccTransfer];

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Supervised => "supervised",
            Regime::Combined => "combined",
            Regime::MccSemi => "mcc_semi",
            Regime::MccTransfer => "mcc_transfer",
        }
    }

    pub fn needs_source(&self) -> bool {
        *self != Regime::Supervised
    }

    pub fn uses_mcc(&self) -> bool {
        matches!(self, Regime::MccSemi | Regime::MccTransfer)
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown regime `{s}`")))
    }
}

/// Objective value with its components and the gradient over the batch logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub total: f64,
    pub supervised: f64,
    pub mcc: f64,
    pub grad: Array4<f64>,
}

/// Evaluates the regime's objective on `logits` for `batch`.
///
/// Cross-entropy over a mixed batch is the sum of the per-half means, so the
/// transfer objective equals the combined objective plus the MCC term.
pub fn regime_objective<R: Rng + ?Sized>(
    regime: Regime,
    batch: &MixedBatch,
    logits: ArrayView4<f64>,
    cfg: &MccConfig,
    ignore_index: u8,
    rng: &mut R,
) -> Result<Objective> {
    let b = batch.len();
    if logits.dim().0 != b {
        return Err(Error::Shape(format!("{} logit maps for a batch of {b}", logits.dim().0)));
    }
    let mut grad = Array4::<f64>::zeros(logits.raw_dim());
    if regime == Regime::Supervised {
        if !batch.is_target_only() {
            return Err(Error::InvalidArgument("supervised regime needs a target-only batch".into()));
        }
        let l = supervised_loss(logits, batch.labels.view(), ignore_index)?;
        return Ok(Objective {
            total: l.value,
            supervised: l.value,
            mcc: 0.0,
            grad: l.grad,
        });
    }
    if !batch.is_mixed() {
        return Err(Error::InvalidArgument(format!("regime {regime} needs a half target, half source batch")));
    }
    let half = b / 2;
    let target = s![..half, .., .., ..];
    let source = s![half.., .., .., ..];

    let mut sn = 0.0;
    let t = supervised_loss(logits.slice(target), batch.labels.slice(s![..half, .., ..]), ignore_index)?;
    sn += t.value;
    grad.slice_mut(target).assign(&t.grad);
    if matches!(regime, Regime::Combined | Regime::MccTransfer) {
        let sl = supervised_loss(logits.slice(source), batch.labels.slice(s![half.., .., ..]), ignore_index)?;
        sn += sl.value;
        grad.slice_mut(source).assign(&sl.grad);
    }
    let mut mcc = 0.0;
    if regime.uses_mcc() {
        let m = source_mcc(logits.slice(source), batch.valid.slice(s![half.., .., ..]), cfg, ignore_index, rng)?;
        mcc = m.value;
        grad.slice_mut(source).scaled_add(cfg.weight, &m.grad);
    }
    Ok(Objective {
        total: sn + cfg.weight * mcc,
        supervised: sn,
        mcc,
        grad,
    })
}

/// MCC over the imagery pixels of `logits` and every class channel except `ignore_index`.
///
/// Pixels with `valid == false` are augmentation padding and carry no imagery.
/// The ignored label never receives supervision, so its channel holds almost no
/// probability mass. Row normalization would still give that near-empty row full
/// weight and push the network to predict the ignored label confidently somewhere.
/// So the ignored channel is left out and gets zero gradient.
pub fn source_mcc<R: Rng + ?Sized>(
    logits: ArrayView4<f64>,
    valid: ArrayView3<bool>,
    cfg: &MccConfig,
    ignore_index: u8,
    rng: &mut R,
) -> Result<LossValue> {
    let c = logits.dim().1;
    let keep: Vec<usize> = (0..c).filter(|&k| k != ignore_index as usize).collect();
    if keep.len() == c {
        return mcc_loss_masked(logits, Some(valid), cfg, rng);
    }
    let m = mcc_loss_masked(logits.select(Axis(1), &keep).view(), Some(valid), cfg, rng)?;
    let mut grad = Array4::<f64>::zeros(logits.raw_dim());
    for (j, &k) in keep.iter().enumerate() {
        grad.index_axis_mut(Axis(1), k).assign(&m.grad.index_axis(Axis(1), j));
    }
    Ok(LossValue { value: m.value, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{Domain, Sample};
    use ndarray::{Array2, Array3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch(n_target: usize, n_source: usize, h: usize, label: impl Fn(usize, usize, usize) -> u8) -> MixedBatch {
        let samples = (0..n_target + n_source)
            .map(|i| {
                let d = if i < n_target { Domain::Target } else { Domain::Source };
                let s = Sample::new(i.to_string(), Array3::zeros((3, h, h)), Array2::from_shape_fn((h, h), |(y, x)| label(i, y, x)));
                (d, s)
            })
            .collect();
        MixedBatch::from_samples(samples).unwrap()
    }

    #[test]
    fn regime_names_round_trip() {
        for r in Regime::ALL {
            assert_eq!(r.as_str().parse::<Regime>().unwrap(), r);
            assert_eq!(serde_json::to_string(&r).unwrap(), format!("\"{r}\""));
        }
    }

    #[test]
    fn combined_zero_when_all_ignored() {
        let b = batch(2, 2, 3, |_, _, _| 0);
        let logits = Array4::from_elem((4, 5, 3, 3), 0.3);
        let o = regime_objective(Regime::Combined, &b, logits.view(), &MccConfig::exact(2.5), 0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(o.total, 0.0);
    }

    #[test]
    fn semi_with_uniform_source() {
        let b = batch(2, 2, 3, |i, y, x| ((i + y + x) % 4 + 1) as u8);
        let mut logits = Array4::<f64>::zeros((4, 5, 3, 3));
        logits.slice_mut(s![..2, .., .., ..]).assign(&Array4::from_shape_fn((2, 5, 3, 3), |(i, k, y, x)| ((i + 2 * k + y * x) % 5) as f64 * 0.4));
        let cfg = MccConfig::exact(2.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let o = regime_objective(Regime::MccSemi, &b, logits.view(), &cfg, 0, &mut rng).unwrap();
        let target = supervised_loss(logits.slice(s![..2, .., .., ..]), b.labels.slice(s![..2, .., ..]), 0).unwrap();
        // Four land-cover channels remain once the unknown channel is dropped.
        assert!((o.total - (target.value + 0.75)).abs() < 1e-12);
    }

    #[test]
    fn source_mcc_skips_padding_and_unknown_channel() {
        let logits = Array4::from_shape_fn((2, 5, 3, 3), |(i, k, y, x)| ((3 * i + 2 * k + y + 2 * x) % 7) as f64 * 0.3);
        let mut valid = ndarray::Array3::from_elem((2, 3, 3), true);
        valid[[0, 0, 0]] = false;
        valid[[1, 2, 1]] = false;
        let cfg = MccConfig::exact(2.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = source_mcc(logits.view(), valid.view(), &cfg, 0, &mut rng).unwrap();
        assert!(m.grad.index_axis(Axis(1), 0).iter().all(|&g| g == 0.0));
        for (i, y, x) in [(0, 0, 0), (1, 2, 1)] {
            assert!((0..5).all(|k| m.grad[[i, k, y, x]] == 0.0));
        }
        // Same value as MCC over the kept pixels and channels laid out as a single image.
        let kept: Vec<[f64; 4]> = valid
            .indexed_iter()
            .filter(|(_, &v)| v)
            .map(|((i, y, x), _)| [1, 2, 3, 4].map(|k| logits[[i, k, y, x]]))
            .collect();
        let flat = Array4::from_shape_fn((1, 4, 1, kept.len()), |(_, k, _, p)| kept[p][k]);
        let direct = mcc_loss_masked(flat.view(), None, &cfg, &mut rng).unwrap();
        assert!((m.value - direct.value).abs() < 1e-14);
    }

    #[test]
    fn regime_batch_mismatch() {
        let mixed = batch(1, 1, 2, |_, _, _| 1);
        let target_only = batch(2, 0, 2, |_, _, _| 1);
        let logits = Array4::zeros((2, 3, 2, 2));
        let cfg = MccConfig::exact(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(regime_objective(Regime::Supervised, &mixed, logits.view(), &cfg, 0, &mut rng).is_err());
        assert!(regime_objective(Regime::MccSemi, &target_only, logits.view(), &cfg, 0, &mut rng).is_err());
        assert!(regime_objective(Regime::Supervised, &target_only, logits.view(), &cfg, 0, &mut rng).is_ok());
    }
}
