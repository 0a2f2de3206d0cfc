//! Mixed-domain mini-batch composition.

use ndarray::{s, Array2, Array3, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Target,
    Source,
}

/// Endless sequence of sample indices that reshuffles at every epoch boundary.
#[derive(Debug, Clone)]
pub struct SampleStream {
    name: &'static str,
    order: Vec<usize>,
    pos: usize,
    epoch: usize,
    rng: ChaCha8Rng,
}

impl SampleStream {
    pub fn new(name: &'static str, len: usize, seed: u64) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptyStream(name));
        }
        let mut stream = Self {
            name,
            order: (0..len).collect(),
            pos: 0,
            epoch: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        stream.order.shuffle(&mut stream.rng);
        Ok(stream)
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Completed passes over the stream.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn next_index(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
            self.epoch += 1;
        }
        let i = self.order[self.pos];
        self.pos += 1;
        i
    }
}

/// One loaded training sample: normalized `[3, H, W]` image and `[H, W]` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Array3<f32>,
    pub labels: Array2<u8>,
    /// False where augmentation exposed padding instead of imagery.
    pub valid: Array2<bool>,
}

impl Sample {
    /// A sample whose every pixel shows imagery.
    pub fn new(id: impl Into<String>, image: Array3<f32>, labels: Array2<u8>) -> Self {
        let valid = Array2::from_elem(labels.raw_dim(), true);
        Self {
            id: id.into(),
            image,
            labels,
            valid,
        }
    }

    pub fn with_valid(mut self, valid: Array2<bool>) -> Self {
        self.valid = valid;
        self
    }
}

/// Mini-batch whose target samples occupy the leading index range.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub images: Array4<f32>,
    pub labels: Array3<u8>,
    pub valid: Array3<bool>,
    pub domains: Vec<Domain>,
    pub ids: Vec<String>,
}

impl MixedBatch {
    pub fn from_samples(samples: Vec<(Domain, Sample)>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("batch has no samples".into()))?;
        let (c, h, w) = first.1.image.dim();
        let b = samples.len();
        let mut images = Array4::<f32>::zeros((b, c, h, w));
        let mut labels = Array3::<u8>::zeros((b, h, w));
        let mut valid = Array3::from_elem((b, h, w), true);
        let mut domains = Vec::with_capacity(b);
        let mut ids = Vec::with_capacity(b);
        let mut seen_source = false;
        for (i, (domain, sample)) in samples.into_iter().enumerate() {
            if sample.image.dim() != (c, h, w) || sample.labels.dim() != (h, w) || sample.valid.dim() != (h, w) {
                return Err(Error::Shape(format!("sample `{}` does not match the batch shape", sample.id)));
            }
            match domain {
                Domain::Source => seen_source = true,
                Domain::Target if seen_source => {
                    return Err(Error::InvalidArgument("target samples must precede source samples".into()))
                }
                Domain::Target => {}
            }
            images.slice_mut(s![i, .., .., ..]).assign(&sample.image);
            labels.slice_mut(s![i, .., ..]).assign(&sample.labels);
            valid.slice_mut(s![i, .., ..]).assign(&sample.valid);
            domains.push(domain);
            ids.push(sample.id);
        }
        Ok(Self {
            images,
            labels,
            valid,
            domains,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn target_count(&self) -> usize {
        self.domains.iter().filter(|d| **d == Domain::Target).count()
    }

    pub fn source_count(&self) -> usize {
        self.len() - self.target_count()
    }

    /// Exactly half target (leading) and half source.
    pub fn is_mixed(&self) -> bool {
        let b = self.len();
        b >= 2
            && b.is_multiple_of(2)
            && self.domains[..b / 2].iter().all(|d| *d == Domain::Target)
            && self.domains[b / 2..].iter().all(|d| *d == Domain::Source)
    }

    pub fn is_target_only(&self) -> bool {
        !self.is_empty() && self.domains.iter().all(|d| *d == Domain::Target)
    }

    pub fn describe(&self) -> String {
        self.ids.join(",")
    }
}

/// Draws `batch_size / 2` target then `batch_size / 2` source samples.
pub fn compose_batch<F>(target: &mut SampleStream, source: &mut SampleStream, batch_size: usize, mut load: F) -> Result<MixedBatch>
where
    F: FnMut(Domain, usize) -> Result<Sample>,
{
    if batch_size < 2 || !batch_size.is_multiple_of(2) {
        return Err(Error::OddBatchSize(batch_size));
    }
    let half = batch_size / 2;
    let mut samples = Vec::with_capacity(batch_size);
    for _ in 0..half {
        let i = target.next_index();
        samples.push((Domain::Target, load(Domain::Target, i)?));
    }
    for _ in 0..half {
        let i = source.next_index();
        samples.push((Domain::Source, load(Domain::Source, i)?));
    }
    MixedBatch::from_samples(samples)
}

/// Target-only batch for the supervised baseline.
pub fn single_domain_batch<F>(stream: &mut SampleStream, batch_size: usize, mut load: F) -> Result<MixedBatch>
where
    F: FnMut(Domain, usize) -> Result<Sample>,
{
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let samples = (0..batch_size)
        .map(|_| {
            let i = stream.next_index();
            Ok((Domain::Target, load(Domain::Target, i)?))
        })
        .collect::<Result<Vec<_>>>()?;
    MixedBatch::from_samples(samples)
}
