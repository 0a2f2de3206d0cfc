//! Segmentation network contract, the reference mini-unet, optimisation and checkpoints.

mod checkpoint;
pub mod layers;
mod mini_unet;
mod optim;

use std::collections::BTreeMap;

use ndarray::{Array4, ArrayView4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{regime_objective, MccConfig, Regime};
use crate::sampler::MixedBatch;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use layers::Param;
pub use mini_unet::MiniUnet;
pub use optim::{Adam, AdamConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// A network mapping `[B, 3, H, W]` images to `[B, C, H, W]` logits.
///
/// In train mode `forward` caches what `backward` needs; `backward` accumulates
/// into each parameter's `grad`.
pub trait SegmentationNetwork: Send {
    fn spec(&self) -> &ArchitectureSpec;
    fn mode(&self) -> Mode;
    fn set_mode(&mut self, mode: Mode);
    fn forward(&mut self, images: ArrayView4<f32>) -> Result<Array4<f32>>;
    fn backward(&mut self, grad_logits: ArrayView4<f32>) -> Result<()>;
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;
    fn clone_box(&self) -> Box<dyn SegmentationNetwork>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
    }

    fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub name: String,
    #[serde(default)]
    pub encoder: String,
    pub num_classes: usize,
    #[serde(default)]
    pub widths: Vec<usize>,
}

impl ArchitectureSpec {
    pub fn mini_unet(num_classes: usize) -> Self {
        Self {
            name: "mini-unet".into(),
            encoder: "plain".into(),
            num_classes,
            widths: MiniUnet::DEFAULT_WIDTHS.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes {} must be at least 2", self.num_classes)));
        }
        Ok(())
    }
}

/// Architectures named in the literature that attach through registered adapters.
pub const EXTERNAL_ARCHITECTURES: [&str; 4] = ["unet++", "deeplabv3+", "bisenetv1", "hrnet"];

pub type NetworkConstructor = Box<dyn Fn(&ArchitectureSpec, u64) -> Result<Box<dyn SegmentationNetwork>> + Send + Sync>;

/// Name → constructor lookup for segmentation networks.
pub struct ArchitectureRegistry {
    constructors: BTreeMap<String, NetworkConstructor>,
}

impl Default for ArchitectureRegistry {
    fn default() -> Self {
        let mut r = Self {
            constructors: BTreeMap::new(),
        };
        r.register("mini-unet", Box::new(|spec, seed| Ok(Box::new(MiniUnet::new(spec, seed)?))));
        r
    }
}

impl ArchitectureRegistry {
    pub fn register(&mut self, name: &str, ctor: NetworkConstructor) {
        self.constructors.insert(name.to_string(), ctor);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.constructors.keys().map(String::as_str)
    }

    pub fn build(&self, spec: &ArchitectureSpec, seed: u64) -> Result<Box<dyn SegmentationNetwork>> {
        spec.validate()?;
        match self.constructors.get(&spec.name) {
            Some(ctor) => ctor(spec, seed),
            None if EXTERNAL_ARCHITECTURES.contains(&spec.name.as_str()) => {
                Err(Error::AdapterNotRegistered(spec.name.clone()))
            }
            None => Err(Error::UnknownArchitecture(spec.name.clone())),
        }
    }
}

/// Builds `spec` from the default registry with seeded initial parameters.
pub fn build_network(spec: &ArchitectureSpec, seed: u64) -> Result<Box<dyn SegmentationNetwork>> {
    ArchitectureRegistry::default().build(spec, seed)
}

/// Loss components reported by one optimisation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub loss: f64,
    pub supervised: f64,
    pub mcc: f64,
    /// False when the gradient was exactly zero and no update was applied.
    pub updated: bool,
}

/// One forward pass, objective evaluation, backward pass and Adam update.
pub fn training_step<R: Rng + ?Sized>(
    net: &mut dyn SegmentationNetwork,
    batch: &MixedBatch,
    regime: Regime,
    cfg: &MccConfig,
    ignore_index: u8,
    optimizer: &mut Adam,
    rng: &mut R,
) -> Result<StepOutcome> {
    if net.mode() != Mode::Train {
        return Err(Error::InvalidArgument("training_step needs a network in train mode".into()));
    }
    let step = optimizer.global_step() + 1;
    let logits = net.forward(batch.images.view())?;
    let logits64 = logits.mapv(f64::from);
    let non_finite = || Error::NonFiniteLoss {
        step,
        batch_id: batch.describe(),
    };
    if logits64.iter().any(|v| !v.is_finite()) {
        return Err(non_finite());
    }
    let objective = regime_objective(regime, batch, logits64.view(), cfg, ignore_index, rng)?;
    if !objective.total.is_finite() {
        return Err(non_finite());
    }
    net.zero_grad();
    net.backward(objective.grad.mapv(|g| g as f32).view())?;
    let updated = optimizer.step(net)?;
    Ok(StepOutcome {
        loss: objective.total,
        supervised: objective.supervised,
        mcc: objective.mcc,
        updated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn output_shape_matches_input() {
        let mut net = build_network(&ArchitectureSpec::mini_unet(5), 0).unwrap();
        for (h, w) in [(64, 64), (32, 96), (96, 32)] {
            let out = net.forward(Array4::zeros((1, 3, h, w)).view()).unwrap();
            assert_eq!(out.dim(), (1, 5, h, w));
        }
        assert!(net.forward(Array4::zeros((1, 3, 30, 32)).view()).is_err());
        assert!(net.forward(Array4::zeros((1, 2, 32, 32)).view()).is_err());
    }

    #[test]
    fn parameter_budget() {
        let net = build_network(&ArchitectureSpec::mini_unet(5), 0).unwrap();
        let n = net.num_parameters();
        assert!((80_000..150_000).contains(&n), "{n} parameters");
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = build_network(&ArchitectureSpec::mini_unet(5), 7).unwrap();
        let b = build_network(&ArchitectureSpec::mini_unet(5), 7).unwrap();
        let c = build_network(&ArchitectureSpec::mini_unet(5), 8).unwrap();
        let vals = |n: &dyn SegmentationNetwork| n.params().iter().map(|p| p.value.clone()).collect::<Vec<_>>();
        assert_eq!(vals(a.as_ref()), vals(b.as_ref()));
        assert_ne!(vals(a.as_ref()), vals(c.as_ref()));
    }

    #[test]
    fn registry_errors() {
        let mut spec = ArchitectureSpec::mini_unet(5);
        spec.name = "hrnet".into();
        let err = build_network(&spec, 0).err().unwrap();
        assert!(err.to_string().contains("adapter not registered"));
        spec.name = "resnet-9000".into();
        assert!(matches!(build_network(&spec, 0), Err(Error::UnknownArchitecture(_))));
        assert!(build_network(&ArchitectureSpec::mini_unet(1), 0).is_err());
    }

    #[test]
    fn adapter_registration() {
        let mut reg = ArchitectureRegistry::default();
        reg.register(
            "hrnet",
            Box::new(|spec, seed| {
                let mut inner = spec.clone();
                inner.name = "mini-unet".into();
                Ok(Box::new(MiniUnet::new(&inner, seed)?))
            }),
        );
        let mut spec = ArchitectureSpec::mini_unet(3);
        spec.name = "hrnet".into();
        assert!(reg.build(&spec, 1).is_ok());
    }

    #[test]
    fn eval_forward_is_bit_identical() {
        let mut net = build_network(&ArchitectureSpec::mini_unet(4), 3).unwrap();
        net.set_mode(Mode::Eval);
        let x = Array4::from_shape_fn((2, 3, 32, 32), |(b, c, y, x)| ((b + c * 3 + y * 5 + x * 7) % 13) as f32 / 13.0);
        let a = net.forward(x.view()).unwrap();
        let b = net.forward(x.view()).unwrap();
        assert_eq!(a, b);
        assert!(net.backward(a.view()).is_err());
    }
}
