//! Single-file checkpoint archive.
//!
//! Layout: 8-byte magic `MCCSEGCK`, little-endian `u32` format version,
//! little-endian `u64` header length, a JSON header, then every tensor listed in
//! the header as raw little-endian `f32` values in header order.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::{Adam, AdamConfig, ArchitectureRegistry, ArchitectureSpec, SegmentationNetwork};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "mccseg-checkpoint/1";
const MAGIC: &[u8; 8] = b"MCCSEGCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    architecture: ArchitectureSpec,
    init_seed: u64,
    global_step: usize,
    optimizer: AdamConfig,
    optimizer_updates: u64,
    config: serde_json::Value,
    params: Vec<TensorEntry>,
    has_moments: bool,
}

/// Network parameters, optimizer state and run metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub architecture: ArchitectureSpec,
    pub init_seed: u64,
    pub global_step: usize,
    pub config: serde_json::Value,
    params: Vec<(String, ArrayD<f32>)>,
    optimizer: Adam,
}

impl Checkpoint {
    pub fn capture(net: &dyn SegmentationNetwork, optimizer: &Adam, init_seed: u64, config: serde_json::Value) -> Self {
        Self {
            architecture: net.spec().clone(),
            init_seed,
            global_step: optimizer.global_step(),
            config,
            params: net.params().iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
            optimizer: optimizer.clone(),
        }
    }

    /// Rebuilds the network and optimizer; parameter names and shapes must match.
    pub fn restore(&self, registry: &ArchitectureRegistry) -> Result<(Box<dyn SegmentationNetwork>, Adam)> {
        let mut net = registry.build(&self.architecture, self.init_seed)?;
        {
            let mut params = net.params_mut();
            if params.len() != self.params.len() {
                return Err(Error::Checkpoint(format!(
                    "architecture has {} tensors, checkpoint has {}",
                    params.len(),
                    self.params.len()
                )));
            }
            for (p, (name, value)) in params.iter_mut().zip(&self.params) {
                if &p.name != name || p.value.shape() != value.shape() {
                    return Err(Error::Checkpoint(format!(
                        "tensor `{name}` {:?} does not match `{}` {:?}",
                        value.shape(),
                        p.name,
                        p.value.shape()
                    )));
                }
                p.value.assign(value);
            }
        }
        Ok((net, self.optimizer.clone()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let has_moments = !self.optimizer.first_moment.is_empty();
        let header = Header {
            format: CHECKPOINT_FORMAT.into(),
            architecture: self.architecture.clone(),
            init_seed: self.init_seed,
            global_step: self.global_step,
            optimizer: self.optimizer.config,
            optimizer_updates: self.optimizer.updates,
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|(name, v)| TensorEntry {
                    name: name.clone(),
                    shape: v.shape().to_vec(),
                })
                .collect(),
            has_moments,
        };
        let header = serde_json::to_vec(&header)?;
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        let mut push = |a: &ArrayD<f32>| {
            for v in a.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (_, v) in &self.params {
            push(v);
        }
        if has_moments {
            for m in self.optimizer.first_moment.iter().chain(&self.optimizer.second_moment) {
                push(m);
            }
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint archive"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..).ok_or_else(|| bad("truncated"))?;
        let header: Header = serde_json::from_slice(body.get(..header_len).ok_or_else(|| bad("truncated header"))?)
            .map_err(|e| bad(&e.to_string()))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(bad(&format!("unexpected format tag `{}`", header.format)));
        }
        let mut cursor = &body[header_len..];
        let mut take = |shape: &[usize]| -> Result<ArrayD<f32>> {
            let n: usize = shape.iter().product();
            if cursor.len() < n * 4 {
                return Err(bad("truncated tensor data"));
            }
            let (head, rest) = cursor.split_at(n * 4);
            cursor = rest;
            let values = head
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Ok(ArrayD::from_shape_vec(IxDyn(shape), values).expect("length matches shape"))
        };
        let params = header
            .params
            .iter()
            .map(|e| Ok((e.name.clone(), take(&e.shape)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut optimizer = Adam::new(header.optimizer);
        optimizer.updates = header.optimizer_updates;
        optimizer.global_step = header.global_step;
        if header.has_moments {
            optimizer.first_moment = header.params.iter().map(|e| take(&e.shape)).collect::<Result<_>>()?;
            optimizer.second_moment = header.params.iter().map(|e| take(&e.shape)).collect::<Result<_>>()?;
        }
        if !cursor.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Self {
            architecture: header.architecture,
            init_seed: header.init_seed,
            global_step: header.global_step,
            config: header.config,
            params,
            optimizer,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_network, Mode};
    use ndarray::Array4;

    #[test]
    fn round_trip_reproduces_logits() {
        let dir = tempfile::tempdir().unwrap();
        let mut net = build_network(&ArchitectureSpec::mini_unet(5), 11).unwrap();
        for p in net.params_mut() {
            p.value.mapv_inplace(|v| v * 1.5 + 0.01);
            p.grad.fill(0.1);
        }
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(net.as_mut()).unwrap();
        let ck = Checkpoint::capture(net.as_ref(), &adam, 11, serde_json::json!({"regime": "mcc_semi"}));
        let path = dir.path().join("model.ckpt");
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ck);

        let (mut restored, opt) = loaded.restore(&ArchitectureRegistry::default()).unwrap();
        assert_eq!(opt, adam);
        net.set_mode(Mode::Eval);
        restored.set_mode(Mode::Eval);
        let x = Array4::from_shape_fn((1, 3, 16, 16), |(_, c, y, x)| (c as f32 - 1.0) * 0.3 + (y * x) as f32 * 0.01);
        assert_eq!(net.forward(x.view()).unwrap(), restored.forward(x.view()).unwrap());
    }

    #[test]
    fn rejects_mismatch_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let net = build_network(&ArchitectureSpec::mini_unet(5), 0).unwrap();
        let mut ck = Checkpoint::capture(net.as_ref(), &Adam::new(AdamConfig::default()), 0, serde_json::Value::Null);
        ck.architecture.num_classes = 4;
        assert!(matches!(ck.restore(&ArchitectureRegistry::default()), Err(Error::Checkpoint(_))));

        let p = dir.path().join("junk.ckpt");
        std::fs::write(&p, b"definitely not a checkpoint").unwrap();
        assert!(Checkpoint::load(&p).is_err());
    }
}
