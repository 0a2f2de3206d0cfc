use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::SegmentationNetwork;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adaptive-moment gradient descent with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    /// Applied updates (drives bias correction).
    pub(crate) updates: u64,
    /// Every call to `step`, including skipped zero-gradient steps.
    pub(crate) global_step: usize,
    pub(crate) first_moment: Vec<ArrayD<f32>>,
    pub(crate) second_moment: Vec<ArrayD<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            updates: 0,
            global_step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn global_step(&self) -> usize {
        self.global_step
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Applies one update from the accumulated gradients.
    ///
    /// Returns `false` without touching parameters or moments when every gradient is zero.
    pub fn step(&mut self, net: &mut dyn SegmentationNetwork) -> Result<bool> {
        self.global_step += 1;
        let mut params = net.params_mut();
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
            self.second_moment = self.first_moment.clone();
        }
        if self.first_moment.len() != params.len() {
            return Err(Error::Checkpoint("optimizer state does not match the network".into()));
        }
        if params.iter().all(|p| p.grad.iter().all(|&g| g == 0.0)) {
            return Ok(false);
        }
        self.updates += 1;
        let c = self.config;
        let t = self.updates as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let step_size = (c.learning_rate / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let (b1, b2, eps) = (c.beta1 as f32, c.beta2 as f32, c.epsilon as f32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first_moment).zip(&mut self.second_moment) {
            let value = p.value.as_slice_mut().expect("contiguous parameter");
            let grad = p.grad.as_slice().expect("contiguous gradient");
            let m = m.as_slice_mut().expect("contiguous moment");
            let v = v.as_slice_mut().expect("contiguous moment");
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                value[i] -= step_size * m[i] / (v[i].sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_network, ArchitectureSpec};

    #[test]
    fn zero_gradient_skips_update() {
        let mut net = build_network(&ArchitectureSpec::mini_unet(3), 0).unwrap();
        let before: Vec<_> = net.params().iter().map(|p| p.value.clone()).collect();
        let mut adam = Adam::new(AdamConfig::default());
        net.zero_grad();
        assert!(!adam.step(net.as_mut()).unwrap());
        let after: Vec<_> = net.params().iter().map(|p| p.value.clone()).collect();
        assert_eq!(before, after);
        assert_eq!(adam.global_step(), 1);
        assert_eq!(adam.updates(), 0);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut net = build_network(&ArchitectureSpec::mini_unet(3), 0).unwrap();
        let before = net.params()[0].value.clone();
        for p in net.params_mut() {
            p.grad.fill(0.5);
        }
        let mut adam = Adam::new(AdamConfig::default());
        assert!(adam.step(net.as_mut()).unwrap());
        let after = &net.params()[0].value;
        for (a, b) in before.iter().zip(after.iter()) {
            assert!(((a - b) - 1e-3).abs() < 1e-6);
        }
    }
}
