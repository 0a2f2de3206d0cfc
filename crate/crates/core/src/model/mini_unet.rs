//! Small skip-connected encoder-decoder used for desk-scale training.

use ndarray::{s, Array4, ArrayView4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{concat_channels, to_batch_major, to_channel_major, Conv2d, MaxPool2, Param, Relu, UpConv2x2};
use super::{ArchitectureSpec, Mode, SegmentationNetwork};
use crate::error::{Error, Result};

/// Two 3x3 conv + ReLU layers.
#[derive(Debug, Clone)]
struct DoubleConv {
    c1: Conv2d,
    r1: Relu,
    c2: Conv2d,
    r2: Relu,
}

impl DoubleConv {
    fn new(name: &str, in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            c1: Conv2d::new(&format!("{name}.conv1"), in_ch, out_ch, 3, rng),
            r1: Relu::default(),
            c2: Conv2d::new(&format!("{name}.conv2"), out_ch, out_ch, 3, rng),
            r2: Relu::default(),
        }
    }

    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let h = self.r1.forward(self.c1.forward(x, train), train);
        self.r2.forward(self.c2.forward(&h, train), train)
    }

    fn backward(&mut self, d: Array4<f32>) -> Array4<f32> {
        let d = self.c2.backward(&self.r2.backward(d));
        self.c1.backward(&self.r1.backward(d))
    }

    fn params(&self) -> impl Iterator<Item = &Param> {
        self.c1.params().into_iter().chain(self.c2.params())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.c1.params_mut().into_iter().chain(self.c2.params_mut())
    }
}

/// Three-stage U-shaped network: `w0/w1/w2` channel encoder, mirrored decoder with skips.
#[derive(Debug, Clone)]
pub struct MiniUnet {
    spec: ArchitectureSpec,
    mode: Mode,
    enc1: DoubleConv,
    pool1: MaxPool2,
    enc2: DoubleConv,
    pool2: MaxPool2,
    bottleneck: DoubleConv,
    up2: UpConv2x2,
    dec2: DoubleConv,
    up1: UpConv2x2,
    dec1: DoubleConv,
    head: Conv2d,
    skip_channels: (usize, usize),
}

impl MiniUnet {
    pub const DOWNSAMPLE: usize = 4;
    pub const DEFAULT_WIDTHS: [usize; 3] = [16, 32, 64];

    pub fn new(spec: &ArchitectureSpec, seed: u64) -> Result<Self> {
        let widths: Vec<usize> = if spec.widths.is_empty() {
            Self::DEFAULT_WIDTHS.to_vec()
        } else {
            spec.widths.clone()
        };
        if widths.len() != 3 || widths.contains(&0) {
            return Err(Error::Config(format!("mini-unet needs three positive widths, got {widths:?}")));
        }
        let (w0, w1, w2) = (widths[0], widths[1], widths[2]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let mut spec = spec.clone();
        spec.widths = widths;
        Ok(Self {
            enc1: DoubleConv::new("enc1", 3, w0, rng),
            pool1: MaxPool2::default(),
            enc2: DoubleConv::new("enc2", w0, w1, rng),
            pool2: MaxPool2::default(),
            bottleneck: DoubleConv::new("bottleneck", w1, w2, rng),
            up2: UpConv2x2::new("up2", w2, w1, rng),
            dec2: DoubleConv::new("dec2", 2 * w1, w1, rng),
            up1: UpConv2x2::new("up1", w1, w0, rng),
            dec1: DoubleConv::new("dec1", 2 * w0, w0, rng),
            head: Conv2d::new("head", w0, spec.num_classes, 1, rng),
            skip_channels: (w0, w1),
            mode: Mode::Train,
            spec,
        })
    }
}

impl SegmentationNetwork for MiniUnet {
    fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    fn forward(&mut self, images: ArrayView4<f32>) -> Result<Array4<f32>> {
        let (_, c, h, w) = images.dim();
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 input channels, got {c}")));
        }
        if h == 0 || w == 0 || h % Self::DOWNSAMPLE != 0 || w % Self::DOWNSAMPLE != 0 {
            return Err(Error::Shape(format!(
                "mini-unet input {h}x{w} must be a positive multiple of {}",
                Self::DOWNSAMPLE
            )));
        }
        let train = self.mode == Mode::Train;
        let x = to_channel_major(images);
        let s1 = self.enc1.forward(&x, train);
        let s2 = self.enc2.forward(&self.pool1.forward(&s1, train), train);
        let b = self.bottleneck.forward(&self.pool2.forward(&s2, train), train);
        let u2 = self.up2.forward(&b, train);
        let d2 = self.dec2.forward(&concat_channels(&u2, &s2), train);
        let u1 = self.up1.forward(&d2, train);
        let d1 = self.dec1.forward(&concat_channels(&u1, &s1), train);
        let logits = self.head.forward(&d1, train);
        Ok(to_batch_major(logits.view()))
    }

    fn backward(&mut self, grad_logits: ArrayView4<f32>) -> Result<()> {
        if self.mode != Mode::Train {
            return Err(Error::InvalidArgument("backward requires train mode".into()));
        }
        let (w0, w1) = self.skip_channels;
        let g = to_channel_major(grad_logits);
        let g = self.head.backward(&g);
        let g = self.dec1.backward(g);
        let (g_u1, g_s1) = (g.slice(s![..w0, .., .., ..]).to_owned(), g.slice(s![w0.., .., .., ..]).to_owned());
        let g = self.up1.backward(&g_u1);
        let g = self.dec2.backward(g);
        let (g_u2, g_s2) = (g.slice(s![..w1, .., .., ..]).to_owned(), g.slice(s![w1.., .., .., ..]).to_owned());
        let g = self.up2.backward(&g_u2);
        let g = self.bottleneck.backward(g);
        let g = self.pool2.backward(&g) + g_s2;
        let g = self.enc2.backward(g);
        let g = self.pool1.backward(&g) + g_s1;
        self.enc1.backward(g);
        Ok(())
    }

    fn params(&self) -> Vec<&Param> {
        self.enc1
            .params()
            .chain(self.enc2.params())
            .chain(self.bottleneck.params())
            .chain(self.up2.params())
            .chain(self.dec2.params())
            .chain(self.up1.params())
            .chain(self.dec1.params())
            .chain(self.head.params())
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.enc1
            .params_mut()
            .chain(self.enc2.params_mut())
            .chain(self.bottleneck.params_mut())
            .chain(self.up2.params_mut())
            .chain(self.dec2.params_mut())
            .chain(self.up1.params_mut())
            .chain(self.dec1.params_mut())
            .chain(self.head.params_mut())
            .collect()
    }

    fn clone_box(&self) -> Box<dyn SegmentationNetwork> {
        Box::new(self.clone())
    }
}
