//! Convolutional building blocks with explicit backward passes.
//!
//! Activations use a channel-major `[C, B, H, W]` layout so that a convolution
//! over the whole batch is a single matrix product.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array4, ArrayD, ArrayView2, ArrayView4, ArrayViewMut2, Axis, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            value: ArrayD::zeros(IxDyn(shape)),
            grad: ArrayD::zeros(IxDyn(shape)),
        }
    }

    /// He-normal initialisation for a layer with `fan_in` inputs.
    pub fn he_normal<R: Rng + ?Sized>(name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(name, shape);
        let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("finite std");
        p.value.mapv_inplace(|_| normal.sample(rng));
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    fn matrix(&self, rows: usize, cols: usize) -> ArrayView2<'_, f32> {
        self.value
            .view()
            .into_shape_with_order((rows, cols))
            .expect("parameter is contiguous")
    }

    fn grad_matrix(&mut self, rows: usize, cols: usize) -> ArrayViewMut2<'_, f32> {
        self.grad
            .view_mut()
            .into_shape_with_order((rows, cols))
            .expect("gradient is contiguous")
    }
}

fn as_matrix(x: &Array4<f32>) -> ArrayView2<'_, f32> {
    let (c, b, h, w) = x.dim();
    x.view().into_shape_with_order((c, b * h * w)).expect("activation is contiguous")
}

/// Square convolution with stride 1 and same-size zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    cols: Option<ndarray::Array2<f32>>,
    in_dims: (usize, usize, usize),
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(name: &str, in_ch: usize, out_ch: usize, k: usize, rng: &mut R) -> Self {
        assert!(k % 2 == 1, "odd kernel");
        Self {
            weight: Param::he_normal(format!("{name}.weight"), &[out_ch, in_ch, k, k], in_ch * k * k, rng),
            bias: Param::zeros(format!("{name}.bias"), &[out_ch]),
            in_ch,
            out_ch,
            k,
            cols: None,
            in_dims: (0, 0, 0),
        }
    }

    fn im2col(&self, x: &Array4<f32>) -> ndarray::Array2<f32> {
        let (c, b, h, w) = x.dim();
        let k = self.k;
        let pad = k / 2;
        let n = b * h * w;
        let mut cols = ndarray::Array2::<f32>::zeros((c * k * k, n));
        let src = x.as_slice().expect("contiguous input");
        let dst = cols.as_slice_mut().expect("contiguous cols");
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * n;
                    for bi in 0..b {
                        let plane = (ci * b + bi) * h * w;
                        for y in 0..h {
                            let sy = y as isize + ky as isize - pad as isize;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let out_base = row + (bi * h + y) * w;
                            let in_base = plane + sy as usize * w;
                            let x_lo = pad.saturating_sub(kx);
                            let x_hi = (w + pad).saturating_sub(kx).min(w);
                            for xo in x_lo..x_hi {
                                dst[out_base + xo] = src[in_base + xo + kx - pad];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &ndarray::Array2<f32>, dims: (usize, usize, usize)) -> Array4<f32> {
        let (b, h, w) = dims;
        let k = self.k;
        let pad = k / 2;
        let n = b * h * w;
        let mut dx = Array4::<f32>::zeros((self.in_ch, b, h, w));
        let src = cols.as_slice().expect("contiguous cols");
        let dst = dx.as_slice_mut().expect("contiguous grad");
        for ci in 0..self.in_ch {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * n;
                    for bi in 0..b {
                        let plane = (ci * b + bi) * h * w;
                        for y in 0..h {
                            let sy = y as isize + ky as isize - pad as isize;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let col_base = row + (bi * h + y) * w;
                            let in_base = plane + sy as usize * w;
                            let x_lo = pad.saturating_sub(kx);
                            let x_hi = (w + pad).saturating_sub(kx).min(w);
                            for xo in x_lo..x_hi {
                                dst[in_base + xo + kx - pad] += src[col_base + xo];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let (_, b, h, w) = x.dim();
        let kk = self.in_ch * self.k * self.k;
        let cols = if self.k == 1 { as_matrix(x).to_owned() } else { self.im2col(x) };
        let mut out = Array4::<f32>::zeros((self.out_ch, b, h, w));
        {
            let mut om = out
                .view_mut()
                .into_shape_with_order((self.out_ch, b * h * w))
                .expect("contiguous output");
            general_mat_mul(1.0, &self.weight.matrix(self.out_ch, kk), &cols, 0.0, &mut om);
            for (mut row, &bias) in om.axis_iter_mut(Axis(0)).zip(self.bias.value.iter()) {
                row.mapv_inplace(|v| v + bias);
            }
        }
        if train {
            self.cols = Some(cols);
            self.in_dims = (b, h, w);
        }
        out
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, dout: &Array4<f32>) -> Array4<f32> {
        let cols = self.cols.take().expect("forward in train mode before backward");
        let kk = self.in_ch * self.k * self.k;
        let dm = as_matrix(dout);
        general_mat_mul(1.0, &dm, &cols.t(), 1.0, &mut self.weight.grad_matrix(self.out_ch, kk));
        let db: Array1<f32> = dm.sum_axis(Axis(1));
        self.bias.grad += &db.into_dyn();
        let mut dcols = ndarray::Array2::<f32>::zeros(cols.raw_dim());
        general_mat_mul(1.0, &self.weight.matrix(self.out_ch, kk).t(), &dm, 0.0, &mut dcols);
        let (b, h, w) = self.in_dims;
        if self.k == 1 {
            dcols.into_shape_with_order((self.in_ch, b, h, w)).expect("contiguous")
        } else {
            self.col2im(&dcols, self.in_dims)
        }
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// 2x2 transposed convolution with stride 2 (exact 2x upsampling).
#[derive(Debug, Clone)]
pub struct UpConv2x2 {
    /// Stored as `[out, 2, 2, in]`, i.e. a `(4 * out) x in` matrix.
    pub weight: Param,
    pub bias: Param,
    in_ch: usize,
    out_ch: usize,
    input: Option<Array4<f32>>,
}

impl UpConv2x2 {
    pub fn new<R: Rng + ?Sized>(name: &str, in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::he_normal(format!("{name}.weight"), &[out_ch, 2, 2, in_ch], in_ch, rng),
            bias: Param::zeros(format!("{name}.bias"), &[out_ch]),
            in_ch,
            out_ch,
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let (_, b, h, w) = x.dim();
        let mut y = ndarray::Array2::<f32>::zeros((self.out_ch * 4, b * h * w));
        general_mat_mul(1.0, &self.weight.matrix(self.out_ch * 4, self.in_ch), &as_matrix(x), 0.0, &mut y);
        let mut out = Array4::<f32>::zeros((self.out_ch, b, 2 * h, 2 * w));
        let ys = y.as_slice().expect("contiguous");
        let os = out.as_slice_mut().expect("contiguous");
        let n = b * h * w;
        for co in 0..self.out_ch {
            let bias = self.bias.value[co];
            for a in 0..2 {
                for bb in 0..2 {
                    let row = ((co * 2 + a) * 2 + bb) * n;
                    for bi in 0..b {
                        for yy in 0..h {
                            let obase = ((co * b + bi) * 2 * h + 2 * yy + a) * 2 * w + bb;
                            let ibase = row + (bi * h + yy) * w;
                            for xx in 0..w {
                                os[obase + 2 * xx] = ys[ibase + xx] + bias;
                            }
                        }
                    }
                }
            }
        }
        if train {
            self.input = Some(x.clone());
        }
        out
    }

    pub fn backward(&mut self, dout: &Array4<f32>) -> Array4<f32> {
        let x = self.input.take().expect("forward in train mode before backward");
        let (_, b, h, w) = x.dim();
        let n = b * h * w;
        let mut dy = ndarray::Array2::<f32>::zeros((self.out_ch * 4, n));
        {
            let ds = dout.as_slice().expect("contiguous");
            let dys = dy.as_slice_mut().expect("contiguous");
            for co in 0..self.out_ch {
                for a in 0..2 {
                    for bb in 0..2 {
                        let row = ((co * 2 + a) * 2 + bb) * n;
                        for bi in 0..b {
                            for yy in 0..h {
                                let obase = ((co * b + bi) * 2 * h + 2 * yy + a) * 2 * w + bb;
                                let ibase = row + (bi * h + yy) * w;
                                for xx in 0..w {
                                    dys[ibase + xx] = ds[obase + 2 * xx];
                                }
                            }
                        }
                    }
                }
            }
        }
        let xm = as_matrix(&x);
        general_mat_mul(1.0, &dy, &xm.t(), 1.0, &mut self.weight.grad_matrix(self.out_ch * 4, self.in_ch));
        let db = dout.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(1));
        self.bias.grad += &db.into_dyn();
        let mut dx = ndarray::Array2::<f32>::zeros((self.in_ch, n));
        general_mat_mul(1.0, &self.weight.matrix(self.out_ch * 4, self.in_ch).t(), &dy, 0.0, &mut dx);
        dx.into_shape_with_order((self.in_ch, b, h, w)).expect("contiguous")
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Array4<bool>>,
}

impl Relu {
    pub fn forward(&mut self, mut x: Array4<f32>, train: bool) -> Array4<f32> {
        if train {
            self.mask = Some(x.mapv(|v| v > 0.0));
        }
        x.mapv_inplace(|v| v.max(0.0));
        x
    }

    pub fn backward(&mut self, mut dout: Array4<f32>) -> Array4<f32> {
        let mask = self.mask.take().expect("forward in train mode before backward");
        dout.zip_mut_with(&mask, |g, &m| {
            if !m {
                *g = 0.0
            }
        });
        dout
    }
}

/// 2x2 max pooling with stride 2.
type Shape4 = (usize, usize, usize, usize);

#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    argmax: Option<(Array4<u8>, Shape4)>,
}

impl MaxPool2 {
    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let (c, b, h, w) = x.dim();
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Array4::<f32>::zeros((c, b, oh, ow));
        let mut arg = Array4::<u8>::zeros((c, b, oh, ow));
        for ((ci, bi, y, xx), o) in out.indexed_iter_mut() {
            let mut best = f32::NEG_INFINITY;
            let mut best_k = 0u8;
            for k in 0..4u8 {
                let v = x[[ci, bi, 2 * y + (k / 2) as usize, 2 * xx + (k % 2) as usize]];
                if v > best {
                    best = v;
                    best_k = k;
                }
            }
            *o = best;
            arg[[ci, bi, y, xx]] = best_k;
        }
        if train {
            self.argmax = Some((arg, (c, b, h, w)));
        }
        out
    }

    pub fn backward(&mut self, dout: &Array4<f32>) -> Array4<f32> {
        let (arg, dims) = self.argmax.take().expect("forward in train mode before backward");
        let mut dx = Array4::<f32>::zeros(dims);
        for ((ci, bi, y, xx), &k) in arg.indexed_iter() {
            dx[[ci, bi, 2 * y + (k / 2) as usize, 2 * xx + (k % 2) as usize]] = dout[[ci, bi, y, xx]];
        }
        dx
    }
}

/// `[B, C, H, W]` to the internal `[C, B, H, W]` layout.
pub fn to_channel_major(x: ArrayView4<f32>) -> Array4<f32> {
    x.permuted_axes([1, 0, 2, 3]).as_standard_layout().into_owned()
}

/// Internal `[C, B, H, W]` back to `[B, C, H, W]`.
pub fn to_batch_major(x: ArrayView4<f32>) -> Array4<f32> {
    x.permuted_axes([1, 0, 2, 3]).as_standard_layout().into_owned()
}

/// Concatenates along the channel axis.
pub fn concat_channels(a: &Array4<f32>, b: &Array4<f32>) -> Array4<f32> {
    ndarray::concatenate(Axis(0), &[a.view(), b.view()]).expect("matching spatial dims")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand4(dims: (usize, usize, usize, usize), seed: u64) -> Array4<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn(dims, |_| rng.gen_range(-1.0..1.0))
    }

    /// Loss `sum(out * probe)` so that `dout = probe`.
    fn check_input_grad(mut forward: impl FnMut(&Array4<f32>) -> Array4<f32>, x: &Array4<f32>, probe: &Array4<f32>, dx: &Array4<f32>) {
        let eps = 1e-2f32;
        for idx in [0usize, 3, 7, x.len() / 2, x.len() - 1] {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += eps;
            xm.as_slice_mut().unwrap()[idx] -= eps;
            let fp: f32 = (&forward(&xp) * probe).sum();
            let fm: f32 = (&forward(&xm) * probe).sum();
            let num = (fp - fm) / (2.0 * eps);
            let ana = dx.as_slice().unwrap()[idx];
            assert!((num - ana).abs() < 2e-2 * (1.0 + ana.abs()), "idx {idx}: numeric {num} vs analytic {ana}");
        }
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::new("c", 2, 3, 3, &mut rng);
        conv.bias.value.fill(0.5);
        let x = rand4((2, 2, 5, 4), 2);
        let out = conv.forward(&x, false);
        let w4 = conv.weight.value.view().into_dimensionality::<ndarray::Ix4>().unwrap();
        for ((co, b, y, xx), &o) in out.indexed_iter() {
            let mut acc = 0.5f32;
            for ci in 0..2 {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (sy, sx) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                        if (0..5).contains(&sy) && (0..4).contains(&sx) {
                            acc += w4[[co, ci, ky, kx]] * x[[ci, b, sy as usize, sx as usize]];
                        }
                    }
                }
            }
            assert!((acc - o).abs() < 1e-5);
        }
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = Conv2d::new("c", 3, 4, 3, &mut rng);
        let x = rand4((3, 2, 4, 5), 4);
        let probe = rand4((4, 2, 4, 5), 5);
        conv.forward(&x, true);
        let dx = conv.backward(&probe);
        let snapshot = conv.clone();
        check_input_grad(|xi| snapshot.clone().forward(xi, false), &x, &probe, &dx);

        // Weight gradient against finite differences.
        let eps = 1e-2f32;
        for idx in [0usize, 17, 50, 107] {
            let mut cp = snapshot.clone();
            let mut cm = snapshot.clone();
            cp.weight.value.as_slice_mut().unwrap()[idx] += eps;
            cm.weight.value.as_slice_mut().unwrap()[idx] -= eps;
            let num = ((&cp.forward(&x, false) * &probe).sum() - (&cm.forward(&x, false) * &probe).sum()) / (2.0 * eps);
            let ana = conv.weight.grad.as_slice().unwrap()[idx];
            assert!((num - ana).abs() < 2e-2 * (1.0 + ana.abs()), "w{idx}: {num} vs {ana}");
        }
        assert!((conv.bias.grad[[1]] - probe.index_axis(Axis(0), 1).sum()).abs() < 1e-4);
    }

    #[test]
    fn pointwise_conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut conv = Conv2d::new("h", 3, 2, 1, &mut rng);
        let x = rand4((3, 1, 3, 3), 7);
        let probe = rand4((2, 1, 3, 3), 8);
        conv.forward(&x, true);
        let dx = conv.backward(&probe);
        let snapshot = conv.clone();
        check_input_grad(|xi| snapshot.clone().forward(xi, false), &x, &probe, &dx);
    }

    #[test]
    fn upconv_layout_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut up = UpConv2x2::new("u", 2, 3, &mut rng);
        let x = rand4((2, 2, 3, 2), 10);
        let out = up.forward(&x, true);
        assert_eq!(out.dim(), (3, 2, 6, 4));
        let w4 = up.weight.value.view().into_dimensionality::<ndarray::Ix4>().unwrap();
        let direct: f32 = (0..2).map(|ci| w4[[1, 1, 0, ci]] * x[[ci, 1, 2, 1]]).sum();
        assert!((out[[1, 1, 5, 2]] - direct).abs() < 1e-5);
        let probe = rand4((3, 2, 6, 4), 11);
        let dx = up.backward(&probe);
        let snapshot = up.clone();
        check_input_grad(|xi| snapshot.clone().forward(xi, false), &x, &probe, &dx);
    }

    #[test]
    fn pool_and_relu_route_gradients() {
        let x = rand4((2, 1, 4, 4), 12);
        let mut pool = MaxPool2::default();
        let out = pool.forward(&x, true);
        let probe = rand4((2, 1, 2, 2), 13);
        let dx = pool.backward(&probe);
        assert!((dx.sum() - probe.sum()).abs() < 1e-5);
        assert_eq!(out[[1, 0, 1, 0]], x.slice(ndarray::s![1, 0, 2..4, 0..2]).fold(f32::MIN, |a, &b| a.max(b)));

        let mut relu = Relu::default();
        let y = relu.forward(x.clone(), true);
        let g = relu.backward(Array4::ones(x.raw_dim()));
        for ((v, o), d) in x.iter().zip(y.iter()).zip(g.iter()) {
            assert_eq!(*o, v.max(0.0));
            assert_eq!(*d, if *v > 0.0 { 1.0 } else { 0.0 });
        }
    }
}
