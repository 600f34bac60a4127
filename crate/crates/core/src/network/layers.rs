//! Layers with explicit forward and backward passes.
//!
//! Training-mode `forward` caches what `backward` needs; `infer` is the
//! read-only evaluation path. `backward` accumulates parameter gradients and
//! returns the gradient with respect to the layer input.

use log::warn;
use rand::Rng;
use rand_distr::StandardNormal;

use super::tensor::Tensor4;
use crate::error::{Error, Result};

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(value: Vec<f64>) -> Self {
        let grad = vec![0.0; value.len()];
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Named state reachable through [`Module::slots`].
pub enum Slot<'a> {
    Param(&'a mut Param),
    Buffer(&'a mut Vec<f64>),
}

/// Owner of parameters and buffers, listed in a fixed order.
pub trait Module {
    fn slots<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, Slot<'a>)>);
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// 2-D cross-correlation, stride 1, zero "same" padding, square odd kernel.
#[derive(Debug, Clone)]
pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    /// `[out, in, k, k]`, row-major.
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor4>,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            weight: Param::new(vec![0.0; out_channels * in_channels * kernel * kernel]),
            bias: Param::new(vec![0.0; out_channels]),
            input: None,
        }
    }

    /// Convolution without a bias term, for use ahead of batch normalisation.
    pub fn without_bias(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        let mut conv = Self::new(in_channels, out_channels, kernel);
        conv.bias = Param::new(Vec::new());
        conv
    }

    pub fn has_bias(&self) -> bool {
        !self.bias.value.is_empty()
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn init_gaussian(&mut self, rng: &mut impl Rng, std: f64) {
        for w in &mut self.weight.value {
            *w = std * rng.sample::<f64, _>(StandardNormal);
        }
        self.bias.value.iter_mut().for_each(|b| *b = 0.0);
    }

    fn check(&self, x: &Tensor4) -> Result<()> {
        if x.channels() != self.in_channels {
            return Err(Error::invalid(format!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        Ok(())
    }

    /// Patch matrix `[in·k·k, H·W]` for one batch item.
    fn im2col(&self, item: &[f64], h: usize, w: usize, cols: &mut [f64]) {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let hw = h * w;
        for c in 0..self.in_channels {
            let plane = &item[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + ky) * k + kx) * hw;
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for i in 0..h {
                        let si = i as isize + dy;
                        let dst = &mut cols[row + i * w..row + (i + 1) * w];
                        if si < 0 || si >= h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[si as usize * w..(si as usize + 1) * w];
                        for (j, d) in dst.iter_mut().enumerate() {
                            let sj = j as isize + dx;
                            *d = if sj < 0 || sj >= w as isize { 0.0 } else { src[sj as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize, item: &mut [f64]) {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let hw = h * w;
        for c in 0..self.in_channels {
            let plane = &mut item[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + ky) * k + kx) * hw;
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for i in 0..h {
                        let si = i as isize + dy;
                        if si < 0 || si >= h as isize {
                            continue;
                        }
                        let src = &cols[row + i * w..row + (i + 1) * w];
                        let dst = &mut plane[si as usize * w..(si as usize + 1) * w];
                        for (j, v) in src.iter().enumerate() {
                            let sj = j as isize + dx;
                            if sj >= 0 && sj < w as isize {
                                dst[sj as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check(x)?;
        let [n, _, h, w] = x.shape();
        let hw = h * w;
        let kk = self.fan_in();
        let mut out = Tensor4::zeros([n, self.out_channels, h, w]);
        let mut cols = if self.kernel == 1 { Vec::new() } else { vec![0.0; kk * hw] };
        for b in 0..n {
            let patches: &[f64] = if self.kernel == 1 {
                x.item(b)
            } else {
                self.im2col(x.item(b), h, w, &mut cols);
                &cols
            };
            let dst = out.item_mut(b);
            if self.has_bias() {
                for (co, chunk) in dst.chunks_mut(hw).enumerate() {
                    chunk.fill(self.bias.value[co]);
                }
            }
            // out[co, p] += Σ_q W[co, q] · patches[q, p]
            unsafe {
                matrixmultiply::dgemm(
                    self.out_channels,
                    kk,
                    hw,
                    1.0,
                    self.weight.value.as_ptr(),
                    kk as isize,
                    1,
                    patches.as_ptr(),
                    hw as isize,
                    1,
                    1.0,
                    dst.as_mut_ptr(),
                    hw as isize,
                    1,
                );
            }
        }
        Ok(out)
    }

    pub fn forward(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let out = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor4) -> Tensor4 {
        let x = self.input.take().expect("conv backward without forward");
        let [n, _, h, w] = x.shape();
        let hw = h * w;
        let kk = self.fan_in();
        let mut dx = Tensor4::zeros(x.shape());
        let mut cols = if self.kernel == 1 { Vec::new() } else { vec![0.0; kk * hw] };
        let mut dcols = vec![0.0; kk * hw];
        for b in 0..n {
            let g = grad.item(b);
            if self.has_bias() {
                for (co, chunk) in g.chunks(hw).enumerate() {
                    self.bias.grad[co] += chunk.iter().sum::<f64>();
                }
            }
            let patches: &[f64] = if self.kernel == 1 {
                x.item(b)
            } else {
                self.im2col(x.item(b), h, w, &mut cols);
                &cols
            };
            unsafe {
                // dW[co, q] += Σ_p g[co, p] · patches[q, p]
                matrixmultiply::dgemm(
                    self.out_channels,
                    hw,
                    kk,
                    1.0,
                    g.as_ptr(),
                    hw as isize,
                    1,
                    patches.as_ptr(),
                    1,
                    hw as isize,
                    1.0,
                    self.weight.grad.as_mut_ptr(),
                    kk as isize,
                    1,
                );
                // dpatches[q, p] = Σ_co W[co, q] · g[co, p]
                matrixmultiply::dgemm(
                    kk,
                    self.out_channels,
                    hw,
                    1.0,
                    self.weight.value.as_ptr(),
                    1,
                    kk as isize,
                    g.as_ptr(),
                    hw as isize,
                    1,
                    0.0,
                    dcols.as_mut_ptr(),
                    hw as isize,
                    1,
                );
            }
            if self.kernel == 1 {
                dx.item_mut(b).copy_from_slice(&dcols);
            } else {
                self.col2im(&dcols, h, w, dx.item_mut(b));
            }
        }
        dx
    }
}

impl Module for Conv2d {
    fn slots<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, Slot<'a>)>) {
        let has_bias = self.has_bias();
        out.push((join(prefix, "weight"), Slot::Param(&mut self.weight)));
        if has_bias {
            out.push((join(prefix, "bias"), Slot::Param(&mut self.bias)));
        }
    }
}

/// Per-channel batch normalisation over `(N, H, W)`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    momentum: f64,
    eps: f64,
    /// Set once running statistics have been updated or loaded.
    pub stats_ready: bool,
    cache: Option<(Tensor4, Vec<f64>)>,
}

impl BatchNorm2d {
    pub fn new(channels: usize, momentum: f64, eps: f64) -> Self {
        BatchNorm2d {
            gamma: Param::new(vec![1.0; channels]),
            beta: Param::new(vec![0.0; channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum,
            eps,
            stats_ready: false,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    /// Normalises with batch statistics and updates the running estimates
    /// (unbiased variance, as in common frameworks).
    pub fn forward(&mut self, x: &Tensor4) -> Tensor4 {
        let [n, c, h, w] = x.shape();
        debug_assert_eq!(c, self.channels());
        let hw = h * w;
        let count = (n * hw) as f64;
        let mut out = Tensor4::zeros(x.shape());
        let mut x_hat = Tensor4::zeros(x.shape());
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let mut sum = 0.0;
            for b in 0..n {
                sum += x.item(b)[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
            }
            let mean = sum / count;
            let mut sq = 0.0;
            for b in 0..n {
                sq += x.item(b)[ch * hw..(ch + 1) * hw].iter().map(|v| (v - mean).powi(2)).sum::<f64>();
            }
            let var = sq / count;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = istd;
            let (g, bt) = (self.gamma.value[ch], self.beta.value[ch]);
            for b in 0..n {
                let src = &x.item(b)[ch * hw..(ch + 1) * hw];
                let xh = &mut x_hat.item_mut(b)[ch * hw..(ch + 1) * hw];
                for (d, s) in xh.iter_mut().zip(src) {
                    *d = (s - mean) * istd;
                }
                let dst = &mut out.item_mut(b)[ch * hw..(ch + 1) * hw];
                for (d, s) in dst.iter_mut().zip(xh.iter()) {
                    *d = g * s + bt;
                }
            }
            let unbiased = if count > 1.0 { sq / (count - 1.0) } else { var };
            self.running_mean[ch] = (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * mean;
            self.running_var[ch] = (1.0 - self.momentum) * self.running_var[ch] + self.momentum * unbiased;
        }
        self.stats_ready = true;
        self.cache = Some((x_hat, inv_std));
        out
    }

    pub fn infer(&self, x: &Tensor4) -> Tensor4 {
        if !self.stats_ready {
            warn!("batch norm evaluated before any training step; using initial running statistics");
        }
        let [n, c, h, w] = x.shape();
        let hw = h * w;
        let mut out = x.clone();
        for b in 0..n {
            let item = out.item_mut(b);
            for ch in 0..c {
                let scale = self.gamma.value[ch] / (self.running_var[ch] + self.eps).sqrt();
                let shift = self.beta.value[ch] - scale * self.running_mean[ch];
                for v in &mut item[ch * hw..(ch + 1) * hw] {
                    *v = scale * *v + shift;
                }
            }
        }
        out
    }

    pub fn backward(&mut self, grad: &Tensor4) -> Tensor4 {
        let (x_hat, inv_std) = self.cache.take().expect("batch norm backward without forward");
        let [n, c, h, w] = grad.shape();
        let hw = h * w;
        let count = (n * hw) as f64;
        let mut dx = Tensor4::zeros(grad.shape());
        for ch in 0..c {
            let (mut sum_g, mut sum_gx) = (0.0, 0.0);
            for b in 0..n {
                let g = &grad.item(b)[ch * hw..(ch + 1) * hw];
                let xh = &x_hat.item(b)[ch * hw..(ch + 1) * hw];
                for (gv, xv) in g.iter().zip(xh) {
                    sum_g += gv;
                    sum_gx += gv * xv;
                }
            }
            self.beta.grad[ch] += sum_g;
            self.gamma.grad[ch] += sum_gx;
            let k = self.gamma.value[ch] * inv_std[ch] / count;
            for b in 0..n {
                let g = &grad.item(b)[ch * hw..(ch + 1) * hw];
                let xh = &x_hat.item(b)[ch * hw..(ch + 1) * hw];
                let d = &mut dx.item_mut(b)[ch * hw..(ch + 1) * hw];
                for ((dv, gv), xv) in d.iter_mut().zip(g).zip(xh) {
                    *dv = k * (count * gv - sum_g - xv * sum_gx);
                }
            }
        }
        dx
    }
}

impl Module for BatchNorm2d {
    fn slots<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, Slot<'a>)>) {
        out.push((join(prefix, "gamma"), Slot::Param(&mut self.gamma)));
        out.push((join(prefix, "beta"), Slot::Param(&mut self.beta)));
        out.push((join(prefix, "running_mean"), Slot::Buffer(&mut self.running_mean)));
        out.push((join(prefix, "running_var"), Slot::Buffer(&mut self.running_var)));
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn infer(x: &Tensor4) -> Tensor4 {
        let mut out = x.clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        out
    }

    pub fn forward(&mut self, x: &Tensor4) -> Tensor4 {
        self.mask = Some(x.data().iter().map(|&v| v > 0.0).collect());
        Self::infer(x)
    }

    pub fn backward(&mut self, grad: &Tensor4) -> Tensor4 {
        let mask = self.mask.take().expect("relu backward without forward");
        let mut out = grad.clone();
        for (g, &m) in out.data_mut().iter_mut().zip(&mask) {
            if !m {
                *g = 0.0;
            }
        }
        out
    }
}

/// 2×2 max pooling with stride 2; remembers the winning position.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    argmax: Option<(Vec<usize>, [usize; 4])>,
}

impl MaxPool2 {
    fn pool(x: &Tensor4) -> Result<(Tensor4, Vec<usize>)> {
        let [n, c, h, w] = x.shape();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid(format!("max pooling needs even spatial dims, got {h}x{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor4::zeros([n, c, oh, ow]);
        let mut idx = Vec::with_capacity(n * c * oh * ow);
        let src = x.data();
        let mut k = 0;
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * h * w;
                for i in 0..oh {
                    for j in 0..ow {
                        let cands = [
                            base + 2 * i * w + 2 * j,
                            base + 2 * i * w + 2 * j + 1,
                            base + (2 * i + 1) * w + 2 * j,
                            base + (2 * i + 1) * w + 2 * j + 1,
                        ];
                        // First maximum wins ties.
                        let mut best = cands[0];
                        for &p in &cands[1..] {
                            if src[p] > src[best] {
                                best = p;
                            }
                        }
                        out.data_mut()[k] = src[best];
                        idx.push(best);
                        k += 1;
                    }
                }
            }
        }
        Ok((out, idx))
    }

    pub fn infer(x: &Tensor4) -> Result<Tensor4> {
        Ok(Self::pool(x)?.0)
    }

    pub fn forward(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let (out, idx) = Self::pool(x)?;
        self.argmax = Some((idx, x.shape()));
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor4) -> Tensor4 {
        let (idx, shape) = self.argmax.take().expect("maxpool backward without forward");
        let mut dx = Tensor4::zeros(shape);
        for (g, &p) in grad.data().iter().zip(&idx) {
            dx.data_mut()[p] += g;
        }
        dx
    }
}

/// Interpolation taps for ×2 bilinear upsampling with half-pixel centres:
/// `(lower index, upper index, weight of upper)` per output position.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// ×2 bilinear upsampling; backward applies the transposed weights.
#[derive(Debug, Clone, Default)]
pub struct Upsample2 {
    input_shape: Option<[usize; 4]>,
}

impl Upsample2 {
    pub fn infer(x: &Tensor4) -> Tensor4 {
        let [n, c, h, w] = x.shape();
        let rows = upsample_taps(h);
        let cols = upsample_taps(w);
        let mut out = Tensor4::zeros([n, c, 2 * h, 2 * w]);
        for b in 0..n {
            for ch in 0..c {
                let src = x.plane(b, ch);
                let mut dst = out.plane_mut(b, ch);
                for (i, &(r0, r1, fy)) in rows.iter().enumerate() {
                    for (j, &(c0, c1, fx)) in cols.iter().enumerate() {
                        let top = src[[r0, c0]] * (1.0 - fx) + src[[r0, c1]] * fx;
                        let bottom = src[[r1, c0]] * (1.0 - fx) + src[[r1, c1]] * fx;
                        dst[[i, j]] = top * (1.0 - fy) + bottom * fy;
                    }
                }
            }
        }
        out
    }

    pub fn forward(&mut self, x: &Tensor4) -> Tensor4 {
        self.input_shape = Some(x.shape());
        Self::infer(x)
    }

    pub fn backward(&mut self, grad: &Tensor4) -> Tensor4 {
        let shape = self.input_shape.take().expect("upsample backward without forward");
        let [n, c, h, w] = shape;
        let rows = upsample_taps(h);
        let cols = upsample_taps(w);
        let mut dx = Tensor4::zeros(shape);
        for b in 0..n {
            for ch in 0..c {
                let g = grad.plane(b, ch).to_owned();
                let mut dst = dx.plane_mut(b, ch);
                for (i, &(r0, r1, fy)) in rows.iter().enumerate() {
                    for (j, &(c0, c1, fx)) in cols.iter().enumerate() {
                        let v = g[[i, j]];
                        dst[[r0, c0]] += v * (1.0 - fy) * (1.0 - fx);
                        dst[[r0, c1]] += v * (1.0 - fy) * fx;
                        dst[[r1, c0]] += v * fy * (1.0 - fx);
                        dst[[r1, c1]] += v * fy * fx;
                    }
                }
            }
        }
        dx
    }
}
