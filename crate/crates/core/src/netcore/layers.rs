//! Layers with explicit forward caches and backward passes.
//!
//! Every `backward` accumulates parameter gradients into a gradient
//! container of the same type and returns the input gradient.

use rand::Rng;

use super::linalg::{gemm, View};
use super::tensor::{FeatureMap, Tensor};
use super::Parameters;
use crate::{Error, Result};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// SiLU, `x · σ(x)`.
pub fn silu_forward(pre: &[f64]) -> Vec<f64> {
    pre.iter().map(|&x| x * sigmoid(x)).collect()
}

/// Multiplies `grad` in place by the SiLU derivative at `pre`.
pub fn silu_backward(pre: &[f64], grad: &mut [f64]) {
    for (g, &x) in grad.iter_mut().zip(pre) {
        let s = sigmoid(x);
        *g *= s * (1.0 + x * (1.0 - s));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Vec<f64>,
    in_shape: (usize, usize, usize),
    out_hw: (usize, usize),
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize, dilation: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[out_ch, in_ch, kernel, kernel]),
            bias: Tensor::zeros(&[out_ch]),
            stride,
            pad,
            dilation,
        }
    }

    /// He-normal weights, zero bias.
    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        let fan_in = self.in_channels() * self.kernel() * self.kernel();
        self.weight.fill_normal(rng, (2.0 / fan_in as f64).sqrt());
        self.bias.fill(0.0);
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape[2]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let span = self.dilation * (self.kernel() - 1) + 1;
        (
            (h + 2 * self.pad - span) / self.stride + 1,
            (w + 2 * self.pad - span) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &FeatureMap, ho: usize, wo: usize) -> Vec<f64> {
        let k = self.kernel();
        let n = ho * wo;
        let mut cols = vec![0.0; x.channels * k * k * n];
        for c in 0..x.channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + ky) * k + kx) * n;
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky * self.dilation) as isize - self.pad as isize;
                        if iy < 0 || iy >= x.height as isize {
                            continue;
                        }
                        let src = (c * x.height + iy as usize) * x.width;
                        let dst = row + oy * wo;
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx * self.dilation) as isize - self.pad as isize;
                            if ix >= 0 && ix < x.width as isize {
                                cols[dst + ox] = x.data[src + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &[f64], shape: (usize, usize, usize), ho: usize, wo: usize) -> FeatureMap {
        let (ch, h, w) = shape;
        let k = self.kernel();
        let n = ho * wo;
        let mut dx = FeatureMap::zeros(ch, h, w);
        for c in 0..ch {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + ky) * k + kx) * n;
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky * self.dilation) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = (c * h + iy as usize) * w;
                        let src = row + oy * wo;
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx * self.dilation) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dx.data[dst + ix as usize] += dcols[src + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<(FeatureMap, ConvCache)> {
        if x.channels != self.in_channels() {
            return Err(Error::shape(
                format!("{} input channels", self.in_channels()),
                x.shape_string(),
            ));
        }
        let (ho, wo) = self.output_hw(x.height, x.width);
        let cols = self.im2col(x, ho, wo);
        let (m, kk, n) = (self.out_channels(), self.weight.len() / self.out_channels(), ho * wo);
        let mut out = vec![0.0; m * n];
        for (c, &b) in self.bias.data.iter().enumerate() {
            out[c * n..(c + 1) * n].iter_mut().for_each(|v| *v = b);
        }
        gemm(
            1.0,
            View::new(&self.weight.data, m, kk),
            View::new(&cols, kk, n),
            1.0,
            &mut out,
        );
        Ok((
            FeatureMap::from_vec(m, ho, wo, out),
            ConvCache {
                cols,
                in_shape: (x.channels, x.height, x.width),
                out_hw: (ho, wo),
            },
        ))
    }

    /// Accumulates weight/bias gradients into `grad`; returns the input
    /// gradient when `need_input_grad`.
    pub fn backward(
        &self,
        cache: &ConvCache,
        dy: &FeatureMap,
        grad: &mut Conv2d,
        need_input_grad: bool,
    ) -> Option<FeatureMap> {
        let (ho, wo) = cache.out_hw;
        let (m, kk, n) = (self.out_channels(), self.weight.len() / self.out_channels(), ho * wo);
        debug_assert_eq!(dy.data.len(), m * n);
        gemm(
            1.0,
            View::new(&dy.data, m, n),
            View::transposed(&cache.cols, kk, n),
            1.0,
            &mut grad.weight.data,
        );
        for c in 0..m {
            grad.bias.data[c] += dy.data[c * n..(c + 1) * n].iter().sum::<f64>();
        }
        if !need_input_grad {
            return None;
        }
        let mut dcols = vec![0.0; kk * n];
        gemm(
            1.0,
            View::transposed(&self.weight.data, m, kk),
            View::new(&dy.data, m, n),
            0.0,
            &mut dcols,
        );
        Some(self.col2im(&dcols, cache.in_shape, ho, wo))
    }
}

impl Parameters for Conv2d {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(format!("{prefix}/weight"), &self.weight);
        f(format!("{prefix}/bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}/weight"), &mut self.weight);
        f(format!("{prefix}/bias"), &mut self.bias);
    }
}

/// Fully connected layer acting on rows: `Y = X·Wᵀ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[outputs, inputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R, gain: f64) {
        let fan_in = self.inputs();
        self.weight.fill_normal(rng, gain * (1.0 / fan_in as f64).sqrt());
        self.bias.fill(0.0);
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[0]
    }

    /// `x` holds `rows` inputs back to back.
    pub fn forward(&self, x: &[f64], rows: usize) -> Result<Vec<f64>> {
        let (i, o) = (self.inputs(), self.outputs());
        if x.len() != rows * i {
            return Err(Error::shape(format!("{rows}×{i}"), x.len()));
        }
        let mut y = Vec::with_capacity(rows * o);
        for _ in 0..rows {
            y.extend_from_slice(&self.bias.data);
        }
        gemm(
            1.0,
            View::new(x, rows, i),
            View::transposed(&self.weight.data, o, i),
            1.0,
            &mut y,
        );
        Ok(y)
    }

    pub fn backward(
        &self,
        x: &[f64],
        dy: &[f64],
        rows: usize,
        grad: &mut Linear,
        need_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let (i, o) = (self.inputs(), self.outputs());
        gemm(
            1.0,
            View::transposed(dy, rows, o),
            View::new(x, rows, i),
            1.0,
            &mut grad.weight.data,
        );
        for r in 0..rows {
            for (g, d) in grad.bias.data.iter_mut().zip(&dy[r * o..(r + 1) * o]) {
                *g += d;
            }
        }
        if !need_input_grad {
            return None;
        }
        let mut dx = vec![0.0; rows * i];
        gemm(
            1.0,
            View::new(dy, rows, o),
            View::new(&self.weight.data, o, i),
            0.0,
            &mut dx,
        );
        Some(dx)
    }
}

impl Parameters for Linear {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(format!("{prefix}/weight"), &self.weight);
        f(format!("{prefix}/bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}/weight"), &mut self.weight);
        f(format!("{prefix}/bias"), &mut self.bias);
    }
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2x(x: &FeatureMap) -> FeatureMap {
    let (h, w) = (2 * x.height, 2 * x.width);
    let mut y = FeatureMap::zeros(x.channels, h, w);
    for c in 0..x.channels {
        for yy in 0..h {
            for xx in 0..w {
                *y.at_mut(c, yy, xx) = x.at(c, yy / 2, xx / 2);
            }
        }
    }
    y
}

pub fn upsample2x_backward(dy: &FeatureMap) -> FeatureMap {
    let mut dx = FeatureMap::zeros(dy.channels, dy.height / 2, dy.width / 2);
    for c in 0..dy.channels {
        for yy in 0..dy.height {
            for xx in 0..dy.width {
                *dx.at_mut(c, yy / 2, xx / 2) += dy.at(c, yy, xx);
            }
        }
    }
    dx
}
