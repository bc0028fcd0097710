use rand::Rng;

use super::{glorot_uniform, Param, Parameterized, Tensor};
use crate::error::{Error, Result};

/// 2D convolution, valid padding, stride 1. Input `[C_in, H, W]`, output
/// `[C_out, H - kh + 1, W - kw + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    /// `[C_out, C_in, kh, kw]`
    pub kernel: Param,
    /// `[C_out]`
    pub bias: Param,
}

impl Conv2d {
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kh: usize,
        kw: usize,
        rng: &mut R,
    ) -> Self {
        let n = out_channels * in_channels * kh * kw;
        let w = glorot_uniform(rng, in_channels * kh * kw, out_channels * kh * kw, n);
        Conv2d {
            in_channels,
            out_channels,
            kh,
            kw,
            kernel: Param::new(
                "kernel",
                Tensor::new(&[out_channels, in_channels, kh, kw], w).expect("shape"),
                true,
            ),
            bias: Param::new("bias", Tensor::zeros(&[out_channels]), false),
        }
    }

    pub fn output_shape(&self, h: usize, w: usize) -> Result<[usize; 3]> {
        if h < self.kh || w < self.kw {
            return Err(Error::shape(
                "conv input smaller than kernel",
                &[self.kh, self.kw],
                &[h, w],
            ));
        }
        Ok([self.out_channels, h - self.kh + 1, w - self.kw + 1])
    }

    fn input_dims(&self, x: &Tensor) -> Result<(usize, usize)> {
        match *x.shape() {
            [c, h, w] if c == self.in_channels => Ok((h, w)),
            _ => Err(Error::shape(
                "conv input [C_in, H, W]",
                &[self.in_channels, 0, 0],
                x.shape(),
            )),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (h, w) = self.input_dims(x)?;
        let [co_n, oh, ow] = self.output_shape(h, w)?;
        let (ci_n, kh, kw) = (self.in_channels, self.kh, self.kw);
        let xs = x.data();
        let k = self.kernel.value.data();
        let b = self.bias.value.data();
        let mut y = vec![0.0; co_n * oh * ow];
        for co in 0..co_n {
            let kbase = co * ci_n * kh * kw;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[co];
                    for ci in 0..ci_n {
                        for ky in 0..kh {
                            let xrow = (ci * h + oy + ky) * w + ox;
                            let krow = kbase + (ci * kh + ky) * kw;
                            for (kv, xv) in k[krow..krow + kw].iter().zip(&xs[xrow..xrow + kw]) {
                                acc += kv * xv;
                            }
                        }
                    }
                    y[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        Tensor::new(&[co_n, oh, ow], y)
    }

    /// Accumulates kernel/bias gradients for input `x` and returns `dL/dx`.
    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        let (h, w) = self.input_dims(x)?;
        let [co_n, oh, ow] = self.output_shape(h, w)?;
        dy.expect_shape("conv upstream gradient", &[co_n, oh, ow])?;
        let (ci_n, kh, kw) = (self.in_channels, self.kh, self.kw);
        let xs = x.data();
        let g = dy.data();
        let k = self.kernel.value.data();
        let gk = self.kernel.grad.data_mut();
        let gb = self.bias.grad.data_mut();
        let mut dx = vec![0.0; xs.len()];
        for co in 0..co_n {
            let kbase = co * ci_n * kh * kw;
            for oy in 0..oh {
                for ox in 0..ow {
                    let d = g[(co * oh + oy) * ow + ox];
                    gb[co] += d;
                    if d == 0.0 {
                        continue;
                    }
                    for ci in 0..ci_n {
                        for ky in 0..kh {
                            let xrow = (ci * h + oy + ky) * w + ox;
                            let krow = kbase + (ci * kh + ky) * kw;
                            accumulate(
                                d,
                                &xs[xrow..xrow + kw],
                                &k[krow..krow + kw],
                                &mut gk[krow..krow + kw],
                                &mut dx[xrow..xrow + kw],
                            );
                        }
                    }
                }
            }
        }
        Tensor::new(x.shape(), dx)
    }
}

/// `gk += d * x` and `dx += d * k` over one kernel row.
#[inline(always)]
pub(super) fn accumulate(d: f64, x: &[f64], k: &[f64], gk: &mut [f64], dx: &mut [f64]) {
    for (((g, xv), dxv), kv) in gk.iter_mut().zip(x).zip(dx.iter_mut()).zip(k) {
        *g += d * xv;
        *dxv += d * kv;
    }
}

impl Parameterized for Conv2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.kernel, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.kernel, &mut self.bias]
    }
}
