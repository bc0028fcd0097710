use rand::Rng;

use super::conv::accumulate;
use super::{glorot_uniform, Conv2d, Param, Parameterized, Tensor};
use crate::error::{Error, Result};

/// Locally connected 2D layer: the connectivity of [`Conv2d`] (valid
/// padding, stride 1) with an independent kernel and bias at every output
/// position.
///
/// The weight tensor is stored as `[C_out, H_out * W_out, C_in, kh * kw]`,
/// i.e. row-major `(co, oy, ox, ci, ky, kx)`, so the forward loop walks it
/// sequentially. Biases are `[C_out, H_out, W_out]`, like the output.
#[derive(Debug, Clone, PartialEq)]
pub struct LocallyConnected2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub weight: Param,
    pub bias: Param,
}

impl LocallyConnected2d {
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        (in_h, in_w): (usize, usize),
        (kh, kw): (usize, usize),
        rng: &mut R,
    ) -> Result<Self> {
        if in_h < kh || in_w < kw {
            return Err(Error::shape(
                "LCN input smaller than kernel",
                &[kh, kw],
                &[in_h, in_w],
            ));
        }
        let (oh, ow) = (in_h - kh + 1, in_w - kw + 1);
        let per = out_channels * in_channels * kh * kw;
        let w = glorot_uniform(
            rng,
            in_channels * kh * kw,
            out_channels * kh * kw,
            oh * ow * per,
        );
        Ok(LocallyConnected2d {
            in_channels,
            out_channels,
            in_h,
            in_w,
            kh,
            kw,
            weight: Param::new(
                "weight",
                Tensor::new(&[out_channels, oh * ow, in_channels, kh * kw], w)?,
                true,
            ),
            bias: Param::new("bias", Tensor::zeros(&[out_channels, oh, ow]), false),
        })
    }

    /// Every position starts from `conv`'s kernel and bias, for an input of
    /// `in_h x in_w`.
    pub fn from_conv(conv: &Conv2d, in_h: usize, in_w: usize) -> Result<Self> {
        let [_, oh, ow] = conv.output_shape(in_h, in_w)?;
        let (co_n, ci_n, kh, kw) = (conv.out_channels, conv.in_channels, conv.kh, conv.kw);
        let kernel = conv.kernel.value.data();
        let per = ci_n * kh * kw;
        let mut w = Vec::with_capacity(oh * ow * kernel.len());
        let mut b = Vec::with_capacity(oh * ow * co_n);
        for co in 0..co_n {
            for _ in 0..oh * ow {
                w.extend_from_slice(&kernel[co * per..(co + 1) * per]);
                b.push(conv.bias.value.data()[co]);
            }
        }
        Ok(LocallyConnected2d {
            in_channels: ci_n,
            out_channels: co_n,
            in_h,
            in_w,
            kh,
            kw,
            weight: Param::new(
                "weight",
                Tensor::new(&[co_n, oh * ow, ci_n, kh * kw], w)?,
                true,
            ),
            bias: Param::new("bias", Tensor::new(&[co_n, oh, ow], b)?, false),
        })
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [
            self.out_channels,
            self.in_h - self.kh + 1,
            self.in_w - self.kw + 1,
        ]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.expect_shape(
            "LCN input [C_in, H, W]",
            &[self.in_channels, self.in_h, self.in_w],
        )?;
        let [co_n, oh, ow] = self.output_shape();
        let (ci_n, kh, kw, h, w) = (self.in_channels, self.kh, self.kw, self.in_h, self.in_w);
        let per = ci_n * kh * kw;
        let xs = x.data();
        let k = self.weight.value.data();
        let b = self.bias.value.data();
        let mut y = vec![0.0; co_n * oh * ow];
        // Same loop nest and accumulation order as Conv2d::forward.
        for co in 0..co_n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let out = (co * oh + oy) * ow + ox;
                    let kbase = out * per;
                    let mut acc = b[out];
                    for ci in 0..ci_n {
                        for ky in 0..kh {
                            let xrow = (ci * h + oy + ky) * w + ox;
                            let krow = kbase + (ci * kh + ky) * kw;
                            for (kv, xv) in k[krow..krow + kw].iter().zip(&xs[xrow..xrow + kw]) {
                                acc += kv * xv;
                            }
                        }
                    }
                    y[out] = acc;
                }
            }
        }
        Tensor::new(&[co_n, oh, ow], y)
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        x.expect_shape(
            "LCN input [C_in, H, W]",
            &[self.in_channels, self.in_h, self.in_w],
        )?;
        let [co_n, oh, ow] = self.output_shape();
        dy.expect_shape("LCN upstream gradient", &[co_n, oh, ow])?;
        let (ci_n, kh, kw, h, w) = (self.in_channels, self.kh, self.kw, self.in_h, self.in_w);
        let per = ci_n * kh * kw;
        let xs = x.data();
        let g = dy.data();
        let k = self.weight.value.data();
        let gk = self.weight.grad.data_mut();
        let gb = self.bias.grad.data_mut();
        let mut dx = vec![0.0; xs.len()];
        for co in 0..co_n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let out = (co * oh + oy) * ow + ox;
                    let d = g[out];
                    gb[out] += d;
                    if d == 0.0 {
                        continue;
                    }
                    let kbase = out * per;
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

impl Parameterized for LocallyConnected2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
