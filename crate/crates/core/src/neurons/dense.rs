use rand::Rng;

use super::{glorot_uniform, Param, Parameterized, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer `y = W x + b`, `W` is `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Param,
    pub bias: Param,
}

impl Dense {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let w = glorot_uniform(rng, inputs, outputs, inputs * outputs);
        Dense {
            inputs,
            outputs,
            weight: Param::new(
                "weight",
                Tensor::new(&[outputs, inputs], w).expect("shape"),
                true,
            ),
            bias: Param::new("bias", Tensor::zeros(&[outputs]), false),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.inputs {
            return Err(Error::shape("dense input", &[self.inputs], &[x.len()]));
        }
        let w = self.weight.value.data();
        Ok(self
            .bias
            .value
            .data()
            .iter()
            .enumerate()
            .map(|(o, b)| {
                let row = &w[o * self.inputs..(o + 1) * self.inputs];
                b + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect())
    }

    /// Accumulates parameter gradients for input `x` and returns `dL/dx`.
    pub fn backward(&mut self, x: &[f64], dy: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.inputs {
            return Err(Error::shape(
                "dense backward input",
                &[self.inputs],
                &[x.len()],
            ));
        }
        if dy.len() != self.outputs {
            return Err(Error::shape(
                "dense upstream gradient",
                &[self.outputs],
                &[dy.len()],
            ));
        }
        let n = self.inputs;
        let w = self.weight.value.data();
        let gw = self.weight.grad.data_mut();
        let gb = self.bias.grad.data_mut();
        let mut dx = vec![0.0; n];
        for (o, &g) in dy.iter().enumerate() {
            gb[o] += g;
            if g == 0.0 {
                continue;
            }
            let grow = &mut gw[o * n..(o + 1) * n];
            let wrow = &w[o * n..(o + 1) * n];
            for i in 0..n {
                grow[i] += g * x[i];
                dx[i] += g * wrow[i];
            }
        }
        Ok(dx)
    }
}

impl Parameterized for Dense {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
