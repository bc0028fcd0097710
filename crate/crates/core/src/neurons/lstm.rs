use rand::Rng;

use super::{glorot_uniform, sigmoid, Param, Parameterized, Tensor};
use crate::error::{Error, Result};

/// LSTM cell with gate blocks stacked in the order input, forget, cell,
/// output:
///
/// ```text
/// a = W x + U h + b          (4H)
/// i = σ(a_i)  f = σ(a_f)  g = tanh(a_g)  o = σ(a_o)
/// c' = f ⊙ c + i ⊙ g
/// h' = o ⊙ tanh(c')
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub inputs: usize,
    pub hidden: usize,
    /// `[4H, inputs]`
    pub w: Param,
    /// `[4H, H]`
    pub u: Param,
    /// `[4H]`; the forget block starts at 1.
    pub b: Param,
}

/// Everything one cell application needs for its backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Post-activation gates `[i, f, g, o]`, each of length H.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmCell {
    pub fn new<R: Rng>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let g = 4 * hidden;
        let w = glorot_uniform(rng, inputs, g, g * inputs);
        let u = glorot_uniform(rng, hidden, g, g * hidden);
        let mut b = vec![0.0; g];
        b[hidden..2 * hidden].iter_mut().for_each(|x| *x = 1.0);
        LstmCell {
            inputs,
            hidden,
            w: Param::new("w", Tensor::new(&[g, inputs], w).expect("shape"), true),
            u: Param::new("u", Tensor::new(&[g, hidden], u).expect("shape"), true),
            b: Param::new("b", Tensor::from_vec(b), false),
        }
    }

    pub fn forward(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<LstmStep> {
        let (n, hd) = (self.inputs, self.hidden);
        if x.len() != n {
            return Err(Error::shape("lstm input", &[n], &[x.len()]));
        }
        if h_prev.len() != hd || c_prev.len() != hd {
            return Err(Error::shape(
                "lstm state",
                &[hd, hd],
                &[h_prev.len(), c_prev.len()],
            ));
        }
        let w = self.w.value.data();
        let u = self.u.value.data();
        let mut gates = self.b.value.data().to_vec();
        for (r, a) in gates.iter_mut().enumerate() {
            let wr = &w[r * n..(r + 1) * n];
            let ur = &u[r * hd..(r + 1) * hd];
            let mut s = 0.0;
            for j in 0..n {
                s += wr[j] * x[j];
            }
            for j in 0..hd {
                s += ur[j] * h_prev[j];
            }
            *a += s;
        }
        for (r, a) in gates.iter_mut().enumerate() {
            *a = if (2 * hd..3 * hd).contains(&r) {
                a.tanh()
            } else {
                sigmoid(*a)
            };
        }
        let mut c = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        for j in 0..hd {
            let (i, f, g, o) = (
                gates[j],
                gates[hd + j],
                gates[2 * hd + j],
                gates[3 * hd + j],
            );
            c[j] = f * c_prev[j] + i * g;
            tanh_c[j] = c[j].tanh();
            h[j] = o * tanh_c[j];
        }
        Ok(LstmStep {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates,
            c,
            tanh_c,
            h,
        })
    }

    /// Backward through one step given `dL/dh'` and `dL/dc'`. Accumulates
    /// parameter gradients; returns `(dL/dx, dL/dh, dL/dc)`.
    pub fn backward(
        &mut self,
        step: &LstmStep,
        dh: &[f64],
        dc: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let (n, hd) = (self.inputs, self.hidden);
        if dh.len() != hd || dc.len() != hd {
            return Err(Error::shape(
                "lstm upstream gradient",
                &[hd, hd],
                &[dh.len(), dc.len()],
            ));
        }
        let gt = &step.gates;
        let mut da = vec![0.0; 4 * hd];
        let mut dc_prev = vec![0.0; hd];
        for j in 0..hd {
            let (i, f, g, o) = (gt[j], gt[hd + j], gt[2 * hd + j], gt[3 * hd + j]);
            let tc = step.tanh_c[j];
            let d_o = dh[j] * tc;
            let dct = dc[j] + dh[j] * o * (1.0 - tc * tc);
            let d_i = dct * g;
            let d_g = dct * i;
            let d_f = dct * step.c_prev[j];
            dc_prev[j] = dct * f;
            da[j] = d_i * i * (1.0 - i);
            da[hd + j] = d_f * f * (1.0 - f);
            da[2 * hd + j] = d_g * (1.0 - g * g);
            da[3 * hd + j] = d_o * o * (1.0 - o);
        }
        let w = self.w.value.data();
        let u = self.u.value.data();
        let gw = self.w.grad.data_mut();
        let gu = self.u.grad.data_mut();
        let gb = self.b.grad.data_mut();
        let mut dx = vec![0.0; n];
        let mut dh_prev = vec![0.0; hd];
        for (r, &d) in da.iter().enumerate() {
            gb[r] += d;
            if d == 0.0 {
                continue;
            }
            let (wr, gwr) = (&w[r * n..(r + 1) * n], &mut gw[r * n..(r + 1) * n]);
            for j in 0..n {
                gwr[j] += d * step.x[j];
                dx[j] += d * wr[j];
            }
            let (ur, gur) = (&u[r * hd..(r + 1) * hd], &mut gu[r * hd..(r + 1) * hd]);
            for j in 0..hd {
                gur[j] += d * step.h_prev[j];
                dh_prev[j] += d * ur[j];
            }
        }
        Ok((dx, dh_prev, dc_prev))
    }
}

impl Parameterized for LstmCell {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.u, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.u, &mut self.b]
    }
}
