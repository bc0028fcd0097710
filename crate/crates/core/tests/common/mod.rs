#![allow(dead_code)]

use netbehave_core::layout::TopicEmbedding2D;
use netbehave_core::models::{sample_loss, SequenceSample};
use netbehave_core::neurons::{
    adam_step, grad_check, mse_loss, rle_loss, AdamConfig, AdamState, Conv2d, Dense,
    GradCheckReport, LocallyConnected2d, LossKind, LstmCell, Param, Parameterized, PredictionBatch,
    Tensor,
};
use netbehave_core::{Architecture, GridAssignment, Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, uniform(rng, n, -1.0, 1.0)).unwrap()
}

fn flat(params: &[&Param]) -> Vec<f64> {
    params
        .iter()
        .flat_map(|p| p.value.data().iter().copied())
        .collect()
}

fn flat_grad(params: &[&Param]) -> Vec<f64> {
    params
        .iter()
        .flat_map(|p| p.grad.data().iter().copied())
        .collect()
}

fn set_flat(mut params: Vec<&mut Param>, v: &[f64]) {
    let mut off = 0;
    for p in params.iter_mut() {
        let n = p.value.len();
        p.value.data_mut().copy_from_slice(&v[off..off + n]);
        off += n;
    }
}

fn randomize<L: Parameterized>(layer: &mut L, rng: &mut ChaCha8Rng) {
    for p in layer.params_mut() {
        for x in p.value.data_mut() {
            *x = rng.gen_range(-0.8..0.8);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient checks of a layer `y = f(x; params)` under `L = r . y`, over
/// both the parameters and the input.
fn check_layer<L, F>(
    mut layer: L,
    x: Vec<f64>,
    r: Vec<f64>,
    tol: f64,
    forward: F,
) -> Vec<GradCheckReport>
where
    L: Parameterized + Clone,
    F: Fn(&L, &[f64]) -> Vec<f64>,
    L: LayerBackward,
{
    layer.zero_grad();
    let dx = layer.backward_flat(&x, &r);
    let point = flat(&layer.params());
    let analytic = flat_grad(&layer.params());
    let mut probe = layer.clone();
    let p_report = grad_check(
        |v| {
            set_flat(probe.params_mut(), v);
            dot(&r, &forward(&probe, &x))
        },
        &point,
        &analytic,
        H,
        tol,
    )
    .unwrap();
    let x_report = grad_check(|v| dot(&r, &forward(&layer, v)), &x, &dx, H, tol).unwrap();
    vec![p_report, x_report]
}

pub trait LayerBackward {
    fn backward_flat(&mut self, x: &[f64], dy: &[f64]) -> Vec<f64>;
}

impl LayerBackward for Dense {
    fn backward_flat(&mut self, x: &[f64], dy: &[f64]) -> Vec<f64> {
        self.backward(x, dy).unwrap()
    }
}

fn conv_shape(c: &Conv2d, n: usize) -> [usize; 3] {
    let side = ((n / c.in_channels) as f64).sqrt() as usize;
    [c.in_channels, side, n / c.in_channels / side]
}

impl LayerBackward for Conv2d {
    fn backward_flat(&mut self, x: &[f64], dy: &[f64]) -> Vec<f64> {
        let xt = Tensor::new(&conv_shape(self, x.len()), x.to_vec()).unwrap();
        let [co, oh, ow] = self.output_shape(xt.shape()[1], xt.shape()[2]).unwrap();
        let dyt = Tensor::new(&[co, oh, ow], dy.to_vec()).unwrap();
        self.backward(&xt, &dyt).unwrap().into_data()
    }
}

impl LayerBackward for LocallyConnected2d {
    fn backward_flat(&mut self, x: &[f64], dy: &[f64]) -> Vec<f64> {
        let xt = Tensor::new(&[self.in_channels, self.in_h, self.in_w], x.to_vec()).unwrap();
        let dyt = Tensor::new(&self.output_shape(), dy.to_vec()).unwrap();
        self.backward(&xt, &dyt).unwrap().into_data()
    }
}

/// `(name, report, tolerance)` for every layer and loss at one seed.
pub fn layer_gradient_suite(seed: u64) -> Vec<(String, GradCheckReport)> {
    let mut out = Vec::new();
    let mut g = rng(seed);

    // Dense 5 -> 3.
    let mut dense = Dense::new(5, 3, &mut g);
    randomize(&mut dense, &mut g);
    let x = uniform(&mut g, 5, -1.0, 1.0);
    let r = uniform(&mut g, 3, -1.0, 1.0);
    for (i, rep) in check_layer(dense, x, r, 1e-6, |l, x| l.forward(x).unwrap())
        .into_iter()
        .enumerate()
    {
        out.push((format!("dense {}", ["params", "input"][i]), rep));
    }

    // Conv2d 2 -> 3 channels, 3x2 kernel on 5x5.
    let mut conv = Conv2d::new(2, 3, 3, 2, &mut g);
    randomize(&mut conv, &mut g);
    let x = uniform(&mut g, 2 * 5 * 5, -1.0, 1.0);
    let r = uniform(&mut g, 3 * 3 * 4, -1.0, 1.0);
    let fwd = |l: &Conv2d, x: &[f64]| {
        l.forward(&Tensor::new(&[2, 5, 5], x.to_vec()).unwrap())
            .unwrap()
            .into_data()
    };
    for (i, rep) in check_layer(conv, x, r, 1e-5, fwd).into_iter().enumerate() {
        out.push((format!("conv2d {}", ["params", "input"][i]), rep));
    }

    // LCN with the same geometry.
    let mut lcn = LocallyConnected2d::new(2, 3, (5, 5), (3, 2), &mut g).unwrap();
    randomize(&mut lcn, &mut g);
    let x = uniform(&mut g, 2 * 5 * 5, -1.0, 1.0);
    let r = uniform(&mut g, 3 * 3 * 4, -1.0, 1.0);
    let fwd = |l: &LocallyConnected2d, x: &[f64]| {
        l.forward(&Tensor::new(&[2, 5, 5], x.to_vec()).unwrap())
            .unwrap()
            .into_data()
    };
    for (i, rep) in check_layer(lcn, x, r, 1e-5, fwd).into_iter().enumerate() {
        out.push((format!("lcn2d {}", ["params", "input"][i]), rep));
    }

    // LSTM cell 3 -> 4 under L = rh . h + rc . c, over params and (x, h, c).
    let mut cell = LstmCell::new(3, 4, &mut g);
    randomize(&mut cell, &mut g);
    let x = uniform(&mut g, 3, -1.0, 1.0);
    let h0 = uniform(&mut g, 4, -1.0, 1.0);
    let c0 = uniform(&mut g, 4, -1.0, 1.0);
    let rh = uniform(&mut g, 4, -1.0, 1.0);
    let rc = uniform(&mut g, 4, -1.0, 1.0);
    let lstm_loss = |l: &LstmCell, x: &[f64], h: &[f64], c: &[f64]| {
        let s = l.forward(x, h, c).unwrap();
        dot(&rh, &s.h) + dot(&rc, &s.c)
    };
    cell.zero_grad();
    let step = cell.forward(&x, &h0, &c0).unwrap();
    let (dx, dh, dc) = cell.backward(&step, &rh, &rc).unwrap();
    let point = flat(&cell.params());
    let analytic = flat_grad(&cell.params());
    let mut probe = cell.clone();
    out.push((
        "lstm params".into(),
        grad_check(
            |v| {
                set_flat(probe.params_mut(), v);
                lstm_loss(&probe, &x, &h0, &c0)
            },
            &point,
            &analytic,
            H,
            1e-5,
        )
        .unwrap(),
    ));
    let state = [x.clone(), h0.clone(), c0.clone()].concat();
    let d_state = [dx, dh, dc].concat();
    out.push((
        "lstm input+state".into(),
        grad_check(
            |v| lstm_loss(&cell, &v[..3], &v[3..7], &v[7..]),
            &state,
            &d_state,
            H,
            1e-5,
        )
        .unwrap(),
    ));

    // Losses w.r.t. the prediction; a third of the targets are zero.
    let target: Vec<f64> = (0..12)
        .map(|i| {
            if i % 3 == 0 {
                0.0
            } else {
                g.gen_range(0.0..3.0)
            }
        })
        .collect();
    let pred = uniform(&mut g, 12, 0.0, 3.0);
    let grad = rle_loss(&PredictionBatch::new(&target, &pred).unwrap())
        .unwrap()
        .grad;
    out.push((
        "rle loss".into(),
        grad_check(
            |p| {
                rle_loss(&PredictionBatch::new(&target, p).unwrap())
                    .unwrap()
                    .loss
            },
            &pred,
            &grad,
            H,
            1e-7,
        )
        .unwrap(),
    ));
    let grad = mse_loss(&PredictionBatch::new(&target, &pred).unwrap())
        .unwrap()
        .grad;
    out.push((
        "mse loss".into(),
        grad_check(
            |p| {
                mse_loss(&PredictionBatch::new(&target, p).unwrap())
                    .unwrap()
                    .loss
            },
            &pred,
            &grad,
            H,
            1e-7,
        )
        .unwrap(),
    ));
    out
}

/// The smallest configuration of every architecture: k=2, T=2, one channel.
pub fn tiny_config(arch: Architecture, seed: u64) -> ModelConfig {
    ModelConfig {
        architecture: arch,
        k: 2,
        periods: 2,
        mlp_hidden: vec![4],
        lstm_hidden: 3,
        scan_hidden: 2,
        channels: 1,
        kernel: 2,
        conv_layers: 1,
        l2: 0.0,
        seed,
    }
}

pub fn random_sample(cfg: &ModelConfig, g: &mut ChaCha8Rng) -> SequenceSample {
    let cells = cfg.cells();
    SequenceSample {
        entity_id: "probe".into(),
        input_start: 0,
        inputs: (0..cfg.periods)
            .map(|_| uniform(g, cells, 0.0, 2.0))
            .collect(),
        target: uniform(g, cells, 0.0, 2.0),
        target_period: cfg.periods,
    }
}

/// End-to-end RLE gradient of a tiny model w.r.t. every parameter.
pub fn architecture_gradient(arch: Architecture, seed: u64) -> GradCheckReport {
    let cfg = tiny_config(arch, seed);
    let mut model = Model::new(&cfg).unwrap();
    let mut g = rng(seed ^ 0xA5A5);
    // Non-zero biases so every path carries gradient.
    let mut point = model.param_vector();
    for x in point.iter_mut() {
        *x += g.gen_range(-0.3..0.3);
    }
    model.set_param_vector(&point).unwrap();
    let sample = random_sample(&cfg, &mut g);
    model.zero_grad();
    let (_, trace, grad) = sample_loss(&model, &sample, LossKind::Rle).unwrap();
    model.backward(&trace, &grad).unwrap();
    let analytic = model.grad_vector();
    let mut probe = model.clone();
    grad_check(
        |v| {
            probe.set_param_vector(v).unwrap();
            sample_loss(&probe, &sample, LossKind::Rle).unwrap().0
        },
        &point,
        &analytic,
        H,
        1e-4,
    )
    .unwrap()
}

/// Repeated Adam steps on one sample; returns the loss before the first
/// step and the lowest loss reached within `steps`.
pub fn overfit_single_sample(arch: Architecture, steps: usize, lr: f64) -> (f64, f64) {
    let cfg = ModelConfig {
        l2: 0.0,
        ..ModelConfig::default().with_architecture(arch)
    };
    let mut model = Model::new(&cfg).unwrap();
    let mut g = rng(77);
    let sample = random_sample(&cfg, &mut g);
    let adam = AdamConfig {
        lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(&model.params());
    let initial = sample_loss(&model, &sample, LossKind::Rle).unwrap().0;
    let mut best = initial;
    for _ in 0..steps {
        model.zero_grad();
        let (loss, trace, grad) = sample_loss(&model, &sample, LossKind::Rle).unwrap();
        best = best.min(loss);
        model.backward(&trace, &grad).unwrap();
        adam_step(&mut model.params_mut(), &mut state, &adam).unwrap();
    }
    best = best.min(sample_loss(&model, &sample, LossKind::Rle).unwrap().0);
    (initial, best)
}

/// Replays split-diffuse from the finished assignment alone: every block
/// must be cut along its wider side (columns on a tie) with
/// `floor(n / 2)` lines in the low half, and every topic in the low half
/// must rank at or below every topic in the high half by
/// `(coordinate, topic index)`.
pub fn replay_split_diffuse(points: &[[f64; 2]], a: &GridAssignment) -> Result<usize, String> {
    let k = a.k;
    if points.len() != k * k {
        return Err(format!("{} points for a {k}x{k} grid", points.len()));
    }
    let mut seen = vec![false; k * k];
    for &(r, c) in a.cells() {
        if r >= k || c >= k || std::mem::replace(&mut seen[r * k + c], true) {
            return Err(format!("cell ({r},{c}) out of range or used twice"));
        }
    }
    let mut splits = 0;
    let mut stack = vec![(0usize, 0usize, k, k)];
    while let Some((r0, c0, rows, cols)) = stack.pop() {
        if rows * cols == 1 {
            continue;
        }
        let inside: Vec<usize> = (0..points.len())
            .filter(|&t| {
                let (r, c) = a.cell(t);
                r >= r0 && r < r0 + rows && c >= c0 && c < c0 + cols
            })
            .collect();
        if inside.len() != rows * cols {
            return Err(format!(
                "block at ({r0},{c0}) holds {} topics",
                inside.len()
            ));
        }
        let by_cols = cols >= rows;
        let (axis, low_lines) = if by_cols {
            (0, cols / 2)
        } else {
            (1, rows / 2)
        };
        let in_low = |t: usize| {
            let (r, c) = a.cell(t);
            if by_cols {
                c < c0 + low_lines
            } else {
                r < r0 + low_lines
            }
        };
        let key = |t: usize| (points[t][axis], t);
        let low_max = inside
            .iter()
            .filter(|&&t| in_low(t))
            .map(|&t| key(t))
            .max_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let high_min = inside
            .iter()
            .filter(|&&t| !in_low(t))
            .map(|&t| key(t))
            .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        if let (Some(lo), Some(hi)) = (low_max, high_min) {
            if lo.0.total_cmp(&hi.0).then(lo.1.cmp(&hi.1)).is_gt() {
                return Err(format!(
                    "block ({r0},{c0},{rows}x{cols}): low topic {} ranks above high topic {}",
                    lo.1, hi.1
                ));
            }
        }
        splits += 1;
        if by_cols {
            stack.push((r0, c0, rows, low_lines));
            stack.push((r0, c0 + low_lines, rows, cols - low_lines));
        } else {
            stack.push((r0, c0, low_lines, cols));
            stack.push((r0 + low_lines, c0, rows - low_lines, cols));
        }
    }
    Ok(splits)
}

pub fn embedding_of(points: Vec<[f64; 2]>) -> TopicEmbedding2D {
    TopicEmbedding2D {
        points,
        axes: [vec![1.0, 0.0], vec![0.0, 1.0]],
        eigenvalues: vec![1.0, 1.0],
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues (descending) with the matching unit eigenvectors, one per row.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].total_cmp(&m[i][i]));
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = order
        .iter()
        .map(|&i| (0..n).map(|r| v[r][i]).collect())
        .collect();
    (values, vectors)
}
