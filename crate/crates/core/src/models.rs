//! The four next-frame predictors built on [`crate::neurons`]:
//!
//! * **MLP**: all `T` frames flattened into one vector, dense stack.
//! * **TDRN**: a scan LSTM reads each frame's cells in row-major order; its
//!   output states, concatenated, are that period's embedding. A temporal
//!   LSTM runs over the `T` embeddings and a dense readout maps its last
//!   state to a frame.
//! * **LRCN**: a conv stack (shared across periods) embeds each frame,
//!   followed by the same temporal LSTM and readout.
//! * **SCCN**: LRCN with every conv layer swapped for a locally connected
//!   layer of identical connectivity.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::layout::{GridAssignment, MetricFrame};
use crate::metrics::MetricSeries;
use crate::neurons::{
    adam_step, load_checkpoint, relu, save_checkpoint, AdamConfig, AdamState, Conv2d, Dense,
    LocallyConnected2d, LossKind, LstmCell, LstmStep, Param, Parameterized, PredictionBatch,
    Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Mlp,
    Tdrn,
    Lrcn,
    Sccn,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Mlp,
        Architecture::Tdrn,
        Architecture::Lrcn,
        Architecture::Sccn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Mlp => "mlp",
            Architecture::Tdrn => "tdrn",
            Architecture::Lrcn => "lrcn",
            Architecture::Sccn => "sccn",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown architecture {s:?} (expected mlp|tdrn|lrcn|sccn)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Grid side.
    pub k: usize,
    /// Input periods per sample.
    pub periods: usize,
    pub mlp_hidden: Vec<usize>,
    /// Temporal LSTM width (TDRN, LRCN, SCCN).
    pub lstm_hidden: usize,
    /// Width of TDRN's within-period scan LSTM.
    pub scan_hidden: usize,
    pub channels: usize,
    pub kernel: usize,
    pub conv_layers: usize,
    /// L2 weight-decay coefficient applied to weights during training.
    pub l2: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architecture: Architecture::Mlp,
            k: 8,
            periods: 8,
            mlp_hidden: vec![256, 64],
            lstm_hidden: 64,
            scan_hidden: 8,
            channels: 8,
            kernel: 3,
            conv_layers: 1,
            l2: 1e-4,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn with_architecture(&self, architecture: Architecture) -> Self {
        ModelConfig {
            architecture,
            ..self.clone()
        }
    }

    pub fn cells(&self) -> usize {
        self.k * self.k
    }

    /// Side of the spatial stack's output map.
    pub fn spatial_side(&self) -> usize {
        self.k + self.conv_layers - self.conv_layers * self.kernel
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("k", self.k),
            ("periods", self.periods),
            ("lstm_hidden", self.lstm_hidden),
            ("scan_hidden", self.scan_hidden),
            ("channels", self.channels),
            ("kernel", self.kernel),
            ("conv_layers", self.conv_layers),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("model {name} must be positive")));
            }
        }
        if self.mlp_hidden.iter().any(|&w| w == 0) {
            return Err(Error::Config("MLP hidden widths must be positive".into()));
        }
        if self.kernel > self.k {
            return Err(Error::Config(format!(
                "kernel {} exceeds grid side {}",
                self.kernel, self.k
            )));
        }
        if matches!(self.architecture, Architecture::Lrcn | Architecture::Sccn)
            && self.conv_layers * (self.kernel - 1) >= self.k
        {
            return Err(Error::Config(format!(
                "{} layers of {}x{} kernels leave no output on a {}x{} grid",
                self.conv_layers, self.kernel, self.kernel, self.k, self.k
            )));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config(format!(
                "l2 must be non-negative, got {}",
                self.l2
            )));
        }
        Ok(())
    }
}

/// `T` consecutive input frames and the following period's frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub entity_id: String,
    pub input_start: usize,
    /// `T` row-major `k x k` frames.
    pub inputs: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    pub target_period: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum SpatialLayer {
    Conv(Conv2d),
    Local(LocallyConnected2d),
}

impl SpatialLayer {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            SpatialLayer::Conv(l) => l.forward(x),
            SpatialLayer::Local(l) => l.forward(x),
        }
    }

    fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        match self {
            SpatialLayer::Conv(l) => l.backward(x, dy),
            SpatialLayer::Local(l) => l.backward(x, dy),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            SpatialLayer::Conv(l) => l.params_mut(),
            SpatialLayer::Local(l) => l.params_mut(),
        }
    }

    fn params(&self) -> Vec<&Param> {
        match self {
            SpatialLayer::Conv(l) => l.params(),
            SpatialLayer::Local(l) => l.params(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Body {
    Mlp {
        layers: Vec<Dense>,
    },
    Tdrn {
        scan: LstmCell,
        temporal: LstmCell,
        readout: Dense,
    },
    Spatial {
        layers: Vec<SpatialLayer>,
        temporal: LstmCell,
        readout: Dense,
    },
}

/// A built predictor with its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    body: Body,
}

/// Activations recorded by [`Model::forward`] for the matching backward.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub output: Vec<f64>,
    inner: TraceInner,
}

#[derive(Debug, Clone)]
enum TraceInner {
    Mlp {
        /// Input of each dense layer, then pre-activations of hidden layers.
        inputs: Vec<Vec<f64>>,
        pre: Vec<Vec<f64>>,
    },
    Tdrn {
        scans: Vec<Vec<LstmStep>>,
        temporal: Vec<LstmStep>,
    },
    Spatial {
        /// Per period, per layer: (layer input, pre-activation output).
        frames: Vec<Vec<(Tensor, Tensor)>>,
        temporal: Vec<LstmStep>,
    },
}

fn name_params(params: Vec<&mut Param>, prefix: &str) {
    for p in params {
        p.name = format!("{prefix}.{}", p.name);
    }
}

impl Model {
    /// Builds and initializes the network described by `cfg`.
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let cells = cfg.cells();
        let body = match cfg.architecture {
            Architecture::Mlp => {
                let mut widths = vec![cfg.periods * cells];
                widths.extend(&cfg.mlp_hidden);
                widths.push(cells);
                let mut layers: Vec<Dense> = widths
                    .windows(2)
                    .map(|w| Dense::new(w[0], w[1], &mut rng))
                    .collect();
                for (i, l) in layers.iter_mut().enumerate() {
                    name_params(l.params_mut(), &format!("dense{i}"));
                }
                Body::Mlp { layers }
            }
            Architecture::Tdrn => {
                let mut scan = LstmCell::new(1, cfg.scan_hidden, &mut rng);
                let mut temporal =
                    LstmCell::new(cells * cfg.scan_hidden, cfg.lstm_hidden, &mut rng);
                let mut readout = Dense::new(cfg.lstm_hidden, cells, &mut rng);
                name_params(scan.params_mut(), "scan");
                name_params(temporal.params_mut(), "temporal");
                name_params(readout.params_mut(), "readout");
                Body::Tdrn {
                    scan,
                    temporal,
                    readout,
                }
            }
            Architecture::Lrcn | Architecture::Sccn => {
                let mut layers = Vec::with_capacity(cfg.conv_layers);
                let mut side = cfg.k;
                let mut channels = 1;
                for i in 0..cfg.conv_layers {
                    let mut layer = if cfg.architecture == Architecture::Lrcn {
                        SpatialLayer::Conv(Conv2d::new(
                            channels,
                            cfg.channels,
                            cfg.kernel,
                            cfg.kernel,
                            &mut rng,
                        ))
                    } else {
                        SpatialLayer::Local(LocallyConnected2d::new(
                            channels,
                            cfg.channels,
                            (side, side),
                            (cfg.kernel, cfg.kernel),
                            &mut rng,
                        )?)
                    };
                    let tag = if cfg.architecture == Architecture::Lrcn {
                        "conv"
                    } else {
                        "local"
                    };
                    name_params(layer.params_mut(), &format!("{tag}{i}"));
                    layers.push(layer);
                    side = side + 1 - cfg.kernel;
                    channels = cfg.channels;
                }
                let features = channels * side * side;
                let mut temporal = LstmCell::new(features, cfg.lstm_hidden, &mut rng);
                let mut readout = Dense::new(cfg.lstm_hidden, cells, &mut rng);
                name_params(temporal.params_mut(), "temporal");
                name_params(readout.params_mut(), "readout");
                Body::Spatial {
                    layers,
                    temporal,
                    readout,
                }
            }
        };
        Ok(Model {
            config: cfg.clone(),
            body,
        })
    }

    /// An SCCN whose positional kernels all start from `lrcn`'s shared
    /// kernels; every other parameter is copied.
    pub fn sccn_from_lrcn(lrcn: &Model) -> Result<Self> {
        let Body::Spatial {
            layers,
            temporal,
            readout,
        } = &lrcn.body
        else {
            return Err(Error::Config("sccn_from_lrcn needs an LRCN model".into()));
        };
        let cfg = lrcn.config.with_architecture(Architecture::Sccn);
        let mut side = cfg.k;
        let mut local = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            let SpatialLayer::Conv(conv) = layer else {
                return Err(Error::Config("sccn_from_lrcn needs an LRCN model".into()));
            };
            let mut l = LocallyConnected2d::from_conv(conv, side, side)?;
            name_params(l.params_mut(), &format!("local{i}"));
            local.push(SpatialLayer::Local(l));
            side = side + 1 - conv.kh;
        }
        Ok(Model {
            config: cfg,
            body: Body::Spatial {
                layers: local,
                temporal: temporal.clone(),
                readout: readout.clone(),
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn input_width(&self) -> usize {
        self.config.periods * self.config.cells()
    }

    pub fn output_width(&self) -> usize {
        self.config.cells()
    }

    /// Human-readable layer list.
    pub fn layer_descriptions(&self) -> Vec<String> {
        match &self.body {
            Body::Mlp { layers } => layers
                .iter()
                .map(|l| format!("dense {}->{}", l.inputs, l.outputs))
                .collect(),
            Body::Tdrn {
                scan,
                temporal,
                readout,
            } => vec![
                format!("lstm-scan {}->{}", scan.inputs, scan.hidden),
                format!("lstm-temporal {}->{}", temporal.inputs, temporal.hidden),
                format!("dense {}->{}", readout.inputs, readout.outputs),
            ],
            Body::Spatial {
                layers,
                temporal,
                readout,
            } => {
                let mut out: Vec<String> = layers
                    .iter()
                    .map(|l| match l {
                        SpatialLayer::Conv(c) => {
                            format!(
                                "conv2d {}->{} {}x{}",
                                c.in_channels, c.out_channels, c.kh, c.kw
                            )
                        }
                        SpatialLayer::Local(c) => format!(
                            "local2d {}->{} {}x{} on {}x{}",
                            c.in_channels, c.out_channels, c.kh, c.kw, c.in_h, c.in_w
                        ),
                    })
                    .collect();
                out.push(format!(
                    "lstm-temporal {}->{}",
                    temporal.inputs, temporal.hidden
                ));
                out.push(format!("dense {}->{}", readout.inputs, readout.outputs));
                out
            }
        }
    }

    /// Output shape after every stage of one forward pass, for structural
    /// comparison between architectures.
    pub fn stage_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let zeros = vec![vec![0.0; self.config.cells()]; self.config.periods];
        let trace = self.forward(&zeros)?;
        let mut shapes = Vec::new();
        match &trace.inner {
            TraceInner::Mlp { inputs, .. } => {
                shapes.extend(inputs.iter().map(|x| vec![x.len()]));
            }
            TraceInner::Tdrn { scans, temporal } => {
                shapes.push(vec![scans.len(), scans[0].len() * scans[0][0].h.len()]);
                shapes.push(vec![temporal.len(), temporal[0].h.len()]);
            }
            TraceInner::Spatial { frames, temporal } => {
                for (_, pre) in &frames[0] {
                    shapes.push(pre.shape().to_vec());
                }
                shapes.push(vec![temporal.len(), temporal[0].h.len()]);
            }
        }
        shapes.push(vec![trace.output.len()]);
        Ok(shapes)
    }

    fn check_inputs(&self, frames: &[Vec<f64>]) -> Result<()> {
        let cells = self.config.cells();
        if frames.len() != self.config.periods {
            return Err(Error::shape(
                "sample frames",
                &[self.config.periods, cells],
                &[frames.len(), frames.first().map_or(0, Vec::len)],
            ));
        }
        if let Some(f) = frames.iter().find(|f| f.len() != cells) {
            return Err(Error::shape("sample frame", &[cells], &[f.len()]));
        }
        Ok(())
    }

    /// Predicts the next frame from `frames` (`T` row-major `k x k` grids).
    pub fn forward(&self, frames: &[Vec<f64>]) -> Result<ForwardTrace> {
        self.check_inputs(frames)?;
        match &self.body {
            Body::Mlp { layers } => {
                let mut x: Vec<f64> = frames.concat();
                let mut inputs = Vec::with_capacity(layers.len());
                let mut pre = Vec::with_capacity(layers.len());
                for (i, layer) in layers.iter().enumerate() {
                    let y = layer.forward(&x)?;
                    inputs.push(std::mem::take(&mut x));
                    if i + 1 < layers.len() {
                        x = y.iter().copied().map(relu).collect();
                        pre.push(y);
                    } else {
                        x = y;
                    }
                }
                Ok(ForwardTrace {
                    output: x,
                    inner: TraceInner::Mlp { inputs, pre },
                })
            }
            Body::Tdrn {
                scan,
                temporal,
                readout,
            } => {
                let hs = scan.hidden;
                let mut scans = Vec::with_capacity(frames.len());
                let mut embeddings = Vec::with_capacity(frames.len());
                for frame in frames {
                    let mut steps: Vec<LstmStep> = Vec::with_capacity(frame.len());
                    let (mut h, mut c) = (vec![0.0; hs], vec![0.0; hs]);
                    for &cell in frame {
                        let step = scan.forward(&[cell], &h, &c)?;
                        h.clone_from(&step.h);
                        c.clone_from(&step.c);
                        steps.push(step);
                    }
                    embeddings.push(steps.iter().flat_map(|s| s.h.iter().copied()).collect());
                    scans.push(steps);
                }
                let temporal_steps = run_lstm(temporal, &embeddings)?;
                let last = &temporal_steps.last().expect("periods >= 1").h;
                let output = readout.forward(last)?;
                Ok(ForwardTrace {
                    output,
                    inner: TraceInner::Tdrn {
                        scans,
                        temporal: temporal_steps,
                    },
                })
            }
            Body::Spatial {
                layers,
                temporal,
                readout,
            } => {
                let k = self.config.k;
                let mut per_frame = Vec::with_capacity(frames.len());
                let mut features = Vec::with_capacity(frames.len());
                for frame in frames {
                    let mut x = Tensor::new(&[1, k, k], frame.clone())?;
                    let mut record = Vec::with_capacity(layers.len());
                    for layer in layers {
                        let pre = layer.forward(&x)?;
                        let act = Tensor::new(
                            pre.shape(),
                            pre.data().iter().copied().map(relu).collect(),
                        )?;
                        record.push((x, pre));
                        x = act;
                    }
                    features.push(x.into_data());
                    per_frame.push(record);
                }
                let temporal_steps = run_lstm(temporal, &features)?;
                let last = &temporal_steps.last().expect("periods >= 1").h;
                let output = readout.forward(last)?;
                Ok(ForwardTrace {
                    output,
                    inner: TraceInner::Spatial {
                        frames: per_frame,
                        temporal: temporal_steps,
                    },
                })
            }
        }
    }

    pub fn predict_frame(&self, frames: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self.forward(frames)?.output)
    }

    /// Accumulates parameter gradients for `dL/d output`.
    pub fn backward(&mut self, trace: &ForwardTrace, d_output: &[f64]) -> Result<()> {
        if d_output.len() != self.output_width() {
            return Err(Error::shape(
                "output gradient",
                &[self.output_width()],
                &[d_output.len()],
            ));
        }
        match (&mut self.body, &trace.inner) {
            (Body::Mlp { layers }, TraceInner::Mlp { inputs, pre }) => {
                let mut d = d_output.to_vec();
                for i in (0..layers.len()).rev() {
                    if i + 1 < layers.len() {
                        for (g, z) in d.iter_mut().zip(&pre[i]) {
                            if *z <= 0.0 {
                                *g = 0.0;
                            }
                        }
                    }
                    d = layers[i].backward(&inputs[i], &d)?;
                }
                Ok(())
            }
            (
                Body::Tdrn {
                    scan,
                    temporal,
                    readout,
                },
                TraceInner::Tdrn {
                    scans,
                    temporal: steps,
                },
            ) => {
                let last = &steps.last().expect("periods >= 1").h;
                let dh = readout.backward(last, d_output)?;
                let d_embed = backprop_lstm(temporal, steps, dh)?;
                for (frame_steps, de) in scans.iter().zip(d_embed) {
                    backprop_lstm_outputs(scan, frame_steps, &de)?;
                }
                Ok(())
            }
            (
                Body::Spatial {
                    layers,
                    temporal,
                    readout,
                },
                TraceInner::Spatial {
                    frames,
                    temporal: steps,
                },
            ) => {
                let last = &steps.last().expect("periods >= 1").h;
                let dh = readout.backward(last, d_output)?;
                let d_features = backprop_lstm(temporal, steps, dh)?;
                for (record, df) in frames.iter().zip(d_features) {
                    let mut d = df;
                    for (layer, (x, pre)) in layers.iter_mut().zip(record).rev() {
                        for (g, z) in d.iter_mut().zip(pre.data()) {
                            if *z <= 0.0 {
                                *g = 0.0;
                            }
                        }
                        let dy = Tensor::new(pre.shape(), d)?;
                        d = layer.backward(x, &dy)?.into_data();
                    }
                }
                Ok(())
            }
            _ => Err(Error::Config(
                "forward trace does not belong to this architecture".into(),
            )),
        }
    }

    /// Flattened parameter values in [`Parameterized::params`] order.
    pub fn param_vector(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    pub fn grad_vector(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|p| p.grad.data().iter().copied())
            .collect()
    }

    pub fn set_param_vector(&mut self, values: &[f64]) -> Result<()> {
        let n = self.param_count();
        if values.len() != n {
            return Err(Error::shape("parameter vector", &[n], &[values.len()]));
        }
        let mut off = 0;
        for p in self.params_mut() {
            let len = p.value.len();
            p.value.data_mut().copy_from_slice(&values[off..off + len]);
            off += len;
        }
        Ok(())
    }

    /// Writes the parameter checkpoint plus `model_config.json`.
    pub fn save(&self, dir: &Path, step: u64) -> Result<()> {
        save_checkpoint(
            dir,
            self.layer_descriptions(),
            &self.params(),
            self.config.seed,
            step,
        )?;
        write_json(&dir.join("model_config.json"), &self.config)
    }

    /// Rebuilds a model from [`Model::save`] output; returns it with the
    /// stored step count.
    pub fn load(dir: &Path) -> Result<(Self, u64)> {
        let cfg: ModelConfig = read_json(&dir.join("model_config.json"))?;
        let mut model = Model::new(&cfg)?;
        let manifest = load_checkpoint(dir, &mut model.params_mut())?;
        Ok((model, manifest.step))
    }
}

fn run_lstm(cell: &LstmCell, inputs: &[Vec<f64>]) -> Result<Vec<LstmStep>> {
    let hd = cell.hidden;
    let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
    let mut steps = Vec::with_capacity(inputs.len());
    for x in inputs {
        let step = cell.forward(x, &h, &c)?;
        h.clone_from(&step.h);
        c.clone_from(&step.c);
        steps.push(step);
    }
    Ok(steps)
}

/// BPTT for a sequence whose only loss-bearing output is the final hidden
/// state. Returns the gradient for each step's input.
fn backprop_lstm(
    cell: &mut LstmCell,
    steps: &[LstmStep],
    dh_last: Vec<f64>,
) -> Result<Vec<Vec<f64>>> {
    let mut dh = dh_last;
    let mut dc = vec![0.0; cell.hidden];
    let mut dx = vec![Vec::new(); steps.len()];
    for (i, step) in steps.iter().enumerate().rev() {
        let (dxi, dhp, dcp) = cell.backward(step, &dh, &dc)?;
        dx[i] = dxi;
        dh = dhp;
        dc = dcp;
    }
    Ok(dx)
}

/// BPTT when every step's hidden state feeds the loss; `d_outputs` holds
/// the external gradient of each step's `h`, concatenated.
fn backprop_lstm_outputs(cell: &mut LstmCell, steps: &[LstmStep], d_outputs: &[f64]) -> Result<()> {
    let hd = cell.hidden;
    if d_outputs.len() != steps.len() * hd {
        return Err(Error::shape(
            "scan output gradient",
            &[steps.len() * hd],
            &[d_outputs.len()],
        ));
    }
    let mut dh_next = vec![0.0; hd];
    let mut dc = vec![0.0; hd];
    for (i, step) in steps.iter().enumerate().rev() {
        for (a, b) in dh_next.iter_mut().zip(&d_outputs[i * hd..(i + 1) * hd]) {
            *a += b;
        }
        let (_, dhp, dcp) = cell.backward(step, &dh_next, &dc)?;
        dh_next = dhp;
        dc = dcp;
    }
    Ok(())
}

impl Parameterized for Model {
    fn params(&self) -> Vec<&Param> {
        match &self.body {
            Body::Mlp { layers } => layers.iter().flat_map(|l| l.params()).collect(),
            Body::Tdrn {
                scan,
                temporal,
                readout,
            } => [scan.params(), temporal.params(), readout.params()].concat(),
            Body::Spatial {
                layers,
                temporal,
                readout,
            } => {
                let mut out: Vec<&Param> = layers.iter().flat_map(|l| l.params()).collect();
                out.extend(temporal.params());
                out.extend(readout.params());
                out
            }
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match &mut self.body {
            Body::Mlp { layers } => layers.iter_mut().flat_map(|l| l.params_mut()).collect(),
            Body::Tdrn {
                scan,
                temporal,
                readout,
            } => {
                let mut out = scan.params_mut();
                out.extend(temporal.params_mut());
                out.extend(readout.params_mut());
                out
            }
            Body::Spatial {
                layers,
                temporal,
                readout,
            } => {
                let mut out: Vec<&mut Param> =
                    layers.iter_mut().flat_map(|l| l.params_mut()).collect();
                out.extend(temporal.params_mut());
                out.extend(readout.params_mut());
                out
            }
        }
    }
}

/// Loss of one sample's prediction and its gradient.
pub fn sample_loss(
    model: &Model,
    sample: &SequenceSample,
    loss: LossKind,
) -> Result<(f64, ForwardTrace, Vec<f64>)> {
    let trace = model.forward(&sample.inputs)?;
    let batch = PredictionBatch::new(&sample.target, &trace.output)?;
    let value = loss.evaluate(&batch)?;
    Ok((value.loss, trace, value.grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean over batches of the pre-update batch loss (without the L2 term).
    pub mean_loss: f64,
    pub batches: usize,
}

/// One pass over `samples` in an order shuffled by `shuffle_seed`.
///
/// Each batch's loss is taken over every target cell of the batch; the L2
/// penalty uses the model's `l2` coefficient through Adam's weight decay.
pub fn train_epoch(
    model: &mut Model,
    samples: &[SequenceSample],
    batch_size: usize,
    loss: LossKind,
    state: &mut AdamState,
    adam: &AdamConfig,
    epoch: usize,
    shuffle_seed: u64,
) -> Result<EpochReport> {
    if samples.is_empty() {
        return Err(Error::Data("cannot train on an empty sample set".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if state.m.is_empty() {
        *state = AdamState::new(&model.params());
    }
    let adam = AdamConfig {
        weight_decay: model.config.l2,
        ..*adam
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(
        shuffle_seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    order.shuffle(&mut rng);

    let mut total = 0.0;
    let mut batches = 0;
    for chunk in order.chunks(batch_size) {
        model.zero_grad();
        let share = 1.0 / chunk.len() as f64;
        let mut batch_loss = 0.0;
        for &i in chunk {
            let (l, trace, mut grad) = sample_loss(model, &samples[i], loss)?;
            batch_loss += l * share;
            grad.iter_mut().for_each(|g| *g *= share);
            model.backward(&trace, &grad)?;
        }
        if !batch_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite {loss:?} loss in epoch {epoch}, batch {batches} ({} model)",
                model.architecture()
            )));
        }
        adam_step(&mut model.params_mut(), state, &adam)?;
        total += batch_loss;
        batches += 1;
    }
    Ok(EpochReport {
        epoch,
        mean_loss: total / batches as f64,
        batches,
    })
}

/// Mean loss over `samples`, without touching parameters.
pub fn evaluate(model: &Model, samples: &[SequenceSample], loss: LossKind) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty sample set".into()));
    }
    let mut total = 0.0;
    for s in samples {
        let out = model.predict_frame(&s.inputs)?;
        total += loss.evaluate(&PredictionBatch::new(&s.target, &out)?)?.loss;
    }
    let mean = total / samples.len() as f64;
    if !mean.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite evaluation loss for {}",
            model.architecture()
        )));
    }
    Ok(mean)
}

/// Predicts the period after `series` from its last `T` vectors. Returns
/// the frame and the same values back in topic order.
pub fn predict(
    model: &Model,
    series: &MetricSeries,
    assignment: &GridAssignment,
) -> Result<(MetricFrame, Vec<f64>)> {
    let t = model.config.periods;
    if series.len() < t {
        return Err(Error::Data(format!(
            "series for {} has {} periods, model needs {t}",
            series.entity_id,
            series.len()
        )));
    }
    if assignment.k != model.config.k {
        return Err(Error::shape(
            "grid assignment",
            &[model.config.k],
            &[assignment.k],
        ));
    }
    let window = &series.vectors[series.len() - t..];
    let frames: Vec<Vec<f64>> = window
        .iter()
        .map(|v| assignment.to_grid(&v.values))
        .collect::<Result<_>>()?;
    let cells = model.predict_frame(&frames)?;
    let topics = assignment.to_topics(&cells)?;
    let period = window.last().map_or(0, |v| v.period_index + 1);
    Ok((
        MetricFrame {
            entity_id: series.entity_id.clone(),
            period_index: period,
            k: model.config.k,
            cells,
        },
        topics,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::TopicalMetricVector;

    fn tiny(arch: Architecture) -> ModelConfig {
        ModelConfig {
            architecture: arch,
            k: 4,
            periods: 3,
            mlp_hidden: vec![8],
            lstm_hidden: 5,
            scan_hidden: 3,
            channels: 2,
            kernel: 2,
            conv_layers: 2,
            l2: 0.0,
            seed: 3,
        }
    }

    fn sample(cfg: &ModelConfig, seed: u64) -> SequenceSample {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = cfg.cells();
        SequenceSample {
            entity_id: "e".into(),
            input_start: 0,
            inputs: (0..cfg.periods)
                .map(|_| (0..cells).map(|_| rng.gen_range(0.0..2.0)).collect())
                .collect(),
            target: (0..cells).map(|_| rng.gen_range(0.0..2.0)).collect(),
            target_period: cfg.periods,
        }
    }

    #[test]
    fn mlp_widths() {
        let cfg = ModelConfig::default();
        let m = Model::new(&cfg).unwrap();
        assert_eq!(m.input_width(), 512);
        assert_eq!(m.output_width(), 64);
        assert_eq!(
            m.layer_descriptions(),
            vec!["dense 512->256", "dense 256->64", "dense 64->64"]
        );
    }

    #[test]
    fn architecture_parsing() {
        assert_eq!("SCCN".parse::<Architecture>().unwrap(), Architecture::Sccn);
        assert!(matches!(
            "cnn".parse::<Architecture>(),
            Err(Error::Config(_))
        ));
        assert_eq!(
            serde_json::to_string(&Architecture::Tdrn).unwrap(),
            "\"tdrn\""
        );
    }

    #[test]
    fn config_validation() {
        let bad = ModelConfig {
            kernel: 9,
            ..ModelConfig::default()
        };
        assert!(Model::new(&bad.with_architecture(Architecture::Lrcn)).is_err());
        let bad = ModelConfig {
            conv_layers: 4,
            ..ModelConfig::default()
        };
        assert!(Model::new(&bad.with_architecture(Architecture::Sccn)).is_err());
        assert!(Model::new(&bad.with_architecture(Architecture::Mlp)).is_ok());
    }

    #[test]
    fn lrcn_and_sccn_share_stage_shapes() {
        let cfg = ModelConfig {
            conv_layers: 2,
            ..ModelConfig::default()
        };
        let l = Model::new(&cfg.with_architecture(Architecture::Lrcn)).unwrap();
        let s = Model::new(&cfg.with_architecture(Architecture::Sccn)).unwrap();
        assert_eq!(l.stage_shapes().unwrap(), s.stage_shapes().unwrap());
        assert_eq!(
            l.stage_shapes().unwrap(),
            vec![vec![8, 6, 6], vec![8, 4, 4], vec![8, 64], vec![64]]
        );
        let single =
            Model::new(&ModelConfig::default().with_architecture(Architecture::Lrcn)).unwrap();
        assert_eq!(
            single.stage_shapes().unwrap(),
            vec![vec![8, 6, 6], vec![8, 64], vec![64]]
        );
        assert!(s.param_count() > l.param_count());
    }

    #[test]
    fn every_architecture_outputs_a_frame_and_is_deterministic() {
        for arch in Architecture::ALL {
            let cfg = tiny(arch);
            let m = Model::new(&cfg).unwrap();
            let s = sample(&cfg, 1);
            let a = m.predict_frame(&s.inputs).unwrap();
            assert_eq!(a.len(), 16, "{arch}");
            assert_eq!(a, m.predict_frame(&s.inputs).unwrap());
            assert!(m.predict_frame(&s.inputs[..2]).is_err());
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        for arch in Architecture::ALL {
            let cfg = ModelConfig::default().with_architecture(arch);
            let m = Model::new(&cfg).unwrap();
            let zeros = vec![vec![0.0; 64]; 8];
            let out = m.predict_frame(&zeros).unwrap();
            assert!(out.iter().all(|&x| x == 0.0), "{arch}: {out:?}");
        }
    }

    #[test]
    fn sccn_from_lrcn_matches_first_forward() {
        let cfg = tiny(Architecture::Lrcn);
        let lrcn = Model::new(&cfg).unwrap();
        let sccn = Model::sccn_from_lrcn(&lrcn).unwrap();
        assert_eq!(sccn.architecture(), Architecture::Sccn);
        for seed in 0..5 {
            let s = sample(&cfg, seed);
            let a = sample_loss(&lrcn, &s, LossKind::Rle).unwrap().0;
            let b = sample_loss(&sccn, &s, LossKind::Rle).unwrap().0;
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let mlp = Model::new(&tiny(Architecture::Mlp)).unwrap();
        assert!(Model::sccn_from_lrcn(&mlp).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let cfg = tiny(Architecture::Lrcn);
        let mut m = Model::new(&cfg).unwrap();
        let before = m.param_vector();
        let samples: Vec<_> = (0..5).map(|i| sample(&cfg, i)).collect();
        let adam = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        let mut st = AdamState::default();
        let r1 = train_epoch(&mut m, &samples, 1, LossKind::Rle, &mut st, &adam, 0, 9).unwrap();
        let r2 = train_epoch(&mut m, &samples, 1, LossKind::Rle, &mut st, &adam, 1, 9).unwrap();
        assert_eq!(m.param_vector(), before);
        let direct = evaluate(&m, &samples, LossKind::Rle).unwrap();
        assert!((r1.mean_loss - direct).abs() < 1e-12);
        assert!((r2.mean_loss - direct).abs() < 1e-12);
        assert_eq!(r1.batches, 5);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny(Architecture::Tdrn);
        let samples: Vec<_> = (0..6).map(|i| sample(&cfg, i)).collect();
        let run = || {
            let mut m = Model::new(&cfg).unwrap();
            let mut st = AdamState::default();
            (0..3)
                .map(|e| {
                    train_epoch(
                        &mut m,
                        &samples,
                        4,
                        LossKind::Rle,
                        &mut st,
                        &AdamConfig::default(),
                        e,
                        5,
                    )
                    .unwrap()
                    .mean_loss
                    .to_bits()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn evaluate_matches_direct_loss() {
        let cfg = tiny(Architecture::Mlp);
        let m = Model::new(&cfg).unwrap();
        let s = sample(&cfg, 2);
        let out = m.predict_frame(&s.inputs).unwrap();
        let direct = crate::neurons::rle_loss(&PredictionBatch::new(&s.target, &out).unwrap())
            .unwrap()
            .loss;
        assert_eq!(evaluate(&m, &[s.clone()], LossKind::Rle).unwrap(), direct);
        assert_eq!(
            evaluate(&m, &[s.clone()], LossKind::Rle).unwrap(),
            evaluate(&m, &[s], LossKind::Rle).unwrap()
        );
        assert!(evaluate(&m, &[], LossKind::Rle).is_err());
        let perfect = SequenceSample {
            target: out,
            ..sample(&cfg, 2)
        };
        assert_eq!(evaluate(&m, &[perfect], LossKind::Mse).unwrap(), 0.0);
    }

    #[test]
    fn predict_uses_last_window_and_inverts_assignment() {
        let cfg = tiny(Architecture::Mlp);
        let mut m = Model::new(&cfg).unwrap();
        let series = MetricSeries {
            entity_id: "e".into(),
            vectors: (0..5)
                .map(|p| TopicalMetricVector {
                    entity_id: "e".into(),
                    period_index: p,
                    values: (0..16).map(|t| (t * p) as f64 * 0.1).collect(),
                })
                .collect(),
        };
        let assignment =
            GridAssignment::new(4, (0..16).map(|t| ((15 - t) / 4, (15 - t) % 4)).collect())
                .unwrap();
        let (frame, topics) = predict(&m, &series, &assignment).unwrap();
        assert_eq!(frame.period_index, 5);
        assert_eq!(frame.cells.len(), 16);
        assert_eq!(assignment.to_grid(&topics).unwrap(), frame.cells);

        let zeros = vec![0.0; m.param_count()];
        m.set_param_vector(&zeros).unwrap();
        let (frame, _) = predict(&m, &series, &assignment).unwrap();
        assert!(frame.cells.iter().all(|&x| x == 0.0));

        let short = MetricSeries {
            vectors: series.vectors[..2].to_vec(),
            ..series
        };
        assert!(matches!(
            predict(&m, &short, &assignment),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = tiny(Architecture::Sccn);
        let m = Model::new(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path(), 42).unwrap();
        let (back, step) = Model::load(dir.path()).unwrap();
        assert_eq!(step, 42);
        assert_eq!(back.param_vector(), m.param_vector());
        assert_eq!(back.config(), m.config());
    }
}
