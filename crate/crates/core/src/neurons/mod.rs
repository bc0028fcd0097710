//! A small deterministic neural core: `f64` tensors, dense / convolutional /
//! locally-connected / LSTM layers with hand-written backward passes, the
//! RLE and MSE losses, Adam, and a central-difference gradient checker.
//!
//! Layers do not keep activation caches. `forward` returns whatever the
//! matching `backward` needs, so a layer can be applied many times (across
//! periods or scan steps) and differentiated per application. Parameter
//! gradients accumulate into each [`Param::grad`] until zeroed.

mod adam;
mod checkpoint;
mod conv;
mod dense;
mod gradcheck;
mod init;
mod local;
mod loss;
mod lstm;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, ParamEntry};
pub use conv::Conv2d;
pub use dense::Dense;
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use init::glorot_uniform;
pub use local::LocallyConnected2d;
pub use loss::{mse_loss, rle_loss, LossKind, LossValue, PredictionBatch};
pub use lstm::{LstmCell, LstmStep};
pub use tensor::{Param, Tensor};

/// Anything that owns trainable parameters.
pub trait Parameterized {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

pub(crate) fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
