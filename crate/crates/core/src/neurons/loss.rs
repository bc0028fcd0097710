use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Targets and predictions over every evaluated cell of a batch.
#[derive(Debug, Clone, Copy)]
pub struct PredictionBatch<'a> {
    pub target: &'a [f64],
    pub predicted: &'a [f64],
}

impl<'a> PredictionBatch<'a> {
    pub fn new(target: &'a [f64], predicted: &'a [f64]) -> Result<Self> {
        if target.len() != predicted.len() {
            return Err(Error::shape(
                "prediction batch",
                &[target.len()],
                &[predicted.len()],
            ));
        }
        Ok(PredictionBatch { target, predicted })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    /// Gradient with respect to the predictions.
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Rle,
    Mse,
}

impl LossKind {
    pub fn evaluate(self, batch: &PredictionBatch<'_>) -> Result<LossValue> {
        match self {
            LossKind::Rle => rle_loss(batch),
            LossKind::Mse => mse_loss(batch),
        }
    }
}

/// Risk loss error: `(1/|V|) Σ v (v̂ - v)²`. Cells with a zero target carry
/// no weight, so under-predicting an active topic costs more than a false
/// positive on an idle one.
pub fn rle_loss(batch: &PredictionBatch<'_>) -> Result<LossValue> {
    let n = batch.target.len();
    if n == 0 {
        return Err(Error::Data("empty prediction batch".into()));
    }
    if let Some(v) = batch.target.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Data(format!(
            "RLE needs non-negative targets, found {v}"
        )));
    }
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    let grad = batch
        .target
        .iter()
        .zip(batch.predicted)
        .map(|(&v, &p)| {
            let e = p - v;
            loss += v * e * e;
            2.0 * v * e * scale
        })
        .collect();
    Ok(LossValue {
        loss: loss * scale,
        grad,
    })
}

pub fn mse_loss(batch: &PredictionBatch<'_>) -> Result<LossValue> {
    let n = batch.target.len();
    if n == 0 {
        return Err(Error::Data("empty prediction batch".into()));
    }
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    let grad = batch
        .target
        .iter()
        .zip(batch.predicted)
        .map(|(&v, &p)| {
            let e = p - v;
            loss += e * e;
            2.0 * e * scale
        })
        .collect();
    Ok(LossValue {
        loss: loss * scale,
        grad,
    })
}
