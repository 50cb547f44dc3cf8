//! Losses, anchored regularization, and gradient-magnitude records.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

use super::layer::{LayerGrads, LayerParams};
use super::model::{Gradients, Model};

/// Mean squared error: sum over the output vector, mean over the batch.
/// Returns the scalar loss and the gradient w.r.t. predictions.
pub fn mse_loss(pred: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if pred.dim() != target.dim() {
        return Err(Error::LengthMismatch { left: pred.len(), right: target.len() });
    }
    let batch = pred.nrows() as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / batch;
    let grad = diff.mapv(|d| 2.0 * d / batch);
    Ok((loss, grad))
}

/// Anchor for one conv layer: the transferred parameters the L2 penalty
/// pulls toward.
#[derive(Debug, Clone)]
pub struct ConvAnchor {
    pub layer_index: usize,
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// L2 anchor penalty (lambda/2) * sum_m ||theta'_m - theta_m||^2 over the
/// anchored conv layers, with its gradient contribution lambda*(theta'-theta).
pub fn anchor_penalty(
    model: &Model,
    anchors: &[ConvAnchor],
    lambda: f64,
) -> Result<(f64, Vec<(usize, Array2<f64>, Array1<f64>)>)> {
    let mut penalty = 0.0;
    let mut grads = Vec::with_capacity(anchors.len());
    for anchor in anchors {
        let params = model.params.get(anchor.layer_index).ok_or_else(|| {
            Error::AnchorMismatch(format!("no layer at index {}", anchor.layer_index))
        })?;
        let (w, b) = match params {
            LayerParams::Conv { w, b } => (w, b),
            _ => {
                return Err(Error::AnchorMismatch(format!(
                    "layer {} is not a conv layer",
                    anchor.layer_index
                )))
            }
        };
        if w.dim() != anchor.w.dim() || b.len() != anchor.b.len() {
            return Err(Error::AnchorMismatch(format!(
                "anchor shape {:?} vs layer shape {:?}",
                anchor.w.dim(),
                w.dim()
            )));
        }
        let dw = w - &anchor.w;
        let db = b - &anchor.b;
        penalty += (lambda / 2.0)
            * (dw.iter().map(|v| v * v).sum::<f64>() + db.iter().map(|v| v * v).sum::<f64>());
        grads.push((anchor.layer_index, dw.mapv(|v| lambda * v), db.mapv(|v| lambda * v)));
    }
    Ok((penalty, grads))
}

/// Add anchor-penalty gradients onto existing backprop gradients.
pub fn apply_anchor_grads(grads: &mut Gradients, anchor_grads: &[(usize, Array2<f64>, Array1<f64>)]) {
    for (li, gw, gb) in anchor_grads {
        if let LayerGrads::Conv { w, b } = &mut grads.layers[*li] {
            *w += gw;
            *b += gb;
        }
    }
}

/// Per-layer mean absolute gradient over the mini-batches it accumulated.
#[derive(Debug, Clone)]
pub struct GradRecord {
    /// One entry per model layer; concatenated trainable groups, or empty
    /// for parameterless layers.
    pub layers: Vec<Vec<f64>>,
}

/// Accumulates |gradient| across the mini-batches of one epoch.
#[derive(Debug, Clone)]
pub struct GradAccumulator {
    sums: Vec<Vec<f64>>,
    batches: usize,
}

impl GradAccumulator {
    pub fn new(model: &Model) -> Self {
        Self {
            sums: model
                .spec
                .layers
                .iter()
                .map(|l| vec![0.0; l.kind.trainable_param_count()])
                .collect(),
            batches: 0,
        }
    }

    pub fn add(&mut self, grads: &Gradients) {
        self.batches += 1;
        for (sum, layer) in self.sums.iter_mut().zip(&grads.layers) {
            for (s, g) in sum.iter_mut().zip(layer.abs_flat()) {
                *s += g;
            }
        }
    }

    pub fn finalize(self) -> GradRecord {
        let n = self.batches.max(1) as f64;
        GradRecord {
            layers: self
                .sums
                .into_iter()
                .map(|layer| layer.into_iter().map(|s| s / n).collect())
                .collect(),
        }
    }
}
