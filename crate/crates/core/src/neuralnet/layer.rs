//! Layer descriptions, parameter storage, and gradient containers.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Batch-norm epsilon and running-statistics momentum.
pub const BN_EPS: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    /// 3x3 kernel, stride 1, zero "same" padding.
    Conv3x3 { cin: usize, cout: usize },
    /// Per-channel normalization over the batch (and spatial positions).
    BatchNorm { c: usize },
    TanhAct,
    /// Row-major (height, width, channel) flatten to a feature vector.
    Flatten,
    FullyConnected { input: usize, output: usize },
    /// Nearest-neighbor 2x duplication along the width axis.
    Upsample2x,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub trainable: bool,
}

impl LayerSpec {
    pub fn new(kind: LayerKind) -> Self {
        Self { kind, trainable: true }
    }
}

impl LayerKind {
    /// Shape inference; vectors are carried as (1, 1, n).
    pub fn output_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let (h, w, c) = input;
        match *self {
            LayerKind::Conv3x3 { cin, cout } => {
                if c != cin {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{cin} channels"),
                        got: format!("{c} channels"),
                    });
                }
                Ok((h, w, cout))
            }
            LayerKind::BatchNorm { c: bc } => {
                if c != bc {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{bc} channels"),
                        got: format!("{c} channels"),
                    });
                }
                Ok((h, w, c))
            }
            LayerKind::TanhAct => Ok((h, w, c)),
            LayerKind::Flatten => Ok((1, 1, h * w * c)),
            LayerKind::FullyConnected { input, output } => {
                if (h, w, c) != (1, 1, input) {
                    return Err(Error::ShapeMismatch {
                        expected: format!("(1, 1, {input})"),
                        got: format!("({h}, {w}, {c})"),
                    });
                }
                Ok((1, 1, output))
            }
            LayerKind::Upsample2x => Ok((h, 2 * w, c)),
        }
    }

    pub fn trainable_param_count(&self) -> usize {
        match *self {
            LayerKind::Conv3x3 { cin, cout } => 9 * cin * cout + cout,
            LayerKind::BatchNorm { c } => 2 * c,
            LayerKind::FullyConnected { input, output } => input * output + output,
            _ => 0,
        }
    }
}

/// Per-layer parameters. Conv weights are stored (9*cin, cout) with patch
/// order (dy, dx, cin) to match im2col; FC weights are (input, output).
#[derive(Debug, Clone)]
pub enum LayerParams {
    Conv { w: Array2<f64>, b: Array1<f64> },
    BatchNorm {
        gamma: Array1<f64>,
        beta: Array1<f64>,
        run_mean: Array1<f64>,
        run_var: Array1<f64>,
    },
    Fc { w: Array2<f64>, b: Array1<f64> },
    Empty,
}

impl LayerParams {
    pub fn zeros_for(kind: &LayerKind) -> Self {
        match *kind {
            LayerKind::Conv3x3 { cin, cout } => LayerParams::Conv {
                w: Array2::zeros((9 * cin, cout)),
                b: Array1::zeros(cout),
            },
            LayerKind::BatchNorm { c } => LayerParams::BatchNorm {
                gamma: Array1::ones(c),
                beta: Array1::zeros(c),
                run_mean: Array1::zeros(c),
                run_var: Array1::ones(c),
            },
            LayerKind::FullyConnected { input, output } => LayerParams::Fc {
                w: Array2::zeros((input, output)),
                b: Array1::zeros(output),
            },
            _ => LayerParams::Empty,
        }
    }

    /// Trainable parameter groups as flat slices, in a fixed order.
    pub fn trainable_slices(&self) -> Vec<&[f64]> {
        match self {
            LayerParams::Conv { w, b } | LayerParams::Fc { w, b } => {
                vec![w.as_slice().unwrap(), b.as_slice().unwrap()]
            }
            LayerParams::BatchNorm { gamma, beta, .. } => {
                vec![gamma.as_slice().unwrap(), beta.as_slice().unwrap()]
            }
            LayerParams::Empty => vec![],
        }
    }

    pub fn trainable_slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            LayerParams::Conv { w, b } | LayerParams::Fc { w, b } => {
                vec![w.as_slice_mut().unwrap(), b.as_slice_mut().unwrap()]
            }
            LayerParams::BatchNorm { gamma, beta, .. } => {
                vec![gamma.as_slice_mut().unwrap(), beta.as_slice_mut().unwrap()]
            }
            LayerParams::Empty => vec![],
        }
    }
}

/// Gradients mirror the trainable groups of [`LayerParams`]; BN running
/// statistics have no gradient.
#[derive(Debug, Clone)]
pub enum LayerGrads {
    Conv { w: Array2<f64>, b: Array1<f64> },
    BatchNorm { gamma: Array1<f64>, beta: Array1<f64> },
    Fc { w: Array2<f64>, b: Array1<f64> },
    Empty,
}

impl LayerGrads {
    pub fn zeros_for(kind: &LayerKind) -> Self {
        match *kind {
            LayerKind::Conv3x3 { cin, cout } => LayerGrads::Conv {
                w: Array2::zeros((9 * cin, cout)),
                b: Array1::zeros(cout),
            },
            LayerKind::BatchNorm { c } => LayerGrads::BatchNorm {
                gamma: Array1::zeros(c),
                beta: Array1::zeros(c),
            },
            LayerKind::FullyConnected { input, output } => LayerGrads::Fc {
                w: Array2::zeros((input, output)),
                b: Array1::zeros(output),
            },
            _ => LayerGrads::Empty,
        }
    }

    pub fn group_slices(&self) -> Vec<&[f64]> {
        match self {
            LayerGrads::Conv { w, b } | LayerGrads::Fc { w, b } => {
                vec![w.as_slice().unwrap(), b.as_slice().unwrap()]
            }
            LayerGrads::BatchNorm { gamma, beta } => {
                vec![gamma.as_slice().unwrap(), beta.as_slice().unwrap()]
            }
            LayerGrads::Empty => vec![],
        }
    }

    pub fn group_slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            LayerGrads::Conv { w, b } | LayerGrads::Fc { w, b } => {
                vec![w.as_slice_mut().unwrap(), b.as_slice_mut().unwrap()]
            }
            LayerGrads::BatchNorm { gamma, beta } => {
                vec![gamma.as_slice_mut().unwrap(), beta.as_slice_mut().unwrap()]
            }
            LayerGrads::Empty => vec![],
        }
    }

    /// Concatenated absolute values over all groups; the raw material of the
    /// gradient-significance statistic.
    pub fn abs_flat(&self) -> Vec<f64> {
        self.group_slices()
            .into_iter()
            .flat_map(|s| s.iter().map(|v| v.abs()))
            .collect()
    }
}
