//! Model container, batched forward/backward passes, initialization, and
//! parameter/FLOP accounting.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

use super::layer::{LayerGrads, LayerKind, LayerParams, LayerSpec, BN_EPS, BN_MOMENTUM};
use super::tensor::{col2im, column_sums, im2col, standardize, Batch3, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Run-level metadata carried with a model through checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub n_conv: usize,
    pub nt: usize,
    pub nr: usize,
    /// Per-dataset input scale c = 1/RMS(H_LS entries), fixed after training.
    pub input_scale: Option<f64>,
    pub upsampled: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    pub input_shape: (usize, usize, usize),
    pub meta: ModelMeta,
}

impl ModelSpec {
    /// Chain shape inference end to end.
    pub fn validate(&self) -> Result<(usize, usize, usize)> {
        let mut shape = self.input_shape;
        for spec in &self.layers {
            shape = spec.kind.output_shape(shape)?;
        }
        Ok(shape)
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: Vec<LayerParams>,
}

/// Per-layer cache from a training-mode forward pass.
pub struct ForwardCache {
    /// Input to each layer.
    inputs: Vec<Batch3>,
    /// Tanh outputs (layer index -> output copy).
    tanh_out: Vec<Option<Array2<f64>>>,
    /// BN normalized activations and inverse stddev per channel.
    bn: Vec<Option<(Array2<f64>, Array1<f64>)>>,
    mode: Mode,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            layers: model.spec.layers.iter().map(|l| LayerGrads::zeros_for(&l.kind)).collect(),
        }
    }
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let params = spec.layers.iter().map(|l| LayerParams::zeros_for(&l.kind)).collect();
        Ok(Self { spec, params })
    }

    /// Glorot-uniform weights, zero biases, identity batch norm.
    pub fn init_glorot(&mut self, rng: &mut RngStream) {
        for (spec, params) in self.spec.layers.iter().zip(&mut self.params) {
            match (spec.kind, params) {
                (LayerKind::Conv3x3 { cin, cout }, LayerParams::Conv { w, b }) => {
                    let limit = (6.0 / (9 * cin + 9 * cout) as f64).sqrt();
                    for v in w.iter_mut() {
                        *v = (rng.uniform() * 2.0 - 1.0) * limit;
                    }
                    b.fill(0.0);
                }
                (LayerKind::FullyConnected { input, output }, LayerParams::Fc { w, b }) => {
                    let limit = (6.0 / (input + output) as f64).sqrt();
                    for v in w.iter_mut() {
                        *v = (rng.uniform() * 2.0 - 1.0) * limit;
                    }
                    b.fill(0.0);
                }
                (LayerKind::BatchNorm { .. }, LayerParams::BatchNorm { gamma, beta, run_mean, run_var }) => {
                    gamma.fill(1.0);
                    beta.fill(0.0);
                    run_mean.fill(0.0);
                    run_var.fill(1.0);
                }
                _ => {}
            }
        }
    }

    /// Batched forward pass. Train mode uses batch statistics in BN layers
    /// and updates the running statistics; infer mode reads running stats and
    /// leaves the model untouched.
    pub fn forward_batch(&mut self, inputs: &[Tensor3], indices: &[usize], mode: Mode) -> Result<(Array2<f64>, ForwardCache)> {
        let mut act = Batch3::gather(inputs, indices);
        if act.shape_hwc() != self.spec.input_shape {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.spec.input_shape),
                got: format!("{:?}", act.shape_hwc()),
            });
        }
        let n_layers = self.spec.layers.len();
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(n_layers),
            tanh_out: vec![None; n_layers],
            bn: vec![None; n_layers],
            mode,
        };
        for li in 0..n_layers {
            let kind = self.spec.layers[li].kind;
            cache.inputs.push(act.clone());
            act = match kind {
                LayerKind::Conv3x3 { cout, .. } => {
                    let (w, b) = match &self.params[li] {
                        LayerParams::Conv { w, b } => (w, b),
                        _ => unreachable!(),
                    };
                    let cols = im2col(&act);
                    let mut out = cols.dot(w);
                    out += &b.view().insert_axis(Axis(0));
                    Batch3::from_array(act.batch, act.h, act.w, cout, out)
                }
                LayerKind::BatchNorm { c } => {
                    let (xhat, inv_std, out) = self.batch_norm_forward(li, &act, mode, c)?;
                    cache.bn[li] = Some((xhat, inv_std));
                    Batch3::from_array(act.batch, act.h, act.w, c, out)
                }
                LayerKind::TanhAct => {
                    let out = act.a.mapv(f64::tanh);
                    cache.tanh_out[li] = Some(out.clone());
                    Batch3::from_array(act.batch, act.h, act.w, act.c, out)
                }
                LayerKind::Flatten => {
                    let n = act.h * act.w * act.c;
                    let data = act.a.into_raw_vec();
                    let out = Array2::from_shape_vec((act.batch, n), data).unwrap();
                    Batch3::from_array(act.batch, 1, 1, n, out)
                }
                LayerKind::FullyConnected { output, .. } => {
                    let (w, b) = match &self.params[li] {
                        LayerParams::Fc { w, b } => (w, b),
                        _ => unreachable!(),
                    };
                    let mut out = act.a.dot(w);
                    out += &b.view().insert_axis(Axis(0));
                    Batch3::from_array(act.batch, 1, 1, output, out)
                }
                LayerKind::Upsample2x => {
                    let (bn, h, w2, c) = (act.batch, act.h, act.w * 2, act.c);
                    let mut out = Array2::zeros((bn * h * w2, c));
                    for row in 0..bn * h * act.w {
                        let src = act.a.row(row);
                        let base = (row / act.w) * w2 + (row % act.w) * 2;
                        out.row_mut(base).assign(&src);
                        out.row_mut(base + 1).assign(&src);
                    }
                    Batch3::from_array(bn, h, w2, c, out)
                }
            };
        }
        Ok((act.a, cache))
    }

    fn batch_norm_forward(
        &mut self,
        li: usize,
        act: &Batch3,
        mode: Mode,
        c: usize,
    ) -> Result<(Array2<f64>, Array1<f64>, Array2<f64>)> {
        let params = match &mut self.params[li] {
            LayerParams::BatchNorm { gamma, beta, run_mean, run_var } => {
                (gamma, beta, run_mean, run_var)
            }
            _ => unreachable!(),
        };
        let (gamma, beta, run_mean, run_var) = params;
        let n = act.a.nrows() as f64;
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = act.a.sum_axis(Axis(0)) / n;
                let mut var = Array1::<f64>::zeros(c);
                for row in act.a.rows() {
                    for (j, v) in row.iter().enumerate() {
                        let d = v - mean[j];
                        var[j] += d * d;
                    }
                }
                var /= n;
                for j in 0..c {
                    run_mean[j] = BN_MOMENTUM * run_mean[j] + (1.0 - BN_MOMENTUM) * mean[j];
                    run_var[j] = BN_MOMENTUM * run_var[j] + (1.0 - BN_MOMENTUM) * var[j];
                }
                (mean, var)
            }
            Mode::Infer => (run_mean.clone(), run_var.clone()),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let mut xhat = act.a.clone();
        for mut row in xhat.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean[j]) * inv_std[j];
            }
        }
        let mut out = xhat.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = gamma[j] * *v + beta[j];
            }
        }
        Ok((xhat, inv_std, out))
    }

    /// Backpropagate a loss gradient through the cached forward pass.
    pub fn backward_batch(&self, cache: &ForwardCache, grad_out: Array2<f64>) -> Gradients {
        assert_eq!(cache.mode, Mode::Train, "backward requires a train-mode cache");
        let mut grads = Gradients::zeros_like(self);
        let mut g = grad_out;
        for li in (0..self.spec.layers.len()).rev() {
            let kind = self.spec.layers[li].kind;
            let input = &cache.inputs[li];
            g = match kind {
                LayerKind::Conv3x3 { cin, .. } => {
                    let w = match &self.params[li] {
                        LayerParams::Conv { w, .. } => w,
                        _ => unreachable!(),
                    };
                    let cols = im2col(input);
                    let gw = standardize(cols.t().dot(&g));
                    let gb = column_sums(&g);
                    grads.layers[li] = LayerGrads::Conv { w: gw, b: gb };
                    let gcols = standardize(g.dot(&w.t()));
                    col2im(&gcols, input.batch, input.h, input.w, cin)
                }
                LayerKind::BatchNorm { c } => {
                    let (gamma, _) = match &self.params[li] {
                        LayerParams::BatchNorm { gamma, beta, .. } => (gamma, beta),
                        _ => unreachable!(),
                    };
                    let (xhat, inv_std) = cache.bn[li].as_ref().unwrap();
                    let n = g.nrows() as f64;
                    let g_gamma = (&g * xhat).sum_axis(Axis(0));
                    let g_beta = g.sum_axis(Axis(0));
                    // dx = gamma * inv_std / N * (N*g - sum(g) - xhat * sum(g*xhat))
                    let mut dx = g.clone();
                    for mut row in dx.rows_mut() {
                        for j in 0..c {
                            row[j] = n * row[j] - g_beta[j];
                        }
                    }
                    dx -= &(xhat * &g_gamma.view().insert_axis(Axis(0)));
                    for mut row in dx.rows_mut() {
                        for j in 0..c {
                            row[j] *= gamma[j] * inv_std[j] / n;
                        }
                    }
                    grads.layers[li] = LayerGrads::BatchNorm { gamma: g_gamma, beta: g_beta };
                    dx
                }
                LayerKind::TanhAct => {
                    let y = cache.tanh_out[li].as_ref().unwrap();
                    &g * &y.mapv(|v| 1.0 - v * v)
                }
                LayerKind::Flatten => {
                    let (h, w, c) = (input.h, input.w, input.c);
                    let data = g.into_raw_vec();
                    Array2::from_shape_vec((input.batch * h * w, c), data).unwrap()
                }
                LayerKind::FullyConnected { .. } => {
                    let w = match &self.params[li] {
                        LayerParams::Fc { w, .. } => w,
                        _ => unreachable!(),
                    };
                    let gw = standardize(input.a.t().dot(&g));
                    let gb = column_sums(&g);
                    grads.layers[li] = LayerGrads::Fc { w: gw, b: gb };
                    standardize(g.dot(&w.t()))
                }
                LayerKind::Upsample2x => {
                    let (b, h, w, c) = (input.batch, input.h, input.w, input.c);
                    let mut din = Array2::zeros((b * h * w, c));
                    for row in 0..b * h * w {
                        let base = (row / w) * (2 * w) + (row % w) * 2;
                        let sum = &g.row(base) + &g.row(base + 1);
                        din.row_mut(row).assign(&sum);
                    }
                    din
                }
            };
        }
        grads
    }

    /// Per-layer and total trainable parameter counts. BN running statistics
    /// are not trainable and are excluded.
    pub fn count_params(&self) -> (Vec<(String, usize)>, usize) {
        let mut rows = Vec::new();
        let mut total = 0;
        for (i, spec) in self.spec.layers.iter().enumerate() {
            let n = spec.kind.trainable_param_count();
            if n > 0 {
                rows.push((format!("layer{i}:{}", kind_name(&spec.kind)), n));
                total += n;
            }
        }
        (rows, total)
    }

    /// Per-layer and total FLOPs under the 2-FLOPs-per-MAC convention.
    /// Only Conv and FC layers count; biases, BN, and activations excluded.
    pub fn count_flops(&self) -> (Vec<(String, u64)>, u64) {
        let mut rows = Vec::new();
        let mut total = 0u64;
        let mut shape = self.spec.input_shape;
        for (i, spec) in self.spec.layers.iter().enumerate() {
            let flops = match spec.kind {
                LayerKind::Conv3x3 { cin, cout } => {
                    2 * 9 * (cin * cout * shape.0 * shape.1) as u64
                }
                LayerKind::FullyConnected { input, output } => 2 * (input * output) as u64,
                _ => 0,
            };
            if flops > 0 {
                rows.push((format!("layer{i}:{}", kind_name(&spec.kind)), flops));
                total += flops;
            }
            shape = spec.kind.output_shape(shape).expect("validated spec");
        }
        (rows, total)
    }

    /// SHA-256 over the parameter blob; provenance identity of a model state.
    pub fn param_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for p in &self.params {
            for group in p.trainable_slices() {
                for v in group {
                    hasher.update(v.to_le_bytes());
                }
            }
            if let LayerParams::BatchNorm { run_mean, run_var, .. } = p {
                for v in run_mean.iter().chain(run_var.iter()) {
                    hasher.update(v.to_le_bytes());
                }
            }
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn kind_name(kind: &LayerKind) -> &'static str {
    match kind {
        LayerKind::Conv3x3 { .. } => "conv3x3",
        LayerKind::BatchNorm { .. } => "batchnorm",
        LayerKind::TanhAct => "tanh",
        LayerKind::Flatten => "flatten",
        LayerKind::FullyConnected { .. } => "fc",
        LayerKind::Upsample2x => "upsample2x",
    }
}

impl Batch3 {
    pub fn shape_hwc(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }
}
