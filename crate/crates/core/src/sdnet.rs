//! SDNet detector: input assembly, model builders, the task training loop,
//! and SER evaluation.
//!
//! The network refines the ZF soft output using the LS channel estimate. Its
//! input stacks the ZF estimate (one row) on top of the real-lifted channel
//! estimate (2Nr rows); the output is the 2Nt real symbol-component vector.

use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::channel::{Sample, TaskDataset};
use crate::detectors::ser_stderr;
use crate::error::{Error, Result};
use crate::neuralnet::{
    adam_step, anchor_penalty, apply_anchor_grads, mse_loss, AdamConfig, AdamState, ConvAnchor,
    GradAccumulator, GradRecord, LayerKind, LayerSpec, Mode, Model, ModelMeta, ModelSpec, Tensor3,
};
use crate::numerics::{complex_to_real_channel, realify, RMat, RVec, RngStream};

/// Feature channels of the conv stack.
pub const SDNET_CHANNELS: usize = 8;
/// The ZF row is clipped to this range before entering the network.
pub const ZF_CLIP: f64 = 3.0;

/// Hyperparameters of one task-level training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Anchor weight for transferred conv layers; ignored without anchors.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 120, batch_size: 100, lr: 1e-3, lambda: 2e-15, seed: 0 }
    }
}

/// One line of the per-epoch training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ser: f64,
    pub wall_ms: u64,
}

/// Stack the ZF soft output over the real-lifted channel estimate as a
/// (2Nr+1) x 2Nt x 1 tensor. With `scale` present the ZF row is clipped to
/// [-ZF_CLIP, ZF_CLIP] and the channel rows are multiplied by the scale;
/// without it the layout is lossless.
pub fn assemble_input(x_zf: &RVec, h_ls_real: &RMat, scale: Option<f64>) -> Result<Tensor3> {
    let w = x_zf.len();
    if h_ls_real.ncols() != w || w == 0 || w % 2 != 0 || h_ls_real.nrows() % 2 != 0 {
        return Err(Error::ShapeMismatch {
            expected: format!("channel lift with {w} columns"),
            got: format!("{}x{}", h_ls_real.nrows(), h_ls_real.ncols()),
        });
    }
    let h = h_ls_real.nrows() + 1;
    let mut t = Tensor3::zeros(h, w, 1);
    for x in 0..w {
        let v = x_zf[x];
        t.set(0, x, 0, if scale.is_some() { v.clamp(-ZF_CLIP, ZF_CLIP) } else { v });
    }
    let c = scale.unwrap_or(1.0);
    for y in 0..h_ls_real.nrows() {
        for x in 0..w {
            t.set(y + 1, x, 0, c * h_ls_real[(y, x)]);
        }
    }
    Ok(t)
}

/// Per-dataset input scale: 1 / RMS of the lifted channel-estimate entries
/// over the training split.
pub fn compute_input_scale(train: &[Sample]) -> Result<f64> {
    let mut acc = 0.0;
    let mut n = 0usize;
    for s in train {
        for z in s.h_ls.iter() {
            acc += z.re * z.re + z.im * z.im;
            n += 2;
        }
    }
    if n == 0 || acc == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(1.0 / (acc / n as f64).sqrt())
}

fn conv_block(cin: usize, cout: usize) -> [LayerSpec; 3] {
    [
        LayerSpec::new(LayerKind::Conv3x3 { cin, cout }),
        LayerSpec::new(LayerKind::BatchNorm { c: cout }),
        LayerSpec::new(LayerKind::TanhAct),
    ]
}

fn sdnet_layers(n_conv: usize, input_h: usize, input_w: usize, out: usize) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    layers.extend(conv_block(1, SDNET_CHANNELS));
    for _ in 0..n_conv {
        layers.extend(conv_block(SDNET_CHANNELS, SDNET_CHANNELS));
    }
    layers.extend(conv_block(SDNET_CHANNELS, 1));
    layers.push(LayerSpec::new(LayerKind::Flatten));
    layers.push(LayerSpec::new(LayerKind::FullyConnected {
        input: input_h * input_w,
        output: out,
    }));
    layers.push(LayerSpec::new(LayerKind::TanhAct));
    layers
}

/// Standard SDNet: first conv 1->8, N_conv mid convs 8->8 (the significant
/// layers 1..N_conv), last conv 8->1, then Flatten + FC to 2Nt + Tanh.
pub fn build_sdnet(n_conv: usize, nt: usize, nr: usize) -> ModelSpec {
    assert!(n_conv >= 1);
    let (h, w) = (2 * nr + 1, 2 * nt);
    ModelSpec {
        layers: sdnet_layers(n_conv, h, w, 2 * nt),
        input_shape: (h, w, 1),
        meta: ModelMeta { n_conv, nt, nr, input_scale: None, upsampled: false },
    }
}

/// SDNet for a narrower array whose input width is doubled by nearest-neighbor
/// duplication before the conv stack, so 8->8 conv parameters transfer
/// unchanged from the native-width model.
pub fn build_upsampled_sdnet(n_conv: usize, nt_small: usize, nr: usize) -> Result<ModelSpec> {
    if nt_small == 0 || nt_small % 2 != 0 {
        return Err(Error::IncompatibleGeometry(format!(
            "upsampled width 4*{nt_small} must be a positive multiple of 4"
        )));
    }
    let (h, w) = (2 * nr + 1, 2 * nt_small);
    let mut layers = vec![LayerSpec::new(LayerKind::Upsample2x)];
    layers.extend(sdnet_layers(n_conv, h, 2 * w, 2 * nt_small));
    Ok(ModelSpec {
        layers,
        input_shape: (h, w, 1),
        meta: ModelMeta { n_conv, nt: nt_small, nr, input_scale: None, upsampled: true },
    })
}

/// Model-layer index of significant conv layer `j` in 1..=N_conv (the mid
/// convs; the first conv, last conv, and FC are never significant).
pub fn significant_layer_index(spec: &ModelSpec, j: usize) -> usize {
    assert!(j >= 1 && j <= spec.meta.n_conv);
    let offset = if spec.meta.upsampled { 1 } else { 0 };
    offset + 3 * j
}

/// Build the network inputs for a slice of samples under one input scale.
pub fn prepare_inputs(samples: &[Sample], scale: Option<f64>) -> Result<Vec<Tensor3>> {
    samples
        .iter()
        .map(|s| assemble_input(&s.x_zf, &complex_to_real_channel(&s.h_ls), scale))
        .collect()
}

/// Training targets: the real-lifted transmitted symbol vectors, rows of
/// components in {-1/sqrt(2), +1/sqrt(2)}.
pub fn prepare_targets(samples: &[Sample], nt: usize) -> ndarray::Array2<f64> {
    let mut t = ndarray::Array2::zeros((samples.len(), 2 * nt));
    for (i, s) in samples.iter().enumerate() {
        let lifted = realify(&s.x);
        for j in 0..2 * nt {
            t[(i, j)] = lifted[j];
        }
    }
    t
}

/// Symbol error rate of the network on a sample slice: forward in infer mode,
/// sign decisions per quadrature, a symbol is wrong if either component is.
pub fn evaluate_ser(model: &mut Model, samples: &[Sample]) -> Result<f64> {
    let nt = model.spec.meta.nt;
    let scale = model.spec.meta.input_scale;
    let inputs = prepare_inputs(samples, scale)?;
    let mut errors = 0usize;
    let chunk = 200;
    for start in (0..samples.len()).step_by(chunk) {
        let end = (start + chunk).min(samples.len());
        let indices: Vec<usize> = (start..end).collect();
        let (out, _) = model.forward_batch(&inputs, &indices, Mode::Infer)?;
        for (row, s) in out.rows().into_iter().zip(&samples[start..end]) {
            for i in 0..nt {
                let re_ok = (row[i] >= 0.0) == (s.x[i].re >= 0.0);
                let im_ok = (row[i + nt] >= 0.0) == (s.x[i].im >= 0.0);
                if !(re_ok && im_ok) {
                    errors += 1;
                }
            }
        }
    }
    Ok(errors as f64 / (samples.len() * nt) as f64)
}

/// SER with its Monte Carlo standard error and symbol count.
pub fn evaluate_ser_with_stderr(model: &mut Model, samples: &[Sample]) -> Result<(f64, f64, usize)> {
    let ser = evaluate_ser(model, samples)?;
    let n = samples.len() * model.spec.meta.nt;
    Ok((ser, ser_stderr(ser, n), n))
}

/// Train a model on one task with seeded mini-batch shuffling and optional
/// anchored conv layers. Returns the per-epoch log and the mean absolute
/// gradient record of the final epoch.
pub fn train_on_task(
    model: &mut Model,
    dataset: &TaskDataset,
    cfg: &TrainConfig,
    anchors: &[ConvAnchor],
) -> Result<(Vec<EpochLog>, GradRecord)> {
    if model.spec.meta.input_scale.is_none() {
        model.spec.meta.input_scale = Some(compute_input_scale(dataset.train())?);
    }
    let scale = model.spec.meta.input_scale;
    let inputs = prepare_inputs(dataset.train(), scale)?;
    let targets = prepare_targets(dataset.train(), model.spec.meta.nt);
    let mut shuffle_rng = RngStream::derive(cfg.seed, "train-shuffle", dataset.task_id);
    let adam_cfg = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let mut adam = AdamState::new(model);

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut final_grads = GradAccumulator::new(model);
    let n = inputs.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let last_epoch = epoch + 1 == cfg.epochs;
        for chunk in order.chunks(cfg.batch_size) {
            let (pred, cache) = model.forward_batch(&inputs, chunk, Mode::Train)?;
            let rows: Vec<usize> = chunk.to_vec();
            let batch_targets = ndarray::Array2::from_shape_fn(
                (rows.len(), targets.ncols()),
                |(i, j)| targets[(rows[i], j)],
            );
            let (mse, loss_grad) = mse_loss(&pred, &batch_targets)?;
            let mut grads = model.backward_batch(&cache, loss_grad);
            let mut loss = mse;
            if !anchors.is_empty() && cfg.lambda != 0.0 {
                let (penalty, agrads) = anchor_penalty(model, anchors, cfg.lambda)?;
                loss += penalty;
                apply_anchor_grads(&mut grads, &agrads);
            }
            adam_step(model, &grads, &mut adam, &adam_cfg);
            if last_epoch {
                final_grads.add(&grads);
            }
            loss_sum += loss;
            batches += 1;
        }
        let val_ser = evaluate_ser(model, dataset.val())?;
        log.push(EpochLog {
            epoch: epoch + 1,
            train_loss: loss_sum / batches.max(1) as f64,
            val_ser,
            wall_ms: t0.elapsed().as_millis() as u64,
        });
    }
    Ok((log, final_grads.finalize()))
}

/// Glorot-initialize a fresh model from an addressed stream.
pub fn init_model(spec: ModelSpec, seed: u64, purpose: &str, index: u64) -> Result<Model> {
    let mut model = Model::new(spec)?;
    let mut rng = RngStream::derive(seed, purpose, index);
    model.init_glorot(&mut rng);
    Ok(model)
}
