//! Minimal neural-network engine: exactly the layer types, losses, optimizer,
//! accounting, and serialization the detector needs. Double precision
//! throughout; all batched math reduces to GEMMs via im2col.

pub mod adam;
pub mod checkpoint;
pub mod layer;
pub mod loss;
pub mod model;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use layer::{LayerGrads, LayerKind, LayerParams, LayerSpec, BN_EPS, BN_MOMENTUM};
pub use loss::{anchor_penalty, apply_anchor_grads, mse_loss, ConvAnchor, GradAccumulator, GradRecord};
pub use model::{Gradients, Mode, Model, ModelMeta, ModelSpec};
pub use tensor::{Batch3, Tensor3};
