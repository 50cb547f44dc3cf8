//! Knowledge transfer across detector generations: sequential collective
//! training, gradient-significance analysis, extraction of a compact conv
//! unit, and the expansion strategies that seed individual models from it.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::channel::TaskDataset;
use crate::error::{Error, Result};
use crate::neuralnet::{checkpoint, ConvAnchor, GradRecord, LayerParams, Model, ModelSpec};
use crate::sdnet::{init_model, significant_layer_index, train_on_task, EpochLog, TrainConfig};

/// Proportion-of-significant-gradients matrix over the collective run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradSigLog {
    /// rho[l-1][k-1] for significant layer l and task k.
    pub rho: Vec<Vec<f64>>,
    pub tau: f64,
    pub epochs_per_task: usize,
    pub task_ids: Vec<u64>,
}

/// Selection rule knobs for [`extract_learngene`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionPolicy {
    /// Gradient-magnitude threshold for the significance statistic.
    pub tau: f64,
    /// Final-value ceiling for an eligible layer.
    pub rho_sel: f64,
    /// Trend window in tasks; `None` means max(3, K/2).
    pub window: Option<usize>,
    /// Maximum unit size in layers.
    pub m_max: usize,
}

impl Default for ExtractionPolicy {
    fn default() -> Self {
        Self { tau: 1e-4, rho_sel: 0.05, window: None, m_max: 4 }
    }
}

/// The transferable artifact: conv kernels/biases of a contiguous block of
/// significant layers, with provenance. BN parameters are never included.
#[derive(Debug, Clone)]
pub struct LearngeneUnit {
    /// (kernel, bias) per layer, shallow to deep.
    pub blocks: Vec<(Array2<f64>, Array1<f64>)>,
    /// Significant-layer ids (1-based) the blocks came from.
    pub source_ids: Vec<usize>,
    /// Parameter hash of the source collective model.
    pub source_hash: String,
    pub policy: ExtractionPolicy,
    /// The rho rows of the selected layers, for audit.
    pub rho_excerpt: Vec<Vec<f64>>,
    /// Set when no layer met the eligibility rule and the fallback ran.
    pub fallback: bool,
}

impl LearngeneUnit {
    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(|(w, b)| w.len() + b.len()).sum()
    }
}

/// Where an expansion copies parameters from and to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    /// Fixed source (the extracted unit), varying destination slot.
    Embedding,
    /// Varying collective source segment, fixed bottom destination.
    Inheriting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Position {
    Top,
    Middle,
    Bottom,
}

/// An expansion strategy. Bottom embedding and bottom inheriting coincide,
/// so [`canonical`](Self::canonical) maps both to the embedding form and the
/// canonical set has exactly five members.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionStrategy {
    pub family: Family,
    pub position: Position,
}

impl ExpansionStrategy {
    pub fn canonical(self) -> Self {
        if self.position == Position::Bottom {
            Self { family: Family::Embedding, position: Position::Bottom }
        } else {
            self
        }
    }

    /// All five canonical strategies.
    pub fn all_canonical() -> Vec<Self> {
        vec![
            Self { family: Family::Embedding, position: Position::Top },
            Self { family: Family::Embedding, position: Position::Middle },
            Self { family: Family::Embedding, position: Position::Bottom },
            Self { family: Family::Inheriting, position: Position::Top },
            Self { family: Family::Inheriting, position: Position::Middle },
        ]
    }

    pub fn label(self) -> String {
        let family = match self.family {
            Family::Embedding => "embedding",
            Family::Inheriting => "inheriting",
        };
        let position = match self.position {
            Position::Top => "top",
            Position::Middle => "middle",
            Position::Bottom => "bottom",
        };
        format!("{position}-{family}")
    }
}

/// Per-layer significance: the fraction of a conv layer's trainable
/// parameters whose recorded |gradient| exceeds tau.
pub fn gradient_significance(record: &GradRecord, spec: &ModelSpec, tau: f64) -> Vec<f64> {
    assert!(tau > 0.0);
    (1..=spec.meta.n_conv)
        .map(|j| {
            let li = significant_layer_index(spec, j);
            let grads = &record.layers[li];
            if grads.is_empty() {
                return 0.0;
            }
            let above = grads.iter().filter(|g| **g > tau).count();
            above as f64 / grads.len() as f64
        })
        .collect()
}

/// Configuration of one collective run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollectiveConfig {
    pub train: TrainConfig,
    pub tau: f64,
}

impl Default for CollectiveConfig {
    fn default() -> Self {
        Self { train: TrainConfig { epochs: 30, ..TrainConfig::default() }, tau: 1e-4 }
    }
}

/// Sequentially train one model across the ordered tasks, warm-starting each
/// task from the previous parameters with a fresh optimizer, and log the
/// gradient-significance column of every task's final epoch.
pub fn train_collective(
    model: &mut Model,
    tasks: &[TaskDataset],
    cfg: &CollectiveConfig,
) -> Result<(GradSigLog, Vec<Vec<EpochLog>>)> {
    assert!(!tasks.is_empty());
    let n_conv = model.spec.meta.n_conv;
    let mut rho: Vec<Vec<f64>> = vec![Vec::with_capacity(tasks.len()); n_conv];
    let mut logs = Vec::with_capacity(tasks.len());
    for task in tasks {
        // train_on_task builds a fresh AdamState, which is exactly the
        // per-task optimizer reset this loop needs.
        let (log, record) = train_on_task(model, task, &cfg.train, &[])?;
        let column = gradient_significance(&record, &model.spec, cfg.tau);
        for (l, v) in column.into_iter().enumerate() {
            rho[l].push(v);
        }
        logs.push(log);
    }
    Ok((
        GradSigLog {
            rho,
            tau: cfg.tau,
            epochs_per_task: cfg.train.epochs,
            task_ids: tasks.iter().map(|t| t.task_id).collect(),
        },
        logs,
    ))
}

/// Least-squares slope of y over x = 0..n-1.
fn ls_slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    if y.len() < 2 {
        return 0.0;
    }
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, v) in y.iter().enumerate() {
        let dx = i as f64 - mean_x;
        num += dx * (v - mean_y);
        den += dx * dx;
    }
    num / den
}

/// Select the transferable conv block: layers whose significance has a
/// non-increasing trend over the last W tasks and a small final value, taken
/// as the maximal contiguous suffix ending at the deepest significant layer,
/// truncated to at most m_max (deepest kept). If nothing is eligible, the
/// contiguous window of m_max layers with the smallest mean final
/// significance is taken instead and the unit is flagged.
pub fn extract_learngene(
    model: &Model,
    log: &GradSigLog,
    policy: &ExtractionPolicy,
) -> Result<LearngeneUnit> {
    let n_conv = model.spec.meta.n_conv;
    if log.rho.len() != n_conv || log.rho.iter().any(|r| r.is_empty()) {
        return Err(Error::EmptyLog);
    }
    let k = log.rho[0].len();
    let w = policy.window.unwrap_or_else(|| 3usize.max(k / 2)).min(k);

    let eligible: Vec<bool> = log
        .rho
        .iter()
        .map(|series| {
            let tail = &series[series.len() - w..];
            ls_slope(tail) <= 0.0 && *series.last().unwrap() <= policy.rho_sel
        })
        .collect();

    // Maximal contiguous eligible suffix ending at layer n_conv.
    let mut start = n_conv;
    while start > 0 && eligible[start - 1] {
        start -= 1;
    }
    let (ids, fallback) = if start < n_conv {
        let first = start + 1; // 1-based
        let first = first.max(n_conv + 1 - policy.m_max.min(n_conv - start));
        ((first..=n_conv).collect::<Vec<_>>(), false)
    } else {
        // Fallback: contiguous m_max-window with the smallest mean final rho;
        // ties resolved toward the deepest window.
        let m = policy.m_max.min(n_conv);
        let finals: Vec<f64> = log.rho.iter().map(|s| *s.last().unwrap()).collect();
        let mut best_start = 0usize;
        let mut best_mean = f64::INFINITY;
        for s in 0..=n_conv - m {
            let mean = finals[s..s + m].iter().sum::<f64>() / m as f64;
            if mean <= best_mean {
                best_mean = mean;
                best_start = s;
            }
        }
        (((best_start + 1)..=(best_start + m)).collect::<Vec<_>>(), true)
    };

    let blocks = ids
        .iter()
        .map(|&j| {
            let li = significant_layer_index(&model.spec, j);
            match &model.params[li] {
                LayerParams::Conv { w, b } => (w.clone(), b.clone()),
                _ => unreachable!("significant ids address conv layers"),
            }
        })
        .collect();
    let rho_excerpt = ids.iter().map(|&j| log.rho[j - 1].clone()).collect();
    Ok(LearngeneUnit {
        blocks,
        source_ids: ids,
        source_hash: model.param_hash(),
        policy: policy.clone(),
        rho_excerpt,
        fallback,
    })
}

/// Individual-model destination slots (significant ids, 1-based, inclusive)
/// for a given position, with the default individual depth of 8.
fn destination_slot(position: Position, n_conv: usize, span: usize) -> Vec<usize> {
    segment(position, n_conv, span.min(n_conv))
}

/// Collective-model source segments for the inheriting family.
fn source_segment(position: Position, n_conv: usize, span: usize) -> Vec<usize> {
    segment(position, n_conv, span)
}

/// Contiguous span of significant ids at a position: top starts at 1, bottom
/// ends at n_conv, middle is centered (3..6 of 8, 5..8 of 12).
fn segment(position: Position, n_conv: usize, span: usize) -> Vec<usize> {
    match position {
        Position::Top => (1..=span).collect(),
        Position::Middle => {
            let start = (n_conv - span) / 2 + 1;
            (start..start + span).collect()
        }
        Position::Bottom => (n_conv + 1 - span..=n_conv).collect(),
    }
}

/// A freshly expanded individual model plus the anchors for adaptation.
pub struct ExpandedModel {
    pub model: Model,
    pub anchors: Vec<ConvAnchor>,
    /// (individual significant id, description of the source) per copied layer.
    pub copy_manifest: Vec<(usize, String)>,
}

/// Initialize an individual model and copy transferred conv blocks into it.
///
/// Embedding keeps the extracted unit fixed and varies the destination slot;
/// inheriting keeps the bottom destination fixed and varies which collective
/// segment is copied. Only conv kernels/biases are copied — BN layers, the
/// first/last convs, and the FC layer are always freshly initialized.
pub fn expand(
    individual_spec: ModelSpec,
    collective: Option<&Model>,
    unit: &LearngeneUnit,
    strategy: ExpansionStrategy,
    seed: u64,
    init_index: u64,
) -> Result<ExpandedModel> {
    let strategy = strategy.canonical();
    let n_conv = individual_spec.meta.n_conv;
    let mut model = init_model(individual_spec, seed, "individual-init", init_index)?;

    let (sources, source_desc): (Vec<(Array2<f64>, Array1<f64>)>, Vec<String>) =
        match strategy.family {
            Family::Embedding => (
                unit.blocks.clone(),
                unit.source_ids.iter().map(|j| format!("unit[{j}]")).collect(),
            ),
            Family::Inheriting => {
                let col = collective.ok_or_else(|| {
                    Error::StrategyUnavailable(
                        "inheriting strategies need the collective model".into(),
                    )
                })?;
                let span = unit.blocks.len();
                let seg = source_segment(strategy.position, col.spec.meta.n_conv, span);
                if *seg.last().unwrap() > col.spec.meta.n_conv {
                    return Err(Error::StrategyUnavailable(format!(
                        "collective model too shallow for segment {seg:?}"
                    )));
                }
                let blocks = seg
                    .iter()
                    .map(|&j| {
                        let li = significant_layer_index(&col.spec, j);
                        match &col.params[li] {
                            LayerParams::Conv { w, b } => (w.clone(), b.clone()),
                            _ => unreachable!(),
                        }
                    })
                    .collect();
                (blocks, seg.iter().map(|j| format!("collective[{j}]")).collect())
            }
        };

    let span = sources.len();
    let slot = match strategy.family {
        Family::Embedding => destination_slot(strategy.position, n_conv, span),
        Family::Inheriting => destination_slot(Position::Bottom, n_conv, span),
    };
    if slot.len() != sources.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} source blocks", slot.len()),
            got: format!("{}", sources.len()),
        });
    }

    let mut anchors = Vec::with_capacity(slot.len());
    let mut copy_manifest = Vec::with_capacity(slot.len());
    for ((&j, (w, b)), desc) in slot.iter().zip(sources).zip(source_desc) {
        let li = significant_layer_index(&model.spec, j);
        match &mut model.params[li] {
            LayerParams::Conv { w: dw, b: db } => {
                if dw.dim() != w.dim() || db.len() != b.len() {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{:?}", dw.dim()),
                        got: format!("{:?}", w.dim()),
                    });
                }
                *dw = w.clone();
                *db = b.clone();
            }
            _ => unreachable!(),
        }
        anchors.push(ConvAnchor { layer_index: li, w, b });
        copy_manifest.push((j, desc));
    }
    Ok(ExpandedModel { model, anchors, copy_manifest })
}

/// Anchored fine-tuning of an expanded model on its target task.
pub fn adapt_individual(
    expanded: &mut ExpandedModel,
    task: &TaskDataset,
    cfg: &TrainConfig,
) -> Result<(Vec<EpochLog>, GradRecord)> {
    train_on_task(&mut expanded.model, task, cfg, &expanded.anchors)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UnitManifest {
    format_version: u32,
    kind: String,
    source_ids: Vec<usize>,
    source_hash: String,
    policy: ExtractionPolicy,
    rho_excerpt: Vec<Vec<f64>>,
    fallback: bool,
    block_dims: Vec<(usize, usize)>,
    #[serde(default)]
    config_hash: Option<String>,
    #[serde(default)]
    master_seed: Option<u64>,
}

/// Persist a unit in the shared manifest+blob container.
pub fn save_unit(unit: &LearngeneUnit, path: &Path) -> Result<()> {
    save_unit_tagged(unit, path, None, None)
}

/// Like [`save_unit`] but records run provenance in the manifest.
pub fn save_unit_tagged(
    unit: &LearngeneUnit,
    path: &Path,
    config_hash: Option<String>,
    master_seed: Option<u64>,
) -> Result<()> {
    let manifest = UnitManifest {
        format_version: checkpoint::CHECKPOINT_FORMAT_VERSION,
        kind: "learngene-unit".into(),
        source_ids: unit.source_ids.clone(),
        source_hash: unit.source_hash.clone(),
        policy: unit.policy.clone(),
        rho_excerpt: unit.rho_excerpt.clone(),
        fallback: unit.fallback,
        block_dims: unit.blocks.iter().map(|(w, _)| w.dim()).collect(),
        config_hash,
        master_seed,
    };
    let mut blob = Vec::new();
    for (w, b) in &unit.blocks {
        blob.extend_from_slice(w.as_slice().unwrap());
        blob.extend_from_slice(b.as_slice().unwrap());
    }
    checkpoint::write_container(path, &manifest, &blob)
}

pub fn load_unit(path: &Path) -> Result<LearngeneUnit> {
    let (manifest, blob): (UnitManifest, Vec<f64>) = checkpoint::read_container(path)?;
    if manifest.format_version != checkpoint::CHECKPOINT_FORMAT_VERSION {
        return Err(Error::FormatVersionMismatch {
            expected: checkpoint::CHECKPOINT_FORMAT_VERSION,
            found: manifest.format_version,
        });
    }
    if manifest.kind != "learngene-unit" {
        return Err(Error::CorruptBlob(format!("unexpected container kind {}", manifest.kind)));
    }
    let expected: usize = manifest.block_dims.iter().map(|(r, c)| r * c + c).sum();
    if blob.len() != expected {
        return Err(Error::CorruptBlob(format!(
            "blob holds {} values, manifest declares {expected}",
            blob.len()
        )));
    }
    let mut blocks = Vec::with_capacity(manifest.block_dims.len());
    let mut off = 0;
    for &(r, c) in &manifest.block_dims {
        let w = Array2::from_shape_vec((r, c), blob[off..off + r * c].to_vec()).unwrap();
        off += r * c;
        let b = Array1::from_vec(blob[off..off + c].to_vec());
        off += c;
        blocks.push((w, b));
    }
    Ok(LearngeneUnit {
        blocks,
        source_ids: manifest.source_ids,
        source_hash: manifest.source_hash,
        policy: manifest.policy,
        rho_excerpt: manifest.rho_excerpt,
        fallback: manifest.fallback,
    })
}
