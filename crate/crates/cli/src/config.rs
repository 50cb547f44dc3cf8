//! Run configuration: a single versioned JSON file with flag overrides.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

/// Everything a full run needs. Unknown keys are rejected so stale configs
/// fail loudly instead of silently reverting to defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    // Geometry.
    pub nt: usize,
    pub nr: usize,
    pub np: usize,
    pub cluster_count: usize,
    pub angular_spread_deg: f64,
    // Task layout.
    pub collective_tasks: usize,
    pub target_tasks: usize,
    pub samples_per_task: usize,
    pub snr_db: f64,
    pub snr_grid: Vec<f64>,
    // Architecture.
    pub collective_n_conv: usize,
    pub individual_n_conv: usize,
    // Training.
    pub collective_epochs: usize,
    pub individual_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda: f64,
    // Extraction policy.
    pub tau: f64,
    pub rho_sel: f64,
    pub window: Option<usize>,
    pub m_max: usize,
    // Reproducibility.
    pub master_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            nt: 8,
            nr: 32,
            np: 16,
            cluster_count: 6,
            angular_spread_deg: 5.0,
            collective_tasks: 8,
            target_tasks: 2,
            samples_per_task: 2000,
            snr_db: 25.0,
            snr_grid: vec![20.0, 22.5, 25.0, 27.5, 30.0],
            collective_n_conv: 12,
            individual_n_conv: 8,
            collective_epochs: 30,
            individual_epochs: 120,
            batch_size: 100,
            lr: 1e-3,
            lambda: 2e-15,
            tau: 1e-4,
            rho_sel: 0.05,
            window: None,
            m_max: 4,
            master_seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| format!("invalid config: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.nt == 0 || self.nr == 0 || self.np < self.nt {
            return Err("geometry requires nt >= 1, nr >= 1, np >= nt".into());
        }
        if self.collective_tasks < 2 {
            return Err("collective_tasks must be at least 2".into());
        }
        if self.samples_per_task < 10 {
            return Err("samples_per_task must be at least 10".into());
        }
        if self.m_max == 0 || self.m_max > self.collective_n_conv {
            return Err("m_max must be in 1..=collective_n_conv".into());
        }
        if !(self.tau > 0.0) || !(self.rho_sel > 0.0) {
            return Err("tau and rho_sel must be positive".into());
        }
        Ok(())
    }

    /// Stable hash over the effective configuration, after overrides.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(canon.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn channel_params(&self) -> sdnet_core::channel::ChannelParams {
        sdnet_core::channel::ChannelParams {
            nt: self.nt,
            nr: self.nr,
            np: self.np,
            cluster_count: self.cluster_count,
            angular_spread: self.angular_spread_deg.to_radians(),
            ..sdnet_core::channel::ChannelParams::default()
        }
    }

    pub fn policy(&self) -> sdnet_core::learngene::ExtractionPolicy {
        sdnet_core::learngene::ExtractionPolicy {
            tau: self.tau,
            rho_sel: self.rho_sel,
            window: self.window,
            m_max: self.m_max,
        }
    }

    pub fn individual_train(&self) -> sdnet_core::sdnet::TrainConfig {
        sdnet_core::sdnet::TrainConfig {
            epochs: self.individual_epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            lambda: self.lambda,
            seed: self.master_seed,
        }
    }

    pub fn collective_train(&self) -> sdnet_core::sdnet::TrainConfig {
        sdnet_core::sdnet::TrainConfig {
            epochs: self.collective_epochs,
            ..self.individual_train()
        }
    }
}
