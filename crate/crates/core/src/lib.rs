//! SDNet MIMO detection workbench with learngene knowledge transfer.
//!
//! The crate is organized bottom-up:
//! - [`numerics`]: linear algebra, real lifting, seeded PCG64 streams
//! - [`channel`]: clustered geometric channels, pilots, LS estimation, datasets
//! - [`detectors`]: ZF / MMSE / ML, hard decisions, SER, ZF-noise diagnostics
//! - [`neuralnet`]: minimal CNN engine (conv, batch norm, tanh, FC, Adam)
//! - [`sdnet`]: SDNet model construction, input assembly, training loops
//! - [`learngene`]: sequential collective training, gradient significance,
//!   extraction, and the expansion strategies
//! - [`experiments`]: comparison schemes, generalization matrix, SNR sweeps,
//!   complexity accounting, metric files

pub mod channel;
pub mod detectors;
pub mod error;
pub mod experiments;
pub mod learngene;
pub mod neuralnet;
pub mod numerics;
pub mod sdnet;

pub use error::{Error, Result};
