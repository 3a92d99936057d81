//! Cross-domain classifier training with prototype-filtered auxiliary
//! supervision.
//!
//! The library trains a target-domain classifier while selectively
//! importing supervision from a label-noisy auxiliary domain. A Y-shaped
//! backbone (domain-private encoders, one shared encoder) is optimized
//! with three cooperating terms:
//!
//! - [`eda`]: domain-level alignment of the private encoders' pooled
//!   intermediate features, adversarially or via multi-kernel MMD;
//! - [`psa`]: class-level alignment — target class prototypes score each
//!   auxiliary sample's label consistency, gate which samples join a
//!   supervised contrastive loss in projection space;
//! - [`transfer`]: consistency-weighted auxiliary cross-entropy stacked on
//!   the target classification loss, plus the training loop itself.
//!
//! [`data`] provides the synthetic two-domain benchmark, manifest files,
//! image-folder ingestion, and the balanced auxiliary sampler;
//! [`evalsuite`] the metrics, ROC analysis, and threshold sweeps.

pub mod data;
pub mod eda;
pub mod error;
pub mod evalsuite;
pub mod model;
pub mod nn;
pub mod psa;
pub mod transfer;

pub use error::{Error, Result};
