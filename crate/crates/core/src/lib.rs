//! Supervised contrastive learning for regression with embedding-level mixup.
//!
//! The crate is organized bottom-up:
//!
//! - [`batch`]: labeled embedding batches, label grouping and the label range.
//! - [`mixgen`]: Mix-neg / Mix-pos construction per anchor.
//! - [`loss`]: the weighted contrastive loss, its gradient and lower bound.
//! - [`theory`]: executable checks of the loss's analytic properties.
//! - [`nn`]: a small MLP encoder, linear probe and training loops.
//! - [`data`]: synthetic ordinal datasets and CSV ingestion.
//! - [`analysis`]: regression metrics, Lipschitz-factor analysis and ordinality.

pub mod analysis;
pub mod batch;
pub mod data;
pub mod error;
pub mod loss;
pub mod mixgen;
pub mod nn;
pub mod rng;
mod stats;
pub mod theory;

pub use batch::{
    group_by_label, label_range, normalize_embeddings, LabelGroups, LabelRange, LabeledBatch, QuantizationRule,
};
pub use error::{Error, Result};
pub use loss::{LossConfig, LossOutput, MixSpace};
pub use mixgen::{AnchorContrastSet, MixKind, MixNegConfig, MixPosConfig, MixedEmbedding, WindowMode};
