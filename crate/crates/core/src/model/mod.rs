//! Multimodal fusion transformer: configuration ladder, the
//! sequence-to-sequence attention mask, forward passes and accounting.

pub mod accounting;
pub mod batch;
pub mod config;
pub mod mask;
pub mod transformer;

pub use accounting::{count_params, estimate_flops, estimate_flops_split};
pub use batch::MultimodalBatch;
pub use config::{Architecture, ModelConfig, BOX_DIMS, REGION_FEATURE_DIM};
pub use mask::{build_mask, causal_additive, AttentionMaskSpec};
pub use transformer::{CaptionModel, ModelOutput, Segment, INIT_STD};
