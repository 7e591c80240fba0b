//! Tensor substrate: dense tensors, reverse-mode differentiation, AdamW,
//! learning-rate schedules and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod schedule;
pub mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use optim::{adamw_step, AdamWConfig, OptimizerState};
pub use params::{truncated_normal, ParamId, ParamStore};
pub use schedule::{lr_at, ScheduleKind, ScheduleSpec};
pub use tensor::Tensor;
