//! Experiment driver: the toy captioning world, single runs, resumable
//! model × data sweeps, objective ablations and their reports.

pub mod ablation;
pub mod eval;
pub mod report;
pub mod run;
pub mod spec;
pub mod sweep;
pub mod train;
pub mod world;

pub use ablation::{run_ablation, write_ablation, AblationRow};
pub use eval::{evaluate, score_captions, DomainScore, EvalReport};
pub use run::{finetune, pretrain, run, RunData, RunResult};
pub use report::{write_report, ResultRow};
pub use spec::{model_config, RunSpec, StageSpec};
pub use sweep::{run_sweep, SweepSpec};
pub use train::{batch_gradients, train, CheckpointRecord, Example, StageResult, TrainConfig, TrainState};
pub use world::{make_toy_dataset, Domain, Source, ToyRecord, ToyWorld, WorldConfig};

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "CAPSCALE_WORKERS";

/// Worker count from [`WORKERS_ENV`], else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}
