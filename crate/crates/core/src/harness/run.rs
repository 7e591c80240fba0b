//! Pre-training, finetuning and evaluation of a single [`RunSpec`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoding::{BeamConfig, DecodeMode};
use crate::error::{Error, Result};
use crate::harness::eval::{evaluate, EvalReport};
use crate::harness::spec::{model_config, ResolvedStage, RunSpec};
use crate::harness::train::{prepare, train, CheckpointRecord, StageResult, TermSpec, TrainConfig, TrainState};
use crate::harness::world::{make_eval_set, make_toy_dataset, mix_seed, Source, ToyRecord, ToyWorld};
use crate::model::{count_params, ModelConfig};
use crate::numerics::ScheduleKind;

/// Seed of the fixed finetuning and evaluation sets; they do not vary with the run seed.
pub const FIXED_DATA_SEED: u64 = 0x5EED;

/// The data a run trains and evaluates on.
pub struct RunData {
    pub world: ToyWorld,
    pub pretrain: Vec<ToyRecord>,
    pub finetune: Vec<ToyRecord>,
    pub eval: Vec<ToyRecord>,
}

impl RunData {
    pub fn new(spec: &RunSpec) -> Result<Self> {
        let world = ToyWorld::new(spec.world.clone())?;
        let pretrain = make_toy_dataset(&world, Source::Pretrain, spec.data_size(), spec.noise, spec.seed);
        let finetune = make_toy_dataset(&world, Source::Finetune, spec.finetune_size, spec.noise, FIXED_DATA_SEED);
        let eval = make_eval_set(&world, spec.eval_per_domain, spec.noise, FIXED_DATA_SEED);
        Ok(Self {
            world,
            pretrain,
            finetune,
            eval,
        })
    }
}

pub fn run_model_config(spec: &RunSpec, world: &ToyWorld) -> Result<ModelConfig> {
    model_config(&spec.model, world.vocab.len(), world.region_dim(), spec.architecture)
}

fn term_spec(spec: &RunSpec, world: &ToyWorld) -> TermSpec {
    TermSpec {
        objective: spec.objective,
        smoothing: spec.label_smoothing,
        corruption: spec.corruption,
        special: world.vocab.special(),
    }
}

fn train_config(spec: &RunSpec, world: &ToyWorld, stage: ResolvedStage, kind: ScheduleKind, label: &str, out: Option<&Path>) -> TrainConfig {
    TrainConfig {
        stage,
        kind,
        terms: term_spec(spec, world),
        seed: mix_seed(&[spec.seed, kind as u64]),
        out_dir: out.map(Path::to_path_buf),
        label: label.to_string(),
    }
}

/// Pre-trains from a fresh initialization (or resumes `resume`).
pub fn pretrain(
    spec: &RunSpec,
    data: &RunData,
    resume: Option<TrainState>,
    out: Option<&Path>,
    on_checkpoint: impl FnMut(&TrainState, &CheckpointRecord) -> Result<()>,
) -> Result<(TrainState, StageResult)> {
    let config = run_model_config(spec, &data.world)?;
    let mut state = match resume {
        Some(s) => {
            check_compatible(s.model.config(), &config)?;
            s
        }
        None => TrainState::fresh(config, spec.seed, spec.weight_decay)?,
    };
    let cfg = train_config(spec, &data.world, spec.resolved_pretrain()?, ScheduleKind::Pretrain, "pretrain", out);
    let examples = prepare(&data.world, &data.pretrain)?;
    let result = train(&mut state, &examples, &cfg, on_checkpoint)?;
    Ok((state, result))
}

fn check_compatible(found: &ModelConfig, expected: &ModelConfig) -> Result<()> {
    if found != expected {
        return Err(Error::Config(format!(
            "checkpoint model `{}` ({} layers, width {}, vocab {}) does not match run model `{}` ({} layers, width {}, vocab {})",
            found.name, found.layers, found.width, found.vocab_size, expected.name, expected.layers, expected.width, expected.vocab_size
        )));
    }
    Ok(())
}

/// Finetunes `init` (or a fresh model, the no-pre-training baseline) with a
/// new optimizer and the no-warmup decay schedule. `from_smallest_scale`
/// selects the default learning rate column.
pub fn finetune(
    spec: &RunSpec,
    data: &RunData,
    init: Option<&TrainState>,
    from_smallest_scale: bool,
    out: Option<&Path>,
) -> Result<(TrainState, StageResult)> {
    let config = run_model_config(spec, &data.world)?;
    let mut state = match init {
        Some(s) => {
            check_compatible(s.model.config(), &config)?;
            TrainState::new(s.model.clone(), spec.weight_decay)
        }
        None => TrainState::fresh(config, spec.seed, spec.weight_decay)?,
    };
    let cfg = train_config(spec, &data.world, spec.resolved_finetune(from_smallest_scale)?, ScheduleKind::Finetune, "finetune", out);
    let examples = prepare(&data.world, &data.finetune)?;
    let result = train(&mut state, &examples, &cfg, |_, _| Ok(()))?;
    Ok((state, result))
}

pub fn beam_config(spec: &RunSpec) -> BeamConfig {
    BeamConfig {
        beam_size: spec.beam_size,
        max_len: spec.max_len,
        ..Default::default()
    }
}

/// Per-domain scores of `state` on the run's evaluation set.
pub fn evaluate_run(spec: &RunSpec, data: &RunData, state: &TrainState, prompt: &str) -> Result<EvalReport> {
    evaluate(&state.model, &data.world, &data.eval, DecodeMode::from(spec.objective), prompt, &beam_config(spec))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub name: String,
    pub model: String,
    pub params: u64,
    pub data_size: usize,
    pub seed: u64,
    pub pretrain: StageResult,
    pub finetune: StageResult,
    pub scores: EvalReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

/// Pre-train, finetune and evaluate one spec end to end.
pub fn run(spec: &RunSpec, from_smallest_scale: bool, out: Option<&Path>) -> Result<RunResult> {
    spec.validate()?;
    let data = RunData::new(spec)?;
    let (pre, pre_result) = pretrain(spec, &data, None, out, |_, _| Ok(()))?;
    if let Some(msg) = &pre_result.aborted {
        return Err(Error::Invalid(format!("pre-training aborted: {msg}")));
    }
    let (ft, ft_result) = finetune(spec, &data, Some(&pre), from_smallest_scale, out)?;
    let scores = evaluate_run(spec, &data, &ft, "")?;
    let checkpoint = ft_result.checkpoints.last().and_then(|c| c.path.clone());
    Ok(RunResult {
        name: spec.name.clone(),
        model: spec.model.clone(),
        params: count_params(ft.model.config()),
        data_size: spec.data_size(),
        seed: spec.seed,
        pretrain: pre_result,
        finetune: ft_result,
        scores,
        checkpoint,
    })
}
