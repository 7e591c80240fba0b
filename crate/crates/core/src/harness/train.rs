//! Training loop shared by pre-training and finetuning.
//!
//! The data stream is the concatenation of per-epoch permutations; step `t`
//! consumes stream positions `[tB, (t+1)B)`, so every update sees exactly the
//! effective batch `B` and samples seen is `B × steps`. Shuffles and
//! corruption draws are derived from the seed and the stream position, which
//! makes an update independent of thread count, of the micro-batch split and
//! of whether the run was resumed from a checkpoint.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::spec::ResolvedStage;
use crate::harness::world::{mix_seed, ToyRecord, ToyWorld};
use crate::model::{CaptionModel, ModelConfig, MultimodalBatch};
use crate::numerics::{adamw_step, lr_at, AdamWConfig, Checkpoint, Graph, OptimizerState, ScheduleKind, ScheduleSpec, Tensor};
use crate::objectives::{corrupt, lm_parts, s2s_caption, s2s_mlm_parts, CorruptionConfig, Objective};
use crate::tokenizer::SpecialIds;

/// A record turned into model inputs. `caption` excludes the end marker.
#[derive(Clone, Debug)]
pub struct Example {
    pub batch: MultimodalBatch<f32>,
    pub caption: Vec<u32>,
}

pub fn prepare(world: &ToyWorld, records: &[ToyRecord]) -> Result<Vec<Example>> {
    records
        .iter()
        .map(|r| {
            let (batch, caption) = world.batch(r)?;
            Ok(Example { batch, caption })
        })
        .collect()
}

/// Model plus optimizer; `optimizer.step` counts completed updates.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: CaptionModel<f32>,
    pub optimizer: OptimizerState<f32>,
}

impl TrainState {
    pub fn new(model: CaptionModel<f32>, weight_decay: f64) -> Self {
        let config = AdamWConfig {
            weight_decay,
            ..Default::default()
        };
        let optimizer = OptimizerState::new(model.params(), config);
        Self { model, optimizer }
    }

    pub fn fresh(config: ModelConfig, seed: u64, weight_decay: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x1417]));
        Ok(Self::new(CaptionModel::new(config, &mut rng)?, weight_decay))
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint<f32> {
        Checkpoint {
            params: self.model.params().clone(),
            optimizer: Some(self.optimizer.clone()),
            meta: serde_json::json!({ "model": self.model.config(), "run": meta }),
        }
    }

    /// Restores a checkpoint written by [`TrainState::to_checkpoint`].
    pub fn from_checkpoint(ck: Checkpoint<f32>) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(ck.meta["model"].clone())
            .map_err(|e| Error::Checkpoint(format!("missing model config: {e}")))?;
        let model = CaptionModel::from_params(config, ck.params)?;
        let optimizer = match ck.optimizer {
            Some(o) => o,
            None => OptimizerState::new(model.params(), AdamWConfig::default()),
        };
        Ok(Self { model, optimizer })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}

/// Loss statistics over some number of samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub loss_sum: f64,
    pub terms: usize,
    pub correct: usize,
}

impl LossStats {
    fn add(&mut self, o: &LossStats) {
        self.loss_sum += o.loss_sum;
        self.terms += o.terms;
        self.correct += o.correct;
    }

    pub fn mean_loss(&self) -> f64 {
        if self.terms == 0 {
            0.0
        } else {
            self.loss_sum / self.terms as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.terms == 0 {
            0.0
        } else {
            self.correct as f64 / self.terms as f64
        }
    }
}

/// How the prediction terms of one sample are formed.
#[derive(Clone, Copy, Debug)]
pub struct TermSpec {
    pub objective: Objective,
    pub smoothing: f64,
    pub corruption: CorruptionConfig,
    pub special: SpecialIds,
}

/// Summed loss and gradients of one sample; `None` gradients when it has no terms.
fn sample_terms(model: &CaptionModel<f32>, ex: &Example, seed: u64, spec: &TermSpec) -> Result<(Option<Vec<Tensor<f32>>>, LossStats)> {
    let cfg = model.config();
    let mut g = Graph::new();
    let parts = match spec.objective {
        Objective::S2sMlm => {
            let seq = s2s_caption(&ex.caption, &spec.special, cfg.max_caption);
            let batch = ex.batch.with_caption(seq.ids.clone());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = corrupt(&seq, &spec.corruption, cfg.vocab_size, spec.special.mask, &mut rng)?;
            s2s_mlm_parts(&mut g, model, &batch, &c, spec.smoothing)?
        }
        Objective::Lm => {
            let mut caption = ex.caption.clone();
            caption.truncate(cfg.max_caption.saturating_sub(1));
            lm_parts(&mut g, model, &ex.batch.with_caption(caption), &spec.special, spec.smoothing)?
        }
    };
    if parts.count == 0 {
        return Ok((None, LossStats::default()));
    }
    let stats = LossStats {
        loss_sum: f64::from(g.value(parts.sum).item()),
        terms: parts.count,
        correct: parts.correct(&g),
    };
    let grads = g.backward(parts.sum)?.param_grads(model.params());
    Ok((Some(grads), stats))
}

/// Gradient of the mean loss over every term of `examples`.
///
/// Samples are evaluated in chunks of `micro_batch` (in parallel within a
/// chunk) and their summed gradients are added in input order, then divided
/// by the global term count. The result does not depend on `micro_batch` or
/// on the number of threads.
pub fn batch_gradients(
    model: &CaptionModel<f32>,
    examples: &[&Example],
    seeds: &[u64],
    spec: &TermSpec,
    micro_batch: usize,
) -> Result<(Vec<Tensor<f32>>, LossStats)> {
    let mut acc: Vec<Tensor<f32>> = model.params().ids().map(|id| Tensor::zeros(model.params().get(id).shape())).collect();
    let mut stats = LossStats::default();
    let micro = micro_batch.max(1);
    for (chunk, chunk_seeds) in examples.chunks(micro).zip(seeds.chunks(micro)) {
        let results: Vec<_> = chunk
            .par_iter()
            .zip(chunk_seeds)
            .map(|(ex, &s)| sample_terms(model, ex, s, spec))
            .collect::<Result<_>>()?;
        for (grads, s) in results {
            stats.add(&s);
            if let Some(grads) = grads {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.add_assign(g);
                }
            }
        }
    }
    if stats.terms > 0 {
        let inv = 1.0 / stats.terms as f32;
        for a in acc.iter_mut() {
            a.data_mut().iter_mut().for_each(|x| *x *= inv);
        }
    }
    Ok((acc, stats))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub step: u64,
    pub samples_seen: u64,
    /// Mean training loss since the previous checkpoint.
    pub train_loss: f64,
    /// Masked-token (or next-token) accuracy since the previous checkpoint.
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub checkpoints: Vec<CheckpointRecord>,
    pub total_steps: u64,
    pub samples_seen: u64,
    /// Set when training stopped early on a non-finite loss or gradient.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub stage: ResolvedStage,
    pub kind: ScheduleKind,
    pub terms: TermSpec,
    pub seed: u64,
    /// Directory for checkpoint files; none are written when unset.
    pub out_dir: Option<PathBuf>,
    /// Stage label stored in checkpoint metadata and file names.
    pub label: String,
}

impl TrainConfig {
    pub fn total_steps(&self, n: usize) -> u64 {
        let b = self.stage.batch_size.max(1) as u64;
        (self.stage.epochs as u64 * n as u64).div_ceil(b)
    }

    /// Steps after which a checkpoint is taken.
    pub fn checkpoint_steps(&self, n: usize) -> Vec<u64> {
        let total = self.total_steps(n);
        let k = self.stage.checkpoints.max(1) as u64;
        let mut steps: Vec<u64> = (1..=k).map(|j| (total * j).div_ceil(k)).collect();
        steps.dedup();
        steps
    }
}

/// Epoch permutations, computed on demand.
struct Order {
    n: usize,
    seed: u64,
    cached: Option<(u64, Vec<usize>)>,
}

impl Order {
    fn index(&mut self, pos: u64) -> usize {
        let epoch = pos / self.n as u64;
        if self.cached.as_ref().is_none_or(|c| c.0 != epoch) {
            let mut perm: Vec<usize> = (0..self.n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[self.seed, 0xE90C, epoch])));
            self.cached = Some((epoch, perm));
        }
        self.cached.as_ref().expect("filled").1[(pos % self.n as u64) as usize]
    }
}

/// Runs (or resumes, from `state.optimizer.step`) one training stage.
/// `on_checkpoint` sees the state at every checkpoint.
pub fn train(
    state: &mut TrainState,
    data: &[Example],
    cfg: &TrainConfig,
    mut on_checkpoint: impl FnMut(&TrainState, &CheckpointRecord) -> Result<()>,
) -> Result<StageResult> {
    if data.is_empty() {
        return Err(Error::Invalid("training needs at least one example".into()));
    }
    let b = cfg.stage.batch_size.max(1);
    let total = cfg.total_steps(data.len());
    let milestones = cfg.checkpoint_steps(data.len());
    let schedule = ScheduleSpec {
        kind: cfg.kind,
        peak_lr: cfg.stage.lr,
        total_steps: total.max(1),
        warmup_fraction: cfg.stage.warmup_fraction,
    };
    let start = state.optimizer.step;
    if start > total {
        return Err(Error::StepOutOfRange { step: start, total });
    }
    let mut result = StageResult {
        total_steps: total,
        samples_seen: start * b as u64,
        ..Default::default()
    };
    let mut order = Order {
        n: data.len(),
        seed: cfg.seed,
        cached: None,
    };
    let mut window = LossStats::default();
    let emit = |state: &TrainState, window: &LossStats, result: &mut StageResult, on: &mut dyn FnMut(&TrainState, &CheckpointRecord) -> Result<()>| -> Result<()> {
        let step = state.optimizer.step;
        let path = match &cfg.out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let p = dir.join(format!("{}-{step:06}.capk", cfg.label));
                let meta = serde_json::json!({ "stage": cfg.label, "step": step, "samples_seen": step * b as u64, "seed": cfg.seed, "objective": cfg.terms.objective });
                state.to_checkpoint(meta).save(&p)?;
                Some(p)
            }
            None => None,
        };
        let rec = CheckpointRecord {
            step,
            samples_seen: step * b as u64,
            train_loss: window.mean_loss(),
            accuracy: window.accuracy(),
            path,
        };
        on(state, &rec)?;
        result.checkpoints.push(rec);
        Ok(())
    };
    if total == 0 {
        emit(state, &window, &mut result, &mut on_checkpoint)?;
        return Ok(result);
    }
    for t in start..total {
        let positions: Vec<u64> = (t * b as u64..(t + 1) * b as u64).collect();
        let batch: Vec<&Example> = positions.iter().map(|&p| &data[order.index(p)]).collect();
        let seeds: Vec<u64> = positions.iter().map(|&p| mix_seed(&[cfg.seed, 0xC0, p])).collect();
        let (grads, stats) = batch_gradients(&state.model, &batch, &seeds, &cfg.terms, cfg.stage.micro_batch)?;
        if !stats.loss_sum.is_finite() {
            result.aborted = Some(Error::Diverged { step: t, loss: stats.loss_sum }.to_string());
            break;
        }
        let lr = lr_at(t, &schedule)?;
        match adamw_step(state.model.params_mut(), &grads, &mut state.optimizer, lr) {
            Ok(()) => {}
            Err(e @ Error::NonFiniteGradient(_)) => {
                result.aborted = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
        window.add(&stats);
        result.samples_seen = (t + 1) * b as u64;
        if milestones.contains(&(t + 1)) {
            emit(state, &window, &mut result, &mut on_checkpoint)?;
            window = LossStats::default();
        }
    }
    Ok(result)
}
