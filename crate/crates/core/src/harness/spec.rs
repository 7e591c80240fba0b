use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::world::WorldConfig;
use crate::model::{Architecture, ModelConfig};
use crate::objectives::{CorruptionConfig, Objective};

/// Per-model training defaults: pre-training batch and learning rate, and
/// finetuning learning rates for checkpoints from the smallest data scale
/// and from larger ones (`None` where the smallest scale was never run).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyper {
    pub model: &'static str,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    pub finetune_lr_smallest: Option<f64>,
    pub finetune_lr: f64,
}

pub const HYPERS: [Hyper; 10] = [
    hyper("tiny", 32768, 2e-3, Some(2e-4), 2e-4),
    hyper("tiny12", 32768, 1e-3, Some(1e-4), 5e-5),
    hyper("small", 16384, 5e-4, Some(8e-5), 5e-5),
    hyper("small24", 8192, 2e-4, Some(5e-5), 3e-5),
    hyper("base", 8192, 2e-4, Some(3e-5), 1e-5),
    hyper("base24", 8192, 2e-4, Some(1e-5), 5e-6),
    hyper("large", 8192, 2e-4, Some(5e-6), 1e-6),
    hyper("huge", 8192, 1e-4, None, 8e-7),
    // desk-scale models for the toy world
    hyper("toy-s", 32, 2e-3, Some(5e-4), 5e-4),
    hyper("toy-m", 32, 1e-3, Some(5e-4), 5e-4),
];

const fn hyper(model: &'static str, pretrain_batch: usize, pretrain_lr: f64, smallest: Option<f64>, finetune_lr: f64) -> Hyper {
    Hyper {
        model,
        pretrain_batch,
        pretrain_lr,
        finetune_lr_smallest: smallest,
        finetune_lr,
    }
}

/// (name, layers, width, mlp, heads) of the toy models.
pub const TOY_PRESETS: [(&str, usize, usize, usize, usize); 2] = [("toy-s", 2, 32, 128, 2), ("toy-m", 2, 64, 256, 4)];

pub const PRETRAIN_EPOCHS: usize = 60;
pub const FINETUNE_EPOCHS: usize = 40;
pub const FINETUNE_BATCH: usize = 512;
pub const WEIGHT_DECAY: f64 = 0.05;

pub fn hyper_for(model: &str) -> Result<Hyper> {
    HYPERS
        .iter()
        .find(|h| h.model == model)
        .copied()
        .ok_or_else(|| Error::Config(format!("no training defaults for model `{model}`")))
}

/// Finetuning learning rate for a checkpoint pre-trained at the smallest
/// data scale of a ladder or at a larger one.
pub fn finetune_lr(model: &str, from_smallest_scale: bool) -> Result<f64> {
    let h = hyper_for(model)?;
    Ok(match (from_smallest_scale, h.finetune_lr_smallest) {
        (true, Some(lr)) => lr,
        _ => h.finetune_lr,
    })
}

/// Model configuration for `name` sized to `vocab_size` tokens and
/// `region_dim` features. Toy models use short position tables.
pub fn model_config(name: &str, vocab_size: usize, region_dim: usize, arch: Architecture) -> Result<ModelConfig> {
    let mut cfg = match TOY_PRESETS.iter().find(|p| p.0 == name) {
        Some(&(n, l, w, m, h)) => {
            let mut c = ModelConfig::custom(n, l, w, m, h);
            c.max_positions = 24;
            c.max_regions = 8;
            c
        }
        None => ModelConfig::preset(name)?,
    };
    cfg.vocab_size = vocab_size;
    cfg.region_dim = region_dim;
    cfg.architecture = arch;
    cfg.validate()?;
    Ok(cfg)
}

/// One training stage. Unset fields take the model's defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSpec {
    pub epochs: Option<usize>,
    /// Effective batch size.
    pub batch_size: Option<usize>,
    /// Samples per gradient-accumulation chunk; the update does not depend on it.
    pub micro_batch: Option<usize>,
    pub lr: Option<f64>,
    pub warmup_fraction: Option<f64>,
    /// Evenly spaced checkpoints (by step); the last one is the final state.
    pub checkpoints: Option<usize>,
}

/// Declarative run description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub name: String,
    pub model: String,
    pub objective: Objective,
    pub architecture: Architecture,
    /// Size of the full pre-training pool in records.
    pub pool_size: usize,
    /// Share of the pool used, in (0, 1]. Smaller shares are prefixes of larger ones.
    pub data_fraction: f64,
    /// Finetuning set size in records.
    pub finetune_size: usize,
    /// Evaluation images per domain.
    pub eval_per_domain: usize,
    /// Feature noise standard deviation.
    pub noise: f32,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    /// Token corruption of the masked objective.
    pub corruption: CorruptionConfig,
    pub pretrain: StageSpec,
    pub finetune: StageSpec,
    pub beam_size: usize,
    pub max_len: usize,
    pub seed: u64,
    pub world: WorldConfig,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            name: "run".into(),
            model: "toy-s".into(),
            objective: Objective::S2sMlm,
            architecture: Architecture::UnifiedEncoder,
            pool_size: 1000,
            data_fraction: 1.0,
            finetune_size: 500,
            eval_per_domain: 30,
            noise: 0.5,
            weight_decay: WEIGHT_DECAY,
            label_smoothing: crate::objectives::LABEL_SMOOTHING,
            corruption: CorruptionConfig::default(),
            pretrain: StageSpec::default(),
            finetune: StageSpec::default(),
            beam_size: crate::decoding::DEFAULT_BEAM,
            max_len: crate::decoding::DEFAULT_MAX_LEN,
            seed: 0,
            world: WorldConfig::default(),
        }
    }
}

/// A stage with every default filled in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedStage {
    pub epochs: usize,
    pub batch_size: usize,
    pub micro_batch: usize,
    pub lr: f64,
    pub warmup_fraction: f64,
    pub checkpoints: usize,
}

impl RunSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("run `{}`: {m}", self.name)));
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return bad("data_fraction must lie in (0, 1]");
        }
        if self.pool_size == 0 {
            return bad("pool_size must be positive");
        }
        if self.beam_size == 0 || self.max_len == 0 {
            return bad("beam_size and max_len must be positive");
        }
        for s in [&self.pretrain, &self.finetune] {
            if s.batch_size == Some(0) || s.micro_batch == Some(0) {
                return bad("batch sizes must be positive");
            }
        }
        self.corruption.validate()?;
        hyper_for(&self.model)?;
        Ok(())
    }

    /// Pre-training records actually used.
    pub fn data_size(&self) -> usize {
        ((self.pool_size as f64 * self.data_fraction).round() as usize).clamp(1, self.pool_size)
    }

    pub fn resolved_pretrain(&self) -> Result<ResolvedStage> {
        let h = hyper_for(&self.model)?;
        Ok(resolve(&self.pretrain, PRETRAIN_EPOCHS, h.pretrain_batch, h.pretrain_lr, 0.02))
    }

    /// `from_smallest_scale` picks the learning-rate column.
    pub fn resolved_finetune(&self, from_smallest_scale: bool) -> Result<ResolvedStage> {
        let lr = finetune_lr(&self.model, from_smallest_scale)?;
        Ok(resolve(&self.finetune, FINETUNE_EPOCHS, FINETUNE_BATCH, lr, 0.0))
    }
}

fn resolve(s: &StageSpec, epochs: usize, batch: usize, lr: f64, warmup: f64) -> ResolvedStage {
    let batch_size = s.batch_size.unwrap_or(batch);
    ResolvedStage {
        epochs: s.epochs.unwrap_or(epochs),
        batch_size,
        micro_batch: s.micro_batch.unwrap_or(batch_size.min(64)),
        lr: s.lr.unwrap_or(lr),
        warmup_fraction: s.warmup_fraction.unwrap_or(warmup),
        checkpoints: s.checkpoints.unwrap_or(1).max(1),
    }
}
