use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::BERT_VOCAB_SIZE;

/// 2048 visual dimensions plus six scaled box values (x1, y1, x2, y2, w, h).
pub const REGION_FEATURE_DIM: usize = 2054;
pub const BOX_DIMS: usize = 6;
pub const MAX_POSITIONS: usize = 512;
pub const MAX_REGIONS: usize = 50;
pub const MAX_TAGS: usize = 15;
pub const MAX_CAPTION: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// Single encoder stack with the sequence-to-sequence attention mask.
    #[default]
    UnifiedEncoder,
    /// Encoder over regions and tags, decoder over the caption with
    /// cross-attention. Layers are split evenly between the two stacks.
    EncoderDecoder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub layers: usize,
    pub width: usize,
    pub mlp_dim: usize,
    pub heads: usize,
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    #[serde(default = "default_positions")]
    pub max_positions: usize,
    #[serde(default = "default_region_dim")]
    pub region_dim: usize,
    #[serde(default)]
    pub architecture: Architecture,
    #[serde(default = "default_max_regions")]
    pub max_regions: usize,
    #[serde(default = "default_max_tags")]
    pub max_tags: usize,
    #[serde(default = "default_max_caption")]
    pub max_caption: usize,
}

fn default_vocab() -> usize {
    BERT_VOCAB_SIZE
}
fn default_positions() -> usize {
    MAX_POSITIONS
}
fn default_region_dim() -> usize {
    REGION_FEATURE_DIM
}
fn default_max_regions() -> usize {
    MAX_REGIONS
}
fn default_max_tags() -> usize {
    MAX_TAGS
}
fn default_max_caption() -> usize {
    MAX_CAPTION
}

/// (name, layers, width, mlp, heads)
pub const PRESETS: [(&str, usize, usize, usize, usize); 8] = [
    ("tiny", 6, 256, 1024, 4),
    ("tiny12", 12, 256, 1024, 4),
    ("small", 12, 384, 1536, 6),
    ("small24", 24, 384, 1536, 6),
    ("base", 12, 768, 3072, 12),
    ("base24", 24, 768, 3072, 12),
    ("large", 24, 1024, 4096, 16),
    ("huge", 32, 1280, 5120, 16),
];

impl ModelConfig {
    pub fn custom(name: &str, layers: usize, width: usize, mlp_dim: usize, heads: usize) -> Self {
        Self {
            name: name.to_string(),
            layers,
            width,
            mlp_dim,
            heads,
            vocab_size: BERT_VOCAB_SIZE,
            max_positions: MAX_POSITIONS,
            region_dim: REGION_FEATURE_DIM,
            architecture: Architecture::UnifiedEncoder,
            max_regions: MAX_REGIONS,
            max_tags: MAX_TAGS,
            max_caption: MAX_CAPTION,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        PRESETS
            .iter()
            .find(|p| p.0 == name)
            .map(|&(n, l, w, m, h)| Self::custom(n, l, w, m, h))
            .ok_or_else(|| Error::Config(format!("unknown model preset `{name}`")))
    }

    pub fn presets() -> Vec<Self> {
        PRESETS
            .iter()
            .map(|&(n, l, w, m, h)| Self::custom(n, l, w, m, h))
            .collect()
    }

    pub fn with_vocab(mut self, vocab_size: usize) -> Self {
        self.vocab_size = vocab_size;
        self
    }

    pub fn with_architecture(mut self, arch: Architecture) -> Self {
        self.architecture = arch;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    /// Layers in the (encoder, decoder) stacks.
    pub fn stack_depths(&self) -> (usize, usize) {
        match self.architecture {
            Architecture::UnifiedEncoder => (self.layers, 0),
            Architecture::EncoderDecoder => (self.layers / 2, self.layers / 2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.width == 0 || self.mlp_dim == 0 || self.heads == 0 {
            return bad(format!("`{}`: dimensions must be positive", self.name));
        }
        if self.width % self.heads != 0 {
            return bad(format!(
                "`{}`: width {} not divisible by {} heads",
                self.name, self.width, self.heads
            ));
        }
        if self.architecture == Architecture::EncoderDecoder && self.layers % 2 != 0 {
            return bad(format!(
                "`{}`: encoder-decoder needs an even layer count, got {}",
                self.name, self.layers
            ));
        }
        if self.vocab_size == 0 || self.region_dim == 0 {
            return bad(format!("`{}`: empty vocabulary or region dim", self.name));
        }
        let text = self.max_caption.max(self.max_tags) + 1;
        if self.max_positions < text {
            return bad(format!(
                "`{}`: {} positions cannot hold {} text tokens",
                self.name, self.max_positions, text
            ));
        }
        Ok(())
    }
}
