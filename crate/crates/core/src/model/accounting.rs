//! Parameter and compute accounting.

use crate::model::config::{Architecture, ModelConfig};
use crate::model::transformer::param_layout;

/// Exact trainable parameter count, output projection tied to the word
/// embedding (counted once).
pub fn count_params(config: &ModelConfig) -> u64 {
    param_layout(config)
        .iter()
        .map(|(_, shape, _)| shape.iter().product::<usize>() as u64)
        .sum()
}

/// Multiply-accumulates of one forward pass over `regions` region rows and
/// `text_len` text tokens, counting one FLOP per MAC.
///
/// Covers the region projection, every linear map, the attention score and
/// context products, and the MLM head applied at every input position
/// (the convention under which published per-model FLOP figures are quoted).
/// For the encoder-decoder variant the text is taken to be caption tokens.
pub fn estimate_flops(config: &ModelConfig, regions: usize, text_len: usize) -> u64 {
    match config.architecture {
        Architecture::UnifiedEncoder => estimate_flops_split(config, regions, text_len, 0),
        Architecture::EncoderDecoder => estimate_flops_split(config, regions, 0, text_len),
    }
}

/// As [`estimate_flops`] with tags and caption counted separately.
pub fn estimate_flops_split(config: &ModelConfig, regions: usize, tags: usize, caption: usize) -> u64 {
    let d = config.width as u64;
    let mlp = config.mlp_dim as u64;
    let v = config.vocab_size as u64;
    let n = regions as u64;
    let total = (regions + tags + caption) as u64;

    let region_proj = n * config.region_dim as u64 * d;
    let layer = |t: u64| 4 * t * d * d + 2 * t * t * d + 2 * t * d * mlp;
    let head = total * (d * d + d * v);

    let body = match config.architecture {
        Architecture::UnifiedEncoder => config.layers as u64 * layer(total),
        Architecture::EncoderDecoder => {
            let (enc, dec) = config.stack_depths();
            let ctx = (regions + tags) as u64;
            let l = caption as u64;
            let dec_layer = 4 * l * d * d + 2 * l * l * d // self-attention
                + 2 * l * d * d + 2 * ctx * d * d + 2 * l * ctx * d // cross-attention
                + 2 * l * d * mlp;
            enc as u64 * layer(ctx) + dec as u64 * dec_layer
        }
    };
    region_proj + body + head
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;

    fn degenerate() -> ModelConfig {
        let mut c = ModelConfig::custom("deg", 1, 2, 4, 1);
        c.vocab_size = 5;
        c.max_positions = 4;
        c.max_caption = 3;
        c.max_tags = 3;
        c
    }

    #[test]
    fn degenerate_hand_count() {
        // embeddings: word 5*2 + position 4*2 + segment 3*2 + norm 2*2 = 28
        // region: 2054*2 + 2 = 4110
        // layer: 4*(2*2+2) + norm 4 + (2*4+4) + (4*2+2) + norm 4 = 54
        // head: 2*2+2 + norm 4 + bias 5 = 15
        assert_eq!(count_params(&degenerate()), 28 + 4110 + 54 + 15);
    }

    #[test]
    fn degenerate_hand_flops() {
        // N=1, text=2, T=3, d=2, mlp=4, V=5
        // region 1*2054*2 = 4108
        // layer 4*3*4 + 2*9*2 + 2*3*2*4 = 48 + 36 + 48 = 132
        // head 3*(4 + 10) = 42
        assert_eq!(estimate_flops(&degenerate(), 1, 2), 4108 + 132 + 42);
    }
}
