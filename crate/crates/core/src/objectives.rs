//! Caption corruption and the two training losses.
//!
//! Both losses use label-smoothed cross-entropy and are mean-reduced over
//! their prediction terms.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{CaptionModel, MultimodalBatch};
use crate::numerics::{Graph, Tensor, Var};
use crate::scalar::Scalar;
use crate::tokenizer::{SpecialIds, TokenSeq};

pub const LABEL_SMOOTHING: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    #[default]
    S2sMlm,
    Lm,
}

/// Selection rate and the replacement split for selected tokens.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionConfig {
    pub rate: f64,
    pub mask_prob: f64,
    pub random_prob: f64,
    pub keep_prob: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            rate: 0.15,
            mask_prob: 0.8,
            random_prob: 0.1,
            keep_prob: 0.1,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.rate, self.mask_prob, self.random_prob, self.keep_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid("corruption probabilities must lie in [0, 1]"));
        }
        let total = self.mask_prob + self.random_prob + self.keep_prob;
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("replacement split sums to {total}, not 1")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorruptionResult {
    pub corrupted: Vec<u32>,
    /// Selected positions, ascending.
    pub positions: Vec<usize>,
    /// Original ids at `positions`.
    pub originals: Vec<u32>,
}

impl CorruptionResult {
    pub fn identity(tokens: &[u32]) -> Self {
        Self {
            corrupted: tokens.to_vec(),
            positions: Vec::new(),
            originals: Vec::new(),
        }
    }
}

/// BERT-style corruption. Tokens flagged special are never selected.
pub fn corrupt<R: Rng + ?Sized>(
    tokens: &TokenSeq,
    cfg: &CorruptionConfig,
    vocab_size: usize,
    mask_id: u32,
    rng: &mut R,
) -> Result<CorruptionResult> {
    cfg.validate()?;
    let mut out = CorruptionResult::identity(&tokens.ids);
    for (k, (&id, &special)) in tokens.ids.iter().zip(&tokens.is_special).enumerate() {
        if special || rng.random::<f64>() >= cfg.rate {
            continue;
        }
        out.positions.push(k);
        out.originals.push(id);
        let r: f64 = rng.random();
        if r < cfg.mask_prob {
            out.corrupted[k] = mask_id;
        } else if r < cfg.mask_prob + cfg.random_prob {
            out.corrupted[k] = rng.random_range(0..vocab_size as u32);
        }
    }
    Ok(out)
}

/// Caption as the s2s-MLM model sees it: tokens followed by the end marker,
/// which stays eligible for corruption so the model learns to stop.
pub fn s2s_caption(tokens: &[u32], special: &SpecialIds, max_len: usize) -> TokenSeq {
    let mut seq = TokenSeq::default();
    for &t in tokens.iter().take(max_len.saturating_sub(1)) {
        seq.push(t, special.all().contains(&t));
    }
    seq.push(special.eos(), false);
    seq
}

/// Summed loss over the prediction terms plus what is needed for accuracy.
#[derive(Debug)]
pub struct LossParts {
    /// Scalar sum of cross-entropy terms (a constant zero when there are none).
    pub sum: Var,
    pub count: usize,
    /// `count × vocab` logits, or `None` without terms.
    pub logits: Option<Var>,
    pub targets: Vec<u32>,
}

impl LossParts {
    /// Correct argmax predictions among the terms.
    pub fn correct<T: Scalar>(&self, g: &Graph<T>) -> usize {
        let Some(l) = self.logits else { return 0 };
        let lv = g.value(l);
        self.targets
            .iter()
            .enumerate()
            .filter(|(i, &t)| argmax(lv.row(*i)) == t as usize)
            .count()
    }
}

pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn zero<T: Scalar>(g: &mut Graph<T>) -> Var {
    g.constant(Tensor::scalar(T::zero()))
}

/// Sequence-to-sequence MLM terms: the model reads the corrupted caption
/// under the seq2seq mask and predicts the original token at every selected
/// position, conditioned on regions, tags and corrupted tokens up to and
/// including that position.
pub fn s2s_mlm_parts<T: Scalar>(
    g: &mut Graph<T>,
    model: &CaptionModel<T>,
    batch: &MultimodalBatch<T>,
    corruption: &CorruptionResult,
    smoothing: f64,
) -> Result<LossParts> {
    let Some(&last) = corruption.positions.last() else {
        let sum = zero(g);
        return Ok(LossParts {
            sum,
            count: 0,
            logits: None,
            targets: Vec::new(),
        });
    };
    if corruption.corrupted.len() != batch.caption_len() {
        return Err(invalid("corruption does not match the caption length"));
    }
    // later caption positions cannot influence any term
    let input = batch.with_caption(corruption.corrupted[..=last].to_vec());
    let h = model.encode(g, &input)?;
    let rows: Vec<usize> = corruption.positions.iter().map(|&k| input.caption_row(k)).collect();
    let logits = model.logits_at(g, h, &rows)?;
    let targets: Vec<usize> = corruption.originals.iter().map(|&t| t as usize).collect();
    let sum = g.cross_entropy(logits, &targets, T::lit(smoothing))?;
    Ok(LossParts {
        sum,
        count: rows.len(),
        logits: Some(logits),
        targets: corruption.originals.clone(),
    })
}

/// Mean-reduced s2s-MLM loss; zero (with zero gradients) when nothing is masked.
pub fn s2s_mlm_loss<T: Scalar>(
    g: &mut Graph<T>,
    model: &CaptionModel<T>,
    batch: &MultimodalBatch<T>,
    corruption: &CorruptionResult,
    smoothing: f64,
) -> Result<Var> {
    let parts = s2s_mlm_parts(g, model, batch, corruption, smoothing)?;
    Ok(mean(g, &parts))
}

/// Left-to-right LM terms. The model reads `[CLS] w1 .. wL` under the causal
/// caption mask; row 0 predicts `w1`, row k predicts `w(k+1)` and row L
/// predicts the end marker.
pub fn lm_parts<T: Scalar>(
    g: &mut Graph<T>,
    model: &CaptionModel<T>,
    batch: &MultimodalBatch<T>,
    special: &SpecialIds,
    smoothing: f64,
) -> Result<LossParts> {
    if batch.caption_len() == 0 {
        let sum = zero(g);
        return Ok(LossParts {
            sum,
            count: 0,
            logits: None,
            targets: Vec::new(),
        });
    }
    let mut input_ids = Vec::with_capacity(batch.caption_len() + 1);
    input_ids.push(special.cls);
    input_ids.extend_from_slice(&batch.caption);
    let mut targets = batch.caption.clone();
    targets.push(special.eos());
    let input = batch.with_caption(input_ids);
    let h = model.encode(g, &input)?;
    let rows: Vec<usize> = (0..targets.len()).map(|k| input.caption_row(k)).collect();
    let logits = model.logits_at(g, h, &rows)?;
    let t: Vec<usize> = targets.iter().map(|&x| x as usize).collect();
    let sum = g.cross_entropy(logits, &t, T::lit(smoothing))?;
    Ok(LossParts {
        sum,
        count: rows.len(),
        logits: Some(logits),
        targets,
    })
}

pub fn lm_loss<T: Scalar>(
    g: &mut Graph<T>,
    model: &CaptionModel<T>,
    batch: &MultimodalBatch<T>,
    special: &SpecialIds,
    smoothing: f64,
) -> Result<Var> {
    let parts = lm_parts(g, model, batch, special, smoothing)?;
    Ok(mean(g, &parts))
}

fn mean<T: Scalar>(g: &mut Graph<T>, parts: &LossParts) -> Var {
    if parts.count == 0 {
        parts.sum
    } else {
        g.scale(parts.sum, T::one() / T::lit(parts.count as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::Vocabulary;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(ids: &[u32]) -> TokenSeq {
        TokenSeq {
            ids: ids.to_vec(),
            is_special: vec![false; ids.len()],
        }
    }

    #[test]
    fn rate_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = CorruptionConfig {
            rate: 0.0,
            ..Default::default()
        };
        let r = corrupt(&seq(&[5, 6, 7]), &cfg, 100, 4, &mut rng).unwrap();
        assert!(r.positions.is_empty());
        assert_eq!(r.corrupted, vec![5, 6, 7]);
    }

    #[test]
    fn rate_one_all_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = CorruptionConfig {
            rate: 1.0,
            mask_prob: 1.0,
            random_prob: 0.0,
            keep_prob: 0.0,
        };
        let r = corrupt(&seq(&[5, 6, 7, 8]), &cfg, 100, 4, &mut rng).unwrap();
        assert_eq!(r.positions, vec![0, 1, 2, 3]);
        assert_eq!(r.corrupted, vec![4; 4]);
        assert_eq!(r.originals, vec![5, 6, 7, 8]);
    }

    #[test]
    fn specials_never_selected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = CorruptionConfig {
            rate: 1.0,
            ..Default::default()
        };
        let s = TokenSeq {
            ids: vec![2, 9, 3],
            is_special: vec![true, false, true],
        };
        let r = corrupt(&s, &cfg, 100, 4, &mut rng).unwrap();
        assert_eq!(r.positions, vec![1]);
    }

    #[test]
    fn same_seed_same_result() {
        let cfg = CorruptionConfig::default();
        let s = seq(&(10..60).collect::<Vec<_>>());
        let a = corrupt(&s, &cfg, 100, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = corrupt(&s, &cfg, 100, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_split_rejected() {
        let cfg = CorruptionConfig {
            mask_prob: 0.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn s2s_caption_appends_eligible_eos() {
        let v = Vocabulary::bundled_test();
        let sp = v.special();
        let s = s2s_caption(&[10, 11], &sp, 20);
        assert_eq!(s.ids, vec![10, 11, sp.sep]);
        assert_eq!(s.is_special, vec![false, false, false]);
        assert_eq!(s2s_caption(&[10; 30], &sp, 20).len(), 20);
    }
}
