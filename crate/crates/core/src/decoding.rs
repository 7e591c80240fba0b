//! Autoregressive caption generation.
//!
//! A caption model generates by repeatedly appending `[MASK]` after the
//! finalized tokens and recovering it. Keys and values of finalized rows are
//! cached per layer, so each step only runs the new row through the stack.
//! LM-trained models are decoded in next-token mode instead, where the state
//! of the last finalized row predicts the following token.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{Architecture, CaptionModel, MultimodalBatch};
use crate::numerics::tensor::log_softmax_row;
use crate::numerics::{Graph, Tensor, Var};
use crate::objectives::Objective;
use crate::scalar::Scalar;
use crate::tokenizer::{detokenize, tokenize, SpecialIds, TokenSeq, Vocabulary};

pub const DEFAULT_BEAM: usize = 5;
pub const DEFAULT_MAX_LEN: usize = 20;
pub const DEFAULT_PROMPT: &str = "a picture of";

/// How the next-token distribution is read off the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeMode {
    /// Recover a `[MASK]` appended after the finalized tokens.
    #[default]
    MaskPredict,
    /// Read the prediction off the last finalized row; `[CLS]` opens the caption.
    NextToken,
}

impl From<Objective> for DecodeMode {
    fn from(o: Objective) -> Self {
        match o {
            Objective::S2sMlm => DecodeMode::MaskPredict,
            Objective::Lm => DecodeMode::NextToken,
        }
    }
}

/// Incremental access to a next-token distribution.
pub trait StepDecoder {
    type State: Clone;

    fn init(&self) -> Result<Self::State>;
    /// Log-probabilities over the vocabulary for the next token.
    fn log_probs(&self, state: &Self::State) -> Result<Vec<f64>>;
    /// Finalizes `token` as the next caption token.
    fn commit(&self, state: &mut Self::State, token: u32) -> Result<()>;
    fn eos(&self) -> u32;
}

fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<f64> {
    let mut out = vec![T::zero(); logits.len()];
    log_softmax_row(logits, &mut out);
    out.into_iter().map(|v| v.as_f64()).collect()
}

/// Keys and values of one layer, one row per cached position.
#[derive(Clone, Debug)]
struct KvRows<T> {
    k: Vec<T>,
    v: Vec<T>,
}

impl<T> KvRows<T> {
    fn empty() -> Self {
        Self {
            k: Vec::new(),
            v: Vec::new(),
        }
    }
}

/// Per-sequence decoding state.
#[derive(Clone, Debug)]
pub struct DecodeState<T> {
    /// Region/tag keys and values per layer (unified model) or cross-attention
    /// keys and values per decoder layer. Fixed once built.
    context: Arc<Vec<KvRows<T>>>,
    /// Finalized caption rows per layer.
    caption: Vec<KvRows<T>>,
    tokens: Vec<u32>,
    /// Caption positions in use (includes the opening `[CLS]` in next-token mode).
    positions: usize,
    last_hidden: Option<Tensor<T>>,
}

impl<T> DecodeState<T> {
    /// Finalized caption tokens (without the opening `[CLS]`).
    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    /// Current step: number of finalized tokens.
    pub fn step(&self) -> usize {
        self.tokens.len()
    }

    pub fn cached_caption_rows(&self) -> usize {
        self.positions
    }
}

/// Cached decoder bound to one model and one image.
pub struct CachedDecoder<'a, T> {
    model: &'a CaptionModel<T>,
    batch: &'a MultimodalBatch<T>,
    special: SpecialIds,
    mode: DecodeMode,
}

impl<'a, T: Scalar> CachedDecoder<'a, T> {
    pub fn new(
        model: &'a CaptionModel<T>,
        batch: &'a MultimodalBatch<T>,
        special: SpecialIds,
        mode: DecodeMode,
    ) -> Result<Self> {
        let probe = batch.with_caption(Vec::new());
        if probe.num_regions() + probe.num_tags() > 0 {
            probe.validate(model.config())?;
        }
        if model.config().architecture == Architecture::EncoderDecoder
            && batch.num_regions() + batch.num_tags() == 0
        {
            return Err(invalid("encoder-decoder needs at least one region or tag"));
        }
        Ok(Self {
            model,
            batch,
            special,
            mode,
        })
    }

    fn layers(&self) -> &[crate::model::transformer::LayerIds] {
        match self.model.config().architecture {
            Architecture::UnifiedEncoder => &self.model.ids.enc,
            Architecture::EncoderDecoder => &self.model.ids.dec,
        }
    }

    /// Runs one caption row through the stack. Returns its final hidden state
    /// and its per-layer key/value rows.
    fn run_row(&self, state: &DecodeState<T>, token: u32, position: usize) -> Result<(Tensor<T>, Vec<KvRows<T>>)> {
        let model = self.model;
        let width = model.config().width;
        let unified = model.config().architecture == Architecture::UnifiedEncoder;
        let mut g = Graph::new();
        let mut x = model.embed_caption(&mut g, &[token], position)?;
        let mut rows = Vec::with_capacity(self.layers().len());
        for (li, layer) in self.layers().iter().enumerate() {
            let q = model.linear(&mut g, x, layer.attn.q)?;
            let k = model.linear(&mut g, x, layer.attn.k)?;
            let v = model.linear(&mut g, x, layer.attn.v)?;
            let mut prefix_k = Vec::new();
            let mut prefix_v = Vec::new();
            if unified {
                prefix_k.extend_from_slice(&state.context[li].k);
                prefix_v.extend_from_slice(&state.context[li].v);
            }
            prefix_k.extend_from_slice(&state.caption[li].k);
            prefix_v.extend_from_slice(&state.caption[li].v);
            let keys = with_prefix(&mut g, prefix_k, k, width)?;
            let values = with_prefix(&mut g, prefix_v, v, width)?;
            rows.push(KvRows {
                k: g.value(k).data().to_vec(),
                v: g.value(v).data().to_vec(),
            });
            let mut h = model.attention_tail(&mut g, x, q, keys, values, layer.attn, None)?;
            if let Some(cross) = layer.cross {
                let ctx = &state.context[li];
                let n = ctx.k.len() / width;
                let ck = g.constant(Tensor::matrix(n, width, ctx.k.clone())?);
                let cv = g.constant(Tensor::matrix(n, width, ctx.v.clone())?);
                let cq = model.linear(&mut g, h, cross.q)?;
                h = model.attention_tail(&mut g, h, cq, ck, cv, cross, None)?;
            }
            x = model.ffn_block(&mut g, h, layer)?;
        }
        Ok((g.value(x).clone(), rows))
    }

    fn build_context(&self) -> Result<Vec<KvRows<T>>> {
        let model = self.model;
        let mut g = Graph::new();
        match model.config().architecture {
            Architecture::UnifiedEncoder => {
                if self.batch.num_regions() + self.batch.num_tags() == 0 {
                    return Ok(vec![KvRows::empty(); model.ids.enc.len()]);
                }
                let mut x = model.embed_context(&mut g, self.batch)?;
                let mut out = Vec::with_capacity(model.ids.enc.len());
                for layer in &model.ids.enc {
                    let q = model.linear(&mut g, x, layer.attn.q)?;
                    let k = model.linear(&mut g, x, layer.attn.k)?;
                    let v = model.linear(&mut g, x, layer.attn.v)?;
                    out.push(KvRows {
                        k: g.value(k).data().to_vec(),
                        v: g.value(v).data().to_vec(),
                    });
                    let h = model.attention_tail(&mut g, x, q, k, v, layer.attn, None)?;
                    x = model.ffn_block(&mut g, h, layer)?;
                }
                Ok(out)
            }
            Architecture::EncoderDecoder => {
                let e = model.run_encoder_stack(&mut g, self.batch)?;
                model
                    .ids
                    .dec
                    .iter()
                    .map(|layer| {
                        let cross = layer.cross.expect("decoder layer has cross-attention");
                        let k = model.linear(&mut g, e, cross.k)?;
                        let v = model.linear(&mut g, e, cross.v)?;
                        Ok(KvRows {
                            k: g.value(k).data().to_vec(),
                            v: g.value(v).data().to_vec(),
                        })
                    })
                    .collect()
            }
        }
    }

    fn check_position(&self, position: usize) -> Result<()> {
        let cfg = self.model.config();
        if position >= cfg.max_positions {
            return Err(invalid(format!(
                "decode step at position {position} beyond {} positions",
                cfg.max_positions
            )));
        }
        Ok(())
    }

    /// Vocabulary logits for the next token.
    pub fn step_logits(&self, state: &DecodeState<T>) -> Result<Tensor<T>> {
        let hidden = match self.mode {
            DecodeMode::MaskPredict => {
                self.check_position(state.positions)?;
                self.run_row(state, self.special.mask, state.positions)?.0
            }
            DecodeMode::NextToken => state
                .last_hidden
                .clone()
                .ok_or_else(|| invalid("next-token state has no finalized row"))?,
        };
        let mut g = Graph::new();
        let h = g.constant(hidden);
        let l = self.model.head(&mut g, h)?;
        Ok(g.value(l).clone())
    }

    fn push_row(&self, state: &mut DecodeState<T>, token: u32) -> Result<()> {
        self.check_position(state.positions)?;
        let (hidden, rows) = self.run_row(state, token, state.positions)?;
        for (cache, row) in state.caption.iter_mut().zip(rows) {
            cache.k.extend(row.k);
            cache.v.extend(row.v);
        }
        state.positions += 1;
        if self.mode == DecodeMode::NextToken {
            state.last_hidden = Some(hidden);
        }
        Ok(())
    }
}

fn with_prefix<T: Scalar>(g: &mut Graph<T>, prefix: Vec<T>, row: Var, width: usize) -> Result<Var> {
    if prefix.is_empty() {
        return Ok(row);
    }
    let n = prefix.len() / width;
    let p = g.constant(Tensor::matrix(n, width, prefix)?);
    g.concat_rows(&[p, row])
}

impl<T: Scalar> StepDecoder for CachedDecoder<'_, T> {
    type State = DecodeState<T>;

    fn init(&self) -> Result<DecodeState<T>> {
        let layers = self.layers().len();
        let mut state = DecodeState {
            context: Arc::new(self.build_context()?),
            caption: vec![KvRows::empty(); layers],
            tokens: Vec::new(),
            positions: 0,
            last_hidden: None,
        };
        if self.mode == DecodeMode::NextToken {
            self.push_row(&mut state, self.special.cls)?;
        }
        Ok(state)
    }

    fn log_probs(&self, state: &DecodeState<T>) -> Result<Vec<f64>> {
        Ok(log_softmax(self.step_logits(state)?.data()))
    }

    fn commit(&self, state: &mut DecodeState<T>, token: u32) -> Result<()> {
        if token as usize >= self.model.config().vocab_size {
            return Err(crate::Error::TokenOutOfRange {
                id: token,
                size: self.model.config().vocab_size,
            });
        }
        self.push_row(state, token)?;
        state.tokens.push(token);
        Ok(())
    }

    fn eos(&self) -> u32 {
        self.special.eos()
    }
}

/// Decoder that recomputes the full forward pass at every step.
pub struct FullDecoder<'a, T> {
    model: &'a CaptionModel<T>,
    batch: &'a MultimodalBatch<T>,
    special: SpecialIds,
    mode: DecodeMode,
}

impl<'a, T: Scalar> FullDecoder<'a, T> {
    pub fn new(
        model: &'a CaptionModel<T>,
        batch: &'a MultimodalBatch<T>,
        special: SpecialIds,
        mode: DecodeMode,
    ) -> Self {
        Self {
            model,
            batch,
            special,
            mode,
        }
    }

    pub fn step_logits(&self, tokens: &[u32]) -> Result<Tensor<T>> {
        let mut caption = Vec::with_capacity(tokens.len() + 1);
        match self.mode {
            DecodeMode::MaskPredict => {
                caption.extend_from_slice(tokens);
                caption.push(self.special.mask);
            }
            DecodeMode::NextToken => {
                caption.push(self.special.cls);
                caption.extend_from_slice(tokens);
            }
        }
        let input = self.batch.with_caption(caption);
        let mut g = Graph::new();
        let h = self.model.encode(&mut g, &input)?;
        let l = self
            .model
            .logits_at(&mut g, h, &[input.caption_row(input.caption_len() - 1)])?;
        Ok(g.value(l).clone())
    }
}

impl<T: Scalar> StepDecoder for FullDecoder<'_, T> {
    type State = Vec<u32>;

    fn init(&self) -> Result<Vec<u32>> {
        Ok(Vec::new())
    }

    fn log_probs(&self, state: &Vec<u32>) -> Result<Vec<f64>> {
        Ok(log_softmax(self.step_logits(state)?.data()))
    }

    fn commit(&self, state: &mut Vec<u32>, token: u32) -> Result<()> {
        state.push(token);
        Ok(())
    }

    fn eos(&self) -> u32 {
        self.special.eos()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Maximum tokens per hypothesis, end marker included.
    pub max_len: usize,
    /// `⟨EOS⟩` is suppressed until this many tokens exist.
    pub min_len: usize,
    /// Ranks finished hypotheses by `score / len^alpha` when set.
    pub length_penalty: Option<f64>,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: DEFAULT_BEAM,
            max_len: DEFAULT_MAX_LEN,
            min_len: 0,
            length_penalty: None,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.max_len == 0 {
            return Err(invalid("beam size and max length must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Generated ids, ending with `⟨EOS⟩` when finished by it.
    pub tokens: Vec<u32>,
    /// Cumulative log-probability.
    pub score: f64,
    pub finished: bool,
    /// Log-probability of each chosen token.
    pub step_scores: Vec<f64>,
}

impl Hypothesis {
    /// Tokens without the trailing end marker.
    pub fn caption(&self, eos: u32) -> &[u32] {
        match self.tokens.split_last() {
            Some((&last, rest)) if last == eos => rest,
            _ => &self.tokens,
        }
    }

    fn rank_score(&self, penalty: Option<f64>) -> f64 {
        match penalty {
            Some(a) if !self.tokens.is_empty() => self.score / (self.tokens.len() as f64).powf(a),
            _ => self.score,
        }
    }
}

struct Live<S> {
    state: S,
    hyp: Hypothesis,
}

/// Candidate order: higher score, then lower token id, then earlier beam.
fn better(a: (f64, u32, usize), b: (f64, u32, usize)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
}

fn suppress_eos(lp: &mut [f64], eos: u32, len: usize, cfg: &BeamConfig) {
    if len < cfg.min_len {
        if let Some(v) = lp.get_mut(eos as usize) {
            *v = f64::NEG_INFINITY;
        }
    }
}

/// Beam search from the decoder's initial state.
pub fn generate<D: StepDecoder>(decoder: &D, cfg: &BeamConfig) -> Result<Vec<Hypothesis>> {
    let state = decoder.init()?;
    beam_from(decoder, state, cfg)
}

/// Beam search continuing from an already-conditioned state. Hypotheses are
/// returned best first.
pub fn beam_from<D: StepDecoder>(decoder: &D, start: D::State, cfg: &BeamConfig) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    let eos = decoder.eos();
    let mut live = vec![Live {
        state: start,
        hyp: Hypothesis {
            tokens: Vec::new(),
            score: 0.0,
            finished: false,
            step_scores: Vec::new(),
        },
    }];
    let mut done: Vec<Hypothesis> = Vec::new();
    while !live.is_empty() {
        let mut cands: Vec<(f64, u32, usize, f64)> = Vec::new();
        for (bi, l) in live.iter().enumerate() {
            let mut lp = decoder.log_probs(&l.state)?;
            suppress_eos(&mut lp, eos, l.hyp.tokens.len(), cfg);
            let mut local: Vec<(f64, u32, usize, f64)> = lp
                .iter()
                .enumerate()
                .map(|(t, &p)| (l.hyp.score + p, t as u32, bi, p))
                .collect();
            let k = cfg.beam_size.min(local.len());
            if k < local.len() {
                local.select_nth_unstable_by(k - 1, |a, b| better((a.0, a.1, a.2), (b.0, b.1, b.2)));
                local.truncate(k);
            }
            cands.extend(local);
        }
        cands.sort_by(|a, b| better((a.0, a.1, a.2), (b.0, b.1, b.2)));
        cands.truncate(cfg.beam_size);
        let mut next = Vec::with_capacity(cands.len());
        for (score, tok, bi, p) in cands {
            if score == f64::NEG_INFINITY {
                continue;
            }
            let parent = &live[bi];
            let mut hyp = parent.hyp.clone();
            hyp.tokens.push(tok);
            hyp.step_scores.push(p);
            hyp.score = score;
            if tok == eos || hyp.tokens.len() >= cfg.max_len {
                hyp.finished = true;
                done.push(hyp);
            } else {
                let mut state = parent.state.clone();
                decoder.commit(&mut state, tok)?;
                next.push(Live { state, hyp });
            }
        }
        live = next;
    }
    let penalty = cfg.length_penalty;
    // stable sort keeps discovery order among equal scores
    done.sort_by(|a, b| b.rank_score(penalty).total_cmp(&a.rank_score(penalty)));
    done.truncate(cfg.beam_size);
    Ok(done)
}

/// Argmax decoding, lower token id winning ties.
pub fn greedy<D: StepDecoder>(decoder: &D, cfg: &BeamConfig) -> Result<Hypothesis> {
    cfg.validate()?;
    let eos = decoder.eos();
    let mut state = decoder.init()?;
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        finished: false,
        step_scores: Vec::new(),
    };
    loop {
        let mut lp = decoder.log_probs(&state)?;
        suppress_eos(&mut lp, eos, hyp.tokens.len(), cfg);
        let mut best = 0;
        for (t, &p) in lp.iter().enumerate() {
            if p > lp[best] {
                best = t;
            }
        }
        let tok = best as u32;
        hyp.tokens.push(tok);
        hyp.step_scores.push(lp[best]);
        hyp.score += lp[best];
        if tok == eos || hyp.tokens.len() >= cfg.max_len {
            hyp.finished = true;
            return Ok(hyp);
        }
        decoder.commit(&mut state, tok)?;
    }
}

/// Beam search with `prompt` finalized first. The prompt counts toward the
/// length budget and is not part of the returned hypotheses.
pub fn generate_with_prompt<D: StepDecoder>(decoder: &D, prompt: &[u32], cfg: &BeamConfig) -> Result<Vec<Hypothesis>> {
    if prompt.len() > cfg.max_len {
        return Err(invalid(format!(
            "prompt of {} tokens exceeds max length {}",
            prompt.len(),
            cfg.max_len
        )));
    }
    if prompt.len() == cfg.max_len {
        return Ok(vec![Hypothesis {
            tokens: Vec::new(),
            score: 0.0,
            finished: true,
            step_scores: Vec::new(),
        }]);
    }
    let mut state = decoder.init()?;
    for &t in prompt {
        decoder.commit(&mut state, t)?;
    }
    let budget = BeamConfig {
        max_len: cfg.max_len - prompt.len(),
        ..*cfg
    };
    beam_from(decoder, state, &budget)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    pub text: String,
    pub score: f64,
    pub tokens: Vec<u32>,
}

fn to_caption(h: &Hypothesis, vocab: &Vocabulary) -> Result<Caption> {
    let ids = h.caption(vocab.special().eos()).to_vec();
    let text = detokenize(&TokenSeq::from_ids(ids.clone(), vocab)?, vocab)?;
    Ok(Caption {
        text,
        score: h.score,
        tokens: ids,
    })
}

/// Best caption for one image with the cached decoder.
pub fn caption_image<T: Scalar>(
    model: &CaptionModel<T>,
    batch: &MultimodalBatch<T>,
    vocab: &Vocabulary,
    mode: DecodeMode,
    cfg: &BeamConfig,
) -> Result<Caption> {
    zero_shot_caption(model, batch, vocab, mode, "", cfg)
}

/// Caption conditioned on a text prompt (e.g. "a picture of"); the returned
/// text excludes the prompt.
pub fn zero_shot_caption<T: Scalar>(
    model: &CaptionModel<T>,
    batch: &MultimodalBatch<T>,
    vocab: &Vocabulary,
    mode: DecodeMode,
    prompt: &str,
    cfg: &BeamConfig,
) -> Result<Caption> {
    let decoder = CachedDecoder::new(model, batch, vocab.special(), mode)?;
    let prompt = tokenize(prompt, vocab).ids;
    let hyps = generate_with_prompt(&decoder, &prompt, cfg)?;
    to_caption(&hyps[0], vocab)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Table-driven decoder: the distribution depends only on the prefix.
    struct Stub {
        table: Vec<(Vec<u32>, Vec<f64>)>,
        eos: u32,
        vocab: usize,
    }

    impl StepDecoder for Stub {
        type State = Vec<u32>;
        fn init(&self) -> Result<Vec<u32>> {
            Ok(Vec::new())
        }
        fn log_probs(&self, s: &Vec<u32>) -> Result<Vec<f64>> {
            let probs = self
                .table
                .iter()
                .find(|(p, _)| p == s)
                .map(|(_, d)| d.clone())
                .unwrap_or_else(|| {
                    let mut d = vec![0.0; self.vocab];
                    d[self.eos as usize] = 1.0;
                    d
                });
            Ok(probs.iter().map(|p| p.ln()).collect())
        }
        fn commit(&self, s: &mut Vec<u32>, t: u32) -> Result<()> {
            s.push(t);
            Ok(())
        }
        fn eos(&self) -> u32 {
            self.eos
        }
    }

    // tokens: 0 = eos, 1 = A, 2 = B, 3..13 = ten fillers
    fn fixture() -> Stub {
        let dist = |pairs: &[(usize, f64)]| {
            let mut d = vec![0.0; 13];
            for &(t, p) in pairs {
                d[t] = p;
            }
            d
        };
        let spread: Vec<(usize, f64)> = (3..13).map(|t| (t, 0.1)).collect();
        Stub {
            table: vec![
                (vec![], dist(&[(1, 0.6), (2, 0.4)])),
                (vec![1], dist(&spread)),
                (vec![1, 3], dist(&[(0, 0.9), (4, 0.1)])),
                (vec![2], dist(&[(3, 0.9), (4, 0.1)])),
                (vec![2, 3], dist(&[(0, 0.9), (4, 0.1)])),
            ],
            eos: 0,
            vocab: 13,
        }
    }

    #[test]
    fn always_eos_gives_empty_caption() {
        let s = Stub {
            table: vec![],
            eos: 0,
            vocab: 3,
        };
        let h = generate(&s, &BeamConfig::default()).unwrap();
        assert_eq!(h[0].tokens, vec![0]);
        assert!(h[0].caption(0).is_empty());
        assert!(h[0].finished);
    }

    #[test]
    fn beam_two_beats_greedy_on_fixture() {
        let s = fixture();
        let cfg = BeamConfig {
            beam_size: 1,
            max_len: 3,
            ..Default::default()
        };
        let g = greedy(&s, &cfg).unwrap();
        assert_eq!(g.tokens, vec![1, 3, 0]);
        assert!((g.score - (0.6f64 * 0.1 * 0.9).ln()).abs() < 1e-12);
        assert_eq!(generate(&s, &cfg).unwrap()[0].tokens, g.tokens);
        let b = generate(&s, &BeamConfig { beam_size: 2, ..cfg }).unwrap();
        assert_eq!(b[0].tokens, vec![2, 3, 0]);
        assert!((b[0].score - (0.4f64 * 0.9 * 0.9).ln()).abs() < 1e-12);
    }

    #[test]
    fn scores_sorted_and_summed() {
        let hs = generate(&fixture(), &BeamConfig::default()).unwrap();
        for w in hs.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
        for h in &hs {
            let s: f64 = h.step_scores.iter().sum();
            assert!((s - h.score).abs() < 1e-12);
        }
    }

    #[test]
    fn max_len_finishes() {
        let s = Stub {
            table: vec![(vec![], vec![0.0, 1.0]), (vec![1], vec![0.0, 1.0])],
            eos: 0,
            vocab: 2,
        };
        let cfg = BeamConfig {
            max_len: 2,
            ..Default::default()
        };
        let h = generate(&s, &cfg).unwrap();
        assert_eq!(h[0].tokens, vec![1, 1]);
        assert!(h[0].finished);
    }

    #[test]
    fn prompt_over_budget_rejected() {
        let cfg = BeamConfig {
            max_len: 2,
            ..Default::default()
        };
        assert!(generate_with_prompt(&fixture(), &[1, 1, 1], &cfg).is_err());
    }

    #[test]
    fn zero_beam_rejected() {
        let cfg = BeamConfig {
            beam_size: 0,
            ..Default::default()
        };
        assert!(generate(&fixture(), &cfg).is_err());
    }
}
