mod common;

use capscale::decoding::{
    beam_from, caption_image, generate, generate_with_prompt, greedy, zero_shot_caption, BeamConfig,
    CachedDecoder, DecodeMode, FullDecoder, StepDecoder,
};
use capscale::model::{Architecture, CaptionModel, MultimodalBatch};
use capscale::tokenizer::{tokenize, SpecialIds, Vocabulary};
use capscale::Scalar;
use common::*;

fn special() -> SpecialIds {
    SpecialIds {
        pad: 0,
        unk: 1,
        cls: 2,
        sep: 3,
        mask: 4,
        person: 5,
        loc: 6,
    }
}

/// Follows the cached decoder's greedy path and compares every step with a
/// full recomputation; returns the largest logit gap.
fn compare_paths<T: Scalar>(model: &CaptionModel<T>, batch: &MultimodalBatch<T>, mode: DecodeMode, steps: usize) -> f64 {
    let cached = CachedDecoder::new(model, batch, special(), mode).unwrap();
    let full = FullDecoder::new(model, batch, special(), mode);
    let mut state = cached.init().unwrap();
    let mut gap = 0.0f64;
    for _ in 0..steps {
        let a = cached.step_logits(&state).unwrap();
        let b = full.step_logits(state.tokens()).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            gap = gap.max((x.as_f64() - y.as_f64()).abs());
        }
        let lp = cached.log_probs(&state).unwrap();
        let next = capscale::objectives::argmax(&lp) as u32;
        cached.commit(&mut state, next).unwrap();
    }
    gap
}

#[test]
fn cached_logits_match_recompute() {
    for (arch, layers, seed) in [
        (Architecture::UnifiedEncoder, 2, 1),
        (Architecture::UnifiedEncoder, 1, 2),
        (Architecture::EncoderDecoder, 2, 3),
    ] {
        let cfg = toy_config(layers, 8, 2, 15, arch);
        let model = random_model(cfg.clone(), seed, 0.5);
        let batch = random_batch(&cfg, 3, 2, 0, &mut rng(seed + 50));
        for mode in [DecodeMode::MaskPredict, DecodeMode::NextToken] {
            assert!(compare_paths(&model, &batch, mode, 8) < 1e-10);
            let m32 = model.cast::<f32>();
            let b32 = batch.cast::<f32>();
            assert!(compare_paths(&m32, &b32, mode, 8) < 1e-5);
        }
    }
}

#[test]
fn cached_and_full_beam_agree() {
    let cfg = toy_config(2, 8, 2, 12, Architecture::UnifiedEncoder);
    let model = random_model(cfg.clone(), 4, 0.8).cast::<f32>();
    let batch = random_batch(&cfg, 5, 2, 0, &mut rng(5)).cast::<f32>();
    let cached = CachedDecoder::new(&model, &batch, special(), DecodeMode::MaskPredict).unwrap();
    let full = FullDecoder::new(&model, &batch, special(), DecodeMode::MaskPredict);
    let cfgb = BeamConfig {
        max_len: 10,
        ..Default::default()
    };
    let a = generate(&cached, &cfgb).unwrap();
    let b = generate(&full, &cfgb).unwrap();
    assert_eq!(
        a.iter().map(|h| &h.tokens).collect::<Vec<_>>(),
        b.iter().map(|h| &h.tokens).collect::<Vec<_>>()
    );
}

#[test]
fn beam_one_is_greedy_on_a_model() {
    let cfg = toy_config(1, 8, 2, 12, Architecture::UnifiedEncoder);
    let model = random_model(cfg.clone(), 6, 0.8);
    let batch = random_batch(&cfg, 2, 1, 0, &mut rng(7));
    let dec = CachedDecoder::new(&model, &batch, special(), DecodeMode::MaskPredict).unwrap();
    let cfgb = BeamConfig {
        beam_size: 1,
        ..Default::default()
    };
    let g = greedy(&dec, &cfgb).unwrap();
    let b = generate(&dec, &cfgb).unwrap();
    assert_eq!(b[0].tokens, g.tokens);
    for h in generate(&dec, &BeamConfig::default()).unwrap() {
        assert!(h.tokens.len() <= 20);
        let s: f64 = h.step_scores.iter().sum();
        assert!((s - h.score).abs() < 1e-9);
    }
}

#[test]
fn first_step_conditions_on_context_only() {
    let cfg = toy_config(1, 8, 2, 12, Architecture::UnifiedEncoder);
    let model = random_model(cfg.clone(), 6, 0.8);
    let batch = random_batch(&cfg, 2, 1, 0, &mut rng(7));
    let dec = CachedDecoder::new(&model, &batch, special(), DecodeMode::MaskPredict).unwrap();
    let state = dec.init().unwrap();
    assert_eq!(state.step(), 0);
    let want = model.forward(&batch.with_caption(vec![4])).unwrap().logits;
    assert_eq!(dec.step_logits(&state).unwrap(), want);
}

#[test]
fn step_beyond_positions_rejected() {
    let mut cfg = toy_config(1, 8, 2, 12, Architecture::UnifiedEncoder);
    cfg.max_positions = 3;
    cfg.max_caption = 2;
    cfg.max_tags = 2;
    let model = random_model(cfg.clone(), 6, 0.8);
    let batch = random_batch(&cfg, 1, 1, 0, &mut rng(7));
    let dec = CachedDecoder::new(&model, &batch, special(), DecodeMode::MaskPredict).unwrap();
    let mut s = dec.init().unwrap();
    for t in [7, 8, 9] {
        dec.commit(&mut s, t).unwrap_or(());
    }
    assert!(dec.step_logits(&s).is_err());
}

#[test]
fn prompt_is_conditioning_not_output() {
    let vocab = Vocabulary::bundled_test();
    let mut cfg = toy_config(2, 8, 2, vocab.len(), Architecture::UnifiedEncoder);
    cfg.max_positions = 32;
    let model = random_model(cfg.clone(), 8, 0.8);
    let batch = random_batch(&cfg, 3, 2, 0, &mut rng(9));
    let bc = BeamConfig {
        max_len: 8,
        ..Default::default()
    };
    let mode = DecodeMode::MaskPredict;
    // empty prompt is plain generation
    let plain = caption_image(&model, &batch, &vocab, mode, &bc).unwrap();
    let empty = zero_shot_caption(&model, &batch, &vocab, mode, "", &bc).unwrap();
    assert_eq!(plain, empty);

    let prompt = tokenize("a picture of", &vocab).ids;
    let shot = zero_shot_caption(&model, &batch, &vocab, mode, "a picture of", &bc).unwrap();
    assert!(shot.tokens.len() <= 8 - prompt.len());
    // same as conditioning a recompute decoder on the prompt tokens
    let full = FullDecoder::new(&model, &batch, vocab.special(), mode);
    let mut st = full.init().unwrap();
    for &t in &prompt {
        full.commit(&mut st, t).unwrap();
    }
    let budget = BeamConfig {
        max_len: 8 - prompt.len(),
        ..bc
    };
    let h = beam_from(&full, st, &budget).unwrap();
    assert_eq!(h[0].caption(vocab.special().eos()), shot.tokens.as_slice());

    let too_long = "a picture of a picture of a picture of";
    assert!(zero_shot_caption(&model, &batch, &vocab, mode, too_long, &bc).is_err());
    let cached = CachedDecoder::new(&model, &batch, vocab.special(), mode).unwrap();
    assert!(generate_with_prompt(&cached, &[10; 9], &bc).is_err());
}
