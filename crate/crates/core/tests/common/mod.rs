//! Shared fixtures and a straight-line reference forward pass written with
//! plain nested vectors, independent of the tensor and graph code.
#![allow(dead_code)]

use capscale::model::{Architecture, CaptionModel, ModelConfig, MultimodalBatch};
use capscale::numerics::{ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small config with a short region feature vector.
pub fn toy_config(layers: usize, width: usize, heads: usize, vocab: usize, arch: Architecture) -> ModelConfig {
    let mut c = ModelConfig::custom("toy", layers, width, 2 * width, heads)
        .with_vocab(vocab)
        .with_architecture(arch);
    c.region_dim = 6;
    c.max_positions = 24;
    c
}

/// Model with every parameter (biases and norm gains included) drawn at random.
pub fn random_model(cfg: ModelConfig, seed: u64, scale: f64) -> CaptionModel<f64> {
    let mut r = rng(seed);
    let mut model = CaptionModel::<f64>::new(cfg, &mut r).unwrap();
    let normal = Normal::new(0.0, scale).unwrap();
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        let shape = model.params().get(id).shape().to_vec();
        let n: usize = shape.iter().product();
        let name = model.params().name(id).to_string();
        let data: Vec<f64> = (0..n)
            .map(|_| {
                let z = normal.sample(&mut r);
                if name.ends_with("gamma") {
                    1.0 + z
                } else {
                    z
                }
            })
            .collect();
        model.params_mut().set(id, Tensor::new(shape, data).unwrap()).unwrap();
    }
    model
}

pub fn random_batch(cfg: &ModelConfig, n: usize, m: usize, l: usize, r: &mut impl Rng) -> MultimodalBatch<f64> {
    let f = cfg.region_dim;
    let feats: Vec<f64> = (0..n * f).map(|_| r.random_range(-1.0..1.0)).collect();
    // ids 0..=4 are reserved for special tokens in the toy vocabularies
    let tok = |r: &mut dyn rand::RngCore| r.random_range(5..cfg.vocab_size as u32);
    let tags = (0..m).map(|_| tok(r)).collect();
    let caption = (0..l).map(|_| tok(r)).collect();
    MultimodalBatch::new(Tensor::matrix(n, f, feats).unwrap(), tags, caption).unwrap()
}

fn p(store: &ParamStore<f64>, name: &str) -> Tensor<f64> {
    store
        .by_name(name)
        .unwrap_or_else(|| panic!("missing {name}"))
        .clone()
}

fn mat(t: &Tensor<f64>) -> Mat {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn vecp(store: &ParamStore<f64>, name: &str) -> Vec<f64> {
    p(store, name).data().to_vec()
}

pub fn linear(x: &Mat, store: &ParamStore<f64>, name: &str) -> Mat {
    let w = mat(&p(store, &format!("{name}.weight")));
    let b = vecp(store, &format!("{name}.bias"));
    x.iter()
        .map(|row| {
            (0..b.len())
                .map(|j| b[j] + row.iter().enumerate().map(|(i, v)| v * w[i][j]).sum::<f64>())
                .collect()
        })
        .collect()
}

pub fn layer_norm(x: &Mat, store: &ParamStore<f64>, name: &str) -> Mat {
    let g = vecp(store, &format!("{name}.gamma"));
    let b = vecp(store, &format!("{name}.beta"));
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let sd = (var + 1e-12).sqrt();
            row.iter()
                .enumerate()
                .map(|(i, v)| g[i] * (v - mu) / sd + b[i])
                .collect()
        })
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect())
        .collect()
}

/// Multi-head attention block with residual and norm; `visible(i, j)` says
/// whether query row i may attend to key row j.
fn attention(
    x: &Mat,
    kv: &Mat,
    store: &ParamStore<f64>,
    prefix: &str,
    heads: usize,
    visible: &dyn Fn(usize, usize) -> bool,
) -> Mat {
    let q = linear(x, store, &format!("{prefix}.q"));
    let k = linear(kv, store, &format!("{prefix}.k"));
    let v = linear(kv, store, &format!("{prefix}.v"));
    let d = q[0].len();
    let dh = d / heads;
    let mut ctx = vec![vec![0.0; d]; x.len()];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..x.len() {
            let keys: Vec<usize> = (0..kv.len()).filter(|&j| visible(i, j)).collect();
            let scores: Vec<f64> = keys
                .iter()
                .map(|&j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
            for (s, &j) in scores.iter().zip(&keys) {
                let a = (s - mx).exp() / z;
                for c in cols.clone() {
                    ctx[i][c] += a * v[j][c];
                }
            }
        }
    }
    let o = linear(&ctx, store, &format!("{prefix}.o"));
    layer_norm(&add(x, &o), store, &format!("{prefix}_norm"))
}

fn ffn(x: &Mat, store: &ParamStore<f64>, prefix: &str) -> Mat {
    let h: Mat = linear(x, store, &format!("{prefix}.ffn.in"))
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    let f = linear(&h, store, &format!("{prefix}.ffn.out"));
    layer_norm(&add(x, &f), store, &format!("{prefix}.ffn_norm"))
}

fn text_rows(store: &ParamStore<f64>, ids: &[u32], segment: usize) -> Mat {
    let word = mat(&p(store, "embeddings.word"));
    let pos = mat(&p(store, "embeddings.position"));
    let seg = mat(&p(store, "embeddings.segment"));
    ids.iter()
        .enumerate()
        .map(|(k, &id)| {
            (0..word[0].len())
                .map(|c| word[id as usize][c] + pos[k][c] + seg[segment][c])
                .collect()
        })
        .collect()
}

fn context_rows(store: &ParamStore<f64>, batch: &MultimodalBatch<f64>) -> Mat {
    let seg = mat(&p(store, "embeddings.segment"));
    let mut rows = linear(&mat(&batch.regions), store, "region");
    for r in rows.iter_mut() {
        for (c, v) in r.iter_mut().enumerate() {
            *v += seg[0][c];
        }
    }
    rows.extend(text_rows(store, &batch.tags, 1));
    rows
}

/// Reference hidden states and caption logits.
pub fn oracle_forward(model: &CaptionModel<f64>, batch: &MultimodalBatch<f64>) -> (Mat, Mat) {
    let cfg = model.config();
    let store = model.params();
    let ctx_len = batch.num_regions() + batch.num_tags();
    let hidden = match cfg.architecture {
        Architecture::UnifiedEncoder => {
            let mut x = context_rows(store, batch);
            x.extend(text_rows(store, &batch.caption, 2));
            let mut h = layer_norm(&x, store, "embeddings.norm");
            // context rows see context; caption row i sees context and caption <= i
            let visible = |i: usize, j: usize| j < ctx_len || (i >= ctx_len && j <= i);
            for l in 0..cfg.layers {
                h = attention(&h, &h, store, &format!("enc.{l}.attn"), cfg.heads, &visible);
                h = ffn(&h, store, &format!("enc.{l}"));
            }
            h
        }
        Architecture::EncoderDecoder => {
            let half = cfg.layers / 2;
            let mut e = layer_norm(&context_rows(store, batch), store, "embeddings.norm");
            for l in 0..half {
                e = attention(&e, &e, store, &format!("enc.{l}.attn"), cfg.heads, &|_, _| true);
                e = ffn(&e, store, &format!("enc.{l}"));
            }
            let mut h = layer_norm(&text_rows(store, &batch.caption, 2), store, "embeddings.norm");
            for l in 0..half {
                h = attention(&h, &h, store, &format!("dec.{l}.attn"), cfg.heads, &|i, j| j <= i);
                h = attention(&h, &e, store, &format!("dec.{l}.cross"), cfg.heads, &|_, _| true);
                h = ffn(&h, store, &format!("dec.{l}"));
            }
            e.extend(h);
            e
        }
    };
    let caption_rows: Mat = hidden[ctx_len..].to_vec();
    let logits = oracle_head(store, &caption_rows);
    (hidden, logits)
}

pub fn oracle_head(store: &ParamStore<f64>, rows: &Mat) -> Mat {
    if rows.is_empty() {
        return Vec::new();
    }
    let t: Mat = linear(rows, store, "head.transform")
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    let t = layer_norm(&t, store, "head.norm");
    let word = mat(&p(store, "embeddings.word"));
    let bias = vecp(store, "head.bias");
    t.iter()
        .map(|r| {
            word.iter()
                .zip(&bias)
                .map(|(w, b)| b + r.iter().zip(w).map(|(x, y)| x * y).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Label-smoothed cross-entropy of one logit row: smoothing mass spread
/// uniformly over the whole vocabulary.
pub fn oracle_ce(logits: &[f64], target: usize, smoothing: f64) -> f64 {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
    let v = logits.len() as f64;
    logits
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let q = smoothing / v + if i == target { 1.0 - smoothing } else { 0.0 };
            -q * (l - lse)
        })
        .sum()
}

pub fn max_abs_diff(a: &Mat, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.len(), b.rows());
    a.iter()
        .enumerate()
        .flat_map(|(i, r)| r.iter().zip(b.row(i)).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max)
}
