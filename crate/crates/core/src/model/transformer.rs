//! The multimodal fusion transformer.
//!
//! Post-norm (BERT-style) layers. Regions enter through a linear map of
//! their feature rows; tags and caption tokens use word + absolute position
//! + segment embeddings. Tags and caption are positioned independently from
//! zero. The output head is the BERT MLM head with its projection tied to
//! the word embedding.

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::model::batch::MultimodalBatch;
use crate::model::config::{Architecture, ModelConfig};
use crate::model::mask::{build_mask, causal_additive};
use crate::numerics::params::truncated_normal;
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::scalar::Scalar;

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Segment {
    Region = 0,
    Tag = 1,
    Caption = 2,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Names, shapes and initializers of every parameter, in storage order.
pub(crate) fn param_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, v, mlp) = (cfg.width, cfg.vocab_size, cfg.mlp_dim);
    let mut out: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| out.push((name, shape, init));
    let norm = |push: &mut dyn FnMut(String, Vec<usize>, Init), p: &str| {
        push(format!("{p}.gamma"), vec![d], Init::Ones);
        push(format!("{p}.beta"), vec![d], Init::Zeros);
    };
    let linear = |push: &mut dyn FnMut(String, Vec<usize>, Init), p: &str, i: usize, o: usize| {
        push(format!("{p}.weight"), vec![i, o], Init::Normal);
        push(format!("{p}.bias"), vec![o], Init::Zeros);
    };

    push("embeddings.word".into(), vec![v, d], Init::Normal);
    push("embeddings.position".into(), vec![cfg.max_positions, d], Init::Normal);
    push("embeddings.segment".into(), vec![3, d], Init::Normal);
    norm(&mut push, "embeddings.norm");
    linear(&mut push, "region", cfg.region_dim, d);

    let (enc, dec) = cfg.stack_depths();
    let attn = |push: &mut dyn FnMut(String, Vec<usize>, Init), p: &str| {
        for proj in ["q", "k", "v", "o"] {
            linear(push, &format!("{p}.{proj}"), d, d);
        }
        norm(push, &format!("{p}_norm"));
    };
    let ffn = |push: &mut dyn FnMut(String, Vec<usize>, Init), p: &str| {
        linear(push, &format!("{p}.ffn.in"), d, mlp);
        linear(push, &format!("{p}.ffn.out"), mlp, d);
        norm(push, &format!("{p}.ffn_norm"));
    };
    for i in 0..enc {
        attn(&mut push, &format!("enc.{i}.attn"));
        ffn(&mut push, &format!("enc.{i}"));
    }
    for i in 0..dec {
        attn(&mut push, &format!("dec.{i}.attn"));
        attn(&mut push, &format!("dec.{i}.cross"));
        ffn(&mut push, &format!("dec.{i}"));
    }
    linear(&mut push, "head.transform", d, d);
    norm(&mut push, "head.norm");
    push("head.bias".into(), vec![v], Init::Zeros);
    out
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LinearIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct NormIds {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct AttnIds {
    pub q: LinearIds,
    pub k: LinearIds,
    pub v: LinearIds,
    pub o: LinearIds,
    pub norm: NormIds,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerIds {
    pub attn: AttnIds,
    pub cross: Option<AttnIds>,
    pub ffn_in: LinearIds,
    pub ffn_out: LinearIds,
    pub ffn_norm: NormIds,
}

#[derive(Clone, Debug)]
pub(crate) struct ModelIds {
    pub word: ParamId,
    pub position: ParamId,
    pub segment: ParamId,
    pub emb_norm: NormIds,
    pub region: LinearIds,
    pub enc: Vec<LayerIds>,
    pub dec: Vec<LayerIds>,
    pub head_transform: LinearIds,
    pub head_norm: NormIds,
    pub head_bias: ParamId,
}

impl ModelIds {
    fn resolve<T: Scalar>(cfg: &ModelConfig, p: &ParamStore<T>) -> Result<Self> {
        let id = |n: &str| p.expect_id(n);
        let lin = |n: &str| -> Result<LinearIds> {
            Ok(LinearIds {
                w: id(&format!("{n}.weight"))?,
                b: id(&format!("{n}.bias"))?,
            })
        };
        let norm = |n: &str| -> Result<NormIds> {
            Ok(NormIds {
                gamma: id(&format!("{n}.gamma"))?,
                beta: id(&format!("{n}.beta"))?,
            })
        };
        let attn = |n: &str| -> Result<AttnIds> {
            Ok(AttnIds {
                q: lin(&format!("{n}.q"))?,
                k: lin(&format!("{n}.k"))?,
                v: lin(&format!("{n}.v"))?,
                o: lin(&format!("{n}.o"))?,
                norm: norm(&format!("{n}_norm"))?,
            })
        };
        let layer = |n: &str, cross: bool| -> Result<LayerIds> {
            Ok(LayerIds {
                attn: attn(&format!("{n}.attn"))?,
                cross: if cross {
                    Some(attn(&format!("{n}.cross"))?)
                } else {
                    None
                },
                ffn_in: lin(&format!("{n}.ffn.in"))?,
                ffn_out: lin(&format!("{n}.ffn.out"))?,
                ffn_norm: norm(&format!("{n}.ffn_norm"))?,
            })
        };
        let (enc, dec) = cfg.stack_depths();
        Ok(Self {
            word: id("embeddings.word")?,
            position: id("embeddings.position")?,
            segment: id("embeddings.segment")?,
            emb_norm: norm("embeddings.norm")?,
            region: lin("region")?,
            enc: (0..enc)
                .map(|i| layer(&format!("enc.{i}"), false))
                .collect::<Result<_>>()?,
            dec: (0..dec)
                .map(|i| layer(&format!("dec.{i}"), true))
                .collect::<Result<_>>()?,
            head_transform: lin("head.transform")?,
            head_norm: norm("head.norm")?,
            head_bias: id("head.bias")?,
        })
    }
}

/// Values produced by a full forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput<T> {
    /// Final hidden state of every input position, `[regions | tags | caption]`.
    pub hidden: Tensor<T>,
    /// Vocabulary logits, one row per caption position.
    pub logits: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct CaptionModel<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    pub(crate) ids: ModelIds,
}

impl<T: Scalar> CaptionModel<T> {
    /// Fresh model: truncated-normal(0.02) weights, zero biases, unit gains.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, shape, init) in param_layout(&config) {
            let t = match init {
                Init::Normal => truncated_normal(&shape, INIT_STD, rng),
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::full(&shape, T::one()),
            };
            params.insert(name, t)?;
        }
        Self::from_params(config, params)
    }

    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(&config);
        if layout.len() != params.len() {
            return Err(invalid(format!(
                "parameter count {} does not match config `{}` ({})",
                params.len(),
                config.name,
                layout.len()
            )));
        }
        for ((name, shape, _), (_, pname, t)) in layout.iter().zip(params.iter()) {
            if name != pname || shape.as_slice() != t.shape() {
                return Err(invalid(format!(
                    "parameter `{pname}` {:?} does not match expected `{name}` {shape:?}",
                    t.shape()
                )));
            }
        }
        let ids = ModelIds::resolve(&config, &params)?;
        Ok(Self {
            config,
            params,
            ids,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn cast<U: Scalar>(&self) -> CaptionModel<U> {
        CaptionModel {
            config: self.config.clone(),
            params: self.params.cast(),
            ids: self.ids.clone(),
        }
    }

    // ---- building blocks -------------------------------------------------

    pub(crate) fn linear(&self, g: &mut Graph<T>, x: Var, ids: LinearIds) -> Result<Var> {
        let w = g.param(&self.params, ids.w);
        let b = g.param(&self.params, ids.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    pub(crate) fn norm(&self, g: &mut Graph<T>, x: Var, ids: NormIds) -> Result<Var> {
        let gamma = g.param(&self.params, ids.gamma);
        let beta = g.param(&self.params, ids.beta);
        g.layer_norm(x, gamma, beta)
    }

    /// Multi-head attention from projected queries, keys and values; returns
    /// the concatenated per-head contexts (before the output projection).
    pub(crate) fn attend(
        &self,
        g: &mut Graph<T>,
        q: Var,
        k: Var,
        v: Var,
        mask: Option<&Tensor<T>>,
    ) -> Result<Var> {
        let dh = self.config.head_dim();
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let s = g.matmul_nt(qh, kh)?;
            let mut s = g.scale(s, scale);
            if let Some(m) = mask {
                s = g.add_const(s, m)?;
            }
            let p = g.softmax(s)?;
            heads.push(g.matmul(p, vh)?);
        }
        if heads.len() == 1 {
            Ok(heads[0])
        } else {
            g.concat_cols(&heads)
        }
    }

    /// Residual attention sub-block: `norm(x + o(attend(q(x), k(kv), v(kv))))`.
    fn attention_block(
        &self,
        g: &mut Graph<T>,
        x: Var,
        kv: Var,
        ids: AttnIds,
        mask: Option<&Tensor<T>>,
    ) -> Result<Var> {
        let q = self.linear(g, x, ids.q)?;
        let k = self.linear(g, kv, ids.k)?;
        let v = self.linear(g, kv, ids.v)?;
        self.attention_tail(g, x, q, k, v, ids, mask)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn attention_tail(
        &self,
        g: &mut Graph<T>,
        x: Var,
        q: Var,
        k: Var,
        v: Var,
        ids: AttnIds,
        mask: Option<&Tensor<T>>,
    ) -> Result<Var> {
        let ctx = self.attend(g, q, k, v, mask)?;
        let a = self.linear(g, ctx, ids.o)?;
        let r = g.add(x, a)?;
        self.norm(g, r, ids.norm)
    }

    pub(crate) fn ffn_block(&self, g: &mut Graph<T>, x: Var, layer: &LayerIds) -> Result<Var> {
        let h = self.linear(g, x, layer.ffn_in)?;
        let h = g.gelu(h);
        let f = self.linear(g, h, layer.ffn_out)?;
        let r = g.add(x, f)?;
        self.norm(g, r, layer.ffn_norm)
    }

    /// Summed (pre-norm) text embeddings for `ids` at positions `start..`.
    pub(crate) fn text_embedding(
        &self,
        g: &mut Graph<T>,
        ids: &[u32],
        start: usize,
        segment: Segment,
    ) -> Result<Var> {
        if start + ids.len() > self.config.max_positions {
            return Err(invalid(format!(
                "text positions {}..{} exceed {}",
                start,
                start + ids.len(),
                self.config.max_positions
            )));
        }
        let word = g.param(&self.params, self.ids.word);
        let pos = g.param(&self.params, self.ids.position);
        let seg = g.param(&self.params, self.ids.segment);
        let tok: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (start..start + ids.len()).collect();
        let e = g.gather_rows(word, &tok)?;
        let p = g.gather_rows(pos, &positions)?;
        let s = g.gather_rows(seg, &vec![segment as usize; ids.len()])?;
        let e = g.add(e, p)?;
        g.add(e, s)
    }

    fn region_embedding(&self, g: &mut Graph<T>, regions: &Tensor<T>) -> Result<Var> {
        let x = g.constant(regions.clone());
        let r = self.linear(g, x, self.ids.region)?;
        let seg = g.param(&self.params, self.ids.segment);
        let s = g.gather_rows(seg, &vec![Segment::Region as usize; regions.rows()])?;
        g.add(r, s)
    }

    /// Layer-normed input states for the region and tag block.
    pub(crate) fn embed_context(&self, g: &mut Graph<T>, batch: &MultimodalBatch<T>) -> Result<Var> {
        let r = self.region_embedding(g, &batch.regions)?;
        let t = self.text_embedding(g, &batch.tags, 0, Segment::Tag)?;
        let x = g.concat_rows(&[r, t])?;
        self.norm(g, x, self.ids.emb_norm)
    }

    /// Layer-normed input states for caption tokens starting at position `start`.
    pub(crate) fn embed_caption(&self, g: &mut Graph<T>, ids: &[u32], start: usize) -> Result<Var> {
        let c = self.text_embedding(g, ids, start, Segment::Caption)?;
        self.norm(g, c, self.ids.emb_norm)
    }

    /// Input states `(N+M+L) × width` in canonical order.
    pub fn embed(&self, g: &mut Graph<T>, batch: &MultimodalBatch<T>) -> Result<Var> {
        batch.validate(&self.config)?;
        let r = self.region_embedding(g, &batch.regions)?;
        let t = self.text_embedding(g, &batch.tags, 0, Segment::Tag)?;
        let c = self.text_embedding(g, &batch.caption, 0, Segment::Caption)?;
        let x = g.concat_rows(&[r, t, c])?;
        self.norm(g, x, self.ids.emb_norm)
    }

    /// Final hidden states `(N+M+L) × width`.
    pub fn encode(&self, g: &mut Graph<T>, batch: &MultimodalBatch<T>) -> Result<Var> {
        match self.config.architecture {
            Architecture::UnifiedEncoder => self.encode_unified(g, batch),
            Architecture::EncoderDecoder => self.encode_encdec(g, batch),
        }
    }

    fn encode_unified(&self, g: &mut Graph<T>, batch: &MultimodalBatch<T>) -> Result<Var> {
        let mask = build_mask(batch.num_regions(), batch.num_tags(), batch.caption_len())?;
        let additive = mask.additive::<T>();
        let mut h = self.embed(g, batch)?;
        for layer in &self.ids.enc {
            h = self.attention_block(g, h, h, layer.attn, Some(&additive))?;
            h = self.ffn_block(g, h, layer)?;
        }
        Ok(h)
    }

    /// Encoder output over regions and tags (full mutual visibility).
    pub(crate) fn run_encoder_stack(&self, g: &mut Graph<T>, batch: &MultimodalBatch<T>) -> Result<Var> {
        let mut e = self.embed_context(g, batch)?;
        for layer in &self.ids.enc {
            e = self.attention_block(g, e, e, layer.attn, None)?;
            e = self.ffn_block(g, e, layer)?;
        }
        Ok(e)
    }

    fn encode_encdec(&self, g: &mut Graph<T>, batch: &MultimodalBatch<T>) -> Result<Var> {
        batch.validate(&self.config)?;
        if batch.num_regions() + batch.num_tags() == 0 {
            return Err(invalid("encoder-decoder needs at least one region or tag"));
        }
        let e = self.run_encoder_stack(g, batch)?;
        if batch.caption_len() == 0 {
            return Ok(e);
        }
        let causal = causal_additive::<T>(batch.caption_len());
        let mut h = self.embed_caption(g, &batch.caption, 0)?;
        for layer in &self.ids.dec {
            let cross = layer.cross.expect("decoder layer has cross-attention");
            h = self.attention_block(g, h, h, layer.attn, Some(&causal))?;
            h = self.attention_block(g, h, e, cross, None)?;
            h = self.ffn_block(g, h, layer)?;
        }
        g.concat_rows(&[e, h])
    }

    /// MLM head logits for the given rows of `hidden`.
    pub fn logits_at(&self, g: &mut Graph<T>, hidden: Var, rows: &[usize]) -> Result<Var> {
        let x = g.gather_rows(hidden, rows)?;
        self.head(g, x)
    }

    pub(crate) fn head(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let t = self.linear(g, x, self.ids.head_transform)?;
        let t = g.gelu(t);
        let t = self.norm(g, t, self.ids.head_norm)?;
        let word = g.param(&self.params, self.ids.word);
        let bias = g.param(&self.params, self.ids.head_bias);
        let l = g.matmul_nt(t, word)?;
        g.add_row(l, bias)
    }

    /// Hidden states and caption-position logits.
    pub fn forward(&self, batch: &MultimodalBatch<T>) -> Result<ModelOutput<T>> {
        let mut g = Graph::new();
        let h = self.encode(&mut g, batch)?;
        let rows: Vec<usize> = (0..batch.caption_len()).map(|k| batch.caption_row(k)).collect();
        let logits = if rows.is_empty() {
            Tensor::zeros(&[0, self.config.vocab_size])
        } else {
            let l = self.logits_at(&mut g, h, &rows)?;
            g.value(l).clone()
        };
        Ok(ModelOutput {
            hidden: g.value(h).clone(),
            logits,
        })
    }

    /// Forward pass of the encoder-decoder variant; rejects other architectures.
    pub fn forward_encdec(&self, batch: &MultimodalBatch<T>) -> Result<ModelOutput<T>> {
        if self.config.architecture != Architecture::EncoderDecoder {
            return Err(Error::Config(format!(
                "`{}` is not an encoder-decoder model",
                self.config.name
            )));
        }
        self.forward(batch)
    }
}
