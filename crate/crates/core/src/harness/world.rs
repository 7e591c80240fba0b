//! Synthetic captioning world standing in for web-scale pre-training data.
//!
//! Each concept has a word and a prototype visual vector. An image shows one
//! to three concepts, one region each; its caption names them through a small
//! template grammar. Concepts are split into in/near/out domains by how
//! often the finetuning data shows them.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{MultimodalBatch, BOX_DIMS};
use crate::numerics::Tensor;
use crate::tokenizer::{tokenize, Vocabulary, CLS, LOC, MASK, PAD, PERSON, SEP, UNK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    In,
    Near,
    Out,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::In, Domain::Near, Domain::Out];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::In => "in",
            Domain::Near => "near",
            Domain::Out => "out",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: u64,
    pub concepts: usize,
    pub in_domain: usize,
    pub near_domain: usize,
    /// Visual dimensions per region; six box values are appended.
    pub visual_dim: usize,
    /// Chance that a shown concept also appears among the tags.
    pub tag_prob: f64,
    /// Chance that a finetuning image includes a near-domain concept.
    pub near_share: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            concepts: 200,
            in_domain: 120,
            near_domain: 50,
            visual_dim: 2048,
            tag_prob: 0.5,
            near_share: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Concept {
    pub word: String,
    pub domain: Domain,
    pub prototype: Vec<f32>,
}

/// Template words shared by every caption style.
const FUNCTION_WORDS: &[&str] = &[
    "a", "of", "and", "with", "next", "to", "near", "photo", "picture", "image", "showing", "my", "new",
    "look", "at", "this", "nice", "shot", "close", "view", "here", "is",
];

/// Alt-text style openers used for pre-training captions.
const ALT_PREFIXES: &[&str] = &["", "", "photo of", "my new", "look at this", "image showing", "nice shot of", "close view of"];

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn concept_word(i: usize) -> String {
    let syl = |k: usize| {
        let c = CONSONANTS[k / VOWELS.len()] as char;
        let v = VOWELS[k % VOWELS.len()] as char;
        format!("{c}{v}")
    };
    let n = CONSONANTS.len() * VOWELS.len();
    // 2311 is coprime to n², so distinct ids give distinct syllable pairs
    let k = (i * 2311 + 17) % (n * n);
    format!("{}{}", syl(k % n), syl(k / n))
}

/// Where a record is drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    /// Noisy alt-text over every concept.
    Pretrain,
    /// Clean captions; in-domain concepts plus occasional near-domain ones.
    Finetune,
    /// Evaluation images of one domain with five references each.
    Eval(Domain),
}

impl Source {
    fn stream(self) -> u64 {
        match self {
            Source::Pretrain => 1,
            Source::Finetune => 2,
            Source::Eval(Domain::In) => 3,
            Source::Eval(Domain::Near) => 4,
            Source::Eval(Domain::Out) => 5,
        }
    }
}

/// One synthetic image with its caption(s).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyRecord {
    pub id: String,
    pub concepts: Vec<usize>,
    pub domain: Domain,
    /// `regions × (visual_dim + 6)` features, row-major.
    pub regions: Vec<f32>,
    pub tags: Vec<String>,
    pub caption: String,
    /// Extra reference captions (evaluation records only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub references: Vec<String>,
}

impl ToyRecord {
    pub fn num_regions(&self) -> usize {
        self.concepts.len()
    }

    /// All reference captions: the caption itself plus the extras.
    pub fn all_references(&self) -> Vec<String> {
        std::iter::once(self.caption.clone()).chain(self.references.iter().cloned()).collect()
    }
}

/// SplitMix64 finalizer; turns structured seeds into independent streams.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut z: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        z ^= p;
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

pub struct ToyWorld {
    pub config: WorldConfig,
    pub concepts: Vec<Concept>,
    pub vocab: Vocabulary,
}

impl ToyWorld {
    pub fn new(config: WorldConfig) -> Result<Self> {
        if config.concepts == 0 || config.in_domain + config.near_domain > config.concepts {
            return Err(invalid("domain split must fit inside the concept inventory"));
        }
        if config.in_domain < 3 || config.visual_dim == 0 {
            return Err(invalid("need at least three in-domain concepts and a visual dimension"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, 0]));
        let normal = Normal::new(0.0f32, 1.0).expect("unit normal");
        let concepts: Vec<Concept> = (0..config.concepts)
            .map(|i| Concept {
                word: concept_word(i),
                domain: if i < config.in_domain {
                    Domain::In
                } else if i < config.in_domain + config.near_domain {
                    Domain::Near
                } else {
                    Domain::Out
                },
                prototype: (0..config.visual_dim).map(|_| normal.sample(&mut rng)).collect(),
            })
            .collect();
        let mut tokens: Vec<String> = [PAD, UNK, CLS, SEP, MASK, PERSON, LOC].iter().map(|s| s.to_string()).collect();
        tokens.extend(FUNCTION_WORDS.iter().map(|s| s.to_string()));
        tokens.extend(concepts.iter().map(|c| c.word.clone()));
        let vocab = Vocabulary::from_tokens(tokens)?;
        Ok(Self { config, concepts, vocab })
    }

    pub fn region_dim(&self) -> usize {
        self.config.visual_dim + BOX_DIMS
    }

    pub fn domain_concepts(&self, d: Domain) -> Vec<usize> {
        (0..self.concepts.len()).filter(|&i| self.concepts[i].domain == d).collect()
    }

    fn draw_concepts(&self, source: Source, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let k = *[1usize, 2, 2, 3].choose(rng).expect("non-empty");
        let pool = |d: Domain| self.domain_concepts(d);
        let mut first_pool = match source {
            Source::Pretrain => (0..self.concepts.len()).collect(),
            Source::Finetune => {
                if rng.random::<f64>() < self.config.near_share && self.config.near_domain > 0 {
                    pool(Domain::Near)
                } else {
                    pool(Domain::In)
                }
            }
            Source::Eval(d) => pool(d),
        };
        if first_pool.is_empty() {
            first_pool = pool(Domain::In);
        }
        let rest_pool: Vec<usize> = match source {
            Source::Pretrain => (0..self.concepts.len()).collect(),
            Source::Eval(Domain::Out) => pool(Domain::Out),
            _ => pool(Domain::In),
        };
        let mut out = vec![*first_pool.choose(rng).expect("non-empty")];
        while out.len() < k {
            let c = *rest_pool.choose(rng).expect("non-empty");
            if !out.contains(&c) {
                out.push(c);
            }
            if rest_pool.len() < k {
                break;
            }
        }
        out
    }

    /// Clean, COCO-like caption naming `concepts` in order.
    fn clean_caption(&self, concepts: &[usize], rng: &mut ChaCha8Rng) -> String {
        let w = |i: usize| self.concepts[concepts[i]].word.as_str();
        match concepts.len() {
            1 => match rng.random_range(0..3) {
                0 => format!("a {}", w(0)),
                1 => format!("a photo of a {}", w(0)),
                _ => format!("a picture of a {}", w(0)),
            },
            2 => {
                let link = ["and", "with", "next to", "near"][rng.random_range(0..4)];
                format!("a {} {link} a {}", w(0), w(1))
            }
            _ => {
                let link = ["with", "next to", "near"][rng.random_range(0..3)];
                format!("a {} {link} a {} and a {}", w(0), w(1), w(2))
            }
        }
    }

    /// Generates record `index` of `source`; depends only on the arguments,
    /// so datasets of different sizes share their prefixes.
    pub fn record(&self, source: Source, index: u64, noise: f32, seed: u64) -> ToyRecord {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[self.config.seed, seed, source.stream(), index]));
        let concepts = self.draw_concepts(source, &mut rng);
        let normal = Normal::new(0.0f32, 1.0).expect("unit normal");
        let mut regions = Vec::with_capacity(concepts.len() * self.region_dim());
        for &c in &concepts {
            for &p in &self.concepts[c].prototype {
                let z = if noise > 0.0 { noise * normal.sample(&mut rng) } else { 0.0 };
                regions.push(p + z);
            }
            let (x1, y1) = (rng.random_range(0.0..0.5f32), rng.random_range(0.0..0.5f32));
            let (w, h) = (rng.random_range(0.2..0.5f32), rng.random_range(0.2..0.5f32));
            regions.extend_from_slice(&[x1, y1, x1 + w, y1 + h, w, h]);
        }
        let mut tags: Vec<String> = concepts
            .iter()
            .filter(|_| rng.random::<f64>() < self.config.tag_prob)
            .map(|&c| self.concepts[c].word.clone())
            .collect();
        tags.sort();
        let caption = self.clean_caption(&concepts, &mut rng);
        let (caption, references) = match source {
            Source::Pretrain => {
                let prefix = *ALT_PREFIXES.choose(&mut rng).expect("non-empty");
                let text = if prefix.is_empty() { caption } else { format!("{prefix} {caption}") };
                (text, Vec::new())
            }
            Source::Finetune => (caption, Vec::new()),
            Source::Eval(_) => {
                let refs = (0..4).map(|_| self.clean_caption(&concepts, &mut rng)).collect();
                (caption, refs)
            }
        };
        let domain = concepts.iter().map(|&c| self.concepts[c].domain).max().unwrap_or(Domain::In);
        ToyRecord {
            id: format!("{}-{index}", match source {
                Source::Pretrain => "pt".to_string(),
                Source::Finetune => "ft".to_string(),
                Source::Eval(d) => format!("ev{}", d.as_str()),
            }),
            concepts,
            domain,
            regions,
            tags,
            caption,
            references,
        }
    }

    /// Model inputs for a record: features, tag ids and caption ids.
    pub fn batch(&self, r: &ToyRecord) -> Result<(MultimodalBatch<f32>, Vec<u32>)> {
        let batch = image_batch(&self.vocab, self.region_dim(), &r.regions, &r.tags)?;
        Ok((batch, tokenize(&r.caption, &self.vocab).ids))
    }
}

/// Caption-less model input from flat region rows and tag strings.
pub fn image_batch(vocab: &Vocabulary, region_dim: usize, regions: &[f32], tags: &[String]) -> Result<MultimodalBatch<f32>> {
    if region_dim == 0 || regions.len() % region_dim != 0 {
        return Err(invalid(format!("{} region values do not form rows of {region_dim}", regions.len())));
    }
    let regions = Tensor::matrix(regions.len() / region_dim, region_dim, regions.to_vec())?;
    let tags: Vec<u32> = tags.iter().flat_map(|t| tokenize(t, vocab).ids).collect();
    MultimodalBatch::new(regions, tags, Vec::new())
}

/// First `n` records of `source` under `seed`. Larger sets extend smaller ones.
pub fn make_toy_dataset(world: &ToyWorld, source: Source, n: usize, noise: f32, seed: u64) -> Vec<ToyRecord> {
    (0..n as u64).map(|i| world.record(source, i, noise, seed)).collect()
}

/// Evaluation images, `per_domain` for each of in/near/out.
pub fn make_eval_set(world: &ToyWorld, per_domain: usize, noise: f32, seed: u64) -> Vec<ToyRecord> {
    Domain::ALL
        .iter()
        .flat_map(|&d| make_toy_dataset(world, Source::Eval(d), per_domain, noise, seed))
        .collect()
}
