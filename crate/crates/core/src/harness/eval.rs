use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoding::{zero_shot_caption, BeamConfig, DecodeMode};
use crate::error::Result;
use crate::harness::world::{Domain, ToyRecord, ToyWorld};
use crate::metrics::{bleu4, cider_d, EvalPair};
use crate::model::CaptionModel;

/// Scores for one evaluation split. Both metrics are on the 0–100 scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainScore {
    pub domain: String,
    pub bleu4: f64,
    pub cider: f64,
    pub n: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// in, near, out, overall (splits without images are skipped).
    pub scores: Vec<DomainScore>,
}

impl EvalReport {
    pub fn get(&self, domain: &str) -> Option<&DomainScore> {
        self.scores.iter().find(|s| s.domain == domain)
    }

    pub fn cider(&self, domain: &str) -> f64 {
        self.get(domain).map_or(0.0, |s| s.cider)
    }
}

pub const DOMAINS_AND_OVERALL: [&str; 4] = ["in", "near", "out", "overall"];

/// Scores `(record, candidate)` pairs per domain and overall.
pub fn score_captions(records: &[ToyRecord], candidates: &[String]) -> Result<EvalReport> {
    let pairs: Vec<(Domain, EvalPair)> = records
        .iter()
        .zip(candidates)
        .map(|(r, c)| Ok((r.domain, EvalPair::new(r.id.clone(), c.clone(), r.all_references())?)))
        .collect::<Result<_>>()?;
    let mut scores = Vec::new();
    for name in DOMAINS_AND_OVERALL {
        let subset: Vec<EvalPair> = pairs
            .iter()
            .filter(|(d, _)| name == "overall" || d.as_str() == name)
            .map(|(_, p)| p.clone())
            .collect();
        if subset.is_empty() {
            continue;
        }
        scores.push(DomainScore {
            domain: name.to_string(),
            bleu4: bleu4(&subset),
            cider: 100.0 * cider_d(&subset).score,
            n: subset.len(),
        });
    }
    Ok(EvalReport { scores })
}

/// Captions every record (in parallel, output in input order).
pub fn caption_records(
    model: &CaptionModel<f32>,
    world: &ToyWorld,
    records: &[ToyRecord],
    mode: DecodeMode,
    prompt: &str,
    beam: &BeamConfig,
) -> Result<Vec<String>> {
    records
        .par_iter()
        .map(|r| {
            let (batch, _) = world.batch(r)?;
            Ok(zero_shot_caption(model, &batch, &world.vocab, mode, prompt, beam)?.text)
        })
        .collect()
}

/// Generates captions and scores them per domain. A non-empty `prompt`
/// conditions generation (zero-shot style); the prompt is not scored.
pub fn evaluate(
    model: &CaptionModel<f32>,
    world: &ToyWorld,
    records: &[ToyRecord],
    mode: DecodeMode,
    prompt: &str,
    beam: &BeamConfig,
) -> Result<EvalReport> {
    let captions = caption_records(model, world, records, mode, prompt, beam)?;
    score_captions(records, &captions)
}
