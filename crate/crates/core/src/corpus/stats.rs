use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::stages::unigrams;
use crate::corpus::CorpusRecord;

/// Occurrence share defining the rare-unigram tail.
pub const TAIL_SHARE: f64 = 0.001;
pub const DEFAULT_TOP_K: usize = 10;

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "of", "in", "on", "at", "to", "for", "with", "by", "from", "up",
    "down", "into", "onto", "over", "under", "near", "next", "is", "are", "was", "were", "be", "been",
    "being", "it", "its", "this", "that", "these", "those", "there", "their", "they", "he", "she", "his",
    "her", "him", "some", "as", "while", "who", "which", "what", "has", "have", "out", "off", "s",
];

/// One caption of one image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionItem {
    pub image_id: String,
    pub caption: String,
}

impl From<&CorpusRecord> for CaptionItem {
    fn from(r: &CorpusRecord) -> Self {
        Self {
            image_id: r.id.clone(),
            caption: r.alt.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub images: usize,
    pub captions: usize,
    pub captions_per_image: f64,
    pub unique_unigrams: usize,
    /// Unique unigrams in the rarest suffix holding at most 0.1% of occurrences.
    pub tail_unigrams: usize,
    pub total_unigrams: u64,
    pub length_mean: f64,
    /// Population standard deviation.
    pub length_std: f64,
    pub length_p5: usize,
    pub length_p50: usize,
    pub length_p95: usize,
    /// Most frequent non-stopwords, most frequent first.
    pub top_words: Vec<(String, u64)>,
}

/// Nearest-rank percentile of ascending `sorted`.
fn nearest_rank(sorted: &[usize], p: f64) -> usize {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Table-style statistics; lengths count whitespace-separated words.
pub fn compute_stats(items: &[CaptionItem], top_k: usize) -> CorpusStats {
    if items.is_empty() {
        return CorpusStats::default();
    }
    let images: BTreeSet<&str> = items.iter().map(|i| i.image_id.as_str()).collect();
    let mut lengths: Vec<usize> = items.iter().map(|i| i.caption.split_whitespace().count()).collect();
    let mut counts: HashMap<String, u64> = HashMap::new();
    for i in items {
        for w in unigrams(&i.caption) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    let n = lengths.len() as f64;
    let mean = lengths.iter().sum::<usize>() as f64 / n;
    let var = lengths.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n;
    lengths.sort_unstable();

    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let total: u64 = ranked.iter().map(|r| r.1).sum();
    let budget = TAIL_SHARE * total as f64;
    let mut tail = 0;
    let mut tail_sum = 0u64;
    for (_, c) in ranked.iter().rev() {
        if (tail_sum + c) as f64 > budget {
            break;
        }
        tail_sum += c;
        tail += 1;
    }
    let top_words = ranked
        .iter()
        .filter(|(w, _)| !STOPWORDS.contains(&w.as_str()))
        .take(top_k)
        .cloned()
        .collect();

    CorpusStats {
        images: images.len(),
        captions: items.len(),
        captions_per_image: items.len() as f64 / images.len() as f64,
        unique_unigrams: ranked.len(),
        tail_unigrams: tail,
        total_unigrams: total,
        length_mean: mean,
        length_std: var.sqrt(),
        length_p5: nearest_rank(&lengths, 5.0),
        length_p50: nearest_rank(&lengths, 50.0),
        length_p95: nearest_rank(&lengths, 95.0),
        top_words,
    }
}
