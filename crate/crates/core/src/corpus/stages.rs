use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::tagger::{resolve_overlaps, EntityLabel, EntityTagger};
use crate::corpus::{CorpusRecord, DropReason, Verdict};
use crate::error::{invalid, Result};
use crate::tokenizer::{LOC, PERSON};

pub const MIN_LONG_SIDE: u32 = 200;
pub const MAX_ASPECT: u32 = 3;
pub const DEFAULT_MIN_COUNT: u64 = 5;

/// Keeps images whose longer side exceeds 200 px with aspect ratio below 3.
pub fn filter_image(record: &CorpusRecord) -> Verdict {
    let (w, h) = (record.width, record.height);
    if w == 0 || h == 0 {
        return Err(DropReason::ZeroDimension);
    }
    let (long, short) = (w.max(h), w.min(h));
    if long <= MIN_LONG_SIDE {
        return Err(DropReason::TooSmall);
    }
    // long / short < 3 without rounding
    if u64::from(long) >= u64::from(MAX_ASPECT) * u64::from(short) {
        return Err(DropReason::AspectRatio);
    }
    Ok(())
}

/// Longest segment between sentence-final marks (`.`, `!`, `?`), trimmed;
/// the earliest wins ties.
pub fn select_segment(alt: &str) -> String {
    let mut best = "";
    let mut best_len = 0;
    for seg in alt.split(['.', '!', '?']) {
        let seg = seg.trim();
        let len = seg.chars().count();
        if len > best_len {
            best = seg;
            best_len = len;
        }
    }
    best.to_string()
}

/// Lowercased word with leading and trailing punctuation removed.
pub fn normalize_unigram(word: &str) -> String {
    word.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

fn is_placeholder(w: &str) -> bool {
    w == PERSON || w == LOC
}

/// Normalized unigrams of `text`; anonymization placeholders pass through intact.
pub(crate) fn unigrams(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|w| {
            let core = w.trim_matches(|c: char| !(c.is_alphanumeric() || c == '[' || c == ']'));
            if is_placeholder(core) {
                core.to_string()
            } else {
                normalize_unigram(w)
            }
        })
        .filter(|w| !w.is_empty())
}

/// Unigram counts from a reference text corpus with a retention threshold.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UnigramVocab {
    counts: HashMap<String, u64>,
    pub min_count: u64,
}

impl UnigramVocab {
    pub fn from_counts(counts: HashMap<String, u64>, min_count: u64) -> Self {
        Self { counts, min_count }
    }

    /// Counts normalized unigrams over `texts`.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: u64) -> Self {
        let mut counts = HashMap::new();
        for t in texts {
            for w in unigrams(t) {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
        Self { counts, min_count }
    }

    /// Reads `word count` lines; a bare word counts as retained.
    pub fn parse(text: &str, min_count: u64) -> Result<Self> {
        let mut counts = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let count = match parts.next() {
                Some(c) => c
                    .parse::<u64>()
                    .map_err(|_| invalid(format!("vocab line {}: bad count `{c}`", n + 1)))?,
                None => min_count,
            };
            *counts.entry(normalize_unigram(word)).or_insert(0) += count;
        }
        Ok(Self { counts, min_count })
    }

    pub fn load(path: impl AsRef<Path>, min_count: u64) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, min_count)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.counts.get(word).is_some_and(|&c| c >= self.min_count)
    }

    /// Number of retained unigrams.
    pub fn len(&self) -> usize {
        self.counts.values().filter(|&&c| c >= self.min_count).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Drops text with any unigram outside the vocabulary.
pub fn vocab_filter(text: &str, vocab: &UnigramVocab) -> Verdict {
    let mut any = false;
    for w in unigrams(text) {
        any = true;
        if !is_placeholder(&w) && !vocab.contains(&w) {
            return Err(DropReason::OutOfVocabulary);
        }
    }
    if any {
        Ok(())
    } else {
        Err(DropReason::EmptyText)
    }
}

pub const DEFAULT_BLOCKLIST: [&str; 3] = ["stock image", "3d illustration", "vector photo"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoilerplateConfig {
    /// Absolute frequency above which a sentence is dropped; overrides `fraction`.
    pub threshold: Option<u64>,
    /// Threshold as a fraction of the corpus size (rounded up, at least 1).
    pub fraction: f64,
    pub blocklist: Vec<String>,
}

impl Default for BoilerplateConfig {
    fn default() -> Self {
        Self {
            threshold: None,
            fraction: 1e-4,
            blocklist: DEFAULT_BLOCKLIST.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl BoilerplateConfig {
    pub fn threshold_for(&self, corpus_size: usize) -> u64 {
        self.threshold
            .unwrap_or_else(|| ((self.fraction * corpus_size as f64).ceil() as u64).max(1))
    }
}

/// Sentence key for exact-duplicate counting: lowercase, punctuation-stripped
/// words joined by single spaces.
pub fn normalize_sentence(text: &str) -> String {
    unigrams(text).collect::<Vec<_>>().join(" ")
}

/// Two-pass boilerplate filter over a whole corpus.
pub fn boilerplate_filter(texts: &[String], cfg: &BoilerplateConfig) -> Vec<Verdict> {
    let keys: Vec<String> = texts.iter().map(|t| normalize_sentence(t)).collect();
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for k in &keys {
        *freq.entry(k.as_str()).or_insert(0) += 1;
    }
    let blocked: HashSet<String> = cfg.blocklist.iter().map(|b| normalize_sentence(b)).collect();
    let threshold = cfg.threshold_for(texts.len());
    keys.iter()
        .map(|k| {
            if blocked.contains(k) {
                Err(DropReason::BoilerplateBlocklist)
            } else if freq[k.as_str()] > threshold {
                Err(DropReason::BoilerplateFrequency)
            } else {
                Ok(())
            }
        })
        .collect()
}

/// Replaces tagged person and location spans with placeholder tokens.
pub fn anonymize(text: &str, tagger: &dyn EntityTagger) -> std::result::Result<String, DropReason> {
    let spans = tagger.tag(text).map_err(|_| DropReason::TaggerFailure)?;
    if spans.iter().any(|s| s.start > s.end || s.end > text.len() || !text.is_char_boundary(s.start) || !text.is_char_boundary(s.end)) {
        return Err(DropReason::TaggerFailure);
    }
    let mut out = String::with_capacity(text.len());
    let mut at = 0;
    for s in resolve_overlaps(spans) {
        out.push_str(&text[at..s.start]);
        out.push_str(match s.label {
            EntityLabel::Person => PERSON,
            EntityLabel::Loc => LOC,
        });
        at = s.end;
    }
    out.push_str(&text[at..]);
    Ok(out)
}

/// First-wins exact-hash dedup against the stream and the test-set hashes.
pub fn dedup(records: &[CorpusRecord], test_hashes: &HashSet<String>) -> Vec<Verdict> {
    let mut seen: HashSet<&str> = HashSet::new();
    records
        .iter()
        .map(|r| {
            let Some(h) = r.hash.as_deref() else {
                return Err(DropReason::MissingHash);
            };
            if test_hashes.contains(h) {
                Err(DropReason::TestSetDuplicate)
            } else if !seen.insert(h) {
                Err(DropReason::StreamDuplicate)
            } else {
                Ok(())
            }
        })
        .collect()
}
