use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::stages::normalize_unigram;
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EntityLabel {
    Person,
    Loc,
}

/// Byte range `[start, end)` of a named entity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub label: EntityLabel,
}

/// Pluggable named-entity recognizer. Spans may overlap.
pub trait EntityTagger: Send + Sync {
    fn tag(&self, text: &str) -> std::result::Result<Vec<EntitySpan>, String>;
}

/// Keeps the longest spans first (earlier start on equal length) and drops
/// anything overlapping an accepted span. Result is ordered by position.
pub fn resolve_overlaps(mut spans: Vec<EntitySpan>) -> Vec<EntitySpan> {
    spans.sort_by_key(|s| (std::cmp::Reverse(s.end - s.start), s.start));
    let mut kept: Vec<EntitySpan> = Vec::new();
    for s in spans {
        if kept.iter().all(|k| s.end <= k.start || s.start >= k.end) {
            kept.push(s);
        }
    }
    kept.sort_by_key(|s| s.start);
    kept
}

/// Dictionary tagger matching whole, case-insensitive word sequences.
#[derive(Clone, Debug, Default)]
pub struct GazetteerTagger {
    entries: HashMap<Vec<String>, EntityLabel>,
    longest: usize,
}

impl GazetteerTagger {
    pub fn new<'a>(entries: impl IntoIterator<Item = (&'a str, EntityLabel)>) -> Self {
        let mut g = Self::default();
        for (phrase, label) in entries {
            g.insert(phrase, label);
        }
        g
    }

    pub fn insert(&mut self, phrase: &str, label: EntityLabel) {
        let words: Vec<String> = phrase.split_whitespace().map(normalize_unigram).collect();
        if words.is_empty() {
            return;
        }
        self.longest = self.longest.max(words.len());
        self.entries.insert(words, label);
    }

    /// Lines of `phrase<TAB>PERSON|LOC`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut g = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (phrase, label) = line
                .rsplit_once('\t')
                .ok_or_else(|| invalid(format!("gazetteer line {}: expected phrase<TAB>label", n + 1)))?;
            let label = match label.trim() {
                "PERSON" => EntityLabel::Person,
                "LOC" => EntityLabel::Loc,
                other => return Err(invalid(format!("gazetteer line {}: unknown label `{other}`", n + 1))),
            };
            g.insert(phrase, label);
        }
        Ok(g)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Words with the byte range of their punctuation-trimmed core.
fn word_cores(text: &str) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    let mut pos = 0;
    for w in text.split_whitespace() {
        let start = pos + text[pos..].find(w).expect("word comes from text");
        pos = start + w.len();
        let lead = w.len() - w.trim_start_matches(|c: char| !c.is_alphanumeric()).len();
        let core = w.trim_matches(|c: char| !c.is_alphanumeric());
        if core.is_empty() {
            continue;
        }
        out.push((start + lead, start + lead + core.len(), core.to_lowercase()));
    }
    out
}

impl EntityTagger for GazetteerTagger {
    fn tag(&self, text: &str) -> std::result::Result<Vec<EntitySpan>, String> {
        let words = word_cores(text);
        let mut spans = Vec::new();
        for i in 0..words.len() {
            for k in 1..=self.longest.min(words.len() - i) {
                let key: Vec<String> = words[i..i + k].iter().map(|w| w.2.clone()).collect();
                if let Some(&label) = self.entries.get(&key) {
                    spans.push(EntitySpan {
                        start: words[i].0,
                        end: words[i + k - 1].1,
                        label,
                    });
                }
            }
        }
        Ok(spans)
    }
}
