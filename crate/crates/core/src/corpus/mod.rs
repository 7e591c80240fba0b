//! Web alt-text curation: image size filter, segment selection, vocabulary
//! and boilerplate filters, name anonymization, test-set dedup, plus the
//! corpus statistics report.

pub mod pipeline;
pub mod stages;
pub mod stats;
pub mod tagger;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use pipeline::{run_pipeline, run_pipeline_with_threads, PipelineConfig, PipelineOutput, Stage};
pub use stages::{
    anonymize, boilerplate_filter, dedup, filter_image, normalize_sentence, normalize_unigram,
    select_segment, vocab_filter, BoilerplateConfig, UnigramVocab, DEFAULT_BLOCKLIST,
};
pub use stats::{compute_stats, CaptionItem, CorpusStats};
pub use tagger::{EntityLabel, EntitySpan, EntityTagger, GazetteerTagger};

/// One crawled image with its alt text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub alt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hash: Option<String>,
}

/// Why a record left the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    ZeroDimension,
    TooSmall,
    AspectRatio,
    EmptyText,
    OutOfVocabulary,
    BoilerplateBlocklist,
    BoilerplateFrequency,
    TaggerFailure,
    MissingHash,
    TestSetDuplicate,
    StreamDuplicate,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::ZeroDimension => "zero-dimension",
            DropReason::TooSmall => "too-small",
            DropReason::AspectRatio => "aspect-ratio",
            DropReason::EmptyText => "empty-text",
            DropReason::OutOfVocabulary => "out-of-vocabulary",
            DropReason::BoilerplateBlocklist => "boilerplate-blocklist",
            DropReason::BoilerplateFrequency => "boilerplate-frequency",
            DropReason::TaggerFailure => "tagger-failure",
            DropReason::MissingHash => "missing-hash",
            DropReason::TestSetDuplicate => "test-set-duplicate",
            DropReason::StreamDuplicate => "stream-duplicate",
        }
    }
}

impl std::fmt::Display for DropReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Drop-log line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropRecord {
    pub id: String,
    pub stage: Stage,
    pub reason: DropReason,
}

pub type Verdict = std::result::Result<(), DropReason>;

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::Invalid(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
