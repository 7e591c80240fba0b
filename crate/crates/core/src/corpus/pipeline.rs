use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::stages::{
    anonymize, boilerplate_filter, dedup, filter_image, select_segment, vocab_filter, BoilerplateConfig,
    UnigramVocab, DEFAULT_MIN_COUNT,
};
use crate::corpus::tagger::{EntityTagger, GazetteerTagger};
use crate::corpus::{CorpusRecord, DropReason, DropRecord};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    FilterImage,
    SelectSegment,
    VocabFilter,
    Boilerplate,
    Anonymize,
    Dedup,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::FilterImage,
        Stage::SelectSegment,
        Stage::VocabFilter,
        Stage::Boilerplate,
        Stage::Anonymize,
        Stage::Dedup,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabSource {
    /// `word count` lines.
    pub path: Option<PathBuf>,
    /// Plain text to count unigrams from.
    pub reference_corpus: Option<PathBuf>,
    #[serde(default = "default_min_count")]
    pub min_count: u64,
}

fn default_min_count() -> u64 {
    DEFAULT_MIN_COUNT
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnonymizeSource {
    pub gazetteer: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DedupSource {
    /// One hash per line.
    pub test_hashes: Option<PathBuf>,
}

/// Declarative pipeline file. Relative paths resolve against the file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "all_stages")]
    pub stages: Vec<Stage>,
    pub vocab: Option<VocabSource>,
    #[serde(default)]
    pub boilerplate: BoilerplateConfig,
    pub anonymize: Option<AnonymizeSource>,
    #[serde(default)]
    pub dedup: DedupSource,
}

fn all_stages() -> Vec<Stage> {
    Stage::ALL.to_vec()
}

impl PipelineConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text)?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(v) = cfg.vocab.as_mut() {
            v.path.as_mut().map(fix);
            v.reference_corpus.as_mut().map(fix);
        }
        if let Some(a) = cfg.anonymize.as_mut() {
            fix(&mut a.gazetteer);
        }
        cfg.dedup.test_hashes.as_mut().map(fix);
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&std::fs::read_to_string(path)?, base)
    }
}

/// Resolved pipeline: stage list plus loaded resources.
pub struct Pipeline {
    pub stages: Vec<Stage>,
    pub vocab: Option<UnigramVocab>,
    pub boilerplate: BoilerplateConfig,
    pub tagger: Option<Box<dyn EntityTagger>>,
    pub test_hashes: HashSet<String>,
}

impl Pipeline {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        let vocab = match &cfg.vocab {
            Some(VocabSource { path: Some(p), min_count, .. }) => Some(UnigramVocab::load(p, *min_count)?),
            Some(VocabSource {
                reference_corpus: Some(p),
                min_count,
                ..
            }) => {
                let text = std::fs::read_to_string(p)?;
                Some(UnigramVocab::from_texts(text.lines(), *min_count))
            }
            _ => None,
        };
        let tagger: Option<Box<dyn EntityTagger>> = match &cfg.anonymize {
            Some(a) => Some(Box::new(GazetteerTagger::load(&a.gazetteer)?)),
            None => None,
        };
        let test_hashes = match &cfg.dedup.test_hashes {
            Some(p) => std::fs::read_to_string(p)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
            None => HashSet::new(),
        };
        let p = Self {
            stages: cfg.stages.clone(),
            vocab,
            boilerplate: cfg.boilerplate.clone(),
            tagger,
            test_hashes,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if self.stages.contains(&Stage::VocabFilter) && self.vocab.is_none() {
            return Err(Error::Config("vocab-filter stage needs a [vocab] source".into()));
        }
        if self.stages.contains(&Stage::Anonymize) && self.tagger.is_none() {
            return Err(Error::Config("anonymize stage needs an [anonymize] gazetteer".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PipelineOutput {
    pub kept: Vec<CorpusRecord>,
    /// Drop log, grouped by stage in pipeline order, input order within a stage.
    pub dropped: Vec<DropRecord>,
}

type Outcome = std::result::Result<CorpusRecord, (String, DropReason)>;

fn per_record(stage: Stage, p: &Pipeline, mut r: CorpusRecord) -> Outcome {
    let fail = |r: &CorpusRecord, reason| Err((r.id.clone(), reason));
    match stage {
        Stage::FilterImage => match filter_image(&r) {
            Ok(()) => Ok(r),
            Err(e) => fail(&r, e),
        },
        Stage::SelectSegment => {
            r.alt = select_segment(&r.alt);
            if r.alt.is_empty() {
                fail(&r, DropReason::EmptyText)
            } else {
                Ok(r)
            }
        }
        Stage::VocabFilter => {
            let vocab = p.vocab.as_ref().expect("validated");
            match vocab_filter(&r.alt, vocab) {
                Ok(()) => Ok(r),
                Err(e) => fail(&r, e),
            }
        }
        Stage::Anonymize => {
            let tagger = p.tagger.as_deref().expect("validated");
            match anonymize(&r.alt, tagger) {
                Ok(t) => {
                    r.alt = t;
                    Ok(r)
                }
                Err(e) => fail(&r, e),
            }
        }
        Stage::Boilerplate | Stage::Dedup => unreachable!("corpus-level stage"),
    }
}

/// Runs the stages in order on the current rayon pool. Output order follows
/// input order regardless of parallelism.
pub fn run_pipeline(records: Vec<CorpusRecord>, p: &Pipeline) -> Result<PipelineOutput> {
    p.validate()?;
    let mut live = records;
    let mut dropped = Vec::new();
    for &stage in &p.stages {
        let outcomes: Vec<Outcome> = match stage {
            Stage::Boilerplate | Stage::Dedup => {
                let verdicts = if stage == Stage::Boilerplate {
                    let texts: Vec<String> = live.iter().map(|r| r.alt.clone()).collect();
                    boilerplate_filter(&texts, &p.boilerplate)
                } else {
                    dedup(&live, &p.test_hashes)
                };
                live.into_iter()
                    .zip(verdicts)
                    .map(|(r, v)| match v {
                        Ok(()) => Ok(r),
                        Err(e) => Err((r.id, e)),
                    })
                    .collect()
            }
            _ => live.into_par_iter().map(|r| per_record(stage, p, r)).collect(),
        };
        live = Vec::with_capacity(outcomes.len());
        for o in outcomes {
            match o {
                Ok(r) => live.push(r),
                Err((id, reason)) => dropped.push(DropRecord { id, stage, reason }),
            }
        }
    }
    Ok(PipelineOutput { kept: live, dropped })
}

/// As [`run_pipeline`] on a dedicated pool with `threads` workers.
pub fn run_pipeline_with_threads(records: Vec<CorpusRecord>, p: &Pipeline, threads: usize) -> Result<PipelineOutput> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    pool.install(|| run_pipeline(records, p))
}
