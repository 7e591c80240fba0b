use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use capscale::corpus::pipeline::Pipeline;
use capscale::corpus::{
    compute_stats, filter_image, read_jsonl, run_pipeline_with_threads, vocab_filter, write_jsonl, CaptionItem,
    CorpusRecord, DropReason, DropRecord, PipelineConfig, PipelineOutput, Stage, UnigramVocab,
};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn bundled() -> (PipelineConfig, Vec<CorpusRecord>) {
    let cfg = PipelineConfig::load(fixture("corpus/pipeline.toml")).unwrap();
    let records = read_jsonl(fixture("corpus/records.jsonl")).unwrap();
    (cfg, records)
}

fn with_stages(cfg: &PipelineConfig, stages: &[Stage]) -> Pipeline {
    let mut c = cfg.clone();
    c.stages = stages.to_vec();
    Pipeline::from_config(&c).unwrap()
}

fn serialized(out: &PipelineOutput) -> (String, String) {
    let kept: Vec<String> = out.kept.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
    let dropped: Vec<String> = out.dropped.iter().map(|d| serde_json::to_string(d).unwrap()).collect();
    (kept.join("\n"), dropped.join("\n"))
}

#[test]
fn vocab_filter_matches_hand_enumeration() {
    let vocab = UnigramVocab::load(fixture("vocab50.txt"), 5).unwrap();
    let records: Vec<CorpusRecord> = read_jsonl(fixture("vocab20.jsonl")).unwrap();
    assert_eq!(records.len(), 20);
    let kept: Vec<&str> = records
        .iter()
        .filter(|r| vocab_filter(&r.alt, &vocab).is_ok())
        .map(|r| r.id.as_str())
        .collect();
    assert_eq!(
        kept,
        ["v01", "v02", "v04", "v05", "v08", "v09", "v10", "v12", "v14", "v16", "v18", "v19"]
    );
    let reason = |id: &str| vocab_filter(&records.iter().find(|r| r.id == id).unwrap().alt, &vocab);
    assert_eq!(reason("v07"), Err(DropReason::OutOfVocabulary));
    assert_eq!(reason("v11"), Err(DropReason::EmptyText));
    assert_eq!(reason("v17"), Err(DropReason::EmptyText));
}

#[test]
fn stats_match_reference_values() {
    let items: Vec<CaptionItem> = read_jsonl(fixture("captions100.jsonl")).unwrap();
    let want: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("captions100_stats.json")).unwrap()).unwrap();
    let s = compute_stats(&items, 10);
    let int = |k: &str| want[k].as_u64().unwrap();
    let float = |k: &str| want[k].as_f64().unwrap();
    assert_eq!(s.images as u64, int("images"));
    assert_eq!(s.captions as u64, int("captions"));
    assert_eq!(s.unique_unigrams as u64, int("unique_unigrams"));
    assert_eq!(s.tail_unigrams as u64, int("tail_unigrams"));
    assert_eq!(s.total_unigrams, int("total_unigrams"));
    assert_eq!(s.length_p5 as u64, int("length_p5"));
    assert_eq!(s.length_p50 as u64, int("length_p50"));
    assert_eq!(s.length_p95 as u64, int("length_p95"));
    assert!((s.length_mean - float("length_mean")).abs() < 1e-12);
    assert!((s.length_std - float("length_std")).abs() < 1e-12);
    assert_eq!(s.captions_per_image, 5.0);
    assert!(s.top_words.len() <= 10);
    assert!(s.top_words.windows(2).all(|w| w[0].1 >= w[1].1));
}

#[test]
fn image_filter_boundaries() {
    let (_, records) = bundled();
    let verdict = |id: &str| filter_image(records.iter().find(|r| r.id == id).unwrap());
    assert_eq!(verdict("b0"), Err(DropReason::TooSmall)); // 200x200
    assert_eq!(verdict("b1"), Ok(())); // 201x200
    assert_eq!(verdict("b2"), Err(DropReason::AspectRatio)); // 900x300
    assert_eq!(verdict("b3"), Ok(())); // 899x300
    assert_eq!(verdict("b4"), Err(DropReason::AspectRatio)); // 300x900
    assert_eq!(verdict("b5"), Err(DropReason::AspectRatio)); // 201x67
    assert_eq!(verdict("b6"), Err(DropReason::ZeroDimension));
}

#[test]
fn output_independent_of_thread_count_and_run() {
    let (cfg, records) = bundled();
    let p = Pipeline::from_config(&cfg).unwrap();
    let base = run_pipeline_with_threads(records.clone(), &p, 1).unwrap();
    let want = serialized(&base);
    for threads in [1, 2, 4] {
        for _ in 0..2 {
            let out = run_pipeline_with_threads(records.clone(), &p, threads).unwrap();
            assert_eq!(serialized(&out), want, "threads = {threads}");
        }
    }
    // the gazetteer tagger never fails, every other stage drops something
    let stages: BTreeSet<String> = base.dropped.iter().map(|d| format!("{:?}", d.stage)).collect();
    assert_eq!(stages.len(), 5, "{stages:?}");
    assert!(!stages.contains("Anonymize"));
    assert!(base.dropped.iter().any(|d| d.reason == DropReason::TestSetDuplicate));
    assert!(base.kept.iter().any(|r| r.alt.contains("[PERSON]")));
    assert!(base.kept.iter().any(|r| r.alt.contains("[LOC]")));
}

#[test]
fn every_record_is_accounted_for() {
    let (cfg, records) = bundled();
    let p = Pipeline::from_config(&cfg).unwrap();
    let out = run_pipeline_with_threads(records.clone(), &p, 2).unwrap();
    assert_eq!(out.kept.len() + out.dropped.len(), records.len());
    let mut ids: Vec<&str> = out.kept.iter().map(|r| r.id.as_str()).collect();
    ids.extend(out.dropped.iter().map(|d| d.id.as_str()));
    ids.sort_unstable();
    let mut input: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
    input.sort_unstable();
    assert_eq!(ids, input);

    // stage-grouped log, input order within a stage
    let order = |id: &str| records.iter().position(|r| r.id == id).unwrap();
    let stage_idx = |s: Stage| Stage::ALL.iter().position(|&x| x == s).unwrap();
    for w in out.dropped.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        assert!(
            stage_idx(a.stage) < stage_idx(b.stage) || (a.stage == b.stage && order(&a.id) < order(&b.id))
        );
    }
    // kept records keep input order
    assert!(out.kept.windows(2).all(|w| order(&w[0].id) < order(&w[1].id)));
}

#[test]
fn split_runs_through_files_equal_fused_run() {
    let (cfg, records) = bundled();
    let fused = run_pipeline_with_threads(records.clone(), &Pipeline::from_config(&cfg).unwrap(), 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for split in 1..Stage::ALL.len() {
        let (head, tail) = Stage::ALL.split_at(split);
        let first = run_pipeline_with_threads(records.clone(), &with_stages(&cfg, head), 2).unwrap();
        let mid = dir.path().join(format!("mid{split}.jsonl"));
        write_jsonl(&mid, &first.kept).unwrap();
        let log = dir.path().join(format!("drops{split}.jsonl"));
        write_jsonl(&log, &first.dropped).unwrap();

        let second = run_pipeline_with_threads(read_jsonl(&mid).unwrap(), &with_stages(&cfg, tail), 2).unwrap();
        let mut dropped: Vec<DropRecord> = read_jsonl(&log).unwrap();
        dropped.extend(second.dropped);
        let joined = PipelineOutput {
            kept: second.kept,
            dropped,
        };
        assert_eq!(serialized(&joined), serialized(&fused), "split after {split} stages");
    }
}
