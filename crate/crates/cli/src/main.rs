use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use capscale::corpus::pipeline::{run_pipeline, Pipeline, PipelineConfig};
use capscale::corpus::stats::{compute_stats, CaptionItem};
use capscale::corpus::{read_jsonl, write_jsonl, CorpusRecord};
use capscale::decoding::{zero_shot_caption, BeamConfig, DecodeMode};
use capscale::harness::ablation::{ablation_markdown, run_ablation, write_ablation};
use capscale::harness::report::{read_results_csv, write_report};
use capscale::harness::run::{evaluate_run, finetune, pretrain, RunData};
use capscale::harness::sweep::{load_cells, report_cells, run_sweep, SweepSpec};
use capscale::harness::world::image_batch;
use capscale::harness::{worker_count, RunSpec, TrainState, WORKERS_ENV};
use capscale::metrics::{bleu4, cider_d, EvalPair};
use capscale::numerics::Checkpoint;
use capscale::objectives::Objective;
use capscale::tokenizer::Vocabulary;

#[derive(Parser)]
#[command(name = "capscale", version, about = "Captioning pre-training, curation and scaling experiments")]
struct Cli {
    /// Worker threads (training, decoding, sweep cells, corpus stages).
    #[arg(long, global = true, env = WORKERS_ENV)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train on the run's toy data and write checkpoints.
    Pretrain(PretrainArgs),
    /// Finetune a checkpoint (or a fresh model) on the fixed finetuning set.
    Finetune(FinetuneArgs),
    /// Caption images from a JSONL file.
    Generate(GenerateArgs),
    /// Score candidate captions against references.
    Eval(EvalArgs),
    /// Run the alt-text curation pipeline.
    Corpus(CorpusArgs),
    /// Caption corpus statistics.
    Stats(StatsArgs),
    /// Run (or resume) a model × data × seed sweep.
    Sweep(SweepArgs),
    /// Rebuild results.csv, fits.json and charts from a sweep directory.
    Report(ReportArgs),
    /// Compare training objectives on identical data.
    Ablation(AblationArgs),
}

#[derive(Args)]
struct PretrainArgs {
    /// Run config (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Pre-trained checkpoint; without it a fresh model is finetuned.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Use the learning rate for the smallest pre-training scale.
    #[arg(long)]
    from_smallest: bool,
    /// Also evaluate the result and write scores.json.
    #[arg(long)]
    eval: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// JSONL with `id`, flat `regions` and optional `tags` per line.
    #[arg(long)]
    input: PathBuf,
    /// Output JSONL (`id`, `caption`, `score`); stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = BeamConfig::default().beam_size)]
    beam: usize,
    #[arg(long, default_value_t = BeamConfig::default().max_len)]
    max_len: usize,
    #[arg(long, default_value_t = 0)]
    min_len: usize,
    /// Text the caption must start with (zero-shot prompting).
    #[arg(long, default_value = "")]
    prompt: String,
    /// Decoding objective; defaults to the one stored in the checkpoint.
    #[arg(long, value_parser = parse_objective)]
    objective: Option<Objective>,
}

#[derive(Args)]
struct EvalArgs {
    /// JSONL with `id` and `caption`.
    #[arg(long)]
    candidates: PathBuf,
    /// JSONL with `id`, and `references` and/or `caption`.
    #[arg(long)]
    references: PathBuf,
}

#[derive(Args)]
struct CorpusArgs {
    #[command(subcommand)]
    command: CorpusCommand,
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Filter, clean and deduplicate alt-text records.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Drop log (JSONL); defaults to `<output>.drops.jsonl`.
        #[arg(long)]
        drops: Option<PathBuf>,
    },
}

#[derive(Args)]
struct StatsArgs {
    /// JSONL of `{image_id, caption}` or curated `{id, alt}` records.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 20)]
    top_k: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Compute at most this many missing cells, then report.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Sweep output directory (with `cells/`) or a directory holding results.csv.
    #[arg(long)]
    dir: PathBuf,
}

#[derive(Args)]
struct AblationArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_objective(s: &str) -> std::result::Result<Objective, String> {
    match s {
        "s2s-mlm" => Ok(Objective::S2sMlm),
        "lm" => Ok(Objective::Lm),
        _ => Err(format!("unknown objective `{s}` (expected s2s-mlm or lm)")),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Writes the vocabulary and the evaluation set next to the run outputs, so
/// `generate` and `eval` can be used on them directly.
fn write_run_files(out: &Path, data: &RunData) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("vocab.txt"), data.world.vocab.to_file_string())?;
    write_jsonl(out.join("eval.jsonl"), &data.eval)?;
    Ok(())
}

fn cmd_pretrain(a: PretrainArgs) -> Result<()> {
    let spec = RunSpec::load(&a.config)?;
    let data = RunData::new(&spec)?;
    write_run_files(&a.out, &data)?;
    let resume = a.resume.as_ref().map(TrainState::load).transpose()?;
    let (_, result) = pretrain(&spec, &data, resume, Some(&a.out), |_, c| {
        eprintln!("step {} samples {} loss {:.4} acc {:.4}", c.step, c.samples_seen, c.train_loss, c.accuracy);
        Ok(())
    })?;
    write_json(&a.out.join("pretrain.json"), &result)?;
    if let Some(msg) = &result.aborted {
        bail!("pre-training aborted: {msg}");
    }
    Ok(())
}

fn cmd_finetune(a: FinetuneArgs) -> Result<()> {
    let spec = RunSpec::load(&a.config)?;
    let data = RunData::new(&spec)?;
    write_run_files(&a.out, &data)?;
    let init = a.init.as_ref().map(TrainState::load).transpose()?;
    let (state, result) = finetune(&spec, &data, init.as_ref(), a.from_smallest, Some(&a.out))?;
    write_json(&a.out.join("finetune.json"), &result)?;
    if let Some(msg) = &result.aborted {
        bail!("finetuning aborted: {msg}");
    }
    if a.eval {
        let scores = evaluate_run(&spec, &data, &state, "")?;
        write_json(&a.out.join("scores.json"), &scores)?;
        println!("{}", serde_json::to_string(&scores)?);
    }
    Ok(())
}

#[derive(Deserialize)]
struct ImageInput {
    id: String,
    regions: Vec<f32>,
    #[serde(default)]
    tags: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Generated {
    id: String,
    caption: String,
    #[serde(default)]
    score: f64,
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let ck = Checkpoint::<f32>::load(&a.checkpoint)?;
    let stored = ck.meta["run"]["objective"].as_str().map(parse_objective).transpose().map_err(anyhow::Error::msg)?;
    let state = TrainState::from_checkpoint(ck)?;
    let config = state.model.config().clone();
    let vocab = Vocabulary::load(&a.vocab, Some(config.vocab_size))?;
    let mode = DecodeMode::from(a.objective.or(stored).unwrap_or_default());
    let cfg = BeamConfig {
        beam_size: a.beam,
        max_len: a.max_len,
        min_len: a.min_len,
        ..Default::default()
    };
    let inputs: Vec<ImageInput> = read_jsonl(&a.input)?;
    let region_dim = config.region_dim;
    let out: Vec<Generated> = {
        use rayon::prelude::*;
        inputs
            .par_iter()
            .map(|r| {
                let batch = image_batch(&vocab, region_dim, &r.regions, &r.tags)?;
                let c = zero_shot_caption(&state.model, &batch, &vocab, mode, &a.prompt, &cfg)?;
                Ok(Generated {
                    id: r.id.clone(),
                    caption: c.text,
                    score: c.score,
                })
            })
            .collect::<capscale::Result<_>>()?
    };
    match &a.output {
        Some(p) => write_jsonl(p, &out)?,
        None => {
            for g in &out {
                println!("{}", serde_json::to_string(g)?);
            }
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct ReferenceInput {
    id: String,
    #[serde(default)]
    caption: Option<String>,
    #[serde(default)]
    references: Vec<String>,
}

#[derive(Serialize)]
struct EvalOutput {
    bleu4: f64,
    cider: f64,
    n: usize,
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cands: Vec<Generated> = read_jsonl(&a.candidates)?;
    let refs: Vec<ReferenceInput> = read_jsonl(&a.references)?;
    let by_id: std::collections::HashMap<&str, &ReferenceInput> = refs.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut pairs = Vec::with_capacity(cands.len());
    for c in &cands {
        let r = by_id.get(c.id.as_str()).with_context(|| format!("no references for `{}`", c.id))?;
        let all: Vec<String> = r.caption.iter().chain(&r.references).cloned().collect();
        pairs.push(EvalPair::new(c.id.clone(), c.caption.clone(), all)?);
    }
    let out = EvalOutput {
        bleu4: bleu4(&pairs),
        cider: 100.0 * cider_d(&pairs).score,
        n: pairs.len(),
    };
    println!("{}", serde_json::to_string(&out)?);
    Ok(())
}

fn cmd_corpus(a: CorpusArgs) -> Result<()> {
    match a.command {
        CorpusCommand::Run {
            config,
            input,
            output,
            drops,
        } => {
            let pipeline = Pipeline::from_config(&PipelineConfig::load(&config)?)?;
            let records: Vec<CorpusRecord> = read_jsonl(&input)?;
            let n = records.len();
            let result = run_pipeline(records, &pipeline)?;
            write_jsonl(&output, &result.kept)?;
            let drops = drops.unwrap_or_else(|| output.with_extension("drops.jsonl"));
            write_jsonl(&drops, &result.dropped)?;
            eprintln!("{n} records, {} kept, {} dropped", result.kept.len(), result.dropped.len());
            Ok(())
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum StatsInput {
    Caption(CaptionItem),
    Record(CorpusRecord),
}

fn cmd_stats(a: StatsArgs) -> Result<()> {
    let items: Vec<CaptionItem> = read_jsonl::<StatsInput>(&a.input)?
        .into_iter()
        .map(|i| match i {
            StatsInput::Caption(c) => c,
            StatsInput::Record(r) => CaptionItem::from(&r),
        })
        .collect();
    println!("{}", serde_json::to_string_pretty(&compute_stats(&items, a.top_k))?);
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let spec = SweepSpec::load(&a.config)?;
    let out = run_sweep(&spec, &a.out, a.limit)?;
    let failed = out.cells.iter().filter(|c| c.error.is_some()).count();
    eprintln!(
        "{} cells computed, {} of {} present, {failed} failed; report in {}",
        out.computed,
        out.cells.len(),
        spec.cells().len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let fits = if a.dir.join("cells").is_dir() {
        report_cells(&load_cells(&a.dir)?, &a.dir)?.1
    } else {
        write_report(&a.dir, &read_results_csv(a.dir.join("results.csv"))?)?
    };
    for f in fits.iter().filter(|f| f.metric == "cider") {
        println!("{} {}: cider = {:.3} + {:.3}·ln(n)  (R² {:.3})", f.model, f.domain, f.fit.intercept, f.fit.slope, f.fit.r_squared);
    }
    Ok(())
}

fn cmd_ablation(a: AblationArgs) -> Result<()> {
    let spec = RunSpec::load(&a.config)?;
    let rows = run_ablation(&spec, &[Objective::S2sMlm, Objective::Lm])?;
    write_ablation(&a.out, &rows)?;
    print!("{}", ablation_markdown(&rows));
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let workers = cli.workers.filter(|&n| n > 0).unwrap_or_else(worker_count);
    rayon::ThreadPoolBuilder::new().num_threads(workers).build_global().context("configuring worker threads")?;
    // sweep cells read the worker count from the environment
    std::env::set_var(WORKERS_ENV, workers.to_string());
    match cli.command {
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Corpus(a) => cmd_corpus(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
        Command::Ablation(a) => cmd_ablation(a),
    }
}
