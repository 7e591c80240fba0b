use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn capscale(args: &[&str], workers: usize) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capscale"))
        .args(args)
        .env("CAPSCALE_WORKERS", workers.to_string())
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const RUN: &str = r#"
name = "cli"
model = "toy-s"
objective = "lm"
pool_size = 40
finetune_size = 20
eval_per_domain = 2
beam_size = 2
max_len = 8
seed = 5
[world]
concepts = 20
in_domain = 12
near_domain = 5
visual_dim = 16
[pretrain]
epochs = 2
batch_size = 8
checkpoints = 2
[finetune]
epochs = 1
batch_size = 8
"#;

#[test]
fn corpus_output_is_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures().join("corpus/pipeline.toml");
    let input = fixtures().join("corpus/records.jsonl");
    let mut outputs = Vec::new();
    for workers in [1, 3] {
        let out = dir.path().join(format!("kept{workers}.jsonl"));
        let drops = dir.path().join(format!("drops{workers}.jsonl"));
        ok(capscale(&["corpus", "run", "--config", s(&cfg), "--input", s(&input), "--output", s(&out), "--drops", s(&drops)], workers));
        outputs.push((std::fs::read(&out).unwrap(), std::fs::read(&drops).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert!(!outputs[0].0.is_empty() && !outputs[0].1.is_empty());
}

#[test]
fn stats_reports_caption_statistics() {
    let out = ok(capscale(&["stats", "--input", s(&fixtures().join("captions100.jsonl"))], 1));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!((v["images"].as_u64(), v["captions"].as_u64(), v["unique_unigrams"].as_u64()), (Some(20), Some(100), Some(54)));
    assert_eq!(v["length_p50"].as_u64(), Some(9));
}

#[test]
fn pretrain_finetune_generate_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.toml");
    std::fs::write(&cfg, RUN).unwrap();
    let pre = d.join("pre");
    ok(capscale(&["pretrain", "--config", s(&cfg), "--out", s(&pre)], 1));
    let result: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(pre.join("pretrain.json")).unwrap()).unwrap();
    assert_eq!(result["total_steps"].as_u64(), Some(10));
    let last = pre.join("pretrain-000010.capk");
    assert!(last.exists() && pre.join("pretrain-000005.capk").exists());

    // resuming from the final checkpoint has nothing left to do
    ok(capscale(&["pretrain", "--config", s(&cfg), "--out", s(&d.join("again")), "--resume", s(&last)], 1));

    let ft = d.join("ft");
    let scores = ok(capscale(&["finetune", "--config", s(&cfg), "--out", s(&ft), "--init", s(&last), "--eval"], 1));
    assert!(scores.contains("overall"));
    let ft_ck = ft.join("finetune-000003.capk");
    assert!(ft_ck.exists());

    let gen = d.join("gen.jsonl");
    let (vocab, eval_set) = (ft.join("vocab.txt"), ft.join("eval.jsonl"));
    let args = ["generate", "--checkpoint", s(&ft_ck), "--vocab", s(&vocab), "--input", s(&eval_set), "--output", s(&gen), "--beam", "2", "--max-len", "8"];
    ok(capscale(&args, 1));
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&gen).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 6);
    assert!(lines.iter().all(|l| l["id"].is_string() && l["caption"].is_string() && l["score"].is_f64()));
    // decoding does not depend on the worker count
    let gen3 = d.join("gen3.jsonl");
    let mut args3 = args;
    args3[8] = s(&gen3);
    ok(capscale(&args3, 3));
    assert_eq!(std::fs::read(&gen).unwrap(), std::fs::read(&gen3).unwrap());

    let eval = ok(capscale(&["eval", "--candidates", s(&gen), "--references", s(&ft.join("eval.jsonl"))], 1));
    let v: serde_json::Value = serde_json::from_str(&eval).unwrap();
    assert_eq!(v["n"].as_u64(), Some(6));
    assert!(v["bleu4"].as_f64().unwrap() >= 0.0 && v["cider"].as_f64().unwrap() >= 0.0);

    // references scored against themselves
    let self_eval = ok(capscale(&["eval", "--candidates", s(&ft.join("eval.jsonl")), "--references", s(&ft.join("eval.jsonl"))], 1));
    let v: serde_json::Value = serde_json::from_str(&self_eval).unwrap();
    assert!((v["bleu4"].as_f64().unwrap() - 100.0).abs() < 1e-9);
}

#[test]
fn sweep_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let base: String = RUN.lines().filter(|l| !l.starts_with("name") && !l.starts_with("model") && !l.starts_with("seed")).collect::<Vec<_>>().join("\n");
    let base = base.replace("[world]", "[base.world]").replace("[pretrain]", "[base.pretrain]").replace("[finetune]", "[base.finetune]");
    let cfg = format!("name = \"grid\"\nmodels = [\"toy-s\"]\ndata_sizes = [10, 20, 40]\nseeds = [1]\n[base]\n{base}\n");
    let path = d.join("sweep.toml");
    std::fs::write(&path, cfg).unwrap();
    let out = d.join("out");
    ok(capscale(&["sweep", "--config", s(&path), "--out", s(&out), "--limit", "1"], 1));
    assert_eq!(std::fs::read_dir(out.join("cells")).unwrap().count(), 1);
    ok(capscale(&["sweep", "--config", s(&path), "--out", s(&out)], 2));
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "model,params,data_size,samples_seen,domain,metric,value");
    assert!(out.join("fits.json").exists() && out.join("cider_overall_vs_data.svg").exists());
    std::fs::remove_file(out.join("results.csv")).unwrap();
    let report = ok(capscale(&["report", "--dir", s(&out)], 1));
    assert!(report.contains("toy-s overall"));
    assert_eq!(std::fs::read_to_string(out.join("results.csv")).unwrap(), csv);
}

#[test]
fn invalid_config_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "model = \"toy-s\"\ndata_fraction = 1.5\n").unwrap();
    let out = capscale(&["pretrain", "--config", s(&cfg), "--out", s(dir.path())], 1);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("data_fraction"));
}
