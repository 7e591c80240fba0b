//! Training-objective ablation: both objectives pre-train on the same data,
//! and every intermediate checkpoint is finetuned and evaluated.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::harness::report::{line_chart_svg, Series};
use crate::harness::run::{evaluate_run, finetune, pretrain, RunData};
use crate::harness::spec::RunSpec;
use crate::objectives::Objective;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub objective: String,
    pub step: u64,
    pub samples_seen: u64,
    pub train_loss: f64,
    pub accuracy: f64,
    pub bleu4: f64,
    pub cider_in: f64,
    pub cider_out: f64,
    pub cider: f64,
}

fn objective_name(o: Objective) -> &'static str {
    match o {
        Objective::S2sMlm => "s2s-mlm",
        Objective::Lm => "lm",
    }
}

/// Runs `spec` once per objective. Data, seeds and schedules are shared; only
/// the objective (and with it the decoding mode) changes.
pub fn run_ablation(spec: &RunSpec, objectives: &[Objective]) -> Result<Vec<AblationRow>> {
    spec.validate()?;
    let data = RunData::new(spec)?;
    let mut rows = Vec::new();
    for &objective in objectives {
        let s = RunSpec {
            objective,
            ..spec.clone()
        };
        pretrain(&s, &data, None, None, |state, ck| {
            let (ft, _) = finetune(&s, &data, Some(state), false, None)?;
            let scores = evaluate_run(&s, &data, &ft, "")?;
            let overall = scores.get("overall");
            rows.push(AblationRow {
                objective: objective_name(objective).to_string(),
                step: ck.step,
                samples_seen: ck.samples_seen,
                train_loss: ck.train_loss,
                accuracy: ck.accuracy,
                bleu4: overall.map_or(0.0, |o| o.bleu4),
                cider_in: scores.cider("in"),
                cider_out: scores.cider("out"),
                cider: scores.cider("overall"),
            });
            Ok(())
        })?;
    }
    Ok(rows)
}

pub fn ablation_markdown(rows: &[AblationRow]) -> String {
    let mut s = String::from("| objective | samples seen | train loss | accuracy | BLEU@4 | CIDEr in | CIDEr out | CIDEr |\n|---|---:|---:|---:|---:|---:|---:|---:|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {:.4} | {:.4} | {:.2} | {:.2} | {:.2} | {:.2} |",
            r.objective, r.samples_seen, r.train_loss, r.accuracy, r.bleu4, r.cider_in, r.cider_out, r.cider
        );
    }
    s
}

/// CIDEr after finetuning against pre-training samples seen, one line per objective.
pub fn ablation_chart(rows: &[AblationRow]) -> String {
    let mut series: Vec<Series> = Vec::new();
    for r in rows {
        let p = (r.samples_seen as f64, r.cider);
        match series.iter_mut().find(|s| s.name == r.objective) {
            Some(s) => s.points.push(p),
            None => series.push(Series {
                name: r.objective.clone(),
                points: vec![p],
            }),
        }
    }
    line_chart_svg("Objective ablation", "pre-training samples seen", "CIDEr", &series, false)
}

/// Writes `ablation.csv`, `ablation.md` and `ablation.svg` into `dir`.
pub fn write_ablation(dir: &Path, rows: &[AblationRow]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("ablation.csv"))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    std::fs::write(dir.join("ablation.md"), ablation_markdown(rows))?;
    std::fs::write(dir.join("ablation.svg"), ablation_chart(rows))?;
    Ok(())
}
