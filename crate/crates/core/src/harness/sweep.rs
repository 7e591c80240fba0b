//! Resumable model-size × data-size × seed grids.
//!
//! Every cell writes `cells/<model>__n<size>__s<seed>.json` when it finishes.
//! A rerun skips cells whose file holds a successful result, so an
//! interrupted sweep resumes where it stopped and ends with the same table.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::eval::{EvalReport, DOMAINS_AND_OVERALL};
use crate::harness::report::{write_report, FitEntry, ResultRow};
use crate::harness::run::run;
use crate::harness::spec::RunSpec;
use crate::harness::worker_count;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub name: String,
    pub models: Vec<String>,
    /// Pre-training set sizes; each is a prefix of the largest.
    pub data_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Settings shared by every cell; model, seed and data share are overridden.
    pub base: RunSpec,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            name: "sweep".into(),
            models: vec!["toy-s".into(), "toy-m".into()],
            data_sizes: vec![1_000, 10_000, 100_000],
            seeds: vec![1, 2, 3],
            base: RunSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub model: String,
    pub data_size: usize,
    pub seed: u64,
}

impl Cell {
    pub fn file_name(&self) -> String {
        format!("{}__n{}__s{}.json", self.model, self.data_size, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub params: u64,
    pub samples_seen: u64,
    pub pretrain_loss: f64,
    pub pretrain_accuracy: f64,
    pub scores: EvalReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SweepSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() || self.data_sizes.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config(format!("sweep `{}`: empty grid", self.name)));
        }
        if self.data_sizes.contains(&0) {
            return Err(Error::Config(format!("sweep `{}`: data sizes must be positive", self.name)));
        }
        for c in self.cells() {
            self.cell_spec(&c).validate()?;
        }
        Ok(())
    }

    /// Cells in (model, size, seed) order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut sizes = self.data_sizes.clone();
        sizes.sort_unstable();
        sizes.dedup();
        let mut out = Vec::new();
        for m in &self.models {
            for &n in &sizes {
                for &seed in &self.seeds {
                    out.push(Cell {
                        model: m.clone(),
                        data_size: n,
                        seed,
                    });
                }
            }
        }
        out
    }

    fn pool(&self) -> usize {
        self.data_sizes.iter().copied().max().unwrap_or(1)
    }

    pub fn cell_spec(&self, c: &Cell) -> RunSpec {
        let mut s = self.base.clone();
        s.name = format!("{}/{}", self.name, c.file_name().trim_end_matches(".json"));
        s.model = c.model.clone();
        s.seed = c.seed;
        s.pool_size = self.pool();
        s.data_fraction = c.data_size as f64 / self.pool() as f64;
        s
    }

    fn smallest(&self) -> usize {
        self.data_sizes.iter().copied().min().unwrap_or(0)
    }
}

pub fn run_cell(spec: &SweepSpec, cell: &Cell) -> CellResult {
    let rs = spec.cell_spec(cell);
    match run(&rs, cell.data_size == spec.smallest(), None) {
        Ok(r) => {
            let last = r.pretrain.checkpoints.last();
            CellResult {
                cell: cell.clone(),
                params: r.params,
                samples_seen: r.pretrain.samples_seen,
                pretrain_loss: last.map_or(0.0, |c| c.train_loss),
                pretrain_accuracy: last.map_or(0.0, |c| c.accuracy),
                scores: r.scores,
                error: None,
            }
        }
        Err(e) => CellResult {
            cell: cell.clone(),
            params: 0,
            samples_seen: 0,
            pretrain_loss: 0.0,
            pretrain_accuracy: 0.0,
            scores: EvalReport::default(),
            error: Some(e.to_string()),
        },
    }
}

fn load_cell(path: &Path) -> Option<CellResult> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

pub struct SweepOutcome {
    pub cells: Vec<CellResult>,
    pub rows: Vec<ResultRow>,
    pub fits: Vec<FitEntry>,
    /// Cells computed by this invocation (the rest were resumed from disk).
    pub computed: usize,
}

/// Runs every missing or failed cell on `worker_count()` threads, then writes
/// the report into `out`. `limit` caps the number of cells computed (useful
/// to spread a sweep over several invocations).
pub fn run_sweep(spec: &SweepSpec, out: &Path, limit: Option<usize>) -> Result<SweepOutcome> {
    spec.validate()?;
    let cells_dir = out.join("cells");
    std::fs::create_dir_all(&cells_dir)?;
    std::fs::write(out.join("sweep.toml"), toml::to_string(spec).map_err(|e| Error::Invalid(e.to_string()))?)?;
    let pending: Vec<Cell> = spec
        .cells()
        .into_iter()
        .filter(|c| load_cell(&cells_dir.join(c.file_name())).is_none_or(|r| r.error.is_some()))
        .take(limit.unwrap_or(usize::MAX))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let computed = pending.len();
    pool.install(|| {
        pending.par_iter().try_for_each(|c| {
            let r = run_cell(spec, c);
            let tmp: PathBuf = cells_dir.join(format!("{}.tmp", c.file_name()));
            std::fs::write(&tmp, serde_json::to_string_pretty(&r)?)?;
            std::fs::rename(&tmp, cells_dir.join(c.file_name()))?;
            Ok::<_, Error>(())
        })
    })?;
    let cells: Vec<CellResult> = spec
        .cells()
        .iter()
        .filter_map(|c| load_cell(&cells_dir.join(c.file_name())))
        .collect();
    let (rows, fits) = report_cells(&cells, out)?;
    Ok(SweepOutcome {
        cells,
        rows,
        fits,
        computed,
    })
}

/// Reads every cell file under `dir/cells`.
pub fn load_cells(dir: &Path) -> Result<Vec<CellResult>> {
    let mut cells = Vec::new();
    for entry in std::fs::read_dir(dir.join("cells"))? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == "json") {
            if let Some(c) = load_cell(&p) {
                cells.push(c);
            }
        }
    }
    cells.sort_by(|a, b| a.cell.cmp(&b.cell));
    Ok(cells)
}

/// Seed-averaged rows over the successful cells, plus the written report.
pub fn report_cells(cells: &[CellResult], out: &Path) -> Result<(Vec<ResultRow>, Vec<FitEntry>)> {
    let rows = aggregate(cells);
    let fits = write_report(out, &rows)?;
    Ok((rows, fits))
}

pub fn aggregate(cells: &[CellResult]) -> Vec<ResultRow> {
    let mut groups: BTreeMap<(String, usize), Vec<&CellResult>> = BTreeMap::new();
    for c in cells.iter().filter(|c| c.error.is_none()) {
        groups.entry((c.cell.model.clone(), c.cell.data_size)).or_default().push(c);
    }
    let mut rows = Vec::new();
    for ((model, n), group) in groups {
        let k = group.len() as f64;
        let mean = |f: &dyn Fn(&CellResult) -> f64| group.iter().map(|c| f(c)).sum::<f64>() / k;
        let samples = (group.iter().map(|c| c.samples_seen as f64).sum::<f64>() / k).round() as u64;
        let mut push = |domain: &str, metric: &str, value: f64| {
            rows.push(ResultRow {
                model: model.clone(),
                params: group[0].params,
                data_size: n,
                samples_seen: samples,
                domain: domain.to_string(),
                metric: metric.to_string(),
                value,
            })
        };
        push("pretrain", "loss", mean(&|c| c.pretrain_loss));
        push("pretrain", "accuracy", mean(&|c| c.pretrain_accuracy));
        for d in DOMAINS_AND_OVERALL {
            if group.iter().all(|c| c.scores.get(d).is_some()) {
                push(d, "bleu4", mean(&|c| c.scores.get(d).map_or(0.0, |s| s.bleu4)));
                push(d, "cider", mean(&|c| c.scores.cider(d)));
            }
        }
    }
    rows
}

/// Per-seed score-vs-data decreases summed over seeds, per model.
pub fn inversions(cells: &[CellResult], domain: &str) -> BTreeMap<String, usize> {
    let mut by: BTreeMap<(String, u64), Vec<(usize, f64)>> = BTreeMap::new();
    for c in cells.iter().filter(|c| c.error.is_none()) {
        by.entry((c.cell.model.clone(), c.cell.seed))
            .or_default()
            .push((c.cell.data_size, c.scores.cider(domain)));
    }
    let mut out: BTreeMap<String, usize> = BTreeMap::new();
    for ((model, _), mut pts) in by {
        pts.sort_by_key(|p| p.0);
        let n = pts.windows(2).filter(|w| w[1].1 < w[0].1).count();
        *out.entry(model).or_insert(0) += n;
    }
    out
}

/// Seed-averaged score change from the smallest to the largest data size, per model.
pub fn data_gain(rows: &[ResultRow], domain: &str) -> BTreeMap<String, f64> {
    let mut by: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.domain == domain && r.metric == "cider") {
        by.entry(r.model.clone()).or_default().push((r.data_size, r.value));
    }
    by.into_iter()
        .filter_map(|(m, mut pts)| {
            pts.sort_by_key(|p| p.0);
            Some((m, pts.last()?.1 - pts.first()?.1))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_and_specs() {
        let s = SweepSpec::parse("models = [\"toy-s\"]\ndata_sizes = [400, 100, 200]\nseeds = [5]\n[base]\nfinetune_size = 10\n").unwrap();
        let cells = s.cells();
        assert_eq!(cells.iter().map(|c| c.data_size).collect::<Vec<_>>(), vec![100, 200, 400]);
        let rs = s.cell_spec(&cells[0]);
        assert_eq!((rs.data_size(), rs.pool_size, rs.seed, rs.finetune_size), (100, 400, 5, 10));
        assert!(SweepSpec::parse("models = []").is_err());
    }

    fn cell(model: &str, n: usize, seed: u64, cider: f64) -> CellResult {
        CellResult {
            cell: Cell {
                model: model.into(),
                data_size: n,
                seed,
            },
            params: 1,
            samples_seen: n as u64,
            pretrain_loss: 1.0,
            pretrain_accuracy: 0.5,
            scores: EvalReport {
                scores: vec![crate::harness::eval::DomainScore {
                    domain: "overall".into(),
                    bleu4: 0.0,
                    cider,
                    n: 1,
                }],
            },
            error: None,
        }
    }

    #[test]
    fn inversion_counting() {
        let cells = vec![cell("a", 1, 1, 1.0), cell("a", 2, 1, 0.5), cell("a", 3, 1, 2.0), cell("a", 1, 2, 1.0), cell("a", 2, 2, 2.0)];
        assert_eq!(inversions(&cells, "overall")["a"], 1);
        let rows = aggregate(&cells);
        assert!((data_gain(&rows, "overall")["a"] - 1.0).abs() < 1e-12);
    }
}
