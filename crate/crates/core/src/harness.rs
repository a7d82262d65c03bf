//! Multi-seed experiments: per-seed curve CSVs and JSON summaries, aggregate
//! statistics and the loss-rescale grid.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{generate_bipartite, generate_sbm, load_graph, BipartiteConfig, Graph, SbmConfig};
use crate::metrics::{mean_std, Metric};
use crate::record::{write_csv, RunRecord};
use crate::trainer::{pretrain, prepare, run_scheme, TargetConfig, TrainConfig};

pub const AGGREGATE_FILE: &str = "aggregate.json";
pub const RESCALE_FILE: &str = "rescale.json";

/// Printed at the top of every report.
pub const REPORT_NOTE: &str = "Ranking metrics (MRR, NDCG) use a multi-candidate classification formulation: \
node targets rank the true class among all class scores, link targets rank each held-out link against its sampled negatives.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DatasetSpec {
    Sbm(SbmConfig),
    Bipartite(BipartiteConfig),
    /// Edge TSV, feature CSV and label TSV; relative paths resolve against the config file.
    Files {
        edges: PathBuf,
        features: PathBuf,
        labels: PathBuf,
    },
}

impl DatasetSpec {
    pub fn load(&self, base: &Path) -> Result<Graph> {
        match self {
            DatasetSpec::Sbm(c) => generate_sbm(c),
            DatasetSpec::Bipartite(c) => generate_bipartite(c),
            DatasetSpec::Files { edges, features, labels } => {
                load_graph(&base.join(edges), &base.join(features), &base.join(labels))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub train: TrainConfig,
    /// Reported metrics; empty means every metric of the target kind.
    #[serde(default)]
    pub metrics: Vec<Metric>,
    pub seeds: Vec<u64>,
    /// Relative paths resolve against the output root.
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("an experiment needs at least one seed"));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(Error::config("seeds must be distinct"));
        }
        let allowed = target_metrics(&self.train.target);
        if let Some(m) = self.metrics.iter().find(|m| !allowed.contains(m)) {
            return Err(Error::config(format!("metric {m} does not apply to this target task")));
        }
        self.train.validate()
    }

    pub fn metric_set(&self) -> Vec<Metric> {
        if self.metrics.is_empty() {
            target_metrics(&self.train.target)
        } else {
            self.metrics.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
        }
    }

    /// `output_dir` if absolute, else joined onto `root`.
    pub fn output_path(&self, root: &Path) -> PathBuf {
        root.join(&self.output_dir)
    }
}

fn target_metrics(t: &TargetConfig) -> Vec<Metric> {
    match t {
        TargetConfig::NodeClassification => vec![Metric::MicroF1, Metric::Mrr, Metric::Ndcg],
        TargetConfig::LinkPrediction { .. } => vec![Metric::Auc, Metric::Mrr, Metric::Ndcg],
    }
}

/// JSON summary of one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    /// `None` for a run that finished; the diagnostic otherwise.
    pub failure: Option<String>,
    pub record: RunRecord,
}

impl SeedSummary {
    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Result<Self> {
        let (mean, std) = mean_std(values)?;
        Ok(Self {
            mean,
            std,
            n: values.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub fingerprint: String,
    pub seeds: Vec<u64>,
    pub failed: BTreeMap<u64, String>,
    /// Over completed seeds only.
    pub metrics: BTreeMap<Metric, Stat>,
    pub note: String,
}

impl Aggregate {
    pub fn all_completed(&self) -> bool {
        self.failed.is_empty()
    }

    /// Mean ± std of every metric over the completed seeds, in seed order.
    pub fn from_seeds(fingerprint: String, summaries: &[SeedSummary], metrics: &[Metric]) -> Result<Self> {
        let mut sorted: Vec<&SeedSummary> = summaries.iter().collect();
        sorted.sort_by_key(|s| s.seed);
        let failed = sorted
            .iter()
            .filter_map(|s| s.failure.clone().map(|f| (s.seed, f)))
            .collect();
        let done: Vec<&&SeedSummary> = sorted.iter().filter(|s| s.completed()).collect();
        let mut stats = BTreeMap::new();
        if !done.is_empty() {
            for &m in metrics {
                let vals = done
                    .iter()
                    .map(|s| {
                        s.record
                            .test_metrics
                            .get(&m)
                            .copied()
                            .ok_or_else(|| Error::usage(format!("seed {} has no {m}", s.seed)))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                stats.insert(m, Stat::of(&vals)?);
            }
        }
        Ok(Self {
            fingerprint,
            seeds: sorted.iter().map(|s| s.seed).collect(),
            failed,
            metrics: stats,
            note: REPORT_NOTE.into(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub seeds: Vec<SeedSummary>,
    pub aggregate: Aggregate,
}

/// Seeds run on the rayon pool when `parallel`; each run is sequential either way.
fn for_seeds<T: Send>(seeds: &[u64], parallel: bool, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    if parallel {
        seeds.par_iter().map(|&s| f(s)).collect()
    } else {
        seeds.iter().map(|&s| f(s)).collect()
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn seed_csv(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed-{seed}.csv"))
}

pub fn seed_json(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed-{seed}.json"))
}

/// One run of `cfg` with its seed replaced; run failures become a summary, not an error.
pub fn run_seed(cfg: &TrainConfig, g: &Graph, seed: u64) -> Result<SeedSummary> {
    let cfg = TrainConfig { seed, ..cfg.clone() };
    Ok(match run_scheme(&cfg, g) {
        Ok(out) => SeedSummary {
            seed,
            failure: out.record.aborted.clone(),
            record: out.record,
        },
        Err(e @ (Error::Numeric { .. } | Error::Sampling(_))) => SeedSummary {
            seed,
            failure: Some(e.to_string()),
            record: RunRecord {
                fingerprint: cfg.fingerprint(),
                aborted: Some(e.to_string()),
                ..Default::default()
            },
        },
        Err(e) => return Err(e),
    })
}

/// Runs every seed on `g`, writing `seed-<s>.csv`, `seed-<s>.json` and
/// `aggregate.json` into `out`.
pub fn run_experiment_on(cfg: &ExperimentConfig, g: &Graph, out: &Path, parallel: bool) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    create_dir(out)?;
    let seeds = for_seeds(&cfg.seeds, parallel, |seed| {
        let s = run_seed(&cfg.train, g, seed)?;
        write(&seed_csv(out, seed), &write_csv(&s.record.rows)?)?;
        write(&seed_json(out, seed), &serde_json::to_string_pretty(&s)?)?;
        Ok(s)
    })?;
    let aggregate = Aggregate::from_seeds(cfg.train.fingerprint(), &seeds, &cfg.metric_set())?;
    write(&out.join(AGGREGATE_FILE), &serde_json::to_string_pretty(&aggregate)?)?;
    Ok(ExperimentOutcome { seeds, aggregate })
}

/// Loads the dataset (relative files against `base`) and runs the experiment.
pub fn run_experiment(cfg: &ExperimentConfig, base: &Path, out: &Path, parallel: bool) -> Result<ExperimentOutcome> {
    let g = cfg.dataset.load(base)?;
    run_experiment_on(cfg, &g, out, parallel)
}

pub const DEFAULT_GRID: [(f64, f64); 4] = [(1.0, 1.0), (1.0, 5.0), (5.0, 1.0), (5.0, 5.0)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescaleEntry {
    pub edge_scale: f64,
    pub attr_scale: f64,
    pub dir: PathBuf,
    pub aggregate: Aggregate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescaleReport {
    pub edge_task: String,
    pub attr_task: String,
    pub entries: Vec<RescaleEntry>,
    pub note: String,
}

impl RescaleReport {
    pub fn all_completed(&self) -> bool {
        self.entries.iter().all(|e| e.aggregate.all_completed())
    }

    /// max − min of the mean of `metric` across the grid.
    pub fn spread(&self, metric: Metric) -> Option<f64> {
        let means: Vec<f64> = self
            .entries
            .iter()
            .map(|e| e.aggregate.metrics.get(&metric).map(|s| s.mean))
            .collect::<Option<_>>()?;
        let max = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = means.iter().copied().fold(f64::INFINITY, f64::min);
        (!means.is_empty()).then_some(max - min)
    }
}

/// `cfg` with the loss scales of the two named auxiliary tasks replaced.
pub fn with_scales(cfg: &TrainConfig, edge_task: &str, attr_task: &str, scales: (f64, f64)) -> Result<TrainConfig> {
    let mut cfg = cfg.clone();
    for (name, scale) in [(edge_task, scales.0), (attr_task, scales.1)] {
        let t = cfg
            .aux_tasks
            .iter_mut()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::config(format!("no auxiliary task named `{name}`")))?;
        t.loss_scale = scale;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The full experiment once per scale pair, each in its own subdirectory of `out`.
pub fn rescale_experiment_on(
    cfg: &ExperimentConfig,
    g: &Graph,
    edge_task: &str,
    attr_task: &str,
    grid: &[(f64, f64)],
    out: &Path,
    parallel: bool,
) -> Result<RescaleReport> {
    if grid.is_empty() {
        return Err(Error::config("the scale grid is empty"));
    }
    let configs = grid
        .iter()
        .map(|&s| with_scales(&cfg.train, edge_task, attr_task, s))
        .collect::<Result<Vec<_>>>()?;
    create_dir(out)?;
    let mut entries = Vec::new();
    for (&(e, a), train) in grid.iter().zip(configs) {
        let dir = PathBuf::from(format!("edge{e}-attr{a}"));
        let sub = ExperimentConfig {
            train,
            ..cfg.clone()
        };
        let res = run_experiment_on(&sub, g, &out.join(&dir), parallel)?;
        entries.push(RescaleEntry {
            edge_scale: e,
            attr_scale: a,
            dir,
            aggregate: res.aggregate,
        });
    }
    let report = RescaleReport {
        edge_task: edge_task.into(),
        attr_task: attr_task.into(),
        entries,
        note: REPORT_NOTE.into(),
    };
    write(&out.join(RESCALE_FILE), &serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

pub fn rescale_experiment(
    cfg: &ExperimentConfig,
    base: &Path,
    edge_task: &str,
    attr_task: &str,
    grid: &[(f64, f64)],
    out: &Path,
    parallel: bool,
) -> Result<RescaleReport> {
    cfg.validate()?;
    let g = cfg.dataset.load(base)?;
    rescale_experiment_on(cfg, &g, edge_task, attr_task, grid, out, parallel)
}

/// Pre-trains once per seed on the pre-training partition and writes
/// `pretrain-seed-<s>.ckpt` (+ manifest) and `pretrain-seed-<s>.csv`.
pub fn pretrain_experiment(cfg: &ExperimentConfig, base: &Path, out: &Path, parallel: bool) -> Result<Vec<SeedSummary>> {
    cfg.validate()?;
    let g = cfg.dataset.load(base)?;
    create_dir(out)?;
    for_seeds(&cfg.seeds, parallel, |seed| {
        let train = TrainConfig { seed, ..cfg.train.clone() };
        let prep = prepare(&train, &g)?;
        match pretrain(&train, &prep.pretrain_graph) {
            Ok(p) => {
                p.checkpoint.save(&out.join(format!("pretrain-seed-{seed}.ckpt")))?;
                write(&out.join(format!("pretrain-seed-{seed}.csv")), &write_csv(&p.record.rows)?)?;
                Ok(SeedSummary {
                    seed,
                    failure: None,
                    record: p.record,
                })
            }
            Err(e @ Error::Numeric { .. }) => Ok(SeedSummary {
                seed,
                failure: Some(e.to_string()),
                record: RunRecord::default(),
            }),
            Err(e) => Err(e),
        }
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn format_aggregate(s: &mut String, a: &Aggregate) {
    for (m, st) in &a.metrics {
        let _ = writeln!(s, "  {:<9} {:.4} ± {:.4}  (n={})", m.name(), st.mean, st.std, st.n);
    }
    for (seed, why) in &a.failed {
        let _ = writeln!(s, "  seed {seed} failed: {why}");
    }
}

/// Text report of a run directory (`aggregate.json`) or a rescale directory (`rescale.json`).
pub fn report(dir: &Path) -> Result<String> {
    let mut s = format!("{REPORT_NOTE}\n\n");
    let rescale = dir.join(RESCALE_FILE);
    let aggregate = dir.join(AGGREGATE_FILE);
    if rescale.exists() {
        let r: RescaleReport = read_json(&rescale)?;
        let _ = writeln!(s, "loss-scale grid ({} / {})", r.edge_task, r.attr_task);
        for e in &r.entries {
            let _ = writeln!(s, "{}={} {}={}", r.edge_task, e.edge_scale, r.attr_task, e.attr_scale);
            format_aggregate(&mut s, &e.aggregate);
        }
        if let Some(m) = r.entries.first().and_then(|e| e.aggregate.metrics.keys().next().copied()) {
            if let Some(sp) = r.spread(m) {
                let _ = writeln!(s, "spread of mean {}: {:.4}", m.name(), sp);
            }
        }
    } else if aggregate.exists() {
        let a: Aggregate = read_json(&aggregate)?;
        let _ = writeln!(s, "seeds {:?}  config {}", a.seeds, &a.fingerprint[..a.fingerprint.len().min(12)]);
        format_aggregate(&mut s, &a);
    } else {
        return Err(Error::usage(format!(
            "{} holds neither {AGGREGATE_FILE} nor {RESCALE_FILE}",
            dir.display()
        )));
    }
    Ok(s)
}
