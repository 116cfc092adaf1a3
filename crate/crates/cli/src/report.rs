//! Consolidated report over every stage's outputs, plus plot-ready long tables.

use serde::{Deserialize, Serialize};
use ticketlab::corpus::TaskKind;
use ticketlab::model::MetricOrientation;
use ticketlab::transfer::{relative_drop, verdict, FullModelBaseline, TransferMatrix};

use crate::error::Result;
use crate::pipeline::{
    baselines_json, compare_json, overlap_json, transfer_json, ComparisonRow, Experiment, Outputs, OverlapSummary,
    PROFILE_CSV, RETRIEVAL_CSV,
};

pub const REPORT_JSON: &str = "report/report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub task: TaskKind,
    pub sparsity: f64,
    pub language: String,
    pub subnet_metric: f64,
    pub subnet_step: f64,
    pub baseline_metric: f64,
    pub baseline_step: f64,
    pub epsilon: f64,
    pub degradation: f64,
    pub winning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub task: TaskKind,
    pub sparsity: f64,
    pub source: String,
    pub target: String,
    pub metric: f64,
    pub random_metric: f64,
    pub beats_random: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRow {
    pub task: TaskKind,
    pub sparsity: f64,
    pub source: String,
    pub relative_drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunerMean {
    pub task: TaskKind,
    pub sparsity: f64,
    pub method: String,
    /// Mean over languages of the seed-mean metric.
    pub mean_metric: f64,
    pub winning_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub pair: String,
    pub layer: usize,
    pub method: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub pair: String,
    pub k: usize,
    pub top1: f64,
    pub top5: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: TaskKind,
    pub orientation: MetricOrientation,
    pub baselines: Vec<FullModelBaseline>,
    pub verdicts: Vec<VerdictRow>,
    pub transfer: Vec<TransferRow>,
    pub relative_drops: Vec<DropRow>,
    pub overlap: Vec<OverlapSummary>,
    pub pruners: Vec<ComparisonRow>,
    pub pruner_means: Vec<PrunerMean>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_digest: String,
    pub languages: Vec<String>,
    pub run_seeds: Vec<u64>,
    pub tasks: Vec<TaskReport>,
    pub similarity: Vec<ProfileRow>,
    pub retrieval: Vec<RetrievalRow>,
}

impl Report {
    pub fn task(&self, task: TaskKind) -> Option<&TaskReport> {
        self.tasks.iter().find(|t| t.task == task)
    }
}

fn read_csv<T: for<'de> Deserialize<'de>>(e: &Experiment, path: &str) -> Result<Vec<T>> {
    let bytes =
        std::fs::read(e.root.join(path)).map_err(|err| crate::error::CliError::io(format!("reading {path}"), err))?;
    csv::Reader::from_reader(bytes.as_slice())
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|err| ticketlab::Error::Format(format!("{path}: {err}")).into())
}

fn csv_bytes<R: Serialize>(rows: impl IntoIterator<Item = R>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|err| ticketlab::Error::Format(err.to_string()))?;
    }
    w.into_inner()
        .map_err(|err| ticketlab::Error::Format(err.to_string()).into())
}

fn task_report(e: &Experiment, task: TaskKind) -> Result<TaskReport> {
    let baselines: Vec<FullModelBaseline> = e.read_json(&baselines_json(task))?;
    let orientation = MetricOrientation::for_task(task);
    let (mut verdicts, mut transfer, mut relative_drops) = (vec![], vec![], vec![]);
    for &s in &e.config.pruning.sparsities {
        let m: TransferMatrix = e.read_json(&transfer_json(task, s))?;
        let n = m.languages.len();
        for (t, baseline) in baselines.iter().enumerate() {
            let v = verdict(&m.cells[t][t].outcome, baseline)?;
            verdicts.push(VerdictRow {
                task,
                sparsity: s,
                language: m.languages[t].clone(),
                subnet_metric: v.subnet_metric,
                subnet_step: v.subnet_step,
                baseline_metric: v.baseline_metric,
                baseline_step: v.baseline_step,
                epsilon: v.epsilon,
                degradation: v.degradation,
                winning: v.is_winning,
            });
        }
        for src in 0..n {
            for t in (0..n).filter(|&t| t != src) {
                let metric = m.value(src, t);
                let random_metric = m.random_row[t].outcome.mean_metric;
                transfer.push(TransferRow {
                    task,
                    sparsity: s,
                    source: m.languages[src].clone(),
                    target: m.languages[t].clone(),
                    metric,
                    random_metric,
                    beats_random: orientation.better(metric, random_metric),
                });
            }
            relative_drops.push(DropRow {
                task,
                sparsity: s,
                source: m.languages[src].clone(),
                relative_drop: relative_drop(&m, src)?,
            });
        }
    }
    let overlap: Vec<OverlapSummary> = e.read_json(&overlap_json(task))?;
    let pruners: Vec<ComparisonRow> = if e.alternative_methods().is_empty() {
        Vec::new()
    } else {
        e.read_json(&compare_json(task))?
    };
    let mut pruner_means = Vec::new();
    for &s in &e.config.pruning.sparsities {
        let mut methods: Vec<&str> = pruners.iter().map(|r| r.method.as_str()).collect();
        methods.sort();
        methods.dedup();
        for method in methods {
            let rows: Vec<&ComparisonRow> = pruners
                .iter()
                .filter(|r| r.sparsity == s && r.method == method)
                .collect();
            pruner_means.push(PrunerMean {
                task,
                sparsity: s,
                method: method.to_string(),
                mean_metric: rows.iter().map(|r| r.mean_metric).sum::<f64>() / rows.len().max(1) as f64,
                winning_cells: rows.iter().filter(|r| r.winning).count(),
            });
        }
    }
    Ok(TaskReport {
        task,
        orientation,
        baselines,
        verdicts,
        transfer,
        relative_drops,
        overlap,
        pruners,
        pruner_means,
    })
}

pub(crate) fn build(e: &Experiment) -> Result<Outputs> {
    let tasks = e
        .tasks()
        .into_iter()
        .map(|t| task_report(e, t))
        .collect::<Result<Vec<_>>>()?;
    let report = Report {
        config_digest: e.config.digest(),
        languages: e.language_ids(),
        run_seeds: e.config.run_seeds(),
        similarity: read_csv(e, PROFILE_CSV)?,
        retrieval: read_csv(e, RETRIEVAL_CSV)?,
        tasks,
    };
    let mut json = serde_json::to_vec_pretty(&report).map_err(|err| ticketlab::Error::Format(err.to_string()))?;
    json.push(b'\n');
    let t = &report.tasks;
    Ok(vec![
        (REPORT_JSON.into(), json),
        (
            "report/verdicts.csv".into(),
            csv_bytes(t.iter().flat_map(|r| &r.verdicts))?,
        ),
        (
            "report/transfer_vs_random.csv".into(),
            csv_bytes(t.iter().flat_map(|r| &r.transfer))?,
        ),
        (
            "report/relative_drop.csv".into(),
            csv_bytes(t.iter().flat_map(|r| &r.relative_drops))?,
        ),
        (
            "report/overlap.csv".into(),
            csv_bytes(t.iter().flat_map(|r| &r.overlap))?,
        ),
        (
            "report/pruners.csv".into(),
            csv_bytes(t.iter().flat_map(|r| &r.pruner_means))?,
        ),
    ])
}

/// Read a finished run's report.
pub fn load(root: &std::path::Path) -> Result<Report> {
    let path = root.join(REPORT_JSON);
    let bytes =
        std::fs::read(&path).map_err(|err| crate::error::CliError::io(format!("reading {}", path.display()), err))?;
    serde_json::from_slice(&bytes).map_err(|err| ticketlab::Error::Format(format!("{}: {err}", path.display())).into())
}
