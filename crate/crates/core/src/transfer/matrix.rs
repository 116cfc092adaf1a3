use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{degradation, imp_per_seed, train_subnetwork, FullModelBaseline, SeedOutcome, Setup};
use crate::corpus::{build_combined_task_split, DatasetSplit, TaskKind};
use crate::error::{ensure, Result};
use crate::masks::{random_mask, zero_count, Mask};
use crate::model::MetricOrientation;
use crate::numerics::derive_seed;
use crate::pruning::ImpSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferCell {
    pub source: String,
    pub target: String,
    pub outcome: SeedOutcome,
    /// Against the target's own ticket `a(t,t)`, baseline-favoring orientation.
    pub degradation: f64,
    /// Degradation within one standard deviation of the target's full model.
    pub within_one_std: bool,
    /// Peaks no later than the target's full model.
    pub no_slower: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub task: TaskKind,
    pub sparsity: f64,
    pub languages: Vec<String>,
    /// `cells[s][t]`: source mask `s` retrained on target `t`.
    pub cells: Vec<Vec<TransferCell>>,
    /// Random masks at the same sparsity, per target.
    pub random_row: Vec<TransferCell>,
    /// Dense model per target.
    pub full_row: Vec<FullModelBaseline>,
}

impl TransferMatrix {
    pub fn orientation(&self) -> MetricOrientation {
        MetricOrientation::for_task(self.task)
    }

    pub fn value(&self, source: usize, target: usize) -> f64 {
        self.cells[source][target].outcome.mean_metric
    }

    pub fn index_of(&self, language: &str) -> Option<usize> {
        self.languages.iter().position(|l| l == language)
    }
}

fn cell(source: &str, target: &str, outcome: SeedOutcome, diag: f64, base: &FullModelBaseline) -> TransferCell {
    let d = degradation(outcome.orientation(), diag, outcome.mean_metric);
    TransferCell {
        source: source.to_string(),
        target: target.to_string(),
        within_one_std: d <= base.epsilon(),
        no_slower: outcome.mean_step <= base.step(),
        degradation: d,
        outcome,
    }
}

/// Retrain every language's mask on every language's data. `masks[s]` holds
/// one mask, or one per seed, for `splits[s]`'s language; `baselines[t]` is the
/// dense model on `splits[t]`.
pub fn cross_language_transfer(
    setup: &Setup,
    splits: &[DatasetSplit],
    masks: &[Vec<Mask>],
    baselines: &[FullModelBaseline],
    sparsity: f64,
) -> Result<TransferMatrix> {
    let n = splits.len();
    ensure!(
        n >= 1 && masks.len() == n && baselines.len() == n,
        "splits, masks and baselines must align"
    );
    let task = splits[0].task_kind;
    ensure!(
        splits.iter().all(|s| s.task_kind == task),
        "all splits must share a task"
    );
    for (s, ms) in masks.iter().enumerate() {
        ensure!(!ms.is_empty(), "no mask for source {}", splits[s].language_id);
        for m in ms {
            m.align(setup.theta0)?;
            ensure!(
                m.zeros().abs_diff(zero_count(sparsity, m.len())) <= 1,
                "mask for {} has sparsity {}, expected {sparsity}",
                splits[s].language_id,
                m.sparsity()
            );
        }
    }
    let jobs: Vec<(usize, usize)> = (0..n).flat_map(|s| (0..n).map(move |t| (s, t))).collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(s, t)| {
            train_subnetwork(setup, &masks[s], &splits[t]).map_err(|e| {
                e.context(format!(
                    "transfer {} -> {}",
                    splits[s].language_id, splits[t].language_id
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let diag: Vec<f64> = (0..n).map(|t| outcomes[t * n + t].mean_metric).collect();
    let cells = (0..n)
        .map(|s| {
            (0..n)
                .map(|t| {
                    cell(
                        &splits[s].language_id,
                        &splits[t].language_id,
                        outcomes[s * n + t].clone(),
                        diag[t],
                        &baselines[t],
                    )
                })
                .collect()
        })
        .collect();
    let random: Vec<Mask> = setup
        .seeds
        .iter()
        .map(|&seed| random_mask(setup.theta0, sparsity, derive_seed(seed, &[0x7a4d])))
        .collect::<Result<_>>()?;
    let random_row = (0..n)
        .into_par_iter()
        .map(|t| {
            let o = train_subnetwork(setup, &random, &splits[t])?;
            Ok(cell("random", &splits[t].language_id, o, diag[t], &baselines[t]))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TransferMatrix {
        task,
        sparsity,
        languages: splits.iter().map(|s| s.language_id.clone()).collect(),
        cells,
        random_row,
        full_row: baselines.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTaskGrid {
    pub language: String,
    pub tasks: Vec<TaskKind>,
    /// `outcomes[s][t]`: mask found on task `s` retrained on task `t`.
    pub outcomes: Vec<Vec<SeedOutcome>>,
    /// Against each target task's own ticket, baseline-favoring orientation.
    pub degradation: Vec<Vec<f64>>,
}

impl CrossTaskGrid {
    /// Mean degradation over off-diagonal cells.
    pub fn mean_off_diagonal(&self) -> f64 {
        let n = self.tasks.len();
        let vals: Vec<f64> = (0..n)
            .flat_map(|s| (0..n).filter(move |&t| t != s).map(move |t| (s, t)))
            .map(|(s, t)| self.degradation[s][t])
            .collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }
}

/// Retrain each task's mask on every task of one language. `setups[t]` carries
/// the training config for task `t`.
pub fn cross_task_transfer(setups: &[Setup], splits: &[DatasetSplit], masks: &[Vec<Mask>]) -> Result<CrossTaskGrid> {
    let n = splits.len();
    ensure!(
        n >= 1 && setups.len() == n && masks.len() == n,
        "setups, splits and masks must align"
    );
    let language = splits[0].language_id.clone();
    ensure!(
        splits.iter().all(|s| s.language_id == language),
        "cross-task transfer needs one language"
    );
    let jobs: Vec<(usize, usize)> = (0..n).flat_map(|s| (0..n).map(move |t| (s, t))).collect();
    let flat = jobs
        .par_iter()
        .map(|&(s, t)| train_subnetwork(&setups[t], &masks[s], &splits[t]))
        .collect::<Result<Vec<_>>>()?;
    let outcomes: Vec<Vec<SeedOutcome>> = flat.chunks(n).map(|c| c.to_vec()).collect();
    let degradation = (0..n)
        .map(|s| {
            (0..n)
                .map(|t| {
                    let o = &outcomes[s][t];
                    degradation(o.orientation(), outcomes[t][t].mean_metric, o.mean_metric)
                })
                .collect()
        })
        .collect();
    Ok(CrossTaskGrid {
        language,
        tasks: splits.iter().map(|s| s.task_kind).collect(),
        outcomes,
        degradation,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultilingualTicket {
    /// One mask per seed, found on the combined split.
    pub masks: Vec<Mask>,
    pub combined_train_size: usize,
    /// The combined mask retrained on each target.
    pub row: Vec<TransferCell>,
    /// Targets where the combined mask beats every other single-language source.
    pub wins: Vec<bool>,
}

impl MultilingualTicket {
    pub fn win_count(&self) -> usize {
        self.wins.iter().filter(|w| **w).count()
    }
}

/// IMP on a combined split (the first `keep_fraction` of each language), then
/// retraining on every target; compared against the single-source rows of `matrix`.
pub fn multilingual_ticket(
    setup: &Setup,
    splits: &[DatasetSplit],
    keep_fraction: f64,
    schedule: &ImpSchedule,
    matrix: &TransferMatrix,
) -> Result<MultilingualTicket> {
    let combined = build_combined_task_split(splits, keep_fraction)?;
    ensure!(
        matrix.languages.len() == splits.len(),
        "matrix and splits cover different languages"
    );
    let traces = imp_per_seed(setup, &combined, schedule)?;
    let masks: Vec<Mask> = traces
        .iter()
        .map(|t| t.masks.last().cloned().expect("at least one round"))
        .collect();
    let n = splits.len();
    let outcomes = (0..n)
        .into_par_iter()
        .map(|t| train_subnetwork(setup, &masks, &splits[t]))
        .collect::<Result<Vec<_>>>()?;
    let orient = matrix.orientation();
    let mut row = Vec::with_capacity(n);
    let mut wins = Vec::with_capacity(n);
    for (t, o) in outcomes.into_iter().enumerate() {
        let v = orient.to_higher(o.mean_metric);
        wins.push(
            (0..n)
                .filter(|&s| s != t)
                .all(|s| v > orient.to_higher(matrix.value(s, t))),
        );
        row.push(cell(
            "combined",
            &splits[t].language_id,
            o,
            matrix.value(t, t),
            &matrix.full_row[t],
        ));
    }
    Ok(MultilingualTicket {
        masks,
        combined_train_size: combined.train.len(),
        row,
        wins,
    })
}
