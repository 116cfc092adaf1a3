//! Winning-ticket verdicts and transfer of sub-networks across languages and tasks.

mod matrix;
mod report;

pub use matrix::{
    cross_language_transfer, cross_task_transfer, multilingual_ticket, CrossTaskGrid, MultilingualTicket, TransferCell,
    TransferMatrix,
};
pub use report::{relative_drop, sign_test, write_transfer_csv, write_verdicts_jsonl};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSplit, TaskKind};
use crate::error::{ensure, Result};
use crate::masks::Mask;
use crate::model::{train, MetricOrientation, ModelConfig, ParamSet, TrainConfig};
use crate::numerics::mean_std;
use crate::pruning::{imp, ImpSchedule, ImpTrace};

/// Shared inputs of every training job in an experiment.
#[derive(Debug, Clone, Copy)]
pub struct Setup<'a> {
    pub model: &'a ModelConfig,
    pub theta0: &'a ParamSet,
    pub train: &'a TrainConfig,
    /// Run seeds; every sub-network and baseline is trained once per seed.
    pub seeds: &'a [u64],
}

impl Setup<'_> {
    fn check(&self) -> Result<()> {
        ensure!(!self.seeds.is_empty(), "at least one seed is required");
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub best_metric: f64,
    pub best_step: usize,
    pub total_steps: usize,
}

/// Seed-aggregated outcome of training one (sub-)network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub task: TaskKind,
    pub runs: Vec<RunSummary>,
    pub mean_metric: f64,
    pub std_metric: f64,
    pub mean_step: f64,
}

impl SeedOutcome {
    pub fn from_runs(task: TaskKind, runs: Vec<RunSummary>) -> SeedOutcome {
        let metrics: Vec<f64> = runs.iter().map(|r| r.best_metric).collect();
        let (mean_metric, std_metric) = mean_std(&metrics);
        let mean_step = runs.iter().map(|r| r.best_step as f64).sum::<f64>() / runs.len().max(1) as f64;
        SeedOutcome {
            task,
            runs,
            mean_metric,
            std_metric,
            mean_step,
        }
    }

    pub fn orientation(&self) -> MetricOrientation {
        MetricOrientation::for_task(self.task)
    }
}

/// Full-model reference: mean `a`, seed standard deviation `ε` and mean peak step `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullModelBaseline {
    pub task: TaskKind,
    pub language: String,
    pub outcome: SeedOutcome,
}

impl FullModelBaseline {
    pub fn mean(&self) -> f64 {
        self.outcome.mean_metric
    }

    pub fn epsilon(&self) -> f64 {
        self.outcome.std_metric
    }

    pub fn step(&self) -> f64 {
        self.outcome.mean_step
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TicketVerdict {
    pub subnet_metric: f64,
    pub subnet_step: f64,
    pub baseline_metric: f64,
    pub baseline_step: f64,
    pub epsilon: f64,
    /// Loss of quality relative to the baseline; positive means the sub-network is worse.
    pub degradation: f64,
    pub within_epsilon: bool,
    pub no_slower: bool,
    pub is_winning: bool,
}

/// Train `mask ⊙ θ₀` on `split` once per seed.
pub fn train_subnetwork(setup: &Setup, masks: &[Mask], split: &DatasetSplit) -> Result<SeedOutcome> {
    setup.check()?;
    ensure!(
        masks.len() == 1 || masks.len() == setup.seeds.len(),
        "need one mask or one mask per seed, got {}",
        masks.len()
    );
    let runs = setup
        .seeds
        .par_iter()
        .enumerate()
        .map(|(k, &seed)| {
            let mask = &masks[k % masks.len()];
            let o = train(
                setup.model,
                setup.theta0,
                Some(mask),
                split,
                &setup.train.with_seed(seed),
            )
            .map_err(|e| e.context(format!("seed {seed} on {} {}", split.task_kind, split.language_id)))?;
            Ok(RunSummary {
                seed,
                best_metric: o.best_metric,
                best_step: o.best_step,
                total_steps: o.total_steps,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SeedOutcome::from_runs(split.task_kind, runs))
}

/// Train the unmasked model from θ₀ once per seed (at least three seeds).
pub fn make_baseline(setup: &Setup, split: &DatasetSplit) -> Result<FullModelBaseline> {
    ensure!(
        setup.seeds.len() >= 3,
        "a baseline needs at least 3 seeds, got {}",
        setup.seeds.len()
    );
    let ones = Mask::ones(setup.theta0);
    Ok(FullModelBaseline {
        task: split.task_kind,
        language: split.language_id.clone(),
        outcome: train_subnetwork(setup, std::slice::from_ref(&ones), split)?,
    })
}

/// Degradation in baseline-favoring orientation.
pub fn degradation(orientation: MetricOrientation, baseline: f64, subnet: f64) -> f64 {
    orientation.to_higher(baseline) - orientation.to_higher(subnet)
}

/// Winning iff the sub-network is within one baseline standard deviation and peaks no later.
pub fn verdict(subnet: &SeedOutcome, baseline: &FullModelBaseline) -> Result<TicketVerdict> {
    ensure!(
        subnet.task == baseline.task,
        "sub-network task {} differs from baseline task {}",
        subnet.task,
        baseline.task
    );
    let d = degradation(subnet.orientation(), baseline.mean(), subnet.mean_metric);
    let within_epsilon = d <= baseline.epsilon();
    let no_slower = subnet.mean_step <= baseline.step();
    Ok(TicketVerdict {
        subnet_metric: subnet.mean_metric,
        subnet_step: subnet.mean_step,
        baseline_metric: baseline.mean(),
        baseline_step: baseline.step(),
        epsilon: baseline.epsilon(),
        degradation: d,
        within_epsilon,
        no_slower,
        is_winning: within_epsilon && no_slower,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub sparsity: f64,
    pub mask_digests: Vec<String>,
    pub outcome: SeedOutcome,
    pub verdict: TicketVerdict,
}

/// IMP traces for every seed, run to the largest requested sparsity.
pub fn imp_per_seed(setup: &Setup, split: &DatasetSplit, schedule: &ImpSchedule) -> Result<Vec<ImpTrace>> {
    setup.check()?;
    setup
        .seeds
        .par_iter()
        .map(|&seed| {
            let sched = ImpSchedule {
                train: setup.train.with_seed(seed),
                ..schedule.clone()
            };
            imp(setup.model, setup.theta0, split, &sched).map(|(_, t)| t)
        })
        .collect()
}

/// Mask at sparsity `s` from a nested IMP trace (`s = 0` gives the dense mask).
pub fn mask_at(trace: &ImpTrace, theta0: &ParamSet, schedule: &ImpSchedule, s: f64) -> Result<Mask> {
    let percent = (s * 100.0).round() as u32;
    ensure!(
        ((s * 100.0) - f64::from(percent)).abs() < 1e-9 && percent.is_multiple_of(schedule.rate_percent),
        "sparsity {s} is not a multiple of the pruning rate {}%",
        schedule.rate_percent
    );
    if percent == 0 {
        return Ok(Mask::ones(theta0));
    }
    let round = (percent / schedule.rate_percent) as usize;
    ensure!(
        round <= trace.masks.len(),
        "trace has {} rounds, sparsity {s} needs {round}",
        trace.masks.len()
    );
    Ok(trace.masks[round - 1].clone())
}

/// Verdicts at each sparsity, using one nested IMP trace per seed.
pub fn sparsity_sweep(
    setup: &Setup,
    split: &DatasetSplit,
    sparsities: &[f64],
    schedule: &ImpSchedule,
    baseline: &FullModelBaseline,
) -> Result<Vec<SweepPoint>> {
    let max = sparsities.iter().copied().fold(0.0, f64::max);
    let sched = ImpSchedule {
        target_percent: ((max * 100.0).round() as u32).max(schedule.rate_percent),
        ..schedule.clone()
    };
    let traces = imp_per_seed(setup, split, &sched)?;
    sparsities
        .iter()
        .map(|&s| {
            let masks = traces
                .iter()
                .map(|t| mask_at(t, setup.theta0, &sched, s))
                .collect::<Result<Vec<_>>>()?;
            let outcome = train_subnetwork(setup, &masks, split)?;
            let verdict = verdict(&outcome, baseline)?;
            Ok(SweepPoint {
                sparsity: s,
                mask_digests: masks.iter().map(Mask::digest).collect(),
                outcome,
                verdict,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests;
