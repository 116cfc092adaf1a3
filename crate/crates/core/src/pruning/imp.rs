use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{extend_mask, PruneScope};
use crate::corpus::DatasetSplit;
use crate::error::{ensure, Error, Result};
use crate::masks::{Mask, Provenance};
use crate::model::{train, HistoryPoint, ModelConfig, ParamSet, TrainConfig};
use crate::numerics::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImpSchedule {
    /// Percent of the original prunable coordinates removed per round.
    pub rate_percent: u32,
    pub target_percent: u32,
    pub scope: PruneScope,
    pub train: TrainConfig,
}

impl Default for ImpSchedule {
    fn default() -> Self {
        ImpSchedule {
            rate_percent: 10,
            target_percent: 50,
            scope: PruneScope::Global,
            train: TrainConfig::default(),
        }
    }
}

impl ImpSchedule {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.rate_percent > 0 && self.rate_percent <= self.target_percent,
            "pruning rate {}% must be in (0, target {}%]",
            self.rate_percent,
            self.target_percent
        );
        ensure!(self.target_percent < 100, "target sparsity must be below 100%");
        ensure!(
            self.target_percent.is_multiple_of(self.rate_percent),
            "target {}% is not a whole number of {}% rounds",
            self.target_percent,
            self.rate_percent
        );
        Ok(())
    }

    pub fn rounds(&self) -> u32 {
        self.target_percent / self.rate_percent
    }

    /// Sparsity after `round` (1-based) rounds.
    pub fn sparsity_after(&self, round: u32) -> f64 {
        f64::from(round * self.rate_percent) / 100.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpRound {
    pub round: u32,
    pub seed: u64,
    pub zeros_before: usize,
    pub zeros_after: usize,
    pub sparsity_after: f64,
    pub best_metric: f64,
    pub best_step: usize,
    pub total_steps: usize,
    pub history: Vec<HistoryPoint>,
    /// Every kept coordinate of the round's starting point equalled θ₀ bit for bit.
    pub rewind_exact: bool,
    pub mask_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpTrace {
    pub rounds: Vec<ImpRound>,
    /// Mask after each round.
    pub masks: Vec<Mask>,
}

fn rewind_exact(start: &ParamSet, theta0: &ParamSet, mask: &Mask) -> bool {
    let keep = mask.to_bools();
    let a = start.prunable_values();
    let b = theta0.prunable_values();
    let prunable_ok = a
        .iter()
        .zip(&b)
        .zip(&keep)
        .all(|((x, y), k)| if *k { x.to_bits() == y.to_bits() } else { *x == 0.0 });
    let others_ok = start
        .entries()
        .iter()
        .zip(theta0.entries())
        .filter(|(e, _)| !e.prunable)
        .all(|(x, y)| x.values.iter().zip(&y.values).all(|(u, v)| u.to_bits() == v.to_bits()));
    prunable_ok && others_ok
}

/// Iterative magnitude pruning: train `m ⊙ θ₀` to its peak, prune the
/// lowest-magnitude kept coordinates, rewind, repeat until the target sparsity.
pub fn imp(
    cfg: &ModelConfig,
    theta0: &ParamSet,
    split: &DatasetSplit,
    schedule: &ImpSchedule,
) -> Result<(Mask, ImpTrace)> {
    schedule.validate()?;
    let mut mask = Mask::ones(theta0);
    let n = mask.len();
    let mut trace = ImpTrace {
        rounds: Vec::new(),
        masks: Vec::new(),
    };
    for round in 1..=schedule.rounds() {
        let start = mask.applied(theta0)?;
        let rewound = rewind_exact(&start, theta0, &mask);
        let seed = derive_seed(schedule.train.seed, &[u64::from(round)]);
        let outcome = train(cfg, &start, Some(&mask), split, &schedule.train.with_seed(seed))
            .map_err(|e| e.context(format!("pruning round {round}")))?;
        let scores: Vec<f64> = outcome.best_params.prunable_values().iter().map(|v| v.abs()).collect();
        let target = schedule.sparsity_after(round);
        let provenance = Provenance {
            task: Some(split.task_kind),
            languages: vec![split.language_id.clone()],
            seed: schedule.train.seed,
            rounds: round,
            ..Provenance::new("imp")
        };
        let zeros_before = mask.zeros();
        mask = extend_mask(&mask, &scores, target, schedule.scope, provenance)?;
        trace.rounds.push(ImpRound {
            round,
            seed,
            zeros_before,
            zeros_after: mask.zeros(),
            sparsity_after: mask.sparsity(),
            best_metric: outcome.best_metric,
            best_step: outcome.best_step,
            total_steps: outcome.total_steps,
            history: outcome.history,
            rewind_exact: rewound,
            mask_digest: mask.digest(),
        });
        trace.masks.push(mask.clone());
        debug_assert!(mask.zeros() <= n);
    }
    Ok((mask, trace))
}

/// One JSON record per round.
pub fn write_trace_jsonl(trace: &ImpTrace, mut out: impl Write) -> Result<()> {
    for r in &trace.rounds {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Format(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
