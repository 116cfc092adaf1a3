use serde::{Deserialize, Serialize};

use super::{extend_mask, PruneScope};
use crate::corpus::{DatasetSplit, Example, Labels, TaskKind};
use crate::error::{ensure, Result};
use crate::masks::{Mask, Provenance};
use crate::model::{loss_and_grad, predict_proba, train, ModelConfig, ParamSet, TrainConfig};
use crate::numerics::{derive_seed, Rng};

/// Labels used for the Fisher gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherMode {
    /// Observed labels (empirical Fisher).
    #[default]
    Empirical,
    /// Labels drawn from the model's own predictive distribution.
    Sampled,
}

/// `|θ_ft - θ₀|` over the prunable coordinates.
pub fn diff_scores(theta0: &ParamSet, tuned: &ParamSet) -> Vec<f64> {
    let before = theta0.prunable_values();
    tuned
        .prunable_values()
        .iter()
        .zip(&before)
        .map(|(a, b)| (a - b).abs())
        .collect()
}

/// Prune the coordinates that moved least during one fine-tuning run from θ₀.
pub fn diff_from_init_mask(
    cfg: &ModelConfig,
    theta0: &ParamSet,
    split: &DatasetSplit,
    s: f64,
    tcfg: &TrainConfig,
) -> Result<Mask> {
    ensure!(s > 0.0 && s < 1.0, "sparsity {s} outside (0, 1)");
    let outcome = train(cfg, theta0, None, split, tcfg)?;
    let scores = diff_scores(theta0, &outcome.best_params);
    let provenance = Provenance {
        task: Some(split.task_kind),
        languages: vec![split.language_id.clone()],
        seed: tcfg.seed,
        rounds: 1,
        ..Provenance::new("diff_from_init")
    };
    extend_mask(&Mask::ones(theta0), &scores, s, PruneScope::Global, provenance)
}

fn with_sampled_labels(ex: &Example, probs: &[Vec<f64>], rng: &mut Rng) -> Example {
    let mut draws = probs.iter().map(|p| rng.categorical(p));
    let mut ex = ex.clone();
    ex.labels = match &ex.labels {
        Labels::Mlm { positions, .. } => Labels::Mlm {
            positions: positions.clone(),
            targets: positions.iter().map(|_| draws.next().unwrap() as u32).collect(),
        },
        Labels::Tag(tags) => Labels::Tag(tags.iter().map(|_| draws.next().unwrap() as u8).collect()),
        Labels::Cls(_) => Labels::Cls(draws.next().unwrap() as u8),
    };
    ex
}

/// Diagonal Fisher over the prunable coordinates: the mean over `examples` of
/// the squared gradient of each example's log-likelihood.
pub fn fisher_diagonal(
    cfg: &ModelConfig,
    params: &ParamSet,
    examples: &[Example],
    task: TaskKind,
    mode: FisherMode,
    seed: u64,
) -> Result<Vec<f64>> {
    ensure!(!examples.is_empty(), "Fisher estimate needs at least one example");
    let prunable = params.prunable_indices();
    let mut fisher = vec![0.0; params.num_prunable()];
    for (i, ex) in examples.iter().enumerate() {
        let ex = match mode {
            FisherMode::Empirical => ex.clone(),
            FisherMode::Sampled => {
                let probs = predict_proba(cfg, params, None, std::slice::from_ref(ex), task)?;
                with_sampled_labels(ex, &probs, &mut Rng::new(derive_seed(seed, &[i as u64])))
            }
        };
        let (_, counts, grads) = loss_and_grad(cfg, params, None, std::slice::from_ref(&ex), task)?;
        // Gradients are of the mean loss; rescale to the summed log-likelihood.
        let scale = counts.units as f64;
        let mut k = 0;
        for &e in &prunable {
            for g in &grads[e] {
                let g = g * scale;
                fisher[k] += g * g;
                k += 1;
            }
        }
    }
    let n = examples.len() as f64;
    fisher.iter_mut().for_each(|f| *f /= n);
    Ok(fisher)
}

/// Prune the coordinates with the least Fisher information at θ₀, estimated
/// on `sample_count` training examples drawn with `seed`.
pub fn fisher_mask(
    cfg: &ModelConfig,
    theta0: &ParamSet,
    split: &DatasetSplit,
    s: f64,
    sample_count: usize,
    seed: u64,
    mode: FisherMode,
) -> Result<Mask> {
    ensure!(s > 0.0 && s < 1.0, "sparsity {s} outside (0, 1)");
    ensure!(
        sample_count > 0 && sample_count <= split.train.len(),
        "sample_count {sample_count} must be in 1..={}",
        split.train.len()
    );
    let picks = Rng::new(seed).choose_sorted(split.train.len(), sample_count);
    let sample: Vec<Example> = picks.iter().map(|&i| split.train[i].clone()).collect();
    let scores = fisher_diagonal(cfg, theta0, &sample, split.task_kind, mode, seed)?;
    let provenance = Provenance {
        task: Some(split.task_kind),
        languages: vec![split.language_id.clone()],
        seed,
        rounds: 1,
        ..Provenance::new("fisher")
    };
    extend_mask(&Mask::ones(theta0), &scores, s, PruneScope::Global, provenance)
}
