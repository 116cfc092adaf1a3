use serde::{Deserialize, Serialize};

use super::config::{reinit_head, MetricOrientation, ModelConfig, TrainConfig};
use super::params::ParamSet;
use super::transformer::{evaluate, loss_and_grad};
use crate::corpus::{DatasetSplit, TaskKind};
use crate::error::{ensure, Error, Result};
use crate::masks::Mask;
use crate::numerics::{derive_labeled, derive_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryPoint {
    pub step: usize,
    /// Mean training loss since the previous evaluation (none at step 0).
    pub train_loss: Option<f64>,
    pub valid_metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub task: TaskKind,
    pub best_metric: f64,
    pub best_step: usize,
    pub total_steps: usize,
    /// Parameters at the best evaluation.
    pub best_params: ParamSet,
    /// Parameters after the last optimizer step.
    pub final_params: ParamSet,
    pub history: Vec<HistoryPoint>,
    pub metric_orientation: MetricOrientation,
}

/// Validation metric of `mask ⊙ params`: perplexity, tagging micro-F1 or accuracy.
pub fn eval_metric(
    cfg: &ModelConfig,
    params: &ParamSet,
    mask: Option<&Mask>,
    split: &DatasetSplit,
    task: TaskKind,
) -> Result<f64> {
    Ok(evaluate(cfg, params, mask, &split.valid, task)?.metric(task))
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

/// Train from `params0` with Adam and a linear-to-zero learning rate, keeping
/// the best validation checkpoint. Masked coordinates stay exactly zero.
pub fn train(
    cfg: &ModelConfig,
    params0: &ParamSet,
    mask: Option<&Mask>,
    split: &DatasetSplit,
    tcfg: &TrainConfig,
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    ensure!(
        !split.train.is_empty() && !split.valid.is_empty(),
        "split has no training or validation data"
    );
    let task = split.task_kind;
    let orientation = MetricOrientation::for_task(task);
    let mut params = params0.clone();
    if tcfg.reinit_task_head && task != TaskKind::Mlm {
        reinit_head(cfg, &mut params, task, derive_labeled(tcfg.seed, "head"));
    }
    if let Some(m) = mask {
        m.apply(&mut params)?;
    }
    let n = split.train.len();
    let steps_per_epoch = n.div_ceil(tcfg.batch_size);
    let total = steps_per_epoch * tcfg.epochs;
    let eval_every = if tcfg.eval_every == 0 {
        steps_per_epoch
    } else {
        tcfg.eval_every
    };

    let first = eval_metric(cfg, &params, None, split, task)?;
    let mut history = vec![HistoryPoint {
        step: 0,
        train_loss: None,
        valid_metric: first,
    }];
    let (mut best_metric, mut best_step, mut best_params) = (first, 0, params.clone());
    let mut adam = Adam {
        m: params.zeros_like(),
        v: params.zeros_like(),
        t: 0,
    };
    let (mut loss_acc, mut loss_n) = (0.0, 0usize);
    let mut step = 0;
    for epoch in 0..tcfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        Rng::new(derive_seed(tcfg.seed, &[0x5417, epoch as u64])).shuffle(&mut order);
        for chunk in order.chunks(tcfg.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| split.train[i].clone()).collect();
            let (loss, _, grads) = loss_and_grad(cfg, &params, mask, &batch, task)?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { step, loss });
            }
            let lr = tcfg.initial_lr * (1.0 - step as f64 / total as f64);
            adam_step(&mut adam, &mut params, &grads, lr, tcfg);
            if let Some(m) = mask {
                m.apply(&mut params)?;
            }
            step += 1;
            loss_acc += loss;
            loss_n += 1;
            if step % eval_every == 0 || step == total {
                let metric = eval_metric(cfg, &params, None, split, task)?;
                if !metric.is_finite() {
                    return Err(Error::Diverged { step, loss: metric });
                }
                history.push(HistoryPoint {
                    step,
                    train_loss: Some(loss_acc / loss_n as f64),
                    valid_metric: metric,
                });
                (loss_acc, loss_n) = (0.0, 0);
                if orientation.better(metric, best_metric) {
                    best_metric = metric;
                    best_step = step;
                    best_params = params.clone();
                }
            }
        }
    }
    Ok(TrainOutcome {
        task,
        best_metric,
        best_step,
        total_steps: total,
        best_params,
        final_params: params,
        history,
        metric_orientation: orientation,
    })
}

fn adam_step(a: &mut Adam, params: &mut ParamSet, grads: &[Vec<f64>], lr: f64, tcfg: &TrainConfig) {
    a.t += 1;
    let (b1, b2) = (tcfg.adam_beta1, tcfg.adam_beta2);
    let c1 = 1.0 - b1.powi(a.t);
    let c2 = 1.0 - b2.powi(a.t);
    for (i, e) in params.entries_mut().iter_mut().enumerate() {
        let (m, v, g) = (&mut a.m[i], &mut a.v[i], &grads[i]);
        for j in 0..e.values.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            e.values[j] -= lr * mhat / (vhat.sqrt() + tcfg.adam_epsilon);
        }
    }
}
