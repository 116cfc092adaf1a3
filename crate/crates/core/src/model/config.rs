use serde::{Deserialize, Serialize};

use super::params::{ParamEntry, ParamSet};
use crate::corpus::{TaskKind, CATEGORY_COUNT};
use crate::error::{ensure, Result};
use crate::numerics::{derive_labeled, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub tag_classes: usize,
    pub cls_classes: usize,
    /// Treat encoder bias vectors as prunable.
    pub prune_biases: bool,
    /// Treat token and position embeddings as prunable.
    pub prune_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 436,
            embed_dim: 32,
            layers: 2,
            heads: 2,
            ffn_dim: 64,
            max_len: 32,
            tag_classes: CATEGORY_COUNT,
            cls_classes: 3,
            prune_biases: false,
            prune_embeddings: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.heads > 0 && self.embed_dim.is_multiple_of(self.heads),
            "embed_dim must be divisible by heads"
        );
        ensure!(self.layers > 0, "need at least one encoder layer");
        ensure!(
            self.vocab_size > 0 && self.ffn_dim > 0 && self.max_len > 0,
            "sizes must be positive"
        );
        ensure!(
            self.tag_classes > 0 && self.cls_classes > 0,
            "head sizes must be positive"
        );
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricOrientation {
    HigherBetter,
    LowerBetter,
}

impl MetricOrientation {
    pub fn for_task(task: TaskKind) -> Self {
        match task {
            TaskKind::Mlm => MetricOrientation::LowerBetter,
            TaskKind::Tag | TaskKind::Cls => MetricOrientation::HigherBetter,
        }
    }

    /// Strictly better.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            MetricOrientation::HigherBetter => a > b,
            MetricOrientation::LowerBetter => a < b,
        }
    }

    /// Value in higher-is-better form (negated for lower-is-better metrics).
    pub fn to_higher(self, v: f64) -> f64 {
        match self {
            MetricOrientation::HigherBetter => v,
            MetricOrientation::LowerBetter => -v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub adam_epsilon: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Evaluation interval in optimizer steps; 0 evaluates once per epoch.
    pub eval_every: usize,
    /// Re-draw the classification / tagging head from the run seed.
    pub reinit_task_head: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 32,
            initial_lr: 2e-3,
            adam_epsilon: 1e-8,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            eval_every: 0,
            reinit_task_head: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.initial_lr > 0.0, "initial_lr must be positive");
        ensure!(self.batch_size > 0, "batch_size must be positive");
        ensure!(self.adam_epsilon > 0.0, "adam_epsilon must be positive");
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        TrainConfig { seed, ..self.clone() }
    }
}

/// Entry indices of one encoder block.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerIdx {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
}

/// Entry indices for the whole model, in the canonical order produced by [`init_params`].
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub tok: usize,
    pub pos: usize,
    pub ln0_g: usize,
    pub ln0_b: usize,
    pub layers: Vec<LayerIdx>,
    pub mlm_w: usize,
    pub mlm_b: usize,
    pub tag_w: usize,
    pub tag_b: usize,
    pub cls_w: usize,
    pub cls_b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Embedding,
    Weight,
    Bias,
    Norm,
    Head,
}

fn schema(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Kind, usize)> {
    let (v, d, f) = (cfg.vocab_size, cfg.embed_dim, cfg.ffn_dim);
    let mut out = vec![
        ("embed.token".to_string(), vec![v, d], Kind::Embedding, d),
        ("embed.position".to_string(), vec![cfg.max_len, d], Kind::Embedding, d),
        ("embed.ln.gain".to_string(), vec![d], Kind::Norm, 0),
        ("embed.ln.bias".to_string(), vec![d], Kind::Norm, 0),
    ];
    for l in 1..=cfg.layers {
        let p = |s: &str| format!("layer{l}.{s}");
        out.extend([
            (p("attn.wq"), vec![d, d], Kind::Weight, d),
            (p("attn.bq"), vec![d], Kind::Bias, 0),
            (p("attn.wk"), vec![d, d], Kind::Weight, d),
            (p("attn.bk"), vec![d], Kind::Bias, 0),
            (p("attn.wv"), vec![d, d], Kind::Weight, d),
            (p("attn.bv"), vec![d], Kind::Bias, 0),
            (p("attn.wo"), vec![d, d], Kind::Weight, d),
            (p("attn.bo"), vec![d], Kind::Bias, 0),
            (p("attn_ln.gain"), vec![d], Kind::Norm, 0),
            (p("attn_ln.bias"), vec![d], Kind::Norm, 0),
            (p("ffn.w1"), vec![d, f], Kind::Weight, d),
            (p("ffn.b1"), vec![f], Kind::Bias, 0),
            (p("ffn.w2"), vec![f, d], Kind::Weight, f),
            (p("ffn.b2"), vec![d], Kind::Bias, 0),
            (p("ffn_ln.gain"), vec![d], Kind::Norm, 0),
            (p("ffn_ln.bias"), vec![d], Kind::Norm, 0),
        ]);
    }
    out.extend([
        ("head.mlm.w".to_string(), vec![d, v], Kind::Head, d),
        ("head.mlm.b".to_string(), vec![v], Kind::Head, 0),
        ("head.tag.w".to_string(), vec![d, cfg.tag_classes], Kind::Head, d),
        ("head.tag.b".to_string(), vec![cfg.tag_classes], Kind::Head, 0),
        ("head.cls.w".to_string(), vec![d, cfg.cls_classes], Kind::Head, d),
        ("head.cls.b".to_string(), vec![cfg.cls_classes], Kind::Head, 0),
    ]);
    out
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Layout {
        let per_layer = 16;
        let head0 = 4 + per_layer * cfg.layers;
        Layout {
            tok: 0,
            pos: 1,
            ln0_g: 2,
            ln0_b: 3,
            layers: (0..cfg.layers)
                .map(|l| {
                    let b = 4 + per_layer * l;
                    LayerIdx {
                        wq: b,
                        bq: b + 1,
                        wk: b + 2,
                        bk: b + 3,
                        wv: b + 4,
                        bv: b + 5,
                        wo: b + 6,
                        bo: b + 7,
                        ln1_g: b + 8,
                        ln1_b: b + 9,
                        w1: b + 10,
                        b1: b + 11,
                        w2: b + 12,
                        b2: b + 13,
                        ln2_g: b + 14,
                        ln2_b: b + 15,
                    }
                })
                .collect(),
            mlm_w: head0,
            mlm_b: head0 + 1,
            tag_w: head0 + 2,
            tag_b: head0 + 3,
            cls_w: head0 + 4,
            cls_b: head0 + 5,
        }
    }

    /// Entries re-drawn when a task head is re-initialized.
    pub fn head_entries(&self, task: TaskKind) -> [usize; 2] {
        match task {
            TaskKind::Mlm => [self.mlm_w, self.mlm_b],
            TaskKind::Tag => [self.tag_w, self.tag_b],
            TaskKind::Cls => [self.cls_w, self.cls_b],
        }
    }
}

/// Check that `params` has exactly the entries `cfg` implies.
pub fn check_schema(cfg: &ModelConfig, params: &ParamSet) -> Result<()> {
    let expected = schema(cfg);
    ensure!(
        expected.len() == params.len(),
        "parameter set has {} entries, model config implies {}",
        params.len(),
        expected.len()
    );
    for ((name, shape, _, _), e) in expected.iter().zip(params.entries()) {
        ensure!(
            *name == e.name && *shape == e.shape,
            "parameter {} {:?} does not match expected {} {:?}",
            e.name,
            e.shape,
            name,
            shape
        );
    }
    Ok(())
}

fn draw(kind: Kind, fan_in: usize, len: usize, rng: &mut Rng) -> Vec<f64> {
    match kind {
        Kind::Norm => vec![1.0; len],
        Kind::Bias => vec![0.0; len],
        Kind::Head if fan_in == 0 => vec![0.0; len],
        Kind::Embedding | Kind::Weight | Kind::Head => {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..len).map(|_| rng.uniform_range(-bound, bound)).collect()
        }
    }
}

/// Deterministic initialization: uniform(+-1/sqrt(fan_in)) weights, unit
/// layer-norm gains, zero biases. Each entry draws from its own seed stream
/// derived from its name.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamSet> {
    cfg.validate()?;
    let entries = schema(cfg)
        .into_iter()
        .map(|(name, shape, kind, fan_in)| {
            let len = shape.iter().product();
            let mut rng = Rng::new(derive_labeled(seed, &name));
            let values = if name.ends_with(".bias") {
                vec![0.0; len]
            } else {
                draw(kind, fan_in, len, &mut rng)
            };
            let prunable = match kind {
                Kind::Weight => true,
                Kind::Bias => cfg.prune_biases,
                Kind::Embedding => cfg.prune_embeddings,
                Kind::Norm | Kind::Head => false,
            };
            ParamEntry::new(name, shape, values, prunable)
        })
        .collect::<Result<Vec<_>>>()?;
    ParamSet::new(entries)
}

/// Re-draw one task head from `seed` (same distribution as [`init_params`]).
pub(crate) fn reinit_head(cfg: &ModelConfig, params: &mut ParamSet, task: TaskKind, seed: u64) {
    let layout = Layout::new(cfg);
    let [w, b] = layout.head_entries(task);
    let d = cfg.embed_dim;
    let entry = &mut params.entries_mut()[w];
    let mut rng = Rng::new(derive_labeled(seed, &entry.name));
    let len = entry.len();
    entry.values = draw(Kind::Head, d, len, &mut rng);
    params.entries_mut()[b].values.iter_mut().for_each(|v| *v = 0.0);
}
