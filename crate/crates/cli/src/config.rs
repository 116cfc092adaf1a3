use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ticketlab::corpus::{
    language_id, GrammarConfig, SplitSizes, TaskKind, VocabLayout, CATEGORY_COUNT, MAX_LANGUAGES, SENTENCE_LEN_RANGE,
};
use ticketlab::model::{ModelConfig, TrainConfig};
use ticketlab::numerics::{derive_labeled, derive_seed};
use ticketlab::pruning::{FisherMode, ImpSchedule, PruneScope};
use ticketlab::similarity::{RetrievalConfig, Ridge, SimilarityMethod, DEFAULT_SVCCA_THRESHOLD};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PruneMethod {
    Imp,
    DiffInit,
    Fisher,
}

impl PruneMethod {
    pub fn name(self) -> &'static str {
        match self {
            PruneMethod::Imp => "imp",
            PruneMethod::DiffInit => "diff_init",
            PruneMethod::Fisher => "fisher",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LanguagesConfig {
    pub count: usize,
    /// Fraction of abstract symbols rendered with a token shared by every language.
    pub shared_fraction: f64,
}

impl Default for LanguagesConfig {
    fn default() -> Self {
        LanguagesConfig {
            count: 8,
            shared_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    /// Examples per language; the mix interleaves all languages.
    pub sizes: SplitSizes,
    pub train: TrainConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            sizes: SplitSizes {
                train: 8000,
                valid: 200,
                ..SplitSizes::default()
            },
            train: TrainConfig {
                epochs: 3,
                initial_lr: 3e-3,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct TaskConfig {
    pub sizes: SplitSizes,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TasksConfig {
    pub enabled: Vec<TaskKind>,
    pub tag: TaskConfig,
    pub cls: TaskConfig,
    pub mlm: TaskConfig,
}

impl Default for TasksConfig {
    fn default() -> Self {
        let task = |train: usize, epochs: usize| TaskConfig {
            sizes: SplitSizes {
                train,
                valid: 500,
                sentence_len: 16,
                pair_sentence_len: 6,
            },
            train: TrainConfig {
                epochs,
                initial_lr: 3e-3,
                ..TrainConfig::default()
            },
        };
        TasksConfig {
            enabled: vec![TaskKind::Tag, TaskKind::Cls, TaskKind::Mlm],
            tag: task(2000, 3),
            cls: task(4000, 10),
            mlm: task(4000, 3),
        }
    }
}

impl TasksConfig {
    pub fn get(&self, task: TaskKind) -> &TaskConfig {
        match task {
            TaskKind::Tag => &self.tag,
            TaskKind::Cls => &self.cls,
            TaskKind::Mlm => &self.mlm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruningConfig {
    pub methods: Vec<PruneMethod>,
    /// Percent of the original prunable weights removed per IMP round.
    pub rate_percent: u32,
    pub scope: PruneScope,
    /// Sparsities at which masks are saved, transferred and compared.
    pub sparsities: Vec<f64>,
    pub fisher_samples: usize,
    pub fisher_mode: FisherMode,
}

impl Default for PruningConfig {
    fn default() -> Self {
        PruningConfig {
            methods: vec![PruneMethod::Imp, PruneMethod::DiffInit, PruneMethod::Fisher],
            rate_percent: 10,
            scope: PruneScope::Global,
            sparsities: vec![0.5, 0.8],
            fisher_samples: 256,
            fisher_mode: FisherMode::Empirical,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimilarityConfig {
    pub methods: Vec<SimilarityMethod>,
    pub ridge: Ridge,
    /// Captured layers to report (0 is the embedding output); empty selects all.
    pub layers: Vec<usize>,
    /// Language pairs; empty selects the first language against every other.
    pub pairs: Vec<[String; 2]>,
    pub sentences: usize,
    pub sentence_len: usize,
    pub retrieval: RetrievalConfig,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            methods: vec![
                SimilarityMethod::Svcca {
                    threshold: DEFAULT_SVCCA_THRESHOLD,
                },
                SimilarityMethod::Pwcca,
            ],
            ridge: Ridge::default(),
            layers: Vec::new(),
            pairs: Vec::new(),
            sentences: 400,
            sentence_len: 16,
            retrieval: RetrievalConfig { k: 4, layer: 1 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Independent training runs behind every reported metric.
    pub run_seeds: usize,
    /// Not part of the resolved dump: it is the directory the dump lives in.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    pub grammar: GrammarConfig,
    pub languages: LanguagesConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub tasks: TasksConfig,
    pub pruning: PruningConfig,
    pub similarity: SimilarityConfig,
}

/// Category chain where each category is followed by one dominant successor.
pub fn sharp_transition(dominant: f64) -> Vec<Vec<f64>> {
    let next = [1usize, 2, 0, 0];
    let rest = (1.0 - dominant) / (CATEGORY_COUNT - 1) as f64;
    (0..CATEGORY_COUNT)
        .map(|i| {
            (0..CATEGORY_COUNT)
                .map(|j| if j == next[i] { dominant } else { rest })
                .collect()
        })
        .collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let languages = LanguagesConfig::default();
        ExperimentConfig {
            seed: 0,
            run_seeds: 3,
            output_dir: PathBuf::from("runs/default"),
            grammar: GrammarConfig {
                ambiguity: 0.5,
                transition: Some(sharp_transition(0.9)),
                ..GrammarConfig::default()
            },
            model: ModelConfig {
                vocab_size: VocabLayout::new(
                    GrammarConfig::default().symbol_count,
                    languages.shared_fraction,
                    languages.count,
                )
                .size(),
                ..ModelConfig::default()
            },
            languages,
            pretrain: PretrainConfig::default(),
            tasks: TasksConfig::default(),
            pruning: PruningConfig::default(),
            similarity: SimilarityConfig::default(),
        }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::config(msg)
}

impl ExperimentConfig {
    /// Parse, expand defaults and validate.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        let vocab_given = table
            .get("model")
            .and_then(|m| m.as_table())
            .is_some_and(|m| m.contains_key("vocab_size"));
        let mut cfg: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| bad(e.to_string()))?;
        if !vocab_given {
            cfg.model.vocab_size = cfg.vocab_size();
        }
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => bad(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn vocab_size(&self) -> usize {
        VocabLayout::new(
            self.grammar.symbol_count,
            self.languages.shared_fraction,
            self.languages.count,
        )
        .size()
    }

    /// Fill list defaults in place, then validate.
    pub fn resolve(&mut self) -> Result<()> {
        if self.similarity.layers.is_empty() {
            self.similarity.layers = (0..=self.model.layers).collect();
        }
        if self.similarity.pairs.is_empty() {
            self.similarity.pairs = (1..self.languages.count)
                .map(|i| [language_id(0), language_id(i)])
                .collect();
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.languages.count;
        if !(2..=MAX_LANGUAGES).contains(&n) {
            return Err(bad(format!("languages.count must be in 2..={MAX_LANGUAGES}, got {n}")));
        }
        if !(0.0..=1.0).contains(&self.languages.shared_fraction) {
            return Err(bad("languages.shared_fraction must be in [0, 1]"));
        }
        if self.run_seeds < 3 {
            return Err(bad(format!("run_seeds must be at least 3, got {}", self.run_seeds)));
        }
        let want = self.vocab_size();
        if self.model.vocab_size != want {
            return Err(bad(format!(
                "model.vocab_size is {} but the language set needs {want}; omit it to derive",
                self.model.vocab_size
            )));
        }
        self.model.validate().map_err(|e| bad(format!("model: {e}")))?;
        check_train("pretrain.train", &self.pretrain.train)?;
        check_lengths(
            "pretrain.sizes",
            &self.pretrain.sizes,
            TaskKind::Mlm,
            self.model.max_len,
        )?;
        if self.tasks.enabled.is_empty() {
            return Err(bad("tasks.enabled is empty"));
        }
        if self.tasks.enabled.iter().collect::<BTreeSet<_>>().len() != self.tasks.enabled.len() {
            return Err(bad("tasks.enabled lists a task twice"));
        }
        for &task in &TaskKind::ALL {
            let t = self.tasks.get(task);
            check_train(&format!("tasks.{task}.train"), &t.train)?;
            check_lengths(&format!("tasks.{task}.sizes"), &t.sizes, task, self.model.max_len)?;
        }
        self.check_pruning()?;
        self.check_similarity()
    }

    fn check_pruning(&self) -> Result<()> {
        let p = &self.pruning;
        if !p.methods.contains(&PruneMethod::Imp) {
            return Err(bad("pruning.methods must include imp"));
        }
        if p.sparsities.is_empty() {
            return Err(bad("pruning.sparsities is empty"));
        }
        for &s in &p.sparsities {
            let pct = s * 100.0;
            let ok = s > 0.0
                && s < 1.0
                && (pct - pct.round()).abs() < 1e-9
                && p.rate_percent > 0
                && (pct.round() as u32).is_multiple_of(p.rate_percent);
            if !ok {
                return Err(bad(format!(
                    "sparsity {s} must be in (0, 1) and a multiple of {}%",
                    p.rate_percent
                )));
            }
        }
        self.imp_schedule(TaskKind::Tag)
            .validate()
            .map_err(|e| bad(format!("pruning: {e}")))?;
        let min_train = TaskKind::ALL
            .iter()
            .map(|&t| self.tasks.get(t).sizes.train)
            .min()
            .unwrap_or(0);
        if p.methods.contains(&PruneMethod::Fisher) && (p.fisher_samples == 0 || p.fisher_samples > min_train) {
            return Err(bad(format!("pruning.fisher_samples must be in 1..={min_train}")));
        }
        Ok(())
    }

    fn check_similarity(&self) -> Result<()> {
        let s = &self.similarity;
        let ids: Vec<String> = (0..self.languages.count).map(language_id).collect();
        for [a, b] in &s.pairs {
            for l in [a, b] {
                if !ids.contains(l) {
                    return Err(bad(format!("similarity pair names unknown language {l}")));
                }
            }
        }
        if let Some(l) = s.layers.iter().find(|&&l| l > self.model.layers) {
            return Err(bad(format!(
                "similarity layer {l} exceeds model.layers = {}",
                self.model.layers
            )));
        }
        if s.sentences <= self.model.embed_dim {
            return Err(bad(format!(
                "similarity.sentences must exceed model.embed_dim = {}",
                self.model.embed_dim
            )));
        }
        if !SENTENCE_LEN_RANGE.contains(&s.sentence_len) || s.sentence_len > self.model.max_len {
            return Err(bad(format!(
                "similarity.sentence_len must be in {SENTENCE_LEN_RANGE:?} and at most model.max_len = {}",
                self.model.max_len
            )));
        }
        if s.retrieval.k == 0 || s.retrieval.k > s.sentences {
            return Err(bad(format!("similarity.retrieval.k must be in 1..={}", s.sentences)));
        }
        if s.retrieval.layer > self.model.layers {
            return Err(bad(format!(
                "similarity.retrieval.layer exceeds model.layers = {}",
                self.model.layers
            )));
        }
        for m in &s.methods {
            if let SimilarityMethod::Svcca { threshold } = m {
                if !(*threshold > 0.0 && *threshold <= 1.0) {
                    return Err(bad("svcca threshold must be in (0, 1]"));
                }
            }
        }
        Ok(())
    }

    /// Resolved config as TOML, every default spelled out.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| bad(e.to_string()))
    }

    /// Digest of the resolved config (the output directory is not part of it).
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn run_seeds(&self) -> Vec<u64> {
        (0..self.run_seeds)
            .map(|k| derive_labeled(self.seed, &format!("run{k}")))
            .collect()
    }

    pub fn language_seed(&self) -> u64 {
        derive_labeled(self.seed, "languages")
    }

    pub fn data_seed(&self, task: TaskKind, language: usize) -> u64 {
        let t = TaskKind::ALL.iter().position(|&k| k == task).expect("known task") as u64;
        derive_seed(derive_labeled(self.seed, "data"), &[t, language as u64])
    }

    pub fn pretrain_data_seed(&self) -> u64 {
        derive_labeled(self.seed, "pretrain-data")
    }

    pub fn init_seed(&self) -> u64 {
        derive_labeled(self.seed, "init")
    }

    pub fn pretrain_seed(&self) -> u64 {
        derive_labeled(self.seed, "pretrain")
    }

    pub fn parallel_seed(&self) -> u64 {
        derive_labeled(self.seed, "parallel")
    }

    pub fn imp_schedule(&self, task: TaskKind) -> ImpSchedule {
        let max = self.pruning.sparsities.iter().copied().fold(0.0, f64::max);
        ImpSchedule {
            rate_percent: self.pruning.rate_percent,
            target_percent: (max * 100.0).round() as u32,
            scope: self.pruning.scope,
            train: self.tasks.get(task).train.clone(),
        }
    }
}

fn check_train(section: &str, t: &TrainConfig) -> Result<()> {
    t.validate().map_err(|e| bad(format!("{section}: {e}")))?;
    if t.seed != 0 {
        return Err(bad(format!(
            "{section}.seed is derived from the global seed; remove it"
        )));
    }
    Ok(())
}

fn check_lengths(section: &str, s: &SplitSizes, task: TaskKind, max_len: usize) -> Result<()> {
    if s.train == 0 || s.valid == 0 {
        return Err(bad(format!("{section}: train and valid must be positive")));
    }
    let sentence = match task {
        TaskKind::Cls => s.pair_sentence_len,
        _ => s.sentence_len,
    };
    if !SENTENCE_LEN_RANGE.contains(&sentence) {
        return Err(bad(format!(
            "{section}: sentence length {sentence} outside {SENTENCE_LEN_RANGE:?}"
        )));
    }
    let len = match task {
        TaskKind::Cls => 2 * sentence + 1,
        _ => sentence,
    };
    if len > max_len {
        return Err(bad(format!(
            "{section}: examples of {len} tokens do not fit model.max_len = {max_len}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let mut cfg = ExperimentConfig::default();
        cfg.resolve().unwrap();
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(
            ExperimentConfig {
                output_dir: cfg.output_dir.clone(),
                ..back
            },
            cfg
        );
    }

    #[test]
    fn empty_document_is_the_default() {
        let mut want = ExperimentConfig::default();
        want.resolve().unwrap();
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), want);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in ["sed = 1", "[model]\nlayer = 3", "[tasks.tag.train]\nepoch = 2"] {
            let err = ExperimentConfig::from_toml(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
    }

    #[test]
    fn vocab_follows_languages() {
        let cfg = ExperimentConfig::from_toml("[languages]\ncount = 4").unwrap();
        assert_eq!(cfg.model.vocab_size, cfg.vocab_size());
        assert_eq!(cfg.similarity.pairs.len(), 3);
        let err = ExperimentConfig::from_toml("[languages]\ncount = 4\n[model]\nvocab_size = 10").unwrap_err();
        assert!(err.to_string().contains("vocab_size"), "{err}");
    }

    #[test]
    fn invalid_values_rejected() {
        for text in [
            "run_seeds = 2",
            "[pruning]\nsparsities = [0.55]",
            "[pruning]\nmethods = [\"fisher\"]",
            "[similarity]\nsentences = 8",
            "[similarity]\npairs = [[\"L0\", \"L99\"]]",
            "[tasks.cls.sizes]\npair_sentence_len = 40",
            "[tasks.tag.train]\nseed = 4",
        ] {
            assert!(
                matches!(ExperimentConfig::from_toml(text), Err(CliError::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn seed_changes_digest_and_derived_seeds() {
        let a = ExperimentConfig::from_toml("").unwrap();
        let b = ExperimentConfig::from_toml("seed = 1").unwrap();
        assert_ne!(a.digest(), b.digest());
        assert_ne!(a.run_seeds(), b.run_seeds());
        assert_ne!(a.data_seed(TaskKind::Tag, 0), a.data_seed(TaskKind::Tag, 1));
        assert_ne!(a.data_seed(TaskKind::Tag, 0), a.data_seed(TaskKind::Cls, 0));
    }

    #[test]
    fn sharp_transition_is_stochastic() {
        for row in sharp_transition(0.9) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
