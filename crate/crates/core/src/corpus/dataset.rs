use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::grammar::{AbstractGrammar, AbstractSentence, Category};
use super::language::{LanguageSpec, TokenId, MASK, SEP};
use crate::error::{ensure, Error, Result};
use crate::numerics::{derive_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Mlm,
    Tag,
    Cls,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Mlm, TaskKind::Tag, TaskKind::Cls];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Mlm => "mlm",
            TaskKind::Tag => "tag",
            TaskKind::Cls => "cls",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 0x7a5c
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlm" => Ok(TaskKind::Mlm),
            "tag" | "ner" => Ok(TaskKind::Tag),
            "cls" | "nli" => Ok(TaskKind::Cls),
            other => Err(Error::contract(format!(
                "unknown task '{other}' (expected mlm, tag or cls)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Labels {
    /// Masked positions and the original tokens there.
    Mlm {
        positions: Vec<usize>,
        targets: Vec<TokenId>,
    },
    /// Category index per surface token.
    Tag(Vec<u8>),
    /// 0 paraphrase, 1 independent, 2 antonym-corrupted.
    Cls(u8),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub task_kind: TaskKind,
    pub language: String,
    pub tokens: Vec<TokenId>,
    pub labels: Labels,
    pub abstract_source_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub sentence_len: usize,
    /// Length of each side of a classification pair.
    pub pair_sentence_len: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            train: 2000,
            valid: 500,
            sentence_len: 16,
            pair_sentence_len: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub language_id: String,
    pub task_kind: TaskKind,
    pub generation_seed: u64,
}

pub const MLM_RATE_PERCENT: usize = 15;
pub const PARAPHRASE_RESAMPLE: f64 = 0.3;

/// `ceil(0.15 * len)` in exact integer arithmetic.
pub fn mlm_mask_count(len: usize) -> usize {
    (MLM_RATE_PERCENT * len).div_ceil(100)
}

/// Resample each non-ACTION symbol within its category with probability 0.3.
pub fn paraphrase(grammar: &AbstractGrammar, sentence: &[super::AbstractToken], rng: &mut Rng) -> AbstractSentence {
    sentence
        .iter()
        .map(|t| {
            let mut t = *t;
            if t.category != Category::Action && rng.bernoulli(PARAPHRASE_RESAMPLE) {
                t.symbol = grammar.sample_symbol(t.category, rng);
            }
            t
        })
        .collect()
}

/// Replace every ACTION symbol by its antonym.
pub fn antonymize(grammar: &AbstractGrammar, sentence: &[super::AbstractToken]) -> AbstractSentence {
    sentence
        .iter()
        .map(|t| {
            let mut t = *t;
            if t.category == Category::Action {
                t.symbol = grammar.antonym[t.symbol as usize];
            }
            t
        })
        .collect()
}

/// Premise/hypothesis pair for a classification label. Also returns the
/// paraphrase drawn for the pair (used by labels 0 and 2).
pub fn make_cls_pair(
    grammar: &AbstractGrammar,
    len: usize,
    label: u8,
    rng: &mut Rng,
) -> Result<(AbstractSentence, AbstractSentence, AbstractSentence)> {
    ensure!(label < 3, "classification label {label} outside 0..3");
    let premise = loop {
        let s = grammar.sample_sentence(len, rng)?;
        if s.iter().any(|t| t.category == Category::Action) {
            break s;
        }
    };
    let para = paraphrase(grammar, &premise, &mut rng.child("paraphrase"));
    let hypothesis = match label {
        0 => para.clone(),
        1 => grammar.sample_sentence(len, &mut rng.child("independent"))?,
        _ => antonymize(grammar, &para),
    };
    Ok((premise, hypothesis, para))
}

fn example_id(seed: u64, task: TaskKind, index: usize) -> u64 {
    derive_seed(seed, &[task.tag(), index as u64])
}

/// One example for `(task, index)`; the abstract content depends only on the
/// seed, task and index, so the same call in two languages yields parallel data.
pub fn build_example(
    grammar: &AbstractGrammar,
    lang: &LanguageSpec,
    task: TaskKind,
    sizes: &SplitSizes,
    seed: u64,
    index: usize,
) -> Result<Example> {
    let id = example_id(seed, task, index);
    let mut rng = Rng::new(id);
    let (tokens, labels) = match task {
        TaskKind::Mlm => {
            let s = grammar.sample_sentence(sizes.sentence_len, &mut rng)?;
            let mut tokens = lang.render(&s)?.tokens;
            let positions = rng
                .child("mask")
                .choose_sorted(tokens.len(), mlm_mask_count(tokens.len()));
            let targets = positions.iter().map(|&p| tokens[p]).collect();
            for &p in &positions {
                tokens[p] = MASK;
            }
            (tokens, Labels::Mlm { positions, targets })
        }
        TaskKind::Tag => {
            let s = grammar.sample_sentence(sizes.sentence_len, &mut rng)?;
            let r = lang.render(&s)?;
            let tags = r.categories.iter().map(|c| c.index() as u8).collect();
            (r.tokens, Labels::Tag(tags))
        }
        TaskKind::Cls => {
            let label = (index % 3) as u8;
            let (premise, hypothesis, _) = make_cls_pair(grammar, sizes.pair_sentence_len, label, &mut rng)?;
            let mut tokens = lang.render(&premise)?.tokens;
            tokens.push(SEP);
            tokens.extend(lang.render(&hypothesis)?.tokens);
            (tokens, Labels::Cls(label))
        }
    };
    ensure!(tokens.len() <= 32, "example longer than 32 tokens ({})", tokens.len());
    Ok(Example {
        task_kind: task,
        language: lang.language_id.clone(),
        tokens,
        labels,
        abstract_source_id: id,
    })
}

pub fn build_split(
    grammar: &AbstractGrammar,
    lang: &LanguageSpec,
    task: TaskKind,
    sizes: &SplitSizes,
    seed: u64,
) -> Result<DatasetSplit> {
    ensure!(sizes.train > 0 && sizes.valid > 0, "split sizes must be positive");
    let make = |range: std::ops::Range<usize>| {
        range
            .map(|i| build_example(grammar, lang, task, sizes, seed, i))
            .collect::<Result<Vec<_>>>()
    };
    Ok(DatasetSplit {
        train: make(0..sizes.train)?,
        valid: make(sizes.train..sizes.train + sizes.valid)?,
        language_id: lang.language_id.clone(),
        task_kind: task,
        generation_seed: seed,
    })
}

/// Joint masked-LM data over several languages, interleaved round-robin.
pub fn build_pretraining_mix(
    grammar: &AbstractGrammar,
    languages: &[LanguageSpec],
    sizes: &SplitSizes,
    seed: u64,
) -> Result<DatasetSplit> {
    ensure!(!languages.is_empty(), "pretraining mix needs at least one language");
    let splits = languages
        .iter()
        .map(|l| build_split(grammar, l, TaskKind::Mlm, sizes, seed))
        .collect::<Result<Vec<_>>>()?;
    let interleave = |pick: fn(&DatasetSplit) -> &Vec<Example>| {
        let n = pick(&splits[0]).len();
        (0..n)
            .flat_map(|i| splits.iter().map(move |s| pick(s)[i].clone()))
            .collect::<Vec<_>>()
    };
    Ok(DatasetSplit {
        train: interleave(|s| &s.train),
        valid: interleave(|s| &s.valid),
        language_id: languages
            .iter()
            .map(|l| l.language_id.as_str())
            .collect::<Vec<_>>()
            .join("+"),
        task_kind: TaskKind::Mlm,
        generation_seed: seed,
    })
}

/// First `floor(keep * |split|)` examples of each split, randomly interleaved
/// (each split keeps its internal order).
pub fn build_combined_task_split(splits: &[DatasetSplit], keep_fraction: f64) -> Result<DatasetSplit> {
    ensure!(!splits.is_empty(), "no splits to combine");
    ensure!(
        keep_fraction > 0.0 && keep_fraction <= 1.0,
        "keep_fraction must be in (0,1]"
    );
    let task = splits[0].task_kind;
    ensure!(
        splits.iter().all(|s| s.task_kind == task),
        "cannot combine splits of different task kinds"
    );
    let seeds: Vec<u64> = splits.iter().map(|s| s.generation_seed).collect();
    let seed = derive_seed(0xc0b1, &seeds);
    let merge = |pick: fn(&DatasetSplit) -> &Vec<Example>, label: &str| {
        let keeps: Vec<usize> = splits
            .iter()
            .map(|s| (keep_fraction * pick(s).len() as f64 + 1e-9).floor() as usize)
            .collect();
        let mut order: Vec<usize> = keeps
            .iter()
            .enumerate()
            .flat_map(|(i, &k)| std::iter::repeat_n(i, k))
            .collect();
        Rng::new(seed).child(label).shuffle(&mut order);
        let mut cursor = vec![0usize; splits.len()];
        order
            .into_iter()
            .map(|i| {
                let ex = pick(&splits[i])[cursor[i]].clone();
                cursor[i] += 1;
                ex
            })
            .collect::<Vec<_>>()
    };
    Ok(DatasetSplit {
        train: merge(|s| &s.train, "train"),
        valid: merge(|s| &s.valid, "valid"),
        language_id: splits
            .iter()
            .map(|s| s.language_id.as_str())
            .collect::<Vec<_>>()
            .join("+"),
        task_kind: task,
        generation_seed: seed,
    })
}

#[derive(Serialize)]
struct ExampleRecord<'a> {
    task: TaskKind,
    language: &'a str,
    split: &'a str,
    tokens: &'a [TokenId],
    labels: &'a Labels,
    abstract_id: u64,
}

/// One JSON object per line: task, language, split, token ids, labels, abstract id.
pub fn write_jsonl(split: &DatasetSplit, mut out: impl Write) -> Result<()> {
    for (name, part) in [("train", &split.train), ("valid", &split.valid)] {
        for ex in part {
            let rec = ExampleRecord {
                task: ex.task_kind,
                language: &ex.language,
                split: name,
                tokens: &ex.tokens,
                labels: &ex.labels,
                abstract_id: ex.abstract_source_id,
            };
            serde_json::to_writer(&mut out, &rec).map_err(|e| Error::Format(e.to_string()))?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::grammar::GrammarConfig;
    use crate::corpus::language::generate_language;
    use std::collections::HashSet;

    fn setup() -> (AbstractGrammar, LanguageSpec, LanguageSpec) {
        let g = AbstractGrammar::new(&GrammarConfig::default()).unwrap();
        let a = generate_language(&g, 1, 0.2, 3).unwrap();
        let b = generate_language(&g, 2, 0.2, 3).unwrap();
        (g, a, b)
    }

    fn small() -> SplitSizes {
        SplitSizes {
            train: 60,
            valid: 20,
            ..SplitSizes::default()
        }
    }

    #[test]
    fn mask_count_is_ceiling() {
        assert_eq!(mlm_mask_count(16), 3);
        assert_eq!(mlm_mask_count(20), 3);
        assert_eq!(mlm_mask_count(21), 4);
        assert_eq!(mlm_mask_count(4), 1);
    }

    #[test]
    fn mlm_examples_mask_exactly() {
        let (g, a, _) = setup();
        let s = build_split(&g, &a, TaskKind::Mlm, &small(), 1).unwrap();
        for ex in s.train.iter().chain(&s.valid) {
            let Labels::Mlm { positions, targets } = &ex.labels else {
                panic!()
            };
            assert_eq!(positions.len(), mlm_mask_count(ex.tokens.len()));
            assert_eq!(ex.tokens.iter().filter(|&&t| t == MASK).count(), positions.len());
            assert!(targets.iter().all(|&t| t != MASK));
        }
    }

    #[test]
    fn tag_labels_are_parallel_across_languages() {
        let (g, a, b) = setup();
        let sa = build_split(&g, &a, TaskKind::Tag, &small(), 9).unwrap();
        let sb = build_split(&g, &b, TaskKind::Tag, &small(), 9).unwrap();
        for (ea, eb) in sa.train.iter().zip(&sb.train) {
            assert_eq!(ea.abstract_source_id, eb.abstract_source_id);
            let (Labels::Tag(la), Labels::Tag(lb)) = (&ea.labels, &eb.labels) else {
                panic!()
            };
            assert_eq!(la.len(), ea.tokens.len());
            let mut la = la.clone();
            let mut lb = lb.clone();
            la.sort();
            lb.sort();
            assert_eq!(la, lb);
        }
    }

    #[test]
    fn antonym_pair_differs_only_at_actions() {
        let (g, _, _) = setup();
        let mut rng = Rng::new(5);
        for _ in 0..50 {
            let seed = rng.next_u64();
            let (_, hyp, para) = make_cls_pair(&g, 12, 2, &mut Rng::new(seed)).unwrap();
            assert_eq!(hyp.len(), para.len());
            for (h, p) in hyp.iter().zip(&para) {
                assert_eq!(h.category, p.category);
                if p.category == Category::Action {
                    assert_eq!(h.symbol, g.antonym[p.symbol as usize]);
                    assert_ne!(h.symbol, p.symbol);
                } else {
                    assert_eq!(h.symbol, p.symbol);
                }
            }
            let (_, hyp0, para0) = make_cls_pair(&g, 12, 0, &mut Rng::new(seed)).unwrap();
            assert_eq!(hyp0, para0);
            assert_eq!(para0, para);
        }
    }

    #[test]
    fn sizes_disjoint_and_balanced() {
        let (g, a, _) = setup();
        let sizes = SplitSizes {
            train: 2000,
            valid: 500,
            ..SplitSizes::default()
        };
        let s = build_split(&g, &a, TaskKind::Cls, &sizes, 4).unwrap();
        assert_eq!(s.train.len(), 2000);
        assert_eq!(s.valid.len(), 500);
        let train_ids: HashSet<u64> = s.train.iter().map(|e| e.abstract_source_id).collect();
        assert_eq!(train_ids.len(), 2000);
        assert!(s.valid.iter().all(|e| !train_ids.contains(&e.abstract_source_id)));
        let mut counts = [0usize; 3];
        for e in &s.train {
            let Labels::Cls(l) = e.labels else { panic!() };
            counts[l as usize] += 1;
        }
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        assert!(s.train.iter().all(|e| e.tokens.len() == 25 && e.tokens[12] == SEP));
    }

    #[test]
    fn regeneration_is_identical() {
        let (g, a, _) = setup();
        let x = build_split(&g, &a, TaskKind::Cls, &small(), 12).unwrap();
        let y = build_split(&g, &a, TaskKind::Cls, &small(), 12).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn pretraining_mix_round_robin() {
        let g = AbstractGrammar::new(&GrammarConfig::default()).unwrap();
        let langs: Vec<_> = (0..4).map(|i| generate_language(&g, i, 0.2, 1).unwrap()).collect();
        let sizes = SplitSizes {
            train: 1000,
            valid: 10,
            ..SplitSizes::default()
        };
        let mix = build_pretraining_mix(&g, &langs, &sizes, 7).unwrap();
        assert_eq!(mix.train.len(), 4000);
        for (i, ex) in mix.train.iter().enumerate() {
            assert_eq!(ex.language, langs[i % 4].language_id);
        }
        let single = build_pretraining_mix(&g, &langs[..1], &sizes, 7).unwrap();
        assert_eq!(single, build_split(&g, &langs[0], TaskKind::Mlm, &sizes, 7).unwrap());
        assert_eq!(mix, build_pretraining_mix(&g, &langs, &sizes, 7).unwrap());
    }

    #[test]
    fn combined_split_sizes() {
        let (g, a, b) = setup();
        let sizes = SplitSizes {
            train: 100,
            valid: 10,
            ..SplitSizes::default()
        };
        let sa = build_split(&g, &a, TaskKind::Tag, &sizes, 1).unwrap();
        let sb = build_split(&g, &b, TaskKind::Tag, &sizes, 2).unwrap();
        let c = build_combined_task_split(&[sa.clone(), sb.clone()], 0.5).unwrap();
        assert_eq!(c.train.len(), 100);
        assert_eq!(c.train.iter().filter(|e| e.language == a.language_id).count(), 50);
        assert_eq!(
            build_combined_task_split(std::slice::from_ref(&sa), 1.0).unwrap().train,
            sa.train
        );

        let mlm = build_split(&g, &a, TaskKind::Mlm, &sizes, 1).unwrap();
        assert!(build_combined_task_split(&[sa, mlm], 0.5).is_err());
    }

    #[test]
    fn combined_quarter_of_four() {
        let g = AbstractGrammar::new(&GrammarConfig::default()).unwrap();
        let sizes = SplitSizes {
            train: 20_000,
            valid: 4,
            ..SplitSizes::default()
        };
        let splits: Vec<_> = (0..4)
            .map(|i| {
                let l = generate_language(&g, i, 0.2, 1).unwrap();
                build_split(&g, &l, TaskKind::Tag, &sizes, i as u64).unwrap()
            })
            .collect();
        assert_eq!(build_combined_task_split(&splits, 0.25).unwrap().train.len(), 20_000);
    }

    #[test]
    fn jsonl_export() {
        let (g, a, _) = setup();
        let s = build_split(&g, &a, TaskKind::Tag, &small(), 1).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 80);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["task"], "tag");
        assert_eq!(first["split"], "train");
        assert_eq!(first["language"], "L1");
    }
}
