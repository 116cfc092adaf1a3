//! Synthetic multilingual corpus: an abstract category grammar rendered into
//! several surface languages, and the three task datasets built from it.

mod dataset;
mod grammar;
mod language;

pub use dataset::{
    antonymize, build_combined_task_split, build_example, build_pretraining_mix, build_split, make_cls_pair,
    mlm_mask_count, paraphrase, write_jsonl, DatasetSplit, Example, Labels, SplitSizes, TaskKind,
};
pub use grammar::{
    default_transition, sample_abstract_sentence, AbstractGrammar, AbstractSentence, AbstractToken, Category,
    GrammarConfig, Symbol, CATEGORY_COUNT, SENTENCE_LEN_RANGE,
};
pub use language::{
    generate_language, language_id, shared_count, LanguageSpec, Rendered, SwapDirective, TokenId, VocabLayout, MASK,
    MAX_LANGUAGES, PAD, SEP, SPECIAL_COUNT, UNK,
};
