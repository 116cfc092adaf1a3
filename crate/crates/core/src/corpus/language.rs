use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::grammar::{AbstractGrammar, AbstractSentence, AbstractToken, Category, Symbol, CATEGORY_COUNT};
use crate::error::{ensure, Error, Result};
use crate::numerics::{derive_seed, Rng};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const MASK: TokenId = 1;
pub const SEP: TokenId = 2;
pub const UNK: TokenId = 3;
pub const SPECIAL_COUNT: usize = 4;
pub const MAX_LANGUAGES: usize = 16;

/// Shared vocabulary layout: specials, the shared block, then one block per language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabLayout {
    pub symbol_count: usize,
    pub shared_count: usize,
    pub language_count: usize,
}

impl VocabLayout {
    pub fn new(symbol_count: usize, shared_fraction: f64, language_count: usize) -> Self {
        VocabLayout {
            symbol_count,
            shared_count: shared_count(symbol_count, shared_fraction),
            language_count,
        }
    }

    pub fn size(&self) -> usize {
        SPECIAL_COUNT + self.shared_count + self.language_count * (self.symbol_count - self.shared_count)
    }
}

pub fn shared_count(symbol_count: usize, shared_fraction: f64) -> usize {
    (shared_fraction * symbol_count as f64 + 1e-9).floor() as usize
}

/// Swap categories `first`/`second` when they occupy an aligned slot pair
/// (`phase`, `phase + 1`), (`phase + 2`, `phase + 3`), ... in either order.
/// Each directive is an involution, so the rule list is inverted by
/// applying it in reverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapDirective {
    pub first: Category,
    pub second: Category,
    pub phase: u8,
}

impl SwapDirective {
    fn apply<T>(&self, cats: &mut [Category], payload: &mut [T]) {
        let mut i = self.phase as usize;
        while i + 1 < cats.len() {
            let (a, b) = (cats[i], cats[i + 1]);
            if (a == self.first && b == self.second) || (a == self.second && b == self.first) {
                cats.swap(i, i + 1);
                payload.swap(i, i + 1);
            }
            i += 2;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub language_id: String,
    pub index: usize,
    /// Surface token for each abstract symbol.
    pub lexicon: Vec<TokenId>,
    pub reorder_rule: Vec<SwapDirective>,
    pub shared_token_fraction: f64,
}

/// Surface rendering of one abstract sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub tokens: Vec<TokenId>,
    /// Category of each surface position (the tag sequence).
    pub categories: Vec<Category>,
}

pub fn language_id(index: usize) -> String {
    format!("L{index}")
}

/// Build the lexicon and word-order rules of language `language_index`.
///
/// Symbols in the shared set (chosen from the grammar seed, identical for all
/// languages) map to the shared token block; the rest map into the language's
/// own block through a seeded permutation. Language 0 is the pivot and keeps
/// canonical word order.
pub fn generate_language(
    grammar: &AbstractGrammar,
    language_index: usize,
    shared_fraction: f64,
    seed: u64,
) -> Result<LanguageSpec> {
    ensure!(
        language_index < MAX_LANGUAGES,
        "language_index {language_index} >= {MAX_LANGUAGES}"
    );
    ensure!(
        (0.0..=1.0).contains(&shared_fraction),
        "shared fraction must be in [0,1]"
    );
    let a = grammar.symbol_count;
    let k = shared_count(a, shared_fraction);

    let mut order: Vec<Symbol> = (0..a as Symbol).collect();
    Rng::new(derive_seed(grammar.seed, &[0x5ead])).shuffle(&mut order);
    let (shared, own) = order.split_at(k);

    let lang_seed = derive_seed(seed, &[language_index as u64]);
    let mut own_slots: Vec<usize> = (0..a - k).collect();
    Rng::new(lang_seed).child("lexicon").shuffle(&mut own_slots);

    let base = (SPECIAL_COUNT + k + language_index * (a - k)) as TokenId;
    let mut lexicon = vec![0 as TokenId; a];
    for (slot, &sym) in shared.iter().enumerate() {
        lexicon[sym as usize] = (SPECIAL_COUNT + slot) as TokenId;
    }
    for (rank, &sym) in own.iter().enumerate() {
        lexicon[sym as usize] = base + own_slots[rank] as TokenId;
    }

    let reorder_rule = if language_index == 0 {
        Vec::new()
    } else {
        let mut rng = Rng::new(lang_seed).child("reorder");
        let mut pairs: Vec<(usize, usize)> = (0..CATEGORY_COUNT)
            .flat_map(|i| (i + 1..CATEGORY_COUNT).map(move |j| (i, j)))
            .collect();
        rng.shuffle(&mut pairs);
        let count = 1 + rng.below(2);
        pairs
            .into_iter()
            .take(count)
            .map(|(i, j)| SwapDirective {
                first: Category::from_index(i),
                second: Category::from_index(j),
                phase: rng.below(2) as u8,
            })
            .collect()
    };

    Ok(LanguageSpec {
        language_id: language_id(language_index),
        index: language_index,
        lexicon,
        reorder_rule,
        shared_token_fraction: shared_fraction,
    })
}

impl LanguageSpec {
    pub fn with_reorder(mut self, rule: Vec<SwapDirective>) -> Self {
        self.reorder_rule = rule;
        self
    }

    pub fn inverse_lexicon(&self) -> HashMap<TokenId, Symbol> {
        self.lexicon
            .iter()
            .enumerate()
            .map(|(s, &t)| (t, s as Symbol))
            .collect()
    }

    /// Lexicon substitution, then the reorder rules in order.
    pub fn render(&self, sentence: &[AbstractToken]) -> Result<Rendered> {
        let mut tokens = Vec::with_capacity(sentence.len());
        let mut categories = Vec::with_capacity(sentence.len());
        for t in sentence {
            let tok = self
                .lexicon
                .get(t.symbol as usize)
                .ok_or_else(|| Error::contract(format!("symbol {} outside grammar", t.symbol)))?;
            tokens.push(*tok);
            categories.push(t.category);
        }
        for d in &self.reorder_rule {
            d.apply(&mut categories, &mut tokens);
        }
        Ok(Rendered { tokens, categories })
    }

    /// Recover the abstract sentence from a rendering.
    pub fn inverse_render(&self, rendered: &Rendered) -> Result<AbstractSentence> {
        ensure!(
            rendered.tokens.len() == rendered.categories.len(),
            "rendering length mismatch"
        );
        let inverse = self.inverse_lexicon();
        let mut cats = rendered.categories.clone();
        let mut symbols = rendered
            .tokens
            .iter()
            .map(|t| {
                inverse
                    .get(t)
                    .copied()
                    .ok_or_else(|| Error::contract(format!("token {t} not in lexicon of {}", self.language_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        for d in self.reorder_rule.iter().rev() {
            d.apply(&mut cats, &mut symbols);
        }
        Ok(symbols
            .into_iter()
            .zip(cats)
            .map(|(symbol, category)| AbstractToken { symbol, category })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::grammar::GrammarConfig;
    use std::collections::HashSet;

    fn grammar() -> AbstractGrammar {
        AbstractGrammar::new(&GrammarConfig::default()).unwrap()
    }

    fn token_set(l: &LanguageSpec) -> HashSet<TokenId> {
        l.lexicon.iter().copied().collect()
    }

    #[test]
    fn full_sharing_matches_pivot() {
        let g = grammar();
        let pivot = generate_language(&g, 0, 1.0, 5).unwrap();
        for idx in [1, 7, 15] {
            assert_eq!(generate_language(&g, idx, 1.0, 5).unwrap().lexicon, pivot.lexicon);
        }
    }

    #[test]
    fn no_sharing_is_disjoint() {
        let g = grammar();
        let a = generate_language(&g, 0, 0.0, 5).unwrap();
        let b = generate_language(&g, 1, 0.0, 5).unwrap();
        assert!(token_set(&a).is_disjoint(&token_set(&b)));
    }

    #[test]
    fn fifth_sharing_gives_twelve_tokens() {
        let g = grammar();
        let a = generate_language(&g, 0, 0.2, 5).unwrap();
        let b = generate_language(&g, 3, 0.2, 5).unwrap();
        assert_eq!(token_set(&a).intersection(&token_set(&b)).count(), 12);
        let layout = VocabLayout::new(64, 0.2, 4);
        assert!(b
            .lexicon
            .iter()
            .all(|&t| (t as usize) < layout.size() && t as usize >= SPECIAL_COUNT));
        assert_eq!(token_set(&b).len(), 64);
    }

    #[test]
    fn index_bound() {
        assert!(generate_language(&grammar(), 16, 0.2, 1).is_err());
    }

    #[test]
    fn empty_rule_is_substitution() {
        let g = grammar();
        let l = generate_language(&g, 2, 0.2, 1).unwrap().with_reorder(vec![]);
        let s = g.sample_sentence(10, &mut Rng::new(1)).unwrap();
        let r = l.render(&s).unwrap();
        let expect: Vec<TokenId> = s.iter().map(|t| l.lexicon[t.symbol as usize]).collect();
        assert_eq!(r.tokens, expect);
    }

    #[test]
    fn round_trip_and_category_permutation() {
        let g = grammar();
        let a = generate_language(&g, 1, 0.2, 8).unwrap();
        let b = generate_language(&g, 2, 0.2, 8).unwrap();
        let mut rng = Rng::new(77);
        for _ in 0..200 {
            let s = g.sample_sentence(4 + rng.below(29), &mut rng).unwrap();
            let ra = a.render(&s).unwrap();
            let rb = b.render(&s).unwrap();
            assert_eq!(ra.tokens.len(), rb.tokens.len());
            let mut ca = ra.categories.clone();
            let mut cb = rb.categories.clone();
            ca.sort();
            cb.sort();
            assert_eq!(ca, cb);
            assert_eq!(a.inverse_render(&ra).unwrap(), s);
            assert_eq!(b.inverse_render(&rb).unwrap(), s);
        }
    }

    #[test]
    fn unknown_symbol_rejected() {
        let g = grammar();
        let l = generate_language(&g, 0, 0.2, 1).unwrap();
        let bad = [AbstractToken {
            symbol: 999,
            category: Category::Entity,
        }];
        assert!(l.render(&bad).is_err());
    }
}
