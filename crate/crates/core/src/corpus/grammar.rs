use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numerics::{Matrix, Rng};

pub const CATEGORY_COUNT: usize = 4;

/// Lengths accepted by the sentence sampler.
pub const SENTENCE_LEN_RANGE: std::ops::RangeInclusive<usize> = 4..=32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Category {
    Entity = 0,
    Action = 1,
    Modifier = 2,
    Filler = 3,
}

impl Category {
    pub const ALL: [Category; CATEGORY_COUNT] =
        [Category::Entity, Category::Action, Category::Modifier, Category::Filler];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Category {
        Category::ALL[i]
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Entity => "ENTITY",
            Category::Action => "ACTION",
            Category::Modifier => "MODIFIER",
            Category::Filler => "FILLER",
        }
    }
}

pub type Symbol = u16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractToken {
    pub symbol: Symbol,
    pub category: Category,
}

pub type AbstractSentence = Vec<AbstractToken>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrammarConfig {
    pub symbol_count: usize,
    /// Fraction of the next category's block that each category may also emit.
    /// Borrowed symbols make tags context dependent.
    pub ambiguity: f64,
    /// Row-stochastic category transition matrix; `None` selects the built-in chain.
    pub transition: Option<Vec<Vec<f64>>>,
    pub seed: u64,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        GrammarConfig {
            symbol_count: 64,
            ambiguity: 0.25,
            transition: None,
            seed: 17,
        }
    }
}

/// Entity-action-modifier chain with a filler category that can appear anywhere.
pub fn default_transition() -> Vec<Vec<f64>> {
    vec![
        vec![0.10, 0.50, 0.10, 0.30],
        vec![0.40, 0.05, 0.40, 0.15],
        vec![0.60, 0.10, 0.20, 0.10],
        vec![0.30, 0.30, 0.20, 0.20],
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbstractGrammar {
    pub symbol_count: usize,
    pub category_count: usize,
    pub category_transition: Matrix,
    pub start_distribution: Vec<f64>,
    /// Symbols emittable by each category.
    pub pools: Vec<Vec<Symbol>>,
    /// Home category of each symbol (the block it was allocated from).
    pub home_category: Vec<Category>,
    /// Fixed-point-free involution over the ACTION pool, indexed by symbol
    /// (identity outside the pool).
    pub antonym: Vec<Symbol>,
    pub seed: u64,
}

impl AbstractGrammar {
    pub fn new(cfg: &GrammarConfig) -> Result<Self> {
        let a = cfg.symbol_count;
        ensure!(
            a >= 2 * CATEGORY_COUNT && a.is_multiple_of(CATEGORY_COUNT),
            "symbol_count must be a positive multiple of {CATEGORY_COUNT} (>= 8), got {a}"
        );
        ensure!(a <= Symbol::MAX as usize, "symbol_count too large");
        ensure!((0.0..=1.0).contains(&cfg.ambiguity), "ambiguity must be in [0,1]");
        let rows = cfg.transition.clone().unwrap_or_else(default_transition);
        let transition = Matrix::from_rows(&rows)?;
        ensure!(
            transition.shape() == (CATEGORY_COUNT, CATEGORY_COUNT),
            "transition must be {CATEGORY_COUNT}x{CATEGORY_COUNT}"
        );
        let block = a / CATEGORY_COUNT;
        let borrowed = (cfg.ambiguity * block as f64).floor() as usize;
        let home_category = (0..a).map(|s| Category::from_index(s / block)).collect();
        let pools: Vec<Vec<Symbol>> = (0..CATEGORY_COUNT)
            .map(|c| {
                let own = (c * block..(c + 1) * block).map(|s| s as Symbol);
                let next = (c + 1) % CATEGORY_COUNT;
                let extra = (next * block..next * block + borrowed).map(|s| s as Symbol);
                own.chain(extra).collect()
            })
            .collect();

        let action_pool = &pools[Category::Action.index()];
        ensure!(
            action_pool.len().is_multiple_of(2),
            "ACTION pool has odd size {}; adjust ambiguity",
            action_pool.len()
        );
        let mut shuffled = action_pool.clone();
        Rng::new(cfg.seed).child("antonyms").shuffle(&mut shuffled);
        let mut antonym: Vec<Symbol> = (0..a as Symbol).collect();
        for pair in shuffled.chunks(2) {
            antonym[pair[0] as usize] = pair[1];
            antonym[pair[1] as usize] = pair[0];
        }

        let start_distribution = stationary(&transition);
        let g = AbstractGrammar {
            symbol_count: a,
            category_count: CATEGORY_COUNT,
            category_transition: transition,
            start_distribution,
            pools,
            home_category,
            antonym,
            seed: cfg.seed,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..self.category_count {
            let row = self.category_transition.row(i);
            ensure!(row.iter().all(|&p| p >= 0.0), "negative transition probability");
            let sum: f64 = row.iter().sum();
            ensure!((sum - 1.0).abs() <= 1e-12, "transition row {i} sums to {sum}");
        }
        let start_sum: f64 = self.start_distribution.iter().sum();
        ensure!(
            (start_sum - 1.0).abs() <= 1e-9,
            "start distribution sums to {start_sum}"
        );
        for &s in &self.pools[Category::Action.index()] {
            let t = self.antonym[s as usize];
            ensure!(t != s, "antonym pairing has a fixed point at {s}");
            ensure!(
                self.antonym[t as usize] == s,
                "antonym pairing is not an involution at {s}"
            );
        }
        Ok(())
    }

    /// Replace the start distribution (e.g. to force a start category).
    pub fn with_start(mut self, start: Vec<f64>) -> Result<Self> {
        ensure!(start.len() == self.category_count, "start distribution length");
        self.start_distribution = start;
        self.validate()?;
        Ok(self)
    }

    pub fn with_transition(mut self, rows: Vec<Vec<f64>>) -> Result<Self> {
        self.category_transition = Matrix::from_rows(&rows)?;
        self.validate()?;
        Ok(self)
    }

    pub fn pool(&self, c: Category) -> &[Symbol] {
        &self.pools[c.index()]
    }

    pub fn sample_symbol(&self, c: Category, rng: &mut Rng) -> Symbol {
        let pool = self.pool(c);
        pool[rng.below(pool.len())]
    }

    /// Markov chain over categories, symbols uniform within each category's pool.
    pub fn sample_sentence(&self, length: usize, rng: &mut Rng) -> Result<AbstractSentence> {
        ensure!(
            SENTENCE_LEN_RANGE.contains(&length),
            "sentence length {length} outside {SENTENCE_LEN_RANGE:?}"
        );
        let mut out = Vec::with_capacity(length);
        let mut cat = Category::from_index(rng.categorical(&self.start_distribution));
        for t in 0..length {
            if t > 0 {
                cat = Category::from_index(rng.categorical(self.category_transition.row(cat.index())));
            }
            out.push(AbstractToken {
                symbol: self.sample_symbol(cat, rng),
                category: cat,
            });
        }
        Ok(out)
    }
}

pub fn sample_abstract_sentence(grammar: &AbstractGrammar, length: usize, rng: &mut Rng) -> Result<AbstractSentence> {
    grammar.sample_sentence(length, rng)
}

/// Stationary distribution by power iteration from uniform.
fn stationary(t: &Matrix) -> Vec<f64> {
    let n = t.rows();
    let mut p = vec![1.0 / n as f64; n];
    for _ in 0..10_000 {
        let mut next = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                next[j] += p[i] * t[(i, j)];
            }
        }
        let delta: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        p = next;
        if delta < 1e-15 {
            break;
        }
    }
    let s: f64 = p.iter().sum();
    p.iter().map(|x| x / s).collect()
}
