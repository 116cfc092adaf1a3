//! Binary masks over the prunable coordinates of a [`ParamSet`].

mod io;
mod overlap;

pub use io::{load_mask, read_mask, save_mask, write_mask, write_overlap_csv};
pub use overlap::{hybrid_random_mask, jaccard, overlap_matrix, random_mask, OverlapReport};

use serde::{Deserialize, Serialize};

use crate::corpus::TaskKind;
use crate::error::{ensure, Error, Result};
use crate::model::{schema_digest, Grads, ParamSet};

/// Number of coordinates zeroed at sparsity `s` over `n` coordinates.
pub fn zero_count(s: f64, n: usize) -> usize {
    (((s * n as f64) + 1e-9).floor() as usize).min(n)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskEntry {
    pub name: String,
    pub shape: Vec<usize>,
    len: usize,
    bits: Vec<u64>,
}

impl MaskEntry {
    pub fn ones(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len: usize = shape.iter().product();
        let mut bits = vec![u64::MAX; len.div_ceil(64)];
        if !len.is_multiple_of(64) {
            if let Some(last) = bits.last_mut() {
                *last = (1u64 << (len % 64)) - 1;
            }
        }
        MaskEntry {
            name: name.into(),
            shape,
            len,
            bits,
        }
    }

    pub(crate) fn from_words(name: String, shape: Vec<usize>, bits: Vec<u64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        ensure!(
            bits.len() == len.div_ceil(64),
            "bitset length does not match shape of {name}"
        );
        if !len.is_multiple_of(64) {
            let extra = bits.last().copied().unwrap_or(0) >> (len % 64);
            if extra != 0 {
                return Err(Error::Format(format!("padding bits set in mask entry {name}")));
            }
        }
        Ok(MaskEntry { name, shape, len, bits })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.bits
    }

    pub fn get(&self, i: usize) -> bool {
        (self.bits[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, keep: bool) {
        assert!(i < self.len);
        let bit = 1u64 << (i % 64);
        if keep {
            self.bits[i / 64] |= bit;
        } else {
            self.bits[i / 64] &= !bit;
        }
    }

    pub fn kept(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }
}

/// Where a mask came from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub task: Option<TaskKind>,
    pub languages: Vec<String>,
    pub seed: u64,
    pub rounds: u32,
}

impl Provenance {
    pub fn new(method: impl Into<String>) -> Self {
        Provenance {
            method: method.into(),
            ..Provenance::default()
        }
    }

    pub fn label(&self) -> String {
        let mut s = self.method.clone();
        if let Some(t) = self.task {
            s.push(':');
            s.push_str(t.name());
        }
        if !self.languages.is_empty() {
            s.push(':');
            s.push_str(&self.languages.join("+"));
        }
        s.push_str(&format!(":seed{}", self.seed));
        s
    }
}

/// A keep (1) / prune (0) bit per prunable coordinate, entry-aligned with a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    entries: Vec<MaskEntry>,
    pub target_sparsity: f64,
    pub provenance: Provenance,
}

impl Mask {
    /// All-ones mask over the prunable entries of `params`.
    pub fn ones(params: &ParamSet) -> Mask {
        Mask {
            entries: params
                .prunable()
                .map(|e| MaskEntry::ones(e.name.clone(), e.shape.clone()))
                .collect(),
            target_sparsity: 0.0,
            provenance: Provenance::new("dense"),
        }
    }

    pub fn from_entries(entries: Vec<MaskEntry>, target_sparsity: f64, provenance: Provenance) -> Mask {
        Mask {
            entries,
            target_sparsity,
            provenance,
        }
    }

    /// Build from a flat keep predicate over all prunable coordinates.
    pub fn from_flat(
        params: &ParamSet,
        keep: impl Fn(usize) -> bool,
        target_sparsity: f64,
        provenance: Provenance,
    ) -> Mask {
        let mut m = Mask::ones(params);
        let mut flat = 0;
        for e in &mut m.entries {
            for i in 0..e.len {
                if !keep(flat) {
                    e.set(i, false);
                }
                flat += 1;
            }
        }
        m.target_sparsity = target_sparsity;
        m.provenance = provenance;
        m
    }

    pub fn entries(&self) -> &[MaskEntry] {
        &self.entries
    }

    /// Total number of prunable coordinates.
    pub fn len(&self) -> usize {
        self.entries.iter().map(|e| e.len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kept(&self) -> usize {
        self.entries.iter().map(MaskEntry::kept).sum()
    }

    pub fn zeros(&self) -> usize {
        self.len() - self.kept()
    }

    /// Realized fraction of zeroed coordinates.
    pub fn sparsity(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.zeros() as f64 / self.len() as f64
        }
    }

    pub fn schema_digest(&self) -> [u8; 32] {
        schema_digest(self.entries.iter().map(|e| (e.name.as_str(), e.shape.as_slice())))
    }

    /// Hex SHA-256 over the schema and the keep bits (provenance excluded).
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.schema_digest());
        for e in &self.entries {
            for w in &e.bits {
                h.update(w.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Keep bit for flat coordinate `i` over all prunable coordinates.
    pub fn get_flat(&self, mut i: usize) -> bool {
        for e in &self.entries {
            if i < e.len {
                return e.get(i);
            }
            i -= e.len;
        }
        panic!("mask index out of range");
    }

    /// Keep bits flattened in entry order.
    pub fn to_bools(&self) -> Vec<bool> {
        self.entries
            .iter()
            .flat_map(|e| (0..e.len).map(move |i| e.get(i)))
            .collect()
    }

    pub fn same_schema(&self, other: &Mask) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    pub fn check_compatible(&self, other: &Mask) -> Result<()> {
        ensure!(self.same_schema(other), "masks have different schemas");
        Ok(())
    }

    /// Parameter-entry index for each mask entry, verifying names and shapes.
    pub fn align(&self, params: &ParamSet) -> Result<Vec<usize>> {
        let idx = params.prunable_indices();
        if idx.len() != self.entries.len() {
            return Err(Error::Incompatible(format!(
                "mask has {} entries, parameter set has {} prunable entries",
                self.entries.len(),
                idx.len()
            )));
        }
        for (&i, m) in idx.iter().zip(&self.entries) {
            let p = &params.entries()[i];
            if p.name != m.name || p.shape != m.shape {
                return Err(Error::Incompatible(format!(
                    "mask entry {} {:?} does not match parameter {} {:?}",
                    m.name, m.shape, p.name, p.shape
                )));
            }
        }
        Ok(idx)
    }

    /// Zero every masked coordinate of `params` in place.
    pub fn apply(&self, params: &mut ParamSet) -> Result<()> {
        let idx = self.align(params)?;
        for (&i, m) in idx.iter().zip(&self.entries) {
            zero_masked(m, &mut params.entries_mut()[i].values);
        }
        Ok(())
    }

    /// `m ⊙ θ` as a new parameter set.
    pub fn applied(&self, params: &ParamSet) -> Result<ParamSet> {
        let mut p = params.clone();
        self.apply(&mut p)?;
        Ok(p)
    }

    /// Zero gradients of masked coordinates.
    pub fn apply_grads(&self, params: &ParamSet, grads: &mut Grads) -> Result<()> {
        let idx = self.align(params)?;
        for (&i, m) in idx.iter().zip(&self.entries) {
            zero_masked(m, &mut grads[i]);
        }
        Ok(())
    }

    /// True when every kept bit of `self` is also kept in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.same_schema(other)
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.bits.iter().zip(&b.bits).all(|(x, y)| x & !y == 0))
    }
}

fn zero_masked(m: &MaskEntry, values: &mut [f64]) {
    for (w, word) in m.bits.iter().enumerate() {
        if *word == u64::MAX {
            continue;
        }
        let base = w * 64;
        let end = (base + 64).min(m.len);
        for (j, v) in values[base..end].iter_mut().enumerate() {
            if (word >> j) & 1 == 0 {
                *v = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParamEntry;

    pub(crate) fn toy_params(sizes: &[usize]) -> ParamSet {
        let entries = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                ParamEntry::new(
                    format!("layer{}.w", i + 1),
                    vec![n],
                    (0..n).map(|k| k as f64 + 1.0).collect(),
                    true,
                )
                .unwrap()
            })
            .collect();
        ParamSet::new(entries).unwrap()
    }

    #[test]
    fn ones_and_padding() {
        let p = toy_params(&[70, 3]);
        let m = Mask::ones(&p);
        assert_eq!(m.len(), 73);
        assert_eq!(m.kept(), 73);
        assert_eq!(m.sparsity(), 0.0);
        assert_eq!(m.entries()[0].words()[1], 0b111111);
    }

    #[test]
    fn apply_zeroes_exactly_masked() {
        let p = toy_params(&[5]);
        let m = Mask::from_flat(&p, |i| i % 2 == 0, 0.4, Provenance::new("t"));
        assert_eq!(m.zeros(), 2);
        let q = m.applied(&p).unwrap();
        assert_eq!(q.entries()[0].values, vec![1.0, 0.0, 3.0, 0.0, 5.0]);
    }

    #[test]
    fn misaligned_rejected() {
        let m = Mask::ones(&toy_params(&[5]));
        assert!(matches!(m.align(&toy_params(&[6])), Err(Error::Incompatible(_))));
    }

    #[test]
    fn zero_count_floors() {
        assert_eq!(zero_count(0.29, 100), 29);
        assert_eq!(zero_count(0.5, 101), 50);
        assert_eq!(zero_count(0.0, 10), 0);
    }

    #[test]
    fn subset() {
        let p = toy_params(&[8]);
        let a = Mask::from_flat(&p, |i| i < 3, 0.0, Provenance::default());
        let b = Mask::from_flat(&p, |i| i < 5, 0.0, Provenance::default());
        assert!(a.is_subset_of(&b));
        assert!(!b.is_subset_of(&a));
    }
}
