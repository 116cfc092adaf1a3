use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ensure, Error, Result};
use crate::numerics::FlatParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub prunable: bool,
}

impl ParamEntry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>, prunable: bool) -> Result<Self> {
        let name = name.into();
        ensure!(
            shape.iter().product::<usize>() == values.len(),
            "entry {name}: shape {shape:?} does not match {} values",
            values.len()
        );
        Ok(ParamEntry {
            name,
            shape,
            values,
            prunable,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Encoder block index parsed from names like `layer2.attn.wq`.
    pub fn layer_index(&self) -> Option<usize> {
        layer_index(&self.name)
    }
}

pub fn layer_index(name: &str) -> Option<usize> {
    let rest = name.strip_prefix("layer")?;
    let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() || !rest[digits.len()..].starts_with('.') {
        return None;
    }
    digits.parse().ok()
}

/// Ordered, named collection of parameter tensors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new(entries: Vec<ParamEntry>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            ensure!(seen.insert(e.name.as_str()), "duplicate parameter name {}", e.name);
        }
        Ok(ParamSet { entries })
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.iter_mut().find(|e| e.name == name)
    }

    pub fn prunable(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter().filter(|e| e.prunable)
    }

    /// Indices (into `entries`) of prunable tensors, in order.
    pub fn prunable_indices(&self) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.prunable)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn num_prunable(&self) -> usize {
        self.prunable().map(ParamEntry::len).sum()
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(ParamEntry::len).sum()
    }

    /// Prunable values concatenated in entry order.
    pub fn prunable_values(&self) -> Vec<f64> {
        self.prunable().flat_map(|e| e.values.iter().copied()).collect()
    }

    /// SHA-256 over names and shapes of the prunable entries.
    pub fn schema_digest(&self) -> [u8; 32] {
        schema_digest(self.prunable().map(|e| (e.name.as_str(), e.shape.as_slice())))
    }

    /// SHA-256 over the full content (names, shapes, flags and value bits).
    pub fn content_digest(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.name.as_bytes());
            h.update([e.prunable as u8]);
            for d in &e.shape {
                h.update((*d as u64).to_le_bytes());
            }
            for v in &e.values {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|e| vec![0.0; e.len()]).collect()
    }

    pub fn check_finite(&self) -> Result<()> {
        for e in &self.entries {
            if e.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameter {}", e.name)));
            }
        }
        Ok(())
    }

    /// Map a flat coordinate to `(entry, offset)`.
    pub fn locate(&self, mut index: usize) -> (usize, usize) {
        for (i, e) in self.entries.iter().enumerate() {
            if index < e.len() {
                return (i, index);
            }
            index -= e.len();
        }
        panic!("flat index out of range");
    }

    /// First flat coordinate of each entry.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.entries
            .iter()
            .map(|e| {
                let o = acc;
                acc += e.len();
                o
            })
            .collect()
    }
}

impl FlatParams for ParamSet {
    fn num_coords(&self) -> usize {
        self.num_values()
    }

    fn coord(&self, index: usize) -> f64 {
        let (e, o) = self.locate(index);
        self.entries[e].values[o]
    }

    fn set_coord(&mut self, index: usize, value: f64) {
        let (e, o) = self.locate(index);
        self.entries[e].values[o] = value;
    }
}

/// SHA-256 over a sequence of (name, shape) pairs.
pub fn schema_digest<'a>(items: impl Iterator<Item = (&'a str, &'a [usize])>) -> [u8; 32] {
    let mut h = Sha256::new();
    for (name, shape) in items {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((shape.len() as u64).to_le_bytes());
        for d in shape {
            h.update((*d as u64).to_le_bytes());
        }
    }
    h.finalize().into()
}

/// Gradient buffers parallel to a [`ParamSet`]'s entries.
pub type Grads = Vec<Vec<f64>>;

pub fn flatten(grads: &Grads) -> Vec<f64> {
    grads.iter().flatten().copied().collect()
}

/// Flat coordinates for a gradient check: entries are visited round-robin and
/// a random coordinate with `|grad| >= min_abs` is drawn from each.
pub fn probe_coordinates(grads: &Grads, count: usize, min_abs: f64, seed: u64) -> Vec<usize> {
    let mut rng = crate::numerics::Rng::new(seed);
    let mut offset = 0;
    let mut pools = Vec::new();
    for g in grads {
        let live: Vec<usize> = (0..g.len())
            .filter(|&i| g[i].abs() >= min_abs)
            .map(|i| offset + i)
            .collect();
        if !live.is_empty() {
            pools.push(live);
        }
        offset += g.len();
    }
    if pools.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|k| {
            let pool = &pools[k % pools.len()];
            pool[rng.below(pool.len())]
        })
        .collect()
}
