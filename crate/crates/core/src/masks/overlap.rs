use std::collections::BTreeMap;

use serde::Serialize;

use super::{zero_count, Mask, Provenance};
use crate::error::{ensure, Result};
use crate::model::{layer_index, ParamSet};
use crate::numerics::{Matrix, Rng};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerOverlap {
    pub layer: String,
    pub jaccard: f64,
    pub intersection: usize,
    pub union: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    pub first: String,
    pub second: String,
    pub global_jaccard: f64,
    pub intersection: usize,
    pub union: usize,
    pub per_layer: Vec<LayerOverlap>,
}

fn ratio(inter: usize, union: usize) -> f64 {
    // Two fully pruned masks are identical.
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn layer_name(entry: &str) -> String {
    layer_index(entry).map_or_else(|| "other".to_string(), |k| format!("layer{k}"))
}

/// Jaccard similarity of the kept coordinates of two masks, globally and per encoder layer.
pub fn jaccard(a: &Mask, b: &Mask) -> Result<OverlapReport> {
    a.check_compatible(b)?;
    let mut layers: BTreeMap<(usize, String), (usize, usize)> = BTreeMap::new();
    let (mut inter, mut union) = (0, 0);
    for (ea, eb) in a.entries().iter().zip(b.entries()) {
        let (mut i, mut u) = (0usize, 0usize);
        for (x, y) in ea.words().iter().zip(eb.words()) {
            i += (x & y).count_ones() as usize;
            u += (x | y).count_ones() as usize;
        }
        inter += i;
        union += u;
        let key = (layer_index(&ea.name).unwrap_or(usize::MAX), layer_name(&ea.name));
        let slot = layers.entry(key).or_default();
        slot.0 += i;
        slot.1 += u;
    }
    Ok(OverlapReport {
        first: a.provenance.label(),
        second: b.provenance.label(),
        global_jaccard: ratio(inter, union),
        intersection: inter,
        union,
        per_layer: layers
            .into_iter()
            .map(|((_, layer), (i, u))| LayerOverlap {
                layer,
                jaccard: ratio(i, u),
                intersection: i,
                union: u,
            })
            .collect(),
    })
}

/// Exactly `floor(s * N)` zeros placed uniformly over all prunable coordinates.
pub fn random_mask(schema: &ParamSet, s: f64, seed: u64) -> Result<Mask> {
    ensure!((0.0..1.0).contains(&s), "sparsity {s} outside [0, 1)");
    let mut mask = Mask::ones(schema);
    let n = mask.len();
    let zeros = Rng::new(seed).choose_sorted(n, zero_count(s, n));
    clear_flat(&mut mask, &zeros);
    mask.target_sparsity = s;
    mask.provenance = Provenance {
        seed,
        ..Provenance::new("random")
    };
    Ok(mask)
}

/// Keep the zeros of `base` and prune further uniformly among its kept coordinates.
pub fn hybrid_random_mask(base: &Mask, target_s: f64, seed: u64) -> Result<Mask> {
    ensure!((0.0..1.0).contains(&target_s), "sparsity {target_s} outside [0, 1)");
    let n = base.len();
    let target = zero_count(target_s, n);
    ensure!(
        base.zeros() <= target,
        "base sparsity {} already exceeds target {target_s}",
        base.sparsity()
    );
    let kept: Vec<usize> = base
        .to_bools()
        .iter()
        .enumerate()
        .filter(|(_, &k)| k)
        .map(|(i, _)| i)
        .collect();
    let picks = Rng::new(seed).choose_sorted(kept.len(), target - base.zeros());
    let zeros: Vec<usize> = picks.into_iter().map(|p| kept[p]).collect();
    let mut mask = base.clone();
    clear_flat(&mut mask, &zeros);
    mask.target_sparsity = target_s;
    mask.provenance = Provenance {
        method: format!("hybrid({})", base.provenance.method),
        seed,
        ..base.provenance.clone()
    };
    Ok(mask)
}

/// Clear the given sorted flat coordinates.
fn clear_flat(mask: &mut Mask, sorted: &[usize]) {
    let mut offset = 0;
    let mut it = sorted.iter().peekable();
    for e in &mut mask.entries {
        let end = offset + e.len();
        while let Some(&&z) = it.peek() {
            if z >= end {
                break;
            }
            e.set(z - offset, false);
            it.next();
        }
        offset = end;
    }
}

/// Symmetric matrix of global Jaccard values with unit diagonal.
pub fn overlap_matrix(masks: &[Mask]) -> Result<Matrix> {
    ensure!(masks.len() >= 2, "overlap matrix needs at least two masks");
    let n = masks.len();
    let mut m = Matrix::identity(n);
    for i in 0..n {
        for j in i + 1..n {
            let v = jaccard(&masks[i], &masks[j])?.global_jaccard;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}
