//! Mask discovery: iterative magnitude pruning with rewind, difference from
//! initialization and diagonal Fisher information.

mod imp;
mod importance;

pub use imp::{imp, write_trace_jsonl, ImpRound, ImpSchedule, ImpTrace};
pub use importance::{diff_from_init_mask, diff_scores, fisher_diagonal, fisher_mask, FisherMode};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::masks::{zero_count, Mask, Provenance};

/// Whether pruning thresholds are shared across tensors or applied per tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneScope {
    #[default]
    Global,
    PerTensor,
}

/// Zero the lowest-scoring kept coordinates of `mask` until it has
/// `target_zeros` zeros. `scores` are flat over the prunable coordinates; ties
/// are broken by flat index (entry order, then offset). In per-tensor scope
/// every entry reaches the same sparsity independently.
pub fn extend_mask(
    mask: &Mask,
    scores: &[f64],
    target_sparsity: f64,
    scope: PruneScope,
    provenance: Provenance,
) -> Result<Mask> {
    let n = mask.len();
    ensure!(
        scores.len() == n,
        "score vector has {} values for {} prunable coordinates",
        scores.len(),
        n
    );
    ensure!(scores.iter().all(|s| !s.is_nan()), "NaN importance score");
    let keep = mask.to_bools();
    let mut prune = vec![false; n];
    let mut select = |range: std::ops::Range<usize>, target: usize| -> Result<()> {
        let already = range.clone().filter(|&i| !keep[i]).count();
        ensure!(
            already <= target,
            "mask already has {already} zeros, more than the target {target}"
        );
        let mut kept: Vec<usize> = range.filter(|&i| keep[i]).collect();
        kept.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        for &i in kept.iter().take(target - already) {
            prune[i] = true;
        }
        Ok(())
    };
    match scope {
        PruneScope::Global => select(0..n, zero_count(target_sparsity, n))?,
        PruneScope::PerTensor => {
            let mut offset = 0;
            for e in mask.entries() {
                select(offset..offset + e.len(), zero_count(target_sparsity, e.len()))?;
                offset += e.len();
            }
        }
    }
    let mut out = mask.clone();
    let bits: Vec<bool> = keep.iter().zip(&prune).map(|(k, p)| *k && !p).collect();
    let mut flat = 0;
    let entries = out
        .entries()
        .iter()
        .map(|e| {
            let mut e = e.clone();
            for i in 0..e.len() {
                e.set(i, bits[flat + i]);
            }
            flat += e.len();
            e
        })
        .collect();
    out = Mask::from_entries(entries, target_sparsity, provenance);
    Ok(out)
}
