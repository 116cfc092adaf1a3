use std::io::Write;

use serde::Serialize;

use super::{TicketVerdict, TransferMatrix};
use crate::error::{ensure, Error, Result};

/// Mean relative change of `source`'s mask against each target's own ticket:
/// `1/(|L|-1) * sum_{t != s} (a(s,t) - a(t,t)) / |a(t,t)|`, on higher-is-better
/// values (perplexities are negated).
pub fn relative_drop(matrix: &TransferMatrix, source: usize) -> Result<f64> {
    let n = matrix.languages.len();
    ensure!(n >= 2, "relative drop needs at least two languages");
    ensure!(source < n, "source index {source} out of range");
    let o = matrix.orientation();
    let mut total = 0.0;
    for t in (0..n).filter(|&t| t != source) {
        let own = o.to_higher(matrix.value(t, t));
        ensure!(own != 0.0, "target {} has a zero diagonal value", matrix.languages[t]);
        total += (o.to_higher(matrix.value(source, t)) - own) / own.abs();
    }
    Ok(total / (n - 1) as f64)
}

/// One-sided sign test: probability of at least as many positive differences
/// under a fair coin (zeros are dropped).
pub fn sign_test(diffs: &[f64]) -> f64 {
    let pos = diffs.iter().filter(|d| **d > 0.0).count();
    let n = diffs.iter().filter(|d| **d != 0.0).count();
    if n == 0 {
        return 1.0;
    }
    // Sum of binomial(n, k) / 2^n for k >= pos, in log space for stability.
    let ln_choose = |n: usize, k: usize| -> f64 { (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum() };
    (pos..=n)
        .map(|k| (ln_choose(n, k) - n as f64 * std::f64::consts::LN_2).exp())
        .sum::<f64>()
        .min(1.0)
}

#[derive(Serialize)]
struct CellRow<'a> {
    task: &'a str,
    sparsity: f64,
    source: &'a str,
    target: &'a str,
    seed: u64,
    metric: f64,
    best_step: usize,
}

/// Long-format CSV: one row per (task, sparsity, source, target, seed).
pub fn write_transfer_csv(matrix: &TransferMatrix, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let task = matrix.task.name();
    let rows = matrix.cells.iter().flatten().chain(&matrix.random_row);
    for c in rows {
        for r in &c.outcome.runs {
            w.serialize(CellRow {
                task,
                sparsity: matrix.sparsity,
                source: &c.source,
                target: &c.target,
                seed: r.seed,
                metric: r.best_metric,
                best_step: r.best_step,
            })
            .map_err(|e| Error::Format(e.to_string()))?;
        }
    }
    for b in &matrix.full_row {
        for r in &b.outcome.runs {
            w.serialize(CellRow {
                task,
                sparsity: 0.0,
                source: "full",
                target: &b.language,
                seed: r.seed,
                metric: r.best_metric,
                best_step: r.best_step,
            })
            .map_err(|e| Error::Format(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One JSON record per verdict, keyed by the given labels.
pub fn write_verdicts_jsonl<K: Serialize>(verdicts: &[(K, TicketVerdict)], mut out: impl Write) -> Result<()> {
    #[derive(Serialize)]
    struct Rec<'a, K> {
        key: &'a K,
        #[serde(flatten)]
        verdict: &'a TicketVerdict,
    }
    for (key, verdict) in verdicts {
        serde_json::to_writer(&mut out, &Rec { key, verdict }).map_err(|e| Error::Format(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
