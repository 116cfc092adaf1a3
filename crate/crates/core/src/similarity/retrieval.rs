use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::numerics::{dot, norm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub k: usize,
    /// Index into the captured layers (0 is the embedding output).
    pub layer: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { k: 4, layer: 0 }
    }
}

impl RetrievalConfig {
    pub fn with_k(self, k: usize) -> Self {
        RetrievalConfig { k, ..self }
    }
}

#[derive(Debug, Clone)]
pub struct RetrievalResult {
    pub top1: f64,
    pub top5: f64,
    /// `scores[(i, j)]` is the margin score of source `i` against target `j`.
    pub scores: Matrix,
}

fn unit_rows(m: &Matrix, side: &'static str) -> Result<Vec<Vec<f64>>> {
    (0..m.rows())
        .map(|i| {
            let r = m.row(i);
            let len = norm(r);
            if !(len > 0.0) || !len.is_finite() {
                return Err(Error::DegenerateRepresentation { side, row: i });
            }
            Ok(r.iter().map(|v| v / len).collect())
        })
        .collect()
}

/// Cosine similarity of every source row against every target row.
pub fn cosine_matrix(src: &Matrix, tgt: &Matrix) -> Result<Matrix> {
    ensure!(
        src.cols() == tgt.cols(),
        "representation widths differ: {} vs {}",
        src.cols(),
        tgt.cols()
    );
    let a = unit_rows(src, "source")?;
    let b = unit_rows(tgt, "target")?;
    Ok(Matrix::from_fn(a.len(), b.len(), |i, j| dot(&a[i], &b[j])))
}

fn top_k_sum(values: impl Iterator<Item = f64>, k: usize) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v[..k].iter().sum()
}

/// Rank of the aligned candidate (0 = retrieved first); ties broken by index.
fn rank_of_truth(row: &[f64], truth: usize) -> usize {
    let t = row[truth];
    row.iter()
        .enumerate()
        .filter(|&(j, &s)| s > t || (s == t && j < truth))
        .count()
}

/// Margin retrieval with ground truth given by row alignment. Rows are sentences.
pub fn margin_retrieve(src: &Matrix, tgt: &Matrix, cfg: &RetrievalConfig) -> Result<RetrievalResult> {
    let n = src.rows();
    ensure!(
        n > 0 && tgt.rows() == n,
        "retrieval needs equal, non-zero pair counts ({} vs {})",
        n,
        tgt.rows()
    );
    ensure!(
        cfg.k >= 1 && cfg.k <= n,
        "neighbour count k={} must be in 1..={n}",
        cfg.k
    );
    let cos = cosine_matrix(src, tgt)?;
    let two_k = 2.0 * cfg.k as f64;
    let src_nb: Vec<f64> = (0..n)
        .map(|i| top_k_sum(cos.row(i).iter().copied(), cfg.k) / two_k)
        .collect();
    let tgt_nb: Vec<f64> = (0..n)
        .map(|j| top_k_sum((0..n).map(|i| cos[(i, j)]), cfg.k) / two_k)
        .collect();
    let scores = Matrix::from_fn(n, n, |i, j| cos[(i, j)] / (src_nb[i] + tgt_nb[j]));
    if !scores.is_finite() {
        return Err(Error::NonFinite(
            "margin scores (zero neighbourhood denominator)".into(),
        ));
    }
    let ranks: Vec<usize> = (0..n).map(|i| rank_of_truth(scores.row(i), i)).collect();
    let frac = |cut: usize| ranks.iter().filter(|&&r| r < cut).count() as f64 / n as f64;
    Ok(RetrievalResult {
        top1: frac(1),
        top5: frac(5),
        scores,
    })
}

pub fn write_retrieval_csv(rows: &[(String, usize, f64, f64)], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["pair", "k", "top1", "top5"]).map_err(csv_err)?;
    for (pair, k, t1, t5) in rows {
        w.write_record([pair.clone(), k.to_string(), t1.to_string(), t5.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Full score matrix for audit, one row per source sentence.
pub fn write_scores_csv(scores: &Matrix, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for i in 0..scores.rows() {
        w.write_record(scores.row(i).iter().map(|v| v.to_string()))
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}
