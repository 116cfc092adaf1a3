//! One-sided (Hestenes) Jacobi SVD.

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `rows x k` with orthonormal columns, `k = min(rows, cols)`.
    pub u: Matrix,
    /// Descending, non-negative.
    pub singular_values: Vec<f64>,
    /// `k x cols` with orthonormal rows.
    pub vt: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let k = self.singular_values.len();
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for j in 0..k {
                us[(i, j)] *= self.singular_values[j];
            }
        }
        us.matmul(&self.vt).expect("svd factors are conformant")
    }

    /// Number of leading singular values whose squared mass reaches `fraction` of the total.
    pub fn rank_for_energy(&self, fraction: f64) -> usize {
        let total: f64 = self.singular_values.iter().map(|s| s * s).sum();
        if fraction >= 1.0 {
            return self.singular_values.len();
        }
        if total == 0.0 {
            return 1;
        }
        let mut acc = 0.0;
        for (i, s) in self.singular_values.iter().enumerate() {
            acc += s * s;
            if acc >= fraction * total {
                return i + 1;
            }
        }
        self.singular_values.len()
    }
}

const TOL: f64 = 1e-15;

pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if !a.is_finite() {
        return Err(Error::NonFinite("svd input".into()));
    }
    if a.rows() >= a.cols() {
        jacobi_tall(a)
    } else {
        let t = jacobi_tall(&a.transpose())?;
        Ok(SvdResult {
            u: t.vt.transpose(),
            singular_values: t.singular_values,
            vt: t.u.transpose(),
        })
    }
}

fn jacobi_tall(a: &Matrix) -> Result<SvdResult> {
    let (m, n) = a.shape();
    // Column-major working copies.
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let max_sweeps = 100 * m.max(n).max(1);
    let mut converged = n < 2;
    let mut sweeps = 0;
    while !converged && sweeps < max_sweeps {
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 || gamma.abs() <= TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        let norms: Vec<f64> = w.iter().map(|c| dot(c, c).sqrt()).collect();
        let max = norms.iter().cloned().fold(0.0, f64::max);
        let min = norms.iter().cloned().fold(f64::INFINITY, f64::min);
        return Err(Error::NoConvergence {
            what: "jacobi svd",
            iterations: sweeps,
            rows: m,
            cols: n,
            max_abs: a.max_abs(),
            norm_ratio: if max > 0.0 { min / max } else { 0.0 },
        });
    }

    let mut order: Vec<(f64, usize)> = w.iter().enumerate().map(|(j, c)| (dot(c, c).sqrt(), j)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let sigma_max = order.first().map_or(0.0, |o| o.0);
    let cutoff = sigma_max * f64::EPSILON * m as f64;
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut singular_values = Vec::with_capacity(n);
    let mut vt = Matrix::zeros(n, n);
    for (k, &(sigma, j)) in order.iter().enumerate() {
        singular_values.push(sigma);
        for (col, val) in v[j].iter().enumerate() {
            vt[(k, col)] = *val;
        }
        if sigma > cutoff && sigma > 0.0 {
            u_cols.push(w[j].iter().map(|x| x / sigma).collect());
        } else {
            u_cols.push(Vec::new());
        }
    }
    complete_orthonormal(&mut u_cols, m);
    let u = Matrix::from_fn(m, n, |i, k| u_cols[k][i]);
    Ok(SvdResult { u, singular_values, vt })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let cp = &mut left[p];
    let cq = &mut right[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fill empty columns with unit vectors orthogonal to all others (Gram-Schmidt over
/// the canonical basis).
fn complete_orthonormal(cols: &mut [Vec<f64>], m: usize) {
    let mut basis = 0;
    for k in 0..cols.len() {
        if !cols[k].is_empty() {
            continue;
        }
        loop {
            assert!(basis < m, "cannot complete orthonormal basis");
            let mut e = vec![0.0; m];
            e[basis] = 1.0;
            basis += 1;
            for _ in 0..2 {
                for other in cols.iter().filter(|c| !c.is_empty()) {
                    let proj = dot(&e, other);
                    e.iter_mut().zip(other).for_each(|(x, o)| *x -= proj * o);
                }
            }
            let nrm = dot(&e, &e).sqrt();
            if nrm > 1e-8 {
                e.iter_mut().for_each(|x| *x /= nrm);
                cols[k] = e;
                break;
            }
        }
    }
}
