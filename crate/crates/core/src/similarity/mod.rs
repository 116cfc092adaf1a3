//! Representation similarity: CCA and its SVD-truncated and projection-weighted
//! variants, layerwise cross-language profiles, and margin-based retrieval.

mod profile;
mod retrieval;

pub use profile::{layer_profile, parallel_examples, write_profile_csv, ProfilePoint, SimilarityMethod};
pub use retrieval::{
    cosine_matrix, margin_retrieve, write_retrieval_csv, write_scores_csv, RetrievalConfig, RetrievalResult,
};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::numerics::{dot, norm, svd, sym_eig, Matrix};

pub const DEFAULT_SVCCA_THRESHOLD: f64 = 0.99;
pub const DEFAULT_RELATIVE_RIDGE: f64 = 1e-6;

/// Diagonal loading added to each covariance before whitening.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ridge {
    Fixed(f64),
    /// `r * trace(S) / d`, computed per side.
    Relative(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative(DEFAULT_RELATIVE_RIDGE)
    }
}

impl Ridge {
    fn lambda(self, cov: &Matrix) -> f64 {
        match self {
            Ridge::Fixed(l) => l,
            Ridge::Relative(r) => r * cov.trace() / cov.rows() as f64,
        }
    }

    fn validate(self) -> Result<()> {
        let v = match self {
            Ridge::Fixed(l) | Ridge::Relative(l) => l,
        };
        ensure!(
            v.is_finite() && v >= 0.0,
            "ridge must be finite and non-negative, got {v}"
        );
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CcaResult {
    /// Descending, each in `[0, 1]`.
    pub rho: Vec<f64>,
    pub rho_cca: f64,
    pub rho_pw: f64,
    /// Projection weights against the first argument's variables.
    pub alpha: Vec<f64>,
    /// `d1 x m`; column `i` is `w_X^i`.
    pub w_x: Matrix,
    /// `d2 x m`.
    pub w_y: Matrix,
    /// Input dimensions actually correlated (after any truncation).
    pub dims: (usize, usize),
}

impl CcaResult {
    /// ρ_SVCCA is the mean coefficient of a truncated run.
    pub fn mean(&self) -> f64 {
        self.rho_cca
    }
}

fn covariance(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.cols() as f64;
    a.cross(b).scale(1.0 / (n - 1.0))
}

/// `(S + λI)^{-1/2}` with an explicit conditioning failure.
fn inv_sqrt(cov: &Matrix, ridge: Ridge, what: &'static str) -> Result<Matrix> {
    let lambda = ridge.lambda(cov);
    let mut reg = cov.clone();
    for i in 0..reg.rows() {
        reg[(i, i)] += lambda;
    }
    let eig = sym_eig(&reg)?;
    let max = eig.eigenvalues[0].max(0.0);
    let min = *eig.eigenvalues.last().expect("non-empty");
    if !(min > 1e-12 * max) || max == 0.0 {
        let scale = cov.trace() / cov.rows() as f64;
        return Err(Error::IllConditioned {
            what,
            min_eig: min,
            suggested_ridge: DEFAULT_RELATIVE_RIDGE * if scale > 0.0 { scale } else { 1.0 },
        });
    }
    Ok(eig.apply_fn(|l| 1.0 / l.sqrt()))
}

/// CCA between `x` (`d1 x n`) and `y` (`d2 x n`); columns are observations.
pub fn cca(x: &Matrix, y: &Matrix, ridge: Ridge) -> Result<CcaResult> {
    ridge.validate()?;
    let (d1, d2, n) = (x.rows(), y.rows(), x.cols());
    ensure!(
        y.cols() == n,
        "cca needs equal observation counts, got {n} and {}",
        y.cols()
    );
    ensure!(d1 > 0 && d2 > 0, "cca needs at least one variable per side");
    ensure!(n > d1.max(d2), "cca needs n > max(d1, d2), got n={n}, d1={d1}, d2={d2}");
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::NonFinite("cca input".into()));
    }
    let xc = x.center_rows();
    let yc = y.center_rows();
    let wxx = inv_sqrt(&covariance(&xc, &xc), ridge, "X covariance")?;
    let wyy = inv_sqrt(&covariance(&yc, &yc), ridge, "Y covariance")?;
    let t = wxx.matmul(&covariance(&xc, &yc))?.matmul(&wyy)?;
    let dec = svd(&t)?;
    let m = d1.min(d2);
    let rho: Vec<f64> = dec.singular_values[..m].iter().map(|r| r.clamp(0.0, 1.0)).collect();
    let w_x = wxx.matmul(&dec.u.leading_cols(m))?;
    let w_y = wyy.matmul(&dec.vt.transpose().leading_cols(m))?;

    let rho_cca = rho.iter().sum::<f64>() / m as f64;
    let mut r = CcaResult {
        rho,
        rho_cca,
        rho_pw: rho_cca,
        alpha: Vec::new(),
        w_x,
        w_y,
        dims: (d1, d2),
    };
    r.weigh(&xc)?;
    Ok(r)
}

impl CcaResult {
    /// α_i = Σ_j |<h_i, x_j>| with `h_i = X w_X^i` normalised and `x_j` the rows of `xc`.
    fn weigh(&mut self, xc: &Matrix) -> Result<()> {
        let h = self.w_x.transpose().matmul(xc)?;
        self.alpha = (0..self.rho.len())
            .map(|i| {
                let hi = h.row(i);
                let len = norm(hi);
                if len == 0.0 {
                    return 0.0;
                }
                (0..xc.rows()).map(|j| dot(hi, xc.row(j)).abs() / len).sum()
            })
            .collect();
        let total: f64 = self.alpha.iter().sum();
        let m = self.rho.len();
        if total > 0.0 {
            let v = self.alpha.iter().zip(&self.rho).map(|(a, r)| a * r).sum::<f64>() / total;
            self.rho_pw = v.clamp(self.rho[m - 1], self.rho[0]);
        }
        Ok(())
    }

    /// Express projections in the original coordinates and reweigh against the original variables.
    fn lift(mut self, bx: &Matrix, by: &Matrix, xc: &Matrix) -> Result<Self> {
        self.w_x = bx.matmul(&self.w_x)?;
        self.w_y = by.matmul(&self.w_y)?;
        self.weigh(xc)?;
        Ok(self)
    }
}

/// Centred rows projected onto their leading singular directions; also returns the `d x k` basis.
fn reduce(x: &Matrix, threshold: f64) -> Result<(Matrix, Matrix)> {
    ensure!(
        threshold > 0.0 && threshold <= 1.0,
        "variance threshold must be in (0, 1], got {threshold}"
    );
    let xc = x.center_rows();
    let dec = svd(&xc)?;
    let top = dec.singular_values[0];
    let numerical = dec
        .singular_values
        .iter()
        .filter(|&&s| s > NULL_DIRECTION * top)
        .count()
        .max(1);
    let k = dec.rank_for_energy(threshold).min(numerical);
    let basis = dec.u.leading_cols(k);
    Ok((basis.transpose().matmul(&xc)?, basis))
}

/// Directions below this fraction of the top singular value are treated as exactly null.
const NULL_DIRECTION: f64 = 1e-9;

/// Top singular directions of the centred rows covering `threshold` of the squared mass.
pub fn svd_reduce(x: &Matrix, threshold: f64) -> Result<Matrix> {
    Ok(reduce(x, threshold)?.0)
}

fn reduced_cca(x: &Matrix, y: &Matrix, threshold: f64, ridge: Ridge) -> Result<CcaResult> {
    ensure!(
        x.cols() == y.cols(),
        "observation counts differ: {} vs {}",
        x.cols(),
        y.cols()
    );
    let (xr, bx) = reduce(x, threshold)?;
    let (yr, by) = reduce(y, threshold)?;
    cca(&xr, &yr, ridge)?.lift(&bx, &by, &x.center_rows())
}

/// Projection-weighted CCA; weights come from the first argument's variables.
/// Exactly null directions (e.g. the mean direction after layer norm) are dropped first.
pub fn pwcca(x: &Matrix, y: &Matrix, ridge: Ridge) -> Result<CcaResult> {
    reduced_cca(x, y, 1.0, ridge)
}

pub fn svcca(x: &Matrix, y: &Matrix, threshold: f64, ridge: Ridge) -> Result<CcaResult> {
    reduced_cca(x, y, threshold, ridge)
}

#[cfg(test)]
mod tests;
