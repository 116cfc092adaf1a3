//! Dense linear algebra, seeded randomness and gradient verification.

mod eig;
mod gradcheck;
mod matrix;
mod rng;
mod svd;

pub use eig::{sym_eig, SymEig};
pub use gradcheck::{finite_diff_check, finite_diff_check_at, FlatParams};
pub use matrix::{dot, norm, Matrix};
pub use rng::{derive_labeled, derive_seed, label_hash, mix64, Rng};
pub use svd::{svd, SvdResult};

/// Mean and sample standard deviation (n - 1 denominator; 0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
