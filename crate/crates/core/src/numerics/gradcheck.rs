//! Central-difference verification of analytic gradients.

use super::rng::Rng;
use crate::error::{ensure, Error, Result};

/// Parameters addressable as one flat coordinate vector.
pub trait FlatParams: Clone {
    fn num_coords(&self) -> usize;
    fn coord(&self, index: usize) -> f64;
    fn set_coord(&mut self, index: usize, value: f64);
}

impl FlatParams for Vec<f64> {
    fn num_coords(&self) -> usize {
        self.len()
    }
    fn coord(&self, index: usize) -> f64 {
        self[index]
    }
    fn set_coord(&mut self, index: usize, value: f64) {
        self[index] = value;
    }
}

/// Worst relative error over `probe_count` uniformly drawn coordinates.
///
/// `loss_fn` returns the loss and its flat analytic gradient.
pub fn finite_diff_check<P, F>(loss_fn: F, params: &P, probe_count: usize, step: f64, seed: u64) -> Result<f64>
where
    P: FlatParams,
    F: Fn(&P) -> Result<(f64, Vec<f64>)>,
{
    ensure!(probe_count >= 1, "probe_count must be >= 1");
    let n = params.num_coords();
    ensure!(n > 0, "no coordinates to probe");
    let mut rng = Rng::new(seed);
    let coords: Vec<usize> = (0..probe_count).map(|_| rng.below(n)).collect();
    finite_diff_check_at(loss_fn, params, &coords, step)
}

/// As [`finite_diff_check`] over an explicit coordinate list.
pub fn finite_diff_check_at<P, F>(loss_fn: F, params: &P, coords: &[usize], step: f64) -> Result<f64>
where
    P: FlatParams,
    F: Fn(&P) -> Result<(f64, Vec<f64>)>,
{
    ensure!(
        step > 1e-8 && step < 1e-2,
        "finite-difference step {step} outside (1e-8, 1e-2)"
    );
    ensure!(!coords.is_empty(), "probe_count must be >= 1");
    let (loss, grad) = loss_fn(params)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss at base point".into()));
    }
    ensure!(grad.len() == params.num_coords(), "gradient length mismatch");

    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for &i in coords {
        let orig = params.coord(i);
        probe.set_coord(i, orig + step);
        let (plus, _) = loss_fn(&probe)?;
        probe.set_coord(i, orig - step);
        let (minus, _) = loss_fn(&probe)?;
        probe.set_coord(i, orig);
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss while probing coordinate {i}")));
        }
        let central = (plus - minus) / (2.0 * step);
        let analytic = grad[i];
        let err = (analytic - central).abs() / analytic.abs().max(central.abs()).max(1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}
