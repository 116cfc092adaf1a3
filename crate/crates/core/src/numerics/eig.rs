//! Cyclic Jacobi eigensolver for symmetric matrices.

use super::matrix::Matrix;
use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone)]
pub struct SymEig {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the unit eigenvector for `eigenvalues[k]`.
    pub eigenvectors: Matrix,
}

pub fn sym_eig(a: &Matrix) -> Result<SymEig> {
    let n = a.rows();
    ensure!(a.cols() == n, "sym_eig needs a square matrix, got {}x{}", n, a.cols());
    if !a.is_finite() {
        return Err(Error::NonFinite("sym_eig input".into()));
    }
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in i + 1..n {
            ensure!(
                (a[(i, j)] - a[(j, i)]).abs() <= 1e-10 * scale.max(1.0),
                "sym_eig input is not symmetric at ({i},{j}): {} vs {}",
                a[(i, j)],
                a[(j, i)]
            );
        }
    }

    let mut m = a.clone();
    // Exact symmetry for the rotations.
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    let mut v = Matrix::identity(n);
    let max_sweeps = 100 * n.max(1);
    let mut sweeps = 0;
    loop {
        let off: f64 = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        let diag: f64 = (0..n).map(|i| m[(i, i)] * m[(i, i)]).sum();
        if off <= 1e-32 * diag.max(f64::MIN_POSITIVE) || off == 0.0 {
            break;
        }
        if sweeps >= max_sweeps {
            return Err(Error::NoConvergence {
                what: "jacobi eigensolver",
                iterations: sweeps,
                rows: n,
                cols: n,
                max_abs: a.max_abs(),
                norm_ratio: (off / diag.max(f64::MIN_POSITIVE)).sqrt(),
            });
        }
        sweeps += 1;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| m[(i, i)]).collect();
    let eigenvectors = Matrix::from_fn(n, n, |r, k| v[(r, order[k])]);
    Ok(SymEig {
        eigenvalues,
        eigenvectors,
    })
}

impl SymEig {
    /// `V f(Λ) V^T`.
    pub fn apply_fn(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.eigenvalues.len();
        let fl: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let v = &self.eigenvectors;
        Matrix::from_fn(n, n, |i, j| (0..n).map(|k| v[(i, k)] * fl[k] * v[(j, k)]).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(a: &Matrix, e: &SymEig) -> f64 {
        let n = a.rows();
        let mut worst: f64 = 0.0;
        for k in 0..n {
            let v = e.eigenvectors.col(k);
            for i in 0..n {
                let av: f64 = (0..n).map(|j| a[(i, j)] * v[j]).sum();
                worst = worst.max((av - e.eigenvalues[k] * v[i]).abs());
            }
        }
        worst
    }

    #[test]
    fn diagonal() {
        let a = Matrix::from_diag(&[1.0, 4.0]);
        let e = sym_eig(&a).unwrap();
        assert_eq!(e.eigenvalues, vec![4.0, 1.0]);
        assert_eq!(
            e.eigenvectors.col(0).iter().map(|x| x.abs()).collect::<Vec<_>>(),
            vec![0.0, 1.0]
        );
    }

    #[test]
    fn two_by_two_by_hand() {
        // det([[2-l,1],[1,2-l]]) = (2-l)^2 - 1 => l = 3, 1
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = sym_eig(&a).unwrap();
        assert!((e.eigenvalues[0] - 3.0).abs() < 1e-12);
        assert!((e.eigenvalues[1] - 1.0).abs() < 1e-12);
        assert!(residual(&a, &e) < 1e-8);
    }

    #[test]
    fn identity() {
        let e = sym_eig(&Matrix::identity(5)).unwrap();
        assert!(e.eigenvalues.iter().all(|&l| l == 1.0));
    }

    #[test]
    fn asymmetric_rejected() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&a), Err(Error::Contract(_))));
    }

    #[test]
    fn random_symmetric() {
        let mut rng = crate::numerics::Rng::new(9);
        let b = Matrix::from_fn(8, 8, |_, _| rng.normal());
        let a = b.gram();
        let e = sym_eig(&a).unwrap();
        assert!(residual(&a, &e) < 1e-8 * a.max_abs());
        assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        let inv_sqrt = e.apply_fn(|l| 1.0 / l.sqrt());
        let should_be_identity = inv_sqrt.matmul(&a).unwrap().matmul(&inv_sqrt).unwrap();
        assert!(should_be_identity.sub(&Matrix::identity(8)).unwrap().max_abs() < 1e-8);
    }
}
