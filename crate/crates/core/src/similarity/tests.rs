use nalgebra::{DMatrix, SymmetricEigen};

use super::*;
use crate::corpus::{generate_language, AbstractGrammar, GrammarConfig, VocabLayout};
use crate::model::{init_params, ModelConfig};
use crate::numerics::Rng;

fn gaussian(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

fn orthogonal(d: usize, rng: &mut Rng) -> Matrix {
    let a = DMatrix::from_fn(d, d, |_, _| rng.normal());
    let q = a.qr().q();
    Matrix::from_fn(d, d, |i, j| q[(i, j)])
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

/// Generalized eigenproblem on the joint covariance, solved independently.
fn oracle_rho(x: &Matrix, y: &Matrix) -> Vec<f64> {
    let (d1, d2) = (x.rows(), y.rows());
    let joint = to_na(x).insert_rows(d1, d2, 0.0);
    let mut joint = joint;
    joint.view_mut((d1, 0), (d2, x.cols())).copy_from(&to_na(y));
    let n = joint.ncols() as f64;
    let mean = joint.column_mean();
    let c = DMatrix::from_fn(d1 + d2, joint.ncols(), |i, j| joint[(i, j)] - mean[i]);
    let s = &c * c.transpose() / (n - 1.0);
    let mut a = s.clone();
    let mut b = s;
    a.view_mut((0, 0), (d1, d1)).fill(0.0);
    a.view_mut((d1, d1), (d2, d2)).fill(0.0);
    b.view_mut((0, d1), (d1, d2)).fill(0.0);
    b.view_mut((d1, 0), (d2, d1)).fill(0.0);
    let l = b.cholesky().expect("positive definite").l();
    let li = l.clone().try_inverse().unwrap();
    let m = &li * a * li.transpose();
    let m = (&m + m.transpose()) / 2.0;
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(|p, q| q.total_cmp(p));
    ev.truncate(d1.min(d2));
    ev
}

fn correlated(d1: usize, d2: usize, n: usize, rng: &mut Rng) -> (Matrix, Matrix) {
    let x = gaussian(d1, n, rng);
    let a = gaussian(d2, d1, rng);
    let noise = gaussian(d2, n, rng).scale(rng.uniform_range(0.1, 3.0));
    let y = Matrix::from_vec(
        d2,
        n,
        a.matmul(&x)
            .unwrap()
            .as_slice()
            .iter()
            .zip(noise.as_slice())
            .map(|(p, q)| p + q)
            .collect(),
    )
    .unwrap();
    (x, y)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

const EXACT: Ridge = Ridge::Fixed(0.0);

#[test]
fn identical_inputs_are_fully_correlated() {
    let mut rng = Rng::new(1);
    let x = gaussian(3, 200, &mut rng);
    let r = cca(&x, &x, EXACT).unwrap();
    assert!(r.rho.iter().all(|p| (p - 1.0).abs() < 1e-8), "{:?}", r.rho);
    let q = orthogonal(3, &mut rng);
    let rq = cca(&x, &q.matmul(&x).unwrap(), EXACT).unwrap();
    assert!(max_diff(&r.rho, &rq.rho) < 1e-8);
}

#[test]
fn matches_generalized_eigen_oracle() {
    let mut rng = Rng::new(7);
    let x = gaussian(3, 200, &mut rng);
    let y = gaussian(3, 200, &mut rng);
    assert!(max_diff(&cca(&x, &y, EXACT).unwrap().rho, &oracle_rho(&x, &y)) < 1e-8);
    for _ in 0..50 {
        let d1 = 1 + rng.below(8);
        let d2 = 1 + rng.below(8);
        let n = 16 + rng.below(497);
        let (x, y) = correlated(d1, d2, n, &mut rng);
        let r = cca(&x, &y, EXACT).unwrap();
        assert_eq!(r.rho.len(), d1.min(d2));
        assert!(max_diff(&r.rho, &oracle_rho(&x, &y)) < 1e-8, "d1={d1} d2={d2} n={n}");
    }
}

#[test]
fn projections_satisfy_constraints() {
    let mut rng = Rng::new(3);
    let (x, y) = correlated(5, 4, 300, &mut rng);
    let r = cca(&x, &y, EXACT).unwrap();
    let (xc, yc) = (x.center_rows(), y.center_rows());
    let cov = |a: &Matrix, b: &Matrix| a.cross(b).scale(1.0 / 299.0);
    let wx = r
        .w_x
        .transpose()
        .matmul(&cov(&xc, &xc))
        .unwrap()
        .matmul(&r.w_x)
        .unwrap();
    let wy = r
        .w_y
        .transpose()
        .matmul(&cov(&yc, &yc))
        .unwrap()
        .matmul(&r.w_y)
        .unwrap();
    let wxy = r
        .w_x
        .transpose()
        .matmul(&cov(&xc, &yc))
        .unwrap()
        .matmul(&r.w_y)
        .unwrap();
    let eye = Matrix::identity(4);
    assert!(wx.sub(&eye).unwrap().max_abs() < 1e-6);
    assert!(wy.sub(&eye).unwrap().max_abs() < 1e-6);
    assert!(wxy.sub(&Matrix::from_diag(&r.rho)).unwrap().max_abs() < 1e-6);
}

#[test]
fn coefficients_and_aggregates_in_range() {
    let mut rng = Rng::new(11);
    for _ in 0..30 {
        let (x, y) = correlated(1 + rng.below(6), 1 + rng.below(6), 40 + rng.below(100), &mut rng);
        let r = cca(&x, &y, Ridge::default()).unwrap();
        assert!(r.rho.windows(2).all(|w| w[0] >= w[1]));
        assert!(r.rho.iter().all(|p| (0.0..=1.0).contains(p)));
        let (lo, hi) = (*r.rho.last().unwrap(), r.rho[0]);
        assert!(r.rho_cca >= lo && r.rho_cca <= hi);
        assert!(r.rho_pw >= lo && r.rho_pw <= hi);
        assert!((r.rho_cca - r.rho.iter().sum::<f64>() / r.rho.len() as f64).abs() < 1e-15);
    }
}

#[test]
fn rank_deficiency_needs_ridge() {
    let mut rng = Rng::new(5);
    let base = gaussian(2, 100, &mut rng);
    let x = Matrix::from_fn(3, 100, |i, j| {
        if i < 2 {
            base[(i, j)]
        } else {
            base[(0, j)] + base[(1, j)]
        }
    });
    let err = cca(&x, &base, EXACT).unwrap_err();
    match err {
        Error::IllConditioned { suggested_ridge, .. } => assert!(suggested_ridge > 0.0),
        other => panic!("unexpected {other}"),
    }
    assert!(cca(&x, &base, Ridge::default()).is_ok());
    assert!(matches!(
        cca(&gaussian(4, 4, &mut rng), &gaussian(2, 4, &mut rng), EXACT),
        Err(Error::Contract(_))
    ));
    assert!(cca(&x, &base, Ridge::Fixed(-1.0)).is_err());
}

#[test]
fn svcca_truncation_and_invariance() {
    let mut rng = Rng::new(9);
    let (x, y) = correlated(4, 5, 250, &mut rng);
    let full = svcca(&x, &y, 1.0, EXACT).unwrap();
    assert!(max_diff(&full.rho, &cca(&x, &y, EXACT).unwrap().rho) < 1e-8);

    // Singular values (10, 1e-6): one direction carries everything.
    let u = gaussian(1, 250, &mut rng);
    let v = gaussian(1, 250, &mut rng);
    let (un, vn) = (norm(u.row(0)), norm(v.row(0)));
    let q = orthogonal(2, &mut rng);
    let flat = Matrix::from_fn(2, 250, |i, j| {
        q[(i, 0)] * 10.0 * u[(0, j)] / un + q[(i, 1)] * 1e-6 * v[(0, j)] / vn
    });
    assert_eq!(svd_reduce(&flat, 0.99).unwrap().rows(), 1);
    assert_eq!(svcca(&flat, &y, 0.99, EXACT).unwrap().dims.0, 1);

    for ridge in [EXACT, Ridge::default()] {
        let a = svcca(&x, &y, 0.99, ridge).unwrap();
        let qy = orthogonal(5, &mut rng).matmul(&y).unwrap();
        let b = svcca(&x, &qy, 0.99, ridge).unwrap();
        assert!((a.rho_cca - b.rho_cca).abs() < 1e-6);
    }
    assert!(svcca(&x, &y, 0.0, EXACT).is_err());
}

#[test]
fn pwcca_reductions() {
    let mut rng = Rng::new(13);
    let x = gaussian(4, 300, &mut rng);
    assert!((pwcca(&x, &x, EXACT).unwrap().rho_pw - 1.0).abs() < 1e-8);

    // Isotropic x with axis-aligned canonical pairs: every α_i is the same.
    let d = 3;
    let n = 200;
    let raw = DMatrix::from_fn(n, 2 * d, |_, _| rng.normal());
    let centred = DMatrix::from_fn(n, 2 * d, |i, j| raw[(i, j)] - raw.column(j).mean());
    let e = centred.qr().q();
    let s = ((n - 1) as f64).sqrt();
    let rho = [0.9, 0.5, 0.2];
    let iso = Matrix::from_fn(d, n, |i, j| e[(j, i)] * s);
    let y = Matrix::from_fn(d, n, |i, j| {
        (rho[i] * e[(j, i)] + (1.0 - rho[i] * rho[i]).sqrt() * e[(j, d + i)]) * s
    });
    let r = pwcca(&iso, &y, EXACT).unwrap();
    assert!(max_diff(&r.rho, &rho) < 1e-8);
    assert!(max_diff(&r.alpha, &[r.alpha[0]; 3]) < 1e-8 * r.alpha[0]);
    assert!((r.rho_pw - r.rho_cca).abs() < 1e-8);

    let (a, b) = correlated(3, 5, 300, &mut rng);
    let forward = pwcca(&a, &b, EXACT).unwrap();
    let backward = pwcca(&b, &a, EXACT).unwrap();
    assert!(max_diff(&forward.rho, &backward.rho) < 1e-8);
    assert!((forward.rho_pw - backward.rho_pw).abs() > 1e-6);
}

fn cosine_top1(src: &Matrix, tgt: &Matrix) -> Vec<usize> {
    let cos = cosine_matrix(src, tgt).unwrap();
    (0..cos.rows())
        .map(|i| {
            (0..cos.cols())
                .max_by(|&a, &b| cos[(i, a)].total_cmp(&cos[(i, b)]).then(b.cmp(&a)))
                .unwrap()
        })
        .collect()
}

fn margin_top1(scores: &Matrix) -> Vec<usize> {
    (0..scores.rows())
        .map(|i| {
            (0..scores.cols())
                .max_by(|&a, &b| scores[(i, a)].total_cmp(&scores[(i, b)]).then(b.cmp(&a)))
                .unwrap()
        })
        .collect()
}

#[test]
fn mutual_nearest_scores_one() {
    let src = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let tgt = Matrix::from_rows(&[vec![0.8, 0.3], vec![-0.1, 0.9]]).unwrap();
    let r = margin_retrieve(&src, &tgt, &RetrievalConfig { k: 1, layer: 0 }).unwrap();
    assert_eq!(r.scores[(0, 0)], 1.0);
    assert_eq!(r.scores[(1, 1)], 1.0);
    assert_eq!(r.top1, 1.0);
}

#[test]
fn copy_and_rotation_retrieval() {
    let mut rng = Rng::new(21);
    let src = gaussian(200, 16, &mut rng);
    for k in [1, 4, 10] {
        let r = margin_retrieve(&src, &src, &RetrievalConfig { k, layer: 0 }).unwrap();
        assert_eq!(r.top1, 1.0);
    }
    // Givens rotation of 0.3 rad in the first coordinate plane.
    let (c, s) = (0.3f64.cos(), 0.3f64.sin());
    let mut q = Matrix::identity(16);
    q[(0, 0)] = c;
    q[(0, 1)] = -s;
    q[(1, 0)] = s;
    q[(1, 1)] = c;
    let rotated = src.matmul(&q).unwrap();
    let noisy = Matrix::from_fn(200, 16, |i, j| rotated[(i, j)] + 0.01 * rng.normal());
    let r = margin_retrieve(&src, &noisy, &RetrievalConfig::default()).unwrap();
    assert!(r.top1 >= 0.95, "top1 {}", r.top1);
    assert_eq!(margin_top1(&r.scores), cosine_top1(&src, &noisy));
    assert!(r.top5 >= r.top1);
}

#[test]
fn uniform_neighbourhoods_reduce_to_cosine() {
    let n = 24;
    let angle = |i: usize, shift: f64| 2.0 * std::f64::consts::PI * i as f64 / n as f64 + shift;
    // Points on a raised circle: every cosine row and column is a cyclic shift.
    let point = |i: usize, shift: f64, j: usize| match j {
        0 => angle(i, shift).cos(),
        1 => angle(i, shift).sin(),
        _ => 1.0,
    };
    let src = Matrix::from_fn(n, 3, |i, j| point(i, 0.0, j));
    let tgt = Matrix::from_fn(n, 3, |i, j| point(i, 0.05, j));
    let r = margin_retrieve(&src, &tgt, &RetrievalConfig { k: n, layer: 0 }).unwrap();
    let cos = cosine_matrix(&src, &tgt).unwrap();
    for i in 0..n {
        let order = |m: &Matrix| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| m[(i, b)].total_cmp(&m[(i, a)]).then(a.cmp(&b)));
            idx
        };
        assert_eq!(order(&r.scores), order(&cos));
    }
    assert_eq!(margin_top1(&r.scores), cosine_top1(&src, &tgt));
}

#[test]
fn retrieval_errors() {
    let good = Matrix::identity(3);
    let mut bad = Matrix::identity(3);
    bad[(1, 1)] = 0.0;
    assert!(matches!(
        margin_retrieve(&good, &bad, &RetrievalConfig::default().with_k(1)),
        Err(Error::DegenerateRepresentation { side: "target", row: 1 })
    ));
    assert!(margin_retrieve(&good, &good, &RetrievalConfig::default().with_k(4)).is_err());
    assert!(margin_retrieve(&good, &good, &RetrievalConfig::default().with_k(0)).is_err());
}

#[test]
fn csv_exports() {
    let mut out = Vec::new();
    write_retrieval_csv(&[("L0-L1".into(), 4, 0.5, 1.0)], &mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "pair,k,top1,top5\nL0-L1,4,0.5,1\n");
    let mut out = Vec::new();
    let p = ProfilePoint {
        layer: 2,
        method: "svcca".into(),
        value: 0.25,
    };
    write_profile_csv(&[("L0-L1".into(), p)], &mut out).unwrap();
    assert_eq!(
        String::from_utf8(out).unwrap(),
        "pair,layer,method,value\nL0-L1,2,svcca,0.25\n"
    );
}

#[test]
fn same_language_profile_is_flat_one() {
    let grammar = AbstractGrammar::new(&GrammarConfig::default()).unwrap();
    let langs: Vec<_> = (0..2)
        .map(|i| generate_language(&grammar, i, 0.0, 3).unwrap())
        .collect();
    let sets = parallel_examples(&grammar, &[&langs[0], &langs[1]], 60, 8, 4).unwrap();
    assert_eq!(sets[0].len(), 60);
    for (a, b) in sets[0].iter().zip(&sets[1]) {
        assert_eq!(a.abstract_source_id, b.abstract_source_id);
        assert_eq!(a.tokens.len(), b.tokens.len());
    }
    let cfg = ModelConfig {
        vocab_size: VocabLayout::new(grammar.symbol_count, 0.0, 2).size(),
        embed_dim: 8,
        ffn_dim: 12,
        layers: 2,
        ..ModelConfig::default()
    };
    let params = init_params(&cfg, 1).unwrap();
    for method in [SimilarityMethod::Svcca { threshold: 0.99 }, SimilarityMethod::Pwcca] {
        let same = layer_profile(&cfg, &params, None, &sets[0], &sets[0], method, Ridge::default()).unwrap();
        assert_eq!(same.len(), 3);
        assert!(same.iter().all(|p| (p.value - 1.0).abs() < 1e-4), "{same:?}");
        let cross = layer_profile(&cfg, &params, None, &sets[0], &sets[1], method, Ridge::default()).unwrap();
        assert!(cross.iter().all(|p| p.value < 0.99 && p.value >= 0.0), "{cross:?}");
    }
}
