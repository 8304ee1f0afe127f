use moe_xray::projection::{pca_fit, pca_transform};
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal))
}

/// Eigenpairs of the sample covariance by dense decomposition, largest first.
fn oracle(x: &Array2<f64>) -> Vec<(f64, Vec<f64>)> {
    let (n, d) = x.dim();
    let mean = x.mean_axis(Axis(0)).unwrap();
    let c = x - &mean;
    let cov = c.t().dot(&c) / (n - 1) as f64;
    let m = DMatrix::from_fn(d, d, |i, j| cov[[i, j]]);
    let eig = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..d)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors.column(k).iter().copied().collect()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

#[test]
fn matches_dense_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for (trial, d) in [2usize, 3, 5, 8, 13, 20].into_iter().enumerate() {
        // anisotropic so the top two eigenvalues are well separated
        let scales: Vec<f64> = (0..d).map(|j| 3.0 / (1.0 + j as f64)).collect();
        let mut x = gaussian(200 + 10 * trial, d, &mut rng);
        for (j, mut col) in x.columns_mut().into_iter().enumerate() {
            col *= scales[j];
        }
        let p = pca_fit(&x, 2).unwrap();
        let expected = oracle(&x);
        let total: f64 = expected.iter().map(|e| e.0).sum();
        for (k, (value, vector)) in expected.iter().take(2).enumerate() {
            assert!((p.explained_variance[k] - value).abs() < 1e-6, "d={d} k={k}");
            assert!((p.explained_variance_ratio[k] - value / total).abs() < 1e-6);
            let dot: f64 = p.components[k].iter().zip(vector).map(|(a, b)| a * b).sum();
            assert!((dot.abs() - 1.0).abs() < 1e-6, "d={d} k={k} dot={dot}");
        }
    }
}

#[test]
fn isotropic_plane_splits_variance_evenly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, d) = (10_000, 12);
    // random orthonormal pair spanning the plane
    let mut u = Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal));
    u /= u.dot(&u).sqrt();
    let mut v = Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal));
    v = &v - &(&u * v.dot(&u));
    v /= v.dot(&v).sqrt();
    let z = gaussian(n, 2, &mut rng);
    let x = Array2::from_shape_fn((n, d), |(i, j)| z[[i, 0]] * u[j] + z[[i, 1]] * v[j]);
    let p = pca_fit(&x, 2).unwrap();
    for r in &p.explained_variance_ratio {
        assert!((r - 0.5).abs() < 0.05, "{:?}", p.explained_variance_ratio);
    }
}

fn reconstruction_error(x: &Array2<f64>, basis: &Array2<f64>) -> f64 {
    let mean = x.mean_axis(Axis(0)).unwrap();
    let c = x - &mean;
    let recon = c.dot(&basis.t()).dot(basis);
    (&c - &recon).iter().map(|v| v * v).sum()
}

#[test]
fn top_two_components_minimize_reconstruction_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let d = 7;
    let mut x = gaussian(150, d, &mut rng);
    for (j, mut col) in x.columns_mut().into_iter().enumerate() {
        col *= 1.0 + j as f64;
    }
    let p = pca_fit(&x, 2).unwrap();
    let pcs = Array2::from_shape_vec((2, d), p.components.iter().flatten().copied().collect()).unwrap();
    let best = reconstruction_error(&x, &pcs);
    for _ in 0..200 {
        let mut a = Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal));
        a /= a.dot(&a).sqrt();
        let mut b = Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal));
        b = &b - &(&a * b.dot(&a));
        b /= b.dot(&b).sqrt();
        let mut basis = Array2::zeros((2, d));
        basis.row_mut(0).assign(&a);
        basis.row_mut(1).assign(&b);
        assert!(best <= reconstruction_error(&x, &basis) + 1e-9);
    }
}

#[test]
fn wide_signature_like_data_projects_consistently() {
    // more features than rows: the Gram path, checked against the oracle
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = gaussian(12, 40, &mut rng);
    let p = pca_fit(&x, 2).unwrap();
    let expected = oracle(&x);
    for (k, (value, _)) in expected.iter().take(2).enumerate() {
        assert!((p.explained_variance[k] - value).abs() < 1e-6);
    }
    let z = pca_transform(&p, &x).unwrap();
    let var0 = z.column(0).dot(&z.column(0)) / 11.0;
    assert!((var0 - expected[0].0).abs() < 1e-6);
}
