//! Principal component analysis by power iteration with deflation.
//!
//! The eigenproblem is solved on whichever is smaller: the `D x D` covariance
//! or the `N x N` Gram matrix of the centered data (same non-zero spectrum,
//! eigenvectors mapped back through `X^T u`). Components are signed so that
//! their largest-magnitude coordinate is positive.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, STREAM_PCA_START};

const MAX_ITERS: usize = 100_000;
const RESIDUAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub mean: Vec<f64>,
    /// One orthonormal row per component.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

/// Top `n` eigenpairs of a symmetric positive semi-definite matrix, largest
/// first. Eigenvalues that vanish come back as 0 with an arbitrary unit vector
/// orthogonal to the earlier ones.
pub fn symmetric_top_eigenpairs(matrix: &Array2<f64>, n: usize) -> Vec<(f64, Array1<f64>)> {
    let dim = matrix.nrows();
    let scale = matrix.diag().iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let mut rng = rng_for(0, STREAM_PCA_START, dim as u64);
    let mut deflated = matrix.clone();
    let mut found: Vec<(f64, Array1<f64>)> = Vec::with_capacity(n);

    for _ in 0..n.min(dim) {
        let mut v: Array1<f64> = Array1::from_shape_fn(dim, |_| rng.random::<f64>() - 0.5);
        orthogonalize(&mut v, &found);
        let mut lambda = 0.0;
        let mut ok = normalize(&mut v);
        for _ in 0..MAX_ITERS {
            if !ok {
                break;
            }
            let mut w = deflated.dot(&v);
            orthogonalize(&mut w, &found);
            lambda = v.dot(&w);
            let residual = (&w - &(&v * lambda)).dot(&(&w - &(&v * lambda))).sqrt();
            if !normalize(&mut w) {
                ok = false;
                break;
            }
            v = w;
            if residual <= RESIDUAL_TOL * scale {
                break;
            }
        }
        if !ok || lambda <= RESIDUAL_TOL * scale {
            lambda = 0.0;
            v = fallback_direction(dim, &found);
        } else {
            lambda = v.dot(&matrix.dot(&v));
        }
        for i in 0..dim {
            for j in 0..dim {
                deflated[[i, j]] -= lambda * v[i] * v[j];
            }
        }
        found.push((lambda, v));
    }
    found
}

fn normalize(v: &mut Array1<f64>) -> bool {
    let norm = v.dot(v).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    *v /= norm;
    true
}

fn orthogonalize(v: &mut Array1<f64>, basis: &[(f64, Array1<f64>)]) {
    for (_, b) in basis {
        let proj = v.dot(b);
        v.scaled_add(-proj, b);
    }
}

fn fallback_direction(dim: usize, basis: &[(f64, Array1<f64>)]) -> Array1<f64> {
    for i in 0..dim {
        let mut e = Array1::zeros(dim);
        e[i] = 1.0;
        orthogonalize(&mut e, basis);
        orthogonalize(&mut e, basis);
        if e.dot(&e) > 1e-6 && normalize(&mut e) {
            return e;
        }
    }
    Array1::zeros(dim)
}

fn fix_sign(v: &mut Array1<f64>) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.mapv_inplace(|x| -x);
    }
}

pub fn pca_fit(features: &Array2<f64>, n_components: usize) -> Result<Projection> {
    let (n, d) = features.dim();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "PCA needs at least 2 rows, got {n}"
        )));
    }
    if n_components == 0 || n_components > d {
        return Err(Error::Config(format!(
            "cannot extract {n_components} components from {d} features"
        )));
    }
    let mean = features.mean_axis(Axis(0)).expect("n >= 2");
    let centered = features - &mean;
    let denom = (n - 1) as f64;
    let total_variance = centered.iter().map(|x| x * x).sum::<f64>() / denom;
    if total_variance == 0.0 {
        return Err(Error::Undefined(
            "all rows are identical; principal components are undefined".into(),
        ));
    }

    let mut pairs: Vec<(f64, Array1<f64>)> = if d <= n {
        let cov = centered.t().dot(&centered) / denom;
        symmetric_top_eigenpairs(&cov, n_components)
    } else {
        let gram = centered.dot(&centered.t()) / denom;
        let mut found: Vec<(f64, Array1<f64>)> = Vec::new();
        for (lambda, u) in symmetric_top_eigenpairs(&gram, n_components.min(n)) {
            let mut v = centered.t().dot(&u);
            let ok = lambda > 0.0 && normalize(&mut v);
            if ok {
                found.push((lambda, v));
            } else {
                found.push((0.0, fallback_direction(d, &found)));
            }
        }
        while found.len() < n_components {
            let v = fallback_direction(d, &found);
            found.push((0.0, v));
        }
        found
    };

    for (_, v) in &mut pairs {
        fix_sign(v);
    }
    Ok(Projection {
        mean: mean.to_vec(),
        explained_variance: pairs.iter().map(|(l, _)| *l).collect(),
        explained_variance_ratio: pairs
            .iter()
            .map(|(l, _)| (l / total_variance).clamp(0.0, 1.0))
            .collect(),
        components: pairs.into_iter().map(|(_, v)| v.to_vec()).collect(),
    })
}

pub fn pca_transform(p: &Projection, features: &Array2<f64>) -> Result<Array2<f64>> {
    let d = p.mean.len();
    if features.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "projection fitted on {d} features, got {}",
            features.ncols()
        )));
    }
    let mean = Array1::from(p.mean.clone());
    let components = Array2::from_shape_vec(
        (p.components.len(), d),
        p.components.iter().flatten().copied().collect(),
    )
    .expect("components are D wide");
    Ok((features - &mean).dot(&components.t()))
}

/// `prompt_id,category,pc1,pc2,...`
pub fn coords_csv(prompt_ids: &[String], categories: &[String], coords: &Array2<f64>) -> String {
    let mut out = String::from("prompt_id,category");
    for c in 0..coords.ncols() {
        let _ = write!(out, ",pc{}", c + 1);
    }
    out.push('\n');
    for ((id, cat), row) in prompt_ids.iter().zip(categories).zip(coords.rows()) {
        out.push_str(id);
        out.push(',');
        out.push_str(cat);
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn line_has_single_component() {
        let dir = array![1.0, 2.0, -2.0] / 3.0;
        let x = Array2::from_shape_fn((10, 3), |(i, j)| 5.0 + i as f64 * dir[j]);
        let p = pca_fit(&x, 2).unwrap();
        assert!((p.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        assert!(p.explained_variance_ratio[1].abs() < 1e-12);
        let c0 = Array1::from(p.components[0].clone());
        assert!((c0.dot(&dir).abs() - 1.0).abs() < 1e-10);
        // largest coordinate is +2/3 or -2/3; the tie goes to index 1
        assert!(c0[1] > 0.0);
        let c1 = Array1::from(p.components[1].clone());
        assert!(c0.dot(&c1).abs() < 1e-8);
        assert!((c1.dot(&c1) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn identical_rows_undefined() {
        let x = Array2::from_elem((4, 3), 2.5);
        assert!(matches!(pca_fit(&x, 2), Err(Error::Undefined(_))));
    }

    #[test]
    fn mean_maps_to_origin() {
        let x = random_matrix(15, 6, 9);
        let p = pca_fit(&x, 2).unwrap();
        let mean = Array2::from_shape_vec((1, 6), p.mean.clone()).unwrap();
        let z = pca_transform(&p, &mean).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn wide_and_tall_paths_agree() {
        // same data through the Gram path (D > N) and the covariance path
        let x = random_matrix(6, 9, 4);
        let wide = pca_fit(&x, 2).unwrap();
        let cov = {
            let mean = x.mean_axis(Axis(0)).unwrap();
            let c = &x - &mean;
            c.t().dot(&c) / 5.0
        };
        let direct = symmetric_top_eigenpairs(&cov, 2);
        for (k, (value, vector)) in direct.iter().enumerate() {
            assert!((wide.explained_variance[k] - value).abs() < 1e-8);
            let a = Array1::from(wide.components[k].clone());
            assert!((a.dot(vector).abs() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn transformed_training_data_is_centered_and_decorrelated() {
        let x = random_matrix(40, 7, 12);
        let p = pca_fit(&x, 2).unwrap();
        let z = pca_transform(&p, &x).unwrap();
        for col in z.columns() {
            assert!(col.mean().unwrap().abs() < 1e-8);
        }
        let cov01: f64 = z.column(0).dot(&z.column(1)) / 39.0;
        assert!(cov01.abs() < 1e-8);
        let v0 = z.column(0).dot(&z.column(0)) / 39.0;
        let v1 = z.column(1).dot(&z.column(1)) / 39.0;
        assert!(v0 >= v1);
        assert!((v0 - p.explained_variance[0]).abs() < 1e-8);
    }

    #[test]
    fn ratios_ordered_and_bounded() {
        let p = pca_fit(&random_matrix(25, 5, 2), 2).unwrap();
        let r = &p.explained_variance_ratio;
        assert!(r[0] >= r[1]);
        assert!(r.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(r.iter().sum::<f64>() <= 1.0 + 1e-12);
    }

    #[test]
    fn coords_csv_layout() {
        let coords = array![[1.0, -0.5]];
        let csv = coords_csv(&["p".into()], &["c".into()], &coords);
        assert_eq!(csv, "prompt_id,category,pc1,pc2\np,c,1,-0.5\n");
    }
}
