//! Mean layer-wise cosine similarity between routing signatures.
//!
//! `sim(A, B) = (1/L) * sum_l cos(s_A[l], s_B[l])`. A layer where either row is
//! all zero contributes 0 and is marked degenerate; it still counts towards L.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::signatures::RoutingSignature;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerCosine {
    pub value: f64,
    pub degenerate: bool,
}

/// Cosine of two non-negative rows, `None` when either is all zero.
pub fn row_cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 1.0))
}

fn check_shapes(a: &RoutingSignature, b: &RoutingSignature) -> Result<()> {
    if a.rows.dim() != b.rows.dim() {
        return Err(Error::DimensionMismatch(format!(
            "`{}` is {:?} but `{}` is {:?}",
            a.prompt_id,
            a.rows.dim(),
            b.prompt_id,
            b.rows.dim()
        )));
    }
    Ok(())
}

pub fn layer_cosine(a: &RoutingSignature, b: &RoutingSignature, layer: usize) -> Result<LayerCosine> {
    check_shapes(a, b)?;
    if layer >= a.num_layers() {
        return Err(Error::DimensionMismatch(format!(
            "layer {layer} out of range for {} layers",
            a.num_layers()
        )));
    }
    Ok(match row_cosine(a.layer(layer), b.layer(layer)) {
        Some(value) => LayerCosine {
            value,
            degenerate: false,
        },
        None => LayerCosine {
            value: 0.0,
            degenerate: true,
        },
    })
}

/// Per-layer cosines plus the number of degenerate layers.
pub fn layer_cosines(a: &RoutingSignature, b: &RoutingSignature) -> Result<(Vec<f64>, usize)> {
    check_shapes(a, b)?;
    let mut degenerate = 0;
    let values = (0..a.num_layers())
        .map(|l| {
            row_cosine(a.layer(l), b.layer(l)).unwrap_or_else(|| {
                degenerate += 1;
                0.0
            })
        })
        .collect();
    Ok((values, degenerate))
}

pub fn signature_similarity(a: &RoutingSignature, b: &RoutingSignature) -> Result<f64> {
    let (cosines, _) = layer_cosines(a, b)?;
    Ok(cosines.iter().sum::<f64>() / cosines.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub prompt_ids: Vec<String>,
    pub labels: Vec<String>,
    /// Row-major `N x N`.
    pub values: Vec<f64>,
    /// Number of unordered pairs with at least one degenerate layer.
    pub degenerate_pairs: usize,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.prompt_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompt_ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    /// Category labels in order of first appearance.
    pub fn categories(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for label in &self.labels {
            if !out.contains(label) {
                out.push(label.clone());
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("prompt_id");
        for id in &self.prompt_ids {
            out.push(',');
            out.push_str(id);
        }
        out.push('\n');
        for (i, id) in self.prompt_ids.iter().enumerate() {
            out.push_str(id);
            for j in 0..self.len() {
                let _ = write!(out, ",{}", self.get(i, j));
            }
            out.push('\n');
        }
        out
    }
}

pub fn pairwise_matrix(signatures: &[RoutingSignature]) -> Result<SimilarityMatrix> {
    let n = signatures.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "pairwise similarity needs at least 2 signatures, got {n}"
        )));
    }
    for sig in &signatures[1..] {
        check_shapes(&signatures[0], sig)?;
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i..n).map(move |j| (i, j)))
        .collect();
    let computed: Vec<(f64, usize)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (cosines, degenerate) = layer_cosines(&signatures[i], &signatures[j])
                .expect("shapes checked above");
            (cosines.iter().sum::<f64>() / cosines.len() as f64, degenerate)
        })
        .collect();

    let mut values = vec![0.0; n * n];
    let mut degenerate_pairs = 0;
    for (&(i, j), &(sim, degenerate)) in pairs.iter().zip(&computed) {
        values[i * n + j] = sim;
        values[j * n + i] = sim;
        if i != j && degenerate > 0 {
            degenerate_pairs += 1;
        }
    }
    Ok(SimilarityMatrix {
        prompt_ids: signatures.iter().map(|s| s.prompt_id.clone()).collect(),
        labels: signatures.iter().map(|s| s.category.clone()).collect(),
        values,
        degenerate_pairs,
    })
}

/// Mean similarity per category pair. Diagonal blocks exclude self-pairs and
/// are `None` for categories with fewer than two prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryMatrix {
    pub categories: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    pub pair_counts: Vec<Vec<usize>>,
}

impl CategoryMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.categories.iter().position(|c| c == a)?;
        let j = self.categories.iter().position(|c| c == b)?;
        self.values[i][j]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("category");
        for c in &self.categories {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (c, row) in self.categories.iter().zip(&self.values) {
            out.push_str(c);
            for v in row {
                match v {
                    Some(v) => {
                        let _ = write!(out, ",{v}");
                    }
                    None => out.push_str(",NA"),
                }
            }
            out.push('\n');
        }
        out
    }
}

pub fn category_block_means(m: &SimilarityMatrix) -> CategoryMatrix {
    let categories = m.categories();
    let c = categories.len();
    let class: Vec<usize> = m
        .labels
        .iter()
        .map(|l| categories.iter().position(|x| x == l).unwrap())
        .collect();
    let mut sums = vec![vec![0.0; c]; c];
    let mut counts = vec![vec![0usize; c]; c];
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            let (a, b) = (class[i].min(class[j]), class[i].max(class[j]));
            sums[a][b] += m.get(i, j);
            counts[a][b] += 1;
        }
    }
    let mut values = vec![vec![None; c]; c];
    let mut pair_counts = vec![vec![0; c]; c];
    for a in 0..c {
        for b in a..c {
            let mean = (counts[a][b] > 0).then(|| sums[a][b] / counts[a][b] as f64);
            values[a][b] = mean;
            values[b][a] = mean;
            pair_counts[a][b] = counts[a][b];
            pair_counts[b][a] = counts[a][b];
        }
    }
    CategoryMatrix {
        categories,
        values,
        pair_counts,
    }
}
