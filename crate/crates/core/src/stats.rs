//! Within/across-category similarity samples and Cohen's d.
//!
//! Cohen's d uses the n-weighted pooled standard deviation
//! `sqrt(((n1-1)s1^2 + (n2-1)s2^2) / (n1+n2-2))` with sample (n-1)
//! standard deviations. Sums use pairwise summation in index order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signatures::RoutingSignature;
use crate::similarity::{row_cosine, SimilarityMatrix};

pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let (left, right) = values.split_at(values.len() / 2);
    pairwise_sum(left) + pairwise_sum(right)
}

pub fn mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

/// Variance with `n - ddof` in the denominator.
pub fn variance(values: &[f64], ddof: usize) -> f64 {
    let m = mean(values);
    let squares: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    pairwise_sum(&squares) / (values.len() - ddof) as f64
}

pub fn sample_std(values: &[f64]) -> f64 {
    variance(values, 1).sqrt()
}

pub fn population_std(values: &[f64]) -> f64 {
    variance(values, 0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        (values.len() >= 2).then(|| Summary {
            mean: mean(values),
            std: sample_std(values),
            n: values.len(),
        })
    }
}

/// Cohen's d from group summaries (`std` is the n-1 sample std).
pub fn cohens_d_from_summary(a: Summary, b: Summary) -> Result<f64> {
    if a.n < 2 || b.n < 2 {
        return Err(Error::InsufficientData(
            "cohen's d needs at least 2 observations per group".into(),
        ));
    }
    let (n1, n2) = (a.n as f64, b.n as f64);
    let pooled = (((n1 - 1.0) * a.std * a.std + (n2 - 1.0) * b.std * b.std) / (n1 + n2 - 2.0)).sqrt();
    if pooled == 0.0 || !pooled.is_finite() {
        return Err(Error::Undefined("pooled standard deviation is zero".into()));
    }
    Ok((a.mean - b.mean) / pooled)
}

pub fn cohens_d(sample1: &[f64], sample2: &[f64]) -> Result<f64> {
    match (Summary::of(sample1), Summary::of(sample2)) {
        (Some(a), Some(b)) => cohens_d_from_summary(a, b),
        _ => Err(Error::InsufficientData(
            "cohen's d needs at least 2 observations per group".into(),
        )),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WithinAcross {
    pub within: Vec<f64>,
    pub across: Vec<f64>,
}

/// Upper-triangle entries split by whether the two prompts share a label.
pub fn split_within_across(m: &SimilarityMatrix) -> Result<WithinAcross> {
    if m.len() < 2 {
        return Err(Error::InsufficientData(
            "need at least 2 prompts to form pairs".into(),
        ));
    }
    let mut out = WithinAcross::default();
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            if m.labels[i] == m.labels[j] {
                out.within.push(m.get(i, j));
            } else {
                out.across.push(m.get(i, j));
            }
        }
    }
    Ok(out)
}

/// Layer cosines for every unordered prompt pair, computed once so that
/// effect sizes can be re-evaluated under different labelings.
#[derive(Debug, Clone)]
pub struct PairLayerCosines {
    pub num_prompts: usize,
    pub num_layers: usize,
    /// `(i, j)` with `i < j`, in row-major upper-triangle order.
    pub pairs: Vec<(usize, usize)>,
    /// Pair-major: `values[p * num_layers + l]`.
    pub values: Vec<f64>,
}

impl PairLayerCosines {
    pub fn compute(signatures: &[RoutingSignature]) -> Result<Self> {
        let n = signatures.len();
        if n < 2 {
            return Err(Error::InsufficientData(
                "need at least 2 signatures".into(),
            ));
        }
        let shape = signatures[0].rows.dim();
        if let Some(bad) = signatures.iter().find(|s| s.rows.dim() != shape) {
            return Err(Error::DimensionMismatch(format!(
                "signature `{}` has shape {:?}, expected {:?}",
                bad.prompt_id,
                bad.rows.dim(),
                shape
            )));
        }
        let layers = shape.0;
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        let values = pairs
            .par_iter()
            .flat_map_iter(|&(i, j)| {
                (0..layers).map(move |l| {
                    row_cosine(signatures[i].layer(l), signatures[j].layer(l)).unwrap_or(0.0)
                })
            })
            .collect();
        Ok(PairLayerCosines {
            num_prompts: n,
            num_layers: layers,
            pairs,
            values,
        })
    }

    /// Per-layer Cohen's d (within minus across). `None` where the layer's
    /// pooled std is zero.
    pub fn effect_sizes<L: PartialEq>(&self, labels: &[L]) -> Result<Vec<Option<f64>>> {
        if labels.len() != self.num_prompts {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} prompts",
                labels.len(),
                self.num_prompts
            )));
        }
        let same: Vec<bool> = self
            .pairs
            .iter()
            .map(|&(i, j)| labels[i] == labels[j])
            .collect();
        let within_n = same.iter().filter(|&&s| s).count();
        let across_n = same.len() - within_n;
        if within_n < 2 || across_n < 2 {
            return Err(Error::InsufficientData(format!(
                "layer effect sizes need >= 2 within and >= 2 across pairs, got {within_n} and {across_n}"
            )));
        }
        let mut within = Vec::with_capacity(within_n);
        let mut across = Vec::with_capacity(across_n);
        let mut out = Vec::with_capacity(self.num_layers);
        for layer in 0..self.num_layers {
            within.clear();
            across.clear();
            for (p, &s) in same.iter().enumerate() {
                let v = self.values[p * self.num_layers + layer];
                if s {
                    within.push(v);
                } else {
                    across.push(v);
                }
            }
            out.push(match cohens_d(&within, &across) {
                Ok(d) => Some(d),
                Err(Error::Undefined(_)) => None,
                Err(e) => return Err(e),
            });
        }
        Ok(out)
    }
}

pub fn layer_effect_sizes<L: PartialEq>(
    signatures: &[RoutingSignature],
    labels: &[L],
) -> Result<Vec<Option<f64>>> {
    PairLayerCosines::compute(signatures)?.effect_sizes(labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSizeReport {
    pub within_mean: f64,
    pub within_std: f64,
    pub within_n: usize,
    pub across_mean: f64,
    pub across_std: f64,
    pub across_n: usize,
    pub cohens_d: Option<f64>,
    pub per_layer_d: Vec<Option<f64>>,
}

impl EffectSizeReport {
    pub fn layer_csv(&self) -> String {
        let mut out = String::from("layer,d\n");
        for (layer, d) in self.per_layer_d.iter().enumerate() {
            match d {
                Some(d) => out.push_str(&format!("{layer},{d}\n")),
                None => out.push_str(&format!("{layer},NA\n")),
            }
        }
        out
    }
}

pub fn effect_size_report(
    matrix: &SimilarityMatrix,
    signatures: &[RoutingSignature],
) -> Result<EffectSizeReport> {
    let split = split_within_across(matrix)?;
    let (Some(within), Some(across)) = (Summary::of(&split.within), Summary::of(&split.across))
    else {
        return Err(Error::InsufficientData(format!(
            "need >= 2 within and >= 2 across pairs, got {} and {}",
            split.within.len(),
            split.across.len()
        )));
    };
    let cohens_d = match cohens_d_from_summary(within, across) {
        Ok(d) => Some(d),
        Err(Error::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    let labels: Vec<&str> = signatures.iter().map(|s| s.category.as_str()).collect();
    Ok(EffectSizeReport {
        within_mean: within.mean,
        within_std: within.std,
        within_n: within.n,
        across_mean: across.mean,
        across_std: across.std,
        across_n: across.n,
        cohens_d,
        per_layer_d: layer_effect_sizes(signatures, &labels)?,
    })
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn rank_correlation(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}
