//! Null models for routing similarity.
//!
//! * Permutation: expert labels are shuffled independently for every
//!   `(prompt, layer)`. Per-layer histograms keep their shape but stop lining
//!   up across prompts.
//! * Load balance: each token picks `top_k` experts uniformly without
//!   replacement, so per-layer totals are exactly `tokens * top_k`.
//!
//! Every Monte-Carlo pair draws from its own derived seed
//! (see [`crate::rng`]), making reports independent of thread scheduling.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, STREAM_LOAD_BALANCE, STREAM_PAIRS, STREAM_PERMUTE};
use crate::signatures::{signature_from_counts, CountMatrix};
use crate::similarity::signature_similarity;
use crate::stats;
use crate::trace::{ModelConfig, TokenFilter, TraceSet};

pub const MIN_PAIRS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Permutation,
    LoadBalance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub kind: BaselineKind,
    pub n_pairs: usize,
    pub mean: f64,
    pub std: f64,
    pub seed: u64,
    pub config: ModelConfig,
}

/// Relabels experts with `permutation_for(prompt_index, layer)`, which must
/// return a permutation of `0..num_experts`. Events whose indices are out of
/// range are left untouched.
pub fn permute_experts_with<F>(trace: &TraceSet, mut permutation_for: F) -> TraceSet
where
    F: FnMut(usize, usize) -> Vec<usize>,
{
    let layers = trace.config.num_layers;
    let perms: Vec<Vec<Vec<usize>>> = (0..trace.prompts.len())
        .map(|p| (0..layers).map(|l| permutation_for(p, l)).collect())
        .collect();
    let index: HashMap<&str, usize> = trace.prompt_index();
    let mut out = trace.clone();
    for event in &mut out.events {
        let Some(&p) = index.get(event.prompt_id.as_str()) else {
            continue;
        };
        let (layer, expert) = (event.layer as usize, event.expert as usize);
        if layer < layers && expert < trace.config.num_experts {
            event.expert = perms[p][layer][expert] as u32;
        }
    }
    out
}

pub fn permute_experts(trace: &TraceSet, seed: u64) -> TraceSet {
    let (layers, experts) = (trace.config.num_layers, trace.config.num_experts);
    permute_experts_with(trace, |p, l| {
        let mut rng = rng_for(seed, STREAM_PERMUTE, (p * layers + l) as u64);
        let mut perm: Vec<usize> = (0..experts).collect();
        perm.shuffle(&mut rng);
        perm
    })
}

/// Shuffles the expert axis of every layer independently.
pub fn permute_counts<R: Rng>(counts: &CountMatrix, rng: &mut R) -> CountMatrix {
    let mut out = counts.clone();
    let experts = counts.num_experts();
    let mut perm: Vec<usize> = (0..experts).collect();
    for layer in 0..counts.num_layers() {
        perm.shuffle(rng);
        for (e, &target) in perm.iter().enumerate() {
            out.counts[[layer, target]] = counts.counts[[layer, e]];
        }
    }
    out
}

fn draw_load_balanced<R: Rng>(
    config: &ModelConfig,
    tokens_per_layer: &[usize],
    rng: &mut R,
) -> CountMatrix {
    let mut m = CountMatrix::zeros(
        "load_balance",
        "load_balance",
        TokenFilter::All,
        config.num_layers,
        config.num_experts,
    );
    for (layer, &tokens) in tokens_per_layer.iter().enumerate() {
        for _ in 0..tokens {
            for e in sample(rng, config.num_experts, config.top_k) {
                m.counts[[layer, e]] += 1;
            }
        }
    }
    m
}

fn check_tokens(config: &ModelConfig, tokens_per_layer: &[usize]) -> Result<()> {
    config.check()?;
    if tokens_per_layer.len() != config.num_layers {
        return Err(Error::DimensionMismatch(format!(
            "{} token counts for {} layers",
            tokens_per_layer.len(),
            config.num_layers
        )));
    }
    Ok(())
}

pub fn loadbalance_sample(
    config: &ModelConfig,
    tokens_per_layer: &[usize],
    seed: u64,
) -> Result<CountMatrix> {
    check_tokens(config, tokens_per_layer)?;
    let mut rng = rng_for(seed, STREAM_LOAD_BALANCE, 0);
    Ok(draw_load_balanced(config, tokens_per_layer, &mut rng))
}

/// Per-layer token count that reproduces the corpus' mean per-layer
/// activation total (rounded to the nearest whole token).
pub fn empirical_tokens_per_layer(config: &ModelConfig, counts: &[CountMatrix]) -> Vec<usize> {
    if counts.is_empty() {
        return vec![0; config.num_layers];
    }
    let mut totals = vec![0u64; config.num_layers];
    for m in counts {
        for (t, r) in totals.iter_mut().zip(m.row_totals()) {
            *t += r;
        }
    }
    let denom = (counts.len() * config.top_k) as f64;
    totals
        .iter()
        .map(|&t| (t as f64 / denom).round() as usize)
        .collect()
}

pub enum BaselineSource<'a> {
    LoadBalance { tokens_per_layer: &'a [usize] },
    /// Count matrices of the observed prompts; pairs are drawn from them and
    /// each side is permuted independently.
    Permutation { counts: &'a [CountMatrix] },
}

impl BaselineSource<'_> {
    pub fn kind(&self) -> BaselineKind {
        match self {
            BaselineSource::LoadBalance { .. } => BaselineKind::LoadBalance,
            BaselineSource::Permutation { .. } => BaselineKind::Permutation,
        }
    }
}

/// Mean and sample std of the similarity over `n_pairs` null pairs.
pub fn baseline_similarity_stats(
    source: &BaselineSource<'_>,
    config: &ModelConfig,
    n_pairs: usize,
    seed: u64,
) -> Result<BaselineReport> {
    if n_pairs < MIN_PAIRS {
        return Err(Error::Config(format!(
            "baseline needs at least {MIN_PAIRS} pairs, got {n_pairs}"
        )));
    }
    match source {
        BaselineSource::LoadBalance { tokens_per_layer } => check_tokens(config, tokens_per_layer)?,
        BaselineSource::Permutation { counts } => {
            if counts.len() < 2 {
                return Err(Error::InsufficientData(
                    "permutation baseline needs at least 2 prompts".into(),
                ));
            }
            let shape = (config.num_layers, config.num_experts);
            if let Some(bad) = counts.iter().find(|c| c.counts.dim() != shape) {
                return Err(Error::DimensionMismatch(format!(
                    "counts for `{}` have shape {:?}, expected {:?}",
                    bad.prompt_id,
                    bad.counts.dim(),
                    shape
                )));
            }
        }
    }

    let sims: Vec<f64> = (0..n_pairs)
        .into_par_iter()
        .map(|pair| {
            let mut rng = rng_for(seed, STREAM_PAIRS, pair as u64);
            let (a, b) = match source {
                BaselineSource::LoadBalance { tokens_per_layer } => (
                    draw_load_balanced(config, tokens_per_layer, &mut rng),
                    draw_load_balanced(config, tokens_per_layer, &mut rng),
                ),
                BaselineSource::Permutation { counts } => {
                    let picked = sample(&mut rng, counts.len(), 2);
                    (
                        permute_counts(&counts[picked.index(0)], &mut rng),
                        permute_counts(&counts[picked.index(1)], &mut rng),
                    )
                }
            };
            signature_similarity(&signature_from_counts(&a), &signature_from_counts(&b))
                .expect("shapes checked above")
        })
        .collect();

    Ok(BaselineReport {
        kind: source.kind(),
        n_pairs,
        mean: stats::mean(&sims),
        std: stats::sample_std(&sims),
        seed,
        config: config.clone(),
    })
}
