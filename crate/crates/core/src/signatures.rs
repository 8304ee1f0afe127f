//! Activation counts and per-layer normalized routing signatures.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::trace::{TokenFilter, TraceSet};

/// `counts[[layer, expert]]` = number of tokens that activated `expert` at `layer`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    pub prompt_id: String,
    pub category: String,
    pub token_filter: TokenFilter,
    pub counts: Array2<u32>,
}

impl CountMatrix {
    pub fn zeros(
        prompt_id: impl Into<String>,
        category: impl Into<String>,
        token_filter: TokenFilter,
        num_layers: usize,
        num_experts: usize,
    ) -> Self {
        CountMatrix {
            prompt_id: prompt_id.into(),
            category: category.into(),
            token_filter,
            counts: Array2::zeros((num_layers, num_experts)),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.counts.nrows()
    }

    pub fn num_experts(&self) -> usize {
        self.counts.ncols()
    }

    pub fn row_totals(&self) -> Vec<u64> {
        self.counts
            .rows()
            .into_iter()
            .map(|row| row.iter().map(|&c| c as u64).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingSignature {
    pub prompt_id: String,
    pub category: String,
    /// Row `l` is the distribution over experts at layer `l`.
    pub rows: Array2<f64>,
    /// Layers with no activations; their rows are all zero.
    pub empty_layers: Vec<usize>,
}

impl RoutingSignature {
    pub fn num_layers(&self) -> usize {
        self.rows.nrows()
    }

    pub fn num_experts(&self) -> usize {
        self.rows.ncols()
    }

    pub fn layer(&self, layer: usize) -> &[f64] {
        let experts = self.num_experts();
        let flat = self
            .rows
            .as_slice()
            .expect("signature rows are stored contiguously");
        &flat[layer * experts..(layer + 1) * experts]
    }
}

/// Counts for one prompt. Duplicate `(token, layer, expert)` events count once
/// and out-of-range indices are skipped.
pub fn activation_counts(
    trace: &TraceSet,
    prompt_id: &str,
    token_filter: TokenFilter,
) -> Result<CountMatrix> {
    let prompt = trace
        .prompt(prompt_id)
        .ok_or_else(|| Error::UnknownPrompt(prompt_id.to_string()))?;
    let config = &trace.config;
    let mut matrix = CountMatrix::zeros(
        prompt_id,
        &prompt.category,
        token_filter,
        config.num_layers,
        config.num_experts,
    );
    let mut seen = HashSet::new();
    for event in trace.events.iter().filter(|e| e.prompt_id == prompt_id) {
        let (layer, expert) = (event.layer as usize, event.expert as usize);
        if layer >= config.num_layers
            || expert >= config.num_experts
            || !token_filter.accepts(event.token_type)
        {
            continue;
        }
        if seen.insert((event.token_pos, event.layer, event.expert)) {
            matrix.counts[[layer, expert]] += 1;
        }
    }
    Ok(matrix)
}

/// Counts for every prompt in manifest order, in a single pass over the events.
pub fn all_activation_counts(trace: &TraceSet, token_filter: TokenFilter) -> Vec<CountMatrix> {
    let config = &trace.config;
    let index: HashMap<&str, usize> = trace.prompt_index();
    let mut matrices: Vec<CountMatrix> = trace
        .prompts
        .iter()
        .map(|p| {
            CountMatrix::zeros(
                &p.prompt_id,
                &p.category,
                token_filter,
                config.num_layers,
                config.num_experts,
            )
        })
        .collect();
    let mut seen = HashSet::with_capacity(trace.events.len());
    for event in &trace.events {
        let Some(&p) = index.get(event.prompt_id.as_str()) else {
            continue;
        };
        let (layer, expert) = (event.layer as usize, event.expert as usize);
        if layer >= config.num_layers
            || expert >= config.num_experts
            || !token_filter.accepts(event.token_type)
        {
            continue;
        }
        if seen.insert((p, event.token_pos, event.layer, event.expert)) {
            matrices[p].counts[[layer, expert]] += 1;
        }
    }
    matrices
}

pub fn signature_from_counts(counts: &CountMatrix) -> RoutingSignature {
    let mut rows = counts.counts.mapv(f64::from);
    let mut empty_layers = Vec::new();
    for (layer, mut row) in rows.rows_mut().into_iter().enumerate() {
        let total: f64 = row.sum();
        if total == 0.0 {
            empty_layers.push(layer);
        } else {
            row.mapv_inplace(|c| c / total);
        }
    }
    RoutingSignature {
        prompt_id: counts.prompt_id.clone(),
        category: counts.category.clone(),
        rows,
        empty_layers,
    }
}

/// Layer-major concatenation of the signature rows.
pub fn flatten(sig: &RoutingSignature) -> Vec<f64> {
    sig.rows.iter().copied().collect()
}

/// Stacks flattened signatures into an `N x (L*E)` feature matrix.
pub fn feature_matrix(signatures: &[RoutingSignature]) -> Result<Array2<f64>> {
    let Some(first) = signatures.first() else {
        return Ok(Array2::zeros((0, 0)));
    };
    let dim = first.rows.len();
    let mut features = Array2::zeros((signatures.len(), dim));
    for (i, sig) in signatures.iter().enumerate() {
        if sig.rows.dim() != first.rows.dim() {
            return Err(Error::DimensionMismatch(format!(
                "signature `{}` has shape {:?}, expected {:?}",
                sig.prompt_id,
                sig.rows.dim(),
                first.rows.dim()
            )));
        }
        for (j, &v) in sig.rows.iter().enumerate() {
            features[[i, j]] = v;
        }
    }
    Ok(features)
}

/// CSV with one row per prompt: `prompt_id,category,l0_e0,l0_e1,...`.
pub fn signatures_csv(signatures: &[RoutingSignature]) -> String {
    let mut out = String::from("prompt_id,category");
    if let Some(first) = signatures.first() {
        for layer in 0..first.num_layers() {
            for expert in 0..first.num_experts() {
                let _ = write!(out, ",l{layer}_e{expert}");
            }
        }
    }
    out.push('\n');
    for sig in signatures {
        out.push_str(&sig.prompt_id);
        out.push(',');
        out.push_str(&sig.category);
        for v in sig.rows.iter() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}
