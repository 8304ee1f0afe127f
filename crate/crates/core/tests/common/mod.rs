#![allow(dead_code)]

use moe_xray::pipeline::{class_labels, compute_signatures};
use moe_xray::synthgen::{generate_corpus, make_generator_spec, DepthShape, GeneratorSpec};
use moe_xray::{ModelConfig, RoutingSignature, TokenFilter, TraceSet};

pub fn default_corpus() -> TraceSet {
    generate_corpus(&GeneratorSpec::default_shape(moe_xray::synthgen::DEFAULT_SEED), 20).unwrap()
}

pub fn corpus(concentration: f64, shape: DepthShape, seed: u64) -> TraceSet {
    let categories: Vec<String> = moe_xray::synthgen::DEFAULT_CATEGORIES
        .iter()
        .map(|s| s.to_string())
        .collect();
    let spec = make_generator_spec(&ModelConfig::olmoe(), &categories, concentration, shape, seed).unwrap();
    generate_corpus(&spec, 20).unwrap()
}

pub fn signatures(trace: &TraceSet) -> Vec<RoutingSignature> {
    compute_signatures(trace, TokenFilter::All).1
}

pub fn labels(trace: &TraceSet, sigs: &[RoutingSignature]) -> Vec<usize> {
    class_labels(trace, sigs).unwrap()
}
