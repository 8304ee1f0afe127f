//! Grid search over generator concentration for the default corpus shape.
//!
//! ```text
//! cargo run --release --example calibrate [seed]
//! ```
//!
//! Prints within/across block means, the load-balance null and Cohen's d for
//! each concentration. Only the ratio concentration / noise scale matters, so
//! the noise scale stays at 1.

use moe_xray::pipeline::{analyze, AnalysisConfig};
use moe_xray::synthgen::{self, generate_corpus, make_generator_spec, DepthShape};
use moe_xray::ModelConfig;

fn main() {
    let seed: u64 = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("seed must be an integer"))
        .unwrap_or(synthgen::DEFAULT_SEED);
    let categories: Vec<String> = synthgen::DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect();
    println!("concentration,within,across,load_balance,cohens_d,cv_accuracy");
    for concentration in [0.2, 0.4, 0.6, 0.7, 0.8, 0.9, 1.0, 1.2, 1.5] {
        let spec = make_generator_spec(&ModelConfig::olmoe(), &categories, concentration, DepthShape::LatePeak, seed)
            .expect("valid spec");
        let trace = generate_corpus(&spec, synthgen::DEFAULT_PROMPTS_PER_CATEGORY).expect("corpus");
        let a = analyze(&trace, &AnalysisConfig::default()).expect("analysis");
        println!(
            "{concentration},{:.4},{:.4},{:.4},{:.2},{:.3}",
            a.effect_sizes.within_mean,
            a.effect_sizes.across_mean,
            a.load_balance.mean,
            a.effect_sizes.cohens_d.unwrap_or(f64::NAN),
            a.cv.mean_accuracy
        );
    }
}
