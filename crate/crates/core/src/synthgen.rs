//! Task-conditioned synthetic routing traces.
//!
//! For token `t` of a prompt in category `c`, the router logits at layer `l` are
//!
//! ```text
//! logits = depth_profile[l] * base_logits[c][l] + token_noise_scale * eps_t,   eps_t ~ N(0, I)
//! ```
//!
//! followed by a softmax and top-k selection (ties go to the lower expert
//! index). Base logits are i.i.d. `N(0, concentration^2)` per category and
//! layer. This is a modeling device for exercising the analysis pipeline; it
//! makes no claim about any particular model's router.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_for, STREAM_LOGITS, STREAM_PROMPT};
use crate::trace::{ModelConfig, PromptMeta, RoutingEvent, TokenType, TraceSet};

/// Calibrated so the default corpus lands near within 0.87 / across 0.62
/// mean similarity; see `examples/calibrate.rs`.
pub const DEFAULT_CONCENTRATION: f64 = 0.8;
pub const DEFAULT_NOISE_SCALE: f64 = 1.0;
pub const DEFAULT_TOKENS_PER_PROMPT: usize = 32;
pub const DEFAULT_PROMPTS_PER_CATEGORY: usize = 20;
pub const DEFAULT_SEED: u64 = 2024;
pub const DEFAULT_CATEGORIES: [&str; 4] = ["code", "math", "story", "factual"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthShape {
    Flat,
    LinearIncreasing,
    LatePeak,
}

impl std::str::FromStr for DepthShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(DepthShape::Flat),
            "linear_increasing" => Ok(DepthShape::LinearIncreasing),
            "late_peak" => Ok(DepthShape::LatePeak),
            other => Err(Error::Config(format!(
                "depth shape must be flat, linear_increasing or late_peak, got `{other}`"
            ))),
        }
    }
}

impl DepthShape {
    /// Per-layer signal multiplier in `[0, 1]`.
    ///
    /// `late_peak` is a Gaussian bump of width `(L-1)/5` centred at
    /// `13/15 * (L-1)` on top of a 0.25 floor, so layer 13 of 16 is the peak.
    pub fn profile(self, num_layers: usize) -> Vec<f64> {
        let last = num_layers.saturating_sub(1) as f64;
        (0..num_layers)
            .map(|l| {
                let l = l as f64;
                match self {
                    DepthShape::Flat => 1.0,
                    DepthShape::LinearIncreasing if last == 0.0 => 1.0,
                    DepthShape::LinearIncreasing => l / last,
                    DepthShape::LatePeak if last == 0.0 => 1.0,
                    DepthShape::LatePeak => {
                        let peak = 13.0 / 15.0 * last;
                        let width = last / 5.0;
                        0.25 + 0.75 * (-(l - peak).powi(2) / (2.0 * width * width)).exp()
                    }
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub config: ModelConfig,
    pub categories: Vec<String>,
    pub concentration: f64,
    /// `[category][layer][expert]`.
    pub base_logits: Vec<Vec<Vec<f64>>>,
    pub depth_shape: DepthShape,
    pub depth_profile: Vec<f64>,
    pub token_noise_scale: f64,
    pub tokens_per_prompt: usize,
    pub seed: u64,
}

pub fn make_generator_spec(
    config: &ModelConfig,
    categories: &[String],
    concentration: f64,
    depth_shape: DepthShape,
    seed: u64,
) -> Result<GeneratorSpec> {
    config.check()?;
    if categories.is_empty() {
        return Err(Error::Config("generator needs at least one category".into()));
    }
    if !(concentration >= 0.0 && concentration.is_finite()) {
        return Err(Error::Config(format!(
            "concentration must be finite and non-negative, got {concentration}"
        )));
    }
    let mut rng = rng_for(seed, STREAM_LOGITS, 0);
    let base_logits = categories
        .iter()
        .map(|_| {
            (0..config.num_layers)
                .map(|_| {
                    (0..config.num_experts)
                        .map(|_| concentration * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect()
        })
        .collect();
    let spec = GeneratorSpec {
        config: config.clone(),
        categories: categories.to_vec(),
        concentration,
        base_logits,
        depth_shape,
        depth_profile: depth_shape.profile(config.num_layers),
        token_noise_scale: DEFAULT_NOISE_SCALE,
        tokens_per_prompt: DEFAULT_TOKENS_PER_PROMPT,
        seed,
    };
    spec.check()?;
    Ok(spec)
}

impl GeneratorSpec {
    /// 4 categories, 16 layers x 64 experts, top-8, 32 tokens, late-peak depth profile.
    pub fn default_shape(seed: u64) -> Self {
        let categories: Vec<String> = DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect();
        make_generator_spec(
            &ModelConfig::olmoe(),
            &categories,
            DEFAULT_CONCENTRATION,
            DepthShape::LatePeak,
            seed,
        )
        .expect("preset parameters are valid")
    }

    pub fn with_noise_scale(mut self, scale: f64) -> Self {
        self.token_noise_scale = scale;
        self
    }

    pub fn with_tokens_per_prompt(mut self, tokens: usize) -> Self {
        self.tokens_per_prompt = tokens;
        self
    }

    pub fn check(&self) -> Result<()> {
        self.config.check()?;
        let (layers, experts) = (self.config.num_layers, self.config.num_experts);
        if self.depth_profile.len() != layers {
            return Err(Error::Config(format!(
                "depth profile has {} entries for {layers} layers",
                self.depth_profile.len()
            )));
        }
        if self.depth_profile.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("depth profile values must lie in [0, 1]".into()));
        }
        if self.depth_shape == DepthShape::LinearIncreasing
            && self.depth_profile.windows(2).any(|w| w[1] < w[0])
        {
            return Err(Error::Config(
                "linear_increasing depth profile is not monotone".into(),
            ));
        }
        if !(self.token_noise_scale >= 0.0 && self.token_noise_scale.is_finite()) {
            return Err(Error::Config(format!(
                "token noise scale must be finite and non-negative, got {}",
                self.token_noise_scale
            )));
        }
        let shape_ok = self.base_logits.len() == self.categories.len()
            && self
                .base_logits
                .iter()
                .all(|c| c.len() == layers && c.iter().all(|l| l.len() == experts));
        if !shape_ok {
            return Err(Error::Config(
                "base logits do not match categories x layers x experts".into(),
            ));
        }
        Ok(())
    }

    fn category_index(&self, category: &str) -> Result<usize> {
        self.categories
            .iter()
            .position(|c| c == category)
            .ok_or_else(|| Error::UnknownCategory(category.to_string()))
    }
}

/// Indices of the `k` largest probabilities, ties to the lower index, sorted
/// ascending.
fn top_k(probs: &[f64], k: usize, order: &mut Vec<usize>) -> Vec<u32> {
    order.clear();
    order.extend(0..probs.len());
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut picked: Vec<u32> = order[..k].iter().map(|&e| e as u32).collect();
    picked.sort_unstable();
    picked
}

fn softmax_inplace(logits: &mut [f64]) {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}

/// Routes `tokens_per_prompt` generated tokens through every layer. Events are
/// emitted token by token, layer by layer, experts ascending.
pub fn sample_prompt_trace(
    spec: &GeneratorSpec,
    category: &str,
    prompt_id: &str,
    seed: u64,
) -> Result<Vec<RoutingEvent>> {
    let c = spec.category_index(category)?;
    let config = &spec.config;
    let mut rng = rng_for(seed, STREAM_PROMPT, 0);
    let mut events =
        Vec::with_capacity(spec.tokens_per_prompt * config.num_layers * config.top_k);
    let mut logits = vec![0.0; config.num_experts];
    let mut order = Vec::with_capacity(config.num_experts);
    for token in 0..spec.tokens_per_prompt {
        for layer in 0..config.num_layers {
            let weight = spec.depth_profile[layer];
            for (e, logit) in logits.iter_mut().enumerate() {
                let noise: f64 = rng.sample(StandardNormal);
                *logit = weight * spec.base_logits[c][layer][e] + spec.token_noise_scale * noise;
            }
            softmax_inplace(&mut logits);
            for expert in top_k(&logits, config.top_k, &mut order) {
                events.push(RoutingEvent {
                    prompt_id: prompt_id.to_string(),
                    layer: layer as u32,
                    expert,
                    token_pos: token as u32,
                    token_type: TokenType::Generation,
                });
            }
        }
    }
    Ok(events)
}

/// `prompts_per_category` prompts per category, ids `{category}_{index:02}`,
/// each with its own seed derived from the generator seed and the prompt's
/// position in the corpus.
pub fn generate_corpus(spec: &GeneratorSpec, prompts_per_category: usize) -> Result<TraceSet> {
    spec.check()?;
    let prompts: Vec<PromptMeta> = spec
        .categories
        .iter()
        .flat_map(|c| (0..prompts_per_category).map(move |i| PromptMeta::new(format!("{c}_{i:02}"), c)))
        .collect();
    let per_prompt: Vec<Vec<RoutingEvent>> = prompts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let seed = derive_seed(spec.seed, STREAM_PROMPT, i as u64);
            sample_prompt_trace(spec, &p.category, &p.prompt_id, seed)
        })
        .collect::<Result<_>>()?;
    let mut trace = TraceSet {
        config: spec.config.clone(),
        categories: spec.categories.clone(),
        prompts,
        events: per_prompt.into_iter().flatten().collect(),
    };
    trace.refresh_token_counts();
    Ok(trace)
}
