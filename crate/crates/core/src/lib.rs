//! Routing-signature analysis for sparse mixture-of-experts models.
//!
//! Routing traces (one JSON line per expert activation) are reduced to
//! per-prompt routing signatures: for every layer, the distribution of
//! activations over experts. On top of those the crate computes mean
//! layer-wise cosine similarity, category block means, permutation and
//! load-balance null baselines, Cohen's d overall and per layer, a
//! cross-validated multinomial logistic regression, and a PCA projection.
//! [`synthgen`] produces task-conditioned traces so the whole pipeline can be
//! exercised without a real model.

pub mod baselines;
pub mod classifier;
pub mod error;
pub mod pipeline;
pub mod projection;
pub mod rng;
pub mod signatures;
pub mod similarity;
pub mod stats;
pub mod svg;
pub mod synthgen;
pub mod trace;

pub use error::{Error, Result};
pub use signatures::{CountMatrix, RoutingSignature};
pub use similarity::SimilarityMatrix;
pub use trace::{ModelConfig, RoutingEvent, TokenFilter, TokenType, TraceSet};
