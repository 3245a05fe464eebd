//! Session-based next-item recommendation.
//!
//! The model couples an intra-session encoder (self-attention,
//! feed-forward, attentive aggregation and positional decay fusion) with a
//! cross-session graph encoder trained by discriminating true node
//! embeddings from shuffled ones against a mean-pooled graph summary. The
//! two objectives are optimized alternately and share the item embedding
//! table.

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod intra;
mod model;
pub mod numerics;
pub mod synth;
pub mod trainer;
mod util;

pub use error::{Error, Result};
pub use model::ModelState;
pub use util::write_atomic;

use data::Instance;
use eval::{rank_instance, RankingResult};

/// Ranks every instance against the full vocabulary with the trained model.
pub fn evaluate_model(
    state: &ModelState,
    cfg: &intra::IntraConfig,
    instances: &[Instance],
    k: usize,
) -> Result<Vec<RankingResult>> {
    instances
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let scores = intra::predict_scores(&inst.prefix, state.table(), &state.intra, cfg)?;
            Ok(rank_instance(i, &scores, inst.target, k))
        })
        .collect()
}

/// Same as [`evaluate_model`] for any baseline ranker.
pub fn evaluate_ranker<R: baselines::Ranker + ?Sized>(
    ranker: &R,
    instances: &[Instance],
    k: usize,
) -> Vec<RankingResult> {
    instances
        .iter()
        .enumerate()
        .map(|(i, inst)| rank_instance(i, &ranker.scores(&inst.prefix), inst.target, k))
        .collect()
}
