//! Preference encoder: decoupled graph convolution with residual layer
//! pooling, behavior edge scoring, behavior BCE loss, and fusion with
//! knowledge vectors.
//!
//! The convolution is `h^(i) = A_hat h^(i-1) W_i` with no activation between
//! layers; the pooled behavior embedding is the sum of layers 1..=L. An edge
//! (u, v) is scored as `relu(<h_u, h_v>)` and trained with clamped BCE.

use std::sync::Arc;

use crate::error::Error;
use crate::numcore::dense::DenseMatrix;
use crate::numcore::rng::Rng;
use crate::numcore::sparse::SparseAdjacency;
use crate::numcore::tape::{NodeId, ParamId, ParamStore, Tape};

/// Clamp applied to scores before the BCE logs.
pub const BCE_EPS: f64 = 1e-7;

/// Learnable pieces of the behavior encoder: the initial embedding table
/// (n x d_b) plus one d_b x d_b weight matrix per layer.
#[derive(Debug, Clone)]
pub struct Stage1Params {
    pub embedding: ParamId,
    pub weights: Vec<ParamId>,
}

impl Stage1Params {
    /// Registers freshly initialized tensors: embeddings from N(0, 0.1^2),
    /// weights variance-preserving at 1/sqrt(d_b).
    pub fn register(
        store: &mut ParamStore,
        group: usize,
        n_nodes: usize,
        d_b: usize,
        layers: usize,
        rng: &mut Rng,
    ) -> Self {
        let embedding = store.register(
            "stage1.embedding",
            group,
            DenseMatrix::random_normal(n_nodes, d_b, 0.1, rng),
        );
        let std = 1.0 / (d_b as f64).sqrt();
        let weights = (0..layers)
            .map(|l| {
                store.register(
                    &format!("stage1.w_b.{l}"),
                    group,
                    DenseMatrix::random_normal(d_b, d_b, std, rng),
                )
            })
            .collect();
        Stage1Params { embedding, weights }
    }
}

/// Runs the decoupled convolution and returns the residual sum over layers
/// 1..=L (layer 0 is excluded from the sum).
pub fn encode_behavior(
    tape: &mut Tape,
    adj: &Arc<SparseAdjacency>,
    store: &ParamStore,
    params: &Stage1Params,
) -> Result<NodeId, Error> {
    let mut h = tape.param(store, params.embedding);
    let mut pooled: Option<NodeId> = None;
    for &w in &params.weights {
        let wn = tape.param(store, w);
        let propagated = tape.spmm(adj, h)?;
        h = tape.matmul(propagated, wn)?;
        pooled = Some(match pooled {
            None => h,
            Some(acc) => tape.add(acc, h)?,
        });
    }
    pooled.ok_or_else(|| Error::Input("stage-1 encoder needs at least one layer".to_string()))
}

/// `relu(<h_u, h_v>)` for a single pair of embedding rows.
pub fn behavior_score(h_u: &[f64], h_v: &[f64]) -> Result<f64, Error> {
    if h_u.len() != h_v.len() {
        return Err(Error::shape(
            "behavior_score",
            format!("{} vs {}", h_u.len(), h_v.len()),
        ));
    }
    let dot: f64 = h_u.iter().zip(h_v).map(|(a, b)| a * b).sum();
    Ok(dot.max(0.0))
}

/// Batched behavior scores on the tape: one `relu(dot)` per (u, v) node pair.
pub fn behavior_scores(
    tape: &mut Tape,
    h_b: NodeId,
    pairs: &[(u32, u32)],
) -> Result<NodeId, Error> {
    let us: Vec<u32> = pairs.iter().map(|p| p.0).collect();
    let vs: Vec<u32> = pairs.iter().map(|p| p.1).collect();
    let hu = tape.gather_rows(h_b, &us)?;
    let hv = tape.gather_rows(h_b, &vs)?;
    let dots = tape.pair_dot(hu, hv)?;
    Ok(tape.relu(dots))
}

/// Mean BCE over labeled scores, clamped into `(BCE_EPS, 1 - BCE_EPS)`.
pub fn bce_loss(tape: &mut Tape, scores: NodeId, labels: &[f64]) -> Result<NodeId, Error> {
    tape.bce_mean(scores, labels, BCE_EPS)
}

/// Row-wise concatenation of behavior and knowledge embeddings (Stage-1
/// output H^1 with d = d_b + d_k).
pub fn fuse(tape: &mut Tape, h_b: NodeId, h_k: NodeId) -> Result<NodeId, Error> {
    tape.concat_cols(h_b, h_k)
}
