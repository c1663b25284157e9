//! Interaction-oriented recommendation decoder.
//!
//! For a (scholar, candidate submission) pair, each submission in the
//! scholar's reviewed history gets an activation weight from a small MLP over
//! the flattened outer product of history and candidate embeddings. The
//! attention-weighted history sum is concatenated with the scholar and
//! candidate embeddings and pushed through a PReLU MLP ending in a sigmoid.
//!
//! Two forward paths exist: a tape path for training and a plain path for
//! ranking (which folds the candidate into the attention weight once per
//! submission instead of materializing d^2 outer products per history item).
//! A test pins the two paths together.

use crate::error::Error;
use crate::numcore::dense::{sigmoid_scalar, DenseMatrix};
use crate::numcore::rng::Rng;
use crate::numcore::tape::{NodeId, ParamId, ParamStore, Tape};

/// Widths of the prediction MLP hidden layers.
pub const HIDDEN_R1: usize = 200;
pub const HIDDEN_R2: usize = 80;

/// Initial PReLU slope at every decoder activation site.
pub const PRELU_INIT: f64 = 0.25;

const PROB_FLOOR: f64 = 1e-300;
const PROB_CEIL: f64 = 1.0 - 1e-15;

/// All decoder tensors. Attention: `w_a1 (d^2 x eta)`, `w_a2 (eta x 1)`;
/// prediction MLP: `w_r1 (3d x 200)`, `w_r2 (200 x 80)`, `w_out (80 x 1)`;
/// one learnable PReLU slope per activation site.
#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub w_a1: ParamId,
    pub b_a1: ParamId,
    pub w_a2: ParamId,
    pub b_a2: ParamId,
    pub slope_att: ParamId,
    pub w_r1: ParamId,
    pub b_r1: ParamId,
    pub slope_r1: ParamId,
    pub w_r2: ParamId,
    pub b_r2: ParamId,
    pub slope_r2: ParamId,
    pub w_out: ParamId,
    pub b_out: ParamId,
}

impl DecoderParams {
    pub fn register(
        store: &mut ParamStore,
        group: usize,
        d: usize,
        eta: usize,
        rng: &mut Rng,
    ) -> Self {
        let mut weight = |name: &str, rows: usize, cols: usize, store: &mut ParamStore| {
            let std = 1.0 / (rows as f64).sqrt();
            store.register(
                name,
                group,
                DenseMatrix::random_normal(rows, cols, std, rng),
            )
        };
        let w_a1 = weight("decoder.w_a1", d * d, eta, store);
        let b_a1 = store.register("decoder.b_a1", group, DenseMatrix::zeros(1, eta));
        let w_a2 = weight("decoder.w_a2", eta, 1, store);
        let b_a2 = store.register("decoder.b_a2", group, DenseMatrix::zeros(1, 1));
        let slope_att = store.register("decoder.slope_att", group, DenseMatrix::scalar(PRELU_INIT));
        let w_r1 = weight("decoder.w_r1", 3 * d, HIDDEN_R1, store);
        let b_r1 = store.register("decoder.b_r1", group, DenseMatrix::zeros(1, HIDDEN_R1));
        let slope_r1 = store.register("decoder.slope_r1", group, DenseMatrix::scalar(PRELU_INIT));
        let w_r2 = weight("decoder.w_r2", HIDDEN_R1, HIDDEN_R2, store);
        let b_r2 = store.register("decoder.b_r2", group, DenseMatrix::zeros(1, HIDDEN_R2));
        let slope_r2 = store.register("decoder.slope_r2", group, DenseMatrix::scalar(PRELU_INIT));
        let w_out = weight("decoder.w_out", HIDDEN_R2, 1, store);
        let b_out = store.register("decoder.b_out", group, DenseMatrix::zeros(1, 1));
        DecoderParams {
            w_a1,
            b_a1,
            w_a2,
            b_a2,
            slope_att,
            w_r1,
            b_r1,
            slope_r1,
            w_r2,
            b_r2,
            slope_r2,
            w_out,
            b_out,
        }
    }

    pub fn all_ids(&self) -> Vec<ParamId> {
        vec![
            self.w_a1,
            self.b_a1,
            self.w_a2,
            self.b_a2,
            self.slope_att,
            self.w_r1,
            self.b_r1,
            self.slope_r1,
            self.w_r2,
            self.b_r2,
            self.slope_r2,
            self.w_out,
            self.b_out,
        ]
    }

    pub fn resolve<'a>(&self, store: &'a ParamStore) -> DecoderWeights<'a> {
        DecoderWeights {
            w_a1: store.value(self.w_a1),
            b_a1: store.value(self.b_a1),
            w_a2: store.value(self.w_a2),
            b_a2: store.value(self.b_a2).item(),
            slope_att: store.value(self.slope_att).item(),
            w_r1: store.value(self.w_r1),
            b_r1: store.value(self.b_r1),
            slope_r1: store.value(self.slope_r1).item(),
            w_r2: store.value(self.w_r2),
            b_r2: store.value(self.b_r2),
            slope_r2: store.value(self.slope_r2).item(),
            w_out: store.value(self.w_out),
            b_out: store.value(self.b_out).item(),
        }
    }
}

/// Borrowed decoder tensors for the plain forward path.
#[derive(Clone, Copy)]
pub struct DecoderWeights<'a> {
    pub w_a1: &'a DenseMatrix,
    pub b_a1: &'a DenseMatrix,
    pub w_a2: &'a DenseMatrix,
    pub b_a2: f64,
    pub slope_att: f64,
    pub w_r1: &'a DenseMatrix,
    pub b_r1: &'a DenseMatrix,
    pub slope_r1: f64,
    pub w_r2: &'a DenseMatrix,
    pub b_r2: &'a DenseMatrix,
    pub slope_r2: f64,
    pub w_out: &'a DenseMatrix,
    pub b_out: f64,
}

impl<'a> DecoderWeights<'a> {
    pub fn embed_dim(&self) -> usize {
        self.w_r1.rows() / 3
    }

    pub fn eta(&self) -> usize {
        self.w_a1.cols()
    }
}

#[inline]
fn prelu_s(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

/// Candidate-side fold of the attention weight: `t_v[r, e] = sum_c
/// w_a1[r*d + c, e] * h_v[c]`, so each history item costs d*eta instead of
/// d^2*eta.
pub struct CandidateContext {
    t_v: DenseMatrix,
    h_v: Vec<f64>,
}

pub fn candidate_context(w: &DecoderWeights, h_v: &[f64]) -> CandidateContext {
    let d = h_v.len();
    let eta = w.eta();
    debug_assert_eq!(w.w_a1.rows(), d * d, "w_a1 rows must be d^2");
    let mut t_v = DenseMatrix::zeros(d, eta);
    for r in 0..d {
        for (c, &hv) in h_v.iter().enumerate() {
            if hv == 0.0 {
                continue;
            }
            let wrow = w.w_a1.row(r * d + c);
            for (t, &wv) in t_v.row_mut(r).iter_mut().zip(wrow) {
                *t += wv * hv;
            }
        }
    }
    CandidateContext {
        t_v,
        h_v: h_v.to_vec(),
    }
}

/// Activation weight `a_i` for one history item against a folded candidate.
pub fn attention_weight_ctx(w: &DecoderWeights, ctx: &CandidateContext, h_p: &[f64]) -> f64 {
    let eta = w.eta();
    let mut a = w.b_a2;
    for e in 0..eta {
        let mut pre = w.b_a1.get(0, e);
        for (r, &hp) in h_p.iter().enumerate() {
            pre += hp * ctx.t_v.get(r, e);
        }
        a += prelu_s(pre, w.slope_att) * w.w_a2.get(e, 0);
    }
    a
}

/// Activation weight for a (history, candidate) pair of embedding rows.
pub fn attention_weight(w: &DecoderWeights, h_p: &[f64], h_v: &[f64]) -> Result<f64, Error> {
    if h_p.len() != h_v.len() {
        return Err(Error::shape(
            "attention_weight",
            format!("{} vs {}", h_p.len(), h_v.len()),
        ));
    }
    let ctx = candidate_context(w, h_v);
    Ok(attention_weight_ctx(w, &ctx, h_p))
}

/// Pre-sigmoid score for a scholar/candidate pair given the scholar's
/// history rows. Ranking uses this directly: it orders identically to the
/// probability but keeps resolution where the sigmoid saturates.
pub fn logit_with_context(
    w: &DecoderWeights,
    ctx: &CandidateContext,
    h_u: &[f64],
    history: &[&[f64]],
) -> f64 {
    let d = h_u.len();
    // Attention-weighted history sum (zero vector for an empty history).
    let mut s = vec![0.0; d];
    for &h_p in history {
        let a = attention_weight_ctx(w, ctx, h_p);
        for (sv, &hv) in s.iter_mut().zip(h_p) {
            *sv += a * hv;
        }
    }
    let mut x = Vec::with_capacity(3 * d);
    x.extend_from_slice(h_u);
    x.extend_from_slice(&s);
    x.extend_from_slice(&ctx.h_v);

    let mut r1 = vec![0.0; w.w_r1.cols()];
    for (j, r) in r1.iter_mut().enumerate() {
        let mut v = w.b_r1.get(0, j);
        for (i, &xv) in x.iter().enumerate() {
            v += xv * w.w_r1.get(i, j);
        }
        *r = prelu_s(v, w.slope_r1);
    }
    let mut r2 = vec![0.0; w.w_r2.cols()];
    for (j, r) in r2.iter_mut().enumerate() {
        let mut v = w.b_r2.get(0, j);
        for (i, &rv) in r1.iter().enumerate() {
            v += rv * w.w_r2.get(i, j);
        }
        *r = prelu_s(v, w.slope_r2);
    }
    let mut z = w.b_out;
    for (i, &rv) in r2.iter().enumerate() {
        z += rv * w.w_out.get(i, 0);
    }
    z
}

/// Sigmoid clamped strictly inside (0, 1).
pub fn probability(logit: f64) -> f64 {
    sigmoid_scalar(logit).clamp(PROB_FLOOR, PROB_CEIL)
}

/// Review probability, strictly inside (0, 1).
pub fn predict_with_context(
    w: &DecoderWeights,
    ctx: &CandidateContext,
    h_u: &[f64],
    history: &[&[f64]],
) -> f64 {
    probability(logit_with_context(w, ctx, h_u, history))
}

pub fn predict(w: &DecoderWeights, h_u: &[f64], h_v: &[f64], history: &[&[f64]]) -> f64 {
    let ctx = candidate_context(w, h_v);
    predict_with_context(w, &ctx, h_u, history)
}

/// Planted tape nodes for the decoder tensors.
#[derive(Debug, Clone, Copy)]
pub struct DecoderNodes {
    pub w_a1: NodeId,
    pub b_a1: NodeId,
    pub w_a2: NodeId,
    pub b_a2: NodeId,
    pub slope_att: NodeId,
    pub w_r1: NodeId,
    pub b_r1: NodeId,
    pub slope_r1: NodeId,
    pub w_r2: NodeId,
    pub b_r2: NodeId,
    pub slope_r2: NodeId,
    pub w_out: NodeId,
    pub b_out: NodeId,
}

pub fn plant(tape: &mut Tape, store: &ParamStore, params: &DecoderParams) -> DecoderNodes {
    DecoderNodes {
        w_a1: tape.param(store, params.w_a1),
        b_a1: tape.param(store, params.b_a1),
        w_a2: tape.param(store, params.w_a2),
        b_a2: tape.param(store, params.b_a2),
        slope_att: tape.param(store, params.slope_att),
        w_r1: tape.param(store, params.w_r1),
        b_r1: tape.param(store, params.b_r1),
        slope_r1: tape.param(store, params.slope_r1),
        w_r2: tape.param(store, params.w_r2),
        b_r2: tape.param(store, params.b_r2),
        slope_r2: tape.param(store, params.slope_r2),
        w_out: tape.param(store, params.w_out),
        b_out: tape.param(store, params.b_out),
    }
}

/// Tape forward for one (scholar, candidate, history) triple over an n x d
/// embedding node. Returns a 1x1 probability node.
pub fn predict_tape_nodes(
    tape: &mut Tape,
    nodes: &DecoderNodes,
    embeddings: NodeId,
    scholar_node: u32,
    candidate_node: u32,
    history_nodes: &[u32],
) -> Result<NodeId, Error> {
    debug_assert!(
        !history_nodes.contains(&candidate_node),
        "candidate must not appear in its own history"
    );
    let h_u = tape.gather_rows(embeddings, &[scholar_node])?;
    let h_v = tape.gather_rows(embeddings, &[candidate_node])?;
    let h_p = tape.gather_rows(embeddings, history_nodes)?;

    // a = w_a2 . prelu(w_a1 . vec(h_p (x) h_v) + b_a1) + b_a2, one row per item
    let outer = tape.outer_flatten(h_p, h_v)?;
    let lin1 = tape.matmul(outer, nodes.w_a1)?;
    let pre = tape.add_bias(lin1, nodes.b_a1)?;
    let act = tape.prelu(pre, nodes.slope_att)?;
    let lin2 = tape.matmul(act, nodes.w_a2)?;
    let attention = tape.add_bias(lin2, nodes.b_a2)?;

    // s = sum_i a_i h_p_i  via  a^T h_p
    let at = tape.transpose(attention);
    let weighted = tape.matmul(at, h_p)?;

    let us = tape.concat_cols(h_u, weighted)?;
    let x = tape.concat_cols(us, h_v)?;

    let lin_r1 = tape.matmul(x, nodes.w_r1)?;
    let pre_r1 = tape.add_bias(lin_r1, nodes.b_r1)?;
    let r1 = tape.prelu(pre_r1, nodes.slope_r1)?;

    let lin_r2 = tape.matmul(r1, nodes.w_r2)?;
    let pre_r2 = tape.add_bias(lin_r2, nodes.b_r2)?;
    let r2 = tape.prelu(pre_r2, nodes.slope_r2)?;

    let lin_out = tape.matmul(r2, nodes.w_out)?;
    let z = tape.add_bias(lin_out, nodes.b_out)?;
    Ok(tape.sigmoid(z))
}

pub fn predict_tape(
    tape: &mut Tape,
    store: &ParamStore,
    params: &DecoderParams,
    embeddings: NodeId,
    scholar_node: u32,
    candidate_node: u32,
    history_nodes: &[u32],
) -> Result<NodeId, Error> {
    let nodes = plant(tape, store, params);
    predict_tape_nodes(
        tape,
        &nodes,
        embeddings,
        scholar_node,
        candidate_node,
        history_nodes,
    )
}

/// Mean BCE over decoder predictions (already probabilities).
pub fn sup_loss(tape: &mut Tape, predictions: &[NodeId], labels: &[f64]) -> Result<NodeId, Error> {
    let stacked = tape.stack_scalars(predictions)?;
    tape.bce_mean(stacked, labels, crate::stage1::BCE_EPS)
}
