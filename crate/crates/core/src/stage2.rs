//! Contrastive encoder: masked positive views through a shared-weight graph
//! convolution, Student-t soft clustering with a KL self-training target,
//! pseudo negative labels, and the softmax-contrast loss.
//!
//! Negative sampling is the load-bearing piece: each node gets a hard cluster
//! id from the soft assignment, and negatives for an anchor are drawn only
//! from other clusters, so plausible-but-unobserved pairs inside a cluster
//! are never pushed apart.

use std::rc::Rc;
use std::sync::Arc;

use crate::error::Error;
use crate::numcore::dense::DenseMatrix;
use crate::numcore::rng::Rng;
use crate::numcore::sparse::SparseAdjacency;
use crate::numcore::tape::{NodeId, ParamId, ParamStore, Tape};

/// Floor applied to q before `log` in the KL loss.
pub const Q_FLOOR: f64 = 1e-12;

/// Shared convolution weight and learnable cluster centers.
#[derive(Debug, Clone)]
pub struct Stage2Params {
    pub w_c: ParamId,
    pub centers: ParamId,
}

impl Stage2Params {
    /// The shared weight starts near the identity so the contrastive stage
    /// initially passes the fused stage-1 structure through and the losses
    /// refine it instead of scrambling it.
    pub fn register(
        store: &mut ParamStore,
        group: usize,
        d: usize,
        clusters: usize,
        rng: &mut Rng,
    ) -> Self {
        let std = 0.25 / (d as f64).sqrt();
        let mut init = DenseMatrix::random_normal(d, d, std, rng);
        for i in 0..d {
            init.set(i, i, init.get(i, i) + 1.0);
        }
        let w_c = store.register("stage2.w_c", group, init);
        let centers = store.register(
            "stage2.centers",
            group,
            DenseMatrix::random_normal(clusters, d, 0.1, rng),
        );
        Stage2Params { w_c, centers }
    }
}

/// Node-level mask decisions: row `i` survives with probability `1 - rate`.
pub fn mask_keep_flags(n: usize, rate: f64, seed: u64) -> Result<Vec<bool>, Error> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Input(format!("mask rate {rate} outside [0, 1]")));
    }
    let mut rng = Rng::from_seed(seed);
    Ok((0..n).map(|_| rng.next_f64() >= rate).collect())
}

/// Zeroes whole feature rows with probability `rate`, deterministically
/// under `seed`.
pub fn mask_features(tape: &mut Tape, h1: NodeId, rate: f64, seed: u64) -> Result<NodeId, Error> {
    let keep = mask_keep_flags(tape.value(h1).rows(), rate, seed)?;
    tape.mask_rows(h1, &keep)
}

/// Builds the masked positive view and the clean view through the same
/// convolution weight: `H+ = relu(A_hat mask(H1) W_c)`,
/// `H2 = relu(A_hat H1 W_c)`.
pub fn contrastive_views(
    tape: &mut Tape,
    adj: &Arc<SparseAdjacency>,
    h1: NodeId,
    store: &ParamStore,
    params: &Stage2Params,
    rate: f64,
    seed: u64,
) -> Result<(NodeId, NodeId), Error> {
    let w_c = tape.param(store, params.w_c);
    let masked = mask_features(tape, h1, rate, seed)?;
    let prop_masked = tape.spmm(adj, masked)?;
    let lin_masked = tape.matmul(prop_masked, w_c)?;
    let h_plus = tape.relu(lin_masked);
    let prop = tape.spmm(adj, h1)?;
    let lin = tape.matmul(prop, w_c)?;
    let h2 = tape.relu(lin);
    Ok((h_plus, h2))
}

/// Student-t soft assignment (one degree of freedom):
/// `q_ui = (1 + |h_u - mu_i|^2)^-1`, normalized per row.
pub fn soft_assign(h: &DenseMatrix, centers: &DenseMatrix) -> DenseMatrix {
    let n = h.rows();
    let c = centers.rows();
    let mut q = DenseMatrix::zeros(n, c);
    for u in 0..n {
        let hu = h.row(u);
        let mut total = 0.0;
        for i in 0..c {
            let mut d2 = 0.0;
            for (a, b) in hu.iter().zip(centers.row(i)) {
                let d = a - b;
                d2 += d * d;
            }
            let k = 1.0 / (1.0 + d2);
            q.set(u, i, k);
            total += k;
        }
        for v in q.row_mut(u) {
            *v /= total;
        }
    }
    q
}

/// Tape version of [`soft_assign`], differentiable through embeddings and
/// centers.
pub fn soft_assign_tape(tape: &mut Tape, h2: NodeId, centers: NodeId) -> Result<NodeId, Error> {
    let d2 = tape.pairwise_sqdist(h2, centers)?;
    let shifted = tape.add_scalar(d2, 1.0);
    let kernel = tape.recip(shifted);
    let sums = tape.rowsum(kernel);
    tape.div_row_broadcast(kernel, sums)
}

/// Self-training target: `p_ui = (q_ui^2 / f_i) / sum_j (q_uj^2 / f_j)` with
/// soft cluster frequency `f_i = sum_u q_ui`; a cluster with zero frequency
/// contributes an exactly zero column.
pub fn target_distribution(q: &DenseMatrix) -> DenseMatrix {
    let (n, c) = (q.rows(), q.cols());
    let mut freq = vec![0.0; c];
    for u in 0..n {
        for (i, f) in freq.iter_mut().enumerate() {
            *f += q.get(u, i);
        }
    }
    let mut p = DenseMatrix::zeros(n, c);
    for u in 0..n {
        let mut total = 0.0;
        for (i, &f) in freq.iter().enumerate() {
            let w = if f > 0.0 {
                let qv = q.get(u, i);
                qv * qv / f
            } else {
                0.0
            };
            p.set(u, i, w);
            total += w;
        }
        if total > 0.0 {
            for v in p.row_mut(u) {
                *v /= total;
            }
        }
    }
    p
}

/// `sum_u sum_i p log(p/q)` with `0 log 0 := 0`; also reports how many q
/// entries hit the [`Q_FLOOR`] clamp under a positive p.
pub fn cluster_loss_details(p: &DenseMatrix, q: &DenseMatrix) -> (f64, usize) {
    assert_eq!((p.rows(), p.cols()), (q.rows(), q.cols()));
    let mut loss = 0.0;
    let mut clamped = 0;
    for (pv, qv) in p.values().iter().zip(q.values()) {
        if *pv > 0.0 {
            let q_safe = if *qv < Q_FLOOR {
                clamped += 1;
                Q_FLOOR
            } else {
                *qv
            };
            loss += pv * (pv / q_safe).ln();
        }
    }
    (loss, clamped)
}

pub fn cluster_loss(p: &DenseMatrix, q: &DenseMatrix) -> f64 {
    cluster_loss_details(p, q).0
}

/// KL cluster loss on the tape with a constant target: gradients flow into Q
/// only. Returns the loss node; its value includes the constant
/// `sum p log p` term so it matches [`cluster_loss`] exactly.
pub fn cluster_loss_tape(
    tape: &mut Tape,
    q: NodeId,
    target: &DenseMatrix,
) -> Result<NodeId, Error> {
    if tape.shape(q) != (target.rows(), target.cols()) {
        return Err(Error::shape(
            "cluster_loss",
            format!(
                "Q {:?} vs P {}x{}",
                tape.shape(q),
                target.rows(),
                target.cols()
            ),
        ));
    }
    let p_log_p: f64 = target
        .values()
        .iter()
        .map(|&pv| if pv > 0.0 { pv * pv.ln() } else { 0.0 })
        .sum();
    let p_node = tape.constant(target.clone());
    let log_q = tape.log(q, Q_FLOOR);
    let cross = tape.mul(p_node, log_q)?;
    let cross_sum = tape.sum_all(cross);
    let neg_cross = tape.scale(cross_sum, -1.0);
    let const_term = tape.scalar(p_log_p);
    tape.add(neg_cross, const_term)
}

/// Hard cluster ids: per-row argmax of Q with lowest-index tie break.
pub fn hard_assignments(q: &DenseMatrix) -> Vec<u32> {
    (0..q.rows())
        .map(|u| {
            let row = q.row(u);
            let mut best = 0usize;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best as u32
        })
        .collect()
}

/// Soft assignments, the stop-gradient target, and hard ids together.
#[derive(Debug, Clone)]
pub struct ClusterState {
    pub q: DenseMatrix,
    pub p: DenseMatrix,
    pub hard: Vec<u32>,
}

impl ClusterState {
    pub fn from_embeddings(h: &DenseMatrix, centers: &DenseMatrix) -> Self {
        let q = soft_assign(h, centers);
        let p = target_distribution(&q);
        let hard = hard_assignments(&q);
        ClusterState { q, p, hard }
    }

    /// Recomputes Q and hard ids for fresh embeddings, keeping the existing
    /// target P (refreshed separately on its own cadence).
    pub fn refresh_soft(&mut self, h: &DenseMatrix, centers: &DenseMatrix) {
        self.q = soft_assign(h, centers);
        self.hard = hard_assignments(&self.q);
    }

    pub fn refresh_target(&mut self) {
        self.p = target_distribution(&self.q);
    }

    pub fn cluster_count(&self) -> usize {
        self.q.cols()
    }

    /// Negative candidates for one anchor under this state's hard ids.
    pub fn pseudo_negatives(&self, anchor: u32, m: usize, seed: u64) -> Vec<u32> {
        pseudo_neg_sample(anchor, &self.hard, m, seed)
    }

    /// Export rows as `node_id<TAB>cluster_id<TAB>q1,...,qC`.
    pub fn render(&self, node_ids: &[String]) -> String {
        let mut out = String::new();
        for (u, id) in node_ids.iter().enumerate() {
            out.push_str(id);
            out.push('\t');
            out.push_str(&self.hard[u].to_string());
            out.push('\t');
            for (i, v) in self.q.row(u).iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Uniform sample without replacement of up to `m` nodes whose hard cluster
/// differs from the anchor's; never contains the anchor. Deterministic under
/// `seed`. An empty result means every other node shares the anchor's
/// cluster.
pub fn pseudo_neg_sample(anchor: u32, hard: &[u32], m: usize, seed: u64) -> Vec<u32> {
    let n = hard.len();
    let own = hard[anchor as usize];
    let available = hard.iter().filter(|&&c| c != own).count();
    if available == 0 {
        return Vec::new();
    }
    let take = m.min(available);
    let mut rng = Rng::from_seed(seed);
    if available <= 4 * m {
        // Materialize candidates and partially shuffle.
        let mut candidates: Vec<u32> = (0..n as u32).filter(|&v| hard[v as usize] != own).collect();
        for i in 0..take {
            let j = i + rng.next_index(candidates.len() - i);
            candidates.swap(i, j);
        }
        candidates.truncate(take);
        candidates
    } else {
        // Rejection sampling; the candidate pool dwarfs m, so this ends fast.
        let mut picked = Vec::with_capacity(take);
        let mut seen = vec![false; n];
        while picked.len() < take {
            let v = rng.next_index(n) as u32;
            if hard[v as usize] == own || seen[v as usize] {
                continue;
            }
            seen[v as usize] = true;
            picked.push(v);
        }
        picked
    }
}

/// Per-anchor negative sets for the whole graph. Each anchor gets its own
/// seed-derived stream, so sampling order is independent of evaluation order.
pub fn sample_negatives_all(hard: &[u32], m: usize, seed: u64) -> Vec<Vec<u32>> {
    (0..hard.len() as u32)
        .map(|u| {
            pseudo_neg_sample(
                u,
                hard,
                m,
                seed ^ (u as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            )
        })
        .collect()
}

/// Softmax-contrast loss over all anchors (see `Tape::info_nce`): anchors
/// pull toward their masked positive rows and push from cross-cluster
/// negatives.
pub fn contrastive_loss(
    tape: &mut Tape,
    h2: NodeId,
    h_plus: NodeId,
    negatives: Rc<Vec<Vec<u32>>>,
    temperature: f64,
) -> Result<NodeId, Error> {
    tape.info_nce(h2, h_plus, negatives, temperature)
}

/// Lloyd k-means warm start for the cluster centers, seeded k-means++ style
/// (each new center drawn proportional to squared distance from the chosen
/// ones). Empty clusters keep their previous center.
pub fn kmeans(h: &DenseMatrix, clusters: usize, iters: usize, rng: &mut Rng) -> DenseMatrix {
    let n = h.rows();
    let mut centers = DenseMatrix::zeros(clusters, h.cols());
    centers
        .row_mut(0)
        .copy_from_slice(h.row(rng.next_index(n.max(1))));
    let mut d2 = vec![f64::INFINITY; n];
    for c in 1..clusters {
        let prev = centers.row((c - 1).min(clusters - 1)).to_vec();
        let mut total = 0.0;
        for (u, slot) in d2.iter_mut().enumerate() {
            let d: f64 = h
                .row(u)
                .iter()
                .zip(&prev)
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            if d < *slot {
                *slot = d;
            }
            total += *slot;
        }
        let pick = if total > 0.0 {
            let mut target = rng.next_f64() * total;
            let mut chosen = n - 1;
            for (u, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = u;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.next_index(n.max(1))
        };
        let row = h.row(pick).to_vec();
        centers.row_mut(c).copy_from_slice(&row);
    }
    let mut assign = vec![0usize; n];
    for _ in 0..iters {
        for (u, a) in assign.iter_mut().enumerate() {
            let hu = h.row(u);
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..clusters {
                let d: f64 = hu
                    .iter()
                    .zip(centers.row(c))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            *a = best;
        }
        let mut sums = DenseMatrix::zeros(clusters, h.cols());
        let mut counts = vec![0usize; clusters];
        for (u, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for (s, &v) in sums.row_mut(a).iter_mut().zip(h.row(u)) {
                *s += v;
            }
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                let inv = 1.0 / count as f64;
                for (dst, &s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
    }
    centers
}
