//! Reverse-mode differentiation over matrix-level primitives.
//!
//! A `Tape` records each forward operation together with parent node ids.
//! `backward` seeds the scalar loss adjoint with 1 and walks the node list in
//! reverse (construction order is already topological), accumulating adjoints
//! into parents. Parameters are planted from a `ParamStore`; after backward,
//! every parameter gets a gradient tensor, exactly zero if the loss never
//! touched it.

use std::rc::Rc;
use std::sync::Arc;

use super::dense::{self, DenseMatrix};
use super::sparse::{self, SparseAdjacency};
use crate::error::Error;

/// Index of a tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Named, grouped parameter tensors. Registration order is fixed and doubles
/// as the checkpoint tensor order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub group: usize,
    pub value: DenseMatrix,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn register(&mut self, name: &str, group: usize, value: DenseMatrix) -> ParamId {
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry {
            name: name.to_string(),
            group,
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &DenseMatrix {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut DenseMatrix {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients aligned with a `ParamStore`.
#[derive(Debug, Clone)]
pub struct Gradients {
    by_param: Vec<DenseMatrix>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &DenseMatrix {
        &self.by_param[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &DenseMatrix)> {
        self.by_param
            .iter()
            .enumerate()
            .map(|(i, g)| (ParamId(i), g))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(usize),
    Spmm {
        adj: usize,
        x: usize,
    },
    MatMul {
        a: usize,
        b: usize,
    },
    Transpose {
        x: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    AddBias {
        x: usize,
        bias: usize,
    },
    Relu {
        x: usize,
    },
    PRelu {
        x: usize,
        slope: usize,
    },
    Sigmoid {
        x: usize,
    },
    Log {
        x: usize,
        floor: f64,
    },
    AddScalar {
        x: usize,
    },
    Recip {
        x: usize,
    },
    Scale {
        x: usize,
        c: f64,
    },
    SumAll {
        x: usize,
    },
    RowSum {
        x: usize,
    },
    DivRowBroadcast {
        num: usize,
        den: usize,
    },
    ConcatCols {
        a: usize,
        b: usize,
    },
    GatherRows {
        x: usize,
        idx: Vec<u32>,
    },
    MaskRows {
        x: usize,
        keep: Vec<bool>,
    },
    PairDot {
        a: usize,
        b: usize,
    },
    PairwiseSqDist {
        x: usize,
        y: usize,
    },
    OuterFlatten {
        a: usize,
        b: usize,
    },
    StackScalars {
        xs: Vec<usize>,
    },
    BceMean {
        scores: usize,
        labels: Vec<f64>,
        eps: f64,
    },
    InfoNce {
        anchors: usize,
        pos: usize,
        negs: Rc<Vec<Vec<u32>>>,
        inv_temp: f64,
    },
}

struct Node {
    value: DenseMatrix,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
    adjacencies: Vec<Arc<SparseAdjacency>>,
    param_nodes: Vec<(usize, usize)>, // (param index, node index)
    visits: Vec<u32>,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            adjacencies: Vec::new(),
            param_nodes: Vec::new(),
            visits: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &DenseMatrix {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let v = &self.nodes[id.0].value;
        (v.rows(), v.cols())
    }

    /// Visit counts recorded by the most recent `backward`, one per node.
    pub fn last_backward_visits(&self) -> &[u32] {
        &self.visits
    }

    // Non-finite values are allowed to flow here; finiteness is enforced at
    // the loss/gradient boundaries where the offender can be named.
    fn push(&mut self, value: DenseMatrix, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: DenseMatrix) -> NodeId {
        self.push(value, Op::Const)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(DenseMatrix::scalar(value))
    }

    /// Plants a parameter as a leaf; repeated calls reuse the same node so
    /// adjoints accumulate on one buffer.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&(_, node)) = self.param_nodes.iter().find(|&&(p, _)| p == id.0) {
            return NodeId(node);
        }
        let node = self.push(store.value(id).clone(), Op::Param(id.0));
        self.param_nodes.push((id.0, node.0));
        node
    }

    pub fn spmm(&mut self, adj: &Arc<SparseAdjacency>, x: NodeId) -> Result<NodeId, Error> {
        if adj.n() != self.value(x).rows() {
            return Err(Error::shape(
                "spmm",
                format!(
                    "adjacency n={} vs matrix rows={}",
                    adj.n(),
                    self.value(x).rows()
                ),
            ));
        }
        let value = sparse::spmm(adj, self.value(x));
        let slot = self.adjacencies.len();
        self.adjacencies.push(Arc::clone(adj));
        Ok(self.push(value, Op::Spmm { adj: slot, x: x.0 }))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, Error> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(Error::shape("matmul", format!("{ar}x{ac} @ {br}x{bc}")));
        }
        let value = dense::matmul(self.value(a), self.value(b));
        Ok(self.push(value, Op::MatMul { a: a.0, b: b.0 }))
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).transpose();
        self.push(value, Op::Transpose { x: x.0 })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, Error> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let value = dense::add(self.value(a), self.value(b));
        Ok(self.push(value, Op::Add { a: a.0, b: b.0 }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, Error> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                "mul",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let value = dense::mul(self.value(a), self.value(b));
        Ok(self.push(value, Op::Mul { a: a.0, b: b.0 }))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, Error> {
        let (br, bc) = self.shape(bias);
        if br != 1 || bc != self.value(x).cols() {
            return Err(Error::shape(
                "add_bias",
                format!("bias {br}x{bc} for input {:?}", self.shape(x)),
            ));
        }
        let value = dense::add_bias(self.value(x), self.value(bias));
        Ok(self.push(
            value,
            Op::AddBias {
                x: x.0,
                bias: bias.0,
            },
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = dense::relu(self.value(x));
        self.push(value, Op::Relu { x: x.0 })
    }

    /// PReLU with a learnable scalar slope node (1x1).
    pub fn prelu(&mut self, x: NodeId, slope: NodeId) -> Result<NodeId, Error> {
        if self.shape(slope) != (1, 1) {
            return Err(Error::shape("prelu", "slope must be 1x1".to_string()));
        }
        let s = self.value(slope).item();
        let value = dense::prelu(self.value(x), s);
        Ok(self.push(
            value,
            Op::PRelu {
                x: x.0,
                slope: slope.0,
            },
        ))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = dense::sigmoid(self.value(x));
        self.push(value, Op::Sigmoid { x: x.0 })
    }

    /// Natural log of `max(x, floor)`.
    pub fn log(&mut self, x: NodeId, floor: f64) -> NodeId {
        let value = self.value(x).map(|v| v.max(floor).ln());
        self.push(value, Op::Log { x: x.0, floor })
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.value(x).map(|v| v + c);
        self.push(value, Op::AddScalar { x: x.0 })
    }

    pub fn recip(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| 1.0 / v);
        self.push(value, Op::Recip { x: x.0 })
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = dense::scale(self.value(x), c);
        self.push(value, Op::Scale { x: x.0, c })
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let value = DenseMatrix::scalar(self.value(x).sum());
        self.push(value, Op::SumAll { x: x.0 })
    }

    pub fn rowsum(&mut self, x: NodeId) -> NodeId {
        let value = dense::rowsum(self.value(x));
        self.push(value, Op::RowSum { x: x.0 })
    }

    /// Elementwise `num[i,j] / den[i,0]` with the denominator broadcast
    /// across each row.
    pub fn div_row_broadcast(&mut self, num: NodeId, den: NodeId) -> Result<NodeId, Error> {
        let (nr, _) = self.shape(num);
        if self.shape(den) != (nr, 1) {
            return Err(Error::shape(
                "div_row_broadcast",
                format!(
                    "denominator {:?} for numerator {:?}",
                    self.shape(den),
                    self.shape(num)
                ),
            ));
        }
        let num_v = self.value(num);
        let den_v = self.value(den);
        let mut value = num_v.clone();
        for r in 0..value.rows() {
            let d = den_v.get(r, 0);
            for v in value.row_mut(r) {
                *v /= d;
            }
        }
        Ok(self.push(
            value,
            Op::DivRowBroadcast {
                num: num.0,
                den: den.0,
            },
        ))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, Error> {
        if self.value(a).rows() != self.value(b).rows() {
            return Err(Error::shape(
                "concat",
                format!("{} vs {} rows", self.value(a).rows(), self.value(b).rows()),
            ));
        }
        let value = dense::concat_cols(self.value(a), self.value(b));
        Ok(self.push(value, Op::ConcatCols { a: a.0, b: b.0 }))
    }

    pub fn gather_rows(&mut self, x: NodeId, idx: &[u32]) -> Result<NodeId, Error> {
        let rows = self.value(x).rows();
        if let Some(&bad) = idx.iter().find(|&&i| i as usize >= rows) {
            return Err(Error::shape(
                "gather_rows",
                format!("row {bad} out of {rows}"),
            ));
        }
        let value = dense::gather_rows(self.value(x), idx);
        Ok(self.push(
            value,
            Op::GatherRows {
                x: x.0,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Zeroes whole rows where `keep` is false.
    pub fn mask_rows(&mut self, x: NodeId, keep: &[bool]) -> Result<NodeId, Error> {
        if keep.len() != self.value(x).rows() {
            return Err(Error::shape(
                "mask_rows",
                format!("{} flags for {} rows", keep.len(), self.value(x).rows()),
            ));
        }
        let mut value = self.value(x).clone();
        for (r, &k) in keep.iter().enumerate() {
            if !k {
                for v in value.row_mut(r) {
                    *v = 0.0;
                }
            }
        }
        Ok(self.push(
            value,
            Op::MaskRows {
                x: x.0,
                keep: keep.to_vec(),
            },
        ))
    }

    pub fn pair_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, Error> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                "pair_dot",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let value = dense::pair_dot(self.value(a), self.value(b));
        Ok(self.push(value, Op::PairDot { a: a.0, b: b.0 }))
    }

    pub fn pairwise_sqdist(&mut self, x: NodeId, y: NodeId) -> Result<NodeId, Error> {
        if self.value(x).cols() != self.value(y).cols() {
            return Err(Error::shape(
                "pairwise_sqdist",
                format!("{} vs {} cols", self.value(x).cols(), self.value(y).cols()),
            ));
        }
        let value = dense::pairwise_sqdist(self.value(x), self.value(y));
        Ok(self.push(value, Op::PairwiseSqDist { x: x.0, y: y.0 }))
    }

    pub fn outer_flatten(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, Error> {
        if self.value(b).rows() != 1 {
            return Err(Error::shape(
                "outer_flatten",
                "right side must be 1 row".to_string(),
            ));
        }
        let value = dense::outer_flatten(self.value(a), self.value(b));
        Ok(self.push(value, Op::OuterFlatten { a: a.0, b: b.0 }))
    }

    /// Stacks 1x1 nodes into an m x 1 column.
    pub fn stack_scalars(&mut self, xs: &[NodeId]) -> Result<NodeId, Error> {
        let mut data = Vec::with_capacity(xs.len());
        for &x in xs {
            if self.shape(x) != (1, 1) {
                return Err(Error::shape(
                    "stack_scalars",
                    "all inputs must be 1x1".to_string(),
                ));
            }
            data.push(self.value(x).item());
        }
        let value = DenseMatrix::from_vec(xs.len(), 1, data);
        Ok(self.push(
            value,
            Op::StackScalars {
                xs: xs.iter().map(|x| x.0).collect(),
            },
        ))
    }

    /// Mean binary cross-entropy over an m x 1 score column; scores are
    /// clamped into (eps, 1-eps) before the logs.
    pub fn bce_mean(&mut self, scores: NodeId, labels: &[f64], eps: f64) -> Result<NodeId, Error> {
        let (r, c) = self.shape(scores);
        if c != 1 || r != labels.len() {
            return Err(Error::shape(
                "bce_mean",
                format!("scores {r}x{c} vs {} labels", labels.len()),
            ));
        }
        if r == 0 {
            return Err(Error::shape("bce_mean", "empty batch".to_string()));
        }
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let s = self.value(scores).get(i, 0).clamp(eps, 1.0 - eps);
            total -= y * s.ln() + (1.0 - y) * (1.0 - s).ln();
        }
        let value = DenseMatrix::scalar(total / r as f64);
        Ok(self.push(
            value,
            Op::BceMean {
                scores: scores.0,
                labels: labels.to_vec(),
                eps,
            },
        ))
    }

    /// Softmax-contrast loss summed over anchors: each anchor is pulled
    /// toward its positive row and pushed from its negative rows (indices
    /// into the anchor matrix). Logits are `dot / temperature`, stabilized by
    /// subtracting the per-anchor maximum before exponentiation. Anchors with
    /// no negatives contribute exactly zero.
    pub fn info_nce(
        &mut self,
        anchors: NodeId,
        pos: NodeId,
        negs: Rc<Vec<Vec<u32>>>,
        temperature: f64,
    ) -> Result<NodeId, Error> {
        if self.shape(anchors) != self.shape(pos) {
            return Err(Error::shape(
                "info_nce",
                format!(
                    "anchors {:?} vs positives {:?}",
                    self.shape(anchors),
                    self.shape(pos)
                ),
            ));
        }
        if negs.len() != self.value(anchors).rows() {
            return Err(Error::shape(
                "info_nce",
                format!(
                    "{} negative sets for {} anchors",
                    negs.len(),
                    self.value(anchors).rows()
                ),
            ));
        }
        let inv_temp = 1.0 / temperature;
        let a = self.value(anchors);
        let p = self.value(pos);
        let mut total = 0.0;
        for u in 0..a.rows() {
            let au = a.row(u);
            let z0 = dot(au, p.row(u)) * inv_temp;
            let mut zmax = z0;
            let mut zs = Vec::with_capacity(negs[u].len());
            for &v in &negs[u] {
                let z = dot(au, a.row(v as usize)) * inv_temp;
                if z > zmax {
                    zmax = z;
                }
                zs.push(z);
            }
            let denom: f64 = (z0 - zmax).exp() + zs.iter().map(|z| (z - zmax).exp()).sum::<f64>();
            total += -(z0 - zmax) + denom.ln();
        }
        let value = DenseMatrix::scalar(total);
        Ok(self.push(
            value,
            Op::InfoNce {
                anchors: anchors.0,
                pos: pos.0,
                negs,
                inv_temp,
            },
        ))
    }

    /// Propagates adjoints from a scalar loss node back to every reachable
    /// node; returns gradients aligned with the parameter store (zero for
    /// parameters the loss does not depend on).
    pub fn backward(&mut self, loss: NodeId, store: &ParamStore) -> Result<Gradients, Error> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarLoss { rows: r, cols: c });
        }

        let n = self.nodes.len();
        let mut adj: Vec<Option<DenseMatrix>> = (0..n).map(|_| None).collect();
        adj[loss.0] = Some(DenseMatrix::scalar(1.0));
        self.visits = vec![0; n];

        for i in (0..n).rev() {
            self.visits[i] += 1;
            let g = match adj[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut adj);
            adj[i] = Some(g);
        }

        let mut by_param: Vec<DenseMatrix> = store
            .iter()
            .map(|(_, e)| DenseMatrix::zeros(e.value.rows(), e.value.cols()))
            .collect();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(pid) = node.op {
                if let Some(g) = &adj[i] {
                    by_param[pid] = g.clone();
                }
            }
        }
        Ok(Gradients { by_param })
    }

    fn propagate(&self, i: usize, g: &DenseMatrix, adj: &mut [Option<DenseMatrix>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Const | Op::Param(_) => {}
            Op::Spmm { adj: slot, x } => {
                // A_hat is symmetric, so A^T g = A g.
                let gx = sparse::spmm(&self.adjacencies[*slot], g);
                accumulate(adj, *x, &gx, &self.nodes);
            }
            Op::MatMul { a, b } => {
                let bt = self.nodes[*b].value.transpose();
                let ga = dense::matmul(g, &bt);
                accumulate(adj, *a, &ga, &self.nodes);
                let at = self.nodes[*a].value.transpose();
                let gb = dense::matmul(&at, g);
                accumulate(adj, *b, &gb, &self.nodes);
            }
            Op::Transpose { x } => {
                accumulate(adj, *x, &g.transpose(), &self.nodes);
            }
            Op::Add { a, b } => {
                accumulate(adj, *a, g, &self.nodes);
                accumulate(adj, *b, g, &self.nodes);
            }
            Op::Mul { a, b } => {
                let ga = dense::mul(g, &self.nodes[*b].value);
                accumulate(adj, *a, &ga, &self.nodes);
                let gb = dense::mul(g, &self.nodes[*a].value);
                accumulate(adj, *b, &gb, &self.nodes);
            }
            Op::AddBias { x, bias } => {
                accumulate(adj, *x, g, &self.nodes);
                let mut gb = DenseMatrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, &v) in gb.row_mut(0).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(adj, *bias, &gb, &self.nodes);
            }
            Op::Relu { x } => {
                let xv = &self.nodes[*x].value;
                let gx = DenseMatrix::from_vec(
                    g.rows(),
                    g.cols(),
                    g.values()
                        .iter()
                        .zip(xv.values())
                        .map(|(&gv, &v)| if v > 0.0 { gv } else { 0.0 })
                        .collect(),
                );
                accumulate(adj, *x, &gx, &self.nodes);
            }
            Op::PRelu { x, slope } => {
                let xv = &self.nodes[*x].value;
                let s = self.nodes[*slope].value.item();
                let mut gs = 0.0;
                let gx = DenseMatrix::from_vec(
                    g.rows(),
                    g.cols(),
                    g.values()
                        .iter()
                        .zip(xv.values())
                        .map(|(&gv, &v)| {
                            if v > 0.0 {
                                gv
                            } else {
                                gs += gv * v;
                                gv * s
                            }
                        })
                        .collect(),
                );
                accumulate(adj, *x, &gx, &self.nodes);
                accumulate(adj, *slope, &DenseMatrix::scalar(gs), &self.nodes);
            }
            Op::Sigmoid { x } => {
                let out = &node.value;
                let gx = DenseMatrix::from_vec(
                    g.rows(),
                    g.cols(),
                    g.values()
                        .iter()
                        .zip(out.values())
                        .map(|(&gv, &s)| gv * s * (1.0 - s))
                        .collect(),
                );
                accumulate(adj, *x, &gx, &self.nodes);
            }
            Op::Log { x, floor } => {
                let xv = &self.nodes[*x].value;
                let gx = DenseMatrix::from_vec(
                    g.rows(),
                    g.cols(),
                    g.values()
                        .iter()
                        .zip(xv.values())
                        .map(|(&gv, &v)| if v > *floor { gv / v } else { 0.0 })
                        .collect(),
                );
                accumulate(adj, *x, &gx, &self.nodes);
            }
            Op::AddScalar { x } => {
                accumulate(adj, *x, g, &self.nodes);
            }
            Op::Recip { x } => {
                let out = &node.value;
                let gx = DenseMatrix::from_vec(
                    g.rows(),
                    g.cols(),
                    g.values()
                        .iter()
                        .zip(out.values())
                        .map(|(&gv, &o)| -gv * o * o)
                        .collect(),
                );
                accumulate(adj, *x, &gx, &self.nodes);
            }
            Op::Scale { x, c } => {
                let gx = dense::scale(g, *c);
                accumulate(adj, *x, &gx, &self.nodes);
            }
            Op::SumAll { x } => {
                let xv = &self.nodes[*x].value;
                let gv = g.item();
                let gx = DenseMatrix::from_vec(xv.rows(), xv.cols(), vec![gv; xv.len()]);
                accumulate(adj, *x, &gx, &self.nodes);
            }
            Op::RowSum { x } => {
                let xv = &self.nodes[*x].value;
                let mut gx = DenseMatrix::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    let gv = g.get(r, 0);
                    for o in gx.row_mut(r) {
                        *o = gv;
                    }
                }
                accumulate(adj, *x, &gx, &self.nodes);
            }
            Op::DivRowBroadcast { num, den } => {
                let den_v = &self.nodes[*den].value;
                let out = &node.value;
                let mut gnum = DenseMatrix::zeros(g.rows(), g.cols());
                let mut gden = DenseMatrix::zeros(g.rows(), 1);
                for r in 0..g.rows() {
                    let d = den_v.get(r, 0);
                    let mut acc = 0.0;
                    for c in 0..g.cols() {
                        let gv = g.get(r, c);
                        gnum.set(r, c, gv / d);
                        acc -= gv * out.get(r, c) / d;
                    }
                    gden.set(r, 0, acc);
                }
                accumulate(adj, *num, &gnum, &self.nodes);
                accumulate(adj, *den, &gden, &self.nodes);
            }
            Op::ConcatCols { a, b } => {
                let ac = self.nodes[*a].value.cols();
                let bc = self.nodes[*b].value.cols();
                let mut ga = DenseMatrix::zeros(g.rows(), ac);
                let mut gb = DenseMatrix::zeros(g.rows(), bc);
                for r in 0..g.rows() {
                    ga.row_mut(r).copy_from_slice(&g.row(r)[..ac]);
                    gb.row_mut(r).copy_from_slice(&g.row(r)[ac..]);
                }
                accumulate(adj, *a, &ga, &self.nodes);
                accumulate(adj, *b, &gb, &self.nodes);
            }
            Op::GatherRows { x, idx } => {
                let xv = &self.nodes[*x].value;
                let mut gx = DenseMatrix::zeros(xv.rows(), xv.cols());
                for (r, &i) in idx.iter().enumerate() {
                    for (o, &v) in gx.row_mut(i as usize).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(adj, *x, &gx, &self.nodes);
            }
            Op::MaskRows { x, keep } => {
                let mut gx = g.clone();
                for (r, &k) in keep.iter().enumerate() {
                    if !k {
                        for v in gx.row_mut(r) {
                            *v = 0.0;
                        }
                    }
                }
                accumulate(adj, *x, &gx, &self.nodes);
            }
            Op::PairDot { a, b } => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                let mut ga = DenseMatrix::zeros(av.rows(), av.cols());
                let mut gb = DenseMatrix::zeros(bv.rows(), bv.cols());
                for r in 0..av.rows() {
                    let gv = g.get(r, 0);
                    for c in 0..av.cols() {
                        ga.set(r, c, gv * bv.get(r, c));
                        gb.set(r, c, gv * av.get(r, c));
                    }
                }
                accumulate(adj, *a, &ga, &self.nodes);
                accumulate(adj, *b, &gb, &self.nodes);
            }
            Op::PairwiseSqDist { x, y } => {
                let xv = &self.nodes[*x].value;
                let yv = &self.nodes[*y].value;
                let mut gx = DenseMatrix::zeros(xv.rows(), xv.cols());
                let mut gy = DenseMatrix::zeros(yv.rows(), yv.cols());
                for i in 0..xv.rows() {
                    for j in 0..yv.rows() {
                        let gv = g.get(i, j);
                        if gv == 0.0 {
                            continue;
                        }
                        for c in 0..xv.cols() {
                            let diff = xv.get(i, c) - yv.get(j, c);
                            gx.set(i, c, gx.get(i, c) + gv * 2.0 * diff);
                            gy.set(j, c, gy.get(j, c) - gv * 2.0 * diff);
                        }
                    }
                }
                accumulate(adj, *x, &gx, &self.nodes);
                accumulate(adj, *y, &gy, &self.nodes);
            }
            Op::OuterFlatten { a, b } => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                let db = bv.cols();
                let mut ga = DenseMatrix::zeros(av.rows(), av.cols());
                let mut gb = DenseMatrix::zeros(1, db);
                for i in 0..av.rows() {
                    let grow = g.row(i);
                    for r in 0..av.cols() {
                        let mut s = 0.0;
                        for c in 0..db {
                            let gv = grow[r * db + c];
                            s += gv * bv.get(0, c);
                            gb.set(0, c, gb.get(0, c) + gv * av.get(i, r));
                        }
                        ga.set(i, r, s);
                    }
                }
                accumulate(adj, *a, &ga, &self.nodes);
                accumulate(adj, *b, &gb, &self.nodes);
            }
            Op::StackScalars { xs } => {
                for (r, &x) in xs.iter().enumerate() {
                    accumulate(adj, x, &DenseMatrix::scalar(g.get(r, 0)), &self.nodes);
                }
            }
            Op::BceMean {
                scores,
                labels,
                eps,
            } => {
                let sv = &self.nodes[*scores].value;
                let m = labels.len() as f64;
                let gv = g.item();
                let mut gs = DenseMatrix::zeros(sv.rows(), 1);
                for (i, &y) in labels.iter().enumerate() {
                    let raw = sv.get(i, 0);
                    if raw > *eps && raw < 1.0 - *eps {
                        gs.set(i, 0, gv * (-y / raw + (1.0 - y) / (1.0 - raw)) / m);
                    }
                }
                accumulate(adj, *scores, &gs, &self.nodes);
            }
            Op::InfoNce {
                anchors,
                pos,
                negs,
                inv_temp,
            } => {
                let av = &self.nodes[*anchors].value;
                let pv = &self.nodes[*pos].value;
                let gv = g.item();
                let mut ga = DenseMatrix::zeros(av.rows(), av.cols());
                let mut gp = DenseMatrix::zeros(pv.rows(), pv.cols());
                for u in 0..av.rows() {
                    let au = av.row(u);
                    let z0 = dot(au, pv.row(u)) * inv_temp;
                    let mut zmax = z0;
                    let mut zs = Vec::with_capacity(negs[u].len());
                    for &v in &negs[u] {
                        let z = dot(au, av.row(v as usize)) * inv_temp;
                        if z > zmax {
                            zmax = z;
                        }
                        zs.push(z);
                    }
                    let e0 = (z0 - zmax).exp();
                    let denom: f64 = e0 + zs.iter().map(|z| (z - zmax).exp()).sum::<f64>();
                    let p0 = e0 / denom;
                    // d/dz0 = p0 - 1, d/dzj = pj
                    let coeff0 = gv * (p0 - 1.0) * inv_temp;
                    for c in 0..av.cols() {
                        ga.set(u, c, ga.get(u, c) + coeff0 * pv.get(u, c));
                        gp.set(u, c, gp.get(u, c) + coeff0 * av.get(u, c));
                    }
                    for (k, &v) in negs[u].iter().enumerate() {
                        let pj = (zs[k] - zmax).exp() / denom;
                        let coeff = gv * pj * inv_temp;
                        let v = v as usize;
                        for c in 0..av.cols() {
                            ga.set(u, c, ga.get(u, c) + coeff * av.get(v, c));
                            ga.set(v, c, ga.get(v, c) + coeff * av.get(u, c));
                        }
                    }
                }
                accumulate(adj, *anchors, &ga, &self.nodes);
                accumulate(adj, *pos, &gp, &self.nodes);
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn accumulate(adj: &mut [Option<DenseMatrix>], target: usize, g: &DenseMatrix, nodes: &[Node]) {
    match &mut adj[target] {
        Some(buf) => {
            debug_assert_eq!((buf.rows(), buf.cols()), (g.rows(), g.cols()));
            for (o, &v) in buf.values_mut().iter_mut().zip(g.values()) {
                *o += v;
            }
        }
        None => {
            let v = &nodes[target].value;
            debug_assert_eq!((v.rows(), v.cols()), (g.rows(), g.cols()));
            adj[target] = Some(g.clone());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::gradcheck::grad_check;
    use crate::numcore::rng::Rng;
    use crate::numcore::sparse::normalize_adjacency;

    fn rand_mat(rows: usize, cols: usize, rng: &mut Rng) -> DenseMatrix {
        DenseMatrix::random_normal(rows, cols, 1.0, rng)
    }

    #[test]
    fn backward_sum_of_squares() {
        let mut store = ParamStore::new();
        let x = store.register("x", 0, DenseMatrix::from_vec(1, 2, vec![1.0, 2.0]));
        let mut tape = Tape::new();
        let xn = tape.param(&store, x);
        let sq = tape.mul(xn, xn).unwrap();
        let loss = tape.sum_all(sq);
        let grads = tape.backward(loss, &store).unwrap();
        assert_eq!(grads.get(x).values(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_constant_loss_zeroes_params() {
        let mut store = ParamStore::new();
        let x = store.register("x", 0, DenseMatrix::from_vec(1, 2, vec![1.0, 2.0]));
        let mut tape = Tape::new();
        let _ = tape.param(&store, x);
        let loss = tape.scalar(3.5);
        let grads = tape.backward(loss, &store).unwrap();
        assert_eq!(grads.get(x).values(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_sigmoid_times_param() {
        let mut store = ParamStore::new();
        let c = store.register("c", 0, DenseMatrix::scalar(2.0));
        let mut tape = Tape::new();
        let zero = tape.scalar(0.0);
        let s = tape.sigmoid(zero);
        let cn = tape.param(&store, c);
        let loss = tape.mul(s, cn).unwrap();
        let grads = tape.backward(loss, &store).unwrap();
        assert_eq!(grads.get(c).item(), 0.5);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut store = ParamStore::new();
        let x = store.register("x", 0, DenseMatrix::from_vec(1, 2, vec![1.0, 2.0]));
        let mut tape = Tape::new();
        let xn = tape.param(&store, x);
        let err = tape.backward(xn, &store).unwrap_err();
        assert!(matches!(err, Error::NonScalarLoss { .. }));
    }

    #[test]
    fn backward_visits_each_node_once() {
        let mut store = ParamStore::new();
        let x = store.register(
            "x",
            0,
            DenseMatrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]),
        );
        let mut tape = Tape::new();
        let xn = tape.param(&store, x);
        let r = tape.relu(xn);
        let m = tape.mul(r, r).unwrap();
        let loss = tape.sum_all(m);
        // An extra node not on the loss path.
        let _ = tape.scalar(9.0);
        tape.backward(loss, &store).unwrap();
        assert!(tape.last_backward_visits().iter().all(|&v| v == 1));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut tape = Tape::new();
        let a = tape.constant(DenseMatrix::zeros(2, 3));
        let b = tape.constant(DenseMatrix::zeros(2, 3));
        assert!(tape.matmul(a, b).is_err());
        let c = tape.constant(DenseMatrix::zeros(3, 1));
        assert!(tape.concat_cols(a, c).is_err());
    }

    // Finite-difference checks for every differentiable primitive, per the
    // module contract: relative error < 1e-4 at eps = 1e-6.
    fn check<F>(builder: F, point: &[DenseMatrix])
    where
        F: FnMut(&mut Tape, &[NodeId]) -> Result<NodeId, Error>,
    {
        let err = grad_check(builder, point, 1e-6).unwrap();
        assert!(err < 1e-4, "finite-difference mismatch: {err}");
    }

    #[test]
    fn fd_matmul_add_mul() {
        let mut rng = Rng::from_seed(100);
        let a = rand_mat(3, 4, &mut rng);
        let b = rand_mat(4, 2, &mut rng);
        check(
            |t, p| {
                let m = t.matmul(p[0], p[1])?;
                let s = t.mul(m, m)?;
                Ok(t.sum_all(s))
            },
            &[a.clone(), b],
        );
        let c = rand_mat(3, 4, &mut rng);
        check(
            |t, p| {
                let s = t.add(p[0], p[1])?;
                Ok(t.sum_all(s))
            },
            &[a, c],
        );
    }

    #[test]
    fn fd_spmm() {
        let mut rng = Rng::from_seed(101);
        let adj = Arc::new(normalize_adjacency(&[(0, 1), (1, 2), (0, 3)], 4).unwrap());
        let h = rand_mat(4, 3, &mut rng);
        check(
            move |t, p| {
                let y = t.spmm(&adj, p[0])?;
                let s = t.mul(y, y)?;
                Ok(t.sum_all(s))
            },
            &[h],
        );
    }

    #[test]
    fn fd_activations() {
        let mut rng = Rng::from_seed(102);
        let x = rand_mat(3, 3, &mut rng);
        let slope = DenseMatrix::scalar(0.25);
        check(
            |t, p| {
                let r = t.relu(p[0]);
                Ok(t.sum_all(r))
            },
            std::slice::from_ref(&x),
        );
        check(
            |t, p| {
                let r = t.prelu(p[0], p[1])?;
                let sq = t.mul(r, r)?;
                Ok(t.sum_all(sq))
            },
            &[x.clone(), slope],
        );
        check(
            |t, p| {
                let s = t.sigmoid(p[0]);
                Ok(t.sum_all(s))
            },
            &[x],
        );
    }

    #[test]
    fn fd_log_recip_scale_addscalar() {
        let mut rng = Rng::from_seed(103);
        let x = rand_mat(2, 3, &mut rng).map(|v| v.abs() + 0.5);
        check(
            |t, p| {
                let l = t.log(p[0], 1e-12);
                Ok(t.sum_all(l))
            },
            std::slice::from_ref(&x),
        );
        check(
            |t, p| {
                let a = t.add_scalar(p[0], 1.0);
                let r = t.recip(a);
                let s = t.scale(r, -2.5);
                Ok(t.sum_all(s))
            },
            &[x],
        );
    }

    #[test]
    fn fd_row_ops_and_concat() {
        let mut rng = Rng::from_seed(104);
        let x = rand_mat(3, 4, &mut rng).map(|v| v.abs() + 0.5);
        let y = rand_mat(3, 2, &mut rng);
        check(
            |t, p| {
                let rs = t.rowsum(p[0]);
                let q = t.div_row_broadcast(p[0], rs)?;
                let sq = t.mul(q, q)?;
                Ok(t.sum_all(sq))
            },
            std::slice::from_ref(&x),
        );
        check(
            |t, p| {
                let c = t.concat_cols(p[0], p[1])?;
                let sq = t.mul(c, c)?;
                Ok(t.sum_all(sq))
            },
            &[x.clone(), y],
        );
        check(
            |t, p| {
                let tr = t.transpose(p[0]);
                let sq = t.mul(tr, tr)?;
                Ok(t.sum_all(sq))
            },
            &[x],
        );
    }

    #[test]
    fn fd_gather_mask_pair_ops() {
        let mut rng = Rng::from_seed(105);
        let x = rand_mat(4, 3, &mut rng);
        let y = rand_mat(4, 3, &mut rng);
        let centers = rand_mat(2, 3, &mut rng);
        check(
            |t, p| {
                let gth = t.gather_rows(p[0], &[0, 2, 2, 3])?;
                let sq = t.mul(gth, gth)?;
                Ok(t.sum_all(sq))
            },
            std::slice::from_ref(&x),
        );
        check(
            |t, p| {
                let m = t.mask_rows(p[0], &[true, false, true, false])?;
                let sq = t.mul(m, m)?;
                Ok(t.sum_all(sq))
            },
            std::slice::from_ref(&x),
        );
        check(
            |t, p| {
                let d = t.pair_dot(p[0], p[1])?;
                let sq = t.mul(d, d)?;
                Ok(t.sum_all(sq))
            },
            &[x.clone(), y],
        );
        check(
            |t, p| {
                let d = t.pairwise_sqdist(p[0], p[1])?;
                let sq = t.mul(d, d)?;
                Ok(t.sum_all(sq))
            },
            &[x, centers],
        );
    }

    #[test]
    fn fd_outer_flatten_stack_bias() {
        let mut rng = Rng::from_seed(106);
        let a = rand_mat(3, 2, &mut rng);
        let b = rand_mat(1, 4, &mut rng);
        let bias = rand_mat(1, 8, &mut rng);
        check(
            |t, p| {
                let o = t.outer_flatten(p[0], p[1])?;
                let wb = t.add_bias(o, p[2])?;
                let sq = t.mul(wb, wb)?;
                Ok(t.sum_all(sq))
            },
            &[a, b, bias],
        );
        let s1 = rand_mat(1, 1, &mut rng);
        let s2 = rand_mat(1, 1, &mut rng);
        check(
            |t, p| {
                let st = t.stack_scalars(&[p[0], p[1], p[0]])?;
                let sq = t.mul(st, st)?;
                Ok(t.sum_all(sq))
            },
            &[s1, s2],
        );
    }

    #[test]
    fn fd_bce_mean() {
        // Raw scores inside the clamp window so the gradient is live.
        let scores = DenseMatrix::from_vec(3, 1, vec![0.3, 0.6, 0.9]);
        check(|t, p| t.bce_mean(p[0], &[1.0, 0.0, 1.0], 1e-7), &[scores]);
    }

    #[test]
    fn fd_info_nce() {
        let mut rng = Rng::from_seed(107);
        let anchors = rand_mat(5, 3, &mut rng);
        let pos = rand_mat(5, 3, &mut rng);
        let negs = Rc::new(vec![
            vec![1, 2],
            vec![0, 3, 4],
            vec![],
            vec![0],
            vec![1, 2, 3],
        ]);
        check(
            move |t, p| t.info_nce(p[0], p[1], Rc::clone(&negs), 1.0),
            &[anchors.clone(), pos.clone()],
        );
        // Non-unit temperature path.
        let negs2 = Rc::new(vec![vec![1], vec![0], vec![0, 1], vec![], vec![2]]);
        check(
            move |t, p| t.info_nce(p[0], p[1], Rc::clone(&negs2), 0.5),
            &[anchors, pos],
        );
    }

    #[test]
    fn info_nce_empty_negatives_is_zero() {
        let mut tape = Tape::new();
        let a = tape.constant(DenseMatrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let p = tape.constant(DenseMatrix::from_vec(2, 2, vec![0.5, 0.5, 0.5, 0.5]));
        let loss = tape
            .info_nce(a, p, Rc::new(vec![vec![], vec![]]), 1.0)
            .unwrap();
        assert_eq!(tape.value(loss).item(), 0.0);
    }

    #[test]
    fn info_nce_matched_scores_give_ln2() {
        // s+ = 0 and one negative with s = 0: -log(1/2) = ln 2.
        let mut tape = Tape::new();
        let a = tape.constant(DenseMatrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let p = tape.constant(DenseMatrix::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]));
        let loss = tape
            .info_nce(a, p, Rc::new(vec![vec![1], vec![]]), 1.0)
            .unwrap();
        assert!((tape.value(loss).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }
}
