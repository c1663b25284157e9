//! Symmetrically normalized sparse adjacency in CSR form.
//!
//! Stores A_hat = D^{-1/2} (A + I) D^{-1/2} for an undirected graph, where D
//! is the degree matrix including the self loop. Entry (i, j) of the
//! normalized matrix is 1 / sqrt(d_i * d_j).

use super::dense::DenseMatrix;
use crate::error::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseAdjacency {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    weights: Vec<f64>,
}

/// Builds the normalized adjacency from undirected node pairs. Self loops are
/// added with weight 1 before normalization; duplicate pairs collapse.
pub fn normalize_adjacency(edges: &[(u32, u32)], n: usize) -> Result<SparseAdjacency, Error> {
    for &(a, b) in edges {
        if a as usize >= n || b as usize >= n {
            return Err(Error::IndexOutOfRange { pair: (a, b), n });
        }
    }

    // Neighbor sets per node, deduplicated, always including the self loop.
    let mut neighbors: Vec<Vec<u32>> = (0..n).map(|i| vec![i as u32]).collect();
    for &(a, b) in edges {
        if a != b {
            neighbors[a as usize].push(b);
            neighbors[b as usize].push(a);
        }
    }
    for list in &mut neighbors {
        list.sort_unstable();
        list.dedup();
    }

    let degree: Vec<f64> = neighbors.iter().map(|l| l.len() as f64).collect();

    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut weights = Vec::new();
    row_ptr.push(0);
    for (i, list) in neighbors.iter().enumerate() {
        for &j in list {
            col_idx.push(j);
            weights.push(1.0 / (degree[i] * degree[j as usize]).sqrt());
        }
        row_ptr.push(col_idx.len());
    }

    Ok(SparseAdjacency {
        n,
        row_ptr,
        col_idx,
        weights,
    })
}

impl SparseAdjacency {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.weights.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (u32, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.weights[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[span.clone()].binary_search(&(j as u32)) {
            Ok(k) => self.weights[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, w) in self.row(i) {
                m.set(i, j as usize, w);
            }
        }
        m
    }
}

/// Sparse-dense product `A_hat @ h`. Row-parallel above a size threshold; the
/// per-row accumulation order is fixed, so results are thread-count invariant.
pub fn spmm(a: &SparseAdjacency, h: &DenseMatrix) -> DenseMatrix {
    assert_eq!(
        a.n,
        h.rows(),
        "spmm shape mismatch: adjacency {} vs rows {}",
        a.n,
        h.rows()
    );
    let d = h.cols();
    let mut out = DenseMatrix::zeros(a.n, d);
    if a.n == 0 || d == 0 {
        return out;
    }
    let body = |r: usize, out_row: &mut [f64]| {
        for (j, w) in a.row(r) {
            for (o, &hv) in out_row.iter_mut().zip(h.row(j as usize)) {
                *o += w * hv;
            }
        }
    };
    if a.nnz() * d >= 1 << 20 {
        use rayon::prelude::*;
        out.values_mut()
            .par_chunks_mut(d)
            .enumerate()
            .for_each(|(r, row)| body(r, row));
    } else {
        for (r, row) in out.values_mut().chunks_mut(d).enumerate() {
            body(r, row);
        }
    }
    out
}
