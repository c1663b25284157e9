//! Row-major dense `f64` matrices and the raw kernels the tape ops share.

use super::rng::Rng;
use crate::error::Error;

/// Dense matrix, row-major, double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "value length must equal rows*cols");
        DenseMatrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        DenseMatrix {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn scalar(value: f64) -> Self {
        DenseMatrix::from_vec(1, 1, vec![value])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Entries drawn i.i.d. from N(0, std^2).
    pub fn random_normal(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.next_normal() * std).collect();
        DenseMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Scalar contents of a 1x1 matrix.
    pub fn item(&self) -> f64 {
        assert_eq!(
            (self.rows, self.cols),
            (1, 1),
            "item() requires a 1x1 matrix"
        );
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn assert_finite(&self, what: &str) -> Result<(), Error> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// `a @ b` for conforming shapes. Row-parallel above a size threshold with a
/// fixed per-row accumulation order, so results do not depend on thread count.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!(
        a.cols, b.rows,
        "matmul shape mismatch: {}x{} @ {}x{}",
        a.rows, a.cols, b.rows, b.cols
    );
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = DenseMatrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    let body = |r: usize, out_row: &mut [f64]| {
        let a_row = &a.data[r * k..(r + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    };
    if m * k * n >= 1 << 20 {
        use rayon::prelude::*;
        out.data
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(r, row)| body(r, row));
    } else {
        for (r, row) in out.data.chunks_mut(n).enumerate() {
            body(r, row);
        }
    }
    out
}

pub fn add(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!((a.rows, a.cols), (b.rows, b.cols), "add shape mismatch");
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    DenseMatrix {
        rows: a.rows,
        cols: a.cols,
        data,
    }
}

pub fn mul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!((a.rows, a.cols), (b.rows, b.cols), "mul shape mismatch");
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    DenseMatrix {
        rows: a.rows,
        cols: a.cols,
        data,
    }
}

pub fn scale(a: &DenseMatrix, c: f64) -> DenseMatrix {
    a.map(|v| v * c)
}

/// Adds a `1 x k` bias row to every row of `x`.
pub fn add_bias(x: &DenseMatrix, bias: &DenseMatrix) -> DenseMatrix {
    assert_eq!(bias.rows, 1, "bias must be a single row");
    assert_eq!(x.cols, bias.cols, "bias width mismatch");
    let mut out = x.clone();
    for r in 0..out.rows {
        for (o, &b) in out.row_mut(r).iter_mut().zip(&bias.data) {
            *o += b;
        }
    }
    out
}

pub fn relu(x: &DenseMatrix) -> DenseMatrix {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn prelu(x: &DenseMatrix, slope: f64) -> DenseMatrix {
    x.map(|v| if v > 0.0 { v } else { slope * v })
}

pub fn sigmoid_scalar(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn sigmoid(x: &DenseMatrix) -> DenseMatrix {
    x.map(sigmoid_scalar)
}

/// Column-wise concatenation of two matrices with equal row counts.
pub fn concat_cols(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!(a.rows, b.rows, "concat row mismatch");
    let cols = a.cols + b.cols;
    let mut out = DenseMatrix::zeros(a.rows, cols);
    for r in 0..a.rows {
        out.data[r * cols..r * cols + a.cols].copy_from_slice(a.row(r));
        out.data[r * cols + a.cols..(r + 1) * cols].copy_from_slice(b.row(r));
    }
    out
}

/// `m x 1` column of per-row sums.
pub fn rowsum(x: &DenseMatrix) -> DenseMatrix {
    let data = (0..x.rows).map(|r| x.row(r).iter().sum()).collect();
    DenseMatrix {
        rows: x.rows,
        cols: 1,
        data,
    }
}

/// Per-row dot products of two equally shaped matrices, as an `m x 1` column.
pub fn pair_dot(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!(
        (a.rows, a.cols),
        (b.rows, b.cols),
        "pair_dot shape mismatch"
    );
    let data = (0..a.rows)
        .map(|r| a.row(r).iter().zip(b.row(r)).map(|(x, y)| x * y).sum())
        .collect();
    DenseMatrix {
        rows: a.rows,
        cols: 1,
        data,
    }
}

/// Squared Euclidean distances between rows of `x` (m x d) and rows of
/// `y` (c x d), producing an `m x c` matrix.
pub fn pairwise_sqdist(x: &DenseMatrix, y: &DenseMatrix) -> DenseMatrix {
    assert_eq!(x.cols, y.cols, "pairwise_sqdist dim mismatch");
    let mut out = DenseMatrix::zeros(x.rows, y.rows);
    for i in 0..x.rows {
        let xi = x.row(i);
        for j in 0..y.rows {
            let yj = y.row(j);
            let mut s = 0.0;
            for (a, b) in xi.iter().zip(yj) {
                let d = a - b;
                s += d * d;
            }
            out.data[i * y.rows + j] = s;
        }
    }
    out
}

/// Rows of `x` selected by index, in the given order.
pub fn gather_rows(x: &DenseMatrix, idx: &[u32]) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(idx.len(), x.cols);
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(x.row(i as usize));
    }
    out
}

/// Flattened outer products: row `i` of the result is `vec(a_i (x) b)` where
/// `b` is a single row; entry `(i, r*d + c) = a[i,r] * b[c]`.
pub fn outer_flatten(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!(b.rows, 1, "outer_flatten expects a single row on the right");
    let d_a = a.cols;
    let d_b = b.cols;
    let mut out = DenseMatrix::zeros(a.rows, d_a * d_b);
    for i in 0..a.rows {
        let ai = a.row(i);
        let orow = out.row_mut(i);
        for (r, &av) in ai.iter().enumerate() {
            for (c, &bv) in b.data.iter().enumerate() {
                orow[r * d_b + c] = av * bv;
            }
        }
    }
    out
}
