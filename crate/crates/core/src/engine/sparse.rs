use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;

use crate::graph::Graph;

/// Compressed sparse row matrix of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from row-major triplets. Duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|a| (a.0, a.1));
        let mut indptr = vec![0; nrows + 1];
        let mut indices: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) outside {nrows}x{ncols}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        CsrMatrix { nrows, ncols, indptr, indices, values }
    }

    /// Nonzero pattern of a dense matrix.
    pub fn from_dense(x: &Array2<f64>) -> Self {
        let mut trip = Vec::new();
        for ((i, j), &v) in x.indexed_iter() {
            if v != 0.0 {
                trip.push((i, j, v));
            }
        }
        Self::from_triplets(x.nrows(), x.ncols(), trip)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut trip = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                trip.push((j, i, v));
            }
        }
        CsrMatrix::from_triplets(self.ncols, self.nrows, trip)
    }

    /// `self * rhs`, accumulating each output row in column-index order.
    pub fn matmul(&self, rhs: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.ncols, rhs.nrows(), "sparse matmul inner dimensions differ");
        let mut out = Array2::zeros((self.nrows, rhs.ncols()));
        for i in 0..self.nrows {
            let mut row = out.row_mut(i);
            for (j, v) in self.row(i) {
                row.scaled_add(v, &rhs.row(j));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.nrows, self.ncols));
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                out[[i, j]] += v;
            }
        }
        out
    }

    /// Inverted dropout on the stored entries.
    pub fn dropout(&self, p: f64, rng: &mut impl Rng) -> CsrMatrix {
        let scale = 1.0 / (1.0 - p);
        let values = self.values.iter().map(|&v| if rng.gen::<f64>() < p { 0.0 } else { v * scale }).collect();
        CsrMatrix { values, ..self.clone() }
    }
}

/// A constant sparse operand together with its transpose for the backward pass.
#[derive(Debug, Clone)]
pub struct SparseConst {
    pub forward: Rc<CsrMatrix>,
    pub backward: Rc<CsrMatrix>,
}

impl SparseConst {
    pub fn new(m: CsrMatrix) -> Self {
        let t = m.transpose();
        SparseConst { forward: Rc::new(m), backward: Rc::new(t) }
    }

    /// For symmetric matrices the transpose is the matrix itself.
    pub fn symmetric(m: CsrMatrix) -> Self {
        let m = Rc::new(m);
        SparseConst { forward: m.clone(), backward: m }
    }

    pub fn nrows(&self) -> usize {
        self.forward.nrows()
    }
}

/// `D^-1/2 (A + I) D^-1/2` with `D` the degree matrix of `A + I`.
pub fn gcn_normalized(g: &Graph) -> CsrMatrix {
    let n = g.num_nodes();
    let deg: Vec<f64> = (0..n).map(|v| (g.degree(v) + 1) as f64).collect();
    let w = |u: usize, v: usize| 1.0 / (deg[u] * deg[v]).sqrt();
    let mut trip = Vec::with_capacity(n + 2 * g.num_edges());
    for u in 0..n {
        // Self-loop slots into ascending neighbor order.
        let mut placed = false;
        for &v in g.neighbors(u) {
            if !placed && v > u {
                trip.push((u, u, 1.0 / deg[u]));
                placed = true;
            }
            trip.push((u, v, w(u, v)));
        }
        if !placed {
            trip.push((u, u, 1.0 / deg[u]));
        }
    }
    CsrMatrix::from_triplets(n, n, trip)
}

/// Row-normalized adjacency without self-loops: row `i` averages the
/// neighbors of `i`. Isolated nodes get an empty row.
pub fn mean_aggregator(g: &Graph) -> CsrMatrix {
    let n = g.num_nodes();
    let mut trip = Vec::with_capacity(2 * g.num_edges());
    for u in 0..n {
        let d = g.degree(u) as f64;
        for &v in g.neighbors(u) {
            trip.push((u, v, 1.0 / d));
        }
    }
    CsrMatrix::from_triplets(n, n, trip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matmul_and_transpose_agree_with_dense() {
        let m = CsrMatrix::from_triplets(2, 3, vec![(0, 2, 2.0), (1, 0, -1.0), (0, 0, 1.0), (0, 2, 1.0)]);
        assert_eq!(m.to_dense(), array![[1.0, 0.0, 3.0], [-1.0, 0.0, 0.0]]);
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(m.matmul(&x), m.to_dense().dot(&x));
        assert_eq!(m.transpose().to_dense(), m.to_dense().t().to_owned());
    }

    #[test]
    fn gcn_norm_two_nodes() {
        let g = crate::graph::tests::plain(2, &[(0, 1)]);
        assert_eq!(gcn_normalized(&g).to_dense(), array![[0.5, 0.5], [0.5, 0.5]]);
        let lone = crate::graph::tests::plain(1, &[]);
        assert_eq!(gcn_normalized(&lone).to_dense(), array![[1.0]]);
    }
}
