//! Truncated SVD of the binary user-item interaction matrix, used to build
//! collaborative user features. Randomized subspace iteration keeps the cost
//! at O(nnz * k) per pass; the small projected factorization is delegated to
//! a dense solver.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng;

/// Binary interaction matrix in CSR form. Entries are implicitly 1.0.
#[derive(Clone, Debug)]
pub struct ImplicitMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
}

impl ImplicitMatrix {
    pub fn from_pairs(rows: usize, cols: usize, pairs: &[(u32, u32)]) -> Result<Self> {
        let mut sorted: Vec<(u32, u32)> = pairs.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if let Some(&(r, c)) = sorted.iter().find(|&&(r, c)| r as usize >= rows || c as usize >= cols) {
            return Err(Error::Shape(format!("entry ({r},{c}) outside {rows}x{cols}")));
        }
        let mut row_ptr = vec![0usize; rows + 1];
        for &(r, _) in &sorted {
            row_ptr[r as usize + 1] += 1;
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx = sorted.into_iter().map(|(_, c)| c).collect();
        Ok(ImplicitMatrix { rows, cols, row_ptr, col_idx })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// A * G for a dense G (cols x k).
    fn mul_dense(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        let k = g.ncols();
        let mut y = DMatrix::zeros(self.rows, k);
        for i in 0..self.rows {
            for &j in self.row(i) {
                for c in 0..k {
                    y[(i, c)] += g[(j as usize, c)];
                }
            }
        }
        y
    }

    /// A^T * Q for a dense Q (rows x k).
    fn tr_mul_dense(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        let k = q.ncols();
        let mut z = DMatrix::zeros(self.cols, k);
        for i in 0..self.rows {
            for &j in self.row(i) {
                for c in 0..k {
                    z[(j as usize, c)] += q[(i, c)];
                }
            }
        }
        z
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for &j in self.row(i) {
                d[(i, j as usize)] = 1.0;
            }
        }
        d
    }
}

pub struct TruncatedSvd {
    /// rows x k, orthonormal columns.
    pub u: Matrix,
    /// Singular values, descending.
    pub sigma: Vec<f64>,
    /// cols x k, orthonormal columns.
    pub v: Matrix,
}

/// Randomized truncated SVD with `n_iter >= 2` subspace iterations.
pub fn truncated_svd(m: &ImplicitMatrix, k: usize, n_iter: usize, seed: u64) -> Result<TruncatedSvd> {
    let min_dim = m.rows().min(m.cols());
    if k == 0 || k > min_dim {
        return Err(Error::InvalidArgument(format!(
            "rank {k} outside 1..={min_dim} for a {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    if n_iter < 2 {
        return Err(Error::InvalidArgument("need at least 2 subspace iterations".into()));
    }
    let l = (k + 8).min(min_dim);
    let mut r = rng::rng_from(seed, &[rng::TAG_SVD]);
    let g = DMatrix::from_fn(m.cols(), l, |_, _| StandardNormal.sample(&mut r));

    let mut q = m.mul_dense(&g).qr().q();
    for _ in 0..n_iter {
        let z = m.tr_mul_dense(&q).qr().q();
        q = m.mul_dense(&z).qr().q();
    }
    // project: B = Q^T A (l x cols), then dense SVD of the small B
    let b = m.tr_mul_dense(&q).transpose();
    let svd = b.svd(true, true);
    let u_b = svd.u.as_ref().expect("requested");
    let v_t = svd.v_t.as_ref().expect("requested");

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
    let order = &order[..k];

    let u_full = &q * u_b;
    let mut u = Matrix::zeros(m.rows(), k);
    let mut v = Matrix::zeros(m.cols(), k);
    let mut sigma = Vec::with_capacity(k);
    for (out_c, &c) in order.iter().enumerate() {
        sigma.push(svd.singular_values[c]);
        for i in 0..m.rows() {
            u.set(i, out_c, u_full[(i, c)]);
        }
        for j in 0..m.cols() {
            v.set(j, out_c, v_t[(c, j)]);
        }
    }
    Ok(TruncatedSvd { u, sigma, v })
}

impl TruncatedSvd {
    /// Per-row embeddings U * diag(sqrt(sigma)); rows with no interactions
    /// come out exactly zero.
    pub fn user_vectors(&self) -> Vec<Vec<f64>> {
        let k = self.sigma.len();
        let scale: Vec<f64> = self.sigma.iter().map(|s| s.max(0.0).sqrt()).collect();
        (0..self.u.rows())
            .map(|i| (0..k).map(|c| self.u.get(i, c) * scale[c]).collect())
            .collect()
    }
}
