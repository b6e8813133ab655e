//! Sparse complex matrices in CSR form.
//!
//! Kronecker products of local operators stay compact only if structural
//! zeros are pruned, so every constructor drops entries below [`DROP_TOL`]
//! in magnitude.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

/// Magnitude below which entries are treated as structural zeros.
pub const DROP_TOL: f64 = 1e-15;

#[derive(Clone, Debug)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<C64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: vec![C64::new(1.0, 0.0); n],
        }
    }

    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        mut triplets: Vec<(usize, usize, C64)>,
    ) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data: Vec<C64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            debug_assert!(r < nrows && c < ncols);
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                // prune the previous entry if it summed to ~0
                if let Some((lr, _)) = last {
                    if data.last().map_or(false, |z| z.norm() < DROP_TOL) {
                        data.pop();
                        indices.pop();
                        indptr[lr + 1] -= 1;
                    }
                }
                indptr[r + 1] += 1;
                indices.push(c);
                data.push(v);
                last = Some((r, c));
            }
        }
        if let Some((lr, _)) = last {
            if data.last().map_or(false, |z| z.norm() < DROP_TOL) {
                data.pop();
                indices.pop();
                indptr[lr + 1] -= 1;
            }
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn from_dense(a: &Array2<C64>) -> Self {
        let (m, n) = a.dim();
        let mut triplets = Vec::new();
        for i in 0..m {
            for j in 0..n {
                if a[[i, j]].norm() >= DROP_TOL {
                    triplets.push((i, j, a[[i, j]]));
                }
            }
        }
        Self::from_triplets(m, n, triplets)
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut out = Array2::zeros((self.nrows, self.ncols));
        for i in 0..self.nrows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                out[[i, self.indices[k]]] = self.data[k];
            }
        }
        out
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        let row = &self.indices[self.indptr[i]..self.indptr[i + 1]];
        match row.binary_search(&j) {
            Ok(k) => self.data[self.indptr[i] + k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn row(&self, i: usize) -> (&[usize], &[C64]) {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        (&self.indices[lo..hi], &self.data[lo..hi])
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = self.clone();
        for v in out.data.iter_mut() {
            *v *= s;
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                if q >= cb.len() || (p < ca.len() && ca[p] < cb[q]) {
                    triplets.push((i, ca[p], va[p]));
                    p += 1;
                } else if p >= ca.len() || cb[q] < ca[p] {
                    triplets.push((i, cb[q], vb[q]));
                    q += 1;
                } else {
                    triplets.push((i, ca[p], va[p] + vb[q]));
                    p += 1;
                    q += 1;
                }
            }
        }
        Self::from_triplets(self.nrows, self.ncols, triplets)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.ncols, other.nrows);
        let n = other.ncols;
        let mut acc = vec![C64::new(0.0, 0.0); n];
        let mut touched: Vec<usize> = Vec::new();
        let mut triplets = Vec::new();
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            for (k, &col_k) in ca.iter().enumerate() {
                let a = va[k];
                let (cb, vb) = other.row(col_k);
                for (m, &j) in cb.iter().enumerate() {
                    if acc[j] == C64::new(0.0, 0.0) && !touched.contains(&j) {
                        touched.push(j);
                    }
                    acc[j] += a * vb[m];
                }
            }
            for &j in &touched {
                if acc[j].norm() >= DROP_TOL {
                    triplets.push((i, j, acc[j]));
                }
                acc[j] = C64::new(0.0, 0.0);
            }
            touched.clear();
        }
        Self::from_triplets(self.nrows, n, triplets)
    }

    /// Kronecker product self ⊗ other.
    pub fn kron(&self, other: &Self) -> Self {
        let (p, q) = (other.nrows, other.ncols);
        let mut triplets = Vec::with_capacity(self.nnz() * other.nnz());
        for ia in 0..self.nrows {
            let (ca, va) = self.row(ia);
            for ib in 0..p {
                let (cb, vb) = other.row(ib);
                let r = ia * p + ib;
                for (k, &ja) in ca.iter().enumerate() {
                    for (m, &jb) in cb.iter().enumerate() {
                        triplets.push((r, ja * q + jb, va[k] * vb[m]));
                    }
                }
            }
        }
        Self::from_triplets(self.nrows * p, self.ncols * q, triplets)
    }

    pub fn transpose(&self) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (k, &j) in c.iter().enumerate() {
                triplets.push((j, i, v[k]));
            }
        }
        Self::from_triplets(self.ncols, self.nrows, triplets)
    }

    pub fn conj(&self) -> Self {
        let mut out = self.clone();
        for v in out.data.iter_mut() {
            *v = v.conj();
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        self.transpose().conj()
    }

    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![C64::new(0.0, 0.0); self.nrows];
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            let mut s = C64::new(0.0, 0.0);
            for (k, &j) in c.iter().enumerate() {
                s += v[k] * x[j];
            }
            y[i] = s;
        }
        y
    }

    /// Sparse · dense product, accumulated into `out` (can add on top).
    pub fn mul_dense_into(&self, b: &Array2<C64>, out: &mut Array2<C64>, alpha: C64) {
        assert_eq!(self.ncols, b.nrows());
        assert_eq!((self.nrows, b.ncols()), out.dim());
        let ncols = b.ncols();
        let bs = b.as_slice().expect("standard layout");
        let os = out.as_slice_mut().expect("standard layout");
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            let orow = &mut os[i * ncols..(i + 1) * ncols];
            for (k, &row_k) in c.iter().enumerate() {
                let a = alpha * v[k];
                let brow = &bs[row_k * ncols..(row_k + 1) * ncols];
                for j in 0..ncols {
                    orow[j] += a * brow[j];
                }
            }
        }
    }

    pub fn mul_dense(&self, b: &Array2<C64>) -> Array2<C64> {
        let mut out = Array2::zeros((self.nrows, b.ncols()));
        self.mul_dense_into(b, &mut out, C64::new(1.0, 0.0));
        out
    }

    /// Dense · sparse product (a · self), accumulated into `out`.
    pub fn rmul_dense_into(&self, a: &Array2<C64>, out: &mut Array2<C64>, alpha: C64) {
        assert_eq!(a.ncols(), self.nrows);
        assert_eq!((a.nrows(), self.ncols), out.dim());
        let ncols = self.ncols;
        let asl = a.as_slice().expect("standard layout");
        let os = out.as_slice_mut().expect("standard layout");
        let an = a.ncols();
        for i in 0..a.nrows() {
            let arow = &asl[i * an..(i + 1) * an];
            let orow = &mut os[i * ncols..(i + 1) * ncols];
            for k in 0..self.nrows {
                let aik = arow[k];
                if aik == C64::new(0.0, 0.0) {
                    continue;
                }
                let (c, v) = self.row(k);
                for (m, &j) in c.iter().enumerate() {
                    orow[j] += alpha * aik * v[m];
                }
            }
        }
    }

    pub fn rmul_dense(&self, a: &Array2<C64>) -> Array2<C64> {
        let mut out = Array2::zeros((a.nrows(), self.ncols));
        self.rmul_dense_into(a, &mut out, C64::new(1.0, 0.0));
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn trace(&self) -> C64 {
        let n = self.nrows.min(self.ncols);
        (0..n).map(|i| self.get(i, i)).sum()
    }

    /// Max-norm deviation from Hermiticity.
    pub fn hermiticity_deviation(&self) -> f64 {
        self.sub(&self.adjoint()).max_abs()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.nrows == self.ncols && self.hermiticity_deviation() < tol
    }
}

/// Apply a sparse operator to a state vector, returning an ndarray.
pub fn apply_to_vector(m: &CsrMatrix, x: &Array1<C64>) -> Array1<C64> {
    Array1::from_vec(m.mul_vec(x.as_slice().expect("standard layout")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn triplets_sum_duplicates_and_prune() {
        let m = CsrMatrix::from_triplets(
            2,
            2,
            vec![(0, 1, c(1.0, 0.0)), (0, 1, c(-1.0, 0.0)), (1, 0, c(2.0, 1.0))],
        );
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(1, 0), c(2.0, 1.0));
        assert_eq!(m.get(0, 1), c(0.0, 0.0));
    }

    #[test]
    fn matmul_against_dense() {
        let a = array![[c(1.0, 0.0), c(0.0, 2.0)], [c(0.0, 0.0), c(3.0, -1.0)]];
        let b = array![[c(0.5, 0.0), c(1.0, 1.0)], [c(2.0, 0.0), c(0.0, 0.0)]];
        let sa = CsrMatrix::from_dense(&a);
        let sb = CsrMatrix::from_dense(&b);
        let prod = sa.matmul(&sb).to_dense();
        let expect = a.dot(&b);
        for i in 0..2 {
            for j in 0..2 {
                assert!((prod[[i, j]] - expect[[i, j]]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn kron_matches_hand_value() {
        let sx = CsrMatrix::from_dense(&array![
            [c(0.0, 0.0), c(1.0, 0.0)],
            [c(1.0, 0.0), c(0.0, 0.0)]
        ]);
        let id = CsrMatrix::identity(2);
        let k = sx.kron(&id);
        assert_eq!(k.nrows(), 4);
        assert_eq!(k.get(0, 2), c(1.0, 0.0));
        assert_eq!(k.get(1, 3), c(1.0, 0.0));
        assert_eq!(k.get(0, 1), c(0.0, 0.0));
    }

    #[test]
    fn adjoint_mul_dense_consistency() {
        let a = array![[c(1.0, 2.0), c(0.0, 0.0)], [c(3.0, 0.0), c(0.0, -1.0)]];
        let sa = CsrMatrix::from_dense(&a);
        let adj = sa.adjoint().to_dense();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(adj[[i, j]], a[[j, i]].conj());
            }
        }
        let b = Array2::from_shape_fn((2, 3), |(i, j)| c(i as f64, j as f64));
        let d = sa.mul_dense(&b);
        let expect = a.dot(&b);
        assert!(d
            .iter()
            .zip(expect.iter())
            .all(|(x, y)| (x - y).norm() < 1e-14));
        let e = sa.rmul_dense(&b.t().as_standard_layout().to_owned());
        let expect2 = b.t().as_standard_layout().dot(&a);
        assert!(e
            .iter()
            .zip(expect2.iter())
            .all(|(x, y)| (x - y).norm() < 1e-14));
    }
}
