//! Compressed sparse row matrices over `Complex64`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C;

#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<C>,
}

impl Csr {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Csr { nrows, ncols, indptr: vec![0; nrows + 1], indices: vec![], data: vec![] }
    }

    pub fn identity(n: usize) -> Self {
        Csr {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: vec![C::new(1.0, 0.0); n],
        }
    }

    pub fn diag(d: &[C]) -> Self {
        Self::from_triplets(d.len(), d.len(), d.iter().enumerate().map(|(i, &v)| (i, i, v)))
    }

    /// Duplicates are summed; exact zeros dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, trip: impl IntoIterator<Item = (usize, usize, C)>) -> Self {
        let mut t: Vec<(usize, usize, C)> = trip.into_iter().collect();
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut data: Vec<C> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        let mut rows = Vec::with_capacity(t.len());
        for (i, j, v) in t {
            assert!(i < nrows && j < ncols, "triplet out of range");
            if last == Some((i, j)) {
                *data.last_mut().unwrap() += v;
            } else {
                rows.push(i);
                indices.push(j);
                data.push(v);
                last = Some((i, j));
            }
        }
        let keep: Vec<bool> = data.iter().map(|v| v.norm_sqr() != 0.0).collect();
        let mut k = 0;
        let (mut ri, mut ii, mut di) = (Vec::new(), Vec::new(), Vec::new());
        for idx in 0..data.len() {
            if keep[idx] {
                ri.push(rows[idx]);
                ii.push(indices[idx]);
                di.push(data[idx]);
                k += 1;
            }
        }
        for &r in &ri {
            indptr[r + 1] += 1;
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        debug_assert_eq!(indptr[nrows], k);
        Csr { nrows, ncols, indptr, indices: ii, data: di }
    }

    pub fn from_dense(m: &DMatrix<C>) -> Self {
        let mut t = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v.norm_sqr() != 0.0 {
                    t.push((i, j, v));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), t)
    }

    pub fn to_dense(&self) -> DMatrix<C> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.iter() {
            m[(i, j)] += v;
        }
        m
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            (self.indptr[i]..self.indptr[i + 1]).map(move |k| (i, self.indices[k], self.data[k]))
        })
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, C)> + '_ {
        (self.indptr[i]..self.indptr[i + 1]).map(move |k| (self.indices[k], self.data[k]))
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(self.ncols, self.nrows, self.iter().map(|(i, j, v)| (j, i, v.conj())))
    }

    pub fn scale(&self, s: C) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn add(&self, other: &Csr) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        Self::from_triplets(self.nrows, self.ncols, self.iter().chain(other.iter()))
    }

    pub fn mul(&self, other: &Csr) -> Self {
        assert_eq!(self.ncols, other.nrows);
        let mut t = Vec::new();
        for (i, k, a) in self.iter() {
            for (j, b) in other.row(k) {
                t.push((i, j, a * b));
            }
        }
        Self::from_triplets(self.nrows, other.ncols, t)
    }

    pub fn kron(&self, other: &Csr) -> Self {
        let mut t = Vec::with_capacity(self.nnz() * other.nnz());
        for (i, j, a) in self.iter() {
            for (k, l, b) in other.iter() {
                t.push((i * other.nrows + k, j * other.ncols + l, a * b));
            }
        }
        Self::from_triplets(self.nrows * other.nrows, self.ncols * other.ncols, t)
    }

    /// y = A x
    pub fn matvec_into(&self, x: &[C], y: &mut [C]) {
        for i in 0..self.nrows {
            let mut acc = C::new(0.0, 0.0);
            for k in self.indptr[i]..self.indptr[i + 1] {
                acc += self.data[k] * x[self.indices[k]];
            }
            y[i] = acc;
        }
    }

    pub fn matvec(&self, x: &[C]) -> Vec<C> {
        let mut y = vec![C::new(0.0, 0.0); self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    /// Y += s·A·X for column-major X (ncols × m) and Y (nrows × m).
    pub fn mul_dense_acc(&self, x: &[C], m: usize, s: C, y: &mut [C]) {
        let (nr, nc) = (self.nrows, self.ncols);
        for col in 0..m {
            let xc = &x[col * nc..(col + 1) * nc];
            let yc = &mut y[col * nr..(col + 1) * nr];
            for i in 0..nr {
                let mut acc = C::new(0.0, 0.0);
                for k in self.indptr[i]..self.indptr[i + 1] {
                    acc += self.data[k] * xc[self.indices[k]];
                }
                yc[i] += s * acc;
            }
        }
    }

    /// Y += s·X·A† for column-major X (m × ncols) and Y (m × nrows).
    pub fn mul_dense_right_adj_acc(&self, x: &[C], m: usize, s: C, y: &mut [C]) {
        for (j, k, v) in self.iter() {
            let f = s * v.conj();
            let xc = &x[k * m..(k + 1) * m];
            let yc = &mut y[j * m..(j + 1) * m];
            for (yi, xi) in yc.iter_mut().zip(xc) {
                *yi += f * xi;
            }
        }
    }

    /// Tr(A·X) for square column-major X.
    pub fn trace_with(&self, x: &[C]) -> C {
        let n = self.nrows;
        let mut acc = C::new(0.0, 0.0);
        for (i, j, v) in self.iter() {
            acc += v * x[j + i * n];
        }
        acc
    }

    pub fn hermitian_defect(&self) -> f64 {
        self.add(&self.adjoint().scale(C::new(-1.0, 0.0)))
            .data
            .iter()
            .fold(0.0, |m, v| m.max(v.norm()))
    }
}
