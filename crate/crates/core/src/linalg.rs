//! Dense helpers: matrix exponential, Hermitian checks, banded LU, bandwidth-reducing ordering.

use nalgebra::DMatrix;
use num_complex::Complex64 as C;

pub type CMat = DMatrix<C>;

pub fn adjoint(m: &CMat) -> CMat {
    m.adjoint()
}

pub fn hermitian_defect(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut d: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            d = d.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    d
}

pub fn symmetrize(m: &mut CMat) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)].im = 0.0;
        for j in i + 1..n {
            let v = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = v;
            m[(j, i)] = v.conj();
        }
    }
}

pub fn trace(m: &CMat) -> C {
    m.diagonal().iter().sum()
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.norm()))
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn eigvalsh(m: &CMat) -> Vec<f64> {
    let mut h = m.clone();
    symmetrize(&mut h);
    let mut v: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

pub fn eigh(m: &CMat) -> (Vec<f64>, CMat) {
    let mut h = m.clone();
    symmetrize(&mut h);
    let e = h.symmetric_eigen();
    (e.eigenvalues.iter().copied().collect(), e.eigenvectors)
}

/// ½‖a − b‖₁ for Hermitian a, b.
pub fn trace_distance(a: &CMat, b: &CMat) -> f64 {
    0.5 * eigvalsh(&(a - b)).iter().map(|x| x.abs()).sum::<f64>()
}

fn one_norm(m: &CMat) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by Padé-13 scaling and squaring.
pub fn expm(a: &CMat) -> CMat {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA13: f64 = 5.371920351148152;
    let n = a.nrows();
    let norm = one_norm(a);
    let s = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let a = a * C::new(0.5f64.powi(s), 0.0);
    let id = CMat::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let r = |x: f64| C::new(x, 0.0);
    let u_inner = &a6 * (&a6 * r(B[13]) + &a4 * r(B[11]) + &a2 * r(B[9]))
        + &a6 * r(B[7])
        + &a4 * r(B[5])
        + &a2 * r(B[3])
        + &id * r(B[1]);
    let u = &a * u_inner;
    let v = &a6 * (&a6 * r(B[12]) + &a4 * r(B[10]) + &a2 * r(B[8]))
        + &a6 * r(B[6])
        + &a4 * r(B[4])
        + &a2 * r(B[2])
        + &id * r(B[0]);
    let p = &v + &u;
    let q = &v - &u;
    let mut x = q.lu().solve(&p).expect("Pade denominator singular");
    for _ in 0..s {
        x = &x * &x;
    }
    x
}

/// Reverse Cuthill-McKee ordering of a symmetric sparsity pattern.
/// Returns `perm` with `perm[new] = old`.
pub fn rcm_order(n: usize, adj: &[Vec<usize>]) -> Vec<usize> {
    let deg: Vec<usize> = adj.iter().map(|a| a.len()).collect();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let start = (0..n).filter(|&i| !seen[i]).min_by_key(|&i| (deg[i], i)).unwrap();
        seen[start] = true;
        let mut head = order.len();
        order.push(start);
        while head < order.len() {
            let v = order[head];
            head += 1;
            let mut nb: Vec<usize> = adj[v].iter().copied().filter(|&u| !seen[u]).collect();
            nb.sort_by_key(|&u| (deg[u], u));
            nb.dedup();
            for u in nb {
                if !seen[u] {
                    seen[u] = true;
                    order.push(u);
                }
            }
        }
    }
    order.reverse();
    order
}

/// Banded LU with partial pivoting. Row `i` stores columns `i-kl ..= i+kl+ku`.
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    w: usize,
    a: Vec<C>,
    piv: Vec<usize>,
    pub min_pivot: f64,
    pub max_pivot: f64,
}

impl BandLu {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let w = 2 * kl + ku + 1;
        BandLu { n, kl, ku, w, a: vec![C::new(0.0, 0.0); n * w], piv: vec![0; n], min_pivot: 0.0, max_pivot: 0.0 }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.w + (j + self.kl - i)
    }

    pub fn add(&mut self, i: usize, j: usize, v: C) {
        assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i},{j}) outside band");
        let k = self.idx(i, j);
        self.a[k] += v;
    }

    pub fn set_row_unit(&mut self, i: usize) {
        let lo = i.saturating_sub(self.kl);
        let hi = (i + self.ku).min(self.n - 1);
        for j in lo..=hi {
            let k = self.idx(i, j);
            self.a[k] = C::new(0.0, 0.0);
        }
        let k = self.idx(i, i);
        self.a[k] = C::new(1.0, 0.0);
    }

    pub fn factor(&mut self) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut pmin = f64::INFINITY;
        let mut pmax: f64 = 0.0;
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.a[self.idx(k, k)].norm();
            for i in k + 1..=last {
                let v = self.a[self.idx(i, k)].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            self.piv[k] = p;
            let jhi = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=jhi {
                    let (x, y) = (self.idx(k, j), self.idx(p, j));
                    self.a.swap(x, y);
                }
            }
            let pivot = self.a[self.idx(k, k)];
            pmin = pmin.min(pivot.norm());
            pmax = pmax.max(pivot.norm());
            if pivot.norm() == 0.0 {
                continue;
            }
            let inv = C::new(1.0, 0.0) / pivot;
            for i in k + 1..=last {
                let ik = self.idx(i, k);
                let l = self.a[ik] * inv;
                self.a[ik] = l;
                if l.norm_sqr() == 0.0 {
                    continue;
                }
                let (ri, rk) = (i * self.w, k * self.w);
                for j in k + 1..=jhi {
                    let u = self.a[rk + j + kl - k];
                    self.a[ri + j + kl - i] -= l * u;
                }
            }
        }
        self.min_pivot = pmin;
        self.max_pivot = pmax;
    }

    pub fn solve(&self, b: &mut [C]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            for i in k + 1..=(k + kl).min(n - 1) {
                b[i] -= self.a[self.idx(i, k)] * bk;
            }
        }
        for k in (0..n).rev() {
            let mut acc = b[k];
            for j in k + 1..=(k + kl + ku).min(n - 1) {
                acc -= self.a[self.idx(k, j)] * b[j];
            }
            b[k] = acc / self.a[self.idx(k, k)];
        }
    }
}
