//! Sparse and dense linear algebra used by the discrete operators.
//!
//! Everything is complex (`C64`). Sparse matrices are CSR with sorted column
//! indices; assembly goes through [`Triplets`], which merges duplicates in a
//! fixed order so results are bit-reproducible.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use std::collections::VecDeque;
use std::io::Write;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Coordinate-format accumulator.
#[derive(Clone, Debug, Default)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    entries: Vec<(usize, usize, C64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, entries: Vec::new() }
    }

    pub fn push(&mut self, r: usize, c: usize, v: C64) {
        debug_assert!(r < self.nrows && c < self.ncols);
        if v != ZERO {
            self.entries.push((r, c, v));
        }
    }

    /// Adds a dense block `b` with its top-left corner at `(r0, c0)`.
    pub fn push_block(&mut self, r0: usize, c0: usize, b: &DMatrix<C64>) {
        for i in 0..b.nrows() {
            for j in 0..b.ncols() {
                self.push(r0 + i, c0 + j, b[(i, j)]);
            }
        }
    }

    pub fn build(mut self) -> SpMat {
        // Stable sort keeps insertion order among duplicates, so the summation
        // order is fixed.
        self.entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.entries.len());
        let mut data: Vec<C64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..self.nrows {
            indptr[r + 1] += indptr[r];
        }
        SpMat { nrows: self.nrows, ncols: self.ncols, indptr, indices, data }
    }
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SpMat {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<C64>,
}

impl SpMat {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Triplets::new(nrows, ncols).build()
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(&vec![ONE; n])
    }

    pub fn diag(d: &[C64]) -> Self {
        let mut t = Triplets::new(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            t.push(i, i, v);
        }
        t.build()
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        self.indices[a..b].iter().copied().zip(self.data[a..b].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        match self.indices[a..b].binary_search(&c) {
            Ok(k) => self.data[a + k],
            Err(_) => ZERO,
        }
    }

    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.ncols, "dimension mismatch in mul_vec");
        (0..self.nrows)
            .map(|r| self.row(r).fold(ZERO, |acc, (c, v)| acc + v * x[c]))
            .collect()
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> SpMat {
        let mut t = Triplets::new(self.ncols, self.nrows);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                t.push(c, r, v.conj());
            }
        }
        t.build()
    }

    pub fn scale(&self, s: C64) -> SpMat {
        let mut m = self.clone();
        m.data.iter_mut().for_each(|v| *v *= s);
        m
    }

    /// `diag(left) * self * diag(right)`.
    pub fn scale_rows_cols(&self, left: Option<&[f64]>, right: Option<&[f64]>) -> SpMat {
        let mut m = self.clone();
        for r in 0..m.nrows {
            for k in m.indptr[r]..m.indptr[r + 1] {
                let mut s = 1.0;
                if let Some(l) = left {
                    s *= l[r];
                }
                if let Some(rt) = right {
                    s *= rt[m.indices[k]];
                }
                m.data[k] *= s;
            }
        }
        m
    }

    pub fn add(&self, other: &SpMat, s: C64) -> SpMat {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut t = Triplets::new(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                t.push(r, c, v);
            }
            for (c, v) in other.row(r) {
                t.push(r, c, s * v);
            }
        }
        t.build()
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &SpMat) -> SpMat {
        assert_eq!(self.ncols, other.nrows, "dimension mismatch in matmul");
        let mut t = Triplets::new(self.nrows, other.ncols);
        let mut acc = vec![ZERO; other.ncols];
        let mut mark = vec![usize::MAX; other.ncols];
        let mut cols = Vec::new();
        for r in 0..self.nrows {
            cols.clear();
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    if mark[c] != r {
                        mark[c] = r;
                        acc[c] = ZERO;
                        cols.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            cols.sort_unstable();
            for &c in &cols {
                t.push(r, c, acc[c]);
            }
        }
        t.build()
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                d[(r, c)] += v;
            }
        }
        d
    }

    /// Largest entrywise modulus of `self - selfᴴ`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                worst = worst.max((v - self.get(c, r).conj()).norm());
            }
        }
        worst
    }

    /// Matrix Market coordinate/complex/general export.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate complex general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                writeln!(w, "{} {} {:.17e} {:.17e}", r + 1, c + 1, v.re, v.im)?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// vector helpers

pub fn dot(x: &[C64], y: &[C64]) -> C64 {
    // ⟨x, y⟩ = Σ x_i conj(y_i)
    x.iter().zip(y).fold(ZERO, |acc, (a, b)| acc + a * b.conj())
}

pub fn wdot(x: &[C64], y: &[C64], w: &[f64]) -> C64 {
    x.iter().zip(y).zip(w).fold(ZERO, |acc, ((a, b), &m)| acc + a * b.conj() * m)
}

pub fn norm(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub fn axpy(y: &mut [C64], a: C64, x: &[C64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

pub fn sub(x: &[C64], y: &[C64]) -> Vec<C64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

// ---------------------------------------------------------------------------
// ordering

/// Reverse Cuthill–McKee permutation of the symmetric sparsity graph of `a`.
/// Returns `perm` with `perm[new] = old`.
pub fn rcm_order(a: &SpMat) -> Vec<usize> {
    let n = a.nrows;
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|r| a.row(r).map(|(c, _)| c).filter(|&c| c != r).collect())
        .collect();
    let deg: Vec<usize> = adj.iter().map(|v| v.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bfs_levels = |start: usize, visited: &[bool]| -> (usize, usize) {
        // returns (last node, depth) of a BFS restricted to unvisited nodes
        let mut seen = visited.to_vec();
        let mut q = VecDeque::from([(start, 0usize)]);
        seen[start] = true;
        let mut last = (start, 0);
        while let Some((v, d)) = q.pop_front() {
            if d > last.1 || (d == last.1 && deg[v] < deg[last.0]) {
                last = (v, d);
            }
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    q.push_back((u, d + 1));
                }
            }
        }
        last
    };
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // pseudo-peripheral start node
        let mut start = seed;
        let mut depth = 0;
        for _ in 0..4 {
            let (far, d) = bfs_levels(start, &visited);
            if d <= depth {
                break;
            }
            start = far;
            depth = d;
        }
        let mut q = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = q.pop_front() {
            order.push(v);
            let mut nb: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            nb.sort_by_key(|&u| (deg[u], u));
            for u in nb {
                visited[u] = true;
                q.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

// ---------------------------------------------------------------------------
// envelope Cholesky

/// `A = L Lᴴ` for a Hermitian positive definite sparse matrix, stored in
/// envelope (variable band) form after RCM reordering.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    perm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    vals: Vec<C64>,
}

#[derive(Debug, thiserror::Error)]
#[error("matrix not positive definite at pivot {pivot} (value {value:e})")]
pub struct NotPositiveDefinite {
    pub pivot: usize,
    pub value: f64,
}

impl Cholesky {
    pub fn factor(a: &SpMat) -> Result<Self, NotPositiveDefinite> {
        assert_eq!(a.nrows, a.ncols);
        let n = a.nrows;
        let perm = rcm_order(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for old_r in 0..n {
            let r = inv[old_r];
            for (old_c, _) in a.row(old_r) {
                let c = inv[old_c];
                if c < r {
                    first[r] = first[r].min(c);
                }
            }
        }
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let mut vals = vec![ZERO; start[n]];
        for old_r in 0..n {
            let r = inv[old_r];
            for (old_c, v) in a.row(old_r) {
                let c = inv[old_c];
                if c <= r {
                    vals[start[r] + c - first[r]] += v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let mut s = vals[start[i] + j - fi];
                let ri = &vals[start[i] + k0 - fi..start[i] + j - fi];
                let rj = &vals[start[j] + k0 - fj..start[j] + j - fj];
                for (x, y) in ri.iter().zip(rj) {
                    s -= x * y.conj();
                }
                let ljj = vals[start[j] + j - fj].re;
                vals[start[i] + j - fi] = s / ljj;
            }
            let row = &vals[start[i]..start[i] + i - fi];
            let d = vals[start[i] + i - fi].re - row.iter().map(|v| v.norm_sqr()).sum::<f64>();
            if d.is_nan() || d <= 0.0 {
                return Err(NotPositiveDefinite { pivot: i, value: d });
            }
            vals[start[i] + i - fi] = C64::new(d.sqrt(), 0.0);
        }
        Ok(Self { n, perm, first, start, vals })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let n = self.n;
        let mut y: Vec<C64> = self.perm.iter().map(|&o| b[o]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.vals[self.start[i]..self.start[i] + i - fi];
            let mut s = y[i];
            for (l, yy) in row.iter().zip(&y[fi..i]) {
                s -= l * yy;
            }
            y[i] = s / self.vals[self.start[i] + i - fi].re;
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            y[i] /= self.vals[self.start[i] + i - fi].re;
            let yi = y[i];
            let row = &self.vals[self.start[i]..self.start[i] + i - fi];
            for (k, l) in row.iter().enumerate() {
                y[fi + k] -= l.conj() * yi;
            }
        }
        let mut x = vec![ZERO; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

// ---------------------------------------------------------------------------
// iterative solver

/// Diagonally preconditioned conjugate gradients for Hermitian positive
/// definite systems. Returns `(x, iterations, relative residual)`.
pub fn pcg(a: &SpMat, b: &[C64], tol: f64, max_iter: usize) -> (Vec<C64>, usize, f64) {
    let n = b.len();
    let dinv: Vec<f64> = (0..n).map(|i| 1.0 / a.get(i, i).re.max(f64::MIN_POSITIVE)).collect();
    let bn = norm(b).max(f64::MIN_POSITIVE);
    let mut x = vec![ZERO; n];
    let mut r = b.to_vec();
    let mut z: Vec<C64> = r.iter().zip(&dinv).map(|(v, d)| v * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&z, &r);
    for it in 0..max_iter {
        let rel = norm(&r) / bn;
        if rel <= tol {
            return (x, it, rel);
        }
        let ap = a.mul_vec(&p);
        let alpha = rz / dot(&ap, &p);
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &ap);
        z = r.iter().zip(&dinv).map(|(v, d)| v * d).collect();
        let rz_new = dot(&z, &r);
        let beta = rz_new / rz;
        rz = rz_new;
        p = z.iter().zip(&p).map(|(zi, pi)| zi + beta * pi).collect();
    }
    let rel = norm(&r) / bn;
    (x, max_iter, rel)
}

// ---------------------------------------------------------------------------
// dense helpers

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigh(a: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let n = a.nrows();
    let sym = (a + a.adjoint()) * C64::new(0.5, 0.0);
    let eig = sym.symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).clone_owned();
        // fix the phase so the largest component is real positive
        let (mut best, mut bi) = (0.0, 0);
        for (j, v) in col.iter().enumerate() {
            if v.norm() > best + 1e-12 {
                best = v.norm();
                bi = j;
            }
        }
        let ph = col[bi] / col[bi].norm();
        col /= ph;
        vecs.set_column(k, &col);
    }
    (vals, vecs)
}

/// Generalized Hermitian eigenproblem `A x = λ B x` with `B` positive definite.
/// Eigenvectors are `B`-orthonormal, eigenvalues ascending.
pub fn hermitian_eigh_general(a: &DMatrix<C64>, b: &DMatrix<C64>) -> Option<(Vec<f64>, DMatrix<C64>)> {
    let bs = (b + b.adjoint()) * C64::new(0.5, 0.0);
    let chol = bs.cholesky()?;
    let l = chol.l();
    let linv = l.clone().try_inverse()?;
    let c = &linv * a * linv.adjoint();
    let (vals, y) = hermitian_eigh(&c);
    let x = linv.adjoint() * y;
    Some((vals, x))
}

pub fn to_dvec(x: &[C64]) -> DVector<C64> {
    DVector::from_column_slice(x)
}

// ---------------------------------------------------------------------------
// eigen-solver for A x = λ M x with diagonal M

/// Result of [`smallest_eigenpairs`].
#[derive(Clone, Debug)]
pub struct EigenResult {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<C64>>,
    /// Relative residuals ‖Ax − λMx‖ / (‖A‖ ‖x‖_M) per pair.
    pub residuals: Vec<f64>,
    pub converged: usize,
}

/// Smallest `m` eigenpairs of `A x = λ M x`, `A` Hermitian positive
/// semidefinite, `M` diagonal positive. Dense for small problems, otherwise
/// shift-invert Lanczos with full reorthogonalization.
pub fn smallest_eigenpairs(a: &SpMat, mdiag: &[f64], m: usize, tol: f64) -> EigenResult {
    let n = a.nrows;
    let m = m.min(n);
    let sq: Vec<f64> = mdiag.iter().map(|v| v.sqrt()).collect();
    let isq: Vec<f64> = sq.iter().map(|v| 1.0 / v).collect();
    let b = a.scale_rows_cols(Some(&isq), Some(&isq));
    let anorm = (0..n).map(|i| b.get(i, i).re.abs()).fold(0.0, f64::max).max(1e-300);
    let finish = |vals: Vec<f64>, ys: Vec<Vec<C64>>| -> EigenResult {
        let mut residuals = Vec::new();
        let mut vectors = Vec::new();
        for (lam, y) in vals.iter().zip(&ys) {
            let by = b.mul_vec(y);
            let r: Vec<C64> = by.iter().zip(y).map(|(p, q)| p - q * *lam).collect();
            residuals.push(norm(&r) / (anorm * norm(y).max(1e-300)));
            vectors.push(y.iter().zip(&isq).map(|(v, s)| v * s).collect());
        }
        let converged = residuals.iter().take_while(|&&r| r <= tol).count();
        EigenResult { values: vals, vectors, residuals, converged }
    };
    if n <= 1200 {
        let (vals, vecs) = hermitian_eigh(&b.to_dense());
        let ys = (0..m).map(|k| vecs.column(k).iter().copied().collect()).collect();
        return finish(vals[..m].to_vec(), ys);
    }
    // shift below the spectrum: A is PSD, so −σ > 0 makes A − σM definite
    let sigma = -1e-3 * anorm.min(1.0);
    let shifted = b.add(&SpMat::identity(n), C64::new(-sigma, 0.0));
    let chol = match Cholesky::factor(&shifted) {
        Ok(c) => c,
        Err(_) => {
            let (vals, vecs) = hermitian_eigh(&b.to_dense());
            let ys = (0..m).map(|k| vecs.column(k).iter().copied().collect()).collect();
            return finish(vals[..m].to_vec(), ys);
        }
    };
    let mut steps = (3 * m + 40).min(n);
    loop {
        let (vals, ys) = lanczos_inverse(&chol, n, steps, m, sigma);
        let res = finish(vals, ys);
        if res.converged >= m || steps == n {
            return res;
        }
        steps = (steps * 3 / 2).min(n);
    }
}

fn lanczos_inverse(chol: &Cholesky, n: usize, steps: usize, m: usize, sigma: f64) -> (Vec<f64>, Vec<Vec<C64>>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    let mut q: Vec<Vec<C64>> = Vec::with_capacity(steps);
    let mut v: Vec<C64> = (0..n).map(|_| C64::new(rng.random::<f64>() - 0.5, 0.0)).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    for j in 0..steps {
        q.push(v.clone());
        let mut w = chol.solve(&v);
        let a = dot(&w, &v).re;
        alpha.push(a);
        // full reorthogonalization, twice for stability
        for _ in 0..2 {
            for qi in &q {
                let c = dot(&w, qi);
                axpy(&mut w, -c, qi);
            }
        }
        let bnorm = norm(&w);
        if j + 1 == steps || bnorm < 1e-14 {
            break;
        }
        beta.push(bnorm);
        v = w.iter().map(|x| x / bnorm).collect();
    }
    let k = alpha.len();
    let mut t = DMatrix::<C64>::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = C64::new(alpha[i], 0.0);
        if i + 1 < k {
            t[(i, i + 1)] = C64::new(beta[i], 0.0);
            t[(i + 1, i)] = C64::new(beta[i], 0.0);
        }
    }
    let (theta, s) = hermitian_eigh(&t);
    // largest θ ↔ smallest λ = σ + 1/θ
    let mut out_vals = Vec::new();
    let mut out_vecs = Vec::new();
    for idx in (0..k).rev().take(m) {
        let th = theta[idx];
        out_vals.push(sigma + 1.0 / th);
        let mut y = vec![ZERO; n];
        for (i, qi) in q.iter().enumerate().take(k) {
            axpy(&mut y, s[(i, idx)], qi);
        }
        let ny = norm(&y);
        y.iter_mut().for_each(|x| *x /= ny);
        out_vecs.push(y);
    }
    (out_vals, out_vecs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize, shift: f64) -> SpMat {
        let mut t = Triplets::new(n, n);
        for i in 0..n {
            t.push(i, i, C64::new(2.0 + shift, 0.0));
            if i + 1 < n {
                t.push(i, i + 1, C64::new(-1.0, 0.5));
                t.push(i + 1, i, C64::new(-1.0, -0.5));
            }
        }
        t.build()
    }

    #[test]
    fn triplets_merge_duplicates() {
        let mut t = Triplets::new(2, 2);
        t.push(0, 1, ONE);
        t.push(0, 1, ONE);
        t.push(1, 0, I);
        let m = t.build();
        assert_eq!(m.get(0, 1), C64::new(2.0, 0.0));
        assert_eq!(m.get(1, 0), I);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn cholesky_solves_hermitian_system() {
        let a = laplacian_1d(50, 0.5);
        let chol = Cholesky::factor(&a).unwrap();
        let b: Vec<C64> = (0..50).map(|i| C64::new(i as f64, 1.0)).collect();
        let x = chol.solve(&b);
        let r = sub(&a.mul_vec(&x), &b);
        assert!(norm(&r) / norm(&b) < 1e-12);
    }

    #[test]
    fn pcg_matches_direct() {
        let a = laplacian_1d(40, 0.5);
        let b: Vec<C64> = (0..40).map(|i| C64::new((i % 3) as f64, -1.0)).collect();
        let (x, _, rel) = pcg(&a, &b, 1e-12, 1000);
        assert!(rel < 1e-12);
        let y = Cholesky::factor(&a).unwrap().solve(&b);
        assert!(norm(&sub(&x, &y)) < 1e-9);
    }

    #[test]
    fn matmul_and_adjoint() {
        let a = laplacian_1d(6, 0.0);
        let p = a.matmul(&a.adjoint());
        let d = a.to_dense() * a.to_dense().adjoint();
        assert!((p.to_dense() - d).norm() < 1e-12);
    }

    #[test]
    fn lanczos_agrees_with_dense() {
        let n = 1500;
        let a = laplacian_1d(n, 0.25);
        let mdiag = vec![1.0; n];
        let r = smallest_eigenpairs(&a, &mdiag, 8, 1e-8);
        assert_eq!(r.converged, 8);
        // symbol of the Hermitian tridiagonal with |off| = √1.25
        let c = 1.25f64.sqrt();
        for (k, lam) in r.values.iter().enumerate() {
            let th = std::f64::consts::PI * (k + 1) as f64 / (n + 1) as f64;
            let exact = 2.25 - 2.0 * c * th.cos();
            assert!((lam - exact).abs() < 1e-9, "{k}: {lam} vs {exact}");
        }
    }
}
