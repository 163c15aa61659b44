//! Dense column-major matrices and a column-pivoted Householder QR.
//!
//! Least-squares problems are solved through the factorization; the normal
//! equations are never formed. `(A'A)^{-1}` is recovered as `P R^{-1} R^{-T} P'`
//! for sandwich covariances.

use std::fmt;

/// Dense matrix stored column by column.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{}", self.nrows, self.ncols)?;
        for i in 0..self.nrows.min(8) {
            let row: Vec<f64> = (0..self.ncols).map(|j| self[(i, j)]).collect();
            writeln!(f, "  {row:?}")?;
        }
        Ok(())
    }
}

impl Matrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from equal-length columns.
    pub fn from_columns(columns: &[Vec<f64>]) -> Self {
        let ncols = columns.len();
        let nrows = columns.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(nrows * ncols);
        for c in columns {
            assert_eq!(c.len(), nrows, "ragged columns");
            data.extend_from_slice(c);
        }
        Self { nrows, ncols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(nrows, ncols);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), ncols, "ragged rows");
            for (j, &v) in r.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.ncols).map(move |j| self.col(j))
    }

    /// Horizontal concatenation.
    pub fn hstack(parts: &[&Matrix]) -> Self {
        let nrows = parts.first().map_or(0, |m| m.nrows);
        let mut data = Vec::new();
        let mut ncols = 0;
        for p in parts {
            assert_eq!(p.nrows, nrows, "row mismatch in hstack");
            data.extend_from_slice(&p.data);
            ncols += p.ncols;
        }
        Self { nrows, ncols, data }
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut m = Self::zeros(rows.len(), self.ncols);
        for j in 0..self.ncols {
            let src = self.col(j);
            for (dst, &i) in m.col_mut(j).iter_mut().zip(rows) {
                *dst = src[i];
            }
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.ncols, self.nrows);
        for j in 0..self.ncols {
            for i in 0..self.nrows {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Self {
        assert_eq!(self.ncols, other.nrows, "shape mismatch in matmul");
        let mut out = Self::zeros(self.nrows, other.ncols);
        for j in 0..other.ncols {
            let dst = &mut out.data[j * self.nrows..(j + 1) * self.nrows];
            for k in 0..self.ncols {
                let b = other[(k, j)];
                if b != 0.0 {
                    for (d, a) in dst.iter_mut().zip(self.col(k)) {
                        *d += a * b;
                    }
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.ncols, x.len(), "shape mismatch in matvec");
        let mut out = vec![0.0; self.nrows];
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (o, a) in out.iter_mut().zip(self.col(j)) {
                    *o += a * xj;
                }
            }
        }
        out
    }

    pub fn scale(mut self, s: f64) -> Self {
        self.data.iter_mut().for_each(|v| *v *= s);
        self
    }

    /// Rows as nested vectors, for serialization.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.nrows)
            .map(|i| (0..self.ncols).map(|j| self[(i, j)]).collect())
            .collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self[(i, i)]).collect()
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        self.columns()
            .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.nrows && j < self.ncols);
        &self.data[j * self.nrows + i]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.nrows && j < self.ncols);
        &mut self.data[j * self.nrows + i]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `A P = Q R` with Householder reflectors and greedy column pivoting.
///
/// Requires `nrows >= ncols`.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    /// Upper triangle holds `R`; below the diagonal, the reflector tails.
    factors: Matrix,
    /// Reflector scalars: `H_k = I - tau_k v_k v_k'` with `v_k[k] = 1`.
    tau: Vec<f64>,
    /// `perm[k]` is the original index of the `k`-th pivoted column.
    perm: Vec<usize>,
}

impl PivotedQr {
    pub fn new(mut a: Matrix) -> Self {
        let (m, n) = (a.nrows, a.ncols);
        assert!(m >= n, "PivotedQr needs at least as many rows as columns");
        let mut perm: Vec<usize> = (0..n).collect();
        let mut tau = vec![0.0; n];
        let mut norms: Vec<f64> = a.columns().map(|c| dot(c, c)).collect();
        let mut reference = norms.clone();

        for k in 0..n {
            // Pivot: the remaining column with the largest trailing norm.
            let p = (k..n)
                .max_by(|&x, &y| norms[x].total_cmp(&norms[y]))
                .unwrap_or(k);
            if p != k {
                let (lo, hi) = a.data.split_at_mut(p * m);
                lo[k * m..(k + 1) * m].swap_with_slice(&mut hi[..m]);
                norms.swap(k, p);
                reference.swap(k, p);
                perm.swap(k, p);
            }

            // Householder reflector for a[k.., k].
            let (head, tail) = a.data.split_at_mut((k + 1) * m);
            let col = &mut head[k * m..];
            let x = &mut col[k..];
            let alpha = x[0];
            let sigma: f64 = x[1..].iter().map(|v| v * v).sum();
            if sigma == 0.0 && alpha >= 0.0 {
                tau[k] = 0.0;
            } else {
                let norm = (alpha * alpha + sigma).sqrt();
                let beta = if alpha <= 0.0 { norm } else { -norm };
                let v0 = alpha - beta;
                tau[k] = (beta - alpha) / beta;
                x[1..].iter_mut().for_each(|v| *v /= v0);
                x[0] = beta;
            }
            let v_tail = &col[k + 1..];
            let t = tau[k];

            // Apply to the remaining columns and downdate their norms.
            for (jj, other) in tail.chunks_exact_mut(m).enumerate() {
                let j = k + 1 + jj;
                if t != 0.0 {
                    let s = other[k] + dot(v_tail, &other[k + 1..]);
                    let ts = t * s;
                    other[k] -= ts;
                    for (o, v) in other[k + 1..].iter_mut().zip(v_tail) {
                        *o -= ts * v;
                    }
                }
                let r = other[k];
                norms[j] -= r * r;
                // Recompute when cancellation has eaten most of the digits.
                if norms[j] <= 1e-6 * reference[j] {
                    norms[j] = other[k + 1..].iter().map(|v| v * v).sum();
                    reference[j] = norms[j];
                }
            }
        }
        Self {
            factors: a,
            tau,
            perm,
        }
    }

    pub fn nrows(&self) -> usize {
        self.factors.nrows
    }

    pub fn ncols(&self) -> usize {
        self.factors.ncols
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Diagonal of `R`, in pivoted order.
    pub fn r_diagonal(&self) -> Vec<f64> {
        self.factors.diagonal()
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        self.factors[(i, j)]
    }

    /// `b <- Q' b`.
    pub fn apply_qt(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.nrows());
        for k in 0..self.ncols() {
            self.reflect(k, b);
        }
    }

    /// `b <- Q b`.
    pub fn apply_q(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.nrows());
        for k in (0..self.ncols()).rev() {
            self.reflect(k, b);
        }
    }

    fn reflect(&self, k: usize, b: &mut [f64]) {
        let t = self.tau[k];
        if t == 0.0 {
            return;
        }
        let v_tail = &self.factors.col(k)[k + 1..];
        let s = b[k] + dot(v_tail, &b[k + 1..]);
        let ts = t * s;
        b[k] -= ts;
        for (o, v) in b[k + 1..].iter_mut().zip(v_tail) {
            *o -= ts * v;
        }
    }

    /// Least-squares coefficients in the original column order. Assumes full rank.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.ncols();
        let mut qtb = b.to_vec();
        self.apply_qt(&mut qtb);
        let mut z = qtb[..n].to_vec();
        for i in (0..n).rev() {
            let mut s = z[i];
            for j in i + 1..n {
                s -= self.r(i, j) * z[j];
            }
            z[i] = s / self.r(i, i);
        }
        let mut x = vec![0.0; n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = z[k];
        }
        x
    }

    /// Orthogonal projection of `b` onto the column space: `Q Q' b`.
    pub fn project(&self, b: &[f64]) -> Vec<f64> {
        let n = self.ncols();
        let mut v = b.to_vec();
        self.apply_qt(&mut v);
        v[n..].iter_mut().for_each(|x| *x = 0.0);
        self.apply_q(&mut v);
        v
    }

    /// `R^{-1}` in pivoted order (upper triangular).
    fn r_inverse(&self) -> Matrix {
        let n = self.ncols();
        let mut inv = Matrix::zeros(n, n);
        for j in 0..n {
            inv[(j, j)] = 1.0 / self.r(j, j);
            for i in (0..j).rev() {
                let mut s = 0.0;
                for k in i + 1..=j {
                    s += self.r(i, k) * inv[(k, j)];
                }
                inv[(i, j)] = -s / self.r(i, i);
            }
        }
        inv
    }

    /// One-norm condition number of `R` (equal to that of `A` up to a factor of `ncols`).
    pub fn condition_number(&self) -> f64 {
        let n = self.ncols();
        if n == 0 {
            return 1.0;
        }
        if self.r_diagonal().iter().any(|&d| d == 0.0 || !d.is_finite()) {
            return f64::INFINITY;
        }
        let mut r = Matrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                r[(i, j)] = self.r(i, j);
            }
        }
        let c = r.norm1() * self.r_inverse().norm1();
        if c.is_finite() {
            c
        } else {
            f64::INFINITY
        }
    }

    /// `(A'A)^{-1}` in the original column order.
    pub fn gram_inverse(&self) -> Matrix {
        let n = self.ncols();
        let ri = self.r_inverse();
        // (R'R)^{-1} = R^{-1} R^{-T}
        let mut g = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = 0.0;
                for k in i.max(j)..n {
                    s += ri[(i, k)] * ri[(j, k)];
                }
                g[(i, j)] = s;
                g[(j, i)] = s;
            }
        }
        let mut out = Matrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                out[(self.perm[a], self.perm[b])] = g[(a, b)];
            }
        }
        out
    }
}
