//! Compressed-row sparse matrices and the linear solvers used by the assembly layer:
//! a banded direct LU with partial pivoting (after reverse Cuthill-McKee reordering)
//! and a Jacobi-preconditioned conjugate gradient for SPD systems.

use thiserror::Error;

use crate::scalar::{dot, norm2, Scalar};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("matrix is singular (zero pivot at row {row})")]
    Singular { row: usize },
    #[error("iterative solver did not converge within {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("dimension mismatch: matrix is {n}x{n}, vector has length {len}")]
    DimensionMismatch { n: usize, len: usize },
}

/// Square sparse matrix in CSR form with a fixed sparsity pattern.
///
/// The pattern is established once (from the mesh connectivity); repeated
/// assemblies only rewrite the value array.
#[derive(Debug, Clone)]
pub struct SparseMatrix<S> {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<S>,
}

impl<S: Scalar> SparseMatrix<S> {
    /// Builds a zero matrix from per-row column sets. Columns are sorted and deduplicated.
    pub fn from_pattern(n: usize, rows: &[Vec<usize>]) -> Self {
        assert_eq!(rows.len(), n, "pattern must have one entry per row");
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for cols in rows {
            let mut cols = cols.clone();
            cols.sort_unstable();
            cols.dedup();
            assert!(cols.iter().all(|&c| c < n), "column index out of range");
            col_idx.extend_from_slice(&cols);
            row_ptr.push(col_idx.len());
        }
        let values = vec![S::zero(); col_idx.len()];
        Self { n, row_ptr, col_idx, values }
    }

    /// Builds from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, S)]) -> Self {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(i, j, _) in triplets {
            rows[i].push(j);
        }
        let mut m = Self::from_pattern(n, &rows);
        for &(i, j, v) in triplets {
            m.add(i, j, v);
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::from_pattern(n, &(0..n).map(|i| vec![i]).collect::<Vec<_>>());
        for i in 0..n {
            m.set(i, i, S::one());
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn zero_values(&mut self) {
        self.values.iter_mut().for_each(|v| *v = S::zero());
    }

    fn idx(&self, i: usize, j: usize) -> Option<usize> {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi].binary_search(&j).ok().map(|k| lo + k)
    }

    /// Adds `v` at (i, j). Panics if the entry is not in the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: S) {
        let k = self.idx(i, j).expect("entry outside sparsity pattern");
        self.values[k] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: S) {
        let k = self.idx(i, j).expect("entry outside sparsity pattern");
        self.values[k] = v;
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.idx(i, j).map_or(S::zero(), |k| self.values[k])
    }

    pub fn row(&self, i: usize) -> (&[usize], &[S]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn row_mut(&mut self, i: usize) -> (&[usize], &mut [S]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.col_idx[lo..hi], &mut self.values[lo..hi])
    }

    pub fn matvec(&self, x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![S::zero(); self.n];
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut acc = S::zero();
            for (c, v) in cols.iter().zip(vals) {
                acc += *v * x[*c];
            }
            y[i] = acc;
        }
        y
    }

    pub fn matvec_transpose(&self, x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![S::zero(); self.n];
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                y[*c] += *v * x[i];
            }
        }
        y
    }

    /// Symmetric Dirichlet elimination for the constrained index set.
    ///
    /// Rows and columns of constrained dofs are zeroed with a unit diagonal;
    /// for every unconstrained row the eliminated column contribution
    /// `K_ic * (prescribed - current)` is moved to the residual, and constrained
    /// residual entries are replaced by `current - prescribed`.
    pub fn eliminate_dirichlet(&mut self, residual: &mut [S], constrained: &[(usize, S)], current: &[S]) {
        assert_eq!(residual.len(), self.n);
        assert_eq!(current.len(), self.n);
        let mut mask = vec![false; self.n];
        let mut delta = vec![S::zero(); self.n];
        for &(c, g) in constrained {
            assert!(c < self.n, "constrained dof out of range");
            mask[c] = true;
            delta[c] = g - current[c];
        }
        for i in 0..self.n {
            let constrained_row = mask[i];
            let (cols, vals) = {
                let lo = self.row_ptr[i];
                let hi = self.row_ptr[i + 1];
                (&self.col_idx[lo..hi], &mut self.values[lo..hi])
            };
            if constrained_row {
                for (c, v) in cols.iter().zip(vals.iter_mut()) {
                    *v = if *c == i { S::one() } else { S::zero() };
                }
            } else {
                for (c, v) in cols.iter().zip(vals.iter_mut()) {
                    if mask[*c] {
                        residual[i] += *v * delta[*c];
                        *v = S::zero();
                    }
                }
            }
        }
        for &(c, g) in constrained {
            residual[c] = current[c] - g;
        }
    }

    /// Structural bandwidth max |i - j| over stored entries.
    pub fn bandwidth(&self) -> usize {
        let mut bw = 0;
        for i in 0..self.n {
            let (cols, _) = self.row(i);
            for &c in cols {
                bw = bw.max(i.abs_diff(c));
            }
        }
        bw
    }
}

/// Reverse Cuthill-McKee ordering of the (structurally symmetrized) pattern.
/// Returns `perm` with `perm[new] = old`.
pub fn rcm_ordering<S: Scalar>(m: &SparseMatrix<S>) -> Vec<usize> {
    let n = m.n();
    // symmetrized adjacency, self-loops dropped
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let (cols, _) = m.row(i);
        for &c in cols {
            if c != i {
                adj[i].push(c);
                adj[c].push(i);
            }
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(|a| a.len()).collect();

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    loop {
        // start each component at a minimum-degree node
        let start = match (0..n).filter(|&i| !visited[i]).min_by_key(|&i| (degree[i], i)) {
            Some(s) => s,
            None => break,
        };
        let mut queue = std::collections::VecDeque::new();
        visited[start] = true;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut next: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            next.sort_by_key(|&v| (degree[v], v));
            for v in next {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

/// Banded LU factorization with partial pivoting of a (possibly permuted) sparse matrix.
///
/// Storage follows the LAPACK band layout: entry (i, j) of the permuted matrix
/// lives at band row `i - j + kl + ku`, column `j`. Partial pivoting grows the
/// upper bandwidth from `ku` to `kl + ku`.
pub struct BandLu<S> {
    n: usize,
    kl: usize,
    ku: usize,
    ab: Vec<S>, // (2*kl + ku + 1) rows by n columns, row-major by band row
    ipiv: Vec<usize>,
    perm: Vec<usize>, // perm[new] = old; identity when no reordering was requested
}

impl<S: Scalar> BandLu<S> {
    #[inline]
    fn at(&self, i: usize, j: usize) -> S {
        self.ab[(i + self.kl + self.ku - j) * self.n + j]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut S {
        &mut self.ab[(i + self.kl + self.ku - j) * self.n + j]
    }

    /// Factors `m`, optionally with a fill-reducing permutation (`perm[new] = old`).
    pub fn factor(m: &SparseMatrix<S>, perm: Option<Vec<usize>>) -> Result<Self, SolveError> {
        let n = m.n();
        let perm = perm.unwrap_or_else(|| (0..n).collect());
        assert_eq!(perm.len(), n);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        // bandwidth of the permuted pattern
        let mut bw = 0usize;
        for i in 0..n {
            let (cols, _) = m.row(i);
            for &c in cols {
                bw = bw.max(inv[i].abs_diff(inv[c]));
            }
        }
        let (kl, ku) = (bw, bw);
        let rows = 2 * kl + ku + 1;
        let mut lu = Self {
            n,
            kl,
            ku,
            ab: vec![S::zero(); rows * n],
            ipiv: vec![0; n],
            perm,
        };
        for i in 0..n {
            let (cols, vals) = m.row(i);
            for (c, v) in cols.iter().zip(vals) {
                *lu.at_mut(inv[i], inv[*c]) = *v;
            }
        }
        lu.decompose()?;
        Ok(lu)
    }

    fn decompose(&mut self) -> Result<(), SolveError> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        for k in 0..n {
            let imax = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.at(k, k).abs();
            for i in (k + 1)..=imax {
                let a = self.at(i, k).abs();
                if a > best {
                    best = a;
                    p = i;
                }
            }
            if best == S::zero() || !best.is_finite() {
                return Err(SolveError::Singular { row: self.perm[k.min(n - 1)] });
            }
            self.ipiv[k] = p;
            let jmax = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let a = self.at(k, j);
                    let b = self.at(p, j);
                    *self.at_mut(k, j) = b;
                    *self.at_mut(p, j) = a;
                }
            }
            let pivot = self.at(k, k);
            for i in (k + 1)..=imax {
                let m = self.at(i, k) / pivot;
                *self.at_mut(i, k) = m;
                if m != S::zero() {
                    for j in (k + 1)..=jmax {
                        let akj = self.at(k, j);
                        if akj != S::zero() {
                            *self.at_mut(i, j) = self.at(i, j) - m * akj;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[S]) -> Result<Vec<S>, SolveError> {
        if b.len() != self.n {
            return Err(SolveError::DimensionMismatch { n: self.n, len: b.len() });
        }
        let n = self.n;
        let mut y: Vec<S> = (0..n).map(|new| b[self.perm[new]]).collect();
        // L y = P b
        for k in 0..n {
            y.swap(k, self.ipiv[k]);
            let imax = (k + self.kl).min(n - 1);
            let yk = y[k];
            if yk != S::zero() {
                for i in (k + 1)..=imax {
                    y[i] = y[i] - self.at(i, k) * yk;
                }
            }
        }
        // U x = y
        for k in (0..n).rev() {
            y[k] = y[k] / self.at(k, k);
            let yk = y[k];
            let imin = k.saturating_sub(self.kl + self.ku);
            if yk != S::zero() {
                for i in imin..k {
                    y[i] = y[i] - self.at(i, k) * yk;
                }
            }
        }
        let mut x = vec![S::zero(); n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        Ok(x)
    }

    /// Solves `A^T x = b` using the same factorization.
    pub fn solve_transpose(&self, b: &[S]) -> Result<Vec<S>, SolveError> {
        if b.len() != self.n {
            return Err(SolveError::DimensionMismatch { n: self.n, len: b.len() });
        }
        let n = self.n;
        let mut y: Vec<S> = (0..n).map(|new| b[self.perm[new]]).collect();
        // U^T w = b' (forward substitution over columns of U)
        for k in 0..n {
            let imin = k.saturating_sub(self.kl + self.ku);
            let mut acc = y[k];
            for i in imin..k {
                acc = acc - self.at(i, k) * y[i];
            }
            y[k] = acc / self.at(k, k);
        }
        // L^T v = w (back substitution), then undo pivoting in reverse
        for k in (0..n).rev() {
            let imax = (k + self.kl).min(n - 1);
            let mut acc = y[k];
            for i in (k + 1)..=imax {
                acc = acc - self.at(i, k) * y[i];
            }
            y[k] = acc;
            y.swap(k, self.ipiv[k]);
        }
        let mut x = vec![S::zero(); n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        Ok(x)
    }
}

/// Linear solver selection for [`solve_linear`].
#[derive(Debug, Clone, Copy)]
pub enum LinearSolver {
    /// Banded LU with partial pivoting after RCM reordering. Default.
    DirectLu,
    /// Jacobi-preconditioned conjugate gradient; requires an SPD matrix.
    ConjugateGradient { rel_tol: f64, max_iter: usize },
}

impl Default for LinearSolver {
    fn default() -> Self {
        LinearSolver::DirectLu
    }
}

/// Solves `A x = b` with the selected method.
pub fn solve_linear<S: Scalar>(a: &SparseMatrix<S>, b: &[S], method: LinearSolver) -> Result<Vec<S>, SolveError> {
    if b.len() != a.n() {
        return Err(SolveError::DimensionMismatch { n: a.n(), len: b.len() });
    }
    match method {
        LinearSolver::DirectLu => {
            let perm = rcm_ordering(a);
            BandLu::factor(a, Some(perm))?.solve(b)
        }
        LinearSolver::ConjugateGradient { rel_tol, max_iter } => conjugate_gradient(a, b, rel_tol, max_iter),
    }
}

fn conjugate_gradient<S: Scalar>(a: &SparseMatrix<S>, b: &[S], rel_tol: f64, max_iter: usize) -> Result<Vec<S>, SolveError> {
    let n = a.n();
    let mut diag_inv = vec![S::zero(); n];
    for i in 0..n {
        let d = a.get(i, i);
        if d == S::zero() {
            return Err(SolveError::Singular { row: i });
        }
        diag_inv[i] = S::one() / d;
    }
    let b_norm = norm2(b);
    if b_norm == S::zero() {
        return Ok(vec![S::zero(); n]);
    }
    let tol = S::of(rel_tol) * b_norm;
    let mut x = vec![S::zero(); n];
    let mut r = b.to_vec();
    let mut z: Vec<S> = r.iter().zip(&diag_inv).map(|(&ri, &di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 0..max_iter {
        if norm2(&r) <= tol {
            return Ok(x);
        }
        let ap = a.matvec(&p);
        let pap = dot(&p, &ap);
        if pap <= S::zero() {
            return Err(SolveError::NotConverged { iterations: it, residual: norm2(&r).as_f64() });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * diag_inv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if norm2(&r) <= tol {
        Ok(x)
    } else {
        Err(SolveError::NotConverged { iterations: max_iter, residual: norm2(&r).as_f64() })
    }
}
