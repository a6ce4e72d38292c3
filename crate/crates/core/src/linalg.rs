//! Sparse symmetric matrices on a mesh-node pattern and a sparse LDLᵀ
//! factorization with a geometric nested-dissection ordering.
//!
//! The factorization follows the classic up-looking LDL algorithm: an
//! elimination tree drives the symbolic pass, and each row of `L` is found by
//! a sparse triangular solve. A single symbolic analysis is shared by every
//! matrix assembled on the same pattern.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::Point2;

const NONE: usize = usize::MAX;

/// Symmetric sparsity pattern in CSR form (both triangles stored, columns
/// sorted, diagonal always present).
#[derive(Debug, Clone, PartialEq)]
pub struct SymPattern {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    diag: Vec<usize>,
}

impl SymPattern {
    /// Pattern of the node-adjacency graph given by undirected edges.
    pub fn from_edges(n: usize, edges: &[[usize; 2]]) -> Self {
        let mut rows: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for &[a, b] in edges {
            rows[a].push(b);
            rows[b].push(a);
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut diag = Vec::with_capacity(n);
        row_ptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_unstable();
            row.dedup();
            let start = cols.len();
            diag.push(start + row.binary_search(&i).unwrap());
            cols.extend(row);
            row_ptr.push(cols.len());
        }
        Self {
            row_ptr,
            cols,
            diag,
        }
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    /// Storage slot of entry `(i, j)`; panics if it is not in the pattern.
    pub fn slot(&self, i: usize, j: usize) -> usize {
        let r = self.row(i);
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => r.start + k,
            Err(_) => panic!("entry ({i}, {j}) not in sparsity pattern"),
        }
    }

    pub fn diag_slot(&self, i: usize) -> usize {
        self.diag[i]
    }
}

/// Symmetric matrix sharing a [`SymPattern`].
#[derive(Debug, Clone)]
pub struct SymMatrix {
    pattern: Arc<SymPattern>,
    values: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(pattern: Arc<SymPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        Self { pattern, values }
    }

    pub fn pattern(&self) -> &Arc<SymPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn n(&self) -> usize {
        self.pattern.n()
    }

    /// Adds `v` to both `(i, j)` and `(j, i)` (once on the diagonal).
    pub fn add_sym(&mut self, i: usize, j: usize, v: f64) {
        let s = self.pattern.slot(i, j);
        self.values[s] += v;
        if i != j {
            let s = self.pattern.slot(j, i);
            self.values[s] += v;
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.pattern.row(i);
        match self.pattern.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.values[self.pattern.diag_slot(i)]
    }

    pub fn add_diag(&mut self, i: usize, v: f64) {
        let s = self.pattern.diag_slot(i);
        self.values[s] += v;
    }

    /// `self + alpha * other`; both must share the same pattern.
    pub fn axpy(&self, alpha: f64, other: &SymMatrix) -> SymMatrix {
        assert!(Arc::ptr_eq(&self.pattern, &other.pattern) || self.pattern == other.pattern);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + alpha * b)
            .collect();
        SymMatrix {
            pattern: self.pattern.clone(),
            values,
        }
    }

    pub fn scaled(&self, alpha: f64) -> SymMatrix {
        SymMatrix {
            pattern: self.pattern.clone(),
            values: self.values.iter().map(|v| alpha * v).collect(),
        }
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.pattern.row(i) {
                s += self.values[k] * x[self.pattern.cols[k]];
            }
            *yi = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n()];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n())
            .map(|i| self.pattern.row(i).map(|k| self.values[k]).sum())
            .collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n()).all(|i| {
            self.pattern.row(i).all(|k| {
                let j = self.pattern.cols[k];
                (self.values[k] - self.get(j, i)).abs() <= tol * (1.0 + self.values[k].abs())
            })
        })
    }
}

/// Fill-reducing elimination order for mesh-graph matrices.
///
/// Recursive coordinate bisection: split at the median along the wider
/// extent, take the nodes on the lower side that touch the upper side as the
/// separator, and number both halves before the separator.
pub fn nested_dissection(pattern: &SymPattern, coords: &[Point2]) -> Vec<usize> {
    assert_eq!(pattern.n(), coords.len());
    let mut order = Vec::with_capacity(coords.len());
    let mut side = vec![0u8; coords.len()];
    let nodes: Vec<usize> = (0..coords.len()).collect();
    dissect(pattern, coords, nodes, &mut side, &mut order);
    order
}

fn dissect(
    pattern: &SymPattern,
    coords: &[Point2],
    mut nodes: Vec<usize>,
    side: &mut [u8],
    order: &mut Vec<usize>,
) {
    const LEAF: usize = 48;
    if nodes.len() <= LEAF {
        nodes.sort_unstable();
        order.extend(nodes);
        return;
    }
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &i in &nodes {
        xmin = xmin.min(coords[i].x);
        xmax = xmax.max(coords[i].x);
        ymin = ymin.min(coords[i].y);
        ymax = ymax.max(coords[i].y);
    }
    let key = |i: usize| {
        if xmax - xmin >= ymax - ymin {
            (coords[i].x, coords[i].y, i)
        } else {
            (coords[i].y, coords[i].x, i)
        }
    };
    nodes.sort_unstable_by(|&a, &b| key(a).partial_cmp(&key(b)).unwrap());
    let half = nodes.len() / 2;
    // side: 1 = low, 2 = high, 0 = outside this subproblem.
    for (k, &i) in nodes.iter().enumerate() {
        side[i] = if k < half { 1 } else { 2 };
    }
    let mut low = Vec::with_capacity(half);
    let mut sep = Vec::new();
    for &i in &nodes[..half] {
        let touches_high = pattern.row(i).any(|k| side[pattern.cols[k]] == 2);
        if touches_high {
            sep.push(i);
        } else {
            low.push(i);
        }
    }
    let high: Vec<usize> = nodes[half..].to_vec();
    for &i in &nodes {
        side[i] = 0;
    }
    dissect(pattern, coords, low, side, order);
    dissect(pattern, coords, high, side, order);
    sep.sort_unstable();
    order.extend(sep);
}

/// Symbolic LDLᵀ analysis (elimination tree and column counts) of a pattern
/// under a fixed permutation.
#[derive(Debug)]
pub struct LdlSymbolic {
    pattern: Arc<SymPattern>,
    /// New index -> original index.
    perm: Vec<usize>,
    /// Original index -> new index.
    inv: Vec<usize>,
    parent: Vec<usize>,
    col_ptr: Vec<usize>,
}

impl LdlSymbolic {
    pub fn analyze(pattern: Arc<SymPattern>, perm: Vec<usize>) -> Self {
        let n = pattern.n();
        assert_eq!(perm.len(), n);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut parent = vec![NONE; n];
        let mut flag = vec![NONE; n];
        let mut counts = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for s in pattern.row(perm[k]) {
                let mut i = inv[pattern.cols[s]];
                if i >= k {
                    continue;
                }
                while flag[i] != k {
                    if parent[i] == NONE {
                        parent[i] = k;
                    }
                    counts[i] += 1;
                    flag[i] = k;
                    i = parent[i];
                }
            }
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        col_ptr.push(0);
        for c in &counts {
            col_ptr.push(col_ptr.last().unwrap() + c);
        }
        Self {
            pattern,
            perm,
            inv,
            parent,
            col_ptr,
        }
    }

    pub fn factor_nnz(&self) -> usize {
        *self.col_ptr.last().unwrap()
    }

    /// Numeric factorization of a matrix on this pattern. Fails unless the
    /// matrix is positive definite.
    pub fn factor(self: &Arc<Self>, matrix: &SymMatrix) -> Result<LdlFactor> {
        assert_eq!(matrix.pattern.as_ref(), self.pattern.as_ref());
        let n = self.pattern.n();
        let nnz = self.factor_nnz();
        let mut li = vec![0usize; nnz];
        let mut lx = vec![0.0f64; nnz];
        let mut d = vec![0.0f64; n];
        let mut y = vec![0.0f64; n];
        let mut stack = vec![0usize; n];
        let mut flag = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            let old = self.perm[k];
            for s in self.pattern.row(old) {
                let mut i = self.inv[self.pattern.cols[s]];
                if i > k {
                    continue;
                }
                y[i] += matrix.values[s];
                let mut len = 0;
                while flag[i] != k {
                    stack[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = self.parent[i];
                }
                while len > 0 {
                    top -= 1;
                    len -= 1;
                    stack[top] = stack[len];
                }
            }
            d[k] = y[k];
            y[k] = 0.0;
            for &i in &stack[top..n] {
                let yi = y[i];
                y[i] = 0.0;
                let start = self.col_ptr[i];
                let end = start + lnz[i];
                for p in start..end {
                    y[li[p]] -= lx[p] * yi;
                }
                let l_ki = yi / d[i];
                d[k] -= l_ki * yi;
                li[end] = k;
                lx[end] = l_ki;
                lnz[i] += 1;
            }
            if !(d[k] > 0.0) || !d[k].is_finite() {
                return Err(Error::SolverFailure {
                    reason: format!("matrix not positive definite at pivot {k} (d = {:e})", d[k]),
                    residual: f64::NAN,
                });
            }
        }
        Ok(LdlFactor {
            symbolic: self.clone(),
            li,
            lx,
            d,
        })
    }
}

/// Numeric LDLᵀ factors; cheap to share across threads.
#[derive(Debug)]
pub struct LdlFactor {
    symbolic: Arc<LdlSymbolic>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
}

impl LdlFactor {
    pub fn n(&self) -> usize {
        self.d.len()
    }

    /// Solves `A x = b` in place, using `work` (length n) as scratch.
    pub fn solve_in_place(&self, b: &mut [f64], work: &mut [f64]) {
        let s = &self.symbolic;
        let n = self.n();
        for k in 0..n {
            work[k] = b[s.perm[k]];
        }
        for j in 0..n {
            let xj = work[j];
            if xj != 0.0 {
                for p in s.col_ptr[j]..s.col_ptr[j + 1] {
                    work[self.li[p]] -= self.lx[p] * xj;
                }
            }
        }
        for j in 0..n {
            work[j] /= self.d[j];
        }
        for j in (0..n).rev() {
            let mut xj = work[j];
            for p in s.col_ptr[j]..s.col_ptr[j + 1] {
                xj -= self.lx[p] * work[self.li[p]];
            }
            work[j] = xj;
        }
        for k in 0..n {
            b[s.perm[k]] = work[k];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        let mut work = vec![0.0; self.n()];
        self.solve_in_place(&mut x, &mut work);
        x
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
