//! Block-sparse symmetric normal equations with 3x3 blocks, and a sparse
//! block Cholesky factorization ordered by minimum degree on the block graph.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

/// Accumulator for one slice of the residuals; merged into a
/// [`NormalSystem`] in a fixed order.
#[derive(Debug, Clone, Default)]
pub struct BlockAccumulator {
    pub blocks: HashMap<(usize, usize), Matrix3<f64>>,
    pub rhs: HashMap<usize, Vector3<f64>>,
    pub cost: f64,
    pub residuals: usize,
}

impl BlockAccumulator {
    /// Adds `m` at block `(i, j)`; only the lower triangle (`i >= j`) is kept,
    /// so callers add each off-diagonal pair once.
    pub fn add_block(&mut self, i: usize, j: usize, m: &Matrix3<f64>) {
        if i >= j {
            *self.blocks.entry((i, j)).or_insert_with(Matrix3::zeros) += m;
        } else {
            *self.blocks.entry((j, i)).or_insert_with(Matrix3::zeros) += m.transpose();
        }
    }

    pub fn add_rhs(&mut self, i: usize, v: &Vector3<f64>) {
        *self.rhs.entry(i).or_insert_with(Vector3::zeros) += v;
    }
}

/// `H dx = b` over `n_states` pose blocks. Only the lower block triangle is
/// stored.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalSystem {
    n_states: usize,
    blocks: BTreeMap<(usize, usize), Matrix3<f64>>,
    rhs: Vec<Vector3<f64>>,
}

impl NormalSystem {
    pub fn new(n_states: usize) -> Self {
        Self {
            n_states,
            blocks: BTreeMap::new(),
            rhs: vec![Vector3::zeros(); n_states],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn dim(&self) -> usize {
        3 * self.n_states
    }

    /// Folds an accumulator in. Blocks are visited in key order so the sums
    /// do not depend on hash iteration order.
    pub fn merge(&mut self, acc: &BlockAccumulator) {
        let mut keys: Vec<_> = acc.blocks.keys().copied().collect();
        keys.sort_unstable();
        for k in keys {
            *self.blocks.entry(k).or_insert_with(Matrix3::zeros) += acc.blocks[&k];
        }
        for (&i, v) in &acc.rhs {
            self.rhs[i] += v;
        }
    }

    pub fn add_block(&mut self, i: usize, j: usize, m: &Matrix3<f64>) {
        if i >= j {
            *self.blocks.entry((i, j)).or_insert_with(Matrix3::zeros) += m;
        } else {
            *self.blocks.entry((j, i)).or_insert_with(Matrix3::zeros) += m.transpose();
        }
    }

    pub fn add_rhs(&mut self, i: usize, v: &Vector3<f64>) {
        self.rhs[i] += v;
    }

    pub fn block(&self, i: usize, j: usize) -> Option<Matrix3<f64>> {
        if i >= j {
            self.blocks.get(&(i, j)).copied()
        } else {
            self.blocks.get(&(j, i)).map(|m| m.transpose())
        }
    }

    pub fn rhs(&self) -> &[Vector3<f64>] {
        &self.rhs
    }

    pub fn rhs_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.rhs.iter().flat_map(|v| v.iter().copied()))
    }

    /// Nonzero block positions, both triangles, sorted.
    pub fn block_pattern(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(2 * self.blocks.len());
        for &(i, j) in self.blocks.keys() {
            out.push((i, j));
            if i != j {
                out.push((j, i));
            }
        }
        out.sort_unstable();
        out
    }

    /// Scalar nonzeros of the full symmetric matrix.
    pub fn nnz(&self) -> usize {
        self.blocks
            .iter()
            .map(|(&(i, j), m)| {
                let n = m.iter().filter(|v| **v != 0.0).count();
                if i == j {
                    n
                } else {
                    2 * n
                }
            })
            .sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dim(), self.dim());
        for (&(i, j), m) in &self.blocks {
            h.view_mut((3 * i, 3 * j), (3, 3)).copy_from(m);
            if i != j {
                h.view_mut((3 * j, 3 * i), (3, 3)).copy_from(&m.transpose());
            }
        }
        h
    }

    /// States whose diagonal block is (numerically) singular.
    pub fn weak_states(&self) -> Vec<usize> {
        let scale = (0..self.n_states)
            .filter_map(|i| self.block(i, i))
            .map(|m| m.diagonal().max())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        (0..self.n_states)
            .filter(|&i| match self.block(i, i) {
                None => true,
                Some(m) => {
                    let eig = m.symmetric_eigenvalues();
                    eig.min() <= 1e-12 * scale
                }
            })
            .collect()
    }

    /// Solves `(H + lambda * diag(H)) dx = b` with the sparse block Cholesky.
    /// On failure returns the state whose pivot broke down.
    pub fn solve(&self, lambda: f64) -> Result<DVector<f64>, usize> {
        let chol = BlockCholesky::factor(self, lambda)?;
        Ok(chol.solve(&self.rhs))
    }
}

/// Sparse `L L^T` factorization of a block matrix.
#[derive(Debug, Clone)]
pub struct BlockCholesky {
    /// `order[k]` is the state eliminated at position `k`.
    order: Vec<usize>,
    diag: Vec<Matrix3<f64>>,
    /// Below-diagonal blocks of column `k`: `(row position, L block)`.
    columns: Vec<Vec<(usize, Matrix3<f64>)>>,
}

/// Greedy minimum-degree elimination order and the resulting column
/// structure of `L` (in original state indices).
fn minimum_degree(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (i, j) in edges {
        if i != j {
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    let mut alive = vec![true; n];
    let mut order = Vec::with_capacity(n);
    let mut structure = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n)
            .filter(|&i| alive[i])
            .min_by_key(|&i| (adj[i].len(), i))
            .expect("a node remains");
        let nbrs: Vec<usize> = adj[v].iter().copied().collect();
        for &a in &nbrs {
            adj[a].remove(&v);
            for &b in &nbrs {
                if a != b {
                    adj[a].insert(b);
                }
            }
        }
        adj[v].clear();
        alive[v] = false;
        order.push(v);
        structure.push(nbrs);
    }
    (order, structure)
}

fn cholesky3(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let mut l = Matrix3::zeros();
    for j in 0..3 {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !d.is_finite() || d <= 0.0 {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..3 {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Solves `L x = b` for lower-triangular 3x3 `L`.
fn forward3(l: &Matrix3<f64>, b: &Vector3<f64>) -> Vector3<f64> {
    let x0 = b[0] / l[(0, 0)];
    let x1 = (b[1] - l[(1, 0)] * x0) / l[(1, 1)];
    let x2 = (b[2] - l[(2, 0)] * x0 - l[(2, 1)] * x1) / l[(2, 2)];
    Vector3::new(x0, x1, x2)
}

/// Solves `L^T x = b` for lower-triangular 3x3 `L`.
fn backward3(l: &Matrix3<f64>, b: &Vector3<f64>) -> Vector3<f64> {
    let x2 = b[2] / l[(2, 2)];
    let x1 = (b[1] - l[(2, 1)] * x2) / l[(1, 1)];
    let x0 = (b[0] - l[(1, 0)] * x1 - l[(2, 0)] * x2) / l[(0, 0)];
    Vector3::new(x0, x1, x2)
}

impl BlockCholesky {
    pub fn factor(sys: &NormalSystem, lambda: f64) -> Result<Self, usize> {
        let n = sys.n_states;
        let (order, structure) = minimum_degree(n, sys.blocks.keys().copied());
        let mut position = vec![0; n];
        for (k, &s) in order.iter().enumerate() {
            position[s] = k;
        }
        // working storage in permuted positions, lower triangle (row >= col)
        let mut work: HashMap<(usize, usize), Matrix3<f64>> = HashMap::new();
        for (&(i, j), m) in &sys.blocks {
            let (pi, pj) = (position[i], position[j]);
            let (key, val) = if pi >= pj {
                ((pi, pj), *m)
            } else {
                ((pj, pi), m.transpose())
            };
            work.insert(key, val);
        }
        let col_rows: Vec<Vec<usize>> = structure
            .iter()
            .map(|nbrs| {
                let mut rows: Vec<usize> = nbrs.iter().map(|&s| position[s]).collect();
                rows.sort_unstable();
                rows
            })
            .collect();

        let mut diag = Vec::with_capacity(n);
        let mut columns = Vec::with_capacity(n);
        for k in 0..n {
            let mut d = work.remove(&(k, k)).unwrap_or_else(Matrix3::zeros);
            if lambda > 0.0 {
                let scale = sys.block(order[k], order[k]).map_or(Matrix3::zeros(), |m| {
                    Matrix3::from_diagonal(&m.diagonal())
                });
                d += scale * lambda;
            }
            let lkk = cholesky3(&d).ok_or(order[k])?;
            let mut col = Vec::with_capacity(col_rows[k].len());
            for &i in &col_rows[k] {
                let a = work.remove(&(i, k)).unwrap_or_else(Matrix3::zeros);
                // L_ik = A_ik L_kk^-T  <=>  L_kk L_ik^T = A_ik^T
                let mut lik = Matrix3::zeros();
                for r in 0..3 {
                    let row = a.row(r).transpose();
                    lik.set_row(r, &forward3(&lkk, &row).transpose());
                }
                col.push((i, lik));
            }
            for (a, &(i, ref lik)) in col.iter().enumerate() {
                for &(j, ref ljk) in &col[..=a] {
                    // i >= j since rows are sorted
                    let upd = lik * ljk.transpose();
                    *work.entry((i, j)).or_insert_with(Matrix3::zeros) -= upd;
                }
            }
            diag.push(lkk);
            columns.push(col);
        }
        Ok(Self {
            order,
            diag,
            columns,
        })
    }

    pub fn solve(&self, rhs: &[Vector3<f64>]) -> DVector<f64> {
        let n = self.order.len();
        let mut y: Vec<Vector3<f64>> = self.order.iter().map(|&s| rhs[s]).collect();
        for k in 0..n {
            y[k] = forward3(&self.diag[k], &y[k]);
            let yk = y[k];
            for (i, lik) in &self.columns[k] {
                y[*i] -= lik * yk;
            }
        }
        for k in (0..n).rev() {
            let mut v = y[k];
            for (i, lik) in &self.columns[k] {
                v -= lik.transpose() * y[*i];
            }
            y[k] = backward3(&self.diag[k], &v);
        }
        let mut out = DVector::zeros(3 * n);
        for (k, &s) in self.order.iter().enumerate() {
            out.fixed_rows_mut::<3>(3 * s).copy_from(&y[k]);
        }
        out
    }

    /// Below-diagonal blocks of `L`, a measure of fill.
    pub fn fill_blocks(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }
}
