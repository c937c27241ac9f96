use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{FactorGraph, Key, Values};

/// Block-sparse structure of the upper triangle of `JᵀJ`, stored column
/// compressed. Columns follow the key order of the graph.
#[derive(Debug, Clone)]
pub struct SparsityPattern {
    dim: usize,
    keys: Vec<(Key, usize)>,
    block_of: HashMap<Key, usize>,
    // Row blocks (strictly above the diagonal) present in each block column.
    col_blocks: Vec<Vec<usize>>,
    // Row offset inside a column at which each listed row block starts.
    col_block_starts: Vec<Vec<usize>>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    factor_blocks: Vec<Vec<usize>>,
    // For every factor, the in-column row offset of each block pair
    // `(i, j)` with `block_i ≤ block_j`, in loop order.
    factor_starts: Vec<Vec<usize>>,
}

impl SparsityPattern {
    pub fn new(graph: &FactorGraph) -> Self {
        let mut keys = Vec::with_capacity(graph.num_variables());
        let mut block_of = HashMap::with_capacity(graph.num_variables());
        let mut dim = 0;
        for (b, key) in graph.variables().enumerate() {
            keys.push((key, dim));
            block_of.insert(key, b);
            dim += key.dim();
        }

        let factor_blocks: Vec<Vec<usize>> = graph
            .factors()
            .iter()
            .map(|f| f.keys().iter().map(|k| block_of[k]).collect())
            .collect();

        let mut above: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); keys.len()];
        for blocks in &factor_blocks {
            for &a in blocks {
                for &b in blocks {
                    if a < b {
                        above[b].insert(a);
                    }
                }
            }
        }

        let mut col_blocks = Vec::with_capacity(keys.len());
        let mut col_block_starts = Vec::with_capacity(keys.len());
        let mut col_ptr = Vec::with_capacity(dim + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for (b, set) in above.into_iter().enumerate() {
            let rows: Vec<usize> = set.into_iter().collect();
            let mut starts = Vec::with_capacity(rows.len() + 1);
            let mut acc = 0;
            for &a in &rows {
                starts.push(acc);
                acc += keys[a].0.dim();
            }
            starts.push(acc);
            let (key, offset) = keys[b];
            for c in 0..key.dim() {
                for &a in &rows {
                    let (ka, oa) = keys[a];
                    row_idx.extend(oa..oa + ka.dim());
                }
                row_idx.extend(offset..=offset + c);
                col_ptr.push(row_idx.len());
            }
            col_blocks.push(rows);
            col_block_starts.push(starts);
        }

        let mut pattern =
            Self { dim, keys, block_of, col_blocks, col_block_starts, col_ptr, row_idx, factor_blocks, factor_starts: Vec::new() };
        pattern.factor_starts = pattern
            .factor_blocks
            .iter()
            .map(|blocks| {
                let mut starts = Vec::new();
                for &bi in blocks {
                    for &bj in blocks {
                        if bi <= bj {
                            starts.push(pattern.block_start(bi, bj));
                        }
                    }
                }
                starts
            })
            .collect();
        pattern
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    /// `(key, column offset)` pairs in column order.
    pub fn key_offsets(&self) -> impl Iterator<Item = (&Key, &usize)> {
        self.keys.iter().map(|(k, o)| (k, o))
    }

    pub fn offset_of(&self, key: &Key) -> Option<usize> {
        self.block_of.get(key).map(|&b| self.keys[b].1)
    }

    /// Row offset, inside every column of block `b`, at which row block
    /// `a ≤ b` starts.
    fn block_start(&self, a: usize, b: usize) -> usize {
        if a == b {
            *self.col_block_starts[b].last().expect("diagonal start")
        } else {
            let i = self.col_blocks[b].binary_search(&a).expect("block in pattern");
            self.col_block_starts[b][i]
        }
    }

    /// Index of the diagonal entry of column `col`.
    pub(crate) fn diagonal_position(&self, col: usize) -> usize {
        self.col_ptr[col + 1] - 1
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gauss–Newton normal equations `H δ = −g` with `H = JᵀJ` (upper triangle)
/// and `g = Jᵀr`.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub(crate) pattern: Arc<SparsityPattern>,
    pub(crate) hessian: Vec<f64>,
    pub(crate) gradient: DVector<f64>,
    pub(crate) cost: f64,
    pub(crate) active_factors: usize,
}

impl NormalEquations {
    pub(crate) fn assemble(
        graph: &FactorGraph,
        pattern: &Arc<SparsityPattern>,
        values: &Values,
    ) -> Self {
        let lins = graph.linearize_all(values);
        let mut hessian = vec![0.0; pattern.nnz()];
        let mut gradient = DVector::zeros(pattern.dim());
        let mut cost = 0.0;
        let mut active = 0;

        for ((blocks, starts), lin) in pattern.factor_blocks.iter().zip(&pattern.factor_starts).zip(&lins) {
            let Some(lin) = lin else { continue };
            debug_assert_eq!(blocks.len(), lin.jacobians.len());
            active += 1;
            let res = lin.residual.as_slice();
            cost += 0.5 * lin.residual.norm_squared();
            let m = res.len();
            let mut pair = 0;
            for (i, &bi) in blocks.iter().enumerate() {
                let ji = lin.jacobians[i].as_slice();
                let oi = pattern.keys[bi].1;
                let di = ji.len() / m.max(1);
                for r in 0..di {
                    let col = &ji[r * m..(r + 1) * m];
                    gradient[oi + r] += dot(col, res);
                }
                for (j, &bj) in blocks.iter().enumerate() {
                    if bi > bj {
                        continue;
                    }
                    let jj = lin.jacobians[j].as_slice();
                    let oj = pattern.keys[bj].1;
                    let dj = jj.len() / m.max(1);
                    let start = starts[pair];
                    pair += 1;
                    for c in 0..dj {
                        let cj = &jj[c * m..(c + 1) * m];
                        let base = pattern.col_ptr[oj + c] + start;
                        let rows = if bi == bj { c + 1 } else { di };
                        for r in 0..rows {
                            hessian[base + r] += dot(&ji[r * m..(r + 1) * m], cj);
                        }
                    }
                }
            }
        }

        Self { pattern: Arc::clone(pattern), hessian, gradient, cost, active_factors: active }
    }

    pub fn pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    pub fn gradient(&self) -> &DVector<f64> {
        &self.gradient
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn active_factors(&self) -> usize {
        self.active_factors
    }

    /// Upper-triangular CSC values matching `pattern().row_idx()`.
    pub fn hessian_values(&self) -> &[f64] {
        &self.hessian
    }

    /// Full symmetric `JᵀJ` as a dense matrix.
    pub fn hessian_dense(&self) -> DMatrix<f64> {
        let n = self.pattern.dim();
        let mut h = DMatrix::zeros(n, n);
        for col in 0..n {
            for p in self.pattern.col_ptr[col]..self.pattern.col_ptr[col + 1] {
                let row = self.pattern.row_idx[p];
                h[(row, col)] += self.hessian[p];
                if row != col {
                    h[(col, row)] += self.hessian[p];
                }
            }
        }
        h
    }
}
