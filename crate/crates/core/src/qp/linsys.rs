//! Factorization of the reduced ADMM system `P + sigma I + A' diag(rho) A`.

use std::collections::BTreeSet;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix, CsrMatrix};

use super::LinearSolver;
use crate::error::QpError;

const DENSE_LIMIT: usize = 400;

pub(crate) enum ReducedKkt {
    Dense(Cholesky<f64, Dyn>),
    Sparse { chol: CscCholesky<f64>, perm: Vec<usize> },
}

impl ReducedKkt {
    pub(crate) fn factor(
        p: &CscMatrix<f64>,
        a_csc: &CscMatrix<f64>,
        a: &CsrMatrix<f64>,
        sigma: f64,
        rho: &[f64],
        solver: LinearSolver,
        perm_cache: &mut Option<Vec<usize>>,
    ) -> Result<Self, QpError> {
        let d = p.ncols();
        let dense = match solver {
            LinearSolver::Dense => true,
            LinearSolver::Sparse => false,
            LinearSolver::Auto => d <= DENSE_LIMIT,
        };
        let (cols, rows, vals) = assemble(p, a_csc, a, sigma, rho);
        if dense {
            let mut m = DMatrix::zeros(d, d);
            for j in 0..d {
                for k in cols[j]..cols[j + 1] {
                    m[(rows[k], j)] = vals[k];
                }
            }
            return Cholesky::new(m).map(ReducedKkt::Dense).ok_or(QpError::NotConvex);
        }
        let perm = perm_cache
            .get_or_insert_with(|| minimum_degree_order(d, &cols, &rows))
            .clone();
        let mut inverse = vec![0; d];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let mut coo = CooMatrix::new(d, d);
        for j in 0..d {
            for k in cols[j]..cols[j + 1] {
                coo.push(inverse[rows[k]], inverse[j], vals[k]);
            }
        }
        let permuted = CscMatrix::from(&coo);
        let chol = CscCholesky::factor(&permuted).map_err(|_| QpError::NotConvex)?;
        Ok(ReducedKkt::Sparse { chol, perm })
    }

    pub(crate) fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        match self {
            ReducedKkt::Dense(c) => c.solve(&DVector::from_column_slice(rhs)).as_slice().to_vec(),
            ReducedKkt::Sparse { chol, perm } => {
                let b = DMatrix::from_iterator(rhs.len(), 1, perm.iter().map(|&old| rhs[old]));
                let s = chol.solve(&b);
                let mut out = vec![0.0; rhs.len()];
                for (new, &old) in perm.iter().enumerate() {
                    out[old] = s[(new, 0)];
                }
                out
            }
        }
    }
}

/// Column-compressed `P + sigma I + A' diag(rho) A` with sorted row
/// indices, built column by column with a dense accumulator.
fn assemble(
    p: &CscMatrix<f64>,
    a_csc: &CscMatrix<f64>,
    a: &CsrMatrix<f64>,
    sigma: f64,
    rho: &[f64],
) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let d = p.ncols();
    let mut acc = vec![0.0; d];
    let mut mark = vec![usize::MAX; d];
    let mut touched = Vec::new();
    let mut cols = Vec::with_capacity(d + 1);
    let mut rows = Vec::new();
    let mut vals = Vec::new();
    cols.push(0);
    for j in 0..d {
        touched.clear();
        let mut add = |i: usize, v: f64, touched: &mut Vec<usize>| {
            if mark[i] != j {
                mark[i] = j;
                acc[i] = 0.0;
                touched.push(i);
            }
            acc[i] += v;
        };
        add(j, sigma, &mut touched);
        let pc = p.col(j);
        for (&i, &v) in pc.row_indices().iter().zip(pc.values()) {
            add(i, v, &mut touched);
        }
        let ac = a_csc.col(j);
        for (&r, &arj) in ac.row_indices().iter().zip(ac.values()) {
            let w = rho[r] * arj;
            let row = a.row(r);
            for (&k, &ark) in row.col_indices().iter().zip(row.values()) {
                add(k, w * ark, &mut touched);
            }
        }
        touched.sort_unstable();
        for &i in touched.iter() {
            rows.push(i);
            vals.push(acc[i]);
        }
        cols.push(rows.len());
    }
    (cols, rows, vals)
}

/// Greedy minimum-degree elimination order of a symmetric pattern given
/// in compressed-column form. Returns `perm` with `perm[new] = old`.
pub fn minimum_degree_order(d: usize, cols: &[usize], rows: &[usize]) -> Vec<usize> {
    let mut adj: Vec<BTreeSet<usize>> = (0..d)
        .map(|j| rows[cols[j]..cols[j + 1]].iter().copied().filter(|&i| i != j).collect())
        .collect();
    let mut eliminated = vec![false; d];
    let mut order = Vec::with_capacity(d);
    for _ in 0..d {
        let v = (0..d)
            .filter(|&i| !eliminated[i])
            .min_by_key(|&i| (adj[i].len(), i))
            .expect("remaining vertex");
        eliminated[v] = true;
        order.push(v);
        let nbrs: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &a in &nbrs {
            adj[a].remove(&v);
            adj[a].extend(nbrs.iter().copied().filter(|&b| b != a));
        }
    }
    order
}
