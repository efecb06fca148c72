//! Sparse linear solves for the Newton system.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

#[derive(Debug, Clone, PartialEq)]
pub enum LinSolveError {
    Singular(String),
    NonFinite,
}

pub type Entry = Triplet<usize, usize, f64>;

fn build(nrows: usize, ncols: usize, entries: &[Entry]) -> Result<SparseColMat<usize, f64>, LinSolveError> {
    SparseColMat::try_new_from_triplets(nrows, ncols, entries).map_err(|e| LinSolveError::Singular(format!("{e:?}")))
}

fn column(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

/// Solve `J x = b` by sparse LU with partial pivoting. Duplicate entries are summed.
pub fn lu_solve(n: usize, entries: &[Entry], b: &[f64]) -> Result<Vec<f64>, LinSolveError> {
    let a = build(n, n, entries)?;
    let lu = a.sp_lu().map_err(|e| LinSolveError::Singular(format!("{e:?}")))?;
    let mut x = column(b);
    lu.solve_in_place(x.as_mut());
    let out: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(LinSolveError::NonFinite)
    }
}

/// Regularized least squares `min |J x - b|^2 + mu |D x|^2` through a sparse QR
/// of the stacked matrix `[J; sqrt(mu) D]`.
pub fn damped_lstsq(
    nrows: usize,
    ncols: usize,
    entries: &[Entry],
    b: &[f64],
    mu: f64,
    diag: &[f64],
) -> Result<Vec<f64>, LinSolveError> {
    let mut all = entries.to_vec();
    let s = mu.sqrt();
    for (j, d) in diag.iter().enumerate() {
        all.push(Triplet::new(nrows + j, j, s * d));
    }
    let a = build(nrows + ncols, ncols, &all)?;
    let qr = a.sp_qr().map_err(|e| LinSolveError::Singular(format!("{e:?}")))?;
    let mut rhs = vec![0.0; nrows + ncols];
    rhs[..nrows].copy_from_slice(b);
    let mut x = column(&rhs);
    qr.solve_lstsq_in_place(x.as_mut());
    let out: Vec<f64> = (0..ncols).map(|i| x[(i, 0)]).collect();
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(LinSolveError::NonFinite)
    }
}
