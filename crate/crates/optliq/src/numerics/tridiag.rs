//! Symmetric block-tridiagonal linear solve (block Thomas algorithm).

use nalgebra::{DMatrix, DVector};

/// Solves `H x = rhs` where `H` is symmetric block tridiagonal with
/// `diag[i]` on the block diagonal and `lower[i]` connecting block `i+1`
/// to block `i` (so the upper blocks are `lower[i]^T`).
///
/// Consumes the inputs; returns `None` if a pivot block is not positive
/// definite (the caller is expected to add damping and retry).
pub fn solve_block_tridiag(
    mut diag: Vec<DMatrix<f64>>,
    lower: &[DMatrix<f64>],
    mut rhs: Vec<DVector<f64>>,
) -> Option<Vec<DVector<f64>>> {
    let n = diag.len();
    assert_eq!(lower.len() + 1, n.max(1));
    assert_eq!(rhs.len(), n);
    if n == 0 {
        return Some(vec![]);
    }

    // Forward elimination: diag[i] becomes the Schur complement pivot.
    let mut factors: Vec<nalgebra::Cholesky<f64, nalgebra::Dyn>> = Vec::with_capacity(n);
    factors.push(nalgebra::Cholesky::new(diag[0].clone())?);
    for i in 1..n {
        // w = pivot^{-1} * lower[i-1]^T
        let lt = lower[i - 1].transpose();
        let w = factors[i - 1].solve(&lt);
        let update = &lower[i - 1] * &w;
        diag[i] -= update;
        let y = factors[i - 1].solve(&rhs[i - 1]);
        let corr = &lower[i - 1] * &y;
        rhs[i] -= corr;
        factors.push(nalgebra::Cholesky::new(diag[i].clone())?);
    }

    // Back substitution.
    let mut x: Vec<DVector<f64>> = vec![DVector::zeros(0); n];
    x[n - 1] = factors[n - 1].solve(&rhs[n - 1]);
    for i in (0..n - 1).rev() {
        let corr = lower[i].transpose() * &x[i + 1];
        let adjusted = &rhs[i] - corr;
        x[i] = factors[i].solve(&adjusted);
    }
    Some(x)
}
