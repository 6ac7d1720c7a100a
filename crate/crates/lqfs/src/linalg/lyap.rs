use super::lu::Lu;
use super::mat::Mat;
use crate::error::Result;
use crate::scalar::Real;

/// Solves the continuous Lyapunov equation A·X + X·Aᵀ + C = 0 by the
/// Kronecker vectorization (I⊗A + A⊗I)·vec(X) = −vec(C). Dense n²×n²
/// solve; intended for the small matrices this crate works with.
pub fn solve_lyapunov<F: Real>(a: &Mat<F>, c: &Mat<F>) -> Result<Mat<F>> {
    assert!(a.is_square() && c.is_square());
    assert_eq!(a.rows(), c.rows());
    let n = a.rows();
    let nn = n * n;
    // Column-major vec: index (i, j) -> i + j*n.
    let mut k = Mat::zeros(nn, nn);
    for i in 0..n {
        for j in 0..n {
            let row = i + j * n;
            for l in 0..n {
                // (I ⊗ A): A X term.
                k[(row, l + j * n)] += a[(i, l)];
                // (A ⊗ I): X Aᵀ term, vec(X Aᵀ)_(i,j) = sum_l X[i,l] A[j,l].
                k[(row, i + l * n)] += a[(j, l)];
            }
        }
    }
    let rhs: Vec<F> = (0..nn).map(|idx| -c[(idx % n, idx / n)]).collect();
    let x = Lu::new(&k)?.solve(&rhs);
    Ok(Mat::from_fn(n, n, |i, j| x[i + j * n]))
}
