use num_complex::Complex;

use super::mat::Mat;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// LU decomposition with partial pivoting: P·A = L·U.
pub struct Lu<F> {
    lu: Mat<F>,
    perm: Vec<usize>,
    sign: i8,
}

impl<F: Real> Lu<F> {
    pub fn new(a: &Mat<F>) -> Result<Self> {
        assert!(a.is_square(), "LU requires a square matrix");
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1i8;

        for k in 0..n {
            let mut p = k;
            let mut best = lu[(k, k)].abs();
            for i in k + 1..n {
                if lu[(i, k)].abs() > best {
                    best = lu[(i, k)].abs();
                    p = i;
                }
            }
            if best == F::zero() {
                return Err(Error::Numerical(format!(
                    "singular matrix in LU at column {k}"
                )));
            }
            if p != k {
                for j in 0..n {
                    let t = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = t;
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let m = lu[(i, k)] / pivot;
                lu[(i, k)] = m;
                for j in k + 1..n {
                    let s = lu[(k, j)];
                    lu[(i, j)] = lu[(i, j)] - m * s;
                }
            }
        }
        Ok(Lu { lu, perm, sign })
    }

    pub fn solve(&self, b: &[F]) -> Vec<F> {
        let n = self.lu.rows();
        assert_eq!(b.len(), n);
        let mut x: Vec<F> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            for j in 0..i {
                let m = self.lu[(i, j)];
                let s = x[j];
                x[i] = x[i] - m * s;
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let m = self.lu[(i, j)];
                let s = x[j];
                x[i] = x[i] - m * s;
            }
            x[i] = x[i] / self.lu[(i, i)];
        }
        x
    }

    pub fn solve_mat(&self, b: &Mat<F>) -> Mat<F> {
        let n = self.lu.rows();
        assert_eq!(b.rows(), n);
        let mut out = Mat::zeros(n, b.cols());
        for j in 0..b.cols() {
            let col = self.solve(&b.column(j));
            for i in 0..n {
                out[(i, j)] = col[i];
            }
        }
        out
    }

    pub fn det(&self) -> F {
        let n = self.lu.rows();
        let mut d = if self.sign > 0 { F::one() } else { -F::one() };
        for i in 0..n {
            d = d * self.lu[(i, i)];
        }
        d
    }

    pub fn inverse(&self) -> Mat<F> {
        self.solve_mat(&Mat::identity(self.lu.rows()))
    }
}

/// Determinant convenience wrapper; zero for exactly singular input.
pub fn det<F: Real>(a: &Mat<F>) -> F {
    match Lu::new(a) {
        Ok(lu) => lu.det(),
        Err(_) => F::zero(),
    }
}

/// Solves the dense complex system A·x = b by partially pivoted Gaussian
/// elimination. Used by inverse iteration for eigenvectors.
pub fn solve_complex<F: Real>(a: &[Vec<Complex<F>>], b: &[Complex<F>]) -> Result<Vec<Complex<F>>> {
    let n = a.len();
    assert!(a.iter().all(|r| r.len() == n) && b.len() == n);
    let mut m: Vec<Vec<Complex<F>>> = a.to_vec();
    let mut x: Vec<Complex<F>> = b.to_vec();

    for k in 0..n {
        let mut p = k;
        let mut best = m[k][k].norm_sqr();
        for i in k + 1..n {
            let v = m[i][k].norm_sqr();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best == F::zero() {
            return Err(Error::Numerical("singular complex system".into()));
        }
        m.swap(k, p);
        x.swap(k, p);
        let pivot = m[k][k];
        for i in k + 1..n {
            let f = m[i][k] / pivot;
            m[i][k] = Complex::new(F::zero(), F::zero());
            for j in k + 1..n {
                let s = m[k][j];
                m[i][j] = m[i][j] - f * s;
            }
            let s = x[k];
            x[i] = x[i] - f * s;
        }
    }
    for i in (0..n).rev() {
        for j in i + 1..n {
            let s = x[j];
            let c = m[i][j];
            x[i] = x[i] - c * s;
        }
        x[i] = x[i] / m[i][i];
    }
    Ok(x)
}
