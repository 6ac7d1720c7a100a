use num_complex::Complex;

use super::eig::eigenvalues;
use super::mat::Mat;
use crate::error::{Error, Result};
use crate::scalar::{fl, Real};

/// Maximum dimension accepted by the characteristic-polynomial routine;
/// the trace recurrence loses accuracy quickly beyond this.
pub const CHAR_POLY_MAX_DIM: usize = 8;

/// Coefficients of det(xI - A) in ascending powers, monic
/// (`c[n] == 1`), via the Faddeev-LeVerrier trace recurrence.
pub fn char_poly<F: Real>(a: &Mat<F>) -> Result<Vec<F>> {
    assert!(a.is_square());
    let n = a.rows();
    if n > CHAR_POLY_MAX_DIM {
        return Err(Error::InvalidArgument(format!(
            "characteristic polynomial limited to dimension {CHAR_POLY_MAX_DIM}, got {n}"
        )));
    }
    let mut c = vec![F::zero(); n + 1];
    c[n] = F::one();
    let mut mk = Mat::identity(n);
    for k in 1..=n {
        let am = a.matmul(&mk);
        let tr = (0..n).fold(F::zero(), |s, i| s + am[(i, i)]);
        let ck = -tr / fl::<F>(k as f64);
        c[n - k] = ck;
        mk = am.add(&Mat::identity(n).scale(ck));
    }
    Ok(c)
}

/// Evaluates a polynomial with ascending real coefficients at a complex point.
pub fn eval_poly<F: Real>(coeffs: &[F], x: Complex<F>) -> Complex<F> {
    let mut acc = Complex::new(F::zero(), F::zero());
    for &c in coeffs.iter().rev() {
        acc = acc * x + Complex::new(c, F::zero());
    }
    acc
}

/// Expands prod (x - r_k) into ascending real coefficients. The imaginary
/// parts must cancel (conjugate-closed root set); they are dropped.
pub fn poly_from_roots<F: Real>(roots: &[Complex<F>]) -> Vec<F> {
    let mut coeffs: Vec<Complex<F>> = vec![Complex::new(F::one(), F::zero())];
    for r in roots {
        let mut next = vec![Complex::new(F::zero(), F::zero()); coeffs.len() + 1];
        for (k, &c) in coeffs.iter().enumerate() {
            next[k + 1] += c;
            next[k] -= c * r;
        }
        coeffs = next;
    }
    coeffs.into_iter().map(|c| c.re).collect()
}

/// Roots of a polynomial with ascending coefficients, via the companion
/// matrix of its monic normalization.
pub fn poly_roots<F: Real>(coeffs: &[F]) -> Result<Vec<Complex<F>>> {
    let mut c = coeffs.to_vec();
    while c.last().is_some_and(|v| *v == F::zero()) {
        c.pop();
    }
    if c.len() <= 1 {
        return Ok(vec![]);
    }
    let n = c.len() - 1;
    let lead = c[n];
    let comp = Mat::from_fn(n, n, |i, j| {
        if j == n - 1 {
            -c[i] / lead
        } else if i == j + 1 {
            F::one()
        } else {
            F::zero()
        }
    });
    eigenvalues(&comp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn char_poly_of_diag() {
        // diag(-1,-2): (x+1)(x+2) = x^2 + 3x + 2.
        let a: Mat<f64> = Mat::diag(&[-1.0, -2.0]);
        let c = char_poly(&a).unwrap();
        assert!((c[0] - 2.0).abs() < 1e-12);
        assert!((c[1] - 3.0).abs() < 1e-12);
        assert!((c[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn char_poly_rejects_large() {
        let a: Mat<f64> = Mat::identity(9);
        assert!(char_poly(&a).is_err());
    }

    #[test]
    fn roots_roundtrip() {
        // (x-1)(x+2)(x-3) = x^3 - 2x^2 - 5x + 6.
        let roots = poly_roots(&[6.0, -5.0, -2.0, 1.0]).unwrap();
        let mut re: Vec<f64> = roots.iter().map(|r| r.re).collect();
        re.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((re[0] + 2.0).abs() < 1e-9);
        assert!((re[1] - 1.0).abs() < 1e-9);
        assert!((re[2] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn from_roots_expands() {
        let roots = [
            Complex::new(1.0, 2.0),
            Complex::new(1.0, -2.0),
            Complex::new(-1.0, 0.0),
        ];
        // (x^2 - 2x + 5)(x + 1) = x^3 - x^2 + 3x + 5.
        let c: Vec<f64> = poly_from_roots(&roots);
        let want = [5.0, 3.0, -1.0, 1.0];
        for (got, want) in c.iter().zip(want) {
            assert!((got - want).abs() < 1e-12);
        }
    }
}
