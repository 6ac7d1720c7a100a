use num_complex::Complex;

use super::lu::solve_complex;
use super::mat::Mat;
use super::qr::ColPivQr;
use crate::error::{Error, Result};
use crate::scalar::{fl, Real};

/// All eigenvalues of a real square matrix, sorted by (re, im).
///
/// Pipeline: norm balancing, orthogonal Hessenberg reduction, Francis
/// double-shift QR (EISPACK hqr lineage). No symmetry is assumed.
pub fn eigenvalues<F: Real>(a: &Mat<F>) -> Result<Vec<Complex<F>>> {
    assert!(a.is_square(), "eigenvalues need a square matrix");
    let n = a.rows();
    if n == 0 {
        return Ok(vec![]);
    }
    if n == 1 {
        return Ok(vec![Complex::new(a[(0, 0)], F::zero())]);
    }
    let mut h = a.clone();
    balance(&mut h);
    hessenberg(&mut h);
    let mut eigs = hqr(&mut h)?;
    eigs.sort_by(|x, y| {
        x.re.partial_cmp(&y.re)
            .unwrap()
            .then(x.im.partial_cmp(&y.im).unwrap())
    });
    Ok(eigs)
}

/// Norm-reducing diagonal similarity scaling (radix-2 balancing).
fn balance<F: Real>(a: &mut Mat<F>) {
    let n = a.rows();
    let radix = fl::<F>(2.0);
    let sqrdx = radix * radix;
    let done_factor = fl::<F>(0.95);
    loop {
        let mut last = true;
        for i in 0..n {
            let mut r = F::zero();
            let mut c = F::zero();
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c != F::zero() && r != F::zero() {
                let mut g = r / radix;
                let mut f = F::one();
                let s = c + r;
                let mut cc = c;
                while cc < g {
                    f *= radix;
                    cc *= sqrdx;
                }
                g = r * radix;
                while cc > g {
                    f /= radix;
                    cc /= sqrdx;
                }
                if (cc + r) / f < done_factor * s {
                    last = false;
                    let ginv = F::one() / f;
                    for j in 0..n {
                        a[(i, j)] = a[(i, j)] * ginv;
                    }
                    for j in 0..n {
                        a[(j, i)] = a[(j, i)] * f;
                    }
                }
            }
        }
        if last {
            break;
        }
    }
}

/// Orthogonal (Householder) reduction to upper Hessenberg form, in place.
fn hessenberg<F: Real>(h: &mut Mat<F>) {
    let n = h.rows();
    if n < 3 {
        return;
    }
    let high = n - 1;
    let mut ort = vec![F::zero(); n];

    for m in 1..high {
        let mut scale = F::zero();
        for i in m..=high {
            scale += h[(i, m - 1)].abs();
        }
        if scale == F::zero() {
            continue;
        }
        let mut hh = F::zero();
        for i in (m..=high).rev() {
            ort[i] = h[(i, m - 1)] / scale;
            hh += ort[i] * ort[i];
        }
        let mut g = hh.sqrt();
        if ort[m] > F::zero() {
            g = -g;
        }
        hh -= ort[m] * g;
        ort[m] -= g;

        // Similarity transform H <- (I - u uT/hh) H (I - u uT/hh).
        for j in m..n {
            let mut f = F::zero();
            for i in (m..=high).rev() {
                f += ort[i] * h[(i, j)];
            }
            f /= hh;
            for i in m..=high {
                h[(i, j)] = h[(i, j)] - f * ort[i];
            }
        }
        for i in 0..=high {
            let mut f = F::zero();
            for j in (m..=high).rev() {
                f += ort[j] * h[(i, j)];
            }
            f /= hh;
            for j in m..=high {
                h[(i, j)] = h[(i, j)] - f * ort[j];
            }
        }
        h[(m, m - 1)] = scale * g;
    }

    // Clear the sub-Hessenberg fill-in left by the reflectors.
    for i in 2..n {
        for j in 0..i - 1 {
            h[(i, j)] = F::zero();
        }
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix; destroys `h`.
fn hqr<F: Real>(h: &mut Mat<F>) -> Result<Vec<Complex<F>>> {
    let nn = h.rows();
    let mut eigs: Vec<Complex<F>> = Vec::with_capacity(nn);
    let mut n = nn as isize - 1;
    let low = 0isize;
    let eps = F::epsilon();
    let mut exshift = F::zero();
    let (mut p, mut q, mut r, mut s, mut z);
    let (mut x, mut y, mut w);

    let mut norm = F::zero();
    for i in 0..nn {
        for j in i.saturating_sub(1)..nn {
            norm += h[(i, j)].abs();
        }
    }
    if norm == F::zero() {
        return Ok(vec![Complex::new(F::zero(), F::zero()); nn]);
    }

    let mut iter = 0usize;
    let mut total_iter = 0usize;
    while n >= low {
        // Find a single small subdiagonal element.
        let mut l = n;
        while l > low {
            s = h[((l - 1) as usize, (l - 1) as usize)].abs() + h[(l as usize, l as usize)].abs();
            if s == F::zero() {
                s = norm;
            }
            if h[(l as usize, (l - 1) as usize)].abs() < eps * s {
                break;
            }
            l -= 1;
        }

        if l == n {
            // One real root.
            let v = h[(n as usize, n as usize)] + exshift;
            h[(n as usize, n as usize)] = v;
            eigs.push(Complex::new(v, F::zero()));
            n -= 1;
            iter = 0;
        } else if l == n - 1 {
            // Two roots from the trailing 2x2 block.
            let nu = n as usize;
            w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            p = (h[(nu - 1, nu - 1)] - h[(nu, nu)]) / fl::<F>(2.0);
            q = p * p + w;
            z = q.abs().sqrt();
            h[(nu, nu)] = h[(nu, nu)] + exshift;
            h[(nu - 1, nu - 1)] = h[(nu - 1, nu - 1)] + exshift;
            x = h[(nu, nu)];
            if q >= F::zero() {
                z = if p >= F::zero() { p + z } else { p - z };
                let e1 = x + z;
                let e2 = if z != F::zero() { x - w / z } else { e1 };
                eigs.push(Complex::new(e1, F::zero()));
                eigs.push(Complex::new(e2, F::zero()));
            } else {
                eigs.push(Complex::new(x + p, z));
                eigs.push(Complex::new(x + p, -z));
            }
            n -= 2;
            iter = 0;
        } else {
            // Form shift and iterate.
            let nu = n as usize;
            x = h[(nu, nu)];
            y = h[(nu - 1, nu - 1)];
            w = h[(nu, nu - 1)] * h[(nu - 1, nu)];

            if iter == 10 || iter == 20 {
                // Exceptional shift.
                exshift += x;
                for i in low..=n {
                    let d = h[(i as usize, i as usize)] - x;
                    h[(i as usize, i as usize)] = d;
                }
                s = h[(nu, nu - 1)].abs() + h[(nu - 1, nu - 2)].abs();
                x = fl::<F>(0.75) * s;
                y = x;
                w = fl::<F>(-0.4375) * s * s;
            }
            if iter == 30 {
                s = (y - x) / fl::<F>(2.0);
                s = s * s + w;
                if s > F::zero() {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / fl::<F>(2.0) + s);
                    for i in low..=n {
                        let d = h[(i as usize, i as usize)] - s;
                        h[(i as usize, i as usize)] = d;
                    }
                    exshift += s;
                    w = fl::<F>(0.964);
                    x = w;
                    y = w;
                }
            }
            iter += 1;
            total_iter += 1;
            if iter > 60 || total_iter > 120 * nn {
                return Err(Error::Numerical(
                    "QR eigenvalue iteration failed to converge".into(),
                ));
            }

            // Look for two consecutive small subdiagonal elements.
            let mut m = n - 2;
            loop {
                let mu = m as usize;
                z = h[(mu, mu)];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[(mu + 1, mu)] + h[(mu, mu + 1)];
                q = h[(mu + 1, mu + 1)] - z - r - s;
                r = h[(mu + 2, mu + 1)];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                if h[(mu, mu - 1)].abs() * (q.abs() + r.abs())
                    < eps
                        * (p.abs()
                            * (h[(mu - 1, mu - 1)].abs() + z.abs() + h[(mu + 1, mu + 1)].abs()))
                {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=n {
                let iu = i as usize;
                h[(iu, iu - 2)] = F::zero();
                if i > m + 2 {
                    h[(iu, iu - 3)] = F::zero();
                }
            }

            // Double QR sweep on rows l..=n, columns m..=n.
            for k in m..=(n - 1) {
                let ku = k as usize;
                let notlast = k != n - 1;
                if k != m {
                    p = h[(ku, ku - 1)];
                    q = h[(ku + 1, ku - 1)];
                    r = if notlast { h[(ku + 2, ku - 1)] } else { F::zero() };
                    x = p.abs() + q.abs() + r.abs();
                    if x == F::zero() {
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < F::zero() {
                    s = -s;
                }
                if s != F::zero() {
                    if k != m {
                        h[(ku, ku - 1)] = -s * x;
                    } else if l != m {
                        h[(ku, ku - 1)] = -h[(ku, ku - 1)];
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;

                    for j in ku..nn {
                        let mut pp = h[(ku, j)] + q * h[(ku + 1, j)];
                        if notlast {
                            pp += r * h[(ku + 2, j)];
                            h[(ku + 2, j)] = h[(ku + 2, j)] - pp * z;
                        }
                        h[(ku, j)] = h[(ku, j)] - pp * x;
                        h[(ku + 1, j)] = h[(ku + 1, j)] - pp * y;
                    }
                    let upper = (n).min(k + 3) as usize;
                    for i in 0..=upper {
                        let mut pp = x * h[(i, ku)] + y * h[(i, ku + 1)];
                        if notlast {
                            pp += z * h[(i, ku + 2)];
                            h[(i, ku + 2)] = h[(i, ku + 2)] - pp * r;
                        }
                        h[(i, ku)] = h[(i, ku)] - pp;
                        h[(i, ku + 1)] = h[(i, ku + 1)] - pp * q;
                    }
                }
            }
        }
    }
    Ok(eigs)
}

/// Right eigenvector for a computed eigenvalue, by inverse iteration on a
/// slightly perturbed shift. Deterministic; the largest component is
/// rotated to be real and positive.
pub fn eigenvector<F: Real>(a: &Mat<F>, lambda: Complex<F>) -> Result<Vec<Complex<F>>> {
    let n = a.rows();
    let scale = a.max_abs().max(lambda.norm()).max(F::one());
    // Perturb the shift off the exact eigenvalue so A - shift*I stays invertible.
    let pert = scale * F::epsilon().sqrt() * fl::<F>(0.01);
    let shift = lambda + Complex::new(pert, pert * fl::<F>(0.5));
    let mut m: Vec<Vec<Complex<F>>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let d = if i == j { shift } else { Complex::new(F::zero(), F::zero()) };
                    Complex::new(a[(i, j)], F::zero()) - d
                })
                .collect()
        })
        .collect();
    // Guard exact singularity (defective shifts): nudge once more if needed.
    let mut v: Vec<Complex<F>> = (0..n)
        .map(|i| Complex::new(F::one() + fl::<F>(0.1) * fl::<F>(i as f64), F::one()))
        .collect();
    for _ in 0..4 {
        let sol = match solve_complex(&m, &v) {
            Ok(s) => s,
            Err(_) => {
                let extra = Complex::new(pert * fl::<F>(10.0), F::zero());
                for (i, row) in m.iter_mut().enumerate() {
                    row[i] -= extra;
                }
                solve_complex(&m, &v)?
            }
        };
        let norm = sol.iter().fold(F::zero(), |s, c| s + c.norm_sqr()).sqrt();
        if norm == F::zero() {
            return Err(Error::Numerical("inverse iteration collapsed".into()));
        }
        v = sol.into_iter().map(|c| c / norm).collect();
    }
    // Canonical phase: largest component real positive.
    let (mut best, mut best_mag) = (0usize, F::zero());
    for (i, c) in v.iter().enumerate() {
        if c.norm() > best_mag {
            best_mag = c.norm();
            best = i;
        }
    }
    let phase = v[best] / v[best].norm();
    let rot = phase.conj();
    Ok(v.into_iter().map(|c| c * rot).collect())
}

/// Orthonormal basis of the invariant subspace belonging to the eigenvalues
/// with real part strictly below `threshold` (the convergent subspace).
///
/// Computed as the range of q(A) with q the polynomial vanishing on the
/// complementary eigenvalues (multiplicities included, conjugate pairs
/// merged into real quadratic factors), extracted by column-pivoted QR.
pub fn convergent_subspace<F: Real>(
    a: &Mat<F>,
    eigs: &[Complex<F>],
    threshold: F,
) -> Mat<F> {
    let n = a.rows();
    let stable: usize = eigs.iter().filter(|e| e.re < threshold).count();
    if stable == n {
        return Mat::identity(n);
    }
    if stable == 0 {
        return Mat::zeros(n, 0);
    }
    let mut b = Mat::identity(n);
    let mut skip_conj: Vec<Complex<F>> = Vec::new();
    for e in eigs.iter().filter(|e| e.re >= threshold) {
        if e.im != F::zero() {
            if let Some(pos) = skip_conj
                .iter()
                .position(|s| s.re == e.re && s.im == -e.im)
            {
                skip_conj.remove(pos);
                continue;
            }
            skip_conj.push(*e);
            // Real quadratic factor A^2 - 2 Re(e) A + |e|^2 I.
            let a2 = a.matmul(a);
            let f = a2
                .sub(&a.scale(fl::<F>(2.0) * e.re))
                .add(&Mat::identity(n).scale(e.norm_sqr()));
            b = f.matmul(&b);
        } else {
            let f = a.sub(&Mat::identity(n).scale(e.re));
            b = f.matmul(&b);
        }
        let m = b.max_abs();
        if m > F::zero() {
            b = b.scale(F::one() / m);
        }
    }
    ColPivQr::new(&b).q_columns(stable)
}
