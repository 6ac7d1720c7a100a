use super::lu::Lu;
use super::mat::Mat;
use crate::error::Result;
use crate::scalar::{fl, Real};

// Pade order thresholds for the 1-norm (double-precision backward-error
// bounds; conservative for f32, which only gains accuracy from them).
const THETA: [(usize, f64); 5] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
    (13, 5.371920351148152e0),
];

fn pade_coeffs(m: usize) -> &'static [f64] {
    match m {
        3 => &[120., 60., 12., 1.],
        5 => &[30240., 15120., 3360., 420., 30., 1.],
        7 => &[17297280., 8648640., 1995840., 277200., 25200., 1512., 56., 1.],
        9 => &[
            17643225600., 8821612800., 2075673600., 302702400., 30270240., 2162160., 110880.,
            3960., 90., 1.,
        ],
        13 => &[
            64764752532480000.,
            32382376266240000.,
            7771770303897600.,
            1187353796428800.,
            129060195264000.,
            10559470521600.,
            670442572800.,
            33522128640.,
            1323241920.,
            40840800.,
            960960.,
            16380.,
            182.,
            1.,
        ],
        _ => unreachable!("unsupported Pade order"),
    }
}

/// Matrix exponential by scaling-and-squaring with diagonal Pade
/// approximants of order 3/5/7/9/13 selected from the 1-norm.
pub fn expm<F: Real>(a: &Mat<F>) -> Result<Mat<F>> {
    assert!(a.is_square());
    let n = a.rows();
    let norm = a.norm_one().to_f64().unwrap_or(f64::INFINITY);

    for &(m, theta) in &THETA[..4] {
        if norm <= theta {
            return pade(a, m);
        }
    }

    let theta13 = THETA[4].1;
    let mut squarings = 0u32;
    let mut scaled = a.clone();
    if norm > theta13 {
        squarings = (norm / theta13).log2().ceil() as u32;
        let factor = fl::<F>(0.5f64.powi(squarings as i32));
        scaled = a.scale(factor);
    }
    let mut e = pade(&scaled, 13)?;
    for _ in 0..squarings {
        e = e.matmul(&e);
    }
    debug_assert_eq!(e.rows(), n);
    Ok(e)
}

fn pade<F: Real>(a: &Mat<F>, m: usize) -> Result<Mat<F>> {
    let n = a.rows();
    let b: Vec<F> = pade_coeffs(m).iter().map(|&c| fl::<F>(c)).collect();
    let ident = Mat::identity(n);
    let a2 = a.matmul(a);

    let (u, v) = if m == 13 {
        let a4 = a2.matmul(&a2);
        let a6 = a4.matmul(&a2);
        let w1 = a6
            .scale(b[13])
            .add(&a4.scale(b[11]))
            .add(&a2.scale(b[9]));
        let w = a6
            .matmul(&w1)
            .add(&a6.scale(b[7]))
            .add(&a4.scale(b[5]))
            .add(&a2.scale(b[3]))
            .add(&ident.scale(b[1]));
        let u = a.matmul(&w);
        let z1 = a6
            .scale(b[12])
            .add(&a4.scale(b[10]))
            .add(&a2.scale(b[8]));
        let v = a6
            .matmul(&z1)
            .add(&a6.scale(b[6]))
            .add(&a4.scale(b[4]))
            .add(&a2.scale(b[2]))
            .add(&ident.scale(b[0]));
        (u, v)
    } else {
        // U = A * sum b[2k+1] A^{2k},  V = sum b[2k] A^{2k}.
        let mut even = ident.clone(); // A^0
        let mut usum = ident.scale(b[1]);
        let mut vsum = ident.scale(b[0]);
        let mut k = 2;
        while k <= m {
            even = even.matmul(&a2);
            vsum = vsum.add(&even.scale(b[k]));
            if k + 1 <= m {
                usum = usum.add(&even.scale(b[k + 1]));
            }
            k += 2;
        }
        (a.matmul(&usum), vsum)
    };

    // (V - U)^-1 (V + U)
    let lhs = v.sub(&u);
    let rhs = v.add(&u);
    let lu = Lu::new(&lhs)?;
    Ok(lu.solve_mat(&rhs))
}
