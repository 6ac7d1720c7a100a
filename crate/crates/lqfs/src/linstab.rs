//! Load-balancing geometry and drift-matrix stability.
//!
//! The routing rule confines fluid states to the manifold {My}: M maps
//! per-class totals to per-edge occupancies by balancing every pool to the
//! common load. Linearizing the fluid dynamics around the nominal point
//! gives A_u = G·M in underload and its projection A_c = π·A_u at critical
//! load; local stability is the spectral stability of these matrices.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::model::SystemSpec;
use crate::scalar::{fl, Real};

/// Which drift matrix a verdict refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    /// A_u: all eigenvalues count.
    Underload,
    /// A_c: one structural zero eigenvalue is verified simple and excluded.
    Critical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Classification {
    Stable,
    Unstable,
    Marginal,
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Classification::Stable => write!(f, "stable"),
            Classification::Unstable => write!(f, "unstable"),
            Classification::Marginal => write!(f, "marginal"),
        }
    }
}

/// Eigenvalues (sorted by real part, then imaginary part) with matching
/// right eigenvectors.
#[derive(Clone, Debug)]
pub struct Spectrum<F> {
    pub values: Vec<Complex<F>>,
    pub vectors: Vec<Vec<Complex<F>>>,
}

/// Spectral stability verdict for a drift matrix.
#[derive(Clone, Debug)]
pub struct StabilityVerdict<F: Real> {
    pub classification: Classification,
    /// Largest eigenvalue real part; for [`Kind::Critical`] the structural
    /// zero is excluded.
    pub max_real_part: F,
    /// |smallest eigenvalue| / ‖A‖, only for [`Kind::Critical`].
    pub zero_eigen_residual: Option<F>,
    /// Dimension of the convergent subspace (eigenvalues with Re < −tol).
    pub convergent_subspace_dim: usize,
    /// Orthonormal basis of the convergent subspace, one column per
    /// dimension.
    pub convergent_subspace: Mat<F>,
}

/// The matrices of the linearized fluid dynamics around the nominal point.
#[derive(Clone, Debug)]
pub struct DriftMatrices<F: Real> {
    /// (I+J−1)×I: per-class totals to per-edge occupancies.
    pub m: Mat<F>,
    /// I×(I+J−1): aggregation back to totals; M′M = I.
    pub m_prime: Mat<F>,
    /// I×(I+J−1): completion rates, G[i][e] = −μ_e on class-i edges.
    pub g: Mat<F>,
    /// A_u = G·M.
    pub a_u: Mat<F>,
    /// Orthogonal projection onto L = {y : Σ y_i = 0}.
    pub pi: Mat<F>,
    /// A_c = π·A_u.
    pub a_c: Mat<F>,
    pub eig_u: Spectrum<F>,
    pub eig_c: Spectrum<F>,
}

/// Load-balancing map M, by the component closed form.
///
/// Deleting edge (i₀,j₀) splits the tree; with B(S) = Σ_{j∈S} β_j,
///   M[(i₀,j₀)][i] = (B(pools on j₀ side)·[i on i₀ side]
///                  − B(pools on i₀ side)·[i on j₀ side]) / Σβ.
/// An independent leaf-elimination solve of the defining linear system must
/// agree (internal check, tolerance a few hundred ulps of the entries).
pub fn build_m<F: Real>(spec: &SystemSpec<F>) -> Result<Mat<F>> {
    spec.validated()?;
    let closed = build_m_closed(spec);
    let elim = build_m_elimination(spec);
    let tol = F::epsilon() * fl::<F>(4.5e3) * closed.max_abs().max(F::one());
    let diff = closed.max_abs_diff(&elim);
    if diff > tol {
        return Err(Error::Numerical(format!(
            "load-balancing map construction methods disagree by {diff}"
        )));
    }
    Ok(closed)
}

fn build_m_closed<F: Real>(spec: &SystemSpec<F>) -> Mat<F> {
    let total_beta = spec.total_beta();
    let mut m = Mat::zeros(spec.num_edges(), spec.num_classes());
    for k in 0..spec.num_edges() {
        let (class_side, pool_side) = spec.split_at_edge(k);
        let b_class_side: F = spec
            .beta()
            .iter()
            .zip(&pool_side)
            .filter(|&(_, &on)| on)
            .map(|(&b, _)| b)
            .sum();
        let b_pool_side = total_beta - b_class_side;
        for i in 0..spec.num_classes() {
            m[(k, i)] = if class_side[i] {
                b_pool_side / total_beta
            } else {
                -b_class_side / total_beta
            };
        }
    }
    m
}

/// Solves {Σ_j z_ij = y_i; Σ_i z_ij = β_j Σy/Σβ} by peeling leaves, one
/// basis vector y = e_i at a time.
fn build_m_elimination<F: Real>(spec: &SystemSpec<F>) -> Mat<F> {
    let i_count = spec.num_classes();
    let j_count = spec.num_pools();
    let n = i_count + j_count;
    let adj = spec.adjacency();
    let total_beta = spec.total_beta();
    let mut m = Mat::zeros(spec.num_edges(), i_count);

    for basis in 0..i_count {
        let eta = F::one() / total_beta;
        let mut value: Vec<F> = (0..n)
            .map(|k| {
                if k < i_count {
                    if k == basis {
                        F::one()
                    } else {
                        F::zero()
                    }
                } else {
                    eta * spec.beta()[k - i_count]
                }
            })
            .collect();
        let mut degree: Vec<usize> = (0..n)
            .map(|k| {
                if k < i_count {
                    adj.class_edges[k].len()
                } else {
                    adj.pool_edges[k - i_count].len()
                }
            })
            .collect();
        let mut edge_alive = vec![true; spec.num_edges()];
        let mut node_alive = vec![true; n];

        for _ in 0..spec.num_edges() {
            let leaf = (0..n)
                .find(|&k| node_alive[k] && degree[k] == 1)
                .expect("tree leaf");
            let incident = if leaf < i_count {
                &adj.class_edges[leaf]
            } else {
                &adj.pool_edges[leaf - i_count]
            };
            let e = *incident.iter().find(|&&e| edge_alive[e]).expect("one live edge");
            let edge = &spec.edges()[e];
            let other = if leaf < i_count {
                i_count + edge.pool
            } else {
                edge.class
            };
            let v = value[leaf];
            m[(e, basis)] = v;
            value[other] -= v;
            edge_alive[e] = false;
            node_alive[leaf] = false;
            degree[leaf] = 0;
            degree[other] -= 1;
        }
    }
    m
}

/// Aggregation matrix M′: row i sums a per-edge vector over 𝒮(i).
pub fn build_m_prime<F: Real>(spec: &SystemSpec<F>) -> Mat<F> {
    Mat::from_fn(spec.num_classes(), spec.num_edges(), |i, e| {
        if spec.edges()[e].class == i {
            F::one()
        } else {
            F::zero()
        }
    })
}

/// Completion-rate matrix G: G[i][e] = −μ_e on edges of class i.
pub fn build_g<F: Real>(spec: &SystemSpec<F>) -> Mat<F> {
    Mat::from_fn(spec.num_classes(), spec.num_edges(), |i, e| {
        if spec.edges()[e].class == i {
            -spec.edges()[e].mu
        } else {
            F::zero()
        }
    })
}

/// Underload drift matrix A_u = G·M, cross-checked against the per-entry
/// closed forms: the diagonal collects −μ_ij weighted by the pool mass on
/// the far side of each edge, and off-diagonals differ from the diagonal by
/// the single rate toward the other class.
pub fn build_au<F: Real>(spec: &SystemSpec<F>) -> Result<Mat<F>> {
    let m = build_m(spec)?;
    let g = build_g(spec);
    let a_u = g.matmul(&m);

    let closed = build_au_closed(spec);
    let tol = F::epsilon() * fl::<F>(4.5e3) * a_u.max_abs().max(F::one());
    let diff = a_u.max_abs_diff(&closed);
    if diff > tol {
        return Err(Error::Numerical(format!(
            "drift matrix closed form disagrees with G*M by {diff}"
        )));
    }
    Ok(a_u)
}

fn build_au_closed<F: Real>(spec: &SystemSpec<F>) -> Mat<F> {
    let i_count = spec.num_classes();
    let adj = spec.adjacency();
    let total_beta = spec.total_beta();
    let mut a = Mat::zeros(i_count, i_count);

    // Diagonal: (A_u)_ii = -(1/Σβ) Σ_{j∈S(i)} μ_ij B(pools beyond (i,j)).
    for i in 0..i_count {
        let mut acc = F::zero();
        for &e in &adj.class_edges[i] {
            let (_, pool_side_of_class) = spec.split_at_edge(e);
            let far_mass: F = spec
                .beta()
                .iter()
                .zip(&pool_side_of_class)
                .filter(|&(_, &on_class_side)| !on_class_side)
                .map(|(&b, _)| b)
                .sum();
            acc += spec.edges()[e].mu * far_mass;
        }
        a[(i, i)] = -acc / total_beta;
    }

    // Off-diagonal: (A_u)_{ii'} = (A_u)_{ii} + μ_{i, j(i→i')} where j(i→i')
    // is the pool neighboring i on the path toward i'.
    for i in 0..i_count {
        for ip in 0..i_count {
            if ip == i {
                continue;
            }
            let toward = adj.class_edges[i]
                .iter()
                .copied()
                .find(|&e| {
                    let (class_side, _) = spec.split_at_edge(e);
                    // Deleting (i,j) must strand i' on the pool side.
                    !class_side[ip]
                })
                .expect("tree connectivity");
            a[(i, ip)] = a[(i, i)] + spec.edges()[toward].mu;
        }
    }
    a
}

/// Orthogonal projection π = I − (1/I)·𝟙𝟙ᵀ onto L = {y : Σ y_i = 0}.
pub fn build_pi<F: Real>(i_count: usize) -> Mat<F> {
    let inv = F::one() / fl::<F>(i_count as f64);
    Mat::from_fn(i_count, i_count, |i, j| {
        if i == j {
            F::one() - inv
        } else {
            -inv
        }
    })
}

/// Critical drift matrix A_c = π·A_u.
pub fn build_ac<F: Real>(spec: &SystemSpec<F>) -> Result<Mat<F>> {
    let a_u = build_au(spec)?;
    Ok(build_pi(spec.num_classes()).matmul(&a_u))
}

/// Eigenvalues and right eigenvectors, sorted by (Re, Im).
pub fn spectrum<F: Real>(a: &Mat<F>) -> Result<Spectrum<F>> {
    let values = linalg::eigenvalues(a)?;
    let vectors = values
        .iter()
        .map(|&lambda| linalg::eigenvector(a, lambda))
        .collect::<Result<Vec<_>>>()?;
    Ok(Spectrum { values, vectors })
}

/// Classifies spectral stability with a marginal band of ±1e-8·‖A‖.
///
/// For [`Kind::Critical`] the eigenvalue of smallest modulus must lie within
/// the band and be the only one there; it is excluded from the verdict and
/// reported through `zero_eigen_residual`.
pub fn eigen_analysis<F: Real>(a: &Mat<F>, kind: Kind) -> Result<StabilityVerdict<F>> {
    let spec = spectrum(a)?;
    eigen_analysis_with(a, &spec, kind)
}

/// [`eigen_analysis`] on an already-computed spectrum.
pub fn eigen_analysis_with<F: Real>(
    a: &Mat<F>,
    spec: &Spectrum<F>,
    kind: Kind,
) -> Result<StabilityVerdict<F>> {
    let norm = a.norm_inf();
    let tol = fl::<F>(1e-8) * norm;
    let eigs = &spec.values;

    let (considered, zero_eigen_residual): (Vec<Complex<F>>, Option<F>) = match kind {
        Kind::Underload => (eigs.clone(), None),
        Kind::Critical => {
            let in_band: Vec<usize> = (0..eigs.len())
                .filter(|&k| eigs[k].norm() <= tol)
                .collect();
            if in_band.len() != 1 {
                return Err(Error::DegenerateSpectrum(format!(
                    "expected one simple zero eigenvalue within {tol}, found {} (eigenvalues {:?})",
                    in_band.len(),
                    eigs.iter()
                        .map(|e| (e.re.to_f64().unwrap_or(f64::NAN), e.im.to_f64().unwrap_or(f64::NAN)))
                        .collect::<Vec<_>>()
                )));
            }
            let zero = in_band[0];
            let residual = if norm > F::zero() {
                eigs[zero].norm() / norm
            } else {
                F::zero()
            };
            let rest = eigs
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != zero)
                .map(|(_, &e)| e)
                .collect();
            (rest, Some(residual))
        }
    };

    let max_real_part = considered
        .iter()
        .map(|e| e.re)
        .fold(F::neg_infinity(), F::max);
    let classification = if considered.is_empty() || max_real_part < -tol {
        Classification::Stable
    } else if max_real_part > tol {
        Classification::Unstable
    } else {
        Classification::Marginal
    };

    let basis = linalg::convergent_subspace(a, eigs, -tol);
    Ok(StabilityVerdict {
        classification,
        max_real_part,
        zero_eigen_residual,
        convergent_subspace_dim: basis.cols(),
        convergent_subspace: basis,
    })
}

/// Builds every matrix of the linearized dynamics along with both spectra.
pub fn build_drift<F: Real>(spec: &SystemSpec<F>) -> Result<DriftMatrices<F>> {
    let m = build_m(spec)?;
    let m_prime = build_m_prime(spec);
    let g = build_g(spec);
    let a_u = build_au(spec)?;
    let pi = build_pi(spec.num_classes());
    let a_c = pi.matmul(&a_u);
    let eig_u = spectrum(&a_u)?;
    let eig_c = spectrum(&a_c)?;
    Ok(DriftMatrices {
        m,
        m_prime,
        g,
        a_u,
        pi,
        a_c,
        eig_u,
        eig_c,
    })
}

/// Characteristic polynomial det(xI − A), ascending coefficients, n ≤ 8.
pub fn char_poly<F: Real>(a: &Mat<F>) -> Result<Vec<F>> {
    linalg::char_poly(a)
}

/// Routh test for x³ − c₂x² + c₁x − c₀.
///
/// Stable iff −c₂ > 0, c₁ > 0, −c₀ > 0 and c₂c₁ < c₀; the boundary case
/// (c₂c₁ = c₀, exact comparison, with the sign conditions holding) carries a
/// pure imaginary root pair.
pub fn routh3<F: Real>(c2: F, c1: F, c0: F) -> Classification {
    let signs = -c2 > F::zero() && c1 > F::zero() && -c0 > F::zero();
    if signs && c2 * c1 < c0 {
        Classification::Stable
    } else if signs && c2 * c1 == c0 {
        Classification::Marginal
    } else {
        Classification::Unstable
    }
}

/// Necessary (not sufficient) condition for x⁴ − c₁x³ + c₂x² − c₃x + c₄ to
/// have a pure imaginary root pair: returns c₄c₁² + c₃² − c₁c₂c₃, which must
/// vanish on such polynomials.
pub fn quartic_imaginary_condition<F: Real>(c1: F, c2: F, c3: F, c4: F) -> F {
    c4 * c1 * c1 + c3 * c3 - c1 * c2 * c3
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig1(beta1: f64, beta2: f64) -> SystemSpec<f64> {
        SystemSpec::new(
            &["A", "B"],
            &[("1", beta1), ("2", beta2)],
            &[("A", "1", 1.0), ("A", "2", 1.0), ("B", "2", 1.0)],
            &[("A", 1.0), ("B", 0.5)],
            None,
        )
        .unwrap()
    }

    #[test]
    fn m_matches_published_form() {
        let spec = fig1(0.3, 0.7);
        let m = build_m(&spec).unwrap();
        let s = 1.0;
        assert!((m[(0, 0)] - 0.3 / s).abs() < 1e-14);
        assert!((m[(0, 1)] - 0.3 / s).abs() < 1e-14);
        assert!((m[(1, 0)] - 0.7 / s).abs() < 1e-14);
        assert!((m[(1, 1)] + 0.3 / s).abs() < 1e-14);
        assert!(m[(2, 0)].abs() < 1e-14);
        assert!((m[(2, 1)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn m_prime_is_left_inverse() {
        let spec = fig1(0.4, 0.6);
        let m = build_m(&spec).unwrap();
        let mp = build_m_prime(&spec);
        let prod = mp.matmul(&m);
        assert!(prod.max_abs_diff(&Mat::identity(2)) < 1e-12);
    }

    #[test]
    fn single_edge_m_is_one() {
        let spec: SystemSpec<f64> = SystemSpec::new(
            &["A"],
            &[("1", 2.0)],
            &[("A", "1", 1.5)],
            &[("A", 1.0)],
            None,
        )
        .unwrap();
        let m = build_m(&spec).unwrap();
        assert_eq!(m.rows(), 1);
        assert!((m[(0, 0)] - 1.0).abs() < 1e-15);
        let a_u = build_au(&spec).unwrap();
        assert!((a_u[(0, 0)] + 1.5).abs() < 1e-15);
    }

    #[test]
    fn pooled_mu_gives_diagonal_au() {
        // mu_ij = mu_i: A_u = diag(-mu_i).
        let spec: SystemSpec<f64> = SystemSpec::new(
            &["A", "B"],
            &[("1", 0.5), ("2", 0.5)],
            &[("A", "1", 2.0), ("A", "2", 2.0), ("B", "2", 3.0)],
            &[("A", 1.0), ("B", 0.5)],
            None,
        )
        .unwrap();
        let a_u = build_au(&spec).unwrap();
        let want = Mat::diag(&[-2.0, -3.0]);
        assert!(a_u.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn ac_rows_killed_by_ones() {
        let spec = fig1(0.3, 0.7);
        let a_c = build_ac(&spec).unwrap();
        for j in 0..2 {
            let col_sum: f64 = (0..2).map(|i| a_c[(i, j)]).sum();
            assert!(col_sum.abs() < 1e-12);
        }
    }

    #[test]
    fn critical_verdict_excludes_zero() {
        let spec = fig1(0.3, 0.7);
        let a_c = build_ac(&spec).unwrap();
        let v = eigen_analysis(&a_c, Kind::Critical).unwrap();
        assert!(v.zero_eigen_residual.unwrap() < 1e-10);
        assert_eq!(v.classification, Classification::Stable);
        assert_eq!(v.convergent_subspace_dim, 1);
    }

    #[test]
    fn underload_verdict_stable_case() {
        let spec = fig1(0.3, 0.7);
        let a_u = build_au(&spec).unwrap();
        let v = eigen_analysis(&a_u, Kind::Underload).unwrap();
        assert_eq!(v.classification, Classification::Stable);
        assert_eq!(v.convergent_subspace_dim, 2);
        assert!(v.max_real_part < 0.0);
    }

    #[test]
    fn routh_known_cases() {
        // (x+1)^3 = x^3 + 3x^2 + 3x + 1.
        assert_eq!(routh3(-3.0, 3.0, -1.0), Classification::Stable);
        // (x-1)(x+1)(x+2): root at +1.
        // x^3 + 2x^2 - x - 2 => c2 = -2, c1 = -1, c0 = 2.
        assert_eq!(routh3(-2.0, -1.0, 2.0), Classification::Unstable);
        // (x^2+1)(x+1) = x^3 + x^2 + x + 1: boundary.
        assert_eq!(routh3(-1.0, 1.0, -1.0), Classification::Marginal);
    }

    #[test]
    fn quartic_condition_cases() {
        // (x^2-1)^2 = x^4 - 2x^2 + 1: c1=0, c2=-2, c3=0, c4=1.
        assert_eq!(quartic_imaginary_condition(0.0, -2.0, 0.0, 1.0), 0.0);
        // (x^2+1)(x^2+4) = x^4 + 5x^2 + 4.
        assert_eq!(quartic_imaginary_condition(0.0, 5.0, 0.0, 4.0), 0.0);
    }
}
