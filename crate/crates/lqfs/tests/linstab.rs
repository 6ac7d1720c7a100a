mod common;

use common::{non_leaf_classes, random_system, random_system_where, with_beta, MuKind, TreeOpts};
use lqfs::linalg::{expm, Mat};
use lqfs::linstab::{
    build_ac, build_drift, build_pi, char_poly, eigen_analysis, routh3, spectrum, Classification,
    Kind,
};
use lqfs::model::{remove_customer_leaf, remove_server_leaf, expand_server, SystemSpec};
use lqfs::registry;
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn aggregation_inverts_the_balancing_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let spec = random_system(&mut rng, &TreeOpts::new(6, 6, MuKind::Free, 0.8));
        let dm = build_drift(&spec).unwrap();
        let prod = dm.m_prime.matmul(&dm.m);
        let eye = Mat::<f64>::identity(spec.num_classes());
        assert!(prod.max_abs_diff(&eye) < 1e-12);

        // G holds the completion rates of the linearization and nothing else.
        for (e, edge) in spec.edges().iter().enumerate() {
            for i in 0..spec.num_classes() {
                let want = if i == edge.class { -edge.mu } else { 0.0 };
                assert_eq!(dm.g[(i, e)], want);
            }
        }
        assert!(dm.a_u.max_abs_diff(&dm.g.matmul(&dm.m)) == 0.0);
        assert!(dm.a_c.max_abs_diff(&dm.pi.matmul(&dm.a_u)) == 0.0);
    }
}

#[test]
fn drift_matrices_ignore_arrival_rates() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..25 {
        let spec = random_system(&mut rng, &TreeOpts::new(5, 5, MuKind::Free, 0.7));
        let other = spec.with_lambda(
            spec.lambda()
                .iter()
                .enumerate()
                .map(|(i, l)| l * (1.0 + 0.37 * (i + 1) as f64))
                .collect(),
        );
        let a = build_drift(&spec).unwrap();
        let b = build_drift(&other).unwrap();
        // Bit-for-bit: the construction never reads the rates.
        assert!(a.a_u.max_abs_diff(&b.a_u) == 0.0);
        assert!(a.a_c.max_abs_diff(&b.a_c) == 0.0);
        assert!(a.m.max_abs_diff(&b.m) == 0.0);
    }
}

#[test]
fn char_poly_is_consistent_with_the_spectrum() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..60 {
        let spec = random_system(&mut rng, &TreeOpts::new(6, 6, MuKind::Free, 0.8));
        let dm = build_drift(&spec).unwrap();
        let coeffs = char_poly(&dm.a_u).unwrap();
        let n = spec.num_classes();
        assert_eq!(coeffs.len(), n + 1);
        assert_eq!(coeffs[n], 1.0);

        let trace: f64 = (0..n).map(|i| dm.a_u[(i, i)]).sum();
        assert!(
            (coeffs[n - 1] + trace).abs() <= 1e-9 * trace.abs().max(1.0),
            "x^(n-1) coefficient must be -trace"
        );

        for &lambda in &dm.eig_u.values {
            let mut p = Complex::new(0.0, 0.0);
            let mut scale = 0.0f64;
            let mut pw = Complex::new(1.0, 0.0);
            for &c in &coeffs {
                p += pw * c;
                scale += pw.norm() * c.abs().max(1.0);
                pw *= lambda;
            }
            assert!(p.norm() <= 1e-8 * scale, "p(lambda) = {p} at {lambda}");
        }
    }
}

#[test]
fn routh_test_agrees_with_the_spectrum_on_cubics() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let mut checked = 0;
    for _ in 0..200 {
        let spec = random_system_where(
            &mut rng,
            &TreeOpts::new(3, 6, MuKind::Free, 0.8),
            |s| s.num_classes() == 3,
        );
        let dm = build_drift(&spec).unwrap();
        let verdict = eigen_analysis(&dm.a_u, Kind::Underload).unwrap();
        if verdict.max_real_part.abs() <= 1e-6 * dm.a_u.norm_inf() {
            continue; // too close to the boundary for an exact-sign test
        }
        // det(xI - A) = x^3 + a2 x^2 + a1 x + a0; routh3 speaks the
        // sign-alternated convention x^3 - c2 x^2 + c1 x - c0.
        let coeffs = char_poly(&dm.a_u).unwrap();
        let routh = routh3(-coeffs[2], coeffs[1], -coeffs[0]);
        assert_eq!(routh, verdict.classification);
        checked += 1;
    }
    assert!(checked >= 150, "only {checked} cases away from the boundary");
}

fn assert_stable(spec: &SystemSpec<f64>, kind: Kind, what: &str) {
    let a = match kind {
        Kind::Underload => build_drift(spec).unwrap().a_u,
        Kind::Critical => build_ac(spec).unwrap(),
    };
    let verdict = eigen_analysis(&a, kind).unwrap();
    assert_eq!(
        verdict.classification,
        Classification::Stable,
        "{what}: max Re = {}, spec = {}",
        verdict.max_real_part,
        spec.to_json()
    );
}

#[test]
fn pool_dependent_rates_are_always_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    for _ in 0..25 {
        let spec = random_system(&mut rng, &TreeOpts::new(6, 6, MuKind::PerPool, 0.9));
        assert_stable(&spec, Kind::Underload, "mu_ij = mu_j underload");
        assert_stable(&spec, Kind::Critical, "mu_ij = mu_j critical");
    }
}

#[test]
fn class_dependent_rates_are_always_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    for _ in 0..25 {
        let spec = random_system(&mut rng, &TreeOpts::new(6, 6, MuKind::PerClass, 0.9));
        assert_stable(&spec, Kind::Underload, "mu_ij = mu_i underload");
        assert_stable(&spec, Kind::Critical, "mu_ij = mu_i critical");
    }
}

#[test]
fn two_hub_trees_are_stable_in_underload() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    for _ in 0..25 {
        let spec = random_system_where(
            &mut rng,
            &TreeOpts::new(6, 6, MuKind::Free, 0.8),
            |s| non_leaf_classes(s) <= 2,
        );
        assert_stable(&spec, Kind::Underload, "<=2 non-leaf classes");
    }
}

#[test]
fn small_critical_systems_are_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(38);
    for _ in 0..25 {
        let spec = random_system(&mut rng, &TreeOpts::new(4, 6, MuKind::Free, 1.0));
        assert_stable(&spec, Kind::Critical, "I <= 4 critical");
    }
}

/// Strips, for every eigenvalue of `sub`, its nearest match in `sup`;
/// returns the leftovers. Panics when a match exceeds `tol`.
fn spectral_difference(
    sup: &[Complex<f64>],
    sub: &[Complex<f64>],
    tol: f64,
) -> Vec<Complex<f64>> {
    let mut pool: Vec<Complex<f64>> = sup.to_vec();
    for &e in sub {
        let (k, d) = pool
            .iter()
            .enumerate()
            .map(|(k, &p)| (k, (p - e).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("superset is larger");
        assert!(d <= tol, "eigenvalue {e} has no match within {tol} (best {d})");
        pool.swap_remove(k);
    }
    pool
}

#[test]
fn customer_leaf_removal_strips_its_service_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(39);
    for _ in 0..25 {
        let spec = random_system_where(
            &mut rng,
            &TreeOpts::new(6, 5, MuKind::Free, 0.8),
            |s| {
                s.num_classes() > 1
                    && s.adjacency().class_edges.iter().any(|es| es.len() == 1)
            },
        );
        let adj = spec.adjacency();
        let leaf = (0..spec.num_classes())
            .find(|&i| adj.class_edges[i].len() == 1)
            .unwrap();
        let mu = spec.edges()[adj.class_edges[leaf][0]].mu;

        let full = spectrum(&build_drift(&spec).unwrap().a_u).unwrap();
        let reduced = remove_customer_leaf(&spec, leaf).unwrap();
        let rest = spectrum(&build_drift(&reduced).unwrap().a_u).unwrap();
        let leftover = spectral_difference(&full.values, &rest.values, 1e-8);
        assert_eq!(leftover.len(), 1);
        assert!(
            (leftover[0] - Complex::new(-mu, 0.0)).norm() < 1e-8,
            "leftover {} vs -mu = {}",
            leftover[0],
            -mu
        );
    }
}

#[test]
fn server_leaf_surgery_preserves_the_critical_verdict() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for case in 0..25 {
        let spec = random_system_where(
            &mut rng,
            &TreeOpts::new(5, 5, MuKind::Free, 1.0),
            |s| {
                s.num_pools() > 1 && {
                    let adj = s.adjacency();
                    (0..s.num_pools()).any(|j| {
                        adj.pool_edges[j].len() == 1 && {
                            let e = &s.edges()[adj.pool_edges[j][0]];
                            s.lambda()[e.class] > s.beta()[j] * e.mu + 1e-6
                        }
                    })
                }
            },
        );
        let verdict = |s: &SystemSpec<f64>| {
            eigen_analysis(&build_ac(s).unwrap(), Kind::Critical)
                .unwrap()
                .classification
        };
        let base = verdict(&spec);
        if base == Classification::Marginal {
            continue;
        }

        let adj = spec.adjacency();
        let leaf = (0..spec.num_pools())
            .find(|&j| {
                adj.pool_edges[j].len() == 1 && {
                    let e = &spec.edges()[adj.pool_edges[j][0]];
                    spec.lambda()[e.class] > spec.beta()[j] * e.mu + 1e-6
                }
            })
            .unwrap();
        let removed = remove_server_leaf(&spec, leaf).unwrap();
        assert_eq!(verdict(&removed), base, "removal flipped case {case}");

        // Expansion: split a random pool around a random anchor.
        let pool = rng.gen_range(0..spec.num_pools());
        let neighbors: Vec<usize> = adj.pool_edges[pool]
            .iter()
            .map(|&k| spec.edges()[k].class)
            .collect();
        let anchor = neighbors[rng.gen_range(0..neighbors.len())];
        let others: Vec<usize> = neighbors.into_iter().filter(|&c| c != anchor).collect();
        let cut = rng.gen_range(0..=others.len());
        let grown = expand_server(&spec, pool, anchor, &others[..cut], &others[cut..], 0.5)
            .unwrap();
        assert_eq!(verdict(&grown), base, "expansion flipped case {case}");
    }
}

#[test]
fn beta_changes_leave_the_projected_critical_drift_fixed() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..25 {
        let spec = random_system(&mut rng, &TreeOpts::new(5, 5, MuKind::Free, 1.0));
        let pi = build_pi::<f64>(spec.num_classes());
        let base = {
            let ac = build_ac(&spec).unwrap();
            pi.matmul(&ac).matmul(&pi)
        };
        for _ in 0..2 {
            let beta: Vec<f64> = spec.beta().iter().map(|b| b * rng.gen_range(0.5..2.0)).collect();
            let perturbed = with_beta(&spec, &beta);
            let moved = {
                let ac = build_ac(&perturbed).unwrap();
                pi.matmul(&ac).matmul(&pi)
            };
            assert!(
                base.max_abs_diff(&moved) < 1e-9,
                "pi a_c pi moved by {}",
                base.max_abs_diff(&moved)
            );
        }
    }
}


#[test]
fn eigenpairs_have_small_residuals() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..40 {
        let spec = random_system(&mut rng, &TreeOpts::new(6, 6, MuKind::Free, 0.8));
        let dm = build_drift(&spec).unwrap();
        for (lambda, v) in dm.eig_u.values.iter().zip(&dm.eig_u.vectors) {
            let vnorm: f64 = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            assert!(vnorm > 0.0);
            let n = spec.num_classes();
            let mut worst = 0.0f64;
            for i in 0..n {
                let mut av = Complex::new(0.0, 0.0);
                for (k, &vk) in v.iter().enumerate() {
                    av += vk * dm.a_u[(i, k)];
                }
                worst = worst.max((av - lambda * v[i]).norm());
            }
            assert!(
                worst <= 1e-8 * dm.a_u.norm_inf().max(1.0) * vnorm,
                "residual {worst} at {lambda}"
            );
        }
    }
}

#[test]
fn convergent_subspace_is_invariant_and_contracting() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..40 {
        let spec = random_system(&mut rng, &TreeOpts::new(6, 6, MuKind::Free, 0.9));
        let dm = build_drift(&spec).unwrap();
        let verdict = eigen_analysis(&dm.a_u, Kind::Underload).unwrap();
        let q = &verdict.convergent_subspace;
        assert_eq!(q.cols(), verdict.convergent_subspace_dim);
        if q.cols() == 0 {
            continue;
        }
        let qt = q.transpose();
        // Orthonormal columns.
        let gram = qt.matmul(q);
        assert!(gram.max_abs_diff(&Mat::identity(q.cols())) < 1e-10);
        // A-invariance: AQ stays in the span of Q.
        let aq = dm.a_u.matmul(q);
        let proj = q.matmul(&qt.matmul(&aq));
        assert!(aq.max_abs_diff(&proj) <= 1e-7 * dm.a_u.norm_inf().max(1.0));
        // The restriction is Hurwitz.
        let restricted = qt.matmul(&aq);
        let eigs = lqfs::linalg::eigenvalues(&restricted).unwrap();
        assert!(eigs.iter().all(|e| e.re < 0.0));
    }
}

#[test]
fn evanescent_construction_drifts_along_the_diagonal() {
    let spec = registry::get("hw_evanescent").unwrap();
    let dm = build_drift(&spec).unwrap();
    let n = spec.num_classes();
    let ones = vec![1.0f64; n];
    let image = dm.a_u.matvec(&ones);
    let c = image.iter().sum::<f64>() / n as f64;
    // The diagonal is an eigendirection with a real nonzero eigenvalue; it
    // contracts (c = -1 / common equilibrium occupancy), which is what makes
    // the projected diffusion exactly linear. Escape comes from A_c.
    assert!(c < 0.0, "expected a real negative eigenvalue, got {c}");
    let residual = image
        .iter()
        .map(|v| (v - c).abs())
        .fold(0.0f64, f64::max);
    assert!(residual < 1e-8, "A_u * 1 deviates from c * 1 by {residual}");

    // exp(A_u t) therefore scales the diagonal by e^(c t).
    let t = 0.01;
    let scaled = expm(&dm.a_u.scale(t)).unwrap().matvec(&ones);
    let factor = (c * t).exp();
    for v in &scaled {
        assert!((v - factor).abs() < 1e-6 * factor);
    }

    let verdict = eigen_analysis(&dm.a_c, Kind::Critical).unwrap();
    assert_eq!(verdict.classification, Classification::Unstable);
}
