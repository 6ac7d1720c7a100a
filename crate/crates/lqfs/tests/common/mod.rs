//! Shared fixtures for the integration suites: a seeded random-system
//! generator and small self-contained oracles (dense elimination, birth-death
//! closed forms, RK4) that the production solvers must reproduce.
#![allow(dead_code)]

use lqfs::linalg::Mat;
use lqfs::model::{auto_lambda, Regime, ScalingFamily, SystemSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// How edge service rates are assigned.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MuKind {
    /// Independent per edge.
    Free,
    /// mu_ij = mu_j: every edge of a pool shares its rate.
    PerPool,
    /// mu_ij = mu_i: every edge of a class shares its rate.
    PerClass,
}

#[derive(Clone, Copy, Debug)]
pub struct TreeOpts {
    pub i_max: usize,
    pub j_max: usize,
    pub mu: MuKind,
    /// Common pool load of the constructed arrival rates.
    pub load: f64,
}

impl TreeOpts {
    pub fn new(i_max: usize, j_max: usize, mu: MuKind, load: f64) -> Self {
        TreeOpts {
            i_max,
            j_max,
            mu,
            load,
        }
    }
}

/// Random bipartite spanning tree with rates; arrival rates come from a
/// positive occupancy seed with equal pool loads, so the tree is basic and
/// the planning solution is exactly `load` at every pool.
pub fn random_system(rng: &mut ChaCha8Rng, opts: &TreeOpts) -> SystemSpec<f64> {
    let i_count = rng.gen_range(1..=opts.i_max);
    let j_count = rng.gen_range(1..=opts.j_max);

    #[derive(Clone, Copy)]
    enum Node {
        Class(usize),
        Pool(usize),
    }
    let mut pending: Vec<Node> = (1..i_count)
        .map(Node::Class)
        .chain((0..j_count).map(Node::Pool))
        .collect();
    // Fisher-Yates.
    for k in (1..pending.len()).rev() {
        let swap = rng.gen_range(0..=k);
        pending.swap(k, swap);
    }

    let mut attached_classes = vec![0usize];
    let mut attached_pools: Vec<usize> = Vec::new();
    let mut tree: Vec<(usize, usize)> = Vec::new();
    while !pending.is_empty() {
        let idx = pending
            .iter()
            .position(|n| match n {
                Node::Pool(_) => true,
                Node::Class(_) => !attached_pools.is_empty(),
            })
            .expect("a pool is always attachable");
        match pending.remove(idx) {
            Node::Pool(j) => {
                let c = attached_classes[rng.gen_range(0..attached_classes.len())];
                tree.push((c, j));
                attached_pools.push(j);
            }
            Node::Class(i) => {
                let p = attached_pools[rng.gen_range(0..attached_pools.len())];
                tree.push((i, p));
                attached_classes.push(i);
            }
        }
    }

    let class_mu: Vec<f64> = (0..i_count).map(|_| rng.gen_range(0.3..3.0)).collect();
    let pool_mu: Vec<f64> = (0..j_count).map(|_| rng.gen_range(0.3..3.0)).collect();
    let beta: Vec<f64> = (0..j_count).map(|_| rng.gen_range(0.3..2.5)).collect();

    let classes: Vec<String> = (0..i_count).map(|i| format!("c{i}")).collect();
    let pools: Vec<String> = (0..j_count).map(|j| format!("p{j}")).collect();
    let class_refs: Vec<&str> = classes.iter().map(|s| s.as_str()).collect();
    let pool_defs: Vec<(&str, f64)> = pools
        .iter()
        .zip(&beta)
        .map(|(p, &b)| (p.as_str(), b))
        .collect();
    let edge_defs: Vec<(&str, &str, f64)> = tree
        .iter()
        .map(|&(i, j)| {
            let mu = match opts.mu {
                MuKind::Free => rng.gen_range(0.3..3.0),
                MuKind::PerPool => pool_mu[j],
                MuKind::PerClass => class_mu[i],
            };
            (classes[i].as_str(), pools[j].as_str(), mu)
        })
        .collect();
    let lambda_defs: Vec<(&str, f64)> = class_refs.iter().map(|&c| (c, 1.0)).collect();
    let shape = SystemSpec::new(&class_refs, &pool_defs, &edge_defs, &lambda_defs, None)
        .expect("generated tree is well-formed");

    // Equal pool loads by construction: split beta_j * load over the pool's
    // edges with random positive weights.
    let adj = shape.adjacency();
    let mut seed = vec![0.0f64; shape.num_edges()];
    for j in 0..j_count {
        let edges = &adj.pool_edges[j];
        let w: Vec<f64> = edges.iter().map(|_| rng.gen_range(0.2..1.0)).collect();
        let total: f64 = w.iter().sum();
        for (&e, &wk) in edges.iter().zip(&w) {
            seed[e] = beta[j] * opts.load * wk / total;
        }
    }
    auto_lambda(&shape, &seed).expect("seed loads are equal by construction")
}

/// Rejection-samples until `pred` holds.
pub fn random_system_where(
    rng: &mut ChaCha8Rng,
    opts: &TreeOpts,
    pred: impl Fn(&SystemSpec<f64>) -> bool,
) -> SystemSpec<f64> {
    for _ in 0..10_000 {
        let spec = random_system(rng, opts);
        if pred(&spec) {
            return spec;
        }
    }
    panic!("predicate rejected 10000 generated systems");
}

pub fn non_leaf_classes(spec: &SystemSpec<f64>) -> usize {
    let adj = spec.adjacency();
    adj.class_edges.iter().filter(|es| es.len() > 1).count()
}

/// Dense partial-pivot elimination; panics on a singular system (the test
/// oracles only build nonsingular ones).
pub fn ge_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    assert!(a.len() == n && a.iter().all(|r| r.len() == n));
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
            .unwrap();
        assert!(a[pivot][col].abs() > 1e-13, "singular oracle system");
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    x
}

/// Solves the planning system densely: unknowns are the edge rates followed
/// by rho; class rows sum edge rates to lambda_i, pool rows balance
/// occupancy against beta_j * rho.
pub fn spp_oracle(spec: &SystemSpec<f64>) -> (Vec<f64>, f64) {
    let i_count = spec.num_classes();
    let j_count = spec.num_pools();
    let ne = spec.num_edges();
    let n = i_count + j_count;
    assert_eq!(ne + 1, n, "basic activity tree");
    let mut a = vec![vec![0.0f64; n]; n];
    let mut b = vec![0.0f64; n];
    for (k, e) in spec.edges().iter().enumerate() {
        a[e.class][k] = 1.0;
        a[i_count + e.pool][k] = 1.0 / e.mu;
    }
    for i in 0..i_count {
        b[i] = spec.lambda()[i];
    }
    for j in 0..j_count {
        a[i_count + j][ne] = -spec.beta()[j];
    }
    let x = ge_solve(a, b);
    (x[..ne].to_vec(), x[ne])
}

/// Solves the dual relations nu_i beta_j mu_ij = alpha_j densely together
/// with the normalization sum(alpha) = 1.
pub fn dual_oracle(spec: &SystemSpec<f64>) -> (Vec<f64>, Vec<f64>) {
    let i_count = spec.num_classes();
    let j_count = spec.num_pools();
    let n = i_count + j_count;
    let mut a = vec![vec![0.0f64; n]; n];
    let mut b = vec![0.0f64; n];
    for (row, e) in spec.edges().iter().enumerate() {
        a[row][e.class] = spec.beta()[e.pool] * e.mu;
        a[row][i_count + e.pool] = -1.0;
    }
    for j in 0..j_count {
        a[n - 1][i_count + j] = 1.0;
    }
    b[n - 1] = 1.0;
    let x = ge_solve(a, b);
    (x[..i_count].to_vec(), x[i_count..].to_vec())
}

/// Busy-server distribution of M/M/N with arrival rate `lam` and per-server
/// rate `mu`: the number-in-system chain truncated at N via the geometric
/// tail. Requires lam < N mu.
pub fn mmn_busy_pmf(n_servers: usize, lam: f64, mu: f64) -> Vec<f64> {
    let a = lam / mu;
    let rho = a / n_servers as f64;
    assert!(rho < 1.0);
    let mut p = vec![0.0f64; n_servers + 1];
    let mut term = 1.0f64;
    p[0] = term;
    for n in 1..=n_servers {
        term *= a / n as f64;
        p[n] = term;
    }
    // All states with >= N in system have N busy servers.
    p[n_servers] /= 1.0 - rho;
    let z: f64 = p.iter().sum();
    for v in &mut p {
        *v /= z;
    }
    p
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Fixed-step classical RK4 for y' = A y.
pub fn rk4_lin(a: &Mat<f64>, y0: &[f64], t: f64, steps: usize) -> Vec<f64> {
    let h = t / steps as f64;
    let mut y = y0.to_vec();
    let axpy = |y: &[f64], k: &[f64], s: f64| -> Vec<f64> {
        y.iter().zip(k).map(|(a, b)| a + s * b).collect()
    };
    for _ in 0..steps {
        let k1 = a.matvec(&y);
        let k2 = a.matvec(&axpy(&y, &k1, h / 2.0));
        let k3 = a.matvec(&axpy(&y, &k2, h / 2.0));
        let k4 = a.matvec(&axpy(&y, &k3, h));
        for i in 0..y.len() {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}

/// The same system with pool capacities replaced by `beta`.
pub fn with_beta(spec: &SystemSpec<f64>, beta: &[f64]) -> SystemSpec<f64> {
    let classes: Vec<&str> = spec.classes().iter().map(|s| s.as_str()).collect();
    let pools: Vec<(&str, f64)> = spec
        .pools()
        .iter()
        .zip(beta)
        .map(|(p, &b)| (p.as_str(), b))
        .collect();
    let edges: Vec<(&str, &str, f64)> = spec
        .edges()
        .iter()
        .map(|e| {
            (
                spec.classes()[e.class].as_str(),
                spec.pools()[e.pool].as_str(),
                e.mu,
            )
        })
        .collect();
    let lambda: Vec<(&str, f64)> = spec
        .classes()
        .iter()
        .zip(spec.lambda())
        .map(|(c, &l)| (c.as_str(), l))
        .collect();
    SystemSpec::new(&classes, &pools, &edges, &lambda, None).unwrap()
}

/// Two classes sharing pool 2, pool-uniform rates, critically loaded:
/// ψ* = (1, 1/2, 1/2), C = 0.8, θ₀ = 2·(3/4)/5.5.
pub fn hw_two_pool() -> SystemSpec<f64> {
    SystemSpec::new(
        &["A", "B"],
        &[("1", 1.0), ("2", 1.0)],
        &[("A", "1", 1.0), ("A", "2", 1.5), ("B", "2", 1.5)],
        &[("A", 1.75), ("B", 0.75)],
        Some(ScalingFamily {
            r_values: vec![100.0, 400.0, 1600.0],
            l: vec![-1.0, -1.0],
            regime: Regime::HalfinWhitt,
        }),
    )
    .unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
