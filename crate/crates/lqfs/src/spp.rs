//! Static planning problem on the activity tree.
//!
//! With the basic tree given, the planning LP collapses to the square linear
//! system {Σ_j λ_ij = λ_i for every class, Σ_i λ_ij/(β_j μ_ij) = ρ for every
//! pool} in the I+J unknowns {λ_ij, ρ}. The tree makes this triangular up to
//! the single scalar ρ: peel degree-one nodes, expressing each edge flow as
//! an affine function of ρ, and the zero condition at the last node pins ρ.

use serde_json::json;

use crate::error::{Error, Result};
use crate::model::{Regime, SystemSpec};
use crate::scalar::{fl, Real};

/// Value affine in the load: `c + s·ρ`.
#[derive(Clone, Copy, Debug)]
struct Aff<F> {
    c: F,
    s: F,
}

impl<F: Real> Aff<F> {
    fn at(self, rho: F) -> F {
        self.c + self.s * rho
    }
}

/// Exact solution of the planning system, with its dual prices and
/// feasibility residuals.
#[derive(Clone, Debug)]
pub struct SppSolution<F> {
    /// Per-edge routing rates λ_ij, indexed like `spec.edges()`.
    pub lambda_ij: Vec<F>,
    /// Optimal (common) pool load ρ.
    pub rho: F,
    /// Per-edge nominal occupancies ψ*_ij = λ_ij / μ_ij.
    pub psi_star: Vec<F>,
    /// Per-class workloads ν_i, normalized so that Σ_j α_j = 1.
    pub nu: Vec<F>,
    /// Per-pool capacities α_j, Σ_j α_j = 1.
    pub alpha: Vec<F>,
    /// C = −Σ l_i ν_i; set only when the spec declares the halfin_whitt
    /// regime.
    pub hw_c: Option<F>,
    /// Largest relative violation of Σ_j λ_ij = λ_i over classes.
    pub class_residual: F,
    /// Largest relative violation of Σ_i λ_ij/(β_j μ_ij) = ρ over pools.
    pub pool_residual: F,
}

/// Solves the planning system by leaf elimination and populates the duals.
///
/// Every pool constraint is binding at the optimum, so the solution is the
/// unique one on the tree; any edge with λ_ij ≤ 0 means the given tree is
/// not basic for these arrival rates and is reported as [`Error::CrpViolation`].
pub fn solve_spp<F: Real>(spec: &SystemSpec<F>) -> Result<SppSolution<F>> {
    spec.validated()?;
    let i_count = spec.num_classes();
    let j_count = spec.num_pools();
    let n = i_count + j_count;
    let adj = spec.adjacency();

    // Node k < I is class k; node I + j is pool j.
    // Class demand is tracked in rate units, pool residual in occupancy
    // units (servers), both affine in ρ.
    let mut value: Vec<Aff<F>> = (0..n)
        .map(|k| {
            if k < i_count {
                Aff {
                    c: spec.lambda()[k],
                    s: F::zero(),
                }
            } else {
                Aff {
                    c: F::zero(),
                    s: spec.beta()[k - i_count],
                }
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
    let mut psi: Vec<Aff<F>> = vec![
        Aff {
            c: F::zero(),
            s: F::zero()
        };
        spec.num_edges()
    ];

    for _ in 0..spec.num_edges() {
        // Canonical order keeps the elimination deterministic: lowest node
        // index first, classes before pools.
        let leaf = (0..n)
            .find(|&k| node_alive[k] && degree[k] == 1)
            .expect("a tree with a live edge has a leaf");
        let incident = if leaf < i_count {
            &adj.class_edges[leaf]
        } else {
            &adj.pool_edges[leaf - i_count]
        };
        let e = *incident
            .iter()
            .find(|&&e| edge_alive[e])
            .expect("leaf degree is one");
        let edge = &spec.edges()[e];
        let other = if leaf < i_count {
            i_count + edge.pool
        } else {
            edge.class
        };

        if leaf < i_count {
            // Class leaf: its whole remaining demand flows on this edge.
            psi[e] = Aff {
                c: value[leaf].c / edge.mu,
                s: value[leaf].s / edge.mu,
            };
            value[other].c -= psi[e].c;
            value[other].s -= psi[e].s;
        } else {
            // Pool leaf: binding load constraint fills it exactly.
            psi[e] = value[leaf];
            value[other].c -= edge.mu * psi[e].c;
            value[other].s -= edge.mu * psi[e].s;
        }
        edge_alive[e] = false;
        node_alive[leaf] = false;
        degree[leaf] = 0;
        degree[other] -= 1;
    }

    let last = (0..n)
        .find(|&k| node_alive[k])
        .expect("one node remains after peeling a tree");
    let closing = value[last];
    if closing.s.abs() < F::epsilon() {
        return Err(Error::Numerical(
            "planning system is degenerate: load coefficient vanished at the root".into(),
        ));
    }
    let rho = -closing.c / closing.s;

    let psi_star: Vec<F> = psi.iter().map(|a| a.at(rho)).collect();
    let lambda_ij: Vec<F> = psi_star
        .iter()
        .zip(spec.edges())
        .map(|(&p, e)| p * e.mu)
        .collect();

    for (k, &rate) in lambda_ij.iter().enumerate() {
        if !(rate > F::zero()) {
            let e = &spec.edges()[k];
            return Err(Error::CrpViolation {
                class: spec.classes()[e.class].clone(),
                pool: spec.pools()[e.pool].clone(),
                rate: rate.to_f64().unwrap_or(f64::NAN),
            });
        }
    }

    // Feasibility residuals, relative to the constraint's own scale.
    let mut class_residual = F::zero();
    for i in 0..i_count {
        let sum: F = adj.class_edges[i].iter().map(|&e| lambda_ij[e]).sum();
        let rel = (sum - spec.lambda()[i]).abs() / spec.lambda()[i];
        class_residual = class_residual.max(rel);
    }
    let mut pool_residual = F::zero();
    for j in 0..j_count {
        let load: F = adj.pool_edges[j]
            .iter()
            .map(|&e| psi_star[e] / spec.beta()[j])
            .sum();
        let rel = (load - rho).abs() / rho.abs().max(F::one());
        pool_residual = pool_residual.max(rel);
    }
    let tol = fl::<F>(1e-10);
    if class_residual > tol || pool_residual > tol {
        return Err(Error::Numerical(format!(
            "planning residuals exceed tolerance: class {class_residual}, pool {pool_residual}"
        )));
    }

    let mut solution = SppSolution {
        lambda_ij,
        rho,
        psi_star,
        nu: Vec::new(),
        alpha: Vec::new(),
        hw_c: None,
        class_residual,
        pool_residual,
    };
    let (nu, alpha) = solve_duals(spec, &solution)?;
    solution.nu = nu;
    solution.alpha = alpha;
    if let Some(s) = spec.scaling() {
        if s.regime == Regime::HalfinWhitt {
            let sum: F = s
                .l
                .iter()
                .zip(&solution.nu)
                .map(|(&l, &v)| l * v)
                .sum();
            solution.hw_c = Some(-sum);
        }
    }
    Ok(solution)
}

/// Dual prices from the edge relations ν_i β_j μ_ij = α_j.
///
/// The tree determines all prices up to one scale: propagate from class 0
/// with ν = 1, then normalize so Σ_j α_j = 1. The workload identity
/// Σ_i λ_i ν_i = ρ is verified to 1e-10 relative before returning.
pub fn solve_duals<F: Real>(
    spec: &SystemSpec<F>,
    spp: &SppSolution<F>,
) -> Result<(Vec<F>, Vec<F>)> {
    let i_count = spec.num_classes();
    let adj = spec.adjacency();
    let mut nu = vec![F::zero(); i_count];
    let mut alpha = vec![F::zero(); spec.num_pools()];
    let mut seen_class = vec![false; i_count];
    let mut seen_pool = vec![false; spec.num_pools()];

    nu[0] = F::one();
    seen_class[0] = true;
    let mut stack: Vec<(bool, usize)> = vec![(true, 0)];
    while let Some((is_class, node)) = stack.pop() {
        let incident = if is_class {
            &adj.class_edges[node]
        } else {
            &adj.pool_edges[node]
        };
        for &e in incident {
            let edge = &spec.edges()[e];
            if is_class && !seen_pool[edge.pool] {
                alpha[edge.pool] = nu[node] * spec.beta()[edge.pool] * edge.mu;
                seen_pool[edge.pool] = true;
                stack.push((false, edge.pool));
            } else if !is_class && !seen_class[edge.class] {
                nu[edge.class] = alpha[node] / (spec.beta()[node] * edge.mu);
                seen_class[edge.class] = true;
                stack.push((true, edge.class));
            }
        }
    }

    let scale: F = alpha.iter().copied().sum();
    for a in &mut alpha {
        *a /= scale;
    }
    for v in &mut nu {
        *v /= scale;
    }

    let workload: F = spec
        .lambda()
        .iter()
        .zip(&nu)
        .map(|(&l, &v)| l * v)
        .sum();
    let rel = (workload - spp.rho).abs() / spp.rho.abs().max(F::one());
    if rel > fl::<F>(1e-10) {
        return Err(Error::Numerical(format!(
            "workload identity violated: sum lambda_i nu_i = {workload}, rho = {}",
            spp.rho
        )));
    }
    Ok((nu, alpha))
}

/// Load of the r-th system in the Halfin-Whitt family: ρ^r = 1 − C/√r with
/// C = −Σ l_i ν_i.
///
/// Requires C ≥ 0; a strictly negative C means the second-order
/// perturbation pushes the family into overload and there is no critical
/// regime to speak of. (C = 0 is allowed and gives ρ^r = 1, matching l ≡ 0.)
pub fn hw_load<F: Real>(spec: &SystemSpec<F>, spp: &SppSolution<F>, r: f64) -> Result<F> {
    let scaling = spec
        .scaling()
        .ok_or_else(|| Error::Regime("spec declares no scaling family".into()))?;
    if scaling.regime != Regime::HalfinWhitt {
        return Err(Error::Regime(
            "hw_load requires the halfin_whitt regime".into(),
        ));
    }
    let sum: F = scaling
        .l
        .iter()
        .zip(&spp.nu)
        .map(|(&l, &v)| l * v)
        .sum();
    if sum > F::zero() {
        return Err(Error::Regime(format!(
            "sum of l_i nu_i = {sum} > 0: the scaled family exceeds critical load"
        )));
    }
    Ok(F::one() + sum / fl::<F>(r.sqrt()))
}

/// Arrival rates of the r-th system: r·λ_i in underload, r·λ_i + √r·l_i in
/// the Halfin-Whitt regime. Without a scaling family the underload form is
/// used.
pub fn scaled_arrival_rates<F: Real>(spec: &SystemSpec<F>, r: f64) -> Vec<F> {
    let rf = fl::<F>(r);
    let sqrt_r = fl::<F>(r.sqrt());
    match spec.scaling() {
        Some(s) if s.regime == Regime::HalfinWhitt => spec
            .lambda()
            .iter()
            .zip(&s.l)
            .map(|(&l, &li)| rf * l + sqrt_r * li)
            .collect(),
        _ => spec.lambda().iter().map(|&l| rf * l).collect(),
    }
}

impl SppSolution<f64> {
    /// JSON report form: per-edge records plus residual norms.
    pub fn to_json_value(&self, spec: &SystemSpec<f64>) -> serde_json::Value {
        let edges: Vec<serde_json::Value> = spec
            .edges()
            .iter()
            .enumerate()
            .map(|(k, e)| {
                json!({
                    "class": spec.classes()[e.class],
                    "pool": spec.pools()[e.pool],
                    "mu": e.mu,
                    "lambda": self.lambda_ij[k],
                    "psi_star": self.psi_star[k],
                })
            })
            .collect();
        json!({
            "rho": self.rho,
            "edges": edges,
            "nu": spec
                .classes()
                .iter()
                .zip(&self.nu)
                .map(|(c, &v)| (c.clone(), v))
                .collect::<std::collections::BTreeMap<_, _>>(),
            "alpha": spec
                .pools()
                .iter()
                .zip(&self.alpha)
                .map(|(p, &v)| (p.clone(), v))
                .collect::<std::collections::BTreeMap<_, _>>(),
            "hw_C": self.hw_c,
            "residuals": {
                "class": self.class_residual,
                "pool": self.pool_residual,
            },
        })
    }
}
