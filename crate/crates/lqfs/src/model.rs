//! System specification: customer classes, server pools, and the basic
//! activity tree, plus validation and the structural transforms (leaf
//! removal, server expansion) under which local stability is preserved.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{fl, Real};

/// One allowed activity: class `class` may be served at pool `pool` with
/// service rate `mu` (per busy server, per unit time).
#[derive(Clone, Debug, PartialEq)]
pub struct Edge<F> {
    pub class: usize,
    pub pool: usize,
    pub mu: F,
}

/// Scaling regime for the r-th system in a scaling family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Underload,
    HalfinWhitt,
}

/// Family of scaled systems: arrival rates r·λ_i (underload) or
/// r·λ_i + √r·l_i (Halfin-Whitt), pool sizes round(r·β_j).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingFamily<F> {
    pub r_values: Vec<f64>,
    /// Per-class second-order coefficients, indexed like the classes.
    pub l: Vec<F>,
    pub regime: Regime,
}

/// A many-server service system on a bipartite activity tree.
///
/// Classes and pools are identified by strings; all numeric indexing is by
/// declaration order, which also fixes row/column order of every matrix
/// derived from the spec.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemSpec<F> {
    classes: Vec<String>,
    pools: Vec<String>,
    beta: Vec<F>,
    edges: Vec<Edge<F>>,
    lambda: Vec<F>,
    scaling: Option<ScalingFamily<F>>,
}

impl<F: Real> SystemSpec<F> {
    /// Builds a spec from named parts, resolving identifiers to indices.
    /// Rejects unknown or duplicate identifiers; tree-structure checks are
    /// left to [`validate`].
    pub fn new(
        classes: &[&str],
        pools: &[(&str, F)],
        edges: &[(&str, &str, F)],
        lambda: &[(&str, F)],
        scaling: Option<ScalingFamily<F>>,
    ) -> Result<Self> {
        let class_names: Vec<String> = classes.iter().map(|s| s.to_string()).collect();
        let pool_names: Vec<String> = pools.iter().map(|(s, _)| s.to_string()).collect();
        let beta: Vec<F> = pools.iter().map(|&(_, b)| b).collect();
        check_unique("class", &class_names)?;
        check_unique("pool", &pool_names)?;

        let idx = |names: &[String], id: &str, what: &str| -> Result<usize> {
            names
                .iter()
                .position(|n| n == id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown {what} id {id:?}")))
        };

        let edges: Vec<Edge<F>> = edges
            .iter()
            .map(|&(c, p, mu)| {
                Ok(Edge {
                    class: idx(&class_names, c, "class")?,
                    pool: idx(&pool_names, p, "pool")?,
                    mu,
                })
            })
            .collect::<Result<_>>()?;

        let mut lam = vec![None; class_names.len()];
        for &(c, v) in lambda {
            let i = idx(&class_names, c, "class")?;
            if lam[i].replace(v).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate arrival rate for class {c:?}"
                )));
            }
        }
        let lambda: Vec<F> = lam
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                v.ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "missing arrival rate for class {:?}",
                        class_names[i]
                    ))
                })
            })
            .collect::<Result<_>>()?;

        if let Some(s) = &scaling {
            if s.l.len() != class_names.len() {
                return Err(Error::InvalidArgument(
                    "scaling coefficient vector length must equal the class count".into(),
                ));
            }
        }

        Ok(SystemSpec {
            classes: class_names,
            pools: pool_names,
            beta,
            edges,
            lambda,
            scaling,
        })
    }

    pub(crate) fn from_parts(
        classes: Vec<String>,
        pools: Vec<String>,
        beta: Vec<F>,
        edges: Vec<Edge<F>>,
        lambda: Vec<F>,
        scaling: Option<ScalingFamily<F>>,
    ) -> Self {
        SystemSpec {
            classes,
            pools,
            beta,
            edges,
            lambda,
            scaling,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn num_pools(&self) -> usize {
        self.pools.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn pools(&self) -> &[String] {
        &self.pools
    }

    pub fn beta(&self) -> &[F] {
        &self.beta
    }

    pub fn lambda(&self) -> &[F] {
        &self.lambda
    }

    pub fn edges(&self) -> &[Edge<F>] {
        &self.edges
    }

    pub fn scaling(&self) -> Option<&ScalingFamily<F>> {
        self.scaling.as_ref()
    }

    pub fn set_scaling(&mut self, scaling: Option<ScalingFamily<F>>) {
        self.scaling = scaling;
    }

    pub fn with_lambda(&self, lambda: Vec<F>) -> Self {
        assert_eq!(lambda.len(), self.classes.len());
        let mut s = self.clone();
        s.lambda = lambda;
        s
    }

    pub fn class_index(&self, id: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == id)
    }

    pub fn pool_index(&self, id: &str) -> Option<usize> {
        self.pools.iter().position(|p| p == id)
    }

    pub fn total_beta(&self) -> F {
        self.beta.iter().copied().sum()
    }

    /// Edge indices incident to each class (`S(i)`) and pool (`C(j)`).
    pub fn adjacency(&self) -> Adjacency {
        let mut class_edges = vec![Vec::new(); self.classes.len()];
        let mut pool_edges = vec![Vec::new(); self.pools.len()];
        for (k, e) in self.edges.iter().enumerate() {
            class_edges[e.class].push(k);
            pool_edges[e.pool].push(k);
        }
        Adjacency {
            class_edges,
            pool_edges,
        }
    }

    /// Looks up an edge by endpoint indices.
    pub fn edge_index(&self, class: usize, pool: usize) -> Option<usize> {
        self.edges
            .iter()
            .position(|e| e.class == class && e.pool == pool)
    }

    /// Splits the tree by deleting edge `k`; returns membership flags
    /// (classes on the class side, pools on the class side) where the
    /// "class side" is the component containing `edges[k].class`.
    pub fn split_at_edge(&self, k: usize) -> (Vec<bool>, Vec<bool>) {
        let adj = self.adjacency();
        let i0 = self.edges[k].class;
        let mut class_side = vec![false; self.classes.len()];
        let mut pool_side = vec![false; self.pools.len()];
        let mut stack: Vec<(bool, usize)> = vec![(true, i0)]; // (is_class, node)
        class_side[i0] = true;
        while let Some((is_class, node)) = stack.pop() {
            let incident = if is_class {
                &adj.class_edges[node]
            } else {
                &adj.pool_edges[node]
            };
            for &e in incident {
                if e == k {
                    continue;
                }
                let (next_is_class, next) = if is_class {
                    (false, self.edges[e].pool)
                } else {
                    (true, self.edges[e].class)
                };
                let seen = if next_is_class {
                    &mut class_side[next]
                } else {
                    &mut pool_side[next]
                };
                if !*seen {
                    *seen = true;
                    stack.push((next_is_class, next));
                }
            }
        }
        (class_side, pool_side)
    }

    /// Returns `&self` if the spec passes validation, otherwise the report
    /// wrapped as an error.
    pub fn validated(&self) -> Result<&Self> {
        let report = validate(self);
        if report.pass() {
            Ok(self)
        } else {
            Err(Error::InvalidSpec(report))
        }
    }
}

pub struct Adjacency {
    /// Edge indices incident to each class, in edge-declaration order.
    pub class_edges: Vec<Vec<usize>>,
    /// Edge indices incident to each pool, in edge-declaration order.
    pub pool_edges: Vec<Vec<usize>>,
}

fn check_unique(what: &str, names: &[String]) -> Result<()> {
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(Error::InvalidArgument(format!(
                "duplicate {what} id {n:?}"
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    NoClasses,
    NoPools,
    NonpositiveBeta { pool: String, value: f64 },
    NonpositiveLambda { class: String, value: f64 },
    NonpositiveMu { class: String, pool: String, value: f64 },
    DuplicateEdge { class: String, pool: String },
    EdgeCountMismatch { found: usize, expected: usize },
    CycleFound { class: String, pool: String },
    Disconnected,
    ScalingNotIncreasing,
    ScalingPoolTooSmall { pool: String, r: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NoClasses => write!(f, "no customer classes"),
            Violation::NoPools => write!(f, "no server pools"),
            Violation::NonpositiveBeta { pool, value } => {
                write!(f, "pool {pool:?} has nonpositive size coefficient {value}")
            }
            Violation::NonpositiveLambda { class, value } => {
                write!(f, "class {class:?} has nonpositive arrival rate {value}")
            }
            Violation::NonpositiveMu { class, pool, value } => {
                write!(f, "edge ({class:?}, {pool:?}) has nonpositive service rate {value}")
            }
            Violation::DuplicateEdge { class, pool } => {
                write!(f, "edge ({class:?}, {pool:?}) declared more than once")
            }
            Violation::EdgeCountMismatch { found, expected } => {
                write!(f, "edge count {found} differs from I+J-1 = {expected}")
            }
            Violation::CycleFound { class, pool } => {
                write!(f, "edge ({class:?}, {pool:?}) closes a cycle")
            }
            Violation::Disconnected => write!(f, "activity graph is disconnected"),
            Violation::ScalingNotIncreasing => {
                write!(f, "scaling parameters must be positive and strictly increasing")
            }
            Violation::ScalingPoolTooSmall { pool, r } => {
                write!(f, "pool {pool:?} rounds to zero servers at r = {r}")
            }
        }
    }
}

/// Outcome of structural validation. Diagnostics are data: an invalid spec
/// is described, not panicked over.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.pass() {
            return write!(f, "pass");
        }
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

/// Checks every structural invariant: positivity of rates and sizes, the
/// edge count |E| = I+J-1, acyclicity, and connectivity of the bipartite
/// activity graph (union-find).
pub fn validate<F: Real>(spec: &SystemSpec<F>) -> ValidationReport {
    let mut violations = Vec::new();
    let i_count = spec.num_classes();
    let j_count = spec.num_pools();
    if i_count == 0 {
        violations.push(Violation::NoClasses);
    }
    if j_count == 0 {
        violations.push(Violation::NoPools);
    }

    for (j, &b) in spec.beta.iter().enumerate() {
        if !(b > F::zero()) {
            violations.push(Violation::NonpositiveBeta {
                pool: spec.pools[j].clone(),
                value: b.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    for (i, &l) in spec.lambda.iter().enumerate() {
        if !(l > F::zero()) {
            violations.push(Violation::NonpositiveLambda {
                class: spec.classes[i].clone(),
                value: l.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    for (k, e) in spec.edges.iter().enumerate() {
        if !(e.mu > F::zero()) {
            violations.push(Violation::NonpositiveMu {
                class: spec.classes[e.class].clone(),
                pool: spec.pools[e.pool].clone(),
                value: e.mu.to_f64().unwrap_or(f64::NAN),
            });
        }
        if spec.edges[..k]
            .iter()
            .any(|p| p.class == e.class && p.pool == e.pool)
        {
            violations.push(Violation::DuplicateEdge {
                class: spec.classes[e.class].clone(),
                pool: spec.pools[e.pool].clone(),
            });
        }
    }

    if i_count > 0 && j_count > 0 {
        let expected = i_count + j_count - 1;
        if spec.edges.len() != expected {
            violations.push(Violation::EdgeCountMismatch {
                found: spec.edges.len(),
                expected,
            });
        }

        // Union-find over classes [0, I) and pools [I, I+J).
        let mut parent: Vec<usize> = (0..i_count + j_count).collect();
        fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut components = i_count + j_count;
        for e in &spec.edges {
            let a = find(&mut parent, e.class);
            let b = find(&mut parent, i_count + e.pool);
            if a == b {
                violations.push(Violation::CycleFound {
                    class: spec.classes[e.class].clone(),
                    pool: spec.pools[e.pool].clone(),
                });
            } else {
                parent[a] = b;
                components -= 1;
            }
        }
        if components != 1 {
            violations.push(Violation::Disconnected);
        }
    }

    if let Some(s) = &spec.scaling {
        let increasing = s
            .r_values
            .windows(2)
            .all(|w| w[0] < w[1])
            && s.r_values.first().is_none_or(|&r| r > 0.0);
        if !increasing {
            violations.push(Violation::ScalingNotIncreasing);
        }
        for &r in &s.r_values {
            for (j, &b) in spec.beta.iter().enumerate() {
                let n = (r * b.to_f64().unwrap_or(0.0)).round();
                if n < 1.0 {
                    violations.push(Violation::ScalingPoolTooSmall {
                        pool: spec.pools[j].clone(),
                        r,
                    });
                }
            }
        }
    }

    ValidationReport { violations }
}

// ---------------------------------------------------------------------------
// Structural transforms
// ---------------------------------------------------------------------------

/// Sets arrival rates from a nominal per-edge occupancy seed:
/// λ_i = Σ_j ψ_ij·μ_ij. The seed must be strictly positive on every edge
/// and produce the same load Σ_i ψ_ij / β_j at every pool (relative
/// tolerance 1e-10), so the given tree is basic for the returned rates with
/// nominal occupancies equal to the seed.
pub fn auto_lambda<F: Real>(shape: &SystemSpec<F>, psi_seed: &[F]) -> Result<SystemSpec<F>> {
    if psi_seed.len() != shape.num_edges() {
        return Err(Error::InvalidArgument(format!(
            "psi seed has {} entries for {} edges",
            psi_seed.len(),
            shape.num_edges()
        )));
    }
    if let Some(k) = psi_seed.iter().position(|&v| !(v > F::zero())) {
        let e = &shape.edges[k];
        return Err(Error::InvalidArgument(format!(
            "psi seed must be strictly positive; entry for edge ({:?}, {:?}) is {}",
            shape.classes[e.class], shape.pools[e.pool], psi_seed[k]
        )));
    }

    let mut load = vec![F::zero(); shape.num_pools()];
    for (k, e) in shape.edges.iter().enumerate() {
        load[e.pool] += psi_seed[k] / shape.beta[e.pool];
    }
    let max = load.iter().copied().fold(F::zero(), F::max);
    let min = load.iter().copied().fold(F::infinity(), F::min);
    if max > F::zero() && (max - min) / max > fl::<F>(1e-10) {
        return Err(Error::InvalidArgument(format!(
            "psi seed pool loads are unequal: min {min}, max {max}"
        )));
    }

    let mut lambda = vec![F::zero(); shape.num_classes()];
    for (k, e) in shape.edges.iter().enumerate() {
        lambda[e.class] += psi_seed[k] * e.mu;
    }
    Ok(shape.with_lambda(lambda))
}

/// - Removes a degree-one customer class and its single edge. Remaining
/// arrival rates are untouched: the underload drift matrix depends only on
/// (β, μ, tree), so stability analysis is unaffected and callers re-solve
/// the planning problem for the reduced system when they need rates.
pub fn remove_customer_leaf<F: Real>(spec: &SystemSpec<F>, class: usize) -> Result<SystemSpec<F>> {
    let adj = spec.adjacency();
    if class >= spec.num_classes() {
        return Err(Error::InvalidArgument(format!("no class index {class}")));
    }
    if adj.class_edges[class].len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "class {:?} is not a leaf (degree {})",
            spec.classes[class],
            adj.class_edges[class].len()
        )));
    }
    if spec.num_classes() == 1 {
        return Err(Error::InvalidArgument(
            "cannot remove the only customer class".into(),
        ));
    }
    let drop_edge = adj.class_edges[class][0];

    let classes: Vec<String> = drop_nth(&spec.classes, class);
    let lambda: Vec<F> = drop_nth(&spec.lambda, class);
    let edges: Vec<Edge<F>> = spec
        .edges
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != drop_edge)
        .map(|(_, e)| Edge {
            class: e.class - usize::from(e.class > class),
            pool: e.pool,
            mu: e.mu,
        })
        .collect();
    let scaling = spec.scaling.as_ref().map(|s| ScalingFamily {
        r_values: s.r_values.clone(),
        l: drop_nth(&s.l, class),
        regime: s.regime,
    });

    Ok(SystemSpec::from_parts(
        classes,
        spec.pools.clone(),
        spec.beta.clone(),
        edges,
        lambda,
        scaling,
    ))
}

/// Removes a degree-one server pool and its single edge (i, j), replacing
/// λ_i by λ_i − β_j·μ_ij (the work that pool absorbed at full utilization).
pub fn remove_server_leaf<F: Real>(spec: &SystemSpec<F>, pool: usize) -> Result<SystemSpec<F>> {
    let adj = spec.adjacency();
    if pool >= spec.num_pools() {
        return Err(Error::InvalidArgument(format!("no pool index {pool}")));
    }
    if adj.pool_edges[pool].len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "pool {:?} is not a leaf (degree {})",
            spec.pools[pool],
            adj.pool_edges[pool].len()
        )));
    }
    if spec.num_pools() == 1 {
        return Err(Error::InvalidArgument(
            "cannot remove the only server pool".into(),
        ));
    }
    let drop_edge = adj.pool_edges[pool][0];
    let e = &spec.edges[drop_edge];
    let i = e.class;
    let adjusted = spec.lambda[i] - spec.beta[pool] * e.mu;
    if !(adjusted > F::zero()) {
        return Err(Error::InvalidArgument(format!(
            "removing pool {:?} drives the arrival rate of class {:?} to {adjusted} <= 0",
            spec.pools[pool], spec.classes[i]
        )));
    }

    let mut lambda = spec.lambda.clone();
    lambda[i] = adjusted;
    let pools: Vec<String> = drop_nth(&spec.pools, pool);
    let beta: Vec<F> = drop_nth(&spec.beta, pool);
    let edges: Vec<Edge<F>> = spec
        .edges
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != drop_edge)
        .map(|(_, e)| Edge {
            class: e.class,
            pool: e.pool - usize::from(e.pool > pool),
            mu: e.mu,
        })
        .collect();

    Ok(SystemSpec::from_parts(
        spec.classes.clone(),
        pools,
        beta,
        edges,
        lambda,
        spec.scaling.clone(),
    ))
}

/// Splits pool `pool` into two pools j' and j''. The anchor class connects
/// to both halves; every other neighboring class is assigned to exactly one
/// half by the partition, inheriting its service rate. β is split
/// `fraction` : 1−`fraction` (use 0.5 for the symmetric default).
pub fn expand_server<F: Real>(
    spec: &SystemSpec<F>,
    pool: usize,
    anchor_class: usize,
    side_a: &[usize],
    side_b: &[usize],
    fraction: F,
) -> Result<SystemSpec<F>> {
    let adj = spec.adjacency();
    if pool >= spec.num_pools() {
        return Err(Error::InvalidArgument(format!("no pool index {pool}")));
    }
    if !(fraction > F::zero() && fraction < F::one()) {
        return Err(Error::InvalidArgument(
            "beta split fraction must lie strictly between 0 and 1".into(),
        ));
    }
    if spec.edge_index(anchor_class, pool).is_none() {
        return Err(Error::InvalidArgument(format!(
            "anchor class {:?} is not adjacent to pool {:?}",
            spec.classes.get(anchor_class).cloned().unwrap_or_default(),
            spec.pools[pool]
        )));
    }
    let mut others: Vec<usize> = adj.pool_edges[pool]
        .iter()
        .map(|&k| spec.edges[k].class)
        .filter(|&c| c != anchor_class)
        .collect();
    others.sort_unstable();
    let mut claimed: Vec<usize> = side_a.iter().chain(side_b).copied().collect();
    claimed.sort_unstable();
    if claimed != others || side_a.iter().any(|c| side_b.contains(c)) {
        return Err(Error::InvalidArgument(
            "partition must split the non-anchor neighbors into two disjoint sets".into(),
        ));
    }

    let prime = format!("{}_a", spec.pools[pool]);
    let dprime = format!("{}_b", spec.pools[pool]);
    let mut pools = spec.pools.clone();
    let mut beta = spec.beta.clone();
    // Replace the split pool in place by j', append j'' at the end.
    pools[pool] = prime;
    pools.push(dprime);
    let b = beta[pool];
    beta[pool] = b * fraction;
    beta.push(b * (F::one() - fraction));
    let new_pool = pools.len() - 1;

    let mut edges: Vec<Edge<F>> = Vec::with_capacity(spec.edges.len() + 1);
    let mut anchor_mu = None;
    for e in &spec.edges {
        if e.pool == pool {
            if e.class == anchor_class {
                anchor_mu = Some(e.mu);
                edges.push(e.clone()); // anchor -> j'
            } else if side_a.contains(&e.class) {
                edges.push(e.clone()); // side A -> j'
            } else {
                edges.push(Edge {
                    class: e.class,
                    pool: new_pool,
                    mu: e.mu,
                });
            }
        } else {
            edges.push(e.clone());
        }
    }
    edges.push(Edge {
        class: anchor_class,
        pool: new_pool,
        mu: anchor_mu.expect("anchor adjacency checked above"),
    });

    Ok(SystemSpec::from_parts(
        spec.classes.clone(),
        pools,
        beta,
        edges,
        spec.lambda.clone(),
        spec.scaling.clone(),
    ))
}

fn drop_nth<T: Clone>(v: &[T], n: usize) -> Vec<T> {
    v.iter()
        .enumerate()
        .filter(|&(k, _)| k != n)
        .map(|(_, x)| x.clone())
        .collect()
}

// ---------------------------------------------------------------------------
// JSON document form
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolDoc {
    pub id: String,
    pub beta: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDoc {
    pub class: String,
    pub pool: String,
    pub mu: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingDoc {
    pub r: Vec<f64>,
    pub l: BTreeMap<String, f64>,
    pub regime: Regime,
}

/// Exact JSON wire format:
/// `{"classes": [...], "pools": [{"id", "beta}], "edges": [{"class", "pool",
/// "mu"}], "lambda": {class: rate}, "scaling": {"r": [...], "l": {...},
/// "regime": "underload" | "halfin_whitt"}}`; unknown fields are rejected,
/// `scaling` may be omitted.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecDoc {
    pub classes: Vec<String>,
    pub pools: Vec<PoolDoc>,
    pub edges: Vec<EdgeDoc>,
    pub lambda: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingDoc>,
}

impl TryFrom<SpecDoc> for SystemSpec<f64> {
    type Error = Error;

    fn try_from(doc: SpecDoc) -> Result<Self> {
        let classes: Vec<&str> = doc.classes.iter().map(|s| s.as_str()).collect();
        let pools: Vec<(&str, f64)> = doc.pools.iter().map(|p| (p.id.as_str(), p.beta)).collect();
        let edges: Vec<(&str, &str, f64)> = doc
            .edges
            .iter()
            .map(|e| (e.class.as_str(), e.pool.as_str(), e.mu))
            .collect();
        let lambda: Vec<(&str, f64)> = doc
            .lambda
            .iter()
            .map(|(k, &v)| (k.as_str(), v))
            .collect();
        let scaling = doc
            .scaling
            .as_ref()
            .map(|s| -> Result<ScalingFamily<f64>> {
                let mut l = vec![None; doc.classes.len()];
                for (k, &v) in &s.l {
                    let i = doc
                        .classes
                        .iter()
                        .position(|c| c == k)
                        .ok_or_else(|| Error::InvalidArgument(format!("unknown class id {k:?} in scaling.l")))?;
                    l[i] = Some(v);
                }
                let l = l
                    .into_iter()
                    .enumerate()
                    .map(|(i, v)| {
                        v.ok_or_else(|| {
                            Error::InvalidArgument(format!(
                                "missing scaling.l entry for class {:?}",
                                doc.classes[i]
                            ))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()?;
                Ok(ScalingFamily {
                    r_values: s.r.clone(),
                    l,
                    regime: s.regime,
                })
            })
            .transpose()?;

        SystemSpec::new(&classes, &pools, &edges, &lambda, scaling)
    }
}

impl From<&SystemSpec<f64>> for SpecDoc {
    fn from(spec: &SystemSpec<f64>) -> Self {
        SpecDoc {
            classes: spec.classes.clone(),
            pools: spec
                .pools
                .iter()
                .zip(&spec.beta)
                .map(|(id, &beta)| PoolDoc {
                    id: id.clone(),
                    beta,
                })
                .collect(),
            edges: spec
                .edges
                .iter()
                .map(|e| EdgeDoc {
                    class: spec.classes[e.class].clone(),
                    pool: spec.pools[e.pool].clone(),
                    mu: e.mu,
                })
                .collect(),
            lambda: spec
                .classes
                .iter()
                .zip(&spec.lambda)
                .map(|(c, &v)| (c.clone(), v))
                .collect(),
            scaling: spec.scaling.as_ref().map(|s| ScalingDoc {
                r: s.r_values.clone(),
                l: spec
                    .classes
                    .iter()
                    .zip(&s.l)
                    .map(|(c, &v)| (c.clone(), v))
                    .collect(),
                regime: s.regime,
            }),
        }
    }
}

impl SystemSpec<f64> {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SpecDoc = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("JSON parse error: {e}")))?;
        doc.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SpecDoc::from(self)).expect("spec serialization")
    }
}
