//! Exact stochastic simulation of the r-th system: an event-driven CTMC
//! engine and a uniformized embedded-chain engine, scaled-observable
//! recording, and the stationary estimators built on top (compact-set
//! mass, Lyapunov moments, the one-dimensional aggregate density).
//!
//! States are integer counts. Load comparisons between pools use integer
//! cross-multiplication against the rounded pool sizes, so argmin sets are
//! exact and tie-breaking is genuinely uniform rather than an artifact of
//! float rounding.

use crate::error::{Error, Result};
use crate::linstab::DriftMatrices;
use crate::model::{Adjacency, Regime, SystemSpec};
use crate::rng::replication_rng;
use crate::spp::{scaled_arrival_rates, solve_spp};
use crate::stats::{erf, ks_distance_to_cdf};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

/// RNG streams: diffusion paths use stream 0 (see `fluid`); CTMC
/// replications use 1 for the event engine and 2 for the uniformized
/// engine, so engine-equivalence comparisons are independent even on
/// shared seeds.
const STREAM_EVENT: u64 = 1;
const STREAM_UNIFORMIZED: u64 = 2;

/// Simulation engine selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Competing exponential clocks, one event per transition.
    Event,
    /// Embedded chain at the constant uniformization rate; virtual jumps
    /// leave the state unchanged. Same stationary law as `Event`.
    Uniformized,
}

impl FromStr for Engine {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "event" => Ok(Engine::Event),
            "uniformized" => Ok(Engine::Uniformized),
            other => Err(format!("unknown engine '{other}' (event|uniformized)")),
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Event => "event",
            Engine::Uniformized => "uniformized",
        })
    }
}

/// Integer state of the r-th system.
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    /// Servers of pool `edge.pool` busy with class `edge.class`, per edge.
    pub psi: Vec<u64>,
    /// Queue length per class.
    pub q: Vec<u64>,
    pub t: f64,
    /// N_j = round(r β_j).
    pub pool_size: Vec<u64>,
}

impl SimState {
    /// Busy servers of pool j.
    fn pool_occ(&self, adj: &Adjacency, j: usize) -> u64 {
        adj.pool_edges[j].iter().map(|&e| self.psi[e]).sum()
    }

    /// Verifies the capacity and work-conservation invariants.
    pub fn check(&self, spec: &SystemSpec<f64>) -> Result<()> {
        let adj = spec.adjacency();
        for j in 0..spec.num_pools() {
            if self.pool_occ(&adj, j) > self.pool_size[j] {
                return Err(Error::InvalidArgument(format!(
                    "pool {j} over capacity"
                )));
            }
        }
        for i in 0..spec.num_classes() {
            if self.q[i] > 0 {
                for &e in &adj.class_edges[i] {
                    let j = spec.edges()[e].pool;
                    if self.pool_occ(&adj, j) < self.pool_size[j] {
                        return Err(Error::InvalidArgument(format!(
                            "class {i} queues while pool {j} has a free server"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Immutable per-run tables: the spec with its r-th system rates and the
/// uniformization constant. Hot-loop precompute for the step functions.
pub struct SimSystem<'a> {
    pub spec: &'a SystemSpec<f64>,
    pub r: f64,
    /// λ^r_i per class.
    pub lambda_r: Vec<f64>,
    /// N_j = round(r β_j).
    pub pool_size: Vec<u64>,
    /// μ* = max over edges.
    pub mu_star: f64,
    /// Uniformization rate α^r r = Σ λ^r_i + Σ_j N_j μ*.
    pub alpha_rate: f64,
    adj: Adjacency,
}

/// N_j = round(r β_j); every pool must keep at least one server.
pub fn pool_sizes(spec: &SystemSpec<f64>, r: f64) -> Result<Vec<u64>> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument("r must be positive".into()));
    }
    spec.beta()
        .iter()
        .enumerate()
        .map(|(j, &b)| {
            let n = (r * b).round();
            if n < 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "pool {j} rounds to zero servers at r = {r}"
                )));
            }
            Ok(n as u64)
        })
        .collect()
}

impl<'a> SimSystem<'a> {
    pub fn new(spec: &'a SystemSpec<f64>, r: f64) -> Result<Self> {
        spec.validated()?;
        let pool_size = pool_sizes(spec, r)?;
        let lambda_r = scaled_arrival_rates(spec, r);
        if lambda_r.iter().any(|&l| l <= 0.0) {
            return Err(Error::InvalidArgument(
                "scaled arrival rates must stay positive".into(),
            ));
        }
        let mu_star = spec
            .edges()
            .iter()
            .map(|e| e.mu)
            .fold(0.0f64, f64::max);
        let alpha_rate = lambda_r.iter().sum::<f64>()
            + mu_star * pool_size.iter().map(|&n| n as f64).sum::<f64>();
        Ok(SimSystem {
            spec,
            r,
            lambda_r,
            pool_size,
            mu_star,
            alpha_rate,
            adj: spec.adjacency(),
        })
    }

    /// Initial state at the rounded nominal point: Ψ_ij = round(r ψ*_ij)
    /// repaired within each pool by decrementing the edges with the
    /// largest fractional parts until capacity holds; queues empty.
    pub fn initial_state(&self) -> Result<SimState> {
        let spp = solve_spp(self.spec)?;
        let targets: Vec<f64> = spp.psi_star.iter().map(|&p| self.r * p).collect();
        let mut psi: Vec<u64> = targets.iter().map(|&x| x.round() as u64).collect();
        for j in 0..self.spec.num_pools() {
            loop {
                let occ: u64 = self.adj.pool_edges[j].iter().map(|&e| psi[e]).sum();
                if occ <= self.pool_size[j] {
                    break;
                }
                let e_cut = self.adj.pool_edges[j]
                    .iter()
                    .copied()
                    .filter(|&e| psi[e] > 0)
                    .max_by(|&a, &b| {
                        let fa = targets[a].fract();
                        let fb = targets[b].fract();
                        fa.partial_cmp(&fb).unwrap().then(b.cmp(&a))
                    });
                let e_cut = e_cut.expect("over-capacity pool must have a busy edge");
                psi[e_cut] -= 1;
            }
        }
        let state = SimState {
            psi,
            q: vec![0; self.spec.num_classes()],
            t: 0.0,
            pool_size: self.pool_size.clone(),
        };
        debug_assert!(state.check(self.spec).is_ok());
        Ok(state)
    }

    /// Routes an arrival of `class`: to the least-loaded compatible pool
    /// with a free server (ties uniform), or to the queue.
    fn route_arrival(&self, state: &mut SimState, class: usize, rng: &mut ChaCha8Rng) {
        // argmin over free-server pools of Ψ_j / N_j by exact integer
        // cross-multiplication; `best` collects the current argmin edges.
        let mut best: Vec<usize> = Vec::with_capacity(4);
        let mut best_occ = 0u64;
        let mut best_n = 0u64;
        for &e in &self.adj.class_edges[class] {
            let j = self.spec.edges()[e].pool;
            let occ = state.pool_occ(&self.adj, j);
            let n = state.pool_size[j];
            if occ >= n {
                continue;
            }
            if best.is_empty() {
                best.push(e);
                best_occ = occ;
                best_n = n;
                continue;
            }
            let lhs = occ as u128 * best_n as u128;
            let rhs = best_occ as u128 * n as u128;
            if lhs < rhs {
                best.clear();
                best.push(e);
                best_occ = occ;
                best_n = n;
            } else if lhs == rhs {
                best.push(e);
            }
        }
        if best.is_empty() {
            state.q[class] += 1;
        } else {
            let pick = if best.len() == 1 {
                best[0]
            } else {
                best[rng.gen_range(0..best.len())]
            };
            state.psi[pick] += 1;
        }
    }

    /// Total CTMC transition rate out of `state`.
    fn total_event_rate(&self, state: &SimState) -> f64 {
        let mut total = 0.0;
        for &l in &self.lambda_r {
            total += l;
        }
        for (e, edge) in self.spec.edges().iter().enumerate() {
            total += edge.mu * state.psi[e] as f64;
        }
        total
    }

    /// Samples and applies one transition with the selector drawn from
    /// [0, budget). Budget mass beyond the live rates is a virtual no-op
    /// when `virtual_ok` (uniformized chain); otherwise it can only be
    /// float roundoff and the last live completion is applied.
    fn apply_transition(
        &self,
        state: &mut SimState,
        budget: f64,
        virtual_ok: bool,
        rng: &mut ChaCha8Rng,
    ) {
        let mut u: f64 = rng.gen_range(0.0..budget);
        for (i, &l) in self.lambda_r.iter().enumerate() {
            if u < l {
                self.route_arrival(state, i, rng);
                return;
            }
            u -= l;
        }
        for (e, edge) in self.spec.edges().iter().enumerate() {
            let rate = edge.mu * state.psi[e] as f64;
            if u < rate {
                self.complete_on_edge(state, e, rng);
                return;
            }
            u -= rate;
        }
        if !virtual_ok {
            if let Some(e) = (0..state.psi.len()).rev().find(|&e| state.psi[e] > 0) {
                self.complete_on_edge(state, e, rng);
            }
        }
    }

    /// Applies a completion on `edge`: frees the server, then admits from
    /// the longest positive queue among the pool's classes (ties uniform).
    fn complete_on_edge(&self, state: &mut SimState, edge: usize, rng: &mut ChaCha8Rng) {
        debug_assert!(state.psi[edge] > 0);
        state.psi[edge] -= 1;
        let j = self.spec.edges()[edge].pool;
        let mut best: Vec<usize> = Vec::with_capacity(4);
        let mut best_q = 0u64;
        for &e in &self.adj.pool_edges[j] {
            let i = self.spec.edges()[e].class;
            let qi = state.q[i];
            if qi == 0 {
                continue;
            }
            if qi > best_q {
                best.clear();
                best.push(e);
                best_q = qi;
            } else if qi == best_q {
                best.push(e);
            }
        }
        if let Some(&first) = best.first() {
            let pick = if best.len() == 1 {
                first
            } else {
                best[rng.gen_range(0..best.len())]
            };
            state.psi[pick] += 1;
            state.q[self.spec.edges()[pick].class] -= 1;
        }
    }
}

/// One transition of the event-driven CTMC: advances the clock by the
/// exponential holding time and applies the sampled arrival or completion.
pub fn step_event(state: &mut SimState, sys: &SimSystem, rng: &mut ChaCha8Rng) {
    let total = sys.total_event_rate(state);
    let hold: f64 = Exp1.sample(rng);
    state.t += hold / total;
    sys.apply_transition(state, total, false, rng);
}

/// One step of the uniformized embedded chain: fixed mean holding time
/// 1/(α^r r), and a virtual (no-op) transition absorbs the spare rate. The
/// embedded chain's stationary law equals the CTMC's.
pub fn step_uniformized(state: &mut SimState, sys: &SimSystem, rng: &mut ChaCha8Rng) {
    state.t += 1.0 / sys.alpha_rate;
    sys.apply_transition(state, sys.alpha_rate, true, rng);
}

/// Diffusion-scaled samples of one replication.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScaledSeries {
    pub r: f64,
    pub seed: u64,
    pub engine: Engine,
    pub regime: Regime,
    pub burn_in: f64,
    /// β_j, carried for the Lyapunov weights.
    pub beta: Vec<f64>,
    /// λ_i of the base system.
    pub lambda: Vec<f64>,
    /// Pool service rate μ_j when the spec has μ_ij = μ_j, else None.
    pub pool_mu: Option<Vec<f64>>,
    /// Halfin-Whitt slack constant C = -Σ l_i ν_i (None in underload).
    pub hw_c: Option<f64>,
    pub spec_hash: u64,
    pub t: Vec<f64>,
    /// Ψ̂_ij = (Ψ_ij - rψ*_ij)/√r, one row per sample.
    pub psi_hat: Vec<Vec<f64>>,
    /// Q̂_i = Q_i/√r.
    pub q_hat: Vec<Vec<f64>>,
    /// Ẑ_j = (Ψ_j - N_j)/√r in Halfin-Whitt, (Ψ_j - rβ_jρ)/√r in underload.
    pub z_hat: Vec<Vec<f64>>,
}

impl ScaledSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Per-pool service rate when every edge of a pool carries the same μ.
fn uniform_pool_rates(spec: &SystemSpec<f64>) -> Option<Vec<f64>> {
    let mut mu = vec![None; spec.num_pools()];
    for e in spec.edges() {
        match mu[e.pool] {
            None => mu[e.pool] = Some(e.mu),
            Some(m) if m == e.mu => {}
            Some(_) => return None,
        }
    }
    mu.into_iter().collect()
}

/// FNV-1a 64 over the canonical JSON encoding of the spec: a stable
/// fingerprint for artifact metadata.
pub fn spec_hash(spec: &SystemSpec<f64>) -> u64 {
    let doc = spec.to_json();
    let mut h: u64 = 0xcbf29ce484222325;
    for b in doc.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Burn-in heuristic: max(100, 20/gap) time units, where gap is the
/// smallest |Re λ| of the underload drift spectrum; systems with no usable
/// gap fall back to the baseline.
pub fn default_burn_in(dm: &DriftMatrices<f64>) -> f64 {
    let gap = dm
        .eig_u
        .values
        .iter()
        .map(|z| z.re.abs())
        .fold(f64::INFINITY, f64::min);
    if !(gap > 1e-9) || !gap.is_finite() {
        return 100.0;
    }
    (20.0 / gap).max(100.0)
}

/// Simulates one replication to time `t_end` and records scaled
/// observables every `sample_dt` after `burn_in` (first sample at
/// burn_in + sample_dt). Deterministic given the seed; the two engines
/// consume independent RNG streams.
pub fn run_replication(
    spec: &SystemSpec<f64>,
    r: f64,
    t_end: f64,
    burn_in: f64,
    sample_dt: f64,
    seed: u64,
    engine: Engine,
) -> Result<ScaledSeries> {
    if !(t_end > burn_in) {
        return Err(Error::InvalidArgument(format!(
            "t_end = {t_end} must exceed burn_in = {burn_in}"
        )));
    }
    if !(sample_dt > 0.0) || !(burn_in >= 0.0) {
        return Err(Error::InvalidArgument(
            "need sample_dt > 0 and burn_in >= 0".into(),
        ));
    }
    let sys = SimSystem::new(spec, r)?;
    let spp = solve_spp(spec)?;
    let regime = match spec.scaling() {
        Some(s) => s.regime,
        None => Regime::Underload,
    };
    let hw_c = match regime {
        Regime::HalfinWhitt => Some(spp.hw_c.ok_or_else(|| {
            Error::Regime("halfin_whitt replication needs the scaling family's C".into())
        })?),
        Regime::Underload => None,
    };
    let sqrt_r = r.sqrt();
    let center_psi: Vec<f64> = spp.psi_star.iter().map(|&p| r * p).collect();
    let center_z: Vec<f64> = match regime {
        Regime::HalfinWhitt => sys.pool_size.iter().map(|&n| n as f64).collect(),
        Regime::Underload => spec.beta().iter().map(|&b| r * b * spp.rho).collect(),
    };

    let mut state = sys.initial_state()?;
    let stream = match engine {
        Engine::Event => STREAM_EVENT,
        Engine::Uniformized => STREAM_UNIFORMIZED,
    };
    let mut rng = replication_rng(seed, stream);

    let mut series = ScaledSeries {
        r,
        seed,
        engine,
        regime,
        burn_in,
        beta: spec.beta().to_vec(),
        lambda: spec.lambda().to_vec(),
        pool_mu: uniform_pool_rates(spec),
        hw_c,
        spec_hash: spec_hash(spec),
        t: Vec::new(),
        psi_hat: Vec::new(),
        q_hat: Vec::new(),
        z_hat: Vec::new(),
    };

    let mut next_sample = burn_in + sample_dt;
    let adj = spec.adjacency();
    // The configuration in force on [t_k, t_{k+1}) is the one before the
    // jump at t_{k+1}: draw the next event time first, record any sample
    // instants it crosses from the current configuration, then apply the
    // transition. The RNG draw order matches the public step functions,
    // so paths stay bit-identical to repeated step_* calls.
    while next_sample <= t_end {
        let (t_next, budget, virtual_ok) = match engine {
            Engine::Event => {
                let total = sys.total_event_rate(&state);
                let hold: f64 = Exp1.sample(&mut rng);
                (state.t + hold / total, total, false)
            }
            Engine::Uniformized => {
                (state.t + 1.0 / sys.alpha_rate, sys.alpha_rate, true)
            }
        };
        while next_sample <= t_end && next_sample < t_next {
            series.t.push(next_sample);
            series
                .psi_hat
                .push(
                    state
                        .psi
                        .iter()
                        .zip(&center_psi)
                        .map(|(&p, &c)| (p as f64 - c) / sqrt_r)
                        .collect(),
                );
            series
                .q_hat
                .push(state.q.iter().map(|&q| q as f64 / sqrt_r).collect());
            series.z_hat.push(
                (0..spec.num_pools())
                    .map(|j| (state.pool_occ(&adj, j) as f64 - center_z[j]) / sqrt_r)
                    .collect(),
            );
            next_sample += sample_dt;
        }
        state.t = t_next;
        sys.apply_transition(&mut state, budget, virtual_ok, &mut rng);
        debug_assert!(state.check(spec).is_ok());
    }
    Ok(series)
}

/// Runs one replication per seed in parallel; the result order matches the
/// seed order, so the merge is deterministic.
pub fn run_ensemble(
    spec: &SystemSpec<f64>,
    r: f64,
    t_end: f64,
    burn_in: f64,
    sample_dt: f64,
    seeds: &[u64],
    engine: Engine,
) -> Result<Vec<ScaledSeries>> {
    seeds
        .par_iter()
        .map(|&seed| run_replication(spec, r, t_end, burn_in, sample_dt, seed, engine))
        .collect()
}

/// Fraction of samples with ‖Ψ̂_ℰ‖₂ ≤ K.
pub fn mass_in_ball(series: &ScaledSeries, k: f64) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::InvalidArgument("mass_in_ball needs samples".into()));
    }
    let hits = series
        .psi_hat
        .iter()
        .filter(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt() <= k)
        .count();
    Ok(hits as f64 / series.len() as f64)
}

/// Empirical mean of Σ_i exp(θ Q̂_i) + Σ_j β_j exp(θ Ẑ_j/β_j) over the
/// samples. Overflow is reported as +∞ rather than a crash.
pub fn lyapunov_moment(series: &ScaledSeries, theta: f64) -> Result<f64> {
    if series.regime != Regime::HalfinWhitt {
        return Err(Error::Regime(
            "lyapunov_moment applies to halfin_whitt samples".into(),
        ));
    }
    if series.is_empty() {
        return Err(Error::InvalidArgument("lyapunov_moment needs samples".into()));
    }
    let mut acc = 0.0f64;
    for (qrow, zrow) in series.q_hat.iter().zip(&series.z_hat) {
        let mut v = 0.0f64;
        for &qh in qrow {
            v += (theta * qh).exp();
        }
        for (&zh, &b) in zrow.iter().zip(&series.beta) {
            v += b * (theta * zh / b).exp();
        }
        if !v.is_finite() {
            return Ok(f64::INFINITY);
        }
        acc += v;
    }
    let mean = acc / series.len() as f64;
    Ok(if mean.is_finite() { mean } else { f64::INFINITY })
}

/// θ₀ = 2 min_i λ_i / (Σ_i λ_i + μ* Σ_j β_j): the Lyapunov moment bound
/// holds for θ below this threshold.
pub fn theta0(spec: &SystemSpec<f64>) -> f64 {
    let min_l = spec.lambda().iter().copied().fold(f64::INFINITY, f64::min);
    let mu_star = spec.edges().iter().map(|e| e.mu).fold(0.0f64, f64::max);
    let alpha_star =
        spec.lambda().iter().sum::<f64>() + mu_star * spec.beta().iter().sum::<f64>();
    2.0 * min_l / alpha_star
}

/// One-dimensional projections of the scaled state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Projection {
    /// Ŷ = Σ_i Q̂_i + Σ_j Ẑ_j, the aggregate the limit theorem collapses to.
    YAggregate,
}

/// Stationary law of the aggregate diffusion for μ_ij = μ_j systems at
/// critical load: density ∝ exp(-(2mc/σ²) x) for x ≥ 0 (exponential) and
/// ∝ exp(-a(x² + 2cx)), a = m/σ², for x ≤ 0 (Gaussian), continuous at 0.
///
/// The drift of Ŷ is -m(c + min(x, 0)) with m = Σ_j μ_j β_j / Σ_k β_k (the
/// β-weighted mean service rate) and c = C Σ_k β_k: under the state-space
/// collapse Ẑ_j = (β_j/Σβ)·min(Ŷ,0), these are the coefficients for which
/// the stationary mean E[min(Ŷ,0)] = -c reproduces the capacity slack
/// Σ_j μ_j E[-Ẑ_j] = C Σ_j μ_j β_j of the r-th systems; σ² = 2 Σ_i λ_i.
#[derive(Clone, Copy, Debug)]
pub struct AggregateDensity {
    pub m: f64,
    pub sigma2: f64,
    pub c: f64,
    norm: f64,
}

impl AggregateDensity {
    pub fn new(m: f64, sigma2: f64, c: f64) -> Result<Self> {
        if !(m > 0.0) || !(sigma2 > 0.0) || !(c > 0.0) {
            return Err(Error::InvalidArgument(
                "aggregate density needs m, sigma2, C > 0".into(),
            ));
        }
        let a = m / sigma2;
        let sa = a.sqrt();
        let norm = sigma2 / (2.0 * m * c)
            + (a * c * c).exp() * std::f64::consts::PI.sqrt() / (2.0 * sa)
                * (1.0 + erf(c * sa));
        Ok(AggregateDensity { m, sigma2, c, norm })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let a = self.m / self.sigma2;
        let un = if x >= 0.0 {
            (-(2.0 * self.m * self.c / self.sigma2) * x).exp()
        } else {
            (-a * (x * x + 2.0 * self.c * x)).exp()
        };
        un / self.norm
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let a = self.m / self.sigma2;
        let sa = a.sqrt();
        let gauss_part = |u: f64| -> f64 {
            // ∫_{-∞}^{u} exp(-a(s² + 2Cs)) ds for u ≤ 0.
            (a * self.c * self.c).exp() * std::f64::consts::PI.sqrt() / (2.0 * sa)
                * (1.0 + erf((u + self.c) * sa))
        };
        let v = if x <= 0.0 {
            gauss_part(x)
        } else {
            gauss_part(0.0)
                + self.sigma2 / (2.0 * self.m * self.c)
                    * (1.0 - (-(2.0 * self.m * self.c / self.sigma2) * x).exp())
        };
        (v / self.norm).clamp(0.0, 1.0)
    }
}

/// Histogram of a 1-D projection with its analytic comparison.
#[derive(Clone, Debug)]
pub struct DensityEstimate {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub samples: usize,
    /// KS distance between the empirical law and the analytic CDF.
    pub ks_distance: f64,
    pub analytic: AggregateDensity,
}

/// Projects the samples to Ŷ = Σ Q̂ + Σ Ẑ, histograms them, and reports the
/// KS distance to the analytic stationary law. Requires μ_ij = μ_j
/// Halfin-Whitt samples (the regimes where the aggregate collapse holds).
pub fn stationary_density_1d(
    series: &ScaledSeries,
    projection: Projection,
) -> Result<DensityEstimate> {
    let Projection::YAggregate = projection;
    if series.regime != Regime::HalfinWhitt {
        return Err(Error::Regime(
            "stationary_density_1d applies to halfin_whitt samples".into(),
        ));
    }
    let pool_mu = series.pool_mu.as_ref().ok_or_else(|| {
        Error::Regime("stationary_density_1d needs uniform per-pool service rates".into())
    })?;
    let c = series
        .hw_c
        .ok_or_else(|| Error::Regime("stationary_density_1d needs the slack constant C".into()))?;
    if series.is_empty() {
        return Err(Error::InvalidArgument("density estimate needs samples".into()));
    }
    let beta_sum: f64 = series.beta.iter().sum();
    let m = series
        .beta
        .iter()
        .zip(pool_mu)
        .map(|(b, mu)| b * mu)
        .sum::<f64>()
        / beta_sum;
    let sigma2 = 2.0 * series.lambda.iter().sum::<f64>();
    let analytic = AggregateDensity::new(m, sigma2, c * beta_sum)?;

    let mut y: Vec<f64> = series
        .q_hat
        .iter()
        .zip(&series.z_hat)
        .map(|(qr, zr)| qr.iter().sum::<f64>() + zr.iter().sum::<f64>())
        .collect();
    y.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ks_distance = ks_distance_to_cdf(&y, |x| analytic.cdf(x));

    let n = y.len();
    let bins = ((n as f64).sqrt().ceil() as usize).clamp(10, 200);
    let (lo, hi) = (y[0], y[n - 1]);
    let width = ((hi - lo) / bins as f64).max(f64::MIN_POSITIVE);
    let mut counts = vec![0u64; bins];
    for &v in &y {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let bin_edges = (0..=bins).map(|k| lo + k as f64 * width).collect();
    Ok(DensityEstimate {
        bin_edges,
        counts,
        samples: n,
        ks_distance,
        analytic,
    })
}

/// Writes one replication as CSV: `t` then per-edge, per-class, per-pool
/// scaled observables with name-qualified headers.
pub fn write_series_csv<W: Write>(
    series: &ScaledSeries,
    spec: &SystemSpec<f64>,
    out: &mut W,
) -> std::io::Result<()> {
    let mut header = vec!["t".to_string()];
    for e in spec.edges() {
        header.push(format!(
            "psi:{}:{}",
            spec.classes()[e.class],
            spec.pools()[e.pool]
        ));
    }
    for c in spec.classes() {
        header.push(format!("q:{c}"));
    }
    for p in spec.pools() {
        header.push(format!("z:{p}"));
    }
    writeln!(out, "{}", header.join(","))?;
    for k in 0..series.len() {
        let mut row = Vec::with_capacity(header.len());
        row.push(series.t[k].to_string());
        row.extend(series.psi_hat[k].iter().map(|v| v.to_string()));
        row.extend(series.q_hat[k].iter().map(|v| v.to_string()));
        row.extend(series.z_hat[k].iter().map(|v| v.to_string()));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Sidecar metadata for a persisted replication.
pub fn series_metadata_json(series: &ScaledSeries) -> serde_json::Value {
    serde_json::json!({
        "spec_hash": format!("{:016x}", series.spec_hash),
        "r": series.r,
        "seed": series.seed,
        "engine": series.engine.to_string(),
        "regime": match series.regime {
            Regime::Underload => "underload",
            Regime::HalfinWhitt => "halfin_whitt",
        },
        "burn_in": series.burn_in,
        "samples": series.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ScalingFamily;
    use crate::registry;

    fn mm_n_spec() -> SystemSpec<f64> {
        SystemSpec::new(
            &["A"],
            &[("1", 1.0)],
            &[("A", "1", 1.0)],
            &[("A", 0.5)],
            None,
        )
        .unwrap()
    }

    /// Two classes, two unit pools, μ_ij = μ_j, critical load with l = -1.
    fn hw_two_pool() -> SystemSpec<f64> {
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

    #[test]
    fn first_event_on_empty_system_is_arrival() {
        let spec = mm_n_spec();
        let sys = SimSystem::new(&spec, 10.0).unwrap();
        let mut state = SimState {
            psi: vec![0],
            q: vec![0],
            t: 0.0,
            pool_size: sys.pool_size.clone(),
        };
        let mut rng = replication_rng(1, STREAM_EVENT);
        step_event(&mut state, &sys, &mut rng);
        assert_eq!(state.psi[0], 1);
        assert_eq!(state.q[0], 0);
        assert!(state.t > 0.0);
    }

    #[test]
    fn tied_pools_split_evenly() {
        // Two identical pools, both empty: the tie rule must pick each
        // with frequency 1/2.
        let spec = SystemSpec::new(
            &["A"],
            &[("1", 1.0), ("2", 1.0)],
            &[("A", "1", 1.0), ("A", "2", 1.0)],
            &[("A", 0.5)],
            None,
        )
        .unwrap();
        let sys = SimSystem::new(&spec, 10.0).unwrap();
        let mut rng = replication_rng(7, STREAM_EVENT);
        let trials = 10_000;
        let mut first = 0usize;
        for _ in 0..trials {
            let mut state = SimState {
                psi: vec![0, 0],
                q: vec![0],
                t: 0.0,
                pool_size: sys.pool_size.clone(),
            };
            sys.route_arrival(&mut state, 0, &mut rng);
            if state.psi[0] == 1 {
                first += 1;
            }
        }
        let freq = first as f64 / trials as f64;
        assert!((freq - 0.5).abs() < 0.02, "tie frequency {freq}");
    }

    #[test]
    fn completion_serves_longest_queue() {
        let spec = SystemSpec::new(
            &["A", "B"],
            &[("1", 1.0)],
            &[("A", "1", 1.0), ("B", "1", 1.0)],
            &[("A", 0.4), ("B", 0.4)],
            None,
        )
        .unwrap();
        let sys = SimSystem::new(&spec, 10.0).unwrap();
        let mut state = SimState {
            psi: vec![5, 5],
            q: vec![3, 7],
            t: 0.0,
            pool_size: vec![10],
        };
        let mut rng = replication_rng(3, STREAM_EVENT);
        sys.complete_on_edge(&mut state, 0, &mut rng);
        assert_eq!(state.q, vec![3, 6]);
        assert_eq!(state.psi, vec![4, 6]);
    }

    #[test]
    fn virtual_transition_probability_matches_formula() {
        let spec = mm_n_spec();
        let sys = SimSystem::new(&spec, 100.0).unwrap();
        // Empty system: only arrivals can fire; P(virtual) = 1 - Σλ^r/αr.
        let p_virtual = 1.0 - sys.lambda_r.iter().sum::<f64>() / sys.alpha_rate;
        assert!((p_virtual - (1.0 - 50.0 / 150.0)).abs() < 1e-12);
        let mut rng = replication_rng(11, STREAM_UNIFORMIZED);
        let trials = 20_000;
        let mut virtuals = 0usize;
        for _ in 0..trials {
            let mut state = SimState {
                psi: vec![0],
                q: vec![0],
                t: 0.0,
                pool_size: sys.pool_size.clone(),
            };
            step_uniformized(&mut state, &sys, &mut rng);
            if state.psi[0] == 0 {
                virtuals += 1;
            }
        }
        let freq = virtuals as f64 / trials as f64;
        assert!((freq - p_virtual).abs() < 0.01, "virtual freq {freq}");
    }

    #[test]
    fn replication_is_seed_deterministic() {
        let spec = hw_two_pool();
        let a = run_replication(&spec, 100.0, 30.0, 5.0, 0.5, 42, Engine::Event).unwrap();
        let b = run_replication(&spec, 100.0, 30.0, 5.0, 0.5, 42, Engine::Event).unwrap();
        assert_eq!(a.t, b.t);
        assert_eq!(a.psi_hat, b.psi_hat);
        assert_eq!(a.q_hat, b.q_hat);
        assert_eq!(a.z_hat, b.z_hat);
        let c = run_replication(&spec, 100.0, 30.0, 5.0, 0.5, 43, Engine::Event).unwrap();
        assert_ne!(a.psi_hat, c.psi_hat);
    }

    #[test]
    fn hw_centering_signs() {
        let spec = hw_two_pool();
        let s = run_replication(&spec, 100.0, 40.0, 5.0, 0.25, 9, Engine::Uniformized).unwrap();
        assert!(!s.is_empty());
        for row in &s.z_hat {
            assert!(row.iter().all(|&z| z <= 0.0));
        }
        for row in &s.q_hat {
            assert!(row.iter().all(|&q| q >= 0.0));
        }
    }

    #[test]
    fn empty_sample_window_is_empty() {
        let spec = hw_two_pool();
        let s = run_replication(&spec, 100.0, 5.0 + 1e-9, 5.0, 10.0, 1, Engine::Event).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn lyapunov_moment_at_zero_theta_is_exact() {
        let spec = hw_two_pool();
        let s = run_replication(&spec, 100.0, 20.0, 2.0, 0.5, 5, Engine::Event).unwrap();
        let v = lyapunov_moment(&s, 0.0).unwrap();
        let expect = 2.0 + s.beta.iter().sum::<f64>();
        assert_eq!(v, expect);
        // Negative θ: the queue term is bounded by I.
        let s_theta = -0.3;
        let mut worst: f64 = 0.0;
        for qrow in &s.q_hat {
            let term: f64 = qrow.iter().map(|&qh| (s_theta * qh).exp()).sum();
            worst = worst.max(term);
        }
        assert!(worst <= 2.0 + 1e-12);
    }

    #[test]
    fn mass_in_ball_sentinel() {
        let spec = hw_two_pool();
        let s = run_replication(&spec, 100.0, 20.0, 2.0, 0.5, 5, Engine::Event).unwrap();
        assert_eq!(mass_in_ball(&s, 1e18).unwrap(), 1.0);
    }

    #[test]
    fn analytic_density_normalizes() {
        let d = AggregateDensity::new(2.5, 5.0, 0.8).unwrap();
        // Simpson quadrature over [-12, 40].
        let (a, b, n) = (-12.0f64, 40.0f64, 40_000usize);
        let h = (b - a) / n as f64;
        let mut s = d.pdf(a) + d.pdf(b);
        for k in 1..n {
            let x = a + k as f64 * h;
            s += d.pdf(x) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        let integral = s * h / 3.0;
        assert!((integral - 1.0).abs() < 1e-8, "integral {integral}");
        // CDF endpoints and continuity at the concatenation point.
        assert!(d.cdf(-12.0) < 1e-8);
        assert!((d.cdf(40.0) - 1.0).abs() < 1e-8);
        let eps = 1e-9;
        assert!((d.cdf(eps) - d.cdf(-eps)).abs() < 1e-8);
        // Doubling C shifts the Gaussian-side mode further negative.
        let d2 = AggregateDensity::new(2.5, 5.0, 1.6).unwrap();
        assert!(d2.pdf(-1.6) / d2.pdf(0.0) > d.pdf(-1.6) / d.pdf(0.0));
    }

    #[test]
    fn spec_hash_is_stable_and_sensitive() {
        let spec = registry::get("fig1").unwrap();
        let h1 = spec_hash(&spec);
        let h2 = spec_hash(&registry::get("fig1").unwrap());
        assert_eq!(h1, h2);
        let other = registry::get("example1").unwrap();
        assert_ne!(h1, spec_hash(&other));
    }

    #[test]
    fn csv_layout_matches_names() {
        let spec = hw_two_pool();
        let s = run_replication(&spec, 100.0, 10.0, 1.0, 1.0, 2, Engine::Event).unwrap();
        let mut buf = Vec::new();
        write_series_csv(&s, &spec, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header, "t,psi:A:1,psi:A:2,psi:B:2,q:A,q:B,z:1,z:2");
        assert_eq!(text.lines().count(), 1 + s.len());
    }

    #[test]
    fn initial_state_respects_capacity() {
        for name in ["fig1", "example1", "example2", "fig5_star", "combined"] {
            let spec = registry::get(name).unwrap();
            for r in [100.0, 400.0] {
                let sys = SimSystem::new(&spec, r).unwrap();
                let st = sys.initial_state().unwrap();
                st.check(&spec).unwrap();
            }
        }
    }
}
