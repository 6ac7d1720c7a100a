//! Trajectory commands: `fluid` (deterministic and diffusion paths of the
//! scaled models) and `simulate` (one finite-r replication of the chain).

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use lqfs::fluid::{
    fluid_integrate, linear_ode_critical, linear_ode_underload, sde_halfin_whitt, sde_underload,
    ClassTrajectory, EquilibriumPoint, FluidState, DEFAULT_Q_EQ,
};
use lqfs::linstab::build_drift;
use lqfs::model::{Regime, SystemSpec};
use lqfs::sim::{
    default_burn_in, run_replication, series_metadata_json, spec_hash, write_series_csv,
};
use lqfs::spp::solve_spp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{emit, parse_engine, resolve_seed, usage_error, Failure, SpecSource};

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FluidMode {
    /// Linearized dynamics around the nominal point (regime by load).
    Linear,
    /// The full nonlinear fluid model.
    Full,
    /// The limiting diffusion (Euler-Maruyama path).
    Sde,
}

#[derive(Args)]
pub struct FluidArgs {
    #[command(flatten)]
    source: SpecSource,

    #[arg(long, value_enum, default_value_t = FluidMode::Full)]
    mode: FluidMode,

    /// Horizon in fluid time units.
    #[arg(long, default_value_t = 10.0)]
    t: f64,

    /// Integrator step.
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,

    /// Size of the random initial deviation from the nominal point;
    /// `linear` mode defaults to 1e-2 instead so the trajectory is visible.
    #[arg(long)]
    perturb: Option<f64>,

    /// RNG seed for the perturbation direction and the diffusion driver;
    /// drawn and printed when omitted.
    #[arg(long)]
    seed: Option<u64>,

    /// Write the CSV here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Random direction of the given norm in edge space.
fn edge_perturbation(spec: &SystemSpec<f64>, norm: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut d: Vec<f64> = (0..spec.num_edges())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut d {
        *v *= norm / n;
    }
    d
}

/// Per-class sums of an edge-space vector.
fn class_sums(spec: &SystemSpec<f64>, edge: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; spec.num_classes()];
    for (e, d) in spec.edges().iter().zip(edge) {
        y[e.class] += d;
    }
    y
}

fn class_trajectory_csv(spec: &SystemSpec<f64>, traj: &ClassTrajectory<f64>) -> String {
    let mut header: Vec<String> = vec!["t".into()];
    header.extend(spec.classes().iter().map(|c| format!("y:{c}")));
    for e in spec.edges() {
        header.push(format!(
            "psi:{}:{}",
            spec.classes()[e.class],
            spec.pools()[e.pool]
        ));
    }
    if traj.q.is_some() {
        header.extend(spec.classes().iter().map(|c| format!("q:{c}")));
    }
    let mut out = String::new();
    writeln!(out, "{}", header.join(",")).unwrap();
    for k in 0..traj.t.len() {
        let mut row: Vec<String> = vec![traj.t[k].to_string()];
        row.extend(traj.y[k].iter().map(|v| v.to_string()));
        row.extend(traj.psi_edge[k].iter().map(|v| v.to_string()));
        if let Some(q) = &traj.q {
            row.extend(q[k].iter().map(|v| v.to_string()));
        }
        writeln!(out, "{}", row.join(",")).unwrap();
    }
    out
}

/// Keeps roughly a thousand rows regardless of step count.
fn auto_stride(t_end: f64, dt: f64) -> usize {
    ((t_end / dt) / 1000.0).ceil().max(1.0) as usize
}

pub fn fluid(args: FluidArgs) -> Result<(), Failure> {
    let spec = args.source.load()?;
    if !(args.t > 0.0) || !(args.dt > 0.0) {
        return Err(usage_error("need t > 0 and dt > 0"));
    }
    let spp = solve_spp(&spec)?;
    let critical = spp.rho >= 1.0 - 1e-9;
    let needs_rng =
        args.mode == FluidMode::Sde || args.perturb.unwrap_or(0.0) > 0.0 || args.mode == FluidMode::Linear;
    let seed = if needs_rng { resolve_seed(args.seed) } else { 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stride = auto_stride(args.t, args.dt);
    let grid: Vec<f64> = (0..)
        .map(|k| k as f64 * args.dt * stride as f64)
        .take_while(|&t| t <= args.t)
        .collect();

    let csv = match args.mode {
        FluidMode::Linear => {
            let dm = build_drift(&spec)?;
            let delta = edge_perturbation(&spec, args.perturb.unwrap_or(1e-2), &mut rng);
            let y0 = class_sums(&spec, &delta);
            let traj = if critical {
                // The critical linearization lives on the zero-sum manifold.
                let mean = y0.iter().sum::<f64>() / y0.len() as f64;
                let y0: Vec<f64> = y0.iter().map(|v| v - mean).collect();
                linear_ode_critical(&spec, &dm, &y0, &grid, DEFAULT_Q_EQ)?
            } else {
                linear_ode_underload(&spec, &dm, &y0, &grid)?
            };
            class_trajectory_csv(&spec, &traj)
        }
        FluidMode::Full => {
            let q_eq = if critical { DEFAULT_Q_EQ } else { 0.0 };
            let eq = EquilibriumPoint::from_spp(&spp, q_eq);
            let mut state = eq.state(&spec);
            if let Some(norm) = args.perturb {
                if norm > 0.0 {
                    let delta = edge_perturbation(&spec, norm, &mut rng);
                    for (p, d) in state.psi_edge.iter_mut().zip(&delta) {
                        *p = (*p + d).max(0.0);
                    }
                }
            }
            let traj = fluid_integrate(&spec, &FluidState { t: 0.0, ..state }, args.dt, args.t, stride)?;
            let mut header: Vec<String> = vec!["t".into()];
            for e in spec.edges() {
                header.push(format!(
                    "psi:{}:{}",
                    spec.classes()[e.class],
                    spec.pools()[e.pool]
                ));
            }
            header.extend(spec.classes().iter().map(|c| format!("q:{c}")));
            let mut out = String::new();
            writeln!(out, "{}", header.join(",")).unwrap();
            for k in 0..traj.t.len() {
                let mut row: Vec<String> = vec![traj.t[k].to_string()];
                row.extend(traj.psi_edge[k].iter().map(|v| v.to_string()));
                row.extend(traj.q[k].iter().map(|v| v.to_string()));
                writeln!(out, "{}", row.join(",")).unwrap();
            }
            out
        }
        FluidMode::Sde => {
            let dm = build_drift(&spec)?;
            let y0 = match args.perturb {
                Some(norm) if norm > 0.0 => {
                    class_sums(&spec, &edge_perturbation(&spec, norm, &mut rng))
                }
                _ => vec![0.0; spec.num_classes()],
            };
            let hw = matches!(spec.scaling(), Some(s) if s.regime == Regime::HalfinWhitt);
            let traj = if hw {
                sde_halfin_whitt(&spec, &dm, &y0, args.dt, args.t, seed, stride)?
            } else {
                sde_underload(&spec, &dm, &y0, args.dt, args.t, seed, stride)?
            };
            class_trajectory_csv(&spec, &traj)
        }
    };
    emit(args.output.as_ref(), &csv)
}

#[derive(Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    source: SpecSource,

    /// Scale parameter: pool j has round(r β_j) servers.
    #[arg(long)]
    r: f64,

    /// Horizon in chain time units.
    #[arg(long)]
    t: f64,

    /// Warm-up to discard; the spectral-gap heuristic when omitted.
    #[arg(long)]
    burn: Option<f64>,

    /// Spacing of recorded samples.
    #[arg(long, default_value_t = 1.0)]
    sample_dt: f64,

    /// event | uniformized
    #[arg(long, default_value = "event", value_parser = parse_engine)]
    engine: lqfs::sim::Engine,

    /// RNG seed; drawn and printed when omitted.
    #[arg(long)]
    seed: Option<u64>,

    /// Write the CSV here (metadata goes to `<path>.meta.json` and is
    /// echoed on stdout) instead of printing the CSV to stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

pub fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let spec = args.source.load()?;
    let seed = resolve_seed(args.seed);
    let burn = match args.burn {
        Some(b) => b,
        None => default_burn_in(&build_drift(&spec)?),
    };
    if args.t <= burn {
        return Err(usage_error(format!(
            "t = {} must exceed the warm-up {burn}",
            args.t
        )));
    }
    let series = run_replication(&spec, args.r, args.t, burn, args.sample_dt, seed, args.engine)?;
    let mut csv = Vec::new();
    write_series_csv(&series, &spec, &mut csv)?;
    let meta = serde_json::to_string_pretty(&series_metadata_json(&series)).unwrap();

    match &args.output {
        None => print!("{}", String::from_utf8(csv).expect("CSV is UTF-8")),
        Some(path) => {
            std::fs::write(path, &csv)?;
            let mut meta_path = path.clone();
            meta_path.as_mut_os_string().push(".meta.json");
            std::fs::write(&meta_path, format!("{meta}\n"))?;
            println!("{meta}");
        }
    }
    debug_assert_eq!(series.spec_hash, spec_hash(&spec));
    Ok(())
}
