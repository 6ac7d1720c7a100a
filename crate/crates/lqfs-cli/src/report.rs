//! The static reports: `validate` and `analyze`.

use std::path::PathBuf;

use lqfs::linalg::Mat;
use lqfs::linstab::{build_drift, eigen_analysis, Kind, Spectrum, StabilityVerdict};
use lqfs::model::{validate as validate_spec, Regime, SystemSpec};
use lqfs::spp::{hw_load, scaled_arrival_rates, solve_spp};
use lqfs::Error;
use serde_json::{json, Value};

use crate::{emit, Failure};

/// Structure check plus resource pooling; one line per outcome.
pub fn validate(spec: &SystemSpec<f64>) -> Result<(), Failure> {
    let report = validate_spec(spec);
    if !report.pass() {
        return Err(Failure::from(Error::InvalidSpec(report)));
    }
    let spp = solve_spp(spec)?;
    println!(
        "ok: {} classes, {} pools, {} activities, load {:.6}",
        spec.num_classes(),
        spec.num_pools(),
        spec.num_edges(),
        spp.rho
    );
    Ok(())
}

fn mat_json(m: &Mat<f64>) -> Value {
    json!(m.to_rows())
}

fn spectrum_json(s: &Spectrum<f64>) -> Value {
    json!(s
        .values
        .iter()
        .map(|z| json!([z.re, z.im]))
        .collect::<Vec<_>>())
}

fn verdict_json(v: &StabilityVerdict<f64>) -> Value {
    json!({
        "classification": v.classification.to_string(),
        "max_real_part": v.max_real_part,
        "zero_eigen_residual": v.zero_eigen_residual,
        "convergent_subspace_dim": v.convergent_subspace_dim,
    })
}

/// One JSON document with the planning solution, drift matrices, spectra,
/// and both regime verdicts.
pub fn analyze(spec: &SystemSpec<f64>, output: Option<&PathBuf>) -> Result<(), Failure> {
    let report = validate_spec(spec);
    if !report.pass() {
        return Err(Failure::from(Error::InvalidSpec(report)));
    }
    let spp = solve_spp(spec)?;
    let dm = build_drift(spec)?;
    let underload = eigen_analysis(&dm.a_u, Kind::Underload)?;
    let critical = eigen_analysis(&dm.a_c, Kind::Critical)?;

    let routing: Vec<Value> = spec
        .edges()
        .iter()
        .enumerate()
        .map(|(e, edge)| {
            json!({
                "class": spec.classes()[edge.class],
                "pool": spec.pools()[edge.pool],
                "mu": edge.mu,
                "rate": spp.lambda_ij[e],
                "psi_star": spp.psi_star[e],
            })
        })
        .collect();

    let scaling = match spec.scaling() {
        None => Value::Null,
        Some(s) => {
            let loads: Result<Vec<f64>, Error> = match s.regime {
                Regime::HalfinWhitt => s
                    .r_values
                    .iter()
                    .map(|&r| hw_load(spec, &spp, r))
                    .collect(),
                Regime::Underload => Ok(vec![spp.rho; s.r_values.len()]),
            };
            json!({
                "regime": match s.regime {
                    Regime::Underload => "underload",
                    Regime::HalfinWhitt => "halfin_whitt",
                },
                "r_values": s.r_values,
                "l": s.l,
                "loads": loads?,
                "scaled_arrival_rates": s
                    .r_values
                    .iter()
                    .map(|&r| scaled_arrival_rates(spec, r))
                    .collect::<Vec<_>>(),
            })
        }
    };

    let nu: serde_json::Map<String, Value> = spec
        .classes()
        .iter()
        .zip(&spp.nu)
        .map(|(c, &v)| (c.clone(), json!(v)))
        .collect();
    let alpha: serde_json::Map<String, Value> = spec
        .pools()
        .iter()
        .zip(&spp.alpha)
        .map(|(p, &v)| (p.clone(), json!(v)))
        .collect();

    let doc = json!({
        "spec": serde_json::from_str::<Value>(&spec.to_json()).expect("spec emits valid JSON"),
        "spp": {
            "rho": spp.rho,
            "routing": routing,
            "nu": nu,
            "alpha": alpha,
            "hw_c": spp.hw_c,
        },
        "matrices": {
            "m": mat_json(&dm.m),
            "m_prime": mat_json(&dm.m_prime),
            "g": mat_json(&dm.g),
            "a_u": mat_json(&dm.a_u),
            "a_c": mat_json(&dm.a_c),
        },
        "spectra": {
            "a_u": spectrum_json(&dm.eig_u),
            "a_c": spectrum_json(&dm.eig_c),
        },
        "verdicts": {
            "underload": verdict_json(&underload),
            "critical": verdict_json(&critical),
        },
        "scaling": scaling,
    });

    emit(output, &format!("{}\n", serde_json::to_string_pretty(&doc).unwrap()))
}
