use std::path::Path;

use due_core::equilibrium::{certify, cumulative_state, solve_due, EquilibriumReport, FeasibleSet};
use due_core::network::NetworkSpec;
use serde_json::json;

use crate::output::{num, prepare_dir, save_json, Table};
use crate::scenario::{Overrides, ScenarioConfig};
use crate::{check_network, load_network, CliError, Status};

/// Solves for an equilibrium and writes `flows.csv`, `delays.csv`, `gap.csv`
/// and `summary.json` into the scenario's output directory.
pub fn run_solve(
    network: &Path,
    scenario: &Path,
    overrides: &Overrides,
) -> Result<Status, CliError> {
    let spec = load_network(network)?;
    let mut cfg = ScenarioConfig::load(scenario)?;
    cfg.apply(overrides);
    cfg.validate()?;
    check_network(&spec, network, Some((cfg.horizon.t0, cfg.horizon.tf)))?;
    let grid = cfg.grid()?;
    let set = FeasibleSet::from_spec(&spec, grid).map_err(|e| CliError::new(e.to_string()))?;
    let solver = cfg.solver.to_config();
    let penalty = cfg.penalty.to_penalty();
    let report = solve_due(&spec, &penalty, &set, &solver, &cfg.delay_model.kind())
        .map_err(|e| CliError::new(format!("solve failed: {e}")))?;
    log::info!(
        "{} after {} iterations, gap {}",
        report.termination.as_str(),
        report.iterations,
        report.gap
    );

    prepare_dir(&cfg.output_dir)?;
    write_flows(&cfg.output_dir, &spec, &report)?;
    write_delays(&cfg.output_dir, &spec, &report)?;
    write_gap(&cfg.output_dir, &report)?;
    write_summary(&cfg.output_dir, &spec, &set, &cfg, &report)?;
    Ok(if report.converged() {
        Status::Success
    } else {
        Status::NotConverged
    })
}

fn write_flows(dir: &Path, spec: &NetworkSpec, r: &EquilibriumReport<f64>) -> Result<(), CliError> {
    let grid = r.flows.grid();
    let mut t = Table::new(&["path", "bin", "t", "h"]);
    for (p, path) in spec.paths.iter().enumerate() {
        for k in 0..grid.n_bins() {
            t.row([
                path.id.clone(),
                k.to_string(),
                num(grid.midpoint(k)),
                num(r.flows.get(p, k)),
            ]);
        }
    }
    t.save(&dir.join("flows.csv"))
}

fn write_delays(
    dir: &Path,
    spec: &NetworkSpec,
    r: &EquilibriumReport<f64>,
) -> Result<(), CliError> {
    let grid = r.flows.grid();
    let mut t = Table::new(&["path", "bin", "t", "D_p", "Psi_p"]);
    for (p, path) in spec.paths.iter().enumerate() {
        for k in 0..grid.n_bins() {
            t.row([
                path.id.clone(),
                k.to_string(),
                num(grid.midpoint(k)),
                num(r.delays.delay(p, k)),
                num(r.psi.sample(k)[p]),
            ]);
        }
    }
    t.save(&dir.join("delays.csv"))
}

fn write_gap(dir: &Path, r: &EquilibriumReport<f64>) -> Result<(), CliError> {
    let mut t = Table::new(&["iteration", "gap", "step"]);
    for rec in &r.trace {
        t.row([rec.iteration.to_string(), num(rec.gap), num(rec.step)]);
    }
    t.save(&dir.join("gap.csv"))
}

fn write_summary(
    dir: &Path,
    spec: &NetworkSpec,
    set: &FeasibleSet<f64>,
    cfg: &ScenarioConfig,
    r: &EquilibriumReport<f64>,
) -> Result<(), CliError> {
    let y = cumulative_state(&r.flows, spec).map_err(|e| CliError::new(e.to_string()))?;
    let demand = set.demand_residuals(&r.flows);
    let od: Vec<_> = spec
        .od_pairs
        .iter()
        .enumerate()
        .map(|(w, pair)| {
            json!({
                "origin": pair.origin,
                "destination": pair.destination,
                "Q": pair.demand,
                "v": r.od_costs[w],
                "demand_residual": demand[w],
                "terminal_residual": y.last()[w] - pair.demand,
            })
        })
        .collect();
    let violations = certify(
        r,
        set,
        cfg.solver.support_threshold,
        cfg.solver.certify_rel_tol,
    );
    let extrapolated = r
        .delays
        .extrapolated
        .iter()
        .flatten()
        .filter(|&&b| b)
        .count();
    let scale: f64 = r
        .od_costs
        .iter()
        .zip(set.demands())
        .map(|(v, q)| v.abs() * q)
        .sum();
    let summary = json!({
        "termination": r.termination.as_str(),
        "converged": r.converged(),
        "iterations": r.iterations,
        "gap": r.gap,
        "gap_tolerance": cfg.solver.gap_tol * if scale > 0.0 { scale } else { 1.0 },
        "delay_model": cfg.delay_model.as_str(),
        "horizon": {"t0": cfg.horizon.t0, "tf": cfg.horizon.tf, "n_bins": cfg.horizon.n_bins},
        "od_pairs": od,
        "certificate": {
            "rel_tol": cfg.solver.certify_rel_tol,
            "violations": violations.len(),
            "max_excess": violations.iter().map(|v| v.excess).fold(0.0, f64::max),
        },
        "extrapolated_bins": extrapolated,
        "seed": cfg.seed,
    });
    save_json(&dir.join("summary.json"), &summary)
}
