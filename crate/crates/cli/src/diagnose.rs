use std::path::Path;

use due_core::equilibrium::FeasibleSet;
use due_core::error::Error;
use due_core::function_space::{sup_norm, Interpolation, SampledFunction, TimeGrid};
use due_core::network::NetworkSpec;
use due_core::sensitivity::{cumulative_direction, finite_difference_gateaux, solve_variational};
use due_core::state_operator::{continuity_probe, picard_solve, PicardOptions, PicardReport};
use due_core::systems::{CubicDamping, FlowAccumulator, LinearSystem, OdeSystem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::output::{num, prepare_dir, save_json, Table};
use crate::scenario::{DiagnosticsSpec, Overrides, ScenarioConfig, SignalSpec, SystemSpec};
use crate::{check_network, load_network, CliError, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Picard,
    Sensitivity,
    Continuity,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Picard => "picard",
            Mode::Sensitivity => "sensitivity",
            Mode::Continuity => "continuity",
        }
    }
}

struct Setup {
    sys: Box<dyn OdeSystem<f64>>,
    network: Option<NetworkSpec>,
    x0: Vec<f64>,
    u: SampledFunction<f64>,
    du: SampledFunction<f64>,
    opts: PicardOptions<f64>,
}

fn core_err(context: &str) -> impl Fn(Error) -> CliError + '_ {
    move |e| CliError::new(format!("{context}: {e}"))
}

fn build_system(
    spec: &SystemSpec,
    network: Option<&NetworkSpec>,
) -> Result<Box<dyn OdeSystem<f64>>, CliError> {
    let err = core_err("diagnostics.system");
    Ok(match spec {
        SystemSpec::Decay { rate, gain } => {
            Box::new(LinearSystem::new(1, 1, vec![-rate], vec![*gain]).map_err(err)?)
        }
        SystemSpec::Cubic {
            state_radius,
            control_radius,
        } => Box::new(CubicDamping::new(*state_radius, *control_radius).map_err(err)?),
        SystemSpec::Linear { n, m, a, b } => {
            Box::new(LinearSystem::new(*n, *m, a.clone(), b.clone()).map_err(err)?)
        }
        SystemSpec::FlowAccumulator => {
            let net = network.ok_or_else(|| {
                CliError::new("diagnostics.system: flow_accumulator needs a `network` entry")
            })?;
            let max_rate = net.od_pairs.iter().map(|w| w.demand).fold(1.0, f64::max);
            Box::new(
                FlowAccumulator::new(net.od_of_path(), net.od_pairs.len(), max_rate)
                    .map_err(err)?,
            )
        }
    })
}

fn build_signal(
    field: &str,
    spec: &SignalSpec,
    grid: TimeGrid<f64>,
    dim: usize,
    network: Option<&NetworkSpec>,
    rng: &mut ChaCha8Rng,
) -> Result<SampledFunction<f64>, CliError> {
    let kind = Interpolation::PiecewiseConstant;
    match spec {
        SignalSpec::Zero => Ok(SampledFunction::zeros(grid, dim, kind)),
        SignalSpec::Constant { value } => {
            let value = match value.len() {
                1 => vec![value[0]; dim],
                n if n == dim => value.clone(),
                n => {
                    return Err(CliError::new(format!(
                        "diagnostics.{field}.value: expected {dim} entries, found {n}"
                    )))
                }
            };
            SampledFunction::constant(grid, kind, &value).map_err(core_err(field))
        }
        SignalSpec::Random { low, high } => {
            if !(low < high) {
                return Err(CliError::new(format!(
                    "diagnostics.{field}: low must be below high"
                )));
            }
            let values = (0..grid.n_bins() * dim)
                .map(|_| rng.gen_range(*low..*high))
                .collect();
            SampledFunction::new(grid, dim, kind, values).map_err(core_err(field))
        }
        SignalSpec::UniformFeasible => {
            let net = network.ok_or_else(|| {
                CliError::new(format!(
                    "diagnostics.{field}: uniform_feasible needs a `network` entry"
                ))
            })?;
            let set = FeasibleSet::from_spec(net, grid).map_err(core_err(field))?;
            if set.n_paths() != dim {
                return Err(CliError::new(format!(
                    "diagnostics.{field}: uniform_feasible needs the flow_accumulator system"
                )));
            }
            Ok(set.uniform().into_function())
        }
    }
}

fn setup(cfg: &ScenarioConfig, d: &DiagnosticsSpec) -> Result<Setup, CliError> {
    let grid = cfg.grid()?;
    let network = match &cfg.network {
        Some(path) => {
            let spec = load_network(path)?;
            check_network(&spec, path, None)?;
            Some(spec)
        }
        None => None,
    };
    let sys = build_system(&d.system, network.as_ref())?;
    let n = sys.state_dim();
    let x0 = d.x0.clone().unwrap_or_else(|| vec![0.0; n]);
    if x0.len() != n {
        return Err(CliError::new(format!(
            "diagnostics.x0: expected {n} entries, found {}",
            x0.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = sys.control_dim();
    let u = build_signal("control", &d.control, grid, m, network.as_ref(), &mut rng)?;
    let du = build_signal(
        "direction",
        &d.direction,
        grid,
        m,
        network.as_ref(),
        &mut rng,
    )?;
    let opts = PicardOptions::new(d.picard_tol).with_max_iter(d.max_iter);
    Ok(Setup {
        sys,
        network,
        x0,
        u,
        du,
        opts,
    })
}

/// Runs one diagnostic and writes its table plus `diagnostics.json`.
///
/// A Picard run that hits the iteration cap ends with [`Status::NotConverged`].
pub fn run_diagnostics(
    mode: Mode,
    scenario: &Path,
    overrides: &Overrides,
) -> Result<Status, CliError> {
    let mut cfg = ScenarioConfig::load(scenario)?;
    cfg.apply(overrides);
    cfg.validate()?;
    let d = cfg.diagnostics.clone().ok_or_else(|| {
        CliError::new(format!(
            "{}: diagnostics: missing section",
            scenario.display()
        ))
    })?;
    let s = setup(&cfg, &d)?;
    let base = match picard_solve(
        s.sys.as_ref(),
        &s.x0,
        &s.u,
        &s.opts.with_quadrature_estimate(),
    ) {
        Ok(r) => r,
        Err(Error::NoConvergence {
            iterations,
            last_bound,
        }) => {
            log::error!(
                "Picard iteration stopped after {iterations} iterations with bound {last_bound:e}"
            );
            prepare_dir(&cfg.output_dir)?;
            save_json(
                &cfg.output_dir.join("diagnostics.json"),
                &json!({"mode": mode.as_str(), "converged": false, "iterations": iterations, "bound": last_bound}),
            )?;
            return Ok(Status::NotConverged);
        }
        Err(e) => return Err(CliError::new(format!("state solve failed: {e}"))),
    };
    prepare_dir(&cfg.output_dir)?;
    let details = match mode {
        Mode::Picard => picard_table(&cfg.output_dir, s.sys.as_ref(), &base)?,
        Mode::Sensitivity => sensitivity_table(&cfg.output_dir, &s, &d, &base)?,
        Mode::Continuity => continuity_table(&cfg.output_dir, &s, &d)?,
    };
    let mut summary = json!({
        "mode": mode.as_str(),
        "converged": true,
        "iterations": base.iterations,
        "seed": cfg.seed,
    });
    summary.as_object_mut().expect("object").extend(details);
    save_json(&cfg.output_dir.join("diagnostics.json"), &summary)?;
    Ok(Status::Success)
}

type Details = serde_json::Map<String, serde_json::Value>;

fn picard_table(
    dir: &Path,
    sys: &dyn OdeSystem<f64>,
    r: &PicardReport<f64>,
) -> Result<Details, CliError> {
    let mut t = Table::new(&["iteration", "delta", "ratio"]);
    for (i, d) in r.deltas.iter().enumerate() {
        let ratio = if i > 0 && r.deltas[i - 1] > 0.0 {
            num(d / r.deltas[i - 1])
        } else {
            String::new()
        };
        t.row([(i + 1).to_string(), num(*d), ratio]);
    }
    t.save(&dir.join("picard.csv"))?;
    let mut traj = Table::new(&["t", "component", "x"]);
    let grid = r.trajectory.grid();
    for k in 0..grid.n_nodes() {
        for (i, v) in r.trajectory.sample(k).iter().enumerate() {
            traj.row([num(grid.node(k)), i.to_string(), num(*v)]);
        }
    }
    traj.save(&dir.join("trajectory.csv"))?;
    let max_ratio = r.contraction_ratios().into_iter().fold(0.0, f64::max);
    let declared = sys.bounds().l;
    let mut out = Details::new();
    out.insert("alpha".into(), json!(r.alpha));
    out.insert("kappa".into(), json!(r.kappa));
    out.insert("declared_lipschitz".into(), json!(declared));
    out.insert("measured_lipschitz".into(), json!(r.measured_lipschitz));
    out.insert(
        "lipschitz_exceeded".into(),
        json!(r.lipschitz_exceeded(declared)),
    );
    out.insert("max_contraction_ratio".into(), json!(max_ratio));
    out.insert("bound".into(), json!(r.bound));
    out.insert("quadrature_error".into(), json!(r.quadrature_error));
    Ok(out)
}

fn sensitivity_table(
    dir: &Path,
    s: &Setup,
    d: &DiagnosticsSpec,
    base: &PicardReport<f64>,
) -> Result<Details, CliError> {
    let err = core_err("sensitivity");
    let var = solve_variational(s.sys.as_ref(), &base.trajectory, &s.u, &s.du).map_err(&err)?;
    let (reference, method, excursion) = match (&d.system, &s.network) {
        (SystemSpec::FlowAccumulator, Some(net)) => (
            cumulative_direction(&net.od_of_path(), net.od_pairs.len(), &s.du).map_err(&err)?,
            "closed_form",
            false,
        ),
        _ => {
            let fd = finite_difference_gateaux(
                s.sys.as_ref(),
                &s.x0,
                &s.u,
                &s.du,
                d.fd_epsilon,
                &s.opts,
            )
            .map_err(&err)?;
            let excursion = fd.box_excursion;
            (fd, "central_difference", excursion)
        }
    };
    if excursion {
        log::warn!("finite-difference controls leave the declared control box");
    }
    let grid = var.delta_x.grid();
    let mut t = Table::new(&["t", "component", "variational", "reference", "abs_error"]);
    for k in 0..grid.n_nodes() {
        for (i, (a, b)) in var
            .delta_x
            .sample(k)
            .iter()
            .zip(reference.delta_x.sample(k))
            .enumerate()
        {
            t.row([
                num(grid.node(k)),
                i.to_string(),
                num(*a),
                num(*b),
                num((a - b).abs()),
            ]);
        }
    }
    t.save(&dir.join("sensitivity.csv"))?;
    let diff = sup_norm(&var.delta_x.sub(&reference.delta_x).map_err(&err)?);
    let scale = sup_norm(&var.delta_x);
    let mut out = Details::new();
    out.insert("reference".into(), json!(method));
    out.insert("max_abs_error".into(), json!(diff));
    out.insert(
        "relative_error".into(),
        json!(if scale > 0.0 { diff / scale } else { diff }),
    );
    out.insert("box_excursion".into(), json!(excursion));
    if method == "central_difference" {
        out.insert("fd_epsilon".into(), json!(d.fd_epsilon));
    }
    Ok(out)
}

fn continuity_table(dir: &Path, s: &Setup, d: &DiagnosticsSpec) -> Result<Details, CliError> {
    let probe = continuity_probe(s.sys.as_ref(), &s.x0, &s.u, &s.du, &d.epsilons, &s.opts)
        .map_err(core_err("diagnostics.epsilons"))?;
    let mut t = Table::new(&["epsilon", "deviation", "ratio"]);
    for (eps, dev) in &probe {
        t.row([num(*eps), num(*dev), num(dev / eps)]);
    }
    t.save(&dir.join("continuity.csv"))?;
    let ratios: Vec<f64> = probe.iter().map(|(e, dv)| dv / e).collect();
    let spread = match ratios.first() {
        Some(&r0) if r0 > 0.0 => ratios
            .iter()
            .map(|r| (r / r0 - 1.0).abs())
            .fold(0.0, f64::max),
        _ => 0.0,
    };
    let mut out = Details::new();
    out.insert(
        "max_deviation".into(),
        json!(probe.iter().map(|p| p.1).fold(0.0, f64::max)),
    );
    out.insert("ratio_spread".into(), json!(spread));
    Ok(out)
}
