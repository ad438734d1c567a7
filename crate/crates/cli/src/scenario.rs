//! Scenario files: horizon, penalty, delay model, solver settings and
//! diagnostic setups, as JSON.

use std::path::{Path, PathBuf};

use due_core::delay::{ArrivalPenalty, DelayModelKind};
use due_core::equilibrium::{SolverConfig, StepRule};
use due_core::function_space::TimeGrid;
use due_core::network::describe_schema_error;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizon {
    pub t0: f64,
    pub tf: f64,
    pub n_bins: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PenaltySpec {
    #[default]
    None,
    PiecewiseLinear {
        early: f64,
        late: f64,
    },
    Quadratic {
        curvature: f64,
    },
}

impl PenaltySpec {
    pub fn to_penalty(self) -> ArrivalPenalty<f64> {
        match self {
            PenaltySpec::None => ArrivalPenalty::none(),
            PenaltySpec::PiecewiseLinear { early, late } => {
                ArrivalPenalty::PiecewiseLinear { early, late }
            }
            PenaltySpec::Quadratic { curvature } => ArrivalPenalty::Quadratic { curvature },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayModelSpec {
    #[default]
    WholeLink,
    Instantaneous,
}

impl DelayModelSpec {
    pub fn kind(self) -> DelayModelKind {
        match self {
            DelayModelSpec::WholeLink => DelayModelKind::WholeLink,
            DelayModelSpec::Instantaneous => DelayModelKind::Instantaneous,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DelayModelSpec::WholeLink => "whole_link",
            DelayModelSpec::Instantaneous => "instantaneous",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRuleSpec {
    #[default]
    Fixed,
    Halving,
}

/// Solver settings; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub step: f64,
    pub step_rule: StepRuleSpec,
    pub max_iter: usize,
    /// Relative to `Σ Q_w v_w`.
    pub gap_tol: f64,
    pub support_threshold: Option<f64>,
    pub certify_rel_tol: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let d = SolverConfig::<f64>::default();
        Self {
            step: d.step,
            step_rule: StepRuleSpec::Fixed,
            max_iter: d.max_iter,
            gap_tol: d.gap_tol,
            support_threshold: d.support_threshold,
            certify_rel_tol: d.certify_rel_tol,
        }
    }
}

impl SolverSpec {
    pub fn to_config(&self) -> SolverConfig<f64> {
        SolverConfig {
            step: self.step,
            step_rule: match self.step_rule {
                StepRuleSpec::Fixed => StepRule::Fixed,
                StepRuleSpec::Halving => StepRule::HalvingOnGapIncrease,
            },
            max_iter: self.max_iter,
            gap_tol: self.gap_tol,
            support_threshold: self.support_threshold,
            certify_rel_tol: self.certify_rel_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    /// `ẋ = -rate·x + gain·u`.
    Decay {
        rate: f64,
        #[serde(default = "one")]
        gain: f64,
    },
    /// `ẋ = -x³ + u` on `|x| ≤ state_radius`, `|u| ≤ control_radius`.
    Cubic {
        state_radius: f64,
        control_radius: f64,
    },
    /// `ẋ = A x + B u`, row-major `a` (n×n) and `b` (n×m).
    Linear {
        n: usize,
        m: usize,
        a: Vec<f64>,
        b: Vec<f64>,
    },
    /// Cumulative departures of the scenario's network.
    FlowAccumulator,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    Zero,
    Constant {
        value: Vec<f64>,
    },
    /// Independent uniform draws per bin and component.
    Random {
        low: f64,
        high: f64,
    },
    /// Uniform feasible departure profile of the network (flow accumulator only).
    UniformFeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSpec {
    pub system: SystemSpec,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_control")]
    pub control: SignalSpec,
    #[serde(default = "default_direction")]
    pub direction: SignalSpec,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_fd_epsilon")]
    pub fd_epsilon: f64,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_picard_max_iter")]
    pub max_iter: usize,
}

fn default_control() -> SignalSpec {
    SignalSpec::Zero
}

fn default_direction() -> SignalSpec {
    SignalSpec::Constant { value: vec![1.0] }
}

fn default_epsilons() -> Vec<f64> {
    vec![1e-1, 1e-2, 1e-3]
}

fn default_fd_epsilon() -> f64 {
    1e-4
}

fn default_picard_tol() -> f64 {
    1e-12
}

fn default_picard_max_iter() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub horizon: Horizon,
    #[serde(default)]
    pub penalty: PenaltySpec,
    #[serde(default)]
    pub delay_model: DelayModelSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    /// Relative to the scenario file.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Network for diagnostics; relative to the scenario file.
    #[serde(default)]
    pub network: Option<PathBuf>,
    #[serde(default)]
    pub diagnostics: Option<DiagnosticsSpec>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Command-line overrides for scenario fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub bins: Option<usize>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            CliError::new(format!(
                "{}: {}",
                origin.display(),
                describe_schema_error(&e)
            ))
        })
    }

    /// Reads a scenario and resolves its relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new(format!("cannot read scenario {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let Some(net) = cfg.network.as_mut() {
            if net.is_relative() {
                *net = base.join(&*net);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
        if let Some(n) = o.bins {
            self.horizon.n_bins = n;
        }
        if let Some(tol) = o.tol {
            self.solver.gap_tol = tol;
            if let Some(d) = self.diagnostics.as_mut() {
                d.picard_tol = tol;
            }
        }
        if let Some(k) = o.max_iter {
            self.solver.max_iter = k;
            if let Some(d) = self.diagnostics.as_mut() {
                d.max_iter = k;
            }
        }
    }

    pub fn grid(&self) -> Result<TimeGrid<f64>, CliError> {
        TimeGrid::new(self.horizon.t0, self.horizon.tf, self.horizon.n_bins)
            .map_err(|e| CliError::new(format!("horizon: {e}")))
    }

    /// Range checks beyond what the schema enforces.
    pub fn validate(&self) -> Result<(), CliError> {
        self.grid()?;
        self.penalty
            .to_penalty()
            .validate()
            .map_err(|e| CliError::new(format!("penalty: {e}")))?;
        self.solver
            .to_config()
            .validate()
            .map_err(|e| CliError::new(format!("solver: {e}")))?;
        if let Some(d) = &self.diagnostics {
            if !(d.picard_tol > 0.0) || d.max_iter == 0 {
                return Err(CliError::new(
                    "diagnostics: picard_tol and max_iter must be positive",
                ));
            }
            if !(d.fd_epsilon > 0.0) {
                return Err(CliError::new("diagnostics.fd_epsilon: must be positive"));
            }
        }
        Ok(())
    }
}
