//! Dynamic user equilibrium by projected fixed-point iteration.
//!
//! A profile `h*` is an equilibrium when, for every O-D pair, every used
//! (path, bin) has effective delay equal to the pair's minimum `v_w`. The
//! solver iterates `h ← P_Λ(h - α Ψ(h))` and measures progress with the gap
//! `Σ_w Σ_{p ∈ P_w} ∫ (Ψ_p - v_w) h_p dt`.

use std::cmp::Ordering;

use crate::delay::{effective_delays, ArrivalPenalty, DelayField, DelayModel, PathFlowProfile};
use crate::error::{invalid, Error, Result};
use crate::function_space::{Interpolation, SampledFunction, TimeGrid};
use crate::network::NetworkSpec;
use crate::scalar::{from_usize, lit, Scalar};
use crate::state_operator::{picard_solve, terminal_residual, AffineTarget, PicardOptions};
use crate::systems::FlowAccumulator;

/// Discretized feasible set: non-negative rates meeting each O-D demand.
#[derive(Debug, Clone)]
pub struct FeasibleSet<T> {
    grid: TimeGrid<T>,
    demands: Vec<T>,
    od_paths: Vec<Vec<usize>>,
    n_paths: usize,
}

impl<T: Scalar> FeasibleSet<T> {
    pub fn new(grid: TimeGrid<T>, demands: Vec<T>, od_paths: Vec<Vec<usize>>) -> Result<Self> {
        if demands.len() != od_paths.len() {
            return Err(Error::DimensionMismatch {
                expected: od_paths.len(),
                found: demands.len(),
            });
        }
        if demands.iter().any(|&q| !(q >= T::zero()) || !q.is_finite()) {
            return Err(invalid("Q", "demands must be finite and non-negative"));
        }
        if od_paths.iter().any(|ps| ps.is_empty()) {
            return Err(invalid(
                "od_paths",
                "every O-D pair needs at least one path",
            ));
        }
        let n_paths = od_paths.iter().flatten().map(|&p| p + 1).max().unwrap_or(0);
        Ok(Self {
            grid,
            demands,
            od_paths,
            n_paths,
        })
    }

    pub fn from_spec(spec: &NetworkSpec, grid: TimeGrid<T>) -> Result<Self> {
        spec.ensure_valid()?;
        let set = Self::new(
            grid,
            spec.od_pairs.iter().map(|w| lit(w.demand)).collect(),
            spec.paths_by_od(),
        )?;
        Ok(Self {
            n_paths: spec.paths.len(),
            ..set
        })
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn demands(&self) -> &[T] {
        &self.demands
    }

    pub fn od_paths(&self) -> &[Vec<usize>] {
        &self.od_paths
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn od_of_path(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_paths];
        for (w, ps) in self.od_paths.iter().enumerate() {
            for &p in ps {
                out[p] = w;
            }
        }
        out
    }

    /// `Δt·Σ_{p ∈ P_w} Σ_k h_p[k] - Q_w` per O-D pair.
    pub fn demand_residuals(&self, h: &PathFlowProfile<T>) -> Vec<T> {
        let dt = self.grid.dt();
        self.od_paths
            .iter()
            .zip(&self.demands)
            .map(|(ps, &q)| {
                let total: T = ps
                    .iter()
                    .map(|&p| (0..self.grid.n_bins()).map(|k| h.get(p, k)).sum::<T>())
                    .sum();
                dt * total - q
            })
            .collect()
    }

    pub fn contains(&self, h: &PathFlowProfile<T>, tol: T) -> bool {
        h.n_paths() == self.n_paths
            && h.grid() == &self.grid
            && h.as_function().values().iter().all(|&v| v >= T::zero())
            && self.demand_residuals(h).iter().all(|r| r.abs() <= tol)
    }

    /// Every O-D demand spread evenly over its paths and bins.
    pub fn uniform(&self) -> PathFlowProfile<T> {
        let mut f =
            SampledFunction::zeros(self.grid, self.n_paths, Interpolation::PiecewiseConstant);
        for (ps, &q) in self.od_paths.iter().zip(&self.demands) {
            let rate = q / (from_usize::<T>(ps.len()) * self.grid.span());
            for k in 0..self.grid.n_bins() {
                for &p in ps {
                    f.sample_mut(k)[p] = rate;
                }
            }
        }
        PathFlowProfile::new(f).expect("uniform profile is non-negative")
    }
}

/// Euclidean projection of `values` onto `{g ≥ 0, Σ g = total}`.
///
/// Ties in the sort keep input order, so results do not depend on the sort
/// implementation.
fn project_simplex<T: Scalar>(values: &[T], total: T) -> Vec<T> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].partial_cmp(&values[i]).unwrap_or(Ordering::Equal));
    let mut running = T::zero();
    let mut theta = values[order[0]] - total;
    for (rank, &i) in order.iter().enumerate() {
        running += values[i];
        let candidate = (running - total) / from_usize::<T>(rank + 1);
        if values[i] - candidate > T::zero() {
            theta = candidate;
        } else {
            break;
        }
    }
    values.iter().map(|&v| (v - theta).max(T::zero())).collect()
}

/// `argmin_{g ∈ Λ} ‖g - h‖_{L²}`, one scaled simplex per O-D pair.
///
/// `h` may hold negative entries here, so it is taken as a raw sample array.
pub fn project<T: Scalar>(
    h: &SampledFunction<T>,
    set: &FeasibleSet<T>,
) -> Result<PathFlowProfile<T>> {
    if h.grid() != set.grid() || h.dim() != set.n_paths() {
        return Err(Error::GridMismatch(
            "profile does not match the feasible set".into(),
        ));
    }
    let n = set.grid.n_bins();
    let mut out = SampledFunction::zeros(set.grid, set.n_paths, Interpolation::PiecewiseConstant);
    for (ps, &q) in set.od_paths.iter().zip(&set.demands) {
        // (path, bin) order: path-major in the O-D's path list
        let flat: Vec<T> = ps
            .iter()
            .flat_map(|&p| (0..n).map(move |k| h.sample(k)[p]))
            .collect();
        let g = project_simplex(&flat, q / set.grid.dt());
        for (i, &p) in ps.iter().enumerate() {
            for k in 0..n {
                out.sample_mut(k)[p] = g[i * n + k];
            }
        }
    }
    PathFlowProfile::new(out)
}

/// `v_w`: grid minimum of `Ψ` over the O-D pair's paths and bins.
pub fn od_costs<T: Scalar>(psi: &SampledFunction<T>, set: &FeasibleSet<T>) -> Vec<T> {
    set.od_paths
        .iter()
        .map(|ps| {
            (0..set.grid.n_bins())
                .flat_map(|k| ps.iter().map(move |&p| psi.sample(k)[p]))
                .fold(T::infinity(), T::min)
        })
        .collect()
}

/// `Σ_w Σ_{p ∈ P_w} Σ_k Δt (Ψ_p[k] - v_w) h_p[k]`.
pub fn vi_gap<T: Scalar>(
    h: &PathFlowProfile<T>,
    psi: &SampledFunction<T>,
    set: &FeasibleSet<T>,
) -> T {
    let v = od_costs(psi, set);
    let dt = set.grid.dt();
    let mut gap = T::zero();
    for (ps, &vw) in set.od_paths.iter().zip(&v) {
        for &p in ps {
            for k in 0..set.grid.n_bins() {
                gap += dt * (psi.sample(k)[p] - vw) * h.get(p, k);
            }
        }
    }
    gap
}

/// Cumulative departures `Y_w(t)` with `Y(t0) = 0`, from the control-only state equation.
pub fn cumulative_state<T: Scalar>(
    h: &PathFlowProfile<T>,
    spec: &NetworkSpec,
) -> Result<SampledFunction<T>> {
    let max_rate = h
        .as_function()
        .values()
        .iter()
        .copied()
        .fold(T::one(), T::max);
    let sys = FlowAccumulator::new(spec.od_of_path(), spec.od_pairs.len(), max_rate)?;
    let x0 = vec![T::zero(); spec.od_pairs.len()];
    let opts = PicardOptions::new(lit(1e-12));
    Ok(picard_solve(&sys, &x0, h.as_function(), &opts)?.trajectory)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    Fixed,
    /// Halve the step whenever the gap rises from one iterate to the next.
    HalvingOnGapIncrease,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig<T> {
    pub step: T,
    pub step_rule: StepRule,
    pub max_iter: usize,
    /// Stop once `gap ≤ gap_tol · Σ_w Q_w v_w`.
    pub gap_tol: T,
    /// Rate above which a bin counts as used; `None` means `1e-6 · Q_w / (tf - t0)`.
    pub support_threshold: Option<T>,
    pub certify_rel_tol: T,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            step: T::one(),
            step_rule: StepRule::Fixed,
            max_iter: 2000,
            gap_tol: lit(1e-6),
            support_threshold: None,
            certify_rel_tol: lit(1e-2),
        }
    }
}

impl<T: Scalar> SolverConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > T::zero()) || !self.step.is_finite() {
            return Err(invalid("step", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter", "must be at least 1"));
        }
        if !(self.gap_tol > T::zero()) {
            return Err(invalid("gap_tol", "must be positive"));
        }
        if let Some(theta) = self.support_threshold {
            if !(theta >= T::zero()) {
                return Err(invalid("support_threshold", "must be non-negative"));
            }
        }
        if !(self.certify_rel_tol >= T::zero()) {
            return Err(invalid("certify_rel_tol", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    IterationCap,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::IterationCap => "not-converged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord<T> {
    pub iteration: usize,
    pub gap: T,
    pub step: T,
    /// Largest `|Δt·Σh - Q_w|` over O-D pairs.
    pub demand_residual: T,
    /// Largest `|Y_w(tf) - Q_w|` over O-D pairs.
    pub terminal_residual: T,
}

#[derive(Debug, Clone)]
pub struct EquilibriumReport<T> {
    pub flows: PathFlowProfile<T>,
    pub delays: DelayField<T>,
    pub psi: SampledFunction<T>,
    pub od_costs: Vec<T>,
    pub gap: T,
    pub trace: Vec<IterationRecord<T>>,
    pub iterations: usize,
    pub termination: Termination,
}

impl<T: Scalar> EquilibriumReport<T> {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

struct Evaluation<T> {
    delays: DelayField<T>,
    psi: SampledFunction<T>,
    gap: T,
    scale: T,
}

fn evaluate<T: Scalar, M: DelayModel<T> + ?Sized>(
    spec: &NetworkSpec,
    penalty: &ArrivalPenalty<T>,
    set: &FeasibleSet<T>,
    model: &M,
    h: &PathFlowProfile<T>,
) -> Result<Evaluation<T>> {
    let delays = model.compute(spec, h)?;
    let psi = effective_delays(&delays, penalty, spec);
    if let Some(i) = psi.values().iter().position(|v| !v.is_finite()) {
        let p = i % psi.dim();
        return Err(Error::Model(format!(
            "non-finite effective delay on path {} at bin {}",
            spec.paths[p].id,
            i / psi.dim()
        )));
    }
    let gap = vi_gap(h, &psi, set);
    let scale: T = od_costs(&psi, set)
        .iter()
        .zip(set.demands())
        .map(|(&v, &q)| v.abs() * q)
        .sum();
    Ok(Evaluation {
        delays,
        psi,
        gap,
        scale: if scale > T::zero() { scale } else { T::one() },
    })
}

/// Projected fixed-point iteration from the uniform feasible profile.
///
/// Reaching the iteration cap is not an error: the best iterate seen is
/// returned with [`Termination::IterationCap`].
pub fn solve_due<T: Scalar, M: DelayModel<T> + ?Sized>(
    spec: &NetworkSpec,
    penalty: &ArrivalPenalty<T>,
    set: &FeasibleSet<T>,
    cfg: &SolverConfig<T>,
    model: &M,
) -> Result<EquilibriumReport<T>> {
    cfg.validate()?;
    penalty.validate()?;
    if set.n_paths() != spec.paths.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.paths.len(),
            found: set.n_paths(),
        });
    }
    let target = AffineTarget::new(set.demands().to_vec(), T::zero());
    let mut h = set.uniform();
    let mut step = cfg.step;
    let mut trace = Vec::new();
    let mut best: Option<(PathFlowProfile<T>, Evaluation<T>)> = None;
    let mut previous_gap = T::infinity();
    let mut termination = Termination::IterationCap;

    for iteration in 0..cfg.max_iter {
        let eval = evaluate(spec, penalty, set, model, &h)?;
        let demand_residual = set
            .demand_residuals(&h)
            .iter()
            .fold(T::zero(), |m, r| m.max(r.abs()));
        let y = cumulative_state(&h, spec)?;
        let terminal = terminal_residual(&target, &y)
            .iter()
            .fold(T::zero(), |m, r| m.max(r.abs()));
        if cfg.step_rule == StepRule::HalvingOnGapIncrease && eval.gap > previous_gap {
            step *= lit(0.5);
        }
        trace.push(IterationRecord {
            iteration,
            gap: eval.gap,
            step,
            demand_residual,
            terminal_residual: terminal,
        });
        log::debug!("iteration {iteration}: gap {} step {step}", eval.gap);
        previous_gap = eval.gap;
        let done = eval.gap <= cfg.gap_tol * eval.scale;
        let next = if done {
            None
        } else {
            Some(project(
                &h.as_function().add_scaled(-step, &eval.psi)?,
                set,
            )?)
        };
        if best.as_ref().is_none_or(|(_, b)| eval.gap < b.gap) {
            best = Some((h.clone(), eval));
        }
        if done {
            termination = Termination::Converged;
            break;
        }
        h = next.expect("projection computed when not done");
    }

    let (flows, eval) = best.expect("at least one iteration runs");
    if termination == Termination::IterationCap {
        log::warn!(
            "iteration cap {} reached; best gap {}",
            cfg.max_iter,
            eval.gap
        );
    }
    let od_costs = od_costs(&eval.psi, set);
    Ok(EquilibriumReport {
        flows,
        delays: eval.delays,
        psi: eval.psi,
        od_costs,
        gap: eval.gap,
        iterations: trace.len(),
        trace,
        termination,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateViolation<T> {
    pub path: usize,
    pub bin: usize,
    /// `(Ψ_p[bin] - v_w) / v_w`.
    pub excess: T,
}

/// Checks `h_p[k] > θ ⇒ Ψ_p[k] ≤ v_w (1 + rel_tol)` on every bin.
///
/// `support_threshold = None` uses `1e-6 · Q_w / (tf - t0)` per O-D pair.
pub fn certify_profile<T: Scalar>(
    h: &PathFlowProfile<T>,
    psi: &SampledFunction<T>,
    set: &FeasibleSet<T>,
    support_threshold: Option<T>,
    rel_tol: T,
) -> Vec<CertificateViolation<T>> {
    let v = od_costs(psi, set);
    let mut out = Vec::new();
    for (w, ps) in set.od_paths.iter().enumerate() {
        let theta =
            support_threshold.unwrap_or_else(|| lit::<T>(1e-6) * set.demands[w] / set.grid.span());
        let denom = if v[w].abs() > T::zero() {
            v[w].abs()
        } else {
            T::one()
        };
        for &p in ps {
            for k in 0..set.grid.n_bins() {
                let excess = (psi.sample(k)[p] - v[w]) / denom;
                if h.get(p, k) > theta && excess > rel_tol {
                    out.push(CertificateViolation {
                        path: p,
                        bin: k,
                        excess,
                    });
                }
            }
        }
    }
    out.sort_by_key(|c| (c.path, c.bin));
    out
}

/// Equilibrium certificate for a solver report.
pub fn certify<T: Scalar>(
    report: &EquilibriumReport<T>,
    set: &FeasibleSet<T>,
    support_threshold: Option<T>,
    rel_tol: T,
) -> Vec<CertificateViolation<T>> {
    certify_profile(&report.flows, &report.psi, set, support_threshold, rel_tol)
}
