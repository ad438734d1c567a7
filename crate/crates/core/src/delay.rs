//! Path delays `D_p(t, h)` and effective delays `Ψ_p = D_p + F(t + D_p - T_A)`.
//!
//! Two delay models are provided:
//!
//! * [`WholeLinkModel`]: each link carries a volume `x_l(t)` and a vehicle
//!   entering at `t` leaves at `τ_l(t) = t + a_l + b_l x_l(t)`. Volumes follow
//!   `ẋ_l = inflow_l - outflow_l`, and outflow is tied to inflow by FIFO,
//!   `X_l(τ_l(t)) = E_l(t)` on the cumulative entry/exit counts. Path delay is
//!   the nested traversal `τ_{l_m}(…τ_{l_1}(t)…) - t`.
//! * [`InstantaneousModel`]: `D_p(t) = Σ_{l ∈ p} (a_l + b_l x_l(t))` with
//!   `x_l(t)` the total departure rate of paths through `l` at time `t`.
//!
//! Delays are reported per departure bin, evaluated at the bin midpoint.

use crate::error::{invalid, Error, Result};
use crate::function_space::{Interpolation, SampledFunction, TimeGrid};
use crate::network::{NetworkSpec, OdPair};
use crate::scalar::{from_usize, lit, Scalar};

/// Departure rates `h_p(t) >= 0`, one piecewise-constant component per path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathFlowProfile<T> {
    flows: SampledFunction<T>,
}

impl<T: Scalar> PathFlowProfile<T> {
    pub fn new(flows: SampledFunction<T>) -> Result<Self> {
        if flows.kind() != Interpolation::PiecewiseConstant {
            return Err(invalid("h", "departure rates must be piecewise-constant"));
        }
        if flows.values().iter().any(|&v| v < T::zero()) {
            return Err(invalid("h", "departure rates must be non-negative"));
        }
        Ok(Self { flows })
    }

    pub fn zeros(grid: TimeGrid<T>, n_paths: usize) -> Self {
        Self {
            flows: SampledFunction::zeros(grid, n_paths, Interpolation::PiecewiseConstant),
        }
    }

    /// `h_p[bin]` from a closure.
    pub fn from_fn(
        grid: TimeGrid<T>,
        n_paths: usize,
        f: impl Fn(usize, usize) -> T,
    ) -> Result<Self> {
        let mut flows = SampledFunction::zeros(grid, n_paths, Interpolation::PiecewiseConstant);
        for k in 0..grid.n_bins() {
            for (p, v) in flows.sample_mut(k).iter_mut().enumerate() {
                *v = f(p, k);
            }
        }
        Self::new(SampledFunction::new(
            grid,
            n_paths,
            Interpolation::PiecewiseConstant,
            flows.values().to_vec(),
        )?)
    }

    /// Every O-D demand spread evenly over its paths and the horizon.
    pub fn uniform(spec: &NetworkSpec, grid: TimeGrid<T>) -> Result<Self> {
        let by_od = spec.paths_by_od();
        Self::from_fn(grid, spec.paths.len(), |p, _| {
            let w = spec.paths[p].od;
            lit::<T>(spec.od_pairs[w].demand) / (from_usize::<T>(by_od[w].len()) * grid.span())
        })
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        self.flows.grid()
    }

    pub fn n_paths(&self) -> usize {
        self.flows.dim()
    }

    pub fn get(&self, p: usize, bin: usize) -> T {
        self.flows.sample(bin)[p]
    }

    pub fn as_function(&self) -> &SampledFunction<T> {
        &self.flows
    }

    pub fn into_function(self) -> SampledFunction<T> {
        self.flows
    }

    /// `∫ h_p dt` for path `p`.
    pub fn path_total(&self, p: usize) -> T {
        let dt = self.grid().dt();
        (0..self.grid().n_bins()).map(|k| self.get(p, k)).sum::<T>() * dt
    }
}

/// Schedule penalty `F(w)` for arriving `w` time units after the target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArrivalPenalty<T> {
    /// `early·(-w)` for `w < 0`, `late·w` for `w > 0`.
    PiecewiseLinear { early: T, late: T },
    /// `curvature·w²`.
    Quadratic { curvature: T },
}

impl<T: Scalar> ArrivalPenalty<T> {
    pub fn none() -> Self {
        ArrivalPenalty::PiecewiseLinear {
            early: T::zero(),
            late: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ArrivalPenalty::PiecewiseLinear { early, late } => {
                early >= T::zero() && late >= T::zero()
            }
            ArrivalPenalty::Quadratic { curvature } => curvature >= T::zero(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("penalty", "weights must be non-negative"))
        }
    }

    pub fn eval(&self, w: T) -> T {
        match *self {
            ArrivalPenalty::PiecewiseLinear { early, late } => {
                if w < T::zero() {
                    -early * w
                } else {
                    late * w
                }
            }
            ArrivalPenalty::Quadratic { curvature } => curvature * w * w,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayModelKind {
    WholeLink,
    Instantaneous,
}

/// Output of a delay model for one flow profile.
#[derive(Debug, Clone)]
pub struct DelayField<T> {
    pub kind: DelayModelKind,
    /// `D_p` at each departure bin's midpoint (piecewise-constant, one
    /// component per path).
    pub bin_delays: SampledFunction<T>,
    /// Link volumes: node samples for the whole-link model, per-bin loads for
    /// the instantaneous model.
    pub link_volumes: SampledFunction<T>,
    /// Link exit-time maps `τ_l` at the nodes (whole-link model only).
    pub exit_times: Option<SampledFunction<T>>,
    /// Cumulative vehicles that entered / left each link by `tf`.
    pub link_entered: Vec<T>,
    pub link_exited: Vec<T>,
    /// `extrapolated[p][bin]`: the traversal ran past `tf` and used frozen volumes.
    pub extrapolated: Vec<Vec<bool>>,
    path_links: Vec<Vec<usize>>,
    free_flow: Vec<T>,
    slope: Vec<T>,
}

impl<T: Scalar> DelayField<T> {
    pub fn grid(&self) -> &TimeGrid<T> {
        self.bin_delays.grid()
    }

    pub fn delay(&self, p: usize, bin: usize) -> T {
        self.bin_delays.sample(bin)[p]
    }

    pub fn any_extrapolated(&self) -> bool {
        self.extrapolated.iter().flatten().any(|&b| b)
    }

    /// `D_p(t)` at an arbitrary departure time in the horizon.
    pub fn delay_at(&self, p: usize, t: T) -> T {
        match self.kind {
            DelayModelKind::WholeLink => {
                traverse(
                    &self.path_links[p],
                    t,
                    &self.free_flow,
                    &self.slope,
                    &self.link_volumes,
                )
                .0
            }
            DelayModelKind::Instantaneous => self.delay(p, self.grid().bin_of(t)),
        }
    }
}

/// Maps departure profiles to path delays.
pub trait DelayModel<T: Scalar> {
    fn compute(&self, spec: &NetworkSpec, h: &PathFlowProfile<T>) -> Result<DelayField<T>>;
}

impl<T: Scalar> DelayModel<T> for DelayModelKind {
    fn compute(&self, spec: &NetworkSpec, h: &PathFlowProfile<T>) -> Result<DelayField<T>> {
        match self {
            DelayModelKind::WholeLink => WholeLinkModel::default().compute(spec, h),
            DelayModelKind::Instantaneous => InstantaneousModel.compute(spec, h),
        }
    }
}

struct Prepared<T> {
    grid: TimeGrid<T>,
    path_links: Vec<Vec<usize>>,
    free_flow: Vec<T>,
    slope: Vec<T>,
}

fn prepare<T: Scalar>(spec: &NetworkSpec, h: &PathFlowProfile<T>) -> Result<Prepared<T>> {
    spec.ensure_valid()?;
    if h.n_paths() != spec.paths.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.paths.len(),
            found: h.n_paths(),
        });
    }
    Ok(Prepared {
        grid: *h.grid(),
        path_links: spec.path_link_indices()?,
        free_flow: spec.links.iter().map(|l| lit(l.a)).collect(),
        slope: spec.links.iter().map(|l| lit(l.b)).collect(),
    })
}

/// Linear interpolation of node samples `values[k]` of a single series at `t`,
/// frozen at the last node beyond `tf`.
fn interp_nodes<T: Scalar>(grid: &TimeGrid<T>, values: impl Fn(usize) -> T, t: T) -> T {
    if t <= grid.t0() {
        return values(0);
    }
    if t >= grid.tf() {
        return values(grid.n_bins());
    }
    let k = grid.bin_of(t);
    let w = ((t - grid.node(k)) / grid.dt()).min(T::one());
    values(k) + (values(k + 1) - values(k)) * w
}

/// Walks a path from departure time `t`, summing link traversal times
/// `a + b·x_l(entry)`. Returns the delay and whether any entry fell after `tf`.
fn traverse<T: Scalar>(
    links: &[usize],
    t: T,
    free_flow: &[T],
    slope: &[T],
    volumes: &SampledFunction<T>,
) -> (T, bool) {
    let grid = volumes.grid();
    let mut s = t;
    let mut delay = T::zero();
    let mut frozen = false;
    for &l in links {
        frozen |= s > grid.tf();
        let x = interp_nodes(grid, |k| volumes.sample(k)[l], s);
        let tt = free_flow[l] + slope[l] * x;
        delay += tt;
        s += tt;
    }
    (delay, frozen)
}

/// Whole-link delay model with FIFO flow propagation.
#[derive(Debug, Clone, Copy)]
pub struct WholeLinkModel {
    /// Cap on the sweeps that settle each time step when a link's free-flow
    /// time is shorter than the bin width.
    pub max_sweeps: usize,
}

impl Default for WholeLinkModel {
    fn default() -> Self {
        Self { max_sweeps: 50 }
    }
}

struct LinkState<'a, T> {
    grid: TimeGrid<T>,
    path_links: &'a [Vec<usize>],
    /// `cum[p][k]`: vehicles departed on path `p` by node `k`.
    cum: Vec<Vec<T>>,
    /// `tau[l][k]`: exit time of a vehicle entering link `l` at node `k`.
    tau: Vec<Vec<T>>,
    /// `(path, position)` pairs traversing each link.
    uses: Vec<Vec<(usize, usize)>>,
}

impl<T: Scalar> LinkState<'_, T> {
    /// Entry time `e <= t_k` with `τ_l(e) = r`, or `None` if `r` precedes the
    /// first possible exit.
    fn entry_time(&self, l: usize, r: T, k: usize) -> Option<T> {
        let tau = &self.tau[l];
        if r < tau[0] {
            return None;
        }
        if r >= tau[k] {
            return Some(self.grid.node(k));
        }
        // largest j < k with tau[j] <= r
        let (mut lo, mut hi) = (0usize, k);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if tau[mid] <= r {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let span = tau[lo + 1] - tau[lo];
        let w = if span > T::zero() {
            (r - tau[lo]) / span
        } else {
            T::zero()
        };
        Some(self.grid.node(lo) + self.grid.dt() * w.min(T::one()))
    }

    /// Cumulative departures on `p` by time `d` (exact for piecewise-constant rates).
    fn departed(&self, p: usize, d: T) -> T {
        interp_nodes(&self.grid, |k| self.cum[p][k], d)
    }

    /// Vehicles that have entered link `l` by time `s <= t_k`.
    fn entered(&self, l: usize, s: T, k: usize) -> T {
        self.uses[l]
            .iter()
            .map(|&(p, pos)| {
                let mut r = Some(s);
                for &up in self.path_links[p][..pos].iter().rev() {
                    r = r.and_then(|r| self.entry_time(up, r, k));
                }
                r.map_or(T::zero(), |d| self.departed(p, d))
            })
            .sum()
    }
}

impl<T: Scalar> DelayModel<T> for WholeLinkModel {
    fn compute(&self, spec: &NetworkSpec, h: &PathFlowProfile<T>) -> Result<DelayField<T>> {
        let prep = prepare(spec, h)?;
        let grid = prep.grid;
        let (n, n_links) = (grid.n_bins(), spec.links.len());
        let dt = grid.dt();

        let cum = (0..h.n_paths())
            .map(|p| {
                let mut acc = T::zero();
                std::iter::once(T::zero())
                    .chain((0..n).map(|k| {
                        acc += h.get(p, k) * dt;
                        acc
                    }))
                    .collect()
            })
            .collect();
        let mut uses = vec![Vec::new(); n_links];
        for (p, links) in prep.path_links.iter().enumerate() {
            for (pos, &l) in links.iter().enumerate() {
                uses[l].push((p, pos));
            }
        }
        let mut state = LinkState {
            grid,
            path_links: &prep.path_links,
            cum,
            tau: (0..n_links)
                .map(|l| vec![grid.t0() + prep.free_flow[l]; n + 1])
                .collect(),
            uses,
        };
        let mut volume = vec![vec![T::zero(); n + 1]; n_links];
        let tiny = T::epsilon() * lit(8.0);

        for k in 1..=n {
            let tk = grid.node(k);
            for l in 0..n_links {
                state.tau[l][k] = tk + prep.free_flow[l] + prep.slope[l] * volume[l][k - 1];
            }
            for _ in 0..self.max_sweeps.max(1) {
                let mut settled = true;
                for l in 0..n_links {
                    let entered = state.entered(l, tk, k);
                    let exited = state
                        .entry_time(l, tk, k)
                        .map_or(T::zero(), |e| state.entered(l, e, k));
                    let x = (entered - exited).max(T::zero());
                    let tau = tk + prep.free_flow[l] + prep.slope[l] * x;
                    if (tau - state.tau[l][k]).abs() > tiny * (T::one() + tau.abs()) {
                        settled = false;
                    }
                    volume[l][k] = x;
                    state.tau[l][k] = tau;
                }
                if settled {
                    break;
                }
            }
            for l in 0..n_links {
                if !(state.tau[l][k] > state.tau[l][k - 1]) {
                    return Err(Error::FifoViolation {
                        link: spec.links[l].id.clone(),
                        time: tk.to_f64().unwrap_or(f64::NAN),
                    });
                }
            }
        }

        let node_series = |series: &Vec<Vec<T>>| {
            let mut f = SampledFunction::zeros(grid, n_links, Interpolation::PiecewiseLinear);
            for k in 0..=n {
                for (l, v) in f.sample_mut(k).iter_mut().enumerate() {
                    *v = series[l][k];
                }
            }
            f
        };
        let link_volumes = node_series(&volume);
        let exit_times = node_series(&state.tau);
        let tf = grid.tf();
        let link_entered: Vec<T> = (0..n_links).map(|l| state.entered(l, tf, n)).collect();
        let link_exited: Vec<T> = (0..n_links)
            .map(|l| {
                state
                    .entry_time(l, tf, n)
                    .map_or(T::zero(), |e| state.entered(l, e, n))
            })
            .collect();

        let n_paths = h.n_paths();
        let mut bin_delays =
            SampledFunction::zeros(grid, n_paths, Interpolation::PiecewiseConstant);
        let mut extrapolated = vec![vec![false; n]; n_paths];
        for k in 0..n {
            let t = grid.midpoint(k);
            for p in 0..n_paths {
                let (d, frozen) = traverse(
                    &prep.path_links[p],
                    t,
                    &prep.free_flow,
                    &prep.slope,
                    &link_volumes,
                );
                if !d.is_finite() {
                    return Err(Error::Model(format!(
                        "non-finite delay on path {}",
                        spec.paths[p].id
                    )));
                }
                bin_delays.sample_mut(k)[p] = d;
                extrapolated[p][k] = frozen || t + d > tf;
            }
        }
        Ok(DelayField {
            kind: DelayModelKind::WholeLink,
            bin_delays,
            link_volumes,
            exit_times: Some(exit_times),
            link_entered,
            link_exited,
            extrapolated,
            path_links: prep.path_links,
            free_flow: prep.free_flow,
            slope: prep.slope,
        })
    }
}

/// Instantaneous surrogate: link cost responds to the current departure rate.
#[derive(Debug, Clone, Copy, Default)]
pub struct InstantaneousModel;

impl<T: Scalar> DelayModel<T> for InstantaneousModel {
    fn compute(&self, spec: &NetworkSpec, h: &PathFlowProfile<T>) -> Result<DelayField<T>> {
        let prep = prepare(spec, h)?;
        let grid = prep.grid;
        let (n, n_links, n_paths) = (grid.n_bins(), spec.links.len(), h.n_paths());
        let mut loads = SampledFunction::zeros(grid, n_links, Interpolation::PiecewiseConstant);
        for k in 0..n {
            for (p, links) in prep.path_links.iter().enumerate() {
                let v = h.get(p, k);
                for &l in links {
                    loads.sample_mut(k)[l] += v;
                }
            }
        }
        let mut bin_delays =
            SampledFunction::zeros(grid, n_paths, Interpolation::PiecewiseConstant);
        let mut extrapolated = vec![vec![false; n]; n_paths];
        for k in 0..n {
            for (p, links) in prep.path_links.iter().enumerate() {
                let d: T = links
                    .iter()
                    .map(|&l| prep.free_flow[l] + prep.slope[l] * loads.sample(k)[l])
                    .sum();
                bin_delays.sample_mut(k)[p] = d;
                extrapolated[p][k] = grid.midpoint(k) + d > grid.tf();
            }
        }
        let link_entered: Vec<T> = (0..n_links)
            .map(|l| (0..n).map(|k| loads.sample(k)[l]).sum::<T>() * grid.dt())
            .collect();
        Ok(DelayField {
            kind: DelayModelKind::Instantaneous,
            bin_delays,
            link_volumes: loads,
            exit_times: None,
            link_exited: link_entered.clone(),
            link_entered,
            extrapolated,
            path_links: prep.path_links,
            free_flow: prep.free_flow,
            slope: prep.slope,
        })
    }
}

/// `D + F(t + D - T_A)`.
pub fn effective_cost<T: Scalar>(
    delay: T,
    penalty: &ArrivalPenalty<T>,
    t: T,
    target_arrival: T,
) -> T {
    delay + penalty.eval(t + delay - target_arrival)
}

/// `Ψ_p(t, h)` for path `p` serving `od`, departing at `t`.
pub fn effective_delay<T: Scalar>(
    field: &DelayField<T>,
    penalty: &ArrivalPenalty<T>,
    od: &OdPair,
    p: usize,
    t: T,
) -> T {
    effective_cost(field.delay_at(p, t), penalty, t, lit(od.target_arrival))
}

/// `Ψ_p` for every path at every departure bin midpoint.
pub fn effective_delays<T: Scalar>(
    field: &DelayField<T>,
    penalty: &ArrivalPenalty<T>,
    spec: &NetworkSpec,
) -> SampledFunction<T> {
    let grid = *field.grid();
    let mut psi = field.bin_delays.clone();
    for k in 0..grid.n_bins() {
        let t = grid.midpoint(k);
        for (p, v) in psi.sample_mut(k).iter_mut().enumerate() {
            let target = lit(spec.od_pairs[spec.paths[p].od].target_arrival);
            *v = effective_cost(*v, penalty, t, target);
        }
    }
    psi
}
