//! The state operator `u ↦ x(u, ·)`, computed as the fixed point of the
//! integral map
//!
//! ```text
//! Φ(u, x)(t) = x0 + ∫_{t0}^{t} f(x(s), u(s), s) ds
//! ```
//!
//! which contracts with constant `L/α` in the weighted norm
//! `‖w‖_α = max_t |w(t)| e^{-α t}`. With `α = 2L` the constant is `1/2`, and
//! the a-posteriori estimate `‖y - x*‖ <= ‖y - Φ(y)‖ / (1 - κ)` gives a
//! computable stopping rule.
//!
//! The integral is discretized with the trapezoid rule on the trajectory's
//! nodes, so the discrete map is itself a contraction whose fixed point is
//! the trapezoidal solution of the ODE.

use crate::error::{invalid, Error, Result};
use crate::function_space::{sup_norm, weighted_norm, Interpolation, SampledFunction, TimeGrid};
use crate::linalg;
use crate::scalar::{euclidean, lit, Scalar};
use crate::systems::OdeSystem;

/// Stopping parameters for [`picard_solve`].
#[derive(Debug, Clone, Copy)]
pub struct PicardOptions<T> {
    /// Target a-posteriori bound on the distance to the fixed point.
    pub tol: T,
    pub max_iter: usize,
    /// Also solve on the grid with half the bins and report a Richardson
    /// estimate of the quadrature error.
    pub estimate_quadrature_error: bool,
}

impl<T: Scalar> PicardOptions<T> {
    pub fn new(tol: T) -> Self {
        Self {
            tol,
            max_iter: 500,
            estimate_quadrature_error: false,
        }
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_quadrature_estimate(mut self) -> Self {
        self.estimate_quadrature_error = true;
        self
    }
}

/// Outcome of a converged Picard solve.
#[derive(Debug, Clone)]
pub struct PicardReport<T> {
    pub trajectory: SampledFunction<T>,
    pub iterations: usize,
    pub alpha: T,
    pub kappa: T,
    /// `‖x_{k+1} - x_k‖_α` for every iteration.
    pub deltas: Vec<T>,
    /// Bound on the weighted distance from the returned trajectory to the
    /// fixed point of the discrete map.
    pub bound: T,
    /// Richardson estimate of the trapezoid error, when requested.
    pub quadrature_error: Option<T>,
    /// Largest `‖D_x f‖₂` seen along the trajectory, when the system
    /// provides a state Jacobian.
    pub measured_lipschitz: Option<T>,
}

impl<T: Scalar> PicardReport<T> {
    /// Ratios `δ_{k+1} / δ_k` of successive iteration deltas.
    pub fn contraction_ratios(&self) -> Vec<T> {
        self.deltas
            .windows(2)
            .filter(|w| w[0] > T::zero())
            .map(|w| w[1] / w[0])
            .collect()
    }

    /// Whether the measured Jacobian norm exceeded the declared `L`.
    pub fn lipschitz_exceeded(&self, declared: T) -> bool {
        self.measured_lipschitz
            .map(|m| m > declared * (T::one() + lit(1e-9)))
            .unwrap_or(false)
    }
}

/// Weight `α` and contraction constant `κ` used for a declared `L`.
///
/// `α = 2L, κ = 1/2` when `L > 0`; for `L = 0` the map ignores the state, so
/// `α = 1, κ = 0` and a single application is exact.
pub fn contraction_parameters<T: Scalar>(l: T) -> (T, T) {
    if l > T::zero() {
        (lit::<T>(2.0) * l, lit(0.5))
    } else {
        (T::one(), T::zero())
    }
}

/// `residual / (1 - κ)`: bound on the distance from a point to the fixed
/// point of a `κ`-contraction, given the point's fixed-point residual.
pub fn aposteriori_bound<T: Scalar>(kappa: T, residual: T) -> Result<T> {
    if !(kappa >= T::zero() && kappa < T::one()) {
        return Err(invalid("kappa", format!("must lie in [0, 1), got {kappa}")));
    }
    if !(residual >= T::zero()) {
        return Err(invalid(
            "residual",
            format!("must be non-negative, got {residual}"),
        ));
    }
    Ok(residual / (T::one() - kappa))
}

fn check_control<T: Scalar, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    x0: &[T],
    u: &SampledFunction<T>,
) -> Result<()> {
    if x0.len() != sys.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: sys.state_dim(),
            found: x0.len(),
        });
    }
    if u.dim() != sys.control_dim() {
        return Err(Error::DimensionMismatch {
            expected: sys.control_dim(),
            found: u.dim(),
        });
    }
    Ok(())
}

/// One application of the integral map, trapezoid rule per bin.
pub fn apply_picard_map<T: Scalar, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    x0: &[T],
    u: &SampledFunction<T>,
    x: &SampledFunction<T>,
) -> Result<SampledFunction<T>> {
    check_control(sys, x0, u)?;
    let grid = *u.grid();
    if *x.grid() != grid {
        return Err(Error::GridMismatch(
            "trajectory and control grids differ".into(),
        ));
    }
    if x.kind() != Interpolation::PiecewiseLinear {
        return Err(invalid("x", "trajectories must be piecewise-linear"));
    }
    if x.dim() != sys.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: sys.state_dim(),
            found: x.dim(),
        });
    }
    let n = sys.state_dim();
    let half_dt = grid.dt() * lit(0.5);
    let mut out = SampledFunction::zeros(grid, n, Interpolation::PiecewiseLinear);
    out.sample_mut(0).copy_from_slice(x0);
    let mut acc = x0.to_vec();
    let mut fl = vec![T::zero(); n];
    let mut fr = vec![T::zero(); n];
    for j in 0..grid.n_bins() {
        let (ul, ur) = u.bin_ends(j);
        sys.rhs(x.sample(j), ul, grid.node(j), &mut fl);
        sys.rhs(x.sample(j + 1), ur, grid.node(j + 1), &mut fr);
        for i in 0..n {
            acc[i] += half_dt * (fl[i] + fr[i]);
        }
        if acc.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "Picard map at t = {}",
                grid.node(j + 1)
            )));
        }
        out.sample_mut(j + 1).copy_from_slice(&acc);
    }
    Ok(out)
}

/// Solves `ẋ = f(x, u, t), x(t0) = x0` on `u`'s grid, starting the
/// iteration from the constant function `x0`.
pub fn picard_solve<T: Scalar, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    x0: &[T],
    u: &SampledFunction<T>,
    opts: &PicardOptions<T>,
) -> Result<PicardReport<T>> {
    check_control(sys, x0, u)?;
    let start = SampledFunction::constant(*u.grid(), Interpolation::PiecewiseLinear, x0)?;
    picard_solve_from(sys, x0, u, start, opts)
}

/// [`picard_solve`] with an explicit initial iterate.
pub fn picard_solve_from<T: Scalar, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    x0: &[T],
    u: &SampledFunction<T>,
    initial: SampledFunction<T>,
    opts: &PicardOptions<T>,
) -> Result<PicardReport<T>> {
    if !(opts.tol > T::zero()) {
        return Err(invalid(
            "tol",
            format!("must be positive, got {}", opts.tol),
        ));
    }
    let (alpha, kappa) = contraction_parameters(sys.bounds().l);
    let mut x = initial;
    let mut deltas = Vec::new();
    let mut last_bound = T::infinity();
    for iteration in 1..=opts.max_iter {
        let next = match apply_picard_map(sys, x0, u, &x) {
            Ok(next) => next,
            Err(Error::NonFinite(_)) => return Err(Error::Diverged { iteration }),
            Err(e) => return Err(e),
        };
        let delta = weighted_norm(&next.sub(&x)?, alpha)?;
        if !delta.is_finite() {
            return Err(Error::Diverged { iteration });
        }
        deltas.push(delta);
        last_bound = aposteriori_bound(kappa, delta)?;
        if kappa == T::zero() || last_bound <= opts.tol {
            let mut report = PicardReport {
                trajectory: next,
                iterations: iteration,
                alpha,
                kappa,
                deltas,
                bound: kappa * last_bound,
                quadrature_error: None,
                measured_lipschitz: None,
            };
            report.measured_lipschitz = trajectory_lipschitz(sys, &report.trajectory, u);
            if report.lipschitz_exceeded(sys.bounds().l) {
                log::warn!(
                    "measured ‖D_x f‖ = {} exceeds declared L = {}; the contraction certificate does not hold",
                    report.measured_lipschitz.unwrap_or(T::nan()),
                    sys.bounds().l
                );
            }
            if opts.estimate_quadrature_error {
                report.quadrature_error =
                    richardson_estimate(sys, x0, u, &report.trajectory, opts)?;
            }
            return Ok(report);
        }
        x = next;
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        last_bound: last_bound.to_f64().unwrap_or(f64::NAN),
    })
}

/// Samples `‖D_x f‖₂` at the trajectory's nodes. `None` without a state Jacobian.
fn trajectory_lipschitz<T: Scalar, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    x: &SampledFunction<T>,
    u: &SampledFunction<T>,
) -> Option<T> {
    let grid = *x.grid();
    let points = (0..grid.n_bins()).flat_map(|j| {
        let (ul, ur) = u.bin_ends(j);
        [
            (x.sample(j), ul, grid.node(j)),
            (x.sample(j + 1), ur, grid.node(j + 1)),
        ]
    });
    measured_lipschitz(sys, points)
}

/// Largest `‖D_x f(x, u, t)‖₂` over the given points, or `None` when the
/// system has no state Jacobian.
pub fn measured_lipschitz<'a, T: Scalar, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    points: impl IntoIterator<Item = (&'a [T], &'a [T], T)>,
) -> Option<T> {
    let n = sys.state_dim();
    let mut jac = vec![T::zero(); n * n];
    let mut worst = T::zero();
    for (x, u, t) in points {
        sys.state_jacobian(x, u, t, &mut jac).ok()?;
        worst = worst.max(linalg::spectral_norm(&jac, n, n));
    }
    Some(worst)
}

fn coarsen_control<T: Scalar>(
    u: &SampledFunction<T>,
    coarse: TimeGrid<T>,
) -> Result<SampledFunction<T>> {
    let m = u.dim();
    let mut out = SampledFunction::zeros(coarse, m, u.kind());
    for k in 0..out.len() {
        let v: Vec<T> = match u.kind() {
            Interpolation::PiecewiseConstant => (0..m)
                .map(|i| (u.sample(2 * k)[i] + u.sample(2 * k + 1)[i]) * lit(0.5))
                .collect(),
            Interpolation::PiecewiseLinear => u.sample(2 * k).to_vec(),
        };
        out.sample_mut(k).copy_from_slice(&v);
    }
    Ok(out)
}

fn richardson_estimate<T: Scalar, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    x0: &[T],
    u: &SampledFunction<T>,
    fine: &SampledFunction<T>,
    opts: &PicardOptions<T>,
) -> Result<Option<T>> {
    let Some(coarse_grid) = u.grid().coarsened() else {
        return Ok(None);
    };
    let coarse_u = coarsen_control(u, coarse_grid)?;
    let coarse_opts = PicardOptions {
        estimate_quadrature_error: false,
        ..*opts
    };
    let coarse = picard_solve(sys, x0, &coarse_u, &coarse_opts)?.trajectory;
    let worst = (0..coarse.len())
        .map(|k| {
            let d: Vec<T> = fine
                .sample(2 * k)
                .iter()
                .zip(coarse.sample(k))
                .map(|(&a, &b)| a - b)
                .collect();
            euclidean(&d)
        })
        .fold(T::zero(), T::max);
    Ok(Some(worst / lit(3.0)))
}

/// Endpoint condition `Γ(x(tf), tf) = 0`.
pub trait TerminalCondition<T: Scalar> {
    fn residual(&self, x: &[T], t: T) -> Vec<T>;

    /// Feasibility tolerance on the max-abs residual.
    fn tolerance(&self) -> T;
}

/// `Γ(x, t) = x - target`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTarget<T> {
    pub target: Vec<T>,
    pub tolerance: T,
}

impl<T: Scalar> AffineTarget<T> {
    pub fn new(target: Vec<T>, tolerance: T) -> Self {
        Self { target, tolerance }
    }
}

impl<T: Scalar> TerminalCondition<T> for AffineTarget<T> {
    fn residual(&self, x: &[T], _t: T) -> Vec<T> {
        x.iter().zip(&self.target).map(|(&a, &b)| a - b).collect()
    }

    fn tolerance(&self) -> T {
        self.tolerance
    }
}

/// `Γ(x(tf), tf)` for a computed trajectory. Feasibility is the caller's call.
pub fn terminal_residual<T: Scalar, G: TerminalCondition<T> + ?Sized>(
    gamma: &G,
    traj: &SampledFunction<T>,
) -> Vec<T> {
    gamma.residual(traj.last(), traj.grid().tf())
}

/// Whether every residual component lies within the condition's tolerance.
pub fn terminal_satisfied<T: Scalar, G: TerminalCondition<T> + ?Sized>(
    gamma: &G,
    traj: &SampledFunction<T>,
) -> bool {
    terminal_residual(gamma, traj)
        .iter()
        .all(|r| r.abs() <= gamma.tolerance())
}

/// `sup_t |x(u + εΔu, t) - x(u, t)|` for each `ε`.
pub fn continuity_probe<T: Scalar, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    x0: &[T],
    u: &SampledFunction<T>,
    direction: &SampledFunction<T>,
    epsilons: &[T],
    opts: &PicardOptions<T>,
) -> Result<Vec<(T, T)>> {
    if epsilons.iter().any(|&e| !(e > T::zero())) {
        return Err(invalid("epsilons", "must be positive"));
    }
    if epsilons.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(invalid("epsilons", "must be strictly decreasing"));
    }
    let base = picard_solve(sys, x0, u, opts)?.trajectory;
    epsilons
        .iter()
        .map(|&eps| {
            let perturbed = picard_solve(sys, x0, &u.add_scaled(eps, direction)?, opts)?.trajectory;
            Ok((eps, sup_norm(&perturbed.sub(&base)?)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{Bounds, CubicDamping, FnSystem, LinearSystem};
    use Interpolation::*;

    fn grid(tf: f64, n: usize) -> TimeGrid<f64> {
        TimeGrid::new(0.0, tf, n).unwrap()
    }

    fn opts() -> PicardOptions<f64> {
        PicardOptions::new(1e-12)
    }

    #[test]
    fn zero_rhs_keeps_initial_state() {
        let g = grid(1.0, 50);
        let u = SampledFunction::zeros(g, 1, PiecewiseConstant);
        let sys = LinearSystem::<f64>::new(1, 1, vec![0.0], vec![0.0]).unwrap();
        let r = picard_solve(&sys, &[1.0], &u, &opts()).unwrap();
        assert!(r.trajectory.values().iter().all(|&v| v == 1.0));
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn pure_integration_of_ramp() {
        let g = grid(1.0, 1000);
        let u = SampledFunction::from_scalar_fn(g, PiecewiseConstant, |t| 2.0 * t).unwrap();
        let r = picard_solve(&LinearSystem::integrator(), &[0.0], &u, &opts()).unwrap();
        for k in 0..=1000 {
            let t = g.node(k);
            assert!((r.trajectory.sample(k)[0] - t * t).abs() <= 1e-6);
        }
    }

    #[test]
    fn exponential_decay_and_contraction() {
        let g = grid(1.0, 1000);
        let u = SampledFunction::zeros(g, 1, PiecewiseConstant);
        let sys = LinearSystem::pure_decay(1.0);
        let r = picard_solve(&sys, &[1.0], &u, &opts()).unwrap();
        assert_eq!(r.alpha, 2.0);
        assert_eq!(r.kappa, 0.5);
        for k in 0..=1000 {
            assert!((r.trajectory.sample(k)[0] - (-g.node(k)).exp()).abs() <= 1e-6);
        }
        assert!(r.contraction_ratios().iter().all(|&q| q <= 0.5 + 1e-2));
        assert!(!r.lipschitz_exceeded(1.0));
    }

    #[test]
    fn picard_map_examples() {
        let g = grid(1.0, 10);
        let u = SampledFunction::zeros(g, 1, PiecewiseConstant);
        let anything =
            SampledFunction::from_scalar_fn(g, PiecewiseLinear, |t| t.sin() + 3.0).unwrap();
        let zero = LinearSystem::<f64>::new(1, 1, vec![0.0], vec![0.0]).unwrap();
        let out = apply_picard_map(&zero, &[2.0], &u, &anything).unwrap();
        assert!(out.values().iter().all(|&v| v == 2.0));

        let one = SampledFunction::constant(g, PiecewiseLinear, &[1.0]).unwrap();
        let out = apply_picard_map(&LinearSystem::pure_decay(1.0), &[1.0], &u, &one).unwrap();
        for k in 0..=10 {
            assert!((out.sample(k)[0] - (1.0 - g.node(k))).abs() < 1e-14);
        }
    }

    #[test]
    fn fixed_point_is_reproduced_by_the_map() {
        let g = grid(1.0, 200);
        let u = SampledFunction::from_scalar_fn(g, PiecewiseConstant, |t| t.cos()).unwrap();
        let sys = LinearSystem::decay(0.7);
        let r = picard_solve(&sys, &[0.3], &u, &PicardOptions::new(1e-14)).unwrap();
        let again = apply_picard_map(&sys, &[0.3], &u, &r.trajectory).unwrap();
        assert!(sup_norm(&again.sub(&r.trajectory).unwrap()) < 1e-13);
        assert!(weighted_norm(&again.sub(&r.trajectory).unwrap(), r.alpha).unwrap() <= 1e-14);
    }

    #[test]
    fn aposteriori_bound_examples() {
        assert!((aposteriori_bound(0.5, 0.1).unwrap() - 0.2f64).abs() < 1e-15);
        assert_eq!(aposteriori_bound(0.0, 0.37).unwrap(), 0.37);
        assert!((aposteriori_bound(0.9, 0.01).unwrap() - 0.1f64).abs() < 1e-15);
        assert!(aposteriori_bound(1.0, 0.1f64).is_err());
        assert!(aposteriori_bound(0.5, -0.1f64).is_err());
    }

    #[test]
    fn terminal_residual_examples() {
        let g = grid(1.0, 10);
        let at = |v: f64| SampledFunction::constant(g, PiecewiseLinear, &[v]).unwrap();
        let gamma = AffineTarget::new(vec![10.0], 1e-9);
        assert_eq!(terminal_residual(&gamma, &at(10.0)), vec![0.0]);
        assert_eq!(terminal_residual(&gamma, &at(9.5)), vec![-0.5]);
        assert!(terminal_satisfied(&gamma, &at(10.0)));
        assert!(!terminal_satisfied(&gamma, &at(9.5)));
    }

    #[test]
    fn continuity_probe_examples() {
        let g = grid(2.0, 100);
        let u = SampledFunction::from_scalar_fn(g, PiecewiseConstant, |t| t).unwrap();
        let zero = SampledFunction::zeros(g, 1, PiecewiseConstant);
        let one = SampledFunction::constant(g, PiecewiseConstant, &[1.0]).unwrap();
        let eps = [1e-1, 1e-2, 1e-3];
        let probe = continuity_probe(
            &LinearSystem::integrator(),
            &[0.0],
            &u,
            &zero,
            &eps,
            &opts(),
        )
        .unwrap();
        assert!(probe.iter().all(|&(_, d)| d == 0.0));
        let probe =
            continuity_probe(&LinearSystem::integrator(), &[0.0], &u, &one, &eps, &opts()).unwrap();
        for (e, d) in probe {
            assert!((d - 2.0 * e).abs() < 1e-12, "{d} vs {}", 2.0 * e);
        }
        let probe =
            continuity_probe(&LinearSystem::decay(1.0), &[1.0], &u, &one, &eps, &opts()).unwrap();
        let slopes: Vec<f64> = probe.iter().map(|&(e, d)| d / e).collect();
        assert!(slopes.iter().all(|s| (s / slopes[0] - 1.0).abs() < 1e-2));
        assert!(continuity_probe(
            &LinearSystem::integrator(),
            &[0.0],
            &u,
            &one,
            &[1e-3, 1e-2],
            &opts()
        )
        .is_err());
    }

    #[test]
    fn different_initial_iterates_reach_the_same_solution() {
        let g = grid(1.0, 200);
        let u = SampledFunction::constant(g, PiecewiseConstant, &[0.3]).unwrap();
        let sys = CubicDamping::new(1.0, 1.0).unwrap();
        let tol = 1e-10;
        let o = PicardOptions::new(tol);
        let a = picard_solve(&sys, &[0.5], &u, &o).unwrap();
        let wild =
            SampledFunction::from_scalar_fn(g, PiecewiseLinear, |t| (7.0 * t).sin()).unwrap();
        let b = picard_solve_from(&sys, &[0.5], &u, wild, &o).unwrap();
        assert!(sup_norm(&a.trajectory.sub(&b.trajectory).unwrap()) <= 2.0 * tol);
    }

    #[test]
    fn divergence_and_iteration_cap_are_reported() {
        let g = grid(1.0, 10);
        let u = SampledFunction::zeros(g, 1, PiecewiseConstant);
        let blowup = FnSystem::new(1, 1, Bounds::new(1.0, 1.0).unwrap(), |x, _, _, out| {
            out[0] = (x[0] * 1e3_f64).exp()
        });
        assert!(matches!(
            picard_solve(&blowup, &[1.0], &u, &opts()),
            Err(Error::Diverged { .. })
        ));
        let capped = PicardOptions::new(1e-15).with_max_iter(2);
        assert!(matches!(
            picard_solve(&LinearSystem::pure_decay(1.0), &[1.0], &u, &capped),
            Err(Error::NoConvergence { iterations: 2, .. })
        ));
    }

    #[test]
    fn understated_lipschitz_is_detected() {
        let g = grid(1.0, 20);
        let u = SampledFunction::zeros(g, 1, PiecewiseConstant);
        let liar = FnSystem::new(1, 1, Bounds::new(10.0, 0.1).unwrap(), |x, _, _, out| {
            out[0] = -x[0]
        })
        .with_jacobians(|_, _, _, j| j[0] = -1.0, |_, _, _, j| j[0] = 0.0);
        let r = picard_solve(&liar, &[1.0], &u, &opts()).unwrap();
        assert!(r.lipschitz_exceeded(0.1));
    }

    #[test]
    fn quadrature_estimate_tracks_true_error() {
        let g = grid(1.0, 100);
        let u = SampledFunction::zeros(g, 1, PiecewiseConstant);
        let r = picard_solve(
            &LinearSystem::pure_decay(1.0),
            &[1.0],
            &u,
            &opts().with_quadrature_estimate(),
        )
        .unwrap();
        let true_err = (0..=100)
            .map(|k| (r.trajectory.sample(k)[0] - (-g.node(k)).exp()).abs())
            .fold(0.0, f64::max);
        let est = r.quadrature_error.unwrap();
        assert!(
            est > 0.5 * true_err && est < 2.0 * true_err,
            "{est} vs {true_err}"
        );
    }
}
