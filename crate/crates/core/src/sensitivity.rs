//! Gateaux derivative of the state operator along a control direction `Δu`.
//!
//! The derivative `z = δx(u, Δu)` solves the variational system
//!
//! ```text
//! ż = A(t) z + D_u f(x(t), u(t), t) Δu(t),   z(t0) = 0,   A(t) = D_x f(x(t), u(t), t)
//! ```
//!
//! or equivalently `z(t) = ∫_{t0}^{t} M(t) M(s)⁻¹ D_u f Δu(s) ds` with `M` the
//! fundamental matrix of `v̇ = A v`, `M(t0) = I`. Both routes are discretized
//! with the same trapezoid rule the Picard solver uses, so they are the exact
//! derivative of the discrete state operator and agree with each other to
//! round-off on constant-coefficient systems.

use crate::error::{invalid, Error, Result};
use crate::function_space::{Interpolation, SampledFunction, TimeGrid};
use crate::linalg;
use crate::scalar::{lit, Scalar};
use crate::state_operator::{picard_solve, PicardOptions};
use crate::systems::OdeSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensitivityMethod {
    VariationalOde,
    FundamentalMatrix,
    ClosedForm,
    FiniteDifference,
}

#[derive(Debug, Clone)]
pub struct SensitivityResult<T> {
    pub delta_x: SampledFunction<T>,
    pub method: SensitivityMethod,
    /// Some perturbed control sample left the system's control box.
    pub box_excursion: bool,
}

/// `M(t)` sampled at the grid nodes.
#[derive(Debug, Clone)]
pub struct FundamentalMatrix<T> {
    grid: TimeGrid<T>,
    n: usize,
    values: Vec<T>,
}

impl<T: Scalar> FundamentalMatrix<T> {
    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Row-major `M(t_k)`.
    pub fn at(&self, k: usize) -> &[T] {
        let nn = self.n * self.n;
        &self.values[k * nn..(k + 1) * nn]
    }
}

struct Linearization<T> {
    n: usize,
    m: usize,
    /// Per bin: `(A_left, B_left, A_right, B_right)` evaluated at the bin's
    /// two nodes with the bin's control values.
    bins: Vec<[Vec<T>; 4]>,
}

fn linearize<T: Scalar, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    x: &SampledFunction<T>,
    u: &SampledFunction<T>,
    with_control: bool,
) -> Result<Linearization<T>> {
    let (n, m) = (sys.state_dim(), sys.control_dim());
    if *x.grid() != *u.grid() {
        return Err(Error::GridMismatch(
            "trajectory and control grids differ".into(),
        ));
    }
    if x.kind() != Interpolation::PiecewiseLinear {
        return Err(invalid("x", "trajectories must be piecewise-linear"));
    }
    if x.dim() != n || u.dim() != m {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: x.dim(),
        });
    }
    let grid = *x.grid();
    let mut bins = Vec::with_capacity(grid.n_bins());
    for j in 0..grid.n_bins() {
        let (ul, ur) = u.bin_ends(j);
        let mut al = vec![T::zero(); n * n];
        let mut ar = vec![T::zero(); n * n];
        sys.state_jacobian(x.sample(j), ul, grid.node(j), &mut al)?;
        sys.state_jacobian(x.sample(j + 1), ur, grid.node(j + 1), &mut ar)?;
        let mut bl = vec![T::zero(); n * m];
        let mut br = vec![T::zero(); n * m];
        if with_control {
            sys.control_jacobian(x.sample(j), ul, grid.node(j), &mut bl)?;
            sys.control_jacobian(x.sample(j + 1), ur, grid.node(j + 1), &mut br)?;
        }
        bins.push([al, bl, ar, br]);
    }
    Ok(Linearization { n, m, bins })
}

fn check_direction<T: Scalar>(u: &SampledFunction<T>, du: &SampledFunction<T>) -> Result<()> {
    if du.grid() != u.grid() {
        return Err(Error::GridMismatch(
            "direction and control grids differ".into(),
        ));
    }
    if du.dim() != u.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            found: du.dim(),
        });
    }
    Ok(())
}

/// Solves the variational system along the converged trajectory `x` of `u`.
pub fn solve_variational<T: Scalar, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    x: &SampledFunction<T>,
    u: &SampledFunction<T>,
    du: &SampledFunction<T>,
) -> Result<SensitivityResult<T>> {
    check_direction(u, du)?;
    let lin = linearize(sys, x, u, true)?;
    let (n, m) = (lin.n, lin.m);
    let grid = *x.grid();
    let h2 = grid.dt() * lit(0.5);
    let mut z = SampledFunction::zeros(grid, n, Interpolation::PiecewiseLinear);
    let mut rhs = vec![T::zero(); n];
    let mut tmp = vec![T::zero(); n];
    for (j, [al, bl, ar, br]) in lin.bins.iter().enumerate() {
        let (dl, dr) = du.bin_ends(j);
        let zj = z.sample(j).to_vec();
        linalg::matvec(al, n, n, &zj, &mut rhs);
        linalg::matvec(bl, n, m, dl, &mut tmp);
        rhs.iter_mut().zip(&tmp).for_each(|(r, &t)| *r += t);
        linalg::matvec(br, n, m, dr, &mut tmp);
        for i in 0..n {
            rhs[i] = zj[i] + h2 * (rhs[i] + tmp[i]);
        }
        let lhs = implicit_matrix(ar, n, h2);
        let next = linalg::solve(&lhs, n, &rhs, 1)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { iteration: j });
        }
        z.sample_mut(j + 1).copy_from_slice(&next);
    }
    Ok(SensitivityResult {
        delta_x: z,
        method: SensitivityMethod::VariationalOde,
        box_excursion: false,
    })
}

/// `I - h/2 · A`.
fn implicit_matrix<T: Scalar>(a: &[T], n: usize, h2: T) -> Vec<T> {
    let mut lhs = linalg::identity::<T>(n);
    lhs.iter_mut().zip(a).for_each(|(l, &v)| *l -= h2 * v);
    lhs
}

/// Fundamental matrix of `v̇ = D_x f(x(t), u(t), t) v`, `M(t0) = I`.
pub fn fundamental_matrix<T: Scalar, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    x: &SampledFunction<T>,
    u: &SampledFunction<T>,
) -> Result<FundamentalMatrix<T>> {
    let lin = linearize(sys, x, u, false)?;
    let n = lin.n;
    let grid = *x.grid();
    let h2 = grid.dt() * lit(0.5);
    let mut values = linalg::identity::<T>(n);
    values.reserve(n * n * grid.n_bins());
    for (j, [al, _, ar, _]) in lin.bins.iter().enumerate() {
        let prev = values[j * n * n..(j + 1) * n * n].to_vec();
        let mut explicit = linalg::matmul(al, &prev, n, n, n);
        explicit
            .iter_mut()
            .zip(&prev)
            .for_each(|(e, &p)| *e = p + h2 * *e);
        let next = linalg::solve(&implicit_matrix(ar, n, h2), n, &explicit, n)?;
        values.extend(next);
    }
    Ok(FundamentalMatrix { grid, n, values })
}

/// Assembles `δx(t_k) = M(t_k) ∫_{t0}^{t_k} M(s)⁻¹ D_u f Δu ds` from a
/// fundamental matrix, trapezoid rule per bin.
pub fn variation_of_constants<T: Scalar, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    fm: &FundamentalMatrix<T>,
    x: &SampledFunction<T>,
    u: &SampledFunction<T>,
    du: &SampledFunction<T>,
) -> Result<SensitivityResult<T>> {
    check_direction(u, du)?;
    let lin = linearize(sys, x, u, true)?;
    let (n, m) = (lin.n, lin.m);
    let grid = *x.grid();
    if *fm.grid() != grid || fm.dim() != n {
        return Err(Error::GridMismatch(
            "fundamental matrix does not match trajectory".into(),
        ));
    }
    let h2 = grid.dt() * lit(0.5);
    let mut acc = vec![T::zero(); n];
    let mut forcing = vec![T::zero(); n];
    let mut z = SampledFunction::zeros(grid, n, Interpolation::PiecewiseLinear);
    for (j, [_, bl, _, br]) in lin.bins.iter().enumerate() {
        let (dl, dr) = du.bin_ends(j);
        for (node, b, d) in [(j, bl, dl), (j + 1, br, dr)] {
            linalg::matvec(b, n, m, d, &mut forcing);
            let pulled = linalg::solve(fm.at(node), n, &forcing, 1)?;
            acc.iter_mut().zip(&pulled).for_each(|(a, &p)| *a += h2 * p);
        }
        linalg::matvec(fm.at(j + 1), n, n, &acc, z.sample_mut(j + 1));
    }
    Ok(SensitivityResult {
        delta_x: z,
        method: SensitivityMethod::FundamentalMatrix,
        box_excursion: false,
    })
}

/// Central difference `(x(u + εΔu) - x(u - εΔu)) / 2ε` through the Picard
/// solver: the independent oracle for [`solve_variational`].
pub fn finite_difference_gateaux<T: Scalar, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    x0: &[T],
    u: &SampledFunction<T>,
    du: &SampledFunction<T>,
    eps: T,
    opts: &PicardOptions<T>,
) -> Result<SensitivityResult<T>> {
    if !(eps > T::zero()) {
        return Err(invalid("eps", format!("must be positive, got {eps}")));
    }
    check_direction(u, du)?;
    let plus = u.add_scaled(eps, du)?;
    let minus = u.add_scaled(-eps, du)?;
    let box_excursion = sys
        .control_box()
        .map(|b| {
            (0..plus.len()).any(|k| !b.contains(plus.sample(k)) || !b.contains(minus.sample(k)))
        })
        .unwrap_or(false);
    let xp = picard_solve(sys, x0, &plus, opts)?.trajectory;
    let xm = picard_solve(sys, x0, &minus, opts)?.trajectory;
    let two_eps = eps + eps;
    Ok(SensitivityResult {
        delta_x: xp.zip_with(&xm, |a, b| (a - b) / two_eps)?,
        method: SensitivityMethod::FiniteDifference,
        box_excursion,
    })
}

/// Derivative of the cumulative-departure state: `δY_w(t) = Σ_{p ∈ P_w} ∫_{t0}^{t} Δh_p`.
///
/// Computed by direct summation of the direction's bin integrals.
pub fn cumulative_direction<T: Scalar>(
    od_of_path: &[usize],
    n_od: usize,
    dh: &SampledFunction<T>,
) -> Result<SensitivityResult<T>> {
    if dh.dim() != od_of_path.len() {
        return Err(Error::DimensionMismatch {
            expected: od_of_path.len(),
            found: dh.dim(),
        });
    }
    let grid = *dh.grid();
    let half = lit::<T>(0.5);
    let mut out = SampledFunction::zeros(grid, n_od, Interpolation::PiecewiseLinear);
    for (p, &w) in od_of_path.iter().enumerate() {
        let mut running = T::zero();
        for j in 0..grid.n_bins() {
            let (l, r) = dh.bin_ends(j);
            running += grid.dt() * (l[p] + r[p]) * half;
            out.sample_mut(j + 1)[w] += running;
        }
    }
    Ok(SensitivityResult {
        delta_x: out,
        method: SensitivityMethod::ClosedForm,
        box_excursion: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function_space::sup_norm;
    use crate::systems::{Bounds, CubicDamping, FlowAccumulator, FnSystem, LinearSystem};
    use Interpolation::*;

    fn grid(n: usize) -> TimeGrid<f64> {
        TimeGrid::new(0.0, 1.0, n).unwrap()
    }

    fn tight() -> PicardOptions<f64> {
        PicardOptions::new(1e-14).with_max_iter(2000)
    }

    #[test]
    fn zero_direction_gives_zero_derivative() {
        let g = grid(100);
        let u = SampledFunction::constant(g, PiecewiseConstant, &[0.2]).unwrap();
        let sys = CubicDamping::new(1.0, 1.0).unwrap();
        let x = picard_solve(&sys, &[0.5], &u, &tight()).unwrap().trajectory;
        let r = solve_variational(
            &sys,
            &x,
            &u,
            &SampledFunction::zeros(g, 1, PiecewiseConstant),
        )
        .unwrap();
        assert_eq!(sup_norm(&r.delta_x), 0.0);
        assert_eq!(r.delta_x.first(), &[0.0]);
    }

    #[test]
    fn linear_decay_closed_form() {
        let g = grid(1000);
        let sys = LinearSystem::decay(1.0);
        let u = SampledFunction::zeros(g, 1, PiecewiseConstant);
        let one = SampledFunction::constant(g, PiecewiseConstant, &[1.0]).unwrap();
        let x = picard_solve(&sys, &[1.0], &u, &tight()).unwrap().trajectory;
        let var = solve_variational(&sys, &x, &u, &one).unwrap();
        let fd = finite_difference_gateaux(&sys, &[1.0], &u, &one, 1e-4, &tight()).unwrap();
        for k in 0..=1000 {
            let exact = 1.0 - (-g.node(k)).exp();
            assert!((var.delta_x.sample(k)[0] - exact).abs() < 1e-6);
            assert!((fd.delta_x.sample(k)[0] - exact).abs() < 1e-6);
        }
        for eps in [1e-1, 1e-3] {
            let fd = finite_difference_gateaux(&sys, &[1.0], &u, &one, eps, &tight()).unwrap();
            assert!(sup_norm(&fd.delta_x.sub(&var.delta_x).unwrap()) < 1e-10);
        }
    }

    #[test]
    fn scalar_fundamental_matrix_is_exponential() {
        let g = grid(1000);
        let sys = LinearSystem::pure_decay(1.0);
        let u = SampledFunction::zeros(g, 1, PiecewiseConstant);
        let x = picard_solve(&sys, &[1.0], &u, &tight()).unwrap().trajectory;
        let m = fundamental_matrix(&sys, &x, &u).unwrap();
        assert_eq!(m.at(0), &[1.0]);
        for k in 0..=1000 {
            assert!((m.at(k)[0] - (-g.node(k)).exp()).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_jacobian_gives_identity() {
        let g = grid(20);
        let sys = FlowAccumulator::new(vec![0, 0, 1], 2, 10.0).unwrap();
        let h = SampledFunction::constant(g, PiecewiseConstant, &[1.0, 2.0, 3.0]).unwrap();
        let y = picard_solve(&sys, &[0.0, 0.0], &h, &tight())
            .unwrap()
            .trajectory;
        let m = fundamental_matrix(&sys, &y, &h).unwrap();
        for k in 0..=20 {
            assert_eq!(m.at(k), &[1.0, 0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn missing_jacobian_is_a_capability_error() {
        let g = grid(10);
        let sys = FnSystem::new(1, 1, Bounds::new(1.0, 0.0).unwrap(), |_, u, _, out| {
            out[0] = u[0]
        });
        let u = SampledFunction::zeros(g, 1, PiecewiseConstant);
        let x = SampledFunction::zeros(g, 1, PiecewiseLinear);
        assert_eq!(
            solve_variational(&sys, &x, &u, &u).unwrap_err(),
            Error::MissingJacobian("state")
        );
    }

    #[test]
    fn derivative_is_linear_in_direction() {
        let g = grid(200);
        let sys = CubicDamping::new(1.0, 1.0).unwrap();
        let u = SampledFunction::from_scalar_fn(g, PiecewiseConstant, |t| 0.3 * t).unwrap();
        let x = picard_solve(&sys, &[0.5], &u, &tight()).unwrap().trajectory;
        let d1 =
            SampledFunction::from_scalar_fn(g, PiecewiseConstant, |t| (3.0 * t).sin()).unwrap();
        let d2 = SampledFunction::from_scalar_fn(g, PiecewiseConstant, |t| 1.0 - t * t).unwrap();
        let (a, b) = (0.7, -2.3);
        let combo = d1.scaled(a).add_scaled(b, &d2).unwrap();
        let lhs = solve_variational(&sys, &x, &u, &combo).unwrap().delta_x;
        let r1 = solve_variational(&sys, &x, &u, &d1).unwrap().delta_x;
        let r2 = solve_variational(&sys, &x, &u, &d2).unwrap().delta_x;
        let rhs = r1.scaled(a).add_scaled(b, &r2).unwrap();
        assert!(sup_norm(&lhs.sub(&rhs).unwrap()) <= 1e-10);
    }

    #[test]
    fn cubic_finite_difference_agreement_and_quadratic_decay() {
        let g = grid(1000);
        let sys = CubicDamping::new(1.0, 1.0).unwrap();
        let u = SampledFunction::constant(g, PiecewiseConstant, &[0.2]).unwrap();
        let du = SampledFunction::constant(g, PiecewiseConstant, &[1.0]).unwrap();
        let x = picard_solve(&sys, &[0.5], &u, &tight()).unwrap().trajectory;
        let var = solve_variational(&sys, &x, &u, &du).unwrap().delta_x;
        let err = |eps: f64| {
            let fd = finite_difference_gateaux(&sys, &[0.5], &u, &du, eps, &tight()).unwrap();
            sup_norm(&fd.delta_x.sub(&var).unwrap()) / sup_norm(&var)
        };
        let (e1, e2) = (err(1e-4), err(5e-5));
        assert!(e1 <= 1e-4, "{e1}");
        let ratio = e1 / e2;
        assert!((3.5..=4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn variation_of_constants_matches_variational_solve() {
        let g = grid(500);
        let sys = LinearSystem::new(2, 1, vec![0.0, 1.0, -2.0, -0.5], vec![0.0, 1.0]).unwrap();
        let u = SampledFunction::from_scalar_fn(g, PiecewiseConstant, |t| t.cos()).unwrap();
        let du = SampledFunction::from_scalar_fn(g, PiecewiseConstant, |t| (2.0 * t).sin() + 0.5)
            .unwrap();
        let x = picard_solve(&sys, &[1.0, 0.0], &u, &tight())
            .unwrap()
            .trajectory;
        let direct = solve_variational(&sys, &x, &u, &du).unwrap().delta_x;
        let fm = fundamental_matrix(&sys, &x, &u).unwrap();
        let assembled = variation_of_constants(&sys, &fm, &x, &u, &du)
            .unwrap()
            .delta_x;
        assert!(sup_norm(&direct.sub(&assembled).unwrap()) <= 1e-8);
    }

    #[test]
    fn flow_accumulator_matches_closed_form() {
        let g = grid(50);
        let sys = FlowAccumulator::new(vec![0, 1, 0], 2, 10.0).unwrap();
        let h = SampledFunction::constant(g, PiecewiseConstant, &[1.0, 2.0, 3.0]).unwrap();
        let dh = SampledFunction::from_fn(g, 3, PiecewiseConstant, |t, o| {
            o[0] = t.sin();
            o[1] = -1.0;
            o[2] = t * t;
        })
        .unwrap();
        let y = picard_solve(&sys, &[0.0, 0.0], &h, &tight())
            .unwrap()
            .trajectory;
        let var = solve_variational(&sys, &y, &h, &dh).unwrap().delta_x;
        let closed = cumulative_direction(&[0, 1, 0], 2, &dh).unwrap().delta_x;
        assert!(sup_norm(&var.sub(&closed).unwrap()) <= 1e-12);
    }

    #[test]
    fn box_excursions_are_flagged_not_rejected() {
        let g = grid(10);
        let sys = CubicDamping::new(1.0, 1.0).unwrap();
        let u = SampledFunction::constant(g, PiecewiseConstant, &[1.0]).unwrap();
        let du = SampledFunction::constant(g, PiecewiseConstant, &[1.0]).unwrap();
        let r = finite_difference_gateaux(&sys, &[0.5], &u, &du, 1e-3, &tight()).unwrap();
        assert!(r.box_excursion);
        let inner = SampledFunction::constant(g, PiecewiseConstant, &[0.0]).unwrap();
        assert!(
            !finite_difference_gateaux(&sys, &[0.5], &inner, &du, 1e-3, &tight())
                .unwrap()
                .box_excursion
        );
    }
}
