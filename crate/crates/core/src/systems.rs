//! ODE right-hand sides `f(x, u, t)` with their declared bounds.

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::scalar::{lit, Scalar};

/// Declared constants `C >= sup |f|` and `L >= sup ‖D_x f‖`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds<T> {
    pub c: T,
    pub l: T,
}

impl<T: Scalar> Bounds<T> {
    pub fn new(c: T, l: T) -> Result<Self> {
        if !(c > T::zero()) {
            return Err(invalid("C", format!("must be positive, got {c}")));
        }
        if !(l >= T::zero()) || !l.is_finite() {
            return Err(invalid(
                "L",
                format!("must be finite and non-negative, got {l}"),
            ));
        }
        Ok(Self { c, l })
    }
}

/// Box of admissible control values.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBox<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> ControlBox<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(invalid("control box", "lower bound exceeds upper bound"));
        }
        Ok(Self { lower, upper })
    }

    pub fn contains(&self, u: &[T]) -> bool {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&l, &h))| v >= l && v <= h)
    }

    /// Box enlarged by `margin` times its width (at least `margin`) on each side.
    pub fn inflated(&self, margin: T) -> Self {
        let pad = |l: T, h: T| ((h - l) * margin).max(margin);
        Self {
            lower: self
                .lower
                .iter()
                .zip(&self.upper)
                .map(|(&l, &h)| l - pad(l, h))
                .collect(),
            upper: self
                .lower
                .iter()
                .zip(&self.upper)
                .map(|(&l, &h)| h + pad(l, h))
                .collect(),
        }
    }
}

/// Right-hand side of `ẋ = f(x, u, t)`.
///
/// Jacobians are optional; the default implementations report that they are
/// missing. Jacobians are written row-major: `D_x f` is `n x n`, `D_u f` is
/// `n x m`. Implementations must be reentrant.
pub trait OdeSystem<T: Scalar> {
    fn state_dim(&self) -> usize;

    fn control_dim(&self) -> usize;

    fn rhs(&self, x: &[T], u: &[T], t: T, out: &mut [T]);

    fn bounds(&self) -> Bounds<T>;

    fn state_jacobian(&self, _x: &[T], _u: &[T], _t: T, _out: &mut [T]) -> Result<()> {
        Err(Error::MissingJacobian("state"))
    }

    fn control_jacobian(&self, _x: &[T], _u: &[T], _t: T, _out: &mut [T]) -> Result<()> {
        Err(Error::MissingJacobian("control"))
    }

    fn control_box(&self) -> Option<&ControlBox<T>> {
        None
    }
}

type Rhs<T> = dyn Fn(&[T], &[T], T, &mut [T]) + Send + Sync;

/// System assembled from closures.
pub struct FnSystem<T> {
    n: usize,
    m: usize,
    bounds: Bounds<T>,
    rhs: Box<Rhs<T>>,
    dx: Option<Box<Rhs<T>>>,
    du: Option<Box<Rhs<T>>>,
    control_box: Option<ControlBox<T>>,
}

impl<T: Scalar> FnSystem<T> {
    pub fn new(
        n: usize,
        m: usize,
        bounds: Bounds<T>,
        rhs: impl Fn(&[T], &[T], T, &mut [T]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            n,
            m,
            bounds,
            rhs: Box::new(rhs),
            dx: None,
            du: None,
            control_box: None,
        }
    }

    pub fn with_jacobians(
        mut self,
        dx: impl Fn(&[T], &[T], T, &mut [T]) + Send + Sync + 'static,
        du: impl Fn(&[T], &[T], T, &mut [T]) + Send + Sync + 'static,
    ) -> Self {
        self.dx = Some(Box::new(dx));
        self.du = Some(Box::new(du));
        self
    }

    pub fn with_control_box(mut self, b: ControlBox<T>) -> Self {
        self.control_box = Some(b);
        self
    }
}

impl<T: Scalar> OdeSystem<T> for FnSystem<T> {
    fn state_dim(&self) -> usize {
        self.n
    }
    fn control_dim(&self) -> usize {
        self.m
    }
    fn rhs(&self, x: &[T], u: &[T], t: T, out: &mut [T]) {
        (self.rhs)(x, u, t, out)
    }
    fn bounds(&self) -> Bounds<T> {
        self.bounds
    }
    fn state_jacobian(&self, x: &[T], u: &[T], t: T, out: &mut [T]) -> Result<()> {
        let dx = self.dx.as_ref().ok_or(Error::MissingJacobian("state"))?;
        dx(x, u, t, out);
        Ok(())
    }
    fn control_jacobian(&self, x: &[T], u: &[T], t: T, out: &mut [T]) -> Result<()> {
        let du = self.du.as_ref().ok_or(Error::MissingJacobian("control"))?;
        du(x, u, t, out);
        Ok(())
    }
    fn control_box(&self) -> Option<&ControlBox<T>> {
        self.control_box.as_ref()
    }
}

/// `f(x, u, t) = A x + B u`.
///
/// `L = ‖A‖₂`; `C` is declared over the ball of radius `state_radius` and
/// the control box (or a unit box when none is given).
#[derive(Debug, Clone)]
pub struct LinearSystem<T> {
    n: usize,
    m: usize,
    a: Vec<T>,
    b: Vec<T>,
    bounds: Bounds<T>,
    state_radius: T,
    control_box: Option<ControlBox<T>>,
}

impl<T: Scalar> LinearSystem<T> {
    pub fn new(n: usize, m: usize, a: Vec<T>, b: Vec<T>) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: a.len(),
            });
        }
        if b.len() != n * m {
            return Err(Error::DimensionMismatch {
                expected: n * m,
                found: b.len(),
            });
        }
        let mut s = Self {
            n,
            m,
            a,
            b,
            bounds: Bounds {
                c: T::one(),
                l: T::zero(),
            },
            state_radius: T::one(),
            control_box: None,
        };
        s.bounds = s.declared_bounds();
        Ok(s)
    }

    /// Scalar `ẋ = -rate·x + u`.
    pub fn decay(rate: T) -> Self {
        Self::new(1, 1, vec![-rate], vec![T::one()]).expect("scalar dimensions")
    }

    /// Scalar `ẋ = -rate·x` with a (disregarded) one-dimensional control.
    pub fn pure_decay(rate: T) -> Self {
        Self::new(1, 1, vec![-rate], vec![T::zero()]).expect("scalar dimensions")
    }

    /// Scalar `ẋ = u`.
    pub fn integrator() -> Self {
        Self::new(1, 1, vec![T::zero()], vec![T::one()]).expect("scalar dimensions")
    }

    pub fn with_state_radius(mut self, radius: T) -> Self {
        self.state_radius = radius;
        self.bounds = self.declared_bounds();
        self
    }

    pub fn with_control_box(mut self, b: ControlBox<T>) -> Self {
        self.control_box = Some(b);
        self.bounds = self.declared_bounds();
        self
    }

    pub fn matrix_a(&self) -> &[T] {
        &self.a
    }

    pub fn matrix_b(&self) -> &[T] {
        &self.b
    }

    fn declared_bounds(&self) -> Bounds<T> {
        let radius = self.state_radius;
        let la = linalg::spectral_norm(&self.a, self.n, self.n);
        let lb = linalg::spectral_norm(&self.b, self.n, self.m);
        let u_radius = self
            .control_box
            .as_ref()
            .map(|b| {
                let v: Vec<T> = b
                    .lower
                    .iter()
                    .zip(&b.upper)
                    .map(|(l, h)| l.abs().max(h.abs()))
                    .collect();
                crate::scalar::euclidean(&v)
            })
            .unwrap_or(T::one());
        Bounds {
            c: (la * radius + lb * u_radius).max(T::min_positive_value()),
            l: la,
        }
    }
}

impl<T: Scalar> OdeSystem<T> for LinearSystem<T> {
    fn state_dim(&self) -> usize {
        self.n
    }
    fn control_dim(&self) -> usize {
        self.m
    }
    fn rhs(&self, x: &[T], u: &[T], _t: T, out: &mut [T]) {
        linalg::matvec(&self.a, self.n, self.n, x, out);
        for i in 0..self.n {
            out[i] += (0..self.m)
                .map(|j| self.b[i * self.m + j] * u[j])
                .sum::<T>();
        }
    }
    fn bounds(&self) -> Bounds<T> {
        self.bounds
    }
    fn state_jacobian(&self, _x: &[T], _u: &[T], _t: T, out: &mut [T]) -> Result<()> {
        out.copy_from_slice(&self.a);
        Ok(())
    }
    fn control_jacobian(&self, _x: &[T], _u: &[T], _t: T, out: &mut [T]) -> Result<()> {
        out.copy_from_slice(&self.b);
        Ok(())
    }
    fn control_box(&self) -> Option<&ControlBox<T>> {
        self.control_box.as_ref()
    }
}

/// Scalar `ẋ = -x³ + u`, declared on `|x| <= state_radius`, `|u| <= control_radius`.
#[derive(Debug, Clone)]
pub struct CubicDamping<T> {
    bounds: Bounds<T>,
    control_box: ControlBox<T>,
}

impl<T: Scalar> CubicDamping<T> {
    pub fn new(state_radius: T, control_radius: T) -> Result<Self> {
        if !(state_radius > T::zero()) || !(control_radius >= T::zero()) {
            return Err(invalid(
                "radius",
                "state radius must be positive, control radius non-negative",
            ));
        }
        let r = state_radius;
        Ok(Self {
            bounds: Bounds::new(r * r * r + control_radius, lit::<T>(3.0) * r * r)?,
            control_box: ControlBox::new(vec![-control_radius], vec![control_radius])?,
        })
    }
}

impl<T: Scalar> OdeSystem<T> for CubicDamping<T> {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn rhs(&self, x: &[T], u: &[T], _t: T, out: &mut [T]) {
        out[0] = -x[0] * x[0] * x[0] + u[0];
    }
    fn bounds(&self) -> Bounds<T> {
        self.bounds
    }
    fn state_jacobian(&self, x: &[T], _u: &[T], _t: T, out: &mut [T]) -> Result<()> {
        out[0] = -lit::<T>(3.0) * x[0] * x[0];
        Ok(())
    }
    fn control_jacobian(&self, _x: &[T], _u: &[T], _t: T, out: &mut [T]) -> Result<()> {
        out[0] = T::one();
        Ok(())
    }
    fn control_box(&self) -> Option<&ControlBox<T>> {
        Some(&self.control_box)
    }
}

/// Cumulative departures per O-D pair: `Ẏ_w = Σ_{p ∈ P_w} h_p`.
///
/// Control-only, so `D_x f = 0` and `L = 0`. `od_of_path[p]` is the O-D
/// index served by path `p`.
#[derive(Debug, Clone)]
pub struct FlowAccumulator<T> {
    od_of_path: Vec<usize>,
    n_od: usize,
    bounds: Bounds<T>,
    control_box: ControlBox<T>,
}

impl<T: Scalar> FlowAccumulator<T> {
    /// `max_rate` bounds every departure rate and fixes the declared `C`.
    pub fn new(od_of_path: Vec<usize>, n_od: usize, max_rate: T) -> Result<Self> {
        if let Some(&bad) = od_of_path.iter().find(|&&w| w >= n_od) {
            return Err(invalid(
                "od_of_path",
                format!("O-D index {bad} out of range"),
            ));
        }
        let mut per_od = vec![0usize; n_od];
        od_of_path.iter().for_each(|&w| per_od[w] += 1);
        let widest = per_od.iter().copied().max().unwrap_or(0).max(1);
        let c = max_rate
            * crate::scalar::from_usize::<T>(widest)
            * crate::scalar::from_usize::<T>(n_od.max(1)).sqrt();
        Ok(Self {
            control_box: ControlBox::new(
                vec![T::zero(); od_of_path.len()],
                vec![max_rate; od_of_path.len()],
            )?,
            od_of_path,
            n_od,
            bounds: Bounds::new(c.max(T::min_positive_value()), T::zero())?,
        })
    }

    pub fn od_of_path(&self) -> &[usize] {
        &self.od_of_path
    }
}

impl<T: Scalar> OdeSystem<T> for FlowAccumulator<T> {
    fn state_dim(&self) -> usize {
        self.n_od
    }
    fn control_dim(&self) -> usize {
        self.od_of_path.len()
    }
    fn rhs(&self, _x: &[T], u: &[T], _t: T, out: &mut [T]) {
        out.iter_mut().for_each(|v| *v = T::zero());
        for (p, &w) in self.od_of_path.iter().enumerate() {
            out[w] += u[p];
        }
    }
    fn bounds(&self) -> Bounds<T> {
        self.bounds
    }
    fn state_jacobian(&self, _x: &[T], _u: &[T], _t: T, out: &mut [T]) -> Result<()> {
        out.iter_mut().for_each(|v| *v = T::zero());
        Ok(())
    }
    fn control_jacobian(&self, _x: &[T], _u: &[T], _t: T, out: &mut [T]) -> Result<()> {
        let m = self.od_of_path.len();
        out.iter_mut().for_each(|v| *v = T::zero());
        for (p, &w) in self.od_of_path.iter().enumerate() {
            out[w * m + p] = T::one();
        }
        Ok(())
    }
    fn control_box(&self) -> Option<&ControlBox<T>> {
        Some(&self.control_box)
    }
}
