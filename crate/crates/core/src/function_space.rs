//! Uniform time grids, sampled functions on them, and the norms and inner
//! products used throughout the crate.
//!
//! Controls are represented piecewise-constant on bins (one sample per bin,
//! taken at the bin midpoint) and trajectories piecewise-linear between grid
//! nodes (one sample per node). Quadrature is exact on both representations:
//! a Riemann sum for constant pieces, the trapezoid rule for linear pieces.

use crate::error::{invalid, Error, Result};
use crate::scalar::{euclidean, from_usize, lit, Scalar};

/// Uniform partition of `[t0, tf]` into `n_bins` bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<T> {
    t0: T,
    tf: T,
    n_bins: usize,
}

impl<T: Scalar> TimeGrid<T> {
    pub fn new(t0: T, tf: T, n_bins: usize) -> Result<Self> {
        if !(t0.is_finite() && tf.is_finite()) {
            return Err(Error::NonFinite("time grid bounds".into()));
        }
        if tf <= t0 {
            return Err(invalid("tf", format!("must exceed t0 ({t0} >= {tf})")));
        }
        if n_bins == 0 {
            return Err(invalid("n_bins", "must be at least 1"));
        }
        Ok(Self { t0, tf, n_bins })
    }

    pub fn t0(&self) -> T {
        self.t0
    }

    pub fn tf(&self) -> T {
        self.tf
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_nodes(&self) -> usize {
        self.n_bins + 1
    }

    pub fn span(&self) -> T {
        self.tf - self.t0
    }

    /// Bin width `(tf - t0) / n_bins`.
    pub fn dt(&self) -> T {
        self.span() / from_usize(self.n_bins)
    }

    /// Grid node `k`, `0 <= k <= n_bins`. The last node is `tf` exactly.
    pub fn node(&self, k: usize) -> T {
        if k >= self.n_bins {
            return self.tf;
        }
        self.t0 + self.span() * from_usize::<T>(k) / from_usize(self.n_bins)
    }

    pub fn midpoint(&self, bin: usize) -> T {
        (self.node(bin) + self.node(bin + 1)) * lit(0.5)
    }

    pub fn nodes(&self) -> impl Iterator<Item = T> + '_ {
        (0..=self.n_bins).map(move |k| self.node(k))
    }

    /// Bin containing `t`; times outside the horizon clamp to the end bins.
    pub fn bin_of(&self, t: T) -> usize {
        if t <= self.t0 {
            return 0;
        }
        let k = ((t - self.t0) / self.dt())
            .floor()
            .to_usize()
            .unwrap_or(usize::MAX);
        k.min(self.n_bins - 1)
    }

    /// Grid with every pair of bins merged. Requires an even bin count.
    pub fn coarsened(&self) -> Option<Self> {
        (self.n_bins.is_multiple_of(2) && self.n_bins >= 2).then_some(Self {
            n_bins: self.n_bins / 2,
            ..*self
        })
    }
}

/// How the samples of a [`SampledFunction`] are interpreted between grid points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    /// One sample per bin, constant over the bin.
    PiecewiseConstant,
    /// One sample per node, linear between nodes.
    PiecewiseLinear,
}

impl Interpolation {
    pub fn sample_count(self, n_bins: usize) -> usize {
        match self {
            Interpolation::PiecewiseConstant => n_bins,
            Interpolation::PiecewiseLinear => n_bins + 1,
        }
    }
}

/// A vector-valued function of time sampled on a [`TimeGrid`].
///
/// Samples are stored row-major: sample `k` occupies
/// `values[k * dim..(k + 1) * dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFunction<T> {
    grid: TimeGrid<T>,
    dim: usize,
    kind: Interpolation,
    values: Vec<T>,
}

impl<T: Scalar> SampledFunction<T> {
    pub fn new(grid: TimeGrid<T>, dim: usize, kind: Interpolation, values: Vec<T>) -> Result<Self> {
        let expected = kind.sample_count(grid.n_bins()) * dim;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sampled function values".into()));
        }
        Ok(Self {
            grid,
            dim,
            kind,
            values,
        })
    }

    pub fn zeros(grid: TimeGrid<T>, dim: usize, kind: Interpolation) -> Self {
        Self {
            grid,
            dim,
            kind,
            values: vec![T::zero(); kind.sample_count(grid.n_bins()) * dim],
        }
    }

    pub fn constant(grid: TimeGrid<T>, kind: Interpolation, value: &[T]) -> Result<Self> {
        Self::from_fn(grid, value.len(), kind, |_, out| out.copy_from_slice(value))
    }

    /// Samples `f` at each sample time (bin midpoints for piecewise-constant,
    /// nodes for piecewise-linear).
    pub fn from_fn(
        grid: TimeGrid<T>,
        dim: usize,
        kind: Interpolation,
        mut f: impl FnMut(T, &mut [T]),
    ) -> Result<Self> {
        let mut out = Self::zeros(grid, dim, kind);
        for k in 0..out.len() {
            let t = out.sample_time(k);
            f(t, out.sample_mut(k));
        }
        if out.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sampled function values".into()));
        }
        Ok(out)
    }

    /// Scalar function convenience wrapper around [`SampledFunction::from_fn`].
    pub fn from_scalar_fn(
        grid: TimeGrid<T>,
        kind: Interpolation,
        f: impl Fn(T) -> T,
    ) -> Result<Self> {
        Self::from_fn(grid, 1, kind, |t, out| out[0] = f(t))
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> Interpolation {
        self.kind
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.kind.sample_count(self.grid.n_bins())
    }

    pub fn is_empty(&self) -> bool {
        self.dim == 0
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn sample(&self, k: usize) -> &[T] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn sample_mut(&mut self, k: usize) -> &mut [T] {
        &mut self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn sample_time(&self, k: usize) -> T {
        match self.kind {
            Interpolation::PiecewiseConstant => self.grid.midpoint(k),
            Interpolation::PiecewiseLinear => self.grid.node(k),
        }
    }

    /// Component `i` of every sample.
    pub fn component(&self, i: usize) -> Vec<T> {
        (0..self.len()).map(|k| self.sample(k)[i]).collect()
    }

    pub fn first(&self) -> &[T] {
        self.sample(0)
    }

    pub fn last(&self) -> &[T] {
        self.sample(self.len() - 1)
    }

    /// Value at an arbitrary time, clamped to the horizon.
    pub fn eval(&self, t: T) -> Vec<T> {
        match self.kind {
            Interpolation::PiecewiseConstant => self.sample(self.grid.bin_of(t)).to_vec(),
            Interpolation::PiecewiseLinear => {
                let t = t.max(self.grid.t0()).min(self.grid.tf());
                let k = self.grid.bin_of(t);
                let w = ((t - self.grid.node(k)) / self.grid.dt())
                    .max(T::zero())
                    .min(T::one());
                self.sample(k)
                    .iter()
                    .zip(self.sample(k + 1))
                    .map(|(&a, &b)| a + (b - a) * w)
                    .collect()
            }
        }
    }

    /// Values at the two ends of `bin`: the constant twice for
    /// piecewise-constant functions, the bracketing nodes otherwise.
    pub fn bin_ends(&self, bin: usize) -> (&[T], &[T]) {
        match self.kind {
            Interpolation::PiecewiseConstant => (self.sample(bin), self.sample(bin)),
            Interpolation::PiecewiseLinear => (self.sample(bin), self.sample(bin + 1)),
        }
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(())
    }

    /// Samplewise combination of two functions with the same grid, dimension
    /// and interpolation.
    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_compatible(other)?;
        if self.kind != other.kind {
            return Err(Error::GridMismatch("interpolation kinds differ".into()));
        }
        let values: Vec<T> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.grid, self.dim, self.kind, values)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// `self + a * other`.
    pub fn add_scaled(&self, a: T, other: &Self) -> Result<Self> {
        self.zip_with(other, |x, y| x + a * y)
    }

    pub fn scaled(&self, a: T) -> Self {
        Self {
            values: self.values.iter().map(|&v| v * a).collect(),
            ..self.clone()
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }
}

/// Discretized `∫ u(t)ᵀ v(t) dt`, exact on the sampled representations.
pub fn inner_product<T: Scalar>(u: &SampledFunction<T>, v: &SampledFunction<T>) -> Result<T> {
    u.check_compatible(v)?;
    let dt = u.grid.dt();
    let half = lit::<T>(0.5);
    let dot = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| x * y).sum::<T>();
    let n = u.grid.n_bins();
    use Interpolation::*;
    let total = match (u.kind, v.kind) {
        (PiecewiseConstant, PiecewiseConstant) => {
            (0..n).map(|k| dot(u.sample(k), v.sample(k))).sum::<T>()
        }
        (PiecewiseLinear, PiecewiseLinear) => (0..n)
            .map(|k| half * (dot(u.sample(k), v.sample(k)) + dot(u.sample(k + 1), v.sample(k + 1))))
            .sum::<T>(),
        (PiecewiseConstant, PiecewiseLinear) | (PiecewiseLinear, PiecewiseConstant) => {
            let (c, l) = if u.kind == PiecewiseConstant {
                (u, v)
            } else {
                (v, u)
            };
            (0..n)
                .map(|k| half * (dot(c.sample(k), l.sample(k)) + dot(c.sample(k), l.sample(k + 1))))
                .sum::<T>()
        }
    };
    Ok(total * dt)
}

pub fn l2_norm<T: Scalar>(u: &SampledFunction<T>) -> T {
    inner_product(u, u)
        .expect("self-compatible")
        .max(T::zero())
        .sqrt()
}

/// Maximum over samples of the Euclidean norm of the value vector.
pub fn sup_norm<T: Scalar>(x: &SampledFunction<T>) -> T {
    (0..x.len())
        .map(|k| euclidean(x.sample(k)))
        .fold(T::zero(), T::max)
}

/// `max_t |x(t)| e^{-alpha t}` over the sample times, using absolute time.
pub fn weighted_norm<T: Scalar>(x: &SampledFunction<T>, alpha: T) -> Result<T> {
    if !(alpha > T::zero()) {
        return Err(invalid("alpha", format!("must be positive, got {alpha}")));
    }
    Ok((0..x.len())
        .map(|k| euclidean(x.sample(k)) * (-alpha * x.sample_time(k)).exp())
        .fold(T::zero(), T::max))
}
