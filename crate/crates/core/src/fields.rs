//! Smooth complex-valued maps on `R^m` with derivative queries up to second order.
//!
//! A [`ScalarField`] either carries caller-supplied derivatives (analytic mode)
//! or differentiates its evaluator by central differences. Fields are immutable
//! and cheap to clone; evaluators are shared behind `Arc`.

use crate::linalg::CMatrix;
use crate::{creal, Error, Real, Result, C};
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// Axis-aligned box in `R^dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain<T> {
    pub lo: Vec<T>,
    pub hi: Vec<T>,
}

impl<T: Real> BoxDomain<T> {
    pub fn new(lo: Vec<T>, hi: Vec<T>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidInput("box bounds must have equal, positive length".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a <= b)) {
            return Err(Error::InvalidInput("box lower bound exceeds upper bound".into()));
        }
        Ok(Self { lo, hi })
    }

    /// The whole space.
    pub fn unbounded(dim: usize) -> Self {
        Self { lo: vec![T::neg_infinity(); dim], hi: vec![T::infinity(); dim] }
    }

    /// Cube `[-r, r]^dim` around `center`.
    pub fn around(center: &[T], r: T) -> Self {
        Self { lo: center.iter().map(|&c| c - r).collect(), hi: center.iter().map(|&c| c + r).collect() }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| v >= a && v <= b)
    }

    /// Smallest distance from `x` to the boundary (negative outside).
    pub fn margin(&self, x: &[T]) -> T {
        x.iter().zip(self.lo.iter().zip(&self.hi)).map(|(&v, (&a, &b))| (v - a).min(b - v)).fold(T::infinity(), |m, v| m.min(v))
    }

    pub fn center(&self) -> Vec<T> {
        self.lo.iter().zip(&self.hi).map(|(&a, &b)| (a + b) * T::lit(0.5)).collect()
    }

    pub fn widths(&self) -> Vec<T> {
        self.lo.iter().zip(&self.hi).map(|(&a, &b)| b - a).collect()
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.iter().chain(&self.hi).all(|v| v.is_finite())
    }

    /// Box shrunk by `fraction` of its width on every side.
    pub fn shrink(&self, fraction: T) -> Self {
        let lo = self.lo.iter().zip(&self.hi).map(|(&a, &b)| a + (b - a) * fraction).collect();
        let hi = self.lo.iter().zip(&self.hi).map(|(&a, &b)| b - (b - a) * fraction).collect();
        Self { lo, hi }
    }
}

/// How derivatives of a field are obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DerivativeMode<T> {
    Analytic,
    /// Central differences; the gradient uses `step`, the Hessian `step^{3/4}`,
    /// both scaled by `1 + |x_i|`.
    FiniteDifference {
        step: T,
    },
}

/// Value, gradient and Hessian at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet<T> {
    pub value: C<T>,
    pub gradient: Vec<C<T>>,
    pub hessian: CMatrix<T>,
}

impl<T: Real> Jet<T> {
    pub fn constant(dim: usize, value: C<T>) -> Self {
        Self { value, gradient: vec![C::zero(); dim], hessian: CMatrix::zeros(dim, dim) }
    }

    /// Real parts of value, gradient and row-major Hessian.
    pub fn real_parts(&self) -> (T, Vec<T>, Vec<T>) {
        (self.value.re, self.gradient.iter().map(|g| g.re).collect(), self.hessian.as_slice().iter().map(|h| h.re).collect())
    }

    fn is_finite(&self) -> bool {
        self.value.re.is_finite()
            && self.value.im.is_finite()
            && self.gradient.iter().all(|g| g.re.is_finite() && g.im.is_finite())
            && self.hessian.is_finite()
    }
}

type ValueFn<T> = dyn Fn(&[T]) -> C<T> + Send + Sync;
type JetFn<T> = dyn Fn(&[T]) -> Jet<T> + Send + Sync;

/// Smooth map `R^dim → C` with derivative queries.
#[derive(Clone)]
pub struct ScalarField<T> {
    dim: usize,
    value_fn: Arc<ValueFn<T>>,
    jet_fn: Option<Arc<JetFn<T>>>,
    mode: DerivativeMode<T>,
    domain: Option<BoxDomain<T>>,
}

impl<T: fmt::Debug> fmt::Debug for ScalarField<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField").field("dim", &self.dim).field("mode", &self.mode).finish()
    }
}

/// Default finite-difference step, `ε^{1/3}`.
pub fn default_step<T: Real>() -> T {
    T::epsilon().cbrt()
}

impl<T: Real> ScalarField<T> {
    /// Field differentiated by central differences with the default step.
    pub fn new(dim: usize, f: impl Fn(&[T]) -> C<T> + Send + Sync + 'static) -> Self {
        Self { dim, value_fn: Arc::new(f), jet_fn: None, mode: DerivativeMode::FiniteDifference { step: default_step() }, domain: None }
    }

    /// Real-valued field differentiated by central differences.
    pub fn real(dim: usize, f: impl Fn(&[T]) -> T + Send + Sync + 'static) -> Self {
        Self::new(dim, move |x| creal(f(x)))
    }

    /// Field whose derivatives are supplied by `jet`; values come from `jet` as well.
    pub fn analytic(dim: usize, jet: impl Fn(&[T]) -> Jet<T> + Send + Sync + 'static) -> Self {
        let jet: Arc<JetFn<T>> = Arc::new(jet);
        let j2 = jet.clone();
        Self { dim, value_fn: Arc::new(move |x| j2(x).value), jet_fn: Some(jet), mode: DerivativeMode::Analytic, domain: None }
    }

    /// Analytic field with a separate (cheaper) value evaluator.
    pub fn analytic_with_value(
        dim: usize,
        value: impl Fn(&[T]) -> C<T> + Send + Sync + 'static,
        jet: impl Fn(&[T]) -> Jet<T> + Send + Sync + 'static,
    ) -> Self {
        Self { dim, value_fn: Arc::new(value), jet_fn: Some(Arc::new(jet)), mode: DerivativeMode::Analytic, domain: None }
    }

    pub fn constant(dim: usize, c: C<T>) -> Self {
        Self::analytic_with_value(dim, move |_| c, move |_| Jet::constant(dim, c))
    }

    /// Overrides the finite-difference step (switches to finite-difference mode).
    pub fn with_step(mut self, step: T) -> Self {
        self.mode = DerivativeMode::FiniteDifference { step };
        self
    }

    /// Declares a domain; finite-difference stencils must stay inside it.
    pub fn with_domain(mut self, domain: BoxDomain<T>) -> Self {
        self.domain = Some(domain);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> DerivativeMode<T> {
        self.mode
    }

    pub fn domain(&self) -> Option<&BoxDomain<T>> {
        self.domain.as_ref()
    }

    /// Raw value without finiteness checks.
    pub fn value(&self, x: &[T]) -> C<T> {
        (self.value_fn)(x)
    }

    pub fn try_value(&self, x: &[T]) -> Result<C<T>> {
        self.check_point(x)?;
        let v = (self.value_fn)(x);
        if v.re.is_finite() && v.im.is_finite() {
            Ok(v)
        } else {
            Err(non_finite(x))
        }
    }

    fn check_point(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::InvalidInput(format!("point has dimension {}, field expects {}", x.len(), self.dim)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite point {:?}", x)));
        }
        Ok(())
    }

    /// Value, gradient and symmetric Hessian at `x`.
    pub fn eval_jet(&self, x: &[T]) -> Result<Jet<T>> {
        self.check_point(x)?;
        match (&self.mode, &self.jet_fn) {
            (DerivativeMode::Analytic, Some(jet)) => {
                let j = jet(x);
                if j.is_finite() {
                    Ok(j)
                } else {
                    Err(non_finite(x))
                }
            }
            (DerivativeMode::FiniteDifference { step }, _) => self.fd_jet(x, *step),
            (DerivativeMode::Analytic, None) => self.fd_jet(x, default_step()),
        }
    }

    /// Central-difference jet regardless of mode.
    pub fn fd_jet(&self, x: &[T], step: T) -> Result<Jet<T>> {
        self.check_point(x)?;
        let n = self.dim;
        let hg: Vec<T> = x.iter().map(|v| step * (T::one() + v.abs())).collect();
        let hh: Vec<T> = x.iter().map(|v| step.powf(T::lit(0.75)) * (T::one() + v.abs())).collect();
        if let Some(dom) = &self.domain {
            let reach = hh.iter().chain(&hg).fold(T::zero(), |m, &v| m.max(v));
            if dom.margin(x) < T::lit(2.0) * reach {
                return Err(Error::InvalidInput(format!("point {:?} is within two steps of the domain boundary", x)));
            }
        }
        let f = |y: &[T]| -> Result<C<T>> {
            let v = (self.value_fn)(y);
            if v.re.is_finite() && v.im.is_finite() {
                Ok(v)
            } else {
                Err(non_finite(y))
            }
        };
        let f0 = f(x)?;
        let mut y = x.to_vec();
        let mut gradient = vec![C::zero(); n];
        for i in 0..n {
            y[i] = x[i] + hg[i];
            let fp = f(&y)?;
            y[i] = x[i] - hg[i];
            let fm = f(&y)?;
            y[i] = x[i];
            gradient[i] = (fp - fm) / (hg[i] + hg[i]);
        }
        let mut hessian = CMatrix::zeros(n, n);
        for i in 0..n {
            y[i] = x[i] + hh[i];
            let fp = f(&y)?;
            y[i] = x[i] - hh[i];
            let fm = f(&y)?;
            y[i] = x[i];
            hessian[(i, i)] = (fp - f0 - f0 + fm) / (hh[i] * hh[i]);
            for j in (i + 1)..n {
                let mut corner = |si: T, sj: T| -> Result<C<T>> {
                    y[i] = x[i] + si * hh[i];
                    y[j] = x[j] + sj * hh[j];
                    let v = f(&y);
                    y[i] = x[i];
                    y[j] = x[j];
                    v
                };
                let one = T::one();
                let pp = corner(one, one)?;
                let pm = corner(one, -one)?;
                let mp = corner(-one, one)?;
                let mm = corner(-one, -one)?;
                let v = (pp - pm - mp + mm) / (T::lit(4.0) * hh[i] * hh[j]);
                hessian[(i, j)] = v;
                hessian[(j, i)] = v;
            }
        }
        hessian.symmetrize();
        Ok(Jet { value: f0, gradient, hessian })
    }

    pub fn gradient(&self, x: &[T]) -> Result<Vec<C<T>>> {
        if let (DerivativeMode::Analytic, Some(_)) = (&self.mode, &self.jet_fn) {
            return Ok(self.eval_jet(x)?.gradient);
        }
        let step = match self.mode {
            DerivativeMode::FiniteDifference { step } => step,
            DerivativeMode::Analytic => default_step(),
        };
        let mut y = x.to_vec();
        let mut g = vec![C::zero(); self.dim];
        for i in 0..self.dim {
            let h = step * (T::one() + x[i].abs());
            y[i] = x[i] + h;
            let fp = self.try_value(&y)?;
            y[i] = x[i] - h;
            let fm = self.try_value(&y)?;
            y[i] = x[i];
            g[i] = (fp - fm) / (h + h);
        }
        Ok(g)
    }

    /// Field of real parts (derivatives follow the parent's mode).
    pub fn real_part(&self) -> Self {
        let parent = self.clone();
        let p2 = self.clone();
        let mut out = Self::analytic_with_value(
            self.dim,
            move |x| creal(parent.value(x).re),
            move |x| {
                let j = p2.eval_jet(x).unwrap_or_else(|_| Jet::constant(p2.dim, C::new(T::nan(), T::nan())));
                Jet { value: creal(j.value.re), gradient: j.gradient.iter().map(|g| creal(g.re)).collect(), hessian: j.hessian.re() }
            },
        );
        out.domain = self.domain.clone();
        out
    }

    /// Field of imaginary parts.
    pub fn imag_part(&self) -> Self {
        let parent = self.clone();
        let p2 = self.clone();
        Self::analytic_with_value(
            self.dim,
            move |x| creal(parent.value(x).im),
            move |x| {
                let j = p2.eval_jet(x).unwrap_or_else(|_| Jet::constant(p2.dim, C::new(T::nan(), T::nan())));
                Jet { value: creal(j.value.im), gradient: j.gradient.iter().map(|g| creal(g.im)).collect(), hessian: j.hessian.im() }
            },
        )
    }
}

fn non_finite<T: Real>(x: &[T]) -> Error {
    Error::NumericalFailure(format!("non-finite evaluation at {:?}", x))
}

/// Maps `R^dim → C^codim` given by component fields.
#[derive(Clone)]
pub struct VectorField<T> {
    dim: usize,
    components: Vec<ScalarField<T>>,
}

impl<T: fmt::Debug> fmt::Debug for VectorField<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField").field("dim", &self.dim).field("codim", &self.components.len()).finish()
    }
}

impl<T: Real> VectorField<T> {
    pub fn new(components: Vec<ScalarField<T>>) -> Result<Self> {
        let first = components.first().ok_or_else(|| Error::InvalidInput("vector field needs components".into()))?;
        let dim = first.dim();
        let analytic = matches!(first.mode(), DerivativeMode::Analytic);
        for c in &components {
            if c.dim() != dim {
                return Err(Error::InvalidInput("components have different dimensions".into()));
            }
            if matches!(c.mode(), DerivativeMode::Analytic) != analytic {
                return Err(Error::InvalidInput("components have different derivative modes".into()));
            }
        }
        Ok(Self { dim, components })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn codim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[ScalarField<T>] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &ScalarField<T> {
        &self.components[i]
    }

    pub fn eval(&self, x: &[T]) -> Result<Vec<C<T>>> {
        self.components.iter().map(|c| c.try_value(x)).collect()
    }

    /// Real parts of the values.
    pub fn eval_real(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.eval(x)?.into_iter().map(|v| v.re).collect())
    }

    /// Jacobian with one row per component.
    pub fn jacobian(&self, x: &[T]) -> Result<CMatrix<T>> {
        let mut j = CMatrix::zeros(self.codim(), self.dim);
        for (i, c) in self.components.iter().enumerate() {
            let g = c.gradient(x)?;
            for (k, v) in g.into_iter().enumerate() {
                j[(i, k)] = v;
            }
        }
        Ok(j)
    }

    pub fn jets(&self, x: &[T]) -> Result<Vec<Jet<T>>> {
        self.components.iter().map(|c| c.eval_jet(x)).collect()
    }
}

/// Analytic-versus-central-difference discrepancy at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct FdPointError<T> {
    pub point: Vec<T>,
    pub gradient_error: T,
    pub hessian_error: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport<T> {
    pub points: Vec<FdPointError<T>>,
    pub max_gradient_error: T,
    pub max_hessian_error: T,
}

/// Compares supplied derivatives with central differences (relative errors,
/// normalised by `max(1, ‖analytic‖)`).
pub fn fd_consistency<T: Real>(f: &ScalarField<T>, samples: &[Vec<T>]) -> Result<FdReport<T>> {
    fd_consistency_with_step(f, samples, default_step())
}

pub fn fd_consistency_with_step<T: Real>(f: &ScalarField<T>, samples: &[Vec<T>], step: T) -> Result<FdReport<T>> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("fd_consistency needs at least one sample".into()));
    }
    if f.jet_fn.is_none() {
        return Err(Error::InvalidInput("fd_consistency needs a field with analytic derivatives".into()));
    }
    let mut points = Vec::with_capacity(samples.len());
    for x in samples {
        let exact = f.eval_jet(x)?;
        let approx = f.fd_jet(x, step)?;
        let gnorm = exact.gradient.iter().map(|g| g.norm_sqr()).sum::<T>().sqrt().max(T::one());
        let gerr = exact.gradient.iter().zip(&approx.gradient).map(|(a, b)| (*a - *b).norm_sqr()).sum::<T>().sqrt() / gnorm;
        let herr = (&exact.hessian - &approx.hessian).norm() / exact.hessian.norm().max(T::one());
        points.push(FdPointError { point: x.clone(), gradient_error: gerr, hessian_error: herr });
    }
    let max_gradient_error = points.iter().fold(T::zero(), |m, p| m.max(p.gradient_error));
    let max_hessian_error = points.iter().fold(T::zero(), |m, p| m.max(p.hessian_error));
    Ok(FdReport { points, max_gradient_error, max_hessian_error })
}

/// Convenience: jet of a real quadratic form `½ xᵀ A x + bᵀ x + c`.
pub fn quadratic_jet<T: Real>(a: &[T], b: &[T], c: T, x: &[T]) -> Jet<T> {
    let n = x.len();
    let mut value = c;
    let mut gradient = vec![C::zero(); n];
    for i in 0..n {
        let mut ax = T::zero();
        for j in 0..n {
            ax = ax + a[i * n + j] * x[j];
        }
        value = value + T::lit(0.5) * x[i] * ax + b[i] * x[i];
        gradient[i] = creal(ax + b[i]);
    }
    Jet { value: creal(value), gradient, hessian: CMatrix::from_real(n, n, a) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_has_zero_derivatives() {
        let f = ScalarField::<f64>::new(2, |_| C::new(5.0, 0.0));
        let j = f.eval_jet(&[0.3, -1.2]).unwrap();
        assert!((j.value - C::new(5.0, 0.0)).norm() < 1e-15);
        assert!(j.gradient.iter().all(|g| g.norm() < 1e-9));
        assert!(j.hessian.max_abs() < 1e-6);
    }

    #[test]
    fn linear_analytic_field_has_exact_zero_hessian() {
        let f = ScalarField::<f64>::analytic(2, |x| Jet {
            value: C::new(2.0 * x[0] - x[1], 0.0),
            gradient: vec![C::new(2.0, 0.0), C::new(-1.0, 0.0)],
            hessian: CMatrix::zeros(2, 2),
        });
        let j = f.eval_jet(&[1.0, 4.0]).unwrap();
        assert_eq!(j.hessian, CMatrix::zeros(2, 2));
    }

    #[test]
    fn non_finite_value_is_reported_with_coordinates() {
        let f = ScalarField::<f64>::real(1, |x| 1.0 / x[0]);
        let err = f.eval_jet(&[0.0]).unwrap_err();
        assert!(matches!(err, Error::NumericalFailure(ref m) if m.contains("0.0")));
    }

    #[test]
    fn empty_sample_set_is_rejected() {
        let f = ScalarField::<f64>::constant(1, C::new(1.0, 0.0));
        assert!(matches!(fd_consistency(&f, &[]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn boundary_guard_rejects_points_near_the_edge() {
        let dom = BoxDomain::new(vec![0.0], vec![1.0]).unwrap();
        let f = ScalarField::<f64>::real(1, |x| x[0] * x[0]).with_step(1e-3).with_domain(dom);
        assert!(f.eval_jet(&[0.5]).is_ok());
        assert!(f.eval_jet(&[1e-4]).is_err());
    }
}
