//! Damped Newton iterations on real objectives and real square systems.

use crate::linalg::{cholesky, cholesky_solve, norm2, CMatrix};
use crate::{creal, Error, Real, Result};

/// Value, gradient and row-major Hessian of a real objective.
pub type RealJet<T> = (T, Vec<T>, Vec<T>);

#[derive(Clone, Debug)]
pub struct NewtonOptions<T> {
    pub max_iter: usize,
    /// Relative step size below which the iteration is considered converged.
    pub step_tol: T,
    /// Gradient norm accepted when the line search stalls at roundoff.
    pub stall_grad_tol: T,
    /// Largest allowed distance of any iterate from the seed.
    pub radius: Option<T>,
    /// Require a positive-definite Hessian at the accepted point.
    pub require_pd: bool,
}

impl<T: Real> Default for NewtonOptions<T> {
    fn default() -> Self {
        Self { max_iter: 50, step_tol: T::lit(1e-13), stall_grad_tol: T::epsilon().sqrt(), radius: None, require_pd: true }
    }
}

#[derive(Clone, Debug)]
pub struct NewtonResult<T> {
    pub x: Vec<T>,
    pub value: T,
    pub gradient: Vec<T>,
    pub hessian: Vec<T>,
    pub iterations: usize,
}

/// Minimizes a real objective by Newton steps with Armijo backtracking.
///
/// Intermediate iterates with an indefinite Hessian take a shifted step; the
/// accepted point itself must have a positive-definite Hessian when
/// `require_pd` is set, otherwise `PositivityViolation` is returned.
pub fn newton_minimize<T: Real>(
    objective: impl Fn(&[T]) -> Result<RealJet<T>>,
    x0: &[T],
    opts: &NewtonOptions<T>,
) -> Result<NewtonResult<T>> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut f, mut g, mut hess) = objective(&x)?;
    let mut iterations = 0;
    let mut converged = n == 0;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let dir = descent_direction(&hess, &g, n);
        let mut dir = match dir {
            Some(d) => d,
            None => g.iter().map(|v| -*v).collect(),
        };
        if let Some(r) = opts.radius {
            let off: Vec<T> = x.iter().zip(x0).zip(&dir).map(|((a, b), d)| *a - *b + *d).collect();
            let dist = norm2(&off);
            if dist > r {
                let s = (r / dist).min(T::one());
                dir.iter_mut().for_each(|d| *d = *d * s);
            }
        }
        let slope: T = g.iter().zip(&dir).map(|(a, b)| *a * *b).sum();
        let xnorm = norm2(&x);
        if norm2(&dir) <= opts.step_tol * (T::one() + xnorm) {
            converged = true;
            break;
        }
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<T> = x.iter().zip(&dir).map(|(a, d)| *a + t * *d).collect();
            if let Ok((ft, gt, ht)) = objective(&trial) {
                if ft.is_finite() && ft <= f + T::lit(1e-4) * t * slope.min(T::zero()) + T::epsilon() * f.abs() * T::lit(16.0) {
                    let moved = norm2(&dir) * t;
                    x = trial;
                    f = ft;
                    g = gt;
                    hess = ht;
                    accepted = true;
                    if moved <= opts.step_tol * (T::one() + norm2(&x)) {
                        converged = true;
                    }
                    break;
                }
            }
            t = t * T::lit(0.5);
        }
        if !accepted {
            if norm2(&g) <= opts.stall_grad_tol * (T::one() + f.abs()) {
                converged = true;
                break;
            }
            return Err(Error::NumericalFailure(format!("line search stalled at {:?} with gradient norm {}", x, norm2(&g))));
        }
    }
    if !converged && norm2(&g) > opts.stall_grad_tol * (T::one() + f.abs()) {
        return Err(Error::NumericalFailure(format!(
            "Newton did not converge in {} iterations (gradient norm {})",
            opts.max_iter,
            norm2(&g)
        )));
    }
    if opts.require_pd && n > 0 && cholesky(&hess, n).is_none() {
        return Err(Error::PositivityViolation(format!("Hessian at the minimizer {:?} is not positive definite", x)));
    }
    Ok(NewtonResult { x, value: f, gradient: g, hessian: hess, iterations })
}

fn descent_direction<T: Real>(hess: &[T], g: &[T], n: usize) -> Option<Vec<T>> {
    let scale = hess.iter().fold(T::zero(), |m, v| m.max(v.abs())).max(T::epsilon());
    let mut shift = T::zero();
    for _ in 0..60 {
        let mut h = hess.to_vec();
        for i in 0..n {
            h[i * n + i] = h[i * n + i] + shift;
        }
        if let Some(l) = cholesky(&h, n) {
            let neg: Vec<T> = g.iter().map(|v| -*v).collect();
            return Some(cholesky_solve(&l, n, &neg));
        }
        shift = if shift == T::zero() { scale * T::lit(1e-8) } else { shift * T::lit(4.0) };
    }
    None
}

/// Solves a real square system `F(x) = 0` by Newton with residual backtracking.
pub fn newton_root<T: Real>(system: impl Fn(&[T]) -> Result<(Vec<T>, Vec<T>)>, x0: &[T], max_iter: usize, tol: T) -> Result<Vec<T>> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut r, mut jac) = system(&x)?;
    for _ in 0..max_iter {
        let rn = norm2(&r);
        if rn <= tol {
            return Ok(x);
        }
        let j = CMatrix::from_real(n, n, &jac);
        let rhs: Vec<_> = r.iter().map(|v| creal(-*v)).collect();
        let dx = j.solve(&rhs).ok_or_else(|| Error::DegenerateChart(format!("singular Jacobian at {:?}", x)))?;
        let mut t = T::one();
        let mut moved = false;
        for _ in 0..30 {
            let trial: Vec<T> = x.iter().zip(&dx).map(|(a, d)| *a + t * d.re).collect();
            if let Ok((rt, jt)) = system(&trial) {
                if norm2(&rt) < rn || norm2(&rt) <= tol {
                    x = trial;
                    r = rt;
                    jac = jt;
                    moved = true;
                    break;
                }
            }
            t = t * T::lit(0.5);
        }
        if !moved {
            break;
        }
    }
    if norm2(&r) <= tol.max(T::epsilon().sqrt()) {
        Ok(x)
    } else {
        Err(Error::NumericalFailure(format!("root solve did not converge from {:?}", x0)))
    }
}
