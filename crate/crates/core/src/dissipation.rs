//! Dissipations, sampled ideal membership, and the implicit-function
//! reductions of an asymptotic submanifold to graph and parametric form.

pub use crate::fields::BoxDomain;
use crate::fields::{Jet, ScalarField, VectorField};
use crate::linalg::{cholesky, CMatrix};
use crate::minimize::{newton_minimize, NewtonOptions, RealJet};
use crate::{creal, Error, Real, Result, C};
use num_traits::Zero;
use rayon::prelude::*;
use std::sync::Arc;

/// Smooth nonnegative function on a box; its zero set is the support `Γ`.
#[derive(Clone, Debug)]
pub struct Dissipation<T> {
    field: ScalarField<T>,
    domain: BoxDomain<T>,
}

/// Tolerance for slightly negative dissipation samples.
pub const NEGATIVITY_SLACK: f64 = 1e-12;

impl<T: Real> Dissipation<T> {
    pub fn new(field: ScalarField<T>, domain: BoxDomain<T>) -> Result<Self> {
        if field.dim() != domain.dim() {
            return Err(Error::InvalidInput("dissipation field and domain dimensions differ".into()));
        }
        Ok(Self { field, domain })
    }

    /// Dissipation from a real closure, differentiated numerically.
    pub fn from_fn(domain: BoxDomain<T>, f: impl Fn(&[T]) -> T + Send + Sync + 'static) -> Self {
        let field = ScalarField::real(domain.dim(), f);
        Self { field, domain }
    }

    pub fn field(&self) -> &ScalarField<T> {
        &self.field
    }

    pub fn domain(&self) -> &BoxDomain<T> {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    /// Value clamped at zero (tiny negative roundoff is absorbed).
    pub fn value(&self, x: &[T]) -> Result<T> {
        let v = self.field.try_value(x)?.re;
        let slack = T::lit(NEGATIVITY_SLACK);
        if v < -slack {
            return Err(Error::InvalidInput(format!("dissipation is negative ({}) at {:?}", v, x)));
        }
        Ok(v.max(T::zero()))
    }

    /// Real value, gradient and row-major Hessian.
    pub fn real_jet(&self, x: &[T]) -> Result<RealJet<T>> {
        Ok(self.field.eval_jet(x)?.real_parts())
    }

    /// Verifies nonnegativity on samples; returns the smallest value seen.
    pub fn check_nonnegative(&self, samples: &[Vec<T>]) -> Result<T> {
        let mut min = T::infinity();
        for x in samples {
            let v = self.field.try_value(x)?.re;
            if v < -T::lit(NEGATIVITY_SLACK) {
                return Err(Error::InvalidInput(format!("dissipation is negative ({}) at {:?}", v, x)));
            }
            min = min.min(v);
        }
        Ok(min)
    }
}

/// Options for the sampled membership test.
#[derive(Clone, Copy, Debug)]
pub struct MembershipOptions<T> {
    /// Largest admissible fitted constant.
    pub cap: T,
    /// Largest admissible ratio between the worst `|f|/D^s` near `Γ`
    /// (smallest-`D` quartile) and far from it (largest-`D` quartile).
    pub growth_cap: T,
}

impl<T: Real> Default for MembershipOptions<T> {
    fn default() -> Self {
        Self { cap: T::lit(1e6), growth_cap: T::lit(1.5) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Membership<T> {
    pub holds: bool,
    /// Least `c` with `|f| ≤ c·D^s` on the samples (infinite if `f ≠ 0` on `Γ`).
    pub constant: T,
    /// Envelope ratio near/far from `Γ`.
    pub growth: T,
    pub worst_point: Option<Vec<T>>,
}

/// Sampled test of `|f| ≤ c·D^s`.
pub fn membership_order<T: Real>(f: &ScalarField<T>, d: &Dissipation<T>, samples: &[Vec<T>], s: T) -> Result<Membership<T>> {
    membership_order_with(f, d, samples, s, &MembershipOptions::default())
}

pub fn membership_order_with<T: Real>(
    f: &ScalarField<T>,
    d: &Dissipation<T>,
    samples: &[Vec<T>],
    s: T,
    opts: &MembershipOptions<T>,
) -> Result<Membership<T>> {
    let evals: Vec<(T, T)> = samples.par_iter().map(|x| Ok((f.try_value(x)?.norm(), d.value(x)?))).collect::<Result<_>>()?;
    membership_from_values(&evals, samples, s, opts)
}

/// Membership test on precomputed `(|f|, D)` pairs.
pub fn membership_from_values<T: Real>(evals: &[(T, T)], samples: &[Vec<T>], s: T, opts: &MembershipOptions<T>) -> Result<Membership<T>> {
    if s < T::zero() {
        return Err(Error::InvalidInput("membership order must be nonnegative".into()));
    }
    let fmax = evals.iter().fold(T::zero(), |m, e| m.max(e.0));
    let zero_tol = T::lit(1e-12) * (T::one() + fmax);
    let mut ratios: Vec<(T, T, usize)> = Vec::new();
    let mut all_zero_locus = true;
    for (i, &(af, dv)) in evals.iter().enumerate() {
        if dv > T::zero() {
            all_zero_locus = false;
            ratios.push((dv, af / dv.powf(s), i));
        } else if af > zero_tol {
            return Ok(Membership { holds: false, constant: T::infinity(), growth: T::infinity(), worst_point: samples.get(i).cloned() });
        }
    }
    if all_zero_locus {
        return Err(Error::InsufficientData("all samples lie on the zero locus of the dissipation".into()));
    }
    let (mut constant, mut worst) = (T::zero(), None);
    for &(_, r, i) in &ratios {
        if !r.is_finite() {
            return Ok(Membership { holds: false, constant: T::infinity(), growth: T::infinity(), worst_point: samples.get(i).cloned() });
        }
        if r > constant {
            constant = r;
            worst = samples.get(i).cloned();
        }
    }
    ratios.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let q = (ratios.len() / 4).max(1);
    let near = ratios[..q].iter().fold(T::zero(), |m, r| m.max(r.1));
    let far = ratios[ratios.len() - q..].iter().fold(T::zero(), |m, r| m.max(r.1));
    let growth = if near == T::zero() {
        T::zero()
    } else if far == T::zero() {
        T::infinity()
    } else {
        near / far
    };
    let holds = constant <= opts.cap && (ratios.len() < 4 || growth <= opts.growth_cap);
    Ok(Membership { holds, constant, growth, worst_point: worst })
}

/// Derivative `X f = Σ X_i ∂_i f` as a field.
pub fn directional_derivative<T: Real>(f: &ScalarField<T>, x: &VectorField<T>) -> Result<ScalarField<T>> {
    if f.dim() != x.dim() || x.codim() != f.dim() {
        return Err(Error::InvalidInput("direction field must map R^dim to C^dim".into()));
    }
    let f = f.clone();
    let xf = x.clone();
    Ok(ScalarField::new(f.dim(), move |p| {
        let g = match f.gradient(p) {
            Ok(g) => g,
            Err(_) => return C::new(T::nan(), T::nan()),
        };
        let v = match xf.eval(p) {
            Ok(v) => v,
            Err(_) => return C::new(T::nan(), T::nan()),
        };
        g.iter().zip(&v).fold(C::zero(), |acc, (a, b)| acc + *a * *b)
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeCheck<T> {
    pub holds: bool,
    /// Order tested for `X f`: `s` when `X D` lies in the ideal of `D`, else `s − ½`.
    pub target_order: T,
    pub tangent_to_level_sets: bool,
    pub membership: Membership<T>,
}

/// Checks the order of `X f` for `f` of order `s`.
///
/// When `X` preserves the ideal (`X D = O(D)`), invariance of `D^s` is
/// tested; otherwise the guaranteed loss of one half order is allowed.
pub fn derivative_order_check<T: Real>(
    f: &ScalarField<T>,
    d: &Dissipation<T>,
    s: T,
    direction: &VectorField<T>,
    samples: &[Vec<T>],
) -> Result<DerivativeCheck<T>> {
    if s < T::lit(0.5) {
        return Err(Error::InvalidInput("derivative_order_check needs s ≥ 1/2".into()));
    }
    let base = membership_order(f, d, samples, s)?;
    if !base.holds {
        return Err(Error::InvalidInput(format!("f is not of order {} in the dissipation (constant {})", s, base.constant)));
    }
    let xd = directional_derivative(d.field(), direction)?;
    let tangent = match membership_order(&xd, d, samples, T::one()) {
        Ok(m) => m.holds,
        Err(Error::InsufficientData(_)) => false,
        Err(e) => return Err(e),
    };
    let target = if tangent { s } else { s - T::lit(0.5) };
    let xf = directional_derivative(f, direction)?;
    let membership = membership_order(&xf, d, samples, target)?;
    Ok(DerivativeCheck { holds: membership.holds, target_order: target, tangent_to_level_sets: tangent, membership })
}

/// Two-sided constants `c·B ≤ A ≤ C·B` on samples where both exceed `floor`.
#[derive(Clone, Debug, PartialEq)]
pub struct Equivalence<T> {
    pub lower: T,
    pub upper: T,
    pub used: usize,
    /// Constants per spatial cluster of samples.
    pub clusters: Vec<ClusterConstants<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterConstants<T> {
    pub center: Vec<T>,
    pub lower: T,
    pub upper: T,
    pub count: usize,
}

impl<T: Real> Equivalence<T> {
    pub fn spread(&self) -> T {
        self.upper / self.lower
    }
}

/// Fits equivalence constants between two nonnegative functions on samples.
///
/// With `cluster_radius`, samples are greedily grouped and constants are
/// also reported per group, since equivalence is a local notion.
pub fn equivalence_constants<T: Real>(
    a: impl Fn(&[T]) -> Result<T> + Sync,
    b: impl Fn(&[T]) -> Result<T> + Sync,
    samples: &[Vec<T>],
    floor: T,
    cluster_radius: Option<T>,
) -> Result<Equivalence<T>> {
    let vals: Vec<Option<T>> = samples
        .par_iter()
        .map(|x| {
            let (va, vb) = (a(x)?, b(x)?);
            Ok(if va >= floor && vb >= floor { Some(va / vb) } else { None })
        })
        .collect::<Result<_>>()?;
    let used: Vec<(usize, T)> = vals.iter().enumerate().filter_map(|(i, v)| v.map(|r| (i, r))).collect();
    if used.is_empty() {
        return Err(Error::InsufficientData("no samples above the equivalence floor".into()));
    }
    let lower = used.iter().fold(T::infinity(), |m, r| m.min(r.1));
    let upper = used.iter().fold(T::zero(), |m, r| m.max(r.1));
    let mut clusters = Vec::new();
    if let Some(radius) = cluster_radius {
        let mut centers: Vec<(Vec<T>, T, T, usize)> = Vec::new();
        for &(i, r) in &used {
            let x = &samples[i];
            let hit = centers.iter_mut().find(|c| c.0.iter().zip(x).map(|(a, b)| (*a - *b) * (*a - *b)).sum::<T>().sqrt() <= radius);
            match hit {
                Some(c) => {
                    c.1 = c.1.min(r);
                    c.2 = c.2.max(r);
                    c.3 += 1;
                }
                None => centers.push((x.clone(), r, r, 1)),
            }
        }
        clusters = centers.into_iter().map(|(center, lower, upper, count)| ClusterConstants { center, lower, upper, count }).collect();
    }
    Ok(Equivalence { lower, upper, used: used.len(), clusters })
}

struct GraphInner<T> {
    d: Dissipation<T>,
    generators: Vec<ScalarField<T>>,
    k: usize,
    seed: Vec<T>,
}

/// Point data of a graph presentation at `x″`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphPoint<T> {
    pub foot: Vec<T>,
    pub d: T,
    pub g: Vec<C<T>>,
}

impl<T: Real> GraphInner<T> {
    fn assemble(&self, xp: &[T], xpp: &[T]) -> Vec<T> {
        xp.iter().chain(xpp).copied().collect()
    }

    fn foot(&self, xpp: &[T]) -> Result<(Vec<T>, T)> {
        let k = self.k;
        let n = self.d.dim();
        let objective = |xp: &[T]| -> Result<RealJet<T>> {
            let (v, g, h) = self.d.real_jet(&self.assemble(xp, xpp))?;
            let gp = g[..k].to_vec();
            let mut hp = vec![T::zero(); k * k];
            for i in 0..k {
                for j in 0..k {
                    hp[i * k + j] = h[i * n + j];
                }
            }
            Ok((v, gp, hp))
        };
        let res = newton_minimize(objective, &self.seed[..k], &NewtonOptions::default())?;
        let d = self.d.value(&self.assemble(&res.x, xpp))?;
        Ok((res.x, d))
    }

    fn point(&self, xpp: &[T]) -> Result<GraphPoint<T>> {
        let k = self.k;
        let (foot, d) = self.foot(xpp)?;
        let x = self.assemble(&foot, xpp);
        let mut jac = CMatrix::zeros(k, k);
        let mut fv = vec![C::zero(); k];
        for (i, gen) in self.generators.iter().enumerate() {
            let grad = gen.gradient(&x)?;
            fv[i] = gen.try_value(&x)?;
            for j in 0..k {
                jac[(i, j)] = grad[j];
            }
        }
        let step = jac.solve(&fv).ok_or_else(|| Error::DegenerateChart(format!("generator Jacobian in x′ is singular at {:?}", x)))?;
        let g = foot.iter().zip(&step).map(|(a, s)| creal(*a) - *s).collect();
        Ok(GraphPoint { foot, d, g })
    }
}

/// Graph form `x′ = g(x″)` of an asymptotic submanifold with dissipation `d(x″)`.
#[derive(Clone)]
pub struct GraphPresentation<T> {
    inner: Arc<GraphInner<T>>,
    reduced: Dissipation<T>,
    graph: VectorField<T>,
    foot_map: VectorField<T>,
}

impl<T: std::fmt::Debug> std::fmt::Debug for GraphPresentation<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GraphPresentation").field("k", &self.inner.k).field("dissipation", &self.inner.d).finish()
    }
}

impl<T: Real> GraphPresentation<T> {
    /// Number of graph coordinates `x′` (the leading ones).
    pub fn k(&self) -> usize {
        self.inner.k
    }

    pub fn n(&self) -> usize {
        self.inner.d.dim()
    }

    pub fn reduced_dissipation(&self) -> &Dissipation<T> {
        &self.reduced
    }

    pub fn graph_map(&self) -> &VectorField<T> {
        &self.graph
    }

    pub fn foot_map(&self) -> &VectorField<T> {
        &self.foot_map
    }

    /// Foot, reduced dissipation and graph value at `x″` in one solve.
    pub fn point(&self, xpp: &[T]) -> Result<GraphPoint<T>> {
        if xpp.len() != self.n() - self.k() {
            return Err(Error::InvalidInput("x″ has the wrong dimension".into()));
        }
        self.inner.point(xpp)
    }

    /// `d(x″) + Σ|x_j − g_j(x″)|²`.
    pub fn reassembled(&self, x: &[T]) -> Result<T> {
        let k = self.k();
        let pt = self.point(&x[k..])?;
        Ok(pt.d + x[..k].iter().zip(&pt.g).map(|(a, g)| (creal(*a) - *g).norm_sqr()).sum::<T>())
    }

    /// Checks both presentation invariants on validation samples of the full space.
    pub fn validate(&self, samples: &[Vec<T>], floor: T) -> Result<GraphValidation<T>> {
        let k = self.k();
        let mut im_g_constant = T::zero();
        for x in samples {
            let pt = self.point(&x[k..])?;
            let im = pt.g.iter().fold(T::zero(), |m, g| m.max(g.im.abs()));
            if pt.d > T::zero() {
                im_g_constant = im_g_constant.max(im / pt.d.sqrt());
            } else if im > T::lit(1e-10) {
                im_g_constant = T::infinity();
            }
        }
        let d = &self.inner.d;
        let equivalence = equivalence_constants(|x| d.value(x), |x| self.reassembled(x), samples, floor, None)?;
        Ok(GraphValidation { im_g_constant, equivalence })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphValidation<T> {
    /// Fitted `c` in `|Im g| ≤ c·d^{1/2}`.
    pub im_g_constant: T,
    /// Constants between `D` and the reassembled dissipation.
    pub equivalence: Equivalence<T>,
}

/// Reduces `(D, f_1..f_k)` to graph form over the trailing `n − k` coordinates.
pub fn reduce_to_graph<T: Real>(d: &Dissipation<T>, generators: &[ScalarField<T>], x0: &[T]) -> Result<GraphPresentation<T>> {
    let n = d.dim();
    let k = generators.len();
    if k == 0 || k > n || x0.len() != n {
        return Err(Error::InvalidInput("need 1 ≤ k ≤ n generators and a base point in R^n".into()));
    }
    if generators.iter().any(|g| g.dim() != n) {
        return Err(Error::InvalidInput("generators must live on the same space as the dissipation".into()));
    }
    let d0 = d.value(x0)?;
    if d0 > T::lit(1e-10) {
        return Err(Error::InvalidInput(format!("base point is off the zero locus (D = {})", d0)));
    }
    let mut jac = CMatrix::zeros(k, k);
    for (i, g) in generators.iter().enumerate() {
        let grad = g.gradient(x0)?;
        for j in 0..k {
            jac[(i, j)] = grad[j];
        }
    }
    if jac.rcond() < T::lit(1e-12) {
        return Err(Error::DegenerateChart("∂f/∂x′ is singular at the base point".into()));
    }
    let (_, _, h) = d.real_jet(x0)?;
    let mut hp = vec![T::zero(); k * k];
    for i in 0..k {
        for j in 0..k {
            hp[i * k + j] = h[i * n + j];
        }
    }
    let scale = hp.iter().fold(T::one(), |m, v| m.max(v.abs()));
    if cholesky(&hp, k).is_none() || crate::linalg::min_eigenvalue_sym(&hp, k) <= T::lit(1e-6) * scale {
        return Err(Error::PositivityViolation("∂²D/∂x′∂x′ is not positive definite at the base point".into()));
    }
    let inner = Arc::new(GraphInner { d: d.clone(), generators: generators.to_vec(), k, seed: x0.to_vec() });
    let m = n - k;
    let rd_dom = BoxDomain { lo: d.domain().lo[k..].to_vec(), hi: d.domain().hi[k..].to_vec() };
    let i1 = inner.clone();
    let reduced = Dissipation::from_fn(rd_dom, move |x| i1.foot(x).map(|r| r.1).unwrap_or(T::nan()));
    let mut graph = Vec::with_capacity(k);
    let mut foot = Vec::with_capacity(k);
    for j in 0..k {
        let ig = inner.clone();
        graph.push(ScalarField::new(m, move |x| ig.point(x).map(|p| p.g[j]).unwrap_or(C::new(T::nan(), T::nan()))));
        let ifo = inner.clone();
        foot.push(ScalarField::real(m, move |x| ifo.foot(x).map(|p| p.0[j]).unwrap_or(T::nan())));
    }
    Ok(GraphPresentation { inner, reduced, graph: VectorField::new(graph)?, foot_map: VectorField::new(foot)? })
}

/// `φ(x″) = Φ(x′(x″), x″) + (g − x′)·Φ_{x′}` on the graph coordinates.
pub fn restrict_function<T: Real>(phi: &ScalarField<T>, gp: &GraphPresentation<T>) -> ScalarField<T> {
    let phi = phi.clone();
    let gp = gp.clone();
    let m = gp.n() - gp.k();
    ScalarField::new(m, move |xpp| {
        let eval = || -> Result<C<T>> {
            let pt = gp.point(xpp)?;
            let x: Vec<T> = pt.foot.iter().chain(xpp).copied().collect();
            let v = phi.try_value(&x)?;
            let grad = phi.gradient(&x)?;
            Ok(pt.g.iter().zip(&pt.foot).zip(&grad).fold(v, |acc, ((g, f), dp)| acc + (*g - creal(*f)) * *dp))
        };
        eval().unwrap_or(C::new(T::nan(), T::nan()))
    })
}

/// Result of [`project_parametric`].
#[derive(Clone)]
pub struct ParametricProjection<T> {
    pub dissipation: Dissipation<T>,
    pub foot: VectorField<T>,
    solver: Arc<ParametricSolver<T>>,
}

impl<T: Real> ParametricProjection<T> {
    /// `(α(x), D̃(x))`.
    pub fn solve(&self, x: &[T]) -> Result<(Vec<T>, T)> {
        self.solver.solve(x)
    }

    /// `D(x, α) = d(α) + Σ|x_i − X_i(α)|²` at an arbitrary `α`.
    pub fn joint(&self, x: &[T], alpha: &[T]) -> Result<T> {
        Ok(self.solver.jet(x, alpha)?.0)
    }
}

struct ParametricSolver<T> {
    embedding: VectorField<T>,
    d: Dissipation<T>,
    alpha0: Vec<T>,
}

impl<T: Real> ParametricSolver<T> {
    fn jet(&self, x: &[T], alpha: &[T]) -> Result<RealJet<T>> {
        let m = alpha.len();
        let (mut v, mut g, mut h) = self.d.real_jet(alpha)?;
        for (i, comp) in self.embedding.components().iter().enumerate() {
            let j: Jet<T> = comp.eval_jet(alpha)?;
            let r = creal(x[i]) - j.value;
            v = v + r.norm_sqr();
            for a in 0..m {
                g[a] = g[a] - T::lit(2.0) * (r.conj() * j.gradient[a]).re;
                for b in 0..m {
                    h[a * m + b] = h[a * m + b] + T::lit(2.0) * (j.gradient[a].conj() * j.gradient[b]).re
                        - T::lit(2.0) * (r.conj() * j.hessian[(a, b)]).re;
                }
            }
        }
        Ok((v, g, h))
    }

    fn solve(&self, x: &[T]) -> Result<(Vec<T>, T)> {
        let opts = NewtonOptions { require_pd: false, ..NewtonOptions::default() };
        let r = newton_minimize(|a: &[T]| self.jet(x, a), &self.alpha0, &opts)?;
        Ok((r.x, r.value.max(T::zero())))
    }
}

/// Dissipation `D̃(x) = min_α [d(α) + Σ|x_i − X_i(α)|²]` of a parametric embedding.
pub fn project_parametric<T: Real>(embedding: &VectorField<T>, d: &Dissipation<T>, alpha0: &[T]) -> Result<ParametricProjection<T>> {
    let m = embedding.dim();
    let n = embedding.codim();
    if d.dim() != m || alpha0.len() != m {
        return Err(Error::InvalidInput("parameter dimensions disagree".into()));
    }
    let jac = embedding.jacobian(alpha0)?;
    let mut gram = vec![T::zero(); m * m];
    for a in 0..m {
        for b in 0..m {
            gram[a * m + b] = (0..n).map(|i| (jac[(i, a)].conj() * jac[(i, b)]).re).sum();
        }
    }
    if cholesky(&gram, m).is_none() || crate::linalg::min_eigenvalue_sym(&gram, m) < T::lit(1e-12) {
        return Err(Error::DegenerateChart("embedding Jacobian has deficient rank at α0".into()));
    }
    let solver = Arc::new(ParametricSolver { embedding: embedding.clone(), d: d.clone(), alpha0: alpha0.to_vec() });
    let x0 = embedding.eval_real(alpha0)?;
    let r = (T::one() + x0.iter().fold(T::zero(), |a, v| a.max(v.abs()))) * T::lit(1e3);
    let dom = BoxDomain::around(&x0, r);
    let s1 = solver.clone();
    let dissipation = Dissipation::from_fn(dom, move |x| s1.solve(x).map(|r| r.1).unwrap_or(T::nan()));
    let mut foot = Vec::with_capacity(m);
    for a in 0..m {
        let s2 = solver.clone();
        foot.push(ScalarField::real(n, move |x| s2.solve(x).map(|r| r.0[a]).unwrap_or(T::nan())));
    }
    Ok(ParametricProjection { dissipation, foot: VectorField::new(foot)?, solver })
}

/// Convenience for tests and fixtures: `|f|` and `D` samples of a real closure pair.
pub fn fitted_constant<T: Real>(pairs: &[(T, T)], s: T) -> T {
    pairs.iter().filter(|p| p.1 > T::zero()).fold(T::zero(), |m, p| m.max(p.0 / p.1.powf(s)))
}

impl<T: Real> From<Dissipation<T>> for ScalarField<T> {
    fn from(d: Dissipation<T>) -> Self {
        d.field
    }
}
