//! Complex stationary phase with a positive imaginary part, and positive
//! canonical transformations of germs.

use crate::dissipation::{BoxDomain, Dissipation};
use crate::fields::{DerivativeMode, Jet, ScalarField, VectorField};
use crate::germ::{build_chart_from_zaction, positivity_bounds, select_nonsingular_index, Germ, Sheet, ZAction};
use crate::linalg::CMatrix;
use crate::minimize::{newton_minimize, NewtonOptions, RealJet};
use crate::quantization::Cycle;
use crate::{cplx, creal, imag_unit, Error, Real, Result, C};
use num_traits::Zero;
use std::sync::Arc;

/// Seed of the `q` minimization as a function of `p`.
pub type SeedFn<T> = Arc<dyn Fn(&[T]) -> Vec<T> + Send + Sync>;

/// Knobs of [`complex_stationary_value_with`].
#[derive(Clone)]
pub struct StationaryOptions<T> {
    /// Weight of `‖F_q‖²` in the minimized functional.
    pub mu: T,
    /// Trust-region radius of the `q` minimization around the seed.
    pub radius: Option<T>,
    /// Seed for each `p` (default: the base `q0`).
    pub seed: Option<SeedFn<T>>,
}

impl<T: std::fmt::Debug> std::fmt::Debug for StationaryOptions<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StationaryOptions").field("mu", &self.mu).field("radius", &self.radius).field("seed", &self.seed.is_some()).finish()
    }
}

impl<T: Real> Default for StationaryOptions<T> {
    fn default() -> Self {
        Self { mu: T::lit(2.0), radius: None, seed: None }
    }
}

struct Kernel<T> {
    f: ScalarField<T>,
    np: usize,
    nq: usize,
    q0: Vec<T>,
    opts: StationaryOptions<T>,
}

impl<T: Real> Kernel<T> {
    fn jet(&self, p: &[T], q: &[T]) -> Result<Jet<T>> {
        let mut x = p.to_vec();
        x.extend_from_slice(q);
        self.f.eval_jet(&x)
    }

    /// `D_μ` and its `q`-gradient from one jet of `F`.
    fn d_and_grad(&self, jet: &Jet<T>) -> (T, Vec<T>) {
        let (np, nq, mu) = (self.np, self.nq, self.opts.mu);
        let fq: Vec<C<T>> = (0..nq).map(|i| jet.gradient[np + i]).collect();
        let norm2: T = fq.iter().map(|v| v.norm_sqr()).sum();
        let value = jet.value.im + mu * T::lit(0.5) * norm2;
        let grad = (0..nq)
            .map(|i| {
                let mut s = jet.gradient[np + i].im;
                for k in 0..nq {
                    s = s + mu * (jet.hessian[(np + i, np + k)].conj() * fq[k]).re;
                }
                s
            })
            .collect();
        (value, grad)
    }

    /// Jet of `q ↦ D_μ(p, q)`; the Hessian is a central difference of the exact gradient.
    fn d_jet(&self, p: &[T], q: &[T]) -> Result<RealJet<T>> {
        let nq = self.nq;
        let (value, grad) = self.d_and_grad(&self.jet(p, q)?);
        let step = T::epsilon().cbrt();
        let mut hess = vec![T::zero(); nq * nq];
        let mut y = q.to_vec();
        for j in 0..nq {
            let h = step * (T::one() + q[j].abs());
            y[j] = q[j] + h;
            let gp = self.d_and_grad(&self.jet(p, &y)?).1;
            y[j] = q[j] - h;
            let gm = self.d_and_grad(&self.jet(p, &y)?).1;
            y[j] = q[j];
            for i in 0..nq {
                hess[i * nq + j] = (gp[i] - gm[i]) / (h + h);
            }
        }
        for i in 0..nq {
            for j in 0..i {
                let m = (hess[i * nq + j] + hess[j * nq + i]) * T::lit(0.5);
                hess[i * nq + j] = m;
                hess[j * nq + i] = m;
            }
        }
        Ok((value, grad, hess))
    }

    fn foot(&self, p: &[T]) -> Result<(Vec<T>, T)> {
        let opts = NewtonOptions { radius: self.opts.radius, ..NewtonOptions::default() };
        let seed = self.opts.seed.as_ref().map_or_else(|| self.q0.clone(), |f| f(p));
        let r = newton_minimize(|q| self.d_jet(p, q), &seed, &opts).map_err(|e| match e {
            Error::PositivityViolation(m) => Error::PositivityViolation(format!("D_qq is indefinite at the foot: {}", m)),
            other => other,
        })?;
        Ok((r.x, r.value))
    }

    fn reduced(&self, p: &[T]) -> Result<C<T>> {
        let (q, _) = self.foot(p)?;
        let jet = self.jet(p, &q)?;
        let (np, nq) = (self.np, self.nq);
        let e = jet.hessian.select(&(np..np + nq).collect::<Vec<_>>(), &(np..np + nq).collect::<Vec<_>>());
        let fq: Vec<C<T>> = (0..nq).map(|i| jet.gradient[np + i]).collect();
        let sol = e.solve(&fq).ok_or_else(|| Error::DegenerateChart(format!("∂²F/∂q² is singular at the foot over {:?}", p)))?;
        let quad: C<T> = fq.iter().zip(&sol).map(|(a, b)| *a * *b).sum();
        Ok(jet.value - quad * T::lit(0.5))
    }
}

/// Output of the complex stationary-phase kernel.
#[derive(Clone)]
pub struct StationaryResult<T> {
    /// `q(p)`, the minimizer of `D_μ(p, ·)`.
    pub foot: VectorField<T>,
    /// `d(p) = D_μ(p, q(p))`.
    pub reduced_dissipation: Dissipation<T>,
    /// `F̃(p) = F − ½⟨F_q, F_qq⁻¹ F_q⟩` at `q = q(p)`.
    pub reduced_phase: ScalarField<T>,
    kernel: Arc<Kernel<T>>,
}

impl<T: std::fmt::Debug> std::fmt::Debug for StationaryResult<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StationaryResult").field("foot", &self.foot).finish_non_exhaustive()
    }
}

/// `E = ∂²F/∂q²` at the foot over `p` together with `E⁻¹ = A + iB`.
#[derive(Clone, Debug)]
pub struct AppendixMatrices<T> {
    pub e: CMatrix<T>,
    pub a: CMatrix<T>,
    pub b: CMatrix<T>,
}

impl<T: Real> AppendixMatrices<T> {
    /// Max deviation in `A·E₁ − B·E₂ = I` and `B·E₁ + A·E₂ = 0`.
    pub fn identity_residual(&self) -> T {
        let (e1, e2) = (self.e.re(), self.e.im());
        let n = self.e.rows();
        let r1 = &(&(&self.a * &e1) - &(&self.b * &e2)) - &CMatrix::identity(n);
        let r2 = &(&self.b * &e1) + &(&self.a * &e2);
        r1.max_abs().max(r2.max_abs())
    }
}

impl<T: Real> StationaryResult<T> {
    pub fn mu(&self) -> T {
        self.kernel.opts.mu
    }

    pub fn appendix_matrices(&self, p: &[T]) -> Result<AppendixMatrices<T>> {
        let (q, _) = self.kernel.foot(p)?;
        let jet = self.kernel.jet(p, &q)?;
        let (np, nq) = (self.kernel.np, self.kernel.nq);
        let idx: Vec<usize> = (np..np + nq).collect();
        let e = jet.hessian.select(&idx, &idx);
        let inv = e.inverse().ok_or_else(|| Error::DegenerateChart("∂²F/∂q² is singular".into()))?;
        Ok(AppendixMatrices { a: inv.re(), b: inv.im(), e })
    }
}

/// Stationary value of `F(p, q)` in `q` with the default weight `μ = 2`.
pub fn complex_stationary_value<T: Real>(f: &ScalarField<T>, p0: &[T], q0: &[T], mu: T) -> Result<StationaryResult<T>> {
    complex_stationary_value_with(f, p0, q0, StationaryOptions { mu, ..StationaryOptions::default() })
}

/// Complex stationary value of `F` on `R^{n_p} × R^{n_q}` near a real
/// critical point `(p0, q0)` with `Im F ≥ 0`.
///
/// The foot `q(p)` minimizes `D_μ = Im F + (μ/2)‖F_q‖²`; Newton is seeded
/// at `q0` unless a seed map is given.
pub fn complex_stationary_value_with<T: Real>(
    f: &ScalarField<T>,
    p0: &[T],
    q0: &[T],
    opts: StationaryOptions<T>,
) -> Result<StationaryResult<T>> {
    let (np, nq) = (p0.len(), q0.len());
    if f.dim() != np + nq || nq == 0 {
        return Err(Error::InvalidInput("F must live on R^{n_p} × R^{n_q} with n_q > 0".into()));
    }
    if !(opts.mu > T::zero()) {
        return Err(Error::InvalidInput("μ must be positive".into()));
    }
    let kernel = Arc::new(Kernel { f: f.clone(), np, nq, q0: q0.to_vec(), opts });
    let jet = kernel.jet(p0, q0)?;
    let idx: Vec<usize> = (np..np + nq).collect();
    let e = jet.hessian.select(&idx, &idx);
    let fq = (0..nq).fold(T::zero(), |m, i| m.max(jet.gradient[np + i].norm()));
    let tol = match f.mode() {
        DerivativeMode::Analytic => T::lit(1e-10),
        DerivativeMode::FiniteDifference { .. } => T::lit(1e-7),
    } * (T::one() + e.max_abs());
    if fq > tol {
        return Err(Error::InvalidInput(format!("F_q = {} at the base point is not stationary", fq)));
    }
    if jet.value.im < -T::lit(1e-12) {
        return Err(Error::InvalidInput("Im F is negative at the base point".into()));
    }
    if e.rcond() < T::lit(1e-12) {
        return Err(Error::DegenerateChart("∂²F/∂q² is singular at the base point".into()));
    }
    // fail fast at the base point
    kernel.foot(p0)?;
    let k1 = kernel.clone();
    let foot_components = (0..nq)
        .map(|i| {
            let k = k1.clone();
            ScalarField::new(np, move |p| k.foot(p).map_or(C::new(T::nan(), T::nan()), |r| creal(r.0[i])))
        })
        .collect();
    let foot = VectorField::new(foot_components)?;
    let k2 = kernel.clone();
    let reduced_dissipation = Dissipation::from_fn(BoxDomain::unbounded(np), move |p| k2.foot(p).map_or(T::nan(), |r| r.1));
    let k3 = kernel.clone();
    let reduced_phase = ScalarField::new(np, move |p| k3.reduced(p).unwrap_or(C::new(T::nan(), T::nan())));
    Ok(StationaryResult { foot, reduced_dissipation, reduced_phase, kernel })
}

/// Fitted `c ≤ Im F̃ / d ≤ C` over samples off `Γ`.
pub fn dissipativity_bounds<T: Real>(res: &StationaryResult<T>, samples: &[Vec<T>]) -> Result<(T, T)> {
    positivity_bounds(|p| res.reduced_phase.try_value(p).map(|v| v.im), |p| res.reduced_dissipation.value(p), samples)
}

/// Positive canonical transformation `(ξ, x) → (p, q)` given by a real
/// linear symplectic map: the germ `Λ` is its graph in `R^{4n}` with
/// coordinates `(p, q, ξ, x)` and form `dp∧dq − dξ∧dx`.
///
/// The built-in maps are harmonic flows, for which `z = e^{it}·conj(w)` on
/// `Γ_Λ` with `z = q − ip`, `w = x + iξ`, and the z-action is
/// `Ψ = e^{−it}⟨z, w⟩ / 2i`.
#[derive(Clone)]
pub struct CanonicalTransform<T> {
    pub n: usize,
    /// Flow time of the harmonic oscillator `H = (p² + q²)/2`.
    pub time: T,
    /// `(ξ, x) ↦ (p, q)`, row-major `2n × 2n`.
    pub forward: Vec<T>,
    pub inverse: Vec<T>,
    /// `δ = |(p, q) − G(ξ, x)|²` on `R^{4n}`.
    pub delta: Dissipation<T>,
    /// The z-action `Ψ` of `Λ`.
    pub psi: ScalarField<T>,
}

impl<T: std::fmt::Debug> std::fmt::Debug for CanonicalTransform<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CanonicalTransform").field("n", &self.n).field("time", &self.time).finish_non_exhaustive()
    }
}

fn flow_matrix<T: Real>(n: usize, t: T) -> Vec<T> {
    // p' = ξ cos t − x sin t, q' = x cos t + ξ sin t
    let (c, s) = (t.cos(), t.sin());
    let m = 2 * n;
    let mut g = vec![T::zero(); m * m];
    for j in 0..n {
        g[j * m + j] = c;
        g[j * m + n + j] = -s;
        g[(n + j) * m + j] = s;
        g[(n + j) * m + n + j] = c;
    }
    g
}

fn apply_matrix<T: Real>(g: &[T], x: &[T]) -> Vec<T> {
    let m = x.len();
    (0..m).map(|i| (0..m).map(|k| g[i * m + k] * x[k]).sum()).collect()
}

impl<T: Real> CanonicalTransform<T> {
    pub fn harmonic_flow(n: usize, time: T) -> Self {
        let m = 2 * n;
        let forward = flow_matrix(n, time);
        let inverse = flow_matrix(n, -time);
        // δ = |A X|² with A = [I, −G]
        let mut a = vec![T::zero(); m * 2 * m];
        for i in 0..m {
            a[i * 2 * m + i] = T::one();
            for k in 0..m {
                a[i * 2 * m + m + k] = -forward[i * m + k];
            }
        }
        let mut ata = vec![T::zero(); 4 * m * m];
        for r in 0..2 * m {
            for c in 0..2 * m {
                ata[r * 2 * m + c] = (0..m).map(|i| a[i * 2 * m + r] * a[i * 2 * m + c]).sum::<T>() * T::lit(2.0);
            }
        }
        let hess = CMatrix::from_real(2 * m, 2 * m, &ata);
        let delta_field = ScalarField::analytic(2 * m, move |x: &[T]| {
            let g: Vec<C<T>> = (0..2 * m).map(|r| creal((0..2 * m).map(|c| ata[r * 2 * m + c] * x[c]).sum())).collect();
            let v: T = x.iter().zip(&g).map(|(a, b)| *a * b.re).sum::<T>() * T::lit(0.5);
            Jet { value: creal(v), gradient: g, hessian: hess.clone() }
        });
        let delta = Dissipation::new(delta_field, BoxDomain::unbounded(2 * m)).expect("dimensions agree");
        let coef = C::from_polar(T::one(), -time) * cplx(T::zero(), T::lit(2.0)).inv();
        let i = imag_unit::<T>();
        let psi = ScalarField::analytic(2 * m, move |x: &[T]| {
            let (p, q, xi, xx) = (&x[..n], &x[n..m], &x[m..m + n], &x[m + n..]);
            let mut value = C::zero();
            let mut gradient = vec![C::zero(); 2 * m];
            let mut hessian = CMatrix::zeros(2 * m, 2 * m);
            for j in 0..n {
                let z = cplx(q[j], -p[j]);
                let w = cplx(xx[j], xi[j]);
                value = value + coef * z * w;
                gradient[j] = coef * (-i) * w;
                gradient[n + j] = coef * w;
                gradient[m + j] = coef * z * i;
                gradient[m + n + j] = coef * z;
                // ∂z/∂p = −i, ∂z/∂q = 1, ∂w/∂ξ = i, ∂w/∂x = 1
                let pairs = [(j, m + j, coef), (j, m + n + j, coef * (-i)), (n + j, m + j, coef * i), (n + j, m + n + j, coef)];
                for (r, c, v) in pairs {
                    hessian[(r, c)] = v;
                    hessian[(c, r)] = v;
                }
            }
            Jet { value, gradient, hessian }
        });
        Self { n, time, forward, inverse, delta, psi }
    }

    pub fn identity(n: usize) -> Self {
        Self::harmonic_flow(n, T::zero())
    }

    /// Harmonic flow for time `π/2`: `(p, q) = (−x, ξ)`.
    pub fn quarter_turn(n: usize) -> Self {
        Self::harmonic_flow(n, T::FRAC_PI_2())
    }

    /// `(p, q) = G(ξ, x)`.
    pub fn map_point(&self, xi_x: &[T]) -> Vec<T> {
        apply_matrix(&self.forward, xi_x)
    }

    pub fn map_back(&self, pq: &[T]) -> Vec<T> {
        apply_matrix(&self.inverse, pq)
    }

    /// `|det|` of the projections of `Γ_Λ` onto `(p, q)` and onto `(ξ, x)`.
    pub fn coordinate_witness(&self) -> (T, T) {
        let m = 2 * self.n;
        (CMatrix::from_real(m, m, &self.forward).det().norm(), T::one())
    }

    /// Generating phase `S₁(ξ, q)` of `Λ` with `x = ∂S₁/∂ξ`, `p = ∂S₁/∂q`;
    /// `None` when `Λ` does not project onto `(ξ, q)` (`cos t = 0`).
    pub fn generating_phase(&self) -> Option<ScalarField<T>> {
        let (c, s) = (self.time.cos(), self.time.sin());
        if c.abs() < T::lit(1e-8) {
            return None;
        }
        let n = self.n;
        Some(ScalarField::analytic(2 * n, move |v: &[T]| {
            let (xi, q) = (&v[..n], &v[n..]);
            let mut value = T::zero();
            let mut gradient = vec![C::zero(); 2 * n];
            let mut hessian = CMatrix::zeros(2 * n, 2 * n);
            for j in 0..n {
                value = value + (q[j] * xi[j] - T::lit(0.5) * (q[j] * q[j] + xi[j] * xi[j]) * s) / c;
                gradient[j] = creal((q[j] - xi[j] * s) / c);
                gradient[n + j] = creal((xi[j] - q[j] * s) / c);
                hessian[(j, j)] = creal(-s / c);
                hessian[(n + j, n + j)] = creal(-s / c);
                hessian[(j, n + j)] = creal(T::one() / c);
                hessian[(n + j, j)] = creal(T::one() / c);
            }
            Jet { value: creal(value), gradient, hessian }
        }))
    }
}

/// `g[D](p, q) = min over (ξ, x) of D(ξ, x) + δ(p, q, ξ, x)`, with the foot.
fn image_dissipation_at<T: Real>(g: &CanonicalTransform<T>, d: &Dissipation<T>, pq: &[T]) -> Result<(Vec<T>, T)> {
    let m = 2 * g.n;
    let seed = g.map_back(pq);
    let objective = |xs: &[T]| -> Result<RealJet<T>> {
        let (dv, dg, dh) = d.real_jet(xs)?;
        let mut joint = pq.to_vec();
        joint.extend_from_slice(xs);
        let (ev, eg, eh) = g.delta.real_jet(&joint)?;
        let grad = (0..m).map(|k| dg[k] + eg[m + k]).collect();
        let hess = (0..m * m).map(|r| dh[r] + eh[(m + r / m) * 2 * m + m + r % m]).collect();
        Ok((dv + ev, grad, hess))
    };
    let opts = NewtonOptions { require_pd: false, ..NewtonOptions::default() };
    let r = newton_minimize(objective, &seed, &opts)?;
    Ok((r.x, r.value.max(T::zero())))
}

fn image_box<T: Real>(g: &CanonicalTransform<T>, b: &BoxDomain<T>) -> BoxDomain<T> {
    if !b.is_bounded() {
        return BoxDomain::unbounded(b.dim());
    }
    let m = b.dim();
    let mut lo = vec![T::infinity(); m];
    let mut hi = vec![T::neg_infinity(); m];
    for corner in 0..(1usize << m) {
        let x: Vec<T> = (0..m).map(|k| if corner & (1 << k) != 0 { b.hi[k] } else { b.lo[k] }).collect();
        let y = g.map_point(&x);
        for k in 0..m {
            lo[k] = lo[k].min(y[k]);
            hi[k] = hi[k].max(y[k]);
        }
    }
    BoxDomain { lo, hi }
}

/// Composite `F = Φ + (i/4)|w|² + Ψ + (i/4)(|z|² + |w|²)` on `(p, q) × (ξ, x)`;
/// the quadratic terms make both factors real on their `Γ` so that `F` is
/// stationary in `(ξ, x)` there and `Im F ≥ 0`.
fn composite_phase<T: Real>(g: &CanonicalTransform<T>, phi: ScalarField<T>) -> ScalarField<T> {
    let n = g.n;
    let m = 2 * n;
    let psi = g.psi.clone();
    let quarter_i = cplx(T::zero(), T::lit(0.25));
    ScalarField::analytic(2 * m, move |x: &[T]| {
        let (pq, xs) = x.split_at(m);
        let nan = || Jet { value: C::new(T::nan(), T::nan()), gradient: vec![C::zero(); 2 * m], hessian: CMatrix::zeros(2 * m, 2 * m) };
        let (Ok(jp), Ok(js)) = (phi.eval_jet(xs), psi.eval_jet(x)) else { return nan() };
        let mut value = jp.value + js.value;
        let mut gradient = js.gradient.clone();
        let mut hessian = js.hessian.clone();
        for k in 0..m {
            gradient[m + k] = gradient[m + k] + jp.gradient[k];
            for l in 0..m {
                hessian[(m + k, m + l)] = hessian[(m + k, m + l)] + jp.hessian[(k, l)];
            }
        }
        // (i/4)|z|² on (p, q) and (i/2)|w|² on (ξ, x)
        for k in 0..m {
            value = value + quarter_i * pq[k] * pq[k] + quarter_i * T::lit(2.0) * xs[k] * xs[k];
            gradient[k] = gradient[k] + quarter_i * T::lit(2.0) * pq[k];
            gradient[m + k] = gradient[m + k] + quarter_i * T::lit(4.0) * xs[k];
            hessian[(k, k)] = hessian[(k, k)] + quarter_i * T::lit(2.0);
            hessian[(m + k, m + k)] = hessian[(m + k, m + k)] + quarter_i * T::lit(4.0);
        }
        Jet { value, gradient, hessian }
    })
}

fn sheet_base<T: Real>(gamma: &[Vec<T>], region: &BoxDomain<T>) -> Option<Vec<T>> {
    gamma
        .iter()
        .filter(|x| region.contains(x))
        .max_by(|a, b| region.margin(a).partial_cmp(&region.margin(b)).unwrap_or(std::cmp::Ordering::Equal))
        .cloned()
}

/// Image of the germ `L` (in `(ξ, x)`) under `g`, rebuilt from `g[D]` and `g[Φ]`.
///
/// Each sheet of `g[Φ]` is the stationary value of the composite phase over
/// `(ξ, x)` minus `(i/4)|z|²`; `Z*` is `2i ∂_z g[Φ]` on the first sheet
/// covering a point. Charts are rebuilt around the images of the original
/// chart bases with the index selected from the image tangent plane.
pub fn apply_canonical_transform<T: Real>(g: &CanonicalTransform<T>, germ: &Germ<T>) -> Result<Germ<T>> {
    let n = g.n;
    let m = 2 * n;
    if germ.n != n {
        return Err(Error::InvalidInput(format!("transform acts on n = {}, germ has n = {}", n, germ.n)));
    }
    let gd = {
        let g2 = g.clone();
        let d = germ.dissipation.clone();
        Dissipation::from_fn(image_box(g, germ.dissipation.domain()), move |pq| image_dissipation_at(&g2, &d, pq).map_or(T::nan(), |r| r.1))
    };
    let quarter_i = cplx(T::zero(), T::lit(0.25));
    let mut sheets = Vec::with_capacity(germ.zaction.sheets.len());
    for sheet in &germ.zaction.sheets {
        let base = sheet_base(&germ.gamma_samples, &sheet.region)
            .ok_or_else(|| Error::InvalidInput(format!("sheet {} contains no Γ sample", sheet.id)))?;
        let f = composite_phase(g, sheet.phi.clone());
        let g2 = g.clone();
        let seed: SeedFn<T> = Arc::new(move |pq: &[T]| g2.map_back(pq));
        let opts = StationaryOptions { seed: Some(seed), ..StationaryOptions::default() };
        let res = complex_stationary_value_with(&f, &g.map_point(&base), &base, opts)?;
        let reduced = res.reduced_phase;
        let phi = ScalarField::new(m, move |pq: &[T]| {
            let zz: T = pq.iter().map(|v| *v * *v).sum();
            reduced.value(pq) - quarter_i * zz
        });
        sheets.push(Sheet { id: sheet.id, phi, region: image_box(g, &sheet.region) });
    }
    let sheets_for_z = Arc::new(sheets.clone());
    let i = imag_unit::<T>();
    let zstar_components = (0..n)
        .map(|j| {
            let sh = sheets_for_z.clone();
            ScalarField::analytic(m, move |pq: &[T]| {
                let nan =
                    Jet { value: C::new(T::nan(), T::nan()), gradient: vec![C::new(T::nan(), T::nan()); m], hessian: CMatrix::zeros(m, m) };
                let Some(s) = sh.iter().find(|s| s.region.contains(pq)) else { return nan };
                let Ok(jet) = s.phi.eval_jet(pq) else { return nan };
                // Z*_j = 2i ∂_{z_j} Φ = i ∂_{q_j} Φ − ∂_{p_j} Φ; second derivatives of Z* are not provided
                let value = i * jet.gradient[n + j] - jet.gradient[j];
                let gradient = (0..m).map(|k| i * jet.hessian[(n + j, k)] - jet.hessian[(j, k)]).collect();
                Jet { value, gradient, hessian: CMatrix::zeros(m, m) }
            })
        })
        .collect();
    let zaction = ZAction::new(n, sheets, VectorField::new(zstar_components)?, germ.zaction.monodromy.clone())?;
    let gamma: Vec<Vec<T>> = germ.gamma_samples.iter().map(|x| g.map_point(x)).collect();
    let mut atlas = Vec::with_capacity(germ.atlas.len());
    for chart in &germ.atlas {
        let base = g.map_point(&chart.base);
        let y0 = chart.index.chart_coords(&chart.base);
        let lc = chart.lagrangian_chart();
        let (dp, dq) = (lc.p.jacobian(&y0)?, lc.q.jacobian(&y0)?);
        let image_tangent = |r: usize, k: usize| -> C<T> {
            (0..m)
                .map(|c| {
                    let t = if c < n { dp[(c, k)] } else { dq[(c - n, k)] };
                    t * g.forward[r * m + c]
                })
                .sum()
        };
        let dp2 = CMatrix::from_fn(n, n, &image_tangent);
        let dq2 = CMatrix::from_fn(n, n, |r, k| image_tangent(n + r, k));
        let index = select_nonsingular_index(&dp2, &dq2)?;
        let half = chart.domain.widths().into_iter().fold(T::infinity(), T::min) * T::lit(0.5);
        let domain = BoxDomain::around(&index.chart_coords(&base), half);
        atlas.push(build_chart_from_zaction(&zaction, chart.sheet_id, &index, &base, &gd, domain)?);
    }
    let cycles = germ
        .cycles
        .iter()
        .map(|c| Cycle::new(c.id, c.polyline.iter().map(|x| g.map_point(x)).collect(), c.lift_start_sheet))
        .collect::<Result<Vec<_>>>()?;
    Germ::new(gd, gamma, atlas, zaction, cycles)
}

/// Min-composition `δ₁₂(p, q, ξ, x) = min over (η, y) of δ₂(p, q, η, y) + δ₁(η, y, ξ, x)`
/// of two transforms applied in the order `g1` then `g2`.
pub fn compose_dissipation<T: Real>(g1: &CanonicalTransform<T>, g2: &CanonicalTransform<T>) -> Result<Dissipation<T>> {
    if g1.n != g2.n {
        return Err(Error::InvalidInput("transforms act on different dimensions".into()));
    }
    let m = 2 * g1.n;
    let (a, b) = (g1.clone(), g2.clone());
    Ok(Dissipation::from_fn(BoxDomain::unbounded(2 * m), move |x: &[T]| {
        let (pq, xs) = x.split_at(m);
        let objective = |eta: &[T]| -> Result<RealJet<T>> {
            let mut j2 = pq.to_vec();
            j2.extend_from_slice(eta);
            let mut j1 = eta.to_vec();
            j1.extend_from_slice(xs);
            let (v2, g2v, h2) = b.delta.real_jet(&j2)?;
            let (v1, g1v, h1) = a.delta.real_jet(&j1)?;
            let grad = (0..m).map(|k| g2v[m + k] + g1v[k]).collect();
            let hess = (0..m * m).map(|r| h2[(m + r / m) * 2 * m + m + r % m] + h1[(r / m) * 2 * m + r % m]).collect();
            Ok((v1 + v2, grad, hess))
        };
        newton_minimize(objective, &a.map_point(xs), &NewtonOptions::default()).map_or(T::nan(), |r| r.value)
    }))
}

/// Nonsingular-phase path: for `L` given by a momentum-chart phase `S(ξ)`
/// and `Λ` by its generating phase `S₁(ξ, q)`, the image phase is the
/// stationary value of `S₁(ξ, q) + S(ξ)` in `ξ`. `xi0` is a point of `Γ_L`'s
/// momentum projection with real `S′(ξ0)`.
pub fn transform_nonsingular_phase<T: Real>(g: &CanonicalTransform<T>, s: &ScalarField<T>, xi0: &[T]) -> Result<ScalarField<T>> {
    let n = g.n;
    if s.dim() != n || xi0.len() != n {
        return Err(Error::InvalidInput("phase and base must live on R^n".into()));
    }
    let s1 = g.generating_phase().ok_or_else(|| Error::DegenerateChart("the transform graph does not project onto (ξ, q)".into()))?;
    let js = s.eval_jet(xi0)?;
    // Γ point (ξ0, x0) with x0 = −∂S/∂ξ, and its image position q0
    let mut point = xi0.to_vec();
    point.extend(js.gradient.iter().map(|v| -v.re));
    let q0 = g.map_point(&point)[n..].to_vec();
    let (s1c, sc) = (s1.clone(), s.clone());
    // joint coordinates (q, ξ): q plays the parameter, ξ the stationary variable
    let f = ScalarField::analytic(2 * n, move |v: &[T]| {
        let (q, xi) = v.split_at(n);
        let mut a = xi.to_vec();
        a.extend_from_slice(q);
        let nan = || Jet { value: C::new(T::nan(), T::nan()), gradient: vec![C::zero(); 2 * n], hessian: CMatrix::zeros(2 * n, 2 * n) };
        let (Ok(j1), Ok(j0)) = (s1c.eval_jet(&a), sc.eval_jet(xi)) else { return nan() };
        // reorder S₁'s (ξ, q) jet to (q, ξ)
        let perm = |k: usize| if k < n { n + k } else { k - n };
        let mut gradient: Vec<C<T>> = (0..2 * n).map(|k| j1.gradient[perm(k)]).collect();
        let mut hessian = CMatrix::from_fn(2 * n, 2 * n, |r, c| j1.hessian[(perm(r), perm(c))]);
        for k in 0..n {
            gradient[n + k] = gradient[n + k] + j0.gradient[k];
            for l in 0..n {
                hessian[(n + k, n + l)] = hessian[(n + k, n + l)] + j0.hessian[(k, l)];
            }
        }
        Jet { value: j1.value + j0.value, gradient, hessian }
    });
    Ok(complex_stationary_value(&f, &q0, xi0, T::lit(2.0))?.reduced_phase)
}
