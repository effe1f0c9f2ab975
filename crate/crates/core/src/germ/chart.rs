use super::zaction::{z_of, ZAction};
use super::IndexSet;
use crate::dissipation::{BoxDomain, Dissipation};
use crate::fields::{Jet, ScalarField, VectorField};
use crate::linalg::CMatrix;
use crate::minimize::{newton_minimize, NewtonOptions, RealJet};
use crate::transform::complex_stationary_value;
use crate::{cplx, creal, Error, Real, Result, C};
use num_traits::{One, Zero};
use std::fmt;
use std::sync::Arc;

/// Map from chart coordinates to the phase-space point of `Γ`'s neighbourhood it describes.
pub type FootFn<T> = Arc<dyn Fn(&[T]) -> Result<Vec<T>> + Send + Sync>;

/// Chart of a germ in the mixed coordinates `y = (q_I, p_Ī)`.
#[derive(Clone)]
pub struct IChart<T> {
    pub index: IndexSet,
    /// The I-phase `S_I(y)`.
    pub phase: ScalarField<T>,
    /// The chart dissipation `d_I(y)`.
    pub dissipation: Dissipation<T>,
    pub domain: BoxDomain<T>,
    pub sheet_id: usize,
    /// A point of `Γ` (in `(p, q)`) inside the chart.
    pub base: Vec<T>,
    foot: Option<FootFn<T>>,
}

impl<T: fmt::Debug> fmt::Debug for IChart<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IChart")
            .field("index", &self.index)
            .field("sheet_id", &self.sheet_id)
            .field("domain", &self.domain)
            .field("base", &self.base)
            .finish()
    }
}

impl<T: Real> IChart<T> {
    pub fn new(
        index: IndexSet,
        phase: ScalarField<T>,
        dissipation: Dissipation<T>,
        domain: BoxDomain<T>,
        sheet_id: usize,
        base: Vec<T>,
    ) -> Result<Self> {
        let n = index.n();
        if phase.dim() != n || dissipation.dim() != n || domain.dim() != n || base.len() != 2 * n {
            return Err(Error::InvalidInput("chart components have inconsistent dimensions".into()));
        }
        Ok(Self { index, phase, dissipation, domain, sheet_id, base, foot: None })
    }

    /// Attaches the argmin foot map `y ↦ (p, q)`.
    pub fn with_foot(mut self, foot: FootFn<T>) -> Self {
        self.foot = Some(foot);
        self
    }

    pub fn n(&self) -> usize {
        self.index.n()
    }

    /// `(P, Q)` generated by the phase: `P_I = ∂S/∂q_I`, `P_Ī = p_Ī`,
    /// `Q_I = q_I`, `Q_Ī = −∂S/∂p_Ī`.
    pub fn momenta_positions(&self, y: &[T]) -> Result<(Vec<C<T>>, Vec<C<T>>)> {
        let g = self.phase.gradient(y)?;
        let n = self.n();
        let mut p = vec![C::zero(); n];
        let mut q = vec![C::zero(); n];
        for j in 0..n {
            if self.index.contains(j) {
                p[j] = g[j];
                q[j] = creal(y[j]);
            } else {
                p[j] = creal(y[j]);
                q[j] = -g[j];
            }
        }
        Ok((p, q))
    }

    /// Phase-space point attached to `y` (the argmin foot when known,
    /// otherwise the real parts of `(P, Q)`).
    pub fn foot_point(&self, y: &[T]) -> Result<Vec<T>> {
        if let Some(f) = &self.foot {
            return f(y);
        }
        let (p, q) = self.momenta_positions(y)?;
        Ok(p.iter().chain(&q).map(|v| v.re).collect())
    }

    pub fn has_foot_map(&self) -> bool {
        self.foot.is_some()
    }

    /// The chart as a Lagrangian chart `(U, d, P, Q, W)` with `W = S_I + P_Ī·Q_Ī`.
    pub fn lagrangian_chart(&self) -> LagrangianChart<T> {
        let n = self.n();
        let mut pc = Vec::with_capacity(n);
        let mut qc = Vec::with_capacity(n);
        for j in 0..n {
            let ch = self.clone();
            pc.push(ScalarField::new(n, move |y| ch.momenta_positions(y).map(|r| r.0[j]).unwrap_or(C::new(T::nan(), T::nan()))));
            let ch = self.clone();
            qc.push(ScalarField::new(n, move |y| ch.momenta_positions(y).map(|r| r.1[j]).unwrap_or(C::new(T::nan(), T::nan()))));
        }
        let ch = self.clone();
        let w = ScalarField::new(n, move |y| {
            let eval = || -> Result<C<T>> {
                let s = ch.phase.try_value(y)?;
                let (p, q) = ch.momenta_positions(y)?;
                Ok(ch.index.complement().iter().fold(s, |acc, &j| acc + p[j] * q[j]))
            };
            eval().unwrap_or(C::new(T::nan(), T::nan()))
        });
        LagrangianChart {
            domain: self.domain.clone(),
            dissipation: self.dissipation.clone(),
            p: VectorField::new(pc).expect("components share dimension"),
            q: VectorField::new(qc).expect("components share dimension"),
            w,
        }
    }
}

/// Parametric chart `(U, d, P, Q, W)` with `dW = P dQ + O(d)`.
#[derive(Clone, Debug)]
pub struct LagrangianChart<T> {
    pub domain: BoxDomain<T>,
    pub dissipation: Dissipation<T>,
    pub p: VectorField<T>,
    pub q: VectorField<T>,
    pub w: ScalarField<T>,
}

/// Fitted constants of the Lagrangian chart conditions.
#[derive(Clone, Debug, PartialEq)]
pub struct LagrangianReport<T> {
    /// Smallest `|det|` of the `2n×m` rank minors at `Γ` samples.
    pub min_rank_measure: T,
    /// `|Im P|, |Im Q| ≤ c·d^{1/2}`.
    pub imaginary_pq_constant: T,
    /// `|Im W| ≤ c·d`.
    pub imaginary_w_constant: T,
    /// `|dW − P dQ| ≤ c·d`.
    pub differential_constant: T,
}

fn ratio<T: Real>(num: T, d: T, s: T, tol: T) -> T {
    if d > T::lit(1e-14) {
        num / d.powf(s)
    } else if num > tol {
        T::infinity()
    } else {
        T::zero()
    }
}

impl<T: Real> LagrangianChart<T> {
    pub fn dim(&self) -> usize {
        self.w.dim()
    }

    pub fn check(&self, samples: &[Vec<T>]) -> Result<LagrangianReport<T>> {
        let n = self.p.codim();
        let m = self.dim();
        let tol = T::lit(1e-9);
        let mut rep = LagrangianReport {
            min_rank_measure: T::infinity(),
            imaginary_pq_constant: T::zero(),
            imaginary_w_constant: T::zero(),
            differential_constant: T::zero(),
        };
        for a in samples {
            let d = self.dissipation.value(a)?;
            let p = self.p.eval(a)?;
            let q = self.q.eval(a)?;
            let w = self.w.try_value(a)?;
            let im = p.iter().chain(&q).fold(T::zero(), |acc, v| acc.max(v.im.abs()));
            rep.imaginary_pq_constant = rep.imaginary_pq_constant.max(ratio(im, d, T::lit(0.5), tol));
            rep.imaginary_w_constant = rep.imaginary_w_constant.max(ratio(w.im.abs(), d, T::one(), tol));
            let dq = self.q.jacobian(a)?;
            let dp = self.p.jacobian(a)?;
            let dw = self.w.gradient(a)?;
            let mut res = T::zero();
            for k in 0..m {
                let pdq = (0..n).fold(C::zero(), |acc, j| acc + p[j] * dq[(j, k)]);
                res = res + (dw[k] - pdq).norm_sqr();
            }
            rep.differential_constant = rep.differential_constant.max(ratio(res.sqrt(), d, T::one(), T::lit(1e-6)));
            if d <= T::lit(1e-12) && m == n {
                let mut best = T::zero();
                for set in IndexSet::all_subsets(n) {
                    let mat = CMatrix::from_fn(n, m, |i, k| if set.contains(i) { dq[(i, k)] } else { dp[(i, k)] });
                    best = best.max(mat.det().norm());
                }
                rep.min_rank_measure = rep.min_rank_measure.min(best);
            }
        }
        Ok(rep)
    }
}

struct ZChart<T> {
    za: ZAction<T>,
    sheet: usize,
    index: IndexSet,
    d: Dissipation<T>,
    seed: Vec<T>,
}

impl<T: Real> ZChart<T> {
    fn foot(&self, y: &[T]) -> Result<(Vec<T>, T)> {
        let n = self.index.n();
        let fib: Vec<usize> = (0..n).map(|j| if self.index.contains(j) { j } else { n + j }).collect();
        let objective = |w: &[T]| -> Result<RealJet<T>> {
            let x = self.index.join(y, w);
            let (v, g, h) = self.d.real_jet(&x)?;
            let gw = fib.iter().map(|&a| g[a]).collect();
            let mut hw = vec![T::zero(); n * n];
            for (r, &a) in fib.iter().enumerate() {
                for (c, &b) in fib.iter().enumerate() {
                    hw[r * n + c] = h[a * 2 * n + b];
                }
            }
            Ok((v, gw, hw))
        };
        let res = newton_minimize(objective, &self.seed, &NewtonOptions::default())?;
        let x = self.index.join(y, &res.x);
        let dv = self.d.value(&x)?;
        Ok((x, dv))
    }

    fn phase(&self, y: &[T]) -> Result<C<T>> {
        let n = self.index.n();
        let (x, _) = self.foot(y)?;
        let phi = self.za.phi(self.sheet, &x)?;
        let zj = self.za.zstar_jet(&x)?;
        let z = z_of(&x);
        let half = T::lit(0.5);
        let two_i_inv = cplx(T::zero(), T::lit(2.0)).inv();
        let four_i_inv = cplx(T::zero(), T::lit(4.0)).inv();
        let q: Vec<C<T>> = (0..n).map(|j| (zj.value[j] + z[j]) * half).collect();
        let p: Vec<C<T>> = (0..n).map(|j| (zj.value[j] - z[j]) * two_i_inv).collect();
        let dot = |a: &[C<T>], b: &[C<T>]| a.iter().zip(b).fold(C::zero(), |acc, (u, v)| acc + *u * *v);
        let mut w = phi + dot(&p, &q) * half - (dot(&p, &p) + dot(&q, &q)) * four_i_inv;
        for j in self.index.complement() {
            w = w - p[j] * q[j];
        }
        let lhs = CMatrix::from_fn(n, n, |a, b| if a == b { C::<T>::one() } else { C::<T>::zero() } - zj.dzbar[(a, b)]);
        let lhs_inv = lhs.inverse().ok_or_else(|| Error::DegenerateChart(format!("1 − ∂Z*/∂z̄ is singular at {:?}", x)))?;
        let m = &lhs_inv * &zj.dz;
        let a = CMatrix::from_fn(n, n, |r, c| (m[(r, c)] + if r == c { C::one() } else { C::zero() }) * half);
        let b = CMatrix::from_fn(n, n, |r, c| (m[(r, c)] - if r == c { C::one() } else { C::zero() }) * two_i_inv);
        let l = CMatrix::from_fn(n, n, |r, c| if self.index.contains(r) { b[(r, c)] } else { a[(r, c)] });
        let rr = CMatrix::from_fn(n, n, |r, c| if self.index.contains(r) { a[(r, c)] } else { -b[(r, c)] });
        let rinv = rr.inverse().ok_or_else(|| Error::DegenerateChart(format!("coordinates (q_I, p_Ī) are singular at {:?}", x)))?;
        let e = &l * &rinv;
        let mut s = w;
        let mut u = vec![C::zero(); n];
        for j in 0..n {
            if self.index.contains(j) {
                let du = creal(y[j]) - q[j];
                s = s + p[j] * du;
                u[j] = du;
            } else {
                let du = creal(y[j]) - p[j];
                s = s - q[j] * du;
                u[j] = -du;
            }
        }
        let eu = e.mul_vec(&u);
        Ok(s + dot(&u, &eu) * half)
    }
}

/// Builds the I-chart of a z-action: phase, dissipation and foot map over `domain`.
///
/// The foot `(p_I, q_Ī)` minimizes `D` for fixed `y` (Newton from `base`);
/// `S_I` is assembled from `Φ`, `Z*` and the tangent matrix `E_I` at the foot.
pub fn build_chart_from_zaction<T: Real>(
    za: &ZAction<T>,
    sheet_id: usize,
    index: &IndexSet,
    base: &[T],
    d: &Dissipation<T>,
    domain: BoxDomain<T>,
) -> Result<IChart<T>> {
    let n = za.n;
    if index.n() != n || base.len() != 2 * n || domain.dim() != n || d.dim() != 2 * n {
        return Err(Error::InvalidInput("chart construction inputs have inconsistent dimensions".into()));
    }
    za.sheet(sheet_id)?;
    let builder = Arc::new(ZChart { za: za.clone(), sheet: sheet_id, index: index.clone(), d: d.clone(), seed: index.fiber_coords(base) });
    // validate once at the base so construction errors surface eagerly
    let y0 = index.chart_coords(base);
    builder.phase(&y0)?;
    let b1 = builder.clone();
    let phase = ScalarField::new(n, move |y| b1.phase(y).unwrap_or(C::new(T::nan(), T::nan())));
    let b2 = builder.clone();
    let dissipation = Dissipation::from_fn(domain.clone(), move |y| b2.foot(y).map(|r| r.1).unwrap_or(T::nan()));
    let b3 = builder;
    let foot: FootFn<T> = Arc::new(move |y: &[T]| b3.foot(y).map(|r| r.0));
    Ok(IChart::new(index.clone(), phase, dissipation, domain, sheet_id, base.to_vec())?.with_foot(foot))
}

/// I-phase obtained from a pure `q`-phase `S(q)` by the complex Legendre
/// transform in `q_Ī`; `base_q` is a point of `Γ`'s projection.
pub fn transition_phase<T: Real>(phase: &ScalarField<T>, index: &IndexSet, base_q: &[T]) -> Result<ScalarField<T>> {
    let n = phase.dim();
    if index.n() != n || base_q.len() != n {
        return Err(Error::InvalidInput("transition inputs have inconsistent dimensions".into()));
    }
    if index.is_full() {
        return Ok(phase.clone());
    }
    let bar = index.complement();
    let k = bar.len();
    let jet = phase.eval_jet(base_q)?;
    let block = CMatrix::from_fn(k, k, |a, b| jet.hessian[(bar[a], bar[b])]);
    if block.rcond() < T::lit(1e-12) {
        return Err(Error::DegenerateChart("∂²S/∂q_Ī∂q_Ī is singular at the base point".into()));
    }
    // F(y; v) = S(q_I = y_I, q_Ī = v) − ⟨v, p_Ī⟩ over the joint space (y, v)
    let s = phase.clone();
    let idx = index.clone();
    let bar2 = bar.clone();
    let f = ScalarField::analytic(n + k, move |x: &[T]| {
        let (y, v) = x.split_at(n);
        let mut q: Vec<T> = (0..n).map(|j| if idx.contains(j) { y[j] } else { T::zero() }).collect();
        let mut pv = T::zero();
        for (a, &j) in bar2.iter().enumerate() {
            q[j] = v[a];
            pv = pv + v[a] * y[j];
        }
        // position of joint coordinate r in q, and the linear pairing term
        let slot = |r: usize| -> usize {
            if r < n {
                r
            } else {
                bar2[r - n]
            }
        };
        let in_q = |r: usize| r >= n || idx.contains(r);
        let js = match s.eval_jet(&q) {
            Ok(j) => j,
            Err(_) => {
                return Jet { value: C::new(T::nan(), T::nan()), gradient: vec![C::zero(); n + k], hessian: CMatrix::zeros(n + k, n + k) }
            }
        };
        let mut gradient = vec![C::zero(); n + k];
        let mut hessian = CMatrix::zeros(n + k, n + k);
        for r in 0..n + k {
            if in_q(r) {
                gradient[r] = js.gradient[slot(r)];
            }
        }
        for (a, &j) in bar2.iter().enumerate() {
            gradient[n + a] = gradient[n + a] - creal(y[j]);
            gradient[j] = gradient[j] - creal(v[a]);
        }
        for r in 0..n + k {
            for c in 0..n + k {
                if in_q(r) && in_q(c) {
                    hessian[(r, c)] = js.hessian[(slot(r), slot(c))];
                }
            }
        }
        for (a, &j) in bar2.iter().enumerate() {
            hessian[(n + a, j)] = hessian[(n + a, j)] - C::one();
            hessian[(j, n + a)] = hessian[(j, n + a)] - C::one();
        }
        Jet { value: js.value - creal(pv), gradient, hessian }
    });
    let y0: Vec<T> = (0..n).map(|j| if index.contains(j) { base_q[j] } else { jet.gradient[j].re }).collect();
    let v0: Vec<T> = bar.iter().map(|&j| base_q[j]).collect();
    let res = complex_stationary_value(&f, &y0, &v0, T::lit(2.0))?;
    Ok(res.reduced_phase)
}

/// Two-sided constants of `c·d_I ≤ Im S_I ≤ C·d_I`.
pub fn positivity_check<T: Real>(chart: &IChart<T>, samples: &[Vec<T>]) -> Result<(T, T)> {
    positivity_bounds(|y| chart.phase.try_value(y).map(|v| v.im), |y| chart.dissipation.value(y), samples)
}

/// Shared implementation: fits `c ≤ Im S / d ≤ C` on samples with `d` above a floor.
pub fn positivity_bounds<T: Real>(im_s: impl Fn(&[T]) -> Result<T>, d: impl Fn(&[T]) -> Result<T>, samples: &[Vec<T>]) -> Result<(T, T)> {
    let floor = T::lit(1e-14);
    let (mut lo, mut hi) = (T::infinity(), T::zero());
    let mut lo_at: Option<Vec<T>> = None;
    let mut used = 0;
    for y in samples {
        let dv = d(y)?;
        let sv = im_s(y)?;
        if dv <= floor {
            if sv.abs() > T::lit(1e-10) {
                return Err(Error::PositivityViolation(format!("Im S = {} where d vanishes, at {:?}", sv, y)));
            }
            continue;
        }
        used += 1;
        let r = sv / dv;
        if r < lo {
            lo = r;
            lo_at = Some(y.clone());
        }
        hi = hi.max(r);
    }
    if used == 0 {
        return Err(Error::InsufficientData("no samples with positive dissipation".into()));
    }
    if !(lo > T::zero()) {
        return Err(Error::PositivityViolation(format!("lower bound fails: Im S / d = {} at {:?}", lo, lo_at.unwrap_or_default())));
    }
    Ok((lo, hi))
}

/// How points of two charts are identified.
pub enum Identification<T> {
    /// Explicit map `α ↦ α̃`.
    Map(Arc<dyn Fn(&[T]) -> Vec<T> + Send + Sync>),
    /// Nearest point (in the real `(P, Q)` image) among the candidates.
    Nearest(Vec<Vec<T>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyReport<T> {
    pub matched: usize,
    /// Sample indices whose nearest-point match was ambiguous (excluded from fits).
    pub ambiguous: Vec<usize>,
    /// Bounds of `d̃/d` on matched samples off `Γ`.
    pub dissipation_ratio: (T, T),
    /// `|P − P̃| + |Q − Q̃| ≤ c·d^{1/2}`.
    pub pq_constant: T,
    /// The additive constant in `W̃ − W − ½⟨P + P̃, Q̃ − Q⟩`.
    pub w_constant: C<T>,
    /// Worst deviation from that constant.
    pub w_residual: T,
    /// `|(P̃ − P)dQ − (Q̃ − Q)dP| ≤ c·d` (explicit identifications only).
    pub form_constant: Option<T>,
}

/// Compares two Lagrangian charts over identified parameter samples.
pub fn consistency_check<T: Real>(
    r: &LagrangianChart<T>,
    rt: &LagrangianChart<T>,
    points: &[Vec<T>],
    identification: &Identification<T>,
) -> Result<ConsistencyReport<T>> {
    let overlap_tol = T::lit(1e-6);
    let image = |c: &LagrangianChart<T>, a: &[T]| -> Result<(Vec<C<T>>, Vec<C<T>>)> { Ok((c.p.eval(a)?, c.q.eval(a)?)) };
    let dist = |a: &(Vec<C<T>>, Vec<C<T>>), b: &(Vec<C<T>>, Vec<C<T>>)| -> T {
        a.0.iter().chain(&a.1).zip(b.0.iter().chain(&b.1)).map(|(u, v)| (u.re - v.re).powi(2)).sum::<T>().sqrt()
    };
    let mut pairs: Vec<(Vec<T>, Vec<T>)> = Vec::new();
    let mut ambiguous = Vec::new();
    match identification {
        Identification::Map(f) => {
            for a in points {
                pairs.push((a.clone(), f(a)));
            }
        }
        Identification::Nearest(cands) => {
            let images: Vec<_> = cands.iter().map(|c| image(rt, c)).collect::<Result<_>>()?;
            for (idx, a) in points.iter().enumerate() {
                let ia = image(r, a)?;
                let mut order: Vec<(T, usize)> = images.iter().enumerate().map(|(k, im)| (dist(&ia, im), k)).collect();
                order.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap_or(std::cmp::Ordering::Equal));
                let Some(&(best, k)) = order.first() else { continue };
                if best > overlap_tol {
                    continue;
                }
                let clash = order.iter().skip(1).any(|&(dv, k2)| {
                    dv <= best * T::lit(1.0 + 1e-6) + T::lit(1e-9)
                        && cands[k2].iter().zip(&cands[k]).map(|(u, v)| (*u - *v).powi(2)).sum::<T>().sqrt() > T::lit(1e-6)
                });
                if clash {
                    ambiguous.push(idx);
                } else {
                    pairs.push((a.clone(), cands[k].clone()));
                }
            }
        }
    }
    let mut rep = ConsistencyReport {
        matched: 0,
        ambiguous,
        dissipation_ratio: (T::infinity(), T::zero()),
        pq_constant: T::zero(),
        w_constant: C::zero(),
        w_residual: T::zero(),
        form_constant: None,
    };
    let mut offsets = Vec::new();
    let mut ds = Vec::new();
    for (a, at) in &pairs {
        if !r.domain.contains(a) || !rt.domain.contains(at) {
            continue;
        }
        let (ia, ib) = (image(r, a)?, image(rt, at)?);
        let d = r.dissipation.value(a)?;
        if d <= T::lit(1e-12) && dist(&ia, &ib) > overlap_tol {
            continue;
        }
        let dt = rt.dissipation.value(at)?;
        if d > T::lit(1e-12) && dt > T::lit(1e-12) {
            let q = dt / d;
            rep.dissipation_ratio = (rep.dissipation_ratio.0.min(q), rep.dissipation_ratio.1.max(q));
        }
        let diff = ia.0.iter().chain(&ia.1).zip(ib.0.iter().chain(&ib.1)).map(|(u, v)| (*u - *v).norm()).sum::<T>();
        rep.pq_constant = rep.pq_constant.max(ratio(diff, d, T::lit(0.5), T::lit(1e-9)));
        let half = T::lit(0.5);
        let cross =
            ia.0.iter()
                .zip(&ib.0)
                .zip(ia.1.iter().zip(&ib.1))
                .fold(C::zero(), |acc, ((p, pt), (q, qt))| acc + (*p + *pt) * (*qt - *q) * half);
        offsets.push(rt.w.try_value(at)? - r.w.try_value(a)? - cross);
        ds.push(d);
        rep.matched += 1;
    }
    if rep.matched == 0 {
        return Err(Error::InvalidInput("the charts have no overlapping matched points".into()));
    }
    // the constant is read off at the sample closest to Γ
    let k0 = ds.iter().enumerate().fold(0, |b, (k, d)| if *d < ds[b] { k } else { b });
    rep.w_constant = offsets[k0];
    rep.w_residual = offsets.iter().fold(T::zero(), |m, o| m.max((*o - rep.w_constant).norm()));
    if let Identification::Map(_) = identification {
        let n = r.p.codim();
        let m = r.dim();
        let mut worst = T::zero();
        for (a, at) in &pairs {
            let d = r.dissipation.value(a)?;
            let (ia, ib) = (image(r, a)?, image(rt, at)?);
            let dp = r.p.jacobian(a)?;
            let dq = r.q.jacobian(a)?;
            let mut res = T::zero();
            for k in 0..m {
                let mut acc = C::zero();
                for j in 0..n {
                    acc = acc + (ib.0[j] - ia.0[j]) * dq[(j, k)] - (ib.1[j] - ia.1[j]) * dp[(j, k)];
                }
                res = res + acc.norm_sqr();
            }
            worst = worst.max(ratio(res.sqrt(), d, T::one(), T::lit(1e-8)));
        }
        rep.form_constant = Some(worst);
    }
    Ok(rep)
}
