//! 1/h-pseudodifferential Hamiltonians on grids and the transport operator.
//!
//! Operator ordering: a symbol `H(p, q)` is quantized with the momentum
//! `p = −ih∂/∂q` acting *first* and multiplication by functions of `q`
//! acting second. For `H = c(q)·p^β` this means `Ĥψ = c(q)·(−ih∂)^β ψ`.
//! Spectra of differently ordered quantizations differ at order `h`.

use crate::canop::{
    chart_amplitude, chart_density, global_canop, local_canop, Amplitude, CanopOptions, Grid, Partition, VolumeForm, WaveFunction,
};
use crate::dissipation::{membership_from_values, Dissipation, MembershipOptions};
use crate::fields::{Jet, ScalarField, VectorField};
use crate::germ::{Germ, IChart};
use crate::linalg::CMatrix;
use crate::{cplx, creal, imag_unit, Error, Real, Result, C};
use num_complex::Complex;
use num_traits::{One, Zero};
use rayon::prelude::*;
use rustfft::FftPlanner;

/// Term `c(q)·p^β` of a symbol polynomial in the momenta.
#[derive(Clone, Debug)]
pub struct PolyTerm<T> {
    pub power: Vec<u32>,
    /// Coefficient on `R^n_q`.
    pub coefficient: ScalarField<T>,
}

/// Term `f(q)·g(p)` of a separable symbol.
#[derive(Clone, Debug)]
pub struct SeparableTerm<T> {
    pub position: ScalarField<T>,
    pub momentum: ScalarField<T>,
}

#[derive(Clone, Debug)]
pub enum SymbolStructure<T> {
    Polynomial(Vec<PolyTerm<T>>),
    Separable(Vec<SeparableTerm<T>>),
    /// Known only pointwise; cannot be applied to grid functions.
    General,
}

/// Real Hamiltonian symbol `H(p, q)` on `R^{2n}` (coordinates `(p, q)`).
#[derive(Clone, Debug)]
pub struct HamiltonianSymbol<T> {
    pub n: usize,
    pub field: ScalarField<T>,
    pub growth_order: u32,
    pub structure: SymbolStructure<T>,
}

fn monomial(p: &[f64], power: &[u32], d: &[usize]) -> f64 {
    let mut v = 1.0;
    for (j, (&x, &b)) in p.iter().zip(power).enumerate() {
        let k = d.iter().filter(|&&i| i == j).count() as u32;
        if k > b {
            return 0.0;
        }
        let fall: f64 = (0..k).map(|i| (b - i) as f64).product();
        v *= fall * x.powi((b - k) as i32);
    }
    v
}

impl<T: Real> HamiltonianSymbol<T> {
    /// `H = Σ c_β(q) p^β` with analytic derivatives in `p` and the
    /// coefficients' own derivatives in `q`.
    pub fn polynomial(n: usize, terms: Vec<PolyTerm<T>>, growth_order: u32) -> Result<Self> {
        if n == 0 || terms.iter().any(|t| t.power.len() != n || t.coefficient.dim() != n) {
            return Err(Error::InvalidInput("polynomial terms must have n powers and coefficients on R^n".into()));
        }
        let tt = terms.clone();
        let field = ScalarField::analytic(2 * n, move |x: &[T]| {
            let (p, q) = x.split_at(n);
            let pf: Vec<f64> = p.iter().map(|v| v.to_f64_lossy()).collect();
            let mut jet = Jet::constant(2 * n, C::zero());
            for t in &tt {
                let cj = match t.coefficient.eval_jet(q) {
                    Ok(j) => j,
                    Err(_) => return Jet::constant(2 * n, C::new(T::nan(), T::nan())),
                };
                let m = |d: &[usize]| T::lit(monomial(&pf, &t.power, d));
                jet.value = jet.value + cj.value * m(&[]);
                for j in 0..n {
                    jet.gradient[j] = jet.gradient[j] + cj.value * m(&[j]);
                    jet.gradient[n + j] = jet.gradient[n + j] + cj.gradient[j] * m(&[]);
                    for k in 0..n {
                        jet.hessian[(j, k)] = jet.hessian[(j, k)] + cj.value * m(&[j, k]);
                        let mixed = cj.gradient[k] * m(&[j]);
                        jet.hessian[(j, n + k)] = jet.hessian[(j, n + k)] + mixed;
                        jet.hessian[(n + k, j)] = jet.hessian[(n + k, j)] + mixed;
                        jet.hessian[(n + j, n + k)] = jet.hessian[(n + j, n + k)] + cj.hessian[(j, k)] * m(&[]);
                    }
                }
            }
            jet
        });
        Ok(Self { n, field, growth_order, structure: SymbolStructure::Polynomial(terms) })
    }

    /// `H = Σ f_i(q) g_i(p)`, applied spectrally.
    pub fn separable(n: usize, terms: Vec<SeparableTerm<T>>, growth_order: u32) -> Result<Self> {
        if n == 0 || terms.iter().any(|t| t.position.dim() != n || t.momentum.dim() != n) {
            return Err(Error::InvalidInput("separable factors must live on R^n".into()));
        }
        let tt = terms.clone();
        let field = ScalarField::new(2 * n, move |x: &[T]| {
            let (p, q) = x.split_at(n);
            tt.iter().fold(C::zero(), |acc, t| acc + t.position.value(q) * t.momentum.value(p))
        });
        Ok(Self { n, field, growth_order, structure: SymbolStructure::Separable(terms) })
    }

    /// Symbol known only through its values; usable for transport but not for
    /// grid application.
    pub fn general(n: usize, field: ScalarField<T>, growth_order: u32) -> Result<Self> {
        if field.dim() != 2 * n {
            return Err(Error::InvalidInput("symbol must live on R^{2n}".into()));
        }
        Ok(Self { n, field, growth_order, structure: SymbolStructure::General })
    }

    /// `(p² + q²)/2 − E` summed over coordinates.
    pub fn harmonic(n: usize, energy: T) -> Result<Self> {
        let mut terms = Vec::new();
        for j in 0..n {
            let mut power = vec![0; n];
            power[j] = 2;
            terms.push(PolyTerm { power, coefficient: ScalarField::constant(n, creal(T::lit(0.5))) });
        }
        let quad = ScalarField::analytic(n, move |q: &[T]| {
            let v = q.iter().map(|x| *x * *x).sum::<T>() * T::lit(0.5) - energy;
            Jet { value: creal(v), gradient: q.iter().map(|x| creal(*x)).collect(), hessian: CMatrix::identity(n) }
        });
        terms.push(PolyTerm { power: vec![0; n], coefficient: quad });
        Self::polynomial(n, terms, 2)
    }

    pub fn value(&self, x: &[T]) -> Result<T> {
        Ok(self.field.try_value(x)?.re)
    }

    /// Hamiltonian vector field `(ṗ, q̇) = (−∂H/∂q, ∂H/∂p)` at a real point.
    pub fn velocity(&self, x: &[T]) -> Result<Vec<T>> {
        let g = self.field.gradient(x)?;
        let n = self.n;
        Ok((0..2 * n).map(|k| if k < n { -g[n + k].re } else { g[k - n].re }).collect())
    }

    /// Sampled symbol estimate: the largest `|∂^k H|/(1 + |x|)^m`, `k ≤ 2`, over
    /// points at radii `1 … radius`. Fails when that ratio keeps growing
    /// outward (more than tenfold between the inner and outer halves).
    pub fn check_growth(&self, radius: T, samples: usize) -> Result<T> {
        let dim = 2 * self.n;
        let samples = samples.max(8);
        let m = T::of(self.growth_order as usize);
        let mut inner = T::zero();
        let mut outer = T::zero();
        for s in 0..samples {
            let frac = T::of(s) / T::of(samples - 1);
            let r = radius.max(T::one()).powf(frac);
            // deterministic direction sweep
            let dir: Vec<T> = (0..dim).map(|k| (T::lit(1.3) * T::of(s + 1) * T::of(k + 1)).sin() + T::lit(0.1)).collect();
            let nrm = dir.iter().map(|v| *v * *v).sum::<T>().sqrt();
            let x: Vec<T> = dir.iter().map(|v| *v * r / nrm).collect();
            let j = self.field.eval_jet(&x)?;
            let size = j.gradient.iter().map(|g| g.norm()).fold(j.value.norm(), T::max).max(j.hessian.max_abs());
            let ratio = size / (T::one() + r).powf(m);
            if frac <= T::lit(0.5) {
                inner = inner.max(ratio);
            } else {
                outer = outer.max(ratio);
            }
        }
        if outer > T::lit(10.0) * inner.max(T::epsilon()) {
            return Err(Error::InvalidInput(format!(
                "symbol derivatives outgrow (1+|x|)^{} (inner bound {}, outer {})",
                self.growth_order, inner, outer
            )));
        }
        Ok(inner.max(outer))
    }
}

/// How [`apply_hamiltonian`] discretizes the momenta.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ApplyMethod {
    /// Finite differences for polynomial symbols, Fourier multipliers for separable ones.
    Auto,
    FiniteDifference,
    /// Discrete Fourier multiplier on the periodic extension of the grid.
    Spectral,
}

#[derive(Clone, Copy, Debug)]
pub struct ApplyOptions {
    pub method: ApplyMethod,
    /// Accuracy order of the centred difference stencils (even).
    pub fd_order: usize,
}

impl Default for ApplyOptions {
    fn default() -> Self {
        Self { method: ApplyMethod::Auto, fd_order: 8 }
    }
}

/// Centred finite-difference weights for the `order`-th derivative on the
/// integer offsets `−r..=r` (Fornberg's recursion).
pub fn fd_weights(order: usize, radius: usize) -> Vec<f64> {
    let xs: Vec<f64> = (-(radius as i64)..=radius as i64).map(|v| v as f64).collect();
    let np = xs.len();
    let mut c = vec![vec![0.0; order + 1]; np];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0];
    for i in 1..np {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i];
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|row| row[order]).collect()
}

fn strides(counts: &[usize]) -> Vec<usize> {
    let mut s = vec![1; counts.len()];
    for j in (0..counts.len().saturating_sub(1)).rev() {
        s[j] = s[j + 1] * counts[j + 1];
    }
    s
}

/// `order`-th derivative along `axis`, values outside the grid taken as zero.
fn fd_axis<T: Real>(v: &[C<T>], grid: &Grid<T>, axis: usize, order: usize, accuracy: usize) -> Vec<C<T>> {
    if order == 0 {
        return v.to_vec();
    }
    let npts = 2 * order.div_ceil(2) - 1 + accuracy;
    let r = npts / 2;
    let w: Vec<T> = fd_weights(order, r).into_iter().map(T::lit).collect();
    let scale = grid.spacing[axis].powi(order as i32);
    let st = strides(&grid.counts)[axis];
    let cnt = grid.counts[axis] as i64;
    (0..v.len())
        .into_par_iter()
        .map(|idx| {
            let pos = ((idx / st) % grid.counts[axis]) as i64;
            let mut acc = C::zero();
            for (k, wk) in w.iter().enumerate() {
                let off = k as i64 - r as i64;
                let t = pos + off;
                if t >= 0 && t < cnt {
                    acc = acc + v[(idx as i64 + off * st as i64) as usize] * *wk;
                }
            }
            acc / scale
        })
        .collect()
}

fn fft_axis(v: &mut [Complex<f64>], counts: &[usize], axis: usize, inverse: bool) {
    let n = counts[axis];
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    let st = strides(counts)[axis];
    let total = v.len();
    let mut line = vec![Complex::new(0.0, 0.0); n];
    for base in 0..total {
        if !(base / st).is_multiple_of(n) {
            continue;
        }
        for k in 0..n {
            line[k] = v[base + k * st];
        }
        fft.process(&mut line);
        let norm = if inverse { 1.0 / n as f64 } else { 1.0 };
        for k in 0..n {
            v[base + k * st] = line[k] * norm;
        }
    }
}

/// Applies the Fourier multiplier `g(p)` with `p = h·ξ` on the periodic
/// extension of the grid (period `counts·spacing`).
fn spectral_multiplier<T: Real>(v: &[C<T>], grid: &Grid<T>, h: T, g: &(dyn Fn(&[T]) -> C<T> + Sync)) -> Vec<C<T>> {
    let mut w: Vec<Complex<f64>> = v.iter().map(|c| Complex::new(c.re.to_f64_lossy(), c.im.to_f64_lossy())).collect();
    for axis in 0..grid.dim() {
        fft_axis(&mut w, &grid.counts, axis, false);
    }
    let st = strides(&grid.counts);
    let freq = |axis: usize, k: usize| -> T {
        let n = grid.counts[axis];
        let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        T::lit(2.0 * std::f64::consts::PI * kk / (n as f64 * grid.spacing[axis].to_f64_lossy())) * h
    };
    w.par_iter_mut().enumerate().for_each(|(idx, val)| {
        let p: Vec<T> = (0..grid.dim()).map(|a| freq(a, (idx / st[a]) % grid.counts[a])).collect();
        let m = g(&p);
        *val *= Complex::new(m.re.to_f64_lossy(), m.im.to_f64_lossy());
    });
    for axis in 0..grid.dim() {
        fft_axis(&mut w, &grid.counts, axis, true);
    }
    w.into_iter().map(|c| cplx(T::lit(c.re), T::lit(c.im))).collect()
}

fn multiply<T: Real>(v: &[C<T>], grid: &Grid<T>, f: &ScalarField<T>) -> Vec<C<T>> {
    v.par_iter().enumerate().map(|(i, x)| *x * f.value(&grid.point(i))).collect()
}

/// `(−ih∂)^β ψ` by finite differences or spectrally.
fn momentum_power<T: Real>(v: &[C<T>], grid: &Grid<T>, h: T, power: &[u32], spectral: bool, accuracy: usize) -> Vec<C<T>> {
    let total: u32 = power.iter().sum();
    if spectral {
        let pw = power.to_vec();
        return spectral_multiplier(v, grid, h, &move |p: &[T]| creal(p.iter().zip(&pw).fold(T::one(), |a, (x, b)| a * x.powi(*b as i32))));
    }
    let mut out = v.to_vec();
    for (axis, &b) in power.iter().enumerate() {
        out = fd_axis(&out, grid, axis, b as usize, accuracy);
    }
    let factor = (-imag_unit::<T>() * h).powi(total as i32);
    out.into_iter().map(|x| x * factor).collect()
}

fn check_symbol_grid<T: Real>(sym: &HamiltonianSymbol<T>, psi: &WaveFunction<T>) -> Result<()> {
    if psi.grid.dim() != sym.n {
        return Err(Error::InvalidInput("grid dimension differs from the symbol's".into()));
    }
    Ok(())
}

fn apply_impl<T: Real>(
    sym: &HamiltonianSymbol<T>,
    psi: &WaveFunction<T>,
    opts: &ApplyOptions,
    symmetrize: bool,
) -> Result<WaveFunction<T>> {
    check_symbol_grid(sym, psi)?;
    if opts.fd_order == 0 || !opts.fd_order.is_multiple_of(2) {
        return Err(Error::InvalidInput("finite-difference accuracy order must be even and positive".into()));
    }
    let (grid, h, v) = (&psi.grid, psi.h, &psi.samples);
    let mut out: Vec<C<T>> = vec![C::zero(); v.len()];
    let mut accumulate = |w: Vec<C<T>>, s: T| {
        for (o, x) in out.iter_mut().zip(w) {
            *o = *o + x * s;
        }
    };
    let half = T::lit(0.5);
    match &sym.structure {
        SymbolStructure::Polynomial(terms) => {
            let spectral = opts.method == ApplyMethod::Spectral;
            for t in terms {
                let pv = momentum_power(v, grid, h, &t.power, spectral, opts.fd_order);
                if symmetrize {
                    accumulate(multiply(&pv, grid, &t.coefficient), half);
                    let cv = multiply(v, grid, &t.coefficient);
                    accumulate(momentum_power(&cv, grid, h, &t.power, spectral, opts.fd_order), half);
                } else {
                    accumulate(multiply(&pv, grid, &t.coefficient), T::one());
                }
            }
        }
        SymbolStructure::Separable(terms) => {
            if opts.method == ApplyMethod::FiniteDifference {
                return Err(Error::UnsupportedSymbol("separable symbols are applied spectrally".into()));
            }
            for t in terms {
                let g = t.momentum.clone();
                let mult = move |p: &[T]| g.value(p);
                let gv = spectral_multiplier(v, grid, h, &mult);
                if symmetrize {
                    accumulate(multiply(&gv, grid, &t.position), half);
                    let fv = multiply(v, grid, &t.position);
                    accumulate(spectral_multiplier(&fv, grid, h, &mult), half);
                } else {
                    accumulate(multiply(&gv, grid, &t.position), T::one());
                }
            }
        }
        SymbolStructure::General => {
            return Err(Error::UnsupportedSymbol("symbol is neither polynomial in p nor separable".into()));
        }
    }
    if out.iter().any(|x| !(x.re.is_finite() && x.im.is_finite())) {
        return Err(Error::NumericalFailure("symbol coefficients are not finite on the grid".into()));
    }
    WaveFunction::new(grid.clone(), out, h)
}

/// `Ĥψ` with momenta applied before multiplication (see the module docs).
pub fn apply_hamiltonian<T: Real>(sym: &HamiltonianSymbol<T>, psi: &WaveFunction<T>, opts: &ApplyOptions) -> Result<WaveFunction<T>> {
    apply_impl(sym, psi, opts, false)
}

/// Average of both orderings, `½(c·P^β + P^β·c)`; symmetric for real symbols.
pub fn apply_hamiltonian_symmetrized<T: Real>(
    sym: &HamiltonianSymbol<T>,
    psi: &WaveFunction<T>,
    opts: &ApplyOptions,
) -> Result<WaveFunction<T>> {
    apply_impl(sym, psi, opts, true)
}

/// Complex point `(P(y), Q(y))` of a chart and its real foot.
fn chart_points<T: Real>(chart: &IChart<T>, y: &[T]) -> Result<(Vec<C<T>>, Vec<T>)> {
    let (p, q) = chart.momenta_positions(y)?;
    let foot = chart.foot_point(y)?;
    Ok((p.into_iter().chain(q).collect(), foot))
}

/// `H(x₀) + (x − x₀)·∇H(x₀)` at the complex chart point `x` with foot `x₀`.
fn taylor_value<T: Real>(jet: &Jet<T>, x: &[C<T>], foot: &[T]) -> C<T> {
    x.iter().zip(foot).zip(&jet.gradient).fold(jet.value, |acc, ((z, f), g)| acc + (*z - creal(*f)) * *g)
}

/// Restriction `i*H` of the symbol to the germ, in the chart coordinates.
pub fn restrict_to_chart<T: Real>(sym: &HamiltonianSymbol<T>, chart: &IChart<T>) -> ScalarField<T> {
    let (s, c) = (sym.clone(), chart.clone());
    ScalarField::new(chart.n(), move |y: &[T]| {
        let eval = || -> Result<C<T>> {
            let (x, foot) = chart_points(&c, y)?;
            Ok(taylor_value(&s.field.eval_jet(&foot)?, &x, &foot))
        };
        eval().unwrap_or(C::new(T::nan(), T::nan()))
    })
}

/// Norms entering the commutation identity `ĤKφ = K[(i*H)φ]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CommutationResidual<T> {
    /// `‖ĤKφ − K[(i*H)φ]‖₀`.
    pub gap: T,
    /// `‖ĤKφ‖₀`.
    pub raw: T,
    /// `‖Kφ‖₀`.
    pub canop_norm: T,
}

#[allow(clippy::too_many_arguments)]
pub fn commutation_residual<T: Real>(
    sym: &HamiltonianSymbol<T>,
    germ: &Germ<T>,
    form: &VolumeForm<T>,
    phi: &ScalarField<T>,
    partition: &Partition<T>,
    h: T,
    grid: &Grid<T>,
    canop: &CanopOptions<T>,
    apply: &ApplyOptions,
) -> Result<CommutationResidual<T>> {
    if sym.n != germ.n {
        return Err(Error::InvalidInput("symbol and germ dimensions differ".into()));
    }
    let psi = global_canop(germ, form, phi, partition, h, grid, canop)?;
    let hpsi = apply_hamiltonian(sym, &psi, apply)?;
    let local_opts = CanopOptions { cutoff_margin: T::zero(), ..canop.clone() };
    let mut rhs = WaveFunction::zeros(grid.clone(), h)?;
    for (id, chart) in germ.atlas.iter().enumerate() {
        let amp = chart_amplitude(germ, partition, phi, id)?;
        let restricted = restrict_to_chart(sym, chart);
        let base = amp.phi.clone();
        let prod = ScalarField::new(chart.n(), move |y: &[T]| {
            let v = base.value(y);
            if v == C::zero() {
                v
            } else {
                v * restricted.value(y)
            }
        });
        let amp = Amplitude::new(id, prod, amp.support.clone(), chart)?;
        rhs = rhs.add(&local_canop(chart, &chart_density(form, chart, germ)?, &amp, h, grid, &local_opts)?)?;
    }
    Ok(CommutationResidual { gap: hpsi.sub(&rhs)?.l2_norm(), raw: hpsi.l2_norm(), canop_norm: psi.l2_norm() })
}

fn divergence_at<T: Real>(x: &VectorField<T>, frame: &[ScalarField<T>], k: usize, pt: &[T]) -> Result<C<T>> {
    let m = pt.len();
    let comps = |y: &[T]| -> Result<Vec<C<T>>> {
        let v = x.eval(y)?;
        frame.iter().map(|f| Ok(f.gradient(y)?.iter().zip(&v).fold(C::zero(), |a, (g, w)| a + *g * *w))).collect()
    };
    let jac = CMatrix::from_fn(m, m, |i, j| frame[i].gradient(pt).map(|g| g[j]).unwrap_or(C::new(T::nan(), T::nan())));
    let inv = jac.inverse().ok_or_else(|| Error::DegenerateChart("generators and coordinates do not form a frame".into()))?;
    let step = T::epsilon().powf(T::lit(0.25));
    let mut div = C::zero();
    for j in k..m {
        // ∂a_j/∂Φ_j = ∇a_j · (column j of the inverse Jacobian)
        let dir: Vec<C<T>> = (0..m).map(|i| inv[(i, j)]).collect();
        for (i, d) in dir.iter().enumerate() {
            if *d == C::zero() {
                continue;
            }
            let hi = step * (T::one() + pt[i].abs());
            let mut y = pt.to_vec();
            y[i] = pt[i] + hi;
            let ap = comps(&y)?[j];
            y[i] = pt[i] - hi;
            let am = comps(&y)?[j];
            div = div + (ap - am) / (hi + hi) * *d;
        }
    }
    Ok(div)
}

/// Divergence of a tangent field in the coordinates `Q` of the germ.
///
/// `generators` span the germ's function ideal and `coords` are representatives
/// of the coordinates; together they form a frame `Φ = (F, Q)` of the ambient
/// space, `X = Σ a_j ∂/∂Φ_j`, and `div_Q X = Σ_{Q} ∂a_j/∂Φ_j`. Tangency of `X`
/// (`X F_i = O(D^{1/2})`) is checked on `samples`.
pub fn divergence_in_chart<T: Real>(
    x: &VectorField<T>,
    coords: &[ScalarField<T>],
    generators: &[ScalarField<T>],
    d: &Dissipation<T>,
    samples: &[Vec<T>],
) -> Result<ScalarField<T>> {
    let m = x.dim();
    if x.codim() != m || coords.len() + generators.len() != m || coords.iter().chain(generators).any(|f| f.dim() != m) {
        return Err(Error::InvalidInput("coordinates and generators must form a frame of the ambient space".into()));
    }
    for (i, f) in generators.iter().enumerate() {
        // |X F| below the differencing noise of its two factors counts as zero
        let evals: Vec<(T, T)> = samples
            .par_iter()
            .map(|pt| {
                let v = x.eval(pt)?;
                let g = f.gradient(pt)?;
                let xf = g.iter().zip(&v).fold(C::<T>::zero(), |a, (gi, vi)| a + *gi * *vi).norm();
                let scale = g.iter().map(|z| z.norm()).sum::<T>() * v.iter().map(|z| z.norm()).sum::<T>();
                let xf = if xf <= T::lit(1e-8) * scale { T::zero() } else { xf };
                Ok((xf, d.value(pt)?))
            })
            .collect::<Result<_>>()?;
        let mem = membership_from_values(&evals, samples, T::lit(0.5), &MembershipOptions::default())?;
        if !mem.holds {
            return Err(Error::InvalidInput(format!(
                "field is not tangent: X F_{} fails the D^(1/2) bound (constant {}, worst point {:?})",
                i, mem.constant, mem.worst_point
            )));
        }
    }
    let frame: Vec<ScalarField<T>> = generators.iter().chain(coords).cloned().collect();
    let (xf, k) = (x.clone(), generators.len());
    Ok(ScalarField::new(m, move |pt: &[T]| divergence_at(&xf, &frame, k, pt).unwrap_or(C::new(T::nan(), T::nan()))))
}

/// Density of `L_X ω` in the coordinates `Q`: `X(ρ) + ρ·div_Q X` for the
/// density `ρ = Dω/DQ`.
pub fn lie_derivative_volume<T: Real>(
    x: &VectorField<T>,
    density: &ScalarField<T>,
    coords: &[ScalarField<T>],
    generators: &[ScalarField<T>],
    d: &Dissipation<T>,
    samples: &[Vec<T>],
) -> Result<ScalarField<T>> {
    let div = divergence_in_chart(x, coords, generators, d, samples)?;
    let xr = crate::dissipation::directional_derivative(density, x)?;
    let rho = density.clone();
    Ok(ScalarField::new(x.dim(), move |pt: &[T]| xr.value(pt) + rho.value(pt) * div.value(pt)))
}

/// Tolerance for `|H|` on `Γ` samples.
pub const TRANSPORT_TOL: f64 = 1e-6;
/// Tolerance for the generator residual `|V(H) G|` on `Γ` samples.
pub const INVARIANCE_TOL: f64 = 1e-4;

/// Transport operator `P = V + c` of one chart.
#[derive(Clone, Debug)]
pub struct TransportCoefficients<T> {
    pub chart_id: usize,
    /// Hamiltonian vector field in the chart coordinates `(q_I, p_Ī)`.
    pub velocity: VectorField<T>,
    /// `−½ i*(Σ ∂²H/∂p_j∂q_j)`.
    pub trace_term: ScalarField<T>,
    /// `½ L_V μ / μ`.
    pub lie_term: ScalarField<T>,
    /// `trace_term + lie_term`.
    pub zeroth: ScalarField<T>,
}

/// Chart velocity, trace term and Lie term at one chart point.
fn transport_at<T: Real>(sym: &HamiltonianSymbol<T>, form: &VolumeForm<T>, chart: &IChart<T>, y: &[T]) -> Result<(Vec<C<T>>, C<T>, C<T>)> {
    let n = chart.n();
    let (x, foot) = chart_points(chart, y)?;
    let hj = sym.field.eval_jet(&foot)?;
    // ∇H at the complex point, to first order
    let grad: Vec<C<T>> =
        (0..2 * n).map(|i| (0..2 * n).fold(hj.gradient[i], |acc, k| acc + hj.hessian[(i, k)] * (x[k] - creal(foot[k])))).collect();
    let vel: Vec<C<T>> = (0..n).map(|j| if chart.index.contains(j) { grad[j] } else { -grad[n + j] }).collect();
    let trace = (0..n).fold(C::zero(), |acc, j| acc + hj.hessian[(j, n + j)]) * T::lit(-0.5);
    // ∂x/∂y from the phase Hessian
    let s2 = chart.phase.eval_jet(y)?.hessian;
    let dx = CMatrix::from_fn(2 * n, n, |i, k| {
        let j = i % n;
        let delta = if j == k { C::one() } else { C::zero() };
        match (i < n, chart.index.contains(j)) {
            (true, true) => s2[(j, k)],
            (true, false) => delta,
            (false, true) => delta,
            (false, false) => -s2[(j, k)],
        }
    });
    // z = q − ip and ż = H_p + iH_q
    let ii = imag_unit::<T>();
    let dz = CMatrix::from_fn(n, n, |j, k| dx[(n + j, k)] - ii * dx[(j, k)]);
    let dzdot = CMatrix::from_fn(n, n, |j, k| {
        (0..2 * n).fold(C::<T>::zero(), |acc, l| acc + (hj.hessian[(j, l)] + ii * hj.hessian[(n + j, l)]) * dx[(l, k)])
    });
    let inv = dz.inverse().ok_or_else(|| Error::DegenerateChart("z is not a coordinate on the chart".into()))?;
    let mut div = C::<T>::zero();
    for j in 0..n {
        for k in 0..n {
            div = div + dzdot[(j, k)] * inv[(k, j)];
        }
    }
    // V(ln a) along the real flow at the foot
    let a = form.a(chart.sheet_id, &foot)?;
    if a.norm() < T::lit(crate::canop::DENSITY_FLOOR) {
        return Err(Error::BranchFailure("volume density vanishes".into()));
    }
    let va = form.sheet(chart.sheet_id)?.a.gradient(&foot)?;
    let v_real = sym.velocity(&foot)?;
    let da = va.iter().zip(&v_real).fold(C::<T>::zero(), |acc, (g, v)| acc + *g * *v);
    Ok((vel, trace, (da / a + div) * T::lit(0.5)))
}

/// Per-chart transport coefficients after checking `i*H = 0` and the
/// invariance of the germ under the Hamiltonian flow on `Γ` samples.
pub fn transport_operator<T: Real>(
    sym: &HamiltonianSymbol<T>,
    germ: &Germ<T>,
    form: &VolumeForm<T>,
) -> Result<Vec<TransportCoefficients<T>>> {
    if sym.n != germ.n {
        return Err(Error::InvalidInput("symbol and germ dimensions differ".into()));
    }
    let tol = T::lit(TRANSPORT_TOL);
    for g in &germ.gamma_samples {
        let hv = sym.value(g)?;
        if hv.abs() > tol {
            return Err(Error::InvalidInput(format!("H does not vanish on Γ: H = {} at {:?}", hv, g)));
        }
    }
    let worst = invariance_residual(sym, germ)?;
    if worst.0 > T::lit(INVARIANCE_TOL) {
        return Err(Error::InvalidInput(format!("germ is not invariant under V(H): generator residual {} at {:?}", worst.0, worst.1)));
    }
    let mut out = Vec::with_capacity(germ.atlas.len());
    for (id, chart) in germ.atlas.iter().enumerate() {
        form.sheet(chart.sheet_id)?;
        let n = chart.n();
        let mk = || {
            let (s, f, c) = (sym.clone(), form.clone(), chart.clone());
            move |y: &[T]| transport_at(&s, &f, &c, y)
        };
        let mut vel = Vec::with_capacity(n);
        for j in 0..n {
            let f = mk();
            vel.push(ScalarField::new(n, move |y: &[T]| f(y).map(|r| r.0[j]).unwrap_or(C::new(T::nan(), T::nan()))));
        }
        let f = mk();
        let trace_term = ScalarField::new(n, move |y: &[T]| f(y).map(|r| r.1).unwrap_or(C::new(T::nan(), T::nan())));
        let f = mk();
        let lie_term = ScalarField::new(n, move |y: &[T]| f(y).map(|r| r.2).unwrap_or(C::new(T::nan(), T::nan())));
        let f = mk();
        let zeroth = ScalarField::new(n, move |y: &[T]| f(y).map(|r| r.1 + r.2).unwrap_or(C::new(T::nan(), T::nan())));
        out.push(TransportCoefficients { chart_id: id, velocity: VectorField::new(vel)?, trace_term, lie_term, zeroth });
    }
    Ok(out)
}

/// Chart generators `P_I(y) − p_I`, `Q_Ī(y) − q_Ī` at a phase point.
fn chart_generators<T: Real>(chart: &IChart<T>, x: &[T]) -> Result<Vec<C<T>>> {
    let (p, q) = chart.momenta_positions(&chart.index.chart_coords(x))?;
    let n = chart.n();
    Ok((0..n).map(|j| if chart.index.contains(j) { p[j] - creal(x[j]) } else { q[j] - creal(x[n + j]) }).collect())
}

/// Whether the chart describes the branch of the germ through `x`
/// (its coordinates lie in the domain and its generators vanish at `x`).
fn chart_describes<T: Real>(chart: &IChart<T>, x: &[T]) -> bool {
    let y = chart.index.chart_coords(x);
    chart.domain.contains(&y) && chart_generators(chart, x).is_ok_and(|g| g.iter().all(|v| v.norm() <= T::lit(1e-3)))
}

/// Largest `|V(H) G|` over `Γ` samples and the charts describing them, `G`
/// running over the chart generators `P_I(y) − p_I`, `Q_Ī(y) − q_Ī`.
pub fn invariance_residual<T: Real>(sym: &HamiltonianSymbol<T>, germ: &Germ<T>) -> Result<(T, Vec<T>)> {
    let mut worst = (T::zero(), Vec::new());
    let eps = T::epsilon().powf(T::lit(0.25));
    for g in &germ.gamma_samples {
        let v = sym.velocity(g)?;
        for chart in germ.atlas.iter().filter(|c| chart_describes(c, g)) {
            let xp: Vec<T> = g.iter().zip(&v).map(|(a, b)| *a + eps * *b).collect();
            let xm: Vec<T> = g.iter().zip(&v).map(|(a, b)| *a - eps * *b).collect();
            let (Ok(gp), Ok(gm)) = (chart_generators(chart, &xp), chart_generators(chart, &xm)) else { continue };
            for (a, b) in gp.iter().zip(&gm) {
                let r = ((*a - *b) / (eps + eps)).norm();
                if r > worst.0 {
                    worst = (r, g.clone());
                }
            }
        }
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug)]
pub struct TransportOptions<T> {
    /// RK4 time step.
    pub step: T,
    pub max_time: T,
    /// Distance to the start below which a returning trajectory counts as closed.
    pub closure_tol: T,
    /// Relative mismatch `|φ(T) − φ(0)|/|φ(0)|` allowed on closed trajectories.
    pub periodicity_tol: T,
}

impl<T: Real> TransportOptions<T> {
    /// Step `h·period/100` for an expected period.
    pub fn for_h(h: T, period: T) -> Self {
        Self { step: h * period / T::lit(100.0), max_time: T::lit(1.5) * period, closure_tol: T::lit(1e-3), periodicity_tol: T::lit(1e-6) }
    }
}

impl<T: Real> Default for TransportOptions<T> {
    fn default() -> Self {
        Self { step: T::lit(1e-3), max_time: T::lit(100.0), closure_tol: T::lit(1e-3), periodicity_tol: T::lit(1e-6) }
    }
}

/// Solution of `Pφ = 0` along one trajectory of `V(H)`.
#[derive(Clone, Debug)]
pub struct TransportSolution<T> {
    pub times: Vec<T>,
    pub points: Vec<Vec<T>>,
    pub values: Vec<C<T>>,
    /// Return time when the trajectory closes.
    pub period: Option<T>,
    /// `φ(T)/φ(0)` on a closed trajectory.
    pub monodromy: Option<C<T>>,
}

fn zeroth_at<T: Real>(germ: &Germ<T>, coeffs: &[TransportCoefficients<T>], x: &[T]) -> Result<C<T>> {
    let best = germ
        .atlas
        .iter()
        .enumerate()
        .filter(|(_, c)| chart_describes(c, x))
        .map(|(id, c)| (id, c.domain.margin(&c.index.chart_coords(x))))
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
        .ok_or_else(|| Error::InvalidInput(format!("trajectory left the atlas at {:?}", x)))?;
    let c = coeffs
        .iter()
        .find(|c| c.chart_id == best.0)
        .ok_or_else(|| Error::InvalidInput(format!("no transport coefficients for chart {}", best.0)))?;
    c.zeroth.try_value(&germ.atlas[best.0].index.chart_coords(x))
}

/// Integrates `dx/dt = V(H)`, `d ln φ/dt = −c(x)` by the classical RK4 scheme
/// from `start` with `φ(start) = phi0`. A trajectory returning to its start
/// must reproduce `phi0`; otherwise a `QuantizationError` reports the monodromy.
pub fn solve_transport<T: Real>(
    sym: &HamiltonianSymbol<T>,
    germ: &Germ<T>,
    coeffs: &[TransportCoefficients<T>],
    start: &[T],
    phi0: C<T>,
    opts: &TransportOptions<T>,
) -> Result<TransportSolution<T>> {
    if start.len() != 2 * germ.n || phi0 == C::zero() || !(opts.step > T::zero()) {
        return Err(Error::InvalidInput("transport needs a start point on R^{2n}, nonzero data and a positive step".into()));
    }
    let dim = 2 * germ.n;
    let rhs = |x: &[T]| -> Result<(Vec<T>, C<T>)> { Ok((sym.velocity(x)?, -zeroth_at(germ, coeffs, x)?)) };
    let v0 = sym.velocity(start)?;
    let speed0 = v0.iter().map(|v| *v * *v).sum::<T>().sqrt();
    let mut x = start.to_vec();
    let mut lphi = phi0.ln();
    let mut t = T::zero();
    let mut sol = TransportSolution { times: vec![t], points: vec![x.clone()], values: vec![phi0], period: None, monodromy: None };
    let mut max_dist = T::zero();
    let side = |y: &[T]| y.iter().zip(start).zip(&v0).fold(T::zero(), |a, ((p, s), v)| a + (*p - *s) * *v);
    let dist = |y: &[T]| y.iter().zip(start).map(|(p, s)| (*p - *s) * (*p - *s)).sum::<T>().sqrt();
    let hstep = opts.step;
    let two = T::lit(2.0);
    while t < opts.max_time {
        let shift = |base: &[T], k: &[T], f: T| -> Vec<T> { base.iter().zip(k).map(|(b, d)| *b + *d * f).collect() };
        let (k1, l1) = rhs(&x)?;
        let (k2, l2) = rhs(&shift(&x, &k1, hstep / two))?;
        let (k3, l3) = rhs(&shift(&x, &k2, hstep / two))?;
        let (k4, l4) = rhs(&shift(&x, &k3, hstep))?;
        let xn: Vec<T> = (0..dim).map(|i| x[i] + hstep / T::lit(6.0) * (k1[i] + two * k2[i] + two * k3[i] + k4[i])).collect();
        let ln_next = lphi + (l1 + l2 * two + l3 * two + l4) * (hstep / T::lit(6.0));
        let (s_prev, s_next) = (side(&x), side(&xn));
        max_dist = max_dist.max(dist(&xn));
        // closure: crossing the section through the start, near the start, after leaving it
        if speed0 > T::zero()
            && max_dist > T::lit(10.0) * opts.closure_tol
            && s_prev < T::zero()
            && s_next >= T::zero()
            && dist(&xn) < T::lit(0.1) * max_dist
        {
            let frac = s_prev / (s_prev - s_next);
            let xc: Vec<T> = (0..dim).map(|i| x[i] + (xn[i] - x[i]) * frac).collect();
            if dist(&xc) <= opts.closure_tol {
                let lc = lphi + (ln_next - lphi) * frac;
                let period = t + hstep * frac;
                let mono = (lc - phi0.ln()).exp();
                sol.period = Some(period);
                sol.monodromy = Some(mono);
                if (mono - C::one()).norm() > opts.periodicity_tol {
                    return Err(Error::QuantizationError(format!(
                        "transport solution is not periodic: monodromy {} after period {}",
                        mono, period
                    )));
                }
                return Ok(sol);
            }
        }
        x = xn;
        lphi = ln_next;
        t = t + hstep;
        sol.times.push(t);
        sol.points.push(x.clone());
        sol.values.push(lphi.exp());
    }
    Ok(sol)
}

impl<T: Real> TransportSolution<T> {
    /// Amplitude on `R^{2n}` interpolating the solution at the nearest point
    /// of (a subsample of at most `max_points` points of) the trajectory.
    pub fn amplitude(&self, max_points: usize) -> ScalarField<T> {
        let stride = (self.points.len() / max_points.max(2)).max(1);
        let pts: Vec<(Vec<T>, C<T>)> = self.points.iter().zip(&self.values).step_by(stride).map(|(p, v)| (p.clone(), *v)).collect();
        let dim = self.points.first().map_or(0, |p| p.len());
        let closed = self.period.is_some();
        ScalarField::new(dim, move |x: &[T]| {
            let m = pts.len();
            let d2 = |i: usize| pts[i].0.iter().zip(x).map(|(a, b)| (*a - *b) * (*a - *b)).sum::<T>();
            let (best, _) = (0..m).map(|i| (i, d2(i))).fold((0, T::infinity()), |a, b| if b.1 < a.1 { b } else { a });
            // project onto the neighbouring segment with the smaller distance
            let seg = |i: usize, j: usize| -> (T, C<T>) {
                let (a, b) = (&pts[i].0, &pts[j].0);
                let ab2 = a.iter().zip(b).map(|(u, v)| (*v - *u) * (*v - *u)).sum::<T>();
                let s = if ab2 > T::zero() {
                    (a.iter().zip(b).zip(x).map(|((u, v), w)| (*v - *u) * (*w - *u)).sum::<T>() / ab2).max(T::zero()).min(T::one())
                } else {
                    T::zero()
                };
                let p: Vec<T> = a.iter().zip(b).map(|(u, v)| *u + (*v - *u) * s).collect();
                let dd = p.iter().zip(x).map(|(u, w)| (*u - *w) * (*u - *w)).sum::<T>();
                (dd, pts[i].1 + (pts[j].1 - pts[i].1) * s)
            };
            let prev = if best > 0 {
                Some(best - 1)
            } else if closed {
                Some(m - 1)
            } else {
                None
            };
            let next = if best + 1 < m {
                Some(best + 1)
            } else if closed {
                Some(0)
            } else {
                None
            };
            let mut cand = vec![(d2(best), pts[best].1)];
            if let Some(p) = prev {
                cand.push(seg(p, best));
            }
            if let Some(nx) = next {
                cand.push(seg(best, nx));
            }
            cand.into_iter().fold((T::infinity(), C::zero()), |a, b| if b.0 < a.0 { b } else { a }).1
        })
    }
}
