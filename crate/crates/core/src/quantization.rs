//! Variations of the z-action and of `ln a` along cycles of `Γ`, and the
//! quantization condition.

use crate::canop::{continue_log_segment, VolumeForm};
use crate::germ::Germ;
use crate::{cplx, Error, Real, Result, C};
use num_traits::Zero;
use rayon::prelude::*;

/// Closed polyline on `Γ` with the sheet its lift starts on.
#[derive(Clone, Debug, PartialEq)]
pub struct Cycle<T> {
    pub id: usize,
    pub polyline: Vec<Vec<T>>,
    pub lift_start_sheet: usize,
}

/// Largest allowed gap between the two ends of a cycle polyline.
pub const CLOSURE_TOL: f64 = 1e-10;

/// Default bound on the distance of `Var[(1/h)Φ + (i/2)ln a]` to `2πZ`.
pub const DEFAULT_QUANTIZATION_TOL: f64 = 1e-8;

impl<T: Real> Cycle<T> {
    pub fn new(id: usize, polyline: Vec<Vec<T>>, lift_start_sheet: usize) -> Result<Self> {
        if polyline.len() < 2 {
            return Err(Error::InvalidInput("a cycle needs at least two points".into()));
        }
        let dim = polyline[0].len();
        if dim == 0 || polyline.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidInput("cycle points must share a positive dimension".into()));
        }
        let gap = polyline[0].iter().zip(polyline.last().expect("nonempty")).fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()));
        if gap > T::lit(CLOSURE_TOL) {
            return Err(Error::InvalidInput(format!("cycle {} is not closed: endpoint gap {}", id, gap)));
        }
        Ok(Self { id, polyline, lift_start_sheet })
    }

    /// Traverses `self` and then `other`; both must start at the same point.
    pub fn concat(&self, other: &Cycle<T>, id: usize) -> Result<Self> {
        let start_gap = self.polyline[0].iter().zip(&other.polyline[0]).fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()));
        if start_gap > T::lit(CLOSURE_TOL) {
            return Err(Error::InvalidInput("concatenated cycles must share their start point".into()));
        }
        let mut polyline = self.polyline.clone();
        polyline.extend(other.polyline.iter().skip(1).cloned());
        Self::new(id, polyline, self.lift_start_sheet)
    }

    /// Same points traversed backwards.
    pub fn reversed(&self, id: usize) -> Self {
        let mut polyline = self.polyline.clone();
        polyline.reverse();
        Self { id, polyline, lift_start_sheet: self.lift_start_sheet }
    }
}

/// Walks the lift of a cycle through the sheets: each segment is assigned to
/// one sheet whose region holds both ends, staying on the current sheet while
/// possible. Returns `(sheet, from, to)` per segment.
fn lift_segments<'a, T: Real>(germ: &Germ<T>, cycle: &'a Cycle<T>) -> Result<Vec<(usize, &'a [T], &'a [T])>> {
    let za = &germ.zaction;
    let start = za.sheet(cycle.lift_start_sheet)?;
    if !start.region.contains(&cycle.polyline[0]) {
        return Err(Error::InvalidInput(format!("cycle {} does not start inside its lift sheet {}", cycle.id, cycle.lift_start_sheet)));
    }
    let mut current = cycle.lift_start_sheet;
    let mut out = Vec::with_capacity(cycle.polyline.len());
    for w in cycle.polyline.windows(2) {
        let (a, b) = (&w[0][..], &w[1][..]);
        let holds = |id: usize| za.sheet(id).map(|s| s.region.contains(a) && s.region.contains(b)).unwrap_or(false);
        if !holds(current) {
            // prefer the candidate that keeps the most margin at the far end
            let next = za
                .sheets
                .iter()
                .filter(|s| s.region.contains(a) && s.region.contains(b))
                .max_by(|s, t| s.region.margin(b).partial_cmp(&t.region.margin(b)).unwrap_or(std::cmp::Ordering::Equal))
                .ok_or_else(|| Error::InvalidInput(format!("cycle {} has a segment no sheet covers: {:?} -> {:?}", cycle.id, a, b)))?;
            current = next.id;
        }
        out.push((current, a, b));
    }
    Ok(out)
}

/// `Var_γ Φ`, accumulated sheet by sheet along the lift of `γ`.
///
/// Within a sheet the increment is a plain difference; sheet changes happen
/// at points inside both regions, so additive branch constants cancel.
pub fn var_phi<T: Real>(germ: &Germ<T>, cycle: &Cycle<T>) -> Result<C<T>> {
    let za = &germ.zaction;
    let mut total = C::zero();
    for (sheet, a, b) in lift_segments(germ, cycle)? {
        total = total + (za.phi(sheet, b)? - za.phi(sheet, a)?);
    }
    Ok(total)
}

/// `Var_γ ln a`, the continuous-branch increment of `ln a` along the lift.
pub fn var_ln_a<T: Real>(form: &VolumeForm<T>, germ: &Germ<T>, cycle: &Cycle<T>) -> Result<C<T>> {
    let mut total = C::zero();
    for (sheet, a, b) in lift_segments(germ, cycle)? {
        let fs = form.sheet(sheet)?;
        // continuing from the running total adds ln a(b) − ln a(a) on this sheet
        total = continue_log_segment(|y: &[T]| fs.a.try_value(y), a, b, total)?;
    }
    Ok(total)
}

/// `Var Φ / h + (i/2) Var ln a`, divided by `2π`; integer real part and zero
/// imaginary part mean the cycle is quantized.
pub fn lifted_phase<T: Real>(var_phi: C<T>, var_ln_a: C<T>, h: T) -> C<T> {
    (var_phi / h + cplx(T::zero(), T::lit(0.5)) * var_ln_a) / T::TAU()
}

/// Distance of `2π·λ` to `2πZ` (the imaginary part counts in full).
pub fn residual_of<T: Real>(lifted: C<T>) -> T {
    let frac = lifted.re - lifted.re.round();
    T::TAU() * cplx(frac, lifted.im).norm()
}

/// One row of a quantization report.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleResidual<T> {
    pub cycle_id: usize,
    pub var_phi: C<T>,
    pub var_ln_a: C<T>,
    pub lifted: C<T>,
    pub residual: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizationReport<T> {
    pub rows: Vec<CycleResidual<T>>,
    /// Largest variation of `a₂/a₁` over `Γ` samples shared by two sheets,
    /// relative to its mean on that pair; zero with a single sheet.
    pub ratio_spread: T,
    pub tol: T,
    pub holds: bool,
}

impl<T: Real> QuantizationReport<T> {
    pub fn max_residual(&self) -> T {
        self.rows.iter().fold(T::zero(), |m, r| m.max(r.residual))
    }
}

pub fn check_quantization<T: Real>(germ: &Germ<T>, form: &VolumeForm<T>, h: T) -> Result<QuantizationReport<T>> {
    check_quantization_with(germ, form, h, T::lit(DEFAULT_QUANTIZATION_TOL))
}

pub fn check_quantization_with<T: Real>(germ: &Germ<T>, form: &VolumeForm<T>, h: T, tol: T) -> Result<QuantizationReport<T>> {
    if !(h > T::zero()) {
        return Err(Error::InvalidInput("h must be positive".into()));
    }
    let rows = germ
        .cycles
        .par_iter()
        .map(|cycle| {
            let vp = var_phi(germ, cycle)?;
            let vl = var_ln_a(form, germ, cycle)?;
            let lifted = lifted_phase(vp, vl, h);
            Ok(CycleResidual { cycle_id: cycle.id, var_phi: vp, var_ln_a: vl, lifted, residual: residual_of(lifted) })
        })
        .collect::<Result<Vec<_>>>()?;
    let ratio_spread = density_ratio_spread(germ, form)?;
    let holds = rows.iter().all(|r| r.residual <= tol);
    Ok(QuantizationReport { rows, ratio_spread, tol, holds })
}

/// Constancy of `a₂/a₁` on overlaps, evaluated at `Γ` samples only.
fn density_ratio_spread<T: Real>(germ: &Germ<T>, form: &VolumeForm<T>) -> Result<T> {
    let za = &germ.zaction;
    let mut worst = T::zero();
    for (i, s1) in za.sheets.iter().enumerate() {
        for s2 in za.sheets.iter().skip(i + 1) {
            let ratios: Vec<C<T>> = germ
                .gamma_samples
                .iter()
                .filter(|x| s1.region.contains(x) && s2.region.contains(x))
                .map(|x| Ok(form.a(s2.id, x)? / form.a(s1.id, x)?))
                .collect::<Result<_>>()?;
            if ratios.len() < 2 {
                continue;
            }
            let mean = ratios.iter().fold(C::zero(), |m, r| m + *r) / T::of(ratios.len());
            let spread = ratios.iter().fold(T::zero(), |m, r| m.max((*r - mean).norm()));
            worst = worst.max(spread / mean.norm().max(T::epsilon()));
        }
    }
    Ok(worst)
}

/// Which quantity the admissible-parameter search varies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Parameter<T> {
    /// Scan the family parameter (e.g. energy) at fixed `h`.
    Family { h: T },
    /// Scan `h` for the germ built at a fixed family parameter.
    H { family_value: T },
}

#[derive(Clone, Debug)]
pub struct ScanOptions<T> {
    /// Scan nodes across the range.
    pub samples: usize,
    /// Residual bound every cycle must meet at an admissible value.
    pub tol: T,
    /// Bisection stops when the bracket is this small relative to the range.
    pub bracket_tol: T,
}

impl<T: Real> Default for ScanOptions<T> {
    fn default() -> Self {
        Self { samples: 400, tol: T::lit(DEFAULT_QUANTIZATION_TOL), bracket_tol: T::lit(1e-15) }
    }
}

/// Parameter values in `range` at which every cycle satisfies the
/// quantization condition.
///
/// `family(θ)` builds the germ and volume form at parameter `θ`. The search
/// follows the unwrapped real part of each cycle's lifted phase, brackets
/// every integer crossing on the scan grid and bisects it.
pub fn admissible_parameters<T, F>(family: F, which: Parameter<T>, range: (T, T), opts: &ScanOptions<T>) -> Result<Vec<T>>
where
    T: Real,
    F: Fn(T) -> Result<(Germ<T>, VolumeForm<T>)> + Sync,
{
    let (lo, hi) = range;
    if !(hi > lo) || opts.samples < 2 {
        return Ok(Vec::new());
    }
    let lifted: Box<dyn Fn(T) -> Result<Vec<C<T>>> + Sync + '_> = match which {
        Parameter::Family { h } => {
            if !(h > T::zero()) {
                return Err(Error::InvalidInput("h must be positive".into()));
            }
            Box::new(move |theta: T| {
                let (germ, form) = family(theta)?;
                cycle_variations(&germ, &form).map(|v| v.into_iter().map(|(a, b)| lifted_phase(a, b, h)).collect())
            })
        }
        Parameter::H { family_value } => {
            if !(lo > T::zero()) {
                return Err(Error::InvalidInput("the h range must be positive".into()));
            }
            let (germ, form) = family(family_value)?;
            let vars = cycle_variations(&germ, &form)?;
            Box::new(move |h: T| Ok(vars.iter().map(|(a, b)| lifted_phase(*a, *b, h)).collect()))
        }
    };
    let nodes: Vec<T> = (0..opts.samples).map(|k| lo + (hi - lo) * T::of(k) / T::of(opts.samples - 1)).collect();
    let values = nodes.par_iter().map(|t| lifted(*t)).collect::<Result<Vec<_>>>()?;
    let cycles = values[0].len();
    if cycles == 0 {
        // vacuously quantized everywhere; no discrete set to report
        return Ok(Vec::new());
    }
    let mut found: Vec<T> = Vec::new();
    // brackets come from the first cycle; the others are checked at the roots
    for k in 0..nodes.len() - 1 {
        let (f0, f1) = (values[k][0].re, values[k + 1][0].re);
        let (m_lo, m_hi) = if f0 <= f1 { (f0, f1) } else { (f1, f0) };
        let mut m = m_lo.ceil();
        while m <= m_hi {
            let root = bisect(|t| Ok(lifted(t)?[0].re - m), nodes[k], nodes[k + 1], opts.bracket_tol * (hi - lo))?;
            let at = lifted(root)?;
            if at.iter().all(|v| residual_of(*v) <= opts.tol) {
                found.push(root);
            }
            m = m + T::one();
        }
    }
    found.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let merge = T::lit(1e-12) * (hi - lo);
    found.dedup_by(|a, b| (*a - *b).abs() <= merge);
    Ok(found)
}

fn cycle_variations<T: Real>(germ: &Germ<T>, form: &VolumeForm<T>) -> Result<Vec<(C<T>, C<T>)>> {
    germ.cycles.iter().map(|c| Ok((var_phi(germ, c)?, var_ln_a(form, germ, c)?))).collect()
}

fn bisect<T: Real>(f: impl Fn(T) -> Result<T>, mut a: T, mut b: T, tol: T) -> Result<T> {
    let mut fa = f(a)?;
    if fa == T::zero() {
        return Ok(a);
    }
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        let m = (a + b) * T::lit(0.5);
        let fm = f(m)?;
        if fm == T::zero() {
            return Ok(m);
        }
        if (fm > T::zero()) == (fa > T::zero()) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    // final secant step inside the bracket
    let fb = f(b)?;
    if fb != fa {
        let s = a - fa * (b - a) / (fb - fa);
        if s >= a.min(b) && s <= a.max(b) {
            return Ok(s);
        }
    }
    Ok((a + b) * T::lit(0.5))
}

/// Circle family `H = (p² + q²)/2 = E` with the flow-invariant measure.
pub fn circle_family<T: Real>(energy: T) -> Result<(Germ<T>, VolumeForm<T>)> {
    let germ = crate::germ::circle_germ(energy)?;
    let form = VolumeForm::circle_flow_invariant(&germ)?;
    Ok((germ, form))
}
