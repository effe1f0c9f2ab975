//! Volume forms on the germ, chart densities with tracked logarithm branches,
//! and the local and global canonical operator evaluated on grids.

use crate::fields::{BoxDomain, Jet, ScalarField};
use crate::germ::{holomorphic_jet, Germ, IChart};
use crate::linalg::CMatrix;
use crate::quantization::check_quantization_with;
use crate::{cplx, Error, Real, Result, C};
use num_traits::{One, Zero};
use rayon::prelude::*;
use std::io::{Read, Write};

/// Smallest modulus a density may take on a continuation path.
pub const DENSITY_FLOOR: f64 = 1e-12;

/// Continues `ln f` along `t ∈ [t0, t1]` from the value `ln0` at `t0`.
///
/// Steps are halved until the argument of each increment ratio is below π/2.
pub(crate) fn continue_log<T: Real>(f: impl Fn(T) -> Result<C<T>>, t0: T, t1: T, ln0: C<T>) -> Result<C<T>> {
    let floor = T::lit(DENSITY_FLOOR);
    let quarter = T::FRAC_PI_2();
    let mut ln = ln0;
    let mut t = t0;
    let mut val = f(t0)?;
    if val.norm() < floor {
        return Err(Error::BranchFailure(format!("density vanishes at the path start ({})", val.norm())));
    }
    let mut step = t1 - t0;
    let min_step = (t1 - t0).abs() * T::lit(1e-9);
    while (t1 - t).abs() > T::zero() {
        if (step.abs()) > (t1 - t).abs() {
            step = t1 - t;
        }
        let next = f(t + step)?;
        if next.norm() < floor {
            return Err(Error::BranchFailure(format!("density vanishes on the path (|a| = {})", next.norm())));
        }
        let ratio = next / val;
        if ratio.arg().abs() >= quarter {
            if step.abs() <= min_step {
                return Err(Error::BranchFailure("argument jumps on an unresolvable step".into()));
            }
            step = step * T::lit(0.5);
            continue;
        }
        ln = ln + ratio.ln();
        val = next;
        t = t + step;
        step = step * T::lit(2.0);
    }
    Ok(ln)
}

/// Continues `ln f` along the straight segment from `x0` to `x1`.
pub(crate) fn continue_log_segment<T: Real>(f: impl Fn(&[T]) -> Result<C<T>>, x0: &[T], x1: &[T], ln0: C<T>) -> Result<C<T>> {
    let point = |t: T| -> Vec<T> { x0.iter().zip(x1).map(|(a, b)| *a + (*b - *a) * t).collect() };
    continue_log(|t| f(&point(t)), T::zero(), T::one(), ln0)
}

/// Density `a` of `μ = i*(a dz₁∧…∧dz_n)` on one sheet, with a fixed log branch.
#[derive(Clone, Debug)]
pub struct FormSheet<T> {
    pub sheet_id: usize,
    pub a: ScalarField<T>,
    /// Point inside the sheet region and the chosen value of `ln a` there.
    pub ln_base: (Vec<T>, C<T>),
}

/// Volume form given by a density per z-action sheet.
#[derive(Clone, Debug)]
pub struct VolumeForm<T> {
    pub n: usize,
    pub sheets: Vec<FormSheet<T>>,
}

impl<T: Real> VolumeForm<T> {
    /// Checks that every stored branch value exponentiates to `a` at its point.
    pub fn new(n: usize, sheets: Vec<FormSheet<T>>) -> Result<Self> {
        if sheets.is_empty() {
            return Err(Error::InvalidInput("a volume form needs at least one sheet".into()));
        }
        for s in &sheets {
            if s.a.dim() != 2 * n || s.ln_base.0.len() != 2 * n {
                return Err(Error::InvalidInput(format!("form sheet {} does not live on R^{{2n}}", s.sheet_id)));
            }
            let a = s.a.try_value(&s.ln_base.0)?;
            let e = s.ln_base.1.exp();
            if (e - a).norm() > T::lit(1e-10) * a.norm().max(T::epsilon()) {
                return Err(Error::BranchFailure(format!("stored ln a on sheet {} does not match a", s.sheet_id)));
            }
        }
        Ok(Self { n, sheets })
    }

    /// Density `a` on every sheet of the germ, with branches continued across
    /// sheet overlaps so that `ln a` is continuous on the covering.
    pub fn from_density(germ: &Germ<T>, a: ScalarField<T>) -> Result<Self> {
        let za = &germ.zaction;
        let m = za.sheets.len();
        let mut bases: Vec<Option<(Vec<T>, C<T>)>> = vec![None; m];
        let first_point = |k: usize| -> Vec<T> {
            let region = &za.sheets[k].region;
            germ.gamma_samples
                .iter()
                .filter(|x| region.contains(x))
                .max_by(|x, y| region.margin(x).partial_cmp(&region.margin(y)).unwrap_or(std::cmp::Ordering::Equal))
                .cloned()
                .unwrap_or_else(|| region.center())
        };
        let x0 = first_point(0);
        let a0 = a.try_value(&x0)?;
        if a0.norm() < T::lit(DENSITY_FLOOR) {
            return Err(Error::BranchFailure("density vanishes at the base point".into()));
        }
        bases[0] = Some((x0, a0.ln()));
        // breadth-first over overlaps where Φ is continuous, so that ln a
        // follows the same lift as the z-action
        let mut queue = std::collections::VecDeque::from([0usize]);
        while let Some(k) = queue.pop_front() {
            let (xk, lnk) = bases[k].clone().expect("visited sheets have a base");
            for j in 0..m {
                if bases[j].is_some() {
                    continue;
                }
                let (sk, sj) = (&za.sheets[k], &za.sheets[j]);
                let meet = germ.gamma_samples.iter().find(|x| {
                    sk.region.contains(x)
                        && sj.region.contains(x)
                        && match (sk.phi.try_value(x), sj.phi.try_value(x)) {
                            (Ok(a), Ok(b)) => (a - b).norm() <= T::lit(1e-8) * (T::one() + a.norm()),
                            _ => false,
                        }
                });
                if let Some(x) = meet {
                    let ln = continue_log_segment(|y: &[T]| a.try_value(y), &xk, x, lnk)?;
                    bases[j] = Some((x.clone(), ln));
                    queue.push_back(j);
                }
            }
        }
        let mut sheets = Vec::with_capacity(m);
        for (k, base) in bases.into_iter().enumerate() {
            let base = match base {
                Some(b) => b,
                None => {
                    let x = first_point(k);
                    let v = a.try_value(&x)?;
                    (x, v.ln())
                }
            };
            sheets.push(FormSheet { sheet_id: za.sheets[k].id, a: a.clone(), ln_base: base });
        }
        Self::new(germ.n, sheets)
    }

    /// Constant density on every sheet.
    pub fn constant(germ: &Germ<T>, value: C<T>) -> Result<Self> {
        Self::from_density(germ, ScalarField::constant(2 * germ.n, value))
    }

    /// Density `a = 1/(iz)` of the flow-invariant measure `dt` on circles
    /// `z = R·e^{it}` (one degree of freedom).
    pub fn circle_flow_invariant(germ: &Germ<T>) -> Result<Self> {
        if germ.n != 1 {
            return Err(Error::InvalidInput("the circle flow measure is one-dimensional".into()));
        }
        let a = ScalarField::analytic(2, |x: &[T]| circle_density_jet(x));
        Self::from_density(germ, a)
    }

    pub fn sheet(&self, id: usize) -> Result<&FormSheet<T>> {
        self.sheets.iter().find(|s| s.sheet_id == id).ok_or_else(|| Error::InvalidInput(format!("volume form has no sheet {}", id)))
    }

    pub fn a(&self, sheet: usize, x: &[T]) -> Result<C<T>> {
        self.sheet(sheet)?.a.try_value(x)
    }

    /// `ln a` on a sheet, continued from the stored branch along a straight
    /// segment (sheet regions are boxes, hence convex).
    pub fn ln_a(&self, sheet: usize, x: &[T]) -> Result<C<T>> {
        let s = self.sheet(sheet)?;
        continue_log_segment(|y: &[T]| s.a.try_value(y), &s.ln_base.0, x, s.ln_base.1)
    }

    /// Same form with every density multiplied by a nonzero constant.
    pub fn scaled(&self, factor: C<T>) -> Result<Self> {
        if factor.norm() < T::lit(DENSITY_FLOOR) {
            return Err(Error::InvalidInput("scaling factor must be nonzero".into()));
        }
        let ln_f = factor.ln();
        let sheets = self
            .sheets
            .iter()
            .map(|s| {
                let a = s.a.clone();
                let field = ScalarField::new(a.dim(), move |x: &[T]| a.value(x) * factor);
                FormSheet { sheet_id: s.sheet_id, a: field, ln_base: (s.ln_base.0.clone(), s.ln_base.1 + ln_f) }
            })
            .collect();
        Self::new(self.n, sheets)
    }
}

fn circle_density_jet<T: Real>(x: &[T]) -> Jet<T> {
    let z = cplx(x[1], -x[0]);
    let i = cplx(T::zero(), T::one());
    let zi = z.inv();
    // a = −i/z, a′ = i/z², a″ = −2i/z³
    holomorphic_jet(-i * zi, i * zi * zi, -i * zi * zi * zi * T::lit(2.0))
}

/// `a_I` and its tracked logarithm on a chart, as functions of `y = (q_I, p_Ī)`.
#[derive(Clone, Debug)]
pub struct ChartDensity<T> {
    pub a: ScalarField<T>,
    pub ln_a: ScalarField<T>,
}

impl<T: Real> ChartDensity<T> {
    /// `a_I ≡ 1` with `ln a_I ≡ 0`.
    pub fn unit(n: usize) -> Self {
        Self { a: ScalarField::constant(n, C::one()), ln_a: ScalarField::constant(n, C::zero()) }
    }

    /// Density given by its logarithm.
    pub fn from_ln(ln_a: ScalarField<T>) -> Self {
        let l = ln_a.clone();
        let a = ScalarField::new(ln_a.dim(), move |y: &[T]| l.value(y).exp());
        Self { a, ln_a }
    }
}

/// `ln det(1 − iτ·S_I″)` continued in `τ` from `0` at `τ = 0` to `τ = 1`.
fn ln_b<T: Real>(hessian: &CMatrix<T>) -> Result<C<T>> {
    let n = hessian.rows();
    let i = cplx(T::zero(), T::one());
    let b = |tau: T| -> Result<C<T>> { Ok(CMatrix::from_fn(n, n, |r, c| id::<T>(r, c) - i * hessian[(r, c)] * tau).det()) };
    continue_log(b, T::zero(), T::one(), C::zero()).map_err(|e| match e {
        Error::BranchFailure(m) => Error::PositivityViolation(format!("det(1 − iτS″) vanishes on τ ∈ [0, 1]: {}", m)),
        other => other,
    })
}

fn id<T: Real>(r: usize, c: usize) -> C<T> {
    if r == c {
        C::one()
    } else {
        C::zero()
    }
}

/// `ln a_I = ln a(foot) + ln det(1 − iS_I″) − iπ|Ī|/2` at one chart point.
///
/// This is the principal term of the chart density; representatives that
/// differ by `O(d_I^{1/2})` are equally valid.
pub fn chart_ln_density<T: Real>(form: &VolumeForm<T>, chart: &IChart<T>, y: &[T]) -> Result<C<T>> {
    let foot = chart.foot_point(y)?;
    let ln_a = form.ln_a(chart.sheet_id, &foot)?;
    let hess = chart.phase.eval_jet(y)?.hessian;
    let co = T::of(chart.index.co_len());
    Ok(ln_a + ln_b(&hess)? - cplx(T::zero(), T::FRAC_PI_2() * co))
}

/// Density of the volume form in the chart coordinates `(q_I, p_Ī)`.
pub fn chart_density<T: Real>(form: &VolumeForm<T>, chart: &IChart<T>, germ: &Germ<T>) -> Result<ChartDensity<T>> {
    germ.zaction.sheet(chart.sheet_id)?;
    form.sheet(chart.sheet_id)?;
    // fail early if the density is unusable at the chart base
    chart_ln_density(form, chart, &chart.index.chart_coords(&chart.base))?;
    let (f, c) = (form.clone(), chart.clone());
    let ln_a = ScalarField::new(chart.n(), move |y: &[T]| chart_ln_density(&f, &c, y).unwrap_or(C::new(T::nan(), T::nan())));
    Ok(ChartDensity::from_ln(ln_a))
}

/// Uniform tensor grid: node `k` on axis `j` is `lo[j] + k·spacing[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    pub lo: Vec<T>,
    pub spacing: Vec<T>,
    pub counts: Vec<usize>,
}

impl<T: Real> Grid<T> {
    pub fn new(lo: Vec<T>, spacing: Vec<T>, counts: Vec<usize>) -> Result<Self> {
        let n = lo.len();
        if n == 0 || n > 3 || spacing.len() != n || counts.len() != n {
            return Err(Error::InvalidInput("grids have one to three axes with matching metadata".into()));
        }
        if spacing.iter().any(|s| !(*s > T::zero())) || counts.iter().any(|c| *c < 2) {
            return Err(Error::InvalidInput("grid spacing must be positive with at least two nodes per axis".into()));
        }
        Ok(Self { lo, spacing, counts })
    }

    /// Grid with both endpoints of `[lo_j, hi_j]` as nodes.
    pub fn uniform(lo: &[T], hi: &[T], counts: &[usize]) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(hi).any(|(a, b)| !(b > a)) {
            return Err(Error::InvalidInput("grid bounds must satisfy lo < hi".into()));
        }
        let spacing = lo.iter().zip(hi).zip(counts).map(|((a, b), c)| (*b - *a) / T::of(c.saturating_sub(1).max(1))).collect();
        Self::new(lo.to_vec(), spacing, counts.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hi(&self) -> Vec<T> {
        (0..self.dim()).map(|j| self.lo[j] + self.spacing[j] * T::of(self.counts[j] - 1)).collect()
    }

    pub fn axis(&self, j: usize) -> Vec<T> {
        (0..self.counts[j]).map(|k| self.lo[j] + self.spacing[j] * T::of(k)).collect()
    }

    /// Multi-index of a flat (row-major, last axis fastest) index.
    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for j in (0..self.dim()).rev() {
            idx[j] = flat % self.counts[j];
            flat /= self.counts[j];
        }
        idx
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.counts).fold(0, |acc, (i, c)| acc * c + i)
    }

    pub fn point(&self, flat: usize) -> Vec<T> {
        self.unflatten(flat).iter().enumerate().map(|(j, k)| self.lo[j] + self.spacing[j] * T::of(*k)).collect()
    }

    /// Trapezoid weight of a node.
    pub fn weight(&self, flat: usize) -> T {
        self.unflatten(flat)
            .iter()
            .enumerate()
            .map(|(j, k)| if *k == 0 || *k + 1 == self.counts[j] { self.spacing[j] * T::lit(0.5) } else { self.spacing[j] })
            .fold(T::one(), |a, b| a * b)
    }

    pub fn same_shape(&self, other: &Grid<T>) -> bool {
        self.counts == other.counts
            && self.lo.iter().zip(&other.lo).all(|(a, b)| (*a - *b).abs() <= T::lit(1e-12) * (T::one() + a.abs()))
            && self.spacing.iter().zip(&other.spacing).all(|(a, b)| (*a - *b).abs() <= T::lit(1e-12) * *a)
    }
}

/// Sampled function of `q ∈ R^n` at a fixed `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveFunction<T> {
    pub grid: Grid<T>,
    pub samples: Vec<C<T>>,
    pub h: T,
}

const WAVE_MAGIC: &[u8; 4] = b"GCWF";
const WAVE_VERSION: u32 = 1;

impl<T: Real> WaveFunction<T> {
    pub fn new(grid: Grid<T>, samples: Vec<C<T>>, h: T) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::InvalidInput(format!("{} samples for a grid of {} nodes", samples.len(), grid.len())));
        }
        if samples.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidInput("wave function samples must be finite".into()));
        }
        if !(h > T::zero()) {
            return Err(Error::InvalidInput("h must be positive".into()));
        }
        Ok(Self { grid, samples, h })
    }

    pub fn zeros(grid: Grid<T>, h: T) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![C::zero(); n], h)
    }

    /// Plain `L²` norm by the trapezoid rule.
    pub fn l2_norm(&self) -> T {
        self.samples.iter().enumerate().map(|(k, v)| v.norm_sqr() * self.grid.weight(k)).sum::<T>().sqrt()
    }

    /// `L²` inner product `⟨self, other⟩` (conjugate-linear in `self`).
    pub fn inner(&self, other: &WaveFunction<T>) -> Result<C<T>> {
        self.check_same_grid(other)?;
        Ok(self
            .samples
            .iter()
            .zip(&other.samples)
            .enumerate()
            .fold(C::zero(), |acc, (k, (a, b))| acc + a.conj() * *b * self.grid.weight(k)))
    }

    fn check_same_grid(&self, other: &WaveFunction<T>) -> Result<()> {
        if !self.grid.same_shape(&other.grid) {
            return Err(Error::InvalidInput("wave functions live on different grids".into()));
        }
        Ok(())
    }

    pub fn add(&self, other: &WaveFunction<T>) -> Result<Self> {
        self.check_same_grid(other)?;
        let samples = self.samples.iter().zip(&other.samples).map(|(a, b)| *a + *b).collect();
        Ok(Self { grid: self.grid.clone(), samples, h: self.h })
    }

    pub fn sub(&self, other: &WaveFunction<T>) -> Result<Self> {
        self.check_same_grid(other)?;
        let samples = self.samples.iter().zip(&other.samples).map(|(a, b)| *a - *b).collect();
        Ok(Self { grid: self.grid.clone(), samples, h: self.h })
    }

    pub fn scale(&self, c: C<T>) -> Self {
        Self { grid: self.grid.clone(), samples: self.samples.iter().map(|v| *v * c).collect(), h: self.h }
    }

    /// Largest modulus on the outermost grid layer.
    pub fn boundary_max(&self) -> T {
        (0..self.grid.len())
            .filter(|k| self.grid.unflatten(*k).iter().zip(&self.grid.counts).any(|(i, c)| *i == 0 || *i + 1 == *c))
            .fold(T::zero(), |m, k| m.max(self.samples[k].norm()))
    }

    /// Checks that the grid extends at least four decay lengths `√h` beyond `support`.
    pub fn check_padding(&self, support: &BoxDomain<T>) -> Result<()> {
        let pad = T::lit(4.0) * self.h.sqrt();
        let hi = self.grid.hi();
        for j in 0..self.grid.dim() {
            let (slo, shi) = (support.lo[j], support.hi[j]);
            if self.grid.lo[j] > slo - pad || hi[j] < shi + pad {
                return Err(Error::InvalidInput(format!("axis {} has less than 4√h of padding around the support", j)));
            }
        }
        Ok(())
    }

    /// Binary columnar layout: magic, version, scalar width, dimension,
    /// per-axis `(count, lo, spacing)`, `h`, then all real parts followed by
    /// all imaginary parts, little-endian.
    pub fn write_binary(&self, w: &mut impl Write) -> Result<()> {
        let io = |e: std::io::Error| Error::InvalidInput(format!("write failed: {}", e));
        let width = std::mem::size_of::<T>() as u8;
        w.write_all(WAVE_MAGIC).map_err(io)?;
        w.write_all(&WAVE_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&[width]).map_err(io)?;
        w.write_all(&(self.grid.dim() as u32).to_le_bytes()).map_err(io)?;
        for j in 0..self.grid.dim() {
            w.write_all(&(self.grid.counts[j] as u64).to_le_bytes()).map_err(io)?;
            w.write_all(&self.grid.lo[j].to_f64_lossy().to_le_bytes()).map_err(io)?;
            w.write_all(&self.grid.spacing[j].to_f64_lossy().to_le_bytes()).map_err(io)?;
        }
        w.write_all(&self.h.to_f64_lossy().to_le_bytes()).map_err(io)?;
        let put = |w: &mut dyn Write, v: T| -> std::io::Result<()> {
            if width == 4 {
                w.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())
            } else {
                w.write_all(&v.to_f64_lossy().to_le_bytes())
            }
        };
        for v in &self.samples {
            put(w, v.re).map_err(io)?;
        }
        for v in &self.samples {
            put(w, v.im).map_err(io)?;
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf).map_err(|e| Error::InvalidInput(format!("read failed: {}", e)))?;
        let mut cur = Cursor { buf: &buf, pos: 0 };
        if cur.take(4)? != WAVE_MAGIC {
            return Err(Error::InvalidInput("not a wave function file".into()));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
        if version != WAVE_VERSION {
            return Err(Error::InvalidInput(format!("unsupported wave function version {}", version)));
        }
        let width = cur.take(1)?[0];
        if width != 4 && width != 8 {
            return Err(Error::InvalidInput(format!("unsupported scalar width {}", width)));
        }
        let n = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes")) as usize;
        if n == 0 || n > 3 {
            return Err(Error::InvalidInput(format!("unsupported grid dimension {}", n)));
        }
        let (mut lo, mut spacing, mut counts) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..n {
            counts.push(u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes")) as usize);
            lo.push(T::lit(cur.f64()?));
            spacing.push(T::lit(cur.f64()?));
        }
        let h = T::lit(cur.f64()?);
        let grid = Grid::new(lo, spacing, counts)?;
        let len = grid.len();
        let mut read_block = || -> Result<Vec<T>> {
            (0..len)
                .map(|_| {
                    if width == 4 {
                        Ok(T::lit(f32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes")) as f64))
                    } else {
                        Ok(T::lit(cur.f64()?))
                    }
                })
                .collect()
        };
        let re = read_block()?;
        let im = read_block()?;
        if cur.pos != buf.len() {
            return Err(Error::InvalidInput("trailing bytes after the sample blocks".into()));
        }
        let samples = re.into_iter().zip(im).map(|(a, b)| cplx(a, b)).collect();
        Self::new(grid, samples, h)
    }

    /// CSV with columns `q1 … qn, re, im`, one row per node.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let err = |e: csv::Error| Error::InvalidInput(format!("csv write failed: {}", e));
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.grid.dim()).map(|j| format!("q{}", j)).collect();
        header.push("re".into());
        header.push("im".into());
        wr.write_record(&header).map_err(err)?;
        for (k, v) in self.samples.iter().enumerate() {
            let mut row: Vec<String> = self.grid.point(k).iter().map(|x| format!("{:e}", x.to_f64_lossy())).collect();
            row.push(format!("{:e}", v.re.to_f64_lossy()));
            row.push(format!("{:e}", v.im.to_f64_lossy()));
            wr.write_record(&row).map_err(err)?;
        }
        wr.flush().map_err(|e| Error::InvalidInput(format!("csv write failed: {}", e)))
    }

    /// Reads the CSV layout back onto a known grid (rows in grid order).
    pub fn read_csv(r: impl Read, grid: Grid<T>, h: T) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let n = grid.dim();
        let mut samples = Vec::with_capacity(grid.len());
        for (k, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| Error::InvalidInput(format!("csv read failed: {}", e)))?;
            if rec.len() != n + 2 {
                return Err(Error::InvalidInput(format!("row {} has {} columns, expected {}", k, rec.len(), n + 2)));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::InvalidInput(format!("row {}: {}", k, e)));
            if k < grid.len() {
                let expected = grid.point(k);
                for j in 0..n {
                    let q = num(&rec[j])?;
                    if (q - expected[j].to_f64_lossy()).abs() > 1e-9 * (1.0 + q.abs()) {
                        return Err(Error::InvalidInput(format!("row {} is not at grid node {:?}", k, expected)));
                    }
                }
            }
            samples.push(cplx(T::lit(num(&rec[n])?), T::lit(num(&rec[n + 1])?)));
        }
        Self::new(grid, samples, h)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.pos + k > self.buf.len() {
            return Err(Error::InvalidInput("wave function file is truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// `‖(1 − h²Δ + q²)^{k/2} ψ‖` with second-order centred differences
/// (zero outside the grid).
pub fn hh_norm<T: Real>(psi: &WaveFunction<T>, k: usize) -> Result<T> {
    if !k.is_multiple_of(2) {
        return Err(Error::InvalidInput("hh_norm takes an even order".into()));
    }
    let peak = psi.samples.iter().fold(T::zero(), |m, v| m.max(v.norm()));
    if psi.boundary_max() > T::lit(1e-12) * peak.max(T::one()) {
        return Err(Error::ResolutionError {
            message: format!("wave function has not decayed at the grid boundary ({})", psi.boundary_max()),
            required: 0,
        });
    }
    let mut cur = psi.clone();
    for _ in 0..k / 2 {
        cur = apply_shifted_oscillator(&cur);
    }
    Ok(cur.l2_norm())
}

fn apply_shifted_oscillator<T: Real>(psi: &WaveFunction<T>) -> WaveFunction<T> {
    let g = &psi.grid;
    let h2 = psi.h * psi.h;
    let samples = (0..g.len())
        .into_par_iter()
        .map(|flat| {
            let idx = g.unflatten(flat);
            let x = g.point(flat);
            let v = psi.samples[flat];
            let mut lap = C::zero();
            for j in 0..g.dim() {
                let neighbour = |delta: isize| -> C<T> {
                    let k = idx[j] as isize + delta;
                    if k < 0 || k >= g.counts[j] as isize {
                        return C::zero();
                    }
                    let mut m = idx.clone();
                    m[j] = k as usize;
                    psi.samples[g.flatten(&m)]
                };
                let dx2 = g.spacing[j] * g.spacing[j];
                lap = lap + (neighbour(1) + neighbour(-1) - v * T::lit(2.0)) / dx2;
            }
            let q2: T = x.iter().map(|v| *v * *v).sum();
            v * (T::one() + q2) - lap * h2
        })
        .collect();
    WaveFunction { grid: g.clone(), samples, h: psi.h }
}

/// Smooth step: `0` for `t ≤ 0`, `1` for `t ≥ 1`, built from `exp(−1/t)`.
pub fn smooth_step<T: Real>(t: T) -> T {
    let psi = |s: T| if s > T::zero() { (-T::one() / s).exp() } else { T::zero() };
    let (a, b) = (psi(t), psi(T::one() - t));
    if a + b == T::zero() {
        return if t >= T::one() { T::one() } else { T::zero() };
    }
    a / (a + b)
}

/// Bump equal to `1` at distance `≥ δ_j = fraction·width_j` from the box
/// faces and vanishing to infinite order on them.
pub fn box_bump<T: Real>(b: &BoxDomain<T>, x: &[T], fraction: T) -> T {
    let w = b.widths();
    (0..b.dim()).fold(T::one(), |acc, j| {
        let delta = (w[j] * fraction).max(T::min_positive_value());
        acc * smooth_step((x[j] - b.lo[j]) / delta) * smooth_step((b.hi[j] - x[j]) / delta)
    })
}

/// Chart-coordinate amplitude `φ_I` supported in a box of the chart domain.
#[derive(Clone, Debug)]
pub struct Amplitude<T> {
    pub chart_id: usize,
    pub phi: ScalarField<T>,
    pub support: BoxDomain<T>,
}

impl<T: Real> Amplitude<T> {
    pub fn new(chart_id: usize, phi: ScalarField<T>, support: BoxDomain<T>, chart: &IChart<T>) -> Result<Self> {
        if phi.dim() != chart.n() || support.dim() != chart.n() {
            return Err(Error::InvalidInput("amplitude dimension differs from the chart".into()));
        }
        let inside = (0..support.dim()).all(|j| support.lo[j] >= chart.domain.lo[j] && support.hi[j] <= chart.domain.hi[j]);
        if !inside {
            return Err(Error::InvalidInput("amplitude support leaves the chart domain".into()));
        }
        Ok(Self { chart_id, phi, support })
    }
}

#[derive(Clone, Debug)]
pub struct CanopOptions<T> {
    /// Width of the cutoff transition band, as a fraction of the support width;
    /// zero means the amplitude already vanishes at the support faces.
    pub cutoff_margin: T,
    pub nodes_per_wavelength: usize,
    /// Cap on the number of quadrature nodes over `p_Ī`.
    pub max_nodes: usize,
    /// Residual bound for the quantization check of the global operator.
    pub quantization_tol: T,
}

impl<T: Real> Default for CanopOptions<T> {
    fn default() -> Self {
        Self {
            cutoff_margin: T::lit(0.25),
            nodes_per_wavelength: 16,
            max_nodes: 1 << 20,
            quantization_tol: T::lit(crate::quantization::DEFAULT_QUANTIZATION_TOL),
        }
    }
}

/// Local canonical operator of one chart on a `q`-grid.
///
/// For `Ī = ∅` this is `e^{iS/h}·√a_I·φ` pointwise; otherwise the
/// `(i/2πh)^{|Ī|/2}`-weighted trapezoid quadrature over `p_Ī` of
/// `e^{(i/h)(S_I + p_Ī·q_Ī)}·φ·χ·√a_I` with `√a_I = exp(½ ln a_I)`.
pub fn local_canop<T: Real>(
    chart: &IChart<T>,
    density: &ChartDensity<T>,
    amp: &Amplitude<T>,
    h: T,
    grid: &Grid<T>,
    opts: &CanopOptions<T>,
) -> Result<WaveFunction<T>> {
    let n = chart.n();
    if !(h > T::zero() && h <= T::one()) {
        return Err(Error::InvalidInput("h must lie in (0, 1]".into()));
    }
    if grid.dim() != n {
        return Err(Error::InvalidInput("grid dimension differs from the chart".into()));
    }
    let i = cplx(T::zero(), T::one());
    let inv_h = T::one() / h;
    // integration box: the support widened by the cutoff band, kept inside the chart
    let margin = opts.cutoff_margin.max(T::zero());
    let widths = amp.support.widths();
    let lo: Vec<T> = (0..n).map(|j| (amp.support.lo[j] - widths[j] * margin).max(chart.domain.lo[j])).collect();
    let hi: Vec<T> = (0..n).map(|j| (amp.support.hi[j] + widths[j] * margin).min(chart.domain.hi[j])).collect();
    let outer = BoxDomain::new(lo, hi)?;
    let cutoff = |y: &[T]| -> T {
        if margin == T::zero() {
            return if amp.support.contains(y) { T::one() } else { T::zero() };
        }
        // χ = 1 on the support, 0 at the widened faces
        (0..n).fold(T::one(), |acc, j| {
            let band_lo = amp.support.lo[j] - outer.lo[j];
            let band_hi = outer.hi[j] - amp.support.hi[j];
            let s_lo = if band_lo > T::zero() { smooth_step((y[j] - outer.lo[j]) / band_lo) } else { T::one() };
            let s_hi = if band_hi > T::zero() { smooth_step((outer.hi[j] - y[j]) / band_hi) } else { T::one() };
            acc * s_lo * s_hi
        })
    };
    let integrand = |y: &[T]| -> Result<C<T>> {
        if !outer.contains(y) {
            return Ok(C::zero());
        }
        let chi = cutoff(y);
        if chi == T::zero() {
            return Ok(C::zero());
        }
        let phi = amp.phi.try_value(y)?;
        if phi == C::zero() {
            return Ok(C::zero());
        }
        let s = chart.phase.try_value(y)?;
        let ln_a = density.ln_a.try_value(y)?;
        if !ln_a.re.is_finite() || !ln_a.im.is_finite() {
            return Err(Error::BranchFailure(format!("density branch unavailable at {:?}", y)));
        }
        Ok((i * s * inv_h + ln_a * T::lit(0.5)).exp() * phi * chi)
    };
    let members = chart.index.members().to_vec();
    let co = chart.index.complement();
    if co.is_empty() {
        let samples = (0..grid.len()).into_par_iter().map(|k| integrand(&grid.point(k))).collect::<Result<Vec<_>>>()?;
        return WaveFunction::new(grid.clone(), samples, h);
    }
    // node count from the fastest oscillation over the integration box
    let grid_hi = grid.hi();
    let qmax = co.iter().fold(T::zero(), |m, &j| m.max(grid.lo[j].abs()).max(grid_hi[j].abs()));
    let probe = 9usize;
    let mut smax = T::zero();
    for k in 0..probe.pow(n as u32) {
        let mut y = vec![T::zero(); n];
        let mut rem = k;
        for j in 0..n {
            let t = T::of(rem % probe) / T::of(probe - 1);
            rem /= probe;
            y[j] = outer.lo[j] + (outer.hi[j] - outer.lo[j]) * t;
        }
        let g = chart.phase.gradient(&y)?;
        for &j in &co {
            smax = smax.max(g[j].norm());
        }
    }
    let kmax = (smax + qmax) * inv_h;
    let mut spacing = T::TAU() / (kmax.max(T::epsilon()) * T::of(opts.nodes_per_wavelength));
    // also resolve envelopes of width √h
    spacing = spacing.min(h.sqrt() * T::of(opts.nodes_per_wavelength) / T::lit(64.0));
    let owidth = outer.widths();
    let counts: Vec<usize> = co.iter().map(|&j| ((owidth[j] / spacing).ceil().to_f64_lossy() as usize + 1).max(17)).collect();
    let total: usize = counts.iter().try_fold(1usize, |a, c| a.checked_mul(*c)).unwrap_or(usize::MAX);
    if total > opts.max_nodes {
        return Err(Error::ResolutionError {
            message: format!("quadrature over p_Ī needs {} nodes (cap {})", total, opts.max_nodes),
            required: total,
        });
    }
    let plo: Vec<T> = co.iter().map(|&j| outer.lo[j]).collect();
    let phi_: Vec<T> = co.iter().map(|&j| outer.hi[j]).collect();
    let pgrid = Grid::uniform(&plo, &phi_, &counts)?;
    // distinct q_I values of the output grid
    let qi_grid = if members.is_empty() {
        None
    } else {
        let lo: Vec<T> = members.iter().map(|&j| grid.lo[j]).collect();
        let sp: Vec<T> = members.iter().map(|&j| grid.spacing[j]).collect();
        let ct: Vec<usize> = members.iter().map(|&j| grid.counts[j]).collect();
        Some(Grid::new(lo, sp, ct)?)
    };
    let n_qi = qi_grid.as_ref().map_or(1, |g| g.len());
    let np = pgrid.len();
    let table: Vec<C<T>> = (0..n_qi * np)
        .into_par_iter()
        .map(|idx| {
            let (a, b) = (idx / np, idx % np);
            let qi = qi_grid.as_ref().map_or(Vec::new(), |g| g.point(a));
            let p = pgrid.point(b);
            let mut y = vec![T::zero(); n];
            for (m, &j) in members.iter().enumerate() {
                y[j] = qi[m];
            }
            for (m, &j) in co.iter().enumerate() {
                y[j] = p[m];
            }
            Ok(integrand(&y)? * pgrid.weight(b))
        })
        .collect::<Result<Vec<_>>>()?;
    let pref = (i / (T::TAU() * h)).powf(T::of(co.len()) * T::lit(0.5));
    let samples = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let q = grid.point(k);
            let a = match &qi_grid {
                Some(g) => {
                    let idx = grid.unflatten(k);
                    g.flatten(&members.iter().map(|&j| idx[j]).collect::<Vec<_>>())
                }
                None => 0,
            };
            let row = &table[a * np..(a + 1) * np];
            let mut acc = C::<T>::zero();
            for (b, f) in row.iter().enumerate() {
                if *f == C::zero() {
                    continue;
                }
                let p = pgrid.point(b);
                let phase: T = co.iter().zip(&p).map(|(&j, pj)| *pj * q[j]).sum();
                acc = acc + *f * (i * phase * inv_h).exp();
            }
            acc * pref
        })
        .collect();
    WaveFunction::new(grid.clone(), samples, h)
}

/// Smooth partition of unity `{e_I}` on phase space subordinate to the atlas.
///
/// Chart `I` gets the weight `w_I = bump(domain, y_I(x))·bump(sheet region, x)`
/// and `e_I = w_I / Σ_J w_J`.
#[derive(Clone, Debug)]
pub struct Partition<T> {
    kind: PartitionKind<T>,
}

#[derive(Clone, Debug)]
enum PartitionKind<T> {
    Trivial,
    Boxes(T),
    Weights(Vec<ScalarField<T>>),
}

impl<T: Real> Partition<T> {
    /// `{1}` for a single-chart germ.
    pub fn trivial(germ: &Germ<T>) -> Result<Self> {
        if germ.atlas.len() != 1 {
            return Err(Error::InvalidInput("the trivial partition needs a single-chart atlas".into()));
        }
        Ok(Self { kind: PartitionKind::Trivial })
    }

    /// Bumps with transition bands `fraction·width` (fraction in `(0, ½]`).
    pub fn smooth(fraction: T) -> Result<Self> {
        if !(fraction > T::zero() && fraction <= T::lit(0.5)) {
            return Err(Error::InvalidInput("partition transition fraction must lie in (0, 1/2]".into()));
        }
        Ok(Self { kind: PartitionKind::Boxes(fraction) })
    }

    /// Bumps `exp(−1/(1 − u²))`, `u = (t − t_I − shift)/half_width`, in the
    /// flow angle `t` of `(q, p) = r(cos t, −sin t)`, centred at each chart's
    /// base point (one degree of freedom, charts around the origin).
    pub fn angular(germ: &Germ<T>, half_width: T, shift: T) -> Result<Self> {
        if germ.n != 1 {
            return Err(Error::InvalidInput("angular partitions need one degree of freedom".into()));
        }
        if !(half_width > T::zero() && half_width < T::PI()) {
            return Err(Error::InvalidInput("half width must lie in (0, π)".into()));
        }
        let weights = germ
            .atlas
            .iter()
            .map(|c| {
                let centre = (-c.base[0]).atan2(c.base[1]) + shift;
                ScalarField::new(2, move |x: &[T]| {
                    let t = (-x[0]).atan2(x[1]);
                    let mut d = t - centre;
                    while d > T::PI() {
                        d = d - T::TAU();
                    }
                    while d < -T::PI() {
                        d = d + T::TAU();
                    }
                    let u = d / half_width;
                    let w = if u.abs() < T::one() { (-T::one() / (T::one() - u * u)).exp() } else { T::zero() };
                    cplx(w, T::zero())
                })
            })
            .collect();
        Self::from_weights(weights)
    }

    /// User weights `w_I` on phase space, one per chart (real parts are used);
    /// each must vanish outside its chart.
    pub fn from_weights(weights: Vec<ScalarField<T>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput("a partition needs at least one weight".into()));
        }
        Ok(Self { kind: PartitionKind::Weights(weights) })
    }

    fn weight(&self, germ: &Germ<T>, chart: usize, x: &[T]) -> Result<T> {
        let f = match &self.kind {
            PartitionKind::Trivial => return Ok(T::one()),
            PartitionKind::Weights(w) => {
                let field = w.get(chart).ok_or_else(|| Error::InvalidInput(format!("no partition weight for chart {}", chart)))?;
                return Ok(field.try_value(x)?.re.max(T::zero()));
            }
            PartitionKind::Boxes(f) => *f,
        };
        let c = &germ.atlas[chart];
        let y = c.index.chart_coords(x);
        let region = &germ.zaction.sheet(c.sheet_id)?.region;
        Ok(box_bump(&c.domain, &y, f) * box_bump(region, x, f))
    }

    /// `e_I(x)`; zero where no chart carries weight.
    pub fn value(&self, germ: &Germ<T>, chart: usize, x: &[T]) -> Result<T> {
        let w = self.weight(germ, chart, x)?;
        if w == T::zero() {
            return Ok(T::zero());
        }
        let total = (0..germ.atlas.len()).map(|j| self.weight(germ, j, x)).sum::<Result<T>>()?;
        Ok(w / total)
    }
}

/// Global canonical operator `Σ_I K_I(e_I φ)` of a function on phase space.
pub fn global_canop<T: Real>(
    germ: &Germ<T>,
    form: &VolumeForm<T>,
    phi: &ScalarField<T>,
    partition: &Partition<T>,
    h: T,
    grid: &Grid<T>,
    opts: &CanopOptions<T>,
) -> Result<WaveFunction<T>> {
    if !germ.cycles.is_empty() {
        let rep = check_quantization_with(germ, form, h, opts.quantization_tol)?;
        if !rep.holds {
            return Err(Error::QuantizationError(format!("largest cycle residual {} exceeds {}", rep.max_residual(), rep.tol)));
        }
    }
    let mut total = WaveFunction::zeros(grid.clone(), h)?;
    let local_opts = CanopOptions { cutoff_margin: T::zero(), ..opts.clone() };
    for (id, chart) in germ.atlas.iter().enumerate() {
        let density = chart_density(form, chart, germ)?;
        let amp = chart_amplitude(germ, partition, phi, id)?;
        total = total.add(&local_canop(chart, &density, &amp, h, grid, &local_opts)?)?;
    }
    Ok(total)
}

/// `y ↦ (e_I φ)(foot_I(y))` on chart `id`, supported in the chart domain.
pub fn chart_amplitude<T: Real>(germ: &Germ<T>, partition: &Partition<T>, phi: &ScalarField<T>, id: usize) -> Result<Amplitude<T>> {
    let chart = germ.atlas.get(id).ok_or_else(|| Error::InvalidInput(format!("no chart {}", id)))?.clone();
    let (g, part, f) = (germ.clone(), partition.clone(), phi.clone());
    let c = chart.clone();
    let field = ScalarField::new(chart.n(), move |y: &[T]| {
        let eval = || -> Result<C<T>> {
            let x = c.foot_point(y)?;
            let e = part.value(&g, id, &x)?;
            if e == T::zero() {
                return Ok(C::zero());
            }
            Ok(f.try_value(&x)? * e)
        };
        eval().unwrap_or(C::new(T::nan(), T::nan()))
    });
    Amplitude::new(id, field, chart.domain.clone(), &chart)
}
