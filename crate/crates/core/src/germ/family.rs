use super::zaction::{holomorphic_jet, zaction_from_phase, Sheet, ZAction};
use super::{build_chart_from_zaction, Germ, IChart, IndexSet};
use crate::dissipation::{BoxDomain, Dissipation};
use crate::fields::{Jet, ScalarField, VectorField};
use crate::linalg::CMatrix;
use crate::quantization::Cycle;
use crate::{cplx, creal, Error, Real, Result, C};
use num_traits::Zero;
use serde::{Deserialize, Serialize};

/// Named germ families; the only germs that can be written to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GermFamily {
    /// Level set `(p² + q²)/2 = energy` of the harmonic oscillator.
    Circle { energy: f64 },
    /// Gaussian point germ with phase `(i·curvature/2) q²`.
    Point { curvature: f64 },
    /// One-dimensional germ of the phase `S(q) = Σ c_k q^k` on `q ∈ domain`.
    Polynomial { coefficients: Vec<[f64; 2]>, domain: [f64; 2] },
}

impl GermFamily {
    pub fn build<T: Real>(&self) -> Result<Germ<T>> {
        match self {
            GermFamily::Circle { energy } => circle_germ(T::lit(*energy)),
            GermFamily::Point { curvature } => {
                if !(*curvature > 0.0) {
                    return Err(Error::InvalidInput("point germ curvature must be positive".into()));
                }
                let coeffs = vec![C::zero(), C::zero(), cplx(T::zero(), T::lit(0.5 * curvature))];
                Ok(polynomial_germ(&coeffs, (-T::one(), T::one()))?.with_family(self.clone()))
            }
            GermFamily::Polynomial { coefficients, domain } => {
                let coeffs: Vec<C<T>> = coefficients.iter().map(|c| cplx(T::lit(c[0]), T::lit(c[1]))).collect();
                Ok(polynomial_germ(&coeffs, (T::lit(domain[0]), T::lit(domain[1])))?.with_family(self.clone()))
            }
        }
    }
}

/// Branch `ln|z| + i·arg z` with `arg z ∈ (c − π, c + π]`.
pub(crate) fn log_branch<T: Real>(z: C<T>, centre: T) -> C<T> {
    let rot = z * C::from_polar(T::one(), -centre);
    cplx(z.norm().ln(), centre + rot.arg())
}

/// Circle germ of energy `E`: `Γ = {p² + q² = 2E}`, four sheets and four charts.
///
/// Sheet `k` sits around flow time `t = kπ/2` with `(q, p) = R(cos t, −sin t)`,
/// i.e. `z = R·e^{it}`; even sheets carry `p`-charts, odd ones `q`-charts.
pub fn circle_germ<T: Real>(energy: T) -> Result<Germ<T>> {
    if !(energy > T::zero()) {
        return Err(Error::InvalidInput("circle energy must be positive".into()));
    }
    let r = (T::lit(2.0) * energy).sqrt();
    let r2 = r * r;
    let big = BoxDomain::around(&[T::zero(), T::zero()], T::lit(4.0) * r);
    let d_field = ScalarField::analytic(2, move |x: &[T]| {
        let (p, q) = (x[0], x[1]);
        let s = p * p + q * q - r2;
        let four = T::lit(4.0);
        Jet {
            value: creal(s * s / (four * r2)),
            gradient: vec![creal(p * s / r2), creal(q * s / r2)],
            hessian: CMatrix::from_real(
                2,
                2,
                &[(s + T::lit(2.0) * p * p) / r2, T::lit(2.0) * p * q / r2, T::lit(2.0) * p * q / r2, (s + T::lit(2.0) * q * q) / r2],
            ),
        }
    });
    let dissipation = Dissipation::new(d_field, big)?;
    let zstar = ScalarField::analytic(2, move |x: &[T]| {
        let z = cplx(x[1], -x[0]);
        let zi = z.inv();
        holomorphic_jet(zi * r2, -(zi * zi) * r2, zi * zi * zi * r2 * T::lit(2.0))
    });
    let coef = cplx(T::zero(), T::lit(2.0)).inv() * r2;
    // normalised so that Im Φ = −|z|²/4 on Γ, which makes the chart phases real there
    let ln_r = r.ln();
    let shift = cplx(T::zero(), -r2 / T::lit(4.0));
    let (r1, r0, rb) = (T::lit(0.98) * r, T::lit(0.2) * r, T::lit(2.0) * r);
    let half_pi = T::FRAC_PI_2();
    let mut sheets = Vec::with_capacity(4);
    for k in 0..4usize {
        let centre = half_pi * T::of(k);
        let phi = ScalarField::analytic(2, move |x: &[T]| {
            let z = cplx(x[1], -x[0]);
            let zi = z.inv();
            holomorphic_jet((log_branch(z, centre) - creal(ln_r)) * coef + shift, zi * coef, -(zi * zi) * coef)
        });
        // (p, q) boxes: right, bottom, left, top
        let region = match k {
            0 => BoxDomain::new(vec![-r1, r0], vec![r1, rb])?,
            1 => BoxDomain::new(vec![-rb, -r1], vec![-r0, r1])?,
            2 => BoxDomain::new(vec![-r1, -rb], vec![r1, -r0])?,
            _ => BoxDomain::new(vec![r0, -r1], vec![rb, r1])?,
        };
        sheets.push(Sheet { id: k, phi, region });
    }
    let monodromy = vec![(0, creal(T::PI() * r2))];
    let zaction = ZAction::new(1, sheets, VectorField::new(vec![zstar])?, monodromy)?;
    let point_at = |t: T| vec![-r * t.sin(), r * t.cos()];
    let gamma_samples: Vec<Vec<T>> = (0..64).map(|j| point_at(T::TAU() * T::of(j) / T::of(64))).collect();
    let mut atlas: Vec<IChart<T>> = Vec::with_capacity(4);
    let extent = T::lit(0.95) * r;
    for k in 0..4usize {
        let base = point_at(half_pi * T::of(k));
        let index = if k % 2 == 0 { IndexSet::empty(1) } else { IndexSet::full(1) };
        let domain = BoxDomain::new(vec![-extent], vec![extent])?;
        atlas.push(build_chart_from_zaction(&zaction, k, &index, &base, &dissipation, domain)?);
    }
    let steps = 256;
    let mut polyline: Vec<Vec<T>> = (0..steps).map(|j| point_at(T::TAU() * T::of(j) / T::of(steps))).collect();
    polyline.push(polyline[0].clone());
    let cycle = Cycle::new(0, polyline, 0)?;
    Ok(Germ::new(dissipation, gamma_samples, atlas, zaction, vec![cycle])?
        .with_family(GermFamily::Circle { energy: energy.to_f64_lossy() }))
}

fn poly_derivs<T: Real>(c: &[C<T>], q: T) -> [C<T>; 4] {
    // value and first three derivatives by Horner-style accumulation
    let mut out = [C::zero(); 4];
    for (k, ck) in c.iter().enumerate() {
        for (d, slot) in out.iter_mut().enumerate() {
            if k >= d {
                let falling = (0..d).fold(T::one(), |acc, m| acc * T::of(k - m));
                *slot = *slot + *ck * falling * q.powi((k - d) as i32);
            }
        }
    }
    out
}

/// One-dimensional germ of a polynomial phase `S(q)` with `Im S ≥ 0`.
///
/// The dissipation is `D = Im S(q) + |p − S′(q)|²`; `Γ` is sampled where
/// `Im S = Im S′ = 0` inside the domain.
pub fn polynomial_germ<T: Real>(coefficients: &[C<T>], domain: (T, T)) -> Result<Germ<T>> {
    if coefficients.is_empty() || !(domain.0 < domain.1) {
        return Err(Error::InvalidInput("polynomial germ needs coefficients and a nonempty domain".into()));
    }
    let c = coefficients.to_vec();
    let c1 = c.clone();
    let phase = ScalarField::analytic(1, move |q: &[T]| {
        let d = poly_derivs(&c1, q[0]);
        Jet { value: d[0], gradient: vec![d[1]], hessian: CMatrix::from_rows(1, 1, vec![d[2]]) }
    });
    let c2 = c.clone();
    let d_field = ScalarField::analytic(2, move |x: &[T]| {
        let (p, q) = (x[0], x[1]);
        let d = poly_derivs(&c2, q);
        let (a, b) = (d[1].re, d[1].im);
        let (a1, b1) = (d[2].re, d[2].im);
        let (a2, b2) = (d[3].re, d[3].im);
        let two = T::lit(2.0);
        let u = p - a;
        Jet {
            value: creal(d[0].im + u * u + b * b),
            gradient: vec![creal(two * u), creal(b - two * u * a1 + two * b * b1)],
            hessian: CMatrix::from_real(
                2,
                2,
                &[two, -two * a1, -two * a1, b1 + two * a1 * a1 - two * u * a2 + two * b1 * b1 + two * b * b2],
            ),
        }
    });
    let c3 = c.clone();
    let d_chart = ScalarField::analytic(1, move |q: &[T]| {
        let d = poly_derivs(&c3, q[0]);
        let (b, b1, b2) = (d[1].im, d[2].im, d[3].im);
        let two = T::lit(2.0);
        Jet {
            value: creal(d[0].im + b * b),
            gradient: vec![creal(b + two * b * b1)],
            hessian: CMatrix::from_real(1, 1, &[b1 + two * b1 * b1 + two * b * b2]),
        }
    });
    let samples = 201;
    let mut pmax = T::zero();
    let mut gamma = Vec::new();
    for j in 0..samples {
        let q = domain.0 + (domain.1 - domain.0) * T::of(j) / T::of(samples - 1);
        let d = poly_derivs(&c, q);
        if d[0].im < -T::lit(1e-12) {
            return Err(Error::InvalidInput(format!("Im S is negative at q = {}", q)));
        }
        pmax = pmax.max(d[1].norm());
        if d[0].im + d[1].im * d[1].im <= T::lit(1e-14) {
            gamma.push(vec![d[1].re, q]);
        }
    }
    if gamma.is_empty() {
        return Err(Error::InvalidInput("the germ has no points of Γ in the domain".into()));
    }
    let mid = (domain.0 + domain.1) * T::lit(0.5);
    let base = gamma
        .iter()
        .min_by(|a, b| (a[1] - mid).abs().partial_cmp(&(b[1] - mid).abs()).unwrap_or(std::cmp::Ordering::Equal))
        .cloned()
        .expect("nonempty");
    let width = domain.1 - domain.0;
    let pad = T::one() + pmax;
    let region = BoxDomain::new(vec![-pad * T::lit(4.0), domain.0 - width], vec![pad * T::lit(4.0), domain.1 + width])?;
    let zaction = zaction_from_phase(&phase, 0, region.clone())?;
    let dissipation = Dissipation::new(d_field, region)?;
    let chart_dom = BoxDomain::new(vec![domain.0], vec![domain.1])?;
    let chart = IChart::new(IndexSet::full(1), phase, Dissipation::new(d_chart, chart_dom.clone())?, chart_dom, 0, base)?;
    Germ::new(dissipation, gamma, vec![chart], zaction, Vec::new())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartRecord {
    pub index: Vec<usize>,
    pub sheet_id: usize,
    pub domain_lo: Vec<f64>,
    pub domain_hi: Vec<f64>,
    pub base: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SheetRecord {
    pub id: usize,
    pub region_lo: Vec<f64>,
    pub region_hi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleRecord {
    pub id: usize,
    pub lift_start_sheet: usize,
    pub polyline: Vec<Vec<f64>>,
}

/// JSON form of a germ: the family fixes every function, the rest is
/// descriptive and checked on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GermDocument {
    pub format: String,
    pub version: u32,
    pub n: usize,
    pub family: GermFamily,
    pub gamma_samples: Vec<Vec<f64>>,
    pub charts: Vec<ChartRecord>,
    pub sheets: Vec<SheetRecord>,
    /// `(cycle id, Re ΔΦ, Im ΔΦ)`.
    pub monodromy: Vec<(usize, f64, f64)>,
    pub cycles: Vec<CycleRecord>,
}

const FORMAT: &str = "germcanop-germ";

fn lossy<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

impl<T: Real> Germ<T> {
    pub fn to_document(&self) -> Result<GermDocument> {
        let family =
            self.family.clone().ok_or_else(|| Error::InvalidInput("germ was built from closures and is not serializable".into()))?;
        Ok(GermDocument {
            format: FORMAT.into(),
            version: 1,
            n: self.n,
            family,
            gamma_samples: self.gamma_samples.iter().map(|g| lossy(g)).collect(),
            charts: self
                .atlas
                .iter()
                .map(|c| ChartRecord {
                    index: c.index.members().to_vec(),
                    sheet_id: c.sheet_id,
                    domain_lo: lossy(&c.domain.lo),
                    domain_hi: lossy(&c.domain.hi),
                    base: lossy(&c.base),
                })
                .collect(),
            sheets: self
                .zaction
                .sheets
                .iter()
                .map(|s| SheetRecord { id: s.id, region_lo: lossy(&s.region.lo), region_hi: lossy(&s.region.hi) })
                .collect(),
            monodromy: self.zaction.monodromy.iter().map(|(id, v)| (*id, v.re.to_f64_lossy(), v.im.to_f64_lossy())).collect(),
            cycles: self
                .cycles
                .iter()
                .map(|c| CycleRecord {
                    id: c.id,
                    lift_start_sheet: c.lift_start_sheet,
                    polyline: c.polyline.iter().map(|p| lossy(p)).collect(),
                })
                .collect(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.to_document()?).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    /// Rebuilds a germ from its family and checks the recorded structure.
    pub fn from_document(doc: &GermDocument) -> Result<Self> {
        if doc.format != FORMAT {
            return Err(Error::InvalidInput(format!("unexpected document format {:?}", doc.format)));
        }
        let germ: Germ<T> = doc.family.build()?;
        if germ.n != doc.n || germ.atlas.len() != doc.charts.len() || germ.zaction.sheets.len() != doc.sheets.len() {
            return Err(Error::InvalidInput("document structure does not match its family".into()));
        }
        for (c, rec) in germ.atlas.iter().zip(&doc.charts) {
            if c.index.members() != rec.index.as_slice() || c.sheet_id != rec.sheet_id {
                return Err(Error::InvalidInput("chart records do not match the family atlas".into()));
            }
        }
        Ok(germ)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GermDocument = serde_json::from_str(text).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Self::from_document(&doc)
    }
}
