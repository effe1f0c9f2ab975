use crate::dissipation::{membership_from_values, BoxDomain, Dissipation, MembershipOptions};
use crate::fields::{DerivativeMode, Jet, ScalarField, VectorField};
use crate::germ::IndexSet;
use crate::linalg::CMatrix;
use crate::{cplx, creal, imag_unit, Error, Real, Result, C};
use num_traits::{One, Zero};

/// One branch of the z-action over a box of phase space.
#[derive(Clone, Debug)]
pub struct Sheet<T> {
    pub id: usize,
    /// `Φ` on this sheet, a function of `(p, q)`.
    pub phi: ScalarField<T>,
    /// Box in `(p, q)` on which this branch is continuous.
    pub region: BoxDomain<T>,
}

/// Multivalued primitive `Φ` with `dΦ = (1/2i) Z*·dz` modulo `O(D)`.
///
/// Branches are stored as finitely many sheets; crossing a cycle changes
/// `Φ` by the recorded monodromy constant.
#[derive(Clone, Debug)]
pub struct ZAction<T> {
    pub n: usize,
    pub sheets: Vec<Sheet<T>>,
    pub zstar: VectorField<T>,
    /// `(cycle id, ΔΦ)` pairs.
    pub monodromy: Vec<(usize, C<T>)>,
}

/// `Z*`, `∂Z*/∂z` and `∂Z*/∂z̄` at a point.
#[derive(Clone, Debug)]
pub struct ZStarJet<T> {
    pub value: Vec<C<T>>,
    pub dz: CMatrix<T>,
    pub dzbar: CMatrix<T>,
}

impl<T: Real> ZAction<T> {
    pub fn new(n: usize, sheets: Vec<Sheet<T>>, zstar: VectorField<T>, monodromy: Vec<(usize, C<T>)>) -> Result<Self> {
        if sheets.is_empty() {
            return Err(Error::InvalidInput("a z-action needs at least one sheet".into()));
        }
        if zstar.dim() != 2 * n || zstar.codim() != n {
            return Err(Error::InvalidInput("Z* must map R^{2n} to C^n".into()));
        }
        for s in &sheets {
            if s.phi.dim() != 2 * n || s.region.dim() != 2 * n {
                return Err(Error::InvalidInput(format!("sheet {} does not live on R^{{2n}}", s.id)));
            }
        }
        Ok(Self { n, sheets, zstar, monodromy })
    }

    pub fn sheet(&self, id: usize) -> Result<&Sheet<T>> {
        self.sheets.iter().find(|s| s.id == id).ok_or_else(|| Error::InvalidInput(format!("no sheet with id {}", id)))
    }

    /// Ids of the sheets whose region contains `point`.
    pub fn sheets_at(&self, point: &[T]) -> Vec<usize> {
        self.sheets.iter().filter(|s| s.region.contains(point)).map(|s| s.id).collect()
    }

    pub fn phi(&self, sheet: usize, point: &[T]) -> Result<C<T>> {
        self.sheet(sheet)?.phi.try_value(point)
    }

    /// Wirtinger derivatives of `Z*`: `∂_z = ½(∂_q + i∂_p)`, `∂_z̄ = ½(∂_q − i∂_p)`.
    pub fn zstar_jet(&self, point: &[T]) -> Result<ZStarJet<T>> {
        let n = self.n;
        let value = self.zstar.eval(point)?;
        let jac = self.zstar.jacobian(point)?;
        let half = T::lit(0.5);
        let i = imag_unit::<T>();
        let dz = CMatrix::from_fn(n, n, |j, k| (jac[(j, n + k)] + i * jac[(j, k)]) * half);
        let dzbar = CMatrix::from_fn(n, n, |j, k| (jac[(j, n + k)] - i * jac[(j, k)]) * half);
        Ok(ZStarJet { value, dz, dzbar })
    }

    pub fn monodromy_of(&self, cycle_id: usize) -> Option<C<T>> {
        self.monodromy.iter().find(|m| m.0 == cycle_id).map(|m| m.1)
    }
}

/// `z = q − ip` of a phase point `(p, q)`.
pub fn z_of<T: Real>(point: &[T]) -> Vec<C<T>> {
    let n = point.len() / 2;
    (0..n).map(|j| cplx(point[n + j], -point[j])).collect()
}

/// Jet over `(p, q) ∈ R²` of `f(z)` with `z = q − ip`, given `f, f′, f″` at `z`.
pub fn holomorphic_jet<T: Real>(f: C<T>, df: C<T>, d2f: C<T>) -> Jet<T> {
    let dzdp = cplx(T::zero(), -T::one());
    let dzdq = C::one();
    let zs = [dzdp, dzdq];
    Jet { value: f, gradient: vec![df * dzdp, df * dzdq], hessian: CMatrix::from_fn(2, 2, |a, b| d2f * zs[a] * zs[b]) }
}

/// Sampled constants of the three z-action conditions.
#[derive(Clone, Debug, PartialEq)]
pub struct ZActionReport<T> {
    /// `|dΦ − (1/2i)Z*dz| ≤ c·D`.
    pub differential_constant: T,
    pub differential_holds: bool,
    /// `|z̄ − Z*| ≤ c·D^{1/2}`.
    pub conjugate_constant: T,
    pub conjugate_holds: bool,
    /// Worst deviation of `Φ_a − Φ_b` from its value at the closest `Γ` sample,
    /// relative to `D^{3/2}`, over overlapping sheet pairs.
    pub sheet_constant: T,
}

/// Checks the z-action conditions on samples near `Γ` (each sample is
/// evaluated on every sheet whose region contains it).
pub fn check_zaction<T: Real>(za: &ZAction<T>, d: &Dissipation<T>, samples: &[Vec<T>]) -> Result<ZActionReport<T>> {
    let n = za.n;
    let half_i = cplx(T::zero(), T::lit(2.0)).inv();
    let mut diff = Vec::new();
    let mut conj = Vec::new();
    let mut used = Vec::new();
    for x in samples {
        let dv = d.value(x)?;
        let zs = za.zstar.eval(x)?;
        let z = z_of(x);
        for id in za.sheets_at(x) {
            let phi = &za.sheet(id)?.phi;
            let g = phi.gradient(x)?;
            // finite-difference gradients carry roundoff that must not count as a violation
            let noise = match phi.mode() {
                DerivativeMode::Analytic => T::zero(),
                DerivativeMode::FiniteDifference { .. } => {
                    T::epsilon().sqrt() * (T::one() + phi.value(x).norm() + zs.iter().fold(T::zero(), |m, v| m.max(v.norm())))
                }
            };
            let mut r = T::zero();
            for j in 0..n {
                let rq = g[n + j] - zs[j] * half_i;
                let rp = g[j] + zs[j] * T::lit(0.5);
                r = r + rq.norm_sqr() + rp.norm_sqr();
            }
            let r = r.sqrt();
            diff.push((if r <= noise { T::zero() } else { r }, dv));
            used.push(x.clone());
        }
        let c = zs.iter().zip(&z).map(|(a, b)| (b.conj() - *a).norm_sqr()).sum::<T>().sqrt();
        conj.push((c, dv));
    }
    let opts = MembershipOptions { cap: T::lit(1e6), growth_cap: T::infinity() };
    let m1 = membership_from_values(&diff, &used, T::one(), &opts)?;
    let m2 = membership_from_values(&conj, samples, T::lit(0.5), &opts)?;

    let mut sheet_constant = T::zero();
    for (a, sa) in za.sheets.iter().enumerate() {
        for sb in za.sheets.iter().skip(a + 1) {
            let shared: Vec<&Vec<T>> = samples.iter().filter(|x| sa.region.contains(x) && sb.region.contains(x)).collect();
            let mut anchor: Option<(T, C<T>)> = None;
            for x in &shared {
                let dv = d.value(x)?;
                let delta = sa.phi.try_value(x)? - sb.phi.try_value(x)?;
                if anchor.is_none_or(|(d0, _)| dv < d0) {
                    anchor = Some((dv, delta));
                }
            }
            if let Some((_, c0)) = anchor {
                for x in &shared {
                    let dv = d.value(x)?;
                    let dev = (sa.phi.try_value(x)? - sb.phi.try_value(x)? - c0).norm();
                    if dv > T::zero() {
                        sheet_constant = sheet_constant.max(dev / dv.powf(T::lit(1.5)));
                    } else if dev > T::lit(1e-10) {
                        sheet_constant = T::infinity();
                    }
                }
            }
        }
    }
    Ok(ZActionReport {
        differential_constant: m1.constant,
        differential_holds: m1.holds,
        conjugate_constant: m2.constant,
        conjugate_holds: m2.holds,
        sheet_constant,
    })
}

struct PhaseData<T> {
    s: C<T>,
    ds: Vec<C<T>>,
    m: CMatrix<T>,
}

fn phase_data<T: Real>(phase: &ScalarField<T>, q: &[T]) -> Result<PhaseData<T>> {
    let n = q.len();
    let jet = phase.eval_jet(q)?;
    let i = imag_unit::<T>();
    let minus = CMatrix::from_fn(n, n, |a, b| if a == b { C::<T>::one() } else { C::<T>::zero() } - i * jet.hessian[(a, b)]);
    let plus = CMatrix::from_fn(n, n, |a, b| if a == b { C::<T>::one() } else { C::<T>::zero() } + i * jet.hessian[(a, b)]);
    let inv = minus.inverse().ok_or_else(|| Error::PositivityViolation(format!("1 − i·S″ is singular at q = {:?}", q)))?;
    Ok(PhaseData { s: jet.value, ds: jet.gradient, m: &inv * &plus })
}

fn bilinear<T: Real>(a: &[C<T>], b: &[C<T>]) -> C<T> {
    a.iter().zip(b).fold(C::zero(), |acc, (x, y)| acc + *x * *y)
}

/// `Φ` and `Z*` generated by a nonsingular phase `S(q)` at `(p, q)`.
///
/// `Φ = S − ½⟨p, q + iS′⟩ + (q² − S′²)/4i − (1/4i)⟨p − S′, M(p − S′)⟩` and
/// `Z* = q + iS′ − iM(p − S′)` with `M = (1 − iS″)⁻¹(1 + iS″)`.
fn phase_zaction_at<T: Real>(phase: &ScalarField<T>, point: &[T]) -> Result<(C<T>, Vec<C<T>>)> {
    let n = point.len() / 2;
    let p: Vec<C<T>> = point[..n].iter().map(|v| creal(*v)).collect();
    let q: Vec<C<T>> = point[n..].iter().map(|v| creal(*v)).collect();
    let data = phase_data(phase, &point[n..])?;
    let i = imag_unit::<T>();
    let four_i_inv = cplx(T::zero(), T::lit(4.0)).inv();
    let q_is: Vec<C<T>> = q.iter().zip(&data.ds).map(|(a, b)| *a + i * *b).collect();
    let r: Vec<C<T>> = p.iter().zip(&data.ds).map(|(a, b)| *a - *b).collect();
    let mr = data.m.mul_vec(&r);
    let phi = data.s - bilinear(&p, &q_is) * T::lit(0.5) + (bilinear(&q, &q) - bilinear(&data.ds, &data.ds)) * four_i_inv
        - bilinear(&r, &mr) * four_i_inv;
    let zstar = q_is.iter().zip(&mr).map(|(a, b)| *a - i * *b).collect();
    Ok((phi, zstar))
}

/// Single-sheet z-action of a germ given by a nonsingular phase `S(q)`.
pub fn zaction_from_phase<T: Real>(phase: &ScalarField<T>, sheet_id: usize, region: BoxDomain<T>) -> Result<ZAction<T>> {
    zaction_from_iphase(phase, &IndexSet::full(phase.dim()), sheet_id, region)
}

/// Single-sheet z-action of a germ given by an I-phase `S_I(q_I, p_Ī)`,
/// obtained by the rotation `γ_I` from the pure `q`-chart formula.
pub fn zaction_from_iphase<T: Real>(phase: &ScalarField<T>, index: &IndexSet, sheet_id: usize, region: BoxDomain<T>) -> Result<ZAction<T>> {
    let n = phase.dim();
    if index.n() != n || region.dim() != 2 * n {
        return Err(Error::InvalidInput("phase, index set and region dimensions disagree".into()));
    }
    let centre = index.gamma(&region.center());
    phase_data(phase, &centre[n..])?;
    let (s1, ix1) = (phase.clone(), index.clone());
    let phi = ScalarField::new(2 * n, move |x| phase_zaction_at(&s1, &ix1.gamma(x)).map(|r| r.0).unwrap_or(C::new(T::nan(), T::nan())));
    let mut comps = Vec::with_capacity(n);
    for j in 0..n {
        let (s2, ix2) = (phase.clone(), index.clone());
        let rotate = !index.contains(j);
        comps.push(ScalarField::new(2 * n, move |x| match phase_zaction_at(&s2, &ix2.gamma(x)) {
            Ok((_, z)) => {
                if rotate {
                    imag_unit::<T>() * z[j]
                } else {
                    z[j]
                }
            }
            Err(_) => C::new(T::nan(), T::nan()),
        }));
    }
    ZAction::new(n, vec![Sheet { id: sheet_id, phi, region }], VectorField::new(comps)?, Vec::new())
}
