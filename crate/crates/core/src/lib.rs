//! Numerical toolkit for positive complex Lagrangian germs known to minimal
//! accuracy, and for the first-order Maslov canonical operator built on them.
//!
//! The crate is organised bottom-up:
//!
//! - [`fields`]: smooth complex-valued maps with value/gradient/Hessian queries.
//! - [`dissipation`]: dissipations, sampled ideal-membership tests and the
//!   implicit-function reductions to graph and parametric form.
//! - [`germ`]: index sets, I-charts, z-actions, chart transitions and the
//!   built-in germ families (circle, point, polynomial phase).
//! - [`transform`]: the complex stationary-phase kernel and positive canonical
//!   transformations.
//! - [`quantization`]: variations along cycles and the quantization condition.
//! - [`canop`]: volume forms, chart densities and the canonical operator on grids.
//! - [`pdo`]: 1/h-pseudodifferential Hamiltonians, commutation residuals and
//!   the transport operator.
//!
//! All numerical code is generic over the real scalar type through [`Real`];
//! `f64` aliases are exported at the crate root for the common case.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the component formulas they implement.
#![allow(clippy::needless_range_loop, clippy::type_complexity)]

pub mod canop;
pub mod dissipation;
pub mod error;
pub mod fields;
pub mod germ;
pub mod linalg;
pub mod minimize;
pub mod pdo;
pub mod quantization;
pub mod transform;

pub use error::{Error, Result};
pub use num_complex::Complex;

use std::fmt::{Debug, Display};

/// Real scalar type the library is generic over (implemented for `f32` and `f64`).
pub trait Real:
    num_traits::Float + num_traits::FloatConst + num_traits::FromPrimitive + Debug + Display + Default + std::iter::Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal into this type.
    fn lit(x: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(x).expect("f64 literal fits the scalar type")
    }

    /// Converts a count into this type.
    fn of(n: usize) -> Self {
        <Self as num_traits::FromPrimitive>::from_usize(n).expect("count fits the scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Complex scalar over a [`Real`].
pub type C<T> = Complex<T>;

pub(crate) fn cplx<T: Real>(re: T, im: T) -> C<T> {
    Complex::new(re, im)
}

pub(crate) fn creal<T: Real>(re: T) -> C<T> {
    Complex::new(re, T::zero())
}

pub(crate) fn imag_unit<T: Real>() -> C<T> {
    Complex::new(T::zero(), T::one())
}

pub type ScalarField64 = fields::ScalarField<f64>;
pub type VectorField64 = fields::VectorField<f64>;
pub type Jet64 = fields::Jet<f64>;
pub type BoxDomain64 = dissipation::BoxDomain<f64>;
pub type Dissipation64 = dissipation::Dissipation<f64>;
pub type GraphPresentation64 = dissipation::GraphPresentation<f64>;
pub type IChart64 = germ::IChart<f64>;
pub type ZAction64 = germ::ZAction<f64>;
pub type Germ64 = germ::Germ<f64>;
pub type StationaryResult64 = transform::StationaryResult<f64>;
pub type CanonicalTransform64 = transform::CanonicalTransform<f64>;
pub type Cycle64 = quantization::Cycle<f64>;
pub type VolumeForm64 = canop::VolumeForm<f64>;
pub type WaveFunction64 = canop::WaveFunction<f64>;
pub type Grid64 = canop::Grid<f64>;
pub type Amplitude64 = canop::Amplitude<f64>;
pub type HamiltonianSymbol64 = pdo::HamiltonianSymbol<f64>;
pub type CMatrix64 = linalg::CMatrix<f64>;

pub type ScalarField32 = fields::ScalarField<f32>;
pub type Dissipation32 = dissipation::Dissipation<f32>;
pub type WaveFunction32 = canop::WaveFunction<f32>;
