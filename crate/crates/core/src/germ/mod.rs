//! Positive Lagrangian germs: index sets, I-charts and their phases, the
//! z-action, chart transitions and positivity, and the built-in families.

mod chart;
mod family;
mod index;
mod zaction;

pub use chart::{
    build_chart_from_zaction, consistency_check, positivity_bounds, positivity_check, transition_phase, ConsistencyReport, FootFn, IChart,
    Identification, LagrangianChart, LagrangianReport,
};
pub use family::{circle_germ, polynomial_germ, GermDocument, GermFamily};
pub use index::{select_nonsingular_index, IndexSet};
pub use zaction::{check_zaction, holomorphic_jet, z_of, zaction_from_iphase, zaction_from_phase, Sheet, ZAction, ZActionReport, ZStarJet};

use crate::dissipation::Dissipation;
use crate::quantization::Cycle;
use crate::{Error, Real, Result};

/// Positive asymptotic Lagrangian germ in `R^{2n}` with coordinates `(p, q)`.
#[derive(Clone, Debug)]
pub struct Germ<T> {
    pub n: usize,
    pub dissipation: Dissipation<T>,
    /// Points of `Γ`.
    pub gamma_samples: Vec<Vec<T>>,
    pub atlas: Vec<IChart<T>>,
    pub zaction: ZAction<T>,
    pub cycles: Vec<Cycle<T>>,
    /// Named family this germ was built from (required for serialization).
    pub family: Option<GermFamily>,
}

/// Dissipation level below which a chart is considered to cover a point of `Γ`.
pub const COVER_TOL: f64 = 1e-10;

impl<T: Real> Germ<T> {
    pub fn new(
        dissipation: Dissipation<T>,
        gamma_samples: Vec<Vec<T>>,
        atlas: Vec<IChart<T>>,
        zaction: ZAction<T>,
        cycles: Vec<Cycle<T>>,
    ) -> Result<Self> {
        let n = zaction.n;
        if dissipation.dim() != 2 * n {
            return Err(Error::InvalidInput("germ dissipation must live on R^{2n}".into()));
        }
        if atlas.iter().any(|c| c.n() != n) || gamma_samples.iter().any(|g| g.len() != 2 * n) {
            return Err(Error::InvalidInput("atlas charts and Γ samples must have dimension n".into()));
        }
        Ok(Self { n, dissipation, gamma_samples, atlas, zaction, cycles, family: None })
    }

    pub fn with_family(mut self, family: GermFamily) -> Self {
        self.family = Some(family);
        self
    }

    /// Charts whose domain contains the projection of `point` and whose
    /// dissipation vanishes there.
    pub fn covering_charts(&self, point: &[T]) -> Vec<usize> {
        self.atlas
            .iter()
            .enumerate()
            .filter(|(_, c)| {
                let y = c.index.chart_coords(point);
                c.domain.contains(&y) && c.dissipation.value(&y).is_ok_and(|d| d <= T::lit(COVER_TOL))
            })
            .map(|(k, _)| k)
            .collect()
    }

    /// Verifies that every stored `Γ` sample is covered by some chart.
    pub fn check_coverage(&self) -> Result<()> {
        for g in &self.gamma_samples {
            if self.covering_charts(g).is_empty() {
                return Err(Error::InvalidInput(format!("Γ sample {:?} is not covered by the atlas", g)));
            }
        }
        Ok(())
    }

    pub fn cycle(&self, id: usize) -> Option<&Cycle<T>> {
        self.cycles.iter().find(|c| c.id == id)
    }
}
