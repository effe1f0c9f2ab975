//! Scenario configuration: a JSON document validated against [`ScenarioConfig`].

use germcanop::germ::GermFamily;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

/// Largest grid the runner will build.
pub const MAX_GRID_NODES: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Admissible energies of the circle family at each `h`.
    Quantize,
    /// Canonical operator of a single-chart germ with unit amplitude.
    GaussianPacket,
    /// Position-to-momentum transition of a one-dimensional phase.
    TransitionCheck,
    /// Commutation residual of the harmonic symbol over a list of `h`.
    ResidualScan,
    /// Harmonic-flow canonical transform of a germ and its quantization.
    TransformCheck,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Quantize => "quantize",
            Scenario::GaussianPacket => "gaussian-packet",
            Scenario::TransitionCheck => "transition-check",
            Scenario::ResidualScan => "residual-scan",
            Scenario::TransformCheck => "transform-check",
        }
    }
}

/// Mirror of [`GermFamily`] with a published schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GermSpec {
    /// Level set `(p² + q²)/2 = energy`.
    Circle { energy: f64 },
    /// Gaussian with phase `(i·curvature/2) q²`.
    Point { curvature: f64 },
    /// Phase `Σ c_k q^k` with `c_k = [re, im]`, on `q ∈ domain`.
    Polynomial { coefficients: Vec<[f64; 2]>, domain: [f64; 2] },
}

impl From<&GermSpec> for GermFamily {
    fn from(g: &GermSpec) -> Self {
        match g {
            GermSpec::Circle { energy } => GermFamily::Circle { energy: *energy },
            GermSpec::Point { curvature } => GermFamily::Point { curvature: *curvature },
            GermSpec::Polynomial { coefficients, domain } => GermFamily::Polynomial { coefficients: coefficients.clone(), domain: *domain },
        }
    }
}

/// Uniform one-dimensional grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lower: f64,
    pub upper: f64,
    pub nodes: usize,
}

/// Amplitude fed to the canonical operator in `residual-scan`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum AmplitudeSpec {
    /// Solution of the transport equation started at 1.
    #[default]
    Transported,
    /// `φ = 1 + cos t / 2` along the circle; not a transport solution.
    Untransported,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Deviation of admissible energies from the lattice `h(n + ½)`.
    pub energy: f64,
    /// Cycle residual of the quantization condition.
    pub quantization: f64,
    /// Pointwise error of the transition phase against the Legendre oracle.
    pub transition: f64,
    /// Relative error of the Gaussian packet on the inner half of its chart.
    pub packet: f64,
    /// Dissipation of the image germ at mapped points of `Γ`.
    pub transform: f64,
    /// Lower bound on the fitted log₂-slope in `residual-scan`; unchecked when absent.
    pub min_slope: Option<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { energy: 1e-8, quantization: 1e-6, transition: 1e-10, packet: 1e-6, transform: 1e-10, min_slope: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    /// CSV table, relative to the output directory; defaults to `<scenario>.csv`.
    pub table: Option<String>,
    /// JSON summary, relative to the output directory; defaults to `summary.json`.
    pub summary: Option<String>,
    /// Wave function dump for `gaussian-packet`: `.csv` for text, anything else binary.
    /// With several `h` values the index is inserted before the extension.
    pub wavefunction: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub germ: GermSpec,
    /// Single semiclassical parameter; exclusive with `h_list`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_list: Option<Vec<f64>>,
    /// Position grid (or momentum samples for `transition-check`); scenario default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    /// Energy window scanned by `quantize`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_range: Option<[f64; 2]>,
    #[serde(default)]
    pub amplitude: AmplitudeSpec,
    /// Flow time of the canonical transform in `transform-check`.
    #[serde(default = "quarter_turn_time")]
    pub transform_time: f64,
    /// Number of random test points in `transform-check`.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub outputs: Outputs,
}

fn quarter_turn_time() -> f64 {
    FRAC_PI_2
}

fn default_samples() -> usize {
    16
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The `h` values to run, in the order given.
    pub fn h_values(&self) -> Vec<f64> {
        match (&self.h, &self.h_list) {
            (Some(h), _) => vec![*h],
            (None, Some(list)) => list.clone(),
            (None, None) => Vec::new(),
        }
    }

    pub fn table_name(&self) -> String {
        self.outputs.table.clone().unwrap_or_else(|| format!("{}.csv", self.scenario.name()))
    }

    pub fn summary_name(&self) -> String {
        self.outputs.summary.clone().unwrap_or_else(|| "summary.json".into())
    }

    /// Checks that go beyond the schema: ranges and per-scenario requirements.
    pub fn validate(&self) -> Result<(), String> {
        match (&self.h, &self.h_list) {
            (Some(_), Some(_)) => return Err("give either `h` or `h_list`, not both".into()),
            (None, None) => return Err("one of `h` or `h_list` is required".into()),
            (None, Some(list)) if list.is_empty() => return Err("`h_list` is empty".into()),
            _ => {}
        }
        if self.h_values().iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err("every h must be positive and finite".into());
        }
        match &self.germ {
            GermSpec::Circle { energy } if !(*energy > 0.0) => return Err("circle energy must be positive".into()),
            GermSpec::Point { curvature } if !(*curvature > 0.0) => return Err("point curvature must be positive".into()),
            GermSpec::Polynomial { coefficients, domain } => {
                if coefficients.len() < 3 {
                    return Err("polynomial phase needs at least a quadratic term".into());
                }
                if !(domain[0] < domain[1]) {
                    return Err("polynomial domain must satisfy lower < upper".into());
                }
            }
            _ => {}
        }
        if let Some(g) = &self.grid {
            if !(g.lower < g.upper) || g.nodes < 2 || g.nodes > MAX_GRID_NODES {
                return Err(format!("grid needs lower < upper and 2 ≤ nodes ≤ {MAX_GRID_NODES}"));
            }
        }
        let t = &self.tolerances;
        if [t.energy, t.quantization, t.transition, t.packet, t.transform].iter().any(|x| !(*x > 0.0)) {
            return Err("tolerances must be positive".into());
        }
        let circle = matches!(self.germ, GermSpec::Circle { .. });
        match self.scenario {
            Scenario::Quantize => {
                if !circle {
                    return Err("quantize scans the circle family; use a circle germ".into());
                }
                match self.energy_range {
                    Some([a, b]) if 0.0 < a && a <= b => {}
                    Some(_) => return Err("energy_range must satisfy 0 < lower ≤ upper".into()),
                    None => return Err("quantize needs `energy_range`".into()),
                }
            }
            Scenario::GaussianPacket | Scenario::TransitionCheck => {
                if circle {
                    return Err(format!("{} needs a point or polynomial germ", self.scenario.name()));
                }
            }
            Scenario::ResidualScan => {
                if !circle {
                    return Err("residual-scan runs on the circle germ".into());
                }
                if self.h_values().len() < 2 && self.tolerances.min_slope.is_some() {
                    return Err("a slope check needs at least two h values".into());
                }
            }
            Scenario::TransformCheck => {
                if matches!(self.germ, GermSpec::Polynomial { .. }) {
                    return Err("transform-check needs a circle or point germ".into());
                }
                if !self.transform_time.is_finite() || self.samples == 0 {
                    return Err("transform_time must be finite and samples positive".into());
                }
            }
        }
        Ok(())
    }
}

/// JSON schema of [`ScenarioConfig`].
pub fn schema_json() -> String {
    serde_json::to_string_pretty(&schemars::schema_for!(ScenarioConfig)).expect("schema serializes")
}
