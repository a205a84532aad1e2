//! Experiment configuration (TOML).

use serde::{Deserialize, Serialize};

use crate::contraction::{AxiomSettings, ContractionKind, ZoomingContraction};
use crate::error::{Error, Result};
use crate::measures::ZoomingFlag;
use crate::potentials::Potential;
use crate::pressure::{CaratheodorySettings, EntropySettings, GridSettings};
use crate::system::{BaseProcess, FiberMap, Phase, RandomSystem, Realization};
use crate::zooming::ZoomingConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    pub system: SystemConfig,
    pub contraction: Option<ContractionConfig>,
    #[serde(default = "null_potential")]
    pub potential: Potential,
    #[serde(default)]
    pub axioms: AxiomsConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub zooming: ZoomingSection,
    #[serde(default)]
    pub pressure: PressureConfig,
    #[serde(default)]
    pub entropy: EntropyConfig,
    #[serde(default)]
    pub equilibrium: EquilibriumConfig,
    #[serde(default)]
    pub potential_gap: Option<PotentialGapConfig>,
    #[serde(default)]
    pub verify_vp: VerifyConfig,
}

fn null_potential() -> Potential {
    Potential::Null
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub phase: Phase,
    /// Symbol probabilities; a single fiber needs none.
    pub probabilities: Option<Vec<f64>>,
    /// Explicit base word, extended periodically, instead of i.i.d. draws.
    pub word: Option<Vec<usize>>,
    pub fibers: Vec<FiberMap>,
}

impl SystemConfig {
    pub fn build(&self) -> Result<RandomSystem> {
        let k = self.fibers.len();
        let probabilities = match &self.probabilities {
            Some(p) => p.clone(),
            None if k == 1 => vec![1.0],
            None => return Err(Error::Config("several fibers need explicit probabilities".into())),
        };
        let realization = match &self.word {
            Some(w) if w.is_empty() => return Err(Error::Config("explicit base word is empty".into())),
            Some(w) => Realization::Word { symbols: w.clone() },
            None => Realization::Iid,
        };
        RandomSystem::new(BaseProcess::new(probabilities, realization)?, self.fibers.clone(), self.phase)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionConfig {
    #[serde(flatten)]
    pub kind: ContractionKind,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

fn default_horizon() -> usize {
    1000
}

impl ContractionConfig {
    pub fn build(&self) -> Result<ZoomingContraction> {
        if self.horizon == 0 {
            return Err(Error::Config("contraction horizon must be positive".into()));
        }
        Ok(ZoomingContraction { kind: self.kind, horizon: self.horizon })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AxiomsConfig {
    pub samples: usize,
    pub r_max: f64,
    pub summability_grid: usize,
    pub tail_bound: f64,
}

impl Default for AxiomsConfig {
    fn default() -> Self {
        let s = AxiomSettings::default();
        Self { samples: 10_000, r_max: s.r_max, summability_grid: s.summability_grid, tail_bound: s.tail_bound }
    }
}

impl AxiomsConfig {
    pub fn settings(&self) -> AxiomSettings {
        AxiomSettings { r_max: self.r_max, summability_grid: self.summability_grid, tail_bound: self.tail_bound }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Starting point; drawn from the seed when absent.
    pub x0: Option<f64>,
    pub length: usize,
    pub orbits: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { x0: None, length: 100, orbits: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZoomingSection {
    pub delta: f64,
    pub grid: usize,
    pub pliss_margin: Option<f64>,
    pub confirm: bool,
    /// Orbit whose detected times are reported in full.
    pub x0: Option<f64>,
    pub orbit_length: usize,
    pub points: usize,
    pub threshold: f64,
    pub pairs: usize,
    pub epsilon: f64,
    pub initial_distance: f64,
    pub expansivity_horizon: usize,
    pub slow_delta: f64,
    pub slow_length: usize,
    pub slow_orbits: usize,
}

impl Default for ZoomingSection {
    fn default() -> Self {
        Self {
            delta: 0.1,
            grid: 16,
            pliss_margin: None,
            confirm: true,
            x0: None,
            orbit_length: 200,
            points: 100,
            threshold: 0.05,
            pairs: 1000,
            epsilon: 0.1,
            initial_distance: 1.0 / 1024.0,
            expansivity_horizon: 200,
            slow_delta: 1e-3,
            slow_length: 10_000,
            slow_orbits: 20,
        }
    }
}

impl ZoomingSection {
    pub fn build(&self, contraction: ZoomingContraction, phase: Phase) -> Result<ZoomingConfig> {
        let mut cfg = ZoomingConfig::new(contraction, self.delta, self.grid);
        if let (Some(m), ContractionKind::Exponential { .. }) = (self.pliss_margin, contraction.kind) {
            cfg.pliss_margin = Some(m);
        }
        cfg.confirm = self.confirm;
        cfg.validate(phase)?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if self.epsilon > self.delta {
            return Err(Error::Config(format!("expansivity epsilon {} exceeds delta {}", self.epsilon, self.delta)));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PressureConfig {
    pub eps: Vec<f64>,
    pub n: Vec<usize>,
    pub samples: usize,
    pub grid_factor: f64,
    pub max_grid: usize,
    pub caratheodory: CaratheodoryConfig,
}

impl Default for PressureConfig {
    fn default() -> Self {
        let g = GridSettings::default();
        Self {
            eps: (4..=8).map(|k| 2f64.powi(-k)).collect(),
            n: vec![4, 6, 8, 10, 12],
            samples: 20,
            grid_factor: g.grid_factor,
            max_grid: g.max_grid,
            caratheodory: CaratheodoryConfig::default(),
        }
    }
}

impl PressureConfig {
    pub fn grid(&self) -> GridSettings {
        GridSettings { grid_factor: self.grid_factor, max_grid: self.max_grid }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Full,
    Zooming,
    NonZooming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaratheodoryConfig {
    pub enabled: bool,
    pub eps: f64,
    pub n_min: usize,
    pub span: usize,
    pub beta_bracket: (f64, f64),
    pub beta_cap: f64,
    pub tolerance: f64,
    pub words: usize,
    pub subset: Subset,
    /// Horizon of the zooming classification used for restricted subsets.
    pub classify_horizon: usize,
}

impl Default for CaratheodoryConfig {
    fn default() -> Self {
        let s = CaratheodorySettings::default();
        Self {
            enabled: true,
            eps: s.eps,
            n_min: s.n_min,
            span: s.span,
            beta_bracket: s.beta_bracket,
            beta_cap: s.beta_cap,
            tolerance: s.tolerance,
            words: 4,
            subset: Subset::Full,
            classify_horizon: 20,
        }
    }
}

impl CaratheodoryConfig {
    pub fn settings(&self, grid: GridSettings) -> CaratheodorySettings {
        CaratheodorySettings {
            eps: self.eps,
            n_min: self.n_min,
            span: self.span,
            beta_bracket: self.beta_bracket,
            beta_cap: self.beta_cap,
            tolerance: self.tolerance,
            grid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropyConfig {
    pub cells: usize,
    pub depth: usize,
    pub samples: usize,
    pub measure: CandidateSpec,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        Self { cells: 64, depth: 10, samples: 8, measure: CandidateSpec::Ulam { flag: None } }
    }
}

impl EntropyConfig {
    pub fn settings(&self, seed: u64) -> EntropySettings {
        EntropySettings { cells: self.cells, depth: self.depth, samples: self.samples, seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquilibriumConfig {
    pub cells: usize,
    pub words: usize,
    pub length: usize,
    pub burn_in: usize,
}

impl Default for EquilibriumConfig {
    fn default() -> Self {
        Self { cells: 256, words: 200, length: 500, burn_in: crate::equilibrium::DEFAULT_BURN_IN }
    }
}

/// A candidate measure described in the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CandidateSpec {
    Dirac {
        #[serde(default)]
        symbol: usize,
        point: f64,
        flag: Option<ZoomingFlag>,
    },
    Periodic {
        word: Vec<usize>,
        branches: Vec<usize>,
        flag: Option<ZoomingFlag>,
    },
    Empirical {
        x0: f64,
        length: usize,
        #[serde(default)]
        burn_in: usize,
        flag: Option<ZoomingFlag>,
    },
    /// Ulam equilibrium state of the active potential.
    Ulam { flag: Option<ZoomingFlag> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialGapConfig {
    /// Build the fixed-point bump potential instead of using `[potential]`.
    #[serde(default)]
    pub construct: Option<ConstructConfig>,
    pub zooming: Vec<CandidateSpec>,
    pub non_zooming: Vec<CandidateSpec>,
    #[serde(default)]
    pub hyperbolicity: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructConfig {
    pub x0: f64,
    pub rho: f64,
    /// Topological entropy estimate; the separated-set pressure of `φ = 0`
    /// is used when absent.
    pub h_top: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub tolerance: f64,
    pub candidates: Vec<CandidateSpec>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { tolerance: 0.05, candidates: vec![CandidateSpec::Ulam { flag: None }] }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn contraction(&self) -> Result<ZoomingContraction> {
        match &self.contraction {
            Some(c) => c.build(),
            None => Err(Error::Config("missing [contraction] section".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_and_full_sections() {
        let text = r#"
            seed = 7
            [system]
            phase = "circle"
            probabilities = [0.5, 0.5]
            fibers = [{ family = "doubling" }, { family = "linear", degree = 3 }]

            [contraction]
            kind = "lipschitz"
            horizon = 500
            coefficients = { rule = "power", exponent = 2, offset = 1 }

            [potential]
            kind = "bump"
            center = 0.0
            radius = 0.1
            height = 1.0
            scale = 2.0

            [pressure]
            eps = [0.0625]
            n = [4, 6]
        "#;
        let c = Config::parse(text).unwrap();
        assert_eq!(c.seed, 7);
        let sys = c.system.build().unwrap();
        assert_eq!(sys.fibers.len(), 2);
        assert_eq!(c.contraction().unwrap().horizon, 500);
        assert_eq!(c.pressure.samples, 20);
        assert_eq!(c.zooming.grid, 16);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(Config::parse("[system]\nphase = \"torus\"\nfibers = []").is_err());
        let c = Config::parse("[system]\nphase = \"circle\"\nfibers = [{family=\"doubling\"}, {family=\"doubling\"}]").unwrap();
        assert!(c.system.build().is_err());
        assert!(c.contraction().is_err());
        assert!(Config::parse("bogus = 1\n[system]\nphase = \"circle\"\nfibers = []").is_err());
    }
}
