//! TOML configuration shared by the CLI subcommands: where the population
//! frame comes from, which design to draw from, and the controls for the
//! tree, stepwise selection, and simulation sweeps.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::DesignSpec;
use crate::estimate::{EstimatorKind, StepwiseControls};
use crate::frame::Frame;
use crate::mc::SimConfig;
use crate::synth::{reference_config, SynthConfig, REFERENCE_N};
use crate::tree::GrowControls;
use crate::VariableSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
    #[error("Parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("Invalid: {0}")]
    Invalid(String),
    #[error(transparent)]
    Synth(#[from] crate::synth::SynthError),
    #[error(transparent)]
    Frame(#[from] crate::frame::FrameError),
}

/// `[population]` section: how to obtain the frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "source")]
pub enum PopulationConfig {
    /// The bundled reference population, regenerated deterministically.
    Reference {
        #[serde(default = "default_reference_n")]
        n: usize,
        #[serde(default)]
        seed: u64,
    },
    /// A fully spelled-out synthetic population.
    Synthetic {
        #[serde(flatten)]
        config: SynthConfig,
    },
    /// A CSV file plus its variable schema.
    Csv {
        path: PathBuf,
        schema: Vec<VariableSpec>,
    },
}

fn default_reference_n() -> usize {
    REFERENCE_N
}

impl PopulationConfig {
    pub fn build(&self) -> Result<Frame, ConfigError> {
        match self {
            PopulationConfig::Reference { n, seed } => {
                Ok(reference_config(*n, *seed).generate()?)
            }
            PopulationConfig::Synthetic { config } => Ok(config.generate()?),
            PopulationConfig::Csv { path, schema } => {
                Ok(Frame::load_csv(path, schema.clone())?)
            }
        }
    }

    /// The generator behind the frame, when there is one (used to also
    /// archive the generating recipe next to outputs).
    pub fn synth_config(&self) -> Option<SynthConfig> {
        match self {
            PopulationConfig::Reference { n, seed } => Some(reference_config(*n, *seed)),
            PopulationConfig::Synthetic { config } => Some(config.clone()),
            PopulationConfig::Csv { .. } => None,
        }
    }
}

/// `[estimate]` section: which estimators and variables a single
/// `estimate` invocation computes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub estimators: Vec<EstimatorKind>,
    /// Empty means every study variable in the frame.
    pub study_variables: Vec<String>,
    /// Empty means every predictor in the frame.
    pub predictors: Vec<String>,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            estimators: vec![
                EstimatorKind::Ht,
                EstimatorKind::GregLinear,
                EstimatorKind::GregTree,
            ],
            study_variables: Vec::new(),
            predictors: Vec::new(),
        }
    }
}

/// Top-level config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub population: PopulationConfig,
    /// Concrete design for single-draw commands (`tree`, `estimate`,
    /// `diagnose`).
    #[serde(default)]
    pub design: Option<DesignSpec>,
    #[serde(default)]
    pub tree: GrowControls,
    #[serde(default)]
    pub stepwise: StepwiseControls,
    #[serde(default)]
    pub estimate: EstimateConfig,
    /// `[simulate]` section; required only by the `simulate` subcommand.
    #[serde(default)]
    pub simulate: Option<SimConfig>,
}

impl AppConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_toml(&text)
    }

    pub fn parse_toml(text: &str) -> Result<Self, ConfigError> {
        let config: AppConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if let Some(sim) = &self.simulate {
            if sim.replicates == 0 {
                return Err(ConfigError::Invalid("simulate.replicates must be ≥ 1".into()));
            }
            if sim.sample_sizes.is_empty() {
                return Err(ConfigError::Invalid(
                    "simulate.sample_sizes must be nonempty".into(),
                ));
            }
        }
        Ok(())
    }

    /// The simulation section, with the shared tree/stepwise controls
    /// filled in when the section leaves them at defaults.
    pub fn simulation(&self) -> Result<SimConfig, ConfigError> {
        let mut sim = self
            .simulate
            .clone()
            .ok_or_else(|| ConfigError::Invalid("config has no [simulate] section".into()))?;
        if sim.grow == GrowControls::default() {
            sim.grow = self.tree;
        }
        if sim.stepwise == StepwiseControls::default() {
            sim.stepwise = self.stepwise;
        }
        Ok(sim)
    }
}

/// The documented example configuration shipped with `--help`; parses to
/// a valid `AppConfig` (tests enforce this and that every key appears in
/// the CLI help text).
pub const EXAMPLE_CONFIG: &str = r#"# Reference population, desk-scale simulation sweep.

[population]
source = "reference"   # "reference" | "synthetic" | "csv"
n = 20000              # population size (reference/synthetic)
seed = 1               # generator seed

# For source = "csv" instead supply:
#   path = "frame.csv"
#   schema = [ { name = "industry", role = "predictor",
#                kind = { categorical = { levels = ["11", "72"] } } },
#              { name = "teachers", role = "study", kind = "numeric" } ]

# Concrete design for the single-draw commands (tree/estimate/diagnose).
[design.stratified_srswor]
strata = "size"
[design.stratified_srswor.allocation.rates]
target_n = 1000
[design.stratified_srswor.allocation.rates.rates]
1 = 0.005
2 = 0.01
3 = 0.02
4 = 0.04
5 = 0.08
6 = 0.15

[tree]
min_node = 20          # raw and effective (Kish) per-child floor
min_improve = 0.001    # split gain floor, fraction of root SSE
max_depth = 8
exhaustive_cutoff = 12 # categorical levels above which the ordered scan is used

[stepwise]
penalty = 2.0          # per-parameter penalty (2 = AIC-like)
max_steps = 16
interactions = false   # offer pairwise interaction blocks

[estimate]
estimators = ["ht", "greg-linear", "greg-tree"]
study_variables = []   # empty = all study variables
predictors = []        # empty = all predictors

[simulate]
sample_sizes = [500, 1000, 2000]
replicates = 200
estimators = ["ht", "greg-linear", "greg-tree"]
study_variables = []
predictors = []
base_seed = 7

[simulate.design.stratified_srswor]
strata = "size"
[simulate.design.stratified_srswor.rates]
1 = 0.005
2 = 0.01
3 = 0.02
4 = 0.04
5 = 0.08
6 = 0.15
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_config_parses_and_builds() {
        let config = AppConfig::parse_toml(EXAMPLE_CONFIG).unwrap();
        assert!(matches!(
            config.population,
            PopulationConfig::Reference { n: 20_000, seed: 1 }
        ));
        assert!(config.design.is_some());
        let sim = config.simulation().unwrap();
        assert_eq!(sim.sample_sizes, vec![500, 1000, 2000]);
        assert_eq!(sim.replicates, 200);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = "[population]\nsource = \"reference\"\nn = 100\nbogus = 1\n";
        assert!(matches!(
            AppConfig::parse_toml(text),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn missing_simulate_section_reported() {
        let text = "[population]\nsource = \"reference\"\nn = 100\n";
        let config = AppConfig::parse_toml(text).unwrap();
        assert!(matches!(
            config.simulation(),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn synthetic_population_round_trips() {
        let text = r#"
[population]
source = "synthetic"
n = 500
seed = 3

[[population.predictors]]
name = "g"
levels = ["a", "b"]

[[population.study]]
name = "y"
default_mean = 1.0
default_zero_prob = 0.5
"#;
        let config = AppConfig::parse_toml(text).unwrap();
        let frame = config.population.build().unwrap();
        assert_eq!(frame.n(), 500);
    }

    #[test]
    fn zero_replicates_invalid() {
        let text = r#"
[population]
source = "reference"
n = 100

[simulate]
replicates = 0
[simulate.design]
srswor = {}
"#;
        assert!(matches!(
            AppConfig::parse_toml(text),
            Err(ConfigError::Invalid(_))
        ));
    }
}
