//! Run configuration, read from a single JSON file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::coefficients::{builtin, CoefficientSet};
use crate::conditional_law::TMapContext;
use crate::error::{Error, Result};
use crate::fixed_point::LocalizationConfig;
use crate::grid::{sample_observation, IncrementLaw, SamplePath, TimeGrid};
use crate::measures::{DiscreteMeasure, MeasurePath};
use crate::reference_sim::SimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub params: Value,
    #[serde(default)]
    pub x0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub n_steps: usize,
}

/// First Picard iterate, held constant in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialIterate {
    /// Point mass at the initial state.
    #[default]
    Dirac,
    /// A fixed discrete measure.
    Measure { atoms: Vec<f64>, weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedPointConfig {
    pub tol: f64,
    pub max_iter: usize,
    #[serde(default)]
    pub initial: InitialIterate,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iter: 50,
            initial: InitialIterate::Dirac,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ObservationConfig {
    #[serde(default)]
    pub law: IncrementLaw,
    /// Seed of the observation draw; defaults to the master seed.
    #[serde(default)]
    pub seed: Option<u64>,
    /// CSV file `t,y` to load instead of drawing.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    /// Number of equally spaced checkpoints (excluding node 0).
    pub checkpoints: usize,
    pub ratio_cap: f64,
    /// Use constants calibrated from the coefficient bounds for the zeta
    /// bound instead of the configured localization.
    pub zeta_calibrated: bool,
    pub continuity_replications: usize,
    pub continuity_lags: Vec<usize>,
    pub continuity_base_node: usize,
    pub continuity_min_slope: f64,
    pub innovation_draws: usize,
    pub innovation_particles: usize,
    pub innovation_variance_band: f64,
    pub bootstrap_resamples: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            checkpoints: 10,
            ratio_cap: 10.0,
            zeta_calibrated: true,
            continuity_replications: 100,
            continuity_lags: vec![1, 2, 4, 8],
            continuity_base_node: 0,
            continuity_min_slope: 1.8,
            innovation_draws: 20_000,
            innovation_particles: 5,
            innovation_variance_band: 0.05,
            bootstrap_resamples: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub kalman_p0: f64,
    /// Largest posterior mass outside the clip radius for a valid Kalman
    /// comparison.
    pub max_clipped_mass: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            kalman_p0: 0.0,
            max_clipped_mass: 1e-3,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub grid: GridConfig,
    pub sim: SimConfig,
    #[serde(default)]
    pub fixed_point: FixedPointConfig,
    #[serde(default)]
    pub localization: LocalizationConfig,
    #[serde(default)]
    pub observation: ObservationConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.coefficients()?;
        self.time_grid()?;
        if self.sim.n_particles == 0 {
            return Err(Error::InvalidArgument("sim.n_particles must be at least 1".into()));
        }
        if !(self.fixed_point.tol > 0.0) {
            return Err(Error::InvalidArgument("fixed_point.tol must be positive".into()));
        }
        self.localization.validate()?;
        self.initial_measure()?;
        let d = &self.diagnostics;
        if d.checkpoints == 0 {
            return Err(Error::InvalidArgument("diagnostics.checkpoints must be at least 1".into()));
        }
        if !(d.ratio_cap > 0.0 && d.innovation_variance_band > 0.0) {
            return Err(Error::InvalidArgument("diagnostic thresholds must be positive".into()));
        }
        Ok(())
    }

    pub fn coefficients(&self) -> Result<CoefficientSet> {
        builtin(&self.scenario.name, &self.scenario.params, self.scenario.x0)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.grid.horizon, self.grid.n_steps)
    }

    fn initial_measure(&self) -> Result<DiscreteMeasure> {
        match &self.fixed_point.initial {
            InitialIterate::Dirac => Ok(DiscreteMeasure::dirac(self.scenario.x0)),
            InitialIterate::Measure { atoms, weights } => {
                DiscreteMeasure::normalize(atoms.clone(), weights.clone())
            }
        }
    }

    pub fn initial_path(&self) -> Result<MeasurePath> {
        Ok(MeasurePath::constant(self.time_grid()?, self.initial_measure()?))
    }

    pub fn observation_seed(&self) -> u64 {
        self.observation.seed.unwrap_or(self.sim.master_seed)
    }

    /// The observation path: loaded from `override_path`, else from the
    /// configured file, else drawn from the observation seed.
    pub fn observation_path(&self, override_path: Option<&Path>) -> Result<SamplePath> {
        let grid = self.time_grid()?;
        match override_path.or(self.observation.path.as_deref()) {
            Some(p) => {
                let y = crate::io::read_y_path(p)?;
                if y.grid() != &grid {
                    return Err(Error::GridMismatch(format!(
                        "{} has {} steps on [0, {}], the config has {} on [0, {}]",
                        p.display(),
                        y.grid().n_steps(),
                        y.grid().horizon(),
                        grid.n_steps(),
                        grid.horizon()
                    )));
                }
                Ok(y)
            }
            None => Ok(sample_observation(&grid, self.observation.law, self.observation_seed())),
        }
    }

    pub fn context(&self, y_path: SamplePath) -> Result<TMapContext> {
        Ok(TMapContext::new(self.coefficients()?, y_path, self.sim))
    }

    /// Checkpoint nodes `round(j n / m)` for `j = 1..=m`, with `m` capped
    /// at the number of steps.
    pub fn checkpoints(&self) -> Vec<usize> {
        let n = self.grid.n_steps;
        let m = self.diagnostics.checkpoints.min(n);
        let mut nodes: Vec<usize> = (1..=m).map(|j| (j * n + m / 2) / m).collect();
        nodes.dedup();
        nodes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "scenario": {"name": "meanfield-tanh", "params": {"s1": 0.25}},
        "grid": {"horizon": 0.25, "n_steps": 20},
        "sim": {"n_particles": 100, "master_seed": 3}
    }"#;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.fixed_point, FixedPointConfig::default());
        assert_eq!(c.localization, LocalizationConfig::default());
        assert_eq!(c.sim.increment_law, IncrementLaw::Gaussian);
        assert_eq!(c.observation_seed(), 3);
        assert_eq!(c.output_dir, PathBuf::from("out"));
        assert_eq!(c.checkpoints(), vec![2, 4, 6, 8, 10, 12, 14, 16, 18, 20]);
    }

    #[test]
    fn round_trips_losslessly() {
        let mut c = RunConfig::from_json(MINIMAL).unwrap();
        c.fixed_point.initial = InitialIterate::Measure {
            atoms: vec![0.1, -1.0 / 3.0],
            weights: vec![1.0, 2.0],
        };
        c.observation.seed = Some(99);
        let text = crate::io::to_json_string(&c, true).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(RunConfig::from_json("{"), Err(Error::Parse(_))));
        let unknown = MINIMAL.replace("meanfield-tanh", "nope");
        assert!(matches!(RunConfig::from_json(&unknown), Err(Error::UnknownScenario(_))));
        let extra = MINIMAL.replace("\"grid\"", "\"bogus\": 1, \"grid\"");
        assert!(matches!(RunConfig::from_json(&extra), Err(Error::Parse(_))));
        let zero = MINIMAL.replace("\"n_particles\": 100", "\"n_particles\": 0");
        assert!(RunConfig::from_json(&zero).is_err());
    }
}
