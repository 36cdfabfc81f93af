//! Declarative run configuration: every module default in one TOML document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sepba::ba::SolverConfig;
use sepba::localizer::LocalizerConfig;
use sepba::mapgrid::DEFAULT_MAP_RESOLUTION_M;
use sepba::metrics::{SELF_CONSISTENCY_MAX_DISTANCE_M, SELF_CONSISTENCY_MIN_TRAVEL_M};
use sepba::preprocess::{BlurPolicy, KeyframePolicy, MaskThresholds};
use sepba::scan::WeightModel;
use sepba::sim::SimulationConfig;

use crate::error::{CliError, CliResult};

/// File name of the resolved configuration written next to every output.
pub const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    pub enabled: bool,
    pub zero_ignore_threshold: f64,
    pub saturation_threshold: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        let t = MaskThresholds::default();
        Self {
            enabled: true,
            zero_ignore_threshold: t.zero_ignore_threshold,
            saturation_threshold: t.saturation_threshold,
        }
    }
}

impl MaskConfig {
    pub fn thresholds(&self) -> Option<MaskThresholds> {
        self.enabled.then_some(MaskThresholds {
            zero_ignore_threshold: self.zero_ignore_threshold,
            saturation_threshold: self.saturation_threshold,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub min_travel_m: f64,
    pub max_distance_m: f64,
    /// Start pose of the end-point error.
    pub epe_start_index: usize,
    /// Rows of two trajectories pair up when their stamps differ by at most this.
    pub time_tolerance_s: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            min_travel_m: SELF_CONSISTENCY_MIN_TRAVEL_M,
            max_distance_m: SELF_CONSISTENCY_MAX_DISTANCE_M,
            epe_start_index: 0,
            time_tolerance_s: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Map cell size.
    pub map_resolution_m: f64,
    pub paths: PathConfig,
    pub weight: WeightModel,
    pub keyframe: KeyframePolicy,
    pub blur: BlurPolicy,
    pub mask: MaskConfig,
    pub solver: SolverConfig,
    pub localizer: LocalizerConfig,
    pub simulation: SimulationConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            map_resolution_m: DEFAULT_MAP_RESOLUTION_M,
            paths: PathConfig::default(),
            weight: WeightModel::default(),
            keyframe: KeyframePolicy::default(),
            blur: BlurPolicy::default(),
            mask: MaskConfig::default(),
            solver: SolverConfig::default(),
            localizer: LocalizerConfig::default(),
            simulation: SimulationConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Input(format!("{}: {e}", origin.display())))
    }

    /// Defaults, or the file at `path` layered over them.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text, p)
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable in TOML")
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.map_resolution_m.is_nan() || self.map_resolution_m <= 0.0 {
            return Err(CliError::Input("map_resolution_m must be positive".into()));
        }
        WeightModel::new(self.weight.sigma_pixel, self.weight.sigma_range_per_m)?;
        self.keyframe.validate()?;
        self.blur.validate()?;
        self.solver.validate()?;
        self.localizer.solver.validate()?;
        self.simulation.sensor.validate()?;
        let m = &self.mask;
        if !(0.0..=m.saturation_threshold).contains(&m.zero_ignore_threshold) {
            return Err(CliError::Input("mask thresholds must satisfy 0 <= low <= high".into()));
        }
        if self.eval.time_tolerance_s.is_nan() || self.eval.time_tolerance_s < 0.0 {
            return Err(CliError::Input("time_tolerance_s must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn write_resolved(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(RESOLVED_CONFIG);
        crate::io::write_file(&path, self.to_toml().as_bytes())?;
        Ok(path)
    }
}
