use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use tid_core::baselines::BaselineConfig;
use tid_core::evaluation::IoUThresholds;
use tid_core::identifier::SolverOptions;
use tid_core::pipeline::{Method, PipelineConfig};
use tid_core::simulator::ScenarioConfig;
use tid_core::tracker::{IngestConfig, TrackerConfig};
use tid_core::weights::WeightModelConfig;

use crate::errors::CliError;

/// Input locations. Every subcommand reads the ones it needs; command-line
/// flags replace whatever the config file names.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub detections: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub tracklets: Option<PathBuf>,
    pub identified: Option<PathBuf>,
    /// Calibration points of the rig being mapped.
    pub calibration: Option<PathBuf>,
    /// Calibration points of the prototype rig.
    pub prototype: Option<PathBuf>,
    /// Directory with `annotations.json` and `trace.csv` to fit the model on.
    pub train: Option<PathBuf>,
    /// Segment directories for `pipeline`.
    pub segments: Vec<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub prune: bool,
    /// Write per-solve statistics next to the identified output.
    pub diagnostics: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            prune: true,
            diagnostics: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Method used by `identify` and `evaluate`.
    pub method: Method,
    /// Methods run by `pipeline`.
    pub methods: Vec<Method>,
    /// Number of identities; taken from the trace when absent.
    pub identities: Option<usize>,
    pub paths: Paths,
    pub ingest: IngestConfig,
    pub tracker: TrackerConfig,
    pub weights: WeightModelConfig,
    pub baseline: BaselineConfig,
    pub thresholds: IoUThresholds,
    pub solver: SolverConfig,
    pub scenario: ScenarioConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::Ilp,
            methods: Method::ALL.to_vec(),
            identities: None,
            paths: Paths::default(),
            ingest: IngestConfig::default(),
            tracker: TrackerConfig::default(),
            weights: WeightModelConfig::default(),
            baseline: BaselineConfig::default(),
            thresholds: IoUThresholds::default(),
            solver: SolverConfig::default(),
            scenario: ScenarioConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::from_io(path, e))?;
        Self::from_toml(&text).with_context(|| format!("reading config {}", path.display()))
    }

    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()).into())
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            ingest: self.ingest.clone(),
            tracker: self.tracker.clone(),
            weights: self.weights.clone(),
            baseline: self.baseline.clone(),
            thresholds: self.thresholds,
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            prune: self.solver.prune,
            trace_bounds: self.solver.diagnostics,
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.tracker.validate()?;
        self.scenario.validate()?;
        if self.methods.is_empty() {
            return Err(CliError::Config("methods must not be empty".into()).into());
        }
        if self.identities == Some(0) {
            return Err(CliError::Config("identities must be positive".into()).into());
        }
        Ok(())
    }
}
