//! Experiment configuration, read from TOML.
//!
//! Every section and key is optional; anything left out takes the desk-scale default.
//!
//! ```toml
//! [system]
//! antennas = 64
//! rf_chains = 16
//!
//! [grid]
//! delay_points = 8
//! [grid.polar]
//! points = 32
//!
//! [tracker]
//! outer_iterations = 15
//!
//! [sweep]
//! seeds = 20
//! snr_db = [-5.0, 0.0, 5.0, 10.0]
//! ```

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use xltrack::grid::PolarGridSpec;
use xltrack::model::SystemConfig;
use xltrack::priors::ModelParams;
use xltrack::scenario::SceneConfig;
use xltrack::tracker::{PriorMode, TrackerConfig};

use crate::error::{ExpError, ExpResult};

pub const OUT_ENV: &str = "XLTRACK_OUT";
pub const THREADS_ENV: &str = "XLTRACK_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub polar: PolarGridSpec,
    pub delay_points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { polar: PolarGridSpec::default(), delay_points: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub seeds: usize,
    /// Seeds are `base_seed, base_seed + 1, ...`.
    pub base_seed: u64,
    pub frames: usize,
    pub modes: Vec<PriorMode>,
    pub snr_db: Vec<f64>,
    pub convergence_snr_db: f64,
    pub paths: Vec<usize>,
    pub paths_snr_db: f64,
    pub speeds_kmh: Vec<f64>,
    pub speed_snr_db: f64,
    pub out_dir: PathBuf,
    /// Worker threads; `0` uses all cores.
    pub threads: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            seeds: 20,
            base_seed: 1,
            frames: 10,
            modes: vec![PriorMode::Markov, PriorMode::Iid],
            snr_db: vec![-5.0, 0.0, 5.0, 10.0],
            convergence_snr_db: 10.0,
            paths: vec![2, 6, 10],
            paths_snr_db: 0.0,
            speeds_kmh: vec![3.0, 30.0],
            speed_snr_db: -5.0,
            out_dir: PathBuf::from("results"),
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub grid: GridConfig,
    pub priors: ModelParams,
    pub scene: SceneConfig,
    pub tracker: TrackerConfig,
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> ExpResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExpError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> ExpResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ExpError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> ExpResult<String> {
        toml::to_string(self).map_err(|e| ExpError::Config(e.to_string()))
    }

    /// Applies `XLTRACK_OUT` and `XLTRACK_THREADS` when set.
    pub fn apply_env(&mut self) -> ExpResult<()> {
        if let Ok(v) = std::env::var(OUT_ENV) {
            if !v.is_empty() {
                self.sweep.out_dir = PathBuf::from(v);
            }
        }
        if let Ok(v) = std::env::var(THREADS_ENV) {
            self.sweep.threads = v.parse().map_err(|_| ExpError::Config(format!("{THREADS_ENV} must be an integer, got `{v}`")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> ExpResult<()> {
        self.system.validate()?;
        self.priors.validate()?;
        self.scene.validate()?;
        self.tracker.validate()?;
        self.grid.polar.angles()?;
        let s = &self.sweep;
        if self.grid.delay_points == 0 {
            return Err(ExpError::Config("grid.delay_points must be at least 1".into()));
        }
        if s.seeds == 0 || s.frames == 0 {
            return Err(ExpError::Config("sweep.seeds and sweep.frames must be at least 1".into()));
        }
        if s.modes.is_empty() || s.snr_db.is_empty() || s.paths.is_empty() || s.speeds_kmh.is_empty() {
            return Err(ExpError::Config("sweep lists must be nonempty".into()));
        }
        if s.paths.iter().any(|&l| l == 0 || l > self.scene.max_paths) {
            return Err(ExpError::Config("sweep.paths entries must lie in 1..=scene.max_paths".into()));
        }
        if s.speeds_kmh.iter().any(|&v| !(v >= 0.0)) {
            return Err(ExpError::Config("speeds must be non-negative".into()));
        }
        Ok(())
    }
}
