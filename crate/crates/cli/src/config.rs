use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use beamfix_core::dataset::{Direction, DEFAULT_CODEBOOK_SIZE, DEFAULT_GRID_COUNT};
use beamfix_core::grid::DEFAULT_BIN_WIDTH_M;
use beamfix_core::pipeline::{
    DenoiserInput, ExperimentConfig, DEFAULT_NOISE_LEVELS, DEFAULT_TRAIN_FRACTION,
};
use beamfix_core::simulate::{SceneSet, DEFAULT_ANTENNAS};
use beamfix_core::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const DEFAULT_OUTPUT_DIR: &str = "beamfix-out";

/// Partial override of a [`TrainConfig`]. Seeds are always derived from the
/// run seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub weight_init_scale: Option<f64>,
}

impl TrainOverrides {
    fn apply(&self, c: &mut TrainConfig) {
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.weight_init_scale {
            c.weight_init_scale = v;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub hidden: Option<Vec<usize>>,
    pub denoiser_input: Option<DenoiserInput>,
    pub txid: TrainOverrides,
    pub denoiser: TrainOverrides,
}

/// JSON run configuration. Every field is optional in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Scene set JSON; relative paths resolve against the config file.
    pub scene: Option<PathBuf>,
    /// Samples per direction. Only the listed directions are simulated.
    pub num_samples: BTreeMap<Direction, usize>,
    pub num_distractors: usize,
    pub grid_count: usize,
    pub num_beams: usize,
    pub num_antennas: usize,
    pub noise_levels: Vec<f64>,
    pub train_fraction: f64,
    pub seed: u64,
    pub remove_outliers: bool,
    pub bin_width_m: f64,
    pub output_dir: PathBuf,
    pub models: ModelOverrides,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scene: None,
            num_samples: BTreeMap::from([
                (Direction::LeftToRight, 1353),
                (Direction::RightToLeft, 1086),
            ]),
            num_distractors: 2,
            grid_count: DEFAULT_GRID_COUNT,
            num_beams: DEFAULT_CODEBOOK_SIZE,
            num_antennas: DEFAULT_ANTENNAS,
            noise_levels: DEFAULT_NOISE_LEVELS.to_vec(),
            train_fraction: DEFAULT_TRAIN_FRACTION,
            seed: 0,
            remove_outliers: true,
            bin_width_m: DEFAULT_BIN_WIDTH_M,
            output_dir: PathBuf::from(DEFAULT_OUTPUT_DIR),
            models: ModelOverrides::default(),
        }
    }
}

impl RunConfig {
    /// Reads and validates a config file, or returns the validated defaults
    /// when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            let cfg = RunConfig::default();
            cfg.validate()?;
            return Ok(cfg);
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())))?;
        if let Some(scene) = &cfg.scene {
            if scene.is_relative() {
                let base = path.parent().unwrap_or(Path::new(""));
                cfg.scene = Some(base.join(scene));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        let bad = |msg: String| Err(UsageError(msg));
        if let Some(scene) = &self.scene {
            if !scene.is_file() {
                return bad(format!("scene file {} does not exist", scene.display()));
            }
        }
        if self.num_samples.is_empty() {
            return bad("num_samples must list at least one direction".into());
        }
        if let Some((d, _)) = self.num_samples.iter().find(|(_, &n)| n == 0) {
            return bad(format!("num_samples for {} must be positive", d.as_str()));
        }
        if self.grid_count == 0 {
            return bad("grid_count must be at least 1".into());
        }
        if self.num_beams == 0 || self.num_antennas == 0 {
            return bad("num_beams and num_antennas must be positive".into());
        }
        if let Some(l) = self
            .noise_levels
            .iter()
            .find(|l| !(l.is_finite() && **l >= 0.0))
        {
            return bad(format!("noise level {l} must be finite and non-negative"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!(
                "train_fraction must lie strictly between 0 and 1, got {}",
                self.train_fraction
            ));
        }
        if !(self.bin_width_m > 0.0 && self.bin_width_m.is_finite()) {
            return bad(format!(
                "bin_width_m must be positive, got {}",
                self.bin_width_m
            ));
        }
        if self.models.hidden.as_ref().is_some_and(|h| h.contains(&0)) {
            return bad("hidden layer widths must be positive".into());
        }
        Ok(())
    }

    pub fn directions(&self) -> impl Iterator<Item = Direction> + '_ {
        self.num_samples.keys().copied()
    }

    /// Experiment settings for one direction. `num_samples` falls back to
    /// the default count when the direction is not listed.
    pub fn experiment(&self, direction: Direction) -> Result<ExperimentConfig> {
        let n = self
            .num_samples
            .get(&direction)
            .copied()
            .unwrap_or_else(|| RunConfig::default().num_samples[&direction]);
        let mut cfg = ExperimentConfig::new(direction, n, self.seed);
        if let Some(path) = &self.scene {
            let scenes = SceneSet::load_json(path)
                .with_context(|| format!("loading scenes from {}", path.display()))?;
            cfg.scene = scenes.scene(direction).clone();
        }
        cfg.num_distractors = self.num_distractors;
        cfg.num_antennas = self.num_antennas;
        cfg.num_beams = self.num_beams;
        cfg.noise_levels = self.noise_levels.clone();
        cfg.train_fraction = self.train_fraction;
        cfg.remove_outliers = self.remove_outliers;
        cfg.models.grid_count = self.grid_count;
        if let Some(hidden) = &self.models.hidden {
            cfg.models.hidden = hidden.clone();
        }
        if let Some(input) = self.models.denoiser_input {
            cfg.models.denoiser_input = input;
        }
        self.models.txid.apply(&mut cfg.models.txid);
        self.models.denoiser.apply(&mut cfg.models.denoiser);
        cfg.models.txid.validate()?;
        cfg.models.denoiser.validate()?;
        Ok(cfg)
    }
}
