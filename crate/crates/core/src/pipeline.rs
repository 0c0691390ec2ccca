//! End-to-end runs: generate a direction's datasets, train both stages and
//! evaluate every noise level.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    inject_noise, remove_outliers, split_train_test, DatasetBundle, Direction, DEFAULT_GRID_COUNT,
};
use crate::denoise::{
    build_lut, labeled_x_centers, lut_predict, mlp_predict, train_denoiser, Denoiser, LookupTable,
};
use crate::error::{Error, Result};
use crate::eval::{
    compare_methods, per_grid_error, Comparison, EvalReport, Method, MethodPredictions,
};
use crate::geo::NoiseSpec;
use crate::grid::{build_grid_table, GridTable, PositionSelector};
use crate::nn::{TrainConfig, DEFAULT_HIDDEN};
use crate::rng::derive_seed;
use crate::simulate::{
    build_dft_codebook, generate_scenario, SceneGeometry, TrajectoryConfig, DEFAULT_ANTENNAS,
    DEFAULT_BEAMS,
};
use crate::txid::{identification_accuracy, identify, train_txid, TxIdModel, TxPrediction};

pub const DEFAULT_NOISE_LEVELS: [f64; 5] = [0.1, 0.5, 1.0, 2.0, 3.0];
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;

pub const TXID_FILE: &str = "txid.json";
pub const DENOISER_FILE: &str = "denoiser.json";
pub const LUT_FILE: &str = "lut.csv";

/// Which center feeds the denoisers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserInput {
    /// Center of the detection picked by identification.
    #[default]
    Selected,
    /// Center regressed from the beam, before picking a detection.
    Predicted,
}

impl DenoiserInput {
    fn center(self, p: &TxPrediction) -> (f64, f64) {
        match self {
            DenoiserInput::Selected => p.selected_center,
            DenoiserInput::Predicted => (
                p.estimated_center.0.clamp(0.0, 1.0),
                p.estimated_center.1.clamp(0.0, 1.0),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub grid_count: usize,
    pub hidden: Vec<usize>,
    pub txid: TrainConfig,
    pub denoiser: TrainConfig,
    pub denoiser_input: DenoiserInput,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            grid_count: DEFAULT_GRID_COUNT,
            hidden: DEFAULT_HIDDEN.to_vec(),
            txid: TrainConfig {
                epochs: 200,
                ..TrainConfig::default()
            },
            // Position targets are noisy; a smaller step keeps Adam from
            // jittering around the fit.
            denoiser: TrainConfig {
                learning_rate: 3e-4,
                ..TrainConfig::default()
            },
            denoiser_input: DenoiserInput::Selected,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedArtifacts {
    pub txid: TxIdModel,
    pub denoiser: Denoiser,
    pub lut: LookupTable,
    pub txid_loss: Vec<f64>,
    pub denoiser_loss: Vec<f64>,
}

impl TrainedArtifacts {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.txid.save(&dir.join(TXID_FILE))?;
        self.denoiser.save(&dir.join(DENOISER_FILE))?;
        self.lut.save(&dir.join(LUT_FILE))
    }

    /// Loss histories are not persisted and come back empty.
    pub fn load(dir: &Path, grid_count: usize) -> Result<Self> {
        Ok(TrainedArtifacts {
            txid: TxIdModel::load(&dir.join(TXID_FILE))?,
            denoiser: Denoiser::load(&dir.join(DENOISER_FILE))?,
            lut: LookupTable::load(&dir.join(LUT_FILE), grid_count)?,
            txid_loss: Vec::new(),
            denoiser_loss: Vec::new(),
        })
    }
}

/// LUT from the labeled transmitter grids and the regression denoiser from
/// the identified centers, both against the noisy positions of `train`.
pub fn train_denoisers(
    train: &DatasetBundle,
    txid: &TxIdModel,
    settings: &ModelSettings,
) -> Result<(Denoiser, LookupTable, Vec<f64>)> {
    let lut = build_lut(
        &train.samples,
        &labeled_x_centers(&train.samples)?,
        settings.grid_count,
    )?;
    let centers = train
        .samples
        .iter()
        .map(|s| Ok(settings.denoiser_input.center(&identify(txid, s)?)))
        .collect::<Result<Vec<_>>>()?;
    let (denoiser, loss) = train_denoiser(
        &train.samples,
        &centers,
        &settings.hidden,
        &settings.denoiser,
    )?;
    Ok((denoiser, lut, loss))
}

pub fn train_artifacts(
    train: &DatasetBundle,
    settings: &ModelSettings,
) -> Result<TrainedArtifacts> {
    let (txid, txid_loss) = train_txid(train, &settings.hidden, &settings.txid)?;
    let (denoiser, lut, denoiser_loss) = train_denoisers(train, &txid, settings)?;
    Ok(TrainedArtifacts {
        txid,
        denoiser,
        lut,
        txid_loss,
        denoiser_loss,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelOutcome {
    pub report: EvalReport,
    pub tx_predictions: Vec<TxPrediction>,
    pub predictions: Vec<MethodPredictions>,
    pub identification_accuracy: f64,
}

/// Identifies the transmitter in every test sample, denoises with both
/// methods and scores them alongside the raw noisy positions.
pub fn evaluate_artifacts(
    test: &DatasetBundle,
    artifacts: &TrainedArtifacts,
    anchor: &GridTable,
    input: DenoiserInput,
) -> Result<LevelOutcome> {
    let q = test.metadata.codebook_size;
    if q != artifacts.txid.num_beams() {
        return Err(Error::DimensionMismatch {
            context: "codebook size of model and dataset",
            expected: artifacts.txid.num_beams(),
            got: q,
        });
    }
    let tx_predictions = test
        .samples
        .iter()
        .map(|s| identify(&artifacts.txid, s))
        .collect::<Result<Vec<_>>>()?;
    let mut noisy = Vec::with_capacity(test.len());
    let mut lut = Vec::with_capacity(test.len());
    let mut mlp = Vec::with_capacity(test.len());
    for (s, p) in test.samples.iter().zip(&tx_predictions) {
        let center = input.center(p);
        noisy.push(s.require_noisy()?);
        lut.push(lut_predict(&artifacts.lut, center.0)?);
        mlp.push(mlp_predict(&artifacts.denoiser, center)?);
    }
    let predictions = vec![
        MethodPredictions {
            method: Method::Noisy,
            positions: noisy,
        },
        MethodPredictions {
            method: Method::Lut,
            positions: lut,
        },
        MethodPredictions {
            method: Method::Mlp,
            positions: mlp,
        },
    ];
    let report = per_grid_error(
        &test.samples,
        &predictions,
        anchor,
        test.metadata.direction.as_str(),
        test.metadata.noise_rms_m,
    )?;
    Ok(LevelOutcome {
        identification_accuracy: identification_accuracy(&test.samples, &tx_predictions)?,
        report,
        tx_predictions,
        predictions,
    })
}

/// Everything needed to reproduce one direction's experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scene: SceneGeometry,
    pub direction: Direction,
    pub num_samples: usize,
    pub num_distractors: usize,
    pub num_antennas: usize,
    pub num_beams: usize,
    pub noise_levels: Vec<f64>,
    pub train_fraction: f64,
    pub seed: u64,
    pub remove_outliers: bool,
    pub models: ModelSettings,
}

impl ExperimentConfig {
    /// Defaults for one direction. Training seeds are derived from `seed`.
    pub fn new(direction: Direction, num_samples: usize, seed: u64) -> Self {
        let mut cfg = ExperimentConfig {
            scene: SceneGeometry::default_for(direction),
            direction,
            num_samples,
            num_distractors: 2,
            num_antennas: DEFAULT_ANTENNAS,
            num_beams: DEFAULT_BEAMS,
            noise_levels: DEFAULT_NOISE_LEVELS.to_vec(),
            train_fraction: DEFAULT_TRAIN_FRACTION,
            seed,
            remove_outliers: true,
            models: ModelSettings::default(),
        };
        cfg.models.txid.seed = cfg.stream("txid");
        cfg.models.denoiser.seed = cfg.stream("denoiser");
        cfg
    }

    fn stream(&self, label: &str) -> u64 {
        derive_seed(self.seed, &format!("{}/{label}", self.direction.as_str()))
    }

    pub fn trajectory_seed(&self) -> u64 {
        self.stream("trajectory")
    }

    /// Shared by every noise level so that larger levels scale the same
    /// underlying draws.
    pub fn noise_seed(&self) -> u64 {
        self.stream("noise")
    }

    pub fn split_seed(&self) -> u64 {
        self.stream("split")
    }
}

/// Noise-free bundle (noisy equals ground truth) after optional outlier
/// removal, and one noisy copy per level.
pub fn generate_datasets(cfg: &ExperimentConfig) -> Result<(DatasetBundle, Vec<DatasetBundle>)> {
    let codebook = build_dft_codebook(cfg.num_antennas, cfg.num_beams)?;
    let mut traj = TrajectoryConfig::new(cfg.num_samples, cfg.direction, cfg.trajectory_seed());
    traj.num_distractors = cfg.num_distractors;
    let mut clean = generate_scenario(
        &cfg.scene,
        &codebook,
        &traj,
        &NoiseSpec::new(0.0, cfg.noise_seed())?,
    )?;
    clean.metadata.grid_count = cfg.models.grid_count;
    if cfg.remove_outliers {
        clean = remove_outliers(&clean, cfg.models.grid_count)?;
    }
    let levels = cfg
        .noise_levels
        .iter()
        .map(|&level| inject_noise(&clean, &NoiseSpec::new(level, cfg.noise_seed())?))
        .collect::<Result<Vec<_>>>()?;
    Ok((clean, levels))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelRun {
    pub noise_rms_m: f64,
    pub bundle: DatasetBundle,
    pub train: DatasetBundle,
    pub test: DatasetBundle,
    pub artifacts: TrainedArtifacts,
    pub outcome: LevelOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub clean: DatasetBundle,
    pub anchor: GridTable,
    pub levels: Vec<LevelRun>,
    pub comparison: Comparison,
}

/// Generates, splits, trains and evaluates every noise level. The
/// transmitter model does not depend on the noise and is trained once on
/// the shared training split; the denoisers are trained per level.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let (clean, bundles) = generate_datasets(cfg)?;
    let z = cfg.models.grid_count;
    let anchor = build_grid_table(&clean.samples, PositionSelector::GroundTruth, z)?;
    let (clean_train, _) = split_train_test(&clean, cfg.train_fraction, cfg.split_seed())?;
    let (txid, txid_loss) = train_txid(&clean_train, &cfg.models.hidden, &cfg.models.txid)?;
    let mut levels = Vec::with_capacity(bundles.len());
    for bundle in bundles {
        let (train, test) = split_train_test(&bundle, cfg.train_fraction, cfg.split_seed())?;
        let (denoiser, lut, denoiser_loss) = train_denoisers(&train, &txid, &cfg.models)?;
        let artifacts = TrainedArtifacts {
            txid: txid.clone(),
            denoiser,
            lut,
            txid_loss: txid_loss.clone(),
            denoiser_loss,
        };
        let outcome = evaluate_artifacts(&test, &artifacts, &anchor, cfg.models.denoiser_input)?;
        levels.push(LevelRun {
            noise_rms_m: bundle.metadata.noise_rms_m.expect("noise injected"),
            bundle,
            train,
            test,
            artifacts,
            outcome,
        });
    }
    let reports: Vec<EvalReport> = levels.iter().map(|l| l.outcome.report.clone()).collect();
    let comparison = compare_methods(&reports)?;
    Ok(ExperimentResult {
        clean,
        anchor,
        levels,
        comparison,
    })
}
