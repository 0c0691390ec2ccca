use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use beamfix_core::dataset::{load_csv, save_csv, split_train_test, DatasetBundle, Direction};
use beamfix_core::eval::{compare_methods, export_plot_data, Comparison, EvalReport};
use beamfix_core::grid::{
    build_grid_table, displacement_histogram, fit_gaussian, per_sample_displacements,
    PositionSelector,
};
use beamfix_core::nn::{gradient_check, write_loss_history};
use beamfix_core::pipeline::{
    evaluate_artifacts, generate_datasets, train_artifacts, ModelSettings, TrainedArtifacts,
};
use beamfix_core::txid::{encode_beam, write_predictions};
use beamfix_core::{Error, Regressor};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::UsageError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Samples fed to the post-training gradient check.
const GRADIENT_CHECK_ROWS: usize = 16;
const GRADIENT_CHECK_TOLERANCE: f64 = 1e-4;

fn level_label(level: f64) -> String {
    if level == 0.0 {
        "clean".to_string()
    } else {
        format!("rms{level}")
    }
}

pub fn dataset_file_name(direction: Direction, level: Option<f64>) -> String {
    format!(
        "{}_{}.csv",
        direction.as_str(),
        level_label(level.unwrap_or(0.0))
    )
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .with_context(|| format!("{} has no file name", path.display()))
}

/// Recorded in outputs instead of the full path so that runs in different
/// directories produce identical files.
fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, serde_json::to_string_pretty(value)? + "\n")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_dataset(path: &Path) -> Result<DatasetBundle> {
    if !path.is_file() {
        bail!(UsageError(format!(
            "dataset {} does not exist",
            path.display()
        )));
    }
    Ok(load_csv(path)?)
}

/// Writes the clean reference and one noisy bundle per level for every
/// configured direction. Returns the written paths with their row counts.
pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Vec<(PathBuf, usize)>> {
    create_dir(out)?;
    let mut manifest = Vec::new();
    for direction in cfg.directions() {
        let exp = cfg.experiment(direction)?;
        let (clean, levels) = generate_datasets(&exp)
            .with_context(|| format!("simulating {}", direction.as_str()))?;
        for (bundle, level) in std::iter::once((&clean, None))
            .chain(levels.iter().map(|b| (b, b.metadata.noise_rms_m)))
        {
            let path = out.join(dataset_file_name(direction, level));
            save_csv(bundle, &path)?;
            manifest.push((path, bundle.len()));
        }
    }
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub amplitude: f64,
    pub mean_m: f64,
    pub sigma_m: f64,
    pub r_squared: f64,
    pub adjusted_r_squared: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub dataset: String,
    pub positions: String,
    pub grid_count: usize,
    pub bin_width_m: f64,
    pub populated_grids: usize,
    pub fit: Option<FitReport>,
    pub notice: Option<String>,
}

/// Grid table, displacement histogram and Gaussian fit of one dataset.
/// Noisy positions are characterized when every sample has one.
pub fn characterize(
    dataset: &Path,
    grid_count: usize,
    bin_width_m: f64,
    out: &Path,
    per_sample: bool,
) -> Result<FitSummary> {
    if grid_count == 0 {
        bail!(UsageError("grid count must be at least 1".into()));
    }
    if !(bin_width_m > 0.0 && bin_width_m.is_finite()) {
        bail!(UsageError(format!(
            "bin width must be positive, got {bin_width_m}"
        )));
    }
    let bundle = load_dataset(dataset)?;
    let name = stem(dataset)?;
    let selector = if bundle.samples.iter().all(|s| s.noisy_position.is_some()) {
        PositionSelector::Noisy
    } else {
        PositionSelector::GroundTruth
    };
    let table = build_grid_table(&bundle.samples, selector, grid_count)?;
    let hist = displacement_histogram(&table, bin_width_m)?;
    create_dir(out)?;

    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    write_file(&out.join(format!("{name}_pergrid.csv")), buf)?;
    let mut buf = Vec::new();
    hist.write_csv(&mut buf)?;
    write_file(&out.join(format!("{name}_histogram.csv")), buf)?;
    if per_sample {
        let mut buf = String::from("sample_id,grid,displacement_m\n");
        for d in per_sample_displacements(&bundle.samples, selector, &table)? {
            buf.push_str(&format!(
                "{},{},{}\n",
                d.sample_id, d.grid, d.displacement_m
            ));
        }
        write_file(&out.join(format!("{name}_samples.csv")), buf)?;
    }

    let mut summary = FitSummary {
        dataset: file_name(dataset),
        positions: match selector {
            PositionSelector::Noisy => "noisy",
            PositionSelector::GroundTruth => "ground_truth",
        }
        .to_string(),
        grid_count,
        bin_width_m,
        populated_grids: table.populated().count(),
        fit: None,
        notice: None,
    };
    let summary_path = out.join(format!("{name}_fit.json"));
    match fit_gaussian(&hist) {
        Ok(f) => {
            summary.fit = Some(FitReport {
                amplitude: f.amplitude,
                mean_m: f.mean_m,
                sigma_m: f.sigma_m,
                r_squared: f.r_squared,
                adjusted_r_squared: f.adjusted_r_squared,
                iterations: f.iterations,
            })
        }
        Err(Error::DegenerateHistogram(why)) => {
            summary.notice = Some(format!("Gaussian fit skipped: {why}"));
        }
        Err(e) => {
            summary.notice = Some(format!("Gaussian fit failed: {e}"));
            write_json(&summary_path, &summary)?;
            return Err(e).with_context(|| format!("fitting {}", dataset.display()));
        }
    }
    write_json(&summary_path, &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientChecks {
    pub txid: f64,
    pub denoiser: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainManifest {
    pub dataset: String,
    pub direction: Direction,
    pub noise_rms_m: Option<f64>,
    pub num_samples: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub train_fraction: f64,
    pub run_seed: u64,
    pub split_seed: u64,
    pub num_beams: usize,
    pub models: ModelSettings,
    pub gradient_check: GradientChecks,
    pub final_txid_loss: Option<f64>,
    pub final_denoiser_loss: Option<f64>,
}

impl TrainManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read manifest {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("invalid manifest {}: {e}", path.display())))?)
    }
}

/// Largest relative gradient error of `reg` on up to
/// [`GRADIENT_CHECK_ROWS`] rows, in the network's normalized space.
fn check_regressor(reg: &Regressor, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    let n = inputs.len().min(GRADIENT_CHECK_ROWS);
    let x: Vec<_> = inputs[..n]
        .iter()
        .map(|r| reg.input_normalizer.normalize(r))
        .collect();
    let y: Vec<_> = targets[..n]
        .iter()
        .map(|r| reg.target_normalizer.normalize(r))
        .collect();
    Ok(gradient_check(&reg.model, &x, &y)?)
}

fn post_training_checks(
    artifacts: &TrainedArtifacts,
    train: &DatasetBundle,
) -> Result<GradientChecks> {
    let q = artifacts.txid.num_beams();
    let mut beams = Vec::new();
    let mut centers = Vec::new();
    let mut positions = Vec::new();
    for s in train.samples.iter().take(GRADIENT_CHECK_ROWS) {
        let (x, y) = s.require_transmitter()?.center();
        let p = s.require_noisy()?;
        beams.push(encode_beam(s.beam_index, q)?);
        centers.push(vec![x, y]);
        positions.push(vec![p.lat_deg, p.lon_deg]);
    }
    Ok(GradientChecks {
        txid: check_regressor(artifacts.txid.regressor(), &beams, &centers)?,
        denoiser: check_regressor(artifacts.denoiser.regressor(), &centers, &positions)?,
    })
}

/// Where `train` puts the artifacts of `dataset`.
pub fn model_dir(models: &Path, dataset: &Path) -> Result<PathBuf> {
    Ok(models.join(stem(dataset)?))
}

/// Splits, trains both stages and writes the artifacts with a manifest.
/// Settings from `replay` take precedence over `cfg`.
pub fn train(
    dataset: &Path,
    cfg: &RunConfig,
    replay: Option<&TrainManifest>,
    models: &Path,
) -> Result<TrainManifest> {
    let bundle = load_dataset(dataset)?;
    let missing: Vec<String> = bundle
        .samples
        .iter()
        .filter(|s| s.transmitter().is_none())
        .map(|s| s.id.to_string())
        .collect();
    if !missing.is_empty() {
        bail!(UsageError(format!(
            "{} sample(s) without a transmitter label: {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    let direction = bundle.metadata.direction;
    let exp = cfg.experiment(direction)?;
    let (settings, fraction, split_seed, run_seed) = match replay {
        Some(m) => (m.models.clone(), m.train_fraction, m.split_seed, m.run_seed),
        None => (
            exp.models.clone(),
            exp.train_fraction,
            exp.split_seed(),
            cfg.seed,
        ),
    };
    let (train, test) = split_train_test(&bundle, fraction, split_seed)?;
    let artifacts = train_artifacts(&train, &settings)
        .with_context(|| format!("training on {}", dataset.display()))?;
    let checks = post_training_checks(&artifacts, &train)?;
    for (name, err) in [("txid", checks.txid), ("denoiser", checks.denoiser)] {
        if err >= GRADIENT_CHECK_TOLERANCE {
            eprintln!(
                "warning: {name} gradient check error {err:e} exceeds {GRADIENT_CHECK_TOLERANCE:e}"
            );
        }
    }

    let dir = model_dir(models, dataset)?;
    artifacts.save(&dir)?;
    for (name, history) in [
        ("txid_loss.csv", &artifacts.txid_loss),
        ("denoiser_loss.csv", &artifacts.denoiser_loss),
    ] {
        let mut buf = Vec::new();
        write_loss_history(&mut buf, history)?;
        write_file(&dir.join(name), buf)?;
    }
    let manifest = TrainManifest {
        dataset: file_name(dataset),
        direction,
        noise_rms_m: bundle.metadata.noise_rms_m,
        num_samples: bundle.len(),
        train_samples: train.len(),
        test_samples: test.len(),
        train_fraction: fraction,
        run_seed,
        split_seed,
        num_beams: bundle.metadata.codebook_size,
        models: settings,
        gradient_check: checks,
        final_txid_loss: artifacts.txid_loss.last().copied(),
        final_denoiser_loss: artifacts.denoiser_loss.last().copied(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct EvalSummary<'a> {
    dataset: String,
    identification_accuracy: f64,
    report: &'a EvalReport,
}

/// Scores every dataset with the artifacts trained on it and writes one
/// comparison per direction.
pub fn evaluate(
    datasets: &[PathBuf],
    models: &Path,
    bin_width_m: f64,
    out: &Path,
) -> Result<BTreeMap<Direction, Comparison>> {
    let mut reports: BTreeMap<Direction, Vec<EvalReport>> = BTreeMap::new();
    for dataset in datasets {
        let bundle = load_dataset(dataset)?;
        let dir = model_dir(models, dataset)?;
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.is_file() {
            bail!(UsageError(format!(
                "no trained models for {} in {}",
                dataset.display(),
                dir.display()
            )));
        }
        let manifest = TrainManifest::load(&manifest_path)?;
        let z = manifest.models.grid_count;
        let artifacts = TrainedArtifacts::load(&dir, z)?;
        let (_, test) = split_train_test(&bundle, manifest.train_fraction, manifest.split_seed)?;
        let anchor = build_grid_table(&bundle.samples, PositionSelector::GroundTruth, z)?;
        let outcome =
            evaluate_artifacts(&test, &artifacts, &anchor, manifest.models.denoiser_input)
                .with_context(|| format!("evaluating {}", dataset.display()))?;

        let dest = out.join(stem(dataset)?);
        export_plot_data(
            &outcome.report,
            &test.samples,
            &outcome.predictions,
            &bundle.samples,
            bin_width_m,
            &dest,
        )?;
        let mut buf = Vec::new();
        write_predictions(&mut buf, &test.samples, &outcome.tx_predictions)?;
        write_file(&dest.join("tx_predictions.csv"), buf)?;
        write_json(
            &dest.join("report.json"),
            &EvalSummary {
                dataset: file_name(dataset),
                identification_accuracy: outcome.identification_accuracy,
                report: &outcome.report,
            },
        )?;
        reports
            .entry(bundle.metadata.direction)
            .or_default()
            .push(outcome.report);
    }

    let mut comparisons = BTreeMap::new();
    for (direction, list) in reports {
        let comparison = compare_methods(&list)?;
        let name = format!("comparison_{}", direction.as_str());
        let mut buf = Vec::new();
        comparison.write_csv(&mut buf)?;
        write_file(&out.join(format!("{name}.csv")), buf)?;
        write_file(
            &out.join(format!("{name}.json")),
            comparison.to_json() + "\n",
        )?;
        write_file(&out.join(format!("{name}.txt")), comparison.to_text_table())?;
        comparisons.insert(direction, comparison);
    }
    Ok(comparisons)
}

/// Simulate, characterize, train and evaluate under `out`.
pub fn pipeline(cfg: &RunConfig, out: &Path) -> Result<BTreeMap<Direction, Comparison>> {
    let data = out.join("data");
    let written = simulate(cfg, &data)?;
    for (path, rows) in &written {
        println!("wrote {} ({rows} samples)", path.display());
    }
    let characterized = out.join("characterize");
    for (path, _) in &written {
        let summary = characterize(path, cfg.grid_count, cfg.bin_width_m, &characterized, false)?;
        print_fit(&summary);
    }
    let models = out.join("models");
    let mut noisy = Vec::new();
    for direction in cfg.directions() {
        for &level in cfg.noise_levels.iter().filter(|&&l| l > 0.0) {
            let path = data.join(dataset_file_name(direction, Some(level)));
            let manifest = train(&path, cfg, None, &models)?;
            print_training(&manifest);
            noisy.push(path);
        }
    }
    if noisy.is_empty() {
        bail!(UsageError(
            "pipeline needs at least one positive noise level".into()
        ));
    }
    evaluate(&noisy, &models, cfg.bin_width_m, &out.join("eval"))
}

pub fn print_fit(summary: &FitSummary) {
    match (&summary.fit, &summary.notice) {
        (Some(f), _) => println!(
            "{}: {} grids, A {:.4}, mu {:.4} m, sigma {:.4} m, R2 {:.4}, adjusted R2 {:.4}",
            summary.dataset,
            summary.populated_grids,
            f.amplitude,
            f.mean_m,
            f.sigma_m,
            f.r_squared,
            f.adjusted_r_squared
        ),
        (None, Some(notice)) => println!(
            "{}: {} grids, notice: {notice}",
            summary.dataset, summary.populated_grids
        ),
        (None, None) => println!("{}: {} grids", summary.dataset, summary.populated_grids),
    }
}

pub fn print_training(m: &TrainManifest) {
    println!(
        "trained {} ({} train / {} test), final loss txid {:.3e} denoiser {:.3e}, gradient check txid {:.1e} denoiser {:.1e}",
        m.dataset,
        m.train_samples,
        m.test_samples,
        m.final_txid_loss.unwrap_or(f64::NAN),
        m.final_denoiser_loss.unwrap_or(f64::NAN),
        m.gradient_check.txid,
        m.gradient_check.denoiser
    );
}
