//! Capture samples, dataset bundles and the preprocessing steps applied to
//! them before training: outlier removal, noise injection and the
//! train/test split.

mod csv;

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use self::csv::{load_csv, metadata_path, read_csv, save_csv, write_csv};
use crate::error::{Error, Result};
use crate::geo::{add_gps_noise, haversine_distance, GeoPosition, NoiseSpec};
use crate::grid::assign_grid;
use crate::rng::seeded_rng;

/// Default number of image grids.
pub const DEFAULT_GRID_COUNT: usize = 100;
/// Default codebook size.
pub const DEFAULT_CODEBOOK_SIZE: usize = 64;

/// Consistency constant turning a median absolute deviation into a
/// Gaussian-equivalent standard deviation.
const MAD_SCALE: f64 = 1.4826;
const OUTLIER_MADS: f64 = 3.0;
const MIN_GRID_FOR_OUTLIERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    Transmitter,
    Distractor,
}

impl ClassLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Transmitter => "TX",
            ClassLabel::Distractor => "DISTRACTOR",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "TX" => Some(ClassLabel::Transmitter),
            "DISTRACTOR" => Some(ClassLabel::Distractor),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "L2R")]
    LeftToRight,
    #[serde(rename = "R2L")]
    RightToLeft,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::LeftToRight => "L2R",
            Direction::RightToLeft => "R2L",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "L2R" => Some(Direction::LeftToRight),
            "R2L" => Some(Direction::RightToLeft),
            _ => None,
        }
    }
}

/// A detected object: class and normalized bounding-box center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_label: ClassLabel,
    pub x_center: f64,
    pub y_center: f64,
}

impl Detection {
    pub fn new(class_label: ClassLabel, x_center: f64, y_center: f64) -> Result<Self> {
        let d = Detection {
            class_label,
            x_center,
            y_center,
        };
        if !d.in_unit_square() {
            return Err(Error::Invalid(format!(
                "detection center ({x_center}, {y_center}) is outside the unit square"
            )));
        }
        Ok(d)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x_center, self.y_center)
    }

    fn in_unit_square(&self) -> bool {
        (0.0..=1.0).contains(&self.x_center) && (0.0..=1.0).contains(&self.y_center)
    }
}

/// One capture instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub direction: Direction,
    pub detections: Vec<Detection>,
    pub beam_index: usize,
    pub gt_position: GeoPosition,
    pub noisy_position: Option<GeoPosition>,
}

impl Sample {
    /// The first transmitter-labelled detection, if any.
    pub fn transmitter(&self) -> Option<&Detection> {
        self.detections
            .iter()
            .find(|d| d.class_label == ClassLabel::Transmitter)
    }

    pub fn require_transmitter(&self) -> Result<&Detection> {
        self.transmitter()
            .ok_or(Error::MissingTransmitter { sample_id: self.id })
    }

    pub fn require_noisy(&self) -> Result<GeoPosition> {
        self.noisy_position.ok_or(Error::MissingPosition {
            sample_id: self.id,
            what: "noisy",
        })
    }

    pub fn validate(&self, codebook_size: usize) -> Result<()> {
        let invalid = |message: String| Error::InvalidSample {
            sample_id: self.id,
            message,
        };
        if self.detections.is_empty() {
            return Err(invalid("no detections".into()));
        }
        if let Some(d) = self.detections.iter().find(|d| !d.in_unit_square()) {
            return Err(invalid(format!(
                "detection center ({}, {}) outside [0, 1]",
                d.x_center, d.y_center
            )));
        }
        if self.beam_index >= codebook_size {
            return Err(invalid(format!(
                "beam index {} outside codebook of {codebook_size}",
                self.beam_index
            )));
        }
        self.gt_position
            .validate()
            .map_err(|e| invalid(format!("ground truth: {e}")))?;
        if let Some(p) = &self.noisy_position {
            p.validate().map_err(|e| invalid(format!("noisy: {e}")))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMetadata {
    pub grid_count: usize,
    pub codebook_size: usize,
    pub noise_rms_m: Option<f64>,
    pub seed: Option<u64>,
    pub direction: Direction,
    pub source: String,
}

impl BundleMetadata {
    pub fn new(direction: Direction, source: impl Into<String>) -> Self {
        BundleMetadata {
            grid_count: DEFAULT_GRID_COUNT,
            codebook_size: DEFAULT_CODEBOOK_SIZE,
            noise_rms_m: None,
            seed: None,
            direction,
            source: source.into(),
        }
    }
}

/// An ordered set of samples recorded in one travel direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub samples: Vec<Sample>,
    pub metadata: BundleMetadata,
}

impl DatasetBundle {
    /// Builds a bundle, checking sample-level invariants, id uniqueness and
    /// direction consistency.
    pub fn new(samples: Vec<Sample>, metadata: BundleMetadata) -> Result<Self> {
        let bundle = DatasetBundle { samples, metadata };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            s.validate(self.metadata.codebook_size)?;
            if s.direction != self.metadata.direction {
                return Err(Error::InvalidSample {
                    sample_id: s.id,
                    message: format!(
                        "direction {} differs from bundle direction {}",
                        s.direction.as_str(),
                        self.metadata.direction.as_str()
                    ),
                });
            }
            if !seen.insert(s.id) {
                return Err(Error::InvalidSample {
                    sample_id: s.id,
                    message: "duplicate sample id".into(),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn with_samples(&self, samples: Vec<Sample>) -> DatasetBundle {
        DatasetBundle {
            samples,
            metadata: self.metadata.clone(),
        }
    }
}

/// Size of the training part for `n` samples: `ceil(n * fraction)`.
///
/// A tolerance of 1e-9 absorbs representation error so that e.g.
/// `10 * 0.7` yields 7, not 8.
pub fn train_size(n: usize, train_fraction: f64) -> usize {
    let exact = n as f64 * train_fraction;
    ((exact - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Seeded uniform shuffle split. Both parts keep the original sample order.
pub fn split_train_test(
    bundle: &DatasetBundle,
    train_fraction: f64,
    seed: u64,
) -> Result<(DatasetBundle, DatasetBundle)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidFraction(train_fraction));
    }
    if bundle.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = bundle.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed));
    let mut in_train = vec![false; n];
    for &i in &order[..train_size(n, train_fraction)] {
        in_train[i] = true;
    }
    let (train, test): (Vec<_>, Vec<_>) =
        bundle.samples.iter().zip(&in_train).partition(|(_, &t)| t);
    let collect = |part: Vec<(&Sample, &bool)>| part.into_iter().map(|(s, _)| s.clone()).collect();
    Ok((
        bundle.with_samples(collect(train)),
        bundle.with_samples(collect(test)),
    ))
}

/// Removes samples far from their grid's ground-truth mean.
///
/// Samples are grouped by the grid of their transmitter detection. In every
/// grid with at least three members, a sample is dropped when its haversine
/// distance to the grid mean exceeds `3 * 1.4826 * median distance`. Single
/// pass; the grid means are not recomputed.
pub fn remove_outliers(bundle: &DatasetBundle, grid_count: usize) -> Result<DatasetBundle> {
    let groups = group_by_grid(&bundle.samples, grid_count)?;
    let mut keep = vec![true; bundle.len()];
    for members in groups.iter().filter(|m| m.len() >= MIN_GRID_FOR_OUTLIERS) {
        let mean = GeoPosition::mean(members.iter().map(|&i| &bundle.samples[i].gt_position))
            .expect("non-empty grid");
        let dists: Vec<f64> = members
            .iter()
            .map(|&i| haversine_distance(&mean, &bundle.samples[i].gt_position))
            .collect();
        let threshold = OUTLIER_MADS * MAD_SCALE * median(&dists);
        for (&i, &d) in members.iter().zip(&dists) {
            if d > threshold {
                keep[i] = false;
            }
        }
    }
    let samples = bundle
        .samples
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(s, _)| s.clone())
        .collect();
    Ok(bundle.with_samples(samples))
}

/// Sets every sample's noisy position to its ground truth plus Gaussian
/// noise drawn from a stream seeded by `spec.seed`, in sample order.
pub fn inject_noise(bundle: &DatasetBundle, spec: &NoiseSpec) -> Result<DatasetBundle> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let mut out = bundle.clone();
    for s in &mut out.samples {
        s.noisy_position = Some(add_gps_noise(&s.gt_position, spec, &mut rng)?);
    }
    out.metadata.noise_rms_m = Some(spec.target_rms_m);
    out.metadata.seed = Some(spec.seed);
    Ok(out)
}

/// Indices of `samples` per grid of their transmitter detection.
pub(crate) fn group_by_grid(samples: &[Sample], grid_count: usize) -> Result<Vec<Vec<usize>>> {
    if grid_count == 0 {
        return Err(Error::InvalidGridCount);
    }
    let mut groups = vec![Vec::new(); grid_count];
    for (i, s) in samples.iter().enumerate() {
        let tx = s.require_transmitter()?;
        groups[assign_grid(tx.x_center, grid_count)?].push(i);
    }
    Ok(groups)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
