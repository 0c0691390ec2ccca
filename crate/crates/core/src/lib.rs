//! GPS position characterization and denoising from camera detections and
//! mmWave beam indices.
//!
//! Samples are grouped into vertical image grids by the horizontal center of
//! the transmitting vehicle's bounding box. Each grid's GPS error is
//! summarized by the average displacement from the grid mean, and noisy
//! positions are denoised either by a per-grid lookup table or by a small
//! regression network. The transmitter itself is found by predicting its
//! image position from the beam index and picking the nearest detection.

pub mod dataset;
pub mod denoise;
pub mod error;
pub mod eval;
pub mod geo;
pub mod grid;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod simulate;
pub mod txid;

pub use dataset::{ClassLabel, DatasetBundle, Detection, Direction, Sample};
pub use error::{Error, Result};
pub use geo::{GeoPosition, LocalOffset, NoiseSpec};
pub use grid::{GaussianFit, GridTable, PositionSelector};
pub use nn::{Regressor, TrainConfig};
