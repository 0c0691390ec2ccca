//! Synthetic roadside scenes: a basestation with a camera and a uniform
//! linear array watching a vehicle drive along a straight lane.
//!
//! Beam selection is the noiseless line-of-sight argmax over a DFT
//! codebook, and the camera is an ideal pinhole.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    inject_noise, BundleMetadata, ClassLabel, DatasetBundle, Detection, Direction, Sample,
};
use crate::error::{Error, Result};
use crate::geo::{apply_offset, offset_between, GeoPosition, LocalOffset, NoiseSpec};
use crate::rng::{derive_seed, seeded_rng};

pub const DEFAULT_ANTENNAS: usize = 16;
pub const DEFAULT_BEAMS: usize = 64;

/// Transmitter detections sit at this image height, give or take
/// [`TX_Y_JITTER`].
pub const TX_Y_CENTER: f64 = 0.5;
pub const TX_Y_JITTER: f64 = 0.02;

/// Oversampled DFT beams for a half-wavelength ULA.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamCodebook {
    num_antennas: usize,
    steering_deg: Vec<f64>,
    weights: Vec<Vec<Complex64>>,
}

impl BeamCodebook {
    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    pub fn num_beams(&self) -> usize {
        self.weights.len()
    }

    /// Steering angle of each beam, ascending.
    pub fn steering_deg(&self) -> &[f64] {
        &self.steering_deg
    }

    pub fn weights(&self, beam: usize) -> &[Complex64] {
        &self.weights[beam]
    }
}

fn phase_ramp(num_antennas: usize, theta_rad: f64) -> impl Iterator<Item = Complex64> {
    (0..num_antennas).map(move |m| Complex64::from_polar(1.0, -PI * m as f64 * theta_rad.sin()))
}

/// Beam `q` steers to `-90° + q * 180° / Q` with elements
/// `exp(-j * pi * m * sin(theta_q)) / sqrt(M)`.
pub fn build_dft_codebook(num_antennas: usize, num_beams: usize) -> Result<BeamCodebook> {
    if num_antennas == 0 || num_beams < num_antennas {
        return Err(Error::InvalidCodebook {
            antennas: num_antennas,
            beams: num_beams,
        });
    }
    let norm = 1.0 / (num_antennas as f64).sqrt();
    let steering_deg: Vec<f64> = (0..num_beams)
        .map(|q| -90.0 + q as f64 * 180.0 / num_beams as f64)
        .collect();
    let weights = steering_deg
        .iter()
        .map(|t| {
            phase_ramp(num_antennas, t.to_radians())
                .map(|w| w * norm)
                .collect()
        })
        .collect();
    Ok(BeamCodebook {
        num_antennas,
        steering_deg,
        weights,
    })
}

/// Beam maximizing `|f_q^H a(theta)|` for a single line-of-sight path at
/// `azimuth_deg` from broadside. Ties go to the lowest index.
pub fn select_best_beam(codebook: &BeamCodebook, azimuth_deg: f64) -> Result<usize> {
    if azimuth_deg.is_nan() || azimuth_deg.abs() >= 90.0 {
        return Err(Error::BehindArray { azimuth_deg });
    }
    let steering: Vec<Complex64> =
        phase_ramp(codebook.num_antennas, azimuth_deg.to_radians()).collect();
    let mut best = (0, f64::NEG_INFINITY);
    for (q, f) in codebook.weights.iter().enumerate() {
        let gain = f
            .iter()
            .zip(&steering)
            .map(|(w, a)| w.conj() * a)
            .sum::<Complex64>()
            .norm();
        if gain > best.1 {
            best = (q, gain);
        }
    }
    Ok(best.0)
}

/// Basestation pose and the lane it watches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGeometry {
    pub bs_position: GeoPosition,
    /// Camera boresight azimuth, clockwise from north.
    pub bs_heading_deg: f64,
    pub camera_hfov_deg: f64,
    pub road_start: GeoPosition,
    pub road_end: GeoPosition,
    /// Array broadside azimuth, clockwise from north.
    pub array_normal_deg: f64,
}

const DEFAULT_BS: GeoPosition = GeoPosition {
    lat_deg: 33.42,
    lon_deg: -111.93,
};

impl SceneGeometry {
    /// A camera looking north at a 24 m lane crossing its view `lane_north_m`
    /// ahead, with the array facing the same way.
    pub fn facing_lane(lane_north_m: f64) -> Result<Self> {
        let end = |east: f64| apply_offset(&DEFAULT_BS, &LocalOffset::new(east, lane_north_m));
        let scene = SceneGeometry {
            bs_position: DEFAULT_BS,
            bs_heading_deg: 0.0,
            camera_hfov_deg: 90.0,
            road_start: end(-12.0)?,
            road_end: end(12.0)?,
            array_normal_deg: 0.0,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Default lane for each travel direction. The far lane is narrower in
    /// the image, so its grids are wider on the ground.
    pub fn default_for(direction: Direction) -> Self {
        let north = match direction {
            Direction::LeftToRight => 12.5,
            Direction::RightToLeft => 16.0,
        };
        SceneGeometry::facing_lane(north).expect("default scene is valid")
    }

    pub fn validate(&self) -> Result<()> {
        for p in [&self.bs_position, &self.road_start, &self.road_end] {
            p.validate()?;
        }
        if !(self.camera_hfov_deg > 0.0 && self.camera_hfov_deg < 180.0) {
            return Err(Error::InvalidScene(format!(
                "field of view {}° is outside (0°, 180°)",
                self.camera_hfov_deg
            )));
        }
        if !(self.bs_heading_deg.is_finite() && self.array_normal_deg.is_finite()) {
            return Err(Error::InvalidScene("headings must be finite".into()));
        }
        if self.road_start == self.road_end {
            return Err(Error::InvalidScene("road endpoints coincide".into()));
        }
        // A straight segment lies inside the frustum iff both ends do.
        for end in [&self.road_start, &self.road_end] {
            project_to_image(self, end)?;
            let azimuth_deg = self.array_azimuth(end)?;
            if azimuth_deg.abs() >= 90.0 {
                return Err(Error::BehindArray { azimuth_deg });
            }
        }
        Ok(())
    }

    fn bearing_deg(&self, target: &GeoPosition) -> Result<f64> {
        let o = offset_between(&self.bs_position, target)?;
        if o.magnitude() == 0.0 {
            return Err(Error::InvalidScene(
                "target coincides with the basestation".into(),
            ));
        }
        Ok(o.east_m.atan2(o.north_m).to_degrees())
    }

    /// Azimuth of `target` relative to the array broadside, in (-180°, 180°].
    pub fn array_azimuth(&self, target: &GeoPosition) -> Result<f64> {
        Ok(wrap_degrees(
            self.bearing_deg(target)? - self.array_normal_deg,
        ))
    }

    fn lane_offsets(&self) -> Result<(LocalOffset, LocalOffset)> {
        Ok((
            offset_between(&self.bs_position, &self.road_start)?,
            offset_between(&self.bs_position, &self.road_end)?,
        ))
    }
}

/// Scenes for both travel directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSet {
    pub left_to_right: SceneGeometry,
    pub right_to_left: SceneGeometry,
}

impl Default for SceneSet {
    fn default() -> Self {
        SceneSet {
            left_to_right: SceneGeometry::default_for(Direction::LeftToRight),
            right_to_left: SceneGeometry::default_for(Direction::RightToLeft),
        }
    }
}

impl SceneSet {
    pub fn scene(&self, direction: Direction) -> &SceneGeometry {
        match direction {
            Direction::LeftToRight => &self.left_to_right,
            Direction::RightToLeft => &self.right_to_left,
        }
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: SceneSet = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        set.left_to_right.validate()?;
        set.right_to_left.validate()?;
        Ok(set)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

fn wrap_degrees(a: f64) -> f64 {
    let w = (a + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}

/// Slack for targets placed exactly on the frustum edge.
const FRUSTUM_SLACK_DEG: f64 = 1e-6;

/// Pinhole projection `0.5 + tan(bearing - boresight) / (2 tan(hfov / 2))`.
pub fn project_to_image(scene: &SceneGeometry, target: &GeoPosition) -> Result<f64> {
    let offset_deg = wrap_degrees(scene.bearing_deg(target)? - scene.bs_heading_deg);
    let half = scene.camera_hfov_deg / 2.0;
    if offset_deg.abs() > half + FRUSTUM_SLACK_DEG {
        return Err(Error::OutsideFrustum {
            offset_deg,
            hfov_deg: scene.camera_hfov_deg,
        });
    }
    let x = 0.5 + offset_deg.to_radians().tan() / (2.0 * half.to_radians().tan());
    Ok(x.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub num_samples: usize,
    pub direction: Direction,
    #[serde(default)]
    pub num_distractors: usize,
    /// Distractors are kept at least this far from the transmitter in x.
    #[serde(default = "default_separation")]
    pub min_distractor_separation: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_separation() -> f64 {
    0.1
}

impl TrajectoryConfig {
    pub fn new(num_samples: usize, direction: Direction, seed: u64) -> Self {
        TrajectoryConfig {
            num_samples,
            direction,
            num_distractors: 0,
            min_distractor_separation: default_separation(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::InvalidScene(
                "trajectory needs at least one sample".into(),
            ));
        }
        if !(0.0..0.5).contains(&self.min_distractor_separation) {
            return Err(Error::InvalidScene(format!(
                "distractor separation {} is outside [0, 0.5)",
                self.min_distractor_separation
            )));
        }
        Ok(())
    }
}

/// Drives the transmitter along the lane and records one sample per stop.
///
/// Stop `i` of `n` sits at fraction `(i + u_i) / n` of the lane with `u_i`
/// uniform in `[0, 1)`, so the transmitter x-center is strictly monotone.
/// Each sample carries the transmitter detection at a random position in
/// the detection list, `num_distractors` distractors, the best beam, the
/// ground truth and a noisy position drawn with `noise`.
pub fn generate_scenario(
    scene: &SceneGeometry,
    codebook: &BeamCodebook,
    traj: &TrajectoryConfig,
    noise: &NoiseSpec,
) -> Result<DatasetBundle> {
    scene.validate()?;
    traj.validate()?;
    noise.validate()?;
    let (a, b) = scene.lane_offsets()?;
    let xa = project_to_image(scene, &scene.road_start)?;
    let xb = project_to_image(scene, &scene.road_end)?;
    let left_first = xa <= xb;
    let (from, to) = match (traj.direction, left_first) {
        (Direction::LeftToRight, true) | (Direction::RightToLeft, false) => (a, b),
        _ => (b, a),
    };

    let mut rng = seeded_rng(derive_seed(traj.seed, "trajectory"));
    let n = traj.num_samples as f64;
    let mut samples = Vec::with_capacity(traj.num_samples);
    for i in 0..traj.num_samples {
        let t = (i as f64 + rng.random::<f64>()) / n;
        let offset = LocalOffset::new(
            from.east_m + t * (to.east_m - from.east_m),
            from.north_m + t * (to.north_m - from.north_m),
        );
        let gt = apply_offset(&scene.bs_position, &offset)?;
        let x = project_to_image(scene, &gt)?;
        let y = TX_Y_CENTER + rng.random_range(-TX_Y_JITTER..=TX_Y_JITTER);
        let mut detections = Vec::with_capacity(traj.num_distractors + 1);
        for _ in 0..traj.num_distractors {
            let dx = distractor_x(&mut rng, x, traj.min_distractor_separation);
            let dy = rng.random::<f64>();
            detections.push(Detection::new(ClassLabel::Distractor, dx, dy)?);
        }
        let slot = rng.random_range(0..=traj.num_distractors);
        detections.insert(slot, Detection::new(ClassLabel::Transmitter, x, y)?);
        samples.push(Sample {
            id: i as u64,
            direction: traj.direction,
            detections,
            beam_index: select_best_beam(codebook, scene.array_azimuth(&gt)?)?,
            gt_position: gt,
            noisy_position: None,
        });
    }
    let mut meta = BundleMetadata::new(traj.direction, "synthetic");
    meta.codebook_size = codebook.num_beams();
    let clean = DatasetBundle::new(samples, meta)?;
    inject_noise(&clean, noise)
}

/// Uniform over `[0, 1]` minus the band `(tx - sep, tx + sep)`.
fn distractor_x<R: Rng>(rng: &mut R, tx: f64, sep: f64) -> f64 {
    let left = (tx - sep).max(0.0);
    let right_start = (tx + sep).min(1.0);
    let right = 1.0 - right_start;
    let u = rng.random::<f64>() * (left + right);
    if u < left {
        u
    } else {
        (right_start + (u - left)).min(1.0)
    }
}
