//! Spherical geodesy on a fixed-radius Earth.
//!
//! Distances use the haversine formula with a mean radius of 6,371 km. Small
//! displacements (tens of meters) are handled in an equirectangular local
//! tangent plane anchored at an origin, which is also where GPS noise is drawn.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Largest offset accepted by [`apply_offset`].
pub const MAX_LOCAL_OFFSET_M: f64 = 10_000.0;

/// Largest origin latitude accepted by [`apply_offset`].
pub const MAX_OFFSET_LATITUDE_DEG: f64 = 89.0;

const METERS_PER_DEGREE: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

/// WGS-84 latitude/longitude in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPosition {
    pub lat_deg: f64,
    pub lon_deg: f64,
}

impl GeoPosition {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self> {
        let pos = GeoPosition { lat_deg, lon_deg };
        pos.validate()?;
        Ok(pos)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lat_deg.is_finite()
            && self.lon_deg.is_finite()
            && (-90.0..=90.0).contains(&self.lat_deg)
            && (-180.0..=180.0).contains(&self.lon_deg);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidPosition {
                lat_deg: self.lat_deg,
                lon_deg: self.lon_deg,
            })
        }
    }

    /// Arithmetic mean of latitudes and longitudes.
    ///
    /// Only meaningful for clusters spanning a few meters away from the
    /// antimeridian, which is the only way this crate uses it.
    pub fn mean<'a>(positions: impl IntoIterator<Item = &'a GeoPosition>) -> Option<GeoPosition> {
        let mut n = 0usize;
        let (mut lat, mut lon) = (0.0, 0.0);
        for p in positions {
            lat += p.lat_deg;
            lon += p.lon_deg;
            n += 1;
        }
        (n > 0).then(|| GeoPosition {
            lat_deg: lat / n as f64,
            lon_deg: lon / n as f64,
        })
    }
}

/// Displacement in the local east/north tangent plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalOffset {
    pub east_m: f64,
    pub north_m: f64,
}

impl LocalOffset {
    pub fn new(east_m: f64, north_m: f64) -> Self {
        LocalOffset { east_m, north_m }
    }

    pub fn magnitude(&self) -> f64 {
        self.east_m.hypot(self.north_m)
    }
}

/// Parameters of the isotropic Gaussian GPS error model.
///
/// `target_rms_m` is the root-mean-square radial (2-D) displacement, so the
/// per-axis standard deviation is `target_rms_m / sqrt(2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub target_rms_m: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(target_rms_m: f64, seed: u64) -> Result<Self> {
        let spec = NoiseSpec { target_rms_m, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_rms_m.is_finite() && self.target_rms_m >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidNoise(self.target_rms_m))
        }
    }
}

/// Great-circle distance in meters.
pub fn haversine_distance(a: &GeoPosition, b: &GeoPosition) -> f64 {
    let phi1 = a.lat_deg.to_radians();
    let phi2 = b.lat_deg.to_radians();
    let half_dphi = (phi2 - phi1) / 2.0;
    let half_dlambda = (b.lon_deg - a.lon_deg).to_radians() / 2.0;
    let h = half_dphi.sin().powi(2) + phi1.cos() * phi2.cos() * half_dlambda.sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.clamp(0.0, 1.0).sqrt().asin()
}

/// Moves `origin` by a small east/north displacement.
pub fn apply_offset(origin: &GeoPosition, offset: &LocalOffset) -> Result<GeoPosition> {
    origin.validate()?;
    check_origin_latitude(origin)?;
    let magnitude_m = offset.magnitude();
    if !magnitude_m.is_finite() || magnitude_m >= MAX_LOCAL_OFFSET_M {
        return Err(Error::OffsetTooLarge { magnitude_m });
    }
    let lat_deg = origin.lat_deg + offset.north_m / METERS_PER_DEGREE;
    let lon_deg =
        origin.lon_deg + offset.east_m / (METERS_PER_DEGREE * origin.lat_deg.to_radians().cos());
    Ok(GeoPosition {
        lat_deg,
        lon_deg: wrap_longitude(lon_deg),
    })
}

/// Inverse of [`apply_offset`]: the local displacement from `origin` to `target`.
pub fn offset_between(origin: &GeoPosition, target: &GeoPosition) -> Result<LocalOffset> {
    check_origin_latitude(origin)?;
    let dlon = wrap_longitude(target.lon_deg - origin.lon_deg);
    Ok(LocalOffset {
        east_m: dlon * METERS_PER_DEGREE * origin.lat_deg.to_radians().cos(),
        north_m: (target.lat_deg - origin.lat_deg) * METERS_PER_DEGREE,
    })
}

/// Per-axis standard deviation that yields the requested radial RMS.
pub fn calibrate_axis_sigma(spec: &NoiseSpec) -> f64 {
    spec.target_rms_m / std::f64::consts::SQRT_2
}

/// Displaces `pos` by independent zero-mean Gaussian east/north errors.
///
/// Two standard normal draws are consumed from `rng` per call, east first,
/// even when the target RMS is zero, so streams stay aligned across noise
/// levels that share a seed.
pub fn add_gps_noise<R: Rng + ?Sized>(
    pos: &GeoPosition,
    spec: &NoiseSpec,
    rng: &mut R,
) -> Result<GeoPosition> {
    spec.validate()?;
    let sigma = calibrate_axis_sigma(spec);
    let east: f64 = rng.sample(StandardNormal);
    let north: f64 = rng.sample(StandardNormal);
    if sigma == 0.0 {
        return Ok(*pos);
    }
    apply_offset(pos, &LocalOffset::new(east * sigma, north * sigma))
}

fn check_origin_latitude(origin: &GeoPosition) -> Result<()> {
    if origin.lat_deg.abs() > MAX_OFFSET_LATITUDE_DEG {
        return Err(Error::PolarOrigin {
            lat_deg: origin.lat_deg,
        });
    }
    Ok(())
}

fn wrap_longitude(lon_deg: f64) -> f64 {
    if (-180.0..=180.0).contains(&lon_deg) {
        lon_deg
    } else {
        (lon_deg + 180.0).rem_euclid(360.0) - 180.0
    }
}
