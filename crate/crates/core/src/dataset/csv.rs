//! Dataset CSV format.
//!
//! ```text
//! id,direction,beam_index,gt_lat,gt_lon,noisy_lat,noisy_lon,num_detections,det0_class,det0_x,det0_y,...
//! ```
//!
//! Detections are flattened after their count; rows with fewer detections
//! than the widest row are padded with empty fields. Floats are written in
//! shortest round-trip form, so a save/load cycle is bit-exact. Bundle
//! metadata that has no column lives in a `<stem>.meta.json` sidecar.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{BundleMetadata, ClassLabel, DatasetBundle, Detection, Direction, Sample};
use crate::error::{Error, Result};
use crate::geo::GeoPosition;

const FIXED_COLUMNS: [&str; 8] = [
    "id",
    "direction",
    "beam_index",
    "gt_lat",
    "gt_lon",
    "noisy_lat",
    "noisy_lon",
    "num_detections",
];

/// Sidecar path holding the metadata of the dataset stored at `csv_path`.
pub fn metadata_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

/// Writes the bundle as CSV plus its metadata sidecar.
pub fn save_csv(bundle: &DatasetBundle, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_csv(bundle, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))?;

    let meta_path = metadata_path(path);
    let json = serde_json::to_string_pretty(&bundle.metadata).map_err(|source| Error::Json {
        path: meta_path.clone(),
        source,
    })?;
    std::fs::write(&meta_path, json + "\n").map_err(|e| Error::io(&meta_path, e))
}

/// Reads a dataset CSV. Metadata comes from the sidecar when present,
/// otherwise defaults are used with the direction taken from the rows.
pub fn load_csv(path: &Path) -> Result<DatasetBundle> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let meta_path = metadata_path(path);
    let metadata = if meta_path.exists() {
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        Some(
            serde_json::from_str::<BundleMetadata>(&text).map_err(|source| Error::Json {
                path: meta_path.clone(),
                source,
            })?,
        )
    } else {
        None
    };
    let source = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_csv_inner(BufReader::new(file), Some(path), metadata, source)
}

/// Reads a dataset CSV from any reader, using default metadata.
pub fn read_csv<R: Read>(reader: R) -> Result<DatasetBundle> {
    read_csv_inner(reader, None, None, "csv".to_string())
}

pub fn write_csv<W: Write>(bundle: &DatasetBundle, writer: W) -> Result<()> {
    let width = bundle
        .samples
        .iter()
        .map(|s| s.detections.len())
        .max()
        .unwrap_or(0);
    let mut w = ::csv::WriterBuilder::new().from_writer(writer);
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    for i in 0..width {
        header.extend([
            format!("det{i}_class"),
            format!("det{i}_x"),
            format!("det{i}_y"),
        ]);
    }
    w.write_record(&header).map_err(csv_write_error)?;

    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for s in &bundle.samples {
        let mut row = vec![
            s.id.to_string(),
            s.direction.as_str().to_string(),
            s.beam_index.to_string(),
            s.gt_position.lat_deg.to_string(),
            s.gt_position.lon_deg.to_string(),
            opt(s.noisy_position.map(|p| p.lat_deg)),
            opt(s.noisy_position.map(|p| p.lon_deg)),
            s.detections.len().to_string(),
        ];
        for d in &s.detections {
            row.extend([
                d.class_label.as_str().to_string(),
                d.x_center.to_string(),
                d.y_center.to_string(),
            ]);
        }
        row.resize(header.len(), String::new());
        w.write_record(&row).map_err(csv_write_error)?;
    }
    w.flush()
        .map_err(|e| Error::Invalid(format!("writing CSV: {e}")))?;
    Ok(())
}

fn csv_write_error(e: ::csv::Error) -> Error {
    Error::Invalid(format!("writing CSV: {e}"))
}

struct RowReader<'a> {
    path: Option<&'a Path>,
    line: u64,
    record: &'a ::csv::StringRecord,
}

impl RowReader<'_> {
    fn error(&self, field: impl Into<String>, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.map(Path::to_path_buf),
            line: self.line,
            field: field.into(),
            message: message.into(),
        }
    }

    fn raw(&self, idx: usize, name: &str) -> Result<&str> {
        self.record
            .get(idx)
            .map(str::trim)
            .ok_or_else(|| self.error(name, "missing field"))
    }

    fn parse<T: std::str::FromStr>(&self, idx: usize, name: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(idx, name)?;
        raw.parse()
            .map_err(|e| self.error(name, format!("cannot parse `{raw}`: {e}")))
    }

    fn optional_f64(&self, idx: usize, name: &str) -> Result<Option<f64>> {
        if self.raw(idx, name)?.is_empty() {
            Ok(None)
        } else {
            self.parse(idx, name).map(Some)
        }
    }

    fn position(
        &self,
        lat: Option<f64>,
        lon: Option<f64>,
        prefix: &str,
    ) -> Result<Option<GeoPosition>> {
        match (lat, lon) {
            (None, None) => Ok(None),
            (Some(lat_deg), Some(lon_deg)) => GeoPosition::new(lat_deg, lon_deg)
                .map(Some)
                .map_err(|e| self.error(format!("{prefix}_lat"), e.to_string())),
            _ => Err(self.error(
                format!("{prefix}_lat"),
                "latitude and longitude must both be present or both empty",
            )),
        }
    }
}

fn read_csv_inner<R: Read>(
    reader: R,
    path: Option<&Path>,
    metadata: Option<BundleMetadata>,
    source: String,
) -> Result<DatasetBundle> {
    let mut rdr = ::csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_reader(reader);
    let parse_error = |line: u64, e: ::csv::Error| Error::Parse {
        path: path.map(Path::to_path_buf),
        line,
        field: String::new(),
        message: e.to_string(),
    };

    let header = rdr.headers().map_err(|e| parse_error(1, e))?.clone();
    for (i, expected) in FIXED_COLUMNS.iter().enumerate() {
        if header.get(i).map(str::trim) != Some(*expected) {
            return Err(Error::Parse {
                path: path.map(Path::to_path_buf),
                line: 1,
                field: expected.to_string(),
                message: format!("header column {i} should be `{expected}`"),
            });
        }
    }

    let mut samples = Vec::new();
    let mut direction: Option<Direction> = metadata.as_ref().map(|m| m.direction);
    for result in rdr.records() {
        let record = result.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_error(line, e)
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row = RowReader {
            path,
            line,
            record: &record,
        };
        let sample = parse_row(&row)?;
        match direction {
            None => direction = Some(sample.direction),
            Some(d) if d != sample.direction => {
                return Err(row.error(
                    "direction",
                    format!(
                        "mixed directions: expected {}, found {}",
                        d.as_str(),
                        sample.direction.as_str()
                    ),
                ))
            }
            _ => {}
        }
        samples.push(sample);
    }

    let metadata = metadata.unwrap_or_else(|| {
        BundleMetadata::new(direction.unwrap_or(Direction::LeftToRight), source)
    });
    DatasetBundle::new(samples, metadata)
}

fn parse_row(row: &RowReader<'_>) -> Result<Sample> {
    let id: u64 = row.parse(0, "id")?;
    let dir_raw = row.raw(1, "direction")?;
    let direction = Direction::parse(dir_raw)
        .ok_or_else(|| row.error("direction", format!("expected L2R or R2L, got `{dir_raw}`")))?;
    let beam_index: usize = row.parse(2, "beam_index")?;
    let gt = row.position(
        Some(row.parse(3, "gt_lat")?),
        Some(row.parse(4, "gt_lon")?),
        "gt",
    )?;
    let noisy = row.position(
        row.optional_f64(5, "noisy_lat")?,
        row.optional_f64(6, "noisy_lon")?,
        "noisy",
    )?;
    let count: usize = row.parse(7, "num_detections")?;
    if count == 0 {
        return Err(row.error("num_detections", "at least one detection is required"));
    }

    let mut detections = Vec::with_capacity(count);
    for i in 0..count {
        let base = FIXED_COLUMNS.len() + 3 * i;
        let class_name = format!("det{i}_class");
        let class_raw = row.raw(base, &class_name)?;
        let class_label = ClassLabel::parse(class_raw).ok_or_else(|| {
            row.error(
                &class_name,
                format!("expected TX or DISTRACTOR, got `{class_raw}`"),
            )
        })?;
        let coord = |offset: usize, axis: &str| -> Result<f64> {
            let name = format!("det{i}_{axis}");
            let v: f64 = row.parse(base + offset, &name)?;
            if !(0.0..=1.0).contains(&v) {
                return Err(row.error(name, format!("value {v} outside [0, 1]")));
            }
            Ok(v)
        };
        let x_center = coord(1, "x")?;
        let y_center = coord(2, "y")?;
        detections.push(Detection {
            class_label,
            x_center,
            y_center,
        });
    }
    let trailing = FIXED_COLUMNS.len() + 3 * count;
    if row
        .record
        .iter()
        .skip(trailing)
        .any(|f| !f.trim().is_empty())
    {
        return Err(row.error(
            "num_detections",
            format!("row has fields beyond its {count} detections"),
        ));
    }

    Ok(Sample {
        id,
        direction,
        detections,
        beam_index,
        gt_position: gt.expect("ground truth parsed above"),
        noisy_position: noisy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "id,direction,beam_index,gt_lat,gt_lon,noisy_lat,noisy_lon,num_detections,det0_class,det0_x,det0_y,det1_class,det1_x,det1_y\n";

    #[test]
    fn reads_well_formed_rows() {
        let text = format!(
            "{HEADER}\
             0,L2R,12,33.42,-111.93,33.420001,-111.930002,2,TX,0.25,0.5,DISTRACTOR,0.8,0.4\n\
             1,L2R,13,33.42,-111.9299,,,1,TX,0.3,0.49,,,\n\
             2,L2R,14,33.42,-111.9298,33.42,-111.9298,1,TX,0.35,0.51,,,\n"
        );
        let b = read_csv(text.as_bytes()).unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!(b.samples[1].noisy_position, None);
        assert_eq!(
            b.samples[0].detections[1].class_label,
            ClassLabel::Distractor
        );
        assert_eq!(b.metadata.direction, Direction::LeftToRight);
    }

    #[test]
    fn out_of_range_center_cites_row() {
        let text = format!(
            "{HEADER}0,L2R,1,33.42,-111.93,,,1,TX,0.5,0.5,,,\n1,L2R,1,33.42,-111.93,,,1,TX,1.3,0.5,,,\n"
        );
        match read_csv(text.as_bytes()).unwrap_err() {
            Error::Parse { line, field, .. } => {
                assert_eq!(line, 3);
                assert_eq!(field, "det0_x");
            }
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn header_only_is_empty_bundle() {
        let b = read_csv(HEADER.as_bytes()).unwrap();
        assert!(b.is_empty());
    }

    #[test]
    fn malformed_number_names_field() {
        let text = format!("{HEADER}0,L2R,x,33.42,-111.93,,,1,TX,0.5,0.5,,,\n");
        let err = read_csv(text.as_bytes()).unwrap_err().to_string();
        assert!(
            err.contains("line 2") && err.contains("beam_index"),
            "{err}"
        );
    }

    #[test]
    fn mixed_directions_rejected() {
        let text = format!(
            "{HEADER}0,L2R,1,33.42,-111.93,,,1,TX,0.5,0.5,,,\n1,R2L,1,33.42,-111.93,,,1,TX,0.5,0.5,,,\n"
        );
        assert!(matches!(
            read_csv(text.as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    fn arb_sample(id: u64) -> impl Strategy<Value = Sample> {
        (
            0usize..64,
            (-89.0..89.0f64, -179.9..179.9f64),
            proptest::option::of((-89.0..89.0f64, -179.9..179.9f64)),
            proptest::collection::vec((any::<bool>(), 0.0..=1.0f64, 0.0..=1.0f64), 1..4),
        )
            .prop_map(move |(beam_index, (lat, lon), noisy, dets)| Sample {
                id,
                direction: Direction::RightToLeft,
                detections: dets
                    .into_iter()
                    .map(|(tx, x, y)| Detection {
                        class_label: if tx {
                            ClassLabel::Transmitter
                        } else {
                            ClassLabel::Distractor
                        },
                        x_center: x,
                        y_center: y,
                    })
                    .collect(),
                beam_index,
                gt_position: GeoPosition {
                    lat_deg: lat,
                    lon_deg: lon,
                },
                noisy_position: noisy.map(|(lat_deg, lon_deg)| GeoPosition { lat_deg, lon_deg }),
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn save_load_roundtrip(samples in (0usize..8).prop_flat_map(|n| {
            (0..n as u64).map(arb_sample).collect::<Vec<_>>()
        }), seed in proptest::option::of(any::<u64>())) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("b.csv");
            let mut metadata = BundleMetadata::new(Direction::RightToLeft, "roundtrip");
            metadata.seed = seed;
            metadata.noise_rms_m = Some(0.5);
            let bundle = DatasetBundle::new(samples, metadata).unwrap();
            save_csv(&bundle, &path).unwrap();
            let loaded = load_csv(&path).unwrap();
            prop_assert_eq!(loaded, bundle);
        }
    }
}
