//! Transmitter identification: predict where the transmitter appears in the
//! image from the beam index alone, then pick the nearest detection.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, DatasetBundle, Detection, Sample};
use crate::error::{Error, Result};
use crate::nn::{load_weights, save_weights, Normalizer, Regressor, TrainConfig};

/// One-hot vector of length `num_beams`.
pub fn encode_beam(beam_index: usize, num_beams: usize) -> Result<Vec<f64>> {
    if beam_index >= num_beams {
        return Err(Error::BeamOutOfRange {
            beam: beam_index,
            beams: num_beams,
        });
    }
    let mut v = vec![0.0; num_beams];
    v[beam_index] = 1.0;
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TxPrediction {
    /// Center predicted from the beam.
    pub estimated_center: (f64, f64),
    pub selected_index: usize,
    /// Center of the chosen detection.
    pub selected_center: (f64, f64),
}

/// Beam-to-center regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct TxIdModel {
    regressor: Regressor,
}

impl TxIdModel {
    pub fn from_regressor(regressor: Regressor) -> Result<Self> {
        if regressor.model.output_dim() != 2 {
            return Err(Error::DimensionMismatch {
                context: "transmitter model output",
                expected: 2,
                got: regressor.model.output_dim(),
            });
        }
        Ok(TxIdModel { regressor })
    }

    pub fn regressor(&self) -> &Regressor {
        &self.regressor
    }

    pub fn num_beams(&self) -> usize {
        self.regressor.model.input_dim()
    }

    pub fn predict_center(&self, beam_index: usize) -> Result<(f64, f64)> {
        let y = self
            .regressor
            .predict(&encode_beam(beam_index, self.num_beams())?)?;
        Ok((y[0], y[1]))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_weights(&self.regressor, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        TxIdModel::from_regressor(load_weights(path)?)
    }
}

/// Trains on (one-hot beam, labeled transmitter center) pairs. One-hot
/// inputs are used as they are; targets are standardized.
pub fn train_txid(
    train: &DatasetBundle,
    hidden: &[usize],
    config: &TrainConfig,
) -> Result<(TxIdModel, Vec<f64>)> {
    let q = train.metadata.codebook_size;
    let mut inputs = Vec::with_capacity(train.len());
    let mut targets = Vec::with_capacity(train.len());
    for s in &train.samples {
        let (x, y) = s.require_transmitter()?.center();
        inputs.push(encode_beam(s.beam_index, q)?);
        targets.push(vec![x, y]);
    }
    let (reg, history) =
        Regressor::fit_with_inputs(&inputs, &targets, Normalizer::identity(q), hidden, config)?;
    Ok((TxIdModel::from_regressor(reg)?, history))
}

/// Detection nearest to `estimate` in normalized image coordinates; the
/// first listed wins ties.
pub fn select_bounding_box(detections: &[Detection], estimate: (f64, f64)) -> Result<TxPrediction> {
    let mut best: Option<(usize, f64)> = None;
    for (i, d) in detections.iter().enumerate() {
        let dist = (d.x_center - estimate.0).hypot(d.y_center - estimate.1);
        if best.is_none_or(|(_, b)| dist < b) {
            best = Some((i, dist));
        }
    }
    let (i, _) = best.ok_or(Error::NoDetections)?;
    Ok(TxPrediction {
        estimated_center: estimate,
        selected_index: i,
        selected_center: detections[i].center(),
    })
}

pub fn identify(model: &TxIdModel, sample: &Sample) -> Result<TxPrediction> {
    let estimate = model.predict_center(sample.beam_index)?;
    select_bounding_box(&sample.detections, estimate)
}

/// Fraction of samples whose selected detection is the labeled transmitter.
pub fn identification_accuracy(samples: &[Sample], predictions: &[TxPrediction]) -> Result<f64> {
    if samples.len() != predictions.len() {
        return Err(Error::DimensionMismatch {
            context: "predictions per sample",
            expected: samples.len(),
            got: predictions.len(),
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let hits = samples
        .iter()
        .zip(predictions)
        .filter(|(s, p)| s.detections[p.selected_index].class_label == ClassLabel::Transmitter)
        .count();
    Ok(hits as f64 / samples.len() as f64)
}

/// `sample_id,pred_x,pred_y,selected_index,selected_x,selected_y`
pub fn write_predictions<W: Write>(
    mut w: W,
    samples: &[Sample],
    predictions: &[TxPrediction],
) -> std::io::Result<()> {
    writeln!(
        w,
        "sample_id,pred_x,pred_y,selected_index,selected_x,selected_y"
    )?;
    for (s, p) in samples.iter().zip(predictions) {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            s.id,
            p.estimated_center.0,
            p.estimated_center.1,
            p.selected_index,
            p.selected_center.0,
            p.selected_center.1
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::fixtures::{bundle, sample};
    use crate::geo::GeoPosition;
    use crate::nn::{Activation, DenseLayer, MlpModel};
    use proptest::prelude::*;

    fn det(x: f64, y: f64, label: ClassLabel) -> Detection {
        Detection::new(label, x, y).unwrap()
    }

    fn constant_model(q: usize, x: f64, y: f64) -> TxIdModel {
        let mut layer = DenseLayer::zeros(q, 2, Activation::Identity);
        layer.biases = vec![x, y];
        let model = MlpModel::from_layers(vec![layer]).unwrap();
        let reg = Regressor::new(model, Normalizer::identity(q), Normalizer::identity(2)).unwrap();
        TxIdModel::from_regressor(reg).unwrap()
    }

    #[test]
    fn one_hot_encoding() {
        let v = encode_beam(0, 64).unwrap();
        assert_eq!(v[0], 1.0);
        assert_eq!(v.iter().sum::<f64>(), 1.0);
        assert_eq!(encode_beam(63, 64).unwrap()[63], 1.0);
        assert!(matches!(
            encode_beam(64, 64),
            Err(Error::BeamOutOfRange {
                beam: 64,
                beams: 64
            })
        ));
    }

    #[test]
    fn selection_examples() {
        let only = [det(0.9, 0.1, ClassLabel::Distractor)];
        assert_eq!(
            select_bounding_box(&only, (0.1, 0.9))
                .unwrap()
                .selected_index,
            0
        );
        let two = [
            det(0.51, 0.5, ClassLabel::Transmitter),
            det(0.9, 0.5, ClassLabel::Distractor),
        ];
        assert_eq!(
            select_bounding_box(&two, (0.5, 0.5))
                .unwrap()
                .selected_index,
            0
        );
        let tie = [
            det(0.4, 0.5, ClassLabel::Distractor),
            det(0.6, 0.5, ClassLabel::Transmitter),
        ];
        let p = select_bounding_box(&tie, (0.5, 0.5)).unwrap();
        assert_eq!(p.selected_index, 0);
        assert_eq!(p.selected_center, (0.4, 0.5));
        assert!(matches!(
            select_bounding_box(&[], (0.5, 0.5)),
            Err(Error::NoDetections)
        ));
    }

    #[test]
    fn constant_model_picks_detection_nearest_center() {
        let model = constant_model(8, 0.5, 0.5);
        let mut s = sample(0, 0.2, GeoPosition::new(0.0, 0.0).unwrap());
        s.detections.push(det(0.55, 0.45, ClassLabel::Distractor));
        s.detections.push(det(0.95, 0.5, ClassLabel::Distractor));
        let p = identify(&model, &s).unwrap();
        assert_eq!(p.selected_index, 1);
        assert_eq!(p.estimated_center, (0.5, 0.5));
    }

    #[test]
    fn lone_transmitter_is_always_found() {
        let model = constant_model(8, 0.9, 0.1);
        let s = sample(0, 0.2, GeoPosition::new(0.0, 0.0).unwrap());
        let p = identify(&model, &s).unwrap();
        assert_eq!(identification_accuracy(&[s], &[p]).unwrap(), 1.0);
    }

    #[test]
    fn single_sample_is_memorized() {
        let mut s = sample(0, 0.37, GeoPosition::new(0.0, 0.0).unwrap());
        s.beam_index = 5;
        let b = bundle(vec![s]);
        let config = TrainConfig {
            epochs: 300,
            ..TrainConfig::default()
        };
        let (model, _) = train_txid(&b, &[64, 64], &config).unwrap();
        let (x, y) = model.predict_center(5).unwrap();
        let mse = ((x - 0.37).powi(2) + (y - 0.5).powi(2)) / 2.0;
        assert!(mse < 1e-4, "mse {mse}");
    }

    #[test]
    fn missing_label_names_sample() {
        let mut s = sample(7, 0.3, GeoPosition::new(0.0, 0.0).unwrap());
        s.detections[0].class_label = ClassLabel::Distractor;
        let b = bundle(vec![s]);
        assert!(matches!(
            train_txid(&b, &[4], &TrainConfig::default()),
            Err(Error::MissingTransmitter { sample_id: 7 })
        ));
    }

    #[test]
    fn predictions_csv_layout() {
        let s = sample(3, 0.25, GeoPosition::new(0.0, 0.0).unwrap());
        let p = select_bounding_box(&s.detections, (0.2, 0.4)).unwrap();
        let mut out = Vec::new();
        write_predictions(&mut out, &[s], &[p]).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "sample_id,pred_x,pred_y,selected_index,selected_x,selected_y\n3,0.2,0.4,0,0.25,0.5\n"
        );
    }

    proptest! {
        #[test]
        fn selection_is_permutation_invariant(
            pts in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 1..8),
            est in (0.0..1.0f64, 0.0..1.0f64),
            rot in 0usize..8,
        ) {
            let dets: Vec<Detection> = pts.iter().map(|&(x, y)| det(x, y, ClassLabel::Distractor)).collect();
            let mut permuted = dets.clone();
            let k = rot % dets.len();
            permuted.rotate_left(k);
            let a = select_bounding_box(&dets, est).unwrap();
            let b = select_bounding_box(&permuted, est).unwrap();
            let da = (a.selected_center.0 - est.0).hypot(a.selected_center.1 - est.1);
            let db = (b.selected_center.0 - est.0).hypot(b.selected_center.1 - est.1);
            prop_assert_eq!(da, db);
            prop_assert!(dets.iter().any(|d| d.center() == a.selected_center));
            if dets.iter().filter(|d| (d.x_center - est.0).hypot(d.y_center - est.1) == da).count() == 1 {
                prop_assert_eq!(a.selected_center, b.selected_center);
                prop_assert_eq!(b.selected_index, (a.selected_index + dets.len() - k) % dets.len());
            }
        }
    }
}
