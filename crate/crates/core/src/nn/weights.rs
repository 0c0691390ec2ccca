use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, DenseLayer, MlpModel, Normalizer, Regressor};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct WeightFile {
    layer_dims: Vec<usize>,
    layers: Vec<LayerRecord>,
    input_normalizer: Normalizer,
    target_normalizer: Normalizer,
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    activation: Activation,
    /// One array per output unit.
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

impl WeightFile {
    fn from_regressor(reg: &Regressor) -> Self {
        WeightFile {
            layer_dims: reg.model.layer_dims(),
            layers: reg
                .model
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    activation: l.activation,
                    weights: l
                        .weights
                        .chunks_exact(l.inputs)
                        .map(<[f64]>::to_vec)
                        .collect(),
                    biases: l.biases.clone(),
                })
                .collect(),
            input_normalizer: reg.input_normalizer.clone(),
            target_normalizer: reg.target_normalizer.clone(),
        }
    }

    fn into_regressor(self) -> Result<Regressor> {
        let dims = &self.layer_dims;
        if dims.len() != self.layers.len() + 1 {
            return Err(Error::WeightFile(format!(
                "{} layer dims describe {} layers, file has {}",
                dims.len(),
                dims.len().saturating_sub(1),
                self.layers.len()
            )));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, rec) in self.layers.into_iter().enumerate() {
            let (inputs, outputs) = (dims[i], dims[i + 1]);
            if rec.weights.len() != outputs || rec.biases.len() != outputs {
                return Err(Error::WeightFile(format!(
                    "layer {i}: expected {outputs} weight rows and biases, got {} and {}",
                    rec.weights.len(),
                    rec.biases.len()
                )));
            }
            if let Some(row) = rec.weights.iter().position(|r| r.len() != inputs) {
                return Err(Error::WeightFile(format!(
                    "layer {i}: weight row {row} has {} entries, expected {inputs}",
                    rec.weights[row].len()
                )));
            }
            layers.push(DenseLayer {
                inputs,
                outputs,
                weights: rec.weights.concat(),
                biases: rec.biases,
                activation: rec.activation,
            });
        }
        let model = MlpModel::from_layers(layers)?;
        self.input_normalizer
            .validate()
            .and_then(|_| self.target_normalizer.validate())
            .map_err(|e| Error::WeightFile(e.to_string()))?;
        Regressor::new(model, self.input_normalizer, self.target_normalizer)
            .map_err(|e| Error::WeightFile(e.to_string()))
    }
}

pub fn save_weights(reg: &Regressor, path: &Path) -> Result<()> {
    let text =
        serde_json::to_string_pretty(&WeightFile::from_regressor(reg)).map_err(|source| {
            Error::Json {
                path: path.to_path_buf(),
                source,
            }
        })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<Regressor> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: WeightFile = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    file.into_regressor()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand::Rng;

    fn regressor() -> Regressor {
        let mut rng = seeded_rng(5);
        let model = MlpModel::random(&[2, 6, 6, 2], 1.0, &mut rng).unwrap();
        let inorm = Normalizer::new(vec![0.5, 0.5], vec![0.1, 0.3]).unwrap();
        let tnorm = Normalizer::new(vec![33.42, -111.93], vec![1.3e-5, 2.1e-5]).unwrap();
        Regressor::new(model, inorm, tnorm).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let reg = regressor();
        save_weights(&reg, &path).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(back, reg);
        let mut rng = seeded_rng(6);
        for _ in 0..100 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            assert_eq!(back.predict(&x).unwrap(), reg.predict(&x).unwrap());
        }
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_weights(&regressor(), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_weights(&path), Err(Error::Json { .. })));
    }

    #[test]
    fn inconsistent_dims_name_the_layer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_weights(&regressor(), &path).unwrap();
        let mut doc: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        doc["layers"][1]["weights"][0]
            .as_array_mut()
            .unwrap()
            .push(serde_json::json!(0.0));
        fs::write(&path, doc.to_string()).unwrap();
        let err = load_weights(&path).unwrap_err();
        assert!(matches!(err, Error::WeightFile(_)));
        assert!(err.to_string().contains("layer 1"), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_weights(Path::new("/nonexistent/m.json")),
            Err(Error::Io { .. })
        ));
    }
}
