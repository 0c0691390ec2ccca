//! Small dense feed-forward networks trained with mean squared error.
//!
//! Hidden layers use ReLU and the output layer is linear. Weights are stored
//! row-major with one row per output unit.

mod normalize;
mod train;
mod weights;

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use self::normalize::Normalizer;
pub use self::train::{gradient_check, train, TrainConfig, TrainOutcome};
pub use self::weights::{load_weights, save_weights};
use crate::error::{Error, Result};
use crate::rng::SimRng;

pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        DenseLayer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
            activation,
        }
    }

    fn affine(&self, input: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.inputs).zip(&self.biases))
        {
            *o = b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<DenseLayer>,
}

impl MlpModel {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        let model = MlpModel { layers };
        model.validate()?;
        Ok(model)
    }

    /// ReLU hidden layers and a linear output, all parameters zero.
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::Invalid(format!(
                "layer dims {layer_dims:?} need at least two positive entries"
            )));
        }
        let last = layer_dims.len() - 2;
        let layers = layer_dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| {
                let act = if i == last {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                DenseLayer::zeros(d[0], d[1], act)
            })
            .collect();
        MlpModel::from_layers(layers)
    }

    /// Weights uniform in `±scale * sqrt(1 / fan_in)`, biases zero.
    pub fn random(layer_dims: &[usize], scale: f64, rng: &mut SimRng) -> Result<Self> {
        let mut model = MlpModel::zeros(layer_dims)?;
        for layer in &mut model.layers {
            let bound = scale * (1.0 / layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                *w = if bound > 0.0 {
                    rng.random_range(-bound..bound)
                } else {
                    0.0
                };
            }
        }
        Ok(model)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].inputs];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::WeightFile("model has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(Error::WeightFile(format!(
                    "layer {i}: expected {}x{} weights and {} biases, got {} and {}",
                    l.outputs,
                    l.inputs,
                    l.outputs,
                    l.weights.len(),
                    l.biases.len()
                )));
            }
            if i > 0 && self.layers[i - 1].outputs != l.inputs {
                return Err(Error::WeightFile(format!(
                    "layer {i}: takes {} inputs but layer {} emits {}",
                    l.inputs,
                    i - 1,
                    self.layers[i - 1].outputs
                )));
            }
            if !l.weights.iter().chain(&l.biases).all(|v| v.is_finite()) {
                return Err(Error::WeightFile(format!(
                    "layer {i}: non-finite parameter"
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut ws = Workspace::new(self);
        self.forward_into(input, &mut ws);
        Ok(ws.post.last().expect("at least one layer").clone())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    fn forward_into(&self, input: &[f64], ws: &mut Workspace) {
        for (i, layer) in self.layers.iter().enumerate() {
            let (prev, rest) = ws.post.split_at_mut(i);
            let x: &[f64] = if i == 0 { input } else { &prev[i - 1] };
            layer.affine(x, &mut ws.pre[i]);
            for (p, z) in rest[0].iter_mut().zip(&ws.pre[i]) {
                *p = layer.activation.apply(*z);
            }
        }
    }

    /// Mean squared error over `inputs` and its gradient.
    pub fn loss_and_gradient(
        &self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
    ) -> Result<(f64, Gradients)> {
        self.check_batch(inputs, targets)?;
        let idx: Vec<usize> = (0..inputs.len()).collect();
        let mut ws = Workspace::new(self);
        let mut grads = Gradients::zeros_like(self);
        let loss = self.accumulate(inputs, targets, &idx, &mut ws, &mut grads);
        Ok((loss, grads))
    }

    fn check_batch(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<()> {
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                context: "input/target rows",
                expected: inputs.len(),
                got: targets.len(),
            });
        }
        if inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for (x, t) in inputs.iter().zip(targets) {
            self.check_input(x)?;
            if t.len() != self.output_dim() {
                return Err(Error::DimensionMismatch {
                    context: "network target",
                    expected: self.output_dim(),
                    got: t.len(),
                });
            }
        }
        Ok(())
    }

    /// Adds the gradient of the batch loss (mean over the rows in `batch`)
    /// into `grads` and returns that loss. Shapes must be checked already.
    fn accumulate(
        &self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        batch: &[usize],
        ws: &mut Workspace,
        grads: &mut Gradients,
    ) -> f64 {
        let out_dim = self.output_dim();
        let norm = 1.0 / (batch.len() * out_dim) as f64;
        let mut loss = 0.0;
        let last = self.layers.len() - 1;
        for &r in batch {
            let x = &inputs[r];
            self.forward_into(x, ws);
            for (k, (y, t)) in ws.post[last].iter().zip(&targets[r]).enumerate() {
                let e = y - t;
                loss += e * e;
                ws.delta[last][k] =
                    2.0 * e * norm * self.layers[last].activation.derivative(ws.pre[last][k]);
            }
            for i in (0..self.layers.len()).rev() {
                let layer = &self.layers[i];
                let layer_in: &[f64] = if i == 0 { x } else { &ws.post[i - 1] };
                let g = &mut grads.layers[i];
                for (o, &d) in ws.delta[i].iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    g.biases[o] += d;
                    let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (gw, xi) in row.iter_mut().zip(layer_in) {
                        *gw += d * xi;
                    }
                }
                if i > 0 {
                    let (below, here) = ws.delta.split_at_mut(i);
                    let prev = &mut below[i - 1];
                    let prev_act = self.layers[i - 1].activation;
                    for (j, p) in prev.iter_mut().enumerate() {
                        let mut s = 0.0;
                        for (o, d) in here[0].iter().enumerate() {
                            s += layer.weights[o * layer.inputs + j] * d;
                        }
                        *p = s * prev_act.derivative(ws.pre[i - 1][j]);
                    }
                }
            }
        }
        loss * norm
    }

    /// Batch loss without gradients.
    fn batch_loss(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>], ws: &mut Workspace) -> f64 {
        let last = self.layers.len() - 1;
        let mut total = 0.0;
        for (x, t) in inputs.iter().zip(targets) {
            self.forward_into(x, ws);
            total += ws.post[last]
                .iter()
                .zip(t)
                .map(|(y, t)| (y - t).powi(2))
                .sum::<f64>();
        }
        total / (inputs.len() * self.output_dim()) as f64
    }

    fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }
}

/// Parameter-shaped gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Gradients {
    fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    fn clear(&mut self) {
        for v in self.values_mut() {
            *v = 0.0;
        }
    }

    /// Flattened in the same order as the model parameters.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }
}

struct Workspace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(model: &MlpModel) -> Self {
        let bufs = || model.layers.iter().map(|l| vec![0.0; l.outputs]).collect();
        Workspace {
            pre: bufs(),
            post: bufs(),
            delta: bufs(),
        }
    }
}

/// Mean over rows of the mean squared per-dimension error.
pub fn mse_loss(predictions: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            context: "prediction/target rows",
            expected: targets.len(),
            got: predictions.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for (p, t) in predictions.iter().zip(targets) {
        if p.len() != t.len() || t.is_empty() {
            return Err(Error::DimensionMismatch {
                context: "prediction/target columns",
                expected: t.len(),
                got: p.len(),
            });
        }
        total += p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / t.len() as f64;
    }
    Ok(total / predictions.len() as f64)
}

/// A network together with the affine maps between raw and network units.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    pub model: MlpModel,
    pub input_normalizer: Normalizer,
    pub target_normalizer: Normalizer,
}

impl Regressor {
    pub fn new(
        model: MlpModel,
        input_normalizer: Normalizer,
        target_normalizer: Normalizer,
    ) -> Result<Self> {
        if input_normalizer.len() != model.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "input normalizer",
                expected: model.input_dim(),
                got: input_normalizer.len(),
            });
        }
        if target_normalizer.len() != model.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "target normalizer",
                expected: model.output_dim(),
                got: target_normalizer.len(),
            });
        }
        Ok(Regressor {
            model,
            input_normalizer,
            target_normalizer,
        })
    }

    /// Fits both normalizers on the data, initializes a `[in, hidden.., out]`
    /// network from `config.seed` and trains it.
    pub fn fit(
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        hidden: &[usize],
        config: &TrainConfig,
    ) -> Result<(Regressor, Vec<f64>)> {
        if inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Regressor::fit_with_inputs(inputs, targets, Normalizer::fit(inputs)?, hidden, config)
    }

    /// Like [`Regressor::fit`] with a caller-chosen input normalizer, e.g.
    /// the identity for one-hot inputs.
    pub fn fit_with_inputs(
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        input_normalizer: Normalizer,
        hidden: &[usize],
        config: &TrainConfig,
    ) -> Result<(Regressor, Vec<f64>)> {
        let (Some(x0), Some(t0)) = (inputs.first(), targets.first()) else {
            return Err(Error::EmptyDataset);
        };
        input_normalizer.validate()?;
        if input_normalizer.len() != x0.len() {
            return Err(Error::DimensionMismatch {
                context: "input normalizer",
                expected: x0.len(),
                got: input_normalizer.len(),
            });
        }
        let target_normalizer = Normalizer::fit(targets)?;
        let xs: Vec<Vec<f64>> = inputs
            .iter()
            .map(|x| input_normalizer.normalize(x))
            .collect();
        let ts: Vec<Vec<f64>> = targets
            .iter()
            .map(|t| target_normalizer.normalize(t))
            .collect();
        let mut dims = vec![x0.len()];
        dims.extend_from_slice(hidden);
        dims.push(t0.len());
        let model = config.initial_model(&dims)?;
        let outcome = train(model, &xs, &ts, config)?;
        let reg = Regressor::new(outcome.model, input_normalizer, target_normalizer)?;
        Ok((reg, outcome.loss_history))
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.model.check_input(input)?;
        let y = self
            .model
            .forward(&self.input_normalizer.normalize(input))?;
        Ok(self.target_normalizer.denormalize(&y))
    }
}

/// `epoch,loss` with epochs numbered from 1.
pub fn write_loss_history<W: Write>(mut w: W, history: &[f64]) -> std::io::Result<()> {
    writeln!(w, "epoch,loss")?;
    for (i, l) in history.iter().enumerate() {
        writeln!(w, "{},{l}", i + 1)?;
    }
    Ok(())
}
