use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Gradients, MlpModel, Workspace};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;
const FD_STEP: f64 = 1e-5;
const FD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Zero returns the initial model untouched.
    pub epochs: usize,
    /// Clamped to the dataset size.
    pub batch_size: usize,
    pub seed: u64,
    pub weight_init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 300,
            batch_size: 32,
            seed: 0,
            weight_init_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidTrainConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidTrainConfig(
                "batch size must be at least 1".into(),
            ));
        }
        if !(self.weight_init_scale >= 0.0 && self.weight_init_scale.is_finite()) {
            return Err(Error::InvalidTrainConfig(format!(
                "weight init scale must be non-negative, got {}",
                self.weight_init_scale
            )));
        }
        Ok(())
    }

    /// The seeded starting point used by [`train`] callers.
    pub fn initial_model(&self, layer_dims: &[usize]) -> Result<MlpModel> {
        self.validate()?;
        let mut rng = seeded_rng(derive_seed(self.seed, "init"));
        MlpModel::random(layer_dims, self.weight_init_scale, &mut rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: MlpModel,
    /// Full-dataset MSE after each epoch.
    pub loss_history: Vec<f64>,
}

/// Mini-batch Adam on the mean squared error. Rows are reshuffled every
/// epoch from a stream derived from `config.seed`.
pub fn train(
    mut model: MlpModel,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    model.check_batch(inputs, targets)?;
    let n = inputs.len();
    let batch_size = config.batch_size.min(n);
    let mut rng = seeded_rng(derive_seed(config.seed, "shuffle"));
    let mut order: Vec<usize> = (0..n).collect();
    let mut ws = Workspace::new(&model);
    let mut grads = Gradients::zeros_like(&model);
    let count = model.parameter_count();
    let mut m = vec![0.0; count];
    let mut v = vec![0.0; count];
    let mut step = 0i32;
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(batch_size) {
            grads.clear();
            model.accumulate(inputs, targets, batch, &mut ws, &mut grads);
            step += 1;
            let c1 = 1.0 - BETA1.powi(step);
            let c2 = 1.0 - BETA2.powi(step);
            for (((p, g), m), v) in model
                .parameters_mut()
                .zip(grads.values())
                .zip(&mut m)
                .zip(&mut v)
            {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                *p -= config.learning_rate * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPSILON);
            }
        }
        let loss = model.batch_loss(inputs, targets, &mut ws);
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        history.push(loss);
    }
    Ok(TrainOutcome {
        model,
        loss_history: history,
    })
}

/// Largest relative disagreement between the analytic gradient and central
/// finite differences, `|ga - gn| / max(|ga|, |gn|, 1e-8)`.
pub fn gradient_check(model: &MlpModel, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    let (_, analytic) = model.loss_and_gradient(inputs, targets)?;
    let analytic: Vec<f64> = analytic.values().collect();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (k, ga) in analytic.iter().enumerate() {
        let original = *probe.parameters_mut().nth(k).expect("index in range");
        let mut loss_at = |value: f64| -> Result<f64> {
            *probe.parameters_mut().nth(k).expect("index in range") = value;
            Ok(probe.loss_and_gradient(inputs, targets)?.0)
        };
        let plus = loss_at(original + FD_STEP)?;
        let minus = loss_at(original - FD_STEP)?;
        loss_at(original)?;
        let gn = (plus - minus) / (2.0 * FD_STEP);
        let rel = (ga - gn).abs() / ga.abs().max(gn.abs()).max(FD_FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}
