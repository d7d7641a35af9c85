//! Dense networks: affine layers with optional batch normalization, dropout
//! and activations, cross-entropy losses, Adam and a training loop.
//!
//! Each layer computes affine → batch-norm → activation → dropout. An input
//! stage may normalize and drop out the raw features before the first layer.
//! Everything is generic over [`Real`]; training runs in `f32` and gradient
//! checks in `f64`.

mod adam;
mod checkpoint;
mod gradcheck;
mod loss;
mod model;
mod train;

use std::fmt::Debug;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Seed;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use gradcheck::{gradient_check, GradCheckReport};
pub use loss::{loss, loss_from_logits, output_gradient};
pub use model::{BatchNorm, DenseLayer, Forward, Grads, Mode, Model};
pub use train::{argmax_rows, extract_activations, predict, top1_accuracy, train, EpochRecord, TrainConfig, TrainOutcome};

pub trait Real: Float + LinalgScalar + ScalarOperand + FromPrimitive + Debug + Send + Sync + std::iter::Sum + 'static {}
impl Real for f32 {}
impl Real for f64 {}

pub(crate) fn real<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("representable")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Softmax,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SoftmaxCrossEntropy,
    /// Mean binary cross-entropy over every class bit.
    SigmoidCrossEntropy,
}

impl LossKind {
    pub fn head(self) -> Activation {
        match self {
            LossKind::SoftmaxCrossEntropy => Activation::Softmax,
            LossKind::SigmoidCrossEntropy => Activation::Sigmoid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub batch_norm: bool,
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation, dropout: f64, batch_norm: bool) -> Self {
        LayerSpec {
            width,
            activation,
            dropout,
            batch_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_width: usize,
    /// Dropout applied to the (normalized) input features.
    #[serde(default)]
    pub input_dropout: f64,
    #[serde(default)]
    pub input_batch_norm: bool,
    pub layers: Vec<LayerSpec>,
    pub loss: LossKind,
    pub seed: Seed,
}

impl ModelSpec {
    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(self.input_width, |l| l.width)
    }

    pub fn has_batch_norm(&self) -> bool {
        self.input_batch_norm || self.layers.iter().any(|l| l.batch_norm)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("model spec", reason));
        if self.input_width == 0 {
            return bad("input width must be >= 1".into());
        }
        if self.layers.is_empty() {
            return bad("needs at least one layer".into());
        }
        if !(0.0..1.0).contains(&self.input_dropout) {
            return bad(format!("input dropout {} outside [0, 1)", self.input_dropout));
        }
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            if l.width == 0 {
                return bad(format!("layer {i} has width 0"));
            }
            if !(0.0..1.0).contains(&l.dropout) {
                return bad(format!("layer {i} dropout {} outside [0, 1)", l.dropout));
            }
            if i < last && l.activation == Activation::Softmax {
                return bad(format!("layer {i}: softmax is only allowed on the output layer"));
            }
        }
        let head = self.layers[last].activation;
        if head != self.loss.head() {
            return bad(format!("{:?} needs a {:?} output, found {head:?}", self.loss, self.loss.head()));
        }
        if self.layers[last].dropout > 0.0 {
            return bad("the output layer cannot use dropout".into());
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = if self.input_batch_norm { 2 * self.input_width } else { 0 };
        let mut width = self.input_width;
        for l in &self.layers {
            n += width * l.width + l.width;
            if l.batch_norm {
                n += 2 * l.width;
            }
            width = l.width;
        }
        n
    }
}
