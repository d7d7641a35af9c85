use ndarray::Array2;

use super::{loss_from_logits, Mode, Model};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for the relative error, so that parameters whose true
/// gradient is zero (e.g. biases in front of batch-norm) are judged on
/// absolute error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub n_params: usize,
    /// `(tensor, element)` with the largest error.
    pub worst: (usize, usize),
    pub all_finite: bool,
}

/// Compares backprop gradients with central differences (step 1e-5) on every
/// parameter. Batch-norm uses batch statistics; dropout is off.
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(model: &Model<f64>, x: &Array2<f64>, targets: &Array2<f64>) -> Result<GradCheckReport> {
    let kind = model.spec.loss;
    let fwd = model.forward(x, Mode::TrainNoDropout, None)?;
    let analytic = model.backward(&fwd, targets)?;
    let mut probe = model.clone();
    let eval = |m: &Model<f64>| -> Result<f64> {
        let f = m.forward(x, Mode::TrainNoDropout, None)?;
        loss_from_logits(&f.logits, targets, kind)
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        n_params: 0,
        worst: (0, 0),
        all_finite: true,
    };
    for (k, grads) in analytic.0.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = probe.param_slices_mut()[k][i];
            probe.param_slices_mut()[k][i] = orig + FD_STEP;
            let plus = eval(&probe)?;
            probe.param_slices_mut()[k][i] = orig - FD_STEP;
            let minus = eval(&probe)?;
            probe.param_slices_mut()[k][i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            report.all_finite &= a.is_finite() && numeric.is_finite();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst = (k, i);
            }
            report.n_params += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::super::{Activation, LayerSpec, LossKind, ModelSpec};
    use super::*;
    use crate::seed::Seed;
    use rand::Rng;

    fn batch(n: usize, width: usize, classes: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let mut rng = Seed(seed).rng();
        let x = Array2::from_shape_simple_fn((n, width), || rng.random_range(-1.0..1.0));
        let mut y = Array2::zeros((n, classes));
        for i in 0..n {
            y[[i, i % classes]] = 1.0;
        }
        (x, y)
    }

    #[test]
    fn small_batch_norm_model() {
        let spec = ModelSpec {
            input_width: 8,
            input_dropout: 0.0,
            input_batch_norm: false,
            layers: vec![
                LayerSpec::new(6, Activation::Tanh, 0.0, true),
                LayerSpec::new(4, Activation::Softmax, 0.0, false),
            ],
            loss: LossKind::SoftmaxCrossEntropy,
            seed: Seed(8),
        };
        let m = Model::<f64>::build(&spec).unwrap();
        let (x, y) = batch(5, 8, 4, 1);
        let r = gradient_check(&m, &x, &y).unwrap();
        assert_eq!(r.n_params, spec.parameter_count());
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }

    #[test]
    fn zero_input_gives_finite_gradients() {
        let spec = ModelSpec {
            input_width: 3,
            input_dropout: 0.0,
            input_batch_norm: true,
            layers: vec![
                LayerSpec::new(4, Activation::Relu, 0.0, true),
                LayerSpec::new(4, Activation::Sigmoid, 0.0, false),
            ],
            loss: LossKind::SigmoidCrossEntropy,
            seed: Seed(2),
        };
        let m = Model::<f64>::build(&spec).unwrap();
        let (_, y) = batch(4, 3, 4, 0);
        let r = gradient_check(&m, &Array2::zeros((4, 3)), &y).unwrap();
        assert!(r.all_finite);
    }
}
