use ndarray::Array2;

use super::{real, LossKind, Real};
use crate::error::{Error, Result};

fn check<T: Real>(a: &Array2<T>, targets: &Array2<T>) -> Result<()> {
    if a.dim() != targets.dim() {
        return Err(Error::Shape {
            name: "targets".into(),
            expected: a.shape().to_vec(),
            actual: targets.shape().to_vec(),
        });
    }
    if a.nrows() == 0 {
        return Err(Error::invalid("loss", "empty batch"));
    }
    LossKind::check_targets(targets)
}

/// Mean loss from output probabilities (softmax rows or per-class sigmoids).
pub fn loss<T: Real>(probs: &Array2<T>, targets: &Array2<T>, kind: LossKind) -> Result<T> {
    check(probs, targets)?;
    let tiny = T::min_positive_value();
    let n: T = real(probs.nrows() as f64);
    Ok(match kind {
        LossKind::SoftmaxCrossEntropy => {
            probs
                .iter()
                .zip(targets)
                .filter(|(_, &t)| t == T::one())
                .map(|(&p, _)| -(p.max(tiny)).ln())
                .sum::<T>()
                / n
        }
        LossKind::SigmoidCrossEntropy => {
            let c: T = real(probs.ncols() as f64);
            probs
                .iter()
                .zip(targets)
                .map(|(&p, &t)| {
                    if t == T::one() {
                        -(p.max(tiny)).ln()
                    } else {
                        -((T::one() - p).max(tiny)).ln()
                    }
                })
                .sum::<T>()
                / (n * c)
        }
    })
}

/// Numerically stable mean loss from output pre-activations.
pub fn loss_from_logits<T: Real>(logits: &Array2<T>, targets: &Array2<T>, kind: LossKind) -> Result<T> {
    check(logits, targets)?;
    let n: T = real(logits.nrows() as f64);
    Ok(match kind {
        LossKind::SoftmaxCrossEntropy => {
            let mut total = T::zero();
            for (z, t) in logits.rows().into_iter().zip(targets.rows()) {
                let max = z.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
                let zy = z.iter().zip(t.iter()).find(|(_, &t)| t == T::one()).map(|(&v, _)| v).expect("one-hot");
                total = total + lse - zy;
            }
            total / n
        }
        LossKind::SigmoidCrossEntropy => {
            let c: T = real(logits.ncols() as f64);
            logits
                .iter()
                .zip(targets)
                .map(|(&z, &t)| z.max(T::zero()) - z * t + (T::one() + (-z.abs()).exp()).ln())
                .sum::<T>()
                / (n * c)
        }
    })
}

/// Gradient of the mean loss with respect to the output pre-activations:
/// `(p - y) / n` for softmax, `(σ - y) / (n·C)` for per-class sigmoids.
pub fn output_gradient<T: Real>(probs: &Array2<T>, targets: &Array2<T>, kind: LossKind) -> Result<Array2<T>> {
    check(probs, targets)?;
    let n = probs.nrows() as f64;
    let scale: T = match kind {
        LossKind::SoftmaxCrossEntropy => real(1.0 / n),
        LossKind::SigmoidCrossEntropy => real(1.0 / (n * probs.ncols() as f64)),
    };
    Ok((probs - targets) * scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn analytic_values() {
        let t = array![[1.0, 0.0, 0.0, 0.0]];
        let l = loss(&array![[0.7, 0.1, 0.1, 0.1]], &t, LossKind::SoftmaxCrossEntropy).unwrap();
        assert!((l - 0.7f64.ln().abs()).abs() < 1e-12);
        assert!((l - 0.3567).abs() < 1e-4);
        let u = loss(&array![[0.25, 0.25, 0.25, 0.25]], &t, LossKind::SoftmaxCrossEntropy).unwrap();
        assert!((u - 4f64.ln()).abs() < 1e-12);
        let p = loss(&array![[1.0 - 1e-12, 1e-12 / 3.0, 1e-12 / 3.0, 1e-12 / 3.0]], &t, LossKind::SoftmaxCrossEntropy).unwrap();
        assert!(p < 1e-10);
        let z = array![[0.3, -1.2, 0.5, 2.0]];
        let soft = super::super::model::activate(&z, super::super::Activation::Softmax);
        let a = loss(&soft, &t, LossKind::SoftmaxCrossEntropy).unwrap();
        let b = loss_from_logits(&z, &t, LossKind::SoftmaxCrossEntropy).unwrap();
        assert!((a - b).abs() < 1e-12);
        let sig = z.mapv(super::super::model::sigmoid);
        let a = loss(&sig, &t, LossKind::SigmoidCrossEntropy).unwrap();
        let b = loss_from_logits(&z, &t, LossKind::SigmoidCrossEntropy).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn softmax_gradient_is_p_minus_y_over_n() {
        let p = array![[0.7, 0.1, 0.1, 0.1], [0.2, 0.3, 0.4, 0.1]];
        let t = array![[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
        let g = output_gradient(&p, &t, LossKind::SoftmaxCrossEntropy).unwrap();
        assert_eq!(g, (&p - &t) / 2.0);
        let g = output_gradient(&p, &t, LossKind::SigmoidCrossEntropy).unwrap();
        assert_eq!(g, (&p - &t) / 8.0);
    }

    #[test]
    fn non_one_hot_targets_rejected() {
        let p = array![[0.5, 0.5]];
        assert!(loss(&p, &array![[0.5, 0.5]], LossKind::SoftmaxCrossEntropy).is_err());
        assert!(loss(&p, &array![[1.0, 1.0]], LossKind::SoftmaxCrossEntropy).is_err());
        assert!(loss(&p, &array![[1.0, 0.0, 0.0]], LossKind::SoftmaxCrossEntropy).is_err());
    }
}
