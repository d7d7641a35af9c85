use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{adam_step, loss_from_logits, AdamConfig, AdamState, Checkpoint, Mode, Model, ModelSpec, Real};
use crate::error::{Error, Result};
use crate::seed::Seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    pub seed: Seed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the minibatch losses (dropout active).
    pub train_loss: f64,
    pub val_top1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation top-1 accuracy
    /// (earliest on ties), or from the last epoch without validation data.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Minibatch index lists for one epoch. A trailing batch of one sample is
/// merged into its predecessor when the model uses batch-norm.
fn batches(order: &[usize], size: usize, merge_singleton: bool) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if merge_singleton && out.len() > 1 && out.last().map_or(false, |b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().expect("non-empty") = &order[start..];
    }
    out
}

pub fn train(
    spec: &ModelSpec,
    x: &Array2<f32>,
    y: &Array2<f32>,
    val: Option<(&Array2<f32>, &Array2<f32>)>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::invalid("train config", "batch size and epochs must be >= 1"));
    }
    if x.nrows() != y.nrows() || x.nrows() == 0 {
        return Err(Error::invalid(
            "training data",
            format!("{} feature rows and {} label rows", x.nrows(), y.nrows()),
        ));
    }
    if y.ncols() != spec.output_width() {
        return Err(Error::Shape {
            name: "training labels".into(),
            expected: vec![y.nrows(), spec.output_width()],
            actual: vec![y.nrows(), y.ncols()],
        });
    }
    if spec.has_batch_norm() && x.nrows() < 2 {
        return Err(Error::invalid("training data", "batch-norm needs at least two samples"));
    }
    let mut model = Model::<f32>::build(spec)?;
    let lens: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
    let mut adam = AdamState::zeros(&lens);
    let mut dropout_rng = cfg.seed.derive("dropout").rng();
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Checkpoint)> = None;

    for epoch in 1..=cfg.epochs {
        let mut rng = cfg.seed.derive_with("shuffle", &[&(epoch as u64).to_le_bytes()]).rng();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in batches(&order, cfg.batch_size, spec.has_batch_norm()) {
            let bx = x.select(Axis(0), batch);
            let by = y.select(Axis(0), batch);
            let fwd = model.forward(&bx, Mode::Train, Some(&mut dropout_rng))?;
            total += loss_from_logits(&fwd.logits, &by, spec.loss)? as f64 * batch.len() as f64;
            let grads = model.backward(&fwd, &by)?;
            model.update_running_stats(&fwd);
            adam_step(&mut model.param_slices_mut(), &grads.0, &mut adam, &cfg.adam)?;
        }
        let train_loss = total / x.nrows() as f64;
        if !train_loss.is_finite() {
            return Err(Error::invalid("training", format!("loss diverged at epoch {epoch}")));
        }
        let val_top1 = match val {
            Some((vx, vy)) => Some(top1_accuracy(&model.predict(vx)?, vy)),
            None => None,
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_top1,
        });
        let score = val_top1.unwrap_or(f64::NEG_INFINITY);
        let improved = match &best {
            None => true,
            Some((s, _)) => score > *s || (val_top1.is_none()),
        };
        if improved {
            let ck = Checkpoint {
                model: model.clone(),
                adam: adam.clone(),
                epoch,
            };
            best = Some((score, ck));
        }
    }
    let (_, checkpoint) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best_epoch: checkpoint.epoch,
        checkpoint,
        history,
    })
}

/// Eval-mode class scores.
pub fn predict(checkpoint: &Checkpoint, x: &Array2<f32>) -> Result<Array2<f32>> {
    checkpoint.model.predict(x)
}

/// Eval-mode post-activation output of layer `layer` (0-based).
pub fn extract_activations(checkpoint: &Checkpoint, x: &Array2<f32>, layer: usize) -> Result<Array2<f32>> {
    let n = checkpoint.model.layers.len();
    if layer >= n {
        return Err(Error::invalid("layer index", format!("{layer} but the model has {n} layers")));
    }
    let fwd = checkpoint.model.forward(x, Mode::Eval, None)?;
    Ok(fwd.activation(layer).expect("checked").clone())
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows<T: Real>(scores: &Array2<T>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (i, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

pub fn top1_accuracy<T: Real>(scores: &Array2<T>, targets: &Array2<T>) -> f64 {
    let p = argmax_rows(scores);
    let t = argmax_rows(targets);
    let hits = p.iter().zip(&t).filter(|(a, b)| a == b).count();
    hits as f64 / p.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::super::{Activation, LayerSpec, LossKind};
    use super::*;
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> (Array2<f32>, Array2<f32>) {
        let mut rng = Seed(seed).rng();
        let mut x = Array2::zeros((n, 2));
        let mut y = Array2::zeros((n, 2));
        for i in 0..n {
            let c = i % 2;
            let centre = if c == 0 { -2.0 } else { 2.0 };
            x[[i, 0]] = centre + rng.random_range(-0.5..0.5);
            x[[i, 1]] = rng.random_range(-1.0..1.0);
            y[[i, c]] = 1.0;
        }
        (x, y)
    }

    fn spec() -> ModelSpec {
        ModelSpec {
            input_width: 2,
            input_dropout: 0.0,
            input_batch_norm: false,
            layers: vec![
                LayerSpec::new(8, Activation::Relu, 0.1, true),
                LayerSpec::new(2, Activation::Softmax, 0.0, false),
            ],
            loss: LossKind::SoftmaxCrossEntropy,
            seed: Seed(11),
        }
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            epochs: 200,
            adam: AdamConfig {
                learning_rate: 1e-2,
                ..AdamConfig::default()
            },
            seed: Seed(5),
        }
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (x, y) = blobs(65, 0);
        let out = train(&spec(), &x, &y, None, &cfg()).unwrap();
        assert_eq!(out.history.len(), 200);
        assert!(out.history.last().unwrap().train_loss < 0.1, "{:?}", out.history.last());
        assert_eq!(top1_accuracy(&predict(&out.checkpoint, &x).unwrap(), &y), 1.0);
        let h = extract_activations(&out.checkpoint, &x, 0).unwrap();
        assert_eq!(h.dim(), (65, 8));
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = blobs(40, 1);
        let (vx, vy) = blobs(20, 2);
        let c = TrainConfig { epochs: 15, ..cfg() };
        let a = train(&spec(), &x, &y, Some((&vx, &vy)), &c).unwrap();
        let b = train(&spec(), &x, &y, Some((&vx, &vy)), &c).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.history, b.history);
        let best = a.history.iter().map(|r| r.val_top1.unwrap()).fold(f64::MIN, f64::max);
        let first = a.history.iter().find(|r| r.val_top1 == Some(best)).unwrap();
        assert_eq!(a.best_epoch, first.epoch);
    }

    #[test]
    fn singleton_batches_merge() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4, true);
        assert_eq!(b.iter().map(|b| b.len()).collect::<Vec<_>>(), vec![4, 5]);
        assert_eq!(batches(&order, 4, false).len(), 3);
        assert_eq!(batches(&order[..1], 4, true).len(), 1);
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        let s = ndarray::array![[0.2f32, 0.4, 0.4], [0.5, 0.1, 0.5]];
        assert_eq!(argmax_rows(&s), vec![1, 0]);
    }
}
