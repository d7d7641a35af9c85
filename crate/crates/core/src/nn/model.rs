use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{real, Activation, LossKind, ModelSpec, Real};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    /// Batch statistics, no dropout. Used by gradient checks.
    TrainNoDropout,
    Eval,
}

impl Mode {
    fn batch_stats(self) -> bool {
        self != Mode::Eval
    }

    fn dropout(self) -> bool {
        self == Mode::Train
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(width: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    /// `[in, out]`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub bn: Option<BatchNorm<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub spec: ModelSpec,
    pub input_bn: Option<BatchNorm<T>>,
    pub layers: Vec<DenseLayer<T>>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
    mean: Array1<T>,
    var: Array1<T>,
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    input: Array2<T>,
    bn: Option<BnCache<T>>,
    /// Post-activation, before dropout.
    act: Array2<T>,
    /// Pre-activation (after batch-norm).
    pre: Array2<T>,
    mask: Option<Array2<T>>,
}

/// Everything a backward pass needs, plus the outputs.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    input_bn: Option<BnCache<T>>,
    input_mask: Option<Array2<T>>,
    layers: Vec<LayerCache<T>>,
    /// Output-layer pre-activation.
    pub logits: Array2<T>,
    /// Output-layer activation (class probabilities).
    pub probs: Array2<T>,
}

impl<T: Real> Forward<T> {
    /// Post-activation output of layer `i` (dropout excluded).
    pub fn activation(&self, i: usize) -> Option<&Array2<T>> {
        self.layers.get(i).map(|l| &l.act)
    }
}

/// Parameter gradients in canonical order (see [`Model::param_slices_mut`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T>(pub Vec<Vec<T>>);

fn normal_matrix<T: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<T> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        real(z * std)
    })
}

impl<T: Real> Model<T> {
    /// Fan-in initialization: He normal before ReLU, LeCun normal otherwise;
    /// zero biases; batch-norm scale 1, shift 0, running stats (0, 1).
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut width = spec.input_width;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, l) in spec.layers.iter().enumerate() {
            let gain = if l.activation == Activation::Relu { 2.0 } else { 1.0 };
            let mut rng = spec.seed.derive_with("dense-init", &[&(i as u64).to_le_bytes()]).rng();
            layers.push(DenseLayer {
                weight: normal_matrix(&mut rng, width, l.width, (gain / width as f64).sqrt()),
                bias: Array1::zeros(l.width),
                bn: l.batch_norm.then(|| BatchNorm::new(l.width)),
            });
            width = l.width;
        }
        Ok(Model {
            spec: spec.clone(),
            input_bn: spec.input_batch_norm.then(|| BatchNorm::new(spec.input_width)),
            layers,
        })
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        let c1 = |a: &Array1<T>| a.mapv(|v| real::<U>(v.to_f64().expect("finite")));
        let c2 = |a: &Array2<T>| a.mapv(|v| real::<U>(v.to_f64().expect("finite")));
        let cbn = |b: &BatchNorm<T>| BatchNorm {
            gamma: c1(&b.gamma),
            beta: c1(&b.beta),
            running_mean: c1(&b.running_mean),
            running_var: c1(&b.running_var),
        };
        Model {
            spec: self.spec.clone(),
            input_bn: self.input_bn.as_ref().map(cbn),
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weight: c2(&l.weight),
                    bias: c1(&l.bias),
                    bn: l.bn.as_ref().map(cbn),
                })
                .collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Trainable tensors in canonical order: input gamma, input beta, then per
    /// layer weight, bias, gamma, beta.
    pub fn param_slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        if let Some(bn) = &self.input_bn {
            out.push(bn.gamma.as_slice().expect("contiguous"));
            out.push(bn.beta.as_slice().expect("contiguous"));
        }
        for l in &self.layers {
            out.push(l.weight.as_slice().expect("contiguous"));
            out.push(l.bias.as_slice().expect("contiguous"));
            if let Some(bn) = &l.bn {
                out.push(bn.gamma.as_slice().expect("contiguous"));
                out.push(bn.beta.as_slice().expect("contiguous"));
            }
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        if let Some(bn) = &mut self.input_bn {
            out.push(bn.gamma.as_slice_mut().expect("contiguous"));
            out.push(bn.beta.as_slice_mut().expect("contiguous"));
        }
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("contiguous"));
            out.push(l.bias.as_slice_mut().expect("contiguous"));
            if let Some(bn) = &mut l.bn {
                out.push(bn.gamma.as_slice_mut().expect("contiguous"));
                out.push(bn.beta.as_slice_mut().expect("contiguous"));
            }
        }
        out
    }

    pub fn forward(&self, x: &Array2<T>, mode: Mode, mut rng: Option<&mut ChaCha8Rng>) -> Result<Forward<T>> {
        if x.ncols() != self.spec.input_width {
            return Err(Error::Shape {
                name: "model input".into(),
                expected: vec![x.nrows(), self.spec.input_width],
                actual: vec![x.nrows(), x.ncols()],
            });
        }
        if x.nrows() == 0 {
            return Err(Error::invalid("model input", "empty batch"));
        }
        if mode.batch_stats() && x.nrows() < 2 && self.spec.has_batch_norm() {
            return Err(Error::invalid(
                "model input",
                "a training batch of one sample cannot use batch normalization",
            ));
        }
        if mode.dropout() && rng.is_none() && self.uses_dropout() {
            return Err(Error::invalid("forward", "dropout in train mode needs a random stream"));
        }

        let mut h = x.clone();
        let input_bn = match &self.input_bn {
            Some(bn) => {
                let (y, cache) = bn_forward(&h, bn, mode);
                h = y;
                cache
            }
            None => None,
        };
        let input_mask = if mode.dropout() && self.spec.input_dropout > 0.0 {
            let m = dropout_mask(h.dim(), self.spec.input_dropout, rng.as_deref_mut().expect("checked"));
            h = &h * &m;
            Some(m)
        } else {
            None
        };

        let last = self.layers.len() - 1;
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, (layer, ls)) in self.layers.iter().zip(&self.spec.layers).enumerate() {
            let z = h.dot(&layer.weight) + &layer.bias;
            let (pre, bn) = match &layer.bn {
                Some(bn) => {
                    let (y, c) = bn_forward(&z, bn, mode);
                    (y, c)
                }
                None => (z, None),
            };
            let act = activate(&pre, ls.activation);
            let mask = if mode.dropout() && ls.dropout > 0.0 && i < last {
                Some(dropout_mask(act.dim(), ls.dropout, rng.as_deref_mut().expect("checked")))
            } else {
                None
            };
            let out = match &mask {
                Some(m) => &act * m,
                None => act.clone(),
            };
            caches.push(LayerCache {
                input: std::mem::replace(&mut h, out),
                bn,
                act,
                pre,
                mask,
            });
        }
        let top = caches.last().expect("at least one layer");
        Ok(Forward {
            logits: top.pre.clone(),
            probs: top.act.clone(),
            input_bn,
            input_mask,
            layers: caches,
        })
    }

    fn uses_dropout(&self) -> bool {
        self.spec.input_dropout > 0.0 || self.spec.layers.iter().any(|l| l.dropout > 0.0)
    }

    /// Moves running statistics toward the batch statistics of `fwd`.
    pub fn update_running_stats(&mut self, fwd: &Forward<T>) {
        let n = fwd.logits.nrows();
        let update = |bn: &mut BatchNorm<T>, c: &BnCache<T>| {
            let m: T = real(BN_MOMENTUM);
            let one_m = T::one() - m;
            let unbias: T = real(n as f64 / (n as f64 - 1.0).max(1.0));
            Zip::from(&mut bn.running_mean).and(&c.mean).for_each(|r, &v| *r = m * *r + one_m * v);
            Zip::from(&mut bn.running_var)
                .and(&c.var)
                .for_each(|r, &v| *r = m * *r + one_m * v * unbias);
        };
        if let (Some(bn), Some(c)) = (&mut self.input_bn, &fwd.input_bn) {
            update(bn, c);
        }
        for (l, c) in self.layers.iter_mut().zip(&fwd.layers) {
            if let (Some(bn), Some(cache)) = (&mut l.bn, &c.bn) {
                update(bn, cache);
            }
        }
    }

    /// Gradients of the mean loss for one-hot `targets`.
    pub fn backward(&self, fwd: &Forward<T>, targets: &Array2<T>) -> Result<Grads<T>> {
        let mut delta = super::output_gradient(&fwd.probs, targets, self.spec.loss)?;
        let mut per_layer: Vec<Vec<Vec<T>>> = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let c = &fwd.layers[i];
            if i < last {
                if let Some(m) = &c.mask {
                    delta = &delta * m;
                }
                delta = activation_backward(&delta, &c.pre, &c.act, self.spec.layers[i].activation);
            }
            let mut tensors = Vec::with_capacity(4);
            let bn_grads = match (&layer.bn, &c.bn) {
                (Some(bn), Some(cache)) => {
                    let (dx, dg, db) = bn_backward(&delta, bn, cache);
                    delta = dx;
                    Some((dg, db))
                }
                _ => None,
            };
            let dw = c.input.t().dot(&delta);
            let db = delta.sum_axis(Axis(0));
            tensors.push(dw.into_raw_vec_and_offset().0);
            tensors.push(db.to_vec());
            if let Some((dg, dbeta)) = bn_grads {
                tensors.push(dg.to_vec());
                tensors.push(dbeta.to_vec());
            }
            per_layer.push(tensors);
            delta = delta.dot(&layer.weight.t());
        }
        let mut out = Vec::new();
        if let (Some(bn), Some(cache)) = (&self.input_bn, &fwd.input_bn) {
            if let Some(m) = &fwd.input_mask {
                delta = &delta * m;
            }
            let (_, dg, db) = bn_backward(&delta, bn, cache);
            out.push(dg.to_vec());
            out.push(db.to_vec());
        }
        for tensors in per_layer.into_iter().rev() {
            out.extend(tensors);
        }
        Ok(Grads(out))
    }

    /// Eval-mode class probabilities.
    pub fn predict(&self, x: &Array2<T>) -> Result<Array2<T>> {
        Ok(self.forward(x, Mode::Eval, None)?.probs)
    }
}

fn dropout_mask<T: Real>(dim: (usize, usize), rate: f64, rng: &mut ChaCha8Rng) -> Array2<T> {
    let keep: T = real(1.0 / (1.0 - rate));
    Array2::from_shape_simple_fn(dim, || if rng.random::<f64>() < rate { T::zero() } else { keep })
}

fn bn_forward<T: Real>(z: &Array2<T>, bn: &BatchNorm<T>, mode: Mode) -> (Array2<T>, Option<BnCache<T>>) {
    let eps: T = real(BN_EPS);
    if mode.batch_stats() {
        let n: T = real(z.nrows() as f64);
        let mean = z.sum_axis(Axis(0)) / n;
        let centered = z - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
        let xhat = &centered * &inv_std;
        let y = &xhat * &bn.gamma + &bn.beta;
        (
            y,
            Some(BnCache {
                xhat,
                inv_std,
                mean,
                var,
            }),
        )
    } else {
        let scale = Zip::from(&bn.gamma)
            .and(&bn.running_var)
            .map_collect(|&g, &v| g / (v + eps).sqrt());
        let y = (z - &bn.running_mean) * &scale + &bn.beta;
        (y, None)
    }
}

/// Returns `(d input, d gamma, d beta)`.
fn bn_backward<T: Real>(dy: &Array2<T>, bn: &BatchNorm<T>, c: &BnCache<T>) -> (Array2<T>, Array1<T>, Array1<T>) {
    let n: T = real(dy.nrows() as f64);
    let dbeta = dy.sum_axis(Axis(0));
    let dgamma = (dy * &c.xhat).sum_axis(Axis(0));
    let dxhat = dy * &bn.gamma;
    let sum_dxhat = dxhat.sum_axis(Axis(0));
    let sum_dxhat_xhat = (&dxhat * &c.xhat).sum_axis(Axis(0));
    let dx = ((&dxhat * n) - &sum_dxhat - &(&c.xhat * &sum_dxhat_xhat)) * &(&c.inv_std / n);
    (dx, dgamma, dbeta)
}

pub(crate) fn activate<T: Real>(z: &Array2<T>, a: Activation) -> Array2<T> {
    match a {
        Activation::Relu => z.mapv(|v| v.max(T::zero())),
        Activation::Tanh => z.mapv(|v| v.tanh()),
        Activation::Sigmoid => z.mapv(sigmoid),
        Activation::None => z.clone(),
        Activation::Softmax => {
            let mut out = z.clone();
            for mut row in out.rows_mut() {
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                row.mapv_inplace(|v| (v - max).exp());
                let s = row.sum();
                row.mapv_inplace(|v| v / s);
            }
            out
        }
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn activation_backward<T: Real>(da: &Array2<T>, pre: &Array2<T>, act: &Array2<T>, a: Activation) -> Array2<T> {
    match a {
        Activation::Relu => Zip::from(da).and(pre).map_collect(|&d, &z| if z > T::zero() { d } else { T::zero() }),
        Activation::Tanh => Zip::from(da).and(act).map_collect(|&d, &y| d * (T::one() - y * y)),
        Activation::Sigmoid => Zip::from(da).and(act).map_collect(|&d, &y| d * y * (T::one() - y)),
        Activation::None => da.clone(),
        Activation::Softmax => {
            // only reachable for hidden layers, which validation forbids
            let mut out = da.clone();
            for ((mut o, d), y) in out.rows_mut().into_iter().zip(da.rows()).zip(act.rows()) {
                let dot: T = d.iter().zip(y.iter()).map(|(&a, &b)| a * b).sum();
                Zip::from(&mut o).and(&d).and(&y).for_each(|o, &d, &y| *o = y * (d - dot));
            }
            out
        }
    }
}

impl LossKind {
    pub(crate) fn check_targets<T: Real>(targets: &Array2<T>) -> Result<()> {
        for (i, row) in targets.rows().into_iter().enumerate() {
            let ones = row.iter().filter(|&&v| v == T::one()).count();
            let zeros = row.iter().filter(|&&v| v == T::zero()).count();
            if ones != 1 || ones + zeros != row.len() {
                return Err(Error::invalid("targets", format!("row {i} is not one-hot")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{LayerSpec, ModelSpec};
    use super::*;
    use crate::seed::Seed;
    use ndarray::array;

    fn spec(layers: Vec<LayerSpec>, loss: LossKind) -> ModelSpec {
        ModelSpec {
            input_width: 1,
            input_dropout: 0.0,
            input_batch_norm: false,
            layers,
            loss,
            seed: Seed(1),
        }
    }

    #[test]
    fn two_point_batch_norm() {
        let s = ModelSpec {
            input_width: 1,
            layers: vec![LayerSpec::new(1, Activation::Sigmoid, 0.0, true)],
            loss: LossKind::SigmoidCrossEntropy,
            ..spec(vec![], LossKind::SigmoidCrossEntropy)
        };
        let mut m = Model::<f64>::build(&s).unwrap();
        m.layers[0].weight[[0, 0]] = 1.0;
        let f = m.forward(&array![[1.0], [3.0]], Mode::Train, Some(&mut Seed(0).rng())).unwrap();
        let expect = 1.0 / (1.0 + BN_EPS).sqrt();
        assert!((f.logits[[0, 0]] + expect).abs() < 1e-12);
        assert!((f.logits[[1, 0]] - expect).abs() < 1e-12);
        assert!(m.forward(&array![[1.0]], Mode::Train, Some(&mut Seed(0).rng())).is_err());
        assert!(m.forward(&array![[1.0]], Mode::Eval, None).is_ok());
    }

    #[test]
    fn dropout_is_inactive_in_eval() {
        let mut s = ModelSpec {
            input_width: 5,
            input_dropout: 0.5,
            ..spec(
                vec![
                    LayerSpec::new(8, Activation::Tanh, 0.5, false),
                    LayerSpec::new(4, Activation::Softmax, 0.0, false),
                ],
                LossKind::SoftmaxCrossEntropy,
            )
        };
        let x = Array2::from_shape_fn((6, 5), |(i, j)| (i as f64 - j as f64) * 0.3);
        let with = Model::<f64>::build(&s).unwrap().predict(&x).unwrap();
        s.input_dropout = 0.0;
        s.layers[0].dropout = 0.0;
        let without = Model::<f64>::build(&s).unwrap().predict(&x).unwrap();
        assert_eq!(with, without);
        for row in with.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let s = ModelSpec {
            input_width: 1,
            input_dropout: 0.3,
            ..spec(vec![LayerSpec::new(1, Activation::Sigmoid, 0.0, false)], LossKind::SigmoidCrossEntropy)
        };
        let mut m = Model::<f64>::build(&s).unwrap();
        m.layers[0].weight[[0, 0]] = 1.0;
        let x = Array2::from_elem((10_000, 1), 0.8);
        let mut rng = Seed(3).rng();
        let f = m.forward(&x, Mode::Train, Some(&mut rng)).unwrap();
        // pre-activation equals the dropped-out input
        let mean = f.logits.mean().unwrap();
        assert!((mean - 0.8).abs() / 0.8 < 0.02, "{mean}");
    }

    #[test]
    fn eval_batch_norm_is_affine() {
        let s = ModelSpec {
            input_width: 3,
            input_batch_norm: true,
            ..spec(vec![LayerSpec::new(2, Activation::Sigmoid, 0.0, true)], LossKind::SigmoidCrossEntropy)
        };
        let mut m = Model::<f64>::build(&s).unwrap();
        let x = Array2::from_shape_fn((7, 3), |(i, j)| (i * 3 + j) as f64 * 0.1 - 1.0);
        let f = m.forward(&x, Mode::Train, Some(&mut Seed(0).rng())).unwrap();
        let xhat = &f.layers[0].bn.as_ref().unwrap().xhat;
        for col in xhat.columns() {
            let mean = col.mean().unwrap();
            let var = col.mapv(|v| (v - mean).powi(2)).mean().unwrap();
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-3);
        }
        m.update_running_stats(&f);
        let a = m.forward(&x, Mode::Eval, None).unwrap().logits;
        let b = m.forward(&x, Mode::Eval, None).unwrap().logits;
        assert_eq!(a, b);
        // an affine map: f(x) + f(y) = f(x + y) + f(0)
        let y = x.mapv(|v| v * 0.5 + 0.2);
        let z = Array2::zeros((7, 3));
        let single = |v: &Array2<f64>| m.forward(v, Mode::Eval, None).unwrap().logits;
        let lhs = single(&x) + single(&y);
        let rhs = single(&(&x + &y)) + single(&z);
        for (a, b) in lhs.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
