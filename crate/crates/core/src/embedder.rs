//! VGGish-shaped convolutional embedder (forward pass only).
//!
//! Four blocks of 3×3 same-padded convolutions with ReLU, each followed by a
//! 2×2 max pool, then three fully connected layers. A 96×64 patch (frames ×
//! mel bands) ends as a 6×4 map that is flattened in height-width-channel
//! order. Weights live in a tensor archive as `<layer>.weight` /
//! `<layer>.bias`, with conv weights shaped `[out, in, 3, 3]` and fc weights
//! `[out, in]`.

use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, ArrayView4, Axis, LinalgScalar};
use num_traits::Float;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::archive::{Tensor, TensorArchive};
use crate::error::{Error, Result};
use crate::seed::Seed;
use crate::sonify::{LogMelPatchSet, MEL_BANDS, PATCH_FRAMES};

pub const CONV_LAYERS: [&str; 6] = ["conv1", "conv2", "conv3_1", "conv3_2", "conv4_1", "conv4_2"];
pub const FC_LAYERS: [&str; 3] = ["fc1_1", "fc1_2", "fc2"];
/// Number of conv layers in each pooled block.
const BLOCKS: [usize; 4] = [1, 1, 2, 2];
const WEIGHTS_KIND: &str = "embedder-weights";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub conv_channels: Vec<usize>,
    pub fc_sizes: Vec<usize>,
    /// Divides every conv channel count and hidden fc width. The embedding
    /// width (last fc size) is left as is.
    pub width_divisor: usize,
    pub seed: Seed,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            conv_channels: vec![64, 128, 256, 256, 512, 512],
            fc_sizes: vec![4096, 4096, 128],
            width_divisor: 1,
            seed: Seed(0),
        }
    }
}

impl EmbedderConfig {
    pub fn desk(seed: Seed) -> Self {
        EmbedderConfig {
            width_divisor: 8,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.len() != CONV_LAYERS.len() || self.fc_sizes.len() != FC_LAYERS.len() {
            return Err(Error::invalid(
                "embedder config",
                format!(
                    "expected {} conv channel counts and {} fc sizes",
                    CONV_LAYERS.len(),
                    FC_LAYERS.len()
                ),
            ));
        }
        if self.width_divisor == 0 {
            return Err(Error::invalid("width divisor", "must be >= 1"));
        }
        if self.conv_channels.iter().chain(&self.fc_sizes).any(|&c| c == 0) {
            return Err(Error::invalid("embedder config", "layer widths must be >= 1"));
        }
        Ok(())
    }

    pub fn channels(&self) -> Vec<usize> {
        self.conv_channels
            .iter()
            .map(|&c| (c / self.width_divisor).max(1))
            .collect()
    }

    pub fn fc_widths(&self) -> Vec<usize> {
        let n = self.fc_sizes.len();
        self.fc_sizes
            .iter()
            .enumerate()
            .map(|(i, &f)| if i + 1 == n { f } else { (f / self.width_divisor).max(1) })
            .collect()
    }

    pub fn embedding_width(&self) -> usize {
        *self.fc_sizes.last().expect("validated")
    }

    /// Spatial size after the four pools, `(height, width)`.
    pub fn final_map(&self) -> (usize, usize) {
        (PATCH_FRAMES >> BLOCKS.len(), MEL_BANDS >> BLOCKS.len())
    }

    pub fn flatten_width(&self) -> usize {
        let (h, w) = self.final_map();
        h * w * self.channels().last().copied().unwrap_or(1)
    }

    /// Expected `(name, shape)` of every tensor.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut c_in = 1;
        for (name, &c) in CONV_LAYERS.iter().zip(&self.channels()) {
            out.push((format!("{name}.weight"), vec![c, c_in, 3, 3]));
            out.push((format!("{name}.bias"), vec![c]));
            c_in = c;
        }
        let mut f_in = self.flatten_width();
        for (name, &f) in FC_LAYERS.iter().zip(&self.fc_widths()) {
            out.push((format!("{name}.weight"), vec![f, f_in]));
            out.push((format!("{name}.bias"), vec![f]));
            f_in = f;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    /// `[out, in·9]` for conv, `[out, in]` for fc.
    weight: Array2<f32>,
    bias: Vec<f32>,
}

/// Immutable embedder parameters, checked against an [`EmbedderConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderWeights {
    cfg: EmbedderConfig,
    convs: Vec<Layer>,
    fcs: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f32>);

impl Embedding {
    pub fn width(&self) -> usize {
        self.0.len()
    }
}

impl EmbedderWeights {
    /// He-normal fan-in initialization, zero biases.
    pub fn random_init(cfg: &EmbedderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut archive = TensorArchive::new();
        for (name, shape) in cfg.tensor_shapes() {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".bias") {
                vec![0.0f32; n]
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                let mut rng = cfg.seed.derive_with("embedder-init", &[name.as_bytes()]).rng();
                (0..n).map(|_| normal.sample(&mut rng) as f32).collect()
            };
            archive.insert(name, Tensor::f32(shape, data)?);
        }
        Self::from_archive(&archive, cfg)
    }

    /// All weights and biases set to `value`.
    pub fn constant(cfg: &EmbedderConfig, value: f32) -> Result<Self> {
        cfg.validate()?;
        let mut archive = TensorArchive::new();
        for (name, shape) in cfg.tensor_shapes() {
            let n = shape.iter().product();
            archive.insert(name, Tensor::f32(shape, vec![value; n])?);
        }
        Self::from_archive(&archive, cfg)
    }

    pub fn from_archive(archive: &TensorArchive, cfg: &EmbedderConfig) -> Result<Self> {
        cfg.validate()?;
        let fetch = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
            let t = archive.expect(name, shape)?;
            let values = match t.as_f32() {
                Some(v) => v.to_vec(),
                None => t.to_f64_vec().into_iter().map(|x| x as f32).collect(),
            };
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::CorruptArchive(format!("`{name}` holds non-finite values")));
            }
            Ok(values)
        };
        let mut convs = Vec::new();
        let mut fcs = Vec::new();
        let shapes = cfg.tensor_shapes();
        for pair in shapes.chunks(2) {
            let (wname, wshape) = &pair[0];
            let (bname, bshape) = &pair[1];
            let w = fetch(wname, wshape)?;
            let b = fetch(bname, bshape)?;
            let cols: usize = wshape[1..].iter().product();
            let layer = Layer {
                weight: Array2::from_shape_vec((wshape[0], cols), w).expect("shape checked"),
                bias: b,
            };
            if wshape.len() == 4 {
                convs.push(layer);
            } else {
                fcs.push(layer);
            }
        }
        Ok(EmbedderWeights {
            cfg: cfg.clone(),
            convs,
            fcs,
        })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.cfg
    }

    pub fn to_archive(&self) -> Result<TensorArchive> {
        let mut archive = TensorArchive::with_metadata(serde_json::json!({
            "kind": WEIGHTS_KIND,
            "conv_channels": self.cfg.channels(),
            "fc_sizes": self.cfg.fc_widths(),
        }));
        let shapes = self.cfg.tensor_shapes();
        for (layer, pair) in self.convs.iter().chain(&self.fcs).zip(shapes.chunks(2)) {
            archive.insert(pair[0].0.clone(), Tensor::f32(pair[0].1.clone(), layer.weight.iter().copied().collect())?);
            archive.insert(pair[1].0.clone(), Tensor::f32(pair[1].1.clone(), layer.bias.clone())?);
        }
        Ok(archive)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive()?.save(path)
    }
}

/// Loads an archive and checks every tensor against `cfg`.
pub fn load_weight_archive(path: impl AsRef<Path>, cfg: &EmbedderConfig) -> Result<EmbedderWeights> {
    EmbedderWeights::from_archive(&TensorArchive::load(path)?, cfg)
}

/// 3×3, stride 1, zero "same" padding. `input` is `[c_in, h, w]`, `weight`
/// is `[c_out, c_in, 3, 3]`.
pub fn conv3x3_same<T: LinalgScalar + Float>(input: ArrayView3<T>, weight: ArrayView4<T>, bias: &[T]) -> Array3<T> {
    let (c_out, c_in) = (weight.shape()[0], weight.shape()[1]);
    let w2 = weight
        .to_shape((c_out, c_in * 9))
        .expect("contiguous kernel")
        .to_owned();
    conv3x3_matrix(input, w2.view(), bias)
}

fn conv3x3_matrix<T: LinalgScalar + Float>(input: ArrayView3<T>, weight: ArrayView2<T>, bias: &[T]) -> Array3<T> {
    let (c_in, h, w) = input.dim();
    assert_eq!(weight.ncols(), c_in * 9, "kernel/input channel mismatch");
    let mut cols = Array2::<T>::zeros((c_in * 9, h * w));
    for c in 0..c_in {
        let plane = input.index_axis(Axis(0), c);
        for ky in 0..3 {
            for kx in 0..3 {
                let mut row = cols.row_mut(c * 9 + ky * 3 + kx);
                let row = row.as_slice_mut().expect("standard layout");
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = plane.row(sy as usize);
                    let dst = &mut row[y * w..(y + 1) * w];
                    // dst[x] = src[x + kx - 1] where in range
                    let (x0, x1) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                    for x in x0..x1 {
                        dst[x] = src[x + kx - 1];
                    }
                }
            }
        }
    }
    let mut out = weight.dot(&cols);
    for (mut r, &b) in out.axis_iter_mut(Axis(0)).zip(bias) {
        r.mapv_inplace(|v| v + b);
    }
    out.into_shape_with_order((weight.nrows(), h, w)).expect("sized above")
}

/// 2×2 max pool, stride 2; odd trailing rows/columns are dropped.
pub fn max_pool2x2<T: Float>(input: ArrayView3<T>) -> Array3<T> {
    let (c, h, w) = input.dim();
    Array3::from_shape_fn((c, h / 2, w / 2), |(k, y, x)| {
        let a = input[[k, 2 * y, 2 * x]].max(input[[k, 2 * y, 2 * x + 1]]);
        let b = input[[k, 2 * y + 1, 2 * x]].max(input[[k, 2 * y + 1, 2 * x + 1]]);
        a.max(b)
    })
}

fn relu_inplace<T: Float, D: ndarray::Dimension>(a: &mut ndarray::Array<T, D>) {
    a.mapv_inplace(|v| v.max(T::zero()));
}

pub fn embed_patch(patch: &Array2<f32>, weights: &EmbedderWeights) -> Result<Embedding> {
    if patch.dim() != (PATCH_FRAMES, MEL_BANDS) {
        return Err(Error::Shape {
            name: "log-mel patch".into(),
            expected: vec![PATCH_FRAMES, MEL_BANDS],
            actual: patch.shape().to_vec(),
        });
    }
    let mut x = patch.clone().insert_axis(Axis(0));
    let mut layer = 0;
    for &n in &BLOCKS {
        for _ in 0..n {
            let l = &weights.convs[layer];
            x = conv3x3_matrix(x.view(), l.weight.view(), &l.bias);
            relu_inplace(&mut x);
            layer += 1;
        }
        x = max_pool2x2(x.view());
    }
    // height-width-channel flatten
    let flat: Vec<f32> = x.permuted_axes([1, 2, 0]).iter().copied().collect();
    let mut v = ndarray::Array1::from(flat);
    let last = weights.fcs.len() - 1;
    for (i, l) in weights.fcs.iter().enumerate() {
        v = l.weight.dot(&v) + ndarray::ArrayView1::from(&l.bias[..]);
        if i < last {
            relu_inplace(&mut v);
        }
    }
    Ok(Embedding(v.to_vec()))
}

/// Mean of the per-patch embeddings.
pub fn embed_average(patches: &LogMelPatchSet, weights: &EmbedderWeights) -> Result<Embedding> {
    if patches.is_empty() {
        return Err(Error::invalid("patch set", "is empty; need at least 96 frames of audio"));
    }
    let width = weights.cfg.embedding_width();
    let mut acc = vec![0.0f64; width];
    for p in &patches.patches {
        for (a, v) in acc.iter_mut().zip(embed_patch(p, weights)?.0) {
            *a += v as f64;
        }
    }
    let n = patches.len() as f64;
    Ok(Embedding(acc.into_iter().map(|a| (a / n) as f32).collect()))
}
