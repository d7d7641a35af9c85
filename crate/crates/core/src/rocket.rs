//! Random convolutional kernel features for hourly series.
//!
//! Kernels follow the reference ROCKET sampling: length from {7, 9, 11},
//! centered standard normal weights, bias from U(-1, 1), dilation
//! `floor(2^a)` with `a ~ U(0, log2((L-1)/(len-1)))` and zero padding on a
//! fair coin. Each kernel contributes the maximum and the proportion of
//! strictly positive values of its output.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobility::{SensingWindow, N_STREAMS, WINDOW_HOURS};
use crate::seed::Seed;

pub const KERNEL_LENGTHS: [usize; 3] = [7, 9, 11];
pub const DEFAULT_KERNELS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomKernel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub dilation: usize,
    pub padding: bool,
}

impl RandomKernel {
    pub fn length(&self) -> usize {
        self.weights.len()
    }

    /// Zero padding on each side when `padding` is set.
    pub fn pad(&self) -> usize {
        if self.padding {
            (self.length() - 1) * self.dilation / 2
        } else {
            0
        }
    }

    pub fn output_len(&self, series_len: usize) -> Option<usize> {
        let span = (self.length() - 1) * self.dilation;
        (series_len + 2 * self.pad()).checked_sub(span)
    }
}

pub fn sample_kernels(seed: Seed, n_kernels: usize, series_len: usize) -> Result<Vec<RandomKernel>> {
    let longest = *KERNEL_LENGTHS.last().expect("non-empty");
    if series_len < longest {
        return Err(Error::invalid(
            "series length",
            format!("{series_len} is shorter than the longest kernel ({longest})"),
        ));
    }
    let mut rng = seed.derive("rocket-kernels").rng();
    let mut out = Vec::with_capacity(n_kernels);
    for _ in 0..n_kernels {
        let len = KERNEL_LENGTHS[rng.random_range(0..KERNEL_LENGTHS.len())];
        let mut weights: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mean = weights.iter().sum::<f64>() / len as f64;
        weights.iter_mut().for_each(|w| *w -= mean);
        let bias = rng.random_range(-1.0..1.0);
        let a_max = ((series_len - 1) as f64 / (len - 1) as f64).log2();
        let a = rng.random_range(0.0..=a_max);
        let dilation = (2f64.powf(a).floor() as usize).clamp(1, (series_len - 1) / (len - 1));
        let padding = rng.random_bool(0.5);
        out.push(RandomKernel {
            weights,
            bias,
            dilation,
            padding,
        });
    }
    Ok(out)
}

/// Dilated sliding dot product plus bias.
pub fn apply_kernel(series: &[f64], k: &RandomKernel) -> Result<Vec<f64>> {
    let n_out = match k.output_len(series.len()) {
        Some(n) if n > 0 && k.dilation > 0 => n,
        _ => {
            return Err(Error::invalid(
                "kernel",
                format!(
                    "length {} with dilation {} does not fit a series of {}",
                    k.length(),
                    k.dilation,
                    series.len()
                ),
            ))
        }
    };
    let pad = k.pad() as isize;
    let n = series.len() as isize;
    Ok((0..n_out as isize)
        .map(|j| {
            let mut s = k.bias;
            for (i, w) in k.weights.iter().enumerate() {
                let idx = j - pad + (i * k.dilation) as isize;
                if idx >= 0 && idx < n {
                    s += w * series[idx as usize];
                }
            }
            s
        })
        .collect())
}

/// `(max, ppv)` of one convolution output.
pub fn max_ppv(conv: &[f64]) -> (f64, f64) {
    let max = conv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let positive = conv.iter().filter(|&&v| v > 0.0).count();
    (max, positive as f64 / conv.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelSharing {
    /// One kernel set for all seven streams.
    #[default]
    Shared,
    PerStream,
}

/// `[max_0, ppv_0, max_1, ppv_1, ...]` per stream.
#[derive(Debug, Clone, PartialEq)]
pub struct RocketFeatureSet {
    pub streams: Vec<Vec<f64>>,
}

impl RocketFeatureSet {
    pub fn flatten(&self) -> Vec<f64> {
        self.streams.concat()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocketTransform {
    kernel_sets: Vec<Vec<RandomKernel>>,
}

impl RocketTransform {
    pub fn new(seed: Seed, n_kernels: usize, sharing: KernelSharing) -> Result<Self> {
        if n_kernels == 0 {
            return Err(Error::invalid("kernel count", "must be >= 1"));
        }
        let kernel_sets = match sharing {
            KernelSharing::Shared => vec![sample_kernels(seed, n_kernels, WINDOW_HOURS)?],
            KernelSharing::PerStream => (0..N_STREAMS)
                .map(|s| sample_kernels(seed.derive_with("rocket-stream", &[&[s as u8]]), n_kernels, WINDOW_HOURS))
                .collect::<Result<_>>()?,
        };
        Ok(RocketTransform { kernel_sets })
    }

    pub fn kernels(&self, stream: usize) -> &[RandomKernel] {
        &self.kernel_sets[stream % self.kernel_sets.len()]
    }

    pub fn features_per_stream(&self) -> usize {
        2 * self.kernel_sets[0].len()
    }

    pub fn features(&self, window: &SensingWindow) -> Result<RocketFeatureSet> {
        let streams = window
            .values
            .iter()
            .enumerate()
            .map(|(s, row)| rocket_features(row, self.kernels(s)))
            .collect::<Result<_>>()?;
        Ok(RocketFeatureSet { streams })
    }
}

/// Features of one series for a kernel list.
pub fn rocket_features(series: &[f64], kernels: &[RandomKernel]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * kernels.len());
    for k in kernels {
        let (max, ppv) = max_ppv(&apply_kernel(series, k)?);
        out.push(max);
        out.push(ppv);
    }
    Ok(out)
}
