//! Sonification of hourly series and the log-mel front end.
//!
//! A 24-point series is zero-meaned and min-max scaled to `[-1, 1]`; each point
//! `x_i` becomes one second of Gaussian samples with mean `x_i` and variance
//! `max(ε·|x_i|, floor)`. The waveform is resampled to 16 kHz, turned into a
//! 64-band log-mel spectrogram (25 ms periodic Hann window, 10 ms hop,
//! 125–7500 Hz, `ln(mel + 0.01)`) and cut into non-overlapping 96-frame patches.

use std::sync::Arc;

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use realfft::{RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Seed;

pub const SERIES_LEN: usize = 24;
pub const PATCH_FRAMES: usize = 96;
pub const MEL_BANDS: usize = 64;
pub const FRAME_HOP_S: f64 = 0.010;

/// A zero-meaned, min-max scaled series; every value lies in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSeries([f64; SERIES_LEN]);

impl NormalizedSeries {
    pub fn values(&self) -> &[f64; SERIES_LEN] {
        &self.0
    }
}

pub fn normalize_series(raw: &[f64]) -> Result<NormalizedSeries> {
    if raw.len() != SERIES_LEN {
        return Err(Error::Shape {
            name: "hourly series".into(),
            expected: vec![SERIES_LEN],
            actual: vec![raw.len()],
        });
    }
    if let Some(v) = raw.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid("hourly series", format!("non-finite value {v}")));
    }
    let mean = raw.iter().sum::<f64>() / SERIES_LEN as f64;
    let centered: Vec<f64> = raw.iter().map(|v| v - mean).collect();
    let lo = centered.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = centered.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; SERIES_LEN];
    if hi > lo {
        for (o, c) in out.iter_mut().zip(&centered) {
            *o = (2.0 * (c - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0);
        }
    }
    Ok(NormalizedSeries(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformConfig {
    pub epsilon: f64,
    pub sample_rate_hz: u32,
    pub sigma2_floor: f64,
    pub seed: Seed,
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig {
            epsilon: 0.1,
            sample_rate_hz: 44_100,
            sigma2_floor: 1e-6,
            seed: Seed(0),
        }
    }
}

impl TransformConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon", format!("{} must be > 0", self.epsilon)));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::invalid("sample rate", "must be > 0"));
        }
        if !(self.sigma2_floor > 0.0 && self.sigma2_floor.is_finite()) {
            return Err(Error::invalid("sigma2 floor", format!("{} must be > 0", self.sigma2_floor)));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: Seed) -> Self {
        TransformConfig { seed, ..self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Subtracts the mean sample value.
    pub fn zero_mean(mut self) -> Self {
        if !self.samples.is_empty() {
            let mean = self.samples.iter().map(|&x| x as f64).sum::<f64>() / self.samples.len() as f64;
            self.samples.iter_mut().for_each(|x| *x = (*x as f64 - mean) as f32);
        }
        self
    }
}

/// One second of `N(x_i, max(ε·|x_i|, floor))` samples per series point.
pub fn synthesize_waveform(series: &NormalizedSeries, cfg: &TransformConfig) -> Result<Waveform> {
    cfg.validate()?;
    let rate = cfg.sample_rate_hz as usize;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed.0);
    let mut samples = Vec::with_capacity(rate * SERIES_LEN);
    for &x in series.values() {
        let sd = (cfg.epsilon * x.abs()).max(cfg.sigma2_floor).sqrt();
        samples.extend((0..rate).map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (x + sd * z) as f32
        }));
    }
    Ok(Waveform {
        samples,
        sample_rate_hz: cfg.sample_rate_hz,
    })
}

pub const TARGET_RATE_HZ: u32 = 16_000;

/// Linear-interpolation resampling to 16 kHz.
pub fn resample_16k(w: &Waveform) -> Result<Waveform> {
    resample_linear(w, TARGET_RATE_HZ)
}

pub fn resample_linear(w: &Waveform, target_hz: u32) -> Result<Waveform> {
    let src = w.sample_rate_hz as u64;
    let dst = target_hz as u64;
    if src < dst {
        return Err(Error::invalid(
            "resample",
            format!("source rate {src} Hz is below the {dst} Hz target"),
        ));
    }
    if src == dst {
        return Ok(w.clone());
    }
    let n = w.samples.len();
    let out_len = (n as u64 * dst / src) as usize;
    let s = &w.samples;
    let samples = (0..out_len as u64)
        .map(|k| {
            let num = k * src;
            let i = (num / dst) as usize;
            let frac = (num % dst) as f64 / dst as f64;
            let a = s[i] as f64;
            let b = if i + 1 < n { s[i + 1] as f64 } else { a };
            (a + (b - a) * frac) as f32
        })
        .collect();
    Ok(Waveform {
        samples,
        sample_rate_hz: target_hz,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontEndConfig {
    pub sample_rate_hz: u32,
    pub window_s: f64,
    pub hop_s: f64,
    pub n_mels: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub log_offset: f64,
}

impl Default for FrontEndConfig {
    fn default() -> Self {
        FrontEndConfig {
            sample_rate_hz: TARGET_RATE_HZ,
            window_s: 0.025,
            hop_s: FRAME_HOP_S,
            n_mels: MEL_BANDS,
            fmin_hz: 125.0,
            fmax_hz: 7500.0,
            log_offset: 0.01,
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

/// One triangular filter, stored sparsely from `first_bin`.
#[derive(Debug, Clone)]
struct MelBand {
    first_bin: usize,
    weights: Vec<f32>,
}

/// Precomputed STFT plan, window and mel filterbank.
#[derive(Clone)]
pub struct LogMelFrontEnd {
    cfg: FrontEndConfig,
    frame_len: usize,
    hop: usize,
    fft_len: usize,
    window: Vec<f32>,
    bands: Vec<MelBand>,
    fft: Arc<dyn RealToComplex<f32>>,
}

impl std::fmt::Debug for LogMelFrontEnd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMelFrontEnd").field("cfg", &self.cfg).finish()
    }
}

impl LogMelFrontEnd {
    pub fn new(cfg: FrontEndConfig) -> Result<Self> {
        let rate = cfg.sample_rate_hz as f64;
        let frame_len = (cfg.window_s * rate).round() as usize;
        let hop = (cfg.hop_s * rate).round() as usize;
        if frame_len < 2 || hop == 0 || cfg.n_mels == 0 || !(cfg.fmin_hz < cfg.fmax_hz && cfg.fmax_hz <= rate / 2.0) {
            return Err(Error::invalid("front end", format!("{cfg:?}")));
        }
        let fft_len = frame_len.next_power_of_two();
        let window = (0..frame_len)
            .map(|n| (0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / frame_len as f64).cos()) as f32)
            .collect();
        let bands = mel_filterbank(&cfg, fft_len / 2 + 1);
        let fft = RealFftPlanner::<f32>::new().plan_fft_forward(fft_len);
        Ok(LogMelFrontEnd {
            cfg,
            frame_len,
            hop,
            fft_len,
            window,
            bands,
            fft,
        })
    }

    pub fn config(&self) -> &FrontEndConfig {
        &self.cfg
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.frame_len {
            0
        } else {
            1 + (n_samples - self.frame_len) / self.hop
        }
    }

    /// Dense `(fft_len/2 + 1) × n_mels` filterbank matrix.
    pub fn filterbank(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.fft_len / 2 + 1, self.cfg.n_mels));
        for (j, b) in self.bands.iter().enumerate() {
            for (k, &w) in b.weights.iter().enumerate() {
                m[[b.first_bin + k, j]] = w as f64;
            }
        }
        m
    }

    /// `frames × n_mels` log-mel matrix.
    pub fn compute(&self, w: &Waveform) -> Result<Array2<f32>> {
        if w.sample_rate_hz != self.cfg.sample_rate_hz {
            return Err(Error::invalid(
                "log-mel input",
                format!("expected {} Hz, got {} Hz", self.cfg.sample_rate_hz, w.sample_rate_hz),
            ));
        }
        let n_frames = self.n_frames(w.samples.len());
        if n_frames == 0 {
            return Err(Error::invalid(
                "log-mel input",
                format!("{} samples is shorter than one {}-sample window", w.samples.len(), self.frame_len),
            ));
        }
        let mut out = Array2::<f32>::zeros((n_frames, self.cfg.n_mels));
        let mut input = self.fft.make_input_vec();
        let mut spectrum = self.fft.make_output_vec();
        let mut scratch = self.fft.make_scratch_vec();
        let mut mag = vec![0f32; self.fft_len / 2 + 1];
        let offset = self.cfg.log_offset as f32;
        for (f, mut row) in out.outer_iter_mut().enumerate() {
            let frame = &w.samples[f * self.hop..f * self.hop + self.frame_len];
            for ((dst, &x), &win) in input.iter_mut().zip(frame).zip(&self.window) {
                *dst = x * win;
            }
            input[self.frame_len..].fill(0.0);
            self.fft
                .process_with_scratch(&mut input, &mut spectrum, &mut scratch)
                .expect("buffers come from the plan");
            for (m, c) in mag.iter_mut().zip(&spectrum) {
                *m = c.norm();
            }
            for (dst, band) in row.iter_mut().zip(&self.bands) {
                let e: f32 = band
                    .weights
                    .iter()
                    .zip(&mag[band.first_bin..])
                    .map(|(w, m)| w * m)
                    .sum();
                *dst = (e + offset).ln();
            }
        }
        Ok(out)
    }
}

fn mel_filterbank(cfg: &FrontEndConfig, n_bins: usize) -> Vec<MelBand> {
    let nyquist = cfg.sample_rate_hz as f64 / 2.0;
    let bin_mel: Vec<f64> = (0..n_bins)
        .map(|k| hz_to_mel(nyquist * k as f64 / (n_bins - 1) as f64))
        .collect();
    let lo = hz_to_mel(cfg.fmin_hz);
    let hi = hz_to_mel(cfg.fmax_hz);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64)
        .collect();
    (0..cfg.n_mels)
        .map(|j| {
            let (l, c, u) = (edges[j], edges[j + 1], edges[j + 2]);
            let dense: Vec<f32> = bin_mel
                .iter()
                .enumerate()
                .map(|(k, &m)| {
                    if k == 0 {
                        0.0 // DC never contributes
                    } else {
                        ((m - l) / (c - l)).min((u - m) / (u - c)).max(0.0) as f32
                    }
                })
                .collect();
            let first = dense.iter().position(|&w| w > 0.0).unwrap_or(0);
            let last = dense.iter().rposition(|&w| w > 0.0).unwrap_or(0);
            MelBand {
                first_bin: first,
                weights: dense[first..=last].to_vec(),
            }
        })
        .collect()
}

pub fn log_mel(w: &Waveform) -> Result<Array2<f32>> {
    LogMelFrontEnd::new(FrontEndConfig::default())?.compute(w)
}

/// Non-overlapping `96 × 64` log-mel patches.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelPatchSet {
    pub patches: Vec<Array2<f32>>,
}

impl LogMelPatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Consecutive 96-frame blocks; a trailing remainder is dropped.
pub fn patchify(m: &Array2<f32>) -> Result<LogMelPatchSet> {
    if m.ncols() != MEL_BANDS {
        return Err(Error::Shape {
            name: "log-mel matrix".into(),
            expected: vec![m.nrows(), MEL_BANDS],
            actual: vec![m.nrows(), m.ncols()],
        });
    }
    let patches = (0..m.nrows() / PATCH_FRAMES)
        .map(|p| m.slice(s![p * PATCH_FRAMES..(p + 1) * PATCH_FRAMES, ..]).to_owned())
        .collect();
    Ok(LogMelPatchSet { patches })
}

/// Series → waveform → 16 kHz → log-mel → patches.
pub fn series_patches(
    raw: &[f64],
    cfg: &TransformConfig,
    front_end: &LogMelFrontEnd,
) -> Result<LogMelPatchSet> {
    let normalized = normalize_series(raw)?;
    let wave = synthesize_waveform(&normalized, cfg)?;
    let wave = resample_linear(&wave, front_end.config().sample_rate_hz)?;
    patchify(&front_end.compute(&wave)?)
}
