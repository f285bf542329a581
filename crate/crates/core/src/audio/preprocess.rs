//! Resampling, fixed-length padding and per-clip standardization.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TARGET_RATE: u32 = 8000;
/// Four seconds at [`TARGET_RATE`].
pub const TARGET_LEN: usize = 32_000;

/// Floor on the standard deviation used for standardization.
pub const STD_FLOOR: f64 = 1e-8;

/// Resamples by linear interpolation. Output length is
/// `round(len * to / from)`; output sample `i` reads input position
/// `i * from / to`, holding the last sample past the end. Downsampling by 2x
/// or more first applies a single-pole low-pass with its corner at the new
/// Nyquist frequency.
pub fn resample(x: &[f32], from_rate: u32, to_rate: u32) -> Result<Vec<f32>> {
    if from_rate == 0 || to_rate == 0 {
        return Err(Error::Data("sample rates must be positive".into()));
    }
    if from_rate == to_rate || x.is_empty() {
        return Ok(x.to_vec());
    }
    let filtered;
    let src = if from_rate >= 2 * to_rate {
        filtered = low_pass(x, to_rate as f64 / 2.0, from_rate as f64);
        &filtered
    } else {
        x
    };
    let ratio = from_rate as f64 / to_rate as f64;
    let out_len = (x.len() as f64 * to_rate as f64 / from_rate as f64).round() as usize;
    let last = src.len() - 1;
    Ok((0..out_len)
        .map(|i| {
            let t = i as f64 * ratio;
            let j = t.floor() as usize;
            if j >= last {
                return src[last];
            }
            let frac = t - j as f64;
            (src[j] as f64 * (1.0 - frac) + src[j + 1] as f64 * frac) as f32
        })
        .collect())
}

/// `y[n] = y[n-1] + a (x[n] - y[n-1])` with `a = 1 - exp(-2 pi fc / fs)`,
/// started at `y[-1] = x[0]` so a constant passes unchanged.
fn low_pass(x: &[f32], cutoff: f64, rate: f64) -> Vec<f32> {
    let a = 1.0 - (-2.0 * std::f64::consts::PI * cutoff / rate).exp();
    let mut y = x[0] as f64;
    x.iter()
        .map(|&v| {
            y += a * (v as f64 - y);
            y as f32
        })
        .collect()
}

/// Zero-pads at the end or keeps the first `target_len` samples, then
/// standardizes over all `target_len` samples. Returns a `1 x target_len`
/// tensor.
pub fn prepare(x: &[f32], target_len: usize) -> Result<Tensor<f32>> {
    if x.is_empty() {
        return Err(Error::Data("cannot prepare an empty clip".into()));
    }
    if target_len == 0 {
        return Err(Error::Data("target length must be positive".into()));
    }
    let mut v: Vec<f64> = x.iter().take(target_len).map(|&s| s as f64).collect();
    v.resize(target_len, 0.0);
    Tensor::from_vec(&[1, target_len], standardize(&v))
}

/// Zero mean, unit (population) variance; a silent clip maps to zeros.
pub fn standardize(v: &[f64]) -> Vec<f32> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let inv = 1.0 / var.sqrt().max(STD_FLOOR);
    v.iter().map(|s| ((s - mean) * inv) as f32).collect()
}

/// Decodes, resamples to [`TARGET_RATE`] and prepares one clip.
pub fn load_clip(wav: &[u8], target_len: usize) -> Result<Tensor<f32>> {
    let (samples, rate) = super::wav::decode_wav(wav)?;
    prepare(&resample(&samples, rate, TARGET_RATE)?, target_len)
}
