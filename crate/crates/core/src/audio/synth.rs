//! Parametric synthetic classes at the target rate.
//!
//! Class `c` has a base frequency `200 * 1.28^c` Hz and a family chosen by
//! `c % 4`: pure tone, linear chirp (base to twice base), low-passed noise
//! with its corner at the base frequency, and an amplitude-modulated tone.
//! Each clip draws its amplitude, phase and a +-3% frequency offset, and gets
//! a weak white-noise floor.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::dataset::Sample;
use super::preprocess::{prepare, TARGET_RATE};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Tone,
    Chirp,
    Noise,
    Am,
}

pub fn family(class: usize) -> Family {
    [Family::Tone, Family::Chirp, Family::Noise, Family::Am][class % 4]
}

pub fn base_freq(class: usize) -> f64 {
    200.0 * 1.28f64.powi(class as i32)
}

/// Classes beyond this would put a chirp's upper end past 8 kHz Nyquist.
pub const MAX_CLASSES: usize = 10;

pub fn class_name(class: usize) -> String {
    let f = base_freq(class).round();
    match family(class) {
        Family::Tone => format!("tone_{f}hz"),
        Family::Chirp => format!("chirp_{f}hz"),
        Family::Noise => format!("noise_{f}hz"),
        Family::Am => format!("am_{f}hz"),
    }
}

/// Unstandardized waveform of `len` samples at [`TARGET_RATE`], peak roughly
/// within `[-1, 1]`.
pub fn synth_clip<R: Rng>(class: usize, len: usize, rng: &mut R) -> Vec<f32> {
    let rate = TARGET_RATE as f64;
    let amp = rng.gen_range(0.4..0.9);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let f = base_freq(class) * rng.gen_range(0.97..1.03);
    let dur = len as f64 / rate;
    let mut out: Vec<f64> = match family(class) {
        Family::Tone => (0..len).map(|i| amp * (2.0 * PI * f * i as f64 / rate + phase).sin()).collect(),
        Family::Chirp => {
            // instantaneous frequency sweeps f -> 2f over the clip
            let k = f / dur;
            (0..len)
                .map(|i| {
                    let t = i as f64 / rate;
                    amp * (2.0 * PI * (f * t + 0.5 * k * t * t) + phase).sin()
                })
                .collect()
        }
        Family::Noise => {
            let a = 1.0 - (-2.0 * PI * f / rate).exp();
            let mut y = 0.0;
            let raw: Vec<f64> = (0..len)
                .map(|_| {
                    let n: f64 = StandardNormal.sample(rng);
                    y += a * (n - y);
                    y
                })
                .collect();
            let peak = raw.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
            raw.into_iter().map(|v| amp * v / peak).collect()
        }
        Family::Am => {
            let fm = rng.gen_range(3.0..6.0);
            (0..len)
                .map(|i| {
                    let t = i as f64 / rate;
                    amp * 0.5 * (1.0 + 0.9 * (2.0 * PI * fm * t).sin()) * (2.0 * PI * f * t + phase).sin()
                })
                .collect()
        }
    };
    for v in &mut out {
        let n: f64 = StandardNormal.sample(rng);
        *v += 0.02 * n;
    }
    out.into_iter().map(|v| v as f32).collect()
}

/// `per_class` prepared samples per class, ordered by class then index;
/// identical for identical arguments.
pub fn synth_dataset(num_classes: usize, per_class: usize, seed: u64, clip_len: usize) -> Result<Vec<Sample>> {
    if num_classes == 0 || num_classes > MAX_CLASSES {
        return Err(Error::Data(format!("synthetic classes must be in 1..={MAX_CLASSES}, got {num_classes}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(num_classes * per_class);
    for c in 0..num_classes {
        for i in 0..per_class {
            let clip = synth_clip(c, clip_len, &mut rng);
            out.push(Sample {
                waveform: prepare(&clip, clip_len)?,
                label: c,
                source_id: format!("synth-{}-{i:04}", class_name(c)),
                fold: None,
            });
        }
    }
    Ok(out)
}
