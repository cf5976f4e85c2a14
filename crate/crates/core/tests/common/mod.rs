//! Shared helpers for integration tests.
#![allow(dead_code)]

use arraysep::dsp::{Spectrogram, StftConfig, Waveform};
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

pub fn gaussian_noise(len: usize, seed: u64) -> Waveform {
    let mut r = rng(seed);
    Waveform {
        samples: (0..len).map(|_| r.sample::<f64, _>(StandardNormal) * 0.3).collect(),
        sample_rate: 8000,
    }
}

pub fn random_spectrogram(cfg: StftConfig, signal_len: usize, seed: u64) -> Spectrogram {
    let mut r = rng(seed);
    let mut s = Spectrogram::zeros(cfg, signal_len, 8000);
    for z in s.as_mut_slice() {
        *z = Complex64::new(r.sample(StandardNormal), r.sample(StandardNormal));
    }
    s
}

/// Real-part inner product over waveform samples.
pub fn dot_time(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
}

pub fn linf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}
