//! Synthetic acoustic fixtures: seeded sparse-decay RIRs, reverberant source
//! images and noisy multichannel mixtures, plus modulated-noise dry sources.
//!
//! Fixtures store every component (dry sources, RIRs, per-channel images,
//! noise), so ground truth is available to tests and the evaluator without
//! regeneration.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::{MultichannelWaveform, Waveform};
use crate::error::{Error, Result};
use crate::rng::{stream, StreamKind};

/// Early-reflection window used for the truncated-RIR images, in seconds.
pub const EARLY_RIR_SECONDS: f64 = 0.050;

/// A room impulse response with a marked direct path.
#[derive(Debug, Clone)]
pub struct Rir {
    pub taps: Vec<f64>,
    pub sample_rate: u32,
    pub direct_path_index: usize,
}

impl Rir {
    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum()
    }

    /// The impulse response truncated to the early window.
    pub fn early(&self) -> Rir {
        let keep = ((EARLY_RIR_SECONDS * self.sample_rate as f64).round() as usize)
            .min(self.taps.len())
            .max(1);
        Rir {
            taps: self.taps[..keep].to_vec(),
            sample_rate: self.sample_rate,
            direct_path_index: self.direct_path_index.min(keep - 1),
        }
    }
}

/// Everything needed to synthesize one mixture scene deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub k_sources: usize,
    pub mic_count: usize,
    pub rir_length: usize,
    /// Exponential decay time constant of the late taps, seconds.
    pub decay_time_constant: f64,
    /// Inclusive range of the direct-path delay, samples.
    pub direct_delay_range: (usize, usize),
    /// Per-channel sensor-noise SNR in dB; `null` in JSON means noiseless.
    #[serde(with = "snr_serde")]
    pub snr_db: f64,
    pub rng_seed: u64,
    pub duration_s: f64,
    pub sample_rate: u32,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            k_sources: 2,
            mic_count: 3,
            rir_length: 600,
            decay_time_constant: 0.030,
            direct_delay_range: (4, 20),
            snr_db: f64::INFINITY,
            rng_seed: 0,
            duration_s: 1.5,
            sample_rate: 8000,
        }
    }
}

mod snr_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, ser: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            ser.serialize_some(v)
        } else {
            ser.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(de)?.unwrap_or(f64::INFINITY))
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k_sources == 0 || self.mic_count == 0 {
            return Err(Error::InvalidParameter(
                "scene needs at least one source and one mic".into(),
            ));
        }
        if self.rir_length == 0 {
            return Err(Error::InvalidParameter("rir_length must be >= 1".into()));
        }
        let (lo, hi) = self.direct_delay_range;
        if lo > hi || hi >= self.rir_length {
            return Err(Error::InvalidParameter(format!(
                "direct_delay_range ({lo}, {hi}) must fit inside the RIR of {} taps",
                self.rir_length
            )));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::InvalidParameter(
                "snr_db must be finite or +inf".into(),
            ));
        }
        if !(self.decay_time_constant >= 0.0) {
            return Err(Error::InvalidParameter("decay must be >= 0".into()));
        }
        if !(self.duration_s > 0.0) || self.sample_rate == 0 {
            return Err(Error::InvalidParameter(
                "duration and sample rate must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }
}

/// A fully materialized scene: mixtures plus all ground-truth components.
#[derive(Debug, Clone)]
pub struct MixtureFixture {
    pub spec: SceneSpec,
    /// `x_{1:C}`.
    pub mixtures: MultichannelWaveform,
    /// Per-source reverberant images at all channels.
    pub images: Vec<MultichannelWaveform>,
    /// Per-source images through the 50 ms-truncated RIRs.
    pub early_images: Vec<MultichannelWaveform>,
    pub dry_sources: Vec<Waveform>,
    /// `rirs[k][c]`.
    pub rirs: Vec<Vec<Rir>>,
    /// Stored sensor noise (all zeros when the scene is noiseless).
    pub noise: MultichannelWaveform,
    /// Realized per-channel SNR in dB.
    pub measured_snr_db: Vec<f64>,
}

impl MixtureFixture {
    /// Ground-truth images at the reference channel, the metric references.
    pub fn reference_images(&self) -> Vec<Waveform> {
        self.images.iter().map(|im| im.channel(0).clone()).collect()
    }
}

/// Draws a sparse exponential-decay RIR: a dominant direct tap at a random
/// delay, then Bernoulli-sparse Gaussian taps under the decay envelope.
pub fn synth_rir(spec: &SceneSpec, rng: &mut impl Rng) -> Rir {
    let (lo, hi) = spec.direct_delay_range;
    let direct = if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    };
    let mut taps = vec![0.0f64; spec.rir_length];
    taps[direct] = 1.0;
    let tau_samples = spec.decay_time_constant * spec.sample_rate as f64;
    for t in (direct + 1)..spec.rir_length {
        // keep drawing even for skipped taps so sparsity does not reshuffle
        // the stream consumed by later taps
        let gate: f64 = rng.random();
        let amp: f64 = rng.sample(StandardNormal);
        if gate < 0.06 {
            let env = if tau_samples > 0.0 {
                (-((t - direct) as f64) / tau_samples).exp()
            } else {
                0.0
            };
            taps[t] = 0.4 * amp * env;
        }
    }
    Rir {
        taps,
        sample_rate: spec.sample_rate,
        direct_path_index: direct,
    }
}

/// Full linear convolution truncated to the input length, via FFT.
pub fn convolve(x: &Waveform, h: &Rir) -> Result<Waveform> {
    if x.sample_rate != h.sample_rate {
        return Err(Error::SampleRateMismatch {
            a: x.sample_rate,
            b: h.sample_rate,
        });
    }
    let n = x.len();
    let size = (n + h.taps.len()).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut a: Vec<Complex64> = x
        .samples
        .iter()
        .map(|v| Complex64::new(*v, 0.0))
        .chain(std::iter::repeat(Complex64::ZERO))
        .take(size)
        .collect();
    let mut b: Vec<Complex64> = h
        .taps
        .iter()
        .map(|v| Complex64::new(*v, 0.0))
        .chain(std::iter::repeat(Complex64::ZERO))
        .take(size)
        .collect();
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (u, v) in a.iter_mut().zip(&b) {
        *u *= v;
    }
    inv.process(&mut a);
    let scale = 1.0 / size as f64;
    Ok(Waveform {
        samples: a[..n].iter().map(|z| z.re * scale).collect(),
        sample_rate: x.sample_rate,
    })
}

/// Synthesizes dry fixture sources: seeded noise with a low-pass spectral
/// tilt and slow multi-sine amplitude modulation, RMS-normalized. The strong
/// nonstationarity is what gives IVA something to separate.
pub fn fixture_sources(spec: &SceneSpec) -> Vec<Waveform> {
    let n = spec.n_samples();
    let fs = spec.sample_rate as f64;
    (0..spec.k_sources)
        .map(|k| {
            let mut rng = stream(spec.rng_seed, StreamKind::Fixture, 2, k);
            let rates: Vec<f64> = (0..3).map(|_| rng.random_range(1.2..6.5)).collect();
            let phases: Vec<f64> = (0..3)
                .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                .collect();
            let mut y = 0.0f64;
            let pole = 0.9;
            let mut samples: Vec<f64> = (0..n)
                .map(|t| {
                    let e: f64 = rng.sample(StandardNormal);
                    y = pole * y + (1.0 - pole) * e;
                    let mod_phase: f64 = rates
                        .iter()
                        .zip(&phases)
                        .map(|(r, p)| (std::f64::consts::TAU * r * t as f64 / fs + p).sin())
                        .sum();
                    y * (0.75 * mod_phase).exp()
                })
                .collect();
            let rms = (samples.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
            if rms > 0.0 {
                let g = 0.06 / rms;
                for v in &mut samples {
                    *v *= g;
                }
            }
            Waveform {
                samples,
                sample_rate: spec.sample_rate,
            }
        })
        .collect()
}

/// Convolves, sums and (optionally) adds sensor noise scaled so the realized
/// per-channel SNR against the summed images matches `spec.snr_db`.
pub fn mix_scene(sources: &[Waveform], spec: &SceneSpec) -> Result<MixtureFixture> {
    spec.validate()?;
    if sources.len() != spec.k_sources {
        return Err(Error::InvalidParameter(format!(
            "expected {} sources, got {}",
            spec.k_sources,
            sources.len()
        )));
    }
    let n = sources[0].len();
    for s in sources {
        s.validate()?;
        if s.len() != n {
            return Err(Error::LengthMismatch { a: n, b: s.len() });
        }
        if s.sample_rate != spec.sample_rate {
            return Err(Error::SampleRateMismatch {
                a: spec.sample_rate,
                b: s.sample_rate,
            });
        }
    }

    let rirs: Vec<Vec<Rir>> = (0..spec.k_sources)
        .map(|k| {
            (0..spec.mic_count)
                .map(|c| {
                    let mut rng =
                        stream(spec.rng_seed, StreamKind::Fixture, 0, k * spec.mic_count + c);
                    synth_rir(spec, &mut rng)
                })
                .collect()
        })
        .collect();

    let mut images = Vec::with_capacity(spec.k_sources);
    let mut early_images = Vec::with_capacity(spec.k_sources);
    for (k, src) in sources.iter().enumerate() {
        let chans: Vec<Waveform> = rirs[k]
            .iter()
            .map(|h| convolve(src, h))
            .collect::<Result<_>>()?;
        let early: Vec<Waveform> = rirs[k]
            .iter()
            .map(|h| convolve(src, &h.early()))
            .collect::<Result<_>>()?;
        images.push(MultichannelWaveform::new(chans)?);
        early_images.push(MultichannelWaveform::new(early)?);
    }

    let mut mix_chans = Vec::with_capacity(spec.mic_count);
    let mut noise_chans = Vec::with_capacity(spec.mic_count);
    let mut measured_snr_db = Vec::with_capacity(spec.mic_count);
    for c in 0..spec.mic_count {
        let mut acc = vec![0.0f64; n];
        for img in &images {
            for (a, v) in acc.iter_mut().zip(&img.channel(c).samples) {
                *a += v;
            }
        }
        let p_sig: f64 = acc.iter().map(|v| v * v).sum();
        let noise = if spec.snr_db.is_finite() {
            let p_noise = p_sig / 10f64.powf(spec.snr_db / 10.0);
            let scale = (p_noise / n as f64).sqrt();
            let mut rng = stream(spec.rng_seed, StreamKind::Fixture, 1, c);
            (0..n)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        } else {
            vec![0.0f64; n]
        };
        let p_noise_actual: f64 = noise.iter().map(|v| v * v).sum();
        measured_snr_db.push(if p_noise_actual > 0.0 {
            10.0 * (p_sig / p_noise_actual).log10()
        } else {
            f64::INFINITY
        });
        for (a, v) in acc.iter_mut().zip(&noise) {
            *a += v;
        }
        mix_chans.push(Waveform {
            samples: acc,
            sample_rate: spec.sample_rate,
        });
        noise_chans.push(Waveform {
            samples: noise,
            sample_rate: spec.sample_rate,
        });
    }

    Ok(MixtureFixture {
        spec: spec.clone(),
        mixtures: MultichannelWaveform::new(mix_chans)?,
        images,
        early_images,
        dry_sources: sources.to_vec(),
        rirs,
        noise: MultichannelWaveform::new(noise_chans)?,
        measured_snr_db,
    })
}

/// Generates the spec's own dry sources and mixes them.
pub fn synthesize_fixture(spec: &SceneSpec) -> Result<MixtureFixture> {
    let sources = fixture_sources(spec);
    mix_scene(&sources, spec)
}
