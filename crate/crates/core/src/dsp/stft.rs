use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::waveform::Waveform;

/// Analysis/synthesis window shape. Square-root Hann on both sides keeps the
/// overlap-added window power constant, which is what makes the round trip and
/// the Parseval identity exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    #[default]
    SqrtHann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop_size: usize,
    #[serde(default)]
    pub window: WindowKind,
}

impl StftConfig {
    pub fn new(fft_size: usize, hop_size: usize) -> Result<Self> {
        let cfg = Self {
            fft_size,
            hop_size,
            window: WindowKind::SqrtHann,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_size == 0 || !self.fft_size.is_power_of_two() {
            return Err(Error::InvalidStftConfig(format!(
                "fft_size {} must be a power of two",
                self.fft_size
            )));
        }
        if self.hop_size == 0 || self.fft_size % self.hop_size != 0 {
            return Err(Error::InvalidStftConfig(format!(
                "hop_size {} must divide fft_size {}",
                self.hop_size, self.fft_size
            )));
        }
        if self.hop_size >= self.fft_size {
            return Err(Error::InvalidStftConfig(
                "hop_size must be smaller than fft_size".into(),
            ));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Constant value of the overlap-added squared window, `fft / (2 hop)`.
    pub fn ola_constant(&self) -> f64 {
        self.fft_size as f64 / (2.0 * self.hop_size as f64)
    }
}

impl Default for StftConfig {
    fn default() -> Self {
        // 64 ms frames, 8 ms hop at 8 kHz
        Self {
            fft_size: 512,
            hop_size: 64,
            window: WindowKind::SqrtHann,
        }
    }
}

/// One-sided complex STFT, `n_frames x (fft/2 + 1)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    data: Vec<Complex64>,
    n_frames: usize,
    n_bins: usize,
    config: StftConfig,
    signal_len: usize,
    sample_rate: u32,
}

impl Spectrogram {
    pub fn zeros(config: StftConfig, signal_len: usize, sample_rate: u32) -> Self {
        let n_frames = frames_for(signal_len, &config);
        let n_bins = config.n_bins();
        Self {
            data: vec![Complex64::ZERO; n_frames * n_bins],
            n_frames,
            n_bins,
            config,
            signal_len,
            sample_rate,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    #[inline]
    pub fn at(&self, frame: usize, bin: usize) -> Complex64 {
        self.data[frame * self.n_bins + bin]
    }

    #[inline]
    pub fn at_mut(&mut self, frame: usize, bin: usize) -> &mut Complex64 {
        &mut self.data[frame * self.n_bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[Complex64] {
        &self.data[frame * self.n_bins..(frame + 1) * self.n_bins]
    }

    pub fn frame_mut(&mut self, frame: usize) -> &mut [Complex64] {
        &mut self.data[frame * self.n_bins..(frame + 1) * self.n_bins]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_frames == other.n_frames
            && self.n_bins == other.n_bins
            && self.config == other.config
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `self += scale * other`, shapes must match.
    pub fn axpy(&mut self, scale: Complex64, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
    }

    /// Real-part inner product, treating the complex entries as real pairs.
    pub fn dot_re(&self, other: &Self) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    /// Signal energy recovered from the one-sided spectrum via Parseval, with
    /// Hermitian double-counting and window-power normalization undone.
    pub fn parseval_energy(&self) -> f64 {
        let nyquist = self.n_bins - 1;
        let mut acc = 0.0;
        for frame in 0..self.n_frames {
            let row = self.frame(frame);
            for (bin, z) in row.iter().enumerate() {
                let w = if bin == 0 || bin == nyquist { 1.0 } else { 2.0 };
                acc += w * z.norm_sqr();
            }
        }
        acc / (self.config.fft_size as f64 * self.config.ola_constant())
    }
}

/// Number of analysis frames for a signal of `len` samples: the signal is
/// zero-padded by `fft - hop` on both ends plus whatever the last frame needs.
pub(crate) fn frames_for(len: usize, cfg: &StftConfig) -> usize {
    let avail = len + cfg.fft_size - 2 * cfg.hop_size;
    avail.div_ceil(cfg.hop_size) + 1
}

/// Reusable STFT engine: precomputed window and FFT plans for one config.
pub struct Stft {
    cfg: StftConfig,
    window: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.fft_size;
        let window: Vec<f64> = match cfg.window {
            // periodic sqrt-Hann: sin(pi n / W)
            WindowKind::SqrtHann => (0..w)
                .map(|n| (std::f64::consts::PI * n as f64 / w as f64).sin())
                .collect(),
        };
        let mut planner = FftPlanner::new();
        Ok(Self {
            cfg,
            window,
            fwd: planner.plan_fft_forward(w),
            inv: planner.plan_fft_inverse(w),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    fn pad(&self) -> usize {
        self.cfg.fft_size - self.cfg.hop_size
    }

    /// Forward STFT. Errors if the signal is shorter than one frame.
    pub fn analyze(&self, samples: &[f64], sample_rate: u32) -> Result<Spectrogram> {
        let (w, hop) = (self.cfg.fft_size, self.cfg.hop_size);
        if samples.len() < w {
            return Err(Error::InputTooShort {
                len: samples.len(),
                fft_size: w,
            });
        }
        let mut out = Spectrogram::zeros(self.cfg, samples.len(), sample_rate);
        let pad = self.pad() as isize;
        let n_bins = self.cfg.n_bins();
        let mut buf = vec![Complex64::ZERO; w];
        for m in 0..out.n_frames {
            let start = m as isize * hop as isize - pad;
            for (n, b) in buf.iter_mut().enumerate() {
                let q = start + n as isize;
                let x = if q >= 0 && (q as usize) < samples.len() {
                    samples[q as usize]
                } else {
                    0.0
                };
                *b = Complex64::new(x * self.window[n], 0.0);
            }
            self.fwd.process(&mut buf);
            out.frame_mut(m).copy_from_slice(&buf[..n_bins]);
        }
        Ok(out)
    }

    /// Inverse STFT by windowed overlap-add, cropped to the original length.
    pub fn synthesize(&self, spec: &Spectrogram) -> Waveform {
        let (w, hop) = (self.cfg.fft_size, self.cfg.hop_size);
        let pad = self.pad();
        let total = (spec.n_frames - 1) * hop + w;
        let mut acc = vec![0.0f64; total];
        let mut buf = vec![Complex64::ZERO; w];
        let inv_w = 1.0 / w as f64;
        for m in 0..spec.n_frames {
            hermitian_extend(spec.frame(m), &mut buf);
            self.inv.process(&mut buf);
            let base = m * hop;
            for n in 0..w {
                acc[base + n] += buf[n].re * inv_w * self.window[n];
            }
        }
        let norm = 1.0 / self.cfg.ola_constant();
        let samples = (0..spec.signal_len)
            .map(|t| acc[pad + t] * norm)
            .collect();
        Waveform {
            samples,
            sample_rate: spec.sample_rate,
        }
    }

    /// Exact adjoint of [`Stft::analyze`] under the real-part inner product.
    pub fn analyze_adjoint(&self, spec: &Spectrogram) -> Waveform {
        let (w, hop) = (self.cfg.fft_size, self.cfg.hop_size);
        let pad = self.pad() as isize;
        let len = spec.signal_len;
        let mut out = vec![0.0f64; len];
        let mut buf = vec![Complex64::ZERO; w];
        for m in 0..spec.n_frames {
            // adjoint of one-sided bin selection: zero the discarded bins
            let row = spec.frame(m);
            buf[..row.len()].copy_from_slice(row);
            buf[row.len()..].fill(Complex64::ZERO);
            // adjoint of the unnormalized forward DFT
            self.inv.process(&mut buf);
            let start = m as isize * hop as isize - pad;
            for n in 0..w {
                let q = start + n as isize;
                if q >= 0 && (q as usize) < len {
                    out[q as usize] += buf[n].re * self.window[n];
                }
            }
        }
        Waveform {
            samples: out,
            sample_rate: spec.sample_rate,
        }
    }

    /// Exact adjoint of [`Stft::synthesize`] under the real-part inner product.
    pub fn synthesize_adjoint(&self, samples: &[f64], sample_rate: u32) -> Spectrogram {
        let (w, hop) = (self.cfg.fft_size, self.cfg.hop_size);
        let mut out = Spectrogram::zeros(self.cfg, samples.len(), sample_rate);
        let pad = self.pad() as isize;
        let norm = 1.0 / (self.cfg.ola_constant() * w as f64);
        let mut buf = vec![Complex64::ZERO; w];
        let nyquist = w / 2;
        for m in 0..out.n_frames {
            let start = m as isize * hop as isize - pad;
            for n in 0..w {
                let q = start + n as isize;
                let x = if q >= 0 && (q as usize) < samples.len() {
                    samples[q as usize]
                } else {
                    0.0
                };
                buf[n] = Complex64::new(x * self.window[n] * norm, 0.0);
            }
            // adjoint of the 1/W-scaled inverse DFT is the forward DFT
            self.fwd.process(&mut buf);
            let row = out.frame_mut(m);
            row[0] = buf[0];
            row[nyquist] = buf[nyquist];
            for b in 1..nyquist {
                // adjoint of the Hermitian extension folds the mirrored bins back
                row[b] = buf[b] + buf[w - b].conj();
            }
        }
        out
    }
}

fn hermitian_extend(one_sided: &[Complex64], full: &mut [Complex64]) {
    let w = full.len();
    let nyquist = w / 2;
    full[..one_sided.len()].copy_from_slice(one_sided);
    for b in 1..nyquist {
        full[w - b] = one_sided[b].conj();
    }
}

/// One-shot forward STFT of a waveform.
pub fn stft(x: &Waveform, cfg: StftConfig) -> Result<Spectrogram> {
    x.validate()?;
    Stft::new(cfg)?.analyze(&x.samples, x.sample_rate)
}

/// One-shot inverse STFT.
pub fn istft(spec: &Spectrogram) -> Result<Waveform> {
    Ok(Stft::new(*spec.config())?.synthesize(spec))
}

/// One-shot adjoint of [`stft`].
pub fn stft_adjoint(spec: &Spectrogram) -> Result<Waveform> {
    Ok(Stft::new(*spec.config())?.analyze_adjoint(spec))
}

/// One-shot adjoint of [`istft`].
pub fn istft_adjoint(y: &Waveform, cfg: StftConfig) -> Result<Spectrogram> {
    Ok(Stft::new(cfg)?.synthesize_adjoint(&y.samples, y.sample_rate))
}
