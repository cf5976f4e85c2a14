//! Forward convolutive prediction: estimation and application of multi-frame
//! relative room filters in the STFT domain.
//!
//! A relative filter `G(j, f)`, `j = -F..P`, maps a source spectrogram onto a
//! channel by convolution along the frame axis. [`fcp_estimate`] solves, for
//! every frequency independently, the weighted least squares problem
//!
//! ```text
//!   min_G  sum_l  |X(l,f) - sum_j G(j,f) S(l-j,f)|^2 / lambda(l,f)
//! ```
//!
//! in closed form through the Hermitian normal equations, with the weights
//! from [`fcp_weights`] preventing overfit to high-energy bins.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::linalg::solve_hermitian;

/// Multi-frame complex filter, one tap row per frequency bin.
///
/// Tap index `j` runs over `-future_taps ..= past_taps`; `j = 0` is the
/// instantaneous tap, positive `j` looks at past source frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTaps {
    taps: Vec<Complex64>,
    n_bins: usize,
    future_taps: usize,
    past_taps: usize,
}

impl FilterTaps {
    pub fn zeros(n_bins: usize, future_taps: usize, past_taps: usize) -> Self {
        let dim = future_taps + past_taps + 1;
        Self {
            taps: vec![Complex64::ZERO; n_bins * dim],
            n_bins,
            future_taps,
            past_taps,
        }
    }

    /// Identity filter: unit tap at `j = 0` for every bin.
    pub fn identity(n_bins: usize, future_taps: usize, past_taps: usize) -> Self {
        let mut g = Self::zeros(n_bins, future_taps, past_taps);
        for bin in 0..n_bins {
            *g.tap_mut(bin, 0) = Complex64::new(1.0, 0.0);
        }
        g
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn future_taps(&self) -> usize {
        self.future_taps
    }

    pub fn past_taps(&self) -> usize {
        self.past_taps
    }

    /// Taps per bin, `F + P + 1`.
    pub fn dim(&self) -> usize {
        self.future_taps + self.past_taps + 1
    }

    #[inline]
    fn idx(&self, bin: usize, j: isize) -> usize {
        debug_assert!(j >= -(self.future_taps as isize) && j <= self.past_taps as isize);
        bin * self.dim() + (j + self.future_taps as isize) as usize
    }

    #[inline]
    pub fn tap(&self, bin: usize, j: isize) -> Complex64 {
        self.taps[self.idx(bin, j)]
    }

    #[inline]
    pub fn tap_mut(&mut self, bin: usize, j: isize) -> &mut Complex64 {
        let i = self.idx(bin, j);
        &mut self.taps[i]
    }

    pub fn bin(&self, bin: usize) -> &[Complex64] {
        &self.taps[bin * self.dim()..(bin + 1) * self.dim()]
    }

    pub fn is_finite(&self) -> bool {
        self.taps.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Taps as `[bin][tap][re, im]` for JSON export.
    pub fn export(&self) -> Vec<Vec<[f64; 2]>> {
        (0..self.n_bins)
            .map(|b| self.bin(b).iter().map(|z| [z.re, z.im]).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FcpConfig {
    pub future_taps: usize,
    pub past_taps: usize,
    /// Weight floor `eps` relative to the peak bin power.
    pub eps: f64,
    /// Tikhonov ridge coefficient, scaled by `trace / dim` of each normal
    /// matrix. Zero disables regularization.
    pub diag_load: f64,
}

impl Default for FcpConfig {
    fn default() -> Self {
        Self {
            future_taps: 1,
            past_taps: 12,
            eps: 1e-3,
            diag_load: 1e-5,
        }
    }
}

impl FcpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "fcp eps must be > 0, got {}",
                self.eps
            )));
        }
        if !(self.diag_load >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "fcp diag_load must be >= 0, got {}",
                self.diag_load
            )));
        }
        Ok(())
    }
}

/// Per-bin positive weights shared by all sources and channels of a mixture.
#[derive(Debug, Clone)]
pub struct FcpWeights {
    data: Vec<f64>,
    n_frames: usize,
    n_bins: usize,
}

impl FcpWeights {
    #[inline]
    pub fn at(&self, frame: usize, bin: usize) -> f64 {
        self.data[frame * self.n_bins + bin]
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// Constant weights, handy for the maximum-likelihood (unweighted) solve.
    pub fn constant(value: f64, n_frames: usize, n_bins: usize) -> Self {
        Self {
            data: vec![value; n_frames * n_bins],
            n_frames,
            n_bins,
        }
    }
}

/// Weighting term: channel-mean bin power plus `eps` times its peak.
///
/// Errors on an all-zero mixture, whose weights would all be zero.
pub fn fcp_weights(x_all: &[Spectrogram], eps: f64) -> Result<FcpWeights> {
    let first = x_all.first().ok_or(Error::Empty("mixture spectrograms"))?;
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eps must be > 0, got {eps}"
        )));
    }
    for x in x_all {
        if !x.same_shape(first) {
            return Err(Error::LengthMismatch {
                a: first.n_frames(),
                b: x.n_frames(),
            });
        }
    }
    let (n_frames, n_bins) = (first.n_frames(), first.n_bins());
    let inv_c = 1.0 / x_all.len() as f64;
    let mut mean_power = vec![0.0f64; n_frames * n_bins];
    for x in x_all {
        for (acc, z) in mean_power.iter_mut().zip(x.as_slice()) {
            *acc += z.norm_sqr() * inv_c;
        }
    }
    let peak = mean_power.iter().cloned().fold(0.0f64, f64::max);
    if peak == 0.0 {
        return Err(Error::DegenerateWeights);
    }
    let floor = eps * peak;
    for v in &mut mean_power {
        *v += floor;
    }
    Ok(FcpWeights {
        data: mean_power,
        n_frames,
        n_bins,
    })
}

/// Runs `op` once per frequency bin over the per-bin tap rows, in parallel
/// when the `parallel` feature is on.
fn for_each_bin<F>(taps: &mut [Complex64], dim: usize, op: F) -> Result<()>
where
    F: Fn(usize, &mut [Complex64]) -> Result<()> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        taps.par_chunks_mut(dim)
            .enumerate()
            .try_for_each(|(bin, row)| op(bin, row))
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (bin, row) in taps.chunks_mut(dim).enumerate() {
            op(bin, row)?;
        }
        Ok(())
    }
}

/// Estimates the relative filter from a target spectrogram `x` and a source
/// estimate `s_hat` by per-frequency weighted least squares.
///
/// Out-of-range source frames are treated as zero. A frequency whose
/// regressors are entirely silent yields [`Error::DegenerateRegressor`]; a
/// singular normal matrix with `diag_load = 0` yields
/// [`Error::SingularSystem`].
pub fn fcp_estimate(
    x: &Spectrogram,
    s_hat: &Spectrogram,
    weights: &FcpWeights,
    cfg: &FcpConfig,
) -> Result<FilterTaps> {
    cfg.validate()?;
    if !x.same_shape(s_hat) {
        return Err(Error::LengthMismatch {
            a: x.n_frames(),
            b: s_hat.n_frames(),
        });
    }
    if weights.n_frames != x.n_frames() || weights.n_bins != x.n_bins() {
        return Err(Error::LengthMismatch {
            a: weights.n_frames,
            b: x.n_frames(),
        });
    }
    let (n_frames, n_bins) = (x.n_frames(), x.n_bins());
    let (f_taps, p_taps) = (cfg.future_taps, cfg.past_taps);
    let dim = f_taps + p_taps + 1;
    let mut out = FilterTaps::zeros(n_bins, f_taps, p_taps);

    for_each_bin(&mut out.taps, dim, |bin, row| {
        // gather the bin's columns once; the frame stride is cache-hostile
        let mut s_col = vec![Complex64::ZERO; n_frames];
        let mut x_col = vec![Complex64::ZERO; n_frames];
        let mut w_col = vec![0.0f64; n_frames];
        for l in 0..n_frames {
            s_col[l] = s_hat.at(l, bin);
            x_col[l] = x.at(l, bin);
            w_col[l] = 1.0 / weights.at(l, bin);
        }
        let mut normal = vec![Complex64::ZERO; dim * dim];
        let mut rhs = vec![Complex64::ZERO; dim];
        let mut reg = vec![Complex64::ZERO; dim];
        for l in 0..n_frames {
            // regressor entry i corresponds to tap j = i - F, i.e. frame l - j
            for (i, r) in reg.iter_mut().enumerate() {
                let frame = l as isize + f_taps as isize - i as isize;
                *r = if frame >= 0 && (frame as usize) < n_frames {
                    s_col[frame as usize]
                } else {
                    Complex64::ZERO
                };
            }
            let w = w_col[l];
            for i in 0..dim {
                let vi = reg[i].conj() * w;
                if vi.norm_sqr() == 0.0 {
                    continue;
                }
                rhs[i] += vi * x_col[l];
                for j in 0..=i {
                    normal[i * dim + j] += vi * reg[j];
                }
            }
        }
        let trace: f64 = (0..dim).map(|i| normal[i * dim + i].re).sum();
        if trace == 0.0 {
            return Err(Error::DegenerateRegressor { bin });
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                normal[i * dim + j] = normal[j * dim + i].conj();
            }
        }
        if cfg.diag_load > 0.0 {
            let ridge = cfg.diag_load * trace / dim as f64;
            for i in 0..dim {
                normal[i * dim + i] += ridge;
            }
        }
        solve_hermitian(&mut normal, &mut rhs, dim).ok_or(Error::SingularSystem { bin })?;
        row.copy_from_slice(&rhs);
        Ok(())
    })?;
    Ok(out)
}

/// Frame-dimension convolution `sum_j G(j,f) S(l-j,f)`.
pub fn apply_filter(g: &FilterTaps, s: &Spectrogram) -> Spectrogram {
    assert_eq!(g.n_bins(), s.n_bins(), "bin count mismatch");
    let mut out = s.clone();
    out.as_mut_slice().fill(Complex64::ZERO);
    let n_frames = s.n_frames() as isize;
    let (f_taps, p_taps) = (g.future_taps as isize, g.past_taps as isize);
    for l in 0..n_frames {
        let row = out.frame_mut(l as usize);
        for j in -f_taps..=p_taps {
            let src = l - j;
            if src < 0 || src >= n_frames {
                continue;
            }
            let s_row = s.frame(src as usize);
            for (bin, o) in row.iter_mut().enumerate() {
                *o += g.tap(bin, j) * s_row[bin];
            }
        }
    }
    out
}

/// Exact adjoint of [`apply_filter`] in the source argument: frame
/// correlation with conjugated taps.
pub fn apply_filter_adjoint(g: &FilterTaps, r: &Spectrogram) -> Spectrogram {
    assert_eq!(g.n_bins(), r.n_bins(), "bin count mismatch");
    let mut out = r.clone();
    out.as_mut_slice().fill(Complex64::ZERO);
    let n_frames = r.n_frames() as isize;
    let (f_taps, p_taps) = (g.future_taps as isize, g.past_taps as isize);
    for m in 0..n_frames {
        let row = out.frame_mut(m as usize);
        for j in -f_taps..=p_taps {
            let src = m + j;
            if src < 0 || src >= n_frames {
                continue;
            }
            let r_row = r.frame(src as usize);
            for (bin, o) in row.iter_mut().enumerate() {
                *o += g.tap(bin, j).conj() * r_row[bin];
            }
        }
    }
    out
}
