//! Auxiliary-function independent vector analysis (AuxIVA) with iterative
//! projection updates, used standalone and as sampler initialization.
//!
//! Determined case only (`K = C`). The contrast is either a time-varying
//! Gaussian (per-frame source variance) or a spherical Laplace; both admit
//! the majorize-minimize bound that makes the cost non-increasing per
//! iteration. Outputs are projected back to estimate each source's image at
//! the reference channel.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{Spectrogram, StftConfig};
use crate::error::{Error, Result};
use crate::fcp::{fcp_estimate, fcp_weights, FcpConfig, FilterTaps};
use crate::linalg::solve_general;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IvaPrior {
    #[default]
    Gaussian,
    Laplace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IvaConfig {
    pub prior: IvaPrior,
    pub iterations: usize,
    pub stft: StftConfig,
}

impl Default for IvaConfig {
    fn default() -> Self {
        Self {
            prior: IvaPrior::Gaussian,
            iterations: 100,
            stft: StftConfig {
                fft_size: 2048,
                hop_size: 256,
                window: Default::default(),
            },
        }
    }
}

impl IvaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidParameter(
                "iva iterations must be >= 1".into(),
            ));
        }
        self.stft.validate()
    }
}

/// Per-frequency demixing matrices, `[n_bins][K][K]` row-major.
#[derive(Debug, Clone)]
pub struct DemixingMatrices {
    w: Vec<Complex64>,
    n_bins: usize,
    k: usize,
}

impl DemixingMatrices {
    fn identity(n_bins: usize, k: usize) -> Self {
        let mut w = vec![Complex64::ZERO; n_bins * k * k];
        for f in 0..n_bins {
            for i in 0..k {
                w[(f * k + i) * k + i] = Complex64::new(1.0, 0.0);
            }
        }
        Self { w, n_bins, k }
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn matrix(&self, bin: usize) -> &[Complex64] {
        &self.w[bin * self.k * self.k..(bin + 1) * self.k * self.k]
    }

    fn matrix_mut(&mut self, bin: usize) -> &mut [Complex64] {
        &mut self.w[bin * self.k * self.k..(bin + 1) * self.k * self.k]
    }

    /// Frobenius-norm condition estimate `||W|| ||W^-1||`; infinite when the
    /// matrix fails to invert.
    pub fn condition_estimate(&self, bin: usize) -> f64 {
        let k = self.k;
        let m = self.matrix(bin);
        let norm: f64 = m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        match invert(m, k) {
            Some(inv) => {
                let inv_norm: f64 = inv.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                norm * inv_norm
            }
            None => f64::INFINITY,
        }
    }
}

fn invert(m: &[Complex64], k: usize) -> Option<Vec<Complex64>> {
    // column-by-column solve against the identity
    let mut out = vec![Complex64::ZERO; k * k];
    for col in 0..k {
        let mut a = m.to_vec();
        let mut b = vec![Complex64::ZERO; k];
        b[col] = Complex64::new(1.0, 0.0);
        solve_general(&mut a, &mut b, k)?;
        for row in 0..k {
            out[row * k + col] = b[row];
        }
    }
    Some(out)
}

fn log_abs_det(m: &[Complex64], k: usize) -> f64 {
    let mut a = m.to_vec();
    let mut log_det = 0.0f64;
    for col in 0..k {
        let mut pivot = col;
        let mut best = a[col * k + col].norm_sqr();
        for row in (col + 1)..k {
            let mag = a[row * k + col].norm_sqr();
            if mag > best {
                best = mag;
                pivot = row;
            }
        }
        if best <= 0.0 {
            return f64::NEG_INFINITY;
        }
        if pivot != col {
            for j in 0..k {
                a.swap(col * k + j, pivot * k + j);
            }
        }
        let p = a[col * k + col];
        log_det += p.norm().ln();
        let inv = Complex64::new(1.0, 0.0) / p;
        for row in (col + 1)..k {
            let factor = a[row * k + col] * inv;
            for j in col..k {
                let v = a[col * k + j];
                a[row * k + j] -= factor * v;
            }
        }
    }
    log_det
}

pub struct IvaResult {
    /// Estimated reference-channel source images, `K` spectrograms.
    pub sources: Vec<Spectrogram>,
    pub demixing: DemixingMatrices,
    /// AuxIVA cost before iterating and after each iteration.
    pub objective: Vec<f64>,
}

/// Contrast derivative `G'(r)` used as the covariance weight, and the
/// contrast itself for the objective.
fn contrast(prior: IvaPrior, r: f64, n_bins: usize) -> (f64, f64) {
    match prior {
        IvaPrior::Gaussian => {
            let b = n_bins as f64;
            (b / r, b * (r / b).ln())
        }
        IvaPrior::Laplace => {
            let s = r.sqrt();
            (1.0 / s, 2.0 * s)
        }
    }
}

/// Separates a determined mixture (`K = C >= 2`) into reference-channel
/// source-image estimates.
pub fn iva_separate(x: &[Spectrogram], cfg: &IvaConfig) -> Result<IvaResult> {
    cfg.validate()?;
    let c = x.len();
    if c < 2 {
        return Err(Error::TooFewChannels { got: c, need: 2 });
    }
    let first = &x[0];
    for xc in x {
        if !xc.same_shape(first) {
            return Err(Error::LengthMismatch {
                a: first.n_frames(),
                b: xc.n_frames(),
            });
        }
        if !xc.is_finite() {
            return Err(Error::NonFinite {
                context: "iva input spectrogram",
            });
        }
    }
    let k = c;
    let (n_frames, n_bins) = (first.n_frames(), first.n_bins());
    if n_frames == 0 {
        return Err(Error::Empty("iva input"));
    }

    // observations as per-bin column vectors, [f][l][c]
    let mut obs = vec![Complex64::ZERO; n_bins * n_frames * c];
    for (ci, xc) in x.iter().enumerate() {
        for l in 0..n_frames {
            let row = xc.frame(l);
            for f in 0..n_bins {
                obs[(f * n_frames + l) * c + ci] = row[f];
            }
        }
    }

    let mut demix = DemixingMatrices::identity(n_bins, k);
    let mut est = vec![Complex64::ZERO; n_bins * n_frames * k];
    let mut frame_power = vec![0.0f64; k * n_frames];

    let recompute =
        |demix: &DemixingMatrices, est: &mut [Complex64], frame_power: &mut [f64]| {
            frame_power.fill(0.0);
            for f in 0..n_bins {
                let w = demix.matrix(f);
                for l in 0..n_frames {
                    let xv = &obs[(f * n_frames + l) * c..(f * n_frames + l) * c + c];
                    for i in 0..k {
                        let mut acc = Complex64::ZERO;
                        for (j, xvj) in xv.iter().enumerate() {
                            acc += w[i * k + j] * xvj;
                        }
                        est[(f * n_frames + l) * k + i] = acc;
                        frame_power[i * n_frames + l] += acc.norm_sqr();
                    }
                }
            }
        };

    let objective_value = |demix: &DemixingMatrices, frame_power: &[f64]| -> f64 {
        let floor = 1e-12
            * frame_power
                .iter()
                .cloned()
                .fold(0.0f64, f64::max)
                .max(f64::MIN_POSITIVE);
        let mut j = 0.0;
        for ki in 0..k {
            for l in 0..n_frames {
                let r = frame_power[ki * n_frames + l].max(floor);
                j += contrast(cfg.prior, r, n_bins).1;
            }
        }
        j /= n_frames as f64;
        for f in 0..n_bins {
            j -= 2.0 * log_abs_det(demix.matrix(f), k);
        }
        j
    };

    recompute(&demix, &mut est, &mut frame_power);
    let mut objective = Vec::with_capacity(cfg.iterations + 1);
    objective.push(objective_value(&demix, &frame_power));

    let mut weights = vec![0.0f64; k * n_frames];
    for _iter in 0..cfg.iterations {
        let floor = 1e-12
            * frame_power
                .iter()
                .cloned()
                .fold(0.0f64, f64::max)
                .max(f64::MIN_POSITIVE);
        for ki in 0..k {
            for l in 0..n_frames {
                let r = frame_power[ki * n_frames + l].max(floor);
                weights[ki * n_frames + l] = contrast(cfg.prior, r, n_bins).0;
            }
        }
        for f in 0..n_bins {
            for ki in 0..k {
                // weighted covariance V_k(f)
                let mut v = vec![Complex64::ZERO; c * c];
                for l in 0..n_frames {
                    let phi = weights[ki * n_frames + l];
                    let xv = &obs[(f * n_frames + l) * c..(f * n_frames + l) * c + c];
                    for i in 0..c {
                        let xi = xv[i] * phi;
                        for j in 0..c {
                            v[i * c + j] += xi * xv[j].conj();
                        }
                    }
                }
                let inv_l = 1.0 / n_frames as f64;
                for z in &mut v {
                    *z *= inv_l;
                }
                let tr: f64 = (0..c).map(|i| v[i * c + i].re).sum();
                let ridge = 1e-12 * tr.max(f64::MIN_POSITIVE) / c as f64;
                for i in 0..c {
                    v[i * c + i] += ridge;
                }
                // iterative projection: u = (W V_k)^{-1} e_k
                let w = demix.matrix(f);
                let mut m = vec![Complex64::ZERO; k * c];
                for i in 0..k {
                    for j in 0..c {
                        let mut acc = Complex64::ZERO;
                        for t in 0..c {
                            acc += w[i * k + t] * v[t * c + j];
                        }
                        m[i * c + j] = acc;
                    }
                }
                let mut u = vec![Complex64::ZERO; c];
                u[ki] = Complex64::new(1.0, 0.0);
                if solve_general(&mut m, &mut u, c).is_none() {
                    // stationary source at this bin; leave the row unchanged
                    continue;
                }
                // normalize so u^H V u = 1
                let mut quad = Complex64::ZERO;
                for i in 0..c {
                    let mut acc = Complex64::ZERO;
                    for j in 0..c {
                        acc += v[i * c + j] * u[j];
                    }
                    quad += u[i].conj() * acc;
                }
                let scale = 1.0 / quad.re.max(f64::MIN_POSITIVE).sqrt();
                let wm = demix.matrix_mut(f);
                for j in 0..c {
                    wm[ki * k + j] = (u[j] * scale).conj();
                }
            }
        }
        recompute(&demix, &mut est, &mut frame_power);
        objective.push(objective_value(&demix, &frame_power));
    }

    // projection back: scale each source by the mixing coefficient that maps
    // it to the reference channel
    let mut sources: Vec<Spectrogram> =
        (0..k).map(|_| first.clone()).collect();
    for s in &mut sources {
        s.as_mut_slice().fill(Complex64::ZERO);
    }
    for f in 0..n_bins {
        let w = demix.matrix(f);
        let a = invert(w, k).ok_or(Error::SingularSystem { bin: f })?;
        for l in 0..n_frames {
            for (ki, s) in sources.iter_mut().enumerate() {
                *s.at_mut(l, f) = a[ki] * est[(f * n_frames + l) * k + ki];
            }
        }
    }

    Ok(IvaResult {
        sources,
        demixing: demix,
        objective,
    })
}

/// Relative filters from IVA-separated reference sources to every channel:
/// `FCP(X_c, S_k)` for all `(k, c)` pairs.
///
/// Both inputs must be analyzed under the same (FCP-domain) STFT config,
/// which is generally not the IVA one.
pub fn iva_init_filters(
    x: &[Spectrogram],
    s_iva: &[Spectrogram],
    cfg: &FcpConfig,
) -> Result<Vec<Vec<FilterTaps>>> {
    let weights = fcp_weights(x, cfg.eps)?;
    s_iva
        .iter()
        .map(|s| {
            x.iter()
                .map(|xc| fcp_estimate(xc, s, &weights, cfg))
                .collect()
        })
        .collect()
}
