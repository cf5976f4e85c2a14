//! The posterior sampler: EDM noise/churn schedules, the posterior-score
//! approximation (Tweedie prior score + FCP-filtered mixture guidance +
//! reference-channel guidance), a 2nd-order Heun stochastic loop with
//! optional AuxIVA initialization, and the final FCP projection of virtual
//! sources onto reference-channel images.

use std::borrow::Borrow;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dsp::{MultichannelWaveform, Spectrogram, Stft, StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::fcp::{
    apply_filter, apply_filter_adjoint, fcp_estimate, fcp_weights, FcpConfig, FcpWeights,
    FilterTaps,
};
use crate::iva::{iva_init_filters, iva_separate, IvaConfig};
use crate::metrics::reconstruction_snr_db;
use crate::prior::Denoiser;
use crate::rng::{derive_seed, stream, StreamKind};

/// Polynomially interpolated noise levels `sigma_0 .. sigma_N`, with
/// `sigma_N = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
    pub rho: f64,
    pub sigma_max: f64,
    pub sigma_min: f64,
}

/// Builds the step noise levels:
/// `sigma_i = (max^(1/rho) + i/(N-1) (min^(1/rho) - max^(1/rho)))^rho` for
/// `i < N`, and `sigma_N = 0`.
pub fn build_sigma_schedule(
    n: usize,
    sigma_max: f64,
    sigma_min: f64,
    rho: f64,
) -> Result<NoiseSchedule> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 steps, got {n}"
        )));
    }
    if !(sigma_max > sigma_min && sigma_min > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need sigma_max > sigma_min > 0, got {sigma_max} and {sigma_min}"
        )));
    }
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "rho must be > 0, got {rho}"
        )));
    }
    let a = sigma_max.powf(1.0 / rho);
    let b = sigma_min.powf(1.0 / rho);
    let mut sigmas = Vec::with_capacity(n + 1);
    for i in 0..n {
        let s = if i == 0 {
            sigma_max
        } else if i == n - 1 {
            sigma_min
        } else {
            let frac = i as f64 / (n - 1) as f64;
            (a + frac * (b - a)).powf(rho)
        };
        sigmas.push(s);
    }
    sigmas.push(0.0);
    Ok(NoiseSchedule {
        sigmas,
        rho,
        sigma_max,
        sigma_min,
    })
}

impl NoiseSchedule {
    pub fn n(&self) -> usize {
        self.sigmas.len() - 1
    }

    #[inline]
    pub fn sigma(&self, i: usize) -> f64 {
        self.sigmas[i]
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }
}

/// Per-step churn factors `gamma_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChurnSchedule {
    gammas: Vec<f64>,
    pub s_churn: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub s_noise: f64,
}

/// `gamma_i = min(S_churn/N, sqrt(2)-1)` when `sigma_i` lies in
/// `[S_min, S_max]`, else 0.
pub fn build_churn_schedule(
    schedule: &NoiseSchedule,
    s_churn: f64,
    s_min: f64,
    s_max: f64,
    s_noise: f64,
) -> Result<ChurnSchedule> {
    if !(s_churn >= 0.0) || !(s_noise > 0.0) || s_min > s_max {
        return Err(Error::InvalidParameter(
            "churn parameters must satisfy s_churn >= 0, s_noise > 0, s_min <= s_max".into(),
        ));
    }
    let n = schedule.n();
    let cap = std::f64::consts::SQRT_2 - 1.0;
    let base = (s_churn / n as f64).min(cap);
    let gammas = (0..n)
        .map(|i| {
            let s = schedule.sigma(i);
            if s >= s_min && s <= s_max {
                base
            } else {
                0.0
            }
        })
        .collect();
    Ok(ChurnSchedule {
        gammas,
        s_churn,
        s_min,
        s_max,
        s_noise,
    })
}

impl ChurnSchedule {
    #[inline]
    pub fn gamma(&self, i: usize) -> f64 {
        self.gammas[i]
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }
}

/// Guidance strengths and step thresholds for the posterior score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    /// Mixture-likelihood guidance strength; the applied guidance vector is
    /// normalized to norm `xi sqrt(T) / sigma`.
    pub xi: f64,
    /// Steps `i <= n_ref` also apply reference-channel guidance.
    pub n_ref: usize,
    /// Steps `i <= n_fg` use the IVA-initialized filters instead of
    /// re-estimating them by FCP.
    pub n_fg: usize,
    /// Weight of the reference-channel guidance term.
    pub lambda: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            xi: 2.0,
            n_ref: 200,
            n_fg: 100,
            lambda: 1.3,
        }
    }
}

/// Full sampler configuration. Defaults are the paper-scale settings with
/// IVA initialization; [`SamplerConfig::without_init`] switches to the
/// no-initialization variant (wider starting noise, stronger guidance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub steps: usize,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub rho: f64,
    pub s_churn: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub s_noise: f64,
    pub guidance: GuidanceConfig,
    pub fcp: FcpConfig,
    /// STFT used for FCP filtering and the final projection.
    pub stft: StftConfig,
    /// AuxIVA initialization; `None` starts from pure noise.
    pub iva: Option<IvaConfig>,
    pub seed: u64,
    pub record_trace: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            sigma_max: 0.8,
            sigma_min: 1e-6,
            rho: 10.0,
            s_churn: 30.0,
            s_min: 0.0,
            s_max: 50.0,
            s_noise: 1.0,
            guidance: GuidanceConfig::default(),
            fcp: FcpConfig::default(),
            stft: StftConfig::default(),
            iva: Some(IvaConfig::default()),
            seed: 0,
            record_trace: false,
        }
    }
}

impl SamplerConfig {
    /// The no-IVA variant: wider starting noise and stronger guidance.
    pub fn without_init() -> Self {
        let mut cfg = Self::default();
        cfg.sigma_max = 2.0;
        cfg.guidance.xi = 6.0;
        cfg.guidance.n_fg = 0;
        cfg.iva = None;
        cfg
    }

    pub fn validate(&self, k_sources: usize, channels: usize) -> Result<()> {
        if k_sources == 0 || channels == 0 {
            return Err(Error::InvalidConfig(
                "need at least one source and one channel".into(),
            ));
        }
        build_sigma_schedule(self.steps, self.sigma_max, self.sigma_min, self.rho)?;
        if !(self.s_churn >= 0.0) || !(self.s_noise > 0.0) || self.s_min > self.s_max {
            return Err(Error::InvalidConfig("invalid churn parameters".into()));
        }
        if !(self.guidance.xi >= 0.0) || !(self.guidance.lambda >= 0.0) {
            return Err(Error::InvalidConfig(
                "guidance strengths must be non-negative".into(),
            ));
        }
        if self.guidance.n_ref > self.steps || self.guidance.n_fg > self.steps {
            return Err(Error::InvalidConfig(
                "n_ref and n_fg cannot exceed the step count".into(),
            ));
        }
        self.fcp.validate()?;
        self.stft.validate()?;
        if let Some(iva) = &self.iva {
            iva.validate()?;
            if channels < 2 {
                return Err(Error::InvalidConfig(
                    "IVA initialization needs at least 2 channels".into(),
                ));
            }
            if k_sources != channels {
                return Err(Error::InvalidConfig(format!(
                    "IVA initialization needs K = C, got K={k_sources}, C={channels}"
                )));
            }
        } else if self.guidance.n_fg > 0 && self.guidance.xi > 0.0 {
            return Err(Error::InvalidConfig(
                "n_fg > 0 requires IVA initialization".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of one sampling run.
#[derive(Debug, Clone)]
pub struct SeparationResult {
    /// Separated virtual sources `s_{1:K}`.
    pub virtual_sources: Vec<Waveform>,
    /// Estimated reference-channel images `s_{1:K,1}`.
    pub ref_images: Vec<Waveform>,
    /// `10 log10(|x_1|^2 / |x_1 - sum_k s_{k,1}|^2)`.
    pub recon_snr_db: f64,
    pub trace: Option<Vec<StepTrace>>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct StepTrace {
    pub step: usize,
    pub sigma: f64,
    pub sigma_hat: f64,
    /// Mixture residual `sum_c |x_c - sum_k s_{k,c}|^2` at the first score
    /// evaluation of the step (absent when guidance is off).
    pub mixture_residual: Option<f64>,
    /// Norm of the applied likelihood-guidance vector.
    pub guidance_norm: Option<f64>,
    pub ref_residual: Option<f64>,
    pub ref_guidance_norm: Option<f64>,
    /// FCP estimates that fell back to the IVA filters this step.
    pub fcp_fallbacks: usize,
}

#[derive(Debug, Clone, Default)]
struct ScoreDiag {
    mixture_residual: Option<f64>,
    guidance_norm: Option<f64>,
    ref_residual: Option<f64>,
    ref_guidance_norm: Option<f64>,
    fcp_fallbacks: usize,
}

/// Mixture residuals under frozen filters: returns the total loss
/// `sum_c |x_c - sum_k istft(G_kc * S_k)|^2` and the per-channel residual
/// signals.
pub fn mixture_residuals<F: Borrow<FilterTaps>>(
    engine: &Stft,
    x_channels: &[&[f64]],
    filters: &[Vec<F>],
    denoised_specs: &[Spectrogram],
) -> (f64, Vec<Vec<f64>>) {
    let mut loss = 0.0;
    let mut residuals = Vec::with_capacity(x_channels.len());
    for (c, xc) in x_channels.iter().enumerate() {
        let mut sum_spec: Option<Spectrogram> = None;
        for (k, spec) in denoised_specs.iter().enumerate() {
            let filtered = apply_filter(filters[k][c].borrow(), spec);
            match &mut sum_spec {
                Some(acc) => acc.axpy(num_complex::Complex64::new(1.0, 0.0), &filtered),
                None => sum_spec = Some(filtered),
            }
        }
        let estimate = engine.synthesize(&sum_spec.expect("at least one source"));
        let mut r = Vec::with_capacity(xc.len());
        for (x, e) in xc.iter().zip(&estimate.samples) {
            let d = x - e;
            loss += d * d;
            r.push(d);
        }
        residuals.push(r);
    }
    (loss, residuals)
}

/// Gradient of the frozen-filter mixture loss with respect to each denoised
/// source (time domain): the adjoint chain
/// `stft^T ( filter^T ( istft^T (-2 r_c) ) )`, summed over channels.
pub fn mixture_grad_denoised<F: Borrow<FilterTaps>>(
    engine: &Stft,
    filters: &[Vec<F>],
    residuals: &[Vec<f64>],
    sample_rate: u32,
) -> Vec<Vec<f64>> {
    let cotangents: Vec<Spectrogram> = residuals
        .iter()
        .map(|r| {
            let scaled: Vec<f64> = r.iter().map(|v| -2.0 * v).collect();
            engine.synthesize_adjoint(&scaled, sample_rate)
        })
        .collect();
    filters
        .iter()
        .map(|per_channel| {
            let mut acc: Option<Spectrogram> = None;
            for (c, g) in per_channel.iter().enumerate() {
                let back = apply_filter_adjoint(g.borrow(), &cotangents[c]);
                match &mut acc {
                    Some(a) => a.axpy(num_complex::Complex64::new(1.0, 0.0), &back),
                    None => acc = Some(back),
                }
            }
            engine.analyze_adjoint(&acc.expect("at least one channel")).samples
        })
        .collect()
}

/// The frozen-filter likelihood objective
/// `sum_c |x_c - sum_k istft(G_kc * stft(D_k(s_k)))|^2` as a function of the
/// noisy state, filters held constant.
pub fn frozen_filter_loss(
    engine: &Stft,
    x: &MultichannelWaveform,
    filters: &[Vec<FilterTaps>],
    denoisers: &[&dyn Denoiser],
    state: &[Vec<f64>],
    sigma: f64,
) -> Result<f64> {
    let specs = denoised_specs(engine, denoisers, state, sigma, x.sample_rate())?;
    let x_channels: Vec<&[f64]> = x.channels().iter().map(|c| c.samples.as_slice()).collect();
    Ok(mixture_residuals(engine, &x_channels, filters, &specs).0)
}

/// Exact gradient of [`frozen_filter_loss`] in the noisy state, chaining
/// through the denoiser VJPs.
pub fn frozen_filter_grad(
    engine: &Stft,
    x: &MultichannelWaveform,
    filters: &[Vec<FilterTaps>],
    denoisers: &[&dyn Denoiser],
    state: &[Vec<f64>],
    sigma: f64,
) -> Result<Vec<Vec<f64>>> {
    let specs = denoised_specs(engine, denoisers, state, sigma, x.sample_rate())?;
    let x_channels: Vec<&[f64]> = x.channels().iter().map(|c| c.samples.as_slice()).collect();
    let (_, residuals) = mixture_residuals(engine, &x_channels, filters, &specs);
    let grad_d = mixture_grad_denoised(engine, filters, &residuals, x.sample_rate());
    Ok(state
        .iter()
        .zip(denoisers)
        .zip(grad_d)
        .map(|((s, d), g)| d.vjp(s, sigma, &g))
        .collect())
}

fn denoised_specs(
    engine: &Stft,
    denoisers: &[&dyn Denoiser],
    state: &[Vec<f64>],
    sigma: f64,
    sample_rate: u32,
) -> Result<Vec<Spectrogram>> {
    state
        .iter()
        .zip(denoisers)
        .map(|(s, d)| engine.analyze(&d.apply(s, sigma), sample_rate))
        .collect()
}

/// Posterior-score evaluator bound to one separation problem.
///
/// Holds the mixture in both domains, the FCP weights, and (optionally) the
/// IVA-initialized filters; [`PosteriorScorer::score`] evaluates the
/// approximate posterior score at a given state and step index.
pub struct PosteriorScorer<'a> {
    engine: &'a Stft,
    x: &'a MultichannelWaveform,
    x_channels: Vec<&'a [f64]>,
    x_specs: &'a [Spectrogram],
    weights: &'a FcpWeights,
    iva_filters: Option<&'a [Vec<FilterTaps>]>,
    denoisers: &'a [&'a dyn Denoiser],
    guidance: &'a GuidanceConfig,
    fcp: &'a FcpConfig,
    schedule: &'a NoiseSchedule,
}

impl<'a> PosteriorScorer<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        engine: &'a Stft,
        x: &'a MultichannelWaveform,
        x_specs: &'a [Spectrogram],
        weights: &'a FcpWeights,
        iva_filters: Option<&'a [Vec<FilterTaps>]>,
        denoisers: &'a [&'a dyn Denoiser],
        guidance: &'a GuidanceConfig,
        fcp: &'a FcpConfig,
        schedule: &'a NoiseSchedule,
    ) -> Self {
        Self {
            engine,
            x,
            x_channels: x.channels().iter().map(|c| c.samples.as_slice()).collect(),
            x_specs,
            weights,
            iva_filters,
            denoisers,
            guidance,
            fcp,
            schedule,
        }
    }

    /// Approximate posterior score at `state` for step `i`: Tweedie prior
    /// score plus normalized likelihood guidance, plus reference-channel
    /// guidance while `i <= n_ref`.
    pub fn score(&self, state: &[Vec<f64>], i: usize) -> Result<(Vec<Vec<f64>>, StepTrace)> {
        let sigma = self.schedule.sigma(i);
        if !(sigma > 0.0) {
            return Err(Error::InvalidSigma(sigma));
        }
        let k = state.len();
        let t_len = state[0].len();
        let sqrt_t = (t_len as f64).sqrt();
        let denoised: Vec<Vec<f64>> = state
            .iter()
            .zip(self.denoisers)
            .map(|(s, d)| d.apply(s, sigma))
            .collect();
        // Tweedie prior score
        let inv_s2 = 1.0 / (sigma * sigma);
        let mut score: Vec<Vec<f64>> = denoised
            .iter()
            .zip(state)
            .map(|(d, s)| d.iter().zip(s).map(|(dv, sv)| (dv - sv) * inv_s2).collect())
            .collect();
        let mut diag = ScoreDiag::default();

        if self.guidance.xi > 0.0 {
            let specs: Vec<Spectrogram> = denoised
                .iter()
                .map(|d| self.engine.analyze(d, self.x.sample_rate()))
                .collect::<Result<_>>()?;
            let filters = self.select_filters(&specs, i, &mut diag)?;
            let (loss, residuals) =
                mixture_residuals(self.engine, &self.x_channels, &filters, &specs);
            let grad_d =
                mixture_grad_denoised(self.engine, &filters, &residuals, self.x.sample_rate());
            let raw: Vec<Vec<f64>> = state
                .iter()
                .zip(self.denoisers)
                .zip(grad_d)
                .map(|((s, d), g)| d.vjp(s, sigma, &g))
                .collect();
            let gnorm = stacked_norm(&raw);
            diag.mixture_residual = Some(loss);
            if gnorm > 0.0 {
                let scale = self.guidance.xi * sqrt_t / (sigma * gnorm);
                for (sk, rk) in score.iter_mut().zip(&raw) {
                    for (s, r) in sk.iter_mut().zip(rk) {
                        *s -= scale * r;
                    }
                }
                diag.guidance_norm = Some(scale * gnorm);
            } else {
                diag.guidance_norm = Some(0.0);
            }
        }

        if self.guidance.lambda > 0.0 && i <= self.guidance.n_ref {
            let mut e: Vec<f64> = self.x_channels[0].to_vec();
            for d in &denoised {
                for (ev, dv) in e.iter_mut().zip(d) {
                    *ev -= dv;
                }
            }
            let loss: f64 = e.iter().map(|v| v * v).sum();
            let cot: Vec<f64> = e.iter().map(|v| -2.0 * v).collect();
            let raw: Vec<Vec<f64>> = state
                .iter()
                .zip(self.denoisers)
                .map(|(s, d)| d.vjp(s, sigma, &cot))
                .collect();
            let gnorm = stacked_norm(&raw);
            diag.ref_residual = Some(loss);
            if gnorm > 0.0 {
                let scale = self.guidance.xi * sqrt_t / (sigma * gnorm);
                let lam = self.guidance.lambda;
                for (sk, rk) in score.iter_mut().zip(&raw) {
                    for (s, r) in sk.iter_mut().zip(rk) {
                        *s -= lam * scale * r;
                    }
                }
                diag.ref_guidance_norm = Some(lam * scale * gnorm);
            } else {
                diag.ref_guidance_norm = Some(0.0);
            }
        }
        debug_assert_eq!(score.len(), k);

        let trace = StepTrace {
            step: i,
            sigma,
            sigma_hat: sigma,
            mixture_residual: diag.mixture_residual,
            guidance_norm: diag.guidance_norm,
            ref_residual: diag.ref_residual,
            ref_guidance_norm: diag.ref_guidance_norm,
            fcp_fallbacks: diag.fcp_fallbacks,
        };
        Ok((score, trace))
    }

    /// Filters for step `i`: the IVA-initialized ones while `i <= n_fg`,
    /// otherwise fresh FCP estimates (falling back per source/channel pair on
    /// degenerate estimates when IVA filters exist).
    fn select_filters(
        &self,
        specs: &[Spectrogram],
        i: usize,
        diag: &mut ScoreDiag,
    ) -> Result<Vec<Vec<std::borrow::Cow<'a, FilterTaps>>>> {
        use std::borrow::Cow;
        let use_iva = self.iva_filters.is_some() && i <= self.guidance.n_fg;
        let mut out = Vec::with_capacity(specs.len());
        for (k, spec) in specs.iter().enumerate() {
            let mut per_channel = Vec::with_capacity(self.x_specs.len());
            for (c, xc) in self.x_specs.iter().enumerate() {
                if use_iva {
                    per_channel.push(Cow::Borrowed(&self.iva_filters.unwrap()[k][c]));
                    continue;
                }
                match fcp_estimate(xc, spec, self.weights, self.fcp) {
                    Ok(g) => per_channel.push(Cow::Owned(g)),
                    Err(Error::DegenerateRegressor { .. }) | Err(Error::SingularSystem { .. }) => {
                        match self.iva_filters {
                            Some(init) => {
                                diag.fcp_fallbacks += 1;
                                per_channel.push(Cow::Borrowed(&init[k][c]));
                            }
                            None => {
                                return Err(Error::DegenerateRegressor { bin: 0 });
                            }
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
            out.push(per_channel);
        }
        Ok(out)
    }
}

fn stacked_norm(v: &[Vec<f64>]) -> f64 {
    v.iter()
        .flat_map(|s| s.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

fn all_finite(state: &[Vec<f64>]) -> bool {
    state.iter().all(|s| s.iter().all(|v| v.is_finite()))
}

/// Runs the full separation: optional IVA initialization, the Heun
/// stochastic sampling loop, and the final projection of virtual sources to
/// reference-channel images.
pub fn separate(
    x: &MultichannelWaveform,
    denoisers: &[&dyn Denoiser],
    cfg: &SamplerConfig,
) -> Result<SeparationResult> {
    let k = denoisers.len();
    cfg.validate(k, x.channel_count())?;
    for ch in x.channels() {
        ch.validate()?;
    }
    let t_len = x.len();
    let rate = x.sample_rate();
    let schedule = build_sigma_schedule(cfg.steps, cfg.sigma_max, cfg.sigma_min, cfg.rho)?;
    let churn = build_churn_schedule(&schedule, cfg.s_churn, cfg.s_min, cfg.s_max, cfg.s_noise)?;
    let engine = Stft::new(cfg.stft)?;
    let x_specs: Vec<Spectrogram> = x
        .channels()
        .iter()
        .map(|c| engine.analyze(&c.samples, rate))
        .collect::<Result<_>>()?;
    let weights = fcp_weights(&x_specs, cfg.fcp.eps)?;

    // IVA initialization: separated reference sources seed the state, and
    // their relative filters guide the first n_fg steps
    let (init_means, iva_filters) = match &cfg.iva {
        Some(iva_cfg) => {
            let iva_engine = Stft::new(iva_cfg.stft)?;
            let x_iva: Vec<Spectrogram> = x
                .channels()
                .iter()
                .map(|c| iva_engine.analyze(&c.samples, rate))
                .collect::<Result<_>>()?;
            let result = iva_separate(&x_iva, iva_cfg)?;
            let means: Vec<Vec<f64>> = result
                .sources
                .iter()
                .map(|s| iva_engine.synthesize(s).samples)
                .collect();
            let filters = if cfg.guidance.xi > 0.0 {
                let s_fcp: Vec<Spectrogram> = means
                    .iter()
                    .map(|m| engine.analyze(m, rate))
                    .collect::<Result<_>>()?;
                Some(iva_init_filters(&x_specs, &s_fcp, &cfg.fcp)?)
            } else {
                None
            };
            (means, filters)
        }
        None => (vec![vec![0.0f64; t_len]; k], None),
    };

    let sigma0 = schedule.sigma(0);
    let mut state: Vec<Vec<f64>> = init_means
        .iter()
        .enumerate()
        .map(|(ki, mean)| {
            let mut rng = stream(cfg.seed, StreamKind::SamplerInit, 0, ki);
            mean.iter()
                .map(|m| m + sigma0 * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    let scorer = PosteriorScorer::new(
        &engine,
        x,
        &x_specs,
        &weights,
        iva_filters.as_deref(),
        denoisers,
        &cfg.guidance,
        &cfg.fcp,
        &schedule,
    );

    let mut trace = cfg.record_trace.then(|| Vec::with_capacity(cfg.steps));
    for i in 0..cfg.steps {
        let sigma = schedule.sigma(i);
        let gamma = churn.gamma(i);
        let sigma_hat = sigma + gamma * sigma;
        let mut s_hat = state;
        if gamma > 0.0 {
            let amp = (sigma_hat * sigma_hat - sigma * sigma).sqrt();
            for (ki, sk) in s_hat.iter_mut().enumerate() {
                let mut rng = stream(cfg.seed, StreamKind::SamplerChurn, i, ki);
                for v in sk.iter_mut() {
                    *v += amp * churn.s_noise * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        let (score, mut step_trace) = scorer.score(&s_hat, i)?;
        step_trace.sigma_hat = sigma_hat;
        let sigma_next = schedule.sigma(i + 1);
        let dt = sigma_next - sigma_hat;
        let mut next: Vec<Vec<f64>> = s_hat
            .iter()
            .zip(&score)
            .map(|(sk, gk)| {
                sk.iter()
                    .zip(gk)
                    .map(|(s, g)| s + dt * (-sigma_hat * g))
                    .collect()
            })
            .collect();
        if sigma_next != 0.0 {
            let (score2, _) = scorer.score(&next, i + 1)?;
            for ki in 0..k {
                for t in 0..t_len {
                    let d1 = -sigma_hat * score[ki][t];
                    let d2 = -sigma_next * score2[ki][t];
                    next[ki][t] = s_hat[ki][t] + 0.5 * dt * (d1 + d2);
                }
            }
        }
        if !all_finite(&next) {
            return Err(Error::NonFiniteState { step: i });
        }
        if let Some(tr) = &mut trace {
            tr.push(step_trace);
        }
        state = next;
    }

    // final FCP projection onto the reference channel
    let mut virtual_sources = Vec::with_capacity(k);
    let mut ref_images = Vec::with_capacity(k);
    let mut sum_ref = vec![0.0f64; t_len];
    for sk in &state {
        let spec = engine.analyze(sk, rate)?;
        let g = fcp_estimate(&x_specs[0], &spec, &weights, &cfg.fcp)?;
        let image = engine.synthesize(&apply_filter(&g, &spec));
        for (acc, v) in sum_ref.iter_mut().zip(&image.samples) {
            *acc += v;
        }
        ref_images.push(image);
        virtual_sources.push(Waveform {
            samples: sk.clone(),
            sample_rate: rate,
        });
    }
    let recon_snr_db = reconstruction_snr_db(&x.reference().samples, &sum_ref);

    Ok(SeparationResult {
        virtual_sources,
        ref_images,
        recon_snr_db,
        trace,
    })
}

/// Outcome of [`separate_best_of`]: the winning sample plus the per-sample
/// reconstruction SNRs it was selected from.
#[derive(Debug, Clone)]
pub struct BestOf {
    pub result: SeparationResult,
    pub per_sample_recon_db: Vec<f64>,
    pub selected: usize,
}

/// Runs `n_samples` independent samplings (seeds derived from the base seed;
/// sample 0 reuses it) and keeps the one with the highest mixture
/// reconstruction SNR.
pub fn separate_best_of(
    x: &MultichannelWaveform,
    denoisers: &[&dyn Denoiser],
    cfg: &SamplerConfig,
    n_samples: usize,
) -> Result<BestOf> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be >= 1".into()));
    }
    let mut best: Option<(usize, SeparationResult)> = None;
    let mut recons = Vec::with_capacity(n_samples);
    for j in 0..n_samples {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = if j == 0 {
            cfg.seed
        } else {
            derive_seed(cfg.seed, j as u64)
        };
        let result = separate(x, denoisers, &run_cfg)?;
        recons.push(result.recon_snr_db);
        let better = match &best {
            Some((_, current)) => result.recon_snr_db > current.recon_snr_db,
            None => true,
        };
        if better {
            best = Some((j, result));
        }
    }
    let (selected, result) = best.expect("n_samples >= 1");
    Ok(BestOf {
        result,
        per_sample_recon_db: recons,
        selected,
    })
}
