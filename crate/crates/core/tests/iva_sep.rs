//! AuxIVA separation quality on seeded fixtures, the monotone-cost
//! guarantee, projection-back consistency, and filter initialization.

mod common;

use arraysep::dsp::{istft, stft, Spectrogram, StftConfig, Waveform};
use arraysep::fcp::{apply_filter, FcpConfig};
use arraysep::iva::{iva_init_filters, iva_separate, IvaConfig, IvaPrior};
use arraysep::metrics::{align_and_eval, median, si_sdr};
use arraysep::sim::{fixture_sources, synthesize_fixture, SceneSpec};
use common::*;
use num_complex::Complex64;

fn iva_cfg(prior: IvaPrior) -> IvaConfig {
    IvaConfig {
        prior,
        iterations: 100,
        stft: StftConfig::new(2048, 256).unwrap(),
    }
}

fn analyze_all(channels: &[Waveform], cfg: &IvaConfig) -> Vec<Spectrogram> {
    channels
        .iter()
        .map(|c| stft(c, cfg.stft).unwrap())
        .collect()
}

fn two_sources(seed: u64) -> Vec<Waveform> {
    let spec = SceneSpec {
        k_sources: 2,
        rng_seed: seed,
        duration_s: 1.5,
        ..SceneSpec::default()
    };
    fixture_sources(&spec)
}

/// Mean SI-SDR of the aligned estimates minus the mixture baseline.
fn improvement_db(est: &[Waveform], refs: &[Waveform], mixture_ch1: &Waveform) -> f64 {
    let report = align_and_eval(est, refs).unwrap();
    let after = report.mean_si_sdr_db();
    let before: f64 = refs
        .iter()
        .map(|r| si_sdr(mixture_ch1, r).unwrap())
        .sum::<f64>()
        / refs.len() as f64;
    after - before
}

#[test]
fn already_separated_inputs_pass_through() {
    let sources = two_sources(3);
    let cfg = iva_cfg(IvaPrior::Gaussian);
    let x = analyze_all(&sources, &cfg);
    let result = iva_separate(&x, &cfg).unwrap();
    let est: Vec<Waveform> = result.sources.iter().map(|s| istft(s).unwrap()).collect();
    let report = align_and_eval(&est, &sources).unwrap();
    for m in &report.per_source {
        assert!(m.si_sdr_db >= 30.0, "per-source SI-SDR {:?}", m.si_sdr_db);
    }
}

#[test]
fn instantaneous_2x2_median_improvement_at_least_10db() {
    let cfg = iva_cfg(IvaPrior::Gaussian);
    let mut improvements = Vec::new();
    for seed in 0..20u64 {
        let s = two_sources(seed);
        let n = s[0].len();
        let mix = |a: f64, b: f64| -> Waveform {
            Waveform {
                samples: (0..n)
                    .map(|t| a * s[0].samples[t] + b * s[1].samples[t])
                    .collect(),
                sample_rate: 8000,
            }
        };
        let x_time = [mix(1.0, 0.5), mix(0.5, 1.0)];
        let x = analyze_all(&x_time, &cfg);
        let result = iva_separate(&x, &cfg).unwrap();
        let est: Vec<Waveform> = result.sources.iter().map(|sp| istft(sp).unwrap()).collect();
        improvements.push(improvement_db(&est, &s, &x_time[0]));
    }
    let med = median(&improvements);
    assert!(med >= 10.0, "median improvement {med:.2} dB: {improvements:?}");
}

#[test]
fn lightly_reverberant_median_improvement_at_least_5db() {
    let cfg = iva_cfg(IvaPrior::Gaussian);
    let mut improvements = Vec::new();
    for seed in 0..20u64 {
        let spec = SceneSpec {
            k_sources: 2,
            mic_count: 2,
            rir_length: 5,
            direct_delay_range: (0, 2),
            decay_time_constant: 0.0005,
            rng_seed: seed,
            duration_s: 1.5,
            ..SceneSpec::default()
        };
        let fx = synthesize_fixture(&spec).unwrap();
        let x = analyze_all(fx.mixtures.channels(), &cfg);
        let result = iva_separate(&x, &cfg).unwrap();
        let est: Vec<Waveform> = result.sources.iter().map(|sp| istft(sp).unwrap()).collect();
        let refs = fx.reference_images();
        improvements.push(improvement_db(&est, &refs, fx.mixtures.reference()));
    }
    let med = median(&improvements);
    assert!(med >= 5.0, "median improvement {med:.2} dB: {improvements:?}");
}

#[test]
fn gaussian_prior_beats_laplace_on_reverberant_batch() {
    let mut gauss_scores = Vec::new();
    let mut laplace_scores = Vec::new();
    for seed in 0..10u64 {
        let spec = SceneSpec {
            k_sources: 2,
            mic_count: 2,
            rng_seed: seed,
            duration_s: 1.5,
            ..SceneSpec::default()
        };
        let fx = synthesize_fixture(&spec).unwrap();
        let refs = fx.reference_images();
        for (prior, scores) in [
            (IvaPrior::Gaussian, &mut gauss_scores),
            (IvaPrior::Laplace, &mut laplace_scores),
        ] {
            let cfg = iva_cfg(prior);
            let x = analyze_all(fx.mixtures.channels(), &cfg);
            let result = iva_separate(&x, &cfg).unwrap();
            let est: Vec<Waveform> =
                result.sources.iter().map(|sp| istft(sp).unwrap()).collect();
            scores.push(align_and_eval(&est, &refs).unwrap().mean_si_sdr_db());
        }
    }
    let g = median(&gauss_scores);
    let l = median(&laplace_scores);
    assert!(
        g >= l,
        "gaussian median {g:.2} dB < laplace median {l:.2} dB"
    );
}

#[test]
fn auxiliary_objective_is_monotone() {
    for seed in [0u64, 5, 9] {
        let spec = SceneSpec {
            k_sources: 2,
            mic_count: 2,
            rng_seed: seed,
            ..SceneSpec::default()
        };
        let fx = synthesize_fixture(&spec).unwrap();
        for prior in [IvaPrior::Gaussian, IvaPrior::Laplace] {
            let cfg = IvaConfig {
                iterations: 40,
                ..iva_cfg(prior)
            };
            let x = analyze_all(fx.mixtures.channels(), &cfg);
            let result = iva_separate(&x, &cfg).unwrap();
            for w in result.objective.windows(2) {
                let tol = 1e-8 * w[0].abs().max(1.0);
                assert!(
                    w[1] <= w[0] + tol,
                    "objective rose: {} -> {} (seed {seed}, {prior:?})",
                    w[0],
                    w[1]
                );
            }
        }
    }
}

#[test]
fn projection_back_reconstructs_reference_channel() {
    let mut residual_fractions = Vec::new();
    for seed in 0..8u64 {
        let spec = SceneSpec {
            k_sources: 2,
            mic_count: 2,
            rng_seed: seed,
            ..SceneSpec::default()
        };
        let fx = synthesize_fixture(&spec).unwrap();
        let cfg = iva_cfg(IvaPrior::Gaussian);
        let x = analyze_all(fx.mixtures.channels(), &cfg);
        let result = iva_separate(&x, &cfg).unwrap();
        let mut sum = result.sources[0].clone();
        sum.axpy(Complex64::new(1.0, 0.0), &result.sources[1]);
        let num: f64 = x[0]
            .as_slice()
            .iter()
            .zip(sum.as_slice())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        let den: f64 = x[0].as_slice().iter().map(|z| z.norm_sqr()).sum();
        residual_fractions.push(num / den);
    }
    let med = median(&residual_fractions);
    assert!(med <= 0.20, "median residual fraction {med:.3}");
}

#[test]
fn oracle_source_substitution_gives_near_identity_filter() {
    // feed the TRUE channel-1 images where IVA outputs would go; the fitted
    // filter must explain nearly all of X_1
    let spec = SceneSpec {
        k_sources: 2,
        mic_count: 2,
        rng_seed: 4,
        ..SceneSpec::default()
    };
    let fx = synthesize_fixture(&spec).unwrap();
    let fcp_stft = StftConfig::default();
    let x: Vec<Spectrogram> = fx
        .mixtures
        .channels()
        .iter()
        .map(|c| stft(c, fcp_stft).unwrap())
        .collect();
    let s_true: Vec<Spectrogram> = fx
        .reference_images()
        .iter()
        .map(|im| stft(im, fcp_stft).unwrap())
        .collect();
    let filters = iva_init_filters(&x, &s_true, &FcpConfig::default()).unwrap();

    // filtering the true images with the fitted filters and summing must
    // reconstruct X_1 to within 1% energy
    let mut acc = apply_filter(&filters[0][0], &s_true[0]);
    acc.axpy(Complex64::new(1.0, 0.0), &apply_filter(&filters[1][0], &s_true[1]));
    let num: f64 = x[0]
        .as_slice()
        .iter()
        .zip(acc.as_slice())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    let den: f64 = x[0].as_slice().iter().map(|z| z.norm_sqr()).sum();
    assert!(num / den <= 0.01, "residual fraction {:.4}", num / den);
}

#[test]
fn fitted_filters_beat_unfiltered_sum_on_every_fixture() {
    for seed in 0..6u64 {
        let spec = SceneSpec {
            k_sources: 2,
            mic_count: 2,
            rng_seed: seed,
            ..SceneSpec::default()
        };
        let fx = synthesize_fixture(&spec).unwrap();
        let cfg = iva_cfg(IvaPrior::Gaussian);
        let x_iva = analyze_all(fx.mixtures.channels(), &cfg);
        let result = iva_separate(&x_iva, &cfg).unwrap();
        let est_time: Vec<Waveform> =
            result.sources.iter().map(|sp| istft(sp).unwrap()).collect();

        let fcp_stft = StftConfig::default();
        let x: Vec<Spectrogram> = fx
            .mixtures
            .channels()
            .iter()
            .map(|c| stft(c, fcp_stft).unwrap())
            .collect();
        let s_est: Vec<Spectrogram> = est_time
            .iter()
            .map(|e| stft(e, fcp_stft).unwrap())
            .collect();
        let filters = iva_init_filters(&x, &s_est, &FcpConfig::default()).unwrap();

        for (c, xc) in x.iter().enumerate() {
            let mut filtered = apply_filter(&filters[0][c], &s_est[0]);
            filtered.axpy(Complex64::new(1.0, 0.0), &apply_filter(&filters[1][c], &s_est[1]));
            let mut plain = s_est[0].clone();
            plain.axpy(Complex64::new(1.0, 0.0), &s_est[1]);
            let resid = |est: &Spectrogram| -> f64 {
                xc.as_slice()
                    .iter()
                    .zip(est.as_slice())
                    .map(|(a, b)| (a - b).norm_sqr())
                    .sum()
            };
            assert!(
                resid(&filtered) < resid(&plain),
                "seed {seed} channel {c}"
            );
        }
    }
}
