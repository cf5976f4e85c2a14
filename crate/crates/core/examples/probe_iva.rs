use arraysep::dsp::{istft, stft, StftConfig, Waveform};
use arraysep::iva::{iva_separate, IvaConfig, IvaPrior};
use arraysep::metrics::{align_and_eval, median};
use arraysep::rng::{stream, StreamKind};
use arraysep::sim::{synthesize_fixture, SceneSpec};
use rand::Rng;
use rand_distr::StandardNormal;

fn sources_custom(seed: u64, n: usize, depth: f64, pole: f64, k: usize) -> Vec<Waveform> {
    (0..k)
        .map(|ki| {
            let mut rng = stream(seed, StreamKind::Fixture, 2, ki);
            let rates: Vec<f64> = (0..3).map(|_| rng.random_range(1.2..6.5)).collect();
            let phases: Vec<f64> = (0..3)
                .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                .collect();
            let mut y = 0.0f64;
            let fs = 8000.0;
            let mut samples: Vec<f64> = (0..n)
                .map(|t| {
                    let e: f64 = rng.sample(StandardNormal);
                    y = pole * y + (1.0 - pole) * e;
                    let m: f64 = rates
                        .iter()
                        .zip(&phases)
                        .map(|(r, p)| (std::f64::consts::TAU * r * t as f64 / fs + p).sin())
                        .sum();
                    let carrier = if pole == 0.0 { e } else { y };
                    carrier * (depth * m).exp()
                })
                .collect();
            let rms = (samples.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
            let g = 0.06 / rms;
            for v in &mut samples {
                *v *= g;
            }
            Waveform {
                samples,
                sample_rate: 8000,
            }
        })
        .collect()
}

fn main() {
    let cfg = IvaConfig {
        prior: IvaPrior::Gaussian,
        iterations: 100,
        stft: StftConfig::new(2048, 256).unwrap(),
    };

    // near-identity pass-through at longer durations
    for (dur, delta, depth) in [(12.0f64, 0.1f64, 0.75f64), (24.0, 0.1, 0.75), (24.0, 0.1, 1.1)] {
        let n = (dur * 8000.0) as usize;
        let mut mins = Vec::new();
        for seed in 0..4u64 {
            let s = sources_custom(seed, n, depth, 0.9, 2);
            let mix = |a: f64, b: f64| Waveform {
                samples: (0..n)
                    .map(|t| a * s[0].samples[t] + b * s[1].samples[t])
                    .collect(),
                sample_rate: 8000,
            };
            let x_time = [mix(1.0, delta), mix(delta, 1.0)];
            let x: Vec<_> = x_time.iter().map(|c| stft(c, cfg.stft).unwrap()).collect();
            let r = iva_separate(&x, &cfg).unwrap();
            let est: Vec<Waveform> = r.sources.iter().map(|sp| istft(sp).unwrap()).collect();
            let rep = align_and_eval(&est, &s).unwrap();
            mins.push(
                rep.per_source[0]
                    .si_sdr_db
                    .min(rep.per_source[1].si_sdr_db),
            );
        }
        println!(
            "dur={dur}s delta={delta} depth={depth}: mins {:?}",
            mins.iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>()
        );
    }

    // prior ordering with different source statistics
    for (depth, pole, label) in [
        (0.75f64, 0.9f64, "current"),
        (1.1, 0.9, "deeper AM"),
        (1.1, 0.0, "deeper AM, flat spectrum"),
        (0.75, 0.0, "flat spectrum"),
    ] {
        let mut g_scores = Vec::new();
        let mut l_scores = Vec::new();
        for seed in 0..10u64 {
            let spec = SceneSpec {
                k_sources: 2,
                mic_count: 2,
                rng_seed: seed,
                duration_s: 1.5,
                ..SceneSpec::default()
            };
            // reverberant mixing of custom sources
            let s = sources_custom(seed, spec.n_samples(), depth, pole, 2);
            let fx = arraysep::sim::mix_scene(&s, &spec).unwrap();
            let refs = fx.reference_images();
            for (prior, dst) in [
                (IvaPrior::Gaussian, &mut g_scores),
                (IvaPrior::Laplace, &mut l_scores),
            ] {
                let c = IvaConfig { prior, ..cfg };
                let x: Vec<_> = fx
                    .mixtures
                    .channels()
                    .iter()
                    .map(|ch| stft(ch, c.stft).unwrap())
                    .collect();
                let r = iva_separate(&x, &c).unwrap();
                let est: Vec<Waveform> =
                    r.sources.iter().map(|sp| istft(sp).unwrap()).collect();
                dst.push(align_and_eval(&est, &refs).unwrap().mean_si_sdr_db());
            }
        }
        println!(
            "{label}: gauss median {:.2}  laplace median {:.2}  (wins: {}/10)",
            median(&g_scores),
            median(&l_scores),
            g_scores
                .iter()
                .zip(&l_scores)
                .filter(|(g, l)| g >= l)
                .count()
        );
    }

    let _ = synthesize_fixture(&SceneSpec::default());
}
