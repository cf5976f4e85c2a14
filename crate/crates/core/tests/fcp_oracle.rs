//! FCP against independent dense least-squares oracles, plus the
//! maximum-likelihood equivalence under constant weights, the optimality
//! certificate (residual orthogonality), and the adjoint/gradient identities.

mod common;

use arraysep::dsp::{Spectrogram, StftConfig};
use arraysep::fcp::{
    apply_filter, apply_filter_adjoint, fcp_estimate, fcp_weights, FcpConfig, FcpWeights,
    FilterTaps,
};
use common::*;
use nalgebra::{Complex, DMatrix, DVector};
use num_complex::Complex64;

/// Dense weighted least-squares oracle for one frequency bin, solved by SVD
/// on the sqrt-weighted regression (no normal equations, no Cholesky).
fn dense_wls_bin(
    x_col: &[Complex64],
    s_col: &[Complex64],
    w_col: &[f64],
    future: usize,
    past: usize,
) -> Vec<Complex64> {
    let l = x_col.len();
    let dim = future + past + 1;
    let mut a = DMatrix::<Complex<f64>>::zeros(l, dim);
    let mut b = DVector::<Complex<f64>>::zeros(l);
    for row in 0..l {
        let sw = w_col[row].sqrt();
        for idx in 0..dim {
            let j = idx as isize - future as isize;
            let frame = row as isize - j;
            if frame >= 0 && (frame as usize) < l {
                let v = s_col[frame as usize];
                a[(row, idx)] = Complex::new(v.re, v.im) * sw;
            }
        }
        b[row] = Complex::new(x_col[row].re, x_col[row].im) * sw;
    }
    let sol = a
        .svd(true, true)
        .solve(&b, 1e-14)
        .expect("oracle SVD solve");
    sol.iter().map(|z| Complex64::new(z.re, z.im)).collect()
}

fn columns(spec: &Spectrogram, bin: usize) -> Vec<Complex64> {
    (0..spec.n_frames()).map(|l| spec.at(l, bin)).collect()
}

fn small_cfg() -> StftConfig {
    StftConfig::new(4, 1).unwrap()
}

#[test]
fn matches_dense_weighted_oracle_on_small_instances() {
    // L = 8 frames, 3 bins, F = 0, P = 1
    let cfg = small_cfg();
    let signal_len = 5;
    let x = random_spectrogram(cfg, signal_len, 1);
    let s = random_spectrogram(cfg, signal_len, 2);
    assert_eq!(x.n_bins(), 3);
    assert_eq!(x.n_frames(), 8);
    let weights = fcp_weights(&[x.clone(), random_spectrogram(cfg, signal_len, 3)], 0.01).unwrap();
    let fcp_cfg = FcpConfig {
        future_taps: 0,
        past_taps: 1,
        eps: 0.01,
        diag_load: 0.0,
    };
    let g = fcp_estimate(&x, &s, &weights, &fcp_cfg).unwrap();
    for bin in 0..x.n_bins() {
        let w_col: Vec<f64> = (0..x.n_frames()).map(|l| 1.0 / weights.at(l, bin)).collect();
        let oracle = dense_wls_bin(&columns(&x, bin), &columns(&s, bin), &w_col, 0, 1);
        let scale = oracle.iter().map(|z| z.norm()).fold(1e-30, f64::max);
        for (idx, want) in oracle.iter().enumerate() {
            let got = g.tap(bin, idx as isize);
            assert!(
                (got - want).norm() <= 1e-8 * scale,
                "bin {bin} tap {idx}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn constant_weights_equal_maximum_likelihood_solution() {
    // with lambda == const and no ridge, FCP is the plain least-squares
    // (maximum likelihood) filter estimator
    let cfg = StftConfig::new(16, 4).unwrap();
    for seed in 0..50u64 {
        let len = 120 + (seed as usize % 5) * 16;
        let x = random_spectrogram(cfg, len, 2 * seed);
        let s = random_spectrogram(cfg, len, 2 * seed + 1);
        let weights = FcpWeights::constant(3.7, x.n_frames(), x.n_bins());
        let fcp_cfg = FcpConfig {
            future_taps: 1,
            past_taps: 2,
            eps: 1e-3,
            diag_load: 0.0,
        };
        let g = fcp_estimate(&x, &s, &weights, &fcp_cfg).unwrap();
        for bin in 0..x.n_bins() {
            let ones = vec![1.0; x.n_frames()];
            let oracle = dense_wls_bin(&columns(&x, bin), &columns(&s, bin), &ones, 1, 2);
            let scale = oracle.iter().map(|z| z.norm()).fold(1e-30, f64::max);
            for (idx, want) in oracle.iter().enumerate() {
                let got = g.tap(bin, idx as isize - 1);
                assert!(
                    (got - want).norm() <= 1e-8 * scale,
                    "seed {seed} bin {bin} tap {idx}"
                );
            }
        }
    }
}

#[test]
fn exact_recovery_of_synthesized_filter() {
    // X = G* conv S with no noise; a tap budget >= the truth recovers G*
    let cfg = StftConfig::new(64, 16).unwrap();
    let s = random_spectrogram(cfg, 800, 11);
    let mut g_true = FilterTaps::zeros(s.n_bins(), 1, 3);
    let mut r = rng(12);
    for bin in 0..s.n_bins() {
        for j in -1..=3 {
            *g_true.tap_mut(bin, j) = Complex64::new(
                rand::Rng::random_range(&mut r, -1.0..1.0),
                rand::Rng::random_range(&mut r, -1.0..1.0),
            );
        }
    }
    let x = apply_filter(&g_true, &s);
    let weights = fcp_weights(std::slice::from_ref(&x), 1e-3).unwrap();
    let fcp_cfg = FcpConfig {
        future_taps: 1,
        past_taps: 3,
        eps: 1e-3,
        diag_load: 0.0,
    };
    let g = fcp_estimate(&x, &s, &weights, &fcp_cfg).unwrap();
    for bin in 0..s.n_bins() {
        let scale = g_true.bin(bin).iter().map(|z| z.norm()).fold(1e-30, f64::max);
        for j in -1..=3isize {
            assert!(
                (g.tap(bin, j) - g_true.tap(bin, j)).norm() <= 1e-8 * scale,
                "bin {bin} tap {j}"
            );
        }
    }
}

#[test]
fn larger_tap_budget_than_truth_still_recovers() {
    let cfg = StftConfig::new(16, 4).unwrap();
    let s = random_spectrogram(cfg, 400, 21);
    let mut g_true = FilterTaps::zeros(s.n_bins(), 0, 1);
    for bin in 0..s.n_bins() {
        *g_true.tap_mut(bin, 0) = Complex64::new(0.9, -0.2);
        *g_true.tap_mut(bin, 1) = Complex64::new(-0.3, 0.4);
    }
    let x = apply_filter(&g_true, &s);
    let weights = fcp_weights(std::slice::from_ref(&x), 1e-3).unwrap();
    let fcp_cfg = FcpConfig {
        future_taps: 2,
        past_taps: 4,
        eps: 1e-3,
        diag_load: 0.0,
    };
    let g = fcp_estimate(&x, &s, &weights, &fcp_cfg).unwrap();
    for bin in 0..s.n_bins() {
        for j in -2..=4isize {
            let want = if j == 0 {
                Complex64::new(0.9, -0.2)
            } else if j == 1 {
                Complex64::new(-0.3, 0.4)
            } else {
                Complex64::ZERO
            };
            assert!((g.tap(bin, j) - want).norm() <= 1e-8, "bin {bin} tap {j}");
        }
    }
}

#[test]
fn weighted_residual_is_orthogonal_to_regressors() {
    let cfg = StftConfig::new(16, 4).unwrap();
    let x = random_spectrogram(cfg, 300, 31);
    let s = random_spectrogram(cfg, 300, 32);
    let weights = fcp_weights(std::slice::from_ref(&x), 1e-3).unwrap();
    let fcp_cfg = FcpConfig {
        future_taps: 1,
        past_taps: 3,
        eps: 1e-3,
        diag_load: 0.0,
    };
    let g = fcp_estimate(&x, &s, &weights, &fcp_cfg).unwrap();
    let fitted = apply_filter(&g, &s);
    let x_norm = x.dot_re(&x).sqrt();
    for bin in 0..x.n_bins() {
        for idx in 0..5usize {
            let j = idx as isize - 1;
            let mut acc = Complex64::ZERO;
            for l in 0..x.n_frames() {
                let frame = l as isize - j;
                if frame < 0 || frame as usize >= x.n_frames() {
                    continue;
                }
                let reg = s.at(frame as usize, bin);
                let resid = x.at(l, bin) - fitted.at(l, bin);
                acc += reg.conj() * resid / weights.at(l, bin);
            }
            assert!(
                acc.norm() <= 1e-8 * x_norm,
                "bin {bin} tap {j}: {:.2e}",
                acc.norm()
            );
        }
    }
}

#[test]
fn weighted_residual_never_grows_with_more_past_taps() {
    let cfg = StftConfig::new(16, 4).unwrap();
    let x = random_spectrogram(cfg, 300, 41);
    let s = random_spectrogram(cfg, 300, 42);
    let weights = fcp_weights(std::slice::from_ref(&x), 1e-3).unwrap();
    let weighted_residual = |past: usize| -> f64 {
        let fcp_cfg = FcpConfig {
            future_taps: 1,
            past_taps: past,
            eps: 1e-3,
            diag_load: 0.0,
        };
        let g = fcp_estimate(&x, &s, &weights, &fcp_cfg).unwrap();
        let fitted = apply_filter(&g, &s);
        let mut acc = 0.0;
        for l in 0..x.n_frames() {
            for bin in 0..x.n_bins() {
                acc += (x.at(l, bin) - fitted.at(l, bin)).norm_sqr() / weights.at(l, bin);
            }
        }
        acc
    };
    let mut prev = f64::INFINITY;
    for past in [0usize, 1, 2, 4, 8] {
        let r = weighted_residual(past);
        assert!(
            r <= prev * (1.0 + 1e-10),
            "residual grew at P={past}: {r} > {prev}"
        );
        prev = r;
    }
}

#[test]
fn apply_filter_matches_naive_convolution() {
    let cfg = StftConfig::new(16, 4).unwrap();
    let s = random_spectrogram(cfg, 200, 51);
    let mut g = FilterTaps::zeros(s.n_bins(), 2, 3);
    let mut r = rng(52);
    for bin in 0..s.n_bins() {
        for j in -2..=3 {
            *g.tap_mut(bin, j) = Complex64::new(
                rand::Rng::random_range(&mut r, -1.0..1.0),
                rand::Rng::random_range(&mut r, -1.0..1.0),
            );
        }
    }
    let fast = apply_filter(&g, &s);
    for l in 0..s.n_frames() {
        for bin in 0..s.n_bins() {
            let mut want = Complex64::ZERO;
            for j in -2..=3isize {
                let src = l as isize - j;
                if src >= 0 && (src as usize) < s.n_frames() {
                    want += g.tap(bin, j) * s.at(src as usize, bin);
                }
            }
            assert!((fast.at(l, bin) - want).norm() <= 1e-12);
        }
    }
}

#[test]
fn filter_adjoint_identity_and_gradient() {
    let cfg = StftConfig::new(16, 4).unwrap();
    let s = random_spectrogram(cfg, 200, 61);
    let r_spec = random_spectrogram(cfg, 200, 62);
    let mut g = FilterTaps::zeros(s.n_bins(), 1, 2);
    let mut r = rng(63);
    for bin in 0..s.n_bins() {
        for j in -1..=2 {
            *g.tap_mut(bin, j) = Complex64::new(
                rand::Rng::random_range(&mut r, -1.0..1.0),
                rand::Rng::random_range(&mut r, -1.0..1.0),
            );
        }
    }
    // <G*S, R> == <S, G^T R> under the real-pair inner product
    let lhs = apply_filter(&g, &s).dot_re(&r_spec);
    let rhs = s.dot_re(&apply_filter_adjoint(&g, &r_spec));
    let scale = s.dot_re(&s).sqrt() * r_spec.dot_re(&r_spec).sqrt();
    assert!((lhs - rhs).abs() <= 1e-10 * scale);

    // gradient of |X - G*S|^2 in S is -2 G^T (X - G*S); check by central FD
    let x = random_spectrogram(cfg, 200, 64);
    let loss = |s_in: &Spectrogram| -> f64 {
        let fitted = apply_filter(&g, s_in);
        let mut acc = 0.0;
        for (a, b) in x.as_slice().iter().zip(fitted.as_slice()) {
            acc += (a - b).norm_sqr();
        }
        acc
    };
    let grad = {
        let fitted = apply_filter(&g, &s);
        let mut resid = x.clone();
        resid.axpy(Complex64::new(-1.0, 0.0), &fitted);
        let mut out = apply_filter_adjoint(&g, &resid);
        for z in out.as_mut_slice() {
            *z *= -2.0;
        }
        out
    };
    let h = 1e-5;
    let dir = random_spectrogram(cfg, 200, 65);
    let mut plus = s.clone();
    plus.axpy(Complex64::new(h, 0.0), &dir);
    let mut minus = s.clone();
    minus.axpy(Complex64::new(-h, 0.0), &dir);
    let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
    let analytic = grad.dot_re(&dir);
    assert!(
        (fd - analytic).abs() <= 1e-6 * fd.abs().max(analytic.abs()),
        "fd {fd} vs analytic {analytic}"
    );
}
