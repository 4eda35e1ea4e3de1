use std::f64::consts::PI;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use spinid_core::analysis::lm::Model;
use spinid_core::analysis::models::{DecayingCosine, Exponential, Lorentzian};
use spinid_core::analysis::psd::fft_psd_padded;
use spinid_core::analysis::*;
use spinid_core::propagator::*;
use spinid_core::sequences::*;
use spinid_core::spin_model::*;
use spinid_core::trace::{SignalTrace, XKind};

fn grid(start: f64, step: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| start + step * i as f64).collect()
}

fn trace(x: Vec<f64>, kind: XKind, f: impl Fn(f64) -> f64) -> SignalTrace {
    let y = x.iter().map(|&v| f(v)).collect();
    SignalTrace::noiseless(x, y, kind).unwrap()
}

fn with_noise(t: &SignalTrace, sigma: f64, seed: u64) -> SignalTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, sigma).unwrap();
    let y = t.y.iter().map(|v| v + n.sample(&mut rng)).collect();
    SignalTrace::new(t.x.clone(), y, vec![sigma; t.len()], t.x_kind).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

// ---- analytic gradients ----

fn check_grad<M: Model>(m: &M, x: f64, p: &[f64]) -> std::result::Result<(), String> {
    let n = m.n_params();
    let mut g = vec![0.0; n];
    m.grad(x, p, &mut g);
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    for k in 0..n {
        // Richardson-extrapolated central difference, O(h⁴).
        let central = |h: f64| {
            let (mut pp, mut pm) = (p.to_vec(), p.to_vec());
            pp[k] += h;
            pm[k] -= h;
            (m.eval(x, &pp) - m.eval(x, &pm)) / (2.0 * h)
        };
        let h = 1e-4 * p[k].abs().max(1e-2);
        let fd = (4.0 * central(h / 2.0) - central(h)) / 3.0;
        if (g[k] - fd).abs() > 1e-6 * g[k].abs().max(norm).max(1e-12) {
            return Err(format!("param {k}: analytic {} vs fd {fd} at x={x}, p={p:?}", g[k]));
        }
    }
    Ok(())
}

const ENVELOPES: [Envelope; 3] = [Envelope::FreeT, Envelope::FixedT1e { t1e: 120.0 }, Envelope::Stretched];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lorentzian_gradient(
        x in 0.0..40.0f64, b in -1.0..1.0f64, g in 0.05..3.0f64,
        peaks in prop::collection::vec((-2.0..2.0f64, 0.0..40.0f64), 1..5),
    ) {
        let mut p = vec![b, g];
        for (a, f) in &peaks {
            p.push(*a);
            p.push(*f);
        }
        check_grad(&Lorentzian { n_peaks: peaks.len() }, x, &p).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn cosine_gradient(
        t in 0.0..100.0f64, a in -1.0..1.0f64, f in 0.001..0.5f64, phi in -3.0..3.0f64,
        k in 0.001..0.2f64, b in -0.01..0.01f64, c in -1.0..1.0f64, env in 0usize..3, lin in any::<bool>(),
    ) {
        let m = DecayingCosine { envelope: ENVELOPES[env], baseline: if lin { Baseline::Linear } else { Baseline::None } };
        let mut p = vec![a, f, phi, k];
        if lin {
            p.push(b);
            p.push(c);
        }
        check_grad(&m, t, &p).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn exponential_gradient(t in 0.0..5000.0f64, a in -1.0..1.0f64, k in 1e-5..0.05f64, b in -1.0..1.0f64) {
        check_grad(&Exponential, t, &[a, k, b]).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn normalization_is_scale_invariant(
        counts in prop::collection::vec((50.0..150.0f64, 50.0..150.0f64, 120.0..150.0f64, 60.0..90.0f64), 3..20),
        scale in 0.01..100.0f64,
    ) {
        let x: Vec<f64> = (0..counts.len()).map(|i| i as f64).collect();
        let col = |k: usize, s: f64| counts.iter().map(|c| s * [c.0, c.1, c.2, c.3][k]).collect::<Vec<f64>>();
        let a = normalize_differential(x.clone(), XKind::Time, &col(0, 1.0), &col(1, 1.0), &col(2, 1.0), &col(3, 1.0)).unwrap();
        let b = normalize_differential(x, XKind::Time, &col(0, scale), &col(1, scale), &col(2, scale), &col(3, scale)).unwrap();
        for i in 0..a.len() {
            prop_assert!((a.y[i] - b.y[i]).abs() <= 1e-12 * a.y[i].abs().max(1.0));
            prop_assert!((a.sigma[i] - b.sigma[i]).abs() <= 1e-12 * a.sigma[i].max(1e-3));
        }
    }
}

#[test]
fn single_peak_model_matches_printed_form_bitwise() {
    let m = Lorentzian { n_peaks: 1 };
    let (b, g, a, f) = (0.13, 0.4, -0.8, 11.0);
    for x in grid(5.0, 0.037, 300) {
        let g2 = g * g;
        let dx = x - f;
        let single = b + a * g2 / (g2 + dx * dx);
        assert_eq!(m.eval(x, &[b, g, a, f]).to_bits(), single.to_bits());
    }
}

// ---- noiseless round trips ----

#[test]
fn lorentzian_round_trip() {
    let t = trace(grid(8.0, 0.02, 301), XKind::Frequency, |x| 0.16 / (0.16 + (x - 11.0).powi(2)));
    let r = fit_lorentzian(&t, 1, None).unwrap();
    for (name, v) in [("a1", 1.0), ("b", 0.0), ("gamma", 0.4), ("f1", 11.0)] {
        assert!((r.value(name).unwrap() - v).abs() < 1e-6, "{name} = {}", r.value(name).unwrap());
    }
    assert_eq!(r.hwhm, Some(r.value("gamma").unwrap()));
}

#[test]
fn multi_lorentzian_round_trip_sorted_output() {
    let peaks = [(-0.3, 14.7), (-0.5, 11.7), (-0.2, 4.4)];
    let g: f64 = 0.35;
    let t = trace(grid(2.0, 0.02, 801), XKind::Frequency, |x| {
        0.5 + peaks.iter().map(|(a, f)| a * g * g / (g * g + (x - f).powi(2))).sum::<f64>()
    });
    let r = fit_lorentzian(&t, 3, None).unwrap();
    let mut want = peaks.to_vec();
    want.sort_by(|a, b| a.1.total_cmp(&b.1));
    for (i, (a, f)) in want.iter().enumerate() {
        assert!((r.value(&format!("f{}", i + 1)).unwrap() - f).abs() < 1e-6);
        assert!((r.value(&format!("a{}", i + 1)).unwrap() - a).abs() < 1e-6);
    }
    assert!((r.value("gamma").unwrap() - g).abs() < 1e-6);
}

#[test]
fn cosine_round_trip_all_envelopes() {
    for env in ENVELOPES {
        for baseline in [Baseline::None, Baseline::Linear] {
            let m = DecayingCosine { envelope: env, baseline };
            let mut p = vec![0.4, 0.07, 0.3, 1.0 / 30.0];
            if baseline == Baseline::Linear {
                p.extend([-1e-3, 0.2]);
            }
            let t = trace(grid(0.0, 0.2, 200), XKind::Time, |t| m.eval(t, &p));
            let r = fit_decaying_cosine(&t, CosineOptions { envelope: env, baseline, freq_guess: None }).unwrap();
            assert!((r.value("f").unwrap() - 0.07).abs() < 1e-6, "{env:?} {baseline:?}");
            assert!((r.value("omega").unwrap() - 2.0 * PI * 0.07).abs() < 1e-6);
            assert!((r.value("a").unwrap() - 0.4).abs() < 1e-6);
            assert!((r.value("phi").unwrap() - 0.3).abs() < 1e-6);
            let t_name = if matches!(env, Envelope::FixedT1e { .. }) { "T2" } else { "T" };
            assert!(close(r.value(t_name).unwrap(), 30.0, 1e-6), "{env:?}: {t_name} = {}", r.value(t_name).unwrap());
            if baseline == Baseline::Linear {
                assert!((r.value("b").unwrap() + 1e-3).abs() < 1e-6);
                assert!((r.value("c").unwrap() - 0.2).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn exponential_round_trip() {
    let t = trace(grid(0.0, 50.0, 80), XKind::Time, |t| 0.3 * (-t / 900.0).exp() + 0.05);
    let r = fit_exponential(&t).unwrap();
    assert!(close(r.value("T").unwrap(), 900.0, 1e-6));
    assert!((r.value("a0").unwrap() - 0.3).abs() < 1e-6);
    assert!((r.value("b0").unwrap() - 0.05).abs() < 1e-6);
    assert!(r.flags.is_empty());
}

#[test]
fn flat_trace_reports_no_decay() {
    let t = with_noise(&trace(grid(0.0, 50.0, 40), XKind::Time, |_| 0.2), 0.01, 5);
    let r = fit_exponential(&t).unwrap();
    assert!(r.flags.iter().any(|f| f == NO_DECAY_FLAG));
    assert!(r.value("T").unwrap().is_infinite());
}

#[test]
fn covariance_is_symmetric_psd_and_matches_sigmas() {
    let t = with_noise(&trace(grid(0.0, 0.5, 120), XKind::Time, |t| 0.4 * (2.0 * PI * 0.05 * t).cos() * (-t / 40.0).exp()), 0.02, 9);
    let r = fit_decaying_cosine(&t, CosineOptions::default()).unwrap();
    let n = r.covariance.len();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| r.covariance[i][j]);
    assert!((&m - m.transpose()).abs().max() <= 1e-12 * m.abs().max());
    assert!(m.symmetric_eigenvalues().min() >= -1e-12 * m.abs().max());
    for (i, p) in r.params.iter().enumerate() {
        assert!((p.sigma - r.covariance[i][i].max(0.0).sqrt()).abs() <= 1e-15 * p.sigma.max(1.0));
    }
}

#[test]
fn parameter_errors_scale_with_noise() {
    let clean = trace(grid(0.0, 0.5, 120), XKind::Time, |t| 0.4 * (2.0 * PI * 0.05 * t + 0.2).cos() * (-t / 40.0).exp());
    let noise = with_noise(&SignalTrace::noiseless(clean.x.clone(), vec![0.0; clean.len()], XKind::Time).unwrap(), 1.0, 17);
    let err = |s: f64| {
        let y = clean.y.iter().zip(&noise.y).map(|(c, n)| c + s * n).collect();
        let t = SignalTrace::new(clean.x.clone(), y, vec![s; clean.len()], XKind::Time).unwrap();
        let r = fit_decaying_cosine(&t, CosineOptions::default()).unwrap();
        (r.value("f").unwrap() - 0.05).abs() + (r.value("T").unwrap() - 40.0).abs() / 40.0
    };
    let (e1, e2, e3) = (err(1e-2), err(1e-3), err(1e-4));
    assert!(e2 < e1 && e3 < e2);
    let ratio = e2 / e1;
    assert!((0.05..0.2).contains(&ratio), "error ratio {ratio}");
}

// ---- differential normalization ----

#[test]
fn poisson_normalization_matches_resampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 60;
    let (m0, m1) = (4000.0, 2800.0);
    let true_y: Vec<f64> = (0..n).map(|i| 0.5 + 0.5 * (2.0 * PI * i as f64 / 20.0).cos()).collect();
    let trials = 2000;
    let mut ys = vec![Vec::with_capacity(trials); n];
    let mut sig = 0.0;
    for _ in 0..trials {
        // R± straddle the references symmetrically so their per-point variance equals the reference variance.
        let draw = |rng: &mut ChaCha8Rng, mean: f64| Poisson::new(mean).unwrap().sample(rng);
        let mut rp = Vec::with_capacity(n);
        let mut rm = Vec::with_capacity(n);
        for y in &true_y {
            let mid = 0.5 * (m0 + m1);
            let half = 0.5 * y * (m0 - m1);
            rp.push(draw(&mut rng, mid + half));
            rm.push(draw(&mut rng, mid - half));
        }
        let r0: Vec<f64> = (0..n).map(|_| draw(&mut rng, m0)).collect();
        let r1: Vec<f64> = (0..n).map(|_| draw(&mut rng, m1)).collect();
        let t = normalize_differential((0..n).map(|i| i as f64).collect(), XKind::Time, &rp, &rm, &r0, &r1).unwrap();
        for i in 0..n {
            ys[i].push(t.y[i]);
        }
        sig += t.sigma[0] / trials as f64;
    }
    let mut spread = 0.0;
    for i in 0..n {
        let mean = ys[i].iter().sum::<f64>() / trials as f64;
        assert!((mean - true_y[i]).abs() < 0.05 * true_y[i].max(0.1), "point {i}: {mean} vs {}", true_y[i]);
        spread += (ys[i].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials as f64 - 1.0)).sqrt() / n as f64;
    }
    assert!((sig - spread).abs() < 0.05 * spread, "sigma_y {sig} vs resampled spread {spread}");
}

// ---- PSD ----

#[test]
fn psd_peak_and_background_invariance() {
    let t = trace(grid(0.0, 0.25, 400), XKind::Time, |t| (2.0 * PI * 0.07 * t).cos());
    let argmax = |s: &SignalTrace| s.x[(0..s.len()).max_by(|&a, &b| s.y[a].total_cmp(&s.y[b])).unwrap()];
    let psd = fft_psd(&t, Background::None).unwrap();
    let df = psd.x[1] - psd.x[0];
    assert!((argmax(&psd) - 0.07).abs() <= df);
    let sloped = trace(t.x.clone(), XKind::Time, |x| (2.0 * PI * 0.07 * x).cos() + 0.01 * x - 0.3);
    let psd2 = fft_psd(&sloped, Background::LinearSubtract).unwrap();
    assert_eq!(argmax(&psd), argmax(&psd2));
}

#[test]
fn equal_coupling_spectra_overlap() {
    let taus = grid(0.0, 0.5, 121);
    let sim = |h: HyperfineTensor, carrier: f64| {
        let seq = make_zf_deer(&ZfDeerMode::TimeSweep { carrier, taus: taus.clone() }, &DeerOptions::default()).unwrap();
        run_sequence(&seq, &SpinSystem::new(42.577, h, 140.0), 0.0, &Default::default(), Default::default()).unwrap()
    };
    let a = fft_psd_padded(&sim(HyperfineTensor::uniaxial(39.0, 25.0, 0.0, 0.0), 32.0), Background::None, 4).unwrap();
    let b = fft_psd_padded(&sim(HyperfineTensor::uniaxial(16.0, -6.0, 0.0, 0.0), 5.0), Background::None, 4).unwrap();
    let gap = a.y.iter().zip(&b.y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    assert!(gap < 0.1, "max gap {gap}");
}

// ---- forward-simulated spectra and traces ----

/// Four zero-field defects whose observable lines land on eight distinct frequencies.
fn zf_defects() -> Vec<SpinSystem> {
    [(39.0, 25.0, 140.0), (16.0, 6.0, 94.0), (17.4, 8.6, 120.0), (37.2, 6.8, 110.0)]
        .iter()
        .map(|&(a_par, a_perp, d)| SpinSystem::new(42.577, HyperfineTensor::uniaxial(a_par, a_perp, 0.0, 0.0), d))
        .collect()
}

#[test]
fn eight_peak_zero_field_spectrum_round_trip() {
    let systems = zf_defects();
    let mut lines: Vec<f64> = systems
        .iter()
        .flat_map(|s| zf_transitions(&s.hyperfine).into_iter().filter(|l| l.observable).map(|l| l.frequency))
        .collect();
    lines.sort_by(f64::total_cmp);
    assert_eq!(lines.len(), 8);
    let freqs = grid(3.0, 0.02, 1551);
    let opts = DeerOptions { defect_omega: [0.2, 0.0, 0.0], ..Default::default() };
    let seq = make_zf_deer(&ZfDeerMode::FrequencySweep { tau: 10.0, freqs }, &opts).unwrap();
    let t = run_sequence_multi(&seq, &systems, 0.0, &Default::default(), Default::default()).unwrap();
    let r = fit_lorentzian(&t, 8, None).unwrap();
    let g = r.value("gamma").unwrap().abs();
    for (i, l) in lines.iter().enumerate() {
        let f = r.value(&format!("f{}", i + 1)).unwrap();
        assert!((f - l).abs() <= g, "line {l}: fitted {f}, gamma {g}");
    }
}

#[test]
fn coupling_traces_give_70_and_47_khz() {
    let taus = grid(0.0, 0.5, 121);
    for (h, carrier, d, want) in [
        (HyperfineTensor::uniaxial(39.0, 25.0, 0.0, 0.0), 32.0, 140.0, 0.070),
        (HyperfineTensor::uniaxial(16.0, 6.0, 0.0, 0.0), 11.0, 94.0, 0.047),
    ] {
        let seq = make_zf_deer(&ZfDeerMode::TimeSweep { carrier, taus: taus.clone() }, &DeerOptions::default()).unwrap();
        let dec = DecoherenceParams { t2_bath: Some(60.0), ..Default::default() };
        let t = run_sequence(&seq, &SpinSystem::new(42.577, h, d), 0.0, &dec, Default::default()).unwrap();
        let r = fit_decaying_cosine(&t, CosineOptions { baseline: Baseline::Linear, ..Default::default() }).unwrap();
        let f = r.value("f").unwrap();
        assert!((f - want).abs() < 0.02 * want, "fitted {f} MHz, expected {want}");
    }
}

#[test]
fn echo_t2_recovered_with_fixed_t1e() {
    // T1e from a noisy relaxation trace, then the echo fit with T1e held fixed.
    let t1e_true = 3000.0;
    let relax = with_noise(&trace(grid(0.0, 100.0, 60), XKind::Time, |t| 0.4 * (-t / t1e_true).exp() + 0.05), 0.004, 31);
    let t1 = fit_exponential(&relax).unwrap();
    let t1e = t1.value("T").unwrap();
    assert!(close(t1e, t1e_true, 0.1));

    // Phase-cycled pair: the difference cancels the non-oscillating, equally decaying offset.
    let sys = SpinSystem::new(-4.316, HyperfineTensor::uniaxial(16.0, 6.0, 128.2, 45.0), 94.0);
    let ls = level_spectrum(&sys, 365.0).unwrap();
    let dec = DecoherenceParams { t1e: Some(t1e_true), t2_bath: Some(1000.0), t2_star_bath: None };
    let taus = grid(0.0, 25.0, 81);
    let run = |final_phase: f64| {
        let opts = NeetrOptions {
            rf_carrier: ls.nuclear_transitions_exact[1],
            f_mod: 5.0,
            final_phase,
            ..Default::default()
        };
        run_sequence(&make_neetr(NeetrMode::Echo, &taus, &opts).unwrap(), &sys, 365.0, &dec, Default::default()).unwrap()
    };
    let (a, b) = (run(0.0), run(PI));
    let diff = trace(taus.clone(), XKind::Time, |_| 0.0);
    let diff = SignalTrace { y: a.y.iter().zip(&b.y).map(|(p, q)| p - q).collect(), ..diff };
    let echo = with_noise(&diff, 0.005, 32);
    let r = fit_decaying_cosine(&echo, CosineOptions { envelope: Envelope::FixedT1e { t1e }, ..Default::default() })
        .unwrap();
    let t2 = r.value("T2").unwrap();
    assert!(close(t2, 1000.0, 0.1), "T2 = {t2}");
}

#[test]
fn t1e_round_trip_at_snr_20() {
    let (a0, t1e) = (0.4, 2000.0);
    let mut rel = Vec::new();
    for seed in 0..50 {
        let t = with_noise(&trace(grid(0.0, 100.0, 80), XKind::Time, |t| a0 * (-t / t1e).exp() + 0.1), a0 / 20.0, seed);
        let r = fit_exponential(&t).unwrap();
        rel.push((r.value("T").unwrap() - t1e) / t1e);
    }
    let mean = rel.iter().sum::<f64>() / rel.len() as f64;
    assert!(mean.abs() < 0.02, "mean relative T1e error {mean}");
}
