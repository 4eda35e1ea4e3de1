use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spinid_core::spin_model::*;

fn draw_system(rng: &mut ChaCha8Rng) -> (SpinSystem, f64) {
    let sign = |r: &mut ChaCha8Rng| if r.random_bool(0.5) { 1.0 } else { -1.0 };
    let a_par = sign(rng) * rng.random_range(5.0..25.0);
    let a_perp = sign(rng) * rng.random_range(5.0..25.0);
    let h = HyperfineTensor::uniaxial(a_par, a_perp, rng.random_range(0.0..180.0), rng.random_range(-179.0..180.0));
    let gamma_n = sign(rng) * rng.random_range(0.5..43.0);
    let b0 = rng.random_range(250.0..1000.0);
    (SpinSystem::new(gamma_n, h, 0.0), b0)
}

#[test]
fn closed_form_levels_match_diagonalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let (sys, b0) = draw_system(&mut rng);
        let ls = level_spectrum(&sys, b0).unwrap();
        let mut closed = ls.eps.to_vec();
        closed.sort_by(f64::total_cmp);
        let brute = secular_eigenvalues(&sys, b0).unwrap();
        for (a, b) in closed.iter().zip(&brute) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{closed:?} vs {brute:?}");
        }
    }
}

#[test]
fn first_order_nuclear_error_is_bounded_and_quadratic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut exponents = Vec::new();
    for _ in 0..1000 {
        let (sys, b0) = draw_system(&mut rng);
        let err = |s: &SpinSystem| {
            let ls = level_spectrum(s, b0).unwrap();
            let e = (0..2)
                .map(|k| (ls.nuclear_transitions[k] - ls.nuclear_transitions_exact[k]).abs())
                .fold(0.0, f64::max);
            let first = s.gamma_n.abs() * b0 * 1e-4;
            (e, first, ls.splitting)
        };
        let (e1, first, a) = err(&sys);
        assert!(e1 <= first + 1e-12, "error {e1} exceeds first-order term {first}");
        let mut half = sys.clone();
        half.gamma_n /= 2.0;
        let (e2, _, _) = err(&half);
        let g = sys.gamma_n.abs() * b0 * 1e-4;
        if g / a <= 0.05 && e2 > 1e-10 {
            exponents.push((e1 / e2).log2());
        }
    }
    assert!(exponents.len() >= 100, "only {} usable draws", exponents.len());
    for p in &exponents {
        assert!((p - 2.0).abs() < 0.15, "convergence order {p}");
    }
}

#[test]
fn gamma_sign_swaps_labels_only() {
    let h = HyperfineTensor::uniaxial(16.0, 6.0, 40.0, 10.0);
    let pos = level_spectrum(&SpinSystem::new(4.316, h, 0.0), 365.0).unwrap();
    let neg = level_spectrum(&SpinSystem::new(-4.316, h, 0.0), 365.0).unwrap();
    assert!(neg.labels_swapped && !pos.labels_swapped);
    for k in 0..2 {
        assert!((pos.nuclear_transitions[k] - neg.nuclear_transitions[k]).abs() < 1e-12);
    }
    assert!(neg.nuclear_transitions_exact[0] < neg.nuclear_transitions_exact[1]);
}

#[test]
fn zero_field_degenerate_rejected() {
    let sys = SpinSystem::new(42.577, HyperfineTensor::uniaxial(0.0, 0.0, 0.0, 0.0), 0.0);
    assert!(level_spectrum(&sys, 0.0).is_err());
    assert!(level_spectrum(&sys, -1.0).is_err());
}

#[test]
fn zero_field_lines_match_hamiltonian() {
    let h = HyperfineTensor { a_xx: 22.0, a_yy: 27.0, a_par: 39.0, theta_x: 0.0, phi_x: 0.0 };
    let mut e = spinid_core::linalg::eigvalsh(&zero_field_hamiltonian(&h)).unwrap();
    e.sort_by(f64::total_cmp);
    let mut diffs: Vec<f64> = Vec::new();
    for i in 0..4 {
        for j in i + 1..4 {
            diffs.push(e[j] - e[i]);
        }
    }
    for l in zf_catalog(&h) {
        assert!(diffs.iter().any(|d| (d - l.frequency).abs() < 1e-9), "{} at {} not a level gap", l.label, l.frequency);
    }
    let uni = zf_transitions(&HyperfineTensor::uniaxial(39.0, 25.0, 0.0, 0.0));
    let f: Vec<f64> = uni.iter().map(|l| l.frequency).collect();
    assert_eq!(f, vec![7.0, 32.0, 25.0]);
    assert!(!uni[2].observable);
}

#[test]
fn geomagnetic_budget() {
    let per_line = geomagnetic_uncertainty(0.5, GAMMA_E_FREE, 0.2).unwrap();
    assert!((per_line - 0.728).abs() < 1e-3);
    assert!((combined_component_uncertainty(per_line) - 1.03).abs() < 0.01);
}

proptest! {
    #[test]
    fn closed_form_matches_conjugation(
        a_par in -50.0..50.0f64, a_perp in -50.0..50.0f64,
        th in 0.0..180.0f64, ph in -180.0..180.0f64,
        tn in 0.0..180.0f64, pn in -180.0..180.0f64,
    ) {
        let probe = ProbeAxis { theta_nv: tn, phi_nv: pn };
        let h = HyperfineTensor::uniaxial(a_par, a_perp, th, ph);
        let a = secular_components_closed_form(a_par, a_perp, th, ph, probe);
        let b = secular_components_conjugation(&h, probe);
        for (x, y) in [(a.a_zx, b.a_zx), (a.a_zy, b.a_zy), (a.a_zz, b.a_zz)] {
            prop_assert!((x - y).abs() < 1e-9 * (1.0 + a_par.abs() + a_perp.abs()));
        }
    }

    #[test]
    fn splitting_lies_between_principal_values(
        a_par in -50.0..50.0f64, a_perp in -50.0..50.0f64,
        th in 0.0..180.0f64, ph in -180.0..180.0f64,
    ) {
        let s = secular_components_closed_form(a_par, a_perp, th, ph, ProbeAxis::default()).splitting();
        let lo = a_par.abs().min(a_perp.abs());
        let hi = a_par.abs().max(a_perp.abs());
        prop_assert!(s >= lo - 1e-9 && s <= hi + 1e-9);
    }

    #[test]
    fn rotation_is_orthogonal(a in -180.0..180.0f64, b in 0.0..180.0f64) {
        let r = rotation_matrix(a, b);
        let e = (r * r.transpose() - nalgebra::Matrix3::identity()).abs().max();
        prop_assert!(e < 1e-12);
    }
}
