mod common;

use std::f64::consts::TAU;

use common::{empty_cavity, params, rel};
use ndarray::Array2;
use num_complex::Complex64 as C64;
use polqed::model::{build_hamiltonian, vectorize};
use polqed::observables::{
    convolve_detector, g2_lowdrive_check, g2_zero, photon_number_dist, transmission, CorrelationTrace, PhotonMoments,
};
use polqed::solver::{steady_state_factorized, steady_state_product};
use polqed::sweeps::{calibrate_eta, empty_cavity_nbar, solve_point};
use polqed::{build_liouvillian, steady_state, JonesVector, Operator, SystemParams};
use proptest::prelude::*;

fn random_operator(dim: usize, seed: &[f64]) -> Operator {
    let a = Array2::from_shape_fn((dim, dim), |(r, c)| {
        let k = r * dim + c;
        C64::new(
            seed[k % seed.len()] * (k as f64 + 0.5).sin(),
            seed[(k + 1) % seed.len()] * (k as f64).cos(),
        )
    });
    Operator::from_array(a).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hamiltonian_is_hermitian(p in params(2..=4)) {
        let h = build_hamiltonian(&p).unwrap();
        prop_assert!(h.hermiticity_defect() < 1e-12 * h.max_abs().max(1.0));
    }

    #[test]
    fn generator_preserves_trace_and_hermiticity(
        p in params(2..=3),
        seed in proptest::collection::vec(-1.0..1.0f64, 7),
    ) {
        let l = build_liouvillian(&p).unwrap();
        let x = random_operator(l.dim(), &seed);
        let lx = l.apply_to_operator(&x);
        prop_assert!(lx.trace().norm() < 1e-9 * lx.max_abs().max(1.0));
        let lxd = l.apply_to_operator(&x.adjoint());
        prop_assert!(lxd.max_abs_diff(&lx.adjoint()) < 1e-9 * lx.max_abs().max(1.0));
    }

    #[test]
    fn steady_states_are_physical(p in params(2..=4)) {
        let product = steady_state_product(&p).unwrap();
        let rho = product.to_density_matrix().unwrap();
        let r = rho.operator();
        prop_assert!((r.trace() - C64::new(1.0, 0.0)).norm() < 1e-10);
        prop_assert!(r.hermiticity_defect() < 1e-10);
        prop_assert!(rho.min_eigenvalue() > -1e-8);
    }

    #[test]
    fn factorized_state_matches_full_solve(p in params(2..=3)) {
        let full = steady_state(&build_liouvillian(&p).unwrap()).unwrap();
        let fact = steady_state_factorized(&p).unwrap();
        prop_assert!(full.residual < 1e-9 && fact.residual < 1e-9);
        let diff = full.rho.operator().max_abs_diff(fact.rho.operator());
        prop_assert!(diff < 1e-9, "max |Δρ| = {}", diff);
    }

    #[test]
    fn product_moments_match_full_state(p in params(2..=4), theta in -90.0..90.0f64) {
        let product = steady_state_product(&p).unwrap();
        let a = PhotonMoments::from_product(&product);
        let b = PhotonMoments::from_state(&product.to_density_matrix().unwrap());
        let jones = JonesVector::linear(theta);
        let (ta, tb) = (a.transmission(&jones), b.transmission(&jones));
        prop_assert!((ta - tb).abs() <= 1e-12 * tb.abs().max(1e-12), "{} vs {}", ta, tb);
        let (pa, pb) = (a.pair_intensity(&jones), b.pair_intensity(&jones));
        prop_assert!((pa - pb).abs() <= 1e-12 * pb.abs().max(1e-14));
    }

    #[test]
    fn empty_cavity_is_coherent(p in params(4..=4), theta in -90.0..90.0f64) {
        // Weak drive keeps the coherent state well inside the truncation.
        let p = SystemParams { eta: 0.05 * p.kappa, f_cav_x: 0.0, f_cav_y: 0.0, ..empty_cavity(&p) };
        let rho = steady_state_factorized(&p).unwrap().rho;
        let delta = TAU * p.f_laser;
        let nbar = p.eta * p.eta / (p.kappa * p.kappa + 4.0 * delta * delta);
        let co = transmission(&rho, &JonesVector::linear(p.theta_in));
        prop_assert!(rel(co, nbar) < 1e-6, "co-polarized {} vs {}", co, nbar);

        let jones = JonesVector::linear(theta);
        let t = transmission(&rho, &jones);
        let expected = nbar * (theta - p.theta_in).to_radians().cos().powi(2);
        prop_assert!((t - expected).abs() < 1e-6 * nbar);
        if expected > 0.1 * nbar {
            let g2 = g2_zero(&rho, &jones).unwrap();
            prop_assert!((g2 - 1.0).abs() < 1e-3, "g2 = {}", g2);
            let dist = photon_number_dist(&rho, theta);
            let mut poisson = (-t).exp();
            for n in 0..4 {
                prop_assert!((dist.get(n) - poisson).abs() < 1e-6, "P_{} = {} vs {}", n, dist.get(n), poisson);
                poisson *= t / (n + 1) as f64;
            }
        }
    }

    #[test]
    fn cross_polarized_empty_cavity_is_dark(p in params(4..=4)) {
        let p = SystemParams { eta: 0.05 * p.kappa, f_cav_x: 0.0, f_cav_y: 0.0, ..empty_cavity(&p) };
        let m = solve_point(&p).unwrap().moments;
        let co = m.transmission(&JonesVector::linear(p.theta_in));
        let cross = m.transmission(&JonesVector::linear(p.theta_in + 90.0));
        prop_assert!(cross <= 1e-9 * co, "cross {} co {}", cross, co);
    }

    #[test]
    fn g2_matches_photon_number_moments(p in params(3..=4), theta in -90.0..90.0f64) {
        let rho = steady_state_factorized(&p).unwrap().rho;
        let jones = JonesVector::linear(theta);
        prop_assume!(transmission(&rho, &jones) > 1e-8);
        let g2 = g2_zero(&rho, &jones).unwrap();
        let dist = photon_number_dist(&rho, theta);
        prop_assert!((dist.total() - 1.0).abs() < 1e-9);
        prop_assert!(rel(dist.g2_from_moments(), g2) < 1e-6, "{} vs {}", dist.g2_from_moments(), g2);
        prop_assert!(rel(dist.mean(), transmission(&rho, &jones)) < 1e-6);
    }

    #[test]
    fn low_drive_g2_matches_pair_probability(p in params(4..=4), theta in -90.0..90.0f64) {
        // Empty-cavity photon number 4e-4.
        let p = SystemParams { eta: 0.02 * p.kappa, ..p };
        let rho = steady_state_factorized(&p).unwrap().rho;
        let jones = JonesVector::linear(theta);
        let t = transmission(&rho, &jones);
        prop_assume!(t > 1e-3 * empty_cavity_nbar(&p));
        let g2 = g2_zero(&rho, &jones).unwrap();
        prop_assume!(g2 < 1e3);
        let est = g2_lowdrive_check(&photon_number_dist(&rho, theta)).unwrap();
        prop_assert!(rel(est, g2) < 0.05, "2P2/P1² = {} vs g2 = {}", est, g2);
    }

    #[test]
    fn polarizer_angle_is_pi_periodic(p in params(3..=3), theta in -90.0..90.0f64) {
        let m = solve_point(&p).unwrap().moments;
        let (a, b) = (JonesVector::linear(theta), JonesVector::linear(theta + 180.0));
        prop_assert!(rel(m.transmission(&b), m.transmission(&a)) < 1e-10 || m.transmission(&a) < 1e-15);
        if let (Ok(x), Ok(y)) = (m.g2(&a, 1e-12), m.g2(&b, 1e-12)) {
            prop_assert!(rel(x, y) < 1e-9);
        }
    }

    #[test]
    fn gaussian_bunching_peak_convolves_analytically(
        amp in 0.5..50.0f64,
        width_ps in 30.0..400.0f64,
        jitter_ps in 20.0..600.0f64,
    ) {
        let s = width_ps * 1e-3;
        let tau: Vec<f64> = (0..=4000).map(|k| k as f64 * 1e-3).collect();
        let g2: Vec<f64> = tau.iter().map(|t| 1.0 + amp * (-t * t / (2.0 * s * s)).exp()).collect();
        let raw = CorrelationTrace::from_nonnegative(&tau, &g2);
        let conv = convolve_detector(&raw, jitter_ps).unwrap();
        let sd = jitter_ps * 1e-3 / (8.0 * 2f64.ln()).sqrt();
        let expected = 1.0 + amp * s / (s * s + sd * sd).sqrt();
        prop_assert!(rel(conv.peak(), expected) < 2e-3, "{} vs {}", conv.peak(), expected);
        prop_assert!(conv.peak() <= raw.peak());
    }

    #[test]
    fn calibrated_drive_reaches_target_photon_number(kappa in 20.0..900.0f64, nbar in 1e-4..0.01f64) {
        let p = SystemParams {
            kappa,
            eta: calibrate_eta(kappa, nbar),
            f_laser: 0.0,
            n_fock: 5,
            ..empty_cavity(&SystemParams::qd_b())
        };
        let m = solve_point(&p).unwrap().moments;
        prop_assert!(rel(m.total_intensity(), nbar) < 1e-6, "{} vs {}", m.total_intensity(), nbar);
    }
}

#[test]
fn vectorization_matches_column_stacking() {
    let x = random_operator(3, &[0.3, -0.7, 0.2]);
    let v = vectorize(&x);
    for c in 0..3 {
        for r in 0..3 {
            assert_eq!(v[c * 3 + r], x.get(r, c));
        }
    }
}
