mod oracles;

use pcgap::gap_analysis::{
    compression_direction_deg, delta_gap, deterministic_grid, find_bifurcation, ib_sweep, linear_grid_sweep,
    measure_robustness, second_derivative_at_zero, verify_counterexample, ParamPoint, ETA0, IB_BETAS,
};
use pcgap::lingauss::solve_covariance;
use pcgap::risk::{acute_angle_deg, Objective, RiskLandscape};
use proptest::prelude::*;

#[test]
fn diagonal_delta_has_closed_form() {
    let p = ParamPoint::new(0.5, 0.0, 0.7, 0.2, 0.1);
    let [s11, _, _] = oracles::covariance_2d_by_hand(0.5, 0.0, 0.7, 0.2, 0.1);
    let d = delta_gap(&p).unwrap();
    assert!((d - s11 * (0.2 - 0.1)).abs() < 1e-14);
    assert!(d > 0.0);
}

#[test]
fn counterexample_quartet() {
    let r = verify_counterexample(&ETA0).unwrap();
    assert!((r.s11 - 2.312).abs() <= 1e-3 && (r.s12 + 2.342).abs() <= 1e-3 && (r.s22 - 2.525).abs() <= 1e-3);
    assert!((r.r_nz - 0.174).abs() <= 1e-3 && (r.r_env - 0.100).abs() <= 1e-3 && (r.r_star - 0.074).abs() <= 1e-3);
    assert!((r.theta_star_deg - 43.7).abs() <= 0.1);
    assert!((r.ratio_nz_env - 1.74).abs() <= 0.01);
    assert!(r.nz_suboptimal && r.interior_optimum);
}

#[test]
fn robustness_near_a_tie_is_mixed() {
    let tie = ParamPoint::new(0.5, 0.0, 0.5, 0.1, 0.1);
    let r = measure_robustness(&tie, 0.05, 2000, 4).unwrap();
    assert!(r.fraction > 0.0 && r.fraction < 1.0, "{}", r.fraction);
    let full = measure_robustness(&ETA0, 0.01, 1000, 0).unwrap();
    assert_eq!(full.positive, 1000);
}

#[test]
fn bifurcation_sign_change_and_endpoints() {
    let b = find_bifurcation(&ETA0, -0.9, 0.0, 64).unwrap();
    assert!(b.c_star > -0.9 && b.c_star < 0.0);
    assert!(b.bracket.1 - b.bracket.0 < 1e-8);
    let lo = second_derivative_at_zero(&ETA0.with_c(b.bracket.0)).unwrap();
    let hi = second_derivative_at_zero(&ETA0.with_c(b.bracket.1)).unwrap();
    assert!(lo.signum() != hi.signum(), "{lo} {hi}");
    let at = |c: f64| verify_counterexample(&ETA0.with_c(c)).unwrap().theta_star_deg;
    assert_eq!(acute_angle_deg(at(0.0).to_radians()), 0.0);
    assert!((at(-0.9) - 43.7).abs() <= 0.1);
    // below c* the system readout is no longer a local minimum
    for &(c, d2) in &b.second_derivative {
        if c < b.bracket.0 {
            assert!(d2 < 0.0, "c {c}: {d2}");
            let theta = b.theta_star_path.iter().find(|t| t.0 == c).unwrap().1;
            assert!(acute_angle_deg(theta.to_radians()) > 0.0);
        }
    }
}

#[test]
fn ib_keeps_away_from_the_system_axis_on_counterexample() {
    for pt in ib_sweep(&ETA0, &IB_BETAS).unwrap() {
        assert!(pt.nz_distance_deg() > 0.5, "beta {}: {}", pt.beta, pt.nz_distance_deg());
    }
    assert!((compression_direction_deg(&ETA0).unwrap() - 43.7).abs() <= 0.3);
}

#[test]
fn ib_zero_beta_is_latent_risk() {
    let spec = ETA0.spec().unwrap();
    let cov = solve_covariance(&spec).unwrap();
    let land = RiskLandscape::new(&spec, &cov).unwrap();
    for k in 0..50 {
        let t = k as f64 * 0.07;
        let a = land.at_angle(t, Objective::Latent).unwrap();
        let b = land.at_angle(t, Objective::Ib { beta: 0.0 }).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn ib_minimizer_matches_brute_force() {
    for p in [ETA0, ParamPoint::new(0.3, 0.6, 0.9, 0.05, 0.1), ParamPoint::new(0.9, -0.3, 0.5, 0.05, 0.1)] {
        let spec = p.spec().unwrap();
        let cov = solve_covariance(&spec).unwrap();
        let land = RiskLandscape::new(&spec, &cov).unwrap();
        for pt in ib_sweep(&p, &IB_BETAS).unwrap() {
            let obj = Objective::Ib { beta: pt.beta };
            let (_, best) = oracles::angular_brute_force(|t| land.at_angle(t, obj).unwrap(), 20_000);
            assert!(pt.ib_value <= best + 1e-12, "{p:?} beta {}", pt.beta);
        }
    }
}

#[test]
fn grid_counts() {
    let res = linear_grid_sweep().unwrap();
    assert_eq!(res.reports.len(), 160);
    assert_eq!(deterministic_grid().len(), 160);
    let diagonal: Vec<_> = res.reports.iter().filter(|r| r.point.c == 0.0).collect();
    let coupled: Vec<_> = res.reports.iter().filter(|r| r.point.c != 0.0).collect();
    assert_eq!(diagonal.len(), 40);
    assert!(diagonal.iter().all(|r| r.nz_optimal && r.fidelity == 1.0));
    assert!(coupled.iter().all(|r| !r.nz_optimal && r.fidelity < 1.0));
    assert_eq!(res.summary.n_nz_optimal, 40);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn delta_sign_tracks_risk_ordering(
        a_s in -0.95f64..0.95,
        c in -1.5f64..1.5,
        a_e in -0.95f64..0.95,
        q_s in 0.01f64..0.5,
        q_e in 0.01f64..0.5,
    ) {
        let p = ParamPoint::new(a_s, c, a_e, q_s, q_e);
        let r = verify_counterexample(&p).unwrap();
        prop_assume!((r.r_nz - r.r_env).abs() > 1e-9 * (1.0 + r.r_nz));
        // Δ = Σ11 (R_NZ − R_env) with R_env = q_e in this family
        prop_assert!((r.delta - r.s11 * (r.r_nz - r.r_env)).abs() < 1e-9 * (1.0 + r.delta.abs()));
        prop_assert_eq!(r.delta > 0.0, r.nz_suboptimal);
    }

    #[test]
    fn robustness_fraction_is_a_fraction(seed in any::<u64>()) {
        let r = measure_robustness(&ETA0, 0.2, 50, seed).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.fraction));
        prop_assert_eq!(r.n_samples, 50);
    }
}
