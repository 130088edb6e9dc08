use ergolab_core::clt_lab::{fclt_covariance_test, select_regime, ui_diagnostic};
use ergolab_core::grid::Grid1D;
use ergolab_core::models::{CauchyParams, Diffusion1D, Model, Observable, Polynomial};
use ergolab_core::rates::{
    alpha_interp_exponent, hardy_constants, mixing_sandwich, rate_from_lyapunov, xi_from_wpi, Phi, WpiSpec,
};
use ergolab_core::sde::{run_ensemble, SimConfig};
use ergolab_core::stats::{ks_statistic, normal_cdf};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn xi_is_nonincreasing_in_t(d in 0.1f64..10.0, q in 0.2f64..3.0, t in 1.0f64..1e4, k in 1.01f64..10.0) {
        let spec = WpiSpec::power(d, q);
        // below β(1/2) log 2 there is no root
        prop_assume!(spec.eval(0.5) * 2f64.ln() <= t);
        let a = xi_from_wpi(&spec, t).unwrap().xi;
        let b = xi_from_wpi(&spec, k * t).unwrap().xi;
        prop_assert!(b <= a);
    }

    #[test]
    fn xi_solves_its_defining_inequality(d in 0.1f64..10.0, q in 0.2f64..3.0, t in 1.0f64..1e4) {
        let spec = WpiSpec::power(d, q);
        prop_assume!(spec.eval(0.5) * 2f64.ln() <= t);
        let x = xi_from_wpi(&spec, t).unwrap();
        if !x.at_floor {
            prop_assert!(spec.eval(x.xi) * (1.0 / x.xi).ln() <= t * (1.0 + 1e-9));
        }
    }

    #[test]
    fn sandwich_is_ordered_for_self_adjoint_rates(c in 0.01f64..5.0, p in 0.1f64..3.0, t in 0.0f64..100.0) {
        let alpha = move |s: f64| (1.0 + c * s).powf(-p);
        let s = mixing_sandwich(alpha, alpha, t).unwrap();
        prop_assert!(s.lower <= s.upper * (1.0 + 1e-12));
        prop_assert!(s.lower >= 0.0);
    }

    #[test]
    fn ui_table_is_monotone_in_m(seed in 0u64..1000, scale in 0.1f64..10.0) {
        let mut s = ergolab_core::rng::SeedStream::new(seed, 0);
        let xs: Vec<f64> = (0..500).map(|_| scale * s.normal()).collect();
        let ys: Vec<f64> = (0..500).map(|_| scale * s.uniform()).collect();
        let t = ui_diagnostic(&[1.0, 2.0], &[xs, ys], &[scale * scale, scale * scale], &[0.0, 0.5, 1.0, 2.0, 4.0]).unwrap();
        prop_assert!(t.monotone_in_m);
    }

    #[test]
    fn interp_exponent_is_continuous_at_two(r in 2.5f64..50.0) {
        let (c1, e1) = alpha_interp_exponent(2.0 - 1e-9, r).unwrap();
        let (c2, e2) = alpha_interp_exponent(2.0 + 1e-9, r).unwrap();
        prop_assert!((e1 - e2).abs() < 1e-6 && (c1 - c2).abs() < 1e-6);
    }

    #[test]
    fn polynomial_phi_rate_is_nonincreasing(k in 1.5f64..6.0, c in 0.1f64..5.0) {
        let ts: Vec<f64> = (0..=24).map(|i| 10f64.powf(i as f64 / 6.0 - 1.0)).collect();
        let env = rate_from_lyapunov(&Phi::polynomial(c, k), &ts).unwrap();
        prop_assert!(env.is_nonincreasing());
        // ψ(0) = 1/φ(1)
        prop_assert!(env.values.iter().all(|v| *v > 0.0 && *v <= 1.0 / c + 1e-9));
    }

    #[test]
    fn ks_statistic_lies_in_unit_interval(xs in prop::collection::vec(-10.0f64..10.0, 1..200)) {
        let d = ks_statistic(&xs, normal_cdf);
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn linear_variances_select_linear_regime(c in 0.1f64..100.0, beta in 1.5f64..4.0) {
        let ts = [1e2, 1e3, 1e4];
        let vs: Vec<f64> = ts.iter().map(|t| c * t).collect();
        let (_, regime) = select_regime(beta, &ts, &vs);
        prop_assert_eq!(regime, ergolab_core::clt_lab::Regime::Linear);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn hardy_b_is_below_big_b(alpha in 2.5f64..6.0, d in 0.5f64..4.0, q in 0.5f64..2.0) {
        let m = Diffusion1D::cauchy(CauchyParams::new(alpha, 0.0).unwrap());
        let g = Grid1D::symmetric(200.0, 20_001).unwrap();
        let hc = hardy_constants(&m, &WpiSpec::power(d, q), &g).unwrap();
        // β(u/4) ≥ β(u) for a nonincreasing rate
        prop_assert!(hc.b_plus <= hc.big_b_plus * (1.0 + 1e-12));
        prop_assert!(hc.b_minus <= hc.big_b_minus * (1.0 + 1e-12));
    }

    #[test]
    fn fclt_matrix_is_symmetric_with_unit_diagonal(seed in 0u64..100) {
        let cfg = SimConfig::new(0.05, 4.0, 200, seed).with_checkpoints(vec![1.0, 2.0, 4.0]);
        let ens = run_ensemble(&Model::Diffusion(Diffusion1D::ou()), &Observable::coordinate(0), &cfg).unwrap();
        let r = fclt_covariance_test(&ens, &[1.0, 2.0, 4.0]).unwrap();
        for i in 0..3 {
            prop_assert_eq!(r.correlation[i][i], 1.0);
            for j in 0..3 {
                prop_assert!((r.correlation[i][j] - r.correlation[j][i]).abs() < 1e-12);
                prop_assert!((r.target[i][j] - r.target[j][i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn generator_of_x_squared_is_bounded(beta in 0.0f64..3.0) {
        let m = Diffusion1D::cauchy(CauchyParams::new(3.0, beta).unwrap()).with_domain(-400.0, 400.0);
        let f = Observable::generator_of(&m, Polynomial::monomial(2));
        // |L(x²)| = |2 + 2x b(x)| ≤ 2 + 2α + 4β
        for x in [-300.0, -3.0, 0.0, 0.7, 40.0] {
            prop_assert!(f.eval1(x).abs() <= 2.0 + 6.0 + 4.0 * beta + 1e-9);
        }
    }
}
