//! Property-based invariants.

use genprior::analysis::{contraction_fit, cosine_similarity};
use genprior::genmodel::{Activation, GenerativeDecoder};
use genprior::linalg;
use genprior::measurement::{corrupt, LinkModel};
use genprior::projection::{project, ProjectionConfig};
use genprior::seed::derive_seed;
use genprior::sensing::{SensingKind, SensingOperator};
use genprior::solvers::{mu1_of, mu2_of, Trajectory};
use proptest::prelude::*;

fn vec_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cosine_sign_scaling(a in vec_strategy(6), b in vec_strategy(6), al in 0.1f64..5.0, be in -5.0f64..-0.1) {
        prop_assume!(linalg::norm(&a) > 1e-3 && linalg::norm(&b) > 1e-3);
        let c = cosine_similarity(&a, &b).unwrap();
        let sa = linalg::scale(al, &a);
        let sb = linalg::scale(be, &b);
        prop_assert!((cosine_similarity(&sa, &sb).unwrap() + c).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&c));
    }

    #[test]
    fn clip_lands_in_ball(z in vec_strategy(5), r in 0.1f64..4.0) {
        let mut c = z.clone();
        let clipped = linalg::clip_to_ball(&mut c, r);
        prop_assert!(linalg::norm(&c) <= r * (1.0 + 1e-12));
        prop_assert_eq!(clipped, linalg::norm(&z) > r);
        if !clipped {
            prop_assert_eq!(c, z);
        }
    }

    #[test]
    fn corruption_has_exact_norm(y in vec_strategy(12), tau in 0.0f64..3.0, seed in any::<u64>()) {
        let yt = corrupt(&y, tau, seed).unwrap();
        let want = tau * (12f64).sqrt();
        prop_assert!((linalg::dist(&yt, &y) - want).abs() <= 1e-10 * want.max(1.0));
    }

    #[test]
    fn derived_seeds_differ_by_label_and_index(master in any::<u64>(), i in 0u64..1000) {
        prop_assert_ne!(derive_seed(master, "a", i), derive_seed(master, "b", i));
        prop_assert_ne!(derive_seed(master, "a", i), derive_seed(master, "a", i + 1));
        prop_assert_eq!(derive_seed(master, "a", i), derive_seed(master, "a", i));
    }

    #[test]
    fn operator_is_linear(x in vec_strategy(16), w in vec_strategy(16), a in -3.0f64..3.0, seed in 0u64..50) {
        for kind in [SensingKind::DenseGaussian, SensingKind::PartialCirculant] {
            let op = SensingOperator::new(kind, 9, 16, seed).unwrap();
            let comb: Vec<f64> = x.iter().zip(&w).map(|(p, q)| a * p + q).collect();
            let lhs = op.apply(&comb).unwrap();
            let ax = op.apply(&x).unwrap();
            let aw = op.apply(&w).unwrap();
            for j in 0..9 {
                prop_assert!((lhs[j] - (a * ax[j] + aw[j])).abs() <= 1e-9 * (1.0 + lhs[j].abs()));
            }
        }
    }

    #[test]
    fn projection_stays_in_range_and_ball(x in vec_strategy(10), seed in 0u64..1000) {
        let dec = GenerativeDecoder::new(3, 3, &[8], 10, 1.5, Activation::Tanh, 1.0).unwrap();
        let cfg = ProjectionConfig { steps: 40, restarts: 2, ..ProjectionConfig::small_decoder() };
        let res = project(&dec, &x, &cfg, seed).unwrap();
        prop_assert!(linalg::norm(&res.z_hat) <= 1.5 * (1.0 + 1e-12));
        prop_assert!(linalg::dist(&dec.forward(&res.z_hat).unwrap(), &res.x_hat) <= 1e-12);
        prop_assert!((linalg::dist(&res.x_hat, &x) - res.residual).abs() <= 1e-12 * (1.0 + res.residual));
    }

    #[test]
    fn contraction_factors_in_range(nu in 0.0f64..2.0, eps in 0.0f64..0.99) {
        let m1 = mu1_of(nu, eps).unwrap();
        prop_assert!(m1 >= eps * nu.min(1.0) - 1e-15);
        prop_assert!(m1 >= (1.0 - nu).abs() - 1e-15);
        let m2 = mu2_of(0.2, 1.5, 2.5, eps).unwrap();
        prop_assert!(m2 >= mu2_of(0.2, 1.5, 2.5, 0.0).unwrap() - 1e-15);
    }

    #[test]
    fn geometric_trajectories_fit_exactly(rho in 0.05f64..0.95, e0 in 0.1f64..10.0, len in 5usize..40) {
        let traj = Trajectory {
            error_to_target: (0..len).map(|t| e0 * rho.powi(t as i32)).collect(),
            ..Trajectory::default()
        };
        let (slope, _) = contraction_fit(&traj, 0.0).unwrap();
        prop_assert!((slope - rho.ln()).abs() <= 1e-9);
    }

    #[test]
    fn shifted_cosine_sandwich_pointwise(a in -50.0f64..50.0, b in -50.0f64..50.0) {
        let link = LinkModel::shifted_cosine();
        let fa = link.eval(a, None).unwrap();
        let fb = link.eval(b, None).unwrap();
        let d = (a - b).abs();
        prop_assert!((fa - fb).abs() >= 1.5 * d - 1e-12);
        prop_assert!((fa - fb).abs() <= 2.5 * d + 1e-12);
    }
}
