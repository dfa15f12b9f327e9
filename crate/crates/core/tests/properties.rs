use proptest::prelude::*;
use qcinf_core::dilation_calculus::{dilation, dilation_gradient, metric};
use qcinf_core::pde_residuals::{
    geometric_tangential, normal_residual, q_infinity_residual, tangential_residual, Jet2,
};
use qcinf_core::phase_analysis::classify_gradient;
use qcinf_core::sampling::{random_hessian, random_rotation, random_splus};
use qcinf_core::tensor_core::{Matrix, DEFAULT_TAU};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dims() -> impl Strategy<Value = (usize, usize)> {
    prop_oneof![Just((2, 2)), Just((3, 2)), Just((4, 2)), Just((3, 3)), Just((4, 3))]
}

fn splus(seed: u64, big: usize, n: usize) -> Matrix {
    random_splus(&mut ChaCha8Rng::seed_from_u64(seed), big, n, 1e4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dilation_is_at_least_n((big, n) in dims(), seed in any::<u64>()) {
        let p = splus(seed, big, n);
        prop_assert!(dilation(&p).unwrap() >= n as f64 * (1.0 - 1e-12));
    }

    #[test]
    fn dilation_is_scale_invariant((big, n) in dims(), seed in any::<u64>(), log_s in -3.0f64..3.0) {
        let p = splus(seed, big, n);
        let s = 10f64.powf(log_s);
        let (k, ks) = (dilation(&p).unwrap(), dilation(&p.scale(s)).unwrap());
        prop_assert!((k - ks).abs() <= 1e-10 * k);
    }

    #[test]
    fn euler_relation_for_degree_zero((big, n) in dims(), seed in any::<u64>()) {
        // K is homogeneous of degree 0, so K_P(P):P = 0.
        let p = splus(seed, big, n);
        let kp = dilation_gradient(&p).unwrap();
        prop_assert!(kp.frobenius_dot(&p).abs() <= 1e-10 * kp.norm() * p.norm());
    }

    #[test]
    fn dilation_is_orthogonally_invariant((big, n) in dims(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let p = splus(seed, big, n);
        let q = random_rotation(&mut rng, big);
        let r = random_rotation(&mut rng, n);
        let k = dilation(&p).unwrap();
        prop_assert!((dilation(&q.matmul(&p)).unwrap() - k).abs() <= 1e-10 * k);
        prop_assert!((dilation(&p.matmul(&r)).unwrap() - k).abs() <= 1e-10 * k);
        // K_P transforms equivariantly: K_P(QP) = Q K_P(P).
        let lhs = dilation_gradient(&q.matmul(&p)).unwrap();
        let rhs = q.matmul(&dilation_gradient(&p).unwrap());
        prop_assert!((&lhs - &rhs).max_abs() <= 1e-9 * rhs.norm().max(1.0));
    }

    #[test]
    fn labels_never_equal_one((big, n) in dims(), seed in any::<u64>()) {
        let p = splus(seed, big, n);
        let ph = classify_gradient(&p, DEFAULT_TAU).unwrap();
        prop_assert_ne!(ph.label, 1);
        let g = p.gram();
        prop_assert!(ph.spectrum.iter().sum::<f64>().abs() <= 1e-10 * g.norm());
    }

    #[test]
    fn conformality_label_matches_dilation_gap(n in 2usize..=3, seed in any::<u64>(), log_a in -5.0f64..-1.0) {
        // Near-conformal P = Q·diag(√(1 + xᵢ)) with Σxᵢ = 0.
        // With x = μ/mean(λ) and τ = 1e-3: label 0 ⇒ K − n ≤ n³τ², label > 0 ⇒ K − n ≥ nτ²/4.
        let tau = 1e-3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_rotation(&mut rng, n);
        let raw: Vec<f64> = (0..n).map(|_| rand::Rng::random::<f64>(&mut rng) - 0.5).collect();
        let mean = raw.iter().sum::<f64>() / n as f64;
        let a = 10f64.powf(log_a);
        let x: Vec<f64> = raw.iter().map(|r| a * (r - mean)).collect();
        let d: Vec<f64> = x.iter().map(|xi| (1.0 + xi).sqrt()).collect();
        let p = q.matmul(&Matrix::diag(&d));
        let gap = dilation(&p).unwrap() - n as f64;
        let ph = classify_gradient(&p, tau).unwrap();
        let nf = n as f64;
        if ph.label == 0 {
            prop_assert!(gap <= nf.powi(3) * tau * tau * 1.01, "gap {gap} for label 0");
        } else {
            prop_assert!(gap >= nf * tau * tau / 4.0, "gap {gap} for label {}", ph.label);
        }
    }

    #[test]
    fn tangential_and_geometric_forms_are_linked((big, n) in dims(), seed in any::<u64>()) {
        // K_P·DK = (2/det(g)^{1/n}) P g⁻¹ (S(g)·DK): both vanish together.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let du = random_splus(&mut rng, big, n, 1e4);
        let j = Jet2::new(vec![0.0; n], vec![0.0; big], du.clone(), random_hessian(&mut rng, big, n)).unwrap();
        let t = tangential_residual(&j).unwrap();
        let s = geometric_tangential(&j).unwrap();
        let m = metric(&du).unwrap();
        let pred = du.matmul(&m.g_inv).mat_vec(&s);
        let scale = 2.0 / m.det_root;
        let err = t.iter().zip(&pred).map(|(a, b)| (a - scale * b).abs()).fold(0.0, f64::max);
        let size = t.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-300);
        prop_assert!(err <= 1e-8 * size.max(1.0));
    }

    #[test]
    fn residual_bundle_splits_orthogonally((big, n) in dims(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let du = random_splus(&mut rng, big, n, 1e3);
        let j = Jet2::new(vec![0.0; n], vec![0.0; big], du.clone(), random_hessian(&mut rng, big, n)).unwrap();
        let b = q_infinity_residual(&j, DEFAULT_TAU).unwrap();
        let normal = normal_residual(&j, DEFAULT_TAU).unwrap();
        let dot: f64 = b.tangential.iter().zip(&normal).map(|(a, c)| a * c).sum();
        let scale = b.tangential.iter().map(|a| a * a).sum::<f64>().sqrt() * normal.iter().map(|a| a * a).sum::<f64>().sqrt();
        prop_assert!(dot.abs() <= 1e-8 * scale.max(1e-300));
    }
}
