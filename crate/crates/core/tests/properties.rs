//! Cross-module invariants as property tests.

use std::sync::Arc;

use ndarray::Array2;
use ntk_asgd::activation::ActivationSpec;
use ntk_asgd::kernel::{degree_of_freedom, gram_matrix, kernel_eval, Component, KernelSpec};
use ntk_asgd::model::{feature_map, forward, param_gradient, symmetric_init};
use ntk_asgd::numerics::{gauss_jacobi_rule, gegenbauer_eval, multiplicity, sample_sphere, streams, sym_eigen, weight_total, SeededRng};
use ntk_asgd::source::{source_norm_report, TargetFunction};
use ntk_asgd::trainer::{asgd_kernel, asgd_network, SampleStream, TrainConfig};
use proptest::prelude::*;
use rand::Rng;

fn smooth_activation(idx: usize, s: f64) -> ActivationSpec {
    match idx {
        0 => ActivationSpec::swish(s).unwrap(),
        1 => ActivationSpec::tanh(),
        _ => ActivationSpec::sigmoid(),
    }
}

fn unit(rng: &mut SeededRng, d: usize) -> Vec<f64> {
    sample_sphere(rng, d, 1).unwrap().row(0).to_vec()
}

#[test]
fn gegenbauer_orthogonality() {
    for d in 2..=10 {
        let rule = gauss_jacobi_rule(64, d).unwrap();
        for k in 0..=12 {
            for j in 0..=k {
                let v = rule.integrate(|t| gegenbauer_eval(k, d, t) * gegenbauer_eval(j, d, t));
                let want = if j == k { weight_total(d) / multiplicity(d, k) } else { 0.0 };
                assert!((v - want).abs() < 1e-8, "d={d} k={k} j={j}: {v} vs {want}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sphere_points_are_unit_and_reproducible(seed in any::<u64>(), d in 2usize..12, n in 1usize..50) {
        let a = sample_sphere(&mut SeededRng::new(seed, streams::PROPERTY), d, n).unwrap();
        let b = sample_sphere(&mut SeededRng::new(seed, streams::PROPERTY), d, n).unwrap();
        prop_assert_eq!(&a, &b);
        for row in a.rows() {
            prop_assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eigen_reconstruction(seed in any::<u64>(), n in 1usize..80) {
        let mut rng = SeededRng::new(seed, streams::PROPERTY);
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = rng.random_range(-1.0..1.0);
                a[[i, j]] = v;
                a[[j, i]] = v;
            }
        }
        let e = sym_eigen(&a).unwrap();
        prop_assert!(e.reconstruction_error(&a) <= 1e-8);
        prop_assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn activation_derivatives_match_differences(idx in 0usize..3, s in 0.5f64..20.0, u in -3.0f64..3.0) {
        let act = smooth_activation(idx, s);
        let h = 1e-5;
        let fd = (act.value(u + h) - act.value(u - h)) / (2.0 * h);
        prop_assert!((fd - act.grad(u)).abs() <= 1e-6 * act.grad(u).abs().max(1.0));
        let fd2 = (act.grad(u + h) - act.grad(u - h)) / (2.0 * h);
        let h2 = act.hess(u).unwrap();
        prop_assert!((fd2 - h2).abs() <= 1e-6 * h2.abs().max(1.0));
    }

    #[test]
    fn symmetric_init_is_zero(seed in any::<u64>(), half in 1usize..64, d in 2usize..8, r in 0.01f64..3.0, gamma in 0.0f64..20.0) {
        let mut rng = SeededRng::new(seed, streams::INIT);
        let p = symmetric_init(&mut rng, 2 * half, d, r, gamma).unwrap();
        let act = ActivationSpec::swish(5.0).unwrap();
        for _ in 0..20 {
            let x = unit(&mut rng, d);
            prop_assert!(forward(&p, &act, &x).unwrap().abs() < 1e-12);
            prop_assert!(forward(&p, &ActivationSpec::relu(), &x).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn feature_inner_product_is_the_kernel(seed in any::<u64>(), half in 1usize..40, d in 2usize..6, idx in 0usize..3) {
        let mut rng = SeededRng::new(seed, streams::PROPERTY);
        let init = Arc::new(symmetric_init(&mut rng, 2 * half, d, 0.7, 1.3).unwrap());
        let act = smooth_activation(idx, 4.0);
        let (x, y) = (unit(&mut rng, d), unit(&mut rng, d));
        let k = KernelSpec::random_feature(init.clone(), act, Component::Full).unwrap();
        let via_features = feature_map(&init, &act, &x).unwrap().dot(&feature_map(&init, &act, &y).unwrap());
        let direct = kernel_eval(&k, &x, &y).unwrap();
        prop_assert!((via_features - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        let parts = kernel_eval(&k.with_component(Component::OutputLayer), &x, &y).unwrap()
            + kernel_eval(&k.with_component(Component::InputLayer), &x, &y).unwrap();
        prop_assert!((parts - direct).abs() <= 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn feature_map_is_the_gradient(seed in any::<u64>(), d in 2usize..5, idx in 0usize..3) {
        let mut rng = SeededRng::new(seed, streams::PROPERTY);
        let p = symmetric_init(&mut rng, 8, d, 0.9, 0.8).unwrap();
        let act = smooth_activation(idx, 3.0);
        let x = unit(&mut rng, d);
        let g = param_gradient(&p, &act, &x).unwrap();
        let flat = p.to_flat();
        let h = 1e-6;
        for (i, gi) in g.iter().enumerate() {
            let mut up = flat.clone();
            up[i] += h;
            let mut dn = flat.clone();
            dn[i] -= h;
            let fd = (forward(&p.from_flat(&up).unwrap(), &act, &x).unwrap()
                - forward(&p.from_flat(&dn).unwrap(), &act, &x).unwrap()) / (2.0 * h);
            prop_assert!((fd - gi).abs() <= 1e-5 * gi.abs().max(1e-3), "coord {}: {} vs {}", i, fd, gi);
        }
    }

    #[test]
    fn gram_is_psd_and_rank_bounded(seed in any::<u64>(), half in 1usize..6, n in 2usize..60) {
        let d = 3;
        let mut rng = SeededRng::new(seed, streams::PROPERTY);
        let init = Arc::new(symmetric_init(&mut rng, 2 * half, d, 1.0, 0.5).unwrap());
        let k = KernelSpec::random_feature(init, ActivationSpec::tanh(), Component::Full).unwrap();
        let pts = sample_sphere(&mut rng, d, n).unwrap();
        let g = gram_matrix(&k, &pts).unwrap();
        let e = sym_eigen(&g).unwrap();
        let top = e.eigenvalues[0];
        prop_assert!(e.eigenvalues.iter().all(|&l| l >= -1e-8 * top));
        let rank = e.eigenvalues.iter().filter(|&&l| l > 1e-9 * top).count();
        prop_assert!(rank <= 2 * half * (d + 2));
    }

    #[test]
    fn dof_decreases_in_lambda(eigs in prop::collection::vec(0.0f64..10.0, 1..40), l1 in 1e-4f64..10.0, f in 1.01f64..10.0) {
        let a = degree_of_freedom(&eigs, l1).unwrap();
        let b = degree_of_freedom(&eigs, l1 * f).unwrap();
        prop_assert!(a <= eigs.len() as f64);
        if eigs.iter().any(|&l| l > 0.0) {
            prop_assert!(b < a);
        } else {
            prop_assert_eq!(a, 0.0);
        }
    }

    #[test]
    fn source_norm_scales_and_grows_in_r(
        coefs in prop::collection::vec(-2.0f64..2.0, 1..20),
        c in -5.0f64..5.0,
        r in 0.0f64..0.9,
    ) {
        let eigs: Vec<f64> = (0..coefs.len()).map(|i| 1.0 / (i as f64 + 1.5)).collect();
        let pairs: Vec<(usize, f64)> = coefs.iter().copied().enumerate().collect();
        let scaled: Vec<(usize, f64)> = pairs.iter().map(|&(i, a)| (i, c * a)).collect();
        let base = source_norm_report(&pairs, &eigs, r).unwrap().norm;
        let s = source_norm_report(&scaled, &eigs, r).unwrap().norm;
        prop_assert!((s - c.abs() * base).abs() <= 1e-12 * base.max(1.0));
        let higher = source_norm_report(&pairs, &eigs, r + 0.1).unwrap().norm;
        prop_assert!(higher >= base);
    }

    #[test]
    fn trainers_are_deterministic(seed in any::<u64>(), t in 1usize..40) {
        let d = 3;
        let mut rng = SeededRng::new(seed, streams::INIT);
        let init = Arc::new(symmetric_init(&mut rng, 16, d, 1.0, 0.5).unwrap());
        let act = ActivationSpec::swish(2.0).unwrap();
        let target = Arc::new(TargetFunction::zonal(2, vec![0.0, 0.0, 1.0], 1.0).unwrap());
        let cfg = TrainConfig::new(t, 0.1, 0.05, seed);
        let batch = SampleStream::new(target.clone(), 0.1, true, seed).unwrap().draw(t).unwrap();
        let again = SampleStream::new(target, 0.1, true, seed).unwrap().draw(t).unwrap();
        let n1 = asgd_network(&init, &act, &cfg, &batch).unwrap();
        let n2 = asgd_network(&init, &act, &cfg, &again).unwrap();
        prop_assert_eq!(n1.averaged.to_flat(), n2.averaged.to_flat());
        let k1 = asgd_kernel(init.clone(), &act, &cfg, &batch).unwrap();
        let k2 = asgd_kernel(init, &act, &cfg, &again).unwrap();
        prop_assert_eq!(&k1.iterate.w_avg, &k2.iterate.w_avg);
    }
}
