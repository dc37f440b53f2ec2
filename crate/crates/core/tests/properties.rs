//! Randomized invariants of operators, priors, scaled denoisers and the solver.

use std::sync::Arc;

use nalgebra::DMatrix;
use pnplab::denoiser::spectral_norm;
use pnplab::linop::DEFAULT_POWER_ITERS;
use pnplab::selftest::affine_instance;
use pnplab::solver::pnp_step;
use pnplab::{
    averagedness_theta, estimate_lipschitz, gamma, gradient_step, homogeneous_scale, linear_fixed_point_oracle,
    pnp_pgd, tweedie_scale, Denoise, Denoiser, ForwardOperator, GmmPrior, ScaledDenoiser, ScalingMode, Signal,
};
use proptest::prelude::*;

fn sig(v: Vec<f64>) -> Signal {
    Signal::new(v).unwrap()
}

fn vec_of(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, n)
}

fn operator() -> impl Strategy<Value = ForwardOperator> {
    (1usize..12).prop_flat_map(|n| {
        prop_oneof![
            Just(ForwardOperator::identity(n).unwrap()),
            prop::collection::vec(any::<bool>(), n).prop_map(|m| ForwardOperator::mask(m).unwrap()),
            (1..=n).prop_flat_map(vec_of).prop_map(move |kernel| ForwardOperator::convolution(kernel, n).unwrap()),
            (1usize..12)
                .prop_flat_map(move |m| prop::collection::vec(vec_of(n), m))
                .prop_map(|rows| ForwardOperator::dense_from_rows(&rows).unwrap()),
        ]
    })
}

fn dense_operator() -> impl Strategy<Value = ForwardOperator> {
    (1usize..8, 1usize..8)
        .prop_flat_map(|(m, n)| prop::collection::vec(vec_of(n), m))
        .prop_map(|rows| ForwardOperator::dense_from_rows(&rows).unwrap())
}

/// Mixtures with 1 to 4 components in dimension 1, 4 or 16.
fn gmm() -> impl Strategy<Value = GmmPrior> {
    (prop::sample::select(vec![1usize, 4, 16]), 1usize..5).prop_flat_map(|(n, k)| {
        (
            prop::collection::vec(0.05f64..1.0, k),
            prop::collection::vec(prop::collection::vec(-2.0f64..2.0, n), k),
            prop::collection::vec(0.05f64..1.5, k),
        )
            .prop_map(|(w, means, vars)| {
                let total: f64 = w.iter().sum();
                let mut w: Vec<f64> = w.iter().map(|x| x / total).collect();
                let rest: f64 = w[1..].iter().sum();
                w[0] = 1.0 - rest;
                GmmPrior::new(w, means.into_iter().map(sig).collect(), vars).unwrap()
            })
    })
}

fn prior_and_point() -> impl Strategy<Value = (GmmPrior, Vec<f64>)> {
    gmm().prop_flat_map(|p| {
        let n = p.dim();
        (Just(p), prop::collection::vec(-4.0f64..4.0, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn adjoint_consistency(op in operator(), seed in any::<u64>()) {
        let x = pnplab::random::standard_normal_signal(seed, 0, op.in_dim());
        let y = pnplab::random::standard_normal_signal(seed, 1, op.out_dim());
        let lhs = op.apply(&x).unwrap().dot(&y);
        let rhs = x.dot(&op.adjoint(&y).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn apply_is_linear(op in operator(), a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
        let x = pnplab::random::standard_normal_signal(seed, 0, op.in_dim());
        let z = pnplab::random::standard_normal_signal(seed, 1, op.in_dim());
        let lhs = op.apply(&x.lincomb(a, &z, b)).unwrap();
        let rhs = op.apply(&x).unwrap().lincomb(a, &op.apply(&z).unwrap(), b);
        prop_assert!(lhs.distance(&rhs) <= 1e-10 * (1.0 + rhs.norm()));
    }

    #[test]
    fn gradient_step_is_non_expansive(op in dense_operator(), seed in any::<u64>()) {
        let norm = op.op_norm_sq(DEFAULT_POWER_ITERS, seed).unwrap();
        prop_assume!(norm > 0.0);
        let tau = 1.0 / norm;
        let y = pnplab::random::standard_normal_signal(seed, 0, op.out_dim());
        let x1 = pnplab::random::standard_normal_signal(seed, 1, op.in_dim());
        let x2 = pnplab::random::standard_normal_signal(seed, 2, op.in_dim());
        let g1 = gradient_step(&op, &y, tau, &x1).unwrap();
        let g2 = gradient_step(&op, &y, tau, &x2).unwrap();
        prop_assert!(g1.distance(&g2) <= x1.distance(&x2) * (1.0 + 1e-9));
    }

    #[test]
    fn power_iteration_is_monotone_and_matches_eigensolver(op in dense_operator(), seed in any::<u64>()) {
        let run = op.power_iteration(DEFAULT_POWER_ITERS, seed).unwrap();
        for w in run.rayleigh_history.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12 * (1.0 + w[0].abs()));
        }
        let a = op.to_matrix();
        let exact = (a.transpose() * &a).symmetric_eigenvalues().max();
        prop_assert!(run.estimate <= exact * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn tweedie_matches_posterior_mean((prior, y) in prior_and_point(), sigma in 0.01f64..2.0) {
        let y = sig(y);
        let a = prior.mmse_denoise(sigma, &y).unwrap();
        let b = prior.posterior_mean_oracle(sigma, &y).unwrap();
        prop_assert!(a.distance(&b) / (1.0 + y.norm()) <= 1e-10);
    }

    #[test]
    fn score_matches_finite_differences((prior, y) in prior_and_point(), sigma in 0.0f64..1.0) {
        let y = sig(y);
        let score = prior.score(sigma, &y).unwrap();
        let h = 1e-5;
        let fd: Vec<f64> = (0..y.dim())
            .map(|i| {
                let mut plus = y.clone().into_vec();
                let mut minus = plus.clone();
                plus[i] += h;
                minus[i] -= h;
                (prior.log_p_sigma(sigma, &sig(plus)).unwrap() - prior.log_p_sigma(sigma, &sig(minus)).unwrap())
                    / (2.0 * h)
            })
            .collect();
        prop_assert!(sig(fd).distance(&score) <= 1e-6 * (1.0 + score.norm()));
    }

    #[test]
    fn tweedie_scaling_is_the_interpolation((prior, y) in prior_and_point(), delta in 0.1f64..100.0) {
        let y = sig(y);
        let d = Denoiser::exact_mmse(Arc::new(prior), 0.2).unwrap();
        let dy = d.denoise(&y).unwrap();
        let u = 1.0 / (delta * delta);
        let scaled = tweedie_scale(d, delta).unwrap().denoise(&y).unwrap();
        prop_assert_eq!(scaled, y.lincomb(1.0 - u, &dy, u));
    }

    #[test]
    fn residual_shrinks_by_delta_squared((prior, y) in prior_and_point(), delta in 0.1f64..1e3) {
        let y = sig(y);
        let d = Denoiser::exact_mmse(Arc::new(prior), 0.3).unwrap();
        let base = d.denoise(&y).unwrap().distance(&y);
        let scaled = tweedie_scale(d, delta).unwrap().denoise(&y).unwrap().distance(&y);
        prop_assert!((scaled * delta * delta - base).abs() <= 1e-9 * (1.0 + base));
    }

    #[test]
    fn homogeneous_scaling_ignores_delta_for_linear_bases(
        rows in prop::collection::vec(vec_of(4), 4),
        y in vec_of(4),
        deltas in prop::collection::vec(0.01f64..100.0, 1..10),
    ) {
        let w = DMatrix::from_fn(4, 4, |i, j| rows[i][j]);
        let d = Denoiser::affine(w, Signal::zeros(4)).unwrap();
        let y = sig(y);
        let reference = d.denoise(&y).unwrap();
        for delta in deltas {
            let out = homogeneous_scale(d.clone(), delta).unwrap().denoise(&y).unwrap();
            prop_assert!(out.distance(&reference) <= 1e-12 * (1.0 + reference.norm()));
        }
    }

    #[test]
    fn gamma_rescaled_family_tends_to_identity(y in vec_of(3), alpha in 0.0f64..1.0) {
        prop_assume!(alpha > 0.0);
        let y = sig(y);
        let d = Denoiser::shrinkage(alpha, 3).unwrap();
        let residual = d.denoise(&y).unwrap().distance(&y);
        let delta = 1e3;
        let sd = ScaledDenoiser::new(d, delta, ScalingMode::Tweedie, true).unwrap();
        let out = sd.denoise(&y).unwrap();
        prop_assert!(out.distance(&y) <= 2e-6 * (1.0 + y.norm() + residual));
        let bound = residual / (delta * delta) + y.norm() / (1.0 + delta * delta);
        prop_assert!(out.distance(&y) <= bound * (1.0 + 1e-12) + 1e-15);
    }
}

#[test]
fn tweedie_identity_on_a_thousand_points() {
    let priors = [
        GmmPrior::gaussian(sig(vec![0.0]), 1.0).unwrap(),
        pnplab::experiments::default_prior(4).unwrap(),
        pnplab::experiments::default_prior(16).unwrap(),
    ];
    for prior in &priors {
        let set = prior.sample_pairs(0.1, 1000, 11).unwrap();
        let worst = set
            .pairs
            .iter()
            .map(|p| {
                let a = prior.mmse_denoise(0.1, &p.noisy).unwrap();
                let b = prior.posterior_mean_oracle(0.1, &p.noisy).unwrap();
                a.distance(&b) / (1.0 + p.noisy.norm())
            })
            .fold(0.0, f64::max);
        assert!(worst <= 1e-10, "{worst}");
    }
}

/// Curved bimodal prior: the score's σ-dependence is not a pure rescaling.
fn curved_prior() -> GmmPrior {
    GmmPrior::new(vec![0.4, 0.6], vec![sig(vec![-0.6, 0.3]), sig(vec![0.7, -0.2])], vec![0.25, 0.4]).unwrap()
}

#[test]
fn heat_expansion_is_second_order() {
    let prior = curved_prior();
    for y in [vec![0.0, 0.0], vec![0.5, -0.3], vec![-0.4, 0.5], vec![0.2, 0.2]] {
        let y = sig(y);
        let s0 = prior.score(0.0, &y).unwrap();
        let e = |s: f64| prior.score(s, &y).unwrap().distance(&s0);
        for sigma in [0.2, 0.1, 0.05] {
            let ratio = e(sigma / 2.0) / e(sigma);
            assert!((0.18..=0.35).contains(&ratio), "y={y:?} sigma={sigma}: {ratio}");
        }
    }
}

#[test]
fn scaling_preserves_non_expansiveness() {
    let prior = Arc::new(GmmPrior::gaussian(sig(vec![0.5, -0.5, 0.0]), 0.7).unwrap());
    let cloud: Vec<Signal> = prior.sample_pairs(0.2, 60, 3).unwrap().pairs.into_iter().map(|p| p.noisy).collect();
    let bases = [
        Denoiser::exact_mmse(prior.clone(), 0.2).unwrap(),
        Denoiser::shrinkage(0.4, 3).unwrap(),
        Denoiser::affine(
            DMatrix::from_row_slice(3, 3, &[0.6, 0.3, 0.0, -0.3, 0.6, 0.1, 0.0, 0.2, 0.5]),
            sig(vec![1.0, 0.0, -1.0]),
        )
        .unwrap(),
    ];
    for base in bases {
        assert!(estimate_lipschitz(&base, &cloud).unwrap() <= 1.0);
        for delta in [1.0, 1.09, 2.0, 10.0, 1e3] {
            let scaled = tweedie_scale(base.clone(), delta).unwrap();
            assert!(estimate_lipschitz(&scaled, &cloud).unwrap() <= 1.0 + 1e-9);
        }
    }
}

#[test]
fn wiener_lipschitz_is_bounded_by_the_gain() {
    let (s2, sigma) = (2.0, 0.5);
    let prior = Arc::new(GmmPrior::gaussian(Signal::zeros(3), s2).unwrap());
    let d = Denoiser::exact_mmse(prior.clone(), sigma).unwrap();
    let cloud: Vec<Signal> = prior.sample_pairs(sigma, 50, 1).unwrap().pairs.into_iter().map(|p| p.noisy).collect();
    assert!(estimate_lipschitz(&d, &cloud).unwrap() <= s2 / (s2 + sigma * sigma) + 1e-9);
}

#[test]
fn krasnoselskii_mann_residuals_are_monotone_and_match_the_oracle() {
    for i in 0..50u64 {
        let d2 = [1.2, 2.0, 10.0][(i % 3) as usize];
        let n = 2 + (i as usize % 15);
        let inst = affine_instance(100 + i, n, f64::sqrt(d2)).unwrap();
        let run = pnp_pgd(&inst.op, &inst.y, &inst.denoiser, &inst.cfg, &Signal::zeros(n)).unwrap();
        assert!(run.converged, "instance {i}");
        for w in run.residual_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "instance {i}: {} > {}", w[1], w[0]);
        }
        let exact = linear_fixed_point_oracle(&inst.op, &inst.y, &inst.denoiser, &inst.cfg).unwrap();
        assert!(run.x_star.distance(&exact) <= 1e-8 * exact.norm(), "instance {i}");
        // Re-evaluating T at the returned point.
        let again = pnp_step(&inst.op, &inst.y, &inst.denoiser, inst.cfg.tau, &run.x_star).unwrap();
        assert!(again.distance(&run.x_star) <= 2.0 * inst.cfg.tol * (1.0 + run.x_star.norm()));
    }
}

#[test]
fn averaged_operator_inequality_holds() {
    for i in 0..30u64 {
        let d2 = [1.2, 2.0, 10.0][(i % 3) as usize];
        let inst = affine_instance(500 + i, 6, f64::sqrt(d2)).unwrap();
        let (w, _) = inst.denoiser.base().affine_parts().unwrap();
        assert!(spectral_norm(&w) <= 1.0);
        let theta = averagedness_theta(f64::sqrt(d2)).unwrap();
        let t = |x: &Signal| pnp_step(&inst.op, &inst.y, &inst.denoiser, inst.cfg.tau, x).unwrap();
        for j in 0..20 {
            let x = pnplab::random::standard_normal_signal(i, 2 * j, 6).scale(3.0);
            let z = pnplab::random::standard_normal_signal(i, 2 * j + 1, 6);
            let (tx, tz) = (t(&x), t(&z));
            let lhs = tx.distance(&tz).powi(2);
            let fix_gap = x.sub(&tx).sub(&z.sub(&tz)).norm_sq();
            let rhs = x.distance(&z).powi(2) - (1.0 - theta) / theta * fix_gap;
            assert!(lhs <= rhs + 1e-9 * (1.0 + x.distance(&z).powi(2)), "instance {i}: {lhs} > {rhs}");
        }
    }
}

#[test]
fn gamma_examples() {
    assert_eq!(gamma(1.0), 0.5);
    let d = Denoiser::identity(1).unwrap();
    let sd = ScaledDenoiser::new(d, 1.0, ScalingMode::Tweedie, true).unwrap();
    assert_eq!(sd.denoise(&sig(vec![4.0])).unwrap(), sig(vec![2.0]));
}
