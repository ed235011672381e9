//! Policy-gradient estimators against independent references: the exact
//! gradient of the true value, and finite differences of textbook value
//! estimators under a softmax built in the test.

mod common;

use common::{all_outcomes, assert_close, instance, naive_estimate, Naive};
use matchope_core::models::FeatureMode;
use matchope_core::opl::{
    estimate_gradient, learn_policy, GradientEstimator, LearnConfig, SoftmaxPolicyParams,
};
use matchope_core::rng::rng_from_seed;
use matchope_core::synth::sample_logged_data;
use matchope_core::{ContextSet, Environment, Policy, RewardModel};
use ndarray::Array2;
use rand::Rng as _;

fn features(ctx: &ContextSet, c: usize, j: usize) -> Vec<f64> {
    let (xc, xj) = (ctx.company(c), ctx.seeker(j));
    let mut f: Vec<f64> = xc.iter().chain(xj.iter()).copied().collect();
    f.extend(xc.iter().zip(xj.iter()).map(|(a, b)| a * b));
    f.push(1.0);
    f
}

fn softmax(ctx: &ContextSet, theta: &[f64]) -> Policy {
    let (n_c, n_j) = (ctx.n_companies(), ctx.n_seekers());
    let mut p = Array2::zeros((n_c, n_j));
    for c in 0..n_c {
        let logits: Vec<f64> = (0..n_j)
            .map(|j| {
                features(ctx, c, j)
                    .iter()
                    .zip(theta)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - top).exp()).sum();
        for j in 0..n_j {
            p[[c, j]] = (logits[j] - top).exp() / z;
        }
    }
    Policy::new(p, "softmax").unwrap()
}

/// d/dθ of V(π_θ) = (1/|C|) Σ_c Σ_j π_θ(j|c) q_m(c,j) (f(c,j) − E_{π_θ}[f]).
fn true_gradient(env: &Environment, theta: &[f64]) -> Vec<f64> {
    let ctx = env.contexts();
    let pi = softmax(ctx, theta);
    let mut g = vec![0.0; theta.len()];
    for c in 0..env.n_companies() {
        let mean_f: Vec<f64> = (0..theta.len())
            .map(|k| {
                (0..env.n_seekers())
                    .map(|j| pi.prob(c, j) * features(ctx, c, j)[k])
                    .sum()
            })
            .collect();
        for j in 0..env.n_seekers() {
            let f = features(ctx, c, j);
            for k in 0..theta.len() {
                g[k] += pi.prob(c, j) * env.q_m(c, j) * (f[k] - mean_f[k]);
            }
        }
    }
    g.iter().map(|v| v / env.n_companies() as f64).collect()
}

fn random_theta(seed: u64, p: usize) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..p).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn expected_dips_gradient_with_oracle_models_is_the_true_gradient() {
    for seed in 0..40 {
        let inst = instance(seed, 3, 4);
        let env = &inst.env;
        let oracle = RewardModel::oracle(env);
        let p = FeatureMode::ConcatPlusProduct.len(env.contexts().dim());
        let theta = random_theta(seed + 1000, p);
        let params = SoftmaxPolicyParams {
            theta: theta.clone(),
            feature_mode: FeatureMode::ConcatPlusProduct,
        };
        let mut expected = vec![0.0; p];
        for (prob, ds) in all_outcomes(env, &inst.pi0, true) {
            let g = estimate_gradient(
                GradientEstimator::DipsPg,
                &ds,
                &params,
                &oracle,
                env.contexts(),
                None,
            )
            .unwrap();
            for (e, v) in expected.iter_mut().zip(&g.gradient) {
                *e += prob * v;
            }
        }
        let truth = true_gradient(env, &theta);
        for k in 0..p {
            assert_close(
                expected[k],
                truth[k],
                1e-10,
                &format!("seed {seed} component {k}"),
            );
        }
    }
}

#[test]
fn gradients_match_finite_differences_of_reference_values() {
    let inst = instance(77, 6, 6);
    let env = &inst.env;
    let ctx = env.contexts();
    let ds = sample_logged_data(env, &inst.pi0, 5).unwrap();
    let model = inst.model();
    let p = FeatureMode::ConcatPlusProduct.len(ctx.dim());
    let h = 1e-5;
    for trial in 0..10 {
        let theta = random_theta(trial, p);
        let params = SoftmaxPolicyParams {
            theta: theta.clone(),
            feature_mode: FeatureMode::ConcatPlusProduct,
        };
        for (kind, naive) in [
            (GradientEstimator::DmPg, Naive::Dm),
            (GradientEstimator::IpsPg, Naive::Ips),
            (GradientEstimator::DrPg, Naive::Dr),
            (GradientEstimator::DipsPg, Naive::Dips),
            (GradientEstimator::DprPg, Naive::Dpr),
        ] {
            let g = estimate_gradient(kind, &ds, &params, &model, ctx, None).unwrap();
            let value = |th: &[f64]| {
                naive_estimate(
                    naive,
                    &ds,
                    &softmax(ctx, th),
                    &inst.pi0,
                    &inst.q_hat_r,
                    &inst.q_hat_m,
                )
            };
            assert_close(g.value, value(&theta), 1e-12, "companion value");
            let scale = g
                .gradient
                .iter()
                .fold(0.0f64, |a, v| a.max(v.abs()))
                .max(1e-3);
            for k in 0..p {
                let (mut up, mut down) = (theta.clone(), theta.clone());
                up[k] += h;
                down[k] -= h;
                let fd = (value(&up) - value(&down)) / (2.0 * h);
                assert!(
                    (g.gradient[k] - fd).abs() <= 1e-4 * scale,
                    "{} trial {trial} component {k}: {} vs {fd}",
                    kind.id(),
                    g.gradient[k]
                );
            }
        }
    }
}

#[test]
fn learning_is_bit_reproducible() {
    let inst = instance(3, 6, 6);
    let ds = sample_logged_data(&inst.env, &inst.pi0, 11).unwrap();
    let model = inst.model();
    for est in GradientEstimator::ALL {
        let cfg = LearnConfig {
            gradient_estimator: est,
            n_iterations: 25,
            learning_rate: 0.5,
            ..LearnConfig::default()
        };
        let a = learn_policy(&ds, inst.env.contexts(), &model, &cfg).unwrap();
        let b = learn_policy(&ds, inst.env.contexts(), &model, &cfg).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.trajectory), bits(&b.trajectory));
        assert_eq!(bits(&a.params.theta), bits(&b.params.theta));
        assert_eq!(a.trajectory.len(), 26);
    }
}
