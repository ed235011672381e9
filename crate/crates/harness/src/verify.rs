//! The `check` suite: closed-form bias and variance against exhaustive
//! enumeration and Monte-Carlo replication, plus the exact estimator
//! collapses.

use std::fmt;

use matchope_core::analytic::{
    bias_dips, bias_dips_estimated_pi0, bias_dpr_estimated_pi0, bias_ips_estimated_pi0,
    monte_carlo_estimates, variance_dips, variance_dpr, variance_dr, variance_ips,
    variance_reduction_bound, AnalyticReport, Scenario, VarianceReductionCheck,
};
use matchope_core::estimators::EmbeddingMap;
use matchope_core::rng::{child_seed, rng_from_seed, Rng};
use matchope_core::stats::EmpiricalMoments;
use matchope_core::synth::{
    epsilon_greedy_target_policy, generate_environment, sample_logged_data, softmax_logging_policy,
    SyntheticEnvSpec,
};
use matchope_core::{
    ContextSet, Environment, Estimator, EstimatorInput, Policy, PropensitySource, RewardModel,
};
use ndarray::Array2;
use rand::Rng as _;

use crate::error::{HarnessError, Result};

/// A small random evaluation problem.
#[derive(Debug, Clone)]
pub struct Instance {
    pub env: Environment,
    pub target: Policy,
    pub logging: Policy,
    /// Arbitrary `q_hat_r`, `q_hat_m`, `q_hat_s` and a perturbed `pi0_hat`.
    pub model: RewardModel,
}

fn unit(rng: &mut Rng) -> f64 {
    // Exact 0 and 1 show up often enough to exercise the boundary cases.
    match rng.random_range(0..10) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random::<f64>(),
    }
}

fn matrix(
    rng: &mut Rng,
    rows: usize,
    cols: usize,
    mut f: impl FnMut(&mut Rng) -> f64,
) -> Array2<f64> {
    let mut m = Array2::zeros((rows, cols));
    for v in m.iter_mut() {
        *v = f(rng);
    }
    m
}

fn normalized(mut m: Array2<f64>) -> Array2<f64> {
    for mut row in m.rows_mut() {
        let total: f64 = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    m
}

/// Full-support logging policy and a target that may put zero mass on
/// some seekers.
fn policies(rng: &mut Rng, n_c: usize, n_j: usize) -> Result<(Policy, Policy, Policy)> {
    let logging = normalized(matrix(rng, n_c, n_j, |r| 0.05 + r.random::<f64>()));
    let pi0_hat = normalized(matrix(rng, n_c, n_j, |r| 0.05 + r.random::<f64>()));
    let mut target = matrix(rng, n_c, n_j, |r| {
        if r.random_range(0..4) == 0 {
            0.0
        } else {
            r.random::<f64>()
        }
    });
    for mut row in target.rows_mut() {
        if row.sum() == 0.0 {
            row[0] = 1.0;
        }
    }
    Ok((
        Policy::new(normalized(target), "target")?,
        Policy::new(logging, "logging")?,
        Policy::new(pi0_hat, "pi0_hat")?,
    ))
}

/// Draws an instance with `|C| <= max_companies` and `2 <= |J| <= max_seekers`.
pub fn random_instance(seed: u64, max_companies: usize, max_seekers: usize) -> Result<Instance> {
    let mut rng = rng_from_seed(seed);
    let n_c = rng.random_range(1..=max_companies);
    let n_j = rng.random_range(2..=max_seekers.max(2));
    let q_s = matrix(&mut rng, n_c, n_j, unit);
    let q_r = matrix(&mut rng, n_c, n_j, unit);
    let ctx = ContextSet::new(
        matrix(&mut rng, n_c, 2, |r| r.random::<f64>() - 0.5),
        matrix(&mut rng, n_j, 2, |r| r.random::<f64>() - 0.5),
    )?;
    let env = Environment::new(q_s, q_r, ctx)?;
    let (target, logging, pi0_hat) = policies(&mut rng, n_c, n_j)?;
    let model = RewardModel::new(
        Some(matrix(&mut rng, n_c, n_j, unit)),
        Some(matrix(&mut rng, n_c, n_j, unit)),
        Some(matrix(&mut rng, n_c, n_j, unit)),
        Some(pi0_hat),
    )?;
    Ok(Instance {
        env,
        target,
        logging,
        model,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// `Ok` when every check passed, a verification error otherwise.
    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            Ok(self)
        } else {
            let failed: Vec<&str> = self
                .checks
                .iter()
                .filter(|c| !c.passed)
                .map(|c| c.name)
                .collect();
            Err(HarnessError::Verification(format!(
                "failed checks: {}",
                failed.join(", ")
            )))
        }
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

/// The seven exact collapses on datasets drawn from random instances.
pub fn check_collapses(seed: u64, n_instances: usize) -> Result<CheckResult> {
    let mut violations = Vec::new();
    for i in 0..n_instances {
        let inst = random_instance(child_seed(seed, i as u64), 6, 6)?;
        let ds = sample_logged_data(
            &inst.env,
            &inst.logging,
            child_seed(seed, 1_000_000 + i as u64),
        )?;
        let (n_c, n_j) = (inst.env.n_companies(), inst.env.n_seekers());
        let no_dm = RewardModel::new(
            inst.model.q_hat_r.clone(),
            Some(Array2::zeros((n_c, n_j))),
            None,
            None,
        )?;
        let input = |model| {
            EstimatorInput::new(&ds, &inst.target, model).with_logging_policy(&inst.logging)
        };
        let full = input(&inst.model);
        let zero = input(&no_dm);
        let singletons = EmbeddingMap::singletons(n_j);
        let pairs: [(&str, f64, f64); 7] = [
            (
                "dr -> ips",
                Estimator::Dr.estimate(&zero)?,
                Estimator::Ips.estimate(&zero)?,
            ),
            (
                "dpr -> dips",
                Estimator::Dpr.estimate(&zero)?,
                Estimator::Dips.estimate(&zero)?,
            ),
            (
                "switch_dr:inf -> dr",
                Estimator::SwitchDr {
                    lambda: f64::INFINITY,
                }
                .estimate(&full)?,
                Estimator::Dr.estimate(&full)?,
            ),
            (
                "switch_dr:0 -> dm",
                Estimator::SwitchDr { lambda: 0.0 }.estimate(&full)?,
                Estimator::Dm.estimate(&full)?,
            ),
            (
                "ext_switch_dr:inf -> dpr",
                Estimator::ExtSwitchDr {
                    lambda: f64::INFINITY,
                }
                .estimate(&full)?,
                Estimator::Dpr.estimate(&full)?,
            ),
            (
                "mips(singletons) -> ips",
                Estimator::Mips(singletons.clone()).estimate(&full)?,
                Estimator::Ips.estimate(&full)?,
            ),
            (
                "ext_mips(singletons) -> dips",
                Estimator::ExtMips(singletons).estimate(&full)?,
                Estimator::Dips.estimate(&full)?,
            ),
        ];
        for (name, a, b) in pairs {
            if a.to_bits() != b.to_bits() {
                violations.push(format!("instance {i}: {name} gave {a:e} vs {b:e}"));
            }
        }
    }
    Ok(CheckResult {
        name: "collapse_lattice",
        passed: violations.is_empty(),
        detail: if violations.is_empty() {
            format!("7 collapses exact on {n_instances} instances")
        } else {
            violations.join("; ")
        },
    })
}

/// Closed-form bias and variance of IPS, DR, DiPS and DPR against
/// exhaustive enumeration, plus the estimated-propensity bias formulas.
pub fn check_enumeration(seed: u64, n_instances: usize) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    let mut violations = Vec::new();
    for i in 0..n_instances {
        let inst = random_instance(child_seed(seed, i as u64), 3, 4)?;
        let (env, pi, pi0, model) = (&inst.env, &inst.target, &inst.logging, &inst.model);
        let scenario = Scenario::new(env, pi, pi0, model);
        let truth = scenario.true_value()?;
        let analytic: [(Estimator, AnalyticReport); 4] = [
            (Estimator::Ips, variance_ips(env, pi, pi0)?),
            (Estimator::Dr, variance_dr(env, pi, pi0, model)?),
            (Estimator::Dips, variance_dips(env, pi, pi0, model)?),
            (Estimator::Dpr, variance_dpr(env, pi, pi0, model)?),
        ];
        let mut compare = |what: String, a: f64, b: f64| {
            worst = worst.max((a - b).abs() / b.abs().max(1.0));
            if !close(a, b, 1e-10) {
                violations.push(format!(
                    "instance {i}: {what} analytic {a:e} vs exact {b:e}"
                ));
            }
        };
        for (est, report) in &analytic {
            let exact = scenario.enumerate(est)?;
            compare(
                format!("{} bias", est.id()),
                report.bias,
                exact.mean - truth,
            );
            compare(
                format!("{} variance", est.id()),
                report.variance,
                exact.variance,
            );
        }
        compare(
            "dips bias formula".into(),
            bias_dips(env, pi, model)?,
            analytic[2].1.bias,
        );

        let estimated = scenario.with_propensity_source(PropensitySource::Estimated);
        let pi0_hat = model.pi0_hat()?;
        let formulas = [
            (
                Estimator::Ips,
                bias_ips_estimated_pi0(env, pi, pi0, pi0_hat)?,
            ),
            (
                Estimator::Dips,
                bias_dips_estimated_pi0(env, pi, pi0, model)?,
            ),
            (Estimator::Dpr, bias_dpr_estimated_pi0(env, pi, pi0, model)?),
        ];
        for (est, bias) in formulas {
            let exact = estimated.enumerate(&est)?;
            compare(
                format!("{} bias with pi0_hat", est.id()),
                bias,
                exact.mean - truth,
            );
        }
        if !close(analytic[3].1.bias, analytic[2].1.bias, 1e-12) {
            violations.push(format!("instance {i}: dpr bias differs from dips bias"));
        }
    }
    Ok(CheckResult {
        name: "analytic_vs_enumeration",
        passed: violations.is_empty(),
        detail: if violations.is_empty() {
            format!("{n_instances} instances, worst relative gap {worst:.2e}")
        } else {
            violations.join("; ")
        },
    })
}

/// The noise part of the IPS-to-DiPS variance reduction dominates the bound
/// whenever the reply model does not overestimate.
pub fn check_variance_reduction(seed: u64, n_instances: usize) -> Result<CheckResult> {
    let mut violations = Vec::new();
    let mut full_chain = 0;
    for i in 0..n_instances {
        let inst = random_instance(child_seed(seed, i as u64), 6, 6)?;
        let env = &inst.env;
        let q_hat_r = inst.model.q_hat_r()?.clone();
        let capped =
            Array2::from_shape_fn(q_hat_r.dim(), |(c, j)| q_hat_r[[c, j]].min(env.q_r(c, j)));
        let model = RewardModel::new(Some(capped), None, None, None)?;
        let bound = variance_reduction_bound(env, &inst.target, &inst.logging, &model)?;
        if bound.is_nan() || bound < 0.0 {
            violations.push(format!("instance {i}: bound {bound:e} < 0"));
        }
        if !VarianceReductionCheck::noise_reduction_holds(env, &inst.target, &inst.logging, &model)?
        {
            violations.push(format!("instance {i}: noise reduction below the bound"));
        }
        let check = matchope_core::analytic::check_variance_reduction(
            env,
            &inst.target,
            &inst.logging,
            &model,
        )?;
        if check.holds() {
            full_chain += 1;
        }
    }
    Ok(CheckResult {
        name: "variance_reduction",
        passed: violations.is_empty(),
        detail: if violations.is_empty() {
            format!("noise bound holds on {n_instances} instances; full chain on {full_chain}")
        } else {
            violations.join("; ")
        },
    })
}

/// Monte-Carlo means and variances on a small synthetic environment with
/// oracle models agree with the closed forms.
pub fn check_monte_carlo(seed: u64, n_reps: usize) -> Result<CheckResult> {
    let spec = SyntheticEnvSpec {
        n_companies: 20,
        n_seekers: 5,
        dim: 3,
        theta_sp: 1.0,
        seed: child_seed(seed, 0),
        ..SyntheticEnvSpec::default()
    };
    let (env, _) = generate_environment(&spec)?;
    let logging = softmax_logging_policy(&env, spec.beta);
    let target = epsilon_greedy_target_policy(&env, spec.epsilon)?;
    let oracle = RewardModel::oracle(&env);
    // A deliberately wrong reply model so that DiPS carries bias.
    let shrunk = RewardModel::new(
        Some(env.q_r_matrix().mapv(|v| 0.8 * v)),
        Some(env.q_m_matrix().mapv(|v| 0.5 * v)),
        None,
        None,
    )?;
    let mut violations = Vec::new();
    let mut lines = Vec::new();
    for (label, model) in [("oracle", &oracle), ("shrunk", &shrunk)] {
        let scenario = Scenario::new(&env, &target, &logging, model);
        let truth = scenario.true_value()?;
        let analytic = [
            variance_ips(&env, &target, &logging)?,
            variance_dr(&env, &target, &logging, model)?,
            variance_dips(&env, &target, &logging, model)?,
            variance_dpr(&env, &target, &logging, model)?,
        ];
        let estimators = [
            Estimator::Ips,
            Estimator::Dr,
            Estimator::Dips,
            Estimator::Dpr,
        ];
        let samples = monte_carlo_estimates(&scenario, &estimators, n_reps, child_seed(seed, 1))?;
        for ((est, report), xs) in estimators.iter().zip(&analytic).zip(&samples) {
            let m = EmpiricalMoments::from_sample(xs, truth);
            let se_mean = m.se_mean.unwrap_or(f64::NAN);
            let se_var = m.se_variance.unwrap_or(f64::NAN);
            let var = m.variance.unwrap_or(f64::NAN);
            let z_bias = (m.bias - report.bias) / se_mean;
            let z_var = (var - report.variance) / se_var;
            lines.push(format!(
                "{label} {}: z_bias {z_bias:+.2}, z_var {z_var:+.2}",
                est.id()
            ));
            if !(z_bias.abs() <= 4.0 && z_var.abs() <= 4.0) {
                violations.push(format!("{label} {} outside 4 SE", est.id()));
            }
        }
    }
    Ok(CheckResult {
        name: "monte_carlo",
        passed: violations.is_empty(),
        detail: if violations.is_empty() {
            format!("{n_reps} replications; {}", lines.join("; "))
        } else {
            format!("{}; {}", violations.join("; "), lines.join("; "))
        },
    })
}

/// Runs the whole suite from `seed`.
pub fn run_checks(seed: u64) -> Result<VerificationReport> {
    Ok(VerificationReport {
        checks: vec![
            check_collapses(child_seed(seed, 1), 50)?,
            check_enumeration(child_seed(seed, 2), 100)?,
            check_variance_reduction(child_seed(seed, 3), 100)?,
            check_monte_carlo(child_seed(seed, 4), 20_000)?,
        ],
    })
}
