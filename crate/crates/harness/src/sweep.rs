//! Replicated estimator comparisons along one axis of the synthetic
//! environment.

use log::{debug, info};
use matchope_core::models::{fit_logging_policy, fit_reward_models, FitConfig};
use matchope_core::rng::seed_path;
use matchope_core::stats::EmpiricalMoments;
use matchope_core::synth::{
    epsilon_greedy_target_policy, generate_environment, sample_logged_data, softmax_logging_policy,
};
use matchope_core::{
    true_policy_value, Environment, Estimator, EstimatorInput, LoggedDataset, Policy,
    PropensitySource, RewardModel,
};
use rayon::prelude::*;

use crate::config::{ModelSource, SweepConfig};
use crate::error::{HarnessError, Result};
use crate::metrics::error_rate;
use crate::report::{ExperimentReport, FailureCount, ReportRow};

/// Seed of the environment at axis index `a`.
pub fn environment_seed(master: u64, axis_index: usize) -> u64 {
    seed_path(master, &[0, axis_index as u64])
}

/// Seed of replication `r` at axis index `a`.
pub fn replication_seed(master: u64, axis_index: usize, replication: usize) -> u64 {
    seed_path(master, &[1, axis_index as u64, replication as u64])
}

/// Reward model (and, for estimated propensities, `pi0_hat`) for one dataset.
pub fn build_model(
    dataset: &LoggedDataset,
    env: &Environment,
    model_source: ModelSource,
    propensity_source: PropensitySource,
    fit: &FitConfig,
) -> matchope_core::Result<RewardModel> {
    let mut model = match model_source {
        ModelSource::Oracle => RewardModel::oracle(env),
        ModelSource::Fitted => {
            let (model, diagnostics) = fit_reward_models(dataset, env.contexts(), fit)?;
            for w in &diagnostics.warnings {
                debug!("{w}");
            }
            model
        }
    };
    if propensity_source == PropensitySource::Estimated {
        model = model.with_pi0_hat(fit_logging_policy(dataset, env.contexts(), fit)?);
    }
    Ok(model)
}

/// Everything fixed at one axis value.
struct AxisPoint {
    env: Environment,
    target: Policy,
    logging: Policy,
    true_target: f64,
    true_logging: f64,
    estimators: Vec<Estimator>,
}

type RepOutcome = Vec<std::result::Result<(f64, f64), String>>;

fn run_replication(point: &AxisPoint, cfg: &SweepConfig, seed: u64) -> RepOutcome {
    let fail_all = |e: String| vec![Err(e); point.estimators.len()];
    let dataset = match sample_logged_data(&point.env, &point.logging, seed) {
        Ok(d) => d,
        Err(e) => return fail_all(e.to_string()),
    };
    let model = match build_model(
        &dataset,
        &point.env,
        cfg.model_source,
        cfg.propensity_source,
        &cfg.fit,
    ) {
        Ok(m) => m,
        Err(e) => return fail_all(e.to_string()),
    };
    let input = |target| {
        EstimatorInput::new(&dataset, target, &model)
            .with_propensity_source(cfg.propensity_source)
            .with_logging_policy(&point.logging)
    };
    point
        .estimators
        .iter()
        .map(|est| {
            let on_target = est.estimate(&input(&point.target));
            let on_logging = est.estimate(&input(&point.logging));
            match (on_target, on_logging) {
                (Ok(a), Ok(b)) => Ok((a, b)),
                (Err(e), _) | (_, Err(e)) => Err(e.to_string()),
            }
        })
        .collect()
}

/// Runs every replication at every axis value. Replications run on the
/// current rayon pool; results do not depend on its size.
pub fn run_sweep(cfg: &SweepConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut report = ExperimentReport::default();
    for (a, value) in cfg.values().into_iter().enumerate() {
        let mut spec = cfg.axis.apply(&cfg.base, value)?;
        spec.seed = environment_seed(cfg.master_seed, a);
        let (env, _) = generate_environment(&spec)?;
        let logging = softmax_logging_policy(&env, spec.beta);
        let target = epsilon_greedy_target_policy(&env, spec.epsilon)?;
        let estimators = cfg
            .estimators
            .iter()
            .map(|e| e.resolve(env.contexts()))
            .collect::<Result<Vec<_>>>()?;
        let point = AxisPoint {
            true_target: true_policy_value(&env, &target)?,
            true_logging: true_policy_value(&env, &logging)?,
            env,
            target,
            logging,
            estimators,
        };
        info!(
            "{} = {value}: V(pi) = {:.6}, V(pi_0) = {:.6}",
            cfg.axis.name(),
            point.true_target,
            point.true_logging
        );

        let outcomes: Vec<RepOutcome> = (0..cfg.n_replications)
            .into_par_iter()
            .map(|r| run_replication(&point, cfg, replication_seed(cfg.master_seed, a, r)))
            .collect();

        for (k, name) in cfg.estimators.iter().enumerate() {
            let mut on_target = Vec::with_capacity(cfg.n_replications);
            let mut on_logging = Vec::with_capacity(cfg.n_replications);
            let mut failures = 0;
            let mut first_error = None;
            for rep in &outcomes {
                match &rep[k] {
                    Ok((a, b)) => {
                        on_target.push(*a);
                        on_logging.push(*b);
                    }
                    Err(e) => {
                        failures += 1;
                        first_error.get_or_insert_with(|| e.clone());
                    }
                }
            }
            if let Some(first_error) = first_error {
                if failures * 100 > cfg.n_replications || on_target.len() < 2 {
                    return Err(HarnessError::Validation(format!(
                        "{name} failed in {failures} of {} replications at {} = {value}: {first_error}",
                        cfg.n_replications,
                        cfg.axis.name()
                    )));
                }
                log::warn!(
                    "{name}: excluded {failures} failed replications at {} = {value}",
                    cfg.axis.name()
                );
                report.failures.push(FailureCount {
                    axis_value: value,
                    estimator: name.to_string(),
                    failures,
                    first_error,
                });
            }
            let moments = EmpiricalMoments::from_sample(&on_target, point.true_target);
            report.rows.push(ReportRow {
                axis: cfg.axis.name().to_string(),
                axis_value: value,
                estimator: name.to_string(),
                mse: moments.mse,
                squared_bias: moments.bias * moments.bias,
                variance: moments.variance.unwrap_or(f64::NAN),
                error_rate: error_rate(
                    &on_target,
                    &on_logging,
                    point.true_target,
                    point.true_logging,
                ),
                mean_estimate: moments.mean,
                true_value: point.true_target,
                n_reps: moments.n,
                se_mse: moments.se_mse.unwrap_or(f64::NAN),
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Axis, EstimatorSpec};
    use matchope_core::synth::SyntheticEnvSpec;

    fn small(model_source: ModelSource) -> SweepConfig {
        SweepConfig {
            axis: Axis::NSeekers,
            axis_values: Some(vec![5.0, 8.0]),
            n_replications: 20,
            estimators: vec![
                EstimatorSpec::Dm,
                EstimatorSpec::Ips,
                EstimatorSpec::Dips,
                EstimatorSpec::Mips(None),
            ],
            base: SyntheticEnvSpec {
                n_companies: 40,
                dim: 3,
                ..SyntheticEnvSpec::default()
            },
            model_source,
            master_seed: 5,
            ..SweepConfig::default()
        }
    }

    #[test]
    fn oracle_dm_is_exact() {
        let report = run_sweep(&small(ModelSource::Oracle)).unwrap();
        assert_eq!(report.rows.len(), 8);
        for row in report.rows.iter().filter(|r| r.estimator == "dm") {
            assert!(
                row.mse < 1e-28 && row.variance < 1e-28 && row.squared_bias < 1e-28,
                "{row:?}"
            );
        }
        for row in &report.rows {
            assert_eq!(row.mse, row.squared_bias + row.variance);
            assert!((0.0..=1.0).contains(&row.error_rate));
            assert_eq!(row.n_reps, 20);
        }
    }

    #[test]
    fn sweep_is_deterministic_across_pool_sizes() {
        let cfg = small(ModelSource::Fitted);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one.install(|| run_sweep(&cfg)).unwrap();
        let b = four.install(|| run_sweep(&cfg)).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn failing_estimator_aborts() {
        let mut cfg = small(ModelSource::Oracle);
        cfg.propensity_source = PropensitySource::Estimated;
        cfg.model_source = ModelSource::Oracle;
        // Estimated propensities work; a logged-only dataset would not matter here.
        assert!(run_sweep(&cfg).is_ok());
        cfg.estimators = vec![EstimatorSpec::Mips(Some(50))];
        assert!(run_sweep(&cfg).is_err());
    }
}
