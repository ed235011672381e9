//! Off-policy learning runs evaluated against the ground truth.
//!
//! For every seed a fresh environment and logged dataset are drawn, reward
//! models are fitted once, and each gradient estimator learns a softmax
//! policy on that same data. Learned policies are scored by their true value
//! relative to the logging policy.

use log::info;
use matchope_core::opl::{learn_policy_observed, policy_probs, GradientEstimator};
use matchope_core::rng::seed_path;
use matchope_core::stats::{mean, EmpiricalMoments};
use matchope_core::synth::{generate_environment, sample_logged_data, softmax_logging_policy};
use matchope_core::{true_policy_value, Environment, LoggedDataset, PropensitySource, RewardModel};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::OplExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::plots::{LineChart, Series};
use crate::report::{format_float, ReportFormat};
use crate::sweep::build_model;

/// One learner on one seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OplRow {
    pub seed: usize,
    pub estimator: String,
    pub logging_value: f64,
    pub learned_value: f64,
    pub relative_value: f64,
    /// The learner's own value estimate at its final iterate.
    pub final_estimate: f64,
}

/// Relative values of one learner aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OplSummary {
    pub estimator: String,
    pub n_seeds: usize,
    pub mean_relative_value: f64,
    /// `NaN` with a single seed.
    pub se_relative_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub seed: usize,
    pub estimator: String,
    pub iteration: usize,
    pub estimated_value: f64,
    pub true_value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OplReport {
    pub rows: Vec<OplRow>,
    pub summary: Vec<OplSummary>,
    pub trajectory: Vec<TrajectoryPoint>,
}

pub fn environment_seed(master: u64, seed_index: usize) -> u64 {
    seed_path(master, &[2, seed_index as u64])
}

pub fn data_seed(master: u64, seed_index: usize) -> u64 {
    seed_path(master, &[3, seed_index as u64])
}

struct SeedSetup {
    env: Environment,
    dataset: LoggedDataset,
    model: RewardModel,
    logging_value: f64,
}

fn prepare(cfg: &OplExperimentConfig, s: usize) -> Result<SeedSetup> {
    let mut spec = cfg.base.clone();
    spec.seed = environment_seed(cfg.master_seed, s);
    let (env, _) = generate_environment(&spec)?;
    let logging = softmax_logging_policy(&env, spec.beta);
    let dataset = sample_logged_data(&env, &logging, data_seed(cfg.master_seed, s))?;
    let model = build_model(
        &dataset,
        &env,
        cfg.model_source,
        PropensitySource::Logged,
        &cfg.fit,
    )?;
    let logging_value = true_policy_value(&env, &logging)?;
    Ok(SeedSetup {
        env,
        dataset,
        model,
        logging_value,
    })
}

fn learn_one(
    cfg: &OplExperimentConfig,
    setup: &SeedSetup,
    s: usize,
    est: GradientEstimator,
) -> Result<(OplRow, Vec<TrajectoryPoint>)> {
    let contexts = setup.env.contexts();
    let learn = cfg.learn_config(est, data_seed(cfg.master_seed, s));
    let mut true_values = Vec::with_capacity(cfg.n_iterations + 1);
    let outcome = learn_policy_observed(
        &setup.dataset,
        contexts,
        &setup.model,
        &learn,
        |_, params| {
            true_values.push(true_policy_value(
                &setup.env,
                &policy_probs(params, contexts)?,
            )?);
            Ok(())
        },
    )
    .map_err(|e| HarnessError::Validation(format!("{} on seed {s}: {e}", est.id())))?;
    let learned_value = *true_values.last().expect("at least one iterate");
    let trajectory = outcome
        .trajectory
        .iter()
        .zip(&true_values)
        .enumerate()
        .map(|(t, (&estimated_value, &true_value))| TrajectoryPoint {
            seed: s,
            estimator: est.id().to_string(),
            iteration: t,
            estimated_value,
            true_value,
        })
        .collect();
    let row = OplRow {
        seed: s,
        estimator: est.id().to_string(),
        logging_value: setup.logging_value,
        learned_value,
        relative_value: learned_value / setup.logging_value,
        final_estimate: *outcome.trajectory.last().expect("n_iterations + 1 entries"),
    };
    Ok((row, trajectory))
}

/// Learns one policy per (seed, gradient estimator) and scores it against
/// the ground truth. Work is spread over the current rayon pool; the report
/// does not depend on its size.
pub fn run_opl_experiment(cfg: &OplExperimentConfig) -> Result<OplReport> {
    cfg.validate()?;
    let setups = (0..cfg.n_seeds)
        .into_par_iter()
        .map(|s| prepare(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, GradientEstimator)> = (0..cfg.n_seeds)
        .flat_map(|s| cfg.estimators.iter().map(move |&e| (s, e)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(s, est)| learn_one(cfg, &setups[s], s, est))
        .collect::<Result<Vec<_>>>()?;

    let mut report = OplReport::default();
    for (row, trajectory) in results {
        info!(
            "seed {} {}: V(learned) / V(pi_0) = {:.4}",
            row.seed, row.estimator, row.relative_value
        );
        report.rows.push(row);
        report.trajectory.extend(trajectory);
    }
    for est in &cfg.estimators {
        let rel: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| r.estimator == est.id())
            .map(|r| r.relative_value)
            .collect();
        let moments = EmpiricalMoments::from_sample(&rel, 0.0);
        report.summary.push(OplSummary {
            estimator: est.id().to_string(),
            n_seeds: rel.len(),
            mean_relative_value: moments.mean,
            se_relative_value: moments.se_mean.unwrap_or(f64::NAN),
        });
    }
    Ok(report)
}

impl OplReport {
    pub fn rows_csv(&self) -> String {
        let mut out = String::from(
            "seed,estimator,logging_value,learned_value,relative_value,final_estimate\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.seed,
                r.estimator,
                format_float(r.logging_value),
                format_float(r.learned_value),
                format_float(r.relative_value),
                format_float(r.final_estimate)
            ));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("estimator,n_seeds,mean_relative_value,se_relative_value\n");
        for s in &self.summary {
            out.push_str(&format!(
                "{},{},{},{}\n",
                s.estimator,
                s.n_seeds,
                format_float(s.mean_relative_value),
                format_float(s.se_relative_value)
            ));
        }
        out
    }

    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("seed,estimator,iteration,estimated_value,true_value\n");
        for p in &self.trajectory {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.seed,
                p.estimator,
                p.iteration,
                format_float(p.estimated_value),
                format_float(p.true_value)
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Mean true value relative to the logging policy at every iteration,
    /// one series per learner.
    pub fn trajectory_chart(&self) -> LineChart {
        let mut names: Vec<&str> = Vec::new();
        for p in &self.trajectory {
            if !names.contains(&p.estimator.as_str()) {
                names.push(&p.estimator);
            }
        }
        let series = names
            .iter()
            .map(|&name| {
                let n_iter = self
                    .trajectory
                    .iter()
                    .filter(|p| p.estimator == name)
                    .map(|p| p.iteration + 1)
                    .max()
                    .unwrap_or(0);
                let points = (0..n_iter)
                    .map(|t| {
                        let rel: Vec<f64> = self
                            .trajectory
                            .iter()
                            .filter(|p| p.estimator == name && p.iteration == t)
                            .map(|p| {
                                let base = self
                                    .rows
                                    .iter()
                                    .find(|r| r.seed == p.seed && r.estimator == p.estimator)
                                    .map_or(f64::NAN, |r| r.logging_value);
                                p.true_value / base
                            })
                            .collect();
                        (t as f64, mean(&rel))
                    })
                    .collect();
                Series {
                    name: name.to_string(),
                    points,
                }
            })
            .collect();
        LineChart {
            title: "learned policy value relative to logging".into(),
            x_label: "iteration".into(),
            y_label: "V(pi_theta) / V(pi_0)".into(),
            log_y: false,
            series,
        }
    }

    /// File name and contents of every output in `format`.
    pub fn files(&self, format: ReportFormat) -> Vec<(String, String)> {
        let mut files = match format {
            ReportFormat::Csv => vec![
                ("opl_rows.csv".to_string(), self.rows_csv()),
                ("opl_summary.csv".to_string(), self.summary_csv()),
                ("opl_trajectory.csv".to_string(), self.trajectory_csv()),
            ],
            ReportFormat::Json => vec![("opl_report.json".to_string(), self.to_json())],
        };
        files.push((
            "opl_trajectory.svg".to_string(),
            self.trajectory_chart().render(),
        ));
        files
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelSource;
    use matchope_core::synth::SyntheticEnvSpec;

    fn small() -> OplExperimentConfig {
        OplExperimentConfig {
            estimators: vec![GradientEstimator::IpsPg, GradientEstimator::DipsPg],
            n_seeds: 2,
            n_iterations: 5,
            base: SyntheticEnvSpec {
                n_companies: 60,
                n_seekers: 6,
                dim: 3,
                ..SyntheticEnvSpec::default()
            },
            model_source: ModelSource::Fitted,
            master_seed: 9,
            ..OplExperimentConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_gives_the_uniform_policy() {
        let cfg = OplExperimentConfig {
            learning_rate: 0.0,
            ..small()
        };
        let report = run_opl_experiment(&cfg).unwrap();
        for row in &report.rows {
            let mut spec = cfg.base.clone();
            spec.seed = environment_seed(cfg.master_seed, row.seed);
            let (env, _) = generate_environment(&spec).unwrap();
            let uniform =
                matchope_core::Policy::uniform(env.n_companies(), env.n_seekers(), "uniform");
            let v = true_policy_value(&env, &uniform).unwrap();
            assert!((row.learned_value - v).abs() < 1e-12);
        }
    }

    #[test]
    fn report_shape_and_determinism() {
        let cfg = small();
        let a = run_opl_experiment(&cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let b = pool.install(|| run_opl_experiment(&cfg)).unwrap();
        assert_eq!(a.files(ReportFormat::Csv), b.files(ReportFormat::Csv));
        assert_eq!(a.rows.len(), 4);
        assert_eq!(a.trajectory.len(), 4 * 6);
        assert_eq!(a.summary.len(), 2);
        assert_eq!(a.rows_csv().lines().count(), 5);
        assert_eq!(a.trajectory_chart().series.len(), 2);
        assert!(a.to_json().contains("relative_value"));
    }
}
