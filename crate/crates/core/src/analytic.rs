//! Closed-form bias and variance of the estimators, an exhaustive
//! enumeration oracle, and Monte-Carlo profiling.
//!
//! All variances are those of the estimate for one dataset with one record
//! per company. Conditional on the logged seeker, the per-record term has a
//! Bernoulli noise part; the remaining variation comes from drawing the
//! seeker from `pi_0`. Both parts are therefore expectations under `pi_0`.

use rayon::prelude::*;

use crate::domain::{true_policy_value, Environment, LoggedDataset, Policy, Record, RewardModel};
use crate::error::{invalid, Error, Result};
use crate::estimators::{Estimator, EstimatorInput, PropensitySource};
use crate::rng::child_seed;
use crate::stats::{compensated_sum, CompensatedSum, EmpiricalMoments};
use crate::synth::sample_logged_data;

/// Bias, variance and MSE of one estimator, with the two variance parts.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticReport {
    pub estimator: &'static str,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
    pub components: Vec<(&'static str, f64)>,
}

impl AnalyticReport {
    fn new(estimator: &'static str, bias: f64, noise: f64, spread: f64) -> Self {
        let variance = noise + spread;
        Self {
            estimator,
            bias,
            variance,
            mse: bias * bias + variance,
            components: vec![("weight_noise", noise), ("policy_variance", spread)],
        }
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.components
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| *v)
    }
}

fn check_policies(env: &Environment, pi: &Policy, pi0: &Policy) -> Result<()> {
    pi.check_shape(env.n_companies(), env.n_seekers())?;
    pi0.check_shape(env.n_companies(), env.n_seekers())
}

fn check_matrix(name: &'static str, m: &ndarray::Array2<f64>, env: &Environment) -> Result<()> {
    if m.dim() != (env.n_companies(), env.n_seekers()) {
        return Err(Error::Shape(format!(
            "{name} is {:?}, environment is ({}, {})",
            m.dim(),
            env.n_companies(),
            env.n_seekers()
        )));
    }
    Ok(())
}

/// `pi / pi_0`, 0 where both vanish, an error where only `pi_0` does.
fn weight(pi: &Policy, pi0: &Policy, c: usize, j: usize) -> Result<f64> {
    let (p, p0) = (pi.prob(c, j), pi0.prob(c, j));
    if p0 > 0.0 {
        Ok(p / p0)
    } else if p == 0.0 {
        Ok(0.0)
    } else {
        Err(Error::ZeroPropensity {
            company: c,
            seeker: j,
        })
    }
}

/// Sums over companies of `E_{pi_0}[w^2 noise]` and `V_{pi_0}[w mean]`,
/// divided by `|C|^2`. `noise(c, j)` and `mean(c, j)` describe the
/// per-record term given the seeker, before weighting.
fn weighted_variance<N, M>(
    env: &Environment,
    pi: &Policy,
    pi0: &Policy,
    noise: N,
    mean: M,
) -> Result<(f64, f64)>
where
    N: Fn(usize, usize) -> f64,
    M: Fn(usize, usize) -> f64,
{
    check_policies(env, pi, pi0)?;
    let (n_c, n_j) = (env.n_companies(), env.n_seekers());
    let mut noise_acc = CompensatedSum::new();
    let mut spread_acc = CompensatedSum::new();
    let mut wm = vec![0.0; n_j];
    for c in 0..n_c {
        let mut e_noise = CompensatedSum::new();
        for (j, slot) in wm.iter_mut().enumerate() {
            let w = weight(pi, pi0, c, j)?;
            e_noise.add(pi0.prob(c, j) * w * w * noise(c, j));
            *slot = w * mean(c, j);
        }
        let centre = compensated_sum((0..n_j).map(|j| pi0.prob(c, j) * wm[j]));
        let spread = compensated_sum((0..n_j).map(|j| pi0.prob(c, j) * (wm[j] - centre).powi(2)));
        noise_acc.add(e_noise.total());
        spread_acc.add(spread);
    }
    let scale = (n_c * n_c) as f64;
    Ok((noise_acc.total() / scale, spread_acc.total() / scale))
}

/// IPS with logged propensities: unbiased, variance
/// `|C|^-2 sum_c { E_{pi_0}[w^2 sigma_m^2] + V_{pi_0}[w q_m] }`.
pub fn variance_ips(env: &Environment, pi: &Policy, pi0: &Policy) -> Result<AnalyticReport> {
    let (noise, spread) = weighted_variance(
        env,
        pi,
        pi0,
        |c, j| env.sigma2_m(c, j),
        |c, j| env.q_m(c, j),
    )?;
    Ok(AnalyticReport::new("ips", 0.0, noise, spread))
}

/// DR with logged propensities: unbiased; the spread term uses the model
/// error `q_m - q_hat_m`.
pub fn variance_dr(
    env: &Environment,
    pi: &Policy,
    pi0: &Policy,
    model: &RewardModel,
) -> Result<AnalyticReport> {
    let q_hat_m = model.q_hat_m()?;
    check_matrix("q_hat_m", q_hat_m, env)?;
    let (noise, spread) = weighted_variance(
        env,
        pi,
        pi0,
        |c, j| env.sigma2_m(c, j),
        |c, j| env.q_m(c, j) - q_hat_m[[c, j]],
    )?;
    Ok(AnalyticReport::new("dr", 0.0, noise, spread))
}

/// `|C|^-1 sum_c E_pi[q_s (q_hat_r - q_r)]`.
pub fn bias_dips(env: &Environment, pi: &Policy, model: &RewardModel) -> Result<f64> {
    let q_hat_r = model.q_hat_r()?;
    check_matrix("q_hat_r", q_hat_r, env)?;
    pi.check_shape(env.n_companies(), env.n_seekers())?;
    Ok(policy_average(env, pi, |c, j| {
        env.q_s(c, j) * (q_hat_r[[c, j]] - env.q_r(c, j))
    }))
}

fn policy_average<F: Fn(usize, usize) -> f64>(env: &Environment, pi: &Policy, f: F) -> f64 {
    let mut acc = CompensatedSum::new();
    for c in 0..env.n_companies() {
        acc.add(compensated_sum((0..env.n_seekers()).map(|j| {
            let p = pi.prob(c, j);
            if p == 0.0 {
                0.0
            } else {
                p * f(c, j)
            }
        })));
    }
    acc.total() / env.n_companies() as f64
}

/// DiPS with logged propensities.
pub fn variance_dips(
    env: &Environment,
    pi: &Policy,
    pi0: &Policy,
    model: &RewardModel,
) -> Result<AnalyticReport> {
    let q_hat_r = model.q_hat_r()?;
    check_matrix("q_hat_r", q_hat_r, env)?;
    let bias = bias_dips(env, pi, model)?;
    let (noise, spread) = weighted_variance(
        env,
        pi,
        pi0,
        |c, j| env.sigma2_s(c, j) * q_hat_r[[c, j]].powi(2),
        |c, j| env.q_s(c, j) * q_hat_r[[c, j]],
    )?;
    Ok(AnalyticReport::new("dips", bias, noise, spread))
}

/// DPR with logged propensities. The spread term is
/// `V_{pi_0}[w (q_s q_hat_r - q_hat_m)]`, which reduces to
/// `V_{pi_0}[w q_s (q_hat_r - q_r)]` when `q_hat_m = q_m`.
pub fn variance_dpr(
    env: &Environment,
    pi: &Policy,
    pi0: &Policy,
    model: &RewardModel,
) -> Result<AnalyticReport> {
    let q_hat_r = model.q_hat_r()?;
    let q_hat_m = model.q_hat_m()?;
    check_matrix("q_hat_r", q_hat_r, env)?;
    check_matrix("q_hat_m", q_hat_m, env)?;
    let bias = bias_dips(env, pi, model)?;
    let (noise, spread) = weighted_variance(
        env,
        pi,
        pi0,
        |c, j| env.sigma2_s(c, j) * q_hat_r[[c, j]].powi(2),
        |c, j| env.q_s(c, j) * q_hat_r[[c, j]] - q_hat_m[[c, j]],
    )?;
    Ok(AnalyticReport::new("dpr", bias, noise, spread))
}

/// Guaranteed part of the IPS-to-DiPS variance reduction,
/// `|C|^-2 sum_c E_{pi_0}[w^2 q_s sigma_r^2]`. Requires `q_hat_r <= q_r`.
pub fn variance_reduction_bound(
    env: &Environment,
    pi: &Policy,
    pi0: &Policy,
    model: &RewardModel,
) -> Result<f64> {
    let q_hat_r = model.q_hat_r()?;
    check_matrix("q_hat_r", q_hat_r, env)?;
    for ((c, j), &q_hat) in q_hat_r.indexed_iter() {
        if q_hat > env.q_r(c, j) {
            return Err(Error::Overestimation {
                company: c,
                seeker: j,
                q_hat_r: q_hat,
                q_r: env.q_r(c, j),
            });
        }
    }
    let (bound, _) = weighted_variance(
        env,
        pi,
        pi0,
        |c, j| env.q_s(c, j) * env.sigma2_r(c, j),
        |_, _| 0.0,
    )?;
    Ok(bound)
}

/// The bound next to the two variances it is meant to separate.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReductionCheck {
    pub variance_ips: f64,
    pub variance_dips: f64,
    pub bound: f64,
}

impl VarianceReductionCheck {
    pub fn reduction(&self) -> f64 {
        self.variance_ips - self.variance_dips
    }

    /// `Var(IPS) - Var(DiPS) >= bound >= 0`.
    pub fn holds(&self) -> bool {
        self.reduction() >= self.bound && self.bound >= 0.0
    }

    /// Lower bound on the noise-part reduction alone, which always holds
    /// under non-overestimation.
    pub fn noise_reduction_holds(
        env: &Environment,
        pi: &Policy,
        pi0: &Policy,
        model: &RewardModel,
    ) -> Result<bool> {
        let bound = variance_reduction_bound(env, pi, pi0, model)?;
        let ips = variance_ips(env, pi, pi0)?;
        let dips = variance_dips(env, pi, pi0, model)?;
        let noise = |r: &AnalyticReport| r.component("weight_noise").unwrap_or(0.0);
        Ok(noise(&ips) - noise(&dips) >= bound * (1.0 - 1e-12))
    }
}

pub fn check_variance_reduction(
    env: &Environment,
    pi: &Policy,
    pi0: &Policy,
    model: &RewardModel,
) -> Result<VarianceReductionCheck> {
    let bound = variance_reduction_bound(env, pi, pi0, model)?;
    Ok(VarianceReductionCheck {
        variance_ips: variance_ips(env, pi, pi0)?.variance,
        variance_dips: variance_dips(env, pi, pi0, model)?.variance,
        bound,
    })
}

fn ratio_hat(pi0: &Policy, pi0_hat: &Policy, pi: &Policy, c: usize, j: usize) -> Result<f64> {
    let h = pi0_hat.prob(c, j);
    if h > 0.0 {
        Ok(pi0.prob(c, j) / h)
    } else if pi.prob(c, j) == 0.0 {
        Ok(0.0)
    } else {
        Err(Error::ZeroPropensity {
            company: c,
            seeker: j,
        })
    }
}

fn policy_average_checked<F>(env: &Environment, pi: &Policy, f: F) -> Result<f64>
where
    F: Fn(usize, usize) -> Result<f64>,
{
    let mut acc = CompensatedSum::new();
    for c in 0..env.n_companies() {
        let mut row = CompensatedSum::new();
        for j in 0..env.n_seekers() {
            let p = pi.prob(c, j);
            if p != 0.0 {
                row.add(p * f(c, j)?);
            }
        }
        acc.add(row.total());
    }
    Ok(acc.total() / env.n_companies() as f64)
}

/// Bias of IPS when the weights use `pi0_hat`:
/// `|C|^-1 sum_c E_pi[(pi_0 / pi0_hat - 1) q_m]`.
pub fn bias_ips_estimated_pi0(
    env: &Environment,
    pi: &Policy,
    pi0: &Policy,
    pi0_hat: &Policy,
) -> Result<f64> {
    check_policies(env, pi, pi0)?;
    pi0_hat.check_shape(env.n_companies(), env.n_seekers())?;
    policy_average_checked(env, pi, |c, j| {
        Ok((ratio_hat(pi0, pi0_hat, pi, c, j)? - 1.0) * env.q_m(c, j))
    })
}

/// Bias of DiPS with `model.pi0_hat`, in the form
/// `|C|^-1 sum_c E_pi[(pi_0 / pi0_hat) q_s q_hat_r - q_m]`, which stays
/// defined where `q_r = 0`.
pub fn bias_dips_estimated_pi0(
    env: &Environment,
    pi: &Policy,
    pi0: &Policy,
    model: &RewardModel,
) -> Result<f64> {
    check_policies(env, pi, pi0)?;
    let pi0_hat = model.pi0_hat()?;
    pi0_hat.check_shape(env.n_companies(), env.n_seekers())?;
    let q_hat_r = model.q_hat_r()?;
    check_matrix("q_hat_r", q_hat_r, env)?;
    policy_average_checked(env, pi, |c, j| {
        Ok(ratio_hat(pi0, pi0_hat, pi, c, j)? * env.q_s(c, j) * q_hat_r[[c, j]] - env.q_m(c, j))
    })
}

/// Bias of DPR with `model.pi0_hat`:
/// `|C|^-1 sum_c E_pi[(pi_0 / pi0_hat - 1)(q_s q_hat_r - q_hat_m) + q_s (q_hat_r - q_r)]`.
pub fn bias_dpr_estimated_pi0(
    env: &Environment,
    pi: &Policy,
    pi0: &Policy,
    model: &RewardModel,
) -> Result<f64> {
    check_policies(env, pi, pi0)?;
    let pi0_hat = model.pi0_hat()?;
    pi0_hat.check_shape(env.n_companies(), env.n_seekers())?;
    let q_hat_r = model.q_hat_r()?;
    let q_hat_m = model.q_hat_m()?;
    check_matrix("q_hat_r", q_hat_r, env)?;
    check_matrix("q_hat_m", q_hat_m, env)?;
    policy_average_checked(env, pi, |c, j| {
        let (qs, qr, q_hat) = (env.q_s(c, j), env.q_r(c, j), q_hat_r[[c, j]]);
        let ratio = ratio_hat(pi0, pi0_hat, pi, c, j)?;
        Ok((ratio - 1.0) * (qs * q_hat - q_hat_m[[c, j]]) + qs * (q_hat - qr))
    })
}

/// Exact mean and variance of a statistic of the logged dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactMoments {
    pub mean: f64,
    pub variance: f64,
}

/// Largest number of joint outcomes [`enumerate_moments`] will visit.
pub const MAX_ENUMERATION: u128 = 5_000_000;

/// Exact moments of `statistic(dataset)` over every joint outcome of
/// `(j_c, s_c, r_c)` for all companies, logged under `pi0` with its
/// propensities recorded.
pub fn enumerate_moments<F>(env: &Environment, pi0: &Policy, statistic: F) -> Result<ExactMoments>
where
    F: Fn(&LoggedDataset) -> Result<f64>,
{
    pi0.check_shape(env.n_companies(), env.n_seekers())?;
    let per_company: Vec<Vec<(f64, Record)>> = (0..env.n_companies())
        .map(|c| {
            let mut out = Vec::new();
            for j in 0..env.n_seekers() {
                let p = pi0.prob(c, j);
                let (qs, qr) = (env.q_s(c, j), env.q_r(c, j));
                for (prob, s, r) in [
                    (p * (1.0 - qs), false, false),
                    (p * qs * (1.0 - qr), true, false),
                    (p * qs * qr, true, true),
                ] {
                    if prob > 0.0 {
                        out.push((
                            prob,
                            Record {
                                seeker: j,
                                s,
                                r,
                                logging_prob: Some(p),
                            },
                        ));
                    }
                }
            }
            out
        })
        .collect();
    let total: u128 = per_company.iter().map(|o| o.len() as u128).product();
    if total > MAX_ENUMERATION {
        return Err(Error::EnumerationTooLarge(total));
    }

    let n_c = per_company.len();
    let mut index = vec![0usize; n_c];
    let mut outcomes = Vec::with_capacity(total as usize);
    loop {
        let mut prob = 1.0;
        let records: Vec<Record> = (0..n_c)
            .map(|c| {
                let (p, rec) = per_company[c][index[c]];
                prob *= p;
                rec
            })
            .collect();
        let ds = LoggedDataset::new(records, env.n_seekers())?;
        outcomes.push((prob, statistic(&ds)?));
        // Odometer increment.
        let mut c = 0;
        loop {
            if c == n_c {
                let mean = compensated_sum(outcomes.iter().map(|(p, x)| p * x));
                let variance =
                    compensated_sum(outcomes.iter().map(|(p, x)| p * (x - mean).powi(2)));
                return Ok(ExactMoments { mean, variance });
            }
            index[c] += 1;
            if index[c] < per_company[c].len() {
                break;
            }
            index[c] = 0;
            c += 1;
        }
    }
}

/// The ingredients of a replicated estimation experiment.
#[derive(Debug, Clone, Copy)]
pub struct Scenario<'a> {
    pub env: &'a Environment,
    pub target: &'a Policy,
    pub logging: &'a Policy,
    pub model: &'a RewardModel,
    pub propensity_source: PropensitySource,
}

impl<'a> Scenario<'a> {
    pub fn new(
        env: &'a Environment,
        target: &'a Policy,
        logging: &'a Policy,
        model: &'a RewardModel,
    ) -> Self {
        Self {
            env,
            target,
            logging,
            model,
            propensity_source: PropensitySource::Logged,
        }
    }

    pub fn with_propensity_source(mut self, source: PropensitySource) -> Self {
        self.propensity_source = source;
        self
    }

    pub fn true_value(&self) -> Result<f64> {
        true_policy_value(self.env, self.target)
    }

    pub fn input<'d>(&self, dataset: &'d LoggedDataset) -> EstimatorInput<'d>
    where
        'a: 'd,
    {
        EstimatorInput::new(dataset, self.target, self.model)
            .with_propensity_source(self.propensity_source)
            .with_logging_policy(self.logging)
    }

    /// Exact moments of `estimator` by exhaustive enumeration.
    pub fn enumerate(&self, estimator: &Estimator) -> Result<ExactMoments> {
        enumerate_moments(self.env, self.logging, |ds| {
            estimator.estimate(&self.input(ds))
        })
    }
}

/// Estimates of every estimator on `n_reps` datasets; replication `r` uses
/// seed `child_seed(seed, r)`. Indexed `[estimator][replication]`.
pub fn monte_carlo_estimates(
    scenario: &Scenario<'_>,
    estimators: &[Estimator],
    n_reps: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if n_reps == 0 {
        return Err(invalid("n_reps", "must be at least 1"));
    }
    let per_rep: Vec<Vec<f64>> = (0..n_reps)
        .into_par_iter()
        .map(|r| {
            let ds =
                sample_logged_data(scenario.env, scenario.logging, child_seed(seed, r as u64))?;
            let input = scenario.input(&ds);
            estimators.iter().map(|e| e.estimate(&input)).collect()
        })
        .collect::<Result<_>>()?;
    Ok((0..estimators.len())
        .map(|k| per_rep.iter().map(|row| row[k]).collect())
        .collect())
}

/// Empirical moments of one estimator against the true value.
pub fn monte_carlo_profile(
    scenario: &Scenario<'_>,
    estimator: &Estimator,
    n_reps: usize,
    seed: u64,
) -> Result<EmpiricalMoments> {
    let truth = scenario.true_value()?;
    let est = monte_carlo_estimates(scenario, std::slice::from_ref(estimator), n_reps, seed)?;
    Ok(EmpiricalMoments::from_sample(&est[0], truth))
}
