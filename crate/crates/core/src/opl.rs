//! Off-policy learning of linear-softmax policies by gradient ascent on an
//! estimated policy value.
//!
//! Each gradient estimator is the exact `theta`-gradient of its value
//! estimator on a fixed dataset, so a finite-difference check of one against
//! the other is meaningful.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{softmax_in_place, ContextSet, LoggedDataset, Policy, RewardModel};
use crate::error::{invalid, Error, Result};
use crate::models::{write_pair_features, FeatureMode};
use crate::stats::CompensatedSum;

/// Parameters of `pi_theta(j|c) ∝ exp(f(c, j)·theta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicyParams {
    pub theta: Vec<f64>,
    pub feature_mode: FeatureMode,
}

impl SoftmaxPolicyParams {
    /// `theta = 0`, the uniform policy.
    pub fn zeros(dim: usize, feature_mode: FeatureMode) -> Self {
        Self {
            theta: vec![0.0; feature_mode.len(dim)],
            feature_mode,
        }
    }

    fn check(&self, contexts: &ContextSet) -> Result<()> {
        let expected = self.feature_mode.len(contexts.dim());
        if self.theta.len() != expected {
            return Err(Error::Shape(format!(
                "theta has length {}, features have length {expected}",
                self.theta.len()
            )));
        }
        Ok(())
    }
}

/// Pair features and policy probabilities of one company.
struct CompanyView {
    features: Vec<f64>,
    probs: Vec<f64>,
    mean_feature: Vec<f64>,
    p: usize,
}

impl CompanyView {
    fn new(params: &SoftmaxPolicyParams, contexts: &ContextSet, c: usize) -> Self {
        let p = params.theta.len();
        let n_j = contexts.n_seekers();
        let mut features = vec![0.0; n_j * p];
        let mut probs = vec![0.0; n_j];
        for j in 0..n_j {
            let f = &mut features[j * p..(j + 1) * p];
            write_pair_features(contexts, c, j, params.feature_mode, f);
            probs[j] = f.iter().zip(&params.theta).map(|(a, b)| a * b).sum();
        }
        softmax_in_place(&mut probs);
        let mut mean_feature = vec![0.0; p];
        for j in 0..n_j {
            for k in 0..p {
                mean_feature[k] += probs[j] * features[j * p + k];
            }
        }
        Self {
            features,
            probs,
            mean_feature,
            p,
        }
    }

    fn feature(&self, j: usize) -> &[f64] {
        &self.features[j * self.p..(j + 1) * self.p]
    }

    /// `acc += scale * s_theta(c, j)`.
    fn add_score(&self, j: usize, scale: f64, acc: &mut [f64]) {
        for ((a, f), m) in acc.iter_mut().zip(self.feature(j)).zip(&self.mean_feature) {
            *a += scale * (f - m);
        }
    }
}

/// The row-stochastic matrix `pi_theta`.
pub fn policy_probs(params: &SoftmaxPolicyParams, contexts: &ContextSet) -> Result<Policy> {
    params.check(contexts)?;
    let (n_c, n_j) = (contexts.n_companies(), contexts.n_seekers());
    let rows: Vec<Vec<f64>> = (0..n_c)
        .into_par_iter()
        .map(|c| CompanyView::new(params, contexts, c).probs)
        .collect();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let probs = ndarray::Array2::from_shape_vec((n_c, n_j), flat).expect("shape from construction");
    Policy::new(probs, "softmax_policy")
}

/// `grad_theta log pi_theta(j|c) = f(c, j) - E_{pi_theta}[f(c, ·)]`.
pub fn score_function(
    params: &SoftmaxPolicyParams,
    contexts: &ContextSet,
    c: usize,
    j: usize,
) -> Result<Vec<f64>> {
    params.check(contexts)?;
    if c >= contexts.n_companies() || j >= contexts.n_seekers() {
        return Err(Error::OutOfRange(format!("pair ({c}, {j})")));
    }
    let view = CompanyView::new(params, contexts, c);
    let mut out = vec![0.0; view.p];
    view.add_score(j, 1.0, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientEstimator {
    DmPg,
    IpsPg,
    DrPg,
    DipsPg,
    DprPg,
}

impl GradientEstimator {
    pub const ALL: [GradientEstimator; 5] = [
        GradientEstimator::DmPg,
        GradientEstimator::IpsPg,
        GradientEstimator::DrPg,
        GradientEstimator::DipsPg,
        GradientEstimator::DprPg,
    ];

    pub fn id(self) -> &'static str {
        match self {
            GradientEstimator::DmPg => "dm_pg",
            GradientEstimator::IpsPg => "ips_pg",
            GradientEstimator::DrPg => "dr_pg",
            GradientEstimator::DipsPg => "dips_pg",
            GradientEstimator::DprPg => "dpr_pg",
        }
    }

    /// The value estimator this gradient differentiates.
    pub fn value_estimator(self) -> crate::estimators::Estimator {
        use crate::estimators::Estimator;
        match self {
            GradientEstimator::DmPg => Estimator::Dm,
            GradientEstimator::IpsPg => Estimator::Ips,
            GradientEstimator::DrPg => Estimator::Dr,
            GradientEstimator::DipsPg => Estimator::Dips,
            GradientEstimator::DprPg => Estimator::Dpr,
        }
    }
}

impl std::str::FromStr for GradientEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GradientEstimator::ALL
            .into_iter()
            .find(|g| g.id() == s)
            .ok_or_else(|| invalid("gradient estimator", s.to_string()))
    }
}

/// The baseline gradients of [`grad_baseline_pg`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Dm,
    Ips,
    Dr,
}

/// Estimated gradient plus the companion value estimate at the same `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub gradient: Vec<f64>,
    pub value: f64,
}

fn propensity(dataset: &LoggedDataset, model: &RewardModel, c: usize) -> Result<f64> {
    let rec = dataset.record(c);
    let p0 = match rec.logging_prob {
        Some(p) => p,
        None => model
            .pi0_hat()
            .map_err(|_| Error::MissingPropensity(c))?
            .prob(c, rec.seeker),
    };
    if p0 > 0.0 {
        Ok(p0)
    } else {
        Err(Error::ZeroPropensity {
            company: c,
            seeker: rec.seeker,
        })
    }
}

/// Gradient and value of `kind` at `params`. Importance weights use the
/// logged propensity, or `model.pi0_hat` when a record has none, and are
/// capped at `weight_clip` if given.
pub fn estimate_gradient(
    kind: GradientEstimator,
    dataset: &LoggedDataset,
    params: &SoftmaxPolicyParams,
    model: &RewardModel,
    contexts: &ContextSet,
    weight_clip: Option<f64>,
) -> Result<GradientEstimate> {
    params.check(contexts)?;
    let (n_c, n_j) = (dataset.n_companies(), dataset.n_seekers());
    if contexts.n_companies() != n_c || contexts.n_seekers() != n_j {
        return Err(Error::Shape(format!(
            "dataset is ({n_c}, {n_j}), contexts are ({}, {})",
            contexts.n_companies(),
            contexts.n_seekers()
        )));
    }
    let uses_dm = matches!(
        kind,
        GradientEstimator::DmPg | GradientEstimator::DrPg | GradientEstimator::DprPg
    );
    let q_hat_m = if uses_dm {
        Some(model.q_hat_m()?)
    } else {
        None
    };
    let q_hat_r = if matches!(kind, GradientEstimator::DipsPg | GradientEstimator::DprPg) {
        Some(model.q_hat_r()?)
    } else {
        None
    };
    for m in q_hat_m.iter().chain(q_hat_r.iter()) {
        if m.dim() != (n_c, n_j) {
            return Err(Error::Shape(format!("reward model is {:?}", m.dim())));
        }
    }

    let p = params.theta.len();
    let per_company: Vec<(Vec<f64>, f64)> = (0..n_c)
        .into_par_iter()
        .map(|c| -> Result<(Vec<f64>, f64)> {
            let view = CompanyView::new(params, contexts, c);
            let rec = dataset.record(c);
            let j = rec.seeker;
            let mut grad = vec![0.0; p];
            let mut value = 0.0;
            let weighted = match kind {
                GradientEstimator::DmPg => None,
                GradientEstimator::IpsPg => Some(rec.m_value()),
                GradientEstimator::DrPg => Some(rec.m_value() - q_hat_m.unwrap()[[c, j]]),
                GradientEstimator::DipsPg => Some(rec.s_value() * q_hat_r.unwrap()[[c, j]]),
                GradientEstimator::DprPg => {
                    Some(rec.s_value() * q_hat_r.unwrap()[[c, j]] - q_hat_m.unwrap()[[c, j]])
                }
            };
            if let Some(y) = weighted {
                let mut w = view.probs[j] / propensity(dataset, model, c)?;
                if let Some(clip) = weight_clip {
                    w = w.min(clip);
                }
                value += w * y;
                view.add_score(j, w * y, &mut grad);
            }
            if let Some(q) = q_hat_m {
                for k in 0..n_j {
                    let a = view.probs[k] * q[[c, k]];
                    value += a;
                    view.add_score(k, a, &mut grad);
                }
            }
            Ok((grad, value))
        })
        .collect::<Result<_>>()?;

    let mut acc: Vec<CompensatedSum> = vec![CompensatedSum::new(); p];
    let mut value = CompensatedSum::new();
    for (g, v) in &per_company {
        for (a, x) in acc.iter_mut().zip(g) {
            a.add(*x);
        }
        value.add(*v);
    }
    let scale = n_c as f64;
    Ok(GradientEstimate {
        gradient: acc.iter().map(|a| a.total() / scale).collect(),
        value: value.total() / scale,
    })
}

/// `|C|^-1 sum_c w s q_hat_r s_theta(c, j_c)`.
pub fn grad_dips_pg(
    dataset: &LoggedDataset,
    params: &SoftmaxPolicyParams,
    model: &RewardModel,
    contexts: &ContextSet,
) -> Result<Vec<f64>> {
    estimate_gradient(
        GradientEstimator::DipsPg,
        dataset,
        params,
        model,
        contexts,
        None,
    )
    .map(|g| g.gradient)
}

/// DiPS-PG plus the control variate built from `q_hat_m`.
pub fn grad_dpr_pg(
    dataset: &LoggedDataset,
    params: &SoftmaxPolicyParams,
    model: &RewardModel,
    contexts: &ContextSet,
) -> Result<Vec<f64>> {
    estimate_gradient(
        GradientEstimator::DprPg,
        dataset,
        params,
        model,
        contexts,
        None,
    )
    .map(|g| g.gradient)
}

/// DM, IPS or DR policy gradient. The DM gradient is averaged over companies
/// like the DM value.
pub fn grad_baseline_pg(
    dataset: &LoggedDataset,
    params: &SoftmaxPolicyParams,
    model: &RewardModel,
    contexts: &ContextSet,
    kind: BaselineKind,
) -> Result<Vec<f64>> {
    let kind = match kind {
        BaselineKind::Dm => GradientEstimator::DmPg,
        BaselineKind::Ips => GradientEstimator::IpsPg,
        BaselineKind::Dr => GradientEstimator::DrPg,
    };
    estimate_gradient(kind, dataset, params, model, contexts, None).map(|g| g.gradient)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnConfig {
    pub learning_rate: f64,
    pub n_iterations: usize,
    pub gradient_estimator: GradientEstimator,
    /// Seed for the data the learner is run on; the ascent itself is
    /// deterministic full-batch.
    pub seed: u64,
    pub weight_clip: Option<f64>,
    pub feature_mode: FeatureMode,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            n_iterations: 200,
            gradient_estimator: GradientEstimator::DipsPg,
            seed: 0,
            weight_clip: None,
            feature_mode: FeatureMode::ConcatPlusProduct,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(
                "learning_rate",
                format!("{} is not a finite non-negative number", self.learning_rate),
            ));
        }
        if self.n_iterations == 0 {
            return Err(invalid("n_iterations", "must be at least 1"));
        }
        if let Some(clip) = self.weight_clip {
            if clip.is_nan() || clip <= 0.0 {
                return Err(invalid("weight_clip", format!("{clip} is not positive")));
            }
        }
        Ok(())
    }
}

/// Learned parameters and the companion value estimate before every update
/// and after the last one (`n_iterations + 1` entries).
#[derive(Debug, Clone, PartialEq)]
pub struct LearnOutcome {
    pub params: SoftmaxPolicyParams,
    pub trajectory: Vec<f64>,
}

/// Gradient ascent `theta <- theta + eta * g(theta)` from `theta = 0`.
pub fn learn_policy(
    dataset: &LoggedDataset,
    contexts: &ContextSet,
    model: &RewardModel,
    cfg: &LearnConfig,
) -> Result<LearnOutcome> {
    learn_policy_observed(dataset, contexts, model, cfg, |_, _| Ok(()))
}

/// [`learn_policy`] that also hands every iterate (`theta_0` through
/// `theta_n`) to `observe` along with its index.
pub fn learn_policy_observed<F>(
    dataset: &LoggedDataset,
    contexts: &ContextSet,
    model: &RewardModel,
    cfg: &LearnConfig,
    mut observe: F,
) -> Result<LearnOutcome>
where
    F: FnMut(usize, &SoftmaxPolicyParams) -> Result<()>,
{
    cfg.validate()?;
    let mut params = SoftmaxPolicyParams::zeros(contexts.dim(), cfg.feature_mode);
    let mut trajectory = Vec::with_capacity(cfg.n_iterations + 1);
    for t in 0..cfg.n_iterations {
        let g = estimate_gradient(
            cfg.gradient_estimator,
            dataset,
            &params,
            model,
            contexts,
            cfg.weight_clip,
        )?;
        if g.gradient.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(t));
        }
        trajectory.push(g.value);
        observe(t, &params)?;
        for (th, gk) in params.theta.iter_mut().zip(&g.gradient) {
            *th += cfg.learning_rate * gk;
        }
    }
    let last = estimate_gradient(
        cfg.gradient_estimator,
        dataset,
        &params,
        model,
        contexts,
        cfg.weight_clip,
    )?;
    trajectory.push(last.value);
    observe(cfg.n_iterations, &params)?;
    Ok(LearnOutcome { params, trajectory })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Record;
    use crate::estimators::EstimatorInput;
    use crate::rng::rng_from_seed;
    use ndarray::{array, Array2};
    use rand::Rng as _;

    fn contexts() -> ContextSet {
        ContextSet::new(
            array![[0.5, -1.0], [1.5, 0.2], [-0.3, 0.8]],
            array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.5], [0.3, -0.7]],
        )
        .unwrap()
    }

    fn dataset() -> LoggedDataset {
        LoggedDataset::new(
            vec![
                Record {
                    seeker: 1,
                    s: true,
                    r: true,
                    logging_prob: Some(0.3),
                },
                Record {
                    seeker: 3,
                    s: true,
                    r: false,
                    logging_prob: Some(0.2),
                },
                Record {
                    seeker: 0,
                    s: false,
                    r: false,
                    logging_prob: Some(0.4),
                },
            ],
            4,
        )
        .unwrap()
    }

    fn model() -> RewardModel {
        RewardModel::new(
            Some(array![
                [0.2, 0.6, 0.4, 0.9],
                [0.5, 0.1, 0.3, 0.7],
                [0.8, 0.2, 0.6, 0.4]
            ]),
            Some(array![
                [0.05, 0.3, 0.1, 0.2],
                [0.2, 0.05, 0.1, 0.35],
                [0.4, 0.1, 0.2, 0.1]
            ]),
            None,
            None,
        )
        .unwrap()
    }

    fn random_params(seed: u64) -> SoftmaxPolicyParams {
        let mut rng = rng_from_seed(seed);
        SoftmaxPolicyParams {
            theta: (0..7).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
            feature_mode: FeatureMode::ConcatPlusProduct,
        }
    }

    #[test]
    fn zero_theta_is_uniform() {
        let pi = policy_probs(
            &SoftmaxPolicyParams::zeros(2, FeatureMode::Concat),
            &contexts(),
        )
        .unwrap();
        assert!(pi.probs().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn theta_length_is_checked() {
        let bad = SoftmaxPolicyParams {
            theta: vec![0.0; 3],
            feature_mode: FeatureMode::Concat,
        };
        assert!(matches!(
            policy_probs(&bad, &contexts()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn company_block_and_intercept_do_not_change_rows() {
        // The company and intercept coordinates are constant within a row.
        let mut a = random_params(1);
        let pa = policy_probs(&a, &contexts()).unwrap();
        a.theta[0] += 3.0;
        a.theta[6] -= 2.0;
        let pb = policy_probs(&a, &contexts()).unwrap();
        for (x, y) in pa.probs().iter().zip(pb.probs().iter()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn doubling_theta_keeps_argmax() {
        let a = random_params(2);
        let b = SoftmaxPolicyParams {
            theta: a.theta.iter().map(|v| 2.0 * v).collect(),
            ..a.clone()
        };
        let pa = policy_probs(&a, &contexts()).unwrap();
        let pb = policy_probs(&b, &contexts()).unwrap();
        let argmax = |row: ndarray::ArrayView1<f64>| {
            (0..row.len())
                .max_by(|&x, &y| row[x].total_cmp(&row[y]))
                .unwrap()
        };
        for c in 0..3 {
            assert_eq!(argmax(pa.row(c)), argmax(pb.row(c)));
            let (ra, rb) = (pa.row(c), pb.row(c));
            assert!(rb[argmax(rb)] >= ra[argmax(ra)]);
        }
    }

    #[test]
    fn score_identity_and_finite_differences() {
        let ctx = contexts();
        let params = random_params(3);
        let pi = policy_probs(&params, &ctx).unwrap();
        for c in 0..3 {
            let mut total = [0.0; 7];
            for j in 0..4 {
                let s = score_function(&params, &ctx, c, j).unwrap();
                for (t, v) in total.iter_mut().zip(&s) {
                    *t += pi.prob(c, j) * v;
                }
                for (k, &sk) in s.iter().enumerate() {
                    let h = 1e-6;
                    let mut up = params.clone();
                    up.theta[k] += h;
                    let mut down = params.clone();
                    down.theta[k] -= h;
                    let lp = policy_probs(&up, &ctx).unwrap().prob(c, j).ln();
                    let lm = policy_probs(&down, &ctx).unwrap().prob(c, j).ln();
                    let fd = (lp - lm) / (2.0 * h);
                    assert!((fd - sk).abs() <= 1e-6 * sk.abs().max(1.0), "{fd} vs {sk}");
                }
            }
            assert!(total.iter().all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn identical_features_give_zero_score() {
        let ctx = ContextSet::new(array![[1.0]], array![[2.0], [2.0], [2.0]]).unwrap();
        let params = SoftmaxPolicyParams {
            theta: vec![0.3, -0.2, 0.5, 1.0],
            feature_mode: FeatureMode::ConcatPlusProduct,
        };
        assert!(score_function(&params, &ctx, 0, 1)
            .unwrap()
            .iter()
            .all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn gradients_match_finite_differences_of_values() {
        let (ctx, ds, m) = (contexts(), dataset(), model());
        for kind in GradientEstimator::ALL {
            for seed in 0..10 {
                let params = random_params(100 + seed);
                let g = estimate_gradient(kind, &ds, &params, &m, &ctx, None).unwrap();
                let value_at = |p: &SoftmaxPolicyParams| {
                    let pi = policy_probs(p, &ctx).unwrap();
                    kind.value_estimator()
                        .estimate(&EstimatorInput::new(&ds, &pi, &m))
                        .unwrap()
                };
                assert!((g.value - value_at(&params)).abs() < 1e-12);
                for k in 0..7 {
                    let h = 1e-5;
                    let mut up = params.clone();
                    up.theta[k] += h;
                    let mut down = params.clone();
                    down.theta[k] -= h;
                    let fd = (value_at(&up) - value_at(&down)) / (2.0 * h);
                    let tol = 1e-4 * fd.abs().max(g.gradient[k].abs()).max(1e-6);
                    assert!(
                        (fd - g.gradient[k]).abs() <= tol,
                        "{} coord {k}: {fd} vs {}",
                        kind.id(),
                        g.gradient[k]
                    );
                }
            }
        }
    }

    #[test]
    fn collapses() {
        let (ctx, ds, m) = (contexts(), dataset(), model());
        let params = random_params(4);
        let zero_m =
            RewardModel::new(m.q_hat_r.clone(), Some(Array2::zeros((3, 4))), None, None).unwrap();
        let ips = grad_baseline_pg(&ds, &params, &zero_m, &ctx, BaselineKind::Ips).unwrap();
        let dr = grad_baseline_pg(&ds, &params, &zero_m, &ctx, BaselineKind::Dr).unwrap();
        assert_eq!(ips, dr);
        let dips = grad_dips_pg(&ds, &params, &zero_m, &ctx).unwrap();
        let dpr = grad_dpr_pg(&ds, &params, &zero_m, &ctx).unwrap();
        assert_eq!(dips, dpr);

        // All scouts with q_hat_r = 1 turns DiPS-PG into IPS-PG on all-ones rewards.
        let all_ones = LoggedDataset::new(
            ds.records()
                .iter()
                .map(|r| Record {
                    s: true,
                    r: true,
                    ..*r
                })
                .collect(),
            4,
        )
        .unwrap();
        let ones = RewardModel::new(Some(Array2::ones((3, 4))), None, None, None).unwrap();
        assert_eq!(
            grad_dips_pg(&all_ones, &params, &ones, &ctx).unwrap(),
            grad_baseline_pg(&all_ones, &params, &ones, &ctx, BaselineKind::Ips).unwrap()
        );

        let no_scouts = LoggedDataset::new(
            ds.records()
                .iter()
                .map(|r| Record {
                    s: false,
                    r: false,
                    ..*r
                })
                .collect(),
            4,
        )
        .unwrap();
        assert!(grad_dips_pg(&no_scouts, &params, &m, &ctx)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert!(
            grad_baseline_pg(&no_scouts, &params, &m, &ctx, BaselineKind::Ips)
                .unwrap()
                .iter()
                .all(|&v| v == 0.0)
        );
    }

    #[test]
    fn learning_contract() {
        let (ctx, ds, m) = (contexts(), dataset(), model());
        let zero = LearnConfig {
            n_iterations: 0,
            ..LearnConfig::default()
        };
        assert!(learn_policy(&ds, &ctx, &m, &zero).is_err());

        let frozen = LearnConfig {
            learning_rate: 0.0,
            n_iterations: 5,
            ..LearnConfig::default()
        };
        let out = learn_policy(&ds, &ctx, &m, &frozen).unwrap();
        assert!(out.params.theta.iter().all(|&v| v == 0.0));
        assert_eq!(out.trajectory.len(), 6);

        let one = LearnConfig {
            n_iterations: 1,
            ..LearnConfig::default()
        };
        let out = learn_policy(&ds, &ctx, &m, &one).unwrap();
        let g = grad_dips_pg(
            &ds,
            &SoftmaxPolicyParams::zeros(2, FeatureMode::ConcatPlusProduct),
            &m,
            &ctx,
        )
        .unwrap();
        let expected: Vec<f64> = g.iter().map(|v| 0.05 * v).collect();
        assert_eq!(out.params.theta, expected);

        let cfg = LearnConfig {
            n_iterations: 30,
            learning_rate: 0.5,
            ..LearnConfig::default()
        };
        let a = learn_policy(&ds, &ctx, &m, &cfg).unwrap();
        let b = learn_policy(&ds, &ctx, &m, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.trajectory.last().unwrap() > &a.trajectory[0]);
    }

    #[test]
    fn estimated_propensity_fallback() {
        let ctx = contexts();
        let ds = LoggedDataset::new(
            dataset()
                .records()
                .iter()
                .map(|r| Record {
                    logging_prob: None,
                    ..*r
                })
                .collect(),
            4,
        )
        .unwrap();
        let params = random_params(5);
        assert!(matches!(
            grad_dips_pg(&ds, &params, &model(), &ctx),
            Err(Error::MissingPropensity(0))
        ));
        let m = model().with_pi0_hat(Policy::uniform(3, 4, "u"));
        assert!(grad_dips_pg(&ds, &params, &m, &ctx).is_ok());
    }

    #[test]
    fn parses_gradient_ids() {
        for g in GradientEstimator::ALL {
            assert_eq!(g.id().parse::<GradientEstimator>().unwrap(), g);
        }
        assert!("sgd".parse::<GradientEstimator>().is_err());
    }
}
