//! Off-policy value estimators.
//!
//! Every estimator is an average over companies of a per-record term. The
//! terms are built from shared expressions so that the classical collapses
//! (DR with `q_hat_m = 0` is IPS, Switch-DR with an infinite threshold is DR,
//! MIPS with singleton clusters is IPS, and so on) hold bit-for-bit. Terms are
//! reduced with compensated summation in ascending company order.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::domain::{ContextSet, LoggedDataset, Policy, RewardModel};
use crate::error::{invalid, Error, Result};
use crate::stats::compensated_sum;

/// Where the logging propensities in the importance weights come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensitySource {
    /// `logging_prob` stored on each record.
    #[default]
    Logged,
    /// The estimated logging policy `pi0_hat` of the reward model.
    Estimated,
}

/// Everything an estimator reads.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorInput<'a> {
    pub dataset: &'a LoggedDataset,
    pub target: &'a Policy,
    pub model: &'a RewardModel,
    pub propensity_source: PropensitySource,
    /// Full logging-policy matrix. Only the marginalized estimators need it,
    /// and only under logged propensities.
    pub logging_policy: Option<&'a Policy>,
}

impl<'a> EstimatorInput<'a> {
    pub fn new(dataset: &'a LoggedDataset, target: &'a Policy, model: &'a RewardModel) -> Self {
        Self {
            dataset,
            target,
            model,
            propensity_source: PropensitySource::Logged,
            logging_policy: None,
        }
    }

    pub fn with_propensity_source(mut self, source: PropensitySource) -> Self {
        self.propensity_source = source;
        self
    }

    pub fn with_logging_policy(mut self, logging_policy: &'a Policy) -> Self {
        self.logging_policy = Some(logging_policy);
        self
    }

    fn check(&self) -> Result<()> {
        self.target
            .check_shape(self.dataset.n_companies(), self.dataset.n_seekers())
    }

    fn logging_matrix(&self) -> Result<&'a Policy> {
        let p = match self.propensity_source {
            PropensitySource::Logged => self
                .logging_policy
                .ok_or(Error::MissingModel("logging_policy"))?,
            PropensitySource::Estimated => self.model.pi0_hat()?,
        };
        p.check_shape(self.dataset.n_companies(), self.dataset.n_seekers())?;
        Ok(p)
    }

    /// Importance weights `pi(j_c|c) / pi_0(j_c|c)` of the logged records.
    pub fn weights(&self) -> Result<Weights> {
        self.check()?;
        let pi0_hat = match self.propensity_source {
            PropensitySource::Logged => None,
            PropensitySource::Estimated => {
                let p = self.model.pi0_hat()?;
                p.check_shape(self.dataset.n_companies(), self.dataset.n_seekers())?;
                Some(p)
            }
        };
        let mut out = Weights::default();
        for (c, rec) in self.dataset.records().iter().enumerate() {
            let p0 = match pi0_hat {
                None => rec.logging_prob.ok_or(Error::MissingPropensity(c))?,
                Some(p) => p.prob(c, rec.seeker),
            };
            let w = ratio(
                self.target.prob(c, rec.seeker),
                p0,
                c,
                rec.seeker,
                &mut out.outside_support,
            )?;
            out.values.push(w);
        }
        Ok(out)
    }
}

/// Importance weights plus the number of records outside both supports.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Weights {
    pub values: Vec<f64>,
    /// Records with `pi = pi_0 = 0`; their weight is set to 0.
    pub outside_support: usize,
}

fn ratio(p: f64, p0: f64, c: usize, j: usize, outside: &mut usize) -> Result<f64> {
    if p0 > 0.0 {
        Ok(p / p0)
    } else if p == 0.0 {
        *outside += 1;
        Ok(0.0)
    } else {
        Err(Error::ZeroPropensity {
            company: c,
            seeker: j,
        })
    }
}

/// Value estimate with the count of records outside both supports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub outside_support: usize,
}

/// Assignment of job seekers to embedding clusters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingMap {
    assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl EmbeddingMap {
    pub fn new(assignment: Vec<usize>, n_clusters: usize) -> Result<Self> {
        if n_clusters == 0 {
            return Err(invalid("embedding", "need at least one cluster"));
        }
        let mut members = vec![Vec::new(); n_clusters];
        for (j, &e) in assignment.iter().enumerate() {
            if e >= n_clusters {
                return Err(Error::OutOfRange(format!(
                    "seeker {j} assigned to cluster {e} of {n_clusters}"
                )));
            }
            members[e].push(j);
        }
        if let Some(e) = members.iter().position(Vec::is_empty) {
            return Err(invalid("embedding", format!("cluster {e} is empty")));
        }
        Ok(Self {
            assignment,
            members,
        })
    }

    /// One cluster per seeker.
    pub fn singletons(n_seekers: usize) -> Self {
        Self::new((0..n_seekers).collect(), n_seekers).expect("valid singletons")
    }

    /// Every seeker in one cluster.
    pub fn single_cluster(n_seekers: usize) -> Self {
        Self::new(vec![0; n_seekers], 1).expect("valid single cluster")
    }

    /// `ceil(|J| / 10)`.
    pub fn default_n_clusters(n_seekers: usize) -> usize {
        n_seekers.div_ceil(10).max(1)
    }

    /// Quantile buckets of the seekers' projections on the first principal
    /// direction of their contexts. Ties in the projection go by index.
    pub fn from_principal_direction(contexts: &ContextSet, n_clusters: usize) -> Result<Self> {
        let x = contexts.seeker_matrix();
        let (n_j, d) = x.dim();
        if n_clusters == 0 || n_clusters > n_j {
            return Err(invalid(
                "embedding",
                format!("{n_clusters} clusters for {n_j} seekers"),
            ));
        }
        let means: Vec<f64> = (0..d).map(|k| x.column(k).sum() / n_j as f64).collect();
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for row in x.rows() {
            for a in 0..d {
                for b in 0..d {
                    cov[(a, b)] += (row[a] - means[a]) * (row[b] - means[b]);
                }
            }
        }
        let eig = SymmetricEigen::new(cov);
        let top = (0..d)
            .max_by(|&a, &b| {
                eig.eigenvalues[a]
                    .total_cmp(&eig.eigenvalues[b])
                    .then(b.cmp(&a))
            })
            .expect("dimension at least 1");
        let mut dir: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
        // Fix the eigenvector's sign: its largest-magnitude entry is positive.
        let pivot = (0..d)
            .max_by(|&a, &b| dir[a].abs().total_cmp(&dir[b].abs()).then(b.cmp(&a)))
            .expect("dimension at least 1");
        if dir[pivot] < 0.0 {
            dir.iter_mut().for_each(|v| *v = -*v);
        }
        let proj: Vec<f64> = x
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(&dir).map(|(a, b)| a * b).sum())
            .collect();
        let mut order: Vec<usize> = (0..n_j).collect();
        order.sort_by(|&a, &b| proj[a].total_cmp(&proj[b]).then(a.cmp(&b)));
        let mut assignment = vec![0; n_j];
        for (rank, &j) in order.iter().enumerate() {
            assignment[j] = rank * n_clusters / n_j;
        }
        Self::new(assignment, n_clusters)
    }

    pub fn n_clusters(&self) -> usize {
        self.members.len()
    }

    pub fn n_seekers(&self) -> usize {
        self.assignment.len()
    }

    pub fn cluster_of(&self, j: usize) -> usize {
        self.assignment[j]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn members(&self, e: usize) -> &[usize] {
        &self.members[e]
    }

    fn marginal(&self, policy: &Policy, c: usize, e: usize) -> f64 {
        self.members[e]
            .iter()
            .fold(0.0, |acc, &j| acc + policy.prob(c, j))
    }
}

/// A value estimator together with its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    Dm,
    Ips,
    Dr,
    Dips,
    Dpr,
    SwitchDr { lambda: f64 },
    ExtSwitchDr { lambda: f64 },
    Mips(EmbeddingMap),
    ExtMips(EmbeddingMap),
}

impl Estimator {
    /// Short identifier used in reports and on the command line.
    pub fn id(&self) -> &'static str {
        match self {
            Estimator::Dm => "dm",
            Estimator::Ips => "ips",
            Estimator::Dr => "dr",
            Estimator::Dips => "dips",
            Estimator::Dpr => "dpr",
            Estimator::SwitchDr { .. } => "switch_dr",
            Estimator::ExtSwitchDr { .. } => "ext_switch_dr",
            Estimator::Mips(_) => "mips",
            Estimator::ExtMips(_) => "ext_mips",
        }
    }

    pub fn estimate(&self, input: &EstimatorInput<'_>) -> Result<f64> {
        self.estimate_detailed(input).map(|e| e.value)
    }

    pub fn estimate_detailed(&self, input: &EstimatorInput<'_>) -> Result<Estimate> {
        let terms = self.terms(input)?;
        Ok(Estimate {
            value: compensated_sum(terms.values.iter().copied()) / terms.values.len() as f64,
            outside_support: terms.outside_support,
        })
    }

    /// Per-company terms whose average is the estimate.
    pub fn terms(&self, input: &EstimatorInput<'_>) -> Result<Weights> {
        input.check()?;
        let ds = input.dataset;
        match self {
            Estimator::Dm => {
                let dm = dm_terms(input)?;
                Ok(Weights {
                    values: dm,
                    outside_support: 0,
                })
            }
            Estimator::Ips => {
                let w = input.weights()?;
                let values = zip_records(ds, &w.values, |_, rec, w| w * rec.m_value());
                Ok(Weights { values, ..w })
            }
            Estimator::Dr => {
                let q_hat_m = input.model.q_hat_m()?;
                let w = input.weights()?;
                let dm = dm_terms(input)?;
                let values = zip_records(ds, &w.values, |c, rec, w| {
                    w * (rec.m_value() - q_hat_m[[c, rec.seeker]]) + dm[c]
                });
                Ok(Weights { values, ..w })
            }
            Estimator::Dips => {
                let q_hat_r = input.model.q_hat_r()?;
                let w = input.weights()?;
                let values = zip_records(ds, &w.values, |c, rec, w| {
                    w * (rec.s_value() * q_hat_r[[c, rec.seeker]])
                });
                Ok(Weights { values, ..w })
            }
            Estimator::Dpr => {
                let q_hat_r = input.model.q_hat_r()?;
                let q_hat_m = input.model.q_hat_m()?;
                let w = input.weights()?;
                let dm = dm_terms(input)?;
                let values = zip_records(ds, &w.values, |c, rec, w| {
                    let j = rec.seeker;
                    w * (rec.s_value() * q_hat_r[[c, j]] - q_hat_m[[c, j]]) + dm[c]
                });
                Ok(Weights { values, ..w })
            }
            Estimator::SwitchDr { lambda } => {
                check_lambda(*lambda)?;
                let q_hat_m = input.model.q_hat_m()?;
                let w = input.weights()?;
                let dm = dm_terms(input)?;
                let values = zip_records(ds, &w.values, |c, rec, w| {
                    let correction = if w <= *lambda {
                        w * (rec.m_value() - q_hat_m[[c, rec.seeker]])
                    } else {
                        0.0
                    };
                    correction + dm[c]
                });
                Ok(Weights { values, ..w })
            }
            Estimator::ExtSwitchDr { lambda } => {
                check_lambda(*lambda)?;
                let q_hat_r = input.model.q_hat_r()?;
                let q_hat_m = input.model.q_hat_m()?;
                let w = input.weights()?;
                let dm = dm_terms(input)?;
                let values = zip_records(ds, &w.values, |c, rec, w| {
                    let j = rec.seeker;
                    let correction = if w <= *lambda {
                        w * (rec.s_value() * q_hat_r[[c, j]] - q_hat_m[[c, j]])
                    } else {
                        0.0
                    };
                    correction + dm[c]
                });
                Ok(Weights { values, ..w })
            }
            Estimator::Mips(emb) => {
                let w = marginal_weights(input, emb)?;
                let values = zip_records(ds, &w.values, |_, rec, w| w * rec.m_value());
                Ok(Weights { values, ..w })
            }
            Estimator::ExtMips(emb) => {
                let q_hat_r = input.model.q_hat_r()?;
                let w = marginal_weights(input, emb)?;
                let values = zip_records(ds, &w.values, |c, rec, w| {
                    w * (rec.s_value() * q_hat_r[[c, rec.seeker]])
                });
                Ok(Weights { values, ..w })
            }
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 {
        Ok(())
    } else {
        Err(invalid("lambda", format!("{lambda} is negative")))
    }
}

fn zip_records<F>(ds: &LoggedDataset, weights: &[f64], f: F) -> Vec<f64>
where
    F: Fn(usize, &crate::domain::Record, f64) -> f64,
{
    ds.records()
        .iter()
        .zip(weights)
        .enumerate()
        .map(|(c, (rec, &w))| f(c, rec, w))
        .collect()
}

/// `sum_j pi(j|c) q_hat_m(c, j)` for every company.
fn dm_terms(input: &EstimatorInput<'_>) -> Result<Vec<f64>> {
    let q_hat_m = input.model.q_hat_m()?;
    let (n_c, n_j) = (input.dataset.n_companies(), input.dataset.n_seekers());
    if q_hat_m.dim() != (n_c, n_j) {
        return Err(Error::Shape(format!(
            "q_hat_m is {:?}, dataset is ({n_c}, {n_j})",
            q_hat_m.dim()
        )));
    }
    Ok((0..n_c)
        .map(|c| {
            let row = input.target.row(c);
            compensated_sum((0..n_j).map(|j| row[j] * q_hat_m[[c, j]]))
        })
        .collect())
}

fn marginal_weights(input: &EstimatorInput<'_>, emb: &EmbeddingMap) -> Result<Weights> {
    if emb.n_seekers() != input.dataset.n_seekers() {
        return Err(Error::Shape(format!(
            "embedding covers {} seekers, dataset has {}",
            emb.n_seekers(),
            input.dataset.n_seekers()
        )));
    }
    let logging = input.logging_matrix()?;
    let mut out = Weights::default();
    for (c, rec) in input.dataset.records().iter().enumerate() {
        let e = emb.cluster_of(rec.seeker);
        let p = emb.marginal(input.target, c, e);
        let p0 = emb.marginal(logging, c, e);
        out.values
            .push(ratio(p, p0, c, rec.seeker, &mut out.outside_support)?);
    }
    Ok(out)
}

pub fn estimate_dm(input: &EstimatorInput<'_>) -> Result<f64> {
    Estimator::Dm.estimate(input)
}

pub fn estimate_ips(input: &EstimatorInput<'_>) -> Result<f64> {
    Estimator::Ips.estimate(input)
}

pub fn estimate_dr(input: &EstimatorInput<'_>) -> Result<f64> {
    Estimator::Dr.estimate(input)
}

pub fn estimate_dips(input: &EstimatorInput<'_>) -> Result<f64> {
    Estimator::Dips.estimate(input)
}

pub fn estimate_dpr(input: &EstimatorInput<'_>) -> Result<f64> {
    Estimator::Dpr.estimate(input)
}

/// DR whose correction applies only where `w <= lambda`; the DM term is kept.
pub fn estimate_switch_dr(input: &EstimatorInput<'_>, lambda: f64) -> Result<f64> {
    Estimator::SwitchDr { lambda }.estimate(input)
}

/// DPR whose correction applies only where `w <= lambda`.
pub fn estimate_extended_switch_dr(input: &EstimatorInput<'_>, lambda: f64) -> Result<f64> {
    Estimator::ExtSwitchDr { lambda }.estimate(input)
}

pub fn estimate_mips(input: &EstimatorInput<'_>, emb: &EmbeddingMap) -> Result<f64> {
    Estimator::Mips(emb.clone()).estimate(input)
}

pub fn estimate_extended_mips(input: &EstimatorInput<'_>, emb: &EmbeddingMap) -> Result<f64> {
    Estimator::ExtMips(emb.clone()).estimate(input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{true_policy_value, Environment, Record};
    use ndarray::{array, Array2};

    fn rec(seeker: usize, s: bool, r: bool, p: f64) -> Record {
        Record {
            seeker,
            s,
            r,
            logging_prob: Some(p),
        }
    }

    fn model(q_hat_r: Option<Array2<f64>>, q_hat_m: Option<Array2<f64>>) -> RewardModel {
        RewardModel::new(q_hat_r, q_hat_m, None, None).unwrap()
    }

    #[test]
    fn dm_hand_instance() {
        let ds = LoggedDataset::new(vec![rec(0, false, false, 0.5)], 2).unwrap();
        let pi = Policy::new(array![[0.3, 0.7]], "pi").unwrap();
        let m = model(None, Some(array![[0.5, 0.1]]));
        let v = estimate_dm(&EstimatorInput::new(&ds, &pi, &m)).unwrap();
        assert!((v - 0.22).abs() < 1e-15);
        let zero = model(None, Some(Array2::zeros((1, 2))));
        assert_eq!(
            estimate_dm(&EstimatorInput::new(&ds, &pi, &zero)).unwrap(),
            0.0
        );
    }

    #[test]
    fn dm_with_oracle_model_is_true_value() {
        let ctx = ContextSet::new(Array2::zeros((2, 1)), Array2::zeros((3, 1))).unwrap();
        let env = Environment::new(
            array![[0.2, 0.5, 0.9], [0.4, 0.4, 0.1]],
            array![[0.3, 0.6, 0.2], [0.8, 0.1, 0.5]],
            ctx,
        )
        .unwrap();
        let pi = Policy::new(array![[0.2, 0.3, 0.5], [0.6, 0.2, 0.2]], "pi").unwrap();
        let ds = LoggedDataset::new(vec![rec(0, true, true, 0.3), rec(2, false, false, 0.2)], 3)
            .unwrap();
        let m = RewardModel::oracle(&env);
        let v = estimate_dm(&EstimatorInput::new(&ds, &pi, &m)).unwrap();
        assert!((v - true_policy_value(&env, &pi).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn ips_single_record() {
        let ds = LoggedDataset::new(vec![rec(0, true, true, 0.5)], 2).unwrap();
        let pi = Policy::new(array![[0.9, 0.1]], "pi").unwrap();
        let v = estimate_ips(&EstimatorInput::new(&ds, &pi, &RewardModel::default())).unwrap();
        assert!((v - 1.8).abs() < 1e-15);
    }

    #[test]
    fn ips_on_policy_is_match_rate() {
        let pi0 = Policy::new(array![[0.5, 0.5], [0.25, 0.75], [0.1, 0.9]], "pi0").unwrap();
        let ds = LoggedDataset::new(
            vec![
                rec(0, true, true, 0.5),
                rec(1, true, false, 0.75),
                rec(1, true, true, 0.9),
            ],
            2,
        )
        .unwrap();
        let v = estimate_ips(&EstimatorInput::new(&ds, &pi0, &RewardModel::default())).unwrap();
        assert_eq!(v, ds.match_rate());
    }

    #[test]
    fn dr_hand_instance() {
        // w = 2, m = 1, q_hat_m(c, j_c) = 0.4, sum_j pi q_hat_m = 0.3.
        let ds = LoggedDataset::new(vec![rec(0, true, true, 0.25)], 2).unwrap();
        let pi = Policy::new(array![[0.5, 0.5]], "pi").unwrap();
        let m = model(None, Some(array![[0.4, 0.2]]));
        let v = estimate_dr(&EstimatorInput::new(&ds, &pi, &m)).unwrap();
        assert!((v - 1.5).abs() < 1e-15);
    }

    #[test]
    fn dips_and_dpr_hand_instances() {
        let ds = LoggedDataset::new(vec![rec(0, true, false, 0.25)], 2).unwrap();
        let pi = Policy::new(array![[0.5, 0.5]], "pi").unwrap();
        let m = model(Some(array![[0.3, 0.9]]), Some(array![[0.1, 0.14]]));
        let input = EstimatorInput::new(&ds, &pi, &m);
        assert!((estimate_dips(&input).unwrap() - 0.6).abs() < 1e-15);
        // 2 * (0.3 - 0.1) + 0.12
        assert!((estimate_dpr(&input).unwrap() - 0.52).abs() < 1e-15);
    }

    #[test]
    fn no_scouts_gives_zero() {
        let ds = LoggedDataset::new(
            vec![rec(0, false, false, 0.5), rec(1, false, false, 0.5)],
            2,
        )
        .unwrap();
        let pi = Policy::uniform(2, 2, "u");
        let m = model(Some(Array2::from_elem((2, 2), 0.7)), None);
        let input = EstimatorInput::new(&ds, &pi, &m);
        assert_eq!(estimate_dips(&input).unwrap(), 0.0);
        let emb = EmbeddingMap::single_cluster(2);
        let logging = Policy::uniform(2, 2, "pi0");
        assert_eq!(
            estimate_extended_mips(&input.with_logging_policy(&logging), &emb).unwrap(),
            0.0
        );
    }

    #[test]
    fn switch_dr_mixed_threshold() {
        // Weights 2.0 and 0.5; lambda = 1 keeps only the second correction.
        let ds = LoggedDataset::new(vec![rec(0, true, true, 0.25), rec(1, true, false, 0.5)], 2)
            .unwrap();
        let pi = Policy::new(array![[0.5, 0.5], [0.75, 0.25]], "pi").unwrap();
        let m = model(
            Some(array![[0.5, 0.5], [0.5, 0.5]]),
            Some(array![[0.2, 0.6], [0.4, 0.8]]),
        );
        let input = EstimatorInput::new(&ds, &pi, &m);
        let dm0 = 0.5 * 0.2 + 0.5 * 0.6;
        let dm1 = 0.75 * 0.4 + 0.25 * 0.8;
        let expected = (dm0 + (0.5 * (0.0 - 0.8) + dm1)) / 2.0;
        let v = estimate_switch_dr(&input, 1.0).unwrap();
        assert!((v - expected).abs() < 1e-15);
        // Extended: second record has s q_hat_r = 0.5.
        let expected_ext = (dm0 + (0.5 * (0.5 - 0.8) + dm1)) / 2.0;
        let v = estimate_extended_switch_dr(&input, 1.0).unwrap();
        assert!((v - expected_ext).abs() < 1e-15);
        assert!(estimate_switch_dr(&input, -1.0).is_err());
    }

    #[test]
    fn mips_two_clusters_hand_instance() {
        let emb = EmbeddingMap::new(vec![0, 0, 1, 1], 2).unwrap();
        let pi = Policy::new(
            array![
                [0.1, 0.2, 0.3, 0.4],
                [0.5, 0.3, 0.1, 0.1],
                [0.25, 0.25, 0.25, 0.25]
            ],
            "pi",
        )
        .unwrap();
        let pi0 = Policy::new(
            array![
                [0.4, 0.4, 0.1, 0.1],
                [0.1, 0.1, 0.4, 0.4],
                [0.7, 0.1, 0.1, 0.1]
            ],
            "pi0",
        )
        .unwrap();
        let ds = LoggedDataset::new(
            vec![
                rec(1, true, true, 0.4),
                rec(3, true, true, 0.4),
                rec(2, true, false, 0.1),
            ],
            4,
        )
        .unwrap();
        let m = model(Some(Array2::from_elem((3, 4), 0.5)), None);
        let input = EstimatorInput::new(&ds, &pi, &m).with_logging_policy(&pi0);
        // Marginal ratios: 0.3/0.8, 0.2/0.8, 0.5/0.2.
        let w = [0.3 / 0.8, 0.2 / 0.8, 0.5 / 0.2];
        let mips = (w[0] + w[1]) / 3.0;
        assert!((estimate_mips(&input, &emb).unwrap() - mips).abs() < 1e-15);
        let ext = (w[0] + w[1] + w[2]) * 0.5 / 3.0;
        assert!((estimate_extended_mips(&input, &emb).unwrap() - ext).abs() < 1e-15);
    }

    #[test]
    fn mips_single_cluster_is_mean_reward() {
        let pi = Policy::new(array![[0.9, 0.1], [0.2, 0.8]], "pi").unwrap();
        let pi0 = Policy::uniform(2, 2, "pi0");
        let ds =
            LoggedDataset::new(vec![rec(0, true, true, 0.5), rec(1, true, false, 0.5)], 2).unwrap();
        let m = model(Some(array![[0.3, 0.3], [0.6, 0.6]]), None);
        let input = EstimatorInput::new(&ds, &pi, &m).with_logging_policy(&pi0);
        let emb = EmbeddingMap::single_cluster(2);
        assert_eq!(estimate_mips(&input, &emb).unwrap(), 0.5);
        assert!((estimate_extended_mips(&input, &emb).unwrap() - 0.45).abs() < 1e-15);
    }

    #[test]
    fn mips_needs_logging_matrix() {
        let pi = Policy::uniform(1, 2, "u");
        let ds = LoggedDataset::new(vec![rec(0, true, true, 0.5)], 2).unwrap();
        let m = RewardModel::default();
        let input = EstimatorInput::new(&ds, &pi, &m);
        assert!(matches!(
            estimate_mips(&input, &EmbeddingMap::singletons(2)),
            Err(Error::MissingModel("logging_policy"))
        ));
    }

    #[test]
    fn mips_rejects_zero_logging_mass_cluster() {
        let pi = Policy::uniform(1, 2, "u");
        let pi0 = Policy::new(array![[1.0, 0.0]], "pi0").unwrap();
        let ds = LoggedDataset::new(vec![rec(1, true, true, 0.5)], 2).unwrap();
        let m = RewardModel::default();
        let input = EstimatorInput::new(&ds, &pi, &m).with_logging_policy(&pi0);
        assert!(matches!(
            estimate_mips(&input, &EmbeddingMap::singletons(2)),
            Err(Error::ZeroPropensity {
                company: 0,
                seeker: 1
            })
        ));
    }

    #[test]
    fn estimated_propensities_use_pi0_hat() {
        let pi = Policy::new(array![[0.9, 0.1]], "pi").unwrap();
        let pi0_hat = Policy::new(array![[0.3, 0.7]], "hat").unwrap();
        let ds = LoggedDataset::new(
            vec![Record {
                seeker: 0,
                s: true,
                r: true,
                logging_prob: None,
            }],
            2,
        )
        .unwrap();
        let m = RewardModel::default().with_pi0_hat(pi0_hat);
        let input = EstimatorInput::new(&ds, &pi, &m);
        assert!(matches!(
            estimate_ips(&input),
            Err(Error::MissingPropensity(0))
        ));
        let input = input.with_propensity_source(PropensitySource::Estimated);
        assert!((estimate_ips(&input).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_over_zero_weight_is_counted() {
        let pi = Policy::new(array![[1.0, 0.0]], "pi").unwrap();
        let pi0_hat = Policy::new(array![[1.0, 0.0]], "hat").unwrap();
        let ds = LoggedDataset::new(vec![rec(1, true, true, 0.5)], 2).unwrap();
        let m = RewardModel::default().with_pi0_hat(pi0_hat);
        let input =
            EstimatorInput::new(&ds, &pi, &m).with_propensity_source(PropensitySource::Estimated);
        let e = Estimator::Ips.estimate_detailed(&input).unwrap();
        assert_eq!(
            e,
            Estimate {
                value: 0.0,
                outside_support: 1
            }
        );
    }

    #[test]
    fn missing_models_are_reported() {
        let pi = Policy::uniform(1, 2, "u");
        let ds = LoggedDataset::new(vec![rec(0, true, true, 0.5)], 2).unwrap();
        let m = RewardModel::default();
        let input = EstimatorInput::new(&ds, &pi, &m);
        assert!(matches!(
            estimate_dips(&input),
            Err(Error::MissingModel("q_hat_r"))
        ));
        assert!(matches!(
            estimate_dm(&input),
            Err(Error::MissingModel("q_hat_m"))
        ));
    }

    #[test]
    fn principal_direction_buckets() {
        // Seekers on a line; the buckets follow the order along it.
        let seekers = array![
            [0.0, 0.0],
            [3.0, 3.0],
            [1.0, 1.0],
            [2.0, 2.0],
            [5.0, 5.0],
            [4.0, 4.0]
        ];
        let ctx = ContextSet::new(Array2::zeros((1, 2)), seekers).unwrap();
        let emb = EmbeddingMap::from_principal_direction(&ctx, 3).unwrap();
        assert_eq!(emb.assignment(), &[0, 1, 0, 1, 2, 2]);
        assert_eq!(EmbeddingMap::default_n_clusters(100), 10);
        assert_eq!(EmbeddingMap::default_n_clusters(25), 3);
        assert!(EmbeddingMap::from_principal_direction(&ctx, 7).is_err());
    }

    #[test]
    fn embedding_rejects_empty_cluster() {
        assert!(EmbeddingMap::new(vec![0, 0, 2], 3).is_err());
        assert!(EmbeddingMap::new(vec![0, 3], 2).is_err());
    }
}
