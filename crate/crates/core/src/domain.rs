//! Shared domain types: contexts, ground-truth environments, policies, logged
//! data and fitted reward models, plus the exact policy value.

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{invalid, Error, Result};
use crate::stats::{compensated_sum, CompensatedSum};

/// Row tolerance for policy normalisation.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Company and job-seeker feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSet {
    company: Array2<f64>,
    seeker: Array2<f64>,
}

impl ContextSet {
    pub fn new(company: Array2<f64>, seeker: Array2<f64>) -> Result<Self> {
        if company.ncols() != seeker.ncols() {
            return Err(Error::Shape(format!(
                "company contexts have dimension {}, seeker contexts {}",
                company.ncols(),
                seeker.ncols()
            )));
        }
        if company.ncols() < 1 {
            return Err(invalid("contexts", "dimension must be at least 1"));
        }
        if company.nrows() < 1 {
            return Err(invalid("contexts", "need at least one company"));
        }
        if seeker.nrows() < 2 {
            return Err(invalid("contexts", "need at least two job seekers"));
        }
        if company.iter().chain(seeker.iter()).any(|x| !x.is_finite()) {
            return Err(invalid("contexts", "non-finite feature"));
        }
        Ok(Self { company, seeker })
    }

    pub fn dim(&self) -> usize {
        self.company.ncols()
    }

    pub fn n_companies(&self) -> usize {
        self.company.nrows()
    }

    pub fn n_seekers(&self) -> usize {
        self.seeker.nrows()
    }

    pub fn company(&self, c: usize) -> ArrayView1<'_, f64> {
        self.company.row(c)
    }

    pub fn seeker(&self, j: usize) -> ArrayView1<'_, f64> {
        self.seeker.row(j)
    }

    pub fn company_matrix(&self) -> &Array2<f64> {
        &self.company
    }

    pub fn seeker_matrix(&self) -> &Array2<f64> {
        &self.seeker
    }
}

fn check_unit_interval(what: &'static str, m: &Array2<f64>) -> Result<()> {
    for ((c, j), &v) in m.indexed_iter() {
        if !(0.0..=1.0).contains(&v) {
            return Err(invalid(
                what,
                format!("entry ({c}, {j}) = {v} outside [0, 1]"),
            ));
        }
    }
    Ok(())
}

/// Ground-truth expected rewards for every (company, seeker) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    q_s: Array2<f64>,
    q_r: Array2<f64>,
    contexts: ContextSet,
}

impl Environment {
    pub fn new(q_s: Array2<f64>, q_r: Array2<f64>, contexts: ContextSet) -> Result<Self> {
        let shape = (contexts.n_companies(), contexts.n_seekers());
        if q_s.dim() != shape || q_r.dim() != shape {
            return Err(Error::Shape(format!(
                "q_s {:?} and q_r {:?} must both be {:?}",
                q_s.dim(),
                q_r.dim(),
                shape
            )));
        }
        check_unit_interval("q_s", &q_s)?;
        check_unit_interval("q_r", &q_r)?;
        Ok(Self { q_s, q_r, contexts })
    }

    pub fn n_companies(&self) -> usize {
        self.q_s.nrows()
    }

    pub fn n_seekers(&self) -> usize {
        self.q_s.ncols()
    }

    pub fn contexts(&self) -> &ContextSet {
        &self.contexts
    }

    pub fn q_s(&self, c: usize, j: usize) -> f64 {
        self.q_s[[c, j]]
    }

    pub fn q_r(&self, c: usize, j: usize) -> f64 {
        self.q_r[[c, j]]
    }

    pub fn q_m(&self, c: usize, j: usize) -> f64 {
        let v = self.q_s[[c, j]] * self.q_r[[c, j]];
        debug_assert!((0.0..=1.0).contains(&v));
        v
    }

    pub fn sigma2_s(&self, c: usize, j: usize) -> f64 {
        let q = self.q_s(c, j);
        q * (1.0 - q)
    }

    pub fn sigma2_r(&self, c: usize, j: usize) -> f64 {
        let q = self.q_r(c, j);
        q * (1.0 - q)
    }

    pub fn sigma2_m(&self, c: usize, j: usize) -> f64 {
        let q = self.q_m(c, j);
        q * (1.0 - q)
    }

    pub fn q_s_matrix(&self) -> &Array2<f64> {
        &self.q_s
    }

    pub fn q_r_matrix(&self) -> &Array2<f64> {
        &self.q_r
    }

    pub fn q_m_matrix(&self) -> Array2<f64> {
        &self.q_s * &self.q_r
    }
}

/// A conditional distribution over job seekers for every company.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: Array2<f64>,
    label: String,
}

impl Policy {
    pub fn new(probs: Array2<f64>, label: impl Into<String>) -> Result<Self> {
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(Error::Shape("policy matrix is empty".into()));
        }
        for (c, row) in probs.axis_iter(Axis(0)).enumerate() {
            if let Some(j) = row.iter().position(|p| !p.is_finite() || *p < 0.0) {
                return Err(invalid(
                    "policy",
                    format!("entry ({c}, {j}) = {} is not a probability", row[j]),
                ));
            }
            let total = compensated_sum(row.iter().copied());
            if (total - 1.0).abs() > ROW_SUM_TOL {
                return Err(invalid("policy", format!("row {c} sums to {total}")));
            }
        }
        Ok(Self {
            probs,
            label: label.into(),
        })
    }

    pub fn uniform(n_companies: usize, n_seekers: usize, label: impl Into<String>) -> Self {
        Self {
            probs: Array2::from_elem((n_companies, n_seekers), 1.0 / n_seekers as f64),
            label: label.into(),
        }
    }

    /// Row-wise max-subtracted softmax of `logits`.
    pub fn softmax(logits: &Array2<f64>, label: impl Into<String>) -> Self {
        let mut probs = logits.clone();
        for mut row in probs.axis_iter_mut(Axis(0)) {
            softmax_in_place(row.as_slice_mut().expect("standard layout"));
        }
        Self {
            probs,
            label: label.into(),
        }
    }

    /// `alpha * a + (1 - alpha) * b`.
    pub fn mixture(a: &Policy, b: &Policy, alpha: f64) -> Result<Self> {
        if a.probs.dim() != b.probs.dim() {
            return Err(Error::Shape(
                "mixture of policies with different shapes".into(),
            ));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(invalid("mixture weight", alpha.to_string()));
        }
        Policy::new(
            &a.probs * alpha + &b.probs * (1.0 - alpha),
            format!("mix({}, {})", a.label, b.label),
        )
    }

    pub fn n_companies(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_seekers(&self) -> usize {
        self.probs.ncols()
    }

    pub fn prob(&self, c: usize, j: usize) -> f64 {
        self.probs[[c, j]]
    }

    pub fn row(&self, c: usize) -> ArrayView1<'_, f64> {
        self.probs.row(c)
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub(crate) fn check_shape(&self, n_companies: usize, n_seekers: usize) -> Result<()> {
        if self.probs.dim() != (n_companies, n_seekers) {
            return Err(Error::Shape(format!(
                "policy `{}` is {:?}, expected ({n_companies}, {n_seekers})",
                self.label,
                self.probs.dim()
            )));
        }
        Ok(())
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// One logged interaction; the record's position in the dataset is the
/// company index.
///
/// `r` is stored as `false` whenever `s` is `false`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub seeker: usize,
    pub s: bool,
    pub r: bool,
    /// Logging propensity of `seeker`, if it was recorded.
    pub logging_prob: Option<f64>,
}

impl Record {
    pub fn m(&self) -> bool {
        self.s && self.r
    }

    pub fn s_value(&self) -> f64 {
        f64::from(u8::from(self.s))
    }

    pub fn r_value(&self) -> f64 {
        f64::from(u8::from(self.r))
    }

    pub fn m_value(&self) -> f64 {
        f64::from(u8::from(self.m()))
    }
}

/// Logged bandit feedback: exactly one record per company.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedDataset {
    records: Vec<Record>,
    n_seekers: usize,
}

impl LoggedDataset {
    pub fn new(records: Vec<Record>, n_seekers: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(invalid("dataset", "no records"));
        }
        if n_seekers < 2 {
            return Err(invalid("dataset", "need at least two job seekers"));
        }
        for (c, rec) in records.iter().enumerate() {
            if rec.seeker >= n_seekers {
                return Err(Error::OutOfRange(format!(
                    "company {c} logged seeker {} but there are {n_seekers} seekers",
                    rec.seeker
                )));
            }
            if !rec.s && rec.r {
                return Err(invalid(
                    "record",
                    format!("company {c} has s = 0 and r = 1; m = s * r requires r = 0 when s = 0"),
                ));
            }
            if let Some(p) = rec.logging_prob {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(invalid(
                        "record",
                        format!("company {c} has logging probability {p} outside (0, 1]"),
                    ));
                }
            }
        }
        Ok(Self { records, n_seekers })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_companies(&self) -> usize {
        self.records.len()
    }

    pub fn n_seekers(&self) -> usize {
        self.n_seekers
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn record(&self, c: usize) -> &Record {
        &self.records[c]
    }

    /// True if every record carries its logging propensity.
    pub fn has_logged_propensities(&self) -> bool {
        self.records.iter().all(|r| r.logging_prob.is_some())
    }

    pub fn match_rate(&self) -> f64 {
        compensated_sum(self.records.iter().map(Record::m_value)) / self.len() as f64
    }
}

/// Fitted (or oracle) reward surfaces and, optionally, an estimated logging
/// policy. Every component is optional; estimators report which one they
/// are missing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewardModel {
    pub q_hat_r: Option<Array2<f64>>,
    pub q_hat_m: Option<Array2<f64>>,
    pub q_hat_s: Option<Array2<f64>>,
    pub pi0_hat: Option<Policy>,
}

impl RewardModel {
    pub fn new(
        q_hat_r: Option<Array2<f64>>,
        q_hat_m: Option<Array2<f64>>,
        q_hat_s: Option<Array2<f64>>,
        pi0_hat: Option<Policy>,
    ) -> Result<Self> {
        let mut shape = None;
        for (name, m) in [
            ("q_hat_r", &q_hat_r),
            ("q_hat_m", &q_hat_m),
            ("q_hat_s", &q_hat_s),
        ] {
            if let Some(m) = m {
                check_unit_interval(name, m)?;
                match shape {
                    None => shape = Some(m.dim()),
                    Some(s) if s != m.dim() => {
                        return Err(Error::Shape(format!(
                            "{name} is {:?}, expected {s:?}",
                            m.dim()
                        )))
                    }
                    _ => {}
                }
            }
        }
        if let (Some(s), Some(p)) = (shape, &pi0_hat) {
            p.check_shape(s.0, s.1)?;
        }
        Ok(Self {
            q_hat_r,
            q_hat_m,
            q_hat_s,
            pi0_hat,
        })
    }

    /// Reward model equal to the ground truth.
    pub fn oracle(env: &Environment) -> Self {
        Self {
            q_hat_r: Some(env.q_r_matrix().clone()),
            q_hat_m: Some(env.q_m_matrix()),
            q_hat_s: Some(env.q_s_matrix().clone()),
            pi0_hat: None,
        }
    }

    pub fn with_pi0_hat(mut self, pi0_hat: Policy) -> Self {
        self.pi0_hat = Some(pi0_hat);
        self
    }

    pub fn q_hat_r(&self) -> Result<&Array2<f64>> {
        self.q_hat_r.as_ref().ok_or(Error::MissingModel("q_hat_r"))
    }

    pub fn q_hat_m(&self) -> Result<&Array2<f64>> {
        self.q_hat_m.as_ref().ok_or(Error::MissingModel("q_hat_m"))
    }

    pub fn q_hat_s(&self) -> Result<&Array2<f64>> {
        self.q_hat_s.as_ref().ok_or(Error::MissingModel("q_hat_s"))
    }

    pub fn pi0_hat(&self) -> Result<&Policy> {
        self.pi0_hat.as_ref().ok_or(Error::MissingModel("pi0_hat"))
    }
}

/// Expected matches per company under `pi`.
pub fn true_policy_value(env: &Environment, pi: &Policy) -> Result<f64> {
    pi.check_shape(env.n_companies(), env.n_seekers())?;
    let mut acc = CompensatedSum::new();
    for c in 0..env.n_companies() {
        let row = pi.row(c);
        acc.add(compensated_sum(
            (0..env.n_seekers()).map(|j| row[j] * env.q_s(c, j) * env.q_r(c, j)),
        ));
    }
    Ok(acc.total() / env.n_companies() as f64)
}

/// `pi(j_c | c) / pi_0(j_c | c)` for every logged record, using the logged
/// propensities.
pub fn importance_weights(pi: &Policy, dataset: &LoggedDataset) -> Result<Vec<f64>> {
    pi.check_shape(dataset.n_companies(), dataset.n_seekers())?;
    dataset
        .records()
        .iter()
        .enumerate()
        .map(|(c, rec)| {
            let p0 = rec.logging_prob.ok_or(Error::MissingPropensity(c))?;
            if p0 <= 0.0 {
                return Err(Error::ZeroPropensity {
                    company: c,
                    seeker: rec.seeker,
                });
            }
            Ok(pi.prob(c, rec.seeker) / p0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn contexts(n_c: usize, n_j: usize) -> ContextSet {
        ContextSet::new(Array2::zeros((n_c, 2)), Array2::zeros((n_j, 2))).unwrap()
    }

    fn env(q_s: Array2<f64>, q_r: Array2<f64>) -> Environment {
        let (c, j) = q_s.dim();
        Environment::new(q_s, q_r, contexts(c, j)).unwrap()
    }

    #[test]
    fn value_all_ones_is_one() {
        let e = env(Array2::ones((3, 4)), Array2::ones((3, 4)));
        let pi = Policy::new(
            array![
                [0.1, 0.2, 0.3, 0.4],
                [1.0, 0.0, 0.0, 0.0],
                [0.25, 0.25, 0.25, 0.25]
            ],
            "pi",
        )
        .unwrap();
        assert_eq!(true_policy_value(&e, &pi).unwrap(), 1.0);
    }

    #[test]
    fn value_without_scouts_is_zero() {
        let e = env(Array2::zeros((2, 3)), Array2::ones((2, 3)));
        let pi = Policy::uniform(2, 3, "u");
        assert_eq!(true_policy_value(&e, &pi).unwrap(), 0.0);
    }

    #[test]
    fn value_hand_instance() {
        let e = env(array![[0.8, 0.4]], array![[0.5, 0.25]]);
        let pi = Policy::new(array![[0.5, 0.5]], "pi").unwrap();
        assert!((true_policy_value(&e, &pi).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn value_rejects_shape_mismatch() {
        let e = env(Array2::ones((2, 3)), Array2::ones((2, 3)));
        let pi = Policy::uniform(2, 4, "u");
        assert!(matches!(true_policy_value(&e, &pi), Err(Error::Shape(_))));
    }

    #[test]
    fn environment_rejects_out_of_range() {
        let r = Environment::new(array![[0.5, 1.5]], array![[0.5, 0.5]], contexts(1, 2));
        assert!(r.is_err());
    }

    #[test]
    fn policy_rejects_bad_rows() {
        assert!(Policy::new(array![[0.5, 0.4]], "p").is_err());
        assert!(Policy::new(array![[1.5, -0.5]], "p").is_err());
        assert!(Policy::new(array![[0.5, 0.5 + 5e-10]], "p").is_ok());
    }

    fn record(seeker: usize, s: bool, r: bool, p: f64) -> Record {
        Record {
            seeker,
            s,
            r,
            logging_prob: Some(p),
        }
    }

    #[test]
    fn weights_identity_policy() {
        let pi0 = Policy::new(array![[0.3, 0.7], [0.6, 0.4]], "pi0").unwrap();
        let ds = LoggedDataset::new(
            vec![record(1, true, false, 0.7), record(0, false, false, 0.6)],
            2,
        )
        .unwrap();
        assert_eq!(importance_weights(&pi0, &ds).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn weights_ratio_and_zero() {
        let pi = Policy::new(array![[0.9, 0.1], [1.0, 0.0]], "pi").unwrap();
        let ds = LoggedDataset::new(
            vec![record(0, true, true, 0.5), record(1, false, false, 0.5)],
            2,
        )
        .unwrap();
        let w = importance_weights(&pi, &ds).unwrap();
        assert!((w[0] - 1.8).abs() < 1e-15);
        assert_eq!(w[1], 0.0);
    }

    #[test]
    fn dataset_rejects_reply_without_scout_and_zero_propensity() {
        assert!(LoggedDataset::new(vec![record(0, false, true, 0.5)], 2).is_err());
        assert!(LoggedDataset::new(vec![record(0, true, true, 0.0)], 2).is_err());
        assert!(LoggedDataset::new(vec![record(2, true, true, 0.5)], 2).is_err());
        assert!(LoggedDataset::new(vec![], 2).is_err());
    }

    #[test]
    fn weights_require_logged_propensity() {
        let ds = LoggedDataset::new(
            vec![Record {
                seeker: 0,
                s: true,
                r: false,
                logging_prob: None,
            }],
            2,
        )
        .unwrap();
        let pi = Policy::uniform(1, 2, "u");
        assert!(matches!(
            importance_weights(&pi, &ds),
            Err(Error::MissingPropensity(0))
        ));
    }

    fn random_policy(rows: usize, cols: usize) -> impl Strategy<Value = Policy> {
        prop::collection::vec(0.01f64..1.0, rows * cols).prop_map(move |v| {
            let logits = Array2::from_shape_vec((rows, cols), v).unwrap();
            let mut p = logits.clone();
            for mut row in p.axis_iter_mut(Axis(0)) {
                let s: f64 = row.sum();
                row.mapv_inplace(|x| x / s);
            }
            Policy::new(p, "random").unwrap()
        })
    }

    proptest! {
        #[test]
        fn value_is_linear_in_policy(
            a in random_policy(3, 4),
            b in random_policy(3, 4),
            qs in prop::collection::vec(0.0f64..=1.0, 12),
            qr in prop::collection::vec(0.0f64..=1.0, 12),
            alpha in 0.0f64..=1.0,
        ) {
            let e = env(
                Array2::from_shape_vec((3, 4), qs).unwrap(),
                Array2::from_shape_vec((3, 4), qr).unwrap(),
            );
            let mix = Policy::mixture(&a, &b, alpha).unwrap();
            let lhs = true_policy_value(&e, &mix).unwrap();
            let rhs = alpha * true_policy_value(&e, &a).unwrap()
                + (1.0 - alpha) * true_policy_value(&e, &b).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
            let cap = (0..3)
                .map(|c| (0..4).map(|j| e.q_m(c, j)).fold(0.0, f64::max))
                .sum::<f64>() / 3.0;
            prop_assert!(lhs >= 0.0 && lhs <= cap + 1e-12);
        }

        #[test]
        fn constructors_keep_rows_stochastic(p in random_policy(4, 5)) {
            for row in p.probs().axis_iter(Axis(0)) {
                prop_assert!((row.sum() - 1.0).abs() < ROW_SUM_TOL);
            }
            let sm = Policy::softmax(p.probs(), "sm");
            for row in sm.probs().axis_iter(Axis(0)) {
                prop_assert!((row.sum() - 1.0).abs() < ROW_SUM_TOL);
            }
        }
    }
}
