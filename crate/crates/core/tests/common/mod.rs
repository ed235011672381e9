//! Random small instances and brute-force reference formulas shared by the
//! integration tests.

#![allow(dead_code)]

use matchope_core::rng::{rng_from_seed, Rng};
use matchope_core::{ContextSet, Environment, LoggedDataset, Policy, Record, RewardModel};
use ndarray::Array2;
use rand::Rng as _;

pub struct Instance {
    pub env: Environment,
    pub pi: Policy,
    pub pi0: Policy,
    pub pi0_hat: Policy,
    pub q_hat_r: Array2<f64>,
    pub q_hat_m: Array2<f64>,
}

impl Instance {
    pub fn model(&self) -> RewardModel {
        RewardModel::new(
            Some(self.q_hat_r.clone()),
            Some(self.q_hat_m.clone()),
            None,
            Some(self.pi0_hat.clone()),
        )
        .unwrap()
    }
}

fn prob(rng: &mut Rng) -> f64 {
    match rng.random_range(0..8) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random(),
    }
}

fn fill(rng: &mut Rng, n_c: usize, n_j: usize, mut f: impl FnMut(&mut Rng) -> f64) -> Array2<f64> {
    Array2::from_shape_fn((n_c, n_j), |_| f(rng))
}

fn rows_normalized(mut m: Array2<f64>) -> Array2<f64> {
    for mut row in m.rows_mut() {
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    m
}

/// `n_c` in `1..=max_c`, `n_j` in `2..=max_j`; the target may leave some
/// seekers unsupported, the logging policy never does.
pub fn instance(seed: u64, max_c: usize, max_j: usize) -> Instance {
    let mut rng = rng_from_seed(seed);
    let n_c = rng.random_range(1..=max_c);
    let n_j = rng.random_range(2..=max_j);
    let q_s = fill(&mut rng, n_c, n_j, prob);
    let q_r = fill(&mut rng, n_c, n_j, prob);
    let ctx = ContextSet::new(
        fill(&mut rng, n_c, 2, |r| r.random_range(-1.0..1.0)),
        fill(&mut rng, n_j, 2, |r| r.random_range(-1.0..1.0)),
    )
    .unwrap();
    let env = Environment::new(q_s, q_r, ctx).unwrap();
    let mut pi = fill(&mut rng, n_c, n_j, |r| {
        if r.random_bool(0.3) {
            0.0
        } else {
            r.random()
        }
    });
    for mut row in pi.rows_mut() {
        if row.sum() == 0.0 {
            row[n_j - 1] = 1.0;
        }
    }
    let pi0 = fill(&mut rng, n_c, n_j, |r| r.random_range(0.05..1.0));
    let pi0_hat = fill(&mut rng, n_c, n_j, |r| r.random_range(0.05..1.0));
    Instance {
        env,
        pi: Policy::new(rows_normalized(pi), "pi").unwrap(),
        pi0: Policy::new(rows_normalized(pi0), "pi0").unwrap(),
        pi0_hat: Policy::new(rows_normalized(pi0_hat), "pi0_hat").unwrap(),
        q_hat_r: fill(&mut rng, n_c, n_j, prob),
        q_hat_m: fill(&mut rng, n_c, n_j, prob),
    }
}

/// Every joint outcome of one logged dataset with its probability.
pub fn all_outcomes(
    env: &Environment,
    pi0: &Policy,
    with_propensity: bool,
) -> Vec<(f64, LoggedDataset)> {
    let (n_c, n_j) = (env.n_companies(), env.n_seekers());
    let per_company: Vec<Vec<(f64, Record)>> = (0..n_c)
        .map(|c| {
            let mut v = Vec::new();
            for j in 0..n_j {
                let (p, qs, qr) = (pi0.prob(c, j), env.q_s(c, j), env.q_r(c, j));
                let logging_prob = with_propensity.then_some(p);
                for (s, r, ps) in [
                    (false, false, 1.0 - qs),
                    (true, false, qs * (1.0 - qr)),
                    (true, true, qs * qr),
                ] {
                    let w = p * ps;
                    if w > 0.0 {
                        v.push((
                            w,
                            Record {
                                seeker: j,
                                s,
                                r,
                                logging_prob,
                            },
                        ));
                    }
                }
            }
            v
        })
        .collect();
    let mut out = vec![(1.0, Vec::new())];
    for options in &per_company {
        let mut next = Vec::with_capacity(out.len() * options.len());
        for (p, recs) in &out {
            for (q, rec) in options {
                let mut r = recs.clone();
                r.push(*rec);
                next.push((p * q, r));
            }
        }
        out = next;
    }
    out.into_iter()
        .map(|(p, recs)| (p, LoggedDataset::new(recs, n_j).unwrap()))
        .collect()
}

/// Mean and variance of `f` over the weighted outcomes.
pub fn moments(outcomes: &[(f64, LoggedDataset)], f: impl Fn(&LoggedDataset) -> f64) -> (f64, f64) {
    let values: Vec<(f64, f64)> = outcomes.iter().map(|(p, d)| (*p, f(d))).collect();
    let mean: f64 = values.iter().map(|(p, v)| p * v).sum();
    let var: f64 = values.iter().map(|(p, v)| p * (v - mean).powi(2)).sum();
    (mean, var)
}

pub fn true_value(env: &Environment, pi: &Policy) -> f64 {
    let mut total = 0.0;
    for c in 0..env.n_companies() {
        for j in 0..env.n_seekers() {
            total += pi.prob(c, j) * env.q_s(c, j) * env.q_r(c, j);
        }
    }
    total / env.n_companies() as f64
}

/// Which reference estimator to evaluate.
#[derive(Clone, Copy, Debug)]
pub enum Naive {
    Dm,
    Ips,
    Dr,
    Dips,
    Dpr,
}

/// Textbook per-record formulas; `propensity` supplies the denominator of
/// the importance weight.
pub fn naive_estimate(
    kind: Naive,
    ds: &LoggedDataset,
    pi: &Policy,
    propensity: &Policy,
    q_hat_r: &Array2<f64>,
    q_hat_m: &Array2<f64>,
) -> f64 {
    let n_c = ds.n_companies();
    let mut total = 0.0;
    for (c, rec) in ds.records().iter().enumerate() {
        let j = rec.seeker;
        let w = pi.prob(c, j) / propensity.prob(c, j);
        let s = if rec.s { 1.0 } else { 0.0 };
        let m = if rec.s && rec.r { 1.0 } else { 0.0 };
        let dm: f64 = (0..ds.n_seekers())
            .map(|k| pi.prob(c, k) * q_hat_m[[c, k]])
            .sum();
        total += match kind {
            Naive::Dm => dm,
            Naive::Ips => w * m,
            Naive::Dr => w * (m - q_hat_m[[c, j]]) + dm,
            Naive::Dips => w * s * q_hat_r[[c, j]],
            Naive::Dpr => w * (s * q_hat_r[[c, j]] - q_hat_m[[c, j]]) + dm,
        };
    }
    total / n_c as f64
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!(
        (a - b).abs() <= tol * b.abs().max(1.0),
        "{what}: {a:e} vs {b:e} (gap {:e})",
        (a - b).abs()
    );
}
