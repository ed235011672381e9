//! Synthetic matching markets.
//!
//! Contexts, weight vectors and interaction matrices are standard normal;
//! the per-pair sparsity offsets `b_s`, `b_r` are uniform on `[0, 2]`. The
//! expected rewards are
//!
//! ```text
//! q_s(c, j) = sigmoid[(x_c - x_c²)·θ_s + (x_c³ + x_c² - x_c) M_s x_jᵀ - θ_sp b_s(c, j)]
//! q_r(c, j) = sigmoid[(x_j³ + x_j² - x_j)·θ_r + (x_j - x_j²) M_r x_cᵀ - θ_sp b_r(c, j)]
//! ```
//!
//! with powers taken elementwise.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::domain::{ContextSet, Environment, LoggedDataset, Policy, Record};
use crate::error::{invalid, Result};
use crate::rng::{child_seed, rng_from_seed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticEnvSpec {
    pub n_companies: usize,
    pub n_seekers: usize,
    pub dim: usize,
    /// Sparsity strength; larger values push both reward surfaces down.
    pub theta_sp: f64,
    /// Inverse temperature of the softmax logging policy.
    pub beta: f64,
    /// Exploration rate of the epsilon-greedy target policy.
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for SyntheticEnvSpec {
    fn default() -> Self {
        Self {
            n_companies: 1000,
            n_seekers: 100,
            dim: 10,
            theta_sp: 2.0,
            beta: -0.5,
            epsilon: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticEnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_companies < 1 {
            return Err(invalid("n_companies", "must be at least 1"));
        }
        if self.n_seekers < 2 {
            return Err(invalid("n_seekers", "must be at least 2"));
        }
        if self.dim < 1 {
            return Err(invalid("dim", "must be at least 1"));
        }
        if !(self.theta_sp >= 0.0 && self.theta_sp.is_finite()) {
            return Err(invalid(
                "theta_sp",
                format!("{} is not a finite value >= 0", self.theta_sp),
            ));
        }
        if !self.beta.is_finite() {
            return Err(invalid("beta", "must be finite"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(invalid(
                "epsilon",
                format!("{} outside [0, 1]", self.epsilon),
            ));
        }
        Ok(())
    }
}

/// The random parameters behind a synthetic environment.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    pub theta_s: Array1<f64>,
    pub theta_r: Array1<f64>,
    pub m_s: Array2<f64>,
    pub m_r: Array2<f64>,
    pub b_s: Array2<f64>,
    pub b_r: Array2<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn normal_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

fn normal_vector(rng: &mut Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || StandardNormal.sample(rng))
}

/// Draws contexts and parameters from `spec.seed` and builds the environment.
///
/// Draw order: company contexts, seeker contexts, θ_s, θ_r, M_s, M_r, b_s,
/// b_r (all row-major).
pub fn generate_environment(spec: &SyntheticEnvSpec) -> Result<(Environment, SyntheticParams)> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let (n_c, n_j, d) = (spec.n_companies, spec.n_seekers, spec.dim);
    let company = normal_matrix(&mut rng, n_c, d);
    let seeker = normal_matrix(&mut rng, n_j, d);
    let theta_s = normal_vector(&mut rng, d);
    let theta_r = normal_vector(&mut rng, d);
    let m_s = normal_matrix(&mut rng, d, d);
    let m_r = normal_matrix(&mut rng, d, d);
    let offset = Uniform::new_inclusive(0.0, 2.0).expect("valid range");
    let b_s = Array2::from_shape_simple_fn((n_c, n_j), || offset.sample(&mut rng));
    let b_r = Array2::from_shape_simple_fn((n_c, n_j), || offset.sample(&mut rng));
    let params = SyntheticParams {
        theta_s,
        theta_r,
        m_s,
        m_r,
        b_s,
        b_r,
    };
    let contexts = ContextSet::new(company, seeker)?;
    let env = build_environment(contexts, &params, spec.theta_sp)?;
    Ok((env, params))
}

fn powers(x: ArrayView1<'_, f64>) -> (Array1<f64>, Array1<f64>) {
    let sq = x.mapv(|v| v * v);
    let cube = x.mapv(|v| v * v * v);
    (sq, cube)
}

/// Evaluates the reward surfaces for given contexts and parameters.
pub fn build_environment(
    contexts: ContextSet,
    params: &SyntheticParams,
    theta_sp: f64,
) -> Result<Environment> {
    let (n_c, n_j) = (contexts.n_companies(), contexts.n_seekers());
    let d = contexts.dim();
    if params.theta_s.len() != d
        || params.m_s.dim() != (d, d)
        || params.m_r.dim() != (d, d)
        || params.b_s.dim() != (n_c, n_j)
        || params.b_r.dim() != (n_c, n_j)
    {
        return Err(crate::Error::Shape(
            "synthetic parameters do not match contexts".into(),
        ));
    }
    // Per-company pieces: (x_c - x_c²)·θ_s and (x_c³ + x_c² - x_c) M_s.
    let mut s_bias = Array1::zeros(n_c);
    let mut s_left = Array2::zeros((n_c, d));
    // x_c as seen from the reply side: M_r x_cᵀ.
    let mut r_right = Array2::zeros((n_c, d));
    for c in 0..n_c {
        let x = contexts.company(c);
        let (sq, cube) = powers(x);
        s_bias[c] = (&x - &sq).dot(&params.theta_s);
        s_left
            .row_mut(c)
            .assign(&(&cube + &sq - x).dot(&params.m_s));
        r_right.row_mut(c).assign(&params.m_r.dot(&x));
    }
    let mut r_bias = Array1::zeros(n_j);
    let mut r_left = Array2::zeros((n_j, d));
    for j in 0..n_j {
        let x = contexts.seeker(j);
        let (sq, cube) = powers(x);
        r_bias[j] = (&cube + &sq - x).dot(&params.theta_r);
        r_left.row_mut(j).assign(&(&x - &sq));
    }
    let mut q_s = Array2::zeros((n_c, n_j));
    let mut q_r = Array2::zeros((n_c, n_j));
    for c in 0..n_c {
        for j in 0..n_j {
            let ls =
                s_bias[c] + s_left.row(c).dot(&contexts.seeker(j)) - theta_sp * params.b_s[[c, j]];
            let lr = r_bias[j] + r_left.row(j).dot(&r_right.row(c)) - theta_sp * params.b_r[[c, j]];
            q_s[[c, j]] = sigmoid(ls);
            q_r[[c, j]] = sigmoid(lr);
        }
    }
    Environment::new(q_s, q_r, contexts)
}

/// `pi_0(j | c) ∝ exp(beta * q_m(c, j))`.
pub fn softmax_logging_policy(env: &Environment, beta: f64) -> Policy {
    let logits = env.q_m_matrix().mapv(|q| beta * q);
    Policy::softmax(&logits, format!("softmax(beta={beta})"))
}

/// Epsilon-greedy on `q_m`; argmax ties go to the lowest seeker index.
pub fn epsilon_greedy_target_policy(env: &Environment, epsilon: f64) -> Result<Policy> {
    epsilon_greedy(&env.q_m_matrix(), epsilon)
}

/// Epsilon-greedy over an arbitrary score matrix.
pub fn epsilon_greedy(scores: &Array2<f64>, epsilon: f64) -> Result<Policy> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(invalid("epsilon", format!("{epsilon} outside [0, 1]")));
    }
    let n_j = scores.ncols();
    let floor = epsilon / n_j as f64;
    let mut probs = Array2::from_elem(scores.dim(), floor);
    for (c, row) in scores.rows().into_iter().enumerate() {
        let mut best = 0;
        for j in 1..n_j {
            if row[j] > row[best] {
                best = j;
            }
        }
        probs[[c, best]] += 1.0 - epsilon;
    }
    Policy::new(probs, format!("epsilon_greedy(eps={epsilon})"))
}

/// Inverse-CDF draw from a probability row; `u` in `[0, 1)`.
pub(crate) fn draw_index(row: ArrayView1<'_, f64>, u: f64) -> usize {
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (j, &p) in row.iter().enumerate() {
        if p > 0.0 {
            last_positive = j;
            cum += p;
            if u < cum {
                return j;
            }
        }
    }
    // Rounding left `cum` slightly below 1.
    last_positive
}

/// Samples the record of one company from its child seed.
pub fn sample_company(env: &Environment, pi0: &Policy, c: usize, seed: u64) -> Record {
    let mut rng = rng_from_seed(child_seed(seed, c as u64));
    let row = pi0.row(c);
    let j = draw_index(row, rng.random::<f64>());
    let s = rng.random::<f64>() < env.q_s(c, j);
    let r_draw = rng.random::<f64>();
    let r = s && r_draw < env.q_r(c, j);
    Record {
        seeker: j,
        s,
        r,
        logging_prob: Some(row[j]),
    }
}

/// Draws one record per company: `j ~ pi_0(·|c)`, `s ~ Bern(q_s)`, and
/// `r ~ Bern(q_r)` if `s = 1` (else `r = 0`).
pub fn sample_logged_data(env: &Environment, pi0: &Policy, seed: u64) -> Result<LoggedDataset> {
    pi0.check_shape(env.n_companies(), env.n_seekers())?;
    let records = (0..env.n_companies())
        .map(|c| sample_company(env, pi0, c, seed))
        .collect();
    LoggedDataset::new(records, env.n_seekers())
}
