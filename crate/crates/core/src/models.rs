//! Cross-fitted reward models and logging-policy estimation.
//!
//! Companies are split into folds by a hash of their index. The prediction
//! row of every company comes from a model trained on the other folds only.
//! The default learner is L2-regularised logistic regression on pair
//! features, solved by damped Newton iterations; other learners plug in via
//! [`Trainer`].

use log::warn;
use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{ContextSet, LoggedDataset, Policy, RewardModel};
use crate::error::{invalid, Error, Result};
use crate::rng::splitmix64;
use crate::synth::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// `[x_c ‖ x_j ‖ 1]`
    Concat,
    /// `[x_c ‖ x_j ‖ x_c ⊙ x_j ‖ 1]`
    #[default]
    ConcatPlusProduct,
}

impl FeatureMode {
    pub fn len(self, dim: usize) -> usize {
        match self {
            FeatureMode::Concat => 2 * dim + 1,
            FeatureMode::ConcatPlusProduct => 3 * dim + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub n_folds: usize,
    pub l2_penalty: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    pub feature_mode: FeatureMode,
    pub clamp_min: f64,
    /// Post-hoc shrinkage `q_hat_r <- gamma * q_hat_r`, `gamma` in `(0, 1]`.
    pub r_shrink: f64,
    /// Also fit the first-stage model `q_hat_s`.
    pub fit_first_stage: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_folds: 5,
            l2_penalty: 1.0,
            max_iters: 500,
            tolerance: 1e-8,
            feature_mode: FeatureMode::ConcatPlusProduct,
            clamp_min: 1e-4,
            r_shrink: 1.0,
            fit_first_stage: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_folds < 2 {
            return Err(invalid("n_folds", "must be at least 2"));
        }
        if !(self.l2_penalty > 0.0 && self.l2_penalty.is_finite()) {
            return Err(invalid("l2_penalty", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "must be at least 1"));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(invalid("tolerance", "must be positive"));
        }
        if !(self.clamp_min > 0.0 && self.clamp_min < 0.5) {
            return Err(invalid(
                "clamp_min",
                format!("{} outside (0, 0.5)", self.clamp_min),
            ));
        }
        if !(self.r_shrink > 0.0 && self.r_shrink <= 1.0) {
            return Err(invalid(
                "r_shrink",
                format!("{} outside (0, 1]", self.r_shrink),
            ));
        }
        Ok(())
    }

    fn trainer(&self) -> LogisticRegression {
        LogisticRegression {
            l2_penalty: self.l2_penalty,
            max_iters: self.max_iters,
            tolerance: self.tolerance,
        }
    }
}

pub(crate) fn write_pair_features(
    contexts: &ContextSet,
    c: usize,
    j: usize,
    mode: FeatureMode,
    out: &mut [f64],
) {
    let d = contexts.dim();
    let xc = contexts.company(c);
    let xj = contexts.seeker(j);
    for k in 0..d {
        out[k] = xc[k];
        out[d + k] = xj[k];
    }
    let tail = match mode {
        FeatureMode::Concat => 2 * d,
        FeatureMode::ConcatPlusProduct => {
            for k in 0..d {
                out[2 * d + k] = xc[k] * xj[k];
            }
            3 * d
        }
    };
    out[tail] = 1.0;
}

/// Feature vector of the pair `(c, j)`, ending with a constant intercept.
pub fn build_pair_features(
    contexts: &ContextSet,
    c: usize,
    j: usize,
    mode: FeatureMode,
) -> Result<Vec<f64>> {
    if c >= contexts.n_companies() || j >= contexts.n_seekers() {
        return Err(Error::OutOfRange(format!(
            "pair ({c}, {j}) with {} companies and {} seekers",
            contexts.n_companies(),
            contexts.n_seekers()
        )));
    }
    let mut out = vec![0.0; mode.len(contexts.dim())];
    write_pair_features(contexts, c, j, mode, &mut out);
    Ok(out)
}

/// Fold of company `c`; a hash of the index, not of iteration order.
pub fn fold_of(c: usize, n_folds: usize) -> usize {
    (splitmix64(c as u64 ^ 0x5EED_F01D) % n_folds as u64) as usize
}

/// A fitted binary-probability model over pair features.
pub trait PairScorer: Send + Sync {
    fn predict(&self, features: ArrayView1<'_, f64>) -> f64;

    /// Predictions for `(c, j)` for every seeker `j`.
    fn predict_row(&self, contexts: &ContextSet, c: usize, mode: FeatureMode, out: &mut [f64]) {
        let mut f = vec![0.0; mode.len(contexts.dim())];
        for (j, o) in out.iter_mut().enumerate() {
            write_pair_features(contexts, c, j, mode, &mut f);
            *o = self.predict(ArrayView1::from(&f[..]));
        }
    }
}

/// Something that can fit a [`PairScorer`] from labelled feature rows.
pub trait Trainer: Sync {
    fn train(&self, features: &Array2<f64>, labels: &[f64]) -> Result<Box<dyn PairScorer>>;
}

/// L2-penalised logistic regression (intercept included in the penalty).
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    pub l2_penalty: f64,
    pub max_iters: usize,
    pub tolerance: f64,
}

#[derive(Debug, Clone)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
}

impl PairScorer for LogisticModel {
    fn predict(&self, features: ArrayView1<'_, f64>) -> f64 {
        sigmoid(features.dot(&ArrayView1::from(&self.weights[..])))
    }

    fn predict_row(&self, contexts: &ContextSet, c: usize, mode: FeatureMode, out: &mut [f64]) {
        let d = contexts.dim();
        let w = &self.weights;
        let xc = contexts.company(c);
        let mut base = w[mode.len(d) - 1];
        for k in 0..d {
            base += w[k] * xc[k];
        }
        // Per-seeker weights fold the product block into the x_j block.
        let mut wj = vec![0.0; d];
        for k in 0..d {
            wj[k] = w[d + k];
            if mode == FeatureMode::ConcatPlusProduct {
                wj[k] += w[2 * d + k] * xc[k];
            }
        }
        for (j, o) in out.iter_mut().enumerate() {
            let xj = contexts.seeker(j);
            let mut z = base;
            for k in 0..d {
                z += wj[k] * xj[k];
            }
            *o = sigmoid(z);
        }
    }
}

#[derive(Debug, Clone)]
struct ConstantScorer(f64);

impl PairScorer for ConstantScorer {
    fn predict(&self, _: ArrayView1<'_, f64>) -> f64 {
        self.0
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Minimises a smooth convex objective by Newton steps with Armijo
/// backtracking. `eval(w)` returns the objective, gradient and Hessian.
fn damped_newton<F, L>(
    dim: usize,
    max_iters: usize,
    tolerance: f64,
    mut eval: F,
    mut objective: L,
) -> Vec<f64>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>, DMatrix<f64>),
    L: FnMut(&[f64]) -> f64,
{
    let mut w = vec![0.0; dim];
    for _ in 0..max_iters {
        let (loss, grad, hess) = eval(&w);
        let step = match hess.cholesky() {
            Some(ch) => ch.solve(&DVector::from_vec(grad.clone())),
            None => DVector::from_vec(grad.clone()),
        };
        let slope: f64 = grad.iter().zip(step.iter()).map(|(g, s)| g * s).sum();
        let mut t = 1.0;
        let mut candidate = vec![0.0; dim];
        for _ in 0..40 {
            for k in 0..dim {
                candidate[k] = w[k] - t * step[k];
            }
            if objective(&candidate) <= loss - 1e-4 * t * slope {
                break;
            }
            t *= 0.5;
        }
        let max_move = step.iter().fold(0.0f64, |m, s| m.max((t * s).abs()));
        w.copy_from_slice(&candidate);
        if max_move < tolerance {
            break;
        }
    }
    w
}

impl LogisticRegression {
    fn objective(&self, x: &Array2<f64>, y: &[f64], w: &[f64]) -> f64 {
        let wv = ArrayView1::from(w);
        let mut loss = 0.0;
        for (row, &label) in x.rows().into_iter().zip(y) {
            let z = row.dot(&wv);
            loss += softplus(z) - label * z;
        }
        loss + 0.5 * self.l2_penalty * w.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn fit(&self, x: &Array2<f64>, y: &[f64]) -> LogisticModel {
        let p = x.ncols();
        let weights = damped_newton(
            p,
            self.max_iters,
            self.tolerance,
            |w| {
                let wv = ArrayView1::from(w);
                let mut grad = vec![0.0; p];
                let mut hess = DMatrix::<f64>::zeros(p, p);
                let mut loss = 0.0;
                for (row, &label) in x.rows().into_iter().zip(y) {
                    let z = row.dot(&wv);
                    let prob = sigmoid(z);
                    loss += softplus(z) - label * z;
                    let resid = prob - label;
                    let curv = prob * (1.0 - prob);
                    for a in 0..p {
                        grad[a] += resid * row[a];
                        let ra = curv * row[a];
                        for b in 0..=a {
                            hess[(a, b)] += ra * row[b];
                        }
                    }
                }
                for a in 0..p {
                    grad[a] += self.l2_penalty * w[a];
                    hess[(a, a)] += self.l2_penalty;
                    for b in 0..a {
                        hess[(b, a)] = hess[(a, b)];
                    }
                }
                loss += 0.5 * self.l2_penalty * w.iter().map(|v| v * v).sum::<f64>();
                (loss, grad, hess)
            },
            |w| self.objective(x, y, w),
        );
        LogisticModel { weights }
    }
}

impl Trainer for LogisticRegression {
    fn train(&self, features: &Array2<f64>, labels: &[f64]) -> Result<Box<dyn PairScorer>> {
        Ok(Box::new(self.fit(features, labels)))
    }
}

/// Non-fatal events recorded while fitting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitDiagnostics {
    pub fold_sizes: Vec<usize>,
    pub warnings: Vec<String>,
}

fn logged_features(
    dataset: &LoggedDataset,
    contexts: &ContextSet,
    mode: FeatureMode,
    rows: &[usize],
) -> Array2<f64> {
    let p = mode.len(contexts.dim());
    let mut x = Array2::zeros((rows.len(), p));
    for (i, &c) in rows.iter().enumerate() {
        let out = x.row_mut(i).into_slice().expect("standard layout");
        write_pair_features(contexts, c, dataset.record(c).seeker, mode, out);
    }
    x
}

fn check_inputs(dataset: &LoggedDataset, contexts: &ContextSet) -> Result<()> {
    if dataset.n_companies() != contexts.n_companies()
        || dataset.n_seekers() != contexts.n_seekers()
    {
        return Err(Error::Shape(format!(
            "dataset covers ({}, {}) but contexts are ({}, {})",
            dataset.n_companies(),
            dataset.n_seekers(),
            contexts.n_companies(),
            contexts.n_seekers()
        )));
    }
    Ok(())
}

fn folds(n_companies: usize, n_folds: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); n_folds];
    for c in 0..n_companies {
        out[fold_of(c, n_folds)].push(c);
    }
    out
}

/// Predicted rows of one fold and an optional fallback note.
type FoldPredictions = (Vec<(usize, Vec<f64>)>, Option<String>);

struct Task<'a> {
    name: &'static str,
    /// Label of company `c`, or `None` if `c` is not a training example.
    label: Box<dyn Fn(usize) -> Option<f64> + Sync + 'a>,
    scale: f64,
}

/// Fits `q_hat_m`, `q_hat_r` (and `q_hat_s` if configured) by cross-fitting
/// with the default logistic learner.
pub fn fit_reward_models(
    dataset: &LoggedDataset,
    contexts: &ContextSet,
    cfg: &FitConfig,
) -> Result<(RewardModel, FitDiagnostics)> {
    fit_reward_models_with(&cfg.trainer(), dataset, contexts, cfg)
}

/// As [`fit_reward_models`] with a caller-supplied learner.
pub fn fit_reward_models_with(
    trainer: &dyn Trainer,
    dataset: &LoggedDataset,
    contexts: &ContextSet,
    cfg: &FitConfig,
) -> Result<(RewardModel, FitDiagnostics)> {
    cfg.validate()?;
    check_inputs(dataset, contexts)?;
    let records = dataset.records();
    let mut tasks = vec![
        Task {
            name: "q_hat_m",
            label: Box::new(|c| Some(records[c].m_value())),
            scale: 1.0,
        },
        Task {
            name: "q_hat_r",
            label: Box::new(|c| records[c].s.then(|| records[c].r_value())),
            scale: cfg.r_shrink,
        },
    ];
    if cfg.fit_first_stage {
        tasks.push(Task {
            name: "q_hat_s",
            label: Box::new(|c| Some(records[c].s_value())),
            scale: 1.0,
        });
    }

    let (n_c, n_j) = (dataset.n_companies(), dataset.n_seekers());
    let fold_rows = folds(n_c, cfg.n_folds);
    let mut diagnostics = FitDiagnostics {
        fold_sizes: fold_rows.iter().map(Vec::len).collect(),
        warnings: Vec::new(),
    };

    let mut outputs = Vec::with_capacity(tasks.len());
    for task in &tasks {
        let global: Vec<f64> = (0..n_c).filter_map(|c| (task.label)(c)).collect();
        let global_rate = if global.is_empty() {
            0.5
        } else {
            global.iter().sum::<f64>() / global.len() as f64
        };
        let per_fold: Vec<Result<FoldPredictions>> = (0..cfg.n_folds)
            .into_par_iter()
            .map(|k| {
                if fold_rows[k].is_empty() {
                    return Ok((Vec::new(), None));
                }
                let train: Vec<usize> = (0..n_c)
                    .filter(|&c| fold_of(c, cfg.n_folds) != k && (task.label)(c).is_some())
                    .collect();
                let mut note = None;
                let scorer: Box<dyn PairScorer> = if train.is_empty() {
                    note = Some(format!(
                        "{}: fold {k} has no training records; using global rate {global_rate}",
                        task.name
                    ));
                    Box::new(ConstantScorer(global_rate))
                } else {
                    let x = logged_features(dataset, contexts, cfg.feature_mode, &train);
                    let y: Vec<f64> = train.iter().map(|&c| (task.label)(c).unwrap()).collect();
                    trainer.train(&x, &y)?
                };
                let rows = fold_rows[k]
                    .iter()
                    .map(|&c| {
                        let mut row = vec![0.0; n_j];
                        scorer.predict_row(contexts, c, cfg.feature_mode, &mut row);
                        for v in row.iter_mut() {
                            *v = (task.scale * *v).clamp(cfg.clamp_min, 1.0 - cfg.clamp_min);
                        }
                        (c, row)
                    })
                    .collect();
                Ok((rows, note))
            })
            .collect();
        let mut matrix = Array2::zeros((n_c, n_j));
        for fold in per_fold {
            let (rows, note) = fold?;
            if let Some(note) = note {
                warn!("{note}");
                diagnostics.warnings.push(note);
            }
            for (c, row) in rows {
                matrix.row_mut(c).assign(&ArrayView1::from(&row[..]));
            }
        }
        outputs.push(matrix);
    }

    let mut outputs = outputs.into_iter();
    let q_hat_m = outputs.next();
    let q_hat_r = outputs.next();
    let q_hat_s = outputs.next();
    Ok((
        RewardModel::new(q_hat_r, q_hat_m, q_hat_s, None)?,
        diagnostics,
    ))
}

/// Multinomial logit `pi(j | c) ∝ exp(f(c, j)·θ)` fitted on the logged
/// choices, cross-fitted like the reward models. Entries are floored at
/// `clamp_min / |J|` and the rows renormalised.
pub fn fit_logging_policy(
    dataset: &LoggedDataset,
    contexts: &ContextSet,
    cfg: &FitConfig,
) -> Result<Policy> {
    cfg.validate()?;
    check_inputs(dataset, contexts)?;
    let (n_c, n_j) = (dataset.n_companies(), dataset.n_seekers());
    let mode = cfg.feature_mode;
    let p = mode.len(contexts.dim());
    let fold_rows = folds(n_c, cfg.n_folds);

    let per_fold: Vec<Vec<(usize, Vec<f64>)>> = (0..cfg.n_folds)
        .into_par_iter()
        .map(|k| {
            if fold_rows[k].is_empty() {
                return Vec::new();
            }
            let train: Vec<usize> = (0..n_c).filter(|&c| fold_of(c, cfg.n_folds) != k).collect();
            let theta = if train.is_empty() {
                vec![0.0; p]
            } else {
                fit_multinomial(dataset, contexts, cfg, &train)
            };
            fold_rows[k]
                .iter()
                .map(|&c| (c, multinomial_row(contexts, c, mode, &theta)))
                .collect()
        })
        .collect();

    let floor = cfg.clamp_min / n_j as f64;
    let mut probs = Array2::zeros((n_c, n_j));
    for (c, mut row) in per_fold.into_iter().flatten() {
        for v in row.iter_mut() {
            *v = v.max(floor);
        }
        let total: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= total;
        }
        probs.row_mut(c).assign(&ArrayView1::from(&row[..]));
    }
    Policy::new(probs, "estimated_logging_policy")
}

fn multinomial_row(contexts: &ContextSet, c: usize, mode: FeatureMode, theta: &[f64]) -> Vec<f64> {
    let model = LogisticModel {
        weights: theta.to_vec(),
    };
    // The logistic fast path yields sigmoid(z); recover z through features instead.
    let p = theta.len();
    let mut f = vec![0.0; p];
    let mut row: Vec<f64> = (0..contexts.n_seekers())
        .map(|j| {
            write_pair_features(contexts, c, j, mode, &mut f);
            f.iter().zip(&model.weights).map(|(a, b)| a * b).sum()
        })
        .collect();
    crate::domain::softmax_in_place(&mut row);
    row
}

fn fit_multinomial(
    dataset: &LoggedDataset,
    contexts: &ContextSet,
    cfg: &FitConfig,
    train: &[usize],
) -> Vec<f64> {
    let mode = cfg.feature_mode;
    let p = mode.len(contexts.dim());
    let n_j = dataset.n_seekers();
    let lambda = cfg.l2_penalty;

    // Pair features are reused every Newton step; cache them per training company.
    let cache: Vec<Array2<f64>> = train
        .iter()
        .map(|&c| {
            let mut m = Array2::zeros((n_j, p));
            for j in 0..n_j {
                let out = m.row_mut(j).into_slice().expect("standard layout");
                write_pair_features(contexts, c, j, mode, out);
            }
            m
        })
        .collect();
    let chosen: Vec<usize> = train.iter().map(|&c| dataset.record(c).seeker).collect();

    let objective = |w: &[f64]| -> f64 {
        let wv = ArrayView1::from(w);
        let mut loss = 0.0;
        for (feats, &jc) in cache.iter().zip(&chosen) {
            let z = feats.dot(&wv);
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - z[jc];
        }
        loss + 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>()
    };

    damped_newton(
        p,
        cfg.max_iters,
        cfg.tolerance,
        |w| {
            let wv = ArrayView1::from(w);
            let mut grad = vec![0.0; p];
            let mut hess = DMatrix::<f64>::zeros(p, p);
            let mut loss = 0.0;
            let mut mean_f = vec![0.0; p];
            for (feats, &jc) in cache.iter().zip(&chosen) {
                let mut probs = feats.dot(&wv).to_vec();
                let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + probs.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += lse - probs[jc];
                crate::domain::softmax_in_place(&mut probs);
                mean_f.iter_mut().for_each(|v| *v = 0.0);
                for (j, row) in feats.rows().into_iter().enumerate() {
                    let pj = probs[j];
                    for a in 0..p {
                        mean_f[a] += pj * row[a];
                        let ra = pj * row[a];
                        for b in 0..=a {
                            hess[(a, b)] += ra * row[b];
                        }
                    }
                }
                let fc = feats.row(jc);
                for a in 0..p {
                    grad[a] += mean_f[a] - fc[a];
                    for b in 0..=a {
                        hess[(a, b)] -= mean_f[a] * mean_f[b];
                    }
                }
            }
            for a in 0..p {
                grad[a] += lambda * w[a];
                hess[(a, a)] += lambda;
                for b in 0..a {
                    hess[(b, a)] = hess[(a, b)];
                }
            }
            loss += 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
            (loss, grad, hess)
        },
        objective,
    )
}
