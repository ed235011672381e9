//! Ranking error of an estimator when comparing a policy to the logging
//! policy.

/// Whether one replication ranks the two policies the wrong way round.
///
/// With `V(pi) >= V(pi_0)` an error is `V_hat(pi) < V_hat(pi_0)`; with
/// `V(pi) < V(pi_0)` an error is `V_hat(pi) >= V_hat(pi_0)`. Ties in the
/// true values therefore count only strict underestimates of `pi`.
pub fn is_ranking_error(estimate_pi: f64, estimate_pi0: f64, true_pi: f64, true_pi0: f64) -> bool {
    if true_pi >= true_pi0 {
        estimate_pi < estimate_pi0
    } else {
        estimate_pi >= estimate_pi0
    }
}

/// Fraction of replications that rank `pi` and `pi_0` wrongly.
///
/// # Panics
/// If the two estimate slices differ in length or are empty.
pub fn error_rate(estimates_pi: &[f64], estimates_pi0: &[f64], true_pi: f64, true_pi0: f64) -> f64 {
    assert_eq!(estimates_pi.len(), estimates_pi0.len(), "paired estimates");
    assert!(!estimates_pi.is_empty(), "no replications");
    let errors = estimates_pi
        .iter()
        .zip(estimates_pi0)
        .filter(|(a, b)| is_ranking_error(**a, **b, true_pi, true_pi0))
        .count();
    errors as f64 / estimates_pi.len() as f64
}
