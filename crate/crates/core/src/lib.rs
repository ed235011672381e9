//! Off-policy evaluation and learning for two-stage matching markets.
//!
//! A platform recommends one job seeker `j` to each company `c`. The company
//! may send a scout (first-stage reward `s`), the seeker may reply
//! (second-stage reward `r`), and a match is `m = s * r`. This crate provides
//!
//! - the domain types and the exact policy value ([`domain`]),
//! - a synthetic environment generator ([`synth`]),
//! - cross-fitted reward and propensity models ([`models`]),
//! - the value estimators DM, IPS, DR, DiPS, DPR and their Switch / MIPS
//!   variants ([`estimators`]),
//! - closed-form bias and variance of the estimators plus an exhaustive
//!   enumeration oracle and a Monte-Carlo profiler ([`analytic`]),
//! - softmax policies learned by off-policy gradient ascent ([`opl`]).

pub mod analytic;
pub mod domain;
pub mod error;
pub mod estimators;
pub mod models;
pub mod opl;
pub mod rng;
pub mod stats;
pub mod synth;

pub use domain::{
    importance_weights, true_policy_value, ContextSet, Environment, LoggedDataset, Policy, Record,
    RewardModel,
};
pub use error::{Error, Result};
pub use estimators::{Estimator, EstimatorInput, PropensitySource};
