//! Declarative experiment configuration.
//!
//! One TOML file maps onto [`SweepConfig`] and [`OplExperimentConfig`]:
//!
//! ```toml
//! seed = 7
//!
//! [env]
//! n_companies = 1000
//! n_seekers = 100
//! theta_sp = 2.0
//!
//! [fit]
//! n_folds = 5
//!
//! [sweep]
//! axis = "sparsity"
//! axis_values = [0.0, 1.0, 2.0, 3.0, 4.0]
//! n_replications = 200
//! estimators = ["dm", "ips", "dr", "dips", "dpr", "switch_dr:10"]
//!
//! [learn]
//! estimators = ["ips_pg", "dips_pg", "dpr_pg"]
//! n_seeds = 20
//! ```
//!
//! Every section and field is optional; command-line flags override the file.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use matchope_core::estimators::EmbeddingMap;
use matchope_core::models::{FeatureMode, FitConfig};
use matchope_core::opl::GradientEstimator;
use matchope_core::synth::SyntheticEnvSpec;
use matchope_core::{ContextSet, Estimator, PropensitySource};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{HarnessError, Result};

/// Threshold used by `switch_dr` / `ext_switch_dr` when none is given.
pub const DEFAULT_SWITCH_LAMBDA: f64 = 10.0;

/// An estimator named on the command line or in a config file, such as
/// `dr`, `switch_dr:5` or `mips:4`. Parameters that depend on the data
/// (MIPS clusters) are resolved by [`EstimatorSpec::resolve`].
#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorSpec {
    Dm,
    Ips,
    Dr,
    Dips,
    Dpr,
    SwitchDr(f64),
    ExtSwitchDr(f64),
    /// Number of clusters; `None` means `ceil(|J| / 10)`.
    Mips(Option<usize>),
    ExtMips(Option<usize>),
}

impl EstimatorSpec {
    pub fn resolve(&self, contexts: &ContextSet) -> Result<Estimator> {
        let embedding = |k: Option<usize>| {
            let k = k.unwrap_or_else(|| EmbeddingMap::default_n_clusters(contexts.n_seekers()));
            EmbeddingMap::from_principal_direction(contexts, k)
        };
        match self {
            EstimatorSpec::Mips(k) => Ok(Estimator::Mips(embedding(*k)?)),
            EstimatorSpec::ExtMips(k) => Ok(Estimator::ExtMips(embedding(*k)?)),
            other => other.resolve_without_contexts(),
        }
    }

    /// Resolves estimators that need no seeker contexts.
    pub fn resolve_without_contexts(&self) -> Result<Estimator> {
        Ok(match self {
            EstimatorSpec::Dm => Estimator::Dm,
            EstimatorSpec::Ips => Estimator::Ips,
            EstimatorSpec::Dr => Estimator::Dr,
            EstimatorSpec::Dips => Estimator::Dips,
            EstimatorSpec::Dpr => Estimator::Dpr,
            EstimatorSpec::SwitchDr(lambda) => Estimator::SwitchDr { lambda: *lambda },
            EstimatorSpec::ExtSwitchDr(lambda) => Estimator::ExtSwitchDr { lambda: *lambda },
            EstimatorSpec::Mips(_) | EstimatorSpec::ExtMips(_) => {
                return Err(HarnessError::Config(format!(
                    "`{self}` needs seeker contexts to build its embedding"
                )))
            }
        })
    }

    pub fn defaults() -> Vec<EstimatorSpec> {
        vec![
            EstimatorSpec::Dm,
            EstimatorSpec::Ips,
            EstimatorSpec::Dr,
            EstimatorSpec::Dips,
            EstimatorSpec::Dpr,
        ]
    }
}

impl fmt::Display for EstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorSpec::Dm => f.write_str("dm"),
            EstimatorSpec::Ips => f.write_str("ips"),
            EstimatorSpec::Dr => f.write_str("dr"),
            EstimatorSpec::Dips => f.write_str("dips"),
            EstimatorSpec::Dpr => f.write_str("dpr"),
            EstimatorSpec::SwitchDr(l) => write!(f, "switch_dr:{l}"),
            EstimatorSpec::ExtSwitchDr(l) => write!(f, "ext_switch_dr:{l}"),
            EstimatorSpec::Mips(None) => f.write_str("mips"),
            EstimatorSpec::Mips(Some(k)) => write!(f, "mips:{k}"),
            EstimatorSpec::ExtMips(None) => f.write_str("ext_mips"),
            EstimatorSpec::ExtMips(Some(k)) => write!(f, "ext_mips:{k}"),
        }
    }
}

impl FromStr for EstimatorSpec {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n.trim(), Some(p.trim())),
            None => (s.trim(), None),
        };
        let bad = |why: &str| HarnessError::Config(format!("estimator `{s}`: {why}"));
        let lambda = || -> Result<f64> {
            match param {
                None => Ok(DEFAULT_SWITCH_LAMBDA),
                Some(p) => match p.parse::<f64>() {
                    Ok(v) if v >= 0.0 => Ok(v),
                    _ => Err(bad("threshold must be a non-negative number")),
                },
            }
        };
        let clusters = || -> Result<Option<usize>> {
            match param {
                None => Ok(None),
                Some(p) => match p.parse::<usize>() {
                    Ok(k) if k >= 1 => Ok(Some(k)),
                    _ => Err(bad("cluster count must be a positive integer")),
                },
            }
        };
        let plain = |spec: EstimatorSpec| {
            if param.is_some() {
                Err(bad("takes no parameter"))
            } else {
                Ok(spec)
            }
        };
        match name {
            "dm" => plain(EstimatorSpec::Dm),
            "ips" => plain(EstimatorSpec::Ips),
            "dr" => plain(EstimatorSpec::Dr),
            "dips" => plain(EstimatorSpec::Dips),
            "dpr" => plain(EstimatorSpec::Dpr),
            "switch_dr" => Ok(EstimatorSpec::SwitchDr(lambda()?)),
            "ext_switch_dr" => Ok(EstimatorSpec::ExtSwitchDr(lambda()?)),
            "mips" => Ok(EstimatorSpec::Mips(clusters()?)),
            "ext_mips" => Ok(EstimatorSpec::ExtMips(clusters()?)),
            _ => Err(bad("unknown estimator")),
        }
    }
}

impl Serialize for EstimatorSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EstimatorSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    NCompanies,
    NSeekers,
    Sparsity,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::NCompanies => "n_companies",
            Axis::NSeekers => "n_seekers",
            Axis::Sparsity => "sparsity",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            Axis::NCompanies => vec![250.0, 500.0, 1000.0, 2000.0, 4000.0],
            Axis::NSeekers => vec![25.0, 50.0, 100.0, 200.0, 400.0],
            Axis::Sparsity => vec![0.0, 1.0, 2.0, 3.0, 4.0],
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &SyntheticEnvSpec, value: f64) -> Result<SyntheticEnvSpec> {
        let count = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
                Ok(value as usize)
            } else {
                Err(HarnessError::Config(format!(
                    "{} value {value} is not a positive integer",
                    self.name()
                )))
            }
        };
        let mut spec = base.clone();
        match self {
            Axis::NCompanies => spec.n_companies = count()?,
            Axis::NSeekers => spec.n_seekers = count()?,
            Axis::Sparsity => spec.theta_sp = value,
        }
        Ok(spec)
    }
}

impl FromStr for Axis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n_companies" => Ok(Axis::NCompanies),
            "n_seekers" => Ok(Axis::NSeekers),
            "sparsity" => Ok(Axis::Sparsity),
            _ => Err(HarnessError::Config(format!(
                "unknown axis `{s}` (expected n_companies, n_seekers or sparsity)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    /// Reward models equal to the ground truth.
    Oracle,
    /// Cross-fitted on each replication's data.
    #[default]
    Fitted,
}

impl FromStr for ModelSource {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(ModelSource::Oracle),
            "fitted" => Ok(ModelSource::Fitted),
            _ => Err(HarnessError::Config(format!("unknown model source `{s}`"))),
        }
    }
}

pub fn parse_propensity_source(s: &str) -> Result<PropensitySource> {
    match s {
        "logged" => Ok(PropensitySource::Logged),
        "estimated" => Ok(PropensitySource::Estimated),
        _ => Err(HarnessError::Config(format!(
            "unknown propensity source `{s}`"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: Axis,
    /// Defaults to the axis' standard grid when absent.
    pub axis_values: Option<Vec<f64>>,
    pub n_replications: usize,
    pub estimators: Vec<EstimatorSpec>,
    #[serde(skip)]
    pub base: SyntheticEnvSpec,
    #[serde(skip)]
    pub fit: FitConfig,
    pub model_source: ModelSource,
    pub propensity_source: PropensitySource,
    #[serde(skip)]
    pub master_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            axis: Axis::Sparsity,
            axis_values: None,
            n_replications: 200,
            estimators: EstimatorSpec::defaults(),
            base: SyntheticEnvSpec::default(),
            fit: FitConfig::default(),
            model_source: ModelSource::Fitted,
            propensity_source: PropensitySource::Logged,
            master_seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn values(&self) -> Vec<f64> {
        self.axis_values
            .clone()
            .unwrap_or_else(|| self.axis.default_values())
    }

    pub fn validate(&self) -> Result<()> {
        let values = self.values();
        if values.is_empty() {
            return Err(HarnessError::Config("axis_values is empty".into()));
        }
        if values
            .windows(2)
            .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
        {
            return Err(HarnessError::Config(
                "axis_values must be strictly increasing".into(),
            ));
        }
        for &v in &values {
            self.axis.apply(&self.base, v)?.validate()?;
        }
        if self.n_replications < 2 {
            return Err(HarnessError::Config(
                "n_replications must be at least 2".into(),
            ));
        }
        if self.estimators.is_empty() {
            return Err(HarnessError::Config("no estimators selected".into()));
        }
        self.fit.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OplExperimentConfig {
    pub estimators: Vec<GradientEstimator>,
    pub n_seeds: usize,
    pub learning_rate: f64,
    pub n_iterations: usize,
    pub weight_clip: Option<f64>,
    pub feature_mode: FeatureMode,
    pub model_source: ModelSource,
    #[serde(skip)]
    pub base: SyntheticEnvSpec,
    #[serde(skip)]
    pub fit: FitConfig,
    #[serde(skip)]
    pub master_seed: u64,
}

impl Default for OplExperimentConfig {
    fn default() -> Self {
        let learn = matchope_core::opl::LearnConfig::default();
        Self {
            estimators: GradientEstimator::ALL.to_vec(),
            n_seeds: 1,
            learning_rate: learn.learning_rate,
            n_iterations: learn.n_iterations,
            weight_clip: learn.weight_clip,
            feature_mode: learn.feature_mode,
            model_source: ModelSource::Fitted,
            base: SyntheticEnvSpec::default(),
            fit: FitConfig::default(),
            master_seed: 0,
        }
    }
}

impl OplExperimentConfig {
    pub fn learn_config(
        &self,
        estimator: GradientEstimator,
        seed: u64,
    ) -> matchope_core::opl::LearnConfig {
        matchope_core::opl::LearnConfig {
            learning_rate: self.learning_rate,
            n_iterations: self.n_iterations,
            gradient_estimator: estimator,
            seed,
            weight_clip: self.weight_clip,
            feature_mode: self.feature_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.estimators.is_empty() {
            return Err(HarnessError::Config(
                "no gradient estimators selected".into(),
            ));
        }
        if self.n_seeds == 0 {
            return Err(HarnessError::Config("n_seeds must be at least 1".into()));
        }
        self.learn_config(GradientEstimator::DipsPg, 0).validate()?;
        self.base.validate()?;
        self.fit.validate()?;
        Ok(())
    }
}

/// The whole configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub env: SyntheticEnvSpec,
    pub fit: FitConfig,
    pub sweep: SweepConfig,
    pub learn: OplExperimentConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    /// The sweep section with the shared sections folded in.
    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            base: self.env.clone(),
            fit: self.fit.clone(),
            master_seed: self.seed,
            ..self.sweep.clone()
        }
    }

    pub fn opl_config(&self) -> OplExperimentConfig {
        OplExperimentConfig {
            base: self.env.clone(),
            fit: self.fit.clone(),
            master_seed: self.seed,
            ..self.learn.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_estimator_specs() {
        assert_eq!("dr".parse::<EstimatorSpec>().unwrap(), EstimatorSpec::Dr);
        assert_eq!(
            "switch_dr:2.5".parse::<EstimatorSpec>().unwrap(),
            EstimatorSpec::SwitchDr(2.5)
        );
        assert_eq!(
            "switch_dr".parse::<EstimatorSpec>().unwrap(),
            EstimatorSpec::SwitchDr(DEFAULT_SWITCH_LAMBDA)
        );
        assert_eq!(
            "mips:3".parse::<EstimatorSpec>().unwrap(),
            EstimatorSpec::Mips(Some(3))
        );
        assert!("mips:0".parse::<EstimatorSpec>().is_err());
        assert!("dr:1".parse::<EstimatorSpec>().is_err());
        assert!("snips".parse::<EstimatorSpec>().is_err());
        for s in ["dm", "ext_switch_dr:3", "ext_mips", "mips:4"] {
            assert_eq!(s.parse::<EstimatorSpec>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let sweep = cfg.sweep_config();
        assert_eq!(sweep.values(), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(sweep.n_replications, 200);
        sweep.validate().unwrap();
    }

    #[test]
    fn file_maps_onto_configs() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            seed = 11
            [env]
            n_companies = 30
            [fit]
            n_folds = 3
            [sweep]
            axis = "n_seekers"
            axis_values = [5, 10]
            estimators = ["ips", "switch_dr:4"]
            model_source = "oracle"
            [learn]
            estimators = ["dips_pg"]
            n_seeds = 2
            "#,
        )
        .unwrap();
        let sweep = cfg.sweep_config();
        assert_eq!(sweep.master_seed, 11);
        assert_eq!(sweep.base.n_companies, 30);
        assert_eq!(sweep.fit.n_folds, 3);
        assert_eq!(sweep.axis, Axis::NSeekers);
        assert_eq!(sweep.estimators[1], EstimatorSpec::SwitchDr(4.0));
        assert_eq!(sweep.model_source, ModelSource::Oracle);
        let opl = cfg.opl_config();
        assert_eq!(opl.estimators, vec![GradientEstimator::DipsPg]);
        assert_eq!(opl.n_seeds, 2);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_grids() {
        assert!(ExperimentConfig::from_toml("[sweep]\nreps = 3").is_err());
        let mut sweep = SweepConfig {
            axis_values: Some(vec![2.0, 1.0]),
            ..SweepConfig::default()
        };
        assert!(sweep.validate().is_err());
        sweep.axis_values = Some(vec![]);
        assert!(sweep.validate().is_err());
        sweep.axis = Axis::NCompanies;
        sweep.axis_values = Some(vec![10.5]);
        assert!(sweep.validate().is_err());
        sweep.axis_values = Some(vec![10.0]);
        sweep.n_replications = 1;
        assert!(sweep.validate().is_err());
    }
}
