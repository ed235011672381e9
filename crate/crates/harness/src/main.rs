use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use matchope::config::{
    parse_propensity_source, Axis, EstimatorSpec, ExperimentConfig, ModelSource,
};
use matchope::io::{
    export_contexts, export_logged_data, export_policy, ingest_logged_data, load_contexts,
    load_policy,
};
use matchope::opl_experiment::run_opl_experiment;
use matchope::plots::emit_plots;
use matchope::report::{export_report, format_float, ReportFormat};
use matchope::sweep::{environment_seed, replication_seed, run_sweep};
use matchope::verify::run_checks;
use matchope::{HarnessError, Result};
use matchope_core::models::{fit_logging_policy, fit_reward_models};
use matchope_core::opl::GradientEstimator;
use matchope_core::synth::{
    epsilon_greedy_target_policy, generate_environment, sample_logged_data, softmax_logging_policy,
};
use matchope_core::{true_policy_value, EstimatorInput, Policy, PropensitySource, RewardModel};

#[derive(Parser)]
#[command(
    name = "matchope",
    version,
    about = "Off-policy evaluation and learning for two-stage matching markets"
)]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format: csv or json.
    #[arg(long)]
    format: Option<String>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Clone, Default)]
struct EnvOverrides {
    /// Number of companies (contexts).
    #[arg(long)]
    n_companies: Option<usize>,
    /// Number of job seekers (actions).
    #[arg(long)]
    n_seekers: Option<usize>,
    /// Feature dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Sparsity of the application and reply probabilities.
    #[arg(long)]
    theta_sp: Option<f64>,
    /// Inverse temperature of the softmax logging policy.
    #[arg(long)]
    beta: Option<f64>,
    /// Exploration rate of the epsilon-greedy target policy.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Cross-fitting folds for the reward models.
    #[arg(long)]
    n_folds: Option<usize>,
    /// L2 penalty of the logistic reward models.
    #[arg(long)]
    l2_penalty: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic environment and export one logged dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        env: EnvOverrides,
    },
    /// Estimate a target policy's value from one logged dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        env: EnvOverrides,
        /// JSONL dataset.
        #[arg(long)]
        data: PathBuf,
        /// Feature tables (contexts.json); needed for fitted models unless
        /// the dataset carries features.
        #[arg(long)]
        contexts: Option<PathBuf>,
        /// Target policy JSON; defaults to the uniform policy.
        #[arg(long)]
        target: Option<PathBuf>,
        /// Logging policy JSON, used by the MIPS estimators.
        #[arg(long)]
        logging: Option<PathBuf>,
        /// Comma-separated estimators, e.g. `ips,dips,switch_dr:5`.
        #[arg(long, value_delimiter = ',')]
        estimators: Option<Vec<String>>,
        /// logged or estimated; defaults to logged when every record has a propensity.
        #[arg(long)]
        propensity_source: Option<String>,
    },
    /// Run a replicated estimator sweep and export the report and plots.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        env: EnvOverrides,
        /// n_companies, n_seekers or sparsity.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated grid for the swept axis.
        #[arg(long, value_delimiter = ',')]
        axis_values: Option<Vec<f64>>,
        /// Replications per grid point.
        #[arg(long)]
        reps: Option<usize>,
        /// Comma-separated estimators, e.g. `dm,ips,switch_dr:5`.
        #[arg(long, value_delimiter = ',')]
        estimators: Option<Vec<String>>,
        /// oracle or fitted.
        #[arg(long)]
        model_source: Option<String>,
        /// logged or estimated.
        #[arg(long)]
        propensity_source: Option<String>,
    },
    /// Learn policies with off-policy gradients and score them on the ground truth.
    Learn {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        env: EnvOverrides,
        /// Comma-separated gradient estimators, e.g. `ips_pg,dips_pg`.
        #[arg(long, value_delimiter = ',')]
        estimators: Option<Vec<String>>,
        /// Independent environments to learn on.
        #[arg(long)]
        n_seeds: Option<usize>,
        /// Gradient ascent step size.
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Gradient ascent iterations.
        #[arg(long)]
        n_iterations: Option<usize>,
        /// Clip importance weights at this value.
        #[arg(long)]
        weight_clip: Option<f64>,
        /// oracle or fitted.
        #[arg(long)]
        model_source: Option<String>,
    },
    /// Run the analytic-versus-simulation verification suite.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn load_config(common: &Common, env: &EnvOverrides) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let e = &mut cfg.env;
    if let Some(v) = env.n_companies {
        e.n_companies = v;
    }
    if let Some(v) = env.n_seekers {
        e.n_seekers = v;
    }
    if let Some(v) = env.dim {
        e.dim = v;
    }
    if let Some(v) = env.theta_sp {
        e.theta_sp = v;
    }
    if let Some(v) = env.beta {
        e.beta = v;
    }
    if let Some(v) = env.epsilon {
        e.epsilon = v;
    }
    if let Some(v) = env.n_folds {
        cfg.fit.n_folds = v;
    }
    if let Some(v) = env.l2_penalty {
        cfg.fit.l2_penalty = v;
    }
    Ok(cfg)
}

fn format_of(common: &Common) -> Result<ReportFormat> {
    common
        .format
        .as_deref()
        .map_or(Ok(ReportFormat::Csv), str::parse)
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| HarnessError::Io {
        path: dir.clone(),
        source: e,
    })?;
    Ok(dir)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    info!("wrote {}", path.display());
    Ok(())
}

fn parse_estimators(names: &[String]) -> Result<Vec<EstimatorSpec>> {
    names.iter().map(|s| s.parse()).collect()
}

fn synth(common: &Common, env: &EnvOverrides) -> Result<()> {
    let cfg = load_config(common, env)?;
    let dir = out_dir(common)?;
    let mut spec = cfg.env.clone();
    spec.seed = environment_seed(cfg.seed, 0);
    let (environment, _) = generate_environment(&spec)?;
    let logging = softmax_logging_policy(&environment, spec.beta);
    let target = epsilon_greedy_target_policy(&environment, spec.epsilon)?;
    let dataset = sample_logged_data(&environment, &logging, replication_seed(cfg.seed, 0, 0))?;
    export_logged_data(
        &dataset,
        Some(environment.contexts()),
        &dir.join("dataset.jsonl"),
    )?;
    export_contexts(environment.contexts(), &dir.join("contexts.json"))?;
    export_policy(&logging, &dir.join("logging_policy.json"))?;
    export_policy(&target, &dir.join("target_policy.json"))?;
    let truth = serde_json::json!({
        "target_value": true_policy_value(&environment, &target)?,
        "logging_value": true_policy_value(&environment, &logging)?,
        "match_rate": dataset.match_rate(),
    });
    write(&dir.join("truth.json"), &format!("{truth}\n"))?;
    println!(
        "{} records, {} seekers, match rate {:.4}; written to {}",
        dataset.len(),
        dataset.n_seekers(),
        dataset.match_rate(),
        dir.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    common: &Common,
    env: &EnvOverrides,
    data: &Path,
    contexts: Option<&Path>,
    target: Option<&Path>,
    logging: Option<&Path>,
    estimators: Option<&[String]>,
    propensity_source: Option<&str>,
) -> Result<()> {
    let cfg = load_config(common, env)?;
    let format = format_of(common)?;
    let ingested = ingest_logged_data(data)?;
    let contexts = match contexts {
        Some(p) => Some(load_contexts(p)?),
        None => ingested.contexts.clone(),
    };
    let dataset = &ingested.dataset;
    let source = match propensity_source {
        Some(s) => parse_propensity_source(s)?,
        None if ingested.needs_propensity_estimation() => {
            log::warn!("some records have no logging_prob; estimating propensities");
            PropensitySource::Estimated
        }
        None => PropensitySource::Logged,
    };
    let specs = match estimators {
        Some(names) => parse_estimators(names)?,
        None => EstimatorSpec::defaults(),
    };
    let target = match target {
        Some(p) => load_policy(p)?,
        None => Policy::uniform(dataset.n_companies(), dataset.n_seekers(), "uniform"),
    };
    let logging = logging.map(load_policy).transpose()?;

    let model = match &contexts {
        Some(ctx) => {
            let (mut model, diagnostics) = fit_reward_models(dataset, ctx, &cfg.fit)?;
            for w in &diagnostics.warnings {
                log::warn!("{w}");
            }
            if source == PropensitySource::Estimated {
                model = model.with_pi0_hat(fit_logging_policy(dataset, ctx, &cfg.fit)?);
            }
            model
        }
        None => {
            log::warn!("no contexts: only estimators without reward models can run");
            RewardModel::new(None, None, None, None)?
        }
    };
    let mut input = EstimatorInput::new(dataset, &target, &model).with_propensity_source(source);
    if let Some(l) = &logging {
        input = input.with_logging_policy(l);
    }
    let mut rows = Vec::new();
    for spec in &specs {
        let est = match &contexts {
            Some(ctx) => spec.resolve(ctx)?,
            None => spec.resolve_without_contexts()?,
        };
        let e = est.estimate_detailed(&input)?;
        rows.push((spec.to_string(), e.value, e.outside_support));
    }
    let text = match format {
        ReportFormat::Csv => {
            let mut s = String::from("estimator,estimate,outside_support\n");
            for (name, v, n) in &rows {
                s.push_str(&format!("{name},{},{n}\n", format_float(*v)));
            }
            s
        }
        ReportFormat::Json => {
            let list: Vec<_> = rows
                .iter()
                .map(|(name, v, n)| serde_json::json!({"estimator": name, "estimate": v, "outside_support": n}))
                .collect();
            format!("{}\n", serde_json::Value::Array(list))
        }
    };
    print!("{text}");
    if common.out.is_some() {
        let dir = out_dir(common)?;
        write(
            &dir.join(format!("estimates.{}", format.extension())),
            &text,
        )?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    common: &Common,
    env: &EnvOverrides,
    axis: Option<&str>,
    axis_values: Option<&[f64]>,
    reps: Option<usize>,
    estimators: Option<&[String]>,
    model_source: Option<&str>,
    propensity_source: Option<&str>,
) -> Result<()> {
    let file = load_config(common, env)?;
    let mut cfg = file.sweep_config();
    if let Some(a) = axis {
        let a: Axis = a.parse()?;
        if a != cfg.axis && axis_values.is_none() {
            cfg.axis_values = None;
        }
        cfg.axis = a;
    }
    if let Some(v) = axis_values {
        cfg.axis_values = Some(v.to_vec());
    }
    if let Some(r) = reps {
        cfg.n_replications = r;
    }
    if let Some(names) = estimators {
        cfg.estimators = parse_estimators(names)?;
    }
    if let Some(m) = model_source {
        cfg.model_source = m.parse()?;
    }
    if let Some(p) = propensity_source {
        cfg.propensity_source = parse_propensity_source(p)?;
    }
    let format = format_of(common)?;
    let dir = out_dir(common)?;
    let report = run_sweep(&cfg)?;
    let path = dir.join(format!("report.{}", format.extension()));
    export_report(&report, &path, format)?;
    info!("wrote {}", path.display());
    emit_plots(&report, &dir)?;
    println!(
        "{:<16} {:>12} {:>14} {:>11}",
        cfg.axis.name(),
        "estimator",
        "mse",
        "error_rate"
    );
    for row in &report.rows {
        println!(
            "{:<16} {:>12} {:>14.6e} {:>11.4}",
            row.axis_value, row.estimator, row.mse, row.error_rate
        );
    }
    for f in &report.failures {
        println!(
            "excluded {} failed replications of {} at {}: {}",
            f.failures, f.estimator, f.axis_value, f.first_error
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn learn(
    common: &Common,
    env: &EnvOverrides,
    estimators: Option<&[String]>,
    n_seeds: Option<usize>,
    learning_rate: Option<f64>,
    n_iterations: Option<usize>,
    weight_clip: Option<f64>,
    model_source: Option<&str>,
) -> Result<()> {
    let file = load_config(common, env)?;
    let mut cfg = file.opl_config();
    if let Some(names) = estimators {
        cfg.estimators = names
            .iter()
            .map(|s| {
                s.parse::<GradientEstimator>()
                    .map_err(|e| HarnessError::Config(e.to_string()))
            })
            .collect::<Result<_>>()?;
    }
    if let Some(n) = n_seeds {
        cfg.n_seeds = n;
    }
    if let Some(v) = learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(n) = n_iterations {
        cfg.n_iterations = n;
    }
    if let Some(c) = weight_clip {
        cfg.weight_clip = Some(c);
    }
    if let Some(m) = model_source {
        cfg.model_source = m.parse::<ModelSource>()?;
    }
    let format = format_of(common)?;
    let dir = out_dir(common)?;
    let report = run_opl_experiment(&cfg)?;
    for (name, contents) in report.files(format) {
        write(&dir.join(name), &contents)?;
    }
    println!(
        "{:<10} {:>7} {:>14} {:>10}",
        "estimator", "seeds", "relative_value", "se"
    );
    for s in &report.summary {
        println!(
            "{:<10} {:>7} {:>14.4} {:>10.4}",
            s.estimator, s.n_seeds, s.mean_relative_value, s.se_relative_value
        );
    }
    Ok(())
}

fn check(seed: u64) -> Result<()> {
    let report = run_checks(seed)?;
    for c in &report.checks {
        println!("{c}");
    }
    report.into_result().map(|_| ())
}

fn with_jobs<T>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T>
where
    T: Send,
{
    match jobs {
        None => f(),
        Some(0) => Err(HarnessError::Config("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?
            .install(f),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, env } => synth(&common, &env),
        Command::Eval {
            common,
            env,
            data,
            contexts,
            target,
            logging,
            estimators,
            propensity_source,
        } => with_jobs(common.jobs, || {
            eval(
                &common,
                &env,
                &data,
                contexts.as_deref(),
                target.as_deref(),
                logging.as_deref(),
                estimators.as_deref(),
                propensity_source.as_deref(),
            )
        }),
        Command::Sweep {
            common,
            env,
            axis,
            axis_values,
            reps,
            estimators,
            model_source,
            propensity_source,
        } => with_jobs(common.jobs, || {
            sweep(
                &common,
                &env,
                axis.as_deref(),
                axis_values.as_deref(),
                reps,
                estimators.as_deref(),
                model_source.as_deref(),
                propensity_source.as_deref(),
            )
        }),
        Command::Learn {
            common,
            env,
            estimators,
            n_seeds,
            learning_rate,
            n_iterations,
            weight_clip,
            model_source,
        } => with_jobs(common.jobs, || {
            learn(
                &common,
                &env,
                estimators.as_deref(),
                n_seeds,
                learning_rate,
                n_iterations,
                weight_clip,
                model_source.as_deref(),
            )
        }),
        Command::Check { seed, jobs } => with_jobs(jobs, || check(seed)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
