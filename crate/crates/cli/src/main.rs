use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use controlshap::experiment::{run_experiment, DataSource, ExperimentConfig, ExperimentReport, ModelSpec};
use controlshap::explainer::EstimatorKind;
use controlshap::predictors::{ForestTrainConfig, LogisticTrainConfig, MlpTrainConfig};
use controlshap::taylor::{dj_cache_path, load_or_compute_dj, DjStrategy};
use controlshap::value::SamplingMode;
use controlshap::variance::VarianceMethod;

#[derive(Parser)]
#[command(name = "controlshap", version, about = "Shapley estimates with Taylor-surrogate control variates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the D_j matrices for the configured data and store them in a cache directory.
    PrecomputeDj {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Number of sampled permutations; exact enumeration when omitted and d <= 10.
        #[arg(long)]
        n_perms: Option<usize>,
    },
    /// Run a repeated-estimation experiment and write its report.
    Run {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Report JSON destination (stdout when omitted).
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Per-point, per-feature CSV destination.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print the summary of a report and optionally export its CSV.
    Report {
        report: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Estimator {
    ShapleySampling,
    Kernelshap,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Independent,
    Correlated,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variance {
    SsEmpirical,
    KsBootstrap,
    KsLeastSquares,
    KsGrouped,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Logistic,
    Mlp,
    RandomForest,
}

/// Flags override the values from `--config` (or the defaults).
#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rows of simulated data.
    #[arg(long, conflicts_with = "data_csv")]
    sim_rows: Option<usize>,
    /// CSV data file with a header row.
    #[arg(long, requires = "label_column")]
    data_csv: Option<PathBuf>,
    #[arg(long)]
    label_column: Option<String>,
    /// JSON file listing one-hot column groups.
    #[arg(long, requires = "data_csv")]
    groups_file: Option<PathBuf>,
    #[arg(long, value_enum, conflicts_with = "model_file")]
    model: Option<ModelKind>,
    /// Model JSON file to explain instead of training one.
    #[arg(long)]
    model_file: Option<PathBuf>,
    #[arg(long, value_enum)]
    estimator: Option<Estimator>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, value_enum)]
    variance: Option<Variance>,
    /// Coalitions (KernelSHAP) or permutations (Shapley sampling) per estimate.
    #[arg(long)]
    coalitions: Option<usize>,
    #[arg(long)]
    samples_per_coalition: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    n_reference: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    dj_cache: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load_json(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(n) = self.sim_rows {
            c.data = DataSource::Sim { n_rows: n };
        }
        if let Some(path) = &self.data_csv {
            c.data = DataSource::Csv {
                path: path.clone(),
                label_column: self.label_column.clone().expect("required by clap"),
                groups_path: self.groups_file.clone(),
            };
        }
        if let Some(m) = self.model {
            c.model = match m {
                ModelKind::Logistic => ModelSpec::Logistic(LogisticTrainConfig::default()),
                ModelKind::Mlp => ModelSpec::Mlp(MlpTrainConfig::default()),
                ModelKind::RandomForest => ModelSpec::RandomForest(ForestTrainConfig::default()),
            };
        }
        if let Some(p) = &self.model_file {
            c.model = ModelSpec::File { path: p.clone() };
        }
        if let Some(e) = self.estimator {
            c.estimator = match e {
                Estimator::ShapleySampling => EstimatorKind::ShapleySampling,
                Estimator::Kernelshap => EstimatorKind::Kernelshap,
            };
        }
        if let Some(m) = self.mode {
            c.mode = match m {
                Mode::Independent => SamplingMode::Independent,
                Mode::Correlated => SamplingMode::Correlated,
            };
        }
        if let Some(v) = self.variance {
            c.variance = Some(match v {
                Variance::SsEmpirical => VarianceMethod::SsEmpirical,
                Variance::KsBootstrap => VarianceMethod::KsBootstrap,
                Variance::KsLeastSquares => VarianceMethod::KsLeastSquares,
                Variance::KsGrouped => VarianceMethod::KsGrouped,
            });
        }
        let set = |dst: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut c.n_coalitions, self.coalitions);
        set(&mut c.n_repetitions, self.repetitions);
        set(&mut c.n_query_points, self.points);
        set(&mut c.bootstrap_resamples, self.bootstrap);
        set(&mut c.groups, self.groups);
        set(&mut c.n_reference, self.n_reference);
        set(&mut c.top_k, self.top_k);
        if self.samples_per_coalition.is_some() {
            c.samples_per_coalition = self.samples_per_coalition;
        }
        if let Some(dir) = &self.dj_cache {
            c.dj_cache_dir = Some(dir.clone());
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c.validate()?;
        Ok(c)
    }
}

fn precompute(exp: &ExperimentArgs, n_perms: Option<usize>) -> Result<()> {
    let mut cfg = exp.resolve()?;
    let Some(dir) = cfg.dj_cache_dir.clone() else {
        bail!("precompute-dj needs --dj-cache <dir> (or dj_cache_dir in the config)");
    };
    if let Some(n) = n_perms {
        cfg.dj_strategy = Some(DjStrategy::MonteCarlo {
            n_perms: n,
            seed: cfg.seed,
        });
    }
    cfg.mode = SamplingMode::Correlated;
    let setup = controlshap::experiment::setup_experiment(&cfg)?;
    let strategy = cfg.dj_strategy_for(setup.moments.dim());
    let (_, key) = load_or_compute_dj(&setup.moments, &strategy, Some(&dir))?;
    println!("{}", dj_cache_path(&dir, &key).display());
    Ok(())
}

fn run(exp: &ExperimentArgs, out: Option<&PathBuf>, csv: Option<&PathBuf>) -> Result<bool> {
    let cfg = exp.resolve()?;
    let report = run_experiment(&cfg)?;
    match out {
        Some(p) => report.write_json(p).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{}", report.to_json()?),
    }
    if let Some(p) = csv {
        report.write_csv_file(p).with_context(|| format!("writing {}", p.display()))?;
    }
    eprint!("{}", report.render_summary());
    Ok(report.all_points_succeeded())
}

fn show(path: &PathBuf, csv: Option<&PathBuf>) -> Result<bool> {
    let report = ExperimentReport::read_json(path).with_context(|| format!("reading {}", path.display()))?;
    print!("{}", report.render_summary());
    if let Some(p) = csv {
        report.write_csv_file(p)?;
    }
    Ok(report.all_points_succeeded())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::PrecomputeDj { exp, n_perms } => precompute(exp, *n_perms).map(|_| true),
        Command::Run { exp, out, csv } => run(exp, out.as_ref(), csv.as_ref()),
        Command::Report { report, csv } => show(report, csv.as_ref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            log::warn!("some query points failed");
            ExitCode::from(1)
        }
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(2)
        }
    }
}
