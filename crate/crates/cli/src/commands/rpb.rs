use std::fmt::Write;
use std::fs;
use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::{Args, ValueEnum};
use rpbayes::conc::ConfidenceBudget;
use rpbayes::data::LabeledDataset;
use rpbayes::exec::Exec;
use rpbayes::pmodel::{ClassifierArch, StdMode, TrainConfig};
use rpbayes::rpb::{
    baseline as run_baseline, evaluate_bound_chain, geometric_split, implied_temperature, train_chain,
    BaselineConfig, BaselineMethod, BoundReport, ChainConfig, ChainFile, ChainSeeds, DataSource,
};

use crate::{fmt_float, write_json, write_out, Failure, OutArgs, Outcome};

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    n: usize,
    #[arg(long = "T")]
    depth: usize,
    #[command(flatten)]
    out: OutArgs,
}

pub fn split(a: SplitArgs) -> Outcome {
    let plan = geometric_split(a.n, a.depth)?;
    if let Some(path) = &a.out.out {
        let mut csv = String::from("t,size,n_val,implied_T\n");
        for t in 1..=plan.depth() {
            let _ = writeln!(
                csv,
                "{t},{},{},{}",
                plan.chunk_sizes()[t - 1],
                plan.n_val(t)?,
                fmt_float(implied_temperature(&plan, t)?)
            );
        }
        write_out(path, &csv)?;
    }
    let sizes: Vec<String> = plan.chunk_sizes().iter().map(|s| s.to_string()).collect();
    Ok(format!("split sizes {}", sizes.join(",")))
}

/// The training sample: IDX files when given, synthetic blobs otherwise.
#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long, requires = "labels")]
    images: Option<PathBuf>,
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
    /// Keep only the first examples of the IDX files.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 4000)]
    blobs_n: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 3.0)]
    separation: f64,
    #[arg(long, default_value_t = 100)]
    data_seed: u64,
    #[arg(long, requires = "test_labels")]
    test_images: Option<PathBuf>,
    #[arg(long, requires = "test_images")]
    test_labels: Option<PathBuf>,
    /// Size of a held-out blob sample used for the test column.
    #[arg(long)]
    test_blobs_n: Option<usize>,
    #[arg(long, default_value_t = 900)]
    test_seed: u64,
}

impl DataArgs {
    fn source(&self) -> DataSource {
        match (&self.images, &self.labels) {
            (Some(images), Some(labels)) => DataSource::Idx {
                images: images.clone(),
                labels: labels.clone(),
                limit: self.limit,
            },
            _ => DataSource::Blobs {
                n: self.blobs_n,
                classes: self.classes,
                dim: self.dim,
                separation: self.separation,
                seed: self.data_seed,
            },
        }
    }

    fn test_source(&self) -> Option<DataSource> {
        match (&self.test_images, &self.test_labels, self.test_blobs_n) {
            (Some(images), Some(labels), _) => Some(DataSource::Idx {
                images: images.clone(),
                labels: labels.clone(),
                limit: None,
            }),
            (_, _, Some(n)) => Some(DataSource::Blobs {
                n,
                classes: self.classes,
                dim: self.dim,
                separation: self.separation,
                seed: self.test_seed,
            }),
            _ => None,
        }
    }
}

fn load(source: &DataSource) -> Result<LabeledDataset, Failure> {
    Ok(source.load().with_context(|| format!("loading {source:?}"))?)
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Arch {
    Linear,
    OneHidden,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "linear")]
    arch: Arch,
    #[arg(long, default_value_t = 100)]
    hidden: usize,
    /// Standard deviation of the initial prior.
    #[arg(long, default_value_t = 0.03)]
    sigma0: f64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 250)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.95)]
    momentum: f64,
    /// Share one standard deviation across all weights.
    #[arg(long)]
    scalar_std: bool,
}

impl ModelArgs {
    fn arch(&self, data: &LabeledDataset) -> Result<ClassifierArch, Failure> {
        Ok(match self.arch {
            Arch::Linear => ClassifierArch::linear(data.dim(), data.classes())?,
            Arch::OneHidden => ClassifierArch::one_hidden(data.dim(), self.hidden, data.classes())?,
        })
    }

    fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            std_mode: if self.scalar_std {
                StdMode::Scalar
            } else {
                StdMode::PerParameter
            },
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long = "T", default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    /// Confidence used inside the training objectives.
    #[arg(long, default_value_t = 0.025)]
    delta: f64,
    /// Master seed for the split, prior, training and reference draws.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

pub fn train(a: TrainArgs, exec: Exec) -> Outcome {
    let source = a.data.source();
    let raw = load(&source)?;
    let arch = a.model.arch(&raw)?;
    let cfg = ChainConfig {
        depth: a.depth,
        gamma: a.gamma,
        sigma0: a.model.sigma0,
        delta: a.delta,
        train: a.model.train(),
        seeds: ChainSeeds::from_master(a.seed),
    };
    let chain = train_chain(&raw, &arch, &cfg, exec)?;
    if let Some(path) = &a.out.out {
        write_json(path, &ChainFile::from_chain(&chain, Some(source), a.data.test_source()))?;
    }
    let rejected: usize = chain.logs.iter().map(|l| l.rejected_steps).sum();
    let steps: usize = chain.logs.iter().map(|l| l.steps).sum();
    Ok(format!(
        "trained {} posteriors on {} points ({steps} steps, {rejected} rejected)",
        chain.depth(),
        raw.len()
    ))
}

/// Confidence levels and destination of a bound report.
#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, default_value_t = 0.01)]
    delta_prime: f64,
    /// Seed of the Monte Carlo evaluation draws.
    #[arg(long, default_value_t = 0)]
    eval_seed: u64,
    /// Report CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON summary; defaults to the report path with a .json extension.
    #[arg(long)]
    summary: Option<PathBuf>,
}

impl ReportArgs {
    fn emit(&self, report: &BoundReport) -> Outcome {
        if let Some(path) = &self.out {
            write_out(path, &report.to_csv())?;
        }
        let summary_path = self
            .summary
            .clone()
            .or_else(|| self.out.as_ref().map(|p| p.with_extension("json")));
        if let Some(path) = summary_path {
            write_json(&path, &report.summary())?;
        }
        let line = format!("final bound {}", fmt_float(report.final_bound));
        if report.valid {
            Ok(line)
        } else {
            Err(Failure::Validation(format!("{line} (a KL divergence is not finite)")))
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    chain: PathBuf,
    /// Defaults to the confidence the chain was trained with.
    #[arg(long)]
    delta: Option<f64>,
    #[command(flatten)]
    report: ReportArgs,
}

pub fn eval(a: EvalArgs, exec: Exec) -> Outcome {
    let text = fs::read_to_string(&a.chain).with_context(|| format!("cannot read {}", a.chain.display()))?;
    let file: ChainFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.chain.display()))?;
    let source = file
        .data
        .clone()
        .ok_or_else(|| anyhow!("the chain file does not record its training data"))?;
    let test = file.test_data.as_ref().map(load).transpose()?;
    let chain = file.into_chain()?;
    let raw = load(&source)?;
    let ordered = chain.ordered_data(&raw)?;
    let budget = ConfidenceBudget::new(a.delta.unwrap_or(chain.delta), a.report.delta_prime, chain.depth())?;
    let report = evaluate_bound_chain(&chain, &ordered, test.as_ref(), &budget, a.report.eval_seed, exec)?;
    a.report.emit(&report)
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// uninformed, informed or informed-excess.
    #[arg(long, default_value = "uninformed")]
    method: BaselineMethod,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0.025)]
    delta: f64,
    /// Share of the sample used to build an informed prior.
    #[arg(long, default_value_t = 0.5)]
    prior_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    report: ReportArgs,
}

pub fn baseline(a: BaselineArgs, exec: Exec) -> Outcome {
    let raw = load(&a.data.source())?;
    let test = a.data.test_source().as_ref().map(load).transpose()?;
    let arch = a.model.arch(&raw)?;
    let cfg = BaselineConfig {
        method: a.method,
        sigma0: a.model.sigma0,
        delta: a.delta,
        train: a.model.train(),
        seeds: ChainSeeds::from_master(a.seed),
        prior_fraction: a.prior_fraction,
    };
    let outcome = run_baseline(&raw, &arch, &cfg, test.as_ref(), a.report.delta_prime, a.report.eval_seed, exec)?;
    a.report.emit(&outcome.report)
}
