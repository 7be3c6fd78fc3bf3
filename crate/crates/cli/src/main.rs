use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rpbayes::exec::Exec;

mod commands;

/// Seeded experiments for tempered posteriors and recursive PAC-Bayes bounds.
#[derive(Debug, Parser)]
#[command(name = "rpbayes", version)]
struct Cli {
    /// Worker threads for the data-parallel loops.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Concentration inequalities.
    #[command(subcommand)]
    Conc(ConcCommand),
    /// Cold posterior diagnostics on Bayesian linear regression.
    #[command(subcommand)]
    Cpe(CpeCommand),
    /// Tempered likelihoods as ordinary Bayesian models.
    #[command(subcommand)]
    Transforms(TransformsCommand),
    /// Recursive PAC-Bayes.
    #[command(subcommand)]
    Rpb(RpbCommand),
    /// The mean-field KL decomposition.
    #[command(subcommand)]
    Elbo(ElboCommand),
}

#[derive(Debug, Subcommand)]
enum ConcCommand {
    /// Empirical violation rate of a confidence bound.
    Coverage(commands::conc::CoverageArgs),
}

#[derive(Debug, Subcommand)]
enum CpeCommand {
    /// Losses and their λ-derivatives over a grid of temperatures.
    Scan(commands::cpe::ScanArgs),
    /// Covariance diagnostics of an augmented posterior.
    Da(commands::cpe::DaArgs),
}

#[derive(Debug, Subcommand)]
enum TransformsCommand {
    /// Density of the prior that makes a tempered Beta-Bernoulli posterior Bayesian.
    Demo(commands::transforms::DemoArgs),
}

#[derive(Debug, Subcommand)]
enum RpbCommand {
    /// Geometric split sizes.
    Split(commands::rpb::SplitArgs),
    /// Train a posterior chain.
    Train(commands::rpb::TrainArgs),
    /// Evaluate the bound of a trained chain.
    Eval(commands::rpb::EvalArgs),
    /// Single-step comparison bounds.
    Baseline(commands::rpb::BaselineArgs),
}

#[derive(Debug, Subcommand)]
enum ElboCommand {
    /// Check the decomposition on random configurations by quadrature.
    Verify(commands::elbo::VerifyArgs),
}

/// Where a command writes its main artifact.
#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output file; nothing is written when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum Failure {
    /// Bad flags, unreadable inputs, values out of range.
    Usage(anyhow::Error),
    /// The command ran but its check did not hold.
    Validation(String),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Usage(e.into())
    }
}

pub type Outcome = Result<String, Failure>;

pub fn write_out(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).context("serializing output")?;
    write_out(path, &(text + "\n"))
}

/// 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    rpbayes::rpb::fmt_float(v)
}

fn configure_threads(threads: usize) -> Result<Exec, Failure> {
    if threads == 0 {
        return Err(Failure::Usage(anyhow::anyhow!("--threads must be at least 1")));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("starting the thread pool")?;
    Ok(if threads == 1 { Exec::Sequential } else { Exec::Parallel })
}

fn run(cli: Cli) -> Outcome {
    let exec = configure_threads(cli.threads)?;
    match cli.command {
        Command::Conc(ConcCommand::Coverage(a)) => commands::conc::coverage(a, exec),
        Command::Cpe(CpeCommand::Scan(a)) => commands::cpe::scan(a, exec),
        Command::Cpe(CpeCommand::Da(a)) => commands::cpe::da(a, exec),
        Command::Transforms(TransformsCommand::Demo(a)) => commands::transforms::demo(a),
        Command::Rpb(RpbCommand::Split(a)) => commands::rpb::split(a),
        Command::Rpb(RpbCommand::Train(a)) => commands::rpb::train(a, exec),
        Command::Rpb(RpbCommand::Eval(a)) => commands::rpb::eval(a, exec),
        Command::Rpb(RpbCommand::Baseline(a)) => commands::rpb::baseline(a, exec),
        Command::Elbo(ElboCommand::Verify(a)) => commands::elbo::verify(a, exec),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(Failure::Validation(summary)) => {
            println!("{summary}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
