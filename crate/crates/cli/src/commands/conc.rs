use std::fmt::Write;

use clap::{Args, ValueEnum};
use rpbayes::conc::{finite_class_coverage, split_kl_coverage, CoverageConfig, DiscreteSupport};
use rpbayes::exec::Exec;
use rpbayes::rpb::excess_support;

use crate::{fmt_float, write_out, Failure, OutArgs, Outcome};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Inequality {
    /// PAC-Bayes-split-kl on a discrete variable.
    SplitKl,
    /// PAC-Bayes-kl over two hypotheses with a uniform prior.
    FiniteClass,
}

#[derive(Debug, Args)]
pub struct CoverageArgs {
    #[arg(long, value_enum, default_value = "split-kl")]
    bound: Inequality,
    /// Support points, increasing. Defaults to the excess-loss support at --gamma.
    #[arg(long, value_delimiter = ',')]
    support: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    /// Probabilities of the support points.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.4,0.3,0.2")]
    probs: Vec<f64>,
    /// Risks of the two hypotheses.
    #[arg(long, value_delimiter = ',', num_args = 2, default_value = "0.2,0.25")]
    risks: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

pub fn coverage(a: CoverageArgs, exec: Exec) -> Outcome {
    let cfg = CoverageConfig {
        n: a.n,
        delta: a.delta,
        trials: a.trials,
        seed: a.seed,
    };
    let report = match a.bound {
        Inequality::SplitKl => {
            let support = match a.support {
                Some(points) => DiscreteSupport::new(points)?,
                None => excess_support(a.gamma)?,
            };
            split_kl_coverage(&support, &a.probs, cfg, exec)?
        }
        Inequality::FiniteClass => finite_class_coverage([a.risks[0], a.risks[1]], cfg, exec)?,
    };
    if let Some(path) = &a.out.out {
        let mut csv = String::from("trial,violated\n");
        for (i, v) in report.violated.iter().enumerate() {
            let _ = writeln!(csv, "{i},{}", u8::from(*v));
        }
        write_out(path, &csv)?;
    }
    let summary = format!(
        "violation rate {} over {} trials (delta {}, limit {})",
        fmt_float(report.rate()),
        report.trials(),
        fmt_float(a.delta),
        fmt_float(report.tolerance())
    );
    if report.passes() {
        Ok(summary)
    } else {
        Err(Failure::Validation(summary))
    }
}
