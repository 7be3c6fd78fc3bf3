use std::fmt::Write;

use clap::Args;
use rpbayes::elbo::{sweep, ComponentCount, QuadratureConfig};
use rpbayes::exec::Exec;

use crate::{fmt_float, write_out, Failure, OutArgs, Outcome};

/// Residuals at or above this fail the check.
const MAX_RESIDUAL: f64 = 1e-6;

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Exact number of mixture components; drawn from 1..=--max-d when omitted.
    #[arg(long = "D")]
    d: Option<usize>,
    #[arg(long, default_value_t = 8)]
    max_d: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simpson nodes.
    #[arg(long, default_value_t = 2001)]
    nodes: usize,
    /// Half-width of the integration window in standard deviations.
    #[arg(long, default_value_t = 8.0)]
    width: f64,
    #[command(flatten)]
    out: OutArgs,
}

pub fn verify(a: VerifyArgs, exec: Exec) -> Outcome {
    let count = match a.d {
        Some(0) => return Err(anyhow::anyhow!("--D must be at least 1").into()),
        Some(d) => ComponentCount::Exactly(d),
        None => ComponentCount::UpTo(a.max_d),
    };
    let cfg = QuadratureConfig {
        nodes: a.nodes,
        width_sds: a.width,
    };
    let checks = sweep(a.trials, count, a.seed, cfg, exec)?;
    if let Some(path) = &a.out.out {
        let mut csv = String::from("D,lhs,kl_avg,mi,rhs,residual\n");
        for c in &checks {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                c.d,
                fmt_float(c.lhs),
                fmt_float(c.kl_avg),
                fmt_float(c.mutual_info),
                fmt_float(c.rhs),
                fmt_float(c.residual)
            );
        }
        write_out(path, &csv)?;
    }
    let worst = checks.iter().map(|c| c.residual).fold(0.0, f64::max);
    let summary = format!("max residual {} over {} configurations", fmt_float(worst), checks.len());
    if worst < MAX_RESIDUAL {
        Ok(summary)
    } else {
        Err(Failure::Validation(summary))
    }
}
