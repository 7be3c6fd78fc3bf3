use std::fmt::Write;

use clap::Args;
use rpbayes::transforms::{beta_bernoulli_new_prior, open_unit_grid, verify_bayes_equivalence};

use crate::{fmt_float, write_out, Failure, OutArgs, Outcome};

const MAX_GAP: f64 = 1e-10;

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 2.0)]
    a: f64,
    #[arg(long, default_value_t = 2.0)]
    b: f64,
    #[arg(long, default_value_t = 3.0)]
    lambda: f64,
    /// The single Bernoulli observation.
    #[arg(long, default_value_t = 1)]
    y: u8,
    /// Interior points of the θ grid.
    #[arg(long, default_value_t = 1001)]
    grid_points: usize,
    #[command(flatten)]
    out: OutArgs,
}

pub fn demo(a: DemoArgs) -> Outcome {
    let grid = open_unit_grid(a.grid_points);
    let density = beta_bernoulli_new_prior(a.a, a.b, a.lambda, &grid)?;
    let gap = verify_bayes_equivalence(a.a, a.b, a.lambda, a.y, &grid)?;
    if let Some(path) = &a.out.out {
        let mut csv = String::from("theta,density\n");
        for (t, d) in grid.iter().zip(&density) {
            let _ = writeln!(csv, "{},{}", fmt_float(*t), fmt_float(*d));
        }
        write_out(path, &csv)?;
    }
    let summary = format!("max gap between tempered and new-prior posteriors {}", fmt_float(gap));
    if gap < MAX_GAP {
        Ok(summary)
    } else {
        Err(Failure::Validation(summary))
    }
}
