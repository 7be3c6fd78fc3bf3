//! Monte Carlo coverage checks for the confidence bounds.
//!
//! Each trial draws a fresh sample from its own random stream, computes a
//! bound, and records whether the bound fell below the true mean.

use rand::Rng;
use serde::Serialize;

use super::{pac_bayes_kl_bound, split_kl_bound, DiscreteSupport};
use crate::error::{domain, Result};
use crate::exec::{stream_rng, Exec};

/// Shared settings of a coverage experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageConfig {
    pub n: usize,
    pub delta: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        CoverageConfig {
            n: 100,
            delta: 0.05,
            trials: 10_000,
            seed: 0,
        }
    }
}

/// Outcome of a coverage experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub violated: Vec<bool>,
    pub delta: f64,
}

impl CoverageReport {
    pub fn trials(&self) -> usize {
        self.violated.len()
    }

    pub fn violations(&self) -> usize {
        self.violated.iter().filter(|&&v| v).count()
    }

    pub fn rate(&self) -> f64 {
        self.violations() as f64 / self.trials().max(1) as f64
    }

    /// `δ + 3·sqrt(δ(1-δ)/trials)`: three binomial standard errors above nominal.
    pub fn tolerance(&self) -> f64 {
        let d = self.delta;
        d + 3.0 * (d * (1.0 - d) / self.trials().max(1) as f64).sqrt()
    }

    pub fn passes(&self) -> bool {
        self.rate() <= self.tolerance()
    }
}

fn check_config(cfg: &CoverageConfig) -> Result<()> {
    if cfg.n == 0 || cfg.trials == 0 {
        return domain("coverage needs n ≥ 1 and at least one trial");
    }
    Ok(())
}

/// Draws an index from a categorical distribution given by its cumulative sums.
fn categorical<R: Rng>(rng: &mut R, cdf: &[f64]) -> usize {
    let u: f64 = rng.random();
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

/// Coverage of the split-kl bound for i.i.d. draws from `probs` over `support`.
pub fn split_kl_coverage(
    support: &DiscreteSupport,
    probs: &[f64],
    cfg: CoverageConfig,
    exec: Exec,
) -> Result<CoverageReport> {
    check_config(&cfg)?;
    if probs.len() != support.points().len() {
        return domain("one probability per support point is required");
    }
    if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return domain("probabilities must be a distribution");
    }
    let true_mean: f64 = support.points().iter().zip(probs).map(|(b, p)| b * p).sum();
    let cdf: Vec<f64> = probs
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let k = support.k();

    let outcomes = exec.map(cfg.trials, |trial| {
        let mut rng = stream_rng(cfg.seed, trial as u64);
        let mut counts = vec![0usize; k];
        for _ in 0..cfg.n {
            let idx = categorical(&mut rng, &cdf);
            // Z_{|j} = 1 for every j ≤ idx
            counts.iter_mut().take(idx).for_each(|c| *c += 1);
        }
        let segs: Vec<f64> = counts.iter().map(|&c| c as f64 / cfg.n as f64).collect();
        split_kl_bound(support, &segs, cfg.n, cfg.delta).map(|b| b < true_mean)
    });
    Ok(CoverageReport {
        violated: outcomes.into_iter().collect::<Result<_>>()?,
        delta: cfg.delta,
    })
}

/// Coverage of the PAC-Bayes-kl bound on a two-hypothesis class.
///
/// The prior is uniform and the posterior is a point mass on the empirical
/// risk minimizer, so `KL(ρ‖π) = ln 2` in every trial. `risks` are the true
/// Bernoulli losses of the two hypotheses; their per-datum losses are
/// independent.
pub fn finite_class_coverage(
    risks: [f64; 2],
    cfg: CoverageConfig,
    exec: Exec,
) -> Result<CoverageReport> {
    check_config(&cfg)?;
    if risks.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
        return domain("hypothesis risks must be probabilities");
    }
    let kl = std::f64::consts::LN_2;
    let outcomes = exec.map(cfg.trials, |trial| {
        let mut rng = stream_rng(cfg.seed, trial as u64);
        let mut losses = [0usize; 2];
        for _ in 0..cfg.n {
            for (h, l) in losses.iter_mut().enumerate() {
                if rng.random::<f64>() < risks[h] {
                    *l += 1;
                }
            }
        }
        let erm = usize::from(losses[1] < losses[0]);
        let emp = losses[erm] as f64 / cfg.n as f64;
        pac_bayes_kl_bound(emp, kl, cfg.n, cfg.delta).map(|b| b < risks[erm])
    });
    Ok(CoverageReport {
        violated: outcomes.into_iter().collect::<Result<_>>()?,
        delta: cfg.delta,
    })
}
