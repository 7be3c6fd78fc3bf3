//! The synthetic regression settings and the λ scan over them.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::Serialize;

use super::{
    bayes_derivative_for, bayes_loss, empirical_gibbs_loss, fit_tempered_posterior, generate_task,
    gibbs_derivative, mle_loss, BayesDerivative, GaussianModelSpec, RegressionTask, EVAL_STREAM, TRAIN_STREAM,
};
use crate::error::{domain, Error, Result};
use crate::exec::Exec;

/// The regression configurations: one well-specified, two likelihood
/// misspecifications (noise too small, noise too large), a prior too tight
/// around zero, and the large-noise case with more data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Setting {
    WellSpecified,
    LikelihoodMisspecI,
    LikelihoodMisspecII,
    PriorMisspec,
    LikelihoodMisspecIILarge,
}

/// Numbers behind a [`Setting`]. Variances are variances, not deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SettingConfig {
    pub n: usize,
    /// Features used by the model.
    pub k_model: usize,
    /// Leading features carrying a unit weight in the truth; the rest are 0.
    pub k_true: usize,
    pub likelihood_var: f64,
    pub prior_var: f64,
    pub noise_var_true: f64,
}

impl Setting {
    pub const ALL: [Setting; 5] = [
        Setting::WellSpecified,
        Setting::LikelihoodMisspecI,
        Setting::LikelihoodMisspecII,
        Setting::PriorMisspec,
        Setting::LikelihoodMisspecIILarge,
    ];

    pub fn config(self) -> SettingConfig {
        let base = SettingConfig {
            n: 5,
            k_model: 10,
            k_true: 10,
            likelihood_var: 1.0,
            prior_var: 2.0,
            noise_var_true: 1.0,
        };
        match self {
            Setting::WellSpecified => base,
            Setting::LikelihoodMisspecI => SettingConfig {
                k_model: 20,
                likelihood_var: 0.15,
                ..base
            },
            Setting::LikelihoodMisspecII => SettingConfig {
                likelihood_var: 3.0,
                ..base
            },
            Setting::PriorMisspec => SettingConfig {
                prior_var: 0.5,
                ..base
            },
            Setting::LikelihoodMisspecIILarge => SettingConfig {
                n: 50,
                likelihood_var: 3.0,
                ..base
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Setting::WellSpecified => "well-specified",
            Setting::LikelihoodMisspecI => "lik-misspec-1",
            Setting::LikelihoodMisspecII => "lik-misspec-2",
            Setting::PriorMisspec => "prior-misspec",
            Setting::LikelihoodMisspecIILarge => "lik-misspec-2-n50",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Setting::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Setting::ALL.iter().map(|v| v.name()).collect();
                Error::Domain(format!("unknown setting `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

impl SettingConfig {
    pub fn true_weights(&self) -> DVector<f64> {
        DVector::from_fn(self.k_model, |i, _| if i < self.k_true { 1.0 } else { 0.0 })
    }

    pub fn spec(&self) -> Result<GaussianModelSpec> {
        GaussianModelSpec::centered(self.likelihood_var, self.prior_var, self.k_model)
    }

    /// Training sample of size `n`.
    pub fn train_task(&self, seed: u64) -> Result<RegressionTask> {
        generate_task(self.n, self.true_weights(), self.noise_var_true, seed, TRAIN_STREAM)
    }

    /// Fresh sample standing in for the data-generating distribution.
    pub fn eval_task(&self, points: usize, seed: u64) -> Result<RegressionTask> {
        generate_task(points, self.true_weights(), self.noise_var_true, seed, EVAL_STREAM)
    }
}

/// Monte Carlo sizes for a scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpeConfig {
    pub eval_points: usize,
    pub posterior_samples: usize,
}

impl Default for CpeConfig {
    fn default() -> Self {
        CpeConfig {
            eval_points: 10_000,
            posterior_samples: 10_000,
        }
    }
}

/// One grid point of a scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CpeRow {
    pub lambda: f64,
    pub gibbs_emp: f64,
    pub bayes: f64,
    pub dgibbs: f64,
    pub dbayes: f64,
    pub dbayes_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CpeScan {
    pub setting: SettingConfig,
    pub rows: Vec<CpeRow>,
    /// Bayes-loss derivative at `λ = 1`.
    pub at_one: BayesDerivative,
    /// Empirical Gibbs loss at `λ = 1`.
    pub gibbs_at_one: f64,
    /// Least-squares training loss.
    pub mle_loss: f64,
}

impl CpeScan {
    /// A cold posterior effect: the Bayes loss decreases in `λ` at `λ = 1`
    /// by more than three standard errors.
    pub fn cpe(&self) -> bool {
        self.at_one.estimate < -3.0 * self.at_one.stderr
    }
}

/// Evaluates losses and derivatives of the tempered posterior on `grid`.
pub fn cpe_scan(
    setting: SettingConfig,
    grid: &[f64],
    seed: u64,
    cfg: CpeConfig,
    exec: Exec,
) -> Result<CpeScan> {
    let task = setting.train_task(seed)?;
    let eval = setting.eval_task(cfg.eval_points, seed)?;
    let spec = setting.spec()?;
    let row = |lambda: f64| -> Result<(CpeRow, BayesDerivative)> {
        let post = fit_tempered_posterior(&task, &spec, lambda)?;
        let db = bayes_derivative_for(&post, &task, &spec, &eval, cfg.posterior_samples, seed, exec)?;
        Ok((
            CpeRow {
                lambda,
                gibbs_emp: empirical_gibbs_loss(&post, &task, &spec)?,
                bayes: bayes_loss(&post, &spec, &eval)?,
                dgibbs: gibbs_derivative(&post, &task, &spec)?,
                dbayes: db.estimate,
                dbayes_stderr: db.stderr,
            },
            db,
        ))
    };
    let rows = grid.iter().map(|&l| row(l).map(|r| r.0)).collect::<Result<Vec<_>>>()?;
    let (one, at_one) = row(1.0)?;
    Ok(CpeScan {
        setting,
        rows,
        at_one,
        gibbs_at_one: one.gibbs_emp,
        mle_loss: mle_loss(&task, &spec)?,
    })
}

/// Parses `start:end:count` (inclusive, linearly spaced) or a comma list.
pub fn parse_lambda_grid(s: &str) -> Result<Vec<f64>> {
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| Error::Domain(format!("`{t}` is not a number")))
    };
    let grid = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let [start, end, count] = parts[..] else {
            return domain("grid must look like start:end:count");
        };
        let (start, end) = (num(start)?, num(end)?);
        let count: usize = count
            .trim()
            .parse()
            .map_err(|_| Error::Domain(format!("`{count}` is not a count")))?;
        match count {
            0 => return domain("grid needs at least one point"),
            1 => vec![start],
            c => (0..c)
                .map(|i| start + (end - start) * i as f64 / (c - 1) as f64)
                .collect(),
        }
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return domain("grid values must be positive and finite");
    }
    Ok(grid)
}
