use std::fmt::Write;

use clap::{Args, ValueEnum};
use rpbayes::exec::Exec;
use rpbayes::templin::{
    cpe_scan, da_cov_diagnostics, fit_da_tempered_posterior, parse_lambda_grid, CpeConfig, Setting,
    SettingConfig, TransformationSet,
};
use serde::Serialize;

use crate::{fmt_float, write_json, write_out, OutArgs, Outcome};

#[derive(Debug, Args)]
struct SettingArgs {
    /// well-specified, lik-misspec-1, lik-misspec-2, prior-misspec or lik-misspec-2-n50.
    #[arg(long, default_value = "well-specified")]
    setting: Setting,
    /// Training sample size; the setting's own size when omitted.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fresh points standing in for the data distribution.
    #[arg(long, default_value_t = 10_000)]
    eval_points: usize,
    /// Posterior draws per Monte Carlo estimate.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
}

impl SettingArgs {
    fn config(&self) -> SettingConfig {
        let base = self.setting.config();
        SettingConfig {
            n: self.n.unwrap_or(base.n),
            ..base
        }
    }
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[command(flatten)]
    setting: SettingArgs,
    /// `start:end:count` or a comma list.
    #[arg(long, default_value = "0.25:8:32")]
    lambda_grid: String,
    #[command(flatten)]
    out: OutArgs,
}

pub fn scan(a: ScanArgs, exec: Exec) -> Outcome {
    let grid = parse_lambda_grid(&a.lambda_grid)?;
    let cfg = CpeConfig {
        eval_points: a.setting.eval_points,
        posterior_samples: a.setting.samples,
    };
    let scan = cpe_scan(a.setting.config(), &grid, a.setting.seed, cfg, exec)?;
    if let Some(path) = &a.out.out {
        let mut csv = String::from("lambda,gibbs_emp,bayes,dgibbs,dbayes,dbayes_stderr\n");
        for r in &scan.rows {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                fmt_float(r.lambda),
                fmt_float(r.gibbs_emp),
                fmt_float(r.bayes),
                fmt_float(r.dgibbs),
                fmt_float(r.dbayes),
                fmt_float(r.dbayes_stderr)
            );
        }
        write_out(path, &csv)?;
    }
    Ok(format!(
        "cpe={} dB/dlambda(1)={} stderr={}",
        scan.cpe(),
        fmt_float(scan.at_one.estimate),
        fmt_float(scan.at_one.stderr)
    ))
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Augmentation {
    Identity,
    /// Cyclic coordinate shifts, which preserve the data distribution.
    CyclicShifts,
    /// Coordinate sign flips, which do not.
    SignFlips,
}

#[derive(Debug, Args)]
pub struct DaArgs {
    #[command(flatten)]
    setting: SettingArgs,
    #[arg(long, value_enum, default_value = "cyclic-shifts")]
    transforms: Augmentation,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Serialize)]
struct DaReport<'a> {
    setting: &'a SettingConfig,
    lambda: f64,
    seed: u64,
    #[serde(flatten)]
    diagnostics: rpbayes::templin::DaDiagnostics,
}

pub fn da(a: DaArgs, exec: Exec) -> Outcome {
    let setting = a.setting.config();
    let spec = setting.spec()?;
    let task = setting.train_task(a.setting.seed)?;
    let holdout = setting.eval_task(a.setting.eval_points, a.setting.seed)?;
    let d = setting.k_model;
    let transforms = match a.transforms {
        Augmentation::Identity => TransformationSet::identity(d),
        Augmentation::CyclicShifts => TransformationSet::cyclic_shifts(d),
        Augmentation::SignFlips => TransformationSet::sign_flips(d),
    };
    let post = fit_da_tempered_posterior(&task, &spec, &transforms, a.lambda)?;
    let diag = da_cov_diagnostics(
        &post,
        &task,
        &spec,
        &transforms,
        &holdout,
        a.setting.samples,
        a.setting.seed,
        exec,
    )?;
    if let Some(path) = &a.out.out {
        let report = DaReport {
            setting: &setting,
            lambda: a.lambda,
            seed: a.setting.seed,
            diagnostics: diag,
        };
        write_json(path, &report)?;
    }
    Ok(format!(
        "gibbs_grad_cov={} bayes_grad_cov={} mean_neg_s={}",
        fmt_float(diag.gibbs_grad_cov),
        fmt_float(diag.bayes_grad_cov),
        fmt_float(diag.mean_neg_s)
    ))
}
