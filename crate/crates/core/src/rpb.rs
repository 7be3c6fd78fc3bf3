//! Recursive PAC-Bayes: sequential prior updates with excess-loss bounds.
//!
//! The training sample is permuted once and cut into chunks `S_1 … S_T`.
//! Posterior `π_t` is trained on `S_t` starting from `π_{t-1}`, and its bound
//! is evaluated on `U_t^val = S_t ∪ … ∪ S_T`. Every index below is a position
//! in the permuted sample, so a datum keeps its random streams across steps.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::conc::{
    kl_inv_upper, mc_correction_bound, pac_bayes_kl_bound, pac_bayes_split_kl_bound,
    ConfidenceBudget, DiscreteSupport,
};
use crate::data::{make_blobs, permutation, read_idx_pair, LabeledDataset};
use crate::error::domain;
use crate::exec::Exec;
use crate::pmodel::{
    gaussian_kl, gibbs_zero_one_losses, init_posterior, point_zero_one_losses,
    train_point_classifier, train_posterior, ClassifierArch, MeanFieldGaussian, Objective,
    PosteriorRecord, TrainConfig, TrainLog, TrainingSet,
};
use crate::Result;

/// Smallest accepted `γ`; below it the excess support collapses.
pub const MIN_GAMMA: f64 = 1e-6;

// test-set draws live in their own block of step ids
const TEST_STEP: u64 = 1 << 20;

/// Chunk sizes `|S_1| … |S_T|`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct SplitPlan {
    chunk_sizes: Vec<usize>,
}

impl TryFrom<Vec<usize>> for SplitPlan {
    type Error = crate::Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        SplitPlan::new(v)
    }
}

impl From<SplitPlan> for Vec<usize> {
    fn from(p: SplitPlan) -> Self {
        p.chunk_sizes
    }
}

impl SplitPlan {
    pub fn new(chunk_sizes: Vec<usize>) -> Result<Self> {
        if chunk_sizes.is_empty() {
            return domain("a split plan needs at least one chunk");
        }
        if chunk_sizes.contains(&0) {
            return domain("every chunk must hold at least one point");
        }
        Ok(SplitPlan { chunk_sizes })
    }

    pub fn chunk_sizes(&self) -> &[usize] {
        &self.chunk_sizes
    }

    pub fn depth(&self) -> usize {
        self.chunk_sizes.len()
    }

    pub fn n(&self) -> usize {
        self.chunk_sizes.iter().sum()
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.depth() {
            return domain(format!("step {t} outside 1..={}", self.depth()));
        }
        Ok(())
    }

    fn offset(&self, t: usize) -> usize {
        self.chunk_sizes[..t - 1].iter().sum()
    }

    /// `|S_1| + … + |S_t|`.
    pub fn n_train(&self, t: usize) -> Result<usize> {
        self.check_step(t)?;
        Ok(self.chunk_sizes[..t].iter().sum())
    }

    /// `|S_t| + … + |S_T|`.
    pub fn n_val(&self, t: usize) -> Result<usize> {
        self.check_step(t)?;
        Ok(self.chunk_sizes[t - 1..].iter().sum())
    }

    /// Positions of `S_t`.
    pub fn chunk_range(&self, t: usize) -> Result<Range<usize>> {
        self.check_step(t)?;
        let start = self.offset(t);
        Ok(start..start + self.chunk_sizes[t - 1])
    }

    /// Positions of `U_t^val`.
    pub fn val_range(&self, t: usize) -> Result<Range<usize>> {
        self.check_step(t)?;
        Ok(self.offset(t)..self.n())
    }
}

/// Halves the remaining pool from the last chunk backwards; the first chunk
/// takes what is left.
pub fn geometric_split(n: usize, depth: usize) -> Result<SplitPlan> {
    if depth == 0 {
        return domain("depth must be at least 1");
    }
    if depth > 63 || n < 1usize << (depth - 1) {
        return domain(format!("{n} points cannot fill {depth} geometric chunks"));
    }
    let mut sizes = vec![0; depth];
    let mut rest = n;
    for s in sizes[1..].iter_mut().rev() {
        *s = rest.div_ceil(2);
        rest -= *s;
    }
    sizes[0] = rest;
    SplitPlan::new(sizes)
}

/// `|S_t| / n_t^val`, the weight the step-`t` objective effectively puts on
/// its own data.
pub fn implied_temperature(plan: &SplitPlan, t: usize) -> Result<f64> {
    plan.check_step(t)?;
    Ok(plan.chunk_sizes[t - 1] as f64 / plan.n_val(t)? as f64)
}

/// Support of `ℓ(h) − γ·ℓ(h′)` for 0-1 losses: `(−γ, 0, 1−γ, 1)`, or the
/// ternary `(−1, 0, 1)` at `γ = 1`.
pub fn excess_support(gamma: f64) -> Result<DiscreteSupport> {
    if !(MIN_GAMMA..=1.0).contains(&gamma) {
        return domain(format!("gamma = {gamma} must lie in [{MIN_GAMMA}, 1]"));
    }
    if gamma == 1.0 {
        DiscreteSupport::new(vec![-1.0, 0.0, 1.0])
    } else {
        DiscreteSupport::new(vec![-gamma, 0.0, 1.0 - gamma, 1.0])
    }
}

/// Segment means `mean 1[ℓ_i − γ ℓ′_i ≥ b_j]` for paired 0-1 losses.
pub fn excess_segments(losses: &[f64], reference: &[f64], gamma: f64) -> Result<Vec<f64>> {
    let support = excess_support(gamma)?;
    if losses.is_empty() {
        return domain("no data to estimate the excess loss on");
    }
    if losses.len() != reference.len() {
        return domain("loss and reference sequences differ in length");
    }
    let thresholds = &support.points()[1..];
    let mut counts = vec![0usize; thresholds.len()];
    for (l, r) in losses.iter().zip(reference) {
        let f = l - gamma * r;
        for (c, b) in counts.iter_mut().zip(thresholds) {
            // values are exact support points up to rounding
            if f >= b - 1e-12 {
                *c += 1;
            }
        }
    }
    let n = losses.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Excess segment means of `π_t` against stored reference losses on
/// `data[range]`, one `π_t` draw per datum.
#[allow(clippy::too_many_arguments)]
pub fn excess_empiricals(
    arch: &ClassifierArch,
    pi_t: &MeanFieldGaussian,
    reference: &[f64],
    data: &LabeledDataset,
    range: Range<usize>,
    gamma: f64,
    seed: u64,
    step: u64,
    exec: Exec,
) -> Result<Vec<f64>> {
    if range.is_empty() {
        return domain("no data to estimate the excess loss on");
    }
    let losses = gibbs_zero_one_losses(arch, pi_t, data, range, seed, step, exec);
    excess_segments(&losses, reference, gamma)
}

/// `B_t = E_t + γ_t·B_{t-1}`.
pub fn combine_recursion(e_t: f64, gamma: f64, b_prev: f64) -> f64 {
    e_t + gamma * b_prev
}

/// Seeds for every random choice in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChainSeeds {
    pub split: u64,
    pub prior: u64,
    pub train: u64,
    /// Reference draws from `π_{t-1}` used by the excess loss.
    pub hprime: u64,
}

impl ChainSeeds {
    pub fn from_master(seed: u64) -> Self {
        ChainSeeds {
            split: seed,
            prior: seed.wrapping_add(1),
            train: seed.wrapping_add(2),
            hprime: seed.wrapping_add(3),
        }
    }

    fn train_seed(&self, t: usize) -> u64 {
        self.train.wrapping_add(t as u64 - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub depth: usize,
    /// Constant `γ_t` for `t ≥ 2`.
    pub gamma: f64,
    pub sigma0: f64,
    /// Confidence used inside the training objectives.
    pub delta: f64,
    pub train: TrainConfig,
    pub seeds: ChainSeeds,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            depth: 2,
            gamma: 0.5,
            sigma0: 0.03,
            delta: 0.025,
            train: TrainConfig::default(),
            seeds: ChainSeeds::default(),
        }
    }
}

/// Priors and posteriors `π_0 … π_T` with everything needed to re-evaluate
/// them.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorChain {
    pub arch: ClassifierArch,
    pub plan: SplitPlan,
    /// `γ_2 … γ_T`.
    pub gammas: Vec<f64>,
    pub posteriors: Vec<MeanFieldGaussian>,
    pub seeds: ChainSeeds,
    pub delta: f64,
    pub logs: Vec<TrainLog>,
}

impl PosteriorChain {
    pub fn depth(&self) -> usize {
        self.plan.depth()
    }

    /// The permuted sample the chain was trained on.
    pub fn ordered_data(&self, raw: &LabeledDataset) -> Result<LabeledDataset> {
        if raw.len() != self.plan.n() {
            return domain(format!(
                "chain was trained on {} points, got {}",
                self.plan.n(),
                raw.len()
            ));
        }
        Ok(raw.select(&permutation(raw.len(), self.seeds.split)))
    }

    fn gamma(&self, t: usize) -> f64 {
        self.gammas[t - 2]
    }

    /// 0-1 losses of the stored `π_{t-1}` draws on `U_t^val`.
    pub fn reference_losses(&self, ordered: &LabeledDataset, t: usize, exec: Exec) -> Result<Vec<f64>> {
        if t < 2 {
            return domain("reference draws start at step 2");
        }
        let range = self.plan.val_range(t)?;
        Ok(gibbs_zero_one_losses(
            &self.arch,
            &self.posteriors[t - 1],
            ordered,
            range,
            self.seeds.hprime,
            t as u64,
            exec,
        ))
    }
}

fn ln_2sqrt_over(n: usize, delta: f64) -> f64 {
    (2.0 * (n as f64).sqrt() / delta).ln()
}

fn check_data(arch: &ClassifierArch, data: &LabeledDataset) -> Result<()> {
    if data.dim() != arch.input_dim || data.classes() > arch.class_count {
        return domain(format!(
            "data ({} features, {} classes) does not fit the architecture ({} inputs, {} classes)",
            data.dim(),
            data.classes(),
            arch.input_dim,
            arch.class_count
        ));
    }
    Ok(())
}

/// Trains `π_1 … π_T` on a geometric split of `raw`.
///
/// `π_1` minimizes the relaxed PAC-Bayes-kl objective on `S_1` with the full
/// sample size `n` as denominator; `π_t`, `t ≥ 2`, minimizes the smoothed
/// split-kl excess objective on `S_t` with denominator `n_t^val`.
pub fn train_chain(
    raw: &LabeledDataset,
    arch: &ClassifierArch,
    cfg: &ChainConfig,
    exec: Exec,
) -> Result<PosteriorChain> {
    let plan = geometric_split(raw.len(), cfg.depth)?;
    train_chain_with_plan(raw, arch, plan, cfg, exec)
}

pub fn train_chain_with_plan(
    raw: &LabeledDataset,
    arch: &ClassifierArch,
    plan: SplitPlan,
    cfg: &ChainConfig,
    exec: Exec,
) -> Result<PosteriorChain> {
    arch.validate()?;
    check_data(arch, raw)?;
    if plan.depth() != cfg.depth {
        return domain("split plan depth differs from the configured depth");
    }
    excess_support(cfg.gamma)?;
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return domain("delta must lie in (0, 1)");
    }
    let depth = cfg.depth;
    let n = raw.len();
    let pi0 = init_posterior(arch, cfg.sigma0, cfg.seeds.prior)?;
    let mut chain = PosteriorChain {
        arch: *arch,
        plan,
        gammas: vec![cfg.gamma; depth - 1],
        posteriors: vec![pi0],
        seeds: cfg.seeds,
        delta: cfg.delta,
        logs: Vec::new(),
    };
    let ordered = chain.ordered_data(raw)?;
    let tf = depth as f64;

    for t in 1..=depth {
        let prev = chain.posteriors[t - 1].clone();
        let chunk = chain.plan.chunk_range(t)?;
        let hyper = TrainConfig {
            seed: cfg.seeds.train_seed(t),
            ..cfg.train
        };
        let (post, log) = if t == 1 {
            let set = TrainingSet {
                data: &ordered,
                pool: chunk,
                reference_losses: None,
            };
            let objective = Objective::PacBayesKl {
                denominator: n,
                log_term: ln_2sqrt_over(n, cfg.delta / tf),
            };
            train_posterior(prev.clone(), &prev, arch, &set, &objective, &hyper)?
        } else {
            let gamma = chain.gamma(t);
            let n_val = chain.plan.n_val(t)?;
            let reference = chain.reference_losses(&ordered, t, exec)?;
            let set = TrainingSet {
                data: &ordered,
                pool: chunk.clone(),
                reference_losses: Some(&reference[..chunk.len()]),
            };
            let objective = Objective::SplitExcess {
                support: excess_support(gamma)?,
                gamma,
                n_val,
                log_term: (6.0 * tf * (n_val as f64).sqrt() / cfg.delta).ln(),
            };
            train_posterior(prev.clone(), &prev, arch, &set, &objective, &hyper)?
        };
        chain.posteriors.push(post);
        chain.logs.push(log);
    }
    Ok(chain)
}

/// One row of a bound report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub n_val: usize,
    /// Empirical Gibbs 0-1 loss (step 1 and single-step baselines).
    pub emp_loss: Option<f64>,
    /// Empirical excess segment means.
    pub segments: Option<Vec<f64>>,
    /// `b_0 + Σ α_j F̂_j` from the uncorrected segment means.
    pub f_hat: Option<f64>,
    pub kl: f64,
    pub kl_over_nval: f64,
    pub e_t: Option<f64>,
    pub b_t: f64,
    pub gamma: Option<f64>,
    /// Post-hoc check `γ_t < 1 − E_t/B_{t-1}`.
    pub gamma_feasible: Option<bool>,
    pub implied_temperature: f64,
    pub test01: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub steps: Vec<StepRecord>,
    pub delta: f64,
    pub delta_prime: f64,
    pub final_bound: f64,
    /// False when a KL divergence came out non-finite.
    pub valid: bool,
}

/// JSON summary written next to the CSV report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub delta: f64,
    pub delta_prime: f64,
    pub final_bound: f64,
}

/// 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

impl BoundReport {
    pub const CSV_HEADER: &'static str = "t,n_val,F_hat,kl_over_nval,E_t,B_t,implied_T,test01";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for s in &self.steps {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.t,
                s.n_val,
                fmt_opt(s.f_hat),
                fmt_float(s.kl_over_nval),
                fmt_opt(s.e_t),
                fmt_float(s.b_t),
                fmt_float(s.implied_temperature),
                fmt_opt(s.test01),
            );
        }
        out
    }

    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            delta: self.delta,
            delta_prime: self.delta_prime,
            final_bound: self.final_bound,
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean 0-1 loss over `data` with one fresh draw per datum.
pub fn gibbs_risk(
    arch: &ClassifierArch,
    dist: &MeanFieldGaussian,
    data: &LabeledDataset,
    seed: u64,
    exec: Exec,
) -> f64 {
    mean(&gibbs_zero_one_losses(arch, dist, data, 0..data.len(), seed, 0, exec))
}

fn test_loss(
    arch: &ClassifierArch,
    dist: &MeanFieldGaussian,
    test: Option<&LabeledDataset>,
    seed: u64,
    t: usize,
    exec: Exec,
) -> Option<f64> {
    test.filter(|d| !d.is_empty()).map(|d| {
        mean(&gibbs_zero_one_losses(arch, dist, d, 0..d.len(), seed, TEST_STEP + t as u64, exec))
    })
}

/// Certifies every step of a trained chain.
///
/// `ordered` is the permuted training sample (see
/// [`PosteriorChain::ordered_data`]). Each Monte Carlo estimate is replaced by
/// its upper confidence bound at `δ′/(1 + 3(T−1))`, so the final `B_T` holds
/// with probability at least `1 − δ − δ′`.
pub fn evaluate_bound_chain(
    chain: &PosteriorChain,
    ordered: &LabeledDataset,
    test: Option<&LabeledDataset>,
    budget: &ConfidenceBudget,
    eval_seed: u64,
    exec: Exec,
) -> Result<BoundReport> {
    let depth = chain.depth();
    if budget.depth != depth {
        return domain(format!(
            "budget is split over {} steps, chain has {depth}",
            budget.depth
        ));
    }
    if ordered.len() != chain.plan.n() {
        return domain("evaluation data does not match the chain's split plan");
    }
    if chain.posteriors.len() != depth + 1 || chain.gammas.len() + 1 != depth {
        return domain("chain is missing posteriors or gammas");
    }
    check_data(&chain.arch, ordered)?;
    let step_delta = budget.step_delta();
    let dp = budget.per_estimate_delta_prime();
    let arch = &chain.arch;
    let mut steps = Vec::with_capacity(depth);
    let mut valid = true;
    let mut b_prev = f64::NAN;

    for t in 1..=depth {
        let post = &chain.posteriors[t];
        let kl = gaussian_kl(post, &chain.posteriors[t - 1])?;
        let n_val = chain.plan.n_val(t)?;
        let range = chain.plan.val_range(t)?;
        let implied = implied_temperature(&chain.plan, t)?;
        let test01 = test_loss(arch, post, test, eval_seed, t, exec);
        if !kl.is_finite() {
            valid = false;
        }
        let record = if t == 1 {
            let losses = gibbs_zero_one_losses(arch, post, ordered, range, eval_seed, 1, exec);
            let emp = mean(&losses);
            let b = if kl.is_finite() {
                let corrected = mc_correction_bound(emp, n_val, dp)?;
                pac_bayes_kl_bound(corrected, kl, n_val, step_delta)?
            } else {
                f64::NAN
            };
            StepRecord {
                t,
                n_val,
                emp_loss: Some(emp),
                segments: None,
                f_hat: None,
                kl,
                kl_over_nval: kl / n_val as f64,
                e_t: None,
                b_t: b,
                gamma: None,
                gamma_feasible: None,
                implied_temperature: implied,
                test01,
            }
        } else {
            let gamma = chain.gamma(t);
            let support = excess_support(gamma)?;
            let reference = chain.reference_losses(ordered, t, exec)?;
            let segments = excess_empiricals(
                arch, post, &reference, ordered, range, gamma, eval_seed, t as u64, exec,
            )?;
            let (e, b) = if kl.is_finite() {
                let corrected = segments
                    .iter()
                    .map(|&s| mc_correction_bound(s, n_val, dp))
                    .collect::<Result<Vec<_>>>()?;
                let e = pac_bayes_split_kl_bound(&support, &corrected, kl, n_val, step_delta)?;
                (e, combine_recursion(e, gamma, b_prev))
            } else {
                (f64::NAN, f64::NAN)
            };
            StepRecord {
                t,
                n_val,
                emp_loss: None,
                f_hat: Some(support.combine(&segments)),
                segments: Some(segments),
                kl,
                kl_over_nval: kl / n_val as f64,
                e_t: Some(e),
                b_t: b,
                gamma: Some(gamma),
                gamma_feasible: Some(gamma < 1.0 - e / b_prev),
                implied_temperature: implied,
                test01,
            }
        };
        b_prev = record.b_t;
        steps.push(record);
    }
    Ok(BoundReport {
        steps,
        delta: budget.delta,
        delta_prime: budget.delta_prime,
        final_bound: b_prev,
        valid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMethod {
    Uninformed,
    Informed,
    InformedExcess,
}

impl std::str::FromStr for BaselineMethod {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uninformed" => Ok(BaselineMethod::Uninformed),
            "informed" => Ok(BaselineMethod::Informed),
            "informed-excess" | "informed_excess" => Ok(BaselineMethod::InformedExcess),
            other => domain(format!("unknown baseline method '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    pub sigma0: f64,
    pub delta: f64,
    pub train: TrainConfig,
    pub seeds: ChainSeeds,
    /// Share of the sample used to build the informed prior.
    pub prior_fraction: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            method: BaselineMethod::Uninformed,
            sigma0: 0.03,
            delta: 0.025,
            train: TrainConfig::default(),
            seeds: ChainSeeds::default(),
            prior_fraction: 0.5,
        }
    }
}

/// Trained baseline posterior and its certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOutcome {
    pub posterior: MeanFieldGaussian,
    pub prior: MeanFieldGaussian,
    pub report: BoundReport,
}

/// Single-step comparison methods. The report has one row; `delta_prime`
/// is spread over the Monte Carlo estimates the method needs.
pub fn baseline(
    raw: &LabeledDataset,
    arch: &ClassifierArch,
    cfg: &BaselineConfig,
    test: Option<&LabeledDataset>,
    delta_prime: f64,
    eval_seed: u64,
    exec: Exec,
) -> Result<BaselineOutcome> {
    arch.validate()?;
    check_data(arch, raw)?;
    if !(0.0..1.0).contains(&cfg.prior_fraction) {
        return domain("prior fraction must lie in [0, 1)");
    }
    // δ' checks happen in ConfidenceBudget
    ConfidenceBudget::new(cfg.delta, delta_prime, 1)?;
    let n = raw.len();
    let ordered = raw.select(&permutation(n, cfg.seeds.split));
    let pi0 = init_posterior(arch, cfg.sigma0, cfg.seeds.prior)?;
    let final_hyper = TrainConfig {
        seed: cfg.seeds.train,
        ..cfg.train
    };
    let side_hyper = TrainConfig {
        seed: cfg.seeds.train.wrapping_add(1),
        ..cfg.train
    };
    let n1 = match cfg.method {
        BaselineMethod::Uninformed => 0,
        _ => (n as f64 * cfg.prior_fraction).floor() as usize,
    };
    if n1 >= n {
        return domain("no data left to certify on");
    }
    let n2 = n - n1;

    let prior = if n1 == 0 {
        pi0.clone()
    } else {
        let set = TrainingSet {
            data: &ordered,
            pool: 0..n1,
            reference_losses: None,
        };
        let objective = Objective::PacBayesKl {
            denominator: n1,
            log_term: ln_2sqrt_over(n1, cfg.delta),
        };
        train_posterior(pi0.clone(), &pi0, arch, &set, &objective, &side_hyper)?.0
    };

    let certify = n1..n;
    let (posterior, record) = match cfg.method {
        BaselineMethod::Uninformed | BaselineMethod::Informed => {
            let set = TrainingSet {
                data: &ordered,
                pool: certify.clone(),
                reference_losses: None,
            };
            let objective = Objective::PacBayesKl {
                denominator: n2,
                log_term: ln_2sqrt_over(n2, cfg.delta),
            };
            let (rho, _) = train_posterior(prior.clone(), &prior, arch, &set, &objective, &final_hyper)?;
            let kl = gaussian_kl(&rho, &prior)?;
            let losses = gibbs_zero_one_losses(arch, &rho, &ordered, certify, eval_seed, 1, exec);
            let emp = mean(&losses);
            let corrected = mc_correction_bound(emp, n2, delta_prime)?;
            let b = pac_bayes_kl_bound(corrected, kl, n2, cfg.delta)?;
            let record = StepRecord {
                t: 1,
                n_val: n2,
                emp_loss: Some(emp),
                segments: None,
                f_hat: None,
                kl,
                kl_over_nval: kl / n2 as f64,
                e_t: None,
                b_t: b,
                gamma: None,
                gamma_feasible: None,
                implied_temperature: 1.0,
                test01: test_loss(arch, &rho, test, eval_seed, 1, exec),
            };
            (rho, record)
        }
        BaselineMethod::InformedExcess => {
            let half = TrainingSet {
                data: &ordered,
                pool: 0..n1,
                reference_losses: None,
            };
            let h_star = train_point_classifier(pi0.means(), arch, &half, &side_hyper)?;
            let reference = point_zero_one_losses(arch, &h_star, &ordered, certify.clone());
            let set = TrainingSet {
                data: &ordered,
                pool: certify.clone(),
                reference_losses: Some(&reference),
            };
            let support = excess_support(1.0)?;
            // δ is shared between the excess bound and the bound on L(h*)
            let half_delta = cfg.delta / 2.0;
            let objective = Objective::SplitExcess {
                support: support.clone(),
                gamma: 1.0,
                n_val: n2,
                log_term: (2.0 * support.k() as f64 * (n2 as f64).sqrt() / half_delta).ln(),
            };
            let (rho, _) = train_posterior(prior.clone(), &prior, arch, &set, &objective, &final_hyper)?;
            let kl = gaussian_kl(&rho, &prior)?;
            let segments = excess_empiricals(
                arch, &rho, &reference, &ordered, certify, 1.0, eval_seed, 1, exec,
            )?;
            let dp = delta_prime / support.k() as f64;
            let corrected = segments
                .iter()
                .map(|&s| mc_correction_bound(s, n2, dp))
                .collect::<Result<Vec<_>>>()?;
            let e = pac_bayes_split_kl_bound(&support, &corrected, kl, n2, half_delta)?;
            let ref_loss = mean(&reference);
            let ref_bound = kl_inv_upper(ref_loss, (1.0 / half_delta).ln() / n2 as f64)?;
            let record = StepRecord {
                t: 1,
                n_val: n2,
                emp_loss: Some(ref_loss),
                f_hat: Some(support.combine(&segments)),
                segments: Some(segments),
                kl,
                kl_over_nval: kl / n2 as f64,
                e_t: Some(e),
                b_t: e + ref_bound,
                gamma: Some(1.0),
                gamma_feasible: None,
                implied_temperature: 1.0,
                test01: test_loss(arch, &rho, test, eval_seed, 1, exec),
            };
            (rho, record)
        }
    };
    let final_bound = record.b_t;
    Ok(BaselineOutcome {
        posterior,
        prior,
        report: BoundReport {
            steps: vec![record],
            delta: cfg.delta,
            delta_prime,
            final_bound,
            valid: true,
        },
    })
}

/// Where a dataset comes from, so chain files can be re-evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    Blobs {
        n: usize,
        classes: usize,
        dim: usize,
        separation: f64,
        seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// Keep only the first `limit` examples.
        limit: Option<usize>,
    },
}

impl DataSource {
    pub fn load(&self) -> Result<LabeledDataset> {
        match self {
            DataSource::Blobs {
                n,
                classes,
                dim,
                separation,
                seed,
            } => make_blobs(*n, *classes, *dim, *separation, *seed),
            DataSource::Idx {
                images,
                labels,
                limit,
            } => {
                let ds = read_idx_pair(images, labels)?;
                match limit {
                    Some(l) if *l < ds.len() => {
                        Ok(ds.select(&(0..*l).collect::<Vec<_>>()))
                    }
                    _ => Ok(ds),
                }
            }
        }
    }
}

/// On-disk form of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainFile {
    #[serde(rename = "T")]
    pub depth: usize,
    pub gammas: Vec<f64>,
    pub split_sizes: SplitPlan,
    pub seeds: ChainSeeds,
    pub delta: f64,
    pub posteriors: Vec<PosteriorRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_data: Option<DataSource>,
    #[serde(default)]
    pub diagnostics: Vec<TrainLog>,
}

impl ChainFile {
    pub fn from_chain(chain: &PosteriorChain, data: Option<DataSource>, test_data: Option<DataSource>) -> Self {
        let posteriors = chain
            .posteriors
            .iter()
            .enumerate()
            .map(|(t, p)| {
                let seed = if t == 0 {
                    chain.seeds.prior
                } else {
                    chain.seeds.train_seed(t)
                };
                PosteriorRecord::new(chain.arch, p, seed)
            })
            .collect();
        ChainFile {
            depth: chain.depth(),
            gammas: chain.gammas.clone(),
            split_sizes: chain.plan.clone(),
            seeds: chain.seeds,
            delta: chain.delta,
            posteriors,
            data,
            test_data,
            diagnostics: chain.logs.clone(),
        }
    }

    pub fn into_chain(self) -> Result<PosteriorChain> {
        if self.split_sizes.depth() != self.depth
            || self.posteriors.len() != self.depth + 1
            || self.gammas.len() + 1 != self.depth
        {
            return domain("chain file is inconsistent with its depth");
        }
        for &g in &self.gammas {
            excess_support(g)?;
        }
        let arch = self.posteriors[0].arch;
        if self.posteriors.iter().any(|p| p.arch != arch) {
            return domain("chain posteriors disagree on the architecture");
        }
        let posteriors = self
            .posteriors
            .iter()
            .map(PosteriorRecord::distribution)
            .collect::<Result<Vec<_>>>()?;
        Ok(PosteriorChain {
            arch,
            plan: self.split_sizes,
            gammas: self.gammas,
            posteriors,
            seeds: self.seeds,
            delta: self.delta,
            logs: self.diagnostics,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conc::decompose_discrete;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    #[test]
    fn geometric_split_sizes() {
        assert_eq!(
            geometric_split(60000, 4).unwrap().chunk_sizes(),
            &[7500, 7500, 15000, 30000]
        );
        assert_eq!(
            geometric_split(60000, 8).unwrap().chunk_sizes(),
            &[468, 469, 938, 1875, 3750, 7500, 15000, 30000]
        );
        assert_eq!(geometric_split(17, 1).unwrap().chunk_sizes(), &[17]);
        assert!(geometric_split(3, 3).is_err());
        assert!(geometric_split(4, 3).is_ok());
    }

    #[test]
    fn plan_ranges() {
        let p = geometric_split(60000, 8).unwrap();
        assert_eq!(p.n_val(2).unwrap(), 59532);
        assert_eq!(p.n_val(4).unwrap(), 58125);
        assert_eq!(p.n_train(2).unwrap(), 937);
        assert_eq!(p.chunk_range(3).unwrap(), 937..1875);
        assert_eq!(p.val_range(8).unwrap(), 30000..60000);
        assert!(p.n_val(0).is_err() && p.n_val(9).is_err());
        assert!(SplitPlan::new(vec![3, 0]).is_err());
    }

    #[test]
    fn implied_temperatures() {
        let p2 = geometric_split(60000, 2).unwrap();
        assert_eq!(implied_temperature(&p2, 1).unwrap(), 0.5);
        let p8 = geometric_split(60000, 8).unwrap();
        assert_eq!(implied_temperature(&p8, 1).unwrap(), 468.0 / 60000.0);
        assert_eq!(implied_temperature(&p8, 8).unwrap(), 1.0);
    }

    #[test]
    fn excess_support_shape() {
        let s = excess_support(0.5).unwrap();
        assert_eq!(s.points(), &[-0.5, 0.0, 0.5, 1.0]);
        assert_eq!(s.alphas(), &[0.5, 0.5, 0.5]);
        assert_eq!(excess_support(1.0).unwrap().points(), &[-1.0, 0.0, 1.0]);
        assert!(excess_support(1e-7).is_err());
        assert!(excess_support(1.5).is_err());
    }

    #[test]
    fn excess_reconstruction() {
        let s = excess_support(0.5).unwrap();
        for l in [0.0, 1.0] {
            for lp in [0.0, 1.0] {
                let f: f64 = l - 0.5 * lp;
                let bits = decompose_discrete(f, &s).unwrap();
                let segs: Vec<f64> = bits.iter().map(|&b| f64::from(b)).collect();
                assert_eq!(s.combine(&segs), f);
            }
        }
    }

    #[test]
    fn excess_segments_cases() {
        // identical predictions: f ∈ {0, 1-γ}
        let l = [0.0, 1.0, 1.0, 0.0];
        let s = excess_segments(&l, &l, 0.5).unwrap();
        assert_eq!(s[0], 1.0);
        assert_eq!(s[2], 0.0);
        // perfect against useless
        let s = excess_segments(&[0.0; 5], &[1.0; 5], 0.5).unwrap();
        assert_eq!(s, vec![0.0, 0.0, 0.0]);
        assert_eq!(excess_support(0.5).unwrap().combine(&s), -0.5);
        assert!(excess_segments(&[], &[], 0.5).is_err());
    }

    #[test]
    fn excess_segments_match_direct_average() {
        // deterministic hypotheses on ten points, every pairing enumerated
        let hyps: Vec<Vec<f64>> = (0..8u32)
            .map(|h| (0..10).map(|i| f64::from(((h * 7 + i * 3) % 5 == 0) as u8)).collect())
            .collect();
        for gamma in [0.25, 0.5, 0.9, 1.0] {
            let support = excess_support(gamma).unwrap();
            for a in &hyps {
                for b in &hyps {
                    let segs = excess_segments(a, b, gamma).unwrap();
                    let direct = a.iter().zip(b).map(|(x, y)| x - gamma * y).sum::<f64>() / 10.0;
                    assert_abs_diff_eq!(support.combine(&segs), direct, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn recursion_rows_of_a_deep_chain() {
        // (E_t, B_{t-1}, B_t) from a T = 8 MNIST chain
        let rows = [
            (0.114, 0.612, 0.421),
            (0.125, 0.421, 0.336),
            (0.099, 0.336, 0.267),
            (0.083, 0.267, 0.217),
            (0.076, 0.217, 0.185),
            (0.073, 0.185, 0.166),
            (0.074, 0.166, 0.158),
        ];
        for (e, prev, b) in rows {
            assert!((combine_recursion(e, 0.5, prev) - b).abs() <= 2e-3);
        }
    }

    fn small_setup(depth: usize) -> (LabeledDataset, ClassifierArch, ChainConfig) {
        let data = make_blobs(800, 2, 2, 3.0, 5).unwrap();
        let arch = ClassifierArch::linear(2, 2).unwrap();
        let cfg = ChainConfig {
            depth,
            train: TrainConfig {
                epochs: 5,
                batch_size: 50,
                ..TrainConfig::default()
            },
            seeds: ChainSeeds::from_master(9),
            ..ChainConfig::default()
        };
        (data, arch, cfg)
    }

    #[test]
    fn report_satisfies_recursion_exactly() {
        let (data, arch, cfg) = small_setup(3);
        let chain = train_chain(&data, &arch, &cfg, Exec::Parallel).unwrap();
        let ordered = chain.ordered_data(&data).unwrap();
        let budget = ConfidenceBudget::new(0.025, 0.01, 3).unwrap();
        let test = make_blobs(500, 2, 2, 3.0, 77).unwrap();
        let r = evaluate_bound_chain(&chain, &ordered, Some(&test), &budget, 4, Exec::Parallel).unwrap();
        assert!(r.valid);
        assert_eq!(r.steps.len(), 3);
        for w in r.steps.windows(2) {
            let (prev, cur) = (&w[0], &w[1]);
            assert_eq!(cur.b_t, cur.e_t.unwrap() + cur.gamma.unwrap() * prev.b_t);
            // the bound never undercuts its own empirical input
            assert!(cur.e_t.unwrap() >= cur.f_hat.unwrap());
        }
        assert!(r.steps[0].b_t >= r.steps[0].emp_loss.unwrap());
        assert_eq!(r.final_bound, r.steps[2].b_t);
        assert_eq!(r.steps[2].implied_temperature, 1.0);
        // same inputs reproduce the report exactly, whatever the strategy
        let again = evaluate_bound_chain(&chain, &ordered, Some(&test), &budget, 4, Exec::Sequential).unwrap();
        assert_eq!(r, again);
        let csv = r.to_csv();
        assert!(csv.starts_with(BoundReport::CSV_HEADER));
        assert_eq!(csv.lines().count(), 4);
        assert!(evaluate_bound_chain(
            &chain,
            &ordered,
            None,
            &ConfidenceBudget::new(0.025, 0.01, 2).unwrap(),
            4,
            Exec::Sequential
        )
        .is_err());
    }

    #[test]
    fn chain_objective_logs_denominators() {
        let (data, arch, cfg) = small_setup(3);
        let chain = train_chain(&data, &arch, &cfg, Exec::Sequential).unwrap();
        assert_eq!(chain.logs[0].epochs[0].denominator, 800);
        assert_eq!(chain.logs[1].epochs[0].denominator, chain.plan.n_val(2).unwrap());
        assert_eq!(chain.logs[2].epochs[0].denominator, 400);
    }

    #[test]
    fn depth_one_chain_is_the_uninformed_baseline() {
        let (data, arch, cfg) = small_setup(1);
        let chain = train_chain(&data, &arch, &cfg, Exec::Sequential).unwrap();
        let ordered = chain.ordered_data(&data).unwrap();
        let budget = ConfidenceBudget::new(0.025, 0.01, 1).unwrap();
        let r = evaluate_bound_chain(&chain, &ordered, None, &budget, 3, Exec::Sequential).unwrap();
        let bcfg = BaselineConfig {
            train: cfg.train,
            seeds: cfg.seeds,
            ..BaselineConfig::default()
        };
        let b = baseline(&data, &arch, &bcfg, None, 0.01, 3, Exec::Sequential).unwrap();
        assert_eq!(b.posterior, chain.posteriors[1]);
        assert_eq!(b.report.final_bound, r.final_bound);
    }

    #[test]
    fn informed_without_prior_data_is_uninformed() {
        let (data, arch, cfg) = small_setup(1);
        let base = BaselineConfig {
            train: cfg.train,
            seeds: cfg.seeds,
            ..BaselineConfig::default()
        };
        let informed = BaselineConfig {
            method: BaselineMethod::Informed,
            prior_fraction: 0.0,
            ..base.clone()
        };
        let a = baseline(&data, &arch, &base, None, 0.01, 3, Exec::Sequential).unwrap();
        let b = baseline(&data, &arch, &informed, None, 0.01, 3, Exec::Sequential).unwrap();
        assert_eq!(a.report, b.report);
    }

    #[test]
    fn baselines_produce_bounds() {
        let (data, arch, cfg) = small_setup(1);
        for method in [
            BaselineMethod::Uninformed,
            BaselineMethod::Informed,
            BaselineMethod::InformedExcess,
        ] {
            let bcfg = BaselineConfig {
                method,
                train: cfg.train,
                seeds: cfg.seeds,
                ..BaselineConfig::default()
            };
            let r = baseline(&data, &arch, &bcfg, None, 0.01, 3, Exec::Parallel).unwrap().report;
            assert!(r.final_bound > 0.0 && r.final_bound.is_finite(), "{method:?}");
        }
    }

    #[test]
    fn chain_file_round_trip() {
        let (data, arch, cfg) = small_setup(2);
        let chain = train_chain(&data, &arch, &cfg, Exec::Sequential).unwrap();
        let src = DataSource::Blobs {
            n: 800,
            classes: 2,
            dim: 2,
            separation: 3.0,
            seed: 5,
        };
        let file = ChainFile::from_chain(&chain, Some(src.clone()), None);
        let json = serde_json::to_string(&file).unwrap();
        assert!(json.contains("\"T\":2"));
        let back: ChainFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.data, Some(src));
        assert_eq!(back.into_chain().unwrap(), chain);
    }

    proptest! {
        #[test]
        fn geometric_plans_are_valid(n in 1usize..100_000, depth in 1usize..9) {
            if let Ok(p) = geometric_split(n, depth) {
                prop_assert_eq!(p.n(), n);
                for t in 1..=depth {
                    prop_assert!(2 * p.n_val(t).unwrap() >= n);
                    let tau = implied_temperature(&p, t).unwrap();
                    if t < depth {
                        prop_assert!(tau < 1.0);
                    } else {
                        prop_assert_eq!(tau, 1.0);
                    }
                }
            } else {
                prop_assert!(n < 1 << (depth - 1));
            }
        }
    }
}
