//! Mean-field Gaussian distributions over the weights of small classifiers.
//!
//! Gradients are written out by hand: the models are a linear softmax layer
//! or a single ReLU hidden layer, so reverse mode is a few loops. Training
//! uses the reparameterization `w = μ + σ ⊙ ε` with one draw of `ε` per
//! mini-batch, and plain SGD with momentum on `(μ, ln σ)`.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conc::DiscreteSupport;
use crate::data::LabeledDataset;
use crate::error::domain;
use crate::exec::{stream_id, stream_rng, Exec};
use crate::Result;

const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchKind {
    LinearSoftmax,
    OneHiddenLayer,
}

/// Shape of a classifier. Parameters are laid out as `W (k×d, row-major), b`
/// for the linear model and `W1, b1, W2, b2` for the hidden-layer model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierArch {
    pub kind: ArchKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub class_count: usize,
}

impl ClassifierArch {
    pub fn linear(input_dim: usize, class_count: usize) -> Result<Self> {
        let arch = ClassifierArch {
            kind: ArchKind::LinearSoftmax,
            input_dim,
            hidden_dim: 0,
            class_count,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn one_hidden(input_dim: usize, hidden_dim: usize, class_count: usize) -> Result<Self> {
        let arch = ClassifierArch {
            kind: ArchKind::OneHiddenLayer,
            input_dim,
            hidden_dim,
            class_count,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return domain("a classifier needs at least two classes");
        }
        match self.kind {
            ArchKind::LinearSoftmax if self.hidden_dim != 0 => {
                domain("the linear model has no hidden layer")
            }
            ArchKind::OneHiddenLayer if self.hidden_dim == 0 => {
                domain("hidden layer width must be positive")
            }
            _ => Ok(()),
        }
    }

    pub fn param_count(&self) -> usize {
        let (d, h, k) = (self.input_dim, self.hidden_dim, self.class_count);
        match self.kind {
            ArchKind::LinearSoftmax => k * d + k,
            ArchKind::OneHiddenLayer => h * d + h + k * h + k,
        }
    }

    /// Fan-in of the layer owning each parameter, in layout order.
    fn fan_ins(&self) -> Vec<usize> {
        let (d, h, k) = (self.input_dim, self.hidden_dim, self.class_count);
        match self.kind {
            ArchKind::LinearSoftmax => vec![d; k * d + k],
            ArchKind::OneHiddenLayer => {
                let mut f = vec![d; h * d + h];
                f.resize(h * d + h + k * h + k, h);
                f
            }
        }
    }

    /// Class scores for a single input.
    pub fn forward(&self, weights: &[f64], x: &[f64]) -> Vec<f64> {
        let mut ws = Workspace::new(self);
        self.forward_into(weights, x, &mut ws);
        ws.scores
    }

    fn forward_into(&self, w: &[f64], x: &[f64], ws: &mut Workspace) {
        let (d, h, k) = (self.input_dim, self.hidden_dim, self.class_count);
        debug_assert_eq!(w.len(), self.param_count());
        debug_assert_eq!(x.len(), d);
        match self.kind {
            ArchKind::LinearSoftmax => affine(&w[..k * d], &w[k * d..], x, &mut ws.scores),
            ArchKind::OneHiddenLayer => {
                let (w1, rest) = w.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(k * h);
                affine(w1, b1, x, &mut ws.hidden);
                for a in ws.hidden.iter_mut() {
                    *a = a.max(0.0);
                }
                affine(w2, b2, &ws.hidden, &mut ws.scores);
            }
        }
    }

    /// Accumulates `∂(dscores · scores)/∂w` into `grad`. Needs the workspace
    /// from the matching forward pass.
    fn backward_into(
        &self,
        w: &[f64],
        x: &[f64],
        ws: &mut Workspace,
        dscores: &[f64],
        grad: &mut [f64],
    ) {
        let (d, h, k) = (self.input_dim, self.hidden_dim, self.class_count);
        match self.kind {
            ArchKind::LinearSoftmax => {
                let (gw, gb) = grad.split_at_mut(k * d);
                affine_backward(x, dscores, gw, gb);
            }
            ArchKind::OneHiddenLayer => {
                let w2 = &w[h * d + h..h * d + h + k * h];
                let (g1, g2) = grad.split_at_mut(h * d + h);
                let (gw2, gb2) = g2.split_at_mut(k * h);
                affine_backward(&ws.hidden, dscores, gw2, gb2);
                // relu output is zero exactly where the unit is inactive
                for (j, dh) in ws.dhidden.iter_mut().enumerate() {
                    *dh = if ws.hidden[j] > 0.0 {
                        (0..k).map(|c| w2[c * h + j] * dscores[c]).sum()
                    } else {
                        0.0
                    };
                }
                let (gw1, gb1) = g1.split_at_mut(h * d);
                affine_backward(x, &ws.dhidden, gw1, gb1);
            }
        }
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (c, o) in out.iter_mut().enumerate() {
        let row = &w[c * d..(c + 1) * d];
        *o = b[c] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    }
}

fn affine_backward(x: &[f64], dout: &[f64], gw: &mut [f64], gb: &mut [f64]) {
    let d = x.len();
    for (c, &g) in dout.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        gb[c] += g;
        for (gi, xi) in gw[c * d..(c + 1) * d].iter_mut().zip(x) {
            *gi += g * xi;
        }
    }
}

struct Workspace {
    hidden: Vec<f64>,
    dhidden: Vec<f64>,
    scores: Vec<f64>,
    dscores: Vec<f64>,
}

impl Workspace {
    fn new(arch: &ClassifierArch) -> Self {
        Workspace {
            hidden: vec![0.0; arch.hidden_dim],
            dhidden: vec![0.0; arch.hidden_dim],
            scores: vec![0.0; arch.class_count],
            dscores: vec![0.0; arch.class_count],
        }
    }
}

/// Parameters of the smooth surrogate losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    /// Sharpness of the sigmoid replacing threshold indicators.
    pub c1: f64,
    /// Inverse temperature of the softmax.
    pub c2: f64,
    pub p_min: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            c1: 5.0,
            c2: 5.0,
            p_min: 1e-5,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c1.is_finite() && self.c2 > 0.0 && self.c2.is_finite()) {
            return domain("c1 and c2 must be positive");
        }
        if !(self.p_min > 0.0 && self.p_min < 1.0) {
            return domain(format!("p_min = {} must lie in (0, 1)", self.p_min));
        }
        Ok(())
    }
}

/// Cross-entropy of a tempered softmax with a probability floor, rescaled to
/// `[0, 1]`.
pub fn bounded_cross_entropy(scores: &[f64], label: usize, cfg: &SurrogateConfig) -> f64 {
    let mut scratch = vec![0.0; scores.len()];
    bounded_ce_with_grad(scores, label, cfg, &mut scratch)
}

/// Value and score gradient of [`bounded_cross_entropy`]. The gradient is zero
/// where the floor is active.
fn bounded_ce_with_grad(scores: &[f64], label: usize, cfg: &SurrogateConfig, grad: &mut [f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (g, s) in grad.iter_mut().zip(scores) {
        *g = (cfg.c2 * (s - max)).exp();
        z += *g;
    }
    let log_p = cfg.c2 * (scores[label] - max) - z.ln();
    let scale = -cfg.p_min.ln();
    if log_p <= -scale {
        grad.fill(0.0);
        return 1.0;
    }
    for (c, g) in grad.iter_mut().enumerate() {
        let p = *g / z;
        *g = cfg.c2 * (p - f64::from(u8::from(c == label))) / scale;
    }
    -log_p / scale
}

/// Increasing logistic approximation of `1[z ≥ z0]`.
pub fn smooth_indicator(z: f64, z0: f64, c1: f64) -> f64 {
    let t = c1 * (z - z0);
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Argmax prediction error. Ties go to the lowest class index.
pub fn zero_one_loss(scores: &[f64], label: usize) -> f64 {
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = c;
        }
    }
    f64::from(u8::from(best != label))
}

/// Diagonal Gaussian over a parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldGaussian {
    means: Vec<f64>,
    log_stds: Vec<f64>,
}

impl MeanFieldGaussian {
    pub fn new(means: Vec<f64>, log_stds: Vec<f64>) -> Result<Self> {
        if means.len() != log_stds.len() {
            return domain(format!(
                "{} means but {} log-stds",
                means.len(),
                log_stds.len()
            ));
        }
        if means.iter().chain(&log_stds).any(|v| !v.is_finite()) {
            return domain("mean-field parameters must be finite");
        }
        Ok(MeanFieldGaussian { means, log_stds })
    }

    pub fn isotropic(means: Vec<f64>, std: f64) -> Result<Self> {
        if !(std > 0.0 && std.is_finite()) {
            return domain(format!("std = {std} must be positive"));
        }
        let log_stds = vec![std.ln(); means.len()];
        Self::new(means, log_stds)
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn log_stds(&self) -> &[f64] {
        &self.log_stds
    }

    pub fn stds(&self) -> Vec<f64> {
        self.log_stds.iter().map(|l| l.exp()).collect()
    }

    fn check_dim(&self, other: &MeanFieldGaussian) -> Result<()> {
        if self.dim() != other.dim() {
            return domain(format!(
                "dimension mismatch: {} vs {}",
                self.dim(),
                other.dim()
            ));
        }
        Ok(())
    }

    fn fill_sample<R: Rng + ?Sized>(&self, rng: &mut R, weights: &mut [f64], noise: &mut [f64]) {
        for i in 0..self.dim() {
            let e: f64 = rng.sample(StandardNormal);
            noise[i] = e;
            weights[i] = self.means[i] + self.log_stds[i].exp() * e;
        }
    }
}

/// A weight draw together with the standard normal noise that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSample {
    pub weights: Vec<f64>,
    pub noise: Vec<f64>,
}

pub fn sample_weights<R: Rng + ?Sized>(dist: &MeanFieldGaussian, rng: &mut R) -> WeightSample {
    let mut weights = vec![0.0; dist.dim()];
    let mut noise = vec![0.0; dist.dim()];
    dist.fill_sample(rng, &mut weights, &mut noise);
    WeightSample { weights, noise }
}

/// Means uniform on `±1/√fan_in`, every std equal to `sigma0`.
pub fn init_posterior(arch: &ClassifierArch, sigma0: f64, seed: u64) -> Result<MeanFieldGaussian> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = arch
        .fan_ins()
        .into_iter()
        .map(|f| {
            let a = 1.0 / (f.max(1) as f64).sqrt();
            rng.random_range(-a..=a)
        })
        .collect();
    MeanFieldGaussian::isotropic(means, sigma0)
}

/// `KL(q‖p)` between diagonal Gaussians.
pub fn gaussian_kl(q: &MeanFieldGaussian, p: &MeanFieldGaussian) -> Result<f64> {
    q.check_dim(p)?;
    Ok(kl_accumulate(q, p, 0.0, None))
}

/// Returns `KL(q‖p)` and, when given, adds `coef · ∂KL/∂(μ_q, ln σ_q)`.
fn kl_accumulate(
    q: &MeanFieldGaussian,
    p: &MeanFieldGaussian,
    coef: f64,
    mut grad: Option<(&mut [f64], &mut [f64])>,
) -> f64 {
    let mut kl = 0.0;
    for i in 0..q.dim() {
        let (lq, lp) = (q.log_stds[i], p.log_stds[i]);
        let var_p = (2.0 * lp).exp();
        let ratio = (2.0 * (lq - lp)).exp();
        let diff = q.means[i] - p.means[i];
        kl += lp - lq + 0.5 * (ratio + diff * diff / var_p) - 0.5;
        if let Some((gm, gl)) = grad.as_mut() {
            gm[i] += coef * diff / var_p;
            gl[i] += coef * (ratio - 1.0);
        }
    }
    // rounding can leave a tiny negative total
    kl.max(0.0)
}

/// What a training run minimizes.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// `mean ℓ̃ + sqrt((KL + log_term) / (2·denominator))`.
    PacBayesKl { denominator: usize, log_term: f64 },
    /// Smoothed split-kl surrogate for the excess loss `ℓ̃(h) − γ·ℓ(h′)`:
    /// `Σ_j α_j mean ω(·; c1, b_j) + (b_K − b_0)·sqrt((KL + log_term)/(2·n_val))`.
    SplitExcess {
        support: DiscreteSupport,
        gamma: f64,
        n_val: usize,
        log_term: f64,
    },
}

impl Objective {
    fn denominator(&self) -> usize {
        match self {
            Objective::PacBayesKl { denominator, .. } => *denominator,
            Objective::SplitExcess { n_val, .. } => *n_val,
        }
    }

    fn log_term(&self) -> f64 {
        match self {
            Objective::PacBayesKl { log_term, .. } | Objective::SplitExcess { log_term, .. } => {
                *log_term
            }
        }
    }

    fn complexity_scale(&self) -> f64 {
        match self {
            Objective::PacBayesKl { .. } => 1.0,
            Objective::SplitExcess { support, .. } => support.highest() - support.lowest(),
        }
    }
}

/// Training examples `data[pool]`, with the reference 0-1 losses that the
/// excess objective needs (aligned with `pool`).
#[derive(Debug, Clone)]
pub struct TrainingSet<'a> {
    pub data: &'a LabeledDataset,
    pub pool: Range<usize>,
    pub reference_losses: Option<&'a [f64]>,
}

impl TrainingSet<'_> {
    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }
}

/// Logged pieces of the objective at one step (or averaged over an epoch).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub empirical: f64,
    pub kl: f64,
    pub complexity: f64,
    pub denominator: usize,
    pub value: f64,
}

/// Objective value at weights `μ + σ ⊙ noise` on the batch `positions`
/// (offsets into the pool), plus the gradient in `(μ, ln σ)` when requested.
#[allow(clippy::too_many_arguments)]
pub fn objective_with_grad(
    dist: &MeanFieldGaussian,
    prior: &MeanFieldGaussian,
    arch: &ClassifierArch,
    set: &TrainingSet<'_>,
    positions: &[usize],
    objective: &Objective,
    cfg: &SurrogateConfig,
    noise: &[f64],
    grad: Option<(&mut [f64], &mut [f64])>,
) -> Result<ObjectiveTerms> {
    dist.check_dim(prior)?;
    if dist.dim() != arch.param_count() || noise.len() != dist.dim() {
        return domain("parameter count does not match the architecture");
    }
    if positions.is_empty() {
        return domain("empty mini-batch");
    }
    let reference = match (objective, set.reference_losses) {
        (Objective::SplitExcess { .. }, None) => {
            return domain("the excess objective needs reference losses");
        }
        (_, r) => r,
    };
    let denominator = objective.denominator();
    if denominator == 0 {
        return domain("complexity denominator must be positive");
    }

    let stds = dist.stds();
    let weights: Vec<f64> = (0..dist.dim())
        .map(|i| dist.means[i] + stds[i] * noise[i])
        .collect();
    let want_grad = grad.is_some();
    let mut gw = vec![0.0; if want_grad { dist.dim() } else { 0 }];
    let mut ws = Workspace::new(arch);
    let inv_b = 1.0 / positions.len() as f64;
    let mut empirical = 0.0;

    for &p in positions {
        let i = set.pool.start + p;
        let x = set.data.row(i);
        let y = set.data.label(i);
        arch.forward_into(&weights, x, &mut ws);
        let ce = bounded_ce_with_grad(&ws.scores, y, cfg, &mut ws.dscores);
        let dce = match objective {
            Objective::PacBayesKl { .. } => {
                empirical += ce;
                1.0
            }
            Objective::SplitExcess { support, gamma, .. } => {
                let z = ce - gamma * reference.unwrap()[p];
                let mut slope = 0.0;
                for (b, a) in support.points()[1..].iter().zip(support.alphas()) {
                    let s = smooth_indicator(z, *b, cfg.c1);
                    empirical += a * s;
                    slope += a * cfg.c1 * s * (1.0 - s);
                }
                slope
            }
        };
        if want_grad && dce != 0.0 {
            for g in ws.dscores.iter_mut() {
                *g *= dce * inv_b;
            }
            let dscores = std::mem::take(&mut ws.dscores);
            arch.backward_into(&weights, x, &mut ws, &dscores, &mut gw);
            ws.dscores = dscores;
        }
    }
    empirical *= inv_b;

    let n = denominator as f64;
    let scale = objective.complexity_scale();
    let kl = kl_accumulate(dist, prior, 0.0, None);
    let r = (kl + objective.log_term()).max(0.0) / (2.0 * n);
    let complexity = scale * r.sqrt();

    if let Some((gm, gl)) = grad {
        for i in 0..dist.dim() {
            gm[i] = gw[i];
            gl[i] = gw[i] * noise[i] * stds[i];
        }
        if r > 0.0 {
            let coef = scale / (4.0 * n * r.sqrt());
            kl_accumulate(dist, prior, coef, Some((gm, gl)));
        }
    }

    Ok(ObjectiveTerms {
        empirical,
        kl,
        complexity,
        denominator,
        value: empirical + complexity,
    })
}

/// How the standard deviations are parameterized during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StdMode {
    #[default]
    PerParameter,
    /// One shared std: the log-std gradient is summed and applied to every
    /// coordinate.
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub std_mode: StdMode,
    pub surrogate: SurrogateConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 250,
            learning_rate: 0.001,
            momentum: 0.95,
            std_mode: StdMode::PerParameter,
            surrogate: SurrogateConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.surrogate.validate()?;
        if self.batch_size == 0 {
            return domain("batch size must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return domain("learning rate must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return domain("momentum must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Momentum buffers and step counters.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    vel_means: Vec<f64>,
    vel_log_stds: Vec<f64>,
    pub steps: usize,
    pub rejected: usize,
    pub last_rejected: bool,
}

impl SgdState {
    pub fn new(dim: usize) -> Self {
        SgdState {
            vel_means: vec![0.0; dim],
            vel_log_stds: vec![0.0; dim],
            steps: 0,
            rejected: 0,
            last_rejected: false,
        }
    }
}

/// One reparameterized SGD-with-momentum step on a mini-batch.
///
/// A non-finite objective or gradient leaves the parameters and momentum
/// untouched and is counted in `state.rejected`.
#[allow(clippy::too_many_arguments)]
pub fn objective_grad_step<R: Rng + ?Sized>(
    dist: &mut MeanFieldGaussian,
    prior: &MeanFieldGaussian,
    arch: &ClassifierArch,
    set: &TrainingSet<'_>,
    positions: &[usize],
    objective: &Objective,
    state: &mut SgdState,
    hyper: &TrainConfig,
    rng: &mut R,
) -> Result<ObjectiveTerms> {
    let dim = dist.dim();
    let noise: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let mut gm = vec![0.0; dim];
    let mut gl = vec![0.0; dim];
    let terms = objective_with_grad(
        dist,
        prior,
        arch,
        set,
        positions,
        objective,
        &hyper.surrogate,
        &noise,
        Some((&mut gm, &mut gl)),
    )?;
    state.steps += 1;
    if !terms.value.is_finite() || gm.iter().chain(&gl).any(|g| !g.is_finite()) {
        state.rejected += 1;
        state.last_rejected = true;
        return Ok(terms);
    }
    state.last_rejected = false;
    if hyper.std_mode == StdMode::Scalar {
        let total: f64 = gl.iter().sum();
        gl.fill(total);
    }
    let (lr, mu) = (hyper.learning_rate, hyper.momentum);
    for i in 0..dim {
        state.vel_means[i] = mu * state.vel_means[i] + gm[i];
        state.vel_log_stds[i] = mu * state.vel_log_stds[i] + gl[i];
        dist.means[i] -= lr * state.vel_means[i];
        dist.log_stds[i] -= lr * state.vel_log_stds[i];
    }
    Ok(terms)
}

/// Per-epoch averages of the logged objective terms.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<ObjectiveTerms>,
    pub steps: usize,
    pub rejected_steps: usize,
}

/// Runs `hyper.epochs` shuffled passes over `set`, starting from `init`.
pub fn train_posterior(
    init: MeanFieldGaussian,
    prior: &MeanFieldGaussian,
    arch: &ClassifierArch,
    set: &TrainingSet<'_>,
    objective: &Objective,
    hyper: &TrainConfig,
) -> Result<(MeanFieldGaussian, TrainLog)> {
    hyper.validate()?;
    if set.is_empty() {
        return domain("cannot train on an empty set");
    }
    if let Some(r) = set.reference_losses {
        if r.len() != set.len() {
            return domain("reference losses are not aligned with the training pool");
        }
    }
    let mut dist = init;
    let mut state = SgdState::new(dist.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut log = TrainLog::default();

    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut acc = ObjectiveTerms::default();
        let mut batches = 0;
        for batch in order.chunks(hyper.batch_size) {
            let t = objective_grad_step(
                &mut dist, prior, arch, set, batch, objective, &mut state, hyper, &mut rng,
            )?;
            acc.empirical += t.empirical;
            acc.kl += t.kl;
            acc.complexity += t.complexity;
            acc.value += t.value;
            acc.denominator = t.denominator;
            batches += 1;
        }
        let b = batches as f64;
        acc.empirical /= b;
        acc.kl /= b;
        acc.complexity /= b;
        acc.value /= b;
        log.epochs.push(acc);
    }
    log.steps = state.steps;
    log.rejected_steps = state.rejected;
    Ok((dist, log))
}

/// Trains a single weight vector on the bounded cross-entropy, for use as a
/// deterministic reference classifier.
pub fn train_point_classifier(
    init: &[f64],
    arch: &ClassifierArch,
    set: &TrainingSet<'_>,
    hyper: &TrainConfig,
) -> Result<Vec<f64>> {
    hyper.validate()?;
    if init.len() != arch.param_count() {
        return domain("parameter count does not match the architecture");
    }
    if set.is_empty() {
        return domain("cannot train on an empty set");
    }
    let mut w = init.to_vec();
    let mut vel = vec![0.0; w.len()];
    let mut grad = vec![0.0; w.len()];
    let mut ws = Workspace::new(arch);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..set.len()).collect();
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hyper.batch_size) {
            grad.fill(0.0);
            let inv_b = 1.0 / batch.len() as f64;
            for &p in batch {
                let i = set.pool.start + p;
                let x = set.data.row(i);
                arch.forward_into(&w, x, &mut ws);
                bounded_ce_with_grad(&ws.scores, set.data.label(i), &hyper.surrogate, &mut ws.dscores);
                let mut dscores = std::mem::take(&mut ws.dscores);
                dscores.iter_mut().for_each(|g| *g *= inv_b);
                arch.backward_into(&w, x, &mut ws, &dscores, &mut grad);
                ws.dscores = dscores;
            }
            if grad.iter().any(|g| !g.is_finite()) {
                continue;
            }
            for i in 0..w.len() {
                vel[i] = hyper.momentum * vel[i] + grad[i];
                w[i] -= hyper.learning_rate * vel[i];
            }
        }
    }
    Ok(w)
}

/// 0-1 losses of a fixed weight vector on `data[range]`.
pub fn point_zero_one_losses(
    arch: &ClassifierArch,
    weights: &[f64],
    data: &LabeledDataset,
    range: Range<usize>,
) -> Vec<f64> {
    let mut ws = Workspace::new(arch);
    range
        .map(|i| {
            arch.forward_into(weights, data.row(i), &mut ws);
            zero_one_loss(&ws.scores, data.label(i))
        })
        .collect()
}

/// 0-1 losses on `data[range]` with a fresh weight draw per datum.
///
/// Datum `i` draws from stream `stream_id(step, i)` of `seed`, so the result
/// depends only on the global index and not on the execution strategy.
pub fn gibbs_zero_one_losses(
    arch: &ClassifierArch,
    dist: &MeanFieldGaussian,
    data: &LabeledDataset,
    range: Range<usize>,
    seed: u64,
    step: u64,
    exec: Exec,
) -> Vec<f64> {
    let start = range.start;
    exec.map_chunks(range.len(), EVAL_CHUNK, |r| {
        let mut ws = Workspace::new(arch);
        let mut w = vec![0.0; dist.dim()];
        let mut noise = vec![0.0; dist.dim()];
        r.map(|off| {
            let i = start + off;
            let mut rng = stream_rng(seed, stream_id(step, i as u64));
            dist.fill_sample(&mut rng, &mut w, &mut noise);
            arch.forward_into(&w, data.row(i), &mut ws);
            zero_one_loss(&ws.scores, data.label(i))
        })
        .collect::<Vec<_>>()
    })
    .concat()
}

/// JSON form of a trained distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRecord {
    pub arch: ClassifierArch,
    pub means: Vec<f64>,
    pub log_stds: Vec<f64>,
    pub seed: u64,
}

impl PosteriorRecord {
    pub fn new(arch: ClassifierArch, dist: &MeanFieldGaussian, seed: u64) -> Self {
        PosteriorRecord {
            arch,
            means: dist.means.clone(),
            log_stds: dist.log_stds.clone(),
            seed,
        }
    }

    pub fn distribution(&self) -> Result<MeanFieldGaussian> {
        self.arch.validate()?;
        if self.means.len() != self.arch.param_count() {
            return domain("stored parameters do not match the architecture");
        }
        MeanFieldGaussian::new(self.means.clone(), self.log_stds.clone())
    }
}
