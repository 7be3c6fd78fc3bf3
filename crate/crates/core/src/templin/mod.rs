//! Exact tempered Bayesian linear regression on Fourier features.
//!
//! With a Gaussian likelihood `N(θᵀφ(x), σ²)` and prior `N(μ₀, τ² I)`, the
//! tempered posterior `∝ p(D|θ)^λ p(θ)` is Gaussian, so the empirical Gibbs
//! loss, the Bayes loss and the derivative of the Gibbs loss in `λ` are all
//! available in closed form. The derivative of the Bayes loss is estimated by
//! importance weighting posterior samples against fresh data.

mod da;
mod scan;

pub use da::{
    da_cov_diagnostics, da_pseudo_loss, fit_da_tempered_posterior, population_gibbs_loss, DaDiagnostics,
    TransformationSet,
};
pub use scan::{cpe_scan, parse_lambda_grid, CpeConfig, CpeRow, CpeScan, Setting, SettingConfig};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::exec::{stream_id, stream_rng, Exec};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Points per work item in the posterior-sample × data loops.
const POINT_CHUNK: usize = 256;

/// Stream family for training data; evaluation data uses [`EVAL_STREAM`].
pub const TRAIN_STREAM: u64 = 0;
pub const EVAL_STREAM: u64 = 1;
/// Stream family for posterior draws, disjoint from both data families.
pub const POSTERIOR_STREAM: u64 = 2;

/// `k`-th Fourier basis function (1-based).
pub fn fourier_feature(k: usize, x: f64) -> f64 {
    use std::f64::consts::PI;
    match k {
        0 => panic!("Fourier features are 1-based"),
        1 => 1.0 / (2.0 * PI).sqrt(),
        k if k % 2 == 1 => (k as f64 * x).sin() / PI.sqrt(),
        k => (k as f64 * x).cos() / PI.sqrt(),
    }
}

/// `[g_1(x), …, g_k(x)]`.
pub fn fourier_features(x: f64, k: usize) -> Vec<f64> {
    (1..=k).map(|j| fourier_feature(j, x)).collect()
}

/// A regression sample `y = θ*ᵀφ(x) + ε` with `x ~ U[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTask {
    pub inputs: Vec<f64>,
    /// `n × d` design matrix of features.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub noise_var_true: f64,
    pub true_weights: DVector<f64>,
    pub seed: u64,
}

impl RegressionTask {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }
}

/// Draws `n` points from the data-generating process whose mean is
/// `true_weightsᵀφ(x)` and noise variance `noise_var`. `stream` separates
/// independent samples drawn under the same seed.
pub fn generate_task(
    n: usize,
    true_weights: DVector<f64>,
    noise_var: f64,
    seed: u64,
    stream: u64,
) -> Result<RegressionTask> {
    let d = true_weights.len();
    if d == 0 {
        return domain("need at least one feature");
    }
    if !(noise_var > 0.0) {
        return domain("noise variance must be positive");
    }
    let sd = noise_var.sqrt();
    let mut inputs = Vec::with_capacity(n);
    let mut x = DMatrix::zeros(n, d);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let mut rng = stream_rng(seed, stream_id(stream, i as u64));
        let xi: f64 = rng.random_range(-1.0..=1.0);
        let phi = fourier_features(xi, d);
        let mean: f64 = phi.iter().zip(true_weights.iter()).map(|(a, b)| a * b).sum();
        let eps: f64 = StandardNormal.sample(&mut rng);
        inputs.push(xi);
        for (j, v) in phi.into_iter().enumerate() {
            x[(i, j)] = v;
        }
        y[i] = mean + sd * eps;
    }
    Ok(RegressionTask {
        inputs,
        x,
        y,
        noise_var_true: noise_var,
        true_weights,
        seed,
    })
}

/// `n` points with `K` features, all-ones weights and unit noise.
pub fn generate_regression_data(n: usize, k: usize, seed: u64) -> Result<RegressionTask> {
    generate_task(n, DVector::from_element(k, 1.0), 1.0, seed, 0)
}

/// Gaussian likelihood variance and isotropic Gaussian prior.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModelSpec {
    pub likelihood_var: f64,
    pub prior_mean: DVector<f64>,
    pub prior_var: f64,
}

impl GaussianModelSpec {
    pub fn new(likelihood_var: f64, prior_mean: DVector<f64>, prior_var: f64) -> Result<Self> {
        if !(likelihood_var > 0.0 && prior_var > 0.0) {
            return domain("model variances must be positive");
        }
        Ok(GaussianModelSpec {
            likelihood_var,
            prior_mean,
            prior_var,
        })
    }

    /// Zero prior mean in dimension `d`.
    pub fn centered(likelihood_var: f64, prior_var: f64, d: usize) -> Result<Self> {
        Self::new(likelihood_var, DVector::zeros(d), prior_var)
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if self.prior_mean.len() != d {
            return domain(format!("prior has dimension {}, features have {d}", self.prior_mean.len()));
        }
        Ok(())
    }

    /// `-ln N(y; μ, σ²)` for the model noise.
    fn nll(&self, resid: f64) -> f64 {
        0.5 * (LN_2PI + self.likelihood_var.ln()) + resid * resid / (2.0 * self.likelihood_var)
    }
}

/// Gaussian posterior `N(mean, covariance)` at inverse temperature `lambda`.
#[derive(Debug, Clone)]
pub struct TemperedLinRegPosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub lambda: f64,
    chol: Cholesky<f64, Dyn>,
}

impl TemperedLinRegPosterior {
    /// Builds the posterior from natural parameters: precision `P` and
    /// `h = P · mean`.
    fn from_natural(precision: DMatrix<f64>, h: DVector<f64>, lambda: f64) -> Result<Self> {
        let pchol = precision
            .cholesky()
            .ok_or_else(|| Error::Numerical("posterior precision is not positive definite".into()))?;
        let mean = pchol.solve(&h);
        let d = mean.len();
        let mut covariance = pchol.solve(&DMatrix::identity(d, d));
        // symmetrize the solve's rounding
        covariance = (&covariance + covariance.transpose()) * 0.5;
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("posterior covariance is not positive definite".into()))?;
        Ok(TemperedLinRegPosterior {
            mean,
            covariance,
            lambda,
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Draws `θ = mean + Lz` with `LLᵀ = covariance`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        &self.mean + self.chol.l() * z
    }

    /// `m` draws as the rows of an `m × d` matrix, one random stream per draw.
    pub fn sample_matrix(&self, m: usize, seed: u64, stream: u64, exec: Exec) -> DMatrix<f64> {
        let rows = exec.map(m, |i| self.sample(&mut stream_rng(seed, stream_id(stream, i as u64))));
        let d = self.dim();
        DMatrix::from_fn(m, d, |i, j| rows[i][j])
    }

    /// Predictive mean and variance `(meanᵀφ, σ² + φᵀΣφ)` at the feature row `phi`.
    fn predictive(&self, phi: &DVector<f64>, spec: &GaussianModelSpec) -> (f64, f64) {
        let mu = self.mean.dot(phi);
        let var = spec.likelihood_var + phi.dot(&(&self.covariance * phi));
        (mu, var)
    }
}

fn check_task(task: &RegressionTask, spec: &GaussianModelSpec) -> Result<()> {
    spec.check_dim(task.d())
}

/// Posterior for `exp(-λ/(2σ²)(θᵀAθ - 2bᵀθ)) · prior`, given `A` and `b`.
pub(crate) fn fit_quadratic(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    spec: &GaussianModelSpec,
    lambda: f64,
) -> Result<TemperedLinRegPosterior> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return domain(format!("inverse temperature {lambda} must be finite and nonnegative"));
    }
    let d = b.len();
    let scale = lambda / spec.likelihood_var;
    let precision = a * scale + DMatrix::identity(d, d) / spec.prior_var;
    let h = b * scale + &spec.prior_mean / spec.prior_var;
    TemperedLinRegPosterior::from_natural(precision, h, lambda)
}

/// Exact conjugate posterior `∝ p(D|θ)^λ p(θ)`.
pub fn fit_tempered_posterior(
    task: &RegressionTask,
    spec: &GaussianModelSpec,
    lambda: f64,
) -> Result<TemperedLinRegPosterior> {
    check_task(task, spec)?;
    if !(lambda > 0.0) {
        return domain("inverse temperature must be positive");
    }
    let a = task.x.tr_mul(&task.x);
    let b = task.x.tr_mul(&task.y);
    fit_quadratic(&a, &b, spec, lambda)
}

/// `E_ρ[-(1/n) ln p(D|θ)]`.
pub fn empirical_gibbs_loss(
    post: &TemperedLinRegPosterior,
    task: &RegressionTask,
    spec: &GaussianModelSpec,
) -> Result<f64> {
    check_task(task, spec)?;
    let n = task.n();
    if n == 0 {
        return domain("empirical loss needs at least one point");
    }
    let resid = &task.y - &task.x * &post.mean;
    let gram = task.x.tr_mul(&task.x);
    let trace = (gram * &post.covariance).trace();
    Ok(0.5 * (LN_2PI + spec.likelihood_var.ln())
        + (resid.norm_squared() + trace) / (2.0 * spec.likelihood_var * n as f64))
}

/// `d/dλ` of [`empirical_gibbs_loss`], i.e. `-Var_ρ(ln p(D|θ)) / n`.
///
/// With `e = y - Xm` and `A = XᵀX`,
/// `Var(ln p(D|θ)) = (4 eᵀXΣXᵀe + 2 tr((AΣ)²)) / (4σ⁴)`.
pub fn gibbs_derivative(
    post: &TemperedLinRegPosterior,
    task: &RegressionTask,
    spec: &GaussianModelSpec,
) -> Result<f64> {
    check_task(task, spec)?;
    let n = task.n();
    if n == 0 {
        return Ok(0.0);
    }
    Ok(-loglik_variance(post, task, spec) / n as f64)
}

fn loglik_variance(post: &TemperedLinRegPosterior, task: &RegressionTask, spec: &GaussianModelSpec) -> f64 {
    let e = &task.y - &task.x * &post.mean;
    let xte = task.x.tr_mul(&e);
    let a_sigma = task.x.tr_mul(&task.x) * &post.covariance;
    let linear = 4.0 * xte.dot(&(&post.covariance * &xte));
    let quad = 2.0 * (&a_sigma * &a_sigma).trace();
    (linear + quad) / (4.0 * spec.likelihood_var * spec.likelihood_var)
}

/// Monte Carlo version of [`gibbs_derivative`] from `m` posterior draws.
pub fn gibbs_derivative_mc(
    post: &TemperedLinRegPosterior,
    task: &RegressionTask,
    spec: &GaussianModelSpec,
    m: usize,
    seed: u64,
    exec: Exec,
) -> Result<f64> {
    check_task(task, spec)?;
    if task.n() == 0 {
        return Ok(0.0);
    }
    if m < 2 {
        return domain("need at least two draws for a variance");
    }
    let lls = dataset_nll(&post.sample_matrix(m, seed, POSTERIOR_STREAM, exec), task, spec);
    let mean = lls.iter().sum::<f64>() / m as f64;
    let var = lls.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    Ok(-var / task.n() as f64)
}

/// `-ln p(D|θ_i)` for each row `θ_i` of `thetas`.
pub(crate) fn dataset_nll(thetas: &DMatrix<f64>, task: &RegressionTask, spec: &GaussianModelSpec) -> Vec<f64> {
    let pred = thetas * task.x.transpose();
    (0..thetas.nrows())
        .map(|i| (0..task.n()).map(|j| spec.nll(task.y[j] - pred[(i, j)])).sum())
        .collect()
}

/// `min_θ -(1/n) ln p(D|θ)`, the loss of the least-squares fit.
pub fn mle_loss(task: &RegressionTask, spec: &GaussianModelSpec) -> Result<f64> {
    let n = task.n();
    if n == 0 {
        return domain("empirical loss needs at least one point");
    }
    let svd = task.x.clone().svd(true, true);
    let theta = svd
        .solve(&task.y, 1e-12)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let rss = (&task.y - &task.x * theta).norm_squared();
    Ok(0.5 * (LN_2PI + spec.likelihood_var.ln()) + rss / (2.0 * spec.likelihood_var * n as f64))
}

/// Average negative log posterior-predictive density over `eval_set`.
pub fn bayes_loss(
    post: &TemperedLinRegPosterior,
    spec: &GaussianModelSpec,
    eval_set: &RegressionTask,
) -> Result<f64> {
    check_task(eval_set, spec)?;
    let n = eval_set.n();
    if n == 0 {
        return domain("Bayes loss needs a non-empty evaluation set");
    }
    let total: f64 = (0..n)
        .map(|j| {
            let phi = eval_set.x.row(j).transpose();
            let (mu, var) = post.predictive(&phi, spec);
            let r = eval_set.y[j] - mu;
            0.5 * (LN_2PI + var.ln()) + r * r / (2.0 * var)
        })
        .sum();
    Ok(total / n as f64)
}

/// Monte Carlo estimate of `dB/dλ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BayesDerivative {
    pub estimate: f64,
    pub stderr: f64,
    /// Mean over evaluation points of the importance-sampling effective
    /// sample size.
    pub mean_ess: f64,
    /// Set when the mean effective sample size falls below 10.
    pub degenerate: bool,
}

/// Minimum mean effective sample size before a result is flagged.
pub const MIN_ESS: f64 = 10.0;

/// Estimates `dB(p_λ)/dλ = Ĝ(p̄_λ, D) - Ĝ(p_λ, D)` with `Ĝ` the unnormalized
/// empirical Gibbs loss `E[-ln p(D|θ)]`.
///
/// Draws `θ_i ~ p_λ` once. For every fresh point `(x_j, y_j)` the draws are
/// self-normalized by `p(y_j|x_j, θ_i)`; averaging these weights over points
/// gives the relative weight `s_i / m` of draw `i` under `p̄_λ`. The estimate
/// is `(1/m) Σ_i (s_i - 1)(ℓ_i - ℓ̄)` with `ℓ_i = -ln p(D|θ_i)`.
pub fn bayes_derivative(
    lambda: f64,
    task: &RegressionTask,
    spec: &GaussianModelSpec,
    eval_set: &RegressionTask,
    m: usize,
    seed: u64,
    exec: Exec,
) -> Result<BayesDerivative> {
    let post = fit_tempered_posterior(task, spec, lambda)?;
    bayes_derivative_for(&post, task, spec, eval_set, m, seed, exec)
}

pub(crate) fn bayes_derivative_for(
    post: &TemperedLinRegPosterior,
    task: &RegressionTask,
    spec: &GaussianModelSpec,
    eval_set: &RegressionTask,
    m: usize,
    seed: u64,
    exec: Exec,
) -> Result<BayesDerivative> {
    check_task(eval_set, spec)?;
    if m < 2 {
        return domain("need at least two posterior draws");
    }
    if eval_set.n() == 0 {
        return domain("need a non-empty evaluation set");
    }
    let thetas = post.sample_matrix(m, seed, POSTERIOR_STREAM, exec);
    let ell = dataset_nll(&thetas, task, spec);
    let (weight_sums, ess_sum) = snis_weight_sums(&thetas, spec, eval_set, exec);
    let mf = m as f64;
    let big_m = eval_set.n() as f64;
    let ell_bar = ell.iter().sum::<f64>() / mf;
    let products: Vec<f64> = weight_sums
        .iter()
        .zip(&ell)
        .map(|(w, l)| (mf * w / big_m - 1.0) * (l - ell_bar))
        .collect();
    let estimate = products.iter().sum::<f64>() / mf;
    let var = products.iter().map(|p| (p - estimate).powi(2)).sum::<f64>() / (mf - 1.0);
    let mean_ess = ess_sum / big_m;
    Ok(BayesDerivative {
        estimate,
        stderr: (var / mf).sqrt(),
        mean_ess,
        degenerate: mean_ess < MIN_ESS,
    })
}

/// For each draw `i`, `Σ_j w_ij` with `w_ij` self-normalized over draws for
/// each point `j`; also `Σ_j ESS_j`.
fn snis_weight_sums(
    thetas: &DMatrix<f64>,
    spec: &GaussianModelSpec,
    eval_set: &RegressionTask,
    exec: Exec,
) -> (Vec<f64>, f64) {
    let m = thetas.nrows();
    let parts = exec.map_chunks(eval_set.n(), POINT_CHUNK, |range| {
        let xs = eval_set.x.rows(range.start, range.len());
        let pred = thetas * xs.transpose();
        let mut sums = vec![0.0; m];
        let mut ess = 0.0;
        let mut w = vec![0.0; m];
        let half_prec = 0.5 / spec.likelihood_var;
        for (c, j) in range.enumerate() {
            let yj = eval_set.y[j];
            let col = pred.column(c);
            // the largest weight has the smallest squared residual
            let mut min_sq = f64::INFINITY;
            for (wi, p) in w.iter_mut().zip(col.iter()) {
                let r = yj - p;
                *wi = r * r;
                min_sq = min_sq.min(*wi);
            }
            let mut z = 0.0;
            for wi in w.iter_mut() {
                *wi = (-(*wi - min_sq) * half_prec).exp();
                z += *wi;
            }
            let inv_z = 1.0 / z;
            let mut sq = 0.0;
            for (s, wi) in sums.iter_mut().zip(&w) {
                let v = wi * inv_z;
                *s += v;
                sq += v * v;
            }
            ess += 1.0 / sq;
        }
        (sums, ess)
    });
    let mut total = vec![0.0; m];
    let mut ess = 0.0;
    for (sums, e) in parts {
        total.iter_mut().zip(&sums).for_each(|(t, s)| *t += s);
        ess += e;
    }
    (total, ess)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn setup(n: usize, sigma2: f64, prior_var: f64) -> (RegressionTask, GaussianModelSpec) {
        let task = generate_regression_data(n, 10, 42).unwrap();
        let spec = GaussianModelSpec::centered(sigma2, prior_var, 10).unwrap();
        (task, spec)
    }

    #[test]
    fn first_feature_is_constant() {
        for x in [-1.0, -0.3, 0.0, 0.9] {
            assert_abs_diff_eq!(fourier_feature(1, x), 0.398_942_280_401_432_7, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(fourier_feature(3, 0.5), (1.5f64).sin() / std::f64::consts::PI.sqrt());
        assert_abs_diff_eq!(fourier_feature(2, 0.5), (1.0f64).cos() / std::f64::consts::PI.sqrt());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_regression_data(20, 10, 3).unwrap();
        assert_eq!(a, generate_regression_data(20, 10, 3).unwrap());
        assert_ne!(a.y, generate_regression_data(20, 10, 4).unwrap().y);
        assert_eq!(generate_regression_data(0, 10, 3).unwrap().n(), 0);
        assert!(a.inputs.iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn empty_data_gives_prior() {
        let (task, _) = setup(0, 1.0, 2.0);
        let spec = GaussianModelSpec::new(1.0, DVector::from_element(10, 0.3), 2.0).unwrap();
        let post = fit_tempered_posterior(&task, &spec, 1.7).unwrap();
        assert_abs_diff_eq!(post.mean, spec.prior_mean, epsilon = 1e-15);
        assert_abs_diff_eq!(post.covariance, DMatrix::identity(10, 10) * 2.0, epsilon = 1e-15);
        assert_eq!(gibbs_derivative(&post, &task, &spec).unwrap(), 0.0);
    }

    #[test]
    fn tempering_rescales_noise() {
        let (task, _) = setup(7, 1.0, 2.0);
        let hot = fit_tempered_posterior(&task, &GaussianModelSpec::centered(1.0, 2.0, 10).unwrap(), 4.0).unwrap();
        let plain = fit_tempered_posterior(&task, &GaussianModelSpec::centered(0.25, 2.0, 10).unwrap(), 1.0).unwrap();
        assert_abs_diff_eq!(hot.mean, plain.mean, epsilon = 1e-12);
        assert_abs_diff_eq!(hot.covariance, plain.covariance, epsilon = 1e-12);
    }

    #[test]
    fn nonzero_prior_mean_matches_shifted_problem() {
        // θ = μ₀ + u turns a prior mean into a response shift y - Xμ₀
        let (task, _) = setup(6, 1.0, 2.0);
        let mu0 = DVector::from_fn(10, |i, _| 0.1 * i as f64);
        let spec = GaussianModelSpec::new(1.0, mu0.clone(), 2.0).unwrap();
        let shifted = RegressionTask {
            y: &task.y - &task.x * &mu0,
            ..task.clone()
        };
        let a = fit_tempered_posterior(&task, &spec, 1.3).unwrap();
        let b = fit_tempered_posterior(&shifted, &GaussianModelSpec::centered(1.0, 2.0, 10).unwrap(), 1.3).unwrap();
        assert_abs_diff_eq!(a.mean, &b.mean + &mu0, epsilon = 1e-12);
    }

    #[test]
    fn gibbs_loss_of_point_mass() {
        let (mut task, spec) = setup(5, 1.0, 1e-30);
        let ones = DVector::from_element(10, 1.0);
        task.y = &task.x * &ones;
        let spec = GaussianModelSpec { prior_mean: ones, ..spec };
        let post = fit_tempered_posterior(&task, &spec, 1.0).unwrap();
        let g = empirical_gibbs_loss(&post, &task, &spec).unwrap();
        assert_abs_diff_eq!(g, 0.5 * LN_2PI, epsilon = 1e-12);
    }

    #[test]
    fn gibbs_loss_matches_monte_carlo() {
        let (task, spec) = setup(5, 1.0, 2.0);
        let post = fit_tempered_posterior(&task, &spec, 1.0).unwrap();
        let exact = empirical_gibbs_loss(&post, &task, &spec).unwrap();
        let draws = dataset_nll(&post.sample_matrix(100_000, 1, 0, Exec::Parallel), &task, &spec);
        let n = task.n() as f64;
        let vals: Vec<f64> = draws.iter().map(|l| l / n).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        assert!((mean - exact).abs() < 3.0 * sd / (vals.len() as f64).sqrt());
    }

    #[test]
    fn gibbs_derivative_matches_finite_difference() {
        let (task, spec) = setup(5, 3.0, 2.0);
        for lambda in [0.5, 1.0, 3.0] {
            let h = 1e-3;
            let g = |l: f64| empirical_gibbs_loss(&fit_tempered_posterior(&task, &spec, l).unwrap(), &task, &spec).unwrap();
            let fd = (g(lambda + h) - g(lambda - h)) / (2.0 * h);
            let post = fit_tempered_posterior(&task, &spec, lambda).unwrap();
            let exact = gibbs_derivative(&post, &task, &spec).unwrap();
            assert!(exact < 0.0);
            assert!((exact - fd).abs() < 1e-4, "λ={lambda}: {exact} vs {fd}");
        }
    }

    #[test]
    fn gibbs_derivative_matches_monte_carlo() {
        let (task, spec) = setup(5, 1.0, 2.0);
        let post = fit_tempered_posterior(&task, &spec, 1.0).unwrap();
        let exact = gibbs_derivative(&post, &task, &spec).unwrap();
        let mc = gibbs_derivative_mc(&post, &task, &spec, 200_000, 5, Exec::Parallel).unwrap();
        assert!((mc - exact).abs() < 0.03 * exact.abs(), "{mc} vs {exact}");
    }

    #[test]
    fn bayes_loss_of_point_mass_is_plugin_nll() {
        let (task, _) = setup(5, 1.0, 2.0);
        let eval = generate_task(500, DVector::from_element(10, 1.0), 1.0, 9, 1).unwrap();
        let ones = DVector::from_element(10, 1.0);
        let spec = GaussianModelSpec::new(1.0, ones.clone(), 1e-300).unwrap();
        let post = fit_tempered_posterior(&task, &spec, 1.0).unwrap();
        let plugin: f64 = (0..eval.n())
            .map(|j| spec.nll(eval.y[j] - eval.x.row(j).dot(&ones.transpose())))
            .sum::<f64>()
            / eval.n() as f64;
        assert_abs_diff_eq!(bayes_loss(&post, &spec, &eval).unwrap(), plugin, epsilon = 1e-9);
    }

    #[test]
    fn bayes_derivative_tracks_finite_difference() {
        let (task, spec) = setup(5, 3.0, 2.0);
        let eval = generate_task(4000, DVector::from_element(10, 1.0), 1.0, 42, 1).unwrap();
        let b = |l: f64| bayes_loss(&fit_tempered_posterior(&task, &spec, l).unwrap(), &spec, &eval).unwrap();
        let fd = (b(1.01) - b(0.99)) / 0.02;
        let est = bayes_derivative(1.0, &task, &spec, &eval, 4000, 3, Exec::Parallel).unwrap();
        assert!(!est.degenerate);
        assert!((est.estimate - fd).abs() < 4.0 * est.stderr + 0.01, "{est:?} vs {fd}");
    }

    #[test]
    fn bayes_derivative_is_strategy_independent() {
        let (task, spec) = setup(5, 1.0, 2.0);
        let eval = generate_task(600, DVector::from_element(10, 1.0), 1.0, 42, 1).unwrap();
        let a = bayes_derivative(1.0, &task, &spec, &eval, 1000, 3, Exec::Sequential).unwrap();
        let b = bayes_derivative(1.0, &task, &spec, &eval, 1000, 3, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mle_loss_below_gibbs_loss() {
        let (task, spec) = setup(30, 1.0, 2.0);
        let post = fit_tempered_posterior(&task, &spec, 1.0).unwrap();
        assert!(mle_loss(&task, &spec).unwrap() < empirical_gibbs_loss(&post, &task, &spec).unwrap());
        // underdetermined fits interpolate
        let (small, spec) = setup(5, 1.0, 2.0);
        assert_abs_diff_eq!(mle_loss(&small, &spec).unwrap(), 0.5 * LN_2PI, epsilon = 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn covariance_is_spd(lambda in 1e-3f64..1e3, seed in 0u64..50) {
            let task = generate_regression_data(8, 10, seed).unwrap();
            let spec = GaussianModelSpec::centered(1.0, 2.0, 10).unwrap();
            let post = fit_tempered_posterior(&task, &spec, lambda).unwrap();
            let asym = (&post.covariance - post.covariance.transpose()).abs().max();
            prop_assert!(asym < 1e-10);
            prop_assert!(post.covariance.clone().cholesky().is_some());
            prop_assert!(gibbs_derivative(&post, &task, &spec).unwrap() <= 0.0);
        }
    }
}
