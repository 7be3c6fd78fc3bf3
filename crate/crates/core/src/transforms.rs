//! Tempered likelihoods rewritten as ordinary likelihoods with a new prior.
//!
//! A tempered Bernoulli likelihood `θ^{λy}(1-θ)^{λ(1-y)}` normalizes to a
//! Bernoulli with parameter [`temper_bernoulli`]; the leftover normalizer
//! `θ^λ + (1-θ)^λ` moves into the prior. Densities over a parameter grid are
//! the common currency here, since the induced priors belong to no standard
//! family in general.

use serde::Serialize;

use crate::error::{domain, Result};

/// Exponent `k` in the tempered Gaussian variance `σ²/λ^k`.
///
/// Normalizing `N(y; μ, σ²)^λ` gives `k = 1`.
pub const GAUSSIAN_TEMPER_POWER: i32 = 1;

/// Above this inverse temperature [`temper_bernoulli`] works with log-odds.
const LOG_SPACE_LAMBDA: f64 = 50.0;

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return domain(format!("inverse temperature {lambda} must be positive and finite"));
    }
    Ok(())
}

/// `θ^λ / (θ^λ + (1-θ)^λ)`.
pub fn temper_bernoulli(theta: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if !(0.0..=1.0).contains(&theta) {
        return domain(format!("theta = {theta} is not a probability"));
    }
    if theta == 0.0 || theta == 1.0 {
        return Ok(theta);
    }
    if lambda > LOG_SPACE_LAMBDA {
        let log_odds = lambda * (theta.ln() - (-theta).ln_1p());
        return Ok(1.0 / (1.0 + (-log_odds).exp()));
    }
    let a = theta.powf(lambda);
    let b = (1.0 - theta).powf(lambda);
    Ok(a / (a + b))
}

/// Mean and variance of the normalized `N(μ, σ²)^λ`.
pub fn temper_gaussian(mu: f64, sigma2: f64, lambda: f64) -> Result<(f64, f64)> {
    check_lambda(lambda)?;
    if !(sigma2 > 0.0) {
        return domain("variance must be positive");
    }
    Ok((mu, sigma2 / lambda.powi(GAUSSIAN_TEMPER_POWER)))
}

/// Differential entropy of `N(·, σ²)` in nats.
pub fn gaussian_entropy(sigma2: f64) -> f64 {
    0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * sigma2).ln()
}

/// Shannon entropy of Bernoulli(`p`) in nats.
pub fn bernoulli_entropy(p: f64) -> f64 {
    let h = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.ln() };
    h(p) + h(1.0 - p)
}

/// Entropy of the tempered Bernoulli along a grid of inverse temperatures.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyCurve {
    pub lambdas: Vec<f64>,
    pub entropies: Vec<f64>,
    /// Entropy never increases along the grid.
    pub nonincreasing: bool,
    /// Entropy strictly decreases along the grid.
    pub strictly_decreasing: bool,
}

pub fn entropy_monotonicity_check(theta: f64, lambda_grid: &[f64]) -> Result<EntropyCurve> {
    if lambda_grid.windows(2).any(|w| w[1] <= w[0]) {
        return domain("lambda grid must be strictly increasing");
    }
    let entropies = lambda_grid
        .iter()
        .map(|&l| temper_bernoulli(theta, l).map(bernoulli_entropy))
        .collect::<Result<Vec<_>>>()?;
    Ok(EntropyCurve {
        lambdas: lambda_grid.to_vec(),
        nonincreasing: entropies.windows(2).all(|w| w[1] <= w[0]),
        strictly_decreasing: entropies.windows(2).all(|w| w[1] < w[0]),
        entropies,
    })
}

/// `n` equally spaced interior points of `(0, 1)`.
pub fn open_unit_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64 / (n + 1) as f64).collect()
}

/// Trapezoid integral of `values` over `grid`.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// Exponentiates log-density values and normalizes them on the grid.
fn normalize_log_density(grid: &[f64], logs: &[f64]) -> Result<Vec<f64>> {
    if logs.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return domain("density is not finite on the grid");
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return domain("density vanishes on the whole grid");
    }
    let vals: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let z = trapezoid(grid, &vals);
    Ok(vals.into_iter().map(|v| v / z).collect())
}

fn check_grid(grid: &[f64], lo: f64, hi: f64) -> Result<()> {
    if grid.len() < 3 {
        return domain("grid needs at least 3 points");
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return domain("grid must be strictly increasing");
    }
    if grid[0] < lo || grid[grid.len() - 1] > hi {
        return domain(format!("grid must lie in [{lo}, {hi}]"));
    }
    Ok(())
}

/// `c · ln x`, with `0 · ln 0 = 0`.
fn scaled_ln(c: f64, x: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else {
        c * x.ln()
    }
}

fn beta_log_kernel(theta: f64, a: f64, b: f64) -> f64 {
    scaled_ln(a - 1.0, theta) + scaled_ln(b - 1.0, 1.0 - theta)
}

fn check_beta(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && b > 0.0) {
        return domain("Beta parameters must be positive");
    }
    Ok(())
}

/// Grid density `∝ Beta(θ; a, b) · (θ^λ + (1-θ)^λ)`: the prior that turns the
/// tempered single-observation Bernoulli posterior into a Bayesian one.
pub fn beta_bernoulli_new_prior(a: f64, b: f64, lambda: f64, grid: &[f64]) -> Result<Vec<f64>> {
    check_beta(a, b)?;
    check_lambda(lambda)?;
    check_grid(grid, 0.0, 1.0)?;
    let logs: Vec<f64> = grid
        .iter()
        .map(|&t| beta_log_kernel(t, a, b) + (t.powf(lambda) + (1.0 - t).powf(lambda)).ln())
        .collect();
    normalize_log_density(grid, &logs)
}

/// Grid density `∝ InvGamma(γ; shape, scale) · γ^{-n(λ-1)}`, an inverse-gamma
/// with shape `shape + n(λ-1)`.
pub fn inverse_gamma_new_prior(shape: f64, scale: f64, n: usize, lambda: f64, grid: &[f64]) -> Result<Vec<f64>> {
    if !(shape > 0.0 && scale > 0.0) {
        return domain("inverse-gamma parameters must be positive");
    }
    check_lambda(lambda)?;
    let shifted = shape + n as f64 * (lambda - 1.0);
    if shifted <= 0.0 {
        return domain(format!("shifted shape {shifted} is not positive; the prior is improper"));
    }
    check_grid(grid, f64::MIN_POSITIVE, f64::INFINITY)?;
    let logs: Vec<f64> = grid
        .iter()
        .map(|&g| -(shifted + 1.0) * g.ln() - scale / g)
        .collect();
    normalize_log_density(grid, &logs)
}

/// Max pointwise gap between the grid-normalized tempered posterior
/// `∝ θ^{λy}(1-θ)^{λ(1-y)} Beta(θ; a, b)` and the grid-normalized product of
/// the new likelihood `q(y|θ,λ)` with the new prior.
pub fn verify_bayes_equivalence(a: f64, b: f64, lambda: f64, y: u8, grid: &[f64]) -> Result<f64> {
    if y > 1 {
        return domain("observation must be 0 or 1");
    }
    check_beta(a, b)?;
    check_lambda(lambda)?;
    check_grid(grid, 0.0, 1.0)?;
    let yf = f64::from(y);
    let tempered: Vec<f64> = grid
        .iter()
        .map(|&t| scaled_ln(lambda * yf, t) + scaled_ln(lambda * (1.0 - yf), 1.0 - t) + beta_log_kernel(t, a, b))
        .collect();
    let tempered = normalize_log_density(grid, &tempered)?;

    let prior = beta_bernoulli_new_prior(a, b, lambda, grid)?;
    let product: Vec<f64> = grid
        .iter()
        .zip(&prior)
        .map(|(&t, &p)| {
            let q = temper_bernoulli(t, lambda)?;
            Ok(p * if y == 1 { q } else { 1.0 - q })
        })
        .collect::<Result<_>>()?;
    let z = trapezoid(grid, &product);
    Ok(tempered
        .iter()
        .zip(&product)
        .map(|(u, v)| (u - v / z).abs())
        .fold(0.0, f64::max))
}
