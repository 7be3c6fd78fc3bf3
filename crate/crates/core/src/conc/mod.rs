//! Bernoulli kl divergence, its inverses, and the concentration and
//! PAC-Bayes inequalities built on them.
//!
//! All logarithms are natural. The kl inverses are computed by bisection with
//! closed forms at the endpoints `p_hat ∈ {0, 1}`.

mod coverage;

pub use coverage::{
    finite_class_coverage, split_kl_coverage, CoverageConfig, CoverageReport,
};

use crate::error::{domain, Result};

/// Hard cap on bisection steps for the kl inverses.
pub const BISECTION_MAX_ITERS: usize = 100;

/// A kl value that may be unbounded.
///
/// `kl(p̂‖p)` is infinite when `p ∈ {0, 1}` disagrees with `p̂`; keeping that
/// case as its own variant stops an `inf` from leaking into arithmetic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Divergence {
    Finite(f64),
    Unbounded,
}

impl Divergence {
    pub fn is_finite(self) -> bool {
        matches!(self, Divergence::Finite(_))
    }

    /// The finite value, if any.
    pub fn finite(self) -> Option<f64> {
        match self {
            Divergence::Finite(v) => Some(v),
            Divergence::Unbounded => None,
        }
    }

    /// `self ≤ eps`, treating `Unbounded` as larger than every real.
    pub fn at_most(self, eps: f64) -> bool {
        match self {
            Divergence::Finite(v) => v <= eps,
            Divergence::Unbounded => false,
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return domain(format!("{name} = {p} is not a probability"));
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<()> {
    if eps.is_nan() || eps < 0.0 {
        return domain(format!("kl budget {eps} must be nonnegative"));
    }
    Ok(())
}

fn check_delta(name: &str, delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return domain(format!("{name} = {delta} must lie in (0, 1)"));
    }
    Ok(())
}

/// `x ln(x / y)` with the convention `0 ln 0 = 0`.
fn xlogy_ratio(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

/// kl divergence between Bernoulli(`p_hat`) and Bernoulli(`p`).
pub fn bernoulli_kl(p_hat: f64, p: f64) -> Result<Divergence> {
    check_prob("p_hat", p_hat)?;
    check_prob("p", p)?;
    if (p == 0.0 && p_hat > 0.0) || (p == 1.0 && p_hat < 1.0) {
        return Ok(Divergence::Unbounded);
    }
    let v = xlogy_ratio(p_hat, p) + xlogy_ratio(1.0 - p_hat, 1.0 - p);
    // rounding can leave a tiny negative value when p_hat ≈ p
    Ok(Divergence::Finite(v.max(0.0)))
}

fn kl_unchecked(p_hat: f64, p: f64) -> Divergence {
    bernoulli_kl(p_hat, p).unwrap_or(Divergence::Unbounded)
}

/// Bisection for the boundary of `{p : kl(p_hat‖p) ≤ eps}` inside `[inside, outside]`.
///
/// `inside` satisfies the constraint, `outside` violates it. Runs until the
/// bracket stops shrinking in floating point or the iteration cap is hit,
/// and returns the `outside` end (the conservative side).
fn bisect(p_hat: f64, eps: f64, mut inside: f64, mut outside: f64) -> f64 {
    for _ in 0..BISECTION_MAX_ITERS {
        let mid = 0.5 * (inside + outside);
        if mid == inside || mid == outside {
            break;
        }
        if kl_unchecked(p_hat, mid).at_most(eps) {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    outside
}

/// Upper kl inverse: `max{p ∈ [0,1] : kl(p_hat‖p) ≤ eps}`.
pub fn kl_inv_upper(p_hat: f64, eps: f64) -> Result<f64> {
    check_prob("p_hat", p_hat)?;
    check_eps(eps)?;
    if eps == 0.0 || p_hat == 1.0 {
        return Ok(p_hat);
    }
    if eps.is_infinite() {
        return Ok(1.0);
    }
    if p_hat == 0.0 {
        // kl(0‖p) = -ln(1 - p)
        return Ok(-(-eps).exp_m1());
    }
    Ok(bisect(p_hat, eps, p_hat, 1.0))
}

/// Lower kl inverse: `min{p ∈ [0,1] : kl(p_hat‖p) ≤ eps}`.
pub fn kl_inv_lower(p_hat: f64, eps: f64) -> Result<f64> {
    check_prob("p_hat", p_hat)?;
    check_eps(eps)?;
    if eps == 0.0 || p_hat == 0.0 {
        return Ok(p_hat);
    }
    if eps.is_infinite() {
        return Ok(0.0);
    }
    if p_hat == 1.0 {
        // kl(1‖p) = -ln p
        return Ok((-eps).exp());
    }
    Ok(bisect(p_hat, eps, p_hat, 0.0))
}

/// Ordered support `b_0 < … < b_K` of a discrete random variable.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSupport {
    points: Vec<f64>,
    alphas: Vec<f64>,
}

impl DiscreteSupport {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return domain("a discrete support needs at least two points");
        }
        if points.iter().any(|b| !b.is_finite()) {
            return domain("support points must be finite");
        }
        let alphas: Vec<f64> = points.windows(2).map(|w| w[1] - w[0]).collect();
        if alphas.iter().any(|&a| a <= 0.0) {
            return domain("support points must be strictly increasing");
        }
        Ok(DiscreteSupport { points, alphas })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Segment lengths `α_j = b_j - b_{j-1}`, `j = 1..=K`.
    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Number of binary components `K`.
    pub fn k(&self) -> usize {
        self.alphas.len()
    }

    pub fn lowest(&self) -> f64 {
        self.points[0]
    }

    pub fn highest(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Index of `value` in the support.
    pub fn index_of(&self, value: f64) -> Result<usize> {
        let scale = 1.0 + value.abs();
        self.points
            .iter()
            .position(|&b| b == value || (b - value).abs() <= 1e-12 * scale)
            .ok_or_else(|| {
                crate::Error::Domain(format!("{value} is not a support point"))
            })
    }

    /// `b_0 + Σ α_j x_j` for per-segment values `x_j`.
    pub fn combine(&self, segments: &[f64]) -> f64 {
        self.alphas
            .iter()
            .zip(segments)
            .fold(self.lowest(), |acc, (a, s)| acc + a * s)
    }
}

/// Binary decomposition `(1[v ≥ b_1], …, 1[v ≥ b_K])` of a support value.
pub fn decompose_discrete(value: f64, support: &DiscreteSupport) -> Result<Vec<u8>> {
    let idx = support.index_of(value)?;
    Ok((1..=support.k()).map(|j| u8::from(idx >= j)).collect())
}

fn check_segments(support: &DiscreteSupport, segments: &[f64]) -> Result<()> {
    if segments.len() != support.k() {
        return domain(format!(
            "expected {} segment means, got {}",
            support.k(),
            segments.len()
        ));
    }
    for &s in segments {
        check_prob("segment mean", s)?;
    }
    Ok(())
}

/// Split-kl upper confidence bound on the mean of a discrete variable.
pub fn split_kl_bound(
    support: &DiscreteSupport,
    p_hat_segments: &[f64],
    n: usize,
    delta: f64,
) -> Result<f64> {
    check_segments(support, p_hat_segments)?;
    check_delta("delta", delta)?;
    if n == 0 {
        return domain("sample size must be at least 1");
    }
    let eps = (support.k() as f64 / delta).ln() / n as f64;
    let uppers = p_hat_segments
        .iter()
        .map(|&p| kl_inv_upper(p, eps))
        .collect::<Result<Vec<_>>>()?;
    Ok(support.combine(&uppers))
}

/// PAC-Bayes-kl bound: `kl⁻¹⁺(emp, (KL + ln(2√n/δ))/n)`.
pub fn pac_bayes_kl_bound(emp_loss: f64, kl_div: f64, n: usize, delta: f64) -> Result<f64> {
    check_prob("empirical loss", emp_loss)?;
    check_eps(kl_div)?;
    check_delta("delta", delta)?;
    if n == 0 {
        return domain("sample size must be at least 1");
    }
    let nf = n as f64;
    let eps = (kl_div + (2.0 * nf.sqrt() / delta).ln()) / nf;
    kl_inv_upper(emp_loss, eps)
}

/// PAC-Bayes-split-kl bound on `E_ρ[F]` for a loss with the given support.
pub fn pac_bayes_split_kl_bound(
    support: &DiscreteSupport,
    emp_segments: &[f64],
    kl_div: f64,
    n: usize,
    delta: f64,
) -> Result<f64> {
    check_segments(support, emp_segments)?;
    check_eps(kl_div)?;
    check_delta("delta", delta)?;
    if n == 0 {
        return domain("sample size must be at least 1");
    }
    let nf = n as f64;
    let k = support.k() as f64;
    let eps = (kl_div + (2.0 * k * nf.sqrt() / delta).ln()) / nf;
    let uppers = emp_segments
        .iter()
        .map(|&p| kl_inv_upper(p, eps))
        .collect::<Result<Vec<_>>>()?;
    Ok(support.combine(&uppers))
}

/// McAllester-style relaxation `emp + sqrt((KL + ln(2√n/δ)) / (2n))`.
///
/// Only used as a differentiable training surrogate; it is never reported as
/// a certificate. A negative complexity numerator is clamped to zero.
pub fn mcallester_bound(emp_loss: f64, kl_div: f64, n: usize, delta: f64) -> f64 {
    let nf = n.max(1) as f64;
    let numer = (kl_div + (2.0 * nf.sqrt() / delta).ln()).max(0.0);
    emp_loss + (numer / (2.0 * nf)).sqrt()
}

/// Upper confidence bound on `E_π[f]` from `m` i.i.d. draws of `f(h) ∈ [0,1]`.
pub fn mc_correction_bound(sample_mean: f64, m: usize, delta_prime: f64) -> Result<f64> {
    check_prob("sample mean", sample_mean)?;
    if !(delta_prime > 0.0 && delta_prime <= 1.0) {
        return domain(format!("delta' = {delta_prime} must lie in (0, 1]"));
    }
    if m == 0 {
        return domain("need at least one Monte Carlo draw");
    }
    kl_inv_upper(sample_mean, (1.0 / delta_prime).ln() / m as f64)
}

/// Failure-probability budget for a recursive bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceBudget {
    pub delta: f64,
    pub delta_prime: f64,
    pub depth: usize,
}

impl ConfidenceBudget {
    pub fn new(delta: f64, delta_prime: f64, depth: usize) -> Result<Self> {
        check_delta("delta", delta)?;
        check_delta("delta'", delta_prime)?;
        if delta + delta_prime >= 1.0 {
            return domain("delta + delta' must be below 1");
        }
        if depth == 0 {
            return domain("recursion depth must be at least 1");
        }
        Ok(ConfidenceBudget {
            delta,
            delta_prime,
            depth,
        })
    }

    /// Per-step share of `delta`.
    pub fn step_delta(&self) -> f64 {
        self.delta / self.depth as f64
    }

    /// Number of Monte Carlo estimated quantities, `1 + 3(T-1)`.
    pub fn estimated_quantities(&self) -> usize {
        1 + 3 * (self.depth - 1)
    }

    /// Share of `delta'` given to each estimated quantity.
    pub fn per_estimate_delta_prime(&self) -> f64 {
        self.delta_prime / self.estimated_quantities() as f64
    }
}
