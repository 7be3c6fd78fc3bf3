//! Mixture decomposition of a mean-field KL divergence.
//!
//! For `q(θ_1..θ_D) = Π q_d(θ_d)` against a shared prior `p(θ)`,
//!
//! ```text
//! Σ_d KL(q_d ‖ p) = D · ( KL(q_avg ‖ p) + I[d, θ] ),   q_avg = (1/D) Σ_d q_d
//! ```
//!
//! where `I[d, θ]` is the mutual information between a uniform index `d` and
//! `θ ~ q_d`. The left side is closed form; the right side is integrated with
//! composite Simpson on a window around all components.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{domain, Result};
use crate::exec::{stream_rng, Exec};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Largest mass any component may leave outside the quadrature window.
pub const MAX_TAIL_MASS: f64 = 1e-10;

/// A one-dimensional Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian1 {
    pub mean: f64,
    pub std: f64,
}

impl Gaussian1 {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !(std > 0.0 && std.is_finite()) {
            return domain(format!("invalid Gaussian N({mean}, {std}²)"));
        }
        Ok(Gaussian1 { mean, std })
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.std;
        -0.5 * z * z - self.std.ln() - LN_SQRT_2PI
    }

    /// Closed-form `KL(self ‖ other)`.
    pub fn kl(&self, other: &Gaussian1) -> f64 {
        let r = self.std / other.std;
        let dm = (self.mean - other.mean) / other.std;
        0.5 * (r * r + dm * dm - 1.0) - r.ln()
    }

    /// Probability mass outside `[lo, hi]`.
    fn mass_outside(&self, lo: f64, hi: f64) -> f64 {
        let s = self.std * std::f64::consts::SQRT_2;
        0.5 * erfc((self.mean - lo) / s) + 0.5 * erfc((hi - self.mean) / s)
    }
}

/// Quadrature settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    /// Simpson node count; rounded up to the form `4m + 1` so the error
    /// estimate can reuse every other node.
    pub nodes: usize,
    /// Half-width of the window in component standard deviations.
    pub width_sds: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            nodes: 2001,
            width_sds: 8.0,
        }
    }
}

/// `Σ_d KL(q_d ‖ p)`.
pub fn meanfield_kl(q: &[Gaussian1], p: &Gaussian1) -> f64 {
    q.iter().map(|qd| qd.kl(p)).sum()
}

/// The two terms of the decomposition, each with a quadrature error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixtureTerms {
    pub kl_avg: f64,
    pub mutual_info: f64,
    pub kl_avg_err: f64,
    pub mutual_info_err: f64,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Composite Simpson over equally spaced `values` with spacing `h`.
fn simpson(values: &[f64], h: f64) -> f64 {
    let last = values.len() - 1;
    let inner: f64 = values[1..last]
        .iter()
        .enumerate()
        .map(|(i, v)| if i % 2 == 0 { 4.0 * v } else { 2.0 * v })
        .sum();
    h / 3.0 * (values[0] + values[last] + inner)
}

/// Simpson value on all nodes and on every second node.
fn simpson_pair(values: &[f64], h: f64) -> (f64, f64) {
    let coarse: Vec<f64> = values.iter().step_by(2).copied().collect();
    (simpson(values, h), simpson(&coarse, 2.0 * h))
}

/// `KL(q_avg ‖ p)` and `I[d, θ]` by quadrature.
pub fn mixture_terms(q: &[Gaussian1], p: &Gaussian1, cfg: QuadratureConfig) -> Result<MixtureTerms> {
    if q.is_empty() {
        return domain("need at least one mean-field component");
    }
    if !(cfg.width_sds > 0.0) || cfg.nodes < 5 {
        return domain("quadrature needs a positive width and at least 5 nodes");
    }
    let lo = q.iter().map(|g| g.mean - cfg.width_sds * g.std).fold(f64::INFINITY, f64::min);
    let hi = q.iter().map(|g| g.mean + cfg.width_sds * g.std).fold(f64::NEG_INFINITY, f64::max);
    for (d, g) in q.iter().enumerate() {
        let tail = g.mass_outside(lo, hi);
        if tail > MAX_TAIL_MASS {
            return domain(format!(
                "quadrature window [{lo}, {hi}] leaves mass {tail:e} of component {d} outside"
            ));
        }
    }

    let intervals = (cfg.nodes - 1).div_ceil(4) * 4;
    let h = (hi - lo) / intervals as f64;
    let dn = q.len() as f64;
    let ln_d = dn.ln();
    let mut kl_vals = Vec::with_capacity(intervals + 1);
    let mut mi_vals = Vec::with_capacity(intervals + 1);
    let mut lq = vec![0.0; q.len()];
    for i in 0..=intervals {
        let x = lo + i as f64 * h;
        for (l, g) in lq.iter_mut().zip(q) {
            *l = g.ln_pdf(x);
        }
        let ln_avg = log_sum_exp(&lq) - ln_d;
        let avg = ln_avg.exp();
        kl_vals.push(if avg > 0.0 { avg * (ln_avg - p.ln_pdf(x)) } else { 0.0 });
        let mi: f64 = lq
            .iter()
            .map(|&l| {
                let v = l.exp();
                if v > 0.0 {
                    v * (l - ln_avg)
                } else {
                    0.0
                }
            })
            .sum();
        mi_vals.push(mi / dn);
    }
    let (kl_avg, kl_coarse) = simpson_pair(&kl_vals, h);
    let (mutual_info, mi_coarse) = simpson_pair(&mi_vals, h);
    Ok(MixtureTerms {
        kl_avg,
        mutual_info,
        kl_avg_err: (kl_avg - kl_coarse).abs(),
        mutual_info_err: (mutual_info - mi_coarse).abs(),
    })
}

/// Both sides of the identity for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecompositionCheck {
    pub d: usize,
    pub lhs: f64,
    pub kl_avg: f64,
    pub mutual_info: f64,
    pub rhs: f64,
    pub residual: f64,
}

pub fn verify_decomposition(q: &[Gaussian1], p: &Gaussian1, cfg: QuadratureConfig) -> Result<DecompositionCheck> {
    let lhs = meanfield_kl(q, p);
    let t = mixture_terms(q, p, cfg)?;
    let rhs = q.len() as f64 * (t.kl_avg + t.mutual_info);
    Ok(DecompositionCheck {
        d: q.len(),
        lhs,
        kl_avg: t.kl_avg,
        mutual_info: t.mutual_info,
        rhs,
        residual: (lhs - rhs).abs(),
    })
}

/// `data_fit + D (KL_avg/λ1 + I/λ2)`; an infinite `λ2` drops the
/// mutual-information penalty.
pub fn generalized_objective(
    data_fit: f64,
    kl_avg: f64,
    mutual_info: f64,
    d: usize,
    lambda1: f64,
    lambda2: f64,
) -> Result<f64> {
    if !(lambda1 > 0.0 && lambda2 > 0.0) {
        return domain("both temperatures must be positive");
    }
    let mi_term = if lambda2.is_infinite() { 0.0 } else { mutual_info / lambda2 };
    Ok(data_fit + d as f64 * (kl_avg / lambda1 + mi_term))
}

/// A random configuration: `D ∈ 1..=max_d`, means in `[-3, 3]`, stds in
/// `[0.2, 2]`, for both the components and the prior.
pub fn random_configuration<R: Rng>(rng: &mut R, max_d: usize) -> (Vec<Gaussian1>, Gaussian1) {
    let d = rng.random_range(1..=max_d.max(1));
    random_configuration_of(rng, d)
}

/// As [`random_configuration`] with exactly `d` components.
pub fn random_configuration_of<R: Rng>(rng: &mut R, d: usize) -> (Vec<Gaussian1>, Gaussian1) {
    let draw = |rng: &mut R| Gaussian1 {
        mean: rng.random_range(-3.0..=3.0),
        std: rng.random_range(0.2..=2.0),
    };
    let q = (0..d.max(1)).map(|_| draw(rng)).collect();
    (q, draw(rng))
}

/// Number of mixture components in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentCount {
    UpTo(usize),
    Exactly(usize),
}

/// Checks the identity on `trials` random configurations with `D` drawn
/// uniformly from `1..=max_d`.
pub fn random_sweep(
    trials: usize,
    max_d: usize,
    seed: u64,
    cfg: QuadratureConfig,
    exec: Exec,
) -> Result<Vec<DecompositionCheck>> {
    sweep(trials, ComponentCount::UpTo(max_d), seed, cfg, exec)
}

pub fn sweep(
    trials: usize,
    count: ComponentCount,
    seed: u64,
    cfg: QuadratureConfig,
    exec: Exec,
) -> Result<Vec<DecompositionCheck>> {
    exec.map(trials, |t| {
        let rng = &mut stream_rng(seed, t as u64);
        let (q, p) = match count {
            ComponentCount::UpTo(max_d) => random_configuration(rng, max_d),
            ComponentCount::Exactly(d) => random_configuration_of(rng, d),
        };
        verify_decomposition(&q, &p, cfg)
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn g(mean: f64, std: f64) -> Gaussian1 {
        Gaussian1::new(mean, std).unwrap()
    }

    #[test]
    fn closed_form_kl() {
        let p = g(0.0, 1.0);
        assert_eq!(meanfield_kl(&[p, p], &p), 0.0);
        assert_abs_diff_eq!(meanfield_kl(&[g(-1.0, 1.0), g(1.0, 1.0)], &p), 1.0, epsilon = 1e-15);
        let a = [g(0.3, 0.5), g(-1.0, 2.0)];
        let b = [g(2.0, 0.7)];
        let all = [a[0], a[1], b[0]];
        assert_abs_diff_eq!(meanfield_kl(&all, &p), meanfield_kl(&a, &p) + meanfield_kl(&b, &p));
    }

    #[test]
    fn single_component() {
        let q = [g(0.7, 0.4)];
        let p = g(-0.2, 1.3);
        let t = mixture_terms(&q, &p, QuadratureConfig::default()).unwrap();
        assert_abs_diff_eq!(t.mutual_info, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t.kl_avg, q[0].kl(&p), epsilon = 1e-10);
        assert!(verify_decomposition(&q, &p, QuadratureConfig::default()).unwrap().residual < 1e-10);
    }

    #[test]
    fn identical_components_share_no_information() {
        let q = [g(1.0, 0.5); 4];
        let t = mixture_terms(&q, &g(0.0, 1.0), QuadratureConfig::default()).unwrap();
        assert_abs_diff_eq!(t.mutual_info, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn two_component_example() {
        let q = [g(-1.0, 1.0), g(1.0, 1.0)];
        let t = mixture_terms(&q, &g(0.0, 1.0), QuadratureConfig::default()).unwrap();
        assert_abs_diff_eq!(t.kl_avg + t.mutual_info, 0.5, epsilon = 1e-6);
        assert!(t.kl_avg_err < 1e-8 && t.mutual_info_err < 1e-8);
        let obj = generalized_objective(2.0, t.kl_avg, t.mutual_info, 2, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(obj, 3.0, epsilon = 2e-6);
    }

    #[test]
    fn distant_prior() {
        let q = [g(-0.5, 0.3), g(0.4, 0.8), g(0.0, 0.2)];
        let cfg = QuadratureConfig { nodes: 4001, width_sds: 10.0 };
        let c = verify_decomposition(&q, &g(5.0, 0.5), cfg).unwrap();
        assert!(c.residual < 1e-6, "{c:?}");
    }

    #[test]
    fn narrow_window_is_rejected() {
        let cfg = QuadratureConfig { nodes: 2001, width_sds: 4.0 };
        assert!(mixture_terms(&[g(0.0, 1.0)], &g(0.0, 1.0), cfg).is_err());
    }

    #[test]
    fn objective_limits() {
        let base = generalized_objective(1.0, 0.2, 0.3, 3, 2.0, 2.0).unwrap();
        assert_abs_diff_eq!(base, 1.0 + 3.0 * 0.5 / 2.0);
        assert_eq!(generalized_objective(1.0, 0.2, 0.3, 3, 2.0, f64::INFINITY).unwrap(), 1.0 + 0.3);
        assert!(generalized_objective(1.0, 0.2, 0.3, 3, 0.0, 1.0).is_err());
    }

    #[test]
    fn sweep_is_strategy_independent() {
        let cfg = QuadratureConfig::default();
        let a = random_sweep(8, 5, 3, cfg, Exec::Sequential).unwrap();
        let b = random_sweep(8, 5, 3, cfg, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fixed_component_count() {
        let checks = sweep(6, ComponentCount::Exactly(4), 7, QuadratureConfig::default(), Exec::Sequential).unwrap();
        assert!(checks.iter().all(|c| c.d == 4 && c.residual < 1e-6));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn information_ranges(seed in any::<u64>()) {
            let (q, p) = random_configuration(&mut stream_rng(seed, 0), 8);
            let t = mixture_terms(&q, &p, QuadratureConfig::default()).unwrap();
            prop_assert!(t.kl_avg >= -1e-9);
            prop_assert!(t.mutual_info >= -1e-9);
            prop_assert!(t.mutual_info <= (q.len() as f64).ln() + 1e-9);
        }
    }
}
