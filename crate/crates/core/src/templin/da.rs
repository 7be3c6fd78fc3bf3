//! Data-augmented posteriors and the covariance form of the loss derivatives.
//!
//! A transformation set `H` replaces the log-likelihood with its per-datum
//! average over `h ∈ H`. For linear maps on the features the averaged loss is
//! still quadratic in `θ`, so the DA-tempered posterior stays Gaussian.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{
    check_task, fit_quadratic, GaussianModelSpec, RegressionTask, TemperedLinRegPosterior, LN_2PI, POINT_CHUNK,
    POSTERIOR_STREAM,
};
use crate::error::{domain, Result};
use crate::exec::Exec;

/// A finite set of invertible linear maps on feature vectors, weighted
/// uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformationSet {
    maps: Vec<DMatrix<f64>>,
}

impl TransformationSet {
    pub fn new(maps: Vec<DMatrix<f64>>) -> Result<Self> {
        let Some(first) = maps.first() else {
            return domain("a transformation set cannot be empty");
        };
        let d = first.nrows();
        for m in &maps {
            if m.nrows() != d || m.ncols() != d {
                return domain(format!("every map must be {d}×{d}"));
            }
            if m.clone().try_inverse().is_none() {
                return domain("transformations must be bijections");
            }
        }
        Ok(TransformationSet { maps })
    }

    pub fn identity(d: usize) -> Self {
        TransformationSet {
            maps: vec![DMatrix::identity(d, d)],
        }
    }

    /// All cyclic shifts of the coordinates, identity included. They preserve
    /// `1ᵀφ`, so they leave an all-ones regression target invariant.
    pub fn cyclic_shifts(d: usize) -> Self {
        let maps = (0..d)
            .map(|k| DMatrix::from_fn(d, d, |i, j| if (j + k) % d == i { 1.0 } else { 0.0 }))
            .collect();
        TransformationSet { maps }
    }

    /// The `d` maps that negate a single coordinate.
    pub fn sign_flips(d: usize) -> Self {
        let maps = (0..d)
            .map(|k| {
                let mut m = DMatrix::identity(d, d);
                m[(k, k)] = -1.0;
                m
            })
            .collect();
        TransformationSet { maps }
    }

    pub fn maps(&self) -> &[DMatrix<f64>] {
        &self.maps
    }

    pub fn dim(&self) -> usize {
        self.maps[0].nrows()
    }

    /// `avg_h M_h A M_hᵀ` and `avg_h M_h b`.
    fn average_quadratic(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let k = self.maps.len() as f64;
        let d = self.dim();
        let mut aa = DMatrix::zeros(d, d);
        let mut bb = DVector::zeros(d);
        for m in &self.maps {
            aa += m * a * m.transpose();
            bb += m * b;
        }
        (aa / k, bb / k)
    }
}

fn check_transforms(t: &TransformationSet, task: &RegressionTask) -> Result<()> {
    if t.dim() != task.d() {
        return domain(format!("transforms act on dimension {}, features have {}", t.dim(), task.d()));
    }
    Ok(())
}

/// `L̂_DA(D, θ_i) = (1/n) Σ_j avg_h -ln p(y_j | h(x_j), θ_i)` for each row of
/// `thetas`.
pub fn da_pseudo_loss(
    thetas: &DMatrix<f64>,
    task: &RegressionTask,
    spec: &GaussianModelSpec,
    transforms: &TransformationSet,
) -> Result<Vec<f64>> {
    check_task(task, spec)?;
    check_transforms(transforms, task)?;
    let n = task.n();
    if n == 0 {
        return domain("empirical loss needs at least one point");
    }
    let k = transforms.maps.len() as f64;
    let mut out = vec![0.0; thetas.nrows()];
    for m in &transforms.maps {
        // θᵀ(M φ) for every draw and datum
        let pred = thetas * m * task.x.transpose();
        for (i, o) in out.iter_mut().enumerate() {
            *o += (0..n).map(|j| spec.nll(task.y[j] - pred[(i, j)])).sum::<f64>();
        }
    }
    Ok(out.into_iter().map(|v| v / (k * n as f64)).collect())
}

/// Exact posterior `∝ exp(-nλ L̂_DA(D, θ)) p(θ)`; `λ = 0` returns the prior.
pub fn fit_da_tempered_posterior(
    task: &RegressionTask,
    spec: &GaussianModelSpec,
    transforms: &TransformationSet,
    lambda: f64,
) -> Result<TemperedLinRegPosterior> {
    check_task(task, spec)?;
    check_transforms(transforms, task)?;
    let a = task.x.tr_mul(&task.x);
    let b = task.x.tr_mul(&task.y);
    let (a, b) = transforms.average_quadratic(&a, &b);
    fit_quadratic(&a, &b, spec, lambda)
}

/// Expected loss `L(θ) = E_ν[-ln p(y|x,θ)]` on a holdout sample, as a
/// quadratic in `θ` through the holdout moments.
struct HoldoutMoments {
    gram: DMatrix<f64>,
    cross: DVector<f64>,
    y2: f64,
}

impl HoldoutMoments {
    fn new(holdout: &RegressionTask) -> Self {
        let n = holdout.n() as f64;
        HoldoutMoments {
            gram: holdout.x.tr_mul(&holdout.x) / n,
            cross: holdout.x.tr_mul(&holdout.y) / n,
            y2: holdout.y.norm_squared() / n,
        }
    }

    fn expected_loss(&self, theta: &DVector<f64>, spec: &GaussianModelSpec) -> f64 {
        let msq = self.y2 - 2.0 * theta.dot(&self.cross) + theta.dot(&(&self.gram * theta));
        0.5 * (LN_2PI + spec.likelihood_var.ln()) + msq / (2.0 * spec.likelihood_var)
    }
}

/// `G(ρ) = E_ρ[L(θ)]` with `L` taken on `holdout`, in closed form.
pub fn population_gibbs_loss(
    post: &TemperedLinRegPosterior,
    spec: &GaussianModelSpec,
    holdout: &RegressionTask,
) -> Result<f64> {
    check_task(holdout, spec)?;
    if holdout.n() == 0 {
        return domain("holdout must be non-empty");
    }
    let h = HoldoutMoments::new(holdout);
    let trace = (&h.gram * &post.covariance).trace();
    Ok(h.expected_loss(&post.mean, spec) + trace / (2.0 * spec.likelihood_var))
}

/// Monte Carlo covariances behind the Gibbs and Bayes loss derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DaDiagnostics {
    /// `-COV(n L̂, L)`: the derivative of the population Gibbs loss.
    pub gibbs_grad_cov: f64,
    pub gibbs_grad_cov_stderr: f64,
    /// `-COV(n L̂, S_ρ)`: the derivative of the Bayes loss.
    pub bayes_grad_cov: f64,
    pub bayes_grad_cov_stderr: f64,
    /// Sample mean of `-S_ρ(θ)`, which is 1 in expectation.
    pub mean_neg_s: f64,
    pub mean_neg_s_stderr: f64,
    /// The training loss does not vary over the draws (posterior = prior).
    pub degenerate: bool,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `-COV(a, b)` and the standard error of its sample estimate.
fn neg_cov(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (ma, mb) = (mean(a), mean(b));
    let prods: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let c = mean(&prods);
    let m = prods.len() as f64;
    let var = prods.iter().map(|p| (p - c).powi(2)).sum::<f64>() / (m - 1.0);
    (-c, (var / m).sqrt())
}

/// Covariance diagnostics for `post`, which must have been fitted with
/// `transforms` (use [`TransformationSet::identity`] for the plain posterior).
///
/// `S_ρ(θ) = -E_ν[p(y|x,θ) / E_ρ p(y|x,θ)]` uses the closed-form predictive
/// of `post` as the denominator and `holdout` for `E_ν`.
#[allow(clippy::too_many_arguments)]
pub fn da_cov_diagnostics(
    post: &TemperedLinRegPosterior,
    task: &RegressionTask,
    spec: &GaussianModelSpec,
    transforms: &TransformationSet,
    holdout: &RegressionTask,
    m: usize,
    seed: u64,
    exec: Exec,
) -> Result<DaDiagnostics> {
    check_task(holdout, spec)?;
    if m < 2 {
        return domain("need at least two posterior draws");
    }
    if holdout.n() == 0 {
        return domain("holdout must be non-empty");
    }
    let thetas = post.sample_matrix(m, seed, POSTERIOR_STREAM, exec);
    let n = task.n() as f64;
    let train: Vec<f64> = if task.n() == 0 {
        vec![0.0; m]
    } else {
        da_pseudo_loss(&thetas, task, spec, transforms)?
            .into_iter()
            .map(|l| n * l)
            .collect()
    };
    let moments = HoldoutMoments::new(holdout);
    let pop: Vec<f64> = (0..m)
        .map(|i| moments.expected_loss(&thetas.row(i).transpose(), spec))
        .collect();
    let neg_s = relative_performance(post, &thetas, spec, holdout, exec);

    let tm = mean(&train);
    let spread = train.iter().map(|t| (t - tm).abs()).fold(0.0, f64::max);
    let degenerate = spread <= 1e-12 * (1.0 + tm.abs());
    let (gibbs, gibbs_se, bayes, bayes_se) = if degenerate {
        (0.0, 0.0, 0.0, 0.0)
    } else {
        let (g, gs) = neg_cov(&train, &pop);
        // S = -neg_s, so -COV(a, S) = COV(a, neg_s)
        let (b, bs) = neg_cov(&train, &neg_s);
        (g, gs, -b, bs)
    };
    let ms = mean(&neg_s);
    let sd = (neg_s.iter().map(|v| (v - ms).powi(2)).sum::<f64>() / (m as f64 - 1.0)).sqrt();
    Ok(DaDiagnostics {
        gibbs_grad_cov: gibbs,
        gibbs_grad_cov_stderr: gibbs_se,
        bayes_grad_cov: bayes,
        bayes_grad_cov_stderr: bayes_se,
        mean_neg_s: ms,
        mean_neg_s_stderr: sd / (m as f64).sqrt(),
        degenerate,
    })
}

/// `-S_ρ(θ_i)` for every draw.
fn relative_performance(
    post: &TemperedLinRegPosterior,
    thetas: &DMatrix<f64>,
    spec: &GaussianModelSpec,
    holdout: &RegressionTask,
    exec: Exec,
) -> Vec<f64> {
    let m = thetas.nrows();
    let s2 = spec.likelihood_var;
    let parts = exec.map_chunks(holdout.n(), POINT_CHUNK, |range| {
        let xs = holdout.x.rows(range.start, range.len());
        let pred = thetas * xs.transpose();
        let mut sums = vec![0.0; m];
        for (c, j) in range.enumerate() {
            let phi = holdout.x.row(j).transpose();
            let (mu, var) = post.predictive(&phi, spec);
            let r = holdout.y[j] - mu;
            let ln_pred = -0.5 * var.ln() - r * r / (2.0 * var);
            for (i, s) in sums.iter_mut().enumerate() {
                let e = holdout.y[j] - pred[(i, c)];
                *s += (-0.5 * s2.ln() - e * e / (2.0 * s2) - ln_pred).exp();
            }
        }
        sums
    });
    let mut total = vec![0.0; m];
    for p in parts {
        total.iter_mut().zip(&p).for_each(|(t, s)| *t += s);
    }
    let big_n = holdout.n() as f64;
    total.into_iter().map(|t| t / big_n).collect()
}

#[cfg(test)]
mod tests {
    use super::super::{dataset_nll, fit_tempered_posterior, generate_regression_data, generate_task};
    use super::*;
    use approx::assert_abs_diff_eq;

    fn setup() -> (RegressionTask, GaussianModelSpec) {
        (
            generate_regression_data(8, 10, 1).unwrap(),
            GaussianModelSpec::centered(1.0, 2.0, 10).unwrap(),
        )
    }

    #[test]
    fn set_validation() {
        assert!(TransformationSet::new(vec![]).is_err());
        assert!(TransformationSet::new(vec![DMatrix::zeros(3, 3)]).is_err());
        assert!(TransformationSet::new(vec![DMatrix::identity(3, 3), DMatrix::identity(2, 2)]).is_err());
        assert_eq!(TransformationSet::cyclic_shifts(4).maps().len(), 4);
        let ones = DVector::from_element(5, 1.0);
        for m in TransformationSet::cyclic_shifts(5).maps() {
            assert_eq!((m * &ones).sum(), 5.0);
        }
    }

    #[test]
    fn identity_set_reduces_to_plain_model() {
        let (task, spec) = setup();
        let id = TransformationSet::identity(10);
        let post = fit_tempered_posterior(&task, &spec, 1.5).unwrap();
        let da = fit_da_tempered_posterior(&task, &spec, &id, 1.5).unwrap();
        assert_abs_diff_eq!(post.mean, da.mean, epsilon = 1e-12);
        assert_abs_diff_eq!(post.covariance, da.covariance, epsilon = 1e-12);
        let thetas = post.sample_matrix(5, 0, 0, Exec::Sequential);
        let plain = dataset_nll(&thetas, &task, &spec);
        let pseudo = da_pseudo_loss(&thetas, &task, &spec, &id).unwrap();
        for (p, q) in plain.iter().zip(&pseudo) {
            assert_abs_diff_eq!(p / 8.0, *q, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_temperature_is_prior() {
        let (task, spec) = setup();
        let p = fit_da_tempered_posterior(&task, &spec, &TransformationSet::sign_flips(10), 0.0).unwrap();
        assert_abs_diff_eq!(p.covariance, DMatrix::identity(10, 10) * 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.mean.norm(), 0.0);
    }

    #[test]
    fn invariance_of_all_ones_model() {
        let (task, spec) = setup();
        let ones = DMatrix::from_element(1, 10, 1.0);
        let plain = da_pseudo_loss(&ones, &task, &spec, &TransformationSet::identity(10)).unwrap()[0];
        let perm = da_pseudo_loss(&ones, &task, &spec, &TransformationSet::cyclic_shifts(10)).unwrap()[0];
        let flip = da_pseudo_loss(&ones, &task, &spec, &TransformationSet::sign_flips(10)).unwrap()[0];
        assert_abs_diff_eq!(plain, perm, epsilon = 1e-12);
        assert!((plain - flip).abs() > 1e-3);
    }

    #[test]
    fn shift_posterior_mean_is_symmetric() {
        let (task, spec) = setup();
        let p = fit_da_tempered_posterior(&task, &spec, &TransformationSet::cyclic_shifts(10), 1.0).unwrap();
        for i in 1..10 {
            assert!((p.mean[i] - p.mean[0]).abs() < 1e-10);
        }
    }

    /// `-COV(θᵀAθ/2σ² - bᵀθ/σ², θᵀGθ/2σ² - cᵀθ/σ²)` for `θ ~ N(m, Σ)`.
    fn closed_form_neg_cov(
        post: &TemperedLinRegPosterior,
        a: &DMatrix<f64>,
        b: &DVector<f64>,
        g: &DMatrix<f64>,
        c: &DVector<f64>,
        s2: f64,
    ) -> f64 {
        let s = &post.covariance;
        let u = (a * &post.mean - b) / s2;
        let v = (g * &post.mean - c) / s2;
        let quad = 0.5 * (a * s * g * s).trace() / (s2 * s2);
        -(quad + u.dot(&(s * v)))
    }

    #[test]
    fn gibbs_covariance_matches_closed_form() {
        let (task, spec) = setup();
        let holdout = generate_task(3000, DVector::from_element(10, 1.0), 1.0, 1, 1).unwrap();
        for t in [TransformationSet::identity(10), TransformationSet::cyclic_shifts(10)] {
            let post = fit_da_tempered_posterior(&task, &spec, &t, 1.0).unwrap();
            let d = da_cov_diagnostics(&post, &task, &spec, &t, &holdout, 20_000, 2, Exec::Parallel).unwrap();
            let (a, b) = t.average_quadratic(&task.x.tr_mul(&task.x), &task.x.tr_mul(&task.y));
            let h = HoldoutMoments::new(&holdout);
            let exact = closed_form_neg_cov(&post, &a, &b, &h.gram, &h.cross, 1.0);
            assert!((d.gibbs_grad_cov - exact).abs() < 4.0 * d.gibbs_grad_cov_stderr, "{d:?} vs {exact}");
            assert!((d.mean_neg_s - 1.0).abs() < 3.0 * d.mean_neg_s_stderr + 1e-9);
        }
    }

    #[test]
    fn population_gibbs_derivative_matches_covariance() {
        let (task, spec) = setup();
        let holdout = generate_task(3000, DVector::from_element(10, 1.0), 1.0, 1, 1).unwrap();
        let t = TransformationSet::sign_flips(10);
        let g = |l: f64| {
            let p = fit_da_tempered_posterior(&task, &spec, &t, l).unwrap();
            population_gibbs_loss(&p, &spec, &holdout).unwrap()
        };
        let fd = (g(1.001) - g(0.999)) / 0.002;
        let post = fit_da_tempered_posterior(&task, &spec, &t, 1.0).unwrap();
        let d = da_cov_diagnostics(&post, &task, &spec, &t, &holdout, 20_000, 4, Exec::Parallel).unwrap();
        assert!((d.gibbs_grad_cov - fd).abs() < 4.0 * d.gibbs_grad_cov_stderr, "{d:?} vs {fd}");
    }

    #[test]
    fn empty_data_is_degenerate() {
        let task = generate_regression_data(0, 10, 1).unwrap();
        let spec = GaussianModelSpec::centered(1.0, 2.0, 10).unwrap();
        let holdout = generate_task(200, DVector::from_element(10, 1.0), 1.0, 1, 1).unwrap();
        let id = TransformationSet::identity(10);
        let post = fit_da_tempered_posterior(&task, &spec, &id, 1.0).unwrap();
        let d = da_cov_diagnostics(&post, &task, &spec, &id, &holdout, 100, 0, Exec::Sequential).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.gibbs_grad_cov, 0.0);
    }
}
