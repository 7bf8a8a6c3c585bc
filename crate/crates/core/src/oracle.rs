//! Reference computations used to check the closed-form updates: exact
//! conjugate fusion, importance-sampled fusion, 1-D quadrature and plain
//! Monte Carlo.

use std::borrow::Borrow;
use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::belief::{check_weights, symmetrized, GaussianBelief, GaussianMoments};
use crate::error::{check_dim, Error, Result};
use crate::vi::{probit, sigmoid, std_normal_pdf};

/// Importance sampling gives up below this effective sample size.
pub const MIN_ESS: f64 = 10.0;
const CHUNK: usize = 4096;

/// ℓ(z | θ) = N(z; Hθ, (Ω^z)⁻¹).
#[derive(Debug, Clone)]
pub struct LinearGaussianModel {
    h: DMatrix<f64>,
    obs_precision: DMatrix<f64>,
    obs_chol: Cholesky<f64, Dyn>,
}

impl LinearGaussianModel {
    pub fn new(h: DMatrix<f64>, obs_precision: DMatrix<f64>) -> Result<Self> {
        check_dim("observation precision rows", h.nrows(), obs_precision.nrows())?;
        check_dim("observation precision cols", h.nrows(), obs_precision.ncols())?;
        let asym = (&obs_precision - obs_precision.transpose()).amax();
        if asym > 1e-12 * obs_precision.amax().max(1.0) {
            return Err(Error::NotPositiveDefinite("observation precision is not symmetric"));
        }
        let obs_chol = Cholesky::new(obs_precision.clone())
            .ok_or(Error::NotPositiveDefinite("observation precision"))?;
        Ok(Self {
            h,
            obs_precision,
            obs_chol,
        })
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn obs_precision(&self) -> &DMatrix<f64> {
        &self.obs_precision
    }

    pub fn param_dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn obs_dim(&self) -> usize {
        self.h.nrows()
    }

    /// log N(z; Hθ, (Ω^z)⁻¹) including the normalizing constant.
    pub fn log_likelihood(&self, z: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        let r = z - &self.h * theta;
        let logdet: f64 = self.obs_chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        0.5 * (logdet - self.obs_dim() as f64 * (2.0 * PI).ln() - r.dot(&(&self.obs_precision * &r)))
    }
}

/// Exact posterior when the weighted geometric mean of Gaussian priors
/// meets a linear-Gaussian likelihood:
/// Ω₊ = HᵀΩ^zH + Σ w_jΩ_j, μ₊ = Ω₊⁻¹(HᵀΩ^z z + Σ w_jΩ_jμ_j).
pub fn conjugate_fusion_posterior<B: Borrow<GaussianBelief>>(
    priors: &[B],
    weights: &[f64],
    model: &LinearGaussianModel,
    z: &DVector<f64>,
) -> Result<GaussianBelief> {
    check_weights(weights, priors.len())?;
    let dim = model.param_dim();
    check_dim("observation", model.obs_dim(), z.len())?;
    let ht_oz = model.h.transpose() * &model.obs_precision;
    let mut info = &ht_oz * &model.h;
    let mut eta = &ht_oz * z;
    for (b, &w) in priors.iter().zip(weights) {
        let b = b.borrow();
        check_dim("prior dimension", dim, b.dim())?;
        info.zip_apply(b.information(), |a, v| *a += w * v);
        eta.axpy(w, &b.information_vector(), 1.0);
    }
    let info = symmetrized(info);
    let chol = Cholesky::new(info.clone()).ok_or(Error::NotPositiveDefinite("posterior information"))?;
    GaussianBelief::new(chol.solve(&eta), info)
}

/// Resampled particles and their moment-matched Gaussian.
#[derive(Debug, Clone)]
pub struct ParticleFusion {
    /// Resampled particles, one per row.
    pub particles: DMatrix<f64>,
    pub fitted: GaussianBelief,
    /// Effective sample size of the normalized importance weights.
    pub ess: f64,
}

#[derive(Serialize)]
struct ParticleFile<'a> {
    particles: Vec<Vec<f64>>,
    fitted_mean: &'a [f64],
    fitted_covariance: Vec<Vec<f64>>,
    ess: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    analytic_mean: Option<&'a [f64]>,
}

impl ParticleFusion {
    /// JSON with the particle cloud, the fitted Gaussian and optionally the
    /// analytic mean for comparison.
    pub fn to_json(&self, analytic_mean: Option<&DVector<f64>>) -> Result<String> {
        let cov = self.fitted.covariance()?;
        let file = ParticleFile {
            particles: self
                .particles
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            fitted_mean: self.fitted.mean().as_slice(),
            fitted_covariance: cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
            ess: self.ess,
            analytic_mean: analytic_mean.map(|m| m.as_slice()),
        };
        Ok(serde_json::to_string(&file)?)
    }
}

struct LogDensity {
    mean: DVector<f64>,
    information: DMatrix<f64>,
    norm: f64,
}

impl LogDensity {
    fn new(b: &GaussianBelief) -> Result<Self> {
        let chol = b.cholesky()?;
        let logdet: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        Ok(Self {
            mean: b.mean().clone(),
            information: b.information().clone(),
            norm: 0.5 * (logdet - b.dim() as f64 * (2.0 * PI).ln()),
        })
    }

    fn eval(&self, theta: &DVector<f64>) -> f64 {
        let d = theta - &self.mean;
        self.norm - 0.5 * d.dot(&(&self.information * &d))
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Importance-sampled geometric fusion with an arbitrary log-likelihood.
///
/// Particles come from the equal-weight mixture of the priors and carry
/// weight ℓ(z|θ) Π q_j(θ)^{w_j} / proposal(θ). After normalization they are
/// stratified-resampled and a Gaussian is fitted by moments. Sampling is
/// split into fixed-size chunks with their own seeded streams, so results
/// depend on the seed only.
pub fn particle_fusion_posterior_with<B, F>(
    priors: &[B],
    weights: &[f64],
    log_likelihood: F,
    n_particles: usize,
    seed: u64,
) -> Result<ParticleFusion>
where
    B: Borrow<GaussianBelief> + Sync,
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    check_weights(weights, priors.len())?;
    if n_particles < 1000 {
        return Err(Error::InvalidArgument(format!(
            "n_particles must be at least 1000, got {n_particles}"
        )));
    }
    let dim = priors[0].borrow().dim();
    let mut components = Vec::with_capacity(priors.len());
    let mut factors = Vec::with_capacity(priors.len());
    for p in priors {
        let p = p.borrow();
        check_dim("prior dimension", dim, p.dim())?;
        components.push(LogDensity::new(p)?);
        factors.push(p.covariance()?.clone().cholesky().ok_or(Error::NotPositiveDefinite("prior covariance"))?.l());
    }
    let k = priors.len();
    let log_k = (k as f64).ln();

    let n_chunks = n_particles.div_ceil(CHUNK);
    let chunks: Vec<(Vec<DVector<f64>>, Vec<f64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64 + 1);
            let len = CHUNK.min(n_particles - c * CHUNK);
            let mut thetas = Vec::with_capacity(len);
            let mut logw = Vec::with_capacity(len);
            let mut comp_logs = vec![0.0; k];
            for _ in 0..len {
                let j = rng.random_range(0..k);
                let eps = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                let theta = components[j].mean.clone() + &factors[j] * eps;
                for (slot, comp) in comp_logs.iter_mut().zip(&components) {
                    *slot = comp.eval(&theta);
                }
                let proposal = log_sum_exp(&comp_logs) - log_k;
                let target: f64 = comp_logs.iter().zip(weights).map(|(l, w)| w * l).sum::<f64>()
                    + log_likelihood(&theta);
                logw.push(target - proposal);
                thetas.push(theta);
            }
            (thetas, logw)
        })
        .collect();
    let (thetas, logw): (Vec<_>, Vec<_>) = chunks.into_iter().unzip();
    let thetas: Vec<DVector<f64>> = thetas.into_iter().flatten().collect();
    let logw: Vec<f64> = logw.into_iter().flatten().collect();

    let norm = log_sum_exp(&logw);
    if !norm.is_finite() {
        return Err(Error::WeightDegeneracy {
            ess: 0.0,
            threshold: MIN_ESS,
        });
    }
    let w: Vec<f64> = logw.iter().map(|l| (l - norm).exp()).collect();
    let ess = 1.0 / w.iter().map(|x| x * x).sum::<f64>();
    if !(ess >= MIN_ESS) {
        return Err(Error::WeightDegeneracy {
            ess,
            threshold: MIN_ESS,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = stratified_resample(&w, n_particles, &mut rng);
    let particles = DMatrix::from_fn(n_particles, dim, |r, c| thetas[picks[r]][c]);
    let fitted = moment_fit(&particles)?;
    Ok(ParticleFusion {
        particles,
        fitted,
        ess,
    })
}

/// [`particle_fusion_posterior_with`] for a linear-Gaussian likelihood.
pub fn particle_fusion_posterior<B: Borrow<GaussianBelief> + Sync>(
    priors: &[B],
    weights: &[f64],
    model: &LinearGaussianModel,
    z: &DVector<f64>,
    n_particles: usize,
    seed: u64,
) -> Result<ParticleFusion> {
    check_dim("observation", model.obs_dim(), z.len())?;
    particle_fusion_posterior_with(priors, weights, |t| model.log_likelihood(z, t), n_particles, seed)
}

/// One uniform draw per stratum [i/n, (i+1)/n).
pub fn stratified_resample<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(n);
    let mut cum = weights.first().copied().unwrap_or(0.0) / total;
    let mut j = 0;
    for i in 0..n {
        let u = (i as f64 + rng.random::<f64>()) / n as f64;
        while u > cum && j + 1 < weights.len() {
            j += 1;
            cum += weights[j] / total;
        }
        out.push(j);
    }
    out
}

/// Gaussian with the sample mean and unbiased sample covariance of the rows.
pub fn moment_fit(samples: &DMatrix<f64>) -> Result<GaussianBelief> {
    let n = samples.nrows();
    if n < 2 {
        return Err(Error::Empty("moment fit needs at least two samples"));
    }
    let mean = samples.row_mean().transpose();
    let centered = DMatrix::from_fn(n, samples.ncols(), |r, c| samples[(r, c)] - mean[c]);
    let cov = symmetrized(centered.transpose() * &centered / (n as f64 - 1.0));
    GaussianBelief::from_covariance(mean, cov)
}

/// Default absolute tolerance of [`quadrature_probit_moments`].
pub const QUADRATURE_TOL: f64 = 1e-12;
const Z_LIMIT: f64 = 12.0;

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// ∫ g(u) N(u; mean, var) du by adaptive Simpson on the standardized
/// variable over [−12, 12]. The interval is pre-split so that narrow
/// features are never skipped by the first coarse estimate.
pub fn gaussian_expectation(g: impl Fn(f64) -> f64, mean: f64, var: f64, tol: f64) -> f64 {
    if var <= 0.0 {
        return g(mean);
    }
    let sd = var.sqrt();
    let f = |z: f64| g(mean + sd * z) * std_normal_pdf(z);
    let pieces = 24;
    let width = 2.0 * Z_LIMIT / pieces as f64;
    (0..pieces)
        .map(|i| {
            let a = -Z_LIMIT + i as f64 * width;
            let b = a + width;
            let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
            let whole = simpson(a, b, fa, fm, fb);
            adaptive(&f, a, b, fa, fm, fb, whole, tol / pieces as f64, 40)
        })
        .sum()
}

/// (E[Γ(ξu)], E[ξφ(ξu)]) for u ~ N(mean_u, var_u).
pub fn quadrature_probit_moments(mean_u: f64, var_u: f64, xi: f64) -> (f64, f64) {
    quadrature_probit_moments_with_tol(mean_u, var_u, xi, QUADRATURE_TOL)
}

pub fn quadrature_probit_moments_with_tol(mean_u: f64, var_u: f64, xi: f64, tol: f64) -> (f64, f64) {
    let first = gaussian_expectation(|u| probit(xi * u), mean_u, var_u, tol);
    let second = gaussian_expectation(|u| xi * std_normal_pdf(xi * u), mean_u, var_u, tol);
    (first, second)
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    /// E[(y − σ(Φᵀθ))] Φ.
    pub gradient: DVector<f64>,
    /// The scalar E[y − σ(Φᵀθ)] multiplying Φ.
    pub coefficient: f64,
    /// Standard error of `coefficient`; entry k of the gradient has
    /// standard error `std_error · |Φ_k|`.
    pub std_error: f64,
}

fn projected_samples(mean: f64, var: f64, n: usize, seed: u64) -> impl Iterator<Item = f64> {
    let sd = var.max(0.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(move |_| mean + sd * rng.sample::<f64, _>(StandardNormal))
}

fn mean_and_se(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for v in values {
        n += 1.0;
        let d = v - mean;
        mean += d / n;
        m2 += d * (v - mean);
    }
    (mean, (m2 / (n - 1.0) / n).sqrt())
}

/// E_q[(y − σ(Φᵀθ))Φ] under the logistic sigmoid. Only the scalar Φᵀθ
/// enters, so it is sampled directly from N(Φᵀμ, ΦᵀΣΦ).
pub fn mc_expected_gradient<B: GaussianMoments + ?Sized>(
    belief: &B,
    phi: &DVector<f64>,
    y: u8,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_samples < 10_000 {
        return Err(Error::InvalidArgument(format!(
            "n_samples must be at least 10000, got {n_samples}"
        )));
    }
    check_dim("feature vector", belief.dim(), phi.len())?;
    let m = phi.dot(belief.mean());
    let v = belief.projected_variance(phi)?;
    let yf = f64::from(y);
    let (coefficient, std_error) =
        mean_and_se(projected_samples(m, v, n_samples, seed).map(|u| yf - sigmoid(u)));
    Ok(McEstimate {
        gradient: phi * coefficient,
        coefficient,
        std_error,
    })
}

/// (E[σ(u)], E[σ(u)(1 − σ(u))]) for u ~ N(mean_u, var_u), each with its
/// standard error.
pub fn mc_sigmoid_moments(mean_u: f64, var_u: f64, n_samples: usize, seed: u64) -> ((f64, f64), (f64, f64)) {
    let draws: Vec<f64> = projected_samples(mean_u, var_u, n_samples, seed).map(sigmoid).collect();
    (
        mean_and_se(draws.iter().copied()),
        mean_and_se(draws.iter().map(|s| s * (1.0 - s))),
    )
}

/// The four-agent fusion example: unit-covariance priors centered at
/// (1, 0), (0, 1), (−1, 0), (0, −1), H = I, Ω^z = I, z = (1, 1).
pub fn unit_circle_example() -> (Vec<GaussianBelief>, Vec<f64>, LinearGaussianModel, DVector<f64>) {
    let priors = (0..4)
        .map(|k| {
            let a = k as f64 * PI / 2.0;
            let mean = DVector::from_vec(vec![a.cos(), a.sin()]);
            GaussianBelief::isotropic(mean, 1.0).expect("unit prior")
        })
        .collect();
    let model = LinearGaussianModel::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2))
        .expect("identity model");
    (priors, vec![0.25; 4], model, DVector::from_vec(vec![1.0, 1.0]))
}
