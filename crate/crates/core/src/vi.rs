//! Gaussian variational updates for kernel classification and regression.
//!
//! Every step has the same shape: fuse the neighbour beliefs into the
//! geometric average q^g (see [`crate::belief::geometric_fuse`]), then move
//! the information matrix by the negated expected log-likelihood Hessian and
//! the mean by the expected gradient, both taken under q^g.
//!
//! For the logistic likelihood σ(Φᵀθ)^y (1 − σ(Φᵀθ))^{1−y} the expectations
//! use the probit surrogate σ(u) ≈ Γ(ξu). With m = Φᵀμ and v = ΦᵀΣΦ the
//! surrogate gives closed forms
//!
//! ```text
//! E[σ(Φᵀθ)]       ≈ Γ(ξ m / √β),                      β = 1 + ξ² v
//! E[∇² log p]     ≈ −γ ΦΦᵀ,  γ = √(ξ²/(2πβ)) · exp(−ξ² m² / (2β))
//! ```
//!
//! so the information update is rank one and the covariance follows from
//! [`crate::belief::rank1_inverse_update`] without any dense inversion.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::belief::{
    geometric_fuse, geometric_fuse_diag, rank1_inverse_update, symmetrized, DiagGaussianBelief,
    GaussianBelief, GaussianMoments,
};
use crate::error::{check_dim, Error, Result};
use crate::features::KernelModel;

/// Probit scaling that best matches the logistic sigmoid.
pub const DEFAULT_XI: f64 = 0.61;

/// Standard normal CDF Γ.
pub fn probit(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density φ(x | 0, 1).
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Which inverse information scales the mean innovation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanUpdateMatrix {
    /// Posterior Ω_{t+1}⁻¹ (or D_{t+1}⁻¹), the gradient-step form.
    #[default]
    PosteriorInformation,
    /// Fused prior (Ω^g)⁻¹ (or (D^g)⁻¹).
    FusedPriorInformation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpdateOptions {
    pub xi: f64,
    pub mean_update_matrix: MeanUpdateMatrix,
    /// Multiplies the log-likelihood; n reproduces the n-weighted
    /// likelihood of conjugate distributed filters.
    pub likelihood_weight: f64,
}

impl Default for UpdateOptions {
    fn default() -> Self {
        Self {
            xi: DEFAULT_XI,
            mean_update_matrix: MeanUpdateMatrix::PosteriorInformation,
            likelihood_weight: 1.0,
        }
    }
}

impl UpdateOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return Err(Error::InvalidArgument(format!("xi must be positive, got {}", self.xi)));
        }
        if !(self.likelihood_weight > 0.0 && self.likelihood_weight.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "likelihood_weight must be positive, got {}",
                self.likelihood_weight
            )));
        }
        Ok(())
    }
}

/// z = (x, y) with binary label y.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationObservation {
    pub x: Vec<f64>,
    pub y: u8,
}

impl ClassificationObservation {
    pub fn new(x: Vec<f64>, y: u8) -> Result<Self> {
        if y > 1 {
            return Err(Error::InvalidArgument(format!("label must be 0 or 1, got {y}")));
        }
        Ok(Self { x, y })
    }
}

/// Where the (l+1)×m regression design matrix comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum RegressionInput {
    /// Featurized by the kernel model; every output column shares Φ_x.
    Point(Vec<f64>),
    /// An explicit design matrix Φ with one column per output.
    Features(DMatrix<f64>),
}

/// Linear-Gaussian observation y ~ N(Φᵀθ, S⁻¹).
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionObservation {
    pub input: RegressionInput,
    pub y: DVector<f64>,
    pub precision: DMatrix<f64>,
}

impl RegressionObservation {
    pub fn new(input: RegressionInput, y: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        let m = y.len();
        if m == 0 {
            return Err(Error::Empty("regression target"));
        }
        check_dim("regression precision rows", m, precision.nrows())?;
        check_dim("regression precision cols", m, precision.ncols())?;
        if let RegressionInput::Features(f) = &input {
            check_dim("regression design columns", m, f.ncols())?;
        }
        Ok(Self {
            input,
            y,
            precision,
        })
    }

    fn design(&self, model: &KernelModel) -> Result<DMatrix<f64>> {
        match &self.input {
            RegressionInput::Point(x) => {
                let phi = model.featurize(x)?;
                let m = self.y.len();
                Ok(DMatrix::from_fn(phi.len(), m, |r, _| phi[r]))
            }
            RegressionInput::Features(f) => Ok(f.clone()),
        }
    }
}

/// Scalar summary of a belief along Φ: m = Φᵀμ, v = ΦᵀΣΦ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub mean: f64,
    pub variance: f64,
}

impl Projection {
    pub fn of<B: GaussianMoments + ?Sized>(belief: &B, phi: &DVector<f64>) -> Result<Self> {
        check_dim("feature vector", belief.dim(), phi.len())?;
        Ok(Self {
            mean: phi.dot(belief.mean()),
            variance: belief.projected_variance(phi)?,
        })
    }

    fn beta(&self, xi: f64) -> f64 {
        1.0 + xi * xi * self.variance
    }

    /// Γ(ξm/√β).
    pub fn expected_probit(&self, xi: f64) -> f64 {
        probit(xi * self.mean / self.beta(xi).sqrt())
    }

    /// γ = √(ξ²/(2πβ)) exp(−ξ²m²/(2β)); underflows to 0 for large |m|.
    pub fn hessian_scale(&self, xi: f64) -> f64 {
        let beta = self.beta(xi);
        (xi * xi / (2.0 * PI * beta)).sqrt() * (-0.5 * xi * xi * self.mean * self.mean / beta).exp()
    }
}

/// E_q[Γ(ξΦᵀθ)], the approximate predictive probability of label 1.
pub fn expected_sigmoid<B: GaussianMoments + ?Sized>(
    belief: &B,
    phi: &DVector<f64>,
    xi: f64,
) -> Result<f64> {
    Ok(Projection::of(belief, phi)?.expected_probit(xi))
}

/// E_q[∇_θ log p(z|θ)] ≈ (y − Γ(ξΦᵀμ/√β)) Φ.
pub fn expected_loglik_gradient<B: GaussianMoments + ?Sized>(
    belief: &B,
    phi: &DVector<f64>,
    y: u8,
    xi: f64,
) -> Result<DVector<f64>> {
    let p = expected_sigmoid(belief, phi, xi)?;
    Ok(phi * (f64::from(y) - p))
}

/// γ ≥ 0 such that E_q[∇²_θ log p(z|θ)] ≈ −γ ΦΦᵀ.
pub fn hessian_scale<B: GaussianMoments + ?Sized>(
    belief: &B,
    phi: &DVector<f64>,
    xi: f64,
) -> Result<f64> {
    Ok(Projection::of(belief, phi)?.hessian_scale(xi))
}

/// Observation update for a classification label, applied to an already
/// fused prior q^g.
pub fn classify_update(
    fused: &GaussianBelief,
    phi: &DVector<f64>,
    y: u8,
    opts: &UpdateOptions,
) -> Result<GaussianBelief> {
    check_dim("feature vector", fused.dim(), phi.len())?;
    let cov = fused.covariance()?;
    let prior_dir = cov * phi;
    let proj = Projection {
        mean: phi.dot(fused.mean()),
        variance: phi.dot(&prior_dir),
    };
    let weight = opts.likelihood_weight;
    let gamma = weight * proj.hessian_scale(opts.xi);
    let innovation = weight * (f64::from(y) - proj.expected_probit(opts.xi));

    let mut information = fused.information().clone();
    information.ger(gamma, phi, phi, 1.0);
    let covariance = rank1_inverse_update(cov, phi, gamma)?;
    let direction = match opts.mean_update_matrix {
        MeanUpdateMatrix::PosteriorInformation => &covariance * phi,
        MeanUpdateMatrix::FusedPriorInformation => prior_dir,
    };
    let mean = fused.mean() + direction * innovation;
    Ok(GaussianBelief::from_parts(mean, information, Some(covariance)))
}

/// One distributed classification step: fuse `beliefs` with `weights`, then
/// absorb the observation.
pub fn dgvi_classify_step<B: std::borrow::Borrow<GaussianBelief>>(
    beliefs: &[B],
    weights: &[f64],
    obs: &ClassificationObservation,
    model: &KernelModel,
    opts: &UpdateOptions,
) -> Result<GaussianBelief> {
    opts.validate()?;
    let fused = geometric_fuse(beliefs, weights)?;
    check_dim("belief vs kernel", model.feature_dim(), fused.dim())?;
    let phi = model.featurize(&obs.x)?;
    classify_update(&fused, &phi, obs.y, opts)
}

/// Single-agent update: the distributed step with weights `[1]`.
pub fn gvi_classify_step(
    belief: &GaussianBelief,
    obs: &ClassificationObservation,
    model: &KernelModel,
    opts: &UpdateOptions,
) -> Result<GaussianBelief> {
    dgvi_classify_step(&[belief], &[1.0], obs, model, opts)
}

/// Diagonal-information counterpart of [`classify_update`]:
/// D ← D^g + γ diag(ΦΦᵀ), μ ← μ^g + (y − Γ(·)) M⁻¹Φ.
pub fn diag_classify_update(
    fused: &DiagGaussianBelief,
    phi: &DVector<f64>,
    y: u8,
    opts: &UpdateOptions,
) -> Result<DiagGaussianBelief> {
    let proj = Projection::of(fused, phi)?;
    let weight = opts.likelihood_weight;
    let gamma = weight * proj.hessian_scale(opts.xi);
    let innovation = weight * (f64::from(y) - proj.expected_probit(opts.xi));

    let prior = fused.info_diag();
    let info_diag = DVector::from_fn(prior.len(), |k, _| prior[k] + gamma * phi[k] * phi[k]);
    let scale = match opts.mean_update_matrix {
        MeanUpdateMatrix::PosteriorInformation => &info_diag,
        MeanUpdateMatrix::FusedPriorInformation => prior,
    };
    let mean = DVector::from_fn(prior.len(), |k, _| {
        fused.mean()[k] + innovation * phi[k] / scale[k]
    });
    Ok(DiagGaussianBelief::from_parts(mean, info_diag))
}

pub fn diag_dgvi_classify_step<B: std::borrow::Borrow<DiagGaussianBelief>>(
    beliefs: &[B],
    weights: &[f64],
    obs: &ClassificationObservation,
    model: &KernelModel,
    opts: &UpdateOptions,
) -> Result<DiagGaussianBelief> {
    opts.validate()?;
    let fused = geometric_fuse_diag(beliefs, weights)?;
    check_dim("belief vs kernel", model.feature_dim(), fused.dim())?;
    let phi = model.featurize(&obs.x)?;
    diag_classify_update(&fused, &phi, obs.y, opts)
}

/// Linear-Gaussian observation update on a fused prior. The covariance is
/// refreshed through the m×m Woodbury form
/// Σ^g − Σ^gΦ (S⁻¹ + ΦᵀΣ^gΦ)⁻¹ ΦᵀΣ^g.
pub fn regression_update(
    fused: &GaussianBelief,
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    precision: &DMatrix<f64>,
    opts: &UpdateOptions,
) -> Result<GaussianBelief> {
    check_dim("regression design rows", fused.dim(), design.nrows())?;
    check_dim("regression design columns", y.len(), design.ncols())?;
    check_dim("regression precision", y.len(), precision.nrows())?;
    check_dim("regression precision", y.len(), precision.ncols())?;
    let s = precision * opts.likelihood_weight;
    let asym = (&s - s.transpose()).amax();
    if asym > 1e-12 * s.amax().max(f64::MIN_POSITIVE) {
        return Err(Error::NotPositiveDefinite("regression precision is not symmetric"));
    }
    let s_chol =
        Cholesky::new(s.clone()).ok_or(Error::NotPositiveDefinite("regression precision"))?;

    let cov = fused.covariance()?;
    let gain = cov * design;
    let inner = s_chol.inverse() + design.transpose() * &gain;
    let inner_chol =
        Cholesky::new(symmetrized(inner)).ok_or(Error::NotPositiveDefinite("innovation"))?;
    let covariance = symmetrized(cov - &gain * inner_chol.solve(&gain.transpose()));

    let ds = design * &s;
    let information = symmetrized(fused.information() + &ds * design.transpose());
    let residual = y - design.transpose() * fused.mean();
    // ΦSᵀy − ΦSΦᵀμ^g, with S symmetric
    let rhs = &ds * residual;
    let step = match opts.mean_update_matrix {
        MeanUpdateMatrix::PosteriorInformation => &covariance * rhs,
        MeanUpdateMatrix::FusedPriorInformation => cov * rhs,
    };
    let mean = fused.mean() + step;
    Ok(GaussianBelief::from_parts(mean, information, Some(covariance)))
}

/// One distributed regression step.
pub fn dgvi_regression_step<B: std::borrow::Borrow<GaussianBelief>>(
    beliefs: &[B],
    weights: &[f64],
    obs: &RegressionObservation,
    model: &KernelModel,
    opts: &UpdateOptions,
) -> Result<GaussianBelief> {
    opts.validate()?;
    let fused = geometric_fuse(beliefs, weights)?;
    let design = obs.design(model)?;
    regression_update(&fused, &design, &obs.y, &obs.precision, opts)
}

/// Predictive probabilities E_q[Γ(ξΦ_xᵀθ)] for a batch of inputs.
pub fn predict_batch<B, P>(belief: &B, model: &KernelModel, points: &[P], xi: f64) -> Result<Vec<f64>>
where
    B: GaussianMoments + ?Sized,
    P: AsRef<[f64]>,
{
    check_dim("belief vs kernel", model.feature_dim(), belief.dim())?;
    points
        .iter()
        .map(|x| expected_sigmoid(belief, &model.featurize(x.as_ref())?, xi))
        .collect()
}
