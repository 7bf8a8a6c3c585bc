//! Information-form Gaussian beliefs.
//!
//! A belief over the parameter vector θ is kept as a mean together with an
//! information (precision) matrix Ω. Fusion of neighbour beliefs, the
//! observation updates in [`crate::vi`] and the messages exchanged between
//! agents are all additive in (Ω, Ωμ), so the covariance Ω⁻¹ is only a
//! cache, filled on first use from a Cholesky factorization or carried
//! forward by rank-1 updates.

use std::borrow::Borrow;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Relative tolerance for the symmetry check on information matrices.
const SYMMETRY_TOL: f64 = 1e-12;
/// Fusion weights must sum to one within this tolerance.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Gaussian belief N(μ, Ω⁻¹) in information form.
#[derive(Debug, Clone)]
pub struct GaussianBelief {
    mean: DVector<f64>,
    information: DMatrix<f64>,
    covariance: OnceLock<DMatrix<f64>>,
}

impl GaussianBelief {
    /// Builds a belief after checking shape, symmetry and positive
    /// definiteness of `information`.
    pub fn new(mean: DVector<f64>, information: DMatrix<f64>) -> Result<Self> {
        check_dim("belief information rows", mean.len(), information.nrows())?;
        check_dim("belief information cols", mean.len(), information.ncols())?;
        if mean.is_empty() {
            return Err(Error::Empty("belief mean"));
        }
        if !mean.iter().chain(information.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("belief has non-finite entries".into()));
        }
        check_symmetric(&information)?;
        if Cholesky::new(information.clone()).is_none() {
            return Err(Error::NotPositiveDefinite("belief information"));
        }
        Ok(Self::from_parts(mean, information, None))
    }

    /// N(μ, λ⁻¹ I).
    pub fn isotropic(mean: DVector<f64>, precision: f64) -> Result<Self> {
        if !(precision > 0.0 && precision.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "prior precision must be positive, got {precision}"
            )));
        }
        let dim = mean.len();
        if dim == 0 {
            return Err(Error::Empty("belief mean"));
        }
        let information = DMatrix::from_diagonal_element(dim, dim, precision);
        let covariance = DMatrix::from_diagonal_element(dim, dim, 1.0 / precision);
        Ok(Self::from_parts(mean, information, Some(covariance)))
    }

    /// Builds a belief from a mean and covariance matrix.
    pub fn from_covariance(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        check_dim("belief covariance rows", mean.len(), covariance.nrows())?;
        check_dim("belief covariance cols", mean.len(), covariance.ncols())?;
        check_symmetric(&covariance)?;
        let chol =
            Cholesky::new(covariance.clone()).ok_or(Error::NotPositiveDefinite("covariance"))?;
        let information = symmetrized(chol.inverse());
        Ok(Self::from_parts(mean, information, Some(covariance)))
    }

    /// Assembles a belief whose information matrix is positive definite by
    /// construction. `covariance`, when given, must be its inverse.
    pub(crate) fn from_parts(
        mean: DVector<f64>,
        information: DMatrix<f64>,
        covariance: Option<DMatrix<f64>>,
    ) -> Self {
        let cell = OnceLock::new();
        if let Some(cov) = covariance {
            let _ = cell.set(cov);
        }
        Self {
            mean,
            information,
            covariance: cell,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn information(&self) -> &DMatrix<f64> {
        &self.information
    }

    /// The information-weighted mean Ωμ.
    pub fn information_vector(&self) -> DVector<f64> {
        &self.information * &self.mean
    }

    /// Ω⁻¹, computed on first access.
    pub fn covariance(&self) -> Result<&DMatrix<f64>> {
        if let Some(cov) = self.covariance.get() {
            return Ok(cov);
        }
        let chol = self.cholesky()?;
        Ok(self.covariance.get_or_init(|| symmetrized(chol.inverse())))
    }

    pub fn has_cached_covariance(&self) -> bool {
        self.covariance.get().is_some()
    }

    /// Cholesky factor of the information matrix.
    pub fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.information.clone())
            .ok_or(Error::NotPositiveDefinite("belief information"))
    }

    /// Re-runs the full invariant check: finite entries, symmetry and a
    /// successful Cholesky factorization.
    pub fn validate(&self) -> Result<()> {
        if !self.mean.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("belief mean is not finite".into()));
        }
        check_symmetric(&self.information)?;
        self.cholesky().map(|_| ())
    }

    pub fn to_snapshot(&self) -> BeliefSnapshot {
        BeliefSnapshot {
            dim: self.dim(),
            mean: self.mean.iter().copied().collect(),
            // nalgebra stores column-major; a symmetric matrix reads the same
            // either way but the transpose keeps the file honestly row-major.
            information: Some(self.information.transpose().iter().copied().collect()),
            info_diag: None,
        }
    }
}

/// Gaussian belief with diagonal information matrix D = diag(Δ).
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussianBelief {
    mean: DVector<f64>,
    info_diag: DVector<f64>,
}

impl DiagGaussianBelief {
    pub fn new(mean: DVector<f64>, info_diag: DVector<f64>) -> Result<Self> {
        check_dim("diagonal belief information", mean.len(), info_diag.len())?;
        if mean.is_empty() {
            return Err(Error::Empty("belief mean"));
        }
        if !mean.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("belief mean is not finite".into()));
        }
        if let Some(bad) = info_diag.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "diagonal information entries must be positive, found {bad}"
            )));
        }
        Ok(Self { mean, info_diag })
    }

    pub fn isotropic(mean: DVector<f64>, precision: f64) -> Result<Self> {
        let dim = mean.len();
        Self::new(mean, DVector::from_element(dim, precision))
    }

    pub(crate) fn from_parts(mean: DVector<f64>, info_diag: DVector<f64>) -> Self {
        Self { mean, info_diag }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn info_diag(&self) -> &DVector<f64> {
        &self.info_diag
    }

    /// Elementwise Δ∘μ.
    pub fn information_vector(&self) -> DVector<f64> {
        self.info_diag.component_mul(&self.mean)
    }

    pub fn variances(&self) -> DVector<f64> {
        self.info_diag.map(|d| 1.0 / d)
    }

    pub fn to_snapshot(&self) -> BeliefSnapshot {
        BeliefSnapshot {
            dim: self.dim(),
            mean: self.mean.iter().copied().collect(),
            information: None,
            info_diag: Some(self.info_diag.iter().copied().collect()),
        }
    }
}

/// Read access shared by both belief representations: the mean and the
/// variance of a linear projection φᵀθ.
pub trait GaussianMoments {
    fn mean(&self) -> &DVector<f64>;

    /// Var[φᵀθ].
    fn projected_variance(&self, phi: &DVector<f64>) -> Result<f64>;

    fn dim(&self) -> usize {
        self.mean().len()
    }
}

impl GaussianMoments for GaussianBelief {
    fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    fn projected_variance(&self, phi: &DVector<f64>) -> Result<f64> {
        check_dim("projection vector", self.dim(), phi.len())?;
        let cov = self.covariance()?;
        Ok((cov * phi).dot(phi))
    }
}

impl GaussianMoments for DiagGaussianBelief {
    fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    fn projected_variance(&self, phi: &DVector<f64>) -> Result<f64> {
        check_dim("projection vector", self.dim(), phi.len())?;
        Ok(phi
            .iter()
            .zip(self.info_diag.iter())
            .map(|(p, d)| p * p / d)
            .sum())
    }
}

impl GaussianMoments for Belief {
    fn mean(&self) -> &DVector<f64> {
        Belief::mean(self)
    }

    fn projected_variance(&self, phi: &DVector<f64>) -> Result<f64> {
        match self {
            Belief::Full(b) => b.projected_variance(phi),
            Belief::Diag(b) => b.projected_variance(phi),
        }
    }
}

/// Either representation, as stored in snapshot files and agent state.
#[derive(Debug, Clone)]
pub enum Belief {
    Full(GaussianBelief),
    Diag(DiagGaussianBelief),
}

impl Belief {
    pub fn dim(&self) -> usize {
        match self {
            Belief::Full(b) => b.dim(),
            Belief::Diag(b) => b.dim(),
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        match self {
            Belief::Full(b) => b.mean(),
            Belief::Diag(b) => b.mean(),
        }
    }

    /// Diagonal of the covariance.
    pub fn marginal_variances(&self) -> Result<DVector<f64>> {
        match self {
            Belief::Full(b) => Ok(b.covariance()?.diagonal()),
            Belief::Diag(b) => Ok(b.variances()),
        }
    }

    pub fn to_snapshot(&self) -> BeliefSnapshot {
        match self {
            Belief::Full(b) => b.to_snapshot(),
            Belief::Diag(b) => b.to_snapshot(),
        }
    }
}

impl From<GaussianBelief> for Belief {
    fn from(b: GaussianBelief) -> Self {
        Belief::Full(b)
    }
}

impl From<DiagGaussianBelief> for Belief {
    fn from(b: DiagGaussianBelief) -> Self {
        Belief::Diag(b)
    }
}

/// On-disk belief: `{"dim", "mean", "information"}` with a row-major
/// information matrix, or `{"dim", "mean", "info_diag"}` for the diagonal
/// variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefSnapshot {
    pub dim: usize,
    pub mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub information: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info_diag: Option<Vec<f64>>,
}

impl BeliefSnapshot {
    pub fn into_belief(self) -> Result<Belief> {
        check_dim("snapshot mean", self.dim, self.mean.len())?;
        let mean = DVector::from_vec(self.mean);
        match (self.information, self.info_diag) {
            (Some(info), None) => {
                check_dim("snapshot information", self.dim * self.dim, info.len())?;
                let information = DMatrix::from_row_slice(self.dim, self.dim, &info);
                Ok(Belief::Full(GaussianBelief::new(mean, information)?))
            }
            (None, Some(diag)) => Ok(Belief::Diag(DiagGaussianBelief::new(
                mean,
                DVector::from_vec(diag),
            )?)),
            _ => Err(Error::InvalidArgument(
                "snapshot needs exactly one of `information` or `info_diag`".into(),
            )),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::InvalidArgument(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// (M + Mᵀ)/2.
pub fn symmetrized(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    m
}

pub(crate) fn check_weights(weights: &[f64], count: usize) -> Result<()> {
    if count == 0 {
        return Err(Error::Empty("fusion inputs"));
    }
    check_dim("fusion weights", count, weights.len())?;
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "fusion weights must be non-negative, found {w}"
        )));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::WeightSum { sum });
    }
    Ok(())
}

/// Index of the only positive weight, if there is exactly one.
fn sole_weight(weights: &[f64]) -> Option<usize> {
    let mut positive = weights.iter().enumerate().filter(|(_, w)| **w > 0.0);
    let first = positive.next()?.0;
    positive.next().is_none().then_some(first)
}

/// Fuses beliefs given in information form, (Ω_j, Ω_jμ_j):
/// Ω^g = Σ w_j Ω_j and Ω^g μ^g = Σ w_j Ω_j μ_j.
pub fn fuse_information<M, V>(parts: &[(M, V)], weights: &[f64]) -> Result<GaussianBelief>
where
    M: Borrow<DMatrix<f64>>,
    V: Borrow<DVector<f64>>,
{
    check_weights(weights, parts.len())?;
    let dim = parts[0].1.borrow().len();
    let mut information = DMatrix::zeros(dim, dim);
    let mut info_vec = DVector::zeros(dim);
    for ((omega, eta), &w) in parts.iter().zip(weights) {
        let (omega, eta) = (omega.borrow(), eta.borrow());
        check_dim("fused information", dim, omega.nrows())?;
        check_dim("fused information", dim, omega.ncols())?;
        check_dim("fused information vector", dim, eta.len())?;
        if w == 0.0 {
            continue;
        }
        information.zip_apply(omega, |a, b| *a += w * b);
        info_vec.axpy(w, eta, 1.0);
    }
    let chol = Cholesky::new(information.clone())
        .ok_or(Error::NotPositiveDefinite("fused information"))?;
    let mean = chol.solve(&info_vec);
    let covariance = symmetrized(chol.inverse());
    Ok(GaussianBelief::from_parts(mean, information, Some(covariance)))
}

/// Weighted geometric average Π_j q_j^{w_j} of Gaussian beliefs.
///
/// When a single weight carries all the mass the corresponding belief is
/// returned unchanged (including its covariance cache).
pub fn geometric_fuse<B: Borrow<GaussianBelief>>(
    beliefs: &[B],
    weights: &[f64],
) -> Result<GaussianBelief> {
    check_weights(weights, beliefs.len())?;
    let dim = beliefs[0].borrow().dim();
    for b in beliefs {
        check_dim("fused belief", dim, b.borrow().dim())?;
    }
    if let Some(k) = sole_weight(weights) {
        return Ok(beliefs[k].borrow().clone());
    }
    let parts: Vec<(&DMatrix<f64>, DVector<f64>)> = beliefs
        .iter()
        .map(|b| {
            let b = b.borrow();
            (b.information(), b.information_vector())
        })
        .collect();
    fuse_information(&parts, weights)
}

/// Diagonal counterpart of [`fuse_information`]; the solve is elementwise.
pub fn fuse_information_diag<V, W>(parts: &[(V, W)], weights: &[f64]) -> Result<DiagGaussianBelief>
where
    V: Borrow<DVector<f64>>,
    W: Borrow<DVector<f64>>,
{
    check_weights(weights, parts.len())?;
    let dim = parts[0].0.borrow().len();
    let mut diag = DVector::zeros(dim);
    let mut info_vec = DVector::zeros(dim);
    for ((d, eta), &w) in parts.iter().zip(weights) {
        let (d, eta) = (d.borrow(), eta.borrow());
        check_dim("fused diagonal information", dim, d.len())?;
        check_dim("fused information vector", dim, eta.len())?;
        if w == 0.0 {
            continue;
        }
        diag.axpy(w, d, 1.0);
        info_vec.axpy(w, eta, 1.0);
    }
    if !diag.iter().all(|d| *d > 0.0 && d.is_finite()) {
        return Err(Error::NotPositiveDefinite("fused diagonal information"));
    }
    let mean = info_vec.component_div(&diag);
    Ok(DiagGaussianBelief::from_parts(mean, diag))
}

/// Weighted geometric average of diagonal Gaussian beliefs.
pub fn geometric_fuse_diag<B: Borrow<DiagGaussianBelief>>(
    beliefs: &[B],
    weights: &[f64],
) -> Result<DiagGaussianBelief> {
    check_weights(weights, beliefs.len())?;
    let dim = beliefs[0].borrow().dim();
    for b in beliefs {
        check_dim("fused belief", dim, b.borrow().dim())?;
    }
    if let Some(k) = sole_weight(weights) {
        return Ok(beliefs[k].borrow().clone());
    }
    let parts: Vec<(&DVector<f64>, DVector<f64>)> = beliefs
        .iter()
        .map(|b| {
            let b = b.borrow();
            (b.info_diag(), b.information_vector())
        })
        .collect();
    fuse_information_diag(&parts, weights)
}

/// (Σ⁻¹ + γφφᵀ)⁻¹ via the matrix inversion lemma:
/// Σ − (γ/c) Σφφᵀ Σ with c = 1 + γ φᵀΣφ. The result is re-symmetrized.
pub fn rank1_inverse_update(
    covariance: &DMatrix<f64>,
    phi: &DVector<f64>,
    gamma: f64,
) -> Result<DMatrix<f64>> {
    check_dim("rank-1 update", covariance.nrows(), phi.len())?;
    check_dim("rank-1 update", covariance.ncols(), phi.len())?;
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "rank-1 update scale must be non-negative, got {gamma}"
        )));
    }
    if gamma == 0.0 {
        return Ok(covariance.clone());
    }
    let s = covariance * phi;
    let c = 1.0 + gamma * phi.dot(&s);
    if !(c > 0.0) {
        return Err(Error::NotPositiveDefinite("covariance in rank-1 update"));
    }
    let mut out = covariance.clone();
    out.ger(-gamma / c, &s, &s, 1.0);
    Ok(symmetrized(out))
}

/// KL[p ‖ q] between two Gaussian beliefs.
pub fn kl_gaussian(p: &GaussianBelief, q: &GaussianBelief) -> Result<f64> {
    check_dim("kl divergence", p.dim(), q.dim())?;
    let chol_p = p.cholesky()?;
    let chol_q = q.cholesky()?;
    let k = p.dim() as f64;
    // tr(Ω_q Ω_p⁻¹)
    let trace = chol_p.solve(q.information()).trace();
    let diff = q.mean() - p.mean();
    let quad = (q.information() * &diff).dot(&diff);
    let log_det = |c: &Cholesky<f64, Dyn>| 2.0 * c.l_dirty().diagonal().map(f64::ln).sum();
    let kl = 0.5 * (trace + quad - k + log_det(&chol_p) - log_det(&chol_q));
    Ok(kl.max(0.0))
}

/// Draws `count` samples from the belief, one per row. Deterministic for a
/// fixed seed.
pub fn sample_gaussian(belief: &GaussianBelief, count: usize, seed: u64) -> Result<DMatrix<f64>> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let cov = belief.covariance()?;
    let factor = Cholesky::new(cov.clone())
        .ok_or(Error::NotPositiveDefinite("belief covariance"))?
        .unpack();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = belief.dim();
    let mut out = DMatrix::zeros(count, dim);
    let mut z = DVector::zeros(dim);
    for r in 0..count {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let x = belief.mean() + &factor * &z;
        out.row_mut(r).tr_copy_from(&x);
    }
    Ok(out)
}
