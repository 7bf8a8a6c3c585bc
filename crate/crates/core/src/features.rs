//! RBF feature maps Φ_x = [1, k_1(x), …, k_l(x)] with
//! k_s(x) = γ₁ exp(−γ₂,s ‖x − x⁽ˢ⁾‖²).

use std::path::Path;

use nalgebra::DVector;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledPoint;
use crate::error::{check_dim, Error, Result};

/// Fixed kernel centers shared by every agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelFile", into = "KernelFile")]
pub struct KernelModel {
    centers: Vec<Vec<f64>>,
    scale: f64,
    lengthscales: Vec<f64>,
    input_dim: usize,
}

/// Serialized layout: `{"scale": γ₁, "centers": [[..]], "lengthscales": [..]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct KernelFile {
    scale: f64,
    centers: Vec<Vec<f64>>,
    lengthscales: Vec<f64>,
}

impl TryFrom<KernelFile> for KernelModel {
    type Error = Error;

    fn try_from(f: KernelFile) -> Result<Self> {
        KernelModel::new(f.centers, f.scale, f.lengthscales)
    }
}

impl From<KernelModel> for KernelFile {
    fn from(m: KernelModel) -> Self {
        KernelFile {
            scale: m.scale,
            centers: m.centers,
            lengthscales: m.lengthscales,
        }
    }
}

impl KernelModel {
    pub fn new(centers: Vec<Vec<f64>>, scale: f64, lengthscales: Vec<f64>) -> Result<Self> {
        let first = centers.first().ok_or(Error::Empty("kernel centers"))?;
        let input_dim = first.len();
        if input_dim == 0 {
            return Err(Error::InvalidArgument("kernel centers have zero dimension".into()));
        }
        for c in &centers {
            check_dim("kernel center", input_dim, c.len())?;
            if !c.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidArgument("kernel center is not finite".into()));
            }
        }
        check_dim("kernel lengthscales", centers.len(), lengthscales.len())?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kernel scale must be positive, got {scale}"
            )));
        }
        if let Some(l) = lengthscales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "lengthscales must be positive, got {l}"
            )));
        }
        Ok(Self {
            centers,
            scale,
            lengthscales,
            input_dim,
        })
    }

    /// Every center shares one lengthscale.
    pub fn uniform(centers: Vec<Vec<f64>>, scale: f64, lengthscale: f64) -> Result<Self> {
        let l = centers.len();
        Self::new(centers, scale, vec![lengthscale; l])
    }

    /// Number of kernel centers, l.
    pub fn num_centers(&self) -> usize {
        self.centers.len()
    }

    /// l + 1, counting the constant feature.
    pub fn feature_dim(&self) -> usize {
        self.centers.len() + 1
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    /// Φ_x. The first entry is exactly 1; kernel entries lie in (0, γ₁].
    pub fn featurize(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_dim("featurize input", self.input_dim, x.len())?;
        let mut phi = DVector::zeros(self.feature_dim());
        phi[0] = 1.0;
        for (s, (c, g)) in self.centers.iter().zip(&self.lengthscales).enumerate() {
            let d2: f64 = c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            // Far-away points underflow; keep the entry strictly positive.
            phi[s + 1] = (self.scale * (-g * d2).exp()).max(f64::MIN_POSITIVE);
        }
        Ok(phi)
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

/// How many centers to draw and with which lengthscales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterSelection {
    /// Centers drawn from occupied (label 1) points.
    pub n_occupied: usize,
    /// Centers drawn uniformly from the remaining points of either class.
    pub n_random: usize,
    pub lengthscale_occupied: f64,
    pub lengthscale_free: f64,
    pub scale: f64,
    pub seed: u64,
}

/// Draws kernel centers without replacement: first `n_occupied` from the
/// occupied points, then `n_random` from everything not yet chosen.
/// Occupied-drawn centers get `lengthscale_occupied`, the rest
/// `lengthscale_free`.
pub fn select_centers(points: &[LabeledPoint], sel: &CenterSelection) -> Result<KernelModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(sel.seed);
    let occupied: Vec<usize> = (0..points.len()).filter(|&i| points[i].y == 1).collect();
    if sel.n_occupied > occupied.len() {
        return Err(Error::ClassExhausted {
            class: "occupied",
            requested: sel.n_occupied,
            available: occupied.len(),
        });
    }
    let mut taken = vec![false; points.len()];
    let mut centers = Vec::with_capacity(sel.n_occupied + sel.n_random);
    let mut lengthscales = Vec::with_capacity(sel.n_occupied + sel.n_random);
    for k in index::sample(&mut rng, occupied.len(), sel.n_occupied) {
        let i = occupied[k];
        taken[i] = true;
        centers.push(points[i].x.to_vec());
        lengthscales.push(sel.lengthscale_occupied);
    }
    let rest: Vec<usize> = (0..points.len()).filter(|&i| !taken[i]).collect();
    if sel.n_random > rest.len() {
        return Err(Error::ClassExhausted {
            class: "any",
            requested: sel.n_random,
            available: rest.len(),
        });
    }
    for k in index::sample(&mut rng, rest.len(), sel.n_random) {
        centers.push(points[rest[k]].x.to_vec());
        lengthscales.push(sel.lengthscale_free);
    }
    KernelModel::new(centers, sel.scale, lengthscales)
}
