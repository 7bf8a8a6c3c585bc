use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::belief::{Belief, GaussianMoments};
use crate::data::{LabeledPoint, RegressionSample};
use crate::error::{check_dim, Error, Result};
use crate::features::KernelModel;
use crate::vi::{expected_sigmoid, DEFAULT_XI};

/// Predicted probabilities are clamped to [P_CLAMP, 1 − P_CLAMP] in the
/// cross-entropy.
pub const P_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub bce: f64,
}

/// Accuracy at the 0.5 threshold and mean binary cross-entropy of the
/// predictive probabilities E_q[Γ(ξΦᵀθ)].
pub fn evaluate<B: GaussianMoments + ?Sized>(
    belief: &B,
    model: &KernelModel,
    points: &[LabeledPoint],
) -> Result<Evaluation> {
    evaluate_with_xi(belief, model, points, DEFAULT_XI)
}

pub fn evaluate_with_xi<B: GaussianMoments + ?Sized>(
    belief: &B,
    model: &KernelModel,
    points: &[LabeledPoint],
    xi: f64,
) -> Result<Evaluation> {
    if points.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    check_dim("belief vs kernel", model.feature_dim(), belief.dim())?;
    let (mut correct, mut loss) = (0usize, 0.0);
    for p in points {
        let prob = expected_sigmoid(belief, &model.featurize(&p.x)?, xi)?;
        if (prob >= 0.5) == (p.y == 1) {
            correct += 1;
        }
        let c = prob.clamp(P_CLAMP, 1.0 - P_CLAMP);
        loss -= if p.y == 1 { c.ln() } else { (1.0 - c).ln() };
    }
    let n = points.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        bce: loss / n,
    })
}

/// Mean squared error of the posterior-mean prediction Φᵀμ.
pub fn evaluate_regression<B: GaussianMoments + ?Sized>(
    belief: &B,
    model: &KernelModel,
    samples: &[RegressionSample],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut sse = 0.0;
    for s in samples {
        let pred = model.featurize(&s.x)?.dot(belief.mean());
        sse += (pred - s.target).powi(2);
    }
    Ok(sse / samples.len() as f64)
}

/// `n` evenly spaced values from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i + 1 == n {
                b
            } else {
                a + (b - a) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Grid coordinates in file order: y outer, x inner.
pub fn grid_points(bounds: [f64; 4], resolution: usize) -> Vec<[f64; 2]> {
    let xs = linspace(bounds[0], bounds[1], resolution);
    let ys = linspace(bounds[2], bounds[3], resolution);
    ys.iter()
        .flat_map(|&y| xs.iter().map(move |&x| [x, y]))
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Writes `x,y,prob` rows over a resolution × resolution grid spanning
/// `bounds = (xmin, xmax, ymin, ymax)`.
pub fn export_grid<B: GaussianMoments + ?Sized>(
    belief: &B,
    model: &KernelModel,
    bounds: [f64; 4],
    resolution: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    if resolution < 2 {
        return Err(Error::InvalidArgument("grid resolution must be at least 2".into()));
    }
    if bounds.iter().any(|b| !b.is_finite()) || bounds[0] >= bounds[1] || bounds[2] >= bounds[3] {
        return Err(Error::InvalidArgument(format!("invalid grid bounds {bounds:?}")));
    }
    check_dim("grid input", 2, model.input_dim())?;
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "x,y,prob").map_err(io)?;
    for [x, y] in grid_points(bounds, resolution) {
        let p = expected_sigmoid(belief, &model.featurize(&[x, y])?, DEFAULT_XI)?;
        writeln!(w, "{x},{y},{p}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes one row per kernel center with the center coordinates and the
/// posterior mean and variance of its weight. The constant feature is left
/// out.
pub fn export_feature_stats(belief: &Belief, model: &KernelModel, path: impl AsRef<Path>) -> Result<()> {
    check_dim("belief vs kernel", model.feature_dim(), belief.dim())?;
    let variances = belief.marginal_variances()?;
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    let header: Vec<String> = if model.input_dim() == 2 {
        vec!["cx".into(), "cy".into()]
    } else {
        (0..model.input_dim()).map(|k| format!("c{k}")).collect()
    };
    writeln!(w, "{},mean,variance", header.join(",")).map_err(io)?;
    for (s, c) in model.centers().iter().enumerate() {
        let coords: Vec<String> = c.iter().map(f64::to_string).collect();
        writeln!(w, "{},{},{}", coords.join(","), belief.mean()[s + 1], variances[s + 1]).map_err(io)?;
    }
    w.flush().map_err(io)
}
