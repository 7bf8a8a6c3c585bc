//! Self-checks of the numerical core against independent oracles, as run
//! by `dgvi verify`.

use std::fmt;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::belief::{rank1_inverse_update, symmetrized, GaussianBelief};
use crate::error::Result;
use crate::features::KernelModel;
use crate::network::{metropolis_weights, sinkhorn_normalize};
use crate::oracle::{
    conjugate_fusion_posterior, mc_sigmoid_moments, particle_fusion_posterior, quadrature_probit_moments,
    unit_circle_example, ParticleFusion,
};
use crate::vi::{dgvi_regression_step, Projection, RegressionInput, RegressionObservation, UpdateOptions, DEFAULT_XI};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Example1,
    Woodbury,
    Probit,
    Sinkhorn,
    Regression,
    All,
}

/// Outcome of one check: the worst observed error against its bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            passed: value <= threshold,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<4} {:<44} {:>12.3e} <= {:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.threshold
        )
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<Check>> {
    Ok(match suite {
        Suite::Example1 => example1(seed, 100_000)?.0,
        Suite::Woodbury => woodbury(seed, 100, 200)?,
        Suite::Probit => probit(seed, 100, 1_000_000)?,
        Suite::Sinkhorn => sinkhorn(seed, 50, 50)?,
        Suite::Regression => regression(seed, 100, 30, 5)?,
        Suite::All => {
            let mut all = Vec::new();
            for s in [Suite::Example1, Suite::Woodbury, Suite::Probit, Suite::Sinkhorn, Suite::Regression] {
                all.extend(run_suite(s, seed)?);
            }
            all
        }
    })
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// B Bᵀ / d + floor·I with standard normal B.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize, floor: f64) -> DMatrix<f64> {
    let b = DMatrix::from_fn(d, d, |_, _| normal(rng));
    symmetrized(&b * b.transpose() / d as f64 + DMatrix::identity(d, d) * floor)
}

pub fn random_vector(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| normal(rng))
}

/// Particle fusion against the conjugate posterior on the unit-circle
/// example. Returns the checks and the particle cloud for export.
pub fn example1(seed: u64, n_particles: usize) -> Result<(Vec<Check>, ParticleFusion, DVector<f64>)> {
    let (priors, weights, model, z) = unit_circle_example();
    let started = Instant::now();
    let exact = conjugate_fusion_posterior(&priors, &weights, &model, &z)?;
    let particles = particle_fusion_posterior(&priors, &weights, &model, &z, n_particles, seed)?;
    let secs = started.elapsed().as_secs_f64();
    let gap = (particles.fitted.mean() - exact.mean()).norm();
    let checks = vec![
        Check::at_most("example1 particle vs conjugate mean gap", gap, 0.1),
        Check::at_most("example1 runtime seconds", secs, 30.0),
    ];
    Ok((checks, particles, exact.mean().clone()))
}

/// Rank-1 covariance update against a dense inverse of Ω + γφφᵀ.
pub fn woodbury(seed: u64, cases: usize, max_dim: usize) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for k in 0..cases {
        let d = if k == 0 { max_dim } else { rng.random_range(1..=max_dim) };
        let cov = random_spd(&mut rng, d, 0.5);
        let phi = random_vector(&mut rng, d);
        let gamma = rng.random_range(0.0..2.0);
        let fast = rank1_inverse_update(&cov, &phi, gamma)?;
        let info = cov.clone().try_inverse().expect("SPD inverse");
        let dense = (info + &phi * phi.transpose() * gamma).try_inverse().expect("SPD inverse");
        worst = worst.max((fast - dense).amax());
    }
    Ok(vec![Check::at_most("woodbury rank-1 update vs dense inverse", worst, 1e-8)])
}

/// Closed-form probit moments against quadrature, and against the true
/// sigmoid by Monte Carlo.
pub fn probit(seed: u64, cases: usize, mc_samples: usize) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut quad_p, mut quad_g, mut mc_p, mut mc_g) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for k in 0..cases {
        let d = rng.random_range(1..=10);
        let cov = random_spd(&mut rng, d, 0.1);
        let mean = random_vector(&mut rng, d);
        let phi = random_vector(&mut rng, d) * rng.random_range(0.1..1.5);
        let belief = GaussianBelief::from_covariance(mean, cov)?;
        let proj = Projection::of(&belief, &phi)?;
        let (p, g) = (proj.expected_probit(DEFAULT_XI), proj.hessian_scale(DEFAULT_XI));
        let (qp, qg) = quadrature_probit_moments(proj.mean, proj.variance, DEFAULT_XI);
        quad_p = quad_p.max((p - qp).abs());
        quad_g = quad_g.max((g - qg).abs());
        if mc_samples > 0 {
            let ((sp, _), (sg, _)) = mc_sigmoid_moments(proj.mean, proj.variance, mc_samples, seed ^ (k as u64 + 1));
            mc_p = mc_p.max((p - sp).abs());
            mc_g = mc_g.max((g - sg).abs());
        }
    }
    let mut out = vec![
        Check::at_most("probit mean closed form vs quadrature", quad_p, 1e-6),
        Check::at_most("probit curvature closed form vs quadrature", quad_g, 1e-6),
    ];
    if mc_samples > 0 {
        out.push(Check::at_most("probit mean vs sigmoid Monte Carlo", mc_p, 0.02));
        out.push(Check::at_most("probit curvature vs sigmoid Monte Carlo", mc_g, 0.02));
    }
    Ok(out)
}

/// Random nonnegative matrix with a positive diagonal and a Hamiltonian
/// cycle, so it is irreducible with total support.
pub fn random_irreducible(rng: &mut ChaCha8Rng, n: usize, density: f64) -> DMatrix<f64> {
    let mut perm: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), rng);
    let mut m = DMatrix::from_fn(n, n, |_, _| {
        if rng.random::<f64>() < density {
            rng.random_range(0.01..10.0)
        } else {
            0.0
        }
    });
    for i in 0..n {
        m[(i, i)] = rng.random_range(0.01..10.0);
        m[(perm[i], perm[(i + 1) % n])] = rng.random_range(0.01..10.0);
    }
    m
}

/// Random connected undirected edge list: a random spanning tree plus
/// extra edges.
pub fn random_connected_edges(rng: &mut ChaCha8Rng, n: usize, extra: usize) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
    if n > 1 {
        for _ in 0..extra {
            let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
            if a != b {
                edges.push((a, b));
            }
        }
    }
    edges
}

fn sum_residual(m: &DMatrix<f64>) -> f64 {
    let rows = m.row_iter().map(|r| (r.sum() - 1.0).abs());
    let cols = m.column_iter().map(|c| (c.sum() - 1.0).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

/// Sinkhorn on random irreducible matrices and Metropolis weights on
/// random connected graphs, with row and column sums recomputed here.
pub fn sinkhorn(seed: u64, cases: usize, max_n: usize) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sk, mut mh, mut asym) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..cases {
        let n = if k == 0 { max_n } else { rng.random_range(1..=max_n) };
        let density = rng.random_range(0.0..0.5);
        let m = random_irreducible(&mut rng, n, density);
        let w = sinkhorn_normalize(&m, 1e-12, 10_000)?;
        sk = sk.max(sum_residual(w.entries()));
        let edges = random_connected_edges(&mut rng, n, n);
        let w = metropolis_weights(&edges, n)?;
        mh = mh.max(sum_residual(w.entries()));
        asym = asym.max((w.entries() - w.entries().transpose()).amax());
    }
    Ok(vec![
        Check::at_most("sinkhorn row/column sums", sk, 1e-10),
        Check::at_most("metropolis row/column sums", mh, 1e-14),
        Check::at_most("metropolis asymmetry", asym, 0.0),
    ])
}

/// Single-agent regression step against the information-filter recursion
/// Ω' = Ω + ΦSΦᵀ, Ω'μ' = Ωμ + ΦSy.
pub fn regression(seed: u64, cases: usize, max_dim: usize, max_outputs: usize) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = KernelModel::uniform(vec![vec![0.0]], 1.0, 1.0)?;
    let opts = UpdateOptions::default();
    let (mut mean_err, mut info_err) = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let d = rng.random_range(1..=max_dim);
        let m = rng.random_range(1..=max_outputs);
        let info = random_spd(&mut rng, d, 0.5);
        let mean = random_vector(&mut rng, d);
        let design = DMatrix::from_fn(d, m, |_, _| normal(&mut rng));
        let s = random_spd(&mut rng, m, 0.5);
        let y = random_vector(&mut rng, m);
        let prior = GaussianBelief::new(mean.clone(), info.clone())?;
        let obs = RegressionObservation::new(RegressionInput::Features(design.clone()), y.clone(), s.clone())?;
        let got = dgvi_regression_step(&[prior], &[1.0], &obs, &model, &opts)?;

        let info_new = &info + &design * &s * design.transpose();
        let eta = &info * &mean + &design * &s * &y;
        let expect = Cholesky::new(info_new.clone()).expect("SPD").solve(&eta);
        mean_err = mean_err.max((got.mean() - expect).amax());
        info_err = info_err.max((got.information() - info_new).amax());
    }
    Ok(vec![
        Check::at_most("regression mean vs information filter", mean_err, 1e-8),
        Check::at_most("regression information vs information filter", info_err, 1e-8),
    ])
}
