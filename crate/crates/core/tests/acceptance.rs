//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dgvi::belief::{geometric_fuse, geometric_fuse_diag, rank1_inverse_update, DiagGaussianBelief, GaussianBelief};
use dgvi::features::KernelModel;
use dgvi::network::{metropolis_weights, sinkhorn_normalize};
use dgvi::oracle::{
    conjugate_fusion_posterior, mc_sigmoid_moments, particle_fusion_posterior, quadrature_probit_moments,
    unit_circle_example,
};
use dgvi::sim::{run_experiment, EvalSet, ExperimentConfig, PartitionSpec, Representation, Simulation};
use dgvi::verify::{random_connected_edges, random_irreducible, random_spd, random_vector};
use dgvi::vi::{
    classify_update, dgvi_regression_step, diag_classify_update, Projection, RegressionInput, RegressionObservation,
    UpdateOptions, DEFAULT_XI,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(path).expect("config")
}

fn banana_replication() -> Outcome {
    let base = config("banana.json");
    let dir = tempfile::tempdir().unwrap();
    let mut accs = Vec::new();
    let mut slowest = 0.0f64;
    for seed in 0..5 {
        let mut cfg = base.clone();
        cfg.run.seed = seed;
        cfg.export.grid = None;
        cfg.export.feature_stats = false;
        let t = Instant::now();
        let summary = run_experiment(&cfg, &dir.path().join(seed.to_string())).unwrap();
        slowest = slowest.max(t.elapsed().as_secs_f64());
        accs.push(summary.mean_test_accuracy().unwrap());
    }
    let mut sorted = accs.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[2];
    outcome(
        median >= 0.85 && slowest <= 120.0,
        format!("median test accuracy {median:.4} (seeds {accs:.4?}), slowest run {slowest:.1}s"),
    )
}

/// Ω' = Ω + ΦSΦᵀ, μ' = Ω'⁻¹(Ωμ + ΦSy), by dense inversion.
fn information_filter(
    info: &DMatrix<f64>,
    mean: &DVector<f64>,
    design: &DMatrix<f64>,
    s: &DMatrix<f64>,
    y: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let info_new = info + design * s * design.transpose();
    let eta = info * mean + design * s * y;
    let mean_new = info_new.clone().try_inverse().unwrap() * eta;
    (mean_new, info_new)
}

fn regression_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = KernelModel::uniform(vec![vec![0.0]], 1.0, 1.0).unwrap();
    let opts = UpdateOptions::default();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(1..=30);
        let m = rng.random_range(1..=5);
        let info = random_spd(&mut rng, d, 0.5);
        let mean = random_vector(&mut rng, d);
        let design = DMatrix::from_fn(d, m, |_, _| rng.random_range(-2.0..2.0));
        let s = random_spd(&mut rng, m, 0.5);
        let y = random_vector(&mut rng, m);
        let prior = GaussianBelief::new(mean.clone(), info.clone()).unwrap();
        let obs = RegressionObservation::new(RegressionInput::Features(design.clone()), y.clone(), s.clone()).unwrap();
        let got = dgvi_regression_step(&[prior], &[1.0], &obs, &model, &opts).unwrap();
        let (mean_ref, info_ref) = information_filter(&info, &mean, &design, &s, &y);
        worst = worst
            .max((got.mean() - mean_ref).amax())
            .max((got.information() - info_ref).amax());
    }
    outcome(worst <= 1e-8, format!("max abs deviation {worst:.3e} over 100 problems"))
}

fn woodbury() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    let mut largest = 0;
    for k in 0..100 {
        let d = if k < 5 { 200 } else { rng.random_range(1..=200) };
        largest = largest.max(d);
        let cov = random_spd(&mut rng, d, 0.5);
        let phi = random_vector(&mut rng, d);
        let gamma = rng.random_range(0.0..2.0);
        let fast = rank1_inverse_update(&cov, &phi, gamma).unwrap();
        let dense = (cov.try_inverse().unwrap() + &phi * phi.transpose() * gamma)
            .try_inverse()
            .unwrap();
        worst = worst.max((fast - dense).amax());
    }
    outcome(worst <= 1e-8, format!("max abs deviation {worst:.3e}, largest case {largest}x{largest}"))
}

fn sums_residual(m: &DMatrix<f64>) -> f64 {
    let mut r = 0.0f64;
    for i in 0..m.nrows() {
        let row: f64 = (0..m.ncols()).map(|j| m[(i, j)]).sum();
        let col: f64 = (0..m.nrows()).map(|j| m[(j, i)]).sum();
        r = r.max((row - 1.0).abs()).max((col - 1.0).abs());
    }
    r
}

fn sinkhorn() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut sk, mut mh) = (0.0f64, 0.0f64);
    let mut symmetric = true;
    for k in 0..50 {
        let n = if k == 0 { 50 } else { rng.random_range(2..=50) };
        let density = rng.random_range(0.0..0.6);
        let w = sinkhorn_normalize(&random_irreducible(&mut rng, n, density), 1e-12, 10_000).unwrap();
        sk = sk.max(sums_residual(w.entries()));
        let edges = random_connected_edges(&mut rng, n, 2 * n);
        let w = metropolis_weights(&edges, n).unwrap();
        mh = mh.max(sums_residual(w.entries()));
        symmetric &= w.entries() == &w.entries().transpose();
    }
    outcome(
        sk <= 1e-10 && mh <= 1e-14 && symmetric,
        format!("sinkhorn residual {sk:.3e}, metropolis residual {mh:.3e}, metropolis symmetric {symmetric}"),
    )
}

fn probit_moments() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (mut quad, mut mc) = (0.0f64, 0.0f64);
    for k in 0..100u64 {
        let d = rng.random_range(1..=12);
        let belief = GaussianBelief::from_covariance(random_vector(&mut rng, d), random_spd(&mut rng, d, 0.1)).unwrap();
        let phi = random_vector(&mut rng, d) * rng.random_range(0.1..1.5);
        let proj = Projection::of(&belief, &phi).unwrap();
        let (p, g) = (proj.expected_probit(DEFAULT_XI), proj.hessian_scale(DEFAULT_XI));
        let (qp, qg) = quadrature_probit_moments(proj.mean, proj.variance, DEFAULT_XI);
        quad = quad.max((p - qp).abs()).max((g - qg).abs());
        let ((sp, _), (sg, _)) = mc_sigmoid_moments(proj.mean, proj.variance, 1_000_000, 1000 + k);
        mc = mc.max((p - sp).abs()).max((g - sg).abs());
    }
    outcome(
        quad <= 1e-6 && mc <= 0.02,
        format!("vs quadrature {quad:.3e}, vs sigmoid Monte Carlo {mc:.3e}"),
    )
}

fn example1() -> Outcome {
    let (priors, weights, model, z) = unit_circle_example();
    let t = Instant::now();
    let exact = conjugate_fusion_posterior(&priors, &weights, &model, &z).unwrap();
    let fit = particle_fusion_posterior(&priors, &weights, &model, &z, 100_000, 7).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let gap = (fit.fitted.mean() - exact.mean()).norm();
    outcome(
        gap <= 0.1 && secs <= 30.0,
        format!("mean gap {gap:.4e} (conjugate {:.4?}), {secs:.2}s", exact.mean().as_slice()),
    )
}

fn mean_consensus(sim: &Simulation) -> f64 {
    let e = sim.consensus_errors().unwrap();
    e.iter().sum::<f64>() / e.len() as f64
}

fn consensus() -> Outcome {
    let mut cfg = config("banana.json");
    cfg.representation = Representation::Diagonal;
    cfg.graph = serde_json::from_str(r#"{"n_agents": 4, "topology": "ring"}"#).unwrap();
    cfg.data.partition = PartitionSpec::ContiguousTrajectory;

    let mut sim = Simulation::new(&cfg).unwrap();
    let mut trace = Vec::with_capacity(5000);
    for _ in 0..5000 {
        sim.step().unwrap();
        trace.push(mean_consensus(&sim));
    }
    let early = trace[..500].iter().sum::<f64>() / 500.0;
    let late = trace[4500..].iter().sum::<f64>() / 500.0;

    cfg.data.partition = PartitionSpec::Shared;
    cfg.run.identical_streams = true;
    let mut sim = Simulation::new(&cfg).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..5000 {
        sim.step().unwrap();
        worst = worst.max(sim.consensus_errors().unwrap().into_iter().fold(0.0, f64::max));
    }
    outcome(
        late < early && worst <= 1e-12,
        format!("windowed error at 500: {early:.4e}, at 5000: {late:.4e}; identical agents max {worst:.1e}"),
    )
}

fn scaled_mapping() -> Outcome {
    let cfg = config("two_room.json");
    let t = Instant::now();
    let mut sim = Simulation::new(&cfg).unwrap();
    let (n_points, baseline) = match &sim.data().dataset {
        dgvi::sim::Dataset::Classify { splits, .. } => {
            let free = splits.test.iter().filter(|p| p.y == 0).count() as f64 / splits.test.len() as f64;
            (splits.train.len() + splits.test.len() + splits.verify.len(), free.max(1.0 - free))
        }
        dgvi::sim::Dataset::Regress { .. } => (0, f64::NAN),
    };
    for _ in 0..cfg.run.n_rounds {
        sim.step().unwrap();
    }
    let scores = sim.score(EvalSet::Test).unwrap().unwrap();
    let worst = scores.iter().map(|s| s.1).fold(1.0, f64::min);
    outcome(
        worst >= 0.80 && sim.model().num_centers() == 200 && sim.agents().len() == 4,
        format!(
            "lowest agent test accuracy {worst:.4}, majority baseline {baseline:.4} ({} points, {} rounds, {:.1}s)",
            n_points,
            sim.round(),
            t.elapsed().as_secs_f64()
        ),
    )
}

fn spd_robustness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let opts = UpdateOptions::default();
    let mut failures = 0;
    let mut decreases = 0;
    let mut steps = 0;
    while steps < 10_000 {
        let d = rng.random_range(2..=25);
        let n = rng.random_range(1..=4);
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mut full: Vec<GaussianBelief> = (0..n)
            .map(|_| GaussianBelief::new(random_vector(&mut rng, d), random_spd(&mut rng, d, 1e-3)).unwrap())
            .collect();
        let mut diag: Vec<DiagGaussianBelief> = (0..n)
            .map(|_| {
                let info = DVector::from_fn(d, |_, _| rng.random_range(1e-3..10.0));
                DiagGaussianBelief::new(random_vector(&mut rng, d), info).unwrap()
            })
            .collect();
        for _ in 0..50 {
            let scale = 10f64.powf(rng.random_range(-3.0..3.0));
            let phi = random_vector(&mut rng, d) * scale;
            let y = rng.random_range(0..=1u8);
            let fused_info = full.iter().zip(&weights).fold(DMatrix::zeros(d, d), |acc, (b, w)| acc + b.information() * *w);
            let fused_diag = diag.iter().zip(&weights).fold(DVector::zeros(d), |acc, (b, w)| acc + b.info_diag() * *w);
            let i = rng.random_range(0..n);
            match geometric_fuse(&full, &weights).and_then(|f| classify_update(&f, &phi, y, &opts)) {
                Ok(b) => {
                    if b.cholesky().is_err() {
                        failures += 1;
                    }
                    if (0..d).any(|k| b.information()[(k, k)] < fused_info[(k, k)]) {
                        decreases += 1;
                    }
                    full[i] = b;
                }
                Err(_) => failures += 1,
            }
            match geometric_fuse_diag(&diag, &weights).and_then(|f| diag_classify_update(&f, &phi, y, &opts)) {
                Ok(b) => {
                    if (0..d).any(|k| b.info_diag()[k] < fused_diag[k]) {
                        decreases += 1;
                    }
                    diag[i] = b;
                }
                Err(_) => failures += 1,
            }
            steps += 1;
        }
    }
    outcome(
        failures == 0 && decreases == 0,
        format!("{steps} steps: {failures} factorization failures, {decreases} diagonal decreases"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("banana replication", banana_replication),
        ("regression oracle equivalence", regression_oracle),
        ("woodbury equivalence", woodbury),
        ("sinkhorn and metropolis", sinkhorn),
        ("probit closed forms", probit_moments),
        ("example 1 particle fusion", example1),
        ("consensus behavior", consensus),
        ("scaled mapping", scaled_mapping),
        ("spd robustness", spd_robustness),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let o = run();
        println!("{} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.passed);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
