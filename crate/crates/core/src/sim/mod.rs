//! Synchronous multi-agent simulation.
//!
//! Each round every agent reads the messages published at the end of the
//! previous round, fuses those of its in-neighbours with its row of the
//! weight matrix, absorbs `obs_per_round` observations drawn from its
//! replay buffer, and publishes its new belief. Agents run in parallel;
//! each owns its random stream, so results do not depend on scheduling.

pub mod config;
pub mod eval;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::belief::{fuse_information, fuse_information_diag, Belief, DiagGaussianBelief, GaussianBelief};
use crate::data::synthetic::two_room_points;
use crate::data::{
    load_labeled_csv, load_regression_csv, partition_dataset, read_scans, lidar_scan_to_points,
    split_train_test_verify, LabeledPoint, PartitionMode, RegressionSample, ReplayBuffer,
    RobotTagged, Splits,
};
use crate::error::{Error, Result};
use crate::features::{select_centers, CenterSelection, KernelModel};
use crate::network::{consensus_error, WeightMatrix};
use crate::vi::{classify_update, diag_classify_update, regression_update, UpdateOptions};

pub use config::{
    CenterSource, DataSource, ExperimentConfig, PartitionSpec, Representation, Task,
};
pub use eval::{evaluate, evaluate_with_xi, evaluate_regression, export_feature_stats, export_grid, Evaluation};

pub const METRICS_HEADER: &str = "round,agent,consensus_err,verif_bce,verif_acc,ms,obs";

/// Data held by the agents, split and partitioned.
#[derive(Debug, Clone)]
pub enum Dataset {
    Classify {
        splits: Splits<LabeledPoint>,
        shares: Vec<Vec<LabeledPoint>>,
    },
    Regress {
        splits: Splits<RegressionSample>,
        shares: Vec<Vec<RegressionSample>>,
        noise_precision: f64,
    },
}

impl Dataset {
    pub fn n_train(&self) -> usize {
        match self {
            Dataset::Classify { splits, .. } => splits.train.len(),
            Dataset::Regress { splits, .. } => splits.train.len(),
        }
    }
}

/// Everything a run needs besides the agents themselves.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub dataset: Dataset,
    pub model: KernelModel,
    pub weights: WeightMatrix,
    /// Bounding box (xmin, xmax, ymin, ymax) of 2-D inputs.
    pub bounds: Option<[f64; 4]>,
}

fn load_points(cfg: &ExperimentConfig) -> Result<Vec<LabeledPoint>> {
    match &cfg.data.source {
        DataSource::Csv { path } => load_labeled_csv(cfg.resolve(path)),
        DataSource::Scans {
            path,
            n_free_per_ray,
            hit_epsilon,
        } => {
            let mut out = Vec::new();
            for scan in read_scans(cfg.resolve(path))? {
                out.extend(lidar_scan_to_points(&scan, *n_free_per_ray, *hit_epsilon)?);
            }
            Ok(out)
        }
        DataSource::TwoRoom(t) => two_room_points(t),
        DataSource::RegressionCsv { .. } => Err(Error::Config("expected labeled point data".into())),
    }
}

fn share<T: Clone + RobotTagged>(train: &[T], n: usize, spec: PartitionSpec, seed: u64) -> Result<Vec<Vec<T>>> {
    let mode = match spec {
        PartitionSpec::Shared => return Ok(vec![train.to_vec(); n]),
        PartitionSpec::ContiguousTrajectory => PartitionMode::ContiguousTrajectory,
        PartitionSpec::Random => PartitionMode::Random,
        PartitionSpec::PerRobot => PartitionMode::PerRobot,
    };
    let shares = partition_dataset(train, n, mode, seed)?;
    if let Some(i) = shares.iter().position(Vec::is_empty) {
        return Err(Error::Config(format!("agent {i} receives no training data")));
    }
    Ok(shares)
}

fn bounding_box<'a>(xs: impl Iterator<Item = &'a [f64]>) -> Option<[f64; 4]> {
    let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    for x in xs {
        if x.len() != 2 {
            return None;
        }
        b = [b[0].min(x[0]), b[1].max(x[0]), b[2].min(x[1]), b[3].max(x[1])];
    }
    (b[0] < b[1] && b[2] < b[3]).then_some(b)
}

impl PreparedData {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let weights = cfg.graph.build(&cfg.base_dir)?;
        let n = weights.size();
        let split = &cfg.data.split;
        let fractions = (split.train, split.test, split.verify);
        let seed = cfg.data_seed();
        match cfg.task {
            Task::Classify => {
                let points = load_points(cfg)?;
                let bounds = bounding_box(points.iter().map(|p| p.x.as_slice()));
                let splits = split_train_test_verify(&points, fractions, split.mode(), seed, split.verify_cap)?;
                if splits.train.is_empty() {
                    return Err(Error::Config("training set is empty".into()));
                }
                let shares = share(&splits.train, n, cfg.data.partition, seed.wrapping_add(1))?;
                let model = match &cfg.kernel.file {
                    Some(f) => KernelModel::load(cfg.resolve(f))?,
                    None => {
                        let source: Vec<LabeledPoint> = match cfg.kernel.center_source {
                            CenterSource::Train => splits.train.clone(),
                            CenterSource::Test => splits.test.clone(),
                            CenterSource::All => points,
                        };
                        select_centers(
                            &source,
                            &CenterSelection {
                                n_occupied: cfg.kernel.n_occupied,
                                n_random: cfg.kernel.n_random,
                                lengthscale_occupied: cfg.kernel.lengthscale_occupied.unwrap_or(cfg.kernel.lengthscale),
                                lengthscale_free: cfg.kernel.lengthscale,
                                scale: cfg.kernel.scale,
                                seed: cfg.kernel_seed(),
                            },
                        )?
                    }
                };
                Ok(Self {
                    dataset: Dataset::Classify { splits, shares },
                    model,
                    weights,
                    bounds,
                })
            }
            Task::Regress => {
                let DataSource::RegressionCsv { path, noise_precision } = &cfg.data.source else {
                    return Err(Error::Config("regression needs a regression_csv source".into()));
                };
                if !(*noise_precision > 0.0) {
                    return Err(Error::Config("noise_precision must be positive".into()));
                }
                let samples = load_regression_csv(cfg.resolve(path))?;
                let bounds = bounding_box(samples.iter().map(|s| s.x.as_slice()));
                let splits = split_train_test_verify(&samples, fractions, split.mode(), seed, split.verify_cap)?;
                if splits.train.is_empty() {
                    return Err(Error::Config("training set is empty".into()));
                }
                let shares = share(&splits.train, n, cfg.data.partition, seed.wrapping_add(1))?;
                let model = match &cfg.kernel.file {
                    Some(f) => KernelModel::load(cfg.resolve(f))?,
                    None => {
                        let source = match cfg.kernel.center_source {
                            CenterSource::Train => &splits.train,
                            CenterSource::Test => &splits.test,
                            CenterSource::All => &samples,
                        };
                        let count = cfg.kernel.n_random + cfg.kernel.n_occupied;
                        if count > source.len() {
                            return Err(Error::ClassExhausted {
                                class: "any",
                                requested: count,
                                available: source.len(),
                            });
                        }
                        let mut rng = ChaCha8Rng::seed_from_u64(cfg.kernel_seed());
                        let centers = index::sample(&mut rng, source.len(), count)
                            .into_iter()
                            .map(|i| source[i].x.clone())
                            .collect();
                        KernelModel::uniform(centers, cfg.kernel.scale, cfg.kernel.lengthscale)?
                    }
                };
                Ok(Self {
                    dataset: Dataset::Regress {
                        splits,
                        shares,
                        noise_precision: *noise_precision,
                    },
                    model,
                    weights,
                    bounds,
                })
            }
        }
    }
}

/// What an agent publishes at the end of a round: its belief in
/// information form, so that fusion is a weighted sum.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMessage {
    pub sender: usize,
    pub payload: MessagePayload,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MessagePayload {
    Full {
        information: DMatrix<f64>,
        info_vector: DVector<f64>,
    },
    Diag {
        info_diag: DVector<f64>,
        info_vector: DVector<f64>,
    },
}

impl RoundMessage {
    pub fn from_belief(sender: usize, belief: &Belief) -> Self {
        let payload = match belief {
            Belief::Full(b) => MessagePayload::Full {
                information: b.information().clone(),
                info_vector: b.information_vector(),
            },
            Belief::Diag(b) => MessagePayload::Diag {
                info_diag: b.info_diag().clone(),
                info_vector: b.information_vector(),
            },
        };
        Self { sender, payload }
    }
}

#[derive(Debug, Clone)]
enum Stream {
    Classify {
        buffer: ReplayBuffer,
        pending: Vec<LabeledPoint>,
        cursor: usize,
        ingest: Option<usize>,
    },
    Regress {
        samples: Vec<RegressionSample>,
    },
}

/// Per-agent state: belief, local data and random stream.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub id: usize,
    pub belief: Belief,
    stream: Stream,
    rng: ChaCha8Rng,
    observations: u64,
}

impl AgentState {
    pub fn observations(&self) -> u64 {
        self.observations
    }

    fn fuse(&self, inbox: &[RoundMessage], row: &[(usize, f64)]) -> Result<Belief> {
        if let [(j, _)] = row {
            if *j == self.id {
                return Ok(self.belief.clone());
            }
        }
        let weights: Vec<f64> = row.iter().map(|(_, w)| *w).collect();
        match &self.belief {
            Belief::Full(_) => {
                let parts = row
                    .iter()
                    .map(|(j, _)| match &inbox[*j].payload {
                        MessagePayload::Full {
                            information,
                            info_vector,
                        } => Ok((information, info_vector)),
                        MessagePayload::Diag { .. } => Err(Error::InvalidArgument("mixed belief representations".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Belief::Full(fuse_information(&parts, &weights)?))
            }
            Belief::Diag(_) => {
                let parts = row
                    .iter()
                    .map(|(j, _)| match &inbox[*j].payload {
                        MessagePayload::Diag { info_diag, info_vector } => Ok((info_diag, info_vector)),
                        MessagePayload::Full { .. } => Err(Error::InvalidArgument("mixed belief representations".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Belief::Diag(fuse_information_diag(&parts, &weights)?))
            }
        }
    }

    fn step(
        &mut self,
        inbox: &[RoundMessage],
        row: &[(usize, f64)],
        model: &KernelModel,
        opts: &UpdateOptions,
        obs_per_round: usize,
        noise_precision: f64,
    ) -> Result<()> {
        let mut belief = self.fuse(inbox, row)?;
        match &mut self.stream {
            Stream::Classify {
                buffer,
                pending,
                cursor,
                ingest,
            } => {
                if let Some(k) = *ingest {
                    let end = (*cursor + k).min(pending.len());
                    buffer.extend(pending[*cursor..end].iter().copied());
                    *cursor = end;
                }
                for _ in 0..obs_per_round {
                    let p = buffer.sample_available(&mut self.rng)?;
                    let phi = model.featurize(&p.x)?;
                    belief = match belief {
                        Belief::Full(b) => Belief::Full(classify_update(&b, &phi, p.y, opts)?),
                        Belief::Diag(b) => Belief::Diag(diag_classify_update(&b, &phi, p.y, opts)?),
                    };
                }
            }
            Stream::Regress { samples } => {
                let precision = DMatrix::from_element(1, 1, noise_precision);
                for _ in 0..obs_per_round {
                    let s = &samples[self.rng.random_range(0..samples.len())];
                    let phi = model.featurize(&s.x)?;
                    let design = DMatrix::from_column_slice(phi.len(), 1, phi.as_slice());
                    let y = DVector::from_element(1, s.target);
                    belief = match belief {
                        Belief::Full(b) => Belief::Full(regression_update(&b, &design, &y, &precision, opts)?),
                        Belief::Diag(_) => {
                            return Err(Error::InvalidArgument("regression needs a full belief".into()))
                        }
                    };
                }
            }
        }
        self.observations += obs_per_round as u64;
        self.belief = belief;
        Ok(())
    }
}

/// Metrics of one agent at one evaluation round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub round: usize,
    pub agent: usize,
    pub consensus_err: f64,
    /// Binary cross-entropy, or mean squared error for regression.
    pub verif_bce: f64,
    /// Accuracy; NaN for regression.
    pub verif_acc: f64,
    pub ms: u128,
    pub obs: u64,
}

impl MetricsRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.round, self.agent, self.consensus_err, self.verif_bce, self.verif_acc, self.ms, self.obs
        )
    }
}

/// Which held-out set to score against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSet {
    Test,
    Verify,
}

/// A configured network of agents advancing round by round.
#[derive(Debug, Clone)]
pub struct Simulation {
    data: PreparedData,
    rows: Vec<Vec<(usize, f64)>>,
    agents: Vec<AgentState>,
    opts: UpdateOptions,
    obs_per_round: usize,
    round: usize,
}

impl Simulation {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Self::with_data(cfg, PreparedData::from_config(cfg)?)
    }

    pub fn with_data(cfg: &ExperimentConfig, data: PreparedData) -> Result<Self> {
        cfg.update.validate()?;
        let n = data.weights.size();
        let dim = data.model.feature_dim();
        let lambda = cfg.prior.information;
        let prior = match cfg.representation {
            Representation::Full => Belief::Full(GaussianBelief::isotropic(DVector::zeros(dim), lambda)?),
            Representation::Diagonal => Belief::Diag(DiagGaussianBelief::isotropic(DVector::zeros(dim), lambda)?),
        };
        let replay = &cfg.data.replay;
        let agents = (0..n)
            .map(|id| {
                let stream = match &data.dataset {
                    Dataset::Classify { shares, .. } => {
                        let pending = shares[id].clone();
                        let (buffer, cursor) = match replay.ingest_per_round {
                            Some(0) => return Err(Error::Config("replay.ingest_per_round must be positive".into())),
                            Some(_) => (ReplayBuffer::new(replay.capacity, replay.ratio)?, 0),
                            None => (
                                ReplayBuffer::from_points(pending.iter().copied(), replay.capacity, replay.ratio)?,
                                pending.len(),
                            ),
                        };
                        Stream::Classify {
                            buffer,
                            pending,
                            cursor,
                            ingest: replay.ingest_per_round,
                        }
                    }
                    Dataset::Regress { shares, .. } => Stream::Regress {
                        samples: shares[id].clone(),
                    },
                };
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
                if !cfg.run.identical_streams {
                    rng.set_stream(id as u64 + 1);
                }
                Ok(AgentState {
                    id,
                    belief: prior.clone(),
                    stream,
                    rng,
                    observations: 0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let rows = (0..n).map(|i| data.weights.row(i)).collect();
        Ok(Self {
            data,
            rows,
            agents,
            opts: cfg.update,
            obs_per_round: cfg.run.obs_per_round,
            round: 0,
        })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn data(&self) -> &PreparedData {
        &self.data
    }

    pub fn model(&self) -> &KernelModel {
        &self.data.model
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn beliefs(&self) -> Vec<&Belief> {
        self.agents.iter().map(|a| &a.belief).collect()
    }

    /// Advances every agent by one round.
    pub fn step(&mut self) -> Result<()> {
        let mut inbox: Vec<RoundMessage> = self
            .agents
            .iter()
            .map(|a| RoundMessage::from_belief(a.id, &a.belief))
            .collect();
        inbox.sort_by_key(|m| m.sender);
        let noise = match &self.data.dataset {
            Dataset::Regress { noise_precision, .. } => *noise_precision,
            Dataset::Classify { .. } => 1.0,
        };
        let round = self.round + 1;
        let (rows, model, opts, k) = (&self.rows, &self.data.model, &self.opts, self.obs_per_round);
        self.agents
            .par_iter_mut()
            .map(|a| {
                a.step(&inbox, &rows[a.id], model, opts, k, noise).map_err(|e| Error::Agent {
                    round,
                    agent: a.id,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<()>>>()?;
        self.round = round;
        Ok(())
    }

    /// Σ_k |μ_ik − mean_j μ_jk| for every agent i.
    pub fn consensus_errors(&self) -> Result<Vec<f64>> {
        let means: Vec<&DVector<f64>> = self.agents.iter().map(|a| a.belief.mean()).collect();
        consensus_error(&means)
    }

    /// (loss, accuracy) per agent: cross-entropy and accuracy for
    /// classification, squared error and NaN for regression. `None` when
    /// the set is empty.
    pub fn score(&self, set: EvalSet) -> Result<Option<Vec<(f64, f64)>>> {
        let model = &self.data.model;
        match &self.data.dataset {
            Dataset::Classify { splits, .. } => {
                let pts = match set {
                    EvalSet::Test => &splits.test,
                    EvalSet::Verify => &splits.verify,
                };
                if pts.is_empty() {
                    return Ok(None);
                }
                let r = self
                    .agents
                    .par_iter()
                    .map(|a| evaluate(&a.belief, model, pts).map(|e| (e.bce, e.accuracy)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Some(r))
            }
            Dataset::Regress { splits, .. } => {
                let pts = match set {
                    EvalSet::Test => &splits.test,
                    EvalSet::Verify => &splits.verify,
                };
                if pts.is_empty() {
                    return Ok(None);
                }
                let r = self
                    .agents
                    .par_iter()
                    .map(|a| evaluate_regression(&a.belief, model, pts).map(|mse| (mse, f64::NAN)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Some(r))
            }
        }
    }

    fn metrics(&self, started: Option<Instant>) -> Result<Vec<MetricsRecord>> {
        let consensus = self.consensus_errors()?;
        let scores = self.score(EvalSet::Verify)?;
        let ms = started.map_or(0, |t| t.elapsed().as_millis());
        Ok(self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let (bce, acc) = scores.as_ref().map_or((f64::NAN, f64::NAN), |s| s[i]);
                MetricsRecord {
                    round: self.round,
                    agent: i,
                    consensus_err: consensus[i],
                    verif_bce: bce,
                    verif_acc: acc,
                    ms,
                    obs: a.observations,
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentSummary {
    pub agent: usize,
    pub observations: u64,
    /// Cross-entropy, or mean squared error for regression.
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub task: Task,
    pub rounds: usize,
    pub n_agents: usize,
    pub n_train: usize,
    pub n_centers: usize,
    pub agents: Vec<AgentSummary>,
    pub final_consensus_err: Vec<f64>,
}

impl RunSummary {
    /// Mean test accuracy over agents.
    pub fn mean_test_accuracy(&self) -> Option<f64> {
        let accs: Vec<f64> = self.agents.iter().filter_map(|a| a.test_accuracy).collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Runs an experiment to completion and writes its artifacts to `out_dir`:
/// `metrics.csv`, `summary.json`, `kernel.json`, `beliefs/agent_<i>.json`,
/// plus `grid.csv` and `features.csv` when requested.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    match cfg.run.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(|| run_inner(cfg, out_dir)),
        None => run_inner(cfg, out_dir),
    }
}

fn run_inner(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let started = Instant::now();
    let mut sim = Simulation::new(cfg)?;
    let belief_dir = out_dir.join("beliefs");
    std::fs::create_dir_all(&belief_dir).map_err(|e| Error::io(&belief_dir, e))?;
    let metrics_path = out_dir.join("metrics.csv");
    let file = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);
    let io = |e| Error::io(&metrics_path, e);
    writeln!(metrics, "{METRICS_HEADER}").map_err(io)?;
    let clock = cfg.run.record_wall_clock.then_some(started);

    let n_rounds = cfg.run.n_rounds;
    for r in 1..=n_rounds {
        sim.step()?;
        if r % cfg.run.eval_every == 0 || r == n_rounds {
            for rec in sim.metrics(clock)? {
                writeln!(metrics, "{}", rec.csv_line()).map_err(io)?;
            }
        }
    }
    metrics.flush().map_err(io)?;

    for a in sim.agents() {
        a.belief
            .to_snapshot()
            .save(belief_dir.join(format!("agent_{}.json", a.id)))?;
    }
    sim.model().save(out_dir.join("kernel.json"))?;

    if let Some(grid) = &cfg.export.grid {
        let agent = sim
            .agents()
            .get(grid.agent)
            .ok_or_else(|| Error::Config(format!("export.grid.agent {} does not exist", grid.agent)))?;
        let bounds = grid
            .bounds
            .or(sim.data().bounds)
            .ok_or_else(|| Error::Config("export.grid.bounds required for this data".into()))?;
        export_grid(&agent.belief, sim.model(), bounds, grid.resolution, out_dir.join("grid.csv"))?;
    }
    if cfg.export.feature_stats {
        let agent = cfg.export.grid.as_ref().map_or(0, |g| g.agent);
        if let Some(a) = sim.agents().get(agent) {
            export_feature_stats(&a.belief, sim.model(), out_dir.join("features.csv"))?;
        }
    }

    let test = sim.score(EvalSet::Test)?;
    let summary = RunSummary {
        task: cfg.task,
        rounds: sim.round(),
        n_agents: sim.agents().len(),
        n_train: sim.data().dataset.n_train(),
        n_centers: sim.model().num_centers(),
        agents: sim
            .agents()
            .iter()
            .enumerate()
            .map(|(i, a)| AgentSummary {
                agent: i,
                observations: a.observations(),
                test_loss: test.as_ref().map(|t| t[i].0),
                test_accuracy: test.as_ref().and_then(|t| (!t[i].1.is_nan()).then_some(t[i].1)),
            })
            .collect(),
        final_consensus_err: sim.consensus_errors()?,
    };
    write_file(&out_dir.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Default output directory of a config, resolved against its location.
pub fn default_out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.resolve(&cfg.export.out_dir)
}
