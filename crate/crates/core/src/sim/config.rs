//! JSON experiment configuration. Relative paths are resolved against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::synthetic::TwoRoomConfig;
use crate::data::SplitMode;
use crate::error::{Error, Result};
use crate::network::{GraphSpec, WeightMatrix};
use crate::vi::UpdateOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classify,
    Regress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    #[default]
    Full,
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Complete,
    Ring,
    Path,
    Star,
}

/// Either a graph file, a named topology, or an inline graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphConfig {
    File { file: PathBuf },
    Topology { n_agents: usize, topology: Topology },
    Inline(GraphSpec),
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig::Topology {
            n_agents: 1,
            topology: Topology::Complete,
        }
    }
}

impl GraphConfig {
    pub fn spec(&self, base: &Path) -> Result<GraphSpec> {
        match self {
            GraphConfig::File { file } => GraphSpec::load(base.join(file)),
            GraphConfig::Inline(spec) => Ok(spec.clone()),
            GraphConfig::Topology { n_agents, topology } => {
                let n = *n_agents;
                if n == 0 {
                    return Err(Error::Config("graph needs at least one agent".into()));
                }
                let edges = match topology {
                    Topology::Complete => return Ok(GraphSpec::complete(n)),
                    Topology::Path => (1..n).map(|i| [i - 1, i]).collect(),
                    Topology::Ring if n > 2 => (0..n).map(|i| [i, (i + 1) % n]).collect(),
                    Topology::Ring => (1..n).map(|i| [i - 1, i]).collect(),
                    Topology::Star => (1..n).map(|i| [0, i]).collect(),
                };
                Ok(GraphSpec {
                    n,
                    edges,
                    weights: None,
                })
            }
        }
    }

    pub fn build(&self, base: &Path) -> Result<WeightMatrix> {
        self.spec(base)?.build()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterSource {
    #[default]
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSpec {
    /// Load a saved kernel instead of selecting centers.
    pub file: Option<PathBuf>,
    pub n_random: usize,
    pub n_occupied: usize,
    /// Amplitude γ₁.
    pub scale: f64,
    /// Inverse squared lengthscale γ₂ of the randomly drawn centers.
    pub lengthscale: f64,
    /// γ₂ of centers drawn from occupied points; defaults to `lengthscale`.
    pub lengthscale_occupied: Option<f64>,
    pub center_source: CenterSource,
    /// Defaults to a value derived from the run seed.
    pub seed: Option<u64>,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            file: None,
            n_random: 50,
            n_occupied: 0,
            scale: 1.0,
            lengthscale: 0.3,
            lengthscale_occupied: None,
            center_source: CenterSource::Train,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// `x,y,label[,robot]` rows.
    Csv { path: PathBuf },
    /// JSON-lines scans converted on load.
    Scans {
        path: PathBuf,
        #[serde(default = "default_n_free")]
        n_free_per_ray: usize,
        #[serde(default)]
        hit_epsilon: f64,
    },
    TwoRoom(TwoRoomConfig),
    /// Regression rows: inputs followed by the target.
    RegressionCsv {
        path: PathBuf,
        /// Observation noise precision S.
        #[serde(default = "one")]
        noise_precision: f64,
    },
}

fn default_n_free() -> usize {
    4
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitModeName {
    #[default]
    Random,
    ByTrajectorySlices,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub test: f64,
    pub verify: f64,
    pub mode: SplitModeName,
    pub n_slices: usize,
    /// Absolute bound on the verification set size.
    pub verify_cap: Option<usize>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.5,
            test: 0.5,
            verify: 0.0,
            mode: SplitModeName::Random,
            n_slices: 10,
            verify_cap: None,
        }
    }
}

impl SplitSpec {
    pub fn mode(&self) -> SplitMode {
        match self.mode {
            SplitModeName::Random => SplitMode::Random,
            SplitModeName::ByTrajectorySlices => SplitMode::ByTrajectorySlices {
                n_slices: self.n_slices,
            },
        }
    }
}

/// How training data reaches the agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionSpec {
    #[default]
    ContiguousTrajectory,
    Random,
    PerRobot,
    /// Every agent sees the whole training set.
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplaySpec {
    /// Fraction of draws from the free store; `null` samples the stored
    /// points uniformly regardless of class.
    pub ratio: Option<f64>,
    pub capacity: Option<usize>,
    /// Stream this many new points per round into the buffer, in data
    /// order. `null` loads the agent's whole share up front.
    pub ingest_per_round: Option<usize>,
}

impl Default for ReplaySpec {
    fn default() -> Self {
        Self {
            ratio: Some(0.8),
            capacity: None,
            ingest_per_round: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub source: DataSource,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub partition: PartitionSpec,
    #[serde(default)]
    pub replay: ReplaySpec,
    /// Seed for splitting and partitioning; defaults to one derived from the
    /// run seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub n_rounds: usize,
    pub obs_per_round: usize,
    pub eval_every: usize,
    pub seed: u64,
    /// Give every agent the same random stream.
    pub identical_streams: bool,
    /// Fill the `ms` metrics column. Off by default so that reruns produce
    /// identical files.
    pub record_wall_clock: bool,
    pub threads: Option<usize>,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            n_rounds: 1000,
            obs_per_round: 1,
            eval_every: 500,
            seed: 0,
            identical_streams: false,
            record_wall_clock: false,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    /// λ in the prior N(0, λ⁻¹I).
    pub information: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { information: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// (xmin, xmax, ymin, ymax); defaults to the data bounding box.
    #[serde(default)]
    pub bounds: Option<[f64; 4]>,
    pub resolution: usize,
    #[serde(default)]
    pub agent: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSpec {
    pub out_dir: PathBuf,
    pub grid: Option<GridSpec>,
    pub feature_stats: bool,
}

impl Default for ExportSpec {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            grid: None,
            feature_stats: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default)]
    pub representation: Representation,
    #[serde(default)]
    pub graph: GraphConfig,
    #[serde(default)]
    pub kernel: KernelSpec,
    pub data: DataSpec,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default)]
    pub update: UpdateOptions,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub export: ExportSpec,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn kernel_seed(&self) -> u64 {
        self.kernel.seed.unwrap_or(self.run.seed.wrapping_add(0x6b65_726e))
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.run.seed.wrapping_add(0x6461_7461))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.run.n_rounds == 0 {
            return fail("run.n_rounds must be at least 1".into());
        }
        if self.run.obs_per_round == 0 {
            return fail("run.obs_per_round must be at least 1".into());
        }
        if self.run.eval_every == 0 {
            return fail("run.eval_every must be at least 1".into());
        }
        if self.run.threads == Some(0) {
            return fail("run.threads must be positive".into());
        }
        if !(self.prior.information > 0.0 && self.prior.information.is_finite()) {
            return fail("prior.information must be positive".into());
        }
        self.update.validate()?;
        if self.kernel.file.is_none() {
            if self.kernel.n_random + self.kernel.n_occupied == 0 {
                return fail("kernel needs at least one center".into());
            }
            let ls = [Some(self.kernel.lengthscale), self.kernel.lengthscale_occupied];
            if !(self.kernel.scale > 0.0) || ls.iter().flatten().any(|l| !(*l > 0.0)) {
                return fail("kernel scale and lengthscales must be positive".into());
            }
        }
        if let Some(grid) = &self.export.grid {
            if grid.resolution < 2 {
                return fail("export.grid.resolution must be at least 2".into());
            }
        }
        let classify_source = !matches!(self.data.source, DataSource::RegressionCsv { .. });
        match (self.task, classify_source) {
            (Task::Classify, false) => return fail("classification needs labeled point data".into()),
            (Task::Regress, true) => return fail("regression needs a regression_csv source".into()),
            _ => {}
        }
        if self.task == Task::Regress && self.representation == Representation::Diagonal {
            return fail("regression supports the full representation only".into());
        }
        for p in self.referenced_files() {
            let full = self.resolve(&p);
            if !full.exists() {
                return Err(Error::MissingFile(full));
            }
        }
        Ok(())
    }

    fn referenced_files(&self) -> Vec<PathBuf> {
        let mut files = Vec::new();
        if let GraphConfig::File { file } = &self.graph {
            files.push(file.clone());
        }
        if let Some(f) = &self.kernel.file {
            files.push(f.clone());
        }
        match &self.data.source {
            DataSource::Csv { path }
            | DataSource::Scans { path, .. }
            | DataSource::RegressionCsv { path, .. } => files.push(path.clone()),
            DataSource::TwoRoom(_) => {}
        }
        files
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "task": "classify",
        "data": {"source": {"kind": "two_room", "scans_per_robot": 5}}
    }"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_json(MINIMAL, ".").unwrap();
        assert_eq!(cfg.representation, Representation::Full);
        assert_eq!(cfg.run.obs_per_round, 1);
        assert_eq!(cfg.run.eval_every, 500);
        assert_eq!(cfg.prior.information, 1.0);
        assert_eq!(cfg.data.replay.ratio, Some(0.8));
        assert_eq!(cfg.graph.build(Path::new(".")).unwrap().size(), 1);
        match &cfg.data.source {
            DataSource::TwoRoom(t) => {
                assert_eq!(t.scans_per_robot, 5);
                assert_eq!(t.beams_per_scan, 20);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn graph_forms() {
        let base = Path::new(".");
        let t: GraphConfig = serde_json::from_str(r#"{"n_agents": 4, "topology": "ring"}"#).unwrap();
        let w = t.build(base).unwrap();
        assert_eq!(w.size(), 4);
        assert_eq!(w.get(0, 2), 0.0);
        let i: GraphConfig = serde_json::from_str(r#"{"n": 3, "edges": [[0, 1], [1, 2]]}"#).unwrap();
        assert_eq!(i.build(base).unwrap().get(0, 1), 1.0 / 3.0);
        let f: GraphConfig = serde_json::from_str(r#"{"file": "nope.json"}"#).unwrap();
        assert!(matches!(f.build(base), Err(Error::MissingFile(_))));
    }

    #[test]
    fn validation_errors() {
        let bad_rounds = MINIMAL.replace("\"task\"", "\"run\": {\"n_rounds\": 0}, \"task\"");
        assert!(matches!(ExperimentConfig::from_json(&bad_rounds, "."), Err(Error::Config(_))));
        let unknown = MINIMAL.replace("\"task\"", "\"bogus\": 1, \"task\"");
        assert!(matches!(ExperimentConfig::from_json(&unknown, "."), Err(Error::Config(_))));
        let missing = r#"{"task": "classify", "data": {"source": {"kind": "csv", "path": "missing.csv"}}}"#;
        assert!(matches!(ExperimentConfig::from_json(missing, "/tmp"), Err(Error::MissingFile(_))));
        let mismatch = MINIMAL.replace("classify", "regress");
        assert!(ExperimentConfig::from_json(&mismatch, ".").is_err());
        assert!(matches!(ExperimentConfig::load("/nonexistent/cfg.json"), Err(Error::MissingFile(_))));
    }
}
