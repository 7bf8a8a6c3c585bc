//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 invalid input (bad flags, missing or malformed
//! files, invalid config), 2 failure while running.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::belief::BeliefSnapshot;
use crate::data::{convert_scans, load_labeled_csv};
use crate::error::{Error, Result};
use crate::features::KernelModel;
use crate::network::GraphSpec;
use crate::sim::{default_out_dir, evaluate_with_xi, export_feature_stats, export_grid, run_experiment, ExperimentConfig};
use crate::verify::{example1, run_suite, Suite};
use crate::vi::DEFAULT_XI;

#[derive(Debug, Parser)]
#[command(name = "dgvi", version, about = "Distributed Gaussian variational inference toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides run.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides export.out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Score a saved belief on a labeled CSV.
    Eval {
        #[arg(long)]
        belief: PathBuf,
        #[arg(long)]
        kernel: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = DEFAULT_XI)]
        xi: f64,
    },
    /// Check the numerical core against independent oracles.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the example1 particle cloud here as JSON.
        #[arg(long)]
        particles: Option<PathBuf>,
    },
    /// Write an occupancy probability grid for a saved belief.
    Export {
        #[arg(long)]
        belief: PathBuf,
        #[arg(long)]
        kernel: PathBuf,
        #[arg(long, num_args = 4, value_names = ["XMIN", "XMAX", "YMIN", "YMAX"], allow_negative_numbers = true)]
        bounds: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        resolution: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-center mean and variance.
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Turn a graph file into a doubly stochastic weight matrix.
    NormalizeGraph {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Convert LiDAR scans (JSON lines) to labeled points (CSV).
    ConvertLidar {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 4)]
        n_free: usize,
        #[arg(long, default_value_t = 0.0)]
        hit_epsilon: f64,
    },
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

#[derive(Serialize)]
struct EvalReport {
    n: usize,
    accuracy: f64,
    bce: f64,
}

#[derive(Serialize)]
struct NormalizedGraph {
    n: usize,
    weights: Vec<Vec<f64>>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Run {
            config,
            seed,
            out,
            threads,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            if threads.is_some() {
                cfg.run.threads = threads;
            }
            cfg.validate()?;
            let out_dir = out.unwrap_or_else(|| default_out_dir(&cfg));
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            write_text(&out_dir.join("config.json"), &serde_json::to_string_pretty(&cfg)?)?;
            let summary = run_experiment(&cfg, &out_dir)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(0)
        }
        Command::Eval {
            belief,
            kernel,
            data,
            xi,
        } => {
            let belief = BeliefSnapshot::load(&belief)?.into_belief()?;
            let model = KernelModel::load(&kernel)?;
            let points = load_labeled_csv(&data)?;
            let e = evaluate_with_xi(&belief, &model, &points, xi)?;
            let report = EvalReport {
                n: points.len(),
                accuracy: e.accuracy,
                bce: e.bce,
            };
            println!("{}", serde_json::to_string(&report)?);
            Ok(0)
        }
        Command::Verify { suite, seed, particles } => {
            let mut checks = run_suite(suite, seed)?;
            if let Some(path) = particles {
                let (c, cloud, exact) = example1(seed, 100_000)?;
                if !matches!(suite, Suite::Example1 | Suite::All) {
                    checks.extend(c);
                }
                write_text(&path, &cloud.to_json(Some(&exact))?)?;
            }
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            let io = |e| Error::io("<stdout>", e);
            for c in &checks {
                writeln!(out, "{c}").map_err(io)?;
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            writeln!(out, "{} passed, {failed} failed", checks.len() - failed).map_err(io)?;
            Ok(if failed == 0 { 0 } else { 2 })
        }
        Command::Export {
            belief,
            kernel,
            bounds,
            resolution,
            out,
            features,
        } => {
            let belief = BeliefSnapshot::load(&belief)?.into_belief()?;
            let model = KernelModel::load(&kernel)?;
            let b = [bounds[0], bounds[1], bounds[2], bounds[3]];
            export_grid(&belief, &model, b, resolution, &out)?;
            if let Some(f) = features {
                export_feature_stats(&belief, &model, &f)?;
            }
            Ok(0)
        }
        Command::NormalizeGraph { input, output } => {
            let spec = GraphSpec::load(&input)?;
            let w = spec.build()?;
            let weights = w.entries().row_iter().map(|r| r.iter().copied().collect()).collect();
            let text = serde_json::to_string_pretty(&NormalizedGraph { n: w.size(), weights })?;
            write_text(&output, &text)?;
            Ok(0)
        }
        Command::ConvertLidar {
            input,
            output,
            n_free,
            hit_epsilon,
        } => {
            let n = convert_scans(&input, &output, n_free, hit_epsilon)?;
            eprintln!("wrote {n} points to {}", output.display());
            Ok(0)
        }
    }
}
