//! `eyecal`: batch command-line surface of the calibration toolkit.
//!
//! Exit codes: 0 success, 1 replay mismatch or I/O failure while writing,
//! 2 usage/config/parse errors, 3 numerical or degeneracy failures.

mod commands;
mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use eyecal::handeye::{HandEyeMethod, PairStrategy};

use crate::commands::{CommandKind, Output};
use crate::config::*;
use crate::manifest::RunManifest;

#[derive(Parser, Debug)]
#[command(
    name = "eyecal",
    version,
    about = "Eye-in-hand camera calibration toolkit"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// RNG seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the Monte-Carlo runs (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON config file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for outputs and the run manifest.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve AX = XB from a dataset of {t_be, t_co} samples.
    Calibrate {
        dataset: Option<PathBuf>,
        /// tsai, park, horaud, daniilidis or all.
        #[arg(long)]
        method: Option<String>,
        /// all-pairs or consecutive.
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Fuse independent extrinsic estimates into one.
    Fuse {
        estimates: Option<PathBuf>,
        #[arg(long)]
        discard_fraction: Option<f64>,
    },
    /// Generate a synthetic calibration scenario.
    Simulate {
        #[arg(long)]
        samples: Option<usize>,
        /// Exact tag translation noise, mm.
        #[arg(long)]
        tag_noise_mm: Option<f64>,
        /// Exact tag rotation noise, degrees.
        #[arg(long)]
        tag_noise_deg: Option<f64>,
    },
    /// Noise-sensitivity sweeps.
    #[command(subcommand)]
    Sweep(SweepCommand),
    /// Benchmark protocols.
    #[command(subcommand)]
    Protocol(ProtocolCommand),
    /// Score estimates against a ground truth and/or an evaluation set.
    Eval {
        estimate: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        eval_set: Option<PathBuf>,
    },
    /// Re-run a manifest and check that every output is reproduced exactly.
    Replay { manifest: PathBuf },
}

#[derive(Subcommand, Debug)]
enum SweepCommand {
    /// Tag-pose noise against the classical solvers.
    Classical {
        #[arg(long)]
        scenarios: Option<usize>,
    },
    /// Keypoint pixel noise against PnP + RANSAC.
    Pnp {
        #[arg(long)]
        poses: Option<usize>,
    },
}

#[derive(Subcommand, Debug)]
enum ProtocolCommand {
    /// Simulated experiment with known ground truth.
    Sim {
        #[arg(long)]
        n_extrinsics: Option<usize>,
        #[arg(long)]
        tag_noise_mm: Option<f64>,
        #[arg(long)]
        tag_noise_deg: Option<f64>,
        #[arg(long)]
        oracle_sigma_mm: Option<f64>,
        #[arg(long)]
        oracle_sigma_deg: Option<f64>,
    },
    /// Ground-truth-free experiment scored by the tag-position spread.
    Real {
        /// Recorded `{bank, eval, truth_extrinsic?}` file.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        datasets: Option<usize>,
        #[arg(long)]
        oracle_sigma_mm: Option<f64>,
        #[arg(long)]
        oracle_sigma_deg: Option<f64>,
    },
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Config(anyhow::Error),
    Numerical(anyhow::Error),
    Mismatch(String),
    Io(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Mismatch(_) | Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) | Failure::Numerical(e) | Failure::Io(e) => write!(f, "{e:#}"),
            Failure::Mismatch(m) => f.write_str(m),
        }
    }
}

/// Library errors split on [`eyecal::Error::is_numerical`]; anything else
/// (parse, I/O on inputs) is a configuration problem.
pub(crate) fn classify(e: anyhow::Error) -> Failure {
    match e.downcast_ref::<eyecal::Error>() {
        Some(lib) if lib.is_numerical() => Failure::Numerical(e),
        _ => Failure::Config(e),
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(config_err)?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))
        .map_err(config_err)
}

fn parse_methods(s: &str) -> Result<Vec<HandEyeMethod>, Failure> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(HandEyeMethod::ALL.to_vec());
    }
    s.split(',')
        .map(|m| m.trim().parse::<HandEyeMethod>().map_err(config_err))
        .collect()
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn oracle_override(slot: &mut Option<OracleOpts>, mm: Option<f64>, deg: Option<f64>) {
    if mm.is_some() || deg.is_some() {
        let o = slot.get_or_insert_with(OracleOpts::default);
        set(&mut o.trans_sigma_mm, mm);
        set(&mut o.rot_sigma_deg, deg);
    }
}

/// Merges config file and flags into a fully resolved command.
fn resolve(cli: &Cli) -> Result<CommandKind, Failure> {
    let cfg = cli.common.config.as_deref();
    let seed = cli.common.seed;
    Ok(match &cli.command {
        Command::Calibrate {
            dataset,
            method,
            strategy,
        } => {
            let mut c: CalibrateConfig = load_config(cfg)?;
            set(&mut c.dataset, dataset.clone());
            if let Some(m) = method {
                c.methods = parse_methods(m)?;
            }
            if let Some(s) = strategy {
                c.strategy = s.parse::<PairStrategy>().map_err(config_err)?;
            }
            CommandKind::Calibrate(c)
        }
        Command::Fuse {
            estimates,
            discard_fraction,
        } => {
            let mut c: FuseConfig = load_config(cfg)?;
            set(&mut c.estimates, estimates.clone());
            set(&mut c.discard_fraction, *discard_fraction);
            CommandKind::Fuse(c)
        }
        Command::Eval {
            estimate,
            truth,
            eval_set,
        } => {
            let mut c: EvalConfig = load_config(cfg)?;
            set(&mut c.estimate, estimate.clone());
            if truth.is_some() {
                c.truth = truth.clone();
            }
            if eval_set.is_some() {
                c.eval_set = eval_set.clone();
            }
            CommandKind::Eval(c)
        }
        Command::Simulate {
            samples,
            tag_noise_mm,
            tag_noise_deg,
        } => {
            let mut c: SimulateConfig = load_config(cfg)?;
            set(&mut c.seed, seed);
            set(&mut c.scenario.samples, *samples);
            set(&mut c.tag_noise.trans_mm, *tag_noise_mm);
            set(&mut c.tag_noise.rot_deg, *tag_noise_deg);
            CommandKind::Simulate(c)
        }
        Command::Sweep(SweepCommand::Classical { scenarios }) => {
            let mut c: ClassicalSweepOpts = load_config(cfg)?;
            set(&mut c.seed, seed);
            set(&mut c.scenarios, *scenarios);
            CommandKind::SweepClassical(c)
        }
        Command::Sweep(SweepCommand::Pnp { poses }) => {
            let mut c: PnpSweepOpts = load_config(cfg)?;
            set(&mut c.seed, seed);
            set(&mut c.poses, *poses);
            CommandKind::SweepPnp(c)
        }
        Command::Protocol(ProtocolCommand::Sim {
            n_extrinsics,
            tag_noise_mm,
            tag_noise_deg,
            oracle_sigma_mm,
            oracle_sigma_deg,
        }) => {
            let mut c: SimProtocolOpts = load_config(cfg)?;
            set(&mut c.seed, seed);
            set(&mut c.n_extrinsics, *n_extrinsics);
            set(&mut c.tag_noise.trans_mm, *tag_noise_mm);
            set(&mut c.tag_noise.rot_deg, *tag_noise_deg);
            oracle_override(&mut c.oracle, *oracle_sigma_mm, *oracle_sigma_deg);
            CommandKind::ProtocolSim(c)
        }
        Command::Protocol(ProtocolCommand::Real {
            data,
            datasets,
            oracle_sigma_mm,
            oracle_sigma_deg,
        }) => {
            let mut c: RealProtocolOpts = load_config(cfg)?;
            set(&mut c.seed, seed);
            if data.is_some() {
                c.data = data.clone();
            }
            set(&mut c.datasets, *datasets);
            oracle_override(&mut c.oracle, *oracle_sigma_mm, *oracle_sigma_deg);
            CommandKind::ProtocolReal(c)
        }
        Command::Replay { .. } => unreachable!("replay is dispatched separately"),
    })
}

fn write_outputs(
    kind: &CommandKind,
    output: &Output,
    out_dir: Option<&Path>,
    started: f64,
) -> Result<Option<RunManifest>, Failure> {
    let Some(dir) = out_dir
        .map(Path::to_path_buf)
        .or_else(|| kind.default_out_dir())
    else {
        // No directory: the single payload goes to standard output.
        use std::io::Write;
        let mut stdout = std::io::stdout().lock();
        for (_, bytes) in &output.files {
            stdout.write_all(bytes).map_err(|e| Failure::Io(e.into()))?;
        }
        return Ok(None);
    };
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(Failure::Io)?;
    for (name, bytes) in &output.files {
        let path = dir.join(name);
        std::fs::write(&path, bytes)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(Failure::Io)?;
        eprintln!("wrote {}", path.display());
    }
    let manifest = RunManifest::new(kind, output, started);
    let path = dir.join(manifest::MANIFEST_FILE);
    std::fs::write(&path, manifest.to_json())
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Io)?;
    Ok(Some(manifest))
}

fn run_kind(kind: &CommandKind, out_dir: Option<&Path>) -> Result<Option<RunManifest>, Failure> {
    let started = manifest::now();
    let output = commands::execute(kind)?;
    for line in &output.summary {
        eprintln!("{line}");
    }
    write_outputs(kind, &output, out_dir, started)
}

fn replay(path: &Path, out_dir: Option<&Path>) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading manifest {}", path.display()))
        .map_err(config_err)?;
    let recorded: RunManifest = serde_json::from_str(&text)
        .with_context(|| format!("parsing manifest {}", path.display()))
        .map_err(config_err)?;
    let kind = recorded.command_kind().map_err(config_err)?;
    recorded.verify_inputs().map_err(config_err)?;
    let dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).join("replay"));
    let fresh = run_kind(&kind, Some(&dir))?.expect("replay always writes a manifest");
    let diffs = recorded.output_differences(&fresh);
    if diffs.is_empty() {
        eprintln!(
            "replay reproduced {} output(s) exactly",
            fresh.outputs.len()
        );
        Ok(())
    } else {
        Err(Failure::Mismatch(format!(
            "replay differs: {}",
            diffs.join(", ")
        )))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(config_err(anyhow::anyhow!("--threads must be >= 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Io(e.into()))?;
    }
    if let Command::Replay { manifest } = &cli.command {
        return replay(manifest, cli.common.out_dir.as_deref());
    }
    let kind = resolve(&cli)?;
    run_kind(&kind, cli.common.out_dir.as_deref()).map(|_| ())
}

fn main() -> ExitCode {
    // clap exits with code 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
