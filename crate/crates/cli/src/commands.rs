//! Command implementations. Each resolves to a pure function of its config
//! (and input files) producing named output payloads.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};

use eyecal::bench::{
    run_real_protocol, run_sim_protocol, sweep_classical_noise, sweep_pnp_noise,
    synthetic_real_world_data, unit_rng, OracleEstimator, ProtocolReport, RealWorldData,
    SingleImageEstimator,
};
use eyecal::fusion::fuse_estimates_detailed;
use eyecal::geometry::RigidTransform;
use eyecal::handeye::{build_motion_pairs, calibrate, CalibrationSample};
use eyecal::metrics::{indirect_spread_error, pooled_spread_error, position_error, rotation_error};
use eyecal::synth::{generate_scenario, perturb_pose, sample_extrinsic};

use crate::config::*;
use crate::{classify, Failure};

/// A fully resolved command, as recorded in a run manifest.
#[derive(Clone, Debug, PartialEq)]
pub enum CommandKind {
    Calibrate(CalibrateConfig),
    Fuse(FuseConfig),
    Eval(EvalConfig),
    Simulate(SimulateConfig),
    SweepClassical(ClassicalSweepOpts),
    SweepPnp(PnpSweepOpts),
    ProtocolSim(SimProtocolOpts),
    ProtocolReal(RealProtocolOpts),
}

impl CommandKind {
    pub fn name(&self) -> &'static str {
        match self {
            CommandKind::Calibrate(_) => "calibrate",
            CommandKind::Fuse(_) => "fuse",
            CommandKind::Eval(_) => "eval",
            CommandKind::Simulate(_) => "simulate",
            CommandKind::SweepClassical(_) => "sweep classical",
            CommandKind::SweepPnp(_) => "sweep pnp",
            CommandKind::ProtocolSim(_) => "protocol sim",
            CommandKind::ProtocolReal(_) => "protocol real",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            CommandKind::Calibrate(_) | CommandKind::Fuse(_) | CommandKind::Eval(_) => None,
            CommandKind::Simulate(c) => Some(c.seed),
            CommandKind::SweepClassical(c) => Some(c.seed),
            CommandKind::SweepPnp(c) => Some(c.seed),
            CommandKind::ProtocolSim(c) => Some(c.seed),
            CommandKind::ProtocolReal(c) => Some(c.seed),
        }
    }

    pub fn config_json(&self) -> serde_json::Value {
        let v = match self {
            CommandKind::Calibrate(c) => serde_json::to_value(c),
            CommandKind::Fuse(c) => serde_json::to_value(c),
            CommandKind::Eval(c) => serde_json::to_value(c),
            CommandKind::Simulate(c) => serde_json::to_value(c),
            CommandKind::SweepClassical(c) => serde_json::to_value(c),
            CommandKind::SweepPnp(c) => serde_json::to_value(c),
            CommandKind::ProtocolSim(c) => serde_json::to_value(c),
            CommandKind::ProtocolReal(c) => serde_json::to_value(c),
        };
        v.expect("configs serialize to JSON")
    }

    pub fn from_parts(name: &str, config: serde_json::Value) -> anyhow::Result<Self> {
        use serde_json::from_value as v;
        Ok(match name {
            "calibrate" => CommandKind::Calibrate(v(config)?),
            "fuse" => CommandKind::Fuse(v(config)?),
            "eval" => CommandKind::Eval(v(config)?),
            "simulate" => CommandKind::Simulate(v(config)?),
            "sweep classical" => CommandKind::SweepClassical(v(config)?),
            "sweep pnp" => CommandKind::SweepPnp(v(config)?),
            "protocol sim" => CommandKind::ProtocolSim(v(config)?),
            "protocol real" => CommandKind::ProtocolReal(v(config)?),
            other => return Err(anyhow!("unknown command '{other}' in manifest")),
        })
    }

    /// Generators write files even without `--out-dir`; the per-item
    /// commands print to standard output instead.
    pub fn default_out_dir(&self) -> Option<PathBuf> {
        match self {
            CommandKind::Calibrate(_) | CommandKind::Fuse(_) | CommandKind::Eval(_) => None,
            _ => Some(PathBuf::from(".")),
        }
    }
}

#[derive(Debug, Default)]
pub struct Output {
    /// File name and contents.
    pub files: Vec<(String, Vec<u8>)>,
    /// Input files read, for the manifest digests.
    pub inputs: Vec<PathBuf>,
    /// Human-readable lines for the error stream.
    pub summary: Vec<String>,
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("outputs serialize to JSON");
    bytes.push(b'\n');
    bytes
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T, Failure> {
    if path.as_os_str().is_empty() {
        return Err(Failure::Config(anyhow!("no {what} file given")));
    }
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {what} {}", path.display()))
        .map_err(Failure::Config)?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing {what} {}", path.display()))
        .map_err(Failure::Config)
}

fn lib<T>(r: eyecal::Result<T>, what: &str) -> Result<T, Failure> {
    r.map_err(|e| classify(anyhow::Error::new(e).context(what.to_string())))
}

/// Config problems are exit-code 2 even when the library reports them as
/// insufficient data.
fn validate(r: eyecal::Result<()>) -> Result<(), Failure> {
    r.map_err(|e| Failure::Config(anyhow::Error::new(e).context("invalid config")))
}

/// A handeye dataset: a bare sample array or any object with `samples`
/// (such as a simulated scenario).
#[derive(Deserialize)]
#[serde(untagged)]
enum DatasetFile {
    Plain(Vec<CalibrationSample>),
    Wrapped { samples: Vec<CalibrationSample> },
}

impl DatasetFile {
    fn into_samples(self) -> Vec<CalibrationSample> {
        match self {
            DatasetFile::Plain(s) | DatasetFile::Wrapped { samples: s } => s,
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TransformFile {
    One(RigidTransform),
    Many(Vec<RigidTransform>),
}

#[derive(Serialize)]
struct Stat {
    mean: f64,
    max: f64,
}

impl Stat {
    fn of(v: &[f64]) -> Self {
        Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            max: v.iter().copied().fold(0.0, f64::max),
        }
    }
}

#[derive(Serialize)]
struct Residuals {
    pairs: usize,
    rotation_deg: Stat,
    translation_mm: Stat,
}

#[derive(Serialize)]
struct CalibrationOutput {
    method: String,
    strategy: eyecal::handeye::PairStrategy,
    extrinsic: RigidTransform,
    residuals: Residuals,
}

fn cmd_calibrate(c: &CalibrateConfig) -> Result<Output, Failure> {
    if c.methods.is_empty() {
        return Err(Failure::Config(anyhow!("no calibration method selected")));
    }
    let samples = read_json::<DatasetFile>(&c.dataset, "dataset")?.into_samples();
    let mut results = Vec::new();
    let mut summary = Vec::new();
    for &method in &c.methods {
        let x = lib(
            calibrate(&samples, method, c.strategy),
            &format!("{method} calibration"),
        )?;
        let pairs = lib(build_motion_pairs(&samples, c.strategy), "motion pairs")?;
        let (rot, trans): (Vec<f64>, Vec<f64>) = pairs
            .iter()
            .map(|p| {
                let (r, t) = p.residual(&x);
                (r.to_degrees(), t * 1e3)
            })
            .unzip();
        let residuals = Residuals {
            pairs: pairs.len(),
            rotation_deg: Stat::of(&rot),
            translation_mm: Stat::of(&trans),
        };
        summary.push(format!(
            "{method}: {} pairs, mean residual {:.3e} deg / {:.3e} mm",
            residuals.pairs, residuals.rotation_deg.mean, residuals.translation_mm.mean
        ));
        results.push(CalibrationOutput {
            method: method.to_string(),
            strategy: c.strategy,
            extrinsic: x,
            residuals,
        });
    }
    let bytes = if results.len() == 1 {
        json_bytes(&results[0])
    } else {
        json_bytes(&results)
    };
    Ok(Output {
        files: vec![("extrinsic.json".into(), bytes)],
        inputs: vec![c.dataset.clone()],
        summary,
    })
}

fn cmd_fuse(c: &FuseConfig) -> Result<Output, Failure> {
    let estimates: Vec<RigidTransform> = read_json(&c.estimates, "estimates")?;
    let out = lib(
        fuse_estimates_detailed(&estimates, c.discard_fraction),
        "fusion",
    )?;
    Ok(Output {
        files: vec![("fused.json".into(), json_bytes(&out.fused))],
        inputs: vec![c.estimates.clone()],
        summary: vec![format!(
            "fused {} estimates, discarded {:?}",
            estimates.len(),
            out.discarded
        )],
    })
}

#[derive(Serialize)]
struct EvalRow {
    index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    e_t_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    e_r_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eps_std_mm: Option<f64>,
}

#[derive(Serialize)]
struct EvalOutput {
    estimates: Vec<EvalRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pooled_eps_std_mm: Option<f64>,
}

fn cmd_eval(c: &EvalConfig) -> Result<Output, Failure> {
    if c.truth.is_none() && c.eval_set.is_none() {
        return Err(Failure::Config(anyhow!(
            "eval needs --truth and/or --eval-set"
        )));
    }
    let estimates = match read_json::<TransformFile>(&c.estimate, "estimate")? {
        TransformFile::One(t) => vec![t],
        TransformFile::Many(v) => v,
    };
    let mut inputs = vec![c.estimate.clone()];
    let truth: Option<RigidTransform> = match &c.truth {
        Some(p) => {
            inputs.push(p.clone());
            Some(read_json(p, "truth")?)
        }
        None => None,
    };
    let eval_set = match &c.eval_set {
        Some(p) => {
            inputs.push(p.clone());
            Some(read_json::<DatasetFile>(p, "evaluation set")?.into_samples())
        }
        None => None,
    };
    let mut rows = Vec::new();
    for (index, x) in estimates.iter().enumerate() {
        let eps = match &eval_set {
            Some(set) => Some(lib(indirect_spread_error(x, set), "spread error")? * 1e3),
            None => None,
        };
        rows.push(EvalRow {
            index,
            e_t_mm: truth.map(|t| position_error(x, &t) * 1e3),
            e_r_deg: truth.map(|t| rotation_error(x, &t).to_degrees()),
            eps_std_mm: eps,
        });
    }
    let pooled = match &eval_set {
        Some(set) if estimates.len() > 1 => {
            Some(lib(pooled_spread_error(&estimates, set), "spread error")? * 1e3)
        }
        _ => None,
    };
    Ok(Output {
        files: vec![(
            "eval.json".into(),
            json_bytes(&EvalOutput {
                estimates: rows,
                pooled_eps_std_mm: pooled,
            }),
        )],
        inputs,
        summary: Vec::new(),
    })
}

fn cmd_simulate(c: &SimulateConfig) -> Result<Output, Failure> {
    let cfg = c.scenario.to_core(c.seed);
    validate(cfg.validate())?;
    let noise = noise_spec(&c.tag_noise, None);
    validate(noise.validate())?;
    let mut rng = unit_rng(c.seed, 0, 0);
    let truth = c
        .truth_extrinsic
        .unwrap_or_else(|| sample_extrinsic(&cfg, &mut rng));
    let mut scenario = lib(
        generate_scenario(&cfg, &truth, &mut rng),
        "scenario generation",
    )?;
    let mut noise_rng = unit_rng(c.seed, 0, 1);
    for s in scenario.samples.iter_mut() {
        s.t_co = perturb_pose(
            &s.t_co,
            noise.tag_trans_mag,
            noise.tag_rot_mag,
            &mut noise_rng,
        );
    }
    Ok(Output {
        files: vec![("scenario.json".into(), json_bytes(&scenario))],
        inputs: Vec::new(),
        summary: vec![format!(
            "{} samples, seed {}",
            scenario.samples.len(),
            c.seed
        )],
    })
}

fn cmd_sweep_classical(c: &ClassicalSweepOpts) -> Result<Output, Failure> {
    validate(c.scenario.to_core(c.seed).validate())?;
    let report = lib(sweep_classical_noise(&c.to_core()), "classical sweep")?;
    Ok(Output {
        files: vec![("sweep_classical.csv".into(), report.to_csv().into_bytes())],
        inputs: Vec::new(),
        summary: vec![format!(
            "{} tiers x {} scenarios",
            report.tiers.len(),
            report.scenarios
        )],
    })
}

fn cmd_sweep_pnp(c: &PnpSweepOpts) -> Result<Output, Failure> {
    validate(c.scenario.to_core(c.seed).validate())?;
    let report = lib(sweep_pnp_noise(&c.to_core()), "PnP sweep")?;
    Ok(Output {
        files: vec![("sweep_pnp.csv".into(), report.to_csv().into_bytes())],
        inputs: Vec::new(),
        summary: vec![format!(
            "{} tiers x {} poses",
            report.tiers.len(),
            report.scenarios
        )],
    })
}

fn oracle(opts: Option<&OracleOpts>) -> Result<Option<OracleEstimator>, Failure> {
    let Some(o) = opts else { return Ok(None) };
    let noise = noise_spec(&TagNoiseOpts::default(), Some(o));
    validate(noise.validate())?;
    Ok(Some(OracleEstimator { noise }))
}

fn table(report: &ProtocolReport) -> Vec<String> {
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
    report
        .rows
        .iter()
        .map(|r| {
            format!(
                "{:<20} e_t {} mm  e_R {} deg  eps_std {} mm  (n {}, failures {})",
                r.label,
                fmt(r.e_t_mm.map(|s| s.mean)),
                fmt(r.e_r_deg.map(|s| s.mean)),
                fmt(r.eps_std_mm),
                r.evaluations,
                r.failures
            )
        })
        .collect()
}

fn cmd_protocol_sim(c: &SimProtocolOpts) -> Result<Output, Failure> {
    let cfg = c.to_core();
    validate(cfg.noise.validate())?;
    validate(ScenarioConfigCheck::with_samples(
        &cfg.scenario,
        cfg.samples,
    ))?;
    let oracle = oracle(c.oracle.as_ref())?;
    let estimators: Vec<&dyn SingleImageEstimator> = oracle
        .iter()
        .map(|o| o as &dyn SingleImageEstimator)
        .collect();
    let report = lib(run_sim_protocol(&cfg, &estimators), "simulated protocol")?;
    Ok(Output {
        summary: table(&report),
        files: vec![("protocol_sim.json".into(), json_bytes(&report))],
        inputs: Vec::new(),
    })
}

fn cmd_protocol_real(c: &RealProtocolOpts) -> Result<Output, Failure> {
    let cfg = c.to_core();
    let (data, inputs) = match &c.data {
        Some(path) => (
            read_json::<RealWorldData>(path, "protocol data")?,
            vec![path.clone()],
        ),
        None => {
            let scenario = c.scenario.to_core(c.seed);
            validate(ScenarioConfigCheck::with_samples(
                &scenario,
                cfg.bank + cfg.eval,
            ))?;
            let noise = noise_spec(&c.tag_noise, None);
            validate(noise.validate())?;
            (
                lib(
                    synthetic_real_world_data(&cfg, &scenario, &noise),
                    "synthetic data",
                )?,
                Vec::new(),
            )
        }
    };
    if cfg.samples > data.bank.len() || cfg.datasets == 0 || data.eval.is_empty() {
        return Err(Failure::Config(anyhow!(
            "protocol needs datasets >= 1, samples <= bank size ({}) and a non-empty eval set",
            data.bank.len()
        )));
    }
    let oracle = oracle(c.oracle.as_ref())?;
    let estimators: Vec<&dyn SingleImageEstimator> = oracle
        .iter()
        .map(|o| o as &dyn SingleImageEstimator)
        .collect();
    let report = lib(
        run_real_protocol(&cfg, &data, &estimators),
        "real-world protocol",
    )?;
    Ok(Output {
        summary: table(&report),
        files: vec![("protocol_real.json".into(), json_bytes(&report))],
        inputs,
    })
}

/// Validates a scenario config with the sample count the run will use.
struct ScenarioConfigCheck;

impl ScenarioConfigCheck {
    fn with_samples(cfg: &eyecal::synth::ScenarioConfig, samples: usize) -> eyecal::Result<()> {
        eyecal::synth::ScenarioConfig { samples, ..*cfg }.validate()
    }
}

pub fn execute(kind: &CommandKind) -> Result<Output, Failure> {
    match kind {
        CommandKind::Calibrate(c) => cmd_calibrate(c),
        CommandKind::Fuse(c) => cmd_fuse(c),
        CommandKind::Eval(c) => cmd_eval(c),
        CommandKind::Simulate(c) => cmd_simulate(c),
        CommandKind::SweepClassical(c) => cmd_sweep_classical(c),
        CommandKind::SweepPnp(c) => cmd_sweep_pnp(c),
        CommandKind::ProtocolSim(c) => cmd_protocol_sim(c),
        CommandKind::ProtocolReal(c) => cmd_protocol_real(c),
    }
}
