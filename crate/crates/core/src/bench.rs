//! Experiment protocols and noise-sensitivity sweeps.
//!
//! Every run is a pure function of its config and seed. Work units
//! (scenarios, poses) draw from their own ChaCha streams keyed by
//! `(unit index, purpose)`, run in parallel on the ambient rayon pool, and
//! are reduced sequentially in index order, so reports are bit-identical at
//! any thread count.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{fuse_estimates_detailed, DEFAULT_DISCARD_FRACTION};
use crate::geometry::{CameraIntrinsics, RigidTransform};
use crate::handeye::{calibrate, CalibrationSample, HandEyeMethod, PairStrategy};
use crate::metrics::{indirect_spread_error, pooled_spread_error, position_error, rotation_error};
use crate::pnp::{
    rim_filter, solve_pnp_ransac, KeypointModel, KeypointSubset, RansacParams, DEFAULT_RIM_MARGIN,
};
use crate::synth::{
    generate_scenario, oracle_perturb, perturb_keypoints, perturb_pose, render_keypoints,
    sample_extrinsic, synthetic_gripper, NoiseSpec, Scenario, ScenarioConfig,
};

/// RNG stream purposes. Each work unit owns the streams
/// `unit * STREAMS_PER_UNIT + purpose`.
const STREAMS_PER_UNIT: u64 = 64;
const STREAM_SCENARIO: u64 = 0;
const STREAM_TAG_NOISE: u64 = 1;
const STREAM_KEYPOINTS: u64 = 2;
const STREAM_RANSAC: u64 = 3;
const STREAM_DATASETS: u64 = 4;
const STREAM_ESTIMATOR: u64 = 8;

pub fn unit_rng(seed: u64, unit: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(unit as u64 * STREAMS_PER_UNIT + purpose);
    rng
}

/// A method row in a report.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodId {
    Classical(HandEyeMethod),
    Oracle,
    OracleFused,
    /// A plugged-in single-image estimator, printed as `ext:<name>`.
    External {
        name: String,
        fused: bool,
    },
}

impl MethodId {
    pub fn classical() -> impl Iterator<Item = MethodId> {
        HandEyeMethod::ALL.into_iter().map(MethodId::Classical)
    }

    /// The id of the fused variant of a single-image method.
    pub fn fused(&self) -> Option<MethodId> {
        match self {
            MethodId::Oracle => Some(MethodId::OracleFused),
            MethodId::External { name, fused: false } => Some(MethodId::External {
                name: name.clone(),
                fused: true,
            }),
            _ => None,
        }
    }

    /// Human-readable row label.
    pub fn label(&self) -> String {
        match self {
            MethodId::Classical(m) => m.name().to_string(),
            MethodId::Oracle => "Oracle".into(),
            MethodId::OracleFused => "Oracle (fusion)".into(),
            MethodId::External { name, fused: false } => name.clone(),
            MethodId::External { name, fused: true } => format!("{name} (fusion)"),
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodId::Classical(m) => write!(f, "{}", m.name().to_ascii_lowercase()),
            MethodId::Oracle => f.write_str("oracle"),
            MethodId::OracleFused => f.write_str("oracle+fusion"),
            MethodId::External { name, fused: false } => write!(f, "ext:{name}"),
            MethodId::External { name, fused: true } => write!(f, "ext:{name}+fusion"),
        }
    }
}

impl FromStr for MethodId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("ext:") {
            let (name, fused) = match rest.strip_suffix("+fusion") {
                Some(n) => (n, true),
                None => (rest, false),
            };
            if name.is_empty() {
                return Err(Error::InvalidInput("empty external estimator name".into()));
            }
            return Ok(MethodId::External {
                name: name.to_string(),
                fused,
            });
        }
        match s.to_ascii_lowercase().as_str() {
            "oracle" => Ok(MethodId::Oracle),
            "oracle+fusion" => Ok(MethodId::OracleFused),
            other => other.parse().map(MethodId::Classical),
        }
    }
}

impl Serialize for MethodId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MethodId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// What a single-image estimator sees: one sample of a dataset and, in
/// simulation, the ground truth an oracle may use.
#[derive(Clone, Copy, Debug)]
pub struct EstimatorContext<'a> {
    pub samples: &'a [CalibrationSample],
    pub index: usize,
    pub truth: Option<&'a RigidTransform>,
}

/// An estimator of `T_EC` from a single observation. Implementations must
/// draw all randomness from `rng` to keep runs reproducible.
pub trait SingleImageEstimator: Sync {
    /// Id of the per-image rows; the fused rows use [`MethodId::fused`].
    fn id(&self) -> MethodId;
    fn estimate(&self, ctx: &EstimatorContext<'_>, rng: &mut ChaCha8Rng) -> Result<RigidTransform>;
}

/// Ground truth corrupted by the oracle noise model.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OracleEstimator {
    pub noise: NoiseSpec,
}

impl SingleImageEstimator for OracleEstimator {
    fn id(&self) -> MethodId {
        MethodId::Oracle
    }

    fn estimate(&self, ctx: &EstimatorContext<'_>, rng: &mut ChaCha8Rng) -> Result<RigidTransform> {
        let truth = ctx.truth.ok_or_else(|| {
            Error::InvalidInput("the oracle estimator needs a ground-truth extrinsic".into())
        })?;
        oracle_perturb(truth, &self.noise, rng)
    }
}

/// Mean and sample standard deviation (divisor `n - 1`, zero for `n < 2`).
/// Both are NaN when nothing was evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std }
    }

    fn scaled(self, k: f64) -> Self {
        Self {
            mean: self.mean * k,
            std: self.std * k,
        }
    }
}

/// Per-method error lists, kept in insertion order.
#[derive(Clone, Debug, Default)]
struct ErrorLog {
    rows: Vec<(MethodId, Vec<f64>, Vec<f64>, usize)>,
}

impl ErrorLog {
    fn entry(&mut self, id: &MethodId) -> &mut (MethodId, Vec<f64>, Vec<f64>, usize) {
        let pos = match self.rows.iter().position(|r| &r.0 == id) {
            Some(p) => p,
            None => {
                self.rows.push((id.clone(), Vec::new(), Vec::new(), 0));
                self.rows.len() - 1
            }
        };
        &mut self.rows[pos]
    }

    fn record(&mut self, id: &MethodId, est: &RigidTransform, truth: &RigidTransform) {
        let e = self.entry(id);
        e.1.push(position_error(est, truth));
        e.2.push(rotation_error(est, truth));
    }

    fn fail(&mut self, id: &MethodId) {
        self.entry(id).3 += 1;
    }
}

// ---------------------------------------------------------------------------
// Simulated protocol

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimProtocolConfig {
    pub n_extrinsics: usize,
    pub samples: usize,
    /// Tag-pose noise (`tag_*` fields) applied to every `T_CO`.
    pub noise: NoiseSpec,
    pub scenario: ScenarioConfig,
    pub strategy: PairStrategy,
    pub discard_fraction: f64,
    pub seed: u64,
}

impl Default for SimProtocolConfig {
    fn default() -> Self {
        Self {
            n_extrinsics: 100,
            samples: 15,
            noise: NoiseSpec::default(),
            scenario: ScenarioConfig::default(),
            strategy: PairStrategy::AllPairs,
            discard_fraction: DEFAULT_DISCARD_FRACTION,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRow {
    pub method: MethodId,
    pub label: String,
    /// Estimates produced.
    pub estimates: usize,
    /// Error evaluations behind the statistics below.
    pub evaluations: usize,
    /// Estimates that failed (solver errors); these are skipped.
    pub failures: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_t_mm: Option<Summary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_r_deg: Option<Summary>,
    /// Spread of every estimated tag position pooled over all estimates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_std_mm: Option<f64>,
    /// Spread per estimate, summarized across estimates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_std_per_estimate_mm: Option<Summary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Simulated,
    RealWorld,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub protocol: ProtocolKind,
    pub seed: u64,
    pub rows: Vec<ProtocolRow>,
    /// Bank indices of each sampled dataset (real-world protocol only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub datasets: Vec<Vec<usize>>,
    pub eval_size: usize,
}

impl ProtocolReport {
    pub fn row(&self, id: &MethodId) -> Option<&ProtocolRow> {
        self.rows.iter().find(|r| &r.method == id)
    }
}

fn apply_tag_noise(
    samples: &[CalibrationSample],
    noise: &NoiseSpec,
    rng: &mut ChaCha8Rng,
) -> Vec<CalibrationSample> {
    samples
        .iter()
        .map(|s| CalibrationSample {
            t_be: s.t_be,
            t_co: perturb_pose(&s.t_co, noise.tag_trans_mag, noise.tag_rot_mag, rng),
        })
        .collect()
}

fn seeded_scenario(cfg: &ScenarioConfig, seed: u64, unit: usize) -> Result<Scenario> {
    let mut rng = unit_rng(seed, unit, STREAM_SCENARIO);
    let truth = sample_extrinsic(cfg, &mut rng);
    generate_scenario(cfg, &truth, &mut rng)
}

/// Simulated experiment: per sampled extrinsic, the classical methods
/// calibrate from the noisy dataset and every single-image estimator
/// produces one estimate per sample plus a fused estimate.
pub fn run_sim_protocol(
    cfg: &SimProtocolConfig,
    estimators: &[&dyn SingleImageEstimator],
) -> Result<ProtocolReport> {
    if cfg.n_extrinsics == 0 {
        return Err(Error::InvalidInput("n_extrinsics must be >= 1".into()));
    }
    cfg.noise.validate()?;
    let scenario_cfg = ScenarioConfig {
        samples: cfg.samples,
        seed: cfg.seed,
        ..cfg.scenario
    };
    scenario_cfg.validate()?;

    let per_scenario: Vec<Result<ErrorLog>> = (0..cfg.n_extrinsics)
        .into_par_iter()
        .map(|i| {
            let scenario = seeded_scenario(&scenario_cfg, cfg.seed, i)?;
            let truth = scenario.truth_extrinsic;
            let noisy = apply_tag_noise(
                &scenario.samples,
                &cfg.noise,
                &mut unit_rng(cfg.seed, i, STREAM_TAG_NOISE),
            );
            let mut log = ErrorLog::default();
            for method in HandEyeMethod::ALL {
                let id = MethodId::Classical(method);
                match calibrate(&noisy, method, cfg.strategy) {
                    Ok(x) => log.record(&id, &x, &truth),
                    Err(_) => log.fail(&id),
                }
            }
            for (m, est) in estimators.iter().enumerate() {
                let mut rng = unit_rng(cfg.seed, i, STREAM_ESTIMATOR + m as u64);
                let id = est.id();
                let fused_id = id.fused().ok_or_else(|| {
                    Error::InvalidInput(format!("estimator id {id} is not a single-image method"))
                })?;
                let mut singles = Vec::with_capacity(noisy.len());
                for k in 0..noisy.len() {
                    let ctx = EstimatorContext {
                        samples: &noisy,
                        index: k,
                        truth: Some(&truth),
                    };
                    match est.estimate(&ctx, &mut rng) {
                        Ok(x) => {
                            log.record(&id, &x, &truth);
                            singles.push(x);
                        }
                        Err(_) => log.fail(&id),
                    }
                }
                match fuse_estimates_detailed(&singles, cfg.discard_fraction) {
                    Ok(out) => log.record(&fused_id, &out.fused, &truth),
                    Err(_) => log.fail(&fused_id),
                }
            }
            Ok(log)
        })
        .collect();

    let mut total = ErrorLog::default();
    for log in per_scenario {
        for (id, et, er, failures) in log?.rows {
            let e = total.entry(&id);
            e.1.extend(et);
            e.2.extend(er);
            e.3 += failures;
        }
    }
    let rows = total
        .rows
        .into_iter()
        .map(|(method, et, er, failures)| ProtocolRow {
            label: method.label(),
            estimates: et.len() + failures,
            evaluations: et.len(),
            failures,
            e_t_mm: Some(Summary::of(&et).scaled(1e3)),
            e_r_deg: Some(Summary::of(&er).scaled(180.0 / std::f64::consts::PI)),
            eps_std_mm: None,
            eps_std_per_estimate_mm: None,
            method,
        })
        .collect();
    Ok(ProtocolReport {
        protocol: ProtocolKind::Simulated,
        seed: cfg.seed,
        rows,
        datasets: Vec::new(),
        eval_size: 0,
    })
}

// ---------------------------------------------------------------------------
// Real-world protocol

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RealProtocolConfig {
    pub bank: usize,
    pub eval: usize,
    pub datasets: usize,
    pub samples: usize,
    pub strategy: PairStrategy,
    pub discard_fraction: f64,
    pub seed: u64,
}

impl Default for RealProtocolConfig {
    fn default() -> Self {
        Self {
            bank: 40,
            eval: 60,
            datasets: 40,
            samples: 15,
            strategy: PairStrategy::AllPairs,
            discard_fraction: DEFAULT_DISCARD_FRACTION,
            seed: 0,
        }
    }
}

/// Recorded data for the real-world protocol. `truth_extrinsic` is only
/// known for synthetic sources and is what an oracle estimator consumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealWorldData {
    pub bank: Vec<CalibrationSample>,
    pub eval: Vec<CalibrationSample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_extrinsic: Option<RigidTransform>,
}

/// A synthetic stand-in for recorded data: one scenario of `bank + eval`
/// samples along a tag-facing trajectory, with tag-pose noise.
pub fn synthetic_real_world_data(
    cfg: &RealProtocolConfig,
    scenario: &ScenarioConfig,
    noise: &NoiseSpec,
) -> Result<RealWorldData> {
    noise.validate()?;
    let scenario_cfg = ScenarioConfig {
        samples: cfg.bank + cfg.eval,
        seed: cfg.seed,
        ..*scenario
    };
    let s = seeded_scenario(&scenario_cfg, cfg.seed, 0)?;
    let noisy = apply_tag_noise(
        &s.samples,
        noise,
        &mut unit_rng(cfg.seed, 0, STREAM_TAG_NOISE),
    );
    Ok(RealWorldData {
        bank: noisy[..cfg.bank].to_vec(),
        eval: noisy[cfg.bank..].to_vec(),
        truth_extrinsic: Some(s.truth_extrinsic),
    })
}

/// `datasets` index sets of `samples` distinct bank indices each; sets are
/// drawn independently of one another.
pub fn sample_datasets<R: Rng + ?Sized>(
    bank: usize,
    datasets: usize,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if samples > bank {
        return Err(Error::InsufficientData {
            needed: samples,
            got: bank,
        });
    }
    Ok((0..datasets)
        .map(|_| {
            let mut idx = sample(rng, bank, samples).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect())
}

/// Real-world experiment: classical and fused estimates per sampled dataset,
/// per-image estimates over the whole bank, all scored by the spread of the
/// tag position they imply over the evaluation set.
pub fn run_real_protocol(
    cfg: &RealProtocolConfig,
    data: &RealWorldData,
    estimators: &[&dyn SingleImageEstimator],
) -> Result<ProtocolReport> {
    if data.bank.len() < cfg.samples {
        return Err(Error::InsufficientData {
            needed: cfg.samples,
            got: data.bank.len(),
        });
    }
    if data.eval.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if cfg.datasets == 0 {
        return Err(Error::InvalidInput("datasets must be >= 1".into()));
    }
    let datasets = sample_datasets(
        data.bank.len(),
        cfg.datasets,
        cfg.samples,
        &mut unit_rng(cfg.seed, 0, STREAM_DATASETS),
    )?;
    let truth = data.truth_extrinsic.as_ref();

    // Stage 2: per dataset, classical estimates and fused per-image estimates.
    type DatasetOut = Vec<(MethodId, Option<RigidTransform>)>;
    let per_dataset: Vec<Result<DatasetOut>> = datasets
        .par_iter()
        .enumerate()
        .map(|(d, idx)| {
            let subset: Vec<CalibrationSample> = idx.iter().map(|&i| data.bank[i]).collect();
            let mut out = Vec::new();
            for method in HandEyeMethod::ALL {
                out.push((
                    MethodId::Classical(method),
                    calibrate(&subset, method, cfg.strategy).ok(),
                ));
            }
            for (m, est) in estimators.iter().enumerate() {
                let id = est.id();
                let fused_id = id.fused().ok_or_else(|| {
                    Error::InvalidInput(format!("estimator id {id} is not a single-image method"))
                })?;
                let mut rng = unit_rng(cfg.seed, d, STREAM_ESTIMATOR + m as u64);
                let singles: Vec<RigidTransform> = (0..subset.len())
                    .filter_map(|k| {
                        let ctx = EstimatorContext {
                            samples: &subset,
                            index: k,
                            truth,
                        };
                        est.estimate(&ctx, &mut rng).ok()
                    })
                    .collect();
                let fused = fuse_estimates_detailed(&singles, cfg.discard_fraction)
                    .ok()
                    .map(|o| o.fused);
                out.push((fused_id, fused));
            }
            Ok(out)
        })
        .collect();

    let mut estimates: Vec<(MethodId, Vec<RigidTransform>, usize)> = Vec::new();
    let mut push = |id: &MethodId, est: Option<RigidTransform>| {
        let pos = estimates
            .iter()
            .position(|e| &e.0 == id)
            .unwrap_or_else(|| {
                estimates.push((id.clone(), Vec::new(), 0));
                estimates.len() - 1
            });
        match est {
            Some(x) => estimates[pos].1.push(x),
            None => estimates[pos].2 += 1,
        }
    };
    for out in per_dataset {
        for (id, est) in out? {
            push(&id, est);
        }
    }

    // Stage 3: per-image estimates over the whole bank. The bank acts as one
    // extra work unit after the sampled datasets.
    for (m, est) in estimators.iter().enumerate() {
        let mut rng = unit_rng(cfg.seed, cfg.datasets, STREAM_ESTIMATOR + m as u64);
        for k in 0..data.bank.len() {
            let ctx = EstimatorContext {
                samples: &data.bank,
                index: k,
                truth,
            };
            push(&est.id(), est.estimate(&ctx, &mut rng).ok());
        }
    }

    // Stage 4: evaluation against the shared evaluation set.
    let mut rows = Vec::new();
    for (method, ests, failures) in estimates {
        let per_estimate: Vec<f64> = ests
            .par_iter()
            .map(|x| indirect_spread_error(x, &data.eval))
            .collect::<Result<_>>()?;
        let pooled = if ests.is_empty() {
            None
        } else {
            Some(pooled_spread_error(&ests, &data.eval)? * 1e3)
        };
        rows.push(ProtocolRow {
            label: method.label(),
            estimates: ests.len() + failures,
            evaluations: ests.len() * data.eval.len(),
            failures,
            e_t_mm: None,
            e_r_deg: None,
            eps_std_mm: pooled,
            eps_std_per_estimate_mm: Some(Summary::of(&per_estimate).scaled(1e3)),
            method,
        });
    }
    Ok(ProtocolReport {
        protocol: ProtocolKind::RealWorld,
        seed: cfg.seed,
        rows,
        datasets,
        eval_size: data.eval.len(),
    })
}

// ---------------------------------------------------------------------------
// Noise sweeps

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Tier {
    /// Tag-pose noise: exact translation (m) and rotation (rad) magnitudes.
    Pose { trans_m: f64, rot_rad: f64 },
    /// Keypoint noise: exact pixel displacement.
    Pixel { px: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tier: Tier,
    /// Method id (classical sweep) or keypoint configuration label.
    pub series: String,
    pub mean_et_m: f64,
    pub std_et_m: f64,
    pub mean_er_rad: f64,
    pub std_er_rad: f64,
    pub n: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub seed: u64,
    /// Scenarios (classical) or poses (PnP) per tier.
    pub scenarios: usize,
    pub tiers: Vec<Tier>,
    pub rows: Vec<SweepRow>,
}

pub const CLASSICAL_SWEEP_HEADER: &str =
    "tier_trans_mm,tier_rot_deg,method,mean_et_m,std_et_m,mean_er_rad,std_er_rad,n,failures";
pub const PNP_SWEEP_HEADER: &str =
    "tier_px,config,mean_et_m,std_et_m,mean_er_rad,std_er_rad,n,failures";

impl SweepReport {
    pub fn rows_for<'a>(&'a self, series: &'a str) -> impl Iterator<Item = &'a SweepRow> + 'a {
        self.rows.iter().filter(move |r| r.series == series)
    }

    /// Writes the CSV form; the header follows the tier kind.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header = match self.tiers.first() {
            Some(Tier::Pixel { .. }) => PNP_SWEEP_HEADER,
            _ => CLASSICAL_SWEEP_HEADER,
        };
        writeln!(out, "{header}")?;
        for r in &self.rows {
            let stats = format!(
                "{},{},{},{},{},{}",
                r.mean_et_m, r.std_et_m, r.mean_er_rad, r.std_er_rad, r.n, r.failures
            );
            match r.tier {
                Tier::Pose { trans_m, rot_rad } => writeln!(
                    out,
                    "{},{},{},{stats}",
                    round_unit(trans_m * 1e3),
                    round_unit(rot_rad.to_degrees()),
                    r.series
                )?,
                Tier::Pixel { px } => writeln!(out, "{},{},{stats}", px, csv_field(&r.series))?,
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }
}

/// Tier labels are multiples of 0.5; strip the unit-conversion rounding.
fn round_unit(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn sweep_row(tier: Tier, series: String, et: &[f64], er: &[f64], failures: usize) -> SweepRow {
    let (t, r) = (Summary::of(et), Summary::of(er));
    SweepRow {
        tier,
        series,
        mean_et_m: t.mean,
        std_et_m: t.std,
        mean_er_rad: r.mean,
        std_er_rad: r.std,
        n: et.len(),
        failures,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassicalSweepConfig {
    /// `(translation m, rotation rad)` per tier.
    pub tiers: Vec<(f64, f64)>,
    pub scenarios_per_tier: usize,
    pub scenario: ScenarioConfig,
    pub strategy: PairStrategy,
    pub seed: u64,
}

impl Default for ClassicalSweepConfig {
    fn default() -> Self {
        Self {
            tiers: (0..=20)
                .map(|i| (i as f64 * 0.5e-3, (i as f64 * 0.5).to_radians()))
                .collect(),
            scenarios_per_tier: 100,
            scenario: ScenarioConfig::default(),
            strategy: PairStrategy::AllPairs,
            seed: 0,
        }
    }
}

/// Tag-pose noise sweep over the four classical solvers. Every tier reuses
/// the same scenarios and noise directions, so only the magnitude changes
/// between tiers.
pub fn sweep_classical_noise(cfg: &ClassicalSweepConfig) -> Result<SweepReport> {
    if cfg.tiers.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one tier".into()));
    }
    if cfg.tiers.iter().any(|&(t, r)| !(t >= 0.0) || !(r >= 0.0)) {
        return Err(Error::InvalidInput("tier magnitudes must be >= 0".into()));
    }
    if cfg.scenarios_per_tier == 0 {
        return Err(Error::InvalidInput(
            "scenarios_per_tier must be >= 1".into(),
        ));
    }
    let scenario_cfg = ScenarioConfig {
        seed: cfg.seed,
        ..cfg.scenario
    };
    scenario_cfg.validate()?;

    type Cell = Option<(f64, f64)>;
    // results[scenario][tier][method]
    let results: Vec<Result<Vec<Vec<Cell>>>> = (0..cfg.scenarios_per_tier)
        .into_par_iter()
        .map(|i| {
            let scenario = seeded_scenario(&scenario_cfg, cfg.seed, i)?;
            let truth = scenario.truth_extrinsic;
            Ok(cfg
                .tiers
                .iter()
                .map(|&(t, r)| {
                    let noise = NoiseSpec {
                        tag_trans_mag: t,
                        tag_rot_mag: r,
                        ..NoiseSpec::default()
                    };
                    let noisy = apply_tag_noise(
                        &scenario.samples,
                        &noise,
                        &mut unit_rng(cfg.seed, i, STREAM_TAG_NOISE),
                    );
                    HandEyeMethod::ALL
                        .iter()
                        .map(|&m| {
                            calibrate(&noisy, m, cfg.strategy)
                                .ok()
                                .map(|x| (position_error(&x, &truth), rotation_error(&x, &truth)))
                        })
                        .collect()
                })
                .collect())
        })
        .collect();
    let results: Vec<Vec<Vec<Cell>>> = results.into_iter().collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut tiers = Vec::new();
    for (ti, &(trans_m, rot_rad)) in cfg.tiers.iter().enumerate() {
        let tier = Tier::Pose { trans_m, rot_rad };
        tiers.push(tier);
        for (mi, method) in HandEyeMethod::ALL.iter().enumerate() {
            let cells: Vec<Cell> = results.iter().map(|s| s[ti][mi]).collect();
            let ok: Vec<(f64, f64)> = cells.iter().flatten().copied().collect();
            let et: Vec<f64> = ok.iter().map(|c| c.0).collect();
            let er: Vec<f64> = ok.iter().map(|c| c.1).collect();
            let id = MethodId::Classical(*method).to_string();
            rows.push(sweep_row(tier, id, &et, &er, cells.len() - ok.len()));
        }
    }
    Ok(SweepReport {
        seed: cfg.seed,
        scenarios: cfg.scenarios_per_tier,
        tiers,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PnpSweepConfig {
    pub tiers_px: Vec<f64>,
    pub poses: usize,
    pub configs: Vec<KeypointSubset>,
    pub ransac: RansacParams,
    pub rim_margin: f64,
    pub scenario: ScenarioConfig,
    pub seed: u64,
}

impl Default for PnpSweepConfig {
    fn default() -> Self {
        Self {
            tiers_px: (0..=9).map(f64::from).collect(),
            poses: 200,
            configs: vec![KeypointSubset::InFrame70, KeypointSubset::InFrame100],
            // A wider gate than the library default: at several pixels of
            // exact-magnitude noise a 2 px gate rejects most true keypoints.
            ransac: RansacParams {
                inlier_threshold_px: 8.0,
                ..RansacParams::default()
            },
            rim_margin: DEFAULT_RIM_MARGIN,
            scenario: ScenarioConfig::default(),
            seed: 0,
        }
    }
}

/// Keypoint noise sweep: render the gripper keypoints from random
/// extrinsics, displace each by an exact pixel amount, reject rim points and
/// estimate the pose with PnP + RANSAC.
pub fn sweep_pnp_noise(cfg: &PnpSweepConfig) -> Result<SweepReport> {
    let (model, _) = synthetic_gripper();
    sweep_pnp_noise_with_model(cfg, &model, &CameraIntrinsics::wrist_camera())
}

pub fn sweep_pnp_noise_with_model(
    cfg: &PnpSweepConfig,
    model: &KeypointModel,
    k: &CameraIntrinsics,
) -> Result<SweepReport> {
    if cfg.tiers_px.is_empty() || cfg.configs.is_empty() {
        return Err(Error::InvalidInput(
            "sweep needs at least one tier and one config".into(),
        ));
    }
    if cfg.tiers_px.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::InvalidInput("pixel tiers must be >= 0".into()));
    }
    if cfg.poses == 0 {
        return Err(Error::InvalidInput("poses must be >= 1".into()));
    }
    cfg.scenario.validate()?;
    let models: Vec<KeypointModel> = cfg.configs.iter().map(|c| model.subset(*c)).collect();

    type Cell = Option<(f64, f64)>;
    // results[pose][config][tier]
    let results: Vec<Result<Vec<Vec<Cell>>>> = (0..cfg.poses)
        .into_par_iter()
        .map(|p| {
            let truth =
                sample_extrinsic(&cfg.scenario, &mut unit_rng(cfg.seed, p, STREAM_SCENARIO));
            let camera_pose = truth.inverse();
            models
                .iter()
                .map(|m| {
                    let clean = render_keypoints(m, &camera_pose, k)?;
                    Ok(cfg
                        .tiers_px
                        .iter()
                        .map(|&px| {
                            let noisy = perturb_keypoints(
                                &clean,
                                px,
                                k,
                                &mut unit_rng(cfg.seed, p, STREAM_KEYPOINTS),
                            );
                            let kept = rim_filter(&noisy, cfg.rim_margin).ok()?;
                            let mut rng = unit_rng(cfg.seed, p, STREAM_RANSAC);
                            let r = solve_pnp_ransac(m, &kept, k, &cfg.ransac, &mut rng).ok()?;
                            let est = r.pose.inverse();
                            Some((position_error(&est, &truth), rotation_error(&est, &truth)))
                        })
                        .collect())
                })
                .collect()
        })
        .collect();
    let results: Vec<Vec<Vec<Cell>>> = results.into_iter().collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let tiers: Vec<Tier> = cfg.tiers_px.iter().map(|&px| Tier::Pixel { px }).collect();
    for (ti, tier) in tiers.iter().enumerate() {
        for (ci, config) in cfg.configs.iter().enumerate() {
            let cells: Vec<Cell> = results.iter().map(|r| r[ci][ti]).collect();
            let ok: Vec<(f64, f64)> = cells.iter().flatten().copied().collect();
            let et: Vec<f64> = ok.iter().map(|c| c.0).collect();
            let er: Vec<f64> = ok.iter().map(|c| c.1).collect();
            rows.push(sweep_row(
                *tier,
                config.label().to_string(),
                &et,
                &er,
                cells.len() - ok.len(),
            ));
        }
    }
    Ok(SweepReport {
        seed: cfg.seed,
        scenarios: cfg.poses,
        tiers,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_ids_round_trip() {
        let ids = [
            MethodId::Classical(HandEyeMethod::Tsai),
            MethodId::Classical(HandEyeMethod::Daniilidis),
            MethodId::Oracle,
            MethodId::OracleFused,
            MethodId::External {
                name: "dr".into(),
                fused: false,
            },
            MethodId::External {
                name: "dr".into(),
                fused: true,
            },
        ];
        for id in ids {
            assert_eq!(id.to_string().parse::<MethodId>().unwrap(), id);
            let json = serde_json::to_string(&id).unwrap();
            assert_eq!(serde_json::from_str::<MethodId>(&json).unwrap(), id);
        }
        assert_eq!(MethodId::Oracle.fused(), Some(MethodId::OracleFused));
        assert_eq!(MethodId::OracleFused.fused(), None);
        assert!("ext:".parse::<MethodId>().is_err());
        assert!("bogus".parse::<MethodId>().is_err());
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(Summary::of(&[7.0]).std, 0.0);
        assert!(Summary::of(&[]).mean.is_nan());
    }

    #[test]
    fn dataset_sampling_multiset_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let sets = sample_datasets(40, 40, 15, &mut rng).unwrap();
        assert_eq!(sets.len(), 40);
        for s in &sets {
            assert_eq!(s.len(), 15);
            assert!(
                s.windows(2).all(|w| w[0] < w[1]),
                "no repeats within a dataset"
            );
            assert!(s.iter().all(|&i| i < 40));
        }
        // Independent draws across datasets: some index appears in several.
        let mut counts = [0usize; 40];
        sets.iter().flatten().for_each(|&i| counts[i] += 1);
        assert!(counts.iter().any(|&c| c > 1));
        assert_eq!(counts.iter().sum::<usize>(), 600);
        assert!(sample_datasets(10, 1, 15, &mut rng).is_err());
    }

    #[test]
    fn sim_protocol_counts_and_exactness() {
        let cfg = SimProtocolConfig {
            n_extrinsics: 8,
            seed: 3,
            ..SimProtocolConfig::default()
        };
        let oracle = OracleEstimator::default();
        let report = run_sim_protocol(&cfg, &[&oracle]).unwrap();
        assert_eq!(report.rows.len(), 6);
        for m in MethodId::classical() {
            let row = report.row(&m).unwrap();
            assert_eq!(row.evaluations, 8);
            assert!(row.e_t_mm.unwrap().mean < 1e-5);
        }
        let single = report.row(&MethodId::Oracle).unwrap();
        assert_eq!(single.evaluations, 8 * 15);
        assert_eq!(single.e_t_mm.unwrap().mean, 0.0);
        assert_eq!(single.e_r_deg.unwrap().mean, 0.0);
        let fused = report.row(&MethodId::OracleFused).unwrap();
        assert_eq!(fused.evaluations, 8);
        assert_eq!(fused.e_t_mm.unwrap().mean, 0.0);
    }

    #[test]
    fn real_protocol_on_exact_synthetic_data() {
        let cfg = RealProtocolConfig {
            datasets: 6,
            seed: 4,
            ..RealProtocolConfig::default()
        };
        let data =
            synthetic_real_world_data(&cfg, &ScenarioConfig::default(), &NoiseSpec::default())
                .unwrap();
        assert_eq!((data.bank.len(), data.eval.len()), (40, 60));
        let oracle = OracleEstimator::default();
        let report = run_real_protocol(&cfg, &data, &[&oracle]).unwrap();
        assert_eq!(report.datasets.len(), 6);
        for m in MethodId::classical() {
            let row = report.row(&m).unwrap();
            assert_eq!(row.estimates, 6);
            assert_eq!(row.evaluations, 6 * 60);
            assert!(row.eps_std_mm.unwrap() < 1e-5);
        }
        let single = report.row(&MethodId::Oracle).unwrap();
        assert_eq!(single.estimates, 40);
        assert!(single.eps_std_mm.unwrap() < 1e-9);
        assert_eq!(report.row(&MethodId::OracleFused).unwrap().estimates, 6);
    }

    #[test]
    fn oracle_without_truth_is_counted_as_failure() {
        let cfg = RealProtocolConfig {
            datasets: 2,
            ..RealProtocolConfig::default()
        };
        let mut data =
            synthetic_real_world_data(&cfg, &ScenarioConfig::default(), &NoiseSpec::default())
                .unwrap();
        data.truth_extrinsic = None;
        let oracle = OracleEstimator::default();
        let report = run_real_protocol(&cfg, &data, &[&oracle]).unwrap();
        let row = report.row(&MethodId::Oracle).unwrap();
        assert_eq!((row.failures, row.evaluations), (40, 0));
        assert_eq!(row.eps_std_mm, None);
    }

    #[test]
    fn small_classical_sweep_csv() {
        let cfg = ClassicalSweepConfig {
            tiers: vec![
                (0.0, 0.0),
                (0.5e-3, 0.5f64.to_radians()),
                (2e-3, 2f64.to_radians()),
            ],
            scenarios_per_tier: 6,
            seed: 5,
            ..ClassicalSweepConfig::default()
        };
        let report = sweep_classical_noise(&cfg).unwrap();
        assert_eq!(report.rows.len(), 12);
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CLASSICAL_SWEEP_HEADER));
        assert!(lines.next().unwrap().starts_with("0,0,tsai,"));
        assert!(csv.lines().nth(5).unwrap().starts_with("0.5,0.5,tsai,"));
        for row in report.rows.iter().take(4) {
            assert!(row.mean_et_m < 1e-8, "{row:?}");
        }
        assert_eq!(report, sweep_classical_noise(&cfg).unwrap());
    }

    #[test]
    fn small_pnp_sweep_csv() {
        let cfg = PnpSweepConfig {
            tiers_px: vec![0.0, 3.0],
            poses: 10,
            seed: 6,
            ..PnpSweepConfig::default()
        };
        let report = sweep_pnp_noise(&cfg).unwrap();
        let csv = report.to_csv();
        assert_eq!(csv.lines().next(), Some(PNP_SWEEP_HEADER));
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().nth(1).unwrap().starts_with("0,70% in frame,"));
        for row in report.rows.iter().take(2) {
            assert!(row.mean_et_m < 1e-6);
        }
    }
}
