//! Command configurations as read from `--config` JSON files.
//!
//! Lengths are millimeters and angles degrees here; everything is converted
//! to meters and radians before reaching the library.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use eyecal::bench::{ClassicalSweepConfig, PnpSweepConfig, RealProtocolConfig, SimProtocolConfig};
use eyecal::fusion::DEFAULT_DISCARD_FRACTION;
use eyecal::handeye::{HandEyeMethod, PairStrategy};
use eyecal::pnp::{KeypointSubset, RansacParams, DEFAULT_RIM_MARGIN};
use eyecal::synth::{NoiseSpec, ScenarioConfig};

const MM: f64 = 1e-3;

fn rad(deg: f64) -> f64 {
    deg.to_radians()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioOpts {
    /// Half-extents of the box the true extrinsic translation is drawn from.
    pub half_extents_mm: [f64; 3],
    /// Per-axis Euler perturbation of the true extrinsic orientation.
    pub orientation_range_deg: f64,
    pub samples: usize,
    pub workspace_radius_mm: f64,
}

impl Default for ScenarioOpts {
    fn default() -> Self {
        let d = ScenarioConfig::default();
        Self {
            half_extents_mm: d.half_extents.map(|h| h / MM),
            orientation_range_deg: d.orientation_range.to_degrees(),
            samples: d.samples,
            workspace_radius_mm: d.workspace_radius / MM,
        }
    }
}

impl ScenarioOpts {
    pub fn to_core(&self, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            half_extents: self.half_extents_mm.map(|h| h * MM),
            orientation_range: rad(self.orientation_range_deg),
            samples: self.samples,
            workspace_radius: self.workspace_radius_mm * MM,
            seed,
        }
    }
}

/// Exact-magnitude tag-pose noise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TagNoiseOpts {
    pub trans_mm: f64,
    pub rot_deg: f64,
}

/// Gaussian noise of the oracle single-image estimator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleOpts {
    pub trans_sigma_mm: f64,
    pub rot_sigma_deg: f64,
}

pub fn noise_spec(tag: &TagNoiseOpts, oracle: Option<&OracleOpts>) -> NoiseSpec {
    let oracle = oracle.copied().unwrap_or_default();
    NoiseSpec {
        tag_trans_mag: tag.trans_mm * MM,
        tag_rot_mag: rad(tag.rot_deg),
        keypoint_px_mag: 0.0,
        estimator_trans_sigma: oracle.trans_sigma_mm * MM,
        estimator_rot_sigma: rad(oracle.rot_sigma_deg),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateConfig {
    pub dataset: PathBuf,
    pub methods: Vec<HandEyeMethod>,
    pub strategy: PairStrategy,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            methods: vec![HandEyeMethod::Park],
            strategy: PairStrategy::AllPairs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuseConfig {
    pub estimates: PathBuf,
    pub discard_fraction: f64,
}

impl Default for FuseConfig {
    fn default() -> Self {
        Self {
            estimates: PathBuf::new(),
            discard_fraction: DEFAULT_DISCARD_FRACTION,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// One transform or an array of transforms.
    pub estimate: PathBuf,
    pub truth: Option<PathBuf>,
    pub eval_set: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub seed: u64,
    pub scenario: ScenarioOpts,
    pub tag_noise: TagNoiseOpts,
    /// Fixed ground truth instead of a sampled one.
    pub truth_extrinsic: Option<eyecal::geometry::RigidTransform>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassicalSweepOpts {
    pub seed: u64,
    /// `[translation mm, rotation deg]` per tier.
    pub tiers: Vec<[f64; 2]>,
    pub scenarios: usize,
    pub scenario: ScenarioOpts,
    pub strategy: PairStrategy,
}

impl Default for ClassicalSweepOpts {
    fn default() -> Self {
        let d = ClassicalSweepConfig::default();
        Self {
            seed: 0,
            tiers: d
                .tiers
                .iter()
                .map(|&(t, r)| [t / MM, r.to_degrees()])
                .collect(),
            scenarios: d.scenarios_per_tier,
            scenario: ScenarioOpts::default(),
            strategy: d.strategy,
        }
    }
}

impl ClassicalSweepOpts {
    pub fn to_core(&self) -> ClassicalSweepConfig {
        ClassicalSweepConfig {
            tiers: self.tiers.iter().map(|&[t, r]| (t * MM, rad(r))).collect(),
            scenarios_per_tier: self.scenarios,
            scenario: self.scenario.to_core(self.seed),
            strategy: self.strategy,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PnpSweepOpts {
    pub seed: u64,
    pub tiers_px: Vec<f64>,
    pub poses: usize,
    pub configs: Vec<KeypointSubset>,
    pub ransac: RansacParams,
    pub rim_margin: f64,
    pub scenario: ScenarioOpts,
}

impl Default for PnpSweepOpts {
    fn default() -> Self {
        let d = PnpSweepConfig::default();
        Self {
            seed: 0,
            tiers_px: d.tiers_px,
            poses: d.poses,
            configs: d.configs,
            ransac: d.ransac,
            rim_margin: DEFAULT_RIM_MARGIN,
            scenario: ScenarioOpts::default(),
        }
    }
}

impl PnpSweepOpts {
    pub fn to_core(&self) -> PnpSweepConfig {
        PnpSweepConfig {
            tiers_px: self.tiers_px.clone(),
            poses: self.poses,
            configs: self.configs.clone(),
            ransac: self.ransac,
            rim_margin: self.rim_margin,
            scenario: self.scenario.to_core(self.seed),
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimProtocolOpts {
    pub seed: u64,
    pub n_extrinsics: usize,
    pub samples: usize,
    pub tag_noise: TagNoiseOpts,
    /// Adds oracle and oracle-fusion rows when present.
    pub oracle: Option<OracleOpts>,
    pub scenario: ScenarioOpts,
    pub strategy: PairStrategy,
    pub discard_fraction: f64,
}

impl Default for SimProtocolOpts {
    fn default() -> Self {
        let d = SimProtocolConfig::default();
        Self {
            seed: 0,
            n_extrinsics: d.n_extrinsics,
            samples: d.samples,
            tag_noise: TagNoiseOpts::default(),
            oracle: Some(OracleOpts::default()),
            scenario: ScenarioOpts::default(),
            strategy: d.strategy,
            discard_fraction: d.discard_fraction,
        }
    }
}

impl SimProtocolOpts {
    pub fn to_core(&self) -> SimProtocolConfig {
        SimProtocolConfig {
            n_extrinsics: self.n_extrinsics,
            samples: self.samples,
            noise: noise_spec(&self.tag_noise, None),
            scenario: self.scenario.to_core(self.seed),
            strategy: self.strategy,
            discard_fraction: self.discard_fraction,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealProtocolOpts {
    pub seed: u64,
    pub bank: usize,
    pub eval: usize,
    pub datasets: usize,
    pub samples: usize,
    pub strategy: PairStrategy,
    pub discard_fraction: f64,
    /// Recorded `{bank, eval, truth_extrinsic?}` file; synthetic data when absent.
    pub data: Option<PathBuf>,
    /// Synthetic source only.
    pub scenario: ScenarioOpts,
    /// Synthetic source only.
    pub tag_noise: TagNoiseOpts,
    pub oracle: Option<OracleOpts>,
}

impl Default for RealProtocolOpts {
    fn default() -> Self {
        let d = RealProtocolConfig::default();
        Self {
            seed: 0,
            bank: d.bank,
            eval: d.eval,
            datasets: d.datasets,
            samples: d.samples,
            strategy: d.strategy,
            discard_fraction: d.discard_fraction,
            data: None,
            scenario: ScenarioOpts::default(),
            tag_noise: TagNoiseOpts::default(),
            oracle: Some(OracleOpts::default()),
        }
    }
}

impl RealProtocolOpts {
    pub fn to_core(&self) -> RealProtocolConfig {
        RealProtocolConfig {
            bank: self.bank,
            eval: self.eval,
            datasets: self.datasets,
            samples: self.samples,
            strategy: self.strategy,
            discard_fraction: self.discard_fraction,
            seed: self.seed,
        }
    }
}
