//! Synthetic scenarios: sampled ground-truth extrinsics, tag-facing
//! trajectories, fixed-magnitude noise injection, the synthetic two-finger
//! gripper and a noisy oracle standing in for learned single-image
//! estimators.
//!
//! End-effector frame convention used by the gripper and the nominal mount:
//! `+z` points from the flange toward the finger tips, `+y` toward the side
//! carrying the camera.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, EulerXYZ, RigidTransform, Rotation};
use crate::handeye::{
    build_motion_pairs, check_motions, CalibrationSample, PairStrategy, SolverConfig,
};
use crate::icp::PointCloud;
use crate::pnp::{clamp_to_frame, KeypointModel, KeypointObservations, ModelKeypoint, Observation};

/// Seed of the gripper surface cloud.
pub const GRIPPER_CLOUD_SEED: u64 = 0x6772_6970;
pub const GRIPPER_CLOUD_POINTS: usize = 5000;
/// Where the calibration tag sits in the robot base frame.
pub const WORKSPACE_ORIGIN: [f64; 3] = [0.55, 0.0, 0.0];
const MAX_SCENARIO_ATTEMPTS: usize = 100;
/// Smallest and largest relative rotation accepted between two samples.
const MIN_PAIR_ANGLE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    /// Half-extents of the extrinsic translation box, meters.
    pub half_extents: [f64; 3],
    /// Per-axis Euler perturbation bound, radians.
    pub orientation_range: f64,
    pub samples: usize,
    /// Nominal camera-to-tag distance of the trajectory, meters.
    pub workspace_radius: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            half_extents: [0.015; 3],
            orientation_range: 5f64.to_radians(),
            samples: 15,
            workspace_radius: 0.35,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self
            .half_extents
            .iter()
            .any(|h| !(*h >= 0.0) || !h.is_finite())
        {
            return Err(Error::InvalidInput(
                "half extents must be finite and >= 0".into(),
            ));
        }
        if !(self.orientation_range >= 0.0 && self.orientation_range < PI) {
            return Err(Error::InvalidInput(
                "orientation range must lie in [0, pi)".into(),
            ));
        }
        if self.samples < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: self.samples,
            });
        }
        if !(self.workspace_radius > 0.0) {
            return Err(Error::InvalidInput("workspace radius must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub tag_trans_mag: f64,
    pub tag_rot_mag: f64,
    pub keypoint_px_mag: f64,
    pub estimator_trans_sigma: f64,
    pub estimator_rot_sigma: f64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.tag_trans_mag,
            self.tag_rot_mag,
            self.keypoint_px_mag,
            self.estimator_trans_sigma,
            self.estimator_rot_sigma,
        ];
        if all.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(
                "noise magnitudes must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub truth_extrinsic: RigidTransform,
    pub tag_in_base: RigidTransform,
    pub samples: Vec<CalibrationSample>,
    pub seed: u64,
}

/// Camera 50 mm behind and 80 mm above the flange, pitched 30 degrees toward
/// the fingers. Image `x` runs along end-effector `-x`.
pub fn nominal_mount() -> RigidTransform {
    let pitch = 30f64.to_radians();
    let z = Vector3::new(0.0, -pitch.sin(), pitch.cos());
    let x = Vector3::new(-1.0, 0.0, 0.0);
    let y = z.cross(&x);
    RigidTransform::new(
        Rotation::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z])),
        Vector3::new(0.0, 0.08, -0.05),
    )
}

fn symmetric_uniform<R: Rng + ?Sized>(rng: &mut R, half: f64) -> f64 {
    // Always consume one draw so streams stay aligned across configs.
    let u: f64 = rng.random();
    half * (2.0 * u - 1.0)
}

pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    let [x, y, z]: [f64; 3] = UnitSphere.sample(rng);
    Vector3::new(x, y, z)
}

/// Translation uniform in the configured box around the nominal mount;
/// rotation is the nominal one followed by uniform per-axis Euler offsets.
pub fn sample_extrinsic<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> RigidTransform {
    let nominal = nominal_mount();
    let dt = Vector3::from_fn(|i, _| symmetric_uniform(rng, cfg.half_extents[i]));
    let e = EulerXYZ::new(
        symmetric_uniform(rng, cfg.orientation_range),
        symmetric_uniform(rng, cfg.orientation_range),
        symmetric_uniform(rng, cfg.orientation_range),
    );
    let rotation = if e.rx == 0.0 && e.ry == 0.0 && e.rz == 0.0 {
        nominal.rotation
    } else {
        nominal.rotation * Rotation::from_euler_xyz(&e)
    };
    RigidTransform::new(rotation, nominal.translation + dt)
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, roll: f64) -> Rotation {
    let z = (target - eye).normalize();
    let x = z.cross(&Vector3::z()).normalize();
    let y = z.cross(&x);
    Rotation::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z])) * Rotation::about_z(roll)
}

/// Camera poses in the base frame on a viewsphere segment above the tag,
/// from a randomly shifted low-discrepancy sequence.
fn viewsphere_poses<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    tag: &Vector3<f64>,
    rng: &mut R,
) -> Vec<RigidTransform> {
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let shift: [f64; 4] = [rng.random(), rng.random(), rng.random(), rng.random()];
    (0..cfg.samples)
        .map(|j| {
            let s = [
                (shift[0] + golden * j as f64).fract(),
                (shift[1] + radical_inverse(j as u64 + 1, 2)).fract(),
                (shift[2] + radical_inverse(j as u64 + 1, 3)).fract(),
                (shift[3] + radical_inverse(j as u64 + 1, 5)).fract(),
            ];
            let azimuth = PI + (140.0 * s[0] - 70.0).to_radians();
            let elevation = (35.0 + 40.0 * s[1]).to_radians();
            let roll = (60.0 * s[2] - 30.0).to_radians();
            let radius = cfg.workspace_radius * (0.85 + 0.3 * s[3]);
            let eye = tag
                + radius
                    * Vector3::new(
                        elevation.cos() * azimuth.cos(),
                        elevation.cos() * azimuth.sin(),
                        elevation.sin(),
                    );
            RigidTransform::new(look_at(&eye, tag, roll), eye)
        })
        .collect()
}

fn motions_are_diverse(samples: &[CalibrationSample]) -> bool {
    let Ok(pairs) = build_motion_pairs(samples, PairStrategy::AllPairs) else {
        return false;
    };
    let angles_ok = pairs.iter().all(|p| {
        let a = p.a.rotation.angle();
        a > MIN_PAIR_ANGLE && a < PI - MIN_PAIR_ANGLE
    });
    angles_ok && check_motions(&pairs, &SolverConfig::default()).is_ok()
}

/// Scripted tag-facing trajectory with exact tag observations derived from
/// the kinematic chain `T_CO = (T_BE * X)^-1 * T_BO`.
pub fn generate_scenario<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    truth: &RigidTransform,
    rng: &mut R,
) -> Result<Scenario> {
    cfg.validate()?;
    let tag_in_base = RigidTransform::from_translation(Vector3::from(WORKSPACE_ORIGIN));
    let x_inv = truth.inverse();
    for _ in 0..MAX_SCENARIO_ATTEMPTS {
        let samples: Vec<CalibrationSample> = viewsphere_poses(cfg, &tag_in_base.translation, rng)
            .into_iter()
            .map(|t_bc| {
                let t_be = t_bc * x_inv;
                CalibrationSample {
                    t_be,
                    t_co: (t_be * *truth).inverse() * tag_in_base,
                }
            })
            .collect();
        if motions_are_diverse(&samples) {
            return Ok(Scenario {
                truth_extrinsic: *truth,
                tag_in_base,
                samples,
                seed: cfg.seed,
            });
        }
    }
    Err(Error::DegenerateMotion(format!(
        "no trajectory with diverse motion axes after {MAX_SCENARIO_ATTEMPTS} attempts"
    )))
}

/// Displaces the translation by exactly `trans_mag` along a random direction
/// and rotates by exactly `rot_mag` about a random axis.
pub fn perturb_pose<R: Rng + ?Sized>(
    p: &RigidTransform,
    trans_mag: f64,
    rot_mag: f64,
    rng: &mut R,
) -> RigidTransform {
    let dir = random_unit_vector(rng);
    let axis = random_unit_vector(rng);
    let translation = if trans_mag == 0.0 {
        p.translation
    } else {
        p.translation + dir * trans_mag
    };
    let rotation = if rot_mag == 0.0 {
        p.rotation
    } else {
        Rotation::from_axis_angle(&axis, rot_mag) * p.rotation
    };
    RigidTransform::new(rotation, translation)
}

/// Moves every visible keypoint by exactly `px_mag` pixels in a random image
/// direction, then clamps to the frame.
pub fn perturb_keypoints<R: Rng + ?Sized>(
    obs: &KeypointObservations,
    px_mag: f64,
    k: &CameraIntrinsics,
    rng: &mut R,
) -> KeypointObservations {
    let scale = k.pixel_in_normalized();
    KeypointObservations::new(
        obs.observations
            .iter()
            .map(|o| {
                let theta = rng.random_range(0.0..2.0 * PI);
                if !o.visible || px_mag == 0.0 {
                    return *o;
                }
                let shifted =
                    o.uv_norm + Vector2::new(theta.cos() * scale.x, theta.sin() * scale.y) * px_mag;
                let clamped = clamp_to_frame(&shifted);
                Observation {
                    uv_norm: clamped,
                    clamped: o.clamped || clamped != shifted,
                    ..*o
                }
            })
            .collect(),
    )
}

/// Projects every model keypoint through `camera_pose` (model to camera).
/// Out-of-frame projections are clamped onto the border and flagged.
pub fn render_keypoints(
    model: &KeypointModel,
    camera_pose: &RigidTransform,
    k: &CameraIntrinsics,
) -> Result<KeypointObservations> {
    model
        .keypoints()
        .iter()
        .map(|kp| {
            let px = k.project(&camera_pose.transform_point(&kp.xyz))?;
            let uv = k.pixel_to_normalized(&px);
            let clamped = clamp_to_frame(&uv);
            Ok(Observation {
                id: kp.id,
                uv_norm: clamped,
                visible: true,
                clamped: clamped != uv,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(KeypointObservations::new)
}

/// Axis-aligned box `[lo, hi]` in the end-effector frame.
#[derive(Clone, Copy)]
struct Cuboid {
    lo: Vector3<f64>,
    hi: Vector3<f64>,
}

const PALM: Cuboid = Cuboid {
    lo: Vector3::new(-0.045, -0.02, 0.0),
    hi: Vector3::new(0.045, 0.02, 0.035),
};
const FINGER_INNER_X: f64 = 0.01;
const FINGER_OUTER_X: f64 = 0.022;
const FINGER_HALF_Y: f64 = 0.009;
const FINGER_TIP_Z: f64 = 0.1;

fn fingers() -> [Cuboid; 2] {
    [-1.0, 1.0].map(|s: f64| {
        let (a, b) = (s * FINGER_INNER_X, s * FINGER_OUTER_X);
        Cuboid {
            lo: Vector3::new(a.min(b), -FINGER_HALF_Y, PALM.hi.z),
            hi: Vector3::new(a.max(b), FINGER_HALF_Y, FINGER_TIP_Z),
        }
    })
}

fn gripper_keypoints() -> Vec<ModelKeypoint> {
    let mut points: Vec<(Vector3<f64>, bool)> = Vec::new();
    for s in [1.0, -1.0] {
        // Finger tips: four tip corners plus two outer-edge points just below.
        for x in [FINGER_INNER_X, FINGER_OUTER_X] {
            for y in [-FINGER_HALF_Y, FINGER_HALF_Y] {
                points.push((Vector3::new(s * x, y, FINGER_TIP_Z), true));
            }
        }
        for y in [-FINGER_HALF_Y, FINGER_HALF_Y] {
            points.push((
                Vector3::new(s * FINGER_OUTER_X, y, FINGER_TIP_Z - 0.012),
                true,
            ));
        }
    }
    for s in [1.0, -1.0] {
        // Finger bodies and bases.
        for y in [-FINGER_HALF_Y, FINGER_HALF_Y] {
            points.push((Vector3::new(s * FINGER_OUTER_X, y, 0.065), false));
        }
        points.push((
            Vector3::new(s * FINGER_INNER_X, FINGER_HALF_Y, 0.065),
            false,
        ));
        points.push((
            Vector3::new(s * FINGER_OUTER_X, FINGER_HALF_Y, PALM.hi.z + 0.01),
            false,
        ));
        points.push((
            Vector3::new(s * FINGER_OUTER_X, -FINGER_HALF_Y, PALM.hi.z + 0.015),
            false,
        ));
    }
    // Palm: the camera-facing top face, the front face around the finger
    // roots and the two sides. The flange-side underside is rarely in view.
    let (lo, hi) = (PALM.lo, PALM.hi);
    for x in [lo.x, 0.5 * lo.x, 0.0, 0.5 * hi.x, hi.x] {
        points.push((Vector3::new(x, hi.y, hi.z), false));
    }
    for x in [lo.x, 0.0, hi.x] {
        points.push((Vector3::new(x, hi.y, 0.02), false));
    }
    for s in [1.0, -1.0] {
        points.push((Vector3::new(s * hi.x, 0.005, hi.z), false));
        points.push((Vector3::new(s * 0.0225, 0.0, hi.z), false));
        points.push((Vector3::new(s * 0.035, -0.005, hi.z), false));
        points.push((Vector3::new(s * hi.x, 0.01, 0.025), false));
    }
    points
        .into_iter()
        .enumerate()
        .map(|(i, (xyz, always_in_frame))| ModelKeypoint {
            id: i as u32,
            xyz,
            always_in_frame,
        })
        .collect()
}

/// Corner, edge u, edge v and outward normal.
type Face = (Vector3<f64>, Vector3<f64>, Vector3<f64>, Vector3<f64>);

fn faces(c: &Cuboid) -> Vec<Face> {
    let d = c.hi - c.lo;
    let (ex, ey, ez) = (Vector3::x() * d.x, Vector3::y() * d.y, Vector3::z() * d.z);
    vec![
        (c.lo, ey, ez, -Vector3::x()),
        (c.lo + ex, ey, ez, Vector3::x()),
        (c.lo, ex, ez, -Vector3::y()),
        (c.lo + ey, ex, ez, Vector3::y()),
        (c.lo, ex, ey, -Vector3::z()),
        (c.lo + ez, ex, ey, Vector3::z()),
    ]
}

fn gripper_cloud() -> PointCloud {
    let mut faces_all = faces(&PALM);
    for f in fingers() {
        // The finger base is buried in the palm.
        faces_all.extend(faces(&f).into_iter().filter(|f| f.3 != -Vector3::z()));
    }
    let areas: Vec<f64> = faces_all.iter().map(|f| f.1.cross(&f.2).norm()).collect();
    let total: f64 = areas.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(GRIPPER_CLOUD_SEED);
    let mut points = Vec::with_capacity(GRIPPER_CLOUD_POINTS);
    let mut normals = Vec::with_capacity(GRIPPER_CLOUD_POINTS);
    for _ in 0..GRIPPER_CLOUD_POINTS {
        let mut pick = rng.random::<f64>() * total;
        let mut idx = faces_all.len() - 1;
        for (i, a) in areas.iter().enumerate() {
            if pick < *a {
                idx = i;
                break;
            }
            pick -= a;
        }
        let (corner, u, v, n) = faces_all[idx];
        let (a, b): (f64, f64) = (rng.random(), rng.random());
        points.push(corner + u * a + v * b);
        normals.push(n);
    }
    PointCloud::with_normals(points, normals).expect("axis-aligned unit normals")
}

/// The shipped end-effector geometry: a two-finger gripper with 38
/// keypoints (12 on the finger tips) and a seeded 5k-point surface cloud.
pub fn synthetic_gripper() -> (KeypointModel, PointCloud) {
    let model = KeypointModel::new(gripper_keypoints()).expect("unique gripper keypoint ids");
    (model, gripper_cloud())
}

/// Truth extrinsic with Gaussian translation noise per axis and a
/// Gaussian-angle rotation about a random axis.
pub fn noisy_oracle_estimator<R: Rng + ?Sized>(
    scenario: &Scenario,
    sample_index: usize,
    spec: &NoiseSpec,
    rng: &mut R,
) -> Result<RigidTransform> {
    if sample_index >= scenario.samples.len() {
        return Err(Error::InvalidInput(format!(
            "sample index {sample_index} out of range for {} samples",
            scenario.samples.len()
        )));
    }
    oracle_perturb(&scenario.truth_extrinsic, spec, rng)
}

/// The oracle's noise model applied to an arbitrary `truth`.
pub fn oracle_perturb<R: Rng + ?Sized>(
    truth: &RigidTransform,
    spec: &NoiseSpec,
    rng: &mut R,
) -> Result<RigidTransform> {
    spec.validate()?;
    let trans = Normal::new(0.0, spec.estimator_trans_sigma).expect("validated sigma");
    let rot = Normal::new(0.0, spec.estimator_rot_sigma).expect("validated sigma");
    let dt = Vector3::new(trans.sample(rng), trans.sample(rng), trans.sample(rng));
    let axis = random_unit_vector(rng);
    let angle = rot.sample(rng);
    let translation = if spec.estimator_trans_sigma == 0.0 {
        truth.translation
    } else {
        truth.translation + dt
    };
    let rotation = if spec.estimator_rot_sigma == 0.0 {
        truth.rotation
    } else {
        Rotation::from_axis_angle(&axis, angle) * truth.rotation
    };
    Ok(RigidTransform::new(rotation, translation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::handeye::{calibrate, HandEyeMethod};
    use crate::metrics::{position_error, rotation_error};
    use crate::pnp::{solve_pnp, KeypointSubset};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn nominal_mount_is_a_rotation_looking_at_the_fingers() {
        let m = nominal_mount();
        assert!(m.rotation.is_valid(1e-12));
        let axis = m.rotation.matrix().column(2).into_owned();
        assert!((axis - Vector3::new(0.0, -0.5, 3f64.sqrt() / 2.0)).norm() < 1e-12);
    }

    #[test]
    fn zero_range_extrinsic_is_nominal() {
        let cfg = ScenarioConfig {
            half_extents: [0.0; 3],
            orientation_range: 0.0,
            ..ScenarioConfig::default()
        };
        assert_eq!(sample_extrinsic(&cfg, &mut rng(1)), nominal_mount());
    }

    #[test]
    fn extrinsic_samples_stay_in_the_box() {
        let cfg = ScenarioConfig::default();
        let nominal = nominal_mount();
        let mut r = rng(2);
        let (mut lo, mut hi) = (
            Vector3::repeat(f64::INFINITY),
            Vector3::repeat(f64::NEG_INFINITY),
        );
        for _ in 0..10_000 {
            let d = sample_extrinsic(&cfg, &mut r).translation - nominal.translation;
            lo = lo.inf(&d);
            hi = hi.sup(&d);
        }
        for i in 0..3 {
            assert!(lo[i] >= -0.015 && hi[i] <= 0.015);
            assert!(lo[i] < -0.0149 && hi[i] > 0.0149);
        }
        assert_eq!(
            sample_extrinsic(&cfg, &mut rng(3)),
            sample_extrinsic(&cfg, &mut rng(3))
        );
    }

    #[test]
    fn scenarios_are_consistent_and_solvable() {
        let cfg = ScenarioConfig::default();
        for seed in 0..10 {
            let mut r = rng(seed);
            let truth = sample_extrinsic(&cfg, &mut r);
            let s = generate_scenario(&cfg, &truth, &mut r).unwrap();
            assert_eq!(s.samples.len(), 15);
            for sample in &s.samples {
                let expected = (sample.t_be * truth).inverse() * s.tag_in_base;
                assert!(
                    (expected.to_homogeneous() - sample.t_co.to_homogeneous())
                        .abs()
                        .max()
                        < 1e-12
                );
            }
            let pairs = build_motion_pairs(&s.samples, PairStrategy::AllPairs).unwrap();
            assert_eq!(pairs.len(), 105);
            assert!(check_motions(&pairs, &SolverConfig::default()).is_ok());
            for method in HandEyeMethod::ALL {
                let x = calibrate(&s.samples, method, PairStrategy::AllPairs).unwrap();
                assert!(position_error(&x, &truth) < 1e-8, "{method}");
                assert!(rotation_error(&x, &truth) < 1e-8, "{method}");
            }
        }
    }

    #[test]
    fn scenario_generation_is_deterministic() {
        let cfg = ScenarioConfig::default();
        let make = || {
            let mut r = rng(9);
            let truth = sample_extrinsic(&cfg, &mut r);
            generate_scenario(&cfg, &truth, &mut r).unwrap()
        };
        assert_eq!(make(), make());
    }

    #[test]
    fn pose_perturbation_is_exact() {
        let mut r = rng(4);
        let p = RigidTransform::new(Rotation::about_y(0.3), Vector3::new(0.1, 0.2, 0.3));
        assert_eq!(perturb_pose(&p, 0.0, 0.0, &mut r), p);
        for tier in 1..=10 {
            let (t, a) = (tier as f64 * 1e-3, (tier as f64).to_radians());
            let q = perturb_pose(&p, t, a, &mut r);
            assert!((position_error(&q, &p) - t).abs() < 1e-12);
            assert!((rotation_error(&q, &p) - a).abs() < 1e-12);
        }
    }

    #[test]
    fn keypoint_perturbation_magnitude() {
        let k = CameraIntrinsics::wrist_camera();
        let obs = KeypointObservations::new(
            (0..20)
                .map(|i| Observation {
                    id: i,
                    uv_norm: Vector2::new(-0.5 + 0.05 * i as f64, 0.1),
                    visible: true,
                    clamped: false,
                })
                .collect(),
        );
        assert_eq!(perturb_keypoints(&obs, 0.0, &k, &mut rng(5)), obs);
        let moved = perturb_keypoints(&obs, 3.0, &k, &mut rng(5));
        for (a, b) in obs.observations.iter().zip(&moved.observations) {
            let d = k.normalized_to_pixel(&b.uv_norm) - k.normalized_to_pixel(&a.uv_norm);
            assert!((d.norm() - 3.0).abs() < 1e-9);
        }
        assert_eq!(moved, perturb_keypoints(&obs, 3.0, &k, &mut rng(5)));
    }

    #[test]
    fn rendering_examples() {
        let k = CameraIntrinsics::wrist_camera();
        let model = KeypointModel::new(vec![ModelKeypoint {
            id: 0,
            xyz: Vector3::new(0.0, 0.0, 0.3),
            always_in_frame: true,
        }])
        .unwrap();
        let o = render_keypoints(&model, &RigidTransform::identity(), &k).unwrap();
        assert_eq!(o.observations[0].uv_norm, Vector2::zeros());

        let (gripper, _) = synthetic_gripper();
        let pose = nominal_mount().inverse();
        let o = render_keypoints(&gripper, &pose, &k).unwrap();
        let unclamped = KeypointObservations::new(
            o.observations
                .iter()
                .filter(|o| !o.clamped)
                .copied()
                .collect(),
        );
        let solved = solve_pnp(&gripper, &unclamped, &k).unwrap();
        assert!(position_error(&solved.pose, &pose) < 1e-9);

        // Turning the camera away pushes keypoints off the image.
        let grazing = RigidTransform::from_rotation(Rotation::about_y(0.45)) * pose;
        let o = render_keypoints(&gripper, &grazing, &k).unwrap();
        assert!(o.observations.iter().any(|o| o.clamped));

        let behind = RigidTransform::from_translation(Vector3::new(0.0, 0.0, -1.0));
        assert!(matches!(
            render_keypoints(&gripper, &behind, &k),
            Err(Error::BehindCamera(_))
        ));
    }

    #[test]
    fn gripper_geometry() {
        let (model, cloud) = synthetic_gripper();
        assert_eq!(model.len(), 38);
        let tips = model.subset(KeypointSubset::InFrame100);
        assert_eq!(tips.len(), 12);
        let centre = tips.keypoints().iter().map(|k| k.xyz).sum::<Vector3<f64>>() / 12.0;
        assert!(tips
            .keypoints()
            .iter()
            .all(|k| (k.xyz - centre).norm() <= 0.03));

        assert_eq!(cloud.len(), GRIPPER_CLOUD_POINTS);
        let (mut lo, mut hi) = (
            Vector3::repeat(f64::INFINITY),
            Vector3::repeat(f64::NEG_INFINITY),
        );
        for p in cloud.points() {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        assert!((hi - lo).max() <= 0.12);
        assert_eq!(synthetic_gripper().1, cloud);
    }

    #[test]
    fn keypoints_stay_in_frame_as_labelled() {
        let (model, _) = synthetic_gripper();
        let k = CameraIntrinsics::wrist_camera();
        let cfg = ScenarioConfig::default();
        let mut r = rng(6);
        let trials = 1000;
        let mut in_frame = vec![0usize; model.len()];
        for _ in 0..trials {
            let x = sample_extrinsic(&cfg, &mut r);
            let o = render_keypoints(&model, &x.inverse(), &k).unwrap();
            for (i, obs) in o.observations.iter().enumerate() {
                if !obs.clamped {
                    in_frame[i] += 1;
                }
            }
        }
        for (kp, count) in model.keypoints().iter().zip(&in_frame) {
            let fraction = *count as f64 / trials as f64;
            if kp.always_in_frame {
                assert_eq!(*count, trials, "keypoint {}", kp.id);
            } else {
                assert!(fraction >= 0.7, "keypoint {} in frame {fraction}", kp.id);
            }
        }
    }

    #[test]
    fn oracle_statistics() {
        let cfg = ScenarioConfig::default();
        let mut r = rng(7);
        let truth = sample_extrinsic(&cfg, &mut r);
        let s = generate_scenario(&cfg, &truth, &mut r).unwrap();
        assert_eq!(
            noisy_oracle_estimator(&s, 3, &NoiseSpec::default(), &mut r).unwrap(),
            truth
        );
        assert!(noisy_oracle_estimator(&s, 15, &NoiseSpec::default(), &mut r).is_err());

        let spec = NoiseSpec {
            estimator_trans_sigma: 0.004,
            estimator_rot_sigma: 0.02,
            ..NoiseSpec::default()
        };
        let n = 10_000;
        let draws: Vec<_> = (0..n)
            .map(|i| noisy_oracle_estimator(&s, i % 15, &spec, &mut r).unwrap())
            .collect();
        for axis in 0..3 {
            let var = draws
                .iter()
                .map(|d| (d.translation[axis] - truth.translation[axis]).powi(2))
                .sum::<f64>()
                / n as f64;
            assert!((var.sqrt() / 0.004 - 1.0).abs() < 0.05);
        }
        let mean_sq = draws
            .iter()
            .map(|d| rotation_error(d, &truth).powi(2))
            .sum::<f64>()
            / n as f64;
        assert!((mean_sq.sqrt() / 0.02 - 1.0).abs() < 0.05);

        let a = noisy_oracle_estimator(&s, 0, &spec, &mut rng(8)).unwrap();
        assert_eq!(
            a,
            noisy_oracle_estimator(&s, 0, &spec, &mut rng(8)).unwrap()
        );
    }
}
