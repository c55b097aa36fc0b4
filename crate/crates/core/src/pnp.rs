//! Sparse-correspondence pose estimation: keypoint clamping, rim rejection,
//! DLT + damped Gauss-Newton PnP and a RANSAC wrapper.
//!
//! Keypoint observations live in image-normalized coordinates `[-1, 1]^2`
//! (see [`CameraIntrinsics::pixel_to_normalized`]). Out-of-frame keypoints are
//! clamped onto the border rather than dropped, and the rim filter removes
//! them again before pose estimation.

use std::collections::{HashMap, HashSet};

use nalgebra::{
    DMatrix, Matrix2x3, Matrix3, Matrix3x4, Matrix6, SMatrix, Vector2, Vector3, Vector6,
};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, RigidTransform, Rotation};

pub const DEFAULT_RIM_MARGIN: f64 = 0.01;
/// Points needed by the DLT initializer (and drawn per RANSAC hypothesis).
pub const DLT_MIN_POINTS: usize = 6;
/// Points needed when refining from a pose prior.
pub const PRIOR_MIN_POINTS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KeypointSubset {
    /// Every keypoint of the model (present in at least 70% of views).
    #[serde(rename = "in_frame_70", alias = "70% in frame")]
    InFrame70,
    /// Keypoints that stay in frame in every view.
    #[serde(rename = "in_frame_100", alias = "100% in frame")]
    InFrame100,
}

impl KeypointSubset {
    pub fn label(self) -> &'static str {
        match self {
            KeypointSubset::InFrame70 => "70% in frame",
            KeypointSubset::InFrame100 => "100% in frame",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelKeypoint {
    pub id: u32,
    /// End-effector frame, meters.
    #[serde(with = "vec3_array")]
    pub xyz: Vector3<f64>,
    #[serde(default)]
    pub always_in_frame: bool,
}

/// 3-D keypoints on the end-effector. Every keypoint belongs to `InFrame70`;
/// those flagged `always_in_frame` also form `InFrame100`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ModelKeypoint>", into = "Vec<ModelKeypoint>")]
pub struct KeypointModel {
    keypoints: Vec<ModelKeypoint>,
}

impl KeypointModel {
    pub fn new(keypoints: Vec<ModelKeypoint>) -> Result<Self> {
        let mut seen = HashSet::new();
        for k in &keypoints {
            if !seen.insert(k.id) {
                return Err(Error::InvalidInput(format!(
                    "duplicate keypoint id {}",
                    k.id
                )));
            }
            if !k.xyz.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "keypoint {} is not finite",
                    k.id
                )));
            }
        }
        Ok(Self { keypoints })
    }

    pub fn keypoints(&self) -> &[ModelKeypoint] {
        &self.keypoints
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn subset(&self, subset: KeypointSubset) -> KeypointModel {
        let keypoints = match subset {
            KeypointSubset::InFrame70 => self.keypoints.clone(),
            KeypointSubset::InFrame100 => self
                .keypoints
                .iter()
                .filter(|k| k.always_in_frame)
                .copied()
                .collect(),
        };
        KeypointModel { keypoints }
    }

    pub fn point(&self, id: u32) -> Option<Vector3<f64>> {
        self.keypoints.iter().find(|k| k.id == id).map(|k| k.xyz)
    }
}

impl TryFrom<Vec<ModelKeypoint>> for KeypointModel {
    type Error = Error;
    fn try_from(v: Vec<ModelKeypoint>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<KeypointModel> for Vec<ModelKeypoint> {
    fn from(m: KeypointModel) -> Self {
        m.keypoints
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub id: u32,
    /// Image-normalized coordinates in `[-1, 1]^2`.
    #[serde(with = "vec2_array")]
    pub uv_norm: Vector2<f64>,
    pub visible: bool,
    /// Set when the true projection fell outside the image and was clamped.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub clamped: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeypointObservations {
    pub observations: Vec<Observation>,
}

impl KeypointObservations {
    pub fn new(observations: Vec<Observation>) -> Self {
        Self { observations }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn visible(&self) -> impl Iterator<Item = &Observation> {
        self.observations.iter().filter(|o| o.visible)
    }
}

/// On-disk keypoint file: a model and its observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointFile {
    pub model: KeypointModel,
    pub observations: KeypointObservations,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PnPResult {
    /// Model-to-camera transform: model points land on the observations.
    pub pose: RigidTransform,
    pub inliers: Vec<u32>,
    /// Mean reprojection error over the inliers, pixels.
    pub reprojection_error_px: f64,
    /// False when the refinement hit its iteration cap before the step
    /// norm fell below threshold; the best iterate is still returned.
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub iterations: usize,
    pub inlier_threshold_px: f64,
    pub min_inliers: usize,
    /// Stop early once the hypothesis count suffices for this probability of
    /// having drawn one all-inlier sample. `1.0` disables early stopping.
    pub confidence: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 500,
            inlier_threshold_px: 2.0,
            min_inliers: 6,
            confidence: 0.999,
        }
    }
}

/// Gauss-Newton settings for the refinement stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineParams {
    pub max_iterations: usize,
    pub step_tolerance: f64,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            step_tolerance: 1e-10,
        }
    }
}

const HYPOTHESIS_REFINE: RefineParams = RefineParams {
    max_iterations: 10,
    step_tolerance: 1e-10,
};

pub fn clamp_to_frame(uv: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(uv.x.clamp(-1.0, 1.0), uv.y.clamp(-1.0, 1.0))
}

/// Removes keypoints within `margin` (fraction of the image extent) of the
/// rim. The boundary is closed: a point exactly at the threshold is removed.
pub fn rim_filter(obs: &KeypointObservations, margin: f64) -> Result<KeypointObservations> {
    if !(margin > 0.0 && margin < 0.5) {
        return Err(Error::InvalidInput(format!(
            "rim margin {margin} must lie in (0, 0.5)"
        )));
    }
    let limit = 1.0 - 2.0 * margin;
    Ok(KeypointObservations::new(
        obs.observations
            .iter()
            .filter(|o| o.uv_norm.x.abs() < limit && o.uv_norm.y.abs() < limit)
            .copied()
            .collect(),
    ))
}

/// A 3-D model point paired with its observed pixel.
#[derive(Clone, Copy, Debug)]
struct Correspondence {
    id: u32,
    point: Vector3<f64>,
    pixel: Vector2<f64>,
}

fn correspondences(
    model: &KeypointModel,
    obs: &KeypointObservations,
    k: &CameraIntrinsics,
) -> Vec<Correspondence> {
    let lookup: HashMap<u32, Vector3<f64>> =
        model.keypoints.iter().map(|kp| (kp.id, kp.xyz)).collect();
    obs.visible()
        .filter_map(|o| {
            lookup.get(&o.id).map(|p| Correspondence {
                id: o.id,
                point: *p,
                pixel: k.normalized_to_pixel(&o.uv_norm),
            })
        })
        .collect()
}

/// Singular values of the centred 3-D point scatter, descending.
fn scatter_singular_values(points: &[Vector3<f64>]) -> Vector3<f64> {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vector3<f64>>() / n;
    let s: Matrix3<f64> = points.iter().map(|p| (p - c) * (p - c).transpose()).sum();
    let mut sv = s.symmetric_eigenvalues().map(|v| v.max(0.0).sqrt());
    sv.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    sv
}

fn check_geometry(corr: &[Correspondence], needed: usize, need_volume: bool) -> Result<()> {
    if corr.len() >= 3 {
        let pts: Vec<_> = corr.iter().map(|c| c.point).collect();
        let sv = scatter_singular_values(&pts);
        if !(sv[1] > 1e-9 * sv[0].max(f64::MIN_POSITIVE)) {
            return Err(Error::RankDeficient("model points are collinear".into()));
        }
        if corr.len() >= needed && need_volume && !(sv[2] > 1e-9 * sv[0]) {
            return Err(Error::RankDeficient(
                "model points are coplanar; DLT initialization needs a 3-D configuration".into(),
            ));
        }
    }
    if corr.len() < needed {
        return Err(Error::InsufficientData {
            needed,
            got: corr.len(),
        });
    }
    Ok(())
}

/// Linear pose from >= 6 correspondences (normalized 3-D coordinates).
fn dlt_pose(corr: &[Correspondence], k: &CameraIntrinsics) -> Result<RigidTransform> {
    let n = corr.len();
    let centroid = corr.iter().map(|c| c.point).sum::<Vector3<f64>>() / n as f64;
    let mean_dist = corr
        .iter()
        .map(|c| (c.point - centroid).norm())
        .sum::<f64>()
        / n as f64;
    if !(mean_dist > 0.0) {
        return Err(Error::RankDeficient("coincident model points".into()));
    }
    let s = 3f64.sqrt() / mean_dist;

    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, c) in corr.iter().enumerate() {
        let p = (c.point - centroid) * s;
        let x = (c.pixel.x - k.cx) / k.fx;
        let y = (c.pixel.y - k.cy) / k.fy;
        let ph = [p.x, p.y, p.z, 1.0];
        for j in 0..4 {
            a[(2 * i, j)] = ph[j];
            a[(2 * i, 8 + j)] = -x * ph[j];
            a[(2 * i + 1, 4 + j)] = ph[j];
            a[(2 * i + 1, 8 + j)] = -y * ph[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::NumericalFailure("DLT SVD failed".into()))?;
    let sv = &svd.singular_values;
    let smallest = (0..sv.len())
        .min_by(|&i, &j| sv[i].total_cmp(&sv[j]))
        .expect("non-empty singular values");
    let h = v_t.row(smallest);
    let p_norm = Matrix3x4::from_fn(|r, c| h[4 * r + c]);

    // Undo the point normalization: P = [s M' | p' - s M' c].
    let m_prime: Matrix3<f64> = p_norm.fixed_view::<3, 3>(0, 0).into_owned();
    let mut m = m_prime * s;
    let mut p4 = p_norm.column(3).into_owned() - m * centroid;
    if m.determinant() < 0.0 {
        m = -m;
        p4 = -p4;
    }
    let msvd = m.svd(true, true);
    let (u, v_t) = match (msvd.u, msvd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::NumericalFailure("DLT rotation SVD failed".into())),
    };
    let scale = msvd.singular_values.sum() / 3.0;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::RankDeficient(
            "DLT produced a degenerate projection".into(),
        ));
    }
    let r = Rotation::project(&(u * v_t))?;
    Ok(RigidTransform::new(r, p4 / scale))
}

fn reprojection(
    pose: &RigidTransform,
    k: &CameraIntrinsics,
    c: &Correspondence,
) -> Option<Vector2<f64>> {
    let pc = pose.transform_point(&c.point);
    k.project(&pc).ok().map(|px| px - c.pixel)
}

fn cost(pose: &RigidTransform, k: &CameraIntrinsics, corr: &[Correspondence]) -> Option<f64> {
    corr.iter()
        .map(|c| reprojection(pose, k, c).map(|r| r.norm_squared()))
        .sum()
}

/// Damped Gauss-Newton (Levenberg-Marquardt) on the squared pixel
/// reprojection error with left-multiplicative pose updates.
fn refine(
    init: RigidTransform,
    k: &CameraIntrinsics,
    corr: &[Correspondence],
    params: &RefineParams,
) -> (RigidTransform, bool, usize) {
    let mut pose = init;
    let Some(mut current) = cost(&pose, k, corr) else {
        return (pose, false, 0);
    };
    let mut damping = 1e-6;
    for iter in 1..=params.max_iterations {
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for c in corr {
            let pc = pose.transform_point(&c.point);
            let z = pc.z;
            let jp = Matrix2x3::new(
                k.fx / z,
                0.0,
                -k.fx * pc.x / (z * z),
                0.0,
                k.fy / z,
                -k.fy * pc.y / (z * z),
            );
            let mut jpose = SMatrix::<f64, 3, 6>::zeros();
            jpose
                .fixed_view_mut::<3, 3>(0, 0)
                .copy_from(&-crate::geometry::skew(&pc));
            jpose
                .fixed_view_mut::<3, 3>(0, 3)
                .copy_from(&Matrix3::identity());
            let j = jp * jpose;
            let r = Vector2::new(k.fx * pc.x / z + k.cx, k.fy * pc.y / z + k.cy) - c.pixel;
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        loop {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += damping * h[(i, i)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|ch| -ch.solve(&g)) else {
                damping *= 10.0;
                if damping > 1e12 {
                    return (pose, false, iter);
                }
                continue;
            };
            let omega = Vector3::new(step[0], step[1], step[2]);
            let v = Vector3::new(step[3], step[4], step[5]);
            let candidate = RigidTransform::new(Rotation::exp(&omega), v) * pose;
            let step_norm = step.norm();
            match cost(&candidate, k, corr) {
                Some(c) if c <= current => {
                    pose = candidate;
                    current = c;
                    damping = (damping / 3.0).max(1e-12);
                    if step_norm < params.step_tolerance {
                        return (pose, true, iter);
                    }
                    break;
                }
                _ => {
                    if step_norm < params.step_tolerance {
                        return (pose, true, iter);
                    }
                    damping *= 4.0;
                    if damping > 1e12 {
                        return (pose, true, iter);
                    }
                }
            }
        }
    }
    (pose, false, params.max_iterations)
}

fn finish(
    pose: RigidTransform,
    k: &CameraIntrinsics,
    corr: &[Correspondence],
    converged: bool,
    iterations: usize,
) -> PnPResult {
    let err = corr
        .iter()
        .map(|c| reprojection(&pose, k, c).map_or(f64::INFINITY, |r| r.norm()))
        .sum::<f64>()
        / corr.len() as f64;
    PnPResult {
        pose,
        inliers: corr.iter().map(|c| c.id).collect(),
        reprojection_error_px: err,
        converged,
        iterations,
    }
}

fn solve_correspondences(corr: &[Correspondence], k: &CameraIntrinsics) -> Result<PnPResult> {
    check_geometry(corr, DLT_MIN_POINTS, true)?;
    let init = dlt_pose(corr, k)?;
    let (pose, converged, iterations) = refine(init, k, corr, &RefineParams::default());
    Ok(finish(pose, k, corr, converged, iterations))
}

/// Pose from all visible correspondences: DLT initialization followed by
/// damped Gauss-Newton refinement.
pub fn solve_pnp(
    model: &KeypointModel,
    obs: &KeypointObservations,
    k: &CameraIntrinsics,
) -> Result<PnPResult> {
    solve_correspondences(&correspondences(model, obs, k), k)
}

/// Refinement-only PnP starting from `prior`; needs 4 correspondences.
pub fn solve_pnp_with_prior(
    model: &KeypointModel,
    obs: &KeypointObservations,
    k: &CameraIntrinsics,
    prior: &RigidTransform,
) -> Result<PnPResult> {
    let corr = correspondences(model, obs, k);
    check_geometry(&corr, PRIOR_MIN_POINTS, false)?;
    if cost(prior, k, &corr).is_none() {
        return Err(Error::InvalidInput(
            "pose prior puts model points behind the camera".into(),
        ));
    }
    let (pose, converged, iterations) = refine(*prior, k, &corr, &RefineParams::default());
    Ok(finish(pose, k, &corr, converged, iterations))
}

/// Hypothesize-and-verify over minimal 6-point DLT samples, then refit on
/// the largest consensus set with [`solve_pnp`].
pub fn solve_pnp_ransac<R: Rng + ?Sized>(
    model: &KeypointModel,
    obs: &KeypointObservations,
    k: &CameraIntrinsics,
    params: &RansacParams,
    rng: &mut R,
) -> Result<PnPResult> {
    if params.iterations == 0 || !(params.inlier_threshold_px > 0.0) || params.min_inliers == 0 {
        return Err(Error::InvalidInput(
            "RANSAC parameters must be positive".into(),
        ));
    }
    let corr = correspondences(model, obs, k);
    check_geometry(&corr, DLT_MIN_POINTS, true)?;
    let n = corr.len();
    let threshold_sq = params.inlier_threshold_px * params.inlier_threshold_px;

    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut budget = params.iterations;
    let mut iter = 0;
    while iter < budget {
        iter += 1;
        let idx = sample(rng, n, DLT_MIN_POINTS);
        let minimal: Vec<Correspondence> = idx.iter().map(|i| corr[i]).collect();
        let Ok(linear) = dlt_pose(&minimal, k) else {
            continue;
        };
        // A few damped steps on the minimal set tame the linear estimate,
        // which is fragile for compact keypoint clusters.
        let (pose, _, _) = refine(linear, k, &minimal, &HYPOTHESIS_REFINE);
        let mut inliers = Vec::new();
        let mut score = 0.0;
        for (i, c) in corr.iter().enumerate() {
            if let Some(r) = reprojection(&pose, k, c) {
                let e = r.norm_squared();
                if e < threshold_sq {
                    inliers.push(i);
                    score += e;
                }
            }
        }
        let better = match &best {
            None => !inliers.is_empty(),
            Some((b, s)) => inliers.len() > b.len() || (inliers.len() == b.len() && score < *s),
        };
        if better {
            let ratio = inliers.len() as f64 / n as f64;
            best = Some((inliers, score));
            if params.confidence < 1.0 {
                let p_good = ratio.powi(DLT_MIN_POINTS as i32);
                let needed = if p_good >= 1.0 {
                    0.0
                } else {
                    (1.0 - params.confidence).ln() / (1.0 - p_good).ln()
                };
                if needed.is_finite() {
                    budget = budget.min(needed.ceil().max(1.0) as usize);
                }
            }
        }
    }

    let best_count = best.as_ref().map_or(0, |(b, _)| b.len());
    if best_count < params.min_inliers.max(DLT_MIN_POINTS) {
        return Err(Error::NoConsensus {
            best: best_count,
            required: params.min_inliers.max(DLT_MIN_POINTS),
        });
    }
    let (inliers, _) = best.expect("consensus set exists");
    let subset: Vec<Correspondence> = inliers.iter().map(|&i| corr[i]).collect();
    solve_correspondences(&subset, k)
}

mod vec3_array {
    use nalgebra::Vector3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vector3<f64>, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector3<f64>, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        Ok(Vector3::new(a[0], a[1], a[2]))
    }
}

mod vec2_array {
    use nalgebra::Vector2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vector2<f64>, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector2<f64>, D::Error> {
        let a = <[f64; 2]>::deserialize(d)?;
        Ok(Vector2::new(a[0], a[1]))
    }
}
