//! Dense second stage: mask the depth map, back-project it to a point cloud
//! and refine the pose with ICP against the end-effector model cloud.

mod io;
mod kdtree;

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, RigidTransform, Rotation};

pub use io::{
    read_cloud_csv, read_depth_map, read_seg_mask, write_cloud_csv, write_depth_map,
    write_seg_mask, GridEncoding, GridHeader,
};
pub use kdtree::KdTree;

#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    /// Row-major meters; non-positive marks an invalid pixel.
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                got: (data.len(), 1),
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite depth {bad}")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, depth: f64) -> Self {
        Self {
            width,
            height,
            data: vec![depth; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, depth: f64) {
        self.data[v * self.width + u] = depth;
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&d| d > 0.0).count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl SegMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                got: (data.len(), 1),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..height)
            .flat_map(|v| (0..width).map(move |u| (u, v)))
            .map(|(u, v)| f(u, v))
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    normals: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self {
            points,
            normals: None,
        }
    }

    pub fn with_normals(points: Vec<Vector3<f64>>, normals: Vec<Vector3<f64>>) -> Result<Self> {
        if normals.len() != points.len() {
            return Err(Error::InvalidInput(format!(
                "{} normals for {} points",
                normals.len(),
                points.len()
            )));
        }
        if let Some(n) = normals.iter().find(|n| (n.norm() - 1.0).abs() > 1e-6) {
            return Err(Error::InvalidInput(format!(
                "normal {n:?} is not unit length"
            )));
        }
        Ok(Self {
            points,
            normals: Some(normals),
        })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Applies `t` to every point (and rotates the normals).
    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.transform_point(p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| t.transform_vector(n)).collect()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcpVariant {
    #[default]
    PointToPoint,
    PointToPlane,
}

impl std::str::FromStr for IcpVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "point_to_point" | "p2p" => Ok(IcpVariant::PointToPoint),
            "point_to_plane" | "p2l" => Ok(IcpVariant::PointToPlane),
            other => Err(Error::InvalidInput(format!(
                "unknown ICP variant '{other}'"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpParams {
    pub max_iter: usize,
    /// Stop once the pose update (rotation angle + translation norm) falls
    /// below this.
    pub tol: f64,
    pub max_corr_dist: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-8,
            max_corr_dist: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IcpResult {
    /// Model-to-source transform: `source ~ pose * model`.
    pub pose: RigidTransform,
    pub iterations: usize,
    /// Root-mean-square correspondence distance at the final pose, meters.
    pub residual: f64,
    pub converged: bool,
    /// Residual of the correspondences found at the start of each iteration.
    pub history: Vec<f64>,
}

pub fn segment_depth(d: &DepthMap, m: &SegMask) -> Result<DepthMap> {
    if (d.width, d.height) != (m.width, m.height) {
        return Err(Error::DimensionMismatch {
            expected: (d.width, d.height),
            got: (m.width, m.height),
        });
    }
    let data = d
        .data
        .iter()
        .zip(&m.data)
        .map(|(&depth, &keep)| if keep { depth } else { 0.0 })
        .collect();
    Ok(DepthMap {
        width: d.width,
        height: d.height,
        data,
    })
}

/// Back-projects every valid pixel; pixel `(u, v)` sits at image coordinate
/// `(u, v)`.
pub fn depth_to_cloud(d: &DepthMap, k: &CameraIntrinsics) -> Result<PointCloud> {
    if (d.width, d.height) != (k.width as usize, k.height as usize) {
        return Err(Error::DimensionMismatch {
            expected: (k.width as usize, k.height as usize),
            got: (d.width, d.height),
        });
    }
    let mut points = Vec::with_capacity(d.valid_count());
    for v in 0..d.height {
        for u in 0..d.width {
            let z = d.get(u, v);
            if z > 0.0 {
                points.push(Vector3::new(
                    (u as f64 - k.cx) / k.fx * z,
                    (v as f64 - k.cy) / k.fy * z,
                    z,
                ));
            }
        }
    }
    Ok(PointCloud::new(points))
}

struct Pairing {
    /// Source point expressed in the model frame.
    query: Vector3<f64>,
    model: usize,
    dist_sq: f64,
}

fn associate(
    source: &[Vector3<f64>],
    tree: &KdTree,
    pose: &RigidTransform,
    max_dist: f64,
) -> Vec<Pairing> {
    let inv = pose.inverse();
    source
        .par_iter()
        .filter_map(|s| {
            let query = inv.transform_point(s);
            tree.nearest_within(&query, max_dist)
                .map(|(model, dist_sq)| Pairing {
                    query,
                    model,
                    dist_sq,
                })
        })
        .collect()
}

fn rms(pairs: &[Pairing]) -> f64 {
    (pairs.iter().map(|p| p.dist_sq).sum::<f64>() / pairs.len() as f64).sqrt()
}

/// Closed-form rigid `delta` minimizing `sum |delta * q - m|^2`.
fn kabsch(pairs: &[Pairing], model: &[Vector3<f64>]) -> Result<RigidTransform> {
    let n = pairs.len() as f64;
    let qc = pairs.iter().map(|p| p.query).sum::<Vector3<f64>>() / n;
    let mc = pairs.iter().map(|p| model[p.model]).sum::<Vector3<f64>>() / n;
    let h: Matrix3<f64> = pairs
        .iter()
        .map(|p| (p.query - qc) * (model[p.model] - mc).transpose())
        .sum();
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::NumericalFailure("ICP alignment SVD failed".into())),
    };
    let d = (v_t.transpose() * u.transpose()).determinant().signum();
    let r = v_t.transpose() * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let r = Rotation::from_matrix_unchecked(r);
    Ok(RigidTransform::new(r, mc - r * qc))
}

/// Linearized `delta` minimizing `sum ((delta * q - m) . n)^2`.
fn point_to_plane(
    pairs: &[Pairing],
    model: &[Vector3<f64>],
    normals: &[Vector3<f64>],
) -> Result<RigidTransform> {
    let mut h = Matrix6::<f64>::zeros();
    let mut g = Vector6::<f64>::zeros();
    for p in pairs {
        let n = normals[p.model];
        let r = (p.query - model[p.model]).dot(&n);
        let c = p.query.cross(&n);
        let j = Vector6::new(c.x, c.y, c.z, n.x, n.y, n.z);
        h += j * j.transpose();
        g += j * r;
    }
    let x = h
        .svd(true, true)
        .solve(&(-g), 1e-12 * h.norm().max(f64::MIN_POSITIVE))
        .map_err(|e| Error::NumericalFailure(format!("point-to-plane solve failed: {e}")))?;
    let omega = Vector3::new(x[0], x[1], x[2]);
    Ok(RigidTransform::new(
        Rotation::exp(&omega),
        Vector3::new(x[3], x[4], x[5]),
    ))
}

/// Refines `init` so that `source ~ pose * model`.
pub fn icp_refine(
    source: &PointCloud,
    model: &PointCloud,
    init: &RigidTransform,
    variant: IcpVariant,
    params: &IcpParams,
) -> Result<IcpResult> {
    if source.is_empty() || model.is_empty() {
        return Err(Error::InvalidInput("ICP needs non-empty clouds".into()));
    }
    if params.max_iter == 0 || !(params.tol >= 0.0) || !(params.max_corr_dist > 0.0) {
        return Err(Error::InvalidInput("invalid ICP parameters".into()));
    }
    let normals =
        match variant {
            IcpVariant::PointToPoint => None,
            IcpVariant::PointToPlane => Some(model.normals().ok_or_else(|| {
                Error::InvalidInput("point-to-plane ICP needs model normals".into())
            })?),
        };
    let tree = KdTree::build(model.points());
    let mut pose = *init;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut pairs = associate(source.points(), &tree, &pose, params.max_corr_dist);
    if pairs.is_empty() {
        return Err(Error::EmptyCorrespondence(params.max_corr_dist));
    }

    while iterations < params.max_iter {
        iterations += 1;
        history.push(rms(&pairs));
        let delta = match normals {
            None => kabsch(&pairs, model.points())?,
            Some(ns) => point_to_plane(&pairs, model.points(), ns)?,
        };
        // Source points map into the model frame by `delta * pose^-1`.
        pose = pose * delta.inverse();
        let step = delta.rotation.angle() + delta.translation.norm();
        let next = associate(source.points(), &tree, &pose, params.max_corr_dist);
        if next.is_empty() {
            break;
        }
        pairs = next;
        if step < params.tol {
            converged = true;
            break;
        }
    }

    Ok(IcpResult {
        pose,
        iterations,
        residual: rms(&pairs),
        converged,
        history,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn box_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
        // Three faces of an asymmetric box: well-conditioned for alignment.
        let mut points = Vec::new();
        let mut normals = Vec::new();
        for i in 0..n {
            let (a, b) = (rng.random::<f64>(), rng.random::<f64>());
            let (p, nrm) = match i % 3 {
                0 => (
                    Vector3::new(0.08 * a, 0.05 * b, 0.0),
                    Vector3::new(0.0, 0.0, -1.0),
                ),
                1 => (
                    Vector3::new(0.08 * a, 0.0, 0.03 * b),
                    Vector3::new(0.0, -1.0, 0.0),
                ),
                _ => (
                    Vector3::new(0.0, 0.05 * a, 0.03 * b),
                    Vector3::new(-1.0, 0.0, 0.0),
                ),
            };
            points.push(p);
            normals.push(nrm);
        }
        PointCloud::with_normals(points, normals).unwrap()
    }

    fn pose() -> RigidTransform {
        RigidTransform::new(
            Rotation::from_axis_angle(&Vector3::new(0.2, 1.0, -0.4), 0.6),
            Vector3::new(0.02, -0.01, 0.3),
        )
    }

    fn perturb(t: &RigidTransform, rng: &mut impl Rng, trans: f64, angle: f64) -> RigidTransform {
        let dir = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        RigidTransform::new(
            Rotation::from_axis_angle(&axis, angle) * t.rotation,
            t.translation + dir * trans,
        )
    }

    #[test]
    fn segment_depth_examples() {
        let d = DepthMap::new(4, 2, (1..=8).map(f64::from).collect()).unwrap();
        assert_eq!(
            segment_depth(&d, &SegMask::from_fn(4, 2, |_, _| true)).unwrap(),
            d
        );
        assert_eq!(
            segment_depth(&d, &SegMask::from_fn(4, 2, |_, _| false))
                .unwrap()
                .valid_count(),
            0
        );
        let checker = SegMask::from_fn(4, 2, |u, v| (u + v) % 2 == 0);
        assert_eq!(segment_depth(&d, &checker).unwrap().valid_count(), 4);
        assert!(matches!(
            segment_depth(&d, &SegMask::from_fn(2, 4, |_, _| true)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn depth_to_cloud_examples() {
        let k = CameraIntrinsics::wrist_camera();
        let mut d = DepthMap::filled(256, 144, 0.0);
        assert!(depth_to_cloud(&d, &k).unwrap().is_empty());
        d.set(128, 72, 1.0);
        assert_eq!(
            depth_to_cloud(&d, &k).unwrap().points(),
            &[Vector3::new(0.0, 0.0, 1.0)]
        );
        assert!(depth_to_cloud(&DepthMap::filled(10, 10, 1.0), &k).is_err());
    }

    #[test]
    fn plane_depth_map_gives_coplanar_cloud() {
        let k = CameraIntrinsics::wrist_camera();
        // Plane n . p = c seen by the camera: depth along each ray.
        let n = Vector3::new(0.1, -0.2, 1.0).normalize();
        let c = 0.5;
        let mut d = DepthMap::filled(256, 144, 0.0);
        for v in 0..144 {
            for u in 0..256 {
                let ray = Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
                d.set(u, v, c / n.dot(&ray));
            }
        }
        let cloud = depth_to_cloud(&d, &k).unwrap();
        assert_eq!(cloud.len(), 256 * 144);
        // Independent least-squares plane fit through the centroid.
        let centroid = cloud.points().iter().sum::<Vector3<f64>>() / cloud.len() as f64;
        let scatter: Matrix3<f64> = cloud
            .points()
            .iter()
            .map(|p| (p - centroid) * (p - centroid).transpose())
            .sum();
        let eig = scatter.symmetric_eigen();
        let normal = eig.eigenvectors.column(eig.eigenvalues.imin()).into_owned();
        let worst = cloud
            .points()
            .iter()
            .map(|p| (p - centroid).dot(&normal).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn exact_alignment_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let model = box_cloud(&mut rng, 1500);
        let t = pose();
        let source = model.transformed(&t);
        for variant in [IcpVariant::PointToPoint, IcpVariant::PointToPlane] {
            let r = icp_refine(&source, &model, &t, variant, &IcpParams::default()).unwrap();
            assert!(r.converged);
            assert!(r.iterations <= 1);
            assert!(r.residual < 1e-9);
        }
    }

    #[test]
    fn perturbed_init_is_recovered_with_monotone_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let model = box_cloud(&mut rng, 3000);
        let t = pose();
        let source = model.transformed(&t);
        for _ in 0..10 {
            let init = perturb(&t, &mut rng, 0.005, 5f64.to_radians());
            let r = icp_refine(
                &source,
                &model,
                &init,
                IcpVariant::PointToPoint,
                &IcpParams::default(),
            )
            .unwrap();
            assert!((r.pose.translation - t.translation).norm() < 1e-4);
            assert!(r.pose.rotation.angle_to(&t.rotation) < 1e-4);
            for w in r.history.windows(2) {
                assert!(w[1] <= w[0] + 1e-15, "{:?}", r.history);
            }
            let p2l = icp_refine(
                &source,
                &model,
                &init,
                IcpVariant::PointToPlane,
                &IcpParams::default(),
            )
            .unwrap();
            assert!((p2l.pose.translation - t.translation).norm() < 1e-4);
        }
    }

    #[test]
    fn grossly_wrong_init_has_no_correspondences() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let model = box_cloud(&mut rng, 300);
        let source = model.transformed(&pose());
        let far = RigidTransform::from_translation(Vector3::new(5.0, 0.0, 0.0));
        assert_eq!(
            icp_refine(
                &source,
                &model,
                &far,
                IcpVariant::PointToPoint,
                &IcpParams::default()
            )
            .unwrap_err(),
            Error::EmptyCorrespondence(0.02)
        );
    }

    #[test]
    fn frame_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let model = box_cloud(&mut rng, 2000);
        let t = pose();
        let source = model.transformed(&t);
        let init = perturb(&t, &mut rng, 0.003, 0.03);
        let g = RigidTransform::new(
            Rotation::about_z(0.8) * Rotation::about_x(-0.3),
            Vector3::new(0.4, -1.0, 0.2),
        );
        let params = IcpParams {
            max_iter: 5,
            ..IcpParams::default()
        };
        let a = icp_refine(&source, &model, &init, IcpVariant::PointToPoint, &params).unwrap();
        let b = icp_refine(
            &source.transformed(&g),
            &model.transformed(&g),
            &(g * init * g.inverse()),
            IcpVariant::PointToPoint,
            &params,
        )
        .unwrap();
        let expected = g * a.pose * g.inverse();
        assert!(
            (expected.to_homogeneous() - b.pose.to_homogeneous())
                .abs()
                .max()
                < 1e-6
        );
    }

    #[test]
    fn point_to_plane_needs_normals() {
        let cloud = PointCloud::new(vec![Vector3::zeros(); 3]);
        assert!(icp_refine(
            &cloud,
            &cloud,
            &RigidTransform::identity(),
            IcpVariant::PointToPlane,
            &IcpParams::default()
        )
        .is_err());
        assert!(PointCloud::with_normals(
            vec![Vector3::zeros()],
            vec![Vector3::new(0.0, 0.0, 2.0)]
        )
        .is_err());
    }
}
