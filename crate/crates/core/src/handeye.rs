//! Classical AX = XB hand-eye solvers.
//!
//! A calibration sample pairs the end-effector pose in the robot base frame
//! (`t_be`) with the calibration-object pose in the camera frame (`t_co`).
//! The unknown `X = T_EC` is the camera pose in the end-effector frame, and
//! `T_BE * X * T_CO` is the (constant) object pose in the base frame.
//!
//! For samples `i < j` the motion pair is
//! `A = T_BE_i^-1 * T_BE_j` and `B = T_CO_i * T_CO_j^-1`, so that `A X = X B`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, SMatrix, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{skew, DualQuaternion, Quaternion, RigidTransform, Rotation, UnitQuaternion};

/// One paired observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    /// End-effector in robot base frame.
    pub t_be: RigidTransform,
    /// Calibration object in camera frame.
    pub t_co: RigidTransform,
}

/// End-effector motion `a` and camera motion `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionPair {
    pub a: RigidTransform,
    pub b: RigidTransform,
}

impl MotionPair {
    /// Rotation angle (radians) and translation norm (meters) of
    /// `(a X) (X b)^-1`.
    pub fn residual(&self, x: &RigidTransform) -> (f64, f64) {
        let lhs = self.a * *x;
        let rhs = *x * self.b;
        (
            lhs.rotation.angle_to(&rhs.rotation),
            (lhs.translation - rhs.translation).norm(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandEyeMethod {
    Tsai,
    Park,
    Horaud,
    Daniilidis,
}

impl HandEyeMethod {
    pub const ALL: [HandEyeMethod; 4] = [
        HandEyeMethod::Tsai,
        HandEyeMethod::Park,
        HandEyeMethod::Horaud,
        HandEyeMethod::Daniilidis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HandEyeMethod::Tsai => "tsai",
            HandEyeMethod::Park => "park",
            HandEyeMethod::Horaud => "horaud",
            HandEyeMethod::Daniilidis => "daniilidis",
        }
    }
}

impl fmt::Display for HandEyeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HandEyeMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        HandEyeMethod::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown hand-eye method '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStrategy {
    #[default]
    AllPairs,
    Consecutive,
}

impl FromStr for PairStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "all_pairs" | "allpairs" | "all" => Ok(PairStrategy::AllPairs),
            "consecutive" => Ok(PairStrategy::Consecutive),
            _ => Err(Error::InvalidInput(format!("unknown pair strategy '{s}'"))),
        }
    }
}

/// Degeneracy thresholds shared by the solvers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Largest accepted condition number of a linear system.
    pub max_condition: f64,
    /// Smallest accepted ratio of the last non-null singular value to the
    /// largest one (quaternion and dual-quaternion null spaces).
    pub null_space_ratio: f64,
    /// Two motion axes count as distinct when their cross product exceeds this.
    pub axis_parallel_tolerance: f64,
    /// Motions rotating by less than this carry no axis information.
    pub min_motion_angle: f64,
    /// Pairs rotating by `>= pi - margin` are dropped by every solver.
    pub pi_margin: f64,
    /// Tsai drops pairs rotating by `> pi - margin` (modified-Rodrigues singularity).
    pub tsai_pi_margin: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_condition: 1e8,
            null_space_ratio: 1e-8,
            axis_parallel_tolerance: 1e-6,
            min_motion_angle: 1e-9,
            pi_margin: 1e-6,
            tsai_pi_margin: 1e-3,
        }
    }
}

pub fn build_motion_pairs(
    samples: &[CalibrationSample],
    strategy: PairStrategy,
) -> Result<Vec<MotionPair>> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: samples.len(),
        });
    }
    let pair = |i: usize, j: usize| MotionPair {
        a: samples[i].t_be.inverse() * samples[j].t_be,
        b: samples[i].t_co * samples[j].t_co.inverse(),
    };
    let n = samples.len();
    Ok(match strategy {
        PairStrategy::AllPairs => (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| pair(i, j))
            .collect(),
        PairStrategy::Consecutive => (1..n).map(|j| pair(j - 1, j)).collect(),
    })
}

/// Pairs whose rotation angle stays below `pi - margin` (strictly for
/// `inclusive == false`).
fn usable_pairs(pairs: &[MotionPair], margin: f64, inclusive: bool) -> Vec<MotionPair> {
    pairs
        .iter()
        .filter(|p| {
            let limit = PI - margin;
            let (ta, tb) = (p.a.rotation.angle(), p.b.rotation.angle());
            if inclusive {
                ta < limit && tb < limit
            } else {
                ta <= limit && tb <= limit
            }
        })
        .copied()
        .collect()
}

/// Requires at least two usable pairs whose end-effector rotation axes are
/// not all parallel.
pub fn check_motions(pairs: &[MotionPair], cfg: &SolverConfig) -> Result<()> {
    if pairs.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: pairs.len(),
        });
    }
    let axes: Vec<Vector3<f64>> = pairs
        .iter()
        .map(|p| p.a.rotation.to_axis_angle())
        .filter(|aa| aa.angle > cfg.min_motion_angle)
        .map(|aa| aa.axis)
        .collect();
    let diverse = axes.iter().enumerate().any(|(i, u)| {
        axes[i + 1..]
            .iter()
            .any(|v| u.cross(v).norm() > cfg.axis_parallel_tolerance)
    });
    if diverse {
        Ok(())
    } else {
        Err(Error::DegenerateMotion(
            "all motion rotation axes are parallel; the extrinsic is unobservable".into(),
        ))
    }
}

/// Least-squares solution with a condition-number guard.
fn solve_least_squares(
    m: DMatrix<f64>,
    rhs: &DVector<f64>,
    max_condition: f64,
    what: &str,
) -> Result<DVector<f64>> {
    let svd = m.svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if !(smax > 0.0) || !(smin > 0.0) || smax / smin > max_condition {
        return Err(Error::DegenerateMotion(format!(
            "{what} system is rank-deficient (condition number {:.3e})",
            if smin > 0.0 {
                smax / smin
            } else {
                f64::INFINITY
            }
        )));
    }
    svd.solve(rhs, 0.0)
        .map_err(|e| Error::NumericalFailure(format!("{what} least squares: {e}")))
}

/// Stacked `(R_a - I) t_x = R_x t_b - t_a` over all pairs.
fn solve_translation(
    pairs: &[MotionPair],
    rx: &Rotation,
    cfg: &SolverConfig,
) -> Result<Vector3<f64>> {
    let n = pairs.len();
    let mut c = DMatrix::zeros(3 * n, 3);
    let mut d = DVector::zeros(3 * n);
    for (i, p) in pairs.iter().enumerate() {
        c.fixed_view_mut::<3, 3>(3 * i, 0)
            .copy_from(&(p.a.rotation.matrix() - Matrix3::identity()));
        d.fixed_rows_mut::<3>(3 * i)
            .copy_from(&(rx.matrix() * p.b.translation - p.a.translation));
    }
    let t = solve_least_squares(c, &d, cfg.max_condition, "translation")?;
    Ok(Vector3::new(t[0], t[1], t[2]))
}

const TSAI_MAX_PASSES: usize = 10;
const TSAI_PASS_TOLERANCE: f64 = 1e-12;

pub fn solve_tsai(pairs: &[MotionPair]) -> Result<RigidTransform> {
    solve_tsai_with(pairs, &SolverConfig::default())
}

/// Tsai-Lenz: linear system on modified Rodrigues vectors
/// `P = 2 sin(theta / 2) axis`, `skew(P_a + P_b) P' = P_b - P_a`.
///
/// `P' = tan(theta_x / 2) axis` blows up as the extrinsic rotation nears a
/// half turn, which is common for wrist cameras. The system is therefore
/// re-solved for the residual `R_x Q^T` against the previous estimate `Q`
/// (pairs `(A, Q B Q^T)`), which is near the identity and well conditioned,
/// until the estimate stops moving.
pub fn solve_tsai_with(pairs: &[MotionPair], cfg: &SolverConfig) -> Result<RigidTransform> {
    let pairs = usable_pairs(pairs, cfg.tsai_pi_margin, false);
    check_motions(&pairs, cfg)?;
    let first = tsai_rotation(&pairs, &Rotation::identity(), cfg).or_else(|e| {
        // An exact half turn makes the first pass singular; any reasonably
        // distant start rotation removes the singularity.
        [Rotation::about_x(FRAC_PI_2), Rotation::about_y(FRAC_PI_2)]
            .iter()
            .find_map(|q| tsai_rotation(&pairs, q, cfg).ok())
            .ok_or(e)
    })?;
    let mut rx = first;
    for _ in 0..TSAI_MAX_PASSES {
        let next = tsai_rotation(&pairs, &rx, cfg)?;
        let step = next.angle_to(&rx);
        rx = next;
        if step < TSAI_PASS_TOLERANCE {
            break;
        }
    }
    let t = solve_translation(&pairs, &rx, cfg)?;
    Ok(RigidTransform::new(rx, t))
}

/// One Tsai rotation solve for `R_x = R' Q` with `R'` from the pairs
/// `(A, Q B Q^T)`.
fn tsai_rotation(pairs: &[MotionPair], q: &Rotation, cfg: &SolverConfig) -> Result<Rotation> {
    let n = pairs.len();
    let mut m = DMatrix::zeros(3 * n, 3);
    let mut rhs = DVector::zeros(3 * n);
    for (i, p) in pairs.iter().enumerate() {
        let pa = modified_rodrigues(&p.a.rotation);
        // Conjugation rotates the axis and keeps the angle.
        let pb = q.matrix() * modified_rodrigues(&p.b.rotation);
        m.fixed_view_mut::<3, 3>(3 * i, 0)
            .copy_from(&skew(&(pa + pb)));
        rhs.fixed_rows_mut::<3>(3 * i).copy_from(&(pb - pa));
    }
    let p_prime = solve_least_squares(m, &rhs, cfg.max_condition, "Tsai rotation")?;
    let p_prime = Vector3::new(p_prime[0], p_prime[1], p_prime[2]);
    // P' = tan(theta / 2) axis.
    let r = Rotation::from_axis_angle(&p_prime, 2.0 * p_prime.norm().atan());
    Rotation::project(&(r.matrix() * q.matrix()))
}

fn modified_rodrigues(r: &Rotation) -> Vector3<f64> {
    let aa = r.to_axis_angle();
    aa.axis * (2.0 * (aa.angle / 2.0).sin())
}

pub fn solve_park(pairs: &[MotionPair]) -> Result<RigidTransform> {
    solve_park_with(pairs, &SolverConfig::default())
}

/// Park-Martin: `M = sum log(R_b) log(R_a)^T`, `R_x = (M^T M)^(-1/2) M^T`.
pub fn solve_park_with(pairs: &[MotionPair], cfg: &SolverConfig) -> Result<RigidTransform> {
    let pairs = usable_pairs(pairs, cfg.pi_margin, true);
    check_motions(&pairs, cfg)?;
    let m: Matrix3<f64> = pairs
        .iter()
        .map(|p| p.b.rotation.log() * p.a.rotation.log().transpose())
        .sum();
    let mtm = m.transpose() * m;
    let eig = SymmetricEigen::new(mtm);
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    if !(lmin > 0.0) || lmax / lmin > cfg.max_condition * cfg.max_condition {
        return Err(Error::NumericalFailure(format!(
            "M^T M is singular (eigenvalues {:.3e} .. {:.3e}); inverse square root undefined",
            lmin, lmax
        )));
    }
    let inv_sqrt = Matrix3::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let polar = eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose() * m.transpose();
    let rx = if polar.determinant() > 0.0 {
        Rotation::project(&polar)?
    } else {
        return Err(Error::DegenerateMotion(
            "Park rotation estimate is a reflection; motion data inconsistent".into(),
        ));
    };
    let t = solve_translation(&pairs, &rx, cfg)?;
    Ok(RigidTransform::new(rx, t))
}

/// Matrix of `p -> q * p`.
fn left_mul_matrix(q: &Quaternion) -> Matrix4<f64> {
    Matrix4::new(
        q.w, -q.x, -q.y, -q.z, //
        q.x, q.w, -q.z, q.y, //
        q.y, q.z, q.w, -q.x, //
        q.z, -q.y, q.x, q.w,
    )
}

/// Matrix of `p -> p * q`.
fn right_mul_matrix(q: &Quaternion) -> Matrix4<f64> {
    Matrix4::new(
        q.w, -q.x, -q.y, -q.z, //
        q.x, q.w, q.z, -q.y, //
        q.y, -q.z, q.w, q.x, //
        q.z, q.y, -q.x, q.w,
    )
}

pub fn solve_horaud(pairs: &[MotionPair]) -> Result<RigidTransform> {
    solve_horaud_with(pairs, &SolverConfig::default())
}

/// Horaud-Dornaika: `q_x` minimizes `sum |q_a q_x - q_x q_b|^2` on the unit
/// sphere, i.e. the eigenvector of the smallest eigenvalue of the 4x4 form.
pub fn solve_horaud_with(pairs: &[MotionPair], cfg: &SolverConfig) -> Result<RigidTransform> {
    let pairs = usable_pairs(pairs, cfg.pi_margin, true);
    check_motions(&pairs, cfg)?;
    let mut form = Matrix4::zeros();
    for p in &pairs {
        let qa = UnitQuaternion::from_rotation(&p.a.rotation).into_inner();
        let qb = UnitQuaternion::from_rotation(&p.b.rotation).into_inner();
        let c = left_mul_matrix(&qa) - right_mul_matrix(&qb);
        form += c.transpose() * c;
    }
    if !form.iter().all(|v| v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite quaternion form".into()));
    }
    let eig = SymmetricEigen::try_new(form, f64::EPSILON, 1000)
        .ok_or_else(|| Error::NumericalFailure("eigen-solver did not converge".into()))?;
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let largest = eig.eigenvalues[order[3]].max(0.0).sqrt();
    let second = eig.eigenvalues[order[1]].max(0.0).sqrt();
    if !(second > cfg.null_space_ratio * largest) {
        return Err(Error::DegenerateMotion(
            "quaternion system has a multi-dimensional null space".into(),
        ));
    }
    let v = eig.eigenvectors.column(order[0]);
    let q = UnitQuaternion::new_normalize(Quaternion::new(v[0], v[1], v[2], v[3]))
        .ok_or_else(|| Error::NumericalFailure("zero eigenvector".into()))?;
    let rx = q.to_rotation();
    let t = solve_translation(&pairs, &rx, cfg)?;
    Ok(RigidTransform::new(rx, t))
}

pub fn solve_daniilidis(pairs: &[MotionPair]) -> Result<RigidTransform> {
    solve_daniilidis_with(pairs, &SolverConfig::default())
}

/// Daniilidis: stacked 6x8 dual-quaternion constraints, 2-D null space from
/// the SVD, and the unit/orthogonality quadratic to pick the combination.
pub fn solve_daniilidis_with(pairs: &[MotionPair], cfg: &SolverConfig) -> Result<RigidTransform> {
    let pairs = usable_pairs(pairs, cfg.pi_margin, true);
    check_motions(&pairs, cfg)?;
    let n = pairs.len();
    let mut t = DMatrix::zeros(6 * n, 8);
    for (i, p) in pairs.iter().enumerate() {
        let da = DualQuaternion::from_transform(&p.a).canonical();
        let db = DualQuaternion::from_transform(&p.b).canonical();
        let block = dual_constraint_block(&da, &db);
        t.fixed_view_mut::<6, 8>(6 * i, 0).copy_from(&block);
    }
    if !t.iter().all(|v| v.is_finite()) {
        return Err(Error::NumericalFailure(
            "non-finite dual-quaternion constraints".into(),
        ));
    }
    let svd = t.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::NumericalFailure("SVD failed".into()))?;
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    if !(sv[order[5]] >= cfg.null_space_ratio * sv[order[0]]) {
        return Err(Error::DegenerateMotion(format!(
            "sixth singular value {:.3e} does not isolate a 2-D null space (largest {:.3e})",
            sv[order[5]], sv[order[0]]
        )));
    }
    let v1 = v_t.row(order[6]).transpose();
    let v2 = v_t.row(order[7]).transpose();
    let (u1, w1) = split8(&v1);
    let (u2, w2) = split8(&v2);

    // q = l1 (u1, w1) + l2 (u2, w2) with real . dual = 0 and |real| = 1.
    let qa = u1.dot(&w1);
    let qb = u1.dot(&w2) + u2.dot(&w1);
    let qc = u2.dot(&w2);
    let candidates = homogeneous_quadratic_roots(qa, qb, qc)?;
    let norm_sq = |(l1, l2): (f64, f64)| {
        l1 * l1 * u1.dot(&u1) + 2.0 * l1 * l2 * u1.dot(&u2) + l2 * l2 * u2.dot(&u2)
    };
    // Exact data puts the spurious root where the real part vanishes. Compare
    // unit-length directions: with noise, a root scaled up by a nearly pure
    // dual basis vector would otherwise look large.
    let unit = |(l1, l2): (f64, f64)| {
        let n = l1.hypot(l2);
        (l1 / n, l2 / n)
    };
    let (l1, l2) = candidates
        .into_iter()
        .map(unit)
        .max_by(|a, b| norm_sq(*a).total_cmp(&norm_sq(*b)))
        .expect("two candidate directions");
    let s = norm_sq((l1, l2));
    if !(s > 0.0) {
        return Err(Error::NumericalFailure(
            "zero-norm dual-quaternion solution".into(),
        ));
    }
    let scale = 1.0 / s.sqrt();
    let real = u1.scale(l1 * scale) + u2.scale(l2 * scale);
    let dual = w1.scale(l1 * scale) + w2.scale(l2 * scale);
    DualQuaternion { real, dual }
        .to_transform()
        .ok_or_else(|| Error::NumericalFailure("invalid dual quaternion".into()))
}

fn split8(v: &nalgebra::DVector<f64>) -> (Quaternion, Quaternion) {
    (
        Quaternion::new(v[0], v[1], v[2], v[3]),
        Quaternion::new(v[4], v[5], v[6], v[7]),
    )
}

/// Rows of `a q - q b = 0` (vector parts only), unknowns `(q, q')`.
fn dual_constraint_block(a: &DualQuaternion, b: &DualQuaternion) -> SMatrix<f64, 6, 8> {
    let (ar, ad) = (a.real.vector(), a.dual.vector());
    let (br, bd) = (b.real.vector(), b.dual.vector());
    let mut s = SMatrix::<f64, 6, 8>::zeros();
    s.fixed_view_mut::<3, 1>(0, 0).copy_from(&(ar - br));
    s.fixed_view_mut::<3, 3>(0, 1).copy_from(&skew(&(ar + br)));
    s.fixed_view_mut::<3, 1>(3, 0).copy_from(&(ad - bd));
    s.fixed_view_mut::<3, 3>(3, 1).copy_from(&skew(&(ad + bd)));
    s.fixed_view_mut::<3, 1>(3, 4).copy_from(&(ar - br));
    s.fixed_view_mut::<3, 3>(3, 5).copy_from(&skew(&(ar + br)));
    s
}

/// Directions `(l1, l2)` solving `a l1^2 + b l1 l2 + c l2^2 = 0`.
fn homogeneous_quadratic_roots(a: f64, b: f64, c: f64) -> Result<[(f64, f64); 2]> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if !(scale > 0.0) {
        return Err(Error::NumericalFailure(
            "vanishing constraint quadratic".into(),
        ));
    }
    let (a, b, c) = (a / scale, b / scale, c / scale);
    let mut disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        if disc < -1e-10 {
            return Err(Error::NoRealRoot);
        }
        disc = 0.0;
    }
    let sq = disc.sqrt();
    if a == 0.0 && c == 0.0 {
        return Ok([(1.0, 0.0), (0.0, 1.0)]);
    }
    if a.abs() >= c.abs() {
        // l1 / l2 = s.
        let s1 = (-b + sq) / (2.0 * a);
        let s2 = (-b - sq) / (2.0 * a);
        Ok([(s1, 1.0), (s2, 1.0)])
    } else {
        // l2 / l1 = t.
        let t1 = (-b + sq) / (2.0 * c);
        let t2 = (-b - sq) / (2.0 * c);
        Ok([(1.0, t1), (1.0, t2)])
    }
}

pub fn solve(method: HandEyeMethod, pairs: &[MotionPair]) -> Result<RigidTransform> {
    solve_with(method, pairs, &SolverConfig::default())
}

pub fn solve_with(
    method: HandEyeMethod,
    pairs: &[MotionPair],
    cfg: &SolverConfig,
) -> Result<RigidTransform> {
    match method {
        HandEyeMethod::Tsai => solve_tsai_with(pairs, cfg),
        HandEyeMethod::Park => solve_park_with(pairs, cfg),
        HandEyeMethod::Horaud => solve_horaud_with(pairs, cfg),
        HandEyeMethod::Daniilidis => solve_daniilidis_with(pairs, cfg),
    }
}

/// Builds motion pairs from `samples` and solves for `X = T_EC`.
pub fn calibrate(
    samples: &[CalibrationSample],
    method: HandEyeMethod,
    strategy: PairStrategy,
) -> Result<RigidTransform> {
    if samples.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: samples.len(),
        });
    }
    let pairs = build_motion_pairs(samples, strategy)?;
    solve(method, &pairs)
}
