//! Pose error metrics: position error, rotation error and the ground-truth
//! free spread of the calibration object's estimated base-frame position.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::handeye::CalibrationSample;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    /// Meters.
    pub e_t: f64,
    /// Radians, in `[0, pi]`.
    pub e_r: f64,
}

impl PoseError {
    pub fn between(est: &RigidTransform, truth: &RigidTransform) -> Self {
        Self {
            e_t: position_error(est, truth),
            e_r: rotation_error(est, truth),
        }
    }
}

/// `|t_est - t_truth|`.
pub fn position_error(est: &RigidTransform, truth: &RigidTransform) -> f64 {
    (est.translation - truth.translation).norm()
}

/// Angle of `R_delta` where `R_truth = R_delta * R_est`.
pub fn rotation_error(est: &RigidTransform, truth: &RigidTransform) -> f64 {
    truth.rotation.angle_to(&est.rotation)
}

/// Estimated object positions `t_BO = T_BE * T_EC * T_CO` over `eval_set`.
pub fn object_positions(
    est_extrinsic: &RigidTransform,
    eval_set: &[CalibrationSample],
) -> Vec<Vector3<f64>> {
    eval_set
        .iter()
        .map(|s| (s.t_be * *est_extrinsic * s.t_co).translation)
        .collect()
}

/// Root mean squared deviation of points from their mean (divisor = count).
pub fn position_spread(points: &[Vector3<f64>]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector3<f64>>() / n;
    let ss: f64 = points.iter().map(|p| (p - mean).norm_squared()).sum();
    Ok((ss / n).sqrt())
}

/// Spread of the calibration object's estimated base-frame position across
/// the evaluation set for one extrinsic estimate.
pub fn indirect_spread_error(
    est_extrinsic: &RigidTransform,
    eval_set: &[CalibrationSample],
) -> Result<f64> {
    position_spread(&object_positions(est_extrinsic, eval_set))
}

/// Spread of all object positions produced by every estimate against every
/// evaluation sample, pooled into one set.
pub fn pooled_spread_error(
    estimates: &[RigidTransform],
    eval_set: &[CalibrationSample],
) -> Result<f64> {
    let points: Vec<_> = estimates
        .iter()
        .flat_map(|x| object_positions(x, eval_set))
        .collect();
    position_spread(&points)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geometry::Rotation;

    fn random_transform(rng: &mut impl Rng) -> RigidTransform {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        RigidTransform::new(
            Rotation::from_axis_angle(&axis, rng.random_range(0.0..3.0)),
            Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ),
        )
    }

    fn exact_eval_set(
        rng: &mut impl Rng,
        x: &RigidTransform,
        t_bo: &RigidTransform,
        n: usize,
    ) -> Vec<CalibrationSample> {
        (0..n)
            .map(|_| {
                let t_be = random_transform(rng);
                CalibrationSample {
                    t_be,
                    t_co: (t_be * *x).inverse() * *t_bo,
                }
            })
            .collect()
    }

    #[test]
    fn hand_computed_errors() {
        let truth = RigidTransform::from_translation(Vector3::new(0.1, 0.2, 0.3));
        assert_eq!(position_error(&truth, &truth), 0.0);
        assert_eq!(rotation_error(&truth, &truth), 0.0);

        let est = RigidTransform::from_translation(Vector3::new(0.103, 0.204, 0.3));
        assert!((position_error(&est, &truth) - 0.005).abs() < 1e-12);

        let est = RigidTransform::from_rotation(Rotation::about_x(0.4));
        let truth =
            RigidTransform::from_rotation(Rotation::about_z(10f64.to_radians()) * est.rotation);
        assert!((rotation_error(&est, &truth) - 10f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn rotation_error_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..500 {
            let a = random_transform(&mut rng);
            let b = random_transform(&mut rng);
            assert!((rotation_error(&a, &b) - rotation_error(&b, &a)).abs() < 1e-12);
        }
    }

    #[test]
    fn position_error_ignores_common_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let a = random_transform(&mut rng);
            let b = random_transform(&mut rng);
            let g = RigidTransform::from_translation(Vector3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            ));
            assert!((position_error(&(g * a), &(g * b)) - position_error(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn spread_is_zero_for_exact_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x = random_transform(&mut rng);
        let t_bo = random_transform(&mut rng);
        let eval = exact_eval_set(&mut rng, &x, &t_bo, 60);
        assert!(indirect_spread_error(&x, &eval).unwrap() < 1e-12);
        assert_eq!(
            indirect_spread_error(&x, &[]),
            Err(Error::InsufficientData { needed: 1, got: 0 })
        );
    }

    #[test]
    fn translation_bias_is_common_mode_under_constant_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = random_transform(&mut rng);
        let t_bo = random_transform(&mut rng);
        let r = Rotation::about_y(0.7);
        let eval: Vec<_> = (0..60)
            .map(|_| {
                let t_be = RigidTransform::new(
                    r,
                    Vector3::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), 0.5),
                );
                CalibrationSample {
                    t_be,
                    t_co: (t_be * x).inverse() * t_bo,
                }
            })
            .collect();
        // t_BO shifts by R_BE * delta for every sample alike.
        let biased =
            RigidTransform::new(x.rotation, x.translation + Vector3::new(0.01, -0.02, 0.005));
        assert!(indirect_spread_error(&biased, &eval).unwrap() < 1e-12);
    }

    #[test]
    fn spread_is_invariant_to_base_frame_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let x = random_transform(&mut rng);
        let t_bo = random_transform(&mut rng);
        let eval = exact_eval_set(&mut rng, &x, &t_bo, 60);
        let est = RigidTransform::new(Rotation::about_x(0.05) * x.rotation, x.translation);
        let g = random_transform(&mut rng);
        let moved: Vec<_> = eval
            .iter()
            .map(|s| CalibrationSample {
                t_be: g * s.t_be,
                t_co: s.t_co,
            })
            .collect();
        let a = indirect_spread_error(&est, &eval).unwrap();
        let b = indirect_spread_error(&est, &moved).unwrap();
        assert!(a > 0.0);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn pooled_spread_matches_single_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let x = random_transform(&mut rng);
        let t_bo = random_transform(&mut rng);
        let eval = exact_eval_set(&mut rng, &x, &t_bo, 10);
        let est = RigidTransform::new(Rotation::about_z(0.1) * x.rotation, x.translation);
        let single = indirect_spread_error(&est, &eval).unwrap();
        let pooled = pooled_spread_error(&[est, est], &eval).unwrap();
        assert!((single - pooled).abs() < 1e-12);
    }
}
