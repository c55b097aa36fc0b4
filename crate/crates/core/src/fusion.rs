//! Fusion of independent single-image extrinsic estimates.
//!
//! Each estimate is reduced to a 6-vector `(t, euler_xyz)`. The samples with
//! the lowest density under a Gaussian fitted to all of them are discarded
//! and the survivors are averaged component-wise.
//!
//! Euler angles are averaged directly, which is ill-defined near gimbal lock
//! or for widely spread rotations. Angles are first unwrapped onto the branch
//! nearest their circular mean so clusters straddling `+-pi` stay intact.

use std::cmp::Ordering;
use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{EulerXYZ, RigidTransform, Rotation};

pub const DEFAULT_DISCARD_FRACTION: f64 = 0.2;

/// At least two estimates to fuse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<RigidTransform>", into = "Vec<RigidTransform>")]
pub struct EstimateBatch(Vec<RigidTransform>);

impl EstimateBatch {
    pub fn new(estimates: Vec<RigidTransform>) -> Result<Self> {
        if estimates.len() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: estimates.len(),
            });
        }
        Ok(Self(estimates))
    }

    pub fn estimates(&self) -> &[RigidTransform] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<RigidTransform>> for EstimateBatch {
    type Error = Error;
    fn try_from(v: Vec<RigidTransform>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<EstimateBatch> for Vec<RigidTransform> {
    fn from(b: EstimateBatch) -> Self {
        b.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionOutcome {
    pub fused: RigidTransform,
    /// Input indices of the discarded estimates, in ascending order.
    pub discarded: Vec<usize>,
    /// False when the covariance could not be factored and every sample was
    /// averaged without ranking.
    pub ranked: bool,
}

/// Number of samples discarded for a batch of `n`.
pub fn discard_count(n: usize, fraction: f64) -> usize {
    (fraction * n as f64 + 1e-9).floor() as usize
}

pub fn fuse_estimates(batch: &EstimateBatch, discard_fraction: f64) -> Result<RigidTransform> {
    fuse_estimates_detailed(batch.estimates(), discard_fraction).map(|o| o.fused)
}

pub fn fuse_estimates_detailed(
    estimates: &[RigidTransform],
    discard_fraction: f64,
) -> Result<FusionOutcome> {
    let n = estimates.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    if !(0.0..1.0).contains(&discard_fraction) {
        return Err(Error::InvalidInput(format!(
            "discard fraction {discard_fraction} must lie in [0, 1)"
        )));
    }
    let k = discard_count(n, discard_fraction);
    if n - k < 1 {
        return Err(Error::InsufficientData {
            needed: k + 1,
            got: n,
        });
    }

    if estimates.iter().all(|e| *e == estimates[0]) {
        return Ok(FusionOutcome {
            fused: estimates[0],
            discarded: (n - k..n).collect(),
            ranked: false,
        });
    }

    // Canonical processing order makes every floating-point sum independent
    // of the input order.
    let raw: Vec<Vector6<f64>> = estimates.iter().map(to_six).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| lexicographic(&raw[i], &raw[j]).then(i.cmp(&j)));
    let mut xs: Vec<Vector6<f64>> = order.iter().map(|&i| raw[i]).collect();
    unwrap_angles(&mut xs);

    let mean = mean_of(xs.iter());
    let mut cov = Matrix6::zeros();
    for x in &xs {
        let d = x - mean;
        cov += d * d.transpose();
    }
    cov /= (n - 1) as f64;
    let lambda = 1e-12 + 1e-9 * cov.trace() / 6.0;
    cov += Matrix6::identity() * lambda;

    let (survivors, ranked): (Vec<usize>, bool) = match cov.cholesky() {
        Some(chol) if k > 0 => {
            // Lowest density == largest Mahalanobis distance.
            let dist: Vec<f64> = xs
                .iter()
                .map(|x| {
                    let d = x - mean;
                    d.dot(&chol.solve(&d))
                })
                .collect();
            let mut rank: Vec<usize> = (0..n).collect();
            rank.sort_by(|&i, &j| dist[j].total_cmp(&dist[i]).then(i.cmp(&j)));
            let mut keep = rank[k..].to_vec();
            keep.sort_unstable();
            (keep, true)
        }
        Some(_) => ((0..n).collect(), true),
        None => ((0..n).collect(), false),
    };

    let fused6 = mean_of(survivors.iter().map(|&i| &xs[i]));
    let mut discarded: Vec<usize> = (0..n)
        .filter(|i| !survivors.contains(i))
        .map(|i| order[i])
        .collect();
    discarded.sort_unstable();
    Ok(FusionOutcome {
        fused: from_six(&fused6)?,
        discarded,
        ranked,
    })
}

fn to_six(t: &RigidTransform) -> Vector6<f64> {
    let e = t.rotation.to_euler_xyz();
    Vector6::new(
        t.translation.x,
        t.translation.y,
        t.translation.z,
        e.rx,
        e.ry,
        e.rz,
    )
}

fn from_six(v: &Vector6<f64>) -> Result<RigidTransform> {
    let r = Rotation::from_euler_xyz(&EulerXYZ::new(v[3], v[4], v[5]));
    let r = Rotation::project(r.matrix())?;
    Ok(RigidTransform::new(r, Vector3::new(v[0], v[1], v[2])))
}

fn lexicographic(a: &Vector6<f64>, b: &Vector6<f64>) -> Ordering {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn mean_of<'a>(xs: impl Iterator<Item = &'a Vector6<f64>>) -> Vector6<f64> {
    let (sum, count) = xs.fold((Vector6::zeros(), 0usize), |(s, c), x| (s + x, c + 1));
    sum / count as f64
}

fn wrap_to_pi(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Moves each angle to the `2 pi` branch nearest the circular mean of its
/// component.
fn unwrap_angles(xs: &mut [Vector6<f64>]) {
    for c in 3..6 {
        let (s, co) = xs
            .iter()
            .fold((0.0, 0.0), |(s, co), x| (s + x[c].sin(), co + x[c].cos()));
        if s == 0.0 && co == 0.0 {
            continue;
        }
        let centre = s.atan2(co);
        for x in xs.iter_mut() {
            x[c] = centre + wrap_to_pi(x[c] - centre);
        }
    }
}
