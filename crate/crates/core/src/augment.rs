//! Training-time augmentation: a rigid perturbation of the point cloud shared
//! with every ground-truth pose of the sample, then pepper noise and
//! rectangular dropout on the re-rendered depth.

use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::armsim::DatasetSample;
use crate::error::{Error, Result};
use crate::geometry::{
    depth_to_xyz, project_point, splat_pointcloud, xyz_to_pointcloud, DepthFrame, Point3,
};
use crate::spdh::Pose3D;

pub use crate::geometry::RigidTransform;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotationAxes {
    /// Independent small rotations about the camera X and Z axes, `Rx Rz`.
    Xz,
    /// A single rotation about the camera Y axis, i.e. within the XZ plane.
    Y,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentParams {
    /// Half-width of the uniform X and Y translation, meters.
    pub xy_translation: f64,
    /// Half-width of the uniform Z translation, meters.
    pub z_translation: f64,
    /// Half-width of each rotation angle, degrees.
    pub rotation_deg: f64,
    pub rotation_axes: RotationAxes,
    pub pepper_fraction: f64,
    /// Inclusive range of the number of dropout rectangles.
    pub dropout_count: [usize; 2],
    /// Inclusive range of rectangle side lengths, pixels.
    pub dropout_size: [usize; 2],
    /// Largest tolerated fraction of ground-truth joints leaving the view.
    pub max_outside_fraction: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            xy_translation: 0.20,
            z_translation: 0.30,
            rotation_deg: 5.0,
            rotation_axes: RotationAxes::Xz,
            pepper_fraction: 0.15,
            dropout_count: [2, 6],
            dropout_size: [4, 20],
            max_outside_fraction: 0.5,
        }
    }
}

impl AugmentParams {
    /// Parameters under which augmentation leaves a sample unchanged.
    pub fn none() -> Self {
        Self {
            xy_translation: 0.0,
            z_translation: 0.0,
            rotation_deg: 0.0,
            pepper_fraction: 0.0,
            dropout_count: [0, 0],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.xy_translation >= 0.0
            && self.z_translation >= 0.0
            && self.rotation_deg >= 0.0
            && (0.0..=1.0).contains(&self.pepper_fraction)
            && (0.0..=1.0).contains(&self.max_outside_fraction)
            && self.dropout_count[0] <= self.dropout_count[1]
            && self.dropout_size[0] <= self.dropout_size[1];
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid augmentation parameters {self:?}"
            )))
        }
    }
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(-half..=half)
    } else {
        0.0
    }
}

fn inclusive<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [usize; 2]) -> usize {
    rng.random_range(lo..=hi)
}

pub fn sample_transform<R: Rng + ?Sized>(params: &AugmentParams, rng: &mut R) -> RigidTransform {
    let t = Vector3::new(
        symmetric(rng, params.xy_translation),
        symmetric(rng, params.xy_translation),
        symmetric(rng, params.z_translation),
    );
    let half = params.rotation_deg.to_radians();
    let rotation = match params.rotation_axes {
        RotationAxes::Xz => {
            let ax = symmetric(rng, half);
            let az = symmetric(rng, half);
            Rotation3::from_axis_angle(&Vector3::x_axis(), ax)
                * Rotation3::from_axis_angle(&Vector3::z_axis(), az)
        }
        RotationAxes::Y => Rotation3::from_axis_angle(&Vector3::y_axis(), symmetric(rng, half)),
    };
    RigidTransform::new(*rotation.matrix(), t)
}

fn is_identity(t: &RigidTransform) -> bool {
    *t == RigidTransform::identity()
}

pub fn apply_rigid_points(points: &[Point3], t: &RigidTransform) -> Vec<Point3> {
    if is_identity(t) {
        return points.to_vec();
    }
    points.iter().map(|p| t.apply(p)).collect()
}

/// Transform every joint; validity flags and timestamp are kept.
pub fn apply_rigid_pose(pose: &Pose3D, t: &RigidTransform) -> Pose3D {
    if is_identity(t) {
        return pose.clone();
    }
    let joints = (0..pose.len())
        .map(|j| {
            let q = t.apply(&pose.point(j));
            [q.x, q.y, q.z]
        })
        .collect();
    Pose3D {
        joints,
        valid: pose.valid.clone(),
        timestamp: pose.timestamp,
    }
}

/// Invalidate each valid pixel independently with probability `fraction`.
pub fn pepper_noise<R: Rng + ?Sized>(d: &DepthFrame, fraction: f64, rng: &mut R) -> DepthFrame {
    let mut out = d.clone();
    if fraction <= 0.0 {
        return out;
    }
    let p = fraction.min(1.0);
    for v in out.values.iter_mut().filter(|v| **v > 0.0) {
        if rng.random_bool(p) {
            *v = 0.0;
        }
    }
    out
}

/// Zero a random number of axis-aligned rectangles, each centered on a
/// uniformly drawn pixel and clipped to the image.
pub fn dropout_regions<R: Rng + ?Sized>(
    d: &DepthFrame,
    params: &AugmentParams,
    rng: &mut R,
) -> DepthFrame {
    let mut out = d.clone();
    let count = inclusive(rng, params.dropout_count);
    for _ in 0..count {
        let w = inclusive(rng, params.dropout_size);
        let h = inclusive(rng, params.dropout_size);
        let cu = rng.random_range(0..d.width);
        let cv = rng.random_range(0..d.height);
        let u0 = cu.saturating_sub(w / 2);
        let v0 = cv.saturating_sub(h / 2);
        let u1 = (cu + w - w / 2).min(d.width);
        let v1 = (cv + h - h / 2).min(d.height);
        for v in v0..v1 {
            out.values[v * d.width + u0..v * d.width + u1].fill(0.0);
        }
    }
    out
}

/// Rigidly perturb the scene and all poses of a sample with one shared
/// transform, then corrupt the depth. Samples whose transform pushes more
/// than `max_outside_fraction` of the valid joints out of view are rejected.
pub fn augment_sample<R: Rng + ?Sized>(
    s: &DatasetSample,
    params: &AugmentParams,
    rng: &mut R,
) -> Result<DatasetSample> {
    let t = sample_transform(params, rng);
    let k = &s.intrinsics;
    let mut out = s.clone();
    if !is_identity(&t) {
        let cloud = xyz_to_pointcloud(&depth_to_xyz(&s.depth, k)?);
        let mut depth = splat_pointcloud(&apply_rigid_points(&cloud, &t), k);
        depth.timestamp = s.depth.timestamp;
        out.depth = depth;
        out.current = apply_rigid_pose(&s.current, &t);
        for p in out.past.poses.iter_mut().chain(out.future.iter_mut()) {
            *p = apply_rigid_pose(p, &t);
        }
        let (mut total, mut outside) = (0, 0);
        for p in std::iter::once(&out.current)
            .chain(&out.past.poses)
            .chain(&out.future)
        {
            for j in (0..p.len()).filter(|&j| p.valid[j]) {
                total += 1;
                let visible = project_point(&p.point(j), k).is_ok_and(|(u, v)| k.contains(u, v));
                if !visible {
                    outside += 1;
                }
            }
        }
        if total > 0 && outside as f64 > params.max_outside_fraction * total as f64 {
            return Err(Error::AugmentationRejected { outside, total });
        }
    }
    out.depth = pepper_noise(&out.depth, params.pepper_fraction, rng);
    out.depth = dropout_regions(&out.depth, params, rng);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_ranges_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            sample_transform(&AugmentParams::none(), &mut rng),
            RigidTransform::identity()
        );
    }

    #[test]
    fn transforms_respect_ranges() {
        let params = AugmentParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let t = sample_transform(&params, &mut rng);
            assert!(
                t.translation.x.abs() <= 0.2
                    && t.translation.y.abs() <= 0.2
                    && t.translation.z.abs() <= 0.3
            );
            assert!((t.rotation.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_and_translation() {
        let p = vec![Point3::new(-0.0, 1.5, 2.0)];
        let same = apply_rigid_points(&p, &RigidTransform::identity());
        assert_eq!(same[0].x.to_bits(), p[0].x.to_bits());
        let t = RigidTransform::new(nalgebra::Matrix3::identity(), Vector3::new(0.1, 0.0, 0.0));
        assert_eq!(
            apply_rigid_points(&[Point3::new(0.0, 0.0, 2.0)], &t)[0],
            Point3::new(0.1, 0.0, 2.0)
        );
    }

    #[test]
    fn pepper_extremes_and_subset() {
        let d = DepthFrame::new(
            10,
            10,
            (0..100)
                .map(|i| if i % 3 == 0 { 0.0 } else { 1.0 })
                .collect(),
            0.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(pepper_noise(&d, 0.0, &mut rng), d);
        assert_eq!(pepper_noise(&d, 1.0, &mut rng).valid_count(), 0);
        let n = pepper_noise(&d, 0.5, &mut rng);
        for (a, b) in d.values.iter().zip(&n.values) {
            assert!(*b == 0.0 || b == a);
        }
    }

    #[test]
    fn dropout_area_and_borders() {
        let d = DepthFrame::new(30, 20, vec![1.0; 600], 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(dropout_regions(&d, &AugmentParams::none(), &mut rng), d);
        let one = AugmentParams {
            dropout_count: [1, 1],
            dropout_size: [10, 10],
            ..AugmentParams::none()
        };
        for _ in 0..200 {
            let out = dropout_regions(&d, &one, &mut rng);
            let removed = 600 - out.valid_count();
            assert!(removed > 0 && removed <= 100);
            // The zeroed pixels form one unwrapped rectangle.
            let zero: Vec<(usize, usize)> = (0..600)
                .filter(|&i| out.values[i] == 0.0)
                .map(|i| (i % 30, i / 30))
                .collect();
            let (umin, umax) = (
                zero.iter().map(|p| p.0).min().unwrap(),
                zero.iter().map(|p| p.0).max().unwrap(),
            );
            let (vmin, vmax) = (
                zero.iter().map(|p| p.1).min().unwrap(),
                zero.iter().map(|p| p.1).max().unwrap(),
            );
            assert_eq!((umax - umin + 1) * (vmax - vmin + 1), removed);
        }
    }

    proptest! {
        #[test]
        fn rigid_transforms_are_isometries(seed in 0u64..1000,
            pts in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0, 0.5f64..4.0), 2..12)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = sample_transform(&AugmentParams::default(), &mut rng);
            let cloud: Vec<Point3> = pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect();
            let moved = apply_rigid_points(&cloud, &t);
            for i in 0..cloud.len() {
                for j in 0..cloud.len() {
                    let a = (cloud[i] - cloud[j]).norm();
                    let b = (moved[i] - moved[j]).norm();
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }
}
