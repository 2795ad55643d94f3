//! Synthetic robot-arm depth simulator: kinematics, trajectories, capsule
//! rendering and on-disk datasets.

mod dataset;
mod io;
mod render;
mod trajectory;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidTransform};
use crate::spdh::Pose3D;

pub use dataset::{generate_dataset, BasePlacement, IntrinsicsJitter, SimConfig};
pub use io::{
    decode_dpt, encode_dpt, load_samples, read_dpt, read_poses, write_dpt, write_poses, Dataset,
    DatasetSample, Manifest, Normalization, PoseSequence, Sequence, Split, WindowSpec, DPT_MAGIC,
    MANIFEST_VERSION,
};
pub use render::{render_depth, GroundPlane};
pub use trajectory::{minimum_jerk, sample_trajectory, Trajectory, TrajectorySpec};

/// Serial chain of revolute joints. Joint `i` rotates about `joint_axes[i]`
/// (expressed in the frame of the previous link) and is followed by a link of
/// length `link_lengths[i]` along `link_directions[i]` in its own frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmModel {
    pub link_lengths: Vec<f64>,
    pub joint_axes: Vec<Vector3<f64>>,
    pub link_directions: Vec<Vector3<f64>>,
    pub joint_limits: Vec<[f64; 2]>,
    pub link_radius: f64,
    pub base_pose: RigidTransform,
}

impl ArmModel {
    pub fn new(
        link_lengths: Vec<f64>,
        joint_axes: Vec<Vector3<f64>>,
        link_directions: Vec<Vector3<f64>>,
        joint_limits: Vec<[f64; 2]>,
        link_radius: f64,
        base_pose: RigidTransform,
    ) -> Result<Self> {
        let arm = Self {
            link_lengths,
            joint_axes,
            link_directions,
            joint_limits,
            link_radius,
            base_pose,
        };
        arm.validate()?;
        Ok(arm)
    }

    /// Four revolute joints (a yaw about the base's up axis followed by three
    /// pitches) with links along the base's +Y. The base frame is y-up; the
    /// base pose maps it into the camera frame.
    pub fn desk_arm(
        link_lengths: Vec<f64>,
        link_radius: f64,
        base_pose: RigidTransform,
    ) -> Result<Self> {
        let n = link_lengths.len();
        if n == 0 {
            return Err(Error::InvalidArgument("arm needs at least one link".into()));
        }
        let mut axes = vec![Vector3::y()];
        let mut limits = vec![[-2.0, 2.0]];
        for i in 1..n {
            axes.push(Vector3::z());
            limits.push(if i == 1 { [-1.0, 1.0] } else { [-1.5, 1.5] });
        }
        Self::new(
            link_lengths,
            axes,
            vec![Vector3::y(); n],
            limits,
            link_radius,
            base_pose,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.link_lengths.len();
        if n == 0
            || self.joint_axes.len() != n
            || self.link_directions.len() != n
            || self.joint_limits.len() != n
        {
            return Err(Error::InvalidArgument(
                "arm description has inconsistent lengths".into(),
            ));
        }
        if !(self.link_radius > 0.0) || self.link_lengths.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidArgument(
                "link lengths and radius must be positive".into(),
            ));
        }
        if self.joint_limits.iter().any(|[lo, hi]| !(lo < hi)) {
            return Err(Error::InvalidArgument(
                "joint limits must satisfy min < max".into(),
            ));
        }
        let unit = |v: &Vector3<f64>| (v.norm() - 1.0).abs() < 1e-9;
        if !self.joint_axes.iter().all(unit) || !self.link_directions.iter().all(unit) {
            return Err(Error::InvalidArgument(
                "joint axes and link directions must be unit vectors".into(),
            ));
        }
        Ok(())
    }

    pub fn n_joints(&self) -> usize {
        self.link_lengths.len()
    }

    /// Keypoint count: the base origin plus one per link end.
    pub fn n_keypoints(&self) -> usize {
        self.n_joints() + 1
    }

    pub fn keypoint_names(&self) -> Vec<String> {
        let mut names = vec!["base".to_string()];
        names.extend((1..=self.n_joints()).map(|i| format!("link{i}_end")));
        names
    }

    pub fn within_limits(&self, angles: &[f64]) -> bool {
        angles.len() == self.n_joints()
            && angles
                .iter()
                .zip(&self.joint_limits)
                .all(|(a, [lo, hi])| (*lo..=*hi).contains(a))
    }

    /// Keypoints in the base frame.
    pub fn local_keypoints(&self, angles: &[f64]) -> Result<Vec<Point3>> {
        if angles.len() != self.n_joints() {
            return Err(Error::InvalidArgument(format!(
                "expected {} joint angles, got {}",
                self.n_joints(),
                angles.len()
            )));
        }
        if let Some(i) = angles
            .iter()
            .zip(&self.joint_limits)
            .position(|(a, [lo, hi])| !(*lo..=*hi).contains(a))
        {
            return Err(Error::InvalidArgument(format!(
                "angle {} of joint {i} outside [{}, {}]",
                angles[i], self.joint_limits[i][0], self.joint_limits[i][1]
            )));
        }
        let mut rot = Matrix3::identity();
        let mut p = Vector3::zeros();
        let mut out = vec![Point3::origin()];
        for i in 0..self.n_joints() {
            let r = Rotation3::from_axis_angle(&Unit::new_unchecked(self.joint_axes[i]), angles[i]);
            rot *= r.matrix();
            p += rot * (self.link_directions[i] * self.link_lengths[i]);
            out.push(Point3::from(p));
        }
        Ok(out)
    }
}

/// Keypoints of the arm in the camera frame, all flagged valid.
pub fn forward_kinematics(model: &ArmModel, angles: &[f64]) -> Result<Pose3D> {
    let joints = model
        .local_keypoints(angles)?
        .iter()
        .map(|p| {
            let q = model.base_pose.apply(p);
            [q.x, q.y, q.z]
        })
        .collect();
    Ok(Pose3D::new(joints, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn planar() -> ArmModel {
        ArmModel::new(
            vec![0.5, 0.5],
            vec![Vector3::z(); 2],
            vec![Vector3::x(); 2],
            vec![[-3.2, 3.2]; 2],
            0.05,
            RigidTransform::identity(),
        )
        .unwrap()
    }

    fn close(a: [f64; 3], b: [f64; 3]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn planar_examples() {
        let p = forward_kinematics(&planar(), &[0.0, 0.0]).unwrap();
        assert_eq!(p.joints, vec![[0.0; 3], [0.5, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let p = forward_kinematics(&planar(), &[FRAC_PI_2, 0.0]).unwrap();
        assert!(close(p.joints[1], [0.0, 0.5, 0.0]));
        assert!(close(p.joints[2], [0.0, 1.0, 0.0]));
    }

    #[test]
    fn rejects_out_of_limit_angles() {
        assert!(forward_kinematics(&planar(), &[4.0, 0.0]).is_err());
        assert!(forward_kinematics(&planar(), &[0.0]).is_err());
    }

    #[test]
    fn desk_arm_layout() {
        let arm = ArmModel::desk_arm(
            vec![0.30, 0.25, 0.20, 0.15],
            0.04,
            RigidTransform::identity(),
        )
        .unwrap();
        assert_eq!(arm.n_keypoints(), 5);
        assert_eq!(arm.keypoint_names().len(), 5);
        let p = forward_kinematics(&arm, &[0.0; 4]).unwrap();
        assert!(close(p.joints[4], [0.0, 0.9, 0.0]));
    }

    #[test]
    fn validation() {
        let mut arm = planar();
        arm.link_radius = 0.0;
        assert!(arm.validate().is_err());
        let mut arm = planar();
        arm.joint_axes[0] = Vector3::new(1.0, 1.0, 0.0);
        assert!(arm.validate().is_err());
        let mut arm = planar();
        arm.joint_limits[1] = [1.0, 1.0];
        assert!(arm.validate().is_err());
    }

    proptest! {
        #[test]
        fn links_are_rigid(a in -2.0f64..2.0, b in -1.0f64..1.0, c in -1.5f64..1.5, d in -1.5f64..1.5,
                           yaw in -3.0f64..3.0, tx in -1.0f64..1.0, tz in 1.0f64..3.0) {
            let base = RigidTransform::new(
                *Rotation3::from_euler_angles(std::f64::consts::PI, yaw, 0.0).matrix(),
                Vector3::new(tx, 0.2, tz),
            );
            let arm = ArmModel::desk_arm(vec![0.30, 0.25, 0.20, 0.15], 0.04, base).unwrap();
            let pose = forward_kinematics(&arm, &[a, b, c, d]).unwrap();
            for k in 1..pose.len() {
                let len = (pose.point(k) - pose.point(k - 1)).norm();
                prop_assert!((len - arm.link_lengths[k - 1]).abs() < 1e-12);
            }
        }
    }
}
