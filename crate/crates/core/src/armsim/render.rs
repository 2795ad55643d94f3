use nalgebra::Vector3;

use super::ArmModel;
use crate::geometry::{CameraIntrinsics, DepthFrame, MAX_RANGE};
use crate::spdh::Pose3D;

/// Circular table top the arm stands on, centered at the base origin and
/// orthogonal to the base's up axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundPlane {
    pub center: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub radius: f64,
}

impl GroundPlane {
    pub fn under(model: &ArmModel, radius: f64) -> Self {
        Self {
            center: model.base_pose.translation,
            normal: model.base_pose.rotation * Vector3::y(),
            radius,
        }
    }

    fn hit(&self, dir: &Vector3<f64>) -> Option<f64> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = self.normal.dot(&self.center) / denom;
        (t > 0.0 && (dir * t - self.center).norm() <= self.radius).then_some(t)
    }
}

/// Nearest `t > 0` with `|t d - c| = r`, for a unit `d`.
fn sphere_hit(dir: &Vector3<f64>, c: &Vector3<f64>, r: f64) -> Option<f64> {
    let b = dir.dot(c);
    let h = b * b - (c.norm_squared() - r * r);
    if h < 0.0 {
        return None;
    }
    let t = b - h.sqrt();
    (t > 0.0).then_some(t)
}

/// Nearest hit on the open cylinder around segment `a-b`, for a unit `d`.
fn cylinder_hit(dir: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>, r: f64) -> Option<f64> {
    let ba = b - a;
    let oa = -a;
    let baba = ba.dot(&ba);
    let bard = ba.dot(dir);
    let baoa = ba.dot(&oa);
    let rdoa = dir.dot(&oa);
    let oaoa = oa.dot(&oa);
    let qa = baba - bard * bard;
    if qa < 1e-12 {
        return None;
    }
    let qb = baba * rdoa - baoa * bard;
    let qc = baba * oaoa - baoa * baoa - r * r * baba;
    let h = qb * qb - qa * qc;
    if h < 0.0 {
        return None;
    }
    let t = (-qb - h.sqrt()) / qa;
    let y = baoa + t * bard;
    (t > 0.0 && y > 0.0 && y < baba).then_some(t)
}

/// Depth image of the arm as capsules between consecutive keypoints, by
/// casting one ray per pixel center. The nearest surface wins; pixels that
/// hit nothing, or only surfaces beyond [`MAX_RANGE`], stay invalid.
pub fn render_depth(
    model: &ArmModel,
    pose: &Pose3D,
    k: &CameraIntrinsics,
    ground: Option<&GroundPlane>,
) -> DepthFrame {
    let r = model.link_radius;
    let centers: Vec<Vector3<f64>> = pose
        .joints
        .iter()
        .map(|j| Vector3::new(j[0], j[1], j[2]))
        .collect();
    let mut frame = DepthFrame::invalid(k.width, k.height);
    if centers.iter().all(|c| c.z <= -r) && ground.is_none() {
        return frame;
    }
    for v in 0..k.height {
        for u in 0..k.width {
            let ray = Vector3::from(k.ray(u as f64, v as f64));
            let len = ray.norm();
            let dir = ray / len;
            let mut best = f64::INFINITY;
            for c in &centers {
                if let Some(t) = sphere_hit(&dir, c, r) {
                    best = best.min(t);
                }
            }
            for pair in centers.windows(2) {
                if let Some(t) = cylinder_hit(&dir, &pair[0], &pair[1], r) {
                    best = best.min(t);
                }
            }
            if let Some(t) = ground.and_then(|g| g.hit(&dir)) {
                best = best.min(t);
            }
            // The ray has unit z-component before normalization, so depth
            // along the optical axis is the distance divided by its length.
            let z = (best / len) as f32;
            if best.is_finite() && z > 0.0 && z <= MAX_RANGE {
                frame.set(u, v, z);
            }
        }
    }
    frame
}
