//! Pinhole camera model: projection, back-projection and depth/point-cloud
//! conversions.
//!
//! Camera frame convention: X right, Y down, Z forward. Pixel `(u, v)` is
//! column `u`, row `v`, with integer coordinates at pixel centers.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;

/// Largest range a depth sensor reports, in meters.
pub const MAX_RANGE: f32 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "malformed intrinsics {self:?}"
            )))
        }
    }

    /// Whether a continuous pixel coordinate lies inside the sensor.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        (0.0..self.width as f64).contains(&u) && (0.0..self.height as f64).contains(&v)
    }

    /// Unit-depth ray through pixel `(u, v)`.
    pub fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0]
    }
}

/// Range-along-optical-axis image in meters; `0` marks an invalid pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthFrame {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
    pub timestamp: f64,
}

impl DepthFrame {
    pub fn new(width: usize, height: usize, values: Vec<f32>, timestamp: f64) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "{} depth values for a {width}x{height} frame",
                values.len()
            )));
        }
        if let Some(bad) = values
            .iter()
            .find(|v| !(v.is_finite() && (0.0..=MAX_RANGE).contains(*v)))
        {
            return Err(Error::InvalidArgument(format!(
                "depth value {bad} outside [0, {MAX_RANGE}]"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
            timestamp,
        })
    }

    /// All-invalid frame.
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            timestamp: 0.0,
        }
    }

    pub fn at(&self, u: usize, v: usize) -> f32 {
        self.values[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, z: f32) {
        self.values[v * self.width + u] = z;
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|&&z| z > 0.0).count()
    }

    pub fn matches(&self, k: &CameraIntrinsics) -> bool {
        self.width == k.width && self.height == k.height
    }
}

/// Per-pixel metric camera-frame coordinates with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct XYZImage {
    pub width: usize,
    pub height: usize,
    /// Row-major `[x, y, z]` per pixel; all-zero where invalid.
    pub coords: Vec<[f64; 3]>,
    pub mask: Vec<bool>,
}

impl XYZImage {
    pub fn at(&self, u: usize, v: usize) -> [f64; 3] {
        self.coords[v * self.width + u]
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn backproject_pixel(u: f64, v: f64, z: f64, k: &CameraIntrinsics) -> Result<Point3> {
    if !(z > 0.0) {
        return Err(Error::InvalidArgument(format!("non-positive depth {z}")));
    }
    if !k.contains(u, v) {
        return Err(Error::InvalidArgument(format!(
            "pixel ({u}, {v}) outside a {}x{} image",
            k.width, k.height
        )));
    }
    Ok(Point3::new((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z))
}

/// Continuous pixel coordinates of a camera-frame point; may fall outside the image.
pub fn project_point(p: &Point3, k: &CameraIntrinsics) -> Result<(f64, f64)> {
    if !(p.z > 0.0) {
        return Err(Error::BehindCamera { z: p.z });
    }
    Ok((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

pub fn depth_to_xyz(d: &DepthFrame, k: &CameraIntrinsics) -> Result<XYZImage> {
    if !d.matches(k) {
        return Err(Error::InvalidArgument(format!(
            "{}x{} depth frame with {}x{} intrinsics",
            d.width, d.height, k.width, k.height
        )));
    }
    let n = d.width * d.height;
    let mut coords = vec![[0.0; 3]; n];
    let mut mask = vec![false; n];
    for v in 0..d.height {
        for u in 0..d.width {
            let z = d.at(u, v);
            if z > 0.0 {
                let z = f64::from(z);
                let i = v * d.width + u;
                coords[i] = [
                    (u as f64 - k.cx) * z / k.fx,
                    (v as f64 - k.cy) * z / k.fy,
                    z,
                ];
                mask[i] = true;
            }
        }
    }
    Ok(XYZImage {
        width: d.width,
        height: d.height,
        coords,
        mask,
    })
}

/// Valid pixels of an XYZ image as points, in row-major order.
pub fn xyz_to_pointcloud(img: &XYZImage) -> Vec<Point3> {
    img.coords
        .iter()
        .zip(&img.mask)
        .filter(|(_, &m)| m)
        .map(|(c, _)| Point3::new(c[0], c[1], c[2]))
        .collect()
}

/// Z-buffer a point cloud into a depth frame: nearest-pixel rounding, the
/// smallest depth wins, untouched pixels stay invalid. Points behind the
/// camera, beyond [`MAX_RANGE`] or outside the image are dropped.
pub fn splat_pointcloud(points: &[Point3], k: &CameraIntrinsics) -> DepthFrame {
    let mut frame = DepthFrame::invalid(k.width, k.height);
    for p in points {
        if !(p.z > 0.0) || !p.coords.iter().all(|c| c.is_finite()) {
            continue;
        }
        let z = p.z as f32;
        if z <= 0.0 || z > MAX_RANGE {
            continue;
        }
        let u = (k.fx * p.x / p.z + k.cx).round();
        let v = (k.fy * p.y / p.z + k.cy).round();
        if u < 0.0 || v < 0.0 || u >= k.width as f64 || v >= k.height as f64 {
            continue;
        }
        let (u, v) = (u as usize, v as usize);
        let cur = frame.at(u, v);
        if cur == 0.0 || z < cur {
            frame.set(u, v, z);
        }
    }
    frame
}

/// Rotation followed by translation, `p' = R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 160.0, 120.0, 320, 240).unwrap()
    }

    #[test]
    fn backprojection_examples() {
        assert_eq!(
            backproject_pixel(160.0, 120.0, 2.0, &k()).unwrap(),
            Point3::new(0.0, 0.0, 2.0)
        );
        let p = backproject_pixel(260.0, 120.0, 2.0, &k()).unwrap();
        assert!((p - Point3::new(0.4, 0.0, 2.0)).norm() < 1e-15);
        let p = backproject_pixel(160.0, 220.0, 1.0, &k()).unwrap();
        assert!((p - Point3::new(0.0, 0.2, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn backprojection_rejects_bad_input() {
        assert!(matches!(
            backproject_pixel(10.0, 10.0, 0.0, &k()),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            backproject_pixel(10.0, 10.0, -1.0, &k()),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            backproject_pixel(320.0, 10.0, 1.0, &k()),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            backproject_pixel(-0.5, 10.0, 1.0, &k()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn projection_examples() {
        assert_eq!(
            project_point(&Point3::new(0.0, 0.0, 2.0), &k()).unwrap(),
            (160.0, 120.0)
        );
        let (u, v) = project_point(&Point3::new(0.4, 0.0, 2.0), &k()).unwrap();
        assert_eq!((u, v), (260.0, 120.0));
        let (u, v) = project_point(&Point3::new(0.0, -0.24, 1.0), &k()).unwrap();
        assert!((u - 160.0).abs() < 1e-12 && v.abs() < 1e-12);
        assert!(matches!(
            project_point(&Point3::new(0.0, 0.0, 0.0), &k()),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 3.9, 0.0, 4, 4).is_ok());
    }

    #[test]
    fn depth_to_xyz_examples() {
        let k = k();
        let empty = depth_to_xyz(&DepthFrame::invalid(320, 240), &k).unwrap();
        assert_eq!(empty.valid_count(), 0);
        assert!(empty.coords.iter().all(|c| *c == [0.0; 3]));
        assert!(xyz_to_pointcloud(&empty).is_empty());

        let mut d = DepthFrame::invalid(320, 240);
        d.set(160, 120, 2.0);
        let img = depth_to_xyz(&d, &k).unwrap();
        assert_eq!(img.at(160, 120), [0.0, 0.0, 2.0]);
        assert_eq!(xyz_to_pointcloud(&img), vec![Point3::new(0.0, 0.0, 2.0)]);

        let plane = DepthFrame::new(320, 240, vec![1.0; 320 * 240], 0.0).unwrap();
        let img = depth_to_xyz(&plane, &k).unwrap();
        for v in [0, 100, 239] {
            assert!((img.at(0, v)[0] - (-160.0 / 500.0)).abs() < 1e-15);
            assert!((img.at(319, v)[0] - (159.0 / 500.0)).abs() < 1e-15);
        }
        assert_eq!(xyz_to_pointcloud(&img).len(), img.valid_count());

        assert!(depth_to_xyz(&DepthFrame::invalid(10, 10), &k).is_err());
    }

    #[test]
    fn splat_examples() {
        let k = k();
        assert_eq!(splat_pointcloud(&[], &k).valid_count(), 0);
        let pts = [Point3::new(0.0, 0.0, 2.0), Point3::new(0.0, 0.0, 1.0)];
        assert_eq!(splat_pointcloud(&pts, &k).at(160, 120), 1.0);
        let pts = [Point3::new(0.0, 0.0, -1.0), Point3::new(100.0, 0.0, 1.0)];
        assert_eq!(splat_pointcloud(&pts, &k).valid_count(), 0);
    }

    #[test]
    fn depth_frame_rejects_bad_values() {
        assert!(DepthFrame::new(2, 1, vec![1.0], 0.0).is_err());
        assert!(DepthFrame::new(2, 1, vec![1.0, f32::NAN], 0.0).is_err());
        assert!(DepthFrame::new(2, 1, vec![1.0, -1.0], 0.0).is_err());
        assert!(DepthFrame::new(2, 1, vec![1.0, 11.0], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn projection_inverts_backprojection(u in 0.0f64..320.0, v in 0.0f64..240.0, z in 0.01f64..50.0) {
            let k = k();
            let p = backproject_pixel(u, v, z, &k).unwrap();
            let (u2, v2) = project_point(&p, &k).unwrap();
            prop_assert!((u - u2).abs() < 1e-9 && (v - v2).abs() < 1e-9);
            prop_assert_eq!(p.z, z);
        }

        #[test]
        fn splat_of_unprojection_is_identity(
            seed in proptest::collection::vec((0usize..32, 0usize..24, 0.3f32..9.0), 0..200)
        ) {
            let k = CameraIntrinsics::new(30.0, 31.0, 15.5, 11.2, 32, 24).unwrap();
            let mut d = DepthFrame::invalid(32, 24);
            for (u, v, z) in seed {
                d.set(u, v, z);
            }
            let img = depth_to_xyz(&d, &k).unwrap();
            for (i, &z) in d.values.iter().enumerate() {
                if z > 0.0 {
                    prop_assert_eq!(img.coords[i][2], f64::from(z));
                }
            }
            prop_assert_eq!(splat_pointcloud(&xyz_to_pointcloud(&img), &k), d);
        }
    }
}
