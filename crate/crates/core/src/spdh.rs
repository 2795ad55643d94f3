//! Semi-perspective decoupled heatmaps.
//!
//! A 3D joint is split into two 2D heatmaps: a `uv` map on the image plane
//! and a `uz` map whose rows are quantized depth bins and whose columns are
//! image columns. Decoding takes the argmax of each map and back-projects.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{backproject_pixel, project_point, CameraIntrinsics, Point3};

/// Predicted joints whose `uv` maximum falls below this are flagged invalid.
pub const PEAK_THRESHOLD: f32 = 0.1;

/// Gaussian width of ground-truth maps, in map pixels.
pub const DEFAULT_SIGMA: f64 = 2.0;

/// J joints in camera coordinates (meters) with per-joint validity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose3D {
    pub joints: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
    pub timestamp: f64,
}

impl Pose3D {
    /// Pose with every joint valid.
    pub fn new(joints: Vec<[f64; 3]>, timestamp: f64) -> Self {
        let valid = vec![true; joints.len()];
        Self {
            joints,
            valid,
            timestamp,
        }
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn point(&self, j: usize) -> Point3 {
        let [x, y, z] = self.joints[j];
        Point3::new(x, y, z)
    }

    pub fn all_invalid(joints: usize) -> Self {
        Self {
            joints: vec![[0.0; 3]; joints],
            valid: vec![false; joints],
            timestamp: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSpec {
    pub map_height: usize,
    pub map_width: usize,
    /// Input pixels per map pixel.
    pub stride: usize,
    pub sigma_uv: f64,
    pub sigma_uz: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub n_z_bins: usize,
}

impl HeatmapSpec {
    /// Maps for an `input_height x input_width` image at the given stride;
    /// the depth axis reuses the map height as its bin count.
    pub fn for_input(
        input_height: usize,
        input_width: usize,
        stride: usize,
        sigma: f64,
        z_min: f64,
        z_max: f64,
    ) -> Result<Self> {
        if stride == 0 || !input_height.is_multiple_of(stride) || !input_width.is_multiple_of(stride) {
            return Err(Error::InvalidArgument(format!(
                "stride {stride} does not divide {input_height}x{input_width}"
            )));
        }
        let spec = Self {
            map_height: input_height / stride,
            map_width: input_width / stride,
            stride,
            sigma_uv: sigma,
            sigma_uz: sigma,
            z_min,
            z_max,
            n_z_bins: input_height / stride,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.map_height > 0
            && self.map_width > 0
            && self.stride >= 1
            && self.sigma_uv > 0.0
            && self.sigma_uz > 0.0
            && self.z_min < self.z_max
            && self.n_z_bins == self.map_height;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "malformed heatmap spec {self:?}"
            )))
        }
    }

    pub fn delta_z(&self) -> f64 {
        (self.z_max - self.z_min) / self.n_z_bins as f64
    }

    pub fn plane(&self) -> usize {
        self.map_height * self.map_width
    }
}

/// `uv` and `uz` heatmap stacks, each `joints x map_height x map_width`.
#[derive(Clone, Debug, PartialEq)]
pub struct SPDHMaps {
    pub spec: HeatmapSpec,
    pub joints: usize,
    pub uv: Vec<f32>,
    pub uz: Vec<f32>,
}

impl SPDHMaps {
    pub fn zeros(spec: HeatmapSpec, joints: usize) -> Self {
        Self {
            spec,
            joints,
            uv: vec![0.0; joints * spec.plane()],
            uz: vec![0.0; joints * spec.plane()],
        }
    }

    pub fn uv_map(&self, j: usize) -> &[f32] {
        let p = self.spec.plane();
        &self.uv[j * p..(j + 1) * p]
    }

    pub fn uz_map(&self, j: usize) -> &[f32] {
        let p = self.spec.plane();
        &self.uz[j * p..(j + 1) * p]
    }

    /// Channel stack `[uv_0..uv_J, uz_0..uz_J]`, the layout the network emits.
    pub fn stacked(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.uv.len() * 2);
        out.extend_from_slice(&self.uv);
        out.extend_from_slice(&self.uz);
        out
    }

    /// Inverse of [`SPDHMaps::stacked`].
    pub fn from_stacked(spec: HeatmapSpec, joints: usize, data: &[f32]) -> Self {
        let half = joints * spec.plane();
        assert_eq!(data.len(), 2 * half, "stack size does not match spec");
        Self {
            spec,
            joints,
            uv: data[..half].to_vec(),
            uz: data[half..].to_vec(),
        }
    }
}

/// Unnormalized Gaussian with unit peak sampled on the map grid. The map is
/// all-zero when the center lies more than `3 sigma` outside the grid.
pub fn render_gaussian(
    center_row: f64,
    center_col: f64,
    spec: &HeatmapSpec,
    sigma: f64,
) -> Vec<f32> {
    let (h, w) = (spec.map_height, spec.map_width);
    let reach = 3.0 * sigma;
    let mut out = vec![0.0f32; h * w];
    if !(center_row.is_finite() && center_col.is_finite())
        || center_row < -reach
        || center_col < -reach
        || center_row > (h - 1) as f64 + reach
        || center_col > (w - 1) as f64 + reach
    {
        return out;
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let rows: Vec<f64> = (0..h)
        .map(|r| (-(r as f64 - center_row).powi(2) * inv).exp())
        .collect();
    let cols: Vec<f64> = (0..w)
        .map(|c| (-(c as f64 - center_col).powi(2) * inv).exp())
        .collect();
    for (r, fr) in rows.iter().enumerate() {
        for (c, fc) in cols.iter().enumerate() {
            out[r * w + c] = (fr * fc) as f32;
        }
    }
    out
}

pub fn z_to_bin(z: f64, spec: &HeatmapSpec) -> Result<usize> {
    if !(z >= spec.z_min && z < spec.z_max) {
        return Err(Error::DepthOutOfRange {
            z,
            z_min: spec.z_min,
            z_max: spec.z_max,
        });
    }
    let bin = ((z - spec.z_min) / spec.delta_z()).floor() as usize;
    Ok(bin.min(spec.n_z_bins - 1))
}

/// Center of a depth bin.
pub fn bin_to_z(bin: usize, spec: &HeatmapSpec) -> Result<f64> {
    if bin >= spec.n_z_bins {
        return Err(Error::InvalidArgument(format!(
            "depth bin {bin} outside [0, {})",
            spec.n_z_bins
        )));
    }
    Ok(spec.z_min + (bin as f64 + 0.5) * spec.delta_z())
}

/// Encode a pose; invalid joints get all-zero maps. Fails on the first valid
/// joint that is outside the depth range or projects outside the image.
pub fn encode_pose(pose: &Pose3D, k: &CameraIntrinsics, spec: &HeatmapSpec) -> Result<SPDHMaps> {
    let mut maps = SPDHMaps::zeros(*spec, pose.len());
    for j in 0..pose.len() {
        if pose.valid[j] {
            let (row, col, bin) = joint_coords(pose, j, k, spec)?;
            write_joint(&mut maps, j, row, col, bin);
        }
    }
    Ok(maps)
}

/// Like [`encode_pose`] but joints that cannot be encoded are treated as
/// invalid. Returns the maps and the per-joint mask actually encoded.
pub fn encode_pose_masked(
    pose: &Pose3D,
    k: &CameraIntrinsics,
    spec: &HeatmapSpec,
) -> (SPDHMaps, Vec<bool>) {
    let mut maps = SPDHMaps::zeros(*spec, pose.len());
    let mut encoded = vec![false; pose.len()];
    for j in 0..pose.len() {
        if pose.valid[j] {
            if let Ok((row, col, bin)) = joint_coords(pose, j, k, spec) {
                write_joint(&mut maps, j, row, col, bin);
                encoded[j] = true;
            }
        }
    }
    (maps, encoded)
}

fn joint_coords(
    pose: &Pose3D,
    j: usize,
    k: &CameraIntrinsics,
    spec: &HeatmapSpec,
) -> Result<(f64, f64, usize)> {
    let p = pose.point(j);
    let bin = z_to_bin(p.z, spec).map_err(|e| Error::JointOutOfRange {
        joint: j,
        reason: e.to_string(),
    })?;
    let (u, v) = project_point(&p, k)?;
    if !k.contains(u, v) {
        return Err(Error::JointOutOfRange {
            joint: j,
            reason: format!("projects to ({u:.2}, {v:.2}) outside the image"),
        });
    }
    let s = spec.stride as f64;
    Ok((v / s, u / s, bin))
}

fn write_joint(maps: &mut SPDHMaps, j: usize, row: f64, col: f64, bin: usize) {
    let spec = maps.spec;
    let p = spec.plane();
    let uv = render_gaussian(row, col, &spec, spec.sigma_uv);
    let uz = render_gaussian(bin as f64, col, &spec, spec.sigma_uz);
    maps.uv[j * p..(j + 1) * p].copy_from_slice(&uv);
    maps.uz[j * p..(j + 1) * p].copy_from_slice(&uz);
}

/// Index and value of the first maximum in row-major order.
pub fn argmax(map: &[f32]) -> (usize, f32) {
    let mut best = (0, f32::NEG_INFINITY);
    for (i, &v) in map.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Hard-argmax decoding of every joint.
pub fn decode_maps(maps: &SPDHMaps, k: &CameraIntrinsics) -> Pose3D {
    let spec = &maps.spec;
    let mut pose = Pose3D::all_invalid(maps.joints);
    for j in 0..maps.joints {
        let (idx, peak) = argmax(maps.uv_map(j));
        let (row, col) = (idx / spec.map_width, idx % spec.map_width);
        let (zidx, _) = argmax(maps.uz_map(j));
        let bin = zidx / spec.map_width;
        let u = (col * spec.stride) as f64;
        let v = (row * spec.stride) as f64;
        let z = bin_to_z(bin, spec).expect("argmax row is a valid bin");
        match backproject_pixel(u, v, z, k) {
            Ok(p) => {
                pose.joints[j] = [p.x, p.y, p.z];
                pose.valid[j] = peak >= PEAK_THRESHOLD;
            }
            Err(_) => pose.valid[j] = false,
        }
    }
    pose
}

/// Worst-case Euclidean error of `decode(encode(p))` for a joint whose
/// projection lies in the pixel-center hull `[0, W-1] x [0, H-1]`.
///
/// Depth is off by at most half a bin; each image axis by the rounding of
/// the map grid, back-projected at the largest decodable depth, plus the
/// lateral shift the depth error induces at the image border.
pub fn roundtrip_bound(spec: &HeatmapSpec, k: &CameraIntrinsics) -> f64 {
    let s = spec.stride as f64;
    let half_dz = spec.delta_z() / 2.0;
    let grid_err =
        |extent: usize, cells: usize| (s / 2.0).max((extent - 1) as f64 - ((cells - 1) as f64) * s);
    let e_u = grid_err(k.width, spec.map_width);
    let e_v = grid_err(k.height, spec.map_height);
    let z_hi = spec.z_max - half_dz;
    let lever_u = k.cx.max((k.width - 1) as f64 - k.cx);
    let lever_v = k.cy.max((k.height - 1) as f64 - k.cy);
    let ex = (e_u * z_hi + lever_u * half_dz) / k.fx;
    let ey = (e_v * z_hi + lever_v * half_dz) / k.fy;
    (ex * ex + ey * ey + half_dz * half_dz).sqrt()
}
