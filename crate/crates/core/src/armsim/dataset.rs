use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::{
    depth_file, sequence_dir, write_dpt, write_json, write_poses, Manifest, Normalization,
    MANIFEST_VERSION,
};
use super::{forward_kinematics, render_depth, ArmModel, GroundPlane, Trajectory, TrajectorySpec};
use crate::error::{Error, Result};
use crate::geometry::{project_point, CameraIntrinsics, Point3, RigidTransform};
use crate::spdh::Pose3D;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntrinsicsJitter {
    /// Relative focal-length perturbation, applied to both axes.
    pub focal_frac: f64,
    /// Principal-point perturbation in pixels.
    pub principal_px: f64,
}

impl Default for IntrinsicsJitter {
    fn default() -> Self {
        Self {
            focal_frac: 0.05,
            principal_px: 2.0,
        }
    }
}

/// Per-sequence randomization of the arm base relative to the camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasePlacement {
    /// Depth of the trajectory's centroid, meters.
    pub depth: [f64; 2],
    /// Rotation of the arm about its own up axis, radians.
    pub yaw: [f64; 2],
    /// Camera elevation relative to the table plane, radians.
    pub tilt: [f64; 2],
    /// Keypoints must project at least this far inside the image, pixels.
    pub margin_px: f64,
    pub max_attempts: usize,
}

impl Default for BasePlacement {
    fn default() -> Self {
        Self {
            depth: [1.8, 3.0],
            yaw: [-PI, PI],
            tilt: [-0.35, 0.35],
            margin_px: 2.0,
            max_attempts: 400,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_sequences: usize,
    pub duration_s: f64,
    pub frame_rate: f64,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub jitter: IntrinsicsJitter,
    /// Depth range every keypoint must stay inside.
    pub z_min: f64,
    pub z_max: f64,
    pub link_lengths: Vec<f64>,
    pub link_radius: f64,
    pub base: BasePlacement,
    /// Radius of the table disc under the arm; 0 renders the arm alone.
    pub table_radius: f64,
    pub trajectory: TrajectorySpec,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_sequences: 10,
            duration_s: 10.0,
            frame_rate: 30.0,
            width: 128,
            height: 96,
            focal: 110.0,
            jitter: IntrinsicsJitter::default(),
            z_min: 0.5,
            z_max: 4.5,
            link_lengths: vec![0.30, 0.25, 0.20, 0.15],
            link_radius: 0.04,
            base: BasePlacement::default(),
            table_radius: 0.8,
            trajectory: TrajectorySpec::default(),
        }
    }
}

impl SimConfig {
    /// Quarter-area sensor with a narrower depth range, for fast experiments.
    pub fn tiny() -> Self {
        Self {
            width: 64,
            height: 48,
            focal: 55.0,
            z_min: 0.8,
            z_max: 3.2,
            base: BasePlacement {
                depth: [1.6, 2.4],
                ..BasePlacement::default()
            },
            table_radius: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_sequences == 0 {
            return bad("n_sequences must be at least 1");
        }
        if !(self.duration_s > 0.0 && self.frame_rate > 0.0) {
            return bad("duration and frame rate must be positive");
        }
        if !(self.z_min > 0.0 && self.z_min < self.z_max) {
            return bad("need 0 < z_min < z_max");
        }
        let [d0, d1] = self.base.depth;
        if !(d0 > 0.0 && d0 <= d1)
            || self.base.yaw[0] > self.base.yaw[1]
            || self.base.tilt[0] > self.base.tilt[1]
        {
            return bad("malformed base placement ranges");
        }
        if !(self.jitter.focal_frac >= 0.0
            && self.jitter.focal_frac < 1.0
            && self.jitter.principal_px >= 0.0)
        {
            return bad("malformed intrinsics jitter");
        }
        if !(self.table_radius >= 0.0 && self.table_radius.is_finite()) {
            return bad("table radius must be finite and non-negative");
        }
        self.trajectory.validate()?;
        self.default_intrinsics()?;
        self.arm(RigidTransform::identity())?;
        Ok(())
    }

    pub fn default_intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(
            self.focal,
            self.focal,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
            self.width,
            self.height,
        )
    }

    pub fn arm(&self, base: RigidTransform) -> Result<ArmModel> {
        ArmModel::desk_arm(self.link_lengths.clone(), self.link_radius, base)
    }

    pub fn frames_per_sequence(&self) -> usize {
        (self.duration_s * self.frame_rate).round() as usize
    }

    pub fn normalization(&self) -> Result<Normalization> {
        let k = self.default_intrinsics()?;
        let lateral =
            (k.cx.max(k.width as f64 - k.cx) / k.fx).max(k.cy.max(k.height as f64 - k.cy) / k.fy);
        Ok(Normalization {
            xy_half_extent: lateral * self.z_max,
            z_min: self.z_min,
            z_max: self.z_max,
        })
    }

    fn sample_intrinsics<R: Rng>(&self, rng: &mut R) -> Result<CameraIntrinsics> {
        let base = self.default_intrinsics()?;
        let sym = |rng: &mut R, a: f64| {
            if a > 0.0 {
                rng.random_range(-a..a)
            } else {
                0.0
            }
        };
        let f = self.focal * (1.0 + sym(rng, self.jitter.focal_frac));
        let cx = base.cx + sym(rng, self.jitter.principal_px);
        let cy = base.cy + sym(rng, self.jitter.principal_px);
        CameraIntrinsics::new(f, f, cx, cy, self.width, self.height)
    }
}

/// A simulated sequence before it is written to disk.
pub(crate) struct SimSequence {
    pub intrinsics: CameraIntrinsics,
    pub model: ArmModel,
    pub poses: Vec<Pose3D>,
}

fn uniform<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn all_visible(points: &[Point3], k: &CameraIntrinsics, cfg: &SimConfig) -> bool {
    let m = cfg.base.margin_px;
    points.iter().all(|p| {
        p.z >= cfg.z_min
            && p.z < cfg.z_max
            && project_point(p, k).is_ok_and(|(u, v)| {
                u >= m && v >= m && u <= k.width as f64 - 1.0 - m && v <= k.height as f64 - 1.0 - m
            })
    })
}

/// Draw a trajectory and a base placement that keeps every keypoint of every
/// frame inside the image and the depth range.
pub(crate) fn simulate_sequence(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<SimSequence> {
    let k = cfg.sample_intrinsics(rng)?;
    let unplaced = cfg.arm(RigidTransform::identity())?;
    let n_frames = cfg.frames_per_sequence();
    let dt = 1.0 / cfg.frame_rate;
    for _ in 0..20 {
        let traj = Trajectory::sample(&unplaced, &cfg.trajectory, cfg.duration_s, rng);
        let angles: Vec<Vec<f64>> = (0..n_frames)
            .map(|i| traj.angles_at(i as f64 * dt))
            .collect();
        let local: Vec<Vec<Point3>> = angles
            .iter()
            .map(|q| unplaced.local_keypoints(q))
            .collect::<Result<_>>()?;
        let count = local.iter().map(Vec::len).sum::<usize>() as f64;
        let centroid = local
            .iter()
            .flatten()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords)
            / count;
        for _ in 0..cfg.base.max_attempts {
            let yaw = uniform(rng, cfg.base.yaw);
            let tilt = uniform(rng, cfg.base.tilt);
            let depth = uniform(rng, cfg.base.depth);
            let u = rng.random_range(0.3..0.7) * k.width as f64;
            let v = rng.random_range(0.3..0.7) * k.height as f64;
            // Flip the y-up base frame into the y-down camera frame, then
            // tilt the view and spin the arm about its own vertical axis.
            let rotation: Matrix3<f64> =
                *(Rotation3::from_axis_angle(&Vector3::x_axis(), PI + tilt)
                    * Rotation3::from_axis_angle(&Vector3::y_axis(), yaw))
                .matrix();
            let target = Vector3::from(k.ray(u, v)) * depth;
            let base = RigidTransform::new(rotation, target - rotation * centroid);
            let placed: Vec<Point3> = local.iter().flatten().map(|p| base.apply(p)).collect();
            if all_visible(&placed, &k, cfg) {
                let model = cfg.arm(base)?;
                let poses = angles
                    .iter()
                    .enumerate()
                    .map(|(i, q)| {
                        let mut p = forward_kinematics(&model, q)?;
                        p.timestamp = i as f64 * dt;
                        Ok(p)
                    })
                    .collect::<Result<_>>()?;
                return Ok(SimSequence {
                    intrinsics: k,
                    model,
                    poses,
                });
            }
        }
    }
    Err(Error::Config(
        "could not place the arm inside the view; widen the depth range or shorten trajectories"
            .into(),
    ))
}

pub(crate) fn sequence_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

/// Simulate and write a dataset. Sequences are independent and rendered in
/// parallel; the output depends only on `cfg` and `seed`.
pub fn generate_dataset(cfg: &SimConfig, seed: u64, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results: Vec<Result<(CameraIntrinsics, usize, Vec<String>)>> = (0..cfg.n_sequences)
        .into_par_iter()
        .map(|k| {
            let mut rng = sequence_rng(seed, k);
            let sim = simulate_sequence(cfg, &mut rng)?;
            let dir = sequence_dir(out_dir, k);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let table =
                (cfg.table_radius > 0.0).then(|| GroundPlane::under(&sim.model, cfg.table_radius));
            for (n, pose) in sim.poses.iter().enumerate() {
                let mut d = render_depth(&sim.model, pose, &sim.intrinsics, table.as_ref());
                d.timestamp = pose.timestamp;
                write_dpt(&depth_file(&dir, n), &d)?;
            }
            write_poses(&dir.join("poses.json"), &sim.poses)?;
            Ok((sim.intrinsics, sim.poses.len(), sim.model.keypoint_names()))
        })
        .collect();
    let mut intrinsics = Vec::with_capacity(cfg.n_sequences);
    let mut frames = Vec::with_capacity(cfg.n_sequences);
    let mut names = Vec::new();
    for r in results {
        let (k, n, nm) = r?;
        intrinsics.push(k);
        frames.push(n);
        names = nm;
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        seed,
        frame_rate: cfg.frame_rate,
        n_sequences: cfg.n_sequences,
        frames_per_sequence: frames,
        intrinsics_default: cfg.default_intrinsics()?,
        intrinsics,
        z_min: cfg.z_min,
        z_max: cfg.z_max,
        joints: names.len(),
        joint_names: names,
        normalization: cfg.normalization()?,
        config: cfg.clone(),
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequences_stay_in_view_and_are_smooth() {
        let cfg = SimConfig::tiny();
        let spans: f64 = cfg
            .arm(RigidTransform::identity())
            .unwrap()
            .joint_limits
            .iter()
            .map(|[a, b]| b - a)
            .sum();
        // Peak minimum-jerk speed is 1.875 span / duration per joint; every
        // keypoint sits within the arm's total length of each joint.
        let reach: f64 = cfg.link_lengths.iter().sum();
        let v_max = 1.875 * spans / cfg.trajectory.segment_duration[0] * reach;
        for k in 0..4 {
            let mut rng = sequence_rng(3, k);
            let sim = simulate_sequence(&cfg, &mut rng).unwrap();
            assert_eq!(sim.poses.len(), 300);
            for p in &sim.poses {
                assert!(all_visible(
                    &(0..p.len()).map(|j| p.point(j)).collect::<Vec<_>>(),
                    &sim.intrinsics,
                    &cfg
                ));
            }
            for pair in sim.poses.windows(2) {
                for j in 0..pair[0].len() {
                    let step = (pair[1].point(j) - pair[0].point(j)).norm();
                    assert!(step <= v_max / cfg.frame_rate);
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        assert!(SimConfig::tiny().validate().is_ok());
        let mut c = SimConfig::default();
        c.z_min = 5.0;
        assert!(c.validate().is_err());
        let mut c = SimConfig::default();
        c.link_radius = -1.0;
        assert!(c.validate().is_err());
    }
}
