//! Pose the default arm, render it and print the depth image as ASCII.

use nalgebra::{Rotation3, Vector3};
use nowcast::armsim::{
    forward_kinematics, render_depth, sample_trajectory, GroundPlane, SimConfig,
};
use nowcast::geometry::{project_point, RigidTransform};

fn main() -> nowcast::Result<()> {
    let sim = SimConfig::tiny();
    let k = sim.default_intrinsics()?;
    // Base 2 m in front of the camera, slightly below the optical axis, y up.
    let flip = Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI);
    let base = RigidTransform::new(*flip.matrix(), Vector3::new(0.0, 0.4, 2.0));
    let arm = sim.arm(base)?;

    let angles = sample_trajectory(&arm, &sim.trajectory, 2.0, 30.0, 3);
    let pose = forward_kinematics(&arm, &angles[45])?;
    for (j, name) in arm.keypoint_names().iter().enumerate() {
        let (u, v) = project_point(&pose.point(j), &k)?;
        let j = pose.joints[j];
        println!(
            "{name:>10}: ({:+.3}, {:+.3}, {:.3}) m  pixel ({u:.1}, {v:.1})",
            j[0], j[1], j[2]
        );
    }

    let ground = GroundPlane::under(&arm, 0.6);
    let depth = render_depth(&arm, &pose, &k, Some(&ground));
    let ramp = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    for v in (0..k.height).step_by(2) {
        let line: String = (0..k.width)
            .map(|u| {
                let z = depth.at(u, v);
                if z <= 0.0 {
                    ' '
                } else {
                    let t = ((3.2 - z) / 2.4).clamp(0.0, 0.999);
                    ramp[1 + (t * 9.0) as usize % 9]
                }
            })
            .collect();
        println!("|{line}|");
    }
    println!(
        "{} of {} pixels hit",
        depth.valid_count(),
        k.width * k.height
    );
    Ok(())
}
