//! Back-project a synthetic depth frame to a point cloud and splat it back.

use nowcast::geometry::{
    backproject_pixel, depth_to_xyz, project_point, splat_pointcloud, xyz_to_pointcloud,
    CameraIntrinsics, DepthFrame,
};

fn main() -> nowcast::Result<()> {
    let k = CameraIntrinsics::new(110.0, 110.0, 63.5, 47.5, 128, 96)?;

    let p = backproject_pixel(100.0, 20.0, 2.0, &k)?;
    let (u, v) = project_point(&p, &k)?;
    println!(
        "pixel (100, 20) at 2 m -> {:.4} {:.4} {:.4} -> ({u:.3}, {v:.3})",
        p.x, p.y, p.z
    );

    // A tilted plane with a hole in the middle.
    let mut values = vec![0.0f32; k.width * k.height];
    for v in 0..k.height {
        for u in 0..k.width {
            let hole = (40..56).contains(&u) && (40..56).contains(&v);
            if !hole {
                values[v * k.width + u] = 1.5 + 0.01 * u as f32;
            }
        }
    }
    let depth = DepthFrame::new(k.width, k.height, values, 0.0)?;
    let xyz = depth_to_xyz(&depth, &k)?;
    let cloud = xyz_to_pointcloud(&xyz);
    println!(
        "{} valid pixels -> {} points",
        depth.valid_count(),
        cloud.len()
    );

    let back = splat_pointcloud(&cloud, &k);
    let max_err = depth
        .values
        .iter()
        .zip(&back.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    println!(
        "splatted back: {} valid, max depth change {max_err:e} m",
        back.valid_count()
    );
    Ok(())
}
