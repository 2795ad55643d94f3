//! Encode a pose into UV/UZ heatmaps, decode it again and compare with the
//! analytic quantization bound.

use nowcast::geometry::CameraIntrinsics;
use nowcast::model::ModelConfig;
use nowcast::spdh::{argmax, decode_maps, encode_pose, roundtrip_bound, Pose3D};

fn main() -> nowcast::Result<()> {
    let cfg = ModelConfig::default();
    let k = CameraIntrinsics::new(110.0, 110.0, 63.5, 47.5, 128, 96)?;
    let pose = Pose3D::new(
        vec![
            [0.00, 0.30, 2.00],
            [0.05, 0.02, 2.10],
            [0.20, -0.15, 2.30],
            [0.35, -0.10, 2.45],
            [0.42, 0.02, 2.52],
        ],
        0.0,
    );

    for (label, spec) in [
        ("estimation", cfg.est_spec()?),
        ("forecast", cfg.forecast_spec()?),
    ] {
        let maps = encode_pose(&pose, &k, &spec)?;
        let (peak, value) = argmax(maps.uv_map(1));
        println!(
            "{label}: {}x{} maps, {} depth bins of {:.1} cm; joint 1 uv peak at ({}, {}) = {value}",
            spec.map_height,
            spec.map_width,
            spec.n_z_bins,
            spec.delta_z() * 100.0,
            peak / spec.map_width,
            peak % spec.map_width
        );
        let back = decode_maps(&maps, &k);
        let errors: Vec<String> = (0..pose.len())
            .map(|j| format!("{:.2}", (back.point(j) - pose.point(j)).norm() * 100.0))
            .collect();
        println!(
            "  per-joint error cm {errors:?}, bound {:.2} cm",
            roundtrip_bound(&spec, &k) * 100.0
        );
    }
    Ok(())
}
