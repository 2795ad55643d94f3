//! ADD and mAP on hand-made predictions, per horizon and per joint.

use nowcast::metrics::{
    add_metric, horizon_report, map_metric, HorizonSeries, DEFAULT_THRESHOLDS_CM,
};
use nowcast::report::{horizon_csv, map_chart_svg};
use nowcast::spdh::Pose3D;

fn shifted(poses: &[Pose3D], dx: f64) -> Vec<Pose3D> {
    poses
        .iter()
        .map(|p| {
            Pose3D::new(
                p.joints.iter().map(|j| [j[0] + dx, j[1], j[2]]).collect(),
                p.timestamp,
            )
        })
        .collect()
}

fn main() -> nowcast::Result<()> {
    let gt: Vec<Pose3D> = (0..20)
        .map(|n| {
            let t = n as f64 / 30.0;
            Pose3D::new(
                vec![
                    [0.1 * t, 0.0, 2.0],
                    [0.1 * t, -0.3, 2.1],
                    [0.2, -0.5, 2.2 + 0.1 * t],
                ],
                t,
            )
        })
        .collect();
    let pred = shifted(&gt, 0.03);
    let (mean, std) = add_metric(&pred, &gt)?;
    println!("ADD {mean:.2} +- {std:.2} cm");
    for s in map_metric(&pred, &gt, &DEFAULT_THRESHOLDS_CM)? {
        println!("  mAP@{}cm = {:.2}", s.threshold_cm, s.fraction);
    }

    let present = HorizonSeries {
        offset_s: 0.0,
        pred,
        gt: gt.clone(),
    };
    let futures: Vec<HorizonSeries> = [0.5, 1.0, 1.5, 2.0]
        .iter()
        .map(|&o| HorizonSeries {
            offset_s: o,
            pred: shifted(&gt, 0.03 + 0.02 * o),
            gt: gt.clone(),
        })
        .collect();
    let names = ["base".to_string(), "elbow".to_string(), "tip".to_string()];
    let report = horizon_report(&present, &futures, &names, &DEFAULT_THRESHOLDS_CM)?;
    print!("{}", horizon_csv(&report));
    let svg = map_chart_svg(&[("example", &report)], 6.0);
    println!("chart: {} bytes of SVG", svg.len());
    Ok(())
}
