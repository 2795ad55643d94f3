//! Evaluation artifacts: JSON reports, CSV tables and an SVG chart of mAP
//! against forecast horizon.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, Scores};
use crate::train::{EvalMode, HorizonGap};

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

fn threshold_header(r: &MetricsReport) -> String {
    r.map_at
        .iter()
        .map(|s| format!(",map@{}cm", s.threshold_cm))
        .collect()
}

fn score_cells(s: Option<&Scores>, n_thresholds: usize) -> String {
    let mut out = format!(
        "{},{}",
        fmt_opt(s.map(|s| s.add_mean)),
        fmt_opt(s.map(|s| s.add_std))
    );
    for i in 0..n_thresholds {
        out.push(',');
        out.push_str(&fmt_opt(
            s.and_then(|s| s.map_at.get(i)).map(|t| t.fraction),
        ));
    }
    out
}

/// `threshold_cm,map`, one row per threshold.
pub fn map_csv(r: &MetricsReport) -> String {
    let mut out = String::from("threshold_cm,map\n");
    for s in &r.map_at {
        let _ = writeln!(out, "{},{:.6}", s.threshold_cm, s.fraction);
    }
    out
}

/// One row for the present and one per future offset.
pub fn horizon_csv(r: &MetricsReport) -> String {
    let mut out = format!("horizon_s,add_mean_cm,add_std_cm{}\n", threshold_header(r));
    for h in &r.per_horizon {
        let _ = writeln!(
            out,
            "{},{}",
            h.offset_s,
            score_cells(h.scores.as_ref(), r.map_at.len())
        );
    }
    out
}

pub fn joint_csv(r: &MetricsReport) -> String {
    let mut out = format!("joint,add_mean_cm,add_std_cm{}\n", threshold_header(r));
    for j in &r.per_joint {
        let _ = writeln!(
            out,
            "{},{}",
            j.joint,
            score_cells(j.scores.as_ref(), r.map_at.len())
        );
    }
    out
}

const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Line chart of mAP at `threshold_cm` against horizon, one polyline per report.
pub fn map_chart_svg(series: &[(&str, &MetricsReport)], threshold_cm: f64) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 150.0, 30.0, 50.0);
    let max_t = series
        .iter()
        .flat_map(|(_, r)| r.per_horizon.iter().map(|h| h.offset_s))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let x = |t: f64| left + t / max_t * (w - left - right);
    let y = |m: f64| top + (1.0 - m) * (h - top - bottom);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="18" text-anchor="middle">mAP@{threshold_cm}cm vs. horizon</text>"#,
        (left + w - right) / 2.0
    );
    let (x0, x1, y0, y1) = (x(0.0), x(max_t), y(0.0), y(1.0));
    let _ = writeln!(
        svg,
        r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#
    );
    for i in 0..=5 {
        let m = i as f64 / 5.0;
        let _ = writeln!(
            svg,
            r##"<line x1="{x0}" y1="{yy}" x2="{x1}" y2="{yy}" stroke="#ddd"/><text x="{tx}" y="{ty}" text-anchor="end">{m:.1}</text>"##,
            yy = y(m),
            tx = x0 - 6.0,
            ty = y(m) + 4.0
        );
    }
    let mut ticks: Vec<f64> = series
        .iter()
        .flat_map(|(_, r)| r.per_horizon.iter().map(|h| h.offset_s))
        .collect();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for t in ticks {
        let label = if t == 0.0 {
            "t".to_string()
        } else {
            format!("t+{t}s")
        };
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{label}</text>"#,
            x(t),
            y0 + 18.0
        );
    }
    for (i, (name, r)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = r
            .per_horizon
            .iter()
            .filter_map(|hs| {
                let m = hs.scores.as_ref()?.map_for(threshold_cm)?;
                Some(format!("{:.2},{:.2}", x(hs.offset_s), y(m)))
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"><title>{name}</title></polyline>"#,
            points.join(" ")
        );
        let ly = top + 20.0 * i as f64 + 10.0;
        let lx = w - right + 15.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{name}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[derive(Serialize)]
struct Summary<'a> {
    provenance: &'a serde_json::Value,
    modes: Vec<ModeSummary<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gap: Option<&'a [HorizonGap]>,
}

#[derive(Serialize)]
struct ModeSummary<'a> {
    mode: EvalMode,
    report: &'a MetricsReport,
}

fn write(path: PathBuf, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Write `<mode>.json` and the three CSV tables per mode, `summary.json`
/// with provenance and the gap between modes, and `map_vs_horizon.svg`.
pub fn write_report_dir(
    dir: &Path,
    reports: &[(EvalMode, MetricsReport)],
    gap: Option<&[HorizonGap]>,
    provenance: &serde_json::Value,
    chart_threshold_cm: f64,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (mode, r) in reports {
        let json = serde_json::to_string_pretty(r).expect("serializable report");
        write(
            dir.join(format!("{mode}.json")),
            &(json + "\n"),
            &mut written,
        )?;
        write(
            dir.join(format!("{mode}_map.csv")),
            &map_csv(r),
            &mut written,
        )?;
        write(
            dir.join(format!("{mode}_horizons.csv")),
            &horizon_csv(r),
            &mut written,
        )?;
        write(
            dir.join(format!("{mode}_joints.csv")),
            &joint_csv(r),
            &mut written,
        )?;
    }
    let summary = Summary {
        provenance,
        modes: reports
            .iter()
            .map(|(mode, report)| ModeSummary {
                mode: *mode,
                report,
            })
            .collect(),
        gap,
    };
    let json = serde_json::to_string_pretty(&summary).expect("serializable summary");
    write(dir.join("summary.json"), &(json + "\n"), &mut written)?;
    let names: Vec<String> = reports.iter().map(|(m, _)| m.to_string()).collect();
    let series: Vec<(&str, &MetricsReport)> = names
        .iter()
        .map(String::as_str)
        .zip(reports.iter().map(|(_, r)| r))
        .collect();
    write(
        dir.join("map_vs_horizon.svg"),
        &map_chart_svg(&series, chart_threshold_cm),
        &mut written,
    )?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{horizon_report, HorizonSeries, DEFAULT_THRESHOLDS_CM};
    use crate::spdh::Pose3D;

    fn report(shift: f64) -> MetricsReport {
        let gt: Vec<Pose3D> = (0..4)
            .map(|i| Pose3D::new(vec![[i as f64 * 0.1, 0.0, 1.0]; 2], 0.0))
            .collect();
        let off = |d: f64| -> Vec<Pose3D> {
            gt.iter()
                .map(|p| {
                    Pose3D::new(
                        p.joints.iter().map(|j| [j[0] + d, j[1], j[2]]).collect(),
                        0.0,
                    )
                })
                .collect()
        };
        let present = HorizonSeries {
            offset_s: 0.0,
            pred: off(shift),
            gt: gt.clone(),
        };
        let futures: Vec<HorizonSeries> = [0.5, 1.0]
            .iter()
            .enumerate()
            .map(|(i, &o)| HorizonSeries {
                offset_s: o,
                pred: off(shift * (i + 2) as f64),
                gt: gt.clone(),
            })
            .collect();
        horizon_report(
            &present,
            &futures,
            &["a".into(), "b".into()],
            &DEFAULT_THRESHOLDS_CM,
        )
        .unwrap()
    }

    #[test]
    fn csv_shapes() {
        let r = report(0.03);
        assert_eq!(map_csv(&r).lines().count(), 6);
        let h = horizon_csv(&r);
        assert_eq!(h.lines().count(), 1 + 3);
        assert!(h.starts_with("horizon_s,add_mean_cm,add_std_cm,map@2cm"));
        assert_eq!(joint_csv(&r).lines().nth(2).unwrap().split(',').count(), 8);
    }

    #[test]
    fn chart_has_one_polyline_per_series() {
        let (a, b) = (report(0.01), report(0.05));
        let svg = map_chart_svg(&[("gt_past", &a), ("autoregressive", &b)], 10.0);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("t+1s"));
    }

    #[test]
    fn report_dir_contents() {
        let dir = tempfile::tempdir().unwrap();
        let r = report(0.02);
        let files = write_report_dir(
            dir.path(),
            &[(EvalMode::GtPast, r.clone())],
            None,
            &serde_json::json!({"seed": 1}),
            10.0,
        )
        .unwrap();
        assert_eq!(files.len(), 6);
        let back: MetricsReport =
            serde_json::from_str(&fs::read_to_string(dir.path().join("gt_past.json")).unwrap())
                .unwrap();
        assert_eq!(back, r);
    }
}
