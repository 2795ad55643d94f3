//! ADD (mean joint distance, cm) and mAP (fraction of joints closer than a
//! threshold) with per-horizon and per-joint breakdowns.
//!
//! Only joints valid in the ground truth are scored. A predicted joint is
//! scored at its decoded position even when flagged low-confidence, so a
//! model cannot improve its numbers by abstaining.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spdh::Pose3D;

pub const DEFAULT_THRESHOLDS_CM: [f64; 5] = [2.0, 4.0, 6.0, 8.0, 10.0];

/// Per-frame, per-joint distance in cm; `None` where the ground truth is invalid.
pub fn joint_errors_cm(pred: &[Pose3D], gt: &[Pose3D]) -> Result<Vec<Vec<Option<f64>>>> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} ground-truth poses",
            pred.len(),
            gt.len()
        )));
    }
    pred.iter()
        .zip(gt)
        .map(|(p, g)| {
            if p.len() != g.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} predicted joints vs {} ground-truth joints",
                    p.len(),
                    g.len()
                )));
            }
            Ok((0..g.len())
                .map(|j| g.valid[j].then(|| (p.point(j) - g.point(j)).norm() * 100.0))
                .collect())
        })
        .collect()
}

fn add_from_errors(errors: &[Vec<Option<f64>>]) -> Result<(f64, f64)> {
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut frame_means = Vec::new();
    for frame in errors {
        let valid: Vec<f64> = frame.iter().flatten().copied().collect();
        if valid.is_empty() {
            continue;
        }
        sum += valid.iter().sum::<f64>();
        count += valid.len();
        frame_means.push(valid.iter().sum::<f64>() / valid.len() as f64);
    }
    if count == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let mean = sum / count as f64;
    let fm = frame_means.iter().sum::<f64>() / frame_means.len() as f64;
    let var =
        frame_means.iter().map(|m| (m - fm) * (m - fm)).sum::<f64>() / frame_means.len() as f64;
    Ok((mean, var.sqrt()))
}

fn map_from_errors(errors: &[Vec<Option<f64>>], thresholds: &[f64]) -> Result<Vec<ThresholdScore>> {
    let all: Vec<f64> = errors.iter().flatten().flatten().copied().collect();
    if all.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    Ok(thresholds
        .iter()
        .map(|&t| ThresholdScore {
            threshold_cm: t,
            fraction: all.iter().filter(|&&d| d < t).count() as f64 / all.len() as f64,
        })
        .collect())
}

/// Mean joint distance over all scored joints, and the standard deviation
/// of the per-frame mean distances, both in cm.
pub fn add_metric(pred: &[Pose3D], gt: &[Pose3D]) -> Result<(f64, f64)> {
    add_from_errors(&joint_errors_cm(pred, gt)?)
}

/// Fraction of scored joints strictly closer than each threshold (cm),
/// pooled over all frames.
pub fn map_metric(
    pred: &[Pose3D],
    gt: &[Pose3D],
    thresholds: &[f64],
) -> Result<Vec<ThresholdScore>> {
    map_from_errors(&joint_errors_cm(pred, gt)?, thresholds)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScore {
    pub threshold_cm: f64,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub add_mean: f64,
    pub add_std: f64,
    pub map_at: Vec<ThresholdScore>,
    pub n_joints_evaluated: usize,
}

impl Scores {
    fn from_errors(errors: &[Vec<Option<f64>>], thresholds: &[f64]) -> Result<Self> {
        let (add_mean, add_std) = add_from_errors(errors)?;
        Ok(Self {
            add_mean,
            add_std,
            map_at: map_from_errors(errors, thresholds)?,
            n_joints_evaluated: errors.iter().flatten().flatten().count(),
        })
    }

    pub fn map_for(&self, threshold_cm: f64) -> Option<f64> {
        self.map_at
            .iter()
            .find(|s| s.threshold_cm == threshold_cm)
            .map(|s| s.fraction)
    }
}

/// Scores at one horizon; `scores` is absent when no prediction exists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonScores {
    pub offset_s: f64,
    pub scores: Option<Scores>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointScores {
    pub joint: String,
    pub scores: Option<Scores>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub add_mean: f64,
    pub add_std: f64,
    pub map_at: Vec<ThresholdScore>,
    /// The first entry is the present (`offset_s = 0`).
    pub per_horizon: Vec<HorizonScores>,
    pub per_joint: Vec<JointScores>,
    pub n_frames: usize,
    pub n_joints_evaluated: usize,
}

/// Paired predictions and ground truth at one horizon.
#[derive(Clone, Debug, Default)]
pub struct HorizonSeries {
    pub offset_s: f64,
    pub pred: Vec<Pose3D>,
    pub gt: Vec<Pose3D>,
}

/// Build a report from the present-time series and one series per future
/// offset. Top-level and per-joint numbers describe the present; an empty
/// future series is reported as absent.
pub fn horizon_report(
    present: &HorizonSeries,
    futures: &[HorizonSeries],
    joint_names: &[String],
    thresholds: &[f64],
) -> Result<MetricsReport> {
    let errors = joint_errors_cm(&present.pred, &present.gt)?;
    let overall = Scores::from_errors(&errors, thresholds)?;
    let mut per_horizon = vec![HorizonScores {
        offset_s: present.offset_s,
        scores: Some(overall.clone()),
    }];
    for f in futures {
        let scores = if f.pred.is_empty() {
            None
        } else {
            match Scores::from_errors(&joint_errors_cm(&f.pred, &f.gt)?, thresholds) {
                Ok(s) => Some(s),
                Err(Error::EmptyEvaluation) => None,
                Err(e) => return Err(e),
            }
        };
        per_horizon.push(HorizonScores {
            offset_s: f.offset_s,
            scores,
        });
    }
    let n_joints = present.gt.first().map_or(0, Pose3D::len);
    let per_joint = (0..n_joints)
        .map(|j| {
            let column: Vec<Vec<Option<f64>>> = errors.iter().map(|row| vec![row[j]]).collect();
            JointScores {
                joint: joint_names
                    .get(j)
                    .cloned()
                    .unwrap_or_else(|| format!("joint{j}")),
                scores: Scores::from_errors(&column, thresholds).ok(),
            }
        })
        .collect();
    Ok(MetricsReport {
        add_mean: overall.add_mean,
        add_std: overall.add_std,
        map_at: overall.map_at,
        per_horizon,
        per_joint,
        n_frames: present.gt.len(),
        n_joints_evaluated: overall.n_joints_evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pose(joints: Vec<[f64; 3]>) -> Pose3D {
        Pose3D::new(joints, 0.0)
    }

    #[test]
    fn examples() {
        let gt = vec![pose(vec![[0.0, 0.0, 1.0], [0.0, 0.0, 2.0]])];
        assert_eq!(add_metric(&gt, &gt).unwrap(), (0.0, 0.0));
        let pred = vec![pose(vec![[0.03, 0.0, 1.0], [0.0, 0.05, 2.0]])];
        let (m, s) = add_metric(&pred, &gt).unwrap();
        assert!((m - 4.0).abs() < 1e-12 && s == 0.0);
        let mut masked = gt.clone();
        masked[0].valid[1] = false;
        assert!((add_metric(&pred, &masked).unwrap().0 - 3.0).abs() < 1e-12);
        masked[0].valid[0] = false;
        assert!(matches!(
            add_metric(&pred, &masked),
            Err(Error::EmptyEvaluation)
        ));
    }

    #[test]
    fn map_examples() {
        let gt = vec![pose(vec![[0.0, 0.0, 1.0]; 3])];
        let pred = vec![pose(vec![
            [0.01, 0.0, 1.0],
            [0.03, 0.0, 1.0],
            [0.05, 0.0, 1.0],
        ])];
        let m = map_metric(&pred, &gt, &[4.0, f64::INFINITY]).unwrap();
        assert!((m[0].fraction - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m[1].fraction, 1.0);
        // 2 cm exactly, built so the distance is exactly representable.
        let gt = vec![pose(vec![[0.0, 0.0, 1.0]])];
        let pred = vec![pose(vec![[0.0, 0.0, 1.0]])];
        let errs = joint_errors_cm(&pred, &gt).unwrap();
        assert_eq!(map_from_errors(&errs, &[0.0]).unwrap()[0].fraction, 0.0);
        let at_two = vec![vec![Some(2.0)]];
        assert_eq!(map_from_errors(&at_two, &[2.0]).unwrap()[0].fraction, 0.0);
    }

    #[test]
    fn std_is_over_frame_means() {
        let gt = vec![pose(vec![[0.0; 3]]), pose(vec![[0.0; 3]])];
        let pred = vec![pose(vec![[0.01, 0.0, 0.0]]), pose(vec![[0.03, 0.0, 0.0]])];
        let (m, s) = add_metric(&pred, &gt).unwrap();
        assert!((m - 2.0).abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn report_structure() {
        let gt: Vec<Pose3D> = (0..3)
            .map(|i| pose(vec![[i as f64 * 0.1, 0.0, 1.0], [0.0, 0.2, 1.5]]))
            .collect();
        let present = HorizonSeries {
            offset_s: 0.0,
            pred: gt.clone(),
            gt: gt.clone(),
        };
        let futures = vec![
            HorizonSeries {
                offset_s: 0.5,
                pred: gt.clone(),
                gt: gt.clone(),
            },
            HorizonSeries {
                offset_s: 1.0,
                ..Default::default()
            },
        ];
        let names = vec!["a".to_string(), "b".to_string()];
        let r = horizon_report(&present, &futures, &names, &DEFAULT_THRESHOLDS_CM).unwrap();
        assert_eq!(r.per_horizon.len(), 3);
        assert_eq!(r.per_horizon[1].scores.as_ref().unwrap().add_mean, 0.0);
        assert!(r.per_horizon[2].scores.is_none());
        assert_eq!(r.per_joint[1].joint, "b");
        assert!(r.map_at.iter().all(|s| s.fraction == 1.0));
        assert_eq!((r.n_frames, r.n_joints_evaluated), (3, 6));
    }

    proptest! {
        #[test]
        fn map_monotone_and_add_translation_invariant(
            pts in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, 0.5f64..3.0, -0.1f64..0.1), 1..20),
            shift in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
        ) {
            let gt: Vec<Pose3D> = pts.iter().map(|&(x, y, z, _)| pose(vec![[x, y, z]])).collect();
            let pred: Vec<Pose3D> = pts.iter().map(|&(x, y, z, d)| pose(vec![[x + d, y, z - d]])).collect();
            let th: Vec<f64> = (0..30).map(|i| i as f64).collect();
            let m = map_metric(&pred, &gt, &th).unwrap();
            for w in m.windows(2) {
                prop_assert!(w[0].fraction <= w[1].fraction);
            }
            let mv = |ps: &[Pose3D]| -> Vec<Pose3D> {
                ps.iter().map(|p| pose(vec![[p.joints[0][0] + shift.0, p.joints[0][1] + shift.1, p.joints[0][2] + shift.2]])).collect()
            };
            let a = add_metric(&pred, &gt).unwrap().0;
            let b = add_metric(&mv(&pred), &mv(&gt)).unwrap().0;
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
