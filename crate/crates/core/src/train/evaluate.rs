use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::rollout::rollout;
use crate::armsim::{Sequence, WindowSpec};
use crate::error::{Error, Result};
use crate::metrics::{horizon_report, HorizonSeries, MetricsReport};
use crate::model::Network;
use crate::spdh::Pose3D;

/// Source of the past poses fed to the motion branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Ground-truth poses.
    GtPast,
    /// The network's own earlier estimates.
    Autoregressive,
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt_past" => Ok(Self::GtPast),
            "autoregressive" => Ok(Self::Autoregressive),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode {other:?}; expected gt_past or autoregressive"
            ))),
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::GtPast => "gt_past",
            Self::Autoregressive => "autoregressive",
        })
    }
}

const EVAL_BATCH: usize = 32;

/// Score every frame with full history and future in `sequences`. Both modes
/// score the same frames; in autoregressive mode the rollout still starts at
/// the first frame of each sequence.
pub fn evaluate(
    net: &Network<f32>,
    sequences: &[Sequence],
    window: &WindowSpec,
    mode: EvalMode,
    thresholds_cm: &[f64],
    joint_names: &[String],
) -> Result<MetricsReport> {
    let steps = window.future_offsets.len();
    let mut present = HorizonSeries::default();
    let mut futures: Vec<HorizonSeries> = window
        .future_offsets
        .iter()
        .map(|&o| HorizonSeries {
            offset_s: o,
            ..Default::default()
        })
        .collect();
    for seq in sequences {
        let frames = seq.window_frames(window)?;
        let fut_frames = window.future_frames(seq.frame_rate)?;
        let k = &seq.intrinsics;
        let mut preds: Vec<(usize, Pose3D, Vec<Pose3D>)> = Vec::with_capacity(frames.len());
        match mode {
            EvalMode::GtPast => {
                let samples = seq.samples(window)?;
                for chunk in samples.chunks(EVAL_BATCH) {
                    let inputs: Vec<_> = chunk.iter().map(|s| (&s.depth, &s.intrinsics)).collect();
                    let pasts: Vec<&[Pose3D]> =
                        chunk.iter().map(|s| s.past.poses.as_slice()).collect();
                    let outs = net.predict_batch(&inputs, Some(&pasts))?;
                    for (s, o) in chunk.iter().zip(outs) {
                        let p = o.decode(k);
                        preds.push((s.frame, p.current, p.future));
                    }
                }
            }
            EvalMode::Autoregressive => {
                for f in rollout(net, seq, window)? {
                    if frames.contains(&f.frame) {
                        preds.push((f.frame, f.current, f.future));
                    }
                }
            }
        }
        for (n, current, future) in preds {
            present.pred.push(current);
            present.gt.push(seq.poses[n].clone());
            for (i, p) in future.into_iter().enumerate().take(steps) {
                futures[i].pred.push(p);
                futures[i].gt.push(seq.poses[n + fut_frames[i]].clone());
            }
        }
    }
    horizon_report(&present, &futures, joint_names, thresholds_cm)
}

/// Per-horizon difference between the autoregressive and ground-truth-past
/// reports; positive ADD gaps mean the autoregressive mode is worse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonGap {
    pub offset_s: f64,
    pub add_gap_cm: Option<f64>,
    /// `mAP(autoregressive) - mAP(gt_past)` per threshold.
    pub map_gap: Option<Vec<f64>>,
}

pub fn gap_per_horizon(gt_past: &MetricsReport, autoregressive: &MetricsReport) -> Vec<HorizonGap> {
    gt_past
        .per_horizon
        .iter()
        .zip(&autoregressive.per_horizon)
        .map(|(g, a)| {
            let both = g.scores.as_ref().zip(a.scores.as_ref());
            HorizonGap {
                offset_s: g.offset_s,
                add_gap_cm: both.map(|(g, a)| a.add_mean - g.add_mean),
                map_gap: both.map(|(g, a)| {
                    g.map_at
                        .iter()
                        .zip(&a.map_at)
                        .map(|(x, y)| y.fraction - x.fraction)
                        .collect()
                }),
            }
        })
        .collect()
}

/// Both modes on the same frames, with their per-horizon gap.
pub fn evaluate_both(
    net: &Network<f32>,
    sequences: &[Sequence],
    window: &WindowSpec,
    thresholds_cm: &[f64],
    joint_names: &[String],
) -> Result<(MetricsReport, MetricsReport, Vec<HorizonGap>)> {
    let gt = evaluate(
        net,
        sequences,
        window,
        EvalMode::GtPast,
        thresholds_cm,
        joint_names,
    )?;
    let auto = evaluate(
        net,
        sequences,
        window,
        EvalMode::Autoregressive,
        thresholds_cm,
        joint_names,
    )?;
    let gap = gap_per_horizon(&gt, &auto);
    Ok((gt, auto, gap))
}
