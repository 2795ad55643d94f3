//! Joint training of estimation and forecasting, evaluation in the two past
//! modes, and autoregressive rollout.

mod evaluate;
mod rollout;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nowcast_nn::{Adam, Graph, Mode, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::armsim::{DatasetSample, WindowSpec};
use crate::augment::{augment_sample, AugmentParams};
use crate::error::{Error, Result};
use crate::metrics::add_metric;
use crate::model::{merge_forecast, save_checkpoint, Inputs, Network};
use crate::spdh::{encode_pose_masked, Pose3D, SPDHMaps};

pub use evaluate::{evaluate, evaluate_both, gap_per_horizon, EvalMode, HorizonGap};
pub use rollout::{buffered, rollout, RolloutFrame, RolloutState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub estimation: f64,
    pub forecasting: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            estimation: 1.0,
            forecasting: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Factor applied to the learning rate at each milestone.
    pub lr_decay: f64,
    /// Milestones as fractions of `epochs`, rounded up to whole epochs.
    pub lr_milestones: Vec<f64>,
    pub loss_weights: LossWeights,
    /// Standard deviation of the Gaussian noise added to past poses, meters.
    pub past_jitter_m: f64,
    /// Probability that a sample is trained with its motion features zeroed,
    /// so the estimation branch also works alone before the pose buffer fills.
    pub motion_dropout: f64,
    pub augment: bool,
    /// Draws per sample before falling back to the unaugmented sample.
    pub augment_attempts: usize,
    pub seed: u64,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            lr_decay: 0.1,
            lr_milestones: vec![0.5, 0.75],
            loss_weights: LossWeights::default(),
            past_jitter_m: 0.01,
            motion_dropout: 0.2,
            augment: true,
            augment_attempts: 8,
            seed: 0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0) {
            return bad("learning rate and decay must be positive");
        }
        if self.lr_milestones.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return bad("lr milestones are fractions in [0, 1]");
        }
        let w = self.loss_weights;
        if !(w.estimation >= 0.0) || !(w.forecasting >= 0.0) || w.estimation + w.forecasting == 0.0
        {
            return bad("loss weights must be non-negative and not both zero");
        }
        if !(self.past_jitter_m >= 0.0) {
            return bad("past_jitter_m must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.motion_dropout) {
            return bad("motion_dropout is a probability");
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self
            .lr_milestones
            .iter()
            .filter(|&&m| epoch >= (m * self.epochs as f64).ceil() as usize)
            .count();
        self.learning_rate * self.lr_decay.powi(passed as i32)
    }
}

fn check_maps(a: &SPDHMaps, b: &SPDHMaps) -> Result<()> {
    if a.spec != b.spec || a.joints != b.joints {
        return Err(Error::InvalidArgument(
            "heatmap stacks differ in layout".into(),
        ));
    }
    Ok(())
}

fn sq_err(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum()
}

/// Mean squared error over every pixel of every uv and uz map.
pub fn loss_rpe(pred: &SPDHMaps, gt: &SPDHMaps) -> Result<f64> {
    check_maps(pred, gt)?;
    let n = pred.uv.len() + pred.uz.len();
    Ok((sq_err(&pred.uv, &gt.uv) + sq_err(&pred.uz, &gt.uz)) / n as f64)
}

/// Mean squared error over every map of every future step.
pub fn loss_rpf(pred: &[SPDHMaps], gt: &[SPDHMaps]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predicted steps for {} targets",
            pred.len(),
            gt.len()
        )));
    }
    let mut sum = 0.0;
    let mut n = 0;
    for (p, g) in pred.iter().zip(gt) {
        check_maps(p, g)?;
        sum += sq_err(&p.uv, &g.uv) + sq_err(&p.uz, &g.uz);
        n += p.uv.len() + p.uz.len();
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

pub fn total_loss(rpe: f64, rpf: f64, w: LossWeights) -> f64 {
    w.estimation * rpe + w.forecasting * rpf
}

/// Ground-truth heatmaps of a sample: present, then one stack per future step.
pub fn target_maps(net: &Network<f32>, s: &DatasetSample) -> Result<(SPDHMaps, Vec<SPDHMaps>)> {
    let c = &net.config;
    let est = encode_pose_masked(&s.current, &s.intrinsics, &c.est_spec()?).0;
    let fc_spec = c.forecast_spec()?;
    let fut = s
        .future
        .iter()
        .map(|p| encode_pose_masked(p, &s.intrinsics, &fc_spec).0)
        .collect();
    Ok((est, fut))
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    /// `"step"` for single optimizer steps, `"train"` and `"val"` for epoch means.
    pub split: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    pub loss_rpe: f64,
    pub loss_rpf: f64,
    pub lr: f64,
    pub wall_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub add_cm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub steps: usize,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_val_add_cm: Option<f64>,
    pub log: Vec<LogRecord>,
}

/// Where `fit` writes its artifacts.
#[derive(Clone, Debug)]
pub struct OutputDir {
    pub dir: PathBuf,
    /// Stored in every checkpoint next to the training settings.
    pub meta: serde_json::Value,
}

impl OutputDir {
    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join("final.nwck")
    }

    pub fn best_checkpoint(&self) -> PathBuf {
        self.dir.join("best.nwck")
    }

    pub fn metrics_log(&self) -> PathBuf {
        self.dir.join("metrics.ndjson")
    }
}

/// Seed of the generator driving the randomness of one sample in one epoch.
fn sample_rng(seed: u64, epoch: usize, index: usize, tag: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(epoch as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(index as u64).to_le_bytes());
    key[24..].copy_from_slice(&tag.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn jitter_pose<R: Rng + ?Sized>(p: &Pose3D, noise: &Normal<f64>, rng: &mut R) -> Pose3D {
    let mut out = p.clone();
    for j in (0..p.len()).filter(|&j| p.valid[j]) {
        for a in 0..3 {
            out.joints[j][a] += noise.sample(rng);
        }
    }
    out
}

/// Mini-batch trainer over in-memory samples.
pub struct Trainer {
    pub net: Network<f32>,
    pub config: TrainConfig,
    pub augment: AugmentParams,
    pub window: WindowSpec,
    opt: Adam<f32>,
    steps: usize,
}

impl Trainer {
    pub fn new(
        net: Network<f32>,
        config: TrainConfig,
        augment: AugmentParams,
        window: WindowSpec,
    ) -> Result<Self> {
        config.validate()?;
        augment.validate()?;
        let c = &net.config;
        if window.past_count != c.past_count || window.future_offsets.len() != c.future_count {
            return Err(Error::Config(format!(
                "window has {} past and {} future poses, network expects {} and {}",
                window.past_count,
                window.future_offsets.len(),
                c.past_count,
                c.future_count
            )));
        }
        let opt = Adam::new(config.learning_rate);
        Ok(Self {
            net,
            config,
            augment,
            window,
            opt,
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn forecasting(&self) -> bool {
        self.config.loss_weights.forecasting > 0.0
    }

    /// Augmented, jittered copy of `s` as seen in `epoch`.
    pub fn prepare_sample(
        &self,
        s: &DatasetSample,
        epoch: usize,
        index: usize,
    ) -> Result<DatasetSample> {
        let mut out = None;
        if self.config.augment {
            for attempt in 0..self.config.augment_attempts {
                let mut rng = sample_rng(self.config.seed, epoch, index, attempt as u64);
                match augment_sample(s, &self.augment, &mut rng) {
                    Ok(a) => {
                        out = Some(a);
                        break;
                    }
                    Err(Error::AugmentationRejected { .. }) => continue,
                    Err(e) => return Err(e),
                }
            }
        }
        let mut out = out.unwrap_or_else(|| s.clone());
        if self.config.past_jitter_m > 0.0 {
            let noise = Normal::new(0.0, self.config.past_jitter_m)
                .map_err(|e| Error::Config(e.to_string()))?;
            let mut rng = sample_rng(self.config.seed, epoch, index, u64::MAX);
            for p in &mut out.past.poses {
                *p = jitter_pose(p, &noise, &mut rng);
            }
        }
        Ok(out)
    }

    /// Whether sample `index` keeps its motion features in `epoch`.
    pub fn keeps_motion(&self, epoch: usize, index: usize) -> bool {
        let p = self.config.motion_dropout;
        p == 0.0 || !sample_rng(self.config.seed, epoch, index, u64::MAX - 1).random_bool(p)
    }

    fn batch_tensors(
        &self,
        batch: &[DatasetSample],
        keep: Option<Vec<bool>>,
        with_forecast: bool,
    ) -> Result<(Inputs<f32>, Tensor<f32>, Option<Tensor<f32>>)> {
        let net = &self.net;
        let frames: Vec<_> = batch.iter().map(|s| (&s.depth, &s.intrinsics)).collect();
        let pasts: Vec<&[Pose3D]> = batch.iter().map(|s| s.past.poses.as_slice()).collect();
        let inputs = Inputs {
            xyz: net.xyz_tensor(&frames)?,
            past: Some(net.past_tensors(&pasts)?),
            motion_keep: keep,
        };
        let c = &net.config;
        let (est_spec, fc_spec) = (c.est_spec()?, c.forecast_spec()?);
        let mut est = Vec::with_capacity(batch.len() * 2 * c.joints * est_spec.plane());
        let mut fc = Vec::new();
        for s in batch {
            let (e, f) = target_maps(net, s)?;
            est.extend(e.stacked());
            if with_forecast {
                if f.len() != c.future_count {
                    return Err(Error::InvalidArgument(format!(
                        "sample has {} future poses",
                        f.len()
                    )));
                }
                fc.extend(merge_forecast(&f));
            }
        }
        let n = batch.len();
        let est = Tensor::from_vec(
            &[n, 2 * c.joints, est_spec.map_height, est_spec.map_width],
            est,
        );
        let fc = with_forecast.then(|| {
            Tensor::from_vec(
                &[
                    n,
                    2 * c.joints * c.future_count,
                    fc_spec.map_height,
                    fc_spec.map_width,
                ],
                fc,
            )
        });
        Ok((inputs, est, fc))
    }

    /// One optimizer step on already prepared samples. Returns `(rpe, rpf)`.
    /// `keep` flags the samples whose motion features are used.
    pub fn step(
        &mut self,
        batch: &[DatasetSample],
        keep: Option<Vec<bool>>,
        lr: f64,
        epoch: usize,
        batch_index: usize,
    ) -> Result<(f64, f64)> {
        let with_fc = self.forecasting();
        let (inputs, est_t, fc_t) = self.batch_tensors(batch, keep, with_fc)?;
        let mut g = Graph::new();
        let out = self.net.forward(&mut g, &inputs, Mode::Train, with_fc)?;
        let w = self.config.loss_weights;
        let rpe = g.mse(out.estimate, est_t);
        let mut total = g.scale(rpe, w.estimation);
        let mut rpf_val = 0.0f64;
        if let (Some(f), Some(t)) = (out.forecast, fc_t) {
            let rpf = g.mse(f, t);
            rpf_val = g.value(rpf).item().into();
            let weighted = g.scale(rpf, w.forecasting);
            total = g.add(total, weighted);
        }
        let rpe_val: f64 = g.value(rpe).item().into();
        if !rpe_val.is_finite() || !rpf_val.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: batch_index,
                rpe: rpe_val,
                rpf: rpf_val,
            });
        }
        let grads = g.backward(total);
        self.opt.lr = lr;
        self.opt.step(&mut self.net.store, &grads);
        self.net.store.apply_running_stats(g.running_updates());
        self.steps += 1;
        Ok((rpe_val, rpf_val))
    }

    /// Eval-mode losses and present-time ADD (cm) with ground-truth past poses.
    pub fn validate(&self, samples: &[DatasetSample]) -> Result<(f64, f64, f64)> {
        let mut rpe = 0.0;
        let mut rpf = 0.0;
        let mut pred = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(self.config.batch_size.max(1)) {
            let frames: Vec<_> = chunk.iter().map(|s| (&s.depth, &s.intrinsics)).collect();
            let pasts: Vec<&[Pose3D]> = chunk.iter().map(|s| s.past.poses.as_slice()).collect();
            let outs = self.net.predict_batch(&frames, Some(&pasts))?;
            for (s, o) in chunk.iter().zip(outs) {
                let (e, f) = target_maps(&self.net, s)?;
                rpe += loss_rpe(&o.current, &e)?;
                rpf += loss_rpf(&o.future, &f)?;
                pred.push(o.decode(&s.intrinsics).current);
            }
        }
        let n = samples.len().max(1) as f64;
        let gt: Vec<Pose3D> = samples.iter().map(|s| s.current.clone()).collect();
        let (add, _) = add_metric(&pred, &gt)?;
        Ok((rpe / n, rpf / n, add))
    }

    fn checkpoint_meta(
        &self,
        out: &OutputDir,
        epoch: usize,
        val_add: Option<f64>,
    ) -> serde_json::Value {
        serde_json::json!({
            "epoch": epoch,
            "steps": self.steps,
            "val_add_cm": val_add,
            "train": self.config,
            "augment": self.augment,
            "window": self.window,
            "run": out.meta,
        })
    }

    /// Train for the configured epochs. With `val` non-empty the checkpoint
    /// with the lowest validation ADD is kept as `best.nwck`; without it
    /// `best.nwck` tracks the latest epoch. Every log record is written to
    /// `log` as one JSON line.
    pub fn fit(
        &mut self,
        train: &[DatasetSample],
        val: &[DatasetSample],
        out: Option<&OutputDir>,
        log: &mut dyn Write,
    ) -> Result<TrainSummary> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("no training samples".into()));
        }
        let start = Instant::now();
        let mut records = Vec::new();
        let mut emit = |r: LogRecord, log: &mut dyn Write| -> Result<()> {
            let line = serde_json::to_string(&r).expect("serializable record");
            writeln!(log, "{line}").map_err(|e| Error::io("<training log>", e))?;
            records.push(r);
            Ok(())
        };
        let mut best: Option<(usize, f64)> = None;
        let mut epochs_run = 0;
        let mut order: Vec<usize> = (0..train.len()).collect();
        'epochs: for epoch in 0..self.config.epochs {
            let lr = self.lr_for(epoch);
            let mut shuffle_rng = sample_rng(self.config.seed, epoch, usize::MAX, 0);
            order.shuffle(&mut shuffle_rng);
            let (mut sum_rpe, mut sum_rpf, mut seen) = (0.0, 0.0, 0usize);
            for (b, idx) in order.chunks(self.config.batch_size).enumerate() {
                if self.config.max_steps.is_some_and(|m| self.steps >= m) {
                    break;
                }
                let batch = idx
                    .iter()
                    .map(|&i| self.prepare_sample(&train[i], epoch, i))
                    .collect::<Result<Vec<_>>>()?;
                let keep = idx.iter().map(|&i| self.keeps_motion(epoch, i)).collect();
                let (rpe, rpf) = self.step(&batch, Some(keep), lr, epoch, b)?;
                sum_rpe += rpe * batch.len() as f64;
                sum_rpf += rpf * batch.len() as f64;
                seen += batch.len();
                emit(
                    LogRecord {
                        epoch,
                        split: "step".into(),
                        step: Some(self.steps),
                        loss_rpe: rpe,
                        loss_rpf: rpf,
                        lr,
                        wall_s: start.elapsed().as_secs_f64(),
                        add_cm: None,
                    },
                    log,
                )?;
            }
            if seen == 0 {
                break 'epochs;
            }
            epochs_run = epoch + 1;
            emit(
                LogRecord {
                    epoch,
                    split: "train".into(),
                    step: Some(self.steps),
                    loss_rpe: sum_rpe / seen as f64,
                    loss_rpf: sum_rpf / seen as f64,
                    lr,
                    wall_s: start.elapsed().as_secs_f64(),
                    add_cm: None,
                },
                log,
            )?;
            let mut val_add = None;
            if !val.is_empty() {
                let (rpe, rpf, add) = self.validate(val)?;
                val_add = Some(add);
                emit(
                    LogRecord {
                        epoch,
                        split: "val".into(),
                        step: Some(self.steps),
                        loss_rpe: rpe,
                        loss_rpf: if self.forecasting() { rpf } else { 0.0 },
                        lr,
                        wall_s: start.elapsed().as_secs_f64(),
                        add_cm: Some(add),
                    },
                    log,
                )?;
            }
            let improved = match (val_add, best) {
                (Some(a), Some((_, b))) => a < b,
                (Some(_), None) => true,
                (None, _) => true,
            };
            if improved {
                best = Some((epoch, val_add.unwrap_or(f64::NAN)));
            }
            if let Some(o) = out {
                let meta = self.checkpoint_meta(o, epoch, val_add);
                if improved {
                    save_checkpoint(&o.best_checkpoint(), &self.net, &meta)?;
                }
                save_checkpoint(&o.final_checkpoint(), &self.net, &meta)?;
            }
        }
        Ok(TrainSummary {
            steps: self.steps,
            epochs_run,
            best_epoch: best.map(|b| b.0),
            best_val_add_cm: best.map(|b| b.1).filter(|v| v.is_finite()),
            log: records,
        })
    }

    fn lr_for(&self, epoch: usize) -> f64 {
        self.config.lr_at(epoch)
    }
}

/// Create `dir` and open its metrics log for writing.
pub fn open_output(dir: &Path, meta: serde_json::Value) -> Result<(OutputDir, std::fs::File)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = OutputDir {
        dir: dir.to_path_buf(),
        meta,
    };
    let path = out.metrics_log();
    let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    Ok((out, f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spdh::HeatmapSpec;

    #[test]
    fn schedule() {
        let c = TrainConfig::default();
        let at = |e| c.lr_at(e);
        assert_eq!(at(0), 1e-3);
        assert_eq!(at(14), 1e-3);
        assert!((at(15) - 1e-4).abs() < 1e-15);
        assert!((at(20) - 1e-4).abs() < 1e-15);
        assert!((at(23) - 1e-5).abs() < 1e-15);
        assert!((at(29) - 1e-5).abs() < 1e-15);
    }

    #[test]
    fn losses_on_known_maps() {
        let spec = HeatmapSpec::for_input(16, 16, 4, 2.0, 0.5, 4.5).unwrap();
        let a = SPDHMaps::zeros(spec, 1);
        let mut b = a.clone();
        b.uv[0] = 2.0;
        // One element off by 2 among 2 * 16 elements.
        assert_eq!(loss_rpe(&a, &b).unwrap(), 4.0 / 32.0);
        assert_eq!(loss_rpe(&a, &a).unwrap(), 0.0);
        assert_eq!(
            loss_rpf(&[a.clone(), a.clone()], &[a.clone(), b.clone()]).unwrap(),
            4.0 / 64.0
        );
        assert!(loss_rpf(std::slice::from_ref(&a), &[]).is_err());
        assert_eq!(
            total_loss(
                1.0,
                3.0,
                LossWeights {
                    estimation: 1.0,
                    forecasting: 0.0
                }
            ),
            1.0
        );
        assert_eq!(total_loss(1.0, 3.0, LossWeights::default()), 4.0);
    }

    #[test]
    fn sample_streams_are_distinct_and_reproducible() {
        let a: u64 = sample_rng(1, 2, 3, 0).random();
        let b: u64 = sample_rng(1, 2, 3, 0).random();
        let c: u64 = sample_rng(1, 3, 2, 0).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig::default();
        c.loss_weights = LossWeights {
            estimation: 0.0,
            forecasting: 0.0,
        };
        assert!(c.validate().is_err());
        c = TrainConfig::default();
        c.lr_milestones = vec![1.5];
        assert!(c.validate().is_err());
    }
}
