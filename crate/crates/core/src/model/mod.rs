//! The nowcasting network: a convolutional encoder over the XYZ image, a
//! recurrent encoder over past poses, channel-wise fusion, and two heads
//! emitting heatmaps for the current pose and the future poses.

mod blocks;
mod checkpoint;

use nowcast_nn::layers::{Conv2d, Gru, Linear};
use nowcast_nn::{Graph, Mode, ParamStore, Real, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::armsim::Normalization;
use crate::error::{Error, Result};
use crate::geometry::{depth_to_xyz, CameraIntrinsics, DepthFrame};
use crate::spdh::{decode_maps, HeatmapSpec, Pose3D, SPDHMaps, DEFAULT_SIGMA};
use blocks::{ConvBn, ResBlock, ResUp};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    /// Channels of the visual feature map.
    pub backbone_channels: usize,
    pub motion_embed_dim: usize,
    pub recurrent_hidden: usize,
    /// Channels of the motion map at 1/16 resolution.
    pub motion_channels: usize,
    /// Channels of the motion map at the fusion point.
    pub motion_out_channels: usize,
    pub past_count: usize,
    pub future_count: usize,
    pub joints: usize,
    /// Widths of the estimation head's two upsampling blocks.
    pub est_head_channels: [usize; 2],
    pub forecast_channels: usize,
    pub est_head_stride: usize,
    pub forecast_head_stride: usize,
    pub sigma: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_height: 96,
            input_width: 128,
            backbone_channels: 64,
            motion_embed_dim: 128,
            recurrent_hidden: 256,
            motion_channels: 16,
            motion_out_channels: 32,
            past_count: 10,
            future_count: 4,
            joints: 5,
            est_head_channels: [64, 32],
            forecast_channels: 32,
            est_head_stride: 1,
            forecast_head_stride: 4,
            sigma: DEFAULT_SIGMA,
            z_min: 0.5,
            z_max: 4.5,
        }
    }
}

impl ModelConfig {
    /// Small network for 48x64 inputs.
    pub fn tiny() -> Self {
        Self {
            input_height: 48,
            input_width: 64,
            backbone_channels: 16,
            motion_embed_dim: 32,
            recurrent_hidden: 64,
            motion_channels: 8,
            motion_out_channels: 8,
            est_head_channels: [32, 16],
            z_min: 0.8,
            z_max: 3.2,
            ..Self::default()
        }
    }

    /// Minimal 32x32 network for finite-difference checks.
    pub fn gradcheck() -> Self {
        Self {
            input_height: 32,
            input_width: 32,
            backbone_channels: 8,
            motion_embed_dim: 8,
            recurrent_hidden: 8,
            motion_channels: 4,
            motion_out_channels: 4,
            past_count: 3,
            future_count: 2,
            joints: 2,
            est_head_channels: [8, 8],
            forecast_channels: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_height == 0
            || self.input_width == 0
            || !self.input_height.is_multiple_of(16)
            || !self.input_width.is_multiple_of(16)
        {
            return bad(format!(
                "input {}x{} must be a positive multiple of 16",
                self.input_height, self.input_width
            ));
        }
        if self.past_count == 0 || self.future_count == 0 || self.joints == 0 {
            return bad("past_count, future_count and joints must be at least 1".into());
        }
        let widths = [
            self.backbone_channels,
            self.motion_embed_dim,
            self.recurrent_hidden,
            self.motion_channels,
            self.motion_out_channels,
            self.est_head_channels[0],
            self.est_head_channels[1],
            self.forecast_channels,
        ];
        if widths.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if self.est_head_stride != 1 || self.forecast_head_stride != 4 {
            return bad("the heads emit maps at strides 1 and 4 only".into());
        }
        self.est_spec()?;
        Ok(())
    }

    pub fn est_spec(&self) -> Result<HeatmapSpec> {
        HeatmapSpec::for_input(
            self.input_height,
            self.input_width,
            self.est_head_stride,
            self.sigma,
            self.z_min,
            self.z_max,
        )
    }

    pub fn forecast_spec(&self) -> Result<HeatmapSpec> {
        HeatmapSpec::for_input(
            self.input_height,
            self.input_width,
            self.forecast_head_stride,
            self.sigma,
            self.z_min,
            self.z_max,
        )
    }

    fn stage_channels(&self) -> (usize, usize) {
        (
            (self.backbone_channels / 4).max(8),
            (self.backbone_channels / 2).max(8),
        )
    }
}

/// Network inputs for a batch of `N` samples.
#[derive(Clone, Debug)]
pub struct Inputs<S> {
    /// Normalized XYZ images, `[N, 3, H, W]`.
    pub xyz: Tensor<S>,
    /// `M` tensors of `[N, 3J]` normalized past poses, oldest first. `None`
    /// replaces the motion features with zeros.
    pub past: Option<Vec<Tensor<S>>>,
    /// Per sample, whether its motion features are kept; dropped samples
    /// see zeros, as in estimation-only inference. `None` keeps all.
    pub motion_keep: Option<Vec<bool>>,
}

/// Graph nodes of the two heads.
#[derive(Clone, Copy, Debug)]
pub struct Outputs {
    /// `[N, 2J, H, W]`: the `J` uv maps, then the `J` uz maps.
    pub estimate: Var,
    /// `[N, T 2J, H/4, W/4]`: per future step, its `J` uv maps then `J` uz maps.
    pub forecast: Option<Var>,
}

#[derive(Clone, Debug)]
struct VisualEncoder {
    stem: ConvBn,
    stage1: [ResBlock; 2],
    down2: ConvBn,
    stage2: [ResBlock; 2],
    down3: ConvBn,
    stage3: [ResBlock; 2],
    stage4: [ResBlock; 2],
    skip: ConvBn,
}

#[derive(Clone, Debug)]
struct MotionEncoder {
    embed: Linear,
    gru: Gru,
    project: Linear,
    up: [ResUp; 2],
}

#[derive(Clone, Debug)]
struct EstimationHead {
    up: [ResUp; 2],
    uv: Conv2d,
    uz: Conv2d,
}

#[derive(Clone, Debug)]
struct ForecastHead {
    hidden: ConvBn,
    out: Conv2d,
}

#[derive(Clone, Debug)]
pub struct Network<S: Real> {
    pub config: ModelConfig,
    pub normalization: Normalization,
    pub seed: u64,
    pub store: ParamStore<S>,
    visual: VisualEncoder,
    motion: MotionEncoder,
    estimate: EstimationHead,
    forecast: ForecastHead,
}

/// Decoded network output.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub current: Pose3D,
    pub future: Vec<Pose3D>,
}

/// Heatmaps of a single sample.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkOutput {
    pub current: SPDHMaps,
    pub future: Vec<SPDHMaps>,
}

impl NetworkOutput {
    pub fn decode(&self, k: &CameraIntrinsics) -> Prediction {
        Prediction {
            current: decode_maps(&self.current, k),
            future: self.future.iter().map(|m| decode_maps(m, k)).collect(),
        }
    }
}

/// Split one sample's forecast channels into per-step maps.
pub fn split_forecast(
    data: &[f32],
    spec: HeatmapSpec,
    joints: usize,
    steps: usize,
) -> Vec<SPDHMaps> {
    let per_step = 2 * joints * spec.plane();
    assert_eq!(data.len(), per_step * steps, "forecast stack size mismatch");
    data.chunks(per_step)
        .map(|c| SPDHMaps::from_stacked(spec, joints, c))
        .collect()
}

/// Inverse of [`split_forecast`].
pub fn merge_forecast(maps: &[SPDHMaps]) -> Vec<f32> {
    maps.iter().flat_map(|m| m.stacked()).collect()
}

impl<S: Real> Network<S> {
    pub fn new(config: ModelConfig, normalization: Normalization, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let mut store = ParamStore::new();
        let s = &mut store;
        let c = &config;
        let (c1, c2) = c.stage_channels();
        let cv = c.backbone_channels;
        let visual = VisualEncoder {
            stem: ConvBn::new(s, "visual.stem", 3, c1, 3, 1, 1, rng),
            stage1: [
                ResBlock::new(s, "visual.stage1.0", c1, rng),
                ResBlock::new(s, "visual.stage1.1", c1, rng),
            ],
            down2: ConvBn::new(s, "visual.down2", c1, c2, 3, 2, 1, rng),
            stage2: [
                ResBlock::new(s, "visual.stage2.0", c2, rng),
                ResBlock::new(s, "visual.stage2.1", c2, rng),
            ],
            down3: ConvBn::new(s, "visual.down3", c2, cv, 3, 2, 1, rng),
            stage3: [
                ResBlock::new(s, "visual.stage3.0", cv, rng),
                ResBlock::new(s, "visual.stage3.1", cv, rng),
            ],
            stage4: [
                ResBlock::new(s, "visual.stage4.0", cv, rng),
                ResBlock::new(s, "visual.stage4.1", cv, rng),
            ],
            skip: ConvBn::new(s, "visual.skip", c1, cv, 4, 4, 0, rng),
        };
        let (h16, w16) = (c.input_height / 16, c.input_width / 16);
        let motion = MotionEncoder {
            embed: Linear::new(
                s,
                "motion.embed",
                3 * c.joints,
                c.motion_embed_dim,
                true,
                rng,
            ),
            gru: Gru::new(s, "motion.gru", c.motion_embed_dim, c.recurrent_hidden, rng),
            project: Linear::new(
                s,
                "motion.project",
                c.recurrent_hidden,
                c.motion_channels * h16 * w16,
                true,
                rng,
            ),
            up: [
                ResUp::new(
                    s,
                    "motion.up.0",
                    c.motion_channels,
                    c.motion_out_channels,
                    rng,
                ),
                ResUp::new(
                    s,
                    "motion.up.1",
                    c.motion_out_channels,
                    c.motion_out_channels,
                    rng,
                ),
            ],
        };
        let fused = cv + c.motion_out_channels;
        let [e0, e1] = c.est_head_channels;
        let estimate = EstimationHead {
            up: [
                ResUp::new(s, "estimate.up.0", fused, e0, rng),
                ResUp::new(s, "estimate.up.1", e0, e1, rng),
            ],
            uv: Conv2d::new(s, "estimate.uv", e1, c.joints, 1, 1, 0, true, rng),
            uz: Conv2d::new(s, "estimate.uz", e1, c.joints, 1, 1, 0, true, rng),
        };
        let forecast = ForecastHead {
            hidden: ConvBn::new(
                s,
                "forecast.hidden",
                fused,
                c.forecast_channels,
                3,
                1,
                1,
                rng,
            ),
            out: Conv2d::new(
                s,
                "forecast.out",
                c.forecast_channels,
                c.future_count * 2 * c.joints,
                3,
                1,
                1,
                true,
                rng,
            ),
        };
        // Output layers start at zero so training begins from the all-zero
        // heatmap instead of first unlearning random activations.
        for name in [
            "estimate.uv.weight",
            "estimate.uz.weight",
            "forecast.out.weight",
        ] {
            let id = store.find(name).expect("output layer exists");
            store.get_mut(id).data_mut().fill(S::zero());
        }
        Ok(Self {
            config,
            normalization,
            seed,
            store,
            visual,
            motion,
            estimate,
            forecast,
        })
    }

    /// The same network with parameters converted to another precision.
    pub fn cast<T: Real>(&self) -> Network<T> {
        Network {
            config: self.config.clone(),
            normalization: self.normalization,
            seed: self.seed,
            store: self.store.cast(),
            visual: self.visual.clone(),
            motion: self.motion.clone(),
            estimate: self.estimate.clone(),
            forecast: self.forecast.clone(),
        }
    }

    /// Trainable scalars whose names start with `prefix` (`""` for all).
    pub fn param_count(&self, prefix: &str) -> usize {
        self.store.count_params(prefix)
    }

    /// `[N, 3, H, W] -> [N, C_vis, H/4, W/4]`.
    pub fn visual_encode(&self, g: &mut Graph<S>, x: Var, mode: Mode) -> Result<Var> {
        let c = &self.config;
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 4
            || shape[1] != 3
            || shape[2] != c.input_height
            || shape[3] != c.input_width
        {
            return Err(Error::InvalidArgument(format!(
                "visual input {shape:?} does not match [N, 3, {}, {}]",
                c.input_height, c.input_width
            )));
        }
        let v = &self.visual;
        let st = &self.store;
        let mut s1 = v.stem.forward(g, st, x, mode, true);
        for b in &v.stage1 {
            s1 = b.forward(g, st, s1, mode);
        }
        let mut y = v.down2.forward(g, st, s1, mode, true);
        for b in &v.stage2 {
            y = b.forward(g, st, y, mode);
        }
        y = v.down3.forward(g, st, y, mode, true);
        for b in v.stage3.iter().chain(&v.stage4) {
            y = b.forward(g, st, y, mode);
        }
        let skip = v.skip.forward(g, st, s1, mode, false);
        let sum = g.add(y, skip);
        Ok(g.relu(sum))
    }

    /// `M` tensors of `[N, 3J]` -> `[N, C_mot', H/4, W/4]`.
    pub fn motion_encode(&self, g: &mut Graph<S>, past: &[Tensor<S>], mode: Mode) -> Result<Var> {
        let c = &self.config;
        if past.len() != c.past_count {
            return Err(Error::InvalidArgument(format!(
                "expected {} past poses, got {}",
                c.past_count,
                past.len()
            )));
        }
        let n = past[0].shape()[0];
        if let Some(t) = past.iter().find(|t| t.shape() != [n, 3 * c.joints]) {
            return Err(Error::InvalidArgument(format!(
                "past pose tensor {:?} does not match [{n}, {}]",
                t.shape(),
                3 * c.joints
            )));
        }
        let m = &self.motion;
        let st = &self.store;
        let xs: Vec<Var> = past
            .iter()
            .map(|t| {
                let x = g.input(t.clone());
                let e = m.embed.forward(g, st, x);
                g.relu(e)
            })
            .collect();
        let h = m.gru.run(g, st, &xs);
        let p = m.project.forward(g, st, h);
        let mut y = g.reshape(
            p,
            &[
                n,
                c.motion_channels,
                c.input_height / 16,
                c.input_width / 16,
            ],
        );
        for up in &m.up {
            y = up.forward(g, st, y, mode);
        }
        Ok(y)
    }

    /// Channel-wise concatenation, visual features first.
    pub fn fuse(&self, g: &mut Graph<S>, visual: Var, motion: Var) -> Result<Var> {
        let a = g.value(visual).shape();
        let b = g.value(motion).shape();
        if a.len() != 4 || b.len() != 4 || a[0] != b[0] || a[2..] != b[2..] {
            return Err(Error::InvalidArgument(format!(
                "cannot fuse {a:?} with {b:?}"
            )));
        }
        Ok(g.concat(visual, motion))
    }

    pub fn estimate_head(&self, g: &mut Graph<S>, fused: Var, mode: Mode) -> Var {
        let e = &self.estimate;
        let st = &self.store;
        let mut y = fused;
        for up in &e.up {
            y = up.forward(g, st, y, mode);
        }
        let uv = e.uv.forward(g, st, y);
        let uz = e.uz.forward(g, st, y);
        g.concat(uv, uz)
    }

    pub fn forecast_head(&self, g: &mut Graph<S>, fused: Var, mode: Mode) -> Var {
        let f = &self.forecast;
        let y = f.hidden.forward(g, &self.store, fused, mode, true);
        f.out.forward(g, &self.store, y)
    }

    pub fn forward(
        &self,
        g: &mut Graph<S>,
        inputs: &Inputs<S>,
        mode: Mode,
        with_forecast: bool,
    ) -> Result<Outputs> {
        let x = g.input(inputs.xyz.clone());
        let visual = self.visual_encode(g, x, mode)?;
        let motion = match &inputs.past {
            Some(past) => {
                let m = self.motion_encode(g, past, mode)?;
                match &inputs.motion_keep {
                    Some(keep) if keep.iter().any(|k| !k) => {
                        let shape = g.value(m).shape().to_vec();
                        if keep.len() != shape[0] {
                            return Err(Error::InvalidArgument(format!(
                                "{} motion flags for a batch of {}",
                                keep.len(),
                                shape[0]
                            )));
                        }
                        let per = shape[1..].iter().product::<usize>();
                        let mask = keep
                            .iter()
                            .flat_map(|&k| {
                                std::iter::repeat_n(if k { S::one() } else { S::zero() }, per)
                            })
                            .collect();
                        let mask = g.input(Tensor::from_vec(&shape, mask));
                        g.mul(m, mask)
                    }
                    _ => m,
                }
            }
            None => {
                let c = &self.config;
                let n = inputs.xyz.shape()[0];
                g.input(Tensor::zeros(&[
                    n,
                    c.motion_out_channels,
                    c.input_height / 4,
                    c.input_width / 4,
                ]))
            }
        };
        let fused = self.fuse(g, visual, motion)?;
        let estimate = self.estimate_head(g, fused, mode);
        let forecast = with_forecast.then(|| self.forecast_head(g, fused, mode));
        Ok(Outputs { estimate, forecast })
    }

    /// Normalized XYZ images of a batch of depth frames.
    pub fn xyz_tensor(&self, frames: &[(&DepthFrame, &CameraIntrinsics)]) -> Result<Tensor<S>> {
        let c = &self.config;
        let (h, w) = (c.input_height, c.input_width);
        let plane = h * w;
        let mut data = vec![S::zero(); frames.len() * 3 * plane];
        for (i, (d, k)) in frames.iter().enumerate() {
            if k.height != h || k.width != w {
                return Err(Error::InvalidArgument(format!(
                    "{}x{} frame for a {h}x{w} network",
                    k.height, k.width
                )));
            }
            let img = depth_to_xyz(d, k)?;
            let base = i * 3 * plane;
            for (p, (xyz, &valid)) in img.coords.iter().zip(&img.mask).enumerate() {
                if valid {
                    let q = self.normalization.apply(*xyz);
                    for ch in 0..3 {
                        data[base + ch * plane + p] = S::from_f64_lossy(q[ch]);
                    }
                }
            }
        }
        Ok(Tensor::from_vec(&[frames.len(), 3, h, w], data))
    }

    /// Per time step, a `[N, 3J]` tensor of normalized joints; invalid joints
    /// are zero.
    pub fn past_tensors(&self, pasts: &[&[Pose3D]]) -> Result<Vec<Tensor<S>>> {
        let c = &self.config;
        let n = pasts.len();
        let mut out = vec![vec![S::zero(); n * 3 * c.joints]; c.past_count];
        for (i, past) in pasts.iter().enumerate() {
            if past.len() != c.past_count {
                return Err(Error::InvalidArgument(format!(
                    "expected {} past poses, got {}",
                    c.past_count,
                    past.len()
                )));
            }
            for (t, pose) in past.iter().enumerate() {
                if pose.len() != c.joints {
                    return Err(Error::InvalidArgument(format!(
                        "pose has {} joints, network expects {}",
                        pose.len(),
                        c.joints
                    )));
                }
                for j in (0..c.joints).filter(|&j| pose.valid[j]) {
                    let q = self.normalization.apply(pose.joints[j]);
                    for a in 0..3 {
                        out[t][i * 3 * c.joints + 3 * j + a] = S::from_f64_lossy(q[a]);
                    }
                }
            }
        }
        Ok(out
            .into_iter()
            .map(|d| Tensor::from_vec(&[n, 3 * c.joints], d))
            .collect())
    }

    /// Inference on one frame with normalization layers in eval mode. `past`
    /// must hold `M` poses, oldest first; `None` runs the estimation branch
    /// alone with zero motion features and no forecast.
    pub fn predict(
        &self,
        depth: &DepthFrame,
        k: &CameraIntrinsics,
        past: Option<&[Pose3D]>,
    ) -> Result<NetworkOutput> {
        let pasts = past.map(|p| vec![p]);
        Ok(self
            .predict_batch(&[(depth, k)], pasts.as_deref())?
            .remove(0))
    }

    /// [`Network::predict`] over a batch; `pasts` has one entry per frame.
    pub fn predict_batch(
        &self,
        frames: &[(&DepthFrame, &CameraIntrinsics)],
        pasts: Option<&[&[Pose3D]]>,
    ) -> Result<Vec<NetworkOutput>> {
        if frames.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(p) = pasts {
            if p.len() != frames.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} histories for {} frames",
                    p.len(),
                    frames.len()
                )));
            }
        }
        let inputs = Inputs {
            xyz: self.xyz_tensor(frames)?,
            past: pasts.map(|p| self.past_tensors(p)).transpose()?,
            motion_keep: None,
        };
        let mut g = Graph::new();
        let out = self.forward(&mut g, &inputs, Mode::Eval, inputs.past.is_some())?;
        let c = &self.config;
        let est_spec = c.est_spec()?;
        let fc_spec = c.forecast_spec()?;
        let to_f32 =
            |t: &Tensor<S>| -> Vec<f32> { t.data().iter().map(|v| v.as_f64() as f32).collect() };
        let est = to_f32(g.value(out.estimate));
        let fc = out.forecast.map(|f| to_f32(g.value(f)));
        let n = frames.len();
        let est_len = est.len() / n;
        Ok((0..n)
            .map(|i| NetworkOutput {
                current: SPDHMaps::from_stacked(
                    est_spec,
                    c.joints,
                    &est[i * est_len..(i + 1) * est_len],
                ),
                future: match &fc {
                    Some(data) => {
                        let len = data.len() / n;
                        split_forecast(
                            &data[i * len..(i + 1) * len],
                            fc_spec,
                            c.joints,
                            c.future_count,
                        )
                    }
                    None => Vec::new(),
                },
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(c: &ModelConfig) -> Normalization {
        Normalization {
            xy_half_extent: 2.0,
            z_min: c.z_min,
            z_max: c.z_max,
        }
    }

    fn grad_config() -> ModelConfig {
        ModelConfig::gradcheck()
    }

    fn random_inputs(net: &Network<f64>, n: usize, seed: u64) -> Inputs<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &net.config;
        let mut t = |shape: &[usize]| {
            let len = shape.iter().product();
            Tensor::from_vec(
                shape,
                (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
        };
        Inputs {
            xyz: t(&[n, 3, c.input_height, c.input_width]),
            past: Some((0..c.past_count).map(|_| t(&[n, 3 * c.joints])).collect()),
            motion_keep: None,
        }
    }

    #[test]
    fn default_shapes() {
        let c = ModelConfig::default();
        let net = Network::<f32>::new(c.clone(), norm(&c), 0).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 3, 96, 128]));
        let v = net.visual_encode(&mut g, x, Mode::Eval).unwrap();
        assert_eq!(g.value(v).shape(), &[1, 64, 24, 32]);
        assert!(g.value(v).is_finite());
        let past = vec![Tensor::zeros(&[1, 15]); 10];
        let m = net.motion_encode(&mut g, &past, Mode::Eval).unwrap();
        assert_eq!(g.value(m).shape(), &[1, 32, 24, 32]);
        let f = net.fuse(&mut g, v, m).unwrap();
        assert_eq!(g.value(f).shape(), &[1, 96, 24, 32]);
        let e = net.estimate_head(&mut g, f, Mode::Eval);
        assert_eq!(g.value(e).shape(), &[1, 10, 96, 128]);
        let fc = net.forecast_head(&mut g, f, Mode::Eval);
        assert_eq!(g.value(fc).shape(), &[1, 40, 24, 32]);
        assert!(net.param_count("forecast.") < net.param_count("estimate."));
    }

    #[test]
    fn tiny_forecast_head_is_lighter() {
        let c = ModelConfig::tiny();
        let net = Network::<f32>::new(c.clone(), norm(&c), 0).unwrap();
        assert!(net.param_count("forecast.") < net.param_count("estimate."));
    }

    #[test]
    fn rejects_bad_shapes_and_configs() {
        let c = grad_config();
        let net = Network::<f64>::new(c.clone(), norm(&c), 0).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 3, 16, 32]));
        assert!(net.visual_encode(&mut g, x, Mode::Eval).is_err());
        assert!(net
            .motion_encode(&mut g, &[Tensor::zeros(&[1, 6])], Mode::Eval)
            .is_err());
        assert!(net
            .motion_encode(&mut g, &vec![Tensor::zeros(&[1, 5]); 3], Mode::Eval)
            .is_err());
        let a = g.input(Tensor::zeros(&[1, 8, 8, 8]));
        let b = g.input(Tensor::zeros(&[1, 4, 4, 8]));
        assert!(net.fuse(&mut g, a, b).is_err());
        let mut bad = grad_config();
        bad.input_height = 40;
        assert!(bad.validate().is_err());
        bad = grad_config();
        bad.past_count = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fusion_with_zero_motion_pads_visual_features() {
        let c = grad_config();
        let net = Network::<f64>::new(c.clone(), norm(&c), 0).unwrap();
        let inputs = random_inputs(&net, 1, 1);
        let mut g = Graph::new();
        let x = g.input(inputs.xyz.clone());
        let v = net.visual_encode(&mut g, x, Mode::Eval).unwrap();
        let z = g.input(Tensor::zeros(&[1, 4, 8, 8]));
        let f = net.fuse(&mut g, v, z).unwrap();
        let fv = g.value(f).data();
        let vv = g.value(v).data();
        assert_eq!(&fv[..vv.len()], vv);
        assert!(fv[vv.len()..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn visual_branch_sees_single_pixel_changes() {
        let c = grad_config();
        let net = Network::<f64>::new(c.clone(), norm(&c), 0).unwrap();
        let inputs = random_inputs(&net, 1, 2);
        let run = |xyz: &Tensor<f64>| {
            let mut g = Graph::new();
            let x = g.input(xyz.clone());
            let v = net.visual_encode(&mut g, x, Mode::Eval).unwrap();
            g.value(v).clone()
        };
        let mut poked = inputs.xyz.clone();
        poked.data_mut()[3 * 32 + 5] += 0.5;
        assert_ne!(run(&inputs.xyz), run(&poked));
    }

    #[test]
    fn motion_branch_is_order_sensitive() {
        let c = grad_config();
        let net = Network::<f64>::new(c.clone(), norm(&c), 0).unwrap();
        let inputs = random_inputs(&net, 1, 3);
        let run = |past: &[Tensor<f64>]| {
            let mut g = Graph::new();
            let m = net.motion_encode(&mut g, past, Mode::Eval).unwrap();
            g.value(m).clone()
        };
        let past = inputs.past.unwrap();
        let mut reversed = past.clone();
        reversed.reverse();
        assert_ne!(run(&past), run(&reversed));
        // A constant history differs from a moving one that ends in the same pose.
        let still = vec![past[2].clone(); 3];
        assert_ne!(run(&past), run(&still));
    }

    #[test]
    fn dropped_motion_matches_estimation_only() {
        let c = grad_config();
        let net = Network::<f64>::new(c.clone(), norm(&c), 8).unwrap();
        let mut inputs = random_inputs(&net, 2, 9);
        let run = |inputs: &Inputs<f64>| {
            let mut g = Graph::new();
            let o = net.forward(&mut g, inputs, Mode::Eval, false).unwrap();
            g.value(o.estimate).clone()
        };
        let full = run(&inputs);
        inputs.motion_keep = Some(vec![true, false]);
        let dropped = run(&inputs);
        let alone = run(&Inputs {
            xyz: inputs.xyz.clone(),
            past: None,
            motion_keep: None,
        });
        let half = full.numel() / 2;
        assert_eq!(&dropped.data()[..half], &full.data()[..half]);
        assert_eq!(&dropped.data()[half..], &alone.data()[half..]);
    }

    #[test]
    fn forecast_split_round_trips() {
        let c = grad_config();
        let spec = c.forecast_spec().unwrap();
        let data: Vec<f32> = (0..2 * 2 * 2 * spec.plane()).map(|i| i as f32).collect();
        let maps = split_forecast(&data, spec, 2, 2);
        assert_eq!(maps.len(), 2);
        assert_eq!(maps[1].uv_map(0)[0], (2 * 2 * spec.plane()) as f32);
        assert_eq!(maps[0].uz_map(1)[0], (3 * spec.plane()) as f32);
        assert_eq!(merge_forecast(&maps), data);
    }

    #[test]
    fn eval_inference_is_deterministic() {
        let c = grad_config();
        let net = Network::<f32>::new(c.clone(), norm(&c), 4).unwrap();
        let k = CameraIntrinsics::new(30.0, 30.0, 16.0, 16.0, 32, 32).unwrap();
        let mut vals = vec![0.0f32; 32 * 32];
        for (i, v) in vals.iter_mut().enumerate() {
            if i % 7 != 0 {
                *v = 1.0 + (i % 13) as f32 * 0.05;
            }
        }
        let d = DepthFrame::new(32, 32, vals, 0.0).unwrap();
        let past = vec![Pose3D::new(vec![[0.0, 0.0, 2.0], [0.1, 0.1, 2.1]], 0.0); 3];
        let a = net.predict(&d, &k, Some(&past)).unwrap();
        let b = net.predict(&d, &k, Some(&past)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.future.len(), 2);
        assert!(a.current.uv.iter().all(|v| v.is_finite()));
        let est_only = net.predict(&d, &k, None).unwrap();
        assert!(est_only.future.is_empty());
        let batch = net
            .predict_batch(&[(&d, &k), (&d, &k)], Some(&[&past[..], &past[..]]))
            .unwrap();
        assert_eq!(batch.len(), 2);
        assert_eq!(batch[1].future.len(), 2);
    }

    #[test]
    fn every_head_parameter_receives_gradient() {
        let c = grad_config();
        let mut net = Network::<f64>::new(c.clone(), norm(&c), 5).unwrap();
        // Zero-initialized output layers would block gradient to the rest of the heads.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for name in [
            "estimate.uv.weight",
            "estimate.uz.weight",
            "forecast.out.weight",
        ] {
            let id = net.store.find(name).unwrap();
            for v in net.store.get_mut(id).data_mut() {
                *v = rand::Rng::random_range(&mut rng, -0.1..0.1);
            }
        }
        let inputs = random_inputs(&net, 2, 6);
        let mut g = Graph::new();
        let out = net.forward(&mut g, &inputs, Mode::Train, true).unwrap();
        let fc = out.forecast.unwrap();
        let a = g.sum(out.estimate);
        let b = g.sum(fc);
        let sq_a = g.mul(a, a);
        let sq_b = g.mul(b, b);
        let total = g.add(sq_a, sq_b);
        let grads = g.backward(total);
        for id in net.store.param_ids() {
            let name = &net.store.entry(id).name;
            if name.starts_with("estimate.") || name.starts_with("forecast.") {
                let gr = grads
                    .get(id)
                    .unwrap_or_else(|| panic!("{name} has no gradient"));
                assert!(
                    gr.data().iter().any(|&v| v != 0.0),
                    "{name} gradient is zero"
                );
            }
        }
    }
}
