//! One TOML file holding every setting of a run. Missing tables and keys
//! take their defaults; command-line flags are applied on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::armsim::{Manifest, SimConfig, WindowSpec};
use crate::augment::AugmentParams;
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_THRESHOLDS_CM;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub thresholds_cm: Vec<f64>,
    /// Threshold plotted in the horizon chart.
    pub chart_threshold_cm: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            thresholds_cm: DEFAULT_THRESHOLDS_CM.to_vec(),
            chart_threshold_cm: 10.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub sim: SimConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentParams,
    pub window: WindowSpec,
    pub eval: EvalSettings,
}

impl RunConfig {
    /// 96x128 sensor and the default network.
    pub fn desk() -> Self {
        Self::default()
    }

    /// 48x64 sensor and the small network.
    pub fn tiny() -> Self {
        Self {
            sim: SimConfig::tiny(),
            model: ModelConfig::tiny(),
            ..Self::default()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!(
                "unknown profile {other:?}; expected desk or tiny"
            ))),
        }
    }

    /// Parse TOML on top of `base`: keys present in the text replace the
    /// profile's values, the rest keep them.
    pub fn from_toml(text: &str, base: &Self, path: &Path) -> Result<Self> {
        let parse_err = |offset: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            offset: offset as u64,
            message,
        };
        let overlay: toml::Table = toml::from_str(text)
            .map_err(|e| parse_err(e.span().map_or(0, |s| s.start), e.message().to_string()))?;
        let mut merged = toml::Table::try_from(base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, overlay);
        let cfg: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| parse_err(0, e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, base: &Self) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, base, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("serializable config")
    }

    /// Validate every part and the constraints between them.
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.augment.validate()?;
        self.window.past_stride(self.sim.frame_rate)?;
        self.window.future_frames(self.sim.frame_rate)?;
        let (m, s, w) = (&self.model, &self.sim, &self.window);
        if w.past_count != m.past_count || w.future_offsets.len() != m.future_count {
            return Err(Error::Config(format!(
                "window has {} past and {} future poses, model expects {} and {}",
                w.past_count,
                w.future_offsets.len(),
                m.past_count,
                m.future_count
            )));
        }
        if (m.input_height, m.input_width) != (s.height, s.width) {
            return Err(Error::Config(format!(
                "model input {}x{} differs from the {}x{} sensor",
                m.input_height, m.input_width, s.height, s.width
            )));
        }
        if m.z_min > s.z_min || m.z_max < s.z_max {
            return Err(Error::Config(format!(
                "heatmap depth range [{}, {}] does not cover the scene range [{}, {}]",
                m.z_min, m.z_max, s.z_min, s.z_max
            )));
        }
        if m.joints != s.link_lengths.len() + 1 {
            return Err(Error::Config(format!(
                "model has {} joints, a {}-link arm has {}",
                m.joints,
                s.link_lengths.len(),
                s.link_lengths.len() + 1
            )));
        }
        let t = &self.eval.thresholds_cm;
        if t.is_empty() || t.iter().any(|v| !(*v > 0.0)) || t.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::Config(
                "thresholds must be positive and increasing".into(),
            ));
        }
        Ok(())
    }

    /// Check that a dataset on disk can feed this model.
    pub fn check_dataset(&self, manifest: &Manifest) -> Result<()> {
        check_model_against(&self.model, manifest)?;
        self.window.past_stride(manifest.frame_rate)?;
        self.window.future_frames(manifest.frame_rate)?;
        Ok(())
    }
}

/// Joint count, sensor size and depth range of a model against a dataset.
pub fn check_model_against(m: &ModelConfig, manifest: &Manifest) -> Result<()> {
    if m.joints != manifest.joints {
        return Err(Error::Config(format!(
            "model has {} joints, dataset has {}",
            m.joints, manifest.joints
        )));
    }
    let k = &manifest.intrinsics_default;
    if (m.input_height, m.input_width) != (k.height, k.width) {
        return Err(Error::Config(format!(
            "model input {}x{} differs from the dataset's {}x{} frames",
            m.input_height, m.input_width, k.height, k.width
        )));
    }
    if m.z_min > manifest.z_min || m.z_max < manifest.z_max {
        return Err(Error::Config(format!(
            "heatmap depth range [{}, {}] does not cover the dataset range [{}, {}]",
            m.z_min, m.z_max, manifest.z_min, manifest.z_max
        )));
    }
    Ok(())
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        RunConfig::desk().validate().unwrap();
        RunConfig::tiny().validate().unwrap();
        assert!(RunConfig::profile("huge").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::tiny();
        let back =
            RunConfig::from_toml(&c.to_toml(), &RunConfig::desk(), Path::new("c.toml")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_files_overlay_the_profile() {
        let text = "seed = 9\n[train]\nepochs = 3\n[model]\nbackbone_channels = 8\n";
        let c = RunConfig::from_toml(text, &RunConfig::tiny(), Path::new("c.toml")).unwrap();
        assert_eq!(
            (c.seed, c.train.epochs, c.model.backbone_channels),
            (9, 3, 8)
        );
        assert_eq!(c.model.input_width, 64);
        assert_eq!(c.train.batch_size, 16);
    }

    #[test]
    fn cross_field_errors() {
        let p = Path::new("c.toml");
        let tiny = RunConfig::tiny();
        assert!(matches!(
            RunConfig::from_toml("[window]\npast_count = 5\n", &tiny, p),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_toml("[model]\ninput_width = 128\n", &tiny, p),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_toml("[model]\nz_max = 3.0\n", &tiny, p),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_toml("bogus = 1\n", &tiny, p),
            Err(Error::Parse { .. })
        ));
        match RunConfig::from_toml("seed = \n", &tiny, p) {
            Err(Error::Parse { offset, .. }) => assert!(offset > 0),
            other => panic!("{other:?}"),
        }
    }
}
