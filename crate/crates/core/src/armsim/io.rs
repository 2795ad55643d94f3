use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::dataset::SimConfig;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthFrame, MAX_RANGE};
use crate::spdh::Pose3D;

pub const DPT_MAGIC: &[u8; 4] = b"DPT1";
const DPT_HEADER: usize = 16;
pub const MANIFEST_VERSION: u32 = 1;

pub fn encode_dpt(d: &DepthFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(DPT_HEADER + 4 * d.values.len());
    out.extend_from_slice(DPT_MAGIC);
    out.extend_from_slice(&(d.height as u32).to_le_bytes());
    out.extend_from_slice(&(d.width as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in &d.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parse a `.dpt` buffer; `path` is only used for error reporting.
pub fn decode_dpt(bytes: &[u8], path: &Path) -> Result<DepthFrame> {
    let err = |offset: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < DPT_HEADER {
        return Err(err(
            bytes.len(),
            format!("truncated header ({} bytes)", bytes.len()),
        ));
    }
    if &bytes[..4] != DPT_MAGIC {
        return Err(err(0, "bad magic, expected DPT1".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (height, width) = (word(4), word(8));
    if height == 0 || width == 0 {
        return Err(err(4, format!("empty frame {height}x{width}")));
    }
    let expected = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(DPT_HEADER))
        .ok_or_else(|| err(4, "frame dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(err(
            bytes.len().min(expected),
            format!(
                "expected {expected} bytes for {height}x{width}, found {}",
                bytes.len()
            ),
        ));
    }
    let mut values = Vec::with_capacity(height * width);
    for (i, chunk) in bytes[DPT_HEADER..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !(v == 0.0 || (v > 0.0 && v <= MAX_RANGE)) {
            return Err(err(
                DPT_HEADER + 4 * i,
                format!("depth value {v} out of range"),
            ));
        }
        values.push(v);
    }
    DepthFrame::new(width, height, values, 0.0)
}

pub fn write_dpt(path: &Path, d: &DepthFrame) -> Result<()> {
    fs::write(path, encode_dpt(d)).map_err(|e| Error::io(path, e))
}

pub fn read_dpt(path: &Path) -> Result<DepthFrame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dpt(&bytes, path)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRecord {
    frame: usize,
    timestamp_s: f64,
    joints: Vec<[f64; 3]>,
    valid: Vec<bool>,
}

fn json_error(path: &Path, text: &str, e: serde_json::Error) -> Error {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(e.line().saturating_sub(1))
        .map(str::len)
        .sum();
    Error::Parse {
        path: path.to_path_buf(),
        offset: (line_start + e.column().saturating_sub(1)) as u64,
        message: e.to_string(),
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| json_error(path, &text, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_poses(path: &Path, poses: &[Pose3D]) -> Result<()> {
    let records: Vec<PoseRecord> = poses
        .iter()
        .enumerate()
        .map(|(frame, p)| PoseRecord {
            frame,
            timestamp_s: p.timestamp,
            joints: p.joints.clone(),
            valid: p.valid.clone(),
        })
        .collect();
    write_json(path, &records)
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose3D>> {
    let records: Vec<PoseRecord> = read_json(path)?;
    let bad = |message: String| Error::Parse {
        path: path.to_path_buf(),
        offset: 0,
        message,
    };
    let mut out = Vec::with_capacity(records.len());
    for (i, r) in records.into_iter().enumerate() {
        if r.frame != i {
            return Err(bad(format!("record {i} has frame {}", r.frame)));
        }
        if r.joints.len() != r.valid.len() || r.joints.is_empty() {
            return Err(bad(format!(
                "record {i} has mismatched joints/valid lengths"
            )));
        }
        out.push(Pose3D {
            joints: r.joints,
            valid: r.valid,
            timestamp: r.timestamp_s,
        });
    }
    Ok(out)
}

/// Fixed affine map of camera coordinates to roughly unit range: `x, y` by
/// the scene half-extent, `z` from `[z_min, z_max]` to `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub xy_half_extent: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Normalization {
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        [
            p[0] / self.xy_half_extent,
            p[1] / self.xy_half_extent,
            2.0 * (p[2] - self.z_min) / (self.z_max - self.z_min) - 1.0,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub frame_rate: f64,
    pub n_sequences: usize,
    pub frames_per_sequence: Vec<usize>,
    pub intrinsics_default: CameraIntrinsics,
    pub intrinsics: Vec<CameraIntrinsics>,
    pub z_min: f64,
    pub z_max: f64,
    pub joints: usize,
    pub joint_names: Vec<String>,
    pub normalization: Normalization,
    pub config: SimConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            "all" => Ok(Self::All),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

impl Manifest {
    /// Sequence indices of a split. The last 20% of sequences are test; the
    /// last 10% of the remainder (at least one when two or more remain) are
    /// validation.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        let n = self.n_sequences;
        let n_test = if n >= 2 {
            ((n as f64 * 0.2).round() as usize).max(1)
        } else {
            0
        };
        let n_trainval = n - n_test;
        let n_val = if n_trainval >= 2 {
            ((n_trainval as f64 * 0.1).round() as usize).max(1)
        } else {
            0
        };
        let n_train = n_trainval - n_val;
        match split {
            Split::Train => (0..n_train).collect(),
            Split::Val => (n_train..n_trainval).collect(),
            Split::Test => (n_trainval..n).collect(),
            Split::All => (0..n).collect(),
        }
    }
}

/// Poses at a fixed rate, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence {
    pub poses: Vec<Pose3D>,
    pub rate: f64,
}

/// Which past and future poses accompany each frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSpec {
    pub past_count: usize,
    pub past_rate: f64,
    pub future_offsets: Vec<f64>,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            past_count: 10,
            past_rate: 10.0,
            future_offsets: vec![0.5, 1.0, 1.5, 2.0],
        }
    }
}

fn whole_frames(seconds: f64, frame_rate: f64, what: &str) -> Result<usize> {
    let f = seconds * frame_rate;
    if !(f >= 0.0) || (f - f.round()).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "{what} {seconds} s is not a whole number of frames at {frame_rate} Hz"
        )));
    }
    Ok(f.round() as usize)
}

impl WindowSpec {
    /// Frames between consecutive past poses.
    pub fn past_stride(&self, frame_rate: f64) -> Result<usize> {
        if self.past_count == 0 {
            return Ok(0);
        }
        if !(self.past_rate > 0.0) {
            return Err(Error::Config("past rate must be positive".into()));
        }
        let s = whole_frames(1.0 / self.past_rate, frame_rate, "past spacing")?;
        if s == 0 {
            return Err(Error::Config("past rate exceeds the frame rate".into()));
        }
        Ok(s)
    }

    pub fn future_frames(&self, frame_rate: f64) -> Result<Vec<usize>> {
        self.future_offsets
            .iter()
            .map(|&o| {
                let f = whole_frames(o, frame_rate, "future offset")?;
                if f == 0 {
                    return Err(Error::Config("future offsets must be positive".into()));
                }
                Ok(f)
            })
            .collect()
    }

    /// Frames of history needed before the current frame.
    pub fn history_frames(&self, frame_rate: f64) -> Result<usize> {
        Ok(self.past_count * self.past_stride(frame_rate)?)
    }
}

/// One training unit.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSample {
    pub sequence: usize,
    pub frame: usize,
    pub depth: DepthFrame,
    pub intrinsics: CameraIntrinsics,
    pub past: PoseSequence,
    pub current: Pose3D,
    pub future: Vec<Pose3D>,
}

/// A fully loaded sequence.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub index: usize,
    pub intrinsics: CameraIntrinsics,
    pub frame_rate: f64,
    pub depth: Vec<DepthFrame>,
    pub poses: Vec<Pose3D>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Current-frame indices with full history and future.
    pub fn window_frames(&self, w: &WindowSpec) -> Result<std::ops::Range<usize>> {
        let hist = w.history_frames(self.frame_rate)?;
        let fut = w
            .future_frames(self.frame_rate)?
            .into_iter()
            .max()
            .unwrap_or(0);
        let end = self.len().saturating_sub(fut);
        Ok(hist.min(end)..end)
    }

    pub fn sample(&self, frame: usize, w: &WindowSpec) -> Result<DatasetSample> {
        let stride = w.past_stride(self.frame_rate)?;
        let fut = w.future_frames(self.frame_rate)?;
        if !self.window_frames(w)?.contains(&frame) {
            return Err(Error::InvalidArgument(format!(
                "frame {frame} of sequence {} lacks history or future",
                self.index
            )));
        }
        let past = (1..=w.past_count)
            .rev()
            .map(|k| self.poses[frame - k * stride].clone())
            .collect();
        let mut depth = self.depth[frame].clone();
        depth.timestamp = self.poses[frame].timestamp;
        Ok(DatasetSample {
            sequence: self.index,
            frame,
            depth,
            intrinsics: self.intrinsics,
            past: PoseSequence {
                poses: past,
                rate: w.past_rate,
            },
            current: self.poses[frame].clone(),
            future: fut.iter().map(|f| self.poses[frame + f].clone()).collect(),
        })
    }

    pub fn samples(&self, w: &WindowSpec) -> Result<Vec<DatasetSample>> {
        self.window_frames(w)?.map(|n| self.sample(n, w)).collect()
    }
}

/// A dataset directory with its manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    manifest: Manifest,
}

pub(crate) fn sequence_dir(root: &Path, k: usize) -> PathBuf {
    root.join(format!("seq_{k:03}"))
}

pub(crate) fn depth_file(seq_dir: &Path, n: usize) -> PathBuf {
    seq_dir.join(format!("depth_{n:05}.dpt"))
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let manifest: Manifest = read_json(&root.join("manifest.json"))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Config(format!(
                "unsupported dataset version {}",
                manifest.version
            )));
        }
        if manifest.intrinsics.len() != manifest.n_sequences
            || manifest.frames_per_sequence.len() != manifest.n_sequences
        {
            return Err(Error::Config("manifest sequence tables disagree".into()));
        }
        Ok(Self { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn load_sequence(&self, k: usize) -> Result<Sequence> {
        if k >= self.manifest.n_sequences {
            return Err(Error::InvalidArgument(format!("no sequence {k}")));
        }
        let dir = sequence_dir(&self.root, k);
        let poses_path = dir.join("poses.json");
        let poses = read_poses(&poses_path)?;
        let n = self.manifest.frames_per_sequence[k];
        if poses.len() != n {
            return Err(Error::Parse {
                path: poses_path,
                offset: 0,
                message: format!("{} poses, manifest lists {n} frames", poses.len()),
            });
        }
        if let Some(p) = poses.iter().find(|p| p.len() != self.manifest.joints) {
            return Err(Error::Config(format!(
                "sequence {k} has {} joints, manifest lists {}",
                p.len(),
                self.manifest.joints
            )));
        }
        let k_seq = self.manifest.intrinsics[k];
        let mut depth = Vec::with_capacity(n);
        for (i, pose) in poses.iter().enumerate() {
            let path = depth_file(&dir, i);
            let mut d = read_dpt(&path)?;
            if !d.matches(&k_seq) {
                return Err(Error::Parse {
                    path,
                    offset: 4,
                    message: format!(
                        "{}x{} frame for a {}x{} sensor",
                        d.height, d.width, k_seq.height, k_seq.width
                    ),
                });
            }
            d.timestamp = pose.timestamp;
            depth.push(d);
        }
        Ok(Sequence {
            index: k,
            intrinsics: k_seq,
            frame_rate: self.manifest.frame_rate,
            depth,
            poses,
        })
    }

    /// Sliding-window samples of a split, sequence by sequence, in frame order.
    pub fn samples(
        &self,
        split: Split,
        w: &WindowSpec,
    ) -> impl Iterator<Item = Result<DatasetSample>> + '_ {
        let w = w.clone();
        self.manifest
            .split_indices(split)
            .into_iter()
            .flat_map(
                move |k| match self.load_sequence(k).and_then(|s| s.samples(&w)) {
                    Ok(v) => v.into_iter().map(Ok).collect::<Vec<_>>(),
                    Err(e) => vec![Err(e)],
                },
            )
    }
}

/// Open a dataset and stream the samples of one split.
pub fn load_samples(
    root: impl AsRef<Path>,
    split: Split,
    w: &WindowSpec,
) -> Result<Vec<DatasetSample>> {
    let ds = Dataset::open(root)?;
    ds.samples(split, w).collect()
}
