//! Checkpoint container: the magic `NWCK1`, a little-endian `u32` header
//! length, a JSON header, then every tensor as little-endian `f32`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nowcast_nn::{EntryKind, Tensor};
use serde::{Deserialize, Serialize};

use super::{ModelConfig, Network};
use crate::armsim::Normalization;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"NWCK1";

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    kind: String,
    shape: Vec<usize>,
    /// Offset into the blob section, in elements.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    normalization: Normalization,
    seed: u64,
    meta: serde_json::Value,
    tensors: Vec<TensorRecord>,
}

/// A loaded network with the free-form metadata stored next to it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub meta: serde_json::Value,
}

fn kind_name(k: EntryKind) -> &'static str {
    match k {
        EntryKind::Param => "param",
        EntryKind::Buffer => "buffer",
    }
}

pub fn encode_checkpoint(net: &Network<f32>, meta: &serde_json::Value) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut offset = 0;
    for e in net.store.entries() {
        tensors.push(TensorRecord {
            name: e.name.clone(),
            kind: kind_name(e.kind).into(),
            shape: e.value.shape().to_vec(),
            offset,
        });
        offset += e.value.numel();
    }
    let header = Header {
        model: net.config.clone(),
        normalization: net.normalization,
        seed: net.seed,
        meta: meta.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("serializable header");
    let mut out = Vec::with_capacity(9 + json.len() + 4 * offset);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for e in net.store.entries() {
        for v in e.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let err = |offset: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < 9 || &bytes[..5] != CHECKPOINT_MAGIC {
        return Err(err(0, "not an NWCK1 checkpoint".into()));
    }
    let len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let body = 9 + len;
    if bytes.len() < body {
        return Err(err(bytes.len(), "truncated header".into()));
    }
    let header: Header =
        serde_json::from_slice(&bytes[9..body]).map_err(|e| err(9, format!("bad header: {e}")))?;
    let blobs = &bytes[body..];
    let mut net = Network::<f32>::new(header.model, header.normalization, header.seed)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if header.tensors.len() != net.store.len() {
        return Err(Error::Config(format!(
            "{}: {} tensors stored, architecture has {}",
            path.display(),
            header.tensors.len(),
            net.store.len()
        )));
    }
    let mut expected_end = 0;
    for (rec, id) in header
        .tensors
        .iter()
        .zip(net.store.ids().collect::<Vec<_>>())
    {
        let entry = net.store.entry(id);
        if entry.name != rec.name
            || kind_name(entry.kind) != rec.kind
            || entry.value.shape() != rec.shape.as_slice()
        {
            return Err(Error::Config(format!(
                "{}: tensor {} {:?} does not match architecture tensor {} {:?}",
                path.display(),
                rec.name,
                rec.shape,
                entry.name,
                entry.value.shape()
            )));
        }
        let n = entry.value.numel();
        let start = 4 * rec.offset;
        let end = start + 4 * n;
        if end > blobs.len() {
            return Err(err(
                body + blobs.len(),
                format!("truncated data for {}", rec.name),
            ));
        }
        let data = blobs[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        *net.store.get_mut(id) = Tensor::from_vec(&rec.shape, data);
        expected_end = expected_end.max(end);
    }
    if expected_end != blobs.len() {
        return Err(err(
            body + expected_end,
            "trailing bytes after tensor data".into(),
        ));
    }
    Ok(Checkpoint {
        network: net,
        meta: header.meta,
    })
}

/// Write atomically: the file appears under `path` only once complete.
pub fn save_checkpoint(path: &Path, net: &Network<f32>, meta: &serde_json::Value) -> Result<()> {
    let bytes = encode_checkpoint(net, meta);
    let mut tmp = PathBuf::from(path);
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".tmp");
    tmp.set_file_name(name);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(seed: u64) -> Network<f32> {
        let c = ModelConfig::tiny();
        let n = Normalization {
            xy_half_extent: 1.5,
            z_min: c.z_min,
            z_max: c.z_max,
        };
        Network::new(c, n, seed).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut a = net(1);
        // Perturb a buffer so running statistics are covered too.
        let id = a.store.find("visual.stem.bn.running_var").unwrap();
        a.store.get_mut(id).data_mut()[0] = 0.123;
        let meta = serde_json::json!({"epoch": 3});
        let bytes = encode_checkpoint(&a, &meta);
        assert_eq!(&bytes[..5], b"NWCK1");
        let back = decode_checkpoint(&bytes, Path::new("c.nwck")).unwrap();
        assert_eq!(back.meta, meta);
        assert_eq!(back.network.store, a.store);
        assert_eq!(encode_checkpoint(&back.network, &meta), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_checkpoint(&net(2), &serde_json::Value::Null);
        let p = Path::new("c.nwck");
        assert!(decode_checkpoint(&bytes[..bytes.len() - 4], p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad, p).is_err());
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 4]);
        assert!(decode_checkpoint(&extra, p).is_err());
    }

    #[test]
    fn atomic_save() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("best.nwck");
        save_checkpoint(&path, &net(3), &serde_json::Value::Null).unwrap();
        assert!(path.exists());
        assert!(!dir.path().join("best.nwck.tmp").exists());
        assert_eq!(load_checkpoint(&path).unwrap().network.store, net(3).store);
    }
}
