//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes   "C3STCKPT"
//! version    u32
//! header     u64 length + UTF-8 JSON (architecture, input normalization,
//!            training config, tensor table, provenance)
//! weights    u64 length + f32 values, tensors in table order
//! curve      u64 length + UTF-8 CSV (epoch,train_mse,val_mse)
//! digest     32 bytes  SHA-256 of everything above
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::arch::{ArchitectureSpec, LayerSpec};
use super::{EpochRecord, InputNorm, ModelCheckpoint, TrainConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"C3STCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// One weight or bias tensor in the blob.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    architecture: ArchitectureSpec,
    input_norm: InputNorm,
    train_config: TrainConfig,
    tensors: Vec<TensorEntry>,
    provenance: BTreeMap<String, String>,
}

/// Tensor table implied by an architecture, in parameter order.
pub fn tensor_table(arch: &ArchitectureSpec) -> Result<Vec<TensorEntry>> {
    let mut out = Vec::new();
    for slot in arch.param_slots()? {
        let (wshape, bshape) = match arch.layers[slot.layer] {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (vec![out_channels, in_channels, kernel], vec![out_channels]),
            LayerSpec::Dense { inputs, outputs } => (vec![outputs, inputs], vec![outputs]),
            _ => unreachable!("only conv and dense layers own parameters"),
        };
        out.push(TensorEntry {
            name: format!("layer{}.weight", slot.layer),
            shape: wshape,
            len: slot.weight_len,
        });
        out.push(TensorEntry {
            name: format!("layer{}.bias", slot.layer),
            shape: bshape,
            len: slot.bias_len,
        });
    }
    Ok(out)
}

fn curve_csv(curve: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_mse,val_mse\n");
    for r in curve {
        s.push_str(&format!("{},{},{}\n", r.epoch, r.train_mse, r.val_mse));
    }
    s
}

fn parse_curve(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some("epoch,train_mse,val_mse") {
        return Err(Error::Checkpoint(
            "training curve has an unexpected header".into(),
        ));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Checkpoint(format!("bad training curve row {line:?}"));
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_mse: f[1].parse().map_err(|_| bad())?,
                val_mse: f[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

fn put_block(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(bytes);
}

pub fn encode(ckpt: &ModelCheckpoint) -> Result<Vec<u8>> {
    let tensors = tensor_table(&ckpt.architecture)?;
    let expected: usize = tensors.iter().map(|t| t.len).sum();
    if expected != ckpt.params.len() {
        return Err(Error::Checkpoint(format!(
            "architecture needs {expected} parameters, checkpoint has {}",
            ckpt.params.len()
        )));
    }
    let header = Header {
        architecture: ckpt.architecture.clone(),
        input_norm: ckpt.input_norm.clone(),
        train_config: ckpt.train_config.clone(),
        tensors,
        provenance: ckpt.provenance.clone(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("cannot encode header: {e}")))?;

    let mut out = Vec::with_capacity(64 + header_json.len() + 4 * ckpt.params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_block(&mut out, &header_json);
    let blob: Vec<u8> = ckpt
        .params
        .iter()
        .flat_map(|&w| (w as f32).to_le_bytes())
        .collect();
    put_block(&mut out, &blob);
    put_block(&mut out, curve_csv(&ckpt.curve).as_bytes());
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "file truncated while reading {what}"
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn block(&mut self, what: &str) -> Result<&'a [u8]> {
        let len = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        let len = usize::try_from(len)
            .map_err(|_| Error::Checkpoint(format!("{what} length {len} is too large")))?;
        self.take(len, what)
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelCheckpoint> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint(
            "not a checkpoint file (bad magic bytes)".into(),
        ));
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    if bytes.len() < 32 + r.pos {
        return Err(Error::Checkpoint("file truncated before digest".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint(format!(
            "checksum mismatch; file is corrupt (format version {version})"
        )));
    }
    let mut r = Reader {
        bytes: body,
        pos: r.pos,
    };
    let header: Header = serde_json::from_slice(r.block("header")?)
        .map_err(|e| Error::Checkpoint(format!("bad header JSON: {e}")))?;
    let blob = r.block("weights")?;
    let curve_text = std::str::from_utf8(r.block("training curve")?)
        .map_err(|_| Error::Checkpoint("training curve is not UTF-8".into()))?;
    if r.pos != body.len() {
        return Err(Error::Checkpoint(
            "trailing bytes after training curve".into(),
        ));
    }

    let expected = tensor_table(&header.architecture)
        .map_err(|e| Error::Checkpoint(format!("invalid architecture: {e}")))?;
    if expected != header.tensors {
        return Err(Error::Checkpoint(
            "tensor table does not match the architecture".into(),
        ));
    }
    let n: usize = expected.iter().map(|t| t.len).sum();
    if blob.len() != 4 * n {
        return Err(Error::Checkpoint(format!(
            "weight blob holds {} bytes, architecture needs {}",
            blob.len(),
            4 * n
        )));
    }
    let params = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let input_channels = header.architecture.input_channels;
    if header.input_norm.mean.len() != input_channels
        || header.input_norm.std.len() != input_channels
    {
        return Err(Error::Checkpoint(
            "input normalization does not match the input channels".into(),
        ));
    }
    Ok(ModelCheckpoint {
        format_version: version,
        architecture: header.architecture,
        input_norm: header.input_norm,
        params,
        train_config: header.train_config,
        curve: parse_curve(curve_text)?,
        provenance: header.provenance,
    })
}

pub fn save(ckpt: &ModelCheckpoint, path: &Path) -> Result<()> {
    let bytes = encode(ckpt)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelCheckpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}
