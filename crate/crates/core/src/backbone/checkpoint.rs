use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::autograd::{Matrix, ParamStore};
use crate::{Error, Result};

/// File prefix; the trailing digit is the format version.
pub const CHECKPOINT_MAGIC: &[u8; 16] = b"MTLAFFECT-CKPT-1";

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    config: serde_json::Value,
    params: Vec<(String, usize, usize)>,
}

/// A named parameter set plus the record needed to rebuild its model.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(kind: &str, config: &impl Serialize, params: &ParamStore) -> Result<Self> {
        Ok(Self {
            kind: kind.to_string(),
            config: serde_json::to_value(config)
                .map_err(|e| Error::Checkpoint(format!("config not serializable: {e}")))?,
            params: params.clone(),
        })
    }

    pub fn expect_kind(&self, kind: &str) -> Result<&Self> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(self)
    }

    pub fn config<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.config.clone())
            .map_err(|e| Error::Checkpoint(format!("bad config record: {e}")))
    }
}

/// Layout: magic, u64 LE header length, JSON header, then every parameter's
/// values as f64 LE in header order.
pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let header = Header {
        kind: ckpt.kind.clone(),
        config: ckpt.config.clone(),
        params: ckpt
            .params
            .iter()
            .map(|(n, m)| (n.to_string(), m.rows(), m.cols()))
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(32 + json.len() + 8 * ckpt.params.num_scalars());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, m) in ckpt.params.iter() {
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    let rest = bytes
        .strip_prefix(CHECKPOINT_MAGIC.as_slice())
        .ok_or_else(|| bad("not a checkpoint (magic mismatch)"))?;
    if rest.len() < 8 {
        return Err(bad("truncated header"));
    }
    let (len, rest) = rest.split_at(8);
    let len = u64::from_le_bytes(len.try_into().expect("8 bytes")) as usize;
    if rest.len() < len {
        return Err(bad("truncated header"));
    }
    let (json, mut data) = rest.split_at(len);
    let header: Header =
        serde_json::from_slice(json).map_err(|e| bad(&format!("bad header: {e}")))?;
    let mut params = ParamStore::new();
    for (name, rows, cols) in header.params {
        let n = rows * cols;
        if data.len() < 8 * n {
            return Err(bad("truncated parameter data"));
        }
        let (chunk, tail) = data.split_at(8 * n);
        let values = chunk
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        params.add(name, Matrix::from_vec(rows, cols, values));
        data = tail;
    }
    if !data.is_empty() {
        return Err(bad("trailing bytes after parameter data"));
    }
    Ok(Checkpoint {
        kind: header.kind,
        config: header.config,
        params,
    })
}
