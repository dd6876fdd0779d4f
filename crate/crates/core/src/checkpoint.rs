//! Weight archive format shared by every trained model.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"CMIWGT01"              8-byte magic
//! u64                      header length in bytes
//! header                   UTF-8 JSON: {"kind", "config", "tensors": [{"name","rows","cols"}]}
//! f32 × Σ rows·cols        tensor data in header order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamSet, Tensor};

const MAGIC: &[u8; 8] = b"CMIWGT01";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

pub fn save(path: &Path, kind: &str, config: &impl Serialize, params: &ParamSet) -> Result<()> {
    let header = Header {
        kind: kind.to_string(),
        config: serde_json::to_value(config)?,
        tensors: params
            .iter()
            .map(|(_, name, t)| TensorEntry { name: name.to_string(), rows: t.rows, cols: t.cols })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&(header.len() as u64).to_le_bytes())?;
    f.write_all(&header)?;
    for (_, _, t) in params.iter() {
        for v in &t.data {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Raw archive contents: the embedded config and the tensors by name, in order.
pub struct Archive {
    pub config: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Archive {
    pub fn config<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.config.clone())?)
    }

    /// Copies the stored tensors into `params`, checking names and shapes.
    pub fn restore_into(&self, params: &mut ParamSet) -> Result<()> {
        if self.tensors.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "archive holds {} tensors, model expects {}",
                self.tensors.len(),
                params.len()
            )));
        }
        let ids: Vec<_> = params.iter().map(|(id, name, t)| (id, name.to_string(), t.shape())).collect();
        for ((id, name, shape), (stored_name, t)) in ids.into_iter().zip(&self.tensors) {
            if name != *stored_name || shape != t.shape() {
                return Err(Error::Checkpoint(format!("tensor {stored_name} does not match model tensor {name}")));
            }
            params.get_mut(id).data.copy_from_slice(&t.data);
        }
        Ok(())
    }
}

pub fn load(path: &Path, kind: &str) -> Result<Archive> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a weight archive", path.display())));
    }
    let mut len = [0u8; 8];
    f.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 64 << 20 {
        return Err(Error::Checkpoint("header length is implausible".into()));
    }
    let mut header = vec![0u8; len];
    f.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    if header.kind != kind {
        return Err(Error::Checkpoint(format!("expected a {kind} archive, found {}", header.kind)));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let mut buf = vec![0u8; e.rows * e.cols * 4];
        f.read_exact(&mut buf)?;
        let data = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        tensors.push((e.name, Tensor::from_vec(e.rows, e.cols, data)));
    }
    let mut rest = Vec::new();
    f.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes after tensor data", rest.len())));
    }
    Ok(Archive { config: header.config, tensors })
}
