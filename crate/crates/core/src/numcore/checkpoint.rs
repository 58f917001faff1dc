//! Named-tensor checkpoint files.
//!
//! Layout: an 8-byte little-endian header length `n`, `n` bytes of JSON
//! header, then the raw little-endian tensor payload. Each header entry
//! records name, shape, dtype and the byte offset into the payload.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DType, ParamStore, Real, Result, Tensor, TensorError};

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    dtype: DType,
    offset: usize,
    nbytes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    tensors: Vec<Entry>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

/// Parameters plus free-form string metadata (configs, vocab, histograms).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<R> {
    pub params: ParamStore<R>,
    pub metadata: BTreeMap<String, String>,
}

fn err(e: impl std::fmt::Display) -> TensorError {
    TensorError::Checkpoint(e.to_string())
}

pub fn write_checkpoint<R: Real, W: Write>(mut w: W, ckpt: &Checkpoint<R>) -> Result<()> {
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in ckpt.params.iter() {
        let offset = payload.len();
        for &x in t.data() {
            x.write_le(&mut payload);
        }
        tensors.push(Entry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            dtype: R::DTYPE,
            offset,
            nbytes: payload.len() - offset,
        });
    }
    let header = serde_json::to_vec(&Header {
        tensors,
        metadata: ckpt.metadata.clone(),
    })
    .map_err(err)?;
    w.write_all(&(header.len() as u64).to_le_bytes()).map_err(err)?;
    w.write_all(&header).map_err(err)?;
    w.write_all(&payload).map_err(err)?;
    Ok(())
}

/// Reads a checkpoint, converting stored tensors to `R` if needed.
pub fn read_checkpoint<R: Real, Rd: Read>(mut r: Rd) -> Result<Checkpoint<R>> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(err)?;
    let hlen = u64::from_le_bytes(len) as usize;
    let mut hbytes = vec![0u8; hlen];
    r.read_exact(&mut hbytes).map_err(err)?;
    let header: Header = serde_json::from_slice(&hbytes).map_err(err)?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(err)?;
    let mut params = ParamStore::new();
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let size = e.dtype.size();
        if e.nbytes != n * size || e.offset + e.nbytes > payload.len() {
            return Err(err(format!("tensor `{}` has inconsistent extent", e.name)));
        }
        let bytes = &payload[e.offset..e.offset + e.nbytes];
        let data: Vec<R> = match e.dtype {
            DType::F32 => bytes
                .chunks_exact(4)
                .map(|c| R::c(f32::read_le(c) as f64))
                .collect(),
            DType::F64 => bytes.chunks_exact(8).map(|c| R::c(f64::read_le(c))).collect(),
        };
        params.insert(e.name, Tensor::new(&e.shape, data)?);
    }
    Ok(Checkpoint {
        params,
        metadata: header.metadata,
    })
}

pub fn save_checkpoint<R: Real>(path: impl AsRef<Path>, ckpt: &Checkpoint<R>) -> Result<()> {
    let f = std::fs::File::create(path).map_err(err)?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(&mut w, ckpt)?;
    w.flush().map_err(err)
}

pub fn load_checkpoint<R: Real>(path: impl AsRef<Path>) -> Result<Checkpoint<R>> {
    let f = std::fs::File::open(path).map_err(err)?;
    read_checkpoint(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut params = ParamStore::<f32>::new();
        params.insert("a.w", Tensor::from_f64(&[2, 3], &[1., -2., 3.5, 0.25, 1e-7, -0.0]).unwrap());
        params.insert("b", Tensor::scalar(7.0));
        let mut metadata = BTreeMap::new();
        metadata.insert("k".to_string(), "v".to_string());
        let ckpt = Checkpoint { params, metadata };
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt).unwrap();
        let back: Checkpoint<f32> = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, ckpt);
        let hlen = u64::from_le_bytes(buf[..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&buf[8..8 + hlen]).unwrap();
        assert_eq!(header["tensors"][0]["dtype"], "f32");
        assert_eq!(buf.len(), 8 + hlen + 7 * 4);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut params = ParamStore::<f64>::new();
        params.insert("x", Tensor::ones(&[4]));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &Checkpoint { params, metadata: BTreeMap::new() }).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint::<f64, _>(&buf[..]).is_err());
    }
}
