//! Deterministic stand-in protein embeddings and the embedding file format.
//!
//! A file is one JSON header line (`len`, `d_seq`, `dtype`) followed by
//! `len * d_seq` little-endian `f32` values in row-major order.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sidgen_core::diffusion::{derive_seed, stream_rng};
use sidgen_core::Tensor;
use thiserror::Error;

/// The 20 standard amino acids plus `X` for unknown.
pub const ALPHABET: &str = "ACDEFGHIKLMNPQRSTVWYX";

/// Residues per position bucket.
pub const POSITION_BUCKET: usize = 16;

pub const DEFAULT_D_SEQ: usize = 1280;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("invalid residue {residue:?} at position {pos}")]
    InvalidResidue { residue: char, pos: usize },
    #[error("empty sequence")]
    Empty,
    #[error("embedding file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn check_sequence(seq: &str) -> Result<(), EmbedError> {
    if seq.is_empty() {
        return Err(EmbedError::Empty);
    }
    match seq.chars().enumerate().find(|(_, c)| !ALPHABET.contains(*c)) {
        Some((pos, residue)) => Err(EmbedError::InvalidResidue { residue, pos }),
        None => Ok(()),
    }
}

/// `[L, d_seq]` embedding. Row `i` is uniform noise on `[-1, 1)` seeded by
/// the residue letter and `i / POSITION_BUCKET`.
pub fn pseudo_embed(seq: &str, d_seq: usize, seed: u64) -> Result<Tensor<f32>, EmbedError> {
    check_sequence(seq)?;
    let mut data = Vec::with_capacity(seq.len() * d_seq);
    for (i, c) in seq.chars().enumerate() {
        let key = (ALPHABET.find(c).expect("checked") as u64) << 32 | (i / POSITION_BUCKET) as u64;
        let mut rng = stream_rng(derive_seed(seed, key), 0);
        data.extend((0..d_seq).map(|_| rng.random_range(-1.0f32..1.0)));
    }
    Ok(Tensor::new(&[seq.len(), d_seq], data).expect("shape matches data"))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    len: usize,
    d_seq: usize,
    dtype: String,
}

pub fn write_embedding(mut w: impl Write, emb: &Tensor<f32>) -> Result<(), EmbedError> {
    let [len, d_seq] = *emb.shape() else {
        return Err(EmbedError::Format(format!("expected [L, d_seq], got {:?}", emb.shape())));
    };
    let header = Header {
        len,
        d_seq,
        dtype: "f32".into(),
    };
    serde_json::to_writer(&mut w, &header).map_err(|e| EmbedError::Format(e.to_string()))?;
    w.write_all(b"\n")?;
    let bytes: Vec<u8> = emb.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_embedding(r: impl Read) -> Result<Tensor<f32>, EmbedError> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let h: Header = serde_json::from_str(line.trim_end()).map_err(|e| EmbedError::Format(e.to_string()))?;
    if h.dtype != "f32" {
        return Err(EmbedError::Format(format!("unsupported dtype {}", h.dtype)));
    }
    let n = h.len * h.d_seq;
    let mut bytes = Vec::with_capacity(n * 4);
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * 4 {
        return Err(EmbedError::Format(format!("expected {} payload bytes, found {}", n * 4, bytes.len())));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(&[h.len, h.d_seq], data).map_err(|e| EmbedError::Format(e.to_string()))
}

pub fn save_embedding(path: impl AsRef<Path>, emb: &Tensor<f32>) -> Result<(), EmbedError> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_embedding(&mut w, emb)?;
    w.flush()?;
    Ok(())
}

pub fn load_embedding(path: impl AsRef<Path>) -> Result<Tensor<f32>, EmbedError> {
    read_embedding(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let a = pseudo_embed("MKTAYIAK", DEFAULT_D_SEQ, 0).unwrap();
        assert_eq!(a.shape(), [8, 1280]);
        assert_eq!(a, pseudo_embed("MKTAYIAK", DEFAULT_D_SEQ, 0).unwrap());
        assert_ne!(a, pseudo_embed("MKTAYIAK", DEFAULT_D_SEQ, 1).unwrap());
        assert_eq!(pseudo_embed("W", DEFAULT_D_SEQ, 0).unwrap().shape(), [1, 1280]);
    }

    #[test]
    fn rows_follow_residue_and_bucket() {
        let seq: String = std::iter::repeat_n('A', 40).collect();
        let e = pseudo_embed(&seq, 8, 3).unwrap();
        let row = |i: usize| e.data()[i * 8..(i + 1) * 8].to_vec();
        assert_eq!(row(0), row(15));
        assert_ne!(row(15), row(16));
        let f = pseudo_embed("AC", 8, 3).unwrap();
        assert_ne!(f.data()[..8], f.data()[8..]);
    }

    #[test]
    fn invalid_residue() {
        assert!(matches!(
            pseudo_embed("MKB", 4, 0),
            Err(EmbedError::InvalidResidue { residue: 'B', pos: 2 })
        ));
        assert!(matches!(pseudo_embed("", 4, 0), Err(EmbedError::Empty)));
    }

    #[test]
    fn file_round_trip() {
        let e = pseudo_embed("ACDX", 5, 9).unwrap();
        let mut buf = Vec::new();
        write_embedding(&mut buf, &e).unwrap();
        assert_eq!(read_embedding(&buf[..]).unwrap(), e);
        buf.pop();
        assert!(read_embedding(&buf[..]).is_err());
    }
}
