//! Tab-separated ligand/protein pair ingestion.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sidgen_core::chemkit::{is_valid, TokenVocab};
use sidgen_core::diffusion::{Dataset, Example};
use sidgen_core::Tensor;
use thiserror::Error;

use crate::embed::{check_sequence, load_embedding, pseudo_embed, EmbedError};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("no usable records")]
    EmptyDataset,
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("{0}")]
    Data(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRecord {
    pub smiles: String,
    pub sequence: String,
    pub label: Option<f64>,
    pub embedding: Option<PathBuf>,
    /// Remaining columns, passed through untouched.
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestReport {
    #[serde(skip)]
    pub records: Vec<PairRecord>,
    pub rows: usize,
    pub kept: usize,
    pub skipped_smiles: usize,
    pub skipped_length: usize,
    pub skipped_residue: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LengthBounds {
    pub min: usize,
    pub max: usize,
}

impl Default for LengthBounds {
    fn default() -> Self {
        Self { min: 50, max: 1500 }
    }
}

pub fn ingest(path: impl AsRef<Path>, bounds: LengthBounds) -> Result<IngestReport, IngestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_tsv(&text, bounds, path.parent().unwrap_or(Path::new(".")))
}

/// Parses TSV text. Relative embedding paths resolve against `base`.
pub fn parse_tsv(text: &str, bounds: LengthBounds, base: &Path) -> Result<IngestReport, IngestError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(IngestError::EmptyDataset)?;
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    let find = |name: &str| cols.iter().position(|c| c.eq_ignore_ascii_case(name));
    let smiles_col = find("smiles").ok_or_else(|| IngestError::MissingColumn("smiles".into()))?;
    let seq_col = find("sequence").ok_or_else(|| IngestError::MissingColumn("sequence".into()))?;
    let label_col = find("label");
    let emb_col = find("embedding");

    let mut report = IngestReport {
        records: Vec::new(),
        rows: 0,
        kept: 0,
        skipped_smiles: 0,
        skipped_length: 0,
        skipped_residue: 0,
    };
    for (i, line) in lines {
        report.rows += 1;
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(IngestError::Malformed {
                line: i + 1,
                msg: format!("{} fields, header has {}", fields.len(), cols.len()),
            });
        }
        let smiles = fields[smiles_col];
        let sequence = fields[seq_col];
        if !is_valid(smiles) {
            report.skipped_smiles += 1;
            continue;
        }
        if check_sequence(sequence).is_err() {
            report.skipped_residue += 1;
            continue;
        }
        if sequence.len() < bounds.min || sequence.len() > bounds.max {
            report.skipped_length += 1;
            continue;
        }
        let label = match label_col.map(|c| fields[c]).filter(|s| !s.is_empty()) {
            Some(s) => Some(s.parse::<f64>().map_err(|e| IngestError::Malformed {
                line: i + 1,
                msg: format!("label {s:?}: {e}"),
            })?),
            None => None,
        };
        let embedding = emb_col
            .map(|c| fields[c])
            .filter(|s| !s.is_empty())
            .map(|s| base.join(s));
        let extra = cols
            .iter()
            .enumerate()
            .filter(|(c, _)| ![Some(smiles_col), Some(seq_col), label_col, emb_col].contains(&Some(*c)))
            .map(|(c, name)| (name.to_string(), fields[c].to_string()))
            .collect();
        report.records.push(PairRecord {
            smiles: smiles.to_string(),
            sequence: sequence.to_string(),
            label,
            embedding,
            extra,
        });
    }
    report.kept = report.records.len();
    if report.records.is_empty() {
        return Err(IngestError::EmptyDataset);
    }
    Ok(report)
}

/// Training data built from records: a corpus vocabulary, tokenized
/// ligands and one embedding per distinct protein sequence.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub vocab: TokenVocab,
    pub data: Dataset<f32>,
    /// Sequence of each entry of `data.proteins`.
    pub sequences: Vec<String>,
}

pub fn prepare(records: &[PairRecord], d_seq: usize, embed_seed: u64) -> Result<Prepared, IngestError> {
    if records.is_empty() {
        return Err(IngestError::EmptyDataset);
    }
    let vocab = TokenVocab::from_corpus(records.iter().map(|r| r.smiles.as_str()))
        .map_err(|e| IngestError::Data(e.to_string()))?;
    let mut sequences: Vec<String> = Vec::new();
    let mut proteins: Vec<Tensor<f32>> = Vec::new();
    let mut examples = Vec::with_capacity(records.len());
    for r in records {
        let protein = match sequences.iter().position(|s| *s == r.sequence) {
            Some(p) => p,
            None => {
                let emb = match &r.embedding {
                    Some(path) => load_embedding(path)?,
                    None => pseudo_embed(&r.sequence, d_seq, embed_seed)?,
                };
                if emb.shape() != [r.sequence.len(), d_seq] {
                    return Err(IngestError::Data(format!(
                        "embedding for a {}-residue protein has shape {:?}, expected [{}, {d_seq}]",
                        r.sequence.len(),
                        emb.shape(),
                        r.sequence.len()
                    )));
                }
                sequences.push(r.sequence.clone());
                proteins.push(emb);
                sequences.len() - 1
            }
        };
        let tokens = vocab.tokenize(&r.smiles).map_err(|e| IngestError::Data(e.to_string()))?;
        examples.push(Example { tokens, protein });
    }
    Ok(Prepared {
        vocab,
        data: Dataset { examples, proteins },
        sequences,
    })
}
