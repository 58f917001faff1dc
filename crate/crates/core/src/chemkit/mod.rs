//! Small cheminformatics toolkit: SMILES lexing and vocabularies, a
//! validating parser, canonical output, circular fingerprints and weights.

mod aromatic;
mod canon;
pub mod corpus;
mod element;
mod fingerprint;
mod mol;
mod parse;
mod rings;
mod vocab;

pub use aromatic::perceive;
pub use canon::{
    canonical_ranks, canonical_smiles, canonicalize, canonicalize_with, random_smiles,
    write_smiles,
};
pub use element::Element;
pub use fingerprint::{
    atom_environments, morgan_fp, tanimoto, Fingerprint, DEFAULT_BITS, DEFAULT_RADIUS,
};
pub use mol::{mol_weight, Atom, Bond, BondOrder, MolGraph, RawAtom};
pub use parse::{is_valid, parse};
pub use rings::Ring;
pub use vocab::{lex, TokenSeq, TokenVocab, BOS, EOS, MASK, PAD, SPECIALS};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChemError {
    #[error("no token matches at byte {0}")]
    UnknownToken(usize),
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("valence exceeded on atom {atom} ({element})")]
    Valence { atom: usize, element: String },
    #[error("unknown element {0:?}")]
    UnknownElement(String),
    #[error("kekulization failed: {0}")]
    Kekulize(String),
    #[error("fingerprint shapes differ: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, u32),
        right: (usize, u32),
    },
    #[error("fingerprint: {0}")]
    Fingerprint(String),
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, ChemError>;
