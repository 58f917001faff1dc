use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use super::{ChemError, Result};

pub const PAD: &str = "<pad>";
pub const MASK: &str = "<mask>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const SPECIALS: [&str; 4] = [PAD, MASK, BOS, EOS];

/// Splits a SMILES string into lexical tokens, returned as byte spans.
///
/// Bracket atoms, `Cl`, `Br` and `%NN` ring labels are single tokens.
pub fn lex(s: &str) -> Result<Vec<(usize, usize)>> {
    let b = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let len = match b[i] {
            b'[' => match b[i + 1..].iter().position(|&c| c == b']' || c == b'[') {
                Some(p) if b[i + 1 + p] == b']' => p + 2,
                _ => return Err(ChemError::UnknownToken(i)),
            },
            b'C' if b.get(i + 1) == Some(&b'l') => 2,
            b'B' if b.get(i + 1) == Some(&b'r') => 2,
            b'%' => {
                if b.len() >= i + 3 && b[i + 1].is_ascii_digit() && b[i + 2].is_ascii_digit() {
                    3
                } else {
                    return Err(ChemError::UnknownToken(i));
                }
            }
            b'B' | b'C' | b'N' | b'O' | b'S' | b'P' | b'F' | b'I' | b'b' | b'c' | b'n'
            | b'o' | b's' | b'p' | b'(' | b')' | b'.' | b'=' | b'#' | b'-' | b'+' | b'\\'
            | b'/' | b':' | b'~' | b'@' | b'?' | b'>' | b'*' | b'$' => 1,
            c if c.is_ascii_digit() => 1,
            _ => return Err(ChemError::UnknownToken(i)),
        };
        out.push((i, i + len));
        i += len;
    }
    Ok(out)
}

/// Token ids with a mask marking real (non-pad) positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<usize>,
    pub pad_mask: Vec<bool>,
}

impl TokenSeq {
    pub fn new(ids: Vec<usize>) -> Self {
        let pad_mask = vec![true; ids.len()];
        Self { ids, pad_mask }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of real tokens.
    pub fn real_len(&self) -> usize {
        self.pad_mask.iter().filter(|&&m| m).count()
    }
}

/// SMILES vocabulary: specials followed by corpus tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenVocab {
    tokens: Vec<String>,
    id_of: HashMap<String, usize>,
    pub pad_id: usize,
    pub mask_id: usize,
    pub bos_id: usize,
    pub eos_id: usize,
    max_len: usize,
}

impl TokenVocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut id_of = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || !t.is_ascii() {
                return Err(ChemError::Vocab(format!("bad token {t:?} at line {}", i + 1)));
            }
            if id_of.insert(t.clone(), i).is_some() {
                return Err(ChemError::Vocab(format!("duplicate token {t:?}")));
            }
        }
        let find = |name: &str| {
            id_of
                .get(name)
                .copied()
                .ok_or_else(|| ChemError::Vocab(format!("missing special {name}")))
        };
        let (pad_id, mask_id, bos_id, eos_id) = (find(PAD)?, find(MASK)?, find(BOS)?, find(EOS)?);
        let max_len = tokens
            .iter()
            .filter(|t| !SPECIALS.contains(&t.as_str()))
            .map(|t| t.len())
            .max()
            .unwrap_or(0);
        Ok(Self {
            tokens,
            id_of,
            pad_id,
            mask_id,
            bos_id,
            eos_id,
            max_len,
        })
    }

    /// Specials, then every lexical token seen in the corpus in sorted order.
    pub fn from_corpus<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in corpus {
            for (a, b) in lex(s)? {
                seen.insert(s[a..b].to_string());
            }
        }
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(seen)
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.id_of.get(token).copied()
    }

    pub fn is_special(&self, id: usize) -> bool {
        id == self.pad_id || id == self.mask_id || id == self.bos_id || id == self.eos_id
    }

    /// Greedy longest match; specials never match.
    pub fn tokenize(&self, smiles: &str) -> Result<TokenSeq> {
        let mut ids = Vec::new();
        let mut i = 0;
        while i < smiles.len() {
            let longest = self.max_len.min(smiles.len() - i);
            let hit = (1..=longest).rev().find_map(|n| {
                let piece = smiles.get(i..i + n)?;
                self.id_of
                    .get(piece)
                    .copied()
                    .filter(|&id| !self.is_special(id))
                    .map(|id| (id, n))
            });
            let (id, n) = hit.ok_or(ChemError::UnknownToken(i))?;
            ids.push(id);
            i += n;
        }
        Ok(TokenSeq::new(ids))
    }

    /// Concatenates tokens, dropping pad, bos and eos.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&id| id != self.pad_id && id != self.bos_id && id != self.eos_id)
            .filter_map(|&id| self.token(id))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(|l| l.to_string()).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| ChemError::Io(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ChemError::Io(e.to_string()))?;
        Self::from_text(&text)
    }
}
