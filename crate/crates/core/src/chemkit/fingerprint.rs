use super::aromatic::perceive;
use super::mol::{BondOrder, MolGraph};
use super::{ChemError, Result};

pub const DEFAULT_RADIUS: u32 = 2;
pub const DEFAULT_BITS: usize = 2048;

/// Fixed-width bit vector tagged with the radius that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    words: Vec<u64>,
    nbits: usize,
    radius: u32,
}

impl Fingerprint {
    pub fn empty(nbits: usize, radius: u32) -> Result<Self> {
        if !nbits.is_power_of_two() {
            return Err(ChemError::Fingerprint(format!(
                "width {nbits} is not a power of two"
            )));
        }
        Ok(Self {
            words: vec![0; nbits.div_ceil(64)],
            nbits,
            radius,
        })
    }

    pub fn nbits(&self) -> usize {
        self.nbits
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn on_bits(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nbits).filter(|&i| self.get(i))
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.nbits != other.nbits || self.radius != other.radius {
            return Err(ChemError::ShapeMismatch {
                left: (self.nbits, self.radius),
                right: (other.nbits, other.radius),
            });
        }
        Ok(())
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over little-endian words with a splitmix64 finalizer.
fn hash_words(words: &[u64]) -> u64 {
    let mut h = FNV_OFFSET;
    for w in words {
        for byte in w.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

fn bond_code(o: BondOrder) -> u64 {
    match o {
        BondOrder::Single => 1,
        BondOrder::Double => 2,
        BondOrder::Triple => 3,
        BondOrder::Aromatic => 4,
    }
}

/// Per-atom environment hashes for radii `0..=radius`.
pub fn atom_environments(mol: &MolGraph, radius: u32) -> Vec<Vec<u64>> {
    let m = perceive(mol);
    let n = m.atoms().len();
    let mut ids: Vec<u64> = (0..n)
        .map(|a| {
            let at = &m.atoms()[a];
            hash_words(&[
                at.element.atomic_number() as u64,
                m.degree(a) as u64,
                at.h_count as u64,
                (at.charge as i64 + 128) as u64,
                m.in_ring(a) as u64,
                at.aromatic as u64,
            ])
        })
        .collect();
    let mut layers = vec![ids.clone()];
    for r in 1..=radius {
        ids = (0..n)
            .map(|a| {
                let mut nb: Vec<(u64, u64)> = m
                    .neighbors(a)
                    .iter()
                    .map(|&(b, bi)| (bond_code(m.bonds()[bi].order), ids[b]))
                    .collect();
                nb.sort_unstable();
                let mut words = vec![r as u64, ids[a]];
                words.extend(nb.into_iter().flat_map(|(c, h)| [c, h]));
                hash_words(&words)
            })
            .collect();
        layers.push(ids.clone());
    }
    layers
}

/// ECFP-style circular fingerprint folded into `nbits` bits.
pub fn morgan_fp(mol: &MolGraph, radius: u32, nbits: usize) -> Result<Fingerprint> {
    let mut fp = Fingerprint::empty(nbits, radius)?;
    for layer in atom_environments(mol, radius) {
        for h in layer {
            fp.set((h as usize) & (nbits - 1));
        }
    }
    Ok(fp)
}

/// `|a ∧ b| / |a ∨ b|`, defined as 1 for two empty fingerprints.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64> {
    a.check(b)?;
    let (mut inter, mut union) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}
