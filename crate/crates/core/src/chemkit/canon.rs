//! Canonical SMILES.
//!
//! Atoms are ranked by iterated neighborhood refinement of an invariant
//! tuple (degree, element, aromaticity, charge, hydrogens, ring membership).
//! Remaining ties are broken by promoting one member of the smallest tied
//! class and refining again. The string is a depth-first walk from the
//! lowest-ranked atom that visits neighbors in rank order.

use rand::seq::SliceRandom;
use rand::Rng;

use super::aromatic::perceive;
use super::mol::{BondOrder, MolGraph};
use super::parse::parse;
use super::Result;

fn bond_code(o: BondOrder) -> u8 {
    match o {
        BondOrder::Single => 1,
        BondOrder::Double => 2,
        BondOrder::Triple => 3,
        BondOrder::Aromatic => 4,
    }
}

/// Dense ranks of `keys`, equal keys sharing a rank.
fn dense_ranks<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let mut sorted: Vec<K> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter()
        .map(|k| sorted.binary_search(k).expect("key present"))
        .collect()
}

fn count_classes(ranks: &[usize]) -> usize {
    let mut r = ranks.to_vec();
    r.sort_unstable();
    r.dedup();
    r.len()
}

fn refine(mol: &MolGraph, mut ranks: Vec<usize>) -> Vec<usize> {
    let mut classes = count_classes(&ranks);
    loop {
        let keys: Vec<(usize, Vec<(usize, u8)>)> = (0..ranks.len())
            .map(|a| {
                let mut nb: Vec<(usize, u8)> = mol
                    .neighbors(a)
                    .iter()
                    .map(|&(b, bi)| (ranks[b], bond_code(mol.bonds()[bi].order)))
                    .collect();
                nb.sort_unstable();
                (ranks[a], nb)
            })
            .collect();
        let next = dense_ranks(&keys);
        let n = count_classes(&next);
        ranks = next;
        if n == classes {
            return ranks;
        }
        classes = n;
    }
}

/// Canonical atom ranks, all distinct.
pub fn canonical_ranks(mol: &MolGraph) -> Vec<usize> {
    let n = mol.atoms().len();
    let invariants: Vec<_> = (0..n)
        .map(|a| {
            let at = &mol.atoms()[a];
            (
                mol.degree(a),
                at.element.atomic_number(),
                at.aromatic,
                at.charge,
                at.h_count,
                mol.in_ring(a),
            )
        })
        .collect();
    let mut ranks = refine(mol, dense_ranks(&invariants));
    while count_classes(&ranks) < n {
        let mut counts = vec![0usize; n];
        ranks.iter().for_each(|&r| counts[r] += 1);
        let tied = (0..n).find(|&r| counts[r] > 1).expect("a tied class exists");
        let chosen = (0..n).find(|&a| ranks[a] == tied).expect("class member");
        let split: Vec<usize> = (0..n)
            .map(|a| 2 * ranks[a] + usize::from(ranks[a] == tied && a != chosen))
            .collect();
        ranks = refine(mol, dense_ranks(&split));
    }
    ranks
}

fn implied_h(mol: &MolGraph, a: usize) -> Option<u8> {
    let at = &mol.atoms()[a];
    let sigma: u8 = mol
        .neighbors(a)
        .iter()
        .map(|&(_, bi)| mol.bonds()[bi].order.base())
        .sum();
    let mut used = sigma;
    if at.aromatic {
        let v = at.element.fit_valence(0, sigma)?;
        used += u8::from(v > sigma);
    }
    Some(at.element.fit_valence(0, used)? - used)
}

fn atom_text(mol: &MolGraph, a: usize, out: &mut String) {
    let at = &mol.atoms()[a];
    let sym = if at.aromatic {
        at.element.symbol().to_ascii_lowercase()
    } else {
        at.element.symbol().to_string()
    };
    if at.element.organic() && at.charge == 0 && implied_h(mol, a) == Some(at.h_count) {
        out.push_str(&sym);
        return;
    }
    out.push('[');
    out.push_str(&sym);
    match at.h_count {
        0 => {}
        1 => out.push('H'),
        h => out.push_str(&format!("H{h}")),
    }
    match at.charge {
        0 => {}
        1 => out.push('+'),
        -1 => out.push('-'),
        c if c > 0 => out.push_str(&format!("+{c}")),
        c => out.push_str(&format!("-{}", -c)),
    }
    out.push(']');
}

fn bond_text(mol: &MolGraph, bi: usize) -> &'static str {
    let b = &mol.bonds()[bi];
    match b.order {
        BondOrder::Single if mol.atoms()[b.a].aromatic && mol.atoms()[b.b].aromatic => "-",
        BondOrder::Single | BondOrder::Aromatic => "",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
    }
}

struct Writer<'a> {
    mol: &'a MolGraph,
    rank: &'a [usize],
    visited: Vec<bool>,
    closure_seen: Vec<bool>,
    children: Vec<Vec<(usize, usize)>>,
    /// `(partner, bond, is_opening)` per atom.
    ring_events: Vec<Vec<(usize, usize, bool)>>,
    digits: Vec<Option<usize>>,
    free: Vec<bool>,
}

impl Writer<'_> {
    fn plan(&mut self, u: usize, parent_bond: Option<usize>) {
        self.visited[u] = true;
        let mut nbrs: Vec<(usize, usize)> = self
            .mol
            .neighbors(u)
            .iter()
            .copied()
            .filter(|&(_, bi)| Some(bi) != parent_bond)
            .collect();
        nbrs.sort_by_key(|&(v, _)| self.rank[v]);
        for (v, bi) in nbrs {
            if self.visited[v] {
                if !self.closure_seen[bi] {
                    self.closure_seen[bi] = true;
                    self.ring_events[v].push((u, bi, true));
                    self.ring_events[u].push((v, bi, false));
                }
            } else {
                self.children[u].push((v, bi));
                self.plan(v, Some(bi));
            }
        }
    }

    fn emit(&mut self, u: usize, out: &mut String) {
        atom_text(self.mol, u, out);
        let mut events = std::mem::take(&mut self.ring_events[u]);
        // closings first, then openings, each by partner rank
        events.sort_by_key(|&(p, _, open)| (open, self.rank[p]));
        for (_, bi, open) in events {
            if open {
                let d = self.free.iter().position(|&f| f).unwrap_or_else(|| {
                    self.free.push(true);
                    self.free.len() - 1
                });
                self.free[d] = false;
                self.digits[bi] = Some(d);
                push_label(d, out);
            } else {
                let d = self.digits[bi].expect("ring opened before closing");
                out.push_str(bond_text(self.mol, bi));
                push_label(d, out);
                self.free[d] = true;
            }
        }
        let children = std::mem::take(&mut self.children[u]);
        let last = children.len().saturating_sub(1);
        for (i, (v, bi)) in children.into_iter().enumerate() {
            if i < last {
                out.push('(');
                out.push_str(bond_text(self.mol, bi));
                self.emit(v, out);
                out.push(')');
            } else {
                out.push_str(bond_text(self.mol, bi));
                self.emit(v, out);
            }
        }
    }
}

fn push_label(d: usize, out: &mut String) {
    let label = d + 1;
    if label < 10 {
        out.push(char::from(b'0' + label as u8));
    } else {
        out.push_str(&format!("%{label:02}"));
    }
}

/// Writes `mol` as SMILES, starting each fragment at its lowest-ranked atom
/// and visiting neighbors in ascending rank.
pub fn write_smiles(mol: &MolGraph, rank: &[usize]) -> String {
    let n = mol.atoms().len();
    let mut w = Writer {
        mol,
        rank,
        visited: vec![false; n],
        closure_seen: vec![false; mol.bonds().len()],
        children: vec![Vec::new(); n],
        ring_events: vec![Vec::new(); n],
        digits: vec![None; mol.bonds().len()],
        free: vec![true; 9],
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&a| rank[a]);
    let mut out = String::new();
    for start in order {
        if w.visited[start] {
            continue;
        }
        w.plan(start, None);
        if !out.is_empty() {
            out.push('.');
        }
        w.emit(start, &mut out);
    }
    out
}

/// Canonical SMILES with aromaticity re-perceived from the Kekulé form.
pub fn canonicalize(mol: &MolGraph) -> String {
    canonicalize_with(mol, true)
}

/// Canonical SMILES; with `perceive` off the aromatic flags are used as read.
pub fn canonicalize_with(mol: &MolGraph, perceive_aromatic: bool) -> String {
    let m = if perceive_aromatic {
        perceive(mol)
    } else {
        mol.clone()
    };
    write_smiles(&m, &canonical_ranks(&m))
}

/// Parses and canonicalizes in one step.
pub fn canonical_smiles(smiles: &str) -> Result<String> {
    parse(smiles).map(|m| canonicalize(&m))
}

/// A valid but randomly ordered SMILES for the same molecule.
pub fn random_smiles<G: Rng>(mol: &MolGraph, rng: &mut G) -> String {
    let m = perceive(mol);
    let mut rank: Vec<usize> = (0..m.atoms().len()).collect();
    rank.shuffle(rng);
    write_smiles(&m, &rank)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_cases() {
        assert_eq!(canonical_smiles("C").unwrap(), "C");
        assert_eq!(
            canonical_smiles("OCC").unwrap(),
            canonical_smiles("CCO").unwrap()
        );
        assert_eq!(
            canonical_smiles("C1=CC=CC=C1").unwrap(),
            canonical_smiles("c1ccccc1").unwrap()
        );
        assert_eq!(canonical_smiles("c1ccccc1").unwrap(), "c1ccccc1");
    }

    #[test]
    fn charges_and_hydrogens_are_written() {
        for s in ["[NH4+]", "C[O-]", "c1cc[nH]c1", "[CH3]", "[H][H]", "C.C"] {
            let c = canonical_smiles(s).unwrap();
            assert_eq!(canonical_smiles(&c).unwrap(), c, "{s} -> {c}");
        }
        assert_eq!(canonical_smiles("[NH4+]").unwrap(), "[NH4+]");
    }

    #[test]
    fn biphenyl_link_is_explicit() {
        let c = canonical_smiles("c1ccccc1-c1ccccc1").unwrap();
        assert!(c.contains('-'), "{c}");
        assert_eq!(canonical_smiles(&c).unwrap(), c);
    }
}
