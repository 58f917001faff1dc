//! Kekulization of aromatic input and Hückel-style perception of 5- and
//! 6-membered aromatic rings.

use super::element::Element;
use super::mol::{Atom, Bond, BondOrder, MolGraph, RawAtom};
use super::{ChemError, Result};

const SEARCH_BUDGET: usize = 1_000_000;

/// Resolves aromatic bonds to single or double orders.
///
/// An aromatic atom needs one double bond when its sigma valence leaves room
/// under its smallest allowed valence. The needing atoms must be covered by a
/// perfect matching over aromatic bonds.
pub(crate) fn kekulize(
    atoms: &[RawAtom],
    bonds: &[Bond],
    adj: &[Vec<(usize, usize)>],
) -> Result<Vec<u8>> {
    let mut orders: Vec<u8> = bonds.iter().map(|b| b.order.base()).collect();
    if !bonds.iter().any(|b| b.order == BondOrder::Aromatic) {
        return Ok(orders);
    }
    let mut needs = vec![false; atoms.len()];
    for (i, a) in atoms.iter().enumerate().filter(|(_, a)| a.aromatic) {
        let sigma: u8 = adj[i].iter().map(|&(_, bi)| orders[bi]).sum::<u8>()
            + a.explicit_h.unwrap_or(0);
        let v = a
            .element
            .fit_valence(a.charge, sigma)
            .ok_or_else(|| ChemError::Valence {
                atom: i,
                element: a.element.symbol().to_string(),
            })?;
        needs[i] = v > sigma;
    }
    let candidates: Vec<Vec<(usize, usize)>> = (0..atoms.len())
        .map(|i| {
            if !needs[i] {
                return Vec::new();
            }
            adj[i]
                .iter()
                .copied()
                .filter(|&(j, bi)| needs[j] && bonds[bi].order == BondOrder::Aromatic)
                .collect()
        })
        .collect();
    let mut open = needs.clone();
    let mut chosen = Vec::new();
    let mut budget = SEARCH_BUDGET;
    if !match_all(&candidates, &mut open, &mut chosen, &mut budget) {
        return Err(ChemError::Kekulize("no alternating bond assignment".into()));
    }
    for bi in chosen {
        orders[bi] = 2;
    }
    Ok(orders)
}

/// Backtracking perfect matching, most constrained atom first.
fn match_all(
    cand: &[Vec<(usize, usize)>],
    open: &mut [bool],
    chosen: &mut Vec<usize>,
    budget: &mut usize,
) -> bool {
    if *budget == 0 {
        return false;
    }
    *budget -= 1;
    let mut best: Option<(usize, usize)> = None;
    for i in (0..open.len()).filter(|&i| open[i]) {
        let k = cand[i].iter().filter(|&&(j, _)| open[j]).count();
        if best.is_none_or(|(_, bk)| k < bk) {
            best = Some((i, k));
        }
        if k == 0 {
            return false;
        }
    }
    let Some((i, _)) = best else {
        return true;
    };
    for &(j, bi) in &cand[i] {
        if !open[j] {
            continue;
        }
        open[i] = false;
        open[j] = false;
        chosen.push(bi);
        if match_all(cand, open, chosen, budget) {
            return true;
        }
        chosen.pop();
        open[i] = true;
        open[j] = true;
    }
    false
}

/// Re-derives aromaticity from the Kekulé structure.
///
/// A 6-ring is aromatic when every member carries a double bond inside the
/// ring or a bond already marked aromatic. A 5-ring needs four such members
/// plus one lone-pair donor (neutral N or P with three connections, neutral O
/// or S with two, or an anionic carbon). Rings are revisited until nothing
/// changes so fused systems are picked up.
pub fn perceive(mol: &MolGraph) -> MolGraph {
    let n = mol.atoms().len();
    let kek = mol.kekule_orders();
    let mut arom_bond = vec![false; mol.bonds().len()];
    let mut arom_ring = vec![false; mol.rings().len()];
    let has_double_in = |a: usize, ring_bonds: &[usize]| {
        ring_bonds.iter().any(|&bi| {
            let b = &mol.bonds()[bi];
            kek[bi] == 2 && (b.a == a || b.b == a)
        })
    };
    loop {
        let mut changed = false;
        for (ri, ring) in mol.rings().iter().enumerate() {
            if arom_ring[ri] || !(ring.len() == 5 || ring.len() == 6) {
                continue;
            }
            let mut donors = 0;
            let mut ok = true;
            for &a in &ring.atoms {
                let atom = &mol.atoms()[a];
                if !atom.element.can_be_aromatic() {
                    ok = false;
                    break;
                }
                let pi = has_double_in(a, &ring.bonds)
                    || mol.neighbors(a).iter().any(|&(_, bi)| arom_bond[bi]);
                if pi {
                    continue;
                }
                if ring.len() == 5 && is_donor(mol, a) {
                    donors += 1;
                } else {
                    ok = false;
                    break;
                }
            }
            if ok && donors == usize::from(ring.len() == 5) {
                arom_ring[ri] = true;
                ring.bonds.iter().for_each(|&bi| arom_bond[bi] = true);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut arom_atom = vec![false; n];
    for (ri, ring) in mol.rings().iter().enumerate() {
        if arom_ring[ri] {
            ring.atoms.iter().for_each(|&a| arom_atom[a] = true);
        }
    }
    let atoms: Vec<Atom> = mol
        .atoms()
        .iter()
        .zip(&arom_atom)
        .map(|(a, &ar)| Atom { aromatic: ar, ..*a })
        .collect();
    let bonds: Vec<Bond> = mol
        .bonds()
        .iter()
        .enumerate()
        .map(|(bi, b)| Bond {
            order: if arom_bond[bi] {
                BondOrder::Aromatic
            } else {
                BondOrder::from_order(kek[bi]).expect("kekule order is 1..=3")
            },
            ..*b
        })
        .collect();
    MolGraph::from_parts(atoms, bonds, kek.to_vec())
}

fn is_donor(mol: &MolGraph, a: usize) -> bool {
    let atom = &mol.atoms()[a];
    let kek = mol.kekule_orders();
    if mol.neighbors(a).iter().any(|&(_, bi)| kek[bi] > 1) {
        return false;
    }
    let conn = mol.degree(a) + atom.h_count as usize;
    match (atom.element, atom.charge) {
        (Element::N | Element::P, 0) => conn == 3,
        (Element::O | Element::S, 0) => conn == 2,
        (Element::C, -1) => conn == 3,
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse;

    #[test]
    fn benzene_kekulizes_to_three_doubles() {
        let m = parse("c1ccccc1").unwrap();
        let doubles = (0..6).filter(|&b| m.kekule_order(b) == 2).count();
        assert_eq!(doubles, 3);
        assert!(m.atoms().iter().all(|a| a.h_count == 1));
    }

    #[test]
    fn pyrrole_nitrogen_keeps_hydrogen() {
        let m = parse("c1cc[nH]c1").unwrap();
        assert_eq!(m.atoms()[3].h_count, 1);
        assert!(parse("c1cccc1").is_err());
    }

    #[test]
    fn kekule_benzene_is_perceived() {
        let m = super::perceive(&parse("C1=CC=CC=C1").unwrap());
        assert!(m.atoms().iter().all(|a| a.aromatic));
    }

    #[test]
    fn cyclohexene_is_not_aromatic() {
        let m = super::perceive(&parse("C1=CCCCC1").unwrap());
        assert!(m.atoms().iter().all(|a| !a.aromatic));
    }

    #[test]
    fn fused_rings_are_perceived() {
        for s in ["C1=CC=C2C=CC=CC2=C1", "C1=CC=C2C(=C1)C=CN2"] {
            let m = super::perceive(&parse(s).unwrap());
            assert!(m.atoms().iter().all(|a| a.aromatic), "{s}");
        }
    }
}
