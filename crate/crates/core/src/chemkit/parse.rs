//! SMILES reader.
//!
//! Grammar follows OpenSMILES: a chain of atoms with optional bond symbols,
//! ring-closure labels after an atom, and parenthesized branches. Ring labels
//! may also follow a closed branch. Stereo marks are read and discarded.

use std::collections::HashMap;

use super::element::Element;
use super::mol::{Bond, BondOrder, MolGraph, RawAtom};
use super::vocab::lex;
use super::{ChemError, Result};

fn perr(pos: usize, msg: impl Into<String>) -> ChemError {
    ChemError::Parse {
        pos,
        msg: msg.into(),
    }
}

/// Bond symbol as written; `None` means implicit.
type BondSym = Option<BondOrder>;

fn bond_symbol(tok: &str) -> Option<BondSym> {
    match tok {
        "-" | "/" | "\\" => Some(Some(BondOrder::Single)),
        "=" => Some(Some(BondOrder::Double)),
        "#" => Some(Some(BondOrder::Triple)),
        ":" => Some(Some(BondOrder::Aromatic)),
        _ => None,
    }
}

fn organic_atom(tok: &str) -> Option<RawAtom> {
    let (sym, aromatic) = match tok {
        "c" | "n" | "o" | "s" | "p" => (tok.to_ascii_uppercase(), true),
        _ => (tok.to_string(), false),
    };
    let element = Element::from_symbol(&sym).filter(|e| e.organic())?;
    Some(RawAtom {
        element,
        charge: 0,
        aromatic,
        explicit_h: None,
    })
}

/// Parses the inside of `[...]`: isotope, symbol, chirality, H count,
/// charge and atom class. Isotopes and classes are accepted and ignored.
fn bracket_atom(body: &str, pos: usize) -> Result<RawAtom> {
    let b = body.as_bytes();
    let mut i = 0;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let start = i;
    if i >= b.len() || !b[i].is_ascii_alphabetic() {
        return Err(perr(pos, "bracket atom without element"));
    }
    let (sym, aromatic) = if b[i].is_ascii_lowercase() {
        let two = body.get(i..i + 2).filter(|s| *s == "se" || *s == "as");
        let s = two.unwrap_or(&body[i..i + 1]);
        i += s.len();
        (s.to_string(), true)
    } else {
        i += 1;
        if i < b.len() && b[i].is_ascii_lowercase() {
            i += 1;
        }
        (body[start..i].to_string(), false)
    };
    let lookup = if aromatic {
        let mut c = sym.chars();
        let first = c.next().unwrap().to_ascii_uppercase();
        format!("{first}{}", c.as_str())
    } else {
        sym.clone()
    };
    let element = Element::from_symbol(&lookup).ok_or(ChemError::UnknownElement(sym))?;
    if aromatic && !element.can_be_aromatic() {
        return Err(perr(pos, "element cannot be aromatic"));
    }
    if i < b.len() && b[i] == b'@' {
        while i < b.len() && b[i] == b'@' {
            i += 1;
        }
        if body.get(i..i + 2).is_some_and(|s| ["TH", "AL", "SP", "TB", "OH"].contains(&s)) {
            i += 2;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
        }
    }
    let mut h = 0u8;
    if i < b.len() && b[i] == b'H' {
        i += 1;
        h = 1;
        if i < b.len() && b[i].is_ascii_digit() {
            h = b[i] - b'0';
            i += 1;
        }
    }
    let mut charge = 0i8;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        let sign: i8 = if b[i] == b'+' { 1 } else { -1 };
        let c = b[i];
        i += 1;
        let mut mag = 1i8;
        if i < b.len() && b[i].is_ascii_digit() {
            let s = i;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
            mag = body[s..i].parse().map_err(|_| perr(pos, "bad charge"))?;
        } else {
            while i < b.len() && b[i] == c {
                mag += 1;
                i += 1;
            }
        }
        charge = sign * mag;
    }
    if i < b.len() && b[i] == b':' {
        i += 1;
        let s = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if s == i {
            return Err(perr(pos, "empty atom class"));
        }
    }
    if i != b.len() {
        return Err(perr(pos, format!("unexpected {:?} in bracket atom", &body[i..])));
    }
    Ok(RawAtom {
        element,
        charge,
        aromatic,
        explicit_h: Some(h),
    })
}

struct OpenRing {
    atom: usize,
    sym: BondSym,
    pos: usize,
}

/// Parses a SMILES string into a validated molecular graph.
pub fn parse(smiles: &str) -> Result<MolGraph> {
    if smiles.is_empty() {
        return Err(perr(0, "empty string"));
    }
    let spans = lex(smiles)?;
    let mut atoms: Vec<RawAtom> = Vec::new();
    let mut bonds: Vec<Bond> = Vec::new();
    let mut prev: Option<usize> = None;
    let mut pending: Option<(BondSym, usize)> = None;
    let mut branches: Vec<(usize, usize)> = Vec::new();
    let mut rings: HashMap<u32, OpenRing> = HashMap::new();
    // true right after '(' until the branch's first atom
    let mut branch_empty = false;

    let implicit = |atoms: &[RawAtom], a: usize, b: usize| {
        if atoms[a].aromatic && atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    };
    let add_bond = |atoms: &[RawAtom], bonds: &mut Vec<Bond>, a: usize, b: usize, sym: BondSym, pos: usize| {
        if a == b {
            return Err(perr(pos, "ring closes on the same atom"));
        }
        if bonds.iter().any(|x| (x.a == a && x.b == b) || (x.a == b && x.b == a)) {
            return Err(perr(pos, "duplicate bond"));
        }
        let order = sym.unwrap_or_else(|| implicit(atoms, a, b));
        bonds.push(Bond { a, b, order });
        Ok(())
    };

    for &(s, e) in &spans {
        let tok = &smiles[s..e];
        if let Some(sym) = bond_symbol(tok) {
            if prev.is_none() || pending.is_some() {
                return Err(perr(s, "misplaced bond"));
            }
            pending = Some((sym, s));
            continue;
        }
        let first = tok.as_bytes()[0];
        if first.is_ascii_digit() || first == b'%' {
            let Some(p) = prev else {
                return Err(perr(s, "ring label without atom"));
            };
            if branch_empty {
                return Err(perr(s, "ring label at branch start"));
            }
            let label: u32 = tok.trim_start_matches('%').parse().expect("lexed digits");
            let sym = pending.take().and_then(|(b, _)| b);
            match rings.remove(&label) {
                Some(open) => {
                    let order = match (open.sym, sym) {
                        (Some(x), Some(y)) if x != y => {
                            return Err(perr(s, "conflicting ring bond orders"))
                        }
                        (x, y) => x.or(y),
                    };
                    add_bond(&atoms, &mut bonds, open.atom, p, order, open.pos)?;
                }
                None => {
                    rings.insert(label, OpenRing { atom: p, sym, pos: s });
                }
            }
            continue;
        }
        match tok {
            "(" => {
                let Some(p) = prev else {
                    return Err(perr(s, "branch without atom"));
                };
                if pending.is_some() || branch_empty {
                    return Err(perr(s, "misplaced branch"));
                }
                branches.push((p, s));
                branch_empty = true;
            }
            ")" => {
                if pending.is_some() || branch_empty {
                    return Err(perr(s, "empty branch or dangling bond"));
                }
                let (p, _) = branches.pop().ok_or_else(|| perr(s, "unbalanced ')'"))?;
                prev = Some(p);
            }
            "." => {
                if prev.is_none() || pending.is_some() || branch_empty {
                    return Err(perr(s, "misplaced '.'"));
                }
                prev = None;
            }
            _ => {
                let atom = if tok.starts_with('[') {
                    bracket_atom(&tok[1..tok.len() - 1], s)?
                } else {
                    organic_atom(tok).ok_or_else(|| match tok {
                        "*" | "B" | "b" => ChemError::UnknownElement(tok.to_string()),
                        _ => perr(s, format!("unsupported token {tok:?}")),
                    })?
                };
                let idx = atoms.len();
                atoms.push(atom);
                let sym = pending.take();
                match (prev, sym) {
                    (Some(p), sym) => {
                        add_bond(&atoms, &mut bonds, p, idx, sym.and_then(|x| x.0), s)?;
                    }
                    (None, Some((_, pos))) => return Err(perr(pos, "bond before first atom")),
                    (None, None) => {}
                }
                prev = Some(idx);
                branch_empty = false;
            }
        }
    }
    if let Some((_, pos)) = pending {
        return Err(perr(pos, "dangling bond"));
    }
    if let Some(&(_, pos)) = branches.last() {
        return Err(perr(pos, "unclosed branch"));
    }
    if let Some(open) = rings.values().min_by_key(|r| r.pos) {
        return Err(perr(open.pos, "unclosed ring"));
    }
    if prev.is_none() {
        return Err(perr(smiles.len(), "missing atom"));
    }
    MolGraph::build(atoms, bonds)
}

/// True iff the string parses into a graph that satisfies every valence rule.
pub fn is_valid(smiles: &str) -> bool {
    parse(smiles).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn methane_has_four_hydrogens() {
        let m = parse("C").unwrap();
        assert_eq!(m.atoms().len(), 1);
        assert_eq!(m.bonds().len(), 0);
        assert_eq!(m.atoms()[0].h_count, 4);
    }

    #[test]
    fn cyclopropane() {
        let m = parse("C1CC1").unwrap();
        assert_eq!((m.atoms().len(), m.bonds().len()), (3, 3));
        assert_eq!(m.rings().len(), 1);
        assert_eq!(m.rings()[0].len(), 3);
    }

    #[test]
    fn pentavalent_carbon_is_rejected() {
        assert!(matches!(
            parse("C(C)(C)(C)(C)C"),
            Err(ChemError::Valence { atom: 0, .. })
        ));
    }

    #[test]
    fn grammar_errors() {
        for s in ["", "C1CC", "C(", "C)", "C()C", "=C", "C=", "C..C", ".C", "C11", "C1C1", "C=1CC#1", "((C))"] {
            assert!(!is_valid(s), "{s:?} should be invalid");
        }
        for s in ["CCO", "C(C)1CCC1", "C=1CC1", "C%10CC%10", "C.C", "[NH4+]", "[O-]C=O", "F/C=C/F", "[13CH4]", "N[C@@H](C)C(=O)O"] {
            assert!(is_valid(s), "{s:?} should be valid");
        }
    }

    #[test]
    fn bracket_atoms() {
        let m = parse("[nH]1cccc1").unwrap();
        assert!(m.atoms()[0].aromatic);
        assert_eq!(m.atoms()[0].h_count, 1);
        let m = parse("[O-][N+](=O)C").unwrap();
        assert_eq!((m.atoms()[0].charge, m.atoms()[1].charge), (-1, 1));
        assert_eq!(parse("[Fe]"), Err(ChemError::UnknownElement("Fe".into())));
        let m = parse("[H][H]").unwrap();
        assert_eq!(m.atoms()[0].h_count, 0);
        assert!(is_valid("[CH3]"));
        assert!(!is_valid("[CH5]"));
        assert!(!is_valid("N(=O)=O"));
    }
}
