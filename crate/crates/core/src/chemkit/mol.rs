use super::aromatic;
use super::element::Element;
use super::rings::{sssr, Ring};
use super::{ChemError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Sigma-counted order; aromatic bonds count 1 before kekulization.
    pub fn base(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub fn from_order(n: u8) -> Option<Self> {
        match n {
            1 => Some(BondOrder::Single),
            2 => Some(BondOrder::Double),
            3 => Some(BondOrder::Triple),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Atom {
    pub element: Element,
    pub charge: i8,
    /// Attached hydrogens not present as separate atoms.
    pub h_count: u8,
    pub aromatic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn other(&self, x: usize) -> usize {
        if x == self.a {
            self.b
        } else {
            self.a
        }
    }
}

/// Atom as read from a SMILES string, before hydrogens are assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawAtom {
    pub element: Element,
    pub charge: i8,
    pub aromatic: bool,
    /// `Some` for bracket atoms, which state their hydrogens.
    pub explicit_h: Option<u8>,
}

/// Validated molecular graph with hydrogens assigned and rings perceived.
#[derive(Debug, Clone, PartialEq)]
pub struct MolGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    kekule: Vec<u8>,
    adj: Vec<Vec<(usize, usize)>>,
    rings: Vec<Ring>,
}

impl MolGraph {
    /// Checks bond structure, kekulizes aromatic systems and fills implicit
    /// hydrogens, failing on any valence violation.
    pub fn build(raw: Vec<RawAtom>, bonds: Vec<Bond>) -> Result<Self> {
        let n = raw.len();
        if n == 0 {
            return Err(ChemError::Parse {
                pos: 0,
                msg: "no atoms".into(),
            });
        }
        let adj = adjacency(n, &bonds)?;
        for b in &bonds {
            if b.order == BondOrder::Aromatic && !(raw[b.a].aromatic && raw[b.b].aromatic) {
                return Err(ChemError::Kekulize(format!(
                    "aromatic bond {}-{} joins a non-aromatic atom",
                    b.a, b.b
                )));
            }
        }
        let rings = sssr(n, bonds.len(), &adj);
        let mut in_ring = vec![false; n];
        rings.iter().flat_map(|r| &r.atoms).for_each(|&a| in_ring[a] = true);
        for (i, a) in raw.iter().enumerate() {
            if a.aromatic && (!a.element.can_be_aromatic() || !in_ring[i]) {
                return Err(ChemError::Kekulize(format!("atom {i} cannot be aromatic")));
            }
        }
        let kekule = aromatic::kekulize(&raw, &bonds, &adj)?;
        let mut atoms = Vec::with_capacity(n);
        for (i, a) in raw.iter().enumerate() {
            let used: u8 = adj[i].iter().map(|&(_, bi)| kekule[bi]).sum();
            let valence_err = || ChemError::Valence {
                atom: i,
                element: a.element.symbol().to_string(),
            };
            let h_count = match a.explicit_h {
                Some(h) => {
                    let max = a.element.max_valence(a.charge).ok_or_else(valence_err)?;
                    if used + h > max {
                        return Err(valence_err());
                    }
                    h
                }
                None => {
                    let v = a.element.fit_valence(a.charge, used).ok_or_else(valence_err)?;
                    v - used
                }
            };
            atoms.push(Atom {
                element: a.element,
                charge: a.charge,
                h_count,
                aromatic: a.aromatic,
            });
        }
        Ok(Self {
            atoms,
            bonds,
            kekule,
            adj,
            rings,
        })
    }

    /// Assembles a graph whose hydrogens and Kekulé orders are already known.
    pub(crate) fn from_parts(atoms: Vec<Atom>, bonds: Vec<Bond>, kekule: Vec<u8>) -> Self {
        let adj = adjacency(atoms.len(), &bonds).expect("bonds validated earlier");
        let rings = sssr(atoms.len(), bonds.len(), &adj);
        Self {
            atoms,
            bonds,
            kekule,
            adj,
            rings,
        }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn rings(&self) -> &[Ring] {
        &self.rings
    }

    /// `(neighbor, bond index)` pairs of atom `a`.
    pub fn neighbors(&self, a: usize) -> &[(usize, usize)] {
        &self.adj[a]
    }

    /// Bond order with aromatic bonds resolved to 1 or 2.
    pub fn kekule_order(&self, bond: usize) -> u8 {
        self.kekule[bond]
    }

    pub fn degree(&self, a: usize) -> usize {
        self.adj[a].len()
    }

    pub fn in_ring(&self, a: usize) -> bool {
        self.rings.iter().any(|r| r.atoms.contains(&a))
    }

    pub fn ring_count(&self) -> usize {
        self.rings.len()
    }

    pub fn heavy_atom_count(&self) -> usize {
        self.atoms.iter().filter(|a| a.element != Element::H).count()
    }

    /// Total valence used by atom `a`, hydrogens included.
    pub fn valence(&self, a: usize) -> u8 {
        self.adj[a].iter().map(|&(_, bi)| self.kekule[bi]).sum::<u8>() + self.atoms[a].h_count
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<usize> {
        self.adj[a].iter().find(|&&(x, _)| x == b).map(|&(_, bi)| bi)
    }

    /// Same molecule with atom `i` moved to position `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.atoms.len());
        let mut atoms = self.atoms.clone();
        for (i, &p) in perm.iter().enumerate() {
            atoms[p] = self.atoms[i];
        }
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond {
                a: perm[b.a],
                b: perm[b.b],
                order: b.order,
            })
            .collect();
        Self::from_parts(atoms, bonds, self.kekule.clone())
    }

    /// Kekulé form: every aromatic flag cleared and bonds given explicit orders.
    pub fn kekulized(&self) -> Self {
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom {
                aromatic: false,
                ..*a
            })
            .collect();
        let bonds = self
            .bonds
            .iter()
            .zip(&self.kekule)
            .map(|(b, &k)| Bond {
                order: BondOrder::from_order(k).expect("kekule order is 1..=3"),
                ..*b
            })
            .collect();
        Self::from_parts(atoms, bonds, self.kekule.clone())
    }

    pub(crate) fn kekule_orders(&self) -> &[u8] {
        &self.kekule
    }
}

fn adjacency(n: usize, bonds: &[Bond]) -> Result<Vec<Vec<(usize, usize)>>> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (i, b) in bonds.iter().enumerate() {
        let bad = |msg: &str| ChemError::Parse {
            pos: 0,
            msg: format!("bond {i} ({}-{}): {msg}", b.a, b.b),
        };
        if b.a >= n || b.b >= n {
            return Err(bad("endpoint out of range"));
        }
        if b.a == b.b {
            return Err(bad("self bond"));
        }
        if adj[b.a].iter().any(|&(x, _)| x == b.b) {
            return Err(bad("duplicate bond"));
        }
        adj[b.a].push((b.b, i));
        adj[b.b].push((b.a, i));
    }
    Ok(adj)
}

/// Sum of standard atomic weights including attached hydrogens.
pub fn mol_weight(mol: &MolGraph) -> f64 {
    mol.atoms()
        .iter()
        .map(|a| a.element.mass() + a.h_count as f64 * Element::H.mass())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn carbon() -> RawAtom {
        RawAtom {
            element: Element::C,
            charge: 0,
            aromatic: false,
            explicit_h: None,
        }
    }

    #[test]
    fn rejects_bad_bonds() {
        let single = |a, b| Bond {
            a,
            b,
            order: BondOrder::Single,
        };
        assert!(MolGraph::build(vec![carbon()], vec![single(0, 0)]).is_err());
        assert!(MolGraph::build(vec![carbon(); 2], vec![single(0, 1), single(1, 0)]).is_err());
        assert!(MolGraph::build(vec![carbon(); 2], vec![single(0, 2)]).is_err());
        let ok = MolGraph::build(vec![carbon(); 2], vec![single(0, 1)]).unwrap();
        assert_eq!(ok.atoms()[0].h_count, 3);
    }

    #[test]
    fn permutation_preserves_weight() {
        let single = |a, b| Bond {
            a,
            b,
            order: BondOrder::Single,
        };
        let mut raw = vec![carbon(); 3];
        raw[2].element = Element::O;
        let m = MolGraph::build(raw, vec![single(0, 1), single(1, 2)]).unwrap();
        let p = m.permuted(&[2, 0, 1]);
        assert!((mol_weight(&m) - mol_weight(&p)).abs() < 1e-12);
        assert_eq!(p.atoms()[1].element, Element::O);
        assert_eq!(p.atoms()[0].h_count, 2);
    }
}
